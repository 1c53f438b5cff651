import numpy as np
import pytest

from src.labeler import LabelSettings, label_market
from src.models import ArchitectureConfig
from src.pipeline import PreprocessSettings, WindowedDataset, preprocess
from src.schema import N_FEATURES, BondRecord, LabelSeries, Outcome, build_default_registry
from src.synthgen import MarketConfig, generate_market


@pytest.fixture(scope="session")
def registry():
    return build_default_registry()


@pytest.fixture(scope="session")
def small_market_config():
    # 9 high-risk bonds (7 defaulted) and 21 matured, lives short enough to stay fast
    return MarketConfig(n_bonds=30, default_fraction=0.3, min_life=40, max_life=60, seed=11)


@pytest.fixture(scope="session")
def small_market(small_market_config, registry):
    return generate_market(small_market_config, registry)


@pytest.fixture(scope="session")
def label_settings():
    return LabelSettings(n_components=6, max_iter=60, seed=3)


@pytest.fixture(scope="session")
def labeled(small_market, registry, label_settings):
    return label_market(small_market, registry, label_settings)


@pytest.fixture(scope="session")
def small_dataset(labeled, registry):
    settings = PreprocessSettings(window=2, seed=3, smote_k=3)
    return preprocess(labeled.bonds, labeled.labels_by_bond(), settings, registry)


@pytest.fixture(scope="session")
def bond_index(labeled):
    return {b.bond_id: b for b in labeled.bonds}


@pytest.fixture
def tiny_architecture():
    def factory(variant: str, window: int = 2, seed: int = 0, **overrides) -> ArchitectureConfig:
        values = dict(
            variant=variant,
            window=window,
            seed=seed,
            hidden_size=4,
            conv_channels=2,
            n_recurrent_layers=2,
            dropout_schedule=(0.25, 0.125),
            epochs=2,
            patience=2,
            max_samples_per_epoch=32,
            boosting_rounds=5,
            n_bins=8,
        )
        values.update(overrides)
        return ArchitectureConfig(**values)

    return factory


@pytest.fixture
def make_bond():
    """BondRecord with an all-ones feature matrix unless features are given"""

    def factory(
        bond_id: str = "B1",
        issue_date: int = 0,
        n_days: int = 10,
        outcome: Outcome = Outcome.MATURED,
        features=None,
        default_date=None,
        industry_id: int = 0,
        region_id: int = 0,
        issue_grade: int = 15,
        final_grade: int = 15,
        latent_grades=None,
    ) -> BondRecord:
        if features is None:
            features = np.ones((n_days, N_FEATURES))
        if outcome is Outcome.DEFAULTED and default_date is None:
            default_date = issue_date + n_days - 1
        return BondRecord(
            bond_id=bond_id,
            issue_date=issue_date,
            end_date=issue_date + n_days - 1,
            outcome=outcome,
            issue_grade=issue_grade,
            final_grade=final_grade,
            features=features,
            industry_id=industry_id,
            region_id=region_id,
            default_date=default_date,
            latent_grades=latent_grades,
        )

    return factory


@pytest.fixture
def make_labels():
    def factory(bond: BondRecord, values=None) -> LabelSeries:
        if values is None:
            values = np.linspace(0.1, 0.9, bond.n_days)
        values = np.asarray(values, dtype=np.float64)
        return LabelSeries(
            bond_id=bond.bond_id,
            start_day=bond.issue_date,
            p_gmm=values,
            p_cs=values,
            p_bwd=values,
            p_integrated=values,
        )

    return factory


@pytest.fixture
def toy_dataset():
    """
    Random windows whose label is a smooth function of the last row, so small
    networks can fit it. ``splits`` gives the split of each toy bond.
    """

    def factory(splits=("train", "train", "val"), per_bond: int = 10, window: int = 2,
                n_features: int = 4, seed: int = 0) -> WindowedDataset:
        rng = np.random.default_rng(seed)
        n = len(splits) * per_bond
        inputs = rng.normal(size=(n, window, n_features))
        labels = 0.2 + 0.6 / (1.0 + np.exp(-inputs[:, -1, 0]))
        last = 0.2 + 0.6 / (1.0 + np.exp(-inputs[:, -1, 1]))
        bond_ids = np.repeat([f"T{i}" for i in range(len(splits))], per_bond)
        return WindowedDataset(
            inputs=inputs.astype(np.float32),
            labels=labels.astype(np.float32),
            last_labels=last.astype(np.float32),
            bond_ids=bond_ids,
            end_days=np.tile(np.arange(window - 1, window - 1 + per_bond), len(splits)).astype(np.int64),
            high_risk=np.zeros(n, dtype=bool),
            split=np.repeat(list(splits), per_bond),
            synthetic=np.zeros(n, dtype=bool),
            window=window,
        )

    return factory
