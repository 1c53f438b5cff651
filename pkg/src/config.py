"""
Configuration management for the bond default-risk pipeline
"""

import json
import os
from copy import deepcopy
from pathlib import Path
from typing import Any, Dict, List, Optional, Union

import yaml

from .errors import ConfigError, MissingArtifactError
from .seeding import assign_seeds, derive_seed

OUTPUT_ROOT_ENV = "BOND_RISK_OUTPUT_ROOT"
DEFAULT_OUTPUT_ROOT = "runs"

VARIANTS = ("ours", "rnn", "lstm", "pconvlstm", "boosting", "persistence")

DEFAULT_DROPOUT_SCHEDULE = [0.5, 0.5, 0.5, 0.25, 0.25, 0.25, 0.25, 0.25, 0.25, 0.125]

# group -> key -> default
_DEFAULTS: Dict[str, Dict[str, Any]] = {
    "market": {
        "n_bonds": 200,
        "default_fraction": 675 / 7361,
        "min_life": 250,
        "max_life": 450,
        "stress_onset_days": 120,
        "missing_fraction": 0.05,
        "n_industries": 8,
        "n_regions": 6,
        "seed": None,
    },
    "labeler": {
        "n_components": 22,
        "max_iter": 200,
        "tol": 1e-6,
        "max_fit_rows": 20000,
        "loss_rate": 0.70,
        "floor": 0.05,
        "cap": 1.0,
        "omega": 5,
        "n_accel": 120,
        "weights": [0.3, 0.3, 0.4],
        "prior_init": 0.5,
        "seed": None,
    },
    "pipeline": {
        "window": 2,
        "windows": [2, 5, 7, 10],
        "split_ratios": [0.8, 0.1, 0.1],
        "smote_ratio": 1.0,
        "smote_k": 5,
        "apply_smote": True,
        "seed": None,
    },
    "models": {
        "variant": "ours",
        "variants": ["boosting", "rnn", "lstm", "pconvlstm", "ours"],
        "hidden_size": 32,
        "conv_kernel": 3,
        "conv_channels": 8,
        "n_recurrent_layers": 10,
        "dropout_schedule": list(DEFAULT_DROPOUT_SCHEDULE),
        "epochs": 50,
        "batch_size": 2,
        "patience": 10,
        "learning_rate": 0.001,
        "rho": 0.9,
        "epsilon": 1e-7,
        "max_samples_per_epoch": 2000,
        "boosting_rounds": 200,
        "tree_depth": 3,
        "shrinkage": 0.1,
        "n_bins": 64,
    },
    "evaluation": {
        "seeds": [0, 1, 2, 3, 4],
        "warning_threshold": 0.5,
    },
    "run": {
        "seed": 7,
        "jobs": 1,
        "output_root": None,
    },
}


class Config:
    """Configuration management class"""

    def __init__(self, overrides: Optional[Dict[str, Any]] = None):
        self._config: Dict[str, Dict[str, Any]] = {}
        self._logger = None
        self._load_config()
        if overrides:
            self.update(overrides)

    @property
    def logger(self):
        """Lazy initialization of logger to avoid circular imports"""
        if self._logger is None:
            from .logger import get_logger

            self._logger = get_logger("config")
        return self._logger

    def _load_config(self):
        """Built-in defaults, then the output root from the environment"""
        self._config = deepcopy(_DEFAULTS)
        self._config["run"]["output_root"] = os.getenv(OUTPUT_ROOT_ENV, DEFAULT_OUTPUT_ROOT)

    def _parse_bool(self, key: str, value: Any) -> bool:
        """Parse a flag or file value as boolean"""
        if isinstance(value, bool):
            return value
        return str(value).lower() in {"1", "true", "yes", "on"}

    def _parse_int(self, key: str, value: Any, problems: List[str]) -> Optional[int]:
        """Parse a flag or file value as integer, recording a violation on failure"""
        try:
            if isinstance(value, bool) or float(value) != int(float(value)):
                raise ValueError
            return int(float(value))
        except (ValueError, TypeError):
            problems.append(f"{key} must be an integer (got {value!r})")
            return None

    def _parse_float(self, key: str, value: Any, problems: List[str]) -> Optional[float]:
        """Parse a flag or file value as float, recording a violation on failure"""
        try:
            if isinstance(value, bool):
                raise ValueError
            return float(value)
        except (ValueError, TypeError):
            problems.append(f"{key} must be a number (got {value!r})")
            return None

    def _group_of(self, key: str) -> Optional[str]:
        # a bare "seed" is the root seed
        for group, values in sorted(self._config.items(), key=lambda item: item[0] != "run"):
            if key in values:
                return group
        return None

    def update(self, overrides: Dict[str, Any]):
        """
        Merge overrides into the configuration.

        Accepts a flat document ({"n_bonds": 100, "seed": 3}), dotted keys
        ({"market.n_bonds": 100}) or nested groups ({"market": {"n_bonds": 100}}).
        Values set to None are ignored so unset command-line flags do not clobber
        file values.

        Raises:
            ConfigError: listing every unknown key and unparseable value
        """
        problems: List[str] = []
        for key, value in overrides.items():
            if key in self._config and isinstance(value, dict):
                for inner_key, inner_value in value.items():
                    self._set(key, inner_key, inner_value, problems)
                continue
            if "." in key:
                group, inner_key = key.split(".", 1)
            else:
                group, inner_key = self._group_of(key), key
            if group is None or group not in self._config:
                problems.append(f"Unknown configuration key: {key}")
                continue
            self._set(group, inner_key, value, problems)
        if problems:
            raise ConfigError(problems)

    def _set(self, group: str, key: str, value: Any, problems: List[str]):
        if key not in self._config[group]:
            problems.append(f"Unknown configuration key: {group}.{key}")
            return
        if value is None:
            return
        default = _DEFAULTS[group][key]
        name = f"{group}.{key}"
        if key == "seed":
            parsed = self._parse_int(name, value, problems)
        elif isinstance(default, bool):
            parsed = self._parse_bool(name, value)
        elif isinstance(default, int):
            parsed = self._parse_int(name, value, problems)
        elif isinstance(default, float):
            parsed = self._parse_float(name, value, problems)
        elif isinstance(default, list):
            if isinstance(value, str):
                value = [part.strip() for part in value.split(",") if part.strip()]
            if not isinstance(value, (list, tuple)):
                problems.append(f"{name} must be a list (got {value!r})")
                return
            if default and isinstance(default[0], int) and not isinstance(default[0], bool):
                parsed = [self._parse_int(name, v, problems) for v in value]
            elif default and isinstance(default[0], float):
                parsed = [self._parse_float(name, v, problems) for v in value]
            else:
                parsed = [str(v).lower() for v in value]
        else:
            parsed = str(value)
        if parsed is None or (isinstance(parsed, list) and None in parsed):
            return
        self._config[group][key] = parsed

    def load_file(self, path: Union[str, Path]):
        """Merge a JSON (or YAML) config document over the current values"""
        path = Path(path)
        if not path.exists():
            raise MissingArtifactError(path, "config file")
        with open(path, "r", encoding="utf-8") as handle:
            document = yaml.safe_load(handle) or {}
        if not isinstance(document, dict):
            raise ConfigError(f"Config file {path} must hold a mapping at top level")
        self.update(document)
        self.logger.info(f"📋 Loaded configuration from {path}")

    def get(self, key: str, default: Any = None) -> Any:
        """
        Retrieve a configuration value by key.

        Args:
            key (str): "group.key" or a key unique across groups.
            default (Any, optional): Returned when the key is not found.

        Returns:
            Any: The configured value, or the default if the key is not present.
        """
        if "." in key:
            group, inner = key.split(".", 1)
            return self._config.get(group, {}).get(inner, default)
        group = self._group_of(key)
        return self._config[group][key] if group else default

    def get_market_config(self) -> Dict[str, Any]:
        return self._config["market"]

    def get_labeler_config(self) -> Dict[str, Any]:
        return self._config["labeler"]

    def get_pipeline_config(self) -> Dict[str, Any]:
        return self._config["pipeline"]

    def get_models_config(self) -> Dict[str, Any]:
        return self._config["models"]

    def get_evaluation_config(self) -> Dict[str, Any]:
        return self._config["evaluation"]

    def get_run_config(self) -> Dict[str, Any]:
        return self._config["run"]

    @property
    def seed(self) -> int:
        return self._config["run"]["seed"]

    def stage_seed(self, group: str) -> int:
        """The group's own seed, derived from the root seed when unset"""
        value = self._config[group]["seed"]
        return derive_seed(self.seed, f"{group}.seed") if value is None else value

    def resolve_seeds(self) -> "Config":
        """Write a derived value into every stage seed left unset"""
        self._config = assign_seeds(self._config, self.seed)
        return self

    @property
    def output_root(self) -> Path:
        return Path(self._config["run"]["output_root"])

    def to_dict(self) -> Dict[str, Dict[str, Any]]:
        return deepcopy(self._config)

    def to_json(self) -> str:
        return json.dumps(self._config, sort_keys=True)

    # ------------------------------------------------------------------
    # Typed settings for each stage
    # ------------------------------------------------------------------

    def market_config(self):
        from .synthgen import MarketConfig

        values = dict(self.get_market_config())
        values.pop("seed")
        return MarketConfig(seed=self.stage_seed("market"), **values)

    def label_settings(self):
        from .labeler import BackwardParams, CombineWeights, LabelSettings, SpreadParams

        values = self.get_labeler_config()
        gmm, cs, bwd = values["weights"]
        return LabelSettings(
            n_components=values["n_components"],
            max_iter=values["max_iter"],
            tol=values["tol"],
            seed=self.stage_seed("labeler"),
            max_fit_rows=values["max_fit_rows"],
            spread=SpreadParams(
                loss_rate=values["loss_rate"], floor=values["floor"], cap=values["cap"], ma_window=values["omega"]
            ),
            backward=BackwardParams(n_accel=values["n_accel"]),
            weights=CombineWeights(gmm=gmm, cs=cs, bwd=bwd, prior_init=values["prior_init"]),
        )

    def preprocess_settings(self, window: Optional[int] = None):
        from .pipeline import PreprocessSettings

        values = self.get_pipeline_config()
        return PreprocessSettings(
            window=window if window is not None else values["window"],
            seed=self.stage_seed("pipeline"),
            split_ratios=tuple(values["split_ratios"]),
            smote_ratio=values["smote_ratio"],
            smote_k=values["smote_k"],
            apply_smote=values["apply_smote"],
        )

    def architecture(self, variant: Optional[str] = None, window: Optional[int] = None, seed: Optional[int] = None):
        from .models import ArchitectureConfig

        values = dict(self.get_models_config())
        values.pop("variants")
        chosen = values.pop("variant")
        values["dropout_schedule"] = tuple(values["dropout_schedule"])
        return ArchitectureConfig(
            variant=variant or chosen,
            window=window if window is not None else self.get_pipeline_config()["window"],
            seed=self.seed if seed is None else seed,
            **values,
        )

    def validate(self):
        """
        Check every bound at once.

        Raises:
            ConfigError: listing all violations
        """
        problems: List[str] = []
        market = self.get_market_config()
        labeler = self.get_labeler_config()
        pipeline = self.get_pipeline_config()
        models = self.get_models_config()
        evaluation = self.get_evaluation_config()
        run = self.get_run_config()

        # market bounds live on MarketConfig
        from .synthgen import MarketConfig

        try:
            MarketConfig(seed=run["seed"], **{k: v for k, v in market.items() if k != "seed"})
        except ConfigError as exc:
            problems.extend(exc.violations)

        if labeler["n_components"] < 1:
            problems.append(f"labeler.n_components must be >= 1 (got {labeler['n_components']})")
        if labeler["max_iter"] < 1:
            problems.append(f"labeler.max_iter must be >= 1 (got {labeler['max_iter']})")
        if labeler["max_fit_rows"] is not None and labeler["max_fit_rows"] < labeler["n_components"]:
            problems.append("labeler.max_fit_rows must be >= labeler.n_components")
        if not 0.0 < labeler["loss_rate"] <= 1.0:
            problems.append(f"labeler.loss_rate must lie in (0, 1] (got {labeler['loss_rate']})")
        if not 0.0 < labeler["floor"] < labeler["cap"] <= 1.0:
            problems.append(f"labeler.floor/cap must satisfy 0 < floor < cap <= 1 (got {labeler['floor']}, {labeler['cap']})")
        if labeler["omega"] < 1:
            problems.append(f"labeler.omega must be >= 1 (got {labeler['omega']})")
        if labeler["n_accel"] <= 0:
            problems.append(f"labeler.n_accel must be > 0 (got {labeler['n_accel']})")
        weights = labeler["weights"]
        if len(weights) != 3:
            problems.append(f"labeler.weights must have 3 entries (got {len(weights)})")
        elif min(weights) < 0 or abs(sum(weights) - 1.0) > 1e-12:
            problems.append(f"labeler.weights must be non-negative and sum to 1 (got {weights})")
        if not 0.0 <= labeler["prior_init"] <= 1.0:
            problems.append(f"labeler.prior_init must lie in [0, 1] (got {labeler['prior_init']})")

        for w in [pipeline["window"]] + list(pipeline["windows"]):
            if w < 1:
                problems.append(f"pipeline window sizes must be >= 1 (got {w})")
            elif w >= market["min_life"]:
                problems.append(f"pipeline window {w} must be shorter than market.min_life ({market['min_life']})")
        ratios = pipeline["split_ratios"]
        if len(ratios) != 3 or min(ratios) <= 0 or abs(sum(ratios) - 1.0) > 1e-9:
            problems.append(f"pipeline.split_ratios must be 3 positive values summing to 1 (got {ratios})")
        if pipeline["smote_ratio"] <= 0:
            problems.append(f"pipeline.smote_ratio must be > 0 (got {pipeline['smote_ratio']})")
        if pipeline["smote_k"] < 1:
            problems.append(f"pipeline.smote_k must be >= 1 (got {pipeline['smote_k']})")

        for variant in [models["variant"]] + list(models["variants"]):
            if variant not in VARIANTS:
                problems.append(f"Unknown model variant '{variant}' (expected one of {', '.join(VARIANTS)})")
        for key in ("hidden_size", "conv_kernel", "conv_channels", "n_recurrent_layers", "epochs", "batch_size", "boosting_rounds", "tree_depth"):
            if models[key] < 1:
                problems.append(f"models.{key} must be >= 1 (got {models[key]})")
        if models["conv_kernel"] % 2 == 0:
            problems.append(f"models.conv_kernel must be odd for same padding (got {models['conv_kernel']})")
        if models["patience"] < 0:
            problems.append(f"models.patience must be >= 0 (got {models['patience']})")
        if len(models["dropout_schedule"]) != models["n_recurrent_layers"]:
            problems.append(
                f"models.dropout_schedule needs one rate per recurrent layer "
                f"({len(models['dropout_schedule'])} != {models['n_recurrent_layers']})"
            )
        if any(not 0.0 <= rate < 1.0 for rate in models["dropout_schedule"]):
            problems.append("models.dropout_schedule rates must lie in [0, 1)")
        if models["learning_rate"] <= 0 or not 0.0 < models["rho"] < 1.0 or models["epsilon"] <= 0:
            problems.append("models.learning_rate and models.epsilon must be > 0 and models.rho in (0, 1)")
        if models["max_samples_per_epoch"] is not None and models["max_samples_per_epoch"] < models["batch_size"]:
            problems.append("models.max_samples_per_epoch must be >= models.batch_size")
        if not 0.0 < models["shrinkage"] <= 1.0:
            problems.append(f"models.shrinkage must lie in (0, 1] (got {models['shrinkage']})")
        if models["n_bins"] < 2:
            problems.append(f"models.n_bins must be >= 2 (got {models['n_bins']})")

        if not evaluation["seeds"]:
            problems.append("evaluation.seeds must list at least one seed")
        if not 0.0 < evaluation["warning_threshold"] < 1.0:
            problems.append(f"evaluation.warning_threshold must lie in (0, 1) (got {evaluation['warning_threshold']})")
        if run["jobs"] < 1:
            problems.append(f"run.jobs must be >= 1 (got {run['jobs']})")
        if run["seed"] < 0:
            problems.append(f"run.seed must be >= 0 (got {run['seed']})")
        for group in ("market", "labeler", "pipeline"):
            stage = self._config[group]["seed"]
            if stage is not None and stage < 0:
                problems.append(f"{group}.seed must be >= 0 (got {stage})")

        if problems:
            raise ConfigError(problems)


# Global config instance
config = Config()
