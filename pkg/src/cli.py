"""
Command-line entry point chaining generate -> label -> preprocess -> train ->
predict -> evaluate -> report
"""

import argparse
import traceback
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence

import pandas as pd

from . import __version__
from .config import Config, config as default_config
from .errors import BondRiskError, ConfigError, MissingArtifactError
from .logger import get_logger, set_log_level
from .storage import artifact_store

logger = get_logger("cli")

REPORT_COLUMNS = {"variant", "window", "seed", "rmse", "mae"}

BONDS_FILE = "bonds.jsonl"
LABELED_BONDS_FILE = "labeled_bonds.jsonl"
LABELS_FILE = "labels.csv"
GMM_FILE = "gmm.json"
CLUSTERS_FILE = "cluster_comparison.csv"
RUNS_FILE = "runs.csv"
TABLE_FILE = "table.csv"
PREDICTIONS_FILE = "predictions.csv"
SERIES_FILE = "series.csv"


def dataset_name(window: int) -> str:
    return f"dataset_w{window}.brw"


def checkpoint_name(variant: str, window: int, seed: int) -> str:
    return f"{variant}_w{window}_s{seed}.brc"


# --------------------------------------------------------------------------
# Argument parsing
# --------------------------------------------------------------------------


def _common_options() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON or YAML config file; flags override its values")
    common.add_argument("--seed", type=int, help="Global seed (default 7)")
    common.add_argument("--jobs", type=int, help="Threads for per-bond labeling and grid cells")
    common.add_argument("--log-level", help="DEBUG, INFO, WARNING or ERROR")
    return common


def build_parser() -> argparse.ArgumentParser:
    common = _common_options()
    parser = argparse.ArgumentParser(
        prog="bond_risk", description="Credit-bond default-risk labeling and next-day forecasting"
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    commands = parser.add_subparsers(dest="stage", required=True)

    generate = commands.add_parser("generate", parents=[common], help="Generate a synthetic bond market")
    generate.add_argument("--out", help="Run directory")
    generate.add_argument("--n-bonds", type=int)
    generate.add_argument("--csv", action="store_true", help="Also write the directory-of-CSV layout")

    label = commands.add_parser("label", parents=[common], help="Annotate daily default probabilities")
    label.add_argument("--bonds", help=f"Bond file or CSV directory (default <out>/{BONDS_FILE})")
    label.add_argument("--out", help="Run directory")
    _label_options(label)

    preprocess = commands.add_parser("preprocess", parents=[common], help="Build windowed datasets")
    preprocess.add_argument("--bonds", help=f"Labeled bonds (default <out>/{LABELED_BONDS_FILE})")
    preprocess.add_argument("--labels", help=f"Label CSV (default <out>/{LABELS_FILE})")
    preprocess.add_argument("--out", help="Run directory")
    preprocess.add_argument("--window", type=int, help="One window size (default: every configured window)")
    preprocess.add_argument("--no-smote", action="store_true", help="Keep the training split unbalanced")

    train = commands.add_parser("train", parents=[common], help="Train one model variant")
    train.add_argument("--dataset", help="Windowed dataset (default <run>/dataset_w<window>.brw)")
    train.add_argument("--variant", help="ours, rnn, lstm, pconvlstm, boosting or persistence")
    train.add_argument("--window", type=int)
    train.add_argument("--epochs", type=int)
    train.add_argument("--out", help="Checkpoint path")

    predict = commands.add_parser("predict", parents=[common], help="Predict next-day probabilities")
    predict.add_argument("--ckpt", required=True)
    predict.add_argument("--dataset", required=True)
    predict.add_argument("--bonds", help="Bonds with latent grade paths, adds reference_p")
    predict.add_argument("--split", default="test", choices=["train", "val", "test", "all"])
    predict.add_argument("--rolling", action="store_true", help="Chain the prior column from own predictions")
    predict.add_argument("--out", required=True, help="Prediction CSV")

    evaluate = commands.add_parser("evaluate", parents=[common], help="Score a checkpoint on the test split")
    evaluate.add_argument("--ckpt", required=True)
    evaluate.add_argument("--dataset", required=True)
    evaluate.add_argument("--bonds", help="Bonds with latent grade paths for the rating comparison")
    evaluate.add_argument("--rolling", action="store_true")
    evaluate.add_argument("--out", required=True, help="Report CSV")

    report = commands.add_parser("report", parents=[common], help="Assemble the comparison table")
    report.add_argument("--grid", required=True, help="Directory of evaluation report CSVs")
    report.add_argument("--out", required=True, help="Table CSV")

    pipeline = commands.add_parser("pipeline", parents=[common], help="Run stages end to end")
    pipeline.add_argument("--all", action="store_true", required=True, help="Run every stage")
    pipeline.add_argument("--out", help="Run directory")
    pipeline.add_argument("--n-bonds", type=int)
    pipeline.add_argument("--epochs", type=int)
    pipeline.add_argument("--variants", help="Comma-separated variants for the grid")
    pipeline.add_argument("--windows", help="Comma-separated window sizes")
    pipeline.add_argument("--seeds", help="Comma-separated grid seeds")
    _label_options(pipeline)
    return parser


def _label_options(parser: argparse.ArgumentParser):
    parser.add_argument("--omega", type=int, help="Spread moving-average window")
    parser.add_argument("--n-accel", type=int, help="Backward-estimate acceleration days")
    parser.add_argument("--weights", help="gmm,cs,bwd combination weights, e.g. 0.3,0.3,0.4")


def _overrides(args: argparse.Namespace) -> Dict[str, Any]:
    """Flag values as config keys; unset flags stay None and are ignored"""
    flags = {
        "seed": "run.seed",
        "jobs": "run.jobs",
        "n_bonds": "market.n_bonds",
        "omega": "labeler.omega",
        "n_accel": "labeler.n_accel",
        "weights": "labeler.weights",
        "epochs": "models.epochs",
        "variant": "models.variant",
        "variants": "models.variants",
        "window": "pipeline.window",
        "windows": "pipeline.windows",
        "seeds": "evaluation.seeds",
    }
    overrides = {key: getattr(args, flag, None) for flag, key in flags.items()}
    if getattr(args, "no_smote", False):
        overrides["pipeline.apply_smote"] = False
    return overrides


def resolve_config(args: argparse.Namespace, base: Optional[Config] = None) -> Config:
    """defaults < config file < flags, then every bound checked and stage seeds derived"""
    resolved = Config()
    if base is not None:
        resolved.update(base.to_dict())
    if args.config:
        resolved.load_file(args.config)
    resolved.update(_overrides(args))
    resolved.validate()
    return resolved.resolve_seeds()


def _run_dir(args: argparse.Namespace, cfg: Config) -> Path:
    return Path(args.out) if getattr(args, "out", None) else cfg.output_root


# --------------------------------------------------------------------------
# Stages
# --------------------------------------------------------------------------


def run_generate(cfg: Config, out: Path, write_csv: bool = False) -> List[Path]:
    from .synthgen import generate_market

    market = cfg.market_config()
    bonds = generate_market(market, jobs=cfg.get("run.jobs"))
    outputs = [out / BONDS_FILE]
    artifact_store.save_bonds(bonds, outputs[0])
    if write_csv:
        outputs.append(out / "bonds_csv")
        artifact_store.save_bonds_csv_dir(bonds, outputs[1])
    artifact_store.write_manifest(out, "generate", [], outputs, {"market": market.to_dict()}, cfg.seed)
    return outputs


def run_label(cfg: Config, out: Path, bonds_path: Path) -> List[Path]:
    from .labeler import compare_cluster_distributions, label_market, pooled_rows, risk_column
    from .pipeline import standardize
    from .schema import build_default_registry

    registry = build_default_registry()
    settings = cfg.label_settings()
    bonds = artifact_store.load_bonds(bonds_path)
    result = label_market(bonds, registry, settings, jobs=cfg.get("run.jobs"))

    outputs = [out / LABELED_BONDS_FILE, out / LABELS_FILE, out / GMM_FILE, out / CLUSTERS_FILE]
    artifact_store.save_bonds(result.bonds, outputs[0])
    artifact_store.save_labels(result.labels, outputs[1])
    artifact_store.save_gmm(result.gmm, outputs[2])

    # same pooled rows the mixture was fitted on
    rows = pooled_rows([standardize(b)[0] for b in result.bonds], registry, settings)
    comparison = compare_cluster_distributions(
        rows,
        result.gmm,
        [b.issue_grade for b in result.bonds],
        seed=settings.seed,
        risk_col=risk_column(registry),
    )
    artifact_store.write_frame(comparison, outputs[3])
    artifact_store.write_manifest(out, "label", [bonds_path], outputs, settings.to_dict(), cfg.seed)
    return outputs


def run_preprocess(cfg: Config, out: Path, bonds_path: Path, labels_path: Path, windows: Sequence[int]) -> List[Path]:
    from .pipeline import preprocess
    from .schema import build_default_registry, index_labels

    registry = build_default_registry()
    bonds = artifact_store.load_bonds(bonds_path)
    labels = index_labels(artifact_store.load_labels(labels_path))
    outputs = []
    for window in windows:
        dataset = preprocess(bonds, labels, cfg.preprocess_settings(window), registry)
        path = out / dataset_name(window)
        artifact_store.save_dataset(dataset, path)
        outputs.append(path)
    artifact_store.write_manifest(
        out, "preprocess", [bonds_path, labels_path], outputs, cfg.get_pipeline_config(), cfg.seed
    )
    return outputs


def run_train(cfg: Config, dataset_path: Path, ckpt_path: Path, variant: Optional[str] = None) -> Path:
    from .models import build_model, train

    dataset = artifact_store.load_dataset(dataset_path)
    architecture = cfg.architecture(variant=variant, window=dataset.window)
    result = train(build_model(architecture), dataset, architecture)
    artifact_store.save_checkpoint(result.checkpoint, ckpt_path)
    artifact_store.write_manifest(
        ckpt_path.parent, "train", [dataset_path], [ckpt_path], architecture.to_dict(), architecture.seed
    )
    return ckpt_path


def _bond_index(path: Optional[str]):
    if not path:
        return None
    return {b.bond_id: b for b in artifact_store.load_bonds(path)}


def run_predict(cfg: Config, ckpt_path: Path, dataset_path: Path, out: Path,
                bonds_path: Optional[str] = None, split: str = "test", rolling: bool = False) -> Path:
    from .evaluation import plot_series, reference_probabilities
    from .models import predict

    checkpoint = artifact_store.load_checkpoint(ckpt_path)
    dataset = artifact_store.load_dataset(dataset_path)
    if split != "all":
        dataset = dataset.select((dataset.split == split) & ~dataset.synthetic)
    bonds = _bond_index(bonds_path)
    pred = predict(checkpoint, dataset, rolling=rolling)
    reference = reference_probabilities(dataset, bonds) if bonds is not None else None
    artifact_store.write_frame(plot_series(dataset, pred, reference), out)
    inputs = [ckpt_path, dataset_path] + ([Path(bonds_path)] if bonds_path else [])
    artifact_store.write_manifest(
        out.parent, "predict", inputs, [out], {"split": split, "rolling": rolling}, checkpoint.architecture.seed
    )
    return out


def run_evaluate(cfg: Config, ckpt_path: Path, dataset_path: Path, out: Path,
                 bonds_path: Optional[str] = None, rolling: bool = False) -> List[Path]:
    from .evaluation import evaluate

    checkpoint = artifact_store.load_checkpoint(ckpt_path)
    dataset = artifact_store.load_dataset(dataset_path)
    report, series = evaluate(checkpoint, dataset, _bond_index(bonds_path), rolling=rolling)
    series_path = out.with_name(f"{out.stem}_{SERIES_FILE}")
    artifact_store.write_frame(pd.DataFrame([report.to_dict()]), out)
    artifact_store.write_frame(series, series_path)
    inputs = [ckpt_path, dataset_path] + ([Path(bonds_path)] if bonds_path else [])
    artifact_store.write_manifest(
        out.parent, "evaluate", inputs, [out, series_path], {"rolling": rolling}, report.seed
    )
    return [out, series_path]


def run_report(cfg: Config, grid_dir: Path, out: Path) -> Path:
    from .evaluation import summarize_grid

    grid_dir = artifact_store.require(grid_dir, "directory of evaluation reports")
    inputs, frames = [], []
    for path in sorted(grid_dir.glob("*.csv")):
        if path.resolve() == out.resolve():
            continue
        frame = artifact_store.read_frame(path)
        if REPORT_COLUMNS.issubset(frame.columns):
            inputs.append(path)
            frames.append(frame)
    if not frames:
        raise MissingArtifactError(grid_dir / "*.csv", "no evaluation reports found; run the evaluate stage first")
    runs = pd.concat(frames, ignore_index=True).sort_values(["variant", "window", "seed"], kind="stable")
    table = summarize_grid(runs, cfg.get("models.variants"))
    artifact_store.write_frame(table, out)
    artifact_store.write_manifest(out.parent, "report", inputs, [out], {}, cfg.seed)
    logger.info(f"📋 Comparison table over {len(runs)} runs written to {out}")
    return out


def run_pipeline(cfg: Config, out: Path) -> Path:
    """Every stage in order; each writes its manifest into ``out``"""
    from .evaluation import comparison_grid, plot_series, reference_probabilities
    from .models import predict

    windows = sorted(cfg.get("pipeline.windows"))
    variants = cfg.get("models.variants")
    seeds = cfg.get("evaluation.seeds")
    logger.info(f"🚀 Full pipeline into {out} (seed {cfg.seed})")

    bonds_path = run_generate(cfg, out)[0]
    labeled_path, labels_path = run_label(cfg, out, bonds_path)[:2]
    dataset_paths = run_preprocess(cfg, out, labeled_path, labels_path, windows)
    datasets = {w: artifact_store.load_dataset(p) for w, p in zip(windows, dataset_paths)}
    bonds = _bond_index(str(labeled_path))

    def factory(variant: str, window: int, seed: int):
        return cfg.architecture(variant=variant, window=window, seed=seed)

    grid = comparison_grid(datasets, variants, seeds, factory, bonds, jobs=cfg.get("run.jobs"))

    checkpoints = []
    for (variant, window, seed), checkpoint in grid.checkpoints.items():
        path = out / "checkpoints" / checkpoint_name(variant, window, seed)
        artifact_store.save_checkpoint(checkpoint, path)
        checkpoints.append(path)
    artifact_store.write_manifest(
        out, "train", dataset_paths, checkpoints, cfg.get_models_config(), cfg.seed
    )

    # rolling predictions of the configured variant at the configured window
    variant, window = cfg.get("models.variant"), cfg.get("pipeline.window")
    if (variant, window, seeds[0]) in grid.checkpoints and window in datasets:
        test = datasets[window]
        test = test.select((test.split == "test") & ~test.synthetic)
        pred = predict(grid.checkpoints[(variant, window, seeds[0])], test, rolling=True)
        predictions_path = out / PREDICTIONS_FILE
        artifact_store.write_frame(plot_series(test, pred, reference_probabilities(test, bonds)), predictions_path)
        inputs = [out / "checkpoints" / checkpoint_name(variant, window, seeds[0]), out / dataset_name(window)]
        artifact_store.write_manifest(
            out, "predict", inputs, [predictions_path], {"split": "test", "rolling": True}, seeds[0]
        )

    runs_path = out / RUNS_FILE
    artifact_store.write_frame(grid.runs, runs_path)
    artifact_store.write_manifest(
        out, "evaluate", checkpoints + dataset_paths, [runs_path], cfg.get_evaluation_config(), cfg.seed
    )

    table_path = out / TABLE_FILE
    artifact_store.write_frame(grid.table, table_path)
    artifact_store.write_manifest(out, "report", [runs_path], [table_path], {}, cfg.seed)
    logger.info(f"✅ Pipeline finished: {table_path}")
    return table_path


def run_stage(args: argparse.Namespace, cfg: Config):
    stage = args.stage
    if stage == "generate":
        return run_generate(cfg, _run_dir(args, cfg), args.csv)
    if stage == "label":
        out = _run_dir(args, cfg)
        return run_label(cfg, out, Path(args.bonds) if args.bonds else out / BONDS_FILE)
    if stage == "preprocess":
        out = _run_dir(args, cfg)
        windows = [args.window] if args.window else cfg.get("pipeline.windows")
        return run_preprocess(
            cfg,
            out,
            Path(args.bonds) if args.bonds else out / LABELED_BONDS_FILE,
            Path(args.labels) if args.labels else out / LABELS_FILE,
            windows,
        )
    if stage == "train":
        window = cfg.get("pipeline.window")
        dataset = Path(args.dataset) if args.dataset else cfg.output_root / dataset_name(window)
        if not dataset.exists():
            raise MissingArtifactError(dataset, "run the preprocess stage first or pass --dataset")
        variant = cfg.get("models.variant")
        out = Path(args.out) if args.out else cfg.output_root / "checkpoints" / checkpoint_name(variant, window, cfg.seed)
        return run_train(cfg, dataset, out, variant)
    if stage == "predict":
        return run_predict(cfg, Path(args.ckpt), Path(args.dataset), Path(args.out), args.bonds, args.split, args.rolling)
    if stage == "evaluate":
        return run_evaluate(cfg, Path(args.ckpt), Path(args.dataset), Path(args.out), args.bonds, args.rolling)
    if stage == "report":
        return run_report(cfg, Path(args.grid), Path(args.out))
    return run_pipeline(cfg, _run_dir(args, cfg))


def main(argv: Optional[Sequence[str]] = None) -> int:
    """
    Parse arguments, run one stage and map failures to exit codes.

    Returns:
        0 success, 2 config error, 3 missing input, 4 numerical failure, 1 anything else
    """
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.log_level:
        set_log_level(args.log_level)

    try:
        cfg = resolve_config(args, default_config)
        logger.info(f"🚀 Stage '{args.stage}' started (seed {cfg.seed})")
        run_stage(args, cfg)
        logger.info(f"✅ Stage '{args.stage}' finished")
        return 0
    except ConfigError as e:
        for violation in e.violations:
            logger.error(f"❌ {violation}")
        return e.exit_code
    except BondRiskError as e:
        logger.error(f"❌ {e}")
        logger.debug(f"Traceback: {traceback.format_exc()}")
        return e.exit_code
    except Exception as e:
        logger.error(f"❌ Unexpected error in stage '{args.stage}': {e}")
        logger.debug(f"Traceback: {traceback.format_exc()}")
        return 1
