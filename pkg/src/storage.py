"""
On-disk formats for every artifact a run produces
"""

import hashlib
import json
import os
import struct
import traceback
from pathlib import Path
from typing import Any, Dict, Iterable, List, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd

from . import __version__
from .errors import BondRiskError, MissingArtifactError, ShapeError
from .pipeline import WindowedDataset
from .schema import N_FEATURES, BondRecord, FeatureRegistry, LabelSeries, build_default_registry
from .vbgmm import GmmModel

PathLike = Union[str, Path]

DATASET_MAGIC = b"BRWD"
CHECKPOINT_MAGIC = b"BRCK"
LABEL_COLUMNS = ["bond_id", "day", "p_gmm", "p_cs", "p_bwd", "p_integrated"]
BOND_INDEX_FILE = "bonds.json"


def sha256_file(path: Path, chunk_size: int = 1024 * 1024) -> str:
    h = hashlib.sha256()
    with Path(path).open("rb") as f:
        for chunk in iter(lambda: f.read(chunk_size), b""):
            h.update(chunk)
    return h.hexdigest()


def _nullable(values: np.ndarray) -> List[Any]:
    """Row-major nested lists with None for absent cells"""
    return np.where(np.isnan(values), None, values.astype(object)).tolist()


class ArtifactStore:
    """Read and write bonds, labels, datasets, checkpoints, mixtures and manifests"""

    def __init__(self):
        self._logger = None

    @property
    def logger(self):
        """Lazy initialization of logger to avoid circular imports"""
        if self._logger is None:
            from .logger import get_logger

            self._logger = get_logger("storage")
        return self._logger

    # ------------------------------------------------------------------
    # Plumbing
    # ------------------------------------------------------------------

    def require(self, path: PathLike, hint: str = "") -> Path:
        """Return the path, or raise naming it when it does not exist"""
        path = Path(path)
        if not path.exists():
            raise MissingArtifactError(path, hint)
        return path

    def _write_bytes(self, path: Path, payload: bytes):
        """Write through a .part file, then rename into place"""
        path.parent.mkdir(parents=True, exist_ok=True)
        tmp = path.with_suffix(path.suffix + ".part")
        with open(tmp, "wb") as handle:
            handle.write(payload)
        os.replace(tmp, path)

    def write_json(self, path: PathLike, document: Any):
        text = json.dumps(document, sort_keys=True, indent=2)
        self._write_bytes(Path(path), (text + "\n").encode("utf-8"))

    def read_json(self, path: PathLike, hint: str = "") -> Any:
        path = self.require(path, hint)
        with open(path, "r", encoding="utf-8") as handle:
            return json.load(handle)

    def write_frame(self, frame: pd.DataFrame, path: PathLike):
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        tmp = path.with_suffix(path.suffix + ".part")
        frame.to_csv(tmp, index=False)
        os.replace(tmp, path)

    def read_frame(self, path: PathLike, hint: str = "") -> pd.DataFrame:
        return pd.read_csv(self.require(path, hint), float_precision="round_trip")

    # ------------------------------------------------------------------
    # Bonds
    # ------------------------------------------------------------------

    def _bond_attributes(self, bond: BondRecord) -> Dict[str, Any]:
        return {
            "bond_id": bond.bond_id,
            "issue_date": int(bond.issue_date),
            "end_date": int(bond.end_date),
            "outcome": bond.outcome.value,
            "issue_grade": int(bond.issue_grade),
            "final_grade": int(bond.final_grade),
            "default_date": None if bond.default_date is None else int(bond.default_date),
            "industry_id": int(bond.industry_id),
            "region_id": int(bond.region_id),
            "latent_grades": None if bond.latent_grades is None else bond.latent_grades.tolist(),
        }

    def _bond_from(self, attributes: Dict[str, Any], features: np.ndarray) -> BondRecord:
        return BondRecord(features=features, **attributes)

    def save_bonds(self, bonds: Sequence[BondRecord], path: PathLike):
        """JSON lines, one bond per line, features row-major with explicit nulls"""
        lines = []
        for bond in bonds:
            record = self._bond_attributes(bond)
            record["features"] = _nullable(bond.features)
            lines.append(json.dumps(record, sort_keys=True))
        self._write_bytes(Path(path), ("\n".join(lines) + "\n").encode("utf-8"))
        self.logger.info(f"💾 Wrote {len(bonds)} bonds to {path}")

    def load_bonds(self, path: PathLike) -> List[BondRecord]:
        """Load bonds from a JSON-lines file or a directory-of-CSV layout"""
        path = self.require(path, "run the generate stage first")
        if path.is_dir():
            return self.load_bonds_csv_dir(path)
        bonds = []
        with open(path, "r", encoding="utf-8") as handle:
            for number, line in enumerate(handle, start=1):
                if not line.strip():
                    continue
                try:
                    record = json.loads(line)
                    features = np.array(record.pop("features"), dtype=np.float64)
                except (ValueError, KeyError) as exc:
                    raise BondRiskError(f"{path}:{number}: malformed bond record ({exc})")
                bonds.append(self._bond_from(record, features))
        return bonds

    def save_bonds_csv_dir(self, bonds: Sequence[BondRecord], directory: PathLike, registry: Optional[FeatureRegistry] = None):
        """One CSV per bond (day + 53 named columns) plus an index of static attributes"""
        registry = registry or build_default_registry()
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        for bond in bonds:
            frame = pd.DataFrame(bond.features, columns=registry.names)
            frame.insert(0, "day", bond.days)
            self.write_frame(frame, directory / f"{bond.bond_id}.csv")
        self.write_json(directory / BOND_INDEX_FILE, [self._bond_attributes(b) for b in bonds])
        self.logger.info(f"💾 Wrote {len(bonds)} bond CSV files to {directory}")

    def load_bonds_csv_dir(self, directory: PathLike, registry: Optional[FeatureRegistry] = None) -> List[BondRecord]:
        registry = registry or build_default_registry()
        directory = Path(directory)
        index = self.read_json(directory / BOND_INDEX_FILE, "bond directory index")
        bonds = []
        for attributes in index:
            frame = self.read_frame(directory / f"{attributes['bond_id']}.csv", "bond CSV")
            missing = [name for name in registry.names if name not in frame.columns]
            if missing:
                raise ShapeError(f"Bond CSV {attributes['bond_id']} lacks columns: {', '.join(missing[:5])}")
            features = frame[registry.names].to_numpy(dtype=np.float64)
            bonds.append(self._bond_from(attributes, features))
        return bonds

    # ------------------------------------------------------------------
    # Labels
    # ------------------------------------------------------------------

    def labels_frame(self, labels: Iterable[LabelSeries]) -> pd.DataFrame:
        frames = [
            pd.DataFrame(
                {
                    "bond_id": series.bond_id,
                    "day": series.days,
                    "p_gmm": series.p_gmm,
                    "p_cs": series.p_cs,
                    "p_bwd": series.p_bwd,
                    "p_integrated": series.p_integrated,
                }
            )
            for series in labels
        ]
        if not frames:
            return pd.DataFrame(columns=LABEL_COLUMNS)
        return pd.concat(frames, ignore_index=True)[LABEL_COLUMNS]

    def save_labels(self, labels: Sequence[LabelSeries], path: PathLike):
        self.write_frame(self.labels_frame(labels), path)
        self.logger.info(f"💾 Wrote labels for {len(labels)} bonds to {path}")

    def load_labels(self, path: PathLike) -> List[LabelSeries]:
        frame = self.read_frame(path, "run the label stage first")
        missing = [c for c in LABEL_COLUMNS if c not in frame.columns]
        if missing:
            raise ShapeError(f"Label file {path} lacks columns: {', '.join(missing)}")
        labels = []
        for bond_id, group in frame.groupby("bond_id", sort=True):
            group = group.sort_values("day", kind="stable")
            labels.append(
                LabelSeries(
                    bond_id=str(bond_id),
                    start_day=int(group["day"].iloc[0]),
                    p_gmm=group["p_gmm"].to_numpy(),
                    p_cs=group["p_cs"].to_numpy(),
                    p_bwd=group["p_bwd"].to_numpy(),
                    p_integrated=group["p_integrated"].to_numpy(),
                )
            )
        return labels

    # ------------------------------------------------------------------
    # Binary containers
    # ------------------------------------------------------------------

    def save_container(self, path: PathLike, magic: bytes, header: Dict[str, Any], arrays: Dict[str, np.ndarray]):
        """
        magic | uint32 LE header length | JSON header | float32 LE arrays back to back.

        The header lists each array's name and shape in storage order.
        """
        header = dict(header)
        header["arrays"] = [{"name": name, "shape": list(np.shape(a))} for name, a in arrays.items()]
        encoded = json.dumps(header, sort_keys=True).encode("utf-8")
        chunks = [magic, struct.pack("<I", len(encoded)), encoded]
        chunks.extend(np.ascontiguousarray(a, dtype="<f4").tobytes() for a in arrays.values())
        self._write_bytes(Path(path), b"".join(chunks))

    def load_container(self, path: PathLike, magic: bytes, hint: str = "") -> Tuple[Dict[str, Any], Dict[str, np.ndarray]]:
        path = self.require(path, hint)
        payload = path.read_bytes()
        if payload[:4] != magic:
            raise BondRiskError(f"{path} is not a {magic.decode()} container")
        (length,) = struct.unpack("<I", payload[4:8])
        header = json.loads(payload[8:8 + length].decode("utf-8"))
        offset = 8 + length
        arrays: Dict[str, np.ndarray] = {}
        for spec in header.pop("arrays"):
            count = int(np.prod(spec["shape"], dtype=np.int64))
            values = np.frombuffer(payload, dtype="<f4", count=count, offset=offset)
            arrays[spec["name"]] = values.reshape(spec["shape"]).astype(np.float32)
            offset += 4 * count
        if offset != len(payload):
            raise BondRiskError(f"{path}: {len(payload) - offset} trailing bytes after the last array")
        return header, arrays

    def save_dataset(self, dataset: WindowedDataset, path: PathLike):
        header = {
            "format": "windowed-dataset",
            "version": __version__,
            "window": dataset.window,
            "seed": dataset.seed,
            "registry_hash": dataset.registry_hash,
            "n_samples": len(dataset),
            "n_features": dataset.n_features,
            "split_counts": dataset.split_counts(),
            "skipped": dataset.skipped,
            "bond_ids": dataset.bond_ids.tolist(),
            "end_days": dataset.end_days.tolist(),
            "high_risk": dataset.high_risk.tolist(),
            "split": dataset.split.tolist(),
            "synthetic": dataset.synthetic.tolist(),
            "prior_stats": {k: list(v) for k, v in sorted(dataset.prior_stats.items())},
        }
        arrays = {
            "inputs": dataset.inputs,
            "labels": dataset.labels,
            "last_labels": dataset.last_labels,
        }
        self.save_container(path, DATASET_MAGIC, header, arrays)
        self.logger.info(f"💾 Wrote dataset ({len(dataset)} samples, window {dataset.window}) to {path}")

    def load_dataset(self, path: PathLike) -> WindowedDataset:
        header, arrays = self.load_container(path, DATASET_MAGIC, "run the preprocess stage first")
        if header["n_features"] != N_FEATURES:
            raise ShapeError(f"Dataset {path} has {header['n_features']} features, expected {N_FEATURES}")
        n = header["n_samples"]
        return WindowedDataset(
            inputs=arrays["inputs"].reshape(n, header["window"], header["n_features"]),
            labels=arrays["labels"],
            last_labels=arrays["last_labels"],
            bond_ids=np.array(header["bond_ids"], dtype=str).reshape(n),
            end_days=np.array(header["end_days"], dtype=np.int64).reshape(n),
            high_risk=np.array(header["high_risk"], dtype=bool).reshape(n),
            split=np.array(header["split"], dtype=str).reshape(n),
            synthetic=np.array(header["synthetic"], dtype=bool).reshape(n),
            window=header["window"],
            seed=header["seed"],
            registry_hash=header["registry_hash"],
            prior_stats={k: (float(v[0]), float(v[1])) for k, v in header["prior_stats"].items()},
            skipped=header["skipped"],
        )

    def save_checkpoint(self, checkpoint, path: PathLike):
        header, arrays = checkpoint.to_container()
        header["version"] = __version__
        self.save_container(path, CHECKPOINT_MAGIC, header, arrays)
        self.logger.info(f"💾 Wrote {checkpoint.architecture.variant} checkpoint to {path}")

    def load_checkpoint(self, path: PathLike):
        from .models import Checkpoint

        header, arrays = self.load_container(path, CHECKPOINT_MAGIC, "run the train stage first")
        return Checkpoint.from_container(header, arrays)

    # ------------------------------------------------------------------
    # Mixture, registry, manifests
    # ------------------------------------------------------------------

    def save_gmm(self, gmm: GmmModel, path: PathLike):
        self.write_json(path, gmm.to_dict())

    def load_gmm(self, path: PathLike) -> GmmModel:
        return GmmModel.from_dict(self.read_json(path, "run the label stage first"))

    def write_manifest(
        self,
        directory: PathLike,
        stage: str,
        inputs: Sequence[PathLike],
        outputs: Sequence[PathLike],
        settings: Dict[str, Any],
        seed: int,
    ) -> Path:
        """
        manifest_<stage>.json with content hashes of inputs and outputs.

        Paths are stored relative to the manifest directory and no timestamps are
        recorded, so identical runs write identical manifests.
        """
        directory = Path(directory)
        try:
            manifest = {
                "stage": stage,
                "version": __version__,
                "seed": seed,
                "config": settings,
                "inputs": self._hashes(directory, inputs),
                "outputs": self._hashes(directory, outputs),
            }
        except OSError as exc:
            self.logger.debug(f"Traceback: {traceback.format_exc()}")
            raise BondRiskError(f"Cannot hash artifacts for the {stage} manifest: {exc}")
        path = directory / f"manifest_{stage}.json"
        self.write_json(path, manifest)
        self.logger.info(f"📋 Manifest written: {path}")
        return path

    def _hashes(self, directory: Path, paths: Sequence[PathLike]) -> Dict[str, str]:
        hashes = {}
        for path in paths:
            path = Path(path)
            relative = Path(os.path.relpath(path, directory)).as_posix()
            if path.is_dir():
                for child in sorted(p for p in path.rglob("*") if p.is_file()):
                    hashes[Path(os.path.relpath(child, directory)).as_posix()] = sha256_file(child)
            else:
                hashes[relative] = sha256_file(path)
        return dict(sorted(hashes.items()))

    def verify_manifest(self, path: PathLike) -> List[str]:
        """Re-hash every artifact a manifest lists; returns the mismatches"""
        path = self.require(path, "manifest")
        manifest = self.read_json(path)
        problems = []
        for section in ("inputs", "outputs"):
            for relative, expected in manifest.get(section, {}).items():
                target = path.parent / relative
                if not target.exists():
                    problems.append(f"{section}: {relative} is missing")
                elif sha256_file(target) != expected:
                    problems.append(f"{section}: {relative} hash mismatch")
        return problems


# Global artifact store instance
artifact_store = ArtifactStore()
