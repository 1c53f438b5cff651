import json

import numpy as np
import pytest

from src.errors import BondRiskError, MissingArtifactError
from src.models import build_model, predict, train
from src.schema import N_FEATURES, Outcome
from src.storage import CHECKPOINT_MAGIC, DATASET_MAGIC, artifact_store, sha256_file


def test_sha256_of_a_known_file(tmp_path):
    path = tmp_path / "abc.txt"
    path.write_bytes(b"abc")
    assert sha256_file(path) == "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad"


def _gappy_bond(make_bond):
    features = np.random.default_rng(0).normal(size=(6, N_FEATURES))
    features[2, 7] = np.nan
    return make_bond(
        bond_id="G1", issue_date=4, n_days=6, outcome=Outcome.DEFAULTED, features=features,
        industry_id=3, region_id=2, latent_grades=np.array([14, 12, 9, 6, 3, 1]),
    )


def _assert_same_bond(a, b):
    assert a.bond_id == b.bond_id
    assert (a.issue_date, a.end_date, a.default_date) == (b.issue_date, b.end_date, b.default_date)
    assert a.outcome is b.outcome
    assert (a.industry_id, a.region_id) == (b.industry_id, b.region_id)
    np.testing.assert_array_equal(a.features, b.features)
    np.testing.assert_array_equal(a.latent_grades, b.latent_grades)


def test_bonds_json_lines_keep_gaps_and_latent_grades(tmp_path, make_bond):
    bond = _gappy_bond(make_bond)
    path = tmp_path / "bonds.jsonl"
    artifact_store.save_bonds([bond, make_bond(bond_id="M1")], path)
    first = json.loads(path.read_text().splitlines()[0])
    assert first["features"][2][7] is None

    loaded = artifact_store.load_bonds(path)
    assert [b.bond_id for b in loaded] == ["G1", "M1"]
    _assert_same_bond(loaded[0], bond)
    assert loaded[1].latent_grades is None


def test_bonds_csv_directory(tmp_path, make_bond, registry):
    bond = _gappy_bond(make_bond)
    artifact_store.save_bonds_csv_dir([bond], tmp_path / "bonds", registry)
    assert (tmp_path / "bonds" / "G1.csv").exists()
    _assert_same_bond(artifact_store.load_bonds(tmp_path / "bonds")[0], bond)


def test_labels_round_trip(tmp_path, labeled):
    path = tmp_path / "labels.csv"
    artifact_store.save_labels(labeled.labels, path)
    loaded = {series.bond_id: series for series in artifact_store.load_labels(path)}
    assert len(loaded) == len(labeled.labels)
    for series in labeled.labels:
        again = loaded[series.bond_id]
        assert again.start_day == series.start_day
        np.testing.assert_array_equal(again.p_integrated, series.p_integrated)
        np.testing.assert_array_equal(again.p_bwd, series.p_bwd)


def test_dataset_container(tmp_path, small_dataset):
    path = tmp_path / "dataset_w2.brw"
    artifact_store.save_dataset(small_dataset, path)
    assert path.read_bytes()[:4] == DATASET_MAGIC
    loaded = artifact_store.load_dataset(path)
    np.testing.assert_array_equal(loaded.inputs, small_dataset.inputs)
    np.testing.assert_array_equal(loaded.labels, small_dataset.labels)
    np.testing.assert_array_equal(loaded.bond_ids, small_dataset.bond_ids)
    np.testing.assert_array_equal(loaded.split, small_dataset.split)
    np.testing.assert_array_equal(loaded.synthetic, small_dataset.synthetic)
    assert loaded.registry_hash == small_dataset.registry_hash
    assert loaded.prior_stats.keys() == small_dataset.prior_stats.keys()


def test_checkpoint_reload_predicts_bit_identically(tmp_path, small_dataset, tiny_architecture):
    config = tiny_architecture("ours", epochs=1)
    result = train(build_model(config), small_dataset, config)
    path = tmp_path / "ours_w2_s0.brc"
    artifact_store.save_checkpoint(result.checkpoint, path)
    assert path.read_bytes()[:4] == CHECKPOINT_MAGIC

    loaded = artifact_store.load_checkpoint(path)
    assert loaded.architecture == config
    assert loaded.best_epoch == result.checkpoint.best_epoch
    np.testing.assert_array_equal(predict(loaded, small_dataset), predict(result.model, small_dataset))


def test_boosting_checkpoint_reload(tmp_path, small_dataset, tiny_architecture):
    config = tiny_architecture("boosting")
    result = train(build_model(config), small_dataset, config)
    path = tmp_path / "boosting.brc"
    artifact_store.save_checkpoint(result.checkpoint, path)
    np.testing.assert_array_equal(
        predict(artifact_store.load_checkpoint(path), small_dataset), predict(result.model, small_dataset)
    )


def test_mixture_round_trip(tmp_path, labeled):
    path = tmp_path / "gmm.json"
    artifact_store.save_gmm(labeled.gmm, path)
    loaded = artifact_store.load_gmm(path)
    np.testing.assert_allclose(loaded.weights, labeled.gmm.weights)
    assert list(loaded.grade_order) == list(labeled.gmm.grade_order)


def test_wrong_container_magic(tmp_path, small_dataset):
    path = tmp_path / "dataset.brw"
    artifact_store.save_dataset(small_dataset, path)
    with pytest.raises(BondRiskError):
        artifact_store.load_checkpoint(path)
    path.write_bytes(path.read_bytes() + b"\x00\x00\x00\x00")
    with pytest.raises(BondRiskError, match="trailing"):
        artifact_store.load_dataset(path)


def test_missing_artifacts_name_their_path(tmp_path):
    with pytest.raises(MissingArtifactError) as excinfo:
        artifact_store.load_dataset(tmp_path / "absent.brw")
    assert "absent.brw" in str(excinfo.value)


def test_manifests_are_deterministic_and_detect_tampering(tmp_path):
    source = tmp_path / "in.txt"
    output = tmp_path / "out.txt"
    source.write_text("inputs")
    output.write_text("outputs")

    path = artifact_store.write_manifest(tmp_path, "label", [source], [output], {"seed": 1}, seed=1)
    first = path.read_bytes()
    artifact_store.write_manifest(tmp_path, "label", [source], [output], {"seed": 1}, seed=1)
    assert path.read_bytes() == first
    manifest = json.loads(first)
    assert manifest["outputs"] == {"out.txt": sha256_file(output)}
    assert artifact_store.verify_manifest(path) == []

    output.write_text("edited")
    source.unlink()
    problems = artifact_store.verify_manifest(path)
    assert problems == ["inputs: in.txt is missing", "outputs: out.txt hash mismatch"]


def test_verify_script_exit_status(tmp_path, capsys):
    from scripts.verify_manifest import main as verify_main

    output = tmp_path / "out.txt"
    output.write_text("outputs")
    artifact_store.write_manifest(tmp_path, "report", [], [output], {}, seed=0)
    assert verify_main(["--run-dir", str(tmp_path)]) == 0
    output.write_text("changed")
    assert verify_main(["--manifest", str(tmp_path / "manifest_report.json")]) == 1
    assert "hash mismatch" in capsys.readouterr().out
    assert verify_main(["--run-dir", str(tmp_path / "empty")]) == 1
