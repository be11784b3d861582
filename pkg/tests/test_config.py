"""Config text format, overrides, and the run manifest."""

import dataclasses
import json

import pytest

from frematch import config as cf


def test_empty_text_gives_defaults():
    assert cf.parse_config("") == cf.default_experiment()


def test_render_parse_round_trip_defaults():
    exp = cf.default_experiment()
    assert cf.parse_config(cf.render_config(exp)) == exp


def test_render_parse_round_trip_modified():
    exp = cf.apply_overrides(cf.default_experiment(), [
        "mode=fsr_only", "lambda=3.5", "epochs=7", "hidden_dims=32,16",
        "ema_scheduled=true", "dataset.kind=blobs", "dataset.n=300",
        "split.test_frac=0.25", "augment.cutout_frac=0.5",
    ])
    assert cf.parse_config(cf.render_config(exp)) == exp


def test_lambda_key_maps_to_lam_field():
    exp = cf.parse_config("lambda = 5\n")
    assert exp.train.lam == 5.0


def test_comments_and_blanks_ignored():
    text = """
    # full-line comment

    epochs = 3   # trailing comment
    eta = 0.9
    """
    exp = cf.parse_config(text)
    assert exp.train.epochs == 3
    assert exp.train.eta == 0.9


def test_unknown_key_is_named():
    with pytest.raises(cf.ConfigError, match="unknown config key 'bogus'"):
        cf.parse_config("bogus = 1\n")


def test_bad_value_is_named():
    with pytest.raises(cf.ConfigError, match="bad value for 'epochs'"):
        cf.parse_config("epochs = banana\n")


def test_missing_equals_reports_line_number():
    with pytest.raises(cf.ConfigError, match="line 2"):
        cf.parse_config("epochs = 3\njust words\n")


def test_override_without_equals_rejected():
    with pytest.raises(cf.ConfigError, match="expected key=value"):
        cf.apply_overrides(cf.default_experiment(), ["epochs"])


def test_boolean_coercions():
    for raw, want in [("true", True), ("YES", True), ("1", True),
                      ("false", False), ("No", False), ("0", False)]:
        exp = cf.parse_config(f"nesterov = {raw}\n")
        assert exp.train.nesterov is want
    with pytest.raises(cf.ConfigError, match="nesterov"):
        cf.parse_config("nesterov = maybe\n")


def test_tuple_coercion():
    exp = cf.parse_config("hidden_dims = 8,4\n")
    assert exp.train.hidden_dims == (8, 4)


def test_invalid_field_value_becomes_config_error():
    # dataclass validation (eta outside (0,1)) surfaces as ConfigError
    with pytest.raises(cf.ConfigError):
        cf.parse_config("eta = 1.5\n")
    with pytest.raises(cf.ConfigError):
        cf.parse_config("dataset.kind = cifar\n")


def test_snapshot_is_json_friendly():
    snap = cf.config_snapshot(cf.default_experiment())
    text = json.dumps(snap)
    back = json.loads(text)
    assert back["lambda"] == 20.0
    assert back["eta"] == 0.95
    assert back["hidden_dims"] == [64, 64]
    assert back["dataset.kind"] == "two_moons"


def test_every_train_field_reachable_from_some_key():
    mapped = {field_name for section, field_name in cf.KEYMAP.values()
              if section == "train"}
    all_fields = {f.name for f in dataclasses.fields(cf.TrainConfig)}
    assert mapped == all_fields


def test_build_dataset_two_moons_shape():
    ds = cf.build_dataset(cf.DatasetConfig(kind="two_moons", n=120), seed=0)
    assert ds.samples.shape == (120, 2)
    assert ds.num_classes == 2


def test_build_dataset_blobs_classes():
    ds = cf.build_dataset(cf.DatasetConfig(kind="blobs", n=90, classes=3), seed=1)
    assert ds.samples.shape == (90, 2)
    assert ds.num_classes == 3


def test_build_dataset_seed_changes_samples():
    a = cf.build_dataset(cf.DatasetConfig(n=50), seed=0)
    b = cf.build_dataset(cf.DatasetConfig(n=50), seed=1)
    assert (a.samples != b.samples).any()


def test_dataset_id_mentions_knobs():
    ident = cf.dataset_id(cf.DatasetConfig(kind="two_moons", n=77, noise=0.2), seed=9)
    assert "n=77" in ident and "seed=9" in ident


def test_write_manifest_round_trips(tmp_path):
    path = tmp_path / "manifest.json"
    exp = cf.default_experiment()
    cf.write_manifest(path, exp, seed=3, started="2026-01-01T00:00:00",
                      outputs={"metrics": "metrics.csv"})
    manifest = json.loads(path.read_text())
    assert manifest["config"]["lambda"] == 20.0
    assert manifest["split_seed"] == 3
    assert manifest["finished"] is None
    assert manifest["outputs"] == {"metrics": "metrics.csv"}

    cf.write_manifest(path, exp, seed=3, started="2026-01-01T00:00:00",
                      outputs={"metrics": "metrics.csv"},
                      finished="2026-01-01T00:01:00")
    manifest = json.loads(path.read_text())
    assert manifest["finished"] == "2026-01-01T00:01:00"
