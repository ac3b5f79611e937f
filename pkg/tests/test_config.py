import json

import pytest

from aneurysm_patchnet.config import PipelineConfig, apply_overrides, dump_config, load_config, to_json
from aneurysm_patchnet.errors import ConfigError


def test_defaults_round_trip(tmp_path):
    cfg = PipelineConfig()
    path = dump_config(cfg, tmp_path / "c.json")
    assert load_config(path) == cfg


def test_quick_round_trip(tmp_path):
    cfg = PipelineConfig.quick()
    path = dump_config(cfg, tmp_path / "q.json")
    assert load_config(path) == cfg
    # the resolved document is complete: every field is present
    doc = json.loads(path.read_text())
    assert set(doc) == set(to_json(cfg))


def test_partial_file_uses_defaults(tmp_path):
    p = tmp_path / "c.json"
    p.write_text(json.dumps({"train": {"epochs": 7}, "seed": 3}))
    cfg = load_config(p)
    assert cfg.train.epochs == 7 and cfg.seed == 3
    assert cfg.train.batch_size == PipelineConfig().train.batch_size


def test_quick_base_keeps_quick_fields(tmp_path):
    p = tmp_path / "c.json"
    p.write_text(json.dumps({"train": {"epochs": 2}}))
    cfg = load_config(p, quick=True)
    assert cfg.train.epochs == 2 and cfg.model == PipelineConfig.quick().model


def test_overrides():
    cfg = load_config(None, ["train.learning_rate=0.01", "experiment.cells=[\"baseline:random\"]",
                             "policy=intensity_matched"])
    assert cfg.train.learning_rate == 0.01
    assert cfg.experiment.cells == ("baseline:random",)
    assert cfg.policy == "intensity_matched"


def test_apply_overrides_is_pure():
    doc = {"a": {"b": 1}}
    out = apply_overrides(doc, ["a.c=2"])
    assert doc == {"a": {"b": 1}} and out == {"a": {"b": 1, "c": 2}}


@pytest.mark.parametrize("override, fragment", [
    ("train.epoch=3", "train.epoch"),
    ("train.epochs=abc", "train.epochs"),
    ("cohort.prevalence=1.5", "cohort"),
    ("policy=hard", "policy"),
    ("experiment.cells=[\"x:y\"]", "cells"),
    ("model.small_side=14", "model input sides"),
    ("noequals", "key.path=value"),
])
def test_errors_name_the_field(override, fragment):
    with pytest.raises(ConfigError, match=fragment.replace(".", r"\.")):
        load_config(None, [override])


def test_missing_and_bad_files(tmp_path):
    with pytest.raises(ConfigError):
        load_config(tmp_path / "nope.json")
    bad = tmp_path / "bad.json"
    bad.write_text("{not json")
    with pytest.raises(ConfigError):
        load_config(bad)
    bad.write_text("[1, 2]")
    with pytest.raises(ConfigError):
        load_config(bad)
