import json

import pytest

from tbdetect.config import ConfigError, PipelineConfig, config_from_dict, load_config


def test_defaults_validate():
    cfg = PipelineConfig().validate()
    assert cfg.unet.patch_side == cfg.detect.patch_side == 64
    assert cfg.seg_train.epochs == 20 and cfg.cls_train.epochs == 25


def test_partial_override(tmp_path):
    p = tmp_path / "c.json"
    p.write_text(json.dumps({"unet": {"base_channels": 8}, "synth": {"bacilli": [1, 2]}, "detect": {"threshold": 0.4}}))
    cfg = load_config(p)
    assert cfg.unet.base_channels == 8 and cfg.unet.depth == 3
    assert cfg.synth.bacilli == (1, 2)
    assert cfg.detect.threshold == 0.4


@pytest.mark.parametrize(
    "doc,msg",
    [
        ({"unet": {"base_chanels": 8}}, "base_chanels"),
        ({"trainer": {}}, "trainer"),
        ({"detect": {"connectivity": 6}}, "connectivity"),
        ({"unet": {"patch_side": 60}}, "patch_side"),
        ({"seg_train": {"epochs": 0}}, "epochs"),
        ({"unet": 3}, "unet"),
    ],
)
def test_rejections(doc, msg):
    with pytest.raises(ConfigError, match=msg):
        config_from_dict(doc)


def test_bad_files(tmp_path):
    with pytest.raises(ConfigError):
        load_config(tmp_path / "missing.json")
    (tmp_path / "bad.json").write_text("{not json")
    with pytest.raises(ConfigError):
        load_config(tmp_path / "bad.json")
