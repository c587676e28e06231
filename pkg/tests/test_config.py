import pytest
import yaml

from lipgan.config import load_config, parse_config
from lipgan.errors import ConfigError
from lipgan.model import TOY_ARCHITECTURE


def _write(tmp_path, data):
    path = tmp_path / "cfg.yaml"
    path.write_text(yaml.safe_dump(data))
    return path


def test_minimal_config_fills_defaults(tmp_path):
    cfg = load_config(_write(tmp_path, {"seed": 4}))
    assert cfg.architecture_config() == TOY_ARCHITECTURE
    assert cfg.loss_config().margin == 2.0
    tc = cfg.train_config()
    assert (tc.batch_size, tc.learning_rate, tc.seed) == (32, 1e-3, 4)


def test_architecture_overrides():
    cfg = parse_config({"architecture": {"preset": "full", "embed_dim": 128}})
    arch = cfg.architecture_config()
    assert arch.face_size == 96 and arch.embed_dim == 128


def test_unknown_key_is_named():
    with pytest.raises(ConfigError) as exc:
        parse_config({"optimizer": {"learnin_rate": 0.1}})
    assert exc.value.key == "optimizer.learnin_rate"


def test_misspelled_stage_name():
    data = {"pipeline": {"stages": [{"name": "recognise", "adapter": "file", "config": {"path": "a.txt"}}]}}
    with pytest.raises(ConfigError) as exc:
        parse_config(data)
    assert "recognise" in str(exc.value)
    assert exc.value.key.startswith("pipeline.stages.0")


def test_lipsync_needs_checkpoint():
    data = {"pipeline": {"stages": [{"name": "lipsync", "adapter": "internal", "config": {}}]}}
    with pytest.raises(ConfigError, match="checkpoint"):
        parse_config(data)


def test_duplicate_stage():
    stage = {"name": "translate", "adapter": "file", "config": {"path": "t.txt"}}
    with pytest.raises(ConfigError, match="duplicate"):
        parse_config({"pipeline": {"stages": [stage, stage]}})


def test_invalid_architecture_surfaces_as_config_error():
    with pytest.raises(ConfigError):
        parse_config({"architecture": {"decoder_widths": [8, 8]}})


def test_bad_values():
    with pytest.raises(ConfigError):
        parse_config({"loss": {"margin": 0}})
    with pytest.raises(ConfigError):
        parse_config({"optimizer": {"batch_size": 0}})


def test_relative_paths_resolve_against_config(tmp_path):
    data = {"data": {"corpus": "corpus"},
            "pipeline": {"stages": [{"name": "lipsync", "adapter": "internal", "config": {"checkpoint": "m.ckpt"}}]}}
    cfg = load_config(_write(tmp_path, data))
    assert cfg.data.corpus == tmp_path / "corpus"
    assert cfg.pipeline.stages[0].config["checkpoint"] == str(tmp_path / "m.ckpt")


def test_missing_and_malformed_files(tmp_path):
    with pytest.raises(ConfigError):
        load_config(tmp_path / "nope.yaml")
    bad = tmp_path / "bad.yaml"
    bad.write_text("- just\n- a list\n")
    with pytest.raises(ConfigError):
        load_config(bad)
