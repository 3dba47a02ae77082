import pytest

from interfmon.config import ConfigError, RunConfig, dump_config, load_config


def test_defaults_without_file():
    cfg = load_config(None)
    assert cfg == RunConfig()
    assert cfg.windows.lengths == (3, 5, 10, 20)


def test_roundtrip(tmp_path):
    cfg = load_config(None)
    path = tmp_path / "c.ini"
    dump_config(cfg, path)
    assert load_config(path) == cfg


def test_overrides(tmp_path):
    path = tmp_path / "c.ini"
    path.write_text("[run]\nseed = 7\n[gbt]\nn_trees = 12\n[windows]\nlengths = 5, 10\n"
                    "[eval]\ntune = no\nK_max = 3\n")
    cfg = load_config(path)
    assert cfg.seed == 7
    assert cfg.gbt.n_trees == 12
    assert cfg.windows.lengths == (5, 10)
    assert cfg.eval.tune is False and cfg.eval.K_max == 3
    p = cfg.protocol_config()
    assert p.seed == 7 and p.tune is False and p.gbt_rows is None
    assert cfg.protocol_config(seed=3).seed == 3


@pytest.mark.parametrize("text", [
    "[nosuch]\nx = 1\n",
    "[gbt]\nbogus = 1\n",
    "[gbt]\nseed = 3\n",
    "[run]\nother = 1\n",
    "[gbt]\nn_trees = many\n",
    "[gbt]\neta = 2.0\n",
    "[eval]\ntune = maybe\n",
    "not an ini file",
])
def test_invalid_configs(tmp_path, text):
    path = tmp_path / "bad.ini"
    path.write_text(text)
    with pytest.raises(ConfigError):
        load_config(path)


def test_missing_file(tmp_path):
    with pytest.raises(ConfigError):
        load_config(tmp_path / "absent.ini")
