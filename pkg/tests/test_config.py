import pytest

from gromov_gap import config as cfgmod
from gromov_gap.errors import ConfigError, InputNotFound


def test_empty_config_fills_defaults():
    cfg = cfgmod.parse_config_text("")
    assert cfg["gw"]["epsilon0"] == 0.1 and cfg["gw"]["stat"] == "mean"
    assert cfg["gw"]["factored"] is None
    text = cfgmod.echo(cfg)
    assert "epsilon0 = 0.1" in text and "stat = mean" in text
    # every schema key is echoed
    assert sum(len(keys) for keys in cfgmod.SCHEMA.values()) == sum(" = " in line for line in text.splitlines())


def test_override_is_echoed():
    cfg = cfgmod.parse_config_text("[gw]\nstat = max\nepsilon0 = 0.02  # tighter\n")
    assert cfg["gw"]["stat"] == "max" and cfg["gw"]["epsilon0"] == 0.02
    assert "stat = max" in cfgmod.echo(cfg)


def test_unknown_key_names_key_and_line():
    with pytest.raises(ConfigError) as info:
        cfgmod.parse_config_text("[run]\nseed = 1\n\n[gw]\nepsilonn0 = 0.1\n", "c.ini")
    msg = str(info.value)
    assert "epsilonn0" in msg and "c.ini:5" in msg
    assert info.value.code == "E_CONFIG_PARSE"


@pytest.mark.parametrize("text", [
    "[bogus]\nx = 1\n",
    "[gw]\nstat = median\n",
    "[gw]\nmax_outer = many\n",
    "[gw]\nepsilon0 = -1\n",
    "[kernels]\nsource = manhattan\n",
    "no section header\n",
    "[sinkhorn]\nepsilon_scaling = maybe\n",
])
def test_rejections(text):
    with pytest.raises(ConfigError):
        cfgmod.parse_config_text(text)


def test_lists_and_quotes():
    cfg = cfgmod.parse_config_text('[train]\nhidden = 32, 16\n[sweep]\nfamilies = "cosine inner_product"\n')
    assert cfg["train"]["hidden"] == (32, 16)
    assert cfg["sweep"]["families"] == ("cosine", "inner_product")


def test_echo_round_trips():
    cfg = cfgmod.parse_config_text("[gw]\nfactored = false\n[train]\nlambda = 2.5\n")
    again = cfgmod.parse_config_text(cfgmod.echo(cfg))
    assert again == cfg


def test_builders():
    cfg = cfgmod.parse_config_text("[kernels]\ntarget = cosine\n[gw]\nentropy_mode = shannon\n")
    kx, ky = cfgmod.build_kernels(cfg)
    assert (kx.family, ky.family) == ("sqeuclidean", "cosine")
    gw = cfgmod.build_gw_config(cfg)
    assert gw.entropy_mode == "shannon" and gw.inner.epsilon == 1.0


def test_missing_file(tmp_path):
    with pytest.raises(InputNotFound):
        cfgmod.load_config(tmp_path / "nope.ini")
    assert cfgmod.load_config(None)["run"]["seed"] == 0
