import numpy as np
import pytest

from kfsi import config as cfgmod
from kfsi.errors import ConfigurationError


def test_defaults_validate_and_hash_is_stable():
    a = cfgmod.load_config(env={})
    b = cfgmod.load_config(env={})
    assert cfgmod.config_hash(a) == cfgmod.config_hash(b)
    assert len(cfgmod.config_hash(a)) == 12


@pytest.mark.parametrize("name", sorted(cfgmod.PRESETS))
def test_presets_validate(name):
    cfg = cfgmod.load_config(preset=name, env={})
    cfgmod.problem_data(cfg)


def test_precedence_preset_file_env_overrides(tmp_path):
    ini = tmp_path / "run.ini"
    ini.write_text("[run]\npreset = zero\n\n[time]\ndt = 0.005\nhorizon = 0.3\n", encoding="utf-8")
    cfg = cfgmod.load_config(ini, env={"KFSI_TIME__HORIZON": "0.4", "OTHER": "x"},
                             overrides={"stress": {"p": "2.5"}})
    assert cfg["time"]["dt"] == 0.005
    assert cfg["time"]["horizon"] == 0.4
    assert cfg["time"]["window"] == 0.1      # from the zero preset
    assert cfg["stress"]["p"] == 2.5


def test_all_errors_reported_at_once():
    with pytest.raises(ConfigurationError) as exc:
        cfgmod.load_config(env={}, overrides={"stress": {"p": "1.1"}, "time": {"dt": "-1"},
                                              "basis": {"n_s": "many"}})
    msg = str(exc.value)
    assert "stress.p" in msg and "time.dt" in msg and "basis.n_s" in msg


def test_unknown_keys_and_presets_rejected(tmp_path):
    with pytest.raises(ConfigurationError):
        cfgmod.load_config(env={}, overrides={"time": {"dtt": "1"}})
    with pytest.raises(ConfigurationError):
        cfgmod.load_config(preset="nope", env={})
    with pytest.raises(ConfigurationError):
        cfgmod.load_config(tmp_path / "missing.ini", env={})


def test_boolean_coercion():
    cfg = cfgmod.load_config(env={"KFSI_BASIS__SHELL_ONLY": "yes"})
    assert cfg["basis"]["shell_only"] is True


def test_forcing_catalog():
    sec = dict(cfgmod.DEFAULTS["forcing"])
    sec.update(g_kind="gaussian-pulse", g_amplitude=2.0, g_center=0.5, g_width=0.1, g_t0=0.2,
               g_duration=0.1)
    g = cfgmod.make_forcing(sec, "g", 1.0, 2)
    u = np.array([[0.5], [0.6]])
    np.testing.assert_allclose(g(0.2, u), [2.0, 2.0 * np.exp(-1.0)])
    sec.update(f_kind="traveling-wave", f_amplitude=1.0, f_speed=0.5, f_wavenumber=1, f_ramp=0.0)
    f = cfgmod.make_forcing(sec, "f", 1.0, 2)
    v = f(0.5, np.array([[0.25, 0.3]]))
    np.testing.assert_allclose(v, [[0.0, 1.0]], atol=1e-15)
    sec.update(g_kind="constant", g_ramp=0.5)
    g = cfgmod.make_forcing(sec, "g", 1.0, 2)
    assert g(0.25, np.array([[0.0]]))[0] == pytest.approx(1.0)
    assert cfgmod.make_forcing(dict(cfgmod.DEFAULTS["forcing"]), "g", 1.0, 2) is None


def test_non_flat_geometry_rejected_for_runs():
    cfg = cfgmod.load_config(env={}, overrides={"geometry": {"kind": "sphere"}})
    with pytest.raises(ConfigurationError):
        cfgmod.problem_data(cfg)
