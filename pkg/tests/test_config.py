import json

import pytest

from folearn.config import FOURIER_TEST_VECTORS, RunConfig
from folearn.deeponet import DeepONetConfig
from folearn.errors import ConfigError
from folearn.fol import FolConfig
from folearn.microstructure import TEST_CASES


def test_defaults():
    cfg = RunConfig.from_dict({})
    assert cfg.nu == 0.3 and cfg.seed == 0
    assert cfg.build_mesh().n_nodes == 121
    assert len(cfg.build_dof_map(cfg.build_mesh()).prescribed_dofs) == 44
    t = cfg.trainer_config()
    assert isinstance(t, FolConfig) and t.input_encoding == "nodal_E"
    assert [c["name"] for c in cfg.test_cases()] == list(TEST_CASES)


def test_fourier_defaults():
    cfg = RunConfig.from_dict({"sampling": {"kind": "fourier"}})
    assert cfg.trainer_config().input_encoding == "fourier_coeffs"
    assert len(cfg.fourier_template().coeffs) == 10
    assert cfg.test_cases()[0]["coeffs"] == FOURIER_TEST_VECTORS["voids"]


def test_overrides():
    cfg = RunConfig.from_dict({"seed": 1, "trainer": {"kind": "deeponet", "p": 4}}, seed=7, out="x")
    assert cfg.seed == 7 and cfg.out == "x"
    t = cfg.trainer_config()
    assert isinstance(t, DeepONetConfig) and t.p == 4 and t.seed == 7


@pytest.mark.parametrize("raw, match", [
    ({"bogus": 1}, "bogus"),
    ({"material": {"E_hrd": 1}}, "E_hrd"),
    ({"trainer": {"kind": "fol", "learning_rate": 1}}, "learning_rate"),
    ({"trainer": {"kind": "gan"}}, "kind"),
    ({"sampling": {"n_samples": 0}}, "n_samples"),
    ({"sampling": {"kind": "other"}}, "sampling.kind"),
    ({"mesh": {"grid_n": 1}}, "grid_n"),
    ({"mesh": {"grid_n": 5, "tet_grid_n": 2}}, "exactly one"),
    ({"material": {"nu": 0.5}}, "nu"),
    ({"seed": -1}, "seed"),
    ({"version": 2}, "version"),
    ({"trainer": {"mode": "stiff"}}, "mode"),
    ({"test_cases": [{"name": "a", "builtin": "nope"}]}, "builtin"),
    ({"sampling": {"kind": "fourier", "layout": "weird"}}, "Fourier"),
])
def test_rejected(raw, match):
    with pytest.raises(ConfigError, match=match):
        RunConfig.from_dict(raw)


def test_load(tmp_path):
    with pytest.raises(FileNotFoundError):
        RunConfig.load(tmp_path / "none.json")
    p = tmp_path / "c.json"
    p.write_text("{oops")
    with pytest.raises(ConfigError, match="invalid JSON"):
        RunConfig.load(p)
    p.write_text(json.dumps({"mesh": {"grid_n": 5}}))
    assert RunConfig.load(p).build_mesh().n_nodes == 25
