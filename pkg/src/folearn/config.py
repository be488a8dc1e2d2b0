"""Run configuration: a versioned JSON document validated before any work."""
from __future__ import annotations

import copy
import json
from pathlib import Path

import numpy as np

from .deeponet import DeepONetConfig
from .errors import ConfigError
from .fol import FolConfig
from .mesh import Mesh, build_dof_map, build_structured_grid, build_structured_tet_mesh, load_tet_mesh
from .microstructure import TEST_CASES, FourierSpec, n_fourier_coeffs

CONFIG_VERSION = 1

FOURIER_TEST_VECTORS = {
    "mesh_study": [-4.0, 2.0, -0.6, 1.7, 6.0, 1.9, 10.8, -3.6, -2.8, -9.9],
    "voids": [12.7, 6.1, -2.1, -14.1, -4.6, 2.1, 0.4, 2.7, 4.4, -3.1],
    "inclusions": [-6.3, -0.4, 9.5, 4.4, 2.2, 0.9, 1.1, 0.4, -3.2, 0.3],
    "random": [15.9, 17.2, 14.3, 2.0, 13.6, 2.5, -6.0, 7.4, -7.3, 8.2],
}

DEFAULTS = {
    "version": CONFIG_VERSION,
    "seed": 0,
    "out": "run",
    "mesh": {"grid_n": 11, "side_length": 1.0},
    "material": {"E_hard": 1.0, "E_soft": 0.1, "nu": 0.3, "E_min": 0.1, "E_max": 1.0, "beta": 1.0},
    "bcs": [["left", 0, 0.0], ["left", 1, 0.0], ["right", 0, 0.05], ["right", 1, 0.05]],
    "sampling": {"kind": "two_phase", "n_samples": 4000, "frequencies": [[3, 5, 7], [2, 4, 7]],
                 "layout": "reduced", "ranges": None},
    "trainer": {"kind": "fol"},
    "test_cases": None,
}

_MESH_KEYS = {"grid_n", "side_length", "tet_grid_n", "tet_mesh_file"}
_TRAINER_KEYS = {
    "fol": set(FolConfig.__dataclass_fields__) - {"seed", "nu"},
    "deeponet": set(DeepONetConfig.__dataclass_fields__) - {"seed", "nu"},
}


def _check_keys(section: str, given: dict, allowed) -> None:
    unknown = sorted(set(given) - set(allowed))
    if unknown:
        raise ConfigError(f"unknown key(s) in {section}: {', '.join(unknown)}")


def _merge(defaults: dict, given: dict, section: str) -> dict:
    if not isinstance(given, dict):
        raise ConfigError(f"{section} must be an object")
    _check_keys(section, given, defaults)
    out = copy.deepcopy(defaults)
    out.update(given)
    return out


class RunConfig:
    """Fully resolved run configuration.

    ``data`` holds the resolved JSON document; the helpers build the mesh,
    boundary conditions and trainer settings from it.
    """

    def __init__(self, data: dict):
        self.data = data

    @classmethod
    def from_dict(cls, raw: dict, seed: int | None = None, out: str | None = None) -> "RunConfig":
        if not isinstance(raw, dict):
            raise ConfigError("configuration must be a JSON object")
        _check_keys("config", raw, DEFAULTS)
        if raw.get("version", CONFIG_VERSION) != CONFIG_VERSION:
            raise ConfigError(f"unsupported config version {raw.get('version')}; expected {CONFIG_VERSION}")
        d = copy.deepcopy(DEFAULTS)
        for key in ("version", "seed", "out", "bcs", "test_cases"):
            if key in raw:
                d[key] = copy.deepcopy(raw[key])
        if "mesh" in raw:
            _check_keys("mesh", raw["mesh"], _MESH_KEYS)
            d["mesh"] = copy.deepcopy(raw["mesh"])
        d["material"] = _merge(DEFAULTS["material"], raw.get("material", {}), "material")
        d["sampling"] = _merge(DEFAULTS["sampling"], raw.get("sampling", {}), "sampling")
        trainer = copy.deepcopy(raw.get("trainer", {"kind": "fol"}))
        kind = trainer.pop("kind", "fol")
        if kind not in _TRAINER_KEYS:
            raise ConfigError(f"trainer kind must be 'fol' or 'deeponet', got {kind!r}")
        _check_keys(f"trainer ({kind})", trainer, _TRAINER_KEYS[kind])
        d["trainer"] = {"kind": kind, **trainer}
        if seed is not None:
            d["seed"] = seed
        if out is not None:
            d["out"] = out
        cfg = cls(d)
        cfg.validate()
        return cfg

    @classmethod
    def load(cls, path, seed: int | None = None, out: str | None = None) -> "RunConfig":
        path = Path(path)
        if not path.is_file():
            raise FileNotFoundError(f"config file not found: {path}")
        try:
            raw = json.loads(path.read_text())
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: invalid JSON ({exc})") from None
        return cls.from_dict(raw, seed=seed, out=out)

    # ------------------------------------------------------------------
    def validate(self) -> None:
        d = self.data
        if not isinstance(d["seed"], int) or d["seed"] < 0:
            raise ConfigError("seed must be a non-negative integer")
        m = d["mesh"]
        kinds = [k for k in ("grid_n", "tet_grid_n", "tet_mesh_file") if k in m]
        if len(kinds) != 1:
            raise ConfigError("mesh needs exactly one of grid_n, tet_grid_n, tet_mesh_file")
        for k in ("grid_n", "tet_grid_n"):
            if k in m and (not isinstance(m[k], int) or m[k] < 2):
                raise ConfigError(f"mesh.{k} must be an integer >= 2")
        if not float(m.get("side_length", 1.0)) > 0:
            raise ConfigError("mesh.side_length must be positive")
        mat = d["material"]
        if not (0 < mat["E_soft"] and 0 < mat["E_hard"] and 0 < mat["E_min"] < mat["E_max"]):
            raise ConfigError("moduli must be positive with E_min < E_max")
        if not -1 < mat["nu"] < 0.5:
            raise ConfigError("nu must lie in (-1, 0.5)")
        for entry in d["bcs"]:
            if not (isinstance(entry, list) and len(entry) == 3):
                raise ConfigError(f"boundary condition entries are [set, component, value], got {entry!r}")
        s = d["sampling"]
        if s["kind"] not in ("two_phase", "fourier"):
            raise ConfigError(f"sampling.kind must be 'two_phase' or 'fourier', got {s['kind']!r}")
        if not isinstance(s["n_samples"], int) or s["n_samples"] < 1:
            raise ConfigError("sampling.n_samples must be a positive integer")
        if s["kind"] == "fourier":
            self.fourier_template()
        self.trainer_config()
        if d["test_cases"] is not None:
            for case in d["test_cases"]:
                if not isinstance(case, dict) or "name" not in case or not ({"coeffs", "builtin"} & set(case)):
                    raise ConfigError(f"test cases need a name and coeffs or builtin, got {case!r}")
                if "builtin" in case and case["builtin"] not in TEST_CASES:
                    raise ConfigError(f"unknown builtin test case {case['builtin']!r}")

    @property
    def seed(self) -> int:
        return self.data["seed"]

    @property
    def out(self) -> str:
        return self.data["out"]

    @property
    def nu(self) -> float:
        return float(self.data["material"]["nu"])

    def build_mesh(self) -> Mesh:
        m = self.data["mesh"]
        L = float(m.get("side_length", 1.0))
        if "grid_n" in m:
            return build_structured_grid(m["grid_n"], L)
        if "tet_grid_n" in m:
            return build_structured_tet_mesh(m["tet_grid_n"], L)
        return load_tet_mesh(Path(m["tet_mesh_file"]).read_text())

    def build_dof_map(self, mesh: Mesh):
        return build_dof_map(mesh, [tuple(e) for e in self.data["bcs"]])

    def fourier_template(self) -> FourierSpec:
        s, mat = self.data["sampling"], self.data["material"]
        freqs = tuple(tuple(int(f) for f in axis) for axis in s["frequencies"])
        try:
            n = n_fourier_coeffs(freqs, s["layout"])
            return FourierSpec(freqs, np.zeros(n), mat["beta"], mat["E_min"], mat["E_max"], s["layout"])
        except ValueError as exc:
            raise ConfigError(f"invalid Fourier sampling settings: {exc}") from None

    def trainer_config(self):
        t = dict(self.data["trainer"])
        kind = t.pop("kind")
        try:
            if kind == "fol":
                if "input_encoding" not in t:
                    t["input_encoding"] = "fourier_coeffs" if self.data["sampling"]["kind"] == "fourier" else "nodal_E"
                return FolConfig(**t, seed=self.seed, nu=self.nu)
            return DeepONetConfig(**t, seed=self.seed, nu=self.nu)
        except TypeError as exc:
            raise ConfigError(str(exc)) from None

    def test_cases(self) -> list:
        """Named test inputs; defaults depend on the sampling kind."""
        cases = self.data["test_cases"]
        if cases is None:
            if self.data["sampling"]["kind"] == "fourier":
                return [{"name": k, "coeffs": v} for k, v in FOURIER_TEST_VECTORS.items() if k != "mesh_study"]
            return [{"name": k, "builtin": k} for k in TEST_CASES]
        return copy.deepcopy(cases)

    def to_dict(self) -> dict:
        return copy.deepcopy(self.data)

    def hashable(self) -> dict:
        """Settings that determine results; the output directory is excluded."""
        d = self.to_dict()
        d.pop("out")
        return d
