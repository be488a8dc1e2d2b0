"""File formats: CSV tables, legacy ASCII VTK and JSON checkpoints.

Floats are written with ``repr`` so every value round-trips exactly and
reruns produce byte-identical files.
"""
from __future__ import annotations

import csv
import hashlib
import io
import json
from pathlib import Path

import numpy as np

from . import neural
from .errors import FolError
from .mesh import DofMap, Mesh
from .microstructure import FourierSpec
from .solver import DISPLACEMENT_COMPONENTS, STRESS_COMPONENTS

CHECKPOINT_FORMAT = "folearn-checkpoint"
CHECKPOINT_VERSION = 1


class CheckpointError(FolError, ValueError):
    pass


def canonical_json(obj) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"))


def config_hash(config: dict) -> str:
    return hashlib.sha256(canonical_json(config).encode()).hexdigest()


def write_text(path, text: str) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="\n") as fh:
        fh.write(text)
    return path


def csv_text(header, rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for row in rows:
        w.writerow([repr(float(v)) if isinstance(v, (float, np.floating)) else v for v in row])
    return buf.getvalue()


def solution_csv(solution) -> str:
    """One row per node: coordinates, displacements, E and stresses."""
    mesh = solution.mesh
    dim = mesh.dim
    coords = ("x", "y", "z")[:dim]
    header = ["node", *coords, *DISPLACEMENT_COMPONENTS[dim], "E", *STRESS_COMPONENTS[dim]]
    E = solution.E if solution.E is not None else np.full(mesh.n_nodes, np.nan)
    rows = []
    for k in range(mesh.n_nodes):
        rows.append([k, *mesh.nodes[k], *solution.displacements[k], E[k], *solution.stress[k]])
    return csv_text(header, rows)


def history_csv(history) -> str:
    rows = []
    for k, rec in enumerate(history, start=1):
        if hasattr(rec, "total"):
            rows.append([k, rec.energy_term, rec.dirichlet_term, rec.total])
        else:
            rows.append([k, "", "", float(rec)])
    return csv_text(["epoch", "energy_term", "dirichlet_term", "total"], rows)


# --------------------------------------------------------------------------
# VTK


def _fmt(values) -> str:
    return " ".join(repr(float(v)) for v in values)


def vtk_text(mesh: Mesh, point_scalars: dict | None = None, point_vectors: dict | None = None,
             title: str = "folearn field") -> str:
    """Legacy ASCII VTK: STRUCTURED_GRID for grids, UNSTRUCTURED_GRID otherwise."""
    out = ["# vtk DataFile Version 3.0", title.replace("\n", " ")[:255], "ASCII"]
    pts3 = np.zeros((mesh.n_nodes, 3))
    pts3[:, :mesh.dim] = mesh.nodes
    if mesh.dim == 2 and mesh.is_structured:
        n = mesh.grid_shape[0]
        out += ["DATASET STRUCTURED_GRID", f"DIMENSIONS {n} {n} 1", f"POINTS {mesh.n_nodes} double"]
        out += [_fmt(p) for p in pts3]
    else:
        out += ["DATASET UNSTRUCTURED_GRID", f"POINTS {mesh.n_nodes} double"]
        out += [_fmt(p) for p in pts3]
        n_el, k = mesh.elements.shape
        out.append(f"CELLS {n_el} {n_el * (k + 1)}")
        out += [f"{k} " + " ".join(str(int(i)) for i in conn) for conn in mesh.elements]
        cell_type = 9 if mesh.element_kind == "quad4" else 10
        out.append(f"CELL_TYPES {n_el}")
        out += [str(cell_type)] * n_el
    out.append(f"POINT_DATA {mesh.n_nodes}")
    for name, vec in (point_vectors or {}).items():
        vec = np.asarray(vec, dtype=np.float64).reshape(mesh.n_nodes, -1)
        v3 = np.zeros((mesh.n_nodes, 3))
        v3[:, :vec.shape[1]] = vec
        out.append(f"VECTORS {name} double")
        out += [_fmt(v) for v in v3]
    for name, vals in (point_scalars or {}).items():
        out += [f"SCALARS {name} double 1", "LOOKUP_TABLE default"]
        out += [repr(float(v)) for v in np.asarray(vals, dtype=np.float64)]
    return "\n".join(out) + "\n"


def solution_vtk(solution, title: str = "folearn solution") -> str:
    scalars = {}
    if solution.E is not None:
        scalars["E"] = solution.E
    for k, name in enumerate(STRESS_COMPONENTS[solution.mesh.dim]):
        scalars[name] = solution.stress[:, k]
    return vtk_text(solution.mesh, scalars, {"displacement": solution.displacements}, title)


# --------------------------------------------------------------------------
# checkpoints


def _arr(a):
    return np.asarray(a, dtype=np.float64).tolist()


def params_to_dict(params: neural.MlpParams) -> dict:
    return {
        "type": "subnet_bank" if isinstance(params, neural.SubnetBank) else "mlp",
        "layer_sizes": list(params.layer_sizes),
        "activations": list(params.activations),
        "dtype": str(params.dtype),
        "weights": [_arr(w) for w in params.weights],
        "biases": [_arr(b) for b in params.biases],
    }


def params_from_dict(d: dict) -> neural.MlpParams:
    dtype = np.dtype(d.get("dtype", "float64"))
    cls = neural.SubnetBank if d["type"] == "subnet_bank" else neural.MlpParams
    weights = tuple(np.asarray(w, dtype=dtype) for w in d["weights"])
    biases = tuple(np.asarray(b, dtype=dtype) for b in d["biases"])
    params = cls(weights, biases, tuple(d["activations"]))
    if list(params.layer_sizes) != list(d["layer_sizes"]):
        raise CheckpointError("checkpoint layer sizes disagree with stored weights")
    return params


def adam_to_dict(state: neural.AdamState) -> dict:
    return {"m": _arr(state.m), "v": _arr(state.v), "step": int(state.step),
            "b1": state.b1, "b2": state.b2, "eps": state.eps}


def adam_from_dict(d: dict, dtype) -> neural.AdamState:
    return neural.AdamState(np.asarray(d["m"], dtype=dtype), np.asarray(d["v"], dtype=dtype),
                            int(d["step"]), d["b1"], d["b2"], d["eps"])


def mesh_to_dict(mesh: Mesh) -> dict:
    return {"nodes": _arr(mesh.nodes), "elements": mesh.elements.tolist(),
            "element_kind": mesh.element_kind,
            "node_sets": {k: v.tolist() for k, v in sorted(mesh.node_sets.items())},
            "grid_shape": None if mesh.grid_shape is None else list(mesh.grid_shape)}


def mesh_from_dict(d: dict) -> Mesh:
    gs = d.get("grid_shape")
    return Mesh(np.asarray(d["nodes"], dtype=np.float64), np.asarray(d["elements"], dtype=np.int64),
                d["element_kind"], {k: np.asarray(v, dtype=np.int64) for k, v in d["node_sets"].items()},
                None if gs is None else tuple(gs))


def dof_map_to_dict(dm: DofMap) -> dict:
    return {"n_nodes": dm.n_nodes, "dofs_per_node": dm.dofs_per_node,
            "prescribed_dofs": dm.prescribed_dofs.tolist(), "prescribed_values": _arr(dm.prescribed_values)}


def dof_map_from_dict(d: dict) -> DofMap:
    dofs = np.asarray(d["prescribed_dofs"], dtype=np.int64)
    values = np.asarray(d["prescribed_values"], dtype=np.float64)
    free = np.setdiff1d(np.arange(d["n_nodes"] * d["dofs_per_node"]), dofs)
    return DofMap(d["n_nodes"], d["dofs_per_node"], dofs, values, free)


def fourier_to_dict(spec: FourierSpec | None):
    if spec is None:
        return None
    return {"frequencies": [list(f) for f in spec.frequencies], "beta": spec.beta,
            "E_min": spec.E_min, "E_max": spec.E_max, "layout": spec.layout}


def fourier_from_dict(d) -> FourierSpec | None:
    if d is None:
        return None
    from .microstructure import n_fourier_coeffs
    freqs = tuple(tuple(f) for f in d["frequencies"])
    return FourierSpec(freqs, np.zeros(n_fourier_coeffs(freqs, d["layout"])), d["beta"],
                       d["E_min"], d["E_max"], d["layout"])


def _rng_state_to_json(state):
    return json.loads(json.dumps(state))


def fol_checkpoint(model, run_config: dict | None = None) -> dict:
    cfg = model.config.to_dict()
    return {
        "format": CHECKPOINT_FORMAT, "version": CHECKPOINT_VERSION, "kind": "fol",
        "config": cfg, "config_hash": config_hash(run_config if run_config is not None else cfg),
        "network": params_to_dict(model.params),
        "optimizer": adam_to_dict(model.opt_state),
        "rng_state": _rng_state_to_json(model.rng_state),
        "epochs_done": model.epochs_done,
        "history": [[h.energy_term, h.dirichlet_term, h.total] for h in model.history],
        "input_encoding": model.config.input_encoding, "bc_mode": model.config.mode,
        "fourier": fourier_to_dict(model.fourier),
        "mesh": mesh_to_dict(model.mesh), "dof_map": dof_map_to_dict(model.dof_map),
        "output_scale": model.output_scale,
        "input_normalization": None if model.input_shift is None else
        {"shift": _arr(model.input_shift), "scale": _arr(model.input_scale)},
    }


def deeponet_checkpoint(model, run_config: dict | None = None) -> dict:
    cfg = model.config.to_dict()
    return {
        "format": CHECKPOINT_FORMAT, "version": CHECKPOINT_VERSION, "kind": "deeponet",
        "config": cfg, "config_hash": config_hash(run_config if run_config is not None else cfg),
        "branch": params_to_dict(model.params.branch), "trunk": params_to_dict(model.params.trunk),
        "p": model.params.p,
        "optimizer": {"branch": adam_to_dict(model.opt_branch), "trunk": adam_to_dict(model.opt_trunk)},
        "rng_state": _rng_state_to_json(model.rng_state),
        "epochs_done": model.epochs_done, "history": list(map(float, model.history)),
        "mesh": mesh_to_dict(model.mesh),
    }


def save_checkpoint(path, checkpoint: dict) -> Path:
    return write_text(path, canonical_json(checkpoint) + "\n")


def load_checkpoint(path):
    """Read a checkpoint file and rebuild the FOL or DeepONet model."""
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"checkpoint not found: {path}")
    try:
        d = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise CheckpointError(f"{path} is not valid JSON: {exc}") from None
    if d.get("format") != CHECKPOINT_FORMAT:
        raise CheckpointError(f"{path} is not a folearn checkpoint")
    if d.get("version") != CHECKPOINT_VERSION:
        raise CheckpointError(f"unsupported checkpoint version {d.get('version')}")
    mesh = mesh_from_dict(d["mesh"])
    if d["kind"] == "fol":
        from .fol import FolConfig, FolModel, LossBreakdown
        params = params_from_dict(d["network"])
        norm = d["input_normalization"]
        return FolModel(FolConfig(**d["config"]), mesh, dof_map_from_dict(d["dof_map"]), params,
                        adam_from_dict(d["optimizer"], params.dtype), fourier_from_dict(d["fourier"]),
                        d["rng_state"], d["epochs_done"], [LossBreakdown(*h) for h in d["history"]],
                        output_scale=d["output_scale"],
                        input_shift=None if norm is None else np.asarray(norm["shift"]),
                        input_scale=None if norm is None else np.asarray(norm["scale"]))
    if d["kind"] == "deeponet":
        from .deeponet import DeepONetConfig, DeepONetModel, DeepONetParams
        branch, trunk = params_from_dict(d["branch"]), params_from_dict(d["trunk"])
        return DeepONetModel(DeepONetConfig(**d["config"]), mesh, DeepONetParams(branch, trunk, d["p"]),
                             adam_from_dict(d["optimizer"]["branch"], branch.dtype),
                             adam_from_dict(d["optimizer"]["trunk"], trunk.dtype),
                             d["rng_state"], d["epochs_done"], list(d["history"]))
    raise CheckpointError(f"unknown checkpoint kind {d['kind']!r}")
