"""Command-line entry point: ``folearn <command> [options]``.

Every command writes its outputs plus a ``manifest.json`` that echoes the
resolved configuration, its hash and the SHA-256 of each output file.
Exit status is 0 on success and 1 with a one-line diagnostic otherwise.
"""
from __future__ import annotations

import argparse
import csv
import hashlib
import json
import logging
import os
import sys
from pathlib import Path

log = logging.getLogger("folearn")

COMMANDS = ("generate", "solve", "train-fol", "train-deeponet", "evaluate", "export")


def _parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="folearn", description="Finite operator learning for 2D/3D elasticity")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, config_required=True):
        sp.add_argument("--config", required=config_required, help="JSON run configuration")
        sp.add_argument("--seed", type=int, default=None, help="override the configured seed")
        sp.add_argument("--out", default=None, help="output directory (overrides config)")
        sp.add_argument("--threads", type=int, default=None, help="cap on worker threads")
        sp.add_argument("-v", "--verbose", action="store_true")

    common(sub.add_parser("generate", help="generate training samples"))
    sp = sub.add_parser("solve", help="reference FEM solutions for a sample file")
    common(sp)
    sp.add_argument("--samples", required=True)
    sp = sub.add_parser("train-fol", help="train a FOL network")
    common(sp)
    sp.add_argument("--samples", required=True)
    sp.add_argument("--resume", default=None, help="checkpoint to continue from")
    sp.add_argument("--epochs", type=int, default=None, help="epochs to run (default: config)")
    sp = sub.add_parser("train-deeponet", help="train the DeepONet baseline")
    common(sp)
    sp.add_argument("--samples", required=True)
    sp.add_argument("--solutions", default=None, help="'solve' output directory or its solutions/ subdirectory (solved on demand if absent)")
    sp.add_argument("--epochs", type=int, default=None)
    sp = sub.add_parser("evaluate", help="compare a checkpoint with FEM on test cases")
    common(sp)
    sp.add_argument("--checkpoint", required=True)
    sp = sub.add_parser("export", help="write VTK files of the sampled modulus fields")
    common(sp)
    sp.add_argument("--samples", required=True)
    return p


def _set_threads(n):
    if n is None:
        return
    if n < 1:
        raise ValueError("--threads must be >= 1")
    for var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS", "NUMBA_NUM_THREADS"):
        os.environ[var] = str(n)


def _sha256(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def _write_manifest(out: Path, command: str, argv, cfg, outputs, extra=None) -> Path:
    from . import io as fio
    from importlib.metadata import PackageNotFoundError, version

    try:
        pkg_version = version("artifact")
    except PackageNotFoundError:
        pkg_version = "unknown"
    data = cfg.to_dict()
    manifest = {
        "command": command,
        "argv": list(argv),
        "config": data,
        "config_hash": fio.config_hash(cfg.hashable()),
        "seed": cfg.seed,
        "package_version": pkg_version,
        "inputs": extra or {},
        "outputs": {str(p.relative_to(out)): _sha256(p) for p in sorted(outputs)},
    }
    return fio.write_text(out / "manifest.json", json.dumps(manifest, indent=2, sort_keys=True) + "\n")


def _load_samples(path):
    from .microstructure import SampleSet

    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"sample file not found: {path}")
    return SampleSet.from_csv(path.read_text())


def _input_fields(cfg, mesh, samples):
    """Nodal modulus vector for every sample."""
    import numpy as np

    from .microstructure import fourier_values

    if samples.kind == "nodal_E":
        if samples.values.shape[1] != mesh.n_nodes:
            raise ValueError(f"samples have {samples.values.shape[1]} values, mesh has {mesh.n_nodes} nodes")
        return samples.values
    tmpl = cfg.fourier_template()
    return np.stack([fourier_values(tmpl.with_coeffs(c), mesh.nodes) for c in samples.values])


def _input_info(path) -> dict:
    p = Path(path)
    return {"path": str(p), "sha256": _sha256(p)}


# --------------------------------------------------------------------------
# commands


def cmd_generate(cfg) -> list:
    from .microstructure import generate_two_phase_samples, sample_fourier_coeffs
    from . import io as fio

    s, mat, mesh_cfg = cfg.data["sampling"], cfg.data["material"], cfg.data["mesh"]
    out = Path(cfg.out)
    if s["kind"] == "two_phase":
        if "grid_n" not in mesh_cfg:
            raise ValueError("two-phase sampling needs a structured 2D grid (mesh.grid_n)")
        samples = generate_two_phase_samples(s["n_samples"], mesh_cfg["grid_n"], mat["E_hard"],
                                             mat["E_soft"], seed=cfg.seed)
    else:
        tmpl = cfg.fourier_template()
        samples = sample_fourier_coeffs(s["n_samples"], s["ranges"], seed=cfg.seed, n_coeffs=len(tmpl.coeffs))
    return [fio.write_text(out / "samples.csv", samples.to_csv())]


def cmd_solve(cfg, samples_path) -> list:
    from .microstructure import ElasticityField
    from .solver import solve_reference
    from . import io as fio

    samples = _load_samples(samples_path)
    mesh = cfg.build_mesh()
    dof_map = cfg.build_dof_map(mesh)
    E = _input_fields(cfg, mesh, samples)
    out = Path(cfg.out)
    outputs, failures = [], []
    for sid, e in zip(samples.ids, E):
        try:
            sol = solve_reference(mesh, dof_map, ElasticityField(mesh, e, cfg.nu))
        except Exception as exc:  # per-sample failures are reported, the run continues
            failures.append([sid, f"{type(exc).__name__}: {exc}"])
            log.warning("sample %s failed: %s", sid, exc)
            continue
        outputs.append(fio.write_text(out / "solutions" / f"{sid}.csv", fio.solution_csv(sol)))
        outputs.append(fio.write_text(out / "solutions" / f"{sid}.vtk", fio.solution_vtk(sol, sid)))
    outputs.append(fio.write_text(out / "failures.csv", fio.csv_text(["id", "error"], failures)))
    return outputs


def cmd_train_fol(cfg, samples_path, resume=None, epochs=None) -> list:
    from .errors import NonFiniteLossError
    from .fol import FolConfig, train_fol
    from . import io as fio

    samples = _load_samples(samples_path)
    mesh = cfg.build_mesh()
    dof_map = cfg.build_dof_map(mesh)
    fol_cfg = cfg.trainer_config()
    if not isinstance(fol_cfg, FolConfig):
        raise ValueError("config trainer.kind is not 'fol'")
    expected = "nodal_E" if fol_cfg.input_encoding == "nodal_E" else "fourier_coeffs"
    if samples.kind != expected:
        raise ValueError(f"{fol_cfg.input_encoding} training needs {expected} samples, got {samples.kind}")
    fourier = cfg.fourier_template() if fol_cfg.input_encoding == "fourier_coeffs" else None
    model = None
    if resume is not None:
        model = fio.load_checkpoint(resume)
        if model.config != fol_cfg:
            raise ValueError("checkpoint was trained with a different trainer configuration")
    out = Path(cfg.out)
    try:
        model, _ = train_fol(samples, mesh, dof_map, fol_cfg, fourier=fourier, model=model, epochs=epochs)
    except NonFiniteLossError as exc:
        k = list(samples.ids).index(exc.sample_id)
        dump = {"error": str(exc), "sample_id": exc.sample_id, "epoch": exc.epoch,
                "sample_values": samples.values[k].tolist(), "config": cfg.to_dict()}
        fio.write_text(out / "nonfinite_dump.json", json.dumps(dump, indent=2, sort_keys=True) + "\n")
        raise
    return [fio.save_checkpoint(out / "checkpoint.json", fio.fol_checkpoint(model, cfg.hashable())),
            fio.write_text(out / "history.csv", fio.history_csv(model.history))]


def _read_solution_csv(path, mesh):
    import numpy as np

    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    header = rows[0]
    cols = [header.index(c) for c in ("u", "v")]
    U = np.array([[float(r[c]) for c in cols] for r in rows[1:]])
    if U.shape[0] != mesh.n_nodes:
        raise ValueError(f"{path}: {U.shape[0]} rows for {mesh.n_nodes} nodes")
    return U.ravel()


def cmd_train_deeponet(cfg, samples_path, solutions_dir=None, epochs=None) -> list:
    import numpy as np

    from .deeponet import DeepONetConfig, train_deeponet
    from .microstructure import ElasticityField, SampleSet
    from .solver import solve_reference
    from . import io as fio

    samples = _load_samples(samples_path)
    mesh = cfg.build_mesh()
    dof_map = cfg.build_dof_map(mesh)
    don_cfg = cfg.trainer_config()
    if not isinstance(don_cfg, DeepONetConfig):
        raise ValueError("config trainer.kind is not 'deeponet'")
    E = _input_fields(cfg, mesh, samples)
    if solutions_dir is not None:
        sol_dir = Path(solutions_dir)
        if (sol_dir / "solutions").is_dir():
            sol_dir = sol_dir / "solutions"
        targets = np.stack([_read_solution_csv(sol_dir / f"{sid}.csv", mesh)
                            for sid in samples.ids])
    else:
        targets = np.stack([solve_reference(mesh, dof_map, ElasticityField(mesh, e, cfg.nu)).U for e in E])
    nodal = SampleSet(E, "nodal_E", samples.seed, list(samples.ids))
    model, _ = train_deeponet(nodal, targets, mesh, don_cfg, epochs=epochs)
    out = Path(cfg.out)
    return [fio.save_checkpoint(out / "checkpoint.json", fio.deeponet_checkpoint(model, cfg.hashable())),
            fio.write_text(out / "history.csv", fio.history_csv(model.history))]


def cmd_evaluate(cfg, checkpoint) -> list:
    import numpy as np

    from . import deeponet, fol
    from . import io as fio
    from .metrics import compare_fields
    from .microstructure import ElasticityField, inclusion_microstructure
    from .solver import SolutionField, solve_reference

    model = fio.load_checkpoint(checkpoint)
    mesh = model.mesh
    dof_map = model.dof_map if isinstance(model, fol.FolModel) else cfg.build_dof_map(mesh)
    mat = cfg.data["material"]
    out = Path(cfg.out)
    outputs, summary = [], []
    for case in cfg.test_cases():
        name = case["name"]
        fourier_in = isinstance(model, fol.FolModel) and model.config.input_encoding == "fourier_coeffs"
        if "coeffs" in case:
            if not fourier_in:
                raise ValueError(f"test case {name!r} gives Fourier coefficients but the model reads nodal moduli")
            x = np.asarray(case["coeffs"], dtype=np.float64)
        else:
            x = inclusion_microstructure(mesh, case["builtin"], mat["E_hard"], mat["E_soft"])
            if fourier_in:
                from .microstructure import fit_fourier_coeffs
                x = fit_fourier_coeffs(ElasticityField(mesh, x, cfg.nu), model.fourier).coeffs
        if isinstance(model, fol.FolModel):
            pred = fol.predict(model, x)
        else:
            pred = deeponet.predict(model, x)
        ref = solve_reference(mesh, dof_map, ElasticityField(mesh, pred.E, model.config.nu))
        report = compare_fields(pred, ref)
        diff = SolutionField(mesh, np.abs(pred.U - ref.U), np.abs(pred.stress - ref.stress), pred.E)
        d = out / name
        outputs.append(fio.write_text(d / "report.csv", report.to_csv()))
        outputs.append(fio.write_text(d / "report.txt", report.to_text() + "\n"))
        outputs.append(fio.write_text(d / "prediction.vtk", fio.solution_vtk(pred, f"{name} prediction")))
        outputs.append(fio.write_text(d / "reference.vtk", fio.solution_vtk(ref, f"{name} reference")))
        outputs.append(fio.write_text(d / "difference.vtk", fio.solution_vtk(diff, f"{name} |difference|")))
        for c in report.components:
            summary.append([name, c, report.err_mse[c], report.err_max[c], report.homogenized_rel[c]])
    outputs.append(fio.write_text(out / "summary.csv", fio.csv_text(
        ["case", "component", "err_mse", "err_max", "homogenized_rel"], summary)))
    return outputs


def cmd_export(cfg, samples_path) -> list:
    from .solver import SolutionField
    from . import io as fio

    samples = _load_samples(samples_path)
    mesh = cfg.build_mesh()
    E = _input_fields(cfg, mesh, samples)
    out = Path(cfg.out)
    return [fio.write_text(out / "fields" / f"{sid}.vtk", fio.vtk_text(mesh, {"E": e}, None, sid))
            for sid, e in zip(samples.ids, E)]


# --------------------------------------------------------------------------


def main(argv=None) -> int:
    argv = sys.argv[1:] if argv is None else list(argv)
    args = _parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        _set_threads(args.threads)
        from .config import RunConfig

        cfg = RunConfig.load(args.config, seed=args.seed, out=args.out)
        inputs = {}
        if args.command == "generate":
            outputs = cmd_generate(cfg)
        elif args.command == "solve":
            inputs["samples"] = _input_info(args.samples) if Path(args.samples).is_file() else args.samples
            outputs = cmd_solve(cfg, args.samples)
        elif args.command == "train-fol":
            inputs["samples"] = _input_info(args.samples) if Path(args.samples).is_file() else args.samples
            if args.resume:
                inputs["resume"] = _input_info(args.resume) if Path(args.resume).is_file() else args.resume
            inputs["epochs"] = args.epochs
            outputs = cmd_train_fol(cfg, args.samples, args.resume, args.epochs)
        elif args.command == "train-deeponet":
            inputs["samples"] = _input_info(args.samples) if Path(args.samples).is_file() else args.samples
            inputs["solutions"] = args.solutions
            inputs["epochs"] = args.epochs
            outputs = cmd_train_deeponet(cfg, args.samples, args.solutions, args.epochs)
        elif args.command == "evaluate":
            inputs["checkpoint"] = _input_info(args.checkpoint) if Path(args.checkpoint).is_file() else args.checkpoint
            outputs = cmd_evaluate(cfg, args.checkpoint)
        else:
            inputs["samples"] = _input_info(args.samples) if Path(args.samples).is_file() else args.samples
            outputs = cmd_export(cfg, args.samples)
        _write_manifest(Path(cfg.out), args.command, argv, cfg, outputs, inputs)
    except Exception as exc:
        msg = str(exc).splitlines()[0] if str(exc) else type(exc).__name__
        print(f"folearn {args.command}: error: {type(exc).__name__}: {msg}", file=sys.stderr)
        if args.verbose:
            raise
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
