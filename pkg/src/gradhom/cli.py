"""
``gradhom`` command-line interface.

Every command writes its outputs below ``--out-dir`` together with a
``<command>.manifest.json`` (``manifest.json`` for ``pipeline``) holding the
tool version, the canonical config and its hash, residuals and the sha256 of
every output.  Wall-clock times go to a separate ``timings.json`` so that
manifests of identical reruns are byte-identical.

Exit codes: 0 ok, 2 configuration / input error, 3 solver non-convergence,
4 coercivity failure.
"""

import argparse
import hashlib
import logging
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__
from .cell_solver import SolverParams, residual, solve_all_hs1, solve_all_hs2
from .config import build_field_located, load_cell_spec, load_pipeline_config
from .effective import (
    EffectiveTensors,
    assemble_A_eff,
    assemble_A_mean,
    assemble_K_eff,
    assemble_K_mean,
    verify_effective,
)
from .errors import CoercivityError, ConfigError, GradhomError, SolverError
from .io import (
    canonical_json,
    load_correctors,
    load_field,
    read_csv,
    save_correctors,
    save_field,
    sha256_file,
    write_csv,
    write_json,
)
from .macro1d import convergence_study, parse_load
from .scaling import HS1, normalize_regime, scaling_report
from .unfolding import (
    MacroGrid,
    decompose_domain,
    gradient_compatibility_probe,
    integral_identity_check,
    product_and_norm_checks,
    two_scale_convergence_probe,
)

log = logging.getLogger("gradhom")

EXIT_OK, EXIT_CONFIG, EXIT_SOLVER, EXIT_COERCIVITY = 0, 2, 3, 4
TABLE_COLUMNS = ["epsilon", "l2_error", "h1_error", "energy_fine", "energy_homog", "stability_const"]
RNG_NAME = "numpy.random.default_rng (PCG64)"


class StageError(GradhomError):
    def __init__(self, stage, exc):
        super().__init__(f"stage {stage!r} failed: {exc}")
        self.stage = stage
        self.cause = exc


class Run:
    """Collects outputs, residuals and timings of one command."""

    def __init__(self, command, args, config):
        self.command = command
        self.out_dir = Path(args.out_dir)
        self.out_dir.mkdir(parents=True, exist_ok=True)
        self.config = config
        self.seed = args.seed
        self.outputs = []
        self.residuals = {}
        self.timings = {}
        self.extra = {}

    def path(self, name):
        p = Path(name)
        return p if p.is_absolute() else self.out_dir / p

    def record(self, path):
        self.outputs.append(Path(path))

    def stage(self, name):
        run = self

        class _Stage:
            def __enter__(self):
                self.t0 = time.perf_counter()
                log.info("stage %s", name)

            def __exit__(self, et, ev, tb):
                run.timings[name] = time.perf_counter() - self.t0
                if ev is not None and not isinstance(ev, StageError) and isinstance(ev, Exception):
                    raise StageError(name, ev) from ev
                return False

        return _Stage()

    def finish(self, manifest_name=None):
        manifest_name = manifest_name or f"{self.command}.manifest.json"
        timings_name = manifest_name.replace("manifest", "timings")
        cfg_text = canonical_json(self.config)
        outputs = {}
        for p in self.outputs:
            try:
                key = str(p.relative_to(self.out_dir))
            except ValueError:
                key = str(p)
            outputs[key] = sha256_file(p)
        manifest = {
            "tool": "gradhom",
            "version": __version__,
            "command": self.command,
            "config": self.config,
            "config_sha256": hashlib.sha256(cfg_text.encode()).hexdigest(),
            "seed": self.seed,
            "rng": RNG_NAME,
            "residuals": self.residuals,
            "outputs": outputs,
            "timings_file": timings_name,
            **self.extra,
        }
        write_json(self.out_dir / timings_name, {"command": self.command, "wall_seconds": self.timings})
        write_json(self.out_dir / manifest_name, manifest)
        return manifest


def _float_list(text):
    try:
        return [float(v) for v in str(text).split(",") if v.strip()]
    except ValueError as exc:
        raise ConfigError(f"bad number list {text!r}") from exc


def _solver_params(args, rel_tol=None, max_iter=None):
    return SolverParams(rel_tol=rel_tol if rel_tol is not None else 1e-9,
                        max_iter=max_iter if max_iter is not None else 5000,
                        threads=args.threads)


# --------------------------------------------------------------------------- commands


def cmd_make_cell(args):
    spec, text = load_cell_spec(args.spec, with_text=True)
    run = Run("make-cell", args, spec.model_dump(exclude_none=True))
    with run.stage("make-cell"):
        field_ = build_field_located(spec, text, str(args.spec))
        out = run.path(args.out)
        save_field(out, field_)
        run.record(out)
    run.finish()
    print(out)


def _eff_tensors(field_, corr, regime):
    if regime == HS1:
        return EffectiveTensors(K_eff=assemble_K_eff(field_, corr), K_mean=assemble_K_mean(field_),
                                A_mean=assemble_A_mean(field_), regime=HS1)
    return EffectiveTensors(K_mean=assemble_K_mean(field_), A_eff=assemble_A_eff(field_, corr),
                            A_mean=assemble_A_mean(field_), regime=regime)


def cmd_scale_report(args):
    run = Run("scale-report", args, {"cell": str(args.cell), "epsilon": args.epsilon,
                                     "pprime": args.pprime, "qprime": args.qprime, "tol": args.tol})
    with run.stage("scale-report"):
        field_ = load_field(args.cell)
        rep = scaling_report(field_, args.epsilon, args.pprime, args.qprime, args.tol)
        out = run.path(args.out)
        write_json(out, rep.to_dict())
        run.record(out)
    run.finish()
    sys.stdout.write(canonical_json(rep.to_dict()))


def _solve(field_, regime, params):
    return solve_all_hs1(field_, params) if regime == HS1 else solve_all_hs2(field_, params)


def cmd_solve_cell(args):
    regime = normalize_regime(args.regime)
    run = Run("solve-cell", args, {"cell": str(args.cell), "regime": regime, "tol": args.tol,
                                   "max_iter": args.max_iter})
    with run.stage("solve-cell"):
        field_ = load_field(args.cell)
        corr = _solve(field_, regime, _solver_params(args, args.tol, args.max_iter))
        out = run.path(args.out)
        save_correctors(out, corr)
        run.record(out)
        run.residuals = {",".join(map(str, k)): v for k, v in sorted(corr.residuals.items())}
    run.finish()
    print(out)


def cmd_effective(args):
    regime = normalize_regime(args.regime)
    run = Run("effective", args, {"cell": str(args.cell), "correctors": str(args.correctors),
                                  "regime": regime})
    with run.stage("effective"):
        field_ = load_field(args.cell)
        corr = load_correctors(args.correctors)
        if corr.regime != regime:
            raise ConfigError(f"correctors were computed for {corr.regime}, not {regime}")
        eff = _eff_tensors(field_, corr, regime)
        verify_effective(eff, field_, seed=args.seed)
        eff.diagnostics["max_residual"] = residual(field_, corr, regime)
        out = run.path(args.out)
        write_json(out, eff.to_dict())
        run.record(out)
    run.finish()
    print(out)


def cmd_converge(args):
    regime = normalize_regime(args.regime)
    eps = _float_list(args.eps)
    run = Run("converge", args, {"cell": str(args.cell), "regime": regime, "eps": eps, "g": args.g,
                                 "elements_per_period": args.elements_per_period})
    with run.stage("converge"):
        field_ = load_field(args.cell)
        rows, scalars = convergence_study(field_, regime, eps, parse_load(args.g),
                                          args.elements_per_period, threads=args.threads)
        out = run.path(args.out)
        write_csv(out, rows, TABLE_COLUMNS)
        run.record(out)
        run.extra["effective_scalars"] = scalars
    run.finish()
    print(out)


def unfold_report(d, eps_list, n_y, seed):
    rng = np.random.default_rng(seed)
    checks = []
    for eps in eps_list:
        g = MacroGrid(d, eps, n_y)
        phi = rng.standard_normal(g.shape)
        psi = rng.standard_normal(g.shape)
        lhs, rhs, defect = integral_identity_check(phi, g)
        pn = product_and_norm_checks(phi, psi, g)
        cells, lam = decompose_domain(g)
        checks.append({"epsilon": eps, "n_cells": int(len(cells)), "n_lambda_nodes": int(len(lam)),
                       "integral_lhs": lhs, "integral_rhs": rhs, "integral_defect": defect,
                       "phi_l1": float(np.sum(np.abs(phi)) * g.h**d), **pn})
    psi_fn = lambda y: np.sin(2 * np.pi * y[0])  # noqa: E731
    two_scale = two_scale_convergence_probe(psi_fn, eps_list, a=lambda x: x[0], n_y=n_y, d=d)
    grad = gradient_compatibility_probe(lambda x: np.sin(np.pi * x),
                                        lambda y: np.sin(2 * np.pi * y) / (4 * np.pi**2),
                                        eps_list, n_y) if d == 1 else []
    return {"d": d, "n_y": n_y, "checks": checks, "two_scale": two_scale, "gradient": grad}


def cmd_unfold_check(args):
    eps = _float_list(args.eps)
    run = Run("unfold-check", args, {"d": args.d, "eps": eps, "n_y": args.n_y})
    with run.stage("unfold-check"):
        rep = unfold_report(args.d, eps, args.n_y, args.seed)
        out = run.path(args.out)
        write_json(out, rep)
        run.record(out)
    run.finish()
    print(out)


def cmd_pipeline(args):
    cfg, text = load_pipeline_config(args.config, with_text=True)
    regime = normalize_regime(cfg.regime)
    if args.seed_given:
        cfg = cfg.model_copy(update={"seed": args.seed})
    args.seed = cfg.seed
    run = Run("pipeline", args, cfg.model_dump(exclude_none=True))
    params = SolverParams(rel_tol=cfg.solver.rel_tol, max_iter=cfg.solver.max_iter, threads=args.threads)
    with run.stage("make-cell"):
        field_ = build_field_located(cfg.cell, text, str(args.config), ("cell",))
        p = run.path("cell.field")
        save_field(p, field_)
        run.record(p)
    with run.stage("scale-report"):
        rep = scaling_report(field_, cfg.epsilon, cfg.pprime, cfg.qprime)
        p = run.path("scaling.json")
        write_json(p, rep.to_dict())
        run.record(p)
        if rep.regime != regime:
            log.warning("configured regime %s differs from the classified regime %s", regime, rep.regime)
    with run.stage("solve-cell"):
        corr = _solve(field_, regime, params)
        p = run.path("correctors.bin")
        save_correctors(p, corr)
        run.record(p)
        run.residuals = {",".join(map(str, k)): v for k, v in sorted(corr.residuals.items())}
    with run.stage("effective"):
        eff = _eff_tensors(field_, corr, regime)
        verify_effective(eff, field_, seed=cfg.seed)
        eff.diagnostics["max_residual"] = max(corr.residuals.values(), default=0.0)
        p = run.path("eff.json")
        write_json(p, eff.to_dict())
        run.record(p)
    if cfg.converge is not None:
        with run.stage("converge"):
            if field_.d != 1:
                raise ConfigError("the convergence study needs a 1D cell")
            rows, scalars = convergence_study(field_, regime, cfg.converge.eps, parse_load(cfg.converge.load),
                                              cfg.converge.elements_per_period, params=params,
                                              threads=args.threads)
            p = run.path("table.csv")
            write_csv(p, rows, TABLE_COLUMNS)
            run.record(p)
            run.extra["effective_scalars"] = scalars
    run.finish("manifest.json")
    print(run.out_dir / "manifest.json")


def export_plotdata(table_path, out_path):
    columns, rows = read_csv(table_path)
    if "epsilon" not in columns:
        raise ConfigError(f"{table_path}: missing 'epsilon' column")
    metrics = [c for c in columns if c != "epsilon"]
    tidy = [{"epsilon": r["epsilon"], "metric": m, "value": r[m]} for r in rows for m in metrics]
    write_csv(out_path, tidy, ["epsilon", "metric", "value"])
    return tidy


def cmd_export_plotdata(args):
    run = Run("export-plotdata", args, {"table": str(args.table)})
    with run.stage("export-plotdata"):
        out = run.path(args.out)
        export_plotdata(args.table, out)
        run.record(out)
    run.finish()
    print(out)


# --------------------------------------------------------------------------- parser


def build_parser():
    p = argparse.ArgumentParser(prog="gradhom", description="Homogenization of chiral second-gradient media")
    p.add_argument("--version", action="version", version=f"gradhom {__version__}")
    p.add_argument("--seed", type=int, default=None, help="seed for all random sampling (default 0)")
    p.add_argument("--threads", type=int, default=1, help="worker threads for independent solves")
    p.add_argument("--out-dir", default=".", help="directory for outputs and manifests")
    p.add_argument("--log-level", default="WARNING", choices=["DEBUG", "INFO", "WARNING", "ERROR"])
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("make-cell", help="build a coefficient field from a JSON cell spec")
    s.add_argument("--spec", required=True)
    s.add_argument("--out", default="cell.field")
    s.set_defaults(func=cmd_make_cell)

    s = sub.add_parser("scale-report", help="tensor maxima, intrinsic lengths and regime")
    s.add_argument("--cell", required=True)
    s.add_argument("--epsilon", type=float, required=True)
    s.add_argument("--pprime", type=float, default=2.0)
    s.add_argument("--qprime", type=float, default=2.0)
    s.add_argument("--tol", type=float, default=float(np.log(3.0)))
    s.add_argument("--out", default="scaling.json")
    s.set_defaults(func=cmd_scale_report)

    s = sub.add_parser("solve-cell", help="solve all correctors of a regime")
    s.add_argument("--cell", required=True)
    s.add_argument("--regime", required=True, choices=["hs1", "hs2", "HS1", "HS2"])
    s.add_argument("--tol", type=float, default=1e-9)
    s.add_argument("--max-iter", type=int, default=5000)
    s.add_argument("--out", default="correctors.bin")
    s.set_defaults(func=cmd_solve_cell)

    s = sub.add_parser("effective", help="assemble and verify effective tensors")
    s.add_argument("--cell", required=True)
    s.add_argument("--correctors", required=True)
    s.add_argument("--regime", required=True, choices=["hs1", "hs2", "HS1", "HS2"])
    s.add_argument("--out", default="eff.json")
    s.set_defaults(func=cmd_effective)

    s = sub.add_parser("converge", help="1D fine vs homogenized convergence table")
    s.add_argument("--cell", required=True)
    s.add_argument("--regime", required=True, choices=["hs1", "hs2", "HS1", "HS2"])
    s.add_argument("--eps", required=True, help="comma separated, e.g. 0.125,0.0625")
    s.add_argument("--g", default="const:1", help="load: const:c or sin:k")
    s.add_argument("--elements-per-period", type=int, default=16)
    s.add_argument("--out", default="table.csv")
    s.set_defaults(func=cmd_converge)

    s = sub.add_parser("unfold-check", help="discrete unfolding identities and probes")
    s.add_argument("--d", type=int, default=1, choices=[1, 2, 3])
    s.add_argument("--eps", required=True)
    s.add_argument("--n-y", type=int, default=16)
    s.add_argument("--out", default="unfold.json")
    s.set_defaults(func=cmd_unfold_check)

    s = sub.add_parser("pipeline", help="make-cell, scale-report, solve-cell, effective, converge")
    s.add_argument("--config", required=True)
    s.set_defaults(func=cmd_pipeline)

    s = sub.add_parser("export-plotdata", help="long-format CSV (epsilon, metric, value)")
    s.add_argument("--table", required=True)
    s.add_argument("--out", default="plotdata.csv")
    s.set_defaults(func=cmd_export_plotdata)
    return p


def _exit_code(exc):
    cause = exc.cause if isinstance(exc, StageError) else exc
    if isinstance(cause, SolverError):
        return EXIT_SOLVER
    if isinstance(cause, CoercivityError):
        return EXIT_COERCIVITY
    return EXIT_CONFIG


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=getattr(logging, args.log_level), format="%(levelname)s %(name)s: %(message)s")
    args.seed_given = args.seed is not None
    if args.seed is None:
        args.seed = 0
    if args.threads < 1:
        parser.error("--threads must be >= 1")
    try:
        args.func(args)
    except (GradhomError, OSError) as exc:
        sys.stderr.write(f"gradhom {args.command}: {exc}\n")
        return _exit_code(exc)
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
