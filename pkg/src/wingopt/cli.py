"""Command line: ``wingopt run`` and ``wingopt verify``."""
from __future__ import annotations

import argparse
import logging
import sys
import time
from pathlib import Path

import numpy as np

from . import config as config_mod
from .coupling import GridBoundaryError
from .fem import strain_energy_density
from .optimizer import Continuation, TABLE_PAYLOAD_FACTORS, optimize
from . import output

logger = logging.getLogger("wingopt")


def _load_config(args):
    overrides = {}
    if getattr(args, "iterations", None) is not None:
        overrides["optimizer"] = {"iterations": args.iterations}
    if getattr(args, "snapshot_period", None) is not None:
        overrides["output"] = {"snapshot_period": args.snapshot_period}
    if args.config:
        return config_mod.load(args.config, overrides)
    return config_mod.preset(args.preset, args.scale, overrides)


def continuation_from(cfg):
    s = cfg.optimizer.schedule
    factors = TABLE_PAYLOAD_FACTORS if s.payloads == "table" else None
    if factors is not None and len(factors) != len(s.betas):
        raise ValueError("tabulated payload factors need exactly ten continuation steps")
    return Continuation(tuple(s.offsets), tuple(s.betas), cfg.constraints.payload,
                        s.relaxation, factors, s.trigger)


class Snapshots:
    """Writes field/wing/span snapshots and tracks the initial summary row."""

    def __init__(self, problem, outdir: Path, period: int, write_fields=True):
        self.problem, self.outdir, self.period = problem, outdir, period
        self.write_fields = write_fields
        self.initial = None
        self.last = None
        self.written = []

    def __call__(self, it, ev, beta, payload, new_step):
        if self.initial is None:
            self.initial = output.summary_row(ev)
        self.last = (it, ev, beta)
        if new_step or (self.period and it % self.period == 0):
            self.write(it, ev, beta)

    def write(self, it, ev, beta):
        if it in self.written:
            return
        self.written.append(it)
        p, d = self.problem, self.outdir
        if self.write_fields:
            fs = ev.fields
            sed = strain_energy_density(ev.u[0], ev.E, p.grid, p.cfg.material.nu)
            output.write_fields_vtk(d / f"fields_{it:04d}.vtk", p.grid,
                                    {"rho_n": fs.rho_n, "rho_e": fs.rho_e, "xi": fs.xi,
                                     "E": ev.E, "strain_energy_density": sed}, it, beta)
        mesh = ev.solutions[0].mesh
        output.write_wing_vtk(d / f"wing_{it:04d}.vtk", mesh,
                              {"cp_cruise": ev.solutions[0].cp, "cp_takeoff": ev.solutions[1].cp},
                              it)
        output.write_span_csv(d / f"span_{it:04d}.csv",
                              output.span_table(ev, p.cfg.wing.half_span))


def cmd_run(args):
    cfg = _load_config(args)
    outdir = Path(args.outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    config_mod.dump(cfg, outdir / "config.yaml")
    np.random.seed(cfg.seed)
    from .problem import WingProblem
    problem = WingProblem(cfg)
    logger.info("case %s: grid %s (%d elements), %d shape variables", cfg.name,
                problem.grid.shape, problem.grid.n_el, problem.n_shape)
    history = output.HistoryWriter(outdir / "history.csv")
    snaps = Snapshots(problem, outdir, cfg.output.snapshot_period, cfg.output.write_fields)

    def callback(rec, ev, new_step):
        history.append(rec)
        snaps(rec.iteration, ev, rec.beta, rec.payload, new_step)

    t_start = time.perf_counter()
    status = 0
    try:
        result = optimize(problem, cfg.optimizer.iterations, continuation_from(cfg),
                          callback=callback)
        final_it, final_ev, beta = snaps.last
        snaps.write(final_it, final_ev, beta)
        rows = {"initial": snaps.initial, "final": output.summary_row(final_ev)}
        extra = {"case": cfg.name, "iterations": final_it,
                 "final_objective": f"{final_ev.f:.6g}",
                 "final_constraints": " ".join(f"{v:.4g}" for v in final_ev.g),
                 "continuation_start": result.continuation.feasible_at,
                 "wall_seconds": f"{time.perf_counter() - t_start:.1f}"}
        if cfg.optimizer.iterations == 0:
            rows = {"initial": snaps.initial}
        output.write_summary(outdir / "summary.txt", rows, extra)
    except GridBoundaryError as exc:
        logger.error("aborting: %s; enlarge or move the structural grid and restart", exc)
        status = 2
        rows = {}
        if snaps.last is not None:
            it, ev, beta = snaps.last
            snaps.write(it, ev, beta)
            rows = {"initial": snaps.initial, f"aborted@{it}": output.summary_row(ev)}
        output.write_summary(outdir / "summary.txt", rows,
                             {"case": cfg.name, "aborted": str(exc)})
    finally:
        history.close()
    return status


def cmd_verify(args):
    cfg = _load_config(args)
    from .verify import run_checks
    checks = run_checks(cfg, quick=args.quick)
    for c in checks:
        print(c.line())
    failed = [c for c in checks if not c.passed]
    print(f"{len(checks) - len(failed)}/{len(checks)} checks passed")
    return 1 if failed else 0


def build_parser():
    ap = argparse.ArgumentParser(prog="wingopt",
                                 description="Coupled wing shape and internal structure optimization")
    sub = ap.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", help="YAML case file (may name a preset)")
        p.add_argument("--preset", default="strut_twist", choices=sorted(config_mod.PRESETS))
        p.add_argument("--scale", default="desk", choices=("desk", "full"))
        p.add_argument("-v", "--verbose", action="store_true")

    run = sub.add_parser("run", help="run an optimization")
    common(run)
    run.add_argument("--outdir", default="run_out")
    run.add_argument("--iterations", type=int)
    run.add_argument("--snapshot-period", type=int, dest="snapshot_period")
    run.set_defaults(func=cmd_run)

    ver = sub.add_parser("verify", help="run the invariant and gradient checks")
    common(ver)
    ver.add_argument("--quick", action="store_true", help="skip the aerodynamic oracles")
    ver.set_defaults(func=cmd_verify)
    return ap


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO,
                        format="%(asctime)s %(name)s %(levelname)s %(message)s")
    logging.getLogger("numba").setLevel(logging.WARNING)
    try:
        return args.func(args)
    except (ValueError, FileNotFoundError) as exc:
        logger.error("%s", exc)
        return 1


if __name__ == "__main__":
    sys.exit(main())
