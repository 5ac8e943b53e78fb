"""Fast self-checks of the solver chain, run by ``wingopt verify``.

Each check returns a ``Check`` with the measured error and its tolerance.
Checks run on a coarse copy of the configured case so the suite finishes
in a few minutes.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from . import aero, config, coupling
from .fields import PDEFilter, heaviside, heaviside_derivative
from .geometry import AirfoilSection, Wing, WingSpec, build_panel_mesh

logger = logging.getLogger(__name__)


@dataclass
class Check:
    name: str
    error: float
    tol: float

    @property
    def passed(self):
        return bool(np.isfinite(self.error) and self.error <= self.tol)

    def line(self):
        return (f"{'PASS' if self.passed else 'FAIL'}  {self.name:<34} "
                f"error {self.error:.3e}  tol {self.tol:.1e}")


def coarse_config(cfg: config.CaseConfig, n_sections=6, n_chord=20, **overrides):
    """Same case on a 50 mm grid with a small panel mesh and a tight solver tolerance."""
    data = config._merge(config.to_dict(cfg), {
        "grid": {"h": 0.05}, "wing": {"n_sections": n_sections, "n_chord": n_chord},
        "solver": {"tol": min(cfg.solver.tol, 1e-10)},
        "filters": {"skin_thickness": None, "r_s": None},
        "constraints": {"compliance_mode": "relative"},
        # FD comparisons need a tight solve whatever the run tolerance is
        "solver": {"tol": min(cfg.solver.tol, 1e-8)}})
    return config._build(config.CaseConfig, config._merge(data, overrides)).validate()


def random_wing(problem, rng, spread=0.3):
    """Design perturbed around the initial one, kept off the variable bounds."""
    d = problem.design0.vector()
    d = np.clip(d + spread * (rng.random(d.size) - 0.5), 1e-3, 1 - 1e-3)
    return problem.design0.with_vector(d)


# ---------------------------------------------------------------------------
# individual checks
# ---------------------------------------------------------------------------

def check_conservation(problem, n_shapes=5, seed=0):
    """Total transferred force against -sum p_j n_j A_j, plus area partition."""
    rng = np.random.default_rng(seed)
    err_f = err_a = 0.0
    for _ in range(n_shapes):
        wing = Wing(problem.spec, random_wing(problem, rng))
        mesh = wing.panel_mesh()
        lm = coupling.LoadMap.from_mesh(mesh, problem.grid)
        rec = lm.records
        p = rng.standard_normal(mesh.n_panels)
        F = lm.transfer(p).reshape(-1, 3).sum(axis=0)
        ref = -(p[rec.panels, None] * mesh.normals[rec.panels] * rec.panel_area[:, None]).sum(0)
        scale = np.abs(p[rec.panels] * rec.panel_area).sum()
        err_f = max(err_f, np.abs(F - ref).max() / scale)
        A = np.bincount(rec.panel, weights=rec.area, minlength=mesh.n_panels)[rec.panels]
        err_a = max(err_a, np.abs(A / rec.panel_area - 1).max())
    return [Check("load transfer conservation", err_f, 1e-9),
            Check("panel area partition", err_a, 1e-10)]


def check_adjoint_pair(problem, seed=0):
    rng = np.random.default_rng(seed)
    mesh = Wing(problem.spec, problem.design0).panel_mesh()
    lm = coupling.LoadMap.from_mesh(mesh, problem.grid)
    p = rng.standard_normal(mesh.n_panels)
    lam = rng.standard_normal(problem.grid.n_dofs)
    a, b = lm.transfer(p) @ lam, p @ lm.transpose(lam)
    return [Check("transfer adjoint pair", abs(a - b) / max(abs(a), 1e-300), 1e-12)]


def elliptic_wing(aspect_ratio=8.0, span=8.0, n_sections=21, n_chord=60):
    """Untwisted elliptic planform (NACA 0012), cosine-spaced sections."""
    c0 = 4 * span / (np.pi * aspect_ratio)
    th = np.linspace(0.0, 0.5 * np.pi * 0.985, n_sections)
    ys = 0.5 * span * np.sin(th)
    chords = c0 * np.sqrt(1 - (2 * ys / span) ** 2)
    half = [AirfoilSection(0.0, 0.0, 0.12, c, 0.0, (0.25 * c0, y, 0.0))
            for y, c in zip(ys, chords)]
    full = [AirfoilSection(0.0, 0.0, 0.12, s.chord, 0.0, (0.25 * c0, -s.quarter_chord[1], 0.0))
            for s in half[1:][::-1]] + half
    return build_panel_mesh(full, n_chord, 20 * span)


def check_induced_drag():
    span = 8.0
    sol = aero.analyze(elliptic_wing(span=span), aero.freestream(1.0, 5.0), 1.0)
    ref = sol.lift**2 / (np.pi * sol.q_inf * span**2)
    return [Check("elliptic induced drag", abs(sol.drag / ref - 1), 0.07)]


def check_lift_slope():
    spec = WingSpec(naca=(0.0, 0.0, 0.12), half_span=10.0, n_sections=21, n_chord=60,
                    quarter_chord_x=0.25, wake_length=100.0)
    mesh = Wing.from_params(spec, 0.0, 1.0).panel_mesh()
    a = 4.0
    sol = aero.analyze(mesh, aero.freestream(1.0, a), 1.0)
    cl = sol.lift / (sol.q_inf * 20.0)
    ref = 2 * np.pi / (1 + 2 / 20) * np.deg2rad(a)
    return [Check("lift slope (AR 20)", abs(cl / ref - 1), 0.10)]


def check_filters(problem, seed=0):
    rng = np.random.default_rng(seed)
    grid = problem.grid
    f = PDEFilter(grid.shape, grid.h, problem.cfg.r_s, tol=1e-12)
    x = rng.random(grid.n_el)
    uni = np.abs(f(np.full(grid.n_el, 0.7)) - 0.7).max()
    mass = abs(f(x).sum() / x.sum() - 1)
    beta, eta = 8.0, 0.3
    ends = max(abs(heaviside(0.0, beta, eta)), abs(heaviside(1.0, beta, eta) - 1),
               abs(heaviside(eta, 4.0, eta) - np.tanh(4 * eta) / (np.tanh(4 * eta)
                                                                  + np.tanh(4 * (1 - eta)))))
    t = rng.random(50)
    fd = (heaviside(t + 1e-6, beta, eta) - heaviside(t - 1e-6, beta, eta)) / 2e-6
    dh = np.abs(fd - heaviside_derivative(t, beta, eta)).max()
    return [Check("filter uniform invariance", uni, 1e-10),
            Check("filter mass conservation", mass, 1e-8),
            Check("projection end/mid points", ends, 1e-14),
            Check("projection derivative", dh, 1e-6)]


def check_gradients(problem, seed=0, n_shape=3):
    """Shape and structural gradients of (f, g) against central differences."""
    rng = np.random.default_rng(seed)
    x = problem.initial_point()
    x[: problem.n_gamma] = rng.uniform(0.2, 0.8, problem.n_gamma)
    x[problem.n_gamma:] = random_wing(problem, rng, 0.1).vector()
    beta = 2.0
    ev = problem.evaluate(x, beta)
    ls = ev.load_state

    def funcs(xx):
        e = problem.evaluate(xx, beta, gradient=False, load_state=ls)
        return np.r_[e.f, e.g]

    an = np.vstack([ev.df, ev.dg])
    errs = []
    for k in rng.choice(problem.n_shape, min(n_shape, problem.n_shape), replace=False):
        i, h = problem.n_gamma + k, 1e-4
        xp, xm = x.copy(), x.copy()
        xp[i] += h
        xm[i] -= h
        fd = (funcs(xp) - funcs(xm)) / (2 * h)
        errs.append(np.abs(an[:, i] - fd).max() / max(np.abs(fd).max(), 1e-12))
    # structural: random direction over material elements
    v = rng.standard_normal(problem.n_gamma) * (ev.fields.skin.eroded > 0.5)
    h = 1e-4
    xp, xm = x.copy(), x.copy()
    xp[: problem.n_gamma] += h * v
    xm[: problem.n_gamma] -= h * v
    fd = (funcs(xp) - funcs(xm))[1:] / (2 * h)
    dg = an[1:, : problem.n_gamma] @ v
    err_s = np.abs(dg - fd).max() / np.abs(fd).max()
    return [Check("shape gradients vs FD", max(errs), 1e-3),
            Check("structural gradients vs FD", err_s, 1e-4)]


def check_structural_adjoint(problem):
    """lam_s = -u solves K^T lam = -dC/du (= -p) to the solver tolerance."""
    x = problem.initial_point()
    ev = problem.evaluate(x, 1.0, gradient=False)
    model = problem.model(ev.E)
    free = model.free_mask()
    u, p = ev.u[0], ev.loads[0]
    lam = -u
    r = (model.apply(lam) + p) * free
    return [Check("structural adjoint lam = -u", np.linalg.norm(r) / np.linalg.norm(p * free),
                  max(10 * problem.cfg.solver.tol, 1e-8))]


def run_checks(cfg: config.CaseConfig, quick=False):
    from .problem import WingProblem
    problem = WingProblem(coarse_config(cfg))
    checks = []
    checks += check_conservation(problem, 2 if quick else 5)
    checks += check_adjoint_pair(problem)
    checks += check_filters(problem)
    checks += check_structural_adjoint(problem)
    checks += check_gradients(problem)
    if not quick:
        checks += check_induced_drag()
        checks += check_lift_slope()
    return checks
