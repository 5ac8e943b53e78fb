"""Coupled wing problem: one evaluation runs the aero analyses, the field
chain and the structural solves, then the adjoints for objective and
constraint gradients.

Design vector layout: ``x = [gamma (one per element), shape variables]``.
Functionals refer to one half of the wing (the structural half): lift and
drag from the full-span Trefftz analysis are halved.
"""
from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field

import numpy as np

from . import adjoints as adj
from . import aero, coupling, fem
from .config import CaseConfig
from .fields import FieldChain, FieldSet, interpolate_material
from .geometry import ShapeDesign, Wing, WingSpec

logger = logging.getLogger(__name__)

CASES = ("cruise", "takeoff")


@dataclass
class LoadState:
    """Frozen pieces of the pressure-to-load chain for one wing shape.

    Pressures follow from doublets as ``p = q - rho/2 |u_t + G mu|^2`` with
    the tangential freestream ``u_t`` and stencil ``G`` of the base mesh, so
    that shape changes enter the loads only through ``mu``.
    """

    load_map: coupling.LoadMap
    velocity_op: tuple
    u_t: list            # per case (n_panels, 3)
    rho: list
    q: list

    @classmethod
    def from_solutions(cls, solutions, load_map):
        mesh = solutions[0].mesh
        n = mesh.normals
        u_t = [s.u_inf[None, :] - (n @ s.u_inf)[:, None] * n for s in solutions]
        return cls(load_map, solutions[0].velocity_op, u_t,
                   [s.rho for s in solutions], [s.q_inf for s in solutions])

    def velocity(self, case, mu):
        Gx, Gy, Gz = self.velocity_op[:3]
        return self.u_t[case] + np.column_stack([Gx @ mu, Gy @ mu, Gz @ mu])

    def pressure(self, case, mu):
        U = self.velocity(case, mu)
        return self.q[case] - 0.5 * self.rho[case] * np.einsum("ij,ij->i", U, U)


@dataclass
class Evaluation:
    f: float
    g: np.ndarray
    df: np.ndarray | None
    dg: np.ndarray | None
    lift: float
    drag: float
    weight: float
    compliance: tuple
    wing: Wing
    solutions: list
    fields: FieldSet
    E: np.ndarray
    u: list
    loads: list
    load_state: LoadState
    timings: dict = field(default_factory=dict)
    # unscaled shape derivatives (half-wing drag, lift, weight, compliances) wrt raw d
    shape_parts: dict | None = None


class WingProblem:
    """Evaluates drag, lift, weight and compliances plus their gradients."""

    def __init__(self, cfg: CaseConfig):
        self.cfg = cfg.validate()
        g = cfg.grid
        self.grid = fem.VoxelGrid(tuple(g.lower), g.h, cfg.grid_shape)
        w = cfg.wing
        self.spec = WingSpec(cfg.naca_params, w.half_span, w.n_sections, w.n_chord,
                             w.quarter_chord_x, w.quarter_chord_z, w.wake_length)
        s = cfg.shape
        self.design0 = ShapeDesign.from_values(
            w.n_sections, s.initial_twist, s.initial_chord, twist_bounds=tuple(s.twist_bounds),
            chord_bounds=tuple(s.chord_bounds), filter_radius=s.filter_fraction * w.half_span,
            active=tuple(s.variables))
        cols = self.design0.active_columns
        self.variables = [(k, c) for k in range(w.n_sections) for c in cols]
        m, f = cfg.material, cfg.filters
        self.chain = FieldChain(self.grid.shape, g.h, cfg.skin_thickness, cfg.r_s,
                                f.beta_skin, f.skin_delta, f.delta_eta, m.rho_skin, f.tol)
        self.E_min = m.E_min_ratio * m.E_max
        self.speeds = [aero.freestream(c.speed, c.alpha) for c in (cfg.cruise, cfg.takeoff)]
        self.densities = [cfg.cruise.density, cfg.takeoff.density]
        self.fixed = fem.clamp_strips(self.grid, self._clamp_ranges())
        st = cfg.strut
        self.strut_k = fem.strut_stiffness(st.area, st.modulus, st.length) if st.enabled else 0.0
        self.n_gamma = self.grid.n_el
        self.n_shape = len(self.variables)
        # normalization and relative bounds are fixed at the first evaluation
        self.drag_ref = None
        self.compliance_bounds = None
        if cfg.constraints.compliance_mode == "absolute":
            self.compliance_bounds = (cfg.constraints.cruise, cfg.constraints.takeoff)
        self._u_prev = [None, None]

    # ------------------------------------------------------------------
    def _clamp_ranges(self):
        h = self.grid.h
        sup = self.cfg.supports
        chord = self.cfg.shape.initial_chord
        le = sup.leading_strip or (0.0, 2 * h)
        te = sup.trailing_strip or (chord - 2 * h, chord)
        return [tuple(le), tuple(te)]

    @property
    def n(self):
        return self.n_gamma + self.n_shape

    def initial_point(self):
        x = np.empty(self.n)
        x[: self.n_gamma] = self.cfg.optimizer.gamma_init
        x[self.n_gamma:] = self.design0.vector()
        return x

    def split(self, x):
        x = np.asarray(x, dtype=float)
        if x.shape != (self.n,):
            raise ValueError(f"design vector has length {x.size}, expected {self.n}")
        return x[: self.n_gamma], x[self.n_gamma:]

    def wing(self, x):
        return Wing(self.spec, self.design0.with_vector(self.split(x)[1]))

    def model(self, E):
        model = fem.ElasticModel(self.grid, E, self.cfg.material.nu, self.fixed)
        if self.strut_k:
            st = self.cfg.strut
            model = fem.add_strut_springs(model, self.strut_k, st.center, st.side)
        return model

    # ------------------------------------------------------------------
    def analyze_aero(self, wing):
        mesh = wing.panel_mesh(self.speeds[0] / np.linalg.norm(self.speeds[0]))
        surface = aero.assemble_surface(mesh)
        return [aero.analyze(mesh, u, rho, surface=surface)
                for u, rho in zip(self.speeds, self.densities)]

    def material(self, fs: FieldSet):
        m = self.cfg.material
        E, _ = interpolate_material(fs.rho_e, fs.rho_d, m.E_max, m.E_min_ratio, m.w_structure)
        E[fs.skin.dilated <= self.cfg.solver.void_cutoff] = 0.0
        return E

    def evaluate(self, x, beta, payload=None, gradient=True, load_state=None):
        """Objective, constraints and (optionally) gradients at ``x``.

        ``load_state`` freezes the load map and pressure stencil (used by
        finite-difference checks); by default it is rebuilt for the current wing.
        """
        cfg = self.cfg
        timings = {}
        t0 = time.perf_counter()
        payload = cfg.constraints.payload if payload is None else payload
        gamma, _ = self.split(x)
        wing = self.wing(x)
        sols = self.analyze_aero(wing)
        mesh = sols[0].mesh
        timings["aero"] = time.perf_counter() - t0

        t = time.perf_counter()
        coupling.check_inside_grid(mesh.nodes, self.grid)
        xi = coupling.inside_fractions(mesh.triangle_soup(), self.grid)
        fs = self.chain.forward(xi, gamma, beta)
        E = self.material(fs)
        if load_state is None:
            load_state = LoadState.from_solutions(sols, coupling.LoadMap.from_mesh(mesh, self.grid))
        timings["fields"] = time.perf_counter() - t

        t = time.perf_counter()
        solver = fem.ElasticitySolver(self.model(E), cfg.solver.method, cfg.solver.tol,
                                      cfg.solver.max_iter, coarse_dofs=cfg.solver.coarse_dofs)
        us, loads, comps = [], [], []
        for c, sol in enumerate(sols):
            p = load_state.load_map.transfer(load_state.pressure(c, sol.mu))
            u, info = solver.solve(p, x0=self._u_prev[c])
            logger.debug("%s solve: %d iterations", CASES[c], info.iterations)
            self._u_prev[c] = u
            us.append(u)
            loads.append(p)
            comps.append(fem.compliance(u, p))
        timings["fem"] = time.perf_counter() - t

        m = cfg.material
        weight = fem.structure_weight(fs.rho_d, m.w_structure, self.grid.h)
        lift, drag = 0.5 * sols[0].lift, 0.5 * sols[0].drag
        if self.drag_ref is None:
            self.drag_ref = drag / 10.0
        if self.compliance_bounds is None:
            self.compliance_bounds = (cfg.constraints.cruise * comps[0],
                                      cfg.constraints.takeoff * comps[1])
        cb = self.compliance_bounds
        f = drag / self.drag_ref
        g = np.array([(payload + weight - lift) / payload,
                      comps[0] / cb[0] - 1.0, comps[1] / cb[1] - 1.0])
        ev = Evaluation(f, g, None, None, lift, drag, weight, tuple(comps), wing, sols, fs, E,
                        us, loads, load_state, timings)
        if gradient:
            t = time.perf_counter()
            self._gradients(ev, beta, payload)
            timings["gradient"] = time.perf_counter() - t
        timings["total"] = time.perf_counter() - t0
        return ev

    # ------------------------------------------------------------------
    def _gradients(self, ev: Evaluation, beta, payload):
        cfg, grid, chain, fs = self.cfg, self.grid, self.chain, ev.fields
        m = cfg.material
        k0 = fem.reference_element_stiffness(grid.h, m.nu)
        active = ev.E > 0
        de = []       # dC_c / d rho_e
        for u in ev.u:
            energy = fem.element_energies(u, grid, k0) * active
            de.append(adj.compliance_density_gradient(u, energy, m.E_max, self.E_min))
        dW_drho_d = np.full(grid.n_el, m.w_structure * grid.h**3)

        # structural variables
        cb = self.compliance_bounds
        dW_dgamma = chain.pullback_gamma(fs, beta, (None, None, dW_drho_d))
        dg_gamma = np.stack([dW_dgamma / payload,
                             chain.pullback_gamma(fs, beta, (de[0], None, None)) / cb[0],
                             chain.pullback_gamma(fs, beta, (de[1], None, None)) / cb[1]])

        # shape variables: aero adjoints and residual/Trefftz terms
        ls = ev.load_state
        lambdas = []
        for c, sol in enumerate(ev.solutions):
            lam = {}
            U = ls.velocity(c, sol.mu)
            rhs = adj.compliance_aero_rhs(ls.velocity_op, U, ls.rho[c], ls.load_map, ev.u[c])
            lam["compliance"] = adj.aero_adjoint(sol.system, rhs)
            if c == 0:
                lam["drag"] = adj.aero_adjoint(sol.system, 0.5 * adj.drag_mu_gradient(sol))
                lam["lift"] = adj.aero_adjoint(sol.system, 0.5 * adj.lift_mu_gradient(sol))
            lambdas.append(lam)
        st = adj.shape_terms(ev.wing, self.variables, ev.solutions, lambdas,
                             cfg.shape.fd_step)
        dD = 0.5 * st.drag[0] + st.residual[(0, "drag")]
        dL = 0.5 * st.lift[0] + st.residual[(0, "lift")]
        dC = [st.residual[(c, "compliance")].copy() for c in range(2)]

        # shape enters the fields through xi
        dxi = np.stack([chain.pullback_xi(fs, (de[0], None, None)),
                        chain.pullback_xi(fs, (de[1], None, None)),
                        chain.pullback_xi(fs, (None, None, dW_drho_d))])
        dW = np.zeros(self.n_shape)
        mesh = ev.solutions[0].mesh
        for k, dxi_k in enumerate(adj.xi_shape_derivatives(ev.wing, mesh, grid, self.variables)):
            v = dxi @ dxi_k
            dC[0][k] += v[0]
            dC[1][k] += v[1]
            dW[k] = v[2]

        # filtered -> raw shape variables
        parts = self._unfilter(ev.wing, np.stack([dD, dL, dW, dC[0], dC[1]]))
        ev.shape_parts = dict(zip(("drag", "lift", "weight", "compliance_cruise",
                                   "compliance_takeoff"), parts))
        shape_raw = np.stack([parts[0] / self.drag_ref, (parts[2] - parts[1]) / payload,
                              parts[3] / cb[0], parts[4] / cb[1]])
        ev.df = np.concatenate([np.zeros(self.n_gamma), shape_raw[0]])
        ev.dg = np.concatenate([dg_gamma, shape_raw[1:]], axis=1)

    def _unfilter(self, wing, grads):
        """Chain rule through the spanwise filter; ``grads`` is (n_func, n_shape)."""
        F = wing.filter
        n_sec, n_act = self.spec.n_sections, len(self.design0.active_columns)
        out = np.empty_like(grads)
        for i, gvec in enumerate(grads):
            out[i] = (F.T @ gvec.reshape(n_sec, n_act)).ravel()
        return out
