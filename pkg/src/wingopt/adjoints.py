"""Sensitivities of drag, lift, weight and compliance.

The coupling is one-way (aero -> structure), so adjoints are solved in
reverse order: the structural adjoint first (for compliance it is simply
``-u``), then the aerodynamic adjoint with the structural term projected
back to the panels through the frozen load map.

Shape derivatives of the aerodynamic residual and of the Trefftz-plane
geometry are taken by central differences over the filtered section
variables; only influence rows/columns touched by a section are rebuilt.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from . import aero
from .aero import AeroSolution
from .coupling import LoadMap, xi_directional_derivative
from .fem import VoxelGrid
from .fields import FieldChain, FieldSet
from .geometry import Wing, affected_panels, affected_strips, geometry_jacobian

logger = logging.getLogger(__name__)

AERO_FUNCTIONALS = ("drag", "lift", "weight")
STRUCT_FUNCTIONALS = ("compliance",)


# ---------------------------------------------------------------------------
# partial derivatives with respect to the doublet strengths
# ---------------------------------------------------------------------------

def _wake_scatter(mesh, g_wake):
    """Map a gradient wrt wake strengths (mu_upper - mu_lower) onto all panels."""
    g = np.zeros(mesh.n_panels)
    np.add.at(g, mesh.te_upper, g_wake)
    np.add.at(g, mesh.te_lower, -g_wake)
    return g


def lift_mu_gradient(sol: AeroSolution):
    geom = sol.trefftz
    return _wake_scatter(sol.mesh, sol.rho * sol.v_inf * geom.s * np.cos(geom.theta))


def drag_mu_gradient(sol: AeroSolution, M=None):
    geom = sol.trefftz
    M = geom.normalwash_matrix() if M is None else M
    mw = sol.mu_wake
    g = -0.5 * sol.rho * (geom.s * (M @ mw) + M.T @ (geom.s * mw))
    return _wake_scatter(sol.mesh, g)


def pressure_mu_transpose(velocity_op, U, rho, v):
    """(dp/dmu)^T v for panel pressures p = q Cp with the velocity stencil frozen.

    dp_i/dmu = -rho U_i . dU_i/dmu, and dU/dmu is the tangential-gradient
    operator.
    """
    Gx, Gy, Gz = velocity_op[:3]
    return -rho * (Gx.T @ (U[:, 0] * v) + Gy.T @ (U[:, 1] * v) + Gz.T @ (U[:, 2] * v))


def pressure_mu_product(velocity_op, U, rho, dmu):
    """(dp/dmu) dmu, the forward counterpart of ``pressure_mu_transpose``."""
    Gx, Gy, Gz = velocity_op[:3]
    return -rho * (U[:, 0] * (Gx @ dmu) + U[:, 1] * (Gy @ dmu) + U[:, 2] * (Gz @ dmu))


# ---------------------------------------------------------------------------
# adjoint solves
# ---------------------------------------------------------------------------

def structural_adjoint(functional, u):
    """Structural adjoint: ``-u`` for compliance, zero for aero-only functionals."""
    if functional == "compliance":
        return -np.asarray(u)
    if functional in AERO_FUNCTIONALS:
        return np.zeros_like(u)
    raise ValueError(f"unsupported functional {functional!r}")


def aero_adjoint(system: aero.InfluenceSystem, dfdmu, tol=1e-10):
    """Solve ``A^T lam = -df/dmu`` with the retained factorization."""
    if system._lu is None:
        raise RuntimeError("aerodynamic system has no factorization to reuse")
    rhs = -np.asarray(dfdmu, dtype=float)
    if not np.any(rhs):
        return np.zeros_like(rhs)
    lam = system.solve(rhs, transpose=True)
    res = np.linalg.norm(system.A.T @ lam - rhs) / np.linalg.norm(rhs)
    if res > tol:
        raise np.linalg.LinAlgError(f"aero adjoint residual {res:.2e} above {tol:.0e}")
    return lam


def compliance_aero_rhs(velocity_op, U, rho, load_map: LoadMap, u):
    """df/dmu + (dr_s/dmu)^T lam_s for compliance with lam_s = -u: 2 (dp/dmu)^T T^T u."""
    return 2.0 * pressure_mu_transpose(velocity_op, U, rho, load_map.transpose(u))


# ---------------------------------------------------------------------------
# structural-variable gradients
# ---------------------------------------------------------------------------

def compliance_density_gradient(u, element_energy, E_max, E_min):
    """dC/drho_e per element: -u_e^T k_e u_e with k_e = (E_max - E_min) k0."""
    return -(E_max - E_min) * element_energy


def grad_structural(chain: FieldChain, fs: FieldSet, beta, drho_e=None, drho_d=None,
                    drho_n=None):
    """Pull gradients wrt the physical fields back to the internal variable gamma."""
    return chain.pullback_gamma(fs, beta, (drho_e, drho_n, drho_d))


# ---------------------------------------------------------------------------
# shape-variable gradients
# ---------------------------------------------------------------------------

@dataclass
class ShapeTerms:
    """Per shape variable: lam^T dr_a/dd for each (case, functional) and
    explicit Trefftz derivatives (full-span lift and drag) per case."""

    residual: dict          # (case index, name) -> array over variables
    lift: list              # per case, array over variables
    drag: list


def _partial_residual(mesh_p, blocks, aff, rest, aff_strips, sol):
    """Rows of ``A mu + B sigma`` that change when the panels ``aff`` move."""
    A1, B1, A2, B2 = blocks
    mesh_c = mesh_p.with_wake(sol.mesh.wake_direction)
    sigma = aero.compute_sources(mesh_c, sol.u_inf)
    mu, mw = sol.mu, sol.mu_wake
    all_strips = np.arange(mesh_c.n_strips)
    r = np.zeros(mesh_c.n_panels)
    r[aff] = A1 @ mu + B1 @ sigma + aero.wake_block(mesh_c, aff, all_strips) @ mw
    r[rest] = (A2 @ mu[aff] + B2 @ sigma[aff]
               + aero.wake_block(mesh_c, rest, aff_strips) @ mw[aff_strips])
    return r, mesh_c


def shape_terms(wing: Wing, variables, solutions, lambdas, step=1e-4):
    """Central-difference shape terms for all ``variables`` = [(section, param)].

    ``solutions`` holds one ``AeroSolution`` per load case (same surface,
    own wake direction); ``lambdas[c]`` maps functional names to adjoint
    vectors of case ``c``.
    """
    base = solutions[0].mesh
    n_half = wing.spec.n_sections
    all_panels = np.arange(base.n_panels)
    residual = {(c, name): np.zeros(len(variables))
                for c, lam in enumerate(lambdas) for name in lam}
    lift = [np.zeros(len(variables)) for _ in solutions]
    drag = [np.zeros(len(variables)) for _ in solutions]
    for k, (section, param) in enumerate(variables):
        aff = affected_panels(base, n_half, section)
        rest = np.setdiff1d(all_panels, aff)
        aff_strips = np.asarray(affected_strips(n_half, section))
        for sgn in (1.0, -1.0):
            mesh_p = wing.perturbed(section, param, sgn * step).panel_mesh(base.wake_direction)
            A1, B1 = aero.influence_block(mesh_p, aff, all_panels, wake=False)
            A2, B2 = aero.influence_block(mesh_p, rest, aff, wake=False)
            for c, sol in enumerate(solutions):
                r, mesh_c = _partial_residual(mesh_p, (A1, B1, A2, B2), aff, rest,
                                              aff_strips, sol)
                for name, lam in lambdas[c].items():
                    residual[(c, name)][k] += sgn * (lam @ r) / (2 * step)
                geom = aero.TrefftzGeometry.from_mesh(mesh_c)
                L, D, _, _ = aero.trefftz_forces(geom, sol.mu_wake, sol.rho, sol.v_inf)
                lift[c][k] += sgn * L / (2 * step)
                drag[c][k] += sgn * D / (2 * step)
    return ShapeTerms(residual, lift, drag)


def xi_shape_derivatives(wing: Wing, mesh, grid: VoxelGrid, variables, step_fraction=1e-3):
    """Yield d xi / d(filtered variable) for each (section, param).

    The node motion is the analytic geometry Jacobian; the step is chosen so
    the largest node displacement is ``step_fraction * h``.
    """
    for section, param in variables:
        J = geometry_jacobian(wing, section, param)
        scale = np.abs(J).max()
        if scale == 0:
            yield np.zeros(grid.n_el)
            continue
        yield xi_directional_derivative(mesh, grid, J, step_fraction * grid.h / scale)
