"""Density fields on the voxel grid: PDE filter, projections, skin and
robust internal fields, agglomeration and material interpolation.

Every forward map has a matching vector-Jacobian helper so objective
gradients can be pulled back to the design variables.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla


class FilterError(RuntimeError):
    pass


def _laplacian_1d(n):
    if n == 1:
        return sp.csr_matrix((1, 1))
    main = np.full(n, 2.0)
    main[0] = main[-1] = 1.0
    return sp.diags([-np.ones(n - 1), main, -np.ones(n - 1)], [-1, 0, 1], format="csr")


class PDEFilter:
    """Helmholtz filter ``-(r^2/12) lap(x~) + x~ = x`` with Neumann boundaries.

    Discretized with the 7-point stencil on element centres; the operator is
    symmetric, so the filter is its own transpose.
    """

    def __init__(self, shape, h, r, tol=1e-9, max_iter=1000):
        if r < 0:
            raise ValueError("filter radius must be non-negative")
        self.shape = tuple(shape)
        self.h = h
        self.r = r
        self.tol = tol
        self.max_iter = max_iter
        if r > 0:
            nx, ny, nz = self.shape
            Ix, Iy, Iz = (sp.identity(n, format="csr") for n in (nx, ny, nz))
            L = (sp.kron(Iz, sp.kron(Iy, _laplacian_1d(nx)))
                 + sp.kron(Iz, sp.kron(_laplacian_1d(ny), Ix))
                 + sp.kron(_laplacian_1d(nz), sp.kron(Iy, Ix)))
            n = nx * ny * nz
            self.A = (sp.identity(n) + (r**2 / (12.0 * h**2)) * L).tocsr()
            self._Minv = sp.diags(1.0 / self.A.diagonal())

    def __call__(self, x):
        x = np.asarray(x, dtype=float)
        if self.r == 0:
            return x.copy()
        if not np.any(x):
            return np.zeros_like(x)
        y, info = spla.cg(self.A, x, x0=x, rtol=self.tol, atol=0.0, maxiter=self.max_iter,
                          M=self._Minv)
        if info != 0:
            res = np.linalg.norm(self.A @ y - x) / np.linalg.norm(x)
            raise FilterError(f"filter solve did not converge (residual {res:.2e})")
        return y

    transpose = __call__


def heaviside(x, beta, eta):
    """Smooth Heaviside projection of ``x`` with sharpness ``beta`` and threshold ``eta``."""
    den = np.tanh(beta * eta) + np.tanh(beta * (1.0 - eta))
    return (np.tanh(beta * eta) + np.tanh(beta * (np.asarray(x) - eta))) / den


def heaviside_derivative(x, beta, eta):
    den = np.tanh(beta * eta) + np.tanh(beta * (1.0 - eta))
    return beta * (1.0 - np.tanh(beta * (np.asarray(x) - eta)) ** 2) / den


@dataclass(frozen=True)
class ProjectionParams:
    beta: float
    eta: float = 0.5
    delta_eta: float = 0.2

    def __post_init__(self):
        if self.beta <= 0:
            raise ValueError("beta must be positive")
        lo, hi = self.eta - self.delta_eta, self.eta + self.delta_eta
        if not (0 < lo and hi < 1):
            raise ValueError("thresholds eta +- delta_eta must lie in (0, 1)")

    @property
    def thresholds(self):
        """(eroded, nominal, dilated) thresholds."""
        return (self.eta + self.delta_eta, self.eta, self.eta - self.delta_eta)


@dataclass
class SkinFields:
    filtered: np.ndarray
    eroded: np.ndarray
    dilated: np.ndarray

    @property
    def skin(self):
        return self.dilated - self.eroded


def skin_fields(xi, skin_filter: PDEFilter, beta_skin, delta_eta=0.45):
    """Filter the inside fraction and project it to eroded/dilated hulls."""
    xt = skin_filter(xi)
    return SkinFields(xt, heaviside(xt, beta_skin, 0.5 + delta_eta),
                      heaviside(xt, beta_skin, 0.5 - delta_eta))


def robust_fields(gamma_filtered, params: ProjectionParams):
    """(eroded, nominal, dilated) projections of the filtered internal field."""
    return tuple(heaviside(gamma_filtered, params.beta, t) for t in params.thresholds)


def agglomerate(eroded, dilated, gamma_x, rho_skin):
    """Physical density: fixed skin band plus the internal field inside the eroded hull."""
    return rho_skin * (dilated - eroded) + eroded * gamma_x


def interpolate_material(rho_e, rho_d, E_max=1.0, E_min_ratio=1e-6, w_structure=26.59e3):
    """Linear (unpenalized) stiffness from the eroded and mass from the dilated field."""
    E_min = E_min_ratio * E_max
    return E_min + np.asarray(rho_e) * (E_max - E_min), w_structure * np.asarray(rho_d)


def skin_radius(w_e):
    return 0.75 * w_e


@dataclass
class FieldSet:
    xi: np.ndarray
    skin: SkinFields
    gamma: np.ndarray
    gamma_filtered: np.ndarray
    gamma_x: tuple           # (eroded, nominal, dilated)
    rho: tuple               # (eroded, nominal, dilated)

    @property
    def rho_e(self):
        return self.rho[0]

    @property
    def rho_n(self):
        return self.rho[1]

    @property
    def rho_d(self):
        return self.rho[2]

    def grey_fraction(self, inside=None):
        """Share of elements with |rho_n - 0.5| <= 0.4 (optionally within a mask)."""
        r = self.rho_n if inside is None else self.rho_n[inside]
        return float(np.mean(np.abs(r - 0.5) <= 0.4)) if r.size else 0.0


class FieldChain:
    """Skin and internal chains from (xi, gamma) to the physical densities."""

    def __init__(self, shape, h, w_e, r_s, beta_skin=16.0, skin_delta=0.45,
                 delta_eta=0.2, rho_skin=1.0, tol=1e-9):
        if w_e < 2 * h * (1 - 1e-12):
            raise ValueError("skin thickness must span at least two elements")
        if not 0.0 <= rho_skin <= 1.0:
            raise ValueError("skin density must lie in [0, 1]")
        self.shape = tuple(shape)
        self.h = h
        self.w_e = w_e
        self.r_e = skin_radius(w_e)
        self.r_s = r_s
        self.beta_skin = beta_skin
        self.skin_delta = skin_delta
        self.delta_eta = delta_eta
        self.rho_skin = rho_skin
        self.skin_filter = PDEFilter(shape, h, self.r_e, tol)
        self.gamma_filter = PDEFilter(shape, h, r_s, tol)

    def skin(self, xi):
        return skin_fields(xi, self.skin_filter, self.beta_skin, self.skin_delta)

    def forward(self, xi, gamma, beta, skin: SkinFields | None = None):
        skin = self.skin(xi) if skin is None else skin
        gt = self.gamma_filter(gamma)
        gx = robust_fields(gt, ProjectionParams(beta, 0.5, self.delta_eta))
        rho = tuple(agglomerate(skin.eroded, skin.dilated, g, self.rho_skin) for g in gx)
        return FieldSet(xi, skin, gamma, gt, gx, rho)

    def pullback_gamma(self, fs: FieldSet, beta, grads):
        """dF/dgamma from dF/drho_x for x in (e, n, d); ``None`` entries are zero."""
        acc = np.zeros_like(fs.gamma)
        thresholds = ProjectionParams(beta, 0.5, self.delta_eta).thresholds
        for g, t in zip(grads, thresholds):
            if g is not None:
                acc += g * fs.skin.eroded * heaviside_derivative(fs.gamma_filtered, beta, t)
        return self.gamma_filter.transpose(acc)

    def drho_dxi_filtered(self, fs: FieldSet, x):
        """Pointwise d rho_x / d xi~ for field index x (0 eroded, 1 nominal, 2 dilated)."""
        xt = fs.skin.filtered
        d_er = heaviside_derivative(xt, self.beta_skin, 0.5 + self.skin_delta)
        d_di = heaviside_derivative(xt, self.beta_skin, 0.5 - self.skin_delta)
        return self.rho_skin * d_di + (fs.gamma_x[x] - self.rho_skin) * d_er

    def pullback_xi(self, fs: FieldSet, grads):
        """dF/dxi from dF/drho_x for x in (e, n, d)."""
        acc = np.zeros_like(fs.xi)
        for x, g in enumerate(grads):
            if g is not None:
                acc += g * self.drho_dxi_filtered(fs, x)
        return self.skin_filter.transpose(acc)
