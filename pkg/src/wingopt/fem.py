"""Linear elasticity on a regular voxel grid of trilinear hexahedra.

Node, element and dof numbering are x-fastest lexicographic; each node
carries three displacement dofs (x, y, z) stored consecutively.  All
elements share one reference stiffness matrix scaled by their Young's
modulus, so the global operator can be applied matrix-free.  Elements
with E = 0 are treated as absent; dofs they leave unsupported are held
at zero.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from . import multigrid

logger = logging.getLogger(__name__)

# local node offsets (i, j, k) of the 8-node hexahedron
HEX_CORNERS = np.array([[0, 0, 0], [1, 0, 0], [1, 1, 0], [0, 1, 0],
                        [0, 0, 1], [1, 0, 1], [1, 1, 1], [0, 1, 1]])


@dataclass(frozen=True)
class VoxelGrid:
    """Regular grid of cubic elements with edge length ``h``."""

    origin: tuple[float, float, float]
    h: float
    shape: tuple[int, int, int]

    def __post_init__(self):
        if self.h <= 0:
            raise ValueError("element size must be positive")
        if min(self.shape) < 1:
            raise ValueError("grid needs at least one element per direction")

    @classmethod
    def from_box(cls, lower, upper, h):
        lower = np.asarray(lower, dtype=float)
        upper = np.asarray(upper, dtype=float)
        shape = tuple(int(n) for n in np.maximum(1, np.round((upper - lower) / h)))
        return cls(tuple(lower), float(h), shape)

    @property
    def n_el(self):
        nx, ny, nz = self.shape
        return nx * ny * nz

    @property
    def node_shape(self):
        return tuple(n + 1 for n in self.shape)

    @property
    def n_nodes(self):
        a, b, c = self.node_shape
        return a * b * c

    @property
    def n_dofs(self):
        return 3 * self.n_nodes

    @property
    def upper(self):
        return tuple(o + self.h * n for o, n in zip(self.origin, self.shape))

    def node_coordinates(self):
        axes = [o + self.h * np.arange(n + 1) for o, n in zip(self.origin, self.shape)]
        Z, Y, X = np.meshgrid(axes[2], axes[1], axes[0], indexing="ij")
        return np.column_stack([X.ravel(), Y.ravel(), Z.ravel()])

    def element_centers(self):
        axes = [o + self.h * (np.arange(n) + 0.5) for o, n in zip(self.origin, self.shape)]
        Z, Y, X = np.meshgrid(axes[2], axes[1], axes[0], indexing="ij")
        return np.column_stack([X.ravel(), Y.ravel(), Z.ravel()])

    def element_ijk(self, e):
        nx, ny, _ = self.shape
        e = np.asarray(e)
        return np.stack([e % nx, (e // nx) % ny, e // (nx * ny)], axis=-1)

    def element_index(self, i, j, k):
        nx, ny, _ = self.shape
        return i + nx * (j + ny * k)

    def element_nodes(self, elements=None):
        """(n, 8) node indices of the given elements (all by default)."""
        if elements is None:
            elements = np.arange(self.n_el)
        ijk = self.element_ijk(elements)
        mx, my, _ = self.node_shape
        corners = ijk[:, None, :] + HEX_CORNERS[None, :, :]
        return corners[..., 0] + mx * (corners[..., 1] + my * corners[..., 2])

    def element_dofs(self, elements=None):
        nodes = self.element_nodes(elements)
        return (3 * nodes[:, :, None] + np.arange(3)).reshape(nodes.shape[0], 24)

    def shape_functions(self, points, elements):
        """Trilinear shape-function values (n, 8) of points inside given elements."""
        ijk = self.element_ijk(elements)
        local = (np.asarray(points) - np.asarray(self.origin)) / self.h - ijk
        local = np.clip(local, 0.0, 1.0)
        N = np.ones((local.shape[0], 8))
        for a in range(8):
            for d in range(3):
                N[:, a] *= np.where(HEX_CORNERS[a, d] == 1, local[:, d], 1.0 - local[:, d])
        return N

    def locate(self, points):
        """Element index containing each point (-1 outside)."""
        ijk = np.floor((np.asarray(points) - np.asarray(self.origin)) / self.h).astype(np.int64)
        inside = np.all((ijk >= 0) & (ijk < np.asarray(self.shape)), axis=1)
        out = -np.ones(ijk.shape[0], dtype=np.int64)
        out[inside] = self.element_index(*ijk[inside].T)
        return out


def reference_element_stiffness(h, nu):
    """24x24 stiffness of a cubic trilinear element with unit Young's modulus.

    Integrated with 2x2x2 Gauss points; dof order is (x, y, z) per node
    following ``HEX_CORNERS``.
    """
    if h <= 0:
        raise ValueError("element size must be positive")
    lam = nu / ((1 + nu) * (1 - 2 * nu))
    mu = 1.0 / (2 * (1 + nu))
    C = np.zeros((6, 6))
    C[:3, :3] = lam
    C[np.arange(3), np.arange(3)] = lam + 2 * mu
    C[np.arange(3, 6), np.arange(3, 6)] = mu
    g = 0.5 - 0.5 / np.sqrt(3.0), 0.5 + 0.5 / np.sqrt(3.0)
    K = np.zeros((24, 24))
    for x in g:
        for y in g:
            for z in g:
                B = strain_displacement(np.array([x, y, z]), h)
                K += B.T @ C @ B * (h**3 / 8.0)
    return K


def strain_displacement(local, h):
    """6x24 strain-displacement matrix at local coordinates in [0, 1]^3."""
    dN = np.empty((8, 3))
    for a, (cx, cy, cz) in enumerate(HEX_CORNERS):
        fx = local[0] if cx else 1 - local[0]
        fy = local[1] if cy else 1 - local[1]
        fz = local[2] if cz else 1 - local[2]
        sx, sy, sz = (1 if cx else -1), (1 if cy else -1), (1 if cz else -1)
        dN[a] = (sx * fy * fz / h, fx * sy * fz / h, fx * fy * sz / h)
    B = np.zeros((6, 24))
    B[0, 0::3] = dN[:, 0]
    B[1, 1::3] = dN[:, 1]
    B[2, 2::3] = dN[:, 2]
    B[3, 0::3], B[3, 1::3] = dN[:, 1], dN[:, 0]
    B[4, 1::3], B[4, 2::3] = dN[:, 2], dN[:, 1]
    B[5, 0::3], B[5, 2::3] = dN[:, 2], dN[:, 0]
    return B


def elasticity_matrix(nu):
    lam = nu / ((1 + nu) * (1 - 2 * nu))
    mu = 1.0 / (2 * (1 + nu))
    C = np.zeros((6, 6))
    C[:3, :3] = lam
    C[np.arange(3), np.arange(3)] = lam + 2 * mu
    C[np.arange(3, 6), np.arange(3, 6)] = mu
    return C


@dataclass
class ElasticModel:
    """Grid, per-element Young's modulus, supports and strut springs."""

    grid: VoxelGrid
    E: np.ndarray
    nu: float = 0.3
    fixed_dofs: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.int64))
    spring_dofs: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.int64))
    spring_k: np.ndarray = field(default_factory=lambda: np.zeros(0))

    def __post_init__(self):
        self.E = np.asarray(self.E, dtype=float)
        if self.E.shape != (self.grid.n_el,):
            raise ValueError("E must have one value per element")
        if not 0.0 < self.nu < 0.5:
            raise ValueError("Poisson ratio must lie in (0, 0.5)")
        self.fixed_dofs = np.unique(np.asarray(self.fixed_dofs, dtype=np.int64))
        if self.fixed_dofs.size == 0:
            raise ValueError("at least one fixed dof is required")

    def with_modulus(self, E):
        return replace(self, E=np.asarray(E, dtype=float))

    @property
    def k0(self):
        return reference_element_stiffness(self.grid.h, self.nu)

    def spring_vector(self):
        s = np.zeros(self.grid.n_dofs)
        np.add.at(s, self.spring_dofs, self.spring_k)
        return s

    def free_mask(self):
        """Dofs that are neither clamped nor detached from every active element."""
        free = np.ones(self.grid.n_dofs, dtype=bool)
        free[self.fixed_dofs] = False
        return free & self.supported_mask()

    def supported_mask(self):
        """Dofs touched by an element with E > 0 or by a spring."""
        d = multigrid._diag(self.E, self.k0, np.zeros((1, 24, 24)), False,
                            self.grid.shape, self.grid.n_dofs)
        return (d + self.spring_vector()) > 0

    def assemble(self):
        """Global sparse stiffness (springs included, fixed dofs not removed)."""
        edofs = self.grid.element_dofs()
        k0 = self.k0
        rows = np.repeat(edofs, 24, axis=1).ravel()
        cols = np.tile(edofs, (1, 24)).ravel()
        vals = (self.E[:, None, None] * k0[None]).ravel()
        K = sp.coo_matrix((vals, (rows, cols)), shape=(self.grid.n_dofs,) * 2).tocsr()
        if self.spring_dofs.size:
            K = K + sp.diags(self.spring_vector())
        return K

    def apply(self, u):
        """Matrix-free K @ u (springs included, no boundary conditions)."""
        return multigrid.apply_hex(u, self.E, self.k0, self.grid.shape) + self.spring_vector() * u


def clamp_strips(grid: VoxelGrid, x_ranges, y=0.0):
    """Dofs of all nodes on the plane ``y`` whose x lies in one of ``x_ranges``.

    Each strip spans the full z extent of the grid.
    """
    coords = grid.node_coordinates()
    on_plane = np.abs(coords[:, 1] - y) < 1e-9 * max(1.0, grid.h) + 0.5 * grid.h * 1e-6
    sel = np.zeros(grid.n_nodes, dtype=bool)
    for lo, hi in x_ranges:
        sel |= on_plane & (coords[:, 0] >= lo - 1e-9) & (coords[:, 0] <= hi + 1e-9)
    nodes = np.flatnonzero(sel)
    if nodes.size == 0:
        raise ValueError("clamped strips contain no grid nodes")
    return (3 * nodes[:, None] + np.arange(3)).ravel()


def strut_stiffness(area, modulus, length):
    """Axial stiffness of the strut, k = A E / l."""
    return area * modulus / length


def add_strut_springs(model: ElasticModel, k, center, side):
    """Distribute a total translational stiffness ``k`` over the nodes in a cube.

    Every node inside the cube (side length ``side`` around ``center``)
    receives ``k / n_nodes`` on each of its three translational dofs.
    """
    if k == 0:
        return model
    coords = model.grid.node_coordinates()
    inside = np.all(np.abs(coords - np.asarray(center)) <= 0.5 * side + 1e-12, axis=1)
    nodes = np.flatnonzero(inside)
    if nodes.size == 0:
        raise ValueError("strut fixation box contains no grid nodes")
    dofs = (3 * nodes[:, None] + np.arange(3)).ravel()
    share = np.full(dofs.size, k / nodes.size)
    return replace(model, spring_dofs=np.concatenate([model.spring_dofs, dofs]),
                   spring_k=np.concatenate([model.spring_k, share]))


@dataclass
class SolveInfo:
    iterations: int
    residual: float
    history: list


class SolverError(RuntimeError):
    def __init__(self, message, history=()):
        super().__init__(message)
        self.history = list(history)


class ElasticitySolver:
    """Solves ``K u = p`` for one model; reusable across load cases.

    ``method="direct"`` factorizes the assembled free-dof matrix,
    ``method="mgcg"`` runs CG preconditioned by a Galerkin geometric
    multigrid V-cycle, ``"auto"`` picks direct below ``direct_limit`` dofs.
    """

    def __init__(self, model: ElasticModel, method="auto", tol=1e-8, max_iter=500,
                 direct_limit=60000, coarse_dofs=40000):
        self.model = model
        self.tol = tol
        self.max_iter = max_iter
        self.coarse_dofs = coarse_dofs
        if method == "auto":
            method = "direct" if model.grid.n_dofs <= direct_limit else "mgcg"
        self.method = method
        self.free = model.free_mask()
        self._lu = None
        self._mg = None

    def _setup(self):
        if self.method == "direct" and self._lu is None:
            K = self.model.assemble()
            idx = np.flatnonzero(self.free)
            Kff = K[idx][:, idx].tocsc()
            self._lu = spla.splu(Kff)
            self._Kff = Kff
        elif self.method == "mgcg" and self._mg is None:
            m = self.model
            self._mg = multigrid.GalerkinMultigrid(m.grid.shape, m.E, m.k0, self.free,
                                                   m.spring_vector(), coarse_dofs=self.coarse_dofs)

    def solve(self, p, x0=None):
        p = np.asarray(p, dtype=float)
        if not np.all(np.isfinite(p)):
            raise ValueError("load vector contains non-finite values")
        u = np.zeros_like(p)
        detached = ~self.model.supported_mask()
        if np.any(p[detached] != 0):
            raise ValueError("load applied to dofs of inactive elements")
        pf = p * self.free
        if not np.any(pf):
            return u, SolveInfo(0, 0.0, [0.0])
        self._setup()
        if self.method == "direct":
            idx = np.flatnonzero(self.free)
            u[idx] = self._lu.solve(p[idx])
            res = np.linalg.norm(self._Kff @ u[idx] - p[idx]) / np.linalg.norm(p[idx])
            return u, SolveInfo(1, float(res), [float(res)])
        if self.method != "mgcg":
            raise ValueError(f"unknown solver method {self.method!r}")
        x, hist = multigrid.pcg(self._mg, pf, x0=None if x0 is None else x0 * self.free,
                                tol=self.tol, max_iter=self.max_iter)
        if hist[-1] > self.tol:
            raise SolverError(f"elasticity solve did not converge: residual {hist[-1]:.3e}",
                              hist)
        return x, SolveInfo(len(hist) - 1, hist[-1], hist)


def solve_elasticity(model: ElasticModel, p, method="auto", tol=1e-8, max_iter=500):
    """Displacements for load ``p`` (fixed dofs carry zero displacement)."""
    return ElasticitySolver(model, method, tol, max_iter).solve(p)[0]


def compliance(u, p):
    """C = p . u"""
    return float(np.dot(p, u))


def structure_weight(rho_d, w_structure, h):
    """Weight of the structure from the dilated physical density."""
    return float(w_structure * h**3 * np.sum(rho_d))


def element_energies(u, grid: VoxelGrid, k0):
    """u_e^T k0 u_e per element (unit modulus)."""
    return multigrid.element_energy(u, k0, grid.shape)


def strain_energy_density(u, E, grid: VoxelGrid, nu):
    """Strain energy density 1/2 eps^T C eps at the element centroids (J/m^3)."""
    B = strain_displacement(np.array([0.5, 0.5, 0.5]), grid.h)
    C = elasticity_matrix(nu)
    out = np.empty(grid.n_el)
    chunk = 200000
    for start in range(0, grid.n_el, chunk):
        el = np.arange(start, min(grid.n_el, start + chunk))
        ue = u[grid.element_dofs(el)]
        eps = ue @ B.T
        out[el] = 0.5 * np.einsum("ei,ij,ej->e", eps, C, eps) * E[el]
    return out
