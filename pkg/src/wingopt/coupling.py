"""Coupling between the panel surface and the voxel grid.

* inside fractions xi of every element (exact polyhedral volume per
  element, with a ray-parity subsampling variant kept for cross-checks),
* panel/element intersection records and the conservative load transfer
  built from them, together with its exact transpose,
* finite-difference sensitivities of xi to surface node motion.

Only the part of the wing on the grid side of the symmetry plane
(y >= grid origin) is coupled; the mirrored half is aerodynamic only.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
from numba import njit

from .fem import VoxelGrid
from .geometry import PanelMesh

logger = logging.getLogger(__name__)

_MAXV = 24  # vertex buffer of a clipped triangle (3 + one per clip plane)


class GridBoundaryError(RuntimeError):
    """The wing surface leaves the structural grid."""


# ---------------------------------------------------------------------------
# polygon clipping kernels
# ---------------------------------------------------------------------------

@njit(cache=True, inline="always")
def _clip(src, n, dst, axis, value, keep_above):
    """Sutherland-Hodgman clip of polygon ``src[:n]`` by one axis-aligned plane."""
    m = 0
    if n == 0:
        return 0
    for a in range(n):
        b = (a + 1) % n
        da = src[a, axis] - value
        db = src[b, axis] - value
        if not keep_above:
            da, db = -da, -db
        if da >= 0.0:
            for c in range(3):
                dst[m, c] = src[a, c]
            m += 1
        if (da >= 0.0) != (db >= 0.0):
            t = da / (da - db)
            for c in range(3):
                dst[m, c] = src[a, c] + t * (src[b, c] - src[a, c])
            m += 1
    return m


@njit(cache=True, inline="always")
def _area_xy_and_zint(poly, n):
    """Projected area and integral of z over the projection (fan of triangles)."""
    area = 0.0
    zint = 0.0
    for a in range(1, n - 1):
        cr = ((poly[a, 0] - poly[0, 0]) * (poly[a + 1, 1] - poly[0, 1])
              - (poly[a, 1] - poly[0, 1]) * (poly[a + 1, 0] - poly[0, 0]))
        ar = 0.5 * abs(cr)
        area += ar
        zint += ar * (poly[0, 2] + poly[a, 2] + poly[a + 1, 2]) / 3.0
    return area, zint


@njit(cache=True)
def _column_kernel(tris, weights, origin, h, shape, part, full):
    """Accumulate weighted signed volumes of the solid under each triangle.

    For a closed outward-oriented surface the sum over all triangles gives
    the exact volume of solid in every element; ``full[k, j, i]`` collects
    contributions valid for all layers below ``k`` (suffix-summed later).
    """
    nx, ny, nz = shape
    bufa = np.empty((_MAXV, 3))
    bufb = np.empty((_MAXV, 3))
    bufc = np.empty((_MAXV, 3))
    for t in range(tris.shape[0]):
        p0, p1, p2 = tris[t, 0], tris[t, 1], tris[t, 2]
        crz = (p1[0] - p0[0]) * (p2[1] - p0[1]) - (p1[1] - p0[1]) * (p2[0] - p0[0])
        if crz == 0.0:
            continue
        w = weights[t] * (1.0 if crz > 0 else -1.0)
        xmin = min(p0[0], p1[0], p2[0]); xmax = max(p0[0], p1[0], p2[0])
        ymin = min(p0[1], p1[1], p2[1]); ymax = max(p0[1], p1[1], p2[1])
        i0 = max(0, int(np.floor((xmin - origin[0]) / h)))
        i1 = min(nx - 1, int(np.floor((xmax - origin[0]) / h)))
        j0 = max(0, int(np.floor((ymin - origin[1]) / h)))
        j1 = min(ny - 1, int(np.floor((ymax - origin[1]) / h)))
        for i in range(i0, i1 + 1):
            xa = origin[0] + i * h
            for j in range(j0, j1 + 1):
                ya = origin[1] + j * h
                for c in range(3):
                    bufa[0, c] = p0[c]; bufa[1, c] = p1[c]; bufa[2, c] = p2[c]
                n = _clip(bufa, 3, bufb, 0, xa, True)
                n = _clip(bufb, n, bufa, 0, xa + h, False)
                n = _clip(bufa, n, bufb, 1, ya, True)
                n = _clip(bufb, n, bufa, 1, ya + h, False)
                if n < 3:
                    continue
                A, zint = _area_xy_and_zint(bufa, n)
                if A <= 0.0:
                    continue
                zlo = bufa[0, 2]; zhi = bufa[0, 2]
                for a in range(1, n):
                    zlo = min(zlo, bufa[a, 2]); zhi = max(zhi, bufa[a, 2])
                klo = int(np.floor((zlo - origin[2]) / h))
                khi = int(np.floor((zhi - origin[2]) / h))
                if klo >= nz:
                    continue
                if klo >= 0:
                    full[klo, j, i] += w * A * h
                else:
                    full[0, j, i] += w * A * h
                    klo = 0
                khi = min(khi, nz - 1)
                # positive-part integrals I(t) = int max(z - t, 0) dA
                prev = 0.0
                for k in range(klo, khi + 2):
                    zt = origin[2] + k * h
                    m = _clip(bufa, n, bufc, 2, zt, True)
                    if m >= 3:
                        Ak, zk = _area_xy_and_zint(bufc, m)
                        cur = zk - zt * Ak
                    else:
                        cur = 0.0
                    if k > klo:
                        part[k - 1, j, i] += w * (prev - cur)
                    prev = cur
                # layers between klo and khi already include the full share
                part[klo, j, i] -= w * A * h
    return part, full


def _finish_columns(part, full, h):
    suffix = np.cumsum(full[::-1], axis=0)[::-1]
    vol = part + suffix
    return (vol / h**3).ravel()


def check_inside_grid(nodes, grid: VoxelGrid, tol=1e-12):
    """Raise if the coupled half of the surface leaves the grid box."""
    lower = np.asarray(grid.origin)
    upper = np.asarray(grid.upper)
    half = nodes[nodes[:, 1] >= lower[1] - tol]
    if half.size == 0:
        raise GridBoundaryError("no surface nodes on the grid side of the symmetry plane")
    lo, hi = half.min(axis=0), half.max(axis=0)
    bad = (lo < lower - tol) | (hi > upper + tol)
    bad[1] = hi[1] > upper[1] + tol
    if np.any(bad):
        raise GridBoundaryError(
            f"wing bounding box [{lo.round(4)}, {hi.round(4)}] exceeds grid "
            f"[{lower.round(4)}, {upper.round(4)}]")


def inside_fractions(tris, grid: VoxelGrid, method="exact", k=4):
    """Element volume fraction inside the closed, outward-oriented triangle soup."""
    tris = np.ascontiguousarray(tris, dtype=float)
    if method == "exact":
        return _exact_fractions(tris, np.ones(tris.shape[0]), grid)
    if method == "sampled":
        return _sampled_fractions(tris, grid, k)
    raise ValueError(f"unknown inside-fraction method {method!r}")


def _exact_fractions(tris, weights, grid: VoxelGrid):
    nx, ny, nz = grid.shape
    part = np.zeros((nz, ny, nx))
    full = np.zeros((nz, ny, nx))
    _column_kernel(tris, weights, np.asarray(grid.origin, dtype=float), grid.h,
                   np.array(grid.shape), part, full)
    return _finish_columns(part, full, grid.h)


@njit(cache=True)
def _ray_crossings(tris, origin, h, shape, k, shift):
    """z of every triangle crossing on each vertical sample ray."""
    nx, ny, _ = shape
    ncx, ncy = nx * k, ny * k
    cap = 1024
    cols = np.empty(cap, dtype=np.int64)
    zs = np.empty(cap)
    m = 0
    for t in range(tris.shape[0]):
        p0, p1, p2 = tris[t, 0], tris[t, 1], tris[t, 2]
        det = (p1[0] - p0[0]) * (p2[1] - p0[1]) - (p1[1] - p0[1]) * (p2[0] - p0[0])
        if det == 0.0:
            continue
        xmin = min(p0[0], p1[0], p2[0]); xmax = max(p0[0], p1[0], p2[0])
        ymin = min(p0[1], p1[1], p2[1]); ymax = max(p0[1], p1[1], p2[1])
        s = h / k
        a0 = max(0, int(np.ceil((xmin - origin[0] - shift[0]) / s - 0.5)))
        a1 = min(ncx - 1, int(np.floor((xmax - origin[0] - shift[0]) / s - 0.5)))
        b0 = max(0, int(np.ceil((ymin - origin[1] - shift[1]) / s - 0.5)))
        b1 = min(ncy - 1, int(np.floor((ymax - origin[1] - shift[1]) / s - 0.5)))
        for a in range(a0, a1 + 1):
            x = origin[0] + shift[0] + (a + 0.5) * s
            for b in range(b0, b1 + 1):
                y = origin[1] + shift[1] + (b + 0.5) * s
                l1 = ((x - p0[0]) * (p2[1] - p0[1]) - (y - p0[1]) * (p2[0] - p0[0])) / det
                l2 = ((p1[0] - p0[0]) * (y - p0[1]) - (p1[1] - p0[1]) * (x - p0[0])) / det
                if l1 < 0.0 or l2 < 0.0 or l1 + l2 > 1.0:
                    continue
                if m == cap:
                    cap *= 2
                    cols2 = np.empty(cap, dtype=np.int64); cols2[:m] = cols[:m]
                    zs2 = np.empty(cap); zs2[:m] = zs[:m]
                    cols, zs = cols2, zs2
                cols[m] = a + ncx * b
                zs[m] = p0[2] + l1 * (p1[2] - p0[2]) + l2 * (p2[2] - p0[2])
                m += 1
    return cols[:m], zs[:m]


def _sampled_fractions(tris, grid: VoxelGrid, k):
    """k^3 sample points per element, inside by parity of crossings above."""
    nx, ny, nz = grid.shape
    # fixed irrational offset keeps rays off mesh edges and vertices
    shift = grid.h / k * np.array([(np.sqrt(2) - 1) * 1e-6, (np.sqrt(3) - 1) * 1e-6])
    cols, zs = _ray_crossings(tris, np.asarray(grid.origin, float), grid.h,
                              np.array(grid.shape), k, shift)
    ncx, ncy = nx * k, ny * k
    order = np.lexsort((zs, cols))
    cols, zs = cols[order], zs[order]
    starts = np.searchsorted(cols, np.arange(ncx * ncy + 1))
    zsamp = grid.origin[2] + (np.arange(nz * k) + 0.5) * grid.h / k
    count = np.zeros((nz, ny, nx))
    for c in np.unique(cols):
        zc = zs[starts[c]:starts[c + 1]]
        above = zc.size - np.searchsorted(zc, zsamp, side="right")
        inside = (above % 2 == 1).reshape(nz, k).sum(axis=1)
        a, b = c % ncx, c // ncx
        count[:, b // k, a // k] += inside
    return (count / k**3).ravel()


# ---------------------------------------------------------------------------
# panel / element intersections and load transfer
# ---------------------------------------------------------------------------

@njit(cache=True)
def _clip_triangles(tris, owner, origin, h, shape, min_area):
    nx, ny, nz = shape
    cap = 4 * tris.shape[0] + 16
    r_owner = np.empty(cap, dtype=np.int64)
    r_elem = np.empty(cap, dtype=np.int64)
    r_area = np.empty(cap)
    r_cent = np.empty((cap, 3))
    bufa = np.empty((_MAXV, 3))
    bufb = np.empty((_MAXV, 3))
    m = 0
    for t in range(tris.shape[0]):
        lo = np.empty(3, dtype=np.int64)
        hi = np.empty(3, dtype=np.int64)
        dims = (nx, ny, nz)
        for c in range(3):
            vmin = min(tris[t, 0, c], tris[t, 1, c], tris[t, 2, c])
            vmax = max(tris[t, 0, c], tris[t, 1, c], tris[t, 2, c])
            lo[c] = max(0, int(np.floor((vmin - origin[c]) / h)))
            hi[c] = min(dims[c] - 1, int(np.floor((vmax - origin[c]) / h)))
        for k in range(lo[2], hi[2] + 1):
            for j in range(lo[1], hi[1] + 1):
                for i in range(lo[0], hi[0] + 1):
                    for a in range(3):
                        for c in range(3):
                            bufa[a, c] = tris[t, a, c]
                    n = 3
                    box = (i, j, k)
                    for c in range(3):
                        v0 = origin[c] + box[c] * h
                        n = _clip(bufa, n, bufb, c, v0, True)
                        n = _clip(bufb, n, bufa, c, v0 + h, False)
                    if n < 3:
                        continue
                    ax = 0.0; ay = 0.0; az = 0.0
                    cx = 0.0; cy = 0.0; cz = 0.0
                    for a in range(1, n - 1):
                        ux = bufa[a, 0] - bufa[0, 0]; uy = bufa[a, 1] - bufa[0, 1]
                        uz = bufa[a, 2] - bufa[0, 2]
                        vx = bufa[a + 1, 0] - bufa[0, 0]; vy = bufa[a + 1, 1] - bufa[0, 1]
                        vz = bufa[a + 1, 2] - bufa[0, 2]
                        wx = uy * vz - uz * vy; wy = uz * vx - ux * vz; wz = ux * vy - uy * vx
                        ar = 0.5 * np.sqrt(wx * wx + wy * wy + wz * wz)
                        ax += ar
                        cx += ar * (bufa[0, 0] + bufa[a, 0] + bufa[a + 1, 0]) / 3.0
                        cy += ar * (bufa[0, 1] + bufa[a, 1] + bufa[a + 1, 1]) / 3.0
                        cz += ar * (bufa[0, 2] + bufa[a, 2] + bufa[a + 1, 2]) / 3.0
                    if ax < min_area:
                        continue
                    if m == cap:
                        cap *= 2
                        o2 = np.empty(cap, dtype=np.int64); o2[:m] = r_owner[:m]
                        e2 = np.empty(cap, dtype=np.int64); e2[:m] = r_elem[:m]
                        a2 = np.empty(cap); a2[:m] = r_area[:m]
                        c2 = np.empty((cap, 3)); c2[:m] = r_cent[:m]
                        r_owner, r_elem, r_area, r_cent = o2, e2, a2, c2
                    r_owner[m] = owner[t]
                    r_elem[m] = i + nx * (j + ny * k)
                    r_area[m] = ax
                    r_cent[m, 0] = cx / ax; r_cent[m, 1] = cy / ax; r_cent[m, 2] = cz / ax
                    m += 1
    return r_owner[:m], r_elem[:m], r_area[:m], r_cent[:m]


@dataclass
class Intersections:
    """Merged (panel, element) intersection records."""

    panel: np.ndarray       # panel id per record
    element: np.ndarray     # element id per record
    area: np.ndarray        # intersection area (m^2)
    centroid: np.ndarray    # (n, 3) area-weighted centroid
    shape_values: np.ndarray  # (n, 8) trilinear shape functions at the centroid
    panels: np.ndarray      # ids of all coupled panels
    panel_area: np.ndarray  # clipped-triangle area of each coupled panel

    def __len__(self):
        return self.panel.size


def coupled_panels(mesh: PanelMesh, grid: VoxelGrid):
    """Panels on the grid side of the symmetry plane."""
    ymin = mesh.nodes[mesh.quads, 1].min(axis=1)
    return np.flatnonzero(ymin >= grid.origin[1] - 1e-12)


def panel_element_intersections(mesh: PanelMesh, grid: VoxelGrid, panels=None,
                                min_area=1e-14, check=True):
    """Clip every triangle of the coupled panels against the element boxes."""
    if panels is None:
        panels = coupled_panels(mesh, grid)
    if check:
        check_inside_grid(mesh.nodes[np.unique(mesh.quads[panels])], grid)
    a, b = mesh.triangles()
    tris = np.concatenate([a[panels], b[panels]])
    owner = np.concatenate([panels, panels])
    owner_area = 0.5 * np.linalg.norm(np.cross(tris[:, 1] - tris[:, 0],
                                               tris[:, 2] - tris[:, 0]), axis=1)
    ro, re, ra, rc = _clip_triangles(np.ascontiguousarray(tris), owner,
                                     np.asarray(grid.origin, float), grid.h,
                                     np.array(grid.shape), min_area)
    # merge the two triangles of a panel that fall into the same element
    key = ro * grid.n_el + re
    uk, inv = np.unique(key, return_inverse=True)
    area = np.bincount(inv, weights=ra)
    cent = np.stack([np.bincount(inv, weights=ra * rc[:, c]) for c in range(3)], axis=1)
    cent /= area[:, None]
    panel = uk // grid.n_el
    elem = uk % grid.n_el
    panel_area = np.zeros(mesh.n_panels)
    np.add.at(panel_area, owner, owner_area)
    return Intersections(panel, elem, area, cent, grid.shape_functions(cent, elem),
                         np.asarray(panels), panel_area[panels])


class LoadMap:
    """Linear map from panel pressures to nodal forces, fixed for one wing shape.

    ``T[3 * node + c, j] = -n_j[c] * A_ij * N_a(centroid_ij)``; the nodal load
    is ``T @ p`` and the transposed transfer is ``T.T @ lam``.
    """

    def __init__(self, records: Intersections, normals, grid: VoxelGrid):
        self.records = records
        self.grid = grid
        self.normals = np.asarray(normals)[records.panels]
        self.n_panels = np.asarray(normals).shape[0]
        nodes = grid.element_nodes(records.element)            # (n, 8)
        nrm = np.asarray(normals)[records.panel]               # (n, 3)
        w = records.area[:, None] * records.shape_values       # (n, 8)
        rows = (3 * nodes[:, :, None] + np.arange(3)).ravel()
        vals = (-w[:, :, None] * nrm[:, None, :]).ravel()
        cols = np.repeat(records.panel, 24)
        self.T = sp.csr_matrix((vals, (rows, cols)), shape=(grid.n_dofs, self.n_panels))
        self.loaded_elements = np.unique(records.element)

    @classmethod
    def from_mesh(cls, mesh: PanelMesh, grid: VoxelGrid):
        return cls(panel_element_intersections(mesh, grid), mesh.normals, grid)

    def transfer(self, pressure):
        pressure = np.asarray(pressure, dtype=float)
        if pressure.shape != (self.n_panels,):
            raise ValueError("pressure vector does not match the panel mesh")
        return self.T @ pressure

    def transpose(self, lam):
        lam = np.asarray(lam, dtype=float)
        if lam.shape != (self.grid.n_dofs,):
            raise ValueError("adjoint vector does not match the grid")
        return self.T.T @ lam


def transfer_loads(cp, q_inf, load_map: LoadMap):
    """Nodal loads from panel pressure coefficients, p_j = q_inf * Cp_j."""
    return load_map.transfer(q_inf * np.asarray(cp))


def transpose_transfer(lam, load_map: LoadMap):
    """Adjoint of the panel-pressure to nodal-load map."""
    return load_map.transpose(lam)


# ---------------------------------------------------------------------------
# sensitivities of xi to surface motion
# ---------------------------------------------------------------------------

def _moved_triangles(mesh: PanelMesh, node_motion):
    """Indices of triangles with a moving vertex, following ``triangle_soup`` layout."""
    moving = np.any(node_motion != 0.0, axis=1)
    q = mesh.quads
    ta = moving[q[:, [0, 1, 2]]].any(axis=1)
    tb = moving[q[:, [0, 2, 3]]].any(axis=1)
    return ta, tb


def xi_directional_derivative(mesh: PanelMesh, grid: VoxelGrid, node_motion, delta):
    """Central difference of xi along a surface-node motion field.

    ``node_motion`` has one 3-vector per mesh node; only triangles touching a
    moving node are re-integrated, the rest cancel exactly.
    """
    if delta <= 0:
        raise ValueError("finite-difference step must be positive")
    node_motion = np.asarray(node_motion, dtype=float)
    ta, tb = _moved_triangles(mesh, node_motion)
    if not (ta.any() or tb.any()):
        return np.zeros(grid.n_el)
    sel = [(mesh.quads[ta][:, [0, 1, 2]]), (mesh.quads[tb][:, [0, 2, 3]])]
    idx = np.concatenate(sel)
    plus = mesh.nodes + delta * node_motion
    minus = mesh.nodes - delta * node_motion
    tris = np.concatenate([plus[idx], minus[idx]])
    w = np.concatenate([np.full(len(idx), 0.5 / delta), np.full(len(idx), -0.5 / delta)])
    return _exact_fractions(np.ascontiguousarray(tris), w, grid)


def xi_node_sensitivity(mesh: PanelMesh, grid: VoxelGrid, node, axis, delta=None,
                        elements=None):
    """d xi / d (coordinate ``axis`` of surface node ``node``) by central differences."""
    delta = 1e-3 * grid.h if delta is None else delta
    motion = np.zeros_like(mesh.nodes)
    motion[node, axis] = 1.0
    d = xi_directional_derivative(mesh, grid, motion, delta)
    return d if elements is None else d[np.asarray(elements)]
