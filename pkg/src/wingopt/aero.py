"""Constant-strength source/doublet panel method with a Trefftz-plane force evaluation.

Internal Dirichlet formulation: the perturbation potential inside the
closed surface is zero, so the doublet strength equals the outer
perturbation potential on the surface.  With ``A`` the doublet and ``B``
the source influence matrices (rows: collocation points, columns: panels)
the boundary condition reads ``A mu + B sigma = 0`` with
``sigma = U_inf . n``.  A panel's influence on its own collocation point
is 1/2 for the doublet.

Quadrilateral panels are integrated as two flat triangles (split along
the 0-2 diagonal) so the discrete surface stays watertight.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass

import numba as nb
import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp

from .geometry import PanelMesh

logger = logging.getLogger(__name__)

FOUR_PI = 4.0 * np.pi


# ---------------------------------------------------------------------------
# Influence kernels
# ---------------------------------------------------------------------------

@nb.njit(cache=True)
def _tri_influence(px, py, pz, t):
    """Doublet (solid angle / 4pi) and source (-1/4pi int 1/r) of one flat triangle.

    The doublet value is positive when the point lies on the side opposite
    to the triangle normal (0->1 x 0->2).
    """
    ax, ay, az = t[0, 0] - px, t[0, 1] - py, t[0, 2] - pz
    bx, by, bz = t[1, 0] - px, t[1, 1] - py, t[1, 2] - pz
    cx, cy, cz = t[2, 0] - px, t[2, 1] - py, t[2, 2] - pz
    ra = np.sqrt(ax * ax + ay * ay + az * az)
    rb = np.sqrt(bx * bx + by * by + bz * bz)
    rc = np.sqrt(cx * cx + cy * cy + cz * cz)
    # van Oosterom-Strackee solid angle
    num = ax * (by * cz - bz * cy) + ay * (bz * cx - bx * cz) + az * (bx * cy - by * cx)
    den = (ra * rb * rc + (ax * bx + ay * by + az * bz) * rc
           + (ax * cx + ay * cy + az * cz) * rb + (bx * cx + by * cy + bz * cz) * ra)
    omega = 2.0 * np.arctan2(num, den)

    e1x, e1y, e1z = bx - ax, by - ay, bz - az
    e2x, e2y, e2z = cx - ax, cy - ay, cz - az
    nx = e1y * e2z - e1z * e2y
    ny = e1z * e2x - e1x * e2z
    nz = e1x * e2y - e1y * e2x
    area2 = np.sqrt(nx * nx + ny * ny + nz * nz)
    if area2 < 1e-300:
        return 0.0, 0.0
    nx /= area2
    ny /= area2
    nz /= area2
    z = -(ax * nx + ay * ny + az * nz)

    src = 0.0
    for k in range(3):
        if k == 0:
            v1x, v1y, v1z, r1 = ax, ay, az, ra
            v2x, v2y, v2z, r2 = bx, by, bz, rb
        elif k == 1:
            v1x, v1y, v1z, r1 = bx, by, bz, rb
            v2x, v2y, v2z, r2 = cx, cy, cz, rc
        else:
            v1x, v1y, v1z, r1 = cx, cy, cz, rc
            v2x, v2y, v2z, r2 = ax, ay, az, ra
        ex, ey, ez = v2x - v1x, v2y - v1y, v2z - v1z
        length = np.sqrt(ex * ex + ey * ey + ez * ez)
        if length < 1e-300:
            continue
        # in-plane outward edge normal: e x n
        ux = (ey * nz - ez * ny) / length
        uy = (ez * nx - ex * nz) / length
        uz = (ex * ny - ey * nx) / length
        d = v1x * ux + v1y * uy + v1z * uz
        denom = r1 + r2 - length
        if denom > 1e-13 * length:
            src += d * np.log((r1 + r2 + length) / denom)
    src -= abs(z) * abs(omega)
    return omega / FOUR_PI, -src / FOUR_PI


@nb.njit(cache=True)
def _influence_rows(points, self_panel, tri_a, tri_b, with_source):
    n_pts = points.shape[0]
    n_pan = tri_a.shape[0]
    A = np.empty((n_pts, n_pan))
    B = np.zeros((n_pts, n_pan)) if with_source else np.zeros((1, 1))
    for i in range(n_pts):
        px, py, pz = points[i, 0], points[i, 1], points[i, 2]
        for j in range(n_pan):
            da, sa = _tri_influence(px, py, pz, tri_a[j])
            db, sb = _tri_influence(px, py, pz, tri_b[j])
            A[i, j] = da + db
            if with_source:
                B[i, j] = sa + sb
        k = self_panel[i]
        if k >= 0:
            A[i, k] = 0.5
            if with_source:
                # own source sheet: the quad flattened onto its mean plane
                B[i, k] = _flat_quad_source(px, py, pz, tri_a[k], tri_b[k])
    return A, B


@nb.njit(cache=True)
def _flat_quad_source(px, py, pz, ta, tb):
    """Source influence of a quad (triangles 0-1-2, 0-2-3) on a point of its own sheet.

    The corners are projected onto the plane through the point normal to the
    diagonal cross product, so the shared diagonal drops out and the value
    depends smoothly on the corners even for warped panels.
    """
    q = np.empty((4, 3))
    q[0], q[1], q[2], q[3] = ta[0], ta[1], ta[2], tb[2]
    n = np.cross(q[2] - q[0], q[3] - q[1])
    nn = np.sqrt(n[0] * n[0] + n[1] * n[1] + n[2] * n[2])
    if nn < 1e-300:
        return 0.0
    n = n / nn
    for c in range(4):
        z = (q[c, 0] - px) * n[0] + (q[c, 1] - py) * n[1] + (q[c, 2] - pz) * n[2]
        q[c, 0] -= z * n[0] + px
        q[c, 1] -= z * n[1] + py
        q[c, 2] -= z * n[2] + pz
    src = 0.0
    for c in range(4):
        v1, v2 = q[c], q[(c + 1) % 4]
        e = v2 - v1
        length = np.sqrt(e[0] * e[0] + e[1] * e[1] + e[2] * e[2])
        if length < 1e-300:
            continue
        u = np.cross(e, n) / length
        d = v1[0] * u[0] + v1[1] * u[1] + v1[2] * u[2]
        r1 = np.sqrt(v1[0] * v1[0] + v1[1] * v1[1] + v1[2] * v1[2])
        r2 = np.sqrt(v2[0] * v2[0] + v2[1] * v2[1] + v2[2] * v2[2])
        denom = r1 + r2 - length
        if denom > 1e-13 * length:
            src += d * np.log((r1 + r2 + length) / denom)
    return -src / FOUR_PI


def panel_influence(points, tri_a, tri_b, self_panel=None, with_source=True):
    """Raw doublet/source influence of triangle-pair panels on arbitrary points."""
    points = np.ascontiguousarray(points, dtype=float).reshape(-1, 3)
    if self_panel is None:
        self_panel = -np.ones(points.shape[0], dtype=np.int64)
    A, B = _influence_rows(points, np.asarray(self_panel, dtype=np.int64),
                           np.ascontiguousarray(tri_a), np.ascontiguousarray(tri_b),
                           with_source)
    return A, (B if with_source else None)


# ---------------------------------------------------------------------------
# System assembly and solution
# ---------------------------------------------------------------------------

@dataclass
class InfluenceSystem:
    """Dense influence matrices with the wake folded into the TE columns."""

    A: np.ndarray
    B: np.ndarray
    _lu: tuple | None = None

    def factorize(self, max_condition=1e12):
        if self._lu is None:
            lu = sla.lu_factor(self.A, check_finite=True)
            anorm = np.abs(self.A).sum(axis=0).max()
            rcond, info = sla.lapack.dgecon(lu[0], anorm, norm="1")
            if info != 0 or rcond == 0.0 or 1.0 / rcond > max_condition:
                cond = np.inf if rcond == 0.0 else 1.0 / rcond
                raise np.linalg.LinAlgError(
                    f"aerodynamic influence matrix is ill-conditioned (cond ~ {cond:.3e})")
            self._lu = lu
        return self._lu

    def solve(self, rhs, transpose=False):
        return sla.lu_solve(self.factorize(), rhs, trans=1 if transpose else 0)


def fold_wake(A, W, mesh: PanelMesh):
    """Add wake influence columns into the TE panel columns (Kutta condition)."""
    np.add.at(A, (slice(None), mesh.te_upper), W)
    np.add.at(A, (slice(None), mesh.te_lower), -W)
    return A


def wake_influence(points, mesh: PanelMesh):
    wa, wb = mesh.wake_triangles()
    W, _ = panel_influence(points, wa, wb, with_source=False)
    return W


def assemble_surface(mesh: PanelMesh):
    """Wake-free doublet and source matrices; shared by all freestream directions."""
    ta, tb = mesh.triangles()
    return panel_influence(_safe_collocation(mesh), ta, tb, np.arange(mesh.n_panels))


def assemble_influence(mesh: PanelMesh, surface=None):
    """Dense ``A`` (doublet, wake folded) and ``B`` (source) influence matrices.

    ``surface`` may carry a precomputed ``assemble_surface`` result for the
    same surface; it is copied, not modified.
    """
    A, B = assemble_surface(mesh) if surface is None else (surface[0].copy(), surface[1])
    fold_wake(A, wake_influence(_safe_collocation(mesh), mesh), mesh)
    if not (np.all(np.isfinite(A)) and np.all(np.isfinite(B))):
        raise FloatingPointError("non-finite influence coefficients")
    return InfluenceSystem(A=A, B=B)


def influence_block(mesh: PanelMesh, rows, cols, wake=True):
    """Influence sub-blocks ``A[rows][:, cols]`` / ``B[rows][:, cols]``.

    With ``wake=True`` the wake strips feeding any requested TE column are
    folded in, matching the corresponding block of ``assemble_influence``.
    """
    rows = np.asarray(rows)
    cols = np.asarray(cols)
    ta, tb = mesh.triangles()
    pts = _safe_collocation(mesh)[rows]
    self_local = -np.ones(rows.size, dtype=np.int64)
    pos = {c: k for k, c in enumerate(cols)}
    for k, r in enumerate(rows):
        self_local[k] = pos.get(r, -1)
    A, B = panel_influence(pts, ta[cols], tb[cols], self_local)
    if not wake:
        return A, B
    # wake strips that feed any requested TE column
    strips = np.flatnonzero(np.isin(mesh.te_upper, cols) | np.isin(mesh.te_lower, cols))
    if strips.size:
        wa, wb = mesh.wake_triangles()
        W, _ = panel_influence(pts, wa[strips], wb[strips], with_source=False)
        for k, s in enumerate(strips):
            if mesh.te_upper[s] in pos:
                A[:, pos[mesh.te_upper[s]]] += W[:, k]
            if mesh.te_lower[s] in pos:
                A[:, pos[mesh.te_lower[s]]] -= W[:, k]
    return A, B


def wake_block(mesh: PanelMesh, rows, strips):
    """Doublet influence of the given wake strips (unit strength) on panels ``rows``."""
    pts = _safe_collocation(mesh)[np.asarray(rows)]
    wa, wb = mesh.wake_triangles()
    strips = np.asarray(strips)
    W, _ = panel_influence(pts, wa[strips], wb[strips], with_source=False)
    return W


def _safe_collocation(mesh: PanelMesh):
    """Collocation points; a point sitting on a panel edge is nudged inward."""
    pts = mesh.centroids.copy()
    q = mesh.nodes[mesh.quads]
    diag = np.linalg.norm(q[:, 2] - q[:, 0], axis=1)
    tol = 1e-10 * diag
    d = np.min(np.linalg.norm(q - pts[:, None, :], axis=2), axis=1)
    bad = np.flatnonzero(d < tol)
    if bad.size:
        logger.warning("collocation point on a panel vertex for %d panels; perturbing", bad.size)
        pts[bad] -= 1e-6 * diag[bad, None] * mesh.normals[bad]
    return pts


def compute_sources(mesh: PanelMesh, u_inf):
    """Source strengths sigma_i = U_inf . n_i."""
    return mesh.normals @ np.asarray(u_inf, dtype=float)


def solve_doublets(system: InfluenceSystem, sigma):
    """Doublet strengths from ``A mu = -B sigma`` (factorization kept on the system)."""
    rhs = -(system.B @ sigma)
    mu = system.solve(rhs)
    res = np.linalg.norm(system.A @ mu - rhs)
    scale = max(np.linalg.norm(rhs), 1e-300)
    if res > 1e-10 * scale and np.linalg.norm(rhs) > 0:
        raise np.linalg.LinAlgError(f"doublet solve residual {res / scale:.2e} too large")
    return mu


def freestream(speed, alpha_deg):
    """Freestream velocity vector for an angle of attack in the x-z plane."""
    a = np.deg2rad(alpha_deg)
    return speed * np.array([np.cos(a), 0.0, np.sin(a)])


# ---------------------------------------------------------------------------
# Surface velocities and pressures
# ---------------------------------------------------------------------------

def velocity_operator(mesh: PanelMesh):
    """Sparse operators mapping doublet strengths to tangential gradient components.

    Returns ``(Gx, Gy, Gz, flags)``: the global-frame tangential gradient of
    mu on panel ``i`` is ``(Gx @ mu, Gy @ mu, Gz @ mu)[i]``.  ``flags`` marks
    panels where at least one direction uses a one-sided difference.
    """
    n = mesh.n_panels
    c = mesh.centroids
    normals = mesh.normals
    frames = mesh.frames
    rows, cols, vals = [], [], []
    flags = np.zeros(n, dtype=bool)
    nbrs = mesh.neighbors
    for i in range(n):
        dirs = []
        for lo, hi in ((nbrs[i, 0], nbrs[i, 1]), (nbrs[i, 2], nbrs[i, 3])):
            if lo >= 0 and hi >= 0:
                dirs.append((hi, lo))
            elif hi >= 0:
                dirs.append((hi, i))
                flags[i] = True
            elif lo >= 0:
                dirs.append((i, lo))
                flags[i] = True
        if len(dirs) < 2:
            raise ValueError(f"panel {i} lacks neighbours in one direction")
        l, m = frames[i, 0], frames[i, 1]
        T = np.empty((2, 2))
        for k, (p, q) in enumerate(dirs):
            t = c[p] - c[q]
            t = t - np.dot(t, normals[i]) * normals[i]
            T[k] = (np.dot(t, l), np.dot(t, m))
        Tinv = np.linalg.inv(T)
        # gradient (l, m) = Tinv @ (mu_p - mu_q for each direction)
        for comp in range(3):
            for k, (p, q) in enumerate(dirs):
                w = Tinv[0, k] * l[comp] + Tinv[1, k] * m[comp]
                rows += [comp * n + i, comp * n + i]
                cols += [p, q]
                vals += [w, -w]
    G = sp.csr_matrix((vals, (rows, cols)), shape=(3 * n, n))
    G.sum_duplicates()
    return G[:n], G[n:2 * n], G[2 * n:], flags


def surface_velocity(mesh: PanelMesh, mu, sigma, u_inf, operator=None):
    """Total surface velocity per panel.

    Returns ``(U_global, U_local)`` where ``U_local`` holds the (l, m, n)
    components.  The tangential part is the freestream projection plus the
    surface gradient of mu; the perturbation normal velocity ``-sigma``
    cancels the freestream normal component.
    """
    Gx, Gy, Gz, flags = operator if operator is not None else velocity_operator(mesh)
    u_inf = np.asarray(u_inf, dtype=float)
    grad = np.column_stack([Gx @ mu, Gy @ mu, Gz @ mu])
    u_t = u_inf[None, :] - (mesh.normals @ u_inf)[:, None] * mesh.normals
    U = u_t + grad + (mesh.normals @ u_inf - sigma)[:, None] * mesh.normals
    U_local = np.einsum("pij,pj->pi", mesh.frames, U)
    return U, U_local


def pressure_coefficients(U, v_inf):
    """Bernoulli: Cp = 1 - |U|^2 / V_inf^2."""
    if v_inf <= 0:
        raise ValueError("freestream speed must be positive")
    U = np.asarray(U, dtype=float)
    return 1.0 - np.sum(U * U, axis=-1) / v_inf**2


# ---------------------------------------------------------------------------
# Trefftz plane
# ---------------------------------------------------------------------------

@dataclass
class TrefftzGeometry:
    """Wake trace in the far plane: strip end points and derived data."""

    eta: np.ndarray      # (n_strips+1,) in-plane spanwise coordinate of the trace nodes
    zeta: np.ndarray     # (n_strips+1,) in-plane vertical coordinate
    s: np.ndarray        # segment lengths
    theta: np.ndarray    # segment dihedral angles
    width: np.ndarray    # spanwise strip widths (for distributions)
    y_mid: np.ndarray    # strip mid-span positions

    @classmethod
    def from_mesh(cls, mesh: PanelMesh):
        w = mesh.wake_direction
        ey = np.array([0.0, 1.0, 0.0]) - w[1] * w
        ey /= np.linalg.norm(ey)
        ez = np.cross(w, ey)
        te = mesh.wake_nodes[: mesh.n_strips + 1]
        eta, zeta = te @ ey, te @ ez
        d_eta, d_zeta = np.diff(eta), np.diff(zeta)
        return cls(eta=eta, zeta=zeta, s=np.hypot(d_eta, d_zeta),
                   theta=np.arctan2(d_zeta, d_eta), width=np.abs(np.diff(te[:, 1])),
                   y_mid=0.5 * (te[1:, 1] + te[:-1, 1]))

    def normalwash_matrix(self):
        """Matrix M with (u.n)_i = sum_k M[i, k] mu_k for the strip wake strengths."""
        n = self.s.size
        # trailing vortex at trace node k has strength mu_{k-1} - mu_k
        mid_eta = 0.5 * (self.eta[1:] + self.eta[:-1])
        mid_zeta = 0.5 * (self.zeta[1:] + self.zeta[:-1])
        de = mid_eta[:, None] - self.eta[None, :]
        dz = mid_zeta[:, None] - self.zeta[None, :]
        r2 = de * de + dz * dz
        with np.errstate(divide="ignore", invalid="ignore"):
            ue = np.where(r2 > 0, -dz / (2 * np.pi * r2), 0.0)
            uz = np.where(r2 > 0, de / (2 * np.pi * r2), 0.0)
        nrm_e, nrm_z = -np.sin(self.theta), np.cos(self.theta)
        V = ue * nrm_e[:, None] + uz * nrm_z[:, None]       # per unit vortex strength
        # vortex strengths from mu: Gamma = D mu, D[k, k-1] = 1, D[k, k] = -1
        D = np.zeros((n + 1, n))
        D[np.arange(1, n + 1), np.arange(n)] = 1.0
        D[np.arange(n), np.arange(n)] -= 1.0
        return V @ D


def trefftz_forces(geom: TrefftzGeometry, mu_wake, rho, v_inf, M=None):
    """Lift, induced drag and their spanwise distributions (per unit span).

    ``L = rho V sum mu_i s_i cos(theta_i)`` and
    ``D = -1/2 rho sum mu_i s_i (u.n)_i`` with the normal wash from the 2D
    trailing-vortex system in the far plane.
    """
    mu_wake = np.asarray(mu_wake, dtype=float)
    if M is None:
        M = geom.normalwash_matrix()
    un = M @ mu_wake
    lift_i = rho * v_inf * mu_wake * geom.s * np.cos(geom.theta)
    drag_i = -0.5 * rho * mu_wake * geom.s * un
    with np.errstate(divide="ignore", invalid="ignore"):
        l_dist = np.where(geom.width > 0, lift_i / geom.width, 0.0)
        d_dist = np.where(geom.width > 0, drag_i / geom.width, 0.0)
    return lift_i.sum(), drag_i.sum(), l_dist, d_dist


# ---------------------------------------------------------------------------
# Full analysis
# ---------------------------------------------------------------------------

@dataclass
class AeroSolution:
    """Result of one panel-method analysis (forces for the full span)."""

    mesh: PanelMesh
    system: InfluenceSystem
    u_inf: np.ndarray
    rho: float
    mu: np.ndarray
    sigma: np.ndarray
    U: np.ndarray
    U_local: np.ndarray
    cp: np.ndarray
    lift: float
    drag: float
    lift_dist: np.ndarray
    drag_dist: np.ndarray
    trefftz: TrefftzGeometry
    velocity_op: tuple

    @property
    def v_inf(self):
        return float(np.linalg.norm(self.u_inf))

    @property
    def q_inf(self):
        return 0.5 * self.rho * self.v_inf**2

    @property
    def mu_wake(self):
        return self.mu[self.mesh.te_upper] - self.mu[self.mesh.te_lower]

    def residual(self):
        return self.system.A @ self.mu + self.system.B @ self.sigma


def analyze(mesh: PanelMesh, u_inf, rho, system=None, surface=None):
    """Sources, doublets, velocities, pressures and Trefftz forces for one freestream.

    The wake is re-aligned with ``u_inf`` when needed; ``surface`` (from
    ``assemble_surface``) avoids recomputing the wake-free matrices.
    """
    u_inf = np.asarray(u_inf, dtype=float)
    v_inf = float(np.linalg.norm(u_inf))
    if not np.allclose(mesh.wake_direction, u_inf / v_inf):
        mesh = mesh.with_wake(u_inf / v_inf)
        system = None
    if system is None:
        system = assemble_influence(mesh, surface)
    sigma = compute_sources(mesh, u_inf)
    mu = solve_doublets(system, sigma)
    vop = velocity_operator(mesh)
    U, U_local = surface_velocity(mesh, mu, sigma, u_inf, vop)
    cp = pressure_coefficients(U, v_inf)
    geom = TrefftzGeometry.from_mesh(mesh)
    mu_w = mu[mesh.te_upper] - mu[mesh.te_lower]
    lift, drag, l_dist, d_dist = trefftz_forces(geom, mu_w, rho, v_inf)
    return AeroSolution(mesh=mesh, system=system, u_inf=u_inf, rho=rho, mu=mu, sigma=sigma,
                        U=U, U_local=U_local, cp=cp, lift=lift, drag=drag,
                        lift_dist=l_dist, drag_dist=d_dist, trefftz=geom, velocity_op=vop)


def dump_arrays(path, **arrays):
    """Write arrays to a flat binary file preceded by a small text header.

    Header lines: ``name dtype shape0xshape1 offset`` followed by
    ``end``; data are row-major float64 blocks concatenated after the header.
    """
    blocks, header, offset = [], [], 0
    for name, arr in arrays.items():
        arr = np.ascontiguousarray(arr, dtype="<f8")
        shape = "x".join(str(s) for s in arr.shape) or "1"
        header.append(f"{name} float64 {shape} {offset}")
        blocks.append(arr.tobytes())
        offset += arr.nbytes
    text = ("# wingopt array dump, row-major little-endian\n" + "\n".join(header) + "\nend\n")
    with open(path, "wb") as fh:
        fh.write(text.encode("ascii"))
        for b in blocks:
            fh.write(b)


def load_arrays(path):
    """Read a file written by :func:`dump_arrays`."""
    with open(path, "rb") as fh:
        raw = fh.read()
    end = raw.index(b"\nend\n") + len(b"\nend\n")
    lines = raw[:end].decode("ascii").splitlines()[1:-1]
    data = raw[end:]
    out = {}
    for line in lines:
        name, dtype, shape, offset = line.split()
        dims = tuple(int(s) for s in shape.split("x"))
        count = int(np.prod(dims))
        arr = np.frombuffer(data, dtype="<f8", count=count, offset=int(offset))
        out[name] = arr.reshape(dims)
    return out
