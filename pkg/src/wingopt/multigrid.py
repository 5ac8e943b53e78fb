"""Matrix-free geometric multigrid for voxel elasticity.

The finest level applies the shared reference stiffness scaled per
element.  Coarser levels hold explicit 24x24 element matrices obtained by
Galerkin projection ``P^T K P`` of their children, with the trilinear
prolongation masked on fixed dofs, so the hierarchy stays exact for any
modulus distribution.
"""
from __future__ import annotations

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla
from numba import njit

_CORNERS = np.array([[0, 0, 0], [1, 0, 0], [1, 1, 0], [0, 1, 0],
                     [0, 0, 1], [1, 0, 1], [1, 1, 1], [0, 1, 1]], dtype=np.int64)


@njit(cache=True, inline="always")
def _node_offsets(mx, my):
    off = np.empty(8, dtype=np.int64)
    for a in range(8):
        off[a] = _CORNERS[a, 0] + mx * (_CORNERS[a, 1] + my * _CORNERS[a, 2])
    return off


@njit(cache=True, fastmath=True)
def apply_hex(u, E, k0, shape):
    nx, ny, nz = shape
    mx, my = nx + 1, ny + 1
    off = _node_offsets(mx, my)
    y = np.zeros_like(u)
    ue = np.empty(24)
    dof = np.empty(24, dtype=np.int64)
    for k in range(nz):
        for j in range(ny):
            for i in range(nx):
                e = i + nx * (j + ny * k)
                Ee = E[e]
                if Ee == 0.0:
                    continue
                base = i + mx * (j + my * k)
                for a in range(8):
                    n = base + off[a]
                    for d in range(3):
                        dof[3 * a + d] = 3 * n + d
                        ue[3 * a + d] = u[3 * n + d]
                for r in range(24):
                    s = 0.0
                    for c in range(24):
                        s += k0[r, c] * ue[c]
                    y[dof[r]] += Ee * s
    return y


@njit(cache=True, fastmath=True)
def element_energy(u, k0, shape):
    """u_e^T k0 u_e for each element."""
    nx, ny, nz = shape
    mx, my = nx + 1, ny + 1
    off = _node_offsets(mx, my)
    out = np.empty(nx * ny * nz)
    ue = np.empty(24)
    for k in range(nz):
        for j in range(ny):
            for i in range(nx):
                e = i + nx * (j + ny * k)
                base = i + mx * (j + my * k)
                for a in range(8):
                    n = base + off[a]
                    for d in range(3):
                        ue[3 * a + d] = u[3 * n + d]
                s = 0.0
                for r in range(24):
                    t = 0.0
                    for c in range(24):
                        t += k0[r, c] * ue[c]
                    s += ue[r] * t
                out[e] = s
    return out


@njit(cache=True, fastmath=True)
def apply_explicit(u, Ke, active, shape):
    nx, ny, nz = shape
    mx, my = nx + 1, ny + 1
    off = _node_offsets(mx, my)
    y = np.zeros_like(u)
    ue = np.empty(24)
    dof = np.empty(24, dtype=np.int64)
    for k in range(nz):
        for j in range(ny):
            for i in range(nx):
                e = i + nx * (j + ny * k)
                if not active[e]:
                    continue
                base = i + mx * (j + my * k)
                for a in range(8):
                    n = base + off[a]
                    for d in range(3):
                        dof[3 * a + d] = 3 * n + d
                        ue[3 * a + d] = u[3 * n + d]
                for r in range(24):
                    s = 0.0
                    for c in range(24):
                        s += Ke[e, r, c] * ue[c]
                    y[dof[r]] += s
    return y


@njit(cache=True)
def _diag(E, k0, Ke, explicit, shape, n_dofs):
    nx, ny, nz = shape
    mx, my = nx + 1, ny + 1
    off = _node_offsets(mx, my)
    out = np.zeros(n_dofs)
    for k in range(nz):
        for j in range(ny):
            for i in range(nx):
                e = i + nx * (j + ny * k)
                base = i + mx * (j + my * k)
                for a in range(8):
                    n = base + off[a]
                    for d in range(3):
                        r = 3 * a + d
                        out[3 * n + d] += Ke[e, r, r] if explicit else E[e] * k0[r, r]
    return out


def _child_weights():
    """W[o, n, N]: weight of coarse corner N at node n of child offset o."""
    W = np.zeros((8, 8, 8))
    for o in range(8):
        for n in range(8):
            xi = (_CORNERS[o] + _CORNERS[n]) / 2.0
            for N in range(8):
                W[o, n, N] = np.prod(np.where(_CORNERS[N] == 1, xi, 1.0 - xi))
    return W


_W = _child_weights()


@njit(cache=True, fastmath=True)
def _coarsen(E, k0, Ke, explicit, free, fshape, cshape, W, Q):
    """Galerkin element matrices of the coarse grid.

    ``Q[o]`` holds the unmasked projection of ``k0`` for child offset ``o``
    and is used whenever a fine-level child has no fixed dofs.
    """
    nx, ny, nz = fshape
    cx, cy, cz = cshape
    mx, my = nx + 1, ny + 1
    off = _node_offsets(mx, my)
    out = np.zeros((cx * cy * cz, 24, 24))
    P = np.zeros((24, 24))
    T = np.zeros((24, 24))
    dof = np.empty(24, dtype=np.int64)
    for K in range(cz):
        for J in range(cy):
            for I in range(cx):
                ec = I + cx * (J + cy * K)
                for o in range(8):
                    i = 2 * I + _CORNERS[o, 0]
                    j = 2 * J + _CORNERS[o, 1]
                    k = 2 * K + _CORNERS[o, 2]
                    if i >= nx or j >= ny or k >= nz:
                        continue
                    e = i + nx * (j + ny * k)
                    if explicit:
                        tr = 0.0
                        for r in range(24):
                            tr += Ke[e, r, r]
                        if tr == 0.0:
                            continue
                    elif E[e] == 0.0:
                        continue
                    base = i + mx * (j + my * k)
                    allfree = True
                    for a in range(8):
                        n = base + off[a]
                        for d in range(3):
                            dof[3 * a + d] = 3 * n + d
                            if not free[3 * n + d]:
                                allfree = False
                    if allfree and not explicit:
                        Ee = E[e]
                        for r in range(24):
                            for c in range(24):
                                out[ec, r, c] += Ee * Q[o, r, c]
                        continue
                    # masked prolongation of this child
                    for r in range(24):
                        for c in range(24):
                            P[r, c] = 0.0
                    for a in range(8):
                        for N in range(8):
                            w = W[o, a, N]
                            if w == 0.0:
                                continue
                            for d in range(3):
                                if free[dof[3 * a + d]]:
                                    P[3 * a + d, 3 * N + d] = w
                    # T = Kc P
                    for r in range(24):
                        for c in range(24):
                            s = 0.0
                            for m in range(24):
                                if P[m, c] != 0.0:
                                    kv = Ke[e, r, m] if explicit else E[e] * k0[r, m]
                                    s += kv * P[m, c]
                            T[r, c] = s
                    for r in range(24):
                        for c in range(24):
                            s = 0.0
                            for m in range(24):
                                if P[m, r] != 0.0:
                                    s += P[m, r] * T[m, c]
                            out[ec, r, c] += s
    return out


def _prolongation_1d(n_fine_el):
    n_coarse_el = (n_fine_el + 1) // 2
    rows, cols, vals = [], [], []
    for i in range(n_fine_el + 1):
        if i % 2 == 0:
            rows.append(i); cols.append(i // 2); vals.append(1.0)
        else:
            rows += [i, i]; cols += [(i - 1) // 2, (i + 1) // 2]; vals += [0.5, 0.5]
    return sp.csr_matrix((vals, (rows, cols)), shape=(n_fine_el + 1, n_coarse_el + 1))


def prolongation(fine_shape):
    """Trilinear dof prolongation from the 2x coarser grid."""
    px, py, pz = (_prolongation_1d(n) for n in fine_shape)
    Pn = sp.kron(pz, sp.kron(py, px, format="csr"), format="csr")
    return sp.kron(Pn, sp.identity(3, format="csr"), format="csr")


def assemble_explicit(Ke, shape):
    nx, ny, nz = shape
    mx, my = nx + 1, ny + 1
    e = np.arange(nx * ny * nz)
    ijk = np.stack([e % nx, (e // nx) % ny, e // (nx * ny)], axis=1)
    corners = ijk[:, None, :] + _CORNERS[None]
    nodes = corners[..., 0] + mx * (corners[..., 1] + my * corners[..., 2])
    dofs = (3 * nodes[:, :, None] + np.arange(3)).reshape(-1, 24)
    n = 3 * mx * my * (nz + 1)
    rows = np.repeat(dofs, 24, axis=1).ravel()
    cols = np.tile(dofs, (1, 24)).ravel()
    return sp.coo_matrix((Ke.ravel(), (rows, cols)), shape=(n, n)).tocsr()


class _Level:
    def __init__(self, shape, free, springs, E=None, k0=None, Ke=None):
        self.shape = tuple(int(s) for s in shape)
        self.free = free
        self.springs = springs        # sparse matrix, masked
        self.E, self.k0, self.Ke = E, k0, Ke
        if Ke is not None:
            self.active = np.einsum("eii->e", Ke) > 0
        n = free.size
        explicit = Ke is not None
        dummyE = np.zeros(1) if explicit else E
        dummyK = np.zeros((1, 24, 24)) if not explicit else Ke
        d = _diag(dummyE, k0 if k0 is not None else np.zeros((24, 24)), dummyK,
                  explicit, self.shape, n)
        d = d + springs.diagonal()
        # dofs touched by no active element or spring behave as fixed
        free = free & (d > 0)
        self.free = free
        d[~free] = 1.0
        self.inv_diag = 1.0 / d
        self.lmax = None

    def apply(self, u):
        uf = u * self.free
        if self.Ke is None:
            y = apply_hex(uf, self.E, self.k0, self.shape)
        else:
            y = apply_explicit(uf, self.Ke, self.active, self.shape)
        y += self.springs @ uf
        y *= self.free
        y += u * ~self.free
        return y

    def estimate_lmax(self, iters=15, seed=0):
        x = np.random.default_rng(seed).standard_normal(self.free.size) * self.free
        lam = 1.0
        for _ in range(iters):
            y = self.inv_diag * self.apply(x)
            lam = np.linalg.norm(y) / np.linalg.norm(x)
            x = y / np.linalg.norm(y)
        self.lmax = 1.1 * lam

    def smooth(self, f, x, degree):
        """Jacobi-preconditioned Chebyshev smoothing on [0.1, 1] * lmax."""
        a, b = 0.1 * self.lmax, self.lmax
        theta, delta = 0.5 * (b + a), 0.5 * (b - a)
        sigma = theta / delta
        rho = 1.0 / sigma
        r = f - self.apply(x) if x is not None else f.copy()
        x = np.zeros_like(f) if x is None else x.copy()
        dvec = self.inv_diag * r / theta
        for _ in range(degree - 1):
            x += dvec
            r -= self.apply(dvec)
            rho_new = 1.0 / (2 * sigma - rho)
            dvec = rho_new * rho * dvec + (2 * rho_new / delta) * (self.inv_diag * r)
            rho = rho_new
        x += dvec
        return x


class GalerkinMultigrid:
    """V-cycle preconditioner over a hierarchy of 2x coarsened voxel grids."""

    def __init__(self, shape, E, k0, free, springs, coarse_dofs=40000, degree=2):
        self.degree = degree
        S = sp.diags(springs * free).tocsr()
        lev = _Level(shape, free, S, E=np.ascontiguousarray(E), k0=k0)
        self.levels = [lev]
        self.P = []
        Q = None
        while lev.free.size > coarse_dofs and min(lev.shape) >= 2:
            cshape = tuple((n + 1) // 2 for n in lev.shape)
            P = prolongation(lev.shape)
            Pm = sp.diags(lev.free.astype(float)) @ P
            if lev.Ke is None:
                Q = self._offset_projections(k0)
                Ke = _coarsen(lev.E, k0, np.zeros((1, 24, 24)), False, lev.free,
                              lev.shape, cshape, _W, Q)
            else:
                Ke = _coarsen(np.zeros(1), np.zeros((24, 24)), lev.Ke, True, lev.free,
                              lev.shape, cshape, _W, np.zeros((8, 24, 24)))
            Sc = (Pm.T @ lev.springs @ Pm).tocsr()
            diag = _diag(np.zeros(1), np.zeros((24, 24)), Ke, True, cshape, P.shape[1])
            scale = max(diag.max(), 1e-300)
            cfree = diag + Sc.diagonal() > 1e-12 * scale
            Sc = (sp.diags(cfree.astype(float)) @ Sc @ sp.diags(cfree.astype(float))).tocsr()
            self.P.append(Pm.tocsr())
            lev = _Level(cshape, cfree, Sc, Ke=Ke)
            self.levels.append(lev)
        for l in self.levels[:-1]:
            l.estimate_lmax()
        last = self.levels[-1]
        if last.Ke is None:
            K = _assemble_hex(last.E, last.k0, last.shape)
        else:
            K = assemble_explicit(last.Ke, last.shape)
        K = K + last.springs
        fm = sp.diags(last.free.astype(float))
        K = fm @ K @ fm + sp.diags((~last.free).astype(float))
        self._coarse_lu = spla.splu(K.tocsc())

    @staticmethod
    def _offset_projections(k0):
        Q = np.zeros((8, 24, 24))
        for o in range(8):
            P = np.kron(_W[o], np.eye(3))
            Q[o] = P.T @ k0 @ P
        return Q

    def apply_operator(self, u):
        return self.levels[0].apply(u)

    def vcycle(self, f, level=0):
        lev = self.levels[level]
        if level == len(self.levels) - 1:
            return self._coarse_lu.solve(f)
        x = lev.smooth(f, None, self.degree)
        r = f - lev.apply(x)
        P = self.P[level]
        xc = self.vcycle(P.T @ r, level + 1)
        x += P @ xc
        x = lev.smooth(f, x, self.degree)
        return x


def _assemble_hex(E, k0, shape):
    Ke = E[:, None, None] * k0[None]
    return assemble_explicit(Ke, shape)


def pcg(mg: GalerkinMultigrid, b, x0=None, tol=1e-8, max_iter=500):
    """Preconditioned CG; returns (x, relative residual history)."""
    A = mg.apply_operator
    x = np.zeros_like(b) if x0 is None else x0.copy()
    r = b - A(x) if x0 is not None else b.copy()
    bn = np.linalg.norm(b)
    hist = [np.linalg.norm(r) / bn]
    if hist[-1] <= tol:
        return x, hist
    z = mg.vcycle(r)
    p = z.copy()
    rz = r @ z
    for _ in range(max_iter):
        Ap = A(p)
        alpha = rz / (p @ Ap)
        x += alpha * p
        r -= alpha * Ap
        hist.append(np.linalg.norm(r) / bn)
        if hist[-1] <= tol:
            break
        z = mg.vcycle(r)
        rz_new = r @ z
        p = z + (rz_new / rz) * p
        rz = rz_new
    return x, hist
