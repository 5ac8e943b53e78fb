"""Method of Moving Asymptotes, beta/payload continuation and the run loop."""
from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field

import numpy as np

logger = logging.getLogger(__name__)

# Table 1 payloads relative to the target (9.52 ... 6.00 kN for 6 kN)
TABLE_PAYLOAD_FACTORS = tuple(v / 6.0 for v in
                              (9.52, 9.04, 8.60, 8.17, 7.75, 7.37, 7.00, 6.65, 6.32, 6.00))


class SubproblemError(RuntimeError):
    pass


# ---------------------------------------------------------------------------
# MMA
# ---------------------------------------------------------------------------

def _subsolve(m, n, epsimin, low, upp, alfa, beta, p0, q0, P, Q, a0, a, b, c, d):
    """Primal-dual Newton solve of the MMA subproblem (Svanberg's scheme)."""
    een, eem = np.ones(n), np.ones(m)
    epsi = 1.0
    x = 0.5 * (alfa + beta)
    y, z, lam = eem.copy(), 1.0, eem.copy()
    xsi = np.maximum(1.0 / (x - alfa), 1.0)
    eta = np.maximum(1.0 / (beta - x), 1.0)
    mu = np.maximum(eem, 0.5 * c)
    zet, s = 1.0, eem.copy()

    def residual(x, y, z, lam, xsi, eta, mu, zet, s, epsi):
        ux1, xl1 = upp - x, x - low
        plam = p0 + P.T @ lam
        qlam = q0 + Q.T @ lam
        gvec = P @ (1 / ux1) + Q @ (1 / xl1)
        rex = plam / ux1**2 - qlam / xl1**2 - xsi + eta
        rey = c + d * y - mu - lam
        rez = a0 - zet - a @ lam
        relam = gvec - a * z - y + s - b
        rexsi = xsi * (x - alfa) - epsi
        reeta = eta * (beta - x) - epsi
        remu = mu * y - epsi
        rezet = zet * z - epsi
        res = lam * s - epsi
        return np.concatenate([rex, rey, [rez], relam, rexsi, reeta, remu, [rezet], res])

    while epsi > epsimin:
        r = residual(x, y, z, lam, xsi, eta, mu, zet, s, epsi)
        rnorm, rmax = np.linalg.norm(r), np.abs(r).max()
        it = 0
        while rmax > 0.9 * epsi and it < 200:
            it += 1
            ux1, xl1 = upp - x, x - low
            ux2, xl2 = ux1**2, xl1**2
            plam = p0 + P.T @ lam
            qlam = q0 + Q.T @ lam
            gvec = P @ (1 / ux1) + Q @ (1 / xl1)
            GG = P / ux2 - Q / xl2
            delx = plam / ux2 - qlam / xl2 - epsi / (x - alfa) + epsi / (beta - x)
            dely = c + d * y - lam - epsi / y
            delz = a0 - a @ lam - epsi / z
            dellam = gvec - a * z - y - b + epsi / lam
            diagx = 2 * plam / (ux2 * ux1) + 2 * qlam / (xl2 * xl1)
            diagx += xsi / (x - alfa) + eta / (beta - x)
            diagy = d + mu / y
            diaglamyi = s / lam + 1.0 / diagy
            blam = dellam + dely / diagy - GG @ (delx / diagx)
            AA = np.zeros((m + 1, m + 1))
            AA[:m, :m] = np.diag(diaglamyi) + (GG / diagx) @ GG.T
            AA[:m, m] = AA[m, :m] = a
            AA[m, m] = -zet / z
            sol = np.linalg.solve(AA, np.concatenate([blam, [delz]]))
            dlam, dz = sol[:m], sol[m]
            dx = -delx / diagx - (GG.T @ dlam) / diagx
            dy = -dely / diagy + dlam / diagy
            dxsi = -xsi + epsi / (x - alfa) - xsi * dx / (x - alfa)
            deta = -eta + epsi / (beta - x) + eta * dx / (beta - x)
            dmu = -mu + epsi / y - mu * dy / y
            dzet = -zet + epsi / z - zet * dz / z
            ds = -s + epsi / lam - s * dlam / lam
            xx = np.concatenate([y, [z], lam, xsi, eta, mu, [zet], s])
            dxx = np.concatenate([dy, [dz], dlam, dxsi, deta, dmu, [dzet], ds])
            stm = max(np.max(-1.01 * dxx / xx), np.max(-1.01 * dx / (x - alfa)),
                      np.max(1.01 * dx / (beta - x)), 1.0)
            step = 1.0 / stm
            old = (x, y, z, lam, xsi, eta, mu, zet, s)
            for _ in range(50):
                x, y, z, lam, xsi, eta, mu, zet, s = (
                    old[0] + step * dx, old[1] + step * dy, old[2] + step * dz,
                    old[3] + step * dlam, old[4] + step * dxsi, old[5] + step * deta,
                    old[6] + step * dmu, old[7] + step * dzet, old[8] + step * ds)
                r = residual(x, y, z, lam, xsi, eta, mu, zet, s, epsi)
                if np.linalg.norm(r) <= rnorm:
                    break
                step *= 0.5
            rnorm, rmax = np.linalg.norm(r), np.abs(r).max()
        epsi *= 0.1
    return x, y, z, lam


@dataclass
class MMAState:
    xold1: np.ndarray | None = None
    xold2: np.ndarray | None = None
    low: np.ndarray | None = None
    upp: np.ndarray | None = None
    iteration: int = 0


class MMA:
    """MMA for ``min f(x)`` s.t. ``g_i(x) <= 0`` and box bounds.

    Move limits are hard clamps on the subproblem bounds; ``move`` may be a
    scalar or one value per variable.
    """

    def __init__(self, n, m, xmin=0.0, xmax=1.0, move=0.1, asy_init=0.5, asy_incr=1.05,
                 asy_decr=0.65, c=1000.0, tol=1e-7):
        self.n, self.m = n, m
        self.xmin = np.broadcast_to(np.asarray(xmin, float), (n,)).copy()
        self.xmax = np.broadcast_to(np.asarray(xmax, float), (n,)).copy()
        self.move = np.broadcast_to(np.asarray(move, float), (n,)).copy()
        self.asy_init, self.asy_incr, self.asy_decr = asy_init, asy_incr, asy_decr
        self.a0, self.a = 1.0, np.zeros(m)
        self.c, self.d = np.full(m, c), np.ones(m)
        self.tol = tol
        self.state = MMAState()

    def _asymptotes(self, x):
        st, rng = self.state, self.xmax - self.xmin
        if st.iteration < 2:
            return x - self.asy_init * rng, x + self.asy_init * rng
        sgn = (x - st.xold1) * (st.xold1 - st.xold2)
        factor = np.where(sgn > 0, self.asy_incr, np.where(sgn < 0, self.asy_decr, 1.0))
        low = x - factor * (st.xold1 - st.low)
        upp = x + factor * (st.upp - st.xold1)
        low = np.clip(low, x - 10 * rng, x - 0.01 * rng)
        upp = np.clip(upp, x + 0.01 * rng, x + 10 * rng)
        return low, upp

    def update(self, x, f0, g, df0, dg):
        x = np.asarray(x, dtype=float)
        g, df0, dg = np.atleast_1d(g), np.asarray(df0, float), np.atleast_2d(dg)
        if not (np.all(np.isfinite(df0)) and np.all(np.isfinite(dg))):
            raise ValueError("gradients must be finite")
        if not (np.any(df0) or np.any(dg)):
            return x.copy()
        low, upp = self._asymptotes(x)
        for attempt in range(4):
            try:
                xnew = self._solve(x, g, df0, dg, low, upp)
                break
            except (np.linalg.LinAlgError, SubproblemError) as exc:
                logger.warning("MMA subproblem failed (%s); shrinking asymptotes", exc)
                low, upp = x - 0.5 * (x - low), x + 0.5 * (upp - x)
        else:
            raise SubproblemError("MMA subproblem failed after shrinking the asymptotes")
        st = self.state
        st.xold2, st.xold1 = st.xold1, x.copy()
        st.low, st.upp = low, upp
        st.iteration += 1
        return xnew

    def bounds(self, x, low, upp):
        alfa = np.maximum.reduce([low + 0.1 * (x - low), x - self.move, self.xmin])
        beta = np.minimum.reduce([upp - 0.1 * (upp - x), x + self.move, self.xmax])
        return alfa, beta

    def _solve(self, x, g, df0, dg, low, upp):
        alfa, beta = self.bounds(x, low, upp)
        span = np.maximum(self.xmax - self.xmin, 1e-5)
        ux2, xl2 = (upp - x) ** 2, (x - low) ** 2
        p0, q0 = np.maximum(df0, 0), np.maximum(-df0, 0)
        pq0 = 1e-3 * (p0 + q0) + 1e-5 / span
        p0, q0 = (p0 + pq0) * ux2, (q0 + pq0) * xl2
        P, Q = np.maximum(dg, 0), np.maximum(-dg, 0)
        pq = 1e-3 * (P + Q) + 1e-5 / span
        P, Q = (P + pq) * ux2, (Q + pq) * xl2
        b = P @ (1 / (upp - x)) + Q @ (1 / (x - low)) - g
        xnew, *_ = _subsolve(self.m, self.n, self.tol, low, upp, alfa, beta, p0, q0, P, Q,
                             self.a0, self.a, b, self.c, self.d)
        if not np.all(np.isfinite(xnew)):
            raise SubproblemError("non-finite subproblem solution")
        return np.clip(xnew, alfa, beta)


# ---------------------------------------------------------------------------
# continuation
# ---------------------------------------------------------------------------

@dataclass
class Continuation:
    """beta/payload steps at fixed offsets after the design first gets close to feasible."""

    offsets: tuple = (0, 5, 45, 85, 115, 145, 175, 205, 235, 265)
    betas: tuple = (0.01, 1, 2, 3, 4, 5, 6, 7, 8, 16)
    payload: float = 6000.0
    relaxation: float = 0.95
    factors: tuple | None = TABLE_PAYLOAD_FACTORS
    trigger: float = 0.05
    feasible_at: int | None = None

    def __post_init__(self):
        if len(self.offsets) != len(self.betas) or list(self.offsets) != sorted(self.offsets):
            raise ValueError("offsets must be sorted and match the beta list")
        if any(np.diff(self.betas) < 0):
            raise ValueError("beta must be nondecreasing")
        if self.factors is not None and len(self.factors) != len(self.betas):
            raise ValueError("one payload factor per continuation step is required")

    def payloads(self):
        n = len(self.betas)
        if self.factors is not None:
            return [self.payload * f for f in self.factors]
        return [self.payload * self.relaxation ** -(n - 1 - k) for k in range(n)]

    def step_index(self, iteration):
        if self.feasible_at is None:
            return 0
        since = iteration - self.feasible_at
        return int(np.searchsorted(self.offsets, since, side="right") - 1)

    def current(self, iteration):
        k = max(self.step_index(iteration), 0)
        return float(self.betas[k]), float(self.payloads()[k])

    def observe(self, iteration, g):
        """Record the first iterate with max g <= trigger (evaluated before the update)."""
        if self.feasible_at is None and np.max(g) <= self.trigger:
            self.feasible_at = iteration
            logger.info("continuation starts at iteration %d", iteration)


def continuation_step(schedule: Continuation, iteration, feasible_at=None):
    """(beta, payload) at ``iteration`` given the first near-feasible iteration."""
    sched = Continuation(schedule.offsets, schedule.betas, schedule.payload,
                         schedule.relaxation, schedule.factors, schedule.trigger, feasible_at)
    return sched.current(iteration)


# ---------------------------------------------------------------------------
# run loop
# ---------------------------------------------------------------------------

@dataclass
class HistoryRecord:
    iteration: int
    objective: float
    g: tuple
    beta: float
    payload: float
    seconds: float


@dataclass
class RunResult:
    x: np.ndarray
    history: list = field(default_factory=list)
    final: object = None
    continuation: Continuation | None = None


def optimize(problem, iterations, continuation: Continuation, mma: MMA | None = None,
             x0=None, callback=None):
    """Evaluate -> MMA update -> continuation, ``iterations`` times plus a final evaluation.

    ``callback(record, evaluation, new_step)`` is called after every
    evaluation and update (``new_step`` marks a continuation change).
    """
    cfg = problem.cfg.optimizer
    x = problem.initial_point() if x0 is None else np.asarray(x0, dtype=float).copy()
    if mma is None:
        move = np.concatenate([np.full(problem.n_gamma, cfg.move_gamma),
                               np.full(problem.n_shape, cfg.move_shape)])
        mma = MMA(problem.n, 3, 0.0, 1.0, move, cfg.asymptote_init, cfg.asymptote_incr,
                  cfg.asymptote_decr)
    result = RunResult(x, continuation=continuation)
    prev_step = None
    for it in range(iterations + 1):
        t0 = time.perf_counter()
        beta, payload = continuation.current(it)
        ev = problem.evaluate(x, beta, payload, gradient=it < iterations)
        step = continuation.step_index(it)
        rec = HistoryRecord(it, ev.f, tuple(ev.g), beta, payload, time.perf_counter() - t0)
        logger.info("it %4d  f %.5f  g %s  beta %.2f  P %.0f", it, ev.f,
                    np.array2string(ev.g, precision=4), beta, payload)
        if it < iterations:
            continuation.observe(it, ev.g)
            x = mma.update(x, ev.f, ev.g, ev.df, ev.dg)
            rec.seconds = time.perf_counter() - t0
        result.history.append(rec)
        if callback is not None:
            callback(rec, ev, step != prev_step)
        prev_step = step
    result.x, result.final = x, ev
    return result
