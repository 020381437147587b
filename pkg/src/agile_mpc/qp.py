"""Dense convex QP solver (primal active-set, warm-startable).

Solves::

    minimize    0.5 x'Hx + f'x
    subject to  lb <= A x <= ub

Each two-sided row is split into one-sided constraints ``G x >= g``.  If the
starting point is infeasible, a first phase drives a single elastic variable
``t >= 0`` (``a'x + t >= lb``, ``-a'x + t >= -ub``) to zero while staying close
to the start.  The second phase is the textbook primal active-set method on the
original objective, which therefore decreases monotonically.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

OPTIMAL = "optimal"
MAX_ITERATIONS = "max_iterations"
INFEASIBLE = "infeasible"


@dataclass(frozen=True)
class QpProblem:
    H: np.ndarray
    f: np.ndarray
    A: np.ndarray
    lb: np.ndarray
    ub: np.ndarray

    def __post_init__(self):
        H = np.atleast_2d(np.asarray(self.H, dtype=float))
        n = H.shape[0]
        f = np.asarray(self.f, dtype=float).reshape(n)
        A = np.asarray(self.A, dtype=float).reshape(-1, n)
        m = A.shape[0]
        lb = np.broadcast_to(np.asarray(self.lb, dtype=float), (m,)).copy()
        ub = np.broadcast_to(np.asarray(self.ub, dtype=float), (m,)).copy()
        if H.shape != (n, n):
            raise ValueError("H must be square")
        if not np.allclose(H, H.T, rtol=0.0, atol=1e-10 * max(1.0, np.abs(H).max())):
            raise ValueError("H must be symmetric")
        if n and np.min(np.linalg.eigvalsh(0.5 * (H + H.T))) < -1e-10 * max(1.0, np.abs(H).max()):
            raise ValueError("H must be positive semidefinite")
        for name, val in (("H", H), ("f", f), ("A", A), ("lb", lb), ("ub", ub)):
            object.__setattr__(self, name, val)

    @property
    def n(self) -> int:
        return self.H.shape[0]

    @property
    def m(self) -> int:
        return self.A.shape[0]

    def objective(self, x) -> float:
        x = np.asarray(x, float)
        return float(0.5 * x @ self.H @ x + self.f @ x)

    @classmethod
    def unconstrained(cls, H, f) -> "QpProblem":
        H = np.atleast_2d(H)
        return cls(H, f, np.zeros((0, H.shape[0])), np.zeros(0), np.zeros(0))


@dataclass
class WarmStart:
    """Active-set hint: per row ``+1`` lower bound active, ``-1`` upper, ``0`` inactive."""

    active: np.ndarray
    x: np.ndarray | None = None


@dataclass
class QpSolution:
    x: np.ndarray
    status: str
    iterations: int
    kkt_residual: float
    multipliers: np.ndarray
    active: np.ndarray
    objective: float
    history: list = field(default_factory=list, repr=False)

    @property
    def ok(self) -> bool:
        return self.status == OPTIMAL

    def warm_start(self) -> WarmStart:
        return WarmStart(self.active.copy(), self.x.copy())


def kkt_residual(p: QpProblem, x, lagrange_multipliers) -> float:
    """Largest of stationarity, primal violation, dual sign violation and complementarity.

    Multipliers are signed per row: positive for an active lower bound,
    negative for an active upper bound, so that ``Hx + f = A' lam`` at a KKT point.
    """
    x = np.asarray(x, float)
    lam = np.asarray(lagrange_multipliers, float).reshape(p.m)
    stationarity = np.abs(p.H @ x + p.f - p.A.T @ lam).max(initial=0.0)
    ax = p.A @ x
    with np.errstate(invalid="ignore"):
        lower_gap = np.where(np.isfinite(p.lb), ax - p.lb, np.inf)
        upper_gap = np.where(np.isfinite(p.ub), p.ub - ax, np.inf)
    primal = max(0.0, -lower_gap.min(initial=np.inf), -upper_gap.min(initial=np.inf))
    pos = lam > 0
    neg = lam < 0
    dual = max(
        np.abs(lam[pos & ~np.isfinite(p.lb)]).max(initial=0.0),
        np.abs(lam[neg & ~np.isfinite(p.ub)]).max(initial=0.0),
    )
    comp = max(
        (lam[pos & np.isfinite(p.lb)] * np.abs(lower_gap[pos & np.isfinite(p.lb)])).max(initial=0.0),
        (-lam[neg & np.isfinite(p.ub)] * np.abs(upper_gap[neg & np.isfinite(p.ub)])).max(initial=0.0),
    )
    return float(max(stationarity, primal, dual, comp))


def _solve_kkt(Hz, G_W, grad, g_W=None):
    n = Hz.shape[0]
    k = G_W.shape[0]
    if k == 0:
        K = Hz
        rhs = -grad
    else:
        K = np.zeros((n + k, n + k))
        K[:n, :n] = Hz
        K[:n, n:] = G_W.T
        K[n:, :n] = G_W
        rhs = np.concatenate([-grad, np.zeros(k) if g_W is None else g_W])
    try:
        sol = np.linalg.solve(K, rhs)
        if not np.all(np.isfinite(sol)):
            raise np.linalg.LinAlgError
    except np.linalg.LinAlgError:
        sol = np.linalg.lstsq(K, rhs, rcond=None)[0]
    return sol[:n], -sol[n:]


class ActiveSetSolver:
    """Primal active-set QP solver.

    One instance can keep the last solution as a warm start for the next
    solve (``remember=True``), which is how the MPC controllers use it.
    """

    def __init__(self, max_iter: int | None = None, tol: float = 1e-6, remember: bool = False):
        self.max_iter = max_iter
        self.tol = tol
        self.remember = remember
        self.last: QpSolution | None = None

    def solve(self, p: QpProblem, warm_start: WarmStart | None = None, x0=None) -> QpSolution:
        """``x0`` is a fallback starting point, ideally feasible, used when the
        remembered active set does not yield a feasible point."""
        if warm_start is None:
            active = None
            if self.remember and self.last is not None and self.last.active.shape == (p.m,):
                active = self.last.active
            if active is not None or x0 is not None:
                warm_start = WarmStart(active, x0)
        sol = _active_set(p, warm_start, self.max_iter)
        if self.remember and sol.ok:
            self.last = sol
        return sol


def qp_solve(p: QpProblem, warm_start: WarmStart | None = None, max_iter: int | None = None) -> QpSolution:
    return _active_set(p, warm_start, max_iter)


def _primal_loop(Hq, c, G, g, z, W, max_iter, state, done=None):
    """Primal active-set iterations on ``min 0.5 z'Hq z + c'z  s.t.  G z >= g``.

    ``W`` is the initial working set (indices of linearly independent rows
    active at ``z``).  ``done(z)`` may end the loop early.  Returns
    ``(z, W, lam_W, converged)``.
    """
    mc = G.shape[0]

    def qval(zz):
        return float(0.5 * zz @ Hq @ zz + c @ zz)

    lam_W = np.zeros(len(W))
    row_max = np.abs(G).max(axis=1)
    # steps below rounding noise of the gradient are treated as zero
    z_scale = np.abs(c).max(initial=0.0) / max(np.abs(Hq).max(initial=0.0), 1e-300)
    q_cur = qval(z)
    state["history"].append(q_cur)
    no_progress = 0
    bland = False
    while state["iterations"] < max_iter:
        state["iterations"] += 1
        grad = Hq @ z + c
        step, lam_W = _solve_kkt(Hq, G[W] if W else np.zeros((0, G.shape[1])), grad)
        small = np.abs(step).max(initial=0.0) <= 1e-12 * max(np.abs(z).max(initial=0.0), z_scale)
        if not small:
            # a step whose decrease is below rounding of the objective terms is noise
            zn = z + step
            noise = 1e-13 * (abs(0.5 * z @ Hq @ z) + abs(c @ z) + abs(0.5 * zn @ Hq @ zn) + abs(c @ zn))
            small = qval(zn) >= q_cur - noise
        if small:
            dual_tol = 1e-10 * (1.0 + np.abs(lam_W).max(initial=0.0))
            negative = [k for k in range(len(W)) if lam_W[k] < -dual_tol]
            if not negative:
                return z, W, lam_W, True
            if bland:
                k = min(negative, key=lambda kk: W[kk])
            else:
                k = min(negative, key=lambda kk: (lam_W[kk], W[kk]))
            W.pop(k)
            progressed = False
        else:
            Gp = G @ step
            slack = G @ z - g
            alpha = 1.0
            blocking = None
            cand = Gp < -1e-14 * (1.0 + row_max * np.abs(step).max())
            cand[W] = False
            if cand.any():
                idx = np.flatnonzero(cand)
                ratios = np.maximum(slack[idx], 0.0) / -Gp[idx]
                k = int(np.argmin(ratios))  # first minimum: lowest index wins ties
                if ratios[k] <= 1.0:
                    alpha = float(ratios[k])
                    blocking = int(idx[k])
            z = z + alpha * step
            if blocking is not None:
                W.append(blocking)
            q_new = qval(z)
            progressed = q_new < q_cur - 1e-15 * abs(q_cur)
            q_cur = q_new
            state["history"].append(q_cur)
            if done is not None and done(z):
                return z, W, lam_W, True
        if progressed:
            no_progress = 0
        else:
            no_progress += 1
            if no_progress > 3 * mc:
                bland = True
    return z, W, lam_W, False


def _independent(G, candidates, W=None):
    W = list(W or [])
    for j in candidates:
        if j in W:
            continue
        if np.linalg.matrix_rank(G[W + [j]]) == len(W) + 1:
            W.append(j)
    return W


def _active_set(p: QpProblem, warm: WarmStart | None, max_iter: int | None) -> QpSolution:
    n, m = p.n, p.m
    if max_iter is None:
        max_iter = 10 * (n + m)
    lb, ub, A = p.lb, p.ub, p.A

    if np.any(lb > ub):
        x = np.zeros(n)
        return QpSolution(x, INFEASIBLE, 0, np.inf, np.zeros(m), np.zeros(m, dtype=int), p.objective(x))

    # one-sided rows G x >= g; ordering: row i lower side, row i upper side
    rows, sides, G_rows, g_vals = [], [], [], []
    for i in range(m):
        if np.isfinite(lb[i]):
            rows.append(i); sides.append(1); G_rows.append(A[i]); g_vals.append(lb[i])
        if np.isfinite(ub[i]):
            rows.append(i); sides.append(-1); G_rows.append(-A[i]); g_vals.append(-ub[i])
    G = np.array(G_rows).reshape(-1, n)
    g = np.array(g_vals)
    rows = np.array(rows, dtype=int)
    sides = np.array(sides, dtype=int)
    mc = G.shape[0]
    g_scale = 1.0 + np.abs(g).max(initial=0.0)
    feas_tol = 1e-12 * g_scale

    def violation(x):
        return max(0.0, np.max(g - G @ x, initial=0.0))

    state = {"iterations": 0, "history": []}

    guess = []
    if warm is not None and warm.active is not None and len(warm.active) == m:
        guess = [j for j in range(mc) if warm.active[rows[j]] == sides[j]]
    x0 = None
    if guess:
        idx = _independent(G, guess)
        x_eq, _ = _solve_kkt(p.H, G[idx], p.f, g[idx])
        if violation(x_eq) <= feas_tol:
            x0 = x_eq
    from_guess = x0 is not None
    if x0 is None:
        x0 = np.zeros(n) if warm is None or warm.x is None else np.asarray(warm.x, float).reshape(n).copy()

    status = OPTIMAL
    t0 = violation(x0)
    if t0 > feas_tol:
        # phase 1: min t + 0.5 delta (|x - x0|^2 + t^2) over the elastic constraints
        Ge = np.vstack([np.hstack([G, np.ones((mc, 1))]), np.append(np.zeros(n), 1.0)])
        ge = np.append(g, 0.0)
        z = np.append(x0, t0)
        W = [int(np.argmin(Ge[:-1] @ z - ge[:-1]))]
        delta = 1.0
        x_scale = max(1.0, np.abs(x0).max(initial=0.0))
        converged = False
        while True:
            Hq = delta * np.eye(n + 1) / x_scale**2
            c = np.append(-delta * x0 / x_scale**2, 1.0)
            z, W, _, converged = _primal_loop(Hq, c, Ge, ge, z, W, max_iter, state,
                                              done=lambda zz: zz[n] <= feas_tol)
            if not converged or z[n] <= feas_tol or delta < 1e-12:
                break
            delta *= 1e-3
        if not converged:
            status = MAX_ITERATIONS
        elif z[n] > feas_tol:
            status = INFEASIBLE
        x0 = z[:n]
        active_now = [j for j in W if j < mc]
    elif from_guess:
        active_now = guess
    else:
        # feasible start: every row active there is a candidate, guessed rows first
        slack0 = G @ x0 - g
        active_now = guess + [j for j in np.flatnonzero(np.abs(slack0) <= 1e-10 * (1.0 + np.abs(g))) if j not in guess]

    if status == OPTIMAL:
        slack = G @ x0 - g
        act_tol = 1e-10 * (1.0 + np.abs(g))
        W = _independent(G, [j for j in active_now if abs(slack[j]) <= act_tol[j]])
        state["history"] = []
        x, W, lam_W, converged = _primal_loop(p.H, p.f, G, g, x0, W, max_iter, state)
        if not converged:
            status = MAX_ITERATIONS
    else:
        x, W, lam_W = x0, [], np.zeros(0)

    if len(lam_W) != len(W):
        # stopped right after a row entered: least-squares multipliers for the current set
        lam_W = np.linalg.lstsq(G[W].T, p.H @ x + p.f, rcond=None)[0] if W else np.zeros(0)
    multipliers = np.zeros(m)
    active = np.zeros(m, dtype=int)
    for k, j in enumerate(W):
        multipliers[rows[j]] += sides[j] * lam_W[k]
        active[rows[j]] = sides[j]
    res = kkt_residual(p, x, multipliers)
    res_scale = 1.0 + np.abs(p.f).max(initial=0.0) + np.abs(p.H @ x).max(initial=0.0)
    if status == OPTIMAL and res > 1e-6 * res_scale:
        status = MAX_ITERATIONS
    return QpSolution(x, status, state["iterations"], res, multipliers, active, p.objective(x), state["history"])
