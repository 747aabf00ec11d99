"""Dense primal active-set solver for strictly convex inequality QPs.

Solves, for a condensed problem and a measured state x,

    min  1/2 z' H z + (F' x)' z
    s.t. G_j z <= W_j + S_j x   for j in a retained index set

with H positive definite. The retained set is any subset of the rows of
G; the full problem is the special case of retaining everything.

The method is the textbook primal active-set scheme: a feasibility
phase (minimize the maximum violation, delegated to HiGHS via
scipy.optimize.linprog), then equality-constrained subproblems on a
working set, adding blocking rows and dropping rows with negative
multipliers. Blocking ties break toward the smallest row index so runs
are deterministic and cycling is suppressed.

A brute-force oracle (solve_oracle) enumerates candidate active sets for
small instances and is used to cross-check the solver in tests.
"""

from __future__ import annotations

import itertools
import time
from dataclasses import dataclass
from enum import Enum

import numpy as np
from scipy.optimize import linprog

from . import linalg
from .errors import DimensionMismatch, SizeGuard
from .model import MpQp

# Scale-aware tightness band for reporting a row as active.
ACTIVE_RTOL = 1e-8
# Feasibility tolerance for accepting a start point / final point.
FEAS_RTOL = 1e-9
# Reject adding a row whose component outside the working-set row space
# is smaller than this times its norm.
INDEPENDENCE_RTOL = 1e-10


class Status(Enum):
    OPTIMAL = "optimal"
    INFEASIBLE = "infeasible"
    ITERATION_LIMIT = "iteration_limit"
    DEGENERATE = "degenerate"


@dataclass(frozen=True)
class QpSolution:
    """Solver output; z_star is meaningful only when status is OPTIMAL.

    multipliers is parallel to active_set and holds the KKT multiplier of
    each active row (zero for rows that are tight but not in the final
    working set).
    """

    z_star: np.ndarray
    multipliers: np.ndarray
    active_set: np.ndarray
    iterations: int
    solve_time: float
    status: Status

    def objective(self, q: MpQp, x) -> float:
        from .model import evaluate_cost

        return evaluate_cost(q, x, self.z_star)


@dataclass(frozen=True)
class KktResiduals:
    """Scaled KKT residuals recomputed from scratch for a solution."""

    stationarity: float
    primal: float
    complementarity: float
    dual: float

    @property
    def max_scaled(self) -> float:
        return max(self.stationarity, self.primal, self.complementarity, self.dual)


def _normalize_retained(q: MpQp, retained) -> np.ndarray:
    if retained is None:
        return np.arange(q.n_c)
    idx = np.unique(np.asarray(list(retained), dtype=int))
    if idx.size and (idx[0] < 0 or idx[-1] >= q.n_c):
        raise DimensionMismatch(f"retained indices must lie in [0, {q.n_c})")
    return idx


def active_band(b: np.ndarray) -> np.ndarray:
    """Per-row tightness tolerance, scaled by the constraint offset."""
    return ACTIVE_RTOL * (1.0 + np.abs(b))


class ActiveSetSolver:
    """Primal active-set solver bound to one condensed problem.

    Holds the Cholesky factor of H and the precomputed inv(H) @ G' block,
    plus per-solve scratch. One solve at a time per instance; distinct
    instances may share the (immutable) problem.
    """

    def __init__(self, q: MpQp):
        self.q = q
        self.hfact = linalg.cholesky(q.H)
        self._hinv_gt = linalg.solve_spd(self.hfact, q.G.T) if q.n_c else np.zeros((q.n_z, 0))

    # -- internals ---------------------------------------------------------

    def _phase1(self, a: np.ndarray, b: np.ndarray):
        """Minimize the maximum constraint violation; returns (z0, worst)."""
        k, n_z = a.shape
        c = np.zeros(n_z + 1)
        c[-1] = 1.0
        a_ub = np.hstack([a, -np.ones((k, 1))])
        bounds = [(None, None)] * n_z + [(0.0, None)]
        res = linprog(c, A_ub=a_ub, b_ub=b, bounds=bounds, method="highs")
        if res.x is None:
            raise RuntimeError(f"phase-1 LP failed: {res.message}")
        return res.x[:n_z], float(res.x[-1])

    def _eqp(self, z_free, hinv_at, a, b, working):
        """Equality-constrained minimizer and multipliers on the working set."""
        if not working:
            return z_free, np.zeros(0)
        cols = list(working)
        aw = a[cols]
        m = aw @ hinv_at[:, cols]
        rhs = b[cols] + aw @ (-z_free)
        lam = -np.linalg.solve(m, rhs)
        z = z_free - hinv_at[:, cols] @ lam
        return z, lam

    @staticmethod
    def _independent(a: np.ndarray, working: list, row: int) -> bool:
        if not working:
            return True
        aw_t = a[working].T
        coef, *_ = np.linalg.lstsq(aw_t, a[row], rcond=None)
        resid = a[row] - aw_t @ coef
        return np.linalg.norm(resid) >= INDEPENDENCE_RTOL * np.linalg.norm(a[row])

    # -- public API --------------------------------------------------------

    def solve(self, x, retained=None, warm_start=None) -> QpSolution:
        """Solve over the retained rows; see the module docstring.

        warm_start is an optional iterable of row indices (in the original
        row numbering) from a previous solve; when its equality-constrained
        point is feasible it replaces the feasibility phase.
        """
        t0 = time.perf_counter()
        q = self.q
        x = linalg.as_vector(x, "x")
        if x.shape[0] != q.n:
            raise DimensionMismatch(f"x has length {x.shape[0]}, expected {q.n}")
        rows = _normalize_retained(q, retained)
        k = rows.size
        g0 = q.F.T @ x
        z_free = -linalg.solve_spd(self.hfact, g0)

        if k == 0:
            return QpSolution(
                z_star=z_free,
                multipliers=np.zeros(0),
                active_set=np.zeros(0, dtype=int),
                iterations=0,
                solve_time=time.perf_counter() - t0,
                status=Status.OPTIMAL,
            )

        a = q.G[rows]
        b = q.W[rows] + q.S[rows] @ x
        hinv_at = self._hinv_gt[:, rows]
        feas_tol = FEAS_RTOL * (1.0 + np.abs(b).max())

        z = None
        working: list = []
        if warm_start is not None:
            pos = {int(r): i for i, r in enumerate(rows)}
            local = [pos[int(j)] for j in warm_start if int(j) in pos]
            indep = []
            for j in local:
                if self._independent(a, indep, j):
                    indep.append(j)
            z_try, _ = self._eqp(z_free, hinv_at, a, b, indep)
            if (a @ z_try - b).max() <= feas_tol:
                z = z_try
                working = indep

        if z is None:
            z0, worst = self._phase1(a, b)
            if worst > feas_tol:
                return QpSolution(
                    z_star=z0,
                    multipliers=np.zeros(0),
                    active_set=np.zeros(0, dtype=int),
                    iterations=0,
                    solve_time=time.perf_counter() - t0,
                    status=Status.INFEASIBLE,
                )
            z = z0
            working = []

        max_iter = 50 * (q.n_z + k)
        status = Status.ITERATION_LIMIT
        iterations = 0
        seen_stalled: set = set()
        lam = np.zeros(0)

        while iterations < max_iter:
            iterations += 1
            z_eq, lam = self._eqp(z_free, hinv_at, a, b, working)
            p = z_eq - z
            if np.linalg.norm(p) <= 1e-11 * (1.0 + np.linalg.norm(z)):
                if lam.size == 0 or lam.min() >= -1e-10 * (1.0 + np.abs(lam).max()):
                    z = z_eq
                    status = Status.OPTIMAL
                    break
                # Drop the most negative multiplier; break ties toward the
                # smallest original row index.
                order = sorted(range(len(working)), key=lambda i: (lam[i], rows[working[i]]))
                del working[order[0]]
                continue

            ap = a @ p
            slack = b - a @ z
            in_working = np.zeros(k, dtype=bool)
            in_working[working] = True
            pos_dir = ap > 1e-13 * max(1.0, np.abs(ap).max())
            cand = np.flatnonzero(pos_dir & ~in_working)
            alpha = 1.0
            blocking = -1
            if cand.size:
                ratios = np.maximum(slack[cand], 0.0) / ap[cand]
                best = ratios.min()
                if best < 1.0:
                    alpha = best
                    tie = cand[ratios <= best + 1e-12 * (1.0 + best)]
                    blocking = int(tie.min())

            if blocking < 0:
                z = z_eq
                seen_stalled.clear()
                continue

            z = z + alpha * p
            if alpha > 1e-13:
                seen_stalled.clear()
            else:
                key = tuple(sorted(working))
                if key in seen_stalled:
                    status = Status.DEGENERATE
                    break
                seen_stalled.add(key)

            if self._independent(a, working, blocking):
                working.append(blocking)
            else:
                # A truly blocking row cannot be exactly dependent on the
                # working set; fall back to the most independent candidate.
                tie_rows = [int(j) for j in cand if slack[j] <= alpha * ap[j] + feas_tol]
                added = False
                for j in sorted(tie_rows, key=lambda r: rows[r]):
                    if j not in working and self._independent(a, working, j):
                        working.append(j)
                        added = True
                        break
                if not added:
                    status = Status.DEGENERATE
                    break

        band = active_band(b)
        tight = np.flatnonzero(np.abs(a @ z - b) <= band)
        lam_local = np.zeros(k)
        for i, wrow in enumerate(working):
            lam_local[wrow] = max(float(lam[i]), 0.0) if i < lam.size else 0.0
        active = rows[tight]
        order = np.argsort(active)
        return QpSolution(
            z_star=z,
            multipliers=lam_local[tight][order],
            active_set=active[order],
            iterations=iterations,
            solve_time=time.perf_counter() - t0,
            status=status,
        )


def solve(q: MpQp, x, retained=None, warm_start=None) -> QpSolution:
    """One-shot convenience wrapper around ActiveSetSolver."""
    return ActiveSetSolver(q).solve(x, retained=retained, warm_start=warm_start)


def solve_oracle(q: MpQp, x, retained=None) -> QpSolution:
    """Enumerate candidate active sets and return the KKT-consistent optimum.

    Only subsets with linearly independent rows are considered; each
    candidate solves the equality-constrained system, and a candidate is
    accepted when its multipliers are nonnegative and the point is primal
    feasible, which makes it optimal for a strictly convex QP. Guarded to
    at most 12 retained rows and 6 decision variables.
    """
    t0 = time.perf_counter()
    x = linalg.as_vector(x, "x")
    rows = _normalize_retained(q, retained)
    if rows.size > 12 or q.n_z > 6:
        raise SizeGuard(f"oracle limits: 12 rows, 6 variables (got {rows.size}, {q.n_z})")

    hfact = linalg.cholesky(q.H)
    g0 = q.F.T @ x
    z_free = -linalg.solve_spd(hfact, g0)
    k = rows.size
    if k == 0:
        return QpSolution(
            z_star=z_free,
            multipliers=np.zeros(0),
            active_set=np.zeros(0, dtype=int),
            iterations=0,
            solve_time=time.perf_counter() - t0,
            status=Status.OPTIMAL,
        )

    a = q.G[rows]
    b = q.W[rows] + q.S[rows] @ x
    hinv_at = linalg.solve_spd(hfact, a.T)
    feas_tol = FEAS_RTOL * (1.0 + np.abs(b).max())

    best = None  # (objective, z, lam, combo)
    checked = 0
    for size in range(0, min(q.n_z, k) + 1):
        for combo in itertools.combinations(range(k), size):
            checked += 1
            if size:
                gs = a[list(combo)]
                if np.linalg.matrix_rank(gs) < size:
                    continue
                m = gs @ hinv_at[:, list(combo)]
                try:
                    lam = -np.linalg.solve(m, b[list(combo)] + gs @ (-z_free))
                except np.linalg.LinAlgError:
                    continue
                if lam.size and lam.min() < -1e-9 * (1.0 + np.abs(lam).max()):
                    continue
                z = z_free - hinv_at[:, list(combo)] @ lam
            else:
                lam = np.zeros(0)
                z = z_free
            if (a @ z - b).max() > feas_tol:
                continue
            obj = float(0.5 * z @ q.H @ z + g0 @ z)
            if best is None or obj < best[0]:
                best = (obj, z, lam, combo)

    if best is None:
        return QpSolution(
            z_star=np.full(q.n_z, np.nan),
            multipliers=np.zeros(0),
            active_set=np.zeros(0, dtype=int),
            iterations=checked,
            solve_time=time.perf_counter() - t0,
            status=Status.INFEASIBLE,
        )

    _, z, lam, combo = best
    band = active_band(b)
    tight = np.flatnonzero(np.abs(a @ z - b) <= band)
    lam_local = np.zeros(k)
    for i, j in enumerate(combo):
        lam_local[j] = max(float(lam[i]), 0.0)
    active = rows[tight]
    order = np.argsort(active)
    return QpSolution(
        z_star=z,
        multipliers=lam_local[tight][order],
        active_set=active[order],
        iterations=checked,
        solve_time=time.perf_counter() - t0,
        status=Status.OPTIMAL,
    )


def kkt_residuals(q: MpQp, x, sol: QpSolution, retained=None) -> KktResiduals:
    """Recompute KKT residuals from scratch for an OPTIMAL solution.

    Independent of solver internals: uses only (q, x, z*, active set,
    multipliers). All residuals are scaled to be dimensionless.
    """
    x = linalg.as_vector(x, "x")
    rows = _normalize_retained(q, retained)
    z = sol.z_star
    grad = q.H @ z + q.F.T @ x
    if sol.active_set.size:
        ga = q.G[sol.active_set]
        contrib = ga.T @ sol.multipliers
    else:
        contrib = np.zeros(q.n_z)
    scale = 1.0 + max(
        np.abs(q.H @ z).max(initial=0.0),
        np.abs(q.F.T @ x).max(initial=0.0),
        np.abs(contrib).max(initial=0.0),
    )
    stationarity = np.abs(grad + contrib).max(initial=0.0) / scale

    if rows.size:
        resid = q.G[rows] @ z - q.W[rows] - q.S[rows] @ x
        bscale = 1.0 + np.abs(q.W[rows] + q.S[rows] @ x)
        primal = float(np.maximum(resid / bscale, 0.0).max())
    else:
        primal = 0.0

    if sol.active_set.size:
        resid_a = q.G[sol.active_set] @ z - q.W[sol.active_set] - q.S[sol.active_set] @ x
        bscale_a = 1.0 + np.abs(q.W[sol.active_set] + q.S[sol.active_set] @ x)
        complementarity = float(np.abs(sol.multipliers * resid_a / bscale_a).max())
        dual = float(max(0.0, -sol.multipliers.min()))
    else:
        complementarity = 0.0
        dual = 0.0

    return KktResiduals(
        stationarity=float(stationarity),
        primal=primal,
        complementarity=complementarity,
        dual=dual,
    )
