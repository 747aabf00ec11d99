"""Constraint-adaptive MPC loop backed by closed-loop history.

Each control step looks up the stored state nearest to the measured one.
Because the QP solution map is Lipschitz in the state, the new optimizer
lies in a ball around the stored optimizer with radius

    kappa * ||x - x_tilde||

Any constraint half-space that strictly contains that ball (checked with
one dot product per row against precomputed row norms and cached slacks)
cannot be active, so the row is dropped before solving. Rows that were
active at the stored neighbor are always kept, which is what makes the
reduced optimizer provably identical to the full one.
"""

from __future__ import annotations

import csv
import time
from dataclasses import dataclass, field

import numpy as np

from . import linalg
from .errors import DimensionMismatch, EmptyStore, SolveFailed
from .model import MpQp
from .qp import ActiveSetSolver, QpSolution, Status, active_band, kkt_residuals

# Strictness margin for the removal inequality: never drop a row the
# certified ball touches to within rounding.
REMOVAL_MARGIN_RTOL = 1e-9


@dataclass(frozen=True)
class HistoryRecord:
    """One stored closed-loop sample: state, optimizer, active set, slacks.

    slack_offsets caches W - G @ z_star for every row, so the online check
    against a new state x only needs S @ x on top of it.
    """

    x_tilde: np.ndarray
    z_star: np.ndarray
    active_set: np.ndarray
    slack_offsets: np.ndarray

    @classmethod
    def from_solution(cls, q: MpQp, x, sol: QpSolution) -> "HistoryRecord":
        x = linalg.as_vector(x, "x")
        offsets = q.W - q.G @ sol.z_star
        rec = cls(
            x_tilde=x,
            z_star=sol.z_star.copy(),
            active_set=np.asarray(sol.active_set, dtype=int),
            slack_offsets=offsets,
        )
        rec.validate(q)
        return rec

    def validate(self, q: MpQp):
        slack = self.slack_offsets + q.S @ self.x_tilde
        band = active_band(q.W + q.S @ self.x_tilde)
        if self.active_set.size and (np.abs(slack[self.active_set]) > band[self.active_set]).any():
            raise ValueError("active_set rows are not tight at the stored point")
        if slack.size and (slack + band).min() < 0:
            raise ValueError("stored point is infeasible")


def origin_record(q: MpQp) -> HistoryRecord:
    """Seed record at the origin: x = 0, z = 0, empty active set.

    Valid because the constraint offsets are strictly positive, so the
    origin is feasible with the zero input sequence.
    """
    return HistoryRecord(
        x_tilde=np.zeros(q.n),
        z_star=np.zeros(q.n_z),
        active_set=np.zeros(0, dtype=int),
        slack_offsets=q.W.copy(),
    )


class HistoryStore:
    """Ordered collection of history records with optional density pruning.

    With prune_radius > 0, a new record is skipped when an existing state
    lies within that radius, which bounds store growth on long runs.
    """

    def __init__(self, prune_radius: float = 0.0):
        if prune_radius < 0:
            raise ValueError("prune_radius must be nonnegative")
        self.prune_radius = float(prune_radius)
        self.records: list[HistoryRecord] = []
        self._states: list[np.ndarray] = []

    def __len__(self) -> int:
        return len(self.records)

    def add(self, rec: HistoryRecord) -> bool:
        if self.prune_radius > 0 and self.records:
            dists = np.linalg.norm(np.asarray(self._states) - rec.x_tilde, axis=1)
            if dists.min() < self.prune_radius:
                return False
        self.records.append(rec)
        self._states.append(rec.x_tilde)
        return True

    def nearest(self, x) -> HistoryRecord:
        """Record minimizing the distance to x; ties go to the earliest."""
        if not self.records:
            raise EmptyStore("history store has no records")
        x = np.asarray(x, dtype=float)
        dists = np.linalg.norm(np.asarray(self._states) - x, axis=1)
        return self.records[int(np.argmin(dists))]


def seeded_store(q: MpQp, prune_radius: float = 0.0) -> HistoryStore:
    store = HistoryStore(prune_radius)
    store.add(origin_record(q))
    return store


@dataclass
class RemovalReport:
    """Outcome of the sphere / half-space check for one step."""

    kept: np.ndarray
    removed: np.ndarray
    neighbor: HistoryRecord
    radius: float
    n_c: int
    removal_time: float
    solve_time: float = 0.0
    fallback: bool = False

    @property
    def n_removed(self) -> int:
        return self.removed.size

    @property
    def n_kept(self) -> int:
        return self.kept.size

    @property
    def removed_fraction(self) -> float:
        return self.removed.size / self.n_c if self.n_c else 0.0


def removal_set(q: MpQp, kappa: float, x, rec: HistoryRecord) -> RemovalReport:
    """Rows whose half-space strictly contains the certified ball.

    A row j is removable when

        kappa * ||x - x_tilde|| * ||G_j|| < W_j + S_j x - G_j z_star(x_tilde)

    evaluated with the current state x on the right-hand side. Rows in the
    neighbor's active set are never removed. The strict inequality carries
    a scale-aware margin so rows the ball touches to within rounding stay.
    """
    if kappa < 0:
        raise ValueError("kappa must be nonnegative")
    t0 = time.perf_counter()
    x = np.asarray(x, dtype=float)
    if x.shape != rec.x_tilde.shape or x.shape[0] != q.n:
        raise DimensionMismatch("state dimension does not match the problem")
    radius = kappa * float(np.linalg.norm(x - rec.x_tilde))
    sx = q.S @ x
    slack = rec.slack_offsets + sx
    margin = REMOVAL_MARGIN_RTOL * (1.0 + np.abs(q.W + sx))
    mask = radius * q.row_norms < slack - margin
    if rec.active_set.size:
        mask[rec.active_set] = False
    removed = np.flatnonzero(mask)
    kept = np.flatnonzero(~mask)
    return RemovalReport(
        kept=kept,
        removed=removed,
        neighbor=rec,
        radius=radius,
        n_c=q.n_c,
        removal_time=time.perf_counter() - t0,
    )


def removal_geometry_violations(q: MpQp, x, report: RemovalReport) -> np.ndarray:
    """Independent geometric audit of a removal decision.

    Recomputes, without the cached row norms or slack offsets, the distance
    from the neighbor's optimizer to each removed row's hyperplane and
    returns the removed rows whose distance does not exceed the ball
    radius. Empty output certifies the step.
    """
    x = np.asarray(x, dtype=float)
    z = report.neighbor.z_star
    bad = []
    for j in report.removed:
        gj = np.array(q.G[j], dtype=float)
        dist = (q.W[j] + q.S[j] @ x - gj @ z) / np.linalg.norm(gj)
        if not dist > report.radius:
            bad.append(int(j))
    return np.asarray(bad, dtype=int)


@dataclass
class StepResult:
    u: np.ndarray
    removal: RemovalReport
    solution: QpSolution
    measured_violations: np.ndarray
    kkt_max: float = float("nan")


class CaMpcEngine:
    """Receding-horizon controller with history-based constraint removal."""

    def __init__(
        self,
        q: MpQp,
        kappa,
        solver: ActiveSetSolver | None = None,
        store: HistoryStore | None = None,
        prune_radius: float = 0.0,
        full_fallback: bool = True,
        warm_start: bool = True,
    ):
        self.q = q
        self.kappa = float(getattr(kappa, "kappa", kappa))
        if self.kappa < 0:
            raise ValueError("kappa must be nonnegative")
        self.solver = solver if solver is not None else ActiveSetSolver(q)
        self.store = store if store is not None else seeded_store(q, prune_radius)
        self.full_fallback = full_fallback
        self.warm_start = warm_start

    def evaluate(self, x) -> tuple[RemovalReport, QpSolution]:
        """Neighbor lookup, removal rule, and reduced solve; no commit.

        Pure with respect to engine state, so it can be repeated for
        timing. Falls back to the full constraint set when the reduced
        solve fails, which floating-point slack near the ball boundary
        could in principle cause.
        """
        rec = self.store.nearest(x)
        report = removal_set(self.q, self.kappa, x, rec)
        warm = rec.active_set if self.warm_start else None
        t0 = time.perf_counter()
        sol = self.solver.solve(x, retained=report.kept, warm_start=warm)
        report.solve_time = time.perf_counter() - t0
        if sol.status is not Status.OPTIMAL and self.full_fallback:
            report.fallback = True
            sol = self.solver.solve(x, retained=None, warm_start=warm)
        if sol.status is not Status.OPTIMAL:
            raise SolveFailed(f"step solve failed with status {sol.status.value}")
        return report, sol

    def commit(self, x, sol: QpSolution) -> np.ndarray:
        """Store the new sample (subject to pruning) and return the input."""
        self.store.add(HistoryRecord.from_solution(self.q, x, sol))
        return sol.z_star[: self.q.m]

    def step(self, x) -> StepResult:
        report, sol = self.evaluate(x)
        u = self.commit(x, sol)
        violations = self.q.measured_checks.violations(np.asarray(x, dtype=float))
        return StepResult(u=u, removal=report, solution=sol, measured_violations=violations)


class FullMpc:
    """Baseline receding-horizon controller solving the full QP each step."""

    def __init__(self, q: MpQp, solver: ActiveSetSolver | None = None, warm_start: bool = True):
        self.q = q
        self.solver = solver if solver is not None else ActiveSetSolver(q)
        self.warm_start = warm_start
        self._last_active: np.ndarray | None = None

    def step(self, x) -> tuple[np.ndarray, QpSolution]:
        warm = self._last_active if self.warm_start else None
        sol = self.solver.solve(x, retained=None, warm_start=warm)
        if sol.status is not Status.OPTIMAL:
            raise SolveFailed(f"full solve failed with status {sol.status.value}")
        if self.warm_start:
            self._last_active = sol.active_set
        return sol.z_star[: self.q.m], sol


def linear_plant(a, b):
    """Closed-loop update x' = A x + B u as a plant callable."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    return lambda x, u: a @ x + b @ u


@dataclass
class TrajectoryLog:
    """Per-step record of a closed-loop run, exportable as CSV."""

    states: np.ndarray
    inputs: np.ndarray
    steps: list = field(default_factory=list)
    full_solve_times: list = field(default_factory=list)
    error: str | None = None

    def removed_fractions(self) -> np.ndarray:
        return np.array([s.removal.removed_fraction for s in self.steps])

    def to_csv(self, path):
        n = self.states.shape[1]
        m = self.inputs.shape[1] if self.inputs.size else 1
        header = (
            ["step"]
            + [f"state_{i}" for i in range(n)]
            + [f"input_{i}" for i in range(m)]
            + [
                "n_kept",
                "n_removed",
                "radius",
                "removal_time_us",
                "solve_time_us",
                "full_solve_time_us",
                "max_kkt_residual",
            ]
        )
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(header)
            for k, res in enumerate(self.steps):
                full_t = ""
                if k < len(self.full_solve_times):
                    full_t = f"{self.full_solve_times[k] * 1e6:.3f}"
                writer.writerow(
                    [k]
                    + [f"{v:.17g}" for v in self.states[k]]
                    + [f"{v:.17g}" for v in res.u]
                    + [
                        res.removal.n_kept,
                        res.removal.n_removed,
                        f"{res.removal.radius:.17g}",
                        f"{res.removal.removal_time * 1e6:.3f}",
                        f"{res.removal.solve_time * 1e6:.3f}",
                        full_t,
                        f"{res.kkt_max:.6e}",
                    ]
                )


def run_closed_loop(engine: CaMpcEngine, x0, steps: int, plant) -> TrajectoryLog:
    """Drive the plant for a number of steps, logging every step.

    On a solve failure the log collected so far is returned with the error
    message attached rather than lost.
    """
    x = linalg.as_vector(x0, "x0")
    states = [x.copy()]
    inputs = []
    results = []
    error = None
    for _ in range(steps):
        try:
            res = engine.step(x)
        except SolveFailed as exc:
            error = str(exc)
            break
        res.kkt_max = kkt_residuals(engine.q, x, res.solution, retained=res.removal.kept).max_scaled
        results.append(res)
        inputs.append(res.u)
        x = np.asarray(plant(x, res.u), dtype=float)
        states.append(x.copy())
    return TrajectoryLog(
        states=np.asarray(states),
        inputs=np.asarray(inputs) if inputs else np.zeros((0, engine.q.m)),
        steps=results,
        error=error,
    )


@dataclass(frozen=True)
class EquivalenceReport:
    """Side-by-side comparison of the reduced and full closed loops."""

    steps: int
    max_state_dev: float
    max_input_dev: float
    max_optimizer_dev: float
    min_removed_fraction: float
    mean_removed_fraction: float

    def passed(self, state_tol: float = 1e-6, optimizer_tol: float = 1e-8) -> bool:
        return self.max_state_dev <= state_tol and self.max_optimizer_dev <= optimizer_tol


def certify_equivalence(
    q: MpQp,
    kappa,
    x0,
    steps: int,
    plant,
    prune_radius: float = 0.0,
    audit_geometry: bool = False,
) -> EquivalenceReport:
    """Run the reduced and full controllers from the same start and compare.

    The two loops evolve independently (each applies its own input to its
    own plant copy), so any divergence compounds and cannot hide. With
    audit_geometry=True every removal decision is also re-checked with the
    independent hyperplane-distance audit; a failed audit raises.
    """
    ca = CaMpcEngine(q, kappa, prune_radius=prune_radius)
    full = FullMpc(q)
    x_ca = linalg.as_vector(x0, "x0").copy()
    x_full = x_ca.copy()
    max_state = 0.0
    max_input = 0.0
    max_z = 0.0
    fractions = []
    for k in range(steps):
        res = ca.step(x_ca)
        if audit_geometry:
            bad = removal_geometry_violations(q, x_ca, res.removal)
            if bad.size:
                raise AssertionError(f"removal audit failed at step {k}, rows {bad.tolist()}")
        u_full, sol_full = full.step(x_full)
        max_z = max(max_z, float(np.abs(res.solution.z_star - sol_full.z_star).max()))
        max_input = max(max_input, float(np.abs(res.u - u_full).max()))
        fractions.append(res.removal.removed_fraction)
        x_ca = np.asarray(plant(x_ca, res.u), dtype=float)
        x_full = np.asarray(plant(x_full, u_full), dtype=float)
        max_state = max(max_state, float(np.linalg.norm(x_ca - x_full)))
    return EquivalenceReport(
        steps=steps,
        max_state_dev=max_state,
        max_input_dev=max_input,
        max_optimizer_dev=max_z,
        min_removed_fraction=float(min(fractions)) if fractions else 0.0,
        mean_removed_fraction=float(np.mean(fractions)) if fractions else 0.0,
    )
