"""Double-integrator benchmark: scenario build, timing, and reporting.

The scenario constrains the state to the intersection of tangent
half-spaces of two ellipses (plus an input bound) with a terminal set
built the same way from two more ellipses. Tangent counts are chosen so
the condensed problem has 1948 rows. The benchmark runs the reduced and
full controllers side by side, checks the trajectories coincide, and
times both solves per step (median of repeated identical calls).
"""

from __future__ import annotations

import csv
import json
import statistics
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.linalg import solve_triangular

from . import linalg
from .engine import CaMpcEngine, FullMpc, linear_plant, removal_geometry_violations
from .errors import DimensionMismatch
from .lipschitz import kappa_max, kappa_max_scaled, row_norm_scaling
from .model import MpcProblem, condense
from .qp import kkt_residuals


@dataclass(frozen=True)
class EllipseSpec:
    """Ellipse (x - center)' shape (x - center) <= 1 with a tangent budget."""

    center: np.ndarray
    shape: np.ndarray
    tangent_count: int

    def __post_init__(self):
        center = linalg.as_vector(self.center, "center")
        shape = linalg.as_matrix(self.shape, "shape")
        if shape.shape != (center.size, center.size):
            raise DimensionMismatch("ellipse shape matrix does not match the center")
        linalg.cholesky(shape)  # must be symmetric positive definite
        if self.tangent_count < 3:
            raise ValueError("tangent_count must be at least 3")
        object.__setattr__(self, "center", center)
        object.__setattr__(self, "shape", shape)
        object.__setattr__(self, "tangent_count", int(self.tangent_count))

    @property
    def dim(self) -> int:
        return self.center.size

    def boundary_point(self, direction: np.ndarray) -> np.ndarray:
        """Boundary point along a unit direction in the whitened space."""
        lower = linalg.cholesky(self.shape).lower
        return self.center + solve_triangular(lower.T, direction, lower=False)

    def contains(self, x, slack: float = 0.0) -> bool:
        v = np.asarray(x, dtype=float) - self.center
        return float(v @ self.shape @ v) <= 1.0 + slack


def tangent_rows(e: EllipseSpec, directions: np.ndarray):
    """Supporting half-spaces at the boundary points of the given directions.

    Each unit direction v yields the boundary point p = center + L^-T v
    (shape = L L') and the half-space

        (p - center)' shape (x - center) <= 1

    returned as rows (C_block, E_block) of C x <= E. Every row is tight at
    its own boundary point and contains the whole ellipse.
    """
    rows = []
    rhs = []
    for v in np.atleast_2d(directions):
        p = e.boundary_point(v / np.linalg.norm(v))
        a = (p - e.center) @ e.shape
        rows.append(a)
        rhs.append(1.0 + a @ e.center)
    return np.asarray(rows), np.asarray(rhs)


def linearize_ellipse(e: EllipseSpec):
    """Tangent rows at uniformly spaced angles (planar ellipses only)."""
    if e.dim != 2:
        raise DimensionMismatch("angular tangent placement needs a 2-D ellipse")
    angles = 2.0 * np.pi * np.arange(e.tangent_count) / e.tangent_count
    dirs = np.column_stack([np.cos(angles), np.sin(angles)])
    return tangent_rows(e, dirs)


@dataclass(frozen=True)
class ScenarioConfig:
    """Everything needed to build and run one benchmark scenario."""

    name: str
    A: np.ndarray
    B: np.ndarray
    Q: np.ndarray
    R: np.ndarray
    P: np.ndarray
    horizon: int
    input_bound: np.ndarray | None
    stage_ellipses: tuple
    terminal_ellipses: tuple
    x0: np.ndarray
    steps: int
    prune_radius: float
    seed: int
    extra_stage: tuple | None = None     # (C, D, E)
    extra_terminal: tuple | None = None  # (C_T, E_T)


def build_problem(cfg: ScenarioConfig) -> MpcProblem:
    """Assemble constraint blocks from bounds, tangents, and extras."""
    a = linalg.as_matrix(cfg.A, "A")
    b = linalg.as_matrix(cfg.B, "B")
    n, m = a.shape[0], b.shape[1]

    c_rows, d_rows, e_rows = [], [], []
    if cfg.input_bound is not None:
        ub = np.broadcast_to(np.asarray(cfg.input_bound, dtype=float), (m,))
        eye = np.eye(m)
        c_rows.append(np.zeros((2 * m, n)))
        d_rows.append(np.vstack([eye, -eye]))
        e_rows.append(np.concatenate([ub, ub]))
    for ell in cfg.stage_ellipses:
        cb, eb = linearize_ellipse(ell)
        c_rows.append(cb)
        d_rows.append(np.zeros((cb.shape[0], m)))
        e_rows.append(eb)
    if cfg.extra_stage is not None:
        ce, de, ee = cfg.extra_stage
        c_rows.append(linalg.as_matrix(ce, "stage C"))
        d_rows.append(linalg.as_matrix(de, "stage D"))
        e_rows.append(linalg.as_vector(ee, "stage E"))

    ct_rows, et_rows = [], []
    for ell in cfg.terminal_ellipses:
        cb, eb = linearize_ellipse(ell)
        ct_rows.append(cb)
        et_rows.append(eb)
    if cfg.extra_terminal is not None:
        ct, et = cfg.extra_terminal
        ct_rows.append(linalg.as_matrix(ct, "terminal C"))
        et_rows.append(linalg.as_vector(et, "terminal E"))

    return MpcProblem(
        A=a,
        B=b,
        C=np.vstack(c_rows) if c_rows else np.zeros((0, n)),
        D=np.vstack(d_rows) if d_rows else np.zeros((0, m)),
        E=np.concatenate(e_rows) if e_rows else np.zeros(0),
        C_T=np.vstack(ct_rows) if ct_rows else np.zeros((0, n)),
        E_T=np.concatenate(et_rows) if et_rows else np.zeros(0),
        Q=cfg.Q,
        R=cfg.R,
        P=cfg.P,
        N=cfg.horizon,
    )


def build_scenario(cfg: ScenarioConfig):
    """Problem, condensed QP, and the row-norm-scaled Lipschitz certificate."""
    problem = build_problem(cfg)
    q = condense(problem)
    cert = kappa_max_scaled(q, row_norm_scaling(q))
    return problem, q, cert


def state_bounding_box(cfg: ScenarioConfig, shrink: float = 1.0):
    """Axis-aligned box around the intersection-relevant ellipses.

    Used to sample states for bound validation; shrink < 1 biases samples
    toward the interior where the full problem tends to be feasible.
    """
    ells = tuple(cfg.stage_ellipses) + tuple(cfg.terminal_ellipses)
    if not ells:
        n = linalg.as_matrix(cfg.A, "A").shape[0]
        return -np.ones(n), np.ones(n)
    los, his = [], []
    for e in ells:
        # Half-width of the ellipse along axis i is sqrt of the i-th
        # diagonal of inv(shape).
        hw = np.sqrt(np.diag(np.linalg.inv(e.shape)))
        los.append(e.center - hw)
        his.append(e.center + hw)
    lo = np.max(los, axis=0)
    hi = np.min(his, axis=0)
    mid = 0.5 * (lo + hi)
    half = 0.5 * (hi - lo) * shrink
    return mid - half, mid + half


# -- default scenario -------------------------------------------------------

# Terminal ellipse: the source prints [[0.1, 0.7], [0.7, 0.97]], which is
# indefinite (det < 0) and cannot describe an ellipse; with 0.7 replaced
# by 0.07 the matrix is positive definite and the initial state's hold
# trajectory stays feasible, so that reading is used here.
_TERMINAL_SHAPE = [[0.1, 0.07], [0.07, 0.97]]


def default_scenario_dict() -> dict:
    """Double-integrator scenario; tangent counts give exactly 1948 rows."""
    return {
        "name": "double_integrator",
        "plant": {"A": [[1.0, 0.1], [0.0, 1.0]], "B": [[0.005], [0.1]]},
        "weights": {
            "Q": [[1.0, 0.0], [0.0, 1.0]],
            "R": [[1.0]],
            "P": [[1.0, 0.0], [0.0, 1.0]],
        },
        "horizon": 12,
        "input_bound": 1.0,
        "stage_ellipses": [
            {
                "center": [-2.15, 0.0],
                "shape": [[0.14, 0.17], [0.17, 1.7]],
                "tangent_count": 84,
            },
            {
                "center": [-2.15, 0.0],
                "shape": [[0.20, 0.05], [0.05, 0.21]],
                "tangent_count": 84,
            },
        ],
        "terminal_ellipses": [
            {
                "center": [-2.15, 0.0],
                "shape": [[0.14, 0.17], [0.17, 1.7]],
                "tangent_count": 38,
            },
            {"center": [-2.15, 0.0], "shape": _TERMINAL_SHAPE, "tangent_count": 38},
        ],
        "x0": [-4.1, 0.0],
        "steps": 150,
        "prune_radius": 0.0,
        "seed": 0,
    }


# -- benchmark run ----------------------------------------------------------

KAPPA_GUARD_WINDOW = (5.0, 100.0)


def _median_time(fn, repetitions: int) -> tuple[float, object]:
    """Median wall time of repeated identical calls; returns (time, result)."""
    times = []
    result = None
    for _ in range(repetitions):
        t0 = time.perf_counter()
        result = fn()
        times.append(time.perf_counter() - t0)
    return statistics.median(times), result


@dataclass
class BenchmarkReport:
    n_c: int
    kappa_unscaled: float
    kappa_scaled: float
    kappa_in_window: bool
    steps: int
    max_state_dev: float
    max_optimizer_dev: float
    equivalence_pass: bool
    median_reduced_s: float
    median_full_s: float
    median_speedup: float
    rows: list = field(default_factory=list)

    def summary_dict(self) -> dict:
        return {
            "n_c": self.n_c,
            "kappa_max": self.kappa_unscaled,
            "kappa_hat": self.kappa_scaled,
            "kappa_guard_window": list(KAPPA_GUARD_WINDOW),
            "kappa_in_window": self.kappa_in_window,
            "steps": self.steps,
            "equivalence": {
                "verdict": "PASS" if self.equivalence_pass else "FAIL",
                "max_state_dev": self.max_state_dev,
                "max_optimizer_dev": self.max_optimizer_dev,
            },
            "median_reduced_s": self.median_reduced_s,
            "median_full_s": self.median_full_s,
            "median_speedup": self.median_speedup,
        }


BENCH_METRIC_COLUMNS = [
    "n_kept",
    "n_removed",
    "removed_fraction",
    "radius",
    "removal_time_us",
    "solve_time_us",
    "reduced_total_time_us",
    "full_solve_time_us",
    "speedup",
    "max_kkt_residual",
    "optimizer_dev",
]


def run_benchmark(
    cfg: ScenarioConfig,
    out_dir=None,
    repetitions: int = 5,
    speedup_window_start: int = 15,
    state_tol: float = 1e-6,
    optimizer_tol: float = 1e-8,
) -> BenchmarkReport:
    """Side-by-side reduced vs full closed loop with per-step timing.

    Timed sections are cold solves (no warm starts) on both sides so the
    comparison measures per-step solver work, not carried-over state. Each
    step's timings are medians over `repetitions` identical calls; the
    loop state is committed once afterwards. The reported speedup is the
    ratio of median full time to median reduced time (including neighbor
    search and removal) over steps at and past `speedup_window_start`.
    """
    problem, q, cert = build_scenario(cfg)
    cert_unscaled = kappa_max(q)
    plant = linear_plant(problem.A, problem.B)
    engine = CaMpcEngine(q, cert.kappa, warm_start=False)
    full = FullMpc(q, warm_start=False)
    x_ca = linalg.as_vector(cfg.x0, "x0").copy()
    x_full = x_ca.copy()

    # Warm the allocator and code paths so step 0 is not an outlier.
    engine.evaluate(x_ca)
    full.solver.solve(x_full, retained=None)

    rows = []
    reduced_times = []
    full_times = []
    max_state_dev = 0.0
    max_z_dev = 0.0
    for k in range(cfg.steps):
        t_red, (report, sol) = _median_time(lambda: engine.evaluate(x_ca), repetitions)
        t_full, (u_full, sol_full) = _median_time(lambda: full.step(x_full), repetitions)
        z_dev = float(np.abs(sol.z_star - sol_full.z_star).max())
        max_z_dev = max(max_z_dev, z_dev)

        audit = removal_geometry_violations(q, x_ca, report)
        if audit.size:
            raise AssertionError(f"removal audit failed at step {k}: rows {audit.tolist()}")
        kkt = kkt_residuals(q, x_ca, sol, retained=report.kept).max_scaled

        u = engine.commit(x_ca, sol)
        row = {"step": k}
        row.update({f"state_{i}": x_ca[i] for i in range(q.n)})
        row.update({f"input_{i}": u[i] for i in range(q.m)})
        row.update(
            {
                "n_kept": report.n_kept,
                "n_removed": report.n_removed,
                "removed_fraction": report.removed_fraction,
                "radius": report.radius,
                "removal_time_us": report.removal_time * 1e6,
                "solve_time_us": report.solve_time * 1e6,
                "reduced_total_time_us": t_red * 1e6,
                "full_solve_time_us": t_full * 1e6,
                "speedup": t_full / t_red if t_red > 0 else float("inf"),
                "max_kkt_residual": kkt,
                "optimizer_dev": z_dev,
            }
        )
        rows.append(row)
        reduced_times.append(t_red)
        full_times.append(t_full)
        x_ca = plant(x_ca, u)
        x_full = plant(x_full, u_full)
        max_state_dev = max(max_state_dev, float(np.linalg.norm(x_ca - x_full)))

    window = slice(min(speedup_window_start, cfg.steps - 1), None)
    med_red = statistics.median(reduced_times[window])
    med_full = statistics.median(full_times[window])
    report = BenchmarkReport(
        n_c=q.n_c,
        kappa_unscaled=cert_unscaled.kappa,
        kappa_scaled=cert.kappa,
        kappa_in_window=KAPPA_GUARD_WINDOW[0] <= cert.kappa <= KAPPA_GUARD_WINDOW[1],
        steps=cfg.steps,
        max_state_dev=max_state_dev,
        max_optimizer_dev=max_z_dev,
        equivalence_pass=max_state_dev <= state_tol and max_z_dev <= optimizer_tol,
        median_reduced_s=med_red,
        median_full_s=med_full,
        median_speedup=med_full / med_red if med_red > 0 else float("inf"),
        rows=rows,
    )
    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        write_bench_csv(out / "bench.csv", rows)
        with open(out / "summary.json", "w") as fh:
            json.dump(report.summary_dict(), fh, indent=2)
    return report


def write_bench_csv(path, rows: list):
    if not rows:
        raise ValueError("no benchmark rows to write")
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=list(rows[0].keys()))
        writer.writeheader()
        writer.writerows(rows)
