"""Finite-horizon linear MPC description and its condensed QP form.

The control problem

    min  sum_{t=0}^{N-1} 1/2 (x_t' Q x_t + u_t' R u_t) + 1/2 x_N' P x_N
    s.t. x_{t+1} = A x_t + B u_t
         C x_t + D u_t <= E          t = 0..N-1
         C_T x_N <= E_T
         x_0 = x (measured)

is condensed by eliminating the predicted states, leaving the stacked
input sequence z = (u_0, ..., u_{N-1}) as the only decision vector:

    min  1/2 z' H z + x' F z        (plus a z-independent offset)
    s.t. G z <= W + S x

Keeping only inputs as variables preserves strict convexity of H whenever
R is positive definite, which the downstream Lipschitz bound requires.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import block_diag

from . import linalg
from .errors import DimensionMismatch, ZeroRow

ROW_NORM_RTOL = 1e-12


@dataclass(frozen=True)
class RowTag:
    """Provenance of one condensed constraint row.

    kind is "stage" or "terminal"; stage is the prediction step t the row
    came from (N for terminal rows); source_row indexes into the original
    C/D/E or C_T/E_T block.
    """

    kind: str
    stage: int
    source_row: int


@dataclass(frozen=True)
class MpcProblem:
    """Plant, constraint, and weight data for the finite-horizon problem."""

    A: np.ndarray
    B: np.ndarray
    C: np.ndarray
    D: np.ndarray
    E: np.ndarray
    C_T: np.ndarray
    E_T: np.ndarray
    Q: np.ndarray
    R: np.ndarray
    P: np.ndarray
    N: int

    def __post_init__(self):
        a = linalg.as_matrix(self.A, "A")
        n = a.shape[0]
        if a.shape != (n, n):
            raise DimensionMismatch(f"A must be square, got {a.shape}")
        b = linalg.as_matrix(self.B, "B")
        if b.shape[0] != n:
            raise DimensionMismatch(f"B must have {n} rows, got {b.shape}")
        m = b.shape[1]
        c = linalg.as_matrix(self.C, "C")
        d = linalg.as_matrix(self.D, "D")
        e = linalg.as_vector(self.E, "E")
        if c.shape[1] != n or d.shape[1] != m or c.shape[0] != d.shape[0]:
            raise DimensionMismatch("stage constraint blocks C, D are inconsistent")
        if e.shape[0] != c.shape[0]:
            raise DimensionMismatch("E length must match the stage constraint row count")
        ct = linalg.as_matrix(self.C_T, "C_T")
        et = linalg.as_vector(self.E_T, "E_T")
        if ct.shape[0] and ct.shape[1] != n:
            raise DimensionMismatch(f"C_T must have {n} columns, got {ct.shape}")
        if et.shape[0] != ct.shape[0]:
            raise DimensionMismatch("E_T length must match the terminal row count")
        if int(self.N) < 1:
            raise ValueError(f"horizon must be at least 1, got {self.N}")
        # Origin must be strictly feasible so the history store can be
        # seeded with the zero record.
        if e.size and e.min() <= 0:
            raise ValueError("stage constraint offsets E must be strictly positive")
        if et.size and et.min() <= 0:
            raise ValueError("terminal constraint offsets E_T must be strictly positive")
        for name in ("Q", "R", "P"):
            w = linalg.as_matrix(getattr(self, name), name)
            expect = m if name == "R" else n
            if w.shape != (expect, expect):
                raise DimensionMismatch(f"{name} must be {expect}x{expect}, got {w.shape}")
            linalg.cholesky(w)  # raises NotSymmetric / NotPositiveDefinite
        for name, value in (
            ("A", a), ("B", b), ("C", c), ("D", d), ("E", e),
            ("C_T", ct), ("E_T", et),
            ("Q", linalg.as_matrix(self.Q, "Q")),
            ("R", linalg.as_matrix(self.R, "R")),
            ("P", linalg.as_matrix(self.P, "P")),
        ):
            frozen = value.copy()
            frozen.setflags(write=False)
            object.__setattr__(self, name, frozen)
        object.__setattr__(self, "N", int(self.N))

    @property
    def n(self) -> int:
        return self.A.shape[0]

    @property
    def m(self) -> int:
        return self.B.shape[1]


@dataclass(frozen=True)
class MeasuredStateCheck:
    """Stage-0 rows with zero input coefficients, kept for runtime warnings.

    These rows constrain only the measured state, so they are dropped from
    the condensed constraint set; violations are reported, not enforced.
    """

    C0: np.ndarray
    E0: np.ndarray
    source_rows: tuple

    def violations(self, x: np.ndarray, tol: float = 0.0) -> np.ndarray:
        if self.C0.shape[0] == 0:
            return np.empty(0, dtype=int)
        resid = self.C0 @ x - self.E0
        return np.flatnonzero(resid > tol)


@dataclass(frozen=True)
class MpQp:
    """Condensed multiparametric QP data with per-row metadata.

    Row norms of G are precomputed once; the online removal rule consumes
    them every step.
    """

    H: np.ndarray
    F: np.ndarray
    G: np.ndarray
    W: np.ndarray
    S: np.ndarray
    row_norms: np.ndarray
    row_tags: tuple
    N: int
    n: int
    m: int
    measured_checks: MeasuredStateCheck = field(repr=False, default=None)

    def __post_init__(self):
        h = linalg.as_matrix(self.H, "H")
        f = linalg.as_matrix(self.F, "F")
        g = linalg.as_matrix(self.G, "G")
        w = linalg.as_vector(self.W, "W")
        s = linalg.as_matrix(self.S, "S")
        n_z = h.shape[0]
        if h.shape != (n_z, n_z):
            raise DimensionMismatch(f"H must be square, got {h.shape}")
        if f.shape != (self.n, n_z):
            raise DimensionMismatch(f"F must be {self.n}x{n_z}, got {f.shape}")
        if n_z != self.N * self.m:
            raise DimensionMismatch(f"H is {n_z}x{n_z} but N*m = {self.N * self.m}")
        n_c = g.shape[0]
        if g.shape[1] != n_z or w.shape[0] != n_c or s.shape != (n_c, self.n):
            raise DimensionMismatch("constraint blocks G, W, S are inconsistent")
        if len(self.row_tags) != n_c:
            raise DimensionMismatch("row_tags must have one entry per constraint row")
        linalg.cholesky(h)  # H must be symmetric positive definite
        norms = np.linalg.norm(g, axis=1)
        zero = np.flatnonzero(norms == 0.0)
        if zero.size:
            raise ZeroRow(f"G rows {zero.tolist()} are identically zero")
        given = linalg.as_vector(self.row_norms, "row_norms")
        if given.shape != norms.shape or np.abs(given - norms).max() > ROW_NORM_RTOL * norms.max():
            raise ValueError("row_norms do not match the rows of G")
        for name, value in (("H", h), ("F", f), ("G", g), ("W", w), ("S", s), ("row_norms", given)):
            frozen = value.copy()
            frozen.setflags(write=False)
            object.__setattr__(self, name, frozen)
        if self.measured_checks is None:
            object.__setattr__(
                self,
                "measured_checks",
                MeasuredStateCheck(np.zeros((0, self.n)), np.zeros(0), ()),
            )

    @property
    def n_z(self) -> int:
        return self.H.shape[0]

    @property
    def n_c(self) -> int:
        return self.G.shape[0]


def condense(p: MpcProblem) -> MpQp:
    """Eliminate predicted states and stack the input sequence.

    Builds the prediction maps x_t = A^t x + Theta_t z, assembles the cost
    blocks H and F, and stacks stage plus terminal constraint rows into
    G z <= W + S x. Stage-0 rows whose input coefficients are all zero
    constrain only the measured state; they are dropped from the QP and
    recorded as measured-state checks.
    """
    n, m, N = p.n, p.m, p.N
    n_z = N * m

    apow = [np.eye(n)]
    for _ in range(N):
        apow.append(p.A @ apow[-1])

    # theta[t] maps z to x_t (n x n_z); theta[0] is zero.
    theta = [np.zeros((n, n_z))]
    for t in range(1, N + 1):
        blocks = [apow[t - 1 - i] @ p.B for i in range(t)]
        theta.append(np.hstack(blocks + [np.zeros((n, (N - t) * m))]))

    qbar = block_diag(*([p.Q] * (N - 1) + [p.P])) if N > 1 else p.P
    rbar = block_diag(*([p.R] * N))
    gamma = np.vstack([apow[t] for t in range(1, N + 1)])
    theta_full = np.vstack(theta[1:])
    h = rbar + theta_full.T @ qbar @ theta_full
    h = 0.5 * (h + h.T)
    f = gamma.T @ qbar @ theta_full

    g_rows, w_rows, s_rows, tags = [], [], [], []
    c_stage = p.C.shape[0]

    # Stage 0: x_0 is the measured state, so only the input part lands in G.
    dropped = [j for j in range(c_stage) if not p.D[j].any()]
    kept0 = [j for j in range(c_stage) if p.D[j].any()]
    if kept0:
        block = np.zeros((len(kept0), n_z))
        block[:, :m] = p.D[kept0]
        g_rows.append(block)
        w_rows.append(p.E[kept0])
        s_rows.append(-p.C[kept0])
        tags.extend(RowTag("stage", 0, j) for j in kept0)

    for t in range(1, N):
        u_sel = np.zeros((m, n_z))
        u_sel[:, t * m : (t + 1) * m] = np.eye(m)
        g_rows.append(p.C @ theta[t] + p.D @ u_sel)
        w_rows.append(p.E)
        s_rows.append(-p.C @ apow[t])
        tags.extend(RowTag("stage", t, j) for j in range(c_stage))

    if p.C_T.shape[0]:
        g_rows.append(p.C_T @ theta[N])
        w_rows.append(p.E_T)
        s_rows.append(-p.C_T @ apow[N])
        tags.extend(RowTag("terminal", N, j) for j in range(p.C_T.shape[0]))

    if g_rows:
        g = np.vstack(g_rows)
        w = np.concatenate(w_rows)
        s = np.vstack(s_rows)
    else:
        g = np.zeros((0, n_z))
        w = np.zeros(0)
        s = np.zeros((0, n))

    checks = MeasuredStateCheck(
        C0=np.ascontiguousarray(p.C[dropped]),
        E0=np.ascontiguousarray(p.E[dropped]),
        source_rows=tuple(dropped),
    )
    return MpQp(
        H=h,
        F=f,
        G=g,
        W=w,
        S=s,
        row_norms=np.linalg.norm(g, axis=1),
        row_tags=tuple(tags),
        N=N,
        n=n,
        m=m,
        measured_checks=checks,
    )


def evaluate_cost(q: MpQp, x, z) -> float:
    """Condensed objective 1/2 z' H z + x' F z."""
    x = linalg.as_vector(x, "x")
    z = linalg.as_vector(z, "z")
    if x.shape[0] != q.n:
        raise DimensionMismatch(f"x has length {x.shape[0]}, expected {q.n}")
    if z.shape[0] != q.n_z:
        raise DimensionMismatch(f"z has length {z.shape[0]}, expected {q.n_z}")
    return float(0.5 * z @ q.H @ z + x @ q.F @ z)


@dataclass(frozen=True)
class ViolationReport:
    count: int
    max_violation: float
    worst_row: int  # -1 when there are no violations


def check_feasible(q: MpQp, x, z, tol: float = 0.0) -> ViolationReport:
    """Report rows with G_j z - W_j - S_j x > tol."""
    x = linalg.as_vector(x, "x")
    z = linalg.as_vector(z, "z")
    if x.shape[0] != q.n or z.shape[0] != q.n_z:
        raise DimensionMismatch("x or z length does not match the QP")
    resid = q.G @ z - q.W - q.S @ x
    mask = resid > tol
    count = int(mask.sum())
    if count == 0:
        return ViolationReport(0, 0.0, -1)
    worst = int(np.argmax(resid))
    return ViolationReport(count, float(resid[worst]), worst)
