"""Explicit Lipschitz constant of the QP solution map in the state.

The optimizer of the condensed QP, as a function of the measured state
and for ANY subset of retained constraint rows, satisfies

    ||z*(x1) - z*(x2)|| <= kappa * ||x1 - x2||

with

    kappa = ||inv(H) F'||  +  ||inv(H) G'|| * ||S + G inv(H) F'||
                              -----------------------------------
                                   min_j G_j inv(H) G_j'

All norms are spectral and every factor comes straight from the problem
matrices, so the constant is computed once, offline. Rescaling the rows
of (G, W, S) by a positive diagonal leaves the feasible set unchanged but
can tighten the bound; the row-norm scaling diag(1/||G_j||) is the stock
choice.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from . import linalg
from .errors import NonPositiveScale
from .model import MpQp
from .qp import ActiveSetSolver, Status


@dataclass(frozen=True)
class LipschitzCertificate:
    """Computed bound plus the term breakdown it reassembles from.

    terms holds: state_gain = ||inv(H) F'||, min_row_gram, constraint_gain
    = ||inv(H) G'|| (row-scaled when variant is "scaled"), and
    sensitivity = ||S + G inv(H) F'|| (row-scaled likewise).
    """

    kappa: float
    variant: str  # "unscaled" or "scaled"
    terms: dict
    norm_tol: float
    phi_diag: np.ndarray | None = None

    def reassembled(self) -> float:
        t = self.terms
        return t["state_gain"] + t["constraint_gain"] * t["sensitivity"] / t["min_row_gram"]


def _certificate(q: MpQp, phi: np.ndarray | None, norm_tol: float) -> LipschitzCertificate:
    hfact = linalg.cholesky(q.H)
    hinv_ft = linalg.solve_spd(hfact, q.F.T)
    state_gain = linalg.spectral_norm(hinv_ft, tol=norm_tol)

    g = q.G if phi is None else phi[:, None] * q.G
    s = q.S if phi is None else phi[:, None] * q.S
    min_gram = linalg.min_row_gram(g, hfact)
    hinv_gt = linalg.solve_spd(hfact, g.T)
    constraint_gain = linalg.spectral_norm(hinv_gt, tol=norm_tol)
    sensitivity = linalg.spectral_norm(s + g @ hinv_ft, tol=norm_tol)

    kappa = state_gain + constraint_gain * sensitivity / min_gram
    return LipschitzCertificate(
        kappa=float(kappa),
        variant="unscaled" if phi is None else "scaled",
        terms={
            "state_gain": float(state_gain),
            "min_row_gram": float(min_gram),
            "constraint_gain": float(constraint_gain),
            "sensitivity": float(sensitivity),
        },
        norm_tol=norm_tol,
        phi_diag=None if phi is None else phi.copy(),
    )


def kappa_max(q: MpQp, norm_tol: float = 1e-8) -> LipschitzCertificate:
    """Lipschitz constant of the solution map, no row scaling."""
    return _certificate(q, None, norm_tol)


def kappa_max_scaled(q: MpQp, phi_diag, norm_tol: float = 1e-8) -> LipschitzCertificate:
    """Lipschitz constant after scaling rows of (G, W, S) by phi_diag.

    phi_diag must be strictly positive so the scaling is full rank and the
    feasible set is unchanged.
    """
    phi = linalg.as_vector(phi_diag, "phi_diag")
    if phi.shape[0] != q.n_c:
        raise NonPositiveScale(f"phi_diag must have {q.n_c} entries, got {phi.shape[0]}")
    if phi.size == 0 or phi.min() <= 0:
        raise NonPositiveScale("phi_diag entries must be strictly positive")
    return _certificate(q, phi, norm_tol)


def row_norm_scaling(q: MpQp) -> np.ndarray:
    """The stock scaling diag(1/||G_1||, ..., 1/||G_nc||)."""
    return 1.0 / q.row_norms


def scale_rows(q: MpQp, phi_diag) -> MpQp:
    """A copy of the problem with (G, W, S) rows rescaled by phi_diag.

    The feasible set and optimizer are unchanged; only the bound varies.
    """
    phi = linalg.as_vector(phi_diag, "phi_diag")
    if phi.shape[0] != q.n_c or phi.size == 0 or phi.min() <= 0:
        raise NonPositiveScale("phi_diag must be strictly positive with one entry per row")
    g = phi[:, None] * q.G
    return replace(
        q,
        G=g,
        W=phi * q.W,
        S=phi[:, None] * q.S,
        row_norms=np.linalg.norm(g, axis=1),
    )


@dataclass(frozen=True)
class BoundValidation:
    """Empirical audit of the bound over sampled state pairs."""

    pairs_checked: int
    skipped: int
    violations: int
    max_ratio: float
    kappa: float


def validate_bound(
    q: MpQp,
    kappa,
    solver: ActiveSetSolver | None = None,
    samples: int = 200,
    seed: int = 0,
    state_box=None,
    retained_sets: int = 8,
    rel_slack: float = 1e-6,
) -> BoundValidation:
    """Check ||z*(x1) - z*(x2)|| <= kappa * ||x1 - x2|| on random pairs.

    States are drawn uniformly from state_box (defaults to the unit box);
    each pair is solved over a randomly retained row subset, with the full
    set always among the candidates. Pairs where either solve is
    infeasible are skipped and counted.
    """
    if samples < 1:
        raise ValueError("samples must be at least 1")
    kap = float(getattr(kappa, "kappa", kappa))
    solver = solver if solver is not None else ActiveSetSolver(q)
    rng = np.random.default_rng(seed)
    if state_box is None:
        lo, hi = -np.ones(q.n), np.ones(q.n)
    else:
        lo = linalg.as_vector(state_box[0], "state_box lower")
        hi = linalg.as_vector(state_box[1], "state_box upper")

    subsets = [None]  # full set first
    for _ in range(max(retained_sets - 1, 0)):
        mask = rng.random(q.n_c) < rng.uniform(0.3, 0.9)
        subsets.append(np.flatnonzero(mask))

    checked = 0
    skipped = 0
    violations = 0
    max_ratio = 0.0
    for i in range(samples):
        x1 = rng.uniform(lo, hi)
        x2 = rng.uniform(lo, hi)
        rows = subsets[i % len(subsets)]
        s1 = solver.solve(x1, retained=rows)
        s2 = solver.solve(x2, retained=rows)
        if s1.status is not Status.OPTIMAL or s2.status is not Status.OPTIMAL:
            skipped += 1
            continue
        checked += 1
        dx = float(np.linalg.norm(x1 - x2))
        dz = float(np.linalg.norm(s1.z_star - s2.z_star))
        if dx == 0.0:
            continue
        ratio = dz / dx
        max_ratio = max(max_ratio, ratio)
        if dz > kap * dx * (1.0 + rel_slack):
            violations += 1
    return BoundValidation(
        pairs_checked=checked,
        skipped=skipped,
        violations=violations,
        max_ratio=max_ratio,
        kappa=kap,
    )
