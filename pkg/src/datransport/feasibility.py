"""Feasibility certification and witness constructions for DA pairs.

A departure/arrival pair with minimum travel time ``delta`` is feasible
exactly when the departure CDF dominates the delta-shifted arrival CDF.
On the grid the shift is the conservative bin offset ``ceil(delta / dt)``,
and arrivals strictly earlier than any shifted departure are checked as
well (virtual bins below the grid carry zero departure mass).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import InfeasiblePreconditionError, MassMismatchError
from .grid_measures import (
    JointMeasure,
    Measure,
    TimeGrid,
    cdf,
    quantile,
    require_same_grid,
)

FEAS_SLACK = 1e-12


def shift_bins(delta: float, dt: float) -> int:
    """Conservative bin offset for a physical minimum travel time."""
    if delta < 0:
        raise ValueError(f"delta must be nonnegative, got {delta}")
    # guard against float noise promoting exact multiples to the next bin
    return max(int(math.ceil(delta / dt - 1e-9)), 0)


@dataclass(frozen=True)
class FeasibilityVerdict:
    feasible: bool
    margin: float
    violation_time: float | None


def check_da_feasibility(mu0: Measure, muT: Measure, delta: float) -> FeasibilityVerdict:
    """Shifted-CDF dominance test F0(t) >= FT(t + delta) at every bin.

    Exactly-tight instances count as feasible (slack ``FEAS_SLACK``).
    """
    grid = require_same_grid(mu0, muT)
    k = shift_bins(delta, grid.dt)
    f0 = cdf(mu0)
    ft = cdf(muT)
    total_t = ft[-1]
    margin = np.inf
    worst_j = 0
    # j indexes the departure-side evaluation point; j < 0 covers arrivals
    # earlier than any departure shifted by k bins.
    for j in range(-k, grid.n_t):
        left = f0[j] if j >= 0 else 0.0
        jt = j + k
        right = ft[jt] if jt < grid.n_t else total_t
        gap = left - right
        if gap <= margin:  # ties resolved toward the latest time
            margin = gap
            worst_j = j
    feasible = margin >= -FEAS_SLACK
    violation_time = None if feasible else float(grid.centers[max(worst_j, 0)])
    return FeasibilityVerdict(feasible=feasible, margin=float(margin),
                              violation_time=violation_time)


@dataclass(frozen=True, eq=False)
class TripletWitness:
    """Weighted (t0, t1, tT) atoms certifying feasibility with a rate cap."""

    grid: TimeGrid
    indices: np.ndarray  # (N, 3) bin indices
    weights: np.ndarray  # (N,) nonnegative, summing to one

    @property
    def total(self) -> float:
        return float(self.weights.sum())

    def marginal(self, axis: int) -> Measure:
        mass = np.bincount(self.indices[:, axis], weights=self.weights,
                           minlength=self.grid.n_t)
        return Measure(self.grid, mass)


def quantile_coupling_witness(mu0: Measure, muT: Measure, delta: float,
                              epsilon_gap: float, r: float,
                              n_samples: int) -> TripletWitness:
    """Constructive witness: quantile-coupled endpoints with a spread crossing.

    Deterministic stratified sampling: the probability level u takes the
    ``n_samples`` stratum midpoints of (0,1); within each u-stratum the
    crossing delay s takes the ``n_samples`` stratum midpoints of (0, 1/r).
    The crossing time is ``t1 = t0 + epsilon_gap + s``, so the t1-marginal
    stays below ``r * dt`` per bin up to one u-stratum weight, while the t0
    and tT marginals converge to the inputs as ``n_samples`` grows.
    """
    grid = require_same_grid(mu0, muT)
    if n_samples < 1:
        raise ValueError("n_samples must be at least 1")
    if not r > 0:
        raise ValueError(f"rate bound must be positive, got {r}")
    if epsilon_gap <= 0:
        raise ValueError(f"epsilon_gap must be positive, got {epsilon_gap}")
    if epsilon_gap + 1.0 / r >= delta:
        raise InfeasiblePreconditionError(
            f"need epsilon_gap + 1/r < delta, got {epsilon_gap} + {1.0 / r} >= {delta}")
    verdict = check_da_feasibility(mu0, muT, delta)
    if not verdict.feasible:
        raise InfeasiblePreconditionError(
            f"pair infeasible at delta={delta} (margin {verdict.margin})")

    n_u = n_s = n_samples
    weight = 1.0 / (n_u * n_s)
    idx = np.empty((n_u * n_s, 3), dtype=np.int64)
    row = 0
    window = 1.0 / r
    for i in range(n_u):
        u = (i + 0.5) / n_u
        t0 = quantile(mu0, u)
        t_arr = quantile(muT, u)
        b0 = grid.bin_of(t0)
        bT = grid.bin_of(t_arr)
        for q in range(n_s):
            s = (q + 0.5) / n_s * window
            b1 = grid.bin_of(t0 + epsilon_gap + s)
            idx[row] = (b0, b1, bT)
            row += 1
    # merge duplicate atoms so marginals are cheap to read off
    uniq, inverse = np.unique(idx, axis=0, return_inverse=True)
    weights = np.bincount(inverse, minlength=len(uniq)) * weight
    return TripletWitness(grid=grid, indices=uniq, weights=weights)


def monotone_rearrangement(src: Measure, dst: Measure) -> JointMeasure:
    """CDF-matching coupling of two equal-mass measures (northwest corner).

    The support is co-monotone: any two support points (a, b), (a', b')
    satisfy (a' - a) * (b' - b) >= 0, and the marginals are exact.
    """
    grid = require_same_grid(src, dst)
    if abs(src.total - dst.total) > 1e-12 * max(1.0, src.total):
        raise MassMismatchError(f"totals differ: {src.total!r} vs {dst.total!r}")
    a = src.mass.copy()
    b = dst.mass.copy()
    plan = np.zeros((grid.n_t, grid.n_t))
    i = j = 0
    n = grid.n_t
    while i < n and j < n:
        move = min(a[i], b[j])
        if move > 0:
            plan[i, j] += move
        a[i] -= move
        b[j] -= move
        if a[i] <= 0 and i < n:
            i += 1
        elif b[j] <= 0:
            j += 1
    return JointMeasure(grid, plan)
