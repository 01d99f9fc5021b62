"""Shared test utilities: independent oracles and small generators."""

from __future__ import annotations

import numpy as np
import scipy.sparse as sp
from scipy.optimize import linprog
from scipy.sparse.csgraph import maximum_flow

from datransport import Measure, TimeGrid


def integer_atoms_measure(grid: TimeGrid, rng, n_atoms: int = 40) -> tuple[Measure, np.ndarray]:
    """Random measure built from unit atoms; returns (measure, integer counts)."""
    counts = np.bincount(rng.integers(0, grid.n_t, n_atoms), minlength=grid.n_t)
    return Measure(grid, counts / n_atoms), counts


def maxflow_da_feasible(mu_counts: np.ndarray, nu_counts: np.ndarray, k: int) -> bool:
    """Exact bipartite feasibility via integer max-flow.

    Supply bin i may serve demand bin j iff j - i >= k.  Feasible iff the
    max flow moves the whole (integer) supply.
    """
    n = len(mu_counts)
    total = int(mu_counts.sum())
    if total != int(nu_counts.sum()):
        return False
    n_nodes = 2 * n + 2
    src, snk = 0, n_nodes - 1
    cap = np.zeros((n_nodes, n_nodes), dtype=np.int64)
    for i in range(n):
        cap[src, 1 + i] = mu_counts[i]
        cap[1 + n + i, snk] = nu_counts[i]
        for j in range(n):
            if j - i >= k:
                cap[1 + i, 1 + n + j] = total
    graph = sp.csr_matrix(cap)
    return maximum_flow(graph, src, snk).flow_value == total


def lp_min_cost_coupling(mu: np.ndarray, nu: np.ndarray, cost: np.ndarray) -> np.ndarray:
    """Dense LP transport solve (equality marginals); returns the plan matrix."""
    n, m = cost.shape
    a_eq = []
    b_eq = []
    for i in range(n):
        row = np.zeros((n, m))
        row[i, :] = 1.0
        a_eq.append(row.ravel())
        b_eq.append(mu[i])
    for j in range(m):
        col = np.zeros((n, m))
        col[:, j] = 1.0
        a_eq.append(col.ravel())
        b_eq.append(nu[j])
    res = linprog(cost.ravel(), A_eq=np.array(a_eq), b_eq=np.array(b_eq),
                  bounds=(0, None), method="highs")
    assert res.success, res.message
    return res.x.reshape(n, m)


def log_linear_fit(values: np.ndarray, start: int) -> tuple[float, float]:
    """Slope and R^2 of a straight-line fit to log10(values) from ``start``."""
    y = np.log10(np.maximum(values[start:], 1e-300))
    x = np.arange(start, start + y.size, dtype=float)
    slope, intercept = np.polyfit(x, y, 1)
    fitted = slope * x + intercept
    ss_res = float(np.sum((y - fitted) ** 2))
    ss_tot = float(np.sum((y - y.mean()) ** 2))
    return float(slope), 1.0 - ss_res / ss_tot if ss_tot > 0 else 0.0


def comonotone_violations(cells: np.ndarray) -> int:
    """Count crossing pairs across consecutive coordinate projections."""
    bad = 0
    for a in range(cells.shape[1] - 1):
        dx = cells[:, a][:, None] - cells[:, a][None, :]
        dy = cells[:, a + 1][:, None] - cells[:, a + 1][None, :]
        bad += int(np.sum((dx * dy) < 0) // 2)
    return bad
