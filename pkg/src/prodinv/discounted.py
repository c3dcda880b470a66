"""Discounted-cost control: value iteration on the uniformized operator and
policy iteration with exact linear-solve evaluation."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as la
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from . import _kernels
from .errors import NonConvergence, SolveFailed
from .model import (ActionGrid, ModelParams, build_action_grid, generator_matrix, policy_costs,
                    validate_params, validate_policy)

EPS = np.finfo(float).eps
PI_MAX_ITER = 10_000


@dataclass
class DiscountedSolveReport:
    method: str
    iterations: int
    final_sup_diff: float
    contraction_modulus: float
    hjb_residual: float
    policy: np.ndarray
    values: np.ndarray
    history: list = field(default_factory=list)
    iteration_bound: int | None = None
    min_increment: float | None = None


def contraction_modulus(p: ModelParams) -> float:
    return p.unif_rate / (p.unif_rate + p.alpha)


def scan_args(p: ModelParams, grid: ActionGrid):
    """Per-state arrays consumed by the grid-scan kernels."""
    lat = p.lattice
    return (lat.arr_to, lat.srv_to, lat.prd_to,
            p.lam * (lat.arr_to >= 0).astype(float), p.mu * (lat.srv_to >= 0).astype(float),
            lat.base_cost, lat.pen, np.ascontiguousarray(grid.rates))


def improvement_tol(p: ModelParams, u: np.ndarray) -> float:
    """Rounding floor below which a drift-term decrease is not an improvement."""
    lat = p.lattice
    scale = float(lat.base_cost.max() + p.rate_hi * lat.pen.max()
                  + 2 * p.unif_rate * np.abs(u).max(initial=0.0))
    return 64 * EPS * max(scale, 1.0)


def _backup(u, p, grid):
    return _kernels.backup_scan(np.ascontiguousarray(u, dtype=float), *scan_args(p, grid),
                                float(p.unif_rate), float(p.alpha))


def bellman_backup(u, p: ModelParams, grid: ActionGrid | None = None):
    """One application of the uniformized discounted operator.

    Returns ``(new_values, argmin_policy)``; ties go to the smallest rate.
    """
    grid = grid or build_action_grid(p)
    vals, idx = _backup(u, p, grid)
    return vals, grid.rates[idx]


def value_iteration(p: ModelParams, tol: float = 1e-3, grid: ActionGrid | None = None,
                    max_iter: int | None = None) -> DiscountedSolveReport:
    """Iterate the backup from zero until successive iterates differ by <= tol."""
    validate_params(p, discounted=True)
    if not tol > 0:
        raise ValueError(f"tol must be positive, got {tol}")
    grid = grid or build_action_grid(p)
    kappa = contraction_modulus(p)
    v = np.zeros(p.n_states)
    diffs = []
    min_inc = math.inf
    bound = None
    k = 0
    while True:
        v_new, idx = _backup(v, p, grid)
        k += 1
        step = v_new - v
        diff = float(np.abs(step).max())
        min_inc = min(min_inc, float(step.min()))
        diffs.append(diff)
        v = v_new
        if k == 1:
            scale = max(1.0, diff)
            bound = math.ceil(math.log(tol * (1 - kappa) / scale) / math.log(kappa)) + 1
            if max_iter is None:
                max_iter = 10 * bound + 100
        if diff <= tol:
            break
        if k >= max_iter:
            raise NonConvergence(f"value iteration: sup diff {diff:.3e} after {k} sweeps")
    policy = grid.rates[idx]
    return DiscountedSolveReport(
        method="value-iteration", iterations=k, final_sup_diff=diff,
        contraction_modulus=kappa, hjb_residual=hjb_residual_discounted(v, p, grid),
        policy=policy, values=v, history=diffs, iteration_bound=max(bound, 1),
        min_increment=min_inc)


def evaluate_discounted(q, r, alpha: float) -> np.ndarray:
    """Solve ``(alpha I - Q) V = r`` for a rate matrix ``q`` and cost vector ``r``."""
    r = np.asarray(r, dtype=float)
    n = len(r)
    if sp.issparse(q):
        a = (alpha * sp.identity(n, format="csc") - q).tocsc()
        v = spla.spsolve(a, r)
    else:
        a = alpha * np.eye(n) - np.asarray(q, dtype=float)
        try:
            v = la.solve(a, r)
        except la.LinAlgError as exc:
            raise SolveFailed(f"discounted evaluation: {exc}") from exc
    resid = float(np.abs(a @ v - r).max())
    if not np.all(np.isfinite(v)) or resid > 1e-10 * max(1.0, float(np.abs(r).max())):
        raise SolveFailed(f"discounted evaluation residual {resid:.3e}")
    return v


def policy_evaluation_discounted(pol, p: ModelParams) -> np.ndarray:
    """Exact discounted cost of a stationary policy."""
    validate_params(p, discounted=True)
    pol = np.asarray(pol, dtype=float)
    q = generator_matrix(p, pol, sparse=p.n_states > 2000)
    return evaluate_discounted(q, policy_costs(p, pol), p.alpha)


def drift_scan(u, p, grid, incumbent):
    return _kernels.drift_scan(np.ascontiguousarray(u, dtype=float), *scan_args(p, grid),
                               np.ascontiguousarray(incumbent, dtype=np.int64))


def policy_improvement_discounted(pol, V, p: ModelParams, grid: ActionGrid | None = None):
    """Switch to the grid minimizer of ``r + Q V`` wherever it beats ``alpha V``."""
    grid = grid or build_action_grid(p)
    inc = grid.index_of(np.asarray(pol, dtype=float))
    dmin, arg, _ = drift_scan(V, p, grid, inc)
    improves = dmin < p.alpha * np.asarray(V) - improvement_tol(p, V)
    return grid.rates[np.where(improves, arg, inc)]


def policy_iteration_discounted(p: ModelParams, pol0=None, grid: ActionGrid | None = None,
                                max_iter: int = PI_MAX_ITER) -> DiscountedSolveReport:
    validate_params(p, discounted=True)
    grid = grid or build_action_grid(p)
    pol = validate_policy(np.full(p.n_states, p.gamma_lo) if pol0 is None else pol0, p, grid)
    history = []
    prev_v = None
    for k in range(1, max_iter + 1):
        v = policy_evaluation_discounted(pol, p)
        history.append(v)
        new = policy_improvement_discounted(pol, v, p, grid)
        if np.array_equal(new, pol):
            diff = 0.0 if prev_v is None else float(np.abs(v - prev_v).max())
            return DiscountedSolveReport(
                method="policy-iteration", iterations=k, final_sup_diff=diff,
                contraction_modulus=contraction_modulus(p),
                hjb_residual=hjb_residual_discounted(v, p, grid), policy=pol, values=v,
                history=history)
        pol, prev_v = new, v
    raise NonConvergence(f"discounted policy iteration did not settle in {max_iter} rounds")


def hjb_residual_discounted(V, p: ModelParams, grid: ActionGrid | None = None) -> float:
    """``max_s |alpha V(s) - min_b [r(s, b) + sum_t q_b(s, t) V(t)]|``."""
    grid = grid or build_action_grid(p)
    dmin, _, _ = drift_scan(V, p, grid, np.zeros(p.n_states, dtype=np.int64))
    return float(np.abs(p.alpha * np.asarray(V) - dmin).max())
