"""Expected average-cost control by policy iteration on the Poisson equation."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as la
import scipy.sparse as sp

from .discounted import drift_scan, improvement_tol
from .errors import NonConvergence, Reducible, SolveFailed
from .model import (ActionGrid, ModelParams, build_action_grid, generator_matrix, is_unichain,
                    policy_costs, validate_params, validate_policy)
from .steady_state import stationary_distribution

PI_MAX_ITER = 10_000
EPS = np.finfo(float).eps
POISSON_TOL = 1e-9
NORMALIZATION_TOL = 1e-10


@dataclass(frozen=True)
class GainBias:
    gain: float
    bias: np.ndarray
    theta: np.ndarray
    poisson_residual: float = 0.0
    normalization_residual: float = 0.0


@dataclass
class AverageSolveReport:
    iterations: int
    gains: list
    policy: np.ndarray
    gain_bias: GainBias
    acoe_residual: float
    changed: list = field(default_factory=list)
    residuals: list = field(default_factory=list)   # (Poisson, normalization) per evaluation


def solve_poisson(q, r, theta=None) -> GainBias:
    """Solve ``Q h = g 1 - r`` together with ``theta . h = 0`` for ``(g, h)``.

    ``q`` must be unichain. The gain is an unknown of one augmented linear
    system; ``theta`` (computed if not supplied) supplies the normalization row.
    """
    q = q.toarray() if sp.issparse(q) else np.asarray(q, dtype=float)
    r = np.asarray(r, dtype=float)
    n = len(r)
    if theta is None:
        theta, _ = stationary_distribution(q)
    m = np.zeros((n + 1, n + 1))
    m[:n, :n] = q
    m[:n, n] = -1.0
    m[n, :n] = theta
    rhs = np.append(-r, 0.0)
    try:
        x = la.solve(m, rhs)
    except la.LinAlgError as exc:
        raise SolveFailed(f"Poisson system singular: {exc}") from exc
    h, g = x[:n], float(x[n])
    h = h - theta @ h
    res = float(np.abs(q @ h - (g - r)).max())
    norm_res = abs(float(theta @ h))
    # large biases (slow production) push the residual onto the rounding floor
    hmax = float(np.abs(h).max(initial=0.0))
    floor = 64 * EPS * (float(np.abs(r).max(initial=0.0)) + np.abs(q).sum(axis=1).max() * hmax)
    if (not np.isfinite(g) or res > max(POISSON_TOL, floor)
            or norm_res > max(NORMALIZATION_TOL, 64 * EPS * hmax)):
        raise SolveFailed(f"Poisson residuals {res:.3e} / {norm_res:.3e} out of tolerance")
    return GainBias(gain=g, bias=h, theta=theta, poisson_residual=res,
                    normalization_residual=norm_res)


def gain(pol, p: ModelParams) -> float:
    """Long-run average cost: stationary law of ``pol`` dotted with its costs."""
    q = generator_matrix(p, pol, sparse=p.n_states > 2000)
    theta, _ = stationary_distribution(q)
    return float(theta @ policy_costs(p, pol))


def poisson_solve(pol, p: ModelParams) -> GainBias:
    pol = np.asarray(pol, dtype=float)
    q = generator_matrix(p, pol)
    if not is_unichain(q):
        raise Reducible("policy does not induce a single recurrent class")
    return solve_poisson(q, policy_costs(p, pol))


def policy_improvement_average(pol, gb: GainBias, p: ModelParams,
                               grid: ActionGrid | None = None) -> np.ndarray:
    """Keep the incumbent where it already attains the grid minimum of
    ``r + Q h``; elsewhere move to the smallest minimizing rate."""
    grid = grid or build_action_grid(p)
    inc = grid.index_of(np.asarray(pol, dtype=float))
    dmin, arg, dinc = drift_scan(gb.bias, p, grid, inc)
    keep = dinc <= dmin + improvement_tol(p, gb.bias)
    return grid.rates[np.where(keep, inc, arg)]


def improvement_terms(new_pol, gb: GainBias, p: ModelParams,
                      grid: ActionGrid | None = None) -> np.ndarray:
    """Per-state improvement ``g - [r(s, b') + sum_t q_b'(s, t) h(t)]`` of
    ``new_pol`` measured against the previous policy's gain and bias."""
    grid = grid or build_action_grid(p)
    inc = grid.index_of(np.asarray(new_pol, dtype=float))
    _, _, dnew = drift_scan(gb.bias, p, grid, inc)
    return gb.gain - dnew


def policy_iteration_average(p: ModelParams, pol0=None, grid: ActionGrid | None = None,
                             max_iter: int = PI_MAX_ITER) -> AverageSolveReport:
    validate_params(p)
    grid = grid or build_action_grid(p)
    pol = validate_policy(np.full(p.n_states, p.gamma_lo) if pol0 is None else pol0, p, grid)
    gains, changed, residuals = [], [], []
    for k in range(1, max_iter + 1):
        gb = poisson_solve(pol, p)
        gains.append(gb.gain)
        residuals.append((gb.poisson_residual, gb.normalization_residual))
        new = policy_improvement_average(pol, gb, p, grid)
        n_changed = int(np.count_nonzero(new != pol))
        changed.append(n_changed)
        if n_changed == 0:
            return AverageSolveReport(iterations=k, gains=gains, policy=pol, gain_bias=gb,
                                      acoe_residual=acoe_residual(gb, p, grid), changed=changed,
                                      residuals=residuals)
        pol = new
    raise NonConvergence(f"average-cost policy iteration did not settle in {max_iter} rounds")


def acoe_residual(gb: GainBias, p: ModelParams, grid: ActionGrid | None = None) -> float:
    """``max_s |g - min_b [r(s, b) + sum_t q_b(s, t) h(t)]|``."""
    grid = grid or build_action_grid(p)
    dmin, _, _ = drift_scan(gb.bias, p, grid, np.zeros(p.n_states, dtype=np.int64))
    return float(np.abs(gb.gain - dmin).max())
