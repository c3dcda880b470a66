"""Controlled CTMC of the M/M/1 production-inventory system.

States are lattice points ``(n, i)``: ``n`` customers waiting, ``i`` items in
stock, truncated to ``0..n_max`` x ``0..i_max``. Every matrix and vector in the
package uses the same n-major flattening, ``index = n * (i_max + 1) + i``.

The action is the production rate ``beta`` drawn from ``[gamma_lo, rate_hi]``
(discretized on an :class:`ActionGrid`). From ``(n, i)`` the chain moves

* to ``(n + 1, i)`` at rate ``lam`` when ``i >= 1`` (no joining on empty stock),
* to ``(n - 1, i - 1)`` at rate ``mu`` when ``n, i >= 1``,
* to ``(n, i + 1)`` at rate ``beta``.

Transitions that would leave the truncated grid are dropped and the diagonal
shrinks with them.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, fields, replace
from functools import cached_property
from typing import NamedTuple

import numpy as np
import scipy.sparse as sp
from scipy.sparse.csgraph import connected_components

from .errors import BadActionBounds, BadTruncation, NegativeCost, OutOfRange, Unstable

GRID_TOL = 1e-12


class State(NamedTuple):
    n: int
    i: int


@dataclass(frozen=True)
class ModelParams:
    """Rates, action bounds, cost coefficients and truncation.

    Defaults reproduce the numerical example of the production-inventory
    model: ``lam=3, mu=5, alpha=0.7, h=100, c1=20, c2=30, c3=40, S=2``,
    actions ``0.001:0.001:2`` and a 5 x 5 state grid.
    """

    lam: float = 3.0
    mu: float = 5.0
    gamma_lo: float = 0.001
    rate_hi: float = 2.0
    grid_step: float = 0.001
    h: float = 100.0
    c1: float = 20.0
    c2: float = 30.0
    c3: float = 40.0
    s_thresh: int = 2
    alpha: float | None = 0.7
    n_max: int = 4
    i_max: int = 4

    def replace(self, **changes) -> ModelParams:
        return replace(self, **changes)

    @property
    def n_states(self) -> int:
        return (self.n_max + 1) * (self.i_max + 1)

    @property
    def unif_rate(self) -> float:
        """Uniform bound ``R + lam + mu`` on the exit rate of every state."""
        return self.rate_hi + self.lam + self.mu

    @property
    def rho(self) -> float:
        return self.lam / self.mu

    def index(self, s) -> int:
        n, i = s
        if not (0 <= n <= self.n_max and 0 <= i <= self.i_max):
            raise OutOfRange(f"state ({n},{i}) outside 0..{self.n_max} x 0..{self.i_max}")
        return n * (self.i_max + 1) + i

    def state(self, idx: int) -> State:
        if not 0 <= idx < self.n_states:
            raise OutOfRange(f"state index {idx} outside 0..{self.n_states - 1}")
        return State(*divmod(int(idx), self.i_max + 1))

    def states(self) -> list[State]:
        return [self.state(k) for k in range(self.n_states)]

    @cached_property
    def lattice(self) -> Lattice:
        return Lattice.build(self)


def validate_params(p: ModelParams, discounted: bool = False) -> ModelParams:
    """Return ``p`` unchanged if every invariant holds, else raise.

    ``discounted=True`` additionally demands ``alpha > 0``.
    """
    for f in fields(p):
        v = getattr(p, f.name)
        if v is not None and isinstance(v, float) and not math.isfinite(v):
            raise BadActionBounds(f"{f.name} must be finite, got {v}")
    if not (p.lam > 0 and p.mu > 0):
        raise Unstable(f"arrival and service rates must be positive (lambda={p.lam}, mu={p.mu})")
    if p.lam >= p.mu:
        raise Unstable(f"lambda={p.lam} >= mu={p.mu}: the queue is not positive recurrent")
    _check_grid_bounds(p.gamma_lo, p.rate_hi, p.grid_step)
    for name in ("h", "c1", "c2", "c3"):
        if getattr(p, name) < 0:
            raise NegativeCost(f"cost coefficient {name}={getattr(p, name)} is negative")
    if int(p.s_thresh) != p.s_thresh or p.s_thresh < 0:
        raise NegativeCost(f"threshold S must be a nonnegative integer, got {p.s_thresh}")
    for name in ("n_max", "i_max"):
        v = getattr(p, name)
        if int(v) != v or v < 1:
            raise BadTruncation(f"{name} must be an integer >= 1, got {v}")
    if discounted and (p.alpha is None or not p.alpha > 0):
        raise BadActionBounds(f"discount rate alpha must be > 0, got {p.alpha}")
    return p


def _check_grid_bounds(lo, hi, step):
    if not 0 < lo <= hi:
        raise BadActionBounds(f"need 0 < gamma_lo <= rate_hi, got [{lo}, {hi}]")
    if not step > 0:
        raise BadActionBounds(f"grid_step must be positive, got {step}")
    m = round((hi - lo) / step)
    if abs(m * step - (hi - lo)) > GRID_TOL:
        raise BadActionBounds(f"grid_step={step} does not tile [{lo}, {hi}]")
    return int(m)


class ActionGrid:
    """Strictly increasing, evenly spaced production rates, endpoints included."""

    def __init__(self, lo: float, hi: float, step: float):
        m = _check_grid_bounds(lo, hi, step)
        rates = lo + step * np.arange(m + 1, dtype=float)
        rates[-1] = hi
        self.rates = rates
        self.step = step
        self.rates.setflags(write=False)

    def __len__(self):
        return len(self.rates)

    def __iter__(self):
        return iter(self.rates)

    def __repr__(self):
        return f"ActionGrid({self.rates[0]}..{self.rates[-1]}, n={len(self)})"

    def index_of(self, beta) -> np.ndarray | int:
        """Grid index of each rate in ``beta``; raises if any is off-grid."""
        b = np.asarray(beta, dtype=float)
        k = np.clip(np.rint((b - self.rates[0]) / self.step), 0, len(self.rates) - 1).astype(np.int64)
        # 5e-4 of a step absorbs rates printed at grid resolution
        bad = np.abs(self.rates[k] - b) > max(GRID_TOL, 5e-4 * self.step)
        if np.any(bad):
            raise BadActionBounds(f"rate(s) {np.atleast_1d(b)[np.atleast_1d(bad)][:5]} not on {self!r}")
        return int(k) if k.ndim == 0 else k

    def snap(self, beta) -> np.ndarray:
        return self.rates[self.index_of(beta)]


def build_action_grid(p: ModelParams) -> ActionGrid:
    return ActionGrid(p.gamma_lo, p.rate_hi, p.grid_step)


@dataclass(frozen=True)
class Lattice:
    """Action-independent part of the dynamics as flat per-state arrays.

    ``*_to`` hold target indices, ``-1`` where the move is disabled. The
    production move always has rate ``beta``; arrivals ``lam``; services ``mu``.
    """

    n: np.ndarray
    i: np.ndarray
    arr_to: np.ndarray
    srv_to: np.ndarray
    prd_to: np.ndarray
    base_cost: np.ndarray   # stage cost without the beta-proportional term
    pen: np.ndarray         # coefficient of beta in the stage cost

    @classmethod
    def build(cls, p: ModelParams) -> Lattice:
        width = p.i_max + 1
        n, i = np.divmod(np.arange(p.n_states), width)
        idx = n * width + i
        arr_to = np.where((i >= 1) & (n < p.n_max), idx + width, -1)
        srv_to = np.where((n >= 1) & (i >= 1), idx - width - 1, -1)
        prd_to = np.where(i < p.i_max, idx + 1, -1)
        base = p.h * i + p.c1 * n + p.c3 * n * (i == 0)
        pen = p.c2 * (i > p.s_thresh)
        arrays = dict(n=n, i=i, arr_to=arr_to, srv_to=srv_to, prd_to=prd_to,
                      base_cost=base.astype(float), pen=pen.astype(float))
        for a in arrays.values():
            a.setflags(write=False)
        return cls(**arrays)

    def fixed_out(self, p: ModelParams) -> np.ndarray:
        """Exit rate from arrivals and services alone."""
        return p.lam * (self.arr_to >= 0) + p.mu * (self.srv_to >= 0)


@dataclass(frozen=True)
class RateRow:
    entries: dict
    diagonal: float

    @property
    def exit_rate(self) -> float:
        return -self.diagonal


@dataclass(frozen=True)
class UniformizedRow:
    probs: dict


def _check_action(beta, p):
    if not (p.gamma_lo - GRID_TOL <= beta <= p.rate_hi + GRID_TOL):
        raise BadActionBounds(f"beta={beta} outside [{p.gamma_lo}, {p.rate_hi}]")


def transition_rates(s, beta: float, p: ModelParams) -> RateRow:
    """Outgoing rates from ``s`` under production rate ``beta``."""
    k = p.index(s)
    _check_action(beta, p)
    lat = p.lattice
    entries = {}
    for to, rate in ((lat.arr_to[k], p.lam), (lat.srv_to[k], p.mu), (lat.prd_to[k], beta)):
        if to >= 0:
            entries[p.state(to)] = float(rate)
    return RateRow(entries, -sum(entries.values()))


def stage_cost(s, beta: float, p: ModelParams) -> float:
    """Cost rate ``h*i + c1*n + beta*c2*[i > S] + c3*n*[i == 0]``."""
    n, i = s
    return p.h * i + p.c1 * n + beta * p.c2 * (i > p.s_thresh) + p.c3 * n * (i == 0)


def uniformized_row(s, beta: float, p: ModelParams) -> UniformizedRow:
    row = transition_rates(s, beta, p)
    lam_u = p.unif_rate
    probs = {t: r / lam_u for t, r in row.entries.items()}
    probs[State(*s)] = 1.0 + row.diagonal / lam_u
    return UniformizedRow(probs)


def policy_costs(p: ModelParams, rates: np.ndarray) -> np.ndarray:
    lat = p.lattice
    return lat.base_cost + np.asarray(rates, dtype=float) * lat.pen


def generator_matrix(p: ModelParams, rates: np.ndarray, sparse: bool = False):
    """Rate matrix ``Q`` of the chain under a per-state production rate vector."""
    lat = p.lattice
    rates = np.asarray(rates, dtype=float)
    if rates.shape != (p.n_states,):
        raise OutOfRange(f"policy has shape {rates.shape}, expected ({p.n_states},)")
    rows, cols, vals = [], [], []
    src = np.arange(p.n_states)
    for to, rate in ((lat.arr_to, np.full(p.n_states, p.lam)),
                     (lat.srv_to, np.full(p.n_states, p.mu)),
                     (lat.prd_to, rates)):
        m = to >= 0
        rows.append(src[m])
        cols.append(to[m])
        vals.append(rate[m])
    rows, cols, vals = map(np.concatenate, (rows, cols, vals))
    off = sp.csr_matrix((vals, (rows, cols)), shape=(p.n_states, p.n_states))
    out = np.asarray(off.sum(axis=1)).ravel()
    q = (off - sp.diags(out)).tocsr()
    return q if sparse else q.toarray()


def closed_classes(q) -> list[np.ndarray]:
    """Closed communicating classes of the positive-rate graph of ``q``."""
    adj = sp.csr_matrix(q, copy=True)
    adj.setdiag(0)
    adj.eliminate_zeros()
    adj.data = (adj.data > 0).astype(np.int8)
    adj.eliminate_zeros()
    ncomp, label = connected_components(adj, directed=True, connection="strong")
    coo = adj.tocoo()
    leaves = np.zeros(ncomp, dtype=bool)
    leaves[label[coo.row][label[coo.row] != label[coo.col]]] = True
    return [np.flatnonzero(label == c) for c in range(ncomp) if not leaves[c]]


def is_unichain(q) -> bool:
    """True iff ``q`` has exactly one closed class (reached from everywhere)."""
    return len(closed_classes(q)) == 1


def is_strongly_connected(q) -> bool:
    adj = sp.csr_matrix(q, copy=True)
    adj.setdiag(0)
    adj.eliminate_zeros()
    return connected_components(adj, directed=True, connection="strong")[0] == 1


def check_irreducibility(p: ModelParams, pol) -> bool:
    """Whether ``pol`` induces a single recurrent class on the truncated grid.

    The truncated chain can never enter ``(n_max, 0)`` (that takes a service
    from level ``n_max + 1``), so strict strong connectivity always fails;
    what the invariant-measure and Poisson solves need is a unique closed
    class, which is what this checks.
    """
    return is_unichain(generator_matrix(p, pol, sparse=True))


def constant_policy(p: ModelParams, beta: float) -> np.ndarray:
    _check_action(beta, p)
    return np.full(p.n_states, float(beta))


def policy_table(pol, p: ModelParams) -> np.ndarray:
    """Reshape a flat policy into an ``(n_max + 1, i_max + 1)`` table."""
    return np.asarray(pol, dtype=float).reshape(p.n_max + 1, p.i_max + 1)


def validate_policy(pol, p: ModelParams, grid: ActionGrid | None = None) -> np.ndarray:
    """Snap ``pol`` onto the action grid; raise if any entry is not a grid rate."""
    grid = grid or build_action_grid(p)
    pol = np.asarray(pol, dtype=float).ravel()
    if pol.shape != (p.n_states,):
        raise OutOfRange(f"policy has {pol.size} entries, expected {p.n_states}")
    return grid.snap(pol)
