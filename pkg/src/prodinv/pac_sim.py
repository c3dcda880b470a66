"""Seeded trajectory simulation and pathwise average-cost certification.

Random numbers come from numpy's Philox4x64-10 counter-based generator keyed
by the seed (:data:`RNG_ALGORITHM`). Each holding interval consumes one pair
of doubles ``(u0, u1)`` from ``Generator.random``: the holding time is
``-log(1 - u0) / exit_rate`` and the target is the first outgoing move whose
cumulative jump probability exceeds ``u1`` (moves ordered arrival, service,
production). The stream does not depend on the block size used internally.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import _kernels
from .errors import SimulationError
from .model import ModelParams, generator_matrix, policy_costs
from .steady_state import stationary_distribution

RNG_ALGORITHM = "philox4x64-10/numpy.random.Philox(key=seed)/pairs(hold,jump)/v1"
BLOCK = 1 << 16
NO_LIMIT = 1 << 62


def make_rng(seed: int) -> np.random.Generator:
    if not 0 <= int(seed) < 2**64:
        raise SimulationError(f"seed must be an unsigned 64-bit integer, got {seed}")
    return np.random.Generator(np.random.Philox(key=int(seed)))


@dataclass(frozen=True)
class ChainTables:
    """Embedded jump chain of a fixed policy in kernel-friendly arrays."""

    exit_rate: np.ndarray
    cum: np.ndarray       # (S, 3) cumulative jump probabilities, padded with 1.0
    tgt: np.ndarray       # (S, 3) target indices, padded with -1
    cost_rate: np.ndarray
    actions: np.ndarray

    @classmethod
    def build(cls, pol, p: ModelParams) -> ChainTables:
        pol = np.asarray(pol, dtype=float)
        lat = p.lattice
        moves = [(lat.arr_to, np.full(p.n_states, p.lam)),
                 (lat.srv_to, np.full(p.n_states, p.mu)),
                 (lat.prd_to, pol)]
        rates = np.column_stack([np.where(to >= 0, r, 0.0) for to, r in moves])
        exit_rate = rates.sum(axis=1)
        if np.any(exit_rate <= 0):
            raise SimulationError("absorbing state under this policy")
        cum = np.ones((p.n_states, 3))
        tgt = np.full((p.n_states, 3), -1, dtype=np.int64)
        for s in range(p.n_states):
            j = 0
            acc = 0.0
            live = [(to[s], rates[s, c]) for c, (to, _) in enumerate(moves) if to[s] >= 0]
            for k, (to, r) in enumerate(live):
                acc += r
                cum[s, j] = 1.0 if k == len(live) - 1 else acc / exit_rate[s]
                tgt[s, j] = to
                j += 1
        return cls(exit_rate, cum, tgt, policy_costs(p, pol), pol)


@dataclass
class TrajectorySample:
    jump_times: np.ndarray     # start of each holding interval; first entry 0
    state_index: np.ndarray    # flat lattice index held over each interval
    actions: np.ndarray
    accumulated_cost: float
    horizon: float
    n_events: int
    occupancy: np.ndarray      # time spent in each state
    batch_costs: np.ndarray
    width: int
    seed: int | None = None
    rng_algorithm: str = RNG_ALGORITHM

    @property
    def states(self) -> np.ndarray:
        """Visited ``(n, i)`` pairs, shape ``(K, 2)``."""
        return np.column_stack(np.divmod(self.state_index, self.width))

    @property
    def durations(self) -> np.ndarray:
        return np.diff(np.append(self.jump_times, self.horizon))


def _check_init(init, p):
    try:
        return p.index(init)
    except Exception as exc:
        raise SimulationError(str(exc)) from exc


def simulate_trajectory(pol, init, horizon: float, seed: int, p: ModelParams,
                        max_events: int | None = None, record: bool = True,
                        n_batches: int = 20) -> TrajectorySample:
    """Simulate the controlled chain from ``init`` until time ``horizon`` or
    ``max_events`` jumps, whichever comes first.

    With ``record=False`` only the running cost, per-state occupancy and
    batch costs are kept, which is what long certification runs need.
    """
    if not horizon > 0:
        raise SimulationError(f"horizon must be positive, got {horizon}")
    if max_events is None and not math.isfinite(horizon):
        raise SimulationError("an infinite horizon needs max_events")
    tables = ChainTables.build(pol, p)
    state = _check_init(init, p)
    rng = make_rng(seed)
    limit = NO_LIMIT if max_events is None else int(max_events)
    nb = n_batches if math.isfinite(horizon) else 0
    batch_cost = np.zeros(nb)
    batch_len = horizon / nb if nb else 1.0
    occ = np.zeros(p.n_states)
    rec_t = np.empty(BLOCK if record else 0)
    rec_s = np.empty(BLOCK if record else 0, dtype=np.int64)
    times, visited = [], []
    t, cost, nev = 0.0, 0.0, 0
    kernel = _kernels.get("simulate_block")
    while True:
        uni = rng.random((BLOCK, 2))
        state, t, cost, nev, _, nrec, done = kernel(
            state, t, cost, nev, float(horizon), limit, uni, tables.exit_rate, tables.cum,
            tables.tgt, tables.cost_rate, occ, batch_cost, batch_len, rec_t, rec_s, record)
        if record:
            times.append(rec_t[:nrec].copy())
            visited.append(rec_s[:nrec].copy())
        if done:
            break
    jt = np.concatenate(times) if record else np.empty(0)
    si = np.concatenate(visited) if record else np.empty(0, dtype=np.int64)
    return TrajectorySample(jump_times=jt, state_index=si, actions=tables.actions[si],
                            accumulated_cost=float(cost), horizon=float(t), n_events=int(nev),
                            occupancy=occ, batch_costs=batch_cost, width=p.i_max + 1,
                            seed=seed)


def pathwise_average_cost(t: TrajectorySample) -> float:
    if not t.horizon > 0:
        raise SimulationError("zero-length trajectory")
    return t.accumulated_cost / t.horizon


def batch_means_halfwidth(t: TrajectorySample, z: float = 1.96) -> float:
    """Normal-theory CI half-width for the time average from equal time batches."""
    nb = len(t.batch_costs)
    if nb < 2:
        return math.nan
    means = t.batch_costs / (t.horizon / nb)
    return z * float(means.std(ddof=1)) / math.sqrt(nb)


def expected_event_rate(pol, p: ModelParams) -> float:
    """Stationary jumps per unit time under ``pol``."""
    tables = ChainTables.build(pol, p)
    theta, _ = stationary_distribution(generator_matrix(p, pol))
    return float(theta @ tables.exit_rate)


@dataclass
class PacReport:
    seeds: list
    per_seed_averages: list
    mean: float
    target_gain: float
    epsilon: float
    quorum: float
    passed: bool
    horizon: float
    half_widths: list = field(default_factory=list)
    rng_algorithm: str = RNG_ALGORITHM

    @property
    def fraction_within(self) -> float:
        hits = [abs(j - self.target_gain) <= self.epsilon for j in self.per_seed_averages]
        return sum(hits) / len(hits)


def pac_certify(pol, target_gain: float, epsilon: float, seeds: int, horizon: float,
                p: ModelParams, quorum: float = 0.95, init=(0, 0),
                base_seed: int = 0) -> PacReport:
    """Check that ``|J_c - target_gain| <= epsilon`` on at least ``quorum`` of
    ``seeds`` independent runs from ``init``."""
    if not epsilon > 0:
        raise SimulationError(f"epsilon must be positive, got {epsilon}")
    if seeds < 1:
        raise SimulationError("need at least one seed")
    seed_list = [base_seed + k for k in range(seeds)]
    avgs, hws = [], []
    for s in seed_list:
        tr = simulate_trajectory(pol, init, horizon, s, p, record=False)
        avgs.append(pathwise_average_cost(tr))
        hws.append(batch_means_halfwidth(tr))
    hits = sum(abs(j - target_gain) <= epsilon for j in avgs)
    return PacReport(seeds=seed_list, per_seed_averages=avgs, mean=float(np.mean(avgs)),
                     target_gain=target_gain, epsilon=epsilon, quorum=quorum,
                     passed=hits >= quorum * seeds, horizon=horizon, half_widths=hws)


def discounted_cost_mc(pol, init, p: ModelParams, n_paths: int, seed: int,
                       rel_cut: float = 1e-12) -> tuple[float, float]:
    """Monte Carlo estimate of the discounted cost from ``init``.

    Paths are cut at ``-log(rel_cut) / alpha``. Returns ``(mean, standard error)``.
    """
    if not (p.alpha and p.alpha > 0):
        raise SimulationError("discounted simulation needs alpha > 0")
    tables = ChainTables.build(pol, p)
    init_idx = _check_init(init, p)
    rng = make_rng(seed)
    t_cut = -math.log(rel_cut) / p.alpha
    out = np.zeros(n_paths)
    path, state, t, acc = 0, init_idx, 0.0, 0.0
    kernel = _kernels.get("discounted_block")
    while path < n_paths:
        uni = rng.random((BLOCK, 2))
        path, state, t, acc, _ = kernel(path, state, t, acc, n_paths, init_idx, float(p.alpha),
                                        t_cut, uni, tables.exit_rate, tables.cum, tables.tgt,
                                        tables.cost_rate, out)
    return float(out.mean()), float(out.std(ddof=1) / math.sqrt(n_paths))
