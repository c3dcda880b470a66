"""Time the numba kernels against the numpy fallback.

    python benchmarks/bench_kernels.py [--repeat N]

Runs each kernel on default-sized inputs with both backends, checks that the
outputs agree and prints the median wall time per call.
"""

import argparse
import statistics
import time

import numpy as np

from prodinv import _kernels
from prodinv.discounted import scan_args
from prodinv.model import ModelParams, build_action_grid, constant_policy
from prodinv.pac_sim import BLOCK, ChainTables, make_rng


def timed(fn, repeat):
    fn()  # warm-up, includes jit compilation
    out = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        out.append(time.perf_counter() - t0)
    return statistics.median(out)


def cases(p):
    grid = build_action_grid(p)
    args = scan_args(p, grid)
    u = np.random.default_rng(0).uniform(0, 1e3, p.n_states)
    inc = np.zeros(p.n_states, dtype=np.int64)
    tables = ChainTables.build(constant_policy(p, 1.5), p)
    uni = make_rng(0).random((BLOCK, 2))

    def sim(kernel):
        occ, batches = np.zeros(p.n_states), np.zeros(20)
        rec_t, rec_s = np.empty(BLOCK), np.empty(BLOCK, dtype=np.int64)
        return kernel(0, 0.0, 0.0, 0, 1e12, 1 << 62, uni, tables.exit_rate, tables.cum,
                      tables.tgt, tables.cost_rate, occ, batches, 1e12 / 20, rec_t, rec_s, True)

    return {
        "backup_scan": lambda k: k(u, *args, p.unif_rate, p.alpha),
        "drift_scan": lambda k: k(u, *args, inc),
        "simulate_block": sim,
    }


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args()
    if _kernels.BACKEND != "numba":
        raise SystemExit("numba backend unavailable (unset PRODINV_DISABLE_JIT)")
    p = ModelParams()
    print(f"{'kernel':<16}{'numpy [ms]':>12}{'numba [ms]':>12}{'speedup':>10}")
    for name, call in cases(p).items():
        fast, slow = _kernels.get(name, "numba"), _kernels.get(name, "numpy")
        a, b = call(fast), call(slow)
        assert all(np.array_equal(np.asarray(x), np.asarray(y)) for x, y in zip(a, b)), name
        t_fast = timed(lambda: call(fast), args.repeat)
        t_slow = timed(lambda: call(slow), args.repeat)
        print(f"{name:<16}{1e3 * t_slow:>12.2f}{1e3 * t_fast:>12.2f}{t_slow / t_fast:>9.1f}x")


if __name__ == "__main__":
    main()
