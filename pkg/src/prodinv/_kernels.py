"""Hot loops: action-grid scans and event-by-event simulation.

Every kernel has a numba ``@njit`` build and a fallback. The fallback for the
grid scans is vectorized numpy using the same floating-point expression
order, so both backends return identical values. The simulation kernels are
inherently sequential; their fallback runs the same loop body under the
interpreter on plain lists.

Set ``PRODINV_DISABLE_JIT=1`` to force the fallback (also used when numba
cannot be imported). :data:`BACKEND` reports the active choice.
"""

from __future__ import annotations

import math
import os

import numpy as np

try:
    import numba
except ImportError:  # pragma: no cover - numba is a hard dependency in practice
    numba = None

_DISABLED = os.environ.get("PRODINV_DISABLE_JIT", "").strip().lower() in ("1", "true", "yes", "on")
BACKEND = "numpy" if (_DISABLED or numba is None) else "numba"


# ---------------------------------------------------------------- grid scans

def _neighbour_values(u, arr_to, srv_to, prd_to):
    ua = np.where(arr_to >= 0, u[arr_to], 0.0)
    us = np.where(srv_to >= 0, u[srv_to], 0.0)
    up = np.where(prd_to >= 0, u[prd_to], 0.0)
    return ua, us, up


def _backup_scan_numpy(u, arr_to, srv_to, prd_to, lam_s, mu_s, base, pen,
                       grid, unif, alpha):
    ua, us, up = _neighbour_values(u, arr_to, srv_to, prd_to)
    b = grid[None, :]
    pr = np.where(prd_to >= 0, 1.0, 0.0)[:, None] * b
    out0 = (lam_s + mu_s)[:, None]
    flow = lam_s[:, None] * ua[:, None] + mu_s[:, None] * us[:, None] + pr * up[:, None]
    stay = np.maximum((unif - out0 - pr) / unif, 0.0)
    cr = 1.0 / (unif + alpha)
    kappa = unif / (unif + alpha)
    val = (base[:, None] + b * pen[:, None]) * cr + kappa * (flow / unif + stay * u[:, None])
    arg = np.argmin(val, axis=1)
    return val[np.arange(len(u)), arg], arg


def _backup_scan_loop(u, arr_to, srv_to, prd_to, lam_s, mu_s, base, pen,
                      grid, unif, alpha):
    ns = u.shape[0]
    na = grid.shape[0]
    vals = np.empty(ns)
    args = np.empty(ns, dtype=np.int64)
    cr = 1.0 / (unif + alpha)
    kappa = unif / (unif + alpha)
    for s in range(ns):
        ua = u[arr_to[s]] if arr_to[s] >= 0 else 0.0
        us = u[srv_to[s]] if srv_to[s] >= 0 else 0.0
        up = u[prd_to[s]] if prd_to[s] >= 0 else 0.0
        on = 1.0 if prd_to[s] >= 0 else 0.0
        out0 = lam_s[s] + mu_s[s]
        best = np.inf
        arg = 0
        for a in range(na):
            b = grid[a]
            pr = on * b
            flow = lam_s[s] * ua + mu_s[s] * us + pr * up
            stay = max((unif - out0 - pr) / unif, 0.0)
            v = (base[s] + b * pen[s]) * cr + kappa * (flow / unif + stay * u[s])
            if v < best:
                best = v
                arg = a
        vals[s] = best
        args[s] = arg
    return vals, args


def _drift_scan_numpy(u, arr_to, srv_to, prd_to, lam_s, mu_s, base, pen,
                      grid, incumbent):
    ua, us, up = _neighbour_values(u, arr_to, srv_to, prd_to)
    b = grid[None, :]
    pr = np.where(prd_to >= 0, 1.0, 0.0)[:, None] * b
    uc = u[:, None]
    d = ((base[:, None] + b * pen[:, None]) + lam_s[:, None] * (ua[:, None] - uc)
         + mu_s[:, None] * (us[:, None] - uc) + pr * (up[:, None] - uc))
    arg = np.argmin(d, axis=1)
    rows = np.arange(len(u))
    return d[rows, arg], arg, d[rows, incumbent]


def _drift_scan_loop(u, arr_to, srv_to, prd_to, lam_s, mu_s, base, pen,
                     grid, incumbent):
    ns = u.shape[0]
    na = grid.shape[0]
    dmin = np.empty(ns)
    args = np.empty(ns, dtype=np.int64)
    dinc = np.empty(ns)
    for s in range(ns):
        uc = u[s]
        ua = u[arr_to[s]] if arr_to[s] >= 0 else 0.0
        us = u[srv_to[s]] if srv_to[s] >= 0 else 0.0
        up = u[prd_to[s]] if prd_to[s] >= 0 else 0.0
        on = 1.0 if prd_to[s] >= 0 else 0.0
        best = np.inf
        arg = 0
        for a in range(na):
            b = grid[a]
            pr = on * b
            d = ((base[s] + b * pen[s]) + lam_s[s] * (ua - uc)
                 + mu_s[s] * (us - uc) + pr * (up - uc))
            if d < best:
                best = d
                arg = a
            if a == incumbent[s]:
                dinc[s] = d
        dmin[s] = best
        args[s] = arg
    return dmin, args, dinc


# ---------------------------------------------------------------- simulation

def _simulate_block_body(state, t, cost, nev, horizon, max_events, uni,
                         exit_rate, cum, tgt, cost_rate, occ, batch_cost,
                         batch_len, rec_t, rec_s, rec_on):
    """Advance one trajectory using the uniform pairs in ``uni``.

    Returns ``(state, t, cost, nev, used_rows, n_recorded, done)``. Each
    holding interval consumes one row: column 0 drives the exponential
    holding time, column 1 the choice of target.
    """
    k = 0
    nrec = 0
    done = False
    nb = len(batch_cost)
    nrows = len(uni)
    while k < nrows:
        if nev >= max_events:
            done = True
            break
        row = uni[k]
        q = exit_rate[state]
        t_end = t - math.log1p(-row[0]) / q
        if t_end >= horizon:
            t_end = horizon
            done = True
        c = cost_rate[state]
        cost += c * (t_end - t)
        occ[state] += t_end - t
        if nb > 0:
            tc = t
            while tc < t_end:
                b = int(tc / batch_len)
                # tc can sit on a batch edge that the division rounds below
                if (b + 1) * batch_len <= tc:
                    b += 1
                if b >= nb - 1:
                    b = nb - 1
                    seg = t_end
                else:
                    seg = min((b + 1) * batch_len, t_end)
                batch_cost[b] += c * (seg - tc)
                tc = seg
        if rec_on:
            rec_t[nrec] = t
            rec_s[nrec] = state
            nrec += 1
        k += 1
        if done:
            t = t_end
            break
        cs = cum[state]
        j = 0
        while row[1] >= cs[j]:
            j += 1
        state = tgt[state][j]
        t = t_end
        nev += 1
    return state, t, cost, nev, k, nrec, done


def _discounted_block_body(path, state, t, acc, n_paths, init, alpha, t_cut,
                           uni, exit_rate, cum, tgt, cost_rate, out):
    """Accumulate ``int exp(-alpha t) r dt`` over successive independent paths.

    Returns ``(path, state, t, acc, used_rows)``; paths restart from ``init``
    and are cut at ``t_cut``.
    """
    k = 0
    nrows = len(uni)
    while k < nrows and path < n_paths:
        row = uni[k]
        t_end = t - math.log1p(-row[0]) / exit_rate[state]
        stop = False
        if t_end >= t_cut:
            t_end = t_cut
            stop = True
        acc += cost_rate[state] * (math.exp(-alpha * t) - math.exp(-alpha * t_end)) / alpha
        k += 1
        if stop:
            out[path] = acc
            path += 1
            state = init
            t = 0.0
            acc = 0.0
            continue
        cs = cum[state]
        j = 0
        while row[1] >= cs[j]:
            j += 1
        state = tgt[state][j]
        t = t_end
    return path, state, t, acc, k


def _simulate_block_lists(state, t, cost, nev, horizon, max_events, uni,
                          exit_rate, cum, tgt, cost_rate, occ, batch_cost,
                          batch_len, rec_t, rec_s, rec_on):
    occ_l, batch_l = occ.tolist(), batch_cost.tolist()
    rec_tl, rec_sl = rec_t.tolist(), rec_s.tolist()
    res = _simulate_block_body(state, t, cost, nev, horizon, max_events, uni.tolist(),
                               exit_rate.tolist(), cum.tolist(), tgt.tolist(),
                               cost_rate.tolist(), occ_l, batch_l, batch_len,
                               rec_tl, rec_sl, rec_on)
    occ[:] = occ_l
    batch_cost[:] = batch_l
    n = res[5]
    rec_t[:n] = rec_tl[:n]
    rec_s[:n] = rec_sl[:n]
    return res


def _discounted_block_lists(path, state, t, acc, n_paths, init, alpha, t_cut,
                            uni, exit_rate, cum, tgt, cost_rate, out):
    out_l = out.tolist()
    res = _discounted_block_body(path, state, t, acc, n_paths, init, alpha, t_cut,
                                 uni.tolist(), exit_rate.tolist(), cum.tolist(),
                                 tgt.tolist(), cost_rate.tolist(), out_l)
    out[:] = out_l
    return res


_NUMPY = {
    "backup_scan": _backup_scan_numpy,
    "drift_scan": _drift_scan_numpy,
    "simulate_block": _simulate_block_lists,
    "discounted_block": _discounted_block_lists,
}

if numba is not None:
    _NUMBA = {
        "backup_scan": numba.njit(cache=True)(_backup_scan_loop),
        "drift_scan": numba.njit(cache=True)(_drift_scan_loop),
        "simulate_block": numba.njit(cache=True)(_simulate_block_body),
        "discounted_block": numba.njit(cache=True)(_discounted_block_body),
    }
else:  # pragma: no cover
    _NUMBA = {}


def get(name: str, backend: str | None = None):
    """Look up a kernel by name for ``backend`` (default: :data:`BACKEND`)."""
    backend = backend or BACKEND
    table = _NUMBA if backend == "numba" else _NUMPY
    if name not in table:
        raise KeyError(f"no {backend} kernel named {name!r}")
    return table[name]


def backup_scan(*args):
    return get("backup_scan")(*args)


def drift_scan(*args):
    return get("drift_scan")(*args)


def simulate_block(*args):
    return get("simulate_block")(*args)


def discounted_block(*args):
    return get("discounted_block")(*args)
