"""Command-line front end: ``prodinv <command> --config <path> [--out DIR] [--seed N]``.

Config files are flat ``key = value`` text with ``#`` comments. Required
keys: ``lambda, mu, h, c1, c2, c3, s_thresh``. Optional keys and defaults::

    alpha        (none; required by solve-vi and solve-pi)
    gamma_lo     0.001
    rate_hi      2
    grid_step    0.001
    n_max, i_max 4
    tol          0.001
    solver       avg     policy used by simulate/certify: vi | pi | avg | init
    init_policy  gamma_lo  a constant rate, or a policy.csv path
    seeds        20
    horizon      auto    simulated time; auto = 1e6 expected jumps
    out_dir      out

Exit codes: 0 success, 1 config/IO error, 2 solver error, 3 simulation error
(including a failed certification).
"""

from __future__ import annotations

import argparse
import csv
import io
import math
import sys
import time
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import _kernels
from .average import policy_iteration_average
from .discounted import policy_iteration_discounted, value_iteration
from .errors import IoError, ParseError, ProdInvError, SimulationError, SolveError, ValidationError
from .model import ModelParams, validate_params, validate_policy
from .pac_sim import (RNG_ALGORITHM, batch_means_halfwidth, expected_event_rate, pac_certify,
                      pathwise_average_cost, simulate_trajectory)
from .steady_state import inventory_dist_analytic, invariant_measure_numeric, joint_dist_analytic
from .steady_state import stability_check, total_variation

COMMANDS = ("steady-state", "solve-vi", "solve-pi", "solve-avg", "simulate", "certify")
SOLVERS = ("vi", "pi", "avg", "init")
PAC_EPSILON = 0.02        # relative to the optimal gain
PAC_QUORUM = 0.95
AUTO_EVENTS = 1e6

_FLOAT_KEYS = {"lambda": "lam", "mu": "mu", "gamma_lo": "gamma_lo", "rate_hi": "rate_hi",
               "grid_step": "grid_step", "h": "h", "c1": "c1", "c2": "c2", "c3": "c3",
               "alpha": "alpha"}
_INT_KEYS = {"s_thresh": "s_thresh", "n_max": "n_max", "i_max": "i_max"}
_RUN_KEYS = ("tol", "solver", "init_policy", "seeds", "horizon", "out_dir")
REQUIRED = ("lambda", "mu", "h", "c1", "c2", "c3", "s_thresh")
KNOWN = tuple(_FLOAT_KEYS) + tuple(_INT_KEYS) + _RUN_KEYS


@dataclass
class RunConfig:
    params: ModelParams
    tol: float = 1e-3
    solver: str = "avg"
    init_policy: str | None = None
    seeds: int = 20
    horizon: float | None = None      # None means auto
    out_dir: Path = Path("out")
    base_dir: Path = Path(".")


def _number(key, raw, lineno, kind=float):
    try:
        v = kind(raw)
    except ValueError:
        raise ParseError(f"{key}: cannot parse {raw!r} as {kind.__name__}", lineno) from None
    if kind is float and not math.isfinite(v):
        raise ParseError(f"{key}: value must be finite", lineno)
    return v


def parse_config(text: str, base_dir: Path = Path(".")) -> RunConfig:
    raw, where = {}, {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ParseError(f"expected key = value, got {line!r}", lineno)
        key, value = (part.strip() for part in line.split("=", 1))
        if key not in KNOWN:
            raise ParseError(f"unknown key {key!r}", lineno)
        if key in raw:
            raise ParseError(f"duplicate key {key!r} (first on line {where[key]})", lineno)
        if not value:
            raise ParseError(f"{key}: empty value", lineno)
        raw[key], where[key] = value, lineno
    missing = [k for k in REQUIRED if k not in raw]
    if missing:
        raise ParseError(f"missing required key(s): {', '.join(missing)}")

    kw = {}
    for key, field_name in _FLOAT_KEYS.items():
        if key in raw:
            kw[field_name] = _number(key, raw[key], where[key])
    for key, field_name in _INT_KEYS.items():
        if key in raw:
            kw[field_name] = _number(key, raw[key], where[key], int)
    kw.setdefault("alpha", None)
    params = validate_params(ModelParams(**kw))

    cfg = RunConfig(params=params, base_dir=base_dir)
    if "tol" in raw:
        cfg.tol = _number("tol", raw["tol"], where["tol"])
        if not cfg.tol > 0:
            raise ParseError("tol must be positive", where["tol"])
    if "solver" in raw:
        if raw["solver"] not in SOLVERS:
            raise ParseError(f"solver must be one of {SOLVERS}", where["solver"])
        cfg.solver = raw["solver"]
    cfg.init_policy = raw.get("init_policy")
    if "seeds" in raw:
        cfg.seeds = _number("seeds", raw["seeds"], where["seeds"], int)
        if cfg.seeds < 1:
            raise ParseError("seeds must be >= 1", where["seeds"])
    if raw.get("horizon", "auto") != "auto":
        cfg.horizon = _number("horizon", raw["horizon"], where["horizon"])
        if not cfg.horizon > 0:
            raise ParseError("horizon must be positive", where["horizon"])
    if "out_dir" in raw:
        cfg.out_dir = Path(raw["out_dir"])
    return cfg


def load_config(path) -> RunConfig:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise IoError(f"cannot read config {path}: {exc.strerror}") from exc
    cfg = parse_config(text, base_dir=path.parent)
    if not cfg.out_dir.is_absolute():
        cfg.out_dir = Path.cwd() / cfg.out_dir
    return cfg


# ---------------------------------------------------------------- CSV I/O

def _write_rows(path: Path, header, rows):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    w.writerows(rows)
    try:
        path.write_text(buf.getvalue())
    except OSError as exc:
        raise IoError(f"cannot write {path}: {exc.strerror}") from exc


def _g12(x) -> str:
    return f"{x:.12g}"


def emit_policy_table(pol, p: ModelParams, path) -> Path:
    """``n,i,beta`` rows, n-major, rates at 3 decimals."""
    path = Path(path)
    rows = [(s.n, s.i, f"{b:.3f}") for s, b in zip(p.states(), np.asarray(pol, dtype=float))]
    _write_rows(path, ("n", "i", "beta"), rows)
    return path


def load_policy_table(path, p: ModelParams) -> np.ndarray:
    path = Path(path)
    try:
        lines = path.read_text().splitlines()
    except OSError as exc:
        raise IoError(f"cannot read policy {path}: {exc.strerror}") from exc
    rows = list(csv.reader(lines))
    if not rows or rows[0] != ["n", "i", "beta"]:
        raise ParseError(f"{path}: header must be n,i,beta", 1)
    pol = np.full(p.n_states, np.nan)
    for lineno, row in enumerate(rows[1:], start=2):
        if len(row) != 3:
            raise ParseError(f"{path}: expected 3 fields", lineno)
        n = _number("n", row[0], lineno, int)
        i = _number("i", row[1], lineno, int)
        try:
            k = p.index((n, i))
        except ValidationError as exc:
            raise ParseError(f"{path}: {exc}", lineno) from None
        if not np.isnan(pol[k]):
            raise ParseError(f"{path}: state ({n},{i}) listed twice", lineno)
        pol[k] = _number("beta", row[2], lineno)
    if np.isnan(pol).any():
        raise ParseError(f"{path}: {int(np.isnan(pol).sum())} state(s) missing")
    return validate_policy(pol, p)


def emit_values(values, p: ModelParams, path, column="value"):
    rows = [(s.n, s.i, _g12(v)) for s, v in zip(p.states(), values)]
    _write_rows(Path(path), ("n", "i", column), rows)


def initial_policy(cfg: RunConfig) -> np.ndarray:
    p = cfg.params
    spec = cfg.init_policy
    if spec is None:
        return np.full(p.n_states, p.gamma_lo)
    try:
        beta = float(spec)
    except ValueError:
        path = Path(spec)
        return load_policy_table(path if path.is_absolute() else cfg.base_dir / path, p)
    return validate_policy(np.full(p.n_states, beta), p)


# ---------------------------------------------------------------- commands

def _need_alpha(p):
    return validate_params(p, discounted=True)


def _cmd_steady_state(cfg, out, seed, lines):
    p = cfg.params
    pol = initial_policy(cfg)
    jd = invariant_measure_numeric(p, pol)
    emit_values(jd.probs, p, out / "steady_state.csv", column="prob")
    lines.append(f"rho = {p.rho:.12g} (stable: {p.rho < 1})")
    lines.append(f"balance residual |theta Q|_inf = {jd.residual:.3e}")
    lines.append(f"total mass = {jd.probs.sum():.15f}")
    if np.all(pol == pol[0]):
        beta = float(pol[0])
        if beta < p.mu:
            rep = stability_check(p, beta)
            lines.append(f"phase drift: phi A0 e = {rep.drift_up:.12g}, phi A2 e = {rep.drift_down:.12g}")
        try:
            inventory_dist_analytic(p.lam, beta, p.i_max)
            tv = total_variation(jd.probs, joint_dist_analytic(p, beta).probs)
            lines.append(f"product form (1-rho) rho^n pi_i: total variation {tv:.3e}")
        except ValidationError as exc:
            lines.append(f"product form not applicable: {exc}")


def _cmd_solve_vi(cfg, out, seed, lines):
    p = _need_alpha(cfg.params)
    rep = value_iteration(p, cfg.tol)
    emit_policy_table(rep.policy, p, out / "policy.csv")
    emit_values(rep.values, p, out / "values.csv")
    _write_rows(out / "convergence.csv", ("iter", "sup_diff"),
                [(k, _g12(d)) for k, d in enumerate(rep.history, start=1)])
    lines += [f"value iteration: {rep.iterations} sweeps (bound {rep.iteration_bound})",
              f"final sup diff = {rep.final_sup_diff:.3e} (tol {cfg.tol})",
              f"contraction modulus = {rep.contraction_modulus:.12g}",
              f"DCOE residual = {rep.hjb_residual:.3e}"]


def _cmd_solve_pi(cfg, out, seed, lines):
    p = _need_alpha(cfg.params)
    rep = policy_iteration_discounted(p, initial_policy(cfg))
    emit_policy_table(rep.policy, p, out / "policy.csv")
    emit_values(rep.values, p, out / "values.csv")
    lines += [f"discounted policy iteration: {rep.iterations} evaluations",
              f"DCOE residual = {rep.hjb_residual:.3e}"]


def _cmd_solve_avg(cfg, out, seed, lines):
    p = cfg.params
    rep = policy_iteration_average(p, initial_policy(cfg))
    emit_policy_table(rep.policy, p, out / "policy.csv")
    emit_values(rep.gain_bias.bias, p, out / "values.csv")
    _write_rows(out / "convergence.csv", ("iter", "gain"),
                [(k, _g12(g)) for k, g in enumerate(rep.gains, start=1)])
    lines += [f"average-cost policy iteration: {rep.iterations} evaluations",
              f"optimal gain g* = {rep.gain_bias.gain:.12g}",
              f"ACOE residual = {rep.acoe_residual:.3e}",
              f"Poisson residual = {rep.gain_bias.poisson_residual:.3e}"]


def _policy_for(cfg):
    p = cfg.params
    if cfg.solver == "vi":
        return value_iteration(_need_alpha(p), cfg.tol).policy
    if cfg.solver == "pi":
        return policy_iteration_discounted(_need_alpha(p), initial_policy(cfg)).policy
    if cfg.solver == "avg":
        return policy_iteration_average(p, initial_policy(cfg)).policy
    return initial_policy(cfg)


def _horizon(cfg, pol):
    if cfg.horizon is not None:
        return cfg.horizon
    return AUTO_EVENTS / expected_event_rate(pol, cfg.params)


def _simulate(cfg, seed, pol):
    try:
        horizon = _horizon(cfg, pol)
    except SolveError as exc:
        raise SimulationError(f"cannot size horizon: {exc}") from exc
    rows, hws = [], []
    for s in range(seed, seed + cfg.seeds):
        tr = simulate_trajectory(pol, (0, 0), horizon, s, cfg.params, record=False)
        rows.append((s, pathwise_average_cost(tr)))
        hws.append(batch_means_halfwidth(tr))
    return horizon, rows, hws


def _cmd_simulate(cfg, out, seed, lines):
    pol = _policy_for(cfg)
    horizon, rows, hws = _simulate(cfg, seed, pol)
    emit_policy_table(pol, cfg.params, out / "policy.csv")
    _write_rows(out / "pac_report.csv", ("seed", "avg_cost"), [(s, _g12(j)) for s, j in rows])
    lines += [f"policy source: {cfg.solver}", f"rng: {RNG_ALGORITHM}",
              f"horizon = {horizon:.6g} time units, {cfg.seeds} seed(s) from {seed}"]
    lines += [f"seed {s}: J_c = {j:.12g} +/- {hw:.3g} (95% batch means)"
              for (s, j), hw in zip(rows, hws)]


def _cmd_certify(cfg, out, seed, lines):
    p = cfg.params
    opt = policy_iteration_average(p, initial_policy(cfg))
    target = opt.gain_bias.gain
    pol = opt.policy if cfg.solver == "avg" else _policy_for(cfg)
    try:
        horizon = _horizon(cfg, pol)
    except SolveError as exc:
        raise SimulationError(f"cannot size horizon: {exc}") from exc
    eps = PAC_EPSILON * abs(target)
    if eps == 0:
        eps = PAC_EPSILON
    rep = pac_certify(pol, target, eps, cfg.seeds, horizon, p, quorum=PAC_QUORUM, base_seed=seed)
    emit_policy_table(pol, p, out / "policy.csv")
    _write_rows(out / "pac_report.csv", ("seed", "avg_cost"),
                [(s, _g12(j)) for s, j in zip(rep.seeds, rep.per_seed_averages)])
    lines += [f"policy source: {cfg.solver}", f"rng: {RNG_ALGORITHM}",
              f"target gain g* = {target:.12g}, epsilon = {eps:.6g}",
              f"horizon = {horizon:.6g} time units, {cfg.seeds} seed(s) from {seed}",
              f"mean J_c = {rep.mean:.12g}",
              f"within epsilon: {rep.fraction_within:.0%} (quorum {PAC_QUORUM:.0%})",
              f"result: {'PASS' if rep.passed else 'FAIL'}"]
    if not rep.passed:
        raise SimulationError(f"certification failed: {rep.fraction_within:.0%} of seeds "
                              f"within {eps:.4g} of g*={target:.6g}")


_DISPATCH = {"steady-state": _cmd_steady_state, "solve-vi": _cmd_solve_vi,
             "solve-pi": _cmd_solve_pi, "solve-avg": _cmd_solve_avg,
             "simulate": _cmd_simulate, "certify": _cmd_certify}


def _write_report(out, command, cfg, lines, elapsed):
    head = [f"prodinv {command}", f"kernel backend: {_kernels.BACKEND}",
            f"params: {cfg.params}"]
    text = "\n".join(head + lines + [f"wall time: {elapsed:.3f} s"]) + "\n"
    try:
        (out / "report.txt").write_text(text)
    except OSError as exc:
        raise IoError(f"cannot write {out / 'report.txt'}: {exc.strerror}") from exc


def run(cfg: RunConfig, command: str, out_dir=None, seed: int = 0) -> int:
    """Execute ``command``; returns the process exit status."""
    if command not in _DISPATCH:
        print(f"prodinv: unknown command {command!r}", file=sys.stderr)
        return 1
    out = Path(out_dir) if out_dir is not None else cfg.out_dir
    lines = []
    t0 = time.perf_counter()
    try:
        try:
            out.mkdir(parents=True, exist_ok=True)
        except OSError as exc:
            raise IoError(f"cannot create output directory {out}: {exc.strerror}") from exc
        _DISPATCH[command](cfg, out, seed, lines)
        _write_report(out, command, cfg, lines, time.perf_counter() - t0)
    except SimulationError as exc:
        if lines:
            _write_report(out, command, cfg, lines, time.perf_counter() - t0)
        print(f"prodinv: simulation error: {exc}", file=sys.stderr)
        return 3
    except SolveError as exc:
        print(f"prodinv: solver error: {exc}", file=sys.stderr)
        return 2
    except (ParseError, ValidationError, IoError) as exc:
        print(f"prodinv: config error: {exc}", file=sys.stderr)
        return 1
    return 0


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(prog="prodinv", description=__doc__.splitlines()[0])
    ap.add_argument("command", choices=COMMANDS)
    ap.add_argument("--config", required=True, help="key = value config file")
    ap.add_argument("--out", help="output directory (overrides out_dir)")
    ap.add_argument("--seed", type=int, default=0, help="first simulation seed (u64)")
    args = ap.parse_args(argv)
    if not 0 <= args.seed < 2**64:
        print("prodinv: config error: --seed must be an unsigned 64-bit integer", file=sys.stderr)
        return 1
    try:
        cfg = load_config(args.config)
    except (ParseError, ValidationError, IoError) as exc:
        print(f"prodinv: config error: {exc}", file=sys.stderr)
        return 1
    except ProdInvError as exc:  # pragma: no cover
        print(f"prodinv: error: {exc}", file=sys.stderr)
        return 1
    return run(cfg, args.command, args.out, args.seed)


if __name__ == "__main__":
    sys.exit(main())
