"""Stationary behaviour: product-form law for a constant production rate and
numeric invariant measures for arbitrary policies."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as la
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .errors import (DegenerateRatio, PhiUndefined, Reducible, SolveFailed, Unstable,
                     UnstableInventory)
from .model import ModelParams, generator_matrix, is_unichain

DENSE_LIMIT = 2000
RESIDUAL_LIMIT = 1e-10


@dataclass(frozen=True)
class StabilityReport:
    rho: float
    stable: bool
    phi: np.ndarray | None = None
    drift_up: float | None = None     # phi A0 e
    drift_down: float | None = None   # phi A2 e


@dataclass(frozen=True)
class InventoryDist:
    probs: np.ndarray
    unnormalized: np.ndarray
    tail_mass: float


@dataclass(frozen=True)
class JointDist:
    """Probabilities over the flattened lattice (n-major)."""

    probs: np.ndarray
    shape: tuple[int, int]
    unnormalized: np.ndarray | None = None
    residual: float | None = None
    extra: dict = field(default_factory=dict)

    def table(self) -> np.ndarray:
        return self.probs.reshape(self.shape)

    def level_masses(self) -> np.ndarray:
        return self.table().sum(axis=1)


def total_variation(a, b) -> float:
    return 0.5 * float(np.abs(np.asarray(a) - np.asarray(b)).sum())


def qbd_blocks(p: ModelParams, beta: float):
    """Level blocks ``B, A0, A1, A2`` of the untruncated generator, cut to
    inventory levels ``0..i_max``."""
    m = p.i_max + 1
    lam, mu = p.lam, p.mu
    up = np.diag(np.full(m - 1, beta), 1)
    pos = np.arange(m) >= 1
    B = up - np.diag(beta + lam * pos)
    A0 = np.diag(lam * pos.astype(float))
    A1 = up - np.diag(beta + (lam + mu) * pos)
    A2 = np.diag(np.full(m - 1, mu), -1)
    return B, A0, A1, A2


def stability_check(p: ModelParams, beta: float) -> StabilityReport:
    """Queue stability (``rho < 1``) plus the phase-drift diagnostic."""
    rho = p.lam / p.mu
    if not beta < p.mu:
        raise PhiUndefined(f"phi needs beta < mu (beta={beta}, mu={p.mu})")
    ratio = beta / p.mu
    phi = (1 - ratio) * ratio ** np.arange(p.i_max + 1)
    _, A0, _, A2 = qbd_blocks(p, beta)
    e = np.ones(p.i_max + 1)
    return StabilityReport(rho=rho, stable=rho < 1, phi=phi,
                           drift_up=float(phi @ A0 @ e), drift_down=float(phi @ A2 @ e))


def inventory_dist_analytic(lam: float, beta: float, i_max: int) -> InventoryDist:
    """Geometric stock law ``(1 - beta/lam) (beta/lam)**i`` on ``0..i_max``."""
    if math.isclose(beta, lam, rel_tol=1e-12, abs_tol=0.0):
        raise DegenerateRatio(f"beta == lambda == {lam}: no geometric inventory law")
    if beta > lam:
        raise UnstableInventory(f"beta={beta} > lambda={lam}: inventory drifts to infinity")
    if not beta > 0:
        raise DegenerateRatio(f"beta must be positive, got {beta}")
    ratio = beta / lam
    raw = (1 - ratio) * ratio ** np.arange(i_max + 1)
    return InventoryDist(probs=raw / raw.sum(), unnormalized=raw,
                         tail_mass=ratio ** (i_max + 1))


def joint_dist_analytic(p: ModelParams, beta: float) -> JointDist:
    """Product form ``(1 - rho) rho**n pi_i`` on the truncated lattice."""
    if not p.lam < p.mu:
        raise Unstable(f"lambda={p.lam} >= mu={p.mu}")
    inv = inventory_dist_analytic(p.lam, beta, p.i_max)
    rho = p.rho
    xi = 1.0 - rho
    levels = xi * rho ** np.arange(p.n_max + 1)
    raw = np.outer(levels, inv.unnormalized).ravel()
    return JointDist(probs=raw / raw.sum(), shape=(p.n_max + 1, p.i_max + 1),
                     unnormalized=raw, extra={"xi": xi, "rho": rho})


def stationary_distribution(q, check: bool = True) -> tuple[np.ndarray, float]:
    """Solve ``theta Q = 0, sum(theta) = 1`` for a unichain rate matrix.

    The balance equation of the last state is replaced by the normalization
    row. Returns ``(theta, residual)`` with ``residual = |theta Q|_inf``.
    """
    n = q.shape[0]
    if check and not is_unichain(q):
        raise Reducible("rate matrix has more than one closed class")
    rhs = np.zeros(n)
    rhs[-1] = 1.0
    if n <= DENSE_LIMIT:
        a = (q.toarray() if sp.issparse(q) else np.array(q, dtype=float)).T.copy()
        a[-1, :] = 1.0
        try:
            theta = la.solve(a, rhs)
        except la.LinAlgError as exc:
            raise SolveFailed(f"balance system singular: {exc}") from exc
    else:
        a = sp.lil_matrix(sp.csr_matrix(q).T)
        a[n - 1, :] = np.ones(n)
        try:
            theta = spla.splu(a.tocsc()).solve(rhs)
        except RuntimeError as exc:
            raise SolveFailed(f"balance system singular: {exc}") from exc
    if not np.all(np.isfinite(theta)):
        raise SolveFailed("balance solve produced non-finite values")
    theta = np.clip(theta, 0.0, None)
    theta /= theta.sum()
    residual = float(np.abs(q.T @ theta).max())
    if residual > RESIDUAL_LIMIT:
        raise SolveFailed(f"balance residual {residual:.3e} exceeds {RESIDUAL_LIMIT}")
    return theta, residual


def invariant_measure_numeric(p: ModelParams, pol) -> JointDist:
    q = generator_matrix(p, pol, sparse=p.n_states > DENSE_LIMIT)
    theta, residual = stationary_distribution(q)
    return JointDist(probs=theta, shape=(p.n_max + 1, p.i_max + 1), residual=residual)
