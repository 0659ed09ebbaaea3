"""Metropolis-adjusted Langevin sampling from unnormalized log-densities."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Literal

import numpy as np

from .errors import InvalidSpecError, StuckChainError

# maps an (n, d) batch to (log p (n,), grad log p (n, d))
Target = Callable[[np.ndarray], tuple[np.ndarray, np.ndarray]]


@dataclass(frozen=True)
class MalaConfig:
    step_size: float = 0.1
    chain_length: int = 10_000
    burn_in: int = 5_000
    n_chains: int = 1
    init: Literal["from_data", "from_q0"] = "from_data"
    seed: int | None = None
    max_consecutive_rejections: int = 1000

    def __post_init__(self):
        if not self.step_size > 0:
            raise InvalidSpecError("step_size must be > 0")
        if not 0 <= self.burn_in < self.chain_length:
            raise InvalidSpecError("need 0 <= burn_in < chain_length")
        if self.n_chains < 1:
            raise InvalidSpecError("n_chains must be >= 1")
        if self.init not in ("from_data", "from_q0"):
            raise InvalidSpecError(f"unknown init {self.init!r}")


@dataclass(frozen=True)
class MalaResult:
    samples: np.ndarray  # (n_chains, chain_length - burn_in, d)
    acceptance: float
    per_chain_acceptance: np.ndarray

    def flat(self) -> np.ndarray:
        return self.samples.reshape(-1, self.samples.shape[-1])


def log_accept_ratio(logp_x, logp_y, log_q_xy, log_q_yx):
    """Log Metropolis-Hastings ratio for moving x -> y; ``log_q_xy`` is the proposal log-density of y given x."""
    return logp_y + log_q_yx - logp_x - log_q_xy


def _langevin_log_q(x_from, grad_from, x_to, eps):
    """Log-density (up to a constant shared by both directions) of the Langevin proposal."""
    mean = x_from + 0.5 * eps * eps * grad_from
    r = x_to - mean
    return -np.sum(r * r, axis=-1) / (2.0 * eps * eps)


def initial_points(cfg: MalaConfig, d: int, data=None, q0=None) -> np.ndarray:
    rng = np.random.default_rng(None if cfg.seed is None else [cfg.seed, 1])
    if cfg.init == "from_data":
        if data is None:
            raise InvalidSpecError("init='from_data' needs training data")
        data = np.asarray(data, dtype=float)
        return data[rng.integers(0, data.shape[0], size=cfg.n_chains)].copy()
    if q0 is None:
        raise InvalidSpecError("init='from_q0' needs a base density")
    return q0.sample(cfg.n_chains, rng)


def mala_sample(target: Target, d: int, cfg: MalaConfig, x0=None, data=None, q0=None) -> MalaResult:
    """Run ``cfg.n_chains`` independent MALA chains in lock step.

    Proposal ``y = x + (eps^2/2) grad log p(x) + eps xi``; acceptance uses the
    asymmetric Gaussian proposal densities in both directions.  Chains start
    at ``x0`` when given, otherwise according to ``cfg.init``.
    """
    if x0 is None:
        x0 = initial_points(cfg, d, data, q0)
    x = np.array(x0, dtype=float).reshape(cfg.n_chains, d)
    rng = np.random.default_rng(cfg.seed)
    eps = float(cfg.step_size)
    lp, g = target(x)
    if not np.all(np.isfinite(lp)):
        raise InvalidSpecError("log-density is not finite at the initial points")
    keep = cfg.chain_length - cfg.burn_in
    out = np.empty((cfg.n_chains, keep, d))
    accepted = np.zeros(cfg.n_chains)
    streak = np.zeros(cfg.n_chains, dtype=int)
    for t in range(cfg.chain_length):
        y = x + 0.5 * eps * eps * g + eps * rng.standard_normal(x.shape)
        lp_y, g_y = target(y)
        with np.errstate(invalid="ignore"):
            log_a = log_accept_ratio(lp, lp_y, _langevin_log_q(x, g, y, eps), _langevin_log_q(y, g_y, x, eps))
        log_a = np.where(np.isfinite(lp_y), log_a, -np.inf)
        acc = np.log(rng.uniform(size=cfg.n_chains)) < log_a
        x = np.where(acc[:, None], y, x)
        lp = np.where(acc, lp_y, lp)
        g = np.where(acc[:, None], g_y, g)
        accepted += acc
        streak = np.where(acc, 0, streak + 1)
        if np.any(streak >= cfg.max_consecutive_rejections):
            bad = int(np.argmax(streak))
            raise StuckChainError(
                f"chain {bad} rejected {streak[bad]} consecutive proposals at step {t} "
                f"(state {x[bad].tolist()}, log p {lp[bad]:.4g}, step size {eps})"
            )
        if t >= cfg.burn_in:
            out[:, t - cfg.burn_in] = x
    rates = accepted / cfg.chain_length
    return MalaResult(out, float(rates.mean()), rates)


def mh_transition_matrix(log_target, log_proposal) -> np.ndarray:
    """Transition matrix of a finite-state Metropolis-Hastings chain.

    ``log_proposal[i, j]`` is the log-probability of proposing ``j`` from ``i``.
    Uses the same acceptance rule as ``mala_sample``.
    """
    log_target = np.asarray(log_target, dtype=float)
    log_proposal = np.asarray(log_proposal, dtype=float)
    k = log_target.size
    P = np.zeros((k, k))
    for i in range(k):
        for j in range(k):
            if i == j:
                continue
            a = log_accept_ratio(log_target[i], log_target[j], log_proposal[i, j], log_proposal[j, i])
            P[i, j] = np.exp(log_proposal[i, j]) * min(1.0, np.exp(a))
        P[i, i] = 1.0 - P[i].sum()
    return P
