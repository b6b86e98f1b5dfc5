"""Adaptive preconditioned Crank-Nicolson Metropolis sampler.

The chain lives in the unconstrained parameter space.  Proposals start
as plain pCN against the Gaussian prior N(0, B); once an empirical
covariance C of the posterior is available the proposal switches to

    z* = (I - beta2^2 C B^-1)^{1/2} z + beta2 w,   w ~ N(0, C),

with C refreshed periodically from all stored samples.  Acceptance uses
only the misfit difference, min(1, exp(phi - phi*)).

Each step size is auto-tuned toward a 25-35% acceptance band by a
stochastic-approximation rule whose gain decays harmonically per
proposal kind, so adaptation diminishes as the chain matures.  On each
covariance refresh beta2 is rescaled to keep the effective step size
beta2 * sqrt(C) continuous.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np


class SamplerError(RuntimeError):
    pass


@dataclass
class LikelihoodSpec:
    """Noise level and forward map for the Gaussian likelihood.

    ``forward`` maps an unconstrained parameter vector to the predicted
    data vector, or returns None for proposals whose shape is invalid
    (certain rejection).
    """

    sigma: float
    data: np.ndarray
    forward: Callable[[np.ndarray], Optional[np.ndarray]]

    def __post_init__(self):
        if self.sigma <= 0:
            raise ValueError("sigma must be positive")
        self.data = np.asarray(self.data, dtype=float)
        if self.data.size == 0:
            raise ValueError("data must be nonempty")


@dataclass
class SamplerConfig:
    n_total: int
    n_burn: int = 0
    beta1: float = 0.01
    beta2: float = 0.2
    cov_period: int = 2500
    jitter: float = 1e-8
    target_rate: float = 0.30
    target_band: tuple = (0.25, 0.35)
    beta2_max: float = 5.0  # PSD of I - beta^2 C B^-1 is still enforced
    tune: bool = True
    tune_window: int = 100
    tune_fraction: float = 0.2
    global_prob: float = 0.05
    store_predictions: bool = True

    def __post_init__(self):
        if not 0 < self.beta1 <= 1:
            raise ValueError("beta1 must lie in (0, 1]")
        if not 0 < self.beta2 <= self.beta2_max:
            raise ValueError("beta2 must lie in (0, beta2_max]")
        if self.n_burn >= self.n_total:
            raise ValueError("n_burn must be smaller than n_total")


@dataclass
class ChainResult:
    samples: np.ndarray  # (N, p) unconstrained states
    phis: np.ndarray
    accepted: np.ndarray  # bool flags
    global_move: np.ndarray  # True where the proposal was a prior redraw
    acceptance_rate: float
    # acceptance among non-global proposals over the final quarter of
    # the chain; this is the step-size health metric the tuner targets
    terminal_acceptance: float
    cov: Optional[np.ndarray]
    beta1: float
    beta2: float
    clamp_events: int
    predictions: Optional[np.ndarray]  # forward output at the window end time

    @property
    def mean(self) -> np.ndarray:
        return self.samples.mean(axis=0)

    @property
    def std(self) -> np.ndarray:
        return self.samples.std(axis=0, ddof=1)


def misfit(z: np.ndarray, lik: LikelihoodSpec):
    """Phi = ||d - g(z)||^2 / (2 sigma^2); +inf for invalid shapes.

    Returns (phi, prediction); prediction is None when invalid.
    """
    pred = lik.forward(np.asarray(z, dtype=float))
    if pred is None:
        return math.inf, None
    r = lik.data - pred
    return float(r @ r) / (2.0 * lik.sigma**2), pred


def pcn_propose(z: np.ndarray, beta: float, prior_diag: np.ndarray, rng) -> np.ndarray:
    """Plain pCN proposal sqrt(1-beta^2) z + beta w, w ~ N(0, B)."""
    w = rng.standard_normal(z.size) * np.sqrt(prior_diag)
    return math.sqrt(1.0 - beta * beta) * z + beta * w


def _scaling_sqrt(beta: float, prior_diag: np.ndarray, cov: np.ndarray):
    """Principal square root of (I - beta^2 C B^-1) in the symmetrized
    frame, with negative eigenvalues clamped to zero.

    Returns (S, n_clamped).
    """
    b_half = np.sqrt(prior_diag)
    A = (beta * beta) * (cov / b_half[None, :] / b_half[:, None])
    A = 0.5 * (A + A.T)
    vals, vecs = np.linalg.eigh(A)
    rem = 1.0 - vals
    n_clamped = int(np.sum(rem < 0))
    rem = np.clip(rem, 0.0, None)
    S_sym = (vecs * np.sqrt(rem)) @ vecs.T
    S = (b_half[:, None] * S_sym) / b_half[None, :]
    return S, n_clamped


def psd_beta_bound(prior_diag: np.ndarray, cov: np.ndarray) -> float:
    """Largest beta for which I - beta^2 C B^-1 stays PSD.

    Above this bound the adaptive proposal is no longer reversible with
    respect to the prior (the clamped square root changes the noise
    covariance the acceptance rule assumes), which biases the chain; the
    tuner must therefore never push beta2 past it.
    """
    b_half = np.sqrt(np.asarray(prior_diag, dtype=float))
    A = cov / b_half[None, :] / b_half[:, None]
    lam_max = float(np.linalg.eigvalsh(0.5 * (A + A.T))[-1])
    if lam_max <= 0:
        return math.inf
    return 1.0 / math.sqrt(lam_max)


def adaptive_propose(z: np.ndarray, beta: float, prior_diag: np.ndarray,
                     cov: np.ndarray, rng):
    """Adaptive pCN proposal with empirical covariance C.

    Returns (z*, n_clamped_eigenvalues).
    """
    S, n_clamped = _scaling_sqrt(beta, prior_diag, cov)
    try:
        chol = np.linalg.cholesky(cov)
    except np.linalg.LinAlgError as exc:
        raise SamplerError("empirical covariance not PSD after jitter") from exc
    w = chol @ rng.standard_normal(z.size)
    return S @ z + beta * w, n_clamped


def accept_prob(phi_current: float, phi_proposed: float) -> float:
    """min(1, exp(phi_current - phi_proposed))."""
    if math.isinf(phi_proposed):
        return 0.0
    return min(1.0, math.exp(min(phi_current - phi_proposed, 0.0)))


def update_empirical_cov(samples: np.ndarray, jitter: float = 1e-8) -> np.ndarray:
    """Unbiased sample covariance of the stored states plus jitter*I."""
    samples = np.asarray(samples, dtype=float)
    if samples.shape[0] < 2:
        raise ValueError("need at least 2 samples")
    C = np.cov(samples, rowvar=False, ddof=1)
    C = np.atleast_2d(C)
    return 0.5 * (C + C.T) + jitter * np.eye(samples.shape[1])


def tune_beta(beta: float, acc_rate: float, window_index: int,
              target: float = 0.30, eta0: float = 2.0,
              beta_max: float = 1.0) -> float:
    """Multiplicative stochastic-approximation step toward the target
    acceptance rate, with 1/sqrt(j) decaying gain.

    The early gain is large so a badly mis-scaled step size can be
    corrected within a handful of windows even on short chains; the
    dead band around the target in run_chain keeps the large gain from
    causing oscillation once the rate is healthy. The gain decays to
    zero (no floor) so adaptation diminishes and long chains keep the
    correct stationary distribution.

    ``beta_max`` is 1 for plain pCN; the adaptive proposal stays
    prior-reversible for beta > 1 as long as I - beta^2 C B^-1 remains
    positive semidefinite, so its cap may be larger when C << B.
    """
    eta = eta0 / math.sqrt(max(window_index, 1))
    beta = beta * math.exp(eta * (acc_rate - target))
    return float(np.clip(beta, 1e-4, beta_max))


def run_chain(config: SamplerConfig, lik: LikelihoodSpec, prior_diag: np.ndarray,
              z0: np.ndarray, rng) -> ChainResult:
    """Run the adaptive pCN chain.

    Phase 1 (k <= n_burn) uses plain pCN; the first empirical covariance
    is built from the burn-in samples (or, when n_burn = 0, from the
    plain-pCN prefix at the first periodic refresh).  Phase 2 refreshes
    C from all stored samples every time ``k mod (cov_period + 1) = 0``.
    """
    prior_diag = np.asarray(prior_diag, dtype=float)
    z = np.asarray(z0, dtype=float).copy()
    p = z.size
    N = config.n_total
    phi, pred = misfit(z, lik)
    if math.isinf(phi):
        raise SamplerError("initial state has invalid shape (infinite misfit)")

    samples = np.empty((N, p))
    phis = np.empty(N)
    accepted = np.zeros(N, dtype=bool)
    global_move = np.zeros(N, dtype=bool)
    preds = np.empty(N) if config.store_predictions else None

    beta1, beta2 = config.beta1, config.beta2
    beta2_cap = config.beta2_max
    cov = None
    clamp_events = 0
    kind_iters = {"plain": 0, "adaptive": 0, "global": 0}
    win_acc = {"plain": 0, "adaptive": 0, "global": 0}
    win_cnt = {"plain": 0, "adaptive": 0, "global": 0}
    win_idx = {"plain": 0, "adaptive": 0, "global": 0}

    for k in range(1, N + 1):
        plain = k <= config.n_burn or cov is None
        # occasional independence move (pCN with beta = 1, i.e. a fresh
        # prior draw) lets the chain escape minor posterior modes; it
        # uses the same misfit-difference acceptance rule
        if config.global_prob > 0 and rng.uniform() < config.global_prob:
            z_star = pcn_propose(z, 1.0, prior_diag, rng)
            kind = "global"
        elif plain:
            z_star = pcn_propose(z, beta1, prior_diag, rng)
            kind = "plain"
        else:
            z_star, n_clamped = adaptive_propose(z, beta2, prior_diag, cov, rng)
            clamp_events += n_clamped
            kind = "adaptive"
        phi_star, pred_star = misfit(z_star, lik)
        alpha = accept_prob(phi, phi_star)
        if rng.uniform() < alpha:
            z, phi, pred = z_star, phi_star, pred_star
            accepted[k - 1] = True
            win_acc[kind] += 1
        samples[k - 1] = z
        phis[k - 1] = phi
        global_move[k - 1] = kind == "global"
        if preds is not None:
            preds[k - 1] = pred[-1] if pred is not None and pred.size else np.nan
        kind_iters[kind] += 1
        win_cnt[kind] += 1

        if k >= 2 and (
            k == config.n_burn
            or (k > config.n_burn and k % (config.cov_period + 1) == 0)
        ):
            new_cov = update_empirical_cov(samples[:k], config.jitter)
            # stay strictly below the PSD/reversibility bound so the
            # eigenvalue clamp in the proposal never actually fires
            beta2_cap = min(config.beta2_max,
                            0.99 * psd_beta_bound(prior_diag, new_cov))
            if cov is not None and config.tune:
                # keep the effective step beta2 * sqrt(C) continuous
                # across the refresh; the tuner then corrects from there
                scale = math.sqrt(np.trace(cov) / np.trace(new_cov))
                beta2 = float(np.clip(beta2 * scale, 1e-4, beta2_cap))
            else:
                beta2 = float(np.clip(beta2, 1e-4, beta2_cap))
            cov = new_cov

        if (
            config.tune
            and kind != "global"
            and win_cnt[kind] >= config.tune_window
        ):
            win_idx[kind] += 1
            rate = win_acc[kind] / win_cnt[kind]
            # the controller's dead band is half the width of the
            # health band, so the realized rate keeps a safety margin
            # inside the target interval
            lo, hi = config.target_band
            lo = 0.5 * (lo + config.target_rate)
            hi = 0.5 * (hi + config.target_rate)
            if lo <= rate <= hi:
                pass  # already in the band; leave the step size alone
            elif kind == "plain":
                beta1 = tune_beta(beta1, rate, win_idx[kind], config.target_rate)
            else:
                beta2 = tune_beta(beta2, rate, win_idx[kind], config.target_rate,
                                  beta_max=beta2_cap)
            win_acc[kind] = 0
            win_cnt[kind] = 0

    tail_mask = ~global_move[3 * N // 4:]
    tail = accepted[3 * N // 4:][tail_mask]
    return ChainResult(
        samples=samples,
        phis=phis,
        accepted=accepted,
        global_move=global_move,
        acceptance_rate=float(accepted.mean()),
        terminal_acceptance=float(tail.mean()) if tail.size else float(accepted.mean()),
        cov=cov,
        beta1=beta1,
        beta2=beta2,
        clamp_events=clamp_events,
        predictions=preds,
    )


def integrated_autocorr_time(x: np.ndarray, max_lag: Optional[int] = None) -> float:
    """Integrated autocorrelation time by the initial-positive-sequence
    estimator; used to size Monte Carlo standard errors of chain means."""
    x = np.asarray(x, dtype=float)
    n = x.size
    if max_lag is None:
        max_lag = n // 4
    x = x - x.mean()
    var = float(x @ x) / n
    if var == 0:
        return 1.0
    tau = 1.0
    for lag in range(1, max_lag):
        c = float(x[:-lag] @ x[lag:]) / n / var
        if c <= 0:
            break
        tau += 2.0 * c
    return tau


def chain_standard_error(x: np.ndarray) -> float:
    """Autocorrelation-adjusted standard error of the chain mean."""
    x = np.asarray(x, dtype=float)
    tau = integrated_autocorr_time(x)
    return float(x.std(ddof=1) * math.sqrt(tau / x.size))
