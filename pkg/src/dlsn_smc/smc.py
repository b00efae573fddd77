"""Generic particle-filter machinery.

Weights are handled in log space throughout. The Kalman filter here exists to
check the particle estimates on linear-Gaussian surrogates.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from . import model as dlsn


class FilterCollapse(RuntimeError):
    """Every particle received zero weight.

    ``t`` and ``s`` locate the failing (sub-)step; ``s`` is ``None`` for
    filters without intermediary steps.
    """

    def __init__(self, t, s=None, message="all particle weights are zero"):
        where = f"t={t}" if s is None else f"t={t}, s={s}"
        super().__init__(f"{message} at {where}")
        self.t = t
        self.s = s


class TotalDegeneracy(FilterCollapse):
    def __init__(self):
        super().__init__(t=None, message="all log-weights are -inf")


def normalize_log_weights(log_w):
    """Normalise log-weights.

    Returns ``(weights, increment)`` where ``weights`` sums to one and
    ``increment`` is the log of the mean unnormalised weight.
    """
    log_w = np.asarray(log_w, dtype=float)
    if log_w.size == 0 or np.any(np.isnan(log_w)) or not np.any(np.isfinite(log_w)):
        raise TotalDegeneracy()
    # max-shifted log-sum-exp; scipy's version costs more than the filter step at small N
    top = log_w.max()
    if not np.isfinite(top):
        raise TotalDegeneracy()
    w = np.exp(log_w - top)
    total = w.sum()
    w /= total
    return w, float(top + math.log(total) - math.log(log_w.size))


def effective_sample_size(weights) -> float:
    w = np.asarray(weights, dtype=float)
    return float(1.0 / np.sum(w * w))


def systematic_resample(weights, rng, n=None) -> np.ndarray:
    w = np.asarray(weights, dtype=float)
    n = w.size if n is None else n
    cdf = np.cumsum(w)
    cdf[-1] = 1.0
    positions = (rng.random() + np.arange(n)) / n
    return np.minimum(np.searchsorted(cdf, positions, side="right"), w.size - 1)


def multinomial_resample(weights, rng, n=None) -> np.ndarray:
    w = np.asarray(weights, dtype=float)
    n = w.size if n is None else n
    cdf = np.cumsum(w)
    cdf[-1] = 1.0
    return np.minimum(np.searchsorted(cdf, rng.random(n), side="right"), w.size - 1)


RESAMPLERS = {
    "systematic": systematic_resample,
    "multinomial": multinomial_resample,
}


def resample(weights, scheme: str = "systematic", rng=None) -> np.ndarray:
    """Ancestor indices drawn so particle ``i`` has expected ``M * w_i`` offspring."""
    try:
        fn = RESAMPLERS[scheme]
    except KeyError:
        raise ValueError(f"unknown resampling scheme {scheme!r}") from None
    return fn(weights, rng)


@dataclass
class ParticleEnsemble:
    """Weighted particles at one time, with ancestors into the previous set."""

    particles: np.ndarray
    log_weights: np.ndarray
    ancestors: Optional[np.ndarray] = None
    score_stats: Optional[np.ndarray] = None
    t: Optional[int] = None

    @property
    def size(self) -> int:
        return len(self.log_weights)

    def normalized_weights(self) -> np.ndarray:
        return normalize_log_weights(self.log_weights)[0]


@dataclass
class TraceRecord:
    t: int
    s: int
    ess: float
    loglik_increment: float
    params: Optional[tuple] = None


@dataclass
class FilterTrace:
    """Per-(sub-)step diagnostics; ``s == 0`` marks filters without sub-steps."""

    records: list = field(default_factory=list)
    n_particles: int = 0

    def append(self, t, s, ess, increment, params=None):
        if not math.isfinite(increment):
            raise ValueError(f"non-finite log-likelihood increment at t={t}, s={s}")
        self.records.append(TraceRecord(int(t), int(s), float(ess), float(increment), params))

    @property
    def log_likelihood(self) -> float:
        return float(sum(r.loglik_increment for r in self.records))

    def ess(self) -> np.ndarray:
        return np.array([r.ess for r in self.records])

    def increments(self) -> np.ndarray:
        return np.array([r.loglik_increment for r in self.records])

    def __len__(self):
        return len(self.records)


# -- bootstrap filter --------------------------------------------------------


class DLSNHooks:
    """Model hooks for running the bootstrap filter on the network model."""

    def __init__(self, N: int, d: int):
        self.N = N
        self.d = d

    def sample_initial(self, params, M, rng):
        return dlsn.stationary_prior_sample(params, self.N, self.d, rng, size=M)

    def sample_transition(self, params, particles, rng):
        return dlsn.transition_sample(params, particles, rng)

    def log_observation(self, params, particles, obs):
        return dlsn.batch_log_observation_density(params, particles, obs)


def bootstrap_filter(hooks, observations, params, M: int, rng, scheme: str = "systematic",
                     ess_threshold: Optional[float] = None, score_hook=None):
    """Standard SIR filter: propagate through the dynamics, weight by the likelihood.

    Each step propagates, weights and records, then resamples (always, or when
    the ESS falls below ``ess_threshold * M``). ``score_hook(t, particles,
    ancestors, prev_particles, weights, params)`` is called after weighting at every
    time. Returns the trace and the final pre-resampling ensemble.
    """
    if len(observations) == 0:
        raise ValueError("observations must be non-empty")
    trace = FilterTrace(n_particles=M)
    prev = hooks.sample_initial(params, M, rng)
    ancestors = np.arange(M)
    prev_logw = None  # normalised log-weights carried when resampling is skipped
    ensemble = None
    for t, obs in enumerate(observations, start=1):
        x = hooks.sample_transition(params, prev if ancestors is None else prev[ancestors], rng)
        logw = hooks.log_observation(params, x, obs)
        if ancestors is None:
            logw = logw + prev_logw
        try:
            w, increment = normalize_log_weights(logw)
        except TotalDegeneracy:
            raise FilterCollapse(t) from None
        if ancestors is None:
            # carried weights are normalised, so the increment is a plain sum
            increment = increment + math.log(M)
        ess = effective_sample_size(w)
        trace.append(t, 0, ess, increment)
        anc_in = np.arange(M) if ancestors is None else ancestors
        if score_hook is not None:
            score_hook(t, x, anc_in, prev, w, params)
        with np.errstate(divide="ignore"):
            ensemble = ParticleEnsemble(x, np.log(w), anc_in, t=t)
        if ess_threshold is None or ess < ess_threshold * M:
            ancestors = RESAMPLERS[scheme](w, rng)
        else:
            ancestors = None
            with np.errstate(divide="ignore"):
                prev_logw = np.log(w)
        prev = x
    return trace, ensemble


# -- linear-Gaussian oracle --------------------------------------------------


@dataclass
class LinearGaussianSSM:
    """``x_t = A x_{t-1} + N(0, Q)``, ``y_t = C x_t + N(0, R)``, ``x_0 ~ N(m0, P0)``."""

    A: np.ndarray
    Q: np.ndarray
    C: np.ndarray
    R: np.ndarray
    m0: np.ndarray
    P0: np.ndarray

    @classmethod
    def scalar(cls, a, q, c, r, m0=0.0, p0=None):
        if p0 is None:
            if not abs(a) < 1:
                raise ValueError("stationary prior needs |a| < 1")
            p0 = q / (1.0 - a * a)
        f = lambda v: np.atleast_2d(np.asarray(v, dtype=float))
        return cls(f(a), f(q), f(c), f(r), np.atleast_1d(float(m0)), f(p0))

    @property
    def dim(self):
        return self.A.shape[0]

    def simulate(self, T, rng):
        L0 = np.linalg.cholesky(self.P0) if np.any(self.P0) else np.zeros_like(self.P0)
        LQ = np.linalg.cholesky(self.Q)
        LR = np.linalg.cholesky(self.R)
        x = self.m0 + L0 @ rng.standard_normal(self.dim)
        ys = []
        for _ in range(T):
            x = self.A @ x + LQ @ rng.standard_normal(self.dim)
            ys.append(self.C @ x + LR @ rng.standard_normal(self.C.shape[0]))
        return np.array(ys)

    # particle hooks; particles have shape (M, dim)
    def sample_initial(self, params, M, rng):
        L0 = np.linalg.cholesky(self.P0)
        return self.m0 + rng.standard_normal((M, self.dim)) @ L0.T

    def sample_transition(self, params, particles, rng):
        LQ = np.linalg.cholesky(self.Q)
        return particles @ self.A.T + rng.standard_normal(particles.shape) @ LQ.T

    def log_observation(self, params, particles, obs):
        resid = np.atleast_1d(obs) - particles @ self.C.T
        Rinv = np.linalg.inv(self.R)
        _, logdet = np.linalg.slogdet(2.0 * math.pi * self.R)
        return -0.5 * logdet - 0.5 * np.einsum("mi,ij,mj->m", resid, Rinv, resid)


def kalman_log_likelihood(ssm: LinearGaussianSSM, observations) -> float:
    """Exact ``log p(y_{1:T})`` by the predict/update recursions."""
    m = np.array(ssm.m0, dtype=float)
    P = np.array(ssm.P0, dtype=float)
    total = 0.0
    for y in observations:
        y = np.atleast_1d(np.asarray(y, dtype=float))
        m = ssm.A @ m
        P = ssm.A @ P @ ssm.A.T + ssm.Q
        Sigma = ssm.C @ P @ ssm.C.T + ssm.R
        try:
            L = np.linalg.cholesky(Sigma)
        except np.linalg.LinAlgError:
            raise np.linalg.LinAlgError("innovation covariance is not positive definite") from None
        resid = y - ssm.C @ m
        z = np.linalg.solve(L, resid)
        total += -0.5 * (z @ z) - np.log(np.diag(L)).sum() - 0.5 * y.size * math.log(2.0 * math.pi)
        K = np.linalg.solve(Sigma, ssm.C @ P).T
        m = m + K @ resid
        P = P - K @ ssm.C @ P
        P = 0.5 * (P + P.T)
    return float(total)
