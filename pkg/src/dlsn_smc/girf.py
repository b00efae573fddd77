"""Guided intermediate resampling filter for the latent space network model.

Between consecutive observation times the AR(1) transition is split into ``S``
intermediary Gaussian steps. After every sub-step the particles are reweighted
by the ratio of an assessment function (a guide toward upcoming observations)
and resampled.

Indexing follows the observation convention of :mod:`dlsn_smc.model`:
interval ``t`` (``0 <= t < T``) moves the latent state from time ``t`` to time
``t + 1``, and sub-step ``s`` runs from 1 to ``S``. The assessment at
``(t, 0)`` is the one carried from ``(t - 1, S)``, which is the same time
point; at ``(0, 0)`` it is identically one.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from . import model as dlsn
from .smc import (
    RESAMPLERS,
    FilterCollapse,
    FilterTrace,
    ParticleEnsemble,
    TotalDegeneracy,
    effective_sample_size,
    normalize_log_weights,
)

GUIDES = ("auto", "predictive", "lookahead", "flat")
GUIDE_MEANS = ("exact", "literal")


@dataclass(frozen=True)
class GirfConfig:
    """Filter settings.

    Attributes:
        S: intermediary sub-steps per observation gap.
        B: look-ahead horizon in observations.
        M: number of particles.
        guide: ``"predictive"`` uses ``p(Y_{t+1} | U)`` at every sub-step;
            ``"lookahead"`` uses the tempered product over ``B`` future
            observations; ``"flat"`` is constant except at ``s = S``.
            ``"auto"`` picks predictive for ``B = 1`` and look-ahead otherwise.
        guide_mean: ``"exact"`` evaluates the look-ahead terms at
            ``phi^(b - s/S) U``; ``"literal"`` uses ``phi U``.
        scheme: resampling scheme.
    """

    S: int
    B: int = 1
    M: int = 1000
    guide: str = "auto"
    guide_mean: str = "exact"
    scheme: str = "systematic"

    def __post_init__(self):
        if int(self.S) != self.S or self.S < 1:
            raise ValueError(f"S must be a positive integer, got {self.S}")
        if int(self.B) != self.B or self.B < 1:
            raise ValueError(f"B must be a positive integer, got {self.B}")
        if int(self.M) != self.M or self.M < 2:
            raise ValueError(f"M must be an integer >= 2, got {self.M}")
        if self.guide not in GUIDES:
            raise ValueError(f"guide must be one of {GUIDES}, got {self.guide!r}")
        if self.guide_mean not in GUIDE_MEANS:
            raise ValueError(f"guide_mean must be one of {GUIDE_MEANS}, got {self.guide_mean!r}")
        if self.scheme not in RESAMPLERS:
            raise ValueError(f"unknown resampling scheme {self.scheme!r}")

    @property
    def resolved_guide(self) -> str:
        if self.guide == "auto":
            return "predictive" if self.B == 1 else "lookahead"
        return self.guide

    @classmethod
    def for_nodes(cls, N: int, factor: float = 1.5, **kwargs) -> "GirfConfig":
        """Config with ``S = ceil(factor * N)``."""
        return cls(S=max(1, math.ceil(factor * N)), **kwargs)


@dataclass(frozen=True)
class IntermediaryKernel:
    """One intermediary step ``U' ~ N(m U, v I)``."""

    m: float
    v: float
    sd: float


def intermediary_kernel(params: dlsn.StaticParams, S: int) -> IntermediaryKernel:
    """S-th root of the AR(1) transition: ``m = phi^(1/S)``, ``v = sigma^2 (1 - phi^(2/S)) / (1 - phi^2)``."""
    phi, sigma = params.phi, params.sigma
    if not 0.0 < phi < 1.0:
        raise ValueError(f"intermediary kernel needs phi in (0, 1), got {phi}")
    if S < 1:
        raise ValueError("S must be >= 1")
    if S == 1:
        return IntermediaryKernel(phi, sigma * sigma, sigma)
    m = phi ** (1.0 / S)
    # -expm1 keeps precision when phi^(2/S) is close to one
    ratio = -math.expm1(2.0 * math.log(phi) / S) / -math.expm1(2.0 * math.log(phi))
    v = sigma * sigma * ratio
    return IntermediaryKernel(m, v, sigma * math.sqrt(ratio))


def lookahead_terms(t: int, s: int, T: int, cfg: GirfConfig, phi: float):
    """Tempering exponents and guide-mean scales for ``(t, s)``.

    Returns a list of ``(b, eta, scale)`` for ``b = 1..min(B, T - t)``. The
    exponent is formed from integer numerator and denominator before the
    division. ``scale`` multiplies the particle before the likelihood is
    evaluated; the ``b = 1, s = S`` term always uses scale one.
    """
    S, B = cfg.S, cfg.B
    terms = []
    for b in range(1, min(B, T - t) + 1):
        depth = min(t + b, B)
        eta = (S * depth - (b * S - s)) / (S * depth)
        if b == 1 and s == S:
            scale = 1.0
        elif cfg.guide_mean == "exact":
            scale = phi ** ((b * S - s) / S)
        else:
            scale = phi
        terms.append((b, eta, scale))
    return terms


class _ObsCache:
    """Per-time constants of the observation model (Poisson factorials)."""

    def __init__(self, params, observations):
        self.obs = observations
        self.poisson = params.likelihood is dlsn.Likelihood.POISSON
        self._logfact = {}

    def logfact(self, k):
        if not self.poisson:
            return 0.0
        if k not in self._logfact:
            self._logfact[k] = dlsn.log_factorial_constant(self.obs[k])
        return self._logfact[k]

    def loglik(self, params, X, time, scale=1.0):
        """``log p(Y_time | scale * X)`` per particle; ``time`` is 1-based."""
        return dlsn.batch_log_observation_density(
            params, X, self.obs[time - 1], scale=scale, log_fact=self.logfact(time - 1))


def _log_assessment(params, X, t, s, cache, T, cfg):
    """Batched ``log nu_{t,s}`` for ``s >= 1``.

    Also returns ``log p(Y_{t+1} | X)`` when ``s == S`` (else ``None``); that
    term is needed as the observation factor of the next interval.
    """
    guide = cfg.resolved_guide
    S = cfg.S
    if guide in ("predictive", "flat"):
        if guide == "flat" and s < S:
            return np.zeros(len(X)), None
        val = cache.loglik(params, X, t + 1)
        return val, (val if s == S else None)
    total = None
    obs_term = None
    for b, eta, scale in lookahead_terms(t, s, T, cfg, params.phi):
        term = cache.loglik(params, X, t + b, scale=scale)
        if b == 1 and s == S:
            obs_term = term
        total = eta * term if total is None else total + eta * term
    return total, obs_term


def assessment_function(params, config, t, s, observations, girf_cfg) -> float:
    """Log assessment ``log nu_{t,s}`` of a single configuration.

    ``s = 0`` refers to the same time point as ``(t - 1, S)``; at ``t = 0`` it
    is zero (``nu = 1``).
    """
    observations = np.asarray(observations)
    T = len(observations)
    if not (0 <= t < T and 0 <= s <= girf_cfg.S):
        raise ValueError(f"(t, s) = ({t}, {s}) is not a legal intermediary step")
    if s == 0:
        if t == 0:
            return 0.0
        t, s = t - 1, girf_cfg.S
    X = np.asarray(config, dtype=float)[None]
    val, _ = _log_assessment(params, X, t, s, _ObsCache(params, observations), T, girf_cfg)
    return float(val[0])


def girf_step_weight(params, new_config, old_config, t, s, observations, girf_cfg) -> float:
    """Log incremental weight of the move ``old -> new`` at sub-step ``(t, s)``.

    ``log nu_{t,s}(new) - log nu_{t,s-1}(old)``, plus ``log p(Y_t | old)`` on
    the first sub-step after an observation time ``t >= 1``.
    """
    if s < 1:
        raise ValueError("sub-step index s starts at 1")
    a = assessment_function(params, new_config, t, s, observations, girf_cfg)
    carried = assessment_function(params, old_config, t, s - 1, observations, girf_cfg)
    if s == 1 and t >= 1:
        obs = dlsn.log_observation_density(params, old_config, np.asarray(observations)[t - 1])
        return a + (obs - carried)
    return a - carried


ScoreHook = Callable[..., None]


@dataclass
class GirfResult:
    trace: FilterTrace
    snapshots: list = field(default_factory=list)

    @property
    def log_likelihood(self) -> float:
        return self.trace.log_likelihood


class GirfFilter:
    """Stateful GIRF that advances one observation interval at a time.

    Parameters may change between intervals, which is what online estimation
    needs. ``score_hook(t, particles, ancestors, prev_particles, weights,
    params)`` is invoked at every observation time ``t >= 1`` with the
    pre-resampling particles, the index of each particle's time ``t - 1``
    ancestor, the weighted time ``t - 1`` particles and the normalised
    filtering weights.
    """

    def __init__(self, observations, cfg: GirfConfig, rng, params: dlsn.StaticParams,
                 score_hook: Optional[ScoreHook] = None, keep_snapshots: bool = True,
                 d: int = 2):
        obs = np.asarray(observations)
        if obs.ndim != 3 or len(obs) == 0:
            raise ValueError("observations must be a non-empty (T, N, N) array")
        self.obs = obs
        self.T, self.N = obs.shape[0], obs.shape[1]
        self.d = d
        self.cfg = cfg
        self.rng = rng
        self.score_hook = score_hook
        self.keep_snapshots = keep_snapshots
        self.trace = FilterTrace(n_particles=cfg.M)
        self.snapshots: list = []
        self._cache = _ObsCache(params, obs)
        self._resample = RESAMPLERS[cfg.scheme]
        self.t = 0
        # state at the current integer time, after resampling
        self.X = dlsn.stationary_prior_sample(params, self.N, d, rng, size=cfg.M)
        self.carried = np.zeros(cfg.M)
        self.carried_obs = None
        self.anchor = self.X  # weighted particles at the last integer time
        self.anchor_index = np.arange(cfg.M)

    @property
    def done(self) -> bool:
        return self.t >= self.T

    def advance(self, params: dlsn.StaticParams) -> Optional[ParticleEnsemble]:
        """Run the ``S`` sub-steps of the current interval under ``params``."""
        if self.done:
            raise RuntimeError("filter has already processed every observation")
        cfg, t, M = self.cfg, self.t, self.cfg.M
        kern = intermediary_kernel(params, cfg.S)
        X, carried, carried_obs = self.X, self.carried, self.carried_obs
        anc = self.anchor_index
        for s in range(1, cfg.S + 1):
            X_new = dlsn.propagate(X, kern.m, kern.sd, self.rng)
            a, obs_term = _log_assessment(params, X_new, t, s, self._cache, self.T, cfg)
            if s == 1 and t >= 1:
                logw = a + (carried_obs - carried)
            else:
                logw = a - carried
            try:
                w, increment = normalize_log_weights(logw)
            except TotalDegeneracy:
                raise FilterCollapse(t, s) from None
            ess = effective_sample_size(w)
            self.trace.append(t, s, ess, increment, params=(params.alpha, params.sigma, params.phi))
            if s == cfg.S:
                self._at_observation(params, X_new, logw, a, obs_term, anc, w)
            idx = self._resample(w, self.rng)
            X = X_new[idx]
            carried = a[idx]
            if obs_term is not None:
                carried_obs = obs_term[idx]
            anc = anc[idx]
        self.X, self.carried, self.carried_obs = X, carried, carried_obs
        self.anchor_index = idx
        self.t += 1
        return self.snapshots[-1] if self.keep_snapshots else None

    def _at_observation(self, params, X_new, logw, a, obs_term, anc, w):
        t1 = self.t + 1
        if obs_term is a:
            filt_w, filt_logw = w, logw
        else:
            filt_logw = logw + (obs_term - a)
            try:
                filt_w, _ = normalize_log_weights(filt_logw)
            except TotalDegeneracy:
                raise FilterCollapse(self.t, self.cfg.S) from None
        if self.score_hook is not None:
            self.score_hook(t1, X_new, anc, self.anchor, filt_w, params)
        if self.keep_snapshots:
            with np.errstate(divide="ignore"):
                self.snapshots.append(ParticleEnsemble(X_new, np.log(filt_w), anc, t=t1))
        self.anchor = X_new

    def run(self, params: dlsn.StaticParams) -> GirfResult:
        while not self.done:
            self.advance(params)
        return GirfResult(self.trace, self.snapshots)


def run_girf(params: dlsn.StaticParams, observations, girf_cfg: GirfConfig, rng,
             score_hook: Optional[ScoreHook] = None, d: int = 2,
             keep_snapshots: bool = True) -> GirfResult:
    """Filter ``observations`` with fixed parameters.

    The trace holds one record per sub-step and its summed increments are the
    log-likelihood estimate. Snapshots are the weighted ensembles at times
    ``1..T`` before resampling.
    """
    filt = GirfFilter(observations, girf_cfg, rng, params, score_hook=score_hook,
                      keep_snapshots=keep_snapshots, d=d)
    return filt.run(params)
