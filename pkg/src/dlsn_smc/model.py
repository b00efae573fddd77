"""Dynamic latent space network model.

Node coordinates follow independent stationary AR(1) Gaussian processes and
edges are conditionally independent given the coordinates, through either a
distance or a dot-product linear predictor, under a Bernoulli-logit or a
Poisson-log observation model.

Latent configurations are ``(N, d)`` arrays; batches of particles are
``(M, N, d)``. Observation series are ``(T, N, N)`` arrays, with ``obs[t - 1]``
holding the network observed at time ``t``.
"""

from __future__ import annotations

import dataclasses
import enum
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.special import expit, gammaln

from . import kernels


class InputDomainError(ValueError):
    """Observation values outside the support of the likelihood."""


class Link(str, enum.Enum):
    EUCLIDEAN = "euclidean"
    DOT_PRODUCT = "dot"


class Likelihood(str, enum.Enum):
    BERNOULLI = "bernoulli"
    POISSON = "poisson"


_LINK_CODE = {Link.EUCLIDEAN: 0, Link.DOT_PRODUCT: 1}
_LIK_CODE = {Likelihood.BERNOULLI: 0, Likelihood.POISSON: 1}


@dataclass(frozen=True)
class StaticParams:
    """Static parameters ``(alpha, sigma, phi)`` plus the model variant."""

    alpha: float
    sigma: float
    phi: float
    link: Link = Link.EUCLIDEAN
    likelihood: Likelihood = Likelihood.BERNOULLI

    def __post_init__(self):
        object.__setattr__(self, "link", Link(self.link))
        object.__setattr__(self, "likelihood", Likelihood(self.likelihood))
        if not math.isfinite(self.alpha):
            raise ValueError(f"alpha must be finite, got {self.alpha}")
        if not (math.isfinite(self.sigma) and self.sigma > 0):
            raise ValueError(f"sigma must be positive, got {self.sigma}")
        if not 0.0 < self.phi < 1.0:
            raise ValueError(f"phi must lie in (0, 1), got {self.phi}")

    @property
    def stationary_variance(self) -> float:
        return self.sigma**2 / (1.0 - self.phi**2)

    def replace(self, **changes) -> "StaticParams":
        return dataclasses.replace(self, **changes)

    def as_array(self) -> np.ndarray:
        return np.array([self.alpha, self.sigma, self.phi])


# -- latent dynamics ---------------------------------------------------------


def stationary_prior_sample(params: StaticParams, N: int, d: int, rng, size=None) -> np.ndarray:
    """Draw coordinates from the stationary prior ``N(0, sigma^2/(1-phi^2) I)``.

    Returns an ``(N, d)`` configuration, or ``(size, N, d)`` when ``size`` is
    given.
    """
    shape = (N, d) if size is None else (size, N, d)
    return math.sqrt(params.stationary_variance) * rng.standard_normal(shape)


def propagate(prev: np.ndarray, mean_factor: float, sd: float, rng) -> np.ndarray:
    """One Gaussian AR step ``mean_factor * prev + sd * noise``."""
    noise = rng.standard_normal(prev.shape)
    noise *= sd
    noise += mean_factor * prev
    return noise


def transition_sample(params: StaticParams, prev: np.ndarray, rng) -> np.ndarray:
    """Sample ``U_t | U_{t-1}``; works for single configurations or batches."""
    return propagate(prev, params.phi, params.sigma, rng)


def log_transition_density(params: StaticParams, next_config, prev_config):
    """Sum over nodes of the d-variate Gaussian transition log-density.

    Leading batch axes are preserved: ``(M, N, d)`` inputs give ``(M,)``.
    """
    nxt = np.asarray(next_config, dtype=float)
    prev = np.asarray(prev_config, dtype=float)
    if nxt.shape != prev.shape:
        raise ValueError(f"shape mismatch {nxt.shape} vs {prev.shape}")
    n, d = nxt.shape[-2:]
    resid = nxt - params.phi * prev
    quad = np.einsum("...nk,...nk->...", resid, resid)
    return -0.5 * n * d * math.log(2.0 * math.pi * params.sigma**2) - 0.5 * quad / params.sigma**2


# -- observation model -------------------------------------------------------


def linear_predictor(params: StaticParams, config, i: int, j: int) -> float:
    if i == j:
        raise ValueError("linear predictor is undefined for self-ties")
    u = np.asarray(config, dtype=float)
    if params.link is Link.EUCLIDEAN:
        return params.alpha - float(np.linalg.norm(u[i] - u[j]))
    return params.alpha + float(u[i] @ u[j])


def linear_predictors(params: StaticParams, config, alpha=None, scale: float = 1.0) -> np.ndarray:
    """All pairwise linear predictors; works on ``(N, d)`` or ``(M, N, d)``.

    The diagonal is meaningless and left as computed. ``scale`` multiplies the
    coordinates before evaluation.
    """
    alpha = params.alpha if alpha is None else alpha
    u = scale * np.asarray(config, dtype=float)
    if params.link is Link.EUCLIDEAN:
        sq = np.einsum("...nk,...nk->...n", u, u)
        gram = u @ np.swapaxes(u, -1, -2)
        d2 = sq[..., :, None] + sq[..., None, :] - 2.0 * gram
        return alpha - np.sqrt(np.clip(d2, 0.0, None))
    return alpha + u @ np.swapaxes(u, -1, -2)


def edge_means(params: StaticParams, config, alpha=None) -> np.ndarray:
    """Edge probabilities (Bernoulli) or rates (Poisson), zero on the diagonal."""
    eta = linear_predictors(params, config, alpha=alpha)
    out = expit(eta) if params.likelihood is Likelihood.BERNOULLI else np.exp(eta)
    n = out.shape[-1]
    out[..., np.arange(n), np.arange(n)] = 0.0
    return out


def check_observation(obs, likelihood: Likelihood) -> np.ndarray:
    """Validate one adjacency matrix (or a ``(T, N, N)`` series)."""
    y = np.asarray(obs)
    if y.ndim < 2 or y.shape[-1] != y.shape[-2]:
        raise InputDomainError(f"adjacency must be square, got shape {y.shape}")
    if not np.all(np.isfinite(y)):
        raise InputDomainError("adjacency has non-finite entries")
    if np.any(y < 0) or np.any(y != np.round(y)):
        raise InputDomainError("adjacency entries must be non-negative integers")
    if Likelihood(likelihood) is Likelihood.BERNOULLI and np.any(y > 1):
        raise InputDomainError("Bernoulli likelihood requires binary adjacency")
    if not np.array_equal(y, np.swapaxes(y, -1, -2)):
        raise InputDomainError("adjacency must be symmetric")
    n = y.shape[-1]
    if np.any(y[..., np.arange(n), np.arange(n)] != 0):
        raise InputDomainError("self-ties are not allowed")
    return y


def log_factorial_constant(obs) -> float:
    """``sum_{i<j} log y_ij!`` for one count matrix."""
    y = np.asarray(obs, dtype=float)
    iu, ju = np.triu_indices(y.shape[-1], k=1)
    return float(gammaln(y[iu, ju] + 1.0).sum())


def batch_log_observation_density(params: StaticParams, particles, obs, scale: float = 1.0,
                                  alpha=None, log_fact=None) -> np.ndarray:
    """Observation log-density for each of ``M`` particles, shape ``(M,)``.

    ``scale`` evaluates the density at ``scale * particles``. ``log_fact`` may
    carry a precomputed Poisson factorial term.
    """
    X = np.ascontiguousarray(particles, dtype=np.float64)
    alpha = params.alpha if alpha is None else alpha
    out = kernels.obs_loglik(
        X, obs, float(alpha), float(scale), _LINK_CODE[params.link],
        _LIK_CODE[params.likelihood], kernels.get_num_threads(),
    )
    if params.likelihood is Likelihood.POISSON:
        out -= log_factorial_constant(obs) if log_fact is None else log_fact
    return out


def batch_log_observation_density_grad(params: StaticParams, particles, obs, log_fact=None):
    """Log-density and its unscaled alpha-derivative for each particle."""
    X = np.ascontiguousarray(particles, dtype=np.float64)
    out, grad = kernels.obs_loglik_grad(
        X, obs, float(params.alpha), 1.0, _LINK_CODE[params.link],
        _LIK_CODE[params.likelihood], kernels.get_num_threads(),
    )
    if params.likelihood is Likelihood.POISSON:
        out -= log_factorial_constant(obs) if log_fact is None else log_fact
    return out, grad


def log_observation_density(params: StaticParams, config, obs) -> float:
    """``log p(Y_t | U_t)`` summed over unordered pairs ``i < j``."""
    check_observation(obs, params.likelihood)
    config = np.asarray(config, dtype=float)
    return float(batch_log_observation_density(params, config[None], obs)[0])


# -- scenarios ---------------------------------------------------------------


@dataclass
class ScenarioSpec:
    """Data-generating scenario.

    ``S1`` simulates the model itself. ``S2`` pulls each node toward one of two
    group centres with strength ``q`` (first ``ceil(N/2)`` nodes form group 1).
    ``S3`` replaces ``alpha`` by a time-varying schedule, linear from 2 to -2
    unless ``alpha_schedule`` is given.
    """

    variant: str = "S1"
    N: int = 30
    T: int = 25
    d: int = 2
    params: StaticParams = field(default_factory=lambda: StaticParams(0.75, 0.4, 0.9))
    q: float = 0.25
    mu1: tuple = (2.0, 0.0)
    mu2: tuple = (-2.0, 0.0)
    alpha_schedule: object = None

    def __post_init__(self):
        self.variant = self.variant.upper()
        if self.variant not in ("S1", "S2", "S3"):
            raise ValueError(f"unknown scenario {self.variant!r}")
        if self.N < 2 or self.T < 1 or self.d < 1:
            raise ValueError("need N >= 2, T >= 1 and d >= 1")
        if self.variant == "S2":
            if not 0.0 < self.q < 1.0:
                raise ValueError(f"q must lie in (0, 1), got {self.q}")
            for mu in (self.mu1, self.mu2):
                if len(mu) != self.d:
                    raise ValueError("group centres must have length d")
        if self.variant == "S3" and self.alpha_schedule is not None:
            if len(self.alpha_schedule) != self.T:
                raise ValueError("alpha_schedule must have length T")

    def alphas(self) -> np.ndarray:
        """Per-time intercepts ``alpha_1..alpha_T``."""
        if self.variant != "S3":
            return np.full(self.T, self.params.alpha)
        if self.alpha_schedule is None:
            return np.linspace(2.0, -2.0, self.T)
        return np.asarray(self.alpha_schedule, dtype=float)

    def groups(self) -> np.ndarray:
        """Group label (0 or 1) per node; used by S2."""
        labels = np.ones(self.N, dtype=int)
        labels[: (self.N + 1) // 2] = 0
        return labels


def _sample_edges(means, likelihood: Likelihood, rng) -> np.ndarray:
    n = means.shape[-1]
    iu, ju = np.triu_indices(n, k=1)
    if likelihood is Likelihood.BERNOULLI:
        draws = (rng.random(iu.size) < means[iu, ju]).astype(np.int64)
    else:
        draws = rng.poisson(means[iu, ju]).astype(np.int64)
    y = np.zeros((n, n), dtype=np.int64)
    y[iu, ju] = draws
    y[ju, iu] = draws
    return y


def simulate_latent(spec: ScenarioSpec, rng) -> np.ndarray:
    """Latent path ``U_0..U_T`` with shape ``(T + 1, N, d)``."""
    p = spec.params
    U = np.empty((spec.T + 1, spec.N, spec.d))
    if spec.variant == "S2":
        centres = np.array([spec.mu1, spec.mu2], dtype=float)[spec.groups()]
        keep = 1.0 - spec.q
        # start from the stationary law of the group-centred AR process
        U[0] = centres + p.sigma / math.sqrt(1.0 - keep**2) * rng.standard_normal((spec.N, spec.d))
        for t in range(1, spec.T + 1):
            U[t] = keep * U[t - 1] + spec.q * centres + p.sigma * rng.standard_normal((spec.N, spec.d))
        return U
    U[0] = stationary_prior_sample(p, spec.N, spec.d, rng)
    for t in range(1, spec.T + 1):
        U[t] = transition_sample(p, U[t - 1], rng)
    return U


def scenario_means(spec: ScenarioSpec, latent) -> np.ndarray:
    """True edge probabilities/rates for ``t = 1..T``, shape ``(T, N, N)``."""
    alphas = spec.alphas()
    return np.stack([edge_means(spec.params, latent[t], alpha=alphas[t - 1])
                     for t in range(1, spec.T + 1)])


def simulate_scenario(spec: ScenarioSpec, rng):
    """Simulate a scenario.

    Returns ``(observations, latent)`` with observations ``(T, N, N)`` integer
    and latent ``(T + 1, N, d)`` including the initial configuration.
    """
    latent = simulate_latent(spec, rng)
    means = scenario_means(spec, latent)
    obs = np.stack([_sample_edges(means[t], spec.params.likelihood, rng) for t in range(spec.T)])
    return obs, latent
