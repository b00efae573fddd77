"""Static-parameter estimation by stochastic gradient ascent on the log-likelihood.

Parameters are updated in unconstrained coordinates ``(alpha, log sigma,
logit phi)``, so iterates always satisfy ``sigma > 0`` and ``0 < phi < 1``.
Gradient vectors are ordered ``(alpha, sigma, phi)`` in constrained space and
``(alpha, sigma_tilde, phi_tilde)`` in unconstrained space.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
from scipy.sparse.csgraph import shortest_path
from scipy.special import expit, logit

from . import model as dlsn
from .girf import GirfConfig, GirfFilter
from .smc import FilterTrace

PARAM_NAMES = ("alpha", "sigma", "phi")
# keep logit(phi) finite and phi strictly inside (0, 1) in double precision
_PHI_TILDE_MAX = 36.0


class EstimationError(RuntimeError):
    """Gradient ascent produced a non-finite score; ``trace`` holds the iterates so far."""

    def __init__(self, message, trace=None):
        super().__init__(message)
        self.trace = trace


class DegenerateInputError(ValueError):
    """Observations carry no usable structure for initialisation."""


@dataclass(frozen=True)
class UnconstrainedParams:
    alpha: float
    sigma_tilde: float
    phi_tilde: float

    def as_array(self) -> np.ndarray:
        return np.array([self.alpha, self.sigma_tilde, self.phi_tilde])


def reparameterize(params: dlsn.StaticParams) -> UnconstrainedParams:
    """``sigma_tilde = log sigma``, ``phi_tilde = log(phi / (1 - phi))``."""
    return UnconstrainedParams(params.alpha, math.log(params.sigma), float(logit(params.phi)))


def constrain(u, link=dlsn.Link.EUCLIDEAN, likelihood=dlsn.Likelihood.BERNOULLI) -> dlsn.StaticParams:
    """Inverse of :func:`reparameterize`; accepts the dataclass or a length-3 array."""
    vals = u.as_array() if isinstance(u, UnconstrainedParams) else np.asarray(u, dtype=float)
    if vals.shape != (3,) or not np.all(np.isfinite(vals)):
        raise ValueError(f"unconstrained parameters must be three finite reals, got {vals}")
    alpha, s_t, p_t = (float(v) for v in vals)
    p_t = min(max(p_t, -_PHI_TILDE_MAX), _PHI_TILDE_MAX)
    return dlsn.StaticParams(alpha, math.exp(s_t), float(expit(p_t)), link=link, likelihood=likelihood)


def _like(params, u):
    return constrain(u, params.link, params.likelihood)


# -- gradients ---------------------------------------------------------------


def chain_rule(params: dlsn.StaticParams, grad) -> np.ndarray:
    """Map ``(d/dalpha, d/dsigma, d/dphi)`` to unconstrained coordinates (last axis)."""
    g = np.array(grad, dtype=float, copy=True)
    g[..., 1] *= params.sigma
    g[..., 2] *= params.phi * (1.0 - params.phi)
    return g


def batch_grad_log_obs(params, particles, obs) -> np.ndarray:
    """Unscaled ``d/dalpha log p(Y | U)`` per particle: ``sum_{i<j} (y - mean)``."""
    _, dalpha = dlsn.batch_log_observation_density_grad(params, particles, obs)
    return dalpha


def batch_grad_log_transition(params, nxt, prev):
    """Unscaled ``(d/dsigma, d/dphi)`` of the transition log-density, per particle."""
    nxt = np.asarray(nxt, dtype=float)
    prev = np.asarray(prev, dtype=float)
    n, d = nxt.shape[-2:]
    resid = nxt - params.phi * prev
    quad = np.einsum("...nk,...nk->...", resid, resid)
    cross = np.einsum("...nk,...nk->...", prev, resid)
    sig = params.sigma
    return -n * d / sig + quad / sig**3, cross / sig**2


def grad_log_obs(params, config, obs, scaled: bool = True) -> np.ndarray:
    """Gradient of ``log p(Y_t | U_t)`` in ``(alpha, sigma, phi)``; only alpha is nonzero."""
    dlsn.check_observation(obs, params.likelihood)
    config = np.asarray(config, dtype=float)
    n, d = config.shape
    g = np.array([batch_grad_log_obs(params, config[None], obs)[0], 0.0, 0.0])
    return g / (n * d) if scaled else g


def grad_log_transition(params, next_config, prev_config, scaled: bool = True) -> np.ndarray:
    """Gradient of ``log p(U_t | U_{t-1})`` in ``(alpha, sigma, phi)``; alpha is zero."""
    nxt = np.asarray(next_config, dtype=float)
    n, d = nxt.shape
    dsig, dphi = batch_grad_log_transition(params, nxt, prev_config)
    g = np.array([0.0, float(dsig), float(dphi)])
    return g / (n * d) if scaled else g


class DLSNGradient:
    """Per-particle complete-data gradient in unconstrained coordinates, scaled by ``1/(Nd)``."""

    def __init__(self, observations):
        self.obs = np.asarray(observations)

    def __call__(self, t, particles, prev_particles, params) -> np.ndarray:
        n, d = particles.shape[-2:]
        g = np.empty((len(particles), 3))
        g[:, 0] = batch_grad_log_obs(params, particles, self.obs[t - 1])
        g[:, 1], g[:, 2] = batch_grad_log_transition(params, particles, prev_particles)
        g = chain_rule(params, g)
        g /= n * d
        return g


# -- score recursion ---------------------------------------------------------


class RaoBlackwellisedScore:
    """Particle approximation of the score with per-particle mean statistics.

    Use an instance as the filter's ``score_hook``. At each observation time,
    ``m_t = lam * m_{t-1}[ancestor] + (1 - lam) * s_{t-1} + grad`` and
    ``s_t = sum_i w_i m_t``.

    ``grad_fn(t, particles, ancestor_particles, params)`` returns an ``(M, p)``
    array of complete-data gradients.
    """

    def __init__(self, grad_fn: Callable, dim: int = 3, lam: float = 0.95, params=None):
        if not 0.0 < lam <= 1.0:
            raise ValueError(f"lambda must lie in (0, 1], got {lam}")
        self.grad_fn = grad_fn
        self.lam = lam
        self.params = params
        self.dim = dim
        self.m: Optional[np.ndarray] = None
        self.score = np.zeros(dim)
        self.history = [self.score.copy()]

    def __call__(self, t, particles, ancestors, prev_particles, weights, params=None):
        params = self.params if params is None else params
        g = self.grad_fn(t, particles, prev_particles[ancestors], params)
        if self.m is None:
            m = g + (1.0 - self.lam) * self.score
        else:
            m = self.lam * self.m[ancestors] + (1.0 - self.lam) * self.score + g
        self.m = m
        self.score = np.asarray(weights) @ m
        self.history.append(self.score.copy())

    @property
    def stats(self) -> Optional[np.ndarray]:
        return self.m


# -- ascent ------------------------------------------------------------------


@dataclass
class AscentSchedule:
    """Step sizes ``gamma_k = c * k^(-a)``.

    With ``c=None`` the scale is fixed at the first call so that the first
    step ``gamma_1 * direction`` has Euclidean norm ``first_step``. Later
    steps are then capped at length ``first_step * k^(-a)``, which keeps a
    direction much larger than the first one from throwing the iterate far
    off. An explicit ``c`` gives the plain schedule.
    """

    a: float = 0.7
    c: Optional[float] = None
    first_step: float = 0.3
    _auto: bool = field(init=False, repr=False)

    def __post_init__(self):
        if not 0.5 < self.a < 1.0:
            raise ValueError(f"exponent must lie in (0.5, 1), got {self.a}")
        if self.c is not None and self.c < 0:
            raise ValueError("scale c must be nonnegative")
        self._auto = self.c is None

    def gamma(self, k: int, direction=None) -> float:
        if k < 1:
            raise ValueError("iterations are counted from 1")
        norm = 0.0 if direction is None else float(np.linalg.norm(direction))
        usable = norm > 0 and math.isfinite(norm)
        if self.c is None:
            self.c = self.first_step / norm if usable else self.first_step
        c = self.c
        if self._auto and usable:
            c = min(c, self.first_step / norm)
        return c * k ** (-self.a)


def gradient_ascent(score_fn: Callable, theta0, schedule: AscentSchedule, n_iters: int):
    """Generic iteration ``theta_k = theta_{k-1} + gamma_k score_fn(theta_{k-1})``.

    Returns the ``(n_iters + 1, p)`` array of iterates including ``theta0``.
    """
    theta = np.array(theta0, dtype=float)
    out = [theta.copy()]
    for k in range(1, n_iters + 1):
        g = np.asarray(score_fn(theta), dtype=float)
        if not np.all(np.isfinite(g)):
            raise EstimationError(f"non-finite score at iteration {k}", trace=np.array(out))
        theta = theta + schedule.gamma(k, g) * g
        out.append(theta.copy())
    return np.array(out)


@dataclass
class FitResult:
    """Parameter iterates with per-row log-likelihood estimates.

    Row ``k`` of ``params`` is the k-th iterate (offline) or the parameters
    in force for observation ``k + 1`` (online).
    """

    params: list
    log_likelihoods: list
    traces: list = field(default_factory=list)
    scores: list = field(default_factory=list)
    snapshots: list = field(default_factory=list)
    mode: str = "offline"

    @property
    def final(self) -> dlsn.StaticParams:
        return self.params[-1]

    def as_array(self) -> np.ndarray:
        return np.array([p.as_array() for p in self.params])


def score_run(params, observations, girf_cfg: GirfConfig, rng, lam: float = 0.95, d: int = 2,
              keep_snapshots: bool = False):
    """One GIRF pass returning ``(s_T, filter result)`` in unconstrained coordinates."""
    score = RaoBlackwellisedScore(DLSNGradient(observations), lam=lam, params=params)
    filt = GirfFilter(observations, girf_cfg, rng, params, score_hook=score,
                      keep_snapshots=keep_snapshots, d=d)
    result = filt.run(params)
    return score.score, result


def fit_offline(observations, init: dlsn.StaticParams, girf_cfg: GirfConfig,
                schedule: AscentSchedule, n_iters: int, rng, lam: float = 0.95, d: int = 2,
                keep_last_snapshots: bool = False) -> FitResult:
    """Offline ascent: one full GIRF run per iteration, ``theta_k = theta_{k-1} + gamma_k s_T``.

    ``params[k-1]`` is ``theta_k`` and ``log_likelihoods[k-1]`` is the estimate
    from the run at ``theta_{k-1}``.
    """
    if n_iters < 1:
        raise ValueError("n_iters must be >= 1")
    theta = reparameterize(init).as_array()
    current = init
    res = FitResult([], [], mode="offline")
    for k in range(1, n_iters + 1):
        keep = keep_last_snapshots and k == n_iters
        s_T, run = score_run(current, observations, girf_cfg, rng, lam=lam, d=d, keep_snapshots=keep)
        if not np.all(np.isfinite(s_T)):
            raise EstimationError(f"non-finite score at iteration {k}", trace=res)
        theta = theta + schedule.gamma(k, s_T) * s_T
        current = _like(init, theta)
        res.params.append(current)
        res.log_likelihoods.append(run.log_likelihood)
        res.traces.append(run.trace)
        res.scores.append(s_T)
        if keep:
            res.snapshots = run.snapshots
    return res


def fit_online(observations, init: dlsn.StaticParams, girf_cfg: GirfConfig,
               schedule: AscentSchedule, rng, lam: float = 0.95, d: int = 2,
               keep_snapshots: bool = True) -> FitResult:
    """Online ascent within a single GIRF pass.

    Observation ``t`` is filtered under ``theta_{t-1}``; afterwards
    ``theta_t = theta_{t-1} + gamma_t (s_t - s_{t-1})``. Updates are made for
    ``t = 1..T-1`` since a step after the last observation would not be used,
    so ``params`` has length ``T`` and holds ``theta_0..theta_{T-1}``.
    ``log_likelihoods[t-1]`` is the summed increment of interval ``t``.
    """
    obs = np.asarray(observations)
    if len(obs) < 2:
        raise ValueError("online estimation needs T >= 2")
    current = init
    theta = reparameterize(init).as_array()
    score = RaoBlackwellisedScore(DLSNGradient(obs), lam=lam, params=init)
    filt = GirfFilter(obs, girf_cfg, rng, init, score_hook=score, keep_snapshots=keep_snapshots, d=d)
    res = FitResult([init], [], mode="online")
    done = 0
    for t in range(1, len(obs) + 1):
        filt.advance(current)
        incs = filt.trace.increments()
        res.log_likelihoods.append(float(incs[done:].sum()))
        done = len(incs)
        diff = score.history[-1] - score.history[-2]
        res.scores.append(score.history[-1])
        if not np.all(np.isfinite(diff)):
            raise EstimationError(f"non-finite score at time {t}", trace=res)
        if t < len(obs):
            theta = theta + schedule.gamma(t, diff) * diff
            current = _like(init, theta)
            res.params.append(current)
    res.traces.append(filt.trace)
    res.snapshots = filt.snapshots
    return res


# -- initialisation ----------------------------------------------------------


def graph_distances(adjacency, gamma: float = 1.0) -> np.ndarray:
    """Shortest-path hop counts; unreachable pairs get the largest finite distance plus ``gamma``."""
    A = (np.asarray(adjacency) > 0).astype(float)
    D = shortest_path(A, method="D", directed=False, unweighted=True)
    off = ~np.eye(len(D), dtype=bool)
    finite = np.isfinite(D) & off
    if not finite.any():
        raise DegenerateInputError("graph has no edges: every distance is infinite")
    D[~np.isfinite(D)] = D[finite].max() + gamma
    return D


def classical_mds(D, d: int) -> np.ndarray:
    """Classical scaling of a distance matrix to ``d`` dimensions (eigenvalues clipped at zero)."""
    D = np.asarray(D, dtype=float)
    n = len(D)
    J = np.eye(n) - np.full((n, n), 1.0 / n)
    Bm = -0.5 * J @ (D**2) @ J
    vals, vecs = np.linalg.eigh(Bm)
    order = np.argsort(vals)[::-1][:d]
    vals = np.clip(vals[order], 0.0, None)
    return vecs[:, order] * np.sqrt(vals)


def initial_sigma(Y1, Y2, d: int, gamma: float = 1.0, floor: float = 0.01) -> float:
    """Average over the first two networks of the mean absolute MDS coordinate."""
    sig = []
    for Y in (Y1, Y2):
        coords = classical_mds(graph_distances(Y, gamma), d)
        sig.append(max(float(np.mean(np.abs(coords))), floor))
    return 0.5 * (sig[0] + sig[1])


def simulated_density(alphas, sigma, phi, N, T, d, n_rep, rng, link=dlsn.Link.EUCLIDEAN,
                      likelihood=dlsn.Likelihood.BERNOULLI) -> np.ndarray:
    """Expected edge density (mean rate for Poisson) of simulated networks for each alpha.

    Latent paths are shared across the alpha grid. Edge indicators are
    averaged analytically (their conditional means) rather than sampled.
    """
    params = dlsn.StaticParams(0.0, sigma, phi, link=link, likelihood=likelihood)
    X = dlsn.stationary_prior_sample(params, N, d, rng, size=n_rep)
    iu, ju = np.triu_indices(N, k=1)
    preds = []
    for _ in range(T):
        X = dlsn.transition_sample(params, X, rng)
        if link is dlsn.Link.EUCLIDEAN:
            h = -np.linalg.norm(X[:, iu] - X[:, ju], axis=-1)
        else:
            h = np.einsum("rpk,rpk->rp", X[:, iu], X[:, ju])
        preds.append(h.ravel())
    h = np.concatenate(preds)
    link_fn = expit if likelihood is dlsn.Likelihood.BERNOULLI else np.exp
    return np.array([float(np.mean(link_fn(a + h))) for a in np.asarray(alphas, dtype=float)])


def observed_density(observations) -> float:
    obs = np.asarray(observations, dtype=float)
    T, N = obs.shape[:2]
    iu, ju = np.triu_indices(N, k=1)
    return float(obs[:, iu, ju].sum() / (T * len(iu)))


def initialize_params(observations, d: int = 2, rng=None, link=dlsn.Link.EUCLIDEAN,
                      likelihood=dlsn.Likelihood.BERNOULLI, grid=None, n_rep: int = 20,
                      gamma: float = 1.0, phi: float = 0.8) -> dlsn.StaticParams:
    """Starting values: sigma by graph-distance MDS, phi = 0.8, alpha by density matching."""
    obs = np.asarray(observations)
    if obs.ndim != 3 or len(obs) < 2:
        raise ValueError("initialisation needs at least two observed networks")
    rng = np.random.default_rng(0) if rng is None else rng
    sigma = initial_sigma(obs[0], obs[1], d, gamma)
    grid = np.linspace(-3.0, 3.0, 41) if grid is None else np.asarray(grid, dtype=float)
    T, N = obs.shape[:2]
    dens = simulated_density(grid, sigma, phi, N, T, d, n_rep, rng, dlsn.Link(link), dlsn.Likelihood(likelihood))
    err = np.abs(dens - observed_density(obs))
    best = np.lexsort((np.abs(grid), err))[0]
    return dlsn.StaticParams(float(grid[best]), sigma, phi, link=link, likelihood=likelihood)
