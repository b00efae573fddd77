"""Evaluation metrics for fitted network models."""

from __future__ import annotations

import numpy as np

from . import model as dlsn
from .smc import ParticleEnsemble, normalize_log_weights


class UndefinedAUCError(ValueError):
    """ROC analysis needs both positive and negative labels."""


def upper_pairs(mat) -> np.ndarray:
    """Entries ``i < j`` of the trailing ``(N, N)`` axes, flattened in row-major pair order."""
    mat = np.asarray(mat)
    iu, ju = np.triu_indices(mat.shape[-1], k=1)
    return mat[..., iu, ju]


def mse_probability(truth, estimate, t=None) -> float:
    """Mean over pairs ``i < j`` of ``(p_ij - p_hat_ij)^2``.

    ``truth`` and ``estimate`` are single ``(N, N)`` matrices, or ``(T, N, N)``
    series indexed by the 1-based time ``t``.
    """
    truth = np.asarray(truth, dtype=float)
    estimate = np.asarray(estimate, dtype=float)
    if truth.shape != estimate.shape:
        raise ValueError(f"shape mismatch {truth.shape} vs {estimate.shape}")
    if t is not None:
        truth, estimate = truth[t - 1], estimate[t - 1]
    diff = upper_pairs(truth) - upper_pairs(estimate)
    return float(np.mean(diff * diff))


def mse_series(truth, estimate) -> np.ndarray:
    """Per-time MSE in probability for ``(T, N, N)`` series."""
    diff = upper_pairs(np.asarray(truth, float)) - upper_pairs(np.asarray(estimate, float))
    return np.mean(diff * diff, axis=-1)


def roc_curve(labels, scores):
    """ROC staircase and trapezoidal AUC.

    Thresholds run over the distinct scores from high to low, with tied
    scores entering together. Returns ``(fpr, tpr, thresholds, auc)``; the
    curve starts at ``(0, 0)`` (threshold ``+inf``) and ends at ``(1, 1)``.
    """
    y = np.asarray(labels).ravel()
    s = np.asarray(scores, dtype=float).ravel()
    if y.shape != s.shape:
        raise ValueError("labels and scores must have the same length")
    pos = y > 0
    n_pos = int(pos.sum())
    n_neg = y.size - n_pos
    if n_pos == 0 or n_neg == 0:
        raise UndefinedAUCError("AUC is undefined unless both classes are present")
    order = np.argsort(-s, kind="mergesort")
    s_sorted = s[order]
    tp = np.cumsum(pos[order])
    fp = np.cumsum(~pos[order])
    # last index of each block of tied scores
    last = np.r_[np.nonzero(np.diff(s_sorted))[0], s.size - 1]
    tpr = np.r_[0.0, tp[last] / n_pos]
    fpr = np.r_[0.0, fp[last] / n_neg]
    thresholds = np.r_[np.inf, s_sorted[last]]
    auc = float(np.sum(np.diff(fpr) * (tpr[1:] + tpr[:-1]) / 2.0))
    return fpr, tpr, thresholds, auc


def auc_score(labels, scores) -> float:
    return roc_curve(labels, scores)[3]


def ensemble_edge_means(params: dlsn.StaticParams, ensemble: ParticleEnsemble, alpha=None) -> np.ndarray:
    """Weighted particle average of the edge probabilities (or rates), ``(N, N)``."""
    w, _ = normalize_log_weights(ensemble.log_weights)
    X = np.asarray(ensemble.particles)
    keep = w > 0
    means = dlsn.edge_means(params, X[keep], alpha=alpha)
    return np.tensordot(w[keep], means, axes=1)


def posterior_mean_probabilities(params, snapshots, alphas=None) -> np.ndarray:
    """Stack of filtered edge-probability estimates, one per snapshot.

    ``params`` may be a single parameter set or a list aligned with the
    snapshots (online fits).
    """
    out = []
    for k, snap in enumerate(snapshots):
        p = params[k] if isinstance(params, (list, tuple)) else params
        a = None if alphas is None else alphas[k]
        out.append(ensemble_edge_means(p, snap, alpha=a))
    return np.stack(out)


def predict_final(ensemble: ParticleEnsemble, params: dlsn.StaticParams, rng, R_rep: int = 1) -> np.ndarray:
    """Predictive edge probabilities (or rates) one step after ``ensemble``.

    Every particle is propagated ``R_rep`` times through the transition and
    the link means are averaged under the particle weights.
    """
    w, _ = normalize_log_weights(ensemble.log_weights)
    X = np.asarray(ensemble.particles)
    total = np.zeros(X.shape[1:2] * 2)
    for _ in range(R_rep):
        nxt = dlsn.transition_sample(params, X, rng)
        total += np.tensordot(w, dlsn.edge_means(params, nxt), axes=1)
    return total / R_rep


def average_absolute_error(y_T, predictive, R_rep: int = 5000, rng=None,
                           likelihood=dlsn.Likelihood.BERNOULLI) -> np.ndarray:
    """Per-pair mean of ``|y_ij - y_hat_ij|`` over ``R_rep`` simulated networks.

    Draws are Bernoulli(``predictive``) or Poisson(``predictive``). Returns an
    array over pairs ``i < j`` in row-major order.
    """
    if R_rep < 1:
        raise ValueError("R_rep must be >= 1")
    rng = np.random.default_rng() if rng is None else rng
    y = upper_pairs(np.asarray(y_T, dtype=float))
    p = upper_pairs(np.asarray(predictive, dtype=float))
    if dlsn.Likelihood(likelihood) is dlsn.Likelihood.BERNOULLI:
        draws = rng.random((R_rep, p.size)) < p
    else:
        draws = rng.poisson(p, size=(R_rep, p.size))
    return np.mean(np.abs(y - draws), axis=0)


def constant_rate_baseline(observations) -> float:
    """Mean edge value over pairs and times, the single-rate model's MLE."""
    obs = np.asarray(observations, dtype=float)
    return float(upper_pairs(obs).mean())
