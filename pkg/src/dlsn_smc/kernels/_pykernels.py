"""Pure numpy implementation of the per-particle likelihood kernels.

Mirrors the compiled module exactly in signature. Particles are processed in
chunks so the (chunk, pairs, d) difference array stays small.
"""

import numpy as np

_CHUNK_ELEMENTS = 2_000_000


def _chunks(M, n_pairs, d):
    step = max(1, _CHUNK_ELEMENTS // max(1, n_pairs * d))
    for start in range(0, M, step):
        yield slice(start, min(M, start + step))


def _predictor(X, iu, ju, alpha, scale, link):
    if link == 0:
        diff = X[:, iu, :] - X[:, ju, :]
        return alpha - scale * np.sqrt(np.einsum("mpk,mpk->mp", diff, diff))
    return alpha + scale * scale * np.einsum("mpk,mpk->mp", X[:, iu, :], X[:, ju, :])


def _evaluate(X, Y, alpha, scale, link, lik, with_grad):
    X = np.asarray(X, dtype=np.float64)
    Y = np.asarray(Y, dtype=np.float64)
    M, n, d = X.shape
    iu, ju = np.triu_indices(n, k=1)
    y = Y[iu, ju]
    out = np.empty(M)
    grad = np.empty(M) if with_grad else None
    for sl in _chunks(M, iu.size, d):
        eta = _predictor(X[sl], iu, ju, alpha, scale, link)
        if lik == 0:
            sp = np.logaddexp(0.0, eta)
            out[sl] = (y * eta - sp).sum(axis=1)
            if with_grad:
                grad[sl] = (y - np.exp(eta - sp)).sum(axis=1)
        else:
            rate = np.exp(eta)
            out[sl] = (y * eta - rate).sum(axis=1)
            if with_grad:
                grad[sl] = (y - rate).sum(axis=1)
    return out, grad


def obs_loglik(X, Y, alpha, scale=1.0, link=0, lik=0, nthreads=1):
    """Log observation density (up to the Poisson factorial term) per particle."""
    return _evaluate(X, Y, alpha, scale, link, lik, False)[0]


def obs_loglik_grad(X, Y, alpha, scale=1.0, link=0, lik=0, nthreads=1):
    """As :func:`obs_loglik`, also returning the unscaled alpha-derivative."""
    return _evaluate(X, Y, alpha, scale, link, lik, True)
