"""Classical decompositions: truncated SVD/PCA, multiplicative-update NMF,
and PARAFAC by alternating least squares."""

from dataclasses import dataclass

import numpy as np

ALS_RIDGE = 1e-10  # guard against degenerate normal equations
NMF_EPS = 1e-12


@dataclass(frozen=True)
class SvdResult:
    """Top-k singular triplets with orthonormal factors and S descending."""

    u: np.ndarray  # M x k
    s: np.ndarray  # k, non-increasing, >= 0
    v: np.ndarray  # N x k

    def reconstruction(self):
        return (self.u * self.s) @ self.v.T


def _fix_signs(u, v):
    """Make each left singular vector's largest-magnitude entry positive."""
    flip = np.sign(u[np.abs(u).argmax(axis=0), np.arange(u.shape[1])])
    flip = np.where(flip == 0, 1.0, flip)
    return u * flip, v * flip


def truncated_svd(x, k):
    """Best rank-k approximation factors of a matrix (Eckart-Young)."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2:
        raise ValueError("truncated_svd expects a matrix")
    if not 1 <= k <= min(x.shape):
        raise ValueError(f"k={k} out of range for shape {x.shape}")
    u, s, vt = np.linalg.svd(x, full_matrices=False)
    u, v = _fix_signs(u[:, :k], vt[:k].T)
    return SvdResult(u=u, s=s[:k].copy(), v=v)


def pca(data, k):
    """Mean-centered top-k principal directions of samples x features data."""
    data = np.asarray(data, dtype=np.float64)
    if data.ndim != 2 or data.shape[0] < 2:
        raise ValueError("pca expects at least two samples")
    if not 1 <= k <= data.shape[1]:
        raise ValueError(f"k={k} out of range for {data.shape[1]} features")
    mean = data.mean(axis=0)
    res = truncated_svd(data - mean, k)
    return res.v, mean


def explained_variance_ratio(data, components):
    data = np.asarray(data, dtype=np.float64)
    centered = data - data.mean(axis=0)
    total = (centered**2).sum()
    proj = centered @ components
    return (proj**2).sum() / total


def nmf_multiplicative(x, k, iters=500, seed=0):
    """Lee-Seung multiplicative updates for the Frobenius objective.

    Returns (w, h, objective_history); the objective is non-increasing.
    """
    x = np.asarray(x, dtype=np.float64)
    if np.any(x < 0):
        raise ValueError("nmf requires a nonnegative matrix")
    if k < 1:
        raise ValueError("k must be >= 1")
    m, n = x.shape
    rng = np.random.default_rng(seed)
    scale = np.sqrt(max(x.mean(), NMF_EPS) / k)
    w = np.abs(rng.normal(size=(m, k))) * scale
    h = np.abs(rng.normal(size=(k, n))) * scale
    history = np.empty(iters)
    for it in range(iters):
        h *= (w.T @ x) / (w.T @ w @ h + NMF_EPS)
        w *= (x @ h.T) / (w @ (h @ h.T) + NMF_EPS)
        history[it] = np.linalg.norm(x - w @ h)
    return w, h, history


def _khatri_rao(mats):
    """Column-wise Khatri-Rao product of N_i x R matrices."""
    out = mats[0]
    for m in mats[1:]:
        out = (out[:, None, :] * m[None, :, :]).reshape(-1, m.shape[1])
    return out


def _unfold(t, mode):
    return np.moveaxis(t, mode, 0).reshape(t.shape[mode], -1)


def cp_reconstruct(factors, weights=None):
    """Dense tensor from CP factors (and optional per-component weights)."""
    k = len(factors)
    subs = [f"{chr(ord('a') + i)}r" for i in range(k)]
    out = "".join(chr(ord("a") + i) for i in range(k))
    args = list(factors)
    if weights is not None:
        args[0] = factors[0] * weights
    return np.einsum(",".join(subs) + "->" + out, *args)


def parafac_als(t, rank, iters=200, seed=0):
    """CP decomposition by alternating least squares over mode unfoldings.

    Returns (factors with unit-norm columns, weights, fit_history) where
    fit_history holds the Frobenius residual after each sweep.
    """
    t = np.asarray(t, dtype=np.float64)
    if rank < 1:
        raise ValueError("rank must be >= 1")
    k = t.ndim
    rng = np.random.default_rng(seed)
    factors = [rng.normal(size=(n, rank)) for n in t.shape]
    weights = np.ones(rank)
    history = np.empty(iters)
    eye = np.eye(rank)
    for it in range(iters):
        for mode in range(k):
            others = [factors[i] for i in range(k) if i != mode]
            # gram of the Khatri-Rao factor: elementwise product of grams
            gram = np.ones((rank, rank))
            for f in others:
                gram *= f.T @ f
            kr = _khatri_rao(others)
            rhs = _unfold(t, mode) @ kr
            factors[mode] = np.linalg.solve(gram + ALS_RIDGE * eye, rhs.T).T
        # fold scales into the weight vector after each sweep
        weights = np.ones(rank)
        for i, f in enumerate(factors):
            norms = np.linalg.norm(f, axis=0)
            norms = np.where(norms > 0, norms, 1.0)
            factors[i] = f / norms
            weights *= norms
        history[it] = np.linalg.norm(t - cp_reconstruct(factors, weights))
    return factors, weights, history
