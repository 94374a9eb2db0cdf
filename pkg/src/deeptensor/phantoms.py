"""Seeded synthetic phantoms standing in for the real datasets."""

import numpy as np

from .baselines import cp_reconstruct


def _piecewise_columns(rng, n, count, min_pieces=3, max_pieces=8):
    """Random piecewise-constant columns, emulating visual signals."""
    cols = np.empty((n, count))
    for c in range(count):
        pieces = rng.integers(min_pieces, max_pieces + 1)
        edges = np.sort(rng.choice(np.arange(1, n), size=pieces - 1, replace=False))
        bounds = np.concatenate(([0], edges, [n]))
        for lo, hi in zip(bounds[:-1], bounds[1:]):
            cols[lo:hi, c] = rng.uniform(0.0, 1.0)
    return cols


def _to_unit(x):
    lo, hi = x.min(), x.max()
    return (x - lo) / (hi - lo) if hi > lo else np.zeros_like(x)


def make_phantom(kind, extents, rank=1, seed=0):
    """Synthetic data with known structure.

    Returns (tensor, factors) where factors is the generating factor list
    (None for kinds without an explicit factorization).  All kinds are
    normalized to [0, 1] except gaussian_lowrank, which is left at its
    natural scale.
    """
    extents = tuple(int(n) for n in extents)
    rng = np.random.default_rng(seed)
    if kind in ("gaussian_lowrank", "piecewise_lowrank") and rank > min(extents):
        raise ValueError(f"rank {rank} exceeds the smallest extent of {extents}")

    if kind == "gaussian_lowrank":
        m, n = extents
        a = rng.normal(size=(m, rank))
        b = rng.normal(size=(n, rank))
        return a @ b.T, [a, b]

    if kind == "piecewise_lowrank":
        m, n = extents
        a = _piecewise_columns(rng, m, rank)
        b = _piecewise_columns(rng, n, rank)
        x = a @ b.T
        # scale only: an additive min shift would introduce an extra
        # rank-one component and break the exact numerical rank
        peak = x.max() if x.max() > 0 else 1.0
        return x / peak, [a, b / peak]

    if kind == "moving_square_video":
        n1, n2, t = extents
        side = max(2, min(n1, n2) // 4)
        video = np.zeros(extents)
        # diagonal sweep with wrap-free clamping; every frame differs
        for f in range(t):
            i = (f * max(1, (n1 - side) // max(t - 1, 1))) % (n1 - side + 1)
            j = (f * max(1, (n2 - side) // max(t - 1, 1))) % (n2 - side + 1)
            video[i : i + side, j : j + side, f] = 1.0
            video[:, :, f] += 0.1 * np.add.outer(
                np.linspace(0, 1, n1), np.linspace(0, 1, n2)
            )
        return _to_unit(video), None

    if kind == "shepp_like_volume":
        n1, n2, s = extents
        ii, jj = np.meshgrid(np.linspace(-1, 1, n1), np.linspace(-1, 1, n2), indexing="ij")
        vol = np.zeros(extents)
        for z in range(s):
            zf = z / max(s - 1, 1)
            vol[:, :, z] += 1.0 * (((ii / 0.75) ** 2 + (jj / (0.9 - 0.2 * zf)) ** 2) < 1)
            vol[:, :, z] += 0.6 * ((((ii + 0.25) / 0.25) ** 2 + (jj / 0.3) ** 2) < 1)
            vol[:, :, z] += 0.4 * (
                (((ii - 0.3 + 0.2 * zf) / 0.2) ** 2 + ((jj - 0.2) / 0.25) ** 2) < 1
            )
        return _to_unit(vol), None

    if kind == "faces_like_tensor":
        # smooth nonnegative CP structure, like a stack of face-ish images
        factors = []
        for n in extents:
            grid = np.linspace(0, 1, n)[:, None]
            centers = rng.uniform(0, 1, size=rank)[None, :]
            widths = rng.uniform(0.05, 0.3, size=rank)[None, :]
            factors.append(np.exp(-((grid - centers) ** 2) / (2 * widths**2)))
        return _to_unit(cp_reconstruct(factors)), factors

    raise ValueError(f"unknown phantom kind {kind!r}")
