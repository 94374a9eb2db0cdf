"""Degradation models and differentiable linear measurement operators."""

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from . import autograd as ag
from .autograd import Tensor, _accum, _node


@dataclass(frozen=True)
class NoiseSpec:
    """Seeded degradation: gaussian(sigma), poisson(lam_max, readout),
    rician(sigma) or salt_pepper(fraction)."""

    kind: str
    seed: int = 0
    sigma: float = 0.1
    lam_max: float = 1000.0
    readout: float = 0.0
    fraction: float = 0.1

    def __post_init__(self):
        if self.kind not in ("gaussian", "poisson", "rician", "salt_pepper"):
            raise ValueError(f"unknown noise kind {self.kind!r}")
        if self.sigma < 0 or self.lam_max < 0 or not 0 <= self.fraction <= 1:
            raise ValueError("noise parameters out of range")


def degrade(x, spec):
    """Apply the degradation to a clean array; bitwise reproducible from seed."""
    x = np.asarray(x, dtype=np.float64)
    rng = np.random.default_rng(spec.seed)
    if spec.kind == "gaussian":
        return x + rng.normal(0.0, spec.sigma, size=x.shape) if spec.sigma > 0 else x.copy()
    if spec.kind == "poisson":
        if np.any(x < 0):
            raise ValueError("poisson degradation requires nonnegative input")
        counts = rng.poisson(spec.lam_max * x).astype(np.float64)
        if spec.readout > 0:
            counts += rng.normal(0.0, spec.readout, size=x.shape)
        return counts / spec.lam_max
    if spec.kind == "rician":
        if spec.sigma == 0:
            return np.abs(x)
        a = x + rng.normal(0.0, spec.sigma, size=x.shape)
        b = rng.normal(0.0, spec.sigma, size=x.shape)
        return np.sqrt(a * a + b * b)
    # salt_pepper: positions without replacement, value 0/1 per position
    out = x.copy()
    n = int(round(spec.fraction * x.size))
    if n:
        idx = rng.choice(x.size, size=n, replace=False)
        out.flat[idx] = rng.integers(0, 2, size=n).astype(np.float64)
    return out


# ---------------------------------------------------------------------------
# coded exposure


@dataclass(frozen=True)
class CodedMask:
    """Binary [N1, N2, T] mask with exactly one active frame per pixel."""

    data: np.ndarray
    seed: int

    def __post_init__(self):
        sums = self.data.sum(axis=-1)
        if not np.array_equal(sums, np.ones_like(sums)):
            raise ValueError("coded mask must select exactly one frame per pixel")


def make_coded_mask(extents, frames, seed):
    if frames < 1:
        raise ValueError("need at least one frame")
    rng = np.random.default_rng(seed)
    pick = rng.integers(0, frames, size=tuple(extents))
    mask = np.zeros(tuple(extents) + (frames,))
    grid = np.ix_(*[np.arange(n) for n in extents])
    mask[grid + (pick,)] = 1.0
    return CodedMask(mask, seed)


def apply_mask(video, mask):
    """Collapse a video [N1, N2, T] to one coded image [N1, N2]."""
    m = mask.data if isinstance(mask, CodedMask) else mask
    if isinstance(video, Tensor):
        if video.shape != m.shape:
            raise ag.ShapeMismatchError(
                f"video {video.shape} does not match mask {m.shape}"
            )
        out = (video.data * m).sum(axis=-1)

        def bwd(g):
            _accum(video, g[..., None] * m)

        return _node(out, (video,), bwd)
    return (np.asarray(video) * m).sum(axis=-1)


# ---------------------------------------------------------------------------
# parallel-beam Radon


@dataclass
class ProjectionGeometry:
    """Parallel-beam geometry for square slices of extent image_size."""

    angles: tuple
    image_size: int
    bins: int = 0

    SUBSAMPLE = 2  # subpixel splits per axis when building the system matrix

    def __post_init__(self):
        self.angles = tuple(float(a) for a in self.angles)
        if not self.angles:
            raise ValueError("need at least one projection angle")
        if self.bins == 0:
            # detector must cover every subpixel center: the farthest one
            # projects to ((n-1)/2 + (0.5 - 0.5/s)) * sqrt(2) off center
            n, s = self.image_size, self.SUBSAMPLE
            reach = ((n - 1) / 2.0 + 0.5 - 0.5 / s) * np.sqrt(2.0)
            self.bins = max(
                int(np.ceil(np.sqrt(2.0) * n)), int(2.0 * reach + 1.0) + 1
            )
        if self.bins < int(np.ceil(np.sqrt(2.0) * self.image_size)):
            raise ValueError("detector bins must cover the image diagonal")
        self._matrix = None

    def matrix(self):
        """Sparse (angles*bins, N*N) projection matrix, built once.

        Pixel-driven with subpixel splitting: each subpixel's center is
        projected onto the detector axis and its mass shared linearly
        between the two nearest bins, so column sums are exactly 1 per
        angle (mass preservation) and the operator is exactly linear.
        """
        if self._matrix is not None:
            return self._matrix
        n, nb, s = self.image_size, self.bins, self.SUBSAMPLE
        c = (n - 1) / 2.0
        offs = (np.arange(s) + 0.5) / s - 0.5
        ii, jj = np.meshgrid(np.arange(n), np.arange(n), indexing="ij")
        cols = (ii * n + jj).ravel()
        rows_all, cols_all, vals_all = [], [], []
        for a, theta in enumerate(self.angles):
            ct, st = np.cos(theta), np.sin(theta)
            for di in offs:
                for dj in offs:
                    t = (ii - c + di) * ct + (jj - c + dj) * st + (nb - 1) / 2.0
                    b0 = np.floor(t).astype(np.intp)
                    w1 = (t - b0).ravel()
                    b0 = b0.ravel()
                    if b0.min() < 0 or b0.max() + 1 >= nb:
                        raise ValueError("detector bins do not cover all projections")
                    base = a * nb
                    rows_all.append(base + b0)
                    rows_all.append(base + b0 + 1)
                    cols_all.append(cols)
                    cols_all.append(cols)
                    vals_all.append((1.0 - w1) / (s * s))
                    vals_all.append(w1 / (s * s))
        mat = sp.coo_matrix(
            (np.concatenate(vals_all), (np.concatenate(rows_all), np.concatenate(cols_all))),
            shape=(len(self.angles) * nb, n * n),
        ).tocsr()
        self._matrix = mat
        return mat


def radon_project(image, geom):
    """Sinogram [angles, bins] of a square slice; differentiable for Tensors."""
    mat = geom.matrix()
    a, nb, n = len(geom.angles), geom.bins, geom.image_size
    if isinstance(image, Tensor):
        if image.shape != (n, n):
            raise ag.ShapeMismatchError(f"slice {image.shape} does not match geometry {n}")
        out = (mat @ image.data.ravel()).reshape(a, nb)

        def bwd(g):
            _accum(image, (mat.T @ g.ravel()).reshape(n, n))

        return _node(out, (image,), bwd)
    return (mat @ np.asarray(image, dtype=np.float64).ravel()).reshape(a, nb)


# ---------------------------------------------------------------------------
# operators for inverse problems


class IdentityOperator:
    """Pass-through forward model."""

    def forward(self, x):
        return x

    def out_shape(self, in_shape):
        return tuple(in_shape)


class CodedExposureOperator:
    """Video [N1, N2, T] -> single coded image [N1, N2]."""

    def __init__(self, mask):
        self.mask = mask

    def forward(self, video):
        return apply_mask(video, self.mask)

    def out_shape(self, in_shape):
        return tuple(in_shape[:-1])


class RadonOperator:
    """Volume [N, N, S] -> per-slice sinograms [angles, bins, S]."""

    def __init__(self, geom):
        self.geom = geom

    def forward(self, volume):
        mat = self.geom.matrix()
        a, nb, n = len(self.geom.angles), self.geom.bins, self.geom.image_size
        if isinstance(volume, Tensor):
            ns = volume.shape[-1]
            flat = volume.data.reshape(n * n, ns)
            out = (mat @ flat).reshape(a, nb, ns)

            def bwd(g):
                _accum(volume, (mat.T @ g.reshape(a * nb, ns)).reshape(n, n, ns))

            return _node(out, (volume,), bwd)
        ns = volume.shape[-1]
        return (mat @ np.asarray(volume).reshape(n * n, ns)).reshape(a, nb, ns)

    def out_shape(self, in_shape):
        return (len(self.geom.angles), self.geom.bins, in_shape[-1])
