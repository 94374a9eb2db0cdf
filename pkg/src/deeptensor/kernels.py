"""Convolution inner kernels.

Two interchangeable backends: numba-jitted loops (default when numba is
importable) and a pure-numpy path built from strided slices.  Select with
the ``DEEPTENSOR_BACKEND`` environment variable ("numba" or "numpy").
``benchmarks/backend_bench.py`` compares the two.

All kernels operate on already-padded, C-contiguous float64 arrays:

    x: [C_in, s_1..s_d]   w: [C_out, C_in, k_1..k_d]   out: [C_out, o_1..o_d]
"""

import itertools
import os

import numpy as np

_env = os.environ.get("DEEPTENSOR_BACKEND", "").strip().lower()
if _env not in ("", "numba", "numpy"):
    raise ValueError(f"DEEPTENSOR_BACKEND must be 'numba' or 'numpy', got {_env!r}")

_HAVE_NUMBA = False
if _env != "numpy":
    try:
        from numba import njit

        _HAVE_NUMBA = True
    except ImportError:
        if _env == "numba":
            raise


def active_backend() -> str:
    """Name of the kernel backend in use ("numba" or "numpy")."""
    return "numba" if _HAVE_NUMBA else "numpy"


# ---------------------------------------------------------------------------
# numpy backend: one generic implementation for any spatial dimensionality.
# Loops only over kernel offsets (k^d iterations); everything else is
# vectorized through strided views.


def _offset_slices(offset, stride, oshape):
    return tuple(
        slice(k, k + s * (o - 1) + 1, s) for k, s, o in zip(offset, stride, oshape)
    )


def _np_conv_fwd(xp, w, stride, oshape):
    cout = w.shape[0]
    out = np.zeros((cout,) + oshape)
    for off in itertools.product(*(range(k) for k in w.shape[2:])):
        sl = (slice(None),) + _offset_slices(off, stride, oshape)
        # [cout, cin] x [cin, o...] -> [cout, o...]
        out += np.tensordot(w[(slice(None), slice(None)) + off], xp[sl], axes=([1], [0]))
    return out


def _np_conv_bwd_x(gout, w, stride, xshape):
    gx = np.zeros(xshape)
    oshape = gout.shape[1:]
    for off in itertools.product(*(range(k) for k in w.shape[2:])):
        sl = (slice(None),) + _offset_slices(off, stride, oshape)
        gx[sl] += np.tensordot(w[(slice(None), slice(None)) + off], gout, axes=([0], [0]))
    return gx


def _np_conv_bwd_w(gout, xp, stride, wshape):
    gw = np.zeros(wshape)
    oshape = gout.shape[1:]
    spatial = list(range(1, gout.ndim))
    for off in itertools.product(*(range(k) for k in wshape[2:])):
        sl = (slice(None),) + _offset_slices(off, stride, oshape)
        gw[(slice(None), slice(None)) + off] = np.tensordot(
            gout, xp[sl], axes=(spatial, spatial)
        )
    return gw


# ---------------------------------------------------------------------------
# numba backend: explicit loops per spatial dimensionality.

if _HAVE_NUMBA:

    @njit(cache=True, fastmath=True)
    def _nb_conv1d_fwd(xp, w, s0, o0):
        cout, cin, k0 = w.shape
        out = np.zeros((cout, o0))
        for a in range(cout):
            for b in range(cin):
                for t in range(k0):
                    wv = w[a, b, t]
                    for i in range(o0):
                        out[a, i] += wv * xp[b, i * s0 + t]
        return out

    @njit(cache=True, fastmath=True)
    def _nb_conv1d_bwd_x(gout, w, s0, n0):
        cout, cin, k0 = w.shape
        o0 = gout.shape[1]
        gx = np.zeros((cin, n0))
        for a in range(cout):
            for b in range(cin):
                for t in range(k0):
                    wv = w[a, b, t]
                    for i in range(o0):
                        gx[b, i * s0 + t] += wv * gout[a, i]
        return gx

    @njit(cache=True, fastmath=True)
    def _nb_conv1d_bwd_w(gout, xp, s0, k0):
        cout, o0 = gout.shape
        cin = xp.shape[0]
        gw = np.zeros((cout, cin, k0))
        for a in range(cout):
            for b in range(cin):
                for t in range(k0):
                    acc = 0.0
                    for i in range(o0):
                        acc += gout[a, i] * xp[b, i * s0 + t]
                    gw[a, b, t] = acc
        return gw

    @njit(cache=True, fastmath=True)
    def _nb_conv2d_fwd(xp, w, s0, s1, o0, o1):
        cout, cin, k0, k1 = w.shape
        out = np.zeros((cout, o0, o1))
        for a in range(cout):
            for b in range(cin):
                for t in range(k0):
                    for u in range(k1):
                        wv = w[a, b, t, u]
                        for i in range(o0):
                            for j in range(o1):
                                out[a, i, j] += wv * xp[b, i * s0 + t, j * s1 + u]
        return out

    @njit(cache=True, fastmath=True)
    def _nb_conv2d_bwd_x(gout, w, s0, s1, n0, n1):
        cout, cin, k0, k1 = w.shape
        o0, o1 = gout.shape[1], gout.shape[2]
        gx = np.zeros((cin, n0, n1))
        for a in range(cout):
            for b in range(cin):
                for t in range(k0):
                    for u in range(k1):
                        wv = w[a, b, t, u]
                        for i in range(o0):
                            for j in range(o1):
                                gx[b, i * s0 + t, j * s1 + u] += wv * gout[a, i, j]
        return gx

    @njit(cache=True, fastmath=True)
    def _nb_conv2d_bwd_w(gout, xp, s0, s1, k0, k1):
        cout, o0, o1 = gout.shape
        cin = xp.shape[0]
        gw = np.zeros((cout, cin, k0, k1))
        for a in range(cout):
            for b in range(cin):
                for t in range(k0):
                    for u in range(k1):
                        acc = 0.0
                        for i in range(o0):
                            for j in range(o1):
                                acc += gout[a, i, j] * xp[b, i * s0 + t, j * s1 + u]
                        gw[a, b, t, u] = acc
        return gw

    @njit(cache=True, fastmath=True)
    def _nb_conv3d_fwd(xp, w, s0, s1, s2, o0, o1, o2):
        cout, cin, k0, k1, k2 = w.shape
        out = np.zeros((cout, o0, o1, o2))
        for a in range(cout):
            for b in range(cin):
                for t in range(k0):
                    for u in range(k1):
                        for v in range(k2):
                            wv = w[a, b, t, u, v]
                            for i in range(o0):
                                for j in range(o1):
                                    for l in range(o2):
                                        out[a, i, j, l] += wv * xp[
                                            b, i * s0 + t, j * s1 + u, l * s2 + v
                                        ]
        return out

    @njit(cache=True, fastmath=True)
    def _nb_conv3d_bwd_x(gout, w, s0, s1, s2, n0, n1, n2):
        cout, cin, k0, k1, k2 = w.shape
        o0, o1, o2 = gout.shape[1], gout.shape[2], gout.shape[3]
        gx = np.zeros((cin, n0, n1, n2))
        for a in range(cout):
            for b in range(cin):
                for t in range(k0):
                    for u in range(k1):
                        for v in range(k2):
                            wv = w[a, b, t, u, v]
                            for i in range(o0):
                                for j in range(o1):
                                    for l in range(o2):
                                        gx[
                                            b, i * s0 + t, j * s1 + u, l * s2 + v
                                        ] += wv * gout[a, i, j, l]
        return gx

    @njit(cache=True, fastmath=True)
    def _nb_conv3d_bwd_w(gout, xp, s0, s1, s2, k0, k1, k2):
        cout, o0, o1, o2 = gout.shape
        cin = xp.shape[0]
        gw = np.zeros((cout, cin, k0, k1, k2))
        for a in range(cout):
            for b in range(cin):
                for t in range(k0):
                    for u in range(k1):
                        for v in range(k2):
                            acc = 0.0
                            for i in range(o0):
                                for j in range(o1):
                                    for l in range(o2):
                                        acc += (
                                            gout[a, i, j, l]
                                            * xp[b, i * s0 + t, j * s1 + u, l * s2 + v]
                                        )
                            gw[a, b, t, u, v] = acc
        return gw


# ---------------------------------------------------------------------------
# dispatch


def conv_forward(xp, w, stride, oshape):
    """Cross-correlate padded input xp with kernel w at the given strides."""
    if _HAVE_NUMBA:
        d = len(stride)
        if d == 1:
            return _nb_conv1d_fwd(xp, w, stride[0], oshape[0])
        if d == 2:
            return _nb_conv2d_fwd(xp, w, stride[0], stride[1], oshape[0], oshape[1])
        if d == 3:
            return _nb_conv3d_fwd(
                xp, w, stride[0], stride[1], stride[2], oshape[0], oshape[1], oshape[2]
            )
    return _np_conv_fwd(xp, w, stride, oshape)


def conv_backward_input(gout, w, stride, xshape):
    """Gradient wrt the padded input."""
    if _HAVE_NUMBA:
        d = len(stride)
        if d == 1:
            return _nb_conv1d_bwd_x(gout, w, stride[0], xshape[1])
        if d == 2:
            return _nb_conv2d_bwd_x(gout, w, stride[0], stride[1], xshape[1], xshape[2])
        if d == 3:
            return _nb_conv3d_bwd_x(
                gout, w, stride[0], stride[1], stride[2], xshape[1], xshape[2], xshape[3]
            )
    return _np_conv_bwd_x(gout, w, stride, xshape)


def conv_backward_weight(gout, xp, stride, wshape):
    """Gradient wrt the kernel."""
    if _HAVE_NUMBA:
        d = len(stride)
        if d == 1:
            return _nb_conv1d_bwd_w(gout, xp, stride[0], wshape[2])
        if d == 2:
            return _nb_conv2d_bwd_w(gout, xp, stride[0], stride[1], wshape[2], wshape[3])
        if d == 3:
            return _nb_conv3d_bwd_w(
                gout, xp, stride[0], stride[1], stride[2], wshape[2], wshape[3], wshape[4]
            )
    return _np_conv_bwd_w(gout, xp, stride, wshape)
