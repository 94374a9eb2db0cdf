"""Self-supervised decomposition drivers.

Factor tensors come out of untrained generator networks; this module
composes them into reconstructions (matrix product, k-way sum of outer
products, 2D+1D split, or a single N-d generator), evaluates the loss --
optionally through a linear measurement operator -- and runs the
ADAM-based fitting loop with scheduling, snapshots and histories.
"""

import time
from dataclasses import dataclass, field, replace

import numpy as np

from . import autograd as ag
from .autograd import Tensor, _accum, _node
from .forward_models import IdentityOperator
from .generators import NetworkSpec, build_factor_network
from .metrics import psnr
from .optim import AdamState, LrSchedule, adam_step, schedule_lr


class DivergenceError(RuntimeError):
    """The loss became non-finite during optimization."""


_LETTERS = "abcdefgh"


def compose_matrix(u, v):
    """U V^T from N x R and M x R factors."""
    if u.ndim != 2 or v.ndim != 2 or u.shape[1] != v.shape[1]:
        raise ag.ShapeMismatchError(
            f"factor ranks disagree: {u.shape} vs {v.shape}"
        )
    return ag.matmul(u, ag.transpose(v))


def cp_compose(factors):
    """Sum of R k-way outer products from k factors of shape N_i x R."""
    k = len(factors)
    if k < 2:
        raise ValueError("cp_compose needs at least two factors")
    ranks = {f.shape[1] for f in factors}
    if len(ranks) != 1 or any(f.ndim != 2 for f in factors):
        raise ag.ShapeMismatchError(
            f"factors must share one rank, got shapes {[f.shape for f in factors]}"
        )
    subs = [f"{_LETTERS[i]}r" for i in range(k)]
    out_sub = _LETTERS[:k]
    datas = [f.data for f in factors]
    out = np.einsum(",".join(subs) + "->" + out_sub, *datas)

    def bwd(g):
        for j, fj in enumerate(factors):
            if fj.requires_grad:
                rest = [s for i, s in enumerate(subs) if i != j]
                args = [d for i, d in enumerate(datas) if i != j]
                _accum(
                    fj,
                    np.einsum(
                        out_sub + ("," + ",".join(rest) if rest else "") + "->" + subs[j],
                        g,
                        *args,
                    ),
                )

    return _node(out, tuple(factors), bwd)


def split_compose(uv, w):
    """T[i,j,l] = sum_r uv[r,i,j] * w[l,r] from a 2D generator output and a
    1D factor matrix."""
    if uv.ndim != 3 or w.ndim != 2 or uv.shape[0] != w.shape[1]:
        raise ag.ShapeMismatchError(
            f"split factors disagree in rank: {uv.shape} vs {w.shape}"
        )
    out = np.einsum("rij,lr->ijl", uv.data, w.data)

    def bwd(g):
        if uv.requires_grad:
            _accum(uv, np.einsum("ijl,lr->rij", g, w.data))
        if w.requires_grad:
            _accum(w, np.einsum("ijl,rij->lr", g, uv.data))

    return _node(out, (uv, w), bwd)


def loss_eval(recon, target, kind="l2", factor_l1_weight=0.0, factors=()):
    """Data-fidelity loss plus optional l1 penalty on the factor entries."""
    if recon.shape != target.shape:
        raise ag.ShapeMismatchError(
            f"reconstruction {recon.shape} does not match target {target.shape}"
        )
    diff = recon - target
    if kind == "l2":
        loss = (diff * diff).mean()
    elif kind == "l1":
        loss = ag.activation(diff, "abs").mean()
    else:
        raise ValueError(f"unknown loss kind {kind!r}")
    if factor_l1_weight > 0.0 and factors:
        total = sum(f.data.size for f in factors)
        pen = None
        for f in factors:
            s = ag.activation(f, "abs").sum()
            pen = s if pen is None else pen + s
        loss = loss + pen * (factor_l1_weight / total)
    return loss


# ---------------------------------------------------------------------------
# problem / result


@dataclass
class DecompositionProblem:
    target: np.ndarray
    mode: str = "matrix"  # matrix | cp | split_2d1d | single_nd
    rank: int = 4
    loss_kind: str = "l2"
    factor_l1_weight: float = 0.0
    epochs: int = 2000
    schedule: LrSchedule = field(default_factory=lambda: LrSchedule("fixed", 1e-2))
    net_kind: str = "overparam"
    depth: int = 3
    hidden_channels: int = 32
    latent_channels: int = 0
    out_activations: object = "identity"  # one kind, or a sequence per factor
    optimize_latent: bool = True
    seed: int = 0
    oracle: np.ndarray = None
    operator: object = None  # None -> identity
    signal_shape: tuple = None  # reconstruction shape; target shape when identity
    network_specs: list = None  # explicit per-factor override

    def __post_init__(self):
        self.target = np.asarray(self.target, dtype=np.float64)
        if self.rank < 1:
            raise ValueError("rank must be >= 1")


@dataclass
class DecompositionResult:
    factors: list
    weights: np.ndarray
    reconstruction: np.ndarray
    best_reconstruction: np.ndarray
    final_reconstruction: np.ndarray
    loss_history: np.ndarray
    psnr_history: np.ndarray
    lr_history: np.ndarray
    best_epoch: int
    wall_time_per_epoch: float


def _fit_depth(extents, requested):
    """Deepest stage count <= requested that every extent can halve into."""
    d = requested
    for n in extents:
        twos = 0
        while n % 2 == 0 and n > 1:
            n //= 2
            twos += 1
        d = min(d, twos)
    if d < 1:
        raise ValueError(f"extents {extents} cannot be halved for any stage")
    return d


def _default_specs(problem, sig_shape):
    if problem.mode == "matrix":
        if len(sig_shape) != 2:
            raise ValueError("matrix mode needs a 2-dimensional target")
        plans = [(1, (n,)) for n in sig_shape]
    elif problem.mode == "cp":
        if len(sig_shape) < 2:
            raise ValueError("cp mode needs a k-dimensional target, k >= 2")
        plans = [(1, (n,)) for n in sig_shape]
    elif problem.mode == "split_2d1d":
        if len(sig_shape) != 3:
            raise ValueError("split_2d1d mode needs a 3-dimensional target")
        plans = [(2, sig_shape[:2]), (1, (sig_shape[2],))]
    elif problem.mode == "single_nd":
        if len(sig_shape) != 3:
            raise ValueError("single_nd mode needs a 3-dimensional target")
        plans = [(3, sig_shape)]
    else:
        raise ValueError(f"unknown mode {problem.mode!r}")

    acts = problem.out_activations
    if isinstance(acts, str):
        acts = [acts] * len(plans)
    if len(acts) != len(plans):
        raise ValueError("one out_activation per factor network expected")

    specs = []
    for (dims, out_len), act in zip(plans, acts):
        specs.append(
            NetworkSpec(
                dims=dims,
                kind=problem.net_kind,
                depth=_fit_depth(out_len, problem.depth),
                hidden_channels=problem.hidden_channels,
                out_channels=1 if problem.mode == "single_nd" else problem.rank,
                out_len=out_len,
                out_activation=act,
                latent_channels=problem.latent_channels,
                optimize_latent=problem.optimize_latent,
            )
        )
    return specs


def _compose(mode, outputs, sig_shape):
    """Map raw generator outputs [R, N...] to (reconstruction, factor list)."""
    if mode == "matrix":
        u, v = ag.transpose(outputs[0]), ag.transpose(outputs[1])
        return compose_matrix(u, v), [u, v]
    if mode == "cp":
        factors = [ag.transpose(o) for o in outputs]
        return cp_compose(factors), factors
    if mode == "split_2d1d":
        uv, w = outputs[0], ag.transpose(outputs[1])
        return split_compose(uv, w), [uv, w]
    # single_nd: the lone output is the reconstruction itself
    return ag.reshape(outputs[0], sig_shape), [outputs[0]]


def _outer_product_latent(net, sig_shape, seed):
    """Replace a 3D generator's latent with the outer product of per-dim
    latent vectors (kept fixed; the network parameters are optimized)."""
    rng = np.random.default_rng(np.random.SeedSequence([seed, 7]))
    c = net.spec.latent_channels
    zs = [rng.uniform(0.0, 0.1, size=(c, n)) for n in net.spec.latent_extents]
    z = np.einsum("ca,cb,cd->cabd", *zs)
    net.latent = Tensor(z)
    net.latent.requires_grad = net.spec.optimize_latent


def normalize_factors(factors):
    """Unit-l2 columns; scales folded into one weight vector per rank."""
    weights = None
    normed = []
    for f in factors:
        arr = np.asarray(f)
        axes = tuple(range(arr.ndim - 1)) if arr.ndim == 2 else tuple(
            i for i in range(arr.ndim) if i != 0
        )
        if arr.ndim == 2:
            norms = np.linalg.norm(arr, axis=0)
        else:  # [R, ...] generator output: norm over non-rank axes
            norms = np.sqrt((arr * arr).sum(axis=axes))
        norms = np.where(norms > 0, norms, 1.0)
        normed.append(arr / (norms if arr.ndim == 2 else norms.reshape((-1,) + (1,) * (arr.ndim - 1))))
        weights = norms if weights is None else weights * norms
    return normed, weights


def run_decomposition(problem):
    """Fit the factor networks to the target and return histories/snapshots."""
    op = problem.operator if problem.operator is not None else IdentityOperator()
    meas = problem.target
    sig_shape = tuple(problem.signal_shape) if problem.signal_shape else meas.shape
    if tuple(op.out_shape(sig_shape)) != meas.shape:
        raise ag.ShapeMismatchError(
            f"operator output {op.out_shape(sig_shape)} does not match "
            f"measurements {meas.shape}"
        )

    specs = problem.network_specs or _default_specs(problem, sig_shape)
    seeds = np.random.SeedSequence(problem.seed).generate_state(len(specs) + 1)
    nets = [build_factor_network(s, int(seeds[i])) for i, s in enumerate(specs)]
    if problem.mode == "single_nd":
        _outer_product_latent(nets[0], sig_shape, problem.seed)

    trainables = []
    for i, net in enumerate(nets):
        trainables.extend((f"net{i}.{n}", p) for n, p in net.trainables())

    target_t = Tensor(meas)
    adam = AdamState()
    oracle = problem.oracle
    peak = None
    if oracle is not None:
        oracle = np.asarray(oracle, dtype=np.float64)
        peak = float(oracle.max() - oracle.min()) or 1.0

    loss_hist = np.empty(problem.epochs)
    psnr_hist = np.full(problem.epochs, np.nan)
    lr_hist = np.empty(problem.epochs)
    best_loss = np.inf
    best_loss_recon = None
    best_psnr = -np.inf
    best_psnr_recon = None
    best_psnr_epoch = 0

    t0 = time.perf_counter()
    for epoch in range(problem.epochs):
        for _, p in trainables:
            p.zero_grad()
        outputs = [net.forward() for net in nets]
        recon_t, factors_t = _compose(problem.mode, outputs, sig_shape)
        pred = op.forward(recon_t)
        loss = loss_eval(
            pred, target_t, problem.loss_kind, problem.factor_l1_weight, factors_t
        )
        lv = loss.item()
        if not np.isfinite(lv):
            raise DivergenceError(f"non-finite loss at epoch {epoch}")
        ag.backward(loss)
        lr = schedule_lr(problem.schedule, epoch)
        adam_step(
            adam,
            [(n, p.data) for n, p in trainables],
            [p.grad for _, p in trainables],
            lr,
        )
        loss_hist[epoch] = lv
        lr_hist[epoch] = lr
        if lv < best_loss:
            best_loss = lv
            best_loss_recon = recon_t.data.copy()
        if oracle is not None:
            p_db = psnr(recon_t.data, oracle, peak)
            psnr_hist[epoch] = p_db
            if p_db > best_psnr:
                best_psnr = p_db
                best_psnr_recon = recon_t.data.copy()
                best_psnr_epoch = epoch
    elapsed = time.perf_counter() - t0

    final_recon = recon_t.data.copy()
    if oracle is not None:
        best_epoch = best_psnr_epoch
        best_recon = best_psnr_recon
    else:
        best_epoch = int(np.argmin(loss_hist))
        best_recon = best_loss_recon

    raw_factors = [f.data.copy() for f in factors_t]
    if problem.mode == "single_nd":
        factors, weights = raw_factors, np.ones(1)
    else:
        factors, weights = normalize_factors(raw_factors)

    return DecompositionResult(
        factors=factors,
        weights=weights,
        reconstruction=best_loss_recon,
        best_reconstruction=best_recon,
        final_reconstruction=final_recon,
        loss_history=loss_hist,
        psnr_history=psnr_hist,
        lr_history=lr_hist,
        best_epoch=best_epoch,
        wall_time_per_epoch=elapsed / max(problem.epochs, 1),
    )


def run_inverse_problem(measurements, operator, problem):
    """Same loop with the loss evaluated on operator-transformed output."""
    prob = replace(
        problem,
        target=np.asarray(measurements, dtype=np.float64),
        operator=operator,
    )
    if prob.signal_shape is None:
        raise ValueError("inverse problems must state the reconstruction shape")
    return run_decomposition(prob)
