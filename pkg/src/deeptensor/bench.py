"""Benchmark protocols behind the CLI subcommands.

Every protocol is a function taking a flat config mapping (section ->
key -> string) and an output directory.  Result CSVs are deterministic
given (config, seeds): rows are sorted before writing and wall-clock
times go to a separate ``*_timing.csv`` sidecar that is excluded from
the reproducibility guarantee.
"""

import hashlib
import time
from pathlib import Path

import numpy as np

from .baselines import cp_reconstruct, nmf_multiplicative, parafac_als, truncated_svd
from .decompose import DecompositionProblem, run_decomposition
from .forward_models import (
    CodedExposureOperator,
    NoiseSpec,
    ProjectionGeometry,
    RadonOperator,
    apply_mask,
    degrade,
    make_coded_mask,
)
from .metrics import default_peak, psnr
from .optim import AdamState, LrSchedule, adam_step, schedule_lr
from .phantoms import make_phantom
from . import autograd as ag


# ---------------------------------------------------------------------------
# config plumbing


DEFAULTS = {
    "experiment": {
        "seeds": "0,1,2,3,4",
        "epochs": "1500",
        "lr": "1e-2",
        "schedule": "fixed",
        "gamma": "0.99",
        "period": "2000",
        "t_max": "2000",
        "loss": "l2",
        "rank": "16",
        "mode": "matrix",
        "factor_l1_weight": "0",
    },
    "network": {
        "kind": "overparam",
        "depth": "3",
        "hidden": "32",
        "latent_channels": "0",
        "out_activation": "identity",
        "optimize_latent": "true",
    },
    "noise": {"kind": "gaussian", "sigma": "0.1", "lam_max": "1000",
              "readout": "0", "fraction": "0.1"},
    "operator": {"kind": "identity", "angles": "40", "frames": "8"},
    "data": {"phantom": "gaussian_lowrank", "extents": "64,64", "rank": "16",
             "target": "", "oracle": "", "output": ""},
}


def merge_config(overrides=None):
    cfg = {s: dict(kv) for s, kv in DEFAULTS.items()}
    for sec, kv in (overrides or {}).items():
        cfg.setdefault(sec, {}).update({k: str(v) for k, v in kv.items()})
    return cfg


def config_hash(cfg):
    canon = "\n".join(
        f"{s}.{k}={cfg[s][k]}" for s in sorted(cfg) for k in sorted(cfg[s])
    )
    return hashlib.sha1(canon.encode()).hexdigest()[:12]


def _get(cfg, sec, key, cast=str):
    v = cfg[sec][key]
    if cast is bool:
        return v.strip().lower() in ("1", "true", "yes")
    return cast(v)


def _seeds(cfg):
    return [int(s) for s in cfg["experiment"]["seeds"].split(",") if s.strip()]


def _schedule(cfg, base_lr=None):
    return LrSchedule(
        kind=cfg["experiment"]["schedule"],
        base_lr=base_lr if base_lr is not None else _get(cfg, "experiment", "lr", float),
        gamma=_get(cfg, "experiment", "gamma", float),
        period=_get(cfg, "experiment", "period", int),
        t_max=_get(cfg, "experiment", "t_max", int),
    )


def write_rows(path, header, rows):
    """Sorted, fixed-format CSV; byte-identical across reruns."""
    rows = sorted(",".join(str(c) for c in r) for r in rows)
    with open(path, "w") as fh:
        fh.write(",".join(header) + "\n")
        for r in rows:
            fh.write(r + "\n")
    return Path(path)


def _fmt(x):
    return f"{float(x):.6f}"


class _Timer:
    def __init__(self):
        self.rows = []

    def record(self, label, seconds):
        self.rows.append((label, f"{seconds:.3f}"))

    def write(self, path):
        with open(path, "w") as fh:
            fh.write("cell,seconds\n")
            for label, sec in self.rows:
                fh.write(f"{label},{sec}\n")


# ---------------------------------------------------------------------------
# shared run helpers


def _hidden_for_rank(base, rank):
    # the last 1x1 conv maps hidden channels to rank outputs; keep the
    # hidden width above the rank so the factor matrix is not rank-starved
    return max(base, rank + 8)


def run_matrix_cell(
    target, oracle, rank, epochs, schedule, seed,
    net_kind="overparam", depth=3, hidden=32, out_activations="identity",
    loss_kind="l2", factor_l1_weight=0.0, mode="matrix",
):
    prob = DecompositionProblem(
        target=target, mode=mode, rank=rank, loss_kind=loss_kind,
        factor_l1_weight=factor_l1_weight, epochs=epochs, schedule=schedule,
        net_kind=net_kind, depth=depth, hidden_channels=hidden,
        out_activations=out_activations, seed=seed, oracle=oracle,
    )
    return run_decomposition(prob)


# ---------------------------------------------------------------------------
# protocols


_NOISE_PAIRINGS = {
    "gaussian_gaussian": ("gaussian_lowrank", NoiseSpec("gaussian", sigma=0.1)),
    "piecewise_poisson": ("piecewise_lowrank", NoiseSpec("poisson", lam_max=1000.0)),
    "piecewise_rician": ("piecewise_lowrank", NoiseSpec("rician", sigma=0.02)),
}


def bench_noise(cfg, out_dir, quick=False):
    """Rank sweep of DeepTensor vs truncated SVD under three signal/noise
    pairings; PSNR is measured against the clean matrix."""
    chash = config_hash(cfg)
    ranks = [10, 30, 60] if quick else [10, 20, 40, 60]
    seeds = _seeds(cfg)[:3] if quick else _seeds(cfg)
    epochs = 50 if quick else _get(cfg, "experiment", "epochs", int)
    size = (64, 64)
    base_hidden = _get(cfg, "network", "hidden", int)
    timer = _Timer()
    rows = []
    for pairing, (phantom, noise) in _NOISE_PAIRINGS.items():
        for rank in ranks:
            for seed in seeds:
                t0 = time.perf_counter()
                clean, _ = make_phantom(phantom, size, rank=rank, seed=seed)
                noisy = degrade(clean, NoiseSpec(noise.kind, seed=seed + 1000,
                                                 sigma=noise.sigma,
                                                 lam_max=noise.lam_max))
                peak = default_peak(clean)
                svd_db = psnr(truncated_svd(noisy, rank).reconstruction(), clean, peak)
                res = run_matrix_cell(
                    noisy, clean, rank, epochs, _schedule(cfg), seed,
                    hidden=_hidden_for_rank(base_hidden, rank),
                )
                rows.append((pairing, rank, seed, chash, _fmt(svd_db),
                             _fmt(np.nanmax(res.psnr_history))))
                timer.record(f"{pairing}/r{rank}/s{seed}", time.perf_counter() - t0)
    runs = write_rows(out_dir / "bench_noise_runs.csv",
                      ["pairing", "rank", "seed", "config", "svd_psnr", "dt_psnr"], rows)
    agg = {}
    for pairing, rank, _, _, s_db, d_db in rows:
        agg.setdefault((pairing, rank), []).append((float(s_db), float(d_db)))
    summary = write_rows(
        out_dir / "bench_noise_summary.csv",
        ["pairing", "rank", "config", "svd_psnr_mean", "dt_psnr_mean"],
        [(p, r, chash, _fmt(np.mean([a for a, _ in v])), _fmt(np.mean([b for _, b in v])))
         for (p, r), v in agg.items()],
    )
    timer.write(out_dir / "bench_noise_timing.csv")
    return [runs, summary]


def _principal_subspace_error(est, true):
    """Frobenius distance between orthogonal projectors onto the spans."""
    qe, _ = np.linalg.qr(est)
    qt, _ = np.linalg.qr(true)
    return float(np.linalg.norm(qe @ qe.T - qt @ qt.T) / np.sqrt(2 * true.shape[1]))


def bench_pca(cfg, out_dir, quick=False):
    """Subspace recovery vs sample count and noise: SVD-based PCA against
    DeepTensor run on the sample covariance matrix."""
    chash = config_hash(cfg)
    features, intrinsic = 64, 10
    counts = [32, 128] if quick else [32, 64, 128, 256, 1024]
    sigmas = [0.5] if quick else [0.2, 1.0]
    seeds = _seeds(cfg)[: (2 if quick else None)]
    epochs = 60 if quick else _get(cfg, "experiment", "epochs", int)
    timer = _Timer()
    rows = []
    for sigma in sigmas:
        for n in counts:
            for seed in seeds:
                t0 = time.perf_counter()
                rng = np.random.default_rng(seed + 17)
                basis = rng.normal(size=(features, intrinsic))
                coeff = rng.normal(size=(n, intrinsic))
                data = coeff @ basis.T + rng.normal(0.0, sigma, size=(n, features))
                centered = data - data.mean(axis=0)
                pca_err = _principal_subspace_error(
                    truncated_svd(centered, intrinsic).v, basis
                )
                cov = centered.T @ centered / (n - 1)
                res = run_matrix_cell(
                    cov, None, intrinsic, epochs, _schedule(cfg), seed,
                    hidden=_hidden_for_rank(_get(cfg, "network", "hidden", int), intrinsic),
                )
                est = truncated_svd(res.reconstruction, intrinsic).u
                dt_err = _principal_subspace_error(est, basis)
                rows.append((f"{sigma:g}", n, seed, chash, _fmt(pca_err), _fmt(dt_err)))
                timer.record(f"s{sigma:g}/n{n}/seed{seed}", time.perf_counter() - t0)
    runs = write_rows(out_dir / "bench_pca_runs.csv",
                      ["sigma", "samples", "seed", "config", "pca_err", "dt_err"], rows)
    timer.write(out_dir / "bench_pca_timing.csv")
    return [runs]


TABLE1_RATES = (1e-2, 1e-3, 1e-4, 1e-5)
TABLE1_SCHEDULES = ("fixed", "step", "exponential", "cosine")


def bench_lr(cfg, out_dir, quick=False):
    """Best-PSNR of the rank-16 toy decomposition across four schedules
    and four base learning rates."""
    chash = config_hash(cfg)
    seeds = _seeds(cfg)[: (2 if quick else None)]
    epochs = 120 if quick else _get(cfg, "experiment", "epochs", int)
    rank, size, sigma = 16, (64, 64), 1.0
    hidden = _get(cfg, "network", "hidden", int)
    timer = _Timer()
    rows = []
    for seed in seeds:
        clean, _ = make_phantom("gaussian_lowrank", size, rank=rank, seed=seed)
        noisy = degrade(clean, NoiseSpec("gaussian", seed=seed + 1000, sigma=sigma))
        for kind in TABLE1_SCHEDULES:
            for base in TABLE1_RATES:
                t0 = time.perf_counter()
                sched = LrSchedule(
                    kind=kind, base_lr=base,
                    gamma=0.99 if kind == "step" else 0.9999,
                    period=_get(cfg, "experiment", "period", int),
                    t_max=epochs,
                )
                res = run_matrix_cell(noisy, clean, rank, epochs, sched, seed,
                                      hidden=hidden)
                rows.append((kind, f"{base:g}", seed, chash,
                             _fmt(np.nanmax(res.psnr_history))))
                timer.record(f"{kind}/{base:g}/s{seed}", time.perf_counter() - t0)
    runs = write_rows(out_dir / "bench_lr_runs.csv",
                      ["schedule", "base_lr", "seed", "config", "best_psnr"], rows)
    agg = {}
    for kind, base, _, _, db in rows:
        agg.setdefault((kind, base), []).append(float(db))
    summary = write_rows(
        out_dir / "bench_lr_summary.csv",
        ["schedule", "base_lr", "config", "mean_best_psnr", "std_best_psnr"],
        [(k, b, chash, _fmt(np.mean(v)), _fmt(np.std(v))) for (k, b), v in agg.items()],
    )
    timer.write(out_dir / "bench_lr_timing.csv")
    return [runs, summary]


STOP_SIGMAS = (0.05, 0.2, 0.5)


def post_optimum_slope(psnr_history, best_epoch):
    """Mean per-epoch PSNR decay after the optimum (negative = decay)."""
    tail = psnr_history[best_epoch:]
    if len(tail) < 2:
        return 0.0
    return float((tail[-1] - tail[0]) / (len(tail) - 1))


def bench_stop(cfg, out_dir, quick=False):
    """Stopping-criterion study: best epoch and post-optimum decay for
    over- vs under-parameterized generators across noise levels."""
    chash = config_hash(cfg)
    seeds = _seeds(cfg)[: (2 if quick else None)]
    epochs = 150 if quick else _get(cfg, "experiment", "epochs", int)
    rank, size = 16, (64, 64)
    timer = _Timer()
    rows, curves = [], []
    for arch in ("overparam", "underparam"):
        hidden = 32 if arch == "overparam" else 24
        for sigma in STOP_SIGMAS:
            for seed in seeds:
                t0 = time.perf_counter()
                # unit-scale target so the sigma grid spans mild to severe
                clean, _ = make_phantom("piecewise_lowrank", size, rank=rank, seed=seed)
                noisy = degrade(clean, NoiseSpec("gaussian", seed=seed + 1000, sigma=sigma))
                res = run_matrix_cell(noisy, clean, rank, epochs, _schedule(cfg),
                                      seed, net_kind=arch, hidden=hidden)
                slope = post_optimum_slope(res.psnr_history, res.best_epoch)
                rows.append((arch, f"{sigma:g}", seed, chash, res.best_epoch,
                             _fmt(np.nanmax(res.psnr_history)), _fmt(slope)))
                for e in range(0, epochs, max(epochs // 50, 1)):
                    curves.append((arch, f"{sigma:g}", seed, e,
                                   _fmt(res.psnr_history[e])))
                timer.record(f"{arch}/{sigma:g}/s{seed}", time.perf_counter() - t0)
    runs = write_rows(
        out_dir / "bench_stop_runs.csv",
        ["arch", "sigma", "seed", "config", "best_epoch", "best_psnr", "post_slope"],
        rows,
    )
    curve_csv = write_rows(out_dir / "bench_stop_curves.csv",
                           ["arch", "sigma", "seed", "epoch", "psnr"], curves)
    timer.write(out_dir / "bench_stop_timing.csv")
    return [runs, curve_csv]


def bench_rank(cfg, out_dir, quick=False):
    """Rank-sensitivity: sweep the decomposition rank past the true rank of
    a noisy truncated target; matrix (vs SVD) and tensor (vs PARAFAC-ALS)."""
    chash = config_hash(cfg)
    seeds = _seeds(cfg)[: (2 if quick else None)]
    epochs = 80 if quick else _get(cfg, "experiment", "epochs", int)
    timer = _Timer()
    rows = []
    true_rank = 20
    sweep = [10, 20, 30]
    for seed in seeds:
        clean, _ = make_phantom("piecewise_lowrank", (64, 64), rank=true_rank, seed=seed)
        noisy = degrade(clean, NoiseSpec("poisson", seed=seed + 1000, lam_max=100.0))
        peak = default_peak(clean)
        for rank in sweep:
            t0 = time.perf_counter()
            svd_db = psnr(truncated_svd(noisy, rank).reconstruction(), clean, peak)
            res = run_matrix_cell(
                noisy, clean, rank, epochs, _schedule(cfg), seed,
                hidden=_hidden_for_rank(_get(cfg, "network", "hidden", int), rank),
            )
            rows.append(("matrix", rank, seed, chash, _fmt(svd_db),
                         _fmt(np.nanmax(res.psnr_history))))
            timer.record(f"matrix/r{rank}/s{seed}", time.perf_counter() - t0)
    t_rank = 6
    t_sweep = [3, 6, 12]
    t_epochs = max(epochs // 2, 40)
    for seed in seeds:
        clean, _ = make_phantom("faces_like_tensor", (24, 24, 12), rank=t_rank, seed=seed)
        noisy = degrade(clean, NoiseSpec("poisson", seed=seed + 1000, lam_max=100.0))
        peak = default_peak(clean)
        for rank in t_sweep:
            t0 = time.perf_counter()
            f, w, _ = parafac_als(noisy, rank, iters=60, seed=seed)
            als_db = psnr(cp_reconstruct(f, w), clean, peak)
            prob = DecompositionProblem(
                target=noisy, mode="cp", rank=rank, epochs=t_epochs,
                schedule=_schedule(cfg), depth=2,
                hidden_channels=_hidden_for_rank(16, rank), seed=seed, oracle=clean,
            )
            res = run_decomposition(prob)
            rows.append(("tensor", rank, seed, chash, _fmt(als_db),
                         _fmt(np.nanmax(res.psnr_history))))
            timer.record(f"tensor/r{rank}/s{seed}", time.perf_counter() - t0)
    runs = write_rows(
        out_dir / "bench_rank_runs.csv",
        ["case", "rank", "seed", "config", "baseline_psnr", "dt_psnr"], rows,
    )
    timer.write(out_dir / "bench_rank_timing.csv")
    return [runs]


def bench_timing(cfg, out_dir, quick=False):
    """Wall time per epoch for three-1D vs 2D+1D split vs a single 3D
    generator approximating one volume."""
    chash = config_hash(cfg)
    size = (32, 32, 32) if quick else (64, 64, 64)
    epochs = 2 if quick else 3
    rank = 8
    seed = _seeds(cfg)[0]
    clean, _ = make_phantom("faces_like_tensor", size, rank=rank, seed=seed)
    timer = _Timer()
    rows = []
    for mode, hidden, depth in (("cp", 16, 2), ("split_2d1d", 16, 2), ("single_nd", 8, 2)):
        t0 = time.perf_counter()
        prob = DecompositionProblem(
            target=clean, mode=mode, rank=rank, epochs=epochs,
            schedule=_schedule(cfg), depth=depth, hidden_channels=hidden,
            latent_channels=4 if mode == "single_nd" else 0, seed=seed,
        )
        # untimed warmup so one-time kernel compilation/cache loads do not
        # pollute the per-epoch figure
        run_decomposition(
            DecompositionProblem(
                target=clean, mode=mode, rank=rank, epochs=1,
                schedule=_schedule(cfg), depth=depth, hidden_channels=hidden,
                latent_channels=4 if mode == "single_nd" else 0, seed=seed,
            )
        )
        res = run_decomposition(prob)
        mse = float(np.mean((res.final_reconstruction - clean) ** 2))
        rows.append((mode, seed, chash, _fmt(res.wall_time_per_epoch), _fmt(mse)))
        timer.record(mode, time.perf_counter() - t0)
    runs = write_rows(
        out_dir / "bench_timing_runs.csv",
        ["mode", "seed", "config", "sec_per_epoch", "final_mse"], rows,
    )
    timer.write(out_dir / "bench_timing_timing.csv")
    return [runs]


NMF_ACTIVATIONS = ("relu", "softplus", "abs")


def nmf_noise(shape, seed):
    """Heavy-tailed nonnegative-breaking noise: 0.3*(0.3*z1 + z2^2)."""
    rng = np.random.default_rng(seed)
    z1 = rng.normal(size=shape)
    z2 = rng.normal(size=shape)
    return 0.3 * (0.3 * z1 + z2**2)


def bench_nmf(cfg, out_dir, quick=False):
    """Nonnegative factorization via last-layer activations (NMF and
    semi-NMF) against multiplicative-update NMF."""
    chash = config_hash(cfg)
    seeds = _seeds(cfg)[: (2 if quick else None)]
    epochs = 80 if quick else _get(cfg, "experiment", "epochs", int)
    rank, size = 16, (64, 64)
    l1w = 1e-3
    timer = _Timer()
    rows = []
    for seed in seeds:
        clean, _ = make_phantom("piecewise_lowrank", size, rank=rank, seed=seed)
        noisy = np.maximum(clean + nmf_noise(size, seed + 1000), 0.0)
        peak = default_peak(clean)
        t0 = time.perf_counter()
        w, h, _ = nmf_multiplicative(noisy, rank, iters=500, seed=seed)
        rows.append(("baseline", "multiplicative", seed, chash,
                     _fmt(psnr(w @ h, clean, peak))))
        timer.record(f"baseline/s{seed}", time.perf_counter() - t0)
        for variant in ("nmf", "semi_nmf"):
            for act in NMF_ACTIVATIONS:
                t0 = time.perf_counter()
                acts = (act, act) if variant == "nmf" else (act, "identity")
                res = run_matrix_cell(
                    noisy, clean, rank, epochs, _schedule(cfg), seed,
                    hidden=_hidden_for_rank(_get(cfg, "network", "hidden", int), rank),
                    out_activations=acts, factor_l1_weight=l1w,
                )
                rows.append((variant, act, seed, chash,
                             _fmt(np.nanmax(res.psnr_history))))
                timer.record(f"{variant}/{act}/s{seed}", time.perf_counter() - t0)
    runs = write_rows(out_dir / "bench_nmf_runs.csv",
                      ["variant", "activation", "seed", "config", "psnr"], rows)
    timer.write(out_dir / "bench_nmf_timing.csv")
    return [runs]


def voxel_descent(measurements, operator, shape, epochs, lr, seed):
    """Unregularized least squares by ADAM directly on the voxels."""
    rng = np.random.default_rng(seed)
    vol = ag.Tensor(rng.uniform(0, 0.1, size=shape), requires_grad=True)
    target = ag.Tensor(measurements)
    state = AdamState()
    for _ in range(epochs):
        vol.zero_grad()
        pred = operator.forward(vol)
        diff = pred - target
        loss = (diff * diff).mean()
        loss.backward()
        adam_step(state, [("vox", vol.data)], [vol.grad], lr)
    return vol.data.copy()


def bench_inverse(cfg, out_dir, quick=False):
    """Coded-exposure video recovery vs zero-fill and Radon volume
    recovery vs unregularized voxel descent."""
    chash = config_hash(cfg)
    seeds = _seeds(cfg)[: (1 if quick else 3)]
    epochs = 100 if quick else _get(cfg, "experiment", "epochs", int)
    timer = _Timer()
    rows = []
    frames = _get(cfg, "operator", "frames", int)
    for seed in seeds:
        # video compressive sensing
        t0 = time.perf_counter()
        video, _ = make_phantom("moving_square_video", (16, 16, frames), seed=seed)
        mask = make_coded_mask((16, 16), frames, seed + 500)
        coded = apply_mask(video, mask)
        zero_fill = mask.data * coded[..., None]
        peak = default_peak(video)
        zf_db = psnr(zero_fill, video, peak)
        prob = DecompositionProblem(
            target=coded, mode="split_2d1d", rank=frames, epochs=epochs,
            schedule=_schedule(cfg), depth=2, hidden_channels=16, seed=seed,
            oracle=video, operator=CodedExposureOperator(mask),
            signal_shape=(16, 16, frames),
        )
        res = run_decomposition(prob)
        rows.append(("video_cs", seed, chash, _fmt(zf_db),
                     _fmt(np.nanmax(res.psnr_history))))
        timer.record(f"video/s{seed}", time.perf_counter() - t0)

        # limited-angle noisy tomography
        t0 = time.perf_counter()
        n, ns = 32, 8
        vol, _ = make_phantom("shepp_like_volume", (n, n, ns), seed=seed)
        n_ang = _get(cfg, "operator", "angles", int)
        geom = ProjectionGeometry(
            angles=tuple(np.linspace(0, np.pi, n_ang, endpoint=False)), image_size=n
        )
        op = RadonOperator(geom)
        sino = op.forward(vol)
        sino_noisy = degrade(np.maximum(sino, 0) / max(sino.max(), 1e-9),
                             NoiseSpec("poisson", seed=seed + 900, lam_max=100.0))
        sino_noisy *= max(sino.max(), 1e-9)
        peak = default_peak(vol)
        vd_epochs = epochs
        vd = voxel_descent(sino_noisy, op, (n, n, ns), vd_epochs, 1e-2, seed)
        vd_db = psnr(vd, vol, peak)
        prob = DecompositionProblem(
            target=sino_noisy, mode="cp", rank=64, epochs=vd_epochs,
            schedule=_schedule(cfg), depth=2, hidden_channels=72, seed=seed,
            oracle=vol, operator=op, signal_shape=(n, n, ns),
        )
        res = run_decomposition(prob)
        rows.append(("radon", seed, chash, _fmt(vd_db),
                     _fmt(np.nanmax(res.psnr_history))))
        timer.record(f"radon/s{seed}", time.perf_counter() - t0)
    runs = write_rows(
        out_dir / "bench_inverse_runs.csv",
        ["case", "seed", "config", "baseline_psnr", "dt_psnr"], rows,
    )
    timer.write(out_dir / "bench_inverse_timing.csv")
    return [runs]


BENCHES = {
    "bench-noise": bench_noise,
    "bench-pca": bench_pca,
    "bench-lr": bench_lr,
    "bench-stop": bench_stop,
    "bench-rank": bench_rank,
    "bench-timing": bench_timing,
    "bench-nmf": bench_nmf,
    "bench-inverse": bench_inverse,
}
