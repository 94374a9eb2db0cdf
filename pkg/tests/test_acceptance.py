"""End-to-end acceptance suite.

Each test class covers one verifiable claim about the package: gradient
correctness, oracle equivalence of the compose/SVD paths, directional
denoising studies against classical baselines, schedule and stopping
behavior, timing separation of the factored parameterizations, NMF
properties, inverse problems, and reproducibility of the benchmark CSVs.
The heavier studies use epoch counts calibrated for a single-core CPU
box; each asserts the same directional margins at full scale.
"""

import numpy as np
import pytest

from conftest import check_grads

from deeptensor import autograd as ag
from deeptensor.autograd import ConvSpec, Tensor
from deeptensor.baselines import nmf_multiplicative, truncated_svd
from deeptensor.bench import (
    STOP_SIGMAS,
    TABLE1_RATES,
    TABLE1_SCHEDULES,
    _hidden_for_rank,
    nmf_noise,
    post_optimum_slope,
    run_matrix_cell,
    voxel_descent,
)
from deeptensor.cli import main as cli_main
from deeptensor.decompose import (
    DecompositionProblem,
    cp_compose,
    run_decomposition,
    split_compose,
)
from deeptensor.fileio import read_tensor, write_tensor
from deeptensor.forward_models import (
    CodedExposureOperator,
    NoiseSpec,
    ProjectionGeometry,
    RadonOperator,
    apply_mask,
    degrade,
    make_coded_mask,
    radon_project,
)
from deeptensor.metrics import default_peak, psnr
from deeptensor.optim import LrSchedule
from deeptensor.phantoms import make_phantom

FIXED = LrSchedule(kind="fixed", base_lr=1e-2)
GRAD_TOL = 1e-4


def _cell(phantom, noise, rank, seed, epochs, size=(64, 64), decomp_rank=None, **kw):
    """One denoising run: (svd best PSNR, deep prior best PSNR).

    decomp_rank lets the decomposition rank differ from the target's
    generating rank (rank-robustness sweeps); it defaults to rank.
    """
    decomp_rank = rank if decomp_rank is None else decomp_rank
    clean, _ = make_phantom(phantom, size, rank=rank, seed=seed)
    noisy = degrade(
        clean,
        NoiseSpec(noise.kind, seed=seed + 1000, sigma=noise.sigma,
                  lam_max=noise.lam_max),
    )
    peak = default_peak(clean)
    svd_db = psnr(truncated_svd(noisy, decomp_rank).reconstruction(), clean, peak)
    kw.setdefault("hidden", _hidden_for_rank(32, decomp_rank))
    res = run_matrix_cell(noisy, clean, decomp_rank, epochs, FIXED, seed, **kw)
    return svd_db, float(np.nanmax(res.psnr_history))


class TestGradientCorrectness:
    """Tape gradients match central differences on random small instances."""

    def test_conv_all_dims(self, rng):
        for dim, spatial in ((1, (7,)), (2, (6, 5)), (3, (4, 4, 3))):
            for stride in (1, 2):
                spec = ConvSpec(kernel=(3,) * dim, stride=(stride,) * dim,
                                pad=(1,) * dim, in_channels=2, out_channels=3)
                x = rng.normal(size=(2,) + spatial)
                w = rng.normal(size=(3, 2) + (3,) * dim)
                m = rng.normal(size=(3,) + spec.out_shape(spatial))
                check_grads(
                    lambda xt, wt: (ag.conv_nd(xt, wt, spec) * Tensor(m)).sum(),
                    [x, w], tol=GRAD_TOL,
                )

    def test_upsample(self, rng):
        for mode in ("nearest", "linear"):
            x = rng.normal(size=(2, 5, 4))
            m = rng.normal(size=(2, 10, 8))
            check_grads(
                lambda t: (ag.upsample_nd(t, (2, 2), mode=mode) * Tensor(m)).sum(),
                [x], tol=GRAD_TOL,
            )

    def test_activations(self, rng):
        # stay away from the relu/leaky kink where the derivative jumps
        x = rng.uniform(0.2, 1.5, size=(3, 6)) * rng.choice([-1, 1], size=(3, 6))
        m = rng.normal(size=(3, 6))
        for kind in ("relu", "leaky_relu", "sigmoid", "softplus", "abs"):
            check_grads(
                lambda t: (ag.activation(t, kind) * Tensor(m)).sum(),
                [x], tol=GRAD_TOL,
            )

    def test_normalization_and_bias(self, rng):
        x = rng.normal(size=(3, 8))
        gain = rng.uniform(0.5, 1.5, size=3)
        bias = rng.normal(size=3)
        m = rng.normal(size=(3, 8))
        check_grads(
            lambda xt, gt, bt: (ag.normalize_channels(xt, gt, bt) * Tensor(m)).sum(),
            [x, gain, bias], tol=GRAD_TOL,
        )
        check_grads(
            lambda xt, bt: (ag.add_channel_bias(xt, bt) * Tensor(m)).sum(),
            [x, bias], tol=GRAD_TOL,
        )

    def test_matmul_and_composes(self, rng):
        u = rng.normal(size=(5, 3))
        v = rng.normal(size=(4, 3))
        m = rng.normal(size=(5, 4))
        check_grads(lambda a, b: ((a @ b.T) * Tensor(m)).sum(), [u, v], tol=GRAD_TOL)

        fs = [rng.normal(size=(n, 3)) for n in (4, 3, 5)]
        mc = rng.normal(size=(4, 3, 5))
        check_grads(
            lambda *ts: (cp_compose(list(ts)) * Tensor(mc)).sum(), fs, tol=GRAD_TOL
        )

        uv = rng.normal(size=(3, 4, 5))
        w = rng.normal(size=(6, 3))
        ms = rng.normal(size=(4, 5, 6))
        check_grads(
            lambda a, b: (split_compose(a, b) * Tensor(ms)).sum(), [uv, w],
            tol=GRAD_TOL,
        )

    def test_measurement_operators(self, rng):
        mask = make_coded_mask((4, 4), 3, seed=0)
        video = rng.normal(size=(4, 4, 3))
        mv = rng.normal(size=(4, 4))
        check_grads(
            lambda t: (apply_mask(t, mask) * Tensor(mv)).sum(), [video],
            tol=GRAD_TOL,
        )

        geom = ProjectionGeometry(angles=(0.3, 1.1, 2.0), image_size=8)
        img = rng.normal(size=(8, 8))
        mr = rng.normal(size=(3, geom.bins))
        check_grads(
            lambda t: (radon_project(t, geom) * Tensor(mr)).sum(), [img],
            tol=GRAD_TOL,
        )


class TestOracleEquivalence:
    def test_cp_compose_matches_brute_force(self, rng):
        for shape in ((2, 3), (3, 2, 4), (2, 3, 4, 2), (6, 6, 6)):
            rank = 3
            fs = [rng.normal(size=(n, rank)) for n in shape]
            out = cp_compose([Tensor(f) for f in fs]).data
            brute = np.zeros(shape)
            for r in range(rank):
                term = fs[0][:, r]
                for f in fs[1:]:
                    term = np.multiply.outer(term, f[:, r])
                brute += term
            np.testing.assert_allclose(out, brute, atol=1e-12)

    def test_split_compose_matches_brute_force(self, rng):
        rank = 2
        uv = rng.normal(size=(rank, 4, 5))
        w = rng.normal(size=(6, rank))
        out = split_compose(Tensor(uv), Tensor(w)).data
        brute = np.zeros((4, 5, 6))
        for i in range(4):
            for j in range(5):
                for l in range(6):
                    for r in range(rank):
                        brute[i, j, l] += uv[r, i, j] * w[l, r]
        np.testing.assert_allclose(out, brute, atol=1e-12)

    def test_truncated_svd_exact_on_rank_k(self, rng):
        a = rng.normal(size=(20, 6))
        b = rng.normal(size=(15, 6))
        x = a @ b.T
        res = truncated_svd(x, 6)
        rel = np.linalg.norm(res.reconstruction() - x) / np.linalg.norm(x)
        assert rel < 1e-9

    def test_truncated_svd_orthonormal(self, rng):
        x = rng.normal(size=(18, 12))
        res = truncated_svd(x, 5)
        np.testing.assert_allclose(res.u.T @ res.u, np.eye(5), atol=1e-8)
        np.testing.assert_allclose(res.v.T @ res.v, np.eye(5), atol=1e-8)


class TestGaussianDenoisingTracksSvd:
    """Gaussian noise on Gaussian low-rank targets: the deep prior stays
    within 2 dB of the truncated SVD, which is optimal in this setting."""

    EPOCHS = 2000
    SEEDS = range(5)

    @pytest.mark.parametrize("rank", [10, 20, 40, 60])
    def test_within_two_db_of_svd(self, rank):
        noise = NoiseSpec("gaussian", sigma=0.1)
        svds, dts = [], []
        for seed in self.SEEDS:
            s, d = _cell("gaussian_lowrank", noise, rank, seed, self.EPOCHS)
            svds.append(s)
            dts.append(d)
        assert np.mean(dts) >= np.mean(svds) - 2.0, (
            f"rank {rank}: dt {np.mean(dts):.2f} vs svd {np.mean(svds):.2f}"
        )


class TestNonGaussianBeatsSvd:
    """Piecewise-constant signals under non-Gaussian noise: the deep prior
    exceeds the SVD baseline by at least 1 dB."""

    EPOCHS = 1000
    SEEDS = range(5)

    @pytest.mark.parametrize(
        "noise", [NoiseSpec("poisson", lam_max=1000.0), NoiseSpec("rician", sigma=0.02)],
        ids=["poisson", "rician"],
    )
    def test_margin_over_svd(self, noise):
        svds, dts = [], []
        for seed in self.SEEDS:
            s, d = _cell("piecewise_lowrank", noise, 20, seed, self.EPOCHS)
            svds.append(s)
            dts.append(d)
        assert np.mean(dts) >= np.mean(svds) + 1.0, (
            f"{noise.kind}: dt {np.mean(dts):.2f} vs svd {np.mean(svds):.2f}"
        )


@pytest.fixture(scope="module")
def schedule_table():
    epochs, seeds = 700, range(5)
    scores = {}
    for seed in seeds:
        clean, _ = make_phantom("gaussian_lowrank", (64, 64), rank=16, seed=seed)
        noisy = degrade(clean, NoiseSpec("gaussian", seed=seed + 1000, sigma=1.0))
        for kind in TABLE1_SCHEDULES:
            for base in TABLE1_RATES:
                sched = LrSchedule(
                    kind=kind, base_lr=base,
                    gamma=0.99 if kind == "step" else 0.9999,
                    period=2000, t_max=epochs,
                )
                res = run_matrix_cell(noisy, clean, 16, epochs, sched,
                                      seed, hidden=32)
                scores.setdefault((kind, base), []).append(
                    float(np.nanmax(res.psnr_history))
                )
    return {k: float(np.mean(v)) for k, v in scores.items()}


class TestScheduleOrdering:
    """A fixed learning rate dominates decaying schedules at equal base
    rate, and a far-too-small base rate loses measurably."""

    # schedules with near-unity decay are numerically almost identical to
    # fixed over this horizon, so ties are resolved at reporting precision
    TIE_DB = 0.05

    @pytest.mark.parametrize("base", [1e-2, 1e-3, 1e-4])
    def test_fixed_is_best_at_base(self, schedule_table, base):
        fixed = schedule_table[("fixed", base)]
        for kind in TABLE1_SCHEDULES:
            assert fixed >= schedule_table[(kind, base)] - self.TIE_DB, (
                f"{kind}@{base:g} = {schedule_table[(kind, base)]:.2f} "
                f"beats fixed = {fixed:.2f}"
            )

    def test_tiny_rate_underperforms(self, schedule_table):
        assert schedule_table[("fixed", 1e-2)] - schedule_table[("fixed", 1e-5)] >= 0.5


@pytest.fixture(scope="module")
def stopping_runs():
    epochs, seeds = 1200, range(5)
    out = {}
    for arch, hidden in (("overparam", 32), ("underparam", 24)):
        for sigma in STOP_SIGMAS:
            cells = []
            for seed in seeds:
                # unit-scale target so the sigma grid spans mild to severe
                clean, _ = make_phantom("piecewise_lowrank", (64, 64),
                                        rank=16, seed=seed)
                noisy = degrade(
                    clean, NoiseSpec("gaussian", seed=seed + 1000, sigma=sigma)
                )
                res = run_matrix_cell(noisy, clean, 16, epochs, FIXED,
                                      seed, net_kind=arch, hidden=hidden)
                cells.append(res)
            out[(arch, sigma)] = cells
    return out


class TestStoppingBehavior:
    """More noise moves the PSNR optimum earlier, and under-parameterized
    generators decay more gently after the optimum."""

    def test_best_epoch_non_increasing_in_noise(self, stopping_runs):
        medians = [
            np.median([r.best_epoch for r in stopping_runs[("overparam", s)]])
            for s in STOP_SIGMAS
        ]
        assert all(a >= b for a, b in zip(medians, medians[1:])), medians

    def test_underparam_decays_more_gently(self, stopping_runs):
        def med_slope(arch, sigma):
            return float(np.median([
                abs(post_optimum_slope(r.psnr_history, r.best_epoch))
                for r in stopping_runs[(arch, sigma)]
            ]))

        for sigma in STOP_SIGMAS:
            assert med_slope("underparam", sigma) < med_slope("overparam", sigma)


@pytest.fixture(scope="module")
def rank_sweep():
    epochs, seeds = 800, range(3)
    noise = NoiseSpec("poisson", lam_max=100.0)
    out = {r: {"svd": [], "dt": []} for r in (10, 20, 30)}
    for seed in seeds:
        for rank in (10, 20, 30):
            s, d = _cell("piecewise_lowrank", noise, 20, seed, epochs,
                         decomp_rank=rank)
            out[rank]["svd"].append(s)
            out[rank]["dt"].append(d)
    return {r: {k: float(np.mean(v)) for k, v in kv.items()}
            for r, kv in out.items()}


class TestRankRobustness:
    """Overshooting the decomposition rank hurts the SVD but barely moves
    the deep prior."""

    def test_svd_degrades_past_true_rank(self, rank_sweep):
        assert rank_sweep[30]["svd"] <= rank_sweep[20]["svd"] - 0.5

    def test_deep_prior_stays_flat(self, rank_sweep):
        assert abs(rank_sweep[30]["dt"] - rank_sweep[20]["dt"]) <= 1.0


def _timed_epoch(mode, clean, hidden, latent):
    common = dict(target=clean, mode=mode, rank=8, schedule=FIXED, depth=2,
                  hidden_channels=hidden, latent_channels=latent, seed=0)
    # warmup absorbs one-time kernel compilation and cache loads
    run_decomposition(DecompositionProblem(epochs=1, **common))
    res = run_decomposition(DecompositionProblem(epochs=3, **common))
    return res.wall_time_per_epoch


class TestFactoredParameterizationTiming:
    """At 64^3, per-epoch cost orders as three-1D < 2D+1D < single-3D,
    with at least a 5x spread between the extremes."""

    def test_epoch_time_ordering(self):
        clean, _ = make_phantom("faces_like_tensor", (64, 64, 64), rank=8, seed=0)
        t_cp = _timed_epoch("cp", clean, 16, 0)
        t_split = _timed_epoch("split_2d1d", clean, 16, 0)
        t_3d = _timed_epoch("single_nd", clean, 8, 4)
        assert t_cp < t_split < t_3d, (t_cp, t_split, t_3d)
        assert t_3d >= 5.0 * t_cp, (t_cp, t_3d)


@pytest.fixture(scope="module")
def nmf_runs():
    epochs, seeds = 400, range(5)
    out = {act: [] for act in ("relu", "softplus", "abs")}
    for seed in seeds:
        clean, _ = make_phantom("piecewise_lowrank", (64, 64), rank=16,
                                seed=seed)
        noisy = np.maximum(clean + nmf_noise((64, 64), seed + 1000), 0.0)
        for act in out:
            res = run_matrix_cell(
                noisy, clean, 16, epochs, FIXED, seed, hidden=32,
                out_activations=(act, act), factor_l1_weight=1e-3,
            )
            out[act].append((res, float(np.nanmax(res.psnr_history))))
    return out


class TestNonnegativeFactorization:
    def test_outputs_nonnegative_for_all_activations(self, nmf_runs):
        for act, cells in nmf_runs.items():
            for res, _ in cells:
                for f in res.factors:
                    assert f.min() >= 0.0, act
                assert res.best_reconstruction.min() >= 0.0, act

    def test_relu_outperforms_abs(self, nmf_runs):
        relu = np.mean([db for _, db in nmf_runs["relu"]])
        absv = np.mean([db for _, db in nmf_runs["abs"]])
        assert relu >= absv, (relu, absv)

    def test_multiplicative_baseline_monotone(self, rng):
        clean, _ = make_phantom("piecewise_lowrank", (64, 64), rank=16, seed=0)
        noisy = np.maximum(clean + nmf_noise((64, 64), 1000), 0.0)
        _, _, history = nmf_multiplicative(noisy, 16, iters=300, seed=0)
        diffs = np.diff(history)
        assert np.all(diffs <= 1e-10 * history[0])


class TestInverseProblems:
    VIDEO_EPOCHS = 800
    RADON_EPOCHS = 800

    def test_coded_exposure_beats_zero_fill(self):
        margins = []
        for seed in range(3):
            video, _ = make_phantom("moving_square_video", (16, 16, 8), seed=seed)
            mask = make_coded_mask((16, 16), 8, seed + 500)
            coded = apply_mask(video, mask)
            zf_db = psnr(mask.data * coded[..., None], video, default_peak(video))
            prob = DecompositionProblem(
                target=coded, mode="split_2d1d", rank=8, epochs=self.VIDEO_EPOCHS,
                schedule=FIXED, depth=2, hidden_channels=16, seed=seed,
                oracle=video, operator=CodedExposureOperator(mask),
                signal_shape=(16, 16, 8),
            )
            res = run_decomposition(prob)
            margins.append(float(np.nanmax(res.psnr_history)) - zf_db)
        assert np.mean(margins) >= 3.0, margins

    def test_tomography_beats_voxel_descent(self):
        n, ns = 32, 8
        wins = []
        for seed in range(2):
            vol, _ = make_phantom("shepp_like_volume", (n, n, ns), seed=seed)
            geom = ProjectionGeometry(
                angles=tuple(np.linspace(0, np.pi, 40, endpoint=False)),
                image_size=n,
            )
            op = RadonOperator(geom)
            sino = op.forward(vol)
            scale = max(sino.max(), 1e-9)
            sino_noisy = degrade(
                np.maximum(sino, 0) / scale,
                NoiseSpec("poisson", seed=seed + 900, lam_max=100.0),
            ) * scale
            peak = default_peak(vol)
            vd_db = psnr(
                voxel_descent(sino_noisy, op, (n, n, ns), self.RADON_EPOCHS,
                              1e-2, seed),
                vol, peak,
            )
            prob = DecompositionProblem(
                target=sino_noisy, mode="cp", rank=64, epochs=self.RADON_EPOCHS,
                schedule=FIXED, depth=2, hidden_channels=72, seed=seed,
                oracle=vol, operator=op, signal_shape=(n, n, ns),
            )
            res = run_decomposition(prob)
            wins.append(float(np.nanmax(res.psnr_history)) - vd_db)
        assert np.mean(wins) > 0.0, wins

    def test_projection_operator_properties(self, rng):
        geom = ProjectionGeometry(
            angles=tuple(np.linspace(0, np.pi, 12, endpoint=False)), image_size=16
        )
        x = rng.normal(size=(16, 16))
        y = rng.normal(size=(16, 16))
        lhs = radon_project(2.0 * x - 0.7 * y, geom)
        rhs = 2.0 * radon_project(x, geom) - 0.7 * radon_project(y, geom)
        np.testing.assert_allclose(lhs, rhs, atol=1e-10)

        img = rng.uniform(size=(16, 16))
        sums = radon_project(img, geom).sum(axis=1)
        np.testing.assert_allclose(sums, img.sum(), rtol=1e-6)

        mat = geom.matrix()
        u = rng.normal(size=mat.shape[1])
        v = rng.normal(size=mat.shape[0])
        assert (mat @ u) @ v == pytest.approx(u @ (mat.T @ v), rel=1e-12)


class TestReproducibility:
    def test_bench_rerun_is_byte_identical(self, tmp_path, capsys):
        blobs = []
        for name in ("first", "second"):
            out = tmp_path / name
            assert cli_main(["bench-noise", "--quick", "--out", str(out)]) == 0
            files = sorted(p for p in out.iterdir() if "timing" not in p.name)
            assert files
            blobs.append([p.read_bytes() for p in files])
        capsys.readouterr()
        assert blobs[0] == blobs[1]

    def test_tensor_file_float32_exact(self, tmp_path, rng):
        for shape in ((17,), (5, 9), (3, 4, 5)):
            t = rng.normal(size=shape).astype(np.float32)
            write_tensor(tmp_path / "t.dt", t)
            np.testing.assert_array_equal(
                read_tensor(tmp_path / "t.dt"), t.astype(np.float64)
            )
