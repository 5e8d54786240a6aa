import math

import numpy as np
import numpy.testing as npt
import pytest

from avae.models import Layer, MlpModel, build_generator
from avae.tensor import Tensor
from avae.toy import (
    branch_coverage,
    default_z_grid,
    generate_toy_batch,
    log_densities,
    log_density,
    manifold_distance,
    manifold_distances,
    manifold_sweep,
    recon_eval,
    surface_point,
)


def identity_pair():
    """Hand-built identity encoder/decoder over a 2-d latent space."""
    enc = MlpModel(
        layers=[Layer(Tensor(np.eye(2)), Tensor(np.zeros(2)), "identity")],
        role="encoder",
        log_var=Tensor(np.zeros(2)),
    )
    dec = MlpModel(
        layers=[Layer(Tensor(np.eye(2)), Tensor(np.zeros(2)), "identity")], role="decoder"
    )
    return enc, dec


class TestGenerator:
    def test_factor_formula_holds_exactly(self):
        rng = np.random.default_rng(0)
        batch = generate_toy_batch(500, rng)
        z1, z2, eps = batch.factors.T
        npt.assert_array_equal(batch.x[:, 0], 3 * z1 + 0.1 * eps)
        npt.assert_array_equal(batch.x[:, 1], np.cos(3 * z1) + np.tanh(3 * z2) + 0.1 * eps)

    def test_zero_factors_map_to_origin_branch(self):
        npt.assert_allclose(surface_point(0.0, 0.0), [0.0, 1.0])

    def test_tanh_saturation_limit(self):
        npt.assert_allclose(surface_point(0.0, 50.0), [0.0, 2.0], atol=1e-12)

    def test_first_coordinate_moments(self):
        rng = np.random.default_rng(123)
        x1 = generate_toy_batch(1_000_000, rng).x[:, 0]
        # Var[x1] = 9 + 0.01
        assert abs(x1.mean()) < 3 * math.sqrt(9.01) / 1000
        assert abs(x1.var() - 9.01) < 3 * 9.01 * math.sqrt(2.0 / 1e6)

    def test_rejects_empty(self):
        with pytest.raises(ValueError):
            generate_toy_batch(0, np.random.default_rng(0))


class TestManifoldDistance:
    def test_on_surface_points_are_zero(self):
        assert manifold_distance([0.0, 1.0]) < 1e-4

    def test_point_above_strip(self):
        # nearest surface point below (0, 3) has second coordinate 2
        assert manifold_distance([0.0, 3.0]) == pytest.approx(1.0, abs=1e-3)

    def test_batch_matches_single(self):
        rng = np.random.default_rng(9)
        pts = rng.normal(0, 2, size=(40, 2))
        batch = manifold_distances(pts)
        singles = np.array([manifold_distance(p) for p in pts])
        npt.assert_allclose(batch, singles, atol=1e-10)
        shuffled = manifold_distances(pts[::-1])[::-1]
        npt.assert_allclose(batch, shuffled, atol=1e-10)

    def test_surface_sweep_property(self):
        rng = np.random.default_rng(77)
        z1 = rng.uniform(-3, 3, 1000)
        z2 = rng.uniform(-3, 3, 1000)
        dists = manifold_distances(surface_point(z1, z2))
        assert np.max(dists) < 1e-3


class TestLogDensity:
    def test_on_strip_beats_off_strip(self):
        rng = np.random.default_rng(3)
        assert log_density([0.0, 1.0], 100_000, rng) > log_density([0.0, 3.0], 100_000, rng)

    def test_seed_self_consistency(self):
        p = [1.0, 0.3]
        a, sa = log_densities(np.array([p]), 200_000, np.random.default_rng(1), return_se=True)
        b, sb = log_densities(np.array([p]), 200_000, np.random.default_rng(2), return_se=True)
        assert abs(a[0] - b[0]) < 3 * math.hypot(sa[0], sb[0])

    def test_estimator_normalizes_to_one(self):
        # coarse grid over the bulk of the support integrates to ~1
        xs = np.arange(-12.0, 12.0, 0.1)
        ys = np.arange(-3.5, 3.5, 0.1)
        grid = np.array([[x, y] for x in xs for y in ys])
        logq = log_densities(grid, 20_000, np.random.default_rng(11))
        mass = np.sum(np.exp(logq)) * 0.1 * 0.1
        assert abs(mass - 1.0) < 0.05

    def test_density_peaks_near_manifold(self):
        rng = np.random.default_rng(21)
        xs = np.linspace(-5, 5, 21)
        ys = np.linspace(-3, 3, 13)
        grid = np.array([[x, y] for x in xs for y in ys])
        logq = log_densities(grid, 50_000, rng)
        best = grid[np.argmax(logq)]
        assert manifold_distance(best) < 0.2

    def test_degenerate_estimate_is_minus_inf(self):
        rng = np.random.default_rng(4)
        assert log_density([500.0, 500.0], 10_000, rng) == -math.inf


class TestManifoldSweep:
    def test_zero_model_constant_curve(self):
        rng = np.random.default_rng(5)
        gen = build_generator(1, 1, 2, 8, "tanh", rng, use_xi=False)
        for p in gen.parameters():
            p.data = np.zeros_like(p.data)
        rows = manifold_sweep(gen, xi_policy="none")
        assert np.all(rows[:, 2:] == 0.0)

    def test_row_count_grid_times_draws(self):
        rng = np.random.default_rng(6)
        gen = build_generator(1, 1, 2, 8, "tanh", rng, use_xi=True)
        grid = default_z_grid()
        rows = manifold_sweep(gen, xi_policy=3, dim_xi=1, rng=rng)
        assert rows.shape == (grid.size * 3, 4)
        assert set(np.unique(rows[:, 1])) == {0.0, 1.0, 2.0}
        zero_rows = manifold_sweep(gen, xi_policy="zero", dim_xi=1)
        assert zero_rows.shape == (grid.size, 4)


class TestBranchCoverage:
    def test_identical_sets_cover_fully(self):
        rng = np.random.default_rng(8)
        data = generate_toy_batch(20_000, rng).x
        assert branch_coverage(data, data) == pytest.approx(1.0)

    def test_conditional_mean_curve_scores_low(self):
        # a deterministic midline curve collapses the per-bin spread
        rng = np.random.default_rng(9)
        data = generate_toy_batch(20_000, rng).x
        x1 = data[:, 0]
        midline = np.stack([x1, np.cos(x1)], axis=1)
        assert branch_coverage(midline, data) < 0.3

    def test_monotone_in_generated_spread(self):
        rng = np.random.default_rng(10)
        data = generate_toy_batch(20_000, rng).x
        prev = -1.0
        for scale in (0.1, 0.4, 0.8, 1.2):
            gen = data.copy()
            gen[:, 1] = np.cos(gen[:, 0]) + scale * (gen[:, 1] - np.cos(gen[:, 0]))
            cov = branch_coverage(gen, data)
            assert cov >= prev - 1e-9
            prev = cov

    def test_collapsed_generator_scores_zero(self):
        rng = np.random.default_rng(11)
        data = generate_toy_batch(5_000, rng).x
        far = data + np.array([100.0, 0.0])
        assert branch_coverage(far, data) == 0.0

    def test_errors_when_data_misses_bins(self):
        rng = np.random.default_rng(11)
        gen = generate_toy_batch(5_000, rng).x
        data = gen + np.array([100.0, 0.0])  # all reference mass outside the bins
        with pytest.raises(ValueError):
            branch_coverage(gen, data)


class TestReconEval:
    def test_identity_pair_on_manifold(self):
        enc, dec = identity_pair()
        rng = np.random.default_rng(12)
        z1 = rng.standard_normal(12_000)
        z2 = rng.standard_normal(12_000)
        from avae.toy import ToyBatch

        xs = surface_point(z1, z2)
        batch = ToyBatch(x=xs, factors=np.stack([z1, z2, np.zeros_like(z1)], axis=1))
        rep = recon_eval(enc, dec, batch, mc_draws=10_000, rng=np.random.default_rng(0))
        assert rep.mean_manifold_distance < 1e-3
        assert rep.recon_mse < 1e-12
        assert rep.sample_count == 12_000
        assert rep.branch_coverage == pytest.approx(1.0)

    def test_report_is_deterministic(self):
        rng = np.random.default_rng(13)
        gen = build_generator(1, 1, 2, 16, "tanh", rng, use_xi=True)
        for p in gen.parameters():
            p.data = p.data * 40.0  # spread outputs across the coverage bins
        enc_1d = MlpModel(
            layers=[Layer(Tensor(np.array([[0.3], [0.1]])), Tensor(np.zeros(1)), "identity")],
            role="encoder",
            log_var=Tensor(np.zeros(1)),
        )
        batch = generate_toy_batch(11_000, np.random.default_rng(14))
        a = recon_eval(enc_1d, gen, batch, rng=np.random.default_rng(42))
        b = recon_eval(enc_1d, gen, batch, rng=np.random.default_rng(42))
        assert a == b
