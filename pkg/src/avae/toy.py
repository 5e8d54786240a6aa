"""2D toy dataset, brute-force oracles, and quantitative manifold metrics.

Data generation: z1, z2, eps ~ N(0,1) and
x = (3 z1 + 0.1 eps, cos(3 z1) + tanh(3 z2) + 0.1 eps).
The noiseless surface {f(z1, z2, 0)} is the strip swept by the tanh branch
between cos(3 z1) - 1 and cos(3 z1) + 1; the data itself concentrates near
the two branch edges because tanh(3 z2) is strongly bimodal.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .models import GeneratorInput, MlpModel, encoder_forward, generator_forward, mlp_forward
from .tensor import Tensor

NOISE_SCALE = 0.1
Z1_GRID_LO, Z1_GRID_HI, Z1_GRID_STEP = -4.0, 4.0, 1e-3
_T_MAX = math.tanh(3.0 * Z1_GRID_HI)  # z2 range matches the z1 grid
_GOLDEN = (math.sqrt(5.0) - 1.0) / 2.0

COVERAGE_BINS = 20
COVERAGE_RANGE = (-6.0, 6.0)


@dataclass
class ToyBatch:
    """Samples with their generating factors retained for oracle metrics."""

    x: np.ndarray  # (n, 2)
    factors: np.ndarray  # (n, 3): z1, z2, eps

    def __len__(self):
        return self.x.shape[0]


@dataclass
class EvalReport:
    mean_manifold_distance: float
    mean_log_density: float
    recon_mse: float
    branch_coverage: float
    sample_count: int

    FIELDS = (
        "mean_manifold_distance",
        "mean_log_density",
        "recon_mse",
        "branch_coverage",
        "sample_count",
    )

    def values(self):
        return tuple(getattr(self, f) for f in self.FIELDS)


def surface_point(z1, z2) -> np.ndarray:
    """f(z1, z2, 0) on the noiseless surface."""
    return np.stack([3.0 * np.asarray(z1), np.cos(3.0 * np.asarray(z1)) + np.tanh(3.0 * np.asarray(z2))], axis=-1)


def generate_toy_batch(n: int, rng: np.random.Generator) -> ToyBatch:
    if n < 1:
        raise ValueError("n must be >= 1")
    z1 = rng.standard_normal(n)
    z2 = rng.standard_normal(n)
    eps = rng.standard_normal(n)
    x1 = 3.0 * z1 + NOISE_SCALE * eps
    x2 = np.cos(3.0 * z1) + np.tanh(3.0 * z2) + NOISE_SCALE * eps
    return ToyBatch(x=np.stack([x1, x2], axis=1), factors=np.stack([z1, z2, eps], axis=1))


def _strip_sqdist(p1, p2, z1):
    """Squared distance from points to the surface slice at z1, with the tanh
    coordinate minimized analytically (clipped to the z2 in [-4, 4] range)."""
    dx1 = p1 - 3.0 * z1
    resid = p2 - np.cos(3.0 * z1)
    dx2 = resid - np.clip(resid, -_T_MAX, _T_MAX)
    return dx1 * dx1 + dx2 * dx2


def manifold_distances(points: np.ndarray, chunk: int = 512) -> np.ndarray:
    """Distance from each point to the noiseless surface, accurate to 1e-4.

    Dense grid over z1 in [-4, 4] (step 1e-3, z2 minimized per z1), then a
    golden-section refinement of z1 around the best grid cell.
    """
    points = np.asarray(points, dtype=np.float64)
    if points.ndim == 1:
        points = points[None, :]
    grid = np.arange(Z1_GRID_LO, Z1_GRID_HI + Z1_GRID_STEP / 2, Z1_GRID_STEP)
    out = np.empty(points.shape[0])
    for start in range(0, points.shape[0], chunk):
        p = points[start : start + chunk]
        p1 = p[:, 0:1]
        p2 = p[:, 1:2]
        d2 = _strip_sqdist(p1, p2, grid[None, :])
        best = np.argmin(d2, axis=1)
        z_best = grid[best]
        lo = np.maximum(z_best - Z1_GRID_STEP, Z1_GRID_LO)
        hi = np.minimum(z_best + Z1_GRID_STEP, Z1_GRID_HI)
        p1f, p2f = p[:, 0], p[:, 1]
        for _ in range(25):
            m1 = hi - _GOLDEN * (hi - lo)
            m2 = lo + _GOLDEN * (hi - lo)
            f1 = _strip_sqdist(p1f, p2f, m1)
            f2 = _strip_sqdist(p1f, p2f, m2)
            take_left = f1 < f2
            hi = np.where(take_left, m2, hi)
            lo = np.where(take_left, lo, m1)
        z_ref = 0.5 * (lo + hi)
        out[start : start + chunk] = np.sqrt(
            np.minimum(_strip_sqdist(p1f, p2f, z_ref), d2[np.arange(p.shape[0]), best])
        )
    return out


def manifold_distance(p) -> float:
    """Distance of a single 2-vector to the noiseless surface."""
    return float(manifold_distances(np.asarray(p, dtype=np.float64)[None, :])[0])


def log_densities(
    points: np.ndarray, mc_draws: int, rng: np.random.Generator, return_se: bool = False
):
    """Monte-Carlo log density of points under the toy data distribution.

    Fixed estimator: average over draws of (z1, z2) of the Gaussian density
    N(residual; 0, 0.1^2 I) of the residual p - f(z1, z2, 0).  Each mixture
    component integrates to one, so the estimate is normalized.  A zero
    estimate returns -inf; the optional standard error of the log comes from
    the delta method.
    """
    if mc_draws < 1:
        raise ValueError("mc_draws must be >= 1")
    points = np.asarray(points, dtype=np.float64)
    single = points.ndim == 1
    if single:
        points = points[None, :]
    z1 = rng.standard_normal(mc_draws)
    z2 = rng.standard_normal(mc_draws)
    m1 = 3.0 * z1
    m2 = np.cos(3.0 * z1) + np.tanh(3.0 * z2)
    norm = 1.0 / (2.0 * math.pi * NOISE_SCALE**2)
    inv_two_var = 1.0 / (2.0 * NOISE_SCALE**2)
    n = points.shape[0]
    est = np.empty(n)
    se = np.empty(n)
    chunk = max(1, int(4e6) // mc_draws)
    for start in range(0, n, chunk):
        p = points[start : start + chunk]
        r2 = (p[:, 0:1] - m1[None, :]) ** 2 + (p[:, 1:2] - m2[None, :]) ** 2
        q = norm * np.exp(-r2 * inv_two_var)
        est[start : start + chunk] = q.mean(axis=1)
        se[start : start + chunk] = q.std(axis=1) / math.sqrt(mc_draws)
    with np.errstate(divide="ignore"):
        logs = np.where(est > 0.0, np.log(np.maximum(est, 1e-300)), -np.inf)
    log_se = np.where(est > 0.0, se / np.maximum(est, 1e-300), np.inf)
    if single:
        return (float(logs[0]), float(log_se[0])) if return_se else float(logs[0])
    return (logs, log_se) if return_se else logs


def log_density(p, mc_draws: int, rng: np.random.Generator) -> float:
    return log_densities(np.asarray(p, dtype=np.float64), mc_draws, rng)


def default_z_grid() -> np.ndarray:
    return np.arange(-3.0, 3.0 + 1e-9, 0.01)


def manifold_sweep(
    model: MlpModel,
    zs: np.ndarray | None = None,
    xi_policy="none",
    dim_xi: int = 1,
    rng: np.random.Generator | None = None,
) -> np.ndarray:
    """Tabulate model outputs over a latent grid: rows (z, xi_index, x1, x2).

    xi_policy 'none' feeds z alone (decoder / deterministic generator),
    'zero' appends xi = 0 (the canonical trace of a stochastic generator),
    an integer k appends k sampled xi draws per grid point.
    """
    zs = default_z_grid() if zs is None else np.asarray(zs, dtype=np.float64)
    z_col = zs[:, None]
    if xi_policy == "none":
        blocks = [(0, None)]
    elif xi_policy == "zero":
        blocks = [(0, np.zeros((zs.size, dim_xi)))]
    elif isinstance(xi_policy, int):
        if rng is None:
            raise ValueError("sampled xi policy needs an rng")
        blocks = [(k, rng.standard_normal((zs.size, dim_xi))) for k in range(xi_policy)]
    else:
        raise ValueError(f"unknown xi policy {xi_policy!r}")
    rows = []
    for index, xi in blocks:
        if xi is None:
            out = mlp_forward(model, Tensor(z_col)).data
        else:
            out = generator_forward(model, GeneratorInput(Tensor(z_col), Tensor(xi))).data
        rows.append(np.column_stack([zs, np.full(zs.size, float(index)), out]))
    return np.concatenate(rows, axis=0)


def branch_coverage(generated: np.ndarray, data: np.ndarray) -> float:
    """Spread ratio of the second coordinate, binned on the first.

    Bins the first coordinate into 20 bins over [-6, 6]; within each bin the
    inter-decile range of the second coordinate is compared and coverage is
    the mean of min(1, generated / data).  Bins empty of data (no reference
    spread) are skipped; more than half skipped is an error.  A bin with data
    but no generated points scores zero coverage.
    """
    generated = np.asarray(generated, dtype=np.float64)
    data = np.asarray(data, dtype=np.float64)
    edges = np.linspace(COVERAGE_RANGE[0], COVERAGE_RANGE[1], COVERAGE_BINS + 1)
    ratios = []
    skipped = 0
    for lo, hi in zip(edges[:-1], edges[1:]):
        d = data[(data[:, 0] >= lo) & (data[:, 0] < hi), 1]
        if d.size == 0:
            skipped += 1
            continue
        d_lo, d_hi = np.percentile(d, [10.0, 90.0])
        d_spread = d_hi - d_lo
        if d_spread <= 0.0:
            skipped += 1
            continue
        g = generated[(generated[:, 0] >= lo) & (generated[:, 0] < hi), 1]
        if g.size == 0:
            ratios.append(0.0)
            continue
        g_lo, g_hi = np.percentile(g, [10.0, 90.0])
        ratios.append(min(1.0, (g_hi - g_lo) / d_spread))
    if skipped > COVERAGE_BINS // 2:
        raise ValueError(f"{skipped} of {COVERAGE_BINS} coverage bins lack data")
    return float(np.mean(ratios))


def reconstruct(
    encoder: MlpModel,
    recon_model: MlpModel,
    xs: np.ndarray,
    xi: np.ndarray | None = None,
) -> np.ndarray:
    """Encode with the posterior mean (no sampling) and reconstruct.

    A generator whose input is wider than the code gets xi = 0 unless a drawn
    xi is supplied.
    """
    mu = encoder_forward(encoder, Tensor(np.asarray(xs, dtype=np.float64))).mu
    dim_z = mu.shape[1]
    if recon_model.input_dim == dim_z:
        return mlp_forward(recon_model, mu).data
    dim_xi = recon_model.input_dim - dim_z
    if xi is None:
        xi = np.zeros((mu.shape[0], dim_xi))
    return generator_forward(recon_model, GeneratorInput(mu, Tensor(xi))).data


def recon_eval(
    encoder: MlpModel,
    recon_model: MlpModel,
    batch: ToyBatch,
    mc_draws: int = 10000,
    rng: np.random.Generator | None = None,
) -> EvalReport:
    """Aggregate reconstruction metrics on a held-out batch.

    Inputs are encoded with the posterior mean (no sampling).  A stochastic
    generator reconstructs by drawing one xi per input, which is how such a
    model defines reconstruction; its xi = 0 trace is only a visualization
    device and sits in the low-density transition between branches.  Pass a
    seeded rng for a reproducible report.
    """
    rng = rng if rng is not None else np.random.default_rng(0)
    xs = batch.x
    mu_dim = encoder_forward(encoder, Tensor(xs[:1])).mu.shape[1]
    if recon_model.input_dim > mu_dim:
        xi = rng.standard_normal((xs.shape[0], recon_model.input_dim - mu_dim))
        recon = reconstruct(encoder, recon_model, xs, xi=xi)
    else:
        recon = reconstruct(encoder, recon_model, xs)
    dists = manifold_distances(recon)
    logd = log_densities(recon, mc_draws, rng)
    mse = float(0.5 * np.mean(np.sum((recon - xs) ** 2, axis=1)))
    coverage = branch_coverage(recon, xs)
    return EvalReport(
        mean_manifold_distance=float(np.mean(dists)),
        mean_log_density=float(np.mean(logd)),
        recon_mse=mse,
        branch_coverage=coverage,
        sample_count=len(batch),
    )
