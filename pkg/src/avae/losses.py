"""Scalar training objectives, each a pure function of network outputs.

Conventions: all losses are batch means so learning rates are batch-size
invariant; latent-space losses average over latent dimensions for scale
invariance.  The critic is trained toward 1 on generated samples and 0 on
real samples, so its logit at optimum is log(p_gen / p_data).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .models import EncoderOutput, MlpModel, encoder_forward
from .tensor import DomainError, ShapeError, Tensor, erf_values

# sqrt(1 - sigma^2) is undefined for sigma >= 1; a latent dimension with
# sigma near 1 carries pure noise, so the target coefficient is driven to 0.
SIGMA_SQ_CEILING = 1.0 - 1e-6


@dataclass
class LossBundle:
    """One step's scalar losses; l_vae = l_recon + beta*l_kl, l_g = l_z + l_m."""

    l_vae: float
    l_recon: float
    l_kl: float
    l_g: float
    l_z: float
    l_m: float
    l_c: float
    variant: str
    beta: float

    FIELDS = ("l_vae", "l_recon", "l_kl", "l_g", "l_z", "l_m", "l_c")

    def values(self) -> tuple[float, ...]:
        return tuple(getattr(self, f) for f in self.FIELDS)


def _require_positive_sigma(sigma: Tensor):
    if np.any(sigma.data <= 0.0):
        raise DomainError("sigma must be strictly positive")


def _require_matching(a: Tensor, b: Tensor, what: str):
    if a.data.shape != b.data.shape:
        raise ShapeError(f"{what}: shapes {a.data.shape} and {b.data.shape} disagree")


def kl_term(mu: Tensor, sigma: Tensor) -> Tensor:
    """Closed-form KL(N(mu, diag(sigma^2)) || N(0, I)), averaged over the batch.

    Equals 1/2 sum_j (sigma_j^2 + mu_j^2 - 1 - log sigma_j^2); sigma is the
    shared per-dimension scale vector, mu is per sample.
    """
    _require_positive_sigma(sigma)
    if mu.data.ndim != 2 or sigma.data.ndim != 1 or mu.data.shape[1] != sigma.data.shape[0]:
        raise ShapeError(f"mu {mu.data.shape} and sigma {sigma.data.shape} disagree")
    var = sigma.square()
    sigma_part = (var - 1.0 - var.log()).sum()
    mu_part = mu.square().sum(axis=1).mean()
    return 0.5 * (mu_part + sigma_part)


def recon_mse(mu_x: Tensor, x: Tensor) -> Tensor:
    """Gaussian reconstruction term: 1/2 ||mu_x - x||^2 per sample, batch mean."""
    _require_matching(mu_x, x, "recon_mse")
    return 0.5 * (mu_x - x).square().sum(axis=1).mean()


def vae_loss(x: Tensor, enc_out: EncoderOutput, dec_out: Tensor, beta: float) -> Tensor:
    """Reconstruction plus beta-weighted KL."""
    return recon_mse(dec_out, x) + beta * kl_term(enc_out.mu, enc_out.sigma())


def critic_loss(logit_real: Tensor, logit_fake: Tensor) -> Tensor:
    """Cross-entropy toward 1 on generated and 0 on real samples.

    -mean log(1 - C(x_real)) - mean log C(x_fake), computed from logits via
    softplus so no intermediate exp can overflow.
    """
    return logit_real.softplus().mean() + (-logit_fake).softplus().mean()


def manifold_loss(logit_fake: Tensor) -> Tensor:
    """Mean critic logit on generated samples; at the critic optimum this is
    an estimate of log(p_gen/p_data), minimized by the generator."""
    return logit_fake.mean()


def latent_loss_a(mu_fake: Tensor, z_target: Tensor, sigma: Tensor) -> Tensor:
    """Sigma-whitened squared distance between the re-encoded latent mean of a
    generated sample and its source code: 1/2 mean ||(mu - z)/sigma||^2."""
    _require_positive_sigma(sigma)
    _require_matching(mu_fake, z_target, "latent_loss_a")
    r = (mu_fake - z_target) / sigma
    return 0.5 * r.square().mean(axis=1).mean()


def latent_loss_b(mu_fake: Tensor, z_target: Tensor, sigma: Tensor) -> Tensor:
    """Variant with the target rescaled by sqrt(1 - sigma^2), so the optimum
    matches the marginal distribution of encoded means; sigma^2 is clamped
    below 1 inside this loss only."""
    _require_positive_sigma(sigma)
    _require_matching(mu_fake, z_target, "latent_loss_b")
    var = sigma.square()
    var_clamped = var - (var - SIGMA_SQ_CEILING).relu()
    coef = (1.0 - var_clamped).sqrt()
    r = (mu_fake - coef * z_target) / sigma
    return 0.5 * r.square().mean(axis=1).mean()


def generator_loss(l_z: Tensor, l_m: Tensor) -> Tensor:
    """Unweighted sum of the latent reconstruction and manifold losses."""
    return l_z + l_m


def frontier_expected_pixel(x: float, z: float, sigma: float) -> float:
    """Optimal blurry reconstruction of a binary edge at uncertain position:
    1/2 (1 + erf((x - z) / (sqrt(2) sigma)))."""
    if sigma <= 0.0:
        raise DomainError("sigma must be positive")
    return float(0.5 * (1.0 + erf_values((x - z) / (math.sqrt(2.0) * sigma))))


def _diag_normal_logpdf(z: np.ndarray, mean: np.ndarray, std: np.ndarray) -> np.ndarray:
    # std is a shared (d,) scale vector; mean may be per-row
    d = z.shape[1]
    r = (z - mean) / std
    return -0.5 * d * math.log(2.0 * math.pi) - np.sum(np.log(std)) - 0.5 * np.sum(r * r, axis=1)


def kl_decomposition_estimate(
    encoder: MlpModel, xs: np.ndarray, mc_draws: int, rng: np.random.Generator
) -> tuple[float, float]:
    """Monte-Carlo split of the mean KL into mutual information and the KL of
    the aggregate posterior from the prior.

    The aggregate posterior is approximated by a moment-matched Gaussian
    (adequate at one latent dimension, documented as approximate).  Both terms
    use the same draws, so their sum is an unbiased MC estimate of the mean
    closed-form KL over the sample set.  Diagnostic only, never trained on.
    """
    xs = np.asarray(xs, dtype=np.float64)
    if xs.ndim != 2 or xs.shape[0] == 0:
        raise ValueError("xs must be a non-empty (n, dim_x) array")
    out = encoder_forward(encoder, Tensor(xs))
    mu = out.mu.data
    sigma = np.exp(0.5 * out.log_var.data)

    agg_mean = mu.mean(axis=0)
    agg_std = np.sqrt(mu.var(axis=0) + sigma**2)

    idx = rng.integers(0, xs.shape[0], size=mc_draws)
    z = mu[idx] + rng.standard_normal((mc_draws, mu.shape[1])) * sigma
    log_q = _diag_normal_logpdf(z, mu[idx], sigma)
    log_agg = _diag_normal_logpdf(z, agg_mean, agg_std)
    log_prior = _diag_normal_logpdf(z, np.zeros_like(agg_mean), np.ones_like(agg_std))
    return float(np.mean(log_q - log_agg)), float(np.mean(log_agg - log_prior))
