"""Finite-difference verification of every loss gradient.

Central differences (step 1e-5) against the tape's reverse-mode gradients for
every parameter of a small randomly initialized four-network setup.  The
relative error denominator is floored at 1e-3 so near-zero gradients are held
to a 1e-7 absolute tolerance instead of amplifying finite-difference noise.
"""

from __future__ import annotations

import numpy as np

from . import losses
from .models import (
    GeneratorInput,
    build_critic,
    build_decoder,
    build_encoder,
    build_generator,
    critic_forward,
    decoder_forward,
    encoder_forward,
    generator_forward,
)
from .tensor import Tape, Tensor

LOSS_NAMES = ("l_vae", "l_kl", "l_recon", "l_c", "l_m", "l_z_a", "l_z_b", "l_g")

FD_STEP = 1e-5
REL_TOLERANCE = 1e-4
_REL_FLOOR = 1e-3


def _forward_losses(nets, draws) -> dict[str, Tensor]:
    enc, dec, gen, critic = nets
    x, eps, z_fake, xi = draws
    enc_out = encoder_forward(enc, x)
    sigma = enc_out.sigma()
    z_real = enc_out.mu + eps * sigma
    mu_dec = decoder_forward(dec, z_real)
    l_recon = losses.recon_mse(mu_dec, x)
    l_kl = losses.kl_term(enc_out.mu, sigma)
    l_vae = l_recon + l_kl

    x_fake = generator_forward(gen, GeneratorInput(z_fake, xi))
    enc_fake = encoder_forward(enc, x_fake)
    l_z_a = losses.latent_loss_a(enc_fake.mu, z_fake, sigma)
    l_z_b = losses.latent_loss_b(enc_fake.mu, z_fake, sigma)
    _, logit_real = critic_forward(critic, x)
    _, logit_fake = critic_forward(critic, x_fake)
    l_m = losses.manifold_loss(logit_fake)
    l_c = losses.critic_loss(logit_real, logit_fake)
    l_g = losses.generator_loss(l_z_b, l_m)
    return {
        "l_vae": l_vae,
        "l_kl": l_kl,
        "l_recon": l_recon,
        "l_c": l_c,
        "l_m": l_m,
        "l_z_a": l_z_a,
        "l_z_b": l_z_b,
        "l_g": l_g,
    }


def run_suite(seed: int, hidden_width: int = 8, batch: int = 4) -> dict[str, float]:
    """Max relative gradient error per loss on one random small configuration."""
    rng = np.random.default_rng(seed)
    dim_x = 2
    dim_z = int(rng.integers(1, 4))
    dim_xi = int(rng.integers(1, 3))
    nets = (
        build_encoder(dim_x, dim_z, hidden_width, "tanh", rng),
        build_decoder(dim_z, dim_x, hidden_width, "tanh", rng),
        build_generator(dim_z, dim_xi, dim_x, hidden_width, "tanh", rng, use_xi=True),
        build_critic(dim_x, hidden_width, "tanh", rng),
    )
    # non-trivial log_var so sigma != 1 exercises both latent-loss branches
    nets[0].log_var.data = rng.normal(-0.5, 0.3, size=dim_z)
    draws = (
        Tensor(rng.normal(0.0, 2.0, size=(batch, dim_x))),
        Tensor(rng.standard_normal((batch, dim_z))),
        Tensor(rng.standard_normal((batch, dim_z))),
        Tensor(rng.standard_normal((batch, dim_xi))),
    )
    params = [p for net in nets for p in net.parameters()]

    analytic: dict[str, list[np.ndarray]] = {}
    with Tape() as tape:
        values = _forward_losses(nets, draws)
        for name, loss in values.items():
            grad_map = tape.backward(loss)
            analytic[name] = [
                grad_map[p.node].data if p.node in grad_map else np.zeros_like(p.data)
                for p in params
            ]

    fd: dict[str, list[np.ndarray]] = {name: [np.zeros_like(p.data) for p in params] for name in LOSS_NAMES}
    for pi, p in enumerate(params):
        flat = p.data.reshape(-1)
        for j in range(flat.size):
            orig = flat[j]
            flat[j] = orig + FD_STEP
            up = {k: v.item() for k, v in _forward_losses(nets, draws).items()}
            flat[j] = orig - FD_STEP
            down = {k: v.item() for k, v in _forward_losses(nets, draws).items()}
            flat[j] = orig
            for name in LOSS_NAMES:
                fd[name][pi].reshape(-1)[j] = (up[name] - down[name]) / (2.0 * FD_STEP)

    result = {}
    for name in LOSS_NAMES:
        worst = 0.0
        for a, f in zip(analytic[name], fd[name]):
            denom = np.maximum(np.maximum(np.abs(a), np.abs(f)), _REL_FLOOR)
            worst = max(worst, float(np.max(np.abs(a - f) / denom)))
        result[name] = worst
    return result
