"""Training loop: Adam updates, deterministic seeding, checkpointing.

One training step runs a single shared forward pass and then applies four
disjoint parameter updates: encoder and decoder from the VAE loss only, the
generator from its combined loss only, the critic from the cross-entropy
only.  Generator-loss gradients flow through the encoder and critic but never
update them.

RNG discipline: five independent seeded streams, consumed by exactly one
purpose each, in the order (init, data, eps, zfake, xi).  Adding logging or
evaluation never perturbs a run.
"""

from __future__ import annotations

import json
import struct
import time
from dataclasses import asdict, dataclass

import numpy as np

from . import losses
from .models import (
    GeneratorInput,
    MlpModel,
    build_critic,
    build_decoder,
    build_encoder,
    build_generator,
    critic_forward,
    decoder_forward,
    encoder_forward,
    generator_forward,
)
from .tensor import DomainError, NonFiniteError, Tape, Tensor


class ConfigError(Exception):
    pass


class CheckpointError(Exception):
    pass


class TrainAbortError(Exception):
    """Raised when a step produces a non-finite loss; training must not
    silently skip diverged steps."""

    def __init__(self, message: str, iteration: int):
        super().__init__(message)
        self.iteration = iteration


STREAM_NAMES = ("init", "data", "eps", "zfake", "xi")
MODEL_ROLES = ("encoder", "decoder", "generator", "critic")
ALGORITHMS = ("avae", "vae")

CHECKPOINT_MAGIC = b"AVAE"
CHECKPOINT_VERSION = 1


@dataclass
class TrainConfig:
    """All hyperparameters of a run; (seed, config) fully determine the log.

    Adam momentum constants follow the DCGAN recommendation (beta1 0.5,
    beta2 0.999); the learning rate defaults to 1e-3 because the DCGAN value
    of 2e-4 leaves the critic uninformative at this problem scale.  Hidden
    activations default to leaky-relu: the piecewise-linear generator forms a
    sharp branch transition in its noise input where tanh smears samples into
    the low-density gap between branches.  beta_kl defaults to 1.
    """

    dim_x: int = 2
    dim_z: int = 1
    dim_xi: int = 1
    hidden_width: int = 128
    batch_size: int = 64
    iterations: int = 20000
    learning_rate: float = 1e-3
    adam_beta1: float = 0.5
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    beta_kl: float = 1.0
    loss_variant: str = "b"
    use_xi: bool = True
    lz_weight: float = 1.0
    seed: int = 0
    hidden_activation: str = "leaky_relu"
    checkpoint_every: int = 0  # 0: final checkpoint only

    def validate(self):
        for name in ("dim_x", "dim_z", "dim_xi", "hidden_width", "batch_size"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be >= 1")
        if self.iterations < 0:
            raise ConfigError("iterations must be >= 0")
        if self.learning_rate <= 0:
            raise ConfigError("learning_rate must be > 0")
        if self.beta_kl < 0:
            raise ConfigError("beta_kl must be >= 0")
        if self.loss_variant not in ("a", "b"):
            raise ConfigError("loss_variant must be 'a' or 'b'")
        if self.hidden_activation not in ("tanh", "leaky_relu"):
            raise ConfigError("hidden_activation must be 'tanh' or 'leaky_relu'")
        if self.checkpoint_every < 0:
            raise ConfigError("checkpoint_every must be >= 0")


@dataclass
class StepRecord:
    iteration: int
    bundle: losses.LossBundle
    wall_time: float


class RngStreams:
    """Named PCG64 streams spawned from one seed, one per purpose."""

    def __init__(self, seed: int | None = None, states: dict | None = None):
        if states is not None:
            self._gens = {}
            for name in STREAM_NAMES:
                bg = np.random.PCG64()
                bg.state = states[name]
                self._gens[name] = np.random.Generator(bg)
        else:
            children = np.random.SeedSequence(seed).spawn(len(STREAM_NAMES))
            self._gens = {
                name: np.random.Generator(np.random.PCG64(child))
                for name, child in zip(STREAM_NAMES, children)
            }

    def __getattr__(self, name):
        try:
            return self._gens[name]
        except KeyError:
            raise AttributeError(name) from None

    def state_dict(self) -> dict:
        return {name: self._gens[name].bit_generator.state for name in STREAM_NAMES}


@dataclass
class AdamState:
    """First/second moments and step counter for one parameter group."""

    m: list[np.ndarray]
    v: list[np.ndarray]
    step: int = 0

    @classmethod
    def for_params(cls, params: list[Tensor]) -> "AdamState":
        return cls(
            m=[np.zeros_like(p.data) for p in params],
            v=[np.zeros_like(p.data) for p in params],
        )


def adam_update(
    params: list[Tensor],
    grads: list[np.ndarray],
    state: AdamState,
    lr: float,
    beta1: float,
    beta2: float,
    eps: float,
):
    """Standard Adam with bias correction; mutates params and state."""
    state.step += 1
    bc1 = 1.0 - beta1**state.step
    bc2 = 1.0 - beta2**state.step
    for i, (p, g) in enumerate(zip(params, grads)):
        if p.data.shape != g.shape:
            raise ValueError(f"gradient shape {g.shape} != parameter shape {p.data.shape}")
        m, v = state.m[i], state.v[i]
        m *= beta1
        m += (1.0 - beta1) * g
        v *= beta2
        v += (1.0 - beta2) * (g * g)
        p.data = p.data - lr * (m / bc1) / (np.sqrt(v / bc2) + eps)


@dataclass
class ModelSet:
    encoder: MlpModel
    decoder: MlpModel
    generator: MlpModel
    critic: MlpModel

    def by_role(self, role: str) -> MlpModel:
        return getattr(self, role)


@dataclass
class TrainState:
    """Everything a run needs to continue bit-for-bit after a reload."""

    config: TrainConfig
    algorithm: str
    models: ModelSet
    opts: dict[str, AdamState]
    rng: RngStreams
    iteration: int = 0

    @classmethod
    def initialize(cls, config: TrainConfig, algorithm: str = "avae") -> "TrainState":
        config.validate()
        if algorithm not in ALGORITHMS:
            raise ConfigError(f"algorithm must be one of {ALGORITHMS}")
        rng = RngStreams(config.seed)
        init = rng.init
        act = config.hidden_activation
        models = ModelSet(
            encoder=build_encoder(config.dim_x, config.dim_z, config.hidden_width, act, init),
            decoder=build_decoder(config.dim_z, config.dim_x, config.hidden_width, act, init),
            generator=build_generator(
                config.dim_z, config.dim_xi, config.dim_x, config.hidden_width, act, init, config.use_xi
            ),
            critic=build_critic(config.dim_x, config.hidden_width, act, init),
        )
        opts = {role: AdamState.for_params(models.by_role(role).parameters()) for role in MODEL_ROLES}
        return cls(config=config, algorithm=algorithm, models=models, opts=opts, rng=rng)


def _collect(grad_map: dict, params: list[Tensor]) -> list[np.ndarray]:
    out = []
    for p in params:
        g = grad_map.get(p.node) if p.node is not None else None
        out.append(g.data if g is not None else np.zeros_like(p.data))
    return out


def train_step(
    state: TrainState, x_real: np.ndarray, loss_scales: tuple[float, float, float] = (1.0, 1.0, 1.0)
) -> StepRecord:
    """One alternating step on a fresh tape; see module docstring for the
    update partition.  loss_scales multiply (vae, generator, critic) losses,
    letting tests freeze a group by zeroing its loss."""
    cfg = state.config
    models = state.models
    t0 = time.perf_counter()
    s_vae, s_g, s_c = loss_scales
    try:
        with Tape() as tape:
            xr = Tensor(x_real)
            enc_out = encoder_forward(models.encoder, xr)
            sigma = enc_out.sigma()
            eps = Tensor(state.rng.eps.standard_normal(enc_out.mu.shape))
            z_real = enc_out.mu + eps * sigma
            mu_dec = decoder_forward(models.decoder, z_real)

            l_recon = losses.recon_mse(mu_dec, xr)
            l_kl = losses.kl_term(enc_out.mu, sigma)
            l_vae = s_vae * (l_recon + cfg.beta_kl * l_kl)

            if state.algorithm == "avae":
                z_fake = Tensor(state.rng.zfake.standard_normal((x_real.shape[0], cfg.dim_z)))
                xi = (
                    Tensor(state.rng.xi.standard_normal((x_real.shape[0], cfg.dim_xi)))
                    if cfg.use_xi
                    else None
                )
                x_fake = generator_forward(models.generator, GeneratorInput(z_fake, xi))
                enc_fake = encoder_forward(models.encoder, x_fake)
                latent_loss = losses.latent_loss_a if cfg.loss_variant == "a" else losses.latent_loss_b
                l_z = cfg.lz_weight * latent_loss(enc_fake.mu, z_fake, sigma)

                _, logit_real = critic_forward(models.critic, xr)
                _, logit_fake = critic_forward(models.critic, x_fake)
                l_m = losses.manifold_loss(logit_fake)
                l_g = s_g * losses.generator_loss(l_z, l_m)
                l_c = s_c * losses.critic_loss(logit_real, logit_fake)

            grads_vae = tape.backward(l_vae)
            updates = [
                ("encoder", models.encoder.parameters(), _collect(grads_vae, models.encoder.parameters())),
                ("decoder", models.decoder.parameters(), _collect(grads_vae, models.decoder.parameters())),
            ]
            if state.algorithm == "avae":
                grads_g = tape.backward(l_g)
                grads_c = tape.backward(l_c)
                updates.append(
                    ("generator", models.generator.parameters(), _collect(grads_g, models.generator.parameters()))
                )
                updates.append(
                    ("critic", models.critic.parameters(), _collect(grads_c, models.critic.parameters()))
                )
            bundle = losses.LossBundle(
                l_vae=l_vae.item(),
                l_recon=l_recon.item(),
                l_kl=l_kl.item(),
                l_g=l_g.item() if state.algorithm == "avae" else 0.0,
                l_z=l_z.item() if state.algorithm == "avae" else 0.0,
                l_m=l_m.item() if state.algorithm == "avae" else 0.0,
                l_c=l_c.item() if state.algorithm == "avae" else 0.0,
                variant=cfg.loss_variant,
                beta=cfg.beta_kl,
            )
    except (NonFiniteError, DomainError) as exc:
        raise TrainAbortError(
            f"non-finite loss at iteration {state.iteration + 1}: {exc}", state.iteration + 1
        ) from exc

    # all gradients were computed from the shared forward pass above, so the
    # four groups see a simultaneous update
    for role, params, grads in updates:
        adam_update(
            params, grads, state.opts[role], cfg.learning_rate, cfg.adam_beta1, cfg.adam_beta2, cfg.adam_eps
        )

    state.iteration += 1
    return StepRecord(iteration=state.iteration, bundle=bundle, wall_time=time.perf_counter() - t0)


def default_data_fn(n: int, rng: np.random.Generator) -> np.ndarray:
    from .toy import generate_toy_batch

    return generate_toy_batch(n, rng).x


def train_run(
    config: TrainConfig,
    *,
    algorithm: str = "avae",
    state: TrainState | None = None,
    data_fn=None,
    checkpoint_path=None,
) -> tuple[TrainState, list[StepRecord]]:
    """Run train_step until config.iterations, checkpointing at the configured
    cadence.  On a non-finite abort the last good checkpoint stays on disk and
    the abort propagates with its diagnostic.

    Passing a loaded state resumes it under the given config (dimensions must
    match the state's models); only then can iterations extend past the
    checkpointed count.
    """
    if state is None:
        state = TrainState.initialize(config, algorithm)
    else:
        state.config = config
    data_fn = data_fn or default_data_fn
    records: list[StepRecord] = []
    while state.iteration < config.iterations:
        x = data_fn(config.batch_size, state.rng.data)
        records.append(train_step(state, x))
        if (
            checkpoint_path is not None
            and config.checkpoint_every > 0
            and state.iteration % config.checkpoint_every == 0
        ):
            save_checkpoint(state, checkpoint_path)
    if checkpoint_path is not None:
        save_checkpoint(state, checkpoint_path)
    return state, records


# --- checkpoint container: magic, version u32, JSON meta, named f64 tensors ---


def _named_tensors(state: TrainState) -> list[tuple[str, np.ndarray]]:
    entries = []
    for role in MODEL_ROLES:
        model = state.models.by_role(role)
        for name, p in zip(model.parameter_names(), model.parameters()):
            entries.append((f"{role}.{name}", p.data))
    for role in MODEL_ROLES:
        opt = state.opts[role]
        for i, (m, v) in enumerate(zip(opt.m, opt.v)):
            entries.append((f"opt.{role}.{i}.m", m))
            entries.append((f"opt.{role}.{i}.v", v))
    return entries


def save_checkpoint(state: TrainState, path):
    meta = {
        "algorithm": state.algorithm,
        "config": asdict(state.config),
        "iteration": state.iteration,
        "adam_steps": {role: state.opts[role].step for role in MODEL_ROLES},
        "rng": state.rng.state_dict(),
    }
    meta_bytes = json.dumps(meta, sort_keys=True, separators=(",", ":")).encode("utf-8")
    entries = _named_tensors(state)
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(struct.pack("<I", CHECKPOINT_VERSION))
        fh.write(struct.pack("<I", len(meta_bytes)))
        fh.write(meta_bytes)
        fh.write(struct.pack("<I", len(entries)))
        for name, arr in entries:
            nb = name.encode("utf-8")
            fh.write(struct.pack("<I", len(nb)))
            fh.write(nb)
            fh.write(struct.pack("<I", arr.ndim))
            for d in arr.shape:
                fh.write(struct.pack("<Q", d))
            fh.write(np.ascontiguousarray(arr, dtype="<f8").tobytes())


def load_checkpoint(path) -> TrainState:
    try:
        with open(path, "rb") as fh:
            blob = fh.read()
    except OSError as exc:
        raise CheckpointError(f"cannot read checkpoint {path}: {exc}") from exc
    try:
        if blob[:4] != CHECKPOINT_MAGIC:
            raise CheckpointError(f"{path} is not a checkpoint (bad magic)")
        off = 4
        (version,) = struct.unpack_from("<I", blob, off)
        off += 4
        if version != CHECKPOINT_VERSION:
            raise CheckpointError(f"unsupported checkpoint version {version}")
        (meta_len,) = struct.unpack_from("<I", blob, off)
        off += 4
        meta = json.loads(blob[off : off + meta_len].decode("utf-8"))
        off += meta_len
        (n_entries,) = struct.unpack_from("<I", blob, off)
        off += 4
        tensors: dict[str, np.ndarray] = {}
        for _ in range(n_entries):
            (name_len,) = struct.unpack_from("<I", blob, off)
            off += 4
            name = blob[off : off + name_len].decode("utf-8")
            off += name_len
            (ndim,) = struct.unpack_from("<I", blob, off)
            off += 4
            shape = struct.unpack_from(f"<{ndim}Q", blob, off)
            off += 8 * ndim
            count = int(np.prod(shape)) if ndim else 1
            arr = np.frombuffer(blob, dtype="<f8", count=count, offset=off).reshape(shape).copy()
            off += 8 * count
            tensors[name] = arr
    except (struct.error, IndexError, UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"corrupt checkpoint {path}: {exc}") from exc

    config = TrainConfig(**meta["config"])
    state = TrainState.initialize(config, meta["algorithm"])
    for role in MODEL_ROLES:
        model = state.models.by_role(role)
        for name, p in zip(model.parameter_names(), model.parameters()):
            key = f"{role}.{name}"
            if key not in tensors:
                raise CheckpointError(f"checkpoint missing tensor {key}")
            p.data = tensors[key]
        opt = state.opts[role]
        opt.step = meta["adam_steps"][role]
        for i in range(len(opt.m)):
            opt.m[i] = tensors[f"opt.{role}.{i}.m"]
            opt.v[i] = tensors[f"opt.{role}.{i}.v"]
    state.rng = RngStreams(states=meta["rng"])
    state.iteration = meta["iteration"]
    return state
