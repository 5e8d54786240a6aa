"""The four network roles (encoder, decoder, generator, critic) as MLPs."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .tensor import LEAKY_SLOPE, ShapeError, Tensor, concat, matmul

INIT_STD = 0.02
HIDDEN_ACTIVATIONS = ("tanh", "leaky_relu")


@dataclass
class Layer:
    weight: Tensor  # (in, out)
    bias: Tensor  # (out,)
    activation: str  # tanh | leaky_relu | identity | sigmoid


@dataclass
class MlpModel:
    """Stack of affine+activation layers for one of the four roles.

    The encoder additionally carries ``log_var``, a single learned vector
    shared across inputs (the latent scale is not a function of x).  The
    critic's final activation is sigmoid but its forward returns the
    pre-activation logit separately.
    """

    layers: list[Layer]
    role: str  # encoder | decoder | generator | critic
    log_var: Tensor | None = None

    @property
    def input_dim(self) -> int:
        return self.layers[0].weight.shape[0]

    @property
    def output_dim(self) -> int:
        return self.layers[-1].weight.shape[1]

    def parameters(self) -> list[Tensor]:
        params = []
        for layer in self.layers:
            params.append(layer.weight)
            params.append(layer.bias)
        if self.log_var is not None:
            params.append(self.log_var)
        return params

    def parameter_names(self) -> list[str]:
        names = []
        for i in range(len(self.layers)):
            names.append(f"layer{i}.weight")
            names.append(f"layer{i}.bias")
        if self.log_var is not None:
            names.append("log_var")
        return names


@dataclass
class EncoderOutput:
    mu: Tensor  # (batch, dim_z), per sample
    log_var: Tensor  # (dim_z,), shared across the batch

    def sigma(self) -> Tensor:
        return (0.5 * self.log_var).exp()


@dataclass
class GeneratorInput:
    z: Tensor
    xi: Tensor | None = None  # absent in the deterministic variant


def _activate(t: Tensor, kind: str) -> Tensor:
    if kind == "identity":
        return t
    if kind == "tanh":
        return t.tanh()
    if kind == "leaky_relu":
        return t.leaky_relu(LEAKY_SLOPE)
    if kind == "sigmoid":
        return t.sigmoid()
    raise ValueError(f"unknown activation {kind!r}")


def _check_input(model: MlpModel, x: Tensor):
    if x.data.ndim != 2 or x.data.shape[1] != model.input_dim:
        raise ShapeError(
            f"{model.role} expects (batch, {model.input_dim}) input, got {x.data.shape}"
        )


def mlp_forward(model: MlpModel, x: Tensor) -> Tensor:
    _check_input(model, x)
    h = x
    for layer in model.layers:
        h = _activate(matmul(h, layer.weight) + layer.bias, layer.activation)
    return h


def build_mlp(
    role: str, dims: list[int], hidden_activation: str, output_activation: str, rng
) -> MlpModel:
    """Build an MLP with DCGAN-style init: weights ~ N(0, 0.02), biases 0."""
    if hidden_activation not in HIDDEN_ACTIVATIONS:
        raise ValueError(f"hidden activation must be one of {HIDDEN_ACTIVATIONS}")
    layers = []
    for i, (din, dout) in enumerate(zip(dims[:-1], dims[1:])):
        act = output_activation if i == len(dims) - 2 else hidden_activation
        layers.append(
            Layer(
                weight=Tensor(rng.normal(0.0, INIT_STD, size=(din, dout))),
                bias=Tensor(np.zeros(dout)),
                activation=act,
            )
        )
    return MlpModel(layers=layers, role=role)


def build_encoder(dim_x: int, dim_z: int, hidden_width: int, hidden_activation: str, rng) -> MlpModel:
    model = build_mlp("encoder", [dim_x, hidden_width, hidden_width, dim_z], hidden_activation, "identity", rng)
    model.log_var = Tensor(np.zeros(dim_z))
    return model


def build_decoder(dim_z: int, dim_x: int, hidden_width: int, hidden_activation: str, rng) -> MlpModel:
    return build_mlp("decoder", [dim_z, hidden_width, hidden_width, dim_x], hidden_activation, "identity", rng)


def build_generator(
    dim_z: int, dim_xi: int, dim_x: int, hidden_width: int, hidden_activation: str, rng, use_xi: bool
) -> MlpModel:
    din = dim_z + (dim_xi if use_xi else 0)
    return build_mlp("generator", [din, hidden_width, hidden_width, dim_x], hidden_activation, "identity", rng)


def build_critic(dim_x: int, hidden_width: int, hidden_activation: str, rng) -> MlpModel:
    return build_mlp("critic", [dim_x, hidden_width, hidden_width, 1], hidden_activation, "sigmoid", rng)


def encoder_forward(model: MlpModel, x: Tensor) -> EncoderOutput:
    """Map a batch to per-sample latent means plus the shared log variance."""
    if model.log_var is None:
        raise ValueError("encoder model has no log_var parameter")
    return EncoderOutput(mu=mlp_forward(model, x), log_var=model.log_var)


def reparameterize(out: EncoderOutput, eps: Tensor) -> Tensor:
    """z = mu + eps * sigma, differentiable through mu and sigma."""
    if eps.data.shape != out.mu.data.shape:
        raise ShapeError(f"eps shape {eps.data.shape} must match mu shape {out.mu.data.shape}")
    return out.mu + eps * out.sigma()


def decoder_forward(model: MlpModel, z: Tensor) -> Tensor:
    return mlp_forward(model, z)


def generator_forward(model: MlpModel, inp: GeneratorInput) -> Tensor:
    h = inp.z if inp.xi is None else concat(inp.z, inp.xi)
    return mlp_forward(model, h)


def critic_forward(model: MlpModel, x: Tensor) -> tuple[Tensor, Tensor]:
    """Returns (prob, logit); prob = sigmoid(logit), logit kept for losses."""
    _check_input(model, x)
    h = x
    for layer in model.layers[:-1]:
        h = _activate(matmul(h, layer.weight) + layer.bias, layer.activation)
    last = model.layers[-1]
    logit = matmul(h, last.weight) + last.bias
    return logit.sigmoid(), logit


def parameter_count(model: MlpModel) -> int:
    return sum(p.size for p in model.parameters())
