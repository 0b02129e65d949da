"""Dense and LSTM building blocks on top of :mod:`tfn.autodiff`."""

from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import DimensionError, Parameter, Tensor


class Activation(str, enum.Enum):
    RELU = "relu"
    SIGMOID = "sigmoid"
    IDENTITY = "identity"


def xavier_uniform(rng: np.random.Generator, rows: int, cols: int) -> np.ndarray:
    limit = np.sqrt(6.0 / (rows + cols))
    return rng.uniform(-limit, limit, size=(rows, cols))


def activate(x: Tensor, activation: Activation) -> Tensor:
    if activation is Activation.RELU:
        return ad.relu(x)
    if activation is Activation.SIGMOID:
        return ad.sigmoid(x)
    return x


@dataclass
class DenseLayer:
    weight: Parameter  # (out, in)
    bias: Parameter  # (out,)
    activation: Activation = Activation.IDENTITY

    def __post_init__(self):
        if self.weight.ndim != 2 or self.bias.shape != (self.weight.shape[0],):
            raise DimensionError(
                f"bias of length {self.bias.shape} does not match weight {self.weight.shape}"
            )

    @classmethod
    def create(cls, in_dim: int, out_dim: int, activation: Activation,
               rng: np.random.Generator, name: str = "dense") -> "DenseLayer":
        return cls(
            Parameter(xavier_uniform(rng, out_dim, in_dim), name=f"{name}.weight"),
            Parameter(np.zeros(out_dim), name=f"{name}.bias"),
            Activation(activation),
        )

    @property
    def in_dim(self) -> int:
        return self.weight.shape[1]

    @property
    def out_dim(self) -> int:
        return self.weight.shape[0]

    def parameters(self) -> list[Parameter]:
        return [self.weight, self.bias]


def dense_forward(layer: DenseLayer, x: Tensor) -> Tensor:
    """activation(weight @ x + bias), batched over leading axes of ``x``."""
    x = ad.as_tensor(x)
    if x.shape[-1] != layer.in_dim:
        raise DimensionError(f"dense layer expects input dim {layer.in_dim}, got {x.shape[-1]}")
    return activate(ad.affine(x, layer.weight, layer.bias), layer.activation)


@dataclass
class LstmState:
    h: Tensor
    c: Tensor


@dataclass
class LstmCell:
    """Forget-gate LSTM with a linear input projection.

    ``gate_weights`` rows are stacked in the order (i, f, o, m); the gate
    input is ``[x_t @ W_le.T ; h_{t-1}]``.
    """

    input_projection: Parameter  # (e_dim, word_dim)
    gate_weights: Parameter  # (4*h_dim, e_dim + h_dim)
    gate_bias: Parameter  # (4*h_dim,)

    def __post_init__(self):
        e_dim = self.input_projection.shape[0]
        rows, cols = self.gate_weights.shape
        if rows % 4 or cols != e_dim + rows // 4 or self.gate_bias.shape != (rows,):
            raise DimensionError(
                f"inconsistent LSTM shapes: projection {self.input_projection.shape}, "
                f"gates {self.gate_weights.shape}, bias {self.gate_bias.shape}"
            )

    @classmethod
    def create(cls, input_dim: int, e_dim: int, h_dim: int, rng: np.random.Generator,
               name: str = "lstm") -> "LstmCell":
        bias = np.zeros(4 * h_dim)
        bias[h_dim:2 * h_dim] = 1.0  # forget gate starts open
        return cls(
            Parameter(xavier_uniform(rng, e_dim, input_dim), name=f"{name}.input_projection"),
            Parameter(xavier_uniform(rng, 4 * h_dim, e_dim + h_dim), name=f"{name}.gate_weights"),
            Parameter(bias, name=f"{name}.gate_bias"),
        )

    @property
    def h_dim(self) -> int:
        return self.gate_weights.shape[0] // 4

    @property
    def e_dim(self) -> int:
        return self.input_projection.shape[0]

    @property
    def input_dim(self) -> int:
        return self.input_projection.shape[1]

    def parameters(self) -> list[Parameter]:
        return [self.input_projection, self.gate_weights, self.gate_bias]

    def initial_state(self, batch: int | None = None) -> LstmState:
        shape = (self.h_dim,) if batch is None else (batch, self.h_dim)
        return LstmState(Tensor(np.zeros(shape)), Tensor(np.zeros(shape)))


def lstm_step(cell: LstmCell, x_t: Tensor, prev: LstmState) -> LstmState:
    x_t = ad.as_tensor(x_t)
    if x_t.shape[-1] != cell.input_dim:
        raise DimensionError(f"LSTM expects input dim {cell.input_dim}, got {x_t.shape[-1]}")
    if prev.h.shape[-1] != cell.h_dim or prev.c.shape[-1] != cell.h_dim:
        raise DimensionError(
            f"LSTM state must have dim {cell.h_dim}, got {prev.h.shape[-1]}/{prev.c.shape[-1]}"
        )
    h = cell.h_dim
    e = ad.affine(x_t, cell.input_projection)
    pre = ad.affine(ad.concat([e, prev.h], axis=-1), cell.gate_weights, cell.gate_bias)
    i = ad.sigmoid(pre[..., 0:h])
    f = ad.sigmoid(pre[..., h:2 * h])
    o = ad.sigmoid(pre[..., 2 * h:3 * h])
    m = ad.tanh(pre[..., 3 * h:4 * h])
    c = f * prev.c + i * m
    return LstmState(o * ad.tanh(c), c)
