"""Sentiment inference network: a two-layer ReLU trunk and one task head."""

from __future__ import annotations

import enum
from dataclasses import dataclass
from typing import Callable

import numpy as np

from . import autodiff as ad
from .autodiff import DimensionError, Tensor
from .data import check_label
from .layers import Activation, DenseLayer, dense_forward

LOG_EPS = 1e-12


class Task(str, enum.Enum):
    BINARY = "binary"
    FIVE_CLASS = "five"
    REGRESSION = "regression"

    @property
    def out_dim(self) -> int:
        return 5 if self is Task.FIVE_CLASS else 1


@dataclass
class InferenceNetwork:
    trunk: list[DenseLayer]
    head: DenseLayer
    task: Task

    def __post_init__(self):
        self.task = Task(self.task)
        if len(self.trunk) != 2:
            raise DimensionError(f"trunk needs exactly two layers, got {len(self.trunk)}")
        if self.head.out_dim != self.task.out_dim:
            raise DimensionError(
                f"{self.task.value} head needs {self.task.out_dim} outputs, got {self.head.out_dim}"
            )

    @classmethod
    def create(cls, rng: np.random.Generator, in_dim: int, task: Task,
               width: int = 128) -> "InferenceNetwork":
        task = Task(task)
        trunk = [
            DenseLayer.create(in_dim, width, Activation.RELU, rng, name="inference.trunk0"),
            DenseLayer.create(width, width, Activation.RELU, rng, name="inference.trunk1"),
        ]
        head = DenseLayer.create(width, task.out_dim, Activation.IDENTITY, rng,
                                 name="inference.head")
        return cls(trunk, head, task)

    @property
    def in_dim(self) -> int:
        return self.trunk[0].in_dim

    def parameters(self):
        return [p for layer in self.trunk + [self.head] for p in layer.parameters()]


@dataclass
class Prediction:
    """Head outputs as plain arrays.

    ``value`` is a probability (binary), a distribution over the five
    classes -2..2 (five-class) or a score in [-3, 3] (regression); a leading
    batch axis is allowed.
    """

    task: Task
    value: np.ndarray


def head_output(task: Task, logits: Tensor) -> Tensor:
    """Apply the head's output function to the decision-layer logits."""
    if task is Task.FIVE_CLASS:
        return ad.softmax(logits)
    y = ad.sigmoid(logits[..., 0])
    if task is Task.REGRESSION:
        return y * 6.0 - 3.0
    return y


def infer(net: InferenceNetwork, fused, dropout: Callable[[Tensor], Tensor] | None = None) -> Tensor:
    """Trunk then head.  Returns the task output as a graph tensor."""
    h = ad.as_tensor(fused)
    if h.shape[-1] != net.in_dim:
        raise DimensionError(f"inference network expects {net.in_dim} inputs, got {h.shape[-1]}")
    for layer in net.trunk:
        h = dense_forward(layer, h)
        if dropout is not None:
            h = dropout(h)
    return head_output(net.task, dense_forward(net.head, h))


def binarize_label(y: float) -> int:
    """1 (positive) when y >= 0, else 0."""
    return int(check_label(y) >= 0.0)


def map_to_five_class(y: float) -> int:
    """Round half away from zero, then clamp into -2..2."""
    y = check_label(y)
    r = int(np.sign(y) * np.floor(abs(y) + 0.5))
    return max(-2, min(2, r))


def loss(output: Tensor, labels, task: Task) -> Tensor:
    """Mean task loss over a batch (or the single loss for one utterance).

    Binary: clamped binary cross-entropy against y >= 0.  Five-class:
    clamped negative log-likelihood of the mapped class.  Regression:
    squared error against the raw label.
    """
    task = Task(task)
    output = ad.as_tensor(output)
    labels = np.atleast_1d(np.asarray(labels, dtype=np.float64))
    for y in labels:
        check_label(float(y))
    single = output.ndim == (1 if task is Task.FIVE_CLASS else 0)
    if task is Task.BINARY:
        y = np.array([binarize_label(v) for v in labels], dtype=np.float64)
        if single:
            y = y[0]
        per = -(ad.log(output, LOG_EPS) * y + ad.log(1.0 - output, LOG_EPS) * (1.0 - y))
    elif task is Task.FIVE_CLASS:
        cls = np.array([map_to_five_class(v) + 2 for v in labels])
        if single:
            per = -ad.log(output[int(cls[0])], LOG_EPS)
        else:
            per = -ad.log(output[np.arange(len(cls)), cls], LOG_EPS)
    else:
        target = labels[0] if single else labels
        diff = output - target
        per = diff * diff
    return per if single else per.mean()


def decide(pred: Prediction):
    """Binary: p >= 0.5.  Five-class: argmax class in -2..2, lowest index on ties.
    Regression: the score itself."""
    v = np.asarray(pred.value)
    if pred.task is Task.BINARY:
        return v >= 0.5
    if pred.task is Task.FIVE_CLASS:
        return np.argmax(v, axis=-1) - 2
    return v
