"""Adam, inverted dropout and the L2 weight penalty."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping

import numba
import numpy as np

from . import autodiff as ad
from .autodiff import Parameter, Tensor


class NonFiniteGradientError(ArithmeticError):
    pass


@numba.njit(cache=True)
def _adam_kernel(w, g, m, v, lr, beta1, beta2, eps, bc1, bc2):
    for i in range(w.size):
        gi = g[i]
        mi = beta1 * m[i] + (1.0 - beta1) * gi
        vi = beta2 * v[i] + (1.0 - beta2) * gi * gi
        m[i] = mi
        v[i] = vi
        w[i] -= lr * (mi / bc1) / (np.sqrt(vi / bc2) + eps)


@dataclass
class AdamState:
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    moments: dict[str, tuple[np.ndarray, np.ndarray]] = field(default_factory=dict)


def adam_step(params: Mapping[str, Parameter], state: AdamState, lr: float) -> AdamState:
    """One bias-corrected Adam update from each parameter's ``grad``, in place."""
    for name, p in params.items():
        if not np.isfinite(p.grad).all():
            raise NonFiniteGradientError(f"non-finite gradient in {name}")
    state.step += 1
    bc1 = 1.0 - state.beta1 ** state.step
    bc2 = 1.0 - state.beta2 ** state.step
    for name, p in params.items():
        if name not in state.moments:
            state.moments[name] = (np.zeros_like(p.data), np.zeros_like(p.data))
        m, v = state.moments[name]
        if m.shape != p.data.shape:
            raise ValueError(f"moment shape {m.shape} does not match {name} {p.data.shape}")
        _adam_kernel(p.data.reshape(-1), p.grad.reshape(-1), m.reshape(-1), v.reshape(-1),
                     lr, state.beta1, state.beta2, state.eps, bc1, bc2)
    return state


def apply_dropout(x: Tensor, p: float, rng: np.random.Generator | None, training: bool) -> Tensor:
    """Inverted dropout: zero each unit with probability ``p``, scale survivors by 1/(1-p)."""
    if not 0.0 <= p < 1.0:
        raise ValueError(f"dropout probability must be in [0, 1), got {p}")
    if not training or p == 0.0:
        return x
    keep = rng.random(x.shape) >= p
    return ad.mul(x, keep / (1.0 - p))


def dropout_fn(p: float, rng: np.random.Generator | None, training: bool):
    if not training or p == 0.0:
        return None
    return lambda x: apply_dropout(x, p, rng, True)


def l2_penalty(weights, coeff: float) -> Tensor:
    """coeff * sum of squared weights; gradient 2 * coeff * w.

    ``weights`` is either an iterable of parameters or a model, in which case
    its ``regularized_weights()`` are used (biases are never included).
    """
    if coeff < 0:
        raise ValueError("L2 coefficient must be non-negative")
    if hasattr(weights, "regularized_weights"):
        weights = weights.regularized_weights()
    weights = list(weights)
    if coeff == 0.0 or not weights:
        return Tensor(0.0)
    total = ad.sum_squares(weights[0])
    for w in weights[1:]:
        total = total + ad.sum_squares(w)
    return total * coeff
