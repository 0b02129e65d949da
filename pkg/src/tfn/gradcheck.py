"""Finite-difference verification of every differentiable component.

Relative error between an analytic gradient ``a`` and a central difference
``n`` is ``|a - n| / max(|a|, |n|, floor)`` with ``floor = 1e-6``; the floor
keeps coordinates whose true gradient is ~0 from dividing roundoff by zero.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from . import autodiff as ad
from .autodiff import Parameter, Tape, Tensor
from .embeddings import FeatureSubnetwork, LanguageSubnetwork, feature_embed, language_embed_batch
from .fusion import FusionVariant, augment_one, fuse_for_variant, tensor_fuse
from .embeddings import ModalityEmbeddings
from .inference import InferenceNetwork, Task, infer, loss
from .layers import Activation, DenseLayer, LstmCell, LstmState, dense_forward, lstm_step
from .model import ArchConfig, Batch, TfnModel
from .optim import l2_penalty

REL_FLOOR = 1e-6
TOLERANCE = 1e-4


def finite_difference_gradient(f: Callable[[np.ndarray], float], x, eps: float = 1e-5) -> np.ndarray:
    """Central differences (f(x + eps e_i) - f(x - eps e_i)) / (2 eps) per coordinate."""
    if eps <= 0:
        raise ValueError("eps must be positive")
    x = np.array(x, dtype=np.float64)
    grad = np.zeros_like(x)
    flat, gflat = x.reshape(-1), grad.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + eps
        hi = float(f(x))
        flat[i] = orig - eps
        lo = float(f(x))
        flat[i] = orig
        if not (np.isfinite(hi) and np.isfinite(lo)):
            raise ad.NonFiniteError(f"function is non-finite near coordinate {i}")
        gflat[i] = (hi - lo) / (2.0 * eps)
    return grad


def relative_error(analytic, numeric, floor: float = REL_FLOOR) -> float:
    a = np.asarray(analytic, dtype=float)
    n = np.asarray(numeric, dtype=float)
    denom = np.maximum(np.maximum(np.abs(a), np.abs(n)), floor)
    return float(np.max(np.abs(a - n) / denom)) if a.size else 0.0


def check_gradients(build: Callable[[], Tensor], params: Sequence[Parameter], eps: float = 1e-5,
                    rng: np.random.Generator | None = None, max_coords: int | None = None) -> float:
    """Max relative error of backward() against central differences.

    ``build`` recomputes the scalar loss from the current parameter values.
    With ``max_coords`` only that many randomly chosen coordinates of each
    parameter are differenced.
    """
    for p in params:
        p.zero_grad()
    with Tape() as tape:
        out = build()
    tape.backward(out)
    worst = 0.0
    for p in params:
        analytic = p.grad.reshape(-1).copy()
        flat = p.data.reshape(-1)
        coords = np.arange(flat.size)
        if max_coords is not None and flat.size > max_coords:
            coords = np.sort(rng.choice(flat.size, max_coords, replace=False))
        numeric = np.empty(len(coords))
        for j, i in enumerate(coords):
            orig = flat[i]
            flat[i] = orig + eps
            hi = float(build().data)
            flat[i] = orig - eps
            lo = float(build().data)
            flat[i] = orig
            numeric[j] = (hi - lo) / (2.0 * eps)
        worst = max(worst, relative_error(analytic[coords], numeric))
    for p in params:
        p.zero_grad()
    return worst


# ---------------------------------------------------------------- components


def _param(rng, *shape, scale=1.0, name=None):
    return Parameter(rng.normal(0.0, scale, size=shape), name=name)


def _check_dense(rng, eps):
    worst = 0.0
    for act in Activation:
        layer = DenseLayer.create(5, 4, act, rng, name=f"dense_{act.value}")
        layer.bias.data[:] = rng.normal(size=4) * 0.1
        x = _param(rng, 3, 5, name="x")
        w = rng.normal(size=(3, 4))
        worst = max(worst, check_gradients(lambda: (dense_forward(layer, x) * w).sum(),
                                           [x] + layer.parameters(), eps))
    return worst


def _check_lstm(rng, eps):
    cell = LstmCell.create(6, 3, 4, rng)
    cell.gate_bias.data[:] = rng.normal(size=16) * 0.5
    x = _param(rng, 2, 6, name="x")
    h0 = _param(rng, 2, 4, scale=0.5, name="h0")
    c0 = _param(rng, 2, 4, scale=0.5, name="c0")
    w = rng.normal(size=(2, 4))

    def build():
        s = lstm_step(cell, x, LstmState(h0, c0))
        s = lstm_step(cell, x * 0.5, s)
        return (s.h * w).sum() + (s.c * w).sum()

    return check_gradients(build, [x, h0, c0] + cell.parameters(), eps)


def _elementwise(op: str):
    def check(rng, eps):
        fn = getattr(ad, op)
        x = _param(rng, 3, 4, name="x")
        w = rng.normal(size=(3, 4))
        return check_gradients(lambda: (fn(x) * w).sum(), [x], eps)
    return check


def _check_softmax(rng, eps):
    x = _param(rng, 3, 5, name="x")
    w = rng.normal(size=(3, 5))
    return check_gradients(lambda: (ad.softmax(x) * w).sum(), [x], eps)


def _check_outer3(rng, eps):
    u, v, w = _param(rng, 2, 3), _param(rng, 2, 4), _param(rng, 2, 2)
    r = rng.normal(size=(2, 3, 4, 2))
    return check_gradients(lambda: (ad.outer3(u, v, w) * r).sum(), [u, v, w], eps)


def _check_augment(rng, eps):
    z = _param(rng, 2, 5)
    r = rng.normal(size=(2, 6))
    return check_gradients(lambda: (augment_one(z) * r).sum(), [z], eps)


def _check_tensor_fuse(rng, eps):
    zl, zv, za = _param(rng, 2, 4), _param(rng, 2, 3), _param(rng, 2, 3)
    worst = 0.0
    for variant in (FusionVariant.FULL, FusionVariant.NO_TRIMODAL, FusionVariant.BIMODAL_ONLY):
        e = ModalityEmbeddings(zl, zv, za)
        n = fuse_for_variant(e, variant).shape[-1]
        r = rng.normal(size=(2, n))
        worst = max(worst, check_gradients(
            lambda: (fuse_for_variant(ModalityEmbeddings(zl, zv, za), variant) * r).sum(),
            [zl, zv, za], eps))
    r = rng.normal(size=(2, 5, 4, 4))
    worst = max(worst, check_gradients(
        lambda: (tensor_fuse(ModalityEmbeddings(zl, zv, za)).t * r).sum(), [zl, zv, za], eps))
    return worst


def _head(task: Task):
    def check(rng, eps):
        net = InferenceNetwork.create(rng, 6, task, width=5)
        for layer in net.trunk + [net.head]:
            layer.bias.data[:] = rng.normal(size=layer.out_dim) * 0.1
        x = _param(rng, 4, 6, name="x")
        labels = rng.uniform(-3, 3, size=4)
        return check_gradients(lambda: loss(infer(net, x), labels, task),
                               [x] + net.parameters(), eps)
    return check


def _check_l2(rng, eps):
    ws = [_param(rng, 3, 4), _param(rng, 5)]
    return check_gradients(lambda: l2_penalty(ws, 0.01), ws, eps)


def _check_language(rng, eps):
    net = LanguageSubnetwork.create(rng, word_dim=7, e_dim=3, h_dim=3, out_dim=4, t_max=4)
    words = rng.normal(size=(2, 3, 7))
    lengths = np.array([3, 2])
    r = rng.normal(size=(2, 4))
    return check_gradients(lambda: (language_embed_batch(net, words, lengths) * r).sum(),
                           net.parameters(), eps)


def _check_feature(rng, eps):
    net = FeatureSubnetwork.create(rng, 5, width=4)
    for layer in net.layers:
        layer.bias.data[:] = np.abs(rng.normal(size=layer.out_dim)) * 0.1
    x = _param(rng, 3, 5, name="x")
    r = rng.normal(size=(3, 4))
    return check_gradients(lambda: (feature_embed(net, x) * r).sum(), [x] + net.parameters(), eps)


GRADCHECK_ARCH = dict(lstm_embed=4, lstm_hidden=3, language_dim=4, visual_dim=3,
                      acoustic_dim=3, trunk_width=6, t_max=5)


def _check_end_to_end(rng, eps):
    arch = ArchConfig(p=4, q=3, **GRADCHECK_ARCH)
    model = TfnModel(arch, FusionVariant.FULL, Task.REGRESSION, seed=int(rng.integers(2**31)))
    for p in model.parameters():
        if p.name.endswith("bias"):
            p.data[:] = rng.normal(size=p.shape) * 0.1
    batch = Batch(
        words=rng.normal(size=(2, 4, 300)) * 0.3,
        lengths=np.array([4, 2]),
        visual=rng.normal(size=(2, 4)),
        acoustic=rng.normal(size=(2, 3)),
        labels=rng.uniform(-3, 3, size=2),
    )

    def build():
        return loss(model.forward(batch), batch.labels, Task.REGRESSION) + l2_penalty(model, 0.01)

    return check_gradients(build, model.parameters(), eps, rng, max_coords=6)


COMPONENTS: dict[str, Callable] = {
    "dense": _check_dense,
    "lstm_step": _check_lstm,
    "sigmoid": _elementwise("sigmoid"),
    "tanh": _elementwise("tanh"),
    "relu": _elementwise("relu"),
    "softmax": _check_softmax,
    "outer3": _check_outer3,
    "augment_one": _check_augment,
    "tensor_fuse": _check_tensor_fuse,
    "language_embed": _check_language,
    "feature_embed": _check_feature,
    "head_binary_bce": _head(Task.BINARY),
    "head_five_class_nll": _head(Task.FIVE_CLASS),
    "head_regression_mse": _head(Task.REGRESSION),
    "l2_penalty": _check_l2,
    "tfn_end_to_end": _check_end_to_end,
}


@dataclass
class GradcheckResult:
    errors: dict[str, float]
    tolerance: float
    n_seeds: int

    @property
    def passed(self) -> bool:
        return all(e < self.tolerance for e in self.errors.values())

    def format(self) -> str:
        lines = [f"{'component':<22}{'max rel err':>14}  status   ({self.n_seeds} seeds)"]
        for name, err in self.errors.items():
            status = "ok" if err < self.tolerance else "FAIL"
            lines.append(f"{name:<22}{err:>14.3e}  {status}")
        return "\n".join(lines)


def run_gradcheck(seed: int = 0, eps: float = 1e-5, n_seeds: int = 20,
                  tolerance: float = TOLERANCE) -> GradcheckResult:
    """Run every component check under ``n_seeds`` consecutive seeds starting at ``seed``."""
    errors = {}
    for name, check in COMPONENTS.items():
        worst = 0.0
        for s in range(seed, seed + n_seeds):
            worst = max(worst, check(np.random.default_rng(s), eps))
        errors[name] = worst
    return GradcheckResult(errors, tolerance, n_seeds)
