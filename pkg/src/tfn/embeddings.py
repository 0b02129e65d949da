"""Modality embedding subnetworks: LSTM language encoder and the two
mean-pooled dense encoders for visual and acoustic features."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from . import autodiff as ad
from .autodiff import DimensionError, Tensor
from .data import Utterance
from .layers import Activation, DenseLayer, LstmCell, dense_forward, lstm_step


def mean_pool(frames) -> np.ndarray:
    """Componentwise mean over a non-empty sequence of equal-length frames."""
    if isinstance(frames, np.ndarray):
        arr = frames
    else:
        frames = list(frames)
        if not frames:
            raise ValueError("cannot mean-pool an empty frame sequence")
        widths = {len(f) for f in frames}
        if len(widths) > 1:
            raise DimensionError(f"ragged frame dims {sorted(widths)}")
        arr = np.asarray(frames, dtype=np.float64)
    if arr.ndim != 2:
        raise DimensionError(f"frames must form a (T, d) array, got shape {arr.shape}")
    if arr.shape[0] == 0:
        raise ValueError("cannot mean-pool an empty frame sequence")
    return arr.mean(axis=0)


@dataclass
class ModalityEmbeddings:
    z_l: Tensor
    z_v: Tensor
    z_a: Tensor


@dataclass
class LanguageSubnetwork:
    lstm: LstmCell
    fc: DenseLayer
    t_max: int = 20

    def __post_init__(self):
        if self.fc.in_dim != self.t_max * self.lstm.h_dim:
            raise DimensionError(
                f"fc input dim {self.fc.in_dim} != t_max * h_dim = {self.t_max * self.lstm.h_dim}"
            )

    @classmethod
    def create(cls, rng: np.random.Generator, word_dim: int = 300, e_dim: int = 128,
               h_dim: int = 128, out_dim: int = 128, t_max: int = 20) -> "LanguageSubnetwork":
        lstm = LstmCell.create(word_dim, e_dim, h_dim, rng, name="language.lstm")
        fc = DenseLayer.create(t_max * h_dim, out_dim, Activation.SIGMOID, rng, name="language.fc")
        return cls(lstm, fc, t_max)

    @property
    def out_dim(self) -> int:
        return self.fc.out_dim

    def parameters(self):
        return self.lstm.parameters() + self.fc.parameters()


def pad_words(sequences: Sequence[np.ndarray], t_max: int, word_dim: int):
    """Stack word sequences into (B, T, word_dim), keeping the first ``t_max`` words.

    Returns the padded array and the per-utterance kept lengths.
    """
    lengths = np.array([min(len(s), t_max) for s in sequences])
    steps = int(lengths.max())
    out = np.zeros((len(sequences), steps, word_dim))
    for b, s in enumerate(sequences):
        s = np.asarray(s, dtype=np.float64)
        if s.ndim != 2 or s.shape[1] != word_dim:
            raise DimensionError(f"word vectors must have dim {word_dim}, got shape {s.shape}")
        out[b, :lengths[b]] = s[:lengths[b]]
    return out, lengths


def language_embed_batch(net: LanguageSubnetwork, words: np.ndarray, lengths: np.ndarray) -> Tensor:
    """Batched language embedding.

    ``words`` is (B, T, word_dim) with T <= t_max; hidden states past each
    utterance's length are zeroed, as is every row from T up to t_max, so
    the flattened (B, t_max * h_dim) input matches per-utterance padding.
    """
    batch, steps, word_dim = words.shape
    if word_dim != net.lstm.input_dim:
        raise DimensionError(f"word vectors must have dim {net.lstm.input_dim}, got {word_dim}")
    if steps > net.t_max:
        raise DimensionError(f"{steps} steps exceed t_max={net.t_max}; truncate first")
    state = net.lstm.initial_state(batch)
    rows = []
    for t in range(steps):
        state = lstm_step(net.lstm, Tensor(words[:, t]), state)
        live = (lengths > t).astype(np.float64)[:, None]
        rows.append(state.h if live.all() else state.h * live)
    if steps < net.t_max:
        rows.append(Tensor(np.zeros((batch, (net.t_max - steps) * net.lstm.h_dim))))
    return dense_forward(net.fc, ad.concat(rows, axis=-1))


def language_embed(net: LanguageSubnetwork, words) -> Tensor:
    """z^l for a single utterance given its (T_l, word_dim) word vectors."""
    words = np.asarray(words, dtype=np.float64)
    if words.ndim != 2 or words.shape[0] == 0:
        raise ValueError("language_embed needs at least one word vector")
    padded, lengths = pad_words([words], net.t_max, net.lstm.input_dim)
    return language_embed_batch(net, padded, lengths)[0]


@dataclass
class FeatureSubnetwork:
    """Three ReLU layers applied to mean-pooled visual or acoustic features."""

    layers: list[DenseLayer]

    def __post_init__(self):
        if len(self.layers) != 3:
            raise DimensionError(f"expected exactly 3 hidden layers, got {len(self.layers)}")
        for a, b in zip(self.layers, self.layers[1:]):
            if a.out_dim != b.in_dim:
                raise DimensionError(f"layer widths do not chain: {a.out_dim} -> {b.in_dim}")

    @classmethod
    def create(cls, rng: np.random.Generator, in_dim: int, width: int = 32,
               name: str = "visual") -> "FeatureSubnetwork":
        dims = [in_dim, width, width, width]
        return cls([DenseLayer.create(dims[i], dims[i + 1], Activation.RELU, rng,
                                      name=f"{name}.layer{i}") for i in range(3)])

    @property
    def in_dim(self) -> int:
        return self.layers[0].in_dim

    @property
    def out_dim(self) -> int:
        return self.layers[-1].out_dim

    def parameters(self):
        return [p for layer in self.layers for p in layer.parameters()]


VisualSubnetwork = AcousticSubnetwork = FeatureSubnetwork


def feature_embed(net: FeatureSubnetwork, x, dropout=None) -> Tensor:
    """Three chained ReLU layers; ``dropout`` (if given) is applied after each."""
    h = ad.as_tensor(x)
    if h.shape[-1] != net.in_dim:
        raise DimensionError(f"expected feature dim {net.in_dim}, got {h.shape[-1]}")
    for layer in net.layers:
        h = dense_forward(layer, h)
        if dropout is not None:
            h = dropout(h)
    return h


visual_embed = acoustic_embed = feature_embed


def embed_utterance(model, u: Utterance) -> ModalityEmbeddings:
    """(z^l, z^v, z^a) for one utterance under ``model``'s three subnetworks."""
    return ModalityEmbeddings(
        language_embed(model.language, u.words),
        visual_embed(model.visual, mean_pool(u.visual_frames)),
        acoustic_embed(model.acoustic, mean_pool(u.acoustic_frames)),
    )
