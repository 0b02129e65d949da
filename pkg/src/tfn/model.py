"""The complete network and its on-disk form.

Model files are numpy ``.npz`` archives holding one JSON metadata entry,
``__meta__``, plus one array per parameter.  The metadata carries the
format tag and version, the architecture (dims, ``t_max``, variant, task)
and ``param_order``, the canonical parameter order::

    language.lstm.input_projection, language.lstm.gate_weights,
    language.lstm.gate_bias, language.fc.weight, language.fc.bias,
    visual.layer{0,1,2}.{weight,bias}, acoustic.layer{0,1,2}.{weight,bias},
    inference.trunk{0,1}.{weight,bias}, inference.head.{weight,bias}

Arrays are stored as raw float64, so a save/load round trip is bit-exact.
"""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from .autodiff import Parameter, Tensor
from .data import Dataset, Utterance
from .embeddings import (FeatureSubnetwork, LanguageSubnetwork, ModalityEmbeddings,
                         feature_embed, language_embed_batch, pad_words)
from .fusion import FusionVariant, fuse_for_variant, fused_dim
from .inference import InferenceNetwork, Prediction, Task, infer

MODEL_FORMAT = "tfn-model"
MODEL_VERSION = 1


class ModelFormatError(ValueError):
    pass


class ModelDataMismatchError(ValueError):
    pass


@dataclass(frozen=True)
class ArchConfig:
    """Layer sizes.  Defaults follow the published architecture; ``p`` and ``q``
    come from the dataset header."""

    p: int
    q: int
    word_dim: int = 300
    lstm_embed: int = 128
    lstm_hidden: int = 128
    language_dim: int = 128
    visual_dim: int = 32
    acoustic_dim: int = 32
    trunk_width: int = 128
    t_max: int = 20

    def __post_init__(self):
        for f in dataclasses.fields(self):
            if getattr(self, f.name) < 1:
                raise ValueError(f"{f.name} must be >= 1")

    @property
    def embedding_dims(self) -> tuple[int, int, int]:
        return (self.language_dim, self.visual_dim, self.acoustic_dim)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "ArchConfig":
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown architecture keys: {sorted(unknown)}")
        return cls(**d)


@dataclass
class Batch:
    """Model-ready arrays for a group of utterances."""

    words: np.ndarray  # (B, T, word_dim), T <= t_max
    lengths: np.ndarray  # (B,)
    visual: np.ndarray  # (B, p) mean-pooled
    acoustic: np.ndarray  # (B, q) mean-pooled
    labels: np.ndarray  # (B,)

    def __len__(self) -> int:
        return len(self.labels)

    @classmethod
    def from_utterances(cls, utterances: Sequence[Utterance], t_max: int) -> "Batch":
        word_dim = utterances[0].words.shape[1]
        words, lengths = pad_words([u.words for u in utterances], t_max, word_dim)
        return cls(
            words=words,
            lengths=lengths,
            visual=np.stack([u.visual_frames.mean(axis=0) for u in utterances]),
            acoustic=np.stack([u.acoustic_frames.mean(axis=0) for u in utterances]),
            labels=np.array([u.label for u in utterances]),
        )


class TfnModel:
    def __init__(self, arch: ArchConfig, variant: FusionVariant = FusionVariant.FULL,
                 task: Task = Task.REGRESSION, seed: int = 0):
        self.arch = arch
        self.variant = FusionVariant(variant)
        self.task = Task(task)
        rng = np.random.default_rng(seed)
        self.language = LanguageSubnetwork.create(
            rng, arch.word_dim, arch.lstm_embed, arch.lstm_hidden, arch.language_dim, arch.t_max)
        self.visual = FeatureSubnetwork.create(rng, arch.p, arch.visual_dim, name="visual")
        self.acoustic = FeatureSubnetwork.create(rng, arch.q, arch.acoustic_dim, name="acoustic")
        self.inference = InferenceNetwork.create(
            rng, fused_dim(self.variant, arch.embedding_dims), self.task, arch.trunk_width)

    # ------------------------------------------------------------ parameters

    def named_parameters(self) -> dict[str, Parameter]:
        params = (self.language.parameters() + self.visual.parameters()
                  + self.acoustic.parameters() + self.inference.parameters())
        return {p.name: p for p in params}

    def parameters(self) -> list[Parameter]:
        return list(self.named_parameters().values())

    def regularized_weights(self) -> list[Parameter]:
        """Weight matrices of the visual, acoustic and inference networks."""
        layers = self.visual.layers + self.acoustic.layers + self.inference.trunk + [self.inference.head]
        return [layer.weight for layer in layers]

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.zero_grad()

    def state_dict(self) -> dict[str, np.ndarray]:
        return {name: p.data.copy() for name, p in self.named_parameters().items()}

    def load_state_dict(self, state: dict[str, np.ndarray]) -> None:
        params = self.named_parameters()
        if set(state) != set(params):
            missing = sorted(set(params) - set(state))
            extra = sorted(set(state) - set(params))
            raise ModelFormatError(f"parameter mismatch; missing {missing}, unexpected {extra}")
        for name, p in params.items():
            if state[name].shape != p.data.shape:
                raise ModelFormatError(
                    f"{name}: stored shape {state[name].shape} != model shape {p.data.shape}"
                )
            np.copyto(p.data, state[name])

    # ------------------------------------------------------------ forward

    def embed(self, batch: Batch, dropout: Callable[[Tensor], Tensor] | None = None
              ) -> ModalityEmbeddings:
        return ModalityEmbeddings(
            language_embed_batch(self.language, batch.words, batch.lengths),
            feature_embed(self.visual, Tensor(batch.visual), dropout),
            feature_embed(self.acoustic, Tensor(batch.acoustic), dropout),
        )

    def forward(self, batch: Batch, dropout: Callable[[Tensor], Tensor] | None = None) -> Tensor:
        """Task output for every utterance in ``batch``; ``dropout`` is applied
        after each hidden layer of the visual, acoustic and inference networks."""
        fused = fuse_for_variant(self.embed(batch, dropout), self.variant)
        return infer(self.inference, fused, dropout)

    def check_compatible(self, dataset: Dataset) -> None:
        h = dataset.header
        ours = (self.arch.word_dim, self.arch.p, self.arch.q)
        theirs = (h.word_dim, h.p, h.q)
        if ours != theirs:
            raise ModelDataMismatchError(
                f"model ({self.variant.value}) expects word_dim/p/q = {ours}, "
                f"dataset provides {theirs}"
            )

    def predict(self, utterances: Sequence[Utterance], batch_size: int = 256) -> Prediction:
        outs = []
        for start in range(0, len(utterances), batch_size):
            batch = Batch.from_utterances(utterances[start:start + batch_size], self.arch.t_max)
            outs.append(self.forward(batch).data)
        return Prediction(self.task, np.concatenate(outs, axis=0))

    # ------------------------------------------------------------ serialization

    def metadata(self) -> dict:
        return {
            "format": MODEL_FORMAT,
            "version": MODEL_VERSION,
            "arch": self.arch.to_dict(),
            "variant": self.variant.value,
            "task": self.task.value,
            "param_order": list(self.named_parameters()),
        }

    def save(self, path: str | Path) -> None:
        arrays = {name: p.data for name, p in self.named_parameters().items()}
        meta = np.array(json.dumps(self.metadata()))
        with open(path, "wb") as fh:
            np.savez(fh, __meta__=meta, **arrays)

    @classmethod
    def load(cls, path: str | Path) -> "TfnModel":
        try:
            archive = np.load(path, allow_pickle=False)
        except (OSError, ValueError) as exc:
            raise ModelFormatError(f"cannot read model file {path}: {exc}") from None
        with archive:
            if "__meta__" not in archive.files:
                raise ModelFormatError(f"{path} has no metadata record")
            meta = json.loads(str(archive["__meta__"]))
            if meta.get("format") != MODEL_FORMAT or meta.get("version") != MODEL_VERSION:
                raise ModelFormatError(
                    f"{path}: unsupported model format {meta.get('format')!r} v{meta.get('version')}"
                )
            model = cls(ArchConfig.from_dict(meta["arch"]), meta["variant"], meta["task"])
            if meta["param_order"] != list(model.named_parameters()):
                raise ModelFormatError(f"{path}: parameter order does not match this version")
            model.load_state_dict({name: archive[name] for name in meta["param_order"]})
        return model
