"""Synthetic multimodal data with planted unimodal/bimodal/trimodal effects.

Randomness comes from :class:`SplitMix64`, a counter-based stream whose
``i``-th output is ``mix(seed + (i + 1) * 0x9E3779B97F4A7C15)`` with the
standard SplitMix64 finaliser.  Only integer arithmetic and exact float
scaling are involved, so a given seed yields the same bytes on every
platform.  Every random quantity is drawn from uniforms (noise included:
a centred uniform with the requested standard deviation), which keeps the
generator free of libm-dependent transcendental functions.

Generation order for each utterance ``n`` (all draws consume the stream
sequentially, after the filler codebook):

1. latents ``s_l, s_v, s_a`` ~ U[-1, 1] and one label-noise draw;
2. sequence lengths ``T_l, T_v, T_a`` and the number of signal words;
3. signal word positions, then filler token ids for the other slots;
4. visual then acoustic frame jitter.
"""

from __future__ import annotations

import dataclasses
import zlib
from dataclasses import dataclass, field

import numpy as np

from .data import WORD_DIM, Dataset, DatasetHeader, Utterance, make_dataset

_GAMMA = np.uint64(0x9E3779B97F4A7C15)
_M1 = np.uint64(0xBF58476D1CE4E5B9)
_M2 = np.uint64(0x94D049BB133111EB)


def splitmix64(x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=np.uint64)
    z = x ^ (x >> np.uint64(30))
    z = z * _M1
    z = z ^ (z >> np.uint64(27))
    z = z * _M2
    return z ^ (z >> np.uint64(31))


class SplitMix64:
    def __init__(self, seed: int):
        self.seed = np.uint64(seed % 2**64)
        self.counter = 0

    def next_u64(self, n: int) -> np.ndarray:
        idx = np.arange(self.counter + 1, self.counter + n + 1, dtype=np.uint64)
        self.counter += n
        with np.errstate(over="ignore"):
            return splitmix64(self.seed + idx * _GAMMA)

    def random(self, n: int) -> np.ndarray:
        """Uniform doubles in [0, 1) from the top 53 bits."""
        return (self.next_u64(n) >> np.uint64(11)).astype(np.float64) * 2.0**-53

    def uniform(self, low: float, high: float, n: int) -> np.ndarray:
        return low + (high - low) * self.random(n)

    def integers(self, low: int, high: int, n: int) -> np.ndarray:
        """Integers in [low, high] inclusive."""
        span = high - low + 1
        return low + np.floor(self.random(n) * span).astype(np.int64)

    def centred(self, std: float, n: int) -> np.ndarray:
        """Zero-mean uniform noise with standard deviation ``std``."""
        half = std * np.sqrt(3.0)
        return self.uniform(-half, half, n)


def derive_seed(root: int, label: str) -> int:
    """Sub-seed for a named consumer: splitmix64(root + crc32(label))."""
    with np.errstate(over="ignore"):
        mixed = splitmix64(np.uint64(root % 2**64) + np.uint64(zlib.crc32(label.encode())))
    return int(mixed)


@dataclass(frozen=True)
class SynthSpec:
    n_utterances: int = 200
    n_speakers: int = 10
    alpha: tuple[float, float, float] = (1.0, 1.0, 1.0)  # language, visual, acoustic
    beta: tuple[float, float, float] = (0.0, 0.0, 0.0)  # lv, la, va
    gamma: float = 0.0
    noise_std: float = 0.0
    language_len: tuple[int, int] = (4, 8)
    visual_len: tuple[int, int] = (5, 12)
    acoustic_len: tuple[int, int] = (5, 12)
    p: int = 8
    q: int = 8
    signal_words: tuple[int, int] = (1, 2)
    n_filler_tokens: int = 32
    filler_scale: float = 0.1
    frame_noise_std: float = 0.5
    seed: int = 0

    def __post_init__(self):
        for name in ("alpha", "beta", "language_len", "visual_len", "acoustic_len", "signal_words"):
            object.__setattr__(self, name, tuple(getattr(self, name)))
        if self.n_utterances < 1:
            raise ValueError("n_utterances must be >= 1")
        if self.n_speakers < 5:
            raise ValueError("n_speakers must be >= 5 so five speaker folds exist")
        if len(self.alpha) != 3 or len(self.beta) != 3:
            raise ValueError("alpha and beta each need three coefficients")
        for name in ("language_len", "visual_len", "acoustic_len", "signal_words"):
            lo, hi = getattr(self, name)
            if lo < 1 or hi < lo:
                raise ValueError(f"{name} must satisfy 1 <= low <= high, got {(lo, hi)}")
        if self.signal_words[1] > self.language_len[0]:
            raise ValueError("signal_words upper bound exceeds the shortest language length")
        if self.p < 1 or self.q < 1:
            raise ValueError("p and q must be >= 1")
        if self.n_filler_tokens < 1:
            raise ValueError("n_filler_tokens must be >= 1")
        if self.noise_std < 0 or self.frame_noise_std < 0 or self.filler_scale < 0:
            raise ValueError("noise scales must be non-negative")

    @property
    def scale(self) -> float:
        total = sum(abs(a) for a in self.alpha) + sum(abs(b) for b in self.beta) + abs(self.gamma)
        return 3.0 / total if total > 0 else 1.0

    def to_dict(self) -> dict:
        return {k: list(v) if isinstance(v, tuple) else v for k, v in dataclasses.asdict(self).items()}

    @classmethod
    def from_dict(cls, d: dict) -> "SynthSpec":
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown SynthSpec keys: {sorted(unknown)}")
        return cls(**d)

    def noiseless_label(self, s_l, s_v, s_a):
        a, b, g = self.alpha, self.beta, self.gamma
        raw = (a[0] * s_l + a[1] * s_v + a[2] * s_a
               + b[0] * s_l * s_v + b[1] * s_l * s_a + b[2] * s_v * s_a
               + g * s_l * s_v * s_a)
        return self.scale * raw


# designated coordinates carrying the latent signal
LANGUAGE_SIGNAL, LANGUAGE_MARKER = 0, 1
VISUAL_SIGNAL = 0
ACOUSTIC_SIGNAL = 0


def _codebook(spec: SynthSpec, rng: SplitMix64) -> dict[str, np.ndarray]:
    book = {}
    for k in range(spec.n_filler_tokens):
        vec = rng.centred(spec.filler_scale, WORD_DIM)
        vec[LANGUAGE_SIGNAL] = 0.0
        vec[LANGUAGE_MARKER] = 0.0
        book[f"w{k:03d}"] = vec
    return book


def _frames(latent: float, dim: int, length: int, coord: int, std: float,
            rng: SplitMix64) -> np.ndarray:
    jitter = rng.centred(std, length * dim).reshape(length, dim)
    jitter -= jitter.mean(axis=0)  # per-frame variation only; the mean carries the signal
    base = np.zeros(dim)
    base[coord] = latent
    return base + jitter


def synth_generate(spec: SynthSpec) -> Dataset:
    """Pure function of ``spec``: see the module docstring for the recipe."""
    rng = SplitMix64(spec.seed)
    book = _codebook(spec, rng)
    names = list(book)
    utterances = []
    for n in range(spec.n_utterances):
        s_l, s_v, s_a, u_noise = rng.uniform(-1.0, 1.0, 4)
        noise = spec.noise_std * np.sqrt(3.0) * u_noise
        label = float(np.clip(spec.noiseless_label(s_l, s_v, s_a) + noise, -3.0, 3.0))

        t_l, t_v, t_a = (int(rng.integers(lo, hi, 1)[0]) for lo, hi in
                         (spec.language_len, spec.visual_len, spec.acoustic_len))
        n_sig = int(rng.integers(spec.signal_words[0], min(spec.signal_words[1], t_l), 1)[0])
        # signal positions: a partial Fisher-Yates shuffle of range(t_l)
        slots = list(range(t_l))
        for k in range(n_sig):
            j = k + int(rng.integers(0, t_l - 1 - k, 1)[0])
            slots[k], slots[j] = slots[j], slots[k]
        signal_at = set(slots[:n_sig])
        filler_ids = rng.integers(0, len(names) - 1, t_l)

        words = np.zeros((t_l, WORD_DIM))
        tokens: list[str | None] = []
        for t in range(t_l):
            if t in signal_at:
                words[t, LANGUAGE_SIGNAL] = s_l
                words[t, LANGUAGE_MARKER] = 1.0
                tokens.append(None)
            else:
                tok = names[filler_ids[t]]
                words[t] = book[tok]
                tokens.append(tok)

        visual = _frames(s_v, spec.p, t_v, VISUAL_SIGNAL, spec.frame_noise_std, rng)
        acoustic = _frames(s_a, spec.q, t_a, ACOUSTIC_SIGNAL, spec.frame_noise_std, rng)
        speaker = f"spk{n % spec.n_speakers:03d}"
        utterances.append(Utterance(
            id=f"utt{n:05d}", speaker_id=speaker, words=words, visual_frames=visual,
            acoustic_frames=acoustic, label=label, video_id=speaker, tokens=tuple(tokens),
        ))
    header = DatasetHeader(p=spec.p, q=spec.q, source="synthetic", generator_spec=spec.to_dict())
    return make_dataset(header, utterances, book)


def latent_features(dataset: Dataset) -> np.ndarray:
    """Recover (s_l, s_v, s_a) from mean-pooled designated coordinates.

    The language latent is the ratio of the pooled signal coordinate to the
    pooled marker coordinate, which cancels the signal-word fraction.
    """
    rows = []
    for u in dataset:
        pooled_words = u.words.mean(axis=0)
        rows.append((
            pooled_words[LANGUAGE_SIGNAL] / pooled_words[LANGUAGE_MARKER],
            u.visual_frames.mean(axis=0)[VISUAL_SIGNAL],
            u.acoustic_frames.mean(axis=0)[ACOUSTIC_SIGNAL],
        ))
    return np.array(rows)


@dataclass
class DatasetStats:
    n_utterances: int
    n_speakers: int
    label_mean: float
    label_std: float
    # bins centred on the seven integer scores -3..3
    label_histogram: dict[int, int] = field(default_factory=dict)
    lengths: dict[str, tuple[int, float, int]] = field(default_factory=dict)
    dims: dict[str, int] = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "n_utterances": self.n_utterances,
            "n_speakers": self.n_speakers,
            "label_mean": self.label_mean,
            "label_std": self.label_std,
            "label_histogram": {str(k): v for k, v in self.label_histogram.items()},
            "lengths": {k: list(v) for k, v in self.lengths.items()},
            "dims": dict(self.dims),
        }

    def format(self) -> str:
        lines = [
            f"utterances  {self.n_utterances}",
            f"speakers    {self.n_speakers}",
            f"label mean  {self.label_mean:.4f}  std {self.label_std:.4f}",
            "label histogram",
        ]
        for k, v in self.label_histogram.items():
            lines.append(f"  {k:+d}  {v}")
        lines.append("modality     dim   len(min/mean/max)")
        for name in ("language", "visual", "acoustic"):
            lo, avg, hi = self.lengths[name]
            lines.append(f"  {name:<10} {self.dims[name]:>4}   {lo}/{avg:.2f}/{hi}")
        return "\n".join(lines)


def histogram_bin(y: float) -> int:
    """Nearest integer score, halves rounded away from zero."""
    return int(np.sign(y) * np.floor(abs(y) + 0.5))


def dataset_stats(dataset: Dataset) -> DatasetStats:
    labels = dataset.labels()
    hist = {k: 0 for k in range(-3, 4)}
    for y in labels:
        hist[histogram_bin(y)] += 1
    lengths = {}
    for name, attr in (("language", "words"), ("visual", "visual_frames"),
                       ("acoustic", "acoustic_frames")):
        ls = np.array([getattr(u, attr).shape[0] for u in dataset])
        lengths[name] = (int(ls.min()), float(ls.mean()), int(ls.max()))
    h = dataset.header
    return DatasetStats(
        n_utterances=len(dataset),
        n_speakers=len(dataset.speakers()),
        label_mean=float(labels.mean()),
        label_std=float(labels.std()),
        label_histogram=hist,
        lengths=lengths,
        dims={"language": h.word_dim, "visual": h.p, "acoustic": h.q},
    )
