"""Utterance records and the on-disk dataset format.

A dataset file is JSON Lines.  The first line is a header record::

    {"format": "tfn-dataset", "version": 1, "p": 8, "q": 8, "word_dim": 300,
     "label_range": [-3, 3], "source": "synthetic", "generator_spec": {...},
     "lexicon": "train.lexicon.txt"}

Every following line is one utterance::

    {"id": "utt00000", "speaker_id": "spk000", "video_id": "spk000",
     "label": 1.25, "words": ["tok3", [0.5, 1.0, ...], ...],
     "visual": [[...p floats...], ...], "acoustic": [[...q floats...], ...]}

A word is either a token looked up in the lexicon sidecar or an inline
vector of ``word_dim`` floats.  The lexicon uses the GloVe text layout,
one ``token v1 v2 ... v300`` line per entry, resolved relative to the
dataset file.  ``video_id`` is optional and defaults to ``speaker_id``.
Numbers are written with ``repr`` so every float64 survives a round trip.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Iterator, Sequence

import numpy as np

FORMAT_NAME = "tfn-dataset"
FORMAT_VERSION = 1
LABEL_MIN, LABEL_MAX = -3.0, 3.0
WORD_DIM = 300


class DatasetError(ValueError):
    """Base class for rejected dataset content; ``line`` is 1-based when known."""

    def __init__(self, message: str, line: int | None = None):
        self.line = line
        super().__init__(f"line {line}: {message}" if line is not None else message)


class EmptyDatasetError(DatasetError):
    pass


class MalformedRecordError(DatasetError):
    pass


class DimensionMismatchError(DatasetError):
    pass


class LabelRangeError(DatasetError):
    pass


class EmptyModalityError(DatasetError):
    pass


@dataclass(frozen=True, eq=False)
class Utterance:
    id: str
    speaker_id: str
    words: np.ndarray  # (T_l, word_dim)
    visual_frames: np.ndarray  # (T_v, p)
    acoustic_frames: np.ndarray  # (T_a, q)
    label: float
    video_id: str | None = None
    # lexicon token per word, None where the vector is stored inline
    tokens: tuple[str | None, ...] | None = None

    @property
    def video(self) -> str:
        return self.video_id if self.video_id is not None else self.speaker_id


@dataclass(frozen=True)
class DatasetHeader:
    p: int
    q: int
    word_dim: int = WORD_DIM
    label_range: tuple[float, float] = (LABEL_MIN, LABEL_MAX)
    source: str = "ingested"
    generator_spec: dict | None = None

    def __post_init__(self):
        if self.p < 1 or self.q < 1 or self.word_dim < 1:
            raise DimensionMismatchError(
                f"feature dims must be positive, got p={self.p} q={self.q} word_dim={self.word_dim}"
            )
        if self.source not in ("ingested", "synthetic"):
            raise MalformedRecordError(f"unknown source {self.source!r}")


@dataclass(frozen=True, eq=False)
class Dataset:
    header: DatasetHeader
    utterances: tuple[Utterance, ...]
    lexicon: dict[str, np.ndarray] | None = field(default=None, repr=False)

    def __len__(self) -> int:
        return len(self.utterances)

    def __iter__(self) -> Iterator[Utterance]:
        return iter(self.utterances)

    def __getitem__(self, i: int) -> Utterance:
        return self.utterances[i]

    def subset(self, utterances: Iterable[Utterance]) -> "Dataset":
        return Dataset(self.header, tuple(utterances), self.lexicon)

    def speakers(self) -> list[str]:
        return sorted({u.speaker_id for u in self.utterances})

    def labels(self) -> np.ndarray:
        return np.array([u.label for u in self.utterances])


def check_label(y: float, line: int | None = None) -> float:
    if not (isinstance(y, (int, float)) and math.isfinite(y)):
        raise LabelRangeError(f"label {y!r} is not a finite number", line)
    if not LABEL_MIN <= y <= LABEL_MAX:
        raise LabelRangeError(f"label {y} outside [{LABEL_MIN:g}, {LABEL_MAX:g}]", line)
    return float(y)


def validate_utterance(u: Utterance, header: DatasetHeader, line: int | None = None) -> None:
    for name, arr, dim in (
        ("words", u.words, header.word_dim),
        ("visual", u.visual_frames, header.p),
        ("acoustic", u.acoustic_frames, header.q),
    ):
        if arr.ndim != 2 or arr.shape[0] == 0:
            raise EmptyModalityError(f"utterance {u.id}: {name} sequence is empty", line)
        if arr.shape[1] != dim:
            raise DimensionMismatchError(
                f"utterance {u.id}: {name} frames have dim {arr.shape[1]}, header says {dim}", line
            )
        if not np.isfinite(arr).all():
            raise MalformedRecordError(f"utterance {u.id}: non-finite value in {name}", line)
    check_label(u.label, line)


# ---------------------------------------------------------------- lexicon


def load_lexicon(path: str | Path, word_dim: int = WORD_DIM) -> dict[str, np.ndarray]:
    lexicon: dict[str, np.ndarray] = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, 1):
            parts = raw.rstrip("\n").split(" ")
            if not parts or parts == [""]:
                continue
            token, values = parts[0], parts[1:]
            if len(values) != word_dim:
                raise DimensionMismatchError(
                    f"lexicon entry {token!r} has {len(values)} values, expected {word_dim}", lineno
                )
            try:
                lexicon[token] = np.array([float(v) for v in values])
            except ValueError as exc:
                raise MalformedRecordError(f"lexicon entry {token!r}: {exc}", lineno) from None
    return lexicon


def save_lexicon(lexicon: dict[str, np.ndarray], path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for token, vec in lexicon.items():
            fh.write(token + " " + " ".join(repr(float(v)) for v in vec) + "\n")


# ---------------------------------------------------------------- dataset files


def _frames(record: dict, key: str, line: int) -> np.ndarray:
    value = record.get(key)
    if not isinstance(value, list):
        raise MalformedRecordError(f"field {key!r} must be a list of frames", line)
    if not value:
        raise EmptyModalityError(f"{key} sequence is empty", line)
    widths = {len(f) if isinstance(f, list) else -1 for f in value}
    if -1 in widths:
        raise MalformedRecordError(f"field {key!r} must contain lists of numbers", line)
    if len(widths) > 1:
        raise DimensionMismatchError(f"{key} frames have ragged dims {sorted(widths)}", line)
    try:
        return np.array(value, dtype=np.float64)
    except (TypeError, ValueError):
        raise MalformedRecordError(f"field {key!r} contains non-numeric values", line) from None


def _words(record: dict, header: DatasetHeader, lexicon, line: int):
    value = record.get("words")
    if not isinstance(value, list):
        raise MalformedRecordError("field 'words' must be a list", line)
    if not value:
        raise EmptyModalityError("words sequence is empty", line)
    vectors, tokens = [], []
    for w in value:
        if isinstance(w, str):
            if lexicon is None:
                raise MalformedRecordError(f"token {w!r} used but the header names no lexicon", line)
            if w not in lexicon:
                raise MalformedRecordError(f"token {w!r} not in lexicon", line)
            vectors.append(lexicon[w])
            tokens.append(w)
        elif isinstance(w, list):
            if len(w) != header.word_dim:
                raise DimensionMismatchError(
                    f"inline word vector has dim {len(w)}, header says {header.word_dim}", line
                )
            try:
                vectors.append(np.array(w, dtype=np.float64))
            except (TypeError, ValueError):
                raise MalformedRecordError("inline word vector is not numeric", line) from None
            tokens.append(None)
        else:
            raise MalformedRecordError("each word must be a token string or a vector", line)
    return np.stack(vectors), tuple(tokens)


def _parse_header(record, line: int = 1) -> tuple[DatasetHeader, str | None]:
    if not isinstance(record, dict) or record.get("format") != FORMAT_NAME:
        raise MalformedRecordError(f"first record must be a {FORMAT_NAME!r} header", line)
    if record.get("version") != FORMAT_VERSION:
        raise MalformedRecordError(f"unsupported format version {record.get('version')!r}", line)
    try:
        lo, hi = record.get("label_range", [LABEL_MIN, LABEL_MAX])
        header = DatasetHeader(
            p=int(record["p"]),
            q=int(record["q"]),
            word_dim=int(record.get("word_dim", WORD_DIM)),
            label_range=(float(lo), float(hi)),
            source=record.get("source", "ingested"),
            generator_spec=record.get("generator_spec"),
        )
    except DatasetError as exc:
        raise type(exc)(str(exc), line) from None
    except (KeyError, TypeError, ValueError) as exc:
        raise MalformedRecordError(f"bad header: {exc}", line) from None
    if header.label_range != (LABEL_MIN, LABEL_MAX):
        raise LabelRangeError(f"label_range must be [-3, 3], got {list(header.label_range)}", line)
    return header, record.get("lexicon")


def load_dataset(path: str | Path) -> Dataset:
    """Read and validate a dataset file; the first violation raises with its line number."""
    path = Path(path)
    with open(path, encoding="utf-8") as fh:
        lines = fh.readlines()
    numbered = [(i, s) for i, s in enumerate(lines, 1) if s.strip()]
    if not numbered:
        raise EmptyDatasetError("no utterances")
    first_line, first = numbered[0]
    try:
        header_record = json.loads(first)
    except json.JSONDecodeError as exc:
        raise MalformedRecordError(f"header is not valid JSON: {exc.msg}", first_line) from None
    header, lexicon_name = _parse_header(header_record, first_line)
    lexicon = None
    if lexicon_name:
        lexicon = load_lexicon(path.parent / lexicon_name, header.word_dim)

    utterances = []
    for lineno, raw in numbered[1:]:
        try:
            record = json.loads(raw)
        except json.JSONDecodeError as exc:
            raise MalformedRecordError(f"invalid JSON: {exc.msg}", lineno) from None
        if not isinstance(record, dict):
            raise MalformedRecordError("record must be an object", lineno)
        for key in ("id", "speaker_id", "label"):
            if key not in record:
                raise MalformedRecordError(f"missing field {key!r}", lineno)
        label = check_label(record["label"], lineno)
        words, tokens = _words(record, header, lexicon, lineno)
        u = Utterance(
            id=str(record["id"]),
            speaker_id=str(record["speaker_id"]),
            words=words,
            visual_frames=_frames(record, "visual", lineno),
            acoustic_frames=_frames(record, "acoustic", lineno),
            label=label,
            video_id=str(record["video_id"]) if record.get("video_id") is not None else None,
            tokens=tokens if any(t is not None for t in tokens) else None,
        )
        validate_utterance(u, header, lineno)
        utterances.append(u)
    if not utterances:
        raise EmptyDatasetError("no utterances")
    return Dataset(header, tuple(utterances), lexicon)


def _word_entries(u: Utterance) -> list:
    if u.tokens is None:
        return u.words.tolist()
    return [tok if tok is not None else vec.tolist() for tok, vec in zip(u.tokens, u.words)]


def save_dataset(dataset: Dataset, path: str | Path) -> None:
    """Write ``dataset`` (and its lexicon sidecar, if any) next to ``path``."""
    path = Path(path)
    uses_tokens = any(u.tokens is not None for u in dataset)
    lexicon_name = None
    if uses_tokens:
        if dataset.lexicon is None:
            raise MalformedRecordError("utterances reference tokens but the dataset has no lexicon")
        lexicon_name = path.name + ".lexicon.txt"
        save_lexicon(dataset.lexicon, path.parent / lexicon_name)
    h = dataset.header
    header = {
        "format": FORMAT_NAME,
        "version": FORMAT_VERSION,
        "p": h.p,
        "q": h.q,
        "word_dim": h.word_dim,
        "label_range": list(h.label_range),
        "source": h.source,
        "generator_spec": h.generator_spec,
        "lexicon": lexicon_name,
    }
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(json.dumps(header) + "\n")
        for u in dataset:
            record = {
                "id": u.id,
                "speaker_id": u.speaker_id,
                "label": u.label,
                "words": _word_entries(u),
                "visual": u.visual_frames.tolist(),
                "acoustic": u.acoustic_frames.tolist(),
            }
            if u.video_id is not None:
                record["video_id"] = u.video_id
            fh.write(json.dumps(record) + "\n")


def make_dataset(header: DatasetHeader, utterances: Sequence[Utterance],
                 lexicon: dict[str, np.ndarray] | None = None) -> Dataset:
    """Build an in-memory dataset, applying the same checks as :func:`load_dataset`."""
    if not utterances:
        raise EmptyDatasetError("no utterances")
    for u in utterances:
        validate_utterance(u, header)
    return Dataset(header, tuple(utterances), lexicon)
