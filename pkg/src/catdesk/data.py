"""Synthetic corpora: controllable utterances with known frame-level structure.

Each utterance samples a label sequence from a biased first-order chain
(no adjacent repeats, a preferred successor per label), a per-label duration,
and per-frame features equal to the label's mean vector plus Gaussian noise.

The default class layout places the last two means close together while the
transition structure predicts which of the two follows a given context, so
per-frame evidence alone cannot separate them once the noise grows: exactly
the regime where a label-sequence prior pays off.  At the default noise level
the classes are still nearly separable frame by frame.

On disk a corpus directory holds ``feats.bin`` (binary features), ``text``
(one ``utt-id sym sym ...`` line per utterance), and ``labels.txt`` (the
symbol table sidecar).
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .symbols import SymbolTable, default_label_names

FEATS_MAGIC = b"CDFT"
FEATS_FILE = "feats.bin"
TEXT_FILE = "text"
SYMBOLS_FILE = "labels.txt"

NEXT_LABEL_BIAS = 0.7  # probability of the preferred successor label


class CorpusFormatError(Exception):
    pass


def circle_means(k: int, d_in: int, radius: float = 2.0) -> np.ndarray:
    """K well-separated class means: evenly spaced on a circle in the first
    two feature dimensions (a line when d_in == 1)."""
    means = np.zeros((k, d_in))
    if d_in == 1:
        means[:, 0] = np.linspace(-radius, radius, k)
        return means
    angles = 2.0 * np.pi * np.arange(k) / k
    means[:, 0] = radius * np.cos(angles)
    means[:, 1] = radius * np.sin(angles)
    return means


@dataclass(frozen=True)
class SynthSpec:
    alphabet_size: int = 3
    d_in: int = 2
    noise_std: float = 0.3
    duration_range: tuple[int, int] = (2, 5)
    labels_per_utt: tuple[int, int] = (2, 6)
    corpus_size: int = 250
    seed: int = 0
    means: np.ndarray | None = None

    def __post_init__(self):
        if self.alphabet_size < 2:
            raise ValueError("need at least two labels")
        if self.noise_std <= 0:
            raise ValueError("noise_std must be positive")
        if self.duration_range[0] < 1 or self.duration_range[0] > self.duration_range[1]:
            raise ValueError("bad duration range")
        if self.labels_per_utt[0] < 1 or self.labels_per_utt[0] > self.labels_per_utt[1]:
            raise ValueError("bad labels-per-utterance range")
        if self.corpus_size < 10:
            raise ValueError("corpus too small to split")
        means = self.means if self.means is not None else circle_means(
            self.alphabet_size, self.d_in)
        means = np.asarray(means, dtype=np.float64)
        if means.shape != (self.alphabet_size, self.d_in):
            raise ValueError(f"means must be {(self.alphabet_size, self.d_in)}")
        if len({tuple(row) for row in means}) != self.alphabet_size:
            raise ValueError("label means must be distinct")
        object.__setattr__(self, "means", means)


@dataclass(frozen=True)
class Utterance:
    utt_id: str
    features: np.ndarray  # T x d_in
    transcript: tuple[int, ...]  # label ids


def _sample_transcript(spec: SynthSpec, rng: np.random.Generator) -> list[int]:
    k = spec.alphabet_size
    length = int(rng.integers(spec.labels_per_utt[0], spec.labels_per_utt[1] + 1))
    labels = [int(rng.integers(k))]
    for _ in range(length - 1):
        cur = labels[-1]
        preferred = (cur + 1) % k
        others = [j for j in range(k) if j != cur and j != preferred]
        if others and rng.random() >= NEXT_LABEL_BIAS:
            labels.append(others[int(rng.integers(len(others)))])
        else:
            labels.append(preferred)
    return labels


def synth_corpus(spec: SynthSpec):
    """Deterministic corpus, split 80/10/10 into (train, dev, test)."""
    rng = np.random.default_rng(spec.seed)
    utts = []
    for i in range(spec.corpus_size):
        transcript = _sample_transcript(spec, rng)
        frames = []
        for lab in transcript:
            dur = int(rng.integers(spec.duration_range[0], spec.duration_range[1] + 1))
            noise = rng.normal(scale=spec.noise_std, size=(dur, spec.d_in))
            frames.append(spec.means[lab] + noise)
        features = np.concatenate(frames)
        # label ids on disk start at 2 (0/1 are reserved for epsilon/blank)
        utts.append(Utterance(
            utt_id=f"utt-{i:05d}",
            features=features,
            transcript=tuple(lab + 2 for lab in transcript),
        ))
    n = len(utts)
    n_train = int(n * 0.8)
    n_dev = int(n * 0.1)
    return utts[:n_train], utts[n_train:n_train + n_dev], utts[n_train + n_dev:]


def symbol_table_for(spec: SynthSpec) -> SymbolTable:
    return SymbolTable.for_size(spec.alphabet_size)


# -- on-disk format ----------------------------------------------------------------

def corpus_write(directory, utts, symtab: SymbolTable) -> None:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    with open(directory / FEATS_FILE, "wb") as fh:
        fh.write(FEATS_MAGIC)
        fh.write(struct.pack("<I", len(utts)))
        for utt in utts:
            raw_id = utt.utt_id.encode("utf-8")
            feats = np.ascontiguousarray(utt.features, dtype="<f8")
            fh.write(struct.pack("<I", len(raw_id)))
            fh.write(raw_id)
            fh.write(struct.pack("<II", feats.shape[0], feats.shape[1]))
            fh.write(feats.tobytes())
    with open(directory / TEXT_FILE, "w", encoding="utf-8") as fh:
        for utt in utts:
            syms = " ".join(symtab.sym_of(lab) for lab in utt.transcript)
            fh.write(f"{utt.utt_id} {syms}".rstrip() + "\n")
    (directory / SYMBOLS_FILE).write_text(symtab.to_text(), encoding="utf-8")


def corpus_read(directory):
    """Returns (utterances, symbol table); transcripts come back as label ids."""
    directory = Path(directory)
    symtab = SymbolTable.from_text((directory / SYMBOLS_FILE).read_text(encoding="utf-8"))
    transcripts: dict[str, tuple[int, ...]] = {}
    for lineno, line in enumerate(
            (directory / TEXT_FILE).read_text(encoding="utf-8").splitlines(), start=1):
        if not line.strip():
            continue
        parts = line.split()
        try:
            transcripts[parts[0]] = tuple(symtab.id_of(s) for s in parts[1:])
        except KeyError as exc:
            raise CorpusFormatError(f"text line {lineno}: {exc}") from None

    utts = []
    path = directory / FEATS_FILE
    blob = path.read_bytes()
    pos = 0

    def take(n: int, what: str) -> bytes:
        nonlocal pos
        if pos + n > len(blob):
            raise CorpusFormatError(
                f"{path}: truncated while reading {what} at byte {pos}")
        out = blob[pos:pos + n]
        pos += n
        return out

    if take(4, "magic") != FEATS_MAGIC:
        raise CorpusFormatError(f"{path}: bad magic at byte 0")
    (count,) = struct.unpack("<I", take(4, "utterance count"))
    for _ in range(count):
        (id_len,) = struct.unpack("<I", take(4, "id length"))
        utt_id = take(id_len, "utterance id").decode("utf-8")
        t, d_in = struct.unpack("<II", take(8, "feature shape"))
        raw = take(t * d_in * 8, f"features of {utt_id}")
        features = np.frombuffer(raw, dtype="<f8").reshape(t, d_in).copy()
        if utt_id not in transcripts:
            raise CorpusFormatError(f"{path}: utterance {utt_id} missing from text file")
        utts.append(Utterance(utt_id, features, transcripts[utt_id]))
    if pos != len(blob):
        raise CorpusFormatError(f"{path}: {len(blob) - pos} trailing bytes at byte {pos}")
    return utts, symtab


__all__ = [
    "CorpusFormatError",
    "SynthSpec",
    "Utterance",
    "circle_means",
    "corpus_read",
    "corpus_write",
    "symbol_table_for",
    "synth_corpus",
]
