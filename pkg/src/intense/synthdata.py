"""Synthetic multimodal letter-sequence datasets with planted motifs.

``generate_synthgene`` plants a class-specific motif independently in each
modality with probability ``p_m``; ``generate_synthgene_tri`` plants one
shared motif in the first two of three modalities and labels by XOR.

Files are JSON Lines: one header object echoing the config, then one object
per sample ``{"label": -1|1, "label01": 0|1, "mods": [...], "flags": [...]}``.
"""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .encoders import ALPHABET, letter_codes
from .errors import ContractError, InputError

POSITIVE_MOTIF = "ACGTAGC"
NEGATIVE_MOTIF = "GATGTAC"
SEQUENCE_LENGTH = 100
SYNTHGENE_PROBS = (0.0, 0.2, 0.0, 0.3, 0.0, 0.0, 0.5, 0.0, 0.0, 0.0)
XOR_PROBS = (0.5, 0.5, 0.0)


@dataclass
class SequenceSample:
    modalities: list
    label: int
    insertion_flags: list


@dataclass
class SynthGeneConfig:
    modality_probs: tuple = SYNTHGENE_PROBS
    n_samples: int = 10000
    seed: int = 0
    positive_motif: str = POSITIVE_MOTIF
    negative_motif: str = NEGATIVE_MOTIF
    length: int = SEQUENCE_LENGTH

    def __post_init__(self):
        self.modality_probs = tuple(float(p) for p in self.modality_probs)
        if any(not 0.0 <= p <= 1.0 for p in self.modality_probs):
            raise ContractError("insertion probabilities must lie in [0, 1]")
        if len(self.positive_motif) != 7 or len(self.negative_motif) != 7:
            raise ContractError("motifs must have length 7")
        if self.length < len(self.positive_motif):
            raise ContractError("sequences must be at least as long as the motif")

    @property
    def n_modalities(self):
        return len(self.modality_probs)


@dataclass
class Dataset:
    """Samples stored as arrays: letter codes ``(n, M, L)``, labels, flags."""

    codes: np.ndarray
    labels: np.ndarray
    flags: np.ndarray
    header: dict = field(default_factory=dict)

    def __len__(self):
        return len(self.labels)

    @property
    def n_modalities(self):
        return self.codes.shape[1]

    def sample(self, i) -> SequenceSample:
        mods = ["".join(ALPHABET[c] for c in row) for row in self.codes[i]]
        return SequenceSample(mods, int(self.labels[i]), [bool(f) for f in self.flags[i]])

    def subset(self, index) -> "Dataset":
        index = np.asarray(index)
        return Dataset(self.codes[index], self.labels[index], self.flags[index], self.header)

    def split(self, seed: int, fractions=(0.8, 0.1, 0.1)):
        """Stratified train/validation/test split."""
        rng = np.random.default_rng(seed)
        parts = [[], [], []]
        for label in (-1, 1):
            idx = np.flatnonzero(self.labels == label)
            idx = idx[rng.permutation(len(idx))]
            a = int(round(fractions[0] * len(idx)))
            b = a + int(round(fractions[1] * len(idx)))
            for part, chunk in zip(parts, (idx[:a], idx[a:b], idx[b:])):
                part.append(chunk)
        return tuple(self.subset(np.sort(np.concatenate(p))) for p in parts)


def contains_motif(seq: str, motif: str) -> bool:
    return motif in seq


def _plant(codes, rows, motif, rng):
    """Overwrite the motif at a uniform offset in each selected row."""
    motif_codes = letter_codes(motif)
    offsets = rng.integers(0, codes.shape[-1] - len(motif) + 1, size=len(rows))
    for r, off in zip(rows, offsets):
        codes[r, off:off + len(motif)] = motif_codes


def _header(kind, config):
    out = asdict(config)
    out["modality_probs"] = list(config.modality_probs)
    return {"dataset": kind, "config": out, "seed": config.seed}


def generate_synthgene(config: SynthGeneConfig) -> Dataset:
    """First half labelled +1 with the positive motif, second half -1 with the negative."""
    n, m = config.n_samples, config.n_modalities
    if n % 2:
        raise ContractError("n_samples must be even for an exact class balance")
    rng = np.random.default_rng(config.seed)
    codes = rng.integers(0, len(ALPHABET), size=(n, m, config.length), dtype=np.uint8)
    labels = np.repeat(np.array([1, -1], dtype=np.int8), n // 2)
    flags = rng.random((n, m)) < np.asarray(config.modality_probs)
    for j in range(m):
        for label, motif in ((1, config.positive_motif), (-1, config.negative_motif)):
            rows = np.flatnonzero(flags[:, j] & (labels == label))
            _plant(codes[:, j, :], rows, motif, rng)
    return Dataset(codes, labels, flags, _header("synthgene", config))


def generate_synthgene_tri(config: SynthGeneConfig) -> Dataset:
    """Label +1 iff exactly one of modalities 1, 2 carries the shared motif.

    Candidates are drawn in order and accepted until each class holds n/2.
    """
    if config.n_modalities != 3:
        raise ContractError("the XOR dataset has exactly three modalities")
    n = config.n_samples
    if n % 2:
        raise ContractError("n_samples must be even for an exact class balance")
    probs = np.array(config.modality_probs[:2] + (0.0,))
    if probs[:2].min() <= 0.0 or probs[:2].max() >= 1.0:
        raise ContractError("XOR needs insertion probabilities strictly inside (0, 1)")
    rng = np.random.default_rng(config.seed)
    accepted = []
    need = {1: n // 2, -1: n // 2}
    while need[1] or need[-1]:
        cand = rng.random((max(n, 64), 3)) < probs
        for row in cand:
            label = 1 if row[0] != row[1] else -1
            if need[label]:
                need[label] -= 1
                accepted.append(row)
    flags = np.array(accepted, dtype=bool)
    labels = np.where(flags[:, 0] != flags[:, 1], 1, -1).astype(np.int8)
    codes = rng.integers(0, len(ALPHABET), size=(n, 3, config.length), dtype=np.uint8)
    for j in range(2):
        _plant(codes[:, j, :], np.flatnonzero(flags[:, j]), config.positive_motif, rng)
    return Dataset(codes, labels, flags, _header("synthgene-tri", config))


def write_jsonl(dataset: Dataset, path) -> None:
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "w") as fh:
        fh.write(json.dumps({"header": dataset.header}, sort_keys=True) + "\n")
        for i in range(len(dataset)):
            s = dataset.sample(i)
            fh.write(json.dumps({"label": s.label, "label01": (s.label + 1) // 2,
                                 "mods": s.modalities, "flags": s.insertion_flags}) + "\n")
    tmp.replace(path)


def read_jsonl(path) -> Dataset:
    path = Path(path)
    if not path.is_file():
        raise InputError(f"dataset file not found: {path}")
    header, codes, labels, flags = {}, [], [], []
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise InputError(f"{path}:{lineno}: {exc}") from None
            if "header" in obj:
                header = obj["header"]
                continue
            if obj.get("label") not in (-1, 1):
                raise InputError(f"{path}:{lineno}: label must be -1 or 1")
            codes.append([letter_codes(s) for s in obj["mods"]])
            labels.append(obj["label"])
            flags.append(obj.get("flags", [False] * len(obj["mods"])))
    if not labels:
        raise InputError(f"{path}: no samples")
    try:
        codes = np.array(codes, dtype=np.uint8)
    except ValueError:
        raise InputError(f"{path}: ragged sequences") from None
    return Dataset(codes, np.array(labels, dtype=np.int8), np.array(flags, dtype=bool), header)
