"""Convolutional k-mer detectors over one-hot letter sequences.

Each modality encoder is a valid 1-D convolution followed by ReLU and a global
max over positions, producing one activation per filter. Sequences are handled
as integer codes (index into the alphabet) and one-hot windows are built per
batch.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from . import tensor as T
from .errors import ContractError, InputError
from .tensor import Tensor

ALPHABET = "ACGT"


@dataclass(frozen=True)
class EncoderConfig:
    alphabet: str = ALPHABET
    kernel_width: int = 7
    channels: int = 8

    def __post_init__(self):
        if self.channels < 1 or self.kernel_width < 1:
            raise ContractError("channels and kernel_width must be positive")

    @property
    def output_dim(self):
        return self.channels


@dataclass
class EncoderParams:
    weight: Tensor  # (channels, alphabet, kernel_width)
    bias: Tensor  # (channels,)


def letter_codes(seq: str, alphabet: str = ALPHABET) -> np.ndarray:
    lookup = {c: i for i, c in enumerate(alphabet)}
    try:
        return np.fromiter((lookup[c] for c in seq), dtype=np.uint8, count=len(seq))
    except KeyError as exc:
        raise InputError(f"letter {exc.args[0]!r} not in alphabet {alphabet}") from None


def one_hot(seq: str, alphabet: str = ALPHABET) -> Tensor:
    """``alphabet x length`` matrix with a single 1 per column."""
    codes = letter_codes(seq, alphabet)
    out = np.zeros((len(alphabet), len(codes)))
    out[codes, np.arange(len(codes))] = 1.0
    return Tensor(out)


def init_params(config: EncoderConfig, rng: np.random.Generator) -> EncoderParams:
    a, k = len(config.alphabet), config.kernel_width
    bound = 1.0 / np.sqrt(a * k)
    weight = rng.uniform(-bound, bound, size=(config.channels, a, k))
    return EncoderParams(Tensor(weight, requires_grad=True),
                         Tensor(np.zeros(config.channels), requires_grad=True))


def _windows(codes: np.ndarray, alphabet_size: int, width: int) -> np.ndarray:
    """(batch, positions, alphabet*width) one-hot windows, alphabet-major."""
    onehot = np.eye(alphabet_size)[codes]  # (B, L, A)
    win = sliding_window_view(onehot, width, axis=1)  # (B, P, A, K)
    return win.reshape(codes.shape[0], -1, alphabet_size * width)


def encode_codes(codes: np.ndarray, params: EncoderParams, config: EncoderConfig) -> Tensor:
    """Encode a ``(batch, length)`` array of letter codes to ``(batch, channels)``."""
    codes = np.asarray(codes)
    if codes.ndim != 2:
        raise ContractError("codes must be (batch, length)")
    if codes.shape[1] < config.kernel_width:
        raise InputError(
            f"sequence length {codes.shape[1]} is shorter than kernel width {config.kernel_width}")
    a, k = len(config.alphabet), config.kernel_width
    x = _windows(codes, a, k)
    w = params.weight.reshape(config.channels, a * k)
    act = T.relu(T.matmul(Tensor(x), T.transpose(w)) + params.bias)
    return T.amax(act, axis=1)


def encode(seq: str, params: EncoderParams, config: EncoderConfig) -> Tensor:
    """Encode one sequence to a length-``channels`` vector."""
    codes = letter_codes(seq, config.alphabet)
    if len(codes) < config.kernel_width:
        raise InputError(
            f"sequence length {len(codes)} is shorter than kernel width {config.kernel_width}")
    return encode_codes(codes[None, :], params, config).reshape(config.channels)
