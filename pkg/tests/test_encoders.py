import itertools

import numpy as np
import pytest

from intense.encoders import (ALPHABET, EncoderConfig, EncoderParams, encode, encode_codes,
                              init_params, letter_codes, one_hot)
from intense.errors import ContractError, InputError
from intense.tensor import Tape, Tensor, backward

from conftest import numeric_grad


def test_one_hot_examples():
    np.testing.assert_array_equal(one_hot("A").data[:, 0], [1, 0, 0, 0])
    np.testing.assert_array_equal(one_hot("ACGT").data, np.eye(4))
    assert one_hot("").shape == (4, 0)
    with pytest.raises(InputError):
        one_hot("ACXT")


def single_filter(rows, width, bias=0.0):
    w = np.zeros((1, 4, width))
    for k, letter in enumerate(rows):
        w[0, ALPHABET.index(letter), k] = 1.0
    return EncoderParams(Tensor(w, True), Tensor(np.array([bias]), True))


def test_hand_convolution():
    cfg = EncoderConfig(kernel_width=1, channels=1)
    out = encode("ACA", single_filter("A", 1), cfg)
    assert out.data.tolist() == [1.0]
    zero = EncoderParams(Tensor(np.zeros((1, 4, 1))), Tensor(np.zeros(1)))
    assert encode("ACA", zero, cfg).data.tolist() == [0.0]


def test_matched_filter_detects_motif_exactly():
    motif = "ACGTAGC"
    cfg = EncoderConfig(kernel_width=7, channels=1)
    params = single_filter(motif, 7, bias=-6.5)
    # brute force: every length-7 window scores 7 iff it is the motif
    windows = np.array(list(itertools.product(range(4), repeat=7)), dtype=np.uint8)
    scores = encode_codes(windows, params, cfg).data[:, 0]
    is_motif = np.all(windows == letter_codes(motif), axis=1)
    assert np.all((scores > 0) == is_motif)
    rng = np.random.default_rng(0)
    seq = "".join(rng.choice(list(ALPHABET), 40))
    planted = seq[:10] + motif + seq[17:]
    assert (encode(planted, params, cfg).data[0] > 0) == (motif in planted)
    assert (encode(seq, params, cfg).data[0] > 0) == (motif in seq)


def test_init_params_determinism_and_bounds():
    cfg = EncoderConfig(kernel_width=7, channels=8)
    a = init_params(cfg, np.random.default_rng(3))
    b = init_params(cfg, np.random.default_rng(3))
    c = init_params(cfg, np.random.default_rng(4))
    assert np.array_equal(a.weight.data, b.weight.data)
    assert not np.array_equal(a.weight.data, c.weight.data)
    big = init_params(EncoderConfig(kernel_width=7, channels=400), np.random.default_rng(0))
    assert big.weight.data.size >= 1e4
    assert np.all(np.abs(big.weight.data) <= 1 / np.sqrt(28))
    assert np.all(big.bias.data == 0)


def test_short_sequence_and_shape_errors():
    cfg = EncoderConfig(kernel_width=7, channels=2)
    params = init_params(cfg, np.random.default_rng(0))
    with pytest.raises(InputError):
        encode("ACGT", params, cfg)
    with pytest.raises(ContractError):
        encode_codes(np.zeros(10, dtype=np.uint8), params, cfg)
    with pytest.raises(ContractError):
        EncoderConfig(channels=0)


def test_encoder_gradient():
    cfg = EncoderConfig(kernel_width=3, channels=2)
    params = init_params(cfg, np.random.default_rng(1))
    params.bias.data = np.array([0.3, 0.2])
    codes = np.random.default_rng(2).integers(0, 4, size=(3, 12))

    def value():
        return float((encode_codes(codes, params, cfg) ** 2).sum().data)

    with Tape() as tape:
        loss = (encode_codes(codes, params, cfg) ** 2).sum()
    grads = backward(tape, loss)
    for p in (params.weight, params.bias):
        np.testing.assert_allclose(grads[p], numeric_grad(value, p.data), rtol=1e-5, atol=1e-8)
