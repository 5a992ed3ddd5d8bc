import numpy as np
import pytest
from hypothesis import given, strategies as st

from intense.errors import ContractError, UndefinedRelevanceError
from intense.fusion import (FusionConfig, FusionHead, RelevanceReport, block_norm_penalty,
                            fusion_forward, interaction_project, interaction_set,
                            logistic_loss, parse_set_name, q_from_p, recover_relevance,
                            relevance_from_norms, set_name)
from intense.tensor import Tape, Tensor, backward

from conftest import numeric_grad


def test_interaction_set_validation():
    assert interaction_set([3, 1]) == (1, 3)
    for bad in ([], [1, 1], [0, 2]):
        with pytest.raises(ContractError):
            interaction_set(bad)
    assert set_name((1, 2, 3)) == "M1x2x3"
    assert parse_set_name("M1x13") == (1, 13)


def test_q_from_p():
    assert q_from_p(1) == 1.0
    assert q_from_p(3) == 1.5
    with pytest.raises(ContractError):
        q_from_p(0.5)


def test_config_requires_singletons_for_interacting_modalities():
    with pytest.raises(ContractError):
        FusionConfig([(1,), (1, 2)])
    cfg = FusionConfig([(1,), (2,), (1, 2)])
    assert cfg.modalities == [1, 2] and cfg.order == 2


def test_forward_examples():
    head = FusionHead.from_arrays({(1,): [0.0, 0.0]}, bias=0.5)
    assert fusion_forward({(1,): Tensor(np.array([[3.0, 4.0]]))}, head).data[0] == 0.5
    head = FusionHead.from_arrays({(1,): [1.0, 2.0]})
    assert fusion_forward({(1,): Tensor(np.array([[3.0, 4.0]]))}, head).data[0] == 11.0
    head = FusionHead.from_arrays({(1,): [1.0], (2,): [1.0]}, bias=0.25)
    reps = {(1,): np.array([[1.0]]), (2,): np.array([[-1.0]])}
    assert fusion_forward(reps, head).data[0] == 0.25


def test_forward_flattens_interaction_tensors_row_major():
    head = FusionHead.from_arrays({(1, 2): np.arange(6.0)})
    rep = np.arange(12.0).reshape(2, 2, 3)
    np.testing.assert_allclose(fusion_forward({(1, 2): rep}, head).data,
                               rep.reshape(2, 6) @ np.arange(6.0))


def test_forward_shape_errors():
    head = FusionHead.from_arrays({(1,): [1.0, 2.0]})
    with pytest.raises(ContractError):
        fusion_forward({(1,): np.ones((1, 3))}, head)
    with pytest.raises(ContractError):
        fusion_forward({(2,): np.ones((1, 2))}, head)


def test_logistic_loss_examples():
    assert logistic_loss(0.0, 1.0).data == pytest.approx(np.log(2))
    assert logistic_loss(0.0, -1.0).data == pytest.approx(0.693147, abs=1e-6)
    assert logistic_loss(20.0, 1.0).data < 1e-8
    assert logistic_loss(1.0, 1.0).data == pytest.approx(0.313262, abs=1e-6)
    with pytest.raises(ContractError):
        logistic_loss(np.zeros(2), np.array([0, 1]))


def test_block_norm_penalty_examples():
    head = FusionHead.from_arrays({(1,): [3.0, 0.0], (2,): [0.0, 4.0]})
    assert block_norm_penalty(head, 1.0, 1.0).data == pytest.approx(49.0)
    assert block_norm_penalty(head, 2.0, 0.5).data == pytest.approx(0.5 * 25.0)
    single = FusionHead.from_arrays({(1,): [1.0, 2.0]})
    for q in (1.0, 1.2, 1.5, 2.0):
        assert block_norm_penalty(single, q, 0.3).data == pytest.approx(0.3 * 5.0)
    with pytest.raises(ContractError):
        block_norm_penalty(head, 2.5, 1.0)


def test_relevance_examples():
    r = relevance_from_norms({(1,): 3.0, (2,): 4.0}, 1.0)
    assert r.beta[(1,)] == pytest.approx(3 / 7) and r.beta[(2,)] == pytest.approx(4 / 7)
    for p in (1.0, 2.0, 4.0):
        r = relevance_from_norms({(m,): 2.5 for m in range(1, 6)}, p)
        for b in r.beta.values():
            assert b == pytest.approx(5 ** (-1 / p))
    r = relevance_from_norms({(1,): 0.0, (2,): 0.7, (3,): 0.0}, 1.5)
    assert r.beta == {(1,): 0.0, (2,): pytest.approx(1.0), (3,): 0.0}
    with pytest.raises(UndefinedRelevanceError):
        relevance_from_norms({(1,): 0.0}, 1.0)


@given(st.lists(st.floats(0.0, 50.0), min_size=1, max_size=8), st.sampled_from([1.0, 1.5, 2.0, 4.0]))
def test_relevance_has_unit_pnorm(norms, p):
    if max(norms) < 1e-6:
        return
    r = relevance_from_norms({(i + 1,): v for i, v in enumerate(norms)}, p)
    assert r.pnorm() == pytest.approx(1.0, abs=1e-12)
    assert sum(r.display_share.values()) == pytest.approx(1.0, abs=1e-12)
    order = sorted(range(len(norms)), key=lambda i: norms[i])
    betas = [r.beta[(i + 1,)] for i in order]
    assert all(a <= b + 1e-15 for a, b in zip(betas, betas[1:]))


def test_report_roundtrip_and_top():
    head = FusionHead.from_arrays({(1,): [1.0], (2,): [3.0], (1, 2): [2.0]})
    r = recover_relevance(head, 1.0)
    assert r.top() == (2,)
    back = RelevanceReport.from_dict(r.to_dict())
    assert back.beta == pytest.approx(r.beta) and back.p == r.p


def test_projection_examples_and_gradient():
    rep = np.random.default_rng(0).normal(size=(3, 4))
    np.testing.assert_allclose(interaction_project(rep, np.eye(4)).data, rep)
    assert np.all(interaction_project(rep, np.zeros((2, 4))).data == 0)
    w = Tensor(np.random.default_rng(1).normal(size=(4, 8)), True)
    x = np.random.default_rng(2).normal(size=(5, 8))
    with Tape() as tape:
        loss = (interaction_project(x, w) ** 2).sum()
    assert interaction_project(x, w).shape == (5, 4)
    num = numeric_grad(lambda: float((interaction_project(x, w) ** 2).sum().data), w.data)
    np.testing.assert_allclose(backward(tape, loss)[w], num, rtol=1e-6)


def test_head_init_bounds():
    rng = np.random.default_rng(0)
    head = FusionHead.init({(1,): 8, (1, 2): 64}, rng)
    bound = 1 / np.sqrt(72)
    assert all(np.all(np.abs(w.data) <= bound) for w in head.weights.values())
    assert head.bias.data == 0.0
