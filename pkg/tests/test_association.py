import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from alttrack.association import (
    affinity_scores,
    build_edge_pos_encoding,
    edge_augmented_cross_attention,
    edge_input,
    pairwise_abs_diff_op,
)
from alttrack.numeric import ContractError, Layer, Tensor, grad_check

D = 4


def mlp(rng, din, d=D):
    return [Layer(Tensor(rng.normal(size=(din, d))), Tensor(rng.normal(size=d))),
            Layer(Tensor(rng.normal(size=(d, d))), Tensor(rng.normal(size=d)))]


def attn_params(rng, d=D, zero=False):
    f = (lambda *s: np.zeros(s)) if zero else (lambda *s: rng.normal(size=s))
    return {"Wq": Tensor(f(d, d)), "Wk": Tensor(f(d, d)), "Wv": Tensor(rng.normal(size=(d, d))),
            "We1": Tensor(f(d, 1)), "We2": Tensor(rng.normal(size=(1, d)))}


def boxes(rng, n):
    b = rng.normal(size=(n, 9))
    b[:, 3:6] = np.abs(b[:, 3:6]) + 0.5
    return b


def test_pairwise_diff_layout_and_yaw_wrap():
    trk = np.zeros((2, 9))
    det = np.zeros((3, 9))
    trk[1, 0], det[2, 0] = 4.0, 1.0
    trk[0, 6], det[0, 6] = 3.0, -3.0
    out = pairwise_abs_diff_op(Tensor(trk), Tensor(det)).data
    assert out.shape == (3, 2, 9)
    assert out[2, 1, 0] == 3.0
    assert out[0, 0, 6] == pytest.approx(2 * math.pi - 6.0)


def test_pairwise_diff_gradient():
    rng = np.random.default_rng(0)
    res = grad_check(lambda a, b: pairwise_abs_diff_op(a, b), [boxes(rng, 3), boxes(rng, 2)])
    assert res.passed(1e-6)


@pytest.mark.parametrize("variant,width", [("box", 9), ("center", 3), ("appearance", 5)])
def test_edge_input_widths(variant, width):
    rng = np.random.default_rng(1)
    out = edge_input(variant, Tensor(boxes(rng, 2)), Tensor(boxes(rng, 3)),
                     Tensor(rng.normal(size=(2, 5))), Tensor(rng.normal(size=(3, 5))))
    assert out.shape == (3, 2, width)


def test_edge_input_rejects_unknown_and_missing_embeddings():
    t = Tensor(np.zeros((1, 9)))
    assert edge_input("none", t, t) is None
    with pytest.raises(ContractError):
        edge_input("appearance", t, t)
    with pytest.raises(ContractError):
        edge_input("polar", t, t)


def test_aux_column_is_the_shared_learned_vector():
    rng = np.random.default_rng(2)
    aux = Tensor(rng.normal(size=D))
    E = build_edge_pos_encoding(Tensor(boxes(rng, 3)), Tensor(boxes(rng, 2)), mlp(rng, 9), aux).data
    assert E.shape == (2, 4, D)
    np.testing.assert_array_equal(E[:, 3, :], np.tile(aux.data, (2, 1)))


def test_none_encoding_is_zero():
    rng = np.random.default_rng(3)
    E = build_edge_pos_encoding(Tensor(boxes(rng, 2)), Tensor(boxes(rng, 2)), mlp(rng, 1), variant="none")
    assert not E.data.any()


def test_zero_logit_weights_give_uniform_attention():
    rng = np.random.default_rng(4)
    p = attn_params(rng, zero=True)
    q, keys, E = rng.normal(size=(2, D)), rng.normal(size=(3, D)), rng.normal(size=(2, 3, D))
    q_new, e_new, A = edge_augmented_cross_attention(Tensor(q), Tensor(keys), Tensor(E), p)
    np.testing.assert_allclose(A.data, 1 / 3)
    np.testing.assert_allclose(q_new.data, q + (keys @ p["Wv"].data).mean(axis=0))
    np.testing.assert_allclose(e_new.data, E + p["We2"].data.reshape(1, 1, D) / 3)


def test_edge_attention_contracts():
    rng = np.random.default_rng(5)
    p = attn_params(rng)
    with pytest.raises(ContractError):
        edge_augmented_cross_attention(Tensor(np.ones((2, D))), Tensor(np.ones((3, D))),
                                       Tensor(np.ones((2, 2, D))), p)
    with pytest.raises(ContractError):
        edge_augmented_cross_attention(Tensor(np.ones((2, D))), Tensor(np.zeros((0, D))),
                                       Tensor(np.zeros((2, 0, D))), p)


def test_edge_attention_gradient():
    rng = np.random.default_rng(6)

    def f(q, k, e, Wq, We1, We2):
        p = {"Wq": Wq, "Wk": Tensor(np.eye(D)), "Wv": Tensor(np.eye(D) * 0.5), "We1": We1, "We2": We2}
        q_new, e_new, _ = edge_augmented_cross_attention(q, k, e, p)
        return affinity_scores(e_new, [Layer(Tensor(np.ones((D, 1))), Tensor(np.zeros(1)))])

    args = [rng.normal(size=(2, D)), rng.normal(size=(3, D)), rng.normal(size=(2, 3, D)),
            rng.normal(size=(D, D)), rng.normal(size=(D, 1)), rng.normal(size=(1, D))]
    assert grad_check(f, args).passed(1e-6)


@given(st.integers(1, 5), st.integers(1, 5), st.integers(0, 1000))
def test_attention_rows_are_distributions(n_d, n_k, seed):
    rng = np.random.default_rng(seed)
    _, _, A = edge_augmented_cross_attention(Tensor(rng.normal(size=(n_d, D))), Tensor(rng.normal(size=(n_k, D))),
                                             Tensor(rng.normal(size=(n_d, n_k, D))), attn_params(rng))
    assert A.shape == (n_d, n_k)
    np.testing.assert_allclose(A.data.sum(axis=1), 1.0, atol=1e-12)
    assert (A.data >= 0).all()
