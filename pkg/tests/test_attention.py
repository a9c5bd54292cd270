import math

import numpy as np
import pytest

from attnbias import (
    AttentionParams,
    Bipartite,
    Causal,
    CustomGraph,
    EmptyNeighborhoodError,
    Full,
    RelationalGraph,
    ShapeError,
    Strided,
    attend,
    attend_backward,
    build_graph,
    matmul,
    message_decomposition,
    project,
    score_matrix,
)
from attnbias.equivariance import MECHANISMS, gradient_violation, random_instance, random_matrix

E = math.e
SOFT = [1 / (1 + E), E / (1 + E)]


def test_project_identity():
    x = np.array([[1.0, -2.0], [0.5, 3.0]])
    assert np.array_equal(project(x, np.eye(2)), x)


def test_project_swap():
    assert project([[1.0, 0.0]], [[0.0, 1.0], [1.0, 0.0]]).tolist() == [[0.0, 1.0]]


def test_project_bias_broadcast():
    out = project([[1.0, 2.0], [3.0, 4.0]], np.eye(2), np.array([10.0, 20.0]))
    assert out.tolist() == [[11.0, 22.0], [13.0, 24.0]]


def test_project_shape_error():
    with pytest.raises(ShapeError):
        project(np.ones((2, 3)), np.eye(2))


def test_scores_zero():
    assert score_matrix([[0.0]], [[0.0]], 1).tolist() == [[0.0]]


def test_scores_dot_products():
    assert score_matrix([[1.0], [0.0]], [[1.0], [0.0]], 1).tolist() == [[1.0, 0.0], [0.0, 0.0]]


def test_scores_scaled_by_sqrt_width():
    q = np.array([[1.0, 1.0, 0.0, 0.0]])
    assert score_matrix(q, q, 4).tolist() == [[1.0]]


def test_scores_not_symmetric():
    q = np.array([[1.0, 0.0], [0.0, 1.0]])
    k = np.array([[0.0, 1.0], [0.0, 0.0]])
    s = score_matrix(q, k, 2)
    assert s[0, 1] != s[1, 0]


def test_single_entity_returns_input():
    x = np.array([[0.3, -0.7]])
    for spec in (Full(1), Causal(1), Strided(1, 1), CustomGraph(RelationalGraph([[True]]))):
        out = attend(x, AttentionParams.identity(2), spec)
        assert out.alpha.tolist() == [[1.0]]
        assert np.array_equal(out.h, x)


def test_full_worked_example(worked):
    x, params = worked
    out = attend(x, params, Full(2))
    np.testing.assert_allclose(out.alpha, [[0.5, 0.5], SOFT], atol=1e-15)
    np.testing.assert_allclose(out.h, [[0.5], [SOFT[1]]], atol=1e-15)
    np.testing.assert_allclose(out.alpha[1], [0.26894, 0.73106], atol=1e-5)


def test_causal_worked_example(worked):
    x, params = worked
    out = attend(x, params, Causal(2))
    np.testing.assert_allclose(out.alpha, [[1.0, 0.0], SOFT], atol=1e-15)
    assert out.alpha[0, 1] == 0.0
    np.testing.assert_allclose(out.h, [[0.0], [SOFT[1]]], atol=1e-15)


def test_custom_lower_triangle_equals_causal(worked):
    x, params = worked
    a = attend(x, params, Causal(2))
    b = attend(x, params, CustomGraph(RelationalGraph(np.tril(np.ones((2, 2), dtype=bool)))))
    assert np.array_equal(a.h, b.h) and np.array_equal(a.alpha, b.alpha)


def test_bipartite_returns_decoder_rows(rng):
    inst = random_instance(rng, "bipartite", spec=Bipartite(3, 2), d=2)
    out = inst.attend()
    assert out.h.shape == (2, 2)
    assert out.alpha.shape == (2, 3)
    # oracle: plain cross-attention, queries from y and keys/values from x
    p = inst.params
    q, k, v = inst.y @ p.w_q, inst.x @ p.w_k, inst.x @ p.w_v
    s = q @ k.T / math.sqrt(2)
    w = np.exp(s - s.max(axis=1, keepdims=True))
    w /= w.sum(axis=1, keepdims=True)
    np.testing.assert_allclose(out.alpha, w, atol=1e-14)
    np.testing.assert_allclose(out.h, w @ v, atol=1e-14)


def test_bipartite_requires_y():
    with pytest.raises(ValueError):
        attend(np.zeros((2, 1)), AttentionParams.identity(1), Bipartite(2, 1))


def test_y_rejected_for_self_attention():
    with pytest.raises(ValueError):
        attend(np.zeros((2, 1)), AttentionParams.identity(1), Full(2), np.zeros((1, 1)))


def test_row_count_mismatch():
    with pytest.raises(ShapeError):
        attend(np.zeros((3, 1)), AttentionParams.identity(1), Full(2))


def test_width_mismatch():
    with pytest.raises(ShapeError):
        attend(np.zeros((2, 3)), AttentionParams.identity(2), Full(2))


def test_param_shapes_checked():
    with pytest.raises(ShapeError):
        AttentionParams(np.eye(2), np.eye(3), np.eye(2))
    with pytest.raises(ShapeError):
        AttentionParams(np.eye(2), np.eye(2), np.eye(2), b_q=np.zeros(3))


def test_custom_graph_empty_row_propagates():
    with pytest.raises(EmptyNeighborhoodError):
        CustomGraph(RelationalGraph([[True, False], [False, False]]))


def test_numpy_reference_forward(rng):
    # independent float path (BLAS matmul, vectorised softmax)
    for t in range(30):
        inst = random_instance(rng.split(t), "graph", bias=True)
        p = inst.params
        q = inst.x @ p.w_q + p.b_q
        k = inst.x @ p.w_k + p.b_k
        v = inst.x @ p.w_v + p.b_v
        s = np.where(inst.spec.graph.adjacency, q @ k.T / math.sqrt(p.d), -np.inf)
        w = np.exp(s - s.max(axis=1, keepdims=True))
        w /= w.sum(axis=1, keepdims=True)
        out = inst.attend()
        np.testing.assert_allclose(out.alpha, w, atol=1e-13)
        np.testing.assert_allclose(out.h, w @ v, atol=1e-13)


@pytest.mark.parametrize("mechanism", MECHANISMS)
def test_expected_value_form(rng, mechanism):
    for t in range(20):
        inst = random_instance(rng.split(t), mechanism)
        out = inst.attend()
        # values always come from x (the encoder set, for bipartite)
        v = matmul(inst.x, inst.params.w_v)
        h = np.zeros_like(out.h)
        for i in range(out.alpha.shape[0]):
            for c in range(inst.params.d):
                acc = 0.0
                for j in range(out.alpha.shape[1]):
                    acc = acc + out.alpha[i, j] * v[j, c]
                h[i, c] = acc
        assert np.array_equal(h, out.h)


@pytest.mark.parametrize("mechanism", MECHANISMS)
def test_messages_sum_to_attend_output(rng, mechanism):
    for t in range(20):
        inst = random_instance(rng.split(t), mechanism, bias=True)
        messages, agg = message_decomposition(inst.x, inst.params, inst.spec, inst.y)
        assert np.array_equal(agg, inst.attend().h)
        adj = build_graph(inst.spec).adjacency
        offset = inst.spec.n_x if isinstance(inst.spec, Bipartite) else 0
        expected_edges = {(i, j) for i, j in zip(*np.nonzero(adj)) if i >= offset}
        assert set(messages) == expected_edges


def test_messages_single_entity():
    x = np.array([[0.4, -1.0]])
    params = AttentionParams.identity(2)
    messages, agg = message_decomposition(x, params, Full(1))
    assert list(messages) == [(0, 0)]
    assert np.array_equal(messages[(0, 0)], x[0])
    assert np.array_equal(agg, x)


def test_messages_causal_worked_example(worked):
    x, params = worked
    messages, agg = message_decomposition(x, params, Causal(2))
    assert set(messages) == {(0, 0), (1, 0), (1, 1)}
    assert messages[(0, 0)].tolist() == [0.0]
    assert messages[(1, 0)].tolist() == [0.0]
    np.testing.assert_allclose(messages[(1, 1)], [SOFT[1]], atol=1e-15)
    assert np.array_equal(agg, attend(x, params, Causal(2)).h)


@pytest.mark.parametrize("mechanism", MECHANISMS)
def test_backward_zero_upstream(rng, mechanism):
    inst = random_instance(rng, mechanism, bias=True)
    g = attend_backward(inst.x, inst.params, inst.spec, inst.y, np.zeros_like(inst.attend().h))
    for name in ("d_x", "d_wq", "d_wk", "d_wv", "d_bq", "d_bk", "d_bv"):
        assert not np.any(getattr(g, name))


def test_backward_single_entity_pass_through():
    x = np.array([[0.2, -0.5, 0.9]])
    up = np.array([[1.0, 2.0, -3.0]])
    g = attend_backward(x, AttentionParams.identity(3), Full(1), None, up)
    np.testing.assert_allclose(g.d_x, up, atol=1e-15)


def test_backward_shape_check(worked):
    x, params = worked
    with pytest.raises(ShapeError):
        attend_backward(x, params, Full(2), None, np.zeros((3, 1)))


def test_backward_masked_entries_have_no_score_gradient(rng):
    # key bias gradient is exactly zero: a per-row constant shift cannot move a softmax
    inst = random_instance(rng, "causal", n=5, d=3, bias=True)
    up = random_matrix(rng, 5, 3)
    g = attend_backward(inst.x, inst.params, inst.spec, None, up)
    assert np.max(np.abs(g.d_bk)) <= 1e-14
    # last row of x only feeds the last query and its own key/value; with zero
    # upstream on the last output it receives no gradient at all
    up[-1] = 0.0
    g = attend_backward(inst.x, inst.params, inst.spec, None, up)
    assert not np.any(g.d_x[-1])


def test_backward_bipartite_shapes(rng):
    inst = random_instance(rng, "bipartite", spec=Bipartite(3, 2), d=2)
    g = attend_backward(inst.x, inst.params, inst.spec, inst.y, np.ones((2, 2)))
    assert g.d_x.shape == (3, 2) and g.d_y.shape == (2, 2)


@pytest.mark.parametrize("mechanism", MECHANISMS)
def test_backward_matches_finite_differences(rng, mechanism):
    for t in range(5):
        r = rng.split(t)
        inst = random_instance(r, mechanism, n=3 if mechanism != "bipartite" else None, bias=t % 2 == 0)
        up = random_matrix(r, *inst.attend().h.shape)
        assert gradient_violation(inst, up) <= 1e-5
