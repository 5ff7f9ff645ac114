import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from palid.core_math import finite_diff_grad, relative_error, sigmoid
from palid.lstmp import (CellState, InjectionParams, LstmParams, OutputHead, ReceiverKind,
                         backward_sequence, cell_backward, cell_forward, forward_sequence,
                         init_params, output_forward, params_equal)

RECEIVERS = list(ReceiverKind)


def _scalar_params(value=0.1, receiver=ReceiverKind.NONE):
    p = init_params(1, 1, 1, 1, heads={"y": 1}, receiver=receiver, feat_dim=1)
    return p.map(lambda a: np.full_like(a, value))


def _scalar_oracle(x, c0, r0, w=0.1):
    """The cell update rules written out for the scalar case, all weights w, biases 0."""
    s = lambda z: 1 / (1 + math.exp(-z))  # noqa: E731
    i = s(w * x + w * r0 + w * c0)
    f = s(w * x + w * r0 + w * c0)
    c = f * c0 + i * math.tanh(w * x + w * r0)
    o = s(w * x + w * r0 + w * c)
    m = o * math.tanh(c)
    return c, w * m, w * m


def test_zero_params_give_zero_state():
    p = init_params(5, 4, 3, 2).map(np.zeros_like)
    state, proj, cache = cell_forward(p, np.arange(5.0), CellState.zeros(p))
    np.testing.assert_array_equal(state.c, 0)
    np.testing.assert_array_equal(state.r, 0)
    np.testing.assert_array_equal(proj, 0)
    np.testing.assert_array_equal(cache.i, 0.5)
    np.testing.assert_array_equal(cache.f, 0.5)
    np.testing.assert_array_equal(cache.o, 0.5)


def test_scalar_step_matches_hand_computation():
    p = _scalar_params()
    p.b_i[:] = p.b_f[:] = p.b_c[:] = p.b_o[:] = 0
    state, proj, _ = cell_forward(p, [1.0], CellState(np.array([1.0]), np.array([1.0])))
    c, r, pp = _scalar_oracle(1.0, 1.0, 1.0)
    assert abs(state.c[0] - c) < 1e-12
    assert abs(state.r[0] - r) < 1e-12
    assert abs(proj[0] - pp) < 1e-12
    # frozen from the standalone evaluation
    assert abs(state.c[0] - 0.68782329251816) < 1e-12
    assert abs(state.r[0] - 0.03381389657112346) < 1e-12


@pytest.mark.parametrize("receiver", RECEIVERS[1:])
def test_zero_injection_is_bit_identical(receiver):
    rng = np.random.default_rng(3)
    plain = init_params(6, 8, 4, 4, seed=11, scale=0.5)
    injected = init_params(6, 8, 4, 4, seed=11, scale=0.5, receiver=receiver, feat_dim=3)
    injected.inj.W_inj[:] = 0
    prev = CellState(rng.normal(size=8), rng.normal(size=4))
    x = rng.normal(size=6)
    s1, p1, _ = cell_forward(plain, x, prev)
    s2, p2, _ = cell_forward(injected, x, prev, rng.normal(size=3))
    assert s1.c.tobytes() == s2.c.tobytes()
    assert s1.r.tobytes() == s2.r.tobytes()
    assert p1.tobytes() == p2.tobytes()


def test_feature_presence_must_match_injection():
    p = init_params(3, 4, 2, 2)
    with pytest.raises(ValueError):
        cell_forward(p, np.zeros(3), CellState.zeros(p), np.zeros(2))
    q = init_params(3, 4, 2, 2, receiver=ReceiverKind.G_FUNCTION, feat_dim=2)
    with pytest.raises(ValueError):
        cell_forward(q, np.zeros(3), CellState.zeros(q))


def test_dimension_errors_name_the_matrix():
    p = init_params(3, 4, 2, 2)
    with pytest.raises(ValueError, match="W_ix"):
        cell_forward(p, np.zeros(5), CellState.zeros(p))
    with pytest.raises(ValueError, match="W_ir"):
        cell_forward(p, np.zeros(3), CellState(np.zeros(4), np.zeros(3)))
    with pytest.raises(ValueError, match="non-finite"):
        cell_forward(p, np.array([0.0, np.nan, 0.0]), CellState.zeros(p))
    bad = init_params(3, 4, 2, 2)
    bad.W_cr = np.zeros((4, 5))
    with pytest.raises(ValueError, match="W_cr"):
        bad.validate()


def test_output_forward_examples():
    head = OutputHead(np.zeros((2, 2)), np.zeros((2, 3)), np.array([1.0, -1.0]))
    np.testing.assert_array_equal(output_forward(head, [0.3, 0.7], [1.0, 2.0, 3.0]), [1.0, -1.0])
    head = OutputHead(np.eye(2), np.zeros((2, 2)), np.zeros(2))
    np.testing.assert_array_equal(output_forward(head, [0.3, 0.7], [5.0, 5.0]), [0.3, 0.7])
    with pytest.raises(ValueError):
        output_forward(head, [0.3, 0.7, 1.0], [5.0, 5.0])


def test_output_forward_matches_naive_matvec():
    rng = np.random.default_rng(0)
    head = OutputHead(rng.normal(size=(3, 2)), rng.normal(size=(3, 2)), rng.normal(size=3))
    r, p = rng.normal(size=2), rng.normal(size=2)
    expected = [sum(head.W_yr[i, j] * r[j] for j in range(2))
                + sum(head.W_yp[i, j] * p[j] for j in range(2)) + head.b_y[i] for i in range(3)]
    np.testing.assert_allclose(output_forward(head, r, p), expected, rtol=0, atol=1e-14)


def test_cell_backward_zero_upstream():
    p = init_params(3, 4, 2, 2, receiver=ReceiverKind.OUTPUT_GATE, feat_dim=2, scale=0.5)
    _, _, cache = cell_forward(p, np.ones(3), CellState.zeros(p), np.ones(2))
    grads, gx, gr, gc, gf = cell_backward(p, cache, np.zeros(2), np.zeros(4), np.zeros(2))
    assert all(np.all(a == 0) for a in grads.arrays().values())
    for g in (gx, gr, gc, gf):
        np.testing.assert_array_equal(g, 0)


def _step_objective(wr, wc, wp):
    return lambda state, proj: float(state.r @ wr + state.c @ wc + proj @ wp)


@pytest.mark.parametrize("receiver", RECEIVERS)
def test_cell_backward_matches_finite_differences(receiver):
    rng = np.random.default_rng(5)
    p = init_params(3, 5, 2, 3, receiver=receiver, feat_dim=2, seed=1, scale=0.6)
    x = rng.normal(size=3)
    prev = CellState(rng.normal(size=5), rng.normal(size=2))
    feat = rng.normal(size=2) if receiver is not ReceiverKind.NONE else None
    wr, wc, wp = rng.normal(size=2), rng.normal(size=5), rng.normal(size=3)
    obj = _step_objective(wr, wc, wp)

    _, _, cache = cell_forward(p, x, prev, feat)
    grads, gx, gr, gc, gf = cell_backward(p, cache, wr, wc, wp)

    for name, arr in p.arrays().items():
        if name.startswith("heads."):
            continue

        def f(v, arr=arr):
            saved = arr.copy()
            arr[...] = v.reshape(arr.shape)
            state, proj, _ = cell_forward(p, x, prev, feat)
            arr[...] = saved
            return obj(state, proj)

        num = finite_diff_grad(f, arr.copy())
        ana = grads.arrays()[name].ravel()
        mask = np.abs(ana) > 1e-8
        assert relative_error(ana, num)[mask].max(initial=0) < 1e-6, name

    def wrt(which):
        def f(v):
            args = {"x": x, "r": prev.r, "c": prev.c, "feat": feat}
            args[which] = v
            state, proj, _ = cell_forward(p, args["x"], CellState(args["c"], args["r"]), args["feat"])
            return obj(state, proj)
        return f

    checks = [("x", x, gx), ("r", prev.r, gr), ("c", prev.c, gc)]
    if feat is not None:
        checks.append(("feat", feat, gf))
    for which, at, ana in checks:
        num = finite_diff_grad(wrt(which), at)
        assert relative_error(ana, num).max() < 1e-6, which


def test_sequence_matches_chained_steps():
    rng = np.random.default_rng(9)
    p = init_params(4, 6, 3, 2, receiver=ReceiverKind.INPUT_GATE, feat_dim=2, scale=0.4)
    X = rng.normal(size=(7, 4))
    F = rng.normal(size=(7, 2))
    R, P, _ = forward_sequence(p, X[:, None, :], F[:, None, :])
    state = CellState.zeros(p)
    for t in range(7):
        state, proj, _ = cell_forward(p, X[t], state, F[t])
        np.testing.assert_allclose(R[t, 0], state.r, rtol=0, atol=1e-12)
        np.testing.assert_allclose(P[t, 0], proj, rtol=0, atol=1e-12)


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 10_000), st.floats(-50, 50))
def test_gates_open_interval_and_cell_bound(seed, shift):
    rng = np.random.default_rng(seed)
    p = init_params(3, 4, 2, 2, seed=seed, scale=1.0)
    prev = CellState(rng.normal(size=4) * 3, rng.normal(size=2))
    _, _, cache = cell_forward(p, rng.normal(size=3) + shift / 50, prev)
    for gate in (cache.i, cache.f, cache.o):
        assert np.all((gate > 0) & (gate < 1))
    assert np.all(np.abs(cache.c) <= np.abs(prev.c) + 1)


def test_inj_roundtrip_through_arrays():
    p = init_params(3, 4, 2, 2, heads={"a": 2}, receiver=ReceiverKind.FORGET_GATE, feat_dim=5)
    q = LstmParams.from_arrays(p.arrays(), ReceiverKind.FORGET_GATE)
    assert params_equal(p, q)
    assert isinstance(q.inj, InjectionParams) and q.inj.feat_dim == 5
    with pytest.raises(ValueError):
        LstmParams.from_arrays(p.arrays(), ReceiverKind.NONE)


def test_removing_zero_injection_restores_plain_cell():
    rng = np.random.default_rng(2)
    plain = init_params(4, 5, 3, 3, heads={"y": 2}, seed=4, scale=0.3)
    arrays = dict(plain.copy().arrays())
    arrays["inj.W_inj"] = np.zeros((5, 3))
    with_inj = LstmParams.from_arrays(arrays, ReceiverKind.G_FUNCTION)
    back = LstmParams.from_arrays({k: v for k, v in with_inj.arrays().items() if k != "inj.W_inj"})
    assert params_equal(plain, back)
    X = rng.normal(size=(6, 2, 4))
    R1, P1, _ = forward_sequence(plain, X)
    R2, P2, _ = forward_sequence(with_inj, X, rng.normal(size=(6, 2, 3)))
    assert R1.tobytes() == R2.tobytes() and P1.tobytes() == P2.tobytes()


def test_backward_sequence_feature_gradient():
    rng = np.random.default_rng(4)
    p = init_params(3, 4, 2, 2, receiver=ReceiverKind.G_FUNCTION, feat_dim=3, scale=0.5)
    X = rng.normal(size=(4, 1, 3))
    F = rng.normal(size=(4, 1, 3))
    wR, wP = rng.normal(size=(4, 1, 2)), rng.normal(size=(4, 1, 2))

    def loss(f):
        R, P, _ = forward_sequence(p, X, f.reshape(F.shape))
        return float((R * wR).sum() + (P * wP).sum())

    _, _, cache = forward_sequence(p, X, F)
    _, _, dF = backward_sequence(p, cache, wR, wP)
    assert relative_error(dF.ravel(), finite_diff_grad(loss, F)).max() < 1e-6


def test_sigmoid_used_for_gates():
    p = init_params(2, 3, 1, 1, scale=0.7, seed=8)
    x = np.array([0.4, -0.2])
    _, _, cache = cell_forward(p, x, CellState.zeros(p))
    np.testing.assert_allclose(cache.i, sigmoid(p.W_ix @ x + p.b_i), atol=1e-15)
