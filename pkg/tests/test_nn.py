import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from ensroute.nn import autograd as ag
from ensroute.nn.checkpoint import Checkpoint, CheckpointError, from_bytes, load, save, to_bytes
from ensroute.nn.gradcheck import grad_check, grad_check_params
from ensroute.nn.layers import (MLP, InstanceNorm, Linear, MultiHeadAttention, clip_scores, masked_softmax,
                                mha_forward, mlp_forward)
from ensroute.nn.optim import AdamState, NonFiniteGradientError, adam_step

TOL = 1e-4


def _w(rng, shape):
    return ag.Tensor(rng.normal(size=shape))


# -- elementwise and shape ops ---------------------------------------------

@pytest.mark.parametrize("name", ["add", "sub", "mul", "div", "relu", "tanh", "sigmoid", "exp", "log",
                                  "matmul", "matmul_batched", "matmul_vec", "sum_axis", "mean", "reshape",
                                  "transpose", "index", "concat"])
def test_op_gradients(rng, name):
    w = _w(rng, (3, 4))
    a = rng.normal(size=(3, 4))
    b = rng.normal(size=(4,))
    w3 = ag.Tensor(rng.normal(size=(2, 3, 5)))
    w4 = ag.Tensor(rng.normal(size=(4, 4)))
    cases = {
        "add": (lambda x, y: ((x + y) * w).sum(), a, b),
        "sub": (lambda x, y: ((x - y) * w).sum(), a, b),
        "mul": (lambda x, y: (x * y * w).sum(), a, b),
        "div": (lambda x, y: (x / y * w).sum(), a, b + 3.0 * np.sign(b)),
        "relu": (lambda x: (ag.relu(x) * w).sum(), a + 0.05 * np.sign(a)),
        "tanh": (lambda x: (ag.tanh(x) * w).sum(), a),
        "sigmoid": (lambda x: (ag.sigmoid(x) * w).sum(), a),
        "exp": (lambda x: (ag.exp(x) * w).sum(), a),
        "log": (lambda x: (ag.log(x) * w).sum(), np.abs(a) + 0.5),
        "matmul": (lambda x, y: (x @ y).sum(), a, rng.normal(size=(4, 5))),
        "matmul_batched": (lambda x, y: ((x @ y) * w3).sum(),
                           rng.normal(size=(2, 3, 4)), rng.normal(size=(4, 5))),
        "matmul_vec": (lambda x, y: ((x @ y) * ag.Tensor(np.arange(3.0))).sum(), a, b),
        "sum_axis": (lambda x: (ag.sum_(x, axis=0) * ag.Tensor(b)).sum(), a),
        "mean": (lambda x: (ag.mean(x, axis=1, keepdims=True) * x).sum(), a),
        "reshape": (lambda x: (ag.reshape(x, (4, 3)) * ag.Tensor(a.reshape(4, 3))).sum(), a),
        "transpose": (lambda x: (ag.transpose(x, (1, 0)) * ag.Tensor(a.T ** 2)).sum(), a),
        "index": (lambda x: (x[1:, ::2] * ag.Tensor(np.ones((2, 2)) * 3)).sum(), a),
        "concat": (lambda x, y: (ag.concat([x, ag.reshape(y, (1, 4))], axis=0) * w4).sum(), a, b),
    }
    fn, *point = cases[name]
    assert grad_check(fn, *point) < TOL


def test_gather_take_scatter_gradients(rng):
    x = rng.normal(size=(2, 5, 3))
    idx = np.array([[0, 4, 4], [2, 1, 0]])
    wg = ag.Tensor(rng.normal(size=(2, 3, 3)))
    assert grad_check(lambda t: (ag.gather_rows(t, idx) * wg).sum(), x) < TOL
    y = rng.normal(size=(2, 3, 6))
    pick = np.array([[0, 5, 2], [1, 1, 3]])
    assert grad_check(lambda t: (ag.take_last(t, pick) * ag.Tensor(np.arange(6.0).reshape(2, 3))).sum(), y) < TOL
    vals = rng.normal(size=(2, 3, 4))
    where = np.array([[[0, 2, 5, -1]] * 3] * 2)
    wt = ag.Tensor(rng.normal(size=(2, 3, 7)))
    assert grad_check(lambda t: (ag.scatter_last(t, where, 7, -1.0) * wt).sum(), vals) < TOL


def test_scatter_last_fill_and_pads():
    vals = ag.Tensor(np.array([[[1.0, 2.0, 3.0]]]))
    out = ag.scatter_last(vals, np.array([[[2, 0, -1]]]), 4, -1.0)
    assert out.data.tolist() == [[[2.0, -1.0, 1.0, -1.0]]]


def test_gradient_accumulates_over_reuse():
    x = ag.Tensor(np.array([2.0]), requires_grad=True)
    (x * x + x).sum().backward()
    assert x.grad.tolist() == [5.0]


def test_no_grad_builds_no_graph():
    x = ag.Tensor(np.ones(3), requires_grad=True)
    with ag.no_grad():
        y = (x * 2).sum()
    assert not y.requires_grad


# -- fused ops ---------------------------------------------------------------

@settings(max_examples=25, deadline=None)
@given(seed=st.integers(0, 2**32 - 1))
def test_masked_softmax_gradients(seed):
    rng = np.random.default_rng(seed)
    u = rng.normal(size=(3, 6)) * 2
    mask = rng.random((3, 6)) < 0.6
    mask[:, 2] = True
    w = ag.Tensor(rng.normal(size=(3, 6)))
    assert grad_check(lambda t: (ag.masked_softmax(t, mask) * w).sum(), u) < TOL
    assert grad_check(lambda t: ag.take_last(ag.masked_log_softmax(t, mask), np.full(3, 2)).sum(), u) < TOL


def test_masked_softmax_examples():
    p = masked_softmax(np.array([0.0, 0.0, 3.0]), np.array([True, True, False])).data
    assert p.tolist() == [0.5, 0.5, 0.0]
    one = masked_softmax(np.array([1.0, 2.0]), np.array([False, True])).data
    assert one.tolist() == [0.0, 1.0]
    with pytest.raises(ValueError):
        masked_softmax(np.zeros(2), np.zeros(2, dtype=bool))


@settings(max_examples=25, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), c=st.floats(-50, 50))
def test_softmax_shift_invariance(seed, c):
    rng = np.random.default_rng(seed)
    u = rng.normal(size=8)
    mask = rng.random(8) < 0.7
    mask[0] = True
    a = masked_softmax(u, mask).data
    b = masked_softmax(u + c, mask).data
    np.testing.assert_allclose(a, b, rtol=0, atol=1e-12)
    assert abs(a.sum() - 1) < 1e-9


def test_instance_norm_gradient(rng):
    x = rng.normal(size=(2, 6, 3))
    w = ag.Tensor(rng.normal(size=(2, 6, 3)))
    assert grad_check(lambda t: (ag.instance_norm(t) * w).sum(), x) < TOL


def test_clip_scores():
    assert clip_scores(np.array([0.0])).data.tolist() == [0.0]
    assert abs(clip_scores(np.array([100.0]), 50.0).data[0] - 50.0) < 1e-6
    out = clip_scores(np.linspace(-30, 30, 101), 50.0).data
    assert np.all(np.abs(out) <= 50.0)
    with pytest.raises(ValueError):
        clip_scores(np.zeros(1), 0.0)


def test_clip_gradient(rng):
    w = ag.Tensor(rng.normal(size=5))
    assert grad_check(lambda t: (clip_scores(t, 50.0) * w).sum(), rng.normal(size=5)) < TOL


# -- layers ------------------------------------------------------------------

def test_mlp_zero_weights_give_zero(rng):
    mlp = MLP([4, 8, 3], rng, dtype=np.float64)
    for p in mlp.parameters():
        p.data[...] = 0
    assert np.all(mlp_forward(rng.normal(size=(2, 4)), mlp).data == 0)


def test_identity_linear(rng):
    lin = Linear(3, 3, rng, dtype=np.float64)
    lin.weight.data = np.eye(3)
    lin.bias.data = np.zeros(3)
    x = rng.normal(size=(5, 3))
    np.testing.assert_array_equal(lin(ag.Tensor(x)).data, x)


def test_shape_mismatch(rng):
    with pytest.raises(ValueError):
        MLP([4, 8, 3], rng)(ag.Tensor(np.zeros((2, 5))))
    with pytest.raises(ValueError):
        MultiHeadAttention(10, 3, rng)


@pytest.mark.parametrize("seed", [0, 1, 2])
def test_mlp_jacobian(seed):
    rng = np.random.default_rng(seed)
    mlp = MLP([5, 7, 4], rng, dtype=np.float64)
    w = ag.Tensor(rng.normal(size=(3, 4)))
    assert grad_check(lambda t: (mlp(t) * w).sum(), rng.normal(size=(3, 5))) < TOL
    x = ag.Tensor(rng.normal(size=(3, 5)))
    assert grad_check_params(lambda: (mlp(x) * w).sum(), mlp.parameters()) < TOL


def test_attention_single_token_is_value_projection(rng):
    mha = MultiHeadAttention(8, 2, rng, dtype=np.float64)
    x = ag.Tensor(rng.normal(size=(1, 1, 8)))
    out = mha_forward(x, x, x, 2, mha).data
    want = mha.combine(mha.wv(x)).data
    np.testing.assert_allclose(out, want, rtol=1e-12)


def test_attention_permutation_equivariant(rng):
    mha = MultiHeadAttention(8, 4, rng, dtype=np.float64)
    x = rng.normal(size=(2, 6, 8))
    perm = rng.permutation(6)
    a = mha(ag.Tensor(x)).data[:, perm]
    b = mha(ag.Tensor(x[:, perm])).data
    np.testing.assert_allclose(a, b, rtol=0, atol=1e-12)


@pytest.mark.parametrize("seed", [0, 1])
def test_attention_gradients(seed):
    rng = np.random.default_rng(seed)
    mha = MultiHeadAttention(8, 2, rng, dtype=np.float64)
    h = rng.normal(size=(2, 5, 8))
    w = ag.Tensor(rng.normal(size=(2, 5, 8)))
    assert grad_check(lambda t: (mha(t) * w).sum(), h) < TOL
    mask = rng.random((2, 5, 5)) < 0.7
    mask[..., 0] = True
    ctx = ag.Tensor(h)
    assert grad_check_params(lambda: (mha(ctx, mask=mask) * w).sum(), mha.parameters()) < TOL


def test_instance_norm_layer_gradient(rng):
    norm = InstanceNorm(3, dtype=np.float64)
    norm.gamma.data = rng.normal(size=3)
    x = ag.Tensor(rng.normal(size=(2, 5, 3)))
    w = ag.Tensor(rng.normal(size=(2, 5, 3)))
    assert grad_check_params(lambda: (norm(x) * w).sum(), norm.parameters()) < TOL


def test_grad_check_detects_wrong_gradient():
    def bad_square(t):
        return ag._make(t.data ** 2, (t,), lambda g: t._accum(g * t.data)).sum()  # missing factor 2
    assert grad_check(bad_square, np.array([1.0, 2.0])) > 0.1


# -- Adam --------------------------------------------------------------------

def _params(rng):
    return [("a", ag.Parameter(rng.normal(size=(3, 2)))), ("b", ag.Parameter(rng.normal(size=4)))]


def test_adam_zero_gradient_keeps_params(rng):
    ps = _params(rng)
    before = [p.data.copy() for _, p in ps]
    adam_step(ps, AdamState(), grads={"a": np.zeros((3, 2)), "b": np.zeros(4)})
    for (_, p), b in zip(ps, before):
        np.testing.assert_array_equal(p.data, b)


def test_adam_first_step_magnitude(rng):
    ps = _params(rng)
    before = [p.data.copy() for _, p in ps]
    st_ = AdamState(lr=1e-3)
    adam_step(ps, st_, grads={"a": np.full((3, 2), 0.7), "b": np.full(4, -2.0)})
    # bias-corrected first step moves every entry by lr * g / (|g| + eps)
    np.testing.assert_allclose(before[0] - ps[0][1].data, 1e-3 * 0.7 / (0.7 + 1e-8), atol=1e-6)
    np.testing.assert_allclose(before[1] - ps[1][1].data, -1e-3 * 2.0 / (2.0 + 1e-8), atol=1e-6)


def test_adam_matches_hand_formula(rng):
    p = ag.Parameter(np.array([1.0]))
    st_ = AdamState(lr=0.1)
    m = v = 0.0
    x = 1.0
    for t, g in enumerate([0.5, -1.0, 2.0], start=1):
        adam_step([("p", p)], st_, grads={"p": np.array([g])})
        m = 0.9 * m + 0.1 * g
        v = 0.999 * v + 0.001 * g * g
        x -= 0.1 * (m / (1 - 0.9 ** t)) / (np.sqrt(v / (1 - 0.999 ** t)) + 1e-8)
        assert p.data[0] == pytest.approx(x, rel=1e-12)


def test_adam_non_finite_raises(rng):
    with pytest.raises(NonFiniteGradientError):
        adam_step(_params(rng), AdamState(), grads={"a": np.full((3, 2), np.nan), "b": np.zeros(4)})


def test_adam_deterministic():
    def run():
        rng = np.random.default_rng(4)
        ps = _params(rng)
        st_ = AdamState()
        for _ in range(5):
            adam_step(ps, st_, grads={"a": rng.normal(size=(3, 2)), "b": rng.normal(size=4)})
        return [p.data.tobytes() for _, p in ps]
    assert run() == run()


# -- checkpoint --------------------------------------------------------------

def _ckpt(rng):
    return Checkpoint(arrays={"global.w": rng.normal(size=(2, 3)).astype(np.float32),
                              "local.0.b": np.arange(4, dtype=np.int64)},
                      config={"lr": 1e-4}, meta={"step": 3}, rng_state=np.random.default_rng(1).bit_generator.state)


def test_checkpoint_round_trip(rng, tmp_path):
    ck = _ckpt(rng)
    save(ck, tmp_path / "a.ckpt")
    back = load(tmp_path / "a.ckpt")
    assert back.config == ck.config and back.meta == ck.meta and back.rng_state == ck.rng_state
    for k, v in ck.arrays.items():
        assert back.arrays[k].dtype == v.dtype
        np.testing.assert_array_equal(back.arrays[k], v)
    assert back.namespace("global") == {"w": back.arrays["global.w"]}


def test_checkpoint_bytes_deterministic(rng):
    ck = _ckpt(rng)
    shuffled = Checkpoint(arrays=dict(reversed(list(ck.arrays.items()))), config=ck.config, meta=ck.meta,
                          rng_state=ck.rng_state)
    assert to_bytes(ck) == to_bytes(shuffled)
    assert to_bytes(from_bytes(to_bytes(ck))) == to_bytes(ck)


def test_checkpoint_layout(rng):
    raw = to_bytes(_ckpt(rng))
    assert raw[:8] == b"ENSRCKPT"
    assert int.from_bytes(raw[8:12], "little") == 1


def test_checkpoint_rejects_garbage(rng):
    with pytest.raises(CheckpointError):
        from_bytes(b"NOTACKPT" + bytes(20))
    raw = bytearray(to_bytes(_ckpt(rng)))
    raw[8] = 9
    with pytest.raises(CheckpointError):
        from_bytes(bytes(raw))
    with pytest.raises(CheckpointError):
        from_bytes(to_bytes(_ckpt(rng))[:-5])
