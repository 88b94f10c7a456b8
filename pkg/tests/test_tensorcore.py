import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from gasvsf import tensorcore as tc
from gasvsf.checks import OP_TOL, tensorcore_checks
from gasvsf.tensorcore import Tape, Tensor, io
from gasvsf.tensorcore.gradcheck import check_gradients


def T(a, grad=False):
    return Tensor(np.asarray(a, dtype=np.float64), requires_grad=grad)


def test_reshape_round_trip_frames_volume():
    x = np.random.default_rng(0).standard_normal((6, 2, 4, 4))
    v = tc.frames_to_volume(T(x), 3)
    assert v.shape == (2, 2, 4, 4, 3)
    back = tc.volume_to_frames(v)
    assert np.array_equal(back.data, x)
    r = tc.reshape_view(tc.reshape_view(T(x), (2, 3, 2, 4, 4)), (6, 2, 4, 4))
    assert np.array_equal(r.data, x)


def test_reshape_singleton():
    r = tc.reshape_view(T([3.5]), (1, 1, 1))
    assert r.shape == (1, 1, 1) and r.data.ravel()[0] == 3.5


def test_reshape_count_mismatch():
    with pytest.raises(tc.ShapeError):
        tc.reshape_view(T(np.zeros((2, 3))), (4, 2))


def test_frames_to_volume_layout():
    # frame-major batches: row b*T + t holds frame t of clip b
    x = np.arange(2 * 3 * 1 * 1 * 1, dtype=float).reshape(6, 1, 1, 1)
    v = tc.frames_to_volume(T(x), 3).data
    assert v[1, 0, 0, 0, 2] == x[5, 0, 0, 0]
    with pytest.raises(tc.ShapeError):
        tc.frames_to_volume(T(x), 4)


def test_conv3d_identity_and_zero():
    rng = np.random.default_rng(1)
    x = rng.standard_normal((1, 3, 4, 5, 3))
    w = np.zeros((3, 3, 1, 1, 1))
    w[np.arange(3), np.arange(3)] = 1.0
    assert np.array_equal(tc.conv3d(T(x), T(w)).data, x)
    z = tc.conv3d(T(x), T(np.zeros((2, 3, 3, 3, 3)))).data
    assert z.shape == (1, 2, 4, 5, 3) and not z.any()


def test_conv3d_impulse_reflects_kernel():
    k = np.arange(27, dtype=float).reshape(1, 1, 3, 3, 3)
    x = np.zeros((1, 1, 5, 5, 5))
    x[0, 0, 2, 2, 2] = 1.0
    y = tc.conv3d(T(x), T(k)).data[0, 0]
    # correlation: y[2+a, 2+b, 2+c] = k[1-a, 1-b, 1-c]
    assert np.array_equal(y[1:4, 1:4, 1:4], k[0, 0, ::-1, ::-1, ::-1])
    assert y.sum() == k.sum()


def test_conv3d_even_kernel_rejected():
    with pytest.raises(tc.ShapeError):
        tc.conv3d(T(np.zeros((1, 1, 3, 3, 3))), T(np.zeros((1, 1, 2, 3, 3))))


def test_conv_channel_mismatch():
    with pytest.raises((tc.ShapeError, ValueError)):
        tc.conv2d(T(np.zeros((1, 2, 4, 4))), T(np.zeros((1, 3, 3, 3))))


def test_conv2d_matches_direct_loop():
    rng = np.random.default_rng(2)
    x = rng.standard_normal((1, 2, 5, 6))
    w = rng.standard_normal((3, 2, 3, 3))
    b = rng.standard_normal(3)
    y = tc.conv2d(T(x), T(w), T(b), stride=2).data
    xp = np.pad(x, ((0, 0), (0, 0), (1, 1), (1, 1)))
    ref = np.zeros((1, 3, 3, 3))
    for o in range(3):
        for i in range(3):
            for j in range(3):
                ref[0, o, i, j] = np.sum(xp[0, :, 2 * i:2 * i + 3, 2 * j:2 * j + 3] * w[o]) + b[o]
    assert np.allclose(y, ref, atol=1e-12)


def test_scalar_examples():
    assert tc.sigmoid(T([0.0])).item() == 0.5
    g = tc.global_avg_pool(T(np.full((2, 3, 4, 4, 2), 2.5))).data
    assert g.shape == (2, 3) and np.allclose(g, 2.5)
    assert tc.smooth_l1(T([0.5])).item() == 0.125
    assert tc.smooth_l1(T([-3.0])).item() == 2.5


def test_bce_clamped():
    v = tc.binary_cross_entropy(T([0.0, 1.0]), [1.0, 0.0]).data
    assert np.all(np.isfinite(v))
    assert np.allclose(v, -np.log(1e-7), rtol=1e-6)


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_non_finite_is_error():
    with pytest.raises(tc.NonFiniteError):
        Tensor(np.array([1.0, np.nan]))
    with pytest.raises(tc.NonFiniteError):
        tc.scale(T([1e308]), 10.0)


def test_broadcast_mismatch():
    with pytest.raises(tc.ShapeError):
        tc.elementwise_add(T(np.zeros((2, 3))), T(np.zeros((4,))))


def test_tape_seed_is_one_and_reuse_accumulates():
    x = T([2.0, 3.0], grad=True)
    with Tape() as tape:
        y = tc.elementwise_mul(x, x)
        loss = tc.sum_all(y)
    g = tape.backward(loss)
    assert g[loss.id][0] == 1.0
    assert np.array_equal(tape.grad(x), [4.0, 6.0])


def test_no_tape_no_record():
    x = T([1.0], grad=True)
    y = tc.relu(x)
    assert y.requires_grad
    with Tape() as tape:
        z = tc.scale(x, 2.0)
    assert len(tape.nodes) == 1 and tape.nodes[0].out is z


def test_gradient_suite():
    for name, err, tol in tensorcore_checks(0):
        assert err < tol, (name, err)


@pytest.mark.parametrize("seed", [1, 2])
def test_gradient_suite_other_seeds(seed):
    for name, err, tol in tensorcore_checks(seed):
        assert err < OP_TOL, (name, err)


def test_check_gradients_detects_wrong_adjoint():
    from gasvsf.tensorcore.tensor import make_result

    def bad_square(d):
        x = d["x"]
        return make_result(x.data ** 2, [x], lambda g: [g * x.data], "bad_square")

    errs = check_gradients(bad_square, {"x": np.array([0.5, 1.5, -2.0])})
    assert errs["x"] > 0.1


def test_repeated_backward_bit_identical():
    rng = np.random.default_rng(3)
    x = rng.standard_normal((2, 3, 4, 4, 3))
    w = rng.standard_normal((2, 3, 3, 3, 3))

    def run():
        xt, wt = T(x, True), T(w, True)
        with Tape() as tape:
            loss = tc.sum_all(tc.sigmoid(tc.conv3d(xt, wt)))
        tape.backward(loss)
        return loss.data.copy(), tape.grad(xt).copy(), tape.grad(wt).copy()

    a, b = run(), run()
    for u, v in zip(a, b):
        assert np.array_equal(u, v)


small = arrays(np.float64, (1, 2, 4, 4, 3), elements=st.floats(-10, 10))


@settings(max_examples=25, deadline=None)
@given(small, small, st.floats(-3, 3), st.floats(-3, 3))
def test_conv3d_linearity(x, y, a, b):
    w = np.random.default_rng(4).standard_normal((2, 2, 3, 3, 3))
    lhs = tc.conv3d(T(a * x + b * y), T(w)).data
    rhs = a * tc.conv3d(T(x), T(w)).data + b * tc.conv3d(T(y), T(w)).data
    assert np.allclose(lhs, rhs, rtol=0, atol=1e-10 * max(1.0, np.abs(lhs).max()))


@settings(max_examples=25, deadline=None)
@given(arrays(np.float64, st.tuples(st.integers(1, 4), st.integers(1, 4), st.integers(1, 4)),
              elements=st.floats(-100, 100)))
def test_permute_inverse_round_trip(x):
    p = tc.permute(T(x), (2, 0, 1))
    assert np.array_equal(tc.permute(p, (1, 2, 0)).data, x)


@settings(max_examples=30, deadline=None)
@given(arrays(np.float32, st.tuples(st.integers(1, 3), st.integers(1, 5)),
              elements=st.floats(-1e6, 1e6, width=32)))
def test_vsft_round_trip(x):
    assert np.array_equal(io.loads(io.dumps(x)), x)


def test_vsft_layout_and_errors(tmp_path):
    buf = io.dumps(np.arange(6, dtype=np.float32).reshape(2, 3))
    assert buf[:4] == b"VSFT"
    assert buf[4:8] == (2).to_bytes(4, "little")
    assert buf[8:16] == (2).to_bytes(4, "little") + (3).to_bytes(4, "little")
    assert len(buf) == 16 + 24
    with pytest.raises(io.DumpFormatError):
        io.loads(b"XXXX" + buf[4:])
    with pytest.raises(io.DumpFormatError):
        io.loads(buf[:-4])
    io.save(tmp_path / "a.vsft", np.ones((1, 2)))
    assert np.array_equal(io.load(tmp_path / "a.vsft"), np.ones((1, 2), np.float32))
