import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from vitbench.errors import ContractError, ShapeError
from vitbench.tensor import (
    Tensor,
    concat,
    dropout,
    finite_difference_check,
    gelu,
    layer_norm,
    load_tensor,
    matmul,
    no_grad,
    save_tensor,
    softmax,
)


def rand(shape, rng, requires_grad=False):
    return Tensor(rng.standard_normal(shape), requires_grad=requires_grad)


# -- matmul --------------------------------------------------------------------


def test_matmul_identity():
    rng = np.random.default_rng(0)
    a = Tensor(rng.standard_normal((3, 3)))
    eye = Tensor(np.eye(3))
    assert np.allclose(matmul(eye, a).data, a.data)


def test_matmul_shape_rule():
    rng = np.random.default_rng(1)
    out = matmul(rand((2, 3), rng), rand((3, 4), rng))
    assert out.shape == (2, 4)


def test_matmul_hand_expansion():
    # 2x2 product expanded by hand: rows of a dotted with columns of b.
    a = [[1.0, 2.0], [3.0, 4.0]]
    b = [[5.0, 6.0], [7.0, 8.0]]
    expected = [
        [1 * 5 + 2 * 7, 1 * 6 + 2 * 8],
        [3 * 5 + 4 * 7, 3 * 6 + 4 * 8],
    ]
    assert np.array_equal(matmul(Tensor(a), Tensor(b)).data, expected)
    assert expected == [[19, 22], [43, 50]]


def test_matmul_mismatch_names_both_shapes():
    with pytest.raises(ShapeError, match=r"\(2, 3\).*\(4, 2\)"):
        matmul(Tensor(np.zeros((2, 3))), Tensor(np.zeros((4, 2))))


def test_matmul_batched_matches_loop():
    rng = np.random.default_rng(2)
    a, b = rng.standard_normal((5, 3, 4)), rng.standard_normal((5, 4, 2))
    out = matmul(Tensor(a), Tensor(b)).data
    for i in range(5):
        assert np.allclose(out[i], a[i] @ b[i])


@settings(max_examples=50, deadline=None)
@given(
    m=st.integers(1, 6), k=st.integers(1, 6), n=st.integers(1, 6), b=st.integers(1, 4)
)
def test_shape_algebra_is_pure(m, k, n, b):
    # Output shapes depend only on input shapes.
    rng = np.random.default_rng(m * 1000 + k * 100 + n * 10 + b)
    assert matmul(rand((m, k), rng), rand((k, n), rng)).shape == (m, n)
    assert matmul(rand((b, m, k), rng), rand((k, n), rng)).shape == (b, m, n)
    assert (rand((m, n), rng) + rand((n,), rng)).shape == (m, n)
    assert softmax(rand((m, n), rng), axis=1).shape == (m, n)


# -- softmax -------------------------------------------------------------------


def test_softmax_uniform_input():
    out = softmax(Tensor([0.0, 0.0, 0.0]), axis=0)
    assert np.allclose(out.data, [1 / 3, 1 / 3, 1 / 3])


def test_softmax_shift_invariance():
    rng = np.random.default_rng(3)
    x = rng.standard_normal(7)
    assert np.allclose(
        softmax(Tensor(x), axis=0).data, softmax(Tensor(x + 13.7), axis=0).data
    )


def test_softmax_direct_evaluation():
    # Independent oracle: plain exp / sum of exps.
    x = np.array([1.0, 2.0, 3.0])
    expected = np.exp(x) / np.exp(x).sum()
    out = softmax(Tensor(x), axis=0).data
    assert np.allclose(out, expected, atol=1e-12)
    assert np.allclose(out, [0.09003, 0.24473, 0.66524], atol=5e-6)


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 10_000))
def test_softmax_slices_sum_to_one(seed):
    rng = np.random.default_rng(seed)
    x = rng.uniform(-50, 50, size=(4, 5))
    for axis in (0, 1, -1):
        sums = softmax(Tensor(x), axis=axis).data.sum(axis=axis)
        assert np.all(np.abs(sums - 1.0) < 1e-6)


def test_softmax_invalid_axis():
    with pytest.raises(IndexError):
        softmax(Tensor([[1.0, 2.0]]), axis=5)


# -- layer_norm ----------------------------------------------------------------


def test_layer_norm_two_point_slice():
    # mean 2, population std 1, so the normalized pair is close to [-1, 1].
    out = layer_norm(Tensor([1.0, 3.0]), Tensor([1.0, 1.0]), Tensor([0.0, 0.0]))
    assert np.allclose(out.data, [-1.0, 1.0], atol=1e-4)


def test_layer_norm_fixed_point():
    rng = np.random.default_rng(4)
    x = rng.standard_normal(64)
    x = (x - x.mean()) / x.std()
    out = layer_norm(Tensor(x), Tensor(np.ones(64)), Tensor(np.zeros(64)))
    assert np.allclose(out.data, x, atol=1e-5)


def test_layer_norm_zero_gamma_broadcasts_beta():
    rng = np.random.default_rng(5)
    x = rng.standard_normal((3, 4))
    beta = np.array([1.0, -2.0, 0.5, 9.0])
    out = layer_norm(Tensor(x), Tensor(np.zeros(4)), Tensor(beta))
    assert np.allclose(out.data, np.broadcast_to(beta, (3, 4)))


def test_layer_norm_constant_slice_regularized():
    out = layer_norm(Tensor([2.0, 2.0, 2.0]), Tensor(np.ones(3)), Tensor(np.zeros(3)))
    assert np.all(np.isfinite(out.data))
    assert np.allclose(out.data, 0.0)


def test_layer_norm_normalizes_mean_and_variance():
    rng = np.random.default_rng(6)
    x = rng.uniform(-5, 5, size=(10, 16))
    out = layer_norm(Tensor(x), Tensor(np.ones(16)), Tensor(np.zeros(16))).data
    assert np.allclose(out.mean(axis=-1), 0.0, atol=1e-10)
    assert np.allclose(out.var(axis=-1), 1.0, atol=1e-3)


def test_layer_norm_shape_and_eps_checks():
    with pytest.raises(ShapeError):
        layer_norm(Tensor(np.zeros((2, 4))), Tensor(np.ones(3)), Tensor(np.zeros(4)))
    with pytest.raises(ContractError):
        layer_norm(Tensor(np.zeros(4)), Tensor(np.ones(4)), Tensor(np.zeros(4)), eps=0.0)


# -- gelu ------------------------------------------------------------------------


def test_gelu_at_zero():
    assert gelu(Tensor([0.0])).data[0] == 0.0


def test_gelu_asymptote():
    assert abs(gelu(Tensor([10.0])).data[0] - 10.0) < 1e-4


def test_gelu_phi_of_one():
    # Exact-CDF variant: gelu(1) = Phi(1).
    from scipy.stats import norm

    assert abs(gelu(Tensor([1.0])).data[0] - norm.cdf(1.0)) < 1e-12
    assert abs(gelu(Tensor([1.0])).data[0] - 0.84134) < 5e-6


# -- backward ------------------------------------------------------------------


def test_backward_sum_gives_ones():
    x = Tensor(np.arange(6.0).reshape(2, 3), requires_grad=True)
    x.sum().backward()
    assert np.array_equal(x.grad, np.ones((2, 3)))


def test_backward_quadratic():
    x = Tensor([1.0, 2.0], requires_grad=True)
    (x * x).sum().backward()
    assert np.array_equal(x.grad, [2.0, 4.0])


def test_backward_accumulates_until_zero_grad():
    x = Tensor([1.0, 2.0], requires_grad=True)
    x.sum().backward()
    x.sum().backward()
    assert np.array_equal(x.grad, [2.0, 2.0])
    x.zero_grad()
    assert x.grad is None
    x.sum().backward()
    assert np.array_equal(x.grad, [1.0, 1.0])


def test_backward_requires_scalar():
    x = Tensor([1.0, 2.0], requires_grad=True)
    with pytest.raises(ContractError):
        (x * 2.0).backward()


def test_backward_shared_operand_counts_twice():
    x = Tensor([3.0], requires_grad=True)
    (x * x).sum().backward()
    assert np.allclose(x.grad, [6.0])


def test_untracked_inputs_get_no_grad():
    x = Tensor([1.0, 2.0], requires_grad=True)
    c = Tensor([5.0, 5.0])
    (x * c).sum().backward()
    assert c.grad is None
    assert np.array_equal(x.grad, [5.0, 5.0])


def test_no_grad_suppresses_graph():
    x = Tensor([1.0], requires_grad=True)
    with no_grad():
        y = (x * 2.0).sum()
    assert not y.requires_grad
    with pytest.raises(ContractError):
        y.backward()


# -- finite differences ----------------------------------------------------------


def test_fd_check_linear_is_exact():
    x = Tensor(np.random.default_rng(7).standard_normal(5), requires_grad=True)
    assert finite_difference_check(lambda t: t.sum(), x) < 1e-10


def test_fd_check_quadratic():
    x = Tensor([1.0, 2.0, 3.0], requires_grad=True)
    assert finite_difference_check(lambda t: (t * t).sum(), x, h=1e-5) < 1e-6


def test_fd_check_restores_data_and_grad():
    x = Tensor([1.0, 2.0], requires_grad=True)
    x.sum().backward()
    before = x.grad.copy()
    finite_difference_check(lambda t: (t * t).sum(), x)
    assert np.array_equal(x.data, [1.0, 2.0])
    assert np.array_equal(x.grad, before)


OPS = {
    "add": lambda a, b: (a + b).sum(),
    "sub": lambda a, b: (a - b).sum(),
    "mul": lambda a, b: (a * b * 0.7).sum(),
    "matmul": lambda a, b: matmul(a.reshape(4, 4), b.reshape(4, 4)).sum(),
    "pow": lambda a, b: ((a + 3.0) ** 2.5).sum() + b.sum(),
    "exp": lambda a, b: (a.exp() + b).sum(),
    "log": lambda a, b: ((a * a + 1.0).log() + b).sum(),
    "softmax": lambda a, b: (softmax(a.reshape(2, 8), axis=1) * b.reshape(2, 8)).sum(),
    "gelu": lambda a, b: (gelu(a) * b).sum(),
    "mean": lambda a, b: (a * b).mean(),
    "reshape_transpose": lambda a, b: (
        a.reshape(2, 8).transpose((1, 0)) * b.reshape(8, 2)
    ).sum(),
    "getitem": lambda a, b: (a[3:9] * b[3:9]).sum(),
    "concat": lambda a, b: concat([a[:8], b[:8] * 2.0], axis=0).sum(),
    "broadcast": lambda a, b: (a.reshape(16, 1).broadcast_to((16, 3))).sum() + b.sum(),
    "clamp_min": lambda a, b: (a.clamp_min(0.25) * b).sum(),
    "pad": lambda a, b: (a.reshape(4, 4).pad([(1, 2), (0, 1)])).sum() + b.sum(),
    "layer_norm": lambda a, b: layer_norm(
        a.reshape(2, 8), b[:8], b[8:] * 0.5 + 1.0
    ).sum(),
}


@pytest.mark.parametrize("name", sorted(OPS))
def test_tracked_op_gradients_match_finite_differences(name):
    rng = np.random.default_rng(hash(name) % 2**32)
    op = OPS[name]
    a = Tensor(rng.standard_normal(16), requires_grad=True)
    b = Tensor(rng.standard_normal(16) + 2.0, requires_grad=True)
    assert finite_difference_check(lambda t: op(t, b), a) < 1e-4
    assert finite_difference_check(lambda t: op(a, t), b) < 1e-4


def test_dropout_gradient_path():
    rng = np.random.default_rng(8)
    x = Tensor(rng.standard_normal(32), requires_grad=True)
    mask_rng = np.random.default_rng(9)
    out = dropout(x, 0.5, mask_rng)
    out.sum().backward()
    survivors = out.data != 0
    assert np.allclose(x.grad[survivors], 2.0)
    assert np.allclose(x.grad[~survivors], 0.0)


def test_dropout_zero_rate_is_identity():
    x = Tensor([1.0, 2.0])
    assert dropout(x, 0.0, np.random.default_rng(0)) is x


# -- determinism and finiteness ----------------------------------------------------


def test_ops_deterministic():
    rng = np.random.default_rng(10)
    x = rng.standard_normal((6, 6))
    w = rng.standard_normal((6, 6))
    a = matmul(softmax(Tensor(x), axis=1), Tensor(w)).data
    b = matmul(softmax(Tensor(x), axis=1), Tensor(w)).data
    assert np.array_equal(a, b)


def test_finite_outputs_on_finite_inputs():
    rng = np.random.default_rng(11)
    x = Tensor(rng.uniform(-30, 30, size=(5, 8)), requires_grad=True)
    g = Tensor(np.ones(8), requires_grad=True)
    b = Tensor(np.zeros(8), requires_grad=True)
    out = (softmax(gelu(layer_norm(x, g, b)), axis=-1) * 3.0).sum()
    out.backward()
    assert np.isfinite(out.item())
    assert np.all(np.isfinite(x.grad))


# -- serialization ------------------------------------------------------------------


def test_tensor_save_load_roundtrip(tmp_path):
    rng = np.random.default_rng(12)
    for dtype in (np.float32, np.float64):
        t = Tensor(rng.standard_normal((3, 4, 2)).astype(dtype))
        path = tmp_path / f"t_{np.dtype(dtype).name}.tnsr"
        save_tensor(path, t)
        back = load_tensor(path)
        assert back.shape == (3, 4, 2)
        assert back.data.dtype == np.dtype(dtype)
        assert np.array_equal(back.data, t.data)


def test_tensor_file_header_layout(tmp_path):
    path = tmp_path / "t.tnsr"
    save_tensor(path, Tensor(np.zeros((2, 5), dtype=np.float64)))
    raw = path.read_bytes()
    assert raw[:4] == b"TNSR"
    assert int.from_bytes(raw[4:8], "little") == 1  # version
    assert int.from_bytes(raw[8:12], "little") == 2  # ndim
    assert int.from_bytes(raw[12:16], "little") == 2
    assert int.from_bytes(raw[16:20], "little") == 5
    assert int.from_bytes(raw[20:24], "little") == 2  # float64 tag
    assert len(raw) == 24 + 10 * 8


def test_tensor_load_rejects_bad_magic(tmp_path):
    path = tmp_path / "bad.tnsr"
    path.write_bytes(b"NOPE" + bytes(20))
    with pytest.raises(IOError):
        load_tensor(path)
