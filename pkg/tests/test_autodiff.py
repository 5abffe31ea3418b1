import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from bodyrecon.autodiff import Tensor, as_tensor, concat, no_grad, parameter, take_cols


def numeric_grad(f, x: np.ndarray, h: float = 1e-6) -> np.ndarray:
    g = np.zeros_like(x)
    flat = x.reshape(-1)
    out = g.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        up = f()
        flat[i] = orig - h
        down = f()
        flat[i] = orig
        out[i] = (up - down) / (2 * h)
    return g


def check_op(build, *shapes, seed=0, tol=1e-6):
    """FD-check the scalar ``build(params...)`` against analytic gradients."""
    rng = np.random.default_rng(seed)
    params = [parameter(rng.standard_normal(s)) for s in shapes]
    loss = build(*params)
    loss.backward()
    for p in params:
        fd = numeric_grad(lambda: float(build(*params).data), p.data)
        assert np.abs(fd - p.grad).max() < tol, f"shape {p.data.shape}"


class TestOpGradients:
    def test_add_mul_broadcast(self):
        check_op(lambda a, b: (a * b + a).sum(), (3, 4), (4,))

    def test_sub_neg(self):
        check_op(lambda a, b: (a - b.exp() + (-a)).square().sum(), (5,), (5,))

    def test_matmul(self):
        check_op(lambda a, b: (a @ b).square().sum(), (4, 3), (3, 5))

    def test_sigmoid_log_exp(self):
        check_op(lambda a: (a.sigmoid().log() + (0.3 * a).exp()).sum(), (7,))

    def test_relu(self):
        check_op(lambda a: a.relu().square().sum(), (20,), seed=3)

    def test_abs(self):
        check_op(lambda a: a.abs().sum(), (20,), seed=4)

    def test_clip_passes_gradient_inside_range(self):
        check_op(lambda a: a.clip(-0.6, 0.6).square().sum(), (25,), seed=5)

    def test_max_reduction(self):
        check_op(lambda a: a.max(axis=1).square().sum(), (4, 6), seed=6)

    def test_mean_and_axis_sum(self):
        check_op(lambda a: a.mean(axis=0).square().sum() + a.sum(axis=1).mean(),
                 (3, 5))

    def test_reshape_and_tile_rows(self):
        check_op(lambda a: a.tile_rows(3).square().sum(), (4, 2))

    def test_concat(self):
        check_op(lambda a, b: concat([a, b], axis=1).square().sum(), (2, 3), (2, 4))

    def test_take_cols_with_padding(self):
        idx = np.array([0, 2, -1, 1, 2])

        def build(a):
            return take_cols(a, idx).square().sum()

        check_op(build, (3, 4))


class TestEngineBehavior:
    def test_no_grad_builds_no_graph(self):
        p = parameter(np.ones(3))
        with no_grad():
            out = (p * 2.0).sum()
        assert out._parents == () and not out.requires_grad

    def test_backward_requires_scalar(self):
        p = parameter(np.ones(3))
        with pytest.raises(ValueError, match="scalar"):
            (p * 2.0).backward()

    def test_gradient_accumulates_over_shared_input(self):
        p = parameter(np.array([2.0]))
        loss = (p * p + p).sum()   # d/dp = 2p + 1 = 5
        loss.backward()
        assert np.allclose(p.grad, [5.0])

    def test_dtype_preserved_f32(self):
        p = parameter(np.ones((2, 2), dtype=np.float32))
        out = ((p @ p).sigmoid() * 3.0).sum()
        assert out.dtype == np.float32
        out.backward()
        assert p.grad.dtype == np.float32

    def test_matmul_row_stability(self):
        # each output row must be bit-identical no matter the batch size
        rng = np.random.default_rng(0)
        w = rng.standard_normal((32, 16)).astype(np.float32)
        x = rng.standard_normal((64, 32)).astype(np.float32)
        full = (as_tensor(x) @ as_tensor(w)).data
        for i in (0, 17, 63):
            row = (as_tensor(x[i : i + 1]) @ as_tensor(w)).data
            assert np.array_equal(full[i], row[0])

    def test_take_cols_gather_semantics(self):
        x = as_tensor(np.arange(12.0).reshape(2, 6))
        out = take_cols(x, np.array([5, 0, -1]))
        assert np.array_equal(out.data, [[5.0, 0.0, 0.0], [11.0, 6.0, 0.0]])


@settings(max_examples=30, deadline=None)
@given(
    rows=st.integers(1, 5),
    cols=st.integers(1, 5),
    batch=st.integers(1, 4),
)
def test_broadcast_backward_shapes(rows, cols, batch):
    rng = np.random.default_rng(rows * 100 + cols * 10 + batch)
    a = parameter(rng.standard_normal((batch, rows, cols)))
    b = parameter(rng.standard_normal((1, 1, cols)))
    loss = (a * b).sum()
    loss.backward()
    assert a.grad.shape == a.data.shape
    assert b.grad.shape == b.data.shape
    # d(a*b)/db summed over broadcast axes
    assert np.allclose(b.grad, a.data.sum(axis=(0, 1), keepdims=True))
