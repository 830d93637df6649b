import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from hitransformer.errors import ConfigError, DimensionError, DomainError, InvariantError, NumericError
from hitransformer.numerics import (
    NEG_INF,
    AdamState,
    Tensor,
    adam_step,
    concat,
    cross_entropy,
    dropout,
    embedding,
    finite_diff_gradcheck,
    layer_norm,
    load_checkpoint,
    load_into,
    masked_softmax,
    matmul,
    no_grad,
    parameter,
    precision,
    relative_error,
    relu,
    save_checkpoint,
    tanh,
    zero_grad,
)
from hitransformer.numerics.init import glorot


def _param(name, rng, shape):
    return parameter(name, rng.normal(size=shape))


class TestMatmul:
    def test_identity(self):
        a = Tensor(np.array([[1.0, 2.0], [3.0, 4.0]]))
        np.testing.assert_array_equal(matmul(a, Tensor(np.eye(2))).data, [[1, 2], [3, 4]])
        np.testing.assert_array_equal(matmul(Tensor(np.eye(2)), a).data, a.data)

    def test_hand_product(self):
        out = matmul(Tensor(np.array([[1.0, 2.0]])), Tensor(np.array([[3.0], [4.0]])))
        np.testing.assert_array_equal(out.data, [[11.0]])

    def test_zeros_annihilate(self):
        a = Tensor(np.random.default_rng(0).normal(size=(3, 4)))
        assert not matmul(a, Tensor(np.zeros((4, 2)))).data.any()

    def test_mismatch_names_both_shapes(self):
        with pytest.raises(DimensionError, match=r"\(2, 3\).*\(4, 2\)"):
            matmul(Tensor(np.zeros((2, 3))), Tensor(np.zeros((4, 2))))

    def test_batched_broadcast(self):
        rng = np.random.default_rng(1)
        a, b = rng.normal(size=(2, 3, 4)), rng.normal(size=(4, 5))
        np.testing.assert_allclose(matmul(Tensor(a), Tensor(b)).data, a @ b, rtol=1e-5)

    def test_float32_storage(self):
        assert matmul(Tensor(np.ones((2, 2))), Tensor(np.ones((2, 2)))).data.dtype == np.float32


class TestMaskedSoftmax:
    def test_uniform(self):
        out = masked_softmax(Tensor(np.zeros((1, 2))), np.zeros((1, 2)))
        np.testing.assert_allclose(out.data, [[0.5, 0.5]])

    def test_ln2(self):
        out = masked_softmax(Tensor(np.array([[math.log(2), 0.0]])), np.zeros((1, 2)))
        np.testing.assert_allclose(out.data, [[2 / 3, 1 / 3]], rtol=1e-6)

    def test_single_valid_slot(self):
        out = masked_softmax(Tensor(np.array([[5.0, 7.0]])), np.array([[0.0, NEG_INF]]))
        np.testing.assert_array_equal(out.data, [[1.0, 0.0]])

    def test_all_masked_row_is_domain_error(self):
        with pytest.raises(DomainError):
            masked_softmax(Tensor(np.zeros((2, 2))), np.array([[0.0, 0.0], [NEG_INF, NEG_INF]]))

    def test_all_masked_allowed_gives_zeros(self):
        out = masked_softmax(Tensor(np.ones((1, 3))), np.full((1, 3), NEG_INF), allow_empty=True)
        np.testing.assert_array_equal(out.data, np.zeros((1, 3)))

    @settings(max_examples=40, deadline=None)
    @given(st.integers(1, 6), st.integers(1, 6), st.integers(0, 2**31 - 1))
    def test_rows_sum_to_one_masked_exact_zero(self, rows, width, seed):
        rng = np.random.default_rng(seed)
        valid = rng.random((rows, width)) < 0.6
        valid[:, 0] = True
        logits = rng.normal(scale=10, size=(rows, width))
        out = masked_softmax(Tensor(logits), np.where(valid, 0.0, NEG_INF)).data
        np.testing.assert_allclose(out.sum(-1), 1.0, atol=1e-6)
        assert (out[~valid] == 0).all()


class TestLayerNorm:
    def _ln(self, x, gain=1.0, bias=0.0):
        d = np.asarray(x).shape[-1]
        return layer_norm(Tensor(np.asarray(x, float)), Tensor(np.full(d, gain)), Tensor(np.full(d, bias))).data

    def test_constant_row(self):
        np.testing.assert_array_equal(self._ln([[3.0, 3.0]]), [[0.0, 0.0]])

    def test_closed_form(self):
        np.testing.assert_allclose(self._ln([[1.0, -1.0]]), [[0.999995, -0.999995]], rtol=1e-6)

    def test_affine(self):
        np.testing.assert_allclose(self._ln([[1.0, -1.0]], 2.0, 1.0), [[2.99999, -0.99999]], rtol=1e-6)

    def test_row_moments(self):
        x = np.random.default_rng(3).normal(2.0, 5.0, size=(10, 16))
        out = self._ln(x).astype(np.float64)
        assert np.abs(out.mean(-1)).max() <= 1e-6
        assert np.abs(out.var(-1) - 1).max() <= 1e-3


class TestDropout:
    def test_rate_zero_is_identity(self):
        x = Tensor(np.arange(6.0))
        assert dropout(x, 0.0, True, np.random.default_rng(0)) is x

    def test_eval_is_identity(self):
        x = Tensor(np.arange(6.0))
        np.testing.assert_array_equal(dropout(x, 0.2, False, np.random.default_rng(0)).data, x.data)

    def test_survivors_scaled_exactly(self):
        x = Tensor(np.random.default_rng(0).normal(size=1000))
        out = dropout(x, 0.2, True, np.random.default_rng(1)).data
        kept = out != 0
        assert 0.7 < kept.mean() < 0.9
        np.testing.assert_array_equal(out[kept], (x.data / np.float32(0.8))[kept])

    def test_seeded_masks_identical(self):
        x = Tensor(np.ones(200))
        a = dropout(x, 0.5, True, np.random.default_rng(7)).data
        b = dropout(x, 0.5, True, np.random.default_rng(7)).data
        np.testing.assert_array_equal(a, b)

    @pytest.mark.parametrize("rate", [1.0, 1.5, -0.1])
    def test_bad_rate(self, rate):
        with pytest.raises(ConfigError):
            dropout(Tensor(np.ones(3)), rate, True, np.random.default_rng(0))


class TestAdam:
    def test_defaults(self):
        s = AdamState()
        assert (s.lr, s.beta1, s.beta2, s.eps) == (1e-4, 0.9, 0.999, 1e-8)

    def test_zero_grad_leaves_params(self):
        p = parameter("w", np.array([1.0, -2.0]))
        p.grad = np.zeros(2, np.float32)
        state = AdamState()
        adam_step({"w": p}, state)
        np.testing.assert_array_equal(p.data, [1.0, -2.0])
        assert state.step == 1

    def test_first_step_closed_form(self):
        with precision(np.float64):
            p = parameter("w", np.array(0.0))
            p.grad = np.array(0.5)
            adam_step({"w": p}, AdamState())
            assert abs(float(p.data) + 1e-4) < 1e-9

    def test_grads_zeroed_after_step(self):
        p = parameter("w", np.ones(3))
        p.grad = np.ones(3, np.float32)
        adam_step({"w": p}, AdamState())
        assert not p.grad.any()

    def test_missing_grad_names_parameter(self):
        a, b = parameter("a", np.ones(2)), parameter("b", np.ones(2))
        a.grad = np.ones(2, np.float32)
        b.grad = None
        with pytest.raises(InvariantError, match="b"):
            adam_step({"a": a, "b": b}, AdamState())

    def test_trajectory_reproducible(self):
        def run():
            rng = np.random.default_rng(0)
            w = parameter("w", rng.normal(size=(3, 2)))
            x = Tensor(rng.normal(size=(5, 3)))
            state = AdamState(lr=1e-2)
            for _ in range(5):
                zero_grad({"w": w})
                (matmul(x, w) * matmul(x, w)).mean().backward()
                adam_step({"w": w}, state)
            return w.data.copy()

        np.testing.assert_array_equal(run(), run())


class TestGradcheck:
    def test_quadratic(self):
        with precision(np.float64):
            x = parameter("x", np.array(3.0))
            report = finite_diff_gradcheck(lambda: x * x, {"x": x})
            np.testing.assert_allclose(x.grad, 6.0)
            assert report.max_error < 1e-6

    def test_constant(self):
        x = parameter("x", np.array([1.0, 2.0]))
        report = finite_diff_gradcheck(lambda: Tensor(np.array(4.0)) + x.sum() * 0.0, {"x": x})
        assert report.max_error == 0.0 and report.passed

    def test_nonfinite_loss(self):
        x = parameter("x", np.array([1.0]))
        with pytest.raises(NumericError):
            finite_diff_gradcheck(lambda: x.sum() * Tensor(np.array(np.nan)), {"x": x})

    def test_relative_error_floor(self):
        assert relative_error(0.0, 0.0) == 0.0
        assert relative_error(1.0, 1.0) == 0.0
        assert relative_error(1.0, -1.0) == 1.0

    def test_detects_wrong_gradient(self):
        from hitransformer.numerics.tensor import _make

        x = parameter("x", np.array([1.0, 2.0]))

        def broken():
            out = x * x
            # wrong backward: d(x^2)/dx reported as x instead of 2x
            return _make(out.data.sum(), (x,), lambda g: (g * x.data,), "broken")

        with precision(np.float64):
            x = parameter("x", np.array([1.0, 2.0]))
            assert not finite_diff_gradcheck(broken, {"x": x}).passed


class TestPrimitiveGradients:
    """Backward of each primitive against central differences on random inputs."""

    def _check(self, build, shapes, seed=0):
        with precision(np.float64):
            rng = np.random.default_rng(seed)
            params = {f"p{i}": _param(f"p{i}", rng, s) for i, s in enumerate(shapes)}
            args = [params[f"p{i}"] for i in range(len(shapes))]
            report = finite_diff_gradcheck(lambda: build(*args), params, h=1e-5)
        assert report.passed, report.summary()

    def test_matmul(self):
        self._check(lambda a, b: tanh(matmul(a, b)).sum(), [(2, 3, 4), (4, 2)])

    def test_softmax(self):
        mask = np.array([[0.0, 0.0, NEG_INF], [0.0, NEG_INF, 0.0]])
        w = np.random.default_rng(9).normal(size=(2, 3))
        self._check(lambda a: (masked_softmax(a, mask) * Tensor(w)).sum(), [(2, 3)])

    def test_layer_norm(self):
        w = np.random.default_rng(9).normal(size=(3, 5))
        self._check(lambda x, g, b: (layer_norm(x, g, b) * Tensor(w)).sum(), [(3, 5), (5,), (5,)])

    def test_cross_entropy(self):
        labels = np.array([0, 2, 1])
        self._check(lambda z: cross_entropy(z, labels), [(3, 4)])

    def test_embedding_with_repeats(self):
        ids = np.array([[0, 2, 2], [1, 0, 3]])
        w = np.random.default_rng(9).normal(size=(2, 3, 4))
        self._check(lambda t: (embedding(t, ids) * Tensor(w)).sum(), [(5, 4)])

    def test_concat_and_slice(self):
        self._check(lambda a, b: tanh(concat([a, b], axis=1)[:, 1:4]).sum(), [(2, 3), (2, 2)])

    def test_relu_away_from_kink(self):
        with precision(np.float64):
            x = parameter("x", np.array([-1.0, -0.3, 0.4, 2.0]))
            report = finite_diff_gradcheck(lambda: (relu(x) * relu(x)).sum(), {"x": x}, h=1e-5)
        assert report.passed

    def test_broadcast_add_unbroadcasts(self):
        self._check(lambda a, b: tanh(a + b).sum(), [(3, 4), (4,)])

    def test_division(self):
        with precision(np.float64):
            a = parameter("a", np.array([1.0, -2.0]))
            b = parameter("b", np.array([2.0, 3.0]))
            report = finite_diff_gradcheck(lambda: (a / b).sum(), {"a": a, "b": b}, h=1e-5)
        assert report.passed


class TestTensorInvariants:
    def test_grad_shape_matches(self):
        a = parameter("a", np.ones((2, 3)))
        b = parameter("b", np.ones(3))
        (a + b).sum().backward()
        assert a.grad.shape == a.data.shape and b.grad.shape == b.data.shape
        np.testing.assert_array_equal(b.grad, [2, 2, 2])

    def test_nonfinite_forward_rejected(self):
        with pytest.raises(NumericError), np.errstate(divide="ignore"):
            Tensor(np.array([1.0])) / Tensor(np.array([0.0]))

    def test_no_grad_builds_no_graph(self):
        a = parameter("a", np.ones(2))
        with no_grad():
            out = a * a
        assert not out.requires_grad


class TestInit:
    def test_glorot_bounds(self):
        w = glorot("w", np.random.default_rng(0), 30, 50)
        bound = math.sqrt(6 / 80)
        assert w.data.shape == (30, 50) and np.abs(w.data).max() <= bound


class TestCheckpoint:
    def test_roundtrip_bit_exact(self, tmp_path):
        rng = np.random.default_rng(0)
        params = {"b": _param("b", rng, (3,)), "a.w": _param("a.w", rng, (2, 4))}
        save_checkpoint(tmp_path / "c.bin", params)
        loaded = load_checkpoint(tmp_path / "c.bin")
        assert sorted(loaded) == ["a.w", "b"]
        for k in params:
            np.testing.assert_array_equal(loaded[k], params[k].data)

    def test_layout(self, tmp_path):
        import json
        import struct

        save_checkpoint(tmp_path / "c.bin", {"x": parameter("x", np.array([1.0, 2.0]))})
        raw = (tmp_path / "c.bin").read_bytes()
        assert raw[:8] == b"HITCKPT\x01"
        (n,) = struct.unpack("<Q", raw[8:16])
        manifest = json.loads(raw[16 : 16 + n])
        assert manifest["tensors"] == [{"name": "x", "offset": 0, "shape": [2]}]
        np.testing.assert_array_equal(np.frombuffer(raw[16 + n :], "<f4"), [1.0, 2.0])

    def test_load_into_rejects_shape_mismatch(self, tmp_path):
        save_checkpoint(tmp_path / "c.bin", {"x": parameter("x", np.ones(2))})
        with pytest.raises(DimensionError):
            load_into({"x": parameter("x", np.ones(3))}, tmp_path / "c.bin")
