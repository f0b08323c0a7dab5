import numpy as np
import pytest
from numpy.testing import assert_allclose, assert_array_equal

from nn.adapter import AdapterMode
from nn.attention import block_tensors, encode, random_stack
from nn.autograd import EAGER, Tape, backward, grad_check
from nn.errors import NondeterminismError, ShapeError
from tests.conftest import nonzero_adapter
from training.trainer import adapter_params, bind_stack, encoder_gradcheck


def numeric_grad(f, x, eps=1e-6):
    grad = np.zeros_like(x)
    for idx in np.ndindex(x.shape):
        saved = x[idx]
        x[idx] = saved + eps
        up = f(x)
        x[idx] = saved - eps
        down = f(x)
        x[idx] = saved
        grad[idx] = (up - down) / (2 * eps)
    return grad


class TestBackward:
    def test_linear_sum(self, rng):
        x = rng.standard_normal((4, 1))
        tape = Tape()
        a = tape.leaf(rng.standard_normal((3, 4)), name="A", trainable=True)
        loss = tape.sum_entries(tape.matmul(a, tape.constant(x)))
        assert_allclose(backward(tape, loss)["A"], np.ones((3, 1)) @ x.T, atol=1e-15)

    def test_squared_norm(self, rng):
        w = rng.standard_normal((3, 2))
        tape = Tape()
        loss = tape.sq_norm(tape.leaf(w, name="w", trainable=True))
        assert_allclose(backward(tape, loss)["w"], 2 * w)

    def test_frozen_leaves_get_nothing(self, rng):
        tape = Tape()
        w = tape.constant(rng.standard_normal((3, 3)), name="W0")
        a = tape.leaf(rng.standard_normal((3, 3)), name="A", trainable=True)
        grads = backward(tape, tape.sum_entries(tape.matmul(w, a)))
        assert list(grads) == ["A"]

    def test_unreached_trainable_gets_zeros(self, rng):
        tape = Tape()
        a = tape.leaf(rng.standard_normal((2, 2)), name="A", trainable=True)
        tape.leaf(np.ones((2, 3)), name="unused", trainable=True)
        grads = backward(tape, tape.sq_norm(a))
        assert_array_equal(grads["unused"], np.zeros((2, 3)))

    def test_non_scalar_loss(self, rng):
        tape = Tape()
        a = tape.leaf(rng.standard_normal((2, 2)), name="A", trainable=True)
        with pytest.raises(ShapeError):
            backward(tape, a)

    def test_softmax_jacobian(self, rng):
        z = rng.standard_normal((3, 3))
        weights = rng.standard_normal((3, 3))

        def f(v):
            return float(np.sum(EAGER.softmax_rows(v) * weights))

        # sum(S * W) as a sum of row-by-row inner products
        tape = Tape()
        s = tape.softmax_rows(tape.leaf(z, name="z", trainable=True))
        total = None
        for i in range(3):
            term = tape.matmul(tape.rows(s, i, i + 1), tape.constant(weights[i:i + 1].T))
            total = term if total is None else tape.add(total, term)
        assert_allclose(backward(tape, total)["z"], numeric_grad(f, z.copy()), atol=1e-8)

    def test_serial_transform_shapes_and_values(self, rng):
        d, r = 6, 2
        x, b, a = rng.standard_normal((d, 3)), rng.standard_normal((d, r)), rng.standard_normal((r, d))
        target = rng.standard_normal((d, 3))
        tape = Tape()
        bn = tape.leaf(b, name="B", trainable=True)
        an = tape.leaf(a, name="A", trainable=True)
        xn = tape.leaf(x, name="x", trainable=True)
        grads = backward(tape, tape.mse(tape.serial_transform(xn, bn, an), target))
        assert grads["A"].shape == (r, d)
        assert grads["B"].shape == (d, r)

        def loss_of(name, value):
            parts = {"x": x, "B": b, "A": a} | {name: value}
            return float(EAGER.mse(EAGER.serial_transform(parts["x"], parts["B"], parts["A"]), target)[0, 0])

        for name, value in (("x", x), ("B", b), ("A", a)):
            expected = numeric_grad(lambda v: loss_of(name, v), value.copy())
            assert_allclose(grads[name], expected, rtol=1e-6, atol=1e-9)

    def test_cross_entropy_gradient(self, rng):
        z = rng.standard_normal((4, 1))
        tape = Tape()
        grads = backward(tape, tape.cross_entropy(tape.leaf(z, name="z", trainable=True), 2))
        expected = numeric_grad(lambda v: float(EAGER.cross_entropy(v, 2)[0, 0]), z.copy())
        assert_allclose(grads["z"], expected, atol=1e-9)


class TestSharedForward:
    @pytest.mark.parametrize("mode", AdapterMode.ALL)
    def test_tape_matches_eager_bitwise(self, rng, mode):
        stack = random_stack(8, 2, 2, 1)
        template = [nonzero_adapter(mode, 8, 2, seed=i) for i in range(2)]
        x = rng.standard_normal((8, 3))
        eager = encode(EAGER, x, [block_tensors(b.weights, ad) for b, ad in zip(stack.blocks, template)])
        tape = Tape()
        taped = encode(tape, tape.constant(x), bind_stack(tape, stack, template, adapter_params(template)))
        assert_array_equal(taped.value, eager)


class TestGradCheck:
    def test_linear_least_squares(self, rng):
        x = rng.standard_normal((5, 8))
        y = rng.standard_normal((2, 8))
        params = {"W": rng.standard_normal((2, 5))}

        def closure(p):
            tape = Tape()
            pred = tape.matmul(tape.leaf(p["W"], name="W", trainable=True), tape.constant(x))
            return tape, tape.mse(pred, y)

        assert grad_check(closure, params, 1e-5) < 1e-9

    def test_params_restored(self, rng):
        w = rng.standard_normal((2, 2))
        params = {"W": w.copy()}

        def closure(p):
            tape = Tape()
            return tape, tape.sq_norm(tape.leaf(p["W"], name="W", trainable=True))

        grad_check(closure, params, 1e-5)
        assert_array_equal(params["W"], w)

    def test_params_restored_when_closure_fails(self, rng):
        w = rng.standard_normal((2, 2))
        params = {"W": w.copy()}
        calls = []

        def closure(p):
            calls.append(1)
            # determinism probes and the taped pass succeed, the first perturbed pass fails
            if len(calls) > 3:
                raise RuntimeError("closure failed")
            tape = Tape()
            return tape, tape.sq_norm(tape.leaf(p["W"], name="W", trainable=True))

        with pytest.raises(RuntimeError):
            grad_check(closure, params, 1e-5)
        assert_array_equal(params["W"], w)

    def test_nondeterministic_closure(self, rng):
        params = {"W": rng.standard_normal((2, 2))}
        noise = np.random.Generator(np.random.PCG64(0))

        def closure(p):
            tape = Tape()
            leaf = tape.leaf(p["W"], name="W", trainable=True)
            return tape, tape.scale(tape.sq_norm(leaf), 1.0 + noise.standard_normal())

        with pytest.raises(NondeterminismError):
            grad_check(closure, params, 1e-5)

    def test_eps_range(self):
        with pytest.raises(ValueError):
            grad_check(lambda p: None, {}, 1e-2)

    def test_subsample_above_limit(self, rng):
        calls = []
        params = {"W": rng.standard_normal((10, 10))}

        def closure(p):
            calls.append(1)
            tape = Tape()
            return tape, tape.sq_norm(tape.leaf(p["W"], name="W", trainable=True))

        grad_check(closure, params, 1e-5, full_limit=50, sample=20)
        # two determinism probes, one taped pass, two evaluations per sampled entry
        assert len(calls) == 3 + 2 * 20

    @pytest.mark.parametrize("mode", AdapterMode.ALL)
    def test_two_block_encoder(self, mode):
        assert encoder_gradcheck(mode, 16, 2, 1e-5) < 1e-5
