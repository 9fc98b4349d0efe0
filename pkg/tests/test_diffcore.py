import math

import numpy as np
import pytest

from koopkit import diffcore as dc
from koopkit.rng import Xoshiro256

from oracles import central_difference, ref_softplus, relative_error

F32 = np.float32


def arr(values):
    return np.asarray(values, dtype=F32)


class TestAffine:
    def test_identity_weights(self):
        t = dc.Tape()
        out = dc.affine(t, t.leaf(arr([[1, 2]])), t.leaf(np.eye(2, dtype=F32)),
                        t.leaf(arr([0, 0])))
        assert np.array_equal(out.value, arr([[1, 2]]))

    def test_hand_arithmetic(self):
        t = dc.Tape()
        out = dc.affine(t, t.leaf(arr([[1, 1]])), t.leaf(arr([[2], [3]])),
                        t.leaf(arr([1])))
        assert np.array_equal(out.value, arr([[6]]))

    def test_zero_input_rows_equal_bias(self):
        t = dc.Tape()
        w = t.leaf(arr(np.arange(12).reshape(3, 4)))
        b = t.leaf(arr([5, -1, 2, 0.5]))
        out = dc.affine(t, t.leaf(np.zeros((4, 3), F32)), w, b)
        assert np.array_equal(out.value, np.tile(arr([5, -1, 2, 0.5]), (4, 1)))

    def test_shape_mismatch_raises(self):
        t = dc.Tape()
        with pytest.raises(dc.ShapeMismatch):
            dc.affine(t, t.leaf(np.zeros((2, 3), F32)), t.leaf(np.zeros((4, 5), F32)))


class TestActivations:
    def test_relu_values(self):
        t = dc.Tape()
        out = dc.relu(t, t.leaf(arr([[-1, 2, 0]])))
        assert np.array_equal(out.value, arr([[0, 2, 0]]))

    def test_softplus_at_zero(self):
        t = dc.Tape()
        out = dc.softplus(t, t.leaf(arr([[0.0]])))
        assert out.value[0, 0] == pytest.approx(math.log(2.0), abs=1e-7)

    def test_softplus_asymptote(self):
        t = dc.Tape()
        out = dc.softplus(t, t.leaf(arr([[50.0]])))
        assert out.value[0, 0] == pytest.approx(50.0, abs=1e-6)

    def test_softplus_matches_reference(self):
        x = np.linspace(-30, 30, 101).astype(F32)
        t = dc.Tape()
        out = dc.softplus(t, t.leaf(x[None, :]))
        np.testing.assert_allclose(out.value[0], ref_softplus(x.astype(np.float64)),
                                   rtol=1e-6, atol=1e-7)


class TestBackward:
    def test_square_power_rule(self):
        t = dc.Tape()
        p = dc.Param("x", arr([[3.0]]))
        loss = dc.sumsq(t, t.param(p))
        grads, _ = dc.backward(t, loss)
        assert grads["x"][0, 0] == pytest.approx(6.0)

    def test_relu_inactive_region(self):
        t = dc.Tape()
        p = dc.Param("x", arr([[-1.0]]))
        loss = dc.sumsq(t, dc.relu(t, t.param(p)))
        grads, _ = dc.backward(t, loss)
        assert grads["x"][0, 0] == 0.0

    def test_fanout_accumulates(self):
        # y = x + x -> dy/dx = 2 per unit seed
        t = dc.Tape()
        p = dc.Param("x", arr([[1.5, -2.0]]))
        xn = t.param(p)
        y = dc.add(t, xn, xn)
        grads, _ = dc.backward(t, y, seed=np.ones((1, 2), F32))
        assert np.array_equal(grads["x"], arr([[2, 2]]))

    def test_two_layer_net_matches_finite_differences(self):
        rng = Xoshiro256(42)
        w1 = dc.uniform_array(rng, (3, 5), -0.7, 0.7)
        b1 = dc.uniform_array(rng, (5,), -0.3, 0.3)
        w2 = dc.uniform_array(rng, (5, 2), -0.7, 0.7)
        b2 = dc.uniform_array(rng, (2,), -0.3, 0.3)
        x = dc.uniform_array(rng, (4, 3), -1.0, 1.0)
        probe = dc.uniform_array(rng, (4, 2), -1.0, 1.0)

        def run(theta):
            w1d = theta[:15].reshape(3, 5)
            b1d = theta[15:20]
            w2d = theta[20:30].reshape(5, 2)
            b2d = theta[30:]
            h = ref_softplus(x.astype(np.float64) @ w1d + b1d)
            out = h @ w2d + b2d
            return float((out * probe.astype(np.float64)).sum())

        theta = np.concatenate([w1.reshape(-1), b1, w2.reshape(-1), b2]).astype(np.float64)
        fd = central_difference(run, theta, h=1e-3)

        t = dc.Tape()
        params = {"w1": dc.Param("w1", w1), "b1": dc.Param("b1", b1),
                  "w2": dc.Param("w2", w2), "b2": dc.Param("b2", b2)}
        h1 = dc.softplus(t, dc.affine(t, t.leaf(x), t.param(params["w1"]),
                                      t.param(params["b1"])))
        out = dc.affine(t, h1, t.param(params["w2"]), t.param(params["b2"]))
        grads, _ = dc.backward(t, out, seed=probe)
        analytic = np.concatenate([grads["w1"].reshape(-1), grads["b1"],
                                   grads["w2"].reshape(-1), grads["b2"]]).astype(np.float64)
        assert relative_error(analytic, fd) < 1e-4

    def test_backward_wrong_tape_rejected(self):
        t1, t2 = dc.Tape(), dc.Tape()
        n1 = t1.leaf(arr([[1.0]]))
        t2.leaf(arr([[2.0]]))
        with pytest.raises(dc.UsageError):
            dc.backward(t2, n1, seed=arr([[1.0]]))

    def test_backward_seed_shape_checked(self):
        t = dc.Tape()
        n = t.leaf(np.zeros((2, 3), F32))
        with pytest.raises(dc.ShapeMismatch):
            dc.backward(t, n, seed=np.zeros((3, 2), F32))

    def test_array_output_requires_seed(self):
        t = dc.Tape()
        n = t.leaf(np.zeros((2, 3), F32))
        with pytest.raises(dc.UsageError):
            dc.backward(t, n)


class TestTapeStructure:
    def test_topological_order_property(self):
        rng = Xoshiro256(3)
        t = dc.Tape()
        x = t.param(dc.Param("x", dc.uniform_array(rng, (2, 4), -1, 1)))
        w = t.param(dc.Param("w", dc.uniform_array(rng, (4, 4), -1, 1)))
        h = dc.relu(t, dc.affine(t, x, w))
        h = dc.add(t, h, x)
        dc.sumsq(t, dc.concat_cols(t, h, dc.softplus(t, h)))
        for node in t.nodes:
            assert all(p < node.idx for p in node.parents)

    def test_forward_and_gradients_bit_identical(self):
        def build():
            rng = Xoshiro256(99)
            t = dc.Tape()
            p = dc.Param("w", dc.uniform_array(rng, (6, 6), -0.5, 0.5))
            x = t.leaf(dc.uniform_array(rng, (3, 6), -1, 1))
            out = dc.sumsq(t, dc.softplus(t, dc.affine(t, x, t.param(p))))
            grads, _ = dc.backward(t, out)
            return out.value, grads["w"].tobytes()

        v1, g1 = build()
        v2, g2 = build()
        assert v1 == v2 and g1 == g2


class TestAdam:
    def _params(self):
        p = dc.Param("w", arr([[1.0, -2.0], [0.5, 3.0]]))
        return {"w": p}

    def test_zero_grad_leaves_params(self):
        params = self._params()
        before = params["w"].value.copy()
        state = dc.AdamState(params)
        dc.adam_step(params, {"w": np.zeros((2, 2), F32)}, state)
        assert np.array_equal(params["w"].value, before)
        assert state.step == 1

    def test_first_step_magnitude(self):
        params = {"w": dc.Param("w", arr([[0.0]]))}
        state = dc.AdamState(params)
        dc.adam_step(params, {"w": arr([[1.0]])}, state)
        assert params["w"].value[0, 0] == pytest.approx(-1e-3, rel=1e-4)

    def test_repeated_grad_step_sizes(self):
        params = {"w": dc.Param("w", arr([[0.0]]))}
        state = dc.AdamState(params)
        dc.adam_step(params, {"w": arr([[1.0]])}, state)
        d1 = abs(float(params["w"].value[0, 0]))
        prev = float(params["w"].value[0, 0])
        dc.adam_step(params, {"w": arr([[1.0]])}, state)
        d2 = abs(float(params["w"].value[0, 0]) - prev)
        assert d2 <= d1 * 1.05

    def test_nonfinite_grad_aborts(self):
        params = self._params()
        state = dc.AdamState(params)
        with pytest.raises(dc.NonFiniteError, match="w"):
            dc.adam_step(params, {"w": arr([[np.nan, 0], [0, 0]])}, state)

    def test_grad_clip_rescales(self):
        params = {"w": dc.Param("w", arr([[0.0, 0.0]]))}
        state = dc.AdamState(params)
        g = {"w": arr([[30.0, 40.0]])}  # norm 50
        dc.adam_step(params, g, state, grad_clip=5.0)
        assert np.linalg.norm(g["w"]) == pytest.approx(5.0, rel=1e-5)


class TestProjection:
    def test_examples(self):
        p = dc.Param("z", arr([-1.0, 0.0, 2.0]), constrained=True)
        dc.project_nonnegative({"z": p})
        assert np.array_equal(p.value, arr([0.0, 0.0, 2.0]))

    def test_nonnegative_fixed_point(self):
        p = dc.Param("z", arr([0.5, 0.0, 7.0]), constrained=True)
        before = p.value.copy()
        dc.project_nonnegative({"z": p})
        assert np.array_equal(p.value, before)

    def test_unconstrained_untouched(self):
        p = dc.Param("w", arr([-3.0]))
        dc.project_nonnegative({"w": p})
        assert p.value[0] == -3.0

    def test_projection_after_adam_steps(self):
        rng = Xoshiro256(17)
        p = dc.Param("z", np.abs(dc.uniform_array(rng, (4, 4), -1, 1)), constrained=True)
        params = {"z": p}
        state = dc.AdamState(params, lr=0.05)
        for _ in range(25):
            g = dc.uniform_array(rng, (4, 4), -1, 1)
            dc.adam_step(params, {"z": g}, state)
            dc.project_nonnegative(params)
            assert p.value.min() >= 0.0
