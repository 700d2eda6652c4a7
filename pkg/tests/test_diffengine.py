"""Engine tests: every op against central finite differences, ADAM behavior
against closed forms, and the gradient checker's own sensitivity."""

import numpy as np
import pytest

from unfoldsr import diffengine as de
from unfoldsr.errors import DimensionMismatchError, InvalidParameterError, NumericFailureError


def fd_param_grad(forward_fn, params, inputs, target, name, h=1e-6):
    """Central differences of the SSE loss w.r.t. every entry of one tensor."""
    flat = params[name].value.reshape(-1)
    grad = np.zeros_like(flat)
    for i in range(flat.shape[0]):
        orig = flat[i]
        flat[i] = orig + h
        f_plus = de.forward_loss(forward_fn, params, inputs, target)
        flat[i] = orig - h
        f_minus = de.forward_loss(forward_fn, params, inputs, target)
        flat[i] = orig
        grad[i] = (f_plus - f_minus) / (2 * h)
    return grad.reshape(params[name].value.shape)


def assert_analytic_matches_fd(forward_fn, params, inputs, target, rtol=1e-6):
    de.forward_backward(forward_fn, params, inputs, target)
    for name, p in params.items():
        fd = fd_param_grad(forward_fn, params, inputs, target, name)
        scale_ref = max(np.max(np.abs(fd)), np.max(np.abs(p.grad)), 1e-8)
        assert np.max(np.abs(p.grad - fd)) <= rtol * scale_ref, name


class TestForwardBackwardBasics:
    def test_identity_linear_map_zero_loss(self):
        params = de.ParamStore()
        params.add("w", np.eye(3))
        x = np.array([0.2, -0.4, 0.9])

        def fn(p, inp):
            return de.matmul(p["w"], de.constant(inp.reshape(3, 1)))

        loss = de.forward_backward(fn, params, (x,), x.reshape(3, 1))
        assert loss == 0.0
        assert np.array_equal(params["w"].grad, np.zeros((3, 3)))

    def test_scalar_multiply_spec_example(self):
        params = de.ParamStore()
        params.add("w", np.array([[3.0]]))

        def fn(p, inp):
            return de.matmul(p["w"], de.constant(inp))

        loss = de.forward_backward(fn, params, (np.array([[2.0]]),), np.zeros((1, 1)))
        assert loss == pytest.approx(36.0)
        assert params["w"].grad[0, 0] == pytest.approx(24.0)

    def test_repeat_call_bit_identical(self):
        rng = np.random.default_rng(0)
        params = de.ParamStore()
        params.add("w", rng.normal(size=(4, 3)))
        params.add("g", np.asarray(0.2))
        x = rng.normal(size=(3, 5))
        target = rng.normal(size=(4, 5))

        def fn(p, inp):
            return de.soft_thresh(de.matmul(p["w"], de.constant(inp)), p["g"])

        loss1 = de.forward_backward(fn, params, (x,), target)
        grads1 = {n: p.grad.copy() for n, p in params.items()}
        loss2 = de.forward_backward(fn, params, (x,), target)
        assert loss1 == loss2
        for n, p in params.items():
            assert np.array_equal(grads1[n], p.grad)

    def test_loss_scaling_scales_gradient_exactly(self):
        rng = np.random.default_rng(1)
        params = de.ParamStore()
        params.add("w", rng.normal(size=(3, 3)))
        x = de.constant(rng.normal(size=(3, 2)))
        target = rng.normal(size=(3, 2))
        c = 4.0

        params.zero_grad()
        de.backward(de.sse_loss(de.matmul(params["w"], x), target))
        base = params["w"].grad.copy()

        params.zero_grad()
        de.backward(de.scale(de.sse_loss(de.matmul(params["w"], x), target), c))
        assert np.array_equal(params["w"].grad, c * base)

    def test_shape_mismatch_raises(self):
        params = de.ParamStore()
        params.add("w", np.eye(2))
        with pytest.raises(DimensionMismatchError):
            de.matmul(params["w"], de.constant(np.zeros((3, 1))))

    def test_nonfinite_intermediate_names_tensor(self):
        params = de.ParamStore()
        params.add("w", np.array([[np.inf]]))

        def fn(p, inp):
            return de.matmul(p["w"], de.constant(inp), name="blowup")

        with pytest.raises(NumericFailureError) as excinfo:
            de.forward_backward(fn, params, (np.ones((1, 1)),), np.zeros((1, 1)))
        assert excinfo.value.tensor_name is not None


class TestOpGradients:
    def test_matmul_add_reshape(self):
        rng = np.random.default_rng(2)
        params = de.ParamStore()
        params.add("a", rng.normal(size=(4, 3)))
        params.add("b", rng.normal(size=(4, 1)))
        x = rng.normal(size=(3, 6))
        target = rng.normal(size=(4 * 6,))

        def fn(p, inp):
            out = de.add(de.matmul(p["a"], de.constant(inp)), p["b"])
            return de.reshape(out, (4 * 6,))

        assert_analytic_matches_fd(fn, params, (x,), target)

    def test_conv2d(self):
        rng = np.random.default_rng(3)
        params = de.ParamStore()
        params.add("w", rng.normal(size=(2, 3, 3, 3)))
        params.add("b", rng.normal(size=2))
        x = rng.normal(size=(3, 6, 5))
        target = rng.normal(size=(2, 6, 5))

        def fn(p, inp):
            return de.conv2d(de.constant(inp), p["w"], p["b"])

        assert_analytic_matches_fd(fn, params, (x,), target)

    def test_conv2d_input_gradient(self):
        rng = np.random.default_rng(4)
        params = de.ParamStore()
        params.add("x", rng.normal(size=(2, 5, 5)))
        w = de.constant(rng.normal(size=(3, 2, 3, 3)))
        target = rng.normal(size=(3, 5, 5))

        def fn(p, _dummy):
            return de.conv2d(p["x"], w)

        assert_analytic_matches_fd(fn, params, (0,), target)

    def test_soft_thresh_activation(self):
        rng = np.random.default_rng(5)
        params = de.ParamStore()
        params.add("w", rng.normal(size=(4, 3)))
        params.add("gamma", np.asarray(0.21))
        x = rng.normal(size=(3, 8))
        target = rng.normal(size=(4, 8))

        def fn(p, inp):
            return de.soft_thresh(de.matmul(p["w"], de.constant(inp)), p["gamma"])

        assert_analytic_matches_fd(fn, params, (x,), target)

    def test_lesita_activation_including_side_path(self):
        rng = np.random.default_rng(6)
        params = de.ParamStore()
        params.add("r", rng.normal(size=(4, 3)))
        params.add("ws", rng.normal(size=(4, 3)))
        params.add("mu", np.asarray(0.17))
        x = rng.normal(size=(3, 8))
        target = rng.normal(size=(4, 8))

        def fn(p, inp):
            inp_t = de.constant(inp)
            side = de.matmul(p["ws"], inp_t)
            return de.lesita_act(de.matmul(p["r"], inp_t), side, p["mu"])

        assert_analytic_matches_fd(fn, params, (x,), target)


class TestAdam:
    def _single_param(self, value):
        params = de.ParamStore()
        params.add("w", np.asarray(value))
        return params

    def test_zero_gradient_leaves_parameters(self):
        params = self._single_param([1.0, -2.0])
        params.grads_ready = True
        state = de.AdamState(lr=0.1)
        before = params["w"].value.copy()
        de.adam_step(params, state)
        assert np.array_equal(params["w"].value, before)

    def test_first_step_moves_by_learning_rate(self):
        params = self._single_param([0.0])
        params["w"].grad[:] = 1.0
        params.grads_ready = True
        state = de.AdamState(lr=0.1)
        de.adam_step(params, state)
        assert params["w"].value[0] == pytest.approx(-0.1, rel=1e-6)

    def test_converges_on_quadratic(self):
        # minimize (w - 0.7)^2; gradient 2*(w - 0.7).
        params = self._single_param([0.0])
        state = de.AdamState(lr=0.05)
        for _ in range(100):
            params["w"].grad[:] = 2.0 * (params["w"].value - 0.7)
            params.grads_ready = True
            de.adam_step(params, state)
        assert abs(params["w"].value[0] - 0.7) <= 1e-3

    def test_requires_populated_gradients(self):
        params = self._single_param([1.0])
        with pytest.raises(InvalidParameterError):
            de.adam_step(params, de.AdamState())

    def test_nonneg_clamp(self):
        params = de.ParamStore()
        params.add("net.mu", np.asarray(1e-4))
        params["net.mu"].grad[...] = 5.0
        params.grads_ready = True
        state = de.AdamState(lr=0.1, nonneg=("net.mu",))
        de.adam_step(params, state)
        assert params["net.mu"].value >= 0.0

    def test_duplicate_param_name_rejected(self):
        params = de.ParamStore()
        params.add("w", np.zeros(2))
        with pytest.raises(InvalidParameterError):
            params.add("w", np.zeros(2))


def sample_non_kink_inputs(params, stages, rng, margin=1e-3):
    """Resample encoder inputs until every pre-activation clears the margin."""
    while True:
        y = rng.normal(size=(3, 4))
        side_src = rng.normal(size=(3, 4))

        def fn(p, y_in, s_in):
            side = de.matmul(p["ws"], de.constant(s_in))
            ry = de.matmul(p["r"], de.constant(y_in))
            code = de.lesita_act(ry, side, p["mu"])
            for _ in range(stages - 1):
                code = de.lesita_act(de.add(de.matmul(p["q"], code), ry), side, p["mu"])
            return code

        with de.no_grad(), de.margin_tracking() as margins:
            fn(params, y, side_src)
        if min(margins) > margin:
            return fn, (y, side_src)


class TestGradCheck:
    def test_linear_model_tight(self):
        rng = np.random.default_rng(7)
        params = de.ParamStore()
        params.add("w", rng.normal(size=(5, 4)))
        x = rng.normal(size=(4, 3))
        target = rng.normal(size=(5, 3))

        def fn(p, inp):
            return de.matmul(p["w"], de.constant(inp))

        report = de.grad_check(fn, params, (x,), target, entries_per_tensor=20)
        assert report.passed
        assert report.max_error <= 1e-7

    def test_two_stage_encoder_at_non_kink_inputs(self):
        rng = np.random.default_rng(8)
        params = de.ParamStore()
        params.add("r", rng.normal(0, 0.5, size=(6, 3)))
        params.add("q", rng.normal(0, 0.5, size=(6, 6)))
        params.add("ws", rng.normal(0, 0.5, size=(6, 3)))
        params.add("mu", np.asarray(0.15))
        fn, inputs = sample_non_kink_inputs(params, stages=2, rng=rng)
        target = rng.normal(size=(6, 4))
        report = de.grad_check(fn, params, inputs, target, entries_per_tensor=12)
        assert report.passed, report.per_tensor
        assert report.max_error <= 1e-4

    def test_detects_corrupted_gradient(self):
        rng = np.random.default_rng(9)
        params = de.ParamStore()
        params.add("w", rng.normal(size=(3, 3)))
        x = rng.normal(size=(3, 2))
        target = rng.normal(size=(3, 2))

        def corrupt(p, inp):
            out = de.matmul(p["w"], de.constant(inp))

            def bad_backward(node):
                g = node.grad
                de._accumulate(out, g)
                w_grad = np.zeros_like(p["w"].value)
                w_grad.reshape(-1)[0] = 1.0  # deliberate off-by-one-entry error
                de._accumulate(p["w"], w_grad)

            return de.Tensor(out.value, requires_grad=True, name="corrupt",
                             parents=(out, p["w"]), backward=bad_backward)

        report = de.grad_check(corrupt, params, (x,), target, entries_per_tensor=9)
        assert not report.passed


class TestMarginTracking:
    def test_reports_activation_margins(self):
        params = de.ParamStore()
        params.add("g", np.asarray(0.5))
        x = de.constant(np.array([0.51, 2.0]))
        with de.margin_tracking() as margins:
            de.soft_thresh(x, params["g"])
        assert margins and margins[0] == pytest.approx(0.01, abs=1e-12)
