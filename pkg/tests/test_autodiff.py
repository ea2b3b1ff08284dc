"""Tape semantics, backward rules, and the finite-difference harness."""

import numpy as np
import numpy.testing as npt
import pytest

from cenet.tensor import (
    ContractError,
    Tape,
    Tensor,
    add,
    backward,
    concat_channels,
    conv2d,
    gradcheck,
    l1_loss,
    maxpool2d,
    op_census,
    prelu,
    scale,
    set_backward_fault,
    tensor_sum,
    upsample_nearest2x,
    weighted_sum,
)
from cenet.verify import run_op_suite


def t4(data, dtype=np.float32):
    return Tensor(np.asarray(data, dtype=dtype))


class TestBackward:
    def test_identity_chain(self):
        with Tape():
            x = t4(np.ones((1, 1, 1, 1)))
            loss = tensor_sum(x)
            backward(loss)
        assert x.grad.ravel()[0] == 1.0

    def test_sum_of_scaled(self):
        with Tape():
            x = t4(np.ones((1, 1, 2, 2)))
            loss = tensor_sum(scale(x, 2.0))
            backward(loss)
        npt.assert_array_equal(x.grad, np.full((1, 1, 2, 2), 2.0))

    def test_accumulation_over_two_consumers(self):
        with Tape():
            y = t4(np.ones((1, 1, 2, 2)))
            loss = add(tensor_sum(y), tensor_sum(y))
            backward(loss)
        npt.assert_array_equal(y.grad, np.full((1, 1, 2, 2), 2.0))

    def test_accumulation_matches_single_path_doubling(self):
        rng = np.random.default_rng(0)
        data = rng.uniform(-1, 1, (1, 2, 3, 3)).astype(np.float32)
        with Tape():
            y = Tensor(data.copy())
            loss = add(tensor_sum(y), tensor_sum(y))
            backward(loss)
        with Tape():
            z = Tensor(data.copy())
            loss2 = tensor_sum(scale(z, 2.0))
            backward(loss2)
        npt.assert_allclose(y.grad, z.grad, rtol=1e-6)

    def test_non_scalar_loss_rejected(self):
        with Tape():
            x = t4(np.ones((1, 1, 2, 2)))
            y = scale(x, 1.0)
            with pytest.raises(ContractError):
                backward(y)

    def test_double_backward_rejected(self):
        with Tape():
            x = t4(np.ones((1, 1, 1, 1)))
            loss = tensor_sum(x)
            backward(loss)
            with pytest.raises(ContractError):
                backward(loss)

    def test_loss_without_tape_rejected(self):
        loss = tensor_sum(t4(np.ones((1, 1, 1, 1))))
        with pytest.raises(ContractError):
            backward(loss)

    def test_ops_outside_tape_do_not_record(self):
        y = scale(t4(np.ones((1, 1, 1, 1))), 2.0)
        assert y.tape_node is None


class TestBackwardRules:
    def test_l1_gradient(self):
        with Tape():
            pred = t4(np.array([1.0, -2.0]).reshape(1, 1, 1, 2))
            target = t4(np.zeros((1, 1, 1, 2)))
            loss = l1_loss(pred, target)
            backward(loss)
        npt.assert_allclose(pred.grad.ravel(), [0.5, -0.5])
        assert target.grad is None

    def test_prelu_slope_gradient(self):
        with Tape():
            x = t4(np.full((1, 1, 1, 1), -4.0))
            slope = t4(np.full((1, 1, 1, 1), 0.25))
            loss = tensor_sum(prelu(x, slope))
            backward(loss)
        assert slope.grad.ravel()[0] == pytest.approx(-4.0)
        assert x.grad.ravel()[0] == pytest.approx(0.25)

    def test_maxpool_routes_to_argmax_once(self):
        # constant windows: ties resolve to the first position, mass lands once
        with Tape():
            x = t4(np.zeros((1, 1, 4, 4)))
            loss = tensor_sum(maxpool2d(x))
            backward(loss)
        windows = x.grad.reshape(2, 2, 2, 2).transpose(0, 2, 1, 3).reshape(4, 4)
        npt.assert_array_equal(windows.sum(axis=1), [1, 1, 1, 1])
        npt.assert_array_equal(windows[:, 0], [1, 1, 1, 1])  # first element wins the tie

    def test_maxpool_mass_conservation(self):
        rng = np.random.default_rng(4)
        with Tape():
            x = t4(rng.uniform(-1, 1, (2, 3, 6, 6)))
            out = maxpool2d(x)
            loss = tensor_sum(out)
            backward(loss)
        assert x.grad.sum() == pytest.approx(out.size)

    def test_upsample_backward_sums_blocks(self):
        with Tape():
            x = t4(np.ones((1, 1, 2, 2)))
            loss = tensor_sum(upsample_nearest2x(x))
            backward(loss)
        npt.assert_array_equal(x.grad, np.full((1, 1, 2, 2), 4.0))

    def test_upsample_is_exact_adjoint(self):
        # <forward(x), y> == <x, backward(y)> for random x, y
        rng = np.random.default_rng(7)
        x_data = rng.uniform(-1, 1, (1, 2, 3, 4)).astype(np.float32)
        y_data = rng.uniform(-1, 1, (1, 2, 6, 8)).astype(np.float32)
        fx = upsample_nearest2x(Tensor(x_data)).data
        with Tape():
            x = Tensor(x_data)
            loss = weighted_sum(upsample_nearest2x(x), y_data)
            backward(loss)
        lhs = float((fx * y_data).sum())
        rhs = float((x_data * x.grad).sum())
        assert lhs == pytest.approx(rhs, rel=1e-4)

    def test_concat_backward_partitions(self):
        rng = np.random.default_rng(8)
        up = rng.uniform(-1, 1, (1, 5, 2, 2)).astype(np.float32)
        with Tape():
            a = t4(rng.uniform(-1, 1, (1, 2, 2, 2)))
            b = t4(rng.uniform(-1, 1, (1, 3, 2, 2)))
            loss = weighted_sum(concat_channels(a, b), up)
            backward(loss)
        reassembled = np.concatenate([a.grad, b.grad], axis=1)
        npt.assert_array_equal(reassembled, up)

    def test_conv_backward_example_grads(self):
        # zero-kernel conv: d(out)/d(bias) = count of output positions
        with Tape():
            x = t4(np.ones((1, 1, 4, 4)))
            w = t4(np.zeros((2, 1, 3, 3)))
            b = t4(np.zeros((1, 2, 1, 1)))
            loss = tensor_sum(conv2d(x, w, b, padding=1))
            backward(loss)
        npt.assert_array_equal(b.grad.ravel(), [16.0, 16.0])


class TestGradcheckHarness:
    def test_op_suite_passes(self):
        results = run_op_suite(trials=3)
        for r in results:
            assert r.passed, f"{r.name}: {r.max_rel_error}"

    def test_negative_control_fails(self):
        set_backward_fault("conv2d")
        try:
            results = run_op_suite(trials=1)
        finally:
            set_backward_fault(None)
        failed = {r.name for r in results if not r.passed}
        assert failed == {"conv2d"}

    def test_rejects_float32_inputs(self):
        x = t4(np.ones((1, 1, 1, 1)))
        with pytest.raises(ContractError):
            gradcheck(lambda: scale(x, 2.0), [x])

    def test_reports_every_input(self):
        x = Tensor(np.ones((1, 1, 2, 2)), dtype=np.float64)
        y = Tensor(np.ones((1, 1, 2, 2)), dtype=np.float64)
        result = gradcheck(lambda: add(x, y), [x, y], name="add")
        assert len(result.per_input) == 2
        assert result.passed


class TestCensus:
    def test_counts_ops(self):
        with op_census() as counts:
            x = t4(np.ones((1, 1, 2, 2)))
            scale(x, 2.0)
            scale(x, 3.0)
            tensor_sum(x)
        assert counts["scale"] == 2
        assert counts["tensor_sum"] == 1
        assert "conv2d" not in counts
