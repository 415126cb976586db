import math
import tempfile
import warnings
from pathlib import Path

import torch
from django.test import SimpleTestCase
from torch import nn

from .gradcheck import CoordinateCheck, GradientCheckError, GradientCheckReport, gradient_check
from .lstm import LSTMWeights
from .ops import NonFiniteError, guarded_cosine, log, lstm_cell, max_reduce, softmax
from .params import ParamStore, forward_backward


class _Toy(nn.Module):
    def __init__(self, *shapes):
        super().__init__()
        generator = torch.Generator().manual_seed(3)
        for i, shape in enumerate(shapes):
            values = torch.randn(*shape, generator=generator, dtype=torch.float64)
            self.register_parameter(f'p{i}', nn.Parameter(values))


class _WrongSquare(torch.autograd.Function):
    """x**2 with a deliberately wrong backward."""

    @staticmethod
    def forward(ctx, x):
        ctx.save_for_backward(x)
        return x * x

    @staticmethod
    def backward(ctx, grad):
        (x,) = ctx.saved_tensors
        return grad * 3 * x


class ForwardBackwardTest(SimpleTestCase):
    """Test analytic gradients through forward_backward"""

    def test_quadratic_gradient_is_identity(self):
        """Test that 1/2 |p|^2 has gradient p"""
        params = ParamStore(_Toy((3,), (2, 2)))
        loss, grad = forward_backward(lambda ps: 0.5 * sum((p * p).sum() for p in ps.tensors()), params)
        flat = params.flat()
        self.assertTrue(torch.allclose(grad, flat))
        self.assertAlmostEqual(loss, 0.5 * float((flat * flat).sum()))

    def test_constant_loss_has_zero_gradient(self):
        """Test that a loss independent of p has zero gradient"""
        params = ParamStore(_Toy((4,)))
        loss, grad = forward_backward(lambda ps: torch.tensor(2.5, dtype=torch.float64), params)
        self.assertEqual(loss, 2.5)
        self.assertTrue(torch.equal(grad, torch.zeros(4, dtype=torch.float64)))

    def test_softmax_cross_entropy_gradient(self):
        """Test the 2-logit cross-entropy gradient equals softmax minus one-hot"""
        params = ParamStore(_Toy((2,)))
        loss, grad = forward_backward(lambda ps: -torch.log_softmax(ps['p0'], dim=0)[1], params)
        expected = torch.softmax(params['p0'].detach(), dim=0) - torch.tensor([0.0, 1.0], dtype=torch.float64)
        self.assertTrue(torch.allclose(grad, expected))

    def test_loss_is_a_plain_float_without_warnings(self):
        """Test the returned loss is a Python float and reading it raises no warning"""
        params = ParamStore(_Toy((3,)))
        with warnings.catch_warnings(record=True) as caught:
            warnings.simplefilter('always')
            loss, _ = forward_backward(lambda ps: (ps['p0'] ** 2).sum(), params)
        self.assertIsInstance(loss, float)
        self.assertEqual([str(w.message) for w in caught], [])

    def test_nan_names_the_op(self):
        """Test that a NaN is reported with the op that produced it"""
        with self.assertRaises(NonFiniteError) as ctx:
            log(torch.tensor([-1.0]))
        self.assertEqual(ctx.exception.op, 'log')


class OpsTest(SimpleTestCase):
    """Test individual differentiable ops"""

    def test_max_reduce_ties_go_to_lowest_index(self):
        """Test that gradient flows only to the first maximal element"""
        x = torch.tensor([[1.0, 3.0, 3.0]], requires_grad=True)
        max_reduce(x, dim=1).sum().backward()
        self.assertEqual(x.grad.tolist(), [[0.0, 1.0, 0.0]])

    def test_cosine_with_zero_vector_is_zero(self):
        """Test the epsilon guard on the cosine denominator"""
        value = guarded_cosine(torch.zeros(3), torch.tensor([1.0, 2.0, 3.0]))
        self.assertEqual(float(value), 0.0)

    def test_cosine_matches_definition(self):
        """Test cosine against the dot-product formula"""
        u = torch.tensor([2.0, 1.0], dtype=torch.float64)
        v = torch.tensor([2.0, 0.0], dtype=torch.float64)
        self.assertAlmostEqual(float(guarded_cosine(u, v)), 2 / math.sqrt(5), places=12)

    def test_softmax_rows_sum_to_one(self):
        """Test softmax normalises along the chosen axis"""
        rows = softmax(torch.randn(3, 5, dtype=torch.float64), dim=-1).sum(dim=-1)
        self.assertTrue(torch.allclose(rows, torch.ones(3, dtype=torch.float64)))

    def test_zero_lstm_cell_outputs_zero(self):
        """Test that zero weights and biases give zero hidden and cell states"""
        d_in, d_h = 3, 4
        h, c = lstm_cell(
            torch.ones(d_in), torch.zeros(d_h), torch.zeros(d_h),
            torch.zeros(4 * d_h, d_in), torch.zeros(4 * d_h, d_h), torch.zeros(4 * d_h),
        )
        self.assertTrue(torch.equal(h, torch.zeros(d_h)))
        self.assertTrue(torch.equal(c, torch.zeros(d_h)))

    def test_lstm_forget_bias_initialised_to_one(self):
        """Test the forget-gate slice of the bias starts at 1"""
        weights = LSTMWeights(3, 4)
        self.assertTrue(torch.equal(weights.bias[4:8].detach(), torch.ones(4)))
        self.assertLessEqual(float(weights.weight_ih.abs().max()), 0.5)


class ParamStoreTest(SimpleTestCase):
    """Test the flat view and file format of ParamStore"""

    def test_flat_round_trip(self):
        """Test that load_flat(flat()) is lossless"""
        params = ParamStore(_Toy((2, 3), (4,)))
        flat = params.flat()
        params.load_flat(flat * 2)
        params.load_flat(flat)
        self.assertTrue(torch.equal(params.flat(), flat))
        self.assertEqual(params.flat_grad().numel(), params.numel)

    def test_save_and_load(self):
        """Test that a saved store reloads into a fresh module"""
        source = ParamStore(_Toy((2, 3), (4,)))
        target_module = _Toy((2, 3), (4,))
        with torch.no_grad():
            for p in target_module.parameters():
                p.zero_()
        target = ParamStore(target_module)
        with tempfile.TemporaryDirectory() as tmp:
            path = Path(tmp) / 'model.params'
            source.save(path, notes=['init=test'])
            header = path.read_bytes().split(b'end\n')[0].decode()
            self.assertIn('p0 2x3 0', header)
            self.assertIn('p1 4 6', header)
            target.load(path)
        self.assertTrue(torch.equal(target.flat(), source.flat()))

    def test_load_rejects_other_layout(self):
        """Test that a file for a different layout is refused"""
        with tempfile.TemporaryDirectory() as tmp:
            path = Path(tmp) / 'model.params'
            ParamStore(_Toy((2, 3))).save(path)
            with self.assertRaises(ValueError):
                ParamStore(_Toy((3, 2))).load(path)


class GradientCheckTest(SimpleTestCase):
    """Test finite-difference gradient checking"""

    def test_quadratic_passes_tightly(self):
        """Test a quadratic loss has relative error below 1e-6"""
        params = ParamStore(_Toy((5,), (3, 3)))
        report = gradient_check(lambda ps: 0.5 * sum((p * p).sum() for p in ps.tensors()), params)
        self.assertTrue(report.passed)
        self.assertLess(report.max_rel_error, 1e-6)
        self.assertEqual(len(report.checks), params.numel)

    def test_samples_at_least_64_coordinates(self):
        """Test coordinate sampling covers every tensor and at least 64 values"""
        params = ParamStore(_Toy((10, 10), (3,)))
        report = gradient_check(lambda ps: sum((p ** 3).sum() for p in ps.tensors()), params)
        self.assertGreaterEqual(len(report.checks), 64)
        self.assertEqual(set(report.per_parameter()), {'p0', 'p1'})

    def test_corrupted_gradient_fails(self):
        """Test the negative control with a wrong backward"""
        params = ParamStore(_Toy((4,)))
        with self.assertRaises(GradientCheckError) as ctx:
            gradient_check(lambda ps: _WrongSquare.apply(ps['p0']).sum(), params)
        self.assertIn('p0', str(ctx.exception))
        self.assertFalse(ctx.exception.report.passed)

    def test_parameters_restored_after_check(self):
        """Test that the check leaves parameter values untouched"""
        params = ParamStore(_Toy((6,)))
        before = params.flat()
        gradient_check(lambda ps: torch.tanh(ps['p0']).sum(), params)
        self.assertTrue(torch.equal(params.flat(), before))

    def test_tiny_gradients_within_noise_floor_pass(self):
        """Test a 1e-3 relative gap between 1e-8 gradients is round-off, not a failure"""
        report = GradientCheckReport(rel_tol=1e-3, epsilon=1e-5, checks=[
            CoordinateCheck('aggregator.backward_lstm.weight_ih', 299, 1.909e-8, 1.907e-8),
        ])
        self.assertGreater(report.max_rel_error, 1e-3)
        self.assertTrue(report.passed)
        self.assertEqual(len(report.to_dict()['below_noise_floor']), 1)

    def test_large_absolute_gap_still_fails(self):
        """Test a gap above the noise floor fails even for small gradients"""
        report = GradientCheckReport(rel_tol=1e-3, epsilon=1e-5, checks=[
            CoordinateCheck('w', 0, 2e-6, 1e-6),
        ])
        self.assertFalse(report.passed)
        self.assertEqual(report.below_noise_floor, [])

    def test_requires_float64(self):
        """Test that 32-bit parameters are refused"""
        params = ParamStore(_Toy((3,)).float())
        with self.assertRaises(ValueError):
            gradient_check(lambda ps: ps['p0'].sum(), params)
