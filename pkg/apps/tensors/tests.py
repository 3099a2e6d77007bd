import numpy as np
from django.test import SimpleTestCase, override_settings

from . import ops
from .counters import count_flops
from .exceptions import NonFiniteError, PrecisionError, ShapeError, TapeError
from .tape import GradTape, backward
from .tensor import Tensor, get_precision, precision


class TensorTestCase(SimpleTestCase):
    """Test the tensor value type"""

    def test_default_precision_from_settings(self):
        """Test that tensors follow the run-level precision setting"""
        with self.settings(TENSOR_PRECISION='float32'):
            self.assertEqual(Tensor([1.0, 2.0]).dtype, np.float32)
        with self.settings(TENSOR_PRECISION='float64'):
            self.assertEqual(Tensor([1.0, 2.0]).dtype, np.float64)

    def test_precision_context_overrides_setting(self):
        """Test that the precision context wins over the setting and is restored"""
        with self.settings(TENSOR_PRECISION='float32'):
            with precision('float64'):
                self.assertEqual(get_precision(), 'float64')
                self.assertEqual(Tensor([1.0]).dtype, np.float64)
            self.assertEqual(get_precision(), 'float32')

    def test_unknown_precision_rejected(self):
        """Test that an unsupported precision raises PrecisionError"""
        with self.assertRaises(PrecisionError):
            with precision('float16'):
                pass
        with self.settings(TENSOR_PRECISION='bfloat16'):
            with self.assertRaises(PrecisionError):
                Tensor([1.0])

    def test_shape_matches_values(self):
        """Test that shape, size and item agree with the stored values"""
        t = Tensor(np.arange(6).reshape(2, 3))
        self.assertEqual(t.shape, (2, 3))
        self.assertEqual(t.size, 6)
        self.assertEqual(Tensor([[4.0]]).item(), 4.0)
        with self.assertRaises(ShapeError):
            t.item()

    def test_zero_dimension_rejected(self):
        """Test that empty dimensions are rejected"""
        with self.assertRaises(ShapeError):
            Tensor(np.zeros((0, 3)))

    def test_constructor_copies_input(self):
        """Test that a tensor does not alias the array it was built from"""
        source = np.ones(3)
        t = Tensor(source)
        source[0] = 5.0
        self.assertEqual(t.data[0], 1.0)

    def test_operator_sugar(self):
        """Test that python operators route through the differentiable ops"""
        a = Tensor([1.0, 2.0])
        b = Tensor([3.0, 4.0])
        np.testing.assert_allclose((a + b).data, [4.0, 6.0])
        np.testing.assert_allclose((b - a).data, [2.0, 2.0])
        np.testing.assert_allclose((a * b).data, [3.0, 8.0])
        np.testing.assert_allclose((1.0 - a).data, [0.0, -1.0])
        np.testing.assert_allclose((-a).data, [-1.0, -2.0])


class GradTapeTestCase(SimpleTestCase):
    """Test recording and reverse sweeps"""

    def setUp(self):
        self.precision = precision('float64')
        self.precision.__enter__()
        self.x = Tensor([1.0, -2.0, 3.0], requires_grad=True)

    def tearDown(self):
        self.precision.__exit__(None, None, None)

    def test_sum_gradient_is_ones(self):
        """Test that d sum(x) / dx is all ones"""
        with GradTape() as tape:
            loss = self.x.sum()
            tape.backward(loss)
        np.testing.assert_array_equal(self.x.grad, np.ones(3))

    def test_square_gradient(self):
        """Test that d sum(x^2) / dx = 2x"""
        with GradTape():
            loss = (self.x * self.x).sum()
            backward(loss)
        np.testing.assert_allclose(self.x.grad, 2 * self.x.data)

    def test_gradients_accumulate_until_zeroed(self):
        """Test that two backward calls add their gradients"""
        for _ in range(2):
            with GradTape() as tape:
                tape.backward(self.x.sum())
        np.testing.assert_array_equal(self.x.grad, np.full(3, 2.0))
        self.x.zero_grad()
        self.assertIsNone(self.x.grad)

    def test_tape_is_topologically_ordered(self):
        """Test that each node's recorded inputs were produced earlier"""
        with GradTape() as tape:
            y = ops.relu(self.x * 2.0)
            z = (y + self.x).sum()
        for node_id, node in enumerate(tape.nodes):
            for tensor in node.inputs:
                if tensor is not None and tensor.node_id is not None:
                    self.assertLess(tensor.node_id, node_id)
        self.assertEqual(z.node_id, len(tape) - 1)

    def test_non_scalar_loss_rejected(self):
        """Test that backward on a vector raises TapeError"""
        with GradTape() as tape:
            y = self.x * 2.0
            with self.assertRaises(TapeError):
                tape.backward(y)

    def test_detached_loss_rejected(self):
        """Test that backward on an unrecorded tensor raises TapeError"""
        loss = self.x.sum()
        with self.assertRaises(TapeError):
            backward(loss)
        with GradTape() as tape:
            detached = self.x.sum().detach()
            with self.assertRaises(TapeError):
                tape.backward(detached)

    def test_no_recording_without_grad(self):
        """Test that ops on constants leave the tape empty"""
        constant = Tensor([1.0, 2.0])
        with GradTape() as tape:
            (constant * 3.0).sum()
        self.assertEqual(len(tape), 0)

    def test_shared_input_gradients_sum(self):
        """Test that a tensor used twice receives both contributions"""
        with GradTape() as tape:
            loss = (self.x * 3.0 + self.x).sum()
            tape.backward(loss)
        np.testing.assert_allclose(self.x.grad, np.full(3, 4.0))


class FiniteCheckTestCase(SimpleTestCase):
    """Test that non-finite results are surfaced"""

    def test_log_of_zero_raises(self):
        """Test that an op producing -inf raises NonFiniteError"""
        with self.assertRaises(NonFiniteError):
            ops.log(Tensor([0.0, 1.0]))

    @override_settings(TENSOR_CHECK_FINITE=False)
    def test_check_can_be_disabled(self):
        """Test that the finite check follows TENSOR_CHECK_FINITE"""
        out = ops.log(Tensor([0.0, 1.0]))
        self.assertTrue(np.isneginf(out.data[0]))


class FlopCounterTestCase(SimpleTestCase):
    """Test the instrumented op counter"""

    def test_matmul_flops(self):
        """Test that a [4,5]@[5,3] product counts 2*4*3*5 FLOPs"""
        with count_flops() as counter:
            ops.matmul(Tensor(np.ones((4, 5))), Tensor(np.ones((5, 3))))
        self.assertEqual(counter.total, 120)
        self.assertEqual(counter.by_op['matmul'], 120)

    def test_conv_flops(self):
        """Test that conv FLOPs are 2 * B * Cout * H' * W' * Cin/groups * kh * kw"""
        x = Tensor(np.ones((2, 4, 6, 6)))
        w = Tensor(np.ones((8, 2, 3, 3)))
        with count_flops() as counter:
            ops.conv2d(x, w, padding=1, groups=2)
        self.assertEqual(counter.total, 2 * 2 * 8 * 6 * 6 * 2 * 3 * 3)

    def test_elementwise_ops_not_counted(self):
        """Test that only matmul and conv2d contribute"""
        with count_flops() as counter:
            ops.relu(Tensor(np.ones((3, 3))) + 1.0)
        self.assertEqual(counter.total, 0)

    def test_nothing_recorded_outside_context(self):
        """Test that the counter stops at the end of its block"""
        with count_flops() as counter:
            pass
        ops.matmul(Tensor(np.ones((2, 2))), Tensor(np.ones((2, 2))))
        self.assertEqual(counter.total, 0)
