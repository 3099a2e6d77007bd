import struct
from collections import OrderedDict

import numpy as np

from apps.datasets.test_fixtures import DatasetTestCase
from apps.networks.network import build_model
from apps.networks.test_fixtures import zero_
from apps.tensors.tensor import Tensor

from .checkpoints import (
    MAGIC,
    Checkpoint,
    capture,
    decode_checkpoint,
    encode_checkpoint,
    load_checkpoint,
    restore_model,
    restore_optimizer,
    save_checkpoint,
)
from .exceptions import CheckpointError
from .optim import Adam, AdamConfig
from .test_fixtures import micro_config


def sample_checkpoint():
    return Checkpoint(
        model_config={'variant': 'full', 'image_size': 32},
        train_config={'seed': 3},
        tensors=OrderedDict([
            ('w', np.arange(6, dtype=np.float32).reshape(2, 3)),
            ('b', np.array([0.5, -1.5], dtype=np.float64)),
        ]),
        epoch=2,
        step=10,
        best=0.25,
    )


class CheckpointCodecTestCase(DatasetTestCase):
    """Test the PVTA binary layout"""

    def test_header_layout(self):
        """Test magic, version and the sorted compact JSON blob"""
        data = encode_checkpoint(sample_checkpoint())
        self.assertEqual(data[:4], MAGIC)
        self.assertEqual(struct.unpack('<I', data[4:8])[0], 1)
        (length,) = struct.unpack('<I', data[8:12])
        blob = data[12:12 + length].decode('utf-8')
        self.assertTrue(blob.startswith('{"best":0.25,"epoch":2,'))
        self.assertNotIn(' ', blob)

    def test_decode_restores_tensors_and_state(self):
        """Test names, order, dtypes, values and counters after decoding"""
        original = sample_checkpoint()
        decoded = decode_checkpoint(encode_checkpoint(original))
        self.assertEqual(list(decoded.tensors), ['w', 'b'])
        self.assertEqual(decoded.tensors['w'].dtype, np.float32)
        self.assertEqual(decoded.tensors['b'].dtype, np.float64)
        np.testing.assert_array_equal(decoded.tensors['w'], original.tensors['w'])
        self.assertEqual((decoded.epoch, decoded.step, decoded.best), (2, 10, 0.25))
        self.assertEqual(decoded.train_config, {'seed': 3})

    def test_reencode_is_byte_identical(self):
        """Test that load-then-save reproduces the file exactly"""
        path = save_checkpoint(sample_checkpoint(), self.tmp / 'run' / 'a.ckpt')
        again = save_checkpoint(load_checkpoint(path), self.tmp / 'b.ckpt')
        self.assertEqual(path.read_bytes(), again.read_bytes())
        self.assertFalse((self.tmp / 'run' / 'a.ckpt.tmp').exists())

    def test_corrupt_files_are_rejected(self):
        """Test bad magic, wrong version, truncation, trailing bytes and bad dtypes"""
        data = encode_checkpoint(sample_checkpoint())
        cases = {
            'magic': b'XXXX' + data[4:],
            'version': data[:4] + struct.pack('<I', 2) + data[8:],
            'truncated': data[:-3],
            'trailing': data + b'\x00',
            'empty': b'',
        }
        for label, corrupt in cases.items():
            with self.subTest(label), self.assertRaises(CheckpointError):
                decode_checkpoint(corrupt)
        with self.assertRaises(CheckpointError):
            encode_checkpoint(Checkpoint(model_config={}, tensors=OrderedDict(x=np.zeros(2, dtype=np.int32))))

    def test_missing_file(self):
        """Test that an unreadable path raises CheckpointError"""
        with self.assertRaises(CheckpointError):
            load_checkpoint(self.tmp / 'nope.ckpt')


class CheckpointModelTestCase(DatasetTestCase):
    """Test capturing and restoring models and optimizer state"""

    def setUp(self):
        super().setUp()
        self.config = micro_config(seed=1)
        self.model = build_model(self.config)

    def test_round_trip_reproduces_outputs(self):
        """Test that a restored model gives identical eval outputs"""
        path = save_checkpoint(capture(self.model), self.tmp / 'model.ckpt')
        other = build_model(micro_config(seed=1))
        zero_(other)
        restore_model(load_checkpoint(path), other)
        x = Tensor(np.random.default_rng(0).uniform(size=(1, 3, 32, 32)))
        np.testing.assert_array_equal(self.model.eval()(x).numpy(), other.eval()(x).numpy())

    def test_tensor_order(self):
        """Test parameters, then buffers, then the Adam moments"""
        optimizer = Adam(self.model.named_parameters(), AdamConfig())
        for _, param in self.model.named_parameters():
            param.grad = np.ones(param.shape, dtype=param.dtype)
        optimizer.step()
        names = list(capture(self.model, optimizer, epoch=1, step=1).tensors)
        params = [name for name, _ in self.model.named_parameters()]
        buffers = [name for name, _ in self.model.named_buffers()]
        self.assertEqual(names[:len(params)], params)
        self.assertEqual(names[len(params):len(params) + len(buffers)], buffers)
        self.assertTrue(all(name.startswith('adam.') for name in names[len(params) + len(buffers):]))

    def test_restore_optimizer(self):
        """Test that moments and the step counter come back"""
        optimizer = Adam(self.model.named_parameters(), AdamConfig())
        for _, param in self.model.named_parameters():
            param.grad = np.full(param.shape, 0.5, dtype=param.dtype)
        optimizer.step()
        checkpoint = decode_checkpoint(encode_checkpoint(capture(self.model, optimizer, step=optimizer.t)))
        fresh = Adam(self.model.named_parameters(), AdamConfig())
        restore_optimizer(checkpoint, fresh)
        self.assertEqual(fresh.t, 1)
        for name, values in optimizer.moments().items():
            np.testing.assert_array_equal(fresh.moments()[name], values)

    def test_mismatched_model_is_rejected(self):
        """Test that a checkpoint from another configuration does not load"""
        checkpoint = capture(self.model)
        with self.assertRaises(CheckpointError):
            restore_model(checkpoint, build_model(micro_config(variant='base')))
        checkpoint.tensors.popitem(last=False)
        with self.assertRaises(CheckpointError):
            restore_model(checkpoint, self.model)
