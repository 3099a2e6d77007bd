import numpy as np
from django.test import SimpleTestCase

from apps.tensors.tensor import Tensor

from .config import EncoderConfig, ModelConfig, ModelVariant
from .exceptions import ConfigError
from .layers import BatchNorm2d, Conv2d, Linear
from .modules import Module, ModuleList
from .test_fixtures import Float64TestCase


class TwoLayer(Module):
    def __init__(self, rng):
        super().__init__()
        self.first = Linear(rng, 3, 4)
        self.norm = BatchNorm2d(4)
        self.rest = ModuleList([Linear(rng, 4, 2), Linear(rng, 2, 1, bias=False)])


class ModuleRegistryTestCase(Float64TestCase):
    """Test parameter registration and state handling"""

    def setUp(self):
        super().setUp()
        self.module = TwoLayer(np.random.default_rng(0))

    def test_names_follow_construction_order(self):
        """Test that dotted names come out in registration order"""
        names = [name for name, _ in self.module.named_parameters()]
        self.assertEqual(names, [
            'first.weight', 'first.bias',
            'norm.weight', 'norm.bias',
            'rest.0.weight', 'rest.0.bias',
            'rest.1.weight',
        ])
        self.assertEqual([name for name, _ in self.module.named_buffers()], ['norm.running_mean', 'norm.running_var'])

    def test_param_count(self):
        """Test that param_count sums every registered parameter"""
        self.assertEqual(self.module.param_count(), (12 + 4) + (4 + 4) + (8 + 2) + 2)

    def test_single_conv_param_count(self):
        """Test that a 1x1 conv from 3 channels to 1 with bias has 4 parameters"""
        self.assertEqual(Conv2d(np.random.default_rng(0), 3, 1, kernel_size=1).param_count(), 4)

    def test_train_eval_propagates(self):
        """Test that train/eval flags reach nested modules"""
        self.module.eval()
        self.assertFalse(self.module.rest[1].training)
        self.module.train()
        self.assertTrue(self.module.norm.training)

    def test_state_dict_round_trip(self):
        """Test that loading a state dict restores values in place"""
        state = self.module.state_dict()
        original_weight = self.module.first.weight
        for param in self.module.parameters():
            param.data[...] = 0
        self.module.norm.running_var[...] = 5.0
        self.module.load_state_dict(state)
        self.assertIs(self.module.first.weight, original_weight)
        np.testing.assert_array_equal(self.module.first.weight.data, state['first.weight'])
        np.testing.assert_array_equal(self.module.norm.running_var, np.ones(4))

    def test_state_dict_is_a_copy(self):
        """Test that mutating the model does not change a saved state"""
        state = self.module.state_dict()
        self.module.first.weight.data[...] = 7.0
        self.assertFalse(np.all(state['first.weight'] == 7.0))

    def test_load_rejects_mismatch(self):
        """Test that missing names and wrong shapes raise ConfigError"""
        state = self.module.state_dict()
        del state['first.bias']
        with self.assertRaises(ConfigError):
            self.module.load_state_dict(state)
        state = self.module.state_dict()
        state['first.bias'] = np.zeros(5)
        with self.assertRaises(ConfigError):
            self.module.load_state_dict(state)

    def test_he_uniform_bound(self):
        """Test that weights lie within sqrt(6 / fan_in) and biases start at zero"""
        conv = Conv2d(np.random.default_rng(1), 4, 6, kernel_size=3)
        bound = np.sqrt(6.0 / (4 * 9))
        self.assertLessEqual(np.abs(conv.weight.data).max(), bound)
        np.testing.assert_array_equal(conv.bias.data, np.zeros(6))

    def test_zero_grad(self):
        """Test that zero_grad clears every gradient"""
        for param in self.module.parameters():
            param.accumulate_grad(np.ones_like(param.data))
        self.module.zero_grad()
        self.assertTrue(all(param.grad is None for param in self.module.parameters()))

    def test_constant_tensors_are_not_parameters(self):
        """Test that tensors without requires_grad are not registered"""
        module = Module()
        module.constant = Tensor([1.0])
        self.assertEqual(module.parameters(), [])


class ModelConfigTestCase(SimpleTestCase):
    """Test architecture configuration validation"""

    def test_defaults_validate(self):
        """Test that the default and tiny configurations are consistent"""
        ModelConfig().validate()
        ModelConfig.tiny().validate()
        self.assertEqual(ModelConfig().adapter_reduction, 2)

    def test_variant_parsing(self):
        """Test the four variants and an unknown name"""
        self.assertEqual(ModelVariant.parse('full'), ModelVariant.FULL)
        self.assertTrue(ModelVariant.DS_ENC_RES.uses_residual)
        self.assertFalse(ModelVariant.DS_ENC_RES.uses_adapter)
        self.assertFalse(ModelVariant.BASE.uses_fusion)
        with self.assertRaises(ConfigError):
            ModelVariant.parse('huge')

    def test_rejects_inconsistent_values(self):
        """Test that each inconsistency raises ConfigError"""
        bad = [
            dict(stage_channels=[32, 32, 64]),
            dict(num_heads=[3, 2, 4]),
            dict(sr_ratios=[0, 2, 1]),
            dict(image_size=100),
            dict(adapter_activation='tanh'),
            dict(adapter_reduction=1),
            dict(se_reduction=32, stage_channels=[16, 32, 64]),
            dict(norm_eps=0.0),
            dict(stage_depths=[1, 1]),
        ]
        for overrides in bad:
            with self.assertRaises(ConfigError, msg=str(overrides)):
                ModelConfig(**overrides).validate()

    def test_round_trip_and_unknown_keys(self):
        """Test to_dict/from_dict and rejection of unknown keys"""
        config = ModelConfig.tiny(variant='base')
        self.assertEqual(ModelConfig.from_dict(config.to_dict()), config)
        with self.assertRaises(ConfigError):
            ModelConfig.from_dict({'variant': 'full', 'depth': 3})

    def test_encoder_config_total_stride(self):
        """Test that the default strides multiply to 16"""
        self.assertEqual(EncoderConfig().total_stride, 16)
        self.assertEqual(ModelConfig().encoder_config().stage_channels, [32, 64, 128])
