import numpy as np
import png
from django.test import SimpleTestCase

from apps.tensors.tensor import precision

from .codecs import decode_netpbm, encode_netpbm, read_image, read_netpbm
from .exceptions import DatasetError, ImageFormatError
from .samples import array_to_pixels, load_sample, resize_nearest
from .test_fixtures import DatasetTestCase


class NetpbmCodecTestCase(SimpleTestCase):
    """Test plain and binary PGM/PPM parsing"""

    def test_greyscale_with_comment(self):
        """Test a P5 header carrying a comment line"""
        data = b'P5\n# made by hand\n3 2\n255\n' + bytes([0, 127, 128, 255, 1, 2])
        pixels = decode_netpbm(data)
        self.assertEqual(pixels.shape, (2, 3))
        self.assertEqual(pixels.dtype, np.uint8)
        np.testing.assert_array_equal(pixels, [[0, 127, 128], [255, 1, 2]])

    def test_colour_layout(self):
        """Test that P6 samples are interleaved RGB in row-major order"""
        data = b'P6 2 1 255\n' + bytes([10, 20, 30, 40, 50, 60])
        pixels = decode_netpbm(data)
        self.assertEqual(pixels.shape, (1, 2, 3))
        np.testing.assert_array_equal(pixels[0, 1], [40, 50, 60])

    def test_raster_may_start_with_whitespace_byte(self):
        """Test that only one whitespace byte separates header and raster"""
        data = b'P5\n2 1\n255\n' + bytes([10, 32])
        np.testing.assert_array_equal(decode_netpbm(data), [[10, 32]])

    def test_plain_formats(self):
        """Test ASCII P2 and P3 rasters with free whitespace and a header comment"""
        grey = decode_netpbm(b'P2\n# plain\n3 2\n255\n0 127  128\n255\t1 2\n')
        self.assertEqual(grey.dtype, np.uint8)
        np.testing.assert_array_equal(grey, [[0, 127, 128], [255, 1, 2]])
        colour = decode_netpbm(b'P3 2 1 255\n10 20 30\n40 50 60')
        self.assertEqual(colour.shape, (1, 2, 3))
        np.testing.assert_array_equal(colour[0, 1], [40, 50, 60])

    def test_encode_decode_identity(self):
        """Test that encoding then decoding returns the same pixels"""
        rng = np.random.default_rng(0)
        for shape in [(5, 7), (4, 6, 3)]:
            pixels = rng.integers(0, 256, size=shape, dtype=np.uint8)
            np.testing.assert_array_equal(decode_netpbm(encode_netpbm(pixels)), pixels)

    def test_rejects_bad_files(self):
        """Test bad magic, unsupported maxval, truncation and garbage fields"""
        bad = [
            b'P7\n1 1\n255\n\x00',
            b'P2\n2 1\n255\n7',
            b'P2\n1 1\n255\n256',
            b'P3\n1 1\n255\n1 2 x',
            b'P5\n1 1\n65535\n\x00\x00',
            b'P5\n2 2\n255\n\x00\x00\x00',
            b'P5\nx 2\n255\n\x00\x00',
            b'P5\n1 1',
        ]
        for data in bad:
            with self.assertRaises(ImageFormatError, msg=repr(data)):
                decode_netpbm(data)

    def test_encode_rejects_non_bytes(self):
        """Test that only uint8 arrays of 2 or 3 channels are encoded"""
        with self.assertRaises(ImageFormatError):
            encode_netpbm(np.zeros((2, 2)))
        with self.assertRaises(ImageFormatError):
            encode_netpbm(np.zeros((2, 2, 4), dtype=np.uint8))


class ImageFileTestCase(DatasetTestCase):
    """Test reading image files from disk"""

    def test_missing_file(self):
        """Test that a missing file raises ImageFormatError"""
        with self.assertRaises(ImageFormatError):
            read_netpbm(self.tmp / 'nope.pgm')

    def test_unknown_suffix(self):
        """Test that unsupported suffixes are rejected"""
        path = self.tmp / 'image.bmp'
        path.write_bytes(b'BM')
        with self.assertRaises(ImageFormatError):
            read_image(path)

    def test_png_greyscale_and_alpha(self):
        """Test that PNG files decode to 8-bit pixels without alpha"""
        grey_path = self.tmp / 'grey.png'
        with open(grey_path, 'wb') as handle:
            png.Writer(width=3, height=2, greyscale=True, bitdepth=8).write(handle, [[0, 128, 255], [1, 2, 3]])
        np.testing.assert_array_equal(read_image(grey_path), [[0, 128, 255], [1, 2, 3]])

        rgba_path = self.tmp / 'rgba.png'
        with open(rgba_path, 'wb') as handle:
            png.Writer(width=1, height=1, greyscale=False, alpha=True, bitdepth=8).write(handle, [[9, 8, 7, 6]])
        pixels = read_image(rgba_path)
        self.assertEqual(pixels.shape, (1, 1, 3))
        np.testing.assert_array_equal(pixels[0, 0], [9, 8, 7])


class LoadSampleTestCase(DatasetTestCase):
    """Test image/mask loading"""

    def test_white_mask_is_all_foreground(self):
        """Test that an all-white mask loads as all ones"""
        image_path, mask_path = self.write_pair(self.tmp, 'a', np.zeros((4, 4, 3)), np.full((4, 4), 255))
        sample = load_sample(image_path, mask_path)
        np.testing.assert_array_equal(sample.mask, np.ones((1, 4, 4)))
        self.assertEqual(sample.name, 'a')

    def test_mask_threshold_edge(self):
        """Test that mask value 127 is background and 128 is foreground"""
        image_path, mask_path = self.write_pair(self.tmp, 'b', np.zeros((1, 2, 3)), [[127, 128]])
        np.testing.assert_array_equal(load_sample(image_path, mask_path).mask, [[[0, 1]]])

    def test_greyscale_image_is_replicated(self):
        """Test that a PGM image becomes three equal channels in [0, 1]"""
        image_path, mask_path = self.write_pair(
            self.tmp, 'c', [[0, 255], [51, 102]], np.zeros((2, 2)), image_suffix='.pgm'
        )
        with precision('float64'):
            sample = load_sample(image_path, mask_path)
        self.assertEqual(sample.image.shape, (3, 2, 2))
        for channel in sample.image:
            np.testing.assert_allclose(channel, [[0.0, 1.0], [0.2, 0.4]])

    def test_native_size_round_trip(self):
        """Test that pixels written from a loaded image are bit-identical to the file"""
        rng = np.random.default_rng(2)
        pixels = rng.integers(0, 256, size=(8, 8, 3), dtype=np.uint8)
        image_path, mask_path = self.write_pair(self.tmp, 'd', pixels, np.zeros((8, 8)))
        for name in ('float32', 'float64'):
            with precision(name):
                sample = load_sample(image_path, mask_path)
            np.testing.assert_array_equal(array_to_pixels(sample.image), pixels)

    def test_resize_keeps_mask_binary(self):
        """Test that resizing gives the target size and a binary mask"""
        rng = np.random.default_rng(3)
        mask = (rng.random((10, 14)) > 0.5) * 255
        image_path, mask_path = self.write_pair(self.tmp, 'e', rng.integers(0, 256, (10, 14, 3)), mask)
        sample = load_sample(image_path, mask_path, target_size=16)
        self.assertEqual(sample.image.shape, (3, 16, 16))
        self.assertEqual(sample.mask.shape, (1, 16, 16))
        self.assertTrue(set(np.unique(sample.mask)) <= {0.0, 1.0})
        self.assertGreaterEqual(sample.image.min(), 0.0)
        self.assertLessEqual(sample.image.max(), 1.0 + 1e-6)

    def test_nearest_resize_doubles_pixels(self):
        """Test that a 2x nearest upscale repeats every pixel"""
        mask = np.array([[[0.0, 1.0], [1.0, 0.0]]])
        np.testing.assert_array_equal(resize_nearest(mask, (4, 4))[0], np.kron(mask[0], np.ones((2, 2))))

    def test_errors(self):
        """Test missing files and image/mask size mismatch"""
        image_path, _ = self.write_pair(self.tmp, 'f', np.zeros((4, 4, 3)), np.zeros((4, 4)))
        with self.assertRaises(DatasetError):
            load_sample(image_path, self.tmp / 'masks' / 'missing.pgm')
        image_path, mask_path = self.write_pair(self.tmp, 'g', np.zeros((4, 4, 3)), np.zeros((4, 5)))
        with self.assertRaises(DatasetError):
            load_sample(image_path, mask_path)
