"""
Image file codecs.

Netpbm (maxval 255) is read in the plain P2/P3 and binary P5/P6 forms
and written as P5/P6; PNG is read only, through pypng. Every reader
returns a uint8 array of shape [H, W] (greyscale) or [H, W, 3] (colour).
"""
import logging
from pathlib import Path

import numpy as np
import png

from .exceptions import ImageFormatError

logger = logging.getLogger(__name__)

NETPBM_CHANNELS = {b'P2': 1, b'P3': 3, b'P5': 1, b'P6': 3}
PLAIN_MAGICS = (b'P2', b'P3')
NETPBM_SUFFIXES = ('.pgm', '.ppm')
IMAGE_SUFFIXES = NETPBM_SUFFIXES + ('.png',)
WHITESPACE = b' \t\n\r\v\f'


def _header_fields(data, count):
    """
    Split ``count`` whitespace-separated header fields off the front of a
    Netpbm file, skipping ``#`` comments. Returns the fields and the offset
    of the raster, which starts after exactly one whitespace byte.
    """
    fields = []
    pos = 0
    while len(fields) < count:
        while pos < len(data) and data[pos] in WHITESPACE:
            pos += 1
        if pos < len(data) and data[pos:pos + 1] == b'#':
            while pos < len(data) and data[pos:pos + 1] not in (b'\n', b'\r'):
                pos += 1
            continue
        start = pos
        while pos < len(data) and data[pos] not in WHITESPACE and data[pos:pos + 1] != b'#':
            pos += 1
        if start == pos:
            raise ImageFormatError("Truncated Netpbm header")
        fields.append(data[start:pos])
    if pos >= len(data) or data[pos] not in WHITESPACE:
        raise ImageFormatError("Netpbm header is not followed by whitespace")
    return fields, pos + 1


def decode_netpbm(data):
    """Decode the bytes of a plain or binary PGM/PPM file"""
    (magic, width, height, maxval), offset = _header_fields(data, 4)
    try:
        width, height, maxval = int(width), int(height), int(maxval)
    except ValueError as exc:
        raise ImageFormatError(f"Non-numeric Netpbm header field: {exc}") from exc
    if magic not in NETPBM_CHANNELS:
        raise ImageFormatError(f"Unsupported Netpbm magic {magic!r}, expected one of P2, P3, P5, P6")
    if width < 1 or height < 1:
        raise ImageFormatError(f"Invalid Netpbm size {width}x{height}")
    if maxval != 255:
        raise ImageFormatError(f"Only maxval 255 is supported, got {maxval}")

    channels = NETPBM_CHANNELS[magic]
    expected = width * height * channels
    if magic in PLAIN_MAGICS:
        return _decode_plain(data[offset:], width, height, channels, maxval)
    raster = data[offset:offset + expected]
    if len(raster) < expected:
        raise ImageFormatError(f"Truncated Netpbm raster: {len(raster)} of {expected} bytes")
    array = np.frombuffer(raster, dtype=np.uint8).reshape(height, width, channels)
    return array[:, :, 0].copy() if channels == 1 else array.copy()


def _decode_plain(raster, width, height, channels, maxval):
    expected = width * height * channels
    samples = raster.split()
    if len(samples) < expected:
        raise ImageFormatError(f"Truncated Netpbm raster: {len(samples)} of {expected} samples")
    try:
        values = np.array([int(sample) for sample in samples[:expected]], dtype=np.int64)
    except ValueError as exc:
        raise ImageFormatError(f"Non-numeric sample in plain Netpbm raster: {exc}") from exc
    if values.min() < 0 or values.max() > maxval:
        raise ImageFormatError(f"Plain Netpbm samples must lie in [0, {maxval}]")
    array = values.astype(np.uint8).reshape(height, width, channels)
    return array[:, :, 0] if channels == 1 else array


def encode_netpbm(array):
    """Encode a uint8 [H, W] array as P5 or an [H, W, 3] array as P6"""
    array = np.asarray(array)
    if array.dtype != np.uint8:
        raise ImageFormatError(f"Netpbm pixels must be uint8, got {array.dtype}")
    if array.ndim == 2:
        magic = b'P5'
    elif array.ndim == 3 and array.shape[2] == 3:
        magic = b'P6'
    else:
        raise ImageFormatError(f"Cannot encode an array of shape {array.shape} as Netpbm")
    height, width = array.shape[:2]
    header = magic + f"\n{width} {height}\n255\n".encode('ascii')
    return header + np.ascontiguousarray(array).tobytes()


def read_netpbm(path):
    try:
        data = Path(path).read_bytes()
    except OSError as exc:
        logger.error(f"Cannot read image {path}: {exc}")
        raise ImageFormatError(f"Cannot read image {path}: {exc}") from exc
    try:
        return decode_netpbm(data)
    except ImageFormatError as exc:
        raise ImageFormatError(f"{path}: {exc.message}") from exc


def write_netpbm(path, array):
    path = Path(path)
    data = encode_netpbm(array)
    try:
        path.write_bytes(data)
    except OSError as exc:
        logger.error(f"Cannot write image {path}: {exc}")
        raise ImageFormatError(f"Cannot write image {path}: {exc}") from exc


def read_png(path):
    """Decode a PNG to 8-bit greyscale or RGB, dropping any alpha channel"""
    try:
        width, height, rows, info = png.Reader(filename=str(path)).asDirect()
        pixels = np.vstack([np.asarray(row, dtype=np.uint32) for row in rows])
    except (OSError, png.Error) as exc:
        logger.error(f"Cannot decode PNG {path}: {exc}")
        raise ImageFormatError(f"Cannot decode PNG {path}: {exc}") from exc
    planes = info['planes']
    pixels = pixels.reshape(height, width, planes)
    if info['bitdepth'] != 8:
        pixels = np.round(pixels * 255.0 / (2 ** info['bitdepth'] - 1))
    colour = 1 if info['greyscale'] else 3
    pixels = pixels[:, :, :colour].astype(np.uint8)
    return pixels[:, :, 0] if colour == 1 else pixels


def read_image(path):
    """Read any supported image file, dispatching on the suffix"""
    suffix = Path(path).suffix.lower()
    if suffix in NETPBM_SUFFIXES:
        return read_netpbm(path)
    if suffix == '.png':
        return read_png(path)
    raise ImageFormatError(f"Unsupported image type '{suffix}' for {path}")
