"""Image primitives: bicubic resampling, luma conversion, PSNR, zero-padded
convolution, and binary PGM/PPM file I/O.

Images are stored as 2-D float arrays in row-major order with values
nominally in [0, 1].  Values are clamped to [0, 1] only when a file is
written; intermediate results (e.g. network outputs) may leave the range.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import (
    BadMagicError,
    DimensionMismatchError,
    InvalidParameterError,
    TruncatedFileError,
    UnsupportedFormatError,
)

__all__ = [
    "ImagePlane",
    "RgbImage",
    "bicubic_resize",
    "rgb_to_luma",
    "psnr",
    "conv2d_same",
    "load_pgm",
    "save_pgm",
    "load_ppm",
    "save_ppm",
]

# Cubic-convolution kernel parameter; -0.5 is the classic choice that
# reproduces degree-1 (in fact degree-2) polynomials in the interior.
_CUBIC_A = -0.5


@dataclass
class ImagePlane:
    """Single-channel 2-D image; ``pixels`` has shape (height, width)."""

    pixels: np.ndarray

    def __post_init__(self):
        pixels = np.asarray(self.pixels)
        if pixels.ndim != 2 or pixels.size == 0:
            raise InvalidParameterError(f"image plane must be non-empty 2-D, got shape {pixels.shape}")
        self.pixels = pixels

    @property
    def width(self) -> int:
        return self.pixels.shape[1]

    @property
    def height(self) -> int:
        return self.pixels.shape[0]


@dataclass
class RgbImage:
    """Interleaved RGB image; ``pixels`` has shape (height, width, 3)."""

    pixels: np.ndarray

    def __post_init__(self):
        pixels = np.asarray(self.pixels)
        if pixels.ndim != 3 or pixels.shape[2] != 3 or pixels.size == 0:
            raise InvalidParameterError(f"RGB image must have shape (h, w, 3), got {pixels.shape}")
        self.pixels = pixels

    @property
    def width(self) -> int:
        return self.pixels.shape[1]

    @property
    def height(self) -> int:
        return self.pixels.shape[0]


def _cubic_kernel(t):
    """Keys cubic-convolution kernel with a = -0.5, support (-2, 2)."""
    a = _CUBIC_A
    t = np.abs(t)
    near = ((a + 2.0) * t - (a + 3.0)) * t * t + 1.0
    far = a * (((t - 5.0) * t + 8.0) * t - 4.0)
    return np.where(t <= 1.0, near, np.where(t < 2.0, far, 0.0))


def _resample_last_axis(arr, out_len):
    """Separable cubic resampling of the last axis with edge clamping.

    Output sample i reads source coordinate (i + 0.5) * in/out - 0.5
    (pixel centers aligned), gathering four taps around it.
    """
    in_len = arr.shape[-1]
    scale = in_len / out_len
    src = (np.arange(out_len) + 0.5) * scale - 0.5
    base = np.floor(src).astype(np.int64)
    frac = src - base
    out = np.zeros(arr.shape[:-1] + (out_len,), dtype=arr.dtype)
    for tap in range(-1, 3):
        idx = np.clip(base + tap, 0, in_len - 1)
        out += arr[..., idx] * _cubic_kernel(frac - tap)
    return out


def bicubic_resize(img: ImagePlane, out_w: int, out_h: int) -> ImagePlane:
    """Resize with separable cubic convolution (a=-0.5, edge clamp)."""
    if out_w < 1 or out_h < 1:
        raise InvalidParameterError("output dimensions must be at least 1x1")
    pixels = np.asarray(img.pixels, dtype=np.float64)
    resized = _resample_last_axis(pixels, out_w)
    resized = _resample_last_axis(resized.T, out_h).T
    return ImagePlane(resized)


def rgb_to_luma(img: RgbImage) -> ImagePlane:
    """BT.601 full-range luminance: Y = 0.299 R + 0.587 G + 0.114 B."""
    p = np.asarray(img.pixels, dtype=np.float64)
    return ImagePlane(0.299 * p[:, :, 0] + 0.587 * p[:, :, 1] + 0.114 * p[:, :, 2])


def psnr(a: ImagePlane, b: ImagePlane, peak: float = 1.0) -> float:
    """10*log10(peak^2 / MSE) in dB; +inf for identical images."""
    if peak <= 0.0:
        raise InvalidParameterError("peak must be positive")
    pa, pb = np.asarray(a.pixels, dtype=np.float64), np.asarray(b.pixels, dtype=np.float64)
    if pa.shape != pb.shape:
        raise DimensionMismatchError(f"image dims differ: {pa.shape} vs {pb.shape}")
    mse = float(np.mean((pa - pb) ** 2))
    if mse == 0.0:
        return math.inf
    return 10.0 * math.log10(peak * peak / mse)


def _im2col_same(x, kh, kw):
    """Zero-pad ``x`` (C, H, W) and unfold k x k windows into a
    (C*kh*kw, H*W) matrix, one column per output position."""
    c, h, w = x.shape
    xp = np.pad(x, ((0, 0), (kh // 2, kh // 2), (kw // 2, kw // 2)))
    win = sliding_window_view(xp, (kh, kw), axis=(1, 2))
    return np.ascontiguousarray(win.transpose(0, 3, 4, 1, 2)).reshape(c * kh * kw, h * w)


def conv2d_same(x, weights, bias=None):
    """Zero-padded cross-correlation preserving spatial size.

    ``x`` is (C_in, H, W), ``weights`` is (C_out, C_in, kh, kw) with odd
    kernel dims, ``bias`` is (C_out,) or None.  Returns (C_out, H, W).
    """
    x = np.asarray(x)
    weights = np.asarray(weights)
    if x.ndim != 3 or weights.ndim != 4:
        raise DimensionMismatchError(f"expected (C,H,W) input and (O,C,kh,kw) weights, got {x.shape}, {weights.shape}")
    c_out, c_in, kh, kw = weights.shape
    if kh % 2 == 0 or kw % 2 == 0:
        raise UnsupportedFormatError(f"kernel dims must be odd, got {kh}x{kw}")
    if c_in != x.shape[0]:
        raise DimensionMismatchError(f"weights expect {c_in} input channels, image has {x.shape[0]}")
    _, h, w = x.shape
    cols = _im2col_same(x, kh, kw)
    out = (weights.reshape(c_out, -1) @ cols).reshape(c_out, h, w)
    if bias is not None:
        bias = np.asarray(bias)
        if bias.shape != (c_out,):
            raise DimensionMismatchError(f"bias shape {bias.shape} != ({c_out},)")
        out = out + bias[:, None, None]
    return out


# ---------------------------------------------------------------------------
# Netpbm binary I/O (P5 grayscale, P6 RGB)


def _read_header(data, magic):
    if data[:2] != magic:
        raise BadMagicError(f"expected {magic.decode()} magic, got {data[:2]!r}")
    pos, n = 2, len(data)
    fields = []
    while len(fields) < 3:
        while pos < n and data[pos:pos + 1].isspace():
            pos += 1
        if pos < n and data[pos:pos + 1] == b"#":
            newline = data.find(b"\n", pos)
            if newline < 0:
                raise TruncatedFileError("header comment never terminated")
            pos = newline + 1
            continue
        start = pos
        while pos < n and not data[pos:pos + 1].isspace():
            pos += 1
        if start == pos:
            raise TruncatedFileError("header ended before width/height/maxval")
        try:
            fields.append(int(data[start:pos]))
        except ValueError:
            raise UnsupportedFormatError(f"bad header token {data[start:pos]!r}") from None
    width, height, maxval = fields
    if width < 1 or height < 1:
        raise UnsupportedFormatError(f"bad dimensions {width}x{height}")
    if maxval not in (255, 65535):
        raise UnsupportedFormatError(f"maxval must be 255 or 65535, got {maxval}")
    # Exactly one whitespace byte separates the header from the raster.
    return width, height, maxval, pos + 1


def _read_raster(data, offset, count, maxval):
    dtype = np.dtype(">u2") if maxval == 65535 else np.dtype("u1")
    end = offset + count * dtype.itemsize
    if len(data) < end:
        raise TruncatedFileError(f"raster needs {end - offset} bytes, file has {len(data) - offset}")
    values = np.frombuffer(data[offset:end], dtype=dtype)
    return values.astype(np.float64) / maxval


def load_pgm(path) -> ImagePlane:
    """Read a binary (P5) PGM file; values map to [0, 1] as v / maxval."""
    with open(path, "rb") as fh:
        data = fh.read()
    width, height, maxval, offset = _read_header(data, b"P5")
    values = _read_raster(data, offset, width * height, maxval)
    return ImagePlane(values.reshape(height, width))


def load_ppm(path) -> RgbImage:
    """Read a binary (P6) PPM file; values map to [0, 1] as v / maxval."""
    with open(path, "rb") as fh:
        data = fh.read()
    width, height, maxval, offset = _read_header(data, b"P6")
    values = _read_raster(data, offset, width * height * 3, maxval)
    return RgbImage(values.reshape(height, width, 3))


def _quantize(pixels, maxval):
    if maxval not in (255, 65535):
        raise UnsupportedFormatError(f"maxval must be 255 or 65535, got {maxval}")
    q = np.rint(np.clip(pixels, 0.0, 1.0) * maxval)
    return q.astype(">u2" if maxval == 65535 else "u1")


def save_pgm(path, img: ImagePlane, maxval: int = 255) -> None:
    """Write a binary (P5) PGM file, clamping values into [0, 1]."""
    header = f"P5\n{img.width} {img.height}\n{maxval}\n".encode()
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(_quantize(img.pixels, maxval).tobytes())


def save_ppm(path, img: RgbImage, maxval: int = 255) -> None:
    """Write a binary (P6) PPM file, clamping values into [0, 1]."""
    header = f"P6\n{img.width} {img.height}\n{maxval}\n".encode()
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(_quantize(img.pixels, maxval).tobytes())
