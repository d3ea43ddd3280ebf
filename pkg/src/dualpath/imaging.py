"""Grayscale images, noise synthesis, patch chopping/aggregation and PSNR.

Intensities live on a [0, 1] scale in float64. Noisy images are never clipped
here; clipping happens only when writing 8-bit PGM files.
"""

from __future__ import annotations

import math
import os
from dataclasses import dataclass, field

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import ContractError, CoverageError, ParseError, TruncationError
from .nn import NetworkParams, forward

__all__ = [
    "GrayImage",
    "NoiseSpec",
    "PatchGrid",
    "load_pgm",
    "save_pgm",
    "read_pgm_bytes",
    "pgm_bytes",
    "add_awgn",
    "mse",
    "rmse",
    "psnr",
    "extract_patches",
    "aggregate",
    "gaussian_window",
    "denoise_image",
]


@dataclass
class GrayImage:
    """A 2-D grayscale intensity field (row-major, nominal range [0, 1])."""

    pixels: np.ndarray

    def __post_init__(self):
        self.pixels = np.asarray(self.pixels, dtype=np.float64)
        if self.pixels.ndim != 2 or self.pixels.size == 0:
            raise ContractError(f"image must be a non-empty 2-D array, got {self.pixels.shape}")
        if not np.all(np.isfinite(self.pixels)):
            raise ContractError("image contains non-finite pixels")

    @property
    def height(self) -> int:
        return self.pixels.shape[0]

    @property
    def width(self) -> int:
        return self.pixels.shape[1]

    @property
    def shape(self):
        return self.pixels.shape


# --------------------------------------------------------------------------
# PGM (binary P5, maxval 255)
# --------------------------------------------------------------------------

_WS = b" \t\n\r\v\f"


def read_pgm_bytes(data: bytes) -> GrayImage:
    """Decode a binary PGM. Comments (``#`` to end of line) are allowed in the header."""
    if len(data) < 2:
        raise ParseError("file too short for a PGM header", offset=0)
    if data[:2] != b"P5":
        magic = data[:2].decode("latin-1")
        raise ParseError(f"unsupported PGM variant {magic!r}; only binary P5 is read", offset=0)
    pos = 2
    fields = []
    while len(fields) < 3:
        if pos >= len(data):
            raise ParseError("header ended before width, height and maxval", offset=pos)
        if data[pos] in _WS:
            pos += 1
            continue
        if data[pos:pos + 1] == b"#":
            end = data.find(b"\n", pos)
            pos = len(data) if end < 0 else end + 1
            continue
        start = pos
        while pos < len(data) and data[pos] not in _WS and data[pos:pos + 1] != b"#":
            pos += 1
        token = data[start:pos]
        if not token.isdigit():
            raise ParseError(f"expected a decimal integer, got {token!r}", offset=start)
        fields.append((int(token), start))
    (width, w_off), (height, h_off), (maxval, m_off) = fields
    if width < 1 or height < 1:
        raise ParseError(f"invalid dimensions {width}x{height}", offset=w_off)
    if maxval != 255:
        raise ParseError(f"unsupported maxval {maxval}; only 255 is read", offset=m_off)
    if pos >= len(data) or data[pos] not in _WS:
        raise ParseError("missing whitespace after maxval", offset=pos)
    pos += 1
    expected = width * height
    payload = data[pos:pos + expected]
    if len(payload) < expected:
        raise TruncationError(f"PGM pixel data truncated at offset {pos}", expected, len(payload))
    pixels = np.frombuffer(payload, dtype=np.uint8).reshape(height, width)
    return GrayImage(pixels.astype(np.float64) / 255.0)


def load_pgm(path) -> GrayImage:
    with open(path, "rb") as fh:
        return read_pgm_bytes(fh.read())


def quantize(pixels) -> np.ndarray:
    """Clamp to [0, 1], scale to 0..255 and round half away from zero."""
    v = np.clip(np.asarray(pixels, dtype=np.float64), 0.0, 1.0) * 255.0
    return np.floor(v + 0.5).astype(np.uint8)


def pgm_bytes(img: GrayImage) -> bytes:
    header = f"P5\n{img.width} {img.height}\n255\n".encode("ascii")
    return header + quantize(img.pixels).tobytes()


def save_pgm(img: GrayImage, path) -> None:
    path = os.fspath(path)
    with open(path, "wb") as fh:
        fh.write(pgm_bytes(img))


# --------------------------------------------------------------------------
# Noise and metrics
# --------------------------------------------------------------------------

@dataclass
class NoiseSpec:
    """Gaussian noise level on the 0-255 scale plus the generator seed."""

    sigma_255: float
    seed: int = 0

    def __post_init__(self):
        if not self.sigma_255 > 0:
            raise ContractError(f"sigma must be positive, got {self.sigma_255}")
        if not 0 <= self.seed < 2**64:
            raise ContractError("seed must be a 64-bit unsigned integer")

    @property
    def sigma(self) -> float:
        return self.sigma_255 / 255.0


def add_awgn(img: GrayImage, spec: NoiseSpec, rng=None) -> GrayImage:
    """Add i.i.d. N(0, (sigma_255/255)^2) noise to every pixel; no clipping.

    The noise comes from ``numpy.random.default_rng(spec.seed)`` unless an
    explicit generator is supplied.
    """
    rng = np.random.default_rng(spec.seed) if rng is None else rng
    noise = rng.standard_normal(img.shape) * spec.sigma
    return GrayImage(img.pixels + noise)


def _pair(reference, test):
    a = reference.pixels if isinstance(reference, GrayImage) else np.asarray(reference, float)
    b = test.pixels if isinstance(test, GrayImage) else np.asarray(test, float)
    if a.shape != b.shape:
        raise ContractError(f"image dimensions differ: {a.shape} vs {b.shape}")
    return a, b


def mse(reference, test) -> float:
    """Mean squared error on the [0, 1] scale."""
    a, b = _pair(reference, test)
    d = a - b
    return float(np.mean(d * d))


def rmse(reference, test) -> float:
    """Root mean squared error on the [0, 1] scale."""
    return math.sqrt(mse(reference, test))


def psnr(reference, test) -> float:
    """``10 log10(255^2 / e2)`` with ``e2`` the MSE on the 0-255 scale.

    Identical images give ``inf``.
    """
    e2 = mse(reference, test) * 255.0**2
    if e2 == 0:
        return math.inf
    return 10.0 * math.log10(255.0**2 / e2)


# --------------------------------------------------------------------------
# Patch grids
# --------------------------------------------------------------------------

def _axis_positions(length: int, size: int, stride: int) -> list:
    if size > length:
        raise ContractError(f"patch size {size} exceeds image extent {length}")
    pos = list(range(0, length - size + 1, stride))
    # clamp the last patch against the border so the edge is reached
    if pos[-1] != length - size:
        pos.append(length - size)
    return pos


@dataclass
class PatchGrid:
    """Input-patch positions for chopping an image.

    The output block of ``output_size`` pixels sits at the center of each
    ``input_size`` input patch. ``positions`` are top-left corners of input
    patches, in row-major scan order.
    """

    input_size: int
    output_size: int
    stride: int
    positions: np.ndarray = field(default=None)

    def __post_init__(self):
        if self.input_size < 1 or self.input_size % 2 == 0:
            raise ContractError(f"input_size must be odd and positive, got {self.input_size}")
        if self.output_size < 1 or self.output_size % 2 == 0 or self.output_size > self.input_size:
            raise ContractError(
                f"output_size must be odd and <= input_size, got {self.output_size}"
            )
        if self.stride < 1:
            raise ContractError(f"stride must be positive, got {self.stride}")
        if self.positions is None:
            self.positions = np.zeros((0, 2), dtype=np.int64)
        self.positions = np.asarray(self.positions, dtype=np.int64).reshape(-1, 2)

    @classmethod
    def for_shape(cls, shape, input_size: int, output_size: int, stride: int = 3) -> "PatchGrid":
        """Regular grid over an image of ``shape``; the last row/column is clamped to the edge."""
        grid = cls(input_size, output_size, stride)
        rows = _axis_positions(shape[0], input_size, stride)
        cols = _axis_positions(shape[1], input_size, stride)
        grid.positions = np.array([(r, c) for r in rows for c in cols], dtype=np.int64)
        return grid

    @property
    def offset(self) -> int:
        """Distance from the input patch corner to the output block corner."""
        return (self.input_size - self.output_size) // 2

    def __len__(self):
        return len(self.positions)


def extract_patches(img: GrayImage, grid: PatchGrid):
    """Vectorized input patches with their means removed.

    Returns
    -------
    X : ndarray, shape (len(grid), input_size**2)
        One row per grid position, each with zero mean.
    dc : ndarray, shape (len(grid),)
        The removed means.
    """
    p = grid.input_size
    pos = grid.positions
    if len(pos) == 0:
        raise ContractError("grid has no positions")
    if (pos < 0).any() or (pos[:, 0] + p > img.height).any() or (pos[:, 1] + p > img.width).any():
        bad = pos[(pos[:, 0] < 0) | (pos[:, 1] < 0) | (pos[:, 0] + p > img.height)
                  | (pos[:, 1] + p > img.width)]
        raise ContractError(f"{len(bad)} patch positions fall outside the image, e.g. {bad[0]}")
    windows = sliding_window_view(img.pixels, (p, p))
    X = windows[pos[:, 0], pos[:, 1]].reshape(len(pos), p * p)
    dc = X.mean(axis=1)
    X = X - dc[:, None]
    return X, dc


def gaussian_window(size: int, sigma: float = None) -> np.ndarray:
    """Weights ``exp(-(u^2 + v^2) / (2 sigma^2))`` over a ``size`` x ``size`` block.

    Offsets are measured from the block center; ``sigma`` defaults to ``size / 4``.
    """
    sigma = size / 4.0 if sigma is None else sigma
    u = np.arange(size) - (size - 1) / 2.0
    g = np.exp(-(u * u) / (2.0 * sigma * sigma))
    return np.outer(g, g)


def aggregate(outputs, grid: PatchGrid, dc, img_dims, fallback: GrayImage = None) -> GrayImage:
    """Gaussian-weighted average of overlapping output blocks.

    Each row of ``outputs`` (plus its ``dc``) is placed at the center of its
    source patch. Pixels no block reaches are taken from ``fallback``; without
    one, such gaps raise :class:`CoverageError`.
    """
    q = grid.output_size
    outputs = np.asarray(outputs, dtype=np.float64)
    dc = np.asarray(dc, dtype=np.float64)
    if outputs.shape != (len(grid), q * q):
        raise ContractError(f"outputs must have shape {(len(grid), q * q)}, got {outputs.shape}")
    if dc.shape != (len(grid),):
        raise ContractError(f"dc must have length {len(grid)}")
    h, w = img_dims
    acc = np.zeros((h, w))
    wsum = np.zeros((h, w))
    weights = gaussian_window(q)
    blocks = outputs.reshape(-1, q, q) + dc[:, None, None]
    rows = grid.positions[:, 0] + grid.offset
    cols = grid.positions[:, 1] + grid.offset
    if (rows < 0).any() or (cols < 0).any() or (rows + q > h).any() or (cols + q > w).any():
        raise ContractError("output blocks fall outside the image")
    for u in range(q):
        for v in range(q):
            np.add.at(acc, (rows + u, cols + v), weights[u, v] * blocks[:, u, v])
            np.add.at(wsum, (rows + u, cols + v), weights[u, v])
    covered = wsum > 0
    out = np.empty((h, w))
    out[covered] = acc[covered] / wsum[covered]
    if not covered.all():
        if fallback is None:
            raise CoverageError([tuple(map(int, rc)) for rc in np.argwhere(~covered)])
        if fallback.shape != (h, w):
            raise ContractError("fallback image has different dimensions")
        out[~covered] = fallback.pixels[~covered]
    return GrayImage(out)


def denoise_image(params: NetworkParams, noisy: GrayImage, grid: PatchGrid = None,
                  stride: int = 3, pad: bool = True, batch_size: int = 20000) -> GrayImage:
    """Chop, run the network on every patch, and aggregate.

    The network must map ``input_size**2`` inputs to ``output_size**2``
    outputs. With ``pad=True`` (the default) the image is mirror-padded by the
    patch margin so every pixel gets network output; the grid is then built
    for the padded image from ``input_size``/``output_size``/``stride`` of
    ``grid`` (or inferred from the network dims when ``grid`` is None).
    Without padding the border margin is copied from ``noisy``.
    """
    if grid is None:
        p = math.isqrt(params.in_dim)
        q = math.isqrt(params.out_dim)
        if p * p != params.in_dim or q * q != params.out_dim:
            raise ContractError("network dims are not square patch sizes; pass a grid")
        grid = PatchGrid(p, q, stride)
    if params.in_dim != grid.input_size**2 or params.out_dim != grid.output_size**2:
        raise ContractError(
            f"network maps {params.in_dim}->{params.out_dim} but grid needs "
            f"{grid.input_size**2}->{grid.output_size**2}"
        )
    m = grid.offset
    source = GrayImage(np.pad(noisy.pixels, m, mode="symmetric")) if pad and m else noisy
    if pad or len(grid) == 0:
        grid = PatchGrid.for_shape(source.shape, grid.input_size, grid.output_size, grid.stride)
    X, dc = extract_patches(source, grid)
    Y = np.empty((len(grid), params.out_dim))
    for start in range(0, len(grid), batch_size):
        Y[start:start + batch_size] = forward(params, X[start:start + batch_size])[0]
    out = aggregate(Y, grid, dc, source.shape, fallback=source)
    if source is not noisy:
        out = GrayImage(out.pixels[m:m + noisy.height, m:m + noisy.width])
    return out
