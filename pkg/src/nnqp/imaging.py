"""Blur operators, the least-squares deblurring problem, and grayscale image I/O.

Images are stacked row by row into vectors, so pixel ``(a, b)`` of an
``rows x cols`` image (0-based) sits at index ``a * cols + b``. Row ``k`` of a
blur matrix holds the weights with which every pixel contributes to output
pixel ``k``. Kernel weight that would land outside the image is moved to the
nearest boundary pixel along each axis, so every row sums to one.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path
from typing import Tuple

import numpy as np
import scipy.sparse as sp
from PIL import Image

from .model import NnqProblem


@dataclass(frozen=True, eq=False)
class ImageGrid:
    intensities: np.ndarray

    def __post_init__(self):
        arr = np.asarray(self.intensities, dtype=float)
        if arr.ndim != 2:
            raise ValueError("an image is a 2-D array")
        if not np.all(np.isfinite(arr)) or (arr < 0).any():
            raise ValueError("intensities must be finite and non-negative")
        object.__setattr__(self, "intensities", arr)

    @property
    def shape(self) -> Tuple[int, int]:
        return self.intensities.shape

    def vector(self) -> np.ndarray:
        return self.intensities.ravel()

    @classmethod
    def from_vector(cls, x, shape) -> "ImageGrid":
        return cls(np.asarray(x, dtype=float).reshape(shape))


@dataclass(frozen=True, eq=False)
class BlurOperator:
    matrix: sp.csr_matrix
    kind: str
    parameter: float
    shape: Tuple[int, int]


def pixel_index(a: int, b: int, shape) -> int:
    rows, cols = shape
    if not (0 <= a < rows and 0 <= b < cols):
        raise IndexError(f"pixel ({a}, {b}) outside a {rows}x{cols} image")
    return a * cols + b


def pixel_coords(k: int, shape) -> Tuple[int, int]:
    rows, cols = shape
    if not 0 <= k < rows * cols:
        raise IndexError(f"pixel index {k} out of range")
    return divmod(k, cols)


def _stencil_operator(offsets, weights, shape) -> sp.csr_matrix:
    """Apply a normalized stencil at every pixel, folding outside taps onto the border."""
    rows, cols = shape
    weights = np.asarray(weights, dtype=float)
    weights = weights / weights.sum()
    aa, bb = np.meshgrid(np.arange(rows), np.arange(cols), indexing="ij")
    aa, bb = aa.ravel(), bb.ravel()
    src = aa * cols + bb
    r_idx, c_idx, vals = [], [], []
    for (s, t), wgt in zip(offsets, weights):
        ca = np.clip(aa + s, 0, rows - 1)
        cb = np.clip(bb + t, 0, cols - 1)
        r_idx.append(src)
        c_idx.append(ca * cols + cb)
        vals.append(np.full(src.size, wgt))
    n = rows * cols
    m = sp.coo_matrix((np.concatenate(vals), (np.concatenate(r_idx), np.concatenate(c_idx))), shape=(n, n))
    return m.tocsr()


def turbulence_stencil(sigma: float):
    """Offsets and raw Gaussian weights ``exp(-(s^2+t^2)/(2 sigma^2))`` on the truncation window."""
    if sigma <= 0:
        raise ValueError("sigma must be positive")
    h = math.ceil(sigma)
    rng = np.arange(-h, h + 1)
    offsets = [(s, t) for s in rng for t in rng]
    weights = [math.exp(-(s * s + t * t) / (2.0 * sigma * sigma)) for s, t in offsets]
    return offsets, np.array(weights)


def outoffocus_stencil(radius: float):
    """Offsets inside the disc ``s^2 + t^2 <= R^2`` with uniform raw weight ``1/(pi R^2)``."""
    if radius <= 0:
        raise ValueError("radius must be positive")
    h = math.floor(radius)
    offsets = [(s, t) for s in range(-h, h + 1) for t in range(-h, h + 1) if s * s + t * t <= radius * radius]
    return offsets, np.full(len(offsets), 1.0 / (math.pi * radius * radius))


def build_turbulence_psf(sigma: float, shape) -> BlurOperator:
    offsets, weights = turbulence_stencil(sigma)
    return BlurOperator(_stencil_operator(offsets, weights, shape), "turbulence", float(sigma), tuple(shape))


def build_outoffocus_psf(radius: float, shape) -> BlurOperator:
    offsets, weights = outoffocus_stencil(radius)
    return BlurOperator(_stencil_operator(offsets, weights, shape), "out-of-focus", float(radius), tuple(shape))


def blur(op: BlurOperator, image: ImageGrid) -> ImageGrid:
    if image.shape != op.shape:
        raise ValueError(f"image shape {image.shape} does not match operator {op.shape}")
    return ImageGrid.from_vector(op.matrix @ image.vector(), op.shape)


def build_nnls(op: BlurOperator, blurred: ImageGrid) -> NnqProblem:
    """``min |Ax - b|^2`` as ``x'(A'A)x - 2(A'b)'x``, with ``|b|^2`` kept as the offset."""
    if blurred.shape != op.shape:
        raise ValueError("blurred image does not match the operator geometry")
    a = op.matrix
    b = blurred.vector()
    return NnqProblem(
        gram=(a.T @ a).tocsc(),
        linear=-2.0 * (a.T @ b),
        label="nnls",
        constant=float(b @ b),
        meta={"shape": op.shape, "psf": op.kind, "parameter": op.parameter},
    )


def init_deblur(problem: NnqProblem, tau: int, beta0: int = 0, seed: int = 0) -> np.ndarray:
    """Free the ``20 tau`` most negative gradient entries at the origin.

    If the gradient has fewer than ``max(tau, 1)`` negative entries (e.g. a
    black image), ``beta0`` random indices are freed instead.
    """
    grad0 = problem.linear
    nu = problem.dim
    if np.count_nonzero(grad0 < 0) < max(tau, 1):
        rng = np.random.default_rng(seed)
        free = rng.choice(nu, size=min(max(beta0, 1), nu), replace=False)
    else:
        order = np.argsort(grad0, kind="stable")
        free = order[: min(20 * tau, nu)]
    return np.setdiff1d(np.arange(nu), free)


def relative_mse(recovered: ImageGrid, original: ImageGrid) -> float:
    rec, org = recovered.intensities, original.intensities
    if rec.shape != org.shape:
        raise ValueError("images differ in shape")
    return float(np.sum((rec - org) ** 2) / np.sum(org ** 2))


def sparsify(image: ImageGrid, threshold: float) -> ImageGrid:
    """Set nearly black pixels (intensity at most ``threshold``) to zero."""
    arr = image.intensities.copy()
    arr[arr <= threshold] = 0.0
    return ImageGrid(arr)


def synthetic_sparse_image(rows: int, cols: int, density: float = 0.1, seed: int = 0) -> ImageGrid:
    """Black background with a few bright blobs covering about ``density`` of the pixels."""
    rng = np.random.default_rng(seed)
    img = np.zeros((rows, cols))
    target = int(round(density * rows * cols))
    while np.count_nonzero(img) < target:
        a, b = rng.integers(0, rows), rng.integers(0, cols)
        h, w = rng.integers(1, 4, size=2)
        img[a:a + h, b:b + w] = rng.integers(60, 256)
    # trim to the requested density
    nz = np.flatnonzero(img)
    if nz.size > target:
        img.ravel()[rng.choice(nz, size=nz.size - target, replace=False)] = 0.0
    return ImageGrid(img)


def read_pgm(path) -> ImageGrid:
    with Image.open(path) as im:
        if im.format != "PPM" or im.mode not in ("L", "I", "I;16"):
            raise ValueError(f"{path} is not a grayscale PGM image")
        return ImageGrid(np.asarray(im, dtype=float))


def write_pgm(path, image: ImageGrid):
    """Write an 8-bit binary (P5) PGM, rounding to the nearest integer."""
    arr = np.clip(np.rint(image.intensities), 0, 255).astype(np.uint8)
    Image.fromarray(arr, mode="L").save(Path(path), format="PPM")
