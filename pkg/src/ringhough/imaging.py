"""Image container, Gaussian smoothing, 5x5 Sobel Hessian and least principal curvature."""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy import ndimage

BORDER = 2  # half-width of the 5x5 derivative stencil
DEGENERATE_EPS = 1e-12

# 5x5 second-order Sobel stencils (OpenCV ksize=5). Dividing by 64 makes the
# responses exact second derivatives for polynomials of degree <= 2.
SOBEL_SMOOTH = np.array([1.0, 4.0, 6.0, 4.0, 1.0])
SOBEL_D1 = np.array([-1.0, -2.0, 0.0, 2.0, 1.0])
SOBEL_D2 = np.array([1.0, 0.0, -2.0, 0.0, 1.0])
SOBEL_NORM = 64.0


class DimensionError(ValueError):
    pass


class ParameterError(ValueError):
    pass


@dataclass(frozen=True)
class GrayImage:
    """2D intensity field, row-major ``data[y, x]``."""

    data: np.ndarray

    def __post_init__(self):
        data = np.asarray(self.data, dtype=np.float64)
        if data.ndim != 2:
            raise DimensionError(f"expected a 2D array, got shape {data.shape}")
        h, w = data.shape
        if w < 5 or h < 5:
            raise DimensionError(f"image {w}x{h} smaller than the 5x5 stencil")
        if not np.all(np.isfinite(data)):
            raise ValueError("image contains non-finite values")
        object.__setattr__(self, "data", data)

    @property
    def width(self) -> int:
        return self.data.shape[1]

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @classmethod
    def from_uint(cls, arr: np.ndarray, maxval: int | None = None) -> "GrayImage":
        """Map an integer image to [0, 1] intensities."""
        arr = np.asarray(arr)
        if maxval is None:
            maxval = 255 if arr.dtype == np.uint8 else int(np.iinfo(arr.dtype).max)
        return cls(arr.astype(np.float64) / float(maxval))


@dataclass(frozen=True)
class CurvatureField:
    kappa: np.ndarray
    dir_x: np.ndarray
    dir_y: np.ndarray
    degenerate: np.ndarray
    valid: np.ndarray


def _as_array(img) -> np.ndarray:
    if isinstance(img, GrayImage):
        return img.data
    return GrayImage(img).data


def gaussian_kernel1d(sigma: float) -> np.ndarray:
    """Normalized Gaussian kernel truncated at radius ceil(3*sigma)."""
    if not sigma > 0:
        raise ParameterError(f"sigma must be positive, got {sigma}")
    radius = int(math.ceil(3.0 * sigma))
    x = np.arange(-radius, radius + 1, dtype=np.float64)
    k = np.exp(-0.5 * (x / sigma) ** 2)
    return k / k.sum()


def gaussian_smooth(img, sigma: float) -> GrayImage:
    data = _as_array(img)
    k = gaussian_kernel1d(sigma)
    out = ndimage.correlate1d(data, k, axis=1, mode="nearest")
    out = ndimage.correlate1d(out, k, axis=0, mode="nearest")
    return GrayImage(out)


def _valid_mask(shape) -> np.ndarray:
    valid = np.zeros(shape, dtype=bool)
    valid[BORDER:-BORDER, BORDER:-BORDER] = True
    return valid


def hessian_fields(img) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Second derivatives (Ixx, Ixy, Iyy) from the 5x5 Sobel stencils.

    Values inside the 2-pixel border band come from edge replication and
    should be treated as invalid.
    """
    data = _as_array(img)

    def sep(kx, ky):
        out = ndimage.correlate1d(data, kx, axis=1, mode="nearest")
        return ndimage.correlate1d(out, ky, axis=0, mode="nearest") / SOBEL_NORM

    ixx = sep(SOBEL_D2, SOBEL_SMOOTH)
    iyy = sep(SOBEL_SMOOTH, SOBEL_D2)
    ixy = sep(SOBEL_D1, SOBEL_D1)
    return ixx, ixy, iyy


def least_curvature(ixx, ixy, iyy) -> CurvatureField:
    ixx = np.asarray(ixx, dtype=np.float64)
    ixy = np.asarray(ixy, dtype=np.float64)
    iyy = np.asarray(iyy, dtype=np.float64)
    if not (ixx.shape == ixy.shape == iyy.shape):
        raise DimensionError("Hessian fields must share dimensions")

    diff = ixx - iyy
    disc = np.sqrt(diff * diff + 4.0 * ixy * ixy)
    kappa = 0.5 * ((ixx + iyy) - disc)

    # Eigenvector of [[a, b], [b, c]] for eigenvalue k: (b, k - a) or (k - c, b).
    # Pick whichever has the larger norm for conditioning.
    v1x, v1y = ixy, kappa - ixx
    v2x, v2y = kappa - iyy, ixy
    n1 = v1x * v1x + v1y * v1y
    n2 = v2x * v2x + v2y * v2y
    use1 = n1 >= n2
    vx = np.where(use1, v1x, v2x)
    vy = np.where(use1, v1y, v2y)
    norm = np.sqrt(np.maximum(n1, n2))

    degenerate = disc < DEGENERATE_EPS
    with np.errstate(invalid="ignore", divide="ignore"):
        dir_x = np.where(degenerate, 1.0, vx / norm)
        dir_y = np.where(degenerate, 0.0, vy / norm)
    # canonical sign: dir_x >= 0, and dir_y > 0 when dir_x == 0
    flip = (dir_x < 0) | ((dir_x == 0) & (dir_y < 0))
    dir_x = np.where(flip, -dir_x, dir_x)
    dir_y = np.where(flip, -dir_y, dir_y)

    valid = _valid_mask(kappa.shape) if kappa.ndim == 2 and min(kappa.shape) >= 5 else np.ones(kappa.shape, bool)
    return CurvatureField(kappa, dir_x, dir_y, degenerate, valid)


def curvature(img, sigma: float) -> CurvatureField:
    """Smooth, differentiate and return the least principal curvature field."""
    return least_curvature(*hessian_fields(gaussian_smooth(img, sigma)))


# --------------------------------------------------------------------------
# I/O


def read_pgm(path) -> np.ndarray:
    """Read a binary (P5) PGM file. Returns a uint8 or uint16 array."""
    return _parse_pgm(path)[0]


def _parse_pgm(path) -> tuple[np.ndarray, int]:
    raw = Path(path).read_bytes()
    tokens = []
    pos = 0
    n = len(raw)
    while len(tokens) < 4:
        while pos < n and raw[pos:pos + 1].isspace():
            pos += 1
        if pos < n and raw[pos:pos + 1] == b"#":
            while pos < n and raw[pos:pos + 1] not in (b"\n", b"\r"):
                pos += 1
            continue
        start = pos
        while pos < n and not raw[pos:pos + 1].isspace() and raw[pos:pos + 1] != b"#":
            pos += 1
        if start == pos:
            raise ValueError(f"{path}: truncated PGM header")
        tokens.append(raw[start:pos])
    if tokens[0] != b"P5":
        raise ValueError(f"{path}: not a binary PGM (magic {tokens[0]!r})")
    try:
        width, height, maxval = (int(t) for t in tokens[1:])
    except ValueError as exc:
        raise ValueError(f"{path}: malformed PGM header") from exc
    if not (0 < maxval < 65536) or width <= 0 or height <= 0:
        raise ValueError(f"{path}: invalid PGM header values")
    pos += 1  # single whitespace after maxval
    dtype = np.dtype(">u2") if maxval > 255 else np.dtype("u1")
    count = width * height
    body = raw[pos:pos + count * dtype.itemsize]
    if len(body) != count * dtype.itemsize:
        raise ValueError(f"{path}: truncated PGM data")
    arr = np.frombuffer(body, dtype=dtype).reshape(height, width)
    return arr.astype(np.uint16 if maxval > 255 else np.uint8), maxval


def write_pgm(path, arr: np.ndarray) -> None:
    arr = np.asarray(arr)
    if arr.ndim != 2:
        raise DimensionError("PGM needs a 2D array")
    if arr.dtype == np.uint8:
        maxval, body = 255, arr.tobytes()
    elif arr.dtype == np.uint16:
        maxval, body = 65535, arr.astype(">u2").tobytes()
    else:
        raise TypeError(f"unsupported dtype {arr.dtype}")
    h, w = arr.shape
    Path(path).write_bytes(b"P5\n%d %d\n%d\n" % (w, h, maxval) + body)


def load_image(path) -> GrayImage:
    """Load a PGM or 8/16-bit grayscale PNG into [0, 1] intensities."""
    path = Path(path)
    if path.suffix.lower() == ".pgm":
        arr, maxval = _parse_pgm(path)
        return GrayImage.from_uint(arr, maxval)
    from PIL import Image

    with Image.open(path) as im:
        if im.mode in ("I;16", "I;16B", "I;16L", "I"):
            arr = np.asarray(im, dtype=np.int64)
            return GrayImage(arr.astype(np.float64) / 65535.0)
        if im.mode != "L":
            raise ValueError(f"{path}: not a grayscale image (mode {im.mode})")
        return GrayImage.from_uint(np.asarray(im, dtype=np.uint8))


def to_uint8(data: np.ndarray) -> np.ndarray:
    return np.clip(np.rint(np.asarray(data) * 255.0), 0, 255).astype(np.uint8)
