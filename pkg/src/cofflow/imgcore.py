"""Grayscale image representation, PGM/PNG file I/O, and geometric transforms.

Conventions used throughout the package:

* a gray image is a 2-D ``float64`` array with intensities in ``[0, 1]``,
  row-major (``img[y, x]``);
* an RGB image is an ``(H, W, 3)`` ``uint8`` array;
* the 8-bit boundary uses half-up rounding (``0.5 -> 128``), so
  load/save round-trips are bit-exact for 8-bit sources.
"""

from __future__ import annotations

import math
from pathlib import Path

import numpy as np
from PIL import Image, UnidentifiedImageError

# ITU-R BT.601 luma weights for RGB -> gray conversion.
LUMA_WEIGHTS = (0.299, 0.587, 0.114)

_PNG_SIGNATURE = b"\x89PNG\r\n\x1a\n"


def to_uint8(values: np.ndarray) -> np.ndarray:
    """Quantize ``[0, 1]`` intensities to bytes with half-up rounding."""
    return np.floor(np.asarray(values, dtype=np.float64) * 255.0 + 0.5).astype(np.uint8)


def _check_gray(img: np.ndarray) -> np.ndarray:
    img = np.asarray(img, dtype=np.float64)
    if img.ndim != 2 or img.size == 0:
        raise ValueError(f"expected a non-empty 2-D gray image, got shape {img.shape}")
    return img


# ---------------------------------------------------------------------------
# File I/O
# ---------------------------------------------------------------------------

def load_image(path) -> np.ndarray:
    """Load a PGM (P2/P5) or PNG file as a gray image in ``[0, 1]``.

    RGB PNGs are converted with the standard luma weights
    ``0.299 r + 0.587 g + 0.114 b`` before scaling to ``[0, 1]``.

    Raises:
        FileNotFoundError: the file does not exist.
        ValueError: the format is unsupported or the image is degenerate.
    """
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"image file not found: {path}")
    data = path.read_bytes()
    if data[:2] in (b"P2", b"P5"):
        return _parse_pgm(data, path)
    if data[:8] == _PNG_SIGNATURE:
        return _load_png(path)
    raise ValueError(f"unsupported image format (not PGM P2/P5 or PNG): {path}")


def save_image(image: np.ndarray, path) -> None:
    """Save a gray image as binary PGM (P5, maxval 255) or an RGB image as PNG.

    The target format follows the file suffix: ``.pgm`` expects a 2-D gray
    image, ``.png`` expects an ``(H, W, 3)`` uint8 RGB image. Gray data is
    quantized with half-up rounding. Output bytes are stable across runs.
    """
    path = Path(path)
    arr = np.asarray(image)
    suffix = path.suffix.lower()
    if suffix == ".pgm":
        if arr.ndim != 2:
            raise ValueError("PGM output requires a 2-D gray image")
        _write_pgm(_check_gray(arr), path)
    elif suffix == ".png":
        if arr.ndim != 3 or arr.shape[2] != 3 or arr.dtype != np.uint8:
            raise ValueError("PNG output requires an (H, W, 3) uint8 RGB image")
        Image.fromarray(arr, mode="RGB").save(path, format="PNG")
    else:
        raise ValueError(f"unsupported output suffix {path.suffix!r} (use .pgm or .png)")


def _parse_pgm(data: bytes, path: Path) -> np.ndarray:
    magic = data[:2].decode("ascii")

    # Tokenize the header, skipping '#' comments. After the three header
    # numbers of a P5 file exactly one whitespace byte precedes the raster.
    pos = 2
    tokens: list[int] = []
    while len(tokens) < 3:
        while pos < len(data) and data[pos : pos + 1].isspace():
            pos += 1
        if pos < len(data) and data[pos : pos + 1] == b"#":
            while pos < len(data) and data[pos] != 0x0A:
                pos += 1
            continue
        start = pos
        while pos < len(data) and not data[pos : pos + 1].isspace():
            pos += 1
        if start == pos:
            raise ValueError(f"truncated PGM header: {path}")
        try:
            tokens.append(int(data[start:pos]))
        except ValueError:
            raise ValueError(f"malformed PGM header token in {path}") from None

    width, height, maxval = tokens
    if width <= 0 or height <= 0:
        raise ValueError(f"zero-dimension PGM image: {path}")
    if maxval <= 0:
        raise ValueError(f"invalid PGM maxval {maxval}: {path}")

    if magic == "P5":
        if maxval > 255:
            raise ValueError(f"16-bit PGM not supported (maxval {maxval}): {path}")
        pos += 1  # single whitespace separator before the raster
        raster = data[pos : pos + width * height]
        if len(raster) != width * height:
            raise ValueError(f"truncated PGM raster: {path}")
        values = np.frombuffer(raster, dtype=np.uint8).astype(np.float64)
    else:  # P2, ASCII samples
        fields = data[pos:].split()
        if len(fields) < width * height:
            raise ValueError(f"truncated PGM raster: {path}")
        values = np.array([int(f) for f in fields[: width * height]], dtype=np.float64)
        if values.min() < 0 or values.max() > maxval:
            raise ValueError(f"PGM sample outside [0, maxval]: {path}")

    return (values / float(maxval)).reshape(height, width)


def _write_pgm(img: np.ndarray, path: Path) -> None:
    height, width = img.shape
    header = f"P5\n{width} {height}\n255\n".encode("ascii")
    path.write_bytes(header + to_uint8(img).tobytes())


def _load_png(path: Path) -> np.ndarray:
    try:
        with Image.open(path) as im:
            im.load()
            mode = im.mode
            arr = np.asarray(im)
    except UnidentifiedImageError:
        raise ValueError(f"unsupported or corrupt PNG file: {path}") from None
    if arr.size == 0:
        raise ValueError(f"zero-dimension PNG image: {path}")
    if mode == "L":
        return arr.astype(np.float64) / 255.0
    if mode == "RGB":
        r, g, b = (arr[..., i].astype(np.float64) for i in range(3))
        wr, wg, wb = LUMA_WEIGHTS
        return (wr * r + wg * g + wb * b) / 255.0
    raise ValueError(f"unsupported PNG mode {mode!r} (expected 8-bit gray or RGB): {path}")


# ---------------------------------------------------------------------------
# Geometric transforms
# ---------------------------------------------------------------------------

def hflip(image: np.ndarray) -> np.ndarray:
    """Mirror an image left-right: pixel (x, y) moves to (width-1-x, y)."""
    img = _check_gray(image)
    return img[:, ::-1].copy()


def rotate(image: np.ndarray, angle: float) -> np.ndarray:
    """Rotate an image by ``angle`` degrees about its geometric center.

    Inverse mapping with bilinear interpolation; source samples falling
    outside the image read as 0 (black fill). Output size equals input size,
    and ``rotate(img, 0)`` reproduces ``img`` exactly.
    """
    img = _check_gray(image)
    h, w = img.shape
    cy, cx = (h - 1) / 2.0, (w - 1) / 2.0
    theta = math.radians(angle)
    c, s = math.cos(theta), math.sin(theta)

    ys, xs = np.meshgrid(np.arange(h, dtype=np.float64),
                         np.arange(w, dtype=np.float64), indexing="ij")
    dx = xs - cx
    dy = ys - cy
    src_x = c * dx + s * dy + cx
    src_y = -s * dx + c * dy + cy
    return bilinear_sample(img, src_x, src_y, fill=0.0)


def bilinear_sample(img: np.ndarray, xs: np.ndarray, ys: np.ndarray,
                    fill: float = 0.0) -> np.ndarray:
    """Sample ``img`` at continuous coordinates with bilinear interpolation.

    Any of the four neighboring source pixels that lies outside the image
    contributes ``fill`` instead. The result is a convex combination of the
    contributing values, so it never overshoots their range.
    """
    img = np.asarray(img, dtype=np.float64)
    h, w = img.shape
    x0 = np.floor(xs)
    y0 = np.floor(ys)
    fx = xs - x0
    fy = ys - y0
    x0 = x0.astype(np.int64)
    y0 = y0.astype(np.int64)
    x1 = x0 + 1
    y1 = y0 + 1

    def fetch(xi: np.ndarray, yi: np.ndarray) -> np.ndarray:
        inside = (xi >= 0) & (xi < w) & (yi >= 0) & (yi < h)
        vals = img[np.clip(yi, 0, h - 1), np.clip(xi, 0, w - 1)]
        return np.where(inside, vals, fill)

    return ((1.0 - fx) * (1.0 - fy) * fetch(x0, y0)
            + fx * (1.0 - fy) * fetch(x1, y0)
            + (1.0 - fx) * fy * fetch(x0, y1)
            + fx * fy * fetch(x1, y1))


def resize_bilinear(img: np.ndarray, new_height: int, new_width: int) -> np.ndarray:
    """Resize with bilinear interpolation, pixel centers aligned.

    Source coordinates are clamped at the borders (edge replication), so
    outputs stay within the input value range.
    """
    img = np.asarray(img, dtype=np.float64)
    h, w = img.shape
    if new_height <= 0 or new_width <= 0:
        raise ValueError("resize target must have positive dimensions")
    sx = (np.arange(new_width, dtype=np.float64) + 0.5) * (w / new_width) - 0.5
    sy = (np.arange(new_height, dtype=np.float64) + 0.5) * (h / new_height) - 0.5
    sx = np.clip(sx, 0.0, w - 1.0)
    sy = np.clip(sy, 0.0, h - 1.0)
    xs, ys = np.meshgrid(sx, sy)
    return bilinear_sample(img, xs, ys)


def resize_area(img: np.ndarray, new_height: int, new_width: int) -> np.ndarray:
    """Downsample by exact area averaging (each output cell is the mean of
    the source rectangle it covers, fractional borders weighted)."""
    img = np.asarray(img, dtype=np.float64)
    h, w = img.shape
    return _area_weights(new_height, h) @ img @ _area_weights(new_width, w).T


def _area_weights(dst: int, src: int) -> np.ndarray:
    if dst <= 0:
        raise ValueError("resize target must have positive dimensions")
    scale = src / dst
    m = np.zeros((dst, src), dtype=np.float64)
    for i in range(dst):
        lo = i * scale
        hi = (i + 1) * scale
        j0 = int(math.floor(lo))
        j1 = min(int(math.ceil(hi)), src)
        for j in range(j0, j1):
            m[i, j] = min(hi, j + 1) - max(lo, j)
    return m / scale


def gaussian_blur(img: np.ndarray, sigma: float, radius: int | None = None) -> np.ndarray:
    """Separable Gaussian smoothing with clamp-to-edge borders."""
    from scipy.ndimage import correlate1d

    from .flow import gaussian_kernel

    if radius is None:
        radius = max(1, int(round(3.0 * sigma)))
    kernel = gaussian_kernel(sigma, radius)
    img = np.asarray(img, dtype=np.float64)
    out = correlate1d(img, kernel, axis=0, mode="nearest")
    return correlate1d(out, kernel, axis=1, mode="nearest")
