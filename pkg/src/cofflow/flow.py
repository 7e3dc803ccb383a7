"""Dense two-frame optical flow via polynomial expansion.

Each frame is approximated around every pixel by a local quadratic model
``f(x) ~ x^T A x + b^T x + c`` fitted by weighted least squares over a small
Gaussian-weighted neighborhood (Farneback expansion). Displacement between
two frames follows from the change in the linear coefficients, accumulated
over an averaging window and refined coarse-to-fine over an image pyramid.

A flow field is an ``(H, W, 2)`` ``float64`` array with ``[..., 0]`` the
horizontal component u and ``[..., 1]`` the vertical component v, in pixels.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.ndimage import correlate1d, uniform_filter

from .imgcore import gaussian_blur, resize_bilinear

FLO_MAGIC = 202021.25  # spells "PIEH" when stored as little-endian float32

# Relative determinant threshold below which the 2x2 system is treated as
# singular and the prior estimate is kept (flat, textureless regions).
_SINGULAR_RTOL = 1e-9


@dataclass(frozen=True)
class FlowParams:
    """Tuning knobs for :func:`farneback_flow`.

    Defaults follow the de-facto standard parameterization of the classic
    dense Farneback estimator, which keeps outputs comparable with other
    implementations.
    """

    pyramid_scale: float = 0.5
    levels: int = 3
    window_size: int = 15
    iterations: int = 3
    poly_n: int = 5
    poly_sigma: float = 1.1

    def validate(self) -> None:
        if not 0.0 < self.pyramid_scale < 1.0:
            raise ValueError(f"pyramid_scale must be in (0, 1), got {self.pyramid_scale}")
        if self.levels < 1:
            raise ValueError(f"levels must be >= 1, got {self.levels}")
        if self.window_size < 3 or self.window_size % 2 == 0:
            raise ValueError(f"window_size must be odd and >= 3, got {self.window_size}")
        if self.iterations < 1:
            raise ValueError(f"iterations must be >= 1, got {self.iterations}")
        if self.poly_n < 3 or self.poly_n % 2 == 0:
            raise ValueError(f"poly_n must be odd and >= 3, got {self.poly_n}")
        if self.poly_sigma <= 0.0:
            raise ValueError(f"poly_sigma must be > 0, got {self.poly_sigma}")


@dataclass
class PolyExpansion:
    """Per-pixel quadratic model coefficients.

    ``A = [[a11, a12], [a12, a22]]`` is the symmetric quadratic term,
    ``b = (b1, b2)`` the linear term (x then y), ``c`` the constant term.
    All six fields are 2-D arrays co-dimensioned with the source image.
    """

    a11: np.ndarray
    a12: np.ndarray
    a22: np.ndarray
    b1: np.ndarray
    b2: np.ndarray
    c: np.ndarray

    @property
    def shape(self) -> tuple[int, int]:
        return self.a11.shape


def gaussian_kernel(sigma: float, radius: int) -> np.ndarray:
    """Symmetric 1-D Gaussian weights of length ``2*radius + 1``, sum 1."""
    if sigma <= 0.0:
        raise ValueError(f"sigma must be positive, got {sigma}")
    if radius < 1:
        raise ValueError(f"radius must be >= 1, got {radius}")
    k = np.arange(-radius, radius + 1, dtype=np.float64)
    weights = np.exp(-(k * k) / (2.0 * sigma * sigma))
    return weights / weights.sum()


def poly_expand(image: np.ndarray, poly_n: int = 5, poly_sigma: float = 1.1) -> PolyExpansion:
    """Fit the local quadratic model at every pixel of ``image``.

    The fit minimizes the Gaussian-weighted squared error of the basis
    ``{1, x, y, x^2, y^2, xy}`` over the ``poly_n x poly_n`` neighborhood,
    with borders handled by edge replication. Both the applicability weights
    and the basis are separable, so the per-pixel normal equations reduce to
    six separable correlations followed by one constant 6x6 solve.
    """
    img = np.asarray(image, dtype=np.float64)
    if img.ndim != 2:
        raise ValueError(f"expected a 2-D image, got shape {img.shape}")
    if poly_n < 3 or poly_n % 2 == 0:
        raise ValueError(f"poly_n must be odd and >= 3, got {poly_n}")
    if min(img.shape) < poly_n:
        raise ValueError(
            f"image {img.shape} smaller than expansion neighborhood ({poly_n}x{poly_n})")

    n = poly_n // 2
    g = gaussian_kernel(poly_sigma, n)
    k = np.arange(-n, n + 1, dtype=np.float64)
    g1 = g * k
    g2 = g * k * k

    def corr(wy: np.ndarray, wx: np.ndarray) -> np.ndarray:
        tmp = correlate1d(img, wy, axis=0, mode="nearest")
        return correlate1d(tmp, wx, axis=1, mode="nearest")

    # Weighted projections of the image onto each basis function.
    proj = np.stack([
        corr(g, g),     # 1
        corr(g, g1),    # x
        corr(g1, g),    # y
        corr(g, g2),    # x^2
        corr(g2, g),    # y^2
        corr(g1, g1),   # xy
    ])

    inv_gram = np.linalg.inv(_basis_gram(g, k))
    r = np.tensordot(inv_gram, proj, axes=1)

    return PolyExpansion(a11=r[3], a12=r[5] / 2.0, a22=r[4],
                         b1=r[1], b2=r[2], c=r[0])


def _basis_gram(g: np.ndarray, k: np.ndarray) -> np.ndarray:
    """Gram matrix of the quadratic basis under the separable weights."""
    wy, wx = np.meshgrid(g, g, indexing="ij")
    y, x = np.meshgrid(k, k, indexing="ij")
    basis = np.stack([np.ones_like(x), x, y, x * x, y * y, x * y])
    w = (wy * wx).ravel()
    flat = basis.reshape(6, -1)
    return (flat * w) @ flat.T


def flow_single_scale(exp1: PolyExpansion, exp2: PolyExpansion,
                      prior: np.ndarray, window_size: int) -> np.ndarray:
    """One displacement solve between two expansions, starting from ``prior``.

    The second frame's coefficients are read at the prior-displaced position
    (rounded to the nearest pixel, clamped in bounds). Per-pixel constraints
    ``A_bar d = db`` are accumulated as ``G = A_bar^T A_bar`` and
    ``h = A_bar^T db``, box-averaged over ``window_size`` with edge
    replication, and solved pixelwise. Where the averaged system is singular
    or ill-conditioned the prior displacement is kept, so the output is
    always finite.
    """
    if exp1.shape != exp2.shape:
        raise ValueError(f"expansion shapes differ: {exp1.shape} vs {exp2.shape}")
    prior = np.asarray(prior, dtype=np.float64)
    h, w = exp1.shape
    if prior.shape != (h, w, 2):
        raise ValueError(f"prior shape {prior.shape} does not match field ({h}, {w}, 2)")

    du = np.rint(prior[..., 0])
    dv = np.rint(prior[..., 1])
    ys, xs = np.meshgrid(np.arange(h), np.arange(w), indexing="ij")
    lx = np.clip(xs + du.astype(np.int64), 0, w - 1)
    ly = np.clip(ys + dv.astype(np.int64), 0, h - 1)

    a11 = 0.5 * (exp1.a11 + exp2.a11[ly, lx])
    a12 = 0.5 * (exp1.a12 + exp2.a12[ly, lx])
    a22 = 0.5 * (exp1.a22 + exp2.a22[ly, lx])
    db1 = -0.5 * (exp2.b1[ly, lx] - exp1.b1) + a11 * du + a12 * dv
    db2 = -0.5 * (exp2.b2[ly, lx] - exp1.b2) + a12 * du + a22 * dv

    g11 = uniform_filter(a11 * a11 + a12 * a12, size=window_size, mode="nearest")
    g12 = uniform_filter(a12 * (a11 + a22), size=window_size, mode="nearest")
    g22 = uniform_filter(a12 * a12 + a22 * a22, size=window_size, mode="nearest")
    h1 = uniform_filter(a11 * db1 + a12 * db2, size=window_size, mode="nearest")
    h2 = uniform_filter(a12 * db1 + a22 * db2, size=window_size, mode="nearest")

    det = g11 * g22 - g12 * g12
    trace = g11 + g22
    bad = (trace == 0.0) | (det < _SINGULAR_RTOL * trace * trace)
    safe_det = np.where(bad, 1.0, det)

    u = np.where(bad, prior[..., 0], (g22 * h1 - g12 * h2) / safe_det)
    v = np.where(bad, prior[..., 1], (g11 * h2 - g12 * h1) / safe_det)
    return np.stack([u, v], axis=-1)


def farneback_flow(frame1: np.ndarray, frame2: np.ndarray,
                   params: FlowParams | None = None) -> np.ndarray:
    """Dense flow from ``frame1`` to ``frame2`` over a coarse-to-fine pyramid.

    Each pyramid level is produced by bilinear resampling after a sigma-1
    Gaussian pre-blur of the previous level. Estimation starts from zero flow
    at the coarsest level; every level runs ``params.iterations`` rounds of
    :func:`flow_single_scale` and the result is bilinearly upsampled (with
    displacements rescaled by ``1 / pyramid_scale``) to seed the next level.
    """
    if params is None:
        params = FlowParams()
    params.validate()

    f1 = np.asarray(frame1, dtype=np.float64)
    f2 = np.asarray(frame2, dtype=np.float64)
    if f1.shape != f2.shape:
        raise ValueError(f"frame dimensions differ: {f1.shape} vs {f2.shape}")
    if f1.ndim != 2:
        raise ValueError(f"expected 2-D frames, got shape {f1.shape}")

    h, w = f1.shape
    sizes = []
    for level in range(params.levels):
        scale = params.pyramid_scale ** level
        lh = max(1, int(round(h * scale)))
        lw = max(1, int(round(w * scale)))
        sizes.append((lh, lw))
    if min(sizes[-1]) < params.poly_n:
        raise ValueError(
            f"image {f1.shape} too small for {params.levels} pyramid levels "
            f"(coarsest {sizes[-1]} < poly_n {params.poly_n})")

    pyr1 = _build_pyramid(f1, sizes)
    pyr2 = _build_pyramid(f2, sizes)

    flow = np.zeros(sizes[-1] + (2,), dtype=np.float64)
    for level in range(params.levels - 1, -1, -1):
        if level != params.levels - 1:
            flow = _resize_flow(flow, sizes[level]) / params.pyramid_scale
        exp1 = poly_expand(pyr1[level], params.poly_n, params.poly_sigma)
        exp2 = poly_expand(pyr2[level], params.poly_n, params.poly_sigma)
        for _ in range(params.iterations):
            flow = flow_single_scale(exp1, exp2, flow, params.window_size)
    return flow


def _build_pyramid(img: np.ndarray, sizes: list[tuple[int, int]]) -> list[np.ndarray]:
    pyramid = [img]
    for lh, lw in sizes[1:]:
        blurred = gaussian_blur(pyramid[-1], sigma=1.0)
        pyramid.append(resize_bilinear(blurred, lh, lw))
    return pyramid


def _resize_flow(flow: np.ndarray, size: tuple[int, int]) -> np.ndarray:
    lh, lw = size
    return np.stack([resize_bilinear(flow[..., 0], lh, lw),
                     resize_bilinear(flow[..., 1], lh, lw)], axis=-1)


# ---------------------------------------------------------------------------
# Middlebury .flo persistence
# ---------------------------------------------------------------------------

def write_flo(flow: np.ndarray, path) -> None:
    """Write a flow field in the Middlebury ``.flo`` binary format.

    Layout: the tag 202021.25 as a little-endian float32, width and height
    as little-endian int32, then row-major interleaved (u, v) float32 pairs.
    """
    flow = np.asarray(flow)
    if flow.ndim != 3 or flow.shape[2] != 2:
        raise ValueError(f"expected an (H, W, 2) flow field, got shape {flow.shape}")
    h, w = flow.shape[:2]
    with open(path, "wb") as f:
        f.write(struct.pack("<fii", FLO_MAGIC, w, h))
        f.write(flow.astype("<f4").tobytes())


def read_flo(path) -> np.ndarray:
    """Read a Middlebury ``.flo`` file, validating the magic tag."""
    path = Path(path)
    data = path.read_bytes()
    if len(data) < 12:
        raise ValueError(f"truncated .flo file: {path}")
    magic, w, h = struct.unpack("<fii", data[:12])
    if magic != FLO_MAGIC:
        raise ValueError(f"bad .flo magic {magic!r} (expected {FLO_MAGIC}): {path}")
    if w <= 0 or h <= 0:
        raise ValueError(f"invalid .flo dimensions {w}x{h}: {path}")
    expected = 12 + 8 * w * h
    if len(data) != expected:
        raise ValueError(f".flo payload size mismatch ({len(data)} != {expected}): {path}")
    values = np.frombuffer(data, dtype="<f4", offset=12)
    return values.reshape(h, w, 2).astype(np.float64)
