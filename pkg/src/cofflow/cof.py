"""Combined optical-flow feature images.

The feature image for a keyframe triplet (onset, apex, offset) is built by
computing dense flow for each motion phase, reducing both flow fields to
per-pixel magnitudes, min-max normalizing each, summing, re-normalizing, and
rendering the result as an 8-bit RGB image. The default rendering replicates
the gray level into all three channels; a fixed 256-entry perceptual
colormap is available for figure-style output.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .flow import FlowParams, farneback_flow
from .imgcore import save_image, to_uint8

# 256 x 3 perceptually uniform colormap (viridis), stored as packed RGB hex.
_COLORMAP_HEX = (
    "44015444025645045745055946075a46085c460a5d460b5e470d60470e61471063471164471365481467481668481769"
    "48186a481a6c481b6d481c6e481d6f481f70482071482173482374482475482576482677482878482979472a7a472c7a"
    "472d7b472e7c472f7d46307e46327e46337f463480453581453781453882443983443a83443b84433d84433e85423f85"
    "4240864241864142874144874045884046883f47883f48893e49893e4a893e4c8a3d4d8a3d4e8a3c4f8a3c508b3b518b"
    "3b528b3a538b3a548c39558c39568c38588c38598c375a8c375b8d365c8d365d8d355e8d355f8d34608d34618d33628d"
    "33638d32648e32658e31668e31678e31688e30698e306a8e2f6b8e2f6c8e2e6d8e2e6e8e2e6f8e2d708e2d718e2c718e"
    "2c728e2c738e2b748e2b758e2a768e2a778e2a788e29798e297a8e297b8e287c8e287d8e277e8e277f8e27808e26818e"
    "26828e26828e25838e25848e25858e24868e24878e23888e23898e238a8d228b8d228c8d228d8d218e8d218f8d21908d"
    "21918c20928c20928c20938c1f948c1f958b1f968b1f978b1f988b1f998a1f9a8a1e9b8a1e9c891e9d891f9e891f9f88"
    "1fa0881fa1881fa1871fa28720a38620a48621a58521a68522a78522a88423a98324aa8325ab8225ac8226ad8127ad81"
    "28ae8029af7f2ab07f2cb17e2db27d2eb37c2fb47c31b57b32b67a34b67935b77937b87838b9773aba763bbb753dbc74"
    "3fbc7340bd7242be7144bf7046c06f48c16e4ac16d4cc26c4ec36b50c46a52c56954c56856c66758c7655ac8645cc863"
    "5ec96260ca6063cb5f65cb5e67cc5c69cd5b6ccd5a6ece5870cf5773d05675d05477d1537ad1517cd2507fd34e81d34d"
    "84d44b86d54989d5488bd6468ed64590d74393d74195d84098d83e9bd93c9dd93ba0da39a2da37a5db36a8db34aadc32"
    "addc30b0dd2fb2dd2db5de2bb8de29bade28bddf26c0df25c2df23c5e021c8e020cae11fcde11dd0e11cd2e21bd5e21a"
    "d8e219dae319dde318dfe318e2e418e5e419e7e419eae51aece51befe51cf1e51df4e61ef6e620f8e621fbe723fde725"
)
COLORMAP = np.frombuffer(bytes.fromhex(_COLORMAP_HEX), dtype=np.uint8).reshape(256, 3)

MODE_GRAY = "gray"
MODE_COLORMAP = "colormap"


@dataclass
class CofImage:
    """Rendered combined-flow image plus provenance metadata."""

    rgb: np.ndarray
    sample_id: str = ""
    params: FlowParams = field(default_factory=FlowParams)
    mode: str = MODE_GRAY


def magnitude(flow: np.ndarray) -> np.ndarray:
    """Per-pixel Euclidean norm ``sqrt(u^2 + v^2)`` of a flow field."""
    flow = np.asarray(flow, dtype=np.float64)
    if flow.ndim != 3 or flow.shape[2] != 2:
        raise ValueError(f"expected an (H, W, 2) flow field, got shape {flow.shape}")
    return np.hypot(flow[..., 0], flow[..., 1])


def normalize(values: np.ndarray) -> np.ndarray:
    """Min-max rescale to ``[0, 1]``; a constant map collapses to all zeros."""
    values = np.asarray(values, dtype=np.float64)
    lo = values.min()
    hi = values.max()
    if hi == lo:
        return np.zeros_like(values)
    return (values - lo) / (hi - lo)


def combine_magnitudes(m1: np.ndarray, m2: np.ndarray) -> np.ndarray:
    """Sum two normalized magnitude maps and re-normalize the result."""
    m1 = np.asarray(m1, dtype=np.float64)
    m2 = np.asarray(m2, dtype=np.float64)
    if m1.shape != m2.shape:
        raise ValueError(f"magnitude map shapes differ: {m1.shape} vs {m2.shape}")
    return normalize(m1 + m2)


def to_rgb(values: np.ndarray, colormap: bool = False, sample_id: str = "",
           params: FlowParams | None = None) -> CofImage:
    """Render a normalized map as an 8-bit RGB image.

    Default mode replicates the quantized gray level into all channels so
    that only motion magnitude is encoded; ``colormap=True`` instead looks
    the level up in the fixed 256-entry colormap.
    """
    values = np.asarray(values, dtype=np.float64)
    if values.ndim != 2:
        raise ValueError(f"expected a 2-D map, got shape {values.shape}")
    if not np.all(np.isfinite(values)) or values.min() < 0.0 or values.max() > 1.0:
        raise ValueError("input map must be normalized to [0, 1]")
    levels = to_uint8(values)
    if colormap:
        rgb = COLORMAP[levels]
        mode = MODE_COLORMAP
    else:
        rgb = np.repeat(levels[..., None], 3, axis=-1)
        mode = MODE_GRAY
    return CofImage(rgb=rgb, sample_id=sample_id,
                    params=params if params is not None else FlowParams(), mode=mode)


def compute_cof(onset: np.ndarray, apex: np.ndarray, offset: np.ndarray,
                params: FlowParams | None = None, colormap: bool = False,
                sample_id: str = "") -> CofImage:
    """Fuse the onset-to-apex and apex-to-offset motion into one feature image.

    Stages, in order: dense flow for each phase, per-pixel magnitudes,
    min-max normalization of each magnitude map, element-wise sum with
    re-normalization, RGB rendering.
    """
    if params is None:
        params = FlowParams()
    onset = np.asarray(onset, dtype=np.float64)
    apex = np.asarray(apex, dtype=np.float64)
    offset = np.asarray(offset, dtype=np.float64)
    if not (onset.shape == apex.shape == offset.shape):
        raise ValueError(
            f"triplet frames must be co-dimensioned, got "
            f"{onset.shape}, {apex.shape}, {offset.shape}")

    flow1 = farneback_flow(onset, apex, params)
    flow2 = farneback_flow(apex, offset, params)
    norm1 = normalize(magnitude(flow1))
    norm2 = normalize(magnitude(flow2))
    combined = combine_magnitudes(norm1, norm2)
    return to_rgb(combined, colormap=colormap, sample_id=sample_id, params=params)


def save_cof(cof: CofImage, path, extra: dict[str, str] | None = None) -> None:
    """Write the feature image as PNG plus a ``.meta`` key-value sidecar."""
    from . import __version__

    path = Path(path)
    save_image(cof.rgb, path)
    p = cof.params
    pairs = [
        ("sample_id", cof.sample_id),
        ("mode", cof.mode),
        ("pyramid_scale", repr(p.pyramid_scale)),
        ("levels", str(p.levels)),
        ("window_size", str(p.window_size)),
        ("iterations", str(p.iterations)),
        ("poly_n", str(p.poly_n)),
        ("poly_sigma", repr(p.poly_sigma)),
        ("version", __version__),
    ]
    for key, value in (extra or {}).items():
        pairs.append((key, str(value)))
    text = "".join(f"{k}={v}\n" for k, v in pairs)
    path.with_suffix(".meta").write_text(text, encoding="utf-8")


def read_cof_meta(path) -> dict[str, str]:
    """Parse a ``.meta`` sidecar back into a key-value dict."""
    meta: dict[str, str] = {}
    for line in Path(path).read_text(encoding="utf-8").splitlines():
        if not line.strip():
            continue
        key, _, value = line.partition("=")
        meta[key] = value
    return meta
