"""Image, mask, and probability-grid containers with file I/O and preprocessing.

Grayscale only: angiography frames are single-channel, and color inputs are
collapsed with the usual 0.299/0.587/0.114 luma weights on load. All lengths
are in pixel units; ``pixel_scale`` stays 1.0 unless a calibration is known.

File formats:

* images and masks: 8-bit grayscale PNG (masks restricted to {0, 255})
* probability grids: ``VPRB1`` binary files (magic + ASCII dims + row-major
  little-endian float32), round-tripping bit-exactly
"""
from __future__ import annotations

import io
from dataclasses import dataclass, field

import numpy as np
from PIL import Image

VPRB_MAGIC = b"VPRB1\n"


@dataclass(frozen=True)
class GrayImage:
    """Single-channel image; values in [0, 255], float32, shape (height, width)."""

    pixels: np.ndarray
    pixel_scale: float = 1.0

    def __post_init__(self):
        px = np.asarray(self.pixels, dtype=np.float32)
        if px.ndim != 2 or px.shape[0] < 1 or px.shape[1] < 1:
            raise ValueError(f"image must be 2-D and non-empty, got shape {px.shape}")
        if px.size and (px.min() < 0 or px.max() > 255):
            raise ValueError("pixel values must lie in [0, 255]")
        px = np.ascontiguousarray(px)
        px.setflags(write=False)
        object.__setattr__(self, "pixels", px)

    @property
    def width(self) -> int:
        return self.pixels.shape[1]

    @property
    def height(self) -> int:
        return self.pixels.shape[0]


@dataclass(frozen=True)
class Mask:
    """Binary vessel map; values {0, 1}, uint8, shape (height, width)."""

    bits: np.ndarray

    def __post_init__(self):
        b = np.asarray(self.bits)
        if b.ndim != 2 or b.shape[0] < 1 or b.shape[1] < 1:
            raise ValueError(f"mask must be 2-D and non-empty, got shape {b.shape}")
        if not np.isin(b, (0, 1)).all():
            raise ValueError("mask values must be strictly binary (0 or 1)")
        b = np.ascontiguousarray(b.astype(np.uint8))
        b.setflags(write=False)
        object.__setattr__(self, "bits", b)

    @property
    def width(self) -> int:
        return self.bits.shape[1]

    @property
    def height(self) -> int:
        return self.bits.shape[0]

    def count(self) -> int:
        return int(self.bits.sum())


@dataclass(frozen=True)
class ProbabilityGrid:
    """Per-pixel foreground probability; values in [0, 1], float32."""

    values: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.values, dtype=np.float32)
        if v.ndim != 2 or v.shape[0] < 1 or v.shape[1] < 1:
            raise ValueError(f"grid must be 2-D and non-empty, got shape {v.shape}")
        if v.size and (v.min() < 0.0 or v.max() > 1.0):
            raise ValueError("probability out of range [0, 1]")
        v = np.ascontiguousarray(v)
        v.setflags(write=False)
        object.__setattr__(self, "values", v)

    @property
    def width(self) -> int:
        return self.values.shape[1]

    @property
    def height(self) -> int:
        return self.values.shape[0]


@dataclass(frozen=True)
class ClaheParams:
    """Adaptive-equalization settings; the source papers never pin these down."""

    tiles_x: int = 8
    tiles_y: int = 8
    clip_factor: float = 2.0


def resize(img: GrayImage, target_w: int, target_h: int) -> GrayImage:
    """Bilinear resize to exactly (target_w, target_h).

    Uses the half-pixel-center convention (output pixel centers map to
    ``(i + 0.5) * scale - 0.5`` in source coordinates) with edge clamping,
    so identity resizes are bit-exact and constant images stay constant.
    ``pixel_scale`` is rescaled by the width ratio.
    """
    if target_w <= 0 or target_h <= 0:
        raise ValueError("target dimensions must be positive")
    src = img.pixels.astype(np.float64)
    h, w = src.shape
    if (target_w, target_h) == (w, h):
        return GrayImage(img.pixels.copy(), img.pixel_scale)

    sx = w / target_w
    sy = h / target_h
    xs = (np.arange(target_w) + 0.5) * sx - 0.5
    ys = (np.arange(target_h) + 0.5) * sy - 0.5
    x0 = np.clip(np.floor(xs).astype(int), 0, w - 1)
    y0 = np.clip(np.floor(ys).astype(int), 0, h - 1)
    x1 = np.minimum(x0 + 1, w - 1)
    y1 = np.minimum(y0 + 1, h - 1)
    fx = np.clip(xs - x0, 0.0, 1.0)
    fy = np.clip(ys - y0, 0.0, 1.0)

    top = src[y0[:, None], x0] * (1 - fx) + src[y0[:, None], x1] * fx
    bot = src[y1[:, None], x0] * (1 - fx) + src[y1[:, None], x1] * fx
    out = top * (1 - fy[:, None]) + bot * fy[:, None]
    return GrayImage(np.clip(out, 0, 255).astype(np.float32),
                     img.pixel_scale * (w / target_w))


def _tile_lut(tile: np.ndarray, clip_factor: float) -> np.ndarray:
    """Clipped-histogram equalization LUT for one tile (256 levels)."""
    hist = np.bincount(tile.ravel(), minlength=256).astype(np.int64)
    area = tile.size
    limit = max(1, int(clip_factor * area / 256.0))
    excess = int(np.maximum(hist - limit, 0).sum())
    hist = np.minimum(hist, limit)
    # redistribute clipped mass evenly, then sweep any remainder
    hist += excess // 256
    rem = excess % 256
    if rem:
        step = max(1, 256 // rem)
        idx = np.arange(0, 256, step)[:rem]
        hist[idx] += 1
    cdf = np.cumsum(hist)
    return np.rint(cdf * (255.0 / area)).astype(np.float64)


def enhance_contrast(img: GrayImage, params: ClaheParams = ClaheParams()) -> GrayImage:
    """Contrast-limited adaptive histogram equalization.

    The image is divided into a ``tiles_x`` x ``tiles_y`` grid; each tile's
    histogram is clipped at ``clip_factor`` times the mean bin count before
    equalization, and per-pixel output bilinearly blends the four surrounding
    tile mappings. This is a stand-in enhancement: the imaging papers using
    contrast-enhanced angiograms do not state their method.
    """
    orig = np.clip(np.rint(img.pixels), 0, 255).astype(np.uint8)
    oh, ow = orig.shape
    ty, tx = params.tiles_y, params.tiles_x
    # pad to a tile-aligned size so every tile has identical area (keeps the
    # mapping constant-preserving when dims do not divide evenly)
    h = -(-oh // ty) * ty
    w = -(-ow // tx) * tx
    src = np.pad(orig, ((0, h - oh), (0, w - ow)), mode="edge")
    sh, sw = h // ty, w // tx
    luts = np.empty((ty, tx, 256), dtype=np.float64)
    for r in range(ty):
        for c in range(tx):
            luts[r, c] = _tile_lut(src[r * sh:(r + 1) * sh, c * sw:(c + 1) * sw],
                                   params.clip_factor)
    centers_y = (np.arange(ty) + 0.5) * sh - 0.5
    centers_x = (np.arange(tx) + 0.5) * sw - 0.5

    yy = np.arange(h, dtype=np.float64)
    xx = np.arange(w, dtype=np.float64)
    r0 = np.clip(np.searchsorted(centers_y, yy) - 1, 0, ty - 2) if ty > 1 else np.zeros(h, int)
    c0 = np.clip(np.searchsorted(centers_x, xx) - 1, 0, tx - 2) if tx > 1 else np.zeros(w, int)
    r1 = np.minimum(r0 + 1, ty - 1)
    c1 = np.minimum(c0 + 1, tx - 1)
    wy = np.zeros(h) if ty == 1 else np.clip(
        (yy - centers_y[r0]) / np.maximum(centers_y[r1] - centers_y[r0], 1e-12), 0.0, 1.0)
    wx = np.zeros(w) if tx == 1 else np.clip(
        (xx - centers_x[c0]) / np.maximum(centers_x[c1] - centers_x[c0], 1e-12), 0.0, 1.0)

    v = src.astype(int)
    out = np.zeros((h, w), dtype=np.float64)
    for dr, dc, wgt in (
        (r0, c0, (1 - wy)[:, None] * (1 - wx)[None, :]),
        (r0, c1, (1 - wy)[:, None] * wx[None, :]),
        (r1, c0, wy[:, None] * (1 - wx)[None, :]),
        (r1, c1, wy[:, None] * wx[None, :]),
    ):
        out += wgt * luts[dr[:, None], dc[None, :], v]
    out = out[:oh, :ow]
    return GrayImage(np.clip(np.rint(out), 0, 255).astype(np.float32), img.pixel_scale)


def read_image(path) -> GrayImage:
    """Load a PNG (or any PIL-readable file) as a grayscale image."""
    with Image.open(path) as im:
        arr = np.asarray(im.convert("L"))
    return GrayImage(arr.astype(np.float32))


def write_image(img: GrayImage, path) -> None:
    arr = np.clip(np.rint(img.pixels), 0, 255).astype(np.uint8)
    Image.fromarray(arr, mode="L").save(path, format="PNG")


def image_to_png_bytes(img: GrayImage) -> bytes:
    buf = io.BytesIO()
    arr = np.clip(np.rint(img.pixels), 0, 255).astype(np.uint8)
    Image.fromarray(arr, mode="L").save(buf, format="PNG")
    return buf.getvalue()


def read_mask(path) -> Mask:
    """Load a binary mask PNG; any level other than 0/255 is rejected."""
    with Image.open(path) as im:
        arr = np.asarray(im.convert("L"))
    return _mask_from_levels(arr)


def mask_from_png_bytes(data: bytes) -> Mask:
    with Image.open(io.BytesIO(data)) as im:
        arr = np.asarray(im.convert("L"))
    return _mask_from_levels(arr)


def _mask_from_levels(arr: np.ndarray) -> Mask:
    bad = np.setdiff1d(np.unique(arr), [0, 255])
    if bad.size:
        raise ValueError(f"non-binary mask: found level(s) {bad.tolist()}")
    return Mask((arr == 255).astype(np.uint8))


def write_mask(mask: Mask, path) -> None:
    Image.fromarray(mask.bits * np.uint8(255), mode="L").save(path, format="PNG")


def mask_to_png_bytes(mask: Mask) -> bytes:
    buf = io.BytesIO()
    Image.fromarray(mask.bits * np.uint8(255), mode="L").save(buf, format="PNG")
    return buf.getvalue()


def write_probability(grid: ProbabilityGrid, path) -> None:
    with open(path, "wb") as f:
        f.write(probability_to_bytes(grid))


def probability_to_bytes(grid: ProbabilityGrid) -> bytes:
    header = VPRB_MAGIC + f"{grid.width} {grid.height}\n".encode("ascii")
    return header + grid.values.astype("<f4").tobytes()


def read_probability(path) -> ProbabilityGrid:
    with open(path, "rb") as f:
        return probability_from_bytes(f.read())


def probability_from_bytes(data: bytes) -> ProbabilityGrid:
    if not data.startswith(VPRB_MAGIC):
        raise ValueError("malformed header: bad magic, expected VPRB1")
    rest = data[len(VPRB_MAGIC):]
    nl = rest.find(b"\n")
    if nl < 0:
        raise ValueError("malformed header: missing dimension line")
    try:
        w_s, h_s = rest[:nl].split()
        w, h = int(w_s), int(h_s)
    except ValueError:
        raise ValueError("malformed header: dimension line must be 'width height'")
    if w <= 0 or h <= 0 or w * h > 2**28:
        raise ValueError(f"dimension overflow or non-positive dims: {w}x{h}")
    payload = rest[nl + 1:]
    if len(payload) != 4 * w * h:
        raise ValueError(f"payload size {len(payload)} does not match {w}x{h} float32")
    vals = np.frombuffer(payload, dtype="<f4").reshape(h, w)
    if vals.size and (np.nanmin(vals) < 0.0 or np.nanmax(vals) > 1.0 or np.isnan(vals).any()):
        raise ValueError("probability out of range [0, 1]")
    return ProbabilityGrid(vals.copy())
