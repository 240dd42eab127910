"""Target signals: 1D sinusoid mixtures, PPM/PGM images and frame-directory videos.

Coordinates sit on pixel centers inside [-1, 1] and values are mapped
linearly from [0, 255] (or the raw 1D range) into [-1, 1].
"""
from __future__ import annotations

import os
import re
from dataclasses import dataclass, field

import numpy as np

from snf.tensor_core import Rng

DEFAULT_FREQUENCIES = tuple(range(5, 55, 5))


class PnmError(ValueError):
    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} (at byte {offset})")
        self.offset = offset


class FrameFormatError(ValueError):
    pass


@dataclass
class SampledSignal:
    coords: np.ndarray  # N x n, inside [-1, 1]
    values: np.ndarray  # N x c, inside [-1, 1]
    grid_shape: tuple[int, ...]  # (N,), (H, W) or (T, H, W)
    meta: dict = field(default_factory=dict)

    @property
    def channels(self) -> int:
        return self.values.shape[1]

    def __len__(self) -> int:
        return self.coords.shape[0]

    def subset(self, mask) -> "SampledSignal":
        mask = np.asarray(mask, dtype=bool)
        return SampledSignal(self.coords[mask], self.values[mask], (int(mask.sum()),), dict(self.meta))


def centers(n: int) -> np.ndarray:
    """Pixel-center coordinates of an ``n``-cell grid on [-1, 1]."""
    return -1.0 + (2.0 * np.arange(n) + 1.0) / n


def to_unit(values) -> np.ndarray:
    """[-1, 1] network units -> [0, 1] display units."""
    return (np.asarray(values, dtype=np.float64) + 1.0) / 2.0


def from_bytes(pixels) -> np.ndarray:
    return np.asarray(pixels, dtype=np.float64) / 127.5 - 1.0


def quantize(unit) -> np.ndarray:
    """[0, 1] display units -> uint8 with rounding and clipping."""
    return np.clip(np.rint(np.asarray(unit) * 255.0), 0, 255).astype(np.uint8)


# --- sinusoid ---------------------------------------------------------------

@dataclass
class SinusoidSpec:
    frequencies: tuple[float, ...] = DEFAULT_FREQUENCIES
    phases: tuple[float, ...] | None = None  # None: drawn from U(0, 2pi)
    samples: int = 512
    sampling: str = "grid"  # "grid" (regular on [0, 1)) or "random" (uniform on [0, 1])

    def __post_init__(self):
        if not self.frequencies:
            raise ValueError("sinusoid needs at least one frequency")
        if self.phases is not None and len(self.phases) != len(self.frequencies):
            raise ValueError("frequencies and phases must have equal length")
        if self.samples < 2:
            raise ValueError("need at least 2 samples")
        if self.sampling not in ("grid", "random"):
            raise ValueError(f"unknown sampling {self.sampling!r}")


def sinusoid_raw(x, frequencies, phases) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    return sum(np.sin(2 * np.pi * k * x + p) for k, p in zip(frequencies, phases))


def make_sinusoid_1d(spec: SinusoidSpec, rng: Rng) -> SampledSignal:
    """Sum of unit sinusoids sampled on [0, 1]; network values are the raw sum divided by the term count."""
    freqs = tuple(float(k) for k in spec.frequencies)
    if spec.phases is None:
        phases = tuple(rng.uniform(0.0, 2 * np.pi, len(freqs)))
    else:
        phases = tuple(float(p) for p in spec.phases)
    if spec.sampling == "grid":
        x = np.arange(spec.samples) / spec.samples
    else:
        x = np.sort(rng.uniform(0.0, 1.0, spec.samples))
    raw = sinusoid_raw(x, freqs, phases)
    scale = float(len(freqs))
    return SampledSignal(
        coords=(2.0 * x - 1.0)[:, None],
        values=(raw / scale)[:, None],
        grid_shape=(spec.samples,),
        meta={"kind": "sinusoid", "x": x, "raw": raw, "scale": scale,
              "frequencies": freqs, "phases": phases},
    )


# --- PNM --------------------------------------------------------------------

_WS = b" \t\r\n\x0b\x0c"


def _header_token(data: bytes, pos: int) -> tuple[bytes, int]:
    while pos < len(data):
        if data[pos:pos + 1] == b"#":
            end = data.find(b"\n", pos)
            pos = len(data) if end < 0 else end + 1
        elif data[pos] in _WS:
            pos += 1
        else:
            break
    start = pos
    while pos < len(data) and data[pos] not in _WS and data[pos:pos + 1] != b"#":
        pos += 1
    if start == pos:
        raise PnmError("unexpected end of header", start)
    return data[start:pos], pos


def decode_pnm(data: bytes) -> np.ndarray:
    """Parse binary 8-bit PGM (P5) or PPM (P6) bytes into an ``H x W`` or ``H x W x 3`` uint8 array."""
    if data[:2] not in (b"P5", b"P6"):
        raise PnmError(f"unsupported magic {data[:2]!r}, expected P5 or P6", 0)
    channels = 1 if data[:2] == b"P5" else 3
    pos = 2
    fields = []
    for name in ("width", "height", "maxval"):
        tok_start = pos
        tok, pos = _header_token(data, pos)
        if not tok.isdigit():
            raise PnmError(f"bad {name} {tok!r}", tok_start)
        fields.append(int(tok))
    width, height, maxval = fields
    if width < 1 or height < 1:
        raise PnmError("image dimensions must be positive", pos)
    if not 1 <= maxval <= 255:
        raise PnmError(f"only 8-bit images are supported (maxval {maxval})", pos)
    if pos >= len(data) or data[pos] not in _WS:
        raise PnmError("missing whitespace after maxval", pos)
    pos += 1
    need = width * height * channels
    if len(data) - pos < need:
        raise PnmError(f"truncated pixel data: need {need} bytes, have {len(data) - pos}", len(data))
    px = np.frombuffer(data, dtype=np.uint8, count=need, offset=pos)
    if maxval != 255:
        px = np.rint(px.astype(np.float64) * 255.0 / maxval).astype(np.uint8)
    shape = (height, width) if channels == 1 else (height, width, 3)
    return px.reshape(shape).copy()


def encode_pnm(pixels) -> bytes:
    px = np.asarray(pixels)
    if px.dtype != np.uint8:
        raise ValueError("encode_pnm expects uint8 pixels")
    if px.ndim == 3 and px.shape[2] == 1:
        px = px[..., 0]
    if px.ndim == 2:
        magic = b"P5"
    elif px.ndim == 3 and px.shape[2] == 3:
        magic = b"P6"
    else:
        raise ValueError(f"cannot encode array of shape {px.shape}")
    h, w = px.shape[:2]
    return magic + f"\n{w} {h}\n255\n".encode() + px.tobytes()


def read_pnm(path) -> np.ndarray:
    with open(path, "rb") as fh:
        return decode_pnm(fh.read())


def write_pnm(path, pixels) -> None:
    with open(path, "wb") as fh:
        fh.write(encode_pnm(pixels))


# --- images -----------------------------------------------------------------

def image_grid(h: int, w: int) -> np.ndarray:
    """``(x, y)`` coordinates of every pixel center in row-major order."""
    ys, xs = np.meshgrid(centers(h), centers(w), indexing="ij")
    return np.stack([xs.ravel(), ys.ravel()], axis=1)


def image_signal(pixels) -> SampledSignal:
    """Wrap a uint8 ``H x W`` / ``H x W x C`` array as a signal."""
    px = np.asarray(pixels)
    if px.ndim == 2:
        px = px[..., None]
    h, w, c = px.shape
    return SampledSignal(image_grid(h, w), from_bytes(px.reshape(-1, c)), (h, w),
                         {"kind": "image"})


def load_image_grid(path) -> SampledSignal:
    sig = image_signal(read_pnm(path))
    sig.meta["path"] = str(path)
    return sig


def values_to_image(values, grid_shape) -> np.ndarray:
    """Network outputs (N x c, [-1, 1] units) -> ``grid_shape + (c,)`` array in [0, 1] units."""
    v = np.asarray(values, dtype=np.float64)
    return to_unit(v).reshape(tuple(grid_shape) + (v.shape[1],))


def strip_bounds(width: int, num_strips: int) -> list[tuple[int, int]]:
    """Column ranges of ``num_strips`` near-equal vertical strips, left to right."""
    edges = [round(i * width / num_strips) for i in range(num_strips + 1)]
    return list(zip(edges[:-1], edges[1:]))


def strip_sequence(num_strips: int, order: str = "left") -> list[int]:
    """Order in which strips (0-based, left to right) are added.

    ``left`` grows rightwards from the left edge; ``center`` starts at the
    middle strip and alternates outwards, left side first on ties.
    """
    if order == "left":
        return list(range(num_strips))
    if order == "center":
        mid = (num_strips - 1) / 2.0
        return sorted(range(num_strips), key=lambda i: (abs(i - mid), i))
    raise ValueError(f"unknown strip order {order!r}")


def partition_spatial(signal: SampledSignal, num_strips: int, k: int, order: str = "left") -> np.ndarray:
    """Mask of pixels in the first ``k`` strips of ``num_strips`` equal vertical strips."""
    if len(signal.grid_shape) != 2:
        raise ValueError("spatial partitioning needs a 2D image signal")
    if not 1 <= k <= num_strips:
        raise ValueError(f"strip index must be in [1, {num_strips}], got {k}")
    h, w = signal.grid_shape
    bounds = strip_bounds(w, num_strips)
    keep = np.zeros(w, dtype=bool)
    for i in strip_sequence(num_strips, order)[:k]:
        lo, hi = bounds[i]
        keep[lo:hi] = True
    return np.tile(keep, h)


# --- video ------------------------------------------------------------------

_FRAME_RE = re.compile(r"^\d+\.(ppm|pgm)$", re.IGNORECASE)


def list_frames(frame_dir) -> list[str]:
    names = sorted(n for n in os.listdir(frame_dir) if _FRAME_RE.match(n))
    if not names:
        raise FrameFormatError(f"no numbered .ppm/.pgm frames in {frame_dir}")
    return [os.path.join(frame_dir, n) for n in names]


def video_signal(frames, frame_range=None, total_frames: int | None = None) -> SampledSignal:
    """Frames ``F x H x W (x C)`` uint8 -> signal over ``(t, x, y)``.

    ``t`` is the pixel-center coordinate of the frame index within
    ``total_frames`` (default: all given frames), so sub-ranges nest.
    """
    frames = np.asarray(frames)
    if frames.ndim == 3:
        frames = frames[..., None]
    total = frames.shape[0] if total_frames is None else total_frames
    lo, hi = (0, frames.shape[0]) if frame_range is None else frame_range
    if not 0 <= lo < hi <= min(total, frames.shape[0]):
        raise ValueError(f"bad frame range {(lo, hi)} for {frames.shape[0]} frames")
    _, h, w, c = frames.shape
    t = centers(total)[lo:hi]
    xy = image_grid(h, w)
    coords = np.concatenate(
        [np.concatenate([np.full((h * w, 1), tv), xy], axis=1) for tv in t], axis=0)
    values = from_bytes(frames[lo:hi].reshape(-1, c))
    return SampledSignal(coords, values, (hi - lo, h, w),
                         {"kind": "video", "frame_range": (lo, hi), "total_frames": total})


def load_video_grid(frame_dir, frame_range=None, total_frames: int | None = None) -> SampledSignal:
    paths = list_frames(frame_dir)
    frames = [read_pnm(p) for p in paths]
    shapes = {f.shape for f in frames}
    if len(shapes) != 1:
        raise FrameFormatError(f"inconsistent frame sizes in {frame_dir}: {sorted(shapes)}")
    return video_signal(np.stack(frames), frame_range, total_frames)


def write_frames(frame_dir, frames) -> list[str]:
    os.makedirs(frame_dir, exist_ok=True)
    width = max(3, len(str(len(frames) - 1)))
    paths = []
    for i, f in enumerate(frames):
        ext = "pgm" if np.asarray(f).ndim == 2 else "ppm"
        p = os.path.join(frame_dir, f"{i:0{width}d}.{ext}")
        write_pnm(p, f)
        paths.append(p)
    return paths


def moving_square(frames: int = 8, size: int = 32, square: int = 8) -> np.ndarray:
    """Synthetic clip: a bright square sliding diagonally over a smooth colored background."""
    yy, xx = np.mgrid[0:size, 0:size] / (size - 1)
    bg = np.stack([0.25 + 0.2 * xx, 0.3 + 0.2 * yy, 0.45 - 0.15 * xx], axis=-1)
    out = np.empty((frames, size, size, 3), dtype=np.uint8)
    step = (size - square) / max(frames - 1, 1)
    for f in range(frames):
        img = bg.copy()
        o = int(round(f * step))
        img[o:o + square, o:o + square] = (0.9, 0.8, 0.2)
        out[f] = quantize(img)
    return out
