"""Domain-knowledge feature maps: trajectory -> multi-channel 96x96 tensor.

Normalized samples live in the ``[0, 48]`` box; a coordinate ``(x, y)``
lands on pixel ``(row, col) = (y + 24, x + 24)`` so glyphs occupy the
centred 48x48 window of the 96x96 grid.  Pixel centres sit at integer
coordinates.

Channel groups are stacked in a fixed order: bitmap, imaginary strokes,
signature maps, 8-directional maps.
"""
from __future__ import annotations

import json
import math
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import kernels
from .signature import channel_count, channel_names
from .strokes import BOX, StrokeSample, normalize_sample

GRID = 96
OFFSET = (GRID - int(BOX)) // 2
_EPS = 1e-9


class FeatureDomainError(ValueError):
    """Input violates a feature operation's preconditions."""


class FeatureConfigError(ValueError):
    pass


class DeformationError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class FeatureTensor:
    data: np.ndarray
    groups: tuple = ()
    names: tuple = ()

    def __post_init__(self):
        data = np.asarray(self.data)
        if data.ndim != 3:
            raise ValueError("feature tensor data must be (M, H, W)")
        if not np.all(np.isfinite(data)):
            raise ValueError("feature tensor contains non-finite values")
        object.__setattr__(self, "data", data)
        if not self.groups:
            object.__setattr__(self, "groups", (("channels", data.shape[0]),))
        if not self.names:
            object.__setattr__(
                self, "names", tuple(f"c{i}" for i in range(data.shape[0]))
            )

    @property
    def channels(self):
        return self.data.shape[0]

    @property
    def height(self):
        return self.data.shape[1]

    @property
    def width(self):
        return self.data.shape[2]

    def group(self, name):
        start = 0
        for gname, count in self.groups:
            if gname == name:
                return self.data[start:start + count]
            start += count
        raise KeyError(name)


def _stack(parts):
    data = np.concatenate([p.data for p in parts], axis=0)
    groups = tuple(g for p in parts for g in p.groups)
    names = tuple(n for p in parts for n in p.names)
    return FeatureTensor(data, groups, names)


def _check_normalized(sample):
    pts = sample.points
    if pts.min() < -_EPS or pts.max() > BOX + _EPS:
        raise FeatureDomainError(
            f"sample {sample.id} is not normalized: coordinates must lie in [0, {BOX:g}]"
        )


def _segments(stroke):
    return np.concatenate([stroke[:-1], stroke[1:]], axis=1)


def imaginary_segments(sample):
    """Pen-up segments from each stroke's end to the next stroke's start."""
    segs = [
        np.concatenate([a[-1], b[0]])
        for a, b in zip(sample.strokes[:-1], sample.strokes[1:])
    ]
    return np.array(segs, dtype=np.float64).reshape(-1, 4)


def _draw(img, segs, weight=None):
    kernels.splat_segments(img, segs + OFFSET, weight)


def render_bitmap(sample: StrokeSample, include_imaginary=False) -> FeatureTensor:
    """Anti-aliased stroke bitmap, optionally with an imaginary-stroke map.

    Every unit of stroke length deposits one unit of ink; single-point
    strokes deposit one unit at the point.  Values are clamped to ``[0, 1]``
    after accumulation.
    """
    _check_normalized(sample)
    real = np.zeros((GRID, GRID))
    for stroke in sample.strokes:
        if len(stroke) == 1 or not np.any(np.diff(stroke, axis=0)):
            kernels.splat_points(real, stroke[:1, 0] + OFFSET, stroke[:1, 1] + OFFSET, 1.0)
        else:
            _draw(real, _segments(stroke))
    maps = [real]
    groups = [("bitmap", 1)]
    names = ["bitmap"]
    if include_imaginary:
        imag = np.zeros((GRID, GRID))
        _draw(imag, imaginary_segments(sample))
        maps.append(imag)
        groups.append(("imaginary", 1))
        names.append("imaginary")
    data = np.clip(np.stack(maps), 0.0, 1.0)
    return FeatureTensor(data, tuple(groups), tuple(names))


def resample_stroke(stroke, step):
    """Insert points so consecutive points are at most ``step`` apart."""
    if step is None or len(stroke) < 2:
        return stroke
    out = [stroke[:1]]
    for a, b in zip(stroke[:-1], stroke[1:]):
        n = max(1, int(math.ceil(math.hypot(*(b - a)) / step)))
        t = np.arange(1, n + 1, dtype=np.float64)[:, None] / n
        out.append(a + (b - a) * t)
    return np.concatenate(out, axis=0)


def signature_maps(sample: StrokeSample, order: int, window: int = 8, step=1.0) -> FeatureTensor:
    """Sparse maps of windowed path signatures, orders 0 to ``order``.

    Each stroke is resampled to at most ``step`` pixels between points (pass
    ``step=None`` to use the raw points).  For every point, the signature of
    the ``window`` surrounding points is added to the pixel nearest that
    point; channel 0 marks visited pixels with 1.
    """
    if window < 2:
        raise FeatureDomainError("signature window must span at least 2 points")
    n_ch = channel_count(order)
    _check_normalized(sample)
    out = np.zeros((n_ch, GRID, GRID))
    for stroke in sample.strokes:
        pts = resample_stroke(stroke, step)
        rows = np.rint(pts[:, 1]).astype(np.int64) + OFFSET
        cols = np.rint(pts[:, 0]).astype(np.int64) + OFFSET
        out[0, rows, cols] = 1.0
        if order == 0:
            continue
        sig = kernels.window_signatures(pts, window)[:, : n_ch - 1]
        flat = rows * GRID + cols
        for c in range(n_ch - 1):
            out[c + 1].reshape(-1)[:] += np.bincount(
                flat, weights=sig[:, c], minlength=GRID * GRID
            )
    return FeatureTensor(out, ((f"sign{order}", n_ch),), tuple(channel_names(order)))


DIRECTIONS = np.array(
    [[math.cos(k * math.pi / 4), math.sin(k * math.pi / 4)] for k in range(8)]
)
# exact axis and diagonal components keep axis-aligned strokes in one channel
DIRECTIONS[np.abs(DIRECTIONS) < 1e-12] = 0.0


def direction_weights(d):
    """Split displacement ``d`` between its two bracketing directions.

    Returns ``(k, w_k, w_next)`` where direction ``k`` is at ``45 k`` degrees,
    and the nonnegative weights are the parallelogram coefficients rescaled
    to sum to 1.
    """
    dx, dy = float(d[0]), float(d[1])
    theta = math.atan2(dy, dx) % (2 * math.pi)
    k = int(theta // (math.pi / 4)) % 8
    e0 = DIRECTIONS[k]
    e1 = DIRECTIONS[(k + 1) % 8]
    det = e0[0] * e1[1] - e0[1] * e1[0]
    a = (dx * e1[1] - dy * e1[0]) / det
    b = (e0[0] * dy - e0[1] * dx) / det
    a, b = max(a, 0.0), max(b, 0.0)
    total = a + b
    return k, a / total, b / total


def directional_maps(sample: StrokeSample, include_imaginary=False) -> FeatureTensor:
    """Stroke ink split over 8 direction channels at 45 degree spacing.

    A segment's length is shared between the two directions bracketing its
    tangent, so the total mass over all channels is the stroke length.
    """
    _check_normalized(sample)
    segs = [_segments(s) for s in sample.strokes if len(s) > 1]
    if include_imaginary:
        segs.append(imaginary_segments(sample))
    segs = np.concatenate(segs, axis=0) if segs else np.zeros((0, 4))
    d = segs[:, 2:] - segs[:, :2]
    keep = np.any(d != 0.0, axis=1)
    segs, d = segs[keep], d[keep]
    weight = np.zeros((8, len(segs)))
    for i, di in enumerate(d):
        k, wa, wb = direction_weights(di)
        weight[k, i] += wa
        weight[(k + 1) % 8, i] += wb
    out = np.zeros((8, GRID, GRID))
    for c in range(8):
        sel = weight[c] > 0.0
        if sel.any():
            _draw(out[c], segs[sel], weight[c, sel])
    return FeatureTensor(out, (("8dir", 8),), tuple(f"dir{45 * c}" for c in range(8)))


# --------------------------------------------------------------------------
# deformation augmentation


@dataclass(frozen=True)
class DeformationParams:
    """Global affine map followed by a smooth sinusoidal local remap.

    The local map moves ``x`` by ``a sin(2 pi f y / 48 + phase_x)`` and ``y``
    by ``a sin(2 pi f x / 48 + phase_y)``; phases come from ``seed``.  It is
    required that ``local_amplitude * local_frequency < 1``.
    """

    scale_x: float = 1.0
    scale_y: float = 1.0
    rotation: float = 0.0
    translate_x: float = 0.0
    translate_y: float = 0.0
    local_amplitude: float = 0.0
    local_frequency: float = 1.0
    seed: int = 0

    def __post_init__(self):
        if self.scale_x <= 0 or self.scale_y <= 0:
            raise DeformationError("scales must be positive")
        if self.local_amplitude < 0:
            raise DeformationError("local_amplitude must be >= 0")
        if self.local_frequency <= 0:
            raise DeformationError("local_frequency must be positive")
        if self.local_amplitude * self.local_frequency >= 1.0:
            raise DeformationError(
                "local_amplitude * local_frequency must be < 1 for the map to stay bijective"
            )

    @classmethod
    def random(cls, rng, strength=1.0):
        """Draw a moderate random deformation; ``strength`` scales all ranges."""
        return cls(
            scale_x=float(np.exp(rng.uniform(-0.15, 0.15) * strength)),
            scale_y=float(np.exp(rng.uniform(-0.15, 0.15) * strength)),
            rotation=float(rng.uniform(-0.2, 0.2) * strength),
            translate_x=float(rng.uniform(-2, 2) * strength),
            translate_y=float(rng.uniform(-2, 2) * strength),
            local_amplitude=float(rng.uniform(0, 0.9) * min(strength, 1.0)),
            local_frequency=1.0,
            seed=int(rng.integers(2**31)),
        )


def deform(sample: StrokeSample, params: DeformationParams) -> StrokeSample:
    """Apply ``params`` around the box centre and renormalize."""
    base = normalize_sample(sample)
    c, s = math.cos(params.rotation), math.sin(params.rotation)
    mat = np.array([[c, -s], [s, c]]) @ np.diag([params.scale_x, params.scale_y])
    half = BOX / 2.0
    shift = np.array([params.translate_x, params.translate_y])
    if params.local_amplitude > 0:
        phase_x, phase_y = np.random.default_rng(params.seed).uniform(0, 2 * math.pi, 2)
    out = []
    for stroke in base.strokes:
        p = (stroke - half) @ mat.T + half + shift
        if params.local_amplitude > 0:
            w = 2 * math.pi * params.local_frequency / BOX
            a = params.local_amplitude
            x = p[:, 0] + a * np.sin(w * p[:, 1] + phase_x)
            y = p[:, 1] + a * np.sin(w * p[:, 0] + phase_y)
            p = np.stack([x, y], axis=1)
        out.append(p)
    return normalize_sample(base.with_strokes(out))


# --------------------------------------------------------------------------
# channel stacks


@dataclass(frozen=True)
class FeatureConfig:
    """Which channel groups to extract.

    ``signature_order`` 0 disables signature maps.  ``deformation`` is not a
    channel group: it switches on augmentation in the trainer.
    """

    bitmap: bool = True
    imaginary: bool = False
    signature_order: int = 0
    directional: bool = False
    window: int = 8
    directional_imaginary: bool = False
    deformation: bool = False

    def __post_init__(self):
        if not self.bitmap:
            raise FeatureConfigError("the bitmap channel group is required")
        if self.signature_order not in (0, 1, 2, 3):
            raise FeatureConfigError("signature_order must be 0..3")

    @property
    def channels(self):
        m = 1 + int(self.imaginary) + 8 * int(self.directional)
        if self.signature_order:
            m += channel_count(self.signature_order)
        return m

    TOKENS = ("bitmap", "is", "sign1", "sign2", "sign3", "8dir", "dt")

    @classmethod
    def parse(cls, spec: str, **extra):
        """Build from a comma list such as ``"bitmap,sign2,8dir,is"``."""
        tokens = [t.strip().lower() for t in spec.split(",") if t.strip()]
        if not tokens:
            raise FeatureConfigError("empty feature selection")
        bad = [t for t in tokens if t not in cls.TOKENS]
        if bad:
            raise FeatureConfigError(f"unknown feature group(s): {', '.join(bad)}")
        orders = [int(t[4]) for t in tokens if t.startswith("sign")]
        if len(orders) > 1:
            raise FeatureConfigError("select at most one signature truncation")
        return cls(
            bitmap="bitmap" in tokens,
            imaginary="is" in tokens,
            signature_order=orders[0] if orders else 0,
            directional="8dir" in tokens,
            deformation="dt" in tokens,
            **extra,
        )

    def spec(self):
        tokens = ["bitmap"]
        if self.imaginary:
            tokens.append("is")
        if self.signature_order:
            tokens.append(f"sign{self.signature_order}")
        if self.directional:
            tokens.append("8dir")
        if self.deformation:
            tokens.append("dt")
        return ",".join(tokens)


def build_feature_stack(sample: StrokeSample, config: FeatureConfig) -> FeatureTensor:
    """Normalize ``sample`` and stack the selected channel groups."""
    if config is None:
        raise FeatureConfigError("empty feature selection")
    s = normalize_sample(sample)
    parts = [render_bitmap(s, include_imaginary=config.imaginary)]
    if config.signature_order:
        parts.append(signature_maps(s, config.signature_order, config.window))
    if config.directional:
        parts.append(directional_maps(s, include_imaginary=config.directional_imaginary))
    return _stack(parts)


# --------------------------------------------------------------------------
# tensor files

MAGIC = b"DSFT"
_HEADER = struct.Struct("<4sIII")


def write_tensor(tensor: FeatureTensor, path) -> None:
    """Binary tensor plus a ``.json`` sidecar naming the channel groups."""
    path = Path(path)
    m, h, w = tensor.data.shape
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(MAGIC, m, h, w))
        fh.write(np.ascontiguousarray(tensor.data, dtype="<f4").tobytes())
    sidecar = {
        "channels": m,
        "height": h,
        "width": w,
        "groups": [{"name": n, "channels": c} for n, c in tensor.groups],
        "channel_names": list(tensor.names),
    }
    path.with_suffix(path.suffix + ".json").write_text(json.dumps(sidecar, indent=2) + "\n")


def read_tensor(path) -> FeatureTensor:
    path = Path(path)
    raw = path.read_bytes()
    if len(raw) < _HEADER.size:
        raise ValueError(f"{path}: truncated header")
    magic, m, h, w = _HEADER.unpack_from(raw)
    if magic != MAGIC:
        raise ValueError(f"{path}: bad magic {magic!r}")
    expected = _HEADER.size + 4 * m * h * w
    if len(raw) != expected:
        raise ValueError(f"{path}: expected {expected} bytes, found {len(raw)}")
    data = np.frombuffer(raw, dtype="<f4", offset=_HEADER.size).reshape(m, h, w)
    groups, names = (), ()
    sidecar = path.with_suffix(path.suffix + ".json")
    if sidecar.exists():
        meta = json.loads(sidecar.read_text())
        groups = tuple((g["name"], g["channels"]) for g in meta["groups"])
        names = tuple(meta["channel_names"])
    return FeatureTensor(data.astype(np.float64), groups, names)
