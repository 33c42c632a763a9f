"""Online trajectory data model, file I/O and a synthetic glyph generator.

A stroke is an ``(n, 2)`` float64 array of ``(x, y)`` points in pen order.
A sample is a labelled tuple of strokes.  Coordinates are unitless; nothing
is resampled at ingestion.

File formats
------------
JSONL
    Optional first line ``{"k": K}``.  Then one object per sample::

        {"id": 3, "label": 1, "strokes": [[[x, y], ...], ...], "noisy": false}

    ``id`` and ``noisy`` are optional.
CSV
    Header ``id,label,stroke_index,point_index,x,y``, one row per point.
    The class count and noise mask are not stored.
"""
from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

#: side of the normalization box, in bitmap pixels
BOX = 48.0

CSV_COLUMNS = ["id", "label", "stroke_index", "point_index", "x", "y"]


class DatasetError(ValueError):
    """Malformed dataset file or inconsistent dataset contents."""


class DegenerateGeometryError(ValueError):
    """Every point of the sample is identical; it cannot be normalized."""


def as_stroke(points) -> np.ndarray:
    arr = np.array(points, dtype=np.float64).reshape(-1, 2)
    if arr.shape[0] < 1:
        raise ValueError("a stroke needs at least one point")
    if not np.all(np.isfinite(arr)):
        raise ValueError("stroke contains non-finite coordinates")
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True, eq=False)
class StrokeSample:
    id: int
    label: int
    strokes: tuple

    def __post_init__(self):
        strokes = tuple(as_stroke(s) for s in self.strokes)
        if not strokes:
            raise ValueError(f"sample {self.id} has no strokes")
        object.__setattr__(self, "strokes", strokes)

    def __eq__(self, other):
        if not isinstance(other, StrokeSample):
            return NotImplemented
        return (
            self.id == other.id
            and self.label == other.label
            and len(self.strokes) == len(other.strokes)
            and all(np.array_equal(a, b) for a, b in zip(self.strokes, other.strokes))
        )

    __hash__ = None

    @property
    def points(self) -> np.ndarray:
        """All points of all strokes, concatenated."""
        return np.concatenate(self.strokes, axis=0)

    def with_strokes(self, strokes) -> "StrokeSample":
        return StrokeSample(self.id, self.label, tuple(strokes))

    def to_record(self) -> dict:
        return {
            "id": self.id,
            "label": self.label,
            "strokes": [s.tolist() for s in self.strokes],
        }


@dataclass(frozen=True, eq=False)
class Dataset:
    samples: tuple
    k: int
    noise_mask: np.ndarray | None = None

    def __post_init__(self):
        samples = tuple(self.samples)
        object.__setattr__(self, "samples", samples)
        if self.k < 2:
            raise DatasetError(f"class count must be >= 2, got {self.k}")
        seen = set()
        for s in samples:
            if s.id in seen:
                raise DatasetError(f"duplicate sample id {s.id}")
            seen.add(s.id)
            if not 0 <= s.label < self.k:
                raise DatasetError(f"sample {s.id}: label {s.label} outside [0, {self.k})")
        if self.noise_mask is not None:
            mask = np.array(self.noise_mask, dtype=bool)
            if mask.shape != (len(samples),):
                raise DatasetError("noise_mask length does not match the sample count")
            mask.setflags(write=False)
            object.__setattr__(self, "noise_mask", mask)

    def __len__(self):
        return len(self.samples)

    def __iter__(self):
        return iter(self.samples)

    def __getitem__(self, i):
        return self.samples[i]

    def __eq__(self, other):
        if not isinstance(other, Dataset):
            return NotImplemented
        if self.k != other.k or self.samples != other.samples:
            return False
        if self.noise_mask is None or other.noise_mask is None:
            return self.noise_mask is None and other.noise_mask is None
        return bool(np.array_equal(self.noise_mask, other.noise_mask))

    __hash__ = None

    @property
    def labels(self) -> np.ndarray:
        return np.array([s.label for s in self.samples], dtype=np.int64)


# --------------------------------------------------------------------------
# file I/O


def _infer_format(path: Path, fmt):
    if fmt is not None:
        if fmt not in ("jsonl", "csv"):
            raise ValueError(f"unknown dataset format {fmt!r}")
        return fmt
    return "csv" if path.suffix.lower() == ".csv" else "jsonl"


def load_dataset(path, fmt=None, k=None) -> Dataset:
    """Read a dataset from ``path``.

    ``k`` overrides the class count.  Otherwise the JSONL header is used, and
    failing that ``max(label) + 1`` (at least 2).  Samples without an id get
    their zero-based position in the file.
    """
    path = Path(path)
    fmt = _infer_format(path, fmt)
    if fmt == "jsonl":
        records, header_k, noisy = _read_jsonl(path)
    else:
        records, header_k, noisy = _read_csv(path), None, None
    if not records:
        raise DatasetError(f"{path}: empty dataset file")
    if k is None:
        k = header_k if header_k is not None else max(2, max(r[1] for r in records) + 1)
    for _, label, _, lineno in records:
        if not 0 <= label < k:
            raise DatasetError(f"{path}:{lineno}: label {label} out of range for k={k}")
    samples = []
    seen = {}
    for pos, (sid, label, strokes, lineno) in enumerate(records):
        sid = pos if sid is None else sid
        if sid in seen:
            raise DatasetError(
                f"{path}: duplicate id {sid} (lines {seen[sid]} and {lineno})"
            )
        seen[sid] = lineno
        samples.append(StrokeSample(sid, label, tuple(strokes)))
    mask = None
    if noisy is not None and any(v is not None for v in noisy):
        mask = np.array([bool(v) for v in noisy])
    return Dataset(tuple(samples), int(k), mask)


def _read_jsonl(path: Path):
    records, noisy = [], []
    header_k = None
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise DatasetError(f"{path}:{lineno}: invalid JSON ({exc.msg})") from None
            if not isinstance(obj, dict):
                raise DatasetError(f"{path}:{lineno}: expected a JSON object")
            if "strokes" not in obj and "k" in obj and not records:
                header_k = _as_int(obj["k"], path, lineno, "k")
                continue
            sid = obj.get("id")
            name = f"record id={sid}" if sid is not None else f"record #{len(records)}"
            if "label" not in obj or "strokes" not in obj:
                raise DatasetError(f"{path}:{lineno}: {name} needs 'label' and 'strokes'")
            label = _as_int(obj["label"], path, lineno, "label")
            if sid is not None:
                sid = _as_int(sid, path, lineno, "id")
            strokes = obj["strokes"]
            if not isinstance(strokes, list) or not strokes:
                raise DatasetError(f"{path}:{lineno}: {name} has an empty stroke list")
            parsed = []
            for si, stroke in enumerate(strokes):
                try:
                    arr = np.array(stroke, dtype=np.float64)
                except (TypeError, ValueError):
                    raise DatasetError(f"{path}:{lineno}: {name} stroke {si} is not a point list") from None
                if arr.ndim != 2 or arr.shape[1] != 2 or arr.shape[0] == 0:
                    raise DatasetError(f"{path}:{lineno}: {name} stroke {si} must be a non-empty [[x, y], ...] list")
                if not np.all(np.isfinite(arr)):
                    raise DatasetError(f"{path}:{lineno}: {name} stroke {si} has non-finite coordinates")
                parsed.append(arr)
            records.append((sid, label, parsed, lineno))
            noisy.append(obj.get("noisy"))
    return records, header_k, noisy


def _read_csv(path: Path):
    groups = {}
    order = []
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            return []
        if [h.strip() for h in header] != CSV_COLUMNS:
            raise DatasetError(f"{path}:1: expected header {','.join(CSV_COLUMNS)}")
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != 6:
                raise DatasetError(f"{path}:{lineno}: expected 6 columns, got {len(row)}")
            try:
                sid, label, si, pi = (int(v) for v in row[:4])
                x, y = float(row[4]), float(row[5])
            except ValueError:
                raise DatasetError(f"{path}:{lineno}: malformed row") from None
            if not (math.isfinite(x) and math.isfinite(y)):
                raise DatasetError(f"{path}:{lineno}: non-finite coordinate")
            if sid not in groups:
                groups[sid] = [label, {}, lineno]
                order.append(sid)
            entry = groups[sid]
            if entry[0] != label:
                raise DatasetError(f"{path}:{lineno}: sample {sid} has conflicting labels")
            entry[1].setdefault(si, []).append((pi, x, y))
    records = []
    for sid in order:
        label, strokes, lineno = groups[sid]
        parsed = []
        for si in sorted(strokes):
            pts = sorted(strokes[si])
            parsed.append(np.array([[x, y] for _, x, y in pts], dtype=np.float64))
        records.append((sid, label, parsed, lineno))
    return records


def _as_int(value, path, lineno, field):
    if isinstance(value, bool) or not isinstance(value, int):
        raise DatasetError(f"{path}:{lineno}: field {field!r} must be an integer")
    return value


def write_dataset(dataset: Dataset, path, fmt=None) -> None:
    path = Path(path)
    fmt = _infer_format(path, fmt)
    if fmt == "jsonl":
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(json.dumps({"k": dataset.k}) + "\n")
            for i, s in enumerate(dataset.samples):
                rec = s.to_record()
                if dataset.noise_mask is not None:
                    rec["noisy"] = bool(dataset.noise_mask[i])
                fh.write(json.dumps(rec, separators=(",", ":")) + "\n")
    else:
        with open(path, "w", encoding="utf-8", newline="") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(CSV_COLUMNS)
            for s in dataset.samples:
                for si, stroke in enumerate(s.strokes):
                    for pi, (x, y) in enumerate(stroke):
                        writer.writerow([s.id, s.label, si, pi, repr(float(x)), repr(float(y))])


# --------------------------------------------------------------------------
# normalization


def normalize_sample(sample: StrokeSample) -> StrokeSample:
    """Scale uniformly and center the sample in the ``[0, 48]`` box.

    The longer bounding-box side is mapped onto 48 units; the other axis is
    centred on 24.
    """
    pts = sample.points
    lo = pts.min(axis=0)
    hi = pts.max(axis=0)
    extent = float(np.max(hi - lo))
    if extent <= 0.0:
        raise DegenerateGeometryError(f"sample {sample.id}: all points coincide")
    scale = BOX / extent
    center = (lo + hi) / 2.0
    half = BOX / 2.0
    return sample.with_strokes((s - center) * scale + half for s in sample.strokes)


# --------------------------------------------------------------------------
# synthetic data

_POINT_SPACING = 0.04  # in prototype units (glyph box side 1)


def _densify(vertices: np.ndarray) -> np.ndarray:
    out = [vertices[:1]]
    for a, b in zip(vertices[:-1], vertices[1:]):
        n = max(1, int(math.ceil(np.hypot(*(b - a)) / _POINT_SPACING)))
        t = np.arange(1, n + 1, dtype=np.float64)[:, None] / n
        out.append(a + (b - a) * t)
    return np.concatenate(out, axis=0)


def make_prototypes(k: int, glyph_seed: int = 0) -> list:
    """Per-class glyphs: 1 to 4 polyline strokes with 2 to 5 vertices each.

    Returns, for each class, a list of vertex arrays in the unit box.  The
    glyphs depend only on ``(k, glyph_seed)``, so train and test sets drawn
    with different sampling seeds share their classes.
    """
    rng = np.random.default_rng([glyph_seed, k])
    protos = []
    for _ in range(k):
        n_strokes = int(rng.integers(1, 5))
        strokes = []
        for _ in range(n_strokes):
            n_vert = int(rng.integers(2, 6))
            strokes.append(rng.uniform(0.0, 1.0, size=(n_vert, 2)))
        protos.append(strokes)
    return protos


def generate_synthetic(k, per_class, seed, mislabel_fraction=0.0, jitter=0.0, glyph_seed=0) -> Dataset:
    """Jittered copies of fixed class prototypes, with injected mislabels.

    Each sample perturbs its class's prototype vertices by iid Gaussian
    noise of standard deviation ``jitter`` (glyph box side is 1) and is then
    densified to a pen trajectory.  Exactly
    ``floor(mislabel_fraction * k * per_class)`` samples receive a uniformly
    drawn wrong label and are flagged in ``noise_mask``.
    """
    if k < 2:
        raise ValueError("k must be >= 2")
    if per_class < 1:
        raise ValueError("per_class must be >= 1")
    if not 0.0 <= mislabel_fraction < 1.0:
        raise ValueError("mislabel_fraction must lie in [0, 1)")
    if jitter < 0:
        raise ValueError("jitter must be >= 0")
    protos = make_prototypes(k, glyph_seed)
    rng = np.random.default_rng(seed)
    m = k * per_class
    labels = np.repeat(np.arange(k), per_class)
    strokes_all = []
    for c in labels:
        strokes = []
        for verts in protos[c]:
            noisy = verts + rng.normal(0.0, 1.0, size=verts.shape) * jitter if jitter > 0 else verts
            strokes.append(_densify(noisy) * 100.0)
        strokes_all.append(strokes)
    n_bad = int(math.floor(mislabel_fraction * m))
    mask = np.zeros(m, dtype=bool)
    labels = labels.copy()
    if n_bad:
        bad = rng.choice(m, size=n_bad, replace=False)
        shift = rng.integers(1, k, size=n_bad)
        labels[bad] = (labels[bad] + shift) % k
        mask[bad] = True
    samples = tuple(StrokeSample(i, int(labels[i]), tuple(strokes_all[i])) for i in range(m))
    return Dataset(samples, k, mask)


def prototype_sample(k, label, glyph_seed=0) -> StrokeSample:
    """The noiseless glyph of ``label``, as generated with zero jitter."""
    verts = make_prototypes(k, glyph_seed)[label]
    return StrokeSample(0, label, tuple(_densify(v) * 100.0 for v in verts))
