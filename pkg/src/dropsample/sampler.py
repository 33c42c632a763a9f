"""DropSample quota state and quota-updating functions.

Every training sample carries a quota in ``[q_min, 1]``, initially 1.  A
mini-batch is drawn with replacement from the categorical distribution
``quota / sum(quotas)``.  After the forward pass, each drawn sample's quota is
multiplied by a factor that depends on the classifier's confidence ``p``:

* ``p > T2`` (well recognized): factor below 1, the sample is seen less;
* ``T1 <= p <= T2`` (confusing): the quota is reset to exactly 1;
* ``p < T1`` (noisy): factor below 1, but only once warm-up is over.

Two factor families are provided: an exponential one (``ds1``) and a
three-level step function per tail (``ds2``).
"""
from __future__ import annotations

import enum
import math
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import kernels


class SampleGroup(enum.IntEnum):
    WELL_RECOGNIZED = 1
    CONFUSING = 2
    NOISY = 3


@dataclass(frozen=True)
class GroupThresholds:
    t1: float
    t2: float = 0.99

    def __post_init__(self):
        if not 0.0 < self.t1 < self.t2 < 1.0:
            raise ValueError(f"need 0 < T1 < T2 < 1, got T1={self.t1}, T2={self.t2}")

    @classmethod
    def for_classes(cls, k, t2=0.99):
        """T1 at the random-guess level ``1/k``."""
        return cls(1.0 / k, t2)


def classify_group(p, th: GroupThresholds) -> SampleGroup:
    if p > th.t2:
        return SampleGroup.WELL_RECOGNIZED
    if p < th.t1:
        return SampleGroup.NOISY
    return SampleGroup.CONFUSING


def classify_groups(p, th: GroupThresholds) -> np.ndarray:
    """Vectorized :func:`classify_group`, returning an int array of group codes."""
    p = np.asarray(p, dtype=np.float64)
    out = np.full(p.shape, int(SampleGroup.CONFUSING), dtype=np.int64)
    out[p > th.t2] = int(SampleGroup.WELL_RECOGNIZED)
    out[p < th.t1] = int(SampleGroup.NOISY)
    return out


VARIANTS = ("off", "ds1", "ds2")


@dataclass(frozen=True)
class UpdaterConfig:
    """Quota-updating function and its parameters.

    ``low_bounds`` are the sub-interval edges of the noisy tail; ``None``
    means ``(0, T1/4, T1/2, T1)``, i.e. ``0, 1/4k, 1/2k, 1/k`` for the default
    thresholds.  ``high_bounds`` default to ``T2`` followed by
    ``0.999, 0.9999, 1``.  ``confidence`` selects which softmax output is
    fed to the updater: ``"label"`` (probability of the training label) or
    ``"predicted"`` (largest probability).
    """

    variant: str = "ds2"
    beta: float = 400.0
    gamma: float = 600.0
    low_factors: tuple = (0.9, 0.5, 0.1)
    high_factors: tuple = (0.9, 0.5, 0.1)
    low_bounds: tuple | None = None
    high_bounds: tuple | None = None
    q_min: float = 1e-6
    confidence: str = "label"

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ValueError(f"unknown sampler variant {self.variant!r}")
        if self.confidence not in ("label", "predicted"):
            raise ValueError("confidence must be 'label' or 'predicted'")
        if not 0.0 < self.q_min <= 1.0:
            raise ValueError("q_min must lie in (0, 1]")
        for fac in (*self.low_factors, *self.high_factors):
            if not 0.0 < fac <= 1.0:
                raise ValueError("level factors must lie in (0, 1]")
        for bounds, factors in ((self.low_bounds, self.low_factors), (self.high_bounds, self.high_factors)):
            if bounds is not None:
                if len(bounds) != len(factors) + 1:
                    raise ValueError("need one more boundary than level factors")
                if any(b >= a for a, b in zip(bounds[1:], bounds[:-1])):
                    raise ValueError("level boundaries must be strictly increasing")

    @property
    def enabled(self):
        return self.variant != "off"

    def low_edges(self, th: GroupThresholds):
        if self.low_bounds is not None:
            return tuple(self.low_bounds)
        return (0.0, th.t1 / 4.0, th.t1 / 2.0, th.t1)

    def high_edges(self, th: GroupThresholds):
        if self.high_bounds is not None:
            return tuple(self.high_bounds)
        return (th.t2, 0.999, 0.9999, 1.0)


def update_factor_ds1(p, q_prev, cfg: UpdaterConfig, th: GroupThresholds) -> float:
    """Exponential factor: ``1 - exp(-gamma p)`` low, ``1 - exp(-beta (1-p))`` high."""
    group = classify_group(p, th)
    if group is SampleGroup.NOISY:
        return -math.expm1(-cfg.gamma * p)
    if group is SampleGroup.WELL_RECOGNIZED:
        return -math.expm1(-cfg.beta * (1.0 - p))
    return 1.0 / q_prev


def _level(p, edges, factors):
    # half-open levels [edge_h, edge_{h+1}), the last level also takes its upper edge
    for h in range(len(factors)):
        if p < edges[h + 1]:
            return factors[h]
    return factors[-1]


def update_factor_ds2(p, q_prev, cfg: UpdaterConfig, th: GroupThresholds) -> float:
    """Multi-level step factor on each tail, confusing samples reset."""
    group = classify_group(p, th)
    if group is SampleGroup.NOISY:
        return _level(p, cfg.low_edges(th), cfg.low_factors)
    if group is SampleGroup.WELL_RECOGNIZED:
        return _level(p, cfg.high_edges(th), cfg.high_factors)
    return 1.0 / q_prev


def update_factor(p, q_prev, cfg: UpdaterConfig, th: GroupThresholds) -> float:
    if cfg.variant == "ds1":
        return update_factor_ds1(p, q_prev, cfg, th)
    if cfg.variant == "ds2":
        return update_factor_ds2(p, q_prev, cfg, th)
    raise ValueError("sampler is off; no update factor")


class QuotaTable:
    """Per-sample quotas with a Fenwick index for O(log m) update and draw.

    ``t`` counts completed update rounds (mini-batches).  While ``t <
    warmup`` the noisy branch is treated as confusing.
    """

    def __init__(self, m, q_min=1e-6, warmup=0, variant="ds2", quotas=None, t=0):
        if m < 1:
            raise ValueError("quota table needs at least one sample")
        self.m = int(m)
        self.q_min = float(q_min)
        self.warmup = int(warmup)
        self.variant = variant
        self.t = int(t)
        if quotas is None:
            quotas = np.ones(self.m)
        self.quotas = np.array(quotas, dtype=np.float64)
        if self.quotas.shape != (self.m,):
            raise ValueError("quota vector has the wrong length")
        if np.any(self.quotas < self.q_min) or np.any(self.quotas > 1.0):
            raise ValueError("quotas must lie in [q_min, 1]")
        self._tree = kernels.fenwick_build(self.quotas)

    def __len__(self):
        return self.m

    @property
    def total(self):
        """Index total, the normalizer of the draw distribution."""
        return kernels.fenwick_prefix(self._tree, self.m)

    def probabilities(self):
        return self.quotas / self.quotas.sum()

    def equivalent_set_size(self):
        return float(self.quotas.sum())

    def rebuild_index(self):
        self._tree = kernels.fenwick_build(self.quotas)

    def set_quotas(self, index, values):
        """Overwrite quotas (clamped to ``[q_min, 1]``) and patch the index."""
        index = np.atleast_1d(np.asarray(index, dtype=np.int64))
        values = np.clip(np.broadcast_to(np.asarray(values, dtype=np.float64), index.shape), self.q_min, 1.0)
        self._check_ids(index)
        deltas = np.empty(len(index))
        for j, (i, v) in enumerate(zip(index, values)):
            deltas[j] = v - self.quotas[i]
            self.quotas[i] = v
        kernels.fenwick_add(self._tree, index, deltas)

    def _check_ids(self, index):
        if index.size and (index.min() < 0 or index.max() >= self.m):
            bad = index[(index < 0) | (index >= self.m)][0]
            raise IndexError(f"unknown sample index {bad} (table holds {self.m})")

    def in_warmup(self):
        return self.t < self.warmup

    def apply_update(self, i, p, cfg: UpdaterConfig, th: GroupThresholds) -> SampleGroup:
        """Update one sample's quota from confidence ``p``; returns its group."""
        return SampleGroup(int(self.apply_batch([i], [p], cfg, th, advance=False)[0]))

    def apply_batch(self, index, p, cfg: UpdaterConfig, th: GroupThresholds, advance=True):
        """Update the quotas of a drawn mini-batch in draw order.

        A sample drawn twice is updated twice.  With ``advance`` the
        iteration counter moves on afterwards.  Returns the group code of
        each entry as used for the update (after warm-up suppression).
        """
        index = np.asarray(index, dtype=np.int64)
        p = np.asarray(p, dtype=np.float64)
        self._check_ids(index)
        groups = classify_groups(p, th)
        if self.in_warmup():
            groups[groups == SampleGroup.NOISY] = int(SampleGroup.CONFUSING)
        touched = {}
        q = self.quotas
        for j in range(len(index)):
            i = int(index[j])
            if groups[j] == SampleGroup.CONFUSING:
                new = 1.0
            else:
                new = q[i] * update_factor(float(p[j]), q[i], cfg, th)
                new = min(1.0, max(self.q_min, new))
            if i not in touched:
                touched[i] = q[i]
            q[i] = new
        if touched:
            ids = np.fromiter(touched.keys(), dtype=np.int64, count=len(touched))
            old = np.fromiter(touched.values(), dtype=np.float64, count=len(touched))
            kernels.fenwick_add(self._tree, ids, q[ids] - old)
        if advance:
            self.t += 1
        return groups

    def draw(self, b, rng) -> np.ndarray:
        return draw_minibatch(self, b, rng)

    # checkpoint ---------------------------------------------------------

    _MAGIC = b"DSQT"
    _HEADER = struct.Struct("<4sIQQQBxxxd")

    def save(self, path):
        """Header ``(magic, version, m, t, W, variant, q_min)`` then m float64."""
        with open(path, "wb") as fh:
            fh.write(self._HEADER.pack(self._MAGIC, 1, self.m, self.t, self.warmup,
                                       VARIANTS.index(self.variant), self.q_min))
            fh.write(self.quotas.astype("<f8").tobytes())

    @classmethod
    def load(cls, path):
        raw = Path(path).read_bytes()
        magic, version, m, t, warmup, variant, q_min = cls._HEADER.unpack_from(raw)
        if magic != cls._MAGIC or version != 1:
            raise ValueError(f"{path}: not a quota checkpoint")
        quotas = np.frombuffer(raw, dtype="<f8", offset=cls._HEADER.size)
        if quotas.shape != (m,):
            raise ValueError(f"{path}: expected {m} quotas, found {quotas.shape[0]}")
        return cls(m, q_min=q_min, warmup=warmup, variant=VARIANTS[variant], quotas=quotas, t=t)


def _as_rng(rng):
    if isinstance(rng, np.random.Generator):
        return rng
    return np.random.default_rng(rng)


def draw_minibatch(qt: QuotaTable, b, rng) -> np.ndarray:
    """``b`` draws with replacement from ``quota / sum(quotas)``.

    One uniform per draw is taken from ``rng``; draw ``j`` returns the
    smallest index whose cumulative quota exceeds ``u_j * total``.
    """
    if b < 1:
        raise ValueError("batch size must be >= 1")
    rng = _as_rng(rng)
    u = rng.random(b)
    return kernels.fenwick_find(qt._tree, u * qt.total)


def equivalent_set_size(qt: QuotaTable) -> float:
    return qt.equivalent_set_size()
