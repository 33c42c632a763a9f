"""DropSample training loop, evaluation and the paired comparison experiment.

One iteration:

1. draw ``batch`` sample indices from the quota distribution (uniformly
   when the sampler is off);
2. forward pass, cross-entropy gradient, SGD step;
3. feed each drawn sample's pre-update confidence to the quota updater.

Metrics are logged every ``eval_interval`` iterations and at the end.
"""
from __future__ import annotations

import csv
import math
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from . import classifier as clf
from .features import DeformationParams, FeatureConfig, GRID, build_feature_stack, deform
from .sampler import GroupThresholds, QuotaTable, UpdaterConfig, classify_groups, draw_minibatch
from .strokes import Dataset

#: quota below which a sample counts as dropped in audits and logs
LOW_QUOTA = 0.1


class TrainingDivergedError(RuntimeError):
    pass


class AuditError(ValueError):
    pass


# --------------------------------------------------------------------------
# features -> design matrix


@dataclass(frozen=True)
class Featurizer:
    """Feature stack, average-pooled by ``pool`` and flattened.

    Channels are divided by fixed, data-independent scales so the same
    featurizer serves training and test sets: level-``n`` signature maps by
    ``(window - 1)^n / n!``, the largest value a window of unit-spaced points
    can produce; everything else by 1.  With ``unit_norm`` each flattened
    vector is then scaled to unit Euclidean length, which keeps logit scale
    independent of how much ink a character has.
    """

    features: FeatureConfig = FeatureConfig()
    pool: int = 4
    unit_norm: bool = False

    def __post_init__(self):
        if self.pool < 1 or GRID % self.pool:
            raise ValueError(f"pool must divide {GRID}")

    @property
    def side(self):
        return GRID // self.pool

    @property
    def n_features(self):
        return self.features.channels * self.side * self.side

    def channel_scales(self):
        fc = self.features
        scales = [1.0] * (1 + int(fc.imaginary))
        if fc.signature_order:
            reach = float(fc.window - 1)
            scales.append(1.0)
            for n in range(1, fc.signature_order + 1):
                scales.extend([reach**n / math.factorial(n)] * 2**n)
        if fc.directional:
            scales.extend([1.0] * 8)
        return np.array(scales)

    def transform_sample(self, sample):
        data = build_feature_stack(sample, self.features).data
        if self.pool > 1:
            m, p, s = data.shape[0], self.pool, self.side
            data = data.reshape(m, s, p, s, p).mean(axis=(2, 4))
        vec = (data / self.channel_scales()[:, None, None]).reshape(-1)
        if self.unit_norm:
            norm = np.linalg.norm(vec)
            if norm > 0:
                vec = vec / norm
        return vec

    def transform(self, samples):
        samples = list(samples)
        out = np.empty((len(samples), self.n_features))
        for i, s in enumerate(samples):
            out[i] = self.transform_sample(s)
        return out


# --------------------------------------------------------------------------
# configuration and logs


@dataclass(frozen=True)
class TrainConfig:
    iterations: int = 20000
    batch: int = 96
    lr: float = 0.1
    lr_decay: float = 1.0
    lr_decay_every: int = 0
    lam: float = 0.0
    hidden: int = 0
    sampler: UpdaterConfig = UpdaterConfig()
    t2: float = 0.99
    warmup: float = 0.25
    features: FeatureConfig = FeatureConfig()
    pool: int = 4
    deform_strength: float = 1.0
    augment_bank: int = 0
    unit_norm: bool = False
    seed: int = 0
    eval_interval: int = 500

    def __post_init__(self):
        if self.iterations < 1:
            raise ValueError("iterations must be >= 1")
        if self.batch < 1:
            raise ValueError("batch must be >= 1")
        if not self.lr > 0:
            raise ValueError("lr must be positive")
        if not 0 < self.lr_decay <= 1:
            raise ValueError("lr_decay must lie in (0, 1]")
        if not 0 <= self.warmup <= 1:
            raise ValueError("warmup is a fraction of the iterations, in [0, 1]")
        if self.eval_interval < 1:
            raise ValueError("eval_interval must be >= 1")

    @property
    def warmup_iterations(self):
        return int(round(self.warmup * self.iterations))

    def featurizer(self):
        return Featurizer(self.features, self.pool, self.unit_norm)

    def thresholds(self, k):
        return GroupThresholds.for_classes(k, self.t2)

    def learning_rate(self, t):
        """Step decay: multiply by ``lr_decay`` every ``lr_decay_every`` iterations."""
        if self.lr_decay_every <= 0 or self.lr_decay == 1.0:
            return self.lr
        return self.lr * self.lr_decay ** ((t - 1) // self.lr_decay_every)

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        if "sampler" in d and isinstance(d["sampler"], dict):
            s = dict(d["sampler"])
            for key in ("low_factors", "high_factors", "low_bounds", "high_bounds"):
                if s.get(key) is not None:
                    s[key] = tuple(s[key])
            d["sampler"] = UpdaterConfig(**s)
        if "features" in d and isinstance(d["features"], dict):
            d["features"] = FeatureConfig(**d["features"])
        return cls(**d)


LOG_COLUMNS = [
    "iteration",
    "lr",
    "train_loss",
    "test_error",
    "set_size",
    "grad_norm",
    "e_sum_norm",
    "e1_norm",
    "e2_norm",
    "e3_norm",
    "n_well",
    "n_confusing",
    "n_noisy",
    "noise_low_quota",
    "clean_low_quota",
]
LOG_SCHEMA = "dropsample-trainlog/1"


@dataclass
class TrainLog:
    """Evaluation records plus the final quota vector (``None`` without sampler)."""

    records: list = field(default_factory=list)
    quotas: np.ndarray | None = None
    m: int = 0

    def column(self, name):
        return np.array([r[name] for r in self.records], dtype=np.float64)

    @property
    def iterations(self):
        return [int(r["iteration"]) for r in self.records]

    def write_csv(self, path):
        with open(path, "w", newline="", encoding="utf-8") as fh:
            fh.write(f"# {LOG_SCHEMA}\n")
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(LOG_COLUMNS)
            for r in self.records:
                writer.writerow([_fmt(r[c]) for c in LOG_COLUMNS])

    @classmethod
    def read_csv(cls, path):
        with open(path, newline="", encoding="utf-8") as fh:
            first = fh.readline().strip()
            if first != f"# {LOG_SCHEMA}":
                raise ValueError(
                    f"{path}: unsupported log schema {first[2:] or '(none)'!r}, expected {LOG_SCHEMA!r}"
                )
            reader = csv.reader(fh)
            header = next(reader, None)
            if header != LOG_COLUMNS:
                raise ValueError(f"{path}: column mismatch for schema {LOG_SCHEMA!r}")
            records = []
            for row in reader:
                rec = {c: float(v) for c, v in zip(LOG_COLUMNS, row)}
                for c in ("iteration", "n_well", "n_confusing", "n_noisy"):
                    rec[c] = int(rec[c])
                records.append(rec)
        return cls(records)


def _fmt(v):
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return repr(float(v))


# --------------------------------------------------------------------------
# training


@dataclass
class TrainResult:
    model: clf.SoftmaxModel
    log: TrainLog
    quota_table: QuotaTable | None


def _design(data, featurizer):
    if isinstance(data, Dataset):
        return featurizer.transform(data.samples), data.labels
    x, y = data
    return np.asarray(x, dtype=np.float64), np.asarray(y, dtype=np.int64)


def error_rate(model, x, y):
    """Fraction misclassified; ``argmax`` ties go to the lowest class index."""
    pred = np.argmax(clf.logits(model, x), axis=1)
    return float(np.mean(pred != np.asarray(y)))


def evaluate(model, data, featurizer=None):
    """Test error rate on a :class:`Dataset` (featurized) or an ``(x, y)`` pair."""
    if featurizer is None:
        featurizer = Featurizer()
    elif isinstance(featurizer, FeatureConfig):
        featurizer = Featurizer(featurizer)
    x, y = _design(data, featurizer)
    return error_rate(model, x, y)


def train(train_data, test_data, cfg: TrainConfig, noise_mask=None, k=None, bank=None) -> TrainResult:
    """Run the DropSample loop for ``cfg.iterations`` mini-batches.

    ``train_data``/``test_data`` are datasets (featurized here) or
    precomputed ``(x, y)`` pairs.  With ``cfg.features.deformation`` each
    drawn sample is deformed before featurization: freshly, seeded by
    ``(seed, sample index, t)``, or, when ``cfg.augment_bank`` is positive,
    by picking one of that many pre-deformed variants per draw.  A
    precomputed ``bank`` (see :func:`deformation_bank`) may be passed in.
    """
    featurizer = cfg.featurizer()
    x, y = _design(train_data, featurizer)
    xt, yt = _design(test_data, featurizer)
    if isinstance(train_data, Dataset):
        k = train_data.k
        if noise_mask is None:
            noise_mask = train_data.noise_mask
    elif k is None:
        k = int(max(y.max(), yt.max()) + 1)
    augment = cfg.features.deformation and isinstance(train_data, Dataset)
    if bank is None and augment and cfg.augment_bank > 0:
        bank = deformation_bank(train_data, cfg, featurizer)
    if bank is not None:
        bank_rng = np.random.default_rng([cfg.seed, 1])
    m = len(y)
    th = cfg.thresholds(k)
    upd = cfg.sampler
    model = clf.SoftmaxModel(k, x.shape[1], cfg.hidden, seed=cfg.seed)
    loss_cfg = clf.LossConfig(cfg.lam)
    rng = np.random.default_rng(cfg.seed)
    qt = None
    if upd.enabled:
        qt = QuotaTable(m, q_min=upd.q_min, warmup=cfg.warmup_iterations, variant=upd.variant)
    mask = None if noise_mask is None else np.asarray(noise_mask, dtype=bool)
    log = TrainLog(m=m)
    loss_sum, loss_n = 0.0, 0
    for t in range(1, cfg.iterations + 1):
        alpha = cfg.learning_rate(t)
        if qt is not None:
            idx = draw_minibatch(qt, cfg.batch, rng)
        else:
            idx = (rng.random(cfg.batch) * m).astype(np.int64)
        xb, yb = x[idx], y[idx]
        if bank is not None:
            xb = bank[bank_rng.integers(len(bank), size=len(idx)), idx]
        elif augment:
            xb = _augmented(train_data, idx, t, cfg, featurizer)
        with np.errstate(over="ignore", invalid="ignore"):
            probs, batch_loss, grad = clf.forward_backward(model, xb, yb, loss_cfg)
        if not (math.isfinite(batch_loss) and np.all(np.isfinite(grad))):
            raise TrainingDivergedError(
                f"non-finite loss or gradient at iteration {t} (loss={batch_loss}, lr={alpha})"
            )
        loss_sum += batch_loss
        loss_n += 1
        is_eval = t % cfg.eval_interval == 0 or t == cfg.iterations
        if is_eval:
            dec = clf.decompose_error(model, xb, yb, th, source=upd.confidence)
            data_grad = clf.gradient(model, xb, yb)
        model = clf.sgd_step(model, grad, alpha)
        if qt is not None:
            qt.apply_batch(idx, clf.confidences(probs, yb, upd.confidence), upd, th)
        if is_eval:
            log.records.append(
                _record(t, alpha, loss_sum / loss_n, model, x, y, xt, yt, th, upd, qt, m, mask, dec, data_grad)
            )
            loss_sum, loss_n = 0.0, 0
    if qt is not None:
        log.quotas = qt.quotas.copy()
    return TrainResult(model, log, qt)


def _augmented(dataset, idx, t, cfg, featurizer):
    rows = []
    for i in idx:
        rng = np.random.default_rng([cfg.seed, int(i), t])
        params = DeformationParams.random(rng, cfg.deform_strength)
        rows.append(featurizer.transform_sample(deform(dataset.samples[i], params)))
    return np.array(rows)


def deformation_bank(dataset, cfg, featurizer):
    """``(augment_bank, m, n)`` features of deformed copies of every sample."""
    bank = np.empty((cfg.augment_bank, len(dataset), featurizer.n_features))
    for v in range(cfg.augment_bank):
        for i, s in enumerate(dataset.samples):
            rng = np.random.default_rng([cfg.seed, i, v])
            params = DeformationParams.random(rng, cfg.deform_strength)
            bank[v, i] = featurizer.transform_sample(deform(s, params))
    return bank


def _record(t, alpha, mean_loss, model, x, y, xt, yt, th, upd, qt, m, mask, dec, data_grad):
    probs = clf.predict(model, x)
    groups = classify_groups(clf.confidences(probs, y, upd.confidence), th)
    low = None if qt is None else qt.quotas < LOW_QUOTA
    rec = {
        "iteration": t,
        "lr": alpha,
        "train_loss": mean_loss,
        "test_error": error_rate(model, xt, yt),
        "set_size": float(m) if qt is None else qt.equivalent_set_size(),
        "grad_norm": float(np.linalg.norm(data_grad)),
        "e_sum_norm": float(np.linalg.norm(dec.total)),
        "e1_norm": dec.e1_norm,
        "e2_norm": dec.e2_norm,
        "e3_norm": dec.e3_norm,
        "n_well": int(np.sum(groups == 1)),
        "n_confusing": int(np.sum(groups == 2)),
        "n_noisy": int(np.sum(groups == 3)),
        "noise_low_quota": float("nan"),
        "clean_low_quota": float("nan"),
    }
    if mask is not None and low is not None:
        if mask.any():
            rec["noise_low_quota"] = float(low[mask].mean())
        if (~mask).any():
            rec["clean_low_quota"] = float(low[~mask].mean())
    return rec


# --------------------------------------------------------------------------
# audit and comparison


@dataclass(frozen=True)
class NoiseAudit:
    recall: float | None
    false_drop: float | None
    n_noisy: int
    n_clean: int

    def format(self):
        r = "n/a" if self.recall is None else f"{self.recall:.4f}"
        f = "n/a" if self.false_drop is None else f"{self.false_drop:.4f}"
        return f"recall={r} false_drop={f} noisy={self.n_noisy} clean={self.n_clean}"


def noise_audit(log_or_quotas, dataset_or_mask, threshold=LOW_QUOTA) -> NoiseAudit:
    """How well low final quotas pick out the injected mislabels.

    ``recall`` is the share of flagged samples with quota below
    ``threshold``; ``false_drop`` the same share among clean samples.
    Either is ``None`` when its population is empty.
    """
    quotas = log_or_quotas.quotas if isinstance(log_or_quotas, TrainLog) else log_or_quotas
    mask = dataset_or_mask.noise_mask if isinstance(dataset_or_mask, Dataset) else dataset_or_mask
    if mask is None:
        raise AuditError("dataset carries no noise mask")
    mask = np.asarray(mask, dtype=bool)
    if quotas is None:
        quotas = np.ones(len(mask))
    quotas = np.asarray(quotas)
    if quotas.shape != mask.shape:
        raise AuditError("quota vector and noise mask differ in length")
    low = quotas < threshold
    recall = float(low[mask].mean()) if mask.any() else None
    false_drop = float(low[~mask].mean()) if (~mask).any() else None
    return NoiseAudit(recall, false_drop, int(mask.sum()), int((~mask).sum()))


@dataclass
class ComparisonReport:
    with_log: TrainLog
    without_log: TrainLog
    final_acc_with: float
    final_acc_without: float
    best_acc_without: float
    iters_with: int | None
    iters_without: int
    savings: float | None
    variant: str = "ds2"
    results: tuple = ()

    @property
    def reached(self):
        return self.iters_with is not None

    def markdown(self, with_csv="with_dropsample.csv", without_csv="without_dropsample.csv"):
        sav = "unreachable" if self.savings is None else f"{self.savings:.4f}"
        lines = [
            "# DropSample comparison",
            "",
            f"Sampler variant: `{self.variant}`",
            "",
            "| run | final accuracy | iterations to target | curve |",
            "|---|---|---|---|",
            f"| with DropSample | {self.final_acc_with:.4f} | "
            f"{'-' if self.iters_with is None else self.iters_with} | [{with_csv}]({with_csv}) |",
            f"| without DropSample | {self.final_acc_without:.4f} | {self.iters_without} | "
            f"[{without_csv}]({without_csv}) |",
            "",
            f"Target accuracy (best without DropSample): {self.best_acc_without:.4f}",
            "",
            f"Iteration savings: {sav}",
            "",
        ]
        return "\n".join(lines)


def iterations_to(log: TrainLog, target_error):
    for r in log.records:
        if r["test_error"] <= target_error + 1e-12:
            return int(r["iteration"])
    return None


def compare_dropsample(train_data, test_data, cfg: TrainConfig, noise_mask=None, k=None) -> ComparisonReport:
    """Paired runs on identical data, seed and schedule, sampler on vs off."""
    if not cfg.sampler.enabled:
        raise ValueError("comparison needs a sampler variant (ds1 or ds2)")
    featurizer = cfg.featurizer()
    bank = None
    if isinstance(train_data, Dataset):
        noise_mask = train_data.noise_mask if noise_mask is None else noise_mask
        k = train_data.k
        if cfg.features.deformation and cfg.augment_bank > 0:
            bank = deformation_bank(train_data, cfg, featurizer)
        if not cfg.features.deformation or bank is not None:
            train_data = _design(train_data, featurizer)
    if isinstance(test_data, Dataset):
        test_data = _design(test_data, featurizer)
    off = replace(cfg, sampler=replace(cfg.sampler, variant="off"))
    with_run = train(train_data, test_data, cfg, noise_mask=noise_mask, k=k, bank=bank)
    without_run = train(train_data, test_data, off, noise_mask=noise_mask, k=k, bank=bank)
    err_without = without_run.log.column("test_error")
    best_err = float(err_without.min())
    iters_without = iterations_to(without_run.log, best_err)
    iters_with = iterations_to(with_run.log, best_err)
    savings = None if iters_with is None else 1.0 - iters_with / iters_without
    return ComparisonReport(
        with_log=with_run.log,
        without_log=without_run.log,
        final_acc_with=1.0 - with_run.log.records[-1]["test_error"],
        final_acc_without=1.0 - without_run.log.records[-1]["test_error"],
        best_acc_without=1.0 - best_err,
        iters_with=iters_with,
        iters_without=iters_without,
        savings=savings,
        variant=cfg.sampler.variant,
        results=(with_run, without_run),
    )
