"""The pinned desk-scale benchmark.

20 classes with 200 training samples each, 5% injected mislabels, DS2,
warm-up over the first quarter of 20k iterations.  Everything that affects
the outcome (data seeds, jitter, feature pipeline, schedule) is fixed here so
the numbers in the acceptance suite are reproducible artifacts.
"""
from __future__ import annotations

import json
from dataclasses import dataclass

from .features import FeatureConfig
from .sampler import UpdaterConfig
from .strokes import generate_synthetic
from .trainer import ComparisonReport, NoiseAudit, TrainConfig, compare_dropsample, noise_audit

BENCHMARK = {
    "classes": 20,
    "train_per_class": 200,
    "test_per_class": 200,
    "mislabel_fraction": 0.05,
    "jitter": 0.05,
    "train_seed": 11,
    "test_seed": 12,
    "glyph_seed": 0,
}

# targets checked by the acceptance suite
SET_SIZE_FRACTION = 0.70
MIN_RECALL = 0.8
MAX_FALSE_DROP = 0.05


def benchmark_config() -> TrainConfig:
    return TrainConfig(
        iterations=20000,
        batch=96,
        lr=2.0,
        lam=0.0,
        sampler=UpdaterConfig("ds2"),
        warmup=0.25,
        features=FeatureConfig.parse("bitmap,dt"),
        pool=4,
        unit_norm=True,
        augment_bank=16,
        deform_strength=2.0,
        seed=0,
        eval_interval=1000,
    )


def benchmark_data():
    b = BENCHMARK
    train = generate_synthetic(b["classes"], b["train_per_class"], b["train_seed"],
                               b["mislabel_fraction"], b["jitter"], b["glyph_seed"])
    test = generate_synthetic(b["classes"], b["test_per_class"], b["test_seed"], 0.0, b["jitter"], b["glyph_seed"])
    return train, test


@dataclass
class BenchmarkResult:
    report: ComparisonReport
    audit: NoiseAudit
    m: int

    @property
    def set_fraction(self):
        return self.report.with_log.records[-1]["set_size"] / self.m

    def summary(self):
        r = self.report
        return {
            "final_acc_with": r.final_acc_with,
            "final_acc_without": r.final_acc_without,
            "iters_with": r.iters_with,
            "iters_without": r.iters_without,
            "savings": r.savings,
            "set_fraction": self.set_fraction,
            "recall": self.audit.recall,
            "false_drop": self.audit.false_drop,
        }


def run_benchmark(cfg: TrainConfig | None = None) -> BenchmarkResult:
    train, test = benchmark_data()
    report = compare_dropsample(train, test, cfg or benchmark_config())
    return BenchmarkResult(report, noise_audit(report.with_log, train), len(train))


if __name__ == "__main__":
    print(json.dumps(run_benchmark().summary(), indent=2))
