"""DropSample: quota-based mini-batch sampling for stroke-based character classifiers."""
__version__ = "0.1.0"

from .sampler import QuotaTable, SampleGroup, GroupThresholds, UpdaterConfig, draw_minibatch
from .strokes import Dataset, StrokeSample, load_dataset, write_dataset, generate_synthetic
from .features import FeatureConfig, FeatureTensor, build_feature_stack
from .classifier import SoftmaxModel
from .trainer import TrainConfig, TrainLog, train, compare_dropsample, noise_audit

__all__ = [
    "QuotaTable", "SampleGroup", "GroupThresholds", "UpdaterConfig", "draw_minibatch",
    "Dataset", "StrokeSample", "load_dataset", "write_dataset", "generate_synthetic",
    "FeatureConfig", "FeatureTensor", "build_feature_stack", "SoftmaxModel",
    "TrainConfig", "TrainLog", "train", "compare_dropsample", "noise_audit",
]
