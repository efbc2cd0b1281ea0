"""Multi-source wearable-sensor fusion toolkit.

Imputes modalities missing from a target sensor layout using differently
instrumented source datasets, then trains fatigue detectors on the enhanced
data. Includes the signal-conditioning chain, a small deterministic neural
network stack, diagnostic estimators, and a synthetic data generator for
end-to-end validation.
"""

__version__ = "0.1.0"

from .dataset import (
    Block,
    Channel,
    ChannelSchema,
    SensorDataset,
    block_split,
    common_channels,
    extra_in_source,
    load_dataset,
    missing_in_source,
    save_dataset,
    validate,
)
from .imputer import Imputer, NoiseSpec, add_gaussian_noise, fit_imputer, sensor_impute
from .nn import DenseNet, TrainConfig, load_net, save_net
from .pipeline import (
    AccessLog,
    ExperimentReport,
    MaskExperimentConfig,
    ScenarioConfig,
    enhance_target,
    evaluate,
    leakage_violations,
    run_ablation,
    run_noise_baseline_experiment,
    run_scenario,
    run_scenarios,
    train_detector,
)
from .preprocess import WindowConfig, apply_plan, windowize
from .report import write_report
from .synth import ChannelSpec, SynthConfig, generate_multidomain
from .theory import mutual_info_binned, proxy_a_distance, theorem1_direction_check

__all__ = [
    "__version__",
    "Block", "Channel", "ChannelSchema", "SensorDataset", "block_split",
    "common_channels", "extra_in_source", "missing_in_source",
    "load_dataset", "save_dataset", "validate",
    "Imputer", "NoiseSpec", "add_gaussian_noise", "fit_imputer", "sensor_impute",
    "DenseNet", "TrainConfig", "load_net", "save_net",
    "AccessLog", "ExperimentReport", "MaskExperimentConfig", "ScenarioConfig",
    "enhance_target", "evaluate", "leakage_violations", "run_ablation",
    "run_noise_baseline_experiment", "run_scenario", "run_scenarios",
    "train_detector",
    "WindowConfig", "apply_plan", "windowize",
    "write_report",
    "ChannelSpec", "SynthConfig", "generate_multidomain",
    "mutual_info_binned", "proxy_a_distance", "theorem1_direction_check",
]
