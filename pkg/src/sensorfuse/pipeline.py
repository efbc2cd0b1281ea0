"""End-to-end experiment protocols.

Splits the target first, enhances it with each source's imputed channels in
cascade order, trains the window classifier on the train side only, and
evaluates on the untouched test side. The experiment runners below cover the
masked-modality noise baselines, source-augmentation comparisons, and the
batchnorm/jacobian ablation grid. Every fitting step can be recorded in an
AccessLog so leakage across the split is checkable after the fact.
"""
from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .dataset import (
    ChannelSchema,
    SensorDataset,
    SplitResult,
    block_split,
    channel_stats,
    drop_channels,
    select_channels,
)
from .errors import NoSharedChannels, SchemaMismatch
from .imputer import Imputer, NoiseSpec, add_gaussian_noise, fit_imputer, sensor_impute
from .nn import (
    DenseNet,
    TrainConfig,
    accuracy,
    cross_entropy_loss,
    logits,
    make_classifier,
    train_classifier,
)
from .preprocess import WindowConfig, windowize

# offset stream so imputer training seeds never collide with detector seeds
_IMPUTER_SEED_STRIDE = 7919


# ---------------------------------------------------------------------------
# access log
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class AccessEntry:
    domain_id: str
    block_index: int  # origin block when provenance is present, else position
    start: int
    stop: int
    purpose: str


@dataclass
class AccessLog:
    """Record of every sample range consumed by a fitting step."""

    entries: list[AccessEntry] = field(default_factory=list)

    def record(self, ds: SensorDataset, purpose: str) -> None:
        for i, b in enumerate(ds.blocks):
            origin, start, stop = b.provenance if b.provenance else (i, 0, b.length)
            self.entries.append(AccessEntry(ds.domain_id, origin, start, stop, purpose))


def leakage_violations(log: AccessLog, split: SplitResult) -> list[AccessEntry]:
    """Training accesses that overlap the split's test ranges."""
    test_ranges: dict[int, list[tuple[int, int]]] = {}
    domain = split.test.domain_id
    for e in split.manifest:
        spans = [e.test_head, e.test_tail]
        test_ranges[e.block_index] = [(a, b) for a, b in spans if b > a]
    bad = []
    for entry in log.entries:
        if entry.domain_id != domain:
            continue
        for a, b in test_ranges.get(entry.block_index, []):
            if entry.start < b and a < entry.stop:
                bad.append(entry)
                break
    return bad


# ---------------------------------------------------------------------------
# configuration and report types
# ---------------------------------------------------------------------------

@dataclass
class ScenarioConfig:
    """One named experiment condition: a target, its sources, and toggles."""

    name: str
    target: SensorDataset
    sources: list[SensorDataset] = field(default_factory=list)
    use_batchnorm: bool = False
    use_jacobian: bool = False
    detector_hidden: tuple[int, ...] = (32,)
    imputer_hidden: tuple[int, ...] = (32,)
    detector_train: TrainConfig = field(default_factory=TrainConfig)
    imputer_train: TrainConfig = field(default_factory=TrainConfig)
    wcfg: WindowConfig = field(default_factory=WindowConfig)
    jacobian_coeff: float = 1e-3
    seeds: tuple[int, ...] = (0, 1, 2, 3, 4)
    test_fraction: float = 0.2
    cascade_feeds_forward: bool = False
    imputer_batchnorm: bool = False  # imputer nets; the ablation toggle is detector-side

    def __post_init__(self):
        if not self.seeds:
            raise ValueError("need at least one seed")
        if self.jacobian_coeff < 0:
            raise ValueError("jacobian_coeff must be >= 0")


@dataclass(frozen=True)
class RunRecord:
    scenario: str
    seed: int
    accuracy: float
    cross_entropy: float
    imputer_mse: dict[str, float]
    basis_fingerprint: str  # untransformed test split, shared across variants
    eval_fingerprint: str  # test data as actually consumed by the detector

    def __post_init__(self):
        if not 0.0 <= self.accuracy <= 1.0:
            raise ValueError(f"accuracy {self.accuracy} outside [0, 1]")
        if self.cross_entropy < 0:
            raise ValueError("cross-entropy must be nonnegative")


@dataclass(frozen=True)
class ScenarioSummary:
    mean_accuracy: float
    std_accuracy: float
    mean_cross_entropy: float
    std_cross_entropy: float
    n_seeds: int


@dataclass
class ExperimentReport:
    records: list[RunRecord] = field(default_factory=list)

    def scenario_names(self) -> list[str]:
        seen: list[str] = []
        for r in self.records:
            if r.scenario not in seen:
                seen.append(r.scenario)
        return seen

    def aggregate(self) -> dict[str, ScenarioSummary]:
        out = {}
        for name in self.scenario_names():
            acc = np.array([r.accuracy for r in self.records if r.scenario == name])
            ce = np.array([r.cross_entropy for r in self.records if r.scenario == name])
            out[name] = ScenarioSummary(float(acc.mean()), float(acc.std()),
                                        float(ce.mean()), float(ce.std()), len(acc))
        return out


# ---------------------------------------------------------------------------
# cascaded enhancement
# ---------------------------------------------------------------------------

@dataclass
class CascadeStep:
    source_index: int
    imputer: Imputer
    apply_stats: dict[str, tuple[float, float]]  # target-side standardization


def _fit_view(source: SensorDataset, current: SensorDataset,
              feeds_forward: bool) -> tuple[SensorDataset, ChannelSchema]:
    """Restrict one cascade step to its legal input/output channels.

    Inputs are the channels shared with the original target unless
    feeds_forward is set, in which case previously generated channels may
    serve as inputs too. Outputs are the source channels the current
    (possibly already enhanced) target still lacks.
    """
    current_names = set(current.schema.names)
    if feeds_forward:
        visible = current.schema.names
    else:
        visible = tuple(c.name for c in current.schema.channels
                        if c.generated_from is None)
    shared = [n for n in visible if n in set(source.schema.names)]
    extra = [n for n in source.schema.names if n not in current_names]
    if not shared:
        raise NoSharedChannels(
            f"{source.domain_id!r} shares no channels with the target")
    source_view = select_channels(source, shared + extra)
    fit_schema = ChannelSchema(tuple(
        current.schema.channel(n) for n in visible if n in set(shared)))
    return source_view, fit_schema


def fit_cascade(train_target: SensorDataset, sources: list[SensorDataset],
                cfg: ScenarioConfig, seed: int | None = None,
                log: AccessLog | None = None) -> tuple[list[CascadeStep], SensorDataset]:
    """Fit one imputer per contributing source and enhance the train side.

    Sources are visited in list order; a source whose channels are already
    all present is skipped. Apply-time standardization statistics are taken
    from the train-side target as it stood before that step.
    """
    base_seed = cfg.imputer_train.seed if seed is None else seed
    current = train_target
    steps: list[CascadeStep] = []
    for i, source in enumerate(sources):
        if not set(source.schema.names) - set(current.schema.names):
            continue
        source_view, fit_schema = _fit_view(source, current, cfg.cascade_feeds_forward)
        if log is not None:
            log.record(source_view, f"imputer-fit:{source.domain_id}")
        icfg = replace(cfg.imputer_train, seed=base_seed + _IMPUTER_SEED_STRIDE * (i + 1))
        imp = fit_imputer(source_view, fit_schema, icfg, cfg.wcfg,
                          hidden=cfg.imputer_hidden, batch_norm=cfg.imputer_batchnorm)
        stats = channel_stats(current, imp.shared_channels)
        if log is not None:
            log.record(current, f"impute-stats:{source.domain_id}")
        current = sensor_impute(current, source_view, icfg, cfg.wcfg,
                                imputer=imp, target_stats=stats)
        steps.append(CascadeStep(i, imp, stats))
    return steps, current


def apply_cascade(target: SensorDataset, sources: list[SensorDataset],
                  steps: list[CascadeStep], cfg: ScenarioConfig) -> SensorDataset:
    """Replay fitted cascade steps on another slice of the same target."""
    current = target
    for step in steps:
        source = sources[step.source_index]
        view = select_channels(
            source, list(step.imputer.shared_channels) + list(step.imputer.generated_channels))
        current = sensor_impute(current, view, cfg.imputer_train, cfg.wcfg,
                                imputer=step.imputer, target_stats=step.apply_stats)
    return current


def enhance_target(target: SensorDataset, sources: list[SensorDataset],
                   cfg: ScenarioConfig) -> SensorDataset:
    """Fold every source's extra channels into the target, in list order."""
    _, enhanced = fit_cascade(target, sources, cfg)
    return enhanced


# ---------------------------------------------------------------------------
# detector
# ---------------------------------------------------------------------------

def train_detector(enhanced: SensorDataset, cfg: ScenarioConfig,
                   seed: int | None = None,
                   log: AccessLog | None = None) -> DenseNet:
    """Train the window classifier on an (already split) train-side dataset."""
    if log is not None:
        log.record(enhanced, "detector-train")
    x, y = windowize(enhanced, cfg.wcfg)
    run_seed = cfg.detector_train.seed if seed is None else seed
    tcfg = replace(cfg.detector_train, seed=run_seed,
                   jacobian_coeff=cfg.jacobian_coeff if cfg.use_jacobian else 0.0)
    net = make_classifier(x.shape[1], len(enhanced.label_set),
                          hidden=cfg.detector_hidden,
                          batch_norm=cfg.use_batchnorm, seed=run_seed)
    net.schema_fingerprint = enhanced.schema.fingerprint()
    net, _ = train_classifier(net, x, y, tcfg)
    return net


def evaluate(net: DenseNet, test: SensorDataset, wcfg: WindowConfig) -> tuple[float, float]:
    """Window accuracy and mean cross-entropy on a test-side dataset."""
    if net.schema_fingerprint and net.schema_fingerprint != test.schema.fingerprint():
        raise SchemaMismatch("detector was trained against a different channel schema")
    x, y = windowize(test, wcfg)
    return accuracy(net, x, y), cross_entropy_loss(logits(net, x), y)


# ---------------------------------------------------------------------------
# experiment runners
# ---------------------------------------------------------------------------

def run_scenario(cfg: ScenarioConfig, log: AccessLog | None = None) -> ExperimentReport:
    """All seeds of one scenario: split, enhance, train, evaluate."""
    report = ExperimentReport()
    split = block_split(cfg.target, cfg.test_fraction)
    for seed in cfg.seeds:
        steps, train_enh = fit_cascade(split.train, cfg.sources, cfg, seed=seed, log=log)
        test_enh = apply_cascade(split.test, cfg.sources, steps, cfg)
        net = train_detector(train_enh, cfg, seed=seed, log=log)
        acc, ce = evaluate(net, test_enh, cfg.wcfg)
        report.records.append(RunRecord(
            cfg.name, seed, acc, ce,
            {cfg.sources[s.source_index].domain_id: s.imputer.holdout_mse
             for s in steps},
            split.test.fingerprint(), test_enh.fingerprint()))
    return report


def run_scenarios(scenarios: list[ScenarioConfig],
                  log: AccessLog | None = None) -> ExperimentReport:
    """Run several scenarios (e.g. the source-augmentation ladder) in order."""
    if not scenarios:
        raise ValueError("need at least one scenario")
    report = ExperimentReport()
    for sc in scenarios:
        report.records.extend(run_scenario(sc, log=log).records)
    return report


TOGGLE_GRID = (
    ("baseline", False, False),
    ("batchnorm", True, False),
    ("jacobian", False, True),
    ("batchnorm+jacobian", True, True),
)


def run_ablation(cfg: ScenarioConfig, log: AccessLog | None = None) -> ExperimentReport:
    """The four-way batchnorm/jacobian toggle grid on one scenario."""
    variants = []
    for suffix, bn, jac in TOGGLE_GRID:
        variants.append(replace(
            cfg, name=f"{cfg.name}/{suffix}" if cfg.name else suffix,
            use_batchnorm=bn, use_jacobian=jac))
    return run_scenarios(variants, log=log)


# ---------------------------------------------------------------------------
# masked-modality noise baselines
# ---------------------------------------------------------------------------

@dataclass
class MaskExperimentConfig:
    """Mask one channel of a complete dataset and restore it four ways."""

    dataset: SensorDataset
    masked_channel: str
    detector_hidden: tuple[int, ...] = (32,)
    imputer_hidden: tuple[int, ...] = (32,)
    detector_train: TrainConfig = field(default_factory=TrainConfig)
    imputer_train: TrainConfig = field(default_factory=TrainConfig)
    wcfg: WindowConfig = field(default_factory=WindowConfig)
    seeds: tuple[int, ...] = (0, 1, 2, 3, 4)
    test_fraction: float = 0.2

    def __post_init__(self):
        if not self.seeds:
            raise ValueError("need at least one seed")
        self.dataset.schema.index(self.masked_channel)  # raises UnknownChannel


NOISE_VARIANTS = ("original", "imputed", "imputed_noise", "pure_noise")


def run_noise_baseline_experiment(cfg: MaskExperimentConfig,
                                  log: AccessLog | None = None) -> ExperimentReport:
    """Train detectors on real, imputed, noise-corrupted, and pure-noise data.

    The split is made once; all four variants are deterministic functions of
    the same train/test sides, so every record carries the same basis
    fingerprint. Only the masked channel differs between variants.
    """
    split = block_split(cfg.dataset, cfg.test_fraction)
    basis = split.test.fingerprint()
    ch = cfg.masked_channel
    report = ExperimentReport()

    masked_train = drop_channels(split.train, [ch])
    masked_test = drop_channels(split.test, [ch])

    for seed in cfg.seeds:
        icfg = replace(cfg.imputer_train, seed=seed + _IMPUTER_SEED_STRIDE)
        if log is not None:
            log.record(split.train, "imputer-fit:mask")
        imp = fit_imputer(split.train, masked_train.schema, icfg, cfg.wcfg,
                          hidden=cfg.imputer_hidden)
        stats = channel_stats(masked_train, imp.shared_channels)
        if log is not None:
            log.record(masked_train, "impute-stats:mask")
        train_imp = sensor_impute(masked_train, split.train, icfg, cfg.wcfg,
                                  imputer=imp, target_stats=stats)
        test_imp = sensor_impute(masked_test, split.train, icfg, cfg.wcfg,
                                 imputer=imp, target_stats=stats)

        variants = {
            "original": (split.train, split.test),
            "imputed": (train_imp, test_imp),
            "imputed_noise": (
                add_gaussian_noise(train_imp, {ch}, NoiseSpec("additive_gaussian", 4 * seed)),
                add_gaussian_noise(test_imp, {ch}, NoiseSpec("additive_gaussian", 4 * seed + 1)),
            ),
            "pure_noise": (
                add_gaussian_noise(split.train, {ch}, NoiseSpec("pure_gaussian", 4 * seed + 2)),
                add_gaussian_noise(split.test, {ch}, NoiseSpec("pure_gaussian", 4 * seed + 3)),
            ),
        }
        for name in NOISE_VARIANTS:
            train_ds, test_ds = variants[name]
            sc = ScenarioConfig(name, train_ds, detector_hidden=cfg.detector_hidden,
                                detector_train=cfg.detector_train, wcfg=cfg.wcfg,
                                seeds=(seed,))
            net = train_detector(train_ds, sc, seed=seed, log=log)
            acc, ce = evaluate(net, test_ds, cfg.wcfg)
            mse = {split.train.domain_id: imp.holdout_mse} if name != "original" else {}
            report.records.append(RunRecord(name, seed, acc, ce, mse,
                                            basis, test_ds.fingerprint()))
    return report
