"""Cross-source channel imputation.

A source domain often records channels the target lacks. This module fits a
per-source regressor from the channels both domains share to the channels
only the source has, then applies it to the target so downstream models see
the richer channel set. Inputs are standardized per domain (each domain's own
statistics) before entering the regressor, which keeps the shared-channel
distributions aligned between fit time and apply time. Also provides the
noise channels used as fusion baselines.
"""
from __future__ import annotations

import io
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .dataset import (
    Block,
    Channel,
    ChannelSchema,
    SensorDataset,
    append_channels,
    channel_stats,
    common_channels,
    extra_in_source,
    select_channels,
)
from .errors import (
    MissingTruthChannels,
    NoExtraChannels,
    NoSharedChannels,
    ShapeMismatch,
    UnknownChannel,
    WindowTooLarge,
)
from .nn import DenseNet, TrainConfig, forward, load_net, make_regressor, mse_loss, save_net, train_regressor
from .preprocess import WindowConfig, window_starts, windowize_indexed

IMPUTER_FORMAT_VERSION = 1

# the one supported noise scale rule: sigma = 2 * max |reference channel|
SCALE_RULE = "2x_max_abs_reference"


# ---------------------------------------------------------------------------
# types
# ---------------------------------------------------------------------------

@dataclass
class Imputer:
    """Fitted mapping from shared channels to one source's extra channels.

    `shared_channels` fixes the input order (target schema order) and
    `generated_channels` the output order (source schema order). `alignment`
    holds the source-side (mean, std) of each shared channel captured at fit
    time; apply-time inputs are standardized with the target's own statistics
    instead, so both domains enter the net as roughly zero-mean unit-variance.
    The net consumes and produces whole windows, flattened channel-major.
    """

    shared_channels: tuple[str, ...]
    generated_channels: tuple[str, ...]
    net: DenseNet
    alignment: dict[str, tuple[float, float]]
    output_stats: dict[str, tuple[float, float]]
    source_domain_id: str
    window_samples: int
    holdout_mse: float = math.nan

    def __post_init__(self):
        w = self.window_samples
        if self.net.layers[0].w.shape[0] != len(self.shared_channels) * w:
            raise ShapeMismatch("net input width != shared channels * window")
        if self.net.layers[-1].w.shape[1] != len(self.generated_channels) * w:
            raise ShapeMismatch("net output width != generated channels * window")
        for name, (_, std) in {**self.alignment, **self.output_stats}.items():
            if not std > 0:
                raise ValueError(f"channel {name!r}: standardization std must be > 0")


@dataclass(frozen=True)
class NoiseSpec:
    """Deterministic Gaussian noise: sigma = 2 * max abs of the channel."""

    kind: str  # additive_gaussian | pure_gaussian
    seed: int = 0
    scale_rule: str = SCALE_RULE

    def __post_init__(self):
        if self.kind not in ("additive_gaussian", "pure_gaussian"):
            raise ValueError(f"unknown noise kind {self.kind!r}")
        if self.scale_rule != SCALE_RULE:
            raise ValueError(f"unsupported scale rule {self.scale_rule!r}")


@dataclass
class ImputeReport:
    per_channel: dict[str, float] = field(default_factory=dict)
    aggregate: float = math.nan
    window_count: int = 0


# ---------------------------------------------------------------------------
# standardization
# ---------------------------------------------------------------------------

def standardize_channels(ds: SensorDataset, stats: dict[str, tuple[float, float]]) -> SensorDataset:
    """Per-channel (x - mean) / std using the supplied statistics."""
    mean = np.array([stats[n][0] for n in ds.schema.names])
    std = np.array([stats[n][1] for n in ds.schema.names])
    blocks = [Block(b.subject_id, (b.samples - mean) / std, b.labels.copy(), b.provenance)
              for b in ds.blocks]
    return SensorDataset(ds.domain_id, ds.schema, ds.label_set, blocks, ds.rate)


def _ordered_shared(target_schema: ChannelSchema, source_schema: ChannelSchema) -> tuple[str, ...]:
    shared = common_channels(target_schema, source_schema)
    return tuple(n for n in target_schema.names if n in shared)


# ---------------------------------------------------------------------------
# fitting
# ---------------------------------------------------------------------------

def fit_imputer(source: SensorDataset, target_schema: ChannelSchema,
                cfg: TrainConfig = TrainConfig(), wcfg: WindowConfig = WindowConfig(),
                hidden=(64, 64), batch_norm: bool = False) -> Imputer:
    """Fit shared-window -> extra-window regression on one source domain.

    Inputs and regression targets are standardized with source statistics
    (inputs recorded as `alignment`, targets as `output_stats`). The last
    tenth of each block's windows is held out and the unweighted MSE on that
    tail is stored as `holdout_mse`.
    """
    shared = _ordered_shared(target_schema, source.schema)
    if not shared:
        raise NoSharedChannels(
            f"{source.domain_id!r} shares no channels with the target schema")
    extra = extra_in_source(target_schema, source.schema)
    if not extra:
        raise NoExtraChannels(f"{source.domain_id!r} adds no channels beyond the target")
    generated = tuple(n for n in source.schema.names if n in extra)

    alignment = channel_stats(source, shared)
    output_stats = channel_stats(source, generated)
    ds_in = standardize_channels(select_channels(source, shared), alignment)
    ds_out = standardize_channels(select_channels(source, generated), output_stats)

    x, _, index = windowize_indexed(ds_in, wcfg)
    y, _, _ = windowize_indexed(ds_out, wcfg)

    # per-block tail holdout: last tenth of each block's windows
    block_ids = np.array([bi for bi, _ in index])
    hold = np.zeros(len(index), dtype=bool)
    for bi in np.unique(block_ids):
        rows = np.flatnonzero(block_ids == bi)
        k = len(rows) // 10
        if k:
            hold[rows[-k:]] = True

    net = make_regressor(x.shape[1], y.shape[1], hidden=hidden,
                         batch_norm=batch_norm, seed=cfg.seed)
    net, _ = train_regressor(net, x[~hold], y[~hold], cfg)

    holdout_mse = math.nan
    if hold.any():
        holdout_mse = mse_loss(forward(net, x[hold]), y[hold])

    return Imputer(shared, generated, net, alignment, output_stats,
                   source.domain_id, wcfg.window_samples, holdout_mse)


# ---------------------------------------------------------------------------
# applying
# ---------------------------------------------------------------------------

def _predict_block(imp: Imputer, standardized: np.ndarray, stride: int) -> np.ndarray:
    """Impute one block: window, predict, and stride-average the overlaps.

    `standardized` is (T, n_shared) already in standardized space. Returns
    (T, n_generated) still standardized. A final window anchored at T - W is
    added when the stride pattern would leave the tail uncovered.
    """
    t, w = standardized.shape[0], imp.window_samples
    if t < w:
        raise WindowTooLarge(f"block length {t} is shorter than the window ({w})")
    starts = window_starts(t, WindowConfig(w, stride))
    if starts[-1] != t - w:
        starts = np.append(starts, t - w)
    x = np.stack([standardized[s:s + w].T.ravel() for s in starts])
    preds = forward(imp.net, x).reshape(len(starts), len(imp.generated_channels), w)
    total = np.zeros((t, len(imp.generated_channels)))
    count = np.zeros(t)
    for s, p in zip(starts, preds):
        total[s:s + w] += p.T
        count[s:s + w] += 1.0
    return total / count[:, None]


def sensor_impute(target: SensorDataset, source: SensorDataset,
                  cfg: TrainConfig = TrainConfig(), wcfg: WindowConfig = WindowConfig(),
                  imputer: Imputer | None = None,
                  target_stats: dict[str, tuple[float, float]] | None = None,
                  hidden=(64, 64), batch_norm: bool = False) -> SensorDataset:
    """Append the source's extra channels to the target via imputation.

    Returns the target unchanged (a copy) when the source adds no channels.
    Existing samples and labels are preserved bit-exact; generated channels
    are tagged with the source domain id. `target_stats` lets the caller pin
    apply-time standardization to train-split statistics; by default the
    statistics of `target` itself are used.
    """
    if not common_channels(target.schema, source.schema):
        raise NoSharedChannels(
            f"{target.domain_id!r} and {source.domain_id!r} share no channels")
    if not extra_in_source(target.schema, source.schema):
        return target.copy()
    imp = imputer if imputer is not None else fit_imputer(
        source, target.schema, cfg, wcfg, hidden=hidden, batch_norm=batch_norm)
    if imp.window_samples != wcfg.window_samples:
        raise ShapeMismatch(
            f"imputer was fitted with window {imp.window_samples}, "
            f"got {wcfg.window_samples}")

    stats = target_stats if target_stats is not None else channel_stats(
        target, imp.shared_channels)
    ds_in = standardize_channels(select_channels(target, imp.shared_channels), stats)

    out_mean = np.array([imp.output_stats[n][0] for n in imp.generated_channels])
    out_std = np.array([imp.output_stats[n][1] for n in imp.generated_channels])
    per_block = []
    for b in ds_in.blocks:
        gen = _predict_block(imp, b.samples, wcfg.stride_samples)
        per_block.append(gen * out_std + out_mean)

    new_channels = [
        Channel(n, source.schema.modality_of(n), target.rate,
                generated_from=imp.source_domain_id)
        for n in imp.generated_channels
    ]
    return append_channels(target, new_channels, per_block)


# ---------------------------------------------------------------------------
# evaluation
# ---------------------------------------------------------------------------

def impute_report(imp: Imputer, holdout: SensorDataset,
                  wcfg: WindowConfig | None = None) -> ImputeReport:
    """Per-channel and aggregate reconstruction MSE in standardized space.

    The holdout must carry the true extra channels (source-side data). The
    default window stride equals the window length (no overlap weighting).
    """
    have = set(holdout.schema.names)
    missing = [n for n in imp.shared_channels + imp.generated_channels if n not in have]
    if missing:
        raise MissingTruthChannels(f"holdout lacks channels {missing}")
    if wcfg is None:
        wcfg = WindowConfig(imp.window_samples, imp.window_samples)
    elif wcfg.window_samples != imp.window_samples:
        raise ShapeMismatch(
            f"imputer was fitted with window {imp.window_samples}, "
            f"got {wcfg.window_samples}")

    ds_in = standardize_channels(select_channels(holdout, imp.shared_channels),
                                 imp.alignment)
    ds_out = standardize_channels(select_channels(holdout, imp.generated_channels),
                                  imp.output_stats)
    x, _, _ = windowize_indexed(ds_in, wcfg)
    y, _, _ = windowize_indexed(ds_out, wcfg)
    w = imp.window_samples
    pred = forward(imp.net, x).reshape(len(x), len(imp.generated_channels), w)
    truth = y.reshape(len(y), len(imp.generated_channels), w)
    sq = (pred - truth) ** 2
    per_channel = {n: float(sq[:, j].mean())
                   for j, n in enumerate(imp.generated_channels)}
    return ImputeReport(per_channel, float(sq.mean()), len(x))


# ---------------------------------------------------------------------------
# noise baselines
# ---------------------------------------------------------------------------

def add_gaussian_noise(ds: SensorDataset, channels, spec: NoiseSpec) -> SensorDataset:
    """Corrupt the named channels with zero-mean Gaussian noise.

    sigma is twice the largest absolute value the channel takes across the
    whole dataset. additive_gaussian adds the noise on top of the signal;
    pure_gaussian discards the signal and keeps only the noise. Channels are
    processed in schema order so the result depends only on spec.seed.
    """
    names = [n for n in ds.schema.names if n in set(channels)]
    unknown = set(channels) - set(ds.schema.names)
    if unknown:
        raise UnknownChannel(f"channels {sorted(unknown)} not in schema")
    sigma = {n: 2.0 * float(np.max(np.abs(ds.channel_values(n)))) for n in names}

    rng = np.random.default_rng(spec.seed)
    out = ds.copy()
    for n in names:
        j = ds.schema.index(n)
        for b in out.blocks:
            noise = rng.normal(0.0, sigma[n], size=b.length)
            if spec.kind == "additive_gaussian":
                b.samples[:, j] += noise
            else:
                b.samples[:, j] = noise
    return out


# ---------------------------------------------------------------------------
# persistence
# ---------------------------------------------------------------------------

def save_imputer(imp: Imputer, path) -> None:
    """One npz: the net's own file embedded verbatim plus an imputer header."""
    buf = io.BytesIO()
    save_net(imp.net, buf)
    meta = {
        "version": IMPUTER_FORMAT_VERSION,
        "shared_channels": list(imp.shared_channels),
        "generated_channels": list(imp.generated_channels),
        "alignment": {n: list(v) for n, v in imp.alignment.items()},
        "output_stats": {n: list(v) for n, v in imp.output_stats.items()},
        "source_domain_id": imp.source_domain_id,
        "window_samples": imp.window_samples,
        "holdout_mse": imp.holdout_mse,
    }
    np.savez(Path(path),
             meta=np.frombuffer(json.dumps(meta).encode(), dtype=np.uint8),
             net=np.frombuffer(buf.getvalue(), dtype=np.uint8))


def load_imputer(path) -> Imputer:
    with np.load(Path(path)) as data:
        meta = json.loads(bytes(data["meta"]).decode())
        if meta["version"] != IMPUTER_FORMAT_VERSION:
            raise ValueError(f"unsupported imputer format version {meta['version']}")
        net = load_net(io.BytesIO(bytes(data["net"])))
    return Imputer(
        tuple(meta["shared_channels"]),
        tuple(meta["generated_channels"]),
        net,
        {n: tuple(v) for n, v in meta["alignment"].items()},
        {n: tuple(v) for n, v in meta["output_stats"].items()},
        meta["source_domain_id"],
        meta["window_samples"],
        meta["holdout_mse"],
    )
