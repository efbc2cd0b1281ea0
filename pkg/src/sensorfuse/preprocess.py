"""Signal conditioning: adaptive noise cancellation, subspace denoising,
outlier repair, uniform-rate resampling, and windowing into feature rows.

Channel-level operations take and return 1-D float arrays and are pure.
Dataset-level application is driven by an ordered plan of steps keyed by
modality tag, so experiment configs fully determine what ran; apply_plan
returns a provenance record alongside the conditioned dataset.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .dataset import Block, SensorDataset
from .errors import (
    DegenerateInput,
    LengthMismatch,
    TooShort,
    WindowTooLarge,
)

MAD_SCALE = 1.4826  # MAD-to-sigma factor for Gaussian data


@dataclass(frozen=True)
class RlsConfig:
    filter_order: int = 8
    forgetting: float = 0.999
    init_scale: float = 1e4  # inverse-correlation initialization P(0) = init_scale * I

    def __post_init__(self):
        if self.filter_order < 1:
            raise ValueError("filter_order must be >= 1")
        if not 0 < self.forgetting <= 1:
            raise ValueError("forgetting must lie in (0, 1]")
        if not self.init_scale > 0:
            raise ValueError("init_scale must be > 0")


@dataclass(frozen=True)
class SsaConfig:
    window_len: int = 20
    keep_components: int = 2

    def __post_init__(self):
        if self.window_len < 2:
            raise ValueError("window_len must be >= 2")
        if not 1 <= self.keep_components <= self.window_len:
            raise ValueError("keep_components must lie in 1..window_len")


@dataclass(frozen=True)
class OutlierConfig:
    window_len: int = 7
    threshold_mads: float = 3.0

    def __post_init__(self):
        if self.window_len < 3 or self.window_len % 2 == 0:
            raise ValueError("window_len must be odd and >= 3")
        if not self.threshold_mads > 0:
            raise ValueError("threshold_mads must be > 0")


@dataclass(frozen=True)
class WindowConfig:
    window_samples: int = 128
    stride_samples: int = 32
    label_rule: str = "majority"

    def __post_init__(self):
        if self.window_samples < 1 or self.stride_samples < 1:
            raise ValueError("window and stride must be >= 1")
        if self.label_rule not in ("majority", "last"):
            raise ValueError("label_rule must be 'majority' or 'last'")


# ---------------------------------------------------------------------------
# adaptive noise cancellation
# ---------------------------------------------------------------------------

def rls_filter(signal, reference, cfg: RlsConfig = RlsConfig()):
    """Exponentially weighted recursive least squares canceller.

    Predicts the component of `signal` explainable from lagged `reference`
    samples and returns (residual, final tap weights). The residual is the
    a priori error d_n - w_{n-1}^T u_n. With forgetting = 1 the recursion
    solves the growing-window ridge problem with ridge weight 1/init_scale.
    """
    d = np.asarray(signal, dtype=np.float64)
    r = np.asarray(reference, dtype=np.float64)
    if d.shape != r.shape or d.ndim != 1:
        raise LengthMismatch(f"signal {d.shape} and reference {r.shape} must be equal-length 1-D")
    n, order = d.size, cfg.filter_order
    if n < order:
        raise DegenerateInput(f"need at least filter_order={order} samples, got {n}")
    lam = cfg.forgetting
    w = np.zeros(order)
    p = np.eye(order) * cfg.init_scale
    padded = np.concatenate([np.zeros(order - 1), r])
    out = np.empty(n)
    for i in range(n):
        u = padded[i:i + order][::-1]  # [r_i, r_{i-1}, ..., r_{i-order+1}]
        pi = p @ u
        denom = lam + u @ pi
        k = pi / denom
        e = d[i] - w @ u
        out[i] = e
        w = w + k * e
        p = (p - np.outer(k, pi)) / lam
    return out, w


def rls_denoise(signal, reference, cfg: RlsConfig = RlsConfig()):
    """Residual of `signal` after cancelling what lagged `reference` predicts."""
    return rls_filter(signal, reference, cfg)[0]


# ---------------------------------------------------------------------------
# singular-spectrum decomposition
# ---------------------------------------------------------------------------

def _diagonal_average(m: np.ndarray, n: int) -> np.ndarray:
    """Average each anti-diagonal of an L x K matrix into one sample (L+K-1 = n)."""
    l, k = m.shape
    idx = np.add.outer(np.arange(l), np.arange(k)).ravel()
    sums = np.bincount(idx, weights=m.ravel(), minlength=n)
    counts = np.bincount(idx, minlength=n)
    return sums / counts


def ssa_decompose(signal, cfg: SsaConfig = SsaConfig()):
    """Split a sequence into rank-1 trajectory components, strongest first.

    Embeds the signal in an L x K Hankel trajectory matrix (K = N - L + 1),
    takes its SVD, and diagonal-averages each rank-1 term back into a
    sequence. The L components sum to the input exactly up to float error.
    """
    x = np.asarray(signal, dtype=np.float64)
    n, l = x.size, cfg.window_len
    if n < 2 * l:
        raise TooShort(f"need at least 2*window_len={2 * l} samples, got {n}")
    k = n - l + 1
    traj = np.lib.stride_tricks.sliding_window_view(x, l).T  # L x K Hankel
    u, s, vt = np.linalg.svd(traj, full_matrices=False)
    comps = []
    for i in range(l):
        rank1 = s[i] * np.outer(u[:, i], vt[i])
        comps.append(_diagonal_average(rank1, n))
    return comps


def ssa_denoise(signal, cfg: SsaConfig = SsaConfig()):
    """Sum of the top keep_components trajectory components."""
    comps = ssa_decompose(signal, cfg)
    return np.sum(comps[:cfg.keep_components], axis=0)


# ---------------------------------------------------------------------------
# outlier repair
# ---------------------------------------------------------------------------

def max_outlier_filter(signal, cfg: OutlierConfig = OutlierConfig()):
    """Hampel-style repair: replace samples far from their window median.

    A sample deviating from the centered-window median by more than
    threshold_mads * 1.4826 * MAD becomes the median. Zero-MAD windows use a
    strict rule: any sample differing from the median at all is replaced.
    Edge samples without a full window pass through unchanged. All decisions
    are made against the input, then applied at once.
    """
    x = np.asarray(signal, dtype=np.float64)
    w = cfg.window_len
    if x.size < w:
        raise TooShort(f"need at least window_len={w} samples, got {x.size}")
    half = w // 2
    windows = np.lib.stride_tricks.sliding_window_view(x, w)
    med = np.median(windows, axis=1)
    mad = np.median(np.abs(windows - med[:, None]), axis=1)
    centers = x[half:x.size - half]
    dev = np.abs(centers - med)
    cut = cfg.threshold_mads * MAD_SCALE * mad
    replace = np.where(mad == 0.0, dev > 0.0, dev > cut)
    out = x.copy()
    out[half:x.size - half] = np.where(replace, med, centers)
    return out


# ---------------------------------------------------------------------------
# resampling
# ---------------------------------------------------------------------------

def resample(signal, from_rate: float, to_rate: float = 32.0):
    """Linear interpolation onto the uniform grid t_j = j / to_rate.

    The output covers [0, last input timestamp] with no extrapolation:
    length = floor((n - 1) * to_rate / from_rate) + 1.
    """
    x = np.asarray(signal, dtype=np.float64)
    if not (from_rate > 0 and to_rate > 0):
        raise ValueError("rates must be > 0")
    if x.size < 2:
        raise TooShort(f"need at least 2 samples to resample, got {x.size}")
    n_out = int(np.floor((x.size - 1) * to_rate / from_rate)) + 1
    t_in = np.arange(x.size) / from_rate
    t_out = np.arange(n_out) / to_rate
    return np.interp(t_out, t_in, x)


def resample_labels(labels, from_rate: float, to_rate: float = 32.0):
    """Nearest-index label carry-over matching resample's output grid."""
    y = np.asarray(labels)
    if y.size < 2:
        raise TooShort(f"need at least 2 samples to resample, got {y.size}")
    n_out = int(np.floor((y.size - 1) * to_rate / from_rate)) + 1
    src = np.rint(np.arange(n_out) * from_rate / to_rate).astype(np.int64)
    return y[np.clip(src, 0, y.size - 1)]


# ---------------------------------------------------------------------------
# windowing
# ---------------------------------------------------------------------------

def window_starts(block_length: int, cfg: WindowConfig) -> np.ndarray:
    return np.arange(0, block_length - cfg.window_samples + 1, cfg.stride_samples)


def _window_label(win_labels: np.ndarray, rule: str, n_labels: int) -> int:
    if rule == "last":
        return int(win_labels[-1])
    counts = np.bincount(win_labels, minlength=n_labels)
    # ties break toward the higher label index
    return int(n_labels - 1 - np.argmax(counts[::-1]))


def windowize_indexed(ds: SensorDataset, cfg: WindowConfig = WindowConfig()):
    """(features, labels, index) with index rows (block_idx, start_timestep).

    Each feature row is one window flattened channel-major: all window_samples
    of channel 0, then channel 1, and so on (width window_samples * D).
    Windows never span block boundaries.
    """
    w, stride = cfg.window_samples, cfg.stride_samples
    n_labels = len(ds.label_set)
    rows, labels, index = [], [], []
    for bi, b in enumerate(ds.blocks):
        if b.length < w:
            raise WindowTooLarge(
                f"window_samples={w} exceeds block {b.subject_id!r} length {b.length}")
        for s in window_starts(b.length, cfg):
            rows.append(b.samples[s:s + w].T.ravel())
            labels.append(_window_label(b.labels[s:s + w], cfg.label_rule, n_labels))
            index.append((bi, int(s)))
    d = len(ds.schema)
    x = np.asarray(rows, dtype=np.float64).reshape(len(rows), w * d)
    return x, np.asarray(labels, dtype=np.int64), index


def windowize(ds: SensorDataset, cfg: WindowConfig = WindowConfig()):
    """Feature matrix and window labels; see windowize_indexed for the layout."""
    x, y, _ = windowize_indexed(ds, cfg)
    return x, y


# ---------------------------------------------------------------------------
# dataset-level plans
# ---------------------------------------------------------------------------

def _plan_channels(ds: SensorDataset, step: dict) -> list[str]:
    """Channels a step touches: explicit names, else all with a listed modality tag."""
    if "channels" in step:
        for n in step["channels"]:
            ds.schema.index(n)
        return list(step["channels"])
    tags = set(step.get("modalities", []))
    return [c.name for c in ds.schema.channels if c.modality in tags]


def apply_plan(ds: SensorDataset, plan: list[dict]):
    """Run an ordered list of conditioning steps over a dataset.

    Each step is a record {"op": ..., plus parameters}; ops are
    rls (needs "reference" channel name), ssa, outlier, resample
    (to_rate; converts every channel and the labels, updates ds.rate).
    Returns (conditioned dataset, provenance records).
    """
    current = ds.copy()
    provenance = []
    for step in plan:
        op = step.get("op")
        if op == "rls":
            cfg = RlsConfig(int(step.get("filter_order", 8)),
                            float(step.get("forgetting", 0.999)),
                            float(step.get("init_scale", 1e4)))
            names = _plan_channels(current, step)
            ref_idx = current.schema.index(step["reference"])
            for b in current.blocks:
                ref = b.samples[:, ref_idx].copy()
                for n in names:
                    j = current.schema.index(n)
                    b.samples[:, j] = rls_denoise(b.samples[:, j], ref, cfg)
        elif op == "ssa":
            cfg = SsaConfig(int(step.get("window_len", 20)),
                            int(step.get("keep_components", 2)))
            names = _plan_channels(current, step)
            for b in current.blocks:
                for n in names:
                    j = current.schema.index(n)
                    b.samples[:, j] = ssa_denoise(b.samples[:, j], cfg)
        elif op == "outlier":
            cfg = OutlierConfig(int(step.get("window_len", 7)),
                                float(step.get("threshold_mads", 3.0)))
            names = _plan_channels(current, step)
            for b in current.blocks:
                for n in names:
                    j = current.schema.index(n)
                    b.samples[:, j] = max_outlier_filter(b.samples[:, j], cfg)
        elif op == "resample":
            to_rate = float(step.get("to_rate", 32.0))
            names = list(current.schema.names)
            new_blocks = []
            for b in current.blocks:
                cols = [resample(b.samples[:, j], current.rate, to_rate)
                        for j in range(len(names))]
                lab = resample_labels(b.labels, current.rate, to_rate)
                new_blocks.append(Block(b.subject_id, np.column_stack(cols), lab,
                                        b.provenance))
            current = SensorDataset(current.domain_id, current.schema,
                                    current.label_set, new_blocks, to_rate)
        else:
            raise ValueError(f"unknown preprocessing op {op!r}")
        record = {k: v for k, v in step.items()}
        if op != "resample":
            record["applied_to"] = _plan_channels(current, step)
        provenance.append(record)
    return current, provenance
