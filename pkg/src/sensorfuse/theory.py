"""Diagnostic estimators: binned mutual information, proxy domain distance,
and generalization-gap measurement.

These are desk-scale checks of the directions the transfer argument relies
on: appended informative channels should not lose label information, domain
alignment should shrink the distance a domain classifier can exploit, and
train/test loss gaps quantify overfitting. Estimators are intentionally
simple enough to verify against brute-force oracles.
"""
from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .dataset import SensorDataset
from .errors import TooFewSamples, WidthMismatch
from .nn import DenseNet, TrainConfig, cross_entropy_loss, logits, make_classifier, train_classifier
from .preprocess import WindowConfig, windowize
from .synth import SynthConfig, generate_multidomain

MAX_MI_COLUMNS = 3


@dataclass(frozen=True)
class MiEstimate:
    value: float  # nats, >= 0
    bins: int
    sample_count: int


@dataclass(frozen=True)
class DistanceEstimate:
    value: float  # in [0, 2]
    classifier_error: float


@dataclass(frozen=True)
class Theorem1Check:
    i_x: float
    i_xplus: float
    passed: bool


def _entropy_mm(codes: np.ndarray, n: int) -> float:
    """Plug-in entropy (nats) with the Miller-Madow small-sample correction."""
    _, counts = np.unique(codes, return_counts=True)
    p = counts / n
    h = -np.sum(p * np.log(p))
    return float(h + (counts.size - 1) / (2.0 * n))


def _columns_to_codes(x: np.ndarray, bins: int) -> np.ndarray:
    """Equal-width bin each column, then combine columns into one joint code."""
    n, c = x.shape
    codes = np.zeros(n, dtype=np.int64)
    for j in range(c):
        col = x[:, j]
        lo, hi = col.min(), col.max()
        if hi == lo:
            digit = np.zeros(n, dtype=np.int64)
        else:
            edges = np.linspace(lo, hi, bins + 1)
            digit = np.clip(np.searchsorted(edges, col, side="right") - 1, 0, bins - 1)
        codes = codes * bins + digit
    return codes


def mutual_info_binned(x, y, bins: int = 16) -> MiEstimate:
    """Histogram plug-in estimate of I(X; y) in nats, bias-corrected.

    X is equal-width binned per column (at most 3 columns so the joint
    histogram stays dense enough to trust); the Miller-Madow correction is
    applied through the three entropies and the result clamped at zero.
    """
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 1:
        x = x[:, None]
    y = np.asarray(y)
    n, c = x.shape
    if c > MAX_MI_COLUMNS:
        raise WidthMismatch(f"joint histogram supports at most {MAX_MI_COLUMNS} "
                            f"columns, got {c}")
    if bins < 2:
        raise ValueError("bins must be >= 2")
    if n < 10 * bins ** c:
        raise TooFewSamples(f"need >= 10 * bins^columns = {10 * bins ** c} samples, got {n}")
    if y.shape != (n,):
        raise WidthMismatch("y must hold one label per row")
    x_codes = _columns_to_codes(x, bins)
    _, y_codes = np.unique(y, return_inverse=True)
    joint = x_codes * (y_codes.max() + 1) + y_codes
    mi = _entropy_mm(x_codes, n) + _entropy_mm(y_codes, n) - _entropy_mm(joint, n)
    return MiEstimate(max(mi, 0.0), bins, n)


def theorem1_direction_check(cfg: SynthConfig, seed: int, bins: int = 10) -> Theorem1Check:
    """Estimate I(x; y) and I([x, a]; y) on one generated target domain.

    x is every target channel but the last, a is the last; the check passes
    when appending a does not lose label information beyond estimator noise:
    I([x, a]; y) >= I(x; y) - 0.01 nats.
    """
    target, _, _ = generate_multidomain(replace(cfg, seed=seed))
    x = np.concatenate([b.samples for b in target.blocks], axis=0)
    y = np.concatenate([b.labels for b in target.blocks])
    if x.shape[1] < 2:
        raise WidthMismatch("need at least two target channels to split into x and a")
    i_x = mutual_info_binned(x[:, :-1], y, bins).value
    i_xplus = mutual_info_binned(x, y, bins).value
    return Theorem1Check(i_x, i_xplus, i_xplus >= i_x - 0.01)


def proxy_a_distance(a, b, seed: int = 0, hidden=(16,), epochs: int = 30) -> DistanceEstimate:
    """Domain distance via a classifier: 2 * (1 - 2 * held-out error), in [0, 2].

    Rows from each set are shuffled and split half for training the domain
    classifier, half for measuring its error; sets are subsampled to equal
    size first so the error is calibrated against a 0.5 chance level.
    """
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[1]:
        raise WidthMismatch(f"sample matrices must share width, got {a.shape} and {b.shape}")
    if a.shape[0] < 100 or b.shape[0] < 100:
        raise TooFewSamples("need at least 100 rows per set")
    rng = np.random.default_rng(seed)
    m = min(a.shape[0], b.shape[0])
    a = a[rng.permutation(a.shape[0])[:m]]
    b = b[rng.permutation(b.shape[0])[:m]]
    half = m // 2
    x_train = np.vstack([a[:half], b[:half]])
    x_test = np.vstack([a[half:], b[half:]])
    y_train = np.array([0] * half + [1] * half)
    y_test = np.array([0] * (m - half) + [1] * (m - half))
    net = make_classifier(a.shape[1], 2, hidden=hidden, seed=seed + 1)
    net, _ = train_classifier(net, x_train, y_train,
                              TrainConfig(epochs=epochs, seed=seed + 2))
    pred = logits(net, x_test).argmax(axis=1)
    err = float(np.mean(pred != y_test))
    return DistanceEstimate(float(np.clip(2.0 * (1.0 - 2.0 * err), 0.0, 2.0)), err)


def generalization_gap(net: DenseNet, train_ds: SensorDataset, test_ds: SensorDataset,
                       wcfg: WindowConfig = WindowConfig()) -> float:
    """Signed test-minus-train cross entropy of a trained detector."""
    x_tr, y_tr = windowize(train_ds, wcfg)
    x_te, y_te = windowize(test_ds, wcfg)
    return (cross_entropy_loss(logits(net, x_te), y_te)
            - cross_entropy_loss(logits(net, x_tr), y_tr))
