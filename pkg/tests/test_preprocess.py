"""Signal conditioning chain: RLS, SSA, outlier repair, resampling, windowing."""
import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from sensorfuse.dataset import Block, SensorDataset, schema_from_names
from sensorfuse.errors import (
    DegenerateInput,
    LengthMismatch,
    TooShort,
    WindowTooLarge,
)
from sensorfuse.preprocess import (
    OutlierConfig,
    RlsConfig,
    SsaConfig,
    WindowConfig,
    apply_plan,
    max_outlier_filter,
    resample,
    resample_labels,
    rls_denoise,
    rls_filter,
    ssa_decompose,
    ssa_denoise,
    windowize,
    windowize_indexed,
)


# ---------------------------------------------------------------------------
# RLS adaptive cancellation
# ---------------------------------------------------------------------------

def test_rls_zero_reference_is_identity():
    rng = np.random.default_rng(0)
    sig = rng.normal(size=200)
    out = rls_denoise(sig, np.zeros(200), RlsConfig(filter_order=4))
    np.testing.assert_array_equal(out, sig)


def test_rls_cancels_fir_interference_by_20db():
    rng = np.random.default_rng(42)
    n = 8000
    t = np.arange(n) / 64.0
    clean = 0.5 * np.sin(2 * np.pi * 1.3 * t)
    ref = rng.normal(size=n)
    fir = np.array([0.9, -0.4, 0.25, -0.1])
    interference = np.convolve(ref, fir)[:n]
    out = rls_denoise(clean + interference, ref,
                      RlsConfig(filter_order=4, forgetting=0.999, init_scale=1e4))
    suppression_db = 10 * np.log10(np.mean(interference ** 2)
                                   / np.mean((out - clean) ** 2))
    assert suppression_db >= 20.0


def test_rls_forgetting_one_matches_least_squares():
    rng = np.random.default_rng(7)
    n, order = 600, 4
    ref = rng.normal(size=n)
    fir = np.array([0.9, -0.4, 0.25, -0.1])
    d = np.convolve(ref, fir)[:n] + 0.01 * rng.normal(size=n)
    _, w = rls_filter(d, ref, RlsConfig(filter_order=order, forgetting=1.0,
                                        init_scale=1e8))
    padded = np.concatenate([np.zeros(order - 1), ref])
    x = np.stack([padded[i:i + order][::-1] for i in range(n)])
    w_ls, *_ = np.linalg.lstsq(x, d, rcond=None)
    np.testing.assert_allclose(w, w_ls, atol=1e-6)


def test_rls_input_validation():
    with pytest.raises(LengthMismatch):
        rls_denoise(np.zeros(10), np.zeros(11))
    with pytest.raises(DegenerateInput):
        rls_denoise(np.zeros(3), np.zeros(3), RlsConfig(filter_order=4))
    with pytest.raises(ValueError):
        RlsConfig(forgetting=0.0)
    with pytest.raises(ValueError):
        RlsConfig(filter_order=0)


# ---------------------------------------------------------------------------
# singular-spectrum decomposition
# ---------------------------------------------------------------------------

def test_ssa_zero_signal_gives_zero_components():
    comps = ssa_decompose(np.zeros(64), SsaConfig(window_len=8))
    assert len(comps) == 8
    for c in comps:
        np.testing.assert_array_equal(c, np.zeros(64))


def test_ssa_sinusoid_lives_in_two_components():
    x = np.sin(2 * np.pi * 5 * np.arange(400) / 100.0)
    comps = ssa_decompose(x, SsaConfig(window_len=20))
    rec = comps[0] + comps[1]
    assert np.linalg.norm(rec - x) / np.linalg.norm(x) < 1e-3


def test_ssa_components_sum_to_input():
    rng = np.random.default_rng(1)
    x = rng.normal(size=300)
    comps = ssa_decompose(x, SsaConfig(window_len=15))
    np.testing.assert_allclose(np.sum(comps, axis=0), x, rtol=1e-8, atol=1e-10)


@given(arrays(np.float64, st.integers(min_value=24, max_value=80),
              elements=st.floats(-1e3, 1e3)))
@settings(max_examples=50, deadline=None)
def test_ssa_reconstruction_property(x):
    comps = ssa_decompose(x, SsaConfig(window_len=8))
    np.testing.assert_allclose(np.sum(comps, axis=0), x, rtol=1e-8, atol=1e-8)


def test_ssa_keep_all_is_identity():
    rng = np.random.default_rng(2)
    x = rng.normal(size=120)
    out = ssa_denoise(x, SsaConfig(window_len=10, keep_components=10))
    np.testing.assert_allclose(out, x, atol=1e-8)


def test_ssa_keep_one_constant_unchanged():
    x = np.full(60, 3.25)
    out = ssa_denoise(x, SsaConfig(window_len=6, keep_components=1))
    np.testing.assert_allclose(out, x, atol=1e-8)


def test_ssa_improves_snr_on_noisy_sinusoid():
    rng = np.random.default_rng(42)
    n = 1000
    clean = np.sqrt(2.0) * np.sin(2 * np.pi * 5 * np.arange(n) / 100.0)
    noisy = clean + rng.normal(size=n)  # 0 dB input SNR
    den = ssa_denoise(noisy, SsaConfig(window_len=20, keep_components=2))
    in_snr = 10 * np.log10(np.mean(clean ** 2) / np.mean((noisy - clean) ** 2))
    out_snr = 10 * np.log10(np.mean(clean ** 2) / np.mean((den - clean) ** 2))
    assert out_snr - in_snr >= 6.0


def test_ssa_rejects_short_signal():
    with pytest.raises(TooShort):
        ssa_decompose(np.zeros(19), SsaConfig(window_len=10))
    with pytest.raises(ValueError):
        SsaConfig(window_len=10, keep_components=11)


# ---------------------------------------------------------------------------
# outlier repair
# ---------------------------------------------------------------------------

def test_outlier_constant_unchanged():
    x = np.full(20, 2.0)
    np.testing.assert_array_equal(max_outlier_filter(x), x)


def test_outlier_spike_on_flat_signal():
    x = np.array([1.0, 1, 1, 100, 1, 1, 1])
    out = max_outlier_filter(x, OutlierConfig(window_len=7, threshold_mads=3.0))
    np.testing.assert_array_equal(out, np.ones(7))


def test_outlier_smooth_ramp_unchanged():
    x = np.linspace(0.0, 5.0, 50)
    out = max_outlier_filter(x, OutlierConfig(window_len=7, threshold_mads=3.0))
    np.testing.assert_array_equal(out, x)


def test_outlier_repairs_spike_in_sinusoid_and_is_idempotent():
    t = np.arange(300) / 32.0
    x = np.sin(2 * np.pi * 0.5 * t)
    x[100] += 5.0
    cfg = OutlierConfig(window_len=7, threshold_mads=3.0)
    once = max_outlier_filter(x, cfg)
    assert abs(once[100] - np.sin(2 * np.pi * 0.5 * 100 / 32.0)) < 0.2
    twice = max_outlier_filter(once, cfg)
    np.testing.assert_array_equal(twice, once)


def test_outlier_edges_pass_through():
    x = np.zeros(9)
    x[0] = 50.0  # no full window centered on the first sample
    out = max_outlier_filter(x, OutlierConfig(window_len=5))
    assert out[0] == 50.0


def test_outlier_validation():
    with pytest.raises(TooShort):
        max_outlier_filter(np.zeros(3), OutlierConfig(window_len=5))
    with pytest.raises(ValueError):
        OutlierConfig(window_len=4)
    with pytest.raises(ValueError):
        OutlierConfig(window_len=1)


# ---------------------------------------------------------------------------
# resampling
# ---------------------------------------------------------------------------

def test_resample_same_rate_identity():
    rng = np.random.default_rng(3)
    x = rng.normal(size=77)
    np.testing.assert_array_equal(resample(x, 32.0, 32.0), x)


def test_resample_sinusoid_64_to_32():
    t = np.arange(128) / 64.0
    x = np.sin(2 * np.pi * 1.0 * t)
    y = resample(x, 64.0, 32.0)
    t_out = np.arange(y.size) / 32.0
    assert y.size == 64
    assert np.abs(y - np.sin(2 * np.pi * t_out)).max() < 1e-2


def test_resample_fractional_ratio():
    # 48 -> 32 Hz: output points fall between input samples
    t = np.arange(240) / 48.0
    x = np.sin(2 * np.pi * 0.7 * t)
    y = resample(x, 48.0, 32.0)
    t_out = np.arange(y.size) / 32.0
    assert t_out[-1] <= t[-1] + 1e-12
    assert np.abs(y - np.sin(2 * np.pi * 0.7 * t_out)).max() < 1e-2


def test_resample_output_length():
    assert resample(np.arange(129.0), 64.0, 32.0).size == 65


@given(st.integers(min_value=2, max_value=400),
       st.floats(min_value=-5, max_value=5),
       st.floats(min_value=-5, max_value=5))
@settings(max_examples=60)
def test_resample_exact_on_affine(n, a, b):
    x = a + b * np.arange(n) / 50.0  # affine in time at 50 Hz
    y = resample(x, 50.0, 32.0)
    t_out = np.arange(y.size) / 32.0
    np.testing.assert_allclose(y, a + b * t_out, atol=1e-12)


def test_resample_rejects_short():
    with pytest.raises(TooShort):
        resample(np.array([1.0]), 64.0, 32.0)


def test_resample_labels_nearest():
    labels = np.array([0, 0, 1, 1, 1, 0], dtype=np.int64)
    out = resample_labels(labels, 64.0, 32.0)
    np.testing.assert_array_equal(out, labels[[0, 2, 4]])


# ---------------------------------------------------------------------------
# windowing
# ---------------------------------------------------------------------------

def block_dataset(samples, labels, names):
    schema = schema_from_names(names)
    return SensorDataset("d", schema, ("alert", "fatigued"),
                         [Block("s1", samples, labels)], 32.0)


def test_windowize_counts():
    ds = block_dataset(np.zeros((128, 2)), np.zeros(128, dtype=int), ["HR", "GSR"])
    x, y = windowize(ds, WindowConfig(window_samples=32, stride_samples=32))
    assert x.shape == (4, 64)
    assert y.shape == (4,)


def test_windowize_majority_label():
    ds = block_dataset(np.zeros((3, 1)), np.array([0, 0, 1]), ["HR"])
    _, y = windowize(ds, WindowConfig(window_samples=3, stride_samples=1))
    assert y[0] == 0  # two zeros beat one one


def test_windowize_tie_breaks_high():
    ds = block_dataset(np.zeros((4, 1)), np.array([0, 0, 1, 1]), ["HR"])
    _, y = windowize(ds, WindowConfig(window_samples=4, stride_samples=1))
    assert y[0] == 1


def test_windowize_last_rule():
    ds = block_dataset(np.zeros((4, 1)), np.array([1, 1, 1, 0]), ["HR"])
    _, y = windowize(ds, WindowConfig(window_samples=4, stride_samples=1,
                                      label_rule="last"))
    assert y[0] == 0


def test_windowize_identity_window():
    rng = np.random.default_rng(4)
    samples = rng.normal(size=(10, 2))
    labels = rng.integers(0, 2, size=10)
    ds = block_dataset(samples, labels, ["HR", "GSR"])
    x, y = windowize(ds, WindowConfig(window_samples=1, stride_samples=1))
    np.testing.assert_array_equal(x, samples)
    np.testing.assert_array_equal(y, labels)


def test_windowize_channel_major_layout():
    samples = np.array([[1.0, 10.0], [2.0, 20.0], [3.0, 30.0]])
    ds = block_dataset(samples, np.zeros(3, dtype=int), ["HR", "GSR"])
    x, _ = windowize(ds, WindowConfig(window_samples=3, stride_samples=1))
    np.testing.assert_array_equal(x[0], [1.0, 2.0, 3.0, 10.0, 20.0, 30.0])


def test_windowize_never_spans_blocks():
    schema = schema_from_names(["HR"])
    blocks = [Block("a", np.ones((5, 1)), np.zeros(5, dtype=int)),
              Block("b", np.zeros((5, 1)), np.ones(5, dtype=int))]
    ds = SensorDataset("d", schema, ("alert", "fatigued"), blocks, 32.0)
    x, y, index = windowize_indexed(ds, WindowConfig(window_samples=4,
                                                     stride_samples=1))
    assert len(x) == 4  # two starts per block, none crossing
    assert all(x[i].min() == x[i].max() for i in range(4))
    assert index == [(0, 0), (0, 1), (1, 0), (1, 1)]


def test_windowize_too_large():
    ds = block_dataset(np.zeros((8, 1)), np.zeros(8, dtype=int), ["HR"])
    with pytest.raises(WindowTooLarge):
        windowize(ds, WindowConfig(window_samples=9))


@given(st.integers(min_value=1, max_value=200), st.integers(min_value=1, max_value=50),
       st.integers(min_value=1, max_value=50))
@settings(max_examples=80)
def test_windowize_row_count_formula(t, w, stride):
    if w > t:
        return
    ds = block_dataset(np.zeros((t, 1)), np.zeros(t, dtype=int), ["HR"])
    x, _ = windowize(ds, WindowConfig(window_samples=w, stride_samples=stride))
    assert x.shape[0] == (t - w) // stride + 1


# ---------------------------------------------------------------------------
# plans
# ---------------------------------------------------------------------------

def test_apply_plan_runs_steps_in_order():
    rng = np.random.default_rng(5)
    t = np.arange(256) / 64.0
    hr = np.sin(2 * np.pi * 1.0 * t)
    hr[100] += 30.0
    acc = rng.normal(size=256)
    samples = np.column_stack([hr + 0.5 * acc, acc])
    schema = schema_from_names(["HR", "ACC_x"])
    ds = SensorDataset("d", schema, ("alert", "fatigued"),
                       [Block("s1", samples, np.zeros(256, dtype=int))], 64.0)
    plan = [
        {"op": "rls", "modalities": ["HR"], "reference": "ACC_x",
         "filter_order": 2, "forgetting": 1.0, "init_scale": 1e6},
        {"op": "outlier", "modalities": ["HR"], "window_len": 7},
        {"op": "resample", "to_rate": 32.0},
    ]
    out, provenance = apply_plan(ds, plan)
    assert out.rate == 32.0
    assert out.blocks[0].length == 128
    assert [p["op"] for p in provenance] == ["rls", "outlier", "resample"]
    assert provenance[0]["applied_to"] == ["HR"]
    # spike repaired before resampling spread it
    assert np.abs(out.blocks[0].samples[:, 0]).max() < 3.0
    # input untouched
    assert ds.rate == 64.0 and ds.blocks[0].length == 256


def test_apply_plan_channel_selection_and_unknown_op():
    ds = block_dataset(np.ones((40, 2)), np.zeros(40, dtype=int), ["HR", "GSR"])
    out, prov = apply_plan(ds, [{"op": "outlier", "channels": ["GSR"],
                                 "window_len": 5}])
    assert prov[0]["applied_to"] == ["GSR"]
    with pytest.raises(ValueError):
        apply_plan(ds, [{"op": "wavelet"}])
