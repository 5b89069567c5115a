import json
from collections import Counter

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from otdrfault import nn
from otdrfault.baseline import detect_threshold
from otdrfault.classifier import (
    AugmentDraws,
    CnnConfig,
    CnnModel,
    SamplerConfig,
    SyntheticDataset,
    activation_map,
    augment,
    build_trunk,
    infer,
    infer_full,
    preprocess,
    refine_position,
    resample,
    sample_dataset,
    sample_scenario,
    split_indices,
    step_scan,
    train,
    training_log_csv,
)
from otdrfault.plant import (
    AcquisitionConfig,
    EventKind,
    FaultClass,
    FaultLabel,
    FiberEvent,
    FiberScenario,
    Trace,
    ValidationError,
)
from otdrfault.synth import clean_trace, noisy_trace, reference_scenarios

NO_SHIFT = AugmentDraws(offset_db=0.0, noise_multiplier=1.0, shift_m=0.0)


def single(kind, pos, acq, **kw):
    ev = FiberEvent(kind, pos, **kw)
    cls = {EventKind.SPLICE: FaultClass.SPLICE, EventKind.BEND: FaultClass.BEND,
           EventKind.CONNECTOR: FaultClass.CONNECTOR}[kind]
    return FiberScenario(acq, (ev,), FaultLabel(cls, pos))


# ------------------------------------------------------------------ layers


def test_layer_length_trace():
    shapes = nn.check_shapes(build_trunk(), (1, 1024))
    assert shapes[0] == (1, 1024)
    assert [s[-1] for s in shapes[1:10]] == [1016, 1016, 254, 246, 246, 61, 57, 57, 14]
    assert shapes[9] == (64, 14)
    assert shapes[-1] == (64,)


def test_model_heads_shapes():
    m = CnnModel.initialized(CnnConfig())
    logits, pos, _ = m.forward(np.zeros((3, 1, 1024)))
    assert logits.shape == (3, 4) and pos.shape == (3,)


# ----------------------------------------------------------------- sampler


def test_sampler_counts_are_reproducible_constants():
    cfg = SamplerConfig(n_traces=100, master_seed=1)
    acq = AcquisitionConfig()
    counts = Counter(sample_scenario(cfg, acq, i).label.fault_class for i in range(100))
    assert counts == {FaultClass.NORMAL: 23, FaultClass.SPLICE: 23, FaultClass.BEND: 27, FaultClass.CONNECTOR: 27}


def test_sampler_deterministic_and_order_independent():
    cfg = SamplerConfig(n_traces=12, master_seed=5)
    a = sample_dataset(cfg)
    b = sample_dataset(cfg)
    for (ta, la), (tb, lb) in zip(a, b):
        assert np.array_equal(ta.samples, tb.samples) and la == lb
    lazy = SyntheticDataset(cfg)
    t7, l7 = lazy[7]
    assert np.array_equal(t7.samples, a[7][0].samples) and l7 == a[7][1]
    assert len(a) == 12


def test_sampler_positions_and_parameters_in_range():
    cfg = SamplerConfig(n_traces=400, master_seed=11)
    acq = AcquisitionConfig()
    for i in range(cfg.n_traces):
        s = sample_scenario(cfg, acq, i)
        assert s.label.fault_class is FaultClass.NORMAL or 500 <= s.label.position_m <= 9500
        sigma = s.config.noise_sigma_linear
        assert 0.5 * acq.noise_sigma_linear <= sigma <= 2.0 * acq.noise_sigma_linear
        for ev in s.events:
            if ev.kind is EventKind.SPLICE:
                assert 0.1 <= ev.loss_db <= 1.0
            elif ev.kind is EventKind.BEND:
                assert 0.5 <= ev.loss_db <= 3.0 and 1 <= ev.extent_m <= 20
            else:
                assert 0.2 <= ev.loss_db <= 1.5 and 2 <= ev.reflectance_spike_db <= 10


def test_sampler_default_size_matches_training_scale():
    assert SamplerConfig().n_traces == 7500


def test_sampler_class_mix_respected():
    cfg = SamplerConfig(n_traces=50, class_mix=(0.0, 0.0, 0.0, 1.0))
    acq = AcquisitionConfig()
    assert {sample_scenario(cfg, acq, i).label.fault_class for i in range(50)} == {FaultClass.CONNECTOR}


@pytest.mark.parametrize(
    "kw",
    [
        {"class_mix": (0.5, 0.5, 0.5, 0.5)},
        {"class_mix": (1.0, 0.0, 0.0)},
        {"splice_loss_db": (1.0, 0.1)},
        {"n_traces": 0},
    ],
)
def test_sampler_config_validation(kw):
    with pytest.raises(ValidationError):
        SamplerConfig(**kw)


def test_sampler_config_dict_roundtrip():
    cfg = SamplerConfig(n_traces=9, master_seed=3)
    assert SamplerConfig.from_dict(json.loads(json.dumps(cfg.to_dict()))) == cfg
    with pytest.raises(ValidationError):
        SamplerConfig.from_dict({"bogus": 1})


# ------------------------------------------------------------ augmentation


@pytest.fixture
def splice_trace(quiet_config):
    s = single(EventKind.SPLICE, 3000.0, quiet_config, loss_db=0.5)
    return clean_trace(s), s.label


def test_augment_zero_draws_is_identity(splice_trace):
    t, label = splice_trace
    t2, l2 = augment(t, label, seed=3, draws=NO_SHIFT)
    assert np.array_equal(t2.samples, t.samples) and l2 == label


def test_augment_offset(splice_trace):
    t, label = splice_trace
    t2, l2 = augment(t, label, 3, draws=AugmentDraws(2.0, 1.0, 0.0))
    np.testing.assert_allclose(t2.samples, t.samples + 2.0, rtol=0, atol=1e-12)
    assert l2 == label


def test_augment_shift_moves_label(splice_trace):
    t, label = splice_trace
    t2, l2 = augment(t, label, 3, draws=AugmentDraws(0.0, 1.0, 50.0))
    assert l2.position_m == 3050.0
    # leading edge padded with the first value
    assert np.all(t2.samples[:50] == t.samples[0])
    np.testing.assert_array_equal(t2.samples[50:], t.samples[:-50])


def test_augment_shift_clips_label(quiet_config):
    s = single(EventKind.SPLICE, 9980.0, quiet_config, loss_db=0.5)
    t = clean_trace(s)
    _, l2 = augment(t, s.label, 1, draws=AugmentDraws(0.0, 1.0, 50.0))
    assert l2.position_m == t.range_m - t.spacing_m


def test_augment_noise_only_changes_noise_not_label(splice_trace):
    t, label = splice_trace
    t2, l2 = augment(t, label, 9, draws=AugmentDraws(0.0, 1.5, 0.0), base_sigma_linear=5.0)
    assert l2 == label
    assert not np.array_equal(t2.samples, t.samples)
    assert np.all(t2.samples >= float(t.meta["noise_floor_db"]))


def test_augment_seeded():
    s = reference_scenarios()[2]
    t = noisy_trace(s)
    a = augment(t, s.label, 42)
    b = augment(t, s.label, 42)
    assert np.array_equal(a[0].samples, b[0].samples) and a[1] == b[1]


@pytest.mark.parametrize("shift", [-37.0, -10.0, 0.0, 25.0, 50.0])
def test_augment_label_consistent_with_redetection(quiet_config, shift):
    s = single(EventKind.SPLICE, 4000.0, quiet_config, loss_db=0.6)
    t = clean_trace(s)
    before = detect_threshold(t).position_m
    t2, l2 = augment(t, s.label, 0, draws=AugmentDraws(0.0, 1.0, shift))
    after = detect_threshold(t2)
    assert after.fault_class is FaultClass.SPLICE
    assert abs(after.position_m - (before + shift)) <= t.spacing_m
    assert l2.position_m == 4000.0 + shift


# ----------------------------------------------------------- preprocessing


def test_preprocess_constant_trace_is_zero():
    t = Trace(np.full(500, 7.0), 1.0, {})
    x = preprocess(t, 1024)
    assert x.shape == (1, 1024) and np.all(x == 0.0)


@pytest.mark.parametrize("n", [2, 17, 1000, 10001])
def test_preprocess_length(n):
    t = Trace(np.linspace(0, 1, n) ** 2, 1.0, {})
    assert preprocess(t, 1024).shape == (1, 1024)
    assert preprocess(t, 300).shape == (1, 300)


def test_resampled_line_is_a_line():
    z = np.arange(10001) * 1.0
    t = Trace(30.0 - 0.00035 * z, 1.0, {})
    grid = np.linspace(0, 10000, 1024)
    np.testing.assert_allclose(resample(t, 1024), 30.0 - 0.00035 * grid, rtol=0, atol=1e-9)


@settings(max_examples=40, deadline=None)
@given(st.lists(st.floats(-50, 50), min_size=2, max_size=200))
def test_preprocess_standardized(values):
    y = np.asarray(values)
    x = preprocess(Trace(y, 1.0, {}), 64)[0]
    if resample(Trace(y, 1.0, {}), 64).std() > 1e-6:
        assert abs(x.mean()) < 1e-9
        assert abs(x.std() - 1.0) < 1e-9


def test_preprocess_rejects_degenerate():
    with pytest.raises((ValueError, ValidationError)):
        preprocess(Trace(np.array([1.0]), 1.0, {}), 8)


# --------------------------------------------------------------- inference


@pytest.fixture(scope="module")
def tiny_model():
    return CnnModel.initialized(CnnConfig(init_seed=3))


def test_zero_heads_answer_normal():
    model = CnnModel.initialized(CnnConfig(), zero_heads=True)
    for s in reference_scenarios():
        d = infer(model, noisy_trace(s))
        assert d.fault_class is FaultClass.NORMAL
        assert d.position_m is None
        assert d.confidence == pytest.approx(0.25)


def test_infer_is_pure_and_bounded(tiny_model):
    for s in reference_scenarios():
        t = noisy_trace(s)
        a, b = infer(tiny_model, t), infer(tiny_model, t)
        assert a == b
        assert 0.0 <= a.confidence <= 1.0
        if a.position_m is not None:
            assert 0.0 <= a.position_m <= t.range_m
            assert a.loss_db_est >= 0.0


def test_weights_json_roundtrip_bitwise(tiny_model):
    text = tiny_model.to_json()
    again = CnnModel.from_json(text)
    assert again.to_json() == text
    for a, b in zip(tiny_model.parameters(), again.parameters()):
        assert np.array_equal(a, b)
    t = noisy_trace(reference_scenarios()[3])
    assert infer(again, t) == infer(tiny_model, t)


def test_weights_shape_mismatch_rejected(tiny_model):
    d = json.loads(tiny_model.to_json())
    d["layers"] = [ld for ld in d["layers"] if ld["kind"] != "MaxPool1d"]
    with pytest.raises(ValidationError):
        CnnModel.from_dict(d)
    d = json.loads(tiny_model.to_json())
    d["format_version"] = 99
    with pytest.raises(ValidationError):
        CnnModel.from_dict(d)


def test_activation_map_input_layer(tiny_model):
    t = noisy_trace(reference_scenarios()[2])
    assert np.array_equal(activation_map(tiny_model, t, 0), preprocess(t, 1024))


def test_activation_map_relu_nonnegative(tiny_model):
    t = noisy_trace(reference_scenarios()[2])
    for i, layer in enumerate(tiny_model.trunk, start=1):
        act = activation_map(tiny_model, t, i)
        if isinstance(layer, (nn.ReLU, nn.MaxPool1d)):
            assert act.min() >= 0.0
    assert activation_map(tiny_model, t, 9).shape == (64, 14)
    with pytest.raises(IndexError):
        activation_map(tiny_model, t, len(tiny_model.trunk) + 1)
    with pytest.raises(IndexError):
        activation_map(tiny_model, t, -1)


# --------------------------------------------------------------- refinement


def _lstsq_step_gain(y, z, w, k):
    """Brute-force weighted RSS reduction of adding a step at z[k]."""
    sw = np.sqrt(w)
    base = np.stack([np.ones_like(z), z], axis=1)
    full = np.column_stack([base, (np.arange(len(z)) >= k).astype(float)])
    rss = []
    for X in (base, full):
        coef, *_ = np.linalg.lstsq(X * sw[:, None], y * sw, rcond=None)
        rss.append(np.sum(w * (y - X @ coef) ** 2))
    return rss[0] - rss[1]


def test_step_scan_matches_lstsq_oracle():
    rng = np.random.default_rng(0)
    z = np.arange(60) * 2.0
    y = 5 - 0.01 * z - 0.8 * (z >= 70) + 0.05 * rng.standard_normal(60)
    w = rng.uniform(0.5, 2.0, 60)
    gain = step_scan(y, z, w)
    for k in range(1, 60):
        if np.isfinite(gain[k]):
            assert gain[k] == pytest.approx(_lstsq_step_gain(y, z, w, k), rel=1e-8, abs=1e-9)
    assert int(np.argmax(gain)) == 35


@pytest.mark.parametrize(
    "kind,kw,fault",
    [
        (EventKind.SPLICE, {"loss_db": 0.3}, FaultClass.SPLICE),
        (EventKind.BEND, {"loss_db": 1.5, "extent_m": 12.0}, FaultClass.BEND),
        (EventKind.CONNECTOR, {"loss_db": 0.5, "reflectance_spike_db": 4.0}, FaultClass.CONNECTOR),
    ],
)
@pytest.mark.parametrize("coarse_err", [-900.0, 0.0, 1400.0])
def test_refine_recovers_noiseless_onset(quiet_config, kind, kw, fault, coarse_err):
    s = single(kind, 6203.0, quiet_config, **kw)
    t = clean_trace(s)
    assert refine_position(t, fault, 6203.0 + coarse_err, 10000.0) == pytest.approx(6203.0, abs=1.0)


def test_refine_respects_radius(quiet_config):
    s = single(EventKind.SPLICE, 6000.0, quiet_config, loss_db=0.5)
    t = clean_trace(s)
    pos = refine_position(t, FaultClass.SPLICE, 2000.0, 500.0)
    assert 1500.0 <= pos <= 2500.0


def test_infer_refinement_can_be_disabled(tiny_model):
    t = noisy_trace(reference_scenarios()[1])
    r = infer_full(tiny_model, t, refine_radius_m=0)
    if r.detection.position_m is not None:
        assert r.detection.position_m == r.coarse_position_m


# ----------------------------------------------------------------- training


def test_split_disjoint_and_about_a_fifth():
    tr, va = split_indices(5000, split_seed=0)
    assert set(tr).isdisjoint(va)
    assert len(tr) + len(va) == 5000
    assert 0.17 < len(va) / 5000 < 0.23
    tr2, va2 = split_indices(5000, split_seed=1)
    assert not np.array_equal(va, va2)


def test_train_rejects_empty():
    with pytest.raises(ValueError):
        train([], CnnConfig(epochs=1))


def test_train_deterministic():
    ds = SyntheticDataset(SamplerConfig(n_traces=40, master_seed=4))
    cfg = CnnConfig(epochs=2, batch_size=16)
    m1, log1 = train(ds, cfg)
    m2, log2 = train(ds, cfg)
    assert log1 == log2
    assert training_log_csv(log1) == training_log_csv(log2)
    assert m1.to_json() == m2.to_json()
    assert training_log_csv(log1).splitlines()[0] == "epoch,train_loss,val_loss,val_acc"


def test_overfit_single_trace():
    s = reference_scenarios()[2]
    t = noisy_trace(s)
    ds = [(t, s.label)] * 50
    _, log = train(ds, CnnConfig(epochs=30, augment_prob=0.0), train_indices=range(50), val_indices=range(50))
    losses = [e.train_loss for e in log]
    first_below = next(i for i, v in enumerate(losses) if v < 0.05)
    # strictly decreasing from epoch 2 until the loss is small
    assert all(b < a for a, b in zip(losses[1:first_below], losses[2 : first_below + 1]))
    assert losses[-1] < 0.05
    assert log[-1].val_acc == 1.0
