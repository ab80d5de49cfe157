import math

import numpy as np
import pytest

from msdetect.detectors import (
    LAMBDA_S,
    Detector,
    DetectorConfig,
    DetectorStopped,
    Rule,
    cusum_update,
    new_state,
    score_lr,
    score_max,
    score_mei_g,
    score_s,
    score_xs,
    step,
)
from msdetect.windows import WindowSet
from oracles import brute_window_stat, cusum_window_max

LAI = WindowSet.lai(3, 2, 24)


def test_score_s_examples():
    assert score_s(-1.0, 0.1) == pytest.approx(math.log(1 + 0.1 * (LAMBDA_S - 1)), abs=1e-12)
    assert score_s(0.0, 0.1) == pytest.approx(-0.017306, abs=1e-6)
    assert score_s(0.0, 1.0) == pytest.approx(-0.188226, abs=1e-6)
    assert score_s(100.0, 0.1) == pytest.approx(math.log(0.1 * LAMBDA_S) + 2500, abs=1e-6)


def test_score_xs_examples():
    assert score_xs(0.0, 0.3) == 0.0
    assert score_xs(2.0, 0.1) == pytest.approx(math.log(0.9 + 0.1 * math.exp(2.0)), abs=1e-12)
    assert score_xs(2.0, 0.1) == pytest.approx(0.494029, abs=1e-6)
    assert score_xs(-5.0, 0.1) == 0.0


def test_score_lr_examples():
    assert score_lr(0.0, 1, 1.0, 0.1) == 0.0
    assert score_lr(5.0, 1, 1.0, 0.1) == pytest.approx(2.197415, abs=1e-6)
    assert score_lr(3.0, 2, 1.0, 1.0) == pytest.approx(2.0)


def test_cusum_and_mei_scores():
    assert cusum_update(0.0, 0.3, 1.0) == 0.0
    assert cusum_update(1.2, 1.5, 1.0) == pytest.approx(2.2)
    assert score_mei_g(0.0, 0.1, 0.64) == pytest.approx(-0.036664, abs=1e-6)
    assert score_mei_g(3.0, 1.0, 0.64) == pytest.approx(math.log(0.64) + 1.5, abs=1e-15)
    assert score_mei_g(200.0, 0.1, 0.64) == pytest.approx(math.log(0.064) + 100, abs=1e-6)
    assert score_max(-2.0) == 0.0 and score_max(2.0) == 2.0


def test_config_validation_and_labels():
    with pytest.raises(ValueError):
        DetectorConfig(Rule.S)
    with pytest.raises(ValueError):
        DetectorConfig(Rule.XS, p0=1.5)
    with pytest.raises(ValueError):
        DetectorConfig(Rule.MEI_EXT, p0=0.1, lambda_m=2.0)
    with pytest.raises(ValueError):
        DetectorConfig("NOPE")
    cfg = DetectorConfig(Rule.MEI_EXT, p0=0.1)
    assert cfg.mu0 == 1.0 and cfg.lambda_m == pytest.approx(0.6409, abs=1e-4)
    assert cfg.label() == "Mei(0.1)"
    assert DetectorConfig(Rule.MEI).label() == "Mei"
    assert DetectorConfig(Rule.MAX).windows.max_window == 200
    s = DetectorConfig(Rule.S, p0=0.3, windows=LAI, b=4.0)
    assert DetectorConfig.from_dict(s.to_dict()) == s
    assert DetectorConfig.from_dict(cfg.to_dict()) == cfg


RULES = [
    (Rule.MAX, "MAX", {}),
    (Rule.XS, "XS", {"p0": 0.2}),
    (Rule.S, "S", {"p0": 0.1}),
    (Rule.S, "S", {"p0": 1.0}),
    (Rule.LR, "LR", {"p0": 0.1, "mu0": 1.0}),
]


@pytest.mark.parametrize("rule,name,kw", RULES)
@pytest.mark.parametrize("windows", [LAI, WindowSet.range(1, 12)])
def test_window_statistic_matches_brute_force(rule, name, kw, windows):
    rng = np.random.default_rng(hash((name, windows.max_window)) % 2**32)
    x = rng.normal(size=(60, 5)) + 0.4
    det = Detector(DetectorConfig(rule, windows=windows, **kw), 5)
    for t in range(1, 61):
        v = det.step(x[t - 1])
        ref = brute_window_stat(name, x, t, windows.windows, **kw)
        assert v.statistic == pytest.approx(ref, rel=1e-9, abs=1e-9)


def test_cusum_recursion_matches_window_max():
    rng = np.random.default_rng(1)
    x = rng.normal(size=(50, 4)) + 0.3
    det = Detector(DetectorConfig(Rule.MEI), 4)
    ref = cusum_window_max(x, 1.0)
    for t in range(50):
        v = det.step(x[t])
        assert v.statistic == pytest.approx(ref[t].sum(), abs=1e-9)
        assert np.allclose(det.state.cusum, ref[t], atol=1e-9)


def test_mei_ext_statistic():
    rng = np.random.default_rng(2)
    x = rng.normal(size=(30, 3)) + 0.5
    det = Detector(DetectorConfig(Rule.MEI_EXT, p0=0.2, lambda_m=0.64), 3)
    ref = cusum_window_max(x, 1.0)
    for t in range(30):
        v = det.step(x[t])
        want = np.sum(np.log(1 - 0.2 + 0.2 * 0.64 * np.exp(ref[t] / 2)))
        assert v.statistic == pytest.approx(want, abs=1e-9)


@pytest.mark.parametrize("cfg", [DetectorConfig(Rule.MAX), DetectorConfig(Rule.S, p0=0.1),
                                 DetectorConfig(Rule.MEI), DetectorConfig(Rule.MEI_EXT, p0=0.3)])
def test_very_low_threshold_stops_at_one(cfg):
    det = Detector(cfg.with_b(-1e9), 4)
    v = det.step(np.zeros(4))
    assert v.stopped and v.t == 1
    with pytest.raises(DetectorStopped):
        det.step(np.zeros(4))


def test_step_rejects_bad_column():
    det = Detector(DetectorConfig(Rule.S, p0=0.1), 3)
    with pytest.raises(ValueError):
        det.step(np.zeros(4))


def test_zero_input_never_alarms_s():
    det = Detector(DetectorConfig(Rule.S, p0=0.1, b=5.0), 10)
    for _ in range(20):
        v = det.step(np.zeros(10))
        assert not v.stopped and v.statistic < 0


def test_mei_equals_mei_ext_at_p0_one():
    n, lam, b = 6, 0.64, 9.0
    for seed in range(20):
        x = np.random.default_rng(seed).normal(size=(400, n)) + 0.15
        raw = Detector(DetectorConfig(Rule.MEI, b=b), n).advance(x, b, prune=False)
        b_ext = n * math.log(lam) + b / 2
        ext = Detector(DetectorConfig(Rule.MEI_EXT, p0=1.0, lambda_m=lam, b=b_ext), n)
        res = ext.advance(x, b_ext, prune=False)
        assert (raw.stopped, raw.steps) == (res.stopped, res.steps)


@pytest.mark.parametrize("cfg", [
    DetectorConfig(Rule.S, p0=0.1, windows=LAI),
    DetectorConfig(Rule.S, p0=0.5, windows=LAI),
    DetectorConfig(Rule.XS, p0=0.1, windows=LAI),
    DetectorConfig(Rule.LR, p0=0.1, windows=LAI),
    DetectorConfig(Rule.MAX, windows=LAI),
])
def test_pruning_preserves_records_and_stops(cfg):
    rng = np.random.default_rng(7)
    n = 30
    x = rng.normal(size=(3000, n))
    full = Detector(cfg, n).advance(x, math.inf, prune=False)
    fast = Detector(cfg, n).advance(x, math.inf, floor_min=-math.inf, prune=True)
    assert np.array_equal(full.record_t, fast.record_t)
    assert np.allclose(full.record_v, fast.record_v, rtol=1e-12, atol=1e-12)
    b = float(full.record_v[-3])
    stop = Detector(cfg, n).advance(x, b, floor_min=b)
    assert stop.stopped and stop.steps == full.record_t[-3]


def test_functional_step():
    cfg = DetectorConfig(Rule.S, p0=0.1, windows=LAI, b=1.0)
    st = new_state(cfg, 2)
    st, v = step(cfg, st, [0.1, 0.2])
    assert v.t == 1 and st.t == 1


def test_argmax_window_reported():
    cfg = DetectorConfig(Rule.MAX, windows=WindowSet.range(1, 5), b=1e9)
    det = Detector(cfg, 1)
    for val in (0.0, 0.0, 3.0):
        v = det.step([val])
    assert v.argmax_window == 1
