import math

import numpy as np
import pytest

import oracles
from preindex.indicators import (
    CORRELATION_CSV_HEADER,
    CorrelationResult,
    EmptyCurve,
    LengthMismatch,
    LogFormatError,
    RetrainLog,
    StructureMismatch,
    TooFewPoints,
    TooFewSnapshots,
    ZeroNormDenominator,
    ZeroVariance,
    correlate_report,
    correlation_csv_row,
    epochs_to_cutoff,
    grad_norm_total,
    param_change_step,
    param_change_total,
    pearson,
    rankdata,
    read_log,
    spearman,
    write_log,
)
from preindex.tensor_core import make_rng


def test_cutoff_first_rule():
    acc = [80, 85, 88, 89, 89.5, 89.9, 90.2, 91]
    assert epochs_to_cutoff(acc, 90) == 7


def test_cutoff_half_point_rule_at_25():
    acc = [50] * 9 + [89.6] * 60
    assert epochs_to_cutoff(acc, 90) == 25


def test_cutoff_one_point_rule_at_50_and_not_reached():
    assert epochs_to_cutoff([50] * 9 + [89.2] * 60, 90) == 50
    assert epochs_to_cutoff([50] * 9 + [88.5] * 60, 90) is None


def test_cutoff_empty_curve():
    with pytest.raises(EmptyCurve):
        epochs_to_cutoff([], 90)


def test_cutoff_monotone_in_cutoff():
    rng = make_rng(2)
    acc = np.clip(np.cumsum(rng.random(60)) * 2.5, 0, 95)
    prev = 0
    for cutoff in (50, 60, 70, 80, 90, 95):
        e = epochs_to_cutoff(acc, cutoff)
        e = math.inf if e is None else e
        assert e >= prev
        prev = e


def test_grad_norm_total():
    log = RetrainLog()
    assert grad_norm_total(log) == 0.0
    log.steps = [(1, 1, 1.0), (2, 1, 2.0), (3, 2, 3.0)]
    assert grad_norm_total(log) == 6.0
    assert grad_norm_total(log, until_step=2) == 3.0
    assert grad_norm_total(log, until_epoch=1) == 3.0


def layer(w, b=None):
    params = {"W": np.asarray(w, dtype=np.float64)}
    if b is not None:
        params["b"] = np.asarray(b, dtype=np.float64)
    return params


def test_param_change_identical_is_zero():
    w = [layer([[1.0, 2.0]], [0.5]), None]
    assert param_change_step(w, w) == 0.0


def test_param_change_hand_value():
    w_t = [layer([3.0, 4.0])]
    w_prev = [layer([0.0, 0.0])]
    # ||delta|| / sqrt(||w_t||) = 5 / sqrt(5)
    assert param_change_step(w_t, w_prev) == pytest.approx(math.sqrt(5.0), abs=1e-12)


def test_param_change_layer_average():
    w_t = [layer([3.0, 4.0]), layer([1.0, 0.0])]
    w_prev = [layer([0.0, 0.0]), layer([0.0, 0.0])]
    a = 5.0 / math.sqrt(5.0)
    b = 1.0 / math.sqrt(1.0)
    assert param_change_step(w_t, w_prev) == pytest.approx((a + b) / 2, abs=1e-12)


def test_param_change_order_sensitive():
    w_t = [layer([3.0, 4.0])]
    w_prev = [layer([1.0, 1.0])]
    assert param_change_step(w_t, w_prev) != param_change_step(w_prev, w_t)


def test_param_change_count_denominator():
    w_t = [layer([3.0, 4.0])]
    w_prev = [layer([0.0, 0.0])]
    assert param_change_step(w_t, w_prev, denom="count") == pytest.approx(
        5.0 / math.sqrt(2.0), abs=1e-12)


def test_param_change_errors():
    with pytest.raises(StructureMismatch):
        param_change_step([layer([1.0])], [layer([1.0]), layer([2.0])])
    with pytest.raises(ZeroNormDenominator):
        param_change_step([layer([0.0])], [layer([1.0])])


def test_param_change_total():
    snaps = [[layer([0.0, 0.0])], [layer([3.0, 4.0])], [layer([3.0, 4.0])]]
    expect = param_change_step(snaps[1], snaps[0])
    assert param_change_total(snaps) == pytest.approx(expect, abs=1e-12)
    same = [[layer([1.0])]] * 3
    assert param_change_total(same) == 0.0
    with pytest.raises(TooFewSnapshots):
        param_change_total([snaps[0]])


def test_pearson_perfect_linear():
    x = np.arange(10.0)
    res = pearson(x, 2 * x + 1)
    assert res.coefficient == 1.0
    assert res.p_value == 0.0
    assert pearson(x, -x).coefficient == -1.0


def test_pearson_frozen_example():
    # oracle values computed with 50-digit mpmath
    res = pearson([1, 2, 3, 4, 5], [2, 1, 4, 3, 6])
    assert res.coefficient == pytest.approx(0.82199493652678644446, abs=1e-12)
    assert res.p_value == pytest.approx(0.08770664700806554725, abs=1e-12)
    assert res.n == 5


def test_pearson_errors():
    with pytest.raises(TooFewPoints):
        pearson([1, 2], [3, 4])
    with pytest.raises(ZeroVariance):
        pearson([1, 1, 1], [1, 2, 3])
    with pytest.raises(LengthMismatch):
        pearson([1, 2, 3], [1, 2])


def test_pearson_affine_invariance_and_symmetry():
    rng = make_rng(4)
    x, y = rng.random(12), rng.random(12)
    base = pearson(x, y)
    assert pearson(y, x).coefficient == base.coefficient
    shifted = pearson(3.5 * x + 2.0, y)
    assert shifted.coefficient == pytest.approx(base.coefficient, abs=1e-12)


def test_rankdata_ties():
    assert list(rankdata([1, 2, 2, 3])) == [1.0, 2.5, 2.5, 4.0]


def test_spearman_monotone():
    x = np.arange(1.0, 9.0)
    assert spearman(x, np.exp(x)).coefficient == 1.0
    assert spearman(x, -(x ** 3)).coefficient == -1.0


def test_spearman_rank_only():
    x = [1.0, 5.0, 2.0, 8.0, 3.0]
    y = [0.1, 0.9, 0.3, 1.5, 0.6]
    a = spearman(x, y)
    b = spearman(np.argsort(np.argsort(x)).astype(float), y)
    assert a.coefficient == b.coefficient


def test_p_values_match_high_precision_oracle():
    rng = make_rng(50)
    cases = 0
    while cases < 50:
        n = int(rng.integers(4, 21))
        x = rng.random(n)
        y = 0.5 * x + rng.normal(0, 0.4, n)
        rp, pp = oracles.pearson_mp(list(x), list(y))
        res = pearson(x, y)
        assert res.coefficient == pytest.approx(rp, abs=1e-12)
        assert res.p_value == pytest.approx(pp, abs=1e-9)
        rs, ps = oracles.spearman_mp(list(x), list(y))
        sres = spearman(x, y)
        assert sres.coefficient == pytest.approx(rs, abs=1e-12)
        assert sres.p_value == pytest.approx(ps, abs=1e-9)
        cases += 1


def test_correlate_report():
    v = np.arange(6.0)
    res = correlate_report(v, v, "spearman")
    assert res.coefficient == 1.0
    with pytest.raises(LengthMismatch):
        correlate_report([1, 2, 3], [1, 2], "pearson")
    with pytest.raises(ValueError):
        correlate_report(v, v, "kendall")


def test_correlation_csv_row():
    res = CorrelationResult("pearson", 0.72, 4.2e-10, 54)
    row = correlation_csv_row("toy_cnn", "epochs", res)
    assert row == "toy_cnn,epochs,pearson,0.72,4.2e-10,54"
    assert CORRELATION_CSV_HEADER.count(",") == row.count(",")


def test_retrain_log_roundtrip(tmp_path):
    log = RetrainLog()
    log.steps = [(1, 1, 0.5), (2, 1, 0.25), (3, 2, 0.125)]
    log.accuracies = [50.0, 75.0]
    log.snapshots = [(0, [layer([[1.0, 2.0]], [0.0]), None]),
                     (3, [layer([[1.5, 2.5]], [0.1]), None])]
    log.energy = [{"epoch": 1, "energy_joules": 12.5, "co2_kg": 0.001}]
    path = tmp_path / "log.ndjson"
    write_log(log, path, weights_dir=tmp_path)
    back = read_log(path, weights_dir=tmp_path)
    assert back.steps == log.steps
    assert back.accuracies == log.accuracies
    assert back.energy == log.energy
    assert len(back.snapshots) == 2
    step0, w0 = back.snapshots[0]
    assert step0 == 0
    assert np.array_equal(w0[0]["W"], [[1.0, 2.0]])
    assert w0[1] is None


def test_retrain_log_validation():
    log = RetrainLog()
    log.steps = [(2, 1, 0.5), (1, 1, 0.25)]
    with pytest.raises(LogFormatError):
        log.validate()
    log2 = RetrainLog()
    log2.steps = [(1, 2, 0.5), (2, 1, 0.25)]
    with pytest.raises(LogFormatError):
        log2.validate()
    log3 = RetrainLog()
    log3.steps = [(1, 1, -0.5)]
    with pytest.raises(LogFormatError):
        log3.validate()
