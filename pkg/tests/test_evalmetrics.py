import math

import numpy as np
import pytest

from beamvision.channel import LinkParams, synthesize_los_channel
from beamvision.codebook import ArrayGeometry, build_type1_codebook
from beamvision.errors import InvalidArgumentError, ValidationError
from beamvision.evalmetrics import (
    EvalReport,
    RateTable,
    blockage_accuracy,
    mean_positioning_error,
    rate_evaluation,
    top_k_accuracy,
)
from beamvision.scenegen import SampleRecord

TINY_GEOM = ArrayGeometry(n1=2, n2=1)
TINY_CB = build_type1_codebook(TINY_GEOM, o1=2, o2=1)
PARAMS = LinkParams(snr_linear=1e8, carrier_wavelength_m=0.01)


def make_records(n, seed=0, blockage=0.3):
    rng = np.random.default_rng(seed)
    return [
        SampleRecord(
            image_ref=f"images/{i:06d}.png",
            position=np.array([rng.uniform(5, 45), rng.uniform(-45, 45), 0.0]),
            beam_label=0,
            blocked=bool(rng.random() < blockage),
            trajectory_id=0,
        )
        for i in range(n)
    ]


# ------------------------------------------------------------- accuracy


def test_topk_one_hot_perfect():
    labels = np.array([0, 3, 1])
    logits = np.eye(4)[labels]
    assert top_k_accuracy(logits, labels, 1) == 1.0


def test_topk_all_classes_exhaustive():
    rng = np.random.default_rng(0)
    logits = rng.normal(size=(6, 5))
    labels = rng.integers(0, 5, size=6)
    assert top_k_accuracy(logits, labels, 5) == 1.0


def test_topk_hand_enumeration():
    # Rankings by hand: row0 -> [3, 1, ...], row1 -> [0, 2], row2 -> [2, 1],
    # row3 -> [1, 0]; with k=2 the hits are rows 0, 1 and 3.
    logits = np.array(
        [
            [0.1, 2.0, -1.0, 3.0],
            [5.0, 0.0, 4.0, -2.0],
            [0.0, 1.0, 2.0, -1.0],
            [1.0, 2.0, 0.0, 0.5],
        ]
    )
    labels = np.array([1, 2, 3, 0])
    assert top_k_accuracy(logits, labels, 2) == pytest.approx(3 / 4)


def test_topk_tie_breaks_to_lowest_index():
    logits = np.array([[1.0, 1.0, 0.0]])
    assert top_k_accuracy(logits, np.array([0]), 1) == 1.0
    assert top_k_accuracy(logits, np.array([1]), 1) == 0.0


def test_topk_nondecreasing_in_k():
    rng = np.random.default_rng(3)
    logits = rng.normal(size=(40, 8))
    labels = rng.integers(0, 8, size=40)
    accs = [top_k_accuracy(logits, labels, k) for k in range(1, 9)]
    assert all(a <= b for a, b in zip(accs, accs[1:]))
    with pytest.raises(InvalidArgumentError):
        top_k_accuracy(logits, labels, 0)


def test_topk_permutation_invariant():
    rng = np.random.default_rng(4)
    logits = rng.normal(size=(30, 6))
    labels = rng.integers(0, 6, size=30)
    perm = rng.permutation(30)
    assert top_k_accuracy(logits, labels, 2) == top_k_accuracy(logits[perm], labels[perm], 2)


# ------------------------------------------------------------- position


def test_positioning_error_zero():
    pts = np.array([[1.0, 2.0, 3.0], [-1.0, 0.0, 4.0]])
    assert mean_positioning_error(pts, pts) == 0.0


def test_positioning_error_345():
    pred = np.array([[3.0, 4.0, 0.0]])
    truth = np.zeros((1, 3))
    assert mean_positioning_error(pred, truth) == pytest.approx(5.0, abs=1e-12)


def test_positioning_error_hand_mean():
    truth = np.zeros((3, 3))
    pred = np.array([[1.0, 0.0, 0.0], [0.0, 2.0, 0.0], [0.0, 0.0, 4.0]])
    assert mean_positioning_error(pred, truth) == pytest.approx((1 + 2 + 4) / 3, rel=1e-12)
    with pytest.raises(InvalidArgumentError):
        mean_positioning_error(pred, truth[:2])


def test_blockage_accuracy():
    logits = np.array([2.0, -1.0, 0.5, -0.5])
    blocked = np.array([True, False, False, False])
    assert blockage_accuracy(logits, blocked) == pytest.approx(3 / 4)


# ------------------------------------------------------------- rate


def test_rate_ratio_exactly_one_for_oracle_predictions():
    records = make_records(20)
    table = RateTable(records, TINY_CB, PARAMS)
    mean_rate, oracle_rate, ratio = table.evaluate(table.oracle_flat)
    assert ratio == 1.0
    assert mean_rate == oracle_rate


def test_rate_ratio_never_exceeds_one():
    records = make_records(30, seed=5)
    rng = np.random.default_rng(6)
    for _ in range(5):
        preds = rng.integers(0, TINY_CB.num_beams, size=30)
        _, _, ratio = rate_evaluation(records, preds, TINY_CB, PARAMS)
        assert ratio <= 1.0


def test_rate_evaluation_matches_scalar_loop():
    # Independent re-evaluation of the whole formula chain with scalar code:
    # per record, synthesize the channel, score every beam with vdot, apply
    # log2(1 + snr |.|^2), take the brute-force argmax as the oracle.
    records = make_records(10, seed=7)
    rng = np.random.default_rng(8)
    preds = rng.integers(0, TINY_CB.num_beams, size=10)
    mean_rate, oracle_rate, ratio = rate_evaluation(records, preds, TINY_CB, PARAMS)

    pred_rates, oracle_rates = [], []
    for rec, pred in zip(records, preds):
        h = synthesize_los_channel(rec.position, PARAMS, TINY_GEOM, rec.blocked).h
        rates = []
        for flat in range(TINY_CB.num_beams):
            gain = abs(np.vdot(h, TINY_CB.precoders[flat])) ** 2
            rates.append(math.log2(1.0 + PARAMS.snr_linear * gain))
        pred_rates.append(rates[pred])
        oracle_rates.append(max(rates))
    assert mean_rate == pytest.approx(np.mean(pred_rates), rel=1e-9)
    assert oracle_rate == pytest.approx(np.mean(oracle_rates), rel=1e-9)
    assert ratio == pytest.approx(np.mean(pred_rates) / np.mean(oracle_rates), rel=1e-9)


def test_rate_evaluation_misalignment_rejected():
    records = make_records(5)
    with pytest.raises(InvalidArgumentError):
        rate_evaluation(records, np.zeros(4, dtype=np.int64), TINY_CB, PARAMS)
    with pytest.raises(InvalidArgumentError):
        rate_evaluation(records, np.full(5, TINY_CB.num_beams), TINY_CB, PARAMS)


def test_rate_permutation_invariant():
    records = make_records(12, seed=9)
    rng = np.random.default_rng(10)
    preds = rng.integers(0, TINY_CB.num_beams, size=12)
    perm = rng.permutation(12)
    a = rate_evaluation(records, preds, TINY_CB, PARAMS)
    b = rate_evaluation([records[i] for i in perm], preds[perm], TINY_CB, PARAMS)
    assert a[0] == pytest.approx(b[0], rel=1e-12)
    assert a[2] == pytest.approx(b[2], rel=1e-12)


def test_blocked_records_change_rates_not_oracle():
    rec = make_records(1, blockage=0.0)[0]
    blocked = SampleRecord(
        image_ref=rec.image_ref,
        position=rec.position,
        beam_label=rec.beam_label,
        blocked=True,
        trajectory_id=0,
    )
    t_clear = RateTable([rec], TINY_CB, PARAMS)
    t_blocked = RateTable([blocked], TINY_CB, PARAMS)
    assert t_clear.oracle_flat[0] == t_blocked.oracle_flat[0]
    assert t_blocked.rates.max() < t_clear.rates.max()


# ------------------------------------------------------------- report


def test_eval_report_validation():
    EvalReport(top1=0.5, top5=0.8, mean_rate=1.0, oracle_rate=2.0, rate_ratio=0.5, mean_pos_err=3.0)
    with pytest.raises(ValidationError):
        EvalReport(top1=0.9, top5=0.8, mean_rate=1.0, oracle_rate=2.0, rate_ratio=0.5, mean_pos_err=3.0)
    with pytest.raises(ValidationError):
        EvalReport(top1=0.5, top5=0.8, mean_rate=2.2, oracle_rate=2.0, rate_ratio=1.1, mean_pos_err=3.0)
