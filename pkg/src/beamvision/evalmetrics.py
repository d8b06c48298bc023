"""Evaluation quantities: top-k beam accuracy, achievable-rate ratio against
the exhaustive-search oracle, and mean Euclidean positioning error.

Rates are recomputed from stored positions and blockage flags; the channel
synthesis is deterministic, so this doubles as a consistency check on stored
labels. Cross-run comparisons should use the rate ratio, not absolute rates.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .channel import LinkParams, beamforming_gains, synthesize_los_channel
from .codebook import BeamCodebook
from .errors import InvalidArgumentError, ValidationError


@dataclass
class EvalReport:
    top1: float
    top5: float
    mean_rate: float
    oracle_rate: float
    rate_ratio: float
    mean_pos_err: float
    blockage_accuracy: float | None = None

    def __post_init__(self) -> None:
        if self.top1 > self.top5 + 1e-12:
            raise ValidationError(f"top1 {self.top1} exceeds top5 {self.top5}")
        if self.rate_ratio > 1.0 + 1e-12:
            raise ValidationError(f"rate_ratio {self.rate_ratio} exceeds 1")

    def to_dict(self) -> dict:
        return {
            "top1": self.top1,
            "top5": self.top5,
            "mean_rate": self.mean_rate,
            "oracle_rate": self.oracle_rate,
            "rate_ratio": self.rate_ratio,
            "mean_pos_err": self.mean_pos_err,
            "blockage_accuracy": self.blockage_accuracy,
        }


def top_k_accuracy(beam_logits: np.ndarray, beam_labels: np.ndarray, k: int) -> float:
    """Fraction of samples whose true label is among the k highest logits,
    ties resolved toward the lowest index."""
    if k < 1:
        raise InvalidArgumentError(f"k must be >= 1, got {k}")
    beam_logits = np.asarray(beam_logits)
    beam_labels = np.asarray(beam_labels)
    order = np.argsort(-beam_logits, axis=1, kind="stable")[:, :k]
    hits = (order == beam_labels[:, None]).any(axis=1)
    return float(hits.mean())


def mean_positioning_error(position_pred: np.ndarray, positions: np.ndarray) -> float:
    """Mean Euclidean distance between predicted and true positions, meters."""
    pred = np.asarray(position_pred, dtype=np.float64)
    truth = np.asarray(positions, dtype=np.float64)
    if pred.shape != truth.shape:
        raise InvalidArgumentError(f"shape mismatch: {pred.shape} vs {truth.shape}")
    return float(np.linalg.norm(pred - truth, axis=1).mean())


def blockage_accuracy(blockage_logits: np.ndarray, blocked: np.ndarray) -> float:
    """Fraction of correct binary blockage decisions (logit > 0 means blocked)."""
    pred = np.asarray(blockage_logits) > 0
    return float((pred == np.asarray(blocked, dtype=bool)).mean())


class RateTable:
    """Per-sample achievable rates for every codebook beam.

    Channels are resynthesized once from the records' stored positions and
    blockage flags; evaluating a prediction set is then a table lookup, so
    per-epoch rate logging stays cheap and bitwise reproducible.
    """

    def __init__(self, records, codebook: BeamCodebook, params: LinkParams) -> None:
        n = len(records)
        self.rates = np.empty((n, codebook.num_beams), dtype=np.float64)
        self.oracle_flat = np.empty(n, dtype=np.int64)
        for i, rec in enumerate(records):
            h = synthesize_los_channel(rec.position, params, codebook.geometry, rec.blocked)
            gains = beamforming_gains(h, codebook)
            self.rates[i] = np.log2(1.0 + params.snr_linear * gains)
            self.oracle_flat[i] = int(np.argmax(gains))

    @property
    def n(self) -> int:
        return self.rates.shape[0]

    def evaluate(self, predictions: np.ndarray) -> tuple[float, float, float]:
        """(mean predicted rate, mean oracle rate, their ratio)."""
        predictions = np.asarray(predictions, dtype=np.int64)
        if predictions.shape != (self.n,):
            raise InvalidArgumentError(
                f"predictions length {predictions.shape} does not match {self.n} records"
            )
        if predictions.min() < 0 or predictions.max() >= self.rates.shape[1]:
            raise InvalidArgumentError("prediction indices outside the codebook")
        rows = np.arange(self.n)
        mean_rate = float(self.rates[rows, predictions].mean())
        oracle_rate = float(self.rates[rows, self.oracle_flat].mean())
        return mean_rate, oracle_rate, mean_rate / oracle_rate


def rate_evaluation(
    records, predictions: np.ndarray, codebook: BeamCodebook, params: LinkParams
) -> tuple[float, float, float]:
    """Resynthesize channels for the records and compare the predicted
    precoders against the exhaustive-search oracle.

    Returns (mean_rate, oracle_rate, rate_ratio) in bits/s/Hz and ratio.
    """
    predictions = np.asarray(predictions)
    if len(predictions) != len(records):
        raise InvalidArgumentError(
            f"{len(predictions)} predictions for {len(records)} records"
        )
    return RateTable(records, codebook, params).evaluate(predictions)
