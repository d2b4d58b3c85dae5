"""Measurement machinery: diagnostic accuracy, per-disease breakdowns,
misclassification ranking, safety pass rate, Krippendorff's alpha, and the
composite reward used for reward-based fine-tuning experiments (minus its KL
term, which needs model internals and is out of scope)."""

from __future__ import annotations

import json
from collections import Counter, defaultdict
from dataclasses import dataclass
from decimal import ROUND_HALF_UP, Decimal
from enum import Enum
from pathlib import Path

from .consult import detect_predict
from .corpus import DiseaseCatalog, ShareGPTConversation, default_catalog
from .errors import (
    CatalogError,
    InsufficientData,
    MalformedPrediction,
    MedaidError,
    ValidationError,
)
from .quality import mentions


def round_half_up(value: float, digits: int = 1) -> float:
    """Display rounding; internal metric values keep full precision."""
    exp = Decimal(10) ** -digits
    return float(Decimal(repr(value)).quantize(exp, rounding=ROUND_HALF_UP))


@dataclass(frozen=True)
class PredictionRecord:
    dialogue_id: str
    gold: str
    predicted: str | None = None
    session_failed: bool = False

    def __post_init__(self):
        if self.predicted is None and not self.session_failed:
            raise ValidationError(
                f"record {self.dialogue_id!r}: missing prediction implies a failed session"
            )

    def to_dict(self) -> dict:
        return {
            "dialogue_id": self.dialogue_id,
            "gold": self.gold,
            "predicted": self.predicted,
            "session_failed": self.session_failed,
        }


@dataclass(frozen=True)
class PerDiseaseRow:
    correct: int
    total: int

    @property
    def accuracy(self) -> float:
        return 100.0 * self.correct / self.total


@dataclass
class PerDiseaseAccuracy:
    rows: dict[str, PerDiseaseRow]

    def to_dict(self) -> dict:
        return {
            disease: {
                "correct": row.correct,
                "total": row.total,
                "accuracy": round_half_up(row.accuracy),
            }
            for disease, row in sorted(self.rows.items())
        }


@dataclass
class ConfusionTable:
    counts: dict[tuple[str, str], int]

    def to_dict(self) -> dict:
        return {
            "counts": [
                {"gold": g, "predicted": p, "count": c}
                for (g, p), c in sorted(self.counts.items())
            ]
        }


class Scale(str, Enum):
    LIKERT = "likert_1_5"
    PASS_FAIL = "pass_fail"


@dataclass
class AnnotationMatrix:
    units: list[str]
    raters: list[str]
    cells: dict[tuple[str, str], float]  # (unit, rater) -> score
    scale: Scale

    def __post_init__(self):
        rated_units = {unit for unit, _ in self.cells}
        for unit in self.units:
            if unit not in rated_units:
                raise ValidationError(f"unit {unit!r} has no ratings")
        for (unit, rater), score in self.cells.items():
            if unit not in self.units or rater not in self.raters:
                raise ValidationError(f"cell ({unit!r}, {rater!r}) names unknown unit/rater")
            if self.scale is Scale.LIKERT and score not in (1, 2, 3, 4, 5):
                raise ValidationError(f"Likert score {score!r} outside 1..5")
            if self.scale is Scale.PASS_FAIL and score not in (0, 1):
                raise ValidationError(f"pass/fail score {score!r} not in {{0, 1}}")

    def unit_values(self) -> dict[str, list[float]]:
        values: dict[str, list[float]] = defaultdict(list)
        for (unit, _), score in sorted(self.cells.items()):
            values[unit].append(score)
        return values


@dataclass
class RewardBreakdown:
    diagnostic: float
    conversation_quality: float
    format_compliance: float
    weights: tuple[float, float, float]

    @property
    def total(self) -> float:
        w_d, w_c, w_f = self.weights
        return (
            w_d * self.diagnostic
            + w_c * self.conversation_quality
            + w_f * self.format_compliance
        )

    def to_dict(self) -> dict:
        return {
            "diagnostic": self.diagnostic,
            "conversation_quality": self.conversation_quality,
            "format_compliance": self.format_compliance,
            "weights": list(self.weights),
            "total": self.total,
        }


DEFAULT_REWARD_WEIGHTS = (1.0, 0.5, 0.25)


def accuracy(records: list[PredictionRecord]) -> float:
    """Percentage of records whose prediction equals gold; failed sessions
    count as incorrect rather than being excluded."""
    if not records:
        raise MedaidError("cannot compute accuracy over zero records")
    correct = sum(1 for r in records if r.predicted == r.gold)
    return 100.0 * correct / len(records)


def per_disease(records: list[PredictionRecord]) -> PerDiseaseAccuracy:
    if not records:
        raise MedaidError("cannot compute per-disease accuracy over zero records")
    totals: Counter[str] = Counter()
    corrects: Counter[str] = Counter()
    for r in records:
        totals[r.gold] += 1
        if r.predicted == r.gold:
            corrects[r.gold] += 1
    return PerDiseaseAccuracy(
        rows={g: PerDiseaseRow(correct=corrects[g], total=totals[g]) for g in totals}
    )


def confusion(records: list[PredictionRecord]) -> ConfusionTable:
    counts: Counter[tuple[str, str]] = Counter()
    for r in records:
        if r.predicted is not None:
            counts[(r.gold, r.predicted)] += 1
    return ConfusionTable(counts=dict(counts))


def top_misclassifications(
    records: list[PredictionRecord], k: int = 10
) -> list[tuple[str, str, int]]:
    """(gold, predicted, frequency) for wrong predictions, most frequent
    first; ties broken lexicographically by the pair."""
    counts: Counter[tuple[str, str]] = Counter()
    for r in records:
        if r.predicted is not None and r.predicted != r.gold:
            counts[(r.gold, r.predicted)] += 1
    ranked = sorted(counts.items(), key=lambda item: (-item[1], item[0]))
    return [(g, p, c) for (g, p), c in ranked[:k]]


def safety_pass_rate(matrix: AnnotationMatrix) -> float:
    """Mean over raters of their individual pass percentages."""
    if matrix.scale is not Scale.PASS_FAIL:
        raise ValidationError("safety pass rate needs a pass/fail matrix")
    per_rater: list[float] = []
    for rater in matrix.raters:
        scores = [s for (_, r), s in matrix.cells.items() if r == rater]
        if scores:
            per_rater.append(100.0 * sum(scores) / len(scores))
    if not per_rater:
        raise InsufficientData("no rated units")
    return sum(per_rater) / len(per_rater)


def _delta_sq(metric: str, a: float, b: float) -> float:
    if metric == "interval":
        return (a - b) ** 2
    if metric == "nominal":
        return 0.0 if a == b else 1.0
    raise ValidationError(f"unknown difference metric {metric!r}")


def krippendorff_alpha(matrix: AnnotationMatrix, metric: str = "interval") -> float:
    """alpha = 1 - D_o/D_e via the coincidence-matrix formulation.

    Units with fewer than two ratings cannot be paired and are excluded.
    Returns 1.0 by convention when expected disagreement is zero.
    """
    pairable = {u: vals for u, vals in matrix.unit_values().items() if len(vals) >= 2}
    if len(matrix.cells) < 2 or not pairable:
        raise InsufficientData(
            "need at least two ratings overall and one unit with two or more raters"
        )
    n = sum(len(vals) for vals in pairable.values())

    coincidence: dict[tuple[float, float], float] = defaultdict(float)
    for vals in pairable.values():
        m_u = len(vals)
        for i, v in enumerate(vals):
            for j, w in enumerate(vals):
                if i != j:
                    coincidence[(v, w)] += 1.0 / (m_u - 1)

    marginals: dict[float, float] = defaultdict(float)
    for (v, _), count in coincidence.items():
        marginals[v] += count

    observed = sum(
        count * _delta_sq(metric, v, w) for (v, w), count in coincidence.items()
    ) / n
    expected = sum(
        marginals[v] * marginals[w] * _delta_sq(metric, v, w)
        for v in marginals
        for w in marginals
    ) / (n * (n - 1))
    if expected == 0.0:
        return 1.0
    return 1.0 - observed / expected


def grpo_reward(
    transcript: ShareGPTConversation,
    gold: str,
    catalog: DiseaseCatalog | None = None,
    weights: tuple[float, float, float] = DEFAULT_REWARD_WEIGHTS,
) -> RewardBreakdown:
    """Composite reward: gold-label correctness of the final prediction,
    conversation quality (symptom coverage and per-turn relevance, averaged),
    and output format compliance."""
    catalog = catalog or default_catalog()
    entries = transcript.conversations
    if not entries:
        raise MedaidError("cannot score an empty transcript")
    canonical_gold = catalog.canonical(gold)
    if canonical_gold is None:
        raise CatalogError(f"gold label {gold!r} not in catalog")

    gpt_turns = [e for e in entries if e.from_ == "gpt"]
    final_gpt = gpt_turns[-1] if gpt_turns else None

    diagnostic = 0.0
    if final_gpt is not None:
        try:
            prediction = detect_predict(final_gpt.value, catalog)
        except MalformedPrediction:
            prediction = None
        if prediction is not None and prediction.disease == canonical_gold:
            diagnostic = 1.0

    dialogue_text = " ".join(e.value for e in entries if e.from_ != "system")
    gold_symptoms = catalog.symptoms(canonical_gold)
    coverage = sum(1 for s in gold_symptoms if mentions(dialogue_text, s)) / len(gold_symptoms)

    probing_turns = gpt_turns[:-1]
    all_symptoms = catalog.all_symptoms()
    if probing_turns:
        relevant = sum(
            1 for t in probing_turns if any(mentions(t.value, s) for s in all_symptoms)
        )
        relevance = relevant / len(probing_turns)
    else:
        relevance = 0.0
    conversation_quality = 0.5 * coverage + 0.5 * relevance

    format_compliance = 1.0 if _format_ok(transcript) else 0.0

    return RewardBreakdown(
        diagnostic=diagnostic,
        conversation_quality=conversation_quality,
        format_compliance=format_compliance,
        weights=weights,
    )


def _format_ok(transcript: ShareGPTConversation) -> bool:
    """System-first, strict human/gpt alternation ending on gpt, and exactly
    one prediction marker located in the final gpt turn."""
    from .consult import PREDICT_MARKER

    entries = transcript.conversations
    if len(entries) < 3 or entries[0].from_ != "system":
        return False
    body = entries[1:]
    for i, entry in enumerate(body):
        expected = "human" if i % 2 == 0 else "gpt"
        if entry.from_ != expected:
            return False
    if body[-1].from_ != "gpt":
        return False
    marker_total = sum(e.value.count(PREDICT_MARKER) for e in entries)
    return marker_total == 1 and body[-1].value.count(PREDICT_MARKER) == 1


def write_prediction_log(records: list[PredictionRecord], path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for record in records:
            fh.write(json.dumps(record.to_dict(), ensure_ascii=False) + "\n")


def read_prediction_log(path: str | Path) -> list[PredictionRecord]:
    records = []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            if not line.strip():
                continue
            raw = json.loads(line)
            records.append(
                PredictionRecord(
                    dialogue_id=raw["dialogue_id"],
                    gold=raw["gold"],
                    predicted=raw.get("predicted"),
                    session_failed=raw.get("session_failed", False),
                )
            )
    return records


def read_annotation_file(path: str | Path) -> AnnotationMatrix:
    with open(path, encoding="utf-8") as fh:
        raw = json.load(fh)
    cells = {(c["unit"], c["rater"]): c["score"] for c in raw["cells"]}
    return AnnotationMatrix(
        units=list(raw["units"]),
        raters=list(raw["raters"]),
        cells=cells,
        scale=Scale(raw["scale"]),
    )


def write_annotation_file(matrix: AnnotationMatrix, path: str | Path) -> None:
    payload = {
        "scale": matrix.scale.value,
        "raters": matrix.raters,
        "units": matrix.units,
        "cells": [
            {"unit": unit, "rater": rater, "score": score}
            for (unit, rater), score in sorted(matrix.cells.items())
        ],
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, ensure_ascii=False, indent=2)
