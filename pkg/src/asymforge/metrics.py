"""Dice evaluation over tumor regions and modality-availability combinations.

Dice is 2|P n G| / (|P| + |G|), with the empty-vs-empty case defined as 1.0
(both sides agree there is no tumor). Scores are averaged per sample first
(macro average). The 15 nonempty modality subsets are enumerated in a fixed
canonical order: ascending 4-bit patterns with FLAIR as the most significant
bit, then T1ce, T1, T2.
"""

from __future__ import annotations

import csv
import io as _io
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Sequence

from .errors import DimensionMismatch, EmptySplit, MissingCombination
from .synth import region_masks
from .volume import (
    MODALITIES,
    BrainMask,
    LabelVolume,
    MultiModalVolume,
    restrict_modalities,
)

Predictor = Callable[..., LabelVolume]
SamplePair = tuple[MultiModalVolume, LabelVolume]

_BIT_WEIGHTS = (8, 4, 2, 1)  # FLAIR, T1ce, T1, T2


def dice(pred: BrainMask, truth: BrainMask) -> float:
    """Overlap score in [0, 1]; 1.0 when both masks are empty."""
    if pred.dims != truth.dims:
        raise DimensionMismatch(f"mask dims differ: {pred.dims} vs {truth.dims}")
    p = int(pred.data.sum())
    g = int(truth.data.sum())
    if p + g == 0:
        return 1.0
    overlap = int((pred.data & truth.data).sum())
    return 2.0 * overlap / (p + g)


def modality_combinations() -> list[tuple[int, ...]]:
    """All 15 nonempty modality subsets in canonical order."""
    combos = []
    for pattern in range(1, 16):
        combos.append(
            tuple(i for i, w in enumerate(_BIT_WEIGHTS) if pattern & w)
        )
    return combos


def combo_name(combo: Sequence[int]) -> str:
    return "+".join(MODALITIES[i].upper() for i in combo)


def evaluate(
    predict: Predictor,
    samples: Sequence[SamplePair],
    combo: Sequence[int],
) -> tuple[float, float, float]:
    """Mean (WT, TC, ET) Dice with only the listed modalities available.

    ``predict`` maps a restricted modality bundle to a label volume.
    """
    if not combo:
        raise ValueError("modality combination must be nonempty")
    if not samples:
        raise EmptySplit("no samples to evaluate")
    totals = [0.0, 0.0, 0.0]
    for image, truth in samples:
        restricted = restrict_modalities(image, combo)
        predicted = predict(restricted)
        rm_pred = region_masks(predicted)
        rm_true = region_masks(truth)
        totals[0] += dice(rm_pred.wt, rm_true.wt)
        totals[1] += dice(rm_pred.tc, rm_true.tc)
        totals[2] += dice(rm_pred.et, rm_true.et)
    n = len(samples)
    return totals[0] / n, totals[1] / n, totals[2] / n


@dataclass(frozen=True)
class DiceRow:
    combination: str
    wt: float  # percent
    tc: float
    et: float


@dataclass(frozen=True)
class DiceReport:
    """15 per-combination rows plus their arithmetic mean."""

    rows: tuple[DiceRow, ...]
    average: DiceRow

    def to_csv(self) -> str:
        buf = _io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["combination", "WT", "TC", "ET"])
        for row in self.rows + (self.average,):
            writer.writerow([row.combination, f"{row.wt:.2f}", f"{row.tc:.2f}", f"{row.et:.2f}"])
        return buf.getvalue()

    def save(self, path: str | Path) -> None:
        Path(path).write_text(self.to_csv())


def evaluate_all(predict: Predictor, samples: Sequence[SamplePair]) -> DiceReport:
    """Evaluate every one of the 15 modality combinations."""
    results = {}
    for combo in modality_combinations():
        results[combo_name(combo)] = evaluate(predict, samples, combo)
    return report(results)


def report(results: dict[str, tuple[float, float, float]]) -> DiceReport:
    """Build the fixed-schema report from per-combination (WT, TC, ET) Dice
    fractions. All 15 combinations must be present."""
    expected = [combo_name(c) for c in modality_combinations()]
    missing = [name for name in expected if name not in results]
    if missing:
        raise MissingCombination(f"missing combinations: {missing}")
    rows = tuple(
        DiceRow(name, *(100.0 * v for v in results[name])) for name in expected
    )
    n = len(rows)
    average = DiceRow(
        "average",
        sum(r.wt for r in rows) / n,
        sum(r.tc for r in rows) / n,
        sum(r.et for r in rows) / n,
    )
    return DiceReport(rows=rows, average=average)
