"""Consensus building, cropping, agreement and sleep-architecture metrics."""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, fields
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .errors import AlignmentError, DegenerateError, EmptyError, NoSleepError
from .stager import STAGES, Stage

__all__ = [
    "Hypnogram",
    "ScorerPanel",
    "ConfusionMatrix",
    "SleepMetrics",
    "majority_consensus",
    "crop_analysis_period",
    "confusion_matrix",
    "row_normalize",
    "accuracy",
    "cohen_kappa",
    "sleep_metrics",
    "mad_vs_consensus",
    "leave_one_out_mad",
    "agreement_distribution",
    "read_hypnogram_csv",
    "hypnogram_to_csv",
    "read_panel_dir",
]

EPOCH_MINUTES = 0.5
_STAGE_INDEX = {s: i for i, s in enumerate(STAGES)}


@dataclass(frozen=True)
class Hypnogram:
    stages: tuple[Stage, ...]

    def __post_init__(self):
        stages = tuple(Stage.parse(s) if isinstance(s, str) and not isinstance(s, Stage) else s
                       for s in self.stages)
        if any(s is Stage.Undefined for s in stages):
            raise ValueError("a hypnogram cannot contain Undefined epochs")
        object.__setattr__(self, "stages", stages)

    @classmethod
    def of(cls, tokens: Iterable) -> "Hypnogram":
        return cls(tuple(Stage.parse(t) if not isinstance(t, Stage) else t for t in tokens))

    @property
    def epoch_count(self) -> int:
        return len(self.stages)

    def __len__(self) -> int:
        return len(self.stages)

    def codes(self) -> np.ndarray:
        """Stage indices in (W, N1, N2, N3, R) order."""
        return np.array([_STAGE_INDEX[s] for s in self.stages], dtype=np.int64)

    def crop(self, first: int, last: int) -> "Hypnogram":
        return Hypnogram(self.stages[first:last + 1])


@dataclass(frozen=True)
class ScorerPanel:
    scorers: tuple[Hypnogram, ...]
    consensus: Hypnogram
    agreement_ratio: np.ndarray
    tie_flags: np.ndarray

    def crop(self, first: int, last: int) -> "ScorerPanel":
        return ScorerPanel(tuple(h.crop(first, last) for h in self.scorers), self.consensus.crop(first, last),
                           self.agreement_ratio[first:last + 1], self.tie_flags[first:last + 1])


@dataclass(frozen=True)
class ConfusionMatrix:
    """Counts indexed ``[reference, predicted]`` in (W, N1, N2, N3, R) order."""

    counts: np.ndarray

    def __post_init__(self):
        counts = np.asarray(self.counts, dtype=np.int64)
        if counts.shape != (5, 5) or (counts < 0).any():
            raise ValueError("confusion counts must be a non-negative 5x5 array")
        object.__setattr__(self, "counts", counts)

    @property
    def total(self) -> int:
        return int(self.counts.sum())


@dataclass(frozen=True)
class SleepMetrics:
    tst_min: float
    sleep_efficiency_pct: float
    waso_min: float
    n1_min: float
    n2_min: float
    n3_min: float
    rem_min: float
    n1_pct: float
    n2_pct: float
    n3_pct: float
    rem_pct: float

    def as_dict(self) -> dict[str, float]:
        return {f.name: getattr(self, f.name) for f in fields(self)}


def _check_aligned(*hyps: Hypnogram) -> None:
    lengths = {len(h) for h in hyps}
    if len(lengths) > 1:
        raise AlignmentError(f"hypnogram lengths differ: {sorted(lengths)}")


def majority_consensus(scorers: Sequence[Hypnogram]) -> ScorerPanel:
    """Per-epoch modal stage; ties go to the earliest stage in (W, N1, N2, N3, R)."""
    if len(scorers) < 2:
        raise ValueError("a consensus needs at least two scorers")
    _check_aligned(*scorers)
    codes = np.stack([h.codes() for h in scorers])
    counts = np.stack([(codes == k).sum(axis=0) for k in range(5)])  # (5, T)
    modal = counts.argmax(axis=0)  # first maximum, i.e. stage order
    top = counts.max(axis=0)
    ties = (counts == top).sum(axis=0) > 1
    consensus = Hypnogram(tuple(STAGES[k] for k in modal))
    return ScorerPanel(tuple(scorers), consensus, top / len(scorers), ties)


def crop_analysis_period(panel: ScorerPanel | Sequence[Hypnogram]) -> tuple[int, int]:
    """First and last epoch where any scorer scored something other than Wake."""
    scorers = panel.scorers if isinstance(panel, ScorerPanel) else tuple(panel)
    if not scorers or len(scorers[0]) == 0:
        raise EmptyError("panel is empty")
    _check_aligned(*scorers)
    asleep = np.any(np.stack([h.codes() for h in scorers]) != 0, axis=0)
    idx = np.flatnonzero(asleep)
    if idx.size == 0:
        raise NoSleepError("every scorer scored Wake throughout")
    return int(idx[0]), int(idx[-1])


def confusion_matrix(predicted: Hypnogram, reference: Hypnogram) -> ConfusionMatrix:
    _check_aligned(predicted, reference)
    counts = np.zeros((5, 5), dtype=np.int64)
    np.add.at(counts, (reference.codes(), predicted.codes()), 1)
    return ConfusionMatrix(counts)


def row_normalize(cm: ConfusionMatrix, decimals: int | None = 1) -> np.ndarray:
    """Row percentages; all-zero rows stay zero."""
    counts = cm.counts.astype(np.float64)
    rows = counts.sum(axis=1, keepdims=True)
    pct = np.divide(counts * 100.0, rows, out=np.zeros_like(counts), where=rows > 0)
    return np.round(pct, decimals) if decimals is not None else pct


def accuracy(cm: ConfusionMatrix) -> float:
    if cm.total == 0:
        raise EmptyError("confusion matrix is empty")
    return float(np.trace(cm.counts) / cm.total)


def cohen_kappa(cm: ConfusionMatrix) -> float:
    n = cm.total
    if n == 0:
        raise EmptyError("confusion matrix is empty")
    c = cm.counts.astype(np.float64)
    p_o = np.trace(c) / n
    p_e = float(np.dot(c.sum(axis=1), c.sum(axis=0)) / n**2)
    if np.isclose(p_e, 1.0, rtol=0, atol=1e-12):
        raise DegenerateError("expected agreement is 1; kappa is undefined")
    return float((p_o - p_e) / (1 - p_e))


def sleep_metrics(hypnogram: Hypnogram, analysis_period: tuple[int, int] | None = None) -> SleepMetrics:
    """Architecture metrics over ``analysis_period`` (inclusive), or the whole hypnogram."""
    hyp = hypnogram.crop(*analysis_period) if analysis_period is not None else hypnogram
    codes = hyp.codes()
    asleep = np.flatnonzero(codes != 0)
    if asleep.size == 0:
        raise NoSleepError("hypnogram contains no sleep")
    counts = np.bincount(codes, minlength=5)
    n_sleep = int(counts[1:].sum())
    tst = EPOCH_MINUTES * n_sleep
    onset = int(asleep[0])
    waso = EPOCH_MINUTES * int((codes[onset:] == 0).sum())
    se = tst / (EPOCH_MINUTES * codes.size) * 100.0
    n1, n2, n3, rem = (EPOCH_MINUTES * int(counts[k]) for k in (1, 2, 3, 4))
    pct = [int(counts[k]) / n_sleep * 100.0 for k in (1, 2, 3, 4)]
    return SleepMetrics(tst, se, waso, n1, n2, n3, rem, *pct)


def mad_vs_consensus(metrics: Sequence[SleepMetrics], consensus: SleepMetrics) -> dict[str, float]:
    if not metrics:
        raise EmptyError("need at least one metric set")
    ref = consensus.as_dict()
    return {k: float(np.mean([abs(m.as_dict()[k] - v) for m in metrics])) for k, v in ref.items()}


def leave_one_out_mad(scorers: Sequence[Hypnogram], analysis_period: tuple[int, int] | None = None) -> dict[str, float]:
    """Each scorer against the consensus of the others, averaged per metric."""
    if len(scorers) < 3:
        raise ValueError("leave-one-out consensus needs at least three scorers")
    diffs = []
    for i, h in enumerate(scorers):
        others = [s for j, s in enumerate(scorers) if j != i]
        ref = sleep_metrics(majority_consensus(others).consensus, analysis_period)
        diffs.append(mad_vs_consensus([sleep_metrics(h, analysis_period)], ref))
    return {k: float(np.mean([d[k] for d in diffs])) for k in diffs[0]}


def agreement_distribution(predicted: Hypnogram, panel: ScorerPanel, bins=None):
    """Histograms of agreement ratio split by whether ``predicted`` matches consensus.

    Returns
    -------
    agree, disagree : np.ndarray
        Counts per bin.
    edges : np.ndarray
        Bin edges, ``len(agree) + 1`` values.
    """
    _check_aligned(predicted, panel.consensus)
    edges = np.round(np.linspace(0, 1, 11), 12) if bins is None else np.asarray(bins, dtype=np.float64)
    match = predicted.codes() == panel.consensus.codes()
    ratio = np.round(panel.agreement_ratio, 12)
    agree, _ = np.histogram(ratio[match], bins=edges)
    disagree, _ = np.histogram(ratio[~match], bins=edges)
    return agree, disagree, edges


# I/O --------------------------------------------------------------------------

def read_hypnogram_csv(source) -> Hypnogram:
    """Read ``epoch_index,stage`` rows (header optional, extra columns ignored)."""
    text = Path(source).read_text() if not hasattr(source, "read") else source.read()
    rows = [r for r in csv.reader(io.StringIO(text)) if r and any(c.strip() for c in r)]
    if rows and rows[0][0].strip().lower() == "epoch_index":
        rows = rows[1:]
    indexed = []
    for r in rows:
        try:
            indexed.append((int(r[0]), Stage.parse(r[1])))
        except (IndexError, ValueError) as exc:
            raise AlignmentError(f"bad hypnogram row {r!r}: {exc}") from None
    indexed.sort(key=lambda p: p[0])
    if [i for i, _ in indexed] != list(range(len(indexed))):
        raise AlignmentError("hypnogram epoch indices must run 0..T-1 without gaps")
    return Hypnogram(tuple(s for _, s in indexed))


def hypnogram_to_csv(hypnogram: Hypnogram, provenance: Sequence[str] | None = None) -> str:
    out = io.StringIO()
    w = csv.writer(out, lineterminator="\n")
    w.writerow(["epoch_index", "stage"] + (["provenance"] if provenance is not None else []))
    for t, s in enumerate(hypnogram.stages):
        w.writerow([t, s.value] + ([provenance[t]] if provenance is not None else []))
    return out.getvalue()


def read_panel_dir(directory) -> list[Hypnogram]:
    paths = sorted(Path(directory).glob("*.csv"))
    if not paths:
        raise EmptyError(f"no scorer CSV files in {directory}")
    return [read_hypnogram_csv(p) for p in paths]


def matrix_to_csv(matrix: np.ndarray, fmt: str = "{}") -> str:
    out = io.StringIO()
    w = csv.writer(out, lineterminator="\n")
    labels = [s.value for s in STAGES]
    w.writerow(["reference"] + labels)
    for label, row in zip(labels, matrix):
        w.writerow([label] + [fmt.format(v) for v in row])
    return out.getvalue()
