"""Checkpoint selection on per-dataset accuracy traces.

Late in tuning, in-distribution and out-of-distribution accuracy fluctuate
differently, so the harness selects the checkpoint by mean accuracy over a
caller-chosen dataset set and reports the tradeoff between selecting on the
tuning dataset and selecting on held-out datasets.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

from .answers import answers_match


class EmptyRecordError(ValueError):
    pass


class UnknownDatasetError(ValueError):
    pass


@dataclass(frozen=True)
class EvalRecord:
    dataset: str
    predictions: tuple[str, ...]
    golds: tuple[str, ...]

    def __post_init__(self):
        if len(self.predictions) != len(self.golds):
            raise ValueError("predictions and golds must have equal length")


def accuracy(record: EvalRecord) -> float:
    """Exact-match accuracy after shared answer normalization."""
    if not record.predictions:
        raise EmptyRecordError(f"empty eval record for {record.dataset!r}")
    hits = sum(answers_match(p, g) for p, g in zip(record.predictions, record.golds))
    return hits / len(record.predictions)


@dataclass(frozen=True)
class Checkpoint:
    step: int
    accuracies: dict[str, float]


@dataclass(frozen=True)
class MetricTrace:
    checkpoints: tuple[Checkpoint, ...]

    def __post_init__(self):
        steps = [c.step for c in self.checkpoints]
        if steps != sorted(set(steps)):
            raise ValueError("checkpoint steps must be strictly increasing")
        if self.checkpoints:
            datasets = set(self.checkpoints[0].accuracies)
            for c in self.checkpoints:
                if set(c.accuracies) != datasets:
                    raise ValueError("every checkpoint must report the same datasets")
                for name, acc in c.accuracies.items():
                    if not 0.0 <= acc <= 1.0:
                        raise ValueError(f"accuracy {acc} for {name!r} outside [0, 1]")

    @property
    def datasets(self) -> set[str]:
        return set(self.checkpoints[0].accuracies) if self.checkpoints else set()


@dataclass(frozen=True)
class SelectionCriterion:
    datasets: frozenset[str]

    def __post_init__(self):
        if not self.datasets:
            raise ValueError("criterion needs at least one dataset")

    @classmethod
    def of(cls, *names: str) -> "SelectionCriterion":
        return cls(datasets=frozenset(names))


def mean_accuracy(checkpoint: Checkpoint, criterion: SelectionCriterion) -> float:
    return sum(checkpoint.accuracies[d] for d in criterion.datasets) / len(criterion.datasets)


def select_checkpoint(trace: MetricTrace, criterion: SelectionCriterion) -> int:
    """Step with the highest mean accuracy on the criterion datasets.

    Ties break to the earliest step.
    """
    missing = criterion.datasets - trace.datasets
    if missing:
        raise UnknownDatasetError(f"trace does not report {sorted(missing)}")
    best = max(trace.checkpoints, key=lambda c: (mean_accuracy(c, criterion), -c.step))
    return best.step


@dataclass(frozen=True)
class TradeoffRow:
    selected_by: str
    step: int
    in_dist_accuracy: float
    ood_mean_accuracy: float


@dataclass(frozen=True)
class TradeoffReport:
    rows: tuple[TradeoffRow, TradeoffRow]  # (by in-dist, by OOD)
    in_dist: str
    ood: tuple[str, ...]

    @property
    def delta_in_dist(self) -> float:
        """Percentage-point change in in-dist accuracy when selecting by OOD."""
        return round(100 * (self.rows[1].in_dist_accuracy - self.rows[0].in_dist_accuracy), 1)

    @property
    def delta_ood(self) -> float:
        return round(100 * (self.rows[1].ood_mean_accuracy - self.rows[0].ood_mean_accuracy), 1)


def report_tradeoff(trace: MetricTrace, in_dist: str,
                    ood: Sequence[str]) -> TradeoffReport:
    """Compare selecting by in-dist accuracy vs by mean OOD accuracy."""
    in_criterion = SelectionCriterion.of(in_dist)
    ood_criterion = SelectionCriterion.of(*ood)
    rows = []
    for label, criterion in (("in_dist", in_criterion), ("ood", ood_criterion)):
        step = select_checkpoint(trace, criterion)
        checkpoint = next(c for c in trace.checkpoints if c.step == step)
        rows.append(TradeoffRow(
            selected_by=label,
            step=step,
            in_dist_accuracy=mean_accuracy(checkpoint, in_criterion),
            ood_mean_accuracy=mean_accuracy(checkpoint, ood_criterion),
        ))
    return TradeoffReport(rows=(rows[0], rows[1]), in_dist=in_dist, ood=tuple(ood))


# --- CSV and text rendering --------------------------------------------------


def read_trace_csv(path: str | Path) -> MetricTrace:
    """Read ``step,dataset,accuracy`` rows (header optional) into a trace."""
    by_step: dict[int, dict[str, float]] = {}
    with open(path, newline="", encoding="utf-8") as fh:
        for row in csv.reader(fh):
            if not row or row[0].strip().lower() == "step":
                continue
            step, dataset, acc = int(row[0]), row[1].strip(), float(row[2])
            by_step.setdefault(step, {})[dataset] = acc
    checkpoints = tuple(Checkpoint(step=s, accuracies=by_step[s]) for s in sorted(by_step))
    return MetricTrace(checkpoints=checkpoints)


def write_trace_csv(path: str | Path, trace: MetricTrace) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        out = csv.writer(fh)
        out.writerow(["step", "dataset", "accuracy"])
        for c in trace.checkpoints:
            for dataset in sorted(c.accuracies):
                out.writerow([c.step, dataset, repr(c.accuracies[dataset])])


def render_report_csv(report: TradeoffReport) -> str:
    buf = io.StringIO()
    out = csv.writer(buf)
    out.writerow(["selected_by", "step", "in_dist_acc", "ood_mean_acc",
                  "delta_in_dist", "delta_ood"])
    deltas = [("", ""), (f"{report.delta_in_dist:+.1f}", f"{report.delta_ood:+.1f}")]
    for row, (d_in, d_ood) in zip(report.rows, deltas):
        out.writerow([row.selected_by, row.step,
                      f"{100 * row.in_dist_accuracy:.1f}",
                      f"{100 * row.ood_mean_accuracy:.1f}", d_in, d_ood])
    return buf.getvalue()


def render_report_text(report: TradeoffReport) -> str:
    header = ["selected by", "step", f"in-dist ({report.in_dist})",
              f"OOD mean ({', '.join(report.ood)})"]
    body = []
    for i, row in enumerate(report.rows):
        d_in = f" ({report.delta_in_dist:+.1f})" if i == 1 else ""
        d_ood = f" ({report.delta_ood:+.1f})" if i == 1 else ""
        body.append([row.selected_by, str(row.step),
                     f"{100 * row.in_dist_accuracy:.1f}{d_in}",
                     f"{100 * row.ood_mean_accuracy:.1f}{d_ood}"])
    widths = [max(len(r[i]) for r in [header] + body) for i in range(len(header))]
    lines = ["  ".join(cell.ljust(w) for cell, w in zip(r, widths)).rstrip()
             for r in [header] + body]
    return "\n".join(lines) + "\n"
