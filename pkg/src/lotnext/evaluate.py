"""Ranking metrics, head/tail-stratified evaluation, and embedding export.

Rank of the true label = 1 + (number of classes with strictly higher
score) + (number of equal-scoring classes with a lower index). Ties are
therefore broken deterministically in favor of the lower class index.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Optional

import numpy as np

from ._validation import check_scores_labels
from .data import FrequencyTable


@dataclass
class MetricsReport:
    acc1: float
    acc5: float
    acc10: float
    mrr: float
    n_samples: int

    def row(self):
        return (self.acc1, self.acc5, self.acc10, self.mrr)


@dataclass
class StratifiedReport:
    head: MetricsReport
    tail: Optional[MetricsReport]
    tail_threshold: int
    predicted_tail_proportion: float

    @property
    def n_samples(self) -> int:
        return self.head.n_samples + (self.tail.n_samples if self.tail else 0)


def label_ranks(scores, labels) -> np.ndarray:
    """1-based rank of each row's label under the deterministic tie rule."""
    scores, labels = check_scores_labels(scores, labels)
    if scores.shape[0] == 0:
        return np.empty(0, dtype=np.int64)
    own = scores[np.arange(len(labels)), labels][:, None]
    higher = (scores > own).sum(axis=1)
    idx = np.arange(scores.shape[1])[None, :]
    tied_lower = ((scores == own) & (idx < labels[:, None])).sum(axis=1)
    return (1 + higher + tied_lower).astype(np.int64)


def accuracy_at_k(scores, labels, k: int) -> float:
    """Fraction of samples whose label ranks within the top k."""
    if k < 1:
        raise ValueError("k must be >= 1")
    ranks = label_ranks(scores, labels)
    if ranks.size == 0:
        return 0.0
    return float((ranks <= k).mean())


def mrr(scores, labels) -> float:
    """Mean reciprocal rank of the true label."""
    ranks = label_ranks(scores, labels)
    if ranks.size == 0:
        return 0.0
    return float((1.0 / ranks).mean())


def compute_metrics(scores, labels) -> MetricsReport:
    ranks = label_ranks(scores, labels)
    n = int(ranks.size)
    if n == 0:
        return MetricsReport(0.0, 0.0, 0.0, 0.0, 0)
    return MetricsReport(
        acc1=float((ranks <= 1).mean()),
        acc5=float((ranks <= 5).mean()),
        acc10=float((ranks <= 10).mean()),
        mrr=float((1.0 / ranks).mean()),
        n_samples=n,
    )


def stratified_metrics(scores, labels, freq: FrequencyTable, threshold: int = 100) -> StratifiedReport:
    """Split samples by training frequency of the true label and score each side.

    Samples whose label was seen fewer than ``threshold`` times in training
    count as tail. ``predicted_tail_proportion`` is the fraction of top-1
    predictions (over all samples) that land on tail POIs.
    """
    scores, labels = check_scores_labels(scores, labels)
    counts = freq.counts
    tail_mask = counts[labels] < threshold
    head = compute_metrics(scores[~tail_mask], labels[~tail_mask])
    tail = compute_metrics(scores[tail_mask], labels[tail_mask]) if tail_mask.any() else None
    if scores.shape[0]:
        top1 = scores.argmax(axis=1)
        predicted_tail = float((counts[top1] < threshold).mean())
    else:
        predicted_tail = 0.0
    return StratifiedReport(
        head=head,
        tail=tail,
        tail_threshold=threshold,
        predicted_tail_proportion=predicted_tail,
    )


def export_embeddings(poi_ids, freq: FrequencyTable, table, path) -> None:
    """Write ``poi_id <TAB> freq <TAB> d floats`` per POI, after a header line."""
    table = np.asarray(table, dtype=np.float64)
    if table.ndim != 2 or table.shape[0] != len(poi_ids):
        raise ValueError("embedding table must have one row per POI")
    if len(freq.counts) != len(poi_ids):
        raise ValueError("frequency table must align with the POI vocabulary")
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(f"# n_pois={len(poi_ids)} dim={table.shape[1]}\n")
        for pid, count, row in zip(poi_ids, freq.counts, table):
            floats = "\t".join(repr(float(v)) for v in row)
            fh.write(f"{pid}\t{int(count)}\t{floats}\n")


METRIC_COLUMNS = ("Acc@1", "Acc@5", "Acc@10", "MRR")


def format_metrics_table(rows: dict) -> str:
    """Aligned console table; ``rows`` maps a label to a MetricsReport."""
    name_w = max([len(k) for k in rows] + [len("split")])
    header = "split".ljust(name_w) + "".join(c.rjust(10) for c in METRIC_COLUMNS) + "  n".rjust(4)
    lines = [header]
    for name, rep in rows.items():
        cells = "".join(f"{v:10.4f}" for v in rep.row())
        lines.append(name.ljust(name_w) + cells + f"  {rep.n_samples}")
    return "\n".join(lines)


def write_metrics_report(report: StratifiedReport, overall: MetricsReport, path) -> None:
    """Serialize overall and stratified metrics as flat key = value text."""
    def block(prefix, rep):
        return [
            f"{prefix}.acc1 = {rep.acc1!r}",
            f"{prefix}.acc5 = {rep.acc5!r}",
            f"{prefix}.acc10 = {rep.acc10!r}",
            f"{prefix}.mrr = {rep.mrr!r}",
            f"{prefix}.n_samples = {rep.n_samples}",
        ]

    lines = block("overall", overall)
    lines += block("head", report.head)
    if report.tail is not None:
        lines += block("tail", report.tail)
    lines.append(f"tail_threshold = {report.tail_threshold}")
    lines.append(f"predicted_tail_proportion = {report.predicted_tail_proportion!r}")
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")
