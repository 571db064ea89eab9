"""Edit-quality and retrieval metrics, and run-level report aggregation.

The edit metric compares (input, prediction, reference) over n-grams of
order 1..4 with three components: add-F1 (n-grams the prediction added
that the references also add), keep-F1 (source n-grams the prediction kept
that the references also keep), and deletion precision (source n-grams the
prediction dropped that the references also drop). Components average over
n, the final score over the three operations. Empty-side conventions: a
component with both its candidate and reference sets empty counts 1.0; a
non-empty side against an empty one counts 0.0.
"""

from __future__ import annotations

import json
import logging
import math
from collections import defaultdict
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Optional

from .core import tokenize
from .errors import EmptyReferenceSet
from .scoring import rouge_l

logger = logging.getLogger(__name__)


def _ngrams(tokens: list[str], n: int) -> set[tuple[str, ...]]:
    return {tuple(tokens[i : i + n]) for i in range(len(tokens) - n + 1)}


def _component_f1(tp: int, n_cand: int, n_ref: int) -> float:
    precision = tp / n_cand if n_cand else 1.0
    recall = tp / n_ref if n_ref else 1.0
    if precision + recall == 0:
        return 0.0
    return 2 * precision * recall / (precision + recall)


def sari(source: str, prediction: str, references: list[str], max_n: int = 4) -> float:
    """Edit quality of a prediction against reference corrections, in [0, 1]."""
    if not references:
        raise EmptyReferenceSet("at least one reference is required")
    src = tokenize(source)
    pred = tokenize(prediction)
    refs = [tokenize(r) for r in references]

    keep_total = del_total = add_total = 0.0
    for n in range(1, max_n + 1):
        s = _ngrams(src, n)
        c = _ngrams(pred, n)
        r: set[tuple[str, ...]] = set()
        for ref in refs:
            r |= _ngrams(ref, n)

        add_cand, add_ref = c - s, r - s
        add_total += _component_f1(len(add_cand & add_ref), len(add_cand), len(add_ref))

        keep_cand, keep_ref = s & c, s & r
        keep_total += _component_f1(len(keep_cand & keep_ref), len(keep_cand), len(keep_ref))

        del_cand, del_ref = s - c, s - r
        del_total += len(del_cand & del_ref) / len(del_cand) if del_cand else 1.0

    return (keep_total + del_total + add_total) / (3 * max_n)


def ndcg_at_10(ranked: list[str], relevant: Mapping[str, int], k: int = 10) -> float:
    """Discounted gain of the top k against the ideal ordering of grades.

    No relevant documents at all is defined as 0.0.
    """
    if not relevant:
        return 0.0
    dcg = sum(
        relevant.get(doc_id, 0) / math.log2(i + 2)
        for i, doc_id in enumerate(ranked[:k])
    )
    ideal = sorted(relevant.values(), reverse=True)[:k]
    idcg = sum(grade / math.log2(i + 2) for i, grade in enumerate(ideal))
    return dcg / idcg if idcg > 0 else 0.0


def load_qrels(path) -> dict[str, dict[str, int]]:
    """TREC qrels: whitespace-separated query_id, 0, doc_id, grade lines."""
    qrels: dict[str, dict[str, int]] = defaultdict(dict)
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            parts = line.split()
            if len(parts) != 4:
                continue
            qid, _, doc_id, grade = parts
            qrels[qid][doc_id] = int(grade)
    return dict(qrels)


@dataclass(frozen=True)
class EvalRecord:
    claim_id: str
    source: str
    prediction: str
    reference: str
    label: Optional[str] = None
    retriever: Optional[str] = None


@dataclass
class EvalReport:
    sari_mean: Optional[float] = None
    rouge_l_mean: Optional[float] = None
    ndcg10_mean: Optional[float] = None
    per_class: dict = field(default_factory=dict)
    included: int = 0
    excluded: int = 0
    queries_without_judgments: int = 0

    def to_json(self) -> dict:
        # headline numbers are conventionally reported on a 0-100 scale
        return {
            "sari": None if self.sari_mean is None else round(self.sari_mean * 100, 4),
            "rouge_l": None if self.rouge_l_mean is None else round(self.rouge_l_mean * 100, 4),
            "ndcg@10": None if self.ndcg10_mean is None else round(self.ndcg10_mean, 4),
            "per_class": {
                label: {"sari": round(stats["sari"] * 100, 4), "count": stats["count"]}
                for label, stats in sorted(self.per_class.items())
            },
            "included": self.included,
            "excluded": self.excluded,
        }

    def render_text(self) -> str:
        obj = self.to_json()
        rows = [
            ("records", f"{self.included} scored, {self.excluded} excluded"),
            ("SARI (%)", "n/a" if obj["sari"] is None else f"{obj['sari']:.4f}"),
            ("ROUGE-L (%)", "n/a" if obj["rouge_l"] is None else f"{obj['rouge_l']:.4f}"),
        ]
        if obj["ndcg@10"] is not None:
            rows.append(("nDCG@10", f"{obj['ndcg@10']:.4f}"))
        for label, stats in obj["per_class"].items():
            rows.append((f"SARI (%) [{label}]", f"{stats['sari']:.4f}  (n={stats['count']})"))
        width = max(len(name) for name, _ in rows)
        return "\n".join(f"{name:<{width}}  {value}" for name, value in rows)


def evaluate(
    records: Iterable[EvalRecord],
    retrieval_runs: Optional[Mapping[str, list[str]]] = None,
    qrels: Optional[Mapping[str, Mapping[str, int]]] = None,
) -> EvalReport:
    """Aggregate metric means over a record stream.

    Records with an empty prediction or missing reference are excluded and
    counted. When ranked retrieval runs and judgments are both given, mean
    nDCG@10 is reported over the judged queries.
    """
    report = EvalReport()
    sari_sum = rouge_sum = 0.0
    class_sums: dict[str, list[float]] = defaultdict(list)
    for record in records:
        if not record.prediction.strip() or not record.reference.strip():
            report.excluded += 1
            continue
        s = sari(record.source, record.prediction, [record.reference])
        r = rouge_l(record.reference, record.prediction)
        sari_sum += s
        rouge_sum += r
        report.included += 1
        if record.label:
            class_sums[record.label].append(s)
    if report.included:
        report.sari_mean = sari_sum / report.included
        report.rouge_l_mean = rouge_sum / report.included
    report.per_class = {
        label: {"sari": sum(values) / len(values), "count": len(values)}
        for label, values in class_sums.items()
    }
    if retrieval_runs is not None and qrels is not None:
        scores = []
        for qid, ranked in retrieval_runs.items():
            judged = qrels.get(qid)
            if not judged:
                report.queries_without_judgments += 1
                continue
            scores.append(ndcg_at_10(ranked, judged))
        if scores:
            report.ndcg10_mean = sum(scores) / len(scores)
    return report


def write_report(report: EvalReport, json_path=None, text_path=None):
    if json_path:
        with open(json_path, "w", encoding="utf-8") as fh:
            json.dump(report.to_json(), fh, indent=2, sort_keys=True)
            fh.write("\n")
    if text_path:
        with open(text_path, "w", encoding="utf-8") as fh:
            fh.write(report.render_text() + "\n")
