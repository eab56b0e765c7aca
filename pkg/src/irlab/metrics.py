"""Ranking metrics: P@k, NDCG@k, AP/MAP, and per-run evaluation tables.

Conventions: a document is relevant when its grade is > 0; P@k divides by k
even for short lists; NDCG gain is 2^g - 1 with a log2(rank + 1) discount and
is 0 when the ideal DCG is 0; unjudged documents have grade 0.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

from .corpus import Qrels, RunEntry


@dataclass(frozen=True)
class RankedList:
    """Documents of one query sorted by score descending, ties by doc id ascending."""

    qid: str
    entries: tuple[tuple[str, float], ...]

    def __post_init__(self):
        ids = [d for d, _ in self.entries]
        if len(set(ids)) != len(ids):
            raise ValueError(f"ranked list for {self.qid!r} has duplicate doc ids")
        keys = [(-s, d) for d, s in self.entries]
        if keys != sorted(keys):
            raise ValueError(f"ranked list for {self.qid!r} is not sorted by (score desc, doc id asc)")

    @classmethod
    def from_scores(cls, qid: str, scores: Mapping[str, float]) -> "RankedList":
        return cls(qid, tuple(sorted(((d, float(s)) for d, s in scores.items()), key=lambda e: (-e[1], e[0]))))

    @property
    def docids(self) -> list[str]:
        return [d for d, _ in self.entries]

    def __len__(self):
        return len(self.entries)


def _ids(ranked) -> list[str]:
    return ranked.docids if isinstance(ranked, RankedList) else list(ranked)


def precision_at_k(ranked, grades: Mapping[str, int], k: int) -> float:
    if k < 1:
        raise ValueError("k must be >= 1")
    return sum(1 for d in _ids(ranked)[:k] if grades.get(d, 0) > 0) / k


def dcg(gains: Iterable[int], k: int) -> float:
    return sum((2.0**g - 1.0) / math.log2(i + 2) for i, g in enumerate(list(gains)[:k]))


def ndcg_at_k(ranked, grades: Mapping[str, int], k: int) -> float:
    if k < 1:
        raise ValueError("k must be >= 1")
    ideal = dcg(sorted((g for g in grades.values() if g > 0), reverse=True), k)
    if ideal == 0.0:
        return 0.0
    return dcg((grades.get(d, 0) for d in _ids(ranked)), k) / ideal


def average_precision(ranked, grades: Mapping[str, int]) -> float:
    """Mean precision at the ranks of relevant documents; unretrieved ones add 0."""
    n_rel = sum(1 for g in grades.values() if g > 0)
    if n_rel == 0:
        return 0.0
    hits, total = 0, 0.0
    for rank, d in enumerate(_ids(ranked), start=1):
        if grades.get(d, 0) > 0:
            hits += 1
            total += hits / rank
    return total / n_rel


def mean_average_precision(runs: Mapping[str, Sequence[str] | RankedList], qrels: Qrels) -> float:
    if not runs:
        raise ValueError("no ranked lists")
    grades = qrels.by_query()
    return sum(average_precision(r, grades.get(q, {})) for q, r in runs.items()) / len(runs)


def random_ranking_ap(n_docs: int) -> float:
    """Expected AP of a uniformly random ranking with one relevant document."""
    return sum(1.0 / r for r in range(1, n_docs + 1)) / n_docs


def metric_names(cutoffs: Sequence[int]) -> list[str]:
    return [f"NDCG@{k}" for k in cutoffs] + [f"P@{k}" for k in cutoffs] + ["MAP"]


def query_metrics(ranked, grades: Mapping[str, int], cutoffs: Sequence[int] = (1, 10)) -> dict[str, float]:
    out = {f"NDCG@{k}": ndcg_at_k(ranked, grades, k) for k in cutoffs}
    out.update({f"P@{k}": precision_at_k(ranked, grades, k) for k in cutoffs})
    out["MAP"] = average_precision(ranked, grades)
    return out


@dataclass
class EvalReport:
    cutoffs: tuple[int, ...]
    per_query: dict[str, dict[str, float]]
    means: dict[str, float]
    unjudged_queries: list[str] = field(default_factory=list)

    def write_csv(self, path):
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["qid", "metric", "value"])
            for qid in sorted(self.per_query):
                for name, value in self.per_query[qid].items():
                    w.writerow([qid, name, f"{value:.6g}"])
            for name, value in self.means.items():
                w.writerow(["all", name, f"{value:.6g}"])

    def write_table(self, path):
        """Wide form: one row per query, one column per metric, then the means."""
        names = metric_names(self.cutoffs)
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["qid", *names])
            for qid in sorted(self.per_query):
                w.writerow([qid, *(f"{self.per_query[qid][m]:.6g}" for m in names)])
            w.writerow(["all", *(f"{self.means[m]:.6g}" for m in names)])

    def summary(self) -> dict:
        return {
            "cutoffs": list(self.cutoffs),
            "n_queries": len(self.per_query),
            "means": {k: float(f"{v:.6g}") for k, v in self.means.items()},
            "unjudged_queries": self.unjudged_queries,
        }

    def write_json(self, path):
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.summary(), fh, indent=2, sort_keys=True)
            fh.write("\n")


def rank_run(run: Iterable[RunEntry]) -> dict[str, RankedList]:
    """Group run entries per query and re-sort by (score desc, doc id asc)."""
    by_query: dict[str, dict[str, float]] = {}
    for e in run:
        scores = by_query.setdefault(e.qid, {})
        if e.docid in scores:
            raise ValueError(f"run lists {e.docid!r} twice for query {e.qid!r}")
        scores[e.docid] = e.score
    return {q: RankedList.from_scores(q, s) for q, s in by_query.items()}


def evaluate_run(run: Iterable[RunEntry], qrels: Qrels, cutoffs: Sequence[int] = (1, 10)) -> EvalReport:
    """Per-query metric table and means over the queries in the run.

    Queries missing from the qrels are scored against all-zero grades and
    listed in ``unjudged_queries``.
    """
    cutoffs = tuple(int(k) for k in cutoffs)
    if not cutoffs or min(cutoffs) < 1:
        raise ValueError("cutoffs must be positive integers")
    ranked = rank_run(run)
    if not ranked:
        raise ValueError("empty run")
    grades = qrels.by_query()
    per_query = {q: query_metrics(r, grades.get(q, {}), cutoffs) for q, r in ranked.items()}
    names = metric_names(cutoffs)
    means = {m: sum(v[m] for v in per_query.values()) / len(per_query) for m in names}
    return EvalReport(cutoffs, per_query, means, sorted(q for q in ranked if q not in grades))
