#!/usr/bin/env python3
"""
toolsift Evaluation - Retrieval metrics, error analyses and report writers

Recall@K and nDCG@K use binary relevance and are macro-averaged over
queries; reported means are scaled by 100. The analyses cover per-tool
failure rates, the length of failed queries, and the gap between positive
and negative query-tool cosine similarities.
"""
import csv
import math
from collections import defaultdict
from typing import Any, Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np
import structlog
from pydantic import BaseModel, Field

from .embed import EmbeddingMatrix
from .errors import DimensionMismatch, EmptyRelevantSet, MissingGroundTruth
from .models import Corpus, EvalConfig, RetrievalResult
from .storage import write_json

logger = structlog.get_logger(__name__)

DEFAULT_NEGATIVE_CAP = 50


# -------------------------------
# Metrics
# -------------------------------
def recall_at_k(retrieved: Sequence[str], relevant: Iterable[str], k: int) -> float:
    """|top-k(retrieved) ∩ relevant| / |relevant|"""
    relevant = set(relevant)
    if not relevant:
        raise EmptyRelevantSet()
    if k < 1:
        raise ValueError(f"k must be >= 1, got {k}")
    return len(set(retrieved[:k]) & relevant) / len(relevant)


def ndcg_at_k(retrieved: Sequence[str], relevant: Iterable[str], k: int) -> float:
    """
    Binary-relevance nDCG: DCG sums 1/log2(i+1) over relevant hits at 1-based
    ranks i <= k; IDCG is the same sum over the first min(k, |relevant|) ranks.
    """
    relevant = set(relevant)
    if not relevant:
        raise EmptyRelevantSet()
    if k < 1:
        raise ValueError(f"k must be >= 1, got {k}")
    dcg = sum(1.0 / math.log2(i + 1)
              for i, tool_id in enumerate(retrieved[:k], start=1) if tool_id in relevant)
    idcg = sum(1.0 / math.log2(i + 1) for i in range(1, min(k, len(relevant)) + 1))
    return dcg / idcg


# -------------------------------
# Reports
# -------------------------------
class QueryMetrics(BaseModel):
    query_id: str
    recall: Dict[int, float]
    ndcg: Dict[int, float]


class EvalReport(BaseModel):
    """Macro-averaged metrics (x100) at each K, with the per-query rows behind them."""
    method: str = ""
    stage: str = ""
    ks: List[int]
    n_queries: int = 0
    recall: Dict[int, float] = Field(default_factory=dict)
    ndcg: Dict[int, float] = Field(default_factory=dict)
    per_query: List[QueryMetrics] = Field(default_factory=list)

    def summary_row(self) -> Dict[str, Any]:
        row: Dict[str, Any] = {"method": self.method, "stage": self.stage, "n_queries": self.n_queries}
        row.update({f"R@{k}": self.recall[k] for k in self.ks})
        row.update({f"N@{k}": self.ndcg[k] for k in self.ks})
        return row


def evaluate(results: Sequence[RetrievalResult], corpus: Corpus,
             cfg: Optional[EvalConfig] = None) -> EvalReport:
    """
    Score retrieval results against the corpus ground truth.

    Raises:
        MissingGroundTruth: A result's query_id is not in the corpus
    """
    cfg = cfg or EvalConfig()
    index = corpus.query_index()
    per_query = []
    for result in results:
        query = index.get(result.query_id)
        if query is None:
            raise MissingGroundTruth(result.query_id)
        retrieved = result.tool_ids
        per_query.append(QueryMetrics(
            query_id=result.query_id,
            recall={k: recall_at_k(retrieved, query.tools, k) for k in cfg.ks},
            ndcg={k: ndcg_at_k(retrieved, query.tools, k) for k in cfg.ks},
        ))

    n = len(per_query)

    def mean100(values: List[float]) -> float:
        return 100.0 * sum(values) / n if n else 0.0

    report = EvalReport(
        method=results[0].method if results else "",
        stage=results[0].stage if results else "",
        ks=list(cfg.ks),
        n_queries=n,
        recall={k: mean100([m.recall[k] for m in per_query]) for k in cfg.ks},
        ndcg={k: mean100([m.ndcg[k] for m in per_query]) for k in cfg.ks},
        per_query=per_query,
    )
    logger.info("evaluated", method=report.method, stage=report.stage, n_queries=n,
                **{f"R@{k}": v for k, v in report.recall.items()})
    return report


def compare_methods(runs: Dict[Tuple[str, str], Sequence[RetrievalResult]], corpus: Corpus,
                    cfg: Optional[EvalConfig] = None) -> List[Dict[str, Any]]:
    """One summary row per (method, stage) run."""
    rows = []
    for (method, stage), results in runs.items():
        row = evaluate(results, corpus, cfg).summary_row()
        row["method"], row["stage"] = method, stage
        rows.append(row)
    return rows


def write_report_json(report: EvalReport, path: str) -> None:
    write_json(path, report.model_dump(mode="json"))


def write_summary_csv(rows: Sequence[Dict[str, Any]], path: str) -> None:
    """Write summary rows; columns follow the first row's key order."""
    if not rows:
        open(path, "w", encoding="utf-8").close()
        return
    with open(path, "w", encoding="utf-8", newline="") as f:
        writer = csv.DictWriter(f, fieldnames=list(rows[0]), lineterminator="\n")
        writer.writeheader()
        writer.writerows(rows)


def write_per_query_csv(report: EvalReport, path: str) -> None:
    with open(path, "w", encoding="utf-8", newline="") as f:
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(["query_id"] + [f"R@{k}" for k in report.ks] + [f"N@{k}" for k in report.ks])
        for row in report.per_query:
            writer.writerow([row.query_id] + [row.recall[k] for k in report.ks]
                            + [row.ndcg[k] for k in report.ks])


# -------------------------------
# Failure analysis
# -------------------------------
class ToolFailure(BaseModel):
    tool_id: str
    misses: int
    occurrences: int
    rate: float


class FailureRateReport(BaseModel):
    """Per-tool miss percentages at a fixed K and their spread across tools."""
    k: int
    tools: List[ToolFailure] = Field(default_factory=list)
    mean_rate: float = 0.0
    std_rate: float = 0.0


def failure_rates(results: Sequence[RetrievalResult], corpus: Corpus, k: int) -> FailureRateReport:
    """
    Percentage of a tool's ground-truth occurrences that were missing from
    the top-k. Tools that never occur are left out; std is the population std.
    """
    index = corpus.query_index()
    misses: Dict[str, int] = defaultdict(int)
    occurrences: Dict[str, int] = defaultdict(int)
    for result in results:
        query = index.get(result.query_id)
        if query is None:
            raise MissingGroundTruth(result.query_id)
        top_k = set(result.tool_ids[:k])
        for tool_id in query.tools:
            occurrences[tool_id] += 1
            if tool_id not in top_k:
                misses[tool_id] += 1

    rows = [
        ToolFailure(tool_id=tool_id, misses=misses[tool_id], occurrences=occurrences[tool_id],
                    rate=100.0 * misses[tool_id] / occurrences[tool_id])
        for tool_id in sorted(occurrences)
    ]
    rates = np.array([r.rate for r in rows])
    return FailureRateReport(
        k=k,
        tools=rows,
        mean_rate=float(rates.mean()) if len(rates) else 0.0,
        std_rate=float(rates.std()) if len(rates) else 0.0,
    )


class FailedLengthStats(BaseModel):
    method: str
    stage: str
    n_failed: int = 0
    mean_tokens: Optional[float] = None
    std_tokens: Optional[float] = None
    no_failures: bool = True


def failed_query_lengths(results: Sequence[RetrievalResult], corpus: Corpus,
                         k: int) -> List[FailedLengthStats]:
    """
    Whitespace-token length of queries missing any ground-truth tool in
    their top-k, grouped by (method, stage) in first-seen order.
    """
    index = corpus.query_index()
    groups: Dict[Tuple[str, str], List[int]] = {}
    for result in results:
        query = index.get(result.query_id)
        if query is None:
            raise MissingGroundTruth(result.query_id)
        lengths = groups.setdefault((result.method, result.stage), [])
        if not set(query.tools) <= set(result.tool_ids[:k]):
            lengths.append(len(query.text.split()))

    stats = []
    for (method, stage), lengths in groups.items():
        if not lengths:
            stats.append(FailedLengthStats(method=method, stage=stage))
            continue
        arr = np.array(lengths, dtype=np.float64)
        stats.append(FailedLengthStats(method=method, stage=stage, n_failed=len(lengths),
                                       mean_tokens=float(arr.mean()), std_tokens=float(arr.std()),
                                       no_failures=False))
    return stats


# -------------------------------
# Similarity analysis
# -------------------------------
class BoxStats(BaseModel):
    n: int = 0
    min: Optional[float] = None
    q1: Optional[float] = None
    median: Optional[float] = None
    q3: Optional[float] = None
    max: Optional[float] = None
    iqr: Optional[float] = None

    @classmethod
    def of(cls, values: Sequence[float]) -> "BoxStats":
        if not len(values):
            return cls()
        arr = np.asarray(values, dtype=np.float64)
        q1, median, q3 = np.percentile(arr, [25, 50, 75])
        return cls(n=len(arr), min=float(arr.min()), q1=float(q1), median=float(median),
                   q3=float(q3), max=float(arr.max()), iqr=float(q3 - q1))


class SimilarityGap(BaseModel):
    """Cosine similarities of labeled (positive) and unlabeled (negative) query-tool pairs."""
    positive: BoxStats
    negative: BoxStats
    positive_values: List[float] = Field(default_factory=list)
    negative_values: List[float] = Field(default_factory=list)


def similarity_gap(query_embeddings: EmbeddingMatrix, tool_embeddings: EmbeddingMatrix, corpus: Corpus,
                   negative_cap: int = DEFAULT_NEGATIVE_CAP, seed: int = 0,
                   splits: Optional[Iterable[str]] = None) -> SimilarityGap:
    """
    Distributions of cos(query, tool) for labeled and unlabeled pairs.

    Queries are visited in query_id order; when a query has more than
    `negative_cap` unlabeled tools, that many are drawn without replacement
    from a generator seeded once with `seed`.

    Raises:
        DimensionMismatch: The matrices have different dims
    """
    if query_embeddings.dim != tool_embeddings.dim:
        raise DimensionMismatch(tool_embeddings.dim, query_embeddings.dim, "similarity matrices")

    rng = np.random.default_rng(seed)
    tools = tool_embeddings.vectors
    tool_norms = np.linalg.norm(tools, axis=1)
    queries = corpus.queries if splits is None else corpus.queries_in(splits)

    positives: List[float] = []
    negatives: List[float] = []
    for query in sorted(queries, key=lambda q: q.query_id):
        if query.query_id not in query_embeddings:
            continue
        q = query_embeddings.row(query.query_id)
        denom = np.linalg.norm(q) * tool_norms
        cos = np.divide(tools @ q, denom, out=np.zeros(len(tools)), where=denom > 0)
        labeled = {tool_embeddings.index_of(t) for t in query.tools if t in tool_embeddings}
        positives.extend(float(cos[i]) for i in sorted(labeled))
        unlabeled = np.array([i for i in range(len(tools)) if i not in labeled], dtype=np.int64)
        if len(unlabeled) > negative_cap:
            unlabeled = np.sort(rng.choice(unlabeled, size=negative_cap, replace=False))
        negatives.extend(float(cos[i]) for i in unlabeled)

    return SimilarityGap(
        positive=BoxStats.of(positives),
        negative=BoxStats.of(negatives),
        positive_values=positives,
        negative_values=negatives,
    )


def export_similarity_csv(gap: SimilarityGap, path: str) -> None:
    """Rows of set,cosine for external box plots."""
    with open(path, "w", encoding="utf-8", newline="") as f:
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(["set", "cosine"])
        writer.writerows(("positive", v) for v in gap.positive_values)
        writer.writerows(("negative", v) for v in gap.negative_values)


def export_embedding_points(matrices: Dict[str, EmbeddingMatrix], path: str) -> int:
    """
    Write every row of the given matrices as kind,id,v0,...,v{d-1} so an
    external tool can run t-SNE over queries and tools together.

    Returns:
        Number of rows written
    """
    dims = {m.dim for m in matrices.values()}
    if len(dims) > 1:
        raise DimensionMismatch("one shared dim", sorted(dims), "exported matrices")
    dim = dims.pop() if dims else 0
    n = 0
    with open(path, "w", encoding="utf-8", newline="") as f:
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(["kind", "id"] + [f"v{i}" for i in range(dim)])
        for label, matrix in matrices.items():
            for row_id, vec in zip(matrix.ids, matrix.vectors):
                writer.writerow([label, row_id] + [repr(float(x)) for x in vec])
                n += 1
    return n
