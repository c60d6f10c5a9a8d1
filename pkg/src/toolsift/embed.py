#!/usr/bin/env python3
"""
toolsift Embed - Text featurization, Tool2Vec and projection fine-tuning

Texts are turned into unit vectors by an embedding provider: either the
built-in hashed character n-gram featurizer or a file of precomputed vectors
(e.g. produced by a real encoder). From query vectors this module builds
Tool2Vec rows (the re-normalized mean of the queries that use a tool), the
description baseline rows, and an optional linear projection trained with a
triplet margin loss.
"""
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Dict, FrozenSet, Iterable, List, Optional, Protocol, Sequence, Tuple

import numpy as np
import structlog

from .errors import (
    ArtifactFormatError, DimensionMismatch, MissingPrecomputedVector,
    NoNegativeAvailable, NumericalError,
)
from .models import (
    MATRIX_KINDS, Corpus, CoverageReport, FeaturizerConfig, LossReport, TripletConfig,
)
from .storage import iter_jsonl, load_artifact, read_header_rows, save_artifact, write_header_rows
from .train import Params, sgd_run

logger = structlog.get_logger(__name__)

FNV64_OFFSET = 0xCBF29CE484222325
FNV64_PRIME = 0x100000001B3
MASK64 = (1 << 64) - 1
NORM_TOLERANCE = 1e-6


# -------------------------------
# Featurizer
# -------------------------------
def fnv1a_64(data: bytes) -> int:
    """64-bit FNV-1a hash of a byte string."""
    h = FNV64_OFFSET
    for byte in data:
        h ^= byte
        h = (h * FNV64_PRIME) & MASK64
    return h


@lru_cache(maxsize=1 << 18)
def _gram_hash(gram: str) -> int:
    return fnv1a_64(gram.encode("utf-8"))


def char_ngrams(text: str, cfg: FeaturizerConfig) -> List[str]:
    """
    Character n-grams of the (lowercased) text for n in [ngram_min, ngram_max].

    A non-empty text shorter than ngram_min contributes itself as its only
    gram, so every non-empty text has a non-empty feature set.
    """
    if cfg.lowercase:
        text = text.lower()
    if not text:
        return []
    if len(text) < cfg.ngram_min:
        return [text]
    grams = []
    for n in range(cfg.ngram_min, cfg.ngram_max + 1):
        grams.extend(text[i:i + n] for i in range(len(text) - n + 1))
    return grams


def featurize(text: str, cfg: FeaturizerConfig) -> np.ndarray:
    """
    Hash character n-grams into `cfg.dim` term-frequency buckets and
    L2-normalize. The empty text maps to the all-zero vector.
    """
    vec = np.zeros(cfg.dim, dtype=np.float64)
    for gram in char_ngrams(text, cfg):
        vec[_gram_hash(gram) % cfg.dim] += 1.0
    norm = np.linalg.norm(vec)
    if norm > 0:
        vec /= norm
    return vec


def normalize_rows(vectors: np.ndarray) -> np.ndarray:
    """Scale each non-zero row to unit length; zero rows stay zero."""
    vectors = np.asarray(vectors, dtype=np.float64)
    norms = np.linalg.norm(vectors, axis=1, keepdims=True)
    safe = np.where(norms > 0, norms, 1.0)
    return vectors / safe


# -------------------------------
# Embedding matrix
# -------------------------------
@dataclass(frozen=True)
class EmbeddingMatrix:
    """
    Dense id-keyed table of float vectors.

    Rows are unit length unless `normalized` is False or the id is listed in
    `raw_ids` (zero vectors from an empty feature set).
    """
    kind: str
    ids: Tuple[str, ...]
    vectors: np.ndarray
    normalized: bool = True
    raw_ids: FrozenSet[str] = frozenset()
    _index: Dict[str, int] = field(default_factory=dict, init=False, repr=False, compare=False)

    def __post_init__(self):
        vectors = np.asarray(self.vectors, dtype=np.float64)
        if vectors.ndim != 2:
            raise DimensionMismatch("2-D matrix", vectors.shape, f"{self.kind} matrix")
        if vectors.shape[0] != len(self.ids):
            raise DimensionMismatch(len(self.ids), vectors.shape[0], f"{self.kind} row count")
        object.__setattr__(self, "vectors", vectors)
        object.__setattr__(self, "ids", tuple(self.ids))
        index = {row_id: i for i, row_id in enumerate(self.ids)}
        if len(index) != len(self.ids):
            raise ValueError(f"{self.kind} matrix has duplicate ids")
        object.__setattr__(self, "_index", index)
        if self.normalized and len(self.ids):
            norms = np.linalg.norm(vectors, axis=1)
            for row_id, norm in zip(self.ids, norms):
                if row_id not in self.raw_ids and abs(norm - 1.0) > NORM_TOLERANCE:
                    raise NumericalError(f"{self.kind} row {row_id!r} has norm {norm}, expected 1")

    @property
    def dim(self) -> int:
        return self.vectors.shape[1]

    def __len__(self) -> int:
        return len(self.ids)

    def __contains__(self, row_id: str) -> bool:
        return row_id in self._index

    def index_of(self, row_id: str) -> int:
        return self._index[row_id]

    def row(self, row_id: str) -> np.ndarray:
        return self.vectors[self._index[row_id]]

    def rows(self, row_ids: Sequence[str]) -> np.ndarray:
        return self.vectors[[self._index[r] for r in row_ids]]

    def as_dict(self) -> Dict[str, np.ndarray]:
        return {row_id: self.vectors[i] for i, row_id in enumerate(self.ids)}

    def save(self, path: str) -> None:
        """Write the header line then one {"id", "vec"} row per entry."""
        header = {
            "dim": self.dim,
            "kind": self.kind,
            "normalized": self.normalized,
            "raw_ids": sorted(self.raw_ids),
        }
        write_header_rows(path, header, zip(self.ids, self.vectors))

    @classmethod
    def load(cls, path: str) -> "EmbeddingMatrix":
        header, rows = read_header_rows(path)
        dim = header.get("dim")
        kind = header.get("kind")
        if not isinstance(dim, int) or kind not in MATRIX_KINDS:
            raise ArtifactFormatError(f"{path}: header must carry an integer dim and a known kind")
        for row_id, vec in rows:
            if len(vec) != dim:
                raise DimensionMismatch(dim, len(vec), f"row {row_id!r} in {path}")
        vectors = np.asarray([vec for _, vec in rows], dtype=np.float64).reshape(len(rows), dim)
        return cls(
            kind=kind,
            ids=tuple(row_id for row_id, _ in rows),
            vectors=vectors,
            normalized=bool(header.get("normalized", True)),
            raw_ids=frozenset(header.get("raw_ids", [])),
        )


def _zero_row_ids(ids: Sequence[str], vectors: np.ndarray) -> FrozenSet[str]:
    if not len(ids):
        return frozenset()
    norms = np.linalg.norm(vectors, axis=1)
    return frozenset(row_id for row_id, norm in zip(ids, norms) if norm == 0.0)


# -------------------------------
# Providers
# -------------------------------
class EmbeddingProvider(Protocol):
    """Maps (id, text) pairs to one row each; rows are unit or zero."""

    @property
    def dim(self) -> Optional[int]:
        ...

    def embed(self, items: Sequence[Tuple[str, str]]) -> np.ndarray:
        ...


class HashingFeaturizer:
    """Embedding provider backed by `featurize`."""

    def __init__(self, cfg: Optional[FeaturizerConfig] = None, workers: int = 1):
        self.cfg = cfg or FeaturizerConfig()
        self.workers = max(1, workers)

    @property
    def dim(self) -> int:
        return self.cfg.dim

    def featurize(self, text: str) -> np.ndarray:
        return featurize(text, self.cfg)

    def embed(self, items: Sequence[Tuple[str, str]]) -> np.ndarray:
        texts = [text for _, text in items]
        if self.workers > 1 and len(texts) > 1:
            # map() preserves input order, so the merge is scheduling-independent
            with ThreadPoolExecutor(max_workers=self.workers) as pool:
                rows = list(pool.map(self.featurize, texts))
        else:
            rows = [self.featurize(text) for text in texts]
        if not rows:
            return np.zeros((0, self.dim), dtype=np.float64)
        return np.vstack(rows)


class PrecomputedVectors:
    """Embedding provider that looks vectors up by id (text is ignored)."""

    def __init__(self, vectors: Dict[str, Sequence[float]]):
        lengths = {len(v) for v in vectors.values()}
        if len(lengths) > 1:
            raise DimensionMismatch("uniform vector length", sorted(lengths), "precomputed vectors")
        self._dim = lengths.pop() if lengths else None
        self.vectors = {k: np.asarray(v, dtype=np.float64) for k, v in vectors.items()}

    @classmethod
    def from_file(cls, path: str) -> "PrecomputedVectors":
        """Read {"id", "vec"} lines; an optional header line without "id" is skipped."""
        vectors: Dict[str, List[float]] = {}
        for line_no, obj in iter_jsonl(path):
            if "id" not in obj:
                if line_no == 1 or not vectors:
                    continue
                raise ArtifactFormatError(f"{path}:{line_no} lacks an id")
            vectors[str(obj["id"])] = obj["vec"]
        return cls(vectors)

    @property
    def dim(self) -> Optional[int]:
        return self._dim

    def embed(self, items: Sequence[Tuple[str, str]]) -> np.ndarray:
        rows = []
        for row_id, _ in items:
            if row_id not in self.vectors:
                raise MissingPrecomputedVector(row_id)
            rows.append(self.vectors[row_id])
        if not rows:
            return np.zeros((0, self._dim or 0), dtype=np.float64)
        return normalize_rows(np.vstack(rows))


def _checked_embed(provider: EmbeddingProvider, items: Sequence[Tuple[str, str]]) -> np.ndarray:
    vectors = provider.embed(items)
    if provider.dim is not None and vectors.shape[1] != provider.dim:
        raise DimensionMismatch(provider.dim, vectors.shape[1], "provider output")
    if not np.all(np.isfinite(vectors)):
        raise NumericalError("embedding provider returned non-finite values")
    return vectors


# -------------------------------
# Matrix builders
# -------------------------------
def embed_queries(corpus: Corpus, provider: EmbeddingProvider,
                  splits: Optional[Iterable[str]] = None) -> EmbeddingMatrix:
    """
    Embed every query (optionally only those in `splits`), keyed by query_id.

    Raises:
        MissingPrecomputedVector: A precomputed file lacks a query id
        DimensionMismatch: Precomputed vectors have mixed lengths
    """
    queries = corpus.queries if splits is None else corpus.queries_in(splits)
    ids = [q.query_id for q in queries]
    vectors = _checked_embed(provider, [(q.query_id, q.text) for q in queries])
    return EmbeddingMatrix("query", tuple(ids), vectors, raw_ids=_zero_row_ids(ids, vectors))


def build_tool2vec(corpus: Corpus, query_embeddings: EmbeddingMatrix,
                   split_filter: Iterable[str] = ("train",)) -> Tuple[EmbeddingMatrix, CoverageReport]:
    """
    Build usage-driven tool embeddings.

    Each tool's row is the arithmetic mean of the embeddings of the filtered
    queries labeled with it, re-normalized to unit length. Contributions are
    summed in query_id order, so the result does not depend on the order of
    queries in the corpus. A tool used by exactly one query gets that query's
    row unchanged. Tools with no usage are omitted and listed as uncovered.

    Args:
        corpus: Labels source
        query_embeddings: Query matrix keyed by query_id
        split_filter: Splits whose queries contribute

    Returns:
        Tuple of (tool2vec matrix in corpus tool order, coverage report)

    Raises:
        MissingPrecomputedVector: A filtered query has no embedding row
        NumericalError: A mean is not finite
    """
    wanted = set(split_filter)
    filtered = sorted((q for q in corpus.queries if q.split in wanted), key=lambda q: q.query_id)

    members: Dict[str, List[int]] = {tool_id: [] for tool_id in corpus.tools}
    for query in filtered:
        if query.query_id not in query_embeddings:
            raise MissingPrecomputedVector(query.query_id)
        row = query_embeddings.index_of(query.query_id)
        for tool_id in query.tools:
            members[tool_id].append(row)

    ids: List[str] = []
    rows: List[np.ndarray] = []
    raw: List[str] = []
    uncovered: List[str] = []
    for tool_id, member_rows in members.items():
        if not member_rows:
            uncovered.append(tool_id)
            continue
        if len(member_rows) == 1:
            vec = query_embeddings.vectors[member_rows[0]].copy()
        else:
            mean = query_embeddings.vectors[member_rows].mean(axis=0)
            if not np.all(np.isfinite(mean)):
                raise NumericalError(f"Tool2Vec mean for {tool_id!r} is not finite")
            norm = np.linalg.norm(mean)
            vec = mean / norm if norm > 0 else mean
        if not np.any(vec):
            raw.append(tool_id)
        ids.append(tool_id)
        rows.append(vec)

    if uncovered:
        logger.warning("tool2vec_uncovered_tools", count=len(uncovered), sample=uncovered[:5])

    vectors = np.vstack(rows) if rows else np.zeros((0, query_embeddings.dim))
    matrix = EmbeddingMatrix("tool2vec", tuple(ids), vectors, raw_ids=frozenset(raw))
    report = CoverageReport(
        kind="tool2vec",
        n_rows=len(ids),
        uncovered=uncovered,
        zero_rows=raw,
        usage_counts={tool_id: len(rows_) for tool_id, rows_ in members.items()},
    )
    return matrix, report


def build_description_embeddings(corpus: Corpus,
                                 provider: EmbeddingProvider) -> Tuple[EmbeddingMatrix, CoverageReport]:
    """
    Embed each tool's "name: description" text (the description baseline).
    A tool whose name and description are both empty gets a zero row.
    """
    items = [(tool.tool_id, tool.description_text) for tool in corpus.tools.values()]
    ids = [tool_id for tool_id, _ in items]
    vectors = _checked_embed(provider, items)
    raw = _zero_row_ids(ids, vectors)
    zero_rows = [tool_id for tool_id in ids if tool_id in raw]
    if zero_rows:
        logger.warning("description_zero_rows", count=len(zero_rows), sample=zero_rows[:5])
    matrix = EmbeddingMatrix("description", tuple(ids), vectors, raw_ids=raw)
    report = CoverageReport(kind="description", n_rows=len(ids), zero_rows=zero_rows)
    return matrix, report


# -------------------------------
# Triplet projection
# -------------------------------
class TripletProjectionObjective:
    """
    Mean triplet margin loss of a linear projection W over (anchor, positive,
    negative) row-index triplets.
    """

    def __init__(self, anchors: np.ndarray, tools: np.ndarray, margin: float):
        self.anchors = anchors
        self.tools = tools
        self.margin = margin

    def __call__(self, params: Params, batch: Sequence[Tuple[int, int, int]]) -> Tuple[float, Params]:
        W = params["W"]
        if not len(batch):
            return 0.0, {"W": np.zeros_like(W)}
        idx = np.asarray(batch, dtype=np.int64)
        a = self.anchors[idx[:, 0]]
        d_pos = a - self.tools[idx[:, 1]]
        d_neg = a - self.tools[idx[:, 2]]
        z_pos = d_pos @ W.T
        z_neg = d_neg @ W.T
        hinge = np.sum(z_pos ** 2, axis=1) - np.sum(z_neg ** 2, axis=1) + self.margin
        active = hinge > 0
        loss = float(np.sum(np.where(active, hinge, 0.0))) / len(batch)
        grad = 2.0 * (z_pos[active].T @ d_pos[active] - z_neg[active].T @ d_neg[active]) / len(batch)
        return loss, {"W": grad}


def sample_triplets(anchor_rows: Sequence[Tuple[str, int, Sequence[int]]], n_tools: int,
                    seed: int, epoch: int) -> List[Tuple[int, int, int]]:
    """
    One uniformly drawn negative per (query, positive) pair.

    Args:
        anchor_rows: (query_id, anchor row, positive tool rows) per query
        n_tools: Number of tool rows to draw negatives from
        seed: Base seed; the epoch index is mixed in
        epoch: Epoch index

    Raises:
        NoNegativeAvailable: A query is labeled with every tool
    """
    rng = np.random.default_rng([seed, epoch])
    triplets = []
    for query_id, anchor, positives in anchor_rows:
        labeled = set(positives)
        negatives = [t for t in range(n_tools) if t not in labeled]
        if not negatives:
            raise NoNegativeAvailable(query_id)
        for pos in positives:
            neg = negatives[int(rng.integers(len(negatives)))]
            triplets.append((anchor, pos, neg))
    return triplets


@dataclass(frozen=True)
class ProjectionModel:
    """Square projection W; retrieval compares W q and W t re-normalized."""
    W: np.ndarray
    config: TripletConfig = field(default_factory=TripletConfig)

    @property
    def dim(self) -> int:
        return self.W.shape[0]

    def apply(self, vec: np.ndarray) -> np.ndarray:
        if vec.shape[-1] != self.dim:
            raise DimensionMismatch(self.dim, vec.shape[-1], "projection input")
        out = self.W @ vec
        norm = np.linalg.norm(out)
        return out / norm if norm > 0 else out

    def apply_matrix(self, matrix: EmbeddingMatrix) -> EmbeddingMatrix:
        if matrix.dim != self.dim:
            raise DimensionMismatch(self.dim, matrix.dim, f"{matrix.kind} matrix")
        projected = normalize_rows(matrix.vectors @ self.W.T)
        return EmbeddingMatrix(matrix.kind, matrix.ids, projected,
                               raw_ids=_zero_row_ids(matrix.ids, projected))

    def save(self, path: str) -> None:
        header = {"kind": "projection", "dim": self.dim,
                  "config": self.config.model_dump(), "seed": self.config.seed}
        save_artifact(path, header, {"W": self.W})

    @classmethod
    def load(cls, path: str) -> "ProjectionModel":
        header, params = load_artifact(path)
        if header.get("kind") != "projection":
            raise ArtifactFormatError(f"{path} is not a projection artifact")
        return cls(W=params["W"], config=TripletConfig(**header.get("config", {})))


def finetune_projection(train_queries: EmbeddingMatrix, tool2vec: EmbeddingMatrix, corpus: Corpus,
                        cfg: TripletConfig,
                        splits: Iterable[str] = ("train",)) -> Tuple[ProjectionModel, LossReport]:
    """
    Fit a dim x dim projection, initialized at identity, with the triplet loss
    max(0, ||W a - W p||^2 - ||W a - W n||^2 + margin) where the anchor is a
    query embedding, the positive a labeled tool's Tool2Vec row and the
    negative a uniformly drawn unlabeled tool, redrawn every epoch.

    Raises:
        DimensionMismatch: Query and Tool2Vec dims differ
        NoNegativeAvailable: A query is labeled with every tool
    """
    if train_queries.dim != tool2vec.dim:
        raise DimensionMismatch(tool2vec.dim, train_queries.dim, "query vs tool2vec")

    anchor_rows = []
    for query in sorted(corpus.queries_in(splits), key=lambda q: q.query_id):
        if query.query_id not in train_queries:
            continue
        positives = [tool2vec.index_of(t) for t in query.tools if t in tool2vec]
        if positives:
            anchor_rows.append((query.query_id, train_queries.index_of(query.query_id), positives))

    objective = TripletProjectionObjective(train_queries.vectors, tool2vec.vectors, cfg.margin)
    params0 = {"W": np.eye(tool2vec.dim)}

    def epoch_triplets(epoch: int):
        return sample_triplets(anchor_rows, len(tool2vec), cfg.seed, epoch)

    params, report = sgd_run(objective, params0, epoch_triplets, cfg.as_train_config(), name="projection")
    return ProjectionModel(W=params["W"], config=cfg), report
