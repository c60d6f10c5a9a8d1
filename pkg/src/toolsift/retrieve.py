#!/usr/bin/env python3
"""
toolsift Retrieve - Stage-1 retrieval: exact cosine top-N and the MLC

The multi-label classifier (MLC) maps a query's feature vector x to one
probability per tool, sigmoid(W^T x + b), with W of shape H x T. It is
trained with mean binary cross-entropy over every (query, tool) cell.
"""
from dataclasses import dataclass, field
from typing import List, Optional, Sequence, Tuple

import numpy as np
import structlog

from .corpus import labels_matrix
from .embed import EmbeddingMatrix, HashingFeaturizer, embed_queries
from .errors import ArtifactFormatError, DimensionMismatch, EmptyToolMatrix, EmptyTrainSet
from .models import Candidate, Corpus, LossReport, Method, RetrievalResult, TrainConfig
from .storage import load_artifact, save_artifact
from .train import BCE_EPS, Params, bce, sgd_run, sigmoid

logger = structlog.get_logger(__name__)


# -------------------------------
# Ranking
# -------------------------------
def rank_candidates(ids: Sequence[str], scores: np.ndarray, n: int) -> List[Candidate]:
    """
    Top-n candidates by score descending, ties broken by ascending tool_id.

    The ordering is total, so the top-n list for a smaller n is always a
    prefix of the list for a larger one.
    """
    if n < 1:
        raise ValueError(f"n must be >= 1, got {n}")
    scores = np.asarray(scores, dtype=np.float64)
    id_rank = np.empty(len(ids), dtype=np.int64)
    id_rank[np.argsort(np.asarray(ids, dtype=object), kind="stable")] = np.arange(len(ids))
    # lexsort keys are given least significant first
    order = np.lexsort((id_rank, -scores))[:n]
    return [Candidate(tool_id=ids[i], score=float(scores[i])) for i in order]


def cosine_topn(query_vec: np.ndarray, tools: EmbeddingMatrix, n: int, query_id: str = "",
                method: Method = "tool2vec") -> RetrievalResult:
    """
    Exact top-n tools by dot product with a unit query vector.

    Raises:
        EmptyToolMatrix: The tool matrix has no rows
        DimensionMismatch: Query and tool dims differ
    """
    if len(tools) == 0:
        raise EmptyToolMatrix()
    query_vec = np.asarray(query_vec, dtype=np.float64)
    if query_vec.shape != (tools.dim,):
        raise DimensionMismatch(tools.dim, query_vec.shape, "query vector")
    scores = tools.vectors @ query_vec
    return RetrievalResult(
        query_id=query_id,
        candidates=rank_candidates(tools.ids, scores, n),
        stage="stage1",
        method=method,
    )


# -------------------------------
# Multi-label classifier
# -------------------------------
@dataclass(frozen=True)
class MlcModel:
    """Linear per-tool sigmoid head over query features."""
    weights: np.ndarray
    bias: np.ndarray
    tool_ids: Tuple[str, ...]
    config: TrainConfig = field(default_factory=TrainConfig)

    def __post_init__(self):
        if self.weights.ndim != 2 or self.weights.shape[1] != len(self.tool_ids):
            raise DimensionMismatch(("H", len(self.tool_ids)), self.weights.shape, "MLC weights")
        if self.bias.shape != (len(self.tool_ids),):
            raise DimensionMismatch(len(self.tool_ids), self.bias.shape, "MLC bias")
        if len(set(self.tool_ids)) != len(self.tool_ids):
            raise ValueError("MLC tool index must be a bijection")

    @property
    def H(self) -> int:
        return self.weights.shape[0]

    @property
    def T(self) -> int:
        return self.weights.shape[1]

    @classmethod
    def zeros(cls, H: int, tool_ids: Sequence[str], config: Optional[TrainConfig] = None) -> "MlcModel":
        return cls(np.zeros((H, len(tool_ids))), np.zeros(len(tool_ids)), tuple(tool_ids),
                   config or TrainConfig())

    def params(self) -> Params:
        return {"W": self.weights, "b": self.bias}

    def save(self, path: str) -> None:
        header = {"kind": "mlc", "H": self.H, "T": self.T, "tool_ids": list(self.tool_ids),
                  "config": self.config.model_dump(), "seed": self.config.seed}
        save_artifact(path, header, {"W": self.weights, "b": self.bias})

    @classmethod
    def load(cls, path: str) -> "MlcModel":
        header, params = load_artifact(path)
        if header.get("kind") != "mlc":
            raise ArtifactFormatError(f"{path} is not an MLC artifact")
        return cls(params["W"], params["b"], tuple(header["tool_ids"]),
                   TrainConfig(**header.get("config", {})))


def mlc_forward(features: np.ndarray, model: MlcModel) -> np.ndarray:
    """
    Per-tool probabilities sigmoid(W^T x + b) for one feature vector.

    Raises:
        DimensionMismatch: len(features) != H
    """
    x = np.asarray(features, dtype=np.float64)
    if x.shape != (model.H,):
        raise DimensionMismatch(model.H, x.shape, "MLC features")
    return sigmoid(model.weights.T @ x + model.bias)


def mlc_forward_batch(features: np.ndarray, model: MlcModel) -> np.ndarray:
    X = np.asarray(features, dtype=np.float64)
    if X.ndim != 2 or X.shape[1] != model.H:
        raise DimensionMismatch(model.H, X.shape, "MLC feature batch")
    return sigmoid(X @ model.weights + model.bias)


class MlcObjective:
    """Mean BCE over all (query, tool) cells of a batch of row indices."""

    def __init__(self, features: np.ndarray, labels: np.ndarray):
        self.features = features
        self.labels = labels

    def __call__(self, params: Params, batch: Sequence[int]) -> Tuple[float, Params]:
        W, b = params["W"], params["b"]
        if not len(batch):
            return 0.0, {"W": np.zeros_like(W), "b": np.zeros_like(b)}
        rows = np.asarray(batch, dtype=np.int64)
        X = self.features[rows]
        Y = self.labels[rows]
        P = sigmoid(X @ W + b)
        loss = float(np.mean(bce(P, Y)))
        # d/dz of the clamped BCE is p - y wherever the clamp is inactive
        inside = (P > BCE_EPS) & (P < 1.0 - BCE_EPS)
        grad_z = np.where(inside, P - Y, 0.0) / Y.size
        return loss, {"W": X.T @ grad_z, "b": grad_z.sum(axis=0)}


def train_mlc(corpus: Corpus, featurizer: HashingFeaturizer,
              cfg: TrainConfig) -> Tuple[MlcModel, LossReport]:
    """
    Train the MLC on the corpus's train split, reporting val loss when a
    val split exists.

    Args:
        corpus: Labeled corpus; every tool gets a column in corpus order
        featurizer: Provider of the H-dimensional query features
        cfg: SGD hyperparameters

    Returns:
        Tuple of (trained model, loss report)

    Raises:
        EmptyTrainSet: No train queries
    """
    train = corpus.queries_in(("train",))
    if not train:
        raise EmptyTrainSet()
    tool_ids = corpus.tool_ids
    column = {t: i for i, t in enumerate(tool_ids)}
    val = corpus.queries_in(("val",))

    # train rows first, then val rows; items are row indices into one table
    queries = train + val
    X = embed_queries(Corpus(tools=corpus.tools, queries=queries), featurizer).vectors
    Y = labels_matrix(queries, tool_ids, column)
    objective = MlcObjective(X, Y)
    train_items = list(range(len(train)))
    val_items = list(range(len(train), len(queries)))

    model0 = MlcModel.zeros(featurizer.dim, tool_ids, cfg)
    params, report = sgd_run(objective, model0.params(), train_items, cfg,
                             val_data=val_items or None, name="mlc")
    logger.info("mlc_trained", H=model0.H, T=model0.T, epochs=cfg.epochs,
                n_train=len(train), n_val=len(val))
    return MlcModel(params["W"], params["b"], tuple(tool_ids), cfg), report


def mlc_topn(query_text: str, model: MlcModel, featurizer: HashingFeaturizer, n: int,
             query_id: str = "") -> RetrievalResult:
    """Top-n tools by MLC probability, ties by tool_id."""
    probs = mlc_forward(featurizer.featurize(query_text), model)
    return RetrievalResult(
        query_id=query_id,
        candidates=rank_candidates(model.tool_ids, probs, n),
        stage="stage1",
        method="mlc",
    )
