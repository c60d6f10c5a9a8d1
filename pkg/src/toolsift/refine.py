#!/usr/bin/env python3
"""
toolsift Refine - The second-stage ToolRefiner and the two-stage pipeline

The refiner scores each stage-1 candidate independently: an MLP with tanh
hidden layers maps the interaction feature [q ; t ; q*t ; cos(q, t)] of the
query vector q and the candidate's tool vector t to one logit. The final
ranking keeps the top-K stage-1 candidates by refiner probability.
"""
import os
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Literal, Optional, Sequence, Tuple

import numpy as np
import structlog

from .embed import EmbeddingMatrix, HashingFeaturizer, ProjectionModel
from .errors import ArtifactFormatError, DimensionMismatch, EmptyTrainSet, UnknownTool
from .models import (
    Corpus, EvalConfig, FeaturizerConfig, LossReport, PipelineConfig, QueryRecord,
    RefinerConfig, RetrievalResult, TrainConfig,
)
from .retrieve import MlcModel, cosine_topn, mlc_topn, rank_candidates
from .storage import load_artifact, read_json, save_artifact
from .train import BCE_EPS, Params, bce, sgd_run, sigmoid

logger = structlog.get_logger(__name__)

ToolsKind = Literal["tool2vec", "description"]

# File names written by `toolsift build-embeddings` / `toolsift train`
FEATURIZER_FILE = "featurizer.json"
QUERY_FILE = "query_embeddings.jsonl"
TOOL2VEC_FILE = "tool2vec.jsonl"
DESCRIPTION_FILE = "description_embeddings.jsonl"
MLC_FILE = "mlc.jsonl"
REFINER_FILE = "refiner.jsonl"
PROJECTION_FILE = "projection.jsonl"


# -------------------------------
# Features and model
# -------------------------------
def interaction_features(query_vec: np.ndarray, tool_vecs: np.ndarray) -> np.ndarray:
    """
    Rows [q ; t ; q*t ; cos(q, t)] for each tool row t; cos is 0 when either
    vector is zero.
    """
    q = np.asarray(query_vec, dtype=np.float64)
    T = np.atleast_2d(np.asarray(tool_vecs, dtype=np.float64))
    if T.shape[1] != q.shape[0]:
        raise DimensionMismatch(q.shape[0], T.shape[1], "candidate vectors")
    q_norm = np.linalg.norm(q)
    t_norms = np.linalg.norm(T, axis=1)
    denom = q_norm * t_norms
    cos = np.divide(T @ q, denom, out=np.zeros(len(T)), where=denom > 0)
    Q = np.broadcast_to(q, T.shape)
    return np.hstack([Q, T, Q * T, cos[:, None]])


def layer_shapes(dim: int, hidden: Sequence[int]) -> List[Tuple[int, int]]:
    widths = [3 * dim + 1, *hidden, 1]
    return list(zip(widths[:-1], widths[1:]))


def init_refiner_params(dim: int, cfg: RefinerConfig, seed: int) -> Params:
    """Weights uniform(-init_scale, init_scale) from a seeded generator (or zeros); biases zero."""
    rng = np.random.default_rng(seed)
    params: Params = {}
    for i, (fan_in, fan_out) in enumerate(layer_shapes(dim, cfg.hidden)):
        if cfg.init == "uniform":
            params[f"W{i}"] = rng.uniform(-cfg.init_scale, cfg.init_scale, size=(fan_in, fan_out))
        else:
            params[f"W{i}"] = np.zeros((fan_in, fan_out))
        params[f"b{i}"] = np.zeros(fan_out)
    return params


def _n_layers(params: Params) -> int:
    return sum(1 for key in params if key.startswith("W"))


def forward_logits(params: Params, features: np.ndarray) -> Tuple[np.ndarray, List[np.ndarray]]:
    """Batched forward pass; returns logits and the activations of every layer input."""
    n_layers = _n_layers(params)
    activations = [features]
    h = features
    for i in range(n_layers - 1):
        h = np.tanh(h @ params[f"W{i}"] + params[f"b{i}"])
        activations.append(h)
    last = n_layers - 1
    logits = (h @ params[f"W{last}"] + params[f"b{last}"])[:, 0]
    return logits, activations


def _forward_one(params: Params, x: np.ndarray) -> float:
    n_layers = _n_layers(params)
    h = x
    for i in range(n_layers - 1):
        h = np.tanh(params[f"W{i}"].T @ h + params[f"b{i}"])
    last = n_layers - 1
    return float(params[f"W{last}"][:, 0] @ h + params[f"b{last}"][0])


@dataclass(frozen=True)
class RefinerModel:
    """Interaction MLP weights plus the settings they were trained with."""
    params: Params
    dim: int
    config: RefinerConfig = field(default_factory=RefinerConfig)
    train_config: TrainConfig = field(default_factory=TrainConfig)
    tools_kind: ToolsKind = "tool2vec"

    def __post_init__(self):
        for i, (fan_in, fan_out) in enumerate(layer_shapes(self.dim, self.config.hidden)):
            if self.params[f"W{i}"].shape != (fan_in, fan_out):
                raise DimensionMismatch((fan_in, fan_out), self.params[f"W{i}"].shape, f"refiner W{i}")

    @classmethod
    def initialize(cls, dim: int, config: Optional[RefinerConfig] = None,
                   train_config: Optional[TrainConfig] = None,
                   tools_kind: ToolsKind = "tool2vec") -> "RefinerModel":
        config = config or RefinerConfig()
        train_config = train_config or TrainConfig()
        return cls(init_refiner_params(dim, config, train_config.seed), dim, config, train_config,
                   tools_kind)

    def save(self, path: str) -> None:
        header = {
            "kind": "refiner",
            "dim": self.dim,
            "layers": [list(s) for s in layer_shapes(self.dim, self.config.hidden)],
            "config": self.config.model_dump(mode="json"),
            "train_config": self.train_config.model_dump(),
            "seed": self.train_config.seed,
            "tools_kind": self.tools_kind,
        }
        save_artifact(path, header, self.params)

    @classmethod
    def load(cls, path: str) -> "RefinerModel":
        header, params = load_artifact(path)
        if header.get("kind") != "refiner":
            raise ArtifactFormatError(f"{path} is not a refiner artifact")
        return cls(
            params=params,
            dim=int(header["dim"]),
            config=RefinerConfig(**header.get("config", {})),
            train_config=TrainConfig(**header.get("train_config", {})),
            tools_kind=header.get("tools_kind", "tool2vec"),
        )


def refiner_score(query_vec: np.ndarray, candidate_vecs: Sequence[np.ndarray],
                  model: RefinerModel) -> np.ndarray:
    """
    Independent sigmoid probability for every candidate.

    Each candidate goes through its own forward pass, so its score is
    bit-identical whatever else is in the list and wherever it sits.

    Raises:
        DimensionMismatch: A vector's length differs from the model dim
        ValueError: The candidate list is empty
    """
    q = np.asarray(query_vec, dtype=np.float64)
    if q.shape != (model.dim,):
        raise DimensionMismatch(model.dim, q.shape, "refiner query")
    if len(candidate_vecs) == 0:
        raise ValueError("candidate list must not be empty")
    logits = np.empty(len(candidate_vecs))
    for i, t in enumerate(candidate_vecs):
        t = np.asarray(t, dtype=np.float64)
        if t.shape != (model.dim,):
            raise DimensionMismatch(model.dim, t.shape, "refiner candidate")
        logits[i] = _forward_one(model.params, interaction_features(q, t)[0])
    return sigmoid(logits)


# -------------------------------
# Training
# -------------------------------
class RefinerObjective:
    """
    Mean per-position BCE over (query row, tool row, label) items, with
    hand-written backprop through the tanh layers.
    """

    def __init__(self, queries: np.ndarray, tools: np.ndarray):
        self.queries = queries
        self.tools = tools

    def features(self, batch: Sequence[Tuple[int, int, float]]) -> Tuple[np.ndarray, np.ndarray]:
        idx = np.asarray([(q, t) for q, t, _ in batch], dtype=np.int64)
        labels = np.asarray([y for _, _, y in batch], dtype=np.float64)
        Q = self.queries[idx[:, 0]]
        T = self.tools[idx[:, 1]]
        q_norms = np.linalg.norm(Q, axis=1)
        t_norms = np.linalg.norm(T, axis=1)
        denom = q_norms * t_norms
        cos = np.divide(np.sum(Q * T, axis=1), denom, out=np.zeros(len(T)), where=denom > 0)
        return np.hstack([Q, T, Q * T, cos[:, None]]), labels

    def __call__(self, params: Params, batch: Sequence[Tuple[int, int, float]]) -> Tuple[float, Params]:
        if not len(batch):
            return 0.0, {k: np.zeros_like(v) for k, v in params.items()}
        X, y = self.features(batch)
        logits, activations = forward_logits(params, X)
        p = sigmoid(logits)
        loss = float(np.mean(bce(p, y)))

        inside = (p > BCE_EPS) & (p < 1.0 - BCE_EPS)
        delta = (np.where(inside, p - y, 0.0) / len(y))[:, None]
        grads: Params = {}
        for i in reversed(range(_n_layers(params))):
            h_in = activations[i]
            grads[f"W{i}"] = h_in.T @ delta
            grads[f"b{i}"] = delta.sum(axis=0)
            if i > 0:
                delta = (delta @ params[f"W{i}"].T) * (1.0 - h_in ** 2)
        return loss, grads


def refiner_items(queries: Sequence[QueryRecord], query_embeddings: EmbeddingMatrix,
                  tools: EmbeddingMatrix,
                  stage1: Callable[[QueryRecord], RetrievalResult]) -> Tuple[List[Tuple[int, int, float]], int]:
    """
    Label every stage-1 candidate of every query 1/0 against its ground
    truth. Returns the items and the number of ground-truth tools stage 1
    failed to surface (those contribute nothing).
    """
    items: List[Tuple[int, int, float]] = []
    misses = 0
    for query in queries:
        if query.query_id not in query_embeddings:
            continue
        q_row = query_embeddings.index_of(query.query_id)
        candidates = [c for c in stage1(query).tool_ids if c in tools]
        relevant = set(query.tools)
        misses += len(relevant - set(candidates))
        items.extend((q_row, tools.index_of(c), 1.0 if c in relevant else 0.0) for c in candidates)
    return items, misses


def train_refiner(corpus: Corpus, query_embeddings: EmbeddingMatrix, tools: EmbeddingMatrix,
                  stage1: Callable[[QueryRecord], RetrievalResult], cfg: TrainConfig,
                  refiner_cfg: Optional[RefinerConfig] = None,
                  tools_kind: ToolsKind = "tool2vec") -> Tuple[RefinerModel, LossReport]:
    """
    Train the refiner on the stage-1 candidates of the train split.

    Args:
        corpus: Labeled corpus
        query_embeddings: Query vectors in the same space as `tools`
        tools: Tool rows fed to the refiner (Tool2Vec, or descriptions for the ablation)
        stage1: Maps a query to its top-N stage-1 result
        cfg: SGD hyperparameters; cfg.seed also seeds the initialization
        refiner_cfg: Hidden widths and initialization
        tools_kind: Which tool table `tools` is

    Returns:
        Tuple of (trained model, loss report)

    Raises:
        EmptyTrainSet: No train query yields a candidate position
    """
    if query_embeddings.dim != tools.dim:
        raise DimensionMismatch(tools.dim, query_embeddings.dim, "query vs tool rows")
    train_items, misses = refiner_items(corpus.queries_in(("train",)), query_embeddings, tools, stage1)
    if not train_items:
        raise EmptyTrainSet("No train query produced stage-1 candidates")
    val_items, _ = refiner_items(corpus.queries_in(("val",)), query_embeddings, tools, stage1)
    positives = sum(1 for _, _, y in train_items if y)
    logger.info("refiner_positions", positions=len(train_items), positives=positives,
                stage1_misses=misses)

    model0 = RefinerModel.initialize(tools.dim, refiner_cfg, cfg, tools_kind)
    objective = RefinerObjective(query_embeddings.vectors, tools.vectors)
    params, report = sgd_run(objective, model0.params, train_items, cfg,
                             val_data=val_items or None, name="refiner")
    return RefinerModel(params, tools.dim, model0.config, cfg, tools_kind), report


# -------------------------------
# Pipeline
# -------------------------------
@dataclass
class PipelineArtifacts:
    """
    Everything the two-stage pipeline needs at inference time. When a
    projection is present, query vectors and tool tables are projected.
    """
    featurizer: HashingFeaturizer
    tool2vec: EmbeddingMatrix
    descriptions: Optional[EmbeddingMatrix] = None
    mlc: Optional[MlcModel] = None
    refiner: Optional[RefinerModel] = None
    projection: Optional[ProjectionModel] = None
    query_embeddings: Optional[EmbeddingMatrix] = None
    _tables: Dict[str, EmbeddingMatrix] = field(default_factory=dict, init=False, repr=False)

    def tool_table(self, kind: str) -> EmbeddingMatrix:
        if kind not in self._tables:
            matrix = self.tool2vec if kind == "tool2vec" else self.descriptions
            if matrix is None:
                raise ArtifactFormatError(f"No {kind} embeddings loaded")
            if self.projection is not None:
                matrix = self.projection.apply_matrix(matrix)
            self._tables[kind] = matrix
        return self._tables[kind]

    @property
    def refiner_tools(self) -> EmbeddingMatrix:
        kind = self.refiner.tools_kind if self.refiner is not None else "tool2vec"
        return self.tool_table(kind)

    def embed_query(self, text: str, query_id: str = "") -> np.ndarray:
        """Query vector in retrieval space; a stored row for query_id wins over featurizing."""
        if self.query_embeddings is not None and query_id and query_id in self.query_embeddings:
            vec = self.query_embeddings.row(query_id)
        else:
            vec = self.featurizer.featurize(text)
        if self.projection is not None:
            vec = self.projection.apply(vec)
        return vec

    def stage1(self, text: str, cfg: PipelineConfig, query_id: str = "") -> RetrievalResult:
        if cfg.stage1_method == "mlc":
            if self.mlc is None:
                raise ArtifactFormatError("No MLC model loaded")
            return mlc_topn(text, self.mlc, self.featurizer, cfg.N, query_id=query_id)
        table = self.tool_table(cfg.stage1_method)
        return cosine_topn(self.embed_query(text, query_id), table, cfg.N, query_id=query_id,
                           method=cfg.stage1_method)


def _refine(query_vec: np.ndarray, ids: Sequence[str], artifacts: PipelineArtifacts,
            k: int, query_id: str, method: str) -> RetrievalResult:
    if artifacts.refiner is None:
        raise ArtifactFormatError("No refiner model loaded")
    if not ids:
        return RetrievalResult(query_id=query_id, candidates=[], stage="refined", method=method)
    tools = artifacts.refiner_tools
    probs = refiner_score(query_vec, tools.rows(ids), artifacts.refiner)
    return RetrievalResult(
        query_id=query_id,
        candidates=rank_candidates(list(ids), probs, k),
        stage="refined",
        method=method,
    )


def retrieve_two_stage(query_text: str, artifacts: PipelineArtifacts, cfg: PipelineConfig,
                       query_id: str = "") -> RetrievalResult:
    """
    Prune to the top N with stage 1, then keep the top K by refiner
    probability (ties by tool_id). The result is always a subset of the
    stage-1 candidates.
    """
    first = artifacts.stage1(query_text, cfg, query_id)
    tools = artifacts.refiner_tools
    kept = [c for c in first.tool_ids if c in tools]
    if len(kept) < len(first.candidates):
        logger.warning("candidates_without_tool_row", query_id=query_id,
                       dropped=len(first.candidates) - len(kept))
    query_vec = artifacts.embed_query(query_text, query_id)
    return _refine(query_vec, kept, artifacts, cfg.K, query_id, cfg.stage1_method)


def refine_external(query_text: str, candidate_ids: Sequence[str], artifacts: PipelineArtifacts,
                    k: Optional[int] = None, query_id: str = "",
                    method: str = "tool2vec") -> RetrievalResult:
    """
    Re-score a candidate list produced by any other retriever.

    Raises:
        UnknownTool: A candidate has no row in the refiner's tool table
    """
    tools = artifacts.refiner_tools
    ids = list(dict.fromkeys(candidate_ids))
    for tool_id in ids:
        if tool_id not in tools:
            raise UnknownTool(tool_id)
    query_vec = artifacts.embed_query(query_text, query_id)
    return _refine(query_vec, ids, artifacts, k or max(1, len(ids)), query_id, method)


def sweep_top_n(queries: Sequence[QueryRecord], artifacts: PipelineArtifacts, corpus: Corpus,
                ns: Sequence[int] = (8, 16, 32, 64, 128), k: int = 5,
                stage1_method: str = "tool2vec",
                eval_cfg: Optional[EvalConfig] = None) -> List[Dict[str, float]]:
    """Refined metrics for each stage-1 width N (N below k is skipped)."""
    from .evaluation import evaluate

    eval_cfg = eval_cfg or EvalConfig()
    rows = []
    for n in ns:
        if n < k:
            continue
        cfg = PipelineConfig(stage1_method=stage1_method, N=n, K=k)
        results = [retrieve_two_stage(q.text, artifacts, cfg, q.query_id) for q in queries]
        report = evaluate(results, corpus, eval_cfg)
        rows.append({"N": n, **report.summary_row()})
    return rows


def load_artifacts(directory: str, require_refiner: bool = True) -> PipelineArtifacts:
    """
    Load the pipeline from the files written by build-embeddings and train.

    Raises:
        FileNotFoundError: The featurizer config or Tool2Vec matrix is missing,
            or the refiner when `require_refiner` is set
    """
    def path(name: str) -> str:
        return os.path.join(directory, name)

    def optional(name: str, loader):
        return loader(path(name)) if os.path.isfile(path(name)) else None

    featurizer = HashingFeaturizer(FeaturizerConfig(**read_json(path(FEATURIZER_FILE))))
    tool2vec = EmbeddingMatrix.load(path(TOOL2VEC_FILE))
    refiner = optional(REFINER_FILE, RefinerModel.load)
    if refiner is None and require_refiner:
        raise FileNotFoundError(f"File not found: {path(REFINER_FILE)}")
    return PipelineArtifacts(
        featurizer=featurizer,
        tool2vec=tool2vec,
        descriptions=optional(DESCRIPTION_FILE, EmbeddingMatrix.load),
        mlc=optional(MLC_FILE, MlcModel.load),
        refiner=refiner,
        projection=optional(PROJECTION_FILE, ProjectionModel.load),
        query_embeddings=optional(QUERY_FILE, EmbeddingMatrix.load),
    )
