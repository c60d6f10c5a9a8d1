#!/usr/bin/env python3
"""
toolsift Models - Pydantic records and configurations

This module contains the data models shared across toolsift: the tool and
query records of a corpus, the configuration objects of every stage, and the
result records passed between retrieval, refinement and evaluation.
"""
from typing import Any, Dict, Iterable, List, Literal, Optional, Tuple

from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator

from .errors import DuplicateId, UnknownToolRef

# -------------------------------
# Constants and lookup tables
# -------------------------------
SPLITS = ("train", "val", "test")
STAGE1_METHODS = ("tool2vec", "description", "mlc")
MATRIX_KINDS = ("query", "tool2vec", "description")

Split = Literal["train", "val", "test"]
Stage = Literal["stage1", "refined"]
Method = Literal["tool2vec", "description", "mlc"]


# -------------------------------
# Corpus records
# -------------------------------
class ToolRecord(BaseModel):
    """A tool's identity, name and natural-language description."""
    model_config = ConfigDict(extra="allow", frozen=True)

    tool_id: str = Field(..., min_length=1)
    name: str
    description: str = ""

    @property
    def description_text(self) -> str:
        """Text embedded for the description baseline; empty when both parts are."""
        if not self.name and not self.description:
            return ""
        return f"{self.name}: {self.description}"


class QueryRecord(BaseModel):
    """A user query with its ground-truth tools and split tag."""
    model_config = ConfigDict(extra="allow", frozen=True)

    query_id: str = Field(..., min_length=1)
    text: str = Field(..., min_length=1)
    tools: List[str] = Field(..., min_length=1)
    split: Split

    @field_validator("tools")
    @classmethod
    def _no_duplicate_tools(cls, tools: List[str]) -> List[str]:
        if len(set(tools)) != len(tools):
            raise ValueError("tools must not contain duplicates")
        return tools


class Corpus(BaseModel):
    """
    A validated, immutable collection of tools and queries.

    Use `Corpus.from_records` to build one; it enforces id uniqueness and
    referential integrity and raises `DuplicateId` / `UnknownToolRef`.
    """
    model_config = ConfigDict(frozen=True)

    tools: Dict[str, ToolRecord] = Field(default_factory=dict)
    queries: List[QueryRecord] = Field(default_factory=list)

    @classmethod
    def from_records(cls, tools: Iterable[ToolRecord], queries: Iterable[QueryRecord]) -> "Corpus":
        table: Dict[str, ToolRecord] = {}
        for tool in tools:
            if tool.tool_id in table:
                raise DuplicateId(tool.tool_id)
            table[tool.tool_id] = tool

        seen = set()
        query_list = list(queries)
        for query in query_list:
            if query.query_id in seen:
                raise DuplicateId(query.query_id)
            seen.add(query.query_id)
            for tool_id in query.tools:
                if tool_id not in table:
                    raise UnknownToolRef(query.query_id, tool_id)
        return cls(tools=table, queries=query_list)

    @property
    def n_tools(self) -> int:
        return len(self.tools)

    @property
    def tool_ids(self) -> List[str]:
        return list(self.tools)

    def queries_in(self, splits: Iterable[str]) -> List[QueryRecord]:
        wanted = set(splits)
        return [q for q in self.queries if q.split in wanted]

    def query_index(self) -> Dict[str, QueryRecord]:
        return {q.query_id: q for q in self.queries}


# -------------------------------
# Configuration
# -------------------------------
class FeaturizerConfig(BaseModel):
    """Hashed character n-gram featurizer settings."""
    model_config = ConfigDict(frozen=True)

    dim: int = Field(default=4096, ge=2)
    ngram_min: int = Field(default=3, ge=1)
    ngram_max: int = Field(default=5, ge=1)
    hash: Literal["fnv1a_64"] = "fnv1a_64"
    lowercase: bool = True

    @model_validator(mode="after")
    def _ngram_range(self) -> "FeaturizerConfig":
        if self.ngram_min > self.ngram_max:
            raise ValueError("ngram_min must not exceed ngram_max")
        return self


class TrainConfig(BaseModel):
    """Hyperparameters of the shared SGD loop."""
    model_config = ConfigDict(frozen=True)

    learning_rate: float = Field(default=0.5, ge=0.0)
    epochs: int = Field(default=5, ge=0)
    batch_size: int = Field(default=32, ge=1)
    l2: float = Field(default=0.0, ge=0.0)
    seed: int = 0


class TripletConfig(BaseModel):
    """Triplet-loss projection fine-tuning settings."""
    model_config = ConfigDict(frozen=True)

    margin: float = Field(default=0.2, ge=0.0)
    epochs: int = Field(default=1, ge=0)
    learning_rate: float = Field(default=0.05, ge=0.0)
    batch_size: int = Field(default=32, ge=1)
    seed: int = 0

    def as_train_config(self) -> TrainConfig:
        return TrainConfig(
            learning_rate=self.learning_rate,
            epochs=self.epochs,
            batch_size=self.batch_size,
            l2=0.0,
            seed=self.seed,
        )


class RefinerConfig(BaseModel):
    """Shape and initialization of the candidate-scoring MLP."""
    model_config = ConfigDict(frozen=True)

    hidden: Tuple[int, ...] = (64,)
    init: Literal["uniform", "zeros"] = "uniform"
    init_scale: float = Field(default=0.05, ge=0.0)

    @field_validator("hidden")
    @classmethod
    def _positive_widths(cls, hidden: Tuple[int, ...]) -> Tuple[int, ...]:
        if any(width < 1 for width in hidden):
            raise ValueError("hidden widths must be positive")
        return hidden


class PipelineConfig(BaseModel):
    """Two-stage retrieval settings."""
    model_config = ConfigDict(frozen=True)

    stage1_method: Method = "tool2vec"
    N: int = Field(default=64, ge=1)
    K: int = Field(default=5, ge=1)

    @model_validator(mode="after")
    def _k_within_n(self) -> "PipelineConfig":
        if self.K > self.N:
            raise ValueError(f"K ({self.K}) must not exceed N ({self.N})")
        return self


class EvalConfig(BaseModel):
    """Cut-offs at which Recall@K and nDCG@K are reported."""
    model_config = ConfigDict(frozen=True)

    ks: List[int] = Field(default_factory=lambda: [3, 5, 7])

    @field_validator("ks")
    @classmethod
    def _strictly_increasing(cls, ks: List[int]) -> List[int]:
        if not ks:
            raise ValueError("ks must not be empty")
        if any(k < 1 for k in ks):
            raise ValueError("ks must be positive")
        if any(b <= a for a, b in zip(ks, ks[1:])):
            raise ValueError("ks must be strictly increasing")
        return ks


class DatagenConfig(BaseModel):
    """Synthetic dataset generation settings."""
    model_config = ConfigDict(frozen=True)

    t_pool: int = Field(default=10, ge=1)
    m_min: int = Field(default=2, ge=1)
    m_max: int = Field(default=5, ge=1)
    n_incontext: int = Field(default=5, ge=0)
    seed: int = 0
    rounds: int = Field(default=10, ge=0)
    polish: bool = True
    max_workers: int = Field(default=1, ge=1)
    library_instructions: str = ""

    @model_validator(mode="after")
    def _selection_range(self) -> "DatagenConfig":
        if not (1 <= self.m_min <= self.m_max <= self.t_pool):
            raise ValueError("require 1 <= m_min <= m_max <= t_pool")
        return self


# -------------------------------
# Results
# -------------------------------
class Candidate(BaseModel):
    model_config = ConfigDict(frozen=True)

    tool_id: str
    score: float


class RetrievalResult(BaseModel):
    """Ordered candidate tools for one query, tagged by stage and method."""
    model_config = ConfigDict(frozen=True)

    query_id: str = ""
    candidates: List[Candidate] = Field(default_factory=list)
    stage: Stage = "stage1"
    method: Method = "tool2vec"

    @model_validator(mode="after")
    def _ordered_and_distinct(self) -> "RetrievalResult":
        ids = [c.tool_id for c in self.candidates]
        if len(set(ids)) != len(ids):
            raise ValueError("candidate tool_ids must be distinct")
        scores = [c.score for c in self.candidates]
        if any(b > a for a, b in zip(scores, scores[1:])):
            raise ValueError("candidate scores must be non-increasing")
        return self

    @property
    def tool_ids(self) -> List[str]:
        return [c.tool_id for c in self.candidates]


class EpochLoss(BaseModel):
    epoch: int
    train_loss: float
    val_loss: Optional[float] = None


class LossReport(BaseModel):
    """Per-epoch losses of one training run."""
    initial_train_loss: Optional[float] = None
    epochs: List[EpochLoss] = Field(default_factory=list)
    param_norms: Dict[str, float] = Field(default_factory=dict)

    @property
    def train_losses(self) -> List[float]:
        return [e.train_loss for e in self.epochs]


class CoverageReport(BaseModel):
    """Which tools received an embedding row, and which rows are raw zeros."""
    kind: str
    n_rows: int = 0
    uncovered: List[str] = Field(default_factory=list)
    zero_rows: List[str] = Field(default_factory=list)
    usage_counts: Dict[str, int] = Field(default_factory=dict)


class Provenance(BaseModel):
    round: int
    pool: List[str]
    prompts_hash: str


class GeneratedRecord(BaseModel):
    """One synthetic query produced by the generation stage."""
    raw_query: str
    polished_query: Optional[str] = None
    selected_tools: List[str]
    provenance: Provenance

    @property
    def text(self) -> str:
        return self.polished_query if self.polished_query else self.raw_query


def dump_record(record: BaseModel) -> Dict[str, Any]:
    """Serialize a record with declared fields first, then preserved extras."""
    return record.model_dump(mode="json")
