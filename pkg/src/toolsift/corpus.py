#!/usr/bin/env python3
"""
toolsift Corpus - Loading, saving, splitting and summarizing tool corpora

A corpus is a table of tools plus a list of labeled queries, stored as two
JSON Lines files (tools.jsonl, queries.jsonl).
"""
import math
from collections import Counter
from typing import Dict, List, Optional

import numpy as np
import structlog
from pydantic import BaseModel, Field, ValidationError

from .errors import EmptyTrainSet, MalformedLine
from .models import SPLITS, Corpus, QueryRecord, ToolRecord, dump_record
from .storage import iter_jsonl, write_jsonl

logger = structlog.get_logger(__name__)


class CorpusStats(BaseModel):
    """Summary counts of a corpus."""
    n_tools: int = 0
    n_queries: int = 0
    split_counts: Dict[str, int] = Field(default_factory=lambda: {s: 0 for s in SPLITS})
    tools_per_query: Dict[int, int] = Field(default_factory=dict)
    tool_occurrences: Dict[str, int] = Field(default_factory=dict)
    mean_tools_per_query: float = 0.0


# -------------------------------
# File Operations
# -------------------------------
def load_tools(tools_path: str) -> List[ToolRecord]:
    """
    Load tool records from a JSON Lines file.

    Raises:
        FileNotFoundError: If the file doesn't exist
        MalformedLine: If a line is not valid JSON or misses required fields
    """
    tools = []
    for line_no, raw in iter_jsonl(tools_path):
        try:
            tools.append(ToolRecord(**raw))
        except ValidationError as e:
            raise MalformedLine(line_no, tools_path, _first_error(e)) from e
    return tools


def load_queries(queries_path: str) -> List[QueryRecord]:
    queries = []
    for line_no, raw in iter_jsonl(queries_path):
        try:
            queries.append(QueryRecord(**raw))
        except ValidationError as e:
            raise MalformedLine(line_no, queries_path, _first_error(e)) from e
    return queries


def load_corpus(tools_path: str, queries_path: str) -> Corpus:
    """
    Load and validate a corpus from tools.jsonl and queries.jsonl.

    Unknown JSON fields are kept on the records and written back by
    `save_corpus`.

    Args:
        tools_path: Path of the tools file
        queries_path: Path of the queries file

    Returns:
        A validated Corpus

    Raises:
        FileNotFoundError: If either file doesn't exist
        MalformedLine: Invalid JSON or a record violating the schema
        DuplicateId: A tool_id or query_id appears twice
        UnknownToolRef: A query references a tool missing from the tool table
    """
    corpus = Corpus.from_records(load_tools(tools_path), load_queries(queries_path))
    logger.debug("corpus_loaded", n_tools=corpus.n_tools, n_queries=len(corpus.queries))
    return corpus


def save_tools(tools: List[ToolRecord], tools_path: str) -> None:
    write_jsonl(tools_path, (dump_record(t) for t in tools))


def save_corpus(corpus: Corpus, tools_path: str, queries_path: str) -> None:
    """Write a corpus back to its two JSON Lines files, preserving record order."""
    save_tools(list(corpus.tools.values()), tools_path)
    write_jsonl(queries_path, (dump_record(q) for q in corpus.queries))


def _first_error(error: ValidationError) -> str:
    details = error.errors()
    if not details:
        return str(error)
    first = details[0]
    loc = ".".join(str(part) for part in first.get("loc", ()))
    return f"{loc}: {first.get('msg', '')}" if loc else first.get("msg", "")


# -------------------------------
# Splits and statistics
# -------------------------------
def split_train_val(corpus: Corpus, ratio: float = 0.8, seed: int = 0) -> Corpus:
    """
    Re-tag part of the train split as validation.

    Train query ids are sorted, shuffled with a generator seeded by `seed`,
    and the first round(ratio * n) (half-up) stay in train; the rest become
    val. Queries tagged val or test are left untouched.

    Raises:
        ValueError: If ratio is not strictly between 0 and 1
        EmptyTrainSet: If there are no train queries, or none would remain
    """
    if not 0.0 < ratio < 1.0:
        raise ValueError(f"ratio must be in (0, 1), got {ratio}")

    train_ids = sorted(q.query_id for q in corpus.queries if q.split == "train")
    if not train_ids:
        raise EmptyTrainSet()

    n_keep = int(math.floor(ratio * len(train_ids) + 0.5))
    if n_keep == 0:
        raise EmptyTrainSet(f"ratio {ratio} leaves no train queries out of {len(train_ids)}")

    order = np.random.default_rng(seed).permutation(len(train_ids))
    to_val = {train_ids[i] for i in order[n_keep:]}

    queries = [
        q.model_copy(update={"split": "val"}) if q.query_id in to_val else q
        for q in corpus.queries
    ]
    logger.info("split_train_val", train=n_keep, val=len(to_val), seed=seed)
    return Corpus(tools=dict(corpus.tools), queries=queries)


def corpus_stats(corpus: Corpus) -> CorpusStats:
    """Count queries per split, tools per query and tool occurrences."""
    split_counts = {s: 0 for s in SPLITS}
    per_query: Counter = Counter()
    occurrences = {tool_id: 0 for tool_id in corpus.tools}

    for query in corpus.queries:
        split_counts[query.split] += 1
        per_query[len(query.tools)] += 1
        for tool_id in query.tools:
            occurrences[tool_id] += 1

    n_queries = len(corpus.queries)
    total_labels = sum(occurrences.values())
    return CorpusStats(
        n_tools=corpus.n_tools,
        n_queries=n_queries,
        split_counts=split_counts,
        tools_per_query=dict(sorted(per_query.items())),
        tool_occurrences=occurrences,
        mean_tools_per_query=(total_labels / n_queries) if n_queries else 0.0,
    )


def labels_matrix(queries: List[QueryRecord], tool_ids: List[str],
                  index: Optional[Dict[str, int]] = None) -> np.ndarray:
    """Binary (n_queries x n_tools) label matrix in the given tool column order."""
    column = index if index is not None else {t: i for i, t in enumerate(tool_ids)}
    y = np.zeros((len(queries), len(tool_ids)), dtype=np.float64)
    for row, query in enumerate(queries):
        for tool_id in query.tools:
            col = column.get(tool_id)
            if col is not None:
                y[row, col] = 1.0
    return y
