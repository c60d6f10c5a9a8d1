#!/usr/bin/env python3
"""
toolsift Synthetic - Constructed corpora with known retrieval structure

Two generators: a disjoint-vocabulary corpus, where each tool's queries draw
words only from that tool's private vocabulary (so usage-driven embeddings
separate tools perfectly while descriptions do not), and a harder
overlapping corpus with shared words and 2-5 tools per query.
"""
import string
from typing import List, Set

import numpy as np

from .models import Corpus, QueryRecord, ToolRecord

LETTERS = np.array(list(string.ascii_lowercase))


def _random_words(rng: np.random.Generator, count: int, taken: Set[str],
                  min_len: int = 5, max_len: int = 9) -> List[str]:
    words: List[str] = []
    while len(words) < count:
        length = int(rng.integers(min_len, max_len + 1))
        word = "".join(rng.choice(LETTERS, size=length))
        if word not in taken:
            taken.add(word)
            words.append(word)
    return words


def make_disjoint_corpus(n_tools: int = 30, queries_per_tool: int = 10, test_per_tool: int = 2,
                         vocab_size: int = 8, words_per_query: int = 5, seed: int = 0) -> Corpus:
    """
    One tool per query; every tool owns a private vocabulary that its
    queries draw from, and its description uses words nobody queries with.
    The last `test_per_tool` queries of each tool are tagged test.
    """
    rng = np.random.default_rng(seed)
    taken: Set[str] = set()
    tools = []
    queries = []
    for t in range(n_tools):
        tool_id = f"tool_{t:03d}"
        vocab = _random_words(rng, vocab_size, taken)
        description = " ".join(_random_words(rng, 6, taken))
        tools.append(ToolRecord(tool_id=tool_id, name=f"fn_{t:03d}", description=description))
        for i in range(queries_per_tool):
            words = rng.choice(vocab, size=words_per_query, replace=True)
            split = "test" if i >= queries_per_tool - test_per_tool else "train"
            queries.append(QueryRecord(
                query_id=f"q_{t:03d}_{i:02d}",
                text=" ".join(words),
                tools=[tool_id],
                split=split,
            ))
    return Corpus.from_records(tools, queries)


def make_overlapping_corpus(n_tools: int = 100, n_queries: int = 1500, m_min: int = 2, m_max: int = 5,
                            own_words: int = 6, shared_words: int = 40, test_fraction: float = 0.2,
                            seed: int = 0) -> Corpus:
    """
    Each query needs 2-5 tools. A query mixes two private words per selected
    tool with a few words from a vocabulary shared by all tools, and each tool
    also borrows some shared words, so tools overlap in feature space.
    """
    rng = np.random.default_rng(seed)
    taken: Set[str] = set()
    common = _random_words(rng, shared_words, taken)
    vocab = []
    tools = []
    for t in range(n_tools):
        private = _random_words(rng, own_words, taken)
        borrowed = [common[int(i)] for i in rng.choice(shared_words, size=3, replace=False)]
        vocab.append(private + borrowed)
        tools.append(ToolRecord(
            tool_id=f"tool_{t:03d}",
            name=f"fn_{t:03d}",
            description=" ".join(private[:2] + _random_words(rng, 4, taken)),
        ))

    n_test = int(round(test_fraction * n_queries))
    queries = []
    for i in range(n_queries):
        m = int(rng.integers(m_min, m_max + 1))
        picked = sorted(int(t) for t in rng.choice(n_tools, size=m, replace=False))
        words: List[str] = []
        for t in picked:
            words.extend(rng.choice(vocab[t], size=2, replace=False))
        words.extend(rng.choice(common, size=2, replace=False))
        rng.shuffle(words)
        queries.append(QueryRecord(
            query_id=f"q_{i:05d}",
            text=" ".join(words),
            tools=[f"tool_{t:03d}" for t in picked],
            split="test" if i >= n_queries - n_test else "train",
        ))
    return Corpus.from_records(tools, queries)
