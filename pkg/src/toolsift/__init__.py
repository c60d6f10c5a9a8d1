"""🔎 toolsift - Two-stage tool retrieval with usage-driven embeddings

This package embeds tools by the queries that use them (Tool2Vec), prunes a
large tool library to a short candidate list with a fast first stage, and
re-ranks that list with a small learned refiner.
"""

__version__ = "0.1.0"

# Public API
from .models import (
    ToolRecord, QueryRecord, Corpus, PipelineConfig, RetrievalResult, Candidate
)
from .corpus import load_corpus, save_corpus
from .embed import EmbeddingMatrix, HashingFeaturizer, build_tool2vec, embed_queries
from .retrieve import cosine_topn, train_mlc
from .refine import load_artifacts, retrieve_two_stage, refine_external, train_refiner
from .evaluation import evaluate, recall_at_k, ndcg_at_k
