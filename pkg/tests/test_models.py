"""Tests for toolsift models module"""
import pytest
from pydantic import ValidationError

from toolsift.errors import DuplicateId, UnknownToolRef
from toolsift.models import (
    Candidate, Corpus, DatagenConfig, EvalConfig, FeaturizerConfig, PipelineConfig, QueryRecord,
    RefinerConfig, RetrievalResult, ToolRecord, STAGE1_METHODS,
)


def test_constants():
    """Stage-1 methods cover the three first-stage retrievers"""
    assert set(STAGE1_METHODS) == {"tool2vec", "description", "mlc"}


class TestRecords:
    """Tests for tool and query records"""

    def test_description_text(self):
        tool = ToolRecord(tool_id="t", name="get_weather", description="Weather now")
        assert tool.description_text == "get_weather: Weather now"

    def test_description_text_empty(self):
        assert ToolRecord(tool_id="t", name="", description="").description_text == ""

    def test_extra_fields_survive_dump(self):
        tool = ToolRecord(tool_id="t", name="n", category="io")
        assert tool.model_dump()["category"] == "io"

    def test_query_requires_tools(self):
        with pytest.raises(ValidationError):
            QueryRecord(query_id="q", text="hello", tools=[], split="train")

    def test_query_rejects_duplicate_tools(self):
        with pytest.raises(ValidationError):
            QueryRecord(query_id="q", text="hello", tools=["a", "a"], split="train")

    def test_query_rejects_unknown_split(self):
        with pytest.raises(ValidationError):
            QueryRecord(query_id="q", text="hello", tools=["a"], split="holdout")

    def test_query_requires_split(self):
        with pytest.raises(ValidationError):
            QueryRecord(query_id="q", text="hello", tools=["a"])


class TestCorpus:
    """Tests for Corpus construction"""

    def test_from_records(self, tiny_corpus):
        assert tiny_corpus.n_tools == 4
        assert tiny_corpus.tool_ids == ["weather", "email", "calendar", "unused"]
        assert [q.query_id for q in tiny_corpus.queries_in(["test"])] == ["q6"]

    def test_duplicate_tool(self):
        tools = [ToolRecord(tool_id="a", name="a"), ToolRecord(tool_id="a", name="b")]
        with pytest.raises(DuplicateId):
            Corpus.from_records(tools, [])

    def test_duplicate_query(self):
        tools = [ToolRecord(tool_id="a", name="a")]
        queries = [QueryRecord(query_id="q", text="x", tools=["a"], split="train")] * 2
        with pytest.raises(DuplicateId):
            Corpus.from_records(tools, queries)

    def test_unknown_tool_ref(self):
        with pytest.raises(UnknownToolRef) as excinfo:
            Corpus.from_records([ToolRecord(tool_id="a", name="a")],
                                [QueryRecord(query_id="q", text="x", tools=["b"], split="train")])
        assert excinfo.value.tool_id == "b"


class TestConfigs:
    """Tests for configuration validation"""

    def test_k_must_not_exceed_n(self):
        with pytest.raises(ValidationError):
            PipelineConfig(N=3, K=5)
        assert PipelineConfig(N=5, K=5).K == 5

    def test_ngram_range(self):
        with pytest.raises(ValidationError):
            FeaturizerConfig(ngram_min=5, ngram_max=3)

    def test_eval_ks_strictly_increasing(self):
        with pytest.raises(ValidationError):
            EvalConfig(ks=[5, 3])
        with pytest.raises(ValidationError):
            EvalConfig(ks=[])

    def test_refiner_hidden_positive(self):
        with pytest.raises(ValidationError):
            RefinerConfig(hidden=(4, 0))

    def test_datagen_selection_range(self):
        with pytest.raises(ValidationError):
            DatagenConfig(t_pool=3, m_min=2, m_max=5)


class TestRetrievalResult:
    def test_scores_must_be_non_increasing(self):
        with pytest.raises(ValidationError):
            RetrievalResult(candidates=[Candidate(tool_id="a", score=0.1), Candidate(tool_id="b", score=0.9)])

    def test_candidates_distinct(self):
        with pytest.raises(ValidationError):
            RetrievalResult(candidates=[Candidate(tool_id="a", score=0.5), Candidate(tool_id="a", score=0.4)])

    def test_tool_ids(self):
        result = RetrievalResult(candidates=[Candidate(tool_id="a", score=0.5), Candidate(tool_id="b", score=0.5)])
        assert result.tool_ids == ["a", "b"]
