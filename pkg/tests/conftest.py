"""Test configuration for toolsift tests"""
import json
import os
import pytest
from unittest.mock import patch

from toolsift.corpus import save_corpus
from toolsift.models import Corpus, FeaturizerConfig, QueryRecord, ToolRecord
from toolsift.synthetic import make_disjoint_corpus


@pytest.fixture
def tiny_corpus():
    """Four tools, six labeled queries across all three splits"""
    tools = [
        ToolRecord(tool_id="weather", name="get_weather", description="Current weather for a city"),
        ToolRecord(tool_id="email", name="send_email", description="Send an email message"),
        ToolRecord(tool_id="calendar", name="create_event", description="Add an event to the calendar"),
        ToolRecord(tool_id="unused", name="noop", description="Never used by any query"),
    ]
    queries = [
        QueryRecord(query_id="q1", text="what is the weather in paris", tools=["weather"], split="train"),
        QueryRecord(query_id="q2", text="email bob the weather report", tools=["weather", "email"], split="train"),
        QueryRecord(query_id="q3", text="book a meeting on friday", tools=["calendar"], split="train"),
        QueryRecord(query_id="q4", text="send an email to alice", tools=["email"], split="train"),
        QueryRecord(query_id="q5", text="schedule lunch and email the team", tools=["calendar", "email"],
                    split="val"),
        QueryRecord(query_id="q6", text="is it raining in rome", tools=["weather"], split="test"),
    ]
    return Corpus.from_records(tools, queries)


@pytest.fixture
def corpus_files(tmp_path, tiny_corpus):
    """Write tiny_corpus to tools.jsonl / queries.jsonl and return both paths"""
    tools_path = str(tmp_path / "tools.jsonl")
    queries_path = str(tmp_path / "queries.jsonl")
    save_corpus(tiny_corpus, tools_path, queries_path)
    return tools_path, queries_path


@pytest.fixture
def disjoint_corpus():
    """A small constructed corpus where every tool owns its query vocabulary"""
    return make_disjoint_corpus(n_tools=8, queries_per_tool=6, test_per_tool=2, seed=0)


@pytest.fixture
def small_featurizer_cfg():
    return FeaturizerConfig(dim=512)


@pytest.fixture
def write_jsonl_file(tmp_path):
    """Factory writing a list of objects (or raw strings) as a JSON Lines file"""
    def _write(name, rows):
        path = tmp_path / name
        with open(path, "w", encoding="utf-8") as f:
            for row in rows:
                f.write(row if isinstance(row, str) else json.dumps(row))
                f.write("\n")
        return str(path)
    return _write


@pytest.fixture
def mock_openai_api():
    """Mock OpenAI API calls for testing without actual API usage"""
    with patch('toolsift.llm.OpenAI') as mock_openai:
        mock_client = mock_openai.return_value
        mock_response = mock_client.chat.completions.create.return_value
        mock_response.choices[0].message.content = "test response"
        yield mock_openai


@pytest.fixture
def clean_llm_env(monkeypatch):
    """Remove TOOLSIFT_LLM_* variables so settings come from arguments only"""
    for name in list(os.environ):
        if name.startswith("TOOLSIFT_LLM_"):
            monkeypatch.delenv(name, raising=False)


@pytest.fixture(autouse=True)
def _reset_structlog():
    """Undo CLI logging configuration so later tests don't write to a closed captured stream"""
    import structlog
    yield
    structlog.reset_defaults()
