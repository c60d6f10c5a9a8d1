"""Tests for toolsift LLM module"""
import json
import pytest
from unittest.mock import MagicMock, patch

from toolsift.errors import LlmTransportError
from toolsift.llm import (
    ClaudeChatClient, GeminiChatClient, LLMProvider, LlmSettings, MockLlmClient, OpenAIChatClient,
    create_client, parse_provider, settings_from_env,
)

pytestmark = pytest.mark.llm


class TestSettings:
    """Tests for provider settings resolution"""

    def test_parse_provider(self):
        assert parse_provider("Claude") == LLMProvider.CLAUDE
        assert parse_provider(None) == LLMProvider.OPENAI
        with pytest.raises(ValueError):
            parse_provider("llama")

    def test_env_fallback(self, clean_llm_env, monkeypatch):
        monkeypatch.setenv("TOOLSIFT_LLM_PROVIDER", "gemini")
        monkeypatch.setenv("TOOLSIFT_LLM_MODEL", "gemini-test")
        monkeypatch.setenv("TOOLSIFT_LLM_TIMEOUT", "5")
        settings = settings_from_env()
        assert settings.provider == LLMProvider.GEMINI
        assert settings.resolved_model == "gemini-test"
        assert settings.timeout == 5.0
        assert settings.resolved_key_env == "GEMINI_API_KEY"

    def test_explicit_wins(self, clean_llm_env, monkeypatch):
        monkeypatch.setenv("TOOLSIFT_LLM_PROVIDER", "gemini")
        settings = settings_from_env(provider="openai", endpoint="http://localhost:8000/v1",
                                     api_key_env="LOCAL_KEY")
        assert settings.provider == LLMProvider.OPENAI
        assert settings.endpoint == "http://localhost:8000/v1"
        assert settings.resolved_key_env == "LOCAL_KEY"


class TestMockClient:
    def test_match_and_default(self):
        client = MockLlmClient([("polish", "POLISHED"), ("", "ANY")])
        assert client.complete("please polish this", "x") in {"POLISHED", "ANY"}
        assert client.complete("something else", "x") == "ANY"

    def test_choice_is_stable(self):
        client = MockLlmClient([("", "one"), ("", "two"), ("", "three")])
        first = [client.complete("sys", f"user {i}") for i in range(10)]
        second = [client.complete("sys", f"user {i}") for i in range(10)]
        assert first == second

    def test_no_match(self):
        with pytest.raises(LlmTransportError):
            MockLlmClient([("never", "x")]).complete("sys", "user")

    def test_from_file(self, write_jsonl_file):
        path = write_jsonl_file("fixture.jsonl", [{"match": "hello", "response": "hi"}])
        assert MockLlmClient.from_file(path).complete("say hello", "") == "hi"

    def test_from_file_requires_response(self, write_jsonl_file):
        path = write_jsonl_file("fixture.jsonl", [{"match": "hello"}])
        with pytest.raises(ValueError):
            MockLlmClient.from_file(path)


class TestProviderClients:
    """Provider clients with the SDKs mocked out"""

    def test_openai(self, mock_openai_api, monkeypatch):
        monkeypatch.setenv("OPENAI_API_KEY", "sk-test")
        client = OpenAIChatClient(LlmSettings(provider=LLMProvider.OPENAI, endpoint="http://local/v1"))
        assert client.complete("system", "user") == "test response"
        mock_openai_api.assert_called_once()
        assert mock_openai_api.call_args.kwargs["base_url"] == "http://local/v1"
        create = mock_openai_api.return_value.chat.completions.create
        messages = create.call_args.kwargs["messages"]
        assert messages[0] == {"role": "system", "content": "system"}
        assert create.call_args.kwargs["model"] == "gpt-4o-mini"

    def test_openai_failure_is_transport_error(self, mock_openai_api):
        mock_openai_api.return_value.chat.completions.create.side_effect = RuntimeError("boom")
        client = OpenAIChatClient(LlmSettings())
        with pytest.raises(LlmTransportError) as excinfo:
            client.complete("system", "user")
        assert excinfo.value.exit_code == 4

    def test_claude(self, monkeypatch):
        monkeypatch.setenv("ANTHROPIC_API_KEY", "key")
        with patch("toolsift.llm.Anthropic") as mock_anthropic:
            block = MagicMock()
            block.text = " claude says hi "
            mock_anthropic.return_value.messages.create.return_value.content = [block]
            client = ClaudeChatClient(LlmSettings(provider=LLMProvider.CLAUDE))
            assert client.complete("system", "user") == "claude says hi"
            kwargs = mock_anthropic.return_value.messages.create.call_args.kwargs
            assert kwargs["system"] == "system"

    def test_gemini_needs_key(self, monkeypatch):
        monkeypatch.delenv("GEMINI_API_KEY", raising=False)
        with patch("toolsift.llm.genai"):
            with pytest.raises(LlmTransportError):
                GeminiChatClient(LlmSettings(provider=LLMProvider.GEMINI))

    def test_gemini(self, monkeypatch):
        monkeypatch.setenv("GEMINI_API_KEY", "key")
        with patch("toolsift.llm.genai") as mock_genai:
            mock_genai.GenerativeModel.return_value.generate_content.return_value.text = "gemini reply"
            client = GeminiChatClient(LlmSettings(provider=LLMProvider.GEMINI))
            assert client.complete("system", "user") == "gemini reply"
            mock_genai.configure.assert_called_once_with(api_key="key")


class TestCreateClient:
    def test_mock_requires_fixture(self):
        with pytest.raises(ValueError):
            create_client(LlmSettings(provider=LLMProvider.MOCK))

    def test_mock(self, write_jsonl_file):
        path = write_jsonl_file("fixture.jsonl", [{"response": "ok"}])
        client = create_client(LlmSettings(provider=LLMProvider.MOCK, fixture=path))
        assert isinstance(client, MockLlmClient)

    def test_openai(self, mock_openai_api):
        assert isinstance(create_client(LlmSettings()), OpenAIChatClient)
