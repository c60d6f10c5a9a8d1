#!/usr/bin/env python3
"""
toolsift LLM - Chat-completion clients used for dataset generation

Every client implements one call: given a system prompt and user content,
return a single text completion. The deterministic `MockLlmClient` replays
canned responses from a JSON Lines fixture; the provider clients talk to
OpenAI (or any OpenAI-compatible endpoint), Anthropic Claude and Google
Gemini.
"""
import hashlib
import os
from enum import Enum, auto
from typing import List, Optional, Protocol, Tuple

import structlog
from pydantic import BaseModel, Field

# Import LLM providers
from openai import OpenAI
import google.generativeai as genai
from anthropic import Anthropic

from .errors import LlmTransportError
from .storage import iter_jsonl

logger = structlog.get_logger(__name__)


# -------------------------------
# Configuration
# -------------------------------
class LLMProvider(Enum):
    """Supported LLM providers"""
    OPENAI = auto()
    GEMINI = auto()
    CLAUDE = auto()
    MOCK = auto()


DEFAULT_PROVIDER = LLMProvider.OPENAI
DEFAULT_OPENAI_MODEL = "gpt-4o-mini"
DEFAULT_GEMINI_MODEL = "gemini-2.0-flash"
DEFAULT_CLAUDE_MODEL = "claude-3-7-sonnet-20250219"
DEFAULT_TIMEOUT = 60.0

DEFAULT_MODELS = {
    LLMProvider.OPENAI: DEFAULT_OPENAI_MODEL,
    LLMProvider.GEMINI: DEFAULT_GEMINI_MODEL,
    LLMProvider.CLAUDE: DEFAULT_CLAUDE_MODEL,
    LLMProvider.MOCK: "mock",
}

DEFAULT_KEY_ENV = {
    LLMProvider.OPENAI: "OPENAI_API_KEY",
    LLMProvider.GEMINI: "GEMINI_API_KEY",
    LLMProvider.CLAUDE: "ANTHROPIC_API_KEY",
    LLMProvider.MOCK: "",
}


class LlmSettings(BaseModel):
    """Resolved client settings (CLI flags over TOOLSIFT_LLM_* environment variables)."""
    provider: LLMProvider = DEFAULT_PROVIDER
    model: Optional[str] = None
    endpoint: Optional[str] = None
    api_key_env: Optional[str] = None
    timeout: float = Field(default=DEFAULT_TIMEOUT, gt=0)
    fixture: Optional[str] = None

    @property
    def resolved_model(self) -> str:
        return self.model or DEFAULT_MODELS[self.provider]

    @property
    def resolved_key_env(self) -> str:
        return self.api_key_env or DEFAULT_KEY_ENV[self.provider]


def parse_provider(name: Optional[str]) -> LLMProvider:
    """Map a provider name (any case) to LLMProvider; empty means the default."""
    if not name:
        return DEFAULT_PROVIDER
    try:
        return LLMProvider[name.strip().upper()]
    except KeyError:
        raise ValueError(f"Unknown LLM provider {name!r}; expected openai, gemini, claude or mock")


def settings_from_env(provider: Optional[str] = None, model: Optional[str] = None,
                      endpoint: Optional[str] = None, api_key_env: Optional[str] = None,
                      timeout: Optional[float] = None, fixture: Optional[str] = None) -> LlmSettings:
    """Explicit arguments win; unset ones fall back to TOOLSIFT_LLM_* variables."""
    env_timeout = os.environ.get("TOOLSIFT_LLM_TIMEOUT")
    return LlmSettings(
        provider=parse_provider(provider or os.environ.get("TOOLSIFT_LLM_PROVIDER")),
        model=model or os.environ.get("TOOLSIFT_LLM_MODEL") or None,
        endpoint=endpoint or os.environ.get("TOOLSIFT_LLM_ENDPOINT") or None,
        api_key_env=api_key_env or os.environ.get("TOOLSIFT_LLM_API_KEY_ENV") or None,
        timeout=timeout if timeout is not None else float(env_timeout or DEFAULT_TIMEOUT),
        fixture=fixture,
    )


# -------------------------------
# Clients
# -------------------------------
class LlmClient(Protocol):
    def complete(self, system_prompt: str, user_content: str) -> str:
        ...


class MockLlmClient:
    """
    Replays fixture responses. An entry applies when its "match" key is a
    substring of system_prompt + "\\n" + user_content ("" matches anything);
    among several applicable entries the choice is fixed by a SHA-256 of the
    prompt, so replays do not depend on call order.
    """

    def __init__(self, entries: List[Tuple[str, str]]):
        self.entries = entries

    @classmethod
    def from_file(cls, path: str) -> "MockLlmClient":
        entries = []
        for line_no, obj in iter_jsonl(path):
            if "response" not in obj:
                raise ValueError(f"{path}:{line_no} lacks a response")
            entries.append((str(obj.get("match", "")), str(obj["response"])))
        return cls(entries)

    def complete(self, system_prompt: str, user_content: str) -> str:
        prompt = f"{system_prompt}\n{user_content}"
        matches = [response for key, response in self.entries if key in prompt]
        if not matches:
            raise LlmTransportError("Mock fixture has no response matching the prompt")
        digest = int(hashlib.sha256(prompt.encode("utf-8")).hexdigest(), 16)
        return matches[digest % len(matches)]


class OpenAIChatClient:
    """OpenAI chat completions; `endpoint` points it at any compatible server."""

    def __init__(self, settings: LlmSettings):
        self.settings = settings
        self.model = settings.resolved_model
        self._client = OpenAI(
            api_key=os.environ.get(settings.resolved_key_env) or "unset",
            base_url=settings.endpoint,
            timeout=settings.timeout,
        )

    def complete(self, system_prompt: str, user_content: str) -> str:
        try:
            response = self._client.chat.completions.create(
                model=self.model,
                messages=[
                    {"role": "system", "content": system_prompt},
                    {"role": "user", "content": user_content},
                ],
            )
            return (response.choices[0].message.content or "").strip()
        except Exception as e:
            raise LlmTransportError(f"OpenAI API call failed: {e}") from e


class ClaudeChatClient:
    def __init__(self, settings: LlmSettings):
        self.settings = settings
        self.model = settings.resolved_model
        self._client = Anthropic(
            api_key=os.environ.get(settings.resolved_key_env),
            timeout=settings.timeout,
        )

    def complete(self, system_prompt: str, user_content: str) -> str:
        try:
            response = self._client.messages.create(
                model=self.model,
                system=system_prompt,
                max_tokens=1024,
                messages=[{"role": "user", "content": user_content}],
            )
            return response.content[0].text.strip()
        except Exception as e:
            raise LlmTransportError(f"Claude API call failed: {e}") from e


class GeminiChatClient:
    def __init__(self, settings: LlmSettings):
        self.settings = settings
        self.model = settings.resolved_model
        api_key = os.environ.get(settings.resolved_key_env)
        if not api_key:
            raise LlmTransportError(
                f"No API key found for Gemini. Set {settings.resolved_key_env} environment variable."
            )
        genai.configure(api_key=api_key)

    def complete(self, system_prompt: str, user_content: str) -> str:
        try:
            # System role is not supported; combine the two parts
            model_obj = genai.GenerativeModel(model_name=self.model)
            response = model_obj.generate_content(
                f"{system_prompt}\n\n{user_content}",
                request_options={"timeout": self.settings.timeout},
            )
            return response.text.strip()
        except Exception as e:
            raise LlmTransportError(f"Gemini API call failed: {e}") from e


def create_client(settings: LlmSettings) -> LlmClient:
    """
    Build the client named by `settings.provider`.

    Raises:
        ValueError: The mock provider was chosen without a fixture file
        LlmTransportError: The provider could not be configured
    """
    logger.debug("llm_client", provider=settings.provider.name, model=settings.resolved_model,
                 endpoint=settings.endpoint)
    if settings.provider == LLMProvider.MOCK:
        if not settings.fixture:
            raise ValueError("The mock LLM provider needs a fixture file (--mock-fixture)")
        return MockLlmClient.from_file(settings.fixture)
    if settings.provider == LLMProvider.GEMINI:
        return GeminiChatClient(settings)
    if settings.provider == LLMProvider.CLAUDE:
        return ClaudeChatClient(settings)
    return OpenAIChatClient(settings)
