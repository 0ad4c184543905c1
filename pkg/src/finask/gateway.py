"""Chat-completion gateway: one interface over remote providers and a
deterministic scripted provider for offline runs.

The scripted provider is driven by an ordered rule list (YAML, see
docs/script-format.md): each rule has a matcher evaluated against the
concatenated prompt text and an ordered list of responses consumed one
per match.  First matching rule wins; when its responses run out the
last one repeats, which keeps "always answer No" style scripts short.
"""

from __future__ import annotations

import re
import threading
import time
from dataclasses import dataclass, field
from typing import Callable, Optional

import httpx
import yaml

DEFAULT_TEMPERATURE = 0.0
DEFAULT_MAX_TOKENS = 2048
DEFAULT_RETRIES = 2
DEFAULT_TIMEOUT = 30.0


class GatewayError(RuntimeError):
    pass


class NoScriptMatch(GatewayError):
    """No scripted rule matched the prompt."""


class ProviderRejected(GatewayError):
    """Authentication / rate-limit style rejection; not retryable."""


class RetriesExhausted(GatewayError):
    def __init__(self, attempts: int, cause: Exception):
        super().__init__(f"gave up after {attempts} attempts: {cause}")
        self.cause = cause


@dataclass
class Decoding:
    temperature: float = DEFAULT_TEMPERATURE
    max_tokens: int = DEFAULT_MAX_TOKENS


@dataclass
class PromptBundle:
    system_text: str
    user_turns: list[str]
    decoding: Decoding = field(default_factory=Decoding)

    def concatenated(self) -> str:
        parts = [self.system_text] if self.system_text else []
        parts.extend(self.user_turns)
        return "\n".join(parts)

    def nonempty(self) -> bool:
        return bool(self.system_text.strip() or any(t.strip() for t in self.user_turns))


@dataclass
class ModelReply:
    text: str
    provider_id: str
    latency: float
    token_usage: dict[str, int]

    def to_json(self) -> dict:
        return {"text": self.text, "provider_id": self.provider_id,
                "latency": self.latency, "token_usage": dict(self.token_usage)}


@dataclass
class ScriptRule:
    matcher: str
    responses: list[str]
    regex: bool = False
    _cursor: int = field(default=0, repr=False)

    def matches(self, prompt: str) -> bool:
        if self.regex:
            return re.search(self.matcher, prompt) is not None
        return self.matcher in prompt

    def next_response(self) -> str:
        # past the end, the final response repeats
        idx = min(self._cursor, len(self.responses) - 1)
        self._cursor += 1
        return self.responses[idx]


class ScriptedProvider:
    """Deterministic provider: ordered rules, first match wins."""

    provider_id = "scripted"

    def __init__(self, rules: list[ScriptRule]):
        self.rules = rules
        self._lock = threading.Lock()

    @classmethod
    def from_file(cls, path: str) -> "ScriptedProvider":
        with open(path, encoding="utf-8") as fh:
            doc = yaml.safe_load(fh) or []
        return cls.from_config(doc)

    @classmethod
    def from_config(cls, doc) -> "ScriptedProvider":
        if not isinstance(doc, list):
            raise ValueError("script file must be a list of rules")
        rules = []
        for i, item in enumerate(doc):
            if "match" not in item or "responses" not in item:
                raise ValueError(f"rule {i} needs 'match' and 'responses'")
            responses = [str(r) for r in item["responses"]]
            if not responses:
                raise ValueError(f"rule {i} has no responses")
            rules.append(ScriptRule(str(item["match"]), responses,
                                    regex=bool(item.get("regex", False))))
        return cls(rules)

    def complete(self, bundle: PromptBundle) -> str:
        prompt = bundle.concatenated()
        with self._lock:
            for rule in self.rules:
                if rule.matches(prompt):
                    return rule.next_response()
        raise NoScriptMatch(f"no scripted rule matches prompt starting "
                            f"{prompt.strip()[:80]!r}")

    def reset(self) -> None:
        with self._lock:
            for rule in self.rules:
                rule._cursor = 0


class HttpChatProvider:
    """OpenAI-style chat-completions client."""

    def __init__(self, base_url: str, model: str, api_key: str = "",
                 timeout: float = DEFAULT_TIMEOUT, client: Optional[httpx.Client] = None):
        self.base_url = base_url.rstrip("/")
        self.model = model
        self.api_key = api_key
        self.provider_id = f"http:{model}"
        self._client = client or httpx.Client(timeout=timeout)

    def complete(self, bundle: PromptBundle) -> str:
        messages = []
        if bundle.system_text:
            messages.append({"role": "system", "content": bundle.system_text})
        for turn in bundle.user_turns:
            messages.append({"role": "user", "content": turn})
        headers = {}
        if self.api_key:
            headers["Authorization"] = f"Bearer {self.api_key}"
        resp = self._client.post(
            f"{self.base_url}/chat/completions",
            json={"model": self.model, "messages": messages,
                  "temperature": bundle.decoding.temperature,
                  "max_tokens": bundle.decoding.max_tokens},
            headers=headers)
        if resp.status_code in (401, 403, 429):
            raise ProviderRejected(f"{self.provider_id}: HTTP {resp.status_code}: {resp.text[:200]}")
        resp.raise_for_status()
        payload = resp.json()
        return payload["choices"][0]["message"]["content"]


class Gateway:
    """Retry/timing wrapper around a provider. ``on_reply`` observers let a
    pipeline trace account for every completion issued on its behalf."""

    def __init__(self, provider, retries: int = DEFAULT_RETRIES,
                 backoff: float = 0.5, sleep: Callable[[float], None] = time.sleep):
        self.provider = provider
        self.retries = retries
        self.backoff = backoff
        self._sleep = sleep

    def complete(self, bundle: PromptBundle,
                 on_reply: Optional[Callable[[ModelReply], None]] = None) -> ModelReply:
        if not bundle.nonempty():
            raise ValueError("prompt bundle is empty")
        attempts = 0
        last_exc: Optional[Exception] = None
        while attempts <= self.retries:
            started = time.monotonic()
            try:
                text = self.provider.complete(bundle)
            except (NoScriptMatch, ProviderRejected):
                raise
            except httpx.HTTPError as exc:
                last_exc = exc
                attempts += 1
                if attempts <= self.retries:
                    self._sleep(self.backoff * (2 ** (attempts - 1)))
                continue
            latency = time.monotonic() - started
            prompt_chars = len(bundle.concatenated())
            reply = ModelReply(
                text=text,
                provider_id=getattr(self.provider, "provider_id", "unknown"),
                latency=latency,
                # crude char/4 estimate; remote providers may overwrite
                token_usage={"prompt": prompt_chars // 4, "completion": len(text) // 4},
            )
            if on_reply is not None:
                on_reply(reply)
            return reply
        raise RetriesExhausted(attempts, last_exc)
