"""Chat-completion clients: a real HTTP backend and a scripted mock.

The HTTP client speaks the common chat-completions wire format (POST
``{base_url}/chat/completions`` with model/messages/temperature, bearer
token from an environment variable), retries transient transport errors
with backoff, and can persist full request/response transcripts for audit.
The mock replays a queue of canned responses (or a response factory) and
makes engine runs fully deterministic.
"""

from __future__ import annotations

import json
import os
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import requests


class LlmError(RuntimeError):
    pass


@dataclass(frozen=True)
class ChatResponse:
    text: str
    prompt_tokens: int = 0
    completion_tokens: int = 0


class LlmClient:
    def chat(self, messages: Sequence[dict], temperature: float) -> ChatResponse:
        raise NotImplementedError


@dataclass
class MockChatClient(LlmClient):
    """Deterministic client: canned responses in order, or a factory of (call index, messages) -> text."""

    responses: Sequence[str] = ()
    factory: Callable[[int, Sequence[dict]], str] | None = None
    transcript: list = field(default_factory=list)
    calls: int = 0

    def chat(self, messages, temperature):
        index = self.calls
        self.calls += 1
        if self.factory is not None:
            text = self.factory(index, messages)
        elif index < len(self.responses):
            text = self.responses[index]
        else:
            raise LlmError(f"mock client exhausted after {index} responses")
        self.transcript.append({"request": list(messages), "response": text})
        return ChatResponse(text=text)


@dataclass
class HttpChatClient(LlmClient):
    base_url: str
    model: str
    token_env: str = "OPENAI_API_KEY"
    timeout: float = 60.0
    max_retries: int = 3
    transcript_path: str | None = None

    def chat(self, messages, temperature):
        url = self.base_url.rstrip("/") + "/chat/completions"
        headers = {"Content-Type": "application/json"}
        token = os.environ.get(self.token_env, "").strip()
        if token:
            headers["Authorization"] = f"Bearer {token}"
        payload = {"model": self.model, "messages": list(messages), "temperature": temperature}
        last_error: Exception | None = None
        for attempt in range(self.max_retries):
            try:
                response = requests.post(url, json=payload, headers=headers, timeout=self.timeout)
                if response.status_code in (429,) or response.status_code >= 500:
                    raise LlmError(f"transient HTTP {response.status_code}: {response.text[:200]}")
                response.raise_for_status()
                body = response.json()
                text = body["choices"][0]["message"]["content"]
                usage = body.get("usage", {})
                self._record(payload, body)
                return ChatResponse(
                    text=text,
                    prompt_tokens=int(usage.get("prompt_tokens", 0)),
                    completion_tokens=int(usage.get("completion_tokens", 0)),
                )
            except (requests.RequestException, LlmError, KeyError, ValueError) as exc:
                last_error = exc
                if attempt + 1 < self.max_retries:
                    time.sleep(2 ** attempt)
        raise LlmError(f"chat request failed after {self.max_retries} attempts: {last_error}")

    def _record(self, request: dict, response: dict) -> None:
        if not self.transcript_path:
            return
        path = Path(self.transcript_path)
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, "a", encoding="utf-8") as fh:
            fh.write(json.dumps({"request": request, "response": response}) + "\n")
