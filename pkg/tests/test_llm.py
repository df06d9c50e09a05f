import json
from types import SimpleNamespace

import pytest
import requests

from pbfair.evolve.llm import HttpChatClient, LlmError, MockChatClient


def response(status=200, content="ok", usage=None):
    body = {
        "choices": [{"message": {"content": content}}],
        "usage": usage or {"prompt_tokens": 7, "completion_tokens": 3},
    }

    class FakeResponse:
        status_code = status
        text = json.dumps(body)

        def json(self):
            return body

        def raise_for_status(self):
            if status >= 400:
                raise requests.HTTPError(f"{status}")

    return FakeResponse()


def test_mock_client_queue_and_exhaustion():
    client = MockChatClient(responses=["a", "b"])
    assert client.chat([{"role": "user", "content": "x"}], 1.0).text == "a"
    assert client.chat([], 1.0).text == "b"
    with pytest.raises(LlmError):
        client.chat([], 1.0)
    assert len(client.transcript) == 2


def test_http_client_success(monkeypatch, tmp_path):
    calls = []

    def fake_post(url, json=None, headers=None, timeout=None):
        calls.append((url, json, headers))
        return response(content="hello")

    monkeypatch.setattr(requests, "post", fake_post)
    monkeypatch.setenv("TEST_TOKEN", "secret")
    client = HttpChatClient(base_url="https://api.example/v1", model="m",
                            token_env="TEST_TOKEN",
                            transcript_path=str(tmp_path / "t.ndjson"))
    result = client.chat([{"role": "user", "content": "hi"}], 0.5)
    assert result.text == "hello"
    assert result.prompt_tokens == 7 and result.completion_tokens == 3
    url, payload, headers = calls[0]
    assert url == "https://api.example/v1/chat/completions"
    assert payload["temperature"] == 0.5 and payload["model"] == "m"
    assert headers["Authorization"] == "Bearer secret"
    transcript = (tmp_path / "t.ndjson").read_text().splitlines()
    assert len(transcript) == 1 and "hello" in transcript[0]


def test_http_client_retries_transient(monkeypatch):
    monkeypatch.setattr("time.sleep", lambda s: None)
    attempts = []

    def flaky_post(url, **kwargs):
        attempts.append(url)
        if len(attempts) < 3:
            return response(status=503)
        return response(content="finally")

    monkeypatch.setattr(requests, "post", flaky_post)
    client = HttpChatClient(base_url="http://x", model="m", max_retries=3)
    assert client.chat([], 1.0).text == "finally"
    assert len(attempts) == 3


def test_http_client_gives_up(monkeypatch):
    monkeypatch.setattr("time.sleep", lambda s: None)

    def always_down(url, **kwargs):
        raise requests.ConnectionError("refused")

    monkeypatch.setattr(requests, "post", always_down)
    client = HttpChatClient(base_url="http://x", model="m", max_retries=2)
    with pytest.raises(LlmError):
        client.chat([], 1.0)
