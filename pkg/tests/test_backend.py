import json

import httpx
import pytest

from radlabel.backend import (
    AuthenticationError,
    BackendError,
    ChatCompletionsBackend,
    GenerationParams,
    MockBackend,
)
from radlabel.promptgen import PromptBundle


def bundle(text, shots=()):
    return PromptBundle("instruction", tuple(shots), text)


def test_default_generation_params():
    p = GenerationParams()
    assert (p.temperature, p.min_p, p.seed, p.stop, p.max_sequence_tokens) == (0.5, 0.1, 42, "}", 2048)
    assert p.token_budget(0) == 2048
    assert p.token_budget(3) == 4096
    with pytest.raises(ValueError):
        GenerationParams(min_p=1.5)


def test_mock_registered_answer():
    mock = MockBackend({"r1 text": '{"pneumonia": 1}'})
    ans = mock.complete(bundle("r1 text"), GenerationParams())
    assert ans.text == '{"pneumonia": 1}'
    assert ans.finished_by == "stop"


def test_stop_at_first_brace():
    mock = MockBackend(default='{"a": 1} extra trailing prose {"a": 2}')
    ans = mock.complete(bundle("x"), GenerationParams())
    assert ans.text == '{"a": 1}'


def test_no_stop_keeps_full_text():
    mock = MockBackend(default="Ingen tegn på {pneumoni}. Slut.")
    ans = mock.complete(bundle("x"), GenerationParams().without_stop())
    assert ans.text == "Ingen tegn på {pneumoni}. Slut."


def test_mock_failure_becomes_error_answer():
    mock = MockBackend({"bad": BackendError("down")})
    ans = mock.complete(bundle("bad"), GenerationParams())
    assert ans.finished_by == "error" and ans.text == "" and "down" in ans.error


def test_batch_order_and_bound():
    mock = MockBackend(responder=lambda b: f'{{"id": "{b.target_text}"}}', delay=0.002)
    bundles = [bundle(f"r{i}") for i in range(100)]
    out = mock.complete_batch(bundles, GenerationParams(), max_in_flight=64)
    assert [a.text for a in out] == [f'{{"id": "r{i}"}}' for i in range(100)]
    assert mock.max_seen_in_flight <= 64
    assert mock.max_seen_in_flight > 1


@pytest.mark.parametrize("limit", [1, 3, 7])
def test_in_flight_never_exceeds_limit(limit):
    mock = MockBackend(default='{"a": 1}', delay=0.003)
    mock.complete_batch([bundle(str(i)) for i in range(30)], GenerationParams(), max_in_flight=limit)
    assert mock.max_seen_in_flight <= limit


def test_serial_equals_parallel():
    answers = {f"r{i}": f'{{"a": {i % 3 - 1}}} tail' for i in range(20)}
    bundles = [bundle(f"r{i}") for i in range(20)]
    serial = MockBackend(answers).complete_batch(bundles, GenerationParams(), max_in_flight=1)
    parallel = MockBackend(answers).complete_batch(bundles, GenerationParams(), max_in_flight=64)
    assert [(a.text, a.finished_by) for a in serial] == [(a.text, a.finished_by) for a in parallel]


def test_batch_isolates_failures():
    answers = {f"r{i}": '{"a": 1}' for i in range(10)}
    answers["r4"] = BackendError("boom")
    out = MockBackend(answers).complete_batch([bundle(f"r{i}") for i in range(10)], GenerationParams())
    assert [a.finished_by for a in out].count("error") == 1
    assert out[4].finished_by == "error"


def test_empty_batch_rejected():
    with pytest.raises(ValueError):
        MockBackend().complete_batch([], GenerationParams())


class Server:
    """Scripted chat-completions endpoint for httpx.MockTransport."""

    def __init__(self, *responses):
        self.responses = list(responses)
        self.bodies = []

    def __call__(self, request: httpx.Request) -> httpx.Response:
        self.bodies.append(json.loads(request.content))
        status, payload = self.responses.pop(0)
        if isinstance(payload, Exception):
            raise payload
        return httpx.Response(status, json=payload) if isinstance(payload, dict) else httpx.Response(status, text=payload)


def ok(content, reason="stop", tokens=7):
    return 200, {
        "choices": [{"message": {"role": "assistant", "content": content}, "finish_reason": reason}],
        "usage": {"completion_tokens": tokens},
    }


def client(server, **kw):
    sleeps = []
    backend = ChatCompletionsBackend(
        "http://llm.local/v1", "model-x", api_key="k", transport=httpx.MockTransport(server), sleep=sleeps.append, **kw
    )
    return backend, sleeps


def test_http_payload_and_stop_reappend():
    server = Server(ok('{"pneumonia": 1'))
    backend, _ = client(server)
    shots = [("shot report", '{"pneumonia": -1}')]
    ans = backend.complete(bundle("target", shots), GenerationParams())
    assert ans.text == '{"pneumonia": 1}'
    assert ans.finished_by == "stop" and ans.completion_tokens == 7
    body = server.bodies[0]
    assert body["model"] == "model-x"
    assert body["temperature"] == 0.5 and body["min_p"] == 0.1 and body["seed"] == 42
    assert body["stop"] == ["}"] and body["max_tokens"] == 4096
    assert [m["role"] for m in body["messages"]] == ["system", "user", "assistant", "user"]


def test_http_retries_then_succeeds():
    server = Server((503, "busy"), (502, "bad"), ok('{"a": 1'))
    backend, sleeps = client(server)
    ans = backend.complete(bundle("t"), GenerationParams())
    assert ans.finished_by == "stop"
    assert sleeps == [1.0, 2.0]


def test_http_gives_up_after_three_attempts():
    server = Server((503, "busy"), (503, "busy"), (503, "busy"))
    backend, sleeps = client(server)
    ans = backend.complete(bundle("t"), GenerationParams())
    assert ans.finished_by == "error"
    assert len(server.bodies) == 3 and sleeps == [1.0, 2.0]


def test_http_transport_error_is_retried():
    server = Server((0, httpx.ConnectError("refused")), ok('{"a": 1'))
    backend, sleeps = client(server)
    assert backend.complete(bundle("t"), GenerationParams()).finished_by == "stop"
    assert sleeps == [1.0]


def test_http_auth_failure_raises():
    backend, _ = client(Server((401, "nope")))
    with pytest.raises(AuthenticationError):
        backend.complete(bundle("t"), GenerationParams())


def test_http_length_finish():
    backend, _ = client(Server(ok('{"a": 1, "b', reason="length")))
    ans = backend.complete(bundle("t"), GenerationParams())
    assert ans.finished_by == "length"


def test_http_min_p_fallback(caplog):
    server = Server((400, "unknown field min_p"), ok('{"a": 1'), ok('{"a": -1'))
    backend, _ = client(server)
    assert backend.complete(bundle("t"), GenerationParams()).text == '{"a": 1}'
    assert "min_p" in server.bodies[0] and "min_p" not in server.bodies[1]
    backend.complete(bundle("u"), GenerationParams())
    assert "min_p" not in server.bodies[2]
    assert "min_p" in caplog.text


def test_http_client_error_is_not_retried():
    server = Server((404, "no such model"))
    backend, sleeps = client(server)
    ans = backend.complete(bundle("t"), GenerationParams())
    assert ans.finished_by == "error" and sleeps == []
