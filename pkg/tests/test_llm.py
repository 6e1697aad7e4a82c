import json
import threading

import httpx
import pytest
from hypothesis import given
from hypothesis import strategies as st

from ektc.llm import (BadRequest, BudgetExceeded, ChatClient, ChatParams, ChatRequest, EndpointProfile,
                      MockLLM, Rule, TransportError, ask)


def ok(text="ok", tokens=10):
    return httpx.Response(200, json={"choices": [{"message": {"role": "assistant", "content": text}}],
                                     "usage": {"total_tokens": tokens}})


def client(handler, **profile):
    sleeps = []
    c = ChatClient(EndpointProfile(url="http://llm.test/v1", model="m", **profile),
                   client=httpx.Client(transport=httpx.MockTransport(handler)), sleep=sleeps.append)
    return c, sleeps


class TestMock:
    def test_scripted(self):
        assert ask(MockLLM([Rule("yes")]), "anything") == "yes"

    def test_strict_unmatched(self):
        with pytest.raises(BadRequest):
            ask(MockLLM([Rule("yes", ("needle",))], strict=True), "haystack")

    def test_lenient_default(self):
        assert ask(MockLLM([], strict=False, default="meh"), "x") == "meh"

    def test_deterministic_at_zero_temperature(self):
        m = MockLLM([Rule("a", ("cat",)), Rule("b")])
        assert ask(m, "the cat", temperature=0) == ask(m, "the cat", temperature=0) == "a"

    def test_sequence(self):
        m = MockLLM.sequence(["one", "two"])
        assert [ask(m, "x"), ask(m, "x")] == ["one", "two"]

    def test_records_verbatim(self):
        m = MockLLM([Rule("r")])
        ask(m, "exact prompt\nwith lines", system="sys")
        assert m.requests[0].messages == (("system", "sys"), ("user", "exact prompt\nwith lines"))

    def test_from_file(self, tmp_path):
        p = tmp_path / "s.json"
        p.write_text(json.dumps({"rules": [{"contains": "hi", "reply": "hello"}, {"position": 1, "reply": "2nd"}],
                                 "strict": False, "default": "?"}))
        m = MockLLM.from_file(p)
        assert [ask(m, "hi"), ask(m, "zzz"), ask(m, "zzz")] == ["hello", "2nd", "?"]

    def test_thread_safe_log(self):
        m = MockLLM([Rule("r")])
        threads = [threading.Thread(target=lambda: [ask(m, "x") for _ in range(50)]) for _ in range(8)]
        for t in threads:
            t.start()
        for t in threads:
            t.join()
        assert len(m.requests) == 400


class TestRequest:
    def test_roles(self):
        with pytest.raises(ValueError):
            ChatRequest((("function_call", "x"),))
        with pytest.raises(ValueError):
            ChatRequest(())
        with pytest.raises(ValueError):
            ChatParams(temperature=-1)

    def test_wire(self):
        req = ChatRequest.of("hi", system="s", params=ChatParams(0.0, 64, ("\nUSER:",)))
        assert req.to_wire("m") == {"model": "m", "messages": [{"role": "system", "content": "s"},
                                                               {"role": "user", "content": "hi"}],
                                    "temperature": 0.0, "max_tokens": 64, "stop": ["\nUSER:"]}


class TestClient:
    def test_wire_and_auth(self):
        seen = []

        def handler(request):
            seen.append(request)
            return ok("hello")

        c, _ = client(handler, key="sekret")
        assert ask(c, "hi") == "hello"
        assert str(seen[0].url) == "http://llm.test/v1/chat/completions"
        assert seen[0].headers["authorization"] == "Bearer sekret"
        assert json.loads(seen[0].content)["messages"] == [{"role": "user", "content": "hi"}]

    def test_retry_then_success(self):
        replies = iter([httpx.Response(503), httpx.Response(429), ok("fine")])
        c, sleeps = client(lambda r: next(replies), max_retries=3, backoff=0.5)
        assert ask(c, "x") == "fine"
        assert sleeps == [0.5, 1.0]

    def test_gives_up_after_budget(self):
        c, sleeps = client(lambda r: httpx.Response(500), max_retries=2, backoff=1.0)
        with pytest.raises(TransportError):
            ask(c, "x")
        assert c.attempts == 3
        assert sleeps == [1.0, 2.0]

    def test_transport_errors_retried(self):
        def handler(request):
            raise httpx.ConnectError("refused")

        c, _ = client(handler, max_retries=1)
        with pytest.raises(TransportError):
            ask(c, "x")
        assert c.attempts == 2

    def test_bad_request_not_retried(self):
        c, _ = client(lambda r: httpx.Response(400, json={"error": "bad"}), max_retries=5)
        with pytest.raises(BadRequest):
            ask(c, "x")
        assert c.attempts == 1

    def test_request_quota(self):
        c, _ = client(lambda r: ok(), max_requests=2)
        ask(c, "a")
        ask(c, "b")
        with pytest.raises(BudgetExceeded):
            ask(c, "c")

    def test_token_quota(self):
        c, _ = client(lambda r: ok(tokens=60), max_total_tokens=100)
        ask(c, "a")
        ask(c, "b")
        with pytest.raises(BudgetExceeded):
            ask(c, "c")

    def test_env_override(self, monkeypatch):
        monkeypatch.setenv("EKTC_LLM_URL", "http://env.test")
        monkeypatch.setenv("EKTC_LLM_KEY", "k2")
        p = EndpointProfile(url="http://cfg.test", key="k1").with_env()
        assert (p.url, p.key) == ("http://env.test", "k2")


@given(st.integers(0, 5), st.integers(0, 8))
def test_attempts_never_exceed_budget(retries, failures):
    replies = iter([httpx.Response(502)] * failures + [ok()])
    c, _ = client(lambda r: next(replies), max_retries=retries)
    try:
        ask(c, "x")
        assert c.attempts == failures + 1
    except TransportError:
        assert failures > retries
    assert c.attempts <= 1 + retries
