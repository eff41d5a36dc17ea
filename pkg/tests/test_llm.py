import json
import threading
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer

import pytest

from cradle.llm import (
    AuthError,
    ChatRequest,
    ChatResponse,
    Gateway,
    GatewayError,
    LiveBackend,
    MalformedResponse,
    RateLimited,
    ScriptExhausted,
    ScriptedBackend,
    complete,
    extract_code_blocks,
)


def req(text="hello", model="gpt-4.1", **kw):
    return ChatRequest(model=model, messages=(("user", text),), **kw)


# -- request/response invariants


def test_chat_request_validation():
    with pytest.raises(ValueError):
        ChatRequest(model="m", messages=())
    with pytest.raises(ValueError):
        ChatRequest(model="m", messages=(("robot", "hi"),))
    with pytest.raises(ValueError):
        ChatRequest(model="m", messages=(("assistant", "hi"), ("user", "x")))
    with pytest.raises(ValueError):
        req(temperature=3.0)
    with pytest.raises(ValueError):
        req(max_tokens=0)
    r = ChatRequest(model="m", messages=(("system", "s"), ("user", "a"),
                                         ("assistant", "b"), ("user", "c")))
    assert r.last_user_text() == "c"


def test_chat_response_rejects_negative_usage():
    with pytest.raises(ValueError):
        ChatResponse(text="x", prompt_tokens=-1)


# -- scripted backend


def test_scripted_matching_and_consumption():
    backend = ScriptedBackend([
        {"match": "plan", "reply": "the plan"},
        {"match": "*", "reply": "anything"},
    ])
    assert complete(req("give me a plan"), backend).text == "the plan"
    assert complete(req("give me a plan"), backend).text == "anything"
    with pytest.raises(ScriptExhausted):
        complete(req("more"), backend)


def test_scripted_from_file_ndjson(tmp_path):
    path = tmp_path / "script.jsonl"
    path.write_text('{"match": "*", "reply": "one"}\n\n{"match": "*", "reply": "two"}\n')
    backend = ScriptedBackend.from_file(path)
    assert backend.remaining == 2
    assert complete(req(), backend).text == "one"
    assert backend.remaining == 1


def test_scripted_rejects_malformed_entries():
    with pytest.raises(ValueError):
        ScriptedBackend([{"reply": "no match field"}])


# -- live backend against a local stub server


class _Script(BaseHTTPRequestHandler):
    responses = []  # list of (status, body-dict or raw str)
    seen = []

    def do_POST(self):
        length = int(self.headers["Content-Length"])
        body = json.loads(self.rfile.read(length))
        type(self).seen.append({
            "path": self.path,
            "auth": self.headers.get("Authorization"),
            "body": body,
        })
        status, payload = (type(self).responses.pop(0)
                           if type(self).responses else (200, _ok("fallback")))
        raw = payload if isinstance(payload, str) else json.dumps(payload)
        data = raw.encode()
        self.send_response(status)
        self.send_header("Content-Type", "application/json")
        self.send_header("Content-Length", str(len(data)))
        self.end_headers()
        self.wfile.write(data)

    def log_message(self, *args):
        pass


def _ok(text, usage=True):
    doc = {"choices": [{"message": {"role": "assistant", "content": text}}],
           "model": "stub-model"}
    if usage:
        doc["usage"] = {"prompt_tokens": 7, "completion_tokens": 3}
    return doc


@pytest.fixture
def stub_server():
    server = ThreadingHTTPServer(("127.0.0.1", 0), _Script)
    thread = threading.Thread(target=server.serve_forever, daemon=True)
    thread.start()
    _Script.responses = []
    _Script.seen = []
    yield f"http://127.0.0.1:{server.server_address[1]}/v1"
    server.shutdown()
    server.server_close()


def backend(url, **kw):
    kw.setdefault("api_key", "sk-test-123")
    kw.setdefault("backoff_base_s", 0.01)
    return LiveBackend(base_url=url, **kw)


def test_live_success_and_wire_format(stub_server):
    _Script.responses = [(200, _ok("pong"))]
    resp = complete(req("ping"), backend(stub_server))
    assert resp.text == "pong"
    assert resp.prompt_tokens == 7 and resp.completion_tokens == 3
    assert resp.model_echo == "stub-model"
    sent = _Script.seen[0]
    assert sent["path"] == "/v1/chat/completions"
    assert sent["auth"] == "Bearer sk-test-123"
    assert sent["body"]["temperature"] == 0.2
    assert sent["body"]["messages"] == [{"role": "user", "content": "ping"}]


def test_live_omits_temperature_when_none(stub_server):
    _Script.responses = [(200, _ok("x"))]
    complete(req("p", model="o4-mini", temperature=None), backend(stub_server))
    assert "temperature" not in _Script.seen[0]["body"]


def test_live_retries_5xx_then_succeeds(stub_server):
    _Script.responses = [(500, {"err": 1}), (503, {"err": 2}), (200, _ok("ok"))]
    resp = complete(req(), backend(stub_server, max_attempts=3))
    assert resp.text == "ok"
    assert len(_Script.seen) == 3


def test_live_rate_limited_after_exhaustion(stub_server):
    _Script.responses = [(429, {}), (429, {}), (429, {})]
    with pytest.raises(RateLimited):
        complete(req(), backend(stub_server, max_attempts=3))


def test_live_auth_errors_never_retry(stub_server):
    _Script.responses = [(401, {})]
    with pytest.raises(AuthError):
        complete(req(), backend(stub_server))
    assert len(_Script.seen) == 1

    with pytest.raises(AuthError):
        complete(req(), LiveBackend(base_url=stub_server, api_key=""))


def test_live_malformed_and_other_status(stub_server):
    _Script.responses = [(200, {"choices": []})]
    with pytest.raises(MalformedResponse):
        complete(req(), backend(stub_server))
    _Script.responses = [(418, {"teapot": True})]
    with pytest.raises(GatewayError):
        complete(req(), backend(stub_server))


def test_live_repr_masks_credential():
    shown = repr(LiveBackend(base_url="http://x", api_key="sk-secret-value"))
    assert "sk-secret-value" not in shown


def test_live_env_fallback(monkeypatch, stub_server):
    monkeypatch.setenv("CRADLE_API_KEY", "sk-from-env")
    monkeypatch.setenv("CRADLE_API_BASE", stub_server)
    _Script.responses = [(200, _ok("env"))]
    resp = complete(req(), LiveBackend())
    assert resp.text == "env"
    assert _Script.seen[0]["auth"] == "Bearer sk-from-env"


# -- gateway routing


def test_gateway_routing_and_temperature_denylist():
    sent = []

    class Probe:
        def send(self, request):
            sent.append(request)
            return ChatResponse(text="r", prompt_tokens=2, completion_tokens=1)

    gw = Gateway(Probe())
    gw.complete("reasoning", (("user", "plan it"),))
    gw.complete("completion", (("user", "write it"),))
    assert sent[0].model == "o4-mini"
    assert sent[0].temperature is None  # o4 prefix is deny-listed
    assert sent[1].model == "gpt-4.1"
    assert sent[1].temperature == 0.2
    assert gw.usage.calls == 2
    assert gw.usage.prompt_tokens == 4
    with pytest.raises(ValueError):
        gw.complete("unknown-label", (("user", "x"),))


def test_gateway_routing_override():
    class Probe:
        def send(self, request):
            return ChatResponse(text=request.model)

    gw = Gateway(Probe(), routing={"reasoning": "o3-pro"})
    assert gw.complete("reasoning", (("user", "x"),)).text == "o3-pro"
    assert gw.complete("completion", (("user", "x"),)).text == "gpt-4.1"


# -- code block extraction


def test_extract_code_blocks_tagged_and_last():
    text = (
        "intro\n```verilog\nmodule a; endmodule\n```\n"
        "note\n```\nplain\n```\n"
        "```verilog\nmodule b; endmodule\n```\n"
    )
    blocks = extract_code_blocks(text, "verilog")
    assert [b.text for b in blocks] == ["module a; endmodule", "module b; endmodule"]
    assert len(extract_code_blocks(text)) == 3


def test_extract_code_blocks_unterminated():
    blocks = extract_code_blocks("```verilog\nmodule x;\n")
    assert len(blocks) == 1
    assert not blocks[0].terminated
    assert blocks[0].text == "module x;"


def test_extract_code_blocks_indented_fences():
    blocks = extract_code_blocks("  ```verilog\n  wire w;\n  ```\n", "verilog")
    assert len(blocks) == 1
    assert blocks[0].text == "  wire w;"
