import json
import threading
from http.server import BaseHTTPRequestHandler, HTTPServer

import pytest

from corpora import make_image_record
from retinalkit.conversations import TaskProfile, compile_tuning
from retinalkit.errors import ConfigError
from retinalkit.paraphrase import LLMClientConfig, paraphrase, paraphrase_all

SEEN = {}


class Handler(BaseHTTPRequestHandler):
    mode = "echo"

    def do_POST(self):
        body = json.loads(self.rfile.read(int(self.headers["Content-Length"])))
        SEEN["auth"] = self.headers.get("Authorization")
        SEEN["instruction"] = body["instruction"]
        turns = body["conversation"]
        if self.server.mode == "rewrite":
            turns = [dict(t, text=t["text"].replace("The ", "Here, the ", 1)) for t in turns]
        elif self.server.mode == "alter":
            turns = [dict(t, text=t["text"].replace("0.083", "0.09")) for t in turns]
        payload = b"not json" if self.server.mode == "garbage" else json.dumps({"turns": turns}).encode()
        self.send_response(200)
        self.send_header("Content-Type", "application/json")
        self.send_header("Content-Length", str(len(payload)))
        self.end_headers()
        self.wfile.write(payload)

    def log_message(self, *args):
        pass


@pytest.fixture
def server():
    srv = HTTPServer(("127.0.0.1", 0), Handler)
    thread = threading.Thread(target=srv.serve_forever, daemon=True)
    thread.start()
    yield srv
    srv.shutdown()
    srv.server_close()


@pytest.fixture
def conv_and_source():
    rec = make_image_record(1, n_features=1)
    rec.features = {"vessel_density": 0.0834}
    profile = TaskProfile("m", ("APTOS",), ("vascular_metric", "diagnosis"))
    return compile_tuning(rec, profile, seed=0), rec


def config(srv, **kw):
    return LLMClientConfig(f"http://127.0.0.1:{srv.server_port}/v1", model="echo", timeout=5, **kw)


def test_echo_passes_and_sends_token(server, conv_and_source, monkeypatch):
    monkeypatch.setenv("RETINALKIT_LLM_TOKEN", "secret")
    server.mode = "echo"
    conv, src = conv_and_source
    log = []
    out = paraphrase(conv, config(server), src, log=log)
    assert [t.text for t in out.turns] == [t.text for t in conv.turns]
    assert out.generator == "llm:echo" and log == []
    assert SEEN["auth"] == "Bearer secret" and "exactly" in SEEN["instruction"]


def test_rewording_that_keeps_facts_is_accepted(server, conv_and_source):
    server.mode = "rewrite"
    conv, src = conv_and_source
    out = paraphrase(conv, config(server), src)
    assert out.generator == "llm:echo"
    assert out.to_json() != conv.to_json()


@pytest.mark.parametrize("mode", ["alter", "garbage"])
def test_altered_or_malformed_falls_back(server, conv_and_source, mode):
    server.mode = mode
    conv, src = conv_and_source
    log = []
    out = paraphrase(conv, config(server), src, log=log)
    assert out is conv
    assert log and log[0]["event"] == "paraphrase_fallback"


def test_unreachable_falls_back(conv_and_source):
    conv, src = conv_and_source
    log = []
    cfg = LLMClientConfig("http://127.0.0.1:9/none", timeout=0.5)
    assert paraphrase(conv, cfg, src, log=log) is conv
    assert "transport" in log[0]["reason"]


def test_disabled_client_is_identity(conv_and_source):
    conv, _ = conv_and_source
    assert paraphrase(conv, None) is conv


def test_bounded_concurrency_keeps_order(conv_and_source):
    conv, src = conv_and_source
    lock, state = threading.Lock(), {"now": 0, "peak": 0}

    def transport(url, body, headers, timeout):
        with lock:
            state["now"] += 1
            state["peak"] = max(state["peak"], state["now"])
        threading.Event().wait(0.01)
        with lock:
            state["now"] -= 1
        return json.dumps({"turns": json.loads(body)["conversation"]}).encode()

    records = [conv] * 20
    out = paraphrase_all(records, LLMClientConfig("http://x", max_in_flight=3),
                         {src.image_id: src}, transport=transport)
    assert len(out) == 20 and state["peak"] <= 3


def test_config_validation():
    with pytest.raises(ConfigError):
        LLMClientConfig("")
    with pytest.raises(ConfigError):
        LLMClientConfig("http://x", max_in_flight=0)
