import json
import threading
import time
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer

import pytest

from ibalign.alignment import BehaviourVector, JudgeInput
from ibalign.evidence import StateIndicators
from ibalign.intent import IntentVector
from ibalign.providers import (
    BuiltinJudge, JudgeChain, ProviderSchemaError, ProviderTimeout, ProviderTransportError, RemoteProvider,
    ReplayProvider, make_judge,
)

INPUT = JudgeInput(IntentVector(0.5, 0.5, 0.5), BehaviourVector(0.9, 0.1, 0.1),
                   StateIndicators(flags={"loading_spinner_visible": True}), step=2)
PACK = {"components": [{"kind": "Map", "bbox": [0, 0, 10, 10], "confidence": 0.9}], "state_indicators": {},
        "screen_summary": {"description": "d", "primary_goal": "g", "evidence_bullets": ["a", "b"]}}


class Server:
    """Local JSON endpoint whose behaviour each test sets."""

    def __init__(self):
        self.mode = "ok"
        self.requests = []
        outer = self

        class Handler(BaseHTTPRequestHandler):
            def log_message(self, *args):
                pass

            def do_POST(self):
                body = json.loads(self.rfile.read(int(self.headers["Content-Length"])))
                outer.requests.append((dict(self.headers), body))
                if outer.mode == "slow":
                    time.sleep(0.5)
                if outer.mode == "500":
                    self.send_response(500)
                    self.end_headers()
                    return
                doc = {"ok": {"confidence": 0.77, "usage": {"completion_tokens": 12, "total_tokens": 40}},
                       "bad": {"confidence": 7},
                       "evidence": {"evidence": PACK},
                       "bad_evidence": {"evidence": {"components": "nope"}},
                       "slow": {"confidence": 0.1}}[outer.mode]
                raw = json.dumps(doc).encode()
                self.send_response(200)
                self.send_header("Content-Length", str(len(raw)))
                self.end_headers()
                self.wfile.write(raw)

        self.httpd = ThreadingHTTPServer(("127.0.0.1", 0), Handler)
        self.url = f"http://127.0.0.1:{self.httpd.server_port}/judge"
        threading.Thread(target=self.httpd.serve_forever, daemon=True).start()


@pytest.fixture(scope="module")
def server():
    s = Server()
    yield s
    s.httpd.shutdown()


@pytest.fixture(autouse=True)
def reset(server):
    server.mode = "ok"
    server.requests.clear()


def remote(server, **kw):
    kw.setdefault("sleep", lambda s: None)
    return RemoteProvider(server.url, "tok", **kw)


def test_remote_success_passes_usage(server):
    out = remote(server).judge(INPUT)
    assert (out.confidence, out.completion_tokens, out.total_tokens) == (0.77, 12, 40)
    headers, body = server.requests[0]
    assert headers["Authorization"] == "Bearer tok"
    assert body["kind"] == "judge" and body["step"] == 2 and body["b"] == [0.9, 0.1, 0.1]


def test_remote_timeout_falls_back_degraded(server):
    server.mode = "slow"
    chain = JudgeChain([remote(server, timeout=0.1, retries=1)])
    out = chain.judge(INPUT)
    assert out.degraded and out.source == "builtin"
    assert out.confidence == pytest.approx(0.9)
    assert "timeout" in out.error
    assert len(server.requests) == 2


def test_remote_errors_are_distinct(server):
    server.mode = "slow"
    with pytest.raises(ProviderTimeout):
        remote(server, timeout=0.1, retries=0).judge(INPUT)
    server.mode = "500"
    with pytest.raises(ProviderTransportError):
        remote(server, retries=0).judge(INPUT)
    server.mode = "bad"
    with pytest.raises(ProviderSchemaError):
        remote(server).judge(INPUT)


def test_retry_backoff_doubles(server):
    server.mode = "500"
    waits = []
    with pytest.raises(ProviderTransportError):
        remote(server, retries=2, backoff=0.5, sleep=waits.append).judge(INPUT)
    assert waits == [0.5, 1.0]


def test_remote_evidence(server, tmp_path):
    shot = tmp_path / "s.png"
    shot.write_bytes(b"\x89PNG")
    server.mode = "evidence"
    pack = remote(server).evidence(shot)
    assert pack.components[0].kind == "Map"
    server.mode = "bad_evidence"
    with pytest.raises(ProviderSchemaError):
        remote(server).evidence(shot)


def test_replay(tmp_path):
    (tmp_path / "providers").mkdir()
    (tmp_path / "providers" / "0002.json").write_text(json.dumps({"judge": {"confidence": 0.3}, "evidence": PACK}))
    rp = ReplayProvider(tmp_path)
    assert rp.judge(INPUT).confidence == 0.3
    assert rp.evidence(2).components[0].confidence == 0.9
    with pytest.raises(ProviderTransportError):
        rp.evidence(9)


def test_replay_missing_step_degrades(tmp_path):
    out = make_judge({"kind": "replay"}, tmp_path).judge(INPUT)
    assert out.degraded and out.confidence == BuiltinJudge().judge(INPUT).confidence


def test_builtin_chain_is_not_degraded():
    out = make_judge({"kind": "builtin"}).judge(INPUT)
    assert not out.degraded and out.source == "builtin"
