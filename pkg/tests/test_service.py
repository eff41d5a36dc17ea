import contextlib
import http.client
import json
import threading

import pytest
import requests

from cradle import workspace
from cradle.service import CradleService, PortInUse, serve, stream_events
from cradle.session import SessionManager

from conftest import FakeGateway, PLAN_REPLY, STOP_REPLY, StubAdapters, metrics, rewrite_reply


def improved_counter(ws):
    src = workspace.load_design(ws, "counter8").source_files[0][1]
    return src.replace("8'd1", "{7'b0, 1'b1}")


@contextlib.contextmanager
def serving(ws, replies=(), measure=None, run_async=False, static_dir=None,
            heartbeat_s=15.0):
    staged = list(replies)
    manager = SessionManager(
        ws,
        adapter_factory=lambda d: StubAdapters(None, measure),
        gateway_factory=lambda d: FakeGateway(list(staged)),
        run_async=run_async,
    )
    service = CradleService(manager, port=0, static_dir=static_dir,
                            heartbeat_s=heartbeat_s).start()
    try:
        yield service
    finally:
        service.shutdown()


def optimize_replies(ws):
    return [PLAN_REPLY, rewrite_reply(improved_counter(ws)), STOP_REPLY]


CANONICAL_MEASURE = [metrics(100, 10), metrics(52, 6)]


def test_designs_listing_includes_broken_entries(ws):
    (ws / "designs" / "broken" / "src").mkdir(parents=True)
    with serving(ws) as service:
        resp = requests.get(f"{service.url}/api/designs", timeout=5)
        assert resp.status_code == 200
        by_name = {d["name"]: d for d in resp.json()}
        assert by_name["counter8"]["top"] == "counter8"
        assert by_name["counter8"]["hierarchy"]["module"] == "counter8"
        assert by_name["broken"]["error"].startswith("EmptyDesign")


def test_session_lifecycle_over_http(ws):
    with serving(ws, optimize_replies(ws), CANONICAL_MEASURE) as service:
        url = service.url
        resp = requests.post(f"{url}/api/sessions", json={"design": "counter8"},
                             timeout=5)
        assert resp.status_code == 201
        sid = resp.json()["id"]
        assert resp.json()["state"] == "Idle"

        doc = requests.get(f"{url}/api/sessions/{sid}", timeout=5).json()
        assert doc["design"] == "counter8"
        assert doc["config"]["max_iterations"] == 3
        assert "best" not in doc

        resp = requests.post(f"{url}/api/sessions/{sid}/messages",
                             json={"text": "/optimize"}, timeout=30)
        assert resp.status_code == 202
        assert resp.json()["accepted_seq"] == 2

        doc = requests.get(f"{url}/api/sessions/{sid}", timeout=5).json()
        assert doc["state"] == "Finished"
        assert doc["best"] == {"variant_id": 1,
                               "reductions": {"LUT": 48.0, "FF": 40.0}}


def test_error_statuses(ws):
    with serving(ws) as service:
        url = service.url

        def err(resp, status, code):
            assert resp.status_code == status
            assert resp.json()["code"] == code

        err(requests.post(f"{url}/api/sessions", json={"design": "ghost"},
                          timeout=5), 404, "MissingDesign")
        err(requests.post(f"{url}/api/sessions", data=b"", timeout=5),
            400, "BadRequest")
        err(requests.post(f"{url}/api/sessions", data=b"[1,2]",
                          headers={"Content-Type": "application/json"},
                          timeout=5), 400, "BadRequest")
        err(requests.get(f"{url}/api/sessions/nope", timeout=5),
            404, "SessionNotFound")
        err(requests.get(f"{url}/api/nothing-here", timeout=5),
            404, "BadRequest")
        err(requests.get(f"{url}/api/sessions", timeout=5),
            405, "BadRequest")

        sid = requests.post(f"{url}/api/sessions", json={"design": "counter8"},
                            timeout=5).json()["id"]
        err(requests.post(f"{url}/api/sessions/{sid}/messages",
                          json={"text": "/selfdestruct"}, timeout=5),
            400, "UnknownCommand")
        err(requests.post(f"{url}/api/sessions/{sid}/messages",
                          json={"note": "no text"}, timeout=5), 400, "BadRequest")
        err(requests.post(f"{url}/api/sessions/{sid}/messages",
                          json={"text": "/abort"}, timeout=5), 409, "BadState")
        err(requests.get(f"{url}/api/sessions/{sid}/variants/4/source",
                         timeout=5), 404, "NoSuchVariant")
        err(requests.get(f"{url}/api/sessions/{sid}/events?since=soon",
                         timeout=5), 400, "BadRequest")


def test_message_dedupe_over_http(ws):
    with serving(ws) as service:
        url = service.url
        sid = requests.post(f"{url}/api/sessions", json={"design": "counter8"},
                            timeout=5).json()["id"]
        msg = {"text": "hello there", "dedupe_id": "m-1"}
        first = requests.post(f"{url}/api/sessions/{sid}/messages", json=msg,
                              timeout=5).json()
        retried = requests.post(f"{url}/api/sessions/{sid}/messages", json=msg,
                                timeout=5).json()
        assert retried == first
        session = service.manager.get(sid)
        assert session.log.last_seq == 2  # opening + one copy of the message


def test_variants_and_source(ws):
    cand = improved_counter(ws)
    with serving(ws, [PLAN_REPLY, rewrite_reply(cand), STOP_REPLY],
                 CANONICAL_MEASURE) as service:
        url = service.url
        sid = requests.post(f"{url}/api/sessions", json={"design": "counter8"},
                            timeout=5).json()["id"]
        requests.post(f"{url}/api/sessions/{sid}/messages",
                      json={"text": "/optimize"}, timeout=30)

        variants = requests.get(f"{url}/api/sessions/{sid}/variants",
                                timeout=5).json()
        assert [v["id"] for v in variants] == [0, 1]
        assert variants[0]["metrics"] == {"LUT": 100, "FF": 10}
        assert variants[1]["verdict"] == "Pass"
        assert variants[1]["reductions"] == {"LUT": 48.0, "FF": 40.0}

        resp = requests.get(f"{url}/api/sessions/{sid}/variants/1/source",
                            timeout=5)
        assert resp.status_code == 200
        assert resp.headers["Content-Type"].startswith("text/plain")
        assert resp.text == cand.rstrip("\n")


def test_stream_follows_live_run_then_resumes(ws):
    with serving(ws, optimize_replies(ws), CANONICAL_MEASURE, run_async=True,
                 heartbeat_s=0.5) as service:
        url = service.url
        sid = requests.post(f"{url}/api/sessions", json={"design": "counter8"},
                            timeout=5).json()["id"]

        got = []
        done = threading.Event()

        def reader():
            for event in stream_events(url, sid, since=0, timeout=10):
                got.append(event)
                if event["kind"] == "LoopFinished":
                    break
            done.set()

        t = threading.Thread(target=reader, daemon=True)
        t.start()
        requests.post(f"{url}/api/sessions/{sid}/messages",
                      json={"text": "/optimize"}, timeout=5)
        assert done.wait(timeout=15)
        t.join()

        assert [e["seq"] for e in got] == list(range(1, len(got) + 1))
        kinds = [e["kind"] for e in got]
        v1 = [e["kind"] for e in got if e["payload"].get("variant_id") == 1]
        assert v1 == ["CandidateProduced", "VerificationResult", "MetricsMeasured",
                      "BestUpdated"]
        assert kinds[-1] == "LoopFinished"
        assert kinds.index("PlanCreated") < kinds.index("CandidateProduced")

        resumed = []
        for event in stream_events(url, sid, since=5, timeout=10):
            resumed.append(event)
            if event["kind"] == "LoopFinished":
                break
        assert resumed[0]["seq"] == 6
        assert [e["seq"] for e in resumed] == list(range(6, got[-1]["seq"] + 1))


def test_stream_heartbeats_keep_idle_connection_alive(ws):
    with serving(ws, heartbeat_s=0.05) as service:
        url = service.url
        sid = requests.post(f"{url}/api/sessions", json={"design": "counter8"},
                            timeout=5).json()["id"]
        with requests.get(f"{url}/api/sessions/{sid}/events", stream=True,
                          timeout=5) as resp:
            assert resp.status_code == 200
            assert resp.headers["Content-Type"] == "application/x-ndjson"
            lines = []
            for line in resp.iter_lines():
                lines.append(line)
                if len(lines) >= 3:
                    break
        # one event exists (the opening message); the rest are heartbeats
        assert json.loads(lines[0])["seq"] == 1
        assert lines[1] == b"# heartbeat" and lines[2] == b"# heartbeat"


def test_static_files_and_spa_fallback(ws, tmp_path):
    static = tmp_path / "dist"
    (static / "assets").mkdir(parents=True)
    (static / "index.html").write_text("<h1>console</h1>")
    (static / "assets" / "app.js").write_text("console.log(1)")

    with serving(ws, static_dir=static) as service:
        url = service.url
        assert requests.get(f"{url}/", timeout=5).text == "<h1>console</h1>"
        resp = requests.get(f"{url}/assets/app.js", timeout=5)
        assert resp.text == "console.log(1)"
        assert resp.headers["Content-Type"].startswith("text/javascript")
        # client-side routes fall back to the app shell
        assert requests.get(f"{url}/sessions/abc123", timeout=5).text == "<h1>console</h1>"

        # literal dot-dot segments never escape the static root
        conn = http.client.HTTPConnection("127.0.0.1", service.port, timeout=5)
        conn.request("GET", "/../" + "secrets.txt")
        raw = conn.getresponse()
        assert raw.status == 404
        conn.close()


def test_no_static_configured(ws):
    with serving(ws) as service:
        resp = requests.get(f"{service.url}/", timeout=5)
        assert resp.status_code == 404


def test_port_in_use_detected(ws):
    with serving(ws) as service:
        with pytest.raises(PortInUse):
            CradleService(service.manager, port=service.port)


def test_serve_requires_backends(ws):
    with pytest.raises(ValueError):
        serve(ws)
