"""HTTP facade over sessions, designs, and event streams.

Endpoints (JSON unless noted):

    GET  /api/designs
    POST /api/sessions                      {"design": name}
    GET  /api/sessions/{id}
    POST /api/sessions/{id}/messages        {"text": ..., "dedupe_id"?: ...}
    GET  /api/sessions/{id}/events?since=n  newline-delimited event stream
    GET  /api/sessions/{id}/variants
    GET  /api/sessions/{id}/variants/{vid}/source   (text/plain)

Anything else is served from the static directory (the built web UI) when
one is configured. Errors come back as {"code": ..., "message": ...} with
a matching HTTP status. Binds localhost by default; there is no auth layer.
"""

from __future__ import annotations

import json
import re
import threading
import time
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from pathlib import Path
from urllib.parse import parse_qs, urlparse

from . import workspace
from .model import CradleError, extract_hierarchy
from .session import (
    BadState,
    CorruptLog,
    NoSuchVariant,
    STATE_FINISHED,
    SessionManager,
    SessionNotFound,
    UnknownCommand,
)
from .workspace import AmbiguousTop, BadManifest, EmptyDesign, MissingDesign

DEFAULT_BIND = "127.0.0.1"
DEFAULT_PORT = 8745
HEARTBEAT_S = 15.0
STREAM_POLL_S = 0.25


class PortInUse(CradleError):
    """The requested bind address/port is taken."""


class BadRequest(CradleError):
    """Malformed request body or parameters."""


_STATUS_BY_CODE = {
    "BadRequest": 400,
    "UnknownCommand": 400,
    "MissingDesign": 404,
    "SessionNotFound": 404,
    "NoSuchVariant": 404,
    "BadState": 409,
    "EmptyDesign": 422,
    "AmbiguousTop": 422,
    "BadManifest": 422,
    "CorruptLog": 500,
}

_KNOWN_ERRORS = (
    BadRequest, UnknownCommand, MissingDesign, SessionNotFound, NoSuchVariant,
    BadState, EmptyDesign, AmbiguousTop, BadManifest, CorruptLog,
)

_CONTENT_TYPES = {
    ".html": "text/html; charset=utf-8",
    ".js": "text/javascript; charset=utf-8",
    ".css": "text/css; charset=utf-8",
    ".json": "application/json",
    ".svg": "image/svg+xml",
    ".png": "image/png",
    ".ico": "image/x-icon",
    ".map": "application/json",
}

_ROUTES = [
    ("GET", re.compile(r"^/api/designs$"), "designs"),
    ("POST", re.compile(r"^/api/sessions$"), "create_session"),
    ("GET", re.compile(r"^/api/sessions/([^/]+)$"), "get_session"),
    ("POST", re.compile(r"^/api/sessions/([^/]+)/messages$"), "post_message"),
    ("GET", re.compile(r"^/api/sessions/([^/]+)/events$"), "stream_events"),
    ("GET", re.compile(r"^/api/sessions/([^/]+)/variants$"), "variants"),
    ("GET", re.compile(r"^/api/sessions/([^/]+)/variants/(\d+)/source$"), "variant_source"),
]


class CradleService:
    """Owns the HTTP server and its background thread."""

    def __init__(self, manager: SessionManager, bind: str = DEFAULT_BIND,
                 port: int = DEFAULT_PORT, static_dir=None,
                 heartbeat_s: float = HEARTBEAT_S):
        self.manager = manager
        self.static_dir = Path(static_dir) if static_dir else None
        self.heartbeat_s = heartbeat_s
        self.shutting_down = threading.Event()
        handler = _make_handler(self)
        try:
            self._server = ThreadingHTTPServer((bind, port), handler)
        except OSError as e:
            if e.errno == 98:  # EADDRINUSE
                raise PortInUse(f"{bind}:{port} is already in use") from e
            raise
        self._server.daemon_threads = True
        self._thread: threading.Thread | None = None

    @property
    def port(self) -> int:
        return self._server.server_address[1]

    @property
    def url(self) -> str:
        host, port = self._server.server_address[:2]
        return f"http://{host}:{port}"

    def start(self) -> "CradleService":
        self._thread = threading.Thread(
            target=self._server.serve_forever, kwargs={"poll_interval": 0.1},
            daemon=True, name="cradle-http",
        )
        self._thread.start()
        return self

    def serve_forever(self):
        self._server.serve_forever(poll_interval=0.1)

    def shutdown(self):
        self.shutting_down.set()
        self._server.shutdown()
        self._server.server_close()
        if self._thread is not None:
            self._thread.join(timeout=10.0)
        self.manager.close()


def serve(root, bind: str = DEFAULT_BIND, port: int = DEFAULT_PORT,
          manager: SessionManager | None = None, static_dir=None,
          heartbeat_s: float = HEARTBEAT_S, adapter_factory=None,
          gateway_factory=None) -> CradleService:
    """Construct (but do not start) the service for a workspace root.

    Callers provide a ready SessionManager or the two backend factories.
    """
    if manager is None:
        if adapter_factory is None or gateway_factory is None:
            raise ValueError("serve needs a manager or both backend factories")
        manager = SessionManager(root, adapter_factory, gateway_factory)
    return CradleService(manager, bind=bind, port=port, static_dir=static_dir,
                         heartbeat_s=heartbeat_s)


def _make_handler(service: CradleService):
    class Handler(BaseHTTPRequestHandler):
        server_version = "cradle"
        # 1.1 so the event stream can use chunked framing; every non-stream
        # response must therefore carry Content-Length
        protocol_version = "HTTP/1.1"

        def log_message(self, fmt, *args):
            pass

        def do_GET(self):
            self._route("GET")

        def do_POST(self):
            self._route("POST")

        def _route(self, method: str):
            parsed = urlparse(self.path)
            for verb, pattern, name in _ROUTES:
                m = pattern.match(parsed.path)
                if not m:
                    continue
                if verb != method:
                    self._error(405, "BadRequest", f"{method} not allowed here")
                    return
                try:
                    getattr(self, "_h_" + name)(*m.groups(), query=parse_qs(parsed.query))
                except _KNOWN_ERRORS as e:
                    self._error(_STATUS_BY_CODE.get(e.code, 500), e.code, str(e))
                except BrokenPipeError:
                    pass
                except Exception as e:  # pragma: no cover - defensive surface
                    self._error(500, "InternalError", f"{type(e).__name__}: {e}")
                return
            if method == "GET" and not parsed.path.startswith("/api/"):
                self._static(parsed.path)
                return
            self._error(404, "BadRequest", f"no route for {method} {parsed.path}")

        # -- helpers

        def _json(self, status: int, doc):
            body = json.dumps(doc).encode("utf-8")
            self.send_response(status)
            self.send_header("Content-Type", "application/json")
            self.send_header("Content-Length", str(len(body)))
            self.end_headers()
            self.wfile.write(body)

        def _error(self, status: int, code: str, message: str):
            try:
                self._json(status, {"code": code, "message": message})
            except (BrokenPipeError, ConnectionResetError):
                pass

        def _body(self) -> dict:
            length = int(self.headers.get("Content-Length") or 0)
            if length <= 0:
                raise BadRequest("request body required")
            raw = self.rfile.read(length)
            try:
                doc = json.loads(raw)
            except json.JSONDecodeError as e:
                raise BadRequest(f"body is not valid JSON: {e}") from e
            if not isinstance(doc, dict):
                raise BadRequest("body must be a JSON object")
            return doc

        # -- endpoints

        def _h_designs(self, query=None):
            out = []
            for name in workspace.list_designs(service.manager.root):
                try:
                    design = workspace.load_design(service.manager.root, name)
                    out.append({
                        "name": design.name,
                        "top": design.top_module,
                        "hierarchy": design.hierarchy().to_dict(),
                    })
                except CradleError as e:
                    out.append({"name": name, "error": f"{e.code}: {e}"})
            self._json(200, out)

        def _h_create_session(self, query=None):
            doc = self._body()
            design = doc.get("design")
            if not isinstance(design, str) or not design:
                raise BadRequest("body needs a design name")
            session = service.manager.create_session(design)
            self._json(201, {"id": session.id, "state": session.state})

        def _h_get_session(self, session_id, query=None):
            session = service.manager.get(session_id)
            folded = session.folded()
            doc = {
                "id": session.id,
                "state": session.state,
                "design": session.design.name,
                "config": folded.config,
            }
            if session.state == STATE_FINISHED:
                doc["best"] = {
                    "variant_id": folded.best_variant_id,
                    "reductions": folded.best_reductions,
                }
            self._json(200, doc)

        def _h_post_message(self, session_id, query=None):
            doc = self._body()
            text = doc.get("text")
            if not isinstance(text, str):
                raise BadRequest("body needs a text field")
            dedupe_id = doc.get("dedupe_id")
            if dedupe_id is not None and not isinstance(dedupe_id, str):
                raise BadRequest("dedupe_id must be a string")
            appended = service.manager.post_message(session_id, text, dedupe_id)
            self._json(202, {"accepted_seq": appended[0]["seq"] if appended else None})

        def _h_variants(self, session_id, query=None):
            session = service.manager.get(session_id)
            folded = session.folded()
            out = []
            for vid in sorted(folded.variants):
                v = folded.variants[vid]
                entry = {"id": vid, "iteration": v.iteration, "verdict": v.status}
                if v.counts is not None:
                    entry["metrics"] = dict(v.counts)
                reds = folded.variant_reductions(vid)
                if reds is not None:
                    entry["reductions"] = reds
                out.append(entry)
            self._json(200, out)

        def _h_variant_source(self, session_id, vid, query=None):
            session = service.manager.get(session_id)
            source = workspace.read_variant_source(session.dir, int(vid))
            if source is None:
                raise NoSuchVariant(vid)
            body = source.encode("utf-8")
            self.send_response(200)
            self.send_header("Content-Type", "text/plain; charset=utf-8")
            self.send_header("Content-Length", str(len(body)))
            self.end_headers()
            self.wfile.write(body)

        def _h_stream_events(self, session_id, query=None):
            session = service.manager.get(session_id)  # 404 before stream opens
            since = 0
            if query and query.get("since"):
                try:
                    since = int(query["since"][0])
                except ValueError:
                    raise BadRequest("since must be an integer") from None
            self.send_response(200)
            self.send_header("Content-Type", "application/x-ndjson")
            self.send_header("Cache-Control", "no-store")
            self.send_header("Transfer-Encoding", "chunked")
            self.end_headers()

            def chunk(data: bytes):
                self.wfile.write(f"{len(data):x}\r\n".encode() + data + b"\r\n")
                self.wfile.flush()

            cursor = since
            last_activity = time.monotonic()
            try:
                while not service.shutting_down.is_set():
                    batch = session.log.wait_for(cursor, timeout=STREAM_POLL_S)
                    if batch:
                        chunk(b"".join(
                            json.dumps(e, separators=(",", ":")).encode() + b"\n"
                            for e in batch
                        ))
                        cursor = batch[-1]["seq"]
                        last_activity = time.monotonic()
                    elif time.monotonic() - last_activity >= service.heartbeat_s:
                        chunk(b"# heartbeat\n")
                        last_activity = time.monotonic()
                self.wfile.write(b"0\r\n\r\n")
                self.wfile.flush()
            except (BrokenPipeError, ConnectionResetError):
                pass
            finally:
                self.close_connection = True

        # -- static files (built UI)

        def _static(self, path: str):
            if service.static_dir is None:
                self._error(404, "BadRequest", "no static content configured")
                return
            rel = path.lstrip("/") or "index.html"
            target = (service.static_dir / rel).resolve()
            root = service.static_dir.resolve()
            if root not in target.parents and target != root:
                self._error(404, "BadRequest", "not found")
                return
            if target.is_dir():
                target = target / "index.html"
            if not target.is_file():
                # single-page app fallback
                target = root / "index.html"
                if not target.is_file():
                    self._error(404, "BadRequest", "not found")
                    return
            body = target.read_bytes()
            ctype = _CONTENT_TYPES.get(target.suffix, "application/octet-stream")
            self.send_response(200)
            self.send_header("Content-Type", ctype)
            self.send_header("Content-Length", str(len(body)))
            self.end_headers()
            self.wfile.write(body)

    return Handler


def stream_events(base_url: str, session_id: str, since: int = 0, timeout: float = 30.0):
    """Client-side helper: yield events from a held-open stream.

    Mostly for tests and scripts; the web UI speaks the same protocol.
    """
    import requests

    url = f"{base_url}/api/sessions/{session_id}/events"
    with requests.get(url, params={"since": since}, stream=True, timeout=timeout) as resp:
        if resp.status_code != 200:
            doc = resp.json()
            raise SessionNotFound(doc.get("message", session_id))
        for line in resp.iter_lines():
            if isinstance(line, bytes):
                line = line.decode("utf-8")
            if not line or line.startswith("#"):
                continue
            yield json.loads(line)


def design_summary(root, name: str) -> dict:
    design = workspace.load_design(root, name)
    return {
        "name": design.name,
        "top": design.top_module,
        "hierarchy": extract_hierarchy(design.source_texts, design.top_module).to_dict(),
    }
