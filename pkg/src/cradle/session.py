"""Conversational sessions: append-only event log plus pure state folding.

A session is its event log. Every mutation appends a SessionEvent line to
events.jsonl (fsync'd before acknowledgment); all state — Idle/Exploring/
Finished, pending guidance, variants, the current best — is reconstructed by
folding those events, so a crash can never leave state and log disagreeing.
"""

from __future__ import annotations

import json
import os
import queue
import threading
import time
import uuid
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path

from . import events as ev
from . import workspace
from .agent import (
    ExplorationResult,
    LoopConfig,
    RefFailsVerification,
    run_loop,
)
from .eda import CancelToken
from .llm import GatewayError
from .model import (
    CradleError,
    DesignUnit,
    Objective,
    ResourceMetrics,
    Variant,
    reductions_vs_reference,
)

DEDUPE_WINDOW_S = 600.0

STATE_IDLE = "Idle"
STATE_EXPLORING = "Exploring"
STATE_FINISHED = "Finished"

COMMANDS = ("/optimize", "/status", "/variants", "/accept", "/abort", "/help")

HELP_TEXT = (
    "Commands: /optimize [goal...] start an exploration; /status show "
    "session state; /variants list produced variants; /accept <id> copy a "
    "variant over the design's working copy; /abort cancel a running "
    "exploration; /help show this text. Plain text is kept as guidance for "
    "the optimizer."
)


class SessionNotFound(CradleError):
    """No session with that id."""


class CorruptLog(CradleError):
    """events.jsonl violates the monotonic-seq contract."""


class UnknownCommand(CradleError):
    """Slash command not recognized or malformed."""


class BadState(CradleError):
    """Command not valid in the session's current state."""


class NoSuchVariant(CradleError):
    """Variant id not present in this session."""


def _now_rfc3339() -> str:
    return datetime.now(timezone.utc).isoformat(timespec="milliseconds")


class EventLog:
    """Append-only JSONL event store for one session.

    Appends are serialized, fsync'd before return, and published to waiting
    readers via a condition variable. Loading tolerates a torn final line
    (crash mid-append): the partial line is discarded and the file repaired.
    """

    def __init__(self, path):
        self.path = Path(path)
        self._lock = threading.RLock()
        self._cond = threading.Condition(self._lock)
        self._events: list[dict] = []
        self._fh = None
        self._load()

    def _load(self):
        if not self.path.is_file():
            return
        raw = self.path.read_bytes()
        keep = len(raw)
        if raw and not raw.endswith(b"\n"):
            nl = raw.rfind(b"\n")
            keep = nl + 1
        complete = raw[:keep]
        expected = 1
        for line in complete.splitlines():
            if not line.strip():
                continue
            try:
                event = json.loads(line)
            except json.JSONDecodeError as e:
                raise CorruptLog(f"{self.path}: undecodable line: {e}") from e
            seq = event.get("seq")
            if seq != expected:
                raise CorruptLog(f"{self.path}: seq {seq}, expected {expected}")
            if event.get("kind") not in ev.KINDS:
                raise CorruptLog(f"{self.path}: unknown kind {event.get('kind')!r}")
            self._events.append(event)
            expected += 1
        if keep < len(raw):
            with open(self.path, "r+b") as f:
                f.truncate(keep)

    def _handle(self):
        if self._fh is None:
            self.path.parent.mkdir(parents=True, exist_ok=True)
            self._fh = open(self.path, "a", encoding="utf-8")
        return self._fh

    def append(self, kind: str, payload: dict) -> dict:
        if kind not in ev.KINDS:
            raise ValueError(f"unknown event kind {kind!r}")
        with self._cond:
            event = {
                "seq": len(self._events) + 1,
                "ts": _now_rfc3339(),
                "kind": kind,
                "payload": payload,
            }
            fh = self._handle()
            fh.write(json.dumps(event, separators=(",", ":")) + "\n")
            fh.flush()
            os.fsync(fh.fileno())
            self._events.append(event)
            self._cond.notify_all()
            return event

    @property
    def last_seq(self) -> int:
        with self._lock:
            return len(self._events)

    def read_since(self, since_seq: int = 0) -> list[dict]:
        with self._lock:
            return list(self._events[since_seq:])

    def wait_for(self, since_seq: int, timeout: float) -> list[dict]:
        """Events with seq > since_seq, blocking up to `timeout` for the
        first one. May return empty on timeout."""
        deadline = time.monotonic() + timeout
        with self._cond:
            while len(self._events) <= since_seq:
                remaining = deadline - time.monotonic()
                if remaining <= 0:
                    return []
                self._cond.wait(remaining)
            return list(self._events[since_seq:])

    def close(self):
        with self._lock:
            if self._fh is not None:
                self._fh.close()
                self._fh = None


@dataclass
class FoldedVariant:
    id: int
    iteration: int = 0
    status: str | None = None
    matched_rule: str | None = None
    counts: dict | None = None

    def metrics(self) -> ResourceMetrics | None:
        return ResourceMetrics(self.counts) if self.counts is not None else None


@dataclass
class FoldedState:
    """Pure fold of an event list; everything the API needs to render."""

    state: str = STATE_IDLE
    design_name: str | None = None
    config: dict = field(default_factory=dict)
    pending_guidance: list = field(default_factory=list)
    variants: dict = field(default_factory=dict)
    best_variant_id: int = 0
    best_reductions: dict = field(default_factory=dict)
    finished: dict | None = None
    last_error: str | None = None
    last_seq: int = 0

    def reference_counts(self) -> dict | None:
        ref = self.variants.get(0)
        return ref.counts if ref else None

    def variant_reductions(self, variant_id: int) -> dict | None:
        ref = self.reference_counts()
        v = self.variants.get(variant_id)
        if ref is None or v is None or v.counts is None:
            return None
        return reductions_vs_reference(ResourceMetrics(ref), ResourceMetrics(v.counts))


def fold_events(event_list) -> FoldedState:
    """Fold events into session state. Deterministic: same list, same state."""
    st = FoldedState()
    for event in event_list:
        kind = event["kind"]
        payload = event.get("payload", {})
        st.last_seq = event["seq"]
        if kind == ev.USER_MESSAGE:
            text = payload.get("text", "")
            if text.startswith("/"):
                if text.split()[0] == "/optimize":
                    st.state = STATE_EXPLORING
                    st.pending_guidance = []
            elif st.state != STATE_EXPLORING:
                # guidance sent mid-exploration is consumed by the live loop
                st.pending_guidance.append(text)
        elif kind == ev.AGENT_MESSAGE:
            if "design" in payload and st.design_name is None:
                st.design_name = payload["design"]
            if "config" in payload and not st.config:
                st.config = payload["config"]
        elif kind == ev.CANDIDATE_PRODUCED:
            vid = payload["variant_id"]
            st.variants[vid] = FoldedVariant(vid, payload.get("iteration", 0))
        elif kind == ev.VERIFICATION_RESULT:
            vid = payload["variant_id"]
            v = st.variants.setdefault(vid, FoldedVariant(vid))
            v.status = payload.get("status")
            v.matched_rule = payload.get("matched_rule")
        elif kind == ev.METRICS_MEASURED:
            vid = payload["variant_id"]
            v = st.variants.setdefault(vid, FoldedVariant(vid))
            v.counts = dict(payload.get("counts", {}))
        elif kind == ev.BEST_UPDATED:
            st.best_variant_id = payload["variant_id"]
            st.best_reductions = dict(payload.get("reductions", {}))
        elif kind == ev.LOOP_FINISHED:
            st.state = STATE_FINISHED
            st.best_variant_id = payload.get("best_variant_id", st.best_variant_id)
            st.best_reductions = dict(payload.get("reductions", st.best_reductions))
            st.finished = dict(payload)
        elif kind == ev.ERROR:
            st.last_error = payload.get("message")
    return st


class Session:
    """Runtime handle: event log + live loop machinery for one session id."""

    def __init__(self, manager, session_id: str, design: DesignUnit, log: EventLog,
                 config: LoopConfig):
        self.manager = manager
        self.id = session_id
        self.design = design
        self.log = log
        self.config = config
        self.mutex = threading.RLock()
        self.guidance_queue: queue.Queue = queue.Queue()
        self.cancel_token: CancelToken | None = None
        self._thread: threading.Thread | None = None
        self.result: ExplorationResult | None = None

    @property
    def dir(self) -> Path:
        return self.log.path.parent

    def folded(self) -> FoldedState:
        return fold_events(self.log.read_since(0))

    @property
    def state(self) -> str:
        if self._thread is not None and self._thread.is_alive():
            return STATE_EXPLORING
        st = self.folded().state
        if st == STATE_EXPLORING:
            # log says a loop was running but none is: crashed or foreign log
            return STATE_FINISHED
        return st

    @property
    def guidance(self) -> list:
        return self.folded().pending_guidance

    def wait(self, timeout: float | None = None) -> bool:
        t = self._thread
        if t is None:
            return True
        t.join(timeout)
        return not t.is_alive()


class SessionManager:
    """Owns sessions under one workspace root: creation, lookup, commands,
    and the loop threads. All mutations of one session are serialized."""

    def __init__(self, root, adapter_factory, gateway_factory,
                 loop_config: LoopConfig | None = None, run_async: bool = True):
        self.root = Path(root)
        self.adapter_factory = adapter_factory
        self.gateway_factory = gateway_factory
        self.loop_config = loop_config or LoopConfig()
        self.run_async = run_async
        self._sessions: dict[str, Session] = {}
        self._dedupe: dict[tuple, tuple] = {}
        self._lock = threading.Lock()

    # -- lifecycle

    def create_session(self, design_name: str, config: LoopConfig | None = None) -> Session:
        design = workspace.load_design(self.root, design_name)
        session_id = str(uuid.uuid4())
        sess_dir = workspace.ensure_session_dir(self.root, session_id)
        log = EventLog(workspace.events_path(sess_dir))
        cfg = config or self.loop_config
        session = Session(self, session_id, design, log, cfg)
        log.append(ev.AGENT_MESSAGE, {
            "text": f"Session opened on design {design.name}. {HELP_TEXT}",
            "design": design.name,
            "config": _config_dict(cfg),
        })
        with self._lock:
            self._sessions[session_id] = session
        return session

    def get(self, session_id: str) -> Session:
        with self._lock:
            if session_id in self._sessions:
                return self._sessions[session_id]
        session = self._load(session_id)
        with self._lock:
            return self._sessions.setdefault(session_id, session)

    def _load(self, session_id: str) -> Session:
        sess_dir = workspace.session_dir(self.root, session_id)
        path = workspace.events_path(sess_dir)
        if not path.is_file():
            raise SessionNotFound(session_id)
        log = EventLog(path)
        folded = fold_events(log.read_since(0))
        if not folded.design_name:
            raise CorruptLog(f"{path}: no design recorded")
        design = workspace.load_design(self.root, folded.design_name)
        cfg = _config_from_dict(folded.config)
        return Session(self, session_id, design, log, cfg)

    def list_ids(self) -> list[str]:
        return workspace.list_sessions(self.root)

    def close(self):
        with self._lock:
            sessions = list(self._sessions.values())
        for s in sessions:
            if s.cancel_token is not None:
                s.cancel_token.cancel()
        for s in sessions:
            s.wait(timeout=10.0)
            s.log.close()

    # -- commands

    def post_message(self, session_id: str, text: str, dedupe_id: str | None = None) -> list[dict]:
        session = self.get(session_id)
        if not isinstance(text, str) or not text.strip():
            raise UnknownCommand("empty message")
        text = text.strip()
        with session.mutex:
            if dedupe_id:
                hit = self._dedupe_lookup(session_id, dedupe_id)
                if hit is not None:
                    return hit
            appended = self._dispatch(session, text)
            if dedupe_id:
                self._dedupe_store(session_id, dedupe_id, appended)
            return appended

    def _dispatch(self, session: Session, text: str) -> list[dict]:
        if not text.startswith("/"):
            event = session.log.append(ev.USER_MESSAGE, {"text": text})
            if session.state == STATE_EXPLORING:
                session.guidance_queue.put(text)
            return [event]

        parts = text.split()
        cmd, args = parts[0], parts[1:]
        if cmd == "/help":
            return [
                session.log.append(ev.USER_MESSAGE, {"text": text}),
                session.log.append(ev.AGENT_MESSAGE, {"text": HELP_TEXT}),
            ]
        if cmd == "/status":
            return [
                session.log.append(ev.USER_MESSAGE, {"text": text}),
                session.log.append(ev.AGENT_MESSAGE, {"text": self._status_text(session)}),
            ]
        if cmd == "/variants":
            return [
                session.log.append(ev.USER_MESSAGE, {"text": text}),
                session.log.append(ev.AGENT_MESSAGE, {"text": self._variants_text(session)}),
            ]
        if cmd == "/optimize":
            return self._cmd_optimize(session, text, args)
        if cmd == "/abort":
            return self._cmd_abort(session, text)
        if cmd == "/accept":
            return self._cmd_accept(session, text, args)
        raise UnknownCommand(f"{cmd} (try /help)")

    def _cmd_optimize(self, session: Session, text: str, args: list) -> list[dict]:
        if session.state == STATE_EXPLORING:
            raise BadState("an exploration is already running")
        guidance = list(session.folded().pending_guidance)
        if args:
            guidance.append(" ".join(args))
        event = session.log.append(ev.USER_MESSAGE, {"text": text})
        session.cancel_token = CancelToken()
        session.guidance_queue = queue.Queue()
        thread = threading.Thread(
            target=self._loop_body, args=(session, guidance), daemon=True,
            name=f"loop-{session.id[:8]}",
        )
        session._thread = thread
        thread.start()
        if not self.run_async:
            thread.join()
        return [event]

    def _loop_body(self, session: Session, guidance: list):
        def variant_sink(variant: Variant):
            workspace.write_variant(session.dir, variant)

        try:
            adapter = self.adapter_factory(session.design)
            gateway = self.gateway_factory(session.design)
            session.result = run_loop(
                session.design, session.config, adapter, gateway,
                sink=session.log.append,
                guidance=guidance,
                guidance_queue=session.guidance_queue,
                cancel=session.cancel_token,
                variant_sink=variant_sink,
            )
        except RefFailsVerification as e:
            session.log.append(ev.LOOP_FINISHED, {
                "best_variant_id": 0, "reductions": {}, "stopped_early": False,
                "iterations": 0, "aborted": f"RefFailsVerification: {e}",
            })
        except GatewayError:
            pass  # loop already recorded Error + LoopFinished
        except Exception as e:  # defensive: a crashed loop must still close the log
            session.log.append(ev.ERROR, {"message": f"{type(e).__name__}: {e}", "scope": "loop"})
            session.log.append(ev.LOOP_FINISHED, {
                "best_variant_id": 0, "reductions": {}, "stopped_early": False,
                "iterations": 0, "aborted": type(e).__name__,
            })

    def _cmd_abort(self, session: Session, text: str) -> list[dict]:
        if session.state != STATE_EXPLORING:
            raise BadState("no exploration is running")
        event = session.log.append(ev.USER_MESSAGE, {"text": text})
        if session.cancel_token is not None:
            session.cancel_token.cancel()
        return [event]

    def _cmd_accept(self, session: Session, text: str, args: list) -> list[dict]:
        if len(args) != 1 or not args[0].lstrip("-").isdigit():
            raise UnknownCommand("usage: /accept <variant-id>")
        if session.state != STATE_FINISHED:
            raise BadState("/accept is only valid once an exploration has finished")
        vid = int(args[0])
        folded = session.folded()
        if vid not in folded.variants:
            raise NoSuchVariant(str(vid))
        try:
            dest = workspace.accept_variant(self.root, session.design.name, session.dir, vid)
        except FileNotFoundError:
            raise NoSuchVariant(f"{vid}: no stored source") from None
        return [
            session.log.append(ev.USER_MESSAGE, {"text": text}),
            session.log.append(ev.AGENT_MESSAGE, {
                "text": f"Variant {vid} accepted; working copy updated.",
                "accepted_variant": vid,
                "work_path": str(dest),
            }),
        ]

    # -- rendering for chat replies

    def _status_text(self, session: Session) -> str:
        folded = session.folded()
        state = session.state
        bits = [f"state={state}", f"design={session.design.name}"]
        if folded.variants:
            bits.append(f"variants={len([v for v in folded.variants if v != 0])}")
        if state == STATE_FINISHED:
            bits.append(f"best=variant {folded.best_variant_id}")
            reds = folded.best_reductions
            for cls in sorted(reds):
                bits.append(f"{cls} {-reds[cls]:+.1f}%")
        if folded.pending_guidance:
            bits.append(f"pending guidance: {len(folded.pending_guidance)}")
        return "; ".join(bits)

    def _variants_text(self, session: Session) -> str:
        folded = session.folded()
        if not folded.variants:
            return "No variants yet."
        lines = []
        for vid in sorted(folded.variants):
            v = folded.variants[vid]
            name = "reference" if vid == 0 else f"variant {vid}"
            desc = v.status or "?"
            if v.counts:
                desc += ", " + ", ".join(f"{k}={v.counts[k]}" for k in sorted(v.counts))
            marker = " (best)" if vid == folded.best_variant_id and folded.finished else ""
            lines.append(f"{name}: {desc}{marker}")
        return "\n".join(lines)

    # -- dedupe bookkeeping

    def _dedupe_lookup(self, session_id: str, dedupe_id: str):
        now = time.monotonic()
        with self._lock:
            self._dedupe = {
                k: v for k, v in self._dedupe.items() if now - v[1] < DEDUPE_WINDOW_S
            }
            hit = self._dedupe.get((session_id, dedupe_id))
            return list(hit[0]) if hit else None

    def _dedupe_store(self, session_id: str, dedupe_id: str, events_list: list):
        with self._lock:
            self._dedupe[(session_id, dedupe_id)] = (list(events_list), time.monotonic())


def post_message(session: Session, text: str, dedupe_id: str | None = None) -> list[dict]:
    return session.manager.post_message(session.id, text, dedupe_id)


def append_event(session: Session, kind: str, payload: dict) -> dict:
    return session.log.append(kind, payload)


def read_events(session: Session, since_seq: int = 0) -> list[dict]:
    return session.log.read_since(since_seq)


def _unconfigured_factory(*_args, **_kwargs):
    raise RuntimeError("this session was loaded without a tool/LLM backend")


def load_session(root_or_manager, session_id: str) -> Session:
    """Reconstruct a session purely from its event log. A log that still
    says Exploring (crash mid-loop) presents as Finished. Accepts either a
    SessionManager or a bare workspace root (inspection only: /optimize on
    such a session has no backend and will fail)."""
    if isinstance(root_or_manager, SessionManager):
        return root_or_manager.get(session_id)
    manager = SessionManager(root_or_manager, _unconfigured_factory, _unconfigured_factory)
    return manager.get(session_id)


def _config_dict(cfg: LoopConfig) -> dict:
    return {
        "max_iterations": cfg.max_iterations,
        "repair_attempts": cfg.repair_attempts,
        "objective": cfg.objective.to_dict(),
        "require_improvement": cfg.require_improvement,
    }


def _config_from_dict(data: dict) -> LoopConfig:
    if not data:
        return LoopConfig()
    return LoopConfig(
        max_iterations=data.get("max_iterations", 3),
        repair_attempts=data.get("repair_attempts", 2),
        objective=Objective.from_dict(data.get("objective") or {}),
        require_improvement=data.get("require_improvement", True),
    )
