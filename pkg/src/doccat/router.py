"""Queue-backed ticket routing service.

Tickets enter through ``Router.submit`` (or POST /tickets), are persisted as a
``received`` event, and wait in a FIFO work queue. A pool of stateless workers
classifies them with the shared, immutable model; a single routing stage then
appends each classified ticket to its label's sink. Every state transition is
one line in an append-only event log, which is replayed on startup.

Event log line (UTF-8 JSON, one object per line, keys in this order)::

    {"ts": "<ISO-8601 UTC>", "ticket_id": "<id>", "event": "<event>", "payload": {...}}

    received    payload {"subject": str, "body": str}
    classified  payload {"label": "Change"|"Problem"|"Request", "confidence": [p0, p1, p2],
                         "model_fingerprint": str}
    routed      payload {"sink": "<label>"}
    failed      payload {"reason": str}

Sink line::

    {"ticket_id": "<id>", "label": "<label>", "confidence": [p0, p1, p2], "ts": "<ISO-8601 UTC>"}
"""

from __future__ import annotations

import json
import logging
import os
import queue
import threading
import time
import urllib.error
import urllib.request
import uuid
from dataclasses import dataclass, field, replace
from datetime import datetime, timezone
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from pathlib import Path
from typing import Mapping

from doccat.config import ConfigError
from doccat.corpus import LABELS, Label, clean_text
from doccat.models import TrainedModel, predict_docs

log = logging.getLogger(__name__)

STATES = ("received", "classified", "routed", "failed")
_NEXT = {"received": {"classified", "failed"}, "classified": {"routed", "failed"}, "routed": set(), "failed": set()}


class NotFound(KeyError):
    pass


class StateError(RuntimeError):
    pass


class RecoveryError(RuntimeError):
    pass


def utc_now() -> str:
    return datetime.now(timezone.utc).strftime("%Y-%m-%dT%H:%M:%S.%fZ")


def _crashpoint(name: str, _counts: dict = {}) -> None:
    # Fault injection for crash-recovery tests: DOCCAT_CRASHPOINT=<name>:<n> hard-exits on the n-th hit.
    spec = os.environ.get("DOCCAT_CRASHPOINT")
    if not spec:
        return
    point, _, nth = spec.partition(":")
    if point != name:
        return
    _counts[name] = _counts.get(name, 0) + 1
    if _counts[name] >= int(nth or 1):
        os._exit(86)


@dataclass(frozen=True)
class TicketRecord:
    ticket_id: str
    subject: str
    body: str
    state: str = "received"
    label: Label | None = None
    confidence: tuple[float, float, float] | None = None
    timestamps: Mapping[str, str] = field(default_factory=dict)
    model_fingerprint: str = ""
    reason: str = ""

    def advance(self, state: str, ts: str | None = None, **changes) -> "TicketRecord":
        if state not in _NEXT[self.state]:
            raise StateError(f"ticket {self.ticket_id}: cannot move from {self.state} to {state}")
        stamps = dict(self.timestamps)
        stamps[state] = ts or utc_now()
        if state == "failed":
            # a failed ticket carries no label; the classified event stays in the log for operators
            changes.update(label=None, confidence=None)
        return replace(self, state=state, timestamps=stamps, **changes)

    def as_dict(self) -> dict:
        return {
            "ticket_id": self.ticket_id,
            "subject": self.subject,
            "body": self.body,
            "state": self.state,
            "label": self.label.title if self.label is not None else None,
            "confidence": list(self.confidence) if self.confidence is not None else None,
            "timestamps": dict(self.timestamps),
            "model_fingerprint": self.model_fingerprint,
            "reason": self.reason,
        }


def worker_step(record: TicketRecord, model: TrainedModel, model_fingerprint: str = "") -> TicketRecord:
    """Classify one received ticket. Depends only on its arguments."""
    if record.state != "received":
        raise StateError(f"ticket {record.ticket_id}: worker_step needs state received, got {record.state}")
    text = clean_text(f"{record.subject} {record.body}")
    if not text:
        return record.advance("failed", reason="empty-after-clean")
    try:
        labels, probs = predict_docs(model, [text])
    except Exception as exc:  # noqa: BLE001 - any model failure marks the ticket, never the worker
        return record.advance("failed", reason=f"model-error: {exc}")
    return record.advance(
        "classified",
        label=Label(int(labels[0])),
        confidence=tuple(float(p) for p in probs[0]),
        model_fingerprint=model_fingerprint,
    )


class EventLog:
    """Append-only newline-delimited JSON log; appends are serialized by a lock."""

    def __init__(self, path: str | Path, fsync: bool = False):
        self.path = Path(path)
        self.fsync = fsync
        self._lock = threading.Lock()
        self.path.parent.mkdir(parents=True, exist_ok=True)
        self._fd = os.open(self.path, os.O_WRONLY | os.O_APPEND | os.O_CREAT, 0o644)

    def append(self, ticket_id: str, event: str, payload: dict, ts: str | None = None) -> str:
        ts = ts or utc_now()
        line = json.dumps({"ts": ts, "ticket_id": ticket_id, "event": event, "payload": payload}) + "\n"
        with self._lock:
            os.write(self._fd, line.encode("utf-8"))
            if self.fsync:
                os.fsync(self._fd)
        return ts

    def close(self) -> None:
        os.close(self._fd)


def _truncate_partial_tail(path: Path, what: str) -> list[bytes]:
    """Return complete lines; a trailing partial line is cut off the file with a warning."""
    if not path.exists():
        return []
    data = path.read_bytes()
    if not data:
        return []
    end = data.rfind(b"\n") + 1
    if end < len(data):
        log.warning("%s %s: ignoring truncated final line (%d bytes)", what, path, len(data) - end)
        with path.open("r+b") as fh:
            fh.truncate(end)
    return data[:end].splitlines()


def replay(path: str | Path) -> dict[str, TicketRecord]:
    """Rebuild ticket records from an event log, in log order."""
    records: dict[str, TicketRecord] = {}
    lines = _truncate_partial_tail(Path(path), "event log")
    for n, raw in enumerate(lines, start=1):
        try:
            ev = json.loads(raw)
            tid, kind, payload, ts = ev["ticket_id"], ev["event"], ev["payload"], ev["ts"]
        except (json.JSONDecodeError, KeyError, TypeError) as exc:
            if n == len(lines):
                log.warning("event log %s: ignoring unreadable final line", path)
                break
            raise RecoveryError(f"event log {path}: corrupt line {n}: {exc}") from None
        if kind == "received":
            if tid in records:
                raise RecoveryError(f"event log {path}: line {n}: ticket {tid} received twice")
            records[tid] = TicketRecord(tid, payload["subject"], payload["body"], timestamps={"received": ts})
            continue
        rec = records.get(tid)
        if rec is None:
            raise RecoveryError(f"event log {path}: line {n}: {kind} for unknown ticket {tid}")
        if kind == "classified":
            rec = rec.advance(
                "classified",
                ts,
                label=Label.parse(payload["label"]),
                confidence=tuple(payload["confidence"]),
                model_fingerprint=payload.get("model_fingerprint", ""),
            )
        elif kind == "routed":
            rec = rec.advance("routed", ts)
        elif kind == "failed":
            rec = rec.advance("failed", ts, reason=payload.get("reason", ""))
        else:
            raise RecoveryError(f"event log {path}: line {n}: unknown event {kind!r}")
        records[tid] = rec
    return records


def recover(path: str | Path) -> tuple[dict[str, TicketRecord], list[str], list[str]]:
    """Replay the log; returns (records, ids to classify, ids to route), each list in log order."""
    records = replay(path)
    to_classify = [t for t, r in records.items() if r.state == "received"]
    to_route = [t for t, r in records.items() if r.state == "classified"]
    return records, to_classify, to_route


class SinkError(RuntimeError):
    pass


class FileSink:
    """One JSON line per ticket; ids already present are never written again."""

    def __init__(self, path: str | Path):
        self.path = Path(path)
        self.path.parent.mkdir(parents=True, exist_ok=True)
        self.seen: set[str] = set()
        for raw in _truncate_partial_tail(self.path, "sink"):
            try:
                self.seen.add(json.loads(raw)["ticket_id"])
            except (json.JSONDecodeError, KeyError, TypeError):
                raise RecoveryError(f"sink {self.path}: unreadable line") from None
        self._fd = os.open(self.path, os.O_WRONLY | os.O_APPEND | os.O_CREAT, 0o644)

    def write(self, line: dict) -> bool:
        if line["ticket_id"] in self.seen:
            return False
        os.write(self._fd, (json.dumps(line) + "\n").encode("utf-8"))
        self.seen.add(line["ticket_id"])
        return True

    def close(self) -> None:
        os.close(self._fd)


class WebhookSink:
    def __init__(self, url: str, attempts: int = 3, backoff: float = 0.2, timeout: float = 5.0):
        self.url = url
        self.attempts = attempts
        self.backoff = backoff
        self.timeout = timeout

    def write(self, line: dict) -> bool:
        data = json.dumps(line).encode("utf-8")
        last = ""
        for attempt in range(self.attempts):
            req = urllib.request.Request(
                self.url,
                data=data,
                method="POST",
                headers={"Content-Type": "application/json", "Idempotency-Key": line["ticket_id"]},
            )
            try:
                with urllib.request.urlopen(req, timeout=self.timeout) as resp:
                    if 200 <= resp.status < 300:
                        return True
                    last = f"HTTP {resp.status}"
            except urllib.error.HTTPError as exc:
                last = f"HTTP {exc.code}"
            except (urllib.error.URLError, OSError) as exc:
                last = str(exc)
            if attempt + 1 < self.attempts:
                time.sleep(self.backoff * (2**attempt))
        raise SinkError(f"webhook-unreachable: {self.url} ({last})")


@dataclass
class RouterConfig:
    model_path: str = ""
    persistence_path: str = "state/events.log"
    listen: str = "127.0.0.1:8080"
    queue_capacity: int = 1024
    worker_count: int = 4
    sink_dir: str = ""
    sink_files: dict[str, str] = field(default_factory=dict)
    webhooks: dict[str, str] = field(default_factory=dict)
    webhook_attempts: int = 3
    webhook_backoff: float = 0.2
    fsync: bool = False

    def __post_init__(self):
        if self.queue_capacity < 1 or self.worker_count < 1:
            raise ConfigError("queue_capacity and worker_count must be >= 1")

    @classmethod
    def from_mapping(cls, kv: Mapping[str, str], base_dir: str | Path = ".") -> "RouterConfig":
        base = Path(base_dir)

        def path(v: str) -> str:
            return str(base / v) if v and not os.path.isabs(v) else v

        kw: dict = {"sink_files": {}, "webhooks": {}}
        for key, value in kv.items():
            if key.startswith(("sink.", "webhook.")):
                kind, _, label = key.partition(".")
                if Label.parse(label) is None:
                    raise ConfigError(f"{key}: unknown label {label!r}")
                title = Label.parse(label).title
                if kind == "sink":
                    kw["sink_files"][title] = path(value)
                else:
                    kw["webhooks"][title] = value
            elif key == "model":
                kw["model_path"] = path(value)
            elif key == "persistence":
                kw["persistence_path"] = path(value)
            elif key == "sink_dir":
                kw["sink_dir"] = path(value)
            elif key == "listen":
                kw["listen"] = value
            elif key in ("queue_capacity", "worker_count", "webhook_attempts"):
                kw[key] = int(value)
            elif key == "webhook_backoff":
                kw[key] = float(value)
            elif key == "fsync":
                kw[key] = value.lower() in ("1", "true", "yes", "on")
            else:
                raise ConfigError(f"unknown router setting {key!r}")
        return cls(**kw)

    def sink_path(self, label: Label) -> str | None:
        if label.title in self.sink_files:
            return self.sink_files[label.title]
        if label.title in self.webhooks and not self.sink_dir:
            return None
        root = self.sink_dir or str(Path(self.persistence_path).parent / "sinks")
        return str(Path(root) / f"{label.name.lower()}.jsonl")


class Router:
    def __init__(self, config: RouterConfig, model: TrainedModel | None, model_fingerprint: str = ""):
        self.config = config
        self.model = model
        self.model_fingerprint = model_fingerprint
        self._records: dict[str, TicketRecord] = {}
        self._index_lock = threading.Lock()
        self._submit_lock = threading.Lock()
        self._work: queue.Queue = queue.Queue()
        self._route: queue.Queue = queue.Queue()
        self._threads: list[threading.Thread] = []
        self._processed = [0] * config.worker_count
        self._totals = {s: 0 for s in STATES}
        self._started = time.monotonic()
        self._running = False
        self.log: EventLog | None = None
        self.sinks: dict[Label, list] = {}

    # lifecycle

    def start(self, run_workers: bool = True) -> "Router":
        """Replay the event log, open sinks and launch the stages (``run_workers=False`` only restores state)."""
        records, to_classify, to_route = recover(self.config.persistence_path)
        self.log = EventLog(self.config.persistence_path, self.config.fsync)
        for label in LABELS:
            targets = []
            if label.title in self.config.webhooks:
                targets.append(
                    WebhookSink(self.config.webhooks[label.title], self.config.webhook_attempts, self.config.webhook_backoff)
                )
            p = self.config.sink_path(label)
            if p:
                targets.append(FileSink(p))
            self.sinks[label] = targets
        self._records = records
        for rec in records.values():
            for state in rec.timestamps:
                self._totals[state] += 1
        for tid in to_classify:
            self._work.put(tid)
        for tid in to_route:
            self._route.put(tid)
        if to_classify or to_route:
            log.info("recovered %d received and %d classified tickets", len(to_classify), len(to_route))
        self._started = time.monotonic()
        if run_workers:
            self.run_workers()
        return self

    def run_workers(self) -> None:
        self._running = True
        for i in range(self.config.worker_count):
            t = threading.Thread(target=self._worker_loop, args=(i,), name=f"worker-{i}", daemon=True)
            t.start()
            self._threads.append(t)
        t = threading.Thread(target=self._route_loop, name="router", daemon=True)
        t.start()
        self._threads.append(t)

    def stop(self, drain: bool = True, timeout: float = 30.0) -> None:
        if drain:
            self.wait_idle(timeout)
        self._running = False
        for _ in range(self.config.worker_count):
            self._work.put(None)
        self._route.put(None)
        for t in self._threads:
            t.join(timeout)
        self._threads.clear()
        if self.log:
            self.log.close()
        for targets in self.sinks.values():
            for s in targets:
                if isinstance(s, FileSink):
                    s.close()

    def wait_idle(self, timeout: float = 30.0) -> bool:
        deadline = time.monotonic() + timeout
        while time.monotonic() < deadline:
            if self.in_flight() == 0:
                return True
            time.sleep(0.01)
        return False

    # state

    def _commit(self, rec: TicketRecord, event: str, payload: dict) -> None:
        ts = self.log.append(rec.ticket_id, event, payload, rec.timestamps.get(event))
        with self._index_lock:
            self._records[rec.ticket_id] = rec
            self._totals[event] += 1

    def submit(self, subject: str | None, body: str | None, ticket_id: str | None = None) -> tuple[str, str]:
        if self.model is None:
            raise StateError("no model loaded")
        if not (subject or body):
            raise ValueError("payload needs a subject or a body")
        with self._submit_lock:
            if ticket_id is None:
                ticket_id = str(uuid.uuid4())
            if ticket_id in self._records:
                return ticket_id, "duplicate"
            if self._work.qsize() >= self.config.queue_capacity:
                return ticket_id, "rejected-full"
            rec = TicketRecord(ticket_id, subject or "", body or "", timestamps={"received": utc_now()})
            self._commit(rec, "received", {"subject": rec.subject, "body": rec.body})
            _crashpoint("after-received")
            self._work.put(ticket_id)
        return ticket_id, "accepted"

    def get(self, ticket_id: str) -> TicketRecord:
        with self._index_lock:
            try:
                return self._records[ticket_id]
            except KeyError:
                raise NotFound(ticket_id) from None

    def in_flight(self) -> int:
        with self._index_lock:
            return sum(1 for r in self._records.values() if r.state in ("received", "classified"))

    def snapshot(self) -> dict:
        with self._index_lock:
            current = {s: 0 for s in STATES}
            for r in self._records.values():
                current[r.state] += 1
            totals = dict(self._totals)
        return {
            "states": current,
            "totals": totals,
            "accepted": totals["received"],
            "queue_depth": self._work.qsize(),
            "route_queue_depth": self._route.qsize(),
            "workers": {f"worker-{i}": n for i, n in enumerate(self._processed)},
            "model_fingerprint": self.model_fingerprint,
            "uptime_seconds": round(time.monotonic() - self._started, 3),
        }

    # stages

    def _worker_loop(self, idx: int) -> None:
        while True:
            tid = self._work.get()
            if tid is None:
                return
            rec = worker_step(self.get(tid), self.model, self.model_fingerprint)
            if rec.state == "classified":
                payload = {
                    "label": rec.label.title,
                    "confidence": list(rec.confidence),
                    "model_fingerprint": rec.model_fingerprint,
                }
                self._commit(rec, "classified", payload)
                _crashpoint("after-classified")
                self._route.put(tid)
            else:
                self._commit(rec, "failed", {"reason": rec.reason})
            self._processed[idx] += 1

    def _route_loop(self) -> None:
        while True:
            tid = self._route.get()
            if tid is None:
                return
            rec = route(self.get(tid), self.sinks)
            _crashpoint("before-routed-event")
            if rec.state == "routed":
                self._commit(rec, "routed", {"sink": rec.label.title})
            else:
                self._commit(rec, "failed", {"reason": rec.reason})


def route(record: TicketRecord, sinks: Mapping[Label, list]) -> TicketRecord:
    """Deliver a classified ticket to its label's sinks; webhooks before files."""
    if record.state != "classified":
        raise StateError(f"ticket {record.ticket_id}: route needs state classified, got {record.state}")
    line = {
        "ticket_id": record.ticket_id,
        "label": record.label.title,
        "confidence": list(record.confidence),
        "ts": utc_now(),
    }
    try:
        for sink in sinks.get(record.label, []):
            sink.write(line)
            if isinstance(sink, FileSink):
                _crashpoint("after-sink-write")
    except SinkError as exc:
        return record.advance("failed", reason=str(exc).split(":")[0])
    return record.advance("routed")


# HTTP front-end


def make_handler(router: Router):
    class Handler(BaseHTTPRequestHandler):
        protocol_version = "HTTP/1.1"
        disable_nagle_algorithm = True

        def log_message(self, fmt, *args):
            log.debug("%s - %s", self.address_string(), fmt % args)

        def _send(self, status: int, payload) -> None:
            data = json.dumps(payload).encode("utf-8")
            self.send_response(status)
            self.send_header("Content-Type", "application/json")
            self.send_header("Content-Length", str(len(data)))
            self.end_headers()
            self.wfile.write(data)

        def do_GET(self):
            if self.path == "/healthz":
                return self._send(200, {"status": "ok"})
            if self.path == "/metrics":
                return self._send(200, router.snapshot())
            if self.path.startswith("/tickets/"):
                tid = urllib.request.unquote(self.path[len("/tickets/") :])
                try:
                    return self._send(200, router.get(tid).as_dict())
                except NotFound:
                    return self._send(404, {"error": "not-found", "ticket_id": tid})
            self._send(404, {"error": "no such endpoint"})

        def do_POST(self):
            if self.path != "/tickets":
                return self._send(404, {"error": "no such endpoint"})
            length = int(self.headers.get("Content-Length") or 0)
            try:
                body = json.loads(self.rfile.read(length) or b"{}")
                if not isinstance(body, dict):
                    raise ValueError("expected a JSON object")
                tid = body.get("ticket_id")
                tid, status = router.submit(body.get("subject"), body.get("body"), None if tid is None else str(tid))
            except (ValueError, json.JSONDecodeError) as exc:
                return self._send(400, {"error": str(exc)})
            except StateError as exc:
                return self._send(503, {"error": str(exc)})
            code = {"accepted": 202, "duplicate": 409, "rejected-full": 429}[status]
            self._send(code, {"ticket_id": tid, "status": status})

    return Handler


def parse_listen(listen: str) -> tuple[str, int]:
    host, _, port = listen.rpartition(":")
    return host or "127.0.0.1", int(port)


def serve(router: Router, ready=None) -> None:
    """Run the HTTP front-end until interrupted."""
    server = ThreadingHTTPServer(parse_listen(router.config.listen), make_handler(router))
    server.daemon_threads = True
    host, port = server.server_address[:2]
    log.info("listening on %s:%d", host, port)
    if ready:
        ready(host, port)
    try:
        server.serve_forever(poll_interval=0.1)
    except KeyboardInterrupt:
        pass
    finally:
        server.server_close()
        router.stop(drain=False)
