"""HTTP service for the human-in-the-loop steps: triage and pairwise duels.

Two queues back the workflow: composite triage (accept / reject-with-reason)
and pairwise realism comparisons between generation methods on the same
target. Every state change is an event appended to a durable JSONL log;
service state is a pure replay of that log, so a crash or restart loses
nothing and rebuilds identically.
"""

from __future__ import annotations

import json
import logging
import os
import threading
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from fastapi import FastAPI
from fastapi.responses import FileResponse, JSONResponse, PlainTextResponse
from fastapi.staticfiles import StaticFiles

log = logging.getLogger(__name__)

PENDING = "pending"
ACCEPTED = "accepted"
REJECTED = "rejected"

REJECT_REASONS = ("occluded_foreground", "hue_change", "object_change",
                  "unrealistic")


# ---------------------------------------------------------------------------
# event log


class EventLog:
    """Append-only JSONL event log; every append is fsynced before returning."""

    def __init__(self, path):
        self.path = Path(path)
        self.path.parent.mkdir(parents=True, exist_ok=True)
        self._lock = threading.Lock()
        self._seq = 0
        if self.path.exists():
            for ev in self.replay():
                self._seq = max(self._seq, ev["seq"])
        self._fh = open(self.path, "a", encoding="utf-8")

    def replay(self):
        if not self.path.exists():
            return
        with open(self.path, encoding="utf-8") as fh:
            for line in fh:
                line = line.strip()
                if line:
                    yield json.loads(line)

    def append(self, kind: str, **payload) -> dict:
        with self._lock:
            self._seq += 1
            event = {"seq": self._seq, "kind": kind, **payload}
            self._fh.write(json.dumps(event, sort_keys=True) + "\n")
            self._fh.flush()
            os.fsync(self._fh.fileno())
            return event

    def close(self):
        self._fh.close()


# ---------------------------------------------------------------------------
# replayed state


@dataclass
class ReviewItem:
    item_id: str
    composite_path: str
    real_path: str
    mask_path: str
    method: str
    status: str = PENDING
    reason: str | None = None


@dataclass
class Duel:
    duel_id: str
    source_id: str
    method_a: str
    method_b: str
    image_a_path: str
    image_b_path: str
    served: int = 0


@dataclass
class TaskState:
    task_id: str
    duel_id: str
    session_id: str
    flip: bool
    winner: str | None = None  # displayed coordinates, "a" or "b"


@dataclass
class ReviewState:
    """Pure function of the event log: apply() is the only mutator."""

    items: dict[str, ReviewItem] = field(default_factory=dict)
    item_order: list[str] = field(default_factory=list)
    duels: dict[str, Duel] = field(default_factory=dict)
    duel_order: list[str] = field(default_factory=list)
    sessions: set[str] = field(default_factory=set)
    seen: dict[str, set[str]] = field(default_factory=dict)   # session -> duels
    tasks: dict[str, TaskState] = field(default_factory=dict)
    results: list[dict] = field(default_factory=list)

    def apply(self, ev: dict) -> None:
        kind = ev["kind"]
        if kind == "item_added":
            item = ReviewItem(
                item_id=ev["item_id"], composite_path=ev["composite_path"],
                real_path=ev["real_path"], mask_path=ev["mask_path"],
                method=ev["method"])
            self.items[item.item_id] = item
            self.item_order.append(item.item_id)
        elif kind == "verdict":
            item = self.items[ev["item_id"]]
            item.status = ev["status"]
            item.reason = ev.get("reason")
        elif kind == "duel_added":
            duel = Duel(
                duel_id=ev["duel_id"], source_id=ev["source_id"],
                method_a=ev["method_a"], method_b=ev["method_b"],
                image_a_path=ev["image_a_path"],
                image_b_path=ev["image_b_path"])
            self.duels[duel.duel_id] = duel
            self.duel_order.append(duel.duel_id)
        elif kind == "session_opened":
            self.sessions.add(ev["session_id"])
            self.seen.setdefault(ev["session_id"], set())
        elif kind == "task_served":
            task = TaskState(
                task_id=ev["task_id"], duel_id=ev["duel_id"],
                session_id=ev["session_id"], flip=bool(ev["flip"]))
            self.tasks[task.task_id] = task
            self.duels[task.duel_id].served += 1
            self.seen.setdefault(task.session_id, set()).add(task.duel_id)
        elif kind == "comparison":
            task = self.tasks[ev["task_id"]]
            task.winner = ev["winner"]
            duel = self.duels[task.duel_id]
            shown_a = duel.method_b if task.flip else duel.method_a
            shown_b = duel.method_a if task.flip else duel.method_b
            self.results.append({
                "method_a": shown_a,
                "method_b": shown_b,
                "winner": shown_a if ev["winner"] == "a" else shown_b,
            })
        else:
            raise ValueError(f"unknown event kind {kind!r}")

    def pending_items(self) -> list[ReviewItem]:
        return [self.items[i] for i in self.item_order
                if self.items[i].status == PENDING]

    def snapshot(self) -> dict:
        """Canonical dict of all state, for replay-identity checks."""
        return {
            "items": {i: [it.status, it.reason]
                      for i, it in sorted(self.items.items())},
            "duels": {d: [du.method_a, du.method_b, du.served]
                      for d, du in sorted(self.duels.items())},
            "sessions": sorted(self.sessions),
            "seen": {s: sorted(v) for s, v in sorted(self.seen.items())},
            "tasks": {t: [tk.duel_id, tk.session_id, tk.flip, tk.winner]
                      for t, tk in sorted(self.tasks.items())},
            "results": self.results,
        }


# ---------------------------------------------------------------------------
# service


class ConflictError(Exception):
    pass


class NotFoundError(Exception):
    pass


class BadRequestError(Exception):
    pass


class ReviewService:
    """Event-sourced triage + comparison backend."""

    def __init__(self, state_dir, dataset_root, seed: int = 0):
        self.dataset_root = Path(dataset_root)
        self.log = EventLog(Path(state_dir) / "events.jsonl")
        self.state = ReviewState()
        for ev in self.log.replay():
            self.state.apply(ev)
        self._rng = np.random.default_rng(seed)
        self._lock = threading.Lock()

    def _emit(self, kind: str, **payload) -> None:
        # ack only after the event is durably on disk
        ev = self.log.append(kind, **payload)
        self.state.apply(ev)

    # -- triage ------------------------------------------------------------

    def enqueue_from_manifest(self, manifest_path) -> int:
        """Add one pending item per unreviewed manifest record; idempotent."""
        manifest_path = Path(manifest_path)
        rows = []
        with open(manifest_path, encoding="utf-8") as fh:
            for line in fh:
                line = line.strip()
                if line:
                    rows.append(json.loads(line))
        with self._lock:
            for row in rows:
                rid = row["record_id"]
                if rid in self.state.items:
                    continue
                self._emit("item_added", item_id=rid,
                           composite_path=row["composite_path"],
                           real_path=row["real_path"],
                           mask_path=row["mask_path"],
                           method=row["method"])
            self._enqueue_duels(rows)
            return len(self.state.pending_items())

    def _enqueue_duels(self, rows: list[dict]) -> None:
        groups: dict[str, list[dict]] = {}
        for row in rows:
            groups.setdefault(row["real_path"], []).append(row)
        for real_path in sorted(groups):
            group = sorted(groups[real_path], key=lambda r: r["record_id"])
            for i in range(len(group)):
                for j in range(i + 1, len(group)):
                    a, b = group[i], group[j]
                    if a["method"] == b["method"]:
                        continue
                    duel_id = f"{a['record_id']}|{b['record_id']}"
                    if duel_id in self.state.duels:
                        continue
                    self._emit("duel_added", duel_id=duel_id,
                               source_id=real_path,
                               method_a=a["method"], method_b=b["method"],
                               image_a_path=a["composite_path"],
                               image_b_path=b["composite_path"])

    def next_review_item(self) -> ReviewItem:
        pending = self.state.pending_items()
        if not pending:
            raise NotFoundError("empty_queue")
        return pending[0]

    def submit_verdict(self, item_id: str, verdict: str,
                       reason: str | None = None) -> ReviewItem:
        with self._lock:
            item = self.state.items.get(item_id)
            if item is None:
                raise NotFoundError("unknown_item")
            if item.status != PENDING:
                raise ConflictError("already_decided")
            if verdict == "accept":
                self._emit("verdict", item_id=item_id, status=ACCEPTED)
            elif verdict == "reject":
                if reason not in REJECT_REASONS:
                    raise BadRequestError("bad_reason")
                self._emit("verdict", item_id=item_id, status=REJECTED,
                           reason=reason)
            else:
                raise BadRequestError("bad_verdict")
            return self.state.items[item_id]

    # -- comparisons ---------------------------------------------------------

    def open_session(self) -> str:
        with self._lock:
            session_id = f"sess-{len(self.state.sessions):04d}-" \
                         f"{self._rng.integers(16**6):06x}"
            self._emit("session_opened", session_id=session_id)
            return session_id

    def next_comparison(self, session_id: str) -> tuple[TaskState, Duel, int]:
        """Serve the least-served duel this session has not seen yet.

        Left/right display order is randomized per serving and recorded in
        the log, so replay reconstructs the exact same assignment.
        """
        with self._lock:
            if session_id not in self.state.sessions:
                raise NotFoundError("unknown_session")
            seen = self.state.seen.get(session_id, set())
            eligible = [(self.state.duels[d].served, idx, d)
                        for idx, d in enumerate(self.state.duel_order)
                        if d not in seen]
            if not eligible:
                raise NotFoundError("exhausted")
            _, _, duel_id = min(eligible)
            duel = self.state.duels[duel_id]
            flip = bool(self._rng.integers(2))
            task_id = f"task-{len(self.state.tasks):06d}"
            self._emit("task_served", task_id=task_id, duel_id=duel_id,
                       session_id=session_id, flip=flip)
            remaining = len(eligible) - 1
            return self.state.tasks[task_id], duel, remaining

    def submit_comparison(self, task_id: str, session_id: str,
                          winner: str) -> dict:
        with self._lock:
            task = self.state.tasks.get(task_id)
            if task is None:
                raise NotFoundError("unknown_task")
            if task.session_id != session_id:
                raise BadRequestError("wrong_session")
            if task.winner is not None:
                raise ConflictError("already_submitted")
            if winner not in ("a", "b"):
                raise BadRequestError("bad_winner")
            self._emit("comparison", task_id=task_id, winner=winner)
            return self.state.results[-1]

    # -- exports -------------------------------------------------------------

    def export_comparisons(self) -> str:
        if not self.state.results:
            raise NotFoundError("no_data")
        lines = [json.dumps(r, sort_keys=True) for r in self.state.results]
        return "\n".join(lines) + "\n"

    def export_manifest_view(self) -> list[dict]:
        """Triage outcome per item; rejected records drop out of the dataset."""
        rows = []
        for item_id in self.state.item_order:
            item = self.state.items[item_id]
            if item.status == REJECTED:
                continue
            rows.append({
                "record_id": item.item_id,
                "composite_path": item.composite_path,
                "method": item.method,
                "human_verdict": None if item.status == PENDING else "accept",
            })
        return rows

    def stats(self) -> dict:
        items = self.state.items.values()
        return {
            "items": len(self.state.items),
            "pending": sum(1 for i in items if i.status == PENDING),
            "accepted": sum(1 for i in self.state.items.values()
                            if i.status == ACCEPTED),
            "rejected": sum(1 for i in self.state.items.values()
                            if i.status == REJECTED),
            "duels": len(self.state.duels),
            "served": sum(d.served for d in self.state.duels.values()),
            "comparisons": len(self.state.results),
        }

    # -- images ----------------------------------------------------------------

    def image_path(self, kind: str, ident: str) -> Path:
        """Resolve an image URL; duel slots hide which method produced them."""
        if kind in ("duel-a", "duel-b"):
            task = self.state.tasks.get(ident)
            if task is None:
                raise NotFoundError("unknown_task")
            duel = self.state.duels[task.duel_id]
            want_a = (kind == "duel-a")
            shows_first = want_a != task.flip  # flip swaps the two slots
            rel = duel.image_a_path if shows_first else duel.image_b_path
            return self.dataset_root / rel
        if kind in ("composite", "real", "mask"):
            item = self.state.items.get(ident)
            if item is None:
                raise NotFoundError("unknown_item")
            rel = {"composite": item.composite_path,
                   "real": item.real_path,
                   "mask": item.mask_path}[kind]
            return self.dataset_root / rel
        raise NotFoundError("unknown_kind")


# ---------------------------------------------------------------------------
# HTTP layer


def _error(status: int, tag: str) -> JSONResponse:
    return JSONResponse({"error": tag}, status_code=status)


def _status_for(exc: Exception) -> JSONResponse:
    if isinstance(exc, NotFoundError):
        return _error(404, str(exc))
    if isinstance(exc, ConflictError):
        return _error(409, str(exc))
    if isinstance(exc, BadRequestError):
        return _error(422, str(exc))
    raise exc


def create_app(state_dir, dataset_root, manifest_path=None, seed: int = 0,
               frontend_dir=None) -> FastAPI:
    """Build the FastAPI app; optionally pre-load a manifest and static UI."""
    service = ReviewService(state_dir, dataset_root, seed=seed)
    if manifest_path is not None:
        n = service.enqueue_from_manifest(manifest_path)
        log.info("queue holds %d pending items", n)
    app = FastAPI(title="harmonytk review service")
    app.state.service = service

    @app.post("/api/session")
    def open_session():
        return {"session_id": service.open_session()}

    @app.get("/api/review/next")
    def review_next():
        try:
            item = service.next_review_item()
        except Exception as exc:  # noqa: BLE001 - mapped to HTTP codes
            return _status_for(exc)
        return {
            "item_id": item.item_id,
            "composite_url": f"/img/composite/{item.item_id}",
            "real_url": f"/img/real/{item.item_id}",
            "mask_url": f"/img/mask/{item.item_id}",
            "pending": len(service.state.pending_items()),
        }

    @app.post("/api/review/{item_id}/verdict")
    def review_verdict(item_id: str, body: dict):
        try:
            item = service.submit_verdict(item_id, body.get("verdict", ""),
                                          body.get("reason"))
        except Exception as exc:  # noqa: BLE001
            return _status_for(exc)
        return {"item_id": item.item_id, "status": item.status,
                "reason": item.reason}

    @app.get("/api/compare/next")
    def compare_next(session: str = ""):
        try:
            task, _, remaining = service.next_comparison(session)
        except Exception as exc:  # noqa: BLE001
            return _status_for(exc)
        return {
            "task_id": task.task_id,
            "image_a_url": f"/img/duel-a/{task.task_id}",
            "image_b_url": f"/img/duel-b/{task.task_id}",
            "remaining": remaining,
        }

    @app.post("/api/compare/{task_id}")
    def compare_submit(task_id: str, body: dict, session: str = ""):
        try:
            service.submit_comparison(task_id, session,
                                      body.get("winner", ""))
        except Exception as exc:  # noqa: BLE001
            return _status_for(exc)
        return {"task_id": task_id, "recorded": True}

    @app.get("/api/export/comparisons")
    def export_comparisons():
        try:
            text = service.export_comparisons()
        except Exception as exc:  # noqa: BLE001
            return _status_for(exc)
        return PlainTextResponse(text, media_type="application/x-ndjson")

    @app.get("/api/export/manifest")
    def export_manifest():
        return {"records": service.export_manifest_view()}

    @app.get("/api/stats")
    def stats():
        return service.stats()

    @app.get("/img/{kind}/{ident}")
    def image(kind: str, ident: str):
        try:
            path = service.image_path(kind, ident)
        except Exception as exc:  # noqa: BLE001
            return _status_for(exc)
        if not path.exists():
            return _error(404, "missing_file")
        return FileResponse(path)

    if frontend_dir is not None and Path(frontend_dir).is_dir():
        app.mount("/", StaticFiles(directory=frontend_dir, html=True),
                  name="ui")
    return app
