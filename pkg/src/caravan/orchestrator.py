"""Persisted task queue with leases, retries, heartbeats, and resumable units.

State is an append-only transition log (``tasks.log``, one canonical JSON
line per transition) replayed on startup, so a crashed process resumes with
every queued/running task intact. All operations take an optional ``now`` so
tests can drive a simulated clock; the default clock is wall time.
"""

from __future__ import annotations

import json
import os
import threading
import time
from dataclasses import dataclass, field
from datetime import datetime, timedelta
from pathlib import Path
from typing import Callable, Optional

from .core import format_timestamp, parse_timestamp, utcnow
from .errors import Conflict, InvalidArgument, LeaseLost, NotFound

STAGES = ("crawl", "analyze", "extract", "select", "merge", "preprocess", "train", "evaluate")

DEFAULT_LEASE_TTL = 30.0
DEFAULT_MAX_ATTEMPTS = 3


class Clock:
    """Wall-clock time source; replaced by a manual clock in tests."""

    def now(self) -> datetime:
        return utcnow()

    def sleep(self, seconds: float) -> None:
        time.sleep(seconds)


@dataclass(frozen=True)
class TaskSpec:
    task_id: str
    stage: str
    params: tuple[tuple[str, str], ...]
    master_seed: int
    submitted_at: datetime
    units: tuple[str, ...] = ()
    max_attempts: int = DEFAULT_MAX_ATTEMPTS

    def __post_init__(self):
        if self.stage not in STAGES:
            raise InvalidArgument(f"unknown stage: {self.stage}")
        if len(set(self.units)) != len(self.units):
            raise InvalidArgument("unit ids must be unique within a task")
        if self.max_attempts < 1:
            raise InvalidArgument("max_attempts must be positive")

    def to_dict(self) -> dict:
        return {
            "task_id": self.task_id,
            "stage": self.stage,
            "params": [[n, v] for n, v in self.params],
            "master_seed": self.master_seed,
            "submitted_at": format_timestamp(self.submitted_at),
            "units": list(self.units),
            "max_attempts": self.max_attempts,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "TaskSpec":
        return cls(
            task_id=data["task_id"],
            stage=data["stage"],
            params=tuple((n, v) for n, v in data["params"]),
            master_seed=int(data["master_seed"]),
            submitted_at=parse_timestamp(data["submitted_at"]),
            units=tuple(data["units"]),
            max_attempts=int(data["max_attempts"]),
        )


@dataclass
class TaskState:
    status: str = "queued"  # queued | running | succeeded | failed | cancelled
    attempt: int = 0
    worker: Optional[str] = None
    lease_expiry: Optional[datetime] = None
    completed_units: set[str] = field(default_factory=set)
    error: Optional[str] = None
    result: Optional[dict] = None
    started_at: Optional[datetime] = None
    finished_at: Optional[datetime] = None
    last_heartbeat: Optional[datetime] = None


TERMINAL = frozenset({"succeeded", "failed", "cancelled"})


@dataclass
class _Task:
    spec: TaskSpec
    state: TaskState


class TaskQueue:
    """Shared, thread-safe queue; transitions are atomic under one lock."""

    def __init__(
        self,
        log_path: str | Path,
        clock: Optional[Clock] = None,
        lease_ttl: float = DEFAULT_LEASE_TTL,
    ):
        self.log_path = Path(log_path)
        self.clock = clock or Clock()
        self.lease_ttl = lease_ttl
        self._lock = threading.RLock()
        self._tasks: dict[str, _Task] = {}
        self._submit_order: list[str] = []
        self.log_path.parent.mkdir(parents=True, exist_ok=True)
        self._replay()

    # -- persistence ---------------------------------------------------

    def _replay(self) -> None:
        if not self.log_path.exists():
            return
        with self.log_path.open("r", encoding="utf-8") as fh:
            for line in fh:
                line = line.strip()
                if not line:
                    continue
                try:
                    event = json.loads(line)
                except json.JSONDecodeError:
                    continue  # partial trailing line from a crash
                self._apply(event)

    def _apply(self, event: dict) -> None:
        op = event["op"]
        if op == "submit":
            spec = TaskSpec.from_dict(event["spec"])
            self._tasks[spec.task_id] = _Task(spec, TaskState())
            self._submit_order.append(spec.task_id)
            return
        task = self._tasks.get(event["task"])
        if task is None:
            return
        state = task.state
        if op == "claim":
            state.status = "running"
            state.attempt = event["attempt"]
            state.worker = event["worker"]
            state.lease_expiry = parse_timestamp(event["expiry"])
            state.last_heartbeat = parse_timestamp(event["now"])
            if state.started_at is None:
                state.started_at = parse_timestamp(event["now"])
        elif op == "heartbeat":
            state.lease_expiry = parse_timestamp(event["expiry"])
            state.last_heartbeat = parse_timestamp(event["now"])
        elif op == "unit":
            state.completed_units.add(event["unit"])
        elif op == "define_units":
            task.spec = TaskSpec.from_dict({**task.spec.to_dict(), "units": event["units"]})
        elif op == "complete":
            state.status = "succeeded"
            state.worker = None
            state.lease_expiry = None
            state.result = event.get("result")
            state.finished_at = parse_timestamp(event["now"])
        elif op == "fail":
            if event["requeue"]:
                state.status = "queued"
                state.worker = None
                state.lease_expiry = None
            else:
                state.status = "failed"
                state.error = event["error"]
                state.worker = None
                state.lease_expiry = None
                state.finished_at = parse_timestamp(event["now"])
        elif op == "expired":
            state.status = "failed"
            state.error = event["error"]
            state.worker = None
            state.lease_expiry = None
            state.finished_at = parse_timestamp(event["now"])
        elif op == "cancel":
            state.status = "cancelled"
            state.worker = None
            state.lease_expiry = None
            state.finished_at = parse_timestamp(event["now"])

    def _append(self, event: dict) -> None:
        line = json.dumps(event, sort_keys=True, separators=(",", ":"))
        with self.log_path.open("a", encoding="utf-8") as fh:
            fh.write(line + "\n")
            fh.flush()
            os.fsync(fh.fileno())

    def _log_and_apply(self, event: dict) -> None:
        self._append(event)
        self._apply(event)

    # -- helpers ---------------------------------------------------------

    def _now(self, now: Optional[datetime]) -> datetime:
        return now if now is not None else self.clock.now()

    def _get(self, task_id: str) -> _Task:
        task = self._tasks.get(task_id)
        if task is None:
            raise NotFound(f"unknown task: {task_id}")
        return task

    def _lease_valid(self, task: _Task, worker_id: str, now: datetime) -> bool:
        state = task.state
        return (
            state.status == "running"
            and state.worker == worker_id
            and state.lease_expiry is not None
            and now < state.lease_expiry
        )

    def _require_lease(self, task_id: str, worker_id: str, now: datetime) -> _Task:
        task = self._get(task_id)
        if not self._lease_valid(task, worker_id, now):
            raise LeaseLost(f"lease lost on task {task_id}")
        return task

    # -- operations ------------------------------------------------------

    def submit(self, spec: TaskSpec) -> str:
        with self._lock:
            if spec.task_id in self._tasks:
                raise Conflict(f"task already submitted: {spec.task_id}")
            self._log_and_apply({"op": "submit", "spec": spec.to_dict()})
            return spec.task_id

    def claim(
        self, worker_id: str, now: Optional[datetime] = None
    ) -> Optional[tuple[str, int, datetime]]:
        with self._lock:
            now = self._now(now)
            for task_id in self._submit_order:
                task = self._tasks[task_id]
                state = task.state
                eligible = state.status == "queued"
                if (
                    state.status == "running"
                    and state.lease_expiry is not None
                    and now >= state.lease_expiry
                ):
                    if state.attempt + 1 > task.spec.max_attempts:
                        self._log_and_apply(
                            {
                                "op": "expired",
                                "task": task_id,
                                "error": f"lease expired after attempt {state.attempt}"
                                f" of {task.spec.max_attempts}",
                                "now": format_timestamp(now),
                            }
                        )
                        continue
                    eligible = True
                if not eligible:
                    continue
                attempt = state.attempt + 1
                if attempt > task.spec.max_attempts:
                    continue  # queued task already at the attempt ceiling
                expiry = now + timedelta(seconds=self.lease_ttl)
                self._log_and_apply(
                    {
                        "op": "claim",
                        "task": task_id,
                        "worker": worker_id,
                        "attempt": attempt,
                        "now": format_timestamp(now),
                        "expiry": format_timestamp(expiry),
                    }
                )
                return task_id, attempt, expiry
            return None

    def heartbeat(self, task_id: str, worker_id: str, now: Optional[datetime] = None) -> datetime:
        with self._lock:
            now = self._now(now)
            task = self._require_lease(task_id, worker_id, now)
            expiry = now + timedelta(seconds=self.lease_ttl)
            self._log_and_apply(
                {
                    "op": "heartbeat",
                    "task": task_id,
                    "worker": worker_id,
                    "now": format_timestamp(now),
                    "expiry": format_timestamp(expiry),
                }
            )
            return expiry

    def define_units(
        self, task_id: str, worker_id: str, units: list[str], now: Optional[datetime] = None
    ) -> None:
        """Set the unit list for a task submitted without one (e.g. crawl
        learns its packages from the index). Idempotent for identical lists."""
        with self._lock:
            now = self._now(now)
            task = self._require_lease(task_id, worker_id, now)
            if task.spec.units:
                if tuple(units) == task.spec.units:
                    return
                raise Conflict(f"units already defined for task {task_id}")
            if len(set(units)) != len(units):
                raise InvalidArgument("unit ids must be unique within a task")
            self._log_and_apply(
                {"op": "define_units", "task": task_id, "units": list(units)}
            )

    def record_unit_done(
        self, task_id: str, worker_id: str, unit_id: str, now: Optional[datetime] = None
    ) -> None:
        with self._lock:
            now = self._now(now)
            task = self._require_lease(task_id, worker_id, now)
            if unit_id not in task.spec.units:
                raise InvalidArgument(f"unknown unit id: {unit_id}")
            if unit_id in task.state.completed_units:
                return  # idempotent
            self._log_and_apply({"op": "unit", "task": task_id, "unit": unit_id})

    def complete(
        self,
        task_id: str,
        worker_id: str,
        result: Optional[dict] = None,
        now: Optional[datetime] = None,
    ) -> None:
        with self._lock:
            now = self._now(now)
            self._require_lease(task_id, worker_id, now)
            self._log_and_apply(
                {
                    "op": "complete",
                    "task": task_id,
                    "result": result,
                    "now": format_timestamp(now),
                }
            )

    def fail(
        self,
        task_id: str,
        worker_id: str,
        error: str,
        retryable: bool,
        now: Optional[datetime] = None,
    ) -> None:
        with self._lock:
            now = self._now(now)
            task = self._require_lease(task_id, worker_id, now)
            requeue = retryable and task.state.attempt < task.spec.max_attempts
            self._log_and_apply(
                {
                    "op": "fail",
                    "task": task_id,
                    "error": error,
                    "requeue": requeue,
                    "now": format_timestamp(now),
                }
            )

    def cancel(self, task_id: str, now: Optional[datetime] = None) -> None:
        with self._lock:
            now = self._now(now)
            task = self._get(task_id)
            if task.state.status in TERMINAL:
                raise Conflict(f"task {task_id} already {task.state.status}")
            self._log_and_apply(
                {"op": "cancel", "task": task_id, "now": format_timestamp(now)}
            )

    # -- views -----------------------------------------------------------

    def get(self, task_id: str) -> tuple[TaskSpec, TaskState]:
        with self._lock:
            task = self._get(task_id)
            return task.spec, task.state

    def completed_units(self, task_id: str) -> set[str]:
        with self._lock:
            return set(self._get(task_id).state.completed_units)

    def task_ids(self) -> list[str]:
        with self._lock:
            return list(self._submit_order)

    def snapshot(self) -> dict:
        with self._lock:
            counts = {s: 0 for s in ("queued", "running", "succeeded", "failed", "cancelled")}
            workers: dict[str, dict] = {}
            terminal: list[tuple[datetime, dict]] = []
            for task_id in self._submit_order:
                task = self._tasks[task_id]
                state = task.state
                counts[state.status] += 1
                if state.status == "running" and state.worker:
                    workers[state.worker] = {
                        "task_id": task_id,
                        "stage": task.spec.stage,
                        "last_heartbeat": format_timestamp(state.last_heartbeat)
                        if state.last_heartbeat
                        else None,
                    }
                if state.status in TERMINAL and state.finished_at is not None:
                    duration = None
                    if state.started_at is not None:
                        duration = (state.finished_at - state.started_at).total_seconds()
                    terminal.append(
                        (
                            state.finished_at,
                            {
                                "task_id": task_id,
                                "stage": task.spec.stage,
                                "status": state.status,
                                "finished_at": format_timestamp(state.finished_at),
                                "duration_seconds": duration,
                                "error": state.error,
                            },
                        )
                    )
            terminal.sort(key=lambda item: (item[0], item[1]["task_id"]), reverse=True)
            return {
                "counts": counts,
                "workers": workers,
                "recent": [entry for _, entry in terminal[:50]],
            }


class Lease:
    """Worker-side handle for one claimed task."""

    def __init__(self, queue: TaskQueue, task_id: str, worker_id: str, attempt: int):
        self.queue = queue
        self.task_id = task_id
        self.worker_id = worker_id
        self.attempt = attempt
        self.lost = threading.Event()

    def heartbeat(self) -> None:
        try:
            self.queue.heartbeat(self.task_id, self.worker_id)
        except LeaseLost:
            self.lost.set()
            raise

    def check(self) -> None:
        if self.lost.is_set():
            raise LeaseLost(f"lease lost on task {self.task_id}")

    def completed_units(self) -> set[str]:
        return self.queue.completed_units(self.task_id)

    def define_units(self, units: list[str]) -> None:
        self.queue.define_units(self.task_id, self.worker_id, units)

    def record_unit_done(self, unit_id: str) -> None:
        self.check()
        self.queue.record_unit_done(self.task_id, self.worker_id, unit_id)


Handler = Callable[[TaskSpec, Lease], Optional[dict]]


class WorkerPool:
    """In-process thread pool executing stage handlers against the queue.

    Each worker loops claim -> run handler -> complete/fail; a per-task
    ticker thread renews the lease every ``lease_ttl / 3`` seconds and flags
    the lease as lost (handlers notice at their next ``check()``).
    """

    def __init__(
        self,
        queue: TaskQueue,
        handlers: dict[str, Handler],
        worker_count: int,
        poll_interval: float = 0.05,
    ):
        self.queue = queue
        self.handlers = handlers
        self.worker_count = worker_count
        self.poll_interval = poll_interval
        self._stop = threading.Event()
        self._threads: list[threading.Thread] = []

    def start(self) -> None:
        for index in range(self.worker_count):
            thread = threading.Thread(
                target=self._run_worker, args=(f"worker-{index}",), daemon=True
            )
            thread.start()
            self._threads.append(thread)

    def stop(self) -> None:
        self._stop.set()
        for thread in self._threads:
            thread.join(timeout=10)
        self._threads.clear()

    def _run_worker(self, worker_id: str) -> None:
        while not self._stop.is_set():
            claimed = self.queue.claim(worker_id)
            if claimed is None:
                self._stop.wait(self.poll_interval)
                continue
            task_id, attempt, _expiry = claimed
            self._execute(worker_id, task_id, attempt)

    def _execute(self, worker_id: str, task_id: str, attempt: int) -> None:
        spec, _state = self.queue.get(task_id)
        lease = Lease(self.queue, task_id, worker_id, attempt)
        ticker_stop = threading.Event()

        def tick() -> None:
            interval = max(self.queue.lease_ttl / 3.0, 0.01)
            while not ticker_stop.wait(interval):
                try:
                    lease.heartbeat()
                except LeaseLost:
                    return

        ticker = threading.Thread(target=tick, daemon=True)
        ticker.start()
        try:
            handler = self.handlers.get(spec.stage)
            if handler is None:
                self.queue.fail(task_id, worker_id, f"no handler for stage {spec.stage}", False)
                return
            result = handler(spec, lease)
        except LeaseLost:
            return  # task was re-leased or cancelled; abandon silently
        except Exception as exc:  # noqa: BLE001 - worker boundary
            retryable = getattr(exc, "code", "") == "retryable"
            message = getattr(exc, "message", None) or str(exc)
            try:
                self.queue.fail(task_id, worker_id, message, retryable)
            except LeaseLost:
                pass
            return
        finally:
            ticker_stop.set()
        try:
            self.queue.complete(task_id, worker_id, result=result)
        except LeaseLost:
            pass
