"""Event fan-out: subscriptions with bounded buffers, and the live-call board.

Publishing never blocks.  A subscriber that falls a full buffer behind is cut
off with a final overflow notice; everyone else keeps their complete, ordered
stream.
"""

from __future__ import annotations

import itertools
import json
import queue
import threading
import time
from dataclasses import dataclass
from typing import Any, Iterator, Optional

from .events import SEVERITIES, CallEvent, IntentMatched, RiskScoreUpdated, encode_event

DEFAULT_BUFFER_CAPACITY = 1024
RECENT_INTENTS_KEPT = 5

_SEVERITY_RANK = {name: i for i, name in enumerate(SEVERITIES)}


class FilterError(ValueError):
    pass


@dataclass(frozen=True)
class SubscriptionFilter:
    call_ids: Optional[frozenset[str]] = None      # None = all calls
    event_types: Optional[frozenset[str]] = None   # None = all types
    min_severity: Optional[str] = None             # applies to rule_triggered

    def __post_init__(self) -> None:
        if self.min_severity is not None and self.min_severity not in SEVERITIES:
            raise FilterError(f"unknown severity {self.min_severity!r}")
        if self.event_types is not None:
            from .events import EVENT_TYPES

            unknown = self.event_types - frozenset(EVENT_TYPES)
            if unknown:
                raise FilterError(f"unknown event types {sorted(unknown)}")

    def accepts(self, e: CallEvent) -> bool:
        if self.call_ids is not None and e.call_id not in self.call_ids:
            return False
        if self.event_types is not None and e.type not in self.event_types:
            return False
        if self.min_severity is not None and e.type == "rule_triggered":
            if _SEVERITY_RANK[e.payload.severity] < _SEVERITY_RANK[self.min_severity]:
                return False
        return True


def overflow_notice() -> str:
    return json.dumps(
        {"v": 1, "type": "stream_error", "reason": "slow_consumer"},
        separators=(",", ":"),
    )


class Subscription:
    """One subscriber's bounded delivery buffer of canonical JSON lines."""

    _ids = itertools.count(1)

    def __init__(self, filter: SubscriptionFilter, capacity: int = DEFAULT_BUFFER_CAPACITY):
        if capacity < 1:
            raise ValueError("capacity must be >= 1")
        self.id = next(Subscription._ids)
        self.filter = filter
        self._queue: queue.Queue[str] = queue.Queue(maxsize=capacity)
        self._overflowed = False
        self._closed = False

    @property
    def overflowed(self) -> bool:
        return self._overflowed

    @property
    def closed(self) -> bool:
        return self._closed

    def _offer(self, line: str) -> bool:
        """Non-blocking enqueue; marks the subscription dead on overflow."""
        if self._closed:
            return False
        try:
            self._queue.put_nowait(line)
            return True
        except queue.Full:
            self._overflowed = True
            self._closed = True
            return False

    def close(self) -> None:
        self._closed = True

    def get(self, timeout: Optional[float] = None) -> Optional[str]:
        """Next line, or None once the stream is finished (after draining)."""
        deadline = None if timeout is None else time.monotonic() + timeout
        while True:
            if self._closed and self._queue.empty():
                if self._overflowed:
                    self._overflowed = False  # notice delivered once
                    return overflow_notice()
                return None
            wait = 0.05
            if deadline is not None:
                remaining = deadline - time.monotonic()
                if remaining <= 0:
                    return None
                wait = min(wait, remaining)
            try:
                return self._queue.get(timeout=wait)
            except queue.Empty:
                continue

    def lines(self, idle_timeout: Optional[float] = None) -> Iterator[str]:
        """Iterate lines until the stream closes (or stays idle past timeout)."""
        while True:
            line = self.get(timeout=idle_timeout)
            if line is None:
                if self._closed or idle_timeout is not None:
                    return
                continue
            yield line


class LiveCallDirectory:
    """Tracks exactly the calls between CallStarted and CallEnded."""

    def __init__(self) -> None:
        self._lock = threading.Lock()
        self._calls: dict[str, dict[str, Any]] = {}

    def apply(self, e: CallEvent) -> None:
        with self._lock:
            if e.type == "call_started":
                self._calls[e.call_id] = {
                    "call_id": e.call_id,
                    "risk": 0,
                    "recent_intents": [],
                    "started_wall_ms": int(time.time() * 1000),
                    "last_ts_ms": e.ts_ms,
                }
                return
            entry = self._calls.get(e.call_id)
            if entry is None:
                return
            entry["last_ts_ms"] = max(entry["last_ts_ms"], e.ts_ms)
            if e.type == "call_ended":
                del self._calls[e.call_id]
            elif isinstance(e.payload, IntentMatched):
                recent = [e.payload.intent.intent_id] + entry["recent_intents"]
                entry["recent_intents"] = recent[:RECENT_INTENTS_KEPT]
            elif isinstance(e.payload, RiskScoreUpdated):
                entry["risk"] = e.payload.score

    def live_ids(self) -> list[str]:
        with self._lock:
            return sorted(self._calls)

    def snapshot(self) -> list[dict[str, Any]]:
        with self._lock:
            return [dict(self._calls[cid]) for cid in sorted(self._calls)]


def snapshot_line(directory: LiveCallDirectory) -> str:
    return json.dumps(
        {"v": 1, "type": "live_snapshot", "calls": directory.snapshot()},
        separators=(",", ":"),
        ensure_ascii=False,
    )


class EventHub:
    """Fan-out of the event stream to all matching subscriptions."""

    def __init__(self, directory: Optional[LiveCallDirectory] = None):
        self.directory = directory if directory is not None else LiveCallDirectory()
        self._lock = threading.Lock()
        self._subs: list[Subscription] = []

    def subscribe(
        self,
        filter: SubscriptionFilter = SubscriptionFilter(),
        capacity: int = DEFAULT_BUFFER_CAPACITY,
    ) -> Subscription:
        """Register a subscriber; a live-directory snapshot line comes first,
        and every matching event published afterwards is guaranteed."""
        sub = Subscription(filter, capacity)
        with self._lock:
            sub._offer(snapshot_line(self.directory))
            self._subs.append(sub)
        return sub

    def unsubscribe(self, sub: Subscription) -> None:
        sub.close()
        with self._lock:
            self._subs = [s for s in self._subs if s.id != sub.id]

    def publish(self, e: CallEvent) -> int:
        """Deliver to every matching live subscription; never blocks.

        Returns the number of subscribers the event was handed to.  Overflowed
        subscribers are dropped from the roster here.
        """
        self.directory.apply(e)
        line: Optional[str] = None
        delivered = 0
        dead: list[Subscription] = []
        with self._lock:
            for sub in self._subs:
                if not sub.filter.accepts(e):
                    continue
                if line is None:
                    line = encode_event(e)
                if sub._offer(line):
                    delivered += 1
                else:
                    dead.append(sub)
            if dead:
                dead_ids = {s.id for s in dead}
                self._subs = [s for s in self._subs if s.id not in dead_ids]
        return delivered

    def subscriber_count(self) -> int:
        with self._lock:
            return len(self._subs)
