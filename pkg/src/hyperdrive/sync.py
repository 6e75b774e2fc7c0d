"""Approximate-time matching of multi-rate sensor streams.

Camera messages (RGB, VNIR, SWIR) are matched into triples whose
timestamps all fall within ``window_ns`` of a pivot, the newest of the
candidate heads. Spectrometer packets are attached to each triple: the
latest packet inside the window if there is one, otherwise the most recent
earlier packet, flagged stale.
"""

from __future__ import annotations

import threading
from collections import deque
from dataclasses import dataclass, field
from typing import Any, Iterable, Optional, Sequence

from .errors import InvalidArgumentError, MonotonicityError

__all__ = [
    "TimedMessage",
    "SyncPolicy",
    "SyncTuple",
    "Synchronizer",
    "synchronize",
    "downsample",
    "CAMERA_STREAMS",
    "SPECTROMETER_STREAMS",
]

CAMERA_STREAMS = ("rgb", "vnir", "swir")
SPECTROMETER_STREAMS = ("visnir", "nir")


@dataclass
class TimedMessage:
    stream_id: str
    timestamp_ns: int
    payload: Any = None


@dataclass(frozen=True)
class SyncPolicy:
    required_streams: tuple = CAMERA_STREAMS
    attached_streams: tuple = SPECTROMETER_STREAMS
    window_ns: int = 50_000_000
    queue_depth: int = 32

    def __post_init__(self):
        if self.window_ns <= 0:
            raise InvalidArgumentError("window_ns must be positive")
        if self.queue_depth < 1:
            raise InvalidArgumentError("queue_depth must be at least 1")
        if not self.required_streams:
            raise InvalidArgumentError("at least one required stream is needed")
        if set(self.required_streams) & set(self.attached_streams):
            raise InvalidArgumentError("a stream cannot be both required and attached")


@dataclass(frozen=True)
class SyncTuple:
    pivot_ns: int
    members: dict
    attachments: dict = field(default_factory=dict)
    stale: dict = field(default_factory=dict)

    def messages(self) -> list:
        out = list(self.members.values())
        out += [m for m in self.attachments.values() if m is not None]
        return out


class Synchronizer:
    """Stateful matcher; ``push`` is safe to call from several threads."""

    def __init__(self, policy: SyncPolicy = SyncPolicy()):
        self.policy = policy
        self._buffers = {s: deque() for s in policy.required_streams + policy.attached_streams}
        self._last_ts = {s: None for s in self._buffers}
        self._last_pivot: Optional[int] = None
        self._lock = threading.Lock()
        self.pushed = 0
        self.dropped = 0
        self.emitted = 0

    @property
    def buffered(self) -> int:
        return sum(len(b) for b in self._buffers.values())

    def push(self, msg: TimedMessage) -> list:
        with self._lock:
            return self._push(msg)

    def _push(self, msg: TimedMessage) -> list:
        sid = msg.stream_id
        if sid not in self._buffers:
            raise InvalidArgumentError(f"unknown stream {sid!r}")
        last = self._last_ts[sid]
        if last is not None and msg.timestamp_ns < last:
            raise MonotonicityError(
                f"{sid}: timestamp {msg.timestamp_ns} precedes previous {last}"
            )
        if (sid in self.policy.required_streams and self._last_pivot is not None
                and msg.timestamp_ns < self._last_pivot):
            raise MonotonicityError(
                f"{sid}: timestamp {msg.timestamp_ns} precedes emitted pivot {self._last_pivot}"
            )
        self._last_ts[sid] = msg.timestamp_ns
        buf = self._buffers[sid]
        if len(buf) >= self.policy.queue_depth:
            buf.popleft()
            self.dropped += 1
        buf.append(msg)
        self.pushed += 1
        return self._match()

    def _match(self) -> list:
        out = []
        req = self.policy.required_streams
        w = self.policy.window_ns
        while all(self._buffers[s] for s in req):
            pivot = max(self._buffers[s][0].timestamp_ns for s in req)
            # heads older than pivot - w can never be matched: pivots only grow
            for s in req:
                buf = self._buffers[s]
                while buf and buf[0].timestamp_ns < pivot - w:
                    buf.popleft()
                    self.dropped += 1
            if not all(self._buffers[s] for s in req):
                break
            if any(self._buffers[s][0].timestamp_ns > pivot + w for s in req):
                continue
            members = {s: self._buffers[s].popleft() for s in req}
            self.emitted += len(members)
            attachments, stale = {}, {}
            for s in self.policy.attached_streams:
                attachments[s], stale[s] = self._attach(s, pivot)
            self._last_pivot = pivot
            out.append(SyncTuple(pivot, members, attachments, stale))
        return out

    def _attach(self, sid: str, pivot: int):
        buf = self._buffers[sid]
        w = self.policy.window_ns
        chosen = None
        while buf and buf[0].timestamp_ns <= pivot + w:
            if chosen is not None:
                self.dropped += 1
            chosen = buf.popleft()
        if chosen is None:
            return None, True
        self.emitted += 1
        return chosen, chosen.timestamp_ns < pivot - w

    def stats(self) -> dict:
        with self._lock:
            return {
                "pushed": self.pushed,
                "emitted": self.emitted,
                "buffered": self.buffered,
                "dropped": self.dropped,
            }


def synchronize(messages: Iterable[TimedMessage], policy: SyncPolicy = SyncPolicy()):
    """Replay messages through a fresh :class:`Synchronizer`.

    Returns the emitted tuples and the synchronizer (for its counters).
    """
    sync = Synchronizer(policy)
    tuples = []
    for m in messages:
        tuples.extend(sync.push(m))
    return tuples, sync


def downsample(tuples: Sequence[SyncTuple], target_hz: float = 1.0,
               window_ns: int = 50_000_000) -> list:
    """Greedy thinning: keep a tuple once ``1/target_hz - window`` has passed."""
    if target_hz <= 0:
        raise InvalidArgumentError("target_hz must be positive")
    gap = round(1e9 / target_hz) - window_ns
    kept = []
    for t in tuples:
        if not kept or t.pivot_ns - kept[-1].pivot_ns >= gap:
            kept.append(t)
    return kept
