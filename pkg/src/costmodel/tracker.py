"""
Allocation tracker for the numpy runtime.

Numpy does not report per-call allocations, so the attention and encoder code
report their own buffers here. Accounting rules:

- "static": parameters and optimizer state (model + optimizer memory)
- "cache": every tensor kept alive for backward
- "scores": attention score / probability buffers (kept for backward)
- "dropout": dropout keep-masks kept for backward
- "transient": forward temporaries, released as soon as they are consumed

Freed temporaries only ever show up through the high-water mark.
"""
import logging
import threading
from collections import defaultdict
from contextlib import contextmanager
from dataclasses import dataclass, field

import numpy as np

from src.errors import ProfilingError, SimulatedOOMError

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class TrackerSnapshot:
    live_bytes: int
    peak_bytes: int
    static_bytes: int
    peak_by_tag: dict = field(default_factory=dict)
    total_by_tag: dict = field(default_factory=dict)

    @property
    def activation_bytes(self) -> int:
        """High-water mark minus model and optimizer memory."""
        return max(0, self.peak_bytes - self.static_bytes)


class AllocationTracker:
    """Single process-wide accumulator; updates are serialized by a lock."""

    def __init__(self):
        self._lock = threading.RLock()
        self.enabled = False
        self.budget_bytes: int | None = None
        self._clear()

    def _clear(self):
        self.live_bytes = 0
        self.peak_bytes = 0
        self.static_bytes = 0
        self.live_by_tag: dict[str, int] = defaultdict(int)
        self.peak_by_tag: dict[str, int] = defaultdict(int)
        self.total_by_tag: dict[str, int] = defaultdict(int)

    def allocate(self, nbytes: int, tag: str) -> None:
        if not self.enabled:
            return
        nbytes = int(nbytes)
        with self._lock:
            if self.budget_bytes is not None and self.live_bytes + nbytes > self.budget_bytes:
                raise SimulatedOOMError(nbytes, self.live_bytes, self.budget_bytes)
            self.live_bytes += nbytes
            self.live_by_tag[tag] += nbytes
            self.total_by_tag[tag] += nbytes
            self.peak_bytes = max(self.peak_bytes, self.live_bytes)
            self.peak_by_tag[tag] = max(self.peak_by_tag[tag], self.live_by_tag[tag])

    def release(self, nbytes: int, tag: str) -> None:
        if not self.enabled:
            return
        with self._lock:
            self.live_bytes -= int(nbytes)
            self.live_by_tag[tag] -= int(nbytes)

    def track(self, arr: np.ndarray, tag: str = "cache") -> np.ndarray:
        self.allocate(arr.nbytes, tag)
        return arr

    def untrack(self, *arrays, tag: str = "cache") -> None:
        for arr in arrays:
            if arr is not None:
                self.release(arr.nbytes, tag)

    def register_static(self, nbytes: int) -> None:
        self.allocate(nbytes, "static")
        if self.enabled:
            self.static_bytes += int(nbytes)

    def reset_peak(self) -> None:
        """Start a new high-water window from the current live bytes."""
        with self._lock:
            self.peak_bytes = self.live_bytes
            self.peak_by_tag = defaultdict(int, self.live_by_tag)
            self.total_by_tag = defaultdict(int)

    def snapshot(self) -> TrackerSnapshot:
        with self._lock:
            return TrackerSnapshot(
                live_bytes=self.live_bytes,
                peak_bytes=self.peak_bytes,
                static_bytes=self.static_bytes,
                peak_by_tag=dict(self.peak_by_tag),
                total_by_tag=dict(self.total_by_tag),
            )

    @contextmanager
    def session(self, budget_bytes: int | None = None):
        """Enable tracking from a clean slate; one session per process at a time."""
        with self._lock:
            if self.enabled:
                raise ProfilingError("allocation tracker is already recording a run")
            self._clear()
            self.enabled = True
            self.budget_bytes = budget_bytes
        logger.debug("tracker session started (budget=%s)", budget_bytes)
        try:
            yield self
        finally:
            with self._lock:
                self.enabled = False
                self.budget_bytes = None
            logger.debug("tracker session ended: peak=%d static=%d", self.peak_bytes, self.static_bytes)


TRACKER = AllocationTracker()
