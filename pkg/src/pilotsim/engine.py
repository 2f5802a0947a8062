"""Discrete-event kernel shared by both execution flavors.

The simulated flavor pops events as fast as possible; the realtime flavor
is the same loop paced against the wall clock, with completion messages
from payload subprocesses injected between events.  Everything downstream
(scheduler, executors, metrics) sees one pilot clock in integer
microseconds either way.
"""

import heapq
import time


class SimEngine:
    """Single-threaded event heap over the pilot clock."""

    def __init__(self, start_us=0):
        self.now = start_us
        self._heap = []
        self._seq = 0
        self._pollers = []   # realtime only; kept here for a uniform API

    def at(self, t_us, fn):
        if t_us < self.now:
            t_us = self.now
        heapq.heappush(self._heap, (int(t_us), self._seq, fn))
        self._seq += 1

    def after(self, dt_us, fn):
        self.at(self.now + dt_us, fn)

    def add_poller(self, poll_fn):
        """poll_fn() -> True while it may still produce events."""
        self._pollers.append(poll_fn)

    def run(self, until_us=None):
        """Process events in timestamp order until the heap drains."""
        while self._heap:
            t, _, fn = self._heap[0]
            if until_us is not None and t > until_us:
                break
            heapq.heappop(self._heap)
            self.now = max(self.now, t)
            fn()
        if until_us is not None and until_us > self.now:
            self.now = until_us


class RealtimeEngine(SimEngine):
    """Event loop paced by the wall clock; pollers feed in completions."""

    POLL_INTERVAL = 0.002  # seconds

    def __init__(self, start_us=0):
        super().__init__(start_us)
        self._wall0 = time.monotonic() - start_us / 1e6

    def wall_now_us(self):
        return int((time.monotonic() - self._wall0) * 1e6)

    def _poll(self):
        pending = False
        for poll_fn in self._pollers:
            if poll_fn():
                pending = True
        return pending

    def run(self, until_us=None):
        while True:
            pending = self._poll()
            if not self._heap:
                if not pending:
                    break
                time.sleep(self.POLL_INTERVAL)
                self.now = max(self.now, self.wall_now_us())
                continue
            t, _, fn = self._heap[0]
            if until_us is not None and t > until_us:
                break
            wall = self.wall_now_us()
            if wall < t:
                time.sleep(min((t - wall) / 1e6, self.POLL_INTERVAL))
                continue
            heapq.heappop(self._heap)
            self.now = max(self.now, t)
            fn()
        if until_us is not None and until_us > self.now:
            self.now = until_us


class LaunchLane:
    """Serialized launch path of one executor component: consecutive
    launches are spaced by the per-launch delay."""

    def __init__(self, delay_us=0):
        self.delay_us = delay_us
        self.free_at = 0
        self.busy_intervals = []  # (launch_start, exec_start) pairs

    def admit(self, now_us):
        """Returns (launch_start, exec_start) for the next launch."""
        launch_start = max(now_us, self.free_at)
        exec_start = launch_start + self.delay_us
        self.free_at = exec_start
        if self.delay_us:
            self.busy_intervals.append((launch_start, exec_start))
        return launch_start, exec_start
