"""CIO-biased A3 handover with hysteresis/TTT, ping-pong and HO-failure
classification."""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from .config import A3Params

_EPS = 1e-9


@dataclass
class HOEvent:
    ue: int
    source: int
    target: int
    trigger_time: float
    outcome: str = "success"
    pingpong: bool = False

    def __post_init__(self):
        if self.source == self.target:
            raise ValueError("handover source and target must differ")

    def to_json(self):
        return asdict(self)


class A3Engine:
    """Per-(UE, neighbour) TTT timers for the biased A3 entry condition

        RSRP_n + CIO_n > RSRP_s + CIO_s + hysteresis
    """

    def __init__(self, n_ues, n_cells, params: A3Params):
        self.params = params
        self.start = np.full((n_ues, n_cells), np.nan)

    def reset_ue(self, ue):
        self.start[ue, :] = np.nan

    def evaluate(self, rsrp, serving, cio, now, eligible=None):
        """Update timers; return the target cell per UE (-1 when none fires)."""
        n = rsrp.shape[0]
        idx = np.arange(n)
        biased = rsrp + np.asarray(cio, dtype=float)[None, :]
        margin = biased - (biased[idx, serving] + self.params.hysteresis)[:, None]
        cond = margin > 0
        cond[idx, serving] = False
        if eligible is not None:
            cond &= np.asarray(eligible, dtype=bool)[:, None]
        started = ~np.isnan(self.start)
        self.start = np.where(cond, np.where(started, self.start, now), np.nan)
        ready = cond & (now - self.start >= self.params.ttt - _EPS)
        target = np.full(n, -1, dtype=np.int64)
        any_ready = ready.any(axis=1)
        if any_ready.any():
            m = np.where(ready, margin, -np.inf)
            # argmax returns the first maximum: ties go to the lowest cell id
            target[any_ready] = np.argmax(m[any_ready], axis=1)
        return target


def evaluate_a3(rsrp, cio, serving, params: A3Params, engine: A3Engine | None, now):
    """Single-UE form of :meth:`A3Engine.evaluate`. Returns the target cell
    or ``None``; ``engine`` carries the timers between calls."""
    rsrp = np.asarray(rsrp, dtype=float)[None, :]
    if engine is None:
        engine = A3Engine(1, rsrp.shape[1], params)
    t = engine.evaluate(rsrp, np.array([serving]), cio, now)[0]
    return None if t < 0 else int(t)


class HandoverLog:
    """Executes handovers and keeps the per-UE history for ping-pong tests."""

    def __init__(self, n_ues, params: A3Params):
        self.params = params
        self.events: list[HOEvent] = []
        self.last = [None] * n_ues  # last HOEvent per UE

    def execute(self, ue, source, target, now):
        prev = self.last[ue]
        pingpong = (prev is not None and prev.source == target and prev.target == source
                    and now - prev.trigger_time < self.params.t_pingpong)
        ev = HOEvent(int(ue), int(source), int(target), float(now), "success", bool(pingpong))
        self.events.append(ev)
        self.last[ue] = ev
        return ev


def rlf_within(times, sinr_db, start, params: A3Params):
    """True when the SINR stays below the RLF threshold for ``rlf_duration``
    somewhere in ``(start, start + t_hof]``. Samples are spaced uniformly."""
    times = np.asarray(times, dtype=float)
    s = np.asarray(sinr_db, dtype=float)
    if times.size == 0:
        return False
    dt = times[1] - times[0] if times.size > 1 else params.rlf_duration
    win = (times > start - _EPS) & (times <= start + params.t_hof + _EPS)
    low = (s < params.rlf_sinr_threshold) & win
    need = max(1, int(round(params.rlf_duration / dt)))
    run = 0
    for flag in low:
        run = run + 1 if flag else 0
        if run >= need:
            return True
    return False


def classify_outcomes(events, sinr_trace, params: A3Params):
    """Mark failures in place and return ``(ho_count, pingpong_rate, hof_rate)``.

    ``sinr_trace`` maps a UE id to ``(times, serving_sinr_db)`` arrays.
    """
    n = len(events)
    if n == 0:
        return 0, 0.0, 0.0
    failures = 0
    for ev in events:
        tr = sinr_trace.get(ev.ue) if hasattr(sinr_trace, "get") else sinr_trace[ev.ue]
        if tr is not None and rlf_within(tr[0], tr[1], ev.trigger_time, params):
            ev.outcome = "failure"
            failures += 1
    pp = sum(1 for ev in events if ev.pingpong)
    return n, pp / n, failures / n
