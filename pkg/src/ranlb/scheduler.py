"""Downlink traffic, delay-aware weighted PF scheduling and packet queues.

Queues hold packets of one fixed size grouped into arrival batches, so a
tick costs O(batches touched) rather than O(packets). Within a tick service
is fluid: a UE granted ``C`` bits of PRB capacity completes the bit at offset
``x`` at ``t0 + tick * x / C``, which gives every packet its own delay.
"""

from __future__ import annotations

from collections import deque
from typing import NamedTuple

import numpy as np


def generate_traffic(rates, tick, rng):
    """Poisson packet counts per UE for one tick; zero-rate UEs get none."""
    rates = np.asarray(rates, dtype=float)
    return rng.poisson(rates * tick)


def pf_score(rate, avg_rate, hol, hol_mean, beta, weight=1.0):
    """Delay-aware weighted PF metric (R/Rbar)^(1-b) * (HOL/HOLbar)^b * w."""
    return (np.asarray(rate) / avg_rate) ** (1.0 - beta) * (np.asarray(hol) / hol_mean) ** beta * weight


def allocate_prbs(rate, avg_rate, hol, weight, prb_bits, backlog_bits, prb_count, beta, rate_ema, tick):
    """Greedy PRB-by-PRB allocation among the candidate UEs of one cell.

    Each PRB goes to the highest-scoring UE that still has backlog; after a
    grant that UE's average rate is re-estimated as if the grants so far were
    served this tick, so its score falls. Ties go to the lowest index.

    Because every UE's score is non-increasing in its own grant count, the
    greedy sequence equals the (score desc, index asc) merge of the per-UE
    score sequences, which is computed here in one vectorized sort.

    Arrays are indexed by candidate position (the caller orders candidates by
    UE id). ``backlog_bits`` may be ``inf`` for full-buffer UEs. Returns the
    PRB count per candidate.
    """
    rate = np.asarray(rate, dtype=float)
    n = rate.shape[0]
    grants = np.zeros(n, dtype=np.int64)
    if n == 0 or prb_count <= 0:
        return grants
    prb_bits = np.asarray(prb_bits, dtype=float)
    usable = prb_bits > 0
    need = np.zeros(n, dtype=np.int64)
    bl = np.asarray(backlog_bits, dtype=float)
    with np.errstate(divide="ignore", invalid="ignore"):
        need_f = np.where(usable, np.ceil(bl / np.where(usable, prb_bits, 1.0)), 0.0)
    need[:] = np.minimum(np.nan_to_num(need_f, posinf=prb_count), prb_count)
    need[bl <= 0] = 0
    total = int(need.sum())
    if total == 0:
        return grants
    if total <= prb_count:
        return need
    hol = np.asarray(hol, dtype=float)
    active = need > 0
    hol_mean = hol[active].mean()
    owner = np.repeat(np.arange(n), need)
    starts = np.cumsum(need) - need
    k = np.arange(total) - np.repeat(starts, need)
    avg_k = (1.0 - rate_ema) * np.asarray(avg_rate, dtype=float)[owner] + rate_ema * k * prb_bits[owner] / tick
    score = pf_score(rate[owner], avg_k, hol[owner], hol_mean, beta, np.asarray(weight, dtype=float)[owner])
    order = np.lexsort((k, owner, -score))[:prb_count]
    return np.bincount(owner[order], minlength=n).astype(np.int64)


class ServeResult(NamedTuple):
    bits: float
    delivered: int
    delay_sum: float
    jitter_sum: float
    jitter_pairs: int
    lost: int


_NOTHING = ServeResult(0.0, 0, 0.0, 0.0, 0, 0)


class PacketQueue:
    """FIFO of equal-size packets stored as ``[arrival_time, count]`` batches."""

    __slots__ = ("batches", "n", "head_bits", "capacity", "packet_bits", "drops", "offered",
                 "harq_lost", "last_delay", "attempts")

    def __init__(self, capacity, packet_bits):
        self.batches = deque()
        self.n = 0
        self.head_bits = 0.0  # bits of the head packet already delivered
        self.capacity = capacity
        self.packet_bits = packet_bits
        self.drops = 0
        self.offered = 0
        self.harq_lost = 0
        self.last_delay = None
        self.attempts = 0

    def push(self, t, count):
        """Enqueue ``count`` packets stamped ``t``; overflow is dropped."""
        count = int(count)
        if count <= 0:
            return 0
        self.offered += count
        accepted = min(count, self.capacity - self.n)
        if accepted > 0:
            self.batches.append([t, accepted])
            self.n += accepted
        dropped = count - max(accepted, 0)
        self.drops += dropped
        return dropped

    def backlog_bits(self):
        return self.n * self.packet_bits - self.head_bits

    def hol(self, now):
        return now - self.batches[0][0] if self.n else 0.0

    def _pop(self, count):
        while count > 0:
            b = self.batches[0]
            take = min(b[1], count)
            b[1] -= take
            count -= take
            self.n -= take
            if b[1] == 0:
                self.batches.popleft()

    def serve(self, cap_bits, t0, tick, success=True, harq_max=4):
        """Transmit up to ``cap_bits`` during the tick starting at ``t0``.

        On a failed transport block nothing is delivered and the attempt
        counter grows; after ``harq_max`` failed attempts the packets of that
        block are discarded as HARQ losses.
        """
        if cap_bits <= 0 or self.n == 0:
            return _NOTHING
        P = self.packet_bits
        avail = cap_bits + self.head_bits
        n_done = min(int(avail // P), self.n)
        if not success:
            self.attempts += 1
            if self.attempts < harq_max:
                return _NOTHING
            self.attempts = 0
            lost = n_done
            if lost:
                self._pop(lost)
                self.head_bits = 0.0
                self.harq_lost += lost
            return ServeResult(0.0, 0, 0.0, 0.0, 0, lost)
        self.attempts = 0
        if n_done == self.n:
            bits = self.n * P - self.head_bits
            new_head = 0.0
        else:
            bits = float(cap_bits)
            new_head = avail - n_done * P
        scale = tick / cap_bits
        step = scale * P
        x0 = P - self.head_bits  # offset of the first completion
        delay_sum = 0.0
        jit_sum = 0.0
        pairs = 0
        k = 0
        remaining = n_done
        last = self.last_delay
        while remaining > 0:
            b = self.batches[0]
            m = min(b[1], remaining)
            d_first = t0 + scale * x0 + step * k - b[0]
            delay_sum += m * d_first + step * m * (m - 1) / 2.0
            if last is not None:
                jit_sum += abs(d_first - last)
                pairs += 1
            jit_sum += step * (m - 1)
            pairs += m - 1
            last = d_first + step * (m - 1)
            k += m
            remaining -= m
            b[1] -= m
            self.n -= m
            if b[1] == 0:
                self.batches.popleft()
        self.last_delay = last
        self.head_bits = new_head
        return ServeResult(bits, n_done, delay_sum, jit_sum, pairs, 0)


class WindowStats(NamedTuple):
    throughput: float  # bit/s
    delay: float  # s
    jitter: float  # s
    plr: float
    empty: bool


def window_stats(delays, window, delivered_bits=None, offered=None, lost=0):
    """Stats of one window from explicit per-packet delays (in order).

    Empty windows give all-zero stats with ``empty=True``.
    """
    d = np.asarray(delays, dtype=float)
    if delivered_bits is None:
        delivered_bits = 0.0
    if offered is None:
        offered = d.size + lost
    if d.size == 0 and offered == 0 and delivered_bits == 0:
        return WindowStats(0.0, 0.0, 0.0, 0.0, True)
    thr = delivered_bits / window if window > 0 else 0.0
    delay = float(d.mean()) if d.size else 0.0
    jitter = float(np.abs(np.diff(d)).mean()) if d.size > 1 else 0.0
    plr = lost / offered if offered else 0.0
    return WindowStats(thr, delay, jitter, min(max(plr, 0.0), 1.0), d.size == 0)
