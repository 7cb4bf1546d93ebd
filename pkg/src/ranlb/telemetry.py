"""Per-cell KPI windows, observation corruption (noise, lag, missingness),
filtering/normalization, state assembly and fairness/normalization helpers."""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass, replace

import numpy as np

from .config import ConfigError, NoiseParams, PipeParams

CHANNELS = ("eta", "thr", "jit", "plr", "lat", "ho")  # state channel order


@dataclass
class CellKPIWindow:
    """Per-cell KPIs over one control window (arrays of length M)."""

    eta: np.ndarray  # PRB utilization in [0, 1]
    thr: np.ndarray  # bit/s
    jit: np.ndarray  # s
    lat: np.ndarray  # s
    plr: np.ndarray  # fraction
    ho: np.ndarray  # handover events touching the cell

    def stack(self):
        return np.concatenate([getattr(self, c) for c in CHANNELS])

    @classmethod
    def zeros(cls, m):
        return cls(*(np.zeros(m) for _ in range(6)))


class WindowAccumulator:
    """Per-cell counters filled tick by tick by the environment."""

    FIELDS = ("prb_used", "prb_total", "bits", "delay_sum", "delivered", "jit_sum", "jit_pairs",
              "offered", "lost", "ho")

    def __init__(self, m):
        self.m = m
        self.reset()

    def reset(self):
        for f in self.FIELDS:
            setattr(self, f, np.zeros(self.m))

    def add(self, other):
        for f in self.FIELDS:
            setattr(self, f, getattr(self, f) + getattr(other, f))


def _safe_div(a, b):
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    return np.divide(a, b, out=np.zeros_like(a), where=b > 0)


def aggregate_window(acc: WindowAccumulator, window) -> CellKPIWindow:
    return CellKPIWindow(
        eta=np.clip(_safe_div(acc.prb_used, acc.prb_total), 0.0, 1.0),
        thr=acc.bits / window,
        jit=_safe_div(acc.jit_sum, acc.jit_pairs),
        lat=_safe_div(acc.delay_sum, acc.delivered),
        plr=np.clip(_safe_div(acc.lost, acc.offered), 0.0, 1.0),
        ho=acc.ho.copy(),
    )


def corrupt(window: CellKPIWindow, noise: NoiseParams, rng, rsrp=None, cqi=None, serving=None):
    """Additive Gaussian report noise.

    Latency and jitter receive the delay noise; results are clamped to their
    physical ranges. When per-UE ``rsrp``/``cqi`` and ``serving`` are given,
    noisy per-cell means of the UEs' serving RSRP and CQI are also returned
    (diagnostics only).
    """
    m = window.eta.shape[0]
    sd = noise.sigma_delay_ms * 1e-3
    lat, jit = window.lat, window.jit
    if sd > 0:
        lat = np.maximum(lat + rng.normal(0.0, sd, m), 0.0)
        jit = np.maximum(jit + rng.normal(0.0, sd, m), 0.0)
    noisy = replace(window, lat=lat, jit=jit, eta=np.clip(window.eta, 0, 1), plr=np.clip(window.plr, 0, 1))
    summary = None
    if rsrp is not None and serving is not None:
        n = rsrp.shape[0]
        srv_rsrp = rsrp[np.arange(n), serving] + (rng.normal(0.0, noise.sigma_rsrp, n) if noise.sigma_rsrp > 0 else 0.0)
        srv_cqi = np.asarray(cqi, dtype=float) + (rng.normal(0.0, noise.sigma_cqi, n) if noise.sigma_cqi > 0 else 0.0)
        counts = np.bincount(serving, minlength=m)
        summary = {
            "rsrp": _safe_div(np.bincount(serving, srv_rsrp, minlength=m), counts),
            "cqi": _safe_div(np.bincount(serving, np.clip(srv_cqi, 0, 15), minlength=m), counts),
        }
    return noisy, summary


class ObservationPipe:
    """FIFO report delay plus per-entry missingness with zero-order hold."""

    def __init__(self, params: PipeParams, size, rng):
        self.params = params
        self.size = size
        self.rng = rng
        self.reset()

    def reset(self):
        self.fifo = deque()
        self.held = np.zeros(self.size)
        self.seen = np.zeros(self.size, dtype=bool)

    @property
    def valid(self):
        return bool(self.seen.all())

    def push(self, obs, now):
        """Enqueue ``obs`` at time ``now`` and return what the agent sees."""
        self.fifo.append((now, np.asarray(obs, dtype=float)))
        ready = None
        while self.fifo and self.fifo[0][0] <= now - self.params.lag + 1e-9:
            ready = self.fifo.popleft()[1]
        if ready is not None:
            keep = np.ones(self.size, dtype=bool)
            if self.params.p_miss > 0:
                keep = self.rng.random(self.size) >= self.params.p_miss
            keep |= ~self.seen  # nothing to hold yet: the first report always lands
            self.held = np.where(keep, ready, self.held)
            self.seen |= keep
        return self.held.copy()


def lag_and_drop(obs, pipe: ObservationPipe, now):
    return pipe.push(obs, now)


def ema_filter(x, state, c):
    """y_t = c x_t + (1 - c) y_{t-1}; ``state`` is the previous output or None."""
    x = np.asarray(x, dtype=float)
    if state is None:
        return x.copy()
    return c * x + (1.0 - c) * state


class RunningNorm:
    """Streaming mean/variance (Welford) standardization, clipped to +-10."""

    def __init__(self, size, clip=10.0):
        self.n = 0
        self.mean = np.zeros(size)
        self.m2 = np.zeros(size)
        self.clip = clip

    @property
    def var(self):
        return self.m2 / self.n if self.n else np.zeros_like(self.m2)

    def update(self, x):
        x = np.asarray(x, dtype=float)
        self.n += 1
        d = x - self.mean
        self.mean = self.mean + d / self.n
        self.m2 = self.m2 + d * (x - self.mean)

    def __call__(self, x, update=True):
        if update:
            self.update(x)
        z = (np.asarray(x, dtype=float) - self.mean) / np.sqrt(self.var + 1e-8)
        return np.clip(z, -self.clip, self.clip)

    def state_dict(self):
        return {"n": self.n, "mean": self.mean.copy(), "m2": self.m2.copy()}

    def load_state_dict(self, d):
        self.n = int(d["n"])
        self.mean = np.array(d["mean"], dtype=float)
        self.m2 = np.array(d["m2"], dtype=float)


def running_normalize(x, state: RunningNorm):
    return state(x)


def jain_index(x, with_flag=False):
    """Jain's fairness (sum x)^2 / (n sum x^2). All-zero input gives 1."""
    x = np.asarray(x, dtype=float)
    if x.size == 0:
        raise ValueError("jain_index needs at least one value")
    if np.any(x < 0):
        raise ValueError("jain_index needs nonnegative values")
    sq = float(np.dot(x, x))
    if sq == 0.0:
        return (1.0, True) if with_flag else 1.0
    j = float(x.sum()) ** 2 / (x.size * sq)
    j = min(max(j, 1.0 / x.size), 1.0)
    return (j, False) if with_flag else j


def normalize_kpi(x, m, M, higher_is_better=True):
    """Percentile-anchored [0, 1] score with direction encoded."""
    if not M > m:
        raise ConfigError(f"normalization anchors must satisfy M > m (got m={m}, M={M})")
    x = np.asarray(x, dtype=float)
    z = (x - m) / (M - m) if higher_is_better else (M - x) / (M - m)
    out = np.clip(z, 0.0, 1.0)
    return float(out) if out.ndim == 0 else out


def normalize_kpi_sigmoid(x, m, M, higher_is_better=True):
    """Smooth alternative: logistic centred between the anchors."""
    if not M > m:
        raise ConfigError(f"normalization anchors must satisfy M > m (got m={m}, M={M})")
    z = (np.asarray(x, dtype=float) - 0.5 * (m + M)) / ((M - m) / 8.0)
    if not higher_is_better:
        z = -z
    out = 1.0 / (1.0 + np.exp(-z))
    return float(out) if out.ndim == 0 else out


@dataclass
class Anchor:
    low: float
    high: float
    widened: bool = False


def calibrate_percentiles(traces, min_samples=100):
    """5th/95th percentile anchors per KPI from validation traces.

    ``traces`` maps a KPI name to a 1-D sample sequence. Constant traces are
    widened by one unit on each side and flagged.
    """
    out = {}
    for name, vals in traces.items():
        v = np.asarray(vals, dtype=float)
        if v.size < min_samples:
            raise ValueError(f"KPI {name!r}: need >= {min_samples} samples, got {v.size}")
        lo, hi = np.percentile(v, [5.0, 95.0])
        if hi <= lo:
            out[name] = Anchor(float(lo) - 1.0, float(hi) + 1.0, True)
        else:
            out[name] = Anchor(float(lo), float(hi), False)
    return out


def build_state(window: CellKPIWindow):
    """Fixed channel order eta, T, J, P, L, H: a vector of length 6M."""
    return window.stack()


class ObservationBuilder:
    """corrupt -> lag/drop -> EMA -> running normalization -> state vector."""

    def __init__(self, m, noise: NoiseParams, pipe: PipeParams, rng):
        self.m = m
        self.noise = noise
        self.rng = rng
        self.pipe = ObservationPipe(pipe, 6 * m, rng)
        self.ema_c = pipe.ema_constant
        self.norm = RunningNorm(6 * m)
        self.ema_state = None
        self.update_norm = True
        self.last_delivered = None  # raw (unfiltered) state as received after lag/missingness

    def reset(self):
        """Start of an episode: the normalizer statistics persist."""
        self.pipe.reset()
        self.ema_state = None

    def __call__(self, window: CellKPIWindow, now, rsrp=None, cqi=None, serving=None):
        noisy, summary = corrupt(window, self.noise, self.rng, rsrp, cqi, serving)
        raw = build_state(noisy)
        delivered = self.pipe.push(raw, now)
        self.last_delivered = delivered
        self.ema_state = ema_filter(delivered, self.ema_state, self.ema_c)
        obs = self.norm(self.ema_state, update=self.update_norm)
        return obs, summary
