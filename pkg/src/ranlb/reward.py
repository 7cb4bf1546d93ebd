"""Scalar multi-objective reward.

The canonical form scores six network KPIs on [0, 1] between percentile
anchors and subtracts an action-smoothness term:

    r = sum_k w_k * xhat_k - lambda_s * ||a_t - a_{t-1}||_2

A signed legacy form over per-cell means and reference maxima is kept as a
selectable mode.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .config import HIGHER_IS_BETTER, KPI_NAMES, ConfigError, LegacyRefs, RewardWeights
from .telemetry import Anchor, CellKPIWindow, jain_index, normalize_kpi, normalize_kpi_sigmoid


@dataclass
class NetworkKPIs:
    """Network-wide KPI summary of one control window."""

    thr: float  # aggregate served bit/s
    fair: float  # Jain over per-cell served rate
    lat: float  # s, mean packet delay
    jit: float  # s
    plr: float
    ho: float  # handovers in the window

    def as_dict(self):
        return {k: getattr(self, k) for k in KPI_NAMES}


@dataclass
class RewardRefs:
    anchors: dict = field(default_factory=dict)  # KPI name -> Anchor
    legacy: LegacyRefs = field(default_factory=LegacyRefs)

    def check(self):
        missing = [k for k in KPI_NAMES if k not in self.anchors]
        if missing:
            raise ConfigError(f"reward anchors are not calibrated for: {', '.join(missing)}")
        for k in KPI_NAMES:
            a = self.anchors[k]
            if not a.high > a.low:
                raise ConfigError(f"reward anchor for {k} must satisfy M > m")

    def save(self, path, header=""):
        lines = [f"# {h}" for h in header.splitlines()] if header else []
        lines.append("# kpi low high widened")
        for k in KPI_NAMES:
            a = self.anchors[k]
            lines.append(f"{k} {a.low!r} {a.high!r} {int(a.widened)}")
        Path(path).write_text("\n".join(lines) + "\n")

    @classmethod
    def load(cls, path, legacy=None):
        anchors = {}
        for line in Path(path).read_text().splitlines():
            if not line.strip() or line.startswith("#"):
                continue
            k, lo, hi, wid = line.split()
            anchors[k] = Anchor(float(lo), float(hi), bool(int(wid)))
        refs = cls(anchors, legacy or LegacyRefs())
        refs.check()
        return refs


@dataclass
class RewardBreakdown:
    normalized: dict
    contributions: dict
    smoothness: float  # the (nonpositive) smoothness term
    total: float

    def as_row(self):
        row = {f"x_{k}": v for k, v in self.normalized.items()}
        row.update({f"c_{k}": v for k, v in self.contributions.items()})
        row["smoothness"] = self.smoothness
        row["reward"] = self.total
        return row


def network_kpis(window: CellKPIWindow, acc=None) -> NetworkKPIs:
    """Collapse per-cell KPIs; packet-weighted when the raw accumulator is given."""
    if acc is not None:
        deliv = acc.delivered.sum()
        lat = acc.delay_sum.sum() / deliv if deliv else 0.0
        pairs = acc.jit_pairs.sum()
        jit = acc.jit_sum.sum() / pairs if pairs else 0.0
        off = acc.offered.sum()
        plr = acc.lost.sum() / off if off else 0.0
        ho = acc.ho.sum() / 2.0  # each event touches a source and a target cell
    else:
        lat, jit, plr = window.lat.mean(), window.jit.mean(), window.plr.mean()
        ho = window.ho.sum() / 2.0
    return NetworkKPIs(float(window.thr.sum()), jain_index(window.thr), float(lat), float(jit), float(plr), float(ho))


def smoothness_penalty(a_t, a_prev, scale=0.10, squared=False, delta_a=1.0):
    """Nonpositive action-change penalty.

    ``squared=False``: -scale * ||da||_2. ``squared=True``: -||da||^2 / delta_a^2.
    """
    a_t = np.asarray(a_t, dtype=float)
    a_prev = np.asarray(a_prev, dtype=float)
    if a_t.shape != a_prev.shape:
        raise ValueError(f"action shapes differ: {a_t.shape} vs {a_prev.shape}")
    d = a_t - a_prev
    if squared:
        return -float(np.dot(d, d)) / (delta_a * delta_a)
    return -scale * float(np.sqrt(np.dot(d, d)))


def normalize_all(kpis: NetworkKPIs, refs: RewardRefs, method="percentile"):
    refs.check()
    f = normalize_kpi if method == "percentile" else normalize_kpi_sigmoid
    return {k: f(getattr(kpis, k), refs.anchors[k].low, refs.anchors[k].high, HIGHER_IS_BETTER[k])
            for k in KPI_NAMES}


def combine(xhat: dict, a_t, a_prev, w: RewardWeights) -> RewardBreakdown:
    contrib = {k: getattr(w, k) * xhat[k] for k in KPI_NAMES}
    pen = smoothness_penalty(a_t, a_prev, w.lambda_s, w.smoothness == "squared", w.delta_a)
    total = sum(contrib.values()) + pen
    return RewardBreakdown(dict(xhat), contrib, pen, total)


def compute_reward(kpis: NetworkKPIs, a_t, a_prev, w: RewardWeights, refs: RewardRefs) -> RewardBreakdown:
    return combine(normalize_all(kpis, refs, w.normalization), a_t, a_prev, w)


def legacy_terms(window: CellKPIWindow, refs: LegacyRefs, t_max):
    """The six [0, 1] terms of the signed legacy reward."""
    t_max = refs.t_max or t_max
    clip = lambda v: float(np.clip(v, 0.0, 1.0))  # noqa: E731
    return {
        "thr": clip(np.mean(window.thr / t_max)),
        "jit": clip(np.mean(window.jit / refs.j_max)),
        "lat": clip(np.mean(window.lat / refs.l_max)),
        "fair": jain_index(window.eta),
        "plr": clip(np.mean(window.plr)),
        "ho": clip(window.ho.sum() / 2.0 / refs.h_max),
    }


def compute_reward_legacy(terms: dict, w: RewardWeights):
    """w_thr R_THR - w_jit R_JIT - w_lat R_LAT + w_fair R_JF - w_plr R_PLR - w_ho R_HO."""
    return (w.thr * terms["thr"] - w.jit * terms["jit"] - w.lat * terms["lat"]
            + w.fair * terms["fair"] - w.plr * terms["plr"] - w.ho * terms["ho"])

