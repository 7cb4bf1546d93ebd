"""Radio plane: path loss, RSRP, SINR, CQI and per-PRB rate.

Powers are handled per PRB: the carrier power is split evenly over the PRBs,
the thermal noise is integrated over one 180 kHz PRB, and the fading gain is
a unit-mean exponential (Rayleigh power) drawn per link per tick.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from importlib import resources

import numpy as np

from .config import ChannelParams

PRB_BANDWIDTH = 180e3  # Hz
THERMAL_DBM_HZ = -174.0


@dataclass
class BSConfig:
    id: int
    x: float
    y: float
    tx_power: float = 46.0  # dBm
    bandwidth: float = 20.0  # MHz
    prb_count: int = 106
    noise_figure: float = 7.0  # dB

    @property
    def prb_power_dbm(self):
        return self.tx_power - 10.0 * math.log10(self.prb_count)


def _load_table():
    text = resources.files("ranlb").joinpath("data/cqi_table.txt").read_text()
    rows = [line.split() for line in text.splitlines() if line.strip() and not line.startswith("#")]
    cqi = np.array([int(r[0]) for r in rows])
    thr = np.array([float(r[1]) for r in rows])
    eff = np.array([float(r[2]) for r in rows])
    assert np.array_equal(cqi, np.arange(16))
    return thr, eff


CQI_THRESHOLDS, CQI_EFFICIENCY = _load_table()
_SWITCH = CQI_THRESHOLDS[1:]  # finite thresholds for CQI 1..15


def place_cells(n_cells, p: ChannelParams, width=1000.0, height=1000.0):
    """Sites on a regular polygon around the area centre (a triangle for 3)."""
    cx, cy = width / 2.0, height / 2.0
    cells = []
    for i in range(n_cells):
        if n_cells == 1:
            x, y = cx, cy
        else:
            ang = math.pi / 2.0 + 2.0 * math.pi * i / n_cells
            x, y = cx + p.site_radius * math.cos(ang), cy + p.site_radius * math.sin(ang)
        cells.append(BSConfig(i, x, y, p.tx_power, p.bandwidth, p.prb_count, p.noise_figure))
    return cells


def path_loss(distance, d_min=10.0):
    """Log-distance macro path loss in dB, flat below ``d_min``."""
    d = np.maximum(np.asarray(distance, dtype=float), d_min)
    out = 128.1 + 37.6 * np.log10(d / 1000.0)
    return float(out) if out.ndim == 0 else out


def rsrp(bs: BSConfig, ue_pos, shadow=0.0, d_min=10.0):
    d = math.hypot(ue_pos[0] - bs.x, ue_pos[1] - bs.y)
    return bs.prb_power_dbm - path_loss(d, d_min) + shadow


def rsrp_matrix(cells, ue_x, ue_y, shadow, d_min=10.0):
    """RSRP in dBm for every (UE, cell) pair; ``shadow`` has shape (N, M)."""
    bx = np.array([c.x for c in cells])
    by = np.array([c.y for c in cells])
    pw = np.array([c.prb_power_dbm for c in cells])
    d = np.hypot(ue_x[:, None] - bx[None, :], ue_y[:, None] - by[None, :])
    return pw[None, :] - path_loss(d, d_min) + shadow


def noise_dbm(noise_figure=7.0):
    """Thermal noise over one PRB."""
    return THERMAL_DBM_HZ + 10.0 * math.log10(PRB_BANDWIDTH) + noise_figure


def dbm_to_mw(x):
    return np.power(10.0, np.asarray(x, dtype=float) / 10.0)


def sinr(serving_dbm, interferer_dbm, serving_gain=1.0, interferer_gains=None, noise=-114.45):
    """SINR in dB of one link.

    ``serving_dbm`` and ``interferer_dbm`` are received powers before fading;
    gains are linear fading multipliers.
    """
    interferer_dbm = np.atleast_1d(np.asarray(interferer_dbm, dtype=float))
    if interferer_gains is None:
        interferer_gains = np.ones_like(interferer_dbm)
    s = dbm_to_mw(serving_dbm) * serving_gain
    i = float(np.sum(dbm_to_mw(interferer_dbm) * np.asarray(interferer_gains, dtype=float)))
    return float(10.0 * np.log10(s / (i + dbm_to_mw(noise))))


def sinr_matrix(rsrp_dbm, fading, serving, noise):
    """Serving-link SINR (dB) for all UEs; interferers are all other cells."""
    rx = dbm_to_mw(rsrp_dbm) * fading
    idx = np.arange(rx.shape[0])
    s = rx[idx, serving]
    interf = rx.sum(axis=1) - s
    return 10.0 * np.log10(s / (interf + dbm_to_mw(noise)))


def cqi_from_sinr(sinr_db):
    """CQI 0..15; a SINR exactly on a threshold maps to the higher CQI."""
    out = np.searchsorted(_SWITCH, np.asarray(sinr_db, dtype=float), side="right")
    return int(out) if np.ndim(out) == 0 else out


def spectral_efficiency(cqi):
    c = np.asarray(cqi)
    if np.any(c < 0) or np.any(c > 15) or not np.issubdtype(c.dtype, np.integer):
        raise ValueError(f"CQI must be an integer in 0..15, got {cqi!r}")
    out = CQI_EFFICIENCY[c]
    return float(out) if np.ndim(out) == 0 else out


def prb_bits(cqi, tick):
    """Bits one PRB carries over one tick at the given CQI."""
    return spectral_efficiency(cqi) * PRB_BANDWIDTH * tick


class ShadowingField:
    """Log-normal shadowing per (UE, cell) with exponential spatial
    decorrelation along each UE's track (Gudmundson model)."""

    def __init__(self, n_ues, n_cells, sigma, decorrelation, rng):
        self.sigma = sigma
        self.decorrelation = decorrelation
        self.rng = rng
        self.values = rng.normal(0.0, sigma, size=(n_ues, n_cells)) if sigma > 0 else np.zeros((n_ues, n_cells))

    def update(self, displacement):
        """Advance the field given each UE's distance moved since last call."""
        if self.sigma == 0:
            return self.values
        rho = np.exp(-np.asarray(displacement, dtype=float) / self.decorrelation)[:, None]
        innov = self.rng.normal(0.0, self.sigma, size=self.values.shape)
        self.values = rho * self.values + np.sqrt(1.0 - rho * rho) * innov
        return self.values


def rayleigh_gains(shape, rng):
    return rng.exponential(1.0, size=shape)
