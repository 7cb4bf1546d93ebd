"""Gauss-Markov mobility with specular reflection at the area edges."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .config import MobilityParams

TWO_PI = 2.0 * math.pi


@dataclass
class UEKinematics:
    x: float
    y: float
    speed: float
    heading: float


def _reflect(pos, size):
    """Fold ``pos`` into [0, size]; return the folded position and a mask of
    coordinates that went through an odd number of reflections."""
    if not np.isfinite(size):
        return pos, np.zeros(np.shape(pos), dtype=bool)
    period = 2.0 * size
    m = np.mod(pos, period)
    flipped = m > size
    folded = np.where(flipped, period - m, m)
    # odd reflection count <=> heading component is reversed
    n_cross = np.floor_divide(pos, size).astype(np.int64)
    odd = (n_cross % 2) != 0
    return folded, odd


def step_arrays(x, y, speed, heading, p: MobilityParams, rng, clamp=True):
    """Advance arrays of UE kinematics by one tick. Returns new arrays."""
    n = np.shape(x)
    a = p.alpha
    scale = math.sqrt(max(0.0, 1.0 - a * a))
    dv = rng.normal(0.0, p.sigma_speed, size=n) if p.sigma_speed > 0 else np.zeros(n)
    dh = rng.normal(0.0, p.sigma_heading, size=n) if p.sigma_heading > 0 else np.zeros(n)
    v = a * speed + (1.0 - a) * p.mean_speed + scale * dv
    if clamp:
        v = np.maximum(v, 0.0)
    h = a * heading + (1.0 - a) * p.mean_heading + scale * dh

    nx = x + v * p.tick * np.cos(h)
    ny = y + v * p.tick * np.sin(h)
    nx, flip_x = _reflect(nx, p.area_width)
    ny, flip_y = _reflect(ny, p.area_height)
    # mirror the velocity direction: x-reflection h -> pi - h, y-reflection h -> -h
    h = np.where(flip_x, math.pi - h, h)
    h = np.where(flip_y, -h, h)
    h = np.mod(h, TWO_PI)
    return nx, ny, v, h


def step_kinematics(k: UEKinematics, p: MobilityParams, rng) -> UEKinematics:
    x, y, v, h = step_arrays(np.array([k.x]), np.array([k.y]), np.array([k.speed]),
                             np.array([k.heading]), p, rng)
    return UEKinematics(float(x[0]), float(y[0]), float(v[0]), float(h[0]))
