import math

import numpy as np
from hypothesis import given, settings
from hypothesis import strategies as st

from ranlb.config import MobilityParams
from ranlb.mobility import UEKinematics, step_arrays, step_kinematics


def test_alpha_one_keeps_speed(rng):
    p = MobilityParams(alpha=1.0)
    k = UEKinematics(500.0, 500.0, 2.7, 1.0)
    for _ in range(50):
        k = step_kinematics(k, p, rng)
    assert k.speed == 2.7


def test_alpha_zero_without_noise_returns_mean(rng):
    p = MobilityParams(alpha=0.0, sigma_speed=0.0, sigma_heading=0.0)
    k = step_kinematics(UEKinematics(500.0, 500.0, 9.0, 0.3), p, rng)
    assert k.speed == 1.5
    assert math.isclose(k.heading, math.pi)


def test_mean_speed_converges_unbounded():
    p = MobilityParams(area_width=math.inf, area_height=math.inf)
    rng = np.random.default_rng(7)
    n = 100_000
    x = y = np.zeros(1)
    v, h = np.array([1.5]), np.array([0.0])
    speeds = np.empty(n)
    for i in range(n):
        x, y, v, h = step_arrays(x, y, v, h, p, rng, clamp=False)
        speeds[i] = v[0]
    # AR(1): effective sample size shrinks by (1 - a) / (1 + a)
    se = 0.5 / math.sqrt(n * (1 - p.alpha) / (1 + p.alpha))
    assert abs(speeds.mean() - 1.5) < 3 * se


def test_positions_stay_in_area():
    p = MobilityParams(mean_speed=30.0, sigma_speed=10.0, area_width=200.0, area_height=100.0)
    rng = np.random.default_rng(3)
    n = 1000
    x, y = rng.uniform(0, 200, n), rng.uniform(0, 100, n)
    v, h = np.full(n, 30.0), rng.uniform(0, 2 * np.pi, n)
    for _ in range(1000):
        x, y, v, h = step_arrays(x, y, v, h, p, rng)
        assert np.all((x >= 0) & (x <= 200) & (y >= 0) & (y <= 100))
        assert np.all((h >= 0) & (h < 2 * np.pi)) and np.all(v >= 0)


def test_reflection_mirrors_heading():
    p = MobilityParams(alpha=1.0, area_width=100.0, area_height=100.0)
    # moving +x at 10 m/s from x = 99.5: crosses the wall at 100 and comes back to 99.5
    k = step_kinematics(UEKinematics(99.5, 50.0, 10.0, 0.0), p, np.random.default_rng(0))
    assert math.isclose(k.x, 99.5) and math.isclose(k.y, 50.0)
    assert math.isclose(k.heading, math.pi)


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 2**32 - 1))
def test_same_seed_same_trajectory(seed):
    p = MobilityParams()
    runs = []
    for _ in range(2):
        rng = np.random.default_rng(seed)
        k = UEKinematics(10.0, 990.0, 1.5, 2.0)
        path = []
        for _ in range(20):
            k = step_kinematics(k, p, rng)
            path.append((k.x, k.y, k.speed, k.heading))
        runs.append(path)
    assert runs[0] == runs[1]
