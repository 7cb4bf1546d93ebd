import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from ranlb.config import A3Params
from ranlb.handover import A3Engine, HandoverLog, HOEvent, classify_outcomes, evaluate_a3, rlf_within


def _run_until(rsrp, cio, params, until, tick=0.01):
    eng = A3Engine(1, len(rsrp), params)
    t = 0.0
    while t <= until + 1e-12:
        tgt = evaluate_a3(rsrp, cio, 0, params, eng, t)
        if tgt is not None:
            return t, tgt
        t = round(t + tick, 10)
    return None, None


def test_equal_rsrp_never_triggers():
    p = A3Params(hysteresis=0.0)
    assert _run_until([-90.0, -90.0], [0, 0], p, 2.0) == (None, None)


def test_trigger_exactly_after_ttt():
    p = A3Params(hysteresis=3.0, ttt=0.32)
    t, tgt = _run_until([-90.0, -86.0], [0, 0], p, 2.0)
    assert tgt == 1 and t == pytest.approx(0.32)


def test_negative_cio_suppresses():
    p = A3Params(hysteresis=3.0)
    assert _run_until([-90.0, -86.0], [0, -6.0], p, 2.0) == (None, None)


def test_lapse_resets_timer():
    p = A3Params(hysteresis=0.0, ttt=0.3)
    eng = A3Engine(1, 2, p)
    s = np.array([0])
    assert eng.evaluate(np.array([[-90.0, -85.0]]), s, [0, 0], 0.0)[0] == -1
    assert eng.evaluate(np.array([[-90.0, -95.0]]), s, [0, 0], 0.2)[0] == -1
    assert eng.evaluate(np.array([[-90.0, -85.0]]), s, [0, 0], 0.3)[0] == -1
    assert eng.evaluate(np.array([[-90.0, -85.0]]), s, [0, 0], 0.6)[0] == 1


def test_largest_margin_then_lowest_id_wins():
    p = A3Params(hysteresis=0.0, ttt=0.0)
    assert evaluate_a3([-90.0, -80.0, -84.0], [0, 0, 0], 0, p, None, 0.0) == 1
    assert evaluate_a3([-90.0, -80.0, -80.0, -80.0], [0, 0, 0, 0], 0, p, None, 0.0) == 1


@given(st.lists(st.floats(-120, -60), min_size=3, max_size=3), st.floats(-6, 6), st.floats(0, 6))
def test_raising_neighbour_cio_is_monotone(rsrp, c, up):
    p = A3Params(ttt=0.0)
    before = evaluate_a3(rsrp, [0.0, c, 0.0], 0, p, None, 0.0)
    after = evaluate_a3(rsrp, [0.0, c + up, 0.0], 0, p, None, 0.0)
    if before == 1:
        assert after == 1


def test_infinite_hysteresis_never_fires():
    p = A3Params(hysteresis=np.inf, ttt=0.0)
    eng = A3Engine(50, 3, p)
    rng = np.random.default_rng(0)
    for i in range(100):
        assert np.all(eng.evaluate(rng.uniform(-120, -60, (50, 3)), rng.integers(0, 3, 50), [0, 0, 0], i * 0.1) < 0)


def test_pingpong_marking():
    log = HandoverLog(1, A3Params())
    a = log.execute(0, 0, 1, 10.0)
    b = log.execute(0, 1, 0, 14.9)
    c = log.execute(0, 0, 1, 30.0)
    assert not a.pingpong and b.pingpong and not c.pingpong


def test_source_equals_target_rejected():
    with pytest.raises(ValueError):
        HOEvent(0, 1, 1, 0.0)


def test_classify_outcomes():
    p = A3Params()
    assert classify_outcomes([], {}, p) == (0, 0.0, 0.0)
    times = np.round(np.arange(0, 20, 0.1), 10)
    healthy = np.full(times.size, 10.0)
    ev = [HOEvent(0, 0, 1, 1.0)]
    assert classify_outcomes(ev, {0: (times, healthy)}, p) == (1, 0.0, 0.0)
    log = HandoverLog(4, p)
    evs = [log.execute(0, 0, 1, 1.0), log.execute(0, 1, 0, 3.0), log.execute(1, 0, 2, 1.0), log.execute(2, 2, 1, 1.0)]
    n, pp, hof = classify_outcomes(evs, {u: (times, healthy) for u in range(4)}, p)
    assert (n, pp, hof) == (4, 0.25, 0.0)


def test_rlf_detection():
    p = A3Params()
    times = np.round(np.arange(0, 5, 0.1), 10)
    s = np.full(times.size, 5.0)
    s[12:14] = -10.0  # 0.2 s below threshold, 0.2 s after the event
    assert rlf_within(times, s, 1.0, p)
    s2 = np.full(times.size, 5.0)
    s2[12] = -10.0  # a single 0.1 s dip is not a failure
    assert not rlf_within(times, s2, 1.0, p)
    s3 = np.full(times.size, 5.0)
    s3[30:33] = -10.0  # outside t_hof
    assert not rlf_within(times, s3, 1.0, p)
