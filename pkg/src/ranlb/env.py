"""Episodic RAN load-balancing environment: the action sets per-cell CIOs,
each step runs ``control_interval / tick`` simulation ticks.

Tick order: mobility -> shadowing/RSRP -> A3 evaluation and handover ->
fading/SINR/CQI -> traffic arrivals -> PF scheduling -> HARQ/queues.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from . import channel as ch
from .config import ConfigError, SimConfig
from .handover import A3Engine, HandoverLog, classify_outcomes
from .mobility import step_arrays
from .reward import (RewardRefs, compute_reward, compute_reward_legacy, legacy_terms, network_kpis,
                     smoothness_penalty)
from .scheduler import PacketQueue, allocate_prbs
from .telemetry import ObservationBuilder, WindowAccumulator, aggregate_window

AVG_RATE_FLOOR = 1e3  # bit/s, PF average-rate floor (also the post-handover reset value)

STREAMS = ("placement", "mobility", "shadowing", "fading", "traffic", "harq", "noise")


@dataclass
class StepResult:
    observation: np.ndarray
    reward: float
    done: bool
    info: dict = field(default_factory=dict)


class RanEnv:
    def __init__(self, config: SimConfig, refs: RewardRefs | None = None, require_reward=True):
        self.cfg = config
        self.refs = refs
        self.require_reward = require_reward
        if refs is not None and config.reward.mode == "normalized":
            refs.check()
        elif refs is None and require_reward and config.reward.mode == "normalized":
            raise ConfigError("reward anchors are not calibrated: pass RewardRefs or run calibrate first")
        mp = config.mobility
        self.cells = ch.place_cells(config.n_cells, config.channel, mp.area_width, mp.area_height)
        self.m = config.n_cells
        self.n = config.n_ues
        self.tick = mp.tick
        self.ticks_per_step = config.ticks_per_step
        self.noise_dbm = ch.noise_dbm(config.channel.noise_figure)
        self.peak_cell_rate = ch.CQI_EFFICIENCY[-1] * ch.PRB_BANDWIDTH * config.channel.prb_count
        self.obs_dim = 6 * self.m
        self.act_dim = self.m
        self.trace = None  # optional writable text stream for per-step JSONL
        self._obs_builder = ObservationBuilder(self.m, config.noise, config.pipe, np.random.default_rng(0))
        self.step_index = None

    # ------------------------------------------------------------ helpers

    def scale_action(self, action):
        a = np.asarray(action, dtype=float)
        if a.shape != (self.m,):
            raise ValueError(f"action must have length {self.m}, got shape {a.shape}")
        if not np.all(np.isfinite(a)):
            raise ValueError("action entries must be finite")
        a = np.clip(a, -1.0, 1.0)
        lo, hi = self.cfg.cio_min, self.cfg.cio_max
        return lo + (a + 1.0) * 0.5 * (hi - lo)

    @property
    def observation_normalizer(self):
        """Running observation statistics; they persist across episodes."""
        return self._obs_builder.norm

    def load_normalizer(self, state, freeze=True):
        """Install saved statistics; ``freeze`` stops further updates (evaluation)."""
        self._obs_builder.norm.load_state_dict(state)
        self._obs_builder.update_norm = not freeze

    # ------------------------------------------------------------ episode

    def reset(self, seed=0):
        cfg = self.cfg
        streams = np.random.SeedSequence(seed).spawn(len(STREAMS))
        self.rng = {name: np.random.default_rng(s) for name, s in zip(STREAMS, streams)}
        mp = cfg.mobility
        pr = self.rng["placement"]
        self.x = pr.uniform(0.0, mp.area_width, self.n)
        self.y = pr.uniform(0.0, mp.area_height, self.n)
        self.speed = np.full(self.n, mp.mean_speed)
        self.heading = pr.uniform(0.0, 2.0 * np.pi, self.n)

        tp = cfg.traffic
        n_fb = int(round(tp.full_buffer_fraction * self.n))
        self.is_fb = np.zeros(self.n, dtype=bool)
        self.is_fb[:n_fb] = True
        self.rates = np.where(self.is_fb, 0.0, tp.arrival_rate)
        self.weights = np.where(self.is_fb, tp.qci_weight_full_buffer, tp.qci_weight_bursty)
        pkt_bits = tp.packet_size * 8
        self.queues = [None if fb else PacketQueue(tp.queue_capacity, pkt_bits) for fb in self.is_fb]
        self.avg_rate = np.full(self.n, AVG_RATE_FLOOR)

        cp = cfg.channel
        self.shadow = ch.ShadowingField(self.n, self.m, cp.shadow_sigma, cp.shadow_decorrelation,
                                        self.rng["shadowing"])
        self.cio = np.zeros(self.m)
        self.rsrp = ch.rsrp_matrix(self.cells, self.x, self.y, self.shadow.values, cp.d_min)
        self.serving = np.argmax(self.rsrp + self.cio[None, :], axis=1)
        self.interrupt_until = np.full(self.n, -np.inf)
        self.a3 = A3Engine(self.n, self.m, cfg.handover)
        self.ho_log = HandoverLog(self.n, cfg.handover)
        self.sinr = np.zeros(self.n)
        self.cqi = np.zeros(self.n, dtype=np.int64)
        self.now = 0.0
        self._sinr_times = []
        self._sinr_hist = []

        self._obs_builder.rng = self.rng["noise"]
        self._obs_builder.pipe.rng = self.rng["noise"]
        self._obs_builder.reset()

        self.acc = WindowAccumulator(self.m)
        for _ in range(cfg.warmup_ticks):
            self._tick()
        window = aggregate_window(self.acc, max(cfg.warmup_ticks, 1) * self.tick)
        obs, _ = self._obs_builder(window, self.now, self.rsrp, self.cqi, self.serving)

        self.acc = WindowAccumulator(self.m)
        self.ep_acc = WindowAccumulator(self.m)
        self.ep_fair = []
        self.ep_reward = 0.0
        self.ep_action_delta = []
        self.ep_events = []
        self.ep_start = self.now
        self._sinr_times = []
        self._sinr_hist = []
        self.step_index = 0
        return obs

    def step(self, action):
        if self.step_index is None:
            raise RuntimeError("call reset() before step()")
        if self.step_index >= self.cfg.episode_length:
            raise RuntimeError("episode is done; call reset()")
        cfg = self.cfg
        prev_cio = self.cio.copy()
        self.cio = self.scale_action(action)
        n_events = len(self.ho_log.events)
        self.acc.reset()
        for _ in range(self.ticks_per_step):
            self._tick()
        events = self.ho_log.events[n_events:]
        window = aggregate_window(self.acc, cfg.control_interval)
        kpis = network_kpis(window, self.acc)

        if self.refs is None and not self.require_reward:
            breakdown = None
            reward = 0.0
        elif cfg.reward.mode == "legacy":
            terms = legacy_terms(window, cfg.legacy, self.peak_cell_rate)
            pen = smoothness_penalty(self.cio, prev_cio, cfg.reward.lambda_s,
                                     cfg.reward.smoothness == "squared", cfg.reward.delta_a)
            reward = compute_reward_legacy(terms, cfg.reward) + pen
            breakdown = None
        else:
            breakdown = compute_reward(kpis, self.cio, prev_cio, cfg.reward, self.refs)
            reward = breakdown.total

        obs, summary = self._obs_builder(window, self.now, self.rsrp, self.cqi, self.serving)

        self.step_index += 1
        self.ep_acc.add(self.acc)
        self.ep_fair.append(kpis.fair)
        self.ep_reward += reward
        self.ep_action_delta.append(float(np.linalg.norm(self.cio - prev_cio)))
        self.ep_events.extend(events)
        done = self.step_index >= cfg.episode_length
        info = {
            "kpis": kpis,
            "window": window,
            "events": events,
            "breakdown": breakdown,
            "cio": self.cio.copy(),
            "summary": summary,
            "observed_eta": self._obs_builder.last_delivered[: self.m].copy(),
            "time": self.now,
        }
        if done:
            info["episode"] = self.episode_record()
        if self.trace is not None:
            self._write_trace(events)
        return StepResult(obs, float(reward), done, info)

    # ------------------------------------------------------------ tick

    def _tick(self):
        cfg = self.cfg
        now = self.now
        tick = self.tick
        mp = cfg.mobility
        nx, ny, self.speed, self.heading = step_arrays(self.x, self.y, self.speed, self.heading, mp,
                                                       self.rng["mobility"])
        disp = np.hypot(nx - self.x, ny - self.y)
        self.x, self.y = nx, ny
        self.shadow.update(disp)
        self.rsrp = ch.rsrp_matrix(self.cells, self.x, self.y, self.shadow.values, cfg.channel.d_min)

        eligible = now >= self.interrupt_until - 1e-9
        targets = self.a3.evaluate(self.rsrp, self.serving, self.cio, now, eligible)
        for u in np.flatnonzero(targets >= 0):
            src, dst = int(self.serving[u]), int(targets[u])
            self.ho_log.execute(u, src, dst, now)
            self.serving[u] = dst
            self.interrupt_until[u] = now + cfg.handover.interruption
            self.avg_rate[u] = AVG_RATE_FLOOR
            self.a3.reset_ue(u)
            self.acc.ho[src] += 1
            self.acc.ho[dst] += 1

        fading = ch.rayleigh_gains((self.n, self.m), self.rng["fading"])
        self.sinr = ch.sinr_matrix(self.rsrp, fading, self.serving, self.noise_dbm)
        self.cqi = ch.cqi_from_sinr(self.sinr)
        bits_per_prb = ch.CQI_EFFICIENCY[self.cqi] * ch.PRB_BANDWIDTH * tick
        self._sinr_times.append(now)
        self._sinr_hist.append(self.sinr)

        acc = self.acc
        counts = self.rng["traffic"].poisson(self.rates * tick)
        for u in np.flatnonzero(counts):
            q = self.queues[u]
            c = int(counts[u])
            dropped = q.push(now, c)
            s = self.serving[u]
            acc.offered[s] += c
            acc.lost[s] += dropped

        sp = cfg.scheduler
        prb = cfg.channel.prb_count
        schedulable = (now >= self.interrupt_until - 1e-9) & (bits_per_prb > 0)
        backlog = np.full(self.n, np.inf)
        hol = np.full(self.n, tick / 10.0)
        for u in np.flatnonzero(~self.is_fb & schedulable):
            q = self.queues[u]
            backlog[u] = q.backlog_bits()
            if q.n:
                hol[u] = max(now - q.batches[0][0], tick / 10.0)
        schedulable &= backlog > 0
        rate = bits_per_prb / tick * prb
        served = np.zeros(self.n)
        harq = self.rng["harq"]
        for c in range(self.m):
            cand = np.flatnonzero(schedulable & (self.serving == c))
            acc.prb_total[c] += prb
            if cand.size == 0:
                continue
            grants = allocate_prbs(rate[cand], self.avg_rate[cand], hol[cand], self.weights[cand],
                                   bits_per_prb[cand], backlog[cand], prb, sp.beta, sp.rate_ema, tick)
            used = grants.sum()
            acc.prb_used[c] += used
            # the cell drains its granted volume over the busy share of the tick
            busy = tick * used / prb
            for j in np.flatnonzero(grants):
                u = cand[j]
                cap = grants[j] * bits_per_prb[u]
                ok = harq.random() >= sp.bler_target
                if self.is_fb[u]:
                    if ok:
                        served[u] = cap
                        acc.bits[c] += cap
                    continue
                r = self.queues[u].serve(cap, now, busy, ok, sp.harq_max)
                served[u] = r.bits
                acc.bits[c] += r.bits
                acc.delivered[c] += r.delivered
                acc.delay_sum[c] += r.delay_sum
                acc.jit_sum[c] += r.jitter_sum
                acc.jit_pairs[c] += r.jitter_pairs
                acc.lost[c] += r.lost
        a = sp.rate_ema
        self.avg_rate = np.maximum((1.0 - a) * self.avg_rate + a * served / tick, AVG_RATE_FLOOR)
        self.now = now + tick

    # ------------------------------------------------------------ reporting

    def sinr_trace(self):
        times = np.asarray(self._sinr_times)
        hist = np.asarray(self._sinr_hist) if self._sinr_hist else np.zeros((0, self.n))
        return {u: (times, hist[:, u]) for u in range(self.n)}

    def episode_record(self):
        """Episode KPIs: thr Mbps, fair, lat ms, jit ms, plr fraction, ho count."""
        acc = self.ep_acc
        dur = self.now - self.ep_start
        n_ho, pp, hof = classify_outcomes(self.ep_events, self.sinr_trace(), self.cfg.handover)
        deliv = acc.delivered.sum()
        pairs = acc.jit_pairs.sum()
        off = acc.offered.sum()
        return {
            "thr": acc.bits.sum() / dur / 1e6 if dur > 0 else 0.0,
            "fair": float(np.mean(self.ep_fair)) if self.ep_fair else 1.0,
            "lat": 1e3 * acc.delay_sum.sum() / deliv if deliv else 0.0,
            "jit": 1e3 * acc.jit_sum.sum() / pairs if pairs else 0.0,
            "plr": acc.lost.sum() / off if off else 0.0,
            "ho": float(n_ho),
            "reward": self.ep_reward,
            "pingpong_rate": pp,
            "hof_rate": hof,
            "action_delta": float(np.mean(self.ep_action_delta)) if self.ep_action_delta else 0.0,
            "utilization": float(acc.prb_used.sum() / acc.prb_total.sum()) if acc.prb_total.sum() else 0.0,
        }

    def _write_trace(self, events):
        row = {
            "step": self.step_index,
            "time": round(self.now, 9),
            "x": [round(v, 3) for v in self.x.tolist()],
            "y": [round(v, 3) for v in self.y.tolist()],
            "serving": self.serving.tolist(),
            "cio": self.cio.tolist(),
            "events": [e.to_json() for e in events],
        }
        self.trace.write(json.dumps(row) + "\n")

