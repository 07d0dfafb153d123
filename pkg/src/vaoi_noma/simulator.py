"""Seeded slot-level Monte Carlo of the full system.

Within a slot: (1) version arrivals land and fill the single-packet queues,
(2) the policy observes the channel state and decides, (3) scheduled users
with pending packets transmit (consuming power and incurring distortion,
emptying their queue), (4) the version-age Delta_i = z_i - y_i is recorded at
the end of the slot; equivalently
Delta_i(t) = (Delta_i(t-1) + A_i(t)) (1 - 1{rho_i(t) > 0}).

Each path draws from three independent streams (arrivals, channels, policy)
derived from (master seed, path index), so results are reproducible and
path-order independent. Stationary randomized policies run through a
vectorized engine; stateful per-slot policies run through the step loop. The
two engines are exactly equivalent for randomized policies (tested).
"""

from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np

from .model import SystemConfig, enumerate_joint_states
from .policies import SlotDecision, SrpSlotPolicy

_STREAMS = {"arrivals": 0, "channels": 1, "policy": 2}


@dataclass
class SimState:
    """Per-user simulation state; delta == z - y is an invariant."""

    delta: np.ndarray   # version-age at the end of the previous slot
    q: np.ndarray       # pending-packet flags (post previous slot)
    z: np.ndarray       # newest version at the source
    y: np.ndarray       # newest version delivered
    t: int = 0

    @classmethod
    def initial(cls, m: int) -> "SimState":
        return cls(delta=np.zeros(m, dtype=np.int64), q=np.zeros(m, dtype=bool),
                   z=np.zeros(m, dtype=np.int64), y=np.zeros(m, dtype=np.int64))


@dataclass
class SimulationTrace:
    """Accumulated per-path statistics."""

    vaoi_sum: np.ndarray
    power_sum: np.ndarray
    distortion_sum: np.ndarray
    delivery_count: np.ndarray
    slots: int
    seed: int

    @property
    def vaoi_avg(self):
        return self.vaoi_sum / self.slots

    @property
    def power_avg(self):
        return self.power_sum / self.slots

    @property
    def distortion_avg(self):
        return self.distortion_sum / self.slots


@dataclass
class SimulationSummary:
    """Across-path means and standard deviations."""

    weighted_vaoi_mean: float
    weighted_vaoi_std: float
    vaoi_mean: np.ndarray
    vaoi_std: np.ndarray
    power_mean: np.ndarray
    power_std: np.ndarray
    distortion_mean: np.ndarray
    distortion_std: np.ndarray
    delivery_rate: np.ndarray
    paths: int
    slots: int
    seed: int
    weighted_vaoi_paths: np.ndarray = None
    decision_seconds_per_slot: float = None


def stream_rng(seed: int, path: int, stream: str) -> np.random.Generator:
    """Named, splittable per-path generator."""
    ss = np.random.SeedSequence(entropy=seed, spawn_key=(path, _STREAMS[stream]))
    return np.random.default_rng(ss)


def step(state: SimState, decision: SlotDecision, arrivals: np.ndarray,
         cfg: SystemConfig):
    """Advance one slot. Returns (next state, record) with record fields
    (power, distortion, delta_end, delivered). Raises if the decision
    schedules a user whose queue is empty after arrivals."""
    arrivals = np.asarray(arrivals, dtype=bool)
    z = state.z + arrivals
    q = state.q | arrivals
    rho = np.asarray(decision.rho, dtype=int)
    active = rho > 0
    if np.any(active & ~q):
        bad = np.flatnonzero(active & ~q).tolist()
        raise ValueError(f"decision transmits from empty queues of users {bad}")
    power = np.where(active, np.asarray(decision.powers, dtype=float), 0.0)
    distortion = np.where(active, cfg.distortion.values[rho], 0.0)
    y = np.where(active, z, state.y)
    q_next = q & ~active
    delta = z - y
    next_state = SimState(delta=delta, q=q_next, z=z, y=y, t=state.t + 1)
    return next_state, (power, distortion, delta, active.copy())


def channel_tables(cfg: SystemConfig):
    """Enumerated joint states of a config: (gains (S, M), probs (S,))."""
    states = enumerate_joint_states(cfg)
    return (np.array([s.gains for s in states]),
            np.array([s.prob for s in states]))


def _draw_path_inputs(cfg: SystemConfig, slots: int, seed: int, path: int):
    rng_arr = stream_rng(seed, path, "arrivals")
    rng_ch = stream_rng(seed, path, "channels")
    arrivals = rng_arr.random((slots, cfg.num_users)) < cfg.arrival_prob
    gains, probs = channel_tables(cfg)
    state_cdf = np.cumsum(probs)
    state_cdf[-1] = 1.0
    states = np.searchsorted(state_cdf, rng_ch.random(slots), side="right")
    return arrivals, states, gains


def _run_srp_vectorized(cfg: SystemConfig, policy, slots: int, seed: int,
                        path: int) -> SimulationTrace:
    arrivals, states, gains = _draw_path_inputs(cfg, slots, seed, path)
    u_pol = stream_rng(seed, path, "policy").random(slots)
    m = cfg.num_users
    tables = policy.sampling_tables()
    pol_index = {tuple(g): s for s, g in enumerate(policy.state_gains)}
    remap = np.array([pol_index[tuple(g)] for g in gains])
    states = remap[states]

    rho = np.zeros((slots, m), dtype=int)
    powers = np.zeros((slots, m))
    for s, (cum, rho_mat, pw_mat) in enumerate(tables):
        mask = states == s
        if not np.any(mask):
            continue
        a_idx = np.searchsorted(cum, u_pol[mask], side="right")
        rho[mask] = rho_mat[a_idx]
        powers[mask] = pw_mat[a_idx]

    active = rho > 0
    slot_no = np.arange(1, slots + 1)[:, None]
    last_reset = np.maximum.accumulate(np.where(active, slot_no, 0), axis=0)
    last_arrival = np.maximum.accumulate(np.where(arrivals, slot_no, 0), axis=0)
    last_reset_prev = np.vstack([np.zeros((1, m), dtype=np.int64),
                                 last_reset[:-1]])
    q_post = last_arrival > last_reset_prev
    delivered = q_post & active

    csum = np.vstack([np.zeros((1, m), dtype=np.int64),
                      np.cumsum(arrivals, axis=0)])
    gathered = np.take_along_axis(csum, last_reset, axis=0)
    delta = np.where(active, 0, csum[1:] - gathered)

    power = np.where(q_post, powers, 0.0)
    dvals = cfg.distortion.values[rho]
    distortion = np.where(delivered, dvals, 0.0)
    return SimulationTrace(
        vaoi_sum=delta.sum(axis=0, dtype=np.int64).astype(float),
        power_sum=power.sum(axis=0),
        distortion_sum=distortion.sum(axis=0),
        delivery_count=delivered.sum(axis=0).astype(float),
        slots=slots, seed=seed,
    )


def _run_slot_loop(cfg: SystemConfig, slot_policy, slots: int,
                   seed: int, path: int, measure: bool = False):
    arrivals, states, gains_table = _draw_path_inputs(cfg, slots, seed, path)
    m = cfg.num_users
    state = SimState.initial(m)
    power = np.zeros((slots, m))
    distortion = np.zeros((slots, m))
    delta = np.zeros((slots, m), dtype=np.int64)
    delivered = np.zeros((slots, m), dtype=bool)
    decision_time = 0.0
    slot_policy.reset()
    for t in range(slots):
        a = arrivals[t]
        gains = gains_table[states[t]]
        q_post = state.q | a
        delta_pre = state.delta + a
        if measure:
            t0 = time.perf_counter()
            decision = slot_policy.decide(t, gains, q_post, delta_pre)
            decision_time += time.perf_counter() - t0
        else:
            decision = slot_policy.decide(t, gains, q_post, delta_pre)
        state, rec = step(state, decision, a, cfg)
        power[t], distortion[t], delta[t], delivered[t] = rec
    trace = SimulationTrace(
        vaoi_sum=delta.sum(axis=0, dtype=np.int64).astype(float),
        power_sum=power.sum(axis=0),
        distortion_sum=distortion.sum(axis=0),
        delivery_count=delivered.sum(axis=0).astype(float),
        slots=slots, seed=seed,
    )
    return trace, (decision_time / slots if measure else None)


def run(cfg: SystemConfig, policy, slots: int, seed: int, paths: int = 1,
        engine: str = "auto", measure_decision_time: bool = False
        ) -> SimulationSummary:
    """Simulate ``paths`` independent sample paths and aggregate.

    ``policy`` is either a RandomizedPolicy (vectorized unless engine="loop")
    or a per-slot policy object exposing reset()/decide() and, for channel
    enumeration, the state_gains/state_probs of its configuration.
    """
    if slots < 1 or paths < 1:
        raise ValueError("slots and paths must be >= 1")
    is_srp = hasattr(policy, "sampling_tables")
    traces = []
    decision_rates = []
    for path in range(paths):
        if is_srp and engine != "loop" and not measure_decision_time:
            traces.append(_run_srp_vectorized(cfg, policy, slots, seed, path))
        else:
            if is_srp:
                slot_policy = SrpSlotPolicy(
                    policy, stream_rng(seed, path, "policy"))
            else:
                slot_policy = policy
            trace, rate = _run_slot_loop(cfg, slot_policy, slots, seed,
                                         path, measure=measure_decision_time)
            traces.append(trace)
            if rate is not None:
                decision_rates.append(rate)

    w = cfg.weight
    weighted = np.array([float(w @ tr.vaoi_avg) for tr in traces])
    vaoi = np.stack([tr.vaoi_avg for tr in traces])
    power = np.stack([tr.power_avg for tr in traces])
    dist = np.stack([tr.distortion_avg for tr in traces])
    deliveries = np.stack([tr.delivery_count / slots for tr in traces])
    ddof = 1 if paths > 1 else 0

    def sd(x):
        return x.std(axis=0, ddof=ddof) if paths > 1 else np.zeros_like(x[0])

    return SimulationSummary(
        weighted_vaoi_mean=float(weighted.mean()),
        weighted_vaoi_std=float(weighted.std(ddof=ddof)) if paths > 1 else 0.0,
        vaoi_mean=vaoi.mean(axis=0), vaoi_std=sd(vaoi),
        power_mean=power.mean(axis=0), power_std=sd(power),
        distortion_mean=dist.mean(axis=0), distortion_std=sd(dist),
        delivery_rate=deliveries.mean(axis=0),
        paths=paths, slots=slots, seed=seed,
        weighted_vaoi_paths=weighted,
        decision_seconds_per_slot=(float(np.mean(decision_rates))
                                   if decision_rates else None),
    )
