"""Per-slot decision rules: randomized-policy adapter and heuristic baselines.

The heuristics keep per-path running averages of consumed power and incurred
distortion and only commit decisions that keep (cumulative + this slot)/t
within the configured bounds, so every sample path satisfies the constraints
up to a vanishing one-slot term.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .model import Discretization, SystemConfig
from .sic import batch_vertex_powers


@dataclass
class SlotDecision:
    """Rate vector, decoding order, and transmit powers for one slot."""

    rho: np.ndarray
    theta: np.ndarray
    powers: np.ndarray


class RunningAverages:
    """Cumulative power/distortion with slot count, for per-path budgeting."""

    def __init__(self, m: int):
        self.cum_power = np.zeros(m)
        self.cum_distortion = np.zeros(m)
        self.slots = 0

    def commit(self, power, distortion):
        self.cum_power += power
        self.cum_distortion += distortion
        self.slots += 1

    @property
    def power_avg(self):
        return self.cum_power / max(self.slots, 1)

    @property
    def distortion_avg(self):
        return self.cum_distortion / max(self.slots, 1)


class SrpSlotPolicy:
    """Adapter sampling one action per slot from a randomized policy.

    Scheduling ignores queues and version-age by construction; users whose
    queue is empty transmit nothing and consume no power.
    """

    def __init__(self, policy, rng: np.random.Generator):
        self._tables = policy.sampling_tables()
        self._index = {tuple(g): s for s, g in enumerate(policy.state_gains)}
        self._rng = rng

    def reset(self):
        pass

    def decide(self, t: int, gains, q, delta_pre) -> SlotDecision:
        key = tuple(gains)
        if key not in self._index:
            raise KeyError(f"channel state {key} unknown to the policy")
        cum, rho_mat, pw_mat = self._tables[self._index[key]]
        a = int(np.searchsorted(cum, self._rng.random(), side="right"))
        rho = np.where(q, rho_mat[a], 0)
        powers = np.where(rho > 0, pw_mat[a], 0.0)
        order = np.argsort(-(np.asarray(gains) * (rho > 0)), kind="stable")
        return SlotDecision(rho=rho, theta=order, powers=powers)


def srp_adapter(policy, gains, q, rng: np.random.Generator) -> SlotDecision:
    """One-shot functional form of SrpSlotPolicy."""
    return SrpSlotPolicy(policy, rng).decide(0, gains, np.asarray(q, dtype=bool),
                                             np.zeros(len(q)))


class _HeuristicBase:
    def __init__(self, cfg: SystemConfig):
        self.cfg = cfg
        self.m = cfg.num_users
        self.averages = RunningAverages(self.m)

    def reset(self):
        self.averages = RunningAverages(self.m)

    def _zero_decision(self):
        return SlotDecision(rho=np.zeros(self.m, dtype=int),
                            theta=np.arange(self.m),
                            powers=np.zeros(self.m))


class GreedyPolicy(_HeuristicBase):
    """Version-age-aware greedy: among queue-consistent rate vectors whose
    min-sum-power allocation keeps the running averages within bounds, pick
    the one minimizing the post-slot weighted age, then the most total bits,
    then the lowest vector index."""

    def __init__(self, cfg: SystemConfig):
        super().__init__(cfg)
        d = Discretization(cfg, "full")
        self._index = {tuple(g): s for s, g in enumerate(d.state_gains)}
        # unit power prices: decoding order is h-descending among active users
        self.orders, self.powers = batch_vertex_powers(
            d.state_gains, d.rates, np.ones(self.m), d.ginv_table)
        self.rates = d.rates
        self.active = d.active
        self.delta_active = d.delta_active
        self.rate_sums = d.rate_sums
        # queue-consistency per queue bitmask: no active user with empty queue
        V = d.num_vectors
        self._consistent = np.zeros((1 << self.m, V), dtype=bool)
        for mask in range(1 << self.m):
            q = np.array([(mask >> i) & 1 for i in range(self.m)], dtype=bool)
            self._consistent[mask] = ~np.any(self.active & ~q, axis=1)
        self._bits = 1 << np.arange(self.m)

    def decide(self, t: int, gains, q, delta_pre) -> SlotDecision:
        s = self._index[tuple(gains)]
        avg = self.averages
        td = avg.slots + 1
        ok = self._consistent[int(self._bits @ q)]
        ok = ok & np.all(self.powers[s] <= (self.cfg.power_bound * td
                                            - avg.cum_power), axis=1)
        ok = ok & np.all(self.delta_active <= (self.cfg.distortion_bound * td
                                               - avg.cum_distortion), axis=1)
        # post-slot weighted age is minimized by maximizing the served age mass
        served = self.active @ (self.cfg.weight * delta_pre)
        served = np.where(ok, served, -np.inf)
        best = served.max()
        cand = served >= best
        bits = np.where(cand, self.rate_sums, -1)
        v = int(np.argmax(bits))
        decision = SlotDecision(rho=self.rates[v], theta=self.orders[s, v],
                                powers=self.powers[s, v])
        avg.commit(decision.powers, self.delta_active[v])
        return decision


class _SingleUserBitRule(_HeuristicBase):
    """Shared rate rule: the selected user sends the most bits that keep its
    running averages within bounds (possibly zero)."""

    def __init__(self, cfg: SystemConfig):
        super().__init__(cfg)
        self._ginv = np.array([cfg.rate_function.inverse(r)
                               for r in range(cfg.r_max + 1)])

    def _serve(self, user: int, gain: float) -> SlotDecision:
        avg = self.averages
        td = avg.slots + 1
        cfg = self.cfg
        for rho in range(cfg.r_max, 0, -1):
            f = self._ginv[rho] / gain
            if (avg.cum_power[user] + f <= cfg.power_bound[user] * td
                    and avg.cum_distortion[user] + cfg.distortion.values[rho]
                    <= cfg.distortion_bound[user] * td):
                decision = self._zero_decision()
                decision.rho = decision.rho.copy()
                decision.powers = decision.powers.copy()
                decision.rho[user] = rho
                decision.powers[user] = f
                order = [user] + [i for i in range(self.m) if i != user]
                decision.theta = np.array(order)
                dist = np.zeros(self.m)
                dist[user] = cfg.distortion.values[rho]
                avg.commit(decision.powers, dist)
                return decision
        decision = self._zero_decision()
        avg.commit(decision.powers, np.zeros(self.m))
        return decision

    def _idle(self) -> SlotDecision:
        decision = self._zero_decision()
        self.averages.commit(decision.powers, np.zeros(self.m))
        return decision


class MaxVaoiFirstPolicy(_SingleUserBitRule):
    """Serve the pending user with the largest instantaneous version-age
    (ties to the lowest index); at most one active user per slot."""

    def decide(self, t: int, gains, q, delta_pre) -> SlotDecision:
        if not np.any(q):
            return self._idle()
        user = int(np.argmax(np.where(q, delta_pre, -1)))
        return self._serve(user, gains[user])


class RoundRobinPolicy(_SingleUserBitRule):
    """Cyclic schedule, oblivious to age and queues: slot t offers the channel
    to user t mod M; an empty queue transmits nothing."""

    def decide(self, t: int, gains, q, delta_pre) -> SlotDecision:
        user = t % self.m
        if not q[user]:
            return self._idle()
        return self._serve(user, gains[user])


HEURISTICS = {
    "greedy": GreedyPolicy,
    "max_vaoi_first": MaxVaoiFirstPolicy,
    "round_robin": RoundRobinPolicy,
}


def make_heuristic(name: str, cfg: SystemConfig):
    if name not in HEURISTICS:
        raise ValueError(f"unknown heuristic {name!r}; choices: {sorted(HEURISTICS)}")
    return HEURISTICS[name](cfg)
