"""System model: configuration, channel/rate/distortion functions, state enumeration.

Time is slotted. Each of M users sees a block-fading channel with gains drawn
i.i.d. per slot from a finite per-user set, receives version updates with
probability lam_i per slot, and transmits rho_i in {0, ..., r_max} bits over a
multiple-access channel. All downstream computations index the finite grid of
(joint channel state, rate vector) pairs enumerated here.
"""

from __future__ import annotations

import itertools
import json
import math
from dataclasses import dataclass, field

import numpy as np

PROB_TOL = 1e-12


@dataclass(frozen=True)
class RateFunction:
    """Invertible rate-power map g with g(0) = 0, concave and non-decreasing.

    ``forward`` maps total received power to decodable bits; ``inverse`` maps
    bits back to the required received power. Default is g(x) = log2(1 + x),
    whose inverse is 2^r - 1.
    """

    name: str
    forward: callable
    inverse_fn: callable

    def __call__(self, x: float) -> float:
        return self.forward(x)

    def inverse(self, r: float) -> float:
        if r < 0:
            raise ValueError(f"rate must be nonnegative, got {r}")
        return self.inverse_fn(r)


def _log2_forward(x):
    return np.log2(1.0 + x)


def _log2_inverse(r):
    # exact 0 at r=0: 2**0 - 1 == 0.0
    return np.exp2(r) - 1.0


def default_rate_function() -> RateFunction:
    return RateFunction(name="log2", forward=_log2_forward, inverse_fn=_log2_inverse)


def g_inverse(r: float, rate_function: RateFunction | None = None) -> float:
    """Required received power for r bits; domain error for r < 0."""
    rf = rate_function if rate_function is not None else default_rate_function()
    return float(rf.inverse(r))


@dataclass(frozen=True)
class DistortionFunction:
    """Per-update distortion delta(rho), defined on integers 0..r_max only.

    No monotonicity or convexity is assumed; the table encodes arbitrary
    bit-priority structure.
    """

    name: str
    values: np.ndarray  # shape (r_max + 1,)

    def __post_init__(self):
        vals = np.asarray(self.values, dtype=float)
        if vals.ndim != 1 or vals.size < 2:
            raise ValueError("distortion table needs entries for 0..r_max")
        if np.any(vals < 0):
            raise ValueError("distortion values must be nonnegative")
        object.__setattr__(self, "values", vals)

    @property
    def r_max(self) -> int:
        return self.values.size - 1

    def __call__(self, rho: int) -> float:
        if rho != int(rho) or rho < 0 or rho > self.r_max:
            raise ValueError(f"rho must be an integer in [0, {self.r_max}], got {rho}")
        return float(self.values[int(rho)])


def make_distortion(name: str, r_max: int, **params) -> DistortionFunction:
    """Build one of the named distortion families on {0, ..., r_max}.

    quadratic    (1 - rho/r_max)^2
    exp          exp(-a * rho), a = params.get("rate", 1.0)
    step         1 for rho < r_max - 1, params.get("mid", 0.05) at r_max - 1, 0 at r_max
    linear       1 - rho/r_max
    concave-cos  cos(pi * rho / (2 r_max)) ** params.get("exponent", 0.3)
    """
    rho = np.arange(r_max + 1, dtype=float)
    if name == "quadratic":
        vals = (1.0 - rho / r_max) ** 2
    elif name == "exp":
        vals = np.exp(-params.get("rate", 1.0) * rho)
    elif name == "step":
        vals = np.ones(r_max + 1)
        vals[r_max] = 0.0
        if r_max >= 1:
            vals[r_max - 1] = params.get("mid", 0.05)
    elif name == "linear":
        vals = 1.0 - rho / r_max
    elif name == "concave-cos":
        vals = np.cos(np.pi * rho / (2.0 * r_max)) ** params.get("exponent", 0.3)
        vals = np.maximum(vals, 0.0)
    else:
        raise ValueError(f"unknown distortion function {name!r}")
    return DistortionFunction(name=name, values=vals)


@dataclass(frozen=True)
class ChannelModel:
    """Per-user finite gain sets with independent per-user pmfs."""

    gains: tuple  # tuple of M float tuples
    probs: tuple  # tuple of M float tuples, each summing to 1

    def __post_init__(self):
        gains = tuple(tuple(float(g) for g in row) for row in self.gains)
        probs = tuple(tuple(float(p) for p in row) for row in self.probs)
        if len(gains) != len(probs):
            raise ValueError("gains and probs must list the same number of users")
        for i, (g_row, p_row) in enumerate(zip(gains, probs)):
            if len(g_row) == 0:
                raise ValueError(f"user {i}: empty gain set")
            if len(g_row) != len(p_row):
                raise ValueError(f"user {i}: gain/prob length mismatch")
            if any(g <= 0 for g in g_row):
                raise ValueError(f"user {i}: gains must be strictly positive")
            if any(p < 0 for p in p_row):
                raise ValueError(f"user {i}: probabilities must be nonnegative")
            if abs(sum(p_row) - 1.0) > PROB_TOL:
                raise ValueError(f"user {i}: pmf sums to {sum(p_row)}, not 1")
        object.__setattr__(self, "gains", gains)
        object.__setattr__(self, "probs", probs)

    @property
    def num_users(self) -> int:
        return len(self.gains)


def uniform_channel(num_users: int, gains=(0.1, 1.0)) -> ChannelModel:
    """Every user draws from the same gain set with equal probability."""
    g = tuple(float(x) for x in gains)
    p = tuple(1.0 / len(g) for _ in g)
    return ChannelModel(gains=(g,) * num_users, probs=(p,) * num_users)


@dataclass(frozen=True)
class SystemConfig:
    """All exogenous parameters of the M-user uplink system."""

    num_users: int
    arrival_prob: np.ndarray   # lam_i in [0, 1]
    weight: np.ndarray         # w_i >= 0, sum > 0
    power_bound: np.ndarray    # P_bar_i >= 0
    distortion_bound: np.ndarray  # D_bar_i >= 0
    r_max: int
    channel: ChannelModel
    rate_function: RateFunction = field(default_factory=default_rate_function)
    distortion: DistortionFunction = None

    def __post_init__(self):
        m = self.num_users
        if m < 1:
            raise ValueError("num_users must be positive")
        if self.r_max < 1:
            raise ValueError("r_max must be >= 1")
        for name in ("arrival_prob", "weight", "power_bound", "distortion_bound"):
            arr = np.asarray(getattr(self, name), dtype=float)
            if arr.shape != (m,):
                raise ValueError(f"{name} must have length num_users={m}")
            arr.flags.writeable = False
            object.__setattr__(self, name, arr)
        if np.any(self.arrival_prob < 0) or np.any(self.arrival_prob > 1):
            raise ValueError("arrival probabilities must lie in [0, 1]")
        if np.any(self.weight < 0) or self.weight.sum() <= 0:
            raise ValueError("weights must be nonnegative with positive sum")
        if np.any(self.power_bound < 0):
            raise ValueError("power bounds must be nonnegative")
        if np.any(self.distortion_bound < 0):
            raise ValueError("distortion bounds must be nonnegative")
        if self.channel.num_users != m:
            raise ValueError("channel model user count mismatch")
        if self.distortion is None:
            object.__setattr__(self, "distortion", make_distortion("quadratic", self.r_max))
        if self.distortion.r_max != self.r_max:
            raise ValueError("distortion table length must be r_max + 1")

    def replace(self, **changes) -> "SystemConfig":
        fields = dict(
            num_users=self.num_users,
            arrival_prob=self.arrival_prob,
            weight=self.weight,
            power_bound=self.power_bound,
            distortion_bound=self.distortion_bound,
            r_max=self.r_max,
            channel=self.channel,
            rate_function=self.rate_function,
            distortion=self.distortion,
        )
        fields.update(changes)
        return SystemConfig(**fields)


@dataclass(frozen=True)
class JointChannelState:
    """One joint gain vector h with its product probability."""

    gains: tuple
    prob: float


def enumerate_joint_states(cfg: SystemConfig) -> list[JointChannelState]:
    """Cartesian product of per-user gain sets, lexicographic by user then gain index."""
    ch = cfg.channel
    states = []
    for combo in itertools.product(*(range(len(g)) for g in ch.gains)):
        gains = tuple(ch.gains[i][j] for i, j in enumerate(combo))
        prob = math.prod(ch.probs[i][j] for i, j in enumerate(combo))
        states.append(JointChannelState(gains=gains, prob=prob))
    return states


def enumerate_rate_vectors(cfg: SystemConfig, mode: str = "full") -> np.ndarray:
    """Rate vector grid, shape (V, M) int.

    full: {0, ..., r_max}^M in lexicographic order, (r_max+1)^M rows.
    tdma: all-zero plus single-active-user vectors, 1 + M*r_max rows,
          sorted lexicographically.
    """
    m, r = cfg.num_users, cfg.r_max
    if mode == "full":
        vecs = list(itertools.product(range(r + 1), repeat=m))
    elif mode == "tdma":
        vecs = [(0,) * m]
        for i in range(m):
            for rho in range(1, r + 1):
                v = [0] * m
                v[i] = rho
                vecs.append(tuple(v))
        vecs.sort()
    else:
        raise ValueError(f"unknown rate-vector mode {mode!r}")
    return np.array(vecs, dtype=int)


class Discretization:
    """Array view of the (joint state, rate vector) grid a config induces.

    Everything downstream (dual solver, analytics, simulator) indexes these
    arrays by (state index s, vector index v, user index i).
    """

    def __init__(self, cfg: SystemConfig, mode: str = "full"):
        self.cfg = cfg
        self.mode = mode
        states = enumerate_joint_states(cfg)
        self.state_gains = np.array([s.gains for s in states])        # (S, M)
        self.state_probs = np.array([s.prob for s in states])         # (S,)
        self.rates = enumerate_rate_vectors(cfg, mode)                # (V, M)
        self.active = self.rates > 0                                  # (V, M) bool
        delta_vals = cfg.distortion.values[self.rates]                # delta(rho_i)
        self.delta_active = np.where(self.active, delta_vals, 0.0)    # (V, M)
        self.rate_sums = self.rates.sum(axis=1)                       # (V,)
        # g^{-1} lookup on integer total rates 0..M*r_max (exact, reused everywhere)
        total = cfg.num_users * cfg.r_max
        self.ginv_table = np.array(
            [cfg.rate_function.inverse(r) for r in range(total + 1)]
        )

    @property
    def num_states(self) -> int:
        return self.state_gains.shape[0]

    @property
    def num_vectors(self) -> int:
        return self.rates.shape[0]

    def state_index(self, gains) -> int:
        """Index of an enumerated joint state; error if not on the grid."""
        match = np.all(np.isclose(self.state_gains, np.asarray(gains)), axis=1)
        idx = np.flatnonzero(match)
        if idx.size == 0:
            raise KeyError(f"channel state {tuple(gains)} is not an enumerated state")
        return int(idx[0])


def config_from_dict(data: dict) -> SystemConfig:
    """Build a SystemConfig from the JSON configuration schema."""
    m = int(data["num_users"])
    ch = data["channel"]
    channel = ChannelModel(
        gains=tuple(tuple(row) for row in ch["gains"]),
        probs=tuple(tuple(row) for row in ch["probs"]),
    )
    r_max = int(data["r_max"])
    dist_spec = data.get("distortion", {"name": "quadratic"})
    if "values" in dist_spec:
        distortion = DistortionFunction(
            name=dist_spec.get("name", "table"),
            values=np.asarray(dist_spec["values"], dtype=float),
        )
    else:
        distortion = make_distortion(
            dist_spec["name"], r_max, **dist_spec.get("params", {})
        )
    rf_name = data.get("rate_function", "log2")
    if rf_name != "log2":
        raise ValueError(f"unknown rate function {rf_name!r}")
    return SystemConfig(
        num_users=m,
        arrival_prob=np.asarray(data["arrival_prob"], dtype=float),
        weight=np.asarray(data["weight"], dtype=float),
        power_bound=np.asarray(data["power_bound"], dtype=float),
        distortion_bound=np.asarray(data["distortion_bound"], dtype=float),
        r_max=r_max,
        channel=channel,
        rate_function=default_rate_function(),
        distortion=distortion,
    )


def load_config(path) -> SystemConfig:
    with open(path) as fh:
        return config_from_dict(json.load(fh))


def config_to_dict(cfg: SystemConfig) -> dict:
    return {
        "num_users": cfg.num_users,
        "arrival_prob": cfg.arrival_prob.tolist(),
        "weight": cfg.weight.tolist(),
        "power_bound": cfg.power_bound.tolist(),
        "distortion_bound": cfg.distortion_bound.tolist(),
        "r_max": cfg.r_max,
        "channel": {
            "gains": [list(row) for row in cfg.channel.gains],
            "probs": [list(row) for row in cfg.channel.probs],
        },
        "rate_function": cfg.rate_function.name,
        "distortion": {"name": cfg.distortion.name,
                       "values": cfg.distortion.values.tolist()},
    }
