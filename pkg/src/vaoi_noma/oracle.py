"""Independent desk-scale verification of the dual solver.

solve_direct materializes the explicit convex program — objective
sum w_i lam_i (1/p_i - 1), per-user power and primed distortion constraints,
and every one of the |H| |R| (2^M - 1) MAC constraints — and hands it to a
generic conic solver. It shares no code with the dual decomposition path.

single_user_lp solves the M = 1 case exactly as a linear program (maximizing
the delivery probability), a second independent route for the single-user
studies. vaoi_chain_oracle / queue_chain_oracle simulate the per-user Markov
chains directly from their defining recursions.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import cvxpy as cp
import numpy as np
from scipy.optimize import linprog

from .model import Discretization, SystemConfig
from .sic import violated_subsets

SIZE_GUARD = 10_000


@dataclass
class OracleSolution:
    objective: float
    mu: np.ndarray          # (S, V)
    pi: np.ndarray          # (S, V, M)
    delivery_prob: np.ndarray
    status: str


def _mode_flags(mode: str):
    if mode not in ("noma_no_pa", "noma_pa", "tdma_no_pa", "tdma_pa"):
        raise ValueError(f"unsupported oracle mode {mode!r}")
    return ("tdma" if mode.startswith("tdma") else "full",
            mode in ("noma_pa", "tdma_pa"))


def solve_direct(cfg: SystemConfig, tol: float = 1e-8,
                 mode: str = "noma_no_pa") -> OracleSolution:
    """Solve the explicit program with a generic convex solver (tiny scale only)."""
    rate_mode, pa = _mode_flags(mode)
    d = Discretization(cfg, rate_mode)
    S, V, M = d.num_states, d.num_vectors, cfg.num_users
    if S * V * (2 ** M) > SIZE_GUARD:
        raise ValueError(
            f"instance too large for the direct oracle: {S}*{V}*2^{M} > {SIZE_GUARD}")

    lam, w = cfg.arrival_prob, cfg.weight
    ps = d.state_probs
    act = d.active.astype(float)
    ps_rep = np.repeat(ps, V)                      # (S*V,)
    gains_rep = np.repeat(d.state_gains, V, axis=0)  # (S*V, M)
    act_rep = np.tile(d.active, (S, 1))            # (S*V, M)

    mu = cp.Variable((S, V), nonneg=True)
    pi = cp.Variable((S * V, M), nonneg=True)
    mu_flat = cp.reshape(mu, (S * V,), order="C")

    p = (ps @ mu) @ act                            # (M,) delivery probabilities
    cons = [mu <= 1, cp.sum(mu, axis=1) == 1,
            cp.multiply(pi, 1.0 - act_rep) == 0]

    expected_power = ps_rep @ pi                   # (M,)
    if pa:
        cons.append(cp.multiply(lam, expected_power)
                    <= cp.multiply(cfg.power_bound, lam - cp.multiply(lam, p) + p))
    else:
        cons.append(expected_power <= cfg.power_bound)

    d_prime = cp.multiply(lam, (ps @ mu) @ d.delta_active)
    cons.append(d_prime
                <= cp.multiply(cfg.distortion_bound, lam - cp.multiply(lam, p) + p))

    for mask in range(1, 1 << M):
        members = [i for i in range(M) if mask >> i & 1]
        need = d.ginv_table[d.rates[:, members].sum(axis=1)]   # (V,)
        lhs = cp.multiply(mu_flat, np.tile(need, S))
        rhs = cp.sum(cp.multiply(pi[:, members], gains_rep[:, members]), axis=1)
        cons.append(lhs <= rhs)

    live = w * lam > 0
    obj_terms = [w[i] * lam[i] * (cp.inv_pos(p[i]) - 1.0)
                 for i in range(M) if live[i]]
    objective = cp.Minimize(cp.sum(cp.hstack(obj_terms)) if obj_terms else 0.0)

    prob = cp.Problem(objective, cons)
    try:
        prob.solve(solver=cp.CLARABEL)
    except cp.error.SolverError:
        prob.solve(solver=cp.SCS, eps=min(tol, 1e-7), max_iters=200_000)

    if prob.status in ("infeasible", "infeasible_inaccurate"):
        # the all-zero schedule always satisfies the constraints; infeasibility
        # means some weighted user cannot reach p_i > 0
        idle_mu = np.zeros((S, V))
        idle_mu[:, np.flatnonzero(d.rate_sums == 0)[0]] = 1.0
        return OracleSolution(np.inf, idle_mu, np.zeros((S, V, M)),
                              np.zeros(M), "forced_idle")
    if prob.status not in ("optimal", "optimal_inaccurate"):
        raise RuntimeError(f"oracle solve failed with status {prob.status}")

    mu_val = np.clip(mu.value, 0.0, 1.0)
    mu_val /= mu_val.sum(axis=1, keepdims=True)
    pi_val = np.maximum(pi.value, 0.0).reshape(S, V, M)
    p_val = np.einsum("s,sv,vi->i", ps, mu_val, act)
    return OracleSolution(float(prob.value), mu_val, pi_val, p_val, prob.status)


def single_user_lp(cfg: SystemConfig, mode: str = "noma_no_pa") -> OracleSolution:
    """Exact M = 1 solution: maximize p over the affine feasible set.

    With one user there is no decoding-order freedom, so pi = mu * g^{-1}(rho)/h
    is linear in mu and the whole program is an LP in mu alone.
    """
    if cfg.num_users != 1:
        raise ValueError("single_user_lp requires M = 1")
    _, pa = _mode_flags(mode)
    d = Discretization(cfg, "full")
    S, V = d.num_states, d.num_vectors
    lam, p_bar, d_bar = cfg.arrival_prob[0], cfg.power_bound[0], cfg.distortion_bound[0]

    # variables x[s*V + v] = mu(h_s, rho_v)
    n = S * V
    f_table = (d.ginv_table[d.rates[:, 0]][None, :]
               / d.state_gains[:, 0][:, None])            # (S, V)
    p_coef = np.repeat(d.state_probs, V) * np.tile(d.active[:, 0], S)
    pow_coef = (d.state_probs[:, None] * f_table).ravel()
    dist_coef = np.repeat(d.state_probs, V) * np.tile(d.delta_active[:, 0], S)

    a_ub, b_ub = [], []
    if pa:
        # lam * E[mu f] - p_bar*(1 - lam)*p <= p_bar * lam
        a_ub.append(lam * pow_coef - p_bar * (1.0 - lam) * p_coef)
        b_ub.append(p_bar * lam)
    else:
        a_ub.append(pow_coef)
        b_ub.append(p_bar)
    # lam * E[mu delta 1{rho>0}] - d_bar*(1 - lam)*p <= d_bar * lam
    a_ub.append(lam * dist_coef - d_bar * (1.0 - lam) * p_coef)
    b_ub.append(d_bar * lam)

    a_eq = np.zeros((S, n))
    for s in range(S):
        a_eq[s, s * V:(s + 1) * V] = 1.0
    res = linprog(-p_coef, A_ub=np.array(a_ub), b_ub=np.array(b_ub),
                  A_eq=a_eq, b_eq=np.ones(S), bounds=(0, 1), method="highs")
    if not res.success:
        raise RuntimeError(f"single-user LP failed: {res.message}")
    mu_val = res.x.reshape(S, V)
    p_val = float(p_coef @ res.x)
    pi_val = (mu_val * f_table)[:, :, None]
    if p_val <= 0:
        obj = np.inf if lam * cfg.weight[0] > 0 else 0.0
    else:
        obj = float(cfg.weight[0] * lam * (1.0 / p_val - 1.0))
    return OracleSolution(obj, mu_val, pi_val, np.array([p_val]), "optimal_lp")


@dataclass
class PolicyReport:
    passed: bool
    failures: list = field(default_factory=list)
    warnings: list = field(default_factory=list)
    worst_violation: float = 0.0

    def __str__(self):
        lines = ["PASS" if self.passed else "FAIL"]
        lines += [f"  failure: {f}" for f in self.failures]
        lines += [f"  warning: {w}" for w in self.warnings]
        return "\n".join(lines)


def verify_policy(policy, cfg: SystemConfig, tol: float = 1e-3) -> PolicyReport:
    """Recheck every invariant of a randomized policy from its action list."""
    from . import analytics

    report = PolicyReport(passed=True)
    rate_mode = policy.rate_mode
    d = Discretization(cfg, rate_mode)
    S, V, M = d.num_states, d.num_vectors, cfg.num_users
    vec_index = {tuple(v): j for j, v in enumerate(d.rates)}

    mu = np.zeros((S, V))
    pi = np.zeros((S, V, M))
    for s, acts in enumerate(policy.actions):
        total = sum(a.prob for a in acts)
        if abs(total - 1.0) > 1e-9:
            report.failures.append(f"state {s}: action probabilities sum to {total}")
        for a in acts:
            if tuple(a.rho) not in vec_index:
                report.failures.append(f"state {s}: rate vector {a.rho} off-grid")
                continue
            v = vec_index[tuple(a.rho)]
            mu[s, v] += a.prob
            pi[s, v] += a.prob * np.asarray(a.powers)
            silent = np.asarray(a.rho) == 0
            if np.any(np.asarray(a.powers)[silent] != 0):
                report.failures.append(
                    f"state {s}: nonzero power on a silent user in {a.rho}")
            bad = violated_subsets(d.state_gains[s], a.rho, a.powers,
                                   cfg.rate_function, tol=1e-9)
            for members, gap in bad:
                report.failures.append(
                    f"state {s}, rho={a.rho}: MAC subset {members} violated by {gap:.2e}")
                report.worst_violation = max(report.worst_violation, gap)

    lam = cfg.arrival_prob
    p = analytics.delivery_probability(mu, d.state_probs, d.active)
    if np.any((p <= 0) & (lam > 0)):
        report.warnings.append(f"zero delivery probability for users "
                               f"{np.flatnonzero((p <= 0) & (lam > 0)).tolist()}")
    _, d_prime, d_bar_prime = analytics.average_distortion(
        mu, d.state_probs, d.delta_active, lam, cfg.distortion_bound, p=p)
    gap_d = float(np.max(d_prime - d_bar_prime))
    if gap_d > tol:
        report.failures.append(f"distortion constraint violated by {gap_d:.2e}")
    expected_power = np.einsum("s,svi->i", d.state_probs, pi)
    if policy.mode in ("noma_pa", "tdma_pa"):
        gap_p = float(np.max(lam * expected_power
                             - cfg.power_bound * (lam - lam * p + p)))
    else:
        gap_p = float(np.max(expected_power - cfg.power_bound))
    if gap_p > tol:
        report.failures.append(f"power constraint violated by {gap_p:.2e}")
    report.worst_violation = max(report.worst_violation, gap_d, gap_p)

    report.passed = not report.failures
    return report


def vaoi_chain_oracle(lam: float, p: float, T: int, seed: int) -> float:
    """Time-averaged version-age of the single-user chain
    Delta(t) = (Delta(t-1) + A(t)) * (1 - I(t)), A ~ Bern(lam), I ~ Bern(p)."""
    if T < 1:
        raise ValueError("T must be >= 1")
    rng = np.random.default_rng(seed)
    arrivals = rng.random(T) < lam
    deliveries = rng.random(T) < p
    delta = 0
    total = 0
    for t in range(T):
        delta = 0 if deliveries[t] else delta + arrivals[t]
        total += delta
    return total / T


def queue_chain_oracle(lam: float, p: float, T: int, seed: int) -> float:
    """Occupancy of the single-packet queue: pending-after-arrival frequency
    when the slot is scheduled with probability p independent of the queue."""
    rng = np.random.default_rng(seed)
    arrivals = rng.random(T) < lam
    scheduled = rng.random(T) < p
    q = False
    occupied = 0
    for t in range(T):
        q = q or arrivals[t]
        occupied += q
        if scheduled[t]:
            q = False
    return occupied / T
