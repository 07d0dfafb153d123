"""Closed-form stationary performance of stationary randomized policies.

A policy is summarized by the scheduling distribution mu(h, rho) over the
enumerated grid. Per-user delivery probability p_i is linear in mu; the
stationary version-age, queue occupancy, distortion, and power then follow in
closed form. Constraint checks always use the primed (affine) forms
D'_i <= Dbar'_i and P'_i <= Pbar'_i, which are what the dual solver controls.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

CONSTRAINT_TOL = 1e-6


@dataclass
class StationaryMetrics:
    """Stationary per-user statistics of a scheduling distribution."""

    delivery_prob: np.ndarray
    vaoi: np.ndarray
    occupancy: np.ndarray
    distortion: np.ndarray
    distortion_prime: np.ndarray
    distortion_bound_prime: np.ndarray
    power_without_pa: np.ndarray
    power_with_pa: np.ndarray
    power_prime: np.ndarray
    power_bound_prime: np.ndarray
    objective: float


def check_scheduling_distribution(mu: np.ndarray, tol: float = 1e-9) -> None:
    """Validate 0 <= mu <= 1 and per-state simplex sums within tol."""
    mu = np.asarray(mu)
    if np.any(mu < -tol) or np.any(mu > 1 + tol):
        raise ValueError("mu entries must lie in [0, 1]")
    sums = mu.sum(axis=1)
    if np.any(np.abs(sums - 1.0) > tol):
        raise ValueError(f"per-state mu sums deviate from 1 by {np.abs(sums - 1).max():.2e}")


def delivery_probability(mu: np.ndarray, state_probs: np.ndarray,
                         active: np.ndarray) -> np.ndarray:
    """p_i = sum_rho E_h[mu(h, rho) 1{rho_i > 0}], shape (M,)."""
    return np.einsum("s,sv,vi->i", state_probs, mu, active.astype(float))


def average_vaoi(lam, p) -> np.ndarray:
    """Stationary average version-age lam_i (1/p_i - 1).

    Zero when lam_i = 0 (no versions to lag behind); +inf sentinel when
    p_i = 0 with lam_i > 0.
    """
    lam = np.asarray(lam, dtype=float)
    p = np.asarray(p, dtype=float)
    out = np.zeros(lam.shape)
    live = lam > 0
    with np.errstate(divide="ignore"):
        out[live] = lam[live] * (1.0 / p[live] - 1.0)
    return out


def queue_occupancy(lam, p) -> np.ndarray:
    """P(Q_i = 1) = lam_i / (lam_i (1 - p_i) + p_i); 0 when lam_i = p_i = 0."""
    lam = np.asarray(lam, dtype=float)
    p = np.asarray(p, dtype=float)
    denom = lam + p * (1.0 - lam)
    out = np.zeros(lam.shape)
    pos = denom > 0
    out[pos] = lam[pos] / denom[pos]
    return out


def average_distortion(mu, state_probs, delta_active, lam, d_bar, p=None,
                       active=None):
    """Distortion triple (D, D', Dbar') per user.

    D'_i = lam_i sum_rho E_h[mu delta(rho_i) 1{rho_i>0}] is the affine form;
    Dbar'_i = Dbar_i (lam_i - lam_i p_i + p_i) its bound; D_i = D'_i / denom
    the long-term average itself. The constraint holds iff D' <= Dbar'.
    """
    lam = np.asarray(lam, dtype=float)
    if p is None:
        p = delivery_probability(mu, state_probs, active)
    d_prime = lam * np.einsum("s,sv,vi->i", state_probs, mu, delta_active)
    d_bar_prime = np.asarray(d_bar, dtype=float) * (lam + p * (1.0 - lam))
    denom = lam + p * (1.0 - lam)
    d_avg = np.divide(d_prime, denom, out=np.zeros_like(d_prime), where=denom > 0)
    return d_avg, d_prime, d_bar_prime


def average_power(mu, state_probs, powers, lam, mode: str = "without_pa",
                  p=None, active=None):
    """Per-user average transmit power of the policy.

    without_pa: unconditional E[mu f_i] (the accounting of the base policy).
    with_pa:    lam_i E[mu f_i] / (lam_i(1-p_i) + p_i) — actual consumption,
                crediting slots where the scheduled queue is empty.
    """
    expected = np.einsum("s,sv,svi->i", state_probs, mu, powers)
    if mode == "without_pa":
        return expected
    if mode == "with_pa":
        lam = np.asarray(lam, dtype=float)
        if p is None:
            p = delivery_probability(mu, state_probs, active)
        denom = lam + p * (1.0 - lam)
        return np.divide(lam * expected, denom,
                         out=np.zeros_like(expected), where=denom > 0)
    raise ValueError(f"unknown power mode {mode!r}")


def power_primed(mu, state_probs, powers, lam, p_bar, p=None, active=None):
    """Affine power constraint pair (P'_i, Pbar'_i) of the adjusted accounting:
    P'_i = lam_i E[mu f_i] <= Pbar_i (lam_i - lam_i p_i + p_i)."""
    lam = np.asarray(lam, dtype=float)
    if p is None:
        p = delivery_probability(mu, state_probs, active)
    p_prime = lam * np.einsum("s,sv,svi->i", state_probs, mu, powers)
    p_bar_prime = np.asarray(p_bar, dtype=float) * (lam + p * (1.0 - lam))
    return p_prime, p_bar_prime


def weighted_objective(w, lam, p) -> float:
    """sum_i w_i lam_i (1/p_i - 1); zero-weight users contribute 0 even at p_i=0."""
    w = np.asarray(w, dtype=float)
    vaoi = average_vaoi(lam, p)
    terms = np.where(w > 0, w * vaoi, 0.0)
    return float(terms.sum())


def stationary_metrics(mu, powers, disc, cfg, weights=None) -> StationaryMetrics:
    """All stationary statistics of mu with per-pair expected powers ``powers``
    (shape (S, V, M), conditional on the pair being scheduled)."""
    w = np.asarray(weights if weights is not None else cfg.weight, dtype=float)
    lam = cfg.arrival_prob
    ps, act = disc.state_probs, disc.active
    p = delivery_probability(mu, ps, act)
    d_avg, d_prime, d_bar_prime = average_distortion(
        mu, ps, disc.delta_active, lam, cfg.distortion_bound, p=p)
    p_prime, p_bar_prime = power_primed(mu, ps, powers, lam, cfg.power_bound, p=p)
    return StationaryMetrics(
        delivery_prob=p,
        vaoi=average_vaoi(lam, p),
        occupancy=queue_occupancy(lam, p),
        distortion=d_avg,
        distortion_prime=d_prime,
        distortion_bound_prime=d_bar_prime,
        power_without_pa=average_power(mu, ps, powers, lam, "without_pa"),
        power_with_pa=average_power(mu, ps, powers, lam, "with_pa", p=p),
        power_prime=p_prime,
        power_bound_prime=p_bar_prime,
        objective=weighted_objective(w, lam, p),
    )


def lower_bound(cfg, solver_cfg=None, mode: str = "noma_no_pa") -> float:
    """Version-age lower bound over all admissible policies.

    Solves the same program with objective coefficients halved; the halved
    optimum L_B satisfies L_B <= V_opt <= V_SRP <= 2 L_B.
    """
    from .dual_solver import solve  # deferred: analytics must not cycle on the solver

    policy = solve(cfg, solver_cfg=solver_cfg, mode=mode, halve_objective=True)
    return policy.objective
