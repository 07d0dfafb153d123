"""Weighted-sum-power minimization over the multiple-access capacity region.

For a fixed rate vector rho and gains h, the feasible received powers form a
polymatroid whose vertices correspond to successive-decoding orders. The
vertex for order theta assigns user theta_j the received-power increment
g^{-1}(R_j) - g^{-1}(R_{j+1}), where R_j is the suffix rate sum from stage j.
For g(x) = log2(1+x) this reduces to the familiar product form
f_{theta_j} = g^{-1}(rho_{theta_j})/h_{theta_j} * prod_{k>j} (1 + g^{-1}(rho_{theta_k})).

The order minimizing sum_i beta_i f_i sorts h_i * 1{rho_i > 0} / beta_i in
non-increasing order (adjacent-swap argument); a factorial brute force is kept
as the test oracle.
"""

from __future__ import annotations

import itertools

import numpy as np

from .model import default_rate_function

MAX_BRUTE_FORCE_USERS = 8


def decode_ratios(h, rho, beta) -> np.ndarray:
    """Sorting metric h_i * 1{rho_i>0} / beta_i, with +inf for beta_i = 0 on
    a transmitting user and 0 for silent users."""
    h = np.asarray(h, dtype=float)
    beta = np.asarray(beta, dtype=float)
    active = np.asarray(rho) > 0
    ratios = np.zeros(h.shape)
    pos = active & (beta > 0)
    ratios[pos] = h[pos] / beta[pos]
    ratios[active & (beta == 0)] = np.inf
    return ratios


def optimal_decoding_order(h, rho, beta) -> np.ndarray:
    """Decoding order (user indices, stage 1 first) minimizing weighted sum power.

    Ties and silent users resolve by ascending user index (stable sort),
    placing all silent users last. O(M log M).
    """
    ratios = decode_ratios(h, rho, beta)
    return np.argsort(-ratios, kind="stable")


def sic_power_allocation(h, rho, theta, rate_function=None) -> np.ndarray:
    """Transmit powers at the polymatroid vertex of decoding order theta.

    Returns f indexed by user. Stage j is decoded first among the remaining
    users and therefore sees the interference of all later stages; its
    received power is the nested-equality increment g^{-1}(R_j) - g^{-1}(R_{j+1}).
    """
    rf = rate_function if rate_function is not None else default_rate_function()
    h = np.asarray(h, dtype=float)
    rho = np.asarray(rho)
    theta = np.asarray(theta, dtype=int)
    m = h.size
    rho_sorted = rho[theta]
    suffix = np.concatenate([np.cumsum(rho_sorted[::-1])[::-1], [0]])
    f = np.zeros(m)
    for j in range(m):
        f[theta[j]] = (rf.inverse(suffix[j]) - rf.inverse(suffix[j + 1])) / h[theta[j]]
    return f


def weighted_sum_power(f, beta) -> float:
    return float(np.dot(np.asarray(f, dtype=float), np.asarray(beta, dtype=float)))


def brute_force_decoding_order(h, rho, beta, rate_function=None):
    """Exhaustive minimum of the weighted sum power over all M! orders.

    Test oracle only; refuses M > 8. Returns (order, minimal value), first
    minimizer in itertools.permutations order on ties.
    """
    m = len(h)
    if m > MAX_BRUTE_FORCE_USERS:
        raise ValueError(f"brute force limited to M <= {MAX_BRUTE_FORCE_USERS}, got {m}")
    best_theta, best_val = None, np.inf
    for perm in itertools.permutations(range(m)):
        f = sic_power_allocation(h, rho, perm, rate_function)
        val = weighted_sum_power(f, beta)
        if val < best_val:
            best_theta, best_val = np.array(perm), val
    return best_theta, best_val


def mac_feasible(h, rho, f, rate_function=None, tol: float = 1e-9) -> bool:
    """Check sum_{i in S} rho_i <= g(sum_{i in S} f_i h_i) + tol for every
    nonempty subset S."""
    rf = rate_function if rate_function is not None else default_rate_function()
    h = np.asarray(h, dtype=float)
    rho = np.asarray(rho, dtype=float)
    f = np.asarray(f, dtype=float)
    m = h.size
    received = f * h
    for mask in range(1, 1 << m):
        members = [i for i in range(m) if mask >> i & 1]
        if rho[members].sum() > rf(received[members].sum()) + tol:
            return False
    return True


def violated_subsets(h, rho, f, rate_function=None, tol: float = 1e-9) -> list:
    """All subsets violating the MAC constraint, with their slack (diagnostics)."""
    rf = rate_function if rate_function is not None else default_rate_function()
    h = np.asarray(h, dtype=float)
    rho = np.asarray(rho, dtype=float)
    f = np.asarray(f, dtype=float)
    m = h.size
    received = f * h
    bad = []
    for mask in range(1, 1 << m):
        members = tuple(i for i in range(m) if mask >> i & 1)
        gap = rho[list(members)].sum() - rf(received[list(members)].sum())
        if gap > tol:
            bad.append((members, float(gap)))
    return bad


def batch_vertex_powers(gains, rates, beta_eff, ginv_table):
    """Vertex powers for every (state, rate vector) pair at once.

    gains: (S, M), rates: (V, M) int, beta_eff: (M,) effective power prices,
    ginv_table: g^{-1} on integers 0..M*r_max. Returns (orders, powers) of
    shapes (S, V, M): orders[s, v] is the decoding order, powers[s, v] the
    per-user transmit powers of that vertex.
    """
    S, M = gains.shape
    V = rates.shape[0]
    active = rates > 0
    with np.errstate(divide="ignore"):
        price = np.where(beta_eff > 0, 1.0 / beta_eff, np.inf)
    # ratio h_i 1{rho_i>0} / beta_i as (S, V, M)
    ratios = gains[:, None, :] * np.where(active, price, 0.0)[None, :, :]
    orders = np.argsort(-ratios, axis=2, kind="stable")
    rho_sorted = np.take_along_axis(
        np.broadcast_to(rates, (S, V, M)), orders, axis=2
    )
    suffix = np.zeros((S, V, M + 1), dtype=int)
    suffix[:, :, :M] = np.cumsum(rho_sorted[:, :, ::-1], axis=2)[:, :, ::-1]
    increments = ginv_table[suffix[:, :, :M]] - ginv_table[suffix[:, :, 1:]]
    h_sorted = np.take_along_axis(
        np.broadcast_to(gains[:, None, :], (S, V, M)), orders, axis=2
    )
    powers = np.zeros((S, V, M))
    np.put_along_axis(powers, orders, increments / h_sorted, axis=2)
    return orders, powers
