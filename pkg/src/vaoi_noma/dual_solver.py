"""Dual decomposition solver for the stationary randomized scheduling program.

The program minimizes sum_i w_i lam_i (1/p_i - 1) over scheduling
distributions mu(h, rho) and expected-power variables pi, subject to average
power, average distortion (primed affine form), and per-pair MAC constraints.
After substituting eta_i for 1/p_i, the power, distortion, and linking
constraints are dualized with multipliers (beta, alpha, nu) >= 0. For fixed
multipliers the Lagrangian minimizers are closed-form:

  * powers: the cheapest MAC vertex, decoding order by sorting
    h_i 1{rho_i>0} / beta_i (effective prices beta_i lam_i in PA mode);
  * mu: uniform over the argmin of the per-pair action cost A(h, rho);
  * eta_i: sqrt(max{nu_i - alpha_i Dbar_i (1 - lam_i), eps_r} / (w_i lam_i)).

The multipliers ascend along constraint-violation subgradients with
diminishing steps s_k = s0/k. Because the dual optimum may not be unique, the
final L iterates are ergodically averaged and the empirical decoding-order
frequencies per (h, rho) define the deployable randomized policy.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from . import analytics
from .model import Discretization, SystemConfig
from .sic import batch_vertex_powers, sic_power_allocation

MODES = ("noma_no_pa", "noma_pa", "tdma_no_pa", "tdma_pa", "lower_bound_variant")
POLICY_FEASIBILITY_TOL = 1e-3


@dataclass
class SolverConfig:
    """Knobs of the subgradient ascent loop."""

    step_scale: float = 1.0        # s0 in s_k = s0 / k
    tolerance: float = 1e-6        # stopping threshold on the smoothed best dual value
    regularization: float = 1e-8   # eps_r floor inside the eta update
    averaging_window: int = 500    # L, ergodic-averaging iterations after convergence
    max_iterations: int = 50_000
    tie_tolerance: float = 1e-9    # action costs within this of the min share mu mass
    weight_floor: float = 1e-9     # effective w_i lam_i floor for zero-weight users
    convergence_window: int = 50   # smoothing window of the stopping rule
    patience: int = 1000           # stop when the smoothed best stalls this long
    gradient_clip: float = 10.0    # cap on ||subgradient||_2 per ascent step
    averaging_step: float = 1e-2   # constant step during ergodic averaging
    dual_init: float = 1.0         # initial value of every multiplier
    log_path: str | None = None    # optional CSV of per-iteration diagnostics

    def __post_init__(self):
        if min(self.step_scale, self.tolerance, self.regularization,
               self.tie_tolerance, self.weight_floor) <= 0:
            raise ValueError("solver scalars must be positive")
        if self.dual_init < 0:
            raise ValueError("dual_init must be nonnegative")
        if self.averaging_window < 1:
            raise ValueError("averaging_window must be >= 1")
        if self.max_iterations < self.averaging_window + 2 * self.convergence_window:
            raise ValueError("max_iterations too small for the configured windows")

    def scaled(self, factor: float) -> "SolverConfig":
        """Rescale every quantity carrying objective units by ``factor``.

        Scaling (weights, duals, steps, tolerances) together by c reproduces
        the identical primal trajectory with dual values scaled by c, which
        makes the halved-objective bound run an exact mirror of the base run.
        """
        return replace(
            self,
            step_scale=self.step_scale * factor,
            tolerance=self.tolerance * factor,
            regularization=self.regularization * factor,
            tie_tolerance=self.tie_tolerance * factor,
            weight_floor=self.weight_floor * factor,
            averaging_step=self.averaging_step * factor,
            dual_init=self.dual_init * factor,
        )


@dataclass
class DualVariables:
    """Multipliers for the power (beta), distortion (alpha), and linking (nu)
    constraints; componentwise nonnegative."""

    beta: np.ndarray
    alpha: np.ndarray
    nu: np.ndarray

    @classmethod
    def ones(cls, m: int, value: float = 1.0) -> "DualVariables":
        return cls(np.full(m, value), np.full(m, value), np.full(m, value))

    def copy(self) -> "DualVariables":
        return DualVariables(self.beta.copy(), self.alpha.copy(), self.nu.copy())

    def min(self) -> float:
        return float(min(self.beta.min(), self.alpha.min(), self.nu.min()))


@dataclass
class PrimalSolution:
    """Lagrangian minimizer for fixed multipliers."""

    mu: np.ndarray       # (S, V)
    pi: np.ndarray       # (S, V, M) expected-power variables mu * f
    eta: np.ndarray      # (M,)
    powers: np.ndarray   # (S, V, M) vertex powers f*
    orders: np.ndarray   # (S, V, M) decoding orders
    action_costs: np.ndarray  # (S, V)


@dataclass
class Action:
    """One deployable action: rate vector, decoding order, vertex powers."""

    rho: tuple
    theta: tuple
    powers: np.ndarray
    prob: float


@dataclass
class RandomizedPolicy:
    """Per-channel-state distribution over (rate vector, decoding order,
    power allocation) actions, plus its stationary metrics."""

    mode: str
    state_gains: np.ndarray
    state_probs: np.ndarray
    rates: np.ndarray
    mu: np.ndarray                        # (S, V) averaged scheduling distribution
    actions: list                         # list (per state) of lists of Action
    metrics: "analytics.StationaryMetrics" = None
    weights_used: np.ndarray = None
    dual_value: float = np.nan
    objective: float = np.nan
    converged: bool = True
    feasible: bool = True
    iterations: int = 0
    duals: DualVariables = None
    _tables: list = field(default=None, repr=False)

    @property
    def rate_mode(self) -> str:
        return "tdma" if self.mode.startswith("tdma") else "full"

    def sampling_tables(self):
        """Per-state arrays (cum_probs, rho matrix, power matrix) for fast
        slot-level sampling."""
        if self._tables is None:
            tables = []
            for acts in self.actions:
                probs = np.array([a.prob for a in acts])
                cum = np.cumsum(probs)
                cum[-1] = 1.0
                rho = np.array([a.rho for a in acts], dtype=int)
                pw = np.array([a.powers for a in acts])
                tables.append((cum, rho, pw))
            self._tables = tables
        return self._tables

    def to_dict(self) -> dict:
        return {
            "mode": self.mode,
            "state_gains": self.state_gains.tolist(),
            "state_probs": self.state_probs.tolist(),
            "rates": self.rates.tolist(),
            "actions": [
                [
                    {"rho": list(a.rho), "theta": list(a.theta),
                     "powers": a.powers.tolist(), "prob": a.prob}
                    for a in acts
                ]
                for acts in self.actions
            ],
            "weights_used": self.weights_used.tolist(),
            "dual_value": self.dual_value,
            "objective": self.objective,
            "converged": self.converged,
            "feasible": self.feasible,
            "iterations": self.iterations,
        }


def _parse_mode(mode: str):
    if mode not in MODES:
        raise ValueError(f"mode must be one of {MODES}, got {mode!r}")
    if mode == "lower_bound_variant":
        return "full", False, True
    rate_mode = "tdma" if mode.startswith("tdma") else "full"
    pa = mode in ("noma_pa", "tdma_pa")
    return rate_mode, pa, False


class DualDecomposition:
    """Closed-form primal updates and dual bookkeeping on a fixed grid."""

    def __init__(self, cfg: SystemConfig, mode: str = "noma_no_pa",
                 weights: np.ndarray | None = None):
        rate_mode, pa, halve = _parse_mode(mode)
        self.cfg = cfg
        self.mode = mode
        self.pa = pa
        self.disc = Discretization(cfg, rate_mode)
        self.w = np.asarray(weights if weights is not None else cfg.weight,
                            dtype=float)
        if halve:
            self.w = self.w * 0.5
        self.lam = cfg.arrival_prob
        self.p_bar = cfg.power_bound
        self.d_bar = cfg.distortion_bound

    # --- closed-form primal pieces -------------------------------------

    def effective_power_prices(self, beta: np.ndarray) -> np.ndarray:
        return beta * self.lam if self.pa else beta

    def vertex_powers(self, duals: DualVariables):
        return batch_vertex_powers(
            self.disc.state_gains, self.disc.rates,
            self.effective_power_prices(duals.beta), self.disc.ginv_table,
        )

    def action_costs(self, duals: DualVariables, powers: np.ndarray) -> np.ndarray:
        """A(h, rho) = sum_i (beta_eff_i f*_i + alpha_i lam_i delta(rho_i) 1{rho_i>0}
        - nu_i 1{rho_i>0}), plus -beta_i Pbar_i (1-lam_i) 1{rho_i>0} in PA mode."""
        d = self.disc
        beta_eff = self.effective_power_prices(duals.beta)
        per_vec = d.delta_active @ (duals.alpha * self.lam) - d.active @ duals.nu
        if self.pa:
            per_vec = per_vec - d.active @ (duals.beta * self.p_bar * (1.0 - self.lam))
        return np.einsum("i,svi->sv", beta_eff, powers) + per_vec[None, :]

    def optimize_mu(self, costs: np.ndarray, tie_tol: float) -> np.ndarray:
        """Uniform distribution over per-state action costs within tie_tol of
        the minimum."""
        ties = costs <= costs.min(axis=1, keepdims=True) + tie_tol
        return ties / ties.sum(axis=1, keepdims=True)

    def optimize_eta(self, duals: DualVariables, eps_r: float,
                     w_min: float) -> np.ndarray:
        numer = np.maximum(duals.nu - duals.alpha * self.d_bar * (1.0 - self.lam),
                           eps_r)
        denom = np.maximum(self.w * self.lam, w_min)
        return np.sqrt(numer / denom)

    def primal_update(self, duals: DualVariables,
                      scfg: SolverConfig) -> PrimalSolution:
        orders, powers = self.vertex_powers(duals)
        costs = self.action_costs(duals, powers)
        mu = self.optimize_mu(costs, scfg.tie_tolerance)
        eta = self.optimize_eta(duals, scfg.regularization, scfg.weight_floor)
        pi = mu[:, :, None] * powers
        return PrimalSolution(mu=mu, pi=pi, eta=eta, powers=powers,
                              orders=orders, action_costs=costs)

    # --- dual side ------------------------------------------------------

    def subgradients(self, primal: PrimalSolution, duals: DualVariables):
        """Constraint-violation subgradients (zeta_beta, zeta_alpha, zeta_nu)."""
        d = self.disc
        p = np.einsum("s,sv,vi->i", d.state_probs, primal.mu,
                      d.active.astype(float))
        pi_sum = np.einsum("s,svi->i", d.state_probs, primal.pi)
        d_prime = self.lam * np.einsum("s,sv,vi->i", d.state_probs, primal.mu,
                                       d.delta_active)
        if self.pa:
            # lam + p(1-lam) rather than lam - lam p + p: exactly 1 at lam = 1,
            # which makes the PA run bitwise identical to the no-PA run there
            zeta_beta = self.lam * pi_sum - self.p_bar * (
                self.lam + p * (1.0 - self.lam))
        else:
            zeta_beta = pi_sum - self.p_bar
        d_bar_prime = self.d_bar * (self.lam
                                    + (1.0 - self.lam) / primal.eta)
        zeta_alpha = d_prime - d_bar_prime
        zeta_nu = 1.0 / primal.eta - p
        return zeta_beta, zeta_alpha, zeta_nu

    def average_stats(self, mu_bar: np.ndarray, pi_bar: np.ndarray):
        """(weighted objective, worst constraint violation) of an averaged
        primal; used to decide when the ergodic average has stabilized."""
        d = self.disc
        p = np.einsum("s,sv,vi->i", d.state_probs, mu_bar,
                      d.active.astype(float))
        pi_sum = np.einsum("s,svi->i", d.state_probs, pi_bar)
        d_prime = self.lam * np.einsum("s,sv,vi->i", d.state_probs, mu_bar,
                                       d.delta_active)
        d_bar_prime = self.d_bar * (self.lam + p * (1.0 - self.lam))
        if self.pa:
            pow_viol = self.lam * pi_sum - self.p_bar * (
                self.lam + p * (1.0 - self.lam))
        else:
            pow_viol = pi_sum - self.p_bar
        viol = max(float(np.max(pow_viol)), float(np.max(d_prime - d_bar_prime)),
                   0.0)
        return analytics.weighted_objective(self.w, self.lam, p), viol

    def dual_value(self, duals: DualVariables, primal: PrimalSolution) -> float:
        """Lagrangian at the minimizing primal, including the constant term."""
        d = self.disc
        eta_terms = (self.w * self.lam * primal.eta
                     + (duals.nu - duals.alpha * self.d_bar * (1.0 - self.lam))
                     / primal.eta).sum()
        mu_term = float(np.einsum("s,sv->", d.state_probs,
                                  primal.mu * primal.action_costs))
        p_bar_term = duals.beta * self.p_bar * (self.lam if self.pa else 1.0)
        const = -float((self.w * self.lam + p_bar_term
                        + duals.alpha * self.d_bar * self.lam).sum())
        return float(eta_terms + mu_term + const)


def update_duals(duals: DualVariables, subgradients, step: float,
                 gradient_clip: float = np.inf) -> DualVariables:
    """Projected ascent step: x <- max(0, x + step * zeta) componentwise.

    When the stacked subgradient norm exceeds gradient_clip the direction is
    rescaled to that norm, so one step near a cliff of the dual function (for
    example beta ~ 0, where the optimal vertex powers blow up) cannot throw
    the iterate far past the kink it is converging to.
    """
    zb, za, zn = subgradients
    if np.isfinite(gradient_clip):
        norm = np.sqrt(sum(float(z @ z) for z in subgradients))
        if norm > gradient_clip:
            step = step * gradient_clip / norm
    return DualVariables(
        beta=np.maximum(0.0, duals.beta + step * zb),
        alpha=np.maximum(0.0, duals.alpha + step * za),
        nu=np.maximum(0.0, duals.nu + step * zn),
    )


def action_cost(gains, rho, duals: DualVariables, cfg: SystemConfig,
                mode: str = "noma_no_pa") -> float:
    """Action cost A(h, rho) for a single pair (test/introspection surface)."""
    dd = DualDecomposition(cfg, mode)
    d = dd.disc
    s = d.state_index(gains)
    v_match = np.flatnonzero(np.all(d.rates == np.asarray(rho, dtype=int), axis=1))
    if v_match.size == 0:
        raise KeyError(f"rate vector {tuple(rho)} not in the {d.mode} grid")
    _, powers = dd.vertex_powers(duals)
    costs = dd.action_costs(duals, powers)
    return float(costs[s, v_match[0]])


def extract_policy(mu_bar: np.ndarray, order_freq: dict, disc: Discretization,
                   cfg: SystemConfig, mode: str, weights: np.ndarray,
                   mass_tol: float = 1e-12) -> RandomizedPolicy:
    """Turn averaged scheduling mass and decoding-order frequencies into the
    deployable action list.

    order_freq maps (state index, vector index, theta tuple) to accumulated
    mu-mass; per (s, v) the mass splits across observed orders proportionally,
    so the policy's expected powers reproduce the ergodic pi average exactly.
    """
    S, V = mu_bar.shape
    by_pair: dict = {}
    for (s, v, theta), wgt in order_freq.items():
        by_pair.setdefault((s, v), []).append((theta, wgt))
    actions = [[] for _ in range(S)]
    for s in range(S):
        for v in range(V):
            if mu_bar[s, v] <= mass_tol:
                continue
            observed = by_pair.get((s, v))
            if not observed:
                continue
            total_wgt = sum(wgt for _, wgt in observed)
            for theta, wgt in observed:
                theta = np.array(theta, dtype=int)
                f = sic_power_allocation(disc.state_gains[s], disc.rates[v],
                                         theta, cfg.rate_function)
                actions[s].append(Action(
                    rho=tuple(int(r) for r in disc.rates[v]),
                    theta=tuple(int(t) for t in theta),
                    powers=f,
                    prob=float(mu_bar[s, v] * wgt / total_wgt),
                ))
        if not actions[s]:
            # defensive: a state with no recorded mass idles
            actions[s].append(Action(
                rho=tuple(0 for _ in range(cfg.num_users)),
                theta=tuple(range(cfg.num_users)),
                powers=np.zeros(cfg.num_users),
                prob=1.0,
            ))
        total = sum(a.prob for a in actions[s])
        if abs(total - 1.0) > 1e-9:
            raise AssertionError(f"state {s}: action mass {total} far from 1")
        for a in actions[s]:
            a.prob /= total
    return RandomizedPolicy(
        mode=mode, state_gains=disc.state_gains, state_probs=disc.state_probs,
        rates=disc.rates, mu=mu_bar, actions=actions,
        weights_used=np.asarray(weights, dtype=float),
    )


def policy_from_mu(cfg: SystemConfig, mu: np.ndarray, mode: str = "noma_no_pa",
                   orders: np.ndarray | None = None) -> RandomizedPolicy:
    """Build a deployable policy from an explicit scheduling distribution.

    Decoding orders default to the unit-price sort (h descending among active
    users); powers are the corresponding vertex allocations.
    """
    analytics.check_scheduling_distribution(mu)
    dd = DualDecomposition(cfg, mode)
    d = dd.disc
    if orders is None:
        orders, powers = batch_vertex_powers(
            d.state_gains, d.rates, np.ones(cfg.num_users), d.ginv_table)
    else:
        orders = np.asarray(orders, dtype=int)
        powers = np.zeros_like(orders, dtype=float)
        for s in range(d.num_states):
            for v in range(d.num_vectors):
                powers[s, v] = sic_power_allocation(
                    d.state_gains[s], d.rates[v], orders[s, v], cfg.rate_function)
    freq = {}
    for s in range(d.num_states):
        for v in range(d.num_vectors):
            if mu[s, v] > 0:
                key = (s, v, tuple(int(t) for t in orders[s, v]))
                freq[key] = mu[s, v]
    policy = extract_policy(np.asarray(mu, dtype=float), freq, d, cfg, mode, dd.w)
    _policy_metrics(policy, mu[:, :, None] * powers, dd)
    return policy


def _policy_metrics(policy: RandomizedPolicy, pi_bar: np.ndarray,
                    dd: DualDecomposition) -> None:
    """Attach stationary metrics computed from the averaged (mu, pi)."""
    d = dd.disc
    mu = policy.mu
    with np.errstate(invalid="ignore"):
        eff_powers = np.where(mu[:, :, None] > 0,
                              pi_bar / np.where(mu[:, :, None] > 0, mu[:, :, None], 1.0),
                              0.0)
    metrics = analytics.stationary_metrics(mu, eff_powers, d, dd.cfg,
                                           weights=dd.w)
    policy.metrics = metrics
    policy.objective = metrics.objective
    if dd.pa:
        power_ok = np.all(metrics.power_prime
                          <= metrics.power_bound_prime + POLICY_FEASIBILITY_TOL)
    else:
        power_ok = np.all(metrics.power_without_pa
                          <= dd.p_bar + POLICY_FEASIBILITY_TOL)
    dist_ok = np.all(metrics.distortion_prime
                     <= metrics.distortion_bound_prime + POLICY_FEASIBILITY_TOL)
    policy.feasible = bool(power_ok and dist_ok)


def solve(cfg: SystemConfig, solver_cfg: SolverConfig | None = None,
          mode: str = "noma_no_pa", halve_objective: bool = False,
          return_history: bool = False):
    """Run the subgradient ascent, average the trailing window, and extract
    the randomized policy.

    halve_objective (or mode="lower_bound_variant") scales the objective
    weights by 1/2 together with every objective-scaled solver quantity, so
    the run mirrors the base run exactly and realizes the factor-2 bound.
    """
    scfg = solver_cfg if solver_cfg is not None else SolverConfig()
    _, _, mode_halves = _parse_mode(mode)
    if mode_halves:
        halve_objective = True
    if halve_objective:
        scfg = scfg.scaled(0.5)
    base_mode = "noma_no_pa" if mode == "lower_bound_variant" else mode
    weights = cfg.weight * (0.5 if halve_objective else 1.0)
    dd = DualDecomposition(cfg, base_mode, weights=weights)
    m = cfg.num_users
    duals = DualVariables.ones(m, scfg.dual_init)

    log_rows = []
    z_hist = []
    smoothed_best_hist = []
    z_best = -np.inf
    smoothed_best = -np.inf
    window = scfg.convergence_window
    search_limit = scfg.max_iterations - scfg.averaging_window
    converged = False
    k = 0

    def one_iteration(duals, step=None):
        nonlocal k, z_best, smoothed_best
        k += 1
        primal = dd.primal_update(duals, scfg)
        z = dd.dual_value(duals, primal)
        z_hist.append(z)
        z_best = max(z_best, z)
        if k >= window:
            smoothed_best = max(smoothed_best,
                                float(np.mean(z_hist[-window:])))
        smoothed_best_hist.append(smoothed_best)
        subs = dd.subgradients(primal, duals)
        if scfg.log_path is not None:
            viol = max(float(np.max(s, initial=0.0)) for s in subs)
            log_rows.append((k, z, max(viol, 0.0)))
        if step is None:
            step = scfg.step_scale / k
        return primal, update_duals(duals, subs, step, scfg.gradient_clip)

    # converged once the best window-smoothed dual value stops improving by
    # more than the tolerance over a full patience horizon
    while k < search_limit:
        _, duals = one_iteration(duals)
        if k >= window + scfg.patience:
            gain = smoothed_best_hist[-1] - smoothed_best_hist[-1 - scfg.patience]
            if gain < scfg.tolerance:
                converged = True
                break

    # Ergodic averaging with a small constant step (classical constant-step
    # primal recovery). Continuing the 1/k decay here freezes the multipliers
    # wherever the search left them, slightly off the optimum, and the window
    # then averages a biased vertex mixture; a constant hover step lets them
    # re-center and cross their tie surfaces so the time-average converges to
    # the optimal mixture. Blocks of L are appended until two consecutive
    # block averages agree, within the overall iteration budget.
    L = scfg.averaging_window
    hover_step = scfg.averaging_step
    max_blocks = max(1, (scfg.max_iterations - k) // L)
    mu_sum = np.zeros((dd.disc.num_states, dd.disc.num_vectors))
    pi_sum = np.zeros((dd.disc.num_states, dd.disc.num_vectors, m))
    order_freq: dict = {}
    count = 0
    prev_stats = None
    for _ in range(max_blocks):
        mu_block = np.zeros_like(mu_sum)
        pi_block = np.zeros_like(pi_sum)
        for _ in range(L):
            primal, duals = one_iteration(duals, step=hover_step)
            mu_block += primal.mu
            pi_block += primal.pi
            for s, v in np.argwhere(primal.mu > 0):
                key = (int(s), int(v), tuple(int(t) for t in primal.orders[s, v]))
                order_freq[key] = order_freq.get(key, 0.0) + primal.mu[s, v]
        mu_sum += mu_block
        pi_sum += pi_block
        count += L
        stats = dd.average_stats(mu_block / L, pi_block / L)
        if prev_stats is not None:
            d_obj = abs(stats[0] - prev_stats[0])
            if np.isnan(d_obj):  # inf objective on both blocks (some p_i = 0)
                d_obj = 0.0
            settled = (d_obj <= max(1e-4, 1e-3 * abs(stats[0]))
                       and abs(stats[1] - prev_stats[1]) <= 1e-4)
            if settled:
                cum_stats = dd.average_stats(mu_sum / count, pi_sum / count)
                if cum_stats[1] <= POLICY_FEASIBILITY_TOL:
                    break
        prev_stats = stats
    mu_bar = mu_sum / count
    pi_bar = pi_sum / count

    policy = extract_policy(mu_bar, order_freq, dd.disc, cfg, mode, dd.w)
    _policy_metrics(policy, pi_bar, dd)
    policy.dual_value = z_best
    policy.converged = converged
    policy.iterations = k
    policy.duals = duals

    if scfg.log_path is not None:
        with open(scfg.log_path, "w") as fh:
            fh.write("iteration,dual_value,max_violation\n")
            for row in log_rows:
                fh.write(f"{row[0]},{row[1]:.10g},{row[2]:.10g}\n")
    if return_history:
        return policy, {"z": np.array(z_hist),
                        "smoothed_best": np.array(smoothed_best_hist)}
    return policy
