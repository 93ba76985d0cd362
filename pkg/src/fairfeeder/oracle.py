"""Model-based curtailment oracle with full knowledge of the feeder.

Minimises ``cost + beta * fairness_penalty`` subject to every household
voltage staying within [0.95, 1.05] p.u. Two solvers share one evaluator:

* :func:`solve_exhaustive` is exact over a discrete α grid for tiny
  instances. Both objective terms are non-decreasing in every α entry (under
  the default sign), so per timestep only the minimal feasible grid points
  can be optimal. Instant cases then separate by timestep; accumulative
  cases run a dynamic programme over timesteps whose states are pruned by
  dominance and by a lower bound against a greedy incumbent.
* :func:`solve_descent` is a projected coordinate pattern search with an
  exterior quadratic voltage penalty whose weight escalates over time.

VVC inside the oracle always runs in fixed-point mode: the oracle is static
per interval, so inverters see the voltage they produce.
"""

from __future__ import annotations

import csv
import itertools
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np
import yaml

from .data import EpisodeBatch
from .fairness import (
    STEP_HOURS,
    CurtailmentProfile,
    Definition,
    FairnessCase,
    Horizon,
    accumulative_penalty,
    f1_from_totals,
    f2_from_totals,
    f3_from_totals,
    gini_index,
    instant_penalty,
)
from .feeder import (
    VOLTAGE_MAX,
    VOLTAGE_MIN,
    ConfigurationError,
    FeederModel,
    FeederNetwork,
    VvcCurve,
    simulate_timestep,
    voltage_violation,
)
from .tariff import PRICING_MODES, SLOTS_PER_DAY, TariffSchedule, electricity_cost, interval_cost

FEASIBILITY_TOL = 1e-9
MODES = ("exhaustive", "descent")
SIGNS = ("penalty", "literal")


class BudgetExceeded(ValueError):
    """Instance too large for exhaustive search."""


@dataclass(frozen=True)
class OracleProblem:
    """A generation/load window on a known feeder plus objective settings.

    ``generation`` and ``load`` are (T, H) kW arrays starting at tariff slot
    ``start_slot``. ``sign="penalty"`` minimises cost + β·f; ``"literal"``
    minimises cost − β·f as printed in the source formulation.
    """

    network: FeederNetwork
    generation: np.ndarray
    load: np.ndarray
    tariff: TariffSchedule = field(default_factory=TariffSchedule)
    fairness: FairnessCase = field(default_factory=FairnessCase)
    beta: float = 1.0
    vvc: VvcCurve = field(default_factory=VvcCurve)
    mode: str = "exhaustive"
    start_slot: int = 0
    pricing: str = "split"
    sign: str = "penalty"
    levels: int = 11
    budget: int = 132
    boundary_mode: str = "net-injection"
    reactive_fraction: float = 0.1

    def __post_init__(self):
        g = np.atleast_2d(np.asarray(self.generation, dtype=float))
        l = np.atleast_2d(np.asarray(self.load, dtype=float))
        if g.shape != l.shape:
            raise ConfigurationError(f"generation {g.shape} and load {l.shape} differ")
        if g.shape[1] != self.network.household_count:
            raise ConfigurationError(f"instance has {g.shape[1]} households, network {self.network.household_count}")
        if np.any(g < 0) or np.any(l < 0):
            raise ConfigurationError("generation and load must be non-negative")
        if self.beta < 0:
            raise ConfigurationError("beta must be non-negative")
        if self.mode not in MODES:
            raise ConfigurationError(f"mode must be one of {MODES}")
        if self.sign not in SIGNS:
            raise ConfigurationError(f"sign must be one of {SIGNS}")
        if self.pricing not in PRICING_MODES:
            raise ConfigurationError(f"pricing must be one of {PRICING_MODES}")
        if self.levels < 2:
            raise ConfigurationError("need at least two curtailment levels")
        object.__setattr__(self, "generation", g)
        object.__setattr__(self, "load", l)

    @classmethod
    def from_episode(cls, network: FeederNetwork, episode: EpisodeBatch, start_slot: int = 0,
                     timesteps: int | None = None, **kwargs) -> "OracleProblem":
        """Window ``[start_slot, start_slot + timesteps)`` of one day."""
        stop = SLOTS_PER_DAY if timesteps is None else start_slot + timesteps
        if not 0 <= start_slot < stop <= SLOTS_PER_DAY:
            raise ConfigurationError(f"window [{start_slot}, {stop}) outside the day")
        H = network.household_count
        return cls(network, episode.generation[start_slot:stop, :H], episode.load[start_slot:stop, :H],
                   start_slot=start_slot, **kwargs)

    @property
    def shape(self) -> tuple[int, int]:
        return self.generation.shape

    @property
    def grid(self) -> np.ndarray:
        return np.linspace(0.0, 1.0, self.levels)

    @property
    def level_step(self) -> float:
        return 1.0 / (self.levels - 1)

    @property
    def sign_factor(self) -> float:
        return 1.0 if self.sign == "penalty" else -1.0

    @property
    def model(self) -> FeederModel:
        return FeederModel(self.network, self.vvc, vvc_mode="fixed-point", boundary_mode=self.boundary_mode,
                           reactive_fraction=self.reactive_fraction)

    @property
    def prices(self) -> np.ndarray:
        slots = (self.start_slot + np.arange(self.shape[0])) % SLOTS_PER_DAY
        return self.tariff.price_table()[slots]

    def profile(self, alpha) -> CurtailmentProfile:
        return CurtailmentProfile(alpha, self.generation, self.load, STEP_HOURS, self.start_slot)

    def check_budget(self) -> None:
        T, H = self.shape
        if H * T * self.levels > self.budget:
            raise BudgetExceeded(f"H·T·levels = {H * T * self.levels} exceeds budget {self.budget}")
        if self.fairness.horizon is Horizon.ACCUMULATIVE and T > 4:
            raise BudgetExceeded("accumulative exhaustive search is limited to T ≤ 4")


@dataclass
class OracleSolution:
    alpha: CurtailmentProfile
    objective: float
    cost: float
    fairness_penalty: float
    feasible: bool
    voltages: np.ndarray = None
    max_violation: float = 0.0
    meta: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "alpha": self.alpha.alpha.tolist(),
            "objective": float(self.objective),
            "cost": float(self.cost),
            "fairness_penalty": float(self.fairness_penalty),
            "feasible": bool(self.feasible),
            "max_violation": float(self.max_violation),
            "voltages": None if self.voltages is None else self.voltages.tolist(),
        }


# --------------------------------------------------------------------------- evaluation


@dataclass
class _StepTerms:
    voltages: np.ndarray  # (N, H)
    cost: np.ndarray  # (N,)
    violation: np.ndarray  # (N,) largest per-household violation of the true band
    squared: np.ndarray  # (N,) sum of squared violations of the (possibly tightened) band
    total_violation: np.ndarray  # (N,)
    instant: np.ndarray | None  # (N,) instant fairness penalty
    curtailed: np.ndarray  # (N, H) kWh
    exported: np.ndarray  # (N, H) kWh after curtailment
    touched: np.ndarray  # (N, H) α > 0


class _Evaluator:
    """Batched per-timestep terms of the oracle objective."""

    def __init__(self, problem: OracleProblem):
        self.p = problem
        self.model = problem.model
        self.prices = problem.prices
        self.calls = 0

    def step(self, t: int, alphas, margin: float = 0.0) -> _StepTerms:
        p = self.p
        a = np.atleast_2d(np.asarray(alphas, dtype=float))
        g = np.broadcast_to(p.generation[t], a.shape).copy()
        l = np.broadcast_to(p.load[t], a.shape).copy()
        flow, _, _ = simulate_timestep(self.model, g, l, a)
        self.calls += 1
        v = flow.household_voltage
        viol = voltage_violation(v)
        tight = voltage_violation(v, VOLTAGE_MIN + margin, VOLTAGE_MAX - margin) if margin else viol
        net = g * (1.0 - a) - l
        cost = np.sum(interval_cost(net, self.prices[t], p.tariff.feed_in, p.pricing, STEP_HOURS), axis=-1)
        inst = None
        if p.fairness.horizon is Horizon.INSTANT:
            inst = np.atleast_1d(instant_penalty(p.fairness, g, l, a))
        return _StepTerms(v, cost, viol.max(axis=-1), np.sum(tight**2, axis=-1), viol.sum(axis=-1), inst,
                          a * g * STEP_HOURS, net * STEP_HOURS, a > 0)


def _penalty_from_totals(problem: OracleProblem, curtailed, exported, touched):
    """Accumulative fairness penalty from running per-household totals (batched)."""
    case = problem.fairness
    e_export = np.sum((problem.generation - problem.load) * STEP_HOURS, axis=0)
    if case.definition is Definition.EGALITARIAN_CURTAILMENT:
        return f1_from_totals(curtailed)
    if case.definition is Definition.PROPORTIONAL_CURTAILMENT:
        return f2_from_totals(curtailed, e_export, case.epsilon, case.ratio_cap, case.strict)
    return f3_from_totals(exported, e_export, touched, case.strict)


@dataclass(frozen=True)
class ScheduleEvaluation:
    cost: float
    fairness_penalty: float
    objective: float
    voltages: np.ndarray
    max_violation: float
    feasible: bool


def evaluate_schedule(problem: OracleProblem, alpha) -> ScheduleEvaluation:
    """Independent re-simulation of a full (T, H) schedule under the oracle model."""
    profile = problem.profile(alpha)
    a = profile.alpha
    flow, _, _ = simulate_timestep(problem.model, problem.generation, problem.load, a)
    v = flow.household_voltage
    cost = electricity_cost(profile, problem.tariff, problem.pricing)
    if problem.fairness.horizon is Horizon.INSTANT:
        pen = float(sum(instant_penalty(problem.fairness, problem.generation[t], problem.load[t], a[t])
                        for t in range(a.shape[0])))
    else:
        pen = accumulative_penalty(problem.fairness, profile)
    worst = float(np.max(voltage_violation(v)))
    return ScheduleEvaluation(cost, pen, cost + problem.sign_factor * problem.beta * pen, v, worst,
                              worst <= FEASIBILITY_TOL)


def _solution(problem: OracleProblem, alpha, meta: dict) -> OracleSolution:
    ev = evaluate_schedule(problem, alpha)
    return OracleSolution(problem.profile(alpha), ev.objective, ev.cost, ev.fairness_penalty, ev.feasible,
                          ev.voltages, ev.max_violation, meta)


# --------------------------------------------------------------------------- exhaustive search


def _minimal_elements(idx: np.ndarray) -> np.ndarray:
    """Mask of grid points not componentwise-dominated by another point in ``idx``."""
    le = np.all(idx[:, None, :] <= idx[None, :, :], axis=-1)  # le[j, i]: j <= i
    np.fill_diagonal(le, False)
    return ~np.any(le, axis=0)


def _nondominated(cost: np.ndarray, key: np.ndarray) -> np.ndarray:
    """Sorted indices of states not weakly dominated on (cost, key); ties keep the earlier state."""
    n = cost.size
    order = np.lexsort((np.arange(n), cost))
    kept = np.empty_like(key)
    nk = 0
    keep = np.zeros(n, dtype=bool)
    for i in order:
        k = key[i]
        if nk and np.any(np.all(kept[:nk] <= k, axis=1)):
            continue
        kept[nk] = k
        nk += 1
        keep[i] = True
    return np.flatnonzero(keep)


def _timestep_candidates(problem: OracleProblem, ev: _Evaluator, t: int, combos: np.ndarray):
    grid = problem.grid
    terms = ev.step(t, grid[combos])
    feasible = terms.violation <= FEASIBILITY_TOL
    if feasible.any():
        sel = feasible
    else:
        sel = terms.total_violation <= terms.total_violation.min() + 1e-12
    idx = np.flatnonzero(sel)
    if problem.sign == "penalty":
        idx = idx[_minimal_elements(combos[idx])]
    return idx, terms, bool(feasible.any())


def solve_exhaustive(problem: OracleProblem, max_states: int = 2_000_000) -> OracleSolution:
    """Globally optimal schedule over the α grid.

    Infeasible grid points are discarded; a timestep with no feasible point
    keeps its minimal-violation points and the result is flagged infeasible.
    Ties go to the lexicographically smallest α (timestep-major).

    Raises:
        BudgetExceeded: when the instance is beyond the configured budget.
    """
    problem.check_budget()
    T, H = problem.shape
    ev = _Evaluator(problem)
    combos = np.array(list(itertools.product(range(problem.levels), repeat=H)), dtype=np.int64)
    cands = []
    all_feasible = True
    for t in range(T):
        idx, terms, ok = _timestep_candidates(problem, ev, t, combos)
        all_feasible &= ok
        cands.append((combos[idx], terms, idx))

    grid = problem.grid
    s = problem.sign_factor
    meta = {"solver": "exhaustive", "grid_feasible": all_feasible, "evaluated": int(combos.shape[0] * T),
            "candidates": [int(c[0].shape[0]) for c in cands]}
    if problem.fairness.horizon is Horizon.INSTANT:
        alpha = np.zeros((T, H))
        for t, (cidx, terms, idx) in enumerate(cands):
            obj = terms.cost[idx] + s * problem.beta * terms.instant[idx]
            alpha[t] = grid[cidx[int(np.argmin(obj))]]
        return _solution(problem, alpha, meta)

    path, states = _accumulative_dp(problem, cands, max_states)
    meta["states"] = states
    alpha = np.vstack([grid[cands[t][0][path[t]]] for t in range(T)])
    return _solution(problem, alpha, meta)


def _accumulative_dp(problem: OracleProblem, cands, max_states: int, beam: int = 256):
    """Exact DP over timesteps for accumulative fairness.

    A state holds the cost so far and per-household running totals
    (curtailed energy, exported energy, ever curtailed). In penalty sign mode
    states whose lower bound exceeds an incumbent are dropped; the incumbent
    is the better of the min-cost path and a ``beam``-wide truncated run of
    the same recursion. States dominated in (cost, totals) are always dropped.
    """
    T, H = problem.shape
    s = problem.sign_factor
    beta = problem.beta
    d3 = problem.fairness.definition is Definition.EGALITARIAN_OUTPUT
    step = []
    for cidx, terms, idx in cands:
        step.append((terms.cost[idx], terms.curtailed[idx], terms.exported[idx], terms.touched[idx]))

    def final_penalty(curt, exp, touched):
        return np.atleast_1d(_penalty_from_totals(problem, curt, exp, touched))

    min_cost = np.array([c.min() for c, *_ in step])
    future_cost = np.concatenate([np.cumsum(min_cost[::-1])[::-1][1:], [0.0]])
    best_export = np.array([np.max(e, axis=0) for _, _, e, _ in step])  # (T, H)
    future_export = np.concatenate([np.cumsum(best_export[::-1], axis=0)[::-1][1:], np.zeros((1, H))])

    def expand(state, t):
        cost, curt, exp, touched, path = state
        c_t, curt_t, exp_t, touch_t = step[t]
        K, M = cost.size, c_t.size
        if K * M > max_states:
            raise BudgetExceeded(f"dynamic programme would hold {K * M} states")
        return ((cost[:, None] + c_t[None, :]).ravel(),
                (curt[:, None, :] + curt_t[None]).reshape(K * M, H),
                (exp[:, None, :] + exp_t[None]).reshape(K * M, H),
                (touched[:, None, :] | touch_t[None]).reshape(K * M, H),
                np.hstack([np.repeat(path, M, axis=0), np.tile(np.arange(M), K)[:, None]]))

    def lower_bound(state, t):
        cost, curt, exp, touched, _ = state
        if d3:
            lb_pen = final_penalty(curt, np.where(touched, exp + future_export[t], exp), touched)
        else:
            lb_pen = final_penalty(curt, exp, touched)
        return cost + future_cost[t] + beta * lb_pen

    def take(state, keep):
        return tuple(a[keep] for a in state)

    def objective(state):
        cost, curt, exp, touched, _ = state
        return cost + s * beta * final_penalty(curt, exp, touched)

    start = (np.zeros(1), np.zeros((1, H)), np.zeros((1, H)), np.zeros((1, H), dtype=bool),
             np.zeros((1, 0), dtype=np.int64))

    upper = None
    if s > 0:
        pick = [int(np.argmin(c)) for c, *_ in step]
        tot = [sum(step[t][k][pick[t]] for t in range(T)) for k in range(3)]
        touched = np.any([step[t][3][pick[t]] for t in range(T)], axis=0)
        upper = float(tot[0] + beta * final_penalty(tot[1], tot[2], touched)[0])
        state = start
        for t in range(T):
            state = expand(state, t)
            if state[0].size > beam:
                state = take(state, np.argsort(lower_bound(state, t), kind="stable")[:beam])
        upper = min(upper, float(objective(state).min()))

    state = start
    peak = 1
    for t in range(T):
        state = expand(state, t)
        peak = max(peak, state[0].size)
        keep = np.arange(state[0].size)
        if upper is not None:
            keep = np.flatnonzero(lower_bound(state, t) <= upper + 1e-9 * max(1.0, abs(upper)))
        cost, curt, exp, touched, _ = state
        key = np.hstack([-exp[keep], touched[keep].astype(float)]) if d3 else curt[keep]
        if s < 0:
            key = -key
        state = take(state, keep[_nondominated(cost[keep], key)])
    obj = objective(state)
    return state[4][int(np.argmin(obj))], {"peak": int(peak), "final": int(state[0].size)}


# --------------------------------------------------------------------------- descent


def default_steps() -> list[float]:
    return [2.0**-k for k in range(2, 15)]


def _moves(row: np.ndarray, hs: np.ndarray, step: float) -> np.ndarray:
    """Candidate rows for one timestep: each household moved to α ± step, 0 or 1."""
    out = []
    for h in hs:
        a = row[h]
        for cand in np.unique(np.clip([a - step, a + step, 0.0, 1.0], 0.0, 1.0)):
            if cand != a:
                new = row.copy()
                new[h] = cand
                out.append(new)
    return np.array(out)


def solve_descent(problem: OracleProblem, init: CurtailmentProfile | np.ndarray | None = None,
                  steps=None, max_iters: int = 400, mu0: float = 1e3, mu_growth: float = 10.0,
                  mu_period: int = 50, margin: float = 1e-5, mu_max: float = 1e14) -> OracleSolution:
    """Projected coordinate pattern search on α ∈ [0, 1]^{T×H}.

    Each iteration sweeps the timesteps; at each timestep every household's
    moves ``{α - s, α + s, 0, 1}`` (clipped) are scored in one batch and the
    best strictly improving move is taken, repeatedly. Voltage violations of
    the band shrunk by ``margin`` enter as ``mu * Σ violation²``; ``mu``
    grows by ``mu_growth`` every ``mu_period`` iterations, and immediately
    when the search has stalled at the smallest step while still infeasible.
    The step walks down ``steps`` whenever a full iteration makes no move and
    back up one entry after an iteration that moved.

    Returns the best feasible iterate seen (re-simulated, never assumed),
    or the final iterate flagged infeasible. ``meta["history"]`` lists
    ``(iteration, mu, penalized objective)`` after every accepted move.
    """
    T, H = problem.shape
    steps = list(default_steps() if steps is None else steps)
    if not steps or any(st <= 0 for st in steps):
        raise ValueError("step schedule must be non-empty and positive")
    if init is None:
        alpha = np.zeros((T, H))
    else:
        alpha = np.array(init.alpha if isinstance(init, CurtailmentProfile) else init, dtype=float)
        if alpha.shape != (T, H) or np.any(alpha < 0) or np.any(alpha > 1):
            raise ValueError(f"init must be a (T, H) = {(T, H)} array within [0, 1]")
    active = problem.generation > 0
    alpha[~active] = 0.0

    ev = _Evaluator(problem)
    s_beta = problem.sign_factor * problem.beta
    instant = problem.fairness.horizon is Horizon.INSTANT
    cost_t = np.zeros(T)
    sq_t = np.zeros(T)
    viol_t = np.zeros(T)
    inst_t = np.zeros(T)
    curt_t = np.zeros((T, H))
    exp_t = np.zeros((T, H))
    touch_t = np.zeros((T, H), dtype=int)

    def store(t, terms, i):
        cost_t[t], sq_t[t], viol_t[t] = terms.cost[i], terms.squared[i], terms.violation[i]
        if instant:
            inst_t[t] = terms.instant[i]
        curt_t[t], exp_t[t], touch_t[t] = terms.curtailed[i], terms.exported[i], terms.touched[i]

    for t in range(T):
        store(t, ev.step(t, alpha[t][None], margin), 0)

    def fairness_now():
        if instant:
            return float(inst_t.sum())
        return float(_penalty_from_totals(problem, curt_t.sum(0), exp_t.sum(0), touch_t.sum(0) > 0))

    def penalized(mu):
        return float(cost_t.sum() + s_beta * fairness_now() + mu * sq_t.sum())

    best_alpha, best_obj = None, np.inf
    history = []
    # Instant objectives separate by timestep, so a timestep that was
    # stationary for the current (step, mu) stays stationary.
    settled = [None] * T
    si, bumps, it = 0, 0, 0
    converged = False
    mu = mu0
    while it < max_iters:
        mu = min(mu_max, mu0 * mu_growth ** (it // mu_period + bumps))
        current = penalized(mu)
        history.append((it, mu, current))
        step = steps[si]
        moved = False
        for t in range(T):
            hs = np.flatnonzero(active[t])
            if hs.size == 0 or (instant and settled[t] == (step, mu)):
                continue
            for _ in range(2 * hs.size):
                rows = _moves(alpha[t], hs, step)
                terms = ev.step(t, rows, margin)
                cost = cost_t.sum() - cost_t[t] + terms.cost
                sq = sq_t.sum() - sq_t[t] + terms.squared
                if instant:
                    fair = inst_t.sum() - inst_t[t] + terms.instant
                else:
                    curt = curt_t.sum(0) - curt_t[t] + terms.curtailed
                    exp = exp_t.sum(0) - exp_t[t] + terms.exported
                    touch = (touch_t.sum(0) - touch_t[t] + terms.touched) > 0
                    fair = np.atleast_1d(_penalty_from_totals(problem, curt, exp, touch))
                value = cost + s_beta * fair + mu * sq
                i = int(np.argmin(value))
                if not value[i] < current - 1e-12 * max(1.0, abs(current)):
                    settled[t] = (step, mu)
                    break
                alpha[t] = rows[i]
                store(t, terms, i)
                current = float(value[i])
                history.append((it, mu, current))
                moved = True
        it += 1
        if viol_t.max() <= FEASIBILITY_TOL:
            obj = float(cost_t.sum() + s_beta * fairness_now())
            if obj < best_obj:
                best_obj, best_alpha = obj, alpha.copy()
        if moved:
            si = max(0, si - 1)
            continue
        if si + 1 < len(steps):
            si += 1
        elif viol_t.max() <= FEASIBILITY_TOL or mu >= mu_max:
            converged = True
            break
        else:
            bumps += 1
            si = 0

    meta = {"solver": "descent", "iterations": it, "converged": converged, "mu_final": mu,
            "history": history, "evaluations": ev.calls}
    chosen = best_alpha if best_alpha is not None else alpha
    return _solution(problem, chosen, meta)


def grid_level_gap(problem: OracleProblem) -> float:
    """Objective change bound for moving every α by one grid level.

    Sum of a cost Lipschitz bound and β times a fairness Lipschitz bound,
    both for a shift of ``problem.level_step`` in every entry.
    """
    lvl = problem.level_step
    g, l = problem.generation, problem.load
    price = problem.prices[:, None]
    rate = np.maximum(price, problem.tariff.feed_in) if problem.pricing == "split" else price
    cost_bound = float(np.sum(g * STEP_HOURS * rate) * lvl)
    case = problem.fairness
    if case.definition is Definition.PROPORTIONAL_CURTAILMENT:
        if case.horizon is Horizon.INSTANT:
            ratio = np.minimum(g * lvl / np.maximum(case.epsilon, g - l), case.ratio_cap)
            fair = float(np.sum(np.max(ratio, axis=1)))
        else:
            e_export = np.sum((g - l) * STEP_HOURS, axis=0)
            fair = float(np.max(np.minimum(np.sum(g, axis=0) * STEP_HOURS * lvl / np.maximum(case.epsilon, e_export),
                                           case.ratio_cap)))
    elif case.horizon is Horizon.INSTANT:
        fair = float(np.sum(np.max(g, axis=1)) * lvl)
    else:
        fair = float(np.max(np.sum(g, axis=0)) * STEP_HOURS * lvl)
    return cost_bound + problem.beta * fair


# --------------------------------------------------------------------------- Pareto sweeps


@dataclass(frozen=True)
class ParetoPoint:
    weight: float
    cost: float
    gini: float
    feasible: bool
    objective: float = float("nan")


def solve(problem: OracleProblem, **kwargs) -> OracleSolution:
    if problem.mode == "exhaustive":
        return solve_exhaustive(problem)
    return solve_descent(problem, **kwargs)


def pareto_sweep(problem: OracleProblem, weights, solver="oracle") -> list[ParetoPoint]:
    """Cost and curtailment Gini for each fairness weight, sorted by cost.

    Args:
        problem: template; its ``beta`` is replaced by each weight.
        weights: at least two weights (duplicates allowed).
        solver: ``"oracle"`` (the problem's mode), ``"exhaustive"``,
            ``"descent"``, or a callable ``weight -> (CurtailmentProfile, feasible)``
            for trained policies.
    """
    weights = [float(w) for w in weights]
    if len(weights) < 2:
        raise ValueError("a sweep needs at least two weights")
    points = []
    for w in weights:
        if callable(solver):
            profile, feasible = solver(w)
            objective = float("nan")
        else:
            mode = problem.mode if solver == "oracle" else solver
            sol = solve(replace(problem, beta=w, mode=mode))
            profile, feasible, objective = sol.alpha, sol.feasible, sol.objective
        cost = electricity_cost(profile, problem.tariff, problem.pricing)
        gini = gini_index(np.sum(profile.curtailed_energy(), axis=0))
        points.append(ParetoPoint(w, cost, gini, bool(feasible), objective))
    order = sorted(range(len(points)), key=lambda i: (points[i].cost, i))
    return [points[i] for i in order]


def pareto_front(points: list[ParetoPoint], tol: float = 1e-12) -> list[ParetoPoint]:
    """Drop points dominated in (cost, gini); keeps input order."""
    out = []
    for i, p in enumerate(points):
        dominated = any(q.cost <= p.cost + tol and q.gini <= p.gini + tol
                        and (q.cost < p.cost - tol or q.gini < p.gini - tol)
                        for j, q in enumerate(points) if j != i)
        if not dominated:
            out.append(p)
    return out


def write_sweep_csv(points: list[ParetoPoint], path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["weight", "cost_dollars", "gini", "feasible"])
        for p in points:
            w.writerow([repr(p.weight), repr(p.cost), repr(p.gini), str(p.feasible).lower()])


def read_sweep_csv(path) -> list[ParetoPoint]:
    with Path(path).open(newline="") as fh:
        rows = list(csv.DictReader(fh))
    return [ParetoPoint(float(r["weight"]), float(r["cost_dollars"]), float(r["gini"]), r["feasible"] == "true")
            for r in rows]


# --------------------------------------------------------------------------- serialization


def problem_to_dict(problem: OracleProblem) -> dict:
    """Same section layout as the run config, plus the instance arrays."""
    t, f, n, c = problem.tariff, problem.fairness, problem.network, problem.vvc
    return {
        "feeder": {
            "r": n.branch_resistance.tolist(),
            "x": n.branch_reactance.tolist(),
            "base_voltage": float(n.base_voltage),
            "base_power_kva": float(n.base_power_kva),
            "boundary_mode": problem.boundary_mode,
            "reactive_fraction": float(problem.reactive_fraction),
            "vvc": {"v1": c.v1, "v2": c.v2, "v3": c.v3, "v4": c.v4},
        },
        "tariff": {
            "offpeak_price": t.offpeak_price,
            "peak_price": t.peak_price,
            "shoulder_price": t.shoulder_price,
            "feed_in": t.feed_in,
            "offpeak_window": list(t.offpeak_window),
            "peak_window": list(t.peak_window),
            "pricing": problem.pricing,
        },
        "fairness": {"definition": f.definition.value, "horizon": f.horizon.value, "epsilon": f.epsilon,
                     "ratio_cap": f.ratio_cap, "strict": f.strict},
        "oracle": {"beta": float(problem.beta), "mode": problem.mode, "levels": int(problem.levels),
                   "budget": int(problem.budget), "sign": problem.sign, "start_slot": int(problem.start_slot)},
        "instance": {"generation": problem.generation.tolist(), "load": problem.load.tolist()},
    }


def problem_from_dict(doc: dict) -> OracleProblem:
    try:
        fd, td, cd, od, inst = doc["feeder"], doc["tariff"], doc["fairness"], doc["oracle"], doc["instance"]
        network = FeederNetwork(np.asarray(fd["r"], dtype=float), np.asarray(fd["x"], dtype=float),
                                base_voltage=fd.get("base_voltage", 240.0),
                                base_power_kva=fd.get("base_power_kva", 10.0))
        tariff = TariffSchedule(td["offpeak_price"], td["peak_price"], td["shoulder_price"], td["feed_in"],
                                tuple(td["offpeak_window"]), tuple(td["peak_window"]))
        return OracleProblem(
            network, np.asarray(inst["generation"], dtype=float), np.asarray(inst["load"], dtype=float),
            tariff=tariff,
            fairness=FairnessCase(cd["definition"], cd["horizon"], cd.get("epsilon", 1e-3),
                                  cd.get("ratio_cap", 1e3), cd.get("strict", False)),
            beta=float(od["beta"]),
            vvc=VvcCurve(**fd.get("vvc", {})),
            mode=od.get("mode", "exhaustive"),
            start_slot=int(od.get("start_slot", 0)),
            pricing=td.get("pricing", "split"),
            sign=od.get("sign", "penalty"),
            levels=int(od.get("levels", 11)),
            budget=int(od.get("budget", 132)),
            boundary_mode=fd.get("boundary_mode", "net-injection"),
            reactive_fraction=float(fd.get("reactive_fraction", 0.1)),
        )
    except KeyError as exc:
        raise ConfigurationError(f"problem file is missing key {exc}") from None


def save_problem(problem: OracleProblem, path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(yaml.safe_dump(problem_to_dict(problem), sort_keys=False))


def load_problem(path) -> OracleProblem:
    return problem_from_dict(yaml.safe_load(Path(path).read_text()))


def random_tiny_problem(rng: np.random.Generator, case: FairnessCase | None = None, beta: float = 1.0,
                        households=(2, 3), timesteps=(2, 4), levels: int = 11) -> OracleProblem:
    """Small random instance around midday with a stiff feeder, so most draws overvolt.

    The budget is sized to the draw, capped at the 3 x 4 x 11 desk limit.
    """
    H = int(rng.integers(households[0], households[1] + 1))
    T = int(rng.integers(timesteps[0], timesteps[1] + 1))
    start = int(rng.integers(20, 30))
    gen = np.round(rng.uniform(2.0, 5.0, size=(T, H)), 3)
    gen[rng.random((T, H)) < 0.1] = 0.0
    load = np.round(rng.uniform(0.1, 1.5, size=(T, H)), 3)
    r = np.round(rng.uniform(0.04, 0.08, size=H), 4)
    network = FeederNetwork(r, r / 3.0)
    return OracleProblem(network, gen, load, fairness=case or FairnessCase(), beta=beta, start_slot=start,
                         levels=levels, budget=max(132, H * T * levels))
