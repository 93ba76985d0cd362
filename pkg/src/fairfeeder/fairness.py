"""Fairness penalties for PV curtailment and the Gini index.

Three notions of fairness, each over a single interval ("instant") or over
the accumulated day ("accumulative"):

* ``d1`` egalitarian curtailment: the largest curtailed power/energy;
* ``d2`` proportional curtailment: the largest curtailment relative to the
  household's available export;
* ``d3`` egalitarian output: minus the smallest export among curtailed
  households.

Lenient mode (default) evaluates the formulas over every household, using
the epsilon guard and the max-surplus substitution for uncurtailed houses.
Strict mode drops households without surplus generation from the
aggregation altogether.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum

import numpy as np

STEP_HOURS = 0.5


class Definition(str, Enum):
    EGALITARIAN_CURTAILMENT = "d1"
    PROPORTIONAL_CURTAILMENT = "d2"
    EGALITARIAN_OUTPUT = "d3"


class Horizon(str, Enum):
    INSTANT = "instant"
    ACCUMULATIVE = "acc"


@dataclass(frozen=True)
class FairnessCase:
    definition: Definition = Definition.EGALITARIAN_CURTAILMENT
    horizon: Horizon = Horizon.INSTANT
    epsilon: float = 1e-3
    ratio_cap: float = 1e3
    strict: bool = False

    def __post_init__(self):
        object.__setattr__(self, "definition", Definition(self.definition))
        object.__setattr__(self, "horizon", Horizon(self.horizon))
        if self.epsilon <= 0:
            raise ValueError("epsilon must be positive")
        if self.ratio_cap <= 0:
            raise ValueError("ratio_cap must be positive")

    @property
    def name(self) -> str:
        return f"{self.definition.value}_{self.horizon.value}"


@dataclass(frozen=True)
class CurtailmentProfile:
    """Curtailment fractions with the generation/load they act on, all (T, H)."""

    alpha: np.ndarray
    generation: np.ndarray
    load: np.ndarray
    step_hours: float = STEP_HOURS
    start_slot: int = 0
    meta: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        a = np.atleast_2d(np.asarray(self.alpha, dtype=float))
        g = np.atleast_2d(np.asarray(self.generation, dtype=float))
        l = np.atleast_2d(np.asarray(self.load, dtype=float))
        if not (a.shape == g.shape == l.shape):
            raise ValueError(f"alpha/generation/load shapes differ: {a.shape}, {g.shape}, {l.shape}")
        if np.any(a < 0) or np.any(a > 1) or np.any(np.isnan(a)):
            raise ValueError("alpha entries must lie in [0, 1]")
        if np.any(g < 0) or np.any(l < 0):
            raise ValueError("generation and load must be non-negative")
        object.__setattr__(self, "alpha", a)
        object.__setattr__(self, "generation", g)
        object.__setattr__(self, "load", l)

    @property
    def shape(self):
        return self.alpha.shape

    def curtailed_energy(self) -> np.ndarray:
        """kWh curtailed per (timestep, household)."""
        return self.alpha * self.generation * self.step_hours

    def net_power(self) -> np.ndarray:
        return self.generation * (1.0 - self.alpha) - self.load

    def window(self, stop: int) -> "CurtailmentProfile":
        return CurtailmentProfile(self.alpha[:stop], self.generation[:stop], self.load[:stop],
                                  self.step_hours, self.start_slot)


def _vectors(*arrays):
    arrs = [np.atleast_1d(np.asarray(a, dtype=float)) for a in arrays]
    if len({a.shape[-1] for a in arrs}) > 1:
        raise ValueError("per-household vectors must have equal length")
    if arrs[0].shape[-1] == 0:
        raise ValueError("household set is empty")
    return np.broadcast_arrays(*arrs)


def _scalar(x):
    return float(x) if np.ndim(x) == 0 else x


def _masked_max(values, keep):
    if keep is None:
        return _scalar(np.max(values, axis=-1))
    out = np.max(np.where(keep, values, -np.inf), axis=-1)
    return _scalar(np.where(np.isfinite(out), out, 0.0))


def _masked_min(values, keep):
    if keep is None:
        return _scalar(np.min(values, axis=-1))
    out = np.min(np.where(keep, values, np.inf), axis=-1)
    return _scalar(np.where(np.isfinite(out), out, 0.0))


def f1_instant(gen_t, alpha_t):
    """Largest curtailed power (kW) among households."""
    g, a = _vectors(gen_t, alpha_t)
    return _scalar(np.max(a * g, axis=-1))


def f1_from_totals(curtailed_kwh):
    """Egalitarian-curtailment penalty from per-household curtailed energy."""
    c = np.asarray(curtailed_kwh, dtype=float)
    if c.shape[-1] == 0:
        raise ValueError("household set is empty")
    return _scalar(np.max(c, axis=-1))


def f1_accumulative(profile: CurtailmentProfile) -> float:
    """Largest curtailed energy (kWh) accumulated by any household."""
    return f1_from_totals(np.sum(profile.curtailed_energy(), axis=0))


def _capped_ratio(num, den, epsilon, ratio_cap):
    return np.minimum(num / np.maximum(epsilon, den), ratio_cap)


def f2_instant(gen_t, load_t, alpha_t, epsilon: float = 1e-3, ratio_cap: float = np.inf,
               strict: bool = False):
    """Largest ratio of curtailed power to available export."""
    g, l, a = _vectors(gen_t, load_t, alpha_t)
    ratio = _capped_ratio(a * g, g - l, epsilon, ratio_cap)
    return _masked_max(ratio, (g > l) if strict else None)


def export_energy(profile: CurtailmentProfile) -> np.ndarray:
    """Uncurtailed daily export per household in kWh (may be negative)."""
    return np.sum((profile.generation - profile.load) * profile.step_hours, axis=0)


def f2_from_totals(curtailed_kwh, export_kwh, epsilon: float = 1e-3, ratio_cap: float = np.inf,
                   strict: bool = False):
    ratio = _capped_ratio(np.asarray(curtailed_kwh, dtype=float), export_kwh, epsilon, ratio_cap)
    return _masked_max(ratio, (np.asarray(export_kwh) > 0) if strict else None)


def f2_accumulative(profile: CurtailmentProfile, epsilon: float = 1e-3, ratio_cap: float = np.inf,
                    strict: bool = False) -> float:
    return f2_from_totals(np.sum(profile.curtailed_energy(), axis=0), export_energy(profile),
                          epsilon, ratio_cap, strict)


def f3_instant(gen_t, load_t, alpha_t, strict: bool = False):
    """Minus the smallest post-curtailment export among curtailed households.

    Uncurtailed households are represented by the largest surplus on the
    feeder, so they never bind the minimum.
    """
    g, l, a = _vectors(gen_t, load_t, alpha_t)
    surplus = g - l
    term = np.where(a > 0, (1.0 - a) * g - l, np.max(surplus, axis=-1, keepdims=True))
    return -_masked_min(term, (surplus > 0) if strict else None)


def f3_from_totals(exported_kwh, export_kwh, curtailed, strict: bool = False):
    """Egalitarian-output penalty from accumulated post-curtailment export.

    Args:
        exported_kwh: per-household export after curtailment, (..., H).
        export_kwh: per-household export without curtailment, (H,).
        curtailed: whether each household was curtailed at any step, (..., H).
    """
    e_export = np.asarray(export_kwh, dtype=float)
    term = np.where(curtailed, exported_kwh, np.max(e_export, axis=-1, keepdims=True))
    return -_masked_min(term, (e_export > 0) if strict else None)


def f3_accumulative(profile: CurtailmentProfile, strict: bool = False) -> float:
    return f3_from_totals(np.sum(profile.net_power() * profile.step_hours, axis=0), export_energy(profile),
                          np.sum(profile.alpha, axis=0) > 0, strict)


def instant_penalty(case: FairnessCase, gen_t, load_t, alpha_t) -> float:
    d = case.definition
    if d is Definition.EGALITARIAN_CURTAILMENT:
        return f1_instant(gen_t, alpha_t)
    if d is Definition.PROPORTIONAL_CURTAILMENT:
        return f2_instant(gen_t, load_t, alpha_t, case.epsilon, case.ratio_cap, case.strict)
    return f3_instant(gen_t, load_t, alpha_t, case.strict)


def accumulative_penalty(case: FairnessCase, profile: CurtailmentProfile) -> float:
    d = case.definition
    if d is Definition.EGALITARIAN_CURTAILMENT:
        return f1_accumulative(profile)
    if d is Definition.PROPORTIONAL_CURTAILMENT:
        return f2_accumulative(profile, case.epsilon, case.ratio_cap, case.strict)
    return f3_accumulative(profile, case.strict)


def dispatch(case: FairnessCase, profile: CurtailmentProfile, t: int | None = None) -> float:
    """Penalty for ``case``: row ``t`` if instant, rows ``0..t`` if accumulative.

    ``t`` defaults to the last row of the profile.
    """
    T = profile.alpha.shape[0]
    t = T - 1 if t is None else t
    if not 0 <= t < T:
        raise IndexError(f"timestep {t} outside profile of length {T}")
    if case.horizon is Horizon.INSTANT:
        return instant_penalty(case, profile.generation[t], profile.load[t], profile.alpha[t])
    return accumulative_penalty(case, profile.window(t + 1))


def gini_index(values) -> float:
    """Mean-absolute-difference Gini coefficient of non-negative values.

    Zero for a perfectly equal (or all-zero) distribution, (n-1)/n when a
    single entry holds everything.
    """
    x = np.asarray(values, dtype=float).ravel()
    if x.size == 0:
        raise ValueError("gini_index needs at least one value")
    if np.any(x < 0) or np.any(~np.isfinite(x)):
        raise ValueError("gini_index requires finite non-negative values")
    total = x.sum()
    if total == 0:
        return 0.0
    n = x.size
    xs = np.sort(x)
    ranks = 2.0 * np.arange(1, n + 1) - n - 1
    return float(max(0.0, np.dot(ranks, xs) / (n * total)))
