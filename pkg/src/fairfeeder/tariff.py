"""Time-of-use import prices, flat feed-in tariff and household electricity cost."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .fairness import CurtailmentProfile

SLOTS_PER_DAY = 48
PRICING_MODES = ("split", "literal")


def slot_of(hour: int, minute: int = 0) -> int:
    return (hour * 60 + minute) // 30


@dataclass(frozen=True)
class TariffSchedule:
    """Three-band ToU import tariff plus a flat feed-in tariff ($/kWh).

    Windows are half-open slot ranges; the off-peak window wraps midnight.
    """

    offpeak_price: float = 0.12
    peak_price: float = 0.52
    shoulder_price: float = 0.22
    feed_in: float = 0.10
    offpeak_window: tuple[int, int] = (slot_of(23), slot_of(7))
    peak_window: tuple[int, int] = (slot_of(14), slot_of(19, 30))

    def __post_init__(self):
        prices = (self.offpeak_price, self.peak_price, self.shoulder_price, self.feed_in)
        if any(p < 0 for p in prices):
            raise ValueError("tariff prices must be non-negative")
        if np.any(self.window_membership()[:2].sum(axis=0) > 1):
            raise ValueError("off-peak and peak windows overlap")

    def window_membership(self) -> np.ndarray:
        """(3, 48) indicator rows: off-peak, peak, shoulder."""
        slots = np.arange(SLOTS_PER_DAY)
        lo, hi = self.offpeak_window
        off = (slots >= lo) | (slots < hi) if lo > hi else (slots >= lo) & (slots < hi)
        plo, phi = self.peak_window
        peak = (slots >= plo) & (slots < phi)
        shoulder = ~(off | peak)
        return np.vstack([off, peak, shoulder]).astype(int)

    def price_table(self) -> np.ndarray:
        bands = np.array([self.offpeak_price, self.peak_price, self.shoulder_price])
        return bands @ self.window_membership()


def price_at(slot: int, schedule: TariffSchedule | None = None) -> float:
    """Import price in $/kWh for half-hour slot 0..47 (slot 0 = 00:00)."""
    if not 0 <= slot < SLOTS_PER_DAY:
        raise ValueError(f"slot {slot} outside 0..{SLOTS_PER_DAY - 1}")
    schedule = schedule or TariffSchedule()
    return float(schedule.price_table()[slot])


def profile_prices(profile: CurtailmentProfile, schedule: TariffSchedule) -> np.ndarray:
    slots = (profile.start_slot + np.arange(profile.alpha.shape[0])) % SLOTS_PER_DAY
    return schedule.price_table()[slots]


def cost_breakdown(profile: CurtailmentProfile, schedule: TariffSchedule | None = None,
                   mode: str = "split", per_energy: bool = True) -> dict:
    """Import cost, export revenue and their difference in dollars.

    ``split`` prices imports at the ToU rate and exports at the feed-in
    tariff. ``literal`` applies the ToU rate to the net consumption
    ``load - gen * (1 - alpha)`` in both directions. ``per_energy`` multiplies
    by the step length so results are in dollars rather than $·h⁻¹.
    """
    schedule = schedule or TariffSchedule()
    if mode not in PRICING_MODES:
        raise ValueError(f"unknown pricing mode {mode!r}")
    dt = profile.step_hours if per_energy else 1.0
    price = profile_prices(profile, schedule)[:, None]
    p = profile.net_power()
    if mode == "split":
        imports = float(np.sum(price * np.maximum(0.0, -p)) * dt)
        revenue = float(np.sum(schedule.feed_in * np.maximum(0.0, p)) * dt)
        return {"import_cost": imports, "export_revenue": revenue, "total": imports - revenue}
    total = float(np.sum(price * -p) * dt)
    return {"import_cost": float(np.sum(price * np.maximum(0.0, -p)) * dt),
            "export_revenue": float(np.sum(price * np.maximum(0.0, p)) * dt),
            "total": total}


def electricity_cost(profile: CurtailmentProfile, schedule: TariffSchedule | None = None,
                     mode: str = "split", per_energy: bool = True) -> float:
    return cost_breakdown(profile, schedule, mode, per_energy)["total"]


def interval_cost(net_kw, price, feed_in: float, mode: str = "split", hours: float = 1.0):
    """Cost of net injection ``net_kw`` (positive = export) at import ``price``.

    Broadcasts over any shape; used by both the profile costs and the oracle.
    """
    if mode not in PRICING_MODES:
        raise ValueError(f"unknown pricing mode {mode!r}")
    p = np.asarray(net_kw, dtype=float)
    if mode == "split":
        return (price * np.maximum(0.0, -p) - feed_in * np.maximum(0.0, p)) * hours
    return -price * p * hours


def household_costs(profile: CurtailmentProfile, schedule: TariffSchedule | None = None,
                    mode: str = "split", per_energy: bool = True) -> np.ndarray:
    """Per-(timestep, household) cost in dollars, same conventions as above."""
    schedule = schedule or TariffSchedule()
    dt = profile.step_hours if per_energy else 1.0
    price = profile_prices(profile, schedule)[:, None]
    return interval_cost(profile.net_power(), price, schedule.feed_in, mode, dt)
