"""Linear feeder voltage model with Volt-Var inverter response.

Households 1..H hang off nodes 1..H of a radial chain; node 0 is the grid
connection held at 1.0 p.u. Powers enter in kW/kVAr and are converted to
per-unit with ``base_power_kva`` before the voltage recursion.

Every function here accepts arrays with arbitrary leading batch dimensions
over the trailing household axis, so the oracle can evaluate thousands of
curtailment combinations in one call.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

BOUNDARY_MODES = ("load-sum", "net-injection")
VVC_MODES = ("prev-step", "fixed-point")

VOLTAGE_MIN = 0.95
VOLTAGE_MAX = 1.05


class ConfigurationError(ValueError):
    """Raised for inconsistent network or model configuration."""


@dataclass(frozen=True)
class FeederNetwork:
    branch_resistance: np.ndarray
    branch_reactance: np.ndarray
    base_voltage: float = 240.0
    base_power_kva: float = 10.0

    def __post_init__(self):
        r = np.asarray(self.branch_resistance, dtype=float)
        x = np.asarray(self.branch_reactance, dtype=float)
        if r.ndim != 1 or r.shape != x.shape or r.size == 0:
            raise ConfigurationError(
                f"resistance/reactance must be equal-length 1-D, got {r.shape} and {x.shape}"
            )
        if np.any(r <= 0) or np.any(x <= 0):
            raise ConfigurationError("branch resistance and reactance must be strictly positive")
        if self.base_voltage <= 0 or self.base_power_kva <= 0:
            raise ConfigurationError("base voltage and base power must be positive")
        object.__setattr__(self, "branch_resistance", r)
        object.__setattr__(self, "branch_reactance", x)

    @property
    def household_count(self) -> int:
        return self.branch_resistance.size

    @classmethod
    def uniform(cls, household_count: int, r: float = 0.003, x: float = 0.001, **kwargs) -> "FeederNetwork":
        return cls(np.full(household_count, r), np.full(household_count, x), **kwargs)


@dataclass(frozen=True)
class NodePower:
    """Net exchange of one household with the grid (export positive)."""

    active: float
    reactive: float = 0.0

    def __post_init__(self):
        if not (np.isfinite(self.active) and np.isfinite(self.reactive)):
            raise ValueError("node power must be finite")


@dataclass(frozen=True)
class BoundaryCondition:
    """Active/reactive flow entering branch 1 from node 0, in kW/kVAr."""

    active: float | np.ndarray = 0.0
    reactive: float | np.ndarray = 0.0


@dataclass(frozen=True)
class FlowState:
    branch_active: np.ndarray  # kW, (..., H)
    branch_reactive: np.ndarray  # kVAr, (..., H)
    node_voltage: np.ndarray  # p.u., (..., H + 1), node 0 first

    @property
    def household_voltage(self) -> np.ndarray:
        return self.node_voltage[..., 1:]


@dataclass(frozen=True)
class VvcCurve:
    v1: float = 0.94
    v2: float = 0.98
    v3: float = 1.06
    v4: float = 1.10
    q_max: float | np.ndarray = 0.0

    def __post_init__(self):
        if not (self.v1 < self.v2 < self.v3 < self.v4):
            raise ConfigurationError(
                f"VVC thresholds must be strictly increasing, got {self.v1}, {self.v2}, {self.v3}, {self.v4}"
            )
        if np.any(np.asarray(self.q_max) < 0):
            raise ConfigurationError("q_max must be non-negative")

    def with_q_max(self, q_max) -> "VvcCurve":
        return replace(self, q_max=q_max)

    @property
    def lipschitz(self) -> float:
        return float(np.max(self.q_max)) / min(self.v2 - self.v1, self.v4 - self.v3)


@dataclass(frozen=True)
class InverterSpec:
    s_max: float | np.ndarray
    q_max: float | np.ndarray

    def __post_init__(self):
        s, q = np.asarray(self.s_max), np.asarray(self.q_max)
        if np.any(s < 0) or np.any(q < 0) or np.any(q > s):
            raise ConfigurationError("inverter spec requires 0 <= q_max <= s_max")

    @classmethod
    def from_generation(cls, gen_kw, reactive_fraction: float = 0.1) -> "InverterSpec":
        """Inverter sized to the uncurtailed PV output, reactive limit a fraction of it."""
        s = np.asarray(gen_kw, dtype=float)
        return cls(s_max=s, q_max=reactive_fraction * s)


@dataclass(frozen=True)
class FeederModel:
    """Network plus the control conventions needed to simulate a timestep."""

    network: FeederNetwork
    curve: VvcCurve = field(default_factory=VvcCurve)
    vvc_mode: str = "prev-step"
    boundary_mode: str = "net-injection"
    reactive_fraction: float = 0.1
    fixed_point_tol: float = 1e-6
    fixed_point_max_iter: int = 100
    fixed_point_damping: float = 0.5

    def __post_init__(self):
        if self.vvc_mode not in VVC_MODES:
            raise ConfigurationError(f"unknown VVC mode {self.vvc_mode!r}; expected one of {VVC_MODES}")
        if self.boundary_mode not in BOUNDARY_MODES:
            raise ConfigurationError(
                f"unknown boundary mode {self.boundary_mode!r}; expected one of {BOUNDARY_MODES}"
            )

    @property
    def household_count(self) -> int:
        return self.network.household_count


def _check_alpha(alpha):
    a = np.asarray(alpha, dtype=float)
    if np.any(a < 0) or np.any(a > 1) or np.any(np.isnan(a)):
        raise ValueError("curtailment fraction must lie in [0, 1]")
    return a


def net_power(gen_kw, load_kw, alpha):
    """Net active exchange with the grid in kW; positive means export."""
    a = _check_alpha(alpha)
    out = np.asarray(gen_kw, dtype=float) * (1.0 - a) - np.asarray(load_kw, dtype=float)
    return float(out) if out.ndim == 0 else out


def vvc_reactive(voltage_pu, curve: VvcCurve):
    """Volt-Var droop: release q_max below v1, absorb q_max above v4.

    The curve is linear on (v1, v2) and (v3, v4) and zero on the dead band
    [v2, v3], which is the only assignment that keeps it continuous.
    """
    v = np.asarray(voltage_pu, dtype=float)
    q_max = np.asarray(curve.q_max, dtype=float)
    rise = (curve.v2 - v) / (curve.v2 - curve.v1)
    fall = (v - curve.v3) / (curve.v4 - curve.v3)
    frac = np.select(
        [v <= curve.v1, v < curve.v2, v <= curve.v3, v < curve.v4],
        [1.0, rise, 0.0, -fall],
        default=-1.0,
    )
    out = q_max * frac
    return float(out) if out.ndim == 0 else out


def capacity_feasible(gen_kw, alpha, reactive_kvar, spec: InverterSpec):
    a = _check_alpha(alpha)
    p = np.asarray(gen_kw, dtype=float) * (1.0 - a)
    ok = np.asarray(spec.s_max, dtype=float) ** 2 >= p**2 + np.asarray(reactive_kvar, dtype=float) ** 2
    return bool(ok) if ok.ndim == 0 else ok


def reactive_headroom(gen_kw, alpha, spec: InverterSpec):
    p = np.asarray(gen_kw, dtype=float) * (1.0 - np.asarray(alpha, dtype=float))
    return np.sqrt(np.maximum(0.0, np.asarray(spec.s_max, dtype=float) ** 2 - p**2))


def clamp_reactive_to_capacity(gen_kw, alpha, q_requested, spec: InverterSpec):
    """Limit |q| to what the inverter can still deliver next to its active output."""
    a = _check_alpha(alpha)
    bound = reactive_headroom(gen_kw, a, spec)
    q = np.asarray(q_requested, dtype=float)
    out = np.sign(q) * np.minimum(np.abs(q), bound)
    return float(out) if out.ndim == 0 else out


def boundary_condition(mode: str, active_kw, reactive_kvar, load_kw) -> BoundaryCondition:
    """Flow into branch 1 under the chosen node-0 convention.

    ``load-sum`` injects minus the total household load and no reactive power.
    ``net-injection`` closes the circuit: branch 1 carries minus the total net
    exchange, so the flow past the last household is zero.
    """
    if mode == "load-sum":
        return BoundaryCondition(-np.sum(load_kw, axis=-1), 0.0 * np.sum(reactive_kvar, axis=-1))
    if mode == "net-injection":
        return BoundaryCondition(-np.sum(active_kw, axis=-1), -np.sum(reactive_kvar, axis=-1))
    raise ConfigurationError(f"unknown boundary mode {mode!r}")


def _accumulate(first, increments):
    # sequential accumulation so each entry is exactly previous + increment
    seq = np.concatenate([np.expand_dims(first, -1), increments], axis=-1)
    return np.add.accumulate(seq, axis=-1)


def solve_flow(network: FeederNetwork, active_kw, reactive_kvar, boundary: BoundaryCondition) -> FlowState:
    """Propagate branch flows and node voltages down the feeder.

    Args:
        network: feeder impedances in p.u.
        active_kw: net household injections, shape (..., H).
        reactive_kvar: reactive household injections, shape (..., H).
        boundary: flow entering branch 1.

    Returns:
        Branch flows in kW/kVAr and node voltages in p.u. (node 0 included).
    """
    p = np.asarray(active_kw, dtype=float)
    q = np.asarray(reactive_kvar, dtype=float)
    H = network.household_count
    if p.shape[-1:] != (H,) or q.shape[-1:] != (H,):
        raise ConfigurationError(f"expected {H} household injections, got {p.shape[-1:]} / {q.shape[-1:]}")
    batch = np.broadcast_shapes(p.shape[:-1], q.shape[:-1], np.shape(boundary.active), np.shape(boundary.reactive))
    p = np.broadcast_to(p, batch + (H,))
    q = np.broadcast_to(q, batch + (H,))
    p_br = _accumulate(np.broadcast_to(boundary.active, batch), p[..., :-1])
    q_br = _accumulate(np.broadcast_to(boundary.reactive, batch), q[..., :-1])
    v0 = 1.0
    s = network.base_power_kva
    drop = (network.branch_resistance * p_br / s + network.branch_reactance * q_br / s) / v0
    v = _accumulate(np.full(batch, v0), -drop)
    return FlowState(p_br, q_br, v)


def _flow_for(model: FeederModel, p, q, load):
    return solve_flow(model.network, p, q, boundary_condition(model.boundary_mode, p, q, load))


def simulate_timestep(model: FeederModel, gen_kw, load_kw, alpha, prev_voltage=None, s_max=None):
    """One control interval: VVC response, capacity clamp, then power flow.

    In ``prev-step`` mode the inverters react to ``prev_voltage`` (the
    voltage they measured in the previous interval). In ``fixed-point`` mode
    reactive output and voltages are iterated to mutual consistency, starting
    from ``prev_voltage``.

    Returns:
        ``(FlowState, reactive_kvar, info)`` where info reports fixed-point
        iterations and convergence.
    """
    gen = np.asarray(gen_kw, dtype=float)
    load = np.asarray(load_kw, dtype=float)
    a = _check_alpha(alpha)
    H = model.household_count
    for name, arr in (("gen", gen), ("load", load), ("alpha", a)):
        if arr.shape[-1:] != (H,):
            raise ConfigurationError(f"{name} must have {H} household entries, got shape {arr.shape}")
    spec = InverterSpec.from_generation(gen if s_max is None else s_max, model.reactive_fraction)
    curve = model.curve.with_q_max(spec.q_max)
    v_prev = np.ones(H) if prev_voltage is None else np.asarray(prev_voltage, dtype=float)
    p = gen * (1.0 - a) - load

    q = clamp_reactive_to_capacity(gen, a, vvc_reactive(v_prev, curve), spec)
    flow = _flow_for(model, p, q, load)
    info = {"iterations": 0, "converged": True}
    if model.vvc_mode == "fixed-point":
        info["converged"] = False
        v = flow.household_voltage
        for it in range(1, model.fixed_point_max_iter + 1):
            q_target = clamp_reactive_to_capacity(gen, a, vvc_reactive(v, curve), spec)
            q = q + model.fixed_point_damping * (q_target - q)
            flow = _flow_for(model, p, q, load)
            delta = np.max(np.abs(flow.household_voltage - v)) if v.size else 0.0
            v = flow.household_voltage
            if delta < model.fixed_point_tol:
                info.update(iterations=it, converged=True)
                break
        else:
            info["iterations"] = model.fixed_point_max_iter
    return flow, np.asarray(q, dtype=float), info


def voltage_violation(voltage_pu, v_min: float = VOLTAGE_MIN, v_max: float = VOLTAGE_MAX):
    """Distance outside the safe band, zero inside it."""
    v = np.asarray(voltage_pu, dtype=float)
    out = np.maximum(v_min - v, 0.0) + np.maximum(v - v_max, 0.0)
    return float(out) if out.ndim == 0 else out


def calibrate_impedance(model: FeederModel, gen_kw, load_kw, target_peak_voltage: float = 1.06) -> FeederModel:
    """Rescale every branch impedance so the uncurtailed peak voltage hits a target.

    ``gen_kw``/``load_kw`` are (T, H) snapshots. With zero curtailment the
    inverters have no reactive headroom, so the voltage rise above 1.0 p.u.
    is linear in a common impedance scale factor.
    """
    gen = np.asarray(gen_kw, dtype=float)
    load = np.asarray(load_kw, dtype=float)
    flow, _, _ = simulate_timestep(replace(model, vvc_mode="prev-step"), gen, load, np.zeros_like(gen))
    rise = float(np.max(flow.household_voltage)) - 1.0
    if rise <= 0:
        raise ConfigurationError("data never raises voltage above 1.0 p.u.; cannot calibrate")
    k = (target_peak_voltage - 1.0) / rise
    net = model.network
    return replace(model, network=replace(net, branch_resistance=net.branch_resistance * k,
                                          branch_reactance=net.branch_reactance * k))
