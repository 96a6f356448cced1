"""Energy-conversion and storage device models.

Conversion devices (CHP, gas boiler, electric chiller, absorption chiller) use
a part-load efficiency polynomial in the load ratio ``output / rated``.  Below
``x_floor`` the device is treated as switched off and every flow is zero.

Storage devices follow the self-decaying state-of-charge update

    soc' = decay * soc + (eta_ch * p_ch - p_dis / eta_dis) * dt / capacity

and the battery additionally loses state of health through calendric and
cyclic aging.  All functions are pure; storage state is passed in and returned.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np

# tolerance for capacity and SOC bound checks (absorbs float round-off)
BOUND_TOL = 1e-9

# calendric aging fit, per hour step
CAL_AGING_SLOPE = 6.6148e-6
CAL_AGING_INTERCEPT = 4.6404e-6


class DeviceError(ValueError):
    """Base class for invalid device requests."""


class CapacityError(DeviceError):
    """Requested output lies outside the device's operating box."""


class InfeasibleStorageRequest(DeviceError):
    """Storage request would charge and discharge at once or leave SOC bounds."""


def _check_finite(name: str, value: float) -> float:
    value = float(value)
    if not math.isfinite(value):
        raise DeviceError(f"{name} must be finite, got {value!r}")
    return value


@dataclass(frozen=True)
class EfficiencyPolynomial:
    """Efficiency as ``sum_i K_i * x**i`` of the load ratio ``x``.

    ``cap`` is the largest admissible efficiency (1.0 for combustion devices,
    a COP cap for chillers and the CHP heat-to-power ratio).  The polynomial
    must stay inside ``(0, cap]`` on ``[x_floor, 1]``.
    """

    coefficients: tuple[float, ...]
    rated_capacity: float
    cap: float = 1.0
    x_floor: float = 0.05

    def __post_init__(self) -> None:
        coeffs = tuple(float(k) for k in self.coefficients)
        object.__setattr__(self, "coefficients", coeffs)
        if not coeffs:
            raise ValueError("efficiency polynomial needs at least one coefficient")
        if not all(math.isfinite(k) for k in coeffs):
            raise ValueError("efficiency coefficients must be finite")
        if not (self.rated_capacity > 0 and math.isfinite(self.rated_capacity)):
            raise ValueError("rated_capacity must be positive")
        if not 0.0 <= self.x_floor < 1.0:
            raise ValueError("x_floor must lie in [0, 1)")
        if not self.cap > 0:
            raise ValueError("efficiency cap must be positive")
        lo, hi = self.range_on_operating_band()
        if lo <= 0.0:
            raise ValueError(
                f"efficiency polynomial {coeffs} reaches {lo:.6g} <= 0 on "
                f"[{self.x_floor}, 1]"
            )
        if hi > self.cap + 1e-12:
            raise ValueError(
                f"efficiency polynomial {coeffs} reaches {hi:.6g} above the cap "
                f"{self.cap} on [{self.x_floor}, 1]"
            )

    def __call__(self, load_ratio: float) -> float:
        # Horner evaluation
        eta = 0.0
        for k in reversed(self.coefficients):
            eta = eta * load_ratio + k
        return eta

    def range_on_operating_band(self) -> tuple[float, float]:
        """Exact min/max of the polynomial over ``[x_floor, 1]``."""
        candidates = [self.x_floor, 1.0]
        if len(self.coefficients) > 2:
            deriv = np.polynomial.polynomial.polyder(self.coefficients)
            for root in np.polynomial.polynomial.polyroots(deriv):
                if abs(root.imag) < 1e-12 and self.x_floor < root.real < 1.0:
                    candidates.append(float(root.real))
        values = [self(x) for x in candidates]
        return min(values), max(values)

    @property
    def at_rated(self) -> float:
        return self(1.0)

    def rated_model(self) -> "EfficiencyPolynomial":
        """Degree-0 polynomial fixed at the full-load efficiency."""
        return replace(self, coefficients=(self.at_rated,))


def eval_efficiency(poly: EfficiencyPolynomial, output_power: float) -> Optional[float]:
    """Efficiency at ``output_power``, or ``None`` when the device is off."""
    output_power = _check_finite("output_power", output_power)
    if output_power < -BOUND_TOL:
        raise CapacityError(f"output power {output_power} is negative")
    if output_power > poly.rated_capacity * (1.0 + BOUND_TOL):
        raise CapacityError(
            f"output power {output_power} exceeds rated capacity {poly.rated_capacity}"
        )
    x = min(max(output_power, 0.0) / poly.rated_capacity, 1.0)
    if x <= 0.0 or x < poly.x_floor:
        return None
    return poly(x)


@dataclass(frozen=True)
class ChpParams:
    efficiency: EfficiencyPolynomial
    heat_ratio: EfficiencyPolynomial
    min_output: float = 0.0

    def __post_init__(self) -> None:
        if self.efficiency.rated_capacity != self.heat_ratio.rated_capacity:
            raise ValueError("CHP efficiency and heat ratio need the same rated capacity")
        if not 0.0 <= self.min_output <= self.rated_capacity:
            raise ValueError("CHP min_output must lie in [0, rated_capacity]")

    @property
    def rated_capacity(self) -> float:
        return self.efficiency.rated_capacity

    def rated_model(self) -> "ChpParams":
        return replace(
            self,
            efficiency=self.efficiency.rated_model(),
            heat_ratio=self.heat_ratio.rated_model(),
        )


@dataclass(frozen=True)
class ConverterParams:
    """Single-input, single-output converter (GB, EC or AC)."""

    efficiency: EfficiencyPolynomial
    min_output: float = 0.0

    def __post_init__(self) -> None:
        if not 0.0 <= self.min_output <= self.rated_capacity:
            raise ValueError("min_output must lie in [0, rated_capacity]")

    @property
    def rated_capacity(self) -> float:
        return self.efficiency.rated_capacity

    def rated_model(self) -> "ConverterParams":
        return replace(self, efficiency=self.efficiency.rated_model())


@dataclass(frozen=True)
class ChpFlow:
    gas_in: float
    heat_out: float
    electric_out: float
    on: bool


@dataclass(frozen=True)
class ConversionFlow:
    input_power: float
    output_power: float
    on: bool


OFF_CHP = ChpFlow(0.0, 0.0, 0.0, False)
OFF_CONVERSION = ConversionFlow(0.0, 0.0, False)


def chp_step(params: ChpParams, p_electric: float) -> ChpFlow:
    """Gas drawn and heat recovered for an electric setpoint of the CHP."""
    eta_e = eval_efficiency(params.efficiency, p_electric)
    if eta_e is None:
        return OFF_CHP
    p = float(p_electric)
    ratio = params.heat_ratio(p / params.rated_capacity)
    return ChpFlow(gas_in=p / eta_e, heat_out=ratio * p, electric_out=p, on=True)


def _convert(params: ConverterParams, output: float) -> ConversionFlow:
    eta = eval_efficiency(params.efficiency, output)
    if eta is None:
        return OFF_CONVERSION
    output = float(output)
    return ConversionFlow(input_power=output / eta, output_power=output, on=True)


def gb_step(params: ConverterParams, h_out: float) -> ConversionFlow:
    """Gas boiler: gas input for a heat output."""
    return _convert(params, h_out)


def ec_step(params: ConverterParams, q_out: float) -> ConversionFlow:
    """Electric chiller: electric input for a cooling output."""
    return _convert(params, q_out)


def ac_step(params: ConverterParams, q_out: float) -> ConversionFlow:
    """Absorption chiller: heat input for a cooling output."""
    return _convert(params, q_out)


# --------------------------------------------------------------------------
# storage


@dataclass(frozen=True)
class StorageParams:
    capacity_max: float
    decay: float = 0.999
    eta_ch: float = 0.95
    eta_dis: float = 0.95
    p_ch_max: float = 500.0
    p_dis_max: float = 500.0
    soc_min: float = 0.1
    soc_max: float = 0.9

    def __post_init__(self) -> None:
        if not 0.0 <= self.soc_min < self.soc_max <= 1.0:
            raise ValueError(
                f"need 0 <= soc_min < soc_max <= 1, got soc_min={self.soc_min}, "
                f"soc_max={self.soc_max}"
            )
        for name in ("decay", "eta_ch", "eta_dis"):
            value = getattr(self, name)
            if not 0.0 < value <= 1.0:
                raise ValueError(f"{name} must lie in (0, 1], got {value}")
        for name in ("capacity_max", "p_ch_max", "p_dis_max"):
            value = getattr(self, name)
            if not (value > 0 and math.isfinite(value)):
                raise ValueError(f"{name} must be strictly positive, got {value}")


@dataclass(frozen=True)
class BatteryHealth:
    soh: float = 1.0
    soh_initial: float = 1.0
    soh_end: float = 0.8
    cycle_life_80: float = 4000.0

    def __post_init__(self) -> None:
        if not self.soh_initial > self.soh_end:
            raise ValueError("soh_initial must exceed soh_end")
        if self.cycle_life_80 <= 0:
            raise ValueError("cycle_life_80 must be positive")
        if not self.soh_end - BOUND_TOL <= self.soh <= self.soh_initial + BOUND_TOL:
            raise ValueError(f"soh {self.soh} outside [{self.soh_end}, {self.soh_initial}]")

    @property
    def end_of_life(self) -> bool:
        return self.soh <= self.soh_end


@dataclass(frozen=True)
class StorageState:
    soc: float
    health: Optional[BatteryHealth] = field(default=None)


def soc_bounds(state: StorageState, params: StorageParams) -> tuple[float, float]:
    """SOC limits; the battery's are scaled by its state of health."""
    scale = state.health.soh if state.health is not None else 1.0
    return params.soc_min * scale, params.soc_max * scale


def _admissible_band(state: StorageState, params: StorageParams) -> tuple[float, float]:
    # idling is always admissible, even when self-decay or SOH fade alone
    # carries the store past a bound
    lo, hi = soc_bounds(state, params)
    idle = params.decay * state.soc
    return min(lo, idle), max(hi, idle)


def storage_step(
    state: StorageState,
    params: StorageParams,
    p_ch: float,
    p_dis: float,
    dt: float = 1.0,
) -> StorageState:
    """Advance a store by one step of length ``dt`` hours."""
    p_ch = _check_finite("p_ch", p_ch)
    p_dis = _check_finite("p_dis", p_dis)
    if p_ch < 0 or p_dis < 0:
        raise InfeasibleStorageRequest("charge/discharge powers must be non-negative")
    if p_ch > 0 and p_dis > 0:
        raise InfeasibleStorageRequest("simultaneous charge and discharge")
    if p_ch > params.p_ch_max * (1 + BOUND_TOL):
        raise InfeasibleStorageRequest(f"charge {p_ch} above limit {params.p_ch_max}")
    if p_dis > params.p_dis_max * (1 + BOUND_TOL):
        raise InfeasibleStorageRequest(f"discharge {p_dis} above limit {params.p_dis_max}")

    soc = params.decay * state.soc + (
        params.eta_ch * p_ch - p_dis / params.eta_dis
    ) * dt / params.capacity_max
    lo, hi = _admissible_band(state, params)
    if soc < lo - BOUND_TOL or soc > hi + BOUND_TOL:
        raise InfeasibleStorageRequest(
            f"resulting soc {soc:.9g} outside [{lo:.9g}, {hi:.9g}]"
        )
    return replace(state, soc=min(max(soc, lo), hi))


def feasible_storage_range(
    state: StorageState, params: StorageParams, dt: float = 1.0
) -> tuple[float, float]:
    """Largest (charge, discharge) powers that keep the next SOC admissible."""
    lo, hi = _admissible_band(state, params)
    idle = params.decay * state.soc
    room = (hi - idle) * params.capacity_max / (params.eta_ch * dt)
    stock = (idle - lo) * params.capacity_max * params.eta_dis / dt
    max_ch = min(params.p_ch_max, max(room, 0.0))
    max_dis = min(params.p_dis_max, max(stock, 0.0))
    return max_ch, max_dis


def aging_increments(
    soc: float, params: StorageParams, health: BatteryHealth, p_ch: float, p_dis: float, dt: float
) -> tuple[float, float]:
    """(calendric, cyclic) aging of one step; ``soc`` is the post-step SOC."""
    cal = CAL_AGING_SLOPE * soc + CAL_AGING_INTERCEPT
    throughput = abs(params.eta_ch * p_ch - p_dis / params.eta_dis) * dt
    cyc = 0.5 * throughput / (health.cycle_life_80 * params.capacity_max)
    return cal, cyc


def ess_age(
    state: StorageState,
    params: StorageParams,
    p_ch: float,
    p_dis: float,
    dt: float = 1.0,
) -> BatteryHealth:
    """Battery health after a step; ``state`` is the state *after* ``storage_step``.

    Aging subtracts from SOH, floored at ``soh_end``.
    """
    if state.health is None:
        raise DeviceError("ess_age needs a storage state carrying battery health")
    health = state.health
    cal, cyc = aging_increments(state.soc, params, health, p_ch, p_dis, dt)
    soh = health.soh - (health.soh_initial - health.soh_end) * (cal + cyc)
    return replace(health, soh=max(soh, health.soh_end))


def split_net_power(net: float) -> tuple[float, float]:
    """Signed net storage power (positive = charge) to (p_ch, p_dis)."""
    return (net, 0.0) if net > 0 else (0.0, -net)


@dataclass(frozen=True)
class DevicePortfolio:
    """Every device of the microgrid, plus renewable nameplate ratings."""

    chp: ChpParams
    gb: ConverterParams
    ec: ConverterParams
    ac: ConverterParams
    ess: StorageParams
    tss: StorageParams
    css: StorageParams
    battery: BatteryHealth = BatteryHealth()
    wt_rated: float = 500.0
    pv_rated: float = 500.0

    def rated_model(self) -> "DevicePortfolio":
        """Copy with every converter fixed at its full-load efficiency."""
        return replace(
            self,
            chp=self.chp.rated_model(),
            gb=self.gb.rated_model(),
            ec=self.ec.rated_model(),
            ac=self.ac.rated_model(),
        )
