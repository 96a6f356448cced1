"""Hourly dispatch environment for the multi-energy microgrid.

An action fixes the outputs of the four converters and the grid purchase.
The three stores act as slack: each carrier's residual (supply minus demand
before storage) is charged into or discharged from its store as far as the
store allows, and whatever is left is reported as an imbalance and priced by
the penalty factors.  Gas purchases always balance by construction.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace
from typing import Iterable, Optional, Protocol, Sequence

import numpy as np

from .devices import (
    BOUND_TOL,
    CapacityError,
    DevicePortfolio,
    StorageParams,
    StorageState,
    ac_step,
    chp_step,
    ec_step,
    ess_age,
    feasible_storage_range,
    gb_step,
    storage_step,
)

CHANNELS = ("wt", "pv", "p_load", "h_load", "q_load", "price_e")
ACTION_FIELDS = ("p_chp", "h_gb", "q_ec", "q_ac", "p_grid")
N_ACTIONS = len(ACTION_FIELDS)
N_FEATURES = 10


@dataclass(frozen=True)
class Tariff:
    """Prices, carbon accounting and imbalance penalties (all per kWh)."""

    gas_price: float = 0.35 / 9.7
    carbon_tax: float = 0.0316
    beta_e: float = 0.683
    beta_gas: float = 0.245
    alpha_e: float = 1.0
    alpha_h: float = 1.0
    alpha_c: float = 1.0


@dataclass(frozen=True)
class MicrogridParams:
    portfolio: DevicePortfolio
    tariff: Tariff = Tariff()
    p_grid_max: float = 5000.0
    dt: float = 1.0

    def __post_init__(self) -> None:
        if not self.p_grid_max > 0:
            raise ValueError("p_grid_max must be positive")
        if not self.dt > 0:
            raise ValueError("dt must be positive")

    @property
    def action_low(self) -> np.ndarray:
        pf = self.portfolio
        return np.array(
            [pf.chp.min_output, pf.gb.min_output, pf.ec.min_output, pf.ac.min_output, 0.0]
        )

    @property
    def action_high(self) -> np.ndarray:
        pf = self.portfolio
        return np.array(
            [
                pf.chp.rated_capacity,
                pf.gb.rated_capacity,
                pf.ec.rated_capacity,
                pf.ac.rated_capacity,
                self.p_grid_max,
            ]
        )

    def rated_model(self) -> "MicrogridParams":
        return replace(self, portfolio=self.portfolio.rated_model())


# --------------------------------------------------------------------------
# exogenous data


@dataclass(frozen=True)
class HourSlice:
    wt: float
    pv: float
    p_load: float
    h_load: float
    q_load: float
    price_e: float


@dataclass(frozen=True, eq=False)
class DayProfile:
    """Hourly renewable forecasts, loads (kW) and electricity price ($/kWh)."""

    wt: np.ndarray
    pv: np.ndarray
    p_load: np.ndarray
    h_load: np.ndarray
    q_load: np.ndarray
    price_e: np.ndarray
    name: str = ""

    def __post_init__(self) -> None:
        n = None
        for ch in CHANNELS:
            arr = np.array(getattr(self, ch), dtype=float).reshape(-1)
            if not np.all(np.isfinite(arr)):
                raise ValueError(f"profile channel {ch} has non-finite values")
            if np.any(arr < 0):
                raise ValueError(f"profile channel {ch} has negative values")
            if n is None:
                n = arr.size
            elif arr.size != n:
                raise ValueError(f"profile channel {ch} has length {arr.size}, expected {n}")
            arr.setflags(write=False)
            object.__setattr__(self, ch, arr)
        if not n:
            raise ValueError("profile needs at least one hour")

    def __len__(self) -> int:
        return self.wt.size

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, DayProfile):
            return NotImplemented
        return all(np.array_equal(getattr(self, c), getattr(other, c)) for c in CHANNELS)

    def hour(self, t: int) -> HourSlice:
        return HourSlice(*(float(getattr(self, ch)[t]) for ch in CHANNELS))

    def head(self, hours: int) -> "DayProfile":
        if not 1 <= hours <= len(self):
            raise ValueError(f"cannot take {hours} hours of a {len(self)}-hour profile")
        return replace(self, **{ch: getattr(self, ch)[:hours] for ch in CHANNELS})

    def with_channel(self, channel: str, values: Sequence[float]) -> "DayProfile":
        if channel not in CHANNELS:
            raise ValueError(f"unknown profile channel {channel!r}")
        values = np.asarray(values, dtype=float)
        if values.shape != (len(self),):
            raise ValueError(
                f"channel {channel} replacement has shape {values.shape}, expected ({len(self)},)"
            )
        return replace(self, **{channel: values})


def perturb_profile(
    profile: DayProfile, edits: Iterable[tuple[int, str, float]]
) -> DayProfile:
    """Copy of ``profile`` with ``(hour, channel, value)`` overrides applied."""
    arrays = {ch: getattr(profile, ch).copy() for ch in CHANNELS}
    for hour, channel, value in edits:
        if channel not in arrays:
            raise ValueError(f"unknown profile channel {channel!r}")
        if not 0 <= hour < len(profile):
            raise ValueError(f"edit hour {hour} outside 0..{len(profile) - 1}")
        arrays[channel][hour] = float(value)
    return replace(profile, **arrays)


def emergency_edits(portfolio: DevicePortfolio) -> list[tuple[int, str, float]]:
    """Sudden renewable swings at 01:00, 12:00, 16:00 and 19:00."""
    return [
        (1, "wt", 0.0),
        (12, "wt", portfolio.wt_rated),
        (16, "pv", 0.0),
        (19, "pv", portfolio.pv_rated),
    ]


# --------------------------------------------------------------------------
# state, action, observation


@dataclass(frozen=True)
class MicrogridState:
    ess: StorageState
    tss: StorageState
    css: StorageState
    hour: int = 0


@dataclass(frozen=True)
class InitialConditions:
    soc_ess: float = 0.5
    soc_tss: float = 0.5
    soc_css: float = 0.5

    def state(self, portfolio: DevicePortfolio) -> MicrogridState:
        return MicrogridState(
            ess=StorageState(self.soc_ess, portfolio.battery),
            tss=StorageState(self.soc_tss),
            css=StorageState(self.soc_css),
        )


@dataclass(frozen=True)
class DispatchAction:
    p_chp: float = 0.0
    h_gb: float = 0.0
    q_ec: float = 0.0
    q_ac: float = 0.0
    p_grid: float = 0.0

    def as_array(self) -> np.ndarray:
        return np.array([getattr(self, f) for f in ACTION_FIELDS])

    @classmethod
    def from_array(cls, values: Sequence[float]) -> "DispatchAction":
        return cls(*(float(v) for v in values))


def denormalize_action(raw: Sequence[float], params: MicrogridParams) -> DispatchAction:
    """Map a raw action in ``[-1, 1]^5`` onto the device boxes (clamping)."""
    raw = np.asarray(raw, dtype=float)
    if raw.shape != (N_ACTIONS,):
        raise ValueError(f"raw action must have shape ({N_ACTIONS},), got {raw.shape}")
    if not np.all(np.isfinite(raw)):
        raise ValueError("raw action has non-finite entries")
    raw = np.clip(raw, -1.0, 1.0)
    lo, hi = params.action_low, params.action_high
    values = lo + (raw + 1.0) * 0.5 * (hi - lo)
    # exact box corners at +-1
    values = np.where(raw == 1.0, hi, np.where(raw == -1.0, lo, values))
    return DispatchAction.from_array(values)


def normalize_action(action: DispatchAction, params: MicrogridParams) -> np.ndarray:
    lo, hi = params.action_low, params.action_high
    span = np.where(hi > lo, hi - lo, 1.0)
    return np.clip(2.0 * (action.as_array() - lo) / span - 1.0, -1.0, 1.0)


@dataclass(frozen=True)
class MicrogridObservation:
    wt_power: float
    pv_power: float
    p_load: float
    h_load: float
    q_load: float
    price_e: float
    soc_ess: float
    soc_tss: float
    soc_css: float
    hour_index: int
    horizon: int = 24
    price_scale: float = 1.0

    def features(self, portfolio: DevicePortfolio) -> np.ndarray:
        """Scaled feature vector fed to the networks."""
        pf = portfolio
        return np.array(
            [
                self.wt_power / pf.wt_rated,
                self.pv_power / pf.pv_rated,
                self.p_load / pf.chp.rated_capacity,
                self.h_load / pf.gb.rated_capacity,
                self.q_load / pf.ec.rated_capacity,
                self.price_e / self.price_scale,
                self.soc_ess,
                self.soc_tss,
                self.soc_css,
                self.hour_index / max(self.horizon - 1, 1),
            ]
        )


def observe(state: MicrogridState, profile: DayProfile, horizon: int) -> MicrogridObservation:
    ex = profile.hour(min(state.hour, len(profile) - 1))
    price_scale = float(profile.price_e.max()) or 1.0
    return MicrogridObservation(
        wt_power=ex.wt,
        pv_power=ex.pv,
        p_load=ex.p_load,
        h_load=ex.h_load,
        q_load=ex.q_load,
        price_e=ex.price_e,
        soc_ess=state.ess.soc,
        soc_tss=state.tss.soc,
        soc_css=state.css.soc,
        hour_index=state.hour,
        horizon=horizon,
        price_scale=price_scale,
    )


# --------------------------------------------------------------------------
# one step


@dataclass(frozen=True)
class StepOutcome:
    """Everything that happened in one hour, including the full flow ledger.

    Powers are kW; imbalances, gas purchased and costs are per step
    (kWh and $).  Imbalances are signed: positive means over-supply.
    """

    hour: int
    action: DispatchAction
    exogenous: HourSlice
    # converters
    p_chp: float
    gas_chp: float
    h_chp: float
    h_gb: float
    gas_gb: float
    q_ec: float
    p_ec_in: float
    q_ac: float
    h_ac_in: float
    p_grid: float
    # storage
    ess_ch: float
    ess_dis: float
    tss_ch: float
    tss_dis: float
    css_ch: float
    css_dis: float
    # balances
    grid_purchased: float
    gas_purchased: float
    imbalance_e: float
    imbalance_h: float
    imbalance_c: float
    # money
    energy_cost: float
    carbon_cost: float
    penalty_cost: float
    reward: float
    next_state: MicrogridState
    terminal: bool
    ess_end_of_life: bool = False

    @property
    def operating_cost(self) -> float:
        return self.energy_cost + self.carbon_cost

    @property
    def total_cost(self) -> float:
        return self.energy_cost + self.carbon_cost + self.penalty_cost


def _absorb(
    residual: float, state: StorageState, params: StorageParams, dt: float
) -> tuple[float, float]:
    max_ch, max_dis = feasible_storage_range(state, params, dt)
    if residual > 0:
        return min(residual, max_ch), 0.0
    if residual < 0:
        return 0.0, min(-residual, max_dis)
    return 0.0, 0.0


def step(
    params: MicrogridParams,
    state: MicrogridState,
    action: DispatchAction,
    exogenous: HourSlice,
    horizon: int = 24,
) -> StepOutcome:
    """Apply one hourly dispatch decision."""
    for name in ACTION_FIELDS:
        if not math.isfinite(getattr(action, name)):
            raise ValueError(f"action.{name} is not finite")
    for name in CHANNELS:
        if not math.isfinite(getattr(exogenous, name)):
            raise ValueError(f"exogenous.{name} is not finite")
    lo, hi = params.action_low, params.action_high
    values = action.as_array()
    tol = BOUND_TOL * np.maximum(hi, 1.0)
    if np.any(values < lo - tol) or np.any(values > hi + tol):
        raise CapacityError(f"action {action} outside its box [{lo}, {hi}]")

    pf = params.portfolio
    dt = params.dt
    chp = chp_step(pf.chp, action.p_chp)
    gb = gb_step(pf.gb, action.h_gb)
    ec = ec_step(pf.ec, action.q_ec)
    ac = ac_step(pf.ac, action.q_ac)
    p_grid = min(max(action.p_grid, 0.0), params.p_grid_max)

    # heat
    r_h = chp.heat_out + gb.output_power - exogenous.h_load - ac.input_power
    tss_ch, tss_dis = _absorb(r_h, state.tss, pf.tss, dt)
    tss = storage_step(state.tss, pf.tss, tss_ch, tss_dis, dt)

    # cold
    r_c = ec.output_power + ac.output_power - exogenous.q_load
    css_ch, css_dis = _absorb(r_c, state.css, pf.css, dt)
    css = storage_step(state.css, pf.css, css_ch, css_dis, dt)

    # electricity
    r_e = (
        p_grid + exogenous.wt + exogenous.pv + chp.electric_out
        - exogenous.p_load - ec.input_power
    )
    ess_ch, ess_dis = _absorb(r_e, state.ess, pf.ess, dt)
    ess = storage_step(state.ess, pf.ess, ess_ch, ess_dis, dt)
    ess = replace(ess, health=ess_age(ess, pf.ess, ess_ch, ess_dis, dt))

    gas = chp.gas_in + gb.input_power

    imb_e = (
        (p_grid + exogenous.wt + exogenous.pv + chp.electric_out + ess_dis)
        - (exogenous.p_load + ess_ch + ec.input_power)
    ) * dt
    imb_h = (
        (chp.heat_out + gb.output_power + tss_dis)
        - (exogenous.h_load + tss_ch + ac.input_power)
    ) * dt
    imb_c = (
        (ec.output_power + ac.output_power + css_dis)
        - (exogenous.q_load + css_ch)
    ) * dt

    tf = params.tariff
    energy_cost = (exogenous.price_e * p_grid + tf.gas_price * gas) * dt
    carbon_cost = tf.carbon_tax * (tf.beta_e * p_grid + tf.beta_gas * gas) * dt
    penalty_cost = tf.alpha_e * abs(imb_e) + tf.alpha_h * abs(imb_h) + tf.alpha_c * abs(imb_c)
    reward = -(energy_cost + carbon_cost + penalty_cost)

    next_hour = state.hour + 1
    return StepOutcome(
        hour=state.hour,
        action=action,
        exogenous=exogenous,
        p_chp=chp.electric_out,
        gas_chp=chp.gas_in,
        h_chp=chp.heat_out,
        h_gb=gb.output_power,
        gas_gb=gb.input_power,
        q_ec=ec.output_power,
        p_ec_in=ec.input_power,
        q_ac=ac.output_power,
        h_ac_in=ac.input_power,
        p_grid=p_grid,
        ess_ch=ess_ch,
        ess_dis=ess_dis,
        tss_ch=tss_ch,
        tss_dis=tss_dis,
        css_ch=css_ch,
        css_dis=css_dis,
        grid_purchased=p_grid * dt,
        gas_purchased=gas * dt,
        imbalance_e=imb_e,
        imbalance_h=imb_h,
        imbalance_c=imb_c,
        energy_cost=energy_cost,
        carbon_cost=carbon_cost,
        penalty_cost=penalty_cost,
        reward=reward,
        next_state=MicrogridState(ess=ess, tss=tss, css=css, hour=next_hour),
        terminal=next_hour >= horizon,
        ess_end_of_life=ess.health.end_of_life,
    )


# --------------------------------------------------------------------------
# episodes


class Policy(Protocol):
    def __call__(self, observation: MicrogridObservation) -> DispatchAction: ...


@dataclass
class EpisodeTrace:
    outcomes: list[StepOutcome]
    observations: list[MicrogridObservation]

    @property
    def energy_cost(self) -> float:
        return float(sum(o.energy_cost for o in self.outcomes))

    @property
    def carbon_cost(self) -> float:
        return float(sum(o.carbon_cost for o in self.outcomes))

    @property
    def penalty_cost(self) -> float:
        return float(sum(o.penalty_cost for o in self.outcomes))

    @property
    def operating_cost(self) -> float:
        return self.energy_cost + self.carbon_cost

    @property
    def total_cost(self) -> float:
        return self.energy_cost + self.carbon_cost + self.penalty_cost

    @property
    def total_return(self) -> float:
        return float(sum(o.reward for o in self.outcomes))

    @property
    def electricity_purchases(self) -> np.ndarray:
        return np.array([o.grid_purchased for o in self.outcomes])

    @property
    def gas_purchases(self) -> np.ndarray:
        return np.array([o.gas_purchased for o in self.outcomes])

    def actions(self) -> list[DispatchAction]:
        return [o.action for o in self.outcomes]


def run_episode(
    policy: Policy,
    profile: DayProfile,
    params: MicrogridParams,
    initial: Optional[InitialConditions] = None,
    horizon: Optional[int] = None,
) -> EpisodeTrace:
    """Roll ``policy`` through ``horizon`` hours of ``profile``."""
    horizon = len(profile) if horizon is None else horizon
    if not 1 <= horizon <= len(profile):
        raise ValueError(f"horizon {horizon} does not fit a {len(profile)}-hour profile")
    state = (initial or InitialConditions()).state(params.portfolio)
    outcomes, observations = [], []
    for t in range(horizon):
        obs = observe(state, profile, horizon)
        action = policy(obs)
        out = step(params, state, action, profile.hour(t), horizon)
        observations.append(obs)
        outcomes.append(out)
        state = out.next_state
    return EpisodeTrace(outcomes, observations)


def replay_actions(
    actions: Sequence[DispatchAction],
    profile: DayProfile,
    params: MicrogridParams,
    initial: Optional[InitialConditions] = None,
) -> EpisodeTrace:
    """Apply a fixed (open-loop) action schedule."""
    it = iter(actions)
    return run_episode(lambda obs: next(it), profile, params, initial, horizon=len(actions))


# --------------------------------------------------------------------------
# gym-style wrapper used for training


class MicrogridEnv:
    """Episode wrapper exposing normalized observations and raw actions."""

    def __init__(
        self,
        params: MicrogridParams,
        profile: DayProfile,
        horizon: Optional[int] = None,
        initial: Optional[InitialConditions] = None,
    ):
        self.params = params
        self.profile = profile
        self.horizon = len(profile) if horizon is None else horizon
        if not 1 <= self.horizon <= len(profile):
            raise ValueError("horizon longer than profile")
        self.initial = initial or InitialConditions()
        self.state = self.initial.state(params.portfolio)

    def reset(self) -> np.ndarray:
        self.state = self.initial.state(self.params.portfolio)
        return self.observation().features(self.params.portfolio)

    def observation(self) -> MicrogridObservation:
        return observe(self.state, self.profile, self.horizon)

    def step(self, raw_action: Sequence[float]) -> tuple[np.ndarray, float, bool, StepOutcome]:
        if self.state.hour >= self.horizon:
            raise RuntimeError("episode finished; call reset()")
        action = denormalize_action(raw_action, self.params)
        out = step(self.params, self.state, action, self.profile.hour(self.state.hour), self.horizon)
        self.state = out.next_state
        obs = self.observation().features(self.params.portfolio)
        return obs, out.reward, out.terminal, out


# --------------------------------------------------------------------------
# simple policies


class ZeroPolicy:
    """Every device at its minimum output and no grid purchase."""

    def __init__(self, params: MicrogridParams):
        self.action = denormalize_action(-np.ones(N_ACTIONS), params)

    def __call__(self, observation: MicrogridObservation) -> DispatchAction:
        return self.action


class RandomPolicy:
    def __init__(self, params: MicrogridParams, rng: np.random.Generator):
        self.params = params
        self.rng = rng

    def __call__(self, observation: MicrogridObservation) -> DispatchAction:
        return denormalize_action(self.rng.uniform(-1.0, 1.0, N_ACTIONS), self.params)


class ActorPolicy:
    """Deterministic policy from an actor network (features -> [-1, 1]^5)."""

    def __init__(self, actor, params: MicrogridParams):
        if actor.in_dim != N_FEATURES or actor.out_dim != N_ACTIONS:
            raise ValueError(
                f"actor maps {actor.in_dim} -> {actor.out_dim}, "
                f"expected {N_FEATURES} -> {N_ACTIONS}"
            )
        self.actor = actor
        self.params = params

    def __call__(self, obs: MicrogridObservation) -> DispatchAction:
        x = obs.features(self.params.portfolio)[None, :]
        return denormalize_action(self.actor.forward(x, mode="eval")[0], self.params)


class GreedyPolicy:
    """Rule-based separate supply.

    Cooling comes from the electric chiller first and the absorption chiller
    for any excess, heat from the boiler (plus whatever the absorption chiller
    draws), and the grid covers the electric load net of renewables.  The CHP
    stays off.
    """

    def __init__(self, params: MicrogridParams):
        self.params = params

    def __call__(self, obs: MicrogridObservation) -> DispatchAction:
        pf = self.params.portfolio
        q_ec = min(obs.q_load, pf.ec.rated_capacity)
        q_ac = min(obs.q_load - q_ec, pf.ac.rated_capacity)
        h_ac_in = ac_step(pf.ac, q_ac).input_power
        h_gb = min(obs.h_load + h_ac_in, pf.gb.rated_capacity)
        p_ec_in = ec_step(pf.ec, q_ec).input_power
        p_grid = obs.p_load + p_ec_in - obs.wt_power - obs.pv_power
        p_grid = min(max(p_grid, 0.0), self.params.p_grid_max)
        return DispatchAction(p_chp=0.0, h_gb=h_gb, q_ec=q_ec, q_ac=q_ac, p_grid=p_grid)


# --------------------------------------------------------------------------
# purchase intervals


@dataclass
class PurchaseBounds:
    """Per-scenario purchases (rows) by hour (columns)."""

    electricity: np.ndarray
    gas: np.ndarray

    @property
    def elec_min(self) -> np.ndarray:
        return self.electricity.min(axis=0)

    @property
    def elec_max(self) -> np.ndarray:
        return self.electricity.max(axis=0)

    @property
    def gas_min(self) -> np.ndarray:
        return self.gas.min(axis=0)

    @property
    def gas_max(self) -> np.ndarray:
        return self.gas.max(axis=0)


def purchase_bounds(
    policy: Policy,
    params: MicrogridParams,
    base_profile: DayProfile,
    wind=None,
    pv=None,
    initial: Optional[InitialConditions] = None,
    horizon: Optional[int] = None,
    workers: int = 1,
) -> PurchaseBounds:
    """Electricity and gas purchase envelopes over renewable scenarios.

    ``wind`` and ``pv`` are scenario sets (anything with ``power_kw()``
    returning an ``N x T`` array); scenario ``i`` of each replaces the
    profile's forecast for run ``i``.  At least one must be given and, when
    both are, their sizes must agree.
    """
    curves = {}
    for channel, sset in (("wt", wind), ("pv", pv)):
        if sset is not None:
            curves[channel] = np.asarray(sset.power_kw(), dtype=float)
    if not curves:
        raise ValueError("purchase_bounds needs at least one scenario set")
    sizes = {c.shape[0] for c in curves.values()}
    if len(sizes) != 1:
        raise ValueError(f"scenario sets differ in size: {sorted(sizes)}")
    n = sizes.pop()
    if n == 0:
        raise ValueError("scenario set is empty")
    for channel, c in curves.items():
        if c.shape[1] != len(base_profile):
            raise ValueError(
                f"{channel} scenarios have {c.shape[1]} hours, profile has {len(base_profile)}"
            )

    def run(i: int) -> tuple[np.ndarray, np.ndarray]:
        prof = base_profile
        for channel, c in curves.items():
            prof = prof.with_channel(channel, c[i])
        trace = run_episode(policy, prof, params, initial, horizon)
        return trace.electricity_purchases, trace.gas_purchases

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(run, range(n)))
    else:
        results = [run(i) for i in range(n)]
    return PurchaseBounds(
        electricity=np.array([r[0] for r in results]),
        gas=np.array([r[1] for r in results]),
    )
