"""YAML configuration: schema, defaults and validation.

Every key has a default, so an empty file yields the full default system.
Device ratings, storage parameters, prices, carbon intensities and the TD3
hyperparameters default to the published case-study values; efficiency
polynomials, SOC limits, penalty factors, grid limit and GAN settings are
synthetic fixture values (marked below).
"""

from __future__ import annotations

import copy
import math
import os
import zlib
from dataclasses import dataclass, replace
from typing import Any, Mapping, Optional

import numpy as np
import yaml

from .devices import (
    BatteryHealth,
    ChpParams,
    ConverterParams,
    DevicePortfolio,
    EfficiencyPolynomial,
    StorageParams,
)
from .environment import InitialConditions, MicrogridParams, Tariff
from .scengen import GanConfig
from .td3 import Td3Hyperparams


class ConfigError(ValueError):
    """Invalid configuration; ``path`` names the offending field."""

    def __init__(self, path: str, message: str):
        super().__init__(f"{path}: {message}" if path else message)
        self.path = path


def _storage(capacity: float) -> dict:
    return {
        "capacity_kwh": capacity,
        "decay": 0.999,
        "eta_ch": 0.95,
        "eta_dis": 0.95,
        "p_ch_max_kw": 500.0,
        "p_dis_max_kw": 500.0,
        "soc_min": 0.1,  # synthetic fixture
        "soc_max": 0.9,  # synthetic fixture
    }


DEFAULTS: dict[str, Any] = {
    "seed": 0,
    "horizon": 24,
    "dt_hours": 1.0,
    "x_floor": 0.05,
    "cop_cap": 10.0,
    "devices": {
        "chp": {
            "rated_kw": 1200.0,
            "min_kw": 0.0,
            "efficiency": [0.20, 0.30, -0.15],  # synthetic fixture
            "heat_ratio": [1.1, 0.3, -0.1],  # synthetic fixture
        },
        "gb": {"rated_kw": 2500.0, "min_kw": 0.0, "efficiency": [0.75, 0.25, -0.10]},
        "ec": {"rated_kw": 4000.0, "min_kw": 0.0, "efficiency": [2.0, 2.0, -1.0]},
        "ac": {"rated_kw": 2500.0, "min_kw": 0.0, "efficiency": [0.50, 0.40, -0.20]},
        "ess": _storage(1200.0),
        "tss": _storage(800.0),
        "css": _storage(1200.0),
        "battery": {"soh_initial": 1.0, "soh_end": 0.8, "cycle_life_80": 4000.0},
        "wt_rated_kw": 500.0,
        "pv_rated_kw": 500.0,
    },
    "prices": {
        "gas_per_m3": 0.35,
        "calorific_kwh_per_m3": 9.7,
        "carbon_tax_per_kg": 0.0316,
        "beta_e_kg_per_kwh": 0.683,
        "beta_gas_kg_per_kwh": 0.245,
    },
    "penalty": {"alpha_e": 1.0, "alpha_h": 1.0, "alpha_c": 1.0},  # synthetic fixture
    "grid": {"p_max_kw": 5000.0},  # synthetic fixture
    "initial_soc": {"ess": 0.5, "tss": 0.5, "css": 0.5},
    "td3": {
        "actor_lr": 5e-6,
        "critic_lr": 5e-5,
        "gamma": 0.95,
        "batch_size": 256,
        "buffer_size": 36000,
        "tau": 0.001,
        "policy_noise": 0.2,
        "noise_clip": 0.5,
        "policy_delay": 2,
        "exploration_noise": 0.1,
        "warmup": None,
        "hidden": [128, 128],
        "reward_scale": 1.0,
        "adam_beta1": 0.9,
        "adam_beta2": 0.999,
        "episodes": 500,
        "train_days": 64,
    },
    "gan": {
        "noise_dim": 32,
        "hidden": [256, 256],
        "lr": 2e-4,
        "beta1": 0.5,
        "beta2": 0.999,
        "batch_size": 64,
        "epochs": 2000,
        "leaky_slope": 0.2,
        "label_fake": 0.0,
        "label_real": 1.0,
        "label_target": 1.0,
        "batchnorm_generator": False,
        "skip": "additive",
        "noise": "normal",
        "residual_discriminator": True,
    },
}

# keys whose default is None but which take a number
_OPTIONAL_INT = {("td3", "warmup")}


def _is_number(v: Any) -> bool:
    return isinstance(v, (int, float)) and not isinstance(v, bool)


def _merge(default: Any, given: Any, path: tuple[str, ...]) -> Any:
    dotted = ".".join(path)
    if isinstance(default, dict):
        if given is None:
            return copy.deepcopy(default)
        if not isinstance(given, Mapping):
            raise ConfigError(dotted, f"expected a mapping, got {type(given).__name__}")
        unknown = sorted(set(given) - set(default))
        if unknown:
            where = f"{dotted}.{unknown[0]}" if dotted else str(unknown[0])
            raise ConfigError(where, "unknown key")
        return {k: _merge(default[k], given.get(k), path + (k,)) for k in default}
    if given is None:
        return copy.deepcopy(default)
    if path in _OPTIONAL_INT:
        if not isinstance(given, int) or isinstance(given, bool):
            raise ConfigError(dotted, "expected an integer or null")
        return given
    if isinstance(default, bool):
        if not isinstance(given, bool):
            raise ConfigError(dotted, "expected true or false")
        return given
    if isinstance(default, int):
        if not isinstance(given, int) or isinstance(given, bool):
            raise ConfigError(dotted, "expected an integer")
        return given
    if isinstance(default, str):
        if not isinstance(given, str):
            raise ConfigError(dotted, "expected a string")
        return given
    if isinstance(default, float):
        if not _is_number(given) or not math.isfinite(given):
            raise ConfigError(dotted, "expected a finite number")
        return float(given)
    if isinstance(default, list):
        if not isinstance(given, list) or not given or not all(_is_number(v) for v in given):
            raise ConfigError(dotted, "expected a non-empty list of numbers")
        kind = int if all(isinstance(v, int) for v in default) else float
        if kind is int and not all(isinstance(v, int) for v in given):
            raise ConfigError(dotted, "expected a list of integers")
        return [kind(v) for v in given]
    raise ConfigError(dotted, "unsupported value")  # pragma: no cover


@dataclass(frozen=True)
class SystemConfig:
    microgrid: MicrogridParams
    initial: InitialConditions
    td3: Td3Hyperparams
    gan: GanConfig
    horizon: int
    seed: int
    td3_episodes: int
    td3_train_days: int
    resolved: dict

    @property
    def portfolio(self) -> DevicePortfolio:
        return self.microgrid.portfolio

    def with_seed(self, seed: int) -> "SystemConfig":
        resolved = copy.deepcopy(self.resolved)
        resolved["seed"] = seed
        return replace(self, seed=seed, resolved=resolved)


class _Section:
    """Wraps construction so ValueErrors carry the config path."""

    def __init__(self, path: str):
        self.path = path

    def __enter__(self):
        return self

    def __exit__(self, exc_type, exc, tb):
        if exc_type is not None and issubclass(exc_type, ValueError) and not isinstance(exc, ConfigError):
            raise ConfigError(self.path, str(exc)) from exc
        return False


def _poly(coeffs: list, rated: float, cap: float, x_floor: float, path: str) -> EfficiencyPolynomial:
    with _Section(path):
        return EfficiencyPolynomial(tuple(coeffs), rated, cap=cap, x_floor=x_floor)


def _storage_params(d: dict, path: str) -> StorageParams:
    if not d["soc_min"] < d["soc_max"]:
        raise ConfigError(f"{path}.soc_min", f"soc_min {d['soc_min']} must be below soc_max {d['soc_max']}")
    for key in ("soc_min", "soc_max"):
        if not 0.0 <= d[key] <= 1.0:
            raise ConfigError(f"{path}.{key}", "must lie in [0, 1]")
    for key in ("decay", "eta_ch", "eta_dis"):
        if not 0.0 < d[key] <= 1.0:
            raise ConfigError(f"{path}.{key}", "must lie in (0, 1]")
    for key in ("capacity_kwh", "p_ch_max_kw", "p_dis_max_kw"):
        if not d[key] > 0:
            raise ConfigError(f"{path}.{key}", "must be strictly positive")
    return StorageParams(
        capacity_max=d["capacity_kwh"],
        decay=d["decay"],
        eta_ch=d["eta_ch"],
        eta_dis=d["eta_dis"],
        p_ch_max=d["p_ch_max_kw"],
        p_dis_max=d["p_dis_max_kw"],
        soc_min=d["soc_min"],
        soc_max=d["soc_max"],
    )


def _converter(d: dict, cap: float, x_floor: float, path: str) -> ConverterParams:
    if not d["rated_kw"] > 0:
        raise ConfigError(f"{path}.rated_kw", "must be strictly positive")
    poly = _poly(d["efficiency"], d["rated_kw"], cap, x_floor, f"{path}.efficiency")
    with _Section(f"{path}.min_kw"):
        return ConverterParams(poly, min_output=d["min_kw"])


def build_config(raw: Optional[Mapping]) -> SystemConfig:
    """Validate a parsed document (``None`` means empty) and apply defaults."""
    r = _merge(DEFAULTS, raw, ())
    xf, cop = r["x_floor"], r["cop_cap"]
    if not 0.0 <= xf < 1.0:
        raise ConfigError("x_floor", "must lie in [0, 1)")
    if not cop > 0:
        raise ConfigError("cop_cap", "must be positive")
    if r["horizon"] < 1:
        raise ConfigError("horizon", "must be >= 1")
    if not r["dt_hours"] > 0:
        raise ConfigError("dt_hours", "must be positive")

    dev = r["devices"]
    chp = dev["chp"]
    if not chp["rated_kw"] > 0:
        raise ConfigError("devices.chp.rated_kw", "must be strictly positive")
    with _Section("devices.chp.min_kw"):
        chp_params = ChpParams(
            efficiency=_poly(chp["efficiency"], chp["rated_kw"], 1.0, xf, "devices.chp.efficiency"),
            heat_ratio=_poly(chp["heat_ratio"], chp["rated_kw"], cop, xf, "devices.chp.heat_ratio"),
            min_output=chp["min_kw"],
        )
    bat = dev["battery"]
    with _Section("devices.battery"):
        battery = BatteryHealth(
            soh=bat["soh_initial"],
            soh_initial=bat["soh_initial"],
            soh_end=bat["soh_end"],
            cycle_life_80=bat["cycle_life_80"],
        )
    for key in ("wt_rated_kw", "pv_rated_kw"):
        if not dev[key] > 0:
            raise ConfigError(f"devices.{key}", "must be strictly positive")
    portfolio = DevicePortfolio(
        chp=chp_params,
        gb=_converter(dev["gb"], 1.0, xf, "devices.gb"),
        ec=_converter(dev["ec"], cop, xf, "devices.ec"),
        ac=_converter(dev["ac"], cop, xf, "devices.ac"),
        ess=_storage_params(dev["ess"], "devices.ess"),
        tss=_storage_params(dev["tss"], "devices.tss"),
        css=_storage_params(dev["css"], "devices.css"),
        battery=battery,
        wt_rated=dev["wt_rated_kw"],
        pv_rated=dev["pv_rated_kw"],
    )

    pr = r["prices"]
    for key, value in pr.items():
        if value < 0 or (key == "calorific_kwh_per_m3" and value == 0):
            raise ConfigError(f"prices.{key}", "must be non-negative (calorific value positive)")
    pen = r["penalty"]
    for key, value in pen.items():
        if value < 0:
            raise ConfigError(f"penalty.{key}", "must be non-negative")
    tariff = Tariff(
        gas_price=pr["gas_per_m3"] / pr["calorific_kwh_per_m3"],
        carbon_tax=pr["carbon_tax_per_kg"],
        beta_e=pr["beta_e_kg_per_kwh"],
        beta_gas=pr["beta_gas_kg_per_kwh"],
        alpha_e=pen["alpha_e"],
        alpha_h=pen["alpha_h"],
        alpha_c=pen["alpha_c"],
    )
    with _Section("grid.p_max_kw"):
        microgrid = MicrogridParams(portfolio, tariff, r["grid"]["p_max_kw"], r["dt_hours"])

    soc = r["initial_soc"]
    for store in ("ess", "tss", "css"):
        params = getattr(portfolio, store)
        scale = battery.soh if store == "ess" else 1.0
        if not params.soc_min * scale <= soc[store] <= params.soc_max * scale:
            raise ConfigError(f"initial_soc.{store}", "outside the store's SOC limits")
    initial = InitialConditions(soc["ess"], soc["tss"], soc["css"])

    td3 = dict(r["td3"])
    episodes = td3.pop("episodes")
    train_days = td3.pop("train_days")
    if episodes < 0:
        raise ConfigError("td3.episodes", "must be >= 0")
    if train_days < 1:
        raise ConfigError("td3.train_days", "must be >= 1")
    with _Section("td3"):
        hp = Td3Hyperparams(**td3)
    with _Section("gan"):
        gan = GanConfig(**r["gan"])

    return SystemConfig(
        microgrid=microgrid,
        initial=initial,
        td3=hp,
        gan=gan,
        horizon=r["horizon"],
        seed=r["seed"],
        td3_episodes=episodes,
        td3_train_days=train_days,
        resolved=r,
    )


def load_config(path: Optional[str | os.PathLike] = None) -> SystemConfig:
    """Load and validate a YAML config; ``None`` gives the defaults."""
    if path is None:
        return build_config(None)
    with open(path, encoding="utf-8") as fh:
        try:
            raw = yaml.safe_load(fh)
        except yaml.YAMLError as exc:
            raise ConfigError("", f"{path}: invalid YAML ({exc})") from exc
    return build_config(raw)


def default_config() -> SystemConfig:
    return build_config(None)


def rated_config(cfg: SystemConfig) -> SystemConfig:
    return replace(cfg, microgrid=cfg.microgrid.rated_model())


def derive_seed(root: int, component: str) -> int:
    """Seed for one named component, derived from the root seed.

    ``SeedSequence([root, crc32(component)])`` so that adding a component
    never shifts the seeds of the others.
    """
    entropy = [int(root) & 0xFFFFFFFFFFFFFFFF, zlib.crc32(component.encode("utf-8"))]
    return int(np.random.SeedSequence(entropy).generate_state(1, dtype=np.uint64)[0])
