"""Synthetic day profiles and datasets used by the tests and the CLI demos.

None of these numbers are measured data; they only mimic the qualitative
shape of the four seasonal typical days (cold peak in summer, heat peak in
winter, cheaper summer electricity).
"""

from __future__ import annotations

import numpy as np

from .environment import DayProfile

HOURS = 24
SEASONS = ("spring", "summer", "autumn", "winter")

_SEASON = {
    #          wind  sun   elec   heat   cold   price
    "spring": (1.0, 0.8, 1.00, 0.45, 0.35, 1.10),
    "summer": (0.7, 1.0, 1.10, 0.15, 1.00, 0.80),
    "autumn": (0.9, 0.7, 1.00, 0.50, 0.30, 1.10),
    "winter": (1.1, 0.5, 1.15, 1.00, 0.05, 1.20),
}


def tou_price(hours: int = HOURS) -> np.ndarray:
    """Valley / flat / peak time-of-use tariff in $/kWh."""
    h = np.arange(hours) % 24
    price = np.full(hours, 0.09)
    price[h < 7] = 0.05
    price[(h >= 10) & (h < 15)] = 0.14
    price[(h >= 18) & (h < 21)] = 0.14
    return price


def seasonal_day(season: str, rng: np.random.Generator | None = None, jitter: float = 0.0) -> DayProfile:
    """One synthetic typical day; ``jitter`` adds multiplicative noise."""
    wind, sun, elec, heat, cold, price = _SEASON[season]
    h = np.arange(HOURS)
    wt = wind * (260.0 + 160.0 * np.cos(2.0 * np.pi * (h - 3) / HOURS))
    pv = np.where((h >= 6) & (h <= 18), 480.0 * sun * np.sin(np.pi * (h - 6) / 12.0), 0.0)
    p_load = elec * (650.0 + 450.0 * np.exp(-((h - 13.0) / 5.0) ** 2) + 200.0 * np.exp(-((h - 20.0) / 2.0) ** 2))
    h_load = heat * (1500.0 + 500.0 * np.cos(2.0 * np.pi * (h - 5) / HOURS))
    q_load = cold * (1400.0 + 1300.0 * np.exp(-((h - 14.0) / 4.0) ** 2))
    tariff = price * tou_price()
    arrays = [wt, pv, p_load, h_load, q_load, tariff]
    if rng is not None and jitter > 0:
        arrays = [a * rng.uniform(1.0 - jitter, 1.0 + jitter, a.shape) for a in arrays[:5]] + [
            tariff * rng.uniform(1.0 - jitter / 2, 1.0 + jitter / 2)
        ]
        arrays[0] = np.minimum(arrays[0], 500.0)
        arrays[1] = np.minimum(arrays[1], 500.0)
    return DayProfile(*arrays, name=season)


def typical_days() -> dict[str, DayProfile]:
    return {s: seasonal_day(s) for s in SEASONS}


def zero_demand_day(hours: int = HOURS) -> DayProfile:
    z = np.zeros(hours)
    return DayProfile(z, z, z, z, z, tou_price(hours), name="zero-demand")


def training_days(n: int, rng: np.random.Generator, jitter: float = 0.15) -> list[DayProfile]:
    """Jittered copies of random seasons."""
    return [
        seasonal_day(SEASONS[rng.integers(len(SEASONS))], rng, jitter) for _ in range(n)
    ]


def held_out_day(seed: int = 2024) -> DayProfile:
    rng = np.random.default_rng(seed)
    day = seasonal_day("spring", rng, jitter=0.1)
    return DayProfile(day.wt, day.pv, day.p_load, day.h_load, day.q_load, day.price_e, name="held-out")
