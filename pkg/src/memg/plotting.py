"""SVG figures for the command-line reports.

Output is byte-stable: the SVG hash salt is fixed and no date is embedded,
so re-running a command reproduces the same file.
"""

from __future__ import annotations

import os
from typing import Sequence

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from .environment import EpisodeTrace  # noqa: E402
from .scengen import ScenarioSet  # noqa: E402
from .td3 import EpisodeRecord  # noqa: E402

_STYLE = {
    "svg.hashsalt": "memg",
    "svg.fonttype": "none",
    "font.size": 9,
    "axes.spines.top": False,
    "axes.spines.right": False,
    "axes.grid": True,
    "grid.alpha": 0.3,
    "legend.frameon": False,
    "legend.fontsize": 7,
}

# a colour-blind friendly cycle (Okabe-Ito)
PALETTE = ("#0072B2", "#E69F00", "#009E73", "#D55E00", "#CC79A7", "#56B4E9", "#F0E442", "#000000")


def _save(fig, path: str | os.PathLike) -> None:
    fig.savefig(path, format="svg", metadata={"Date": None, "Creator": None})
    plt.close(fig)


def _stack(ax, hours: np.ndarray, parts: Sequence[tuple[str, np.ndarray]], sign: float) -> None:
    base = np.zeros(hours.size)
    for i, (label, values) in enumerate(parts):
        values = np.asarray(values, dtype=float)
        if not np.any(values):
            continue
        ax.bar(hours, sign * values, bottom=sign * base, width=0.8, label=label,
               color=PALETTE[i % len(PALETTE)], linewidth=0)
        base = base + values


def dispatch_figure(trace: EpisodeTrace, path: str | os.PathLike, title: str = "") -> None:
    """Stacked hourly balance per carrier: supply above zero, demand below."""
    out = trace.outcomes
    hours = np.array([o.hour for o in out])
    col = lambda f: np.array([f(o) for o in out], dtype=float)  # noqa: E731
    carriers = {
        "Electricity": (
            [("grid", col(lambda o: o.p_grid)), ("wind", col(lambda o: o.exogenous.wt)),
             ("PV", col(lambda o: o.exogenous.pv)), ("CHP", col(lambda o: o.p_chp)),
             ("ESS discharge", col(lambda o: o.ess_dis))],
            [("load", col(lambda o: o.exogenous.p_load)), ("EC input", col(lambda o: o.p_ec_in)),
             ("ESS charge", col(lambda o: o.ess_ch))],
        ),
        "Heat": (
            [("CHP", col(lambda o: o.h_chp)), ("GB", col(lambda o: o.h_gb)),
             ("TSS discharge", col(lambda o: o.tss_dis))],
            [("load", col(lambda o: o.exogenous.h_load)), ("AC input", col(lambda o: o.h_ac_in)),
             ("TSS charge", col(lambda o: o.tss_ch))],
        ),
        "Cooling": (
            [("EC", col(lambda o: o.q_ec)), ("AC", col(lambda o: o.q_ac)),
             ("CSS discharge", col(lambda o: o.css_dis))],
            [("load", col(lambda o: o.exogenous.q_load)), ("CSS charge", col(lambda o: o.css_ch))],
        ),
    }
    with plt.rc_context(_STYLE):
        fig, axes = plt.subplots(3, 1, figsize=(7.0, 8.0), sharex=True)
        for ax, (name, (supply, demand)) in zip(axes, carriers.items()):
            _stack(ax, hours, supply, 1.0)
            _stack(ax, hours, demand, -1.0)
            ax.axhline(0.0, color="black", linewidth=0.6)
            ax.set_ylabel(f"{name} (kW)")
            if ax.get_legend_handles_labels()[0]:
                ax.legend(loc="upper left", ncol=4)
        axes[-1].set_xlabel("Hour")
        if title:
            axes[0].set_title(title)
        fig.tight_layout()
        _save(fig, path)


def curve_figure(curve: Sequence[EpisodeRecord], path: str | os.PathLike, window: int = 20) -> None:
    """Episode return with a trailing moving average."""
    ep = np.array([r.episode for r in curve])
    ret = np.array([r.total_return for r in curve], dtype=float)
    with plt.rc_context(_STYLE):
        fig, ax = plt.subplots(figsize=(6.0, 3.5))
        ax.plot(ep, ret, color=PALETTE[5], linewidth=0.6, label="episode return")
        if ret.size >= window:
            avg = np.convolve(ret, np.ones(window) / window, mode="valid")
            ax.plot(ep[window - 1:], avg, color=PALETTE[0], linewidth=1.4, label=f"{window}-episode mean")
        ax.set_xlabel("Episode")
        ax.set_ylabel("Return")
        ax.legend(loc="lower right")
        fig.tight_layout()
        _save(fig, path)


def gan_loss_figure(d_losses: Sequence[float], g_losses: Sequence[float], path: str | os.PathLike) -> None:
    with plt.rc_context(_STYLE):
        fig, ax = plt.subplots(figsize=(6.0, 3.5))
        ax.plot(d_losses, color=PALETTE[0], linewidth=0.7, label="discriminator")
        ax.plot(g_losses, color=PALETTE[3], linewidth=0.7, label="generator")
        ax.set_xlabel("Epoch")
        ax.set_ylabel("Least-squares loss")
        ax.legend(loc="upper right")
        fig.tight_layout()
        _save(fig, path)


def envelope_figure(sset: ScenarioSet, path: str | os.PathLike, max_lines: int = 200) -> None:
    """Scenario curves, their min/max envelope and the forecast."""
    kw = sset.power_kw()
    hours = np.arange(kw.shape[1])
    with plt.rc_context(_STYLE):
        fig, ax = plt.subplots(figsize=(6.5, 3.8))
        for row in kw[:max_lines]:
            ax.plot(hours, row, color="0.6", linewidth=0.3, alpha=0.5)
        ax.fill_between(hours, kw.min(axis=0), kw.max(axis=0), color=PALETTE[5], alpha=0.25,
                        linewidth=0, label=f"envelope of {kw.shape[0]} scenarios")
        ax.plot(hours, sset.forecast * sset.rated_kw, color=PALETTE[0], linewidth=1.5, label="forecast")
        if sset.actual is not None:
            ax.plot(hours, sset.actual * sset.rated_kw, color=PALETTE[3], linewidth=1.2,
                    linestyle="--", label="actual")
        ax.set_xlabel("Hour")
        ax.set_ylabel(f"{'Wind' if sset.kind == 'wind' else 'PV'} power (kW)")
        ax.set_ylim(0.0, sset.rated_kw * 1.02)
        ax.legend(loc="upper right")
        fig.tight_layout()
        _save(fig, path)


def bounds_figure(bounds, forecast_trace: EpisodeTrace, path: str | os.PathLike) -> None:
    """Per-hour purchase intervals with the forecast-day purchases on top."""
    e, g = forecast_trace.electricity_purchases, forecast_trace.gas_purchases
    hours = np.arange(e.size)
    with plt.rc_context(_STYLE):
        fig, axes = plt.subplots(2, 1, figsize=(6.5, 5.5), sharex=True)
        for ax, lo, hi, mid, name in (
            (axes[0], bounds.elec_min, bounds.elec_max, e, "Electricity"),
            (axes[1], bounds.gas_min, bounds.gas_max, g, "Gas"),
        ):
            ax.bar(hours, hi - lo, bottom=lo, width=0.6, color=PALETTE[5], alpha=0.6, label="interval")
            ax.plot(hours, mid, color=PALETTE[3], marker="o", markersize=2.5, linewidth=1.0, label="forecast")
            ax.set_ylabel(f"{name} purchased (kWh)")
            ax.legend(loc="upper left")
        axes[-1].set_xlabel("Hour")
        fig.tight_layout()
        _save(fig, path)


def comparison_figure(off: EpisodeTrace, rated: EpisodeTrace, path: str | os.PathLike) -> None:
    """Hourly operating cost under the off-design and the rated device models."""
    a = np.array([o.operating_cost for o in off.outcomes])
    b = np.array([o.operating_cost for o in rated.outcomes])
    hours = np.arange(a.size)
    with plt.rc_context(_STYLE):
        fig, ax = plt.subplots(figsize=(6.5, 3.5))
        ax.bar(hours - 0.2, a, width=0.4, color=PALETTE[3], label=f"off-design ({a.sum():.2f} $)")
        ax.bar(hours + 0.2, b, width=0.4, color=PALETTE[0], label=f"rated ({b.sum():.2f} $)")
        ax.set_xlabel("Hour")
        ax.set_ylabel("Operating cost ($)")
        ax.legend(loc="upper left")
        fig.tight_layout()
        _save(fig, path)


def index_figure(rows, path: str | os.PathLike) -> None:
    """Coverage and envelope width per method."""
    names = [r.method for r in rows]
    x = np.arange(len(names))
    with plt.rc_context(_STYLE):
        fig, axes = plt.subplots(1, 2, figsize=(6.5, 3.0))
        axes[0].bar(x, [r.index1 for r in rows], color=PALETTE[0])
        axes[0].set_ylabel("Coverage")
        axes[0].set_ylim(0.0, 1.0)
        axes[1].bar(x, [r.index2 for r in rows], color=PALETTE[1])
        axes[1].set_ylabel("Mean envelope width (p.u.)")
        for ax in axes:
            ax.set_xticks(x, names, rotation=20)
        fig.tight_layout()
        _save(fig, path)
