"""CSV readers and writers for every file the command line produces or reads.

Floats are written with ``repr`` so each value parses back to the identical
double.  Scenario and paired-series files carry an extra per-unit column next
to the kW column for the same reason: ``kw / rated`` does not always recover
the stored per-unit value bit for bit.
"""

from __future__ import annotations

import csv
import io
import json
import os
from dataclasses import dataclass
from typing import Iterable, Mapping, Optional, Sequence

import numpy as np

from .environment import ACTION_FIELDS, CHANNELS, DayProfile, EpisodeTrace
from .scengen import KINDS, PairedSeries, ScenarioSet
from .td3 import EpisodeRecord

PROFILE_HEADER = ("hour", "wt_kw", "pv_kw", "p_load_kw", "h_load_kw", "q_load_kw", "price_e_per_kwh")
CURVE_HEADER = ("episode", "return", "energy_cost", "carbon_cost", "penalty_cost")
PAIRED_HEADER = ("day", "hour", "kind", "forecast_kw", "actual_kw", "forecast_pu", "actual_pu")
SCENARIO_HEADER = ("scenario_id", "hour", "power_kw", "power_pu")
SCENARIO_FORMAT = "memg-scenarios 1"

TRACE_COLUMNS = (
    *PROFILE_HEADER,
    *(f"set_{a}" for a in ACTION_FIELDS),
    "p_chp", "gas_chp", "h_chp", "h_gb", "gas_gb", "q_ec", "p_ec_in", "q_ac", "h_ac_in", "p_grid",
    "ess_ch", "ess_dis", "tss_ch", "tss_dis", "css_ch", "css_dis",
    "grid_purchased", "gas_purchased", "imbalance_e", "imbalance_h", "imbalance_c",
    "soc_ess", "soc_tss", "soc_css", "soh_ess",
    "energy_cost", "carbon_cost", "penalty_cost", "reward",
)


class FormatError(ValueError):
    """A file does not match the expected layout."""

    def __init__(self, path: str, message: str):
        super().__init__(f"{path}: {message}")
        self.path = path


def fmt(x: float) -> str:
    return repr(float(x))


def _write(path: str | os.PathLike, rows: Iterable[Sequence], header: Sequence[str], preamble: Sequence[str] = ()) -> None:
    buf = io.StringIO()
    for line in preamble:
        buf.write(f"# {line}\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for row in rows:
        w.writerow([fmt(v) if isinstance(v, (float, np.floating)) else v for v in row])
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write(buf.getvalue())


def _read(path: str | os.PathLike, header: Optional[Sequence[str]] = None, required: Sequence[str] = ()) -> tuple[list[str], list[dict[str, str]]]:
    """Return the ``# `` preamble lines and the rows as dicts."""
    p = str(path)
    try:
        with open(path, encoding="utf-8", newline="") as fh:
            lines = fh.read().splitlines()
    except OSError as exc:
        raise FormatError(p, exc.strerror or str(exc)) from exc
    preamble = []
    while lines and lines[0].startswith("#"):
        preamble.append(lines.pop(0)[1:].strip())
    if not lines:
        raise FormatError(p, "missing header row")
    reader = csv.DictReader(lines)
    fields = reader.fieldnames or []
    if header is not None and tuple(fields) != tuple(header):
        raise FormatError(p, f"header must be {','.join(header)}, got {','.join(fields)}")
    missing = [c for c in required if c not in fields]
    if missing:
        raise FormatError(p, f"missing column(s) {', '.join(missing)}")
    rows = []
    for i, row in enumerate(reader, start=2 + len(preamble)):
        if None in row or any(v is None for v in row.values()):
            raise FormatError(p, f"line {i}: wrong number of fields")
        rows.append(row)
    return preamble, rows


def _num(p: str, row: Mapping[str, str], key: str, line: int) -> float:
    try:
        v = float(row[key])
    except ValueError:
        raise FormatError(p, f"row {line}: {key}={row[key]!r} is not a number") from None
    if not np.isfinite(v):
        raise FormatError(p, f"row {line}: {key} is not finite")
    return v


def _int(p: str, row: Mapping[str, str], key: str, line: int) -> int:
    try:
        return int(row[key])
    except ValueError:
        raise FormatError(p, f"row {line}: {key}={row[key]!r} is not an integer") from None


# --------------------------------------------------------------------------
# day profiles


def write_profile(profile: DayProfile, path: str | os.PathLike) -> None:
    cols = [getattr(profile, c) for c in CHANNELS]
    _write(path, ([t, *(float(c[t]) for c in cols)] for t in range(len(profile))), PROFILE_HEADER)


def read_profile(path: str | os.PathLike, name: Optional[str] = None) -> DayProfile:
    p = str(path)
    _, rows = _read(path, PROFILE_HEADER)
    if not rows:
        raise FormatError(p, "no data rows")
    hours = [_int(p, r, "hour", i) for i, r in enumerate(rows)]
    if hours != list(range(len(rows))):
        raise FormatError(p, "hours must run 0, 1, 2, ... without gaps")
    data = {ch: [_num(p, r, col, i) for i, r in enumerate(rows)] for ch, col in zip(CHANNELS, PROFILE_HEADER[1:])}
    if name is None:
        name = os.path.splitext(os.path.basename(p))[0]
    try:
        return DayProfile(**data, name=name)
    except ValueError as exc:
        raise FormatError(p, str(exc)) from exc


# --------------------------------------------------------------------------
# episode traces


def trace_rows(trace: EpisodeTrace) -> list[list]:
    rows = []
    for o in trace.outcomes:
        ex = o.exogenous
        ns = o.next_state
        rows.append([
            o.hour,
            *(float(getattr(ex, c)) for c in CHANNELS),
            *(float(getattr(o.action, a)) for a in ACTION_FIELDS),
            o.p_chp, o.gas_chp, o.h_chp, o.h_gb, o.gas_gb, o.q_ec, o.p_ec_in, o.q_ac, o.h_ac_in, o.p_grid,
            o.ess_ch, o.ess_dis, o.tss_ch, o.tss_dis, o.css_ch, o.css_dis,
            o.grid_purchased, o.gas_purchased, o.imbalance_e, o.imbalance_h, o.imbalance_c,
            ns.ess.soc, ns.tss.soc, ns.css.soc,
            ns.ess.health.soh if ns.ess.health is not None else 1.0,
            o.energy_cost, o.carbon_cost, o.penalty_cost, o.reward,
        ])
    return [[r[0], *(float(v) for v in r[1:])] for r in rows]


def write_trace(trace: EpisodeTrace, path: str | os.PathLike) -> None:
    _write(path, trace_rows(trace), TRACE_COLUMNS)


def read_trace(path: str | os.PathLike) -> dict[str, np.ndarray]:
    """Columns of a trace file; ``hour`` is an integer array."""
    p = str(path)
    _, rows = _read(path, TRACE_COLUMNS)
    out = {"hour": np.array([_int(p, r, "hour", i) for i, r in enumerate(rows)], dtype=int)}
    for col in TRACE_COLUMNS[1:]:
        out[col] = np.array([_num(p, r, col, i) for i, r in enumerate(rows)], dtype=float)
    return out


def write_costs(trace: EpisodeTrace, path: str | os.PathLike, extra: Mapping[str, float] = ()) -> None:
    rows = [
        ("energy_cost", trace.energy_cost),
        ("carbon_cost", trace.carbon_cost),
        ("penalty_cost", trace.penalty_cost),
        ("operating_cost", trace.operating_cost),
        ("total_cost", trace.total_cost),
        ("electricity_kwh", float(trace.electricity_purchases.sum())),
        ("gas_kwh", float(trace.gas_purchases.sum())),
        *dict(extra).items(),
    ]
    _write(path, ((k, float(v)) for k, v in rows), ("quantity", "value"))


def read_costs(path: str | os.PathLike) -> dict[str, float]:
    p = str(path)
    _, rows = _read(path, ("quantity", "value"))
    return {r["quantity"]: _num(p, r, "value", i) for i, r in enumerate(rows)}


# --------------------------------------------------------------------------
# training curves


def write_curve(curve: Sequence[EpisodeRecord], path: str | os.PathLike) -> None:
    _write(
        path,
        ([r.episode, float(r.total_return), float(r.energy_cost), float(r.carbon_cost), float(r.penalty_cost)] for r in curve),
        CURVE_HEADER,
    )


def read_curve(path: str | os.PathLike) -> list[EpisodeRecord]:
    p = str(path)
    _, rows = _read(path, CURVE_HEADER)
    return [
        EpisodeRecord(_int(p, r, "episode", i), *(_num(p, r, k, i) for k in CURVE_HEADER[1:]))
        for i, r in enumerate(rows)
    ]


def write_gan_losses(d_losses: Sequence[float], g_losses: Sequence[float], path: str | os.PathLike) -> None:
    _write(path, ([i, float(d), float(g)] for i, (d, g) in enumerate(zip(d_losses, g_losses))), ("epoch", "d_loss", "g_loss"))


def read_gan_losses(path: str | os.PathLike) -> tuple[list[float], list[float]]:
    p = str(path)
    _, rows = _read(path, ("epoch", "d_loss", "g_loss"))
    return [_num(p, r, "d_loss", i) for i, r in enumerate(rows)], [_num(p, r, "g_loss", i) for i, r in enumerate(rows)]


# --------------------------------------------------------------------------
# paired forecast / actual series


def write_paired(series: Sequence[PairedSeries], path: str | os.PathLike, rated_kw: float) -> None:
    rows = []
    for s in series:
        for t in range(s.forecast.size):
            f, a = float(s.forecast[t]), float(s.actual[t])
            rows.append([s.day, t, s.kind, f * rated_kw, a * rated_kw, f, a])
    _write(path, rows, PAIRED_HEADER)


def read_paired(path: str | os.PathLike, rated_kw: float | Mapping[str, float]) -> list[PairedSeries]:
    """Group rows by (kind, day); kW values are normalized by the rated power.

    When the per-unit columns are present they are used as is.
    """
    p = str(path)
    _, rows = _read(path, required=PAIRED_HEADER[:5])
    if not rows:
        raise FormatError(p, "no data rows")
    has_pu = "forecast_pu" in rows[0] and "actual_pu" in rows[0]
    groups: dict[tuple[str, int], list[tuple[int, float, float]]] = {}
    for i, r in enumerate(rows):
        kind = r["kind"]
        if kind not in KINDS:
            raise FormatError(p, f"row {i}: kind must be one of {KINDS}")
        rated = rated_kw[kind] if isinstance(rated_kw, Mapping) else float(rated_kw)
        if has_pu:
            f, a = _num(p, r, "forecast_pu", i), _num(p, r, "actual_pu", i)
        else:
            f, a = _num(p, r, "forecast_kw", i) / rated, _num(p, r, "actual_kw", i) / rated
        groups.setdefault((kind, _int(p, r, "day", i)), []).append((_int(p, r, "hour", i), f, a))
    out = []
    for (kind, day), vals in groups.items():
        hours = [v[0] for v in vals]
        if hours != list(range(len(vals))):
            raise FormatError(p, f"{kind} day {day}: hours must run 0, 1, 2, ... without gaps")
        try:
            out.append(PairedSeries(np.array([v[1] for v in vals]), np.array([v[2] for v in vals]), kind, day))
        except ValueError as exc:
            raise FormatError(p, f"{kind} day {day}: {exc}") from exc
    return out


# --------------------------------------------------------------------------
# forecasts and actual curves (one kW value per hour)


def write_series(values: Sequence[float], path: str | os.PathLike, column: str = "power_kw") -> None:
    _write(path, ([t, float(v)] for t, v in enumerate(values)), ("hour", column))


def read_series(path: str | os.PathLike, column: str = "power_kw") -> np.ndarray:
    p = str(path)
    _, rows = _read(path, ("hour", column))
    if [_int(p, r, "hour", i) for i, r in enumerate(rows)] != list(range(len(rows))):
        raise FormatError(p, "hours must run 0, 1, 2, ... without gaps")
    if not rows:
        raise FormatError(p, "no data rows")
    return np.array([_num(p, r, column, i) for i, r in enumerate(rows)])


# --------------------------------------------------------------------------
# scenario sets


def write_scenarios(sset: ScenarioSet, path: str | os.PathLike) -> None:
    pre = [
        f"format: {SCENARIO_FORMAT}",
        f"kind: {sset.kind}",
        f"rated_kw: {fmt(sset.rated_kw)}",
        "forecast_pu: " + " ".join(fmt(v) for v in sset.forecast),
    ]
    if sset.actual is not None:
        pre.append("actual_pu: " + " ".join(fmt(v) for v in sset.actual))
    pre.append("metadata: " + json.dumps(sset.metadata, sort_keys=True, separators=(",", ":")))
    kw = sset.power_kw()
    rows = (
        [i, t, float(kw[i, t]), float(sset.scenarios[i, t])]
        for i in range(len(sset))
        for t in range(sset.scenarios.shape[1])
    )
    _write(path, rows, SCENARIO_HEADER, pre)


def _floats(p: str, text: str, key: str) -> np.ndarray:
    try:
        return np.array([float(v) for v in text.split()])
    except ValueError:
        raise FormatError(p, f"header field {key} holds a non-number") from None


def read_scenarios(path: str | os.PathLike) -> ScenarioSet:
    p = str(path)
    preamble, rows = _read(path, required=SCENARIO_HEADER[:3])
    head: dict[str, str] = {}
    for line in preamble:
        key, sep, value = line.partition(":")
        if sep:
            head[key.strip()] = value.strip()
    if head.get("format") != SCENARIO_FORMAT:
        raise FormatError(p, f"expected '# format: {SCENARIO_FORMAT}' header")
    for key in ("kind", "rated_kw", "forecast_pu"):
        if key not in head:
            raise FormatError(p, f"missing header field {key}")
    kind = head["kind"]
    if kind not in KINDS:
        raise FormatError(p, f"kind must be one of {KINDS}")
    try:
        rated = float(head["rated_kw"])
    except ValueError:
        raise FormatError(p, "rated_kw is not a number") from None
    if not rated > 0:
        raise FormatError(p, "rated_kw must be positive")
    forecast = _floats(p, head["forecast_pu"], "forecast_pu")
    actual = _floats(p, head["actual_pu"], "actual_pu") if "actual_pu" in head else None
    try:
        metadata = json.loads(head.get("metadata", "{}"))
    except json.JSONDecodeError:
        raise FormatError(p, "metadata is not valid JSON") from None
    T = forecast.size
    if not rows or len(rows) % T:
        raise FormatError(p, f"row count {len(rows)} is not a multiple of the {T}-hour length")
    n = len(rows) // T
    has_pu = "power_pu" in rows[0]
    values = np.empty((n, T))
    for i, r in enumerate(rows):
        sid, hour = _int(p, r, "scenario_id", i), _int(p, r, "hour", i)
        if (sid, hour) != divmod(i, T):
            raise FormatError(p, f"row {i}: expected scenario {i // T} hour {i % T}")
        values[sid, hour] = _num(p, r, "power_pu", i) if has_pu else _num(p, r, "power_kw", i) / rated
    try:
        return ScenarioSet(forecast, values, kind, rated, metadata, actual)
    except ValueError as exc:
        raise FormatError(p, str(exc)) from exc


def write_envelope(sset: ScenarioSet, path: str | os.PathLike) -> None:
    kw = sset.power_kw()
    f = sset.forecast * sset.rated_kw
    rows = (
        [t, float(f[t]), float(kw[:, t].min()), float(kw[:, t].max()), float(kw[:, t].mean())]
        for t in range(kw.shape[1])
    )
    _write(path, rows, ("hour", "forecast_kw", "min_kw", "max_kw", "mean_kw"))


# --------------------------------------------------------------------------
# evaluation reports and purchase bounds


@dataclass(frozen=True)
class IndexRow:
    method: str
    index1: float
    index2: float


def write_index_report(rows: Sequence[IndexRow], path: str | os.PathLike) -> None:
    _write(path, ([r.method, float(r.index1), float(r.index2)] for r in rows), ("method", "index1", "index2"))


def read_index_report(path: str | os.PathLike) -> list[IndexRow]:
    p = str(path)
    _, rows = _read(path, ("method", "index1", "index2"))
    return [IndexRow(r["method"], _num(p, r, "index1", i), _num(p, r, "index2", i)) for i, r in enumerate(rows)]


BOUNDS_HEADER = (
    "hour", "elec_min_kwh", "elec_max_kwh", "elec_forecast_kwh",
    "gas_min_kwh", "gas_max_kwh", "gas_forecast_kwh",
)


def write_bounds(bounds, forecast_trace: EpisodeTrace, path: str | os.PathLike) -> None:
    fe, fg = forecast_trace.electricity_purchases, forecast_trace.gas_purchases
    cols = (bounds.elec_min, bounds.elec_max, fe, bounds.gas_min, bounds.gas_max, fg)
    _write(path, ([t, *(float(c[t]) for c in cols)] for t in range(len(fe))), BOUNDS_HEADER)


def read_bounds(path: str | os.PathLike) -> dict[str, np.ndarray]:
    p = str(path)
    _, rows = _read(path, BOUNDS_HEADER)
    out = {"hour": np.array([_int(p, r, "hour", i) for i, r in enumerate(rows)], dtype=int)}
    for col in BOUNDS_HEADER[1:]:
        out[col] = np.array([_num(p, r, col, i) for i, r in enumerate(rows)])
    return out


# --------------------------------------------------------------------------
# profile edits


def read_edits(path: str | os.PathLike) -> list[tuple[int, str, float]]:
    """``hour,channel,value`` rows for :func:`memg.environment.perturb_profile`."""
    p = str(path)
    _, rows = _read(path, ("hour", "channel", "value"))
    out = []
    for i, r in enumerate(rows):
        if r["channel"] not in CHANNELS:
            raise FormatError(p, f"row {i}: unknown channel {r['channel']!r}")
        out.append((_int(p, r, "hour", i), r["channel"], _num(p, r, "value", i)))
    return out


def write_edits(edits: Sequence[tuple[int, str, float]], path: str | os.PathLike) -> None:
    _write(path, ([h, c, float(v)] for h, c, v in edits), ("hour", "channel", "value"))


def write_comparison(rows: Sequence[tuple[str, float, float]], path: str | os.PathLike) -> None:
    """``quantity,off_design,rated,delta`` rows."""
    _write(
        path,
        ([k, float(a), float(b), float(a) - float(b)] for k, a, b in rows),
        ("quantity", "off_design", "rated", "delta"),
    )


def read_comparison(path: str | os.PathLike) -> dict[str, tuple[float, float, float]]:
    p = str(path)
    _, rows = _read(path, ("quantity", "off_design", "rated", "delta"))
    return {
        r["quantity"]: tuple(_num(p, r, k, i) for k in ("off_design", "rated", "delta"))
        for i, r in enumerate(rows)
    }
