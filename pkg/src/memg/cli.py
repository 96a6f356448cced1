"""Command-line entry point: ``memg <command> [--config F] [--seed N] --out DIR``.

Every command writes its CSV results, SVG figures and a ``manifest.json``
into the output directory.  ``memg replay manifest.json --out DIR`` re-runs
the recorded command and checks that every output is byte-identical.

Exit status: 0 on success, 2 on invalid input or configuration, 1 on any
other failure.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import os
import sys
from pathlib import Path
from typing import Callable, Optional, Sequence

import numpy as np

from . import __version__, fixtures
from .config import ConfigError, SystemConfig, build_config, derive_seed, load_config
from .environment import (
    ActorPolicy,
    DayProfile,
    GreedyPolicy,
    MicrogridEnv,
    emergency_edits,
    perturb_profile,
    purchase_bounds,
    replay_actions,
    run_episode,
)
from .formats import (
    IndexRow,
    read_edits,
    read_paired,
    read_profile,
    read_scenarios,
    read_series,
    write_bounds,
    write_comparison,
    write_costs,
    write_curve,
    write_edits,
    write_envelope,
    write_gan_losses,
    write_index_report,
    write_paired,
    write_profile,
    write_scenarios,
    write_trace,
)
from .neural import load_checkpoint, save_checkpoint

log = logging.getLogger("memg")

MANIFEST_FORMAT = "memg-manifest 1"
MANIFEST_NAME = "manifest.json"
FIXTURES = (*fixtures.SEASONS, "zero-demand", "held-out")


class UsageError(ValueError):
    """Bad command-line input (exit status 2)."""


# --------------------------------------------------------------------------
# shared helpers


def _fixture(name: str) -> DayProfile:
    if name == "zero-demand":
        return fixtures.zero_demand_day()
    if name == "held-out":
        return fixtures.held_out_day()
    return fixtures.seasonal_day(name)


def _profile(opts: dict) -> DayProfile:
    if opts.get("profile"):
        return read_profile(opts["profile"])
    return _fixture(opts.get("fixture") or "spring")


def _horizon(opts: dict, cfg: SystemConfig, profile: DayProfile) -> int:
    h = opts.get("horizon") or min(cfg.horizon, len(profile))
    if not 1 <= h <= len(profile):
        raise UsageError(f"horizon {h} does not fit a {len(profile)}-hour profile")
    return h


def _policy(opts: dict, cfg: SystemConfig, params=None):
    params = params or cfg.microgrid
    if not opts.get("checkpoint"):
        return GreedyPolicy(params), "greedy"
    nets, meta = load_checkpoint(opts["checkpoint"])
    if "actor" not in nets:
        raise UsageError(f"{opts['checkpoint']}: checkpoint holds no actor network")
    return ActorPolicy(nets["actor"], params), "td3"


def _generator_from_checkpoint(path: str):
    from .scengen import Generator

    nets, meta = load_checkpoint(path)
    if "generator" not in nets or meta.get("kind") != "c-lsgan":
        raise UsageError(f"{path}: not a generator checkpoint")
    return Generator(nets["generator"], int(meta["length"]), meta["skip"], meta["noise"]), meta


# --------------------------------------------------------------------------
# commands; each returns the names of the files it wrote into ``out``


def cmd_train(cfg: SystemConfig, opts: dict, out: Path) -> list[str]:
    from .plotting import curve_figure
    from .td3 import train

    if opts.get("profiles"):
        files = sorted(Path(opts["profiles"]).glob("*.csv"))
        if not files:
            raise UsageError(f"{opts['profiles']}: no profile CSV files")
        days = [read_profile(f) for f in files]
    else:
        rng = np.random.default_rng(derive_seed(cfg.seed, "profiles"))
        days = fixtures.training_days(cfg.td3_train_days, rng)
    horizon = opts.get("horizon") or cfg.horizon
    if any(len(d) < horizon for d in days):
        raise UsageError(f"every training profile needs at least {horizon} hours")
    episodes = cfg.td3_episodes if opts.get("episodes") is None else opts["episodes"]

    def factory(rng: np.random.Generator) -> MicrogridEnv:
        return MicrogridEnv(cfg.microgrid, days[int(rng.integers(len(days)))], horizon, cfg.initial)

    result = train(factory, cfg.td3, episodes, derive_seed(cfg.seed, "td3"))
    meta = result.metadata() | {"horizon": horizon, "root_seed": cfg.seed}
    save_checkpoint(result.agent.networks(), meta, out / "checkpoint.json")
    write_curve(result.curve, out / "curve.csv")
    curve_figure(result.curve, out / "curve.svg")
    if result.curve:
        last = result.curve[-min(50, len(result.curve)):]
        print(f"episodes {len(result.curve)}, mean return of last {len(last)}: "
              f"{np.mean([r.total_return for r in last]):.2f}")
    return ["checkpoint.json", "curve.csv", "curve.svg"]


def cmd_dispatch(cfg: SystemConfig, opts: dict, out: Path) -> list[str]:
    from .plotting import dispatch_figure

    profile = _profile(opts)
    policy, kind = _policy(opts, cfg)
    trace = run_episode(policy, profile, cfg.microgrid, cfg.initial, _horizon(opts, cfg, profile))
    write_trace(trace, out / "trace.csv")
    write_costs(trace, out / "costs.csv")
    dispatch_figure(trace, out / "dispatch.svg", f"{profile.name} ({kind} policy)")
    print(f"total cost {trace.total_cost:.2f}")
    return ["trace.csv", "costs.csv", "dispatch.svg"]


def cmd_compare_models(cfg: SystemConfig, opts: dict, out: Path) -> list[str]:
    """Dispatch under the off-design model, then replay the same schedule rated."""
    from .plotting import comparison_figure

    profile = _profile(opts)
    policy, _ = _policy(opts, cfg)
    horizon = _horizon(opts, cfg, profile)
    off = run_episode(policy, profile, cfg.microgrid, cfg.initial, horizon)
    rated = replay_actions(off.actions(), profile, cfg.microgrid.rated_model(), cfg.initial)
    write_comparison(
        [
            ("energy_cost", off.energy_cost, rated.energy_cost),
            ("carbon_cost", off.carbon_cost, rated.carbon_cost),
            ("operating_cost", off.operating_cost, rated.operating_cost),
            ("penalty_cost", off.penalty_cost, rated.penalty_cost),
            ("total_cost", off.total_cost, rated.total_cost),
            ("gas_kwh", off.gas_purchases.sum(), rated.gas_purchases.sum()),
        ],
        out / "comparison.csv",
    )
    write_trace(off, out / "trace_off_design.csv")
    write_trace(rated, out / "trace_rated.csv")
    comparison_figure(off, rated, out / "comparison.svg")
    print(f"operating cost off-design {off.operating_cost:.2f}, rated {rated.operating_cost:.2f}, "
          f"delta {off.operating_cost - rated.operating_cost:.2f}")
    return ["comparison.csv", "trace_off_design.csv", "trace_rated.csv", "comparison.svg"]


def cmd_train_scen(cfg: SystemConfig, opts: dict, out: Path) -> list[str]:
    from .plotting import gan_loss_figure
    from .scengen import synthetic_family, train_gan

    pf = cfg.portfolio
    rated = {"wind": pf.wt_rated, "pv": pf.pv_rated}
    kind = opts.get("kind") or "wind"
    written = []
    if opts.get("data"):
        data = [s for s in read_paired(opts["data"], rated) if s.kind == kind]
        if not data:
            raise UsageError(f"{opts['data']}: no {kind} series")
    else:
        n = opts.get("synthetic_days") or 200
        data = synthetic_family(n, np.random.default_rng(derive_seed(cfg.seed, "synthetic")), kind)
        write_paired(data, out / "paired.csv", rated[kind])
        written.append("paired.csv")
    gan = cfg.gan if opts.get("epochs") is None else _replace_epochs(cfg.gan, opts["epochs"])
    result = train_gan(data, gan, derive_seed(cfg.seed, "gan"))
    meta = result.metadata() | {"rated_kw": rated[kind], "root_seed": cfg.seed}
    save_checkpoint(
        {"generator": result.generator.net, "discriminator": result.discriminator.net},
        meta,
        out / "generator.json",
    )
    write_gan_losses(result.d_losses, result.g_losses, out / "losses.csv")
    gan_loss_figure(result.d_losses, result.g_losses, out / "losses.svg")
    return [*written, "generator.json", "losses.csv", "losses.svg"]


def _replace_epochs(gan, epochs: int):
    from dataclasses import replace

    return replace(gan, epochs=epochs)


def cmd_generate(cfg: SystemConfig, opts: dict, out: Path) -> list[str]:
    from .plotting import envelope_figure
    from .scengen import generate

    generator, meta = _generator_from_checkpoint(opts["generator"])
    rated = float(meta["rated_kw"])
    forecast = read_series(opts["forecast"]) / rated
    if forecast.min() < 0 or forecast.max() > 1:
        raise UsageError(f"{opts['forecast']}: forecast outside [0, {rated}] kW")
    n = opts.get("n") or 1000
    sset = generate(generator, forecast, n, derive_seed(cfg.seed, "generate"),
                    kind=meta["series_kind"], rated_kw=rated,
                    metadata={"method": "c-lsgan", "checkpoint_seed": meta["seed"]})
    if opts.get("actual"):
        sset.actual = read_series(opts["actual"]) / rated
        if sset.actual.size != forecast.size:
            raise UsageError("actual and forecast lengths differ")
    write_scenarios(sset, out / "scenarios.csv")
    write_envelope(sset, out / "envelope.csv")
    envelope_figure(sset, out / "envelope.svg")
    return ["scenarios.csv", "envelope.csv", "envelope.svg"]


def cmd_eval_scen(cfg: SystemConfig, opts: dict, out: Path) -> list[str]:
    """Coverage and envelope width per method, averaged over scenario files."""
    from .plotting import index_figure
    from .scengen import coverage_index, envelope_index, estimate_error_std, monte_carlo_baseline

    sets = [(p, read_scenarios(p)) for p in opts["scenarios"]]
    common = read_series(opts["actual"]) if opts.get("actual") else None
    per_method: dict[str, list[tuple[float, float]]] = {}
    evaluated = []
    for path, s in sets:
        actual = common / s.rated_kw if common is not None else s.actual
        if actual is None:
            raise UsageError(f"{path}: no actual curve (pass --actual)")
        method = s.metadata.get("method") or Path(path).stem
        per_method.setdefault(method, []).append((coverage_index(s, actual), envelope_index(s)))
        evaluated.append((s, actual))
    if opts.get("train_data"):
        pf = cfg.portfolio
        data = read_paired(opts["train_data"], {"wind": pf.wt_rated, "pv": pf.pv_rated})
        first = evaluated[0][0]
        data = [d for d in data if d.kind == first.kind]
        if not data:
            raise UsageError(f"{opts['train_data']}: no {first.kind} series")
        std = estimate_error_std(data)
        seed = derive_seed(cfg.seed, "monte-carlo")
        rows = []
        for i, (s, actual) in enumerate(evaluated):
            if std.size != s.forecast.size:
                raise UsageError("training series and scenarios differ in length")
            mc = monte_carlo_baseline(s.forecast, std, len(s), seed + i, s.kind, s.rated_kw)
            rows.append((coverage_index(mc, actual), envelope_index(mc)))
        per_method["monte-carlo"] = rows
    report = [
        IndexRow(m, float(np.mean([r[0] for r in v])), float(np.mean([r[1] for r in v])))
        for m, v in per_method.items()
    ]
    write_index_report(report, out / "indices.csv")
    index_figure(report, out / "indices.svg")
    for r in report:
        print(f"{r.method}: index1 {r.index1:.4f}, index2 {r.index2:.4f}")
    return ["indices.csv", "indices.svg"]


def cmd_bounds(cfg: SystemConfig, opts: dict, out: Path) -> list[str]:
    from .plotting import bounds_figure

    profile = _profile(opts)
    policy, _ = _policy(opts, cfg)
    wind = read_scenarios(opts["wind"]) if opts.get("wind") else None
    pv = read_scenarios(opts["pv"]) if opts.get("pv") else None
    if wind is None and pv is None:
        raise UsageError("bounds needs --wind and/or --pv scenario files")
    # the forecast day uses the scenario files' own forecasts
    for channel, sset in (("wt", wind), ("pv", pv)):
        if sset is not None:
            if sset.forecast.size != len(profile):
                raise UsageError(f"{channel} scenarios have {sset.forecast.size} hours, "
                                 f"the profile has {len(profile)}")
            profile = profile.with_channel(channel, sset.forecast * sset.rated_kw)
    horizon = _horizon(opts, cfg, profile)
    bounds = purchase_bounds(policy, cfg.microgrid, profile, wind, pv, cfg.initial, horizon,
                             workers=opts.get("workers") or 1)
    forecast = run_episode(policy, profile, cfg.microgrid, cfg.initial, horizon)
    write_bounds(bounds, forecast, out / "bounds.csv")
    write_trace(forecast, out / "forecast_trace.csv")
    bounds_figure(bounds, forecast, out / "bounds.svg")
    return ["bounds.csv", "forecast_trace.csv", "bounds.svg"]


def cmd_perturb(cfg: SystemConfig, opts: dict, out: Path) -> list[str]:
    from .plotting import dispatch_figure

    profile = _profile(opts)
    if opts.get("edits"):
        edits = read_edits(opts["edits"])
    else:
        edits = emergency_edits(cfg.portfolio)
    perturbed = perturb_profile(profile, edits)
    policy, kind = _policy(opts, cfg)
    trace = run_episode(policy, perturbed, cfg.microgrid, cfg.initial, _horizon(opts, cfg, perturbed))
    write_edits(edits, out / "edits.csv")
    write_profile(perturbed, out / "profile.csv")
    write_trace(trace, out / "trace.csv")
    write_costs(trace, out / "costs.csv")
    dispatch_figure(trace, out / "dispatch.svg", f"{profile.name} with {len(edits)} edits ({kind} policy)")
    print(f"total cost {trace.total_cost:.2f}")
    return ["edits.csv", "profile.csv", "trace.csv", "costs.csv", "dispatch.svg"]


def cmd_gradcheck(cfg: SystemConfig, opts: dict, out: Path) -> list[str]:
    from .formats import _write
    from .gradcheck import run_suite

    results = run_suite(derive_seed(cfg.seed, "gradcheck"), opts.get("instances") or 50)
    _write(out / "gradcheck.csv", ([r.name, r.max_rel_error, r.entries] for r in results),
           ("check", "max_rel_error", "entries"))
    worst = max(results, key=lambda r: r.max_rel_error)
    print(f"max relative error {worst.max_rel_error:.3e} ({worst.name})")
    tol = opts.get("tol") or 1e-4
    if worst.max_rel_error >= tol:
        raise RuntimeError(f"gradient check failed: {worst.max_rel_error:.3e} >= {tol:g}")
    return ["gradcheck.csv"]


COMMANDS: dict[str, Callable[[SystemConfig, dict, Path], list[str]]] = {
    "train": cmd_train,
    "dispatch": cmd_dispatch,
    "compare-models": cmd_compare_models,
    "train-scen": cmd_train_scen,
    "generate": cmd_generate,
    "eval-scen": cmd_eval_scen,
    "bounds": cmd_bounds,
    "perturb": cmd_perturb,
    "gradcheck": cmd_gradcheck,
}

# option names that point at input files (or lists of them)
INPUT_OPTIONS = ("profile", "profiles", "checkpoint", "data", "generator", "forecast", "actual",
                 "scenarios", "train_data", "wind", "pv", "edits")


# --------------------------------------------------------------------------
# manifests


def sha256_file(path: str | os.PathLike) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 16), b""):
            h.update(chunk)
    return h.hexdigest()


def _input_files(opts: dict) -> list[str]:
    files = []
    for key in INPUT_OPTIONS:
        v = opts.get(key)
        if not v:
            continue
        for p in v if isinstance(v, list) else [v]:
            if os.path.isdir(p):
                files.extend(str(f) for f in sorted(Path(p).glob("*.csv")))
            else:
                files.append(p)
    return files


def _check_inputs(opts: dict) -> None:
    for key in INPUT_OPTIONS:
        v = opts.get(key)
        for p in (v if isinstance(v, list) else [v]) if v else []:
            if not os.path.exists(p):
                raise UsageError(f"--{key.replace('_', '-')}: {p} does not exist")


def build_manifest(command: str, cfg: SystemConfig, opts: dict, out: Path, outputs: Sequence[str]) -> dict:
    return {
        "format": MANIFEST_FORMAT,
        "tool": f"memg {__version__}",
        "command": command,
        "seed": cfg.seed,
        "options": opts,
        "config": cfg.resolved,
        "inputs": {p: sha256_file(p) for p in _input_files(opts)},
        "outputs": {name: sha256_file(out / name) for name in outputs},
    }


def write_manifest(manifest: dict, path: Path) -> None:
    path.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def execute(command: str, cfg: SystemConfig, opts: dict, out: str | os.PathLike) -> dict:
    """Run one command into ``out`` and write its manifest; returns the manifest."""
    if command not in COMMANDS:
        raise UsageError(f"unknown command {command!r}")
    _check_inputs(opts)
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    outputs = COMMANDS[command](cfg, opts, out)
    manifest = build_manifest(command, cfg, opts, out, outputs)
    write_manifest(manifest, out / MANIFEST_NAME)
    return manifest


def replay(manifest_path: str | os.PathLike, out: str | os.PathLike) -> list[str]:
    """Re-run a manifest; returns the names of outputs whose bytes differ."""
    try:
        manifest = json.loads(Path(manifest_path).read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as exc:
        raise UsageError(f"{manifest_path}: cannot read manifest ({exc})") from exc
    if manifest.get("format") != MANIFEST_FORMAT:
        raise UsageError(f"{manifest_path}: not a {MANIFEST_FORMAT} file")
    opts = manifest["options"]
    _check_inputs(opts)
    for path, digest in manifest["inputs"].items():
        if sha256_file(path) != digest:
            raise UsageError(f"input {path} changed since the manifest was written")
    cfg = build_config(manifest["config"])
    new = execute(manifest["command"], cfg, opts, out)
    return sorted(
        name for name, digest in manifest["outputs"].items() if new["outputs"].get(name) != digest
    )


# --------------------------------------------------------------------------
# argument parsing


def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="YAML configuration file (defaults apply to missing keys)")
    p.add_argument("--seed", type=int, help="override the root seed from the configuration")
    p.add_argument("--out", required=True, help="output directory")


def _profile_args(p: argparse.ArgumentParser, checkpoint: bool = True) -> None:
    g = p.add_mutually_exclusive_group()
    g.add_argument("--profile", help="day profile CSV")
    g.add_argument("--fixture", choices=FIXTURES, help="built-in synthetic day (default: spring)")
    p.add_argument("--horizon", type=int, help="hours to dispatch (default: config horizon)")
    if checkpoint:
        p.add_argument("--checkpoint", help="TD3 checkpoint; without it the greedy rule-based policy runs")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="memg", description=__doc__.split("\n")[0])
    parser.add_argument("--version", action="version", version=f"memg {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train a TD3 dispatch policy")
    _common(p)
    p.add_argument("--profiles", help="directory of day profile CSVs (default: synthetic days)")
    p.add_argument("--episodes", type=int)
    p.add_argument("--horizon", type=int)

    for name, text in (("dispatch", "dispatch one day and chart the energy balance"),
                       ("compare-models", "off-design versus rated device models")):
        p = sub.add_parser(name, help=text)
        _common(p)
        _profile_args(p)

    p = sub.add_parser("train-scen", help="train the conditional LSGAN scenario generator")
    _common(p)
    p.add_argument("--data", help="paired forecast/actual CSV (default: synthetic series)")
    p.add_argument("--kind", choices=("wind", "pv"), default="wind")
    p.add_argument("--synthetic-days", type=int)
    p.add_argument("--epochs", type=int)

    p = sub.add_parser("generate", help="generate scenarios for one forecast")
    _common(p)
    p.add_argument("--generator", required=True, help="generator checkpoint from train-scen")
    p.add_argument("--forecast", required=True, help="hour,power_kw CSV")
    p.add_argument("--actual", help="hour,power_kw CSV stored with the scenarios")
    p.add_argument("-n", type=int, default=1000)

    p = sub.add_parser("eval-scen", help="coverage and envelope indices")
    _common(p)
    p.add_argument("--scenarios", nargs="+", required=True)
    p.add_argument("--actual", help="hour,power_kw CSV (default: the actual stored in each file)")
    p.add_argument("--train-data", help="paired CSV for the Monte-Carlo baseline's error spread")

    p = sub.add_parser("bounds", help="purchase intervals over renewable scenarios")
    _common(p)
    _profile_args(p)
    p.add_argument("--wind", help="wind scenario CSV")
    p.add_argument("--pv", help="PV scenario CSV")
    p.add_argument("--workers", type=int, default=1)

    p = sub.add_parser("perturb", help="dispatch a day with edited renewables or loads")
    _common(p)
    _profile_args(p)
    p.add_argument("--edits", help="hour,channel,value CSV (default: the emergency edits)")

    p = sub.add_parser("gradcheck", help="finite-difference check of every backward pass")
    _common(p)
    p.add_argument("--instances", type=int, default=50)
    p.add_argument("--tol", type=float, default=1e-4)

    p = sub.add_parser("replay", help="re-run a manifest and compare outputs byte for byte")
    p.add_argument("manifest")
    p.add_argument("--out", required=True)
    return parser


_NOT_OPTIONS = {"command", "config", "seed", "out", "verbose", "manifest"}


def _options(args: argparse.Namespace) -> dict:
    opts = {}
    for k, v in sorted(vars(args).items()):
        if k in _NOT_OPTIONS or v is None:
            continue
        if k in INPUT_OPTIONS:
            v = [os.path.abspath(x) for x in v] if isinstance(v, list) else os.path.abspath(v)
        opts[k] = v
    return opts


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.command == "replay":
            diff = replay(args.manifest, args.out)
            if diff:
                print("outputs differ: " + ", ".join(diff), file=sys.stderr)
                return 1
            print("all outputs reproduced byte for byte")
            return 0
        if args.config and not os.path.exists(args.config):
            raise UsageError(f"--config: {args.config} does not exist")
        cfg = load_config(args.config)
        if args.seed is not None:
            cfg = cfg.with_seed(args.seed)
        execute(args.command, cfg, _options(args), args.out)
        return 0
    except (ConfigError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # noqa: BLE001 - top-level reporting
        log.debug("failure", exc_info=True)
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
