"""Conditional least-squares GAN for renewable generation scenarios.

The generator maps ``noise || forecast`` to a 24-point normalized power curve;
the discriminator scores ``curve || forecast``.  Both are dense networks from
:mod:`memg.neural`.  Scenario sets are judged by coverage (share of hours the
realized curve falls inside the scenario envelope) and envelope width.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field
from typing import Optional, Sequence, Union

import numpy as np

from .neural import AdamState, DenseNetwork, adam_step

KINDS = ("wind", "pv")
NOISE_KINDS = ("uniform", "normal")
SKIP_MODES = ("additive", "logit", "none")
SKIP_EPS = 1e-3


class GanTrainingError(RuntimeError):
    pass


@dataclass(frozen=True)
class GanConfig:
    noise_dim: int = 32
    hidden: tuple[int, ...] = (256, 256)
    lr: float = 2e-4
    beta1: float = 0.5
    beta2: float = 0.999
    batch_size: int = 64
    epochs: int = 2000
    leaky_slope: float = 0.2
    label_fake: float = 0.0
    label_real: float = 1.0
    label_target: float = 1.0
    batchnorm_generator: bool = False
    skip: str = "additive"
    noise: str = "normal"
    residual_discriminator: bool = True

    def __post_init__(self) -> None:
        object.__setattr__(self, "hidden", tuple(int(h) for h in self.hidden))
        if self.skip not in SKIP_MODES:
            raise ValueError(f"skip must be one of {SKIP_MODES}")
        if self.noise not in NOISE_KINDS:
            raise ValueError(f"noise must be one of {NOISE_KINDS}")
        if self.noise_dim < 1:
            raise ValueError("noise_dim must be >= 1")
        if self.label_real != self.label_target:
            raise ValueError("label_real and label_target must coincide")
        if self.batch_size < 2 and self.batchnorm_generator:
            raise ValueError("batch normalization needs batch_size >= 2")
        if self.epochs < 0:
            raise ValueError("epochs must be >= 0")
        if self.lr <= 0:
            raise ValueError("lr must be positive")


@dataclass(frozen=True, eq=False)
class PairedSeries:
    """One day of normalized forecast and realized power."""

    forecast: np.ndarray
    actual: np.ndarray
    kind: str = "wind"
    day: int = 0

    def __post_init__(self) -> None:
        f = np.asarray(self.forecast, dtype=float).reshape(-1)
        a = np.asarray(self.actual, dtype=float).reshape(-1)
        if f.shape != a.shape:
            raise ValueError("forecast and actual differ in length")
        if self.kind not in KINDS:
            raise ValueError(f"kind must be one of {KINDS}")
        for name, arr in (("forecast", f), ("actual", a)):
            if not np.all(np.isfinite(arr)) or arr.min() < 0 or arr.max() > 1:
                raise ValueError(f"{name} must be normalized to [0, 1]")
        object.__setattr__(self, "forecast", f)
        object.__setattr__(self, "actual", a)


@dataclass(eq=False)
class ScenarioSet:
    forecast: np.ndarray
    scenarios: np.ndarray  # (N, T), normalized
    kind: str = "wind"
    rated_kw: float = 500.0
    metadata: dict = field(default_factory=dict)
    actual: Optional[np.ndarray] = None

    def __post_init__(self) -> None:
        self.forecast = np.asarray(self.forecast, dtype=float).reshape(-1)
        self.scenarios = np.atleast_2d(np.asarray(self.scenarios, dtype=float))
        if self.scenarios.shape[0] < 1:
            raise ValueError("scenario set must hold at least one scenario")
        if self.scenarios.shape[1] != self.forecast.size:
            raise ValueError("scenario length differs from forecast length")
        if self.actual is not None:
            self.actual = np.asarray(self.actual, dtype=float).reshape(-1)
            if self.actual.size != self.forecast.size:
                raise ValueError("actual length differs from forecast length")

    def __len__(self) -> int:
        return self.scenarios.shape[0]

    def power_kw(self) -> np.ndarray:
        return self.scenarios * self.rated_kw


# --------------------------------------------------------------------------
# losses


def discriminator_loss(
    d_real: np.ndarray, d_fake: np.ndarray, label_real: float = 1.0, label_fake: float = 0.0
) -> float:
    d_real = np.asarray(d_real, dtype=float)
    d_fake = np.asarray(d_fake, dtype=float)
    return 0.5 * float(np.mean((d_real - label_real) ** 2)) + 0.5 * float(
        np.mean((d_fake - label_fake) ** 2)
    )


def generator_loss(d_fake: np.ndarray, label_target: float = 1.0) -> float:
    d_fake = np.asarray(d_fake, dtype=float)
    return 0.5 * float(np.mean((d_fake - label_target) ** 2))


# --------------------------------------------------------------------------
# training


def _logit(p: np.ndarray) -> np.ndarray:
    p = np.clip(p, SKIP_EPS, 1.0 - SKIP_EPS)
    return np.log(p) - np.log1p(-p)


def _sigmoid(x: np.ndarray) -> np.ndarray:
    return 0.5 * (1.0 + np.tanh(0.5 * x))


class Generator:
    """Maps ``noise || forecast`` to a curve.

    ``skip`` selects how the forecast is added back to the network output:
    ``"additive"`` gives ``c + net``, ``"logit"`` gives ``sigmoid(logit(c) + net)``
    and ``"none"`` gives ``sigmoid(net)``.
    """

    def __init__(
        self, net: DenseNetwork, length: int, skip: str = "additive", noise: str = "uniform"
    ):
        if net.out_dim != length or net.in_dim <= length:
            raise ValueError("generator network does not match the series length")
        if skip not in SKIP_MODES:
            raise ValueError(f"skip must be one of {SKIP_MODES}")
        if noise not in NOISE_KINDS:
            raise ValueError(f"noise must be one of {NOISE_KINDS}")
        self.net = net
        self.length = length
        self.skip = skip
        self.noise = noise
        self._out: Optional[np.ndarray] = None

    @property
    def noise_dim(self) -> int:
        return self.net.in_dim - self.length

    def forward(self, z: np.ndarray, c: np.ndarray, mode: str = "eval") -> np.ndarray:
        h = self.net.forward(np.hstack([z, c]), mode=mode)
        if self.skip == "additive":
            out = h + c
        else:
            out = _sigmoid(h + _logit(c) if self.skip == "logit" else h)
        self._out = out if mode == "train" else None
        return out

    def backward(self, grad_out: np.ndarray) -> list[np.ndarray]:
        if self._out is None:
            raise RuntimeError("backward() needs a train-mode forward() first")
        if self.skip != "additive":
            grad_out = grad_out * self._out * (1.0 - self._out)
        grads, _ = self.net.backward(grad_out)
        return grads

    def params(self) -> list[np.ndarray]:
        return self.net.params()

    def sample_noise(self, rng: np.random.Generator, n: int) -> np.ndarray:
        return sample_noise(rng, n, self.noise_dim, self.noise)


class Discriminator:
    """Scores ``x || c``, optionally with the residual ``x - c`` appended."""

    def __init__(self, net: DenseNetwork, length: int, residual: bool = True):
        if net.in_dim != (3 if residual else 2) * length or net.out_dim != 1:
            raise ValueError("discriminator network does not match the series length")
        self.net = net
        self.length = length
        self.residual = residual

    def _inputs(self, x: np.ndarray, c: np.ndarray) -> np.ndarray:
        return np.hstack([x, c, x - c] if self.residual else [x, c])

    def forward(self, x: np.ndarray, c: np.ndarray, mode: str = "eval") -> np.ndarray:
        return self.net.forward(self._inputs(x, c), mode=mode)[:, 0]

    def backward(self, grad_scores: np.ndarray) -> tuple[list[np.ndarray], np.ndarray]:
        """Parameter gradients and the gradient with respect to ``x``."""
        grads, dx = self.net.backward(np.asarray(grad_scores, dtype=float)[:, None])
        T = self.length
        gx = dx[:, :T] + dx[:, 2 * T :] if self.residual else dx[:, :T]
        return grads, gx

    def params(self) -> list[np.ndarray]:
        return self.net.params()


def sample_noise(rng: np.random.Generator, n: int, dim: int, kind: str = "uniform") -> np.ndarray:
    if kind == "uniform":
        return rng.uniform(-1.0, 1.0, (n, dim))
    if kind == "normal":
        return rng.standard_normal((n, dim))
    raise ValueError(f"unknown noise kind {kind!r}")


def build_generator(cfg: GanConfig, length: int, rng: np.random.Generator) -> Generator:
    net = DenseNetwork.build(
        [cfg.noise_dim + length, *cfg.hidden, length],
        rng,
        hidden="leaky_relu",
        output="identity",
        slope=cfg.leaky_slope,
        batchnorm_hidden=cfg.batchnorm_generator,
    )
    return Generator(net, length, cfg.skip, cfg.noise)


def build_discriminator(cfg: GanConfig, length: int, rng: np.random.Generator) -> Discriminator:
    width = (3 if cfg.residual_discriminator else 2) * length
    net = DenseNetwork.build(
        [width, *cfg.hidden, 1],
        rng,
        hidden="leaky_relu",
        output="identity",
        slope=cfg.leaky_slope,
    )
    return Discriminator(net, length, cfg.residual_discriminator)


@dataclass
class GanResult:
    generator: Generator
    discriminator: Discriminator
    config: GanConfig
    d_losses: list[float] = field(default_factory=list)
    g_losses: list[float] = field(default_factory=list)
    seed: int = 0
    kind: str = "wind"

    def metadata(self) -> dict:
        cfg = asdict(self.config)
        cfg["hidden"] = list(cfg["hidden"])
        return {
            "kind": "c-lsgan",
            "series_kind": self.kind,
            "seed": self.seed,
            "epochs": len(self.d_losses),
            "noise_dim": self.config.noise_dim,
            "length": self.generator.length,
            "skip": self.generator.skip,
            "noise": self.generator.noise,
            "gan": cfg,
        }


def gan_streams(seed: int) -> dict[str, np.random.Generator]:
    names = ("init", "batch", "noise")
    children = np.random.SeedSequence(seed).spawn(len(names))
    return {n: np.random.default_rng(c) for n, c in zip(names, children)}


def train_gan(dataset: Sequence[PairedSeries], config: GanConfig, seed: int) -> GanResult:
    """Alternate one discriminator and one generator Adam step per epoch."""
    if not dataset:
        raise ValueError("training set is empty")
    lengths = {s.forecast.size for s in dataset}
    if len(lengths) != 1:
        raise ValueError(f"all series must share one length, got {sorted(lengths)}")
    kinds = {s.kind for s in dataset}
    length = lengths.pop()
    cond = np.stack([s.forecast for s in dataset])
    real = np.stack([s.actual for s in dataset])

    rngs = gan_streams(seed)
    G = build_generator(config, length, rngs["init"])
    D = build_discriminator(config, length, rngs["init"])
    adam = dict(lr=config.lr, beta1=config.beta1, beta2=config.beta2)
    g_opt = AdamState.for_params(G.params(), **adam)
    d_opt = AdamState.for_params(D.params(), **adam)
    result = GanResult(G, D, config, seed=seed, kind=kinds.pop() if len(kinds) == 1 else "wind")
    m = config.batch_size
    a, b, c = config.label_fake, config.label_real, config.label_target

    for epoch in range(config.epochs):
        # discriminator
        z = G.sample_noise(rngs["noise"], m)
        idx = rngs["batch"].integers(0, len(dataset), m)
        x, cx = real[idx], cond[idx]
        fake = G.forward(z, cx, mode="train")
        scores = D.forward(np.vstack([x, fake]), np.vstack([cx, cx]), mode="train")
        d_real, d_fake = scores[:m], scores[m:]
        d_loss = discriminator_loss(d_real, d_fake, b, a)
        upstream = np.concatenate([(d_real - b) / m, (d_fake - a) / m])
        d_grads, _ = D.backward(upstream)
        adam_step(D.params(), d_grads, d_opt)

        # generator
        z = G.sample_noise(rngs["noise"], m)
        cz = cond[rngs["batch"].integers(0, len(dataset), m)]
        fake = G.forward(z, cz, mode="train")
        d_fake = D.forward(fake, cz, mode="train")
        g_loss = generator_loss(d_fake, c)
        _, dx = D.backward((d_fake - c) / m)
        g_grads = G.backward(dx)
        adam_step(G.params(), g_grads, g_opt)

        if not (math.isfinite(d_loss) and math.isfinite(g_loss)):
            raise GanTrainingError(
                f"non-finite loss at epoch {epoch}: d={d_loss!r}, g={g_loss!r}"
            )
        result.d_losses.append(d_loss)
        result.g_losses.append(g_loss)
    return result


def generate(
    generator: Generator,
    forecast: Sequence[float],
    n: int,
    seed: int,
    kind: str = "wind",
    rated_kw: float = 500.0,
    metadata: Optional[dict] = None,
) -> ScenarioSet:
    """``n`` scenarios for one normalized forecast, clipped to [0, 1]."""
    if n < 1:
        raise ValueError("scenario count must be >= 1")
    forecast = np.asarray(forecast, dtype=float).reshape(-1)
    length = generator.length
    if forecast.size != length:
        raise ValueError(
            f"generator expects {length}-point forecasts, got {forecast.size}"
        )
    rng = np.random.default_rng(seed)
    z = generator.sample_noise(rng, n)
    out = generator.forward(z, np.broadcast_to(forecast, (n, length)), mode="eval")
    meta = {"seed": seed, "method": "c-lsgan"}
    meta.update(metadata or {})
    return ScenarioSet(forecast, np.clip(out, 0.0, 1.0), kind, rated_kw, meta)


# --------------------------------------------------------------------------
# Monte-Carlo baseline


def estimate_error_std(dataset: Sequence[PairedSeries]) -> np.ndarray:
    """Per-hour standard deviation of (actual - forecast) over a training set."""
    if not dataset:
        raise ValueError("training set is empty")
    err = np.stack([s.actual - s.forecast for s in dataset])
    return err.std(axis=0, ddof=1) if len(dataset) > 1 else np.zeros(err.shape[1])


def monte_carlo_baseline(
    forecast: Sequence[float],
    error_std: Sequence[float],
    n: int,
    seed: int,
    kind: str = "wind",
    rated_kw: float = 500.0,
) -> ScenarioSet:
    """Independent Gaussian forecast errors per hour, clipped to [0, 1]."""
    if n < 1:
        raise ValueError("scenario count must be >= 1")
    forecast = np.asarray(forecast, dtype=float).reshape(-1)
    error_std = np.asarray(error_std, dtype=float).reshape(-1)
    if error_std.shape != forecast.shape:
        raise ValueError("error_std must match the forecast length")
    if np.any(error_std < 0):
        raise ValueError("error_std must be non-negative")
    rng = np.random.default_rng(seed)
    draws = forecast + error_std * rng.standard_normal((n, forecast.size))
    return ScenarioSet(
        forecast, np.clip(draws, 0.0, 1.0), kind, rated_kw, {"seed": seed, "method": "monte-carlo"}
    )


# --------------------------------------------------------------------------
# evaluation indices

ScenarioLike = Union[ScenarioSet, np.ndarray, Sequence[Sequence[float]]]


def _matrix(scenarios: ScenarioLike) -> np.ndarray:
    m = scenarios.scenarios if isinstance(scenarios, ScenarioSet) else scenarios
    m = np.atleast_2d(np.asarray(m, dtype=float))
    if m.shape[0] < 1:
        raise ValueError("scenario set is empty")
    return m


def coverage_index(scenarios: ScenarioLike, actual: Sequence[float]) -> float:
    """Share of hours whose realized value lies inside the scenario envelope."""
    m = _matrix(scenarios)
    actual = np.asarray(actual, dtype=float).reshape(-1)
    if actual.size != m.shape[1]:
        raise ValueError("actual length differs from scenario length")
    inside = (actual >= m.min(axis=0)) & (actual <= m.max(axis=0))
    return float(inside.mean())


def envelope_index(scenarios: ScenarioLike) -> float:
    """Mean envelope width over hours.

    ``fsum`` makes the result independent of summation order.
    """
    m = _matrix(scenarios)
    widths = m.max(axis=0) - m.min(axis=0)
    return math.fsum(widths.tolist()) / widths.size


# --------------------------------------------------------------------------
# synthetic data


def synthetic_family(
    n_days: int, rng: np.random.Generator, kind: str = "wind", hours: int = 24
) -> list[PairedSeries]:
    """Sinusoidal forecasts with heteroscedastic, hour-correlated errors.

    The error spread grows quadratically with the forecast level, so a model
    that conditions on the forecast can beat one that pools errors per hour.
    """
    h = np.arange(hours)
    out = []
    for day in range(n_days):
        level = rng.uniform(0.05, 0.8)
        amp = rng.uniform(0.05, 0.2)
        phase = rng.uniform(0.0, 2.0 * np.pi)
        forecast = np.clip(level + amp * np.sin(2.0 * np.pi * h / hours + phase), 0.02, 0.98)
        e = np.empty(hours)
        e[0] = rng.standard_normal()
        for t in range(1, hours):
            e[t] = 0.6 * e[t - 1] + 0.8 * rng.standard_normal()
        spread = 0.01 + 0.3 * forecast**2
        actual = np.clip(forecast + spread * e, 0.0, 1.0)
        out.append(PairedSeries(forecast, actual, kind, day))
    return out


def evaluate_method(
    sets: Sequence[ScenarioSet], actuals: Sequence[Sequence[float]]
) -> tuple[float, float]:
    """Mean (coverage, envelope) over several days."""
    if len(sets) != len(actuals) or not sets:
        raise ValueError("need one actual curve per scenario set")
    cov = [coverage_index(s, a) for s, a in zip(sets, actuals)]
    env = [envelope_index(s) for s in sets]
    return float(np.mean(cov)), float(np.mean(env))
