"""Central finite-difference checks for the hand-written backward passes.

The error of one tensor is ``|g_analytic - g_numeric| / max(|g_analytic| +
|g_numeric|, FLOOR * |g_all|)`` with Euclidean norms over the probed entries
and ``g_all`` the analytic gradient of every probed tensor in the check.  The
floor matters for tensors whose exact gradient is zero (a bias feeding a
batch-norm layer), where the numeric estimate is pure round-off.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .neural import ACTIVATIONS, DenseNetwork
from .scengen import (
    GanConfig,
    build_discriminator,
    build_generator,
    discriminator_loss,
    generator_loss,
)
from .td3 import actor_loss_and_grads, critic_loss_and_grads

EPS = 1e-6
FLOOR = 1e-4


@dataclass(frozen=True)
class CheckResult:
    name: str
    max_rel_error: float
    entries: int


def _rel(a: np.ndarray, n: np.ndarray, scale: float) -> float:
    num = float(np.linalg.norm(a - n))
    den = max(float(np.linalg.norm(a) + np.linalg.norm(n)), FLOOR * scale, 1e-300)
    return num / den


def _probe(
    loss: Callable[[], float],
    tensors: Sequence[np.ndarray],
    grads: Sequence[np.ndarray],
    rng: np.random.Generator,
    per_tensor: int,
) -> tuple[float, int]:
    picks = [rng.choice(t.size, size=min(per_tensor, t.size), replace=False) for t in tensors]
    scale = float(np.sqrt(sum(np.sum(g.reshape(-1)[i] ** 2) for g, i in zip(grads, picks))))
    worst, count = 0.0, 0
    for t, g, idx in zip(tensors, grads, picks):
        flat, gflat = t.reshape(-1), g.reshape(-1)
        num = np.empty(idx.size)
        for k, i in enumerate(idx):
            old = flat[i]
            flat[i] = old + EPS
            up = loss()
            flat[i] = old - EPS
            down = loss()
            flat[i] = old
            num[k] = (up - down) / (2.0 * EPS)
        worst = max(worst, _rel(gflat[idx], num, scale))
        count += idx.size
    return worst, count


def random_network(rng: np.random.Generator) -> tuple[DenseNetwork, str]:
    depth = int(rng.integers(1, 4))
    sizes = [int(rng.integers(2, 7)) for _ in range(depth + 1)]
    hidden = str(rng.choice(ACTIVATIONS))
    output = str(rng.choice(ACTIVATIONS))
    bn = bool(rng.integers(0, 2)) and depth > 1
    net = DenseNetwork.build(sizes, rng, hidden=hidden, output=output, slope=0.2, batchnorm_hidden=bn)
    if bn:
        for layer in net.layers:
            if layer.batchnorm is not None:
                layer.batchnorm.gamma[:] = rng.uniform(0.5, 1.5, layer.batchnorm.gamma.shape)
                layer.batchnorm.beta[:] = rng.uniform(-0.5, 0.5, layer.batchnorm.beta.shape)
    return net, f"{'-'.join(map(str, sizes))} {hidden}/{output}{' bn' if bn else ''}"


def check_network(rng: np.random.Generator, per_tensor: int = 12) -> CheckResult:
    """Random layer stack, loss ``sum(w * net(x))``; checks parameters and input."""
    net, label = random_network(rng)
    batch = int(rng.integers(3, 7))
    x = rng.normal(size=(batch, net.in_dim))
    w = rng.normal(size=(batch, net.out_dim))

    def loss() -> float:
        return float(np.sum(w * net.forward(x, mode="train")))

    loss()
    grads, dx = net.backward(w)
    worst, n = _probe(loss, [*net.params(), x], [*grads, dx], rng, per_tensor)
    return CheckResult(f"network {label}", worst, n)


def _td3_nets(rng: np.random.Generator) -> tuple[DenseNetwork, DenseNetwork, int, int]:
    s_dim, a_dim = int(rng.integers(2, 6)), int(rng.integers(1, 4))
    hidden = [int(rng.integers(3, 8)) for _ in range(int(rng.integers(1, 3)))]
    act = str(rng.choice(("relu", "tanh", "leaky_relu")))
    actor = DenseNetwork.build([s_dim, *hidden, a_dim], rng, hidden=act, output="tanh")
    critic = DenseNetwork.build([s_dim + a_dim, *hidden, 1], rng, hidden=act)
    return actor, critic, s_dim, a_dim


def check_critic_loss(rng: np.random.Generator, per_tensor: int = 12) -> CheckResult:
    _, critic, s_dim, a_dim = _td3_nets(rng)
    m = int(rng.integers(3, 9))
    s, a, y = rng.normal(size=(m, s_dim)), rng.uniform(-1, 1, (m, a_dim)), rng.normal(size=m)

    def loss() -> float:
        q = critic.forward(np.hstack([s, a]), mode="train")[:, 0]
        return float(np.mean((q - y) ** 2))

    _, grads = critic_loss_and_grads(critic, s, a, y)
    worst, n = _probe(loss, critic.params(), grads, rng, per_tensor)
    return CheckResult("critic loss", worst, n)


def check_actor_loss(rng: np.random.Generator, per_tensor: int = 12) -> CheckResult:
    actor, critic, s_dim, _ = _td3_nets(rng)
    m = int(rng.integers(3, 9))
    s = rng.normal(size=(m, s_dim))

    def loss() -> float:
        a = actor.forward(s, mode="train")
        return -float(np.mean(critic.forward(np.hstack([s, a]), mode="train")))

    _, grads = actor_loss_and_grads(actor, critic, s)
    worst, n = _probe(loss, actor.params(), grads, rng, per_tensor)
    return CheckResult("actor loss", worst, n)


def check_gan_losses(rng: np.random.Generator, per_tensor: int = 8) -> list[CheckResult]:
    """Discriminator loss w.r.t. D and generator loss w.r.t. G (through D)."""
    T = int(rng.integers(3, 6))
    cfg = GanConfig(
        noise_dim=int(rng.integers(1, 4)),
        hidden=(int(rng.integers(3, 7)),),
        batch_size=4,
        batchnorm_generator=bool(rng.integers(0, 2)),
        skip=str(rng.choice(("additive", "logit", "none"))),
        residual_discriminator=bool(rng.integers(0, 2)),
    )
    G = build_generator(cfg, T, rng)
    D = build_discriminator(cfg, T, rng)
    m = 4
    z = G.sample_noise(rng, m)
    c = rng.uniform(0.05, 0.95, (m, T))
    x = rng.uniform(0.0, 1.0, (m, T))

    def d_loss() -> float:
        fake = G.forward(z, c, mode="train")
        scores = D.forward(np.vstack([x, fake]), np.vstack([c, c]), mode="train")
        return discriminator_loss(scores[:m], scores[m:])

    d_loss()
    fake = G.forward(z, c, mode="train")
    scores = D.forward(np.vstack([x, fake]), np.vstack([c, c]), mode="train")
    d_grads, _ = D.backward(np.concatenate([(scores[:m] - 1.0) / m, scores[m:] / m]))
    wd, nd = _probe(d_loss, D.params(), d_grads, rng, per_tensor)

    def g_loss() -> float:
        return generator_loss(D.forward(G.forward(z, c, mode="train"), c, mode="train"))

    d_fake = D.forward(G.forward(z, c, mode="train"), c, mode="train")
    _, dx = D.backward((d_fake - 1.0) / m)
    g_grads = G.backward(dx)
    wg, ng = _probe(g_loss, G.params(), g_grads, rng, per_tensor)
    return [CheckResult("discriminator loss", wd, nd), CheckResult("generator loss", wg, ng)]


def run_suite(seed: int = 0, instances: int = 50) -> list[CheckResult]:
    """``instances`` seeded cases of every check."""
    children = np.random.SeedSequence(seed).spawn(instances)
    results: list[CheckResult] = []
    for child in children:
        rng = np.random.default_rng(child)
        results.append(check_network(rng))
        results.append(check_critic_loss(rng))
        results.append(check_actor_loss(rng))
        results.extend(check_gan_losses(rng))
    return results
