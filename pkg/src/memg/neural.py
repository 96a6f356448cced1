"""Small dense-network stack with hand-written backprop and Adam.

Only what the TD3 agent and the scenario GAN need: fully connected layers,
optional batch normalization before the activation, and a handful of
activations.  Everything runs in float64.
"""

from __future__ import annotations

import json
import math
import os
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Optional, Sequence

import numpy as np

CHECKPOINT_FORMAT = "memg-checkpoint"
CHECKPOINT_VERSION = 1

ACTIVATIONS = ("relu", "leaky_relu", "tanh", "identity", "sigmoid")


def _activate(z: np.ndarray, kind: str, slope: float) -> np.ndarray:
    if kind == "relu":
        return np.maximum(z, 0.0)
    if kind == "leaky_relu":
        return np.where(z > 0, z, slope * z)
    if kind == "tanh":
        return np.tanh(z)
    if kind == "sigmoid":
        return 0.5 * (1.0 + np.tanh(0.5 * z))
    return z


def _activation_grad(z: np.ndarray, a: np.ndarray, kind: str, slope: float) -> np.ndarray:
    if kind == "relu":
        return (z > 0).astype(float)
    if kind == "leaky_relu":
        return np.where(z > 0, 1.0, slope)
    if kind == "tanh":
        return 1.0 - a * a
    if kind == "sigmoid":
        return a * (1.0 - a)
    return np.ones_like(z)


@dataclass
class BatchNorm:
    gamma: np.ndarray
    beta: np.ndarray
    running_mean: np.ndarray
    running_var: np.ndarray
    eps: float = 1e-5
    momentum: float = 0.9

    @classmethod
    def fresh(cls, width: int, eps: float = 1e-5, momentum: float = 0.9) -> "BatchNorm":
        return cls(
            gamma=np.ones(width),
            beta=np.zeros(width),
            running_mean=np.zeros(width),
            running_var=np.ones(width),
            eps=eps,
            momentum=momentum,
        )


@dataclass
class Dense:
    weight: np.ndarray  # (in_dim, out_dim)
    bias: np.ndarray  # (out_dim,)
    activation: str = "identity"
    slope: float = 0.01
    batchnorm: Optional[BatchNorm] = None

    def __post_init__(self) -> None:
        if self.activation not in ACTIVATIONS:
            raise ValueError(f"unknown activation {self.activation!r}")
        if self.weight.ndim != 2 or self.bias.shape != (self.weight.shape[1],):
            raise ValueError("weight must be (in, out) and bias (out,)")

    @property
    def in_dim(self) -> int:
        return self.weight.shape[0]

    @property
    def out_dim(self) -> int:
        return self.weight.shape[1]

    def params(self) -> list[np.ndarray]:
        ps = [self.weight, self.bias]
        if self.batchnorm is not None:
            ps += [self.batchnorm.gamma, self.batchnorm.beta]
        return ps


@dataclass
class _Cache:
    x: np.ndarray
    z: np.ndarray
    a: np.ndarray
    xhat: Optional[np.ndarray] = None
    inv_std: Optional[np.ndarray] = None


class DenseNetwork:
    """Feed-forward stack of :class:`Dense` layers."""

    def __init__(self, layers: Sequence[Dense]):
        if not layers:
            raise ValueError("network needs at least one layer")
        for prev, nxt in zip(layers, layers[1:]):
            if prev.out_dim != nxt.in_dim:
                raise ValueError(
                    f"layer widths do not chain: {prev.out_dim} -> {nxt.in_dim}"
                )
        self.layers = list(layers)
        self._caches: Optional[list[_Cache]] = None

    @classmethod
    def build(
        cls,
        sizes: Sequence[int],
        rng: np.random.Generator,
        hidden: str = "relu",
        output: str = "identity",
        slope: float = 0.01,
        batchnorm_hidden: bool = False,
    ) -> "DenseNetwork":
        """Uniform(+-1/sqrt(fan_in)) initialised network with the given widths."""
        if len(sizes) < 2:
            raise ValueError("sizes needs an input and an output width")
        layers = []
        n = len(sizes) - 1
        for i, (fan_in, fan_out) in enumerate(zip(sizes[:-1], sizes[1:])):
            bound = 1.0 / math.sqrt(fan_in)
            last = i == n - 1
            layers.append(
                Dense(
                    weight=rng.uniform(-bound, bound, (fan_in, fan_out)),
                    bias=rng.uniform(-bound, bound, fan_out),
                    activation=output if last else hidden,
                    slope=slope,
                    batchnorm=None if (last or not batchnorm_hidden) else BatchNorm.fresh(fan_out),
                )
            )
        return cls(layers)

    @property
    def in_dim(self) -> int:
        return self.layers[0].in_dim

    @property
    def out_dim(self) -> int:
        return self.layers[-1].out_dim

    def params(self) -> list[np.ndarray]:
        """Trainable arrays, in a fixed order matching :meth:`backward`."""
        out: list[np.ndarray] = []
        for layer in self.layers:
            out += layer.params()
        return out

    def named_tensors(self) -> dict[str, np.ndarray]:
        """All state needed to reproduce the network, trainable or not."""
        named = {}
        for i, layer in enumerate(self.layers):
            named[f"{i}.weight"] = layer.weight
            named[f"{i}.bias"] = layer.bias
            bn = layer.batchnorm
            if bn is not None:
                named[f"{i}.bn.gamma"] = bn.gamma
                named[f"{i}.bn.beta"] = bn.beta
                named[f"{i}.bn.running_mean"] = bn.running_mean
                named[f"{i}.bn.running_var"] = bn.running_var
        return named

    def copy(self) -> "DenseNetwork":
        layers = []
        for layer in self.layers:
            bn = layer.batchnorm
            layers.append(
                Dense(
                    weight=layer.weight.copy(),
                    bias=layer.bias.copy(),
                    activation=layer.activation,
                    slope=layer.slope,
                    batchnorm=None
                    if bn is None
                    else BatchNorm(
                        bn.gamma.copy(),
                        bn.beta.copy(),
                        bn.running_mean.copy(),
                        bn.running_var.copy(),
                        bn.eps,
                        bn.momentum,
                    ),
                )
            )
        return DenseNetwork(layers)

    def all_finite(self) -> bool:
        return all(np.all(np.isfinite(t)) for t in self.named_tensors().values())

    def forward(self, x: np.ndarray, mode: str = "eval") -> np.ndarray:
        """Batch forward pass; ``mode='train'`` caches for :meth:`backward`.

        In train mode batch-norm layers normalise with batch statistics and
        update their running averages; eval mode uses the running averages.
        """
        if mode not in ("train", "eval"):
            raise ValueError("mode must be 'train' or 'eval'")
        x = np.asarray(x, dtype=float)
        if x.ndim == 1:
            x = x[None, :]
        if x.ndim != 2 or x.shape[1] != self.in_dim:
            raise ValueError(f"expected input of width {self.in_dim}, got shape {x.shape}")
        if not np.all(np.isfinite(x)):
            raise ValueError("network input has non-finite entries")
        train = mode == "train"
        caches = [] if train else None
        h = x
        for layer in self.layers:
            z = h @ layer.weight + layer.bias
            xhat = inv_std = None
            bn = layer.batchnorm
            if bn is not None:
                if train:
                    mu = z.mean(axis=0)
                    var = z.var(axis=0)
                    inv_std = 1.0 / np.sqrt(var + bn.eps)
                    xhat = (z - mu) * inv_std
                    n = z.shape[0]
                    unbiased = var * n / (n - 1) if n > 1 else var
                    bn.running_mean *= bn.momentum
                    bn.running_mean += (1.0 - bn.momentum) * mu
                    bn.running_var *= bn.momentum
                    bn.running_var += (1.0 - bn.momentum) * unbiased
                    zn = bn.gamma * xhat + bn.beta
                else:
                    zn = bn.gamma * (z - bn.running_mean) / np.sqrt(bn.running_var + bn.eps) + bn.beta
            else:
                zn = z
            a = _activate(zn, layer.activation, layer.slope)
            if train:
                caches.append(_Cache(x=h, z=zn, a=a, xhat=xhat, inv_std=inv_std))
            h = a
        self._caches = caches
        return h

    def backward(self, grad_out: np.ndarray) -> tuple[list[np.ndarray], np.ndarray]:
        """Gradients of a scalar loss given ``dL/d(output)``.

        Returns ``(param_grads, input_grad)`` with ``param_grads`` aligned to
        :meth:`params`.  Needs a preceding train-mode forward pass.
        """
        if self._caches is None:
            raise RuntimeError("backward() needs a train-mode forward() first")
        g = np.asarray(grad_out, dtype=float)
        if g.ndim == 1:
            g = g[:, None] if self.out_dim == 1 else g[None, :]
        if g.shape != self._caches[-1].a.shape:
            raise ValueError(
                f"upstream gradient shape {g.shape} != output shape {self._caches[-1].a.shape}"
            )
        grads_rev: list[list[np.ndarray]] = []
        for layer, cache in zip(reversed(self.layers), reversed(self._caches)):
            g = g * _activation_grad(cache.z, cache.a, layer.activation, layer.slope)
            bn = layer.batchnorm
            layer_grads = []
            if bn is not None:
                dgamma = (g * cache.xhat).sum(axis=0)
                dbeta = g.sum(axis=0)
                dxhat = g * bn.gamma
                n = g.shape[0]
                g = (cache.inv_std / n) * (
                    n * dxhat - dxhat.sum(axis=0) - cache.xhat * (dxhat * cache.xhat).sum(axis=0)
                )
                layer_grads = [dgamma, dbeta]
            dw = cache.x.T @ g
            db = g.sum(axis=0)
            grads_rev.append([dw, db] + layer_grads)
            g = g @ layer.weight.T
        param_grads: list[np.ndarray] = []
        for lg in reversed(grads_rev):
            param_grads += lg
        return param_grads, g


# --------------------------------------------------------------------------
# optimisation


@dataclass
class AdamState:
    lr: float
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    m: list[np.ndarray] = field(default_factory=list)
    v: list[np.ndarray] = field(default_factory=list)
    t: int = 0

    @classmethod
    def for_params(
        cls,
        params: Iterable[np.ndarray],
        lr: float,
        beta1: float = 0.9,
        beta2: float = 0.999,
        eps: float = 1e-8,
    ) -> "AdamState":
        params = list(params)
        return cls(
            lr=lr,
            beta1=beta1,
            beta2=beta2,
            eps=eps,
            m=[np.zeros_like(p) for p in params],
            v=[np.zeros_like(p) for p in params],
        )


def adam_step(
    params: Sequence[np.ndarray], grads: Sequence[np.ndarray], state: AdamState
) -> tuple[Sequence[np.ndarray], AdamState]:
    """One bias-corrected Adam descent step, updating ``params`` in place."""
    if len(params) != len(grads) or len(params) != len(state.m):
        raise ValueError("params, grads and optimizer state disagree in length")
    state.t += 1
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1**state.t
    c2 = 1.0 - b2**state.t
    for p, g, m, v in zip(params, grads, state.m, state.v):
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        p -= state.lr * (m / c1) / (np.sqrt(v / c2) + state.eps)
    return params, state


def soft_update(
    target_params: Sequence[np.ndarray], source_params: Sequence[np.ndarray], tau: float
) -> Sequence[np.ndarray]:
    """Polyak averaging ``target <- tau * source + (1 - tau) * target`` in place."""
    if not 0.0 <= tau <= 1.0:
        raise ValueError("tau must lie in [0, 1]")
    if len(target_params) != len(source_params):
        raise ValueError("target and source parameter lists differ in length")
    for t, s in zip(target_params, source_params):
        if tau == 1.0:
            np.copyto(t, s)
        elif tau > 0.0:
            t *= 1.0 - tau
            t += tau * s
    return target_params


def soft_update_network(target: DenseNetwork, source: DenseNetwork, tau: float) -> None:
    # batch-norm running statistics are tracked the same way as weights
    tgt = target.named_tensors()
    src = source.named_tensors()
    soft_update([tgt[k] for k in tgt], [src[k] for k in tgt], tau)


# --------------------------------------------------------------------------
# checkpoints


class CheckpointError(ValueError):
    pass


class CheckpointVersionError(CheckpointError):
    pass


class CheckpointSchemaError(CheckpointError):
    pass


def _architecture(net: DenseNetwork) -> list[dict]:
    arch = []
    for layer in net.layers:
        entry = {
            "in_dim": layer.in_dim,
            "out_dim": layer.out_dim,
            "activation": layer.activation,
            "slope": layer.slope,
            "batchnorm": layer.batchnorm is not None,
        }
        if layer.batchnorm is not None:
            entry["bn_eps"] = layer.batchnorm.eps
            entry["bn_momentum"] = layer.batchnorm.momentum
        arch.append(entry)
    return arch


def checkpoint_document(nets: Mapping[str, DenseNetwork], metadata: Mapping) -> dict:
    tensors = {}
    for name, net in nets.items():
        for key, arr in net.named_tensors().items():
            tensors[f"{name}/{key}"] = {
                "shape": list(arr.shape),
                "data": [float(v) for v in arr.reshape(-1)],
            }
    return {
        "format": CHECKPOINT_FORMAT,
        "version": CHECKPOINT_VERSION,
        "metadata": dict(metadata),
        "networks": {name: {"layers": _architecture(net)} for name, net in nets.items()},
        "tensors": tensors,
    }


def dumps_checkpoint(nets: Mapping[str, DenseNetwork], metadata: Mapping) -> str:
    doc = checkpoint_document(nets, metadata)
    return json.dumps(doc, sort_keys=True, allow_nan=False, separators=(",", ":")) + "\n"


def save_checkpoint(
    nets: Mapping[str, DenseNetwork], metadata: Mapping, path: str | os.PathLike
) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(dumps_checkpoint(nets, metadata))


def _tensor(tensors: Mapping, key: str, shape: tuple[int, ...]) -> np.ndarray:
    if key not in tensors:
        raise CheckpointSchemaError(f"checkpoint is missing tensor {key!r}")
    entry = tensors[key]
    try:
        stored_shape = tuple(int(s) for s in entry["shape"])
        data = np.array(entry["data"], dtype=float)
    except (KeyError, TypeError, ValueError) as exc:
        raise CheckpointSchemaError(f"tensor {key!r} is malformed: {exc}") from exc
    if stored_shape != shape:
        raise CheckpointSchemaError(f"tensor {key!r} has shape {stored_shape}, expected {shape}")
    if data.size != math.prod(shape):
        raise CheckpointSchemaError(
            f"tensor {key!r} holds {data.size} values for shape {shape}"
        )
    return data.reshape(shape)


def parse_checkpoint(doc: Mapping) -> tuple[dict[str, DenseNetwork], dict]:
    if not isinstance(doc, Mapping) or doc.get("format") != CHECKPOINT_FORMAT:
        raise CheckpointSchemaError("not a memg checkpoint")
    if doc.get("version") != CHECKPOINT_VERSION:
        raise CheckpointVersionError(
            f"unsupported checkpoint version {doc.get('version')!r} "
            f"(expected {CHECKPOINT_VERSION})"
        )
    for key in ("metadata", "networks", "tensors"):
        if key not in doc:
            raise CheckpointSchemaError(f"checkpoint is missing section {key!r}")
    tensors = doc["tensors"]
    nets = {}
    for name, spec in doc["networks"].items():
        layers = []
        try:
            arch = spec["layers"]
        except (KeyError, TypeError) as exc:
            raise CheckpointSchemaError(f"network {name!r} has no layer list") from exc
        for i, entry in enumerate(arch):
            try:
                n_in, n_out = int(entry["in_dim"]), int(entry["out_dim"])
                bn = None
                if entry["batchnorm"]:
                    bn = BatchNorm(
                        gamma=_tensor(tensors, f"{name}/{i}.bn.gamma", (n_out,)),
                        beta=_tensor(tensors, f"{name}/{i}.bn.beta", (n_out,)),
                        running_mean=_tensor(tensors, f"{name}/{i}.bn.running_mean", (n_out,)),
                        running_var=_tensor(tensors, f"{name}/{i}.bn.running_var", (n_out,)),
                        eps=float(entry["bn_eps"]),
                        momentum=float(entry["bn_momentum"]),
                    )
                layers.append(
                    Dense(
                        weight=_tensor(tensors, f"{name}/{i}.weight", (n_in, n_out)),
                        bias=_tensor(tensors, f"{name}/{i}.bias", (n_out,)),
                        activation=entry["activation"],
                        slope=float(entry["slope"]),
                        batchnorm=bn,
                    )
                )
            except KeyError as exc:
                raise CheckpointSchemaError(
                    f"network {name!r} layer {i} is missing field {exc}"
                ) from exc
        try:
            nets[name] = DenseNetwork(layers)
        except ValueError as exc:
            raise CheckpointSchemaError(f"network {name!r}: {exc}") from exc
    return nets, dict(doc["metadata"])


def load_checkpoint(path: str | os.PathLike) -> tuple[dict[str, DenseNetwork], dict]:
    with open(path, encoding="utf-8") as fh:
        try:
            doc = json.load(fh)
        except json.JSONDecodeError as exc:
            raise CheckpointSchemaError(f"{path}: not valid JSON ({exc})") from exc
    return parse_checkpoint(doc)
