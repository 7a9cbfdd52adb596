"""Tri-component network: trunk, classifier head, projector head.

One `TriNet` is an MLP trunk (theta), a linear classifier over its last
hidden layer (phi), and a linear projector whose output is L2-normalized
(psi). The training protocol instantiates three of these: a student, a
momentum teacher, and a randomly initialized destructive teacher that
supplies the forgetting target.

Parameters are initialized from a counter-based Philox stream keyed by
`init_seed`, so equal configs always build bit-identical networks
regardless of process history.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import container
from .errors import ContractError, ShapeError
from .tape import Tensor, l2_normalize, linear_forward, no_grad, relu


@dataclass(frozen=True)
class NetConfig:
    input_dim: int
    hidden_dims: tuple[int, ...] = (32, 32)
    num_classes: int = 10
    embed_dim: int = 16
    init_seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "hidden_dims", tuple(int(h) for h in self.hidden_dims))
        if self.input_dim < 1 or any(h < 1 for h in self.hidden_dims) or not self.hidden_dims:
            raise ContractError("input_dim and every hidden dim must be positive")
        if self.num_classes < 2:
            raise ContractError("need at least two classes")
        if self.embed_dim < 2:
            raise ContractError("embed_dim must be at least 2")


class TriNet:
    """Parameter holder; all forward logic lives in the module functions."""

    __slots__ = ("config", "theta", "phi", "psi")

    def __init__(self, config: NetConfig, theta, phi, psi):
        self.config = config
        self.theta = theta  # list of (W, b) Tensor pairs
        self.phi = phi  # single (W, b)
        self.psi = psi  # single (W, b)

    def parameters(self) -> list[Tensor]:
        out = []
        for w, b in [*self.theta, self.phi, self.psi]:
            out.append(w)
            out.append(b)
        return out

    def named_parameters(self) -> dict[str, Tensor]:
        out = {}
        for i, (w, b) in enumerate(self.theta):
            out[f"theta.{i}.w"] = w
            out[f"theta.{i}.b"] = b
        out["phi.0.w"], out["phi.0.b"] = self.phi
        out["psi.0.w"], out["psi.0.b"] = self.psi
        return out


def _init_layer(rng: np.random.Generator, fan_in: int, fan_out: int) -> tuple[Tensor, Tensor]:
    bound = 1.0 / np.sqrt(fan_in)
    w = rng.uniform(-bound, bound, size=(fan_in, fan_out))
    b = rng.uniform(-bound, bound, size=(fan_out,))
    return Tensor(w, requires_grad=True), Tensor(b, requires_grad=True)


def init(config: NetConfig) -> TriNet:
    """Deterministic build: layer draws happen in a fixed order from one
    Philox stream, trunk first, then classifier, then projector."""
    rng = np.random.Generator(np.random.Philox(config.init_seed))
    theta = []
    fan_in = config.input_dim
    for hidden in config.hidden_dims:
        theta.append(_init_layer(rng, fan_in, hidden))
        fan_in = hidden
    phi = _init_layer(rng, fan_in, config.num_classes)
    psi = _init_layer(rng, fan_in, config.embed_dim)
    return TriNet(config, theta, phi, psi)


def _as_input(net: TriNet, x) -> Tensor:
    t = x if isinstance(x, Tensor) else Tensor(x)
    if t.data.ndim != 2:
        raise ShapeError(f"expected a batch matrix, got shape {t.data.shape}")
    if t.data.shape[1] != net.config.input_dim:
        raise ShapeError(
            f"input width {t.data.shape[1]} does not match input_dim {net.config.input_dim}"
        )
    return t


def features(net: TriNet, x) -> Tensor:
    h = _as_input(net, x)
    for w, b in net.theta:
        h = relu(linear_forward(h, w, b))
    return h


def classify(net: TriNet, x) -> Tensor:
    w, b = net.phi
    return linear_forward(features(net, x), w, b)


def project(net: TriNet, x) -> Tensor:
    w, b = net.psi
    return l2_normalize(linear_forward(features(net, x), w, b))


def outputs(net: TriNet, x) -> tuple[Tensor, Tensor]:
    """(logits, embedding) off one shared trunk evaluation."""
    h = features(net, x)
    cw, cb = net.phi
    pw, pb = net.psi
    return linear_forward(h, cw, cb), l2_normalize(linear_forward(h, pw, pb))


def clone(net: TriNet) -> TriNet:
    def copy_pair(pair):
        w, b = pair
        return (
            Tensor(w.data.copy(), requires_grad=w.requires_grad),
            Tensor(b.data.copy(), requires_grad=b.requires_grad),
        )

    return TriNet(
        net.config,
        [copy_pair(p) for p in net.theta],
        copy_pair(net.phi),
        copy_pair(net.psi),
    )


def predict(net: TriNet, x) -> np.ndarray:
    """Hard class ids; np.argmax breaks ties toward the lowest index."""
    with no_grad():
        logits = classify(net, x)
    return np.argmax(logits.data, axis=1)


def save(net: TriNet, path) -> None:
    arrays = {name: t.data for name, t in net.named_parameters().items()}
    cfg = net.config
    arrays["config.meta"] = np.array(
        [cfg.input_dim, cfg.num_classes, cfg.embed_dim, cfg.init_seed], dtype=np.float64
    )
    arrays["config.hidden_dims"] = np.array(cfg.hidden_dims, dtype=np.float64)
    container.write_arrays(path, arrays)


def load(path) -> TriNet:
    arrays = container.read_arrays(path)
    try:
        meta = arrays.pop("config.meta")
        hidden = arrays.pop("config.hidden_dims")
        config = NetConfig(
            input_dim=int(meta[0]),
            hidden_dims=tuple(int(h) for h in hidden),
            num_classes=int(meta[1]),
            embed_dim=int(meta[2]),
            init_seed=int(meta[3]),
        )
        net = init(config)
        for name, tensor in net.named_parameters().items():
            stored = arrays[name]
            if stored.shape != tensor.data.shape:
                raise ContractError(
                    f"{path}: array {name!r} has shape {stored.shape}, "
                    f"expected {tensor.data.shape}"
                )
            tensor.data[...] = stored
    except KeyError as exc:
        raise ContractError(f"{path}: missing array {exc.args[0]!r}") from exc
    return net
