"""Network blocks: residual lifting MLP, input-convex dynamics, control
encoder/decoder pair, and the plain linear dynamics baseline.

All forwards use a row-per-sample convention: inputs [B, d_in], weights
[d_in, d_out]. Residual skips apply only between equal-width hidden layers;
the final layer of every block is affine with no activation.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import diffcore as dc
from .diffcore import Node, Param, Tape
from .rng import Xoshiro256


@dataclass(frozen=True)
class ResNetConfig:
    in_dim: int
    hidden_width: int
    out_dim: int
    n_layers: int

    def __post_init__(self):
        if min(self.in_dim, self.hidden_width, self.out_dim) < 1 or self.n_layers < 1:
            raise ValueError(f"invalid ResNetConfig: {self}")


@dataclass(frozen=True)
class IcnnConfig:
    state_dim: int
    control_dim: int
    hidden_dim: int
    n_layers: int

    def __post_init__(self):
        if min(self.state_dim, self.control_dim, self.hidden_dim, self.n_layers) < 1:
            raise ValueError(f"invalid IcnnConfig: {self}")

    @property
    def in_dim(self) -> int:
        return self.state_dim + self.control_dim


@dataclass(frozen=True)
class AutoencoderConfig:
    control_dim: int
    lifted_dim: int
    hidden_width: int
    n_layers_enc: int = 2
    n_layers_dec: int = 2
    bound: float = 1.0

    def __post_init__(self):
        if min(self.control_dim, self.lifted_dim, self.hidden_width,
               self.n_layers_enc, self.n_layers_dec) < 1 or self.bound <= 0:
            raise ValueError(f"invalid AutoencoderConfig: {self}")


@dataclass(frozen=True)
class LinearDynConfig:
    lifted_dim: int
    control_dim: int
    bias: bool = False


class IcnnInvariantError(RuntimeError):
    """A weight that must be nonnegative carries a negative entry."""


# --- parameter specs --------------------------------------------------------
# Each block describes its parameters as (name, shape, constrained) triples;
# initialization consumes the same list, so checkpoint validation and fresh
# builds can never disagree.

def resnet_layer_dims(cfg: ResNetConfig) -> list[tuple[int, int]]:
    dims = []
    width = cfg.in_dim
    for _ in range(cfg.n_layers - 1):
        dims.append((width, cfg.hidden_width))
        width = cfg.hidden_width
    dims.append((width, cfg.out_dim))
    return dims


def resnet_param_specs(cfg: ResNetConfig, prefix: str):
    specs = []
    for i, (din, dout) in enumerate(resnet_layer_dims(cfg), start=1):
        specs.append((f"{prefix}l{i}.w", (din, dout), False))
        specs.append((f"{prefix}l{i}.b", (dout,), False))
    return specs


def icnn_param_specs(cfg: IcnnConfig, prefix: str):
    specs = []
    for k in range(1, cfg.n_layers + 2):
        out = cfg.hidden_dim if k <= cfg.n_layers else cfg.state_dim
        specs.append((f"{prefix}u{k}.w", (cfg.in_dim, out), False))
        specs.append((f"{prefix}u{k}.b", (out,), False))
    for k in range(1, cfg.n_layers + 1):
        out = cfg.hidden_dim if k < cfg.n_layers else cfg.state_dim
        specs.append((f"{prefix}z{k}.w", (cfg.hidden_dim, out), True))
    return specs


def _ae_resnet_cfg(cfg: AutoencoderConfig, n_layers: int) -> ResNetConfig:
    return ResNetConfig(in_dim=cfg.control_dim + cfg.lifted_dim,
                        hidden_width=cfg.hidden_width,
                        out_dim=cfg.control_dim,
                        n_layers=n_layers)


def autoencoder_param_specs(cfg: AutoencoderConfig, prefix: str):
    return (resnet_param_specs(_ae_resnet_cfg(cfg, cfg.n_layers_enc), prefix + "enc.")
            + resnet_param_specs(_ae_resnet_cfg(cfg, cfg.n_layers_dec), prefix + "dec."))


def linear_dyn_param_specs(cfg: LinearDynConfig, prefix: str):
    specs = [(prefix + "A", (cfg.lifted_dim, cfg.lifted_dim), False),
             (prefix + "B", (cfg.control_dim, cfg.lifted_dim), False)]
    if cfg.bias:
        specs.append((prefix + "b", (cfg.lifted_dim,), False))
    return specs


def init_params(specs, rng: Xoshiro256) -> dict[str, Param]:
    """Weights ~ Uniform(+/- 1/sqrt(fan_in)); constrained weights start at
    |sample| * 0.1 so they are feasible; biases start at zero."""
    params: dict[str, Param] = {}
    for name, shape, constrained in specs:
        if len(shape) == 1:
            value = np.zeros(shape, dtype=np.float32)
        else:
            bound = 1.0 / np.sqrt(shape[0])
            value = dc.uniform_array(rng, shape, -bound, bound)
            if constrained:
                value = np.abs(value) * np.float32(0.1)
        params[name] = Param(name, value, constrained=constrained)
    return params


# --- residual MLP ----------------------------------------------------------

def resnet_forward(t: Tape, cfg: ResNetConfig, params: dict[str, Param],
                   prefix: str, x: Node) -> Node:
    if x.value.shape[1] != cfg.in_dim:
        raise dc.ShapeMismatch(
            f"resnet {prefix!r}: input width {x.value.shape[1]} != {cfg.in_dim}")
    h = x
    for i, (din, dout) in enumerate(resnet_layer_dims(cfg), start=1):
        w = t.param(params[f"{prefix}l{i}.w"])
        b = t.param(params[f"{prefix}l{i}.b"])
        pre = dc.affine(t, h, w, b)
        # final layer keeps no activation; skips join any equal-width pair
        out = pre if i == cfg.n_layers else dc.relu(t, pre)
        h = dc.add(t, out, h) if din == dout else out
    return h


# --- input-convex dynamics --------------------------------------------------

def check_icnn_nonnegative(cfg: IcnnConfig, params: dict[str, Param], prefix: str) -> None:
    for k in range(1, cfg.n_layers + 1):
        w = params[f"{prefix}z{k}.w"]
        if w.value.min() < 0:
            raise IcnnInvariantError(f"{w.name} has a negative entry; run the "
                                     "nonnegative projection after each update")


def icnn_forward(t: Tape, cfg: IcnnConfig, params: dict[str, Param], prefix: str,
                 xbar: Node, ctrl: Node) -> Node:
    """Jointly convex map of (lifted state, control) to the next lifted state.

    The raw concatenated input feeds every layer; hidden-to-hidden weights are
    the nonnegative ones, and the last layer is linear so outputs may be
    negative.
    """
    if xbar.value.shape[1] != cfg.state_dim or ctrl.value.shape[1] != cfg.control_dim:
        raise dc.ShapeMismatch(
            f"icnn {prefix!r}: got widths ({xbar.value.shape[1]}, {ctrl.value.shape[1]}), "
            f"expected ({cfg.state_dim}, {cfg.control_dim})")
    check_icnn_nonnegative(cfg, params, prefix)
    u = dc.concat_cols(t, xbar, ctrl)

    def passthrough(k: int) -> Node:
        w = t.param(params[f"{prefix}u{k}.w"])
        b = t.param(params[f"{prefix}u{k}.b"])
        return dc.affine(t, u, w, b)

    z = dc.softplus(t, passthrough(1))
    for k in range(2, cfg.n_layers + 1):
        wz = t.param(params[f"{prefix}z{k - 1}.w"])
        z = dc.softplus(t, dc.add(t, dc.affine(t, z, wz), passthrough(k)))
    wz = t.param(params[f"{prefix}z{cfg.n_layers}.w"])
    return dc.add(t, dc.affine(t, z, wz), passthrough(cfg.n_layers + 1))


# --- control autoencoder ----------------------------------------------------

def control_encode(t: Tape, cfg: AutoencoderConfig, params: dict[str, Param],
                   prefix: str, ctrl: Node, xbar: Node) -> Node:
    """Transformed control conditioned on the lifted state; boundedness is
    trained with a penalty, never clamped here."""
    u = dc.concat_cols(t, ctrl, xbar)
    return resnet_forward(t, _ae_resnet_cfg(cfg, cfg.n_layers_enc), params,
                          prefix + "enc.", u)


def control_decode(t: Tape, cfg: AutoencoderConfig, params: dict[str, Param],
                   prefix: str, ctrl_enc: Node, xbar: Node) -> Node:
    u = dc.concat_cols(t, ctrl_enc, xbar)
    return resnet_forward(t, _ae_resnet_cfg(cfg, cfg.n_layers_dec), params,
                          prefix + "dec.", u)


# --- linear dynamics baseline ----------------------------------------------

def linear_dyn_forward(t: Tape, cfg: LinearDynConfig, params: dict[str, Param],
                       prefix: str, xbar: Node, ctrl: Node) -> Node:
    if xbar.value.shape[1] != cfg.lifted_dim or ctrl.value.shape[1] != cfg.control_dim:
        raise dc.ShapeMismatch(
            f"linear dynamics: got widths ({xbar.value.shape[1]}, {ctrl.value.shape[1]}), "
            f"expected ({cfg.lifted_dim}, {cfg.control_dim})")
    a = t.param(params[prefix + "A"])
    b = t.param(params[prefix + "B"])
    out = dc.add(t, dc.affine(t, xbar, a), dc.affine(t, ctrl, b))
    if cfg.bias:
        bias = t.param(params[prefix + "b"])
        out = t._emit(out.value + bias.value, (out.idx, bias.idx),
                      lambda g: (g, g.sum(axis=0)), op="add_bias")
    return out
