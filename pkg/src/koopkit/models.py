"""Model assembly: lifting network plus one of three transition maps, with
rollout and a binary checkpoint format.

Checkpoint layout (little-endian):
  magic "KOOPCK1\\0" | u32 json_len | canonical JSON config | u32 tensor_count |
  per tensor: u16 name_len | UTF-8 name | u32 rank | u32 dims... | f32 data.
Tensors are written sorted by name, so save -> load -> save is byte-identical.
"""

from __future__ import annotations

import json
import struct
import warnings
from dataclasses import dataclass, field
from enum import Enum
from typing import Optional

import numpy as np

from . import diffcore as dc
from . import netblocks as nb
from .diffcore import Param, Tape
from .rng import Xoshiro256

MAGIC = b"KOOPCK1\x00"


class CheckpointError(ValueError):
    """Raised when a checkpoint file fails validation."""


class ModelKind(str, Enum):
    TRADITIONAL = "traditional"
    CONVEX = "convex"
    EXTENDED = "extended"


@dataclass
class HistoryWindow:
    """Observations and controls at offsets -T..0, oldest first."""

    observations: np.ndarray  # [T+1, d_obs]
    controls: np.ndarray      # [T+1, d_ctrl]

    @property
    def t_hist(self) -> int:
        return len(self.observations) - 1


@dataclass
class LiftedState:
    values: np.ndarray  # [d_lift]


@dataclass
class RolloutResult:
    predicted: np.ndarray  # [H, d_obs]
    truth: np.ndarray      # [H, d_obs]
    controls: np.ndarray   # [H, d_ctrl]
    kind: ModelKind


@dataclass
class Normalization:
    """Per-channel observation standardization stored with the model."""

    mean: np.ndarray
    std: np.ndarray

    def apply(self, obs: np.ndarray) -> np.ndarray:
        return ((obs - self.mean) / self.std).astype(np.float32)

    def unapply(self, obs: np.ndarray) -> np.ndarray:
        return (obs * self.std + self.mean).astype(np.float32)


@dataclass
class Model:
    kind: ModelKind
    d_obs: int
    d_ctrl: int
    t_hist: int
    phi_cfg: nb.ResNetConfig
    icnn_cfg: Optional[nb.IcnnConfig]
    lin_cfg: Optional[nb.LinearDynConfig]
    ae_cfg: Optional[nb.AutoencoderConfig]
    params: dict[str, Param]
    seed: int
    normalization: Optional[Normalization] = None
    control_range: Optional[tuple[float, float]] = None
    training_meta: dict = field(default_factory=dict)
    lift_count: int = 0

    @property
    def d_lift(self) -> int:
        return self.phi_cfg.out_dim

    @property
    def window_width(self) -> int:
        return (self.t_hist + 1) * (self.d_obs + self.d_ctrl)


def _param_specs(phi_cfg, icnn_cfg, lin_cfg, ae_cfg):
    specs = nb.resnet_param_specs(phi_cfg, "phi.")
    if lin_cfg is not None:
        specs += nb.linear_dyn_param_specs(lin_cfg, "dyn.")
    else:
        specs += nb.icnn_param_specs(icnn_cfg, "dyn.")
    if ae_cfg is not None:
        specs += nb.autoencoder_param_specs(ae_cfg, "ae.")
    return specs


def param_specs(model: Model):
    """(name, shape, constrained) for every parameter the configs imply."""
    return _param_specs(model.phi_cfg, model.icnn_cfg, model.lin_cfg, model.ae_cfg)


def build_model(kind: ModelKind | str, d_obs: int, d_ctrl: int, seed: int,
                d_lift: int = 64, hidden: int = 128, t_hist: int = 2,
                phi_layers: int = 10, icnn_layers: int = 2, ae_layers: int = 2,
                control_bound: float = 1.0, linear_bias: bool = False) -> Model:
    """Construct a freshly initialized model of the requested kind.

    Defaults are the desk-scale sizes; pass d_lift=256, hidden=512 for the
    full-scale architecture.
    """
    kind = ModelKind(kind)
    phi_cfg = nb.ResNetConfig(in_dim=(t_hist + 1) * (d_obs + d_ctrl),
                              hidden_width=hidden, out_dim=d_lift, n_layers=phi_layers)
    icnn_cfg = lin_cfg = ae_cfg = None
    if kind is ModelKind.TRADITIONAL:
        lin_cfg = nb.LinearDynConfig(lifted_dim=d_lift, control_dim=d_ctrl, bias=linear_bias)
    else:
        icnn_cfg = nb.IcnnConfig(state_dim=d_lift, control_dim=d_ctrl,
                                 hidden_dim=hidden, n_layers=icnn_layers)
    if kind is ModelKind.EXTENDED:
        ae_cfg = nb.AutoencoderConfig(control_dim=d_ctrl, lifted_dim=d_lift,
                                      hidden_width=hidden, n_layers_enc=ae_layers,
                                      n_layers_dec=ae_layers, bound=control_bound)
    params = nb.init_params(_param_specs(phi_cfg, icnn_cfg, lin_cfg, ae_cfg),
                            Xoshiro256(seed))
    return Model(kind=kind, d_obs=d_obs, d_ctrl=d_ctrl, t_hist=t_hist,
                 phi_cfg=phi_cfg, icnn_cfg=icnn_cfg, lin_cfg=lin_cfg, ae_cfg=ae_cfg,
                 params=params, seed=seed)


# --- forward passes ---------------------------------------------------------

def flatten_windows(model: Model, obs_wins: np.ndarray, ctrl_wins: np.ndarray) -> np.ndarray:
    """[B, T+1, d] window pair -> [B, window_width], observations first."""
    b = obs_wins.shape[0]
    if obs_wins.shape[1:] != (model.t_hist + 1, model.d_obs):
        raise dc.ShapeMismatch(f"observation window shape {obs_wins.shape[1:]} != "
                               f"({model.t_hist + 1}, {model.d_obs})")
    if ctrl_wins.shape != (b, model.t_hist + 1, model.d_ctrl):
        raise dc.ShapeMismatch(f"control window shape {ctrl_wins.shape} != "
                               f"({b}, {model.t_hist + 1}, {model.d_ctrl})")
    if model.normalization is not None:
        obs_wins = model.normalization.apply(obs_wins)
    return np.concatenate([obs_wins.reshape(b, -1), ctrl_wins.reshape(b, -1)],
                          axis=1).astype(np.float32)


def lift_batch(t: Tape, model: Model, obs_wins: np.ndarray, ctrl_wins: np.ndarray) -> dc.Node:
    model.lift_count += 1
    flat = t.leaf(flatten_windows(model, obs_wins, ctrl_wins))
    return nb.resnet_forward(t, model.phi_cfg, model.params, "phi.", flat)


def lift(model: Model, window: HistoryWindow) -> LiftedState:
    """Map a single history window to its lifted state."""
    t = Tape()
    out = lift_batch(t, model, window.observations[None, :, :], window.controls[None, :, :])
    return LiftedState(out.value[0].copy())


def step_batch(t: Tape, model: Model, xbar: dc.Node, ctrl: dc.Node
               ) -> tuple[dc.Node, Optional[dc.Node]]:
    """One transition in lifted space; returns (next state, encoded control
    or None for kinds without a control transformation)."""
    if model.kind is ModelKind.TRADITIONAL:
        return nb.linear_dyn_forward(t, model.lin_cfg, model.params, "dyn.", xbar, ctrl), None
    if model.kind is ModelKind.CONVEX:
        return nb.icnn_forward(t, model.icnn_cfg, model.params, "dyn.", xbar, ctrl), None
    enc = nb.control_encode(t, model.ae_cfg, model.params, "ae.", ctrl, xbar)
    return nb.icnn_forward(t, model.icnn_cfg, model.params, "dyn.", xbar, enc), enc


def _warn_control_range(model: Model, ctrl: np.ndarray) -> None:
    if model.control_range is not None:
        lo, hi = model.control_range
        if np.any(ctrl < lo) or np.any(ctrl > hi):
            warnings.warn(f"control outside the declared range [{lo}, {hi}]",
                          RuntimeWarning, stacklevel=3)


def step_lifted(model: Model, state: LiftedState, ctrl: np.ndarray
                ) -> tuple[LiftedState, Optional[np.ndarray]]:
    ctrl = np.asarray(ctrl, dtype=np.float32).reshape(1, -1)
    _warn_control_range(model, ctrl)
    t = Tape()
    nxt, enc = step_batch(t, model, t.leaf(state.values[None, :]), t.leaf(ctrl))
    return LiftedState(nxt.value[0].copy()), None if enc is None else enc.value[0].copy()


def head(model: Model, xbar: np.ndarray) -> np.ndarray:
    """Observable readout: the first d_obs lifted components, denormalized."""
    out = xbar[..., :model.d_obs]
    if model.normalization is not None:
        out = model.normalization.unapply(out)
    return out


def rollout_batch(model: Model, obs_wins: np.ndarray, ctrl_wins: np.ndarray,
                  controls: np.ndarray) -> np.ndarray:
    """Roll H steps for a batch of windows; lift exactly once.

    controls: [B, H, d_ctrl]; returns predicted observations [B, H, d_obs].
    """
    b, h = controls.shape[0], controls.shape[1]
    t = Tape()
    xbar = lift_batch(t, model, obs_wins, ctrl_wins)
    preds = np.empty((b, h, model.d_obs), dtype=np.float32)
    for step in range(h):
        c = controls[:, step, :]
        _warn_control_range(model, c)
        xbar, _ = step_batch(t, model, xbar, t.leaf(c))
        preds[:, step, :] = head(model, xbar.value)
    return preds


def rollout(model: Model, window: HistoryWindow, controls: np.ndarray,
            truth: np.ndarray) -> RolloutResult:
    """Predict H observations from one window and its future control sequence."""
    controls = np.asarray(controls, dtype=np.float32)
    truth = np.asarray(truth, dtype=np.float32)
    if controls.ndim != 2 or len(controls) < 1:
        raise dc.ShapeMismatch("controls must be [H, d_ctrl] with H >= 1")
    if truth.shape != (len(controls), model.d_obs):
        raise dc.ShapeMismatch(f"truth shape {truth.shape} != ({len(controls)}, {model.d_obs})")
    preds = rollout_batch(model, window.observations[None], window.controls[None],
                          controls[None])
    return RolloutResult(predicted=preds[0], truth=truth, controls=controls, kind=model.kind)


# --- checkpoint io ----------------------------------------------------------

def _config_blob(model: Model) -> dict:
    blob = {
        "kind": model.kind.value,
        "dims": {"d_obs": model.d_obs, "d_ctrl": model.d_ctrl,
                 "t_hist": model.t_hist, "d_lift": model.d_lift},
        "phi": vars(model.phi_cfg).copy(),
        "dynamics": ({"type": "linear", **vars(model.lin_cfg)} if model.lin_cfg
                     else {"type": "icnn", **vars(model.icnn_cfg)}),
        "autoencoder": vars(model.ae_cfg).copy() if model.ae_cfg else None,
        "normalization": (None if model.normalization is None else
                          {"mean": [float(v) for v in model.normalization.mean],
                           "std": [float(v) for v in model.normalization.std]}),
        "control_range": (None if model.control_range is None
                          else [float(model.control_range[0]), float(model.control_range[1])]),
        "seed": model.seed,
        "training": model.training_meta,
    }
    return blob


def save_checkpoint(model: Model, path) -> None:
    blob = json.dumps(_config_blob(model), sort_keys=True,
                      separators=(",", ":")).encode("utf-8")
    out = [MAGIC, struct.pack("<I", len(blob)), blob,
           struct.pack("<I", len(model.params))]
    for name in sorted(model.params):
        value = model.params[name].value
        encoded = name.encode("utf-8")
        out.append(struct.pack("<H", len(encoded)))
        out.append(encoded)
        out.append(struct.pack("<I", value.ndim))
        out.append(struct.pack(f"<{value.ndim}I", *value.shape))
        out.append(value.astype("<f4", copy=False).tobytes())
    with open(path, "wb") as f:
        f.write(b"".join(out))


class _Reader:
    def __init__(self, raw: bytes, path):
        self.raw = raw
        self.pos = 0
        self.path = path

    def take(self, n: int, what: str) -> bytes:
        if self.pos + n > len(self.raw):
            raise CheckpointError(f"{self.path}: truncated while reading {what} "
                                  f"(need {n} bytes at offset {self.pos})")
        chunk = self.raw[self.pos:self.pos + n]
        self.pos += n
        return chunk


def _model_from_blob(blob: dict) -> Model:
    kind = ModelKind(blob["kind"])
    dims = blob["dims"]
    phi_cfg = nb.ResNetConfig(**blob["phi"])
    icnn_cfg = lin_cfg = None
    dyn = dict(blob["dynamics"])
    dyn_type = dyn.pop("type")
    if dyn_type == "linear":
        lin_cfg = nb.LinearDynConfig(**dyn)
    else:
        icnn_cfg = nb.IcnnConfig(**dyn)
    ae_cfg = nb.AutoencoderConfig(**blob["autoencoder"]) if blob["autoencoder"] else None
    norm = None
    if blob["normalization"] is not None:
        norm = Normalization(np.asarray(blob["normalization"]["mean"], dtype=np.float32),
                             np.asarray(blob["normalization"]["std"], dtype=np.float32))
    crange = blob["control_range"]
    return Model(kind=kind, d_obs=dims["d_obs"], d_ctrl=dims["d_ctrl"],
                 t_hist=dims["t_hist"], phi_cfg=phi_cfg, icnn_cfg=icnn_cfg,
                 lin_cfg=lin_cfg, ae_cfg=ae_cfg, params={}, seed=blob["seed"],
                 normalization=norm,
                 control_range=None if crange is None else (crange[0], crange[1]),
                 training_meta=blob["training"])


def load_checkpoint(path) -> Model:
    with open(path, "rb") as f:
        raw = f.read()
    r = _Reader(raw, path)
    if r.take(8, "magic") != MAGIC:
        raise CheckpointError(f"{path}: bad magic {raw[:8]!r}")
    (json_len,) = struct.unpack("<I", r.take(4, "config length"))
    blob = json.loads(r.take(json_len, "config").decode("utf-8"))
    model = _model_from_blob(blob)

    specs = param_specs(model)
    expected = {name: shape for name, shape, _ in specs}
    constrained = {name for name, _, c in specs if c}

    (count,) = struct.unpack("<I", r.take(4, "tensor count"))
    if count != len(expected):
        raise CheckpointError(f"{path}: {count} tensors, expected {len(expected)}")
    for _ in range(count):
        (name_len,) = struct.unpack("<H", r.take(2, "tensor name length"))
        name = r.take(name_len, "tensor name").decode("utf-8")
        (rank,) = struct.unpack("<I", r.take(4, f"rank of {name}"))
        dims = struct.unpack(f"<{rank}I", r.take(4 * rank, f"dims of {name}"))
        if name not in expected:
            raise CheckpointError(f"{path}: unexpected tensor {name!r}")
        if dims != expected[name]:
            raise CheckpointError(f"{path}: tensor {name!r} has dims {dims}, "
                                  f"config implies {expected[name]}")
        n_items = int(np.prod(dims, dtype=np.int64)) if rank else 1
        data = np.frombuffer(r.take(4 * n_items, f"data of {name}"), dtype="<f4")
        model.params[name] = Param(name, data.reshape(dims).copy(),
                                   constrained=name in constrained)
    if r.pos != len(raw):
        raise CheckpointError(f"{path}: {len(raw) - r.pos} trailing bytes")
    missing = set(expected) - set(model.params)
    if missing:
        raise CheckpointError(f"{path}: missing tensors {sorted(missing)}")
    return model
