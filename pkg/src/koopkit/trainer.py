"""Training loop: curriculum multi-step rollout loss, plus cyclic-consistency
and boundedness penalties for models with a control transformation.

Per optimizer step: sample window anchors from the training region (the final
holdout fraction of the series is never touched, and no window straddles the
boundary), chain the model n steps from one lift, penalize the observable head
against the true observations with a mean squared L2 loss, add the weighted
penalty terms, update with Adam, and re-project constrained weights.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, fields
from typing import Optional

import numpy as np

from . import diffcore as dc
from .diffcore import AdamState, Tape
from .models import Model, ModelKind, Normalization, lift_batch, save_checkpoint, step_batch
from .netblocks import control_decode, control_encode
from .rng import Xoshiro256
from .simwell import TrajectoryDataset, train_val_boundary

CSV_HEADER = "step,n,dynamics,cyc,bound,total,val_rms"


class TrainingAborted(RuntimeError):
    """Training stopped on a non-finite loss or gradient; the checkpoint from
    the last evaluation point is whatever remains on disk."""


@dataclass
class TrainConfig:
    total_steps: int
    batch_size: int = 256
    n_start: int = 10
    n_end: int = 25
    ramp_fraction: float = 0.5
    lambda_cyc: float = 1.0
    lambda_bound: float = 1.0
    lambda_bound_end: Optional[float] = None  # linear ramp target over training
    control_bound: float = 1.0
    control_range: tuple[float, float] = (-5.0, 5.0)
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    seed: int = 0
    eval_every: int = 500
    grad_clip: Optional[float] = None
    early_stop: bool = True
    early_stop_patience: int = 10
    early_stop_min_delta: float = 0.01
    val_windows: int = 512
    holdout_fraction: float = 0.05
    normalize_obs: bool = False

    def __post_init__(self):
        if self.total_steps < 0 or self.batch_size < 1:
            raise ValueError("total_steps must be >= 0 and batch_size >= 1")
        if self.n_start > self.n_end or self.n_start < 1:
            raise ValueError(f"need 1 <= n_start <= n_end, got {self.n_start}, {self.n_end}")
        if min(self.lambda_cyc, self.lambda_bound) < 0:
            raise ValueError("loss weights must be nonnegative")
        if self.lambda_bound_end is not None and self.lambda_bound_end < 0:
            raise ValueError("lambda_bound_end must be nonnegative")
        self.control_range = (float(self.control_range[0]), float(self.control_range[1]))

    @classmethod
    def from_dict(cls, data: dict) -> "TrainConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ValueError(f"unknown TrainConfig fields: {sorted(unknown)}")
        return cls(**data)

    @classmethod
    def from_json(cls, path) -> "TrainConfig":
        with open(path) as f:
            return cls.from_dict(json.load(f))

    def to_dict(self) -> dict:
        out = {f.name: getattr(self, f.name) for f in fields(self)}
        out["control_range"] = list(self.control_range)
        return out


@dataclass
class LossReport:
    step: int
    n: int
    dynamics: float
    cyc: float
    bound: float
    total: float
    val_rms: Optional[float] = None


@dataclass
class TrainBatch:
    obs_wins: np.ndarray   # [B, T+1, d_obs]
    ctrl_wins: np.ndarray  # [B, T+1, d_ctrl]
    fut_obs: np.ndarray    # [B, n, d_obs], targets for steps 1..n
    fut_ctrl: np.ndarray   # [B, n, d_ctrl], controls applied at steps 1..n


def effective_lambda_bound(step: int, cfg: TrainConfig) -> float:
    """Bound-penalty weight at a step: constant, or ramped linearly to
    lambda_bound_end so compliance tightens once the dynamics have formed."""
    if cfg.lambda_bound_end is None:
        return cfg.lambda_bound
    frac = step / cfg.total_steps if cfg.total_steps > 0 else 1.0
    return cfg.lambda_bound + (cfg.lambda_bound_end - cfg.lambda_bound) * frac


def curriculum_n(step: int, cfg: TrainConfig) -> int:
    """Chained-step count, ramped n_start -> n_end over the first
    ramp_fraction of training; rounds half away from zero."""
    if not 0 <= step <= cfg.total_steps:
        raise ValueError(f"step {step} outside [0, {cfg.total_steps}]")
    ramp = cfg.ramp_fraction * cfg.total_steps
    frac = 1.0 if ramp <= 0 else min(1.0, step / ramp)
    return int(math.floor(cfg.n_start + (cfg.n_end - cfg.n_start) * frac + 0.5))


def make_batch(ds: TrajectoryDataset, anchors: np.ndarray, t_hist: int, n: int) -> TrainBatch:
    """Gather history windows anchored at each index s plus their n-step
    futures: targets obs[s+1..s+n], controls ctrl[s..s+n-1]."""
    hist = anchors[:, None] + np.arange(-t_hist, 1)
    fut = anchors[:, None] + np.arange(1, n + 1)
    return TrainBatch(obs_wins=ds.obs[hist], ctrl_wins=ds.controls[hist],
                      fut_obs=ds.obs[fut], fut_ctrl=ds.controls[fut - 1])


def dynamics_loss(t: Tape, model: Model, batch: TrainBatch):
    """Mean over batch and steps of the squared error between the lifted
    head and the true observation; gradients flow through every chained step
    and the lift. Returns (loss node, lifted start node, encoded controls)."""
    b, n = batch.fut_obs.shape[:2]
    targets = batch.fut_obs
    if model.normalization is not None:
        targets = model.normalization.apply(targets)
    xbar0 = lift_batch(t, model, batch.obs_wins, batch.ctrl_wins)
    x = xbar0
    terms = []
    cbars = []
    w = 1.0 / (b * n)
    for step in range(n):
        x, cbar = step_batch(t, model, x, t.leaf(batch.fut_ctrl[:, step, :]))
        if cbar is not None:
            cbars.append(cbar)
        pred = dc.slice_cols(t, x, 0, model.d_obs)
        diff = dc.sub(t, pred, t.leaf(targets[:, step, :]))
        terms.append((dc.sumsq(t, diff), w))
    return dc.scalar_sum(t, terms), xbar0, cbars


def cyclic_losses(t: Tape, model: Model, cfg: TrainConfig, rng: Xoshiro256,
                  xbar_pool: np.ndarray):
    """Round-trip penalties for the control transformation, evaluated at
    sampled controls and lifted states from the current batch. The pool is a
    plain array, so no gradient reaches the lifting network through it.
    Returns (loss node, encoded-control node for the bound penalty)."""
    if model.kind is not ModelKind.EXTENDED:
        raise dc.UsageError("cyclic losses apply only to models with a control transformation")
    b = xbar_pool.shape[0]
    lo, hi = cfg.control_range
    bc = model.ae_cfg.bound
    c_samples = dc.uniform_array(rng, (b, model.d_ctrl), lo, hi)
    cbar_samples = dc.uniform_array(rng, (b, model.d_ctrl), -bc, bc)

    xb = t.leaf(xbar_pool)
    c_leaf = t.leaf(c_samples)
    enc = control_encode(t, model.ae_cfg, model.params, "ae.", c_leaf, xb)
    dec = control_decode(t, model.ae_cfg, model.params, "ae.", enc, xb)
    fwd_term = dc.sumsq(t, dc.sub(t, c_leaf, dec))

    cbar_leaf = t.leaf(cbar_samples)
    dec2 = control_decode(t, model.ae_cfg, model.params, "ae.", cbar_leaf, xb)
    enc2 = control_encode(t, model.ae_cfg, model.params, "ae.", dec2, xb)
    rev_term = dc.sumsq(t, dc.sub(t, cbar_leaf, enc2))

    return dc.scalar_sum(t, [(fwd_term, 1.0 / b), (rev_term, 1.0 / b)]), enc


def bound_penalty(t: Tape, cbar_nodes, bound: float):
    """Mean over all encoded-control elements of max(0, |v| - bound)^2;
    zero (and flat) strictly inside the bound."""
    total = sum(int(np.prod(node.value.shape)) for node in cbar_nodes)
    terms = []
    for node in cbar_nodes:
        hinge = dc.relu(t, dc.add_const(t, dc.abs_(t, node), -bound))
        terms.append((dc.sumsq(t, hinge), 1.0 / total))
    return dc.scalar_sum(t, terms)


def _anchor_range(ds: TrajectoryDataset, cfg: TrainConfig, t_hist: int) -> tuple[int, int, int]:
    n_train = train_val_boundary(ds.n, cfg.holdout_fraction)
    lo = t_hist
    hi = n_train - 1 - cfg.n_end
    if hi < lo:
        raise ValueError(f"dataset too short: {ds.n} records cannot supply a "
                         f"{t_hist}-history window with {cfg.n_end} future steps")
    return lo, hi, n_train


def _val_windows(ds: TrajectoryDataset, cfg: TrainConfig, t_hist: int, n_train: int,
                 rng: Xoshiro256):
    lo = n_train + t_hist
    hi = ds.n - 2
    if hi < lo:
        return None
    count = min(cfg.val_windows, hi - lo + 1)
    anchors = np.array(sorted(lo + rng.randint(hi - lo + 1) for _ in range(count)))
    return make_batch(ds, anchors, t_hist, 1)


def _val_rms(model: Model, batch: TrainBatch) -> float:
    """One-step position RMS on held-out windows, in raw observation units."""
    from .models import head
    t = Tape()
    x = lift_batch(t, model, batch.obs_wins, batch.ctrl_wins)
    x, _ = step_batch(t, model, x, t.leaf(batch.fut_ctrl[:, 0, :]))
    pred = head(model, x.value)
    err = pred[:, 0].astype(np.float64) - batch.fut_obs[:, 0, 0].astype(np.float64)
    return float(np.sqrt(np.mean(err * err)))


def _format_row(r: LossReport) -> str:
    val = "" if r.val_rms is None else f"{r.val_rms:.9g}"
    return (f"{r.step},{r.n},{r.dynamics:.9g},{r.cyc:.9g},"
            f"{r.bound:.9g},{r.total:.9g},{val}")


def train(model: Model, ds: TrajectoryDataset, cfg: TrainConfig,
          csv_path=None, ckpt_path=None) -> list[LossReport]:
    """Optimize the model in place; returns the per-step loss series.

    Checkpoints are written to ckpt_path at every evaluation point, so a
    non-finite abort (TrainingAborted) leaves the last good checkpoint on
    disk. A fixed seed makes the entire run, including the final checkpoint
    bytes, reproducible.
    """
    if ds.d_obs != model.d_obs or ds.d_ctrl != model.d_ctrl:
        raise dc.ShapeMismatch(f"dataset dims ({ds.d_obs}, {ds.d_ctrl}) do not match "
                               f"model dims ({model.d_obs}, {model.d_ctrl})")
    lo, hi, n_train = _anchor_range(ds, cfg, model.t_hist)
    if cfg.normalize_obs and model.normalization is None:
        train_obs = ds.obs[:n_train].astype(np.float64)
        std = np.maximum(train_obs.std(axis=0), 1e-6)
        model.normalization = Normalization(train_obs.mean(axis=0).astype(np.float32),
                                            std.astype(np.float32))
    model.control_range = cfg.control_range

    rng = Xoshiro256(cfg.seed)
    val_batch = _val_windows(ds, cfg, model.t_hist, n_train, rng.split())
    adam = AdamState(model.params, lr=cfg.lr, beta1=cfg.beta1, beta2=cfg.beta2, eps=cfg.eps)
    extended = model.kind is ModelKind.EXTENDED

    reports: list[LossReport] = []
    csv_file = open(csv_path, "w") if csv_path else None
    if csv_file:
        csv_file.write(CSV_HEADER + "\n")
    best_val = math.inf
    evals_since_improve = 0
    span = hi - lo + 1
    try:
        for step in range(cfg.total_steps):
            n = curriculum_n(step, cfg)
            anchors = np.fromiter((lo + rng.randint(span) for _ in range(cfg.batch_size)),
                                  dtype=np.int64, count=cfg.batch_size)
            batch = make_batch(ds, anchors, model.t_hist, n)

            t = Tape()
            dyn_node, xbar0, cbars = dynamics_loss(t, model, batch)
            if extended:
                cyc_node, enc_extra = cyclic_losses(t, model, cfg, rng, xbar0.value)
                bound_node = bound_penalty(t, cbars + [enc_extra], cfg.control_bound)
                lam_b = effective_lambda_bound(step, cfg)
                total_node = dc.scalar_sum(t, [(dyn_node, 1.0), (cyc_node, cfg.lambda_cyc),
                                               (bound_node, lam_b)])
                cyc_v, bound_v = cyc_node.value, bound_node.value
            else:
                total_node = dyn_node
                cyc_v = bound_v = 0.0

            if not math.isfinite(total_node.value):
                raise TrainingAborted(f"non-finite loss {total_node.value!r} at step {step}")
            try:
                grads, _ = dc.backward(t, total_node)
                dc.adam_step(model.params, grads, adam, cfg.grad_clip)
            except dc.NonFiniteError as e:
                raise TrainingAborted(f"step {step}: {e}") from e
            dc.project_nonnegative(model.params)

            val = None
            at_eval = (step + 1) % cfg.eval_every == 0 or step + 1 == cfg.total_steps
            if at_eval and val_batch is not None:
                val = _val_rms(model, val_batch)
            report = LossReport(step, n, dyn_node.value, cyc_v, bound_v,
                                total_node.value, val)
            reports.append(report)
            if csv_file:
                csv_file.write(_format_row(report) + "\n")

            if at_eval:
                model.training_meta = {"steps_completed": step + 1,
                                       "final_dynamics": report.dynamics,
                                       "final_total": report.total,
                                       "val_rms": val,
                                       "train_seed": cfg.seed}
                if ckpt_path:
                    save_checkpoint(model, ckpt_path)
                if val is not None and cfg.early_stop:
                    if val < best_val * (1.0 - cfg.early_stop_min_delta):
                        best_val = val
                        evals_since_improve = 0
                    else:
                        evals_since_improve += 1
                        if evals_since_improve >= cfg.early_stop_patience:
                            break
    finally:
        if csv_file:
            csv_file.close()
    if cfg.total_steps > 0 and reports:
        model.training_meta = {"steps_completed": reports[-1].step + 1,
                               "final_dynamics": reports[-1].dynamics,
                               "final_total": reports[-1].total,
                               "val_rms": reports[-1].val_rms,
                               "train_seed": cfg.seed}
        if ckpt_path:
            save_checkpoint(model, ckpt_path)
    return reports
