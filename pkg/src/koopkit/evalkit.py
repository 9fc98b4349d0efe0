"""Rollout comparison metrics and artifacts: divergence horizons, per-step
error curves, and deterministic CSV/SVG emission."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .diffcore import Tape
from .models import (Model, ModelKind, RolloutResult, head, lift_batch,
                     rollout_batch, step_batch)
from .netblocks import control_decode, control_encode
from .rng import Xoshiro256
from .simwell import TrajectoryDataset, train_val_boundary

DEFAULT_TAU = 0.5          # half the well-to-barrier distance
DEFAULT_EVAL_SEED = 2023   # fixed seed for held-out window sampling

ROLLOUT_CSV_COLUMNS = ("t", "true_pos", "pred_pos_traditional", "pred_pos_convex",
                       "pred_pos_extended", "control")
SVG_COLORS = {"true": "#202020", "traditional": "#c23b3b",
              "convex": "#d99114", "extended": "#00a4a0", "control": "#9aa0a6"}


@dataclass
class HorizonReport:
    tau: float
    horizons: dict[str, list[int]]   # model kind -> per-window horizons
    medians: dict[str, float]


class EmptyResultSet(ValueError):
    pass


def divergence_horizon(result: RolloutResult, tau: float = DEFAULT_TAU) -> int:
    """First step whose position error exceeds tau; H when it never does."""
    if tau <= 0:
        raise ValueError("tau must be positive")
    err = np.abs(result.predicted[:, 0].astype(np.float64)
                 - result.truth[:, 0].astype(np.float64))
    over = np.nonzero(err > tau)[0]
    return int(over[0]) + 1 if len(over) else len(err)


def rollout_error_curve(results: Sequence[RolloutResult]) -> np.ndarray:
    """Per-step RMS of position error across rollouts."""
    if not results:
        raise EmptyResultSet("no rollouts to summarize")
    h = len(results[0].predicted)
    errs = np.stack([(r.predicted[:, 0].astype(np.float64)
                      - r.truth[:, 0].astype(np.float64)) for r in results])
    if any(len(r.predicted) != h for r in results):
        raise ValueError("rollouts have differing horizons")
    return np.sqrt(np.mean(errs * errs, axis=0))


def sample_eval_windows(ds: TrajectoryDataset, t_hist: int, n_windows: int = 20,
                        horizon: int = 120, seed: int = DEFAULT_EVAL_SEED,
                        holdout_fraction: float = 0.05) -> np.ndarray:
    """Anchor indices for held-out evaluation windows (validation region only)."""
    n_train = train_val_boundary(ds.n, holdout_fraction)
    lo = n_train + t_hist
    hi = ds.n - 1 - horizon
    if hi < lo:
        raise ValueError(f"validation split too short for horizon {horizon}")
    rng = Xoshiro256(seed)
    return np.array(sorted(lo + rng.randint(hi - lo + 1) for _ in range(n_windows)))


def rollouts_at(model: Model, ds: TrajectoryDataset, anchors: np.ndarray,
                horizon: int) -> list[RolloutResult]:
    """Batched rollouts for windows anchored at the given indices."""
    hist = anchors[:, None] + np.arange(-model.t_hist, 1)
    fut = anchors[:, None] + np.arange(1, horizon + 1)
    controls = ds.controls[fut - 1]
    preds = rollout_batch(model, ds.obs[hist], ds.controls[hist], controls)
    return [RolloutResult(predicted=preds[i], truth=ds.obs[fut[i]],
                          controls=controls[i], kind=model.kind)
            for i in range(len(anchors))]


def evaluate_horizons(models: Sequence[Model], ds: TrajectoryDataset,
                      n_windows: int = 20, horizon: int = 120,
                      tau: float = DEFAULT_TAU, seed: int = DEFAULT_EVAL_SEED,
                      holdout_fraction: float = 0.05
                      ) -> tuple[HorizonReport, dict[str, list[RolloutResult]]]:
    anchors = sample_eval_windows(ds, models[0].t_hist, n_windows, horizon,
                                  seed, holdout_fraction)
    horizons: dict[str, list[int]] = {}
    all_rollouts: dict[str, list[RolloutResult]] = {}
    for model in models:
        rolls = rollouts_at(model, ds, anchors, horizon)
        key = model.kind.value
        all_rollouts[key] = rolls
        horizons[key] = [divergence_horizon(r, tau) for r in rolls]
    medians = {k: float(np.median(v)) for k, v in horizons.items()}
    return HorizonReport(tau=tau, horizons=horizons, medians=medians), all_rollouts


# --- control-transformation quality ----------------------------------------

def cyclic_error_stats(model: Model, ds: TrajectoryDataset, n_samples: int = 1000,
                       seed: int = DEFAULT_EVAL_SEED,
                       holdout_fraction: float = 0.05) -> dict[str, float]:
    """Round-trip relative error and bound compliance of the control
    transformation, measured at held-out lifted states and fresh controls."""
    if model.kind is not ModelKind.EXTENDED:
        raise ValueError("cyclic statistics require a control transformation")
    rng = Xoshiro256(seed)
    n_train = train_val_boundary(ds.n, holdout_fraction)
    lo_a, hi_a = n_train + model.t_hist, ds.n - 1
    anchors = np.array([lo_a + rng.randint(hi_a - lo_a + 1) for _ in range(n_samples)])
    hist = anchors[:, None] + np.arange(-model.t_hist, 1)

    lo, hi = model.control_range if model.control_range else (-5.0, 5.0)
    from .diffcore import uniform_array
    bc = model.ae_cfg.bound
    controls = uniform_array(rng, (n_samples, model.d_ctrl), lo, hi)
    encoded_samples = uniform_array(rng, (n_samples, model.d_ctrl), -bc, bc)

    def rel_error(reconstructed, original):
        diff = reconstructed.astype(np.float64) - original.astype(np.float64)
        norms = np.linalg.norm(original.astype(np.float64), axis=1)
        keep = norms > 1e-9
        return np.linalg.norm(diff[keep], axis=1) / norms[keep]

    t = Tape()
    xbar = lift_batch(t, model, ds.obs[hist], ds.controls[hist])
    c_leaf = t.leaf(controls)
    enc = control_encode(t, model.ae_cfg, model.params, "ae.", c_leaf, xbar)
    dec = control_decode(t, model.ae_cfg, model.params, "ae.", enc, xbar)
    cbar_leaf = t.leaf(encoded_samples)
    dec2 = control_decode(t, model.ae_cfg, model.params, "ae.", cbar_leaf, xbar)
    enc2 = control_encode(t, model.ae_cfg, model.params, "ae.", dec2, xbar)

    within = np.abs(enc.value) <= 1.02 * bc
    return {"median_rel_error": float(np.median(rel_error(dec.value, controls))),
            "median_rel_error_reverse": float(np.median(rel_error(enc2.value,
                                                                  encoded_samples))),
            "bound_fraction": float(np.mean(within))}


# --- artifact emission -------------------------------------------------------

def _fmt(v: float) -> str:
    return f"{v:.9g}"


def _group_by_kind(results: Sequence[RolloutResult]) -> dict[str, RolloutResult]:
    by_kind = {}
    for r in results:
        by_kind[ModelKind(r.kind).value] = r
    return by_kind


def emit_csv(obj, path) -> None:
    """Write either a rollout comparison (same window, one result per model
    kind) or a HorizonReport. Column names are part of the contract."""
    if isinstance(obj, HorizonReport):
        lines = ["model,tau,median_horizon,horizons"]
        for kind in sorted(obj.horizons):
            joined = ";".join(str(h) for h in obj.horizons[kind])
            lines.append(f"{kind},{_fmt(obj.tau)},{_fmt(obj.medians[kind])},{joined}")
    else:
        results = [obj] if isinstance(obj, RolloutResult) else list(obj)
        if not results:
            raise EmptyResultSet("nothing to emit")
        by_kind = _group_by_kind(results)
        first = results[0]
        h = len(first.predicted)
        lines = [",".join(ROLLOUT_CSV_COLUMNS)]
        for i in range(h):
            row = [str(i + 1), _fmt(float(first.truth[i, 0]))]
            for kind in ("traditional", "convex", "extended"):
                r = by_kind.get(kind)
                row.append(_fmt(float(r.predicted[i, 0])) if r is not None else "")
            row.append(_fmt(float(first.controls[i, 0])))
            lines.append(",".join(row))
    with open(path, "w") as f:
        f.write("\n".join(lines) + "\n")


def emit_svg(results, path) -> None:
    """Self-contained 960x480 line plot: truth, one polyline per model
    prediction, the control series, and a legend."""
    results = [results] if isinstance(results, RolloutResult) else list(results)
    if not results:
        raise EmptyResultSet("nothing to plot")
    by_kind = _group_by_kind(results)
    first = results[0]
    h = len(first.predicted)

    series: list[tuple[str, np.ndarray]] = [("true", first.truth[:, 0])]
    for kind in ("traditional", "convex", "extended"):
        if kind in by_kind:
            series.append((kind, by_kind[kind].predicted[:, 0]))
    series.append(("control", first.controls[:, 0]))

    values = np.concatenate([s for _, s in series]).astype(np.float64)
    y_lo, y_hi = float(values.min()), float(values.max())
    pad = 0.05 * max(y_hi - y_lo, 1e-6)
    y_lo, y_hi = y_lo - pad, y_hi + pad
    x0, x1, y0, y1 = 70.0, 930.0, 440.0, 40.0  # plot frame in viewBox units

    def sx(i: int) -> float:
        return x0 + (x1 - x0) * i / max(h - 1, 1)

    def sy(v: float) -> float:
        return y0 + (y1 - y0) * (v - y_lo) / (y_hi - y_lo)

    parts = ['<svg xmlns="http://www.w3.org/2000/svg" viewBox="0 0 960 480">',
             '<rect width="960" height="480" fill="white"/>',
             f'<rect x="{x0:.1f}" y="{y1:.1f}" width="{x1 - x0:.1f}" '
             f'height="{y0 - y1:.1f}" fill="none" stroke="#cccccc"/>']
    for frac in (0.0, 0.5, 1.0):
        v = y_lo + (y_hi - y_lo) * frac
        parts.append(f'<text x="8" y="{sy(v):.2f}" font-size="12" '
                     f'fill="#555555">{v:.3g}</text>')
        step_label = int(round((h - 1) * frac)) + 1
        parts.append(f'<text x="{sx(int(round((h - 1) * frac))):.2f}" y="466" '
                     f'font-size="12" fill="#555555">{step_label}</text>')
    for name, ys in series:
        pts = " ".join(f"{sx(i):.2f},{sy(float(v)):.2f}" for i, v in enumerate(ys))
        dash = ' stroke-dasharray="4 3"' if name == "control" else ""
        parts.append(f'<polyline fill="none" stroke="{SVG_COLORS[name]}" '
                     f'stroke-width="1.5"{dash} points="{pts}"/>')
    for i, (name, _) in enumerate(series):
        y = 24 + 16 * i
        parts.append(f'<line x1="80" y1="{y - 4}" x2="110" y2="{y - 4}" '
                     f'stroke="{SVG_COLORS[name]}" stroke-width="3"/>')
        parts.append(f'<text x="116" y="{y}" font-size="13" fill="#202020">{name}</text>')
    parts.append("</svg>")
    with open(path, "w") as f:
        f.write("\n".join(parts) + "\n")
