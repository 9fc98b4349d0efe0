"""Forced, damped double-well particle simulator and the KOOPDS1 dataset format.

The potential is U(x) = (1 - x^2)^2, giving acceleration 4x(1 - x^2) + c for a
control force c. One timestep of 0.1 is integrated as 10 substeps in which the
velocity is updated (and damped by 0.99^(1/10)) before the position; the
damping order is part of the contract and is reproduced verbatim.

Dataset file layout (little-endian):
  magic "KOOPDS1\\0" | u32 d_obs | u32 d_ctrl | u64 n | f64 dt |
  n records of d_obs f32 observations followed by d_ctrl f32 controls.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

from .rng import Xoshiro256

DT = 0.1
SUBSTEPS = 10
SUBSTEP_H = DT / SUBSTEPS
DAMPING = 0.99 ** (1.0 / SUBSTEPS)
DIVERGENCE_LIMIT = 100.0

MAGIC = b"KOOPDS1\x00"


class DatasetFormatError(ValueError):
    """Raised when a dataset file fails validation."""


@dataclass
class WellState:
    x: float = 0.0
    v: float = 0.0


def well_force(x: float) -> float:
    """Restoring force 4x(1 - x^2); zero at the barrier top and both minima."""
    return 4.0 * x * (1.0 - x * x)


def well_energy(x: float, v: float) -> float:
    return 0.5 * v * v + (1.0 - x * x) ** 2


def well_step(state: WellState, c: float) -> WellState:
    """Advance one full timestep (10 substeps, 64-bit arithmetic)."""
    x, v = state.x, state.v
    for _ in range(SUBSTEPS):
        v = (v + SUBSTEP_H * (well_force(x) + c)) * DAMPING
        x = x + SUBSTEP_H * v
    if not (abs(x) < DIVERGENCE_LIMIT and np.isfinite(v)):
        raise RuntimeError(f"simulation diverged: x={x!r}, v={v!r}")
    return WellState(x, v)


@dataclass
class TrajectoryDataset:
    """Time series of (observation, control) records; controls[t] acted
    during [t, t+1)."""

    obs: np.ndarray       # [N, d_obs] float32
    controls: np.ndarray  # [N, d_ctrl] float32
    dt: float

    def __post_init__(self):
        self.obs = np.ascontiguousarray(self.obs, dtype=np.float32)
        self.controls = np.ascontiguousarray(self.controls, dtype=np.float32)
        if self.obs.ndim != 2 or self.controls.ndim != 2:
            raise DatasetFormatError("obs and controls must be 2-D")
        if len(self.obs) != len(self.controls) or len(self.obs) < 1:
            raise DatasetFormatError("obs/controls lengths disagree or are empty")

    @property
    def n(self) -> int:
        return len(self.obs)

    @property
    def d_obs(self) -> int:
        return self.obs.shape[1]

    @property
    def d_ctrl(self) -> int:
        return self.controls.shape[1]


def gen_dataset(n_steps: int, seed: int, control_range: tuple[float, float] = (-5.0, 5.0),
                init: WellState | None = None) -> TrajectoryDataset:
    """Simulate n_steps with i.i.d. uniform controls from a seeded generator.

    When init is omitted the starting position is drawn uniform on
    [-1.5, 1.5] (covering both wells) with zero velocity; the draw precedes
    the control stream so the whole dataset is a pure function of the seed.
    """
    if n_steps < 1:
        raise ValueError("n_steps must be >= 1")
    lo, hi = control_range
    rng = Xoshiro256(seed)
    if init is None:
        init = WellState(rng.uniform(-1.5, 1.5), 0.0)

    obs = np.empty((n_steps, 2), dtype=np.float32)
    controls = np.empty((n_steps, 1), dtype=np.float32)
    x, v = float(init.x), float(init.v)
    for t in range(n_steps):
        obs[t, 0] = x
        obs[t, 1] = v
        # apply the stored (f32-rounded) control so records replay exactly
        c = float(np.float32(rng.uniform(lo, hi)))
        controls[t, 0] = c
        for _ in range(SUBSTEPS):
            v = (v + SUBSTEP_H * (4.0 * x * (1.0 - x * x) + c)) * DAMPING
            x = x + SUBSTEP_H * v
        if not (-DIVERGENCE_LIMIT < x < DIVERGENCE_LIMIT):
            raise RuntimeError(f"simulation diverged at step {t}: x={x!r}")
    return TrajectoryDataset(obs, controls, DT)


def write_dataset(path, ds: TrajectoryDataset) -> None:
    header = MAGIC + struct.pack("<IIQd", ds.d_obs, ds.d_ctrl, ds.n, ds.dt)
    records = np.concatenate([ds.obs, ds.controls], axis=1).astype("<f4")
    with open(path, "wb") as f:
        f.write(header)
        f.write(records.tobytes())


def read_dataset(path) -> TrajectoryDataset:
    with open(path, "rb") as f:
        raw = f.read()
    if len(raw) < 8 or raw[:8] != MAGIC:
        raise DatasetFormatError(f"{path}: bad magic {raw[:8]!r}")
    header_len = 8 + struct.calcsize("<IIQd")
    if len(raw) < header_len:
        raise DatasetFormatError(f"{path}: truncated header ({len(raw)} bytes)")
    d_obs, d_ctrl, n, dt = struct.unpack("<IIQd", raw[8:header_len])
    expected = header_len + n * (d_obs + d_ctrl) * 4
    if len(raw) != expected:
        raise DatasetFormatError(
            f"{path}: expected {expected} bytes for {n} records, found {len(raw)}")
    records = np.frombuffer(raw[header_len:], dtype="<f4").reshape(n, d_obs + d_ctrl)
    return TrajectoryDataset(records[:, :d_obs].copy(), records[:, d_obs:].copy(), dt)


def train_val_boundary(n: int, holdout_fraction: float = 0.05) -> int:
    """Index of the first held-out record; the final fraction is validation."""
    boundary = int(n * (1.0 - holdout_fraction))
    return max(1, min(boundary, n - 1))
