"""Three-stage gaze proxy: saccadic freeze, fixation jitter and sensor lag.

A raw pointer stream is differentiated to get angular velocity. Above the
saccade threshold the cursor is frozen; below the fixation threshold the
lagged cursor receives i.i.d. Gaussian jitter per axis; in between only the
first-order lag applies.

The lag filter state is kept separately from the emitted point so that the
jitter is not fed back through the filter: the emitted SD during a steady
fixation is exactly ``jitter_sigma_deg * ppd``.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, replace
from enum import Enum
from typing import Iterable, Sequence

import numpy as np

from .calib import DisplayCalibration

Point = tuple[float, float]


class GazeMode(str, Enum):
    FIXATION = "fixation"
    INTERMEDIATE = "intermediate"
    SACCADE = "saccade"


class GazeStepError(ValueError):
    pass


@dataclass(frozen=True)
class GazeSimParams:
    v_saccade_deg_s: float = 120.0
    v_fixation_deg_s: float = 30.0
    jitter_sigma_deg: float = 0.12
    lerp_alpha: float = 0.15
    tick_hz: float = 60.0

    def __post_init__(self) -> None:
        if not (0 < self.v_fixation_deg_s < self.v_saccade_deg_s):
            raise ValueError("need 0 < v_fixation_deg_s < v_saccade_deg_s")
        if self.jitter_sigma_deg < 0:
            raise ValueError("jitter_sigma_deg must be >= 0")
        if not (0 < self.lerp_alpha <= 1):
            raise ValueError("lerp_alpha must lie in (0, 1]")
        if self.tick_hz <= 0:
            raise ValueError("tick_hz must be positive")

    @property
    def dt_s(self) -> float:
        return 1.0 / self.tick_hz

    def classify(self, velocity_deg_s: float) -> GazeMode:
        if velocity_deg_s > self.v_saccade_deg_s:
            return GazeMode.SACCADE
        if velocity_deg_s < self.v_fixation_deg_s:
            return GazeMode.FIXATION
        return GazeMode.INTERMEDIATE


@dataclass(frozen=True)
class GazeSimState:
    last_raw_pt: Point | None
    last_out_pt: Point | None
    lag_pt: Point | None
    last_velocity_deg_s: float
    mode: GazeMode
    rng: np.random.Generator

    @classmethod
    def initial(cls, rng: np.random.Generator, start: Point | None = None) -> "GazeSimState":
        """Fresh stream state. With ``start`` the eye is assumed already settled there."""
        return cls(
            last_raw_pt=start,
            last_out_pt=start,
            lag_pt=start,
            last_velocity_deg_s=0.0,
            mode=GazeMode.FIXATION,
            rng=rng,
        )


def effective_time_constant(params: GazeSimParams) -> float:
    """Time constant in ms of the per-tick lerp viewed as a first-order filter."""
    if params.lerp_alpha >= 1.0:
        return 0.0
    dt_ms = 1000.0 / params.tick_hz
    return -dt_ms / math.log(1.0 - params.lerp_alpha)


def step(
    state: GazeSimState,
    raw_pt: Point,
    dt_s: float,
    params: GazeSimParams,
    calib: DisplayCalibration,
) -> tuple[GazeSimState, Point]:
    """Advance the transform by one tick and return ``(new_state, out_pt)``."""
    if not (dt_s > 0 and math.isfinite(dt_s)):
        raise GazeStepError(f"dt_s must be positive, got {dt_s!r}")
    rx, ry = float(raw_pt[0]), float(raw_pt[1])
    if not (math.isfinite(rx) and math.isfinite(ry)):
        raise GazeStepError(f"non-finite raw point {raw_pt!r}")

    if state.last_raw_pt is None:
        # first tick of a stream: no derivative yet
        velocity = 0.0
        lag_x, lag_y = rx, ry
        prev_out = (rx, ry)
    else:
        dx = rx - state.last_raw_pt[0]
        dy = ry - state.last_raw_pt[1]
        velocity = math.hypot(dx, dy) / calib.ppd / dt_s
        lag_x, lag_y = state.lag_pt
        prev_out = state.last_out_pt

    mode = params.classify(velocity)
    if mode is GazeMode.SACCADE:
        out = prev_out
    else:
        a = params.lerp_alpha
        lag_x += a * (rx - lag_x)
        lag_y += a * (ry - lag_y)
        if mode is GazeMode.FIXATION and params.jitter_sigma_deg > 0:
            sd = params.jitter_sigma_deg * calib.ppd
            jx, jy = state.rng.normal(0.0, sd, size=2)
            out = (lag_x + float(jx), lag_y + float(jy))
        else:
            out = (lag_x, lag_y)

    new_state = replace(
        state,
        last_raw_pt=(rx, ry),
        last_out_pt=out,
        lag_pt=(lag_x, lag_y),
        last_velocity_deg_s=velocity,
        mode=mode,
    )
    return new_state, out


def transform_stream(
    raw_points: Sequence[Point] | np.ndarray,
    params: GazeSimParams,
    calib: DisplayCalibration,
    rng: np.random.Generator,
    start: Point | None = None,
) -> tuple[np.ndarray, np.ndarray, list[GazeMode]]:
    """Run a whole stream at the params' tick rate.

    Returns ``(out_points, velocities, modes)``.
    """
    state = GazeSimState.initial(rng, start)
    dt = params.dt_s
    n = len(raw_points)
    out = np.empty((n, 2))
    vel = np.empty(n)
    modes: list[GazeMode] = []
    for i in range(n):
        state, pt = step(state, raw_points[i], dt, params, calib)
        out[i] = pt
        vel[i] = state.last_velocity_deg_s
        modes.append(state.mode)
    return out, vel, modes


TRACE_COLUMNS = ("tick", "raw_x", "raw_y", "out_x", "out_y", "v_deg_s", "mode")


def trace_rows(
    raw_points: Sequence[Point] | np.ndarray,
    out_points: np.ndarray,
    velocities: np.ndarray,
    modes: Iterable[GazeMode],
) -> list[dict]:
    rows = []
    for i, mode in enumerate(modes):
        rows.append(
            {
                "tick": i,
                "raw_x": float(raw_points[i][0]),
                "raw_y": float(raw_points[i][1]),
                "out_x": float(out_points[i][0]),
                "out_y": float(out_points[i][1]),
                "v_deg_s": float(velocities[i]),
                "mode": mode.value,
            }
        )
    return rows


def write_trace_csv(path, rows: Iterable[dict]) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.DictWriter(fh, fieldnames=TRACE_COLUMNS)
        writer.writeheader()
        for row in rows:
            writer.writerow(row)
