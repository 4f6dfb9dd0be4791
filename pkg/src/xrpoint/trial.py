"""Trial-level domain types shared by the agents, the task engine and I/O."""

from __future__ import annotations

import math
from dataclasses import dataclass, field, fields
from enum import Enum

import numpy as np


class Modality(str, Enum):
    HAND = "hand"
    GAZE = "gaze"


class UiMode(str, Enum):
    STATIC = "static"
    ADAPTIVE = "adaptive"


class Pressure(str, Enum):
    SELF_PACED = "self_paced"
    TIME_LIMITED = "time_limited"


class Outcome(str, Enum):
    HIT = "hit"
    SLIP = "slip"
    MISS = "miss"
    TIMEOUT = "timeout"


# Factorial cell index: modality * 4 + ui_mode * 2 + pressure.
CONDITIONS: tuple[tuple[Modality, UiMode, Pressure], ...] = tuple(
    (m, u, p) for m in Modality for u in UiMode for p in Pressure
)


def condition_index(modality: Modality, ui_mode: UiMode, pressure: Pressure) -> int:
    return CONDITIONS.index((Modality(modality), UiMode(ui_mode), Pressure(pressure)))


def condition_key(modality, ui_mode, pressure) -> str:
    return f"{Modality(modality).value}|{UiMode(ui_mode).value}|{Pressure(pressure).value}"


def shannon_id(d_px: float, w_px: float) -> float:
    if not (d_px > 0 and w_px > 0):
        raise ValueError(f"D and W must be positive, got D={d_px!r}, W={w_px!r}")
    return math.log2(d_px / w_px + 1.0)


def sig6(x: float | None) -> float | None:
    """Round to the 6 significant digits used by the trial log."""
    if x is None:
        return None
    x = float(x)
    if not math.isfinite(x):
        return x
    return float(f"{x:.6g}")


@dataclass(frozen=True)
class TrialSpec:
    participant_id: int
    block_idx: int
    trial_idx: int
    modality: Modality
    ui_mode: UiMode
    pressure: Pressure
    direction_idx: int
    W_px: float
    D_px: float
    ID_bits: float
    is_practice: bool = False
    n_directions: int = 8

    def __post_init__(self) -> None:
        object.__setattr__(self, "modality", Modality(self.modality))
        object.__setattr__(self, "ui_mode", UiMode(self.ui_mode))
        object.__setattr__(self, "pressure", Pressure(self.pressure))
        if not (self.W_px > 0 and self.D_px > 0):
            raise ValueError("W_px and D_px must be positive")
        if abs(self.ID_bits - shannon_id(self.D_px, self.W_px)) > 1e-9:
            raise ValueError("ID_bits inconsistent with D_px and W_px")

    @property
    def target_angle_deg(self) -> float:
        return 360.0 * self.direction_idx / self.n_directions

    @property
    def condition(self) -> tuple[Modality, UiMode, Pressure]:
        return (self.modality, self.ui_mode, self.pressure)


@dataclass(frozen=True)
class Element:
    name: str
    x: float
    y: float
    radius: float

    def distance(self, x: float, y: float) -> float:
        return math.hypot(x - self.x, y - self.y)


@dataclass(frozen=True)
class HudConfig:
    """Side HUD: two selectable decoys plus a non-selectable status region.

    Offsets are measured from the viewport's top-right corner.
    """

    decoy_offsets: tuple[tuple[float, float], ...] = ((-220.0, 90.0), (-100.0, 90.0))
    decoy_radius_px: float = 20.0
    glance_offset: tuple[float, float] = (-160.0, 190.0)


@dataclass(frozen=True)
class TrialLayout:
    """Concrete screen geometry of one trial on the circular ISO 9241-9 layout."""

    center: tuple[float, float]
    start: tuple[float, float]
    goal: Element
    targets: tuple[Element, ...]
    decoys: tuple[Element, ...]
    hud_glance: tuple[float, float]
    start_name: str

    @classmethod
    def build(cls, spec: TrialSpec, viewport: tuple[int, int], hud: HudConfig | None = None) -> "TrialLayout":
        hud = hud or HudConfig()
        vw, vh = viewport
        cx, cy = vw / 2.0, vh / 2.0
        r_circle = spec.D_px / 2.0
        targets = []
        for k in range(spec.n_directions):
            theta = 2.0 * math.pi * k / spec.n_directions
            # screen y grows downward; angles run counter-clockwise on screen
            targets.append(
                Element(
                    f"target{k}",
                    cx + r_circle * math.cos(theta),
                    cy - r_circle * math.sin(theta),
                    spec.W_px / 2.0,
                )
            )
        goal = targets[spec.direction_idx]
        start_k = (spec.direction_idx + spec.n_directions // 2) % spec.n_directions
        start = targets[start_k]
        decoys = tuple(
            Element(f"hud{i}", vw + dx, dy, hud.decoy_radius_px)
            for i, (dx, dy) in enumerate(hud.decoy_offsets)
        )
        return cls(
            center=(cx, cy),
            start=(start.x, start.y),
            goal=goal,
            targets=tuple(targets),
            decoys=decoys,
            hud_glance=(vw + hud.glance_offset[0], hud.glance_offset[1]),
            start_name=start.name,
        )

    def neighbors(self) -> tuple[Element, Element]:
        n = len(self.targets)
        k = self.targets.index(self.goal)
        return self.targets[(k - 1) % n], self.targets[(k + 1) % n]

    def selectable(self, hud_visible: bool) -> tuple[Element, ...]:
        """Dwell-selectable elements; the just-acquired start target is not re-armed."""
        elems = [t for t in self.targets if t.name != self.start_name]
        if hud_visible:
            elems.extend(self.decoys)
        return tuple(elems)

    def projected_error(self, x: float, y: float) -> float:
        """Signed endpoint error along the start -> goal axis (overshoot positive)."""
        ax, ay = self.goal.x - self.start[0], self.goal.y - self.start[1]
        norm = math.hypot(ax, ay)
        return ((x - self.goal.x) * ax + (y - self.goal.y) * ay) / norm


@dataclass
class RawInputScript:
    """Timed raw pointer path (piecewise-linear waypoints) plus optional click.

    Between waypoints the position is linearly interpolated; after the last
    waypoint it holds.
    """

    t_ms: np.ndarray
    x: np.ndarray
    y: np.ndarray
    click_ms: float | None = None
    submovements: int = 1
    distractor: str | None = None
    notes: dict = field(default_factory=dict)

    def validate(self) -> None:
        t = np.asarray(self.t_ms, dtype=float)
        if t.ndim != 1 or t.size == 0:
            raise ValueError("script needs at least one waypoint")
        if not (len(self.x) == len(self.y) == t.size):
            raise ValueError("waypoint arrays differ in length")
        if not (np.all(np.isfinite(t)) and np.all(np.isfinite(self.x)) and np.all(np.isfinite(self.y))):
            raise ValueError("script contains non-finite values")
        if np.any(np.diff(t) < 0):
            raise ValueError("waypoint times must be non-decreasing")
        if self.click_ms is not None and not (math.isfinite(self.click_ms) and self.click_ms >= 0):
            raise ValueError("click time must be finite and non-negative")

    @property
    def duration_ms(self) -> float:
        return float(self.t_ms[-1]) if self.click_ms is None else float(self.click_ms)

    def position(self, t_ms: float) -> tuple[float, float]:
        return (
            float(np.interp(t_ms, self.t_ms, self.x)),
            float(np.interp(t_ms, self.t_ms, self.y)),
        )

    def sample(self, times_ms: np.ndarray) -> np.ndarray:
        return np.column_stack([np.interp(times_ms, self.t_ms, self.x), np.interp(times_ms, self.t_ms, self.y)])


@dataclass
class TrialRecord:
    participant_id: int
    block_idx: int
    trial_idx: int
    is_practice: bool
    modality: Modality
    ui_mode: UiMode
    pressure: Pressure
    target_angle_deg: float
    W_px: float
    D_px: float
    ID_bits: float
    start_x: float
    start_y: float
    target_x: float
    target_y: float
    outcome: Outcome
    selected_element: str | None
    rt_ms: float | None
    first_entry_ms: float | None
    verification_ms: float | None
    hover_total_ms: float
    submovement_count: int
    endpoint_x: float | None
    endpoint_y: float | None
    width_scale_applied: float
    declutter_active: bool
    policy_triggered: bool
    consecutive_errors_at_start: int
    px_per_mm: float
    ppd: float
    viewing_distance_mm: float
    dpr: float
    zoom: float
    fullscreen: bool
    tab_hidden_ms: float
    viewport_w_px: int
    viewport_h_px: int
    agent_profile: str
    seed: int
    tick_count: int
    tlx_mental: float | None = None
    tlx_physical: float | None = None
    tlx_temporal: float | None = None
    tlx_performance: float | None = None
    tlx_effort: float | None = None
    tlx_frustration: float | None = None

    def __post_init__(self) -> None:
        self.modality = Modality(self.modality)
        self.ui_mode = UiMode(self.ui_mode)
        self.pressure = Pressure(self.pressure)
        self.outcome = Outcome(self.outcome)
        # quantise every float to log precision so records survive a CSV round trip
        for f in fields(self):
            value = getattr(self, f.name)
            if isinstance(value, float):
                setattr(self, f.name, sig6(value))

    @property
    def condition(self) -> tuple[Modality, UiMode, Pressure]:
        return (self.modality, self.ui_mode, self.pressure)

    @property
    def is_error(self) -> bool:
        return self.outcome is not Outcome.HIT

    def projected_error(self) -> float | None:
        if self.endpoint_x is None or self.endpoint_y is None:
            return None
        ax, ay = self.target_x - self.start_x, self.target_y - self.start_y
        norm = math.hypot(ax, ay)
        return ((self.endpoint_x - self.target_x) * ax + (self.endpoint_y - self.target_y) * ay) / norm
