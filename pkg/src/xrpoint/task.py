"""ISO 9241-9 task execution: counterbalanced planning, tick-by-tick trials, outcomes."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .calib import DisplayCalibration
from .gaze import GazeSimParams, GazeSimState, step
from .policy import UiState
from .trial import (
    CONDITIONS,
    Element,
    HudConfig,
    Modality,
    Outcome,
    Pressure,
    RawInputScript,
    TrialLayout,
    TrialRecord,
    TrialSpec,
    UiMode,
    shannon_id,
)


class DesignError(ValueError):
    pass


class TrialError(RuntimeError):
    """A trial could not be executed (malformed script); it is excluded and logged."""


@dataclass(frozen=True)
class TaskConfig:
    trials_per_block: int = 27
    warmup_trials: int = 3
    n_directions: int = 8
    # (W_px, ID_bits) per difficulty level; D follows from the Shannon ID
    id_levels: tuple[tuple[float, float], ...] = ((80.0, 2.0), (50.0, 4.0), (30.0, 5.5))
    timeout_ms: float = 6000.0
    dwell_ms: float = 500.0
    tolerance_px: float = 10.0
    timeout_self_paced: bool = True
    self_paced_horizon_ms: float = 60000.0
    hud: HudConfig = field(default_factory=HudConfig)

    def __post_init__(self) -> None:
        measured = self.trials_per_block - self.warmup_trials
        if measured <= 0 or self.warmup_trials < 0:
            raise DesignError("trials_per_block must exceed warmup_trials")
        if self.n_directions < 2 or self.n_directions % 2:
            raise DesignError("n_directions must be even")
        if measured % self.n_directions:
            raise DesignError("measured trials per block must be a multiple of n_directions")
        for w, id_bits in self.id_levels:
            if not (30.0 <= w <= 80.0):
                raise DesignError(f"target width {w} outside 30-80 px")
            if not (2.0 <= id_bits <= 6.0):
                raise DesignError(f"ID {id_bits} outside 2-6 bits")

    @property
    def levels(self) -> list[tuple[float, float, float]]:
        """``(W, D, ID)`` per level."""
        return [(w, w * (2.0**id_bits - 1.0), id_bits) for w, id_bits in self.id_levels]


# ---------------------------------------------------------------------------
# counterbalancing


def generate_williams_square(n: int) -> list[list[int]]:
    """Williams design for an even number of conditions.

    First row is ``0, 1, n-1, 2, n-2, ...``; row ``i`` adds ``i`` mod ``n``.
    Every ordered pair of distinct conditions is adjacent in exactly one row.
    """
    if n <= 0 or n % 2:
        raise DesignError(f"Williams square needs an even positive n, got {n}")
    first = [0]
    lo, hi = 1, n - 1
    while len(first) < n:
        first.append(lo)
        lo += 1
        if len(first) < n:
            first.append(hi)
            hi -= 1
    return [[(c + i) % n for c in first] for i in range(n)]


@dataclass(frozen=True)
class BlockPlan:
    block_idx: int
    modality: Modality
    ui_mode: UiMode
    pressure: Pressure
    trials: tuple[TrialSpec, ...]


@dataclass(frozen=True)
class SessionPlan:
    participant_id: int
    williams_row_idx: int
    blocks: tuple[BlockPlan, ...]

    @property
    def trials(self) -> list[TrialSpec]:
        return [t for b in self.blocks for t in b.trials]


def plan_block(
    participant_id: int,
    block_idx: int,
    condition: tuple[Modality, UiMode, Pressure],
    design: TaskConfig,
    rng: np.random.Generator,
) -> BlockPlan:
    levels = design.levels
    n_levels = len(levels)
    n_dir = design.n_directions
    measured = design.trials_per_block - design.warmup_trials
    cycles = measured // n_dir
    # per-cycle level offsets: concatenated permutations, so each direction meets
    # every level once per n_levels cycles
    offsets: list[int] = []
    while len(offsets) < cycles:
        offsets.extend(int(v) for v in rng.permutation(n_levels))
    modality, ui_mode, pressure = condition
    specs = []
    for t in range(design.trials_per_block):
        direction = t % n_dir
        if t < design.warmup_trials:
            level = int(rng.integers(n_levels))
        else:
            cycle = (t - design.warmup_trials) // n_dir
            level = (direction + offsets[cycle]) % n_levels
        w, d, id_bits = levels[level]
        specs.append(
            TrialSpec(
                participant_id=participant_id,
                block_idx=block_idx,
                trial_idx=t,
                modality=modality,
                ui_mode=ui_mode,
                pressure=pressure,
                direction_idx=direction,
                W_px=w,
                D_px=d,
                ID_bits=shannon_id(d, w),
                is_practice=t < design.warmup_trials,
                n_directions=n_dir,
            )
        )
    return BlockPlan(block_idx, modality, ui_mode, pressure, tuple(specs))


def plan_session(participant_id: int, design: TaskConfig, seed: int) -> SessionPlan:
    square = generate_williams_square(len(CONDITIONS))
    row_idx = participant_id % len(CONDITIONS)
    rng = np.random.default_rng(seed)
    blocks = tuple(
        plan_block(participant_id, b, CONDITIONS[cond], design, rng)
        for b, cond in enumerate(square[row_idx])
    )
    return SessionPlan(participant_id, row_idx, blocks)


# ---------------------------------------------------------------------------
# trial execution


@dataclass(frozen=True)
class Selection:
    kind: str  # "click" or "dwell"
    element: str | None  # element acquired; for clicks only the goal is hit-tested
    t_ms: float
    x: float
    y: float


def classify_outcome(selection: Selection | None, goal: str) -> Outcome:
    if selection is None:
        return Outcome.TIMEOUT
    if selection.element == goal:
        return Outcome.HIT
    if selection.kind == "dwell":
        return Outcome.SLIP
    if selection.kind == "click":
        return Outcome.MISS
    raise ValueError(f"unknown selection kind {selection.kind!r}")


@dataclass(frozen=True)
class TrialContext:
    """Per-trial metadata echoed into the record."""

    seed: int = 0
    agent_profile: str = ""
    consecutive_errors_at_start: int = 0
    zoom: float = 1.0
    fullscreen: bool = True
    tab_hidden_ms: float = 0.0


def _horizon_ms(spec: TrialSpec, design: TaskConfig) -> float:
    if spec.pressure is Pressure.SELF_PACED and not design.timeout_self_paced:
        return design.self_paced_horizon_ms
    return design.timeout_ms


def run_trial(
    spec: TrialSpec,
    script: RawInputScript,
    gaze_params: GazeSimParams,
    ui: UiState,
    calib: DisplayCalibration,
    rng: np.random.Generator,
    design: TaskConfig | None = None,
    layout: TrialLayout | None = None,
    context: TrialContext | None = None,
) -> TrialRecord:
    design = design or TaskConfig()
    layout = layout or TrialLayout.build(spec, (calib.viewport_w_px, calib.viewport_h_px), design.hud)
    context = context or TrialContext()
    try:
        script.validate()
    except ValueError as exc:
        raise TrialError(f"trial {spec.block_idx}/{spec.trial_idx}: malformed script: {exc}") from exc

    dt_ms = 1000.0 / gaze_params.tick_hz
    horizon = _horizon_ms(spec, design)
    n_ticks = int(math.ceil(horizon / dt_ms - 1e-9))
    times = np.arange(n_ticks + 1) * dt_ms

    if spec.modality is Modality.HAND:
        sel, first_entry_k, hover_ticks, ticks = _run_hand(spec, script, ui, layout, times, horizon)
        width_scale = ui.width_scale
    else:
        sel, first_entry_k, hover_ticks, ticks = _run_gaze(
            script, gaze_params, ui, calib, rng, design, layout, times
        )
        width_scale = 1.0

    outcome = classify_outcome(sel, layout.goal.name)
    rt = sel.t_ms if sel is not None else None
    first_entry = None
    if first_entry_k is not None:
        first_entry = times[first_entry_k] if first_entry_k >= 0 else rt
    verification = rt - first_entry if (rt is not None and first_entry is not None) else None

    return TrialRecord(
        participant_id=spec.participant_id,
        block_idx=spec.block_idx,
        trial_idx=spec.trial_idx,
        is_practice=spec.is_practice,
        modality=spec.modality,
        ui_mode=spec.ui_mode,
        pressure=spec.pressure,
        target_angle_deg=spec.target_angle_deg,
        W_px=spec.W_px,
        D_px=spec.D_px,
        ID_bits=spec.ID_bits,
        start_x=layout.start[0],
        start_y=layout.start[1],
        target_x=layout.goal.x,
        target_y=layout.goal.y,
        outcome=outcome,
        selected_element=sel.element if sel is not None else None,
        rt_ms=rt,
        first_entry_ms=first_entry,
        verification_ms=verification,
        hover_total_ms=hover_ticks * dt_ms,
        submovement_count=script.submovements,
        endpoint_x=sel.x if sel is not None else None,
        endpoint_y=sel.y if sel is not None else None,
        width_scale_applied=width_scale,
        declutter_active=ui.declutter_active,
        policy_triggered=False,
        consecutive_errors_at_start=context.consecutive_errors_at_start,
        px_per_mm=calib.px_per_mm,
        ppd=calib.ppd,
        viewing_distance_mm=calib.viewing_distance_mm,
        dpr=calib.dpr,
        zoom=context.zoom,
        fullscreen=context.fullscreen,
        tab_hidden_ms=context.tab_hidden_ms,
        viewport_w_px=calib.viewport_w_px,
        viewport_h_px=calib.viewport_h_px,
        agent_profile=context.agent_profile,
        seed=context.seed,
        tick_count=ticks,
    )


def _run_hand(spec, script, ui, layout, times, horizon):
    """Cursor follows the raw path; selection is the click. Returns
    ``(selection, first_entry_tick, hover_ticks, ticks)``; a first-entry tick of
    -1 means the cursor first entered exactly at the click."""
    goal = layout.goal
    radius = goal.radius * ui.width_scale
    click = script.click_ms
    end = click if (click is not None and click <= horizon) else horizon
    n = int(np.searchsorted(times, end, side="right"))
    pts = script.sample(times[:n])
    inside = np.hypot(pts[:, 0] - goal.x, pts[:, 1] - goal.y) <= radius
    hover_ticks = int(inside.sum())
    first = int(np.argmax(inside)) if inside.any() else None
    if click is None or click > horizon:
        return None, first, hover_ticks, n
    cx, cy = script.position(click)
    hit = math.hypot(cx - goal.x, cy - goal.y) <= radius
    if first is None and hit:
        first = -1
    sel = Selection("click", goal.name if hit else None, float(click), cx, cy)
    return sel, first, hover_ticks, n


def _run_gaze(script, params, ui, calib, rng, design, layout, times):
    goal = layout.goal
    elements: tuple[Element, ...] = layout.selectable(ui.hud_visible)
    tol = design.tolerance_px
    dt_s = 1.0 / params.tick_hz
    dwell_ticks = int(math.ceil(design.dwell_ms / (1000.0 * dt_s) - 1e-9))
    raw = script.sample(times)
    state = GazeSimState.initial(rng, start=layout.start)
    candidate: Element | None = None
    entry_k = 0
    first_entry = None
    hover = 0
    for k in range(len(times)):
        state, (x, y) = step(state, raw[k], dt_s, params, calib)
        if goal.distance(x, y) <= goal.radius:
            hover += 1
            if first_entry is None:
                first_entry = k
        if candidate is not None and candidate.distance(x, y) <= candidate.radius + tol:
            if k - entry_k >= dwell_ticks:
                sel = Selection("dwell", candidate.name, float(times[k]), x, y)
                return sel, first_entry, hover, k + 1
            continue
        candidate = None
        for elem in elements:
            if elem.distance(x, y) <= elem.radius:
                candidate = elem
                entry_k = k
                break
    return None, first_entry, hover, len(times)
