"""Rule-based adaptation controller with a hysteresis gate.

Trigger per trial: ``consecutive_errors >= error_burst`` or the trial RT
exceeds the nearest-rank 75th percentile of the block's rolling RT window
(armed once the window holds ``min_window`` RTs). ``hysteresis_n``
consecutive trigger-true trials activate the modality's adaptation;
``hysteresis_n`` consecutive trigger-false trials deactivate it.
"""

from __future__ import annotations

import math
from collections import deque
from dataclasses import dataclass, field
from typing import Iterable

from .trial import Modality, Outcome, TrialRecord

DECLUTTER_ON = "declutter_on"
DECLUTTER_OFF = "declutter_off"
INFLATE_WIDTH = "inflate_width"
RESTORE_WIDTH = "restore_width"
ACTION_KINDS = (DECLUTTER_ON, DECLUTTER_OFF, INFLATE_WIDTH, RESTORE_WIDTH)


class PolicyError(ValueError):
    pass


@dataclass(frozen=True)
class PolicyConfig:
    hysteresis_n: int = 2
    error_burst: int = 2
    rt_window: int = 20
    min_window: int = 8
    rt_percentile: float = 75.0
    width_scale: float = 1.5
    faithful_bug: bool = False

    def __post_init__(self) -> None:
        if self.hysteresis_n < 1 or self.error_burst < 1:
            raise ValueError("hysteresis_n and error_burst must be >= 1")
        if not (1 <= self.min_window <= self.rt_window):
            raise ValueError("need 1 <= min_window <= rt_window")
        if not (0 < self.rt_percentile <= 100):
            raise ValueError("rt_percentile must lie in (0, 100]")
        if self.width_scale < 1.0:
            raise ValueError("width_scale must be >= 1.0")


@dataclass(frozen=True)
class Action:
    trial_idx: int
    kind: str
    value: float | None = None


@dataclass(frozen=True)
class UiState:
    declutter_active: bool = False
    width_scale: float = 1.0

    @property
    def hud_visible(self) -> bool:
        return not self.declutter_active


def nearest_rank(values: Iterable[float], percentile: float) -> float:
    ordered = sorted(values)
    if not ordered:
        raise ValueError("empty window")
    rank = max(1, math.ceil(percentile / 100.0 * len(ordered)))
    return ordered[rank - 1]


@dataclass
class PolicyState:
    modality: Modality
    consecutive_errors: int = 0
    rt_window: deque = field(default_factory=deque)
    hysteresis_on_count: int = 0
    hysteresis_off_count: int = 0
    active: bool = False
    declutter_active: bool = False
    width_scale: float = 1.0
    actions_emitted: list[Action] = field(default_factory=list)

    def __post_init__(self) -> None:
        self.modality = Modality(self.modality)


def trigger_condition(state: PolicyState, record: TrialRecord, config: PolicyConfig) -> bool:
    """Evaluate the trigger for ``record`` against the state *before* it was folded in."""
    errors = state.consecutive_errors + 1 if record.outcome is not Outcome.HIT else 0
    burst = errors >= config.error_burst
    slow = False
    if record.rt_ms is not None and len(state.rt_window) >= config.min_window:
        slow = record.rt_ms > nearest_rank(state.rt_window, config.rt_percentile)
    return burst or slow


def observe_trial(
    state: PolicyState, record: TrialRecord, config: PolicyConfig
) -> tuple[PolicyState, list[Action], bool]:
    """Fold one trial into the policy state.

    Returns ``(new_state, actions, triggered)``. The input state is not mutated.
    """
    triggered = trigger_condition(state, record, config)
    new = PolicyState(
        modality=state.modality,
        consecutive_errors=state.consecutive_errors + 1 if record.outcome is not Outcome.HIT else 0,
        rt_window=deque(state.rt_window, maxlen=config.rt_window),
        hysteresis_on_count=state.hysteresis_on_count,
        hysteresis_off_count=state.hysteresis_off_count,
        active=state.active,
        declutter_active=state.declutter_active,
        width_scale=state.width_scale,
        actions_emitted=list(state.actions_emitted),
    )
    if record.rt_ms is not None:
        new.rt_window.append(record.rt_ms)

    actions: list[Action] = []
    if not new.active:
        new.hysteresis_on_count = new.hysteresis_on_count + 1 if triggered else 0
        if new.hysteresis_on_count >= config.hysteresis_n:
            new.active = True
            new.hysteresis_on_count = 0
            new.hysteresis_off_count = 0
            if new.modality is Modality.GAZE:
                actions.append(Action(record.trial_idx, DECLUTTER_ON))
            else:
                actions.append(Action(record.trial_idx, INFLATE_WIDTH, config.width_scale))
    else:
        new.hysteresis_off_count = 0 if triggered else new.hysteresis_off_count + 1
        if new.hysteresis_off_count >= config.hysteresis_n:
            new.active = False
            new.hysteresis_on_count = 0
            new.hysteresis_off_count = 0
            if new.modality is Modality.GAZE:
                actions.append(Action(record.trial_idx, DECLUTTER_OFF))
            else:
                actions.append(Action(record.trial_idx, RESTORE_WIDTH, 1.0))
    new.declutter_active = new.active and new.modality is Modality.GAZE
    inflated = new.active and new.modality is Modality.HAND and not config.faithful_bug
    new.width_scale = config.width_scale if inflated else 1.0
    new.actions_emitted.extend(actions)
    return new, actions, triggered


def apply_actions(actions: Iterable[Action], ui: UiState, faithful_bug: bool = False) -> UiState:
    """Apply emitted actions to the UI for the next trial.

    With ``faithful_bug`` width inflation is emitted but never reaches the
    rendered targets, so the scale stays at 1.0.
    """
    declutter, scale = ui.declutter_active, ui.width_scale
    for action in actions:
        if action.kind == DECLUTTER_ON:
            declutter = True
        elif action.kind == DECLUTTER_OFF:
            declutter = False
        elif action.kind == INFLATE_WIDTH:
            if not faithful_bug:
                scale = float(action.value if action.value is not None else 1.5)
        elif action.kind == RESTORE_WIDTH:
            scale = 1.0
        else:
            raise PolicyError(f"unknown action kind {action.kind!r}")
    if faithful_bug:
        scale = 1.0
    return UiState(declutter_active=declutter, width_scale=scale)


def replay(records: Iterable[TrialRecord], modality: Modality, config: PolicyConfig) -> PolicyState:
    """Rebuild a block's policy state from its trial records alone."""
    state = PolicyState(modality=modality)
    for record in records:
        state, _, _ = observe_trial(state, record, config)
    return state
