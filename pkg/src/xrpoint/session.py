"""Session orchestration: plan, run blocks with the policy in the loop, collect logs.

Every trial draws from its own generator seeded by
``(master_seed, participant, block, trial)``, so results do not depend on
execution order or on how participants are spread over workers.
"""

from __future__ import annotations

import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from .agents import simulate_gaze_intent, simulate_hand_trial
from .config import RunConfig
from .policy import INFLATE_WIDTH, Action, PolicyState, UiState, apply_actions, observe_trial
from .task import BlockPlan, TaskConfig, TrialContext, TrialError, plan_session, run_trial
from .trial import Modality, TrialLayout, TrialRecord, TrialSpec, UiMode

log = logging.getLogger(__name__)


def plan_seed(master_seed: int, participant_id: int) -> int:
    return int(np.random.SeedSequence([master_seed, participant_id]).generate_state(1)[0])


def trial_seed(master_seed: int, participant_id: int, block_idx: int, trial_idx: int) -> int:
    ss = np.random.SeedSequence([master_seed, participant_id, block_idx + 1, trial_idx + 1])
    return int(ss.generate_state(1)[0])


@dataclass(frozen=True)
class ActionLogEntry:
    participant_id: int
    block_idx: int
    trial_idx: int
    action: str
    value: float | None
    applied: bool


@dataclass
class SessionResult:
    participant_id: int
    records: list[TrialRecord] = field(default_factory=list)
    actions: list[ActionLogEntry] = field(default_factory=list)
    errors: list[str] = field(default_factory=list)


def simulate_trial(
    spec: TrialSpec,
    config: RunConfig,
    ui: UiState,
    seed: int,
    consecutive_errors: int = 0,
) -> TrialRecord:
    calib = config.calibration.build()
    design: TaskConfig = config.design
    layout = TrialLayout.build(spec, (calib.viewport_w_px, calib.viewport_h_px), design.hud)
    rng = np.random.default_rng(seed)
    if spec.modality is Modality.HAND:
        script = simulate_hand_trial(spec, config.hand_agent, rng, layout)
        profile = config.hand_agent.profile
    else:
        script = simulate_gaze_intent(
            spec, config.gaze_agent, ui.declutter_active, rng, layout, calib, horizon_ms=design.timeout_ms
        )
        profile = config.gaze_agent.profile
    context = TrialContext(seed=seed, agent_profile=profile, consecutive_errors_at_start=consecutive_errors)
    return run_trial(spec, script, config.gaze_sim, ui, calib, rng, design, layout, context)


def run_block(block: BlockPlan, config: RunConfig, result: SessionResult) -> None:
    adaptive = block.ui_mode is UiMode.ADAPTIVE
    policy = PolicyState(modality=block.modality)
    ui = UiState()
    faithful_bug = config.policy.faithful_bug
    for spec in block.trials:
        seed = trial_seed(config.master_seed, spec.participant_id, spec.block_idx, spec.trial_idx)
        try:
            record = simulate_trial(spec, config, ui, seed, policy.consecutive_errors)
        except TrialError as exc:
            log.warning("excluded: %s", exc)
            result.errors.append(str(exc))
            continue
        if adaptive:
            policy, actions, triggered = observe_trial(policy, record, config.policy)
            record.policy_triggered = triggered
            ui = apply_actions(actions, ui, faithful_bug)
            for action in actions:
                result.actions.append(_log_entry(spec, action, faithful_bug))
        else:
            errors = policy.consecutive_errors + 1 if record.is_error else 0
            policy = replace(policy, consecutive_errors=errors)
        result.records.append(record)


def _log_entry(spec: TrialSpec, action: Action, faithful_bug: bool) -> ActionLogEntry:
    applied = not (faithful_bug and action.kind == INFLATE_WIDTH)
    return ActionLogEntry(spec.participant_id, spec.block_idx, action.trial_idx, action.kind, action.value, applied)


def run_session(participant_id: int, config: RunConfig) -> SessionResult:
    plan = plan_session(participant_id, config.design, plan_seed(config.master_seed, participant_id))
    result = SessionResult(participant_id)
    for block in plan.blocks:
        run_block(block, config, result)
    return result


def _run_session_args(args) -> SessionResult:
    return run_session(*args)


def simulate_study(config: RunConfig, threads: int = 1) -> tuple[list[TrialRecord], list[ActionLogEntry], list[str]]:
    """Run all participants and return records sorted by (participant, block, trial)."""
    jobs = [(pid, config) for pid in range(config.participants)]
    if threads > 1:
        with ProcessPoolExecutor(max_workers=threads) as pool:
            sessions = list(pool.map(_run_session_args, jobs))
    else:
        sessions = [_run_session_args(job) for job in jobs]
    records = [r for s in sessions for r in s.records]
    actions = [a for s in sessions for a in s.actions]
    errors = [e for s in sessions for e in s.errors]
    records.sort(key=lambda r: (r.participant_id, r.block_idx, r.trial_idx))
    actions.sort(key=lambda a: (a.participant_id, a.block_idx, a.trial_idx))
    return records, actions, errors
