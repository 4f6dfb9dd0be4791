"""Synthetic participants producing raw input scripts for hand and gaze trials.

Agents see only the trial spec, the screen layout, their parameters, the
declutter flag and an RNG. They never look at outcomes or metrics.

Hand: movement time follows ``a + b * ID`` with Gaussian noise, the path is
a chain of minimum-jerk submovements and the click lands with circular
Gaussian scatter around the target centre.

Gaze: a raw eye path made of saccades (main-sequence durations, proportional
landing scatter, corrective saccades) and holds. Failure channels are
distractor fixations (neighbouring target -> slips, HUD -> delay and
reacquisition loops -> timeouts) and, under time pressure, a glance at the
HUD countdown when the planned verification hold runs out.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .calib import DisplayCalibration
from .trial import Pressure, RawInputScript, TrialLayout, TrialSpec

MeanSd = tuple[float, float]


def _draw(rng: np.random.Generator, mean_sd: MeanSd, lo: float = 0.0) -> float:
    mean, sd = mean_sd
    value = mean if sd <= 0 else rng.normal(mean, sd)
    return max(lo, float(value))


@dataclass(frozen=True)
class HandAgentParams:
    fitts_a_s: float = 0.30
    fitts_b_s_per_bit: float = 0.15
    mt_noise_sd_s: float = 0.08
    endpoint_sigma_ratio: float = 0.14
    click_latency_ms: MeanSd = (150.0, 40.0)
    submovement_probs: tuple[float, float, float] = (0.55, 0.35, 0.10)
    pressure_sigma_multiplier: float = 1.25
    min_mt_s: float = 0.25
    profile: str = "hand_default"

    def __post_init__(self) -> None:
        if self.fitts_b_s_per_bit <= 0:
            raise ValueError("fitts_b_s_per_bit must be positive")
        if self.endpoint_sigma_ratio < 0:
            raise ValueError("endpoint_sigma_ratio must be >= 0")
        if self.pressure_sigma_multiplier < 1:
            raise ValueError("pressure_sigma_multiplier must be >= 1")
        probs = np.asarray(self.submovement_probs, dtype=float)
        if probs.shape != (3,) or np.any(probs < 0) or abs(probs.sum() - 1) > 1e-9:
            raise ValueError("submovement_probs must be a distribution over {1, 2, 3}")


@dataclass(frozen=True)
class GazeAgentParams:
    saccade_slope_ms_per_deg: float = 2.2
    saccade_intercept_ms: float = 21.0
    saccade_latency_ms: MeanSd = (220.0, 40.0)
    corrective_latency_ms: MeanSd = (150.0, 30.0)
    landing_sigma_ratio: float = 0.08
    corrective_threshold_px: float = 10.0
    max_corrective: int = 3
    verification_dwell_ms: MeanSd = (1400.0, 300.0)
    distractor_fixation_prob: float = 0.30
    distractor_dwell_ms: MeanSd = (950.0, 300.0)
    reacquire_loop_prob: float = 0.55
    search_fixation_ms: MeanSd = (300.0, 80.0)
    declutter_distractor_factor: float = 0.3
    countdown_glance_ms: MeanSd = (350.0, 100.0)
    pressure_dwell_multiplier: float = 0.8
    profile: str = "gaze_default"

    def __post_init__(self) -> None:
        for name in ("distractor_fixation_prob", "reacquire_loop_prob", "declutter_distractor_factor"):
            value = getattr(self, name)
            if not (0.0 <= value <= 1.0):
                raise ValueError(f"{name} must lie in [0, 1]")
        for name in ("saccade_latency_ms", "corrective_latency_ms", "verification_dwell_ms",
                     "distractor_dwell_ms", "search_fixation_ms", "countdown_glance_ms"):
            mean, sd = getattr(self, name)
            if mean < 0 or sd < 0:
                raise ValueError(f"{name} must be non-negative")
        if self.landing_sigma_ratio < 0 or self.corrective_threshold_px < 0:
            raise ValueError("landing scatter and corrective threshold must be >= 0")
        if not (0 < self.pressure_dwell_multiplier <= 1):
            raise ValueError("pressure_dwell_multiplier must lie in (0, 1]")

    def saccade_duration_ms(self, amplitude_deg: float) -> float:
        return self.saccade_slope_ms_per_deg * amplitude_deg + self.saccade_intercept_ms


# ---------------------------------------------------------------------------
# hand


def _min_jerk(s: np.ndarray) -> np.ndarray:
    return 10 * s**3 - 15 * s**4 + 6 * s**5


def simulate_hand_trial(
    spec: TrialSpec,
    params: HandAgentParams,
    rng: np.random.Generator,
    layout: TrialLayout,
    sample_ms: float = 5.0,
) -> RawInputScript:
    sigma = params.endpoint_sigma_ratio * spec.W_px
    if spec.pressure is Pressure.TIME_LIMITED:
        sigma *= params.pressure_sigma_multiplier

    mt_s = params.fitts_a_s + params.fitts_b_s_per_bit * spec.ID_bits
    if params.mt_noise_sd_s > 0:
        mt_s += rng.normal(0.0, params.mt_noise_sd_s)
    mt_ms = 1000.0 * max(params.min_mt_s, mt_s)

    latency = min(_draw(rng, params.click_latency_ms, lo=40.0), 0.4 * mt_ms)
    motion_end = mt_ms - latency
    onset = min(500.0 * params.fitts_a_s, 0.3 * motion_end)

    ex = layout.goal.x + (rng.normal(0.0, sigma) if sigma > 0 else 0.0)
    ey = layout.goal.y + (rng.normal(0.0, sigma) if sigma > 0 else 0.0)

    k = int(rng.choice(3, p=params.submovement_probs)) + 1
    sx, sy = layout.start
    dx, dy = ex - sx, ey - sy
    dist = math.hypot(dx, dy)
    ux, uy = (dx / dist, dy / dist) if dist > 0 else (1.0, 0.0)
    vias = []
    if k >= 2:
        u1 = rng.uniform(0.85, 0.95)
        lat = rng.normal(0.0, 0.02 * dist)
        vias.append((sx + u1 * dx - lat * uy, sy + u1 * dy + lat * ux))
    if k == 3:
        u2 = rng.uniform(0.96, 0.99)
        vias.append((sx + u2 * dx, sy + u2 * dy))
    splits = {1: (1.0,), 2: (0.7, 0.3), 3: (0.6, 0.25, 0.15)}[k]

    points = [(sx, sy), *vias, (ex, ey)]
    ts = [0.0]
    xs = [sx]
    ys = [sy]
    t = onset
    span = motion_end - onset
    for i, share in enumerate(splits):
        (x0, y0), (x1, y1) = points[i], points[i + 1]
        dur = share * span
        n = max(2, int(math.ceil(dur / sample_ms)) + 1)
        s = np.linspace(0.0, 1.0, n)
        prof = _min_jerk(s)
        ts.extend(t + s * dur)
        xs.extend(x0 + prof * (x1 - x0))
        ys.extend(y0 + prof * (y1 - y0))
        t += dur

    return RawInputScript(
        t_ms=np.asarray(ts),
        x=np.asarray(xs),
        y=np.asarray(ys),
        click_ms=mt_ms,
        submovements=k,
        notes={"endpoint": (ex, ey), "mt_ms": mt_ms},
    )


# ---------------------------------------------------------------------------
# gaze


class _GazePath:
    """Incremental builder for a raw eye path."""

    def __init__(self, start: tuple[float, float], params: GazeAgentParams, ppd: float, rng: np.random.Generator):
        self.params = params
        self.ppd = ppd
        self.rng = rng
        self.t = 0.0
        self.pos = start
        self.ts = [0.0]
        self.xs = [start[0]]
        self.ys = [start[1]]
        self.saccades = 0

    def hold(self, duration_ms: float) -> None:
        if duration_ms <= 0:
            return
        self.t += duration_ms
        self._append()

    def _append(self) -> None:
        self.ts.append(self.t)
        self.xs.append(self.pos[0])
        self.ys.append(self.pos[1])

    def saccade(self, aim: tuple[float, float]) -> None:
        p = self.params
        amp_px = math.hypot(aim[0] - self.pos[0], aim[1] - self.pos[1])
        if amp_px == 0:
            return
        sd = p.landing_sigma_ratio * amp_px
        lx = aim[0] + (self.rng.normal(0.0, sd) if sd > 0 else 0.0)
        ly = aim[1] + (self.rng.normal(0.0, sd) if sd > 0 else 0.0)
        dur = p.saccade_duration_ms(amp_px / self.ppd)
        self.t += dur
        self.pos = (lx, ly)
        self._append()
        self.saccades += 1

    def fixate(self, aim: tuple[float, float], latency: tuple[float, float] | None = None) -> None:
        """Latency, primary saccade, then corrective saccades until close enough."""
        p = self.params
        self.hold(_draw(self.rng, latency or p.saccade_latency_ms))
        self.saccade(aim)
        for _ in range(p.max_corrective):
            if math.hypot(aim[0] - self.pos[0], aim[1] - self.pos[1]) <= p.corrective_threshold_px:
                break
            self.hold(_draw(self.rng, p.corrective_latency_ms))
            self.saccade(aim)


def distractor_probability(params: GazeAgentParams, declutter_active: bool) -> float:
    p = params.distractor_fixation_prob
    return p * params.declutter_distractor_factor if declutter_active else p


def simulate_gaze_intent(
    spec: TrialSpec,
    params: GazeAgentParams,
    declutter_active: bool,
    rng: np.random.Generator,
    layout: TrialLayout,
    calib: DisplayCalibration,
    horizon_ms: float = 6000.0,
) -> RawInputScript:
    """Raw gaze path for one trial; selection is left to the dwell logic."""
    path = _GazePath(layout.start, params, calib.ppd, rng)
    goal = (layout.goal.x, layout.goal.y)
    distractor = None

    if rng.random() < distractor_probability(params, declutter_active):
        # declutter hides the HUD, leaving the neighbouring targets as the only lure
        if declutter_active or rng.random() < 0.5:
            distractor = "neighbor"
            nb = layout.neighbors()[int(rng.integers(2))]
            path.fixate((nb.x, nb.y))
            path.hold(_draw(rng, params.distractor_dwell_ms))
        else:
            distractor = "hud"
            path.fixate(layout.hud_glance)
            path.hold(_draw(rng, params.distractor_dwell_ms))
            # goal lost from view: each restart is another search fixation
            while path.t < horizon_ms and rng.random() < params.reacquire_loop_prob:
                path.fixate(layout.center)
                path.hold(_draw(rng, params.search_fixation_ms))

    path.fixate(goal)
    mean, sd = params.verification_dwell_ms
    if spec.pressure is Pressure.TIME_LIMITED:
        # impatience under a visible countdown: once the planned hold runs out
        # the agent checks the timer in the HUD, then returns to the goal
        m = params.pressure_dwell_multiplier
        path.hold(_draw(rng, (mean * m, sd * m)))
        if path.t < horizon_ms:
            path.fixate(layout.hud_glance, latency=(0.0, 0.0))
            path.hold(_draw(rng, params.countdown_glance_ms))
            path.fixate(goal, latency=(0.0, 0.0))
    else:
        path.hold(_draw(rng, params.verification_dwell_ms))
    if path.t < horizon_ms:
        path.t = horizon_ms
        path._append()

    return RawInputScript(
        t_ms=np.asarray(path.ts),
        x=np.asarray(path.xs),
        y=np.asarray(path.ys),
        click_ms=None,
        submovements=path.saccades,
        distractor=distractor,
    )
