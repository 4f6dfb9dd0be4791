"""Numbered acceptance criteria. Each test prints its measured values and the
run ends with a PASS/FAIL line per criterion (see the conftest hooks)."""

import collections
import dataclasses
import itertools
import math
import random

import numpy as np
import pytest
from scipy import integrate

from xrpoint.calib import calibrate_from_card
from xrpoint.cli import main as cli_main
from xrpoint.config import RunConfig
from xrpoint.gaze import GazeSimParams, effective_time_constant, transform_stream
from xrpoint.io import load_csv, read_table
from xrpoint.lba import LbaData, LbaParams, fit_mle, lba_defective_density, simulate_lba
from xrpoint.metrics import effective_metrics, fitts_regression, qc_filter, summarize
from xrpoint.policy import UiState
from xrpoint.session import plan_seed, simulate_study, simulate_trial, trial_seed
from xrpoint.task import generate_williams_square, plan_session
from xrpoint.trial import Modality, Outcome, Pressure, TrialSpec, UiMode

from conftest import make_record

acceptance = pytest.mark.acceptance


@pytest.fixture(scope="module")
def calib():
    return calibrate_from_card(342.40, 215.92, 600.0)


@pytest.fixture(scope="module")
def default_run(tmp_path_factory):
    """One full default-config simulate run through the CLI, single worker."""
    out = tmp_path_factory.mktemp("default_run")
    assert cli_main(["simulate", "--out", str(out), "--threads", "1"]) == 0
    return out


# ---------------------------------------------------------------------------
# 1-3 gaze transform


@acceptance(1, "lag time constant in [95, 110] ms")
def test_c01_lag_time_constant(detail):
    tau = effective_time_constant(GazeSimParams(lerp_alpha=0.15, tick_hz=60.0))
    detail(f"tau={tau:.2f} ms")
    assert 95.0 <= tau <= 110.0
    assert tau == pytest.approx(102.55, abs=0.01)


@acceptance(2, "stationary jitter SD within 5% of 5.03 px")
def test_c02_jitter_sd(calib, detail):
    params = GazeSimParams(jitter_sigma_deg=0.12)
    assert calib.ppd == pytest.approx(41.89, abs=0.01)
    n = 10_000
    raw = np.tile([[1280.0, 720.0]], (n, 1))
    out, vel, _ = transform_stream(raw, params, calib, np.random.default_rng(2024), start=(1280.0, 720.0))
    assert np.all(vel == 0)
    sd = out.std(axis=0, ddof=1)
    detail(f"sd_x={sd[0]:.3f} sd_y={sd[1]:.3f} px")
    assert np.all(np.abs(sd / 5.03 - 1) <= 0.05)


def supra_threshold_stream(rng, ppd, dt_s, speed=None):
    n = int(rng.integers(5, 60))
    speeds = np.full(n, speed) if speed is not None else rng.uniform(121.0, 1500.0, n)
    headings = rng.uniform(0, 2 * math.pi, n) if speed is None else np.full(n, rng.uniform(0, 2 * math.pi))
    steps = (speeds * ppd * dt_s)[:, None] * np.column_stack([np.cos(headings), np.sin(headings)])
    start = rng.uniform([200.0, 200.0], [2300.0, 1200.0])
    return np.vstack([start, start + np.cumsum(steps, axis=0)])


@acceptance(3, "freeze: no output motion above saccade threshold (1,000 streams)")
def test_c03_freeze_invariant(calib, detail):
    params = GazeSimParams()
    rng = np.random.default_rng(3)
    moved = 0
    streams = [supra_threshold_stream(rng, calib.ppd, params.dt_s, speed=150.0)]
    streams += [supra_threshold_stream(rng, calib.ppd, params.dt_s) for _ in range(1000)]
    for raw in streams:
        out, vel, _ = transform_stream(raw, params, calib, rng)
        assert np.all(vel[1:] > params.v_saccade_deg_s)
        moved += int(np.any(out[1:] != out[0]))
    detail(f"streams={len(streams)} with_motion={moved}")
    assert moved == 0


# ---------------------------------------------------------------------------
# 4 counterbalancing


@acceptance(4, "Williams square n=8 Latin and carryover balanced")
def test_c04_williams(detail):
    sq = generate_williams_square(8)
    full = set(range(8))
    assert all(set(row) == full for row in sq)
    assert all({row[c] for row in sq} == full for c in range(8))
    pairs = collections.Counter((row[i], row[i + 1]) for row in sq for i in range(7))
    assert set(pairs) == set(itertools.permutations(range(8), 2))
    assert set(pairs.values()) == {1}
    detail(f"ordered pairs={len(pairs)} each once")


# ---------------------------------------------------------------------------
# 5-6 metrics


def brute_sd(xs):
    m = math.fsum(xs) / len(xs)
    return math.sqrt(math.fsum((x - m) ** 2 for x in xs) / (len(xs) - 1))


def brute_ols(xs, ys):
    n = len(xs)
    mx, my = math.fsum(xs) / n, math.fsum(ys) / n
    b = math.fsum((x - mx) * (y - my) for x, y in zip(xs, ys)) / math.fsum((x - mx) ** 2 for x in xs)
    a = my - b * mx
    ss_res = math.fsum((y - a - b * x) ** 2 for x, y in zip(xs, ys))
    ss_tot = math.fsum((y - my) ** 2 for y in ys)
    return a, b, 1.0 - ss_res / ss_tot


@acceptance(5, "We and Fitts OLS match brute force to 1e-9; noiseless line exact")
def test_c05_metric_oracles(detail):
    worst = 0.0
    for seed in range(100):
        rng = random.Random(seed)
        n = rng.randint(3, 60)
        errs = [rng.gauss(0, rng.uniform(0.5, 30)) for _ in range(n)]
        m = effective_metrics(errs, 600.0, [rng.uniform(0.2, 3) for _ in range(n)])
        sd = brute_sd(errs)
        xs = [rng.uniform(1, 7) for _ in range(n)]
        ys = [0.2 + 0.15 * x + rng.gauss(0, 0.1) for x in xs]
        fit = fitts_regression(xs, ys)
        a, b, r2 = brute_ols(xs, ys)
        diffs = [m.sigma_x - sd, m.We - 4.133 * sd, fit.a_s - a, fit.b_s_per_bit - b, fit.r_squared - r2]
        worst = max(worst, max(abs(d) for d in diffs))
    line = fitts_regression([2.0, 4.0, 5.5], [0.3 + 0.15 * x for x in (2.0, 4.0, 5.5)])
    detail(f"max |diff|={worst:.2e}; noiseless a={line.a_s:.12f} b={line.b_s_per_bit:.12f} R2={line.r_squared}")
    assert worst <= 1e-9
    assert abs(line.a_s - 0.3) <= 1e-12 and abs(line.b_s_per_bit - 0.15) <= 1e-12
    assert line.r_squared == 1.0


@acceptance(6, "hand generator Fitts slope within 0.01 of 0.15 s/bit, R2 > 0.9")
def test_c06_generator_recovery(detail):
    config = RunConfig()
    ids, mts = [], []
    for w, d, id_bits in config.design.levels:
        times = []
        for i in range(2000):
            spec = TrialSpec(0, 0, i, Modality.HAND, UiMode.STATIC, Pressure.SELF_PACED, i % 8, w, d, id_bits)
            rec = simulate_trial(spec, config, UiState(), trial_seed(6, int(id_bits * 10), 0, i))
            if rec.outcome is Outcome.HIT:
                times.append(rec.rt_ms / 1000.0)
        ids.append(id_bits)
        mts.append(float(np.mean(times)))
    fit = fitts_regression(ids, mts)
    detail(f"b={fit.b_s_per_bit:.4f} s/bit a={fit.a_s:.4f} s R2={fit.r_squared:.4f}")
    assert abs(fit.b_s_per_bit - 0.15) <= 0.01
    assert fit.r_squared > 0.9


# ---------------------------------------------------------------------------
# 7-8 LBA

TRUE_LBA = LbaParams(A_start=0.5, k_gap=0.5, v_correct_base=3.0, beta_id=-0.4, t0_s={"fast": 0.20, "slow": 0.35})


def lba_dataset(seed, n=5000):
    rng = np.random.default_rng(seed)
    ids = rng.choice([2.0, 4.0, 5.5], n)
    pressure = rng.integers(0, 2, n).astype(float)
    cells = np.where(np.arange(n) % 2 == 0, "fast", "slow")
    rt, winner = simulate_lba(TRUE_LBA, n, rng, ids, pressure, cells)
    return LbaData.from_arrays(rt, ids, pressure, cells, winner)


@acceptance(7, "LBA recovery: v +-0.15, t0 +-0.02 s, t0 ordering in >=95% of 20 reps")
def test_c07_lba_recovery(detail):
    fits = [fit_mle(lba_dataset(1000 + rep), n_starts=10, seed=rep) for rep in range(20)]
    canonical = fits[0].params
    ordered = sum(f.params.t0_s["fast"] < f.params.t0_s["slow"] for f in fits)
    within = sum(
        abs(f.params.v_correct_base - 3.0) <= 0.15
        and all(abs(f.params.t0_s[c] - TRUE_LBA.t0_s[c]) <= 0.02 for c in TRUE_LBA.t0_s)
        for f in fits
    )
    detail(
        f"canonical v={canonical.v_correct_base:.3f} t0={canonical.t0_s['fast']:.3f}/{canonical.t0_s['slow']:.3f}"
        f" beta_id={canonical.beta_id:.3f}; ordered {ordered}/20; all tolerances met in {within}/20"
    )
    assert abs(canonical.v_correct_base - 3.0) <= 0.15
    for c, t0 in TRUE_LBA.t0_s.items():
        assert abs(canonical.t0_s[c] - t0) <= 0.02
    assert ordered >= 19


@acceptance(8, "LBA quadrature win shares match 1e6 simulated shares within 1%")
def test_c08_lba_density_consistency(detail):
    cases = [
        (LbaParams(0.5, 0.5, 3.0, -0.4, {"c": 0.2}), 2.0, 0.0),
        (LbaParams(0.5, 0.5, 3.0, -0.4, {"c": 0.2}), 5.5, 1.0),
        (LbaParams(0.8, 0.3, 1.4, 0.0, {"c": 0.3}, v_alt=1.0), 0.0, 0.0),
        (LbaParams(0.3, 1.0, 0.5, 0.0, {"c": 0.1}, v_alt=0.2), 0.0, 0.0),
    ]
    worst = 0.0
    for i, (params, id_bits, pressure) in enumerate(cases):
        t0 = params.t0_s["c"]
        mass = []
        for w in (0, 1):
            f = lambda t: float(lba_defective_density(t, w, params, id_bits, pressure, "c"))
            a, _ = integrate.quad(f, t0, t0 + 5.0, limit=400)
            b, _ = integrate.quad(f, t0 + 5.0, np.inf, limit=400)
            mass.append(a + b)
        quad_share = np.array(mass) / sum(mass)
        _, winner = simulate_lba(params, 1_000_000, 800 + i, id_bits, pressure, "c")
        sim_share = np.bincount(winner, minlength=2) / winner.size
        worst = max(worst, float(np.max(np.abs(quad_share - sim_share) / quad_share)))
    detail(f"max relative share error={worst:.4%}")
    assert worst <= 0.01


# ---------------------------------------------------------------------------
# 9-10 qualitative signatures


@acceptance(9, "hand TP > gaze TP; gaze errors >= 5x hand; slips/misses >= 90%")
def test_c09_table_patterns(default_run, detail):
    records = load_csv(default_run / "trials.csv")
    assert len({r.participant_id for r in records}) == 16
    assert len(records) == 16 * 8 * 27
    valid, _ = qc_filter(records)
    by_mod = summarize(valid).by_modality
    hand, gaze = by_mod["hand"], by_mod["gaze"]
    hand_miss = hand.error_counts.get("miss", 0) / hand.n_errors
    gaze_slip = gaze.error_counts.get("slip", 0) / gaze.n_errors
    detail(
        f"TP hand={hand.throughput_bits_s:.2f} gaze={gaze.throughput_bits_s:.2f} bits/s; "
        f"error rate hand={hand.error_rate:.3%} gaze={gaze.error_rate:.3%}; "
        f"gaze slips={gaze_slip:.1%} hand misses={hand_miss:.1%}"
    )
    assert hand.throughput_bits_s > gaze.throughput_bits_s
    assert gaze.error_rate >= 5 * hand.error_rate
    assert gaze_slip >= 0.90
    assert hand_miss >= 0.90


@acceptance(10, "declutter lowers timeouts without lowering slip share (10 seeds)")
def test_c10_declutter_signature(detail):
    counts = {False: collections.Counter(), True: collections.Counter()}
    for master in range(10):
        config = RunConfig(master_seed=master)
        for pid in range(config.participants):
            plan = plan_session(pid, config.design, plan_seed(master, pid))
            for spec in plan.trials:
                if spec.modality is not Modality.GAZE or spec.is_practice:
                    continue
                seed = trial_seed(master, pid, spec.block_idx, spec.trial_idx)
                for declutter in (False, True):
                    rec = simulate_trial(spec, config, UiState(declutter_active=declutter), seed)
                    counts[declutter][rec.outcome.value] += 1

    def rates(c):
        n = sum(c.values())
        errors = n - c["hit"]
        return c["timeout"] / n, c["slip"] / errors

    (to_static, slip_static), (to_declutter, slip_declutter) = rates(counts[False]), rates(counts[True])
    detail(
        f"timeouts {to_static:.2%} -> {to_declutter:.2%}; slip share {slip_static:.1%} -> {slip_declutter:.1%}"
    )
    assert to_declutter < to_static
    assert slip_declutter >= slip_static


# ---------------------------------------------------------------------------
# 11-13 policy, QC, determinism

# endpoint scatter wide enough that hand trials fail in bursts
BURST_CONFIG = dict(participants=4, master_seed=11)


def burst_config(faithful_bug):
    config = RunConfig(**BURST_CONFIG)
    return dataclasses.replace(
        config,
        hand_agent=dataclasses.replace(config.hand_agent, endpoint_sigma_ratio=0.6),
        policy=dataclasses.replace(config.policy, faithful_bug=faithful_bug),
    )


def inflated_spans(actions):
    """(participant, block) -> sorted list of (trial_idx, action) for hand width actions."""
    spans = collections.defaultdict(list)
    for a in actions:
        if a.action in ("inflate_width", "restore_width"):
            spans[(a.participant_id, a.block_idx)].append((a.trial_idx, a.action))
    return spans


def expected_scale(spans, record):
    scale = 1.0
    for trial_idx, action in spans.get((record.participant_id, record.block_idx), []):
        if trial_idx < record.trial_idx:
            scale = 1.5 if action == "inflate_width" else 1.0
    return scale


@acceptance(11, "faithful-bug logs scale 1.0 despite inflate_width; flag off applies 1.5")
def test_c11_faithful_bug(tmp_path, detail):
    argv = ["simulate", "--participants", "4", "--seed", "11", "--faithful-bug", "--out", str(tmp_path)]
    assert cli_main(argv) == 0
    bug_records = load_csv(tmp_path / "trials.csv")
    bug_actions = read_table(tmp_path / "actions.csv")
    n_inflate_cli = sum(a["action"] == "inflate_width" for a in bug_actions)
    assert n_inflate_cli >= 1
    assert all(a["applied"] == "false" for a in bug_actions if a["action"] == "inflate_width")
    assert all(r.width_scale_applied == 1.0 for r in bug_records)

    records, actions, _ = simulate_study(burst_config(faithful_bug=True))
    n_inflate_bug = sum(a.action == "inflate_width" for a in actions)
    assert n_inflate_bug >= 1
    assert all(r.width_scale_applied == 1.0 for r in records)

    records, actions, _ = simulate_study(burst_config(faithful_bug=False))
    spans = inflated_spans(actions)
    inflated = [r for r in records if expected_scale(spans, r) == 1.5]
    assert inflated
    assert all(r.width_scale_applied == 1.5 for r in inflated)
    assert all(r.width_scale_applied == expected_scale(spans, r) for r in records if r.modality is Modality.HAND)
    detail(
        f"flag on: {n_inflate_cli} (default) / {n_inflate_bug} (burst) inflate_width, all trials 1.0; "
        f"flag off: {len(inflated)} inflated trials at 1.5"
    )


@acceptance(12, "QC reason codes and > 40% participant exclusion")
def test_c12_qc_rules(detail):
    violations = [
        (dict(zoom=1.1), "zoom"),
        (dict(fullscreen=False), "fullscreen"),
        (dict(dpr=1.25), "dpr_drift"),
        (dict(tab_hidden_ms=750.0), "tab_hidden"),
    ]
    records = [make_record(participant_id=0, trial_idx=i) for i in range(16)]
    for i, (override, _) in enumerate(violations):
        records.append(make_record(participant_id=0, trial_idx=16 + i, **override))
    # 9 of 20 trials violate: 45%
    records += [make_record(participant_id=1, trial_idx=i, fullscreen=i >= 9) for i in range(20)]
    valid, ledger = qc_filter(records)
    trial_reasons = {(e.participant_id, e.trial_idx): e.reasons for e in ledger if e.trial_idx is not None}
    for i, (_, reason) in enumerate(violations):
        assert trial_reasons[(0, 16 + i)] == (reason,)
    dropped = [e for e in ledger if e.trial_idx is None]
    assert [e.participant_id for e in dropped] == [1]
    assert dropped[0].reasons == ("participant_excluded:0.450",)
    assert {r.participant_id for r in valid} == {0}
    assert len(valid) == 16
    detail(f"codes={[r for _, r in violations]}; dropped participant 1 at 45%")


@acceptance(13, "byte-identical trial CSVs across runs and thread counts")
def test_c13_determinism(default_run, tmp_path, detail):
    reference = (default_run / "trials.csv").read_bytes()
    for threads in (1, 2):
        out = tmp_path / f"t{threads}"
        assert cli_main(["simulate", "--out", str(out), "--threads", str(threads)]) == 0
        assert (out / "trials.csv").read_bytes() == reference
        assert (out / "actions.csv").read_bytes() == (default_run / "actions.csv").read_bytes()
    detail(f"{len(reference)} bytes identical for threads 1 and 2")
