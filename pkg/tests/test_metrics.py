import math
import random

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import make_record
from xrpoint.metrics import (
    MetricsError,
    effective_metrics,
    export_verification,
    fitts_regression,
    qc_filter,
    shannon_id,
    summarize,
    table_rows,
)
from xrpoint.trial import Modality, Outcome, Pressure, UiMode


def naive_sd(xs):
    m = sum(xs) / len(xs)
    return math.sqrt(sum((x - m) ** 2 for x in xs) / (len(xs) - 1))


def naive_ols(xs, ys):
    n = len(xs)
    mx, my = sum(xs) / n, sum(ys) / n
    sxy = sum((x - mx) * (y - my) for x, y in zip(xs, ys))
    sxx = sum((x - mx) ** 2 for x in xs)
    b = sxy / sxx
    a = my - b * mx
    ss_res = sum((y - a - b * x) ** 2 for x, y in zip(xs, ys))
    ss_tot = sum((y - my) ** 2 for y in ys)
    return a, b, 1 - ss_res / ss_tot


@pytest.mark.parametrize("d, w, bits", [(7.0, 7.0, 1.0), (310.0, 10.0, 5.0), (150.0, 50.0, 2.0)])
def test_shannon_id(d, w, bits):
    assert shannon_id(d, w) == pytest.approx(bits, abs=1e-12)


@pytest.mark.parametrize("d, w", [(0, 10), (10, 0), (-1, 5)])
def test_shannon_id_rejects(d, w):
    with pytest.raises(ValueError):
        shannon_id(d, w)


def test_we_from_known_sd():
    z = np.array([-1.5, -0.5, 0.0, 0.4, 1.6])
    errors = (z - z.mean()) / np.std(z, ddof=1) * 12.10
    m = effective_metrics(errors, 600.0, [0.8] * 5)
    assert m.sigma_x == pytest.approx(12.10, abs=1e-12)
    assert m.We == pytest.approx(50.01, abs=0.005)
    assert not m.degenerate


def test_degenerate_floor():
    m = effective_metrics([3.0, 3.0, 3.0], 100.0, [0.5, 0.5, 0.5])
    assert m.degenerate and m.We == 1.0
    assert m.IDe == pytest.approx(math.log2(101.0))


def test_throughput_division():
    errors = np.array([-1.0, 1.0]) / math.sqrt(2) * (10 / 4.133)
    we = 4.133 * naive_sd(list(errors))
    m = effective_metrics(errors, 15 * we, [0.7, 0.9])
    assert m.IDe == pytest.approx(4.0, abs=1e-12)
    assert m.TP == pytest.approx(5.0, abs=1e-12)


def test_too_few_endpoints():
    with pytest.raises(MetricsError):
        effective_metrics([1.0], 100.0, [0.5])


def test_noiseless_fitts_line():
    fit = fitts_regression([2, 4, 6], [0.3 + 0.15 * x for x in (2, 4, 6)])
    assert fit.a_s == pytest.approx(0.30, abs=1e-12)
    assert fit.b_s_per_bit == pytest.approx(0.15, abs=1e-12)
    assert fit.r_squared == pytest.approx(1.0, abs=1e-12)
    assert fit.n_points == 3


def test_fitts_errors():
    with pytest.raises(MetricsError):
        fitts_regression([3, 3, 3], [1, 2, 3])
    with pytest.raises(MetricsError):
        fitts_regression([1, 2], [1, 2])


@settings(max_examples=100)
@given(st.integers(0, 2**31 - 1))
def test_oracles_on_random_fixtures(seed):
    rng = random.Random(seed)
    n = rng.randint(3, 40)
    errs = [rng.gauss(0, rng.uniform(0.5, 30)) for _ in range(n)]
    mts = [rng.uniform(0.2, 3) for _ in range(n)]
    m = effective_metrics(errs, 500.0, mts)
    sd = naive_sd(errs)
    assert abs(m.sigma_x - sd) <= 1e-9 * max(1.0, sd)
    assert abs(m.We - 4.133 * sd) <= 1e-9 * max(1.0, sd)
    xs = [rng.uniform(1, 7) for _ in range(n)]
    ys = [0.2 + 0.15 * x + rng.gauss(0, 0.1) for x in xs]
    fit = fitts_regression(xs, ys)
    a, b, r2 = naive_ols(xs, ys)
    assert fit.a_s == pytest.approx(a, abs=1e-9)
    assert fit.b_s_per_bit == pytest.approx(b, abs=1e-9)
    assert fit.r_squared == pytest.approx(r2, abs=1e-9)


# ---------------------------------------------------------------------------
# QC


@pytest.mark.parametrize(
    "override, reason",
    [
        (dict(zoom=0.9), "zoom"),
        (dict(fullscreen=False), "fullscreen"),
        (dict(dpr=1.2), "dpr_drift"),
        (dict(tab_hidden_ms=501.0), "tab_hidden"),
    ],
)
def test_qc_reason_codes(override, reason):
    recs = [make_record(trial_idx=i) for i in range(10)]
    recs[4] = make_record(trial_idx=4, **override)
    valid, ledger = qc_filter(recs)
    assert len(valid) == 9
    assert len(ledger) == 1
    assert ledger[0].trial_idx == 4 and ledger[0].reasons == (reason,)


def test_qc_boundaries_pass():
    recs = [make_record(trial_idx=0), make_record(trial_idx=1, dpr=1.1, tab_hidden_ms=500.0)]
    valid, ledger = qc_filter(recs)
    assert len(valid) == 2 and not ledger


def test_qc_participant_dropped_at_45_percent():
    recs = [make_record(participant_id=1, trial_idx=i, zoom=1.25 if i < 9 else 1.0) for i in range(20)]
    recs += [make_record(participant_id=2, trial_idx=i) for i in range(20)]
    valid, ledger = qc_filter(recs)
    assert {r.participant_id for r in valid} == {2}
    dropped = [e for e in ledger if e.trial_idx is None]
    assert len(dropped) == 1 and dropped[0].participant_id == 1
    assert dropped[0].reasons[0].startswith("participant_excluded")
    assert sum(e.participant_id == 1 and e.trial_idx is not None for e in ledger) == 9


def test_qc_forty_percent_kept():
    recs = [make_record(trial_idx=i, fullscreen=i >= 8) for i in range(20)]
    valid, ledger = qc_filter(recs)
    assert len(valid) == 12 and len(ledger) == 8


def test_qc_clean():
    valid, ledger = qc_filter([make_record(trial_idx=i) for i in range(30)])
    assert len(valid) == 30 and ledger == []


# ---------------------------------------------------------------------------
# summaries


def cell_records(pid, modality, id_bits, errors, mts, outcomes=None, ui=UiMode.STATIC, pressure=Pressure.SELF_PACED):
    w = 50.0
    d = w * (2**id_bits - 1)
    out = []
    for i, (e, mt) in enumerate(zip(errors, mts)):
        o = Outcome(outcomes[i]) if outcomes else Outcome.HIT
        has_end = o in (Outcome.HIT, Outcome.MISS, Outcome.SLIP)
        out.append(
            make_record(
                participant_id=pid, trial_idx=i + 3, modality=modality, ui_mode=ui, pressure=pressure,
                W_px=w, D_px=d, ID_bits=id_bits, start_x=1280.0 - d / 2, target_x=1280.0 + d / 2,
                start_y=720.0, target_y=720.0, outcome=o,
                rt_ms=None if o is Outcome.TIMEOUT else mt * 1000,
                endpoint_x=1280.0 + d / 2 + e if has_end else None,
                endpoint_y=720.0 if has_end else None,
            )
        )
    return out


def test_all_hit_fixture():
    recs = cell_records(0, Modality.HAND, 4.0, [-3, 0, 4, 1], [0.8, 0.9, 0.85, 0.95])
    s = summarize(recs)
    cm = s.conditions["hand|static|self_paced"]
    assert cm.error_rate == 0 and cm.error_composition is None
    assert set(s.conditions) == {"hand|static|self_paced"}


def test_composition_counting():
    outcomes = ["slip", "slip", "slip", "timeout", "hit", "hit", "hit"]
    recs = cell_records(0, Modality.GAZE, 4.0, [0, 1, 2, 0, -2, 0, 3], [1.0] * 7, outcomes)
    cm = summarize(recs).by_modality["gaze"]
    assert cm.error_composition == {"slip": 0.75, "miss": 0.0, "timeout": 0.25}
    assert cm.error_rate * cm.n_measured == 4


def test_mean_of_means_by_hand():
    a = cell_records(0, Modality.HAND, 2.0, [-2, 2, 0], [0.5, 0.6, 0.7])
    b = cell_records(0, Modality.HAND, 4.0, [-5, 5, 1], [0.9, 1.0, 1.1])
    c = cell_records(1, Modality.HAND, 2.0, [-1, 3, 0], [0.4, 0.5, 0.6])
    recs = a + b + c
    tps = {}
    for key, cell in (("0a", a), ("0b", b), ("1a", c)):
        errs = [r.projected_error() for r in cell]
        we = 4.133 * naive_sd(errs)
        tps[key] = math.log2(cell[0].D_px / we + 1) / (sum(r.rt_ms for r in cell) / 3000)
    expected = ((tps["0a"] + tps["0b"]) / 2 + tps["1a"]) / 2
    assert summarize(recs).by_modality["hand"].throughput_bits_s == pytest.approx(expected, rel=1e-12)


def test_misses_contribute_endpoints_slips_do_not():
    hits = cell_records(0, Modality.HAND, 4.0, [-2, 2, 0, 1], [0.8] * 4)
    with_miss = hits + cell_records(0, Modality.HAND, 4.0, [40], [0.8], ["miss"])
    with_slip = hits + cell_records(0, Modality.GAZE, 4.0, [40], [0.8], ["slip"])
    base = summarize(hits).by_modality["hand"].sigma_x_px
    assert summarize(with_miss).by_modality["hand"].sigma_x_px > base
    assert summarize(with_slip).by_modality["hand"].sigma_x_px == base


def test_small_cells_are_skipped_not_zero():
    recs = cell_records(0, Modality.HAND, 4.0, [1.0], [0.8])
    cm = summarize(recs).by_modality["hand"]
    assert cm.throughput_bits_s is None and cm.skipped_cells


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2**31 - 1))
def test_permutation_invariance_and_error_identity(seed):
    rng = random.Random(seed)
    recs = []
    for pid in range(3):
        for mod in Modality:
            for id_bits in (2.0, 4.0):
                n = rng.randint(3, 6)
                outcomes = [rng.choice(["hit", "hit", "hit", "miss" if mod is Modality.HAND else "slip", "timeout"]) for _ in range(n)]
                outcomes[0] = outcomes[1] = "hit"
                recs += cell_records(pid, mod, id_bits, [rng.gauss(0, 5) for _ in range(n)], [rng.uniform(0.4, 2) for _ in range(n)], outcomes)
    a = summarize(recs).to_dict()
    shuffled = recs[:]
    rng.shuffle(shuffled)
    b = summarize(shuffled).to_dict()
    for key in a["by_modality"]:
        for field in ("throughput_bits_s", "error_rate", "We_px", "IDe_bits", "mean_mt_s"):
            assert a["by_modality"][key][field] == pytest.approx(b["by_modality"][key][field], rel=1e-12)
    for key, cm in a["by_modality"].items():
        n_err = sum(1 for r in recs if r.modality.value == key and r.outcome is not Outcome.HIT)
        assert round(cm["error_rate"] * cm["n_measured"]) == n_err == cm["n_errors"]


def test_practice_trials_ignored():
    recs = cell_records(0, Modality.HAND, 4.0, [-2, 2, 0], [0.8] * 3)
    practice = cell_records(0, Modality.HAND, 4.0, [100, -100], [0.8] * 2, ["miss", "miss"])
    for r in practice:
        r.is_practice = True
    assert summarize(recs + practice).by_modality["hand"].error_rate == 0


def test_verification_export_window():
    recs = [
        make_record(trial_idx=3, verification_ms=150.0),
        make_record(trial_idx=4, verification_ms=200.0),
        make_record(trial_idx=5, verification_ms=4999.0),
        make_record(trial_idx=6, verification_ms=6000.0),
        make_record(trial_idx=7, verification_ms=None, first_entry_ms=None),
        make_record(trial_idx=8, outcome=Outcome.MISS, verification_ms=300.0),
    ]
    rows = export_verification(recs)
    assert [r["rt_ms"] for r in rows] == [200.0, 4999.0]
    # descriptive summaries keep all hits with a first entry
    cm = summarize(recs).by_modality["hand"]
    assert cm.mean_verification_ms == pytest.approx((150 + 200 + 4999 + 6000) / 4)


def test_table_rows_shape():
    recs = cell_records(0, Modality.HAND, 2.0, [-2, 2, 0], [0.5, 0.6, 0.7]) + cell_records(0, Modality.HAND, 4.0, [-2, 3, 0], [0.9, 1.0, 1.1]) + cell_records(1, Modality.HAND, 5.0, [-2, 2, 1], [1.1, 1.2, 1.3])
    tables = table_rows(summarize(recs))
    assert [r["metric"] for r in tables["table_performance"]] == ["throughput_bits_s", "error_rate", "mean_mt_s"]
    assert tables["table_performance"][0]["gaze"] is None
    fitts = {r["condition"]: r for r in tables["table_fitts"]}
    assert fitts["hand|static"]["n_points"] == 3
