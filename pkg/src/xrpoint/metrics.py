"""Trial QC and the ISO 9241-9 analysis chain.

Throughput uses the effective-width correction: endpoint errors projected on
the task axis give ``sigma_x``; ``We = 4.133 * sigma_x``;
``IDe = log2(D / We + 1)``; ``TP = IDe / MT``. Aggregation is mean-of-means:
participant x condition x ID cell, then participant, then grand mean.
"""

from __future__ import annotations

import math
from collections import defaultdict
from dataclasses import asdict, dataclass, field
from typing import Iterable, Sequence

import numpy as np
from scipy import stats

from .trial import Modality, Outcome, TrialRecord, UiMode, condition_key, shannon_id

WE_FACTOR = 4.133
WE_FLOOR_PX = 1.0
LBA_RT_WINDOW_MS = (200.0, 5000.0)
PARTICIPANT_EXCLUSION_FRACTION = 0.40
DPR_DRIFT_LIMIT = 0.1
TAB_HIDDEN_LIMIT_MS = 500.0
ERROR_KINDS = (Outcome.SLIP, Outcome.MISS, Outcome.TIMEOUT)

__all__ = [
    "shannon_id",
    "effective_metrics",
    "fitts_regression",
    "qc_filter",
    "summarize",
    "export_verification",
]


class MetricsError(ValueError):
    pass


@dataclass(frozen=True)
class EffectiveMetrics:
    sigma_x: float
    We: float
    IDe: float
    TP: float
    mean_mt_s: float
    n: int
    degenerate: bool = False


def effective_metrics(projected_errors: Sequence[float], D_px: float, mts_s: Sequence[float]) -> EffectiveMetrics:
    """Effective width, effective ID and throughput for one cell.

    ``projected_errors`` are signed endpoint deviations along the task axis.
    Fewer than two endpoints raise ``MetricsError``; zero spread floors We at
    1 px and marks the cell degenerate.
    """
    err = np.asarray(projected_errors, dtype=float)
    mts = np.asarray(mts_s, dtype=float)
    if err.size < 2:
        raise MetricsError(f"need >= 2 endpoints, got {err.size}")
    if mts.size == 0 or np.any(mts <= 0):
        raise MetricsError("movement times must be positive")
    sigma = float(np.std(err, ddof=1))
    we = WE_FACTOR * sigma
    degenerate = we < WE_FLOOR_PX
    if degenerate:
        we = WE_FLOOR_PX
    ide = math.log2(D_px / we + 1.0)
    mt = float(np.mean(mts))
    return EffectiveMetrics(sigma, we, ide, ide / mt, mt, int(err.size), degenerate)


@dataclass(frozen=True)
class FittsFit:
    a_s: float
    b_s_per_bit: float
    r_squared: float
    n_points: int


def fitts_regression(ids: Sequence[float], mts_s: Sequence[float]) -> FittsFit:
    """Ordinary least squares ``MT = a + b * ID``."""
    x = np.asarray(ids, dtype=float)
    y = np.asarray(mts_s, dtype=float)
    if x.shape != y.shape or x.ndim != 1:
        raise MetricsError("ids and movement times must be 1-D and equal length")
    if x.size < 3:
        raise MetricsError(f"need >= 3 points, got {x.size}")
    if np.ptp(x) == 0:
        raise MetricsError("all IDs identical; slope not identifiable")
    design = np.column_stack([np.ones_like(x), x])
    (a, b), *_ = np.linalg.lstsq(design, y, rcond=None)
    resid = y - (a + b * x)
    ss_res = float(resid @ resid)
    ss_tot = float(((y - y.mean()) ** 2).sum())
    r2 = 1.0 if ss_tot == 0 else 1.0 - ss_res / ss_tot
    return FittsFit(float(a), float(b), min(1.0, max(0.0, r2)), int(x.size))


# ---------------------------------------------------------------------------
# quality control


@dataclass(frozen=True)
class QcEntry:
    participant_id: int
    block_idx: int | None
    trial_idx: int | None
    reasons: tuple[str, ...]


def trial_violations(record: TrialRecord, baseline_dpr: float) -> list[str]:
    reasons = []
    if abs(record.zoom - 1.0) > 1e-9:
        reasons.append("zoom")
    if not record.fullscreen:
        reasons.append("fullscreen")
    if abs(record.dpr - baseline_dpr) > DPR_DRIFT_LIMIT + 1e-9:  # 1.1 - 1.0 is not exactly 0.1
        reasons.append("dpr_drift")
    if record.tab_hidden_ms > TAB_HIDDEN_LIMIT_MS:
        reasons.append("tab_hidden")
    return reasons


def qc_filter(records: Iterable[TrialRecord]) -> tuple[list[TrialRecord], list[QcEntry]]:
    """Drop display-violating trials and participants with > 40% of trials dropped.

    DPR drift is measured against the participant's first logged trial.
    """
    by_pid: dict[int, list[TrialRecord]] = defaultdict(list)
    for r in records:
        by_pid[r.participant_id].append(r)

    valid: list[TrialRecord] = []
    ledger: list[QcEntry] = []
    for pid in sorted(by_pid):
        rows = sorted(by_pid[pid], key=lambda r: (r.block_idx, r.trial_idx))
        baseline = rows[0].dpr
        kept, entries = [], []
        for r in rows:
            reasons = trial_violations(r, baseline)
            if reasons:
                entries.append(QcEntry(pid, r.block_idx, r.trial_idx, tuple(reasons)))
            else:
                kept.append(r)
        ledger.extend(entries)
        fraction = len(entries) / len(rows)
        if fraction > PARTICIPANT_EXCLUSION_FRACTION:
            ledger.append(QcEntry(pid, None, None, (f"participant_excluded:{fraction:.3f}",)))
        else:
            valid.extend(kept)
    return valid, ledger


# ---------------------------------------------------------------------------
# summaries


@dataclass
class ConditionMetrics:
    n_participants: int
    n_measured: int
    n_errors: int
    error_rate: float
    error_counts: dict[str, int]
    error_composition: dict[str, float] | None
    throughput_bits_s: float | None
    throughput_ci95: tuple[float, float] | None
    mean_mt_s: float | None
    mean_mt_ci95: tuple[float, float] | None
    We_px: float | None
    sigma_x_px: float | None
    IDe_bits: float | None
    mean_verification_ms: float | None
    n_cells: int = 0
    skipped_cells: list[str] = field(default_factory=list)

    def to_dict(self) -> dict:
        return asdict(self)


def _ci95(values: Sequence[float]) -> tuple[float, float] | None:
    v = np.asarray(values, dtype=float)
    if v.size < 2:
        return None
    half = stats.t.ppf(0.975, v.size - 1) * v.std(ddof=1) / math.sqrt(v.size)
    return (float(v.mean() - half), float(v.mean() + half))


def _mean(values) -> float | None:
    values = list(values)
    return float(np.mean(values)) if values else None


def _cell_metrics(cell: list[TrialRecord]) -> EffectiveMetrics:
    usable = [r for r in cell if r.outcome in (Outcome.HIT, Outcome.MISS) and r.endpoint_x is not None]
    hits = [r for r in usable if r.outcome is Outcome.HIT]
    errs = [r.projected_error() for r in usable]
    mts = [r.rt_ms / 1000.0 for r in hits]
    if not mts:
        raise MetricsError("no hits")
    return effective_metrics(errs, cell[0].D_px, mts)


def _participant_cells(records: list[TrialRecord]):
    cells: dict[tuple, list[TrialRecord]] = defaultdict(list)
    for r in records:
        cells[(r.participant_id, r.modality, r.ui_mode, r.pressure, r.ID_bits)].append(r)
    return cells


def condition_metrics(records: list[TrialRecord]) -> ConditionMetrics | None:
    measured = [r for r in records if not r.is_practice]
    if not measured:
        return None
    counts = {k.value: sum(r.outcome is k for r in measured) for k in ERROR_KINDS}
    n_err = sum(counts.values())
    composition = {k: v / n_err for k, v in counts.items()} if n_err else None

    per_pid: dict[int, list[EffectiveMetrics]] = defaultdict(list)
    skipped = []
    for key, cell in sorted(_participant_cells(measured).items(), key=lambda kv: str(kv[0])):
        try:
            per_pid[key[0]].append(_cell_metrics(cell))
        except MetricsError as exc:
            skipped.append(f"{key[0]}|{condition_key(*key[1:4])}|{key[4]}: {exc}")

    def mean_of_means(attr):
        per = [np.mean([getattr(c, attr) for c in cells]) for cells in per_pid.values() if cells]
        return per

    tp = mean_of_means("TP")
    hits_by_pid: dict[int, list[float]] = defaultdict(list)
    verif = []
    for r in measured:
        if r.outcome is Outcome.HIT:
            hits_by_pid[r.participant_id].append(r.rt_ms / 1000.0)
            if r.verification_ms is not None:
                verif.append(r.verification_ms)
    mt = [float(np.mean(v)) for v in hits_by_pid.values()]

    return ConditionMetrics(
        n_participants=len({r.participant_id for r in measured}),
        n_measured=len(measured),
        n_errors=n_err,
        error_rate=n_err / len(measured),
        error_counts=counts,
        error_composition=composition,
        throughput_bits_s=_mean(tp),
        throughput_ci95=_ci95(tp),
        mean_mt_s=_mean(mt),
        mean_mt_ci95=_ci95(mt),
        We_px=_mean(mean_of_means("We")),
        sigma_x_px=_mean(mean_of_means("sigma_x")),
        IDe_bits=_mean(mean_of_means("IDe")),
        mean_verification_ms=_mean(verif),
        n_cells=sum(len(v) for v in per_pid.values()),
        skipped_cells=skipped,
    )


def fitts_points(records: list[TrialRecord]) -> tuple[list[float], list[float]]:
    """(IDe, mean hit MT) for every participant x condition x ID cell."""
    xs, ys = [], []
    for _, cell in sorted(_participant_cells([r for r in records if not r.is_practice]).items(), key=lambda kv: str(kv[0])):
        try:
            m = _cell_metrics(cell)
        except MetricsError:
            continue
        xs.append(m.IDe)
        ys.append(m.mean_mt_s)
    return xs, ys


@dataclass
class Summary:
    conditions: dict[str, ConditionMetrics | None]
    by_modality: dict[str, ConditionMetrics | None]
    by_modality_ui: dict[str, ConditionMetrics | None]
    fitts: dict[str, FittsFit | None]
    n_records: int

    def to_dict(self) -> dict:
        def conv(d):
            return {k: (asdict(v) if v is not None else None) for k, v in d.items()}

        return {
            "n_records": self.n_records,
            "conditions": conv(self.conditions),
            "by_modality": conv(self.by_modality),
            "by_modality_ui": conv(self.by_modality_ui),
            "fitts": conv(self.fitts),
        }


def summarize(records: Iterable[TrialRecord]) -> Summary:
    """Condition metrics per factorial cell, per modality x UI, and per modality.

    Empty cells are omitted rather than reported as zeros.
    """
    records = list(records)
    groups: dict[str, list[TrialRecord]] = defaultdict(list)
    mod_groups: dict[str, list[TrialRecord]] = defaultdict(list)
    mod_ui_groups: dict[str, list[TrialRecord]] = defaultdict(list)
    for r in records:
        groups[condition_key(*r.condition)].append(r)
        mod_groups[r.modality.value].append(r)
        mod_ui_groups[f"{r.modality.value}|{r.ui_mode.value}"].append(r)

    fitts = {}
    for key in sorted(mod_ui_groups):
        xs, ys = fitts_points(mod_ui_groups[key])
        try:
            fitts[key] = fitts_regression(xs, ys)
        except MetricsError:
            fitts[key] = None

    return Summary(
        conditions={k: condition_metrics(groups[k]) for k in sorted(groups)},
        by_modality={k: condition_metrics(mod_groups[k]) for k in sorted(mod_groups)},
        by_modality_ui={k: condition_metrics(mod_ui_groups[k]) for k in sorted(mod_ui_groups)},
        fitts=fitts,
        n_records=len(records),
    )


def export_verification(records: Iterable[TrialRecord], window_ms=LBA_RT_WINDOW_MS) -> list[dict]:
    """Verification-phase RTs of measured hits inside the LBA validity window."""
    lo, hi = window_ms
    rows = []
    for r in records:
        if r.is_practice or r.outcome is not Outcome.HIT or r.verification_ms is None:
            continue
        if lo <= r.verification_ms <= hi:
            rows.append(
                {
                    "participant_id": r.participant_id,
                    "modality": r.modality.value,
                    "ui_mode": r.ui_mode.value,
                    "pressure": r.pressure.value,
                    "ID_bits": r.ID_bits,
                    "rt_ms": r.verification_ms,
                }
            )
    return rows


def table_rows(summary: Summary) -> dict[str, list[dict]]:
    """Flat tables mirroring the performance, error-type and Fitts tables."""
    mods = [m.value for m in Modality]
    perf, errors = [], []
    for label, attr in (("throughput_bits_s", "throughput_bits_s"), ("error_rate", "error_rate"), ("mean_mt_s", "mean_mt_s")):
        row = {"metric": label}
        for m in mods:
            cm = summary.by_modality.get(m)
            row[m] = getattr(cm, attr) if cm else None
        perf.append(row)
    for kind in ERROR_KINDS:
        row = {"error_type": kind.value}
        for m in mods:
            cm = summary.by_modality.get(m)
            row[m] = cm.error_composition.get(kind.value) if cm and cm.error_composition else None
        errors.append(row)
    fitts = []
    for m in mods:
        for u in UiMode:
            fit = summary.fitts.get(f"{m}|{u.value}")
            fitts.append(
                {
                    "condition": f"{m}|{u.value}",
                    "slope_s_per_bit": fit.b_s_per_bit if fit else None,
                    "intercept_s": fit.a_s if fit else None,
                    "r_squared": fit.r_squared if fit else None,
                    "n_points": fit.n_points if fit else None,
                }
            )
    return {"table_performance": perf, "table_error_types": errors, "table_fitts": fitts}
