"""Linear Ballistic Accumulator for verification-phase response times.

Two accumulators race: a commit accumulator with drift
``v_correct_base + beta_id * ID`` and an alternative with fixed drift
``v_alt``. Start points are Uniform(0, A), drifts Normal(v, s), the shared
threshold is ``b = A + k_gap + beta_pressure * pressure`` and the
non-decision time ``t0`` varies by cell (modality x UI mode).

The single-accumulator density and CDF are the closed forms of Brown &
Heathcote (2008).
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np
from scipy import optimize
from scipy.special import expit, logit, ndtr

log = logging.getLogger(__name__)

_INV_SQRT_2PI = 1.0 / math.sqrt(2.0 * math.pi)
LOW_N_PER_CELL = 200


class LbaError(ValueError):
    pass


class LbaFitError(RuntimeError):
    def __init__(self, message: str, trace: list | None = None):
        super().__init__(message)
        self.trace = trace or []


@dataclass(frozen=True)
class LbaParams:
    A_start: float
    k_gap: float
    v_correct_base: float
    beta_id: float
    t0_s: Mapping[str, float]
    beta_pressure: float = 0.0
    v_alt: float = 1.0
    s_drift: float = 1.0

    def __post_init__(self) -> None:
        if not (self.A_start > 0 and self.k_gap > 0):
            raise LbaError("A_start and k_gap must be positive")
        if not self.s_drift > 0:
            raise LbaError("s_drift must be positive")
        if not self.t0_s:
            raise LbaError("at least one t0 cell is required")
        for cell, t0 in self.t0_s.items():
            if not t0 >= 0:
                raise LbaError(f"t0 for cell {cell!r} must be >= 0")
        values = [self.A_start, self.k_gap, self.v_correct_base, self.beta_id, self.beta_pressure, self.v_alt]
        if not all(math.isfinite(v) for v in values):
            raise LbaError("parameters must be finite")

    @property
    def b(self) -> float:
        return self.A_start + self.k_gap

    @property
    def cells(self) -> tuple[str, ...]:
        return tuple(sorted(self.t0_s))

    def threshold(self, pressure) -> np.ndarray:
        return self.b + self.beta_pressure * np.asarray(pressure, dtype=float)

    def drifts(self, id_bits) -> tuple[np.ndarray, np.ndarray]:
        v_commit = self.v_correct_base + self.beta_id * np.asarray(id_bits, dtype=float)
        return v_commit, np.full_like(v_commit, self.v_alt)

    def to_dict(self) -> dict:
        return {
            "A_start": self.A_start,
            "k_gap": self.k_gap,
            "v_correct_base": self.v_correct_base,
            "beta_id": self.beta_id,
            "beta_pressure": self.beta_pressure,
            "t0_s": dict(sorted(self.t0_s.items())),
            "v_alt": self.v_alt,
            "s_drift": self.s_drift,
        }


def reference_preset(t0_s: Mapping[str, float] | None = None) -> LbaParams:
    """Shared effects from the published group-level fit, usable as a simulation preset.

    The published non-decision times are on an unstated latent scale; here they
    are mapped through ``exp`` (log link) to seconds, which keeps their ordering.
    The threshold intercept is not reported, so A and k are set to 0.5.
    """
    latent = {"hand|static": -2.85, "hand|adaptive": -3.01, "gaze|static": -1.41, "gaze|adaptive": -0.97}
    t0 = dict(t0_s) if t0_s is not None else {k: math.exp(v) for k, v in latent.items()}
    return LbaParams(A_start=0.5, k_gap=0.5, v_correct_base=5.03, beta_id=-0.93, t0_s=t0, beta_pressure=0.06)


# ---------------------------------------------------------------------------
# single accumulator


def _phi(z):
    return _INV_SQRT_2PI * np.exp(-0.5 * z * z)


def lba_pdf(t, A, b, v, s):
    """First-passage density of one accumulator at decision time ``t > 0``."""
    t = np.asarray(t, dtype=float)
    ts = t * s
    z1 = (b - A - t * v) / ts
    z2 = (b - t * v) / ts
    dens = (-v * ndtr(z1) + s * _phi(z1) + v * ndtr(z2) - s * _phi(z2)) / A
    return np.maximum(dens, 0.0)


def lba_cdf(t, A, b, v, s):
    """First-passage CDF of one accumulator at decision time ``t > 0``."""
    t = np.asarray(t, dtype=float)
    ts = t * s
    z1 = (b - A - t * v) / ts
    z2 = (b - t * v) / ts
    cdf = (
        1.0
        + (b - A - t * v) / A * ndtr(z1)
        - (b - t * v) / A * ndtr(z2)
        + ts / A * _phi(z1)
        - ts / A * _phi(z2)
    )
    return np.clip(cdf, 0.0, 1.0)


# ---------------------------------------------------------------------------
# race


@dataclass(frozen=True)
class LbaData:
    """Trial-level RTs with covariates; ``cell`` holds indices into ``cells``."""

    rt_s: np.ndarray
    id_bits: np.ndarray
    pressure: np.ndarray
    cell: np.ndarray
    cells: tuple[str, ...]
    winner: np.ndarray

    @classmethod
    def from_arrays(cls, rt_s, id_bits, pressure, cell_labels, winner=None) -> "LbaData":
        rt = np.asarray(rt_s, dtype=float)
        n = rt.size
        if n == 0:
            raise LbaError("empty dataset")
        labels = np.asarray(cell_labels, dtype=object)
        if labels.ndim == 0:
            labels = np.full(n, labels.item(), dtype=object)
        cells = tuple(sorted(set(labels.tolist())))
        index = {c: i for i, c in enumerate(cells)}
        data = cls(
            rt_s=rt,
            id_bits=np.broadcast_to(np.asarray(id_bits, dtype=float), (n,)).copy(),
            pressure=np.broadcast_to(np.asarray(pressure, dtype=float), (n,)).copy(),
            cell=np.array([index[c] for c in labels.tolist()], dtype=int),
            cells=cells,
            winner=np.zeros(n, dtype=int) if winner is None else np.asarray(winner, dtype=int).copy(),
        )
        if data.cell.size != n or data.winner.size != n:
            raise LbaError("covariate lengths differ from rt length")
        if not np.all(np.isfinite(rt)):
            raise LbaError("non-finite RT")
        if np.any((data.winner < 0) | (data.winner > 1)):
            raise LbaError("winner index must be 0 (commit) or 1 (alternative)")
        return data

    @classmethod
    def from_verification_rows(cls, rows: Sequence[Mapping]) -> "LbaData":
        """Build from verification-export rows (``rt_ms``, ``ID_bits``, ``pressure``, ``modality``, ``ui_mode``)."""
        rows = list(rows)
        if not rows:
            raise LbaError("empty dataset")
        return cls.from_arrays(
            [float(r["rt_ms"]) / 1000.0 for r in rows],
            [float(r["ID_bits"]) for r in rows],
            [1.0 if r["pressure"] == "time_limited" else 0.0 for r in rows],
            [f"{r['modality']}|{r['ui_mode']}" for r in rows],
        )

    def __len__(self) -> int:
        return int(self.rt_s.size)

    def subset(self, idx) -> "LbaData":
        return LbaData(
            self.rt_s[idx], self.id_bits[idx], self.pressure[idx], self.cell[idx], self.cells, self.winner[idx]
        )

    def counts(self) -> dict[str, int]:
        return {c: int(np.sum(self.cell == i)) for i, c in enumerate(self.cells)}


def _race_density(dt, winner, A, b, v_commit, v_alt, s):
    """Defective density for decision times ``dt > 0`` (vectorized)."""
    v_win = np.where(winner == 0, v_commit, v_alt)
    v_other = np.where(winner == 0, v_alt, v_commit)
    return lba_pdf(dt, A, b, v_win, s) * (1.0 - lba_cdf(dt, A, b, v_other, s))


def lba_defective_density(t_s, winner_idx, params: LbaParams, id_bits=0.0, pressure=0.0, cell: str | None = None):
    """Density that accumulator ``winner_idx`` finishes first at ``t_s``; zero for ``t_s <= t0``."""
    if cell is None:
        if len(params.t0_s) != 1:
            raise LbaError("cell is required when params carry several t0 cells")
        cell = next(iter(params.t0_s))
    if cell not in params.t0_s:
        raise LbaError(f"unknown cell {cell!r}")
    if winner_idx not in (0, 1):
        raise LbaError("winner_idx must be 0 or 1")
    t = np.asarray(t_s, dtype=float)
    dt = t - params.t0_s[cell]
    b = params.threshold(pressure)
    if np.any(b <= params.A_start):
        raise LbaError("threshold must exceed A_start under every pressure level")
    v_commit, v_alt = params.drifts(id_bits)
    positive = dt > 0
    safe = np.where(positive, dt, 1.0)
    dens = _race_density(safe, np.asarray(winner_idx), params.A_start, b, v_commit, v_alt, params.s_drift)
    out = np.where(positive, dens, 0.0)
    return float(out) if out.ndim == 0 else out


def negative_log_likelihood(data: LbaData, params: LbaParams) -> float:
    """``-sum log`` defective density of each trial's winning accumulator.

    Returns ``inf`` when any trial falls outside the support.
    """
    if len(data) == 0:
        raise LbaError("empty dataset")
    missing = set(data.cells) - set(params.t0_s)
    if missing:
        raise LbaError(f"params lack t0 for cells {sorted(missing)}")
    t0 = np.array([params.t0_s[c] for c in data.cells])[data.cell]
    return _nll_arrays(
        data, params.A_start, params.k_gap, params.v_correct_base, params.beta_id, params.beta_pressure, t0,
        params.v_alt, params.s_drift,
    )


def _nll_arrays(data, A, k, v0, beta_id, beta_p, t0, v_alt, s) -> float:
    dt = data.rt_s - t0
    if np.any(dt <= 0):
        return math.inf
    gap = k + beta_p * data.pressure
    if np.any(gap <= 0):
        return math.inf
    dens = _race_density(dt, data.winner, A, A + gap, v0 + beta_id * data.id_bits, v_alt, s)
    if np.any(dens <= 0) or not np.all(np.isfinite(dens)):
        return math.inf
    return float(-np.sum(np.log(dens)))


def simulate_lba(
    params: LbaParams,
    n: int,
    seed: int | np.random.Generator | None = None,
    id_bits=0.0,
    pressure=0.0,
    cell=None,
) -> tuple[np.ndarray, np.ndarray]:
    """Draw ``n`` trials; returns ``(rt_s, winner_idx)``.

    Trials where every drift is non-positive are redrawn.
    """
    rng = np.random.default_rng(seed)
    ids = np.broadcast_to(np.asarray(id_bits, dtype=float), (n,))
    press = np.broadcast_to(np.asarray(pressure, dtype=float), (n,))
    if cell is None:
        if len(params.t0_s) != 1:
            raise LbaError("cell labels required when params carry several t0 cells")
        cell = next(iter(params.t0_s))
    labels = np.broadcast_to(np.asarray(cell, dtype=object), (n,))
    t0 = np.array([params.t0_s[c] for c in labels.tolist()], dtype=float)
    b = params.threshold(press)
    if np.any(b <= params.A_start):
        raise LbaError("threshold must exceed A_start under every pressure level")
    v_commit, v_alt = params.drifts(ids)
    means = np.column_stack([v_commit, v_alt])

    drifts = rng.normal(means, params.s_drift)
    bad = np.all(drifts <= 0, axis=1)
    while bad.any():
        drifts[bad] = rng.normal(means[bad], params.s_drift)
        bad = np.all(drifts <= 0, axis=1)
    start = rng.uniform(0.0, params.A_start, size=(n, 2))
    with np.errstate(divide="ignore"):
        finish = np.where(drifts > 0, (b[:, None] - start) / drifts, np.inf)
    winner = np.argmin(finish, axis=1)
    rt = t0 + finish[np.arange(n), winner]
    return rt, winner


# ---------------------------------------------------------------------------
# fitting

PARAM_NAMES = ("A_start", "k_gap", "v_correct_base", "beta_id", "beta_pressure")


@dataclass
class StartResult:
    index: int
    x0: list[float]
    nll: float
    converged: bool
    nit: int
    nfev: int
    message: str


@dataclass
class FitResult:
    params: LbaParams
    nll: float
    theta: np.ndarray
    starts: list[StartResult]
    diagnostics: dict = field(default_factory=dict)
    bootstrap: dict | None = None

    def report(self) -> dict:
        return {
            "estimates": self.params.to_dict(),
            "nll": self.nll,
            "n_starts": len(self.starts),
            "starts": [vars(s) for s in self.starts],
            "diagnostics": self.diagnostics,
            "bootstrap": self.bootstrap,
        }


class _Objective:
    """Maps unconstrained ``theta`` to parameters.

    ``theta = [ln A, ln k, v, beta_id, beta_pressure, logit(t0_c / min_rt_c)...]``:
    log links keep A and k positive, the scaled logit keeps each t0 inside
    ``(0, min RT of its cell)``.
    """

    def __init__(self, data: LbaData, v_alt: float, s: float):
        self.data = data
        self.v_alt = v_alt
        self.s = s
        self.min_rt = np.array([data.rt_s[data.cell == i].min() for i in range(len(data.cells))])

    def unpack(self, theta):
        theta = np.asarray(theta, dtype=float)
        A, k = math.exp(theta[0]), math.exp(theta[1])
        t0 = self.min_rt * expit(theta[5:])
        return A, k, theta[2], theta[3], theta[4], t0

    def pack(self, A, k, v, beta_id, beta_p, t0) -> np.ndarray:
        frac = np.clip(np.asarray(t0, dtype=float) / self.min_rt, 1e-6, 1 - 1e-6)
        return np.concatenate([[math.log(A), math.log(k), v, beta_id, beta_p], logit(frac)])

    def __call__(self, theta) -> float:
        if not np.all(np.isfinite(theta)) or abs(theta[0]) > 30 or abs(theta[1]) > 30:
            return math.inf
        A, k, v, bi, bp, t0 = self.unpack(theta)
        return _nll_arrays(self.data, A, k, v, bi, bp, t0[self.data.cell], self.v_alt, self.s)

    def params(self, theta) -> LbaParams:
        A, k, v, bi, bp, t0 = self.unpack(theta)
        return LbaParams(
            A_start=A, k_gap=k, v_correct_base=float(v), beta_id=float(bi),
            t0_s={c: float(t) for c, t in zip(self.data.cells, t0)},
            beta_pressure=float(bp), v_alt=self.v_alt, s_drift=self.s,
        )


def _random_start(obj: _Objective, rng: np.random.Generator) -> np.ndarray:
    return obj.pack(
        rng.uniform(0.1, 1.0),
        rng.uniform(0.1, 1.0),
        rng.uniform(1.0, 5.0),
        rng.uniform(-0.5, 0.5),
        rng.uniform(-0.1, 0.1),
        obj.min_rt * rng.uniform(0.2, 0.8, size=obj.min_rt.size),
    )


def _nm(obj, x0, maxiter, xatol, fatol):
    opts = {"xatol": xatol, "fatol": fatol, "maxiter": maxiter, "maxfev": 2 * maxiter, "adaptive": True}
    with np.errstate(invalid="ignore"):  # inf - inf in the simplex spread test
        return optimize.minimize(obj, x0, method="Nelder-Mead", options=opts)


def _polish(obj, res, maxiter):
    """Restart the simplex at tight tolerance until it stops improving."""
    nit, nfev = res.nit, res.nfev
    for _ in range(4):
        again = _nm(obj, res.x, maxiter, 1e-6, 1e-7)
        nit += again.nit
        nfev += again.nfev
        improved = res.fun - again.fun
        if again.fun <= res.fun:
            res = again
        if improved < 1e-7:
            break
    return res, nit, nfev


def fit_mle(
    data: LbaData,
    n_starts: int = 10,
    seed: int = 0,
    init: LbaParams | None = None,
    maxiter: int = 6000,
    v_alt: float = 1.0,
    s_drift: float = 1.0,
) -> FitResult:
    """Multi-start Nelder-Mead maximum likelihood.

    Start 0 is ``init`` when given; the rest are seeded random draws. The
    best start wins, ties broken by start index.
    """
    if len(data) == 0:
        raise LbaError("empty dataset")
    if n_starts < 1:
        raise LbaError("n_starts must be >= 1")
    if np.ptp(data.rt_s) == 0:
        raise LbaFitError("degenerate dataset: all RTs identical, no estimate possible")
    obj = _Objective(data, v_alt, s_drift)
    rng = np.random.default_rng(seed)
    x0s = []
    if init is not None:
        t0 = [init.t0_s.get(c, 0.5 * m) for c, m in zip(data.cells, obj.min_rt)]
        x0s.append(obj.pack(init.A_start, init.k_gap, init.v_correct_base, init.beta_id, init.beta_pressure, t0))
    while len(x0s) < n_starts:
        x0s.append(_random_start(obj, rng))

    # coarse simplex per start, tight polish of the winner only
    starts: list[StartResult] = []
    best, best_i = None, -1
    for i, x0 in enumerate(x0s):
        res = _nm(obj, x0, maxiter, 1e-3, 1e-4)
        ok = bool(res.success) and math.isfinite(res.fun)
        starts.append(StartResult(i, [float(v) for v in x0], float(res.fun), ok, int(res.nit), int(res.nfev), str(res.message)))
        if ok and (best is None or res.fun < best.fun):
            best, best_i = res, i
    if best is None:
        raise LbaFitError("all starts failed to converge", [vars(s) for s in starts])
    best, nit, nfev = _polish(obj, best, maxiter)
    s = starts[best_i]
    s.nll, s.nit, s.nfev, s.message = float(best.fun), s.nit + nit, s.nfev + nfev, str(best.message)

    params = obj.params(best.x)
    return FitResult(params, float(best.fun), best.x, starts, _diagnostics(data, obj, best.x, params, starts))


def _diagnostics(data: LbaData, obj: _Objective, theta, params: LbaParams, starts) -> dict:
    warnings: list[str] = []
    counts = data.counts()
    low = sorted(c for c, n in counts.items() if n < LOW_N_PER_CELL)
    if low:
        warnings.append(f"low_n: cells {low} have fewer than {LOW_N_PER_CELL} trials")
    boundary = []
    if params.A_start < 1e-3 or params.A_start > 50:
        boundary.append("A_start")
    if params.k_gap < 1e-3 or params.k_gap > 50:
        boundary.append("k_gap")
    for c, t0, m in zip(data.cells, (params.t0_s[c] for c in data.cells), obj.min_rt):
        if t0 / m > 0.999 or t0 / m < 1e-3:
            boundary.append(f"t0[{c}]")
    if boundary:
        warnings.append(f"boundary: {boundary}")
    for w in warnings:
        log.warning("lba fit: %s", w)
    best_nll = min(s.nll for s in starts if s.converged)
    return {
        "n_trials": len(data),
        "n_per_cell": counts,
        "warnings": warnings,
        "boundary": boundary,
        "low_n_cells": low,
        "n_converged": sum(s.converged for s in starts),
        "n_at_best": sum(s.converged and s.nll - best_nll < 1e-3 for s in starts),
        "max_abs_gradient": float(np.max(np.abs(numerical_gradient(obj, theta)))),
    }


def numerical_gradient(fn, theta, h: float = 1e-5) -> np.ndarray:
    theta = np.asarray(theta, dtype=float)
    grad = np.empty_like(theta)
    for i in range(theta.size):
        e = np.zeros_like(theta)
        e[i] = h
        grad[i] = (fn(theta + e) - fn(theta - e)) / (2 * h)
    return grad


def bootstrap(
    data: LbaData,
    fit: FitResult,
    n_boot: int = 50,
    seed: int = 0,
    n_starts: int = 2,
    level: float = 0.95,
) -> dict:
    """Nonparametric bootstrap: resample trials, refit from the MLE, percentile intervals."""
    rng = np.random.default_rng(seed)
    draws: dict[str, list[float]] = {}
    failures = 0
    for r in range(n_boot):
        idx = rng.integers(0, len(data), size=len(data))
        sample = data.subset(idx)
        try:
            refit = fit_mle(sample, n_starts=n_starts, seed=int(rng.integers(2**31)), init=fit.params)
        except (LbaFitError, LbaError):
            failures += 1
            continue
        flat = refit.params.to_dict()
        for name in PARAM_NAMES:
            draws.setdefault(name, []).append(flat[name])
        for c, t0 in flat["t0_s"].items():
            draws.setdefault(f"t0_s[{c}]", []).append(t0)
    alpha = (1.0 - level) / 2.0
    intervals = {k: [float(np.quantile(v, alpha)), float(np.quantile(v, 1 - alpha))] for k, v in draws.items()}
    fit.bootstrap = {"n_boot": n_boot, "failures": failures, "level": level, "intervals": intervals}
    return fit.bootstrap
