"""Simulation universes: standard mode banks, data generation with a
hidden change point, and custom banks fitted from samples or loaded from
file.

The stream generator is the only object that ever sees the full sensor
vector; policies read coordinates exclusively through `observe`, which
records every request, so partial-observation honesty is checkable after
the fact.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.interpolate import BSpline

from .gaussian import GaussianModel, ModeBank, as_generator

MIXINGS = ("single", "per_tick_uniform")


@dataclass(frozen=True)
class ScenarioSpec:
    """What universe to simulate and how the change behaves.

    change_time is the last in-control tick: data at t <= change_time is
    in-control, data afterwards comes from the true mode(s). None means
    the change never happens (pure null run); 0 means the stream starts
    already changed.
    """

    kind: str = "nonoverlap"
    delta: float = 0.8
    p: int = 1000
    K: int = 50
    rows: int = 30
    cols: int = 30
    knots: int = 7
    change_time: int | None = 0
    n_true_modes: int = 1
    true_modes: tuple[int, ...] | None = None
    mixing: str = "single"
    bank_file: str | None = None

    def __post_init__(self):
        if self.kind not in ("nonoverlap", "overlap", "custom"):
            raise ValueError(f"unknown scenario kind {self.kind!r}")
        if self.mixing not in MIXINGS:
            raise ValueError(f"unknown mixing {self.mixing!r}")
        if self.change_time is not None and self.change_time < 0:
            raise ValueError("change_time must be >= 0 (or None for no change)")
        if self.n_true_modes < 1:
            raise ValueError("n_true_modes must be >= 1")
        if self.true_modes is not None:
            object.__setattr__(self, "true_modes", tuple(int(m) for m in self.true_modes))
        if self.kind == "custom" and self.bank_file is None:
            raise ValueError("custom scenarios need a bank_file")

    def with_delta(self, delta: float) -> "ScenarioSpec":
        return replace(self, delta=float(delta))

    def as_null(self) -> "ScenarioSpec":
        return replace(self, change_time=None)


def build_nonoverlap(p: int = 1000, K: int = 50, delta: float = 0.8) -> ModeBank:
    """Disjoint-support bank: iid standard base, mode k lifts the mean by
    delta on its own contiguous block of p/K sensors (rows of the p-sensor
    array viewed as a K-by-(p/K) image)."""
    if p % K != 0:
        raise ValueError(f"p={p} must be divisible by K={K}")
    block = p // K
    base = GaussianModel.standard(p)
    modes = []
    for k in range(K):
        shift = np.zeros(p)
        shift[k * block : (k + 1) * block] = delta
        modes.append(base.shifted(shift))
    labels = [f"block_{k}" for k in range(K)]
    return ModeBank(base, modes, labels)


def _bump_basis(n_basis: int, length: float, degree: int = 2) -> list:
    """Clamped uniform B-spline basis functions covering [0, length]."""
    if n_basis < 2:
        raise ValueError("need at least 2 basis functions per axis")
    interior = np.linspace(0.0, length, n_basis - degree + 1)[1:-1]
    knots = np.concatenate([[0.0] * (degree + 1), interior, [length] * (degree + 1)])
    return [
        BSpline.basis_element(knots[i : i + degree + 2], extrapolate=False)
        for i in range(n_basis)
    ]


def build_overlap(
    rows: int = 30, cols: int = 30, knots: int = 7, delta: float = 0.8, degree: int = 2
) -> ModeBank:
    """Overlapping-support bank on a rows-by-cols pixel grid: one mode per
    knot pair, its mean shift a tensor-product spline bump peaked at delta.
    Neighbouring bumps overlap; bumps three or more knots apart do not."""
    if knots < 2:
        raise ValueError("need at least 2 knots per axis")
    p = rows * cols
    base = GaussianModel.standard(p)
    row_basis = _bump_basis(knots, rows - 1.0, degree)
    col_basis = _bump_basis(knots, cols - 1.0, degree)
    row_vals = [np.nan_to_num(b(np.arange(rows, dtype=np.float64))) for b in row_basis]
    col_vals = [np.nan_to_num(b(np.arange(cols, dtype=np.float64))) for b in col_basis]
    modes, labels = [], []
    for a in range(knots):
        for b in range(knots):
            bump = np.outer(row_vals[a], col_vals[b])
            bump = bump / bump.max()
            modes.append(base.shifted(delta * bump.ravel()))
            labels.append(f"bump_{a}_{b}")
    return ModeBank(base, modes, labels)


def bank_from_samples(base_samples, mode_samples, labels=None, var_floor: float = 1e-6) -> ModeBank:
    """Fit a diagonal bank from data: per-coordinate sample mean and
    variance for the in-control samples and for each mode's samples, with
    a variance floor guarding degenerate coordinates."""
    base_samples = np.asarray(base_samples, dtype=np.float64)
    if base_samples.ndim != 2:
        raise ValueError("samples must be (n, p) arrays")

    def fit(samples):
        samples = np.asarray(samples, dtype=np.float64)
        mean = samples.mean(axis=0)
        var = np.maximum(samples.var(axis=0, ddof=1), var_floor)
        return GaussianModel.diagonal(mean, var)

    base = fit(base_samples)
    modes = [fit(s) for s in mode_samples]
    return ModeBank(base, modes, labels)


def save_bank(bank: ModeBank, path):
    """Write a diagonal bank as JSON: base + per-mode means/variances."""
    if not bank.is_diagonal:
        raise ValueError("only diagonal banks serialise to the bank file format")
    payload = {
        "base": {"mean": bank.base.mean.tolist(), "variances": bank.base.variances.tolist()},
        "modes": [
            {
                "label": bank.labels[k],
                "mean": m.mean.tolist(),
                "variances": m.variances.tolist(),
            }
            for k, m in enumerate(bank.modes)
        ],
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh)


def load_bank(path) -> ModeBank:
    with open(path, "r", encoding="utf-8") as fh:
        payload = json.load(fh)
    base = GaussianModel.diagonal(payload["base"]["mean"], payload["base"]["variances"])
    modes = [GaussianModel.diagonal(m["mean"], m["variances"]) for m in payload["modes"]]
    labels = [m["label"] for m in payload["modes"]]
    return ModeBank(base, modes, labels)


def bank_for(spec: ScenarioSpec) -> ModeBank:
    if spec.kind == "nonoverlap":
        return build_nonoverlap(spec.p, spec.K, spec.delta)
    if spec.kind == "overlap":
        return build_overlap(spec.rows, spec.cols, spec.knots, spec.delta)
    return load_bank(spec.bank_file)


@dataclass
class StreamTick:
    """One tick of hidden truth; policies never see full_x directly."""

    time: int
    full_x: np.ndarray


class StreamGenerator:
    """Seeded data source enforcing the partial-observation discipline.

    Ticks must be consumed in order, each exactly once; every observe()
    call is appended to the access log. The true-mode set is resolved at
    construction (drawn uniformly without replacement when the spec leaves
    it open), and per-tick mixing draws are recorded in mode_trace
    (-1 marks an in-control tick).
    """

    def __init__(self, spec: ScenarioSpec, bank: ModeBank, rng, record_detail: bool = True):
        if spec.true_modes is not None and any(m >= bank.K for m in spec.true_modes):
            raise ValueError("true_modes outside the bank")
        self.spec = spec
        self.bank = bank
        self.rng = as_generator(rng)
        if spec.true_modes is not None:
            self.true_modes = tuple(spec.true_modes)
        else:
            drawn = self.rng.choice(bank.K, size=spec.n_true_modes, replace=False)
            self.true_modes = tuple(int(m) for m in np.sort(drawn))
        if spec.mixing == "single" and len(self.true_modes) != 1:
            raise ValueError("single mixing requires exactly one true mode")
        self._t = 0
        self.record_detail = record_detail
        self.access_log: list[tuple[int, np.ndarray]] = []
        self.mode_trace: list[int] = []

    def _draw_tick(self, t: int) -> StreamTick:
        spec = self.spec
        in_control = spec.change_time is None or t <= spec.change_time
        if in_control:
            mode = -1
            model = self.bank.base
        else:
            if spec.mixing == "single":
                mode = self.true_modes[0]
            else:
                mode = self.true_modes[int(self.rng.integers(len(self.true_modes)))]
            model = self.bank.modes[mode]
        if self.record_detail:
            self.mode_trace.append(mode)
        z = self.rng.standard_normal(self.bank.dim)
        if model.is_diagonal:
            x = model.mean + np.sqrt(model.variances) * z
        else:
            x = model.mean + model._chol @ z
        return StreamTick(time=t, full_x=x)

    def observe(self, t: int, indices) -> np.ndarray:
        """Return the requested coordinates of tick t, logging the access."""
        if t != self._t + 1:
            raise ValueError(f"ticks must be observed in order; expected t={self._t + 1}, got {t}")
        idx = np.asarray(indices, dtype=np.intp).reshape(-1)
        if idx.size and (idx[0] < 0 or idx[-1] >= self.bank.dim):
            raise ValueError("requested index out of range")
        tick = self._draw_tick(t)
        self._t = t
        if self.record_detail:
            self.access_log.append((t, idx.copy()))
        return tick.full_x[idx]
