"""Noise schedules and the difficulty-adaptive token-wise schedule construction.

A cumulative schedule holds the signal-retention coefficients abar_t for
t = 0..T (abar_0 = 1). The adaptive construction runs in two stages: window
averaging of per-token denoising losses, then a monotone loss-to-coefficient
mapping anchored between the baseline's per-window rates, followed by a
cumulative-product reconstruction. Unaligned tokens keep the baseline
schedule object itself, so equality is bit-for-bit.

Window anchor convention: the per-step coefficient attributed to a window
boundary t_m is the geometric mean rate of the window ending at t_m,
(abar_{t_m}/abar_{t_{m-1}})^(1/(t_m - t_{m-1})). With this convention the
mapped window coefficient can never fall below the window's own mean rate,
which keeps reconstructed schedules from drifting under the baseline at
window boundaries. All schedule math is double precision.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

import numpy as np

_SHAPE_FAMILIES = ("linear", "polynomial", "exponential", "cosine")


class CumulativeSchedule:
    """abar values indexed t = 0..T; abar_0 = 1, strictly positive, non-increasing."""

    def __init__(self, values: Sequence[float] | np.ndarray):
        arr = np.asarray(values, dtype=np.float64).copy()
        if arr.ndim != 1 or arr.size < 2:
            raise ValueError("schedule needs abar values for t = 0..T with T >= 1")
        if arr[0] != 1.0:
            raise ValueError("abar_0 must be exactly 1")
        if np.any(arr <= 0.0):
            raise ValueError("abar values must be strictly positive")
        if np.any(np.diff(arr) > 0.0):
            raise ValueError("abar values must be non-increasing")
        arr.flags.writeable = False
        self.values = arr

    @property
    def T(self) -> int:
        return self.values.size - 1

    def __getitem__(self, t: int) -> float:
        return float(self.values[t])

    def __len__(self) -> int:
        return self.values.size

    def __eq__(self, other: object) -> bool:
        return isinstance(other, CumulativeSchedule) and np.array_equal(self.values, other.values)


@dataclass(frozen=True)
class PerStepCoeffs:
    """alpha_t = abar_t/abar_{t-1} and beta_t = 1 - alpha_t for t = 1..T."""

    alpha: np.ndarray
    beta: np.ndarray


@dataclass
class DifficultyProfile:
    """Per-timestep mean squared denoising error for one vocabulary token id.

    ``losses[t-1]`` holds the value at diffusion step t; ``count`` is the
    number of aligned occurrences pooled into the running mean.
    """

    losses: np.ndarray
    count: int = 1

    def __post_init__(self) -> None:
        self.losses = np.asarray(self.losses, dtype=np.float64)
        if np.any(self.losses < 0.0):
            raise ValueError("difficulty values must be >= 0")
        if self.count < 1:
            raise ValueError("count must be >= 1")

    def merge(self, other: "DifficultyProfile") -> "DifficultyProfile":
        """Occurrence-weighted running mean; associative up to fp rounding."""
        total = self.count + other.count
        mixed = (self.losses * self.count + other.losses * other.count) / total
        return DifficultyProfile(mixed, total)


@dataclass(frozen=True)
class WindowSpec:
    """Non-overlapping windows of k_win steps partitioning {1..T}; the last may be short."""

    T: int
    k_win: int

    def __post_init__(self) -> None:
        if self.T < 1 or self.k_win < 1:
            raise ValueError("T and k_win must be >= 1")

    @property
    def n_windows(self) -> int:
        return math.ceil(self.T / self.k_win)

    def bounds(self, m: int) -> tuple[int, int]:
        """(t_{m-1}, t_m) for window m in 1..n_windows; steps are t_{m-1}+1 .. t_m."""
        if not 1 <= m <= self.n_windows:
            raise ValueError(f"window index {m} out of range")
        return (m - 1) * self.k_win, min(m * self.k_win, self.T)


@dataclass(frozen=True)
class MappingConfig:
    """Loss-to-coefficient mapping: shape family, stabilizer, and clip floor.

    ``alpha_min=None`` defers to the construction-time default, the smallest
    baseline per-step coefficient.
    """

    family: str = "linear"
    p: float = 2.0
    beta: float = 3.0
    tau: float = 1e-8
    alpha_min: float | None = None

    def __post_init__(self) -> None:
        if self.family not in _SHAPE_FAMILIES:
            raise ValueError(f"unknown mapping family {self.family!r}; choose from {_SHAPE_FAMILIES}")
        if self.p < 1:
            raise ValueError("polynomial degree p must be >= 1")
        if self.beta <= 0:
            raise ValueError("exponential rate beta must be > 0")
        if self.tau <= 0:
            raise ValueError("stabilizer tau must be > 0")
        if self.alpha_min is not None and not 0.0 < self.alpha_min < 1.0:
            raise ValueError("alpha_min must lie in (0,1)")

    def shape(self, u: float) -> float:
        """Monotone shape function on [0,1] with phi(0)=0 and phi(1)=1."""
        if self.family == "linear":
            return u
        if self.family == "polynomial":
            return u**self.p
        if self.family == "exponential":
            return (math.exp(self.beta * u) - 1.0) / (math.exp(self.beta) - 1.0)
        return 0.5 * (1.0 - math.cos(math.pi * u))


def sqrt_baseline(T: int, s: float = 1e-4, floor: float = 1e-4) -> CumulativeSchedule:
    """Square-root cumulative schedule abar_t = max(1 - sqrt(t/T + s), floor)."""
    if T < 1:
        raise ValueError("T must be >= 1")
    if s <= 0:
        raise ValueError("offset s must be > 0")
    if floor <= 0:
        raise ValueError("floor must be > 0")
    t = np.arange(T + 1, dtype=np.float64)
    abar = np.maximum(1.0 - np.sqrt(t / T + s), floor)
    abar[0] = 1.0
    return CumulativeSchedule(abar)


def table_schedule(points: Sequence[tuple[float, float]], T: int) -> CumulativeSchedule:
    """Schedule from an explicit (t, abar) grid, piecewise-linear in between.

    The grid must be strictly increasing in t, non-increasing and positive in
    abar, and reach t = T. A grid starting after t = 0 is anchored at
    abar_0 = 1.
    """
    if not points:
        raise ValueError("empty schedule grid")
    ts = np.asarray([p[0] for p in points], dtype=np.float64)
    vs = np.asarray([p[1] for p in points], dtype=np.float64)
    if np.any(np.diff(ts) <= 0):
        raise ValueError("grid t values must be strictly increasing")
    if np.any(np.diff(vs) > 0):
        raise ValueError("grid abar values must be non-increasing")
    if np.any(vs <= 0):
        raise ValueError("grid abar values must be positive")
    if ts[0] > 0:
        if vs[0] > 1.0:
            raise ValueError("grid abar values must not exceed 1")
        ts = np.concatenate(([0.0], ts))
        vs = np.concatenate(([1.0], vs))
    elif vs[0] != 1.0:
        raise ValueError("grid value at t=0 must be 1")
    if ts[-1] < T:
        raise ValueError(f"grid must cover t = T = {T}")
    abar = np.interp(np.arange(T + 1, dtype=np.float64), ts, vs)
    return CumulativeSchedule(abar)


def per_step(sched: CumulativeSchedule) -> PerStepCoeffs:
    """Exact per-step ratios alpha_t = abar_t/abar_{t-1} and beta_t = 1 - alpha_t."""
    alpha = sched.values[1:] / sched.values[:-1]
    return PerStepCoeffs(alpha=alpha, beta=1.0 - alpha)


def snr(abar: float) -> float:
    """Signal-to-noise ratio abar/(1 - abar) of a cumulative coefficient."""
    if abar >= 1.0:
        raise ValueError("infinite SNR: abar must be < 1")
    if abar <= 0.0:
        raise ValueError("abar must be positive")
    return abar / (1.0 - abar)


def window_stats(
    profiles: Mapping[int, DifficultyProfile],
    spec: WindowSpec,
) -> tuple[dict[int, np.ndarray], np.ndarray, np.ndarray]:
    """Window-averaged difficulties per token plus per-window extrema.

    Returns (means, l_min, l_max) where ``means[token_id][m-1]`` is the mean
    loss of window m and the extrema are taken across the aligned token ids.
    """
    if not profiles:
        raise ValueError("no aligned tokens")
    M = spec.n_windows
    means: dict[int, np.ndarray] = {}
    for token_id, profile in profiles.items():
        if profile.losses.size != spec.T:
            raise ValueError(
                f"profile for token {token_id} covers {profile.losses.size} steps, expected T={spec.T}"
            )
        out = np.empty(M, dtype=np.float64)
        for m in range(1, M + 1):
            lo, hi = spec.bounds(m)
            out[m - 1] = profile.losses[lo:hi].mean()
        means[token_id] = out
    stacked = np.stack(list(means.values()))
    return means, stacked.min(axis=0), stacked.max(axis=0)


def psi_map(
    x: float,
    alpha_hi: float,
    alpha_lo: float,
    l_min: float,
    l_max: float,
    cfg: MappingConfig,
    alpha_min: float,
) -> float:
    """Map a window difficulty to a per-step coefficient in [alpha_min, 1].

    ``alpha_hi``/``alpha_lo`` are the baseline coefficients at the window's
    start/end boundaries; higher difficulty moves the result toward
    ``alpha_hi`` (less noising). Monotone non-decreasing in ``x``; out-of-range
    difficulties saturate at the endpoints.
    """
    if x < 0:
        raise ValueError("difficulty must be >= 0")
    if alpha_hi < alpha_lo:
        raise ValueError("window anchors inverted: require alpha(t_{m-1}) >= alpha(t_m)")
    u = (x - l_min) / (l_max - l_min + cfg.tau)
    u = min(max(u, 0.0), 1.0)
    value = alpha_lo + cfg.shape(u) * (alpha_hi - alpha_lo)
    return min(max(value, alpha_min), 1.0)


def _window_rates(baseline: CumulativeSchedule, spec: WindowSpec) -> np.ndarray:
    """Geometric-mean per-step coefficient of each window (index m-1)."""
    rates = np.empty(spec.n_windows, dtype=np.float64)
    for m in range(1, spec.n_windows + 1):
        lo, hi = spec.bounds(m)
        rates[m - 1] = (baseline[hi] / baseline[lo]) ** (1.0 / (hi - lo))
    return rates


class TokenWiseSchedule:
    """Baseline schedule plus per-token adaptive schedules for aligned ids.

    ``lookup`` returns the baseline object itself for unaligned positions, so
    unaligned equality is bit-for-bit.
    """

    def __init__(self, baseline: CumulativeSchedule, per_token: Mapping[int, CumulativeSchedule]):
        self.baseline = baseline
        self.per_token: dict[int, CumulativeSchedule] = dict(per_token)
        for token_id, sched in self.per_token.items():
            if sched.T != baseline.T:
                raise ValueError(f"schedule for token {token_id} has T={sched.T}, baseline T={baseline.T}")

    @property
    def T(self) -> int:
        return self.baseline.T

    def lookup(self, token_id: int, aligned: bool) -> CumulativeSchedule:
        if aligned:
            return self.per_token.get(token_id, self.baseline)
        return self.baseline

    def abar_at(self, token_ids: np.ndarray, aligned: np.ndarray, t: int) -> np.ndarray:
        """Per-position abar_t for an id array and its aligned mask."""
        out = np.full(token_ids.shape, self.baseline[t], dtype=np.float64)
        for token_id, sched in self.per_token.items():
            sel = aligned & (token_ids == token_id)
            if np.any(sel):
                out[sel] = sched[t]
        return out


def build_token_schedules(
    baseline: CumulativeSchedule,
    aligned_ids: Iterable[int],
    profiles: Mapping[int, DifficultyProfile],
    spec: WindowSpec,
    cfg: MappingConfig,
) -> TokenWiseSchedule:
    """Reconstruct per-token cumulative schedules from difficulty profiles.

    Window 1 keeps the baseline per-step coefficients verbatim; later windows
    get the window-constant mapped coefficient. The cumulative product starts
    from abar_0 = 1 and is clipped nowhere else, so validity follows from the
    per-step clip alone.
    """
    if spec.T != baseline.T:
        raise ValueError(f"window spec T={spec.T} does not match baseline T={baseline.T}")
    ids = sorted(set(aligned_ids))
    if not ids:
        return TokenWiseSchedule(baseline, {})
    missing = [i for i in ids if i not in profiles]
    if missing:
        raise ValueError(f"missing difficulty profiles for aligned token ids {missing}")
    means, l_min, l_max = window_stats({i: profiles[i] for i in ids}, spec)
    base_alpha = per_step(baseline).alpha
    rates = _window_rates(baseline, spec)
    alpha_min = cfg.alpha_min if cfg.alpha_min is not None else float(base_alpha.min())
    per_token: dict[int, CumulativeSchedule] = {}
    for token_id in ids:
        alpha = base_alpha.copy()
        for m in range(2, spec.n_windows + 1):
            lo, hi = spec.bounds(m)
            # flattening baselines can invert the anchors; collapse the range
            a_hi = max(rates[m - 2], rates[m - 1])
            a_lo = rates[m - 1]
            alpha[lo:hi] = psi_map(
                float(means[token_id][m - 1]), a_hi, a_lo, float(l_min[m - 1]), float(l_max[m - 1]), cfg, alpha_min
            )
        abar = np.concatenate(([1.0], np.cumprod(alpha)))
        per_token[token_id] = CumulativeSchedule(abar)
    return TokenWiseSchedule(baseline, per_token)


@dataclass(frozen=True)
class AnchorSchedule:
    """Occurrence-weighted mean of the learned schedules; fixed once built."""

    schedule: CumulativeSchedule

    def __getitem__(self, t: int) -> float:
        return self.schedule[t]

    @property
    def T(self) -> int:
        return self.schedule.T


def anchor_from(tws: TokenWiseSchedule, counts: Mapping[int, int] | None = None) -> AnchorSchedule:
    """Average the per-token schedules, weighted by occurrence counts."""
    if not tws.per_token:
        raise ValueError("no aligned schedules to average")
    total = np.zeros(tws.T + 1, dtype=np.float64)
    weight = 0.0
    for token_id, sched in tws.per_token.items():
        w = float(counts.get(token_id, 1)) if counts is not None else 1.0
        if w <= 0:
            raise ValueError(f"occurrence count for token {token_id} must be positive")
        total += w * sched.values
        weight += w
    return AnchorSchedule(CumulativeSchedule(total / weight))


def blend(w: float | np.ndarray, base: float | np.ndarray, anchor: float | np.ndarray):
    """Convex combination (1-w)*base + w*anchor; w must lie in [0,1]."""
    w_arr = np.asarray(w, dtype=np.float64)
    if np.any(w_arr < 0.0) or np.any(w_arr > 1.0):
        raise ValueError("blend weight must lie in [0,1]")
    out = (1.0 - w_arr) * np.asarray(base, dtype=np.float64) + w_arr * np.asarray(anchor, dtype=np.float64)
    return float(out) if out.ndim == 0 else out


# ---------------------------------------------------------------------------
# persistence: versioned UTF-8 tables, bit-exact on reload

_TABLE_MAGIC = "# cumulative-schedule v1"
_TWS_MAGIC = "# token-wise-schedule v1"


def _header_line(T: int, cfg: MappingConfig | None, k_win: int | None) -> str:
    cfg = cfg or MappingConfig()
    return (
        f"# T={T} family={cfg.family} tau={cfg.tau!r} "
        f"alpha_min={cfg.alpha_min!r} k_win={k_win if k_win is not None else 0}"
    )


def _parse_header(line: str) -> tuple[int, MappingConfig, int]:
    fields = dict(item.split("=", 1) for item in line.lstrip("# ").split())
    alpha_min = None if fields["alpha_min"] == "None" else float(fields["alpha_min"])
    cfg = MappingConfig(family=fields["family"], tau=float(fields["tau"]), alpha_min=alpha_min)
    return int(fields["T"]), cfg, int(fields["k_win"])


def _dump_values(values: np.ndarray) -> str:
    return "".join(f"{t}\t{v!r}\n" for t, v in enumerate(values))


def dump_schedule(sched: CumulativeSchedule, cfg: MappingConfig | None = None, k_win: int | None = None) -> str:
    return f"{_TABLE_MAGIC}\n{_header_line(sched.T, cfg, k_win)}\n{_dump_values(sched.values)}"


def load_schedule(text: str) -> tuple[CumulativeSchedule, MappingConfig, int]:
    lines = text.splitlines()
    if not lines or lines[0] != _TABLE_MAGIC:
        raise ValueError("not a cumulative-schedule table")
    T, cfg, k_win = _parse_header(lines[1])
    values = np.empty(T + 1, dtype=np.float64)
    for line in lines[2:]:
        if not line:
            continue
        st, sv = line.split("\t")
        values[int(st)] = float(sv)
    return CumulativeSchedule(values), cfg, k_win


def dump_token_schedules(tws: TokenWiseSchedule, cfg: MappingConfig | None = None, k_win: int | None = None) -> str:
    parts = [f"{_TWS_MAGIC}\n{_header_line(tws.T, cfg, k_win)}\n# section baseline\n{_dump_values(tws.baseline.values)}"]
    for token_id in sorted(tws.per_token):
        parts.append(f"# section token {token_id}\n{_dump_values(tws.per_token[token_id].values)}")
    return "".join(parts)


def load_token_schedules(text: str) -> tuple[TokenWiseSchedule, MappingConfig, int]:
    lines = text.splitlines()
    if not lines or lines[0] != _TWS_MAGIC:
        raise ValueError("not a token-wise-schedule table")
    T, cfg, k_win = _parse_header(lines[1])
    sections: dict[str, np.ndarray] = {}
    current: str | None = None
    for line in lines[2:]:
        if line.startswith("# section "):
            current = line[len("# section ") :]
            sections[current] = np.empty(T + 1, dtype=np.float64)
        elif line:
            if current is None:
                raise ValueError("table values before any section header")
            st, sv = line.split("\t")
            sections[current][int(st)] = float(sv)
    if "baseline" not in sections:
        raise ValueError("missing baseline section")
    baseline = CumulativeSchedule(sections.pop("baseline"))
    per_token = {}
    for name, values in sections.items():
        if not name.startswith("token "):
            raise ValueError(f"unknown section {name!r}")
        per_token[int(name.split()[1])] = CumulativeSchedule(values)
    return TokenWiseSchedule(baseline, per_token), cfg, k_win
