"""Trajectory records and empirical functionals of simulation output.

Scaled conventions throughout: counts are divided by sqrt(K), positions by
sqrt(K), times by K.  A ``TrajectoryRecord`` is immutable once a run has
produced it; everything in this module is read-only on records.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import CapabilityError, DomainError
from .kernels import bm_cdf, g_term, heat_kernel_time_integral


@dataclass
class RecordSpec:
    """What a run should record.

    ``series_dt`` is the spacing of the laggard/alive series (rounded to a
    whole number of steps); ``snapshot_times`` are the times at which sorted
    alive-position snapshots are kept.  ``log_drift`` retains one
    (time, recipient, weight, position) entry per step, which requires the
    strategy to put its whole budget on a single particle.
    """

    series_dt: float = 0.005
    snapshot_times: tuple = ()
    log_drift: bool = False


@dataclass
class TrajectoryRecord:
    kind: str                      # "river" or "atlas"
    K: int
    seed: int
    strategy: str
    h: float
    t_end: float
    bridge: bool
    schedule: np.ndarray           # recorded times
    laggard_series: np.ndarray     # min alive position; NaN once extinct
    alive_series: np.ndarray
    snapshot_times: np.ndarray
    snapshots: list                # sorted position arrays, one per snapshot time
    extinction_time: float | None = None
    drift_times: np.ndarray | None = None
    drift_index: np.ndarray | None = None
    drift_weight: np.ndarray | None = None
    drift_position: np.ndarray | None = None

    @property
    def is_extinct(self) -> bool:
        return self.extinction_time is not None

    def snapshot_at(self, t: float) -> np.ndarray:
        i = int(np.argmin(np.abs(self.snapshot_times - t))) if len(self.snapshot_times) else -1
        if i < 0 or abs(self.snapshot_times[i] - t) > 1e-9:
            raise DomainError(f"no snapshot recorded at t={t}")
        return self.snapshots[i]

    def save(self, directory, stem: str) -> None:
        """JSON metadata plus CSV series/snapshots under ``directory``."""
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        meta = {
            "kind": self.kind, "K": self.K, "seed": self.seed,
            "strategy": self.strategy, "h": self.h, "t_end": self.t_end,
            "bridge": self.bridge, "extinction_time": self.extinction_time,
            "snapshot_times": [float(t) for t in self.snapshot_times],
            "has_drift_log": self.drift_times is not None,
        }
        with open(directory / f"{stem}.json", "w") as f:
            json.dump(meta, f, indent=2, sort_keys=True)
            f.write("\n")
        with open(directory / f"{stem}_series.csv", "w", newline="") as f:
            w = csv.writer(f)
            w.writerow(["t", "laggard", "alive_count"])
            for t, z, a in zip(self.schedule, self.laggard_series, self.alive_series):
                w.writerow([repr(float(t)), "" if np.isnan(z) else repr(float(z)), int(a)])
        with open(directory / f"{stem}_tails.csv", "w", newline="") as f:
            w = csv.writer(f)
            w.writerow(["t", "x", "scaled_tail"])
            sk = np.sqrt(self.K)
            for t, snap in zip(self.snapshot_times, self.snapshots):
                for j, x in enumerate(snap):
                    w.writerow([repr(float(t)), repr(float(x)), repr((snap.size - j) / sk)])


def tail_count(snapshot: np.ndarray, K: int, x) -> float:
    """Scaled count of snapshot entries strictly above x, by binary search."""
    snapshot = np.asarray(snapshot, dtype=float)
    if snapshot.size and np.any(np.diff(snapshot) < 0.0):
        raise DomainError("snapshot must be sorted ascending")
    n_above = snapshot.size - np.searchsorted(snapshot, x, side="right")
    out = n_above / np.sqrt(K)
    return float(out) if np.ndim(x) == 0 else out


def survivors_scaled(record: TrajectoryRecord) -> float:
    """Final scaled survivor count, read as the t -> infinity limit.

    The count stabilizes once the boundary detaches, so a run must either be
    extinct or have reached t >= 1 for the value to be meaningful.
    """
    if record.is_extinct:
        return 0.0
    if record.t_end < 1.0:
        raise DomainError(
            f"run ended at t={record.t_end} < 1 without extinction; "
            "survivor count not yet asymptotic"
        )
    return float(record.alive_series[-1] / np.sqrt(record.K))


def nondecreasing_seminorm(values: np.ndarray) -> float:
    """sup over t <= t' of (w(t) - w(t')); zero iff the series is nondecreasing."""
    values = np.asarray(values, dtype=float)
    if values.size == 0:
        return 0.0
    return float(np.max(np.maximum.accumulate(values) - values))


def _require_drift_log(record: TrajectoryRecord):
    if record.drift_times is None:
        raise CapabilityError("record was produced without log_drift=True")


def _drift_integral_river(record: TrajectoryRecord, t: float, x: float) -> float:
    """int_0^t w(s) pN(t - s, pos(s), x) ds from the per-step drift log.

    Trapezoid over the logged step-start samples; the final step, where the
    kernel behaves like 1/sqrt(t - s), is integrated exactly with the
    position frozen at its last logged value.
    """
    h = record.h
    ts = record.drift_times
    m = int(np.searchsorted(ts, t - h + 1e-12, side="right"))
    if m <= 0:
        return 0.0
    s = ts[:m]
    pos = record.drift_position[:m]
    w = record.drift_weight[:m]
    u = t - s
    f = w * (np.exp(-((pos - x) ** 2) / (2 * u)) + np.exp(-((pos + x) ** 2) / (2 * u))) \
        / np.sqrt(2 * np.pi * u)
    total = float(np.trapezoid(f, s)) if m > 1 else 0.0
    # exact singular tail over [t-h, t]
    d = pos[-1]
    total += float(w[-1]) * float(heat_kernel_time_integral(h, d - x)
                                  + heat_kernel_time_integral(h, d + x))
    return total


def identity_residual(record: TrajectoryRecord, t: float, x: float) -> float:
    """Empirical remainder of the absorbed-system integral identity.

    r_K(t, x) = U_K(t, x) - G_K(t, x) - drift integral; the martingale part
    has mean zero, so averaging the residual over replicates isolates the
    discretization bias.
    """
    if record.kind != "river":
        raise DomainError("identity_residual applies to absorbed-system records")
    _require_drift_log(record)
    uk = tail_count(record.snapshot_at(t), record.K, x)
    return uk - float(g_term(record.K, t, x)) - _drift_integral_river(record, t, x)


def atlas_identity_residual(record: TrajectoryRecord, t: float, x: float) -> float:
    """Empirical remainder of the ranked-system identity (no absorption).

    r = V_K(t, x) - (1/sqrt(K)) sum_i Phi(t, x - Y_i(0)) + int_0^t p(t-s, x - W(s)) ds.
    """
    if record.kind != "atlas":
        raise DomainError("atlas_identity_residual applies to atlas records")
    _require_drift_log(record)
    sk = np.sqrt(record.K)
    snap_t = record.snapshot_at(t)
    v_t = np.searchsorted(snap_t, x, side="right") / sk
    y0 = record.snapshot_at(0.0)
    init = float(np.sum(bm_cdf(t, x - y0))) / sk
    h = record.h
    ts = record.drift_times
    m = int(np.searchsorted(ts, t - h + 1e-12, side="right"))
    integ = 0.0
    if m > 0:
        s = ts[:m]
        pos = record.drift_position[:m]
        u = t - s
        f = np.exp(-((x - pos) ** 2) / (2 * u)) / np.sqrt(2 * np.pi * u)
        integ = float(np.trapezoid(f, s)) if m > 1 else 0.0
        integ += float(heat_kernel_time_integral(h, x - pos[-1]))
    return float(v_t) - init + integ


def sup_deviation(record: TrajectoryRecord, profile, curve, t_range, x_grid):
    """Weighted sup deviations of the empirical tail and the laggard.

    Returns (sup over snapshots of |U_K - U*| * t^(3/4), sup over the
    recorded schedule of |Z_K - z|), both restricted to ``t_range`` and, for
    the tail, to ``x_grid``.  The t^(3/4) weight regulates the short-time
    singularity of the tail.
    """
    t0, t1 = float(t_range[0]), float(t_range[1])
    x_grid = np.asarray(x_grid, dtype=float)
    sched = record.schedule
    if sched[0] > t0 + 1e-9 or sched[-1] < t1 - 1e-9:
        raise DomainError(f"record schedule does not cover [{t0}, {t1}]")
    mask = (sched >= t0 - 1e-12) & (sched <= t1 + 1e-12)
    lag = record.laggard_series[mask]
    if np.any(np.isnan(lag)):
        raise DomainError("laggard undefined (extinction) within t_range")
    z_ref = curve.value(sched[mask])
    sup_z = float(np.max(np.abs(lag - z_ref)))

    snap_mask = (record.snapshot_times >= t0 - 1e-12) & (record.snapshot_times <= t1 + 1e-12)
    times = record.snapshot_times[snap_mask]
    if times.size == 0:
        raise DomainError("no tail snapshots recorded within t_range")
    w_sup = 0.0
    for t in times:
        snap = record.snapshot_at(float(t))
        uk = tail_count(snap, record.K, x_grid)
        ustar = profile.tail(float(t), x_grid)
        dev = float(np.max(np.abs(uk - ustar))) * float(t) ** 0.75
        w_sup = max(w_sup, dev)
    return w_sup, sup_z
