"""Discrete-time simulation of the absorbed system and of ranked (Atlas) systems.

Everything runs in scaled coordinates: K particles start at 1/sqrt(K), a unit
of drift budget translates to a displacement sqrt(K) * h per step, and the
default step 0.1/K keeps that displacement at a tenth of the typical
near-laggard gap 1/sqrt(K).

Determinism contract: a system owns a generator seeded at construction; each
step draws standard normals for the alive particles (in particle-index
order), then, when the bridge test is on, one uniform per alive particle.
Identical (seed, strategy, h, bridge, schedule) reproduce bit-identical
trajectories whether advanced through ``step`` or ``run``.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import brentq

from .errors import AllocationError, CapabilityError, DomainError
from .kernels import density_u1, tail_absorption_phase
from .observables import RecordSpec, TrajectoryRecord

BUDGET_SLACK = 1e-12
# truncate sampled initial profiles where the remaining mass is below this
# fraction of one particle (times sqrt(K))
PROFILE_TAIL_MASS = 1e-6
GAMMA_MAX = 1.0 / 96.0


@dataclass
class DriftAllocation:
    """Per-particle drift weights; total budget at most 1, dead particles 0."""

    weights: np.ndarray

    def validate(self, alive: np.ndarray) -> None:
        w = self.weights
        if w.shape != alive.shape:
            raise AllocationError("allocation length differs from particle count")
        if np.any(w < 0.0):
            raise AllocationError("negative drift weight")
        if float(w.sum()) > 1.0 + BUDGET_SLACK:
            raise AllocationError(f"drift budget exceeded: sum={float(w.sum())!r}")
        if np.any(w[~alive] != 0.0):
            raise AllocationError("absorbed particle carries drift weight")


@dataclass
class ParticleSystem:
    """K drifted Brownian particles with absorption at the origin."""

    K: int
    positions: np.ndarray
    alive: np.ndarray
    t: float
    seed: int
    step_count: int = 0
    rng: np.random.Generator = field(default=None, repr=False)

    @property
    def alive_count(self) -> int:
        return int(np.count_nonzero(self.alive))

    def laggard(self) -> float:
        """Lowest alive position; NaN if extinct."""
        if not self.alive.any():
            return float("nan")
        return float(self.positions[self.alive].min())


def init_river(K: int, seed: int) -> ParticleSystem:
    """All K particles alive at scaled position 1/sqrt(K), t = 0."""
    K = int(K)
    if K < 1:
        raise DomainError(f"K must be >= 1, got {K}")
    return ParticleSystem(
        K=K,
        positions=np.full(K, 1.0 / np.sqrt(K)),
        alive=np.ones(K, dtype=bool),
        t=0.0,
        seed=int(seed),
        rng=np.random.default_rng(int(seed)),
    )


def _advance(pos, weights, rng, h, sqrt_h, drift_scale, bridge):
    """One Euler step of the alive positions; returns (new_pos, dead_mask).

    Absorption marks new positions <= 0 dead; with ``bridge`` on, a surviving
    pair of endpoints is additionally absorbed with the Brownian-bridge
    crossing probability exp(-2 x_old x_new / h), which removes the O(sqrt(h))
    survivor bias of plain Euler absorption.
    """
    new = pos + sqrt_h * rng.standard_normal(pos.size)
    if weights is not None:
        new += drift_scale * weights
    dead = new <= 0.0
    if bridge:
        u = rng.random(pos.size)
        dead |= (~dead) & (u < np.exp(-2.0 * pos * np.maximum(new, 0.0) / h))
    return new, dead


def step(sys: ParticleSystem, strat, h: float, bridge: bool = True) -> ParticleSystem:
    """Advance the system by one step of size h under ``strat`` (in place)."""
    if not h > 0.0:
        raise DomainError(f"step size must be positive, got {h}")
    alloc = strat(sys)
    alloc.validate(sys.alive)
    idx = np.flatnonzero(sys.alive)
    if idx.size:
        pos = sys.positions[idx]
        w = alloc.weights[idx]
        new, dead = _advance(pos, w, sys.rng, h, np.sqrt(h),
                             np.sqrt(sys.K) * h, bridge)
        sys.positions[idx] = np.where(dead, 0.0, new)
        sys.alive[idx[dead]] = False
    sys.t += h
    sys.step_count += 1
    return sys


class _Recorder:
    def __init__(self, spec: RecordSpec, t0: float, h: float, n_steps: int):
        self.spec = spec
        self.every = max(1, int(round(spec.series_dt / h)))
        self.snap_steps = {}
        for t in spec.snapshot_times:
            k = int(round((t - t0) / h))
            if 0 <= k <= n_steps:
                self.snap_steps.setdefault(k, float(t))
        self.times, self.lags, self.counts = [], [], []
        self.snap_t, self.snaps = [], []
        if spec.log_drift:
            self.d_t, self.d_i, self.d_w, self.d_p = [], [], [], []

    def series(self, t, pos):
        self.times.append(t)
        self.lags.append(float(pos.min()) if pos.size else float("nan"))
        self.counts.append(pos.size)

    def maybe_record(self, k, t, pos, force=False):
        if force or k % self.every == 0 or pos.size == 0:
            self.series(t, pos)
        if k in self.snap_steps:
            self.snap_t.append(self.snap_steps[k])
            self.snaps.append(np.sort(pos.copy()))

    def log(self, t, idx, w, p):
        self.d_t.append(t)
        self.d_i.append(idx)
        self.d_w.append(w)
        self.d_p.append(p)

    def build(self, kind, K, seed, strategy, h, t_end, bridge, extinction_time):
        drift = {}
        if self.spec.log_drift:
            drift = dict(
                drift_times=np.asarray(self.d_t),
                drift_index=np.asarray(self.d_i, dtype=np.int64),
                drift_weight=np.asarray(self.d_w),
                drift_position=np.asarray(self.d_p),
            )
        return TrajectoryRecord(
            kind=kind, K=K, seed=seed, strategy=strategy, h=h, t_end=t_end,
            bridge=bridge,
            schedule=np.asarray(self.times),
            laggard_series=np.asarray(self.lags),
            alive_series=np.asarray(self.counts, dtype=np.int64),
            snapshot_times=np.asarray(self.snap_t),
            snapshots=self.snaps,
            extinction_time=extinction_time,
            **drift,
        )


def run(sys: ParticleSystem, strat, t_end: float, h: float,
        record_spec: RecordSpec | None = None, bridge: bool = True) -> TrajectoryRecord:
    """Iterate ``step`` to t_end, recording per ``record_spec``.

    Internally runs on compacted arrays (absorbed particles dropped), which
    is what makes K = 1e4 runs tractable; the noise stream is identical to
    repeated ``step`` calls.  Terminates early at extinction.  A final tail
    snapshot is always recorded.
    """
    if not t_end > sys.t:
        raise DomainError(f"t_end={t_end} must exceed current time {sys.t}")
    if not h > 0.0:
        raise DomainError(f"step size must be positive, got {h}")
    spec = record_spec or RecordSpec()
    n_steps = int(round((t_end - sys.t) / h))
    rec = _Recorder(spec, sys.t, h, n_steps)
    sqrt_h = np.sqrt(h)
    drift_scale = np.sqrt(sys.K) * h
    idx = np.flatnonzero(sys.alive)
    pos = sys.positions[idx]
    t0 = sys.t
    rec.maybe_record(0, t0, pos, force=True)
    extinction = None
    t = t0
    for k in range(1, n_steps + 1):
        if pos.size == 0:
            break
        w = strat.weights_alive(pos, t)
        if np.any(w < 0.0) or float(w.sum()) > 1.0 + BUDGET_SLACK:
            raise AllocationError(f"strategy {strat.name!r} violated the drift budget")
        if spec.log_drift:
            nz = np.flatnonzero(w)
            if nz.size > 1:
                raise CapabilityError(
                    "drift logging requires a single-recipient strategy"
                )
            if nz.size == 1:
                j = int(nz[0])
                rec.log(t, int(idx[j]), float(w[j]), float(pos[j]))
        new, dead = _advance(pos, w, sys.rng, h, sqrt_h, drift_scale, bridge)
        t = t0 + k * h
        if dead.any():
            gone = idx[dead]
            sys.positions[gone] = 0.0
            sys.alive[gone] = False
            keep = ~dead
            pos, idx = new[keep], idx[keep]
        else:
            pos = new
        if pos.size == 0 and extinction is None:
            extinction = t
        rec.maybe_record(k, t, pos)
    # write back final state
    sys.positions[idx] = pos
    sys.t = t0 + n_steps * h if extinction is None else extinction
    sys.step_count += n_steps
    if rec.times[-1] != t:
        rec.series(t, pos)
    if not rec.snap_t or abs(rec.snap_t[-1] - t) > 1e-12:
        rec.snap_t.append(t)
        rec.snaps.append(np.sort(pos.copy()))
    return rec.build("river", sys.K, sys.seed, strat.name, h, sys.t, bridge, extinction)


# ---------------------------------------------------------------------------
# Atlas systems (ranked drift, no absorption)


@dataclass
class AtlasSystem:
    """Ranked system: the lowest particle gets the whole unit drift, no absorption."""

    positions: np.ndarray
    K: int                   # scaling parameter; not tied to the particle count
    t: float
    seed: int
    rng: np.random.Generator = field(default=None, repr=False)

    @property
    def count(self) -> int:
        return int(self.positions.size)

    def laggard(self) -> float:
        return float(self.positions.min())


def atlas_from_positions(positions, K: int, seed: int) -> AtlasSystem:
    positions = np.asarray(positions, dtype=float).copy()
    if positions.size < 1:
        raise DomainError("an Atlas system needs at least one particle")
    return AtlasSystem(positions=positions, K=int(K), t=0.0, seed=int(seed),
                       rng=np.random.default_rng(int(seed)))


class CutoffThinnedProfile:
    """Phase-end density with the layer below K^(-gamma) removed.

    Sampling from it dominates (from above) the surviving cloud at the phase
    change.  Density is bounded by 2 everywhere.
    """

    kind = "upper"
    bound = 2.0

    def __init__(self, gamma: float = 0.01):
        if not 0.0 < gamma < GAMMA_MAX:
            raise DomainError(f"gamma must lie in (0, 1/96), got {gamma}")
        self.gamma = float(gamma)

    def cutoff(self, K: int) -> float:
        return float(K) ** (-self.gamma)

    def density(self, x, K: int):
        x = np.asarray(x, dtype=float)
        vals = np.where(x >= self.cutoff(K), density_u1(0.5, np.maximum(x, 0.0)), 0.0)
        return vals

    def support(self, K: int):
        return self.cutoff(K), _tail_truncation_point(K)


class OriginPaddedProfile:
    """Phase-end density extended by a constant-2 block below the origin.

    The block has width K^(-4 gamma); sampling from it is dominated (from
    below) by the surviving cloud.  Density is bounded by 2 everywhere.
    """

    kind = "lower"
    bound = 2.0

    def __init__(self, gamma: float = 0.01):
        if not 0.0 < gamma < GAMMA_MAX:
            raise DomainError(f"gamma must lie in (0, 1/96), got {gamma}")
        self.gamma = float(gamma)

    def pad_width(self, K: int) -> float:
        return float(K) ** (-4.0 * self.gamma)

    def density(self, x, K: int):
        x = np.asarray(x, dtype=float)
        out = np.zeros(x.shape)
        out = np.where(x > 0.0, density_u1(0.5, np.maximum(x, 0.0)), out)
        out = np.where((x >= -self.pad_width(K)) & (x <= 0.0), 2.0, out)
        return out

    def support(self, K: int):
        return -self.pad_width(K), _tail_truncation_point(K)


class TableProfile:
    """Piecewise-linear density from a table; zero outside the given range."""

    kind = "table"

    def __init__(self, x, values):
        self.x = np.asarray(x, dtype=float)
        self.values = np.asarray(values, dtype=float)
        if np.any(self.values < 0.0):
            raise DomainError("table density must be non-negative")
        if self.x.size != self.values.size or self.x.size < 2:
            raise DomainError("table needs matching x/value arrays of length >= 2")
        self.bound = float(self.values.max(initial=0.0))

    def density(self, x, K: int):
        return np.interp(np.asarray(x, dtype=float), self.x, self.values,
                         left=0.0, right=0.0)

    def support(self, K: int):
        return float(self.x[0]), float(self.x[-1])


def _tail_truncation_point(K: int) -> float:
    """x beyond which the phase-end profile's remaining mass is negligible."""
    target = PROFILE_TAIL_MASS / np.sqrt(K)
    hi = 10.0
    while tail_absorption_phase(0.5, hi) > target:
        hi *= 2.0
    return float(brentq(lambda x: tail_absorption_phase(0.5, x) - target, 0.0, hi))


def make_profile(kind: str, gamma: float = 0.01, table=None):
    """Profile selector: "upper" (cutoff-thinned), "lower" (origin-padded), "table"."""
    if kind == "upper":
        return CutoffThinnedProfile(gamma)
    if kind == "lower":
        return OriginPaddedProfile(gamma)
    if kind == "table":
        if table is None:
            raise DomainError("table profile needs (x, values)")
        return TableProfile(*table)
    raise DomainError(f"unknown profile kind {kind!r}")


def sample_atlas_initial(profile, K: int, seed: int) -> AtlasSystem:
    """Poisson point process with scaled intensity sqrt(K) * profile(x).

    Thinning against the profile's dominating constant over its truncated
    support; the cut tail carries mass below 1e-6/sqrt(K), far under Monte
    Carlo resolution.
    """
    K = int(K)
    if K < 1:
        raise DomainError(f"K must be >= 1, got {K}")
    rng = np.random.default_rng(int(seed))
    lo, hi = profile.support(K)
    bound = float(profile.bound)
    if bound <= 0.0 or hi <= lo:
        return AtlasSystem(positions=np.empty(0), K=K, t=0.0, seed=int(seed), rng=rng)
    mean_total = np.sqrt(K) * bound * (hi - lo)
    n = int(rng.poisson(mean_total))
    xs = rng.uniform(lo, hi, size=n)
    dens = np.asarray(profile.density(xs, K), dtype=float)
    if np.any(dens < 0.0):
        raise DomainError("profile produced a negative density")
    if np.any(dens > bound * (1.0 + 1e-9)):
        raise DomainError("profile exceeds its dominating bound; thinning invalid")
    keep = rng.random(n) < dens / bound
    positions = np.sort(xs[keep])
    return AtlasSystem(positions=positions, K=K, t=0.0, seed=int(seed), rng=rng)


def run_atlas(sys: AtlasSystem, t_end: float, h: float,
              record_spec: RecordSpec | None = None) -> TrajectoryRecord:
    """Advance the ranked system to t_end; the laggard drift is hard-wired.

    Same stepping contract as ``run`` minus absorption: per step every
    particle gets sqrt(h) noise and the minimum gets sqrt(K) * h drift.
    Records the laggard and sorted-position snapshots; a t = 0 snapshot is
    always included (it pins down the initial distribution function).
    """
    if sys.count == 0:
        raise DomainError("cannot run an empty Atlas system")
    if not t_end > sys.t:
        raise DomainError(f"t_end={t_end} must exceed current time {sys.t}")
    if not h > 0.0:
        raise DomainError(f"step size must be positive, got {h}")
    spec = record_spec or RecordSpec()
    n_steps = int(round((t_end - sys.t) / h))
    rec = _Recorder(spec, sys.t, h, n_steps)
    pos = sys.positions
    t0 = sys.t
    rec.maybe_record(0, t0, pos, force=True)
    if not rec.snap_t or rec.snap_t[0] != t0:
        rec.snap_t.insert(0, t0)
        rec.snaps.insert(0, np.sort(pos.copy()))
    sqrt_h = np.sqrt(h)
    drift = np.sqrt(sys.K) * h
    t = t0
    for k in range(1, n_steps + 1):
        j = int(np.argmin(pos))
        if spec.log_drift:
            rec.log(t, j, 1.0, float(pos[j]))
        pos = pos + sqrt_h * sys.rng.standard_normal(pos.size)
        pos[j] += drift
        t = t0 + k * h
        rec.maybe_record(k, t, pos)
    sys.positions = pos
    sys.t = t
    if rec.times[-1] != t:
        rec.series(t, pos)
    if abs(rec.snap_t[-1] - t) > 1e-12:
        rec.snap_t.append(t)
        rec.snaps.append(np.sort(pos.copy()))
    return rec.build("atlas", sys.K, sys.seed, "push_the_laggard", h, sys.t,
                     False, None)


@dataclass
class CouplingReport:
    """Per-step dominance bookkeeping for a rank-coupled pair of Atlas systems."""

    n_steps: int
    rank_ok: np.ndarray       # all shared sorted ranks dominate at the step
    laggard_ok: np.ndarray    # laggard of B >= laggard of A at the step

    @property
    def rank_dominance_fraction(self) -> float:
        return float(np.mean(self.rank_ok)) if self.n_steps else 1.0

    @property
    def laggard_dominance_fraction(self) -> float:
        return float(np.mean(self.laggard_ok)) if self.n_steps else 1.0


def coupled_run(sys_a: AtlasSystem, sys_b: AtlasSystem, t_end: float,
                h: float) -> CouplingReport:
    """Advance two Atlas systems with rank-shared noise and report dominance.

    The i-th smallest of A and the i-th smallest of B receive the same
    Gaussian increment (A's extra ranks, if any, get their own); each
    system's own minimum gets the drift.  Requires B's count <= A's count
    and sorted initial dominance B >= A on the shared ranks, which the
    coupling then preserves step by step up to roundoff.

    The shared increments are drawn from ``sys_a``'s generator.
    """
    if sys_b.count > sys_a.count:
        raise DomainError("sys_b must not have more particles than sys_a")
    if sys_a.K != sys_b.K:
        raise DomainError("coupled systems must share the scale parameter K")
    if not h > 0.0:
        raise DomainError(f"step size must be positive, got {h}")
    na, nb = sys_a.count, sys_b.count
    sa, sb = np.sort(sys_a.positions), np.sort(sys_b.positions)
    if np.any(sb < sa[:nb]):
        raise DomainError("initial sorted dominance B >= A violated")
    n_steps = int(round((t_end - sys_a.t) / h))
    sqrt_h = np.sqrt(h)
    drift = np.sqrt(sys_a.K) * h
    rank_ok = np.empty(n_steps, dtype=bool)
    lag_ok = np.empty(n_steps, dtype=bool)
    pa, pb = sys_a.positions, sys_b.positions
    for k in range(n_steps):
        g = sys_a.rng.standard_normal(na)
        oa = np.argsort(pa, kind="stable")
        ob = np.argsort(pb, kind="stable")
        pa[oa] += sqrt_h * g
        pa[oa[0]] += drift
        pb[ob] += sqrt_h * g[:nb]
        pb[ob[0]] += drift
        sa, sb = np.sort(pa), np.sort(pb)
        rank_ok[k] = bool(np.all(sb >= sa[:nb]))
        lag_ok[k] = bool(sb[0] >= sa[0])
    sys_a.positions, sys_b.positions = pa, pb
    sys_a.t += n_steps * h
    sys_b.t += n_steps * h
    return CouplingReport(n_steps=n_steps, rank_ok=rank_ok, laggard_ok=lag_ok)
