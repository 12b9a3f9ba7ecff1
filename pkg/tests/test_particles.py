"""Simulation contracts: stepping, absorption, sampling, couplings."""

import numpy as np
import pytest
from scipy import stats
from scipy.integrate import quad

from uptheriver import observables, particles, strategies
from uptheriver.errors import AllocationError, CapabilityError, DomainError
from uptheriver.kernels import bm_tail, density_u1
from uptheriver.observables import RecordSpec


class _ForcedRng:
    """Deterministic stand-in for a Generator: fixed normals, uniforms = 1."""

    def __init__(self, normal_value=0.0):
        self.normal_value = normal_value

    def standard_normal(self, n):
        return np.full(n, self.normal_value)

    def random(self, n):
        return np.ones(n)  # never triggers the bridge test


def test_init_river_positions():
    sys = particles.init_river(4, seed=0)
    assert sys.K == 4 and sys.t == 0.0
    assert np.all(sys.positions == 0.5)
    assert sys.alive.all()
    sys = particles.init_river(10_000, seed=0)
    assert np.all(sys.positions == 0.01)
    with pytest.raises(DomainError):
        particles.init_river(0, seed=0)


def test_step_pure_drift():
    sys = particles.init_river(1, seed=0)
    sys.positions[0] = 0.5
    sys.rng = _ForcedRng(0.0)
    particles.step(sys, strategies.push_the_laggard, h=0.01)
    # drift sqrt(K) * h * weight = 0.01 for K = 1
    assert sys.positions[0] == pytest.approx(0.51, abs=1e-15)
    assert sys.t == pytest.approx(0.01)
    assert sys.step_count == 1


def test_step_absorption_is_permanent():
    sys = particles.init_river(2, seed=0)
    sys.positions[:] = [1e-9, 5.0]
    sys.rng = _ForcedRng(-10.0)
    particles.step(sys, strategies.null_drift, h=0.01)
    assert not sys.alive[0]
    assert sys.positions[0] == 0.0
    assert sys.alive[1]  # 5.0 - 1.0 > 0 and u = 1 never bridges
    sys.rng = _ForcedRng(+10.0)
    particles.step(sys, strategies.null_drift, h=0.01)
    assert not sys.alive[0]  # once dead, stays dead


def test_step_rejects_bad_allocation():
    sys = particles.init_river(3, seed=0)

    class Greedy(strategies.Strategy):
        def weights_alive(self, positions, t):
            return np.full(positions.size, 0.6)

    with pytest.raises(AllocationError):
        particles.step(sys, Greedy(name="greedy"), h=0.01)
    alloc = particles.DriftAllocation(weights=np.array([0.0, 0.5, 0.0]))
    sys.alive[1] = False
    with pytest.raises(AllocationError):
        alloc.validate(sys.alive)


def test_step_domain():
    sys = particles.init_river(2, seed=0)
    with pytest.raises(DomainError):
        particles.step(sys, strategies.null_drift, h=0.0)


def test_run_matches_repeated_step():
    a = particles.init_river(8, seed=42)
    b = particles.init_river(8, seed=42)
    h = 0.01
    rec = particles.run(a, strategies.push_the_laggard, 0.5, h,
                        RecordSpec(series_dt=h))
    for _ in range(50):
        particles.step(b, strategies.push_the_laggard, h)
    assert np.array_equal(a.positions, b.positions)
    assert np.array_equal(a.alive, b.alive)
    assert rec.alive_series[-1] == b.alive_count


def test_run_deterministic_in_seed():
    recs = []
    for _ in range(2):
        sys = particles.init_river(64, seed=123)
        recs.append(particles.run(sys, strategies.push_the_laggard, 0.4, 1e-3,
                                  RecordSpec(series_dt=0.01, snapshot_times=(0.2,))))
    a, b = recs
    assert np.array_equal(a.laggard_series, b.laggard_series)
    assert np.array_equal(a.alive_series, b.alive_series)
    assert np.array_equal(a.snapshot_at(0.2), b.snapshot_at(0.2))


def test_run_alive_positions_stay_positive():
    sys = particles.init_river(64, seed=5)
    particles.run(sys, strategies.uniform_split, 0.3, 1e-3)
    assert np.all(sys.positions[sys.alive] > 0.0)
    assert np.all(sys.positions[~sys.alive] == 0.0)
    assert sys.alive_count + np.count_nonzero(~sys.alive) == sys.K


def test_run_extinction_recording():
    # two particles, no drift, generous horizon: extinction is near-certain;
    # the seed freezes one such path
    sys = particles.init_river(2, seed=1)
    rec = particles.run(sys, strategies.null_drift, 30.0, 0.01)
    assert rec.is_extinct
    assert rec.extinction_time is not None and rec.extinction_time < 30.0
    assert np.isnan(rec.laggard_series[-1])
    assert rec.alive_series[-1] == 0
    assert observables.survivors_scaled(rec) == 0.0
    assert sys.t == pytest.approx(rec.extinction_time)


def test_null_strategy_survival_matches_reflection_law():
    # 10^4 independent unit-start particles under the null strategy are 10^4
    # replicates of the K = 1 run; the bridge-corrected scheme is unbiased
    # for the one-sided barrier law
    K = 10_000
    sys = particles.init_river(K, seed=11)
    sys.positions[:] = 1.0
    rec = particles.run(sys, strategies.null_drift, 1.0, 0.1)
    p_exact = 1.0 - 2.0 * bm_tail(1.0, 1.0)
    p_hat = rec.alive_series[-1] / K
    se = np.sqrt(p_exact * (1 - p_exact) / K)
    assert abs(p_hat - p_exact) <= 3 * se


def test_null_strategy_survivor_positions_match_killed_density():
    # with no drift, the end-of-step positions are exact Gaussian increments
    # and the bridge kill is exact given the endpoints, so the joint law of
    # (survival, position) is the absorbed-path law: KS against its CDF
    K, t = 10_000, 1.0
    sys = particles.init_river(K, seed=17)
    sys.positions[:] = 1.0
    particles.run(sys, strategies.null_drift, t, 0.1)
    alive = sys.positions[sys.alive]
    from uptheriver.kernels import absorbed_tail
    norm_const = absorbed_tail(t, 1.0, 0.0)

    def cdf(y):
        return (norm_const - absorbed_tail(t, 1.0, np.maximum(y, 0.0))) / norm_const

    ks = stats.kstest(alive, cdf)
    assert ks.pvalue >= 0.01


@pytest.mark.slow
def test_extinction_never_early_at_scale():
    # pushed system at K = 4096: no extinction before scaled time 1 across
    # 100 seeds
    from uptheriver.harness import _pool_map

    flags = _pool_map(_early_extinction_run, list(range(100)), jobs=2)
    assert sum(flags) == 0


def _early_extinction_run(seed):
    sys = particles.init_river(4096, seed=seed)
    rec = particles.run(sys, strategies.push_the_laggard, 1.0, 0.1 / 4096,
                        RecordSpec(series_dt=0.1))
    return rec.is_extinct


def test_drift_log_single_recipient_only():
    sys = particles.init_river(8, seed=0)
    with pytest.raises(CapabilityError):
        particles.run(sys, strategies.uniform_split, 0.05, 1e-3,
                      RecordSpec(log_drift=True))


def test_drift_log_contents():
    sys = particles.init_river(8, seed=2)
    h = 1e-3
    rec = particles.run(sys, strategies.push_the_laggard, 0.05, h,
                        RecordSpec(series_dt=0.01, log_drift=True))
    n_logged = rec.drift_times.size
    assert n_logged <= 50
    assert np.all(rec.drift_weight == 1.0)
    assert np.all(rec.drift_position > 0.0)
    assert np.all(np.diff(rec.drift_times) > 0.0)


# --- Atlas sampling ------------------------------------------------------------

def test_sample_zero_profile_empty():
    prof = particles.TableProfile([0.0, 1.0], [0.0, 0.0])
    sys = particles.sample_atlas_initial(prof, K=256, seed=0)
    assert sys.count == 0
    with pytest.raises(DomainError):
        particles.run_atlas(sys, 0.1, 1e-3)


def test_table_profile_rejects_negative():
    with pytest.raises(DomainError):
        particles.TableProfile([0.0, 1.0], [1.0, -0.5])


def test_profile_gamma_range():
    for bad in (0.0, 1.0 / 96.0, 0.2):
        with pytest.raises(DomainError):
            particles.CutoffThinnedProfile(bad)
        with pytest.raises(DomainError):
            particles.OriginPaddedProfile(bad)


def test_padded_profile_expected_count():
    K, gamma = 4096, 0.01
    prof = particles.OriginPaddedProfile(gamma)
    # total mass: tail integral of the phase-end density plus the pad block
    expected = np.sqrt(K) * (4.0 / np.sqrt(np.pi) + 2.0 * K ** (-4 * gamma))
    counts = [particles.sample_atlas_initial(prof, K, seed=s).count
              for s in range(200)]
    se = np.sqrt(expected / 200.0)  # Poisson
    assert abs(np.mean(counts) - expected) <= 3 * se


def test_padded_profile_interval_counts_are_poisson():
    K, gamma = 4096, 0.01
    prof = particles.OriginPaddedProfile(gamma)
    a, b = 0.2, 1.0
    mu = np.sqrt(K) * quad(lambda y: density_u1(0.5, y), a, b)[0]
    counts = np.array([
        np.count_nonzero((s.positions >= a) & (s.positions <= b))
        for s in (particles.sample_atlas_initial(prof, K, seed=1000 + i)
                  for i in range(200))
    ])
    se_mean = np.sqrt(mu / 200.0)
    assert abs(counts.mean() - mu) <= 3 * se_mean
    # dispersion index of a Poisson sample is 1
    dispersion = counts.var(ddof=1) / counts.mean()
    assert abs(dispersion - 1.0) <= 3 * np.sqrt(2.0 / 199.0)


def test_thinned_profile_support():
    K, gamma = 1024, 0.01
    prof = particles.CutoffThinnedProfile(gamma)
    sys = particles.sample_atlas_initial(prof, K, seed=4)
    assert np.all(sys.positions >= K ** (-gamma))
    assert np.all(np.diff(sys.positions) >= 0.0)


# --- Atlas runs ----------------------------------------------------------------

def test_single_particle_atlas_mean_drift():
    # one particle is always the laggard: displacement sqrt(K) t on average
    K, t_end, reps = 4, 0.1, 500
    disp = np.empty(reps)
    for r in range(reps):
        sys = particles.atlas_from_positions([0.0], K=K, seed=r)
        particles.run_atlas(sys, t_end, 0.01)
        disp[r] = sys.positions[0]
    se = np.sqrt(t_end / reps)
    assert abs(disp.mean() - np.sqrt(K) * t_end) <= 3 * se


def test_run_atlas_records_initial_snapshot():
    prof = particles.OriginPaddedProfile(0.01)
    sys = particles.sample_atlas_initial(prof, 256, seed=9)
    init = sys.positions.copy()
    rec = particles.run_atlas(sys, 0.05, 1e-3, RecordSpec(series_dt=0.01))
    assert rec.snapshot_times[0] == 0.0
    assert np.array_equal(rec.snapshot_at(0.0), np.sort(init))
    assert rec.kind == "atlas"


def _laggard_seminorm_run(seed):
    prof = particles.CutoffThinnedProfile(0.01)
    sys = particles.sample_atlas_initial(prof, 4096, seed=seed)
    rec = particles.run_atlas(sys, 1.0, 0.1 / 4096, RecordSpec(series_dt=0.005))
    return observables.nondecreasing_seminorm(rec.laggard_series)


@pytest.mark.slow
def test_atlas_laggard_is_almost_nondecreasing():
    # scaled laggard dips stay small when the gaps dominate Exp(2)
    from uptheriver.harness import _pool_map

    semis = np.array(_pool_map(_laggard_seminorm_run, list(range(100)), jobs=2))
    assert np.mean(semis <= 0.15) >= 0.95


def test_stationary_gap_law():
    # unscaled Atlas from iid Exp(2) gaps; the lowest five gaps at t = 0.5
    # should still look Exp(2) (KS at the 1% level, 200 runs aggregated)
    rng_master = np.random.default_rng(2024)
    m, h, t_end = 100, 1e-4, 0.5
    gaps = []
    for r in range(200):
        seed = int(rng_master.integers(2**31))
        rng = np.random.default_rng(seed)
        pos = np.concatenate([[0.0], np.cumsum(rng.exponential(0.5, size=m - 1))])
        sys = particles.AtlasSystem(positions=pos, K=1, t=0.0, seed=seed, rng=rng)
        particles.run_atlas(sys, t_end, h, RecordSpec(series_dt=t_end))
        gaps.append(np.diff(np.sort(sys.positions))[:5])
    gaps = np.concatenate(gaps)
    ks = stats.kstest(gaps, "expon", args=(0.0, 0.5))
    assert ks.pvalue >= 0.01


# --- couplings -------------------------------------------------------------------

def _sampled_pair(K, seed, shift):
    prof = particles.CutoffThinnedProfile(0.01)
    a = particles.sample_atlas_initial(prof, K, seed=seed)
    b = particles.atlas_from_positions(a.positions + shift, K, seed=seed + 1)
    return a, b


def test_coupled_identical_systems_stay_identical():
    a, b = _sampled_pair(256, 7, 0.0)
    rep = particles.coupled_run(a, b, 0.1, 0.1 / 256)
    assert rep.rank_dominance_fraction == 1.0
    assert rep.laggard_dominance_fraction == 1.0
    assert np.allclose(np.sort(a.positions), np.sort(b.positions))


def test_coupled_shifted_dominance_every_step():
    for seed in range(10):
        a, b = _sampled_pair(256, 100 + seed, 1.0)
        rep = particles.coupled_run(a, b, 0.25, 0.1 / 256)
        assert rep.rank_dominance_fraction == 1.0
        assert rep.laggard_dominance_fraction == 1.0


def test_coupled_subset_dominance():
    # B keeps only the upper half of A's particles: fewer and higher
    prof = particles.CutoffThinnedProfile(0.01)
    a = particles.sample_atlas_initial(prof, 256, seed=21)
    upper = np.sort(a.positions)[a.count // 2:]
    b = particles.atlas_from_positions(upper, 256, seed=22)
    rep = particles.coupled_run(a, b, 0.2, 0.1 / 256)
    assert rep.rank_dominance_fraction == 1.0


def test_coupled_preconditions():
    a = particles.atlas_from_positions([0.0, 1.0], 64, seed=0)
    b = particles.atlas_from_positions([-0.5, 0.5], 64, seed=1)
    with pytest.raises(DomainError):
        particles.coupled_run(a, b, 0.1, 1e-3)  # dominance violated
    big = particles.atlas_from_positions([0.0, 1.0, 2.0], 64, seed=2)
    with pytest.raises(DomainError):
        particles.coupled_run(a, big, 0.1, 1e-3)  # B larger than A
    other_scale = particles.atlas_from_positions([0.5, 1.5], 128, seed=3)
    with pytest.raises(DomainError):
        particles.coupled_run(a, other_scale, 0.1, 1e-3)
