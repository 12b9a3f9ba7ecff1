import numpy as np
import pytest

from uptheriver import strategies
from uptheriver.particles import ParticleSystem


def _system(positions, alive):
    positions = np.asarray(positions, dtype=float)
    alive = np.asarray(alive, dtype=bool)
    return ParticleSystem(K=positions.size, positions=positions, alive=alive,
                          t=0.0, seed=0, rng=np.random.default_rng(0))


def test_push_the_laggard_basic():
    alloc = strategies.push_the_laggard(_system([0.3, 0.1, 0.5], [1, 1, 1]))
    assert np.array_equal(alloc.weights, [0.0, 1.0, 0.0])


def test_push_the_laggard_tie_lowest_index():
    alloc = strategies.push_the_laggard(_system([0.2, 0.2, 0.4], [1, 1, 1]))
    assert np.array_equal(alloc.weights, [1.0, 0.0, 0.0])


def test_push_the_laggard_skips_dead():
    alloc = strategies.push_the_laggard(_system([0.0, 0.4], [0, 1]))
    assert np.array_equal(alloc.weights, [0.0, 1.0])


def test_push_the_laggard_no_alive():
    alloc = strategies.push_the_laggard(_system([0.0, 0.0], [0, 0]))
    assert np.array_equal(alloc.weights, [0.0, 0.0])


def test_uniform_split():
    alloc = strategies.uniform_split(_system([1, 2, 3, 4.0], [1, 1, 1, 1]))
    assert np.allclose(alloc.weights, 0.25)


def test_null_drift():
    alloc = strategies.null_drift(_system([1, 2.0], [1, 1]))
    assert np.array_equal(alloc.weights, [0.0, 0.0])
    assert alloc.weights.sum() <= 1.0


def test_push_the_leader():
    alloc = strategies.push_the_leader(_system([0.3, 0.9, 0.5], [1, 1, 1]))
    assert np.array_equal(alloc.weights, [0.0, 1.0, 0.0])


def test_proportional_to_inverse_position():
    alloc = strategies.proportional_to_inverse_position(_system([0.1, 0.4], [1, 1]))
    assert np.allclose(alloc.weights, [0.8, 0.2])
    assert alloc.weights.sum() == pytest.approx(1.0, abs=1e-15)


def test_builtin_list_and_registry():
    names = [s.name for s in strategies.builtin_strategies()]
    assert names == ["push_the_laggard", "null", "uniform", "push_the_leader",
                     "proportional"]
    assert strategies.get_strategy("uniform") is strategies.uniform_split
    with pytest.raises(KeyError):
        strategies.get_strategy("nope")


def test_register_custom():
    class Half(strategies.Strategy):
        def weights_alive(self, positions, t):
            w = np.zeros(positions.size)
            w[0] = 0.5
            return w

    custom = Half(name="half_on_first")
    strategies.register_strategy(custom)
    assert strategies.get_strategy("half_on_first") is custom


def test_budget_invariants_random_states():
    # 10^4 random states across every builtin: weights nonnegative, dead
    # particles unweighted, total at most 1 (and exactly 1 for the laggard
    # rule whenever anyone is alive)
    rng = np.random.default_rng(7)
    builtins = strategies.builtin_strategies()
    for _ in range(10_000 // len(builtins)):
        n = int(rng.integers(1, 12))
        positions = rng.uniform(1e-6, 3.0, size=n)
        alive = rng.random(n) < 0.8
        positions[~alive] = 0.0
        sys = _system(positions, alive)
        for strat in builtins:
            alloc = strat(sys)
            w = alloc.weights
            assert np.all(w >= 0.0)
            assert w.sum() <= 1.0 + 1e-12
            assert np.all(w[~alive] == 0.0)
            if strat.name == "push_the_laggard" and alive.any():
                assert w.sum() == 1.0
