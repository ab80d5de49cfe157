import json
import math

import numpy as np
import pytest

from msdetect.model import (
    Membership,
    ScenarioSpec,
    StreamSource,
    derive_trial_seed,
    mean_block,
    next_column,
    realize_membership,
    trial_rng,
)


def test_trial_seed_injective_and_deterministic():
    seeds = {derive_trial_seed(5, k) for k in range(1000)}
    assert len(seeds) == 1000
    assert derive_trial_seed(5, 0) != derive_trial_seed(5, 1)
    assert derive_trial_seed(5, 0) != derive_trial_seed(6, 0)
    a = trial_rng(5, 3).standard_normal(10)
    b = trial_rng(5, 3).standard_normal(10)
    assert np.array_equal(a, b)


def test_trial_seed_rejects_out_of_range():
    with pytest.raises(ValueError):
        derive_trial_seed(-1, 0)
    with pytest.raises(ValueError):
        derive_trial_seed(0, 1 << 32)


def test_trial_streams_uncorrelated():
    x = np.array([trial_rng(11, k).standard_normal(2) for k in range(1000)])
    r = np.corrcoef(x[:-1, 0], x[1:, 0])[0, 1]
    assert abs(r) < 0.1
    assert abs(np.corrcoef(x[:, 0], x[:, 1])[0, 1]) < 0.1


def test_membership_validation():
    with pytest.raises(ValueError):
        Membership("weird")
    with pytest.raises(ValueError):
        Membership.bernoulli(1.5)
    with pytest.raises(ValueError):
        Membership.fixed_count(-1)
    with pytest.raises(ValueError):
        Membership.explicit([1, 1])
    with pytest.raises(ValueError):
        ScenarioSpec(5, membership=Membership.fixed_count(6))
    with pytest.raises(ValueError):
        ScenarioSpec(5, membership=Membership.explicit([0]))
    with pytest.raises(ValueError):
        ScenarioSpec(5, nu=2.5)
    with pytest.raises(ValueError):
        ScenarioSpec(0)


@pytest.mark.parametrize("ms", [Membership.bernoulli(0.2), Membership.fixed_count(3),
                                Membership.explicit([2, 5]), Membership.staggered()])
def test_scenario_json_round_trip(ms):
    spec = ScenarioSpec(10, mu=1.5, nu=4, membership=ms, horizon=50, seed=7)
    assert ScenarioSpec.from_json(spec.to_json()) == spec
    null = ScenarioSpec(10, membership=ms)
    assert json.loads(null.to_json())["nu"] is None
    assert ScenarioSpec.from_json(null.to_json()).nu == math.inf


def test_realize_membership_examples():
    assert realize_membership(ScenarioSpec(50, membership=Membership.bernoulli(0.0)), 1) == frozenset()
    full = realize_membership(ScenarioSpec(50, membership=Membership.fixed_count(50)), 1)
    assert full == frozenset(range(1, 51))
    some = realize_membership(ScenarioSpec(50, membership=Membership.fixed_count(7)), 2)
    assert len(some) == 7 and min(some) >= 1 and max(some) <= 50


def test_bernoulli_concentration():
    spec = ScenarioSpec(10_000, membership=Membership.bernoulli(0.3))
    fracs = [len(realize_membership(spec, s)) / 10_000 for s in range(20)]
    assert all(abs(f - 0.3) <= 0.02 for f in fracs)


def test_staggered_means():
    spec = ScenarioSpec(4, mu=2.0, membership=Membership.staggered())
    m = mean_block(spec, frozenset(range(1, 5)), 0, 3)
    assert m[0].tolist() == [2.0, 0.0, 0.0, 0.0]
    assert m[2].tolist() == [2.0, 2.0, 2.0, 0.0]


def test_change_time_means():
    spec = ScenarioSpec(3, mu=1.0, nu=3, membership=Membership.explicit([2]))
    m = mean_block(spec, frozenset({2}), 0, 4)
    assert m[:, 1].tolist() == [0, 0, 1, 1]
    assert m[:, [0, 2]].sum() == 0
    assert mean_block(ScenarioSpec(3), frozenset(), 0, 4) is None


def test_null_column_statistics():
    spec = ScenarioSpec(3, mu=0.0, nu=1, membership=Membership.fixed_count(3))
    src = StreamSource(spec, frozenset({1, 2, 3}), trial_rng(0, 0))
    x = src.block(100_000)
    assert np.all(np.abs(x.mean(axis=0)) < 0.02)


def test_block_splitting_is_invisible():
    spec = ScenarioSpec(4, mu=1.0, nu=3, membership=Membership.fixed_count(2))
    members = frozenset({1, 4})
    a = StreamSource(spec, members, trial_rng(1, 2)).block(9)
    s = StreamSource(spec, members, trial_rng(1, 2))
    b = np.vstack([s.block(2), s.block(5), s.next_column().values[None, :], s.block(1)])
    assert np.array_equal(a, b)


def test_next_column():
    spec = ScenarioSpec(2, mu=1.0, membership=Membership.staggered())
    col = next_column(spec, frozenset({1, 2}), 1, np.random.Generator(np.random.PCG64(0)))
    ref = np.random.Generator(np.random.PCG64(0)).standard_normal(2) + [1.0, 0.0]
    assert col.t == 1
    assert np.array_equal(col.values, ref)
    with pytest.raises(ValueError):
        next_column(spec, frozenset(), 0, np.random.Generator(np.random.PCG64(0)))
