import numpy as np
from hypothesis import given
from hypothesis import strategies as st

from socgan import sim
from socgan.config import RunConfig
from socgan.pipeline import (build_samples, observation_samples, pair_key, split_indices,
                             split_named)


@given(st.integers(2, 60), st.floats(0.05, 0.9), st.integers(0, 100))
def test_split_partitions_and_validation_nonempty(n, frac, seed):
    train, val = split_indices(n, frac, seed)
    assert sorted(train + val) == list(range(n))
    assert val and train


def test_split_named_keeps_pairs_together():
    names = [f"siren_{i:04d}_{s}" for i in range(10) for s in ("on", "off")] + ["crossing_0000"]
    train, val = split_named(names, 0.3, 1)
    held = {pair_key(names[i]) for i in val}
    assert not held & {pair_key(names[i]) for i in train}
    assert sorted(train + val) == list(range(len(names)))


def test_build_samples_indexes_scenarios():
    scen = sim.make_constant_velocity_dataset(3, 0, n_frames=24)
    rc = RunConfig()
    samples = build_samples(scen, rc, indices=[2])
    assert samples and {s.scenario for s in samples} == {2}
    assert samples[0].dynamic is not None


def test_observation_samples_use_last_frames():
    scen = sim.make_constant_velocity_dataset(1, 0, n_agents=2, n_frames=10)[0]
    out = observation_samples(scen, RunConfig(t_obs=4))
    tr = scen.tracks()
    assert len(out) == 2
    np.testing.assert_array_equal(out[0].observed, tr.positions[-4:, 0])
    assert out[0].neighbor_ids == (1,)
