import json

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from signed_consensus import schedule as sch
from signed_consensus.signed_graph import SignedDigraph


def test_h_one_is_synchronous():
    s = sch.generate_async(3, 20, 1, seed=5)
    assert s.active_matrix().all()
    assert sch.validate_async(sch.synchronous(3, 20))


@settings(max_examples=100, deadline=None)
@given(st.integers(1, 6), st.integers(1, 5), st.integers(0, 2**31 - 1))
def test_generated_schedules_validate(n, h, seed):
    s = sch.generate_async(n, 60, h, seed)
    assert sch.validate_async(s)
    assert all(inst[0] == 0 for inst in s.instants)


def test_validate_examples():
    assert sch.validate_async(sch.AsyncSchedule(((0, 1, 3, 6),), 3, 8))
    assert not sch.validate_async(sch.AsyncSchedule(((0, 4),), 3, 6))
    assert not sch.validate_async(sch.AsyncSchedule(((1, 2),), 3, 4))
    with pytest.raises(ValueError):
        sch.generate_async(2, 10, 0, 1)


def test_schedule_determinism_and_round_trip():
    a = sch.generate_async(4, 50, 3, 9)
    assert a == sch.generate_async(4, 50, 3, 9)
    assert a != sch.generate_async(4, 50, 3, 10)
    assert sch.AsyncSchedule.from_json(json.loads(json.dumps(a.to_json()))) == a
    assert np.array_equal(a.active(7), a.active_matrix()[7])


G = SignedDigraph([[0, 1, 0], [-1, 0, 1], [0, 1, 0]], [1, 0, -1])


def test_delays_in_range_and_deterministic():
    d = sch.sample_delays(G, 100, 3, 4)
    assert d.follower.min() >= 0 and d.follower.max() <= 3
    assert np.all(d.follower[:, G.adj == 0] == 0)
    assert np.array_equal(d.follower, sch.sample_delays(G, 100, 3, 4).follower)
    assert not sch.sample_delays(G, 50, 0, 4).follower.any()
    back = sch.DelayProcess.from_json(json.loads(json.dumps(d.to_json())))
    assert np.array_equal(back.follower, d.follower) and np.array_equal(back.leader, d.leader)


def test_delay_file_out_of_range_rejected():
    d = sch.sample_delays(G, 5, 2, 1).to_json()
    d["sigma_max"] = 0
    with pytest.raises(ValueError):
        sch.DelayProcess.from_json(d)


def test_losses():
    assert sch.sample_losses(50, 1.0, 3).theta.all()
    assert not sch.sample_losses(50, 0.0, 3).theta.any()
    with pytest.raises(ValueError):
        sch.sample_losses(10, 1.5, 3)
    theta = sch.sample_losses(20000, 0.3, 8).theta
    sd = np.sqrt(0.3 * 0.7 / theta.size)
    assert abs(theta.mean() - 0.3) < 3 * sd


def test_random_network():
    r = sch.RandomSignedNetwork(G, np.ones((3, 3)), np.ones(3), seed=2)
    for k in (0, 5):
        gk = sch.realize_network(r, k)
        assert np.array_equal(gk.adj, G.adj) and np.array_equal(gk.leader, G.leader)
    half = sch.RandomSignedNetwork(G, np.full((3, 3), 0.5), np.full(3, 0.5), seed=2)
    assert np.array_equal(half.expected_graph().adj, 0.5 * G.adj)
    e, p = half.masks(40)
    assert np.array_equal(e, half.masks(40)[0])
    realized = np.where(e, G.adj, 0.0)
    assert set(np.unique(realized[:, 1, 0])) <= {0.0, -1.0}
    with pytest.raises(ValueError):
        sch.RandomSignedNetwork(G, np.full((3, 3), 1.2), np.ones(3))


def test_replicate_seeds_distinct_and_stable():
    s = sch.replicate_seeds(11, 50)
    assert len(set(s)) == 50 and s == sch.replicate_seeds(11, 50)
