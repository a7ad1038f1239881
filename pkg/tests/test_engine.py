import math
from dataclasses import dataclass

import numpy as np
import pytest

from pridda.engine import (
    NodeStreams,
    Reference,
    RunConfig,
    auxiliary_y,
    initial_states,
    mean_dual_recursion_check,
    run,
    step,
)
from pridda.errors import InvalidArgument, InvalidSchedule
from pridda.privacy import PrivacyBudget, calibrate
from pridda.problems import LocalDataset, ProblemInstance, Regularizer, Sample, generate_synthetic, partition_even
from pridda.prox import prox
from pridda.schedules import Schedule
from pridda.topology import GossipMatrix, GossipSampler, build_complete_graph, metropolis_matrix


def one_d_problem(n, reg=Regularizer.l2_half(1.0)):
    s = Sample.from_dense(np.array([1.0]), 1.0)
    return ProblemInstance.from_partition([LocalDataset((s,), i) for i in range(n)], reg)


def synthetic(n=6, per_node=10, m=4, reg=Regularizer.l2_half(0.1), seed=0):
    rng = np.random.default_rng(seed)
    return ProblemInstance.from_partition(partition_even(generate_synthetic(n * per_node, m, 0.1, rng), n, rng), reg)


def sc(problem):
    return Schedule("strongly_convex", mu=problem.regularizer.modulus)


def test_hand_example_two_nodes():
    p = one_d_problem(2)
    cfg = RunConfig(p, sc(p), GossipSampler(build_complete_graph(2), "full"), 2, keep_snapshots=True)
    states = initial_states(cfg)
    assert all(s.x[0] == 0.0 for s in states)
    W = cfg.sampler(None)
    states = step(states, W, 1, cfg)
    for s in states:
        assert s.z[0] == pytest.approx(-1.0)
        assert s.x[0] == pytest.approx(1 / 3)
    y = auxiliary_y(np.mean([s.z for s in states], axis=0), 2, cfg)
    assert y[0] == pytest.approx(1 / 3)
    trace = run(cfg)
    np.testing.assert_allclose(trace.snapshots["x"][1], [[1 / 3], [1 / 3]])


def test_step_ergodic_accumulation():
    p = one_d_problem(2)
    cfg = RunConfig(p, sc(p), GossipSampler(build_complete_graph(2), "full"), 3)
    states = step(initial_states(cfg), cfg.sampler(None), 1, cfg)
    # x^(1) = 0 with weight a_1 = 1, then x^(2) = 1/3 with weight a_2 = 2
    for s in states:
        assert s.weight == 3.0
        assert s.ergodic[0] == pytest.approx(2 / 9)


def test_no_active_nodes_is_identity():
    p = synthetic()
    cfg = RunConfig(p, sc(p), GossipSampler(build_complete_graph(6), "matching", 1), 5)
    states = initial_states(cfg)
    states = step(states, cfg.sampler(np.random.default_rng(0)), 1, cfg)
    idle = metropolis_matrix(build_complete_graph(6), set())
    after = step(states, idle, 2, cfg)
    for a, b in zip(states, after):
        np.testing.assert_array_equal(a.z, b.z)
        np.testing.assert_array_equal(a.x, b.x)


def test_inactive_nodes_frozen():
    p = synthetic()
    cal = calibrate(PrivacyBudget(1.0, 0.01, 1 / 3, p.lipschitz, p.min_samples, 20))
    cfg = RunConfig(p, sc(p), GossipSampler(build_complete_graph(6), "matching", 1), 20, calibration=cal)
    rng = np.random.default_rng(1)
    states = initial_states(cfg)
    for t in range(1, 15):
        W = cfg.sampler(rng)
        new = step(states, W, t, cfg)
        for i in np.flatnonzero(~W.active):
            np.testing.assert_array_equal(new[i].z, states[i].z)
            np.testing.assert_array_equal(new[i].x, states[i].x)
        for i in np.flatnonzero(W.active):
            expected = prox(new[i].z, cfg.iota * cfg.schedule.A(t + 1), cfg.schedule.gamma_at(t + 1), p.regularizer)
            np.testing.assert_array_equal(new[i].x, expected)
        states = new


def test_identical_data_keeps_consensus():
    s = [Sample.from_dense(v, y) for v, y in ((np.array([0.3, -0.4]), 1.0), (np.array([0.5, 0.1]), -1.0))]
    p = ProblemInstance.from_partition([LocalDataset(tuple(s), i) for i in range(4)], Regularizer.l2_half(0.2))
    cfg = RunConfig(p, sc(p), GossipSampler(build_complete_graph(4), "full"), 50, keep_snapshots=True)
    # every node draws its own sample, so force identical draws through a shared stream
    states = initial_states(cfg)
    W = cfg.sampler(None)

    class Shared(NodeStreams):
        def __call__(self, node, t):
            return super().__call__(0, t)

    streams = Shared(3)
    for t in range(1, 50):
        states = step(states, W, t, cfg, streams)
        xs = np.array([st.x for st in states])
        assert np.all(xs == xs[0])


def test_ergodic_average_from_snapshots():
    p = synthetic()
    cfg = RunConfig(p, sc(p), GossipSampler(build_complete_graph(6), "matching", 2), 40,
                    trace_stride=7, keep_snapshots=True)
    trace = run(cfg)
    xs = trace.snapshots["x"]
    a = cfg.schedule.a(np.arange(1, 41))
    for t, erg in trace.snapshots["ergodic"].items():
        expected = np.tensordot(a[:t], xs[:t], axes=1) / cfg.schedule.A(t)
        np.testing.assert_allclose(erg, expected, rtol=1e-12, atol=1e-14)


def test_row_count_and_order():
    p = synthetic()
    cfg = RunConfig(p, sc(p), GossipSampler(build_complete_graph(6), "matching", 1), 1000, trace_stride=10)
    trace = run(cfg)
    assert len(trace) == 100
    assert np.all(np.diff(trace.t) > 0)
    cfg = RunConfig(p, sc(p), GossipSampler(build_complete_graph(6), "matching", 1), 25, trace_stride=10)
    assert list(run(cfg).t) == [10, 20]


def test_same_seed_same_trace():
    p = synthetic()
    cal = calibrate(PrivacyBudget(0.5, 0.01, 1 / 3, p.lipschitz, p.min_samples, 60))
    make = lambda seed: RunConfig(p, sc(p), GossipSampler(build_complete_graph(6), "matching", 1), 60,
                                  seed=seed, calibration=cal, reference=Reference(0.5, np.zeros(4)))
    a, b, c = run(make(4)), run(make(4)), run(make(5))
    for name in ("objective_mean_ergodic", "consensus_err", "dist_sq_ergodic", "eps_hat"):
        np.testing.assert_array_equal(getattr(a, name), getattr(b, name))
    assert not np.array_equal(a.objective_mean_ergodic, c.objective_mean_ergodic)


def test_single_node_has_no_consensus_error():
    s = [Sample.from_dense(np.array([0.6, 0.1]), 1.0), Sample.from_dense(np.array([-0.2, 0.7]), -1.0)]
    p = ProblemInstance.from_partition([LocalDataset(tuple(s), 0)], Regularizer.l2_half(0.5))

    @dataclass(frozen=True)
    class Solo:
        n: int = 1
        iota: float = 1.0

        def __call__(self, rng):
            return GossipMatrix(np.eye(1), np.ones(1, dtype=bool))

        def analytic_beta(self):
            return 0.0

    trace = run(RunConfig(p, sc(p), Solo(), 200))
    assert np.all(trace.consensus_err == 0.0)


def test_auxiliary_y_at_zero():
    for reg in (Regularizer.l2_half(0.3), Regularizer.l1(0.2), Regularizer.ball(1.0)):
        p = synthetic(reg=reg)
        sched = sc(p) if reg.kind == "l2_half" else Schedule("convex", gamma=0.5)
        cfg = RunConfig(p, sched, GossipSampler(build_complete_graph(6), "matching", 1), 3)
        assert not auxiliary_y(np.zeros(4), 1, cfg).any()


def test_mean_dual_check_passes():
    p = synthetic()
    cal = calibrate(PrivacyBudget(1.0, 0.01, 2 / 3, p.lipschitz, p.min_samples, 100))
    for calibration in (None, cal):
        cfg = RunConfig(p, sc(p), GossipSampler(build_complete_graph(6), "matching", 2), 100,
                        calibration=calibration, keep_snapshots=True)
        trace = run(cfg)
        assert mean_dual_recursion_check(trace)
        assert trace.mean_dual_max_residual <= 1e-12


@dataclass(frozen=True)
class RowStochastic:
    """Rows sum to one, columns do not."""

    n: int = 3
    iota: float = 1.0

    def __call__(self, rng):
        w = np.array([[0.5, 0.5, 0.0], [0.5, 0.5, 0.0], [0.5, 0.0, 0.5]])
        return GossipMatrix(w, np.ones(3, dtype=bool))

    def analytic_beta(self):
        return 0.5


def test_mean_dual_check_fails_on_corrupted_matrix():
    p = synthetic(n=3)
    W = RowStochastic()(None)
    assert not W.is_doubly_stochastic()
    trace = run(RunConfig(p, sc(p), RowStochastic(), 30, keep_snapshots=True))
    assert not mean_dual_recursion_check(trace)
    assert trace.mean_dual_max_residual > 1e-9


def test_eps_hat_column():
    p = synthetic()
    T = 200
    cal = calibrate(PrivacyBudget(1.0, 0.01, 1 / 3, p.lipschitz, p.min_samples, T))
    cfg = RunConfig(p, sc(p), GossipSampler(build_complete_graph(6), "matching", 1), T, calibration=cal, trace_stride=20)
    eps = run(cfg).eps_hat
    assert np.all(np.diff(eps) >= 0)
    assert eps[-1] == pytest.approx(math.sqrt(0.6) + 0.2, abs=1e-12)
    noiseless = run(RunConfig(p, sc(p), GossipSampler(build_complete_graph(6), "matching", 1), T, trace_stride=20))
    assert np.all(np.isinf(noiseless.eps_hat))


def test_run_config_validation():
    p = synthetic()
    sampler = GossipSampler(build_complete_graph(6), "matching", 1)
    with pytest.raises(InvalidSchedule):
        RunConfig(p, Schedule("strongly_convex", mu=0.2), sampler, 10)
    with pytest.raises(InvalidArgument):
        RunConfig(p, sc(p), GossipSampler(build_complete_graph(5), "matching", 1), 10)
    cal = calibrate(PrivacyBudget(1.0, 0.01, 0.5, p.lipschitz, p.min_samples, 10))
    with pytest.raises(InvalidArgument):
        RunConfig(p, sc(p), sampler, 10, calibration=cal)
    cal = calibrate(PrivacyBudget(1.0, 0.01, 1 / 3, p.lipschitz, p.min_samples, 20))
    with pytest.raises(InvalidArgument):
        RunConfig(p, sc(p), sampler, 10, calibration=cal)
    with pytest.raises(InvalidArgument):
        RunConfig(p, sc(p), sampler, 0)
    l1 = synthetic(reg=Regularizer.l1(0.1))
    with pytest.raises(InvalidSchedule):
        RunConfig(l1, Schedule("strongly_convex", mu=0.1), sampler, 10)


def test_step_rejects_round_outside_horizon():
    p = synthetic()
    cfg = RunConfig(p, sc(p), GossipSampler(build_complete_graph(6), "matching", 1), 5)
    with pytest.raises(InvalidArgument):
        step(initial_states(cfg), cfg.sampler(np.random.default_rng(0)), 6, cfg)


def test_streams_are_keyed():
    s = NodeStreams(9)
    assert s(2, 5).random() == NodeStreams(9)(2, 5).random()
    assert s(2, 5).random() != s(3, 5).random()
    assert s(2, 5).random() != s(2, 6).random()
