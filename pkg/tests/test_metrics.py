import math

import numpy as np
import pytest

from pridda import metrics
from pridda.engine import Reference, RunConfig, run
from pridda.errors import InvalidArgument
from pridda.metrics import BoundParams
from pridda.privacy import PrivacyBudget, calibrate
from pridda.problems import ProblemInstance, Regularizer, generate_synthetic, partition_even
from pridda.reference import ground_truth
from pridda.schedules import Schedule
from pridda.topology import GossipSampler, build_complete_graph

SC1 = Schedule("strongly_convex", mu=1.0)


def params(**kw):
    base = dict(L=1.0, beta=0.5, iota=1.0, mu=1.0, sigma=0.0, m=1, d_xstar=0.0, schedule=SC1)
    base.update(kw)
    return BoundParams(**base)


def test_constant_M_examples():
    assert metrics.constant_M(params()) == pytest.approx(4.5)
    assert metrics.constant_M(params(iota=0.25, L=2.0)) == pytest.approx(8.5)
    assert metrics.constant_M(params(iota=1e-12)) < 1e-5


def test_bound_params_validation():
    with pytest.raises(InvalidArgument):
        params(beta=1.0)
    with pytest.raises(InvalidArgument):
        params(iota=1.5)
    with pytest.raises(InvalidArgument):
        params(sigma=-1.0)


def test_suboptimality_envelope_first_step():
    assert metrics.theorem2_envelope(params(), 1) == pytest.approx(4.5)


def test_suboptimality_envelope_vanishes_without_constants():
    p = params(L=0.0, schedule=Schedule("convex", gamma=2.0), mu=0.0)
    assert metrics.theorem2_envelope(p, 50) == 0.0


def test_convex_envelope_below_closed_form():
    p = params(mu=0.0, d_xstar=3.0, iota=0.3, schedule=Schedule("convex", gamma=1.0))
    t = np.arange(1, 5001)
    env = metrics.theorem2_series(p, 5000)
    closed = metrics.corollary_envelope(p, "C2_subopt", t)
    assert np.all(env <= closed * (1 + 1e-12))


def test_envelope_partial_sum_step():
    """sum_{tau<=t} a_tau^2/(mu iota A_tau) <= 2t/(mu iota) up to t = 1e5."""
    mu, iota = 0.05, 0.1
    t = np.arange(1, 100_001, dtype=float)
    partial = np.cumsum(t**2 / (mu * iota * t * (t + 1) / 2))
    assert np.all(partial <= 2 * t / (mu * iota))
    p = params(mu=mu, iota=iota, sigma=0.7, m=5, schedule=Schedule("strongly_convex", mu=mu))
    env = metrics.theorem2_series(p, 100_000)
    assert np.all(env <= 2 * t / (mu * iota) * metrics.noise_factor(p) / (t * (t + 1) / 2) * (1 + 1e-12))


def test_consensus_envelope_convex_form():
    p = params(mu=0.0, iota=0.4, beta=0.3, L=2.0, schedule=Schedule("convex", gamma=1.5))
    t = np.array([1.0, 4.0, 100.0])
    mean, sq = metrics.lemma4_series(p, t)
    np.testing.assert_allclose(mean, 2.0 * math.sqrt(0.4) / (1.5 * 0.7 * np.sqrt(t)), rtol=1e-14)
    np.testing.assert_allclose(sq, mean**2, rtol=1e-12)


def test_consensus_envelope_decays_and_vanishes():
    p = params(sigma=0.3, m=4)
    means = [metrics.lemma4_envelope(p, t)[0] for t in (10, 1000, 100_000)]
    assert means[0] > means[1] > means[2] and means[2] < 1e-4
    assert metrics.lemma4_envelope(params(L=0.0), 7) == (0.0, 0.0)


def test_closed_form_examples():
    assert metrics.corollary_envelope(params(), "C1", 1) == pytest.approx(68.0)
    conv = params(mu=0.0, schedule=Schedule("convex", gamma=1.0))
    assert metrics.corollary_envelope(conv, "C2_consensus", 4) == pytest.approx(2.0)
    assert math.isinf(metrics.corollary_envelope(params(mu=0.0, iota=0.0, schedule=Schedule("convex", gamma=1.0)),
                                                 "C2_subopt", 10))
    with pytest.raises(InvalidArgument):
        metrics.corollary_envelope(params(), "C2_subopt", 3)
    with pytest.raises(InvalidArgument):
        metrics.corollary_envelope(conv, "C1", 3)
    with pytest.raises(InvalidArgument):
        metrics.corollary_envelope(conv, "C3", 3)


def test_envelopes_nonnegative_and_finite():
    for sched, mu in ((SC1, 1.0), (Schedule("convex", gamma=0.3), 0.0), (Schedule("constant_gamma", gamma=20, mu=0.01), 0.01)):
        p = params(mu=mu, schedule=sched, sigma=1.2, m=7, iota=0.2, d_xstar=4.0)
        env = metrics.theorem2_series(p, 2000)
        mean, sq = metrics.lemma4_series(p, np.arange(1, 2001))
        for arr in (env, mean, sq):
            assert np.all(np.isfinite(arr)) and np.all(arr >= 0)


def test_loglog_slope_and_se():
    t = np.logspace(1, 4, 30)
    assert metrics.loglog_slope(t, 3 * t**-0.5, 10, 1e4) == pytest.approx(-0.5)
    with pytest.raises(InvalidArgument):
        metrics.loglog_slope(t, t, 1e5, 1e6)
    mean, se = metrics.mean_and_se(np.array([[1.0, 2.0], [3.0, 6.0]]))
    np.testing.assert_allclose(mean, [2.0, 4.0])
    np.testing.assert_allclose(se, [1.0, 2.0])


def test_utility_horizon_scaling():
    base = metrics.utility_horizon(50, 1.0, 0.1, 0.9, 10, 0.01, scale=1.0)
    assert metrics.utility_horizon(50, 0.5, 0.1, 0.9, 10, 0.01, scale=1.0) == pytest.approx(base / 4, rel=1e-6)
    assert metrics.utility_horizon(100, 1.0, 0.1, 0.9, 10, 0.01, scale=1e-3) == pytest.approx(4e-3 * base, rel=1e-3)


def small_instance(seed=3, reg=Regularizer.l2_half(0.1)):
    rng = np.random.default_rng(seed)
    samples = generate_synthetic(200, 10, 0.1, rng)
    return ProblemInstance.from_partition(partition_even(samples, 10, rng), reg)


def test_utility_summary():
    p = small_instance()
    ref = ground_truth(p, iterations=20_000)
    cfg = RunConfig(p, Schedule("strongly_convex", mu=0.1), GossipSampler(build_complete_graph(10), "matching", 2),
                    2000, trace_stride=50, reference=Reference(ref.f_star, ref.x_star))
    trace = run(cfg)
    s = metrics.utility_summary(trace, ref.f_star)
    assert metrics.loglog_slope(trace.t, s.suboptimality, 50, 2000) < 0
    assert s.final_suboptimality >= 0
    assert s.final_suboptimality <= s.suboptimality[0]
    assert s.final_distance_sq is not None and s.final_distance_sq >= 0
    own_best = float(np.min(trace.objective_mean_ergodic))
    assert metrics.utility_summary(trace, own_best).final_suboptimality >= 0
    again = metrics.utility_summary(run(cfg), ref.f_star)
    assert again.auc == s.auc and again.final_suboptimality == s.final_suboptimality
    with pytest.raises(InvalidArgument):
        metrics.utility_summary(trace, math.nan)


@pytest.mark.parametrize("noisy", [False, True])
def test_empirical_envelopes_hold(noisy):
    """Monte-Carlo check of the suboptimality and consensus envelopes on a
    10-node, 10-feature instance with 50 seeds (mean + 2 SE)."""
    p = small_instance()
    ref = ground_truth(p, iterations=20_000)
    sampler = GossipSampler(build_complete_graph(10), "matching", 1)
    T = 300
    cal = calibrate(PrivacyBudget(1.0, 0.01, sampler.iota, p.lipschitz, p.min_samples, T)) if noisy else None
    subs, cons = [], []
    for seed in range(50):
        cfg = RunConfig(p, Schedule("strongly_convex", mu=0.1), sampler, T, seed=seed, trace_stride=10,
                        calibration=cal, reference=Reference(ref.f_star, ref.x_star))
        tr = run(cfg)
        subs.append(tr.A * tr.subopt_y_ergodic)
        cons.append(tr.consensus_err)
    mean, se = metrics.mean_and_se(np.array(subs))
    assert np.all(mean - 2 * se <= tr.A * tr.thm2_envelope)
    mean, se = metrics.mean_and_se(np.array(cons))
    assert np.all(mean - 2 * se <= tr.lemma4_envelope)
