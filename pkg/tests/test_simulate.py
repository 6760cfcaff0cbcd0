import numpy as np
import pytest

from mmcoal import (
    ConfigError,
    SampleConfig,
    beta_measure,
    build_rate_table,
    flip_model,
    kingman,
    simulate_genealogy,
    simulate_sample,
    solve_exact,
    star,
)


def test_kingman_genealogy_is_binary():
    table = build_rate_table(kingman(), 6)
    rng = np.random.default_rng(0)
    for _ in range(50):
        events = simulate_genealogy(kingman(), table, 3, rng)
        assert [len(e.children) for e in events] == [2, 2]
        assert events[0].time < events[1].time


def test_star_genealogy_single_event():
    table = build_rate_table(star(), 6)
    rng = np.random.default_rng(1)
    for _ in range(50):
        events = simulate_genealogy(star(), table, 5, rng)
        assert len(events) == 1
        assert len(events[0].children) == 5


def test_termination_bound():
    measure = beta_measure(1.2)
    table = build_rate_table(measure, 40)
    rng = np.random.default_rng(2)
    for _ in range(40):
        events = simulate_genealogy(measure, table, 40, rng)
        assert len(events) <= 39
        merged = sum(len(e.children) - 1 for e in events)
        assert merged == 39  # lineage count strictly decreases to one


def test_first_event_triple_merger_frequency():
    # From 3 lineages under the alpha = 1.5 family the first event is a
    # triple merger with probability 0.25 / 2.5.
    measure = beta_measure(1.5)
    table = build_rate_table(measure, 3)
    rng = np.random.default_rng(3)
    trials = 100_000
    hits = sum(
        len(simulate_genealogy(measure, table, 3, rng)[0].children) == 3
        for _ in range(trials)
    )
    p = 0.1
    sd = (p * (1 - p) / trials) ** 0.5
    assert abs(hits / trials - p) < 3 * sd


def test_theta_zero_is_monomorphic():
    model = flip_model(3, 0.0)
    for seed in range(5):
        sample = simulate_sample(model, beta_measure(1.5), 10, seed)
        assert len(sample.counts) == 1
        assert sample.total == 10


def test_pair_identity_matches_oracle():
    theta = 0.3
    model = flip_model(1, theta)
    oracle = solve_exact(model, kingman(), SampleConfig({0: 2}))
    p_same = oracle.likelihood_of(SampleConfig({0: 2})) + oracle.likelihood_of(
        SampleConfig({1: 2})
    )
    rng = np.random.default_rng(5)
    trials = 100_000
    hits = sum(
        len(simulate_sample(model, kingman(), 2, rng).counts) == 1
        for _ in range(trials)
    )
    sd = (p_same * (1 - p_same) / trials) ** 0.5
    assert abs(hits / trials - p_same) < 3 * sd


def test_experiment_shape_is_skewed():
    model = flip_model(15, 0.1)
    sample = simulate_sample(model, beta_measure(1.5), 100, 42)
    assert sample.total == 100
    assert max(sample.counts.values()) >= 50


def test_determinism_and_errors():
    model = flip_model(2, 0.2)
    a = simulate_sample(model, beta_measure(1.5), 8, 9)
    b = simulate_sample(model, beta_measure(1.5), 8, 9)
    assert a.counts == b.counts
    with pytest.raises(ConfigError):
        simulate_sample(model, kingman(), 0, 1)
    with pytest.raises(ConfigError):
        simulate_genealogy(kingman(), build_rate_table(kingman(), 4), 6, 0)
