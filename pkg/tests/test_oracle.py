import pytest

from mmcoal import (
    ConfigError,
    SampleConfig,
    SizeError,
    XiMeasure,
    beta_measure,
    eldon_wakeley,
    flip_model,
    kingman,
    lambda_embedding,
    likelihood_of,
    solve_exact,
)
from _brute import kingman_exact_ordered


def test_single_lineage_is_stationary():
    model = flip_model(2, 0.3)
    table = solve_exact(model, kingman(), SampleConfig({0: 1}))
    for h in range(4):
        assert table.likelihood_of(SampleConfig({h: 1})) == pytest.approx(
            model.mrca_prob(h), abs=1e-14
        )


def test_two_sample_closed_form():
    theta = 0.3
    model = flip_model(1, theta)
    table = solve_exact(model, kingman(), SampleConfig({0: 2}))
    same = (1 + 2 * theta) / (2 * (1 + 4 * theta))
    poly = 2 * theta / (1 + 4 * theta)
    assert table.likelihood_of(SampleConfig({0: 2})) == pytest.approx(same, rel=1e-12)
    assert table.likelihood_of(SampleConfig({1: 2})) == pytest.approx(same, rel=1e-12)
    assert table.likelihood_of(SampleConfig({0: 1, 1: 1})) == pytest.approx(
        poly, rel=1e-12
    )


def test_mutation_rate_limits():
    low = solve_exact(flip_model(1, 1e-9), kingman(), SampleConfig({0: 2}))
    assert low.likelihood_of(SampleConfig({0: 2})) == pytest.approx(0.5, abs=1e-7)
    assert low.likelihood_of(SampleConfig({0: 1, 1: 1})) == pytest.approx(0.0, abs=1e-7)
    high = solve_exact(flip_model(1, 1e7), kingman(), SampleConfig({0: 2}))
    assert high.likelihood_of(SampleConfig({0: 2})) == pytest.approx(0.25, abs=1e-5)


@pytest.mark.parametrize(
    "measure",
    [
        kingman(),
        beta_measure(1.5),
        eldon_wakeley(0.5),
        XiMeasure(kingman_mass=0.7, atoms=(((0.5, 0.5), 0.3),)),
        XiMeasure(kingman_mass=0.2, atoms=(((0.4, 0.3, 0.2), 0.8),)),
    ],
)
def test_level_normalization(measure):
    model = flip_model(2, 0.25)
    table = solve_exact(model, measure, SampleConfig({0: 5}))
    for m in range(1, 6):
        assert sum(table.level(m).values()) == pytest.approx(1.0, abs=1e-10)


def test_beta_small_sample_levels():
    model = flip_model(1, 0.2)
    table = solve_exact(model, beta_measure(1.5), SampleConfig({0: 3}))
    level3 = table.level(3)
    assert len(level3) == 4
    assert all(v > 0 for v in level3.values())
    assert sum(level3.values()) == pytest.approx(1.0, abs=1e-10)


def test_lambda_to_simplex_embedding_agreement():
    model = flip_model(2, 0.3)
    measure = eldon_wakeley(0.5)
    t_lambda = solve_exact(model, measure, SampleConfig({0: 4}))
    t_xi = solve_exact(model, lambda_embedding(measure), SampleConfig({0: 4}))
    for m in range(1, 5):
        for key, v in t_lambda.level(m).items():
            assert t_xi.level(m)[key] == pytest.approx(v, rel=1e-12, abs=1e-300)


def test_kingman_matches_independent_ordered_solver():
    model = flip_model(2, 0.35)
    table = solve_exact(model, kingman(), SampleConfig({0: 4}))
    for counts in ({0: 4}, {0: 3, 1: 1}, {0: 2, 3: 2}, {0: 2, 1: 1, 2: 1}):
        want = kingman_exact_ordered(model, counts)
        assert table.likelihood_of(SampleConfig(counts)) == pytest.approx(
            want, rel=1e-10
        )


def test_allele_relabeling_symmetry():
    model = flip_model(2, 0.3)
    table = solve_exact(model, beta_measure(1.3), SampleConfig({0: 4}))
    # Global 0 <-> 1 swap maps haplotype h to its bitwise complement.
    comp = model.n_haplotypes - 1
    for key, v in table.level(4).items():
        swapped = SampleConfig({comp - h: c for h, c in key})
        assert table.likelihood_of(swapped) == pytest.approx(v, rel=1e-10)


def test_lookup_errors_and_bounds():
    model = flip_model(1, 0.2)
    table = solve_exact(model, kingman(), SampleConfig({0: 2}))
    val = likelihood_of(table, SampleConfig({0: 1, 1: 1}))
    assert 0.0 <= val <= 1.0
    with pytest.raises(KeyError):
        table.likelihood_of(SampleConfig({0: 3}))


def test_caps():
    model = flip_model(1, 0.2)
    with pytest.raises(SizeError, match="cap"):
        solve_exact(model, kingman(), SampleConfig({0: 9}))
    big = flip_model(9, 0.2)  # |H| = 512 > 256
    with pytest.raises(SizeError, match="cap"):
        solve_exact(big, kingman(), SampleConfig({0: 2}))
    with pytest.raises(SizeError, match="configurations"):
        solve_exact(flip_model(5, 0.2), kingman(), SampleConfig({0: 6}), h_cap=256)
    with pytest.raises(ConfigError):
        solve_exact(flip_model(1, 0.0), kingman(), SampleConfig({0: 2}))
