import math
from collections import Counter

import numpy as np
import pytest

from mmcoal import (
    ConfigError,
    ISConfig,
    SampleConfig,
    SizeError,
    XiMeasure,
    beta_measure,
    build_rate_table,
    csd_univariate,
    csd_xi,
    eldon_wakeley,
    enumerate_merger_moves,
    flip_model,
    g_total,
    kingman,
    lambda_embedding,
    run_is,
    run_is_xi,
    solve_exact,
    total_coal_rate,
    xi_rate,
)
from mmcoal.combinat import log_multinomial
from mmcoal.xi import XiPatternRates, g_total_provider, merger_moves_raw
from _brute import all_set_partitions

MIX = XiMeasure(kingman_mass=0.7, atoms=(((0.5, 0.5), 0.3),))
TRIPLE = XiMeasure(kingman_mass=0.25, atoms=(((0.4, 0.3, 0.2), 0.35), ((0.6,), 0.4)))


def test_measure_validation_and_normalization():
    m = XiMeasure(kingman_mass=0.5, atoms=(((0.2, 0.5), 0.5),))
    assert m.atoms[0][0] == (0.5, 0.2)  # sorted decreasing
    assert m.max_classes == 2
    assert XiMeasure(kingman_mass=1.0).max_classes == 1
    with pytest.raises(ConfigError):
        XiMeasure(kingman_mass=0.5, atoms=(((0.9, 0.4), 0.5),))  # sum > 1
    with pytest.raises(ConfigError):
        XiMeasure(kingman_mass=0.5, atoms=(((0.0,), 0.5),))
    with pytest.raises(ConfigError):
        XiMeasure(kingman_mass=0.2)


def test_lambda_embedding_reproduces_rates():
    measure = eldon_wakeley(0.5)
    xi = lambda_embedding(measure)
    table = build_rate_table(measure, 30)
    for n in range(2, 31):
        for k in range(2, n + 1):
            assert xi_rate(xi, n, (k,), n - k) == pytest.approx(
                table.rate(n, k), abs=1e-12
            )
            # No simultaneous mergers under a single-coordinate measure.
            if k >= 2 and n - k >= 2:
                assert xi_rate(xi, n, (k, 2), n - k - 2) == 0.0
    with pytest.raises(ConfigError):
        lambda_embedding(beta_measure(1.5))


def test_kingman_only_rates():
    xi = XiMeasure(kingman_mass=1.0)
    assert xi_rate(xi, 5, (2,), 3) == 1.0
    assert xi_rate(xi, 5, (3,), 2) == 0.0
    assert xi_rate(xi, 4, (2, 2), 0) == 0.0


def test_two_block_atom_rate():
    xi = XiMeasure(atoms=(((0.5, 0.5), 1.0),))
    assert xi_rate(xi, 4, (2, 2), 0) == pytest.approx(0.25, abs=1e-14)
    # Singletons must occupy their own coordinate, so with every coordinate
    # taken the single-merger pattern with untouched lineages has rate zero.
    assert xi_rate(xi, 4, (2,), 2) == 0.0
    # One merger plus one lone joiner: 2 ordered coordinate assignments of
    # r_i**2 * r_j / sum(r**2) = 0.25 * 0.5 / 0.5 each.
    assert xi_rate(xi, 3, (2,), 1) == pytest.approx(0.5, abs=1e-14)


def test_rate_symmetric_in_sizes():
    for sizes in [(3, 2), (2, 3)]:
        a = xi_rate(TRIPLE, 7, sizes, 2)
        assert a == pytest.approx(xi_rate(TRIPLE, 7, tuple(reversed(sizes)), 2))
    with pytest.raises(ConfigError):
        xi_rate(TRIPLE, 5, (1, 2), 2)
    with pytest.raises(ConfigError):
        xi_rate(TRIPLE, 5, (2, 2), 2)


def test_g_total_examples():
    assert g_total(XiMeasure(kingman_mass=1.0), 4) == pytest.approx(6.0, abs=1e-12)
    measure = eldon_wakeley(0.5)
    xi = lambda_embedding(measure)
    for n in (2, 5, 9, 12):
        assert g_total(xi, n) == pytest.approx(total_coal_rate(measure, n), rel=1e-12)


def test_g_total_against_bruteforce_partitions():
    for xi in (MIX, TRIPLE):
        prov = XiPatternRates(xi)
        for n in (2, 3, 4, 5):
            brute = 0.0
            for blocks in all_set_partitions(range(n)):
                sizes = tuple(sorted((len(b) for b in blocks if len(b) > 1), reverse=True))
                if not sizes:
                    continue
                singles = sum(1 for b in blocks if len(b) == 1)
                brute += xi_rate(xi, n, sizes, singles)
            assert g_total(xi, n) == pytest.approx(brute, rel=1e-12)


def _brute_merger_moves(counts, xi):
    """Predecessor coefficients via raw type-respecting set partitions."""
    positions = []
    for h, c in sorted(counts.items()):
        positions.extend([h] * c)
    n = len(positions)
    acc = {}
    for blocks in all_set_partitions(range(n)):
        if any(len({positions[i] for i in b}) > 1 for b in blocks):
            continue
        sizes = tuple(sorted((len(b) for b in blocks if len(b) > 1), reverse=True))
        if not sizes:
            continue
        singles = sum(1 for b in blocks if len(b) == 1)
        rate = xi_rate(xi, n, sizes, singles)
        if rate <= 0.0:
            continue
        pred = Counter(positions[b[0]] for b in blocks)
        key = tuple(sorted(pred.items()))
        acc[key] = acc.get(key, 0.0) + rate
    out = {}
    k_log = {}
    for key, total_rate in acc.items():
        pred = dict(key)
        k = sum(pred.values())
        ratio = math.exp(
            log_multinomial(n, counts.values()) - log_multinomial(k, pred.values())
        )
        out[key] = total_rate * ratio
    return out


@pytest.mark.parametrize("xi", [MIX, TRIPLE])
def test_aggregated_moves_match_bruteforce(xi):
    prov = XiPatternRates(xi)
    configs = [
        {0: 2},
        {0: 3},
        {0: 2, 1: 2},
        {0: 3, 1: 2, 2: 1},
        {0: 4, 1: 1},
        {0: 6},
        {0: 2, 1: 2, 2: 1, 3: 1},
    ]
    for counts in configs:
        got = {tuple(sorted(p.items())): c for p, c in merger_moves_raw(counts, prov)}
        want = _brute_merger_moves(counts, xi)
        assert set(got) == set(want)
        for key in want:
            assert got[key] == pytest.approx(want[key], rel=1e-12)


def test_enumerate_merger_moves_kingman():
    model_cfg = SampleConfig({0: 2, 1: 3})
    moves = enumerate_merger_moves(model_cfg, XiMeasure(kingman_mass=1.0))
    preds = {pred.key() for pred, _ in moves}
    assert preds == {
        ((0, 1), (1, 3)),
        ((0, 2), (1, 2)),
    }


def test_enumerate_merger_moves_simultaneous():
    cfg = SampleConfig({0: 2, 1: 2})
    moves = enumerate_merger_moves(cfg, XiMeasure(atoms=(((0.5, 0.5), 1.0),)))
    preds = {pred.key(): c for pred, c in moves}
    assert ((0, 1), (1, 1)) in preds  # both pairs merge at once
    assert preds[((0, 1), (1, 1))] > 0


def test_csd_xi_limits_and_embedding():
    model = flip_model(2, 0.4)
    cfg = SampleConfig({0: 2, 3: 1})
    tiny = flip_model(2, 1e-9)
    vec = csd_xi(tiny, MIX, cfg, backend="exact")
    assert vec[0] == pytest.approx(2 / 3, abs=1e-6)
    assert vec[3] == pytest.approx(1 / 3, abs=1e-6)

    measure = eldon_wakeley(0.5)
    xi = lambda_embedding(measure)
    v_xi = csd_xi(model, xi, cfg, backend="exact")
    v_k = csd_univariate("k", model, measure, build_rate_table(measure, 4), cfg, "exact")
    assert np.abs(v_xi - v_k).max() < 1e-12


def test_csd_xi_balance_equations():
    model = flip_model(2, 0.4)
    cfg = SampleConfig({0: 2, 1: 2, 2: 1})
    n = cfg.total
    vec = csd_xi(model, MIX, cfg, backend="exact")
    prov = XiPatternRates(MIX)
    absorb = g_total_provider(prov, n + 1) / (n + 1)
    for h in range(model.n_haplotypes):
        mut = 0.0
        for l, loc in enumerate(model.loci):
            cur = model.allele(h, l)
            for a in range(loc.n_alleles):
                mut += loc.theta * loc.matrix[a, cur] * vec[model.substitute(h, l, a)]
        rhs = cfg.counts.get(h, 0) / n * absorb + mut
        assert (model.theta + absorb) * vec[h] == pytest.approx(rhs, abs=1e-10)


def test_xi_is_engine_matches_lambda_engine():
    model = flip_model(2, 0.4)
    data = SampleConfig({0: 2, 3: 2})
    cfg = ISConfig(particles=4000, replicates=8, seed=3, checkpoints=())
    est_xi = run_is_xi(data, model, XiMeasure(kingman_mass=1.0), cfg)
    est_l = run_is(data, model, kingman(), cfg)
    combined = math.hypot(est_xi.se, est_l.se)
    assert abs(est_xi.mean - est_l.mean) < 4 * combined


def test_xi_is_engine_matches_oracle():
    model = flip_model(2, 0.4)
    data = SampleConfig({0: 2, 3: 2})
    exact = solve_exact(model, MIX, data).likelihood_of(data)
    cfg = ISConfig(particles=6000, replicates=8, seed=4, checkpoints=())
    est = run_is_xi(data, model, MIX, cfg)
    assert abs(est.mean - exact) < 3.5 * est.se


def test_xi_single_lineage_and_cap():
    model = flip_model(2, 0.4)
    est = run_is_xi(SampleConfig({1: 1}), model, MIX, ISConfig(particles=5, replicates=2))
    assert est.mean == pytest.approx(model.mrca_prob(1), rel=1e-12)
    with pytest.raises(SizeError):
        run_is_xi(SampleConfig({0: 11}), model, MIX, ISConfig(), desk_cap=10)
