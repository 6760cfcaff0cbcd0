"""Synthetic data generation: genealogy jump chains with superimposed mutation.

A lineage's mutation clock runs at the per-locus rates, and merger events
fire at the table rates, which puts simulated data on the same time scale
as the likelihood recursion; the pair-identity check against the exact
solver is the decisive test of that agreement.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError
from .mutation import MutationModel, SampleConfig
from .rates import LambdaMeasure, RateTable


@dataclass(frozen=True)
class MergerEvent:
    time: float
    children: tuple[int, ...]
    parent: int


def simulate_genealogy(
    measure: LambdaMeasure, rates: RateTable, n: int, seed
) -> list[MergerEvent]:
    """Jump-chain genealogy of n lineages: exponential holding times at the
    total merger rate, merger sizes proportional to their aggregate rates,
    participants uniform."""
    if n < 2:
        raise ConfigError("genealogy simulation needs at least two lineages")
    if rates.n_max < n:
        raise ConfigError(f"rate table covers n <= {rates.n_max} < {n}")
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)

    size_dists: dict[int, tuple[np.ndarray, float]] = {}

    def size_dist(b: int) -> tuple[np.ndarray, float]:
        cached = size_dists.get(b)
        if cached is None:
            weights = np.array(
                [
                    rates.binom(b, k) * rates.rate(b, k) if k >= 2 else 0.0
                    for k in range(b + 1)
                ]
            )
            total = weights.sum()
            cached = (weights / total, total)
            size_dists[b] = cached
        return cached

    active = list(range(n))
    next_id = n
    t = 0.0
    events: list[MergerEvent] = []
    while len(active) > 1:
        b = len(active)
        probs, total = size_dist(b)
        t += rng.exponential(1.0 / total)
        k = int(rng.choice(b + 1, p=probs))
        chosen = rng.choice(b, size=k, replace=False)
        chosen_ids = tuple(sorted(active[i] for i in chosen))
        for i in sorted(chosen, reverse=True):
            active.pop(i)
        events.append(MergerEvent(t, chosen_ids, next_id))
        active.append(next_id)
        next_id += 1
    return events


def _mutate_along_branch(
    model: MutationModel, h: int, length: float, rng: np.random.Generator
) -> int:
    for l, loc in enumerate(model.loci):
        if loc.theta <= 0.0:
            continue
        hits = rng.poisson(loc.theta * length)
        if hits == 0:
            continue
        allele = model.allele(h, l)
        for _ in range(hits):
            allele = int(rng.choice(loc.n_alleles, p=loc.matrix[allele]))
        h = model.substitute(h, l, allele)
    return h


def simulate_sample(
    model: MutationModel, measure: LambdaMeasure, n: int, seed
) -> SampleConfig:
    """Draw a stationary sample: simulate the genealogy, give the root the
    stationary type, then mutate down every branch."""
    if n < 1:
        raise ConfigError("sample size must be at least 1")
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)

    def draw_root() -> int:
        alleles = []
        for vec in model._matrix_stationaries:
            alleles.append(int(rng.choice(len(vec), p=vec)))
        return model.encode(alleles)

    if n == 1:
        return SampleConfig({draw_root(): 1})

    table = RateTable(measure, n)
    events = simulate_genealogy(measure, table, n, rng)

    birth = {i: 0.0 for i in range(n)}
    for ev in events:
        birth[ev.parent] = ev.time
    root = events[-1].parent
    types = {root: draw_root()}
    for ev in reversed(events):
        parent_type = types[ev.parent]
        for child in ev.children:
            length = ev.time - birth[child]
            types[child] = _mutate_along_branch(model, parent_type, length, rng)

    counts: dict[int, int] = {}
    for leaf in range(n):
        counts[types[leaf]] = counts.get(types[leaf], 0) + 1
    return SampleConfig(counts)
