"""Simultaneous-multiple-merger machinery.

Covers the measure on the finite-dimensional simplex, pattern rates for
jumps with several merger classes, total coalescence rates, aggregated
merger-move enumeration, and the trunk-ancestry conditional sampling
distribution for this coalescent family.  Single-merger measures embed by
assigning rate zero to every pattern with two or more classes, which lets
the exact solver and the sequential samplers share one enumeration.
"""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from . import csd as _csd
from .combinat import log_multinomial, partitions, set_partition_count
from .errors import ConfigError, SizeError
from .mutation import MutationModel, SampleConfig
from .rates import LambdaMeasure, RateTable

_MASS_TOL = 1e-9


@dataclass(frozen=True)
class XiMeasure:
    """Probability measure with a Kingman atom plus finitely many point
    masses on the simplex of decreasing coordinate vectors."""

    kingman_mass: float = 0.0
    atoms: tuple[tuple[tuple[float, ...], float], ...] = ()

    def __post_init__(self):
        if self.kingman_mass < 0:
            raise ConfigError("kingman_mass must be nonnegative")
        total = self.kingman_mass
        norm_atoms = []
        for coords, mass in self.atoms:
            if mass < 0:
                raise ConfigError("atom masses must be nonnegative")
            coords = tuple(sorted((float(c) for c in coords), reverse=True))
            if not coords or coords[-1] <= 0.0:
                raise ConfigError("atom coordinates must be strictly positive")
            if sum(coords) > 1.0 + _MASS_TOL:
                raise ConfigError(f"atom coordinates sum to {sum(coords)} > 1")
            norm_atoms.append((coords, float(mass)))
            total += mass
        if abs(total - 1.0) > _MASS_TOL:
            raise ConfigError(f"measure masses sum to {total}, expected 1")
        object.__setattr__(self, "atoms", tuple(norm_atoms))

    @property
    def max_classes(self) -> int:
        """Largest number of simultaneous merger classes with positive rate."""
        best = 1 if self.kingman_mass > 0 else 0
        for coords, mass in self.atoms:
            if mass > 0:
                best = max(best, len(coords))
        return best


def lambda_embedding(measure: LambdaMeasure) -> XiMeasure:
    """Single-coordinate embedding of an atomic single-merger measure.

    Only defined when the measure has no density component; the beta family
    cannot be represented by finitely many atoms.
    """
    if measure.beta_component is not None and measure.beta_component[1] > 0:
        raise ConfigError("beta components have no finite-atom embedding")
    atoms = tuple(((loc,), mass) for loc, mass in measure.point_atoms if mass > 0)
    return XiMeasure(kingman_mass=measure.kingman_mass, atoms=atoms)


def xi_rate(xi: XiMeasure, n: int, sizes, s: int) -> float:
    """Rate of a jump merging groups of the given sizes out of n lineages,
    with s lineages untouched.

    Coordinate indices in the defining sum run over distinct values: a
    jump assigns each participating group, and each of the extra single
    lineages that join a family alone, to its own coordinate.  Repeated
    indices would merge the groups and are excluded.
    """
    sizes = tuple(int(k) for k in sizes)
    p = len(sizes)
    if p < 1 or any(k < 2 for k in sizes):
        raise ConfigError(f"invalid merger sizes {sizes}")
    if s < 0 or sum(sizes) + s != n:
        raise ConfigError(f"sizes {sizes} with s={s} inconsistent with n={n}")

    rate = 0.0
    if p == 1 and sizes[0] == 2:
        rate += xi.kingman_mass
    for coords, mass in xi.atoms:
        if mass <= 0.0:
            continue
        m = len(coords)
        if p > m:
            continue
        total_r = sum(coords)
        denom = sum(c * c for c in coords)
        omr = max(0.0, 1.0 - total_r)
        atom_sum = 0.0
        for l in range(0, min(s, m - p) + 1):
            base = math.comb(s, l) * omr ** (s - l)
            if base == 0.0:
                continue
            assign_sum = 0.0
            for idx in itertools.permutations(range(m), p + l):
                prod = 1.0
                for j in range(p):
                    prod *= coords[idx[j]] ** sizes[j]
                for j in range(p, p + l):
                    prod *= coords[idx[j]]
                assign_sum += prod
            atom_sum += base * assign_sum
        rate += mass * atom_sum / denom
    return rate


class XiPatternRates:
    """Pattern-rate provider backed by a finite-atom simplex measure."""

    def __init__(self, xi: XiMeasure):
        self.xi = xi
        self.max_mergers = max(1, xi.max_classes)

    def rate(self, n: int, big_sizes: tuple[int, ...], s: int) -> float:
        return _xi_rate_cached(self.xi, n, big_sizes, s)


@lru_cache(maxsize=200_000)
def _xi_rate_cached(xi: XiMeasure, n: int, big_sizes: tuple[int, ...], s: int) -> float:
    return xi_rate(xi, n, big_sizes, s)


class LambdaPatternRates:
    """Pattern-rate provider for single-merger measures read from a rate table."""

    max_mergers = 1

    def __init__(self, table: RateTable):
        self.table = table

    def rate(self, n: int, big_sizes: tuple[int, ...], s: int) -> float:
        if len(big_sizes) != 1:
            return 0.0
        return self.table.rate(n, big_sizes[0], include_kingman_atom=True)


def pattern_rates(measure, n_max: int):
    """Build the appropriate pattern-rate provider for a driving measure."""
    if isinstance(measure, XiMeasure):
        return XiPatternRates(measure)
    if isinstance(measure, LambdaMeasure):
        return LambdaPatternRates(RateTable(measure, max(2, n_max)))
    raise ConfigError(f"unsupported measure type {type(measure)!r}")


def _untyped_patterns(n: int, max_mergers: int):
    """Partitions of n with at least one class of size >= 2 and at most
    max_mergers such classes, as (parts, big_sizes, n_singletons)."""
    out = []
    for parts in partitions(n):
        big = tuple(p for p in parts if p >= 2)
        if not big or len(big) > max_mergers:
            continue
        out.append((parts, big, len(parts) - len(big)))
    return out


@lru_cache(maxsize=None)
def _typed_patterns(count: int, max_big: int) -> tuple[tuple[tuple[int, ...], int, int], ...]:
    """Partitions of one type's count, as (parts, n_big, multiplicity)."""
    out = []
    for parts in partitions(count):
        n_big = sum(1 for p in parts if p >= 2)
        if n_big > max_big:
            continue
        out.append((parts, n_big, set_partition_count(count, parts)))
    return tuple(out)


def g_total_provider(provider, n: int) -> float:
    """Total coalescence rate of n untyped lineages under a pattern-rate
    provider, by summing pattern rates with set-partition multiplicities."""
    if n < 2:
        raise ConfigError("total coalescence rate needs n >= 2")
    total = 0.0
    for parts, big, s in _untyped_patterns(n, provider.max_mergers):
        rate = provider.rate(n, big, s)
        if rate > 0.0:
            total += set_partition_count(n, parts) * rate
    return total


def g_total(xi: XiMeasure, n: int) -> float:
    return g_total_provider(XiPatternRates(xi), n)


def merger_moves_raw(counts: dict[int, int], provider) -> list[tuple[dict[int, int], float]]:
    """Aggregated coalescence moves out of a configuration.

    Each move is (predecessor counts, coefficient) where the coefficient is
    the full likelihood-recursion weight for that predecessor: the sum over
    per-type class-size patterns of the pattern's set-partition multiplicity
    and rate, times the ratio of type-count multinomials of the current and
    predecessor configurations.  Moves with distinct patterns but identical
    predecessors are merged.
    """
    n = sum(counts.values())
    types = sorted(counts)
    maxm = provider.max_mergers
    per_type = [_typed_patterns(counts[t], maxm) for t in types]

    log_mult_n = log_multinomial(n, counts.values())
    acc: dict[tuple[tuple[int, int], ...], float] = {}

    def recurse(i: int, big_used: int, chosen: list):
        if i == len(types):
            if big_used == 0:
                return
            big, singles, mult = [], 0, 1.0
            pred = {}
            for t, (parts, n_big, m) in zip(types, chosen):
                mult *= m
                pred[t] = len(parts)
                for p in parts:
                    if p >= 2:
                        big.append(p)
                    else:
                        singles += 1
            rate = provider.rate(n, tuple(sorted(big, reverse=True)), singles)
            if rate <= 0.0:
                return
            k = sum(pred.values())
            ratio = math.exp(
                log_mult_n - log_multinomial(k, pred.values())
            )
            key = tuple(sorted(pred.items()))
            acc[key] = acc.get(key, 0.0) + mult * ratio * rate
            return
        for entry in per_type[i]:
            if big_used + entry[1] > maxm:
                continue
            chosen.append(entry)
            recurse(i + 1, big_used + entry[1], chosen)
            chosen.pop()

    recurse(0, 0, [])
    return [(dict(key), coeff) for key, coeff in sorted(acc.items())]


def enumerate_merger_moves(config: SampleConfig, measure) -> list[tuple[SampleConfig, float]]:
    if config.total < 2:
        return []
    provider = pattern_rates(measure, config.total)
    raw = merger_moves_raw(dict(config.counts), provider)
    return [(SampleConfig(pred), coeff) for pred, coeff in raw]


def xi_absorption_rate(provider, n: int) -> float:
    """Trunk absorption rate of an extra lineage against n others: the total
    coalescence rate of n + 1 untyped lineages divided by n + 1."""
    return g_total_provider(provider, n + 1) / (n + 1)


def csd_xi(
    model: MutationModel,
    xi: XiMeasure,
    config: SampleConfig,
    backend: str = "exact",
    order: int = 10,
) -> np.ndarray:
    """Approximate conditional sampling distribution for the simultaneous
    merger family: stationary law of the mutate-or-restart chain whose
    absorption rate comes from all merger patterns of n + 1 lineages."""
    if model.theta <= 0:
        raise ConfigError("CSD requires a positive total mutation rate")
    if config.total == 0:
        raise ConfigError("conditioning sample is empty")
    provider = XiPatternRates(xi)
    n = config.total
    absorb = xi_absorption_rate(provider, n)
    nu = {h: c / n for h, c in config.counts.items()}
    return _csd.solve_restart_distribution(model, absorb, nu, backend, order)


def run_is_xi(data, model, xi: XiMeasure, cfg, desk_cap: int = 10):
    """Sequential importance sampling under a simultaneous-merger measure.

    Small-sample engine: move enumeration aggregates merger patterns per
    predecessor, and multivariate CSD denominators are approximated by
    chain products averaged over a few random orderings of the removed
    lineages.  See engine.run_is for the single-merger production path.
    """
    from .engine import run_is_xi_impl

    if data.total > desk_cap:
        raise SizeError(
            f"sample size {data.total} exceeds the desk cap {desk_cap} for the"
            " simultaneous-merger sampler"
        )
    return run_is_xi_impl(data, model, xi, cfg)
