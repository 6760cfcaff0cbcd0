"""Exact small-sample likelihoods by dynamic programming over configurations.

The sampling recursion couples a configuration to same-size configurations
through mutation and to strictly smaller ones through mergers, so levels are
solved bottom-up: each level is a dense linear system over all unordered
configurations of that size, with merger contributions of already-solved
levels on the right-hand side.  Single-merger measures run through the same
pattern machinery as simultaneous-merger ones, with every multi-class
pattern carrying rate zero.

This solver is the ground truth for every stochastic estimator in the
package; its state space is all configurations of size up to n over the
haplotype space, so it only exists at validation scale.
"""
from __future__ import annotations

import itertools
import math

import numpy as np

from .errors import ConfigError, SizeError
from .mutation import MutationModel, SampleConfig
from .rates import LambdaMeasure
from .xi import XiMeasure, g_total_provider, merger_moves_raw, pattern_rates

_DEFAULT_N_CAP = 8
_DEFAULT_H_CAP = 256
_DEFAULT_STATE_CAP = 4000


class LikelihoodTable:
    """Solved sampling probabilities for every configuration of size <= n."""

    def __init__(self, model: MutationModel, levels: list[dict[tuple, float]]):
        self.model = model
        self._levels = levels

    @property
    def n(self) -> int:
        return len(self._levels)

    def level(self, m: int) -> dict[tuple, float]:
        if not 1 <= m <= self.n:
            raise KeyError(f"no level of size {m} in table (max {self.n})")
        return self._levels[m - 1]

    def likelihood_of(self, config: SampleConfig) -> float:
        if not 1 <= config.total <= self.n:
            raise KeyError(
                f"configuration of size {config.total} not in table (max {self.n})"
            )
        level = self._levels[config.total - 1]
        key = config.key()
        if key not in level:
            raise KeyError(f"configuration {key} not in table")
        return level[key]


def _level_configs(n_haplotypes: int, m: int):
    for combo in itertools.combinations_with_replacement(range(n_haplotypes), m):
        counts: dict[int, int] = {}
        for h in combo:
            counts[h] = counts.get(h, 0) + 1
        yield tuple(sorted(counts.items()))


def solve_exact(
    model: MutationModel,
    measure: LambdaMeasure | XiMeasure,
    target: SampleConfig,
    n_cap: int = _DEFAULT_N_CAP,
    h_cap: int = _DEFAULT_H_CAP,
    state_cap: int = _DEFAULT_STATE_CAP,
) -> LikelihoodTable:
    """Solve the sampling recursion for every configuration up to the
    target's size and return the full table."""
    n = target.total
    if n < 1:
        raise ConfigError("target configuration is empty")
    if n > n_cap:
        raise SizeError(f"target size {n} exceeds the solver cap {n_cap}")
    H = model.n_haplotypes
    if H > h_cap:
        raise SizeError(f"haplotype space of size {H} exceeds the solver cap {h_cap}")
    top_states = math.comb(H + n - 1, n)
    if top_states > state_cap:
        raise SizeError(
            f"level {n} holds {top_states} configurations, above the dense-solve"
            f" cap {state_cap}"
        )
    if model.theta <= 0:
        raise ConfigError("the recursion needs a positive total mutation rate for"
                          " a unique stationary type prior")

    provider = pattern_rates(measure, n)
    theta = model.theta

    levels: list[dict[tuple, float]] = []
    level1 = {((h, 1),): model.mrca_prob(h) for h in range(H)}
    levels.append(level1)

    for m in range(2, n + 1):
        keys = list(_level_configs(H, m))
        index = {key: i for i, key in enumerate(keys)}
        size = len(keys)
        g_m = g_total_provider(provider, m)
        d = g_m + m * theta

        a = np.zeros((size, size))
        b = np.zeros(size)
        for i, key in enumerate(keys):
            counts = dict(key)
            # Mutation moves stay on this level.
            for h, n_h in counts.items():
                for l, loc in enumerate(model.loci):
                    cur = model.allele(h, l)
                    for al in range(loc.n_alleles):
                        p = loc.matrix[al, cur]
                        if p <= 0.0:
                            continue
                        parent = model.substitute(h, l, al)
                        coeff = counts.get(parent, 0) + 1 - (1 if al == cur else 0)
                        if coeff <= 0:
                            continue
                        pred = dict(counts)
                        pred[h] -= 1
                        if pred[h] == 0:
                            del pred[h]
                        pred[parent] = pred.get(parent, 0) + 1
                        j = index[tuple(sorted(pred.items()))]
                        a[i, j] += loc.theta * coeff * p / d
            # Merger moves reach already-solved levels.
            for pred, coeff in merger_moves_raw(counts, provider):
                pred_key = tuple(sorted(pred.items()))
                pred_size = sum(pred.values())
                b[i] += coeff * levels[pred_size - 1][pred_key] / d

        x = np.linalg.solve(np.eye(size) - a, b)
        levels.append({key: float(v) for key, v in zip(keys, x)})

    return LikelihoodTable(model, levels)


def likelihood_of(table: LikelihoodTable, config: SampleConfig) -> float:
    return table.likelihood_of(config)
