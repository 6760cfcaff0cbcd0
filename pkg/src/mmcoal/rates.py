"""Merger rates for coalescents driven by a finite measure on [0, 1].

The rate at which any fixed k of n lineages merge is the integral of
r**(k-2) * (1-r)**(n-k) against the driving measure.  The atom at zero only
contributes to pairwise mergers, and several downstream formulas need the
jump part (the integral over (0, 1]) separately from that atom, so the two
are stored and exposed separately throughout.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.special import gammaln

from .errors import ConfigError

_MASS_TOL = 1e-9


@dataclass(frozen=True)
class LambdaMeasure:
    """Probability measure on [0, 1] driving a multiple-merger coalescent.

    kingman_mass: mass of the atom at 0 (pairwise mergers only).
    point_atoms: (location, mass) pairs with locations in (0, 1].
    beta_component: optional (alpha, mass) with alpha in (1, 2), contributing
        mass times a Beta(2 - alpha, alpha) density.
    """

    kingman_mass: float = 0.0
    point_atoms: tuple[tuple[float, float], ...] = ()
    beta_component: tuple[float, float] | None = None

    def __post_init__(self):
        total = self.kingman_mass
        if self.kingman_mass < 0:
            raise ConfigError("kingman_mass must be nonnegative")
        for loc, mass in self.point_atoms:
            if not 0.0 < loc <= 1.0:
                raise ConfigError(f"atom location {loc} outside (0, 1]")
            if mass < 0:
                raise ConfigError("atom masses must be nonnegative")
            total += mass
        if self.beta_component is not None:
            alpha, mass = self.beta_component
            if not 1.0 < alpha < 2.0:
                raise ConfigError(f"beta parameter {alpha} outside (1, 2)")
            if mass < 0:
                raise ConfigError("beta mass must be nonnegative")
            total += mass
        if abs(total - 1.0) > _MASS_TOL:
            raise ConfigError(f"measure masses sum to {total}, expected 1")


def kingman() -> LambdaMeasure:
    return LambdaMeasure(kingman_mass=1.0)


def star() -> LambdaMeasure:
    return LambdaMeasure(point_atoms=((1.0, 1.0),))


def eldon_wakeley(psi: float) -> LambdaMeasure:
    """Kingman atom plus a single atom at psi, weighted 2 : psi**2."""
    denom = 2.0 + psi * psi
    return LambdaMeasure(
        kingman_mass=2.0 / denom, point_atoms=((psi, psi * psi / denom),)
    )


def beta_measure(alpha: float) -> LambdaMeasure:
    return LambdaMeasure(beta_component=(alpha, 1.0))


def jump_rate(measure: LambdaMeasure, n: int, k: int) -> float:
    """Merger rate contribution of the measure restricted to (0, 1].

    For a point atom (psi, w) this is w * psi**(k-2) * (1-psi)**(n-k); for the
    beta component it is the closed Beta-function ratio evaluated through
    log-gamma.  The Kingman atom is excluded here.
    """
    if k < 2 or k > n:
        raise ConfigError(f"merger size k={k} outside 2..{n}")
    rate = 0.0
    for loc, mass in measure.point_atoms:
        if mass > 0.0:
            rate += mass * loc ** (k - 2) * (1.0 - loc) ** (n - k)
    if measure.beta_component is not None:
        alpha, mass = measure.beta_component
        if mass > 0.0:
            log_rate = (
                gammaln(k - alpha)
                + gammaln(n - k + alpha)
                - gammaln(n)
                - gammaln(2.0 - alpha)
                - gammaln(alpha)
            )
            rate += mass * math.exp(log_rate)
    return rate


def lambda_rate(
    measure: LambdaMeasure, n: int, k: int, include_kingman_atom: bool = True
) -> float:
    """Rate at which any fixed k of n lineages merge."""
    rate = jump_rate(measure, n, k)
    if include_kingman_atom and k == 2:
        rate += measure.kingman_mass
    return rate


class RateTable:
    """Dense triangular table of merger rates up to a maximum sample size.

    Jump parts and the Kingman atom are held separately; accessors combine
    them on request so the table serves both conventions without double
    counting.  Immutable after construction.
    """

    def __init__(self, measure: LambdaMeasure, n_max: int):
        if n_max < 2:
            raise ConfigError("n_max must be at least 2")
        self.measure = measure
        self.n_max = n_max
        self.kingman_mass = measure.kingman_mass

        # jump[n, k] for 2 <= k <= n; zero elsewhere.
        jump = np.zeros((n_max + 1, n_max + 1))
        ns = np.arange(2, n_max + 1)
        for loc, mass in measure.point_atoms:
            if mass <= 0.0:
                continue
            for n in ns:
                k = np.arange(2, n + 1)
                jump[n, 2 : n + 1] += mass * loc ** (k - 2.0) * (1.0 - loc) ** (n - k)
        if measure.beta_component is not None:
            alpha, mass = measure.beta_component
            if mass > 0.0:
                norm = gammaln(2.0 - alpha) + gammaln(alpha)
                for n in ns:
                    k = np.arange(2, n + 1)
                    log_rate = (
                        gammaln(k - alpha) + gammaln(n - k + alpha) - gammaln(n) - norm
                    )
                    jump[n, 2 : n + 1] += mass * np.exp(log_rate)
        self._jump = jump

        # Binomial coefficients kept in log space; C(n, k) * lambda products
        # would overflow linear doubles well before n_max = 1000.
        lf = gammaln(np.arange(n_max + 2) + 1.0)
        self._log_fact = lf

        full2 = jump[:, 2].copy()
        full2[2:] += measure.kingman_mass
        totals = np.zeros(n_max + 1)
        jump_totals = np.zeros(n_max + 1)
        for n in range(2, n_max + 1):
            k = np.arange(2, n + 1)
            log_binom = lf[n] - lf[k] - lf[n - k]
            row = jump[n, 2 : n + 1]
            with np.errstate(divide="ignore"):
                terms = np.exp(log_binom + np.log(np.where(row > 0, row, 1.0)))
            terms = np.where(row > 0, terms, 0.0)
            jump_totals[n] = terms.sum()
            # The atom term stays exact: kingman_mass * C(n, 2).
            totals[n] = jump_totals[n] + measure.kingman_mass * n * (n - 1) / 2.0
        self._totals = totals
        self._jump_totals = jump_totals

    def log_binom(self, n: int, k: int) -> float:
        lf = self._log_fact
        return lf[n] - lf[k] - lf[n - k]

    def binom(self, n: int, k: int) -> float:
        return math.exp(self.log_binom(n, k))

    def rate(self, n: int, k: int, include_kingman_atom: bool = True) -> float:
        if k < 2 or k > n or n > self.n_max:
            raise ConfigError(f"rate request (n={n}, k={k}) outside table range")
        r = self._jump[n, k]
        if include_kingman_atom and k == 2:
            r += self.kingman_mass
        return float(r)

    def jump_row(self, n: int) -> np.ndarray:
        """Jump-part rates for sample size n, indexed by merger size k."""
        return self._jump[n]

    def total(self, n: int) -> float:
        """Total coalescence rate of n untyped lineages (atom included)."""
        if n < 2 or n > self.n_max:
            raise ConfigError(f"total rate request n={n} outside 2..{self.n_max}")
        return float(self._totals[n])

    def totals(self) -> np.ndarray:
        return self._totals.copy()

    def absorption_jump_sum(self, n: int) -> float:
        """(1/(n+1)) * sum_k C(n+1, k) * jump rate at sample size n + 1."""
        if n + 1 > self.n_max:
            raise ConfigError(
                f"absorption at n={n} needs rates up to {n + 1} > n_max={self.n_max}"
            )
        return float(self._jump_totals[n + 1]) / (n + 1)


def total_coal_rate(measure: LambdaMeasure, n: int) -> float:
    """Sum over k of C(n, k) * lambda(n, k); equals the negated diagonal
    rate of the block-counting chain."""
    if n < 2:
        raise ConfigError("total coalescence rate needs n >= 2")
    lf = gammaln(np.arange(n + 2) + 1.0)
    total = measure.kingman_mass * n * (n - 1) / 2.0
    for k in range(2, n + 1):
        rate = jump_rate(measure, n, k)
        if rate > 0.0:
            total += math.exp(lf[n] - lf[k] - lf[n - k] + math.log(rate))
    return total


def build_rate_table(measure: LambdaMeasure, n_max: int) -> RateTable:
    return RateTable(measure, n_max)
