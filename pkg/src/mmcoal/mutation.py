"""Finite-sites, finite-alleles mutation model and sample configurations.

Haplotypes are keyed by a mixed-radix integer so that sparse count maps and
per-locus factorized kernels share one canonical encoding; the full haplotype
space is never materialized unless a caller explicitly asks for it.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from functools import cached_property
from typing import Iterable, Iterator, Mapping

import numpy as np

from .errors import ConfigError

_ROW_TOL = 1e-12


@dataclass(frozen=True)
class Locus:
    theta: float
    matrix: np.ndarray

    def __post_init__(self):
        m = np.asarray(self.matrix, dtype=float)
        object.__setattr__(self, "matrix", m)
        if m.ndim != 2 or m.shape[0] != m.shape[1] or m.shape[0] < 1:
            raise ConfigError("mutation matrix must be square")
        if (m < 0).any():
            raise ConfigError("mutation matrix entries must be nonnegative")
        if np.abs(m.sum(axis=1) - 1.0).max() > _ROW_TOL:
            raise ConfigError("mutation matrix rows must sum to 1")
        if self.theta < 0:
            raise ConfigError("locus rate must be nonnegative")

    @property
    def n_alleles(self) -> int:
        return self.matrix.shape[0]


class MutationModel:
    """Ordered loci with per-locus rates and transition matrices."""

    def __init__(self, loci: Iterable[Locus]):
        self.loci: tuple[Locus, ...] = tuple(loci)
        if not self.loci:
            raise ConfigError("at least one locus is required")
        self.theta = float(sum(loc.theta for loc in self.loci))
        self.radices = tuple(loc.n_alleles for loc in self.loci)
        # Mixed-radix strides: haplotype index is sum(allele_l * stride_l).
        strides = []
        acc = 1
        for r in reversed(self.radices):
            strides.append(acc)
            acc *= r
        self.strides = tuple(reversed(strides))
        self.n_haplotypes = acc

    @property
    def n_loci(self) -> int:
        return len(self.loci)

    def encode(self, alleles: Iterable[int]) -> int:
        alleles = tuple(alleles)
        if len(alleles) != self.n_loci:
            raise ConfigError("allele vector length does not match locus count")
        h = 0
        for a, r, s in zip(alleles, self.radices, self.strides):
            if not 0 <= a < r:
                raise ConfigError(f"allele {a} out of range for {r}-allele locus")
            h += a * s
        return h

    def decode(self, h: int) -> tuple[int, ...]:
        if not 0 <= h < self.n_haplotypes:
            raise ConfigError(f"haplotype index {h} out of range")
        out = []
        for r, s in zip(self.radices, self.strides):
            out.append((h // s) % r)
        return tuple(out)

    def allele(self, h: int, l: int) -> int:
        return (h // self.strides[l]) % self.radices[l]

    def substitute(self, h: int, l: int, a: int) -> int:
        """Haplotype obtained from h by overwriting locus l with allele a."""
        if not 0 <= l < self.n_loci:
            raise ConfigError(f"locus {l} out of range")
        if not 0 <= a < self.radices[l]:
            raise ConfigError(f"allele {a} out of range at locus {l}")
        return h + (a - self.allele(h, l)) * self.strides[l]

    @cached_property
    def _matrix_stationaries(self) -> tuple[np.ndarray, ...]:
        # Invariant laws of the per-locus matrices alone; well defined for
        # zero-rate loci, which the simulator relies on.
        out = []
        for i, loc in enumerate(self.loci):
            if not _is_irreducible(loc.matrix):
                raise ConfigError(f"locus {i}: mutation matrix is reducible")
            out.append(_stationary_vector(loc.matrix))
        return tuple(out)

    @cached_property
    def _stationary_loci(self) -> tuple[np.ndarray, ...]:
        for i, loc in enumerate(self.loci):
            if loc.theta <= 0.0:
                raise ConfigError(
                    f"locus {i}: rate must be positive for a stationary type prior"
                )
        return self._matrix_stationaries

    def mrca_log_prob(self, h: int) -> float:
        statios = self._stationary_loci
        return float(
            sum(math.log(statios[l][self.allele(h, l)]) for l in range(self.n_loci))
        )

    def mrca_prob(self, h: int) -> float:
        return math.exp(self.mrca_log_prob(h))

    def mixture_matrix(self) -> np.ndarray:
        """Dense transition matrix of the mutation mixture chain on the full
        haplotype space, with locus weights theta_l / theta.  Only sensible
        for small spaces; used by exact CSD backends and tests."""
        if self.theta <= 0:
            raise ConfigError("mixture chain undefined for zero total rate")
        H = self.n_haplotypes
        P = np.zeros((H, H))
        for l, loc in enumerate(self.loci):
            w = loc.theta / self.theta
            stride, radix = self.strides[l], self.radices[l]
            for h in range(H):
                cur = (h // stride) % radix
                base = h - cur * stride
                for b in range(radix):
                    P[h, base + b * stride] += w * loc.matrix[cur, b]
        return P

    def format_haplotype(self, h: int) -> str:
        alleles = self.decode(h)
        if max(self.radices) <= 10:
            return "".join(str(a) for a in alleles)
        return ",".join(str(a) for a in alleles)

    def parse_haplotype(self, text: str) -> int:
        if "," in text:
            alleles = [int(tok) for tok in text.split(",")]
        else:
            alleles = [int(ch) for ch in text]
        return self.encode(alleles)


def _is_irreducible(matrix: np.ndarray) -> bool:
    size = matrix.shape[0]
    if size == 1:
        return True
    reach = np.linalg.matrix_power(np.eye(size) + (matrix > 0), size)
    return bool((reach > 0).all())


def _stationary_vector(matrix: np.ndarray) -> np.ndarray:
    # Replace one balance equation with the normalization constraint; unique
    # for irreducible chains (aperiodicity not required for uniqueness).
    size = matrix.shape[0]
    a = (matrix.T - np.eye(size)).copy()
    a[-1, :] = 1.0
    b = np.zeros(size)
    b[-1] = 1.0
    pi = np.linalg.solve(a, b)
    pi = np.clip(pi, 0.0, None)
    return pi / pi.sum()


def flip_model(n_loci: int, theta: float) -> MutationModel:
    """Biallelic loci with the 0 <-> 1 flip matrix and the total rate spread
    evenly across loci."""
    flip = np.array([[0.0, 1.0], [1.0, 0.0]])
    return MutationModel(Locus(theta / n_loci, flip) for _ in range(n_loci))


def rescale_theta(model: MutationModel, total: float) -> MutationModel:
    """Copy of the model with per-locus rates rescaled to a new total,
    preserving their proportions."""
    if model.theta <= 0:
        raise ConfigError("cannot rescale a model with zero total mutation rate")
    if total < 0:
        raise ConfigError("total mutation rate must be nonnegative")
    scale = total / model.theta
    return MutationModel(Locus(loc.theta * scale, loc.matrix) for loc in model.loci)


class SampleConfig:
    """Unordered type-frequency vector stored as a sparse haplotype -> count map."""

    __slots__ = ("counts", "total")

    def __init__(self, counts: Mapping[int, int]):
        clean: dict[int, int] = {}
        for h, c in counts.items():
            if c < 0 or int(c) != c:
                raise ConfigError(f"count {c} for haplotype {h} is not a"
                                  " nonnegative integer")
            if c > 0:
                clean[int(h)] = int(c)
        self.counts = clean
        self.total = sum(clean.values())

    @classmethod
    def from_strings(cls, model: MutationModel, counts: Mapping[str, int]) -> "SampleConfig":
        return cls({model.parse_haplotype(s): c for s, c in counts.items()})

    def to_strings(self, model: MutationModel) -> dict[str, int]:
        return {model.format_haplotype(h): c for h, c in sorted(self.counts.items())}

    def key(self) -> tuple[tuple[int, int], ...]:
        return tuple(sorted(self.counts.items()))

    def items(self) -> Iterator[tuple[int, int]]:
        return iter(self.counts.items())

    def with_delta(self, h: int, delta: int) -> "SampleConfig":
        new = dict(self.counts)
        new[h] = new.get(h, 0) + delta
        if new[h] < 0:
            raise ConfigError(f"count for haplotype {h} would become negative")
        return SampleConfig(new)

    def __eq__(self, other) -> bool:
        return isinstance(other, SampleConfig) and self.counts == other.counts

    def __hash__(self) -> int:
        return hash(self.key())

    def __repr__(self) -> str:
        return f"SampleConfig({self.counts!r})"


def mrca_distribution(model: MutationModel) -> np.ndarray:
    """Stationary distribution of the mutation mixture chain over the full
    haplotype space (factorized internally; materialized here).

    For large spaces use MutationModel.mrca_prob on individual haplotypes.
    """
    statios = model._stationary_loci
    out = statios[0]
    for v in statios[1:]:
        out = np.kron(out, v)
    return out


def enumerate_mutation_moves(
    config: SampleConfig, model: MutationModel
) -> list[tuple[int, int, int, SampleConfig]]:
    """All single-mutation predecessor moves (h, l, a, predecessor config).

    One entry per present haplotype h, locus l and allele a with a positive
    transition probability into h's current allele; silent moves (a equal to
    the current allele) appear only when the matrix diagonal is positive.
    """
    if config.total == 0:
        raise ConfigError("configuration is empty")
    moves = []
    for h in sorted(config.counts):
        for l, loc in enumerate(model.loci):
            cur = model.allele(h, l)
            for a in range(loc.n_alleles):
                if loc.matrix[a, cur] <= 0.0:
                    continue
                parent = model.substitute(h, l, a)
                pred = config.with_delta(h, -1).with_delta(parent, +1)
                moves.append((h, l, a, pred))
    return moves
