"""Approximate conditional sampling distributions via mutate-or-restart chains.

Each CSD family is the stationary law of a Markov chain on haplotypes that
mutates with probability beta = theta / (theta + A) and otherwise restarts
from a distribution nu over the conditioning sample, where A is the rate at
which an extra lineage is absorbed into a static trunk of the conditioning
lineages.  Families differ only in (A, nu):

  sd  A = n / 2 and nu = counts / n, ignoring the driving measure entirely.
  k   A adds the pairwise-atom rate and the normalized jump-merger rate of
      n + 1 lineages; nu = counts / n (uniform parent choice).
  k2  per-type absorption with the jump sums truncated at each type's own
      count; the restart inherits the absorbing cluster's type.

Merger rates entering A here are jump parts only; the atom at zero appears
through its explicit n/2 term.  Two evaluation backends are provided: a
dense linear solve over the haplotype space, and a Gauss-Laguerre quadrature
of the resolvent that factorizes over loci and never materializes the space.
"""
from __future__ import annotations

import math

import numpy as np
from numpy.polynomial.laguerre import laggauss
from scipy.linalg import expm

from .errors import ConfigError, SizeError
from .mutation import MutationModel, SampleConfig
from .rates import LambdaMeasure, RateTable

_EXACT_CAP = 4096
_KINDS = ("sd", "k", "k2")


def absorption_rate(
    kind: str, measure: LambdaMeasure | None, rates: RateTable, config: SampleConfig
) -> tuple[float, dict[int, float]]:
    """Trunk absorption rate and restart distribution for a CSD family."""
    if config.total == 0:
        raise ConfigError("conditioning sample is empty")
    n = config.total
    if kind == "sd":
        return n / 2.0, {h: c / n for h, c in config.counts.items()}
    if kind == "k":
        rate = rates.kingman_mass * n / 2.0 + rates.absorption_jump_sum(n)
        return rate, {h: c / n for h, c in config.counts.items()}
    if kind == "k2":
        per_type = {
            h: _k2_type_rate(rates, n, c) for h, c in config.counts.items()
        }
        total = sum(per_type.values())
        return total, {h: r / total for h, r in per_type.items()}
    raise ConfigError(f"unknown CSD kind {kind!r}; expected one of {_KINDS}")


def _k2_type_rate(rates: RateTable, n: int, n_h: int) -> float:
    """One type's absorption contribution: the pairwise-atom term plus the
    jump sum over merger sizes up to n_h + 1, at overall sample size n + 1."""
    rate = rates.kingman_mass * n_h / 2.0
    row = rates.jump_row(n + 1)
    acc = 0.0
    for k in range(2, n_h + 2):
        if row[k] > 0.0:
            acc += math.exp(rates.log_binom(n_h + 1, k) + math.log(row[k]))
    return rate + acc / (n_h + 1)


def solve_restart_distribution(
    model: MutationModel,
    absorb: float,
    nu: dict[int, float],
    backend: str = "exact",
    order: int = 4,
) -> np.ndarray:
    """Stationary distribution of the mutate-or-restart chain, over the full
    haplotype space."""
    if model.theta <= 0:
        raise ConfigError("restart chain requires a positive total mutation rate")
    if absorb <= 0:
        raise ConfigError("absorption rate must be positive")
    beta = model.theta / (model.theta + absorb)
    if backend == "exact":
        return _solve_exact(model, beta, nu)
    if backend == "quadrature":
        return _quad_full_vector(model, beta, nu, order)
    raise ConfigError(f"unknown CSD backend {backend!r}")


def _solve_exact(model: MutationModel, beta: float, nu: dict[int, float]) -> np.ndarray:
    H = model.n_haplotypes
    if H > _EXACT_CAP:
        raise SizeError(
            f"haplotype space of size {H} exceeds the exact-backend cap {_EXACT_CAP}"
        )
    P = model.mixture_matrix()
    rhs = np.zeros(H)
    for h, w in nu.items():
        rhs[h] = w
    # pi = (1 - beta) nu + beta pi P, solved as a transposed linear system.
    pi = np.linalg.solve(np.eye(H) - beta * P.T, (1.0 - beta) * rhs)
    return pi


def restart_transition_matrix(
    model: MutationModel, absorb: float, nu: dict[int, float]
) -> np.ndarray:
    """Dense transition matrix of the mutate-or-restart chain (test helper)."""
    H = model.n_haplotypes
    if H > _EXACT_CAP:
        raise SizeError(f"haplotype space of size {H} exceeds {_EXACT_CAP}")
    nu_vec = np.zeros(H)
    for h, w in nu.items():
        nu_vec[h] = w
    beta = model.theta / (model.theta + absorb)
    return beta * model.mixture_matrix() + (1.0 - beta) * np.outer(
        np.ones(H), nu_vec
    )


def _locus_decompositions(model: MutationModel):
    """Eigendecompositions of P - I per locus, with an expm fallback flag."""
    decomps = []
    for loc in model.loci:
        gen = loc.matrix - np.eye(loc.n_alleles)
        try:
            vals, vecs = np.linalg.eig(gen)
            vinv = np.linalg.inv(vecs)
            recon = (vecs * vals) @ vinv
            ok = np.abs(recon - gen).max() < 1e-10 and np.linalg.cond(vecs) < 1e8
        except np.linalg.LinAlgError:
            ok = False
            vals = vecs = vinv = None
        decomps.append((gen, vals, vecs, vinv, ok))
    return decomps


def _node_matrices(decomp, scales: np.ndarray) -> np.ndarray:
    """expm(scale * (P - I)) for an array of scales; shape scales.shape + (E, E)."""
    gen, vals, vecs, vinv, ok = decomp
    if ok:
        ex = np.exp(scales[..., None] * vals)
        out = np.einsum("ij,...j,jk->...ik", vecs, ex, vinv).real
        return np.ascontiguousarray(out)
    flat = scales.reshape(-1)
    mats = np.stack([expm(s * gen) for s in flat])
    return mats.reshape(scales.shape + gen.shape)


class QuadratureCsd:
    """Targeted-entry quadrature evaluator for CSDs whose absorption rate
    depends on the conditioning sample only through its total size.

    Per-locus node matrices are precomputed for every conditioning size up
    to n_top, and scalar products common to a (source type, target type)
    pair are cached across sizes; this is what makes chain products and
    repeated proposal evaluations cheap.
    """

    def __init__(self, model: MutationModel, absorb_by_n: np.ndarray, order: int):
        if model.theta <= 0:
            raise ConfigError("restart chain requires a positive mutation rate")
        if order < 1:
            raise ConfigError("quadrature order must be at least 1")
        self.model = model
        self.order = order
        nodes, weights = laggauss(order)
        self.n_top = len(absorb_by_n) - 1

        absorb = np.asarray(absorb_by_n, dtype=float)
        beta = np.zeros_like(absorb)
        valid = absorb > 0
        beta[valid] = model.theta / (model.theta + absorb[valid])
        self._beta = beta
        self._one_minus_beta = np.where(valid, 1.0 - beta, 0.0)
        # Node scalars w_j * exp(t_j * beta) folded together in log space so
        # large nodes at high orders cannot overflow on their own.
        self._node_scal = np.exp(
            np.log(weights)[None, :] + nodes[None, :] * beta[:, None]
        )

        theta = model.theta
        decomps = _locus_decompositions(model)
        self._ex = []
        for loc, dec in zip(model.loci, decomps):
            scales = nodes[None, :] * beta[:, None] * (loc.theta / theta)
            self._ex.append(_node_matrices(dec, scales))
        self._alleles: dict[int, tuple[int, ...]] = {}
        self._pairs: dict[tuple[int, int], np.ndarray] = {}

    def _decode(self, h: int) -> tuple[int, ...]:
        cached = self._alleles.get(h)
        if cached is None:
            cached = self.model.decode(h)
            self._alleles[h] = cached
        return cached

    def pair(self, g: int, h: int) -> np.ndarray:
        """sum_j scal[n, j] * prod_l M_l[n, j, g_l, h_l], indexed by size n."""
        key = (g, h)
        cached = self._pairs.get(key)
        if cached is None:
            ga, ha = self._decode(g), self._decode(h)
            prod = None
            for ex, gl, hl in zip(self._ex, ga, ha):
                term = ex[:, :, gl, hl]
                prod = term if prod is None else prod * term
            cached = (prod * self._node_scal).sum(axis=1)
            self._pairs[key] = cached
        return cached

    def entry(self, counts: dict[int, int], n: int, target: int) -> float:
        """CSD probability of the target type given a conditioning sample of
        size n with the given counts."""
        acc = 0.0
        for g, c in counts.items():
            acc += c * self.pair(g, target)[n]
        return self._one_minus_beta[n] * acc / n

    def entries(self, counts: dict[int, int], n: int, targets) -> np.ndarray:
        return np.array([self.entry(counts, n, t) for t in targets])

    def chain_values(self, counts: dict[int, int], n: int, h: int, m_max: int) -> np.ndarray:
        """CSD of one extra h-copy given the sample minus m copies of h, for
        m = 1..m_max; these are the factors of same-type chain products."""
        sizes = n - np.arange(1, m_max + 1)
        acc = np.zeros(m_max)
        for g, c in counts.items():
            pg = self.pair(g, h)[sizes]
            if g == h:
                acc += (c - np.arange(1, m_max + 1)) * pg
            else:
                acc += c * pg
        return self._one_minus_beta[sizes] * acc / sizes


class K2Csd:
    """Per-call quadrature evaluator for the cluster-restart family, whose
    absorption rate and restart weights depend nonlinearly on the counts;
    nothing can be cached across conditioning samples."""

    def __init__(self, model: MutationModel, rates: RateTable, order: int):
        if model.theta <= 0:
            raise ConfigError("restart chain requires a positive mutation rate")
        self.model = model
        self.rates = rates
        self.order = order
        self._nodes, self._weights = laggauss(order)
        self._decomps = _locus_decompositions(model)
        self._type_rate_cache: dict[tuple[int, int], float] = {}

    def _type_rate(self, n: int, n_h: int) -> float:
        key = (n, n_h)
        cached = self._type_rate_cache.get(key)
        if cached is None:
            cached = _k2_type_rate(self.rates, n, n_h)
            self._type_rate_cache[key] = cached
        return cached

    def entry(self, counts: dict[int, int], n: int, target: int) -> float:
        per_type = {h: self._type_rate(n, c) for h, c in counts.items()}
        absorb = sum(per_type.values())
        beta = self.model.theta / (self.model.theta + absorb)
        scal = self._weights * np.exp(self._nodes * beta)
        theta = self.model.theta
        exs = [
            _node_matrices(dec, self._nodes * beta * (loc.theta / theta))
            for loc, dec in zip(self.model.loci, self._decomps)
        ]
        ta = self.model.decode(target)
        acc = 0.0
        for g, rate in per_type.items():
            ga = self.model.decode(g)
            prod = np.ones(len(self._nodes))
            for ex, gl, hl in zip(exs, ga, ta):
                prod = prod * ex[:, gl, hl]
            acc += (rate / absorb) * float((prod * scal).sum())
        return (1.0 - beta) * acc


def _quad_full_vector(
    model: MutationModel, beta: float, nu: dict[int, float], order: int
) -> np.ndarray:
    H = model.n_haplotypes
    nodes, weights = laggauss(order)
    scal = weights * np.exp(nodes * beta)
    theta = model.theta
    exs = [
        _node_matrices(dec, nodes * beta * (loc.theta / theta))
        for loc, dec in zip(model.loci, _locus_decompositions(model))
    ]
    out = np.zeros(H)
    sources = sorted(nu)
    for target in range(H):
        ta = model.decode(target)
        acc = 0.0
        for g in sources:
            ga = model.decode(g)
            prod = np.ones(order)
            for ex, gl, hl in zip(exs, ga, ta):
                prod = prod * ex[:, gl, hl]
            acc += nu[g] * float((prod * scal).sum())
        out[target] = (1.0 - beta) * acc
    return out


def csd_univariate(
    kind: str,
    model: MutationModel,
    measure: LambdaMeasure | None,
    rates: RateTable,
    config: SampleConfig,
    backend: str = "exact",
    order: int = 4,
) -> np.ndarray:
    """Probability vector of the next sampled type given the conditioning
    sample, over the full haplotype space."""
    absorb, nu = absorption_rate(kind, measure, rates, config)
    return solve_restart_distribution(model, absorb, nu, backend, order)


def csd_chain(
    kind: str,
    model: MutationModel,
    measure: LambdaMeasure | None,
    rates: RateTable,
    h: int,
    k: int,
    config: SampleConfig,
    backend: str = "exact",
    order: int = 4,
) -> float:
    """Probability of k - 1 further copies of h given the conditioning
    sample, telescoped into univariate factors on a growing sample.

    The decomposition is exact for same-type blocks even though the
    approximate families are not exchangeable: the extra copies only ever
    enter the conditioning side.
    """
    if k < 2:
        raise ConfigError("chain evaluations need a merger size of at least 2")
    value = 1.0
    current = config
    for _ in range(k - 1):
        vec = csd_univariate(kind, model, measure, rates, current, backend, order)
        value *= float(vec[h])
        current = current.with_delta(h, +1)
    return value
