"""Sequential importance sampling for multiple-merger coalescent likelihoods.

Particles walk backward from the observed configuration to a single lineage,
proposing one mutation or merger at a time and accumulating the ratio of
forward transition probability to proposal probability in log space.  The
forward kernel is the likelihood-recursion kernel: every coefficient is
evaluated at the larger (later) configuration of a transition, so that the
per-move probabilities times predecessor likelihoods sum exactly to the
current configuration's likelihood.

Proposals are memoized per configuration; within a parameter point most
particles revisit the same configurations, and that cache is what makes
runs at realistic sample sizes tractable.
"""
from __future__ import annotations

import math
import time
import zlib
from bisect import bisect_right
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, replace
from typing import Callable, Sequence

import numpy as np
from scipy.special import logsumexp

from .csd import QuadratureCsd, solve_restart_distribution
from .errors import ConfigError, ProposalError
from .mutation import MutationModel, SampleConfig, rescale_theta
from .rates import LambdaMeasure, RateTable
from .xi import XiMeasure, XiPatternRates, g_total_provider, merger_moves_raw

_PROPOSALS = ("gt", "sd", "k")
_CACHE_LIMIT = 250_000


@dataclass(frozen=True)
class MutationMove:
    """Backward move replacing one h-lineage by its pre-mutation parent,
    which carried allele a at the given locus."""

    h: int
    locus: int
    allele: int


@dataclass(frozen=True)
class CoalescenceMove:
    """Backward move merging k lineages of type h into one."""

    h: int
    k: int


@dataclass(frozen=True)
class WeightedMove:
    move: MutationMove | CoalescenceMove
    predecessor: SampleConfig
    forward_prob: float
    proposal_weight: float


@dataclass(frozen=True)
class ISConfig:
    particles: int = 1000
    proposal: str = "k"
    replicates: int = 8
    seed: int = 0
    checkpoints: tuple[int, ...] | None = None
    ess_threshold: float = 0.5
    quad_order: int = 4
    csd_backend: str = "quadrature"
    csd_permutations: int = 10
    threads: int = 1
    # Optional cutoff for particles whose weight can no longer affect the
    # double-precision result.  Only valid when per-step weight multipliers
    # never exceed 1 (true of the forward-proportional proposal in the
    # regimes studied here); both that property and the final-scale margin
    # are verified at runtime, so an active floor never changes the result.
    log_weight_floor: float | None = None

    def __post_init__(self):
        if self.particles < 1:
            raise ConfigError("particle count must be at least 1")
        if self.replicates < 1:
            raise ConfigError("replicate count must be at least 1")
        if not 0.0 < self.ess_threshold <= 1.0:
            raise ConfigError("ESS threshold must lie in (0, 1]")
        if self.checkpoints is not None:
            cps = tuple(self.checkpoints)
            if any(b <= 1 for b in cps) or any(a <= b for a, b in zip(cps, cps[1:])):
                raise ConfigError("checkpoints must be strictly decreasing sizes >= 2")
            object.__setattr__(self, "checkpoints", cps)


@dataclass
class Estimate:
    """Aggregated likelihood estimate with cross-replicate uncertainty.

    rel_se is the standard error divided by the mean, which to first order
    equals the standard error of the log-likelihood; likelihoods are carried
    in log space because realistic values underflow doubles.
    """

    log_mean: float
    rel_se: float
    ess: float
    runtime_s: float
    particles: int
    replicates: int

    @property
    def loglik(self) -> float:
        return self.log_mean

    @property
    def mean(self) -> float:
        return math.exp(self.log_mean)

    @property
    def se(self) -> float:
        return self.rel_se * self.mean

    def envelope(self, width: float = 2.0) -> tuple[float, float]:
        lo_arg = 1.0 - width * self.rel_se
        lo = self.log_mean + math.log(lo_arg) if lo_arg > 0 else -math.inf
        return lo, self.log_mean + math.log1p(width * self.rel_se)


def default_checkpoints(n: int) -> tuple[int, ...]:
    """Resampling checkpoint sizes n - 5, n - 10, ... down to 5."""
    return tuple(s for s in range(n - 5, 1, -5) if s >= 5)


class _Entry:
    __slots__ = ("moves", "cumq", "dlog", "logfwd", "max_dlog")

    def __init__(self, moves, cumq, dlog, logfwd):
        self.moves = moves
        self.cumq = cumq
        self.dlog = dlog
        self.logfwd = logfwd
        self.max_dlog = max(dlog)


def _finalize_entry(moves, logq, logfwd) -> _Entry:
    logq = np.asarray(logq, dtype=float)
    logfwd = np.asarray(logfwd, dtype=float)
    keep = logq > -math.inf
    if not keep.any():
        raise ProposalError("no admissible moves out of configuration")
    if not keep.all():
        moves = [m for m, ok in zip(moves, keep) if ok]
        logq = logq[keep]
        logfwd = logfwd[keep]
    mx = logq.max()
    shifted = np.exp(logq - mx)
    norm = mx + math.log(shifted.sum())
    cumq = np.cumsum(shifted)
    cumq /= cumq[-1]
    cumq[-1] = 1.0
    dlog = logfwd - (logq - norm)
    return _Entry(moves, cumq.tolist(), dlog.tolist(), logfwd)


def _finalize_entry_linear(moves, fwd) -> _Entry:
    """Entry for forward-proportional proposals: the weight increment is the
    log of the total forward mass for every move, so the build stays in
    linear space with no per-move logs."""
    fwd = np.asarray(fwd, dtype=float)
    pos = fwd > 0.0
    if not pos.any():
        raise ProposalError("no admissible moves out of configuration")
    if not pos.all():
        moves = [m for m, ok in zip(moves, pos) if ok]
        fwd = fwd[pos]
    cumq = np.cumsum(fwd)
    total = cumq[-1]
    cumq /= total
    cumq[-1] = 1.0
    dlog = math.log(total)
    return _Entry(moves, cumq.tolist(), [dlog] * len(moves), np.log(fwd))


class _ExactSizeCsd:
    """Linear-solve twin of QuadratureCsd for small haplotype spaces: full
    restart-chain solves cached per conditioning configuration."""

    def __init__(self, model: MutationModel, absorb_by_n: np.ndarray):
        self.model = model
        self.absorb = absorb_by_n
        self._cache: dict[tuple, np.ndarray] = {}

    def _vector(self, counts: dict[int, int], n: int) -> np.ndarray:
        key = tuple(sorted(counts.items()))
        vec = self._cache.get(key)
        if vec is None:
            nu = {h: c / n for h, c in counts.items()}
            vec = solve_restart_distribution(
                self.model, float(self.absorb[n]), nu, backend="exact"
            )
            self._cache[key] = vec
        return vec

    def entry(self, counts, n, target):
        return float(self._vector(counts, n)[target])

    def entries(self, counts, n, targets):
        vec = self._vector(counts, n)
        return np.array([vec[t] for t in targets])

    def chain_values(self, counts, n, h, m_max):
        out = np.empty(m_max)
        work = dict(counts)
        for m in range(1, m_max + 1):
            work[h] -= 1
            if work[h] == 0:
                del work[h]
            out[m - 1] = self._vector(work, n - m)[h]
        return out


class ProposalContext:
    """Shared state for proposing moves out of configurations under one
    model, measure and proposal family."""

    def __init__(
        self,
        model: MutationModel,
        measure: LambdaMeasure,
        n_top: int,
        kind: str,
        backend: str = "quadrature",
        order: int = 4,
    ):
        if kind not in _PROPOSALS:
            raise ConfigError(f"unknown proposal {kind!r}; expected one of {_PROPOSALS}")
        if model.theta <= 0:
            raise ConfigError("sequential sampling requires a positive mutation rate")
        self.model = model
        self.measure = measure
        self.kind = kind
        self.n_top = n_top
        self.table = RateTable(measure, n_top + 1)
        totals = self.table.totals()
        # Total event rate out of n lineages: n * theta + total merger rate.
        self.event_rate = np.arange(n_top + 2) * model.theta + totals

        self.evaluator = None
        if kind != "gt":
            ns = np.arange(n_top + 1, dtype=float)
            if kind == "sd":
                absorb = ns / 2.0
            else:
                absorb = self.table.kingman_mass * ns / 2.0
                absorb[1:] += np.array(
                    [self.table.absorption_jump_sum(n) for n in range(1, n_top + 1)]
                )
            if backend == "quadrature":
                self.evaluator = QuadratureCsd(model, absorb, order)
            elif backend == "exact":
                self.evaluator = _ExactSizeCsd(model, absorb)
            else:
                raise ConfigError(f"unknown CSD backend {backend!r}")
        # Per-type mutation move skeletons: the weight pieces
        # (parent, theta_l * p, silent) and the ready-made move tuples are
        # configuration independent, so they are built once per type.  The
        # coefficient count(parent) + 1 - silent is always at least 1, so a
        # skeleton never needs filtering against a configuration.
        self._skeletons: dict[int, tuple[list, list]] = {}
        self._mat_lists = [loc.matrix.tolist() for loc in model.loci]

    def _skeleton(self, h: int) -> tuple[list, list]:
        sk = self._skeletons.get(h)
        if sk is None:
            model = self.model
            weights = []
            moves = []
            for l, loc in enumerate(model.loci):
                cur = model.allele(h, l)
                rows = self._mat_lists[l]
                theta_l = loc.theta
                for a in range(loc.n_alleles):
                    p = rows[a][cur]
                    if p > 0.0:
                        parent = model.substitute(h, l, a)
                        weights.append((parent, theta_l * p, 1 if a == cur else 0))
                        moves.append((0, h, parent, l, a))
            sk = (weights, moves)
            self._skeletons[h] = sk
        return sk

    def proposal_rows(self, counts: dict[int, int], n: int):
        """Compact move tuples with unnormalized log proposal weights and log
        forward probabilities, in a deterministic order.

        Move tuples are (0, h, parent, locus, allele) for mutations and
        (1, h, k, 0, 0) for mergers.
        """
        model = self.model
        table = self.table
        gt = self.kind == "gt"
        log_d = math.log(self.event_rate[n])
        moves: list[tuple] = []
        logq: list[float] = []
        logfwd: list[float] = []

        for h in sorted(counts):
            n_h = counts[h]
            weights, skel_moves = self._skeleton(h)

            if weights:
                if gt:
                    values = denom = None
                else:
                    cond = dict(counts)
                    cond[h] -= 1
                    if cond[h] == 0:
                        del cond[h]
                    targets = [parent for parent, _, _ in weights]
                    values = self.evaluator.entries(cond, n - 1, targets + [h])
                    denom = values[-1]
                moves.extend(skel_moves)
                for i, (parent, tp, silent) in enumerate(weights):
                    coeff = counts.get(parent, 0) + 1 - silent
                    lf = math.log(tp * coeff) - log_d
                    if gt:
                        lq = lf
                    else:
                        num = values[i]
                        lq = (
                            math.log(n_h * tp) + math.log(num / denom)
                            if num > 0 and denom > 0
                            else -math.inf
                        )
                    logfwd.append(lf)
                    logq.append(lq)

            if n_h >= 2:
                if not gt:
                    u = self.evaluator.chain_values(counts, n, h, n_h - 1)
                    log_chain = np.cumsum(np.log(u))
                for k in range(2, n_h + 1):
                    lam = table.rate(n, k)
                    if lam <= 0.0:
                        continue
                    log_lam = math.log(lam)
                    lf = (
                        table.log_binom(n, k)
                        + log_lam
                        + math.log(n_h - k + 1)
                        - math.log(n - k + 1)
                        - log_d
                    )
                    if gt:
                        lq = lf
                    else:
                        lq = table.log_binom(n_h, k) + log_lam - log_chain[k - 2]
                    moves.append((1, h, k, 0, 0))
                    logfwd.append(lf)
                    logq.append(lq)
        return moves, logq, logfwd

    def _gt_rows_linear(self, counts: dict[int, int], n: int):
        """Forward probabilities in linear space for the GT proposal."""
        table = self.table
        d = self.event_rate[n]
        moves: list[tuple] = []
        fwd: list[float] = []
        get = counts.get
        append = fwd.append
        for h in sorted(counts):
            n_h = counts[h]
            weights, skel_moves = self._skeleton(h)
            moves.extend(skel_moves)
            for parent, tp, silent in weights:
                append(tp * (get(parent, 0) + 1 - silent) / d)
            if n_h >= 2:
                for k in range(2, n_h + 1):
                    lam = table.rate(n, k)
                    if lam <= 0.0:
                        continue
                    moves.append((1, h, k, 0, 0))
                    append(
                        table.binom(n, k) * lam * (n_h - k + 1) / ((n - k + 1) * d)
                    )
        return moves, fwd

    def build_entry(self, counts: dict[int, int], n: int) -> _Entry:
        if self.kind == "gt":
            return _finalize_entry_linear(*self._gt_rows_linear(counts, n))
        return _finalize_entry(*self.proposal_rows(counts, n))


def forward_prob(
    config: SampleConfig,
    move: MutationMove | CoalescenceMove,
    model: MutationModel,
    table: RateTable,
) -> float:
    """Forward transition probability into ``config`` from the predecessor
    reached by applying ``move`` backward.

    All coefficients are evaluated at ``config``, the later and larger state
    of the transition; summing these probabilities times predecessor
    likelihoods over every admissible move reproduces the likelihood of
    ``config``, which is the defining property of the kernel.
    """
    counts = config.counts
    n = config.total
    d = n * model.theta + table.total(n)
    if isinstance(move, MutationMove):
        if counts.get(move.h, 0) < 1:
            raise ConfigError("mutation move type not present in configuration")
        cur = model.allele(move.h, move.locus)
        loc = model.loci[move.locus]
        p = loc.matrix[move.allele, cur]
        parent = model.substitute(move.h, move.locus, move.allele)
        coeff = counts.get(parent, 0) + 1 - (1 if move.allele == cur else 0)
        return loc.theta * coeff * p / d
    if isinstance(move, CoalescenceMove):
        if not 2 <= move.k <= counts.get(move.h, 0):
            raise ConfigError("coalescence move exceeds the type's multiplicity")
        lam = table.rate(n, move.k)
        return (
            table.binom(n, move.k)
            * lam
            * (counts[move.h] - move.k + 1)
            / (n - move.k + 1)
            / d
        )
    raise ConfigError(f"unknown move type {type(move)!r}")


def propose(config: SampleConfig, kind: str, ctx: ProposalContext) -> list[WeightedMove]:
    """Normalized proposal distribution over backward moves out of config."""
    if config.total < 2:
        raise ConfigError("proposals need at least two lineages")
    if kind != ctx.kind:
        raise ConfigError(f"context was built for proposal {ctx.kind!r}, not {kind!r}")
    moves, logq, logfwd = ctx.proposal_rows(dict(config.counts), config.total)
    finite = [lq for lq in logq if lq > -math.inf]
    if not finite:
        raise ProposalError(f"no admissible moves out of {config!r}")
    norm = float(logsumexp(np.array(finite)))
    out = []
    for mv, lq, lf in zip(moves, logq, logfwd):
        if lq == -math.inf:
            continue
        kind_id, h, aux, l, a = mv
        if kind_id == 0:
            move = MutationMove(h, l, a)
            pred = config.with_delta(h, -1).with_delta(aux, +1)
        else:
            move = CoalescenceMove(h, aux)
            pred = config.with_delta(h, -(aux - 1))
        out.append(
            WeightedMove(
                move=move,
                predecessor=pred,
                forward_prob=math.exp(lf),
                proposal_weight=math.exp(lq - norm),
            )
        )
    return out


def _apply_lambda_move(counts: dict[int, int], move: tuple) -> int:
    """Apply a compact move tuple in place; returns the change in total size."""
    if move[0] == 0:
        h, parent = move[1], move[2]
        c = counts[h] - 1
        if c:
            counts[h] = c
        else:
            del counts[h]
        counts[parent] = counts.get(parent, 0) + 1
        return 0
    h, k = move[1], move[2]
    counts[h] -= k - 1
    return -(k - 1)


def _apply_xi_move(counts: dict[int, int], move: tuple) -> int:
    if move[0] == 0:
        return _apply_lambda_move(counts, move)
    pred = move[2]
    old_total = sum(counts.values())
    counts.clear()
    counts.update(pred)
    return sum(pred.values()) - old_total


class _SequentialSampler:
    """Backward particle propagation with stopping-time resampling, generic
    over the per-configuration entry builder and move application."""

    def __init__(
        self,
        build_entry: Callable[[dict, int], _Entry],
        apply_move: Callable[[dict, tuple], int],
        mrca_log: Callable[[int], float],
    ):
        self.build_entry = build_entry
        self.apply_move = apply_move
        self.mrca_log = mrca_log
        self.cache: dict[tuple, _Entry] = {}

    def _entry(self, counts: dict[int, int], n: int) -> _Entry:
        key = tuple(sorted(counts.items()))
        entry = self.cache.get(key)
        if entry is None:
            if len(self.cache) >= _CACHE_LIMIT:
                self.cache.clear()
            entry = self.build_entry(counts, n)
            self.cache[key] = entry
        return entry

    def run_replicate(
        self,
        data_counts: dict[int, int],
        n_particles: int,
        seed_seq: np.random.SeedSequence,
        checkpoints: Sequence[int],
        ess_threshold: float,
        log_weight_floor: float | None = None,
    ) -> tuple[float, float]:
        """One independent cohort; returns (log mean weight, final ESS)."""
        rng = np.random.default_rng(seed_seq)
        n0 = sum(data_counts.values())
        configs = [dict(data_counts) for _ in range(n_particles)]
        totals = [n0] * n_particles
        logw = np.zeros(n_particles)
        log_fold = 0.0
        apply_move = self.apply_move
        floor = -math.inf if log_weight_floor is None else log_weight_floor

        def advance(i: int, stop: int):
            w = logw[i]
            if w == -math.inf:
                return
            counts = configs[i]
            total = totals[i]
            while total > stop:
                entry = self._entry(counts, total)
                if floor > -math.inf and entry.max_dlog > 1e-12:
                    raise ProposalError(
                        "log_weight_floor requires nonincreasing particle"
                        " weights, but a move with a positive log weight"
                        " increment was encountered; rerun without the floor"
                    )
                j = bisect_right(entry.cumq, rng.random())
                w += entry.dlog[j]
                if w < floor:
                    w = -math.inf
                    break
                total += apply_move(counts, entry.moves[j])
            totals[i] = total
            logw[i] = w

        def check_floor_margin(mx: float):
            # A frozen particle would have finished below the floor; its
            # shifted contribution exp(logw - mx) is exactly 0.0 in doubles
            # whenever mx - floor exceeds 746, so the cutoff is lossless.
            if floor > -math.inf and mx - floor < 746.0:
                raise ProposalError(
                    "log_weight_floor is too close to the estimate scale to"
                    " guarantee exactness; lower the floor or disable it"
                )

        for stop in checkpoints:
            if stop >= n0:
                continue
            for i in range(n_particles):
                advance(i, stop)
            mx = logw.max()
            check_floor_margin(mx)
            w = np.exp(logw - mx)
            total_w = w.sum()
            ess = total_w * total_w / float(w @ w)
            if ess < ess_threshold * n_particles:
                log_fold += mx + math.log(total_w / n_particles)
                positions = (np.arange(n_particles) + rng.random()) / n_particles
                cdf = np.cumsum(w / total_w)
                cdf[-1] = 1.0
                idx = np.searchsorted(cdf, positions, side="right")
                configs = [dict(configs[j]) for j in idx]
                totals = [totals[j] for j in idx]
                logw = np.zeros(n_particles)

        for i in range(n_particles):
            advance(i, 1)
            if logw[i] > -math.inf:
                (h,) = configs[i]
                logw[i] += self.mrca_log(h)

        mx = logw.max()
        check_floor_margin(mx)
        w = np.exp(logw - mx)
        total_w = w.sum()
        ess = total_w * total_w / float(w @ w)
        return log_fold + mx + math.log(total_w / n_particles), ess


def _combine_replicates(
    results: Sequence[tuple[float, float]], runtime_s: float, particles_total: int
) -> Estimate:
    lam = np.array([r[0] for r in results], dtype=float)
    r = len(lam)
    mx = lam.max()
    x = np.exp(lam - mx)
    mean_x = x.mean()
    rel_se = float(x.std(ddof=1) / math.sqrt(r) / mean_x) if r > 1 else 0.0
    return Estimate(
        log_mean=float(mx + math.log(mean_x)),
        rel_se=rel_se,
        ess=float(np.mean([r[1] for r in results])),
        runtime_s=runtime_s,
        particles=particles_total,
        replicates=r,
    )


def _lambda_replicates_task(args) -> list[tuple[float, float]]:
    data_counts, model, measure, cfg, reps, checkpoints = args
    ctx = ProposalContext(
        model,
        measure,
        sum(data_counts.values()),
        cfg.proposal,
        cfg.csd_backend,
        cfg.quad_order,
    )
    sampler = _SequentialSampler(ctx.build_entry, _apply_lambda_move, model.mrca_log_prob)
    out = []
    for rep in reps:
        seed_seq = np.random.SeedSequence(entropy=cfg.seed, spawn_key=(rep,))
        out.append(
            sampler.run_replicate(
                dict(data_counts),
                cfg.particles,
                seed_seq,
                checkpoints,
                cfg.ess_threshold,
                cfg.log_weight_floor,
            )
        )
    return out


def run_is(
    data: SampleConfig, model: MutationModel, measure: LambdaMeasure, cfg: ISConfig
) -> Estimate:
    """Importance-sampling likelihood estimate of the observed configuration."""
    if data.total == 0:
        raise ConfigError("data configuration is empty")
    if model.theta <= 0:
        raise ConfigError("importance sampling requires a positive mutation rate")
    checkpoints = (
        cfg.checkpoints if cfg.checkpoints is not None else default_checkpoints(data.total)
    )
    t0 = time.perf_counter()
    rep_chunks = _chunk(range(cfg.replicates), cfg.threads)
    tasks = [
        (dict(data.counts), model, measure, cfg, chunk, checkpoints)
        for chunk in rep_chunks
    ]
    if cfg.threads > 1 and len(tasks) > 1:
        with ProcessPoolExecutor(max_workers=cfg.threads) as pool:
            chunk_results = list(pool.map(_lambda_replicates_task, tasks))
    else:
        chunk_results = [_lambda_replicates_task(t) for t in tasks]
    results = [r for chunk in chunk_results for r in chunk]
    runtime = time.perf_counter() - t0
    return _combine_replicates(results, runtime, cfg.particles * cfg.replicates)


def _chunk(items, parts: int) -> list[list]:
    items = list(items)
    parts = max(1, min(parts, len(items)))
    size = math.ceil(len(items) / parts)
    return [items[i : i + size] for i in range(0, len(items), size)]


@dataclass
class SurfacePoint:
    theta: float
    alpha: float | None
    estimate: Estimate
    seed: int
    proposal: str


def _surface_task(args) -> SurfacePoint:
    data_counts, model, measure_builder, theta, alpha, cfg, point_seed = args
    point_model = rescale_theta(model, theta)
    measure = measure_builder(alpha)
    point_cfg = replace(cfg, seed=point_seed, threads=1)
    est = run_is(SampleConfig(data_counts), point_model, measure, point_cfg)
    return SurfacePoint(theta, alpha, est, point_seed, cfg.proposal)


def surface(
    data: SampleConfig,
    model: MutationModel,
    measure_builder: Callable[[float | None], LambdaMeasure],
    thetas: Sequence[float],
    alphas: Sequence[float | None],
    cfg: ISConfig,
) -> list[SurfacePoint]:
    """Independent likelihood estimates over a parameter grid.

    Every grid point gets a fresh seed derived from the master seed and the
    point index, so results do not depend on evaluation order or on the
    worker pool size.
    """
    points = [(t, a) for t in thetas for a in alphas]
    if not points:
        raise ConfigError("parameter grid is empty")
    tasks = []
    for idx, (theta, alpha) in enumerate(points):
        ss = np.random.SeedSequence(entropy=cfg.seed, spawn_key=(idx,))
        point_seed = int(ss.generate_state(1)[0])
        tasks.append(
            (dict(data.counts), model, measure_builder, theta, alpha, cfg, point_seed)
        )
    if cfg.threads > 1 and len(tasks) > 1:
        with ProcessPoolExecutor(max_workers=cfg.threads) as pool:
            return list(pool.map(_surface_task, tasks))
    return [_surface_task(t) for t in tasks]


class _XiProposalContext:
    """Proposal and forward-kernel state for the simultaneous-merger engine."""

    def __init__(self, model: MutationModel, xi: XiMeasure, n_top: int, cfg: ISConfig):
        if model.theta <= 0:
            raise ConfigError("sequential sampling requires a positive mutation rate")
        self.model = model
        self.xi = xi
        self.cfg = cfg
        self.provider = XiPatternRates(xi)
        g = np.zeros(n_top + 2)
        for n in range(2, n_top + 2):
            g[n] = g_total_provider(self.provider, n)
        self.event_rate = np.arange(n_top + 2) * model.theta + g
        absorb = np.zeros(n_top + 1)
        for n in range(1, n_top + 1):
            absorb[n] = g[n + 1] / (n + 1)
        if cfg.csd_backend == "quadrature":
            self.evaluator = QuadratureCsd(model, absorb, cfg.quad_order)
        elif cfg.csd_backend == "exact":
            self.evaluator = _ExactSizeCsd(model, absorb)
        else:
            raise ConfigError(f"unknown CSD backend {cfg.csd_backend!r}")

    def _multivariate_csd(self, pred: dict[int, int], removed: dict[int, int]) -> float:
        """Chain-product CSD of the removed lineages given the predecessor,
        averaged over random orderings when several types were removed."""
        expanded = [h for h, c in sorted(removed.items()) for _ in range(c)]
        n_pred = sum(pred.values())
        if len(set(expanded)) == 1:
            orders = [expanded]
        else:
            # Orderings must not depend on traversal order, so the stream is
            # keyed to the move itself.
            key = repr((tuple(sorted(pred.items())), tuple(expanded))).encode()
            seed = (zlib.crc32(key) ^ (self.cfg.seed & 0xFFFFFFFF)) & 0xFFFFFFFF
            rng = np.random.default_rng(seed)
            orders = [
                [expanded[i] for i in rng.permutation(len(expanded))]
                for _ in range(self.cfg.csd_permutations)
            ]
        total = 0.0
        for order in orders:
            cond = dict(pred)
            size = n_pred
            prob = 1.0
            for h in order:
                prob *= self.evaluator.entry(cond, size, h)
                cond[h] = cond.get(h, 0) + 1
                size += 1
            total += prob
        return total / len(orders)

    def build_entry(self, counts: dict[int, int], n: int) -> _Entry:
        model = self.model
        log_d = math.log(self.event_rate[n])
        moves: list[tuple] = []
        logq: list[float] = []
        logfwd: list[float] = []

        for h in sorted(counts):
            n_h = counts[h]
            cond = dict(counts)
            cond[h] -= 1
            if cond[h] == 0:
                del cond[h]
            mut_targets = []
            mut_meta = []
            for l, loc in enumerate(model.loci):
                cur = model.allele(h, l)
                for a in range(loc.n_alleles):
                    p = loc.matrix[a, cur]
                    if p <= 0.0:
                        continue
                    mut_targets.append(model.substitute(h, l, a))
                    mut_meta.append((l, a, p, a == cur))
            if not mut_targets:
                continue
            values = self.evaluator.entries(cond, n - 1, mut_targets + [h])
            denom = values[-1]
            for (l, a, p, silent), parent, num in zip(mut_meta, mut_targets, values[:-1]):
                coeff = counts.get(parent, 0) + 1 - (1 if silent else 0)
                theta_l = model.loci[l].theta
                lf = math.log(theta_l * coeff * p) - log_d if coeff > 0 else -math.inf
                lq = (
                    math.log(n_h * theta_l * p * num / denom)
                    if num > 0 and denom > 0
                    else -math.inf
                )
                moves.append((0, h, parent, l, a))
                logfwd.append(lf)
                logq.append(lq)

        for pred, coeff in merger_moves_raw(counts, self.provider):
            removed = {
                h: counts.get(h, 0) - pred.get(h, 0)
                for h in set(counts) | set(pred)
                if counts.get(h, 0) - pred.get(h, 0) > 0
            }
            denom = self._multivariate_csd(pred, removed)
            lf = math.log(coeff) - log_d
            lq = math.log(coeff / denom) if denom > 0 else -math.inf
            moves.append((1, None, pred))
            logfwd.append(lf)
            logq.append(lq)

        return _finalize_entry(moves, logq, logfwd)


def run_is_xi_impl(
    data: SampleConfig, model: MutationModel, xi: XiMeasure, cfg: ISConfig
) -> Estimate:
    if data.total == 0:
        raise ConfigError("data configuration is empty")
    checkpoints = (
        cfg.checkpoints if cfg.checkpoints is not None else default_checkpoints(data.total)
    )
    ctx = _XiProposalContext(model, xi, data.total, cfg)
    sampler = _SequentialSampler(ctx.build_entry, _apply_xi_move, model.mrca_log_prob)
    t0 = time.perf_counter()
    results = []
    for rep in range(cfg.replicates):
        seed_seq = np.random.SeedSequence(entropy=cfg.seed, spawn_key=(rep,))
        results.append(
            sampler.run_replicate(
                dict(data.counts),
                cfg.particles,
                seed_seq,
                checkpoints,
                cfg.ess_threshold,
                cfg.log_weight_floor,
            )
        )
    runtime = time.perf_counter() - t0
    return _combine_replicates(results, runtime, cfg.particles * cfg.replicates)
