"""Product-of-approximate-conditionals likelihood estimation.

The likelihood of an ordered sample factorizes into conditional sampling
probabilities of each haplotype given its predecessors; substituting the
tractable trunk-ancestry CSDs gives a fast, biased estimate that depends on
the ordering, so estimates are averaged over uniformly random permutations
of the data.  Runtime is dominated by CSD evaluations and is independent of
the coalescent and mutation parameters for fixed data.
"""
from __future__ import annotations

import math
import time
from typing import Sequence

import numpy as np

from concurrent.futures import ProcessPoolExecutor
from typing import Callable

from .csd import K2Csd, QuadratureCsd
from .engine import Estimate, SurfacePoint
from .errors import ConfigError
from .mutation import MutationModel, SampleConfig, rescale_theta
from .rates import LambdaMeasure, RateTable

_PAC_KINDS = ("sd", "k", "k2")
_DEFAULT_ORDER = 10


def _evaluator(model: MutationModel, measure: LambdaMeasure, n: int, kind: str, order: int):
    table = RateTable(measure, n + 1)
    if kind == "k2":
        return K2Csd(model, table, order)
    ns = np.arange(n + 1, dtype=float)
    if kind == "sd":
        absorb = ns / 2.0
    else:
        absorb = table.kingman_mass * ns / 2.0
        absorb[1:] += np.array(
            [table.absorption_jump_sum(i) for i in range(1, n + 1)]
        )
    return QuadratureCsd(model, absorb, order)


def pac_single(
    order_seq: Sequence[int],
    model: MutationModel,
    measure: LambdaMeasure,
    kind: str = "k",
    quad_order: int = _DEFAULT_ORDER,
    evaluator=None,
) -> float:
    """Log-likelihood of one ordering: the stationary probability of the
    first haplotype times CSD factors for each later one."""
    if kind not in _PAC_KINDS:
        raise ConfigError(f"unknown CSD kind {kind!r}; expected one of {_PAC_KINDS}")
    if not order_seq:
        raise ConfigError("ordering is empty")
    if model.theta <= 0:
        raise ConfigError("PAC requires a positive total mutation rate")
    if evaluator is None:
        evaluator = _evaluator(model, measure, len(order_seq), kind, quad_order)
    logp = model.mrca_log_prob(order_seq[0])
    cond: dict[int, int] = {order_seq[0]: 1}
    for i, h in enumerate(order_seq[1:], start=1):
        value = evaluator.entry(cond, i, h)
        if value <= 0.0:
            return -math.inf
        logp += math.log(value)
        cond[h] = cond.get(h, 0) + 1
    return logp


def pac_average(
    data: SampleConfig,
    model: MutationModel,
    measure: LambdaMeasure,
    kind: str = "k",
    permutations: int = 1000,
    seed: int = 0,
    quad_order: int = _DEFAULT_ORDER,
) -> Estimate:
    """PAC estimate averaged over uniformly random orderings of the data.

    The estimate depends on the data only through the count multiset; the
    per-permutation likelihoods are averaged in linear space via a shifted
    log-sum-exp, and the reported ESS is the inverse sum of squared
    normalized permutation shares.
    """
    if permutations < 1:
        raise ConfigError("permutation count must be at least 1")
    if data.total == 0:
        raise ConfigError("data configuration is empty")
    expanded = [h for h, c in sorted(data.counts.items()) for _ in range(c)]
    evaluator = _evaluator(model, measure, data.total, kind, quad_order)

    t0 = time.perf_counter()
    values = np.empty(permutations)
    for i in range(permutations):
        rng = np.random.default_rng(np.random.SeedSequence(entropy=seed, spawn_key=(i,)))
        order = [expanded[j] for j in rng.permutation(len(expanded))]
        values[i] = pac_single(order, model, measure, kind, quad_order, evaluator)
    runtime = time.perf_counter() - t0

    mx = values.max()
    x = np.exp(values - mx)
    mean_x = x.mean()
    rel_se = (
        float(x.std(ddof=1) / math.sqrt(permutations) / mean_x)
        if permutations > 1
        else 0.0
    )
    shares = x / x.sum()
    return Estimate(
        log_mean=float(mx + math.log(mean_x)),
        rel_se=rel_se,
        ess=float(1.0 / (shares @ shares)),
        runtime_s=runtime,
        particles=permutations,
        replicates=permutations,
    )


def _pac_surface_task(args) -> SurfacePoint:
    data_counts, model, measure_builder, theta, alpha, kind, permutations, seed, order = args
    point_model = rescale_theta(model, theta)
    measure = measure_builder(alpha)
    est = pac_average(
        SampleConfig(data_counts), point_model, measure, kind, permutations, seed, order
    )
    return SurfacePoint(theta, alpha, est, seed, f"pac-{kind}")


def pac_surface(
    data: SampleConfig,
    model: MutationModel,
    measure_builder: Callable[[float | None], LambdaMeasure],
    thetas,
    alphas,
    kind: str = "k",
    permutations: int = 1000,
    seed: int = 0,
    quad_order: int = _DEFAULT_ORDER,
    threads: int = 1,
) -> list[SurfacePoint]:
    """PAC estimates over a parameter grid, with per-point seeds derived from
    the master seed and the point index."""
    points = [(t, a) for t in thetas for a in alphas]
    if not points:
        raise ConfigError("parameter grid is empty")
    tasks = []
    for idx, (theta, alpha) in enumerate(points):
        ss = np.random.SeedSequence(entropy=seed, spawn_key=(idx,))
        point_seed = int(ss.generate_state(1)[0])
        tasks.append(
            (
                dict(data.counts),
                model,
                measure_builder,
                theta,
                alpha,
                kind,
                permutations,
                point_seed,
                quad_order,
            )
        )
    if threads > 1 and len(tasks) > 1:
        with ProcessPoolExecutor(max_workers=threads) as pool:
            return list(pool.map(_pac_surface_task, tasks))
    return [_pac_surface_task(t) for t in tasks]
