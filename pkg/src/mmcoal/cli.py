"""Command-line interface: simulation, exact solving, IS and PAC surfaces."""
from __future__ import annotations

import argparse
import functools
import json
import sys
from pathlib import Path

import numpy as np

from .engine import ISConfig, SurfacePoint, surface
from .errors import ConfigError, ProposalError, SizeError
from .mutation import Locus, MutationModel, SampleConfig, flip_model, rescale_theta
from .oracle import solve_exact
from .pac import pac_surface
from .rates import LambdaMeasure, beta_measure, eldon_wakeley, kingman, star
from .simulate import simulate_sample
from .xi import XiMeasure, run_is_xi

def read_data(path: str) -> tuple[MutationModel, SampleConfig, dict]:
    try:
        raw = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read data file {path}: {exc}") from exc
    try:
        doc = json.loads(raw)
    except json.JSONDecodeError as exc:
        raise ConfigError(
            f"{path}: malformed JSON at line {exc.lineno}, column {exc.colno}: {exc.msg}"
        ) from exc
    try:
        loci = [Locus(float(l["theta"]), np.array(l["matrix"], dtype=float))
                for l in doc["loci"]]
        model = MutationModel(loci)
        data = SampleConfig.from_strings(model, doc["haplotypes"])
    except (KeyError, TypeError) as exc:
        raise ConfigError(f"{path}: missing or malformed field: {exc}") from exc
    return model, data, doc


def write_data(path: str, model: MutationModel, data: SampleConfig, seed) -> None:
    doc = {
        "loci": [
            {
                "alleles": loc.n_alleles,
                "theta": loc.theta,
                "matrix": loc.matrix.tolist(),
            }
            for loc in model.loci
        ],
        "haplotypes": data.to_strings(model),
        "seed": seed,
    }
    Path(path).write_text(json.dumps(doc, indent=2) + "\n")


def _fixed_measure(measure: LambdaMeasure, alpha) -> LambdaMeasure:
    return measure


def _beta_builder(alpha) -> LambdaMeasure:
    if alpha is None:
        raise ConfigError("the beta family needs --alpha or --alpha-grid")
    return beta_measure(alpha)


def measure_builder_from_args(args):
    """(builder, alphas) pair; alphas is [None] for families without alpha."""
    kind = args.measure
    if kind is None:
        # Family inferred from the flags: an alpha means the beta family,
        # otherwise plain pairwise mergers.
        has_alpha = args.alpha is not None or getattr(args, "alpha_grid", None)
        kind = "beta" if has_alpha else "kingman"
    alphas: list[float | None]
    if kind == "beta":
        if getattr(args, "alpha_grid", None):
            alphas = parse_grid(args.alpha_grid)
        elif args.alpha is not None:
            alphas = [args.alpha]
        else:
            raise ConfigError("the beta family needs --alpha or --alpha-grid")
        return _beta_builder, alphas
    if kind == "kingman":
        measure = kingman()
    elif kind == "star":
        measure = star()
    elif kind == "eldon-wakeley":
        if args.psi is None:
            raise ConfigError("the eldon-wakeley family needs --psi")
        measure = eldon_wakeley(args.psi)
    elif kind == "mixture":
        atoms = []
        for spec in args.atom or []:
            loc, _, mass = spec.partition(":")
            atoms.append((float(loc), float(mass)))
        beta_part = None
        if args.beta_part:
            a, _, mass = args.beta_part.partition(":")
            beta_part = (float(a), float(mass))
        measure = LambdaMeasure(
            kingman_mass=args.kingman_mass,
            point_atoms=tuple(atoms),
            beta_component=beta_part,
        )
    else:
        raise ConfigError(f"unknown measure family {kind!r}")
    return functools.partial(_fixed_measure, measure), [None]


def parse_grid(spec: str) -> list[float]:
    """Inclusive, evenly spaced grid from a lo:hi:count specification."""
    parts = spec.split(":")
    if len(parts) != 3:
        raise ConfigError(f"grid {spec!r} is not of the form lo:hi:count")
    lo, hi, count = float(parts[0]), float(parts[1]), int(parts[2])
    if count < 1:
        raise ConfigError("grid count must be at least 1")
    if count == 1:
        return [lo]
    return [float(x) for x in np.linspace(lo, hi, count)]


def parse_xi(spec: str) -> XiMeasure:
    if spec.startswith("@"):
        spec = Path(spec[1:]).read_text()
    try:
        doc = json.loads(spec)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"malformed xi measure JSON: {exc.msg}") from exc
    atoms = tuple(
        (tuple(a["coords"]), float(a["mass"])) for a in doc.get("atoms", [])
    )
    return XiMeasure(kingman_mass=float(doc.get("kingman_mass", 0.0)), atoms=atoms)


def _fmt(value) -> str:
    if value is None:
        return ""
    if isinstance(value, (float, np.floating)):
        return repr(float(value))
    return str(value)


def write_points(points: list[SurfacePoint], args, extra: dict | None = None) -> None:
    """Emit surface rows as CSV or JSON; every row carries its seed so the
    command that produced it can be replayed exactly."""
    rows = []
    for pt in points:
        est = pt.estimate
        row = {
            "param_theta": pt.theta,
            "param_alpha": pt.alpha,
            "loglik": est.log_mean,
            "se": est.rel_se,
            "ess": est.ess,
            "runtime_s": est.runtime_s,
            "particles": est.particles,
            "proposal": pt.proposal,
        }
        if extra:
            row.update(extra)
        row["seed"] = pt.seed
        rows.append(row)
    if getattr(args, "normalize", False):
        top = max(r["loglik"] for r in rows)
        for r in rows:
            r["loglik"] = r["loglik"] - top
    out = sys.stdout if args.out in (None, "-") else open(args.out, "w")
    try:
        if args.format == "json":
            json.dump(rows, out, indent=2, default=_fmt)
            out.write("\n")
        else:
            cols = list(rows[0].keys())
            out.write(",".join(cols) + "\n")
            for r in rows:
                out.write(",".join(_fmt(r[c]) for c in cols) + "\n")
    finally:
        if out is not sys.stdout:
            out.close()


def _is_config_from_args(args, proposal: str | None = None) -> ISConfig:
    return ISConfig(
        particles=args.particles,
        proposal=proposal or args.proposal,
        replicates=args.replicates,
        seed=args.seed,
        ess_threshold=args.resample_ess,
        quad_order=args.quad_order,
        csd_backend=args.csd_backend,
        threads=args.threads,
    )


def _thetas_from_args(args, model: MutationModel) -> list[float]:
    if getattr(args, "theta_grid", None):
        return parse_grid(args.theta_grid)
    if args.theta is not None:
        return [args.theta]
    return [model.theta]


def cmd_simulate(args) -> int:
    model = flip_model(args.loci, args.theta)
    builder, alphas = measure_builder_from_args(args)
    measure = builder(alphas[0])
    data = simulate_sample(model, measure, args.n, args.seed)
    write_data(args.out, model, data, args.seed)
    return 0


def cmd_is(args) -> int:
    model, data, _ = read_data(args.data)
    builder, alphas = measure_builder_from_args(args)
    thetas = _thetas_from_args(args, model)
    cfg = _is_config_from_args(args)
    points = surface(data, model, builder, thetas, alphas, cfg)
    write_points(points, args)
    return 0


def cmd_pac(args) -> int:
    model, data, _ = read_data(args.data)
    builder, alphas = measure_builder_from_args(args)
    thetas = _thetas_from_args(args, model)
    points = pac_surface(
        data,
        model,
        builder,
        thetas,
        alphas,
        kind=args.csd,
        permutations=args.permutations,
        seed=args.seed,
        quad_order=args.quad_order,
        threads=args.threads,
    )
    write_points(points, args, extra={"permutations": args.permutations})
    return 0


def cmd_exact(args) -> int:
    model, data, _ = read_data(args.data)
    builder, alphas = measure_builder_from_args(args)
    measure = builder(alphas[0])
    if args.theta is not None:
        model = rescale_theta(model, args.theta)
    table = solve_exact(model, measure, data, n_cap=args.n_cap, h_cap=args.h_cap)
    like = table.likelihood_of(data)
    result = {
        "theta": model.theta,
        "alpha": alphas[0],
        "likelihood": like,
        "loglik": float(np.log(like)),
    }
    if args.table:
        dump = {
            str(m): {
                " ".join(f"{model.format_haplotype(h)}:{c}" for h, c in key): v
                for key, v in table.level(m).items()
            }
            for m in range(1, table.n + 1)
        }
        Path(args.table).write_text(json.dumps(dump, indent=2) + "\n")
    print(json.dumps(result))
    return 0


def cmd_xi_is(args) -> int:
    model, data, _ = read_data(args.data)
    xi = parse_xi(args.xi)
    if args.theta is not None:
        model = rescale_theta(model, args.theta)
    cfg = ISConfig(
        particles=args.particles,
        replicates=args.replicates,
        seed=args.seed,
        ess_threshold=args.resample_ess,
        quad_order=args.quad_order,
        csd_backend=args.csd_backend,
        csd_permutations=args.csd_permutations,
    )
    est = run_is_xi(data, model, xi, cfg, desk_cap=args.desk_cap)
    points = [SurfacePoint(model.theta, None, est, args.seed, "xi-k")]
    write_points(points, args)
    return 0


def cmd_xi_exact(args) -> int:
    model, data, _ = read_data(args.data)
    xi = parse_xi(args.xi)
    if args.theta is not None:
        model = rescale_theta(model, args.theta)
    table = solve_exact(model, xi, data, n_cap=args.n_cap, h_cap=args.h_cap)
    like = table.likelihood_of(data)
    print(json.dumps({"theta": model.theta, "likelihood": like,
                      "loglik": float(np.log(like))}))
    return 0


def experiment1_data() -> tuple[MutationModel, SampleConfig]:
    """The 95/4/1 three-type configuration on 15 flip loci: a focal type,
    a second type one mutation away, and a third type one different
    mutation away."""
    model = flip_model(15, 0.1)
    focal = 0
    second = model.substitute(focal, 0, 1)
    third = model.substitute(focal, 1, 1)
    return model, SampleConfig({focal: 95, second: 4, third: 1})


def cmd_repro(args) -> int:
    model, data = experiment1_data()
    if args.experiment in ("exp1-theta", "exp1-alpha"):
        cfg = _is_config_from_args(args)
        if args.experiment == "exp1-theta":
            thetas = parse_grid(args.theta_grid or "0.025:0.2:8")
            alphas: list[float | None] = [args.alpha if args.alpha is not None else 1.5]
        else:
            thetas = [args.theta if args.theta is not None else 0.1]
            alphas = parse_grid(args.alpha_grid or "1.1125:1.9:8")
        points = surface(data, model, _beta_builder, thetas, alphas, cfg)
        write_points(points, args)
        return 0
    if args.experiment == "exp1-pac":
        thetas = parse_grid(args.theta_grid or "0.025:0.2:8")
        alphas = [args.alpha if args.alpha is not None else 1.5]
        points = pac_surface(
            data,
            model,
            _beta_builder,
            thetas,
            alphas,
            kind=args.csd,
            permutations=args.permutations,
            seed=args.seed,
            quad_order=args.quad_order,
            threads=args.threads,
        )
        write_points(points, args, extra={"permutations": args.permutations})
        return 0
    raise ConfigError(f"unknown experiment {args.experiment!r}")


def _add_measure_args(p: argparse.ArgumentParser):
    p.add_argument(
        "--measure",
        choices=("beta", "kingman", "star", "eldon-wakeley", "mixture"),
        default=None,
        help="measure family; defaults to beta when --alpha/--alpha-grid is"
        " given, else kingman",
    )
    p.add_argument("--alpha", type=float, default=None,
                   help="beta-family parameter in (1, 2)")
    p.add_argument("--psi", type=float, default=None,
                   help="eldon-wakeley atom location in (0, 1]")
    p.add_argument("--kingman-mass", type=float, default=0.0)
    p.add_argument("--atom", action="append", default=None, metavar="PSI:MASS")
    p.add_argument("--beta-part", default=None, metavar="ALPHA:MASS")


def _add_output_args(p: argparse.ArgumentParser):
    p.add_argument("--out", default=None, help="output path (default stdout)")
    p.add_argument("--format", choices=("csv", "json"), default="csv")


def _add_is_args(p: argparse.ArgumentParser):
    p.add_argument("--particles", type=int, default=1000)
    p.add_argument("--replicates", type=int, default=8)
    p.add_argument("--proposal", choices=("gt", "sd", "k"), default="k")
    p.add_argument("--resample-ess", type=float, default=0.5,
                   help="resample when ESS falls below this fraction of N")
    p.add_argument("--quad-order", type=int, default=4)
    p.add_argument("--csd-backend", choices=("quadrature", "exact"),
                   default="quadrature")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--threads", type=int, default=None)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="mmcoal",
        description="Coalescent likelihoods with multiple mergers: exact"
        " solving, importance sampling, and PAC surfaces.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="simulate a sample and write it as JSON")
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--loci", type=int, required=True)
    p.add_argument("--theta", type=float, required=True)
    _add_measure_args(p)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("is", help="importance-sampling likelihood surface")
    p.add_argument("--data", required=True)
    p.add_argument("--theta", type=float, default=None)
    p.add_argument("--theta-grid", default=None, metavar="LO:HI:COUNT")
    p.add_argument("--alpha-grid", default=None, metavar="LO:HI:COUNT")
    _add_measure_args(p)
    _add_is_args(p)
    _add_output_args(p)
    p.set_defaults(func=cmd_is)

    p = sub.add_parser("pac", help="product-of-approximate-conditionals surface")
    p.add_argument("--data", required=True)
    p.add_argument("--theta", type=float, default=None)
    p.add_argument("--theta-grid", default=None, metavar="LO:HI:COUNT")
    p.add_argument("--alpha-grid", default=None, metavar="LO:HI:COUNT")
    _add_measure_args(p)
    p.add_argument("--csd", choices=("k", "k2", "sd"), default="k")
    p.add_argument("--permutations", type=int, default=1000)
    p.add_argument("--quad-order", type=int, default=10)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--threads", type=int, default=None)
    p.add_argument("--normalize", action="store_true",
                   help="shift log-likelihoods so the maximum is 0")
    _add_output_args(p)
    p.set_defaults(func=cmd_pac)

    p = sub.add_parser("exact", help="exact likelihood of a small sample")
    p.add_argument("--data", required=True)
    p.add_argument("--theta", type=float, default=None)
    _add_measure_args(p)
    p.add_argument("--n-cap", type=int, default=8)
    p.add_argument("--h-cap", type=int, default=256)
    p.add_argument("--table", default=None, help="write the full table as JSON")
    p.set_defaults(func=cmd_exact)

    p = sub.add_parser("xi-is", help="importance sampling with simultaneous mergers")
    p.add_argument("--data", required=True)
    p.add_argument("--xi", required=True, help="measure JSON or @file")
    p.add_argument("--theta", type=float, default=None)
    p.add_argument("--particles", type=int, default=1000)
    p.add_argument("--replicates", type=int, default=8)
    p.add_argument("--resample-ess", type=float, default=0.5)
    p.add_argument("--quad-order", type=int, default=4)
    p.add_argument("--csd-backend", choices=("quadrature", "exact"),
                   default="quadrature")
    p.add_argument("--csd-permutations", type=int, default=10)
    p.add_argument("--desk-cap", type=int, default=10)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--threads", type=int, default=None,
                   help="accepted for interface symmetry; this engine runs"
                   " single-threaded")
    _add_output_args(p)
    p.set_defaults(func=cmd_xi_is)

    p = sub.add_parser("xi-exact", help="exact likelihood under simultaneous mergers")
    p.add_argument("--data", required=True)
    p.add_argument("--xi", required=True)
    p.add_argument("--theta", type=float, default=None)
    p.add_argument("--n-cap", type=int, default=8)
    p.add_argument("--h-cap", type=int, default=256)
    p.set_defaults(func=cmd_xi_exact)

    p = sub.add_parser("repro", help="scaled reproductions of the study experiments")
    p.add_argument("experiment", choices=("exp1-theta", "exp1-alpha", "exp1-pac"))
    p.add_argument("--theta", type=float, default=None)
    p.add_argument("--alpha", type=float, default=None)
    p.add_argument("--theta-grid", default=None)
    p.add_argument("--alpha-grid", default=None)
    p.add_argument("--particles", type=int, default=3000)
    p.add_argument("--replicates", type=int, default=4)
    p.add_argument("--proposal", choices=("gt", "sd", "k"), default="k")
    p.add_argument("--resample-ess", type=float, default=0.5)
    p.add_argument("--quad-order", type=int, default=4)
    p.add_argument("--csd-backend", choices=("quadrature", "exact"),
                   default="quadrature")
    p.add_argument("--csd", choices=("k", "k2", "sd"), default="k")
    p.add_argument("--permutations", type=int, default=1000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--threads", type=int, default=None)
    _add_output_args(p)
    p.set_defaults(func=cmd_repro)

    return parser


def main(argv=None) -> int:
    import os

    parser = build_parser()
    args = parser.parse_args(argv)
    if getattr(args, "threads", None) is None:
        args.threads = int(os.environ.get("MMCOAL_THREADS", "1"))
    try:
        return args.func(args)
    except (ConfigError, SizeError, ProposalError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
