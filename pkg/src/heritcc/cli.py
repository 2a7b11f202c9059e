"""Command-line interface: simulate / grm / moments / estimate / experiment /
bench / consistency.

Conventions shared by every subcommand:

* the fully resolved configuration (defaults included) is printed before any
  work starts,
* output files are written to a temporary sibling and renamed into place, so
  interrupted runs never leave partial files,
* exit code 0 on success, 1 on runtime failures (message on stderr), 2 on
  usage errors.
"""

from __future__ import annotations

import argparse
import itertools
import json
import math
import os
import sys
import tempfile
from pathlib import Path

from . import __version__
from .estimators import estimate_first_order, estimate_second_order
from .experiments import (
    ExperimentConfig,
    run_consistency_study,
    run_experiment,
    run_timing,
    write_consistency_csv,
    write_records_csv,
    write_summary_csv,
    write_timing_csv,
)
from .grm import SigmaPair, event_en_check, grm_compute, grm_to_csv, save_grm
from .moments import (
    exact_pair_expectation,
    first_order_pair_expectation,
    second_order_pair_expectation,
)
from .simulate import (
    GENOTYPE_KINDS,
    design_from_prevalences,
    load_dataset,
    save_dataset,
    simulate_case_control_study,
)

__all__ = ["main", "entrypoint"]


def _default_threads() -> int:
    env = os.environ.get("HERIT_THREADS")
    if env:
        try:
            return max(1, int(env))
        except ValueError:
            pass
    return os.cpu_count() or 1


def _atomic_write_text(path: Path, text: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp_name = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.")
    try:
        with os.fdopen(fd, "w") as fh:
            fh.write(text)
        os.replace(tmp_name, path)
    except BaseException:
        if os.path.exists(tmp_name):
            os.unlink(tmp_name)
        raise


def _atomic_produce(path: Path, producer) -> None:
    """Run ``producer(tmp_path)`` then rename the result into place."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.parent / f".{path.name}.tmp.{os.getpid()}"
    try:
        producer(tmp)
        os.replace(tmp, path)
    except BaseException:
        if tmp.exists():
            tmp.unlink()
        raise


def _load_config_file(path: str) -> dict[str, str]:
    values: dict[str, str] = {}
    for raw_line in Path(path).read_text().splitlines():
        line = raw_line.strip()
        if not line or line.startswith("#"):
            continue
        key, sep, value = line.partition("=")
        if not sep:
            raise ValueError(f"config line {raw_line!r} is not key=value")
        values[key.strip()] = value.strip()
    return values


def _print_config(name: str, resolved: dict) -> None:
    print(f"[{name}] resolved configuration:")
    for key in sorted(resolved):
        print(f"  {key} = {resolved[key]}")


# config-file key -> (namespace attribute, type)
_EXPERIMENT_CONFIG_SPEC: dict[str, tuple[str, type]] = {
    "eta": ("eta", float),
    "K": ("population_prevalence", float),
    "P": ("study_prevalence", float),
    "n-loci": ("n_loci", int),
    "target-cases": ("target_cases", int),
    "replications": ("replications", int),
    "seed": ("seed", int),
    "methods": ("methods", str),
    "genotype-kind": ("genotype_kind", str),
    "threads": ("threads", int),
}

_EXPERIMENT_FLAG_DESTS = {
    "--eta": "eta", "--K": "population_prevalence", "--P": "study_prevalence",
    "--n-loci": "n_loci", "--target-cases": "target_cases",
    "--replications": "replications", "--seed": "seed", "--methods": "methods",
    "--genotype-kind": "genotype_kind", "--threads": "threads",
}


def _merge_config(args: argparse.Namespace, parser: argparse.ArgumentParser,
                  argv: list[str]) -> None:
    """Fill experiment settings from a key=value config file; explicit flags win."""
    if not getattr(args, "config", None):
        return
    file_values = _load_config_file(args.config)
    unknown = set(file_values) - set(_EXPERIMENT_CONFIG_SPEC)
    if unknown:
        parser.error(f"unknown config keys: {sorted(unknown)}")
    explicit = {
        _EXPERIMENT_FLAG_DESTS[token.split("=", 1)[0]]
        for token in argv
        if token.split("=", 1)[0] in _EXPERIMENT_FLAG_DESTS
    }
    for key, value in file_values.items():
        attr, caster = _EXPERIMENT_CONFIG_SPEC[key]
        if attr in explicit:
            continue
        try:
            setattr(args, attr, caster(value))
        except ValueError:
            parser.error(f"config key {key}: cannot parse {value!r} as {caster.__name__}")


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="heritcc",
        description="Case-control simulation and moment-based heritability estimation",
    )
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="subcommand", required=True)

    sim = sub.add_parser("simulate", help="simulate one case-control study")
    sim.add_argument("--K", dest="population_prevalence", type=float, default=0.1)
    sim.add_argument("--P", dest="study_prevalence", type=float, default=0.5)
    sim.add_argument("--eta", type=float, default=0.5)
    sim.add_argument("--n-loci", type=int, default=10_000)
    sim.add_argument("--target-cases", type=int, default=100)
    sim.add_argument("--seed", type=int, default=0)
    sim.add_argument("--genotype-kind", choices=GENOTYPE_KINDS, default="binomial-2-p")
    sim.add_argument("--out", required=True)

    grm_p = sub.add_parser("grm", help="relationship matrix from a dataset")
    grm_p.add_argument("--in", dest="input", required=True)
    grm_p.add_argument("--out", required=True)
    grm_p.add_argument("--csv", action="store_true", help="write CSV instead of binary")
    grm_p.add_argument("--check-en", action="store_true")
    grm_p.add_argument("--gamma", type=float, default=0.05)

    mom = sub.add_parser("moments", help="pair-moment grid: exact vs approximations")
    mom.add_argument("--a-i", type=float, nargs="+", default=[0.0])
    mom.add_argument("--a-j", type=float, nargs="+", default=[0.0])
    mom.add_argument("--b-ij", type=float, nargs="+", default=[1.0])
    mom.add_argument("--eta", type=float, nargs="+", default=[0.5])
    mom.add_argument("--K", dest="population_prevalence", type=float, nargs="+", default=[0.1])
    mom.add_argument("--P", dest="study_prevalence", type=float, nargs="+", default=[0.5])
    mom.add_argument("--N", dest="n_loci", type=int, nargs="+", default=[10_000])
    mom.add_argument("--out", required=True)

    est = sub.add_parser("estimate", help="estimate heritability from a dataset")
    est.add_argument("--in", dest="input", required=True)
    est.add_argument("--method", choices=("first", "second", "both"), default="both")
    est.add_argument("--out", help="write a JSON report here (stdout otherwise)")

    exp = sub.add_parser("experiment", help="replication study")
    exp.add_argument("--config", help="key=value file; explicit flags win")
    exp.add_argument("--eta", type=float, default=0.5)
    exp.add_argument("--K", dest="population_prevalence", type=float, default=0.1)
    exp.add_argument("--P", dest="study_prevalence", type=float, default=0.5)
    exp.add_argument("--n-loci", type=int, default=10_000)
    exp.add_argument("--target-cases", type=int, default=100)
    exp.add_argument("--replications", type=int, default=200)
    exp.add_argument("--seed", type=int, default=20_260_101)
    exp.add_argument("--methods", default="first,second",
                     help="comma-separated subset of first,second")
    exp.add_argument("--genotype-kind", choices=GENOTYPE_KINDS, default="binomial-2-p")
    exp.add_argument("--threads", type=int, default=None)
    exp.add_argument("--out-dir", required=True)

    bench = sub.add_parser("bench", help="timing grid over study and locus counts")
    bench.add_argument("--n-values", type=int, nargs="+", default=[100, 1000])
    bench.add_argument("--N-values", dest="n_loci_values", type=int, nargs="+",
                       default=[1000, 10_000])
    bench.add_argument("--methods", default="first,second")
    bench.add_argument("--seed", type=int, default=0)
    bench.add_argument("--out", required=True)

    cons = sub.add_parser("consistency", help="estimator error along n/N growth path")
    cons.add_argument("--eta", type=float, default=0.5)
    cons.add_argument("--K", dest="population_prevalence", type=float, default=0.1)
    cons.add_argument("--P", dest="study_prevalence", type=float, default=0.5)
    cons.add_argument("--ratio-a", type=float, default=0.02)
    cons.add_argument("--N-values", dest="n_loci_values", type=int, nargs="+",
                      default=[2000, 4000, 8000])
    cons.add_argument("--replications", type=int, default=100)
    cons.add_argument("--seed", type=int, default=1)
    cons.add_argument("--genotype-kind", choices=GENOTYPE_KINDS, default="standard-normal")
    cons.add_argument("--threads", type=int, default=None)
    cons.add_argument("--out", required=True)

    return parser


def _validate_prevalences(parser: argparse.ArgumentParser, k: float, p: float) -> None:
    """Flag-level validation: bad prevalences are usage errors (exit 2)."""
    try:
        design_from_prevalences(k, p)
    except ValueError as exc:
        parser.error(str(exc))


def _cmd_simulate(args: argparse.Namespace, parser: argparse.ArgumentParser) -> int:
    _validate_prevalences(parser, args.population_prevalence, args.study_prevalence)
    if args.eta < 0.0 or args.eta > 1.0:
        parser.error(f"--eta must lie in [0, 1], got {args.eta}")
    resolved = {
        "K": args.population_prevalence, "P": args.study_prevalence,
        "eta": args.eta, "n_loci": args.n_loci, "target_cases": args.target_cases,
        "seed": args.seed, "genotype_kind": args.genotype_kind, "out": args.out,
    }
    _print_config("simulate", resolved)
    study = simulate_case_control_study(
        heritability=args.eta,
        population_prevalence=args.population_prevalence,
        study_prevalence=args.study_prevalence,
        n_loci=args.n_loci,
        target_cases=args.target_cases,
        seed=args.seed,
        genotype_kind=args.genotype_kind,
    )
    _atomic_produce(Path(args.out), lambda tmp: save_dataset(tmp, study))
    sample = study.sample
    print(f"wrote {args.out}: n={sample.y.shape[0]} "
          f"(cases={sample.n_cases}, controls={sample.n_controls})")
    return 0


def _cmd_grm(args: argparse.Namespace) -> int:
    resolved = {"in": args.input, "out": args.out, "csv": args.csv,
                "check_en": args.check_en, "gamma": args.gamma}
    _print_config("grm", resolved)
    data = load_dataset(args.input)
    g = grm_compute(data.sample.z_study)
    if args.csv:
        _atomic_produce(Path(args.out), lambda tmp: grm_to_csv(tmp, g))
    else:
        _atomic_produce(Path(args.out), lambda tmp: save_grm(tmp, g))
    print(f"wrote {args.out}: n={g.n_individuals}, n_loci={g.n_loci}")
    if args.check_en:
        res = event_en_check(g, args.gamma)
        print(f"uniform-smallness check: holds={res.holds} "
              f"sup_diag_dev={res.sup_diag_dev:.6g} sup_offdiag={res.sup_offdiag:.6g} "
              f"eps={res.eps_n:.6g}")
    return 0


def _cmd_moments(args: argparse.Namespace, parser: argparse.ArgumentParser) -> int:
    for k in args.population_prevalence:
        for p in args.study_prevalence:
            _validate_prevalences(parser, k, p)
    resolved = {
        "a_i": args.a_i, "a_j": args.a_j, "b_ij": args.b_ij, "eta": args.eta,
        "K": args.population_prevalence, "P": args.study_prevalence,
        "N": args.n_loci, "out": args.out,
    }
    _print_config("moments", resolved)
    lines = ["a_i,a_j,b_ij,eta,K,P,n_loci,exact,first_order,second_order"]
    grid = itertools.product(
        args.a_i, args.a_j, args.b_ij, args.eta,
        args.population_prevalence, args.study_prevalence, args.n_loci,
    )
    for a_i, a_j, b_ij, eta, k, p, n_loci in grid:
        design = design_from_prevalences(k, p)
        sp = SigmaPair(a_i=a_i, a_j=a_j, b_ij=b_ij)
        exact = exact_pair_expectation(sp, design, eta, n_loci)
        first = first_order_pair_expectation(b_ij / math.sqrt(n_loci), design, eta)
        second = second_order_pair_expectation(sp, design, eta, n_loci)
        lines.append(",".join([
            repr(a_i), repr(a_j), repr(b_ij), repr(eta), repr(k), repr(p),
            str(n_loci), repr(exact), repr(first), repr(second),
        ]))
    _atomic_write_text(Path(args.out), "\n".join(lines) + "\n")
    print(f"wrote {args.out}: {len(lines) - 1} grid points")
    return 0


def _cmd_estimate(args: argparse.Namespace) -> int:
    resolved = {"in": args.input, "method": args.method, "out": args.out}
    _print_config("estimate", resolved)
    data = load_dataset(args.input)
    g = grm_compute(data.sample.z_study)
    reports = []
    if args.method in ("first", "both"):
        reports.append(estimate_first_order(data.sample, g, data.design))
    if args.method in ("second", "both"):
        reports.append(estimate_second_order(data.sample, g, data.design, data.n_loci))
    payload = {
        "input": str(args.input),
        "n": data.sample.y.shape[0],
        "n_loci": data.n_loci,
        "reports": [
            {
                "method": r.method,
                "eta_hat": r.eta_hat,
                "raw_ratio": r.raw_ratio,
                "iterations": r.iterations,
                "converged": r.converged,
                "objective_value": r.objective_value,
                "wall_time": r.wall_time,
            }
            for r in reports
        ],
    }
    text = json.dumps(payload, indent=2, sort_keys=True)
    if args.out:
        _atomic_write_text(Path(args.out), text + "\n")
        print(f"wrote {args.out}")
    else:
        print(text)
    for r in reports:
        print(f"{r.method}: eta_hat={r.eta_hat:.6f} (wall {r.wall_time:.3f}s)")
    return 0


def _cmd_experiment(args: argparse.Namespace, parser: argparse.ArgumentParser,
                    argv: list[str]) -> int:
    _merge_config(args, parser, argv)
    methods = tuple(m.strip() for m in args.methods.split(",") if m.strip())
    threads = args.threads if args.threads else _default_threads()
    try:
        cfg = ExperimentConfig(
            eta_star=args.eta,
            population_prevalence=args.population_prevalence,
            study_prevalence=args.study_prevalence,
            n_loci=args.n_loci,
            target_cases=args.target_cases,
            replications=args.replications,
            seed=args.seed,
            methods=methods,
            genotype_kind=args.genotype_kind,
        )
    except ValueError as exc:
        parser.error(str(exc))
    resolved = dict(cfg.as_dict())
    resolved["threads"] = threads
    resolved["out_dir"] = args.out_dir
    _print_config("experiment", resolved)
    result = run_experiment(cfg, workers=threads)
    out_dir = Path(args.out_dir)
    _atomic_produce(out_dir / "records.csv", lambda tmp: write_records_csv(tmp, result))
    _atomic_produce(out_dir / "summary.csv", lambda tmp: write_summary_csv(tmp, result))
    for method, summary in result.summaries.items():
        print(f"{method}: mean={summary.mean:.4f} sd={summary.sd:.4f} "
              f"bias={summary.bias:+.4f} (n_ok={summary.n_ok})")
    print(f"wrote {out_dir/'records.csv'} and {out_dir/'summary.csv'}")
    return 0


def _cmd_bench(args: argparse.Namespace) -> int:
    methods = tuple(m.strip() for m in args.methods.split(",") if m.strip())
    resolved = {"n_values": args.n_values, "N_values": args.n_loci_values,
                "methods": methods, "seed": args.seed, "out": args.out}
    _print_config("bench", resolved)
    rows = run_timing(args.n_values, args.n_loci_values, methods, seed=args.seed)
    meta = {"seed": args.seed, "methods": ",".join(methods)}
    _atomic_produce(Path(args.out), lambda tmp: write_timing_csv(tmp, rows, meta))
    for row in rows:
        print(f"n={row.n} n_loci={row.n_loci} {row.method}: {row.seconds:.3f}s")
    print(f"wrote {args.out}")
    return 0


def _cmd_consistency(args: argparse.Namespace, parser: argparse.ArgumentParser) -> int:
    _validate_prevalences(parser, args.population_prevalence, args.study_prevalence)
    threads = args.threads if args.threads else _default_threads()
    resolved = {
        "eta": args.eta, "K": args.population_prevalence, "P": args.study_prevalence,
        "ratio_a": args.ratio_a, "N_values": args.n_loci_values,
        "replications": args.replications, "seed": args.seed,
        "genotype_kind": args.genotype_kind, "threads": threads, "out": args.out,
    }
    _print_config("consistency", resolved)
    rows = run_consistency_study(
        eta_star=args.eta,
        population_prevalence=args.population_prevalence,
        study_prevalence=args.study_prevalence,
        ratio_a=args.ratio_a,
        n_loci_values=args.n_loci_values,
        reps=args.replications,
        seed=args.seed,
        genotype_kind=args.genotype_kind,
        workers=threads,
    )
    meta = {k: resolved[k] for k in ("eta", "K", "P", "ratio_a", "replications", "seed")}
    _atomic_produce(Path(args.out), lambda tmp: write_consistency_csv(tmp, rows, meta))
    for row in rows:
        print(f"n_loci={row.n_loci} n~{row.target_n}: rmse={row.rmse:.4f} sd={row.sd:.4f}")
    print(f"wrote {args.out}")
    return 0


def main(argv: list[str] | None = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        if args.subcommand == "simulate":
            return _cmd_simulate(args, parser)
        if args.subcommand == "grm":
            return _cmd_grm(args)
        if args.subcommand == "moments":
            return _cmd_moments(args, parser)
        if args.subcommand == "estimate":
            return _cmd_estimate(args)
        if args.subcommand == "experiment":
            return _cmd_experiment(args, parser, argv)
        if args.subcommand == "bench":
            return _cmd_bench(args)
        if args.subcommand == "consistency":
            return _cmd_consistency(args, parser)
        raise AssertionError("unreachable")  # pragma: no cover
    except SystemExit as exc:  # parser.error inside a subcommand
        return int(exc.code or 0)
    except (OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


def entrypoint() -> None:  # console-script shim
    sys.exit(main())
