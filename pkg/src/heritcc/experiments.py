"""Monte Carlo experiment harness: replication studies, timing grids, and
consistency trends.

Replications draw from substreams indexed by replication number, so results
are identical no matter how work is scheduled; records are sorted by index
before any output is written. CSV outputs carry the full configuration as
comment lines and round-trip exactly (floats serialized with repr).
"""

from __future__ import annotations

import concurrent.futures
import math
import statistics
import time
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .estimators import estimate_first_order, estimate_second_order
from .grm import event_en_check, grm_compute, mean_square_offdiagonal
from .numerics import RandomSource
from .simulate import (
    GENOTYPE_KINDS,
    AscertainedSample,
    design_from_prevalences,
    make_distribution,
    sample_genotype_matrix,
    simulate_case_control_study,
    standardize,
)

__all__ = [
    "ExperimentConfig",
    "ReplicationRecord",
    "MethodSummary",
    "ExperimentResult",
    "run_experiment",
    "run_timing",
    "run_consistency_study",
    "write_records_csv",
    "read_records_csv",
    "write_summary_csv",
    "write_timing_csv",
    "write_consistency_csv",
    "summarize_records",
]

METHODS = ("first", "second")
_EN_GAMMA = 0.05


@dataclass(frozen=True)
class ExperimentConfig:
    """One replication study: generative parameters plus execution knobs."""

    eta_star: float = 0.5
    population_prevalence: float = 0.1
    study_prevalence: float = 0.5
    n_loci: int = 10_000
    target_cases: int = 100
    replications: int = 200
    seed: int = 20_260_101
    methods: tuple[str, ...] = ("first", "second")
    genotype_kind: str = "binomial-2-p"

    def __post_init__(self) -> None:
        if self.replications < 1:
            raise ValueError("replications must be >= 1")
        if self.population_prevalence > self.study_prevalence:
            raise ValueError("population prevalence must not exceed study prevalence")
        unknown = set(self.methods) - set(METHODS)
        if unknown:
            raise ValueError(f"unknown methods {sorted(unknown)}; valid: {METHODS}")
        if self.genotype_kind not in GENOTYPE_KINDS:
            raise ValueError(f"unknown genotype kind {self.genotype_kind!r}")

    def as_dict(self) -> dict:
        return {
            "eta_star": self.eta_star,
            "population_prevalence": self.population_prevalence,
            "study_prevalence": self.study_prevalence,
            "n_loci": self.n_loci,
            "target_cases": self.target_cases,
            "replications": self.replications,
            "seed": self.seed,
            "methods": ",".join(self.methods),
            "genotype_kind": self.genotype_kind,
        }


@dataclass(frozen=True)
class ReplicationRecord:
    rep_index: int
    realized_n: int
    realized_cases: int
    eta_hat: dict[str, float]
    wall_time: dict[str, float]
    en_holds: bool
    error: str | None = None


def _replication_seed_stream(seed: int, rep_index: int) -> int:
    # replication r of experiment seed s always simulates from substream
    # (s, r); the study pipeline takes a scalar seed, so fold the pair
    # through a SeedSequence-generated integer
    ss = np.random.SeedSequence(seed, spawn_key=(rep_index,))
    return int(ss.generate_state(1, np.uint64)[0])


def run_replication(cfg: ExperimentConfig, rep_index: int) -> ReplicationRecord:
    """Simulate one study and run the configured estimators on it."""
    rep_seed = _replication_seed_stream(cfg.seed, rep_index)
    try:
        study = simulate_case_control_study(
            heritability=cfg.eta_star,
            population_prevalence=cfg.population_prevalence,
            study_prevalence=cfg.study_prevalence,
            n_loci=cfg.n_loci,
            target_cases=cfg.target_cases,
            seed=rep_seed,
            genotype_kind=cfg.genotype_kind,
        )
        sample = study.sample
        g = grm_compute(sample.z_study)
        eta_hat: dict[str, float] = {}
        wall: dict[str, float] = {}
        if "first" in cfg.methods:
            rep = estimate_first_order(sample, g, study.design)
            eta_hat["first"] = rep.eta_hat
            wall["first"] = rep.wall_time
        if "second" in cfg.methods:
            rep = estimate_second_order(sample, g, study.design, cfg.n_loci)
            eta_hat["second"] = rep.eta_hat
            wall["second"] = rep.wall_time
        return ReplicationRecord(
            rep_index=rep_index,
            realized_n=int(sample.y.shape[0]),
            realized_cases=sample.n_cases,
            eta_hat=eta_hat,
            wall_time=wall,
            en_holds=event_en_check(g, _EN_GAMMA).holds,
        )
    except ValueError as exc:  # estimator/pipeline failure is recorded, not fatal
        return ReplicationRecord(
            rep_index=rep_index,
            realized_n=0,
            realized_cases=0,
            eta_hat={},
            wall_time={},
            en_holds=False,
            error=str(exc),
        )


@dataclass(frozen=True)
class MethodSummary:
    method: str
    n_ok: int
    mean: float
    sd: float
    bias: float
    q25: float
    median: float
    q75: float


@dataclass(frozen=True)
class ExperimentResult:
    config: ExperimentConfig
    records: list[ReplicationRecord]
    summaries: dict[str, MethodSummary]


def summarize_records(cfg: ExperimentConfig,
                      records: list[ReplicationRecord]) -> dict[str, MethodSummary]:
    summaries = {}
    for method in cfg.methods:
        values = [r.eta_hat[method] for r in records if method in r.eta_hat]
        if not values:
            continue
        q25, median, q75 = np.percentile(values, [25, 50, 75])
        summaries[method] = MethodSummary(
            method=method,
            n_ok=len(values),
            mean=float(np.mean(values)),
            sd=float(np.std(values, ddof=1)) if len(values) > 1 else 0.0,
            bias=float(np.mean(values) - cfg.eta_star),
            q25=float(q25),
            median=float(median),
            q75=float(q75),
        )
    return summaries


def run_experiment(cfg: ExperimentConfig, workers: int = 1) -> ExperimentResult:
    """Execute all replications on independent substreams.

    ``workers > 1`` fans replications out to a process pool; scheduling never
    changes the records because each replication derives its own stream.
    """
    indices = range(cfg.replications)
    if workers > 1 and cfg.replications > 1:
        with concurrent.futures.ProcessPoolExecutor(max_workers=workers) as pool:
            records = list(pool.map(_pool_entry, [(cfg, i) for i in indices]))
    else:
        records = [run_replication(cfg, i) for i in indices]
    records.sort(key=lambda r: r.rep_index)
    return ExperimentResult(cfg, records, summarize_records(cfg, records))


def _pool_entry(args: tuple[ExperimentConfig, int]) -> ReplicationRecord:
    return run_replication(*args)


# ---------------------------------------------------------------------------
# Timing study
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class TimingRow:
    n: int
    n_loci: int
    method: str
    seconds: float


def _timing_inputs(n: int, n_loci: int, study_prevalence: float, seed: int):
    """Synthesize estimator inputs of exactly the requested size."""
    rs = RandomSource(seed)
    dist = make_distribution("binomial-2-p", n_loci, rs.spawn(0))
    raw = sample_genotype_matrix(dist, n, n_loci, rs.spawn(1))
    y = rs.spawn(2).generator.random(n) < study_prevalence
    w = (y.astype(np.float64) - study_prevalence) / math.sqrt(
        study_prevalence * (1.0 - study_prevalence)
    )
    sample = AscertainedSample(
        indices=np.arange(n), y=y, w=w,
        n_cases=int(y.sum()), n_controls=int(n - y.sum()),
    )
    return raw, sample


def _run_estimation(raw, sample, design, n_loci: int, method: str) -> None:
    z = standardize(raw)
    g = grm_compute(z)
    if method == "first":
        estimate_first_order(sample, g, design)
    else:
        estimate_second_order(sample, g, design, n_loci)


def run_timing(n_values: list[int], n_loci_values: list[int],
               methods: tuple[str, ...] = ("first", "second"),
               seed: int = 0, study_prevalence: float = 0.5,
               population_prevalence: float = 0.1,
               repeats: int = 3) -> list[TimingRow]:
    """Median-of-``repeats`` wall time per grid point, one warm-up run each.

    Timed work: standardize + relationship matrix + estimator, matching the
    cost of producing one estimate from raw study genotypes.
    """
    if not n_values or not n_loci_values:
        raise ValueError("timing grids must be nonempty")
    design = design_from_prevalences(population_prevalence, study_prevalence)
    rows = []
    for n in n_values:
        for n_loci in n_loci_values:
            raw, sample = _timing_inputs(n, n_loci, study_prevalence, seed)
            for method in methods:
                _run_estimation(raw.values, sample, design, n_loci, method)  # warm-up
                times = []
                for _ in range(repeats):
                    t0 = time.perf_counter()
                    _run_estimation(raw.values, sample, design, n_loci, method)
                    times.append(time.perf_counter() - t0)
                rows.append(TimingRow(n, n_loci, method, statistics.median(times)))
    return rows


# ---------------------------------------------------------------------------
# Consistency trend study
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ConsistencyRow:
    n_loci: int
    target_n: int
    reps: int
    mean: float
    sd: float
    rmse: float
    mean_sq_offdiag: float
    ratio_deviation: float


def _consistency_replication(args: tuple) -> tuple[float | None, float, float]:
    (eta_star, population_prevalence, study_prevalence, n_loci, target_cases,
     seed, rep_index, genotype_kind) = args
    rep_seed = _replication_seed_stream(seed, rep_index)
    try:
        study = simulate_case_control_study(
            heritability=eta_star, population_prevalence=population_prevalence,
            study_prevalence=study_prevalence, n_loci=n_loci,
            target_cases=target_cases, seed=rep_seed, genotype_kind=genotype_kind,
        )
        g = grm_compute(study.sample.z_study)
        estimate = estimate_first_order(study.sample, g, study.design).eta_hat
        stat = mean_square_offdiagonal(g)
        return estimate, stat, abs(stat - g.n_individuals / n_loci)
    except ValueError:
        return None, math.nan, math.nan


def run_consistency_study(eta_star: float, population_prevalence: float,
                          study_prevalence: float, ratio_a: float,
                          n_loci_values: list[int], reps: int, seed: int,
                          genotype_kind: str = "standard-normal",
                          workers: int = 1) -> list[ConsistencyRow]:
    """Error of the closed-form estimator along a proportional-growth path.

    For each locus count the study size targets ratio_a * n_loci; reports the
    estimator RMSE and the off-diagonal mean-square statistic against its
    n/n_loci reference. Continuous genotypes by default: the smallest studies
    on the path make constant count-like columns likely.
    """
    rows = []
    for n_loci in n_loci_values:
        target_n = round(ratio_a * n_loci)
        target_cases = max(2, round(target_n * study_prevalence))
        tasks = [
            (eta_star, population_prevalence, study_prevalence, n_loci,
             target_cases, seed + n_loci, rep, genotype_kind)
            for rep in range(reps)
        ]
        if workers > 1 and reps > 1:
            with concurrent.futures.ProcessPoolExecutor(max_workers=workers) as pool:
                outcomes = list(pool.map(_consistency_replication, tasks))
        else:
            outcomes = [_consistency_replication(t) for t in tasks]
        estimates = np.array([e for e, _, _ in outcomes if e is not None])
        stats = np.array([s for e, s, _ in outcomes if e is not None])
        deviations = np.array([d for e, _, d in outcomes if e is not None])
        errors = estimates - eta_star
        rows.append(ConsistencyRow(
            n_loci=n_loci,
            target_n=target_n,
            reps=int(estimates.shape[0]),
            mean=float(estimates.mean()),
            sd=float(estimates.std(ddof=1)),
            rmse=float(np.sqrt(np.mean(errors**2))),
            mean_sq_offdiag=float(stats.mean()),
            ratio_deviation=float(deviations.mean()),
        ))
    return rows


# ---------------------------------------------------------------------------
# CSV emission: deterministic bytes, full config echo in comments
# ---------------------------------------------------------------------------


def _config_comment_lines(cfg_dict: dict) -> list[str]:
    return [f"# {key}={cfg_dict[key]}" for key in sorted(cfg_dict)]


def write_records_csv(path: str | Path, result: ExperimentResult) -> None:
    cfg = result.config
    lines = _config_comment_lines(cfg.as_dict())
    method_cols = [f"eta_hat_{m}" for m in cfg.methods]
    lines.append(",".join(["rep_index", "realized_n", "realized_cases",
                           *method_cols, "en_holds", "error"]))
    for r in result.records:
        etas = [repr(r.eta_hat[m]) if m in r.eta_hat else "" for m in cfg.methods]
        lines.append(",".join([
            str(r.rep_index), str(r.realized_n), str(r.realized_cases),
            *etas, "1" if r.en_holds else "0",
            r.error.replace(",", ";") if r.error else "",
        ]))
    Path(path).write_text("\n".join(lines) + "\n")


def read_records_csv(path: str | Path) -> tuple[dict, list[ReplicationRecord]]:
    """Reconstruct records exactly (floats round-trip through repr)."""
    config: dict[str, str] = {}
    records = []
    header: list[str] | None = None
    for line in Path(path).read_text().splitlines():
        if line.startswith("#"):
            key, _, value = line[1:].strip().partition("=")
            config[key] = value
            continue
        if header is None:
            header = line.split(",")
            continue
        parts = line.split(",")
        row = dict(zip(header, parts))
        eta_hat = {}
        wall: dict[str, float] = {}
        for col, value in row.items():
            if col.startswith("eta_hat_") and value:
                eta_hat[col.removeprefix("eta_hat_")] = float(value)
        records.append(ReplicationRecord(
            rep_index=int(row["rep_index"]),
            realized_n=int(row["realized_n"]),
            realized_cases=int(row["realized_cases"]),
            eta_hat=eta_hat,
            wall_time=wall,
            en_holds=row["en_holds"] == "1",
            error=row["error"] or None,
        ))
    return config, records


def write_summary_csv(path: str | Path, result: ExperimentResult) -> None:
    lines = _config_comment_lines(result.config.as_dict())
    lines.append("method,n_ok,mean,sd,bias,q25,median,q75")
    for method in result.config.methods:
        if method not in result.summaries:
            continue
        s = result.summaries[method]
        lines.append(",".join([
            s.method, str(s.n_ok), repr(s.mean), repr(s.sd), repr(s.bias),
            repr(s.q25), repr(s.median), repr(s.q75),
        ]))
    Path(path).write_text("\n".join(lines) + "\n")


def write_timing_csv(path: str | Path, rows: list[TimingRow], meta: dict | None = None) -> None:
    lines = _config_comment_lines(meta or {})
    lines.append("n,n_loci,method,seconds")
    for row in rows:
        lines.append(f"{row.n},{row.n_loci},{row.method},{row.seconds!r}")
    Path(path).write_text("\n".join(lines) + "\n")


def write_consistency_csv(path: str | Path, rows: list[ConsistencyRow],
                          meta: dict | None = None) -> None:
    lines = _config_comment_lines(meta or {})
    lines.append("n_loci,target_n,reps,mean,sd,rmse,mean_sq_offdiag,ratio_deviation")
    for row in rows:
        lines.append(",".join([
            str(row.n_loci), str(row.target_n), str(row.reps), repr(row.mean),
            repr(row.sd), repr(row.rmse), repr(row.mean_sq_offdiag),
            repr(row.ratio_deviation),
        ]))
    Path(path).write_text("\n".join(lines) + "\n")
