"""Population simulation under the liability-threshold model and case-control
ascertainment.

The generative protocol: draw a genotype-like matrix with independent columns,
center and scale each column empirically, mix a per-locus genetic effect
vector into a latent liability, threshold the liability into a binary
phenotype, then select every case and each control independently with the
probability that makes the expected study prevalence equal to the design
value.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .numerics import RandomSource, std_normal_quantile

__all__ = [
    "GenotypeMatrix",
    "GenotypeDistribution",
    "StandardizedGenotypes",
    "StudyDesign",
    "LiabilityParams",
    "AscertainedSample",
    "StudyData",
    "make_distribution",
    "sample_genotype_matrix",
    "standardize",
    "design_from_prevalences",
    "simulate_population",
    "population_sample",
    "ascertain",
    "attach_study_genotypes",
    "simulate_case_control_study",
    "save_dataset",
    "load_dataset",
    "export_matrix_csv",
]

GENOTYPE_KINDS = ("binomial-2-p", "standard-normal", "rademacher")

# Substream layout inside one dataset. Fixed so that results do not depend on
# execution details such as block size.
_STREAM_GENOTYPES = 0
_STREAM_EFFECTS = 1
_STREAM_SELECTION = 2
_STREAM_FREQS = 3

_BLOCK_ROWS = 2048


@dataclass(frozen=True)
class GenotypeDistribution:
    """Per-locus distribution of the raw genotype-like entries.

    ``binomial-2-p`` draws allele counts in {0, 1, 2} with per-locus
    frequencies ``allele_freqs``; the other kinds need no parameters. All
    three have sub-exponential tails and per-locus variance bounded away from
    zero and infinity.
    """

    kind: str
    allele_freqs: np.ndarray | None = None

    def __post_init__(self) -> None:
        if self.kind not in GENOTYPE_KINDS:
            raise ValueError(f"unknown genotype kind {self.kind!r}, expected one of {GENOTYPE_KINDS}")
        if self.kind == "binomial-2-p":
            if self.allele_freqs is None:
                raise ValueError("binomial-2-p needs per-locus allele frequencies")
            freqs = np.asarray(self.allele_freqs, dtype=np.float64)
            if freqs.ndim != 1 or not np.all((freqs > 0.0) & (freqs < 1.0)):
                raise ValueError("allele frequencies must be a 1-d vector strictly inside (0, 1)")

    @property
    def n_loci(self) -> int | None:
        return None if self.allele_freqs is None else int(self.allele_freqs.shape[0])


def make_distribution(kind: str, n_loci: int, rs: RandomSource,
                      freq_low: float = 0.05, freq_high: float = 0.95) -> GenotypeDistribution:
    """Build a genotype distribution, drawing per-locus frequencies once.

    Frequencies are uniform on [freq_low, freq_high] so per-locus variances
    stay bounded away from 0.
    """
    if kind == "binomial-2-p":
        freqs = rs.generator.uniform(freq_low, freq_high, size=n_loci)
        return GenotypeDistribution(kind, freqs)
    return GenotypeDistribution(kind)


@dataclass(frozen=True)
class GenotypeMatrix:
    """Raw per-individual, per-locus values before standardization."""

    values: np.ndarray

    def __post_init__(self) -> None:
        if self.values.ndim != 2:
            raise ValueError("genotype matrix must be 2-d")

    @property
    def n_individuals(self) -> int:
        return int(self.values.shape[0])

    @property
    def n_loci(self) -> int:
        return int(self.values.shape[1])


def _sample_rows(dist: GenotypeDistribution, n_rows: int, n_loci: int,
                 gen: np.random.Generator) -> np.ndarray:
    """Draw ``n_rows`` individuals from one sequential genotype stream.

    Each kind consumes uniforms (or normals) row-major, so concatenated
    blocks reproduce a single large draw exactly.
    """
    if dist.kind == "binomial-2-p":
        p = dist.allele_freqs
        q0 = (1.0 - p) ** 2             # P(count = 0)
        q01 = q0 + 2.0 * p * (1.0 - p)  # P(count <= 1)
        u = gen.random((n_rows, n_loci))
        return (u >= q0).view(np.int8) + (u >= q01).view(np.int8)
    if dist.kind == "standard-normal":
        return gen.standard_normal((n_rows, n_loci)).astype(np.float32)
    if dist.kind == "rademacher":
        u = gen.random((n_rows, n_loci))
        out = (u < 0.5).view(np.int8)
        return (2 * out - 1).astype(np.int8)
    raise AssertionError("unreachable")  # pragma: no cover


def sample_genotype_matrix(dist: GenotypeDistribution, n_individuals: int,
                           n_loci: int, rs: RandomSource) -> GenotypeMatrix:
    """Draw a full genotype matrix with i.i.d. entries per column."""
    if dist.kind == "binomial-2-p" and dist.n_loci != n_loci:
        raise ValueError(f"distribution has {dist.n_loci} loci, requested {n_loci}")
    return GenotypeMatrix(_sample_rows(dist, n_individuals, n_loci, rs.generator))


@dataclass(frozen=True)
class StandardizedGenotypes:
    """Empirically centered and scaled genotypes.

    Every column satisfies sum(z) = 0 and sum(z^2) = n up to rounding, with
    the scale computed as the 1/n-normalized standard deviation.
    """

    z: np.ndarray
    col_means: np.ndarray
    col_sds: np.ndarray

    @property
    def n_individuals(self) -> int:
        return int(self.z.shape[0])

    @property
    def n_loci(self) -> int:
        return int(self.z.shape[1])


def standardize(a: GenotypeMatrix | np.ndarray) -> StandardizedGenotypes:
    """Center and scale each column to empirical mean 0 and mean square 1.

    Raises:
        ValueError: naming the first offending column if any column has zero
            empirical variance.
    """
    values = a.values if isinstance(a, GenotypeMatrix) else np.asarray(a)
    work = values.astype(np.float64, copy=False)
    means = work.mean(axis=0)
    centered = work - means
    sds = np.sqrt(np.mean(centered * centered, axis=0))
    zero = np.flatnonzero(sds == 0.0)
    if zero.size:
        raise ValueError(f"column {int(zero[0])} has zero empirical variance")
    return StandardizedGenotypes(centered / sds, means, sds)


@dataclass(frozen=True)
class StudyDesign:
    """Prevalences, liability threshold, and selection probabilities.

    ``p_case`` is 1 (every case joins the study); ``p_control`` is the unique
    value making the expected study prevalence equal to ``study_prevalence``.
    """

    population_prevalence: float
    study_prevalence: float
    threshold: float
    p_case: float
    p_control: float


def design_from_prevalences(population_prevalence: float, study_prevalence: float) -> StudyDesign:
    """Build a study design from the population and study prevalences.

    Requires 0 < population_prevalence <= study_prevalence < 1; otherwise the
    control selection probability would leave (0, 1].
    """
    k, p = population_prevalence, study_prevalence
    if not (0.0 < k < 1.0) or not (0.0 < p < 1.0):
        raise ValueError(f"prevalences must lie in (0, 1), got K={k}, P={p}")
    if k > p:
        raise ValueError(
            f"population prevalence {k} exceeds study prevalence {p}; "
            "control selection probability would exceed 1"
        )
    threshold = std_normal_quantile(1.0 - k)
    p_control = k * (1.0 - p) / (p * (1.0 - k))
    return StudyDesign(k, p, threshold, 1.0, p_control)


@dataclass(frozen=True)
class LiabilityParams:
    """Variance split of the latent liability: heritability and total variance.

    The total variance is fixed at 1; a different scale is absorbed into the
    threshold instead.
    """

    heritability: float
    total_variance: float = 1.0

    def __post_init__(self) -> None:
        if not (0.0 <= self.heritability <= 1.0):
            raise ValueError(f"heritability must lie in [0, 1], got {self.heritability}")
        if self.total_variance != 1.0:
            raise ValueError("total liability variance is fixed at 1")


def simulate_population(z: StandardizedGenotypes, lp: LiabilityParams,
                        design: StudyDesign, rs: RandomSource) -> tuple[np.ndarray, np.ndarray]:
    """Draw liabilities and binary phenotypes for every row of ``z``.

    The genetic effect vector has per-locus variance heritability/n_loci and
    the environmental part variance 1 - heritability, so the liability has
    unit variance on average.
    """
    n, n_loci = z.n_individuals, z.n_loci
    gen = rs.generator
    u = gen.standard_normal(n_loci) * math.sqrt(lp.heritability / n_loci)
    e = gen.standard_normal(n) * math.sqrt(1.0 - lp.heritability)
    liabilities = z.z @ u + e
    y = liabilities > design.threshold
    return liabilities, y


def population_sample(dist: GenotypeDistribution, n_population: int, n_loci: int,
                      lp: LiabilityParams, design: StudyDesign, rs: RandomSource,
                      block_rows: int = _BLOCK_ROWS) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Blocked equivalent of sampling genotypes, standardizing, and running
    :func:`simulate_population`, without materializing the standardized matrix.

    Returns ``(raw_genotypes, liabilities, phenotypes)``. The raw matrix is
    kept in its compact dtype (int8 for count-like kinds); callers slice study
    rows out of it. Results match the dense route to float rounding because
    the genotype stream is consumed in the same row-major order regardless of
    block size.
    """
    gen_geno = rs.spawn(_STREAM_GENOTYPES).generator
    a = np.empty((n_population, n_loci),
                 dtype=np.float32 if dist.kind == "standard-normal" else np.int8)
    col_sum = np.zeros(n_loci)
    col_sumsq = np.zeros(n_loci)
    for lo in range(0, n_population, block_rows):
        hi = min(lo + block_rows, n_population)
        blk = _sample_rows(dist, hi - lo, n_loci, gen_geno)
        a[lo:hi] = blk
        work = blk.astype(np.float64)
        col_sum += work.sum(axis=0)
        col_sumsq += np.einsum("ij,ij->j", work, work)
    means = col_sum / n_population
    variances = col_sumsq / n_population - means * means
    zero = np.flatnonzero(variances <= 0.0)
    if zero.size:
        raise ValueError(f"column {int(zero[0])} has zero empirical variance")
    sds = np.sqrt(variances)

    gen_fx = rs.spawn(_STREAM_EFFECTS).generator
    u = gen_fx.standard_normal(n_loci) * math.sqrt(lp.heritability / n_loci)
    e = gen_fx.standard_normal(n_population) * math.sqrt(1.0 - lp.heritability)
    v = u / sds
    offset = float(means @ v)
    liabilities = np.empty(n_population)
    for lo in range(0, n_population, block_rows):
        hi = min(lo + block_rows, n_population)
        liabilities[lo:hi] = a[lo:hi].astype(np.float64) @ v - offset
    liabilities += e
    y = liabilities > design.threshold
    return a, liabilities, y


@dataclass(frozen=True)
class AscertainedSample:
    """Study membership and centered phenotypes after case-control selection.

    ``w`` is the phenotype centered with the design study prevalence, not the
    realized one. ``z_study`` is standardized over the study rows and is
    attached by the pipeline (selection itself needs no genotypes).
    """

    indices: np.ndarray
    y: np.ndarray
    w: np.ndarray
    n_cases: int
    n_controls: int
    z_study: StandardizedGenotypes | None = None


def _centered_w(y: np.ndarray, design: StudyDesign) -> np.ndarray:
    p = design.study_prevalence
    return (y.astype(np.float64) - p) / math.sqrt(p * (1.0 - p))


def ascertain(y: np.ndarray, design: StudyDesign, rs: RandomSource) -> AscertainedSample:
    """Select the study: every case, each control with ``design.p_control``."""
    y = np.asarray(y, dtype=bool)
    keep = y | (rs.generator.random(y.shape[0]) < design.p_control)
    indices = np.flatnonzero(keep)
    y_study = y[indices]
    n_cases = int(y_study.sum())
    return AscertainedSample(
        indices=indices,
        y=y_study,
        w=_centered_w(y_study, design),
        n_cases=n_cases,
        n_controls=int(y_study.shape[0] - n_cases),
    )


def attach_study_genotypes(sample: AscertainedSample,
                           raw: GenotypeMatrix | np.ndarray) -> AscertainedSample:
    """Return the sample with genotypes standardized over the study rows."""
    values = raw.values if isinstance(raw, GenotypeMatrix) else raw
    z_study = standardize(values[sample.indices])
    return AscertainedSample(
        indices=sample.indices,
        y=sample.y,
        w=sample.w,
        n_cases=sample.n_cases,
        n_controls=sample.n_controls,
        z_study=z_study,
    )


@dataclass(frozen=True)
class StudyData:
    """One simulated case-control study together with its provenance."""

    sample: AscertainedSample
    design: StudyDesign
    liability: LiabilityParams
    n_loci: int
    population_size: int
    seed: int
    genotype_kind: str


def simulate_case_control_study(heritability: float, population_prevalence: float,
                                study_prevalence: float, n_loci: int,
                                target_cases: int, seed: int,
                                genotype_kind: str = "binomial-2-p",
                                block_rows: int = _BLOCK_ROWS) -> StudyData:
    """Run the full generative protocol for one study.

    The population size is ceil(target_cases / population_prevalence) so the
    study carries about ``target_cases`` cases; the realized count varies
    between samples. Fully determined by ``seed``.
    """
    if target_cases < 1:
        raise ValueError("target_cases must be >= 1")
    design = design_from_prevalences(population_prevalence, study_prevalence)
    lp = LiabilityParams(heritability)
    rs = RandomSource(seed)
    dist = make_distribution(genotype_kind, n_loci, rs.spawn(_STREAM_FREQS))
    n_population = math.ceil(target_cases / population_prevalence)
    raw, _, y = population_sample(dist, n_population, n_loci, lp, design, rs,
                                  block_rows=block_rows)
    sample = ascertain(y, design, rs.spawn(_STREAM_SELECTION))
    sample = attach_study_genotypes(sample, raw)
    return StudyData(
        sample=sample,
        design=design,
        liability=lp,
        n_loci=n_loci,
        population_size=n_population,
        seed=seed,
        genotype_kind=genotype_kind,
    )


# ---------------------------------------------------------------------------
# Dataset container: length-prefixed JSON header followed by raw row-major
# arrays. Byte layout is fully deterministic for a given dataset.
# ---------------------------------------------------------------------------

_MAGIC = b"HCCD"
_VERSION = 1


def save_dataset(path: str | Path, data: StudyData) -> None:
    sample = data.sample
    if sample.z_study is None:
        raise ValueError("dataset must carry study genotypes; run the pipeline first")
    arrays = {
        "z": np.ascontiguousarray(sample.z_study.z, dtype=np.float64),
        "col_means": np.ascontiguousarray(sample.z_study.col_means, dtype=np.float64),
        "col_sds": np.ascontiguousarray(sample.z_study.col_sds, dtype=np.float64),
        "w": np.ascontiguousarray(sample.w, dtype=np.float64),
        "y": np.ascontiguousarray(sample.y, dtype=np.uint8),
        "indices": np.ascontiguousarray(sample.indices, dtype=np.int64),
    }
    header = {
        "version": _VERSION,
        "n": sample.y.shape[0],
        "n_loci": data.n_loci,
        "seed": data.seed,
        "population_prevalence": data.design.population_prevalence,
        "study_prevalence": data.design.study_prevalence,
        "heritability": data.liability.heritability,
        "population_size": data.population_size,
        "genotype_kind": data.genotype_kind,
        "n_cases": sample.n_cases,
        "n_controls": sample.n_controls,
        "arrays": [
            {"name": name, "dtype": str(arr.dtype), "shape": list(arr.shape)}
            for name, arr in arrays.items()
        ],
    }
    blob = json.dumps(header, sort_keys=True, separators=(",", ":")).encode()
    with open(path, "wb") as fh:
        fh.write(_MAGIC)
        fh.write(len(blob).to_bytes(8, "little"))
        fh.write(blob)
        for arr in arrays.values():
            fh.write(arr.tobytes())


def load_dataset(path: str | Path) -> StudyData:
    with open(path, "rb") as fh:
        magic = fh.read(4)
        if magic != _MAGIC:
            raise ValueError(f"{path}: not a dataset container (bad magic {magic!r})")
        blob_len = int.from_bytes(fh.read(8), "little")
        header = json.loads(fh.read(blob_len))
        if header["version"] != _VERSION:
            raise ValueError(f"{path}: unsupported container version {header['version']}")
        arrays = {}
        for spec in header["arrays"]:
            shape = tuple(spec["shape"])
            dtype = np.dtype(spec["dtype"])
            count = int(np.prod(shape)) if shape else 1
            arr = np.frombuffer(fh.read(count * dtype.itemsize), dtype=dtype)
            arrays[spec["name"]] = arr.reshape(shape).copy()
    design = design_from_prevalences(
        header["population_prevalence"], header["study_prevalence"]
    )
    z_study = StandardizedGenotypes(arrays["z"], arrays["col_means"], arrays["col_sds"])
    y = arrays["y"].astype(bool)
    sample = AscertainedSample(
        indices=arrays["indices"],
        y=y,
        w=arrays["w"],
        n_cases=header["n_cases"],
        n_controls=header["n_controls"],
        z_study=z_study,
    )
    return StudyData(
        sample=sample,
        design=design,
        liability=LiabilityParams(header["heritability"]),
        n_loci=header["n_loci"],
        population_size=header["population_size"],
        seed=header["seed"],
        genotype_kind=header["genotype_kind"],
    )


def export_matrix_csv(path: str | Path, matrix: np.ndarray, max_rows: int = 1000) -> None:
    """Write a small matrix as CSV; refuses silly sizes."""
    matrix = np.atleast_2d(matrix)
    if matrix.shape[0] > max_rows:
        raise ValueError(f"matrix has {matrix.shape[0]} rows, CSV export capped at {max_rows}")
    lines = [",".join(repr(float(v)) for v in row) for row in matrix]
    Path(path).write_text("\n".join(lines) + "\n")
