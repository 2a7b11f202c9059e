"""Empirical genetic-relationship quantities and their diagnostics.

The relationship matrix is the per-locus average of cross products of
standardized genotypes. Because every column is centered and scaled over the
same individuals, two identities hold exactly: each row sums to zero and the
diagonal averages to one. The scaled deviations of the matrix from the
identity feed the pair-moment approximations.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .numerics import RandomSource
from .simulate import GenotypeDistribution, sample_genotype_matrix, standardize

__all__ = [
    "GrmView",
    "SigmaPair",
    "EnCheckResult",
    "ZPropertyReport",
    "grm_compute",
    "sigma_pair",
    "scaled_deviations",
    "event_en_check",
    "mean_square_offdiagonal",
    "z_property_suite",
    "grm_to_csv",
    "save_grm",
    "load_grm",
]


@dataclass(frozen=True)
class GrmView:
    """Symmetric relationship matrix with its dimensions."""

    g: np.ndarray
    n_individuals: int
    n_loci: int


def grm_compute(z) -> GrmView:
    """Relationship matrix: cross products of standardized rows over loci.

    Cost is one n x n_loci by n_loci x n product (BLAS-blocked); the result is
    symmetrized exactly.
    """
    if z.n_individuals < 2 or z.n_loci < 1:
        raise ValueError("need at least 2 individuals and 1 locus")
    g = z.z @ z.z.T
    g += g.T.copy()
    g *= 0.5 / z.n_loci
    return GrmView(g=g, n_individuals=z.n_individuals, n_loci=z.n_loci)


@dataclass(frozen=True)
class SigmaPair:
    """Square-root-of-loci scaled deviations of one pair from the identity.

    ``a_i`` and ``a_j`` scale the diagonal excess of the two individuals,
    ``b_ij`` the off-diagonal entry.
    """

    a_i: float
    a_j: float
    b_ij: float


def sigma_pair(g: GrmView, i: int, j: int) -> SigmaPair:
    """Scaled deviations for one ordered pair; the pair must be distinct."""
    if i == j:
        raise ValueError(f"pair indices must differ, got i = j = {i}")
    root = math.sqrt(g.n_loci)
    return SigmaPair(
        a_i=root * (g.g[i, i] - 1.0),
        a_j=root * (g.g[j, j] - 1.0),
        b_ij=root * g.g[i, j],
    )


def scaled_deviations(g: GrmView) -> tuple[np.ndarray, np.ndarray]:
    """Vectorized scaled deviations: per-individual diagonal excess vector and
    the full scaled matrix (diagonal meaningless, zeroed)."""
    root = math.sqrt(g.n_loci)
    a = root * (np.diag(g.g) - 1.0)
    b = root * g.g.copy()
    np.fill_diagonal(b, 0.0)
    return a, b


@dataclass(frozen=True)
class EnCheckResult:
    holds: bool
    sup_diag_dev: float
    sup_offdiag: float
    eps_n: float


def event_en_check(g: GrmView, gamma: float) -> EnCheckResult:
    """Uniform-smallness diagnostic for the relationship deviations.

    The tolerance is n_loci**-(1/2 - gamma); the event holds when every
    diagonal deviation and every off-diagonal entry stays within it. The
    exponent offset must satisfy 0 < gamma < 1/10.
    """
    if not (0.0 < gamma < 0.1):
        raise ValueError(f"gamma must lie in (0, 1/10), got {gamma}")
    eps_n = float(g.n_loci) ** -(0.5 - gamma)
    diag = np.diag(g.g)
    sup_diag = float(np.abs(diag - 1.0).max())
    off = np.abs(g.g - np.diag(diag))
    np.fill_diagonal(off, 0.0)
    sup_off = float(off.max())
    return EnCheckResult(
        holds=bool(sup_diag <= eps_n and sup_off <= eps_n),
        sup_diag_dev=sup_diag,
        sup_offdiag=sup_off,
        eps_n=eps_n,
    )


def mean_square_offdiagonal(g: GrmView) -> float:
    """Off-diagonal mean square, scaled by 1/n: sum over ordered pairs of
    squared entries divided by n. Concentrates near n/n_loci for standardized
    independent loci."""
    sq = g.g * g.g
    total = float(sq.sum() - np.trace(sq))
    return total / g.n_individuals


@dataclass(frozen=True)
class MomentEstimate:
    estimate: float
    std_error: float
    n_samples: int


@dataclass(frozen=True)
class ZPropertyReport:
    """Monte Carlo estimates of standardized-genotype moments.

    ``pair_product`` targets -1/(n-1); ``square_pair_product`` targets 1;
    ``even_moments`` hold the 2nd/4th/6th marginal moments (bounded);
    ``higher_moments`` are small mixed moments reported for scale inspection
    only. The exact per-realization identities are reported as worst-case
    deviations across all datasets.
    """

    n_individuals: int
    n_loci: int
    replications: int
    pair_product: MomentEstimate
    square_pair_product: MomentEstimate
    even_moments: dict[int, MomentEstimate]
    higher_moments: dict[str, MomentEstimate]
    max_abs_col_sum: float
    max_abs_sumsq_minus_n: float


class _RunningMoment:
    __slots__ = ("total", "total_sq", "count")

    def __init__(self) -> None:
        self.total = 0.0
        self.total_sq = 0.0
        self.count = 0

    def add(self, samples: np.ndarray) -> None:
        self.total += float(samples.sum())
        self.total_sq += float((samples * samples).sum())
        self.count += samples.size

    def result(self) -> MomentEstimate:
        mean = self.total / self.count
        var = max(self.total_sq / self.count - mean * mean, 0.0)
        return MomentEstimate(mean, math.sqrt(var / self.count), self.count)


def z_property_suite(dist: GenotypeDistribution, n: int, n_loci: int,
                     reps: int, rs: RandomSource) -> ZPropertyReport:
    """Estimate the moment identities of standardized genotypes by Monte Carlo.

    Uses fixed rows (0..3) of each replicate so samples are independent
    across loci and replicates, giving valid standard errors.

    Columns that come out constant (possible at small n for count-like
    kinds) cannot be scaled and are excluded; the tested identities are
    exchangeability statements per non-degenerate column, so conditioning
    on non-degeneracy leaves them intact.
    """
    if n < 5:
        raise ValueError("need n >= 5 so four distinct rows exist")
    trackers: dict[str, _RunningMoment] = {
        key: _RunningMoment()
        for key in ("z1z2", "z1sq_z2sq", "p2", "p4", "p6",
                    "z1^3*z2", "z1^2*z2*z3", "z1*z2*z3*z4", "z1^5*z2",
                    "z1^3*z2^3", "z1^4*z2^2", "z1^4*z2*z3", "z1^3*z2^2*z3",
                    "z1^3*z2*z3*z4")
    }
    max_col_sum = 0.0
    max_sumsq_dev = 0.0
    for rep in range(reps):
        a = sample_genotype_matrix(dist, n, n_loci, rs.spawn(rep))
        values = a.values.astype(np.float64)
        keep = values.std(axis=0) > 0.0
        z = standardize(values[:, keep]).z
        max_col_sum = max(max_col_sum, float(np.abs(z.sum(axis=0)).max()))
        max_sumsq_dev = max(max_sumsq_dev, float(np.abs((z * z).sum(axis=0) - n).max()))
        z1, z2, z3, z4 = z[0], z[1], z[2], z[3]
        trackers["z1z2"].add(z1 * z2)
        trackers["z1sq_z2sq"].add(z1 * z1 * z2 * z2)
        trackers["p2"].add(z1 * z1)
        trackers["p4"].add(z1**4)
        trackers["p6"].add(z1**6)
        trackers["z1^3*z2"].add(z1**3 * z2)
        trackers["z1^2*z2*z3"].add(z1**2 * z2 * z3)
        trackers["z1*z2*z3*z4"].add(z1 * z2 * z3 * z4)
        trackers["z1^5*z2"].add(z1**5 * z2)
        trackers["z1^3*z2^3"].add(z1**3 * z2**3)
        trackers["z1^4*z2^2"].add(z1**4 * z2**2)
        trackers["z1^4*z2*z3"].add(z1**4 * z2 * z3)
        trackers["z1^3*z2^2*z3"].add(z1**3 * z2**2 * z3)
        trackers["z1^3*z2*z3*z4"].add(z1**3 * z2 * z3 * z4)
    higher_keys = ("z1^3*z2", "z1^2*z2*z3", "z1*z2*z3*z4", "z1^5*z2",
                   "z1^3*z2^3", "z1^4*z2^2", "z1^4*z2*z3", "z1^3*z2^2*z3",
                   "z1^3*z2*z3*z4")
    return ZPropertyReport(
        n_individuals=n,
        n_loci=n_loci,
        replications=reps,
        pair_product=trackers["z1z2"].result(),
        square_pair_product=trackers["z1sq_z2sq"].result(),
        even_moments={2: trackers["p2"].result(),
                      4: trackers["p4"].result(),
                      6: trackers["p6"].result()},
        higher_moments={k: trackers[k].result() for k in higher_keys},
        max_abs_col_sum=max_col_sum,
        max_abs_sumsq_minus_n=max_sumsq_dev,
    )


def grm_to_csv(path: str | Path, g: GrmView, max_n: int = 1000) -> None:
    """Write the matrix as CSV; refuses n beyond ``max_n``."""
    if g.n_individuals > max_n:
        raise ValueError(f"n = {g.n_individuals} exceeds CSV export cap {max_n}")
    lines = [",".join(repr(float(v)) for v in row) for row in g.g]
    Path(path).write_text("\n".join(lines) + "\n")


_GRM_MAGIC = b"HCCG"


def save_grm(path: str | Path, g: GrmView) -> None:
    with open(path, "wb") as fh:
        fh.write(_GRM_MAGIC)
        fh.write(int(g.n_individuals).to_bytes(8, "little"))
        fh.write(int(g.n_loci).to_bytes(8, "little"))
        fh.write(np.ascontiguousarray(g.g, dtype=np.float64).tobytes())


def load_grm(path: str | Path) -> GrmView:
    with open(path, "rb") as fh:
        if fh.read(4) != _GRM_MAGIC:
            raise ValueError(f"{path}: not a relationship-matrix container")
        n = int.from_bytes(fh.read(8), "little")
        n_loci = int.from_bytes(fh.read(8), "little")
        g = np.frombuffer(fh.read(n * n * 8), dtype=np.float64).reshape(n, n).copy()
    return GrmView(g=g, n_individuals=n, n_loci=n_loci)
