"""Conditional expectation of centered phenotype products for a selected pair.

Three routes to the same quantity:

* an exact evaluation that integrates the latent bivariate normal over the
  threshold-cut regions and applies the selection weighting,
* a first-order (linear in relatedness) approximation whose slope is a
  closed-form constant of the design,
* a second-order approximation that also uses the diagonal deviations of the
  pair's latent covariance.

The second-order expansion carries two switchable density-squared factors.
Re-deriving the expansion shows both factors are required for the remainder
to shrink at the three-halves power of the locus count; the alternative
variants (closer to a published form of the display) are kept switchable so
the order-check tests can demonstrate the difference. The defaults are the
variant selected by those order checks.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

from .grm import SigmaPair
from .numerics import BivariateCovariance, bvn_rect, std_normal_pdf
from .simulate import StudyDesign

__all__ = [
    "PairMoment",
    "pair_probabilities",
    "ascertained_pair_ratio",
    "exact_pair_expectation",
    "pair_moment_slope",
    "first_order_pair_expectation",
    "second_order_pair_expectation",
    "evaluate_pair_moment",
]

_INF = math.inf


def pair_probabilities(sp: SigmaPair, design: StudyDesign, eta: float,
                       n_loci: int) -> tuple[float, float, float]:
    """Exact joint phenotype probabilities for one pair.

    Reconstructs the pair's latent covariance from the scaled deviations,
    then integrates the bivariate normal over the regions cut at the
    threshold. The discordant probability is taken as the complement so the
    three regions partition exactly.

    Raises:
        ValueError: if the reconstructed covariance is not positive definite.
    """
    root = math.sqrt(n_loci)
    cov = BivariateCovariance(
        v11=1.0 + eta * sp.a_i / root,
        v22=1.0 + eta * sp.a_j / root,
        v12=eta * sp.b_ij / root,
    )
    t = design.threshold
    p_both_cases = bvn_rect(t, _INF, t, _INF, cov)
    p_both_controls = bvn_rect(-_INF, t, -_INF, t, cov)
    p_discordant = max(0.0, 1.0 - p_both_cases - p_both_controls)
    return p_both_cases, p_both_controls, p_discordant


def ascertained_pair_ratio(p_both_cases: float, p_both_controls: float,
                           p_discordant: float, design: StudyDesign) -> float:
    """Selection-weighted expectation of the centered phenotype product.

    Conditional on both individuals being selected, the product takes value
    (1-P)/P on case-case pairs, P/(1-P) on control-control pairs and -1 on
    discordant pairs; selection keeps cases surely and controls with the
    thinning probability, which weights the three joint probabilities.
    """
    k, p = design.population_prevalence, design.study_prevalence
    r = k * (1.0 - p) / (p * (1.0 - k))
    numerator = (
        (1.0 - p) / p * p_both_cases
        - r * p_discordant
        + k * k * (1.0 - p) / (p * (1.0 - k) ** 2) * p_both_controls
    )
    denominator = p_both_cases + r * r * p_both_controls + r * p_discordant
    return numerator / denominator


def exact_pair_expectation(sp: SigmaPair, design: StudyDesign, eta: float,
                           n_loci: int) -> float:
    """Oracle value of the conditional pair moment, accurate to ~1e-10."""
    p11, p00, pneq = pair_probabilities(sp, design, eta, n_loci)
    return ascertained_pair_ratio(p11, p00, pneq, design)


def pair_moment_slope(design: StudyDesign) -> float:
    """Slope of the pair moment in heritability times relatedness.

    Closed form: pdf(threshold)^2 * P(1-P) / (K^2 (1-K)^2).
    """
    k, p = design.population_prevalence, design.study_prevalence
    density = std_normal_pdf(design.threshold)
    return density * density * p * (1.0 - p) / (k * k * (1.0 - k) ** 2)


def first_order_pair_expectation(g_ij: float, design: StudyDesign, eta: float) -> float:
    """Linear approximation: heritability times slope times relatedness."""
    return eta * pair_moment_slope(design) * g_ij


def second_order_pair_expectation(sp: SigmaPair, design: StudyDesign, eta: float,
                                  n_loci: int, *,
                                  diag_product_density_sq: bool = True,
                                  mixing_density_sq: bool = True) -> float:
    """Quadratic approximation of the conditional pair moment.

    ``diag_product_density_sq`` multiplies the diagonal-deviation product term
    by the squared threshold density; ``mixing_density_sq`` applies the same
    factor to the prevalence-mismatch part of the squared-relatedness term.
    Both default to the variant whose error against the exact oracle decays
    at the three-halves power of the locus count (see the order-check tests);
    disabling either knocks the decay back to first power.
    """
    if n_loci < 1:
        raise ValueError("n_loci must be >= 1")
    k, p = design.population_prevalence, design.study_prevalence
    t = design.threshold
    density = std_normal_pdf(t)
    dsq = density * density
    scale = p * (1.0 - p) / (k * k * (1.0 - k) ** 2)
    root = math.sqrt(n_loci)
    e1 = eta / root
    e2 = eta * eta / n_loci
    mismatch = (p - k) / (k * (1.0 - k))

    linear = e1 * scale * dsq * sp.b_ij
    diag_product = (
        e2 * scale * (t * t / 4.0) * sp.a_i * sp.a_j
        * (dsq if diag_product_density_sq else 1.0)
    )
    mixing = mismatch * mismatch * (dsq if mixing_density_sq else 1.0)
    squared_relatedness = e2 * scale * dsq * sp.b_ij * sp.b_ij * (t * t / 2.0 - mixing)
    cross = (
        0.5 * e2 * scale * dsq * sp.b_ij * (sp.a_i + sp.a_j)
        * (t * t - 1.0 - mismatch * t * density)
    )
    return linear + diag_product + squared_relatedness + cross


@dataclass(frozen=True)
class PairMoment:
    """All three evaluations of the pair moment for one input."""

    exact: float
    first_order: float
    second_order: float
    sp: SigmaPair
    eta: float
    n_loci: int


def evaluate_pair_moment(sp: SigmaPair, design: StudyDesign, eta: float,
                         n_loci: int) -> PairMoment:
    g_ij = sp.b_ij / math.sqrt(n_loci)
    return PairMoment(
        exact=exact_pair_expectation(sp, design, eta, n_loci),
        first_order=first_order_pair_expectation(g_ij, design, eta),
        second_order=second_order_pair_expectation(sp, design, eta, n_loci),
        sp=sp,
        eta=eta,
        n_loci=n_loci,
    )
