"""Value estimators for stochastic interventions, plus variance diagnostics.

Two routes to the value Q of an intervention:
  * q_parametric evaluates a fitted linear model at intervention
    probabilities (for choice models, against a fixed opponent).
  * q_weighting reweights observed outcomes by the probability ratio of the
    intervention to the randomization design; "ht" divides by n, "hajek"
    self-normalizes by the realized weights.

The variance side: an upper bound on Var(Q_hat) for uniform designs driven
by the largest profile probability of the intervention, and the comparison
of that bound's profile-probability term with its looser L2 relaxation.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from .dataio import ProfileSample, as_profile_sample
from .design import (
    ConjointDesign,
    ProfileDistribution,
    as_profile,
    enumerate_support,
    support_array,
    support_probabilities,
)
from .errors import DivergenceUndefinedError, PositivityError, ValidationError
from .model import OutcomeModel

WEIGHTING_MODES = ("ht", "hajek")


# ---------------------------------------------------------------------------
# parametric value

def q_parametric(model: OutcomeModel, pi_a: ProfileDistribution,
                 pi_b: ProfileDistribution | None = None) -> float:
    """Expected outcome under independent profile draws.

    Choice models need both sides and return the probability that the side-a
    candidate is chosen when a ~ pi_a and b ~ pi_b. Direct models take a
    single distribution.
    """
    design = model.design
    if pi_a.design.level_counts != design.level_counts:
        raise ValidationError("pi_a does not match the model design")
    if model.response == "choice":
        if pi_b is None:
            raise ValidationError("choice models need an opponent distribution")
        if pi_b.design.level_counts != design.level_counts:
            raise ValidationError("pi_b does not match the model design")
        out = model.intercept
        for d in range(design.n_factors):
            beta = model.full_main(d)
            out += float(beta @ (pi_a.probs[d] - pi_b.probs[d]))
        for d1, d2 in model.pairs():
            fg = model.full_gamma(d1, d2)
            out += float(pi_a.probs[d1] @ fg @ pi_a.probs[d2])
            out -= float(pi_b.probs[d1] @ fg @ pi_b.probs[d2])
        return out
    if pi_b is not None:
        raise ValidationError("direct models take a single distribution")
    out = model.intercept
    for d in range(design.n_factors):
        out += float(model.full_main(d) @ pi_a.probs[d])
    for d1, d2 in model.pairs():
        out += float(pi_a.probs[d1] @ model.full_gamma(d1, d2) @ pi_a.probs[d2])
    return out


def q_gradient_pi(model: OutcomeModel, pi: ProfileDistribution) -> list[np.ndarray]:
    """dQ / d pi_dl on the full level set, holding any opponent fixed.

    Identical for choice and direct models because opponent terms are
    constant in the optimized side's probabilities.
    """
    design = model.design
    grads = []
    for d in range(design.n_factors):
        g = model.full_main(d).copy()
        for d2 in range(design.n_factors):
            if d2 == d:
                continue
            g += model.gamma_between(d, d2) @ pi.probs[d2]
        grads.append(g)
    return grads


# ---------------------------------------------------------------------------
# weighting value

def _weights(sample: ProfileSample, pi: ProfileDistribution) -> np.ndarray:
    design = sample.design
    p = design.assignment()
    w = np.ones(len(sample))
    for d in range(design.n_factors):
        denom = p.probs[d][sample.profiles[:, d]]
        if np.any(denom <= 0.0):
            bad = sample.profiles[np.argmax(denom <= 0.0)]
            raise PositivityError(
                f"observed profile {tuple(int(v) for v in bad)} has zero "
                f"probability under the randomization design"
            )
        w *= pi.probs[d][sample.profiles[:, d]] / denom
    return w


def q_weighting(data, pi: ProfileDistribution, mode: str = "ht") -> float:
    """Weighting estimate of Q(pi) from randomized data.

    data is either a ProfileSample or a ForcedChoiceDataset (side-a profile
    and choice indicator are used).
    """
    if mode not in WEIGHTING_MODES:
        raise ValidationError(f"mode must be one of {WEIGHTING_MODES}")
    sample = as_profile_sample(data)
    if sample.design.level_counts != pi.design.level_counts:
        raise ValidationError("pi does not match the data design")
    w = _weights(sample, pi)
    if mode == "ht":
        return float(np.mean(sample.y * w))
    denom = float(np.sum(w))
    if denom <= 0.0:
        raise PositivityError("all weights are zero; hajek estimate undefined")
    return float(np.sum(sample.y * w) / denom)


@dataclass(frozen=True)
class CellStats:
    """Per-profile outcome sums scaled by n * Pr(t): the weighting estimator
    in cell form. Empty cells carry zero."""

    design: ConjointDesign
    profiles: tuple
    c_hat: np.ndarray
    counts: np.ndarray

    def as_dict(self):
        return {p.levels: (float(c), int(k))
                for p, c, k in zip(self.profiles, self.c_hat, self.counts)}


def cell_stats(data, cap: int | None = None) -> CellStats:
    """Aggregate outcomes by profile cell over the enumerated support."""
    sample = as_profile_sample(data)
    design = sample.design
    kwargs = {} if cap is None else {"cap": cap}
    profiles = enumerate_support(design, **kwargs)
    support = support_array(design, **kwargs)
    p_t = support_probabilities(design.assignment(), support)
    # map each observation to its support row (mixed-radix index)
    counts_per_factor = np.asarray(design.level_counts)
    radix = np.concatenate([np.cumprod(counts_per_factor[::-1])[::-1][1:], [1]])
    obs_idx = sample.profiles @ radix
    sums = np.zeros(len(profiles))
    np.add.at(sums, obs_idx, sample.y)
    counts = np.zeros(len(profiles), dtype=np.int64)
    np.add.at(counts, obs_idx, 1)
    n = len(sample)
    c_hat = np.zeros(len(profiles))
    nonzero = p_t > 0
    c_hat[nonzero] = sums[nonzero] / (n * p_t[nonzero])
    if np.any(~nonzero & (counts > 0)):
        raise PositivityError("observations found in a zero-probability cell")
    return CellStats(design, tuple(profiles), c_hat, counts)


# ---------------------------------------------------------------------------
# variance bound

@dataclass(frozen=True)
class VarianceBoundInputs:
    sigma2: float
    c2_mean: float
    n: int

    def __post_init__(self):
        if self.sigma2 < 0 or self.c2_mean < 0:
            raise ValidationError("variance bound inputs must be nonnegative")
        if self.n < 1:
            raise ValidationError("n must be positive")


@dataclass(frozen=True)
class VarianceBoundResult:
    bound: float
    max_prob: float
    support_size: float
    shift_applied: float = 0.0


def variance_bound(inputs: VarianceBoundInputs, design: ConjointDesign,
                   pi: ProfileDistribution) -> VarianceBoundResult:
    """(sigma2 + E_pi[c_t^2]) * |T| * max_t Pr_pi(t) / n.

    Valid for uniform randomization, constant outcome variance, and
    nonnegative outcomes; a warning is issued for non-uniform designs.
    """
    if not design.is_uniform():
        warnings.warn(
            "variance bound assumes a uniform randomization design",
            stacklevel=2,
        )
    size = float(design.support_size())
    max_prob = pi.max_prob()
    bound = (inputs.sigma2 + inputs.c2_mean) * size * max_prob / inputs.n
    return VarianceBoundResult(bound=float(bound), max_prob=max_prob,
                               support_size=size)


def estimate_bound_inputs(data, pi: ProfileDistribution):
    """Default data-driven bound inputs.

    Outcomes are shifted by min(0, min Y) so nonnegativity holds; sigma2 is
    the marginal sample variance (shift invariant) and E_pi[c_t^2] is the
    weighting estimate applied to the squared shifted outcomes.
    """
    sample = as_profile_sample(data)
    shift = -min(0.0, float(sample.y.min()))
    y_shifted = sample.y + shift
    sigma2 = float(np.var(sample.y))
    c2 = q_weighting(ProfileSample(sample.design, sample.profiles, y_shifted ** 2),
                     pi, mode="ht")
    return VarianceBoundInputs(sigma2=sigma2, c2_mean=max(0.0, c2), n=len(sample)), shift


def estimate_variance_bound(data, pi: ProfileDistribution) -> VarianceBoundResult:
    sample = as_profile_sample(data)
    inputs, shift = estimate_bound_inputs(sample, pi)
    res = variance_bound(inputs, sample.design, pi)
    return VarianceBoundResult(bound=res.bound, max_prob=res.max_prob,
                               support_size=res.support_size, shift_applied=shift)


@dataclass(frozen=True)
class PenaltyComparison:
    maxprob_term: float
    l2_term: float


def compare_penalties(design: ConjointDesign, pi: ProfileDistribution) -> PenaltyComparison:
    """|T| * max-profile-probability versus its L2 relaxation
    |T| * (D + ||pi - p||_2); the relaxation is never smaller."""
    size = float(design.support_size())
    maxprob_term = size * pi.max_prob()
    l2 = pi.l2_distance(design.assignment())
    l2_term = size * (design.n_factors + l2)
    return PenaltyComparison(maxprob_term=maxprob_term, l2_term=l2_term)


# ---------------------------------------------------------------------------
# strategic divergence

def strategic_divergence(pi_a: ProfileDistribution, pi_b: ProfileDistribution,
                         t) -> float:
    """|log Pr_a(t) - log Pr_b(t)| for a single profile t."""
    profile = as_profile(t)
    pa = pi_a.prob(profile)
    pb = pi_b.prob(profile)
    if pa <= 0.0 or pb <= 0.0:
        raise DivergenceUndefinedError(
            f"profile {profile.levels} has zero probability under "
            f"{'pi_a' if pa <= 0 else 'pi_b'}"
        )
    return abs(float(np.log(pa) - np.log(pb)))


def divergence_gradient(pi_a: ProfileDistribution, pi_b: ProfileDistribution,
                        t) -> tuple[np.ndarray, np.ndarray]:
    """Gradients of the divergence w.r.t. the stacked level probabilities of
    each side (for delta-method standard errors via chained Jacobians)."""
    profile = as_profile(t)
    pa = pi_a.prob(profile)
    pb = pi_b.prob(profile)
    if pa <= 0.0 or pb <= 0.0:
        raise DivergenceUndefinedError("divergence gradient undefined at zero probability")
    sign = np.sign(np.log(pa) - np.log(pb))
    if sign == 0.0:
        sign = 1.0
    ga, gb = [], []
    for d, l in enumerate(profile.levels):
        va = np.zeros(pi_a.probs[d].size)
        va[l] = sign / pi_a.probs[d][l]
        ga.append(va)
        vb = np.zeros(pi_b.probs[d].size)
        vb[l] = -sign / pi_b.probs[d][l]
        gb.append(vb)
    return np.concatenate(ga), np.concatenate(gb)
