"""Factorial treatment spaces and stochastic interventions over them.

A design is a list of factors, each with named levels and randomization
probabilities. Profiles are level-index tuples (0-based). Interventions
are per-factor probability vectors; the softmax parameterization keeps
gradient-based optimizers on the simplex, with the last level of each
factor carrying the implicit zero parameter.
"""

from __future__ import annotations

import itertools
import json
import math
from dataclasses import dataclass

import numpy as np

from .errors import (
    InvalidParameterError,
    SchemaError,
    SupportTooLargeError,
    ValidationError,
)

# Enumeration guard: operations that materialize the support refuse to go
# beyond this many profiles unless the caller raises the cap explicitly.
DEFAULT_SUPPORT_CAP = 200_000

_SUM_TOL = 1e-12
_RENORM_TOL = 1e-9


def _clean_simplex(values, what: str) -> np.ndarray:
    """Validate a probability vector; renormalize silently if the sum is
    within 1e-9 of one, reject beyond that."""
    arr = np.asarray(values, dtype=float)
    if arr.ndim != 1 or arr.size < 1:
        raise ValidationError(f"{what}: expected a 1-d probability vector")
    if not np.all(np.isfinite(arr)):
        raise ValidationError(f"{what}: non-finite probability")
    if np.any(arr < -_SUM_TOL) or np.any(arr > 1.0 + _RENORM_TOL):
        raise ValidationError(f"{what}: probabilities must lie in [0, 1]")
    arr = np.clip(arr, 0.0, 1.0)
    total = float(arr.sum())
    if abs(total - 1.0) > _RENORM_TOL:
        raise ValidationError(f"{what}: probabilities sum to {total!r}, not 1")
    if abs(total - 1.0) > _SUM_TOL:
        arr = arr / total
    arr.flags.writeable = False
    return arr


@dataclass(frozen=True)
class FactorSpec:
    """One factor: a name, at least two levels, and assignment probabilities."""

    name: str
    levels: tuple[str, ...]
    assignment_probs: np.ndarray

    def __post_init__(self):
        if not self.name:
            raise ValidationError("factor name must be nonempty")
        levels = tuple(str(v) for v in self.levels)
        if len(levels) < 2:
            raise ValidationError(f"factor {self.name!r} needs at least 2 levels")
        if len(set(levels)) != len(levels):
            raise ValidationError(f"factor {self.name!r} has duplicate levels")
        probs = _clean_simplex(self.assignment_probs, f"factor {self.name!r}")
        if probs.size != len(levels):
            raise ValidationError(
                f"factor {self.name!r}: {len(levels)} levels but "
                f"{probs.size} probabilities"
            )
        object.__setattr__(self, "levels", levels)
        object.__setattr__(self, "assignment_probs", probs)

    @property
    def n_levels(self) -> int:
        return len(self.levels)


@dataclass(frozen=True)
class ConjointDesign:
    """An ordered collection of factors with randomization probabilities."""

    factors: tuple[FactorSpec, ...]

    def __post_init__(self):
        factors = tuple(self.factors)
        if not factors:
            raise ValidationError("design needs at least one factor")
        names = [f.name for f in factors]
        if len(set(names)) != len(names):
            raise ValidationError("duplicate factor names in design")
        object.__setattr__(self, "factors", factors)
        object.__setattr__(self, "_name_index", {f.name: d for d, f in enumerate(factors)})

    @property
    def n_factors(self) -> int:
        return len(self.factors)

    @property
    def level_counts(self) -> tuple[int, ...]:
        return tuple(f.n_levels for f in self.factors)

    def support_size(self) -> int:
        # exact integer product; Python ints do not overflow
        return math.prod(self.level_counts)

    def factor_index(self, name: str) -> int:
        try:
            return self._name_index[name]
        except KeyError:
            raise ValidationError(f"unknown factor {name!r}") from None

    def level_index(self, factor: str, level: str) -> int:
        f = self.factors[self.factor_index(factor)]
        try:
            return f.levels.index(level)
        except ValueError:
            raise ValidationError(
                f"unknown level {level!r} for factor {factor!r}"
            ) from None

    def assignment(self) -> "ProfileDistribution":
        return ProfileDistribution(self, tuple(f.assignment_probs for f in self.factors))

    def is_uniform(self, tol: float = 1e-12) -> bool:
        return all(
            np.all(np.abs(f.assignment_probs - 1.0 / f.n_levels) <= tol)
            for f in self.factors
        )


@dataclass(frozen=True)
class Profile:
    """A single treatment combination, one 0-based level index per factor."""

    levels: tuple[int, ...]

    def __post_init__(self):
        object.__setattr__(self, "levels", tuple(int(v) for v in self.levels))

    def validate(self, design: ConjointDesign) -> None:
        if len(self.levels) != design.n_factors:
            raise ValidationError(
                f"profile has {len(self.levels)} entries for a "
                f"{design.n_factors}-factor design"
            )
        for d, (l, count) in enumerate(zip(self.levels, design.level_counts)):
            if not 0 <= l < count:
                raise ValidationError(
                    f"profile level {l} out of range for factor "
                    f"{design.factors[d].name!r}"
                )

    def __iter__(self):
        return iter(self.levels)

    def __getitem__(self, d):
        return self.levels[d]


@dataclass(frozen=True)
class ProfileDistribution:
    """Per-factor probability vectors; factors are independent."""

    design: ConjointDesign
    probs: tuple[np.ndarray, ...]

    def __post_init__(self):
        if len(self.probs) != self.design.n_factors:
            raise ValidationError(
                f"distribution has {len(self.probs)} factors, design has "
                f"{self.design.n_factors}"
            )
        cleaned = []
        for f, vec in zip(self.design.factors, self.probs):
            arr = _clean_simplex(vec, f"distribution for factor {f.name!r}")
            if arr.size != f.n_levels:
                raise ValidationError(
                    f"distribution for factor {f.name!r} has wrong length"
                )
            cleaned.append(arr)
        object.__setattr__(self, "probs", tuple(cleaned))

    def factor(self, d: int) -> np.ndarray:
        return self.probs[d]

    def stacked(self) -> np.ndarray:
        return np.concatenate(self.probs)

    def prob(self, profile: Profile) -> float:
        profile = as_profile(profile)
        profile.validate(self.design)
        out = 1.0
        for d, l in enumerate(profile.levels):
            out *= float(self.probs[d][l])
        return out

    def max_prob(self) -> float:
        """Largest single-profile probability: product of per-factor maxima."""
        out = 1.0
        for vec in self.probs:
            out *= float(vec.max())
        return out

    def l2_distance(self, other: "ProfileDistribution") -> float:
        return float(np.linalg.norm(self.stacked() - other.stacked()))


@dataclass(frozen=True)
class SoftmaxParams:
    """Unconstrained per-factor parameters, length L_d - 1 each.

    The last level of every factor is pinned at zero.
    """

    design: ConjointDesign
    values: tuple[np.ndarray, ...]

    def __post_init__(self):
        if len(self.values) != self.design.n_factors:
            raise ValidationError("softmax params do not match design shape")
        cleaned = []
        for f, vec in zip(self.design.factors, self.values):
            arr = np.asarray(vec, dtype=float)
            if arr.ndim != 1 or arr.size != f.n_levels - 1:
                raise ValidationError(
                    f"softmax params for factor {f.name!r} must have length "
                    f"{f.n_levels - 1}"
                )
            if not np.all(np.isfinite(arr)):
                raise InvalidParameterError(
                    f"non-finite softmax parameter for factor {f.name!r}"
                )
            arr = arr.copy()
            arr.flags.writeable = False
            cleaned.append(arr)
        object.__setattr__(self, "values", tuple(cleaned))

    @classmethod
    def zeros(cls, design: ConjointDesign) -> "SoftmaxParams":
        return cls(design, tuple(np.zeros(f.n_levels - 1) for f in design.factors))

    def stacked(self) -> np.ndarray:
        return np.concatenate(self.values) if self.values else np.empty(0)

    @classmethod
    def from_stacked(cls, design: ConjointDesign, vec) -> "SoftmaxParams":
        vec = np.asarray(vec, dtype=float)
        sizes = [f.n_levels - 1 for f in design.factors]
        if vec.size != sum(sizes):
            raise ValidationError("stacked softmax vector has wrong length")
        parts, at = [], 0
        for s in sizes:
            parts.append(vec[at : at + s])
            at += s
        return cls(design, tuple(parts))

    def n_params(self) -> int:
        return sum(v.size for v in self.values)


def as_profile(t) -> Profile:
    if isinstance(t, Profile):
        return t
    return Profile(tuple(t))


def _softmax_vector(a_free: np.ndarray) -> np.ndarray:
    """Softmax over (a_1..a_{L-1}, 0), computed with a max shift."""
    full = np.concatenate([a_free, [0.0]])
    full = full - full.max()
    ex = np.exp(full)
    return ex / ex.sum()


def softmax_to_distribution(a: SoftmaxParams) -> ProfileDistribution:
    """Map unconstrained parameters to a valid intervention distribution."""
    probs = tuple(_softmax_vector(vec) for vec in a.values)
    return ProfileDistribution(a.design, probs)


def distribution_to_softmax(pi: ProfileDistribution) -> SoftmaxParams:
    """Inverse map, defined for strictly positive distributions."""
    values = []
    for f, vec in zip(pi.design.factors, pi.probs):
        if np.any(vec <= 0.0):
            raise InvalidParameterError(
                f"cannot take log ratios: factor {f.name!r} has a zero entry"
            )
        values.append(np.log(vec[:-1]) - np.log(vec[-1]))
    return SoftmaxParams(pi.design, tuple(values))


def softmax_jacobian_factor(pi_d: np.ndarray) -> np.ndarray:
    """d pi_dl / d a_dl' for one factor: rows over all L levels, columns over
    the L-1 free parameters. Entry (l, l') = pi_l (1{l=l'} - pi_l')."""
    pi_d = np.asarray(pi_d, dtype=float)
    L = pi_d.size
    J = -np.outer(pi_d, pi_d[:-1])
    J[np.arange(L - 1), np.arange(L - 1)] += pi_d[:-1]
    return J


def profile_probability(pi: ProfileDistribution, t) -> float:
    """Probability of drawing profile t under the product distribution pi."""
    return pi.prob(as_profile(t))


def enumerate_support(design: ConjointDesign, cap: int = DEFAULT_SUPPORT_CAP):
    """All profiles in lexicographic order (first factor slowest)."""
    size = design.support_size()
    if size > cap:
        raise SupportTooLargeError(size, cap)
    ranges = [range(c) for c in design.level_counts]
    return [Profile(t) for t in itertools.product(*ranges)]


def support_array(design: ConjointDesign, cap: int = DEFAULT_SUPPORT_CAP) -> np.ndarray:
    """Support as an (|T|, D) int array, same order as enumerate_support."""
    size = design.support_size()
    if size > cap:
        raise SupportTooLargeError(size, cap)
    ranges = [np.arange(c) for c in design.level_counts]
    grids = np.meshgrid(*ranges, indexing="ij")
    return np.stack([g.ravel() for g in grids], axis=1)


def support_probabilities(pi: ProfileDistribution, support: np.ndarray) -> np.ndarray:
    """Vector of profile probabilities for the rows of a support array."""
    out = np.ones(support.shape[0])
    for d in range(support.shape[1]):
        out *= pi.probs[d][support[:, d]]
    return out


# ---------------------------------------------------------------------------
# serialization

def design_to_json(design: ConjointDesign) -> dict:
    return {
        "factors": [
            {
                "name": f.name,
                "levels": list(f.levels),
                "p": [float(x) for x in f.assignment_probs],
            }
            for f in design.factors
        ]
    }


def design_from_json(doc) -> ConjointDesign:
    if isinstance(doc, str):
        try:
            doc = json.loads(doc)
        except json.JSONDecodeError as e:
            raise SchemaError(f"design JSON does not parse: {e}") from None
    if not isinstance(doc, dict) or "factors" not in doc:
        raise SchemaError("design JSON must be an object with a 'factors' array")
    factors = doc["factors"]
    if not isinstance(factors, list) or not factors:
        raise SchemaError("'factors' must be a nonempty array")
    specs = []
    for i, f in enumerate(factors):
        if not isinstance(f, dict):
            raise SchemaError(f"factor {i} is not an object")
        missing = {"name", "levels", "p"} - set(f)
        if missing:
            raise SchemaError(f"factor {i} missing keys: {sorted(missing)}")
        specs.append(FactorSpec(str(f["name"]), tuple(f["levels"]), f["p"]))
    return ConjointDesign(tuple(specs))


def load_design(path) -> ConjointDesign:
    with open(path, "r", encoding="utf-8") as fh:
        return design_from_json(fh.read())


def save_design(design: ConjointDesign, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(design_to_json(design), fh, indent=2)
        fh.write("\n")
