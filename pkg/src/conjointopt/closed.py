"""Closed-form optimizers for L2-penalized intervention objectives.

Each solver assembles a linear system C pi = B from model coefficients and
solves it by partial-pivot LU. Solutions are reported raw: out-of-simplex
components are never projected, only flagged, and callers should fall back
to the gradient solver when `valid` is false.

Conventions differ by coding because the penalty is parameterized
differently:
  * baseline coding ("nonchoice" solvers): the residual level is substituted
    into the penalty, so the system carries -4*lam diagonals and -2*lam
    within-factor couplings.
  * sum_to_zero coding (average-case solver): all levels are unknowns, the
    diagonal is -2*lam, and the level constraint re-emerges from the
    zero-sum structure of the coefficients.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np
import scipy.linalg

from .design import ConjointDesign, ProfileDistribution
from .errors import LambdaTooSmallError, ValidationError
from .model import OutcomeModel

_SINGULARITY_REL_TOL = 1e-12
_VALID_TOL = 1e-12


@dataclass(frozen=True)
class LinearSystem:
    """C pi = B with an index map from rows to (factor, level) pairs."""

    matrix: np.ndarray
    rhs: np.ndarray
    index: tuple  # row r corresponds to coefficient (factor d, level l)


@dataclass(frozen=True)
class ClosedFormSolution:
    """Raw per-factor probabilities (full level sets), validity flag, and the
    solved system. `foc_residual` is the sup norm of the objective's
    first-order conditions at the solution."""

    design: ConjointDesign
    pi_raw: tuple[np.ndarray, ...]
    valid: bool
    lam: float
    foc_residual: float
    method: str
    system: LinearSystem

    def distribution(self) -> ProfileDistribution:
        if not self.valid:
            raise ValidationError(
                "closed-form solution leaves the simplex; use the gradient solver"
            )
        # Renormalize per factor: coefficients off the coding's zero-sum
        # manifold (e.g. finite-difference perturbations of one coordinate)
        # give sums slightly away from 1. On-manifold solutions are
        # unchanged, so this extends the solution map smoothly off it.
        clipped = tuple(np.clip(v, 0.0, 1.0) for v in self.pi_raw)
        normalized = tuple(v / v.sum() for v in clipped)
        return ProfileDistribution(self.design, normalized)

    def stacked(self) -> np.ndarray:
        return np.concatenate(self.pi_raw)


def _lu_solve(C: np.ndarray, B: np.ndarray) -> np.ndarray:
    scale = np.abs(C).max()
    try:
        with warnings.catch_warnings():
            # zero pivots are detected below and reported as LambdaTooSmall
            warnings.simplefilter("ignore", scipy.linalg.LinAlgWarning)
            lu, piv = scipy.linalg.lu_factor(C)
    except scipy.linalg.LinAlgError:
        raise LambdaTooSmallError(
            "closed-form system is singular; increase the penalty weight or "
            "use the gradient solver"
        ) from None
    if np.abs(np.diag(lu)).min() <= _SINGULARITY_REL_TOL * scale:
        raise LambdaTooSmallError(
            "closed-form system is numerically singular (pivot below "
            f"{_SINGULARITY_REL_TOL} * max|C|); increase the penalty weight "
            "or use the gradient solver"
        )
    return scipy.linalg.lu_solve((lu, piv), B)


def _check_lambda(lam: float) -> float:
    lam = float(lam)
    if not np.isfinite(lam) or lam <= 0.0:
        raise ValidationError("closed-form solvers need a positive penalty weight")
    return lam


def _in_simplex(pi_raw) -> bool:
    return all(
        bool(np.all(v >= -_VALID_TOL) and np.all(v <= 1.0 + _VALID_TOL))
        for v in pi_raw
    )


def solve_binary_nonchoice(model: OutcomeModel, lam: float) -> ClosedFormSolution:
    """All-binary baseline-coded model: D unknowns, one per factor.

    System: C_dd = -4 lam, C_dd' = gamma_dd', B_d = -beta_d - 4 lam p_d,
    where index d refers to the first (non-baseline) level.
    """
    lam = _check_lambda(lam)
    design = model.design
    if model.coding != "baseline":
        raise ValidationError("binary closed form requires baseline coding")
    if any(c != 2 for c in design.level_counts):
        raise ValidationError("binary closed form requires all-binary factors")
    D = design.n_factors
    p1 = np.array([f.assignment_probs[0] for f in design.factors])
    beta = np.array([model.main[d][0] for d in range(D)])
    C = -4.0 * lam * np.eye(D)
    for d1 in range(D):
        for d2 in range(d1 + 1, D):
            g = float(model.full_gamma(d1, d2)[0, 0])
            C[d1, d2] = g
            C[d2, d1] = g
    B = -beta - 4.0 * lam * p1
    x = _lu_solve(C, B)
    pi_raw = tuple(np.array([x[d], 1.0 - x[d]]) for d in range(D))
    index = tuple((d, 0) for d in range(D))
    resid = _foc_residual_baseline(model, lam, pi_raw)
    return ClosedFormSolution(
        design=design,
        pi_raw=pi_raw,
        valid=_in_simplex(pi_raw),
        lam=lam,
        foc_residual=resid,
        method="binary_nonchoice",
        system=LinearSystem(C, B, index),
    )


def solve_multilevel_nonchoice(model: OutcomeModel, lam: float) -> ClosedFormSolution:
    """Baseline-coded model with arbitrary level counts.

    Unknowns are the non-baseline probabilities. Diagonal -4 lam, within
    factor -2 lam, across factors the interaction coefficients;
    B = -beta_dl - 4 lam p_dl - 2 lam * sum of the factor's other coded
    assignment probabilities.
    """
    lam = _check_lambda(lam)
    design = model.design
    if model.coding != "baseline":
        raise ValidationError("multilevel closed form requires baseline coding")
    index = []
    for d, f in enumerate(design.factors):
        for l in range(f.n_levels - 1):
            index.append((d, l))
    r = {dl: i for i, dl in enumerate(index)}
    m = len(index)
    C = np.zeros((m, m))
    B = np.zeros(m)
    for (d, l), i in r.items():
        f = design.factors[d]
        p = f.assignment_probs
        C[i, i] = -4.0 * lam
        for l2 in range(f.n_levels - 1):
            if l2 != l:
                C[i, r[(d, l2)]] = -2.0 * lam
        for d2 in range(design.n_factors):
            if d2 == d:
                continue
            fg = model.gamma_between(d, d2)
            for l2 in range(design.factors[d2].n_levels - 1):
                C[i, r[(d2, l2)]] = fg[l, l2]
        others = sum(p[l2] for l2 in range(f.n_levels - 1) if l2 != l)
        B[i] = -model.main[d][l] - 4.0 * lam * p[l] - 2.0 * lam * others
    x = _lu_solve(C, B)
    pi_raw = []
    for d, f in enumerate(design.factors):
        coded = np.array([x[r[(d, l)]] for l in range(f.n_levels - 1)])
        pi_raw.append(np.concatenate([coded, [1.0 - coded.sum()]]))
    pi_raw = tuple(pi_raw)
    resid = _foc_residual_baseline(model, lam, pi_raw)
    return ClosedFormSolution(
        design=design,
        pi_raw=pi_raw,
        valid=_in_simplex(pi_raw),
        lam=lam,
        foc_residual=resid,
        method="multilevel_nonchoice",
        system=LinearSystem(C, B, tuple(index)),
    )


def solve_forced_choice_average_case(model: OutcomeModel, lam: float) -> ClosedFormSolution:
    """Sum-to-zero model, opponent held at the randomization design.

    All levels are unknowns: diagonal -2 lam, no within-factor coupling,
    interaction coefficients across factors, B = -beta_dl - 2 lam p_dl. The
    zero-sum coefficient structure keeps each factor's solution summing
    to one.
    """
    lam = _check_lambda(lam)
    design = model.design
    if model.coding != "sum_to_zero":
        raise ValidationError("average-case closed form requires sum_to_zero coding")
    index = []
    for d, f in enumerate(design.factors):
        for l in range(f.n_levels):
            index.append((d, l))
    r = {dl: i for i, dl in enumerate(index)}
    m = len(index)
    C = -2.0 * lam * np.eye(m)
    B = np.zeros(m)
    for (d, l), i in r.items():
        for d2 in range(design.n_factors):
            if d2 == d:
                continue
            fg = model.gamma_between(d, d2)
            for l2 in range(design.factors[d2].n_levels):
                C[i, r[(d2, l2)]] = fg[l, l2]
        B[i] = -model.main[d][l] - 2.0 * lam * design.factors[d].assignment_probs[l]
    x = _lu_solve(C, B)
    pi_raw = []
    at = 0
    for f in design.factors:
        pi_raw.append(x[at : at + f.n_levels].copy())
        at += f.n_levels
    pi_raw = tuple(pi_raw)
    resid = _foc_residual_sum_to_zero(model, lam, pi_raw)
    return ClosedFormSolution(
        design=design,
        pi_raw=pi_raw,
        valid=_in_simplex(pi_raw),
        lam=lam,
        foc_residual=resid,
        method="forced_choice_average_case",
        system=LinearSystem(C, B, tuple(index)),
    )


def solve_for_coding(model: OutcomeModel, lam: float) -> ClosedFormSolution:
    """Dispatch on the model's coding convention."""
    if model.coding == "sum_to_zero":
        return solve_forced_choice_average_case(model, lam)
    if all(c == 2 for c in model.design.level_counts):
        return solve_binary_nonchoice(model, lam)
    return solve_multilevel_nonchoice(model, lam)


# ---------------------------------------------------------------------------
# first-order-condition residuals

def _foc_residual_baseline(model, lam, pi_raw) -> float:
    """Sup norm of dO/dpi over coded levels, residual level substituted."""
    design = model.design
    worst = 0.0
    for d, f in enumerate(design.factors):
        p = f.assignment_probs
        coded = f.n_levels - 1
        dev = pi_raw[d][:coded] - p[:coded]
        for l in range(coded):
            g = model.main[d][l]
            for d2 in range(design.n_factors):
                if d2 == d:
                    continue
                fg = model.gamma_between(d, d2)
                g += float(fg[l, : design.factors[d2].n_levels - 1]
                           @ pi_raw[d2][: design.factors[d2].n_levels - 1])
            g -= 2.0 * lam * dev[l]
            g -= 2.0 * lam * dev.sum()
            worst = max(worst, abs(g))
    return worst


def _foc_residual_sum_to_zero(model, lam, pi_raw) -> float:
    design = model.design
    worst = 0.0
    for d, f in enumerate(design.factors):
        for l in range(f.n_levels):
            g = model.main[d][l]
            for d2 in range(design.n_factors):
                if d2 == d:
                    continue
                g += float(model.gamma_between(d, d2)[l] @ pi_raw[d2])
            g -= 2.0 * lam * (pi_raw[d][l] - f.assignment_probs[l])
            worst = max(worst, abs(g))
    return worst
