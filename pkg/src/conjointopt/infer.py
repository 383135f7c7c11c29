"""Uncertainty quantification for optimized interventions.

Two routes:

  * delta method for the two-step estimator: the optimized distribution and
    its value are smooth functions of the fitted coefficients, so their
    covariance follows from the coefficient covariance through a numerical
    Jacobian (central differences, optional Richardson step-halving check);
  * M-estimation for the one-step estimator: the optimizer and the value
    estimate jointly solve a system of estimating equations, and a sandwich
    covariance built from those equations covers both sources of noise.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .dataio import ProfileSample
from .design import softmax_jacobian_factor
from .errors import InferenceFailureError, ValidationError

Z_975 = 1.959964  # normal quantile used for all reported intervals
_RICHARDSON_REL_TOL = 1e-4
_COND_LIMIT = 1e12
_FD_RESOLVE_STEP_CAP = 1000


@dataclass(frozen=True)
class InferenceResult:
    """Delta-method covariance for (q, pi) at an optimized intervention."""

    se_q: float
    se_pi: np.ndarray  # stacked over full level sets
    cov: np.ndarray  # joint covariance of (q, stacked pi)
    ci_q: tuple[float, float]
    jacobian: np.ndarray  # d(output)/d(coefficient), central differences
    jacobian_cond: float
    richardson_checked: bool
    z: float = Z_975
    method: str = "delta"


def _output_vector(estimate) -> np.ndarray:
    return np.concatenate([[estimate.q_value], estimate.pi_star.stacked()])


def propagate_covariance(
    fn,
    theta: np.ndarray,
    sigma: np.ndarray,
    fd_step_scale: float = 1e-5,
    richardson: bool = True,
    names=None,
):
    """Central-difference Jacobian of `fn` at `theta` and the covariance
    J sigma J' it implies. `fn` maps a parameter vector to an output vector
    and must be deterministic. With `richardson`, each column is recomputed
    at half the step and must agree to relative 1e-4; the half-step column
    is the one kept. Returns (J, cov) with cov symmetrized.
    """
    theta = np.asarray(theta, dtype=float)
    sigma = np.atleast_2d(np.asarray(sigma, dtype=float))
    base = np.atleast_1d(np.asarray(fn(theta), dtype=float))

    def column(j, h):
        up = theta.copy()
        dn = theta.copy()
        up[j] += h
        dn[j] -= h
        fu = np.atleast_1d(np.asarray(fn(up), dtype=float))
        fd = np.atleast_1d(np.asarray(fn(dn), dtype=float))
        return (fu - fd) / (2.0 * h)

    J = np.zeros((base.size, theta.size))
    for j in range(theta.size):
        h = fd_step_scale * (1.0 + abs(theta[j]))
        col = column(j, h)
        if richardson:
            col_half = column(j, h / 2.0)
            rel = np.max(np.abs(col - col_half) / (1.0 + np.abs(col_half)))
            if rel > _RICHARDSON_REL_TOL:
                name = names[j] if names is not None else f"parameter {j}"
                raise InferenceFailureError(
                    name,
                    f"finite-difference columns at h and h/2 disagree "
                    f"(relative {rel:.2e} > {_RICHARDSON_REL_TOL})",
                )
            col = col_half
        J[:, j] = col
    cov = J @ sigma @ J.T
    cov = 0.5 * (cov + cov.T)
    return J, cov


def delta_method(
    model,
    estimate,
    penalty,
    opponent=None,
    ascent_config=None,
    fd_step_scale: float = 1e-5,
    richardson: bool = True,
) -> InferenceResult:
    """Propagate coefficient uncertainty through the optimizer.

    The solver is re-run at perturbed coefficient vectors along each
    coordinate, holding the solve route fixed and warm-starting from the
    unperturbed solution. With `richardson` the column at step h must agree
    with the column at h/2 to relative 1e-4, else the offending coefficient
    is named in an InferenceFailureError; the h/2 column is the one kept.
    """
    from .ascent import AscentConfig, solve_profile

    if model.sigma is None:
        raise ValidationError(
            "model carries no coefficient covariance; refit with a vcov setting"
        )
    if ascent_config is None:
        ascent_config = AscentConfig()
    route = "closed" if estimate.method == "closed" else "ascent"
    # Perturbed re-solves start from the unperturbed optimum, so they need
    # few steps when the optimum is interior; when it sits on the simplex
    # boundary extra steps only extend a crawl that cancels in the central
    # difference. Cap the budget rather than inherit a large caller value.
    tight = AscentConfig(
        step0=ascent_config.step0,
        max_halvings=ascent_config.max_halvings,
        tol=min(ascent_config.tol, 1e-10),
        max_steps=min(ascent_config.max_steps, _FD_RESOLVE_STEP_CAP),
    )
    theta = model.to_theta()
    names = model.param_names()
    base_out = _output_vector(estimate)

    def pipeline(vec):
        current = vec  # visible to the error path below
        try:
            est = solve_profile(
                model.with_theta(vec),
                penalty,
                opponent,
                ascent_config=tight,
                warm=estimate.a_star,
                route=route,
            )
        except InferenceFailureError:
            raise
        except Exception as exc:  # noqa: BLE001 - converted to a named failure
            j = int(np.argmax(np.abs(current - theta)))
            raise InferenceFailureError(
                names[j], f"re-solve failed: {exc}"
            ) from exc
        return _output_vector(est)

    J, cov = propagate_covariance(
        pipeline,
        theta,
        model.sigma,
        fd_step_scale=fd_step_scale,
        richardson=richardson,
        names=names,
    )
    diag = np.clip(np.diag(cov), 0.0, None)
    se = np.sqrt(diag)
    se_q = float(se[0])
    q = float(base_out[0])
    return InferenceResult(
        se_q=se_q,
        se_pi=se[1:],
        cov=cov,
        ci_q=(q - Z_975 * se_q, q + Z_975 * se_q),
        jacobian=J,
        jacobian_cond=float(np.linalg.cond(J)),
        richardson_checked=richardson,
    )


# ---------------------------------------------------------------------------
# M-estimation for the one-step estimator

@dataclass(frozen=True)
class SandwichResult:
    """Sandwich covariance for theta = (q, softmax params)."""

    se_q: float
    se_pi: np.ndarray  # full level sets, via the softmax Jacobian
    se_a: np.ndarray
    cov_theta: np.ndarray  # V / n for theta
    ci_q: tuple[float, float]
    bread: np.ndarray
    meat: np.ndarray
    cond_bread: float
    unstable: bool
    psi_sum: np.ndarray  # sum of estimating-equation rows at the estimate
    n: int
    z: float = Z_975
    method: str = "sandwich"


def _psi_matrix(sample: ProfileSample, pi, q: float, penalty) -> np.ndarray:
    """Rows psi_i = (y_i w_i - q, per-observation objective gradients)."""
    from .ascent import _weight_columns, per_observation_gradients

    w = _weight_columns(sample, pi)
    first = sample.y * w - q
    grads = per_observation_gradients(sample, pi, penalty)
    return np.column_stack([first, grads])


def _psi_bar(sample: ProfileSample, theta: np.ndarray, design, penalty) -> np.ndarray:
    from .design import SoftmaxParams, softmax_to_distribution

    q = theta[0]
    a = SoftmaxParams.from_stacked(design, theta[1:])
    pi = softmax_to_distribution(a)
    return _psi_matrix(sample, pi, q, penalty).mean(axis=0)


def m_estimation_sandwich(sample: ProfileSample, estimate, penalty) -> SandwichResult:
    """Joint sandwich covariance at a one-step estimate.

    theta stacks the reported value and the softmax coordinates. The bread
    is a central-difference Jacobian of the averaged estimating equations;
    the meat is the uncorrected (1/n) outer-product average. A bread with
    condition number above 1e12 flags the result unstable and switches to a
    pseudo-inverse.
    """
    design = sample.design
    theta = np.concatenate([[estimate.q_value], estimate.a_star.stacked()])
    P = theta.size
    n = sample.y.shape[0]
    psi = _psi_matrix(sample, estimate.pi_star, float(theta[0]), penalty)
    meat = psi.T @ psi / n
    bread = np.zeros((P, P))
    for j in range(P):
        h = 1e-5 * (1.0 + abs(theta[j]))
        up = theta.copy()
        dn = theta.copy()
        up[j] += h
        dn[j] -= h
        bread[:, j] = (
            _psi_bar(sample, up, design, penalty)
            - _psi_bar(sample, dn, design, penalty)
        ) / (2.0 * h)
    cond = float(np.linalg.cond(bread))
    unstable = not math.isfinite(cond) or cond > _COND_LIMIT
    if unstable:
        bread_inv = np.linalg.pinv(bread)
    else:
        bread_inv = np.linalg.inv(bread)
    V = bread_inv @ meat @ bread_inv.T
    cov_theta = 0.5 * (V + V.T) / n
    se_theta = np.sqrt(np.clip(np.diag(cov_theta), 0.0, None))
    se_q = float(se_theta[0])
    # map the softmax block to the probability scale
    cov_a = cov_theta[1:, 1:]
    blocks = [
        softmax_jacobian_factor(estimate.pi_star.factor(d))
        for d in range(design.n_factors)
    ]
    total_levels = sum(design.level_counts)
    Jpi = np.zeros((total_levels, theta.size - 1))
    r0 = c0 = 0
    for b in blocks:
        rows, cols = b.shape
        Jpi[r0 : r0 + rows, c0 : c0 + cols] = b
        r0 += rows
        c0 += cols
    cov_pi = Jpi @ cov_a @ Jpi.T
    se_pi = np.sqrt(np.clip(np.diag(cov_pi), 0.0, None))
    q = float(theta[0])
    return SandwichResult(
        se_q=se_q,
        se_pi=se_pi,
        se_a=se_theta[1:],
        cov_theta=cov_theta,
        ci_q=(q - Z_975 * se_q, q + Z_975 * se_q),
        bread=bread,
        meat=meat,
        cond_bread=cond,
        unstable=unstable,
        psi_sum=psi.sum(axis=0),
        n=n,
    )


def fixed_intervention_sandwich(sample: ProfileSample, pi) -> SandwichResult:
    """Sandwich inference for the weighting estimate at a FIXED intervention.

    Only the mean is estimated, so the estimating equation is
    psi_i = y_i w_i - q, the bread is exactly -1, and the standard error
    reduces to the uncorrected sample standard deviation of y_i w_i over
    sqrt(n).
    """
    from .ascent import _weight_columns

    if sample.design.level_counts != pi.design.level_counts:
        raise ValidationError("pi does not match the data design")
    w = _weight_columns(sample, pi)
    n = sample.y.shape[0]
    yw = sample.y * w
    q = float(np.mean(yw))
    psi = (yw - q)[:, None]
    meat = np.array([[float(np.mean((yw - q) ** 2))]])
    bread = np.array([[-1.0]])
    cov_theta = meat / n  # bread is its own inverse here
    se_q = float(math.sqrt(cov_theta[0, 0]))
    return SandwichResult(
        se_q=se_q,
        se_pi=np.zeros(sum(sample.design.level_counts)),
        se_a=np.zeros(0),
        cov_theta=cov_theta,
        ci_q=(q - Z_975 * se_q, q + Z_975 * se_q),
        bread=bread,
        meat=meat,
        cond_bread=1.0,
        unstable=False,
        psi_sum=psi.sum(axis=0),
        n=n,
    )
