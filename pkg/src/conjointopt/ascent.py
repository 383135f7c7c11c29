"""Gradient solvers for penalized intervention objectives.

Two objective families share the machinery here:

  * parametric: Q(pi) evaluated through a fitted outcome model, used by the
    two-step procedure (fit once, then optimize the fitted surface), and
  * weighting: an inverse-probability-weighted sample mean, used by the
    one-step procedure that optimizes directly on held-out data.

Both are maximized over softmax-parameterized factor distributions, so the
simplex constraints are unconditionally satisfied. Line search only ever
accepts ascent steps, which keeps objective traces monotone.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

from .dataio import ForcedChoiceDataset, ProfileSample, as_profile_sample, fold_assignments, split_dataset
from .design import (
    ConjointDesign,
    ProfileDistribution,
    SoftmaxParams,
    softmax_jacobian_factor,
    softmax_to_distribution,
)
from .errors import InvalidParameterError, NumericalFailureError, ValidationError
from .estim import q_gradient_pi, q_parametric, q_weighting
from .model import FitSpec, OutcomeModel, fit_outcome_model

PENALTY_KINDS = ("l2", "max_prob")
_TIE_TOL = 1e-12
_SELECTION_Z = 1.96  # fixed multiplier in the lambda-selection criterion
_SATURATION_BOUND = 15.0  # softmax coordinates past this are corner artifacts


@dataclass(frozen=True)
class PenaltyConfig:
    """Penalty on the intervention distribution, scaled by `lam`."""

    kind: str = "l2"
    lam: float = 0.1

    def __post_init__(self):
        if self.kind not in PENALTY_KINDS:
            raise InvalidParameterError(f"penalty kind must be one of {PENALTY_KINDS}")
        if not math.isfinite(self.lam) or self.lam < 0.0:
            raise InvalidParameterError("penalty weight must be finite and >= 0")


def _argmax_lowest(values: np.ndarray) -> int:
    # ties within _TIE_TOL of the max resolve to the lowest index
    top = values.max()
    return int(np.nonzero(values >= top - _TIE_TOL)[0][0])


def penalty_value_raw(pis, assign, support_size: float, penalty: PenaltyConfig) -> float:
    """Penalty on bare per-factor probability arrays (hot-path variant)."""
    if penalty.kind == "l2":
        total = 0.0
        for arr, p in zip(pis, assign):
            total += float(np.sum((arr - p) ** 2))
        return penalty.lam * total
    prod = 1.0
    for arr in pis:
        prod *= float(arr.max())
    return penalty.lam * support_size * prod


def penalty_gradient_raw(pis, assign, support_size: float, penalty: PenaltyConfig):
    """d(penalty)/d(pi_dl) over full level sets, one array per factor."""
    if penalty.kind == "l2":
        return [2.0 * penalty.lam * (arr - p) for arr, p in zip(pis, assign)]
    maxes = [float(arr.max()) for arr in pis]
    prod = math.prod(maxes)
    out = []
    for d, arr in enumerate(pis):
        g = np.zeros(arr.size)
        rest = prod / maxes[d] if maxes[d] > 0.0 else 0.0
        g[_argmax_lowest(arr)] = penalty.lam * support_size * rest
        out.append(g)
    return out


def penalty_value(pi: ProfileDistribution, penalty: PenaltyConfig) -> float:
    design = pi.design
    return penalty_value_raw(
        [pi.factor(d) for d in range(design.n_factors)],
        [f.assignment_probs for f in design.factors],
        float(design.support_size()),
        penalty,
    )


def penalty_gradient_pi(pi: ProfileDistribution, penalty: PenaltyConfig) -> list[np.ndarray]:
    """d(penalty)/d(pi_dl) over full level sets, one array per factor."""
    design = pi.design
    return penalty_gradient_raw(
        [pi.factor(d) for d in range(design.n_factors)],
        [f.assignment_probs for f in design.factors],
        float(design.support_size()),
        penalty,
    )


# ---------------------------------------------------------------------------
# parametric objective (model-based)

def objective_parametric(
    a: SoftmaxParams,
    model: OutcomeModel,
    penalty: PenaltyConfig,
    opponent: ProfileDistribution | None = None,
) -> float:
    pi = softmax_to_distribution(a)
    if model.response == "choice":
        opp = opponent if opponent is not None else model.design.assignment()
        q = q_parametric(model, pi, opp)
    else:
        if opponent is not None:
            raise ValidationError("direct-response objectives take no opponent")
        q = q_parametric(model, pi)
    return q - penalty_value(pi, penalty)


def gradient_parametric(
    a: SoftmaxParams,
    model: OutcomeModel,
    penalty: PenaltyConfig,
    opponent: ProfileDistribution | None = None,
) -> np.ndarray:
    """Exact gradient in softmax coordinates, stacked across factors."""
    pi = softmax_to_distribution(a)
    if model.response == "choice" and opponent is None:
        opponent = model.design.assignment()
    qg = q_gradient_pi(model, pi)
    pg = penalty_gradient_pi(pi, penalty)
    parts = []
    for d in range(a.design.n_factors):
        J = softmax_jacobian_factor(pi.factor(d))
        parts.append(J.T @ (qg[d] - pg[d]))
    return np.concatenate(parts)


# ---------------------------------------------------------------------------
# weighting objective (design-based, direct on data)

def _weight_columns(sample: ProfileSample, pi: ProfileDistribution) -> np.ndarray:
    design = sample.design
    n = sample.profiles.shape[0]
    w = np.ones(n)
    for d, f in enumerate(design.factors):
        ratios = pi.factor(d) / f.assignment_probs
        w *= ratios[sample.profiles[:, d]]
    return w


def objective_weighting(
    a: SoftmaxParams, sample: ProfileSample, penalty: PenaltyConfig
) -> float:
    pi = softmax_to_distribution(a)
    return float(np.mean(per_observation_values(sample, pi, penalty)))


def per_observation_values(
    sample: ProfileSample, pi: ProfileDistribution, penalty: PenaltyConfig
) -> np.ndarray:
    """m_i such that the weighting objective is mean(m_i).

    l2: m_i = y_i w_i - lam * ||pi - p||^2.
    max_prob: m_i = y_i w_i - lam * (sigma2_hat * S * maxprob
                                     + S * maxprob * y_i^2 w_i) / n,
    an upper-bound surrogate with S the support size; outcomes are assumed
    nonnegative here (no shift is applied).
    """
    w = _weight_columns(sample, pi)
    yw = sample.y * w
    if penalty.kind == "l2":
        return yw - penalty_value(pi, penalty)
    n = sample.y.shape[0]
    size = float(sample.design.support_size())
    maxprob = pi.max_prob()
    sigma2 = float(np.var(sample.y))
    per = sigma2 * size * maxprob + size * maxprob * (sample.y**2) * w
    return yw - penalty.lam * per / n


def per_observation_gradients(
    sample: ProfileSample, pi: ProfileDistribution, penalty: PenaltyConfig
) -> np.ndarray:
    """Rows d(m_i)/d(a) in softmax coordinates, shape (n, n_free_params)."""
    design = sample.design
    n = sample.y.shape[0]
    w = _weight_columns(sample, pi)
    yw = sample.y * w
    cols = []
    for d, f in enumerate(design.factors):
        free = f.n_levels - 1
        onehot = np.zeros((n, free))
        idx = sample.profiles[:, d]
        inside = idx < free
        onehot[np.nonzero(inside)[0], idx[inside]] = 1.0
        cols.append(yw[:, None] * (onehot - pi.factor(d)[None, :free]))
    grad = np.concatenate(cols, axis=1)
    if penalty.kind == "l2":
        pg = penalty_gradient_pi(pi, penalty)
        parts = [
            softmax_jacobian_factor(pi.factor(d)).T @ pg[d]
            for d in range(design.n_factors)
        ]
        grad -= np.concatenate(parts)[None, :]
        return grad
    # max_prob: per-observation penalty depends on i through y_i^2 w_i
    size = float(design.support_size())
    maxprob = pi.max_prob()
    sigma2 = float(np.var(sample.y))
    maxgrad_pi = penalty_gradient_pi(pi, replace(penalty, lam=1.0 / size))
    maxgrad = np.concatenate(
        [
            softmax_jacobian_factor(pi.factor(d)).T @ maxgrad_pi[d]
            for d in range(design.n_factors)
        ]
    )  # d(maxprob)/d(a)
    y2w = (sample.y**2) * w
    wcols = []
    for d, f in enumerate(design.factors):
        free = f.n_levels - 1
        onehot = np.zeros((n, free))
        idx = sample.profiles[:, d]
        inside = idx < free
        onehot[np.nonzero(inside)[0], idx[inside]] = 1.0
        wcols.append(y2w[:, None] * (onehot - pi.factor(d)[None, :free]))
    dy2w = np.concatenate(wcols, axis=1)  # rows d(y_i^2 w_i)/da
    pen_rows = sigma2 * size * maxgrad[None, :] + size * (
        maxgrad[None, :] * y2w[:, None] + maxprob * dy2w
    )
    return grad - penalty.lam * pen_rows / n


def gradient_weighting(
    a: SoftmaxParams, sample: ProfileSample, penalty: PenaltyConfig
) -> np.ndarray:
    pi = softmax_to_distribution(a)
    return per_observation_gradients(sample, pi, penalty).mean(axis=0)


# ---------------------------------------------------------------------------
# ascent loop

@dataclass(frozen=True)
class AscentConfig:
    step0: float = 0.1
    max_halvings: int = 40
    tol: float = 1e-8
    max_steps: int = 5000


@dataclass(frozen=True)
class StrategyEstimate:
    """An optimized intervention with its provenance and diagnostics."""

    pi_star: ProfileDistribution
    a_star: SoftmaxParams
    q_value: float | None
    lam: float
    penalty_kind: str
    method: str
    converged: bool
    grad_sup: float
    objective_trace: tuple[float, ...] = ()
    se_q: float | None = None
    se_pi: np.ndarray | None = None
    inference: object = None


def _run_ascent(a0, value, grad, cfg: AscentConfig):
    """Generic monotone ascent with per-step backtracking line search.

    Returns (a_stacked, trace, converged, grad_sup).
    """
    a = np.asarray(a0, dtype=float).copy()
    f = value(a)
    if not math.isfinite(f):
        raise NumericalFailureError("objective is not finite at the start point")
    trace = [f]
    converged = False
    g = grad(a)
    for _ in range(cfg.max_steps):
        sup = float(np.abs(g).max()) if g.size else 0.0
        if not np.all(np.isfinite(g)):
            raise NumericalFailureError(
                "gradient is not finite", trace=tuple(trace)
            )
        if sup <= cfg.tol:
            converged = True
            break
        step = cfg.step0
        improved = False
        for _ in range(cfg.max_halvings + 1):
            cand = a + step * g
            fc = value(cand)
            if math.isfinite(fc) and fc > f:
                a, f = cand, fc
                improved = True
                break
            step *= 0.5
        if not improved:
            break  # stalled: no ascent direction at the smallest step
        trace.append(f)
        g = grad(a)
    sup = float(np.abs(g).max()) if g.size else 0.0
    if sup <= cfg.tol:
        converged = True
    return a, tuple(trace), converged, sup


def maximize(
    model: OutcomeModel,
    penalty: PenaltyConfig,
    opponent: ProfileDistribution | None = None,
    start: SoftmaxParams | None = None,
    config: AscentConfig = AscentConfig(),
) -> StrategyEstimate:
    """Maximize the model-based objective over softmax coordinates."""
    design = model.design
    a0 = start if start is not None else SoftmaxParams.zeros(design)
    value = lambda v: objective_parametric(
        SoftmaxParams.from_stacked(design, v), model, penalty, opponent
    )
    grad = lambda v: gradient_parametric(
        SoftmaxParams.from_stacked(design, v), model, penalty, opponent
    )
    vec, trace, converged, sup = _run_ascent(a0.stacked(), value, grad, config)
    polished = _root_polish(vec, value, grad, sup, max_abs=_SATURATION_BOUND)
    if polished is not None:
        vec, sup = polished
        converged = converged or sup <= config.tol
    a_star = SoftmaxParams.from_stacked(design, vec)
    pi_star = softmax_to_distribution(a_star)
    if model.response == "choice":
        opp = opponent if opponent is not None else design.assignment()
        q = q_parametric(model, pi_star, opp)
    else:
        q = q_parametric(model, pi_star)
    return StrategyEstimate(
        pi_star=pi_star,
        a_star=a_star,
        q_value=q,
        lam=penalty.lam,
        penalty_kind=penalty.kind,
        method="ascent",
        converged=converged,
        grad_sup=sup,
        objective_trace=trace,
    )


def maximize_weighting(
    sample: ProfileSample,
    penalty: PenaltyConfig,
    start: SoftmaxParams | None = None,
    config: AscentConfig = AscentConfig(),
) -> StrategyEstimate:
    """Full-batch ascent on the weighting objective."""
    design = sample.design
    a0 = start if start is not None else SoftmaxParams.zeros(design)
    value = lambda v: objective_weighting(
        SoftmaxParams.from_stacked(design, v), sample, penalty
    )
    grad = lambda v: gradient_weighting(
        SoftmaxParams.from_stacked(design, v), sample, penalty
    )
    vec, trace, converged, sup = _run_ascent(a0.stacked(), value, grad, config)
    a_star = SoftmaxParams.from_stacked(design, vec)
    pi_star = softmax_to_distribution(a_star)
    return StrategyEstimate(
        pi_star=pi_star,
        a_star=a_star,
        q_value=q_weighting(sample, pi_star, "ht"),
        lam=penalty.lam,
        penalty_kind=penalty.kind,
        method="weighting_ascent",
        converged=converged,
        grad_sup=sup,
        objective_trace=trace,
    )


def _root_polish(x0: np.ndarray, value, grad, sup0: float, max_abs: float | None = None):
    """Sharpen an ascent solution by root-solving its first-order conditions.

    A halving line search cannot certify gradients much below the square
    root of float64 epsilon times the objective scale; downstream numerical
    Jacobians and estimating equations want them at machine zero. Returns
    (x, sup) for an accepted root, else None. A root is accepted only when
    it is finite, strictly reduces the gradient sup-norm, and does not sit
    below the ascent value (which would mean a different stationary point,
    not a sharpened version of this one).

    Softmax saturation makes every simplex corner a spurious root at
    infinity; `max_abs` rejects roots that ran there, so callers whose
    output seeds further solves (warm starts, finite differences) never
    receive a coordinate vector with vanishing gradients everywhere.
    """
    from scipy.optimize import root

    if x0.size == 0:
        return None
    try:
        sol = root(grad, x0, method="hybr")
    except Exception:  # noqa: BLE001 - polish is best effort
        return None
    x = sol.x
    if not np.all(np.isfinite(x)):
        return None
    if max_abs is not None and float(np.max(np.abs(x))) > max_abs:
        return None
    sup_new = float(np.max(np.abs(grad(x))))
    if sup_new >= sup0:
        return None
    v0 = value(x0)
    v_new = value(x)
    if not math.isfinite(v_new) or v_new < v0 - 1e-9 * (1.0 + abs(v0)):
        return None
    return x, sup_new


def _foc_polish(
    sample: ProfileSample,
    penalty: PenaltyConfig,
    est: StrategyEstimate,
    tol: float,
) -> StrategyEstimate:
    """Root-polish for the weighting (design-based) objective."""
    design = sample.design
    value = lambda v: objective_weighting(
        SoftmaxParams.from_stacked(design, v), sample, penalty
    )
    grad = lambda v: gradient_weighting(
        SoftmaxParams.from_stacked(design, v), sample, penalty
    )
    polished = _root_polish(est.a_star.stacked(), value, grad, est.grad_sup)
    if polished is None:
        return est
    x, sup_new = polished
    a_new = SoftmaxParams.from_stacked(design, x)
    pi_new = softmax_to_distribution(a_new)
    return replace(
        est,
        pi_star=pi_new,
        a_star=a_new,
        q_value=q_weighting(sample, pi_new, "ht"),
        converged=bool(est.converged or sup_new <= tol),
        grad_sup=sup_new,
    )


# ---------------------------------------------------------------------------
# stochastic ascent on the weighting objective

@dataclass(frozen=True)
class SGAConfig:
    batch_size: int = 32
    step0: float = 0.05
    decay: float = 0.01  # step at epoch e is step0 / (1 + decay * e)
    epochs: int = 200


def stochastic_ascent(
    sample: ProfileSample,
    penalty: PenaltyConfig,
    seed: int,
    start: SoftmaxParams | None = None,
    config: SGAConfig = SGAConfig(),
) -> SoftmaxParams:
    """Minibatch stochastic gradient ascent with seeded epoch shuffles."""
    design = sample.design
    a = (start if start is not None else SoftmaxParams.zeros(design)).stacked()
    n = sample.y.shape[0]
    rng = np.random.default_rng(np.random.SeedSequence([seed]))
    for epoch in range(config.epochs):
        step = config.step0 / (1.0 + config.decay * epoch)
        order = rng.permutation(n)
        for lo in range(0, n, config.batch_size):
            rows = order[lo : lo + config.batch_size]
            batch = ProfileSample(design, sample.profiles[rows], sample.y[rows])
            pi = softmax_to_distribution(SoftmaxParams.from_stacked(design, a))
            g = per_observation_gradients(batch, pi, penalty).mean(axis=0)
            if not np.all(np.isfinite(g)):
                raise NumericalFailureError("stochastic gradient is not finite")
            a = a + step * g
    return SoftmaxParams.from_stacked(design, a)


# ---------------------------------------------------------------------------
# two-step procedure: fit the model once, optimize per penalty weight

@dataclass(frozen=True)
class TwoStepConfig:
    fit: FitSpec = FitSpec()
    penalty_kind: str = "l2"
    opponent: ProfileDistribution | None = None
    ascent: AscentConfig = AscentConfig()
    fd_step_scale: float = 1e-5
    richardson: bool = True
    interior_margin: float = 0.0  # extra margin demanded of closed solutions


@dataclass(frozen=True)
class LambdaRow:
    lam: float
    q_value: float
    se_q: float
    criterion: float
    route: str


@dataclass(frozen=True)
class TwoStepResult:
    estimate: StrategyEstimate
    model: OutcomeModel
    lambda_grid: tuple[float, ...]
    table: tuple[LambdaRow, ...]
    lambda_star: float


def solve_profile(
    model: OutcomeModel,
    penalty: PenaltyConfig,
    opponent: ProfileDistribution | None = None,
    ascent_config: AscentConfig = AscentConfig(),
    warm: SoftmaxParams | None = None,
    route: str | None = None,
) -> StrategyEstimate:
    """Solve one penalized problem, closed form when it applies.

    The closed form is used for l2 penalties when its solution is strictly
    inside the simplex; otherwise (or when `route` forces it) the gradient
    solver runs. `route` pins the branch so repeated solves under perturbed
    coefficients stay on one code path.
    """
    design = model.design
    if route is None:
        route = "ascent"
        if penalty.kind == "l2":
            from . import closed
            from .errors import LambdaTooSmallError

            try:
                sol = closed.solve_for_coding(model, penalty.lam)
            except LambdaTooSmallError:
                sol = None
            if (
                sol is not None
                and sol.valid
                and all(v.min() > 0.0 and v.max() < 1.0 for v in sol.pi_raw)
            ):
                route = "closed"
    if route == "closed":
        from . import closed

        sol = closed.solve_for_coding(model, penalty.lam)
        pi = sol.distribution()
        from .design import distribution_to_softmax

        a_star = distribution_to_softmax(pi)
        if model.response == "choice":
            opp = opponent if opponent is not None else design.assignment()
            q = q_parametric(model, pi, opp)
        else:
            q = q_parametric(model, pi)
        return StrategyEstimate(
            pi_star=pi,
            a_star=a_star,
            q_value=q,
            lam=penalty.lam,
            penalty_kind=penalty.kind,
            method="closed",
            converged=True,
            grad_sup=sol.foc_residual,
        )
    return maximize(model, penalty, opponent, warm, ascent_config)


def two_step_estimate(
    data: ForcedChoiceDataset,
    lambda_grid,
    config: TwoStepConfig = TwoStepConfig(),
) -> TwoStepResult:
    """Fit once, solve per penalty weight, select by the lower-CI criterion
    q_hat - 1.96 se, then attach full inference at the selected weight."""
    from .infer import delta_method

    grid = tuple(float(v) for v in lambda_grid)
    if not grid or any(v <= 0 or not math.isfinite(v) for v in grid):
        raise InvalidParameterError("lambda grid must be positive and finite")
    model = fit_outcome_model(data, config.fit)
    rows = []
    solutions = []
    warm = None
    for lam in grid:
        penalty = PenaltyConfig(config.penalty_kind, lam)
        est = solve_profile(
            model, penalty, config.opponent, config.ascent, warm=warm
        )
        warm = est.a_star
        inf = delta_method(
            model,
            est,
            penalty,
            opponent=config.opponent,
            ascent_config=config.ascent,
            fd_step_scale=config.fd_step_scale,
            richardson=config.richardson,
        )
        rows.append(
            LambdaRow(
                lam=lam,
                q_value=est.q_value,
                se_q=inf.se_q,
                criterion=est.q_value - _SELECTION_Z * inf.se_q,
                route=est.method,
            )
        )
        solutions.append((est, inf))
    best = int(np.argmax([r.criterion for r in rows]))
    est, inf = solutions[best]
    est = replace(est, se_q=inf.se_q, se_pi=inf.se_pi, inference=inf)
    return TwoStepResult(
        estimate=est,
        model=model,
        lambda_grid=grid,
        table=tuple(rows),
        lambda_star=grid[best],
    )


# ---------------------------------------------------------------------------
# one-step procedure: split, cross-validate the weight, optimize held out

@dataclass(frozen=True)
class OneStepConfig:
    penalty_kind: str = "l2"
    split_fraction: float = 0.5
    folds: int = 5
    seed: int = 0
    sga: SGAConfig = SGAConfig()
    eval_weighting: str = "hajek"  # out-of-fold value estimator
    polish_max_steps: int = 20000


@dataclass(frozen=True)
class OneStepResult:
    estimate: StrategyEstimate
    lambda_grid: tuple[float, ...]
    lambda_star: float
    cv_values: np.ndarray  # (n_lambda, n_folds) out-of-fold value estimates
    cv_criterion: tuple[float, ...]
    split_seed: int
    n_selection: int
    n_estimation: int
    inference: object = None


def one_step_estimate(
    data: ForcedChoiceDataset,
    lambda_grid,
    config: OneStepConfig = OneStepConfig(),
) -> OneStepResult:
    """Respondent-level split; CV on the first half picks the penalty
    weight, stochastic + full-batch ascent on the second half delivers the
    estimate, with sandwich inference on that half."""
    from .infer import m_estimation_sandwich

    grid = tuple(float(v) for v in lambda_grid)
    if not grid or any(v <= 0 or not math.isfinite(v) for v in grid):
        raise InvalidParameterError("lambda grid must be positive and finite")
    if config.folds < 2:
        raise InvalidParameterError("cross-validation needs at least 2 folds")
    design = data.design
    parts = split_dataset(data, config.split_fraction, config.seed)
    d_select, d_estim = parts.first, parts.second
    respondents = d_select.respondents()
    if len(respondents) < config.folds:
        raise ValidationError(
            f"selection half has {len(respondents)} respondents, "
            f"fewer than {config.folds} folds"
        )
    folds = fold_assignments(respondents, config.folds, config.seed + 1)
    cv = np.zeros((len(grid), config.folds))
    for j, lam in enumerate(grid):
        penalty = PenaltyConfig(config.penalty_kind, lam)
        for k in range(config.folds):
            infold = d_select.subset(lambda r, k=k: folds[r.respondent_id] != k)
            outfold = d_select.subset(lambda r, k=k: folds[r.respondent_id] == k)
            a_hat = stochastic_ascent(
                as_profile_sample(infold),
                penalty,
                seed=_fold_seed(config.seed, j, k),
                config=config.sga,
            )
            pi_hat = softmax_to_distribution(a_hat)
            cv[j, k] = q_weighting(
                as_profile_sample(outfold), pi_hat, config.eval_weighting
            )
    means = cv.mean(axis=1)
    sds = cv.std(axis=1, ddof=1)
    criterion = means - _SELECTION_Z * sds
    best = int(np.argmax(criterion))
    lam_star = grid[best]
    penalty = PenaltyConfig(config.penalty_kind, lam_star)
    sample = as_profile_sample(d_estim)
    a_rough = stochastic_ascent(
        sample, penalty, seed=_fold_seed(config.seed, len(grid), 0),
        config=config.sga,
    )
    n2 = sample.y.shape[0]
    polish_cfg = AscentConfig(
        tol=min(1e-8, 1e-6 / (2.0 * n2)), max_steps=config.polish_max_steps
    )
    est = maximize_weighting(sample, penalty, start=a_rough, config=polish_cfg)
    est = _foc_polish(sample, penalty, est, polish_cfg.tol)
    inference = m_estimation_sandwich(sample, est, penalty)
    est = replace(
        est,
        method="one_step",
        se_q=inference.se_q,
        se_pi=inference.se_pi,
        inference=inference,
    )
    return OneStepResult(
        estimate=est,
        lambda_grid=grid,
        lambda_star=lam_star,
        cv_values=cv,
        cv_criterion=tuple(criterion),
        split_seed=config.seed,
        n_selection=len(d_select.records),
        n_estimation=n2,
        inference=inference,
    )


def _fold_seed(base: int, j: int, k: int) -> int:
    return (base * 1_000_003 + j * 1009 + k) % (2**63)


# ---------------------------------------------------------------------------
# penalty-weight scaling diagnostic

@dataclass(frozen=True)
class LambdaScalingReport:
    n_values: tuple[int, ...]
    ratios: tuple[float, ...]
    satisfied: bool


def _sup_l2_distance(design: ConjointDesign) -> float:
    """sup over the product simplex of ||pi - p||_2, attained at vertices."""
    total = 0.0
    for f in design.factors:
        p = f.assignment_probs
        best = 0.0
        for v in range(f.n_levels):
            e = np.zeros(f.n_levels)
            e[v] = 1.0
            best = max(best, float(np.sum((e - p) ** 2)))
        total += best
    return math.sqrt(total)


def check_lambda_scaling(schedule, n_values, design: ConjointDesign) -> LambdaScalingReport:
    """Verify that the l2 penalty's gradient contribution, at its worst point
    on the simplex, shrinks relative to root-n sampling noise.

    `schedule` maps a sample size to a penalty weight. The reported ratio at
    n is 2 lam(n) sup||pi - p|| / sqrt(n); a schedule whose ratio fails to
    decay from the smallest to the largest n is flagged.
    """
    ns = tuple(int(v) for v in n_values)
    if len(ns) < 2 or any(v <= 0 for v in ns) or sorted(ns) != list(ns):
        raise InvalidParameterError("n_values must be >= 2 increasing positive sizes")
    sup = _sup_l2_distance(design)
    ratios = []
    for n in ns:
        lam = float(schedule(n))
        if not math.isfinite(lam) or lam < 0:
            raise InvalidParameterError(f"schedule produced invalid weight at n={n}")
        ratios.append(2.0 * lam * sup / math.sqrt(n))
    ratios = tuple(ratios)
    if all(r == 0.0 for r in ratios):
        satisfied = True
    else:
        satisfied = ratios[-1] < ratios[0] * (1.0 - 1e-12)
    return LambdaScalingReport(n_values=ns, ratios=ratios, satisfied=satisfied)
