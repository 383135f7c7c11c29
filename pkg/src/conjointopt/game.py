"""Two-stage adversarial optimization over factorial profile distributions.

Two sides field candidates from the same factorial space. Each candidate
must first survive its own side's selection stage against a challenger drawn
from a fixed distribution, then faces the other side's candidate in a
head-to-head stage. Stages are scored by fitted pairwise-choice models, one
per evaluating group, with predictions clipped to [0, 1] when the payoff
tables are built.

The payoff is side A's overall success probability, mixing the two groups'
head-to-head assessments weighted by group share and by each group's own
selection-stage survival:

    payoff = wA * E[ GA(tA, tB) * HA(tA, tA') ]
           + wB * E[ GB(tA, tB) * HB(tB, tB') ],

where GA and GB BOTH score "A's profile beats B's profile" (under group A's
and group B's choice model respectively), and HA/HB score each side's
candidate surviving its own selection stage against the challenger draw
tA'/tB'. Candidates and challengers are drawn independently, so the
expectation is bilinear in the per-profile probability vectors:

    payoff(qA, qB) = qA' M qB,
    M = wA * (GA * PA[:, None]) + wB * (GB * PB[None, :]),

with PA/PB the selection-stage success probabilities averaged over the
challenger distributions. Side A maximizes and side B minimizes the
penalized value

    V = payoff - penalty_A(pi_A) + penalty_B(pi_B),

so each side pays its own penalty for moving away from the randomization
design.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import block_diag as scipy_block_diag

from .ascent import (
    PenaltyConfig,
    penalty_gradient_pi,
    penalty_gradient_raw,
    penalty_value,
    penalty_value_raw,
)
from .design import (
    ConjointDesign,
    ProfileDistribution,
    SoftmaxParams,
    softmax_jacobian_factor,
    softmax_to_distribution,
    support_array,
    support_probabilities,
)
from .errors import (
    GridTooLargeError,
    InvalidParameterError,
    SupportTooLargeError,
    ValidationError,
)
from .model import OutcomeModel

PAIR_TABLE_CAP = 200_000  # max entries in one pairwise payoff table
_WEIGHT_TOL = 1e-12


@dataclass(frozen=True)
class InstitutionSpec:
    """Models and weights defining the two-stage contest.

    All four models are pairwise-choice models over `design`'s factor
    structure. Head-to-head models are evaluated with side A's profile in
    the first slot and side B's in the second, and both score the
    probability that A's profile wins that matchup: `general_a` under group
    A's electorate model, `general_b` under group B's. Selection models are
    evaluated with the own candidate first and the challenger second.
    `weight_a`/`weight_b` are the group shares.
    """

    design: ConjointDesign
    primary_a: OutcomeModel
    primary_b: OutcomeModel
    general_a: OutcomeModel
    general_b: OutcomeModel
    weight_a: float = 0.5
    weight_b: float = 0.5
    challenger_a: ProfileDistribution | None = None
    challenger_b: ProfileDistribution | None = None

    def __post_init__(self):
        for name in ("primary_a", "primary_b", "general_a", "general_b"):
            m = getattr(self, name)
            if m.response != "choice":
                raise ValidationError(f"{name} must be a pairwise-choice model")
            if m.design.level_counts != self.design.level_counts:
                raise ValidationError(f"{name} was fitted on a different factor structure")
        if self.weight_a < 0 or self.weight_b < 0:
            raise InvalidParameterError("stage weights must be nonnegative")
        if abs(self.weight_a + self.weight_b - 1.0) > _WEIGHT_TOL:
            raise InvalidParameterError("stage weights must sum to one")
        for name in ("challenger_a", "challenger_b"):
            c = getattr(self, name)
            if c is not None and c.design.level_counts != self.design.level_counts:
                raise ValidationError(f"{name} does not match the design")

    def challenger(self, side: str) -> ProfileDistribution:
        c = self.challenger_a if side == "a" else self.challenger_b
        if c is not None:
            return c
        # default: uniform over levels, independent of the assignment design
        return ProfileDistribution(
            self.design,
            tuple(np.full(f.n_levels, 1.0 / f.n_levels) for f in self.design.factors),
        )


class PayoffEvaluator:
    """Precomputed payoff tables for one institution."""

    def __init__(self, spec: InstitutionSpec):
        design = spec.design
        size = design.support_size()
        if size * size > PAIR_TABLE_CAP:
            raise SupportTooLargeError(size * size, PAIR_TABLE_CAP)
        self.spec = spec
        self.design = design
        self.support = support_array(design)
        K = self.support.shape[0]
        left = np.repeat(self.support, K, axis=0)
        right = np.tile(self.support, (K, 1))

        def table(model):
            return np.clip(model.predict_choice(left, right), 0.0, 1.0).reshape(K, K)

        GA = table(spec.general_a)
        GB = table(spec.general_b)
        HA = table(spec.primary_a)
        HB = table(spec.primary_b)
        qca = support_probabilities(spec.challenger("a"), self.support)
        qcb = support_probabilities(spec.challenger("b"), self.support)
        self.select_a = HA @ qca  # per-profile selection-stage success, side A
        self.select_b = HB @ qcb
        self.M = spec.weight_a * GA * self.select_a[:, None] + (
            spec.weight_b * GB * self.select_b[None, :]
        )
        # hot-path constants
        self._cols = [np.ascontiguousarray(self.support[:, d]) for d in range(design.n_factors)]
        self._assign = [f.assignment_probs for f in design.factors]
        self._size = float(size)

    def q_vector(self, pi: ProfileDistribution) -> np.ndarray:
        return support_probabilities(pi, self.support)

    def _q_raw(self, pis) -> np.ndarray:
        q = pis[0][self._cols[0]]
        for d in range(1, len(self._cols)):
            q = q * pis[d][self._cols[d]]
        return q

    def payoff(self, pi_a: ProfileDistribution, pi_b: ProfileDistribution) -> float:
        qa = self.q_vector(pi_a)
        qb = self.q_vector(pi_b)
        return float(qa @ self.M @ qb)

    def value(
        self,
        pi_a: ProfileDistribution,
        pi_b: ProfileDistribution,
        penalty_a: PenaltyConfig,
        penalty_b: PenaltyConfig,
    ) -> float:
        return (
            self.payoff(pi_a, pi_b)
            - penalty_value(pi_a, penalty_a)
            + penalty_value(pi_b, penalty_b)
        )

    def _support_gradient(self, s: np.ndarray, pi: ProfileDistribution) -> np.ndarray:
        return self._support_gradient_raw(
            s, [pi.factor(d) for d in range(self.design.n_factors)]
        )

    def _support_gradient_raw(self, s: np.ndarray, pis) -> np.ndarray:
        """Map d/dq weights s_t = q_t * u_t into free softmax coordinates."""
        total = s.sum()
        parts = []
        for d, f in enumerate(self.design.factors):
            sums = np.bincount(self._cols[d], weights=s, minlength=f.n_levels)
            parts.append(sums[: f.n_levels - 1] - pis[d][: f.n_levels - 1] * total)
        return np.concatenate(parts)

    def value_gradients(
        self,
        pi_a: ProfileDistribution,
        pi_b: ProfileDistribution,
        penalty_a: PenaltyConfig,
        penalty_b: PenaltyConfig,
    ) -> tuple[np.ndarray, np.ndarray]:
        """dV/da for both sides in their own softmax coordinates."""
        qa = self.q_vector(pi_a)
        qb = self.q_vector(pi_b)
        ga = self._support_gradient(qa * (self.M @ qb), pi_a)
        gb = self._support_gradient(qb * (self.M.T @ qa), pi_b)
        pa = penalty_gradient_pi(pi_a, penalty_a)
        pb = penalty_gradient_pi(pi_b, penalty_b)
        pen_a = np.concatenate(
            [
                softmax_jacobian_factor(pi_a.factor(d)).T @ pa[d]
                for d in range(self.design.n_factors)
            ]
        )
        pen_b = np.concatenate(
            [
                softmax_jacobian_factor(pi_b.factor(d)).T @ pb[d]
                for d in range(self.design.n_factors)
            ]
        )
        return ga - pen_a, gb + pen_b


def payoff(
    spec: InstitutionSpec, pi_a: ProfileDistribution, pi_b: ProfileDistribution
) -> float:
    return PayoffEvaluator(spec).payoff(pi_a, pi_b)


# ---------------------------------------------------------------------------
# equilibrium solver

@dataclass(frozen=True)
class GameConfig:
    max_iters: int = 20000
    tol: float = 1e-5  # sup-norm gradient tolerance, each side
    step0: float = 0.1
    max_halvings: int = 40
    window: int = 200  # trailing values inspected for oscillation
    oscillation_tol: float = 1e-10


@dataclass(frozen=True)
class EquilibriumResult:
    pi_a: ProfileDistribution
    pi_b: ProfileDistribution
    a_params: SoftmaxParams
    b_params: SoftmaxParams
    value: float
    payoff: float
    grad_sup_a: float
    grad_sup_b: float
    iterations: int
    converged: bool
    oscillating: bool
    oscillation_variance: float
    value_trace: tuple[float, ...] = field(repr=False, default=())


def solve_equilibrium(
    spec: InstitutionSpec,
    penalty_a: PenaltyConfig,
    penalty_b: PenaltyConfig | None = None,
    start_a: SoftmaxParams | None = None,
    start_b: SoftmaxParams | None = None,
    config: GameConfig = GameConfig(),
) -> EquilibriumResult:
    """Simultaneous ascent-descent with per-side backtracking line search.

    Each iteration proposes a gradient step for both sides from the same
    iterate; a side's step is halved until it improves that side's own
    objective with the opponent held fixed, and skipped entirely if no
    halving improves it. Non-convergence is reported with an oscillation
    diagnostic (variance of the trailing value window), not raised.
    """
    if penalty_b is None:
        penalty_b = penalty_a
    ev = PayoffEvaluator(spec)
    design = spec.design
    a = (start_a if start_a is not None else SoftmaxParams.zeros(design)).stacked()
    b = (start_b if start_b is not None else SoftmaxParams.zeros(design)).stacked()
    counts = design.level_counts
    bounds = np.cumsum((0,) + tuple(c - 1 for c in counts))

    def probs(vec):
        # per-factor softmax with the final level's parameter pinned at zero
        out = []
        for d, L in enumerate(counts):
            z = np.empty(L)
            z[: L - 1] = vec[bounds[d] : bounds[d + 1]]
            z[L - 1] = 0.0
            z -= z.max()
            ez = np.exp(z)
            out.append(ez / ez.sum())
        return out

    def chain(pen_rows, pis):
        return np.concatenate(
            [softmax_jacobian_factor(pis[d]).T @ pen_rows[d] for d in range(len(pis))]
        )

    trace = []
    converged = False
    iterations = 0
    sup_a = sup_b = math.inf
    pis_a, pis_b = probs(a), probs(b)
    for iterations in range(1, config.max_iters + 1):
        qa, qb = ev._q_raw(pis_a), ev._q_raw(pis_b)
        u_a = ev.M @ qb  # A's per-profile payoff with B fixed
        u_b = ev.M.T @ qa
        pen_a0 = penalty_value_raw(pis_a, ev._assign, ev._size, penalty_a)
        pen_b0 = penalty_value_raw(pis_b, ev._assign, ev._size, penalty_b)
        ga = ev._support_gradient_raw(qa * u_a, pis_a) - chain(
            penalty_gradient_raw(pis_a, ev._assign, ev._size, penalty_a), pis_a
        )
        gb = ev._support_gradient_raw(qb * u_b, pis_b) + chain(
            penalty_gradient_raw(pis_b, ev._assign, ev._size, penalty_b), pis_b
        )
        sup_a = float(np.abs(ga).max()) if ga.size else 0.0
        sup_b = float(np.abs(gb).max()) if gb.size else 0.0
        if sup_a <= config.tol and sup_b <= config.tol:
            converged = True
            break
        # own-side partial objectives; the opponent's term is constant in each
        fa0 = float(qa @ u_a) - pen_a0
        fb0 = float(qb @ u_b) + pen_b0
        step = config.step0
        moved_a = False
        new_a, new_pis_a = a, pis_a
        for _ in range(config.max_halvings + 1):
            cand = a + step * ga
            cand_pis = probs(cand)
            fa = float(ev._q_raw(cand_pis) @ u_a) - penalty_value_raw(
                cand_pis, ev._assign, ev._size, penalty_a
            )
            if fa > fa0:
                new_a, new_pis_a, moved_a = cand, cand_pis, True
                break
            step *= 0.5
        step = config.step0
        moved_b = False
        new_b, new_pis_b = b, pis_b
        for _ in range(config.max_halvings + 1):
            cand = b - step * gb
            cand_pis = probs(cand)
            fb = float(ev._q_raw(cand_pis) @ u_b) + penalty_value_raw(
                cand_pis, ev._assign, ev._size, penalty_b
            )
            if fb < fb0:
                new_b, new_pis_b, moved_b = cand, cand_pis, True
                break
            step *= 0.5
        a, b = new_a, new_b
        pis_a, pis_b = new_pis_a, new_pis_b
        qa, qb = ev._q_raw(pis_a), ev._q_raw(pis_b)
        trace.append(
            float(qa @ (ev.M @ qb))
            - penalty_value_raw(pis_a, ev._assign, ev._size, penalty_a)
            + penalty_value_raw(pis_b, ev._assign, ev._size, penalty_b)
        )
        if not moved_a and not moved_b:
            break  # neither side can improve at the smallest step
    pia = ProfileDistribution(design, tuple(pis_a))
    pib = ProfileDistribution(design, tuple(pis_b))
    window = trace[-config.window :]
    osc_var = float(np.var(window)) if len(window) >= 2 else 0.0
    oscillating = (not converged) and len(window) >= config.window and (
        osc_var > config.oscillation_tol
    )
    return EquilibriumResult(
        pi_a=pia,
        pi_b=pib,
        a_params=SoftmaxParams.from_stacked(design, a),
        b_params=SoftmaxParams.from_stacked(design, b),
        value=ev.value(pia, pib, penalty_a, penalty_b),
        payoff=ev.payoff(pia, pib),
        grad_sup_a=sup_a,
        grad_sup_b=sup_b,
        iterations=iterations,
        converged=converged,
        oscillating=oscillating,
        oscillation_variance=osc_var,
        value_trace=tuple(trace),
    )


# ---------------------------------------------------------------------------
# grid oracle

GRID_PAIR_CAP = 1_000_000


def _simplex_lattice(levels: int, m: int) -> list[np.ndarray]:
    """All probability vectors over `levels` cells with entries k/m."""
    out = []
    for cuts in itertools.combinations(range(m + levels - 1), levels - 1):
        comp = []
        prev = -1
        for c in cuts:
            comp.append(c - prev - 1)
            prev = c
        comp.append(m + levels - 2 - prev)
        out.append(np.array(comp, dtype=float) / m)
    return out


def _lattice_candidates(design: ConjointDesign, resolution: float) -> list[ProfileDistribution]:
    if not (0 < resolution <= 0.5):
        raise InvalidParameterError("grid resolution must be in (0, 0.5]")
    m = round(1.0 / resolution)
    if m < 2:
        raise InvalidParameterError("grid resolution is too coarse")
    per_factor = [_simplex_lattice(f.n_levels, m) for f in design.factors]
    return [
        ProfileDistribution(design, tuple(combo))
        for combo in itertools.product(*per_factor)
    ]


@dataclass(frozen=True)
class GridOracleResult:
    pi_a: ProfileDistribution
    pi_b: ProfileDistribution
    value: float
    maxmin: float
    minmax: float
    gap: float
    grid_slack: float
    exploitability: float
    n_candidates: int
    resolution: float


def grid_oracle(
    spec: InstitutionSpec,
    penalty_a: PenaltyConfig,
    penalty_b: PenaltyConfig | None = None,
    resolution: float = 0.01,
    pair_cap: int = GRID_PAIR_CAP,
) -> GridOracleResult:
    """Exhaustive lattice search over both sides' distributions.

    Evaluates the penalized value on every candidate pair, reports the
    max-min and min-max values, and returns the minimal-exploitability pair
    (ties broken toward the randomization design). `grid_slack` is the
    largest value change between consecutive lattice candidates, an
    empirical scale for how much the discretization can hide.
    """
    if penalty_b is None:
        penalty_b = penalty_a
    ev = PayoffEvaluator(spec)
    design = spec.design
    cands = _lattice_candidates(design, resolution)
    nC = len(cands)
    if nC * nC > pair_cap:
        raise GridTooLargeError(
            f"grid would evaluate {nC * nC} pairs, above the cap {pair_cap}"
        )
    K = ev.support.shape[0]
    Q = np.empty((nC, K))
    for i, c in enumerate(cands):
        Q[i] = ev.q_vector(c)
    pen_a = np.array([penalty_value(c, penalty_a) for c in cands])
    pen_b = np.array([penalty_value(c, penalty_b) for c in cands])
    V = Q @ ev.M @ Q.T - pen_a[:, None] + pen_b[None, :]
    row_min = V.min(axis=1)
    col_max = V.max(axis=0)
    maxmin = float(row_min.max())
    minmax = float(col_max.min())
    dist_p = np.array(
        [c.l2_distance(design.assignment()) for c in cands]
    )
    i_star = _tie_break_index(row_min, maxmin, dist_p, largest=True)
    j_star = _tie_break_index(col_max, minmax, dist_p, largest=False)
    row_delta = float(np.abs(np.diff(V, axis=0)).max()) if nC > 1 else 0.0
    col_delta = float(np.abs(np.diff(V, axis=1)).max()) if nC > 1 else 0.0
    return GridOracleResult(
        pi_a=cands[i_star],
        pi_b=cands[j_star],
        value=float(V[i_star, j_star]),
        maxmin=maxmin,
        minmax=minmax,
        gap=minmax - maxmin,
        grid_slack=max(row_delta, col_delta),
        exploitability=float(col_max[j_star] - row_min[i_star]),
        n_candidates=nC,
        resolution=resolution,
    )


def _tie_break_index(values, target, dist_p, largest: bool) -> int:
    # candidates achieving the optimum within 1e-12, closest to the design
    if largest:
        tied = np.nonzero(values >= target - 1e-12)[0]
    else:
        tied = np.nonzero(values <= target + 1e-12)[0]
    return int(tied[np.argmin(dist_p[tied])])


@dataclass(frozen=True)
class DeviationReport:
    gain_a: float
    gain_b: float
    best_a: ProfileDistribution
    best_b: ProfileDistribution
    value_at_point: float


def deviation_check(
    spec: InstitutionSpec,
    pi_a: ProfileDistribution,
    pi_b: ProfileDistribution,
    penalty_a: PenaltyConfig,
    penalty_b: PenaltyConfig | None = None,
    resolution: float = 0.01,
    pair_cap: int = GRID_PAIR_CAP,
) -> DeviationReport:
    """Best unilateral improvement either side can find on the lattice.

    gain_a is how much side A could raise the value by switching to its best
    lattice candidate with B fixed; gain_b is B's best reduction with A
    fixed. Small gains certify the pair as an approximate equilibrium at the
    lattice scale.
    """
    if penalty_b is None:
        penalty_b = penalty_a
    ev = PayoffEvaluator(spec)
    cands = _lattice_candidates(spec.design, resolution)
    if len(cands) > pair_cap:
        raise GridTooLargeError(
            f"deviation grid has {len(cands)} candidates, above the cap {pair_cap}"
        )
    current = ev.value(pi_a, pi_b, penalty_a, penalty_b)
    qb = ev.q_vector(pi_b)
    qa = ev.q_vector(pi_a)
    ua = ev.M @ qb
    ub = ev.M.T @ qa
    pen_b_val = penalty_value(pi_b, penalty_b)
    pen_a_val = penalty_value(pi_a, penalty_a)
    best_gain_a, best_a = 0.0, pi_a
    best_gain_b, best_b = 0.0, pi_b
    for c in cands:
        qc = ev.q_vector(c)
        va = float(qc @ ua) - penalty_value(c, penalty_a) + pen_b_val
        if va - current > best_gain_a:
            best_gain_a, best_a = va - current, c
        vb = float(qc @ ub) - pen_a_val + penalty_value(c, penalty_b)
        if current - vb > best_gain_b:
            best_gain_b, best_b = current - vb, c
    return DeviationReport(
        gain_a=best_gain_a,
        gain_b=best_gain_b,
        best_a=best_a,
        best_b=best_b,
        value_at_point=current,
    )


# ---------------------------------------------------------------------------
# delta-method inference for equilibria

_MODEL_SLOTS = ("primary_a", "primary_b", "general_a", "general_b")


@dataclass(frozen=True)
class EquilibriumInference:
    """Delta-method covariance of the stacked (pi_A, pi_B) equilibrium."""

    se_pi_a: np.ndarray  # full level sets, side A
    se_pi_b: np.ndarray
    cov: np.ndarray  # joint covariance of stacked (pi_A, pi_B)
    jacobian_cond: float
    z: float = 1.959964

    def ci_component_a(self, result: EquilibriumResult, d: int, l: int):
        offset = sum(result.pi_a.design.level_counts[:d]) + l
        center = float(result.pi_a.factor(d)[l])
        half = self.z * float(self.se_pi_a[offset])
        return (center - half, center + half)


def equilibrium_delta(
    spec: InstitutionSpec,
    penalty_a: PenaltyConfig,
    result: EquilibriumResult,
    penalty_b: PenaltyConfig | None = None,
    config: GameConfig = GameConfig(),
    fd_step_scale: float = 1e-5,
) -> EquilibriumInference:
    """Propagate the fitted models' coefficient covariances through the
    equilibrium map.

    Each model slot with a coefficient covariance is perturbed coordinatewise
    (central differences, warm starts at the reported equilibrium, tightened
    tolerance); slots without one are treated as known. The four fits are
    assumed independent, so the joint coefficient covariance is block
    diagonal.
    """
    from dataclasses import replace as _replace

    from .errors import InferenceFailureError

    if penalty_b is None:
        penalty_b = penalty_a
    tight = GameConfig(
        max_iters=max(config.max_iters, 50000),
        tol=min(config.tol, 1e-9),
        step0=config.step0,
        max_halvings=config.max_halvings,
        window=config.window,
        oscillation_tol=config.oscillation_tol,
    )

    def outputs(changed_spec) -> np.ndarray:
        res = solve_equilibrium(
            changed_spec,
            penalty_a,
            penalty_b,
            start_a=result.a_params,
            start_b=result.b_params,
            config=tight,
        )
        return np.concatenate([res.pi_a.stacked(), res.pi_b.stacked()])

    cols = []
    sigmas = []
    for slot in _MODEL_SLOTS:
        model = getattr(spec, slot)
        if model.sigma is None:
            continue
        theta = model.to_theta()
        names = model.param_names()
        for j in range(theta.size):
            h = fd_step_scale * (1.0 + abs(theta[j]))
            up = theta.copy()
            dn = theta.copy()
            up[j] += h
            dn[j] -= h
            try:
                col = (
                    outputs(_replace(spec, **{slot: model.with_theta(up)}))
                    - outputs(_replace(spec, **{slot: model.with_theta(dn)}))
                ) / (2.0 * h)
            except Exception as exc:  # noqa: BLE001 - named failure for callers
                raise InferenceFailureError(
                    f"{slot}:{names[j]}", f"equilibrium re-solve failed: {exc}"
                ) from exc
            cols.append(col)
        sigmas.append(model.sigma)
    if not cols:
        raise ValidationError(
            "no model in the institution carries a coefficient covariance"
        )
    J = np.column_stack(cols)
    joint = scipy_block_diag(*sigmas)
    cov = J @ joint @ J.T
    cov = 0.5 * (cov + cov.T)
    se = np.sqrt(np.clip(np.diag(cov), 0.0, None))
    nA = sum(spec.design.level_counts)
    return EquilibriumInference(
        se_pi_a=se[:nA],
        se_pi_b=se[nA:],
        cov=cov,
        jacobian_cond=float(np.linalg.cond(J)),
    )
