"""Tests for the two-stage adversarial game: payoff tables, equilibrium
solver, lattice oracle, deviation audit, and equilibrium inference."""

import numpy as np
import pytest

from conftest import binary_design, color_size_design

from conjointopt import (
    ConjointDesign,
    FactorSpec,
    GameConfig,
    GridTooLargeError,
    InstitutionSpec,
    InvalidParameterError,
    OutcomeModel,
    PayoffEvaluator,
    PenaltyConfig,
    ProfileDistribution,
    SoftmaxParams,
    SupportTooLargeError,
    ValidationError,
    deviation_check,
    equilibrium_delta,
    grid_oracle,
    payoff,
    softmax_to_distribution,
    solve_equilibrium,
)


def _stz_choice(design, main, gamma=None, intercept=0.5, sigma=None):
    return OutcomeModel(
        design=design,
        response="choice",
        coding="sum_to_zero",
        intercept=intercept,
        main=tuple(np.asarray(m, dtype=float) for m in main),
        gamma=gamma or {},
        sigma=sigma,
    )


def _constant_choice(design, p):
    """Choice model predicting p for every matchup."""
    return _stz_choice(design, [np.zeros(c) for c in design.level_counts],
                       intercept=p)


def _antisymmetric_model(design, rng, scale=0.04):
    main = []
    for c in design.level_counts:
        v = rng.normal(scale=scale, size=c)
        main.append(v - v.mean())
    return _stz_choice(design, main)


def _symmetric_institution(design, rng, scale=0.04):
    g = _antisymmetric_model(design, rng, scale)
    one = _constant_choice(design, 1.0)
    return InstitutionSpec(design, primary_a=one, primary_b=one,
                           general_a=g, general_b=g)


def _asymmetric_institution(design):
    g = _stz_choice(design, [np.array([0.15, -0.15])])
    pa = _stz_choice(design, [np.array([0.1, -0.1])])
    return InstitutionSpec(design, primary_a=pa,
                           primary_b=_constant_choice(design, 1.0),
                           general_a=g, general_b=g)


def _dist(design, *rows):
    return ProfileDistribution(design, tuple(np.asarray(r, dtype=float)
                                             for r in rows))


# ---------------------------------------------------------------------------
# institution and payoff tables


def test_institution_validation():
    design = binary_design(1)
    g = _constant_choice(design, 0.5)
    direct = OutcomeModel(design=design, response="direct", coding="baseline",
                          intercept=0.5, main=(np.zeros(1),), gamma={})
    with pytest.raises(ValidationError):
        InstitutionSpec(design, primary_a=direct, primary_b=g,
                        general_a=g, general_b=g)
    with pytest.raises(InvalidParameterError):
        InstitutionSpec(design, primary_a=g, primary_b=g, general_a=g,
                        general_b=g, weight_a=0.6, weight_b=0.6)
    with pytest.raises(InvalidParameterError):
        InstitutionSpec(design, primary_a=g, primary_b=g, general_a=g,
                        general_b=g, weight_a=-0.2, weight_b=1.2)
    other = color_size_design()
    with pytest.raises(ValidationError):
        InstitutionSpec(design, primary_a=g, primary_b=g, general_a=g,
                        general_b=g,
                        challenger_a=other.assignment())


def test_default_challenger_is_uniform_not_assignment():
    design = binary_design(1, p=0.3)
    g = _constant_choice(design, 0.5)
    spec = InstitutionSpec(design, primary_a=g, primary_b=g,
                           general_a=g, general_b=g)
    np.testing.assert_allclose(spec.challenger("a").probs[0], [0.5, 0.5])
    np.testing.assert_allclose(spec.challenger("b").probs[0], [0.5, 0.5])
    custom = _dist(design, [0.9, 0.1])
    spec2 = InstitutionSpec(design, primary_a=g, primary_b=g,
                            general_a=g, general_b=g, challenger_a=custom)
    np.testing.assert_allclose(spec2.challenger("a").probs[0], [0.9, 0.1])


def test_constant_models_give_closed_payoff():
    design = binary_design(2)
    spec = InstitutionSpec(
        design,
        primary_a=_constant_choice(design, 0.8),
        primary_b=_constant_choice(design, 0.6),
        general_a=_constant_choice(design, 0.7),
        general_b=_constant_choice(design, 0.7),
    )
    # payoff = 0.7 * (wA * 0.8 + wB * 0.6), independent of the distributions
    rng = np.random.default_rng(0)
    for _ in range(4):
        pa = softmax_to_distribution(
            SoftmaxParams.from_stacked(design, rng.normal(size=2)))
        pb = softmax_to_distribution(
            SoftmaxParams.from_stacked(design, rng.normal(size=2)))
        assert payoff(spec, pa, pb) == pytest.approx(0.7 * 0.7, abs=1e-12)
    spec_w = InstitutionSpec(
        design,
        primary_a=_constant_choice(design, 0.8),
        primary_b=_constant_choice(design, 0.6),
        general_a=_constant_choice(design, 0.7),
        general_b=_constant_choice(design, 0.7),
        weight_a=0.3,
        weight_b=0.7,
    )
    u = design.assignment()
    assert payoff(spec_w, u, u) == pytest.approx(0.7 * (0.3 * 0.8 + 0.7 * 0.6),
                                                 abs=1e-12)


def test_predictions_clipped_in_tables():
    design = binary_design(1)
    wild = _stz_choice(design, [np.array([5.0, -5.0])])
    one = _constant_choice(design, 1.0)
    spec = InstitutionSpec(design, primary_a=one, primary_b=one,
                           general_a=wild, general_b=wild)
    lo = _dist(design, [1.0, 0.0])
    hi = _dist(design, [0.0, 1.0])
    assert payoff(spec, lo, hi) == pytest.approx(1.0, abs=1e-12)
    assert payoff(spec, hi, lo) == pytest.approx(0.0, abs=1e-12)


def test_symmetric_payoff_is_half_at_equal_play():
    design = color_size_design()
    spec = _symmetric_institution(design, np.random.default_rng(2))
    ev = PayoffEvaluator(spec)
    rng = np.random.default_rng(3)
    for _ in range(5):
        pi = softmax_to_distribution(
            SoftmaxParams.from_stacked(design, rng.normal(scale=0.8, size=3)))
        assert ev.payoff(pi, pi) == pytest.approx(0.5, abs=1e-12)


def test_support_cap_enforced():
    factors = tuple(
        FactorSpec(f"f{d}", ("a", "b", "c", "d"), np.full(4, 0.25))
        for d in range(5)
    )
    design = ConjointDesign(factors)  # 4^5 = 1024 profiles, 1024^2 pairs
    g = _constant_choice(design, 0.5)
    spec = InstitutionSpec(design, primary_a=g, primary_b=g,
                           general_a=g, general_b=g)
    with pytest.raises(SupportTooLargeError):
        PayoffEvaluator(spec)


def test_value_decomposition_and_gradients_fd():
    design = color_size_design()
    rng = np.random.default_rng(7)
    g = _antisymmetric_model(design, rng, scale=0.08)
    pa = _antisymmetric_model(design, rng, scale=0.05)
    pb = _antisymmetric_model(design, rng, scale=0.05)
    spec = InstitutionSpec(design, primary_a=pa, primary_b=pb,
                           general_a=g,
                           general_b=_antisymmetric_model(design, rng, 0.06),
                           weight_a=0.4, weight_b=0.6)
    ev = PayoffEvaluator(spec)
    pen_a = PenaltyConfig("l2", 0.3)
    pen_b = PenaltyConfig("l2", 0.45)
    va = rng.normal(scale=0.6, size=3)
    vb = rng.normal(scale=0.6, size=3)
    pia = softmax_to_distribution(SoftmaxParams.from_stacked(design, va))
    pib = softmax_to_distribution(SoftmaxParams.from_stacked(design, vb))
    from conjointopt import penalty_value

    val = ev.value(pia, pib, pen_a, pen_b)
    assert val == pytest.approx(
        ev.payoff(pia, pib) - penalty_value(pia, pen_a)
        + penalty_value(pib, pen_b),
        abs=1e-14,
    )
    ga, gb = ev.value_gradients(pia, pib, pen_a, pen_b)
    h = 1e-6

    def value_at(xa, xb):
        da = softmax_to_distribution(SoftmaxParams.from_stacked(design, xa))
        db = softmax_to_distribution(SoftmaxParams.from_stacked(design, xb))
        return ev.value(da, db, pen_a, pen_b)

    for j in range(3):
        up, dn = va.copy(), va.copy()
        up[j] += h
        dn[j] -= h
        fd = (value_at(up, vb) - value_at(dn, vb)) / (2 * h)
        assert ga[j] == pytest.approx(fd, abs=1e-6 * (1 + abs(fd)))
        up, dn = vb.copy(), vb.copy()
        up[j] += h
        dn[j] -= h
        fd = (value_at(va, up) - value_at(va, dn)) / (2 * h)
        assert gb[j] == pytest.approx(fd, abs=1e-6 * (1 + abs(fd)))


# ---------------------------------------------------------------------------
# equilibrium solver


def test_equilibrium_symmetric_game():
    design = binary_design(2)
    spec = _symmetric_institution(design, np.random.default_rng(5), scale=0.1)
    pen = PenaltyConfig("l2", 0.2)
    res = solve_equilibrium(spec, pen)
    assert res.converged
    assert res.grad_sup_a <= GameConfig().tol
    assert res.grad_sup_b <= GameConfig().tol
    assert res.payoff == pytest.approx(0.5, abs=1e-3)
    # anti-symmetry makes both sides solve the same problem
    np.testing.assert_allclose(res.pi_a.stacked(), res.pi_b.stacked(),
                               atol=1e-3)
    again = solve_equilibrium(spec, pen)
    np.testing.assert_array_equal(res.a_params.stacked(),
                                  again.a_params.stacked())
    np.testing.assert_array_equal(res.b_params.stacked(),
                                  again.b_params.stacked())


def test_equilibrium_huge_lambda_pins_both_sides():
    design = binary_design(1, p=0.4)
    spec = _asymmetric_institution(design)
    res = solve_equilibrium(spec, PenaltyConfig("l2", 1e6))
    np.testing.assert_allclose(res.pi_a.probs[0], [0.4, 0.6], atol=1e-3)
    np.testing.assert_allclose(res.pi_b.probs[0], [0.4, 0.6], atol=1e-3)


def test_equilibrium_nonconvergence_is_reported_not_raised():
    design = binary_design(1)
    spec = _asymmetric_institution(design)
    res = solve_equilibrium(spec, PenaltyConfig("l2", 0.01),
                            config=GameConfig(max_iters=5))
    assert not res.converged
    assert res.iterations == 5
    assert np.isfinite(res.value)


def test_equilibrium_agrees_with_lattice_oracle():
    design = binary_design(1)
    spec = _asymmetric_institution(design)
    pen = PenaltyConfig("l2", 0.2)
    res = solve_equilibrium(spec, pen)
    assert res.converged
    oracle = grid_oracle(spec, pen, resolution=0.01)
    assert abs(res.pi_a.probs[0][0] - oracle.pi_a.probs[0][0]) <= 0.02
    assert abs(res.pi_b.probs[0][0] - oracle.pi_b.probs[0][0]) <= 0.02
    assert abs(res.value - oracle.maxmin) <= 1e-3
    report = deviation_check(spec, res.pi_a, res.pi_b, pen, resolution=0.01)
    assert report.gain_a <= 1e-3
    assert report.gain_b <= 1e-3


# ---------------------------------------------------------------------------
# lattice oracle


def test_grid_oracle_duality_and_counts():
    design = binary_design(1)
    spec = _asymmetric_institution(design)
    oracle = grid_oracle(spec, PenaltyConfig("l2", 0.2), resolution=0.1)
    assert oracle.n_candidates == 11
    assert oracle.maxmin <= oracle.minmax + 1e-12
    assert oracle.gap == pytest.approx(oracle.minmax - oracle.maxmin)
    assert oracle.exploitability >= -1e-12
    assert oracle.maxmin - 1e-12 <= oracle.value <= oracle.minmax + 1e-12


def test_grid_oracle_tie_break_prefers_assignment():
    design = binary_design(1)
    spec = InstitutionSpec(
        design,
        primary_a=_constant_choice(design, 1.0),
        primary_b=_constant_choice(design, 1.0),
        general_a=_constant_choice(design, 0.7),
        general_b=_constant_choice(design, 0.7),
    )
    oracle = grid_oracle(spec, PenaltyConfig("l2", 0.0), resolution=0.5)
    np.testing.assert_allclose(oracle.pi_a.probs[0], [0.5, 0.5], atol=1e-12)
    np.testing.assert_allclose(oracle.pi_b.probs[0], [0.5, 0.5], atol=1e-12)
    assert oracle.gap == pytest.approx(0.0, abs=1e-12)


def test_grid_oracle_validation():
    design = binary_design(1)
    spec = _asymmetric_institution(design)
    pen = PenaltyConfig("l2", 0.2)
    with pytest.raises(InvalidParameterError):
        grid_oracle(spec, pen, resolution=0.0)
    with pytest.raises(InvalidParameterError):
        grid_oracle(spec, pen, resolution=0.8)
    with pytest.raises(GridTooLargeError):
        grid_oracle(spec, pen, resolution=0.5, pair_cap=1)


def test_deviation_check_finds_improvement_off_equilibrium():
    design = binary_design(1)
    spec = _asymmetric_institution(design)
    pen = PenaltyConfig("l2", 0.05)
    uniform = design.assignment()
    report = deviation_check(spec, uniform, uniform, pen, resolution=0.01)
    assert report.gain_a > 1e-3  # A can exploit the inert opponent
    assert not np.allclose(report.best_a.probs[0], uniform.probs[0])
    ev = PayoffEvaluator(spec)
    assert report.value_at_point == pytest.approx(
        ev.value(uniform, uniform, pen, pen), abs=1e-14)


# ---------------------------------------------------------------------------
# simulation cross-check of the bilinear payoff


def test_payoff_matches_monte_carlo():
    design = color_size_design()
    rng = np.random.default_rng(11)
    spec = InstitutionSpec(
        design,
        primary_a=_antisymmetric_model(design, rng, 0.06),
        primary_b=_antisymmetric_model(design, rng, 0.06),
        general_a=_antisymmetric_model(design, rng, 0.08),
        general_b=_antisymmetric_model(design, rng, 0.08),
        weight_a=0.35,
        weight_b=0.65,
        challenger_a=_dist(design, [0.5, 0.25, 0.25], [0.3, 0.7]),
    )
    pi_a = _dist(design, [0.6, 0.3, 0.1], [0.8, 0.2])
    pi_b = _dist(design, [0.2, 0.2, 0.6], [0.45, 0.55])
    exact = PayoffEvaluator(spec).payoff(pi_a, pi_b)

    n = 200_000
    draw = np.random.default_rng(99)

    def sample(dist):
        cols = [draw.choice(len(p), size=n, p=p) for p in dist.probs]
        return np.column_stack(cols)

    ta, tb = sample(pi_a), sample(pi_b)
    ca, cb = sample(spec.challenger("a")), sample(spec.challenger("b"))
    ga = np.clip(spec.general_a.predict_choice(ta, tb), 0, 1)
    gb = np.clip(spec.general_b.predict_choice(ta, tb), 0, 1)
    ha = np.clip(spec.primary_a.predict_choice(ta, ca), 0, 1)
    hb = np.clip(spec.primary_b.predict_choice(tb, cb), 0, 1)
    draws = spec.weight_a * ga * ha + spec.weight_b * gb * hb
    mc_se = draws.std(ddof=1) / np.sqrt(n)
    assert mc_se < 0.005
    assert abs(draws.mean() - exact) <= 3 * mc_se


# ---------------------------------------------------------------------------
# equilibrium inference


def _institution_with_sigma(scale=1e-4):
    design = binary_design(1)
    sigma = np.diag([scale, scale, scale])
    g = _stz_choice(design, [np.array([0.1, -0.1])], sigma=sigma)
    one = _constant_choice(design, 1.0)
    return design, InstitutionSpec(design, primary_a=one, primary_b=one,
                                   general_a=g, general_b=g)


def test_equilibrium_delta_shapes_and_scaling():
    design, spec = _institution_with_sigma()
    pen = PenaltyConfig("l2", 0.3)
    res = solve_equilibrium(spec, pen)
    assert res.converged
    inf1 = equilibrium_delta(spec, pen, res)
    total = 2 * sum(design.level_counts)
    assert inf1.cov.shape == (total, total)
    assert inf1.se_pi_a.shape == (2,)
    assert inf1.se_pi_b.shape == (2,)
    np.testing.assert_allclose(inf1.cov, inf1.cov.T, atol=1e-18)
    assert np.min(np.linalg.eigvalsh(inf1.cov)) >= -1e-15
    lo, hi = inf1.ci_component_a(res, 0, 0)
    center = res.pi_a.probs[0][0]
    assert lo == pytest.approx(center - 1.959964 * inf1.se_pi_a[0], abs=1e-12)
    assert hi == pytest.approx(center + 1.959964 * inf1.se_pi_a[0], abs=1e-12)

    _, spec4 = _institution_with_sigma(scale=4e-4)
    res4 = solve_equilibrium(spec4, pen)
    inf4 = equilibrium_delta(spec4, pen, res4)
    mask = inf1.se_pi_a > 1e-12
    np.testing.assert_allclose(inf4.se_pi_a[mask] / inf1.se_pi_a[mask], 2.0,
                               rtol=1e-4)


def test_equilibrium_delta_requires_a_covariance():
    design = binary_design(1)
    spec = _asymmetric_institution(design)  # no model carries sigma
    pen = PenaltyConfig("l2", 0.3)
    res = solve_equilibrium(spec, pen)
    with pytest.raises(ValidationError):
        equilibrium_delta(spec, pen, res)
