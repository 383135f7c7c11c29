"""Tests for the closed-form linear-system optimizers."""

import numpy as np
import pytest

from conftest import binary_design, color_size_design

from conjointopt import (
    ConjointDesign,
    FactorSpec,
    LambdaTooSmallError,
    OutcomeModel,
    ValidationError,
    solve_binary_nonchoice,
    solve_for_coding,
    solve_forced_choice_average_case,
    solve_multilevel_nonchoice,
)


def _baseline_model(design, main, gamma=None, response="direct"):
    return OutcomeModel(
        design=design,
        response=response,
        coding="baseline",
        intercept=0.5,
        main=tuple(np.asarray(m, dtype=float) for m in main),
        gamma=gamma or {},
    )


def _stz_model(design, main, gamma=None):
    return OutcomeModel(
        design=design,
        response="choice",
        coding="sum_to_zero",
        intercept=0.5,
        main=tuple(np.asarray(m, dtype=float) for m in main),
        gamma=gamma or {},
    )


def _random_stz(design, rng, scale=0.1):
    main = []
    for c in design.level_counts:
        v = rng.normal(scale=scale, size=c)
        main.append(v - v.mean())
    gamma = {}
    for d1 in range(design.n_factors):
        for d2 in range(d1 + 1, design.n_factors):
            t = rng.normal(scale=scale,
                           size=(design.level_counts[d1], design.level_counts[d2]))
            t -= t.mean(axis=0, keepdims=True)
            t -= t.mean(axis=1, keepdims=True)
            gamma[(d1, d2)] = t
    return _stz_model(design, main, gamma)


# ---------------------------------------------------------------------------
# binary nonchoice


def test_binary_single_factor_hand_solution():
    design = binary_design(1)
    model = _baseline_model(design, [[1.0]])
    sol = solve_binary_nonchoice(model, 1.0)
    # first-order condition beta - 4 lam (pi - p) = 0  =>  pi = p + beta/(4 lam)
    assert sol.valid
    assert sol.pi_raw[0][0] == pytest.approx(0.75, abs=1e-12)
    assert sol.pi_raw[0][1] == pytest.approx(0.25, abs=1e-12)
    assert sol.foc_residual < 1e-12


def test_binary_oracle_general_no_interactions():
    rng = np.random.default_rng(1)
    design = binary_design(4)
    for lam in (0.5, 1.0, 3.0):
        beta = rng.normal(scale=0.3, size=4)
        model = _baseline_model(design, [[b] for b in beta])
        sol = solve_binary_nonchoice(model, lam)
        for d in range(4):
            assert sol.pi_raw[d][0] == pytest.approx(0.5 + beta[d] / (4 * lam),
                                                     abs=1e-12)


def test_binary_two_factor_interaction_hand_solution():
    design = binary_design(2)
    model = _baseline_model(design, [[0.0], [0.0]],
                            {(0, 1): np.array([[1.0]])})
    sol = solve_binary_nonchoice(model, 1.0)
    assert sol.pi_raw[0][0] == pytest.approx(2.0 / 3.0, abs=1e-10)
    assert sol.pi_raw[1][0] == pytest.approx(2.0 / 3.0, abs=1e-10)
    assert sol.foc_residual < 1e-10
    np.testing.assert_allclose(sol.system.matrix,
                               np.array([[-4.0, 1.0], [1.0, -4.0]]))
    np.testing.assert_allclose(sol.system.rhs, np.array([-2.0, -2.0]))


def test_binary_huge_lambda_returns_design():
    rng = np.random.default_rng(3)
    design = binary_design(3)
    model = _baseline_model(
        design, [[b] for b in rng.normal(size=3)],
        {(0, 1): rng.normal(size=(1, 1)), (1, 2): rng.normal(size=(1, 1))},
    )
    sol = solve_binary_nonchoice(model, 1e6)
    for d in range(3):
        assert abs(sol.pi_raw[d][0] - 0.5) < 1e-3


def test_binary_requires_baseline_binary():
    stz = _stz_model(binary_design(2), [[0.1, -0.1], [0.0, 0.0]])
    with pytest.raises(ValidationError):
        solve_binary_nonchoice(stz, 1.0)
    multi = _baseline_model(color_size_design(), [[0.1, 0.0], [0.1]])
    with pytest.raises(ValidationError):
        solve_binary_nonchoice(multi, 1.0)


def test_binary_singular_system_raises():
    design = binary_design(2)
    # gamma = 4*lam makes C = [[-1, 1], [1, -1]] exactly singular
    model = _baseline_model(design, [[0.2], [0.1]],
                            {(0, 1): np.array([[1.0]])})
    with pytest.raises(LambdaTooSmallError):
        solve_binary_nonchoice(model, 0.25)


def test_binary_out_of_simplex_flagged():
    design = binary_design(1)
    model = _baseline_model(design, [[3.0]])
    sol = solve_binary_nonchoice(model, 1.0)  # pi = 0.5 + 3/4 = 1.25
    assert not sol.valid
    assert sol.pi_raw[0][0] == pytest.approx(1.25, abs=1e-12)
    with pytest.raises(ValidationError):
        sol.distribution()


def test_lambda_validation():
    model = _baseline_model(binary_design(1), [[0.1]])
    for bad in (0.0, -1.0, float("nan")):
        with pytest.raises(ValidationError):
            solve_binary_nonchoice(model, bad)


# ---------------------------------------------------------------------------
# multilevel nonchoice


def test_multilevel_specializes_to_binary():
    rng = np.random.default_rng(7)
    design = binary_design(3)
    model = _baseline_model(
        design, [[b] for b in rng.normal(scale=0.2, size=3)],
        {(0, 1): rng.normal(scale=0.1, size=(1, 1)),
         (0, 2): rng.normal(scale=0.1, size=(1, 1)),
         (1, 2): rng.normal(scale=0.1, size=(1, 1))},
    )
    for lam in (0.5, 1.0, 2.0):
        a = solve_binary_nonchoice(model, lam)
        b = solve_multilevel_nonchoice(model, lam)
        for d in range(3):
            np.testing.assert_allclose(a.pi_raw[d], b.pi_raw[d], atol=1e-12)


def test_multilevel_huge_lambda_returns_design():
    design = color_size_design()
    model = _baseline_model(design, [[0.4, -0.2], [0.3]],
                            {(0, 1): np.array([[0.2], [-0.1]])})
    sol = solve_multilevel_nonchoice(model, 1e6)
    assert sol.valid
    for d, f in enumerate(design.factors):
        assert np.max(np.abs(sol.pi_raw[d] - f.assignment_probs)) < 1e-3


def test_multilevel_first_order_conditions_vanish():
    rng = np.random.default_rng(11)
    design = ConjointDesign(
        (
            FactorSpec("f0", ("a", "b"), np.array([0.5, 0.5])),
            FactorSpec("f1", ("a", "b", "c"), np.full(3, 1 / 3)),
            FactorSpec("f2", ("a", "b", "c"), np.full(3, 1 / 3)),
        )
    )
    for _ in range(10):
        main = [rng.normal(scale=0.2, size=c - 1) for c in design.level_counts]
        gamma = {
            (0, 1): rng.normal(scale=0.1, size=(1, 2)),
            (0, 2): rng.normal(scale=0.1, size=(1, 2)),
            (1, 2): rng.normal(scale=0.1, size=(2, 2)),
        }
        model = _baseline_model(design, main, gamma)
        sol = solve_multilevel_nonchoice(model, 2.0)
        assert sol.valid
        assert sol.foc_residual < 1e-9


def test_multilevel_requires_baseline():
    stz = _stz_model(color_size_design(), [[0.1, 0.0, -0.1], [0.0, 0.0]])
    with pytest.raises(ValidationError):
        solve_multilevel_nonchoice(stz, 1.0)


# ---------------------------------------------------------------------------
# forced-choice average case


def test_average_case_zero_coefficients_return_design():
    design = color_size_design()
    model = _stz_model(design, [np.zeros(3), np.zeros(2)],
                       {(0, 1): np.zeros((3, 2))})
    sol = solve_forced_choice_average_case(model, 0.7)
    assert sol.valid
    for d, f in enumerate(design.factors):
        np.testing.assert_allclose(sol.pi_raw[d], f.assignment_probs, atol=1e-14)


def test_average_case_binary_hand_solution():
    design = binary_design(1)
    b = 0.22
    model = _stz_model(design, [[b, -b]])
    for lam in (0.5, 1.0, 4.0):
        sol = solve_forced_choice_average_case(model, lam)
        expect = np.array([0.5 + b / (2 * lam), 0.5 - b / (2 * lam)])
        np.testing.assert_allclose(sol.pi_raw[0], expect, atol=1e-12)
        assert sol.foc_residual < 1e-12


def test_average_case_no_interaction_oracle():
    # diagonal system: pi_dl = p_dl + beta_dl / (2 lam) exactly
    design = color_size_design()
    rng = np.random.default_rng(13)
    for lam in (0.4, 1.0, 2.5):
        main = []
        for c in design.level_counts:
            v = rng.normal(scale=0.15, size=c)
            main.append(v - v.mean())
        model = _stz_model(design, main)
        sol = solve_forced_choice_average_case(model, lam)
        for d, f in enumerate(design.factors):
            expect = f.assignment_probs + model.main[d] / (2 * lam)
            np.testing.assert_allclose(sol.pi_raw[d], expect, atol=1e-12)


def test_average_case_huge_lambda_returns_design():
    design = color_size_design()
    model = _random_stz(design, np.random.default_rng(5))
    sol = solve_forced_choice_average_case(model, 1e6)
    for d, f in enumerate(design.factors):
        assert np.max(np.abs(sol.pi_raw[d] - f.assignment_probs)) < 1e-3


def test_average_case_solutions_sum_to_one():
    design = color_size_design()
    model = _random_stz(design, np.random.default_rng(19))
    sol = solve_forced_choice_average_case(model, 0.8)
    assert sol.valid
    for vec in sol.pi_raw:
        assert vec.sum() == pytest.approx(1.0, abs=1e-10)
    dist = sol.distribution()
    for vec in dist.probs:
        assert vec.sum() == pytest.approx(1.0, abs=1e-12)
    for d in range(design.n_factors):
        np.testing.assert_allclose(dist.probs[d], sol.pi_raw[d], atol=1e-9)


def test_average_case_monotone_regularization_path():
    design = color_size_design()
    model = _random_stz(design, np.random.default_rng(23), scale=0.15)
    p = np.concatenate([f.assignment_probs for f in design.factors])
    lams = (0.3, 0.5, 0.8, 1.3, 2.1, 3.4, 5.5)
    norms = []
    for lam in lams:
        sol = solve_forced_choice_average_case(model, lam)
        assert sol.valid
        norms.append(np.linalg.norm(sol.stacked() - p))
    for lo, hi in zip(norms[1:], norms[:-1]):
        assert lo <= hi + 1e-10


def test_average_case_requires_sum_to_zero():
    base = _baseline_model(color_size_design(), [[0.1, 0.0], [0.1]])
    with pytest.raises(ValidationError):
        solve_forced_choice_average_case(base, 1.0)


def test_average_case_foc_random_models():
    rng = np.random.default_rng(29)
    design = ConjointDesign(
        (
            FactorSpec("f0", ("a", "b", "c"), np.full(3, 1 / 3)),
            FactorSpec("f1", ("a", "b"), np.array([0.5, 0.5])),
            FactorSpec("f2", ("a", "b", "c", "d"), np.full(4, 0.25)),
        )
    )
    for _ in range(10):
        model = _random_stz(design, rng, scale=0.1)
        sol = solve_forced_choice_average_case(model, 1.0)
        assert sol.valid
        assert sol.foc_residual < 1e-9


# ---------------------------------------------------------------------------
# dispatch


def test_solve_for_coding_dispatch():
    stz = _random_stz(color_size_design(), np.random.default_rng(0))
    assert solve_for_coding(stz, 1.0).method == "forced_choice_average_case"
    binary = _baseline_model(binary_design(2), [[0.1], [0.05]])
    assert solve_for_coding(binary, 1.0).method == "binary_nonchoice"
    multi = _baseline_model(color_size_design(), [[0.1, 0.0], [0.05]])
    assert solve_for_coding(multi, 1.0).method == "multilevel_nonchoice"
