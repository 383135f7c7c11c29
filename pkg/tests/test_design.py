import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conjointopt import (
    ConjointDesign,
    FactorSpec,
    Profile,
    ProfileDistribution,
    SoftmaxParams,
    SupportTooLargeError,
    ValidationError,
    design_from_json,
    design_to_json,
    distribution_to_softmax,
    enumerate_support,
    load_design,
    profile_probability,
    save_design,
    softmax_jacobian_factor,
    softmax_to_distribution,
)

from conftest import binary_design, color_size_design


def random_distribution(design, rng):
    probs = []
    for f in design.factors:
        raw = rng.random(f.n_levels) + 0.05
        probs.append(raw / raw.sum())
    return ProfileDistribution(design, tuple(probs))


# ---------------------------------------------------------------------------
# construction and validation


def test_factor_needs_two_levels():
    with pytest.raises(ValidationError):
        FactorSpec("solo", ("only",), np.array([1.0]))


def test_factor_probs_must_sum_to_one():
    with pytest.raises(ValidationError):
        FactorSpec("bad", ("a", "b"), np.array([0.7, 0.6]))


def test_near_one_sum_is_renormalized():
    f = FactorSpec("ok", ("a", "b"), np.array([0.5, 0.5 + 5e-10]))
    assert f.assignment_probs.sum() == pytest.approx(1.0, abs=1e-15)


def test_duplicate_factor_names_rejected():
    f = FactorSpec("x", ("a", "b"), np.array([0.5, 0.5]))
    with pytest.raises(ValidationError):
        ConjointDesign((f, f))


def test_support_size_is_exact_product():
    design = ConjointDesign(
        (
            FactorSpec("a", ("1", "2", "3"), np.full(3, 1 / 3)),
            FactorSpec("b", ("1", "2"), np.array([0.5, 0.5])),
            FactorSpec("c", ("1", "2", "3", "4"), np.full(4, 0.25)),
        )
    )
    assert design.support_size() == 24


def test_profile_bounds_checked():
    design = binary_design(2)
    with pytest.raises(ValidationError):
        Profile((0, 2)).validate(design)


# ---------------------------------------------------------------------------
# softmax map


def test_softmax_zeros_is_uniform():
    design = ConjointDesign(
        (FactorSpec("f", ("a", "b", "c"), np.full(3, 1 / 3)),)
    )
    pi = softmax_to_distribution(SoftmaxParams.zeros(design))
    assert np.allclose(pi.factor(0), [1 / 3, 1 / 3, 1 / 3], atol=1e-15)


def test_softmax_log3_binary():
    design = binary_design(1)
    a = SoftmaxParams(design, (np.array([np.log(3.0)]),))
    pi = softmax_to_distribution(a)
    assert pi.factor(0) == pytest.approx([0.75, 0.25], abs=1e-15)


def test_softmax_large_parameter_saturates():
    design = ConjointDesign(
        (FactorSpec("f", ("a", "b", "c"), np.full(3, 1 / 3)),)
    )
    a = SoftmaxParams(design, (np.array([50.0, 0.0]),))
    pi = softmax_to_distribution(a)
    assert pi.factor(0)[0] == pytest.approx(1.0, abs=1e-15)
    assert pi.factor(0)[1] == pytest.approx(0.0, abs=1e-15)
    assert pi.factor(0)[2] == pytest.approx(0.0, abs=1e-15)


def test_softmax_rejects_non_finite():
    design = binary_design(1)
    with pytest.raises(ValidationError):
        SoftmaxParams(design, (np.array([np.inf]),))


def test_softmax_round_trip():
    design = color_size_design()
    rng = np.random.default_rng(5)
    for _ in range(20):
        pi = random_distribution(design, rng)
        back = softmax_to_distribution(distribution_to_softmax(pi))
        for d in range(design.n_factors):
            assert np.allclose(back.factor(d), pi.factor(d), atol=1e-10)


def test_softmax_jacobian_matches_finite_differences():
    rng = np.random.default_rng(11)
    design = ConjointDesign(
        (FactorSpec("f", ("a", "b", "c", "d"), np.full(4, 0.25)),)
    )
    a0 = rng.normal(size=3)
    h = 1e-6

    def pi_of(a_free):
        return softmax_to_distribution(
            SoftmaxParams(design, (a_free,))
        ).factor(0)

    pi = pi_of(a0)
    J = softmax_jacobian_factor(pi)
    for j in range(3):
        up, dn = a0.copy(), a0.copy()
        up[j] += h
        dn[j] -= h
        fd = (pi_of(up) - pi_of(dn)) / (2 * h)
        assert np.allclose(J[:, j], fd, rtol=1e-7, atol=1e-9)


# ---------------------------------------------------------------------------
# profile probability and support


def test_profile_probability_uniform_binary():
    design = binary_design(3)
    pi = design.assignment()
    assert profile_probability(pi, Profile((0, 1, 0))) == pytest.approx(0.125)


def test_profile_probability_single_factor():
    design = ConjointDesign(
        (FactorSpec("f", ("a", "b"), np.array([0.8, 0.2])),)
    )
    pi = design.assignment()
    assert profile_probability(pi, Profile((0,))) == pytest.approx(0.8)


def test_profile_probability_product():
    design = ConjointDesign(
        (
            FactorSpec("f", ("a", "b"), np.array([0.5, 0.5])),
            FactorSpec("g", ("a", "b"), np.array([0.75, 0.25])),
        )
    )
    pi = design.assignment()
    assert profile_probability(pi, Profile((0, 1))) == pytest.approx(0.125)


def test_enumerate_support_lexicographic():
    design = binary_design(2)
    got = [t.levels for t in enumerate_support(design)]
    assert got == [(0, 0), (0, 1), (1, 0), (1, 1)]


def test_enumerate_support_single_factor():
    design = ConjointDesign(
        (FactorSpec("f", ("a", "b", "c"), np.full(3, 1 / 3)),)
    )
    assert len(list(enumerate_support(design))) == 3


def test_enumerate_support_cap():
    design = binary_design(20)
    with pytest.raises(SupportTooLargeError):
        list(enumerate_support(design, cap=10**5))


@settings(max_examples=25, deadline=None)
@given(
    st.integers(min_value=1, max_value=6),
    st.integers(min_value=0, max_value=2**31 - 1),
)
def test_support_probabilities_sum_to_one(n_factors, seed):
    rng = np.random.default_rng(seed)
    design = ConjointDesign(
        tuple(_random_factor(rng, d) for d in range(n_factors))
    )
    pi = random_distribution(design, rng)
    total = sum(
        profile_probability(pi, t) for t in enumerate_support(design)
    )
    assert total == pytest.approx(1.0, abs=1e-9)


def _random_factor(rng, d):
    k = int(rng.integers(2, 5))
    raw = rng.random(k) + 0.1
    return FactorSpec(f"f{d}", tuple(f"l{i}" for i in range(k)), raw / raw.sum())


# ---------------------------------------------------------------------------
# serialization


def test_design_json_round_trip(tmp_path):
    design = color_size_design()
    doc = design_to_json(design)
    back = design_from_json(doc)
    assert back.level_counts == design.level_counts
    assert [f.name for f in back.factors] == ["color", "size"]
    path = tmp_path / "design.json"
    save_design(design, path)
    loaded = load_design(path)
    assert design_to_json(loaded) == doc
    # the exact field names are part of the file contract
    assert set(doc["factors"][0]) == {"name", "levels", "p"}


def test_design_json_rejects_missing_keys():
    with pytest.raises(ValidationError):
        design_from_json({"factors": [{"name": "x", "levels": ["a", "b"]}]})


def test_design_json_rejects_bad_document():
    with pytest.raises(ValidationError):
        design_from_json(json.dumps({"nope": []}))
