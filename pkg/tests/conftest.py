"""Shared builders for the test suite."""

import numpy as np
import pytest

from conjointopt import (
    ConjointDesign,
    FactorSpec,
    ForcedChoiceDataset,
    Profile,
    TaskRecord,
)

DATA_DIR = __file__.rsplit("/", 1)[0] + "/data"


def binary_design(n_factors: int, p: float = 0.5) -> ConjointDesign:
    return ConjointDesign(
        tuple(
            FactorSpec(f"f{d}", ("lo", "hi"), np.array([p, 1.0 - p]))
            for d in range(n_factors)
        )
    )


def color_size_design() -> ConjointDesign:
    return ConjointDesign(
        (
            FactorSpec("color", ("red", "green", "blue"), np.array([1 / 3, 1 / 3, 1 / 3])),
            FactorSpec("size", ("small", "large"), np.array([0.5, 0.5])),
        )
    )


def forced_choice_data(design, utilities, n_resp=200, tasks=4, seed=0, stage="primary",
                       group="side_a"):
    """Logistic forced-choice data from per-factor level utilities."""
    rng = np.random.default_rng(seed)
    counts = design.level_counts
    records = []
    for i in range(n_resp):
        for t in range(tasks):
            a = tuple(int(rng.integers(0, c)) for c in counts)
            b = tuple(int(rng.integers(0, c)) for c in counts)
            ua = sum(utilities[d][a[d]] for d in range(design.n_factors))
            ub = sum(utilities[d][b[d]] for d in range(design.n_factors))
            p = 1.0 / (1.0 + np.exp(-(ua - ub)))
            records.append(
                TaskRecord(
                    respondent_id=f"r{i:05d}",
                    task_id=f"t{t}",
                    stage=stage,
                    group=group,
                    profile_a=Profile(a),
                    profile_b=Profile(b),
                    chose_a=int(rng.random() < p),
                )
            )
    return ForcedChoiceDataset(design, tuple(records))


@pytest.fixture
def two_factor_design():
    return color_size_design()


@pytest.fixture
def small_dataset(two_factor_design):
    utilities = [np.array([0.6, 0.0, -0.6]), np.array([0.3, -0.3])]
    return forced_choice_data(two_factor_design, utilities, n_resp=150, seed=3)
