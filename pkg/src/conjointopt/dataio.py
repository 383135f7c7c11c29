"""Forced-choice task data: CSV round trip and respondent-level splits.

CSV schema, one row per task:
    respondent_id,task_id,stage,group,chose_a,<factor>_a...,<factor>_b...
Profile cells hold level names and are case sensitive. Stage is either
"primary" or "general".
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from .design import ConjointDesign, Profile
from .errors import CannotSplitError, ParseError, ValidationError

STAGES = ("primary", "general")


@dataclass(frozen=True)
class TaskRecord:
    """One forced-choice task shown to one respondent."""

    respondent_id: str
    task_id: str
    stage: str
    group: str
    profile_a: Profile
    profile_b: Profile
    chose_a: int

    def __post_init__(self):
        if self.stage not in STAGES:
            raise ValidationError(
                f"stage must be one of {STAGES}, got {self.stage!r}"
            )
        if self.chose_a not in (0, 1):
            raise ValidationError(f"chose_a must be 0 or 1, got {self.chose_a!r}")


@dataclass(frozen=True)
class ForcedChoiceDataset:
    """A design plus a nonempty sequence of task records."""

    design: ConjointDesign
    records: tuple[TaskRecord, ...]

    def __post_init__(self):
        records = tuple(self.records)
        if not records:
            raise ValidationError("dataset must contain at least one record")
        for r in records:
            r.profile_a.validate(self.design)
            r.profile_b.validate(self.design)
        object.__setattr__(self, "records", records)
        object.__setattr__(self, "_cache", {})

    def __len__(self):
        return len(self.records)

    def respondents(self) -> list[str]:
        """Unique respondent ids, sorted."""
        return sorted({r.respondent_id for r in self.records})

    def subset(self, predicate) -> "ForcedChoiceDataset":
        kept = tuple(r for r in self.records if predicate(r))
        if not kept:
            raise ValidationError("subset selects no records")
        return ForcedChoiceDataset(self.design, kept)

    def arrays(self):
        """Cached numpy views used by the fitting and weighting code:
        (profiles_a, profiles_b, chose_a, respondent_ids, stages, groups)."""
        cache = self._cache
        if "arrays" not in cache:
            n = len(self.records)
            D = self.design.n_factors
            pa = np.empty((n, D), dtype=np.int64)
            pb = np.empty((n, D), dtype=np.int64)
            y = np.empty(n, dtype=float)
            rid = np.empty(n, dtype=object)
            stage = np.empty(n, dtype=object)
            group = np.empty(n, dtype=object)
            for i, r in enumerate(self.records):
                pa[i] = r.profile_a.levels
                pb[i] = r.profile_b.levels
                y[i] = r.chose_a
                rid[i] = r.respondent_id
                stage[i] = r.stage
                group[i] = r.group
            cache["arrays"] = (pa, pb, y, rid, stage, group)
        return cache["arrays"]


@dataclass(frozen=True)
class ProfileSample:
    """Single-profile outcome data (T_i, Y_i): the input to the weighting
    estimator. Forced-choice data maps here via the side-a profile and the
    choice indicator."""

    design: ConjointDesign
    profiles: np.ndarray  # (n, D) int level indices
    y: np.ndarray  # (n,) float outcomes

    def __post_init__(self):
        profiles = np.asarray(self.profiles, dtype=np.int64)
        y = np.asarray(self.y, dtype=float)
        if profiles.ndim != 2 or profiles.shape[1] != self.design.n_factors:
            raise ValidationError("profiles must be (n, D) level indices")
        if y.shape != (profiles.shape[0],) or profiles.shape[0] == 0:
            raise ValidationError("y must be one outcome per profile row")
        if not np.all(np.isfinite(y)):
            raise ValidationError("non-finite outcome")
        counts = np.asarray(self.design.level_counts)
        if np.any(profiles < 0) or np.any(profiles >= counts[None, :]):
            raise ValidationError("profile level index out of range")
        object.__setattr__(self, "profiles", profiles)
        object.__setattr__(self, "y", y)

    def __len__(self):
        return self.y.size


def as_profile_sample(data) -> ProfileSample:
    if isinstance(data, ProfileSample):
        return data
    if isinstance(data, ForcedChoiceDataset):
        pa, _, y, _, _, _ = data.arrays()
        return ProfileSample(data.design, pa, y)
    raise ValidationError(f"cannot interpret {type(data).__name__} as profile data")


# ---------------------------------------------------------------------------
# CSV round trip

_FIXED_COLUMNS = ("respondent_id", "task_id", "stage", "group", "chose_a")


def _columns(design: ConjointDesign) -> list[str]:
    cols = list(_FIXED_COLUMNS)
    cols += [f"{f.name}_a" for f in design.factors]
    cols += [f"{f.name}_b" for f in design.factors]
    return cols


def load_dataset(path, design: ConjointDesign) -> ForcedChoiceDataset:
    expected = _columns(design)
    records = []
    with open(path, "r", encoding="utf-8", newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None:
            raise ParseError(f"{path}: empty file")
        if list(reader.fieldnames) != expected:
            raise ParseError(
                f"{path}: header mismatch; expected {expected}, "
                f"got {list(reader.fieldnames)}"
            )
        for rownum, row in enumerate(reader, start=2):
            if any(v is None for v in row.values()):
                raise ParseError(f"{path}: row {rownum}: missing fields")
            try:
                chose = int(row["chose_a"])
            except ValueError:
                raise ParseError(
                    f"{path}: row {rownum}: chose_a must be 0 or 1"
                ) from None
            levels_a, levels_b = [], []
            for f in design.factors:
                for suffix, bucket in (("_a", levels_a), ("_b", levels_b)):
                    cell = row[f.name + suffix]
                    try:
                        bucket.append(f.levels.index(cell))
                    except ValueError:
                        raise ParseError(
                            f"{path}: row {rownum}: unknown level {cell!r} "
                            f"for factor {f.name!r}"
                        ) from None
            try:
                records.append(
                    TaskRecord(
                        respondent_id=row["respondent_id"],
                        task_id=row["task_id"],
                        stage=row["stage"],
                        group=row["group"],
                        profile_a=Profile(tuple(levels_a)),
                        profile_b=Profile(tuple(levels_b)),
                        chose_a=chose,
                    )
                )
            except ValidationError as e:
                raise ParseError(f"{path}: row {rownum}: {e}") from None
    if not records:
        raise ParseError(f"{path}: no data rows")
    return ForcedChoiceDataset(design, tuple(records))


def write_dataset(data: ForcedChoiceDataset, path) -> None:
    design = data.design
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(_columns(design))
        for r in data.records:
            row = [r.respondent_id, r.task_id, r.stage, r.group, str(r.chose_a)]
            row += [design.factors[d].levels[l] for d, l in enumerate(r.profile_a)]
            row += [design.factors[d].levels[l] for d, l in enumerate(r.profile_b)]
            writer.writerow(row)


# ---------------------------------------------------------------------------
# respondent-level split

def _splitmix64(state: int) -> tuple[int, int]:
    """One step of the splitmix64 stream; returns (new_state, output)."""
    state = (state + 0x9E3779B97F4A7C15) & 0xFFFFFFFFFFFFFFFF
    z = state
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & 0xFFFFFFFFFFFFFFFF
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & 0xFFFFFFFFFFFFFFFF
    return state, z ^ (z >> 31)


def _shuffled(items: list, seed: int) -> list:
    """Fisher-Yates shuffle driven by a splitmix64 stream."""
    out = list(items)
    state = seed & 0xFFFFFFFFFFFFFFFF
    for i in range(len(out) - 1, 0, -1):
        state, draw = _splitmix64(state)
        j = draw % (i + 1)
        out[i], out[j] = out[j], out[i]
    return out


@dataclass(frozen=True)
class SplitResult:
    first: ForcedChoiceDataset
    second: ForcedChoiceDataset
    seed: int
    first_respondents: tuple[str, ...]


def split_dataset(data: ForcedChoiceDataset, fraction: float, seed: int) -> SplitResult:
    """Deterministic two-way split by respondent.

    Respondents are sorted, shuffled by a seeded splitmix64 stream, and the
    first floor(fraction * n_respondents) go into the first part. All records
    of a respondent stay together.
    """
    if not 0.0 < fraction < 1.0:
        raise ValidationError("split fraction must lie strictly between 0 and 1")
    respondents = data.respondents()
    if len(respondents) < 2:
        raise CannotSplitError("need at least 2 respondents to split")
    k = int(np.floor(fraction * len(respondents)))
    if k == 0 or k == len(respondents):
        raise CannotSplitError(
            f"fraction {fraction} with {len(respondents)} respondents would "
            f"leave an empty part"
        )
    shuffled = _shuffled(respondents, seed)
    chosen = set(shuffled[:k])
    first = tuple(r for r in data.records if r.respondent_id in chosen)
    second = tuple(r for r in data.records if r.respondent_id not in chosen)
    return SplitResult(
        first=ForcedChoiceDataset(data.design, first),
        second=ForcedChoiceDataset(data.design, second),
        seed=seed,
        first_respondents=tuple(shuffled[:k]),
    )


def fold_assignments(respondents: list[str], folds: int, seed: int) -> dict[str, int]:
    """Round-robin fold labels over shuffled respondents; deterministic."""
    if folds < 2:
        raise ValidationError("need at least 2 folds")
    if len(respondents) < folds:
        raise CannotSplitError(
            f"cannot make {folds} folds from {len(respondents)} respondents"
        )
    shuffled = _shuffled(sorted(respondents), seed)
    return {rid: i % folds for i, rid in enumerate(shuffled)}
