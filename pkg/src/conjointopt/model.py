"""Linear probability models on factorial profiles.

Two response types share one container. "choice" models regress a
forced-choice indicator on difference design rows between the two shown
profiles; "direct" models regress a real outcome on a single profile's
indicators. Both support main effects plus all two-way interactions.

Codings:
  * baseline      last level of every factor omitted; coefficients reported
                  on the remaining levels.
  * sum_to_zero   fit via an effects reparameterization, reported on the
                  full level set with per-factor coefficient sums of zero
                  (and zero row/column sums for interaction tables).
"""

from __future__ import annotations

import json
from dataclasses import dataclass, replace

import numpy as np
import scipy.linalg

from .dataio import ForcedChoiceDataset, ProfileSample
from .design import ConjointDesign, as_profile, design_from_json, design_to_json
from .errors import (
    InsufficientDataError,
    SchemaError,
    SingularFitError,
    ValidationError,
)

CODINGS = ("sum_to_zero", "baseline")
RESPONSES = ("choice", "direct")
VCOVS = ("iid", "respondent_cluster")

_RANK_TOL = 1e-10


@dataclass(frozen=True)
class FitSpec:
    """Options for a model fit."""

    coding: str = "sum_to_zero"
    vcov: str = "respondent_cluster"
    group: str | None = None
    stage: str | None = None
    interactions: bool = True

    def __post_init__(self):
        if self.coding not in CODINGS:
            raise ValidationError(f"coding must be one of {CODINGS}")
        if self.vcov not in VCOVS:
            raise ValidationError(f"vcov must be one of {VCOVS}")


@dataclass(frozen=True)
class OutcomeModel:
    """Fitted (or constructed) linear model over a factorial design.

    main[d] holds the coefficients for factor d on the stored basis; gamma
    maps factor pairs (d1, d2) with d1 < d2 to 2-d coefficient tables on the
    same basis. sigma, when present, is the coefficient covariance in
    param_names() order.
    """

    design: ConjointDesign
    response: str
    coding: str
    intercept: float
    main: tuple[np.ndarray, ...]
    gamma: dict
    sigma: np.ndarray | None = None
    group: str | None = None
    stage: str | None = None
    n_obs: int | None = None
    sigma2: float | None = None

    def __post_init__(self):
        if self.response not in RESPONSES:
            raise ValidationError(f"response must be one of {RESPONSES}")
        if self.coding not in CODINGS:
            raise ValidationError(f"coding must be one of {CODINGS}")
        counts = self.design.level_counts
        stored = [c if self.coding == "sum_to_zero" else c - 1 for c in counts]
        if len(self.main) != self.design.n_factors:
            raise ValidationError("one main-effect array per factor required")
        main = []
        for d, vec in enumerate(self.main):
            arr = np.asarray(vec, dtype=float)
            if arr.shape != (stored[d],):
                raise ValidationError(
                    f"main effects for factor {self.design.factors[d].name!r} "
                    f"must have length {stored[d]}"
                )
            arr = arr.copy()
            arr.flags.writeable = False
            main.append(arr)
        gamma = {}
        for key, table in dict(self.gamma).items():
            d1, d2 = key
            if not (0 <= d1 < d2 < self.design.n_factors):
                raise ValidationError(f"bad interaction key {key!r}")
            arr = np.asarray(table, dtype=float)
            if arr.shape != (stored[d1], stored[d2]):
                raise ValidationError(f"interaction table {key!r} has wrong shape")
            arr = arr.copy()
            arr.flags.writeable = False
            gamma[(d1, d2)] = arr
        p = 1 + sum(m.size for m in main) + sum(t.size for t in gamma.values())
        if self.sigma is not None:
            sig = np.asarray(self.sigma, dtype=float)
            if sig.shape != (p, p):
                raise ValidationError("covariance shape does not match parameters")
            sig = sig.copy()
            sig.flags.writeable = False
            object.__setattr__(self, "sigma", sig)
        object.__setattr__(self, "main", tuple(main))
        object.__setattr__(self, "gamma", gamma)

    # -- parameter vector ---------------------------------------------------

    def pairs(self) -> list[tuple[int, int]]:
        return sorted(self.gamma.keys())

    def n_params(self) -> int:
        return (
            1
            + sum(v.size for v in self.main)
            + sum(t.size for t in self.gamma.values())
        )

    def stored_levels(self, d: int) -> tuple[str, ...]:
        levels = self.design.factors[d].levels
        return levels if self.coding == "sum_to_zero" else levels[:-1]

    def param_names(self) -> list[str]:
        names = ["intercept"]
        for d, f in enumerate(self.design.factors):
            names += [f"main:{f.name}:{lv}" for lv in self.stored_levels(d)]
        for d1, d2 in self.pairs():
            f1 = self.design.factors[d1]
            f2 = self.design.factors[d2]
            for l1 in self.stored_levels(d1):
                for l2 in self.stored_levels(d2):
                    names.append(f"int:{f1.name}:{l1}:{f2.name}:{l2}")
        return names

    def to_theta(self) -> np.ndarray:
        parts = [np.array([self.intercept])]
        parts += [v for v in self.main]
        parts += [self.gamma[k].ravel() for k in self.pairs()]
        return np.concatenate(parts)

    def with_theta(self, theta: np.ndarray) -> "OutcomeModel":
        theta = np.asarray(theta, dtype=float)
        if theta.size != self.n_params():
            raise ValidationError("theta has wrong length")
        at = 1
        main = []
        for v in self.main:
            main.append(theta[at : at + v.size])
            at += v.size
        gamma = {}
        for k in self.pairs():
            t = self.gamma[k]
            gamma[k] = theta[at : at + t.size].reshape(t.shape)
            at += t.size
        return replace(
            self, intercept=float(theta[0]), main=tuple(main), gamma=gamma
        )

    # -- full-level views ---------------------------------------------------

    def full_main(self, d: int) -> np.ndarray:
        """Main effects on all L_d levels (baseline level padded with 0)."""
        if self.coding == "sum_to_zero":
            return self.main[d]
        return np.concatenate([self.main[d], [0.0]])

    def full_gamma(self, d1: int, d2: int) -> np.ndarray:
        """Interaction table on the full level grid for d1 < d2; zeros when
        the pair is absent from the model."""
        L1 = self.design.factors[d1].n_levels
        L2 = self.design.factors[d2].n_levels
        table = self.gamma.get((d1, d2))
        out = np.zeros((L1, L2))
        if table is not None:
            out[: table.shape[0], : table.shape[1]] = table
        return out

    def gamma_between(self, d: int, d_other: int) -> np.ndarray:
        """Full-level interaction between d and d_other, rows indexed by d."""
        if d < d_other:
            return self.full_gamma(d, d_other)
        return self.full_gamma(d_other, d).T

    # -- prediction ----------------------------------------------------------

    def _poly_single(self, profiles: np.ndarray) -> np.ndarray:
        profiles = np.atleast_2d(np.asarray(profiles, dtype=np.int64))
        out = np.zeros(profiles.shape[0])
        for d in range(self.design.n_factors):
            out += self.full_main(d)[profiles[:, d]]
        for d1, d2 in self.pairs():
            fg = self.full_gamma(d1, d2)
            out += fg[profiles[:, d1], profiles[:, d2]]
        return out

    def predict_choice(self, pa, pb) -> np.ndarray:
        if self.response != "choice":
            raise ValidationError("predict_choice requires a choice model")
        return self.intercept + self._poly_single(pa) - self._poly_single(pb)

    def predict_direct(self, profiles) -> np.ndarray:
        if self.response != "direct":
            raise ValidationError("predict_direct requires a direct model")
        return self.intercept + self._poly_single(profiles)


# ---------------------------------------------------------------------------
# design matrices

def _onehot(idx: np.ndarray, L: int) -> np.ndarray:
    return np.eye(L)[idx]


def _full_matrix(design, pa, pb, interactions):
    """Intercept + full-level indicators (or indicator differences) + full
    two-way product blocks, row-major within each block."""
    n = pa.shape[0]
    oh_a = [_onehot(pa[:, d], f.n_levels) for d, f in enumerate(design.factors)]
    oh_b = None
    if pb is not None:
        oh_b = [_onehot(pb[:, d], f.n_levels) for d, f in enumerate(design.factors)]
    cols = [np.ones((n, 1))]
    for d in range(design.n_factors):
        block = oh_a[d] - oh_b[d] if oh_b is not None else oh_a[d]
        cols.append(block)
    if interactions:
        for d1 in range(design.n_factors):
            L1 = design.factors[d1].n_levels
            for d2 in range(d1 + 1, design.n_factors):
                L2 = design.factors[d2].n_levels
                blk = np.einsum("nl,nm->nlm", oh_a[d1], oh_a[d2]).reshape(n, L1 * L2)
                if oh_b is not None:
                    blk = blk - np.einsum(
                        "nl,nm->nlm", oh_b[d1], oh_b[d2]
                    ).reshape(n, L1 * L2)
                cols.append(blk)
    return np.hstack(cols)


def _full_layout(design, interactions):
    """Column offsets inside the full-basis matrix."""
    counts = design.level_counts
    main_off = {}
    at = 1
    for d, c in enumerate(counts):
        main_off[d] = at
        at += c
    pair_off = {}
    if interactions:
        for d1 in range(design.n_factors):
            for d2 in range(d1 + 1, design.n_factors):
                pair_off[(d1, d2)] = at
                at += counts[d1] * counts[d2]
    return main_off, pair_off, at


def _effects_expansion(L: int) -> np.ndarray:
    """L x (L-1) map from free effect parameters to sum-to-zero coefficients."""
    E = np.zeros((L, L - 1))
    E[: L - 1, :] = np.eye(L - 1)
    E[L - 1, :] = -1.0
    return E


def expansion_matrix(design: ConjointDesign, coding: str, interactions: bool = True):
    """(M, sel): the fitted-to-stored coefficient map and the full-matrix
    column indices of the stored basis.

    sum_to_zero: stored = M @ fitted, with M the blocked effects expansion and
    sel covering every full-basis column. baseline: M is the identity and sel
    picks the non-baseline columns, which are fitted directly.
    """
    counts = design.level_counts
    main_off, pair_off, total = _full_layout(design, interactions)
    if coding == "baseline":
        sel = [0]
        for d, c in enumerate(counts):
            sel += [main_off[d] + l for l in range(c - 1)]
        for (d1, d2) in sorted(pair_off):
            off = pair_off[(d1, d2)]
            L2 = counts[d2]
            for l1 in range(counts[d1] - 1):
                for l2 in range(counts[d2] - 1):
                    sel.append(off + l1 * L2 + l2)
        return np.eye(len(sel)), np.asarray(sel, dtype=np.int64)
    blocks = [np.ones((1, 1))]
    for c in counts:
        blocks.append(_effects_expansion(c))
    for (d1, d2) in sorted(pair_off):
        blocks.append(
            np.kron(_effects_expansion(counts[d1]), _effects_expansion(counts[d2]))
        )
    M = scipy.linalg.block_diag(*blocks)
    return M, np.arange(total, dtype=np.int64)


def stored_design_matrix(design, coding, pa, pb, interactions=True) -> np.ndarray:
    """Rows on the stored coefficient basis; entries lie in {-1, 0, 1}."""
    pa = np.atleast_2d(np.asarray(pa, dtype=np.int64))
    pb_arr = None if pb is None else np.atleast_2d(np.asarray(pb, dtype=np.int64))
    full = _full_matrix(design, pa, pb_arr, interactions)
    if coding == "baseline":
        _, sel = expansion_matrix(design, coding, interactions)
        return full[:, sel]
    return full


def build_difference_design_row(t_a, t_b, design: ConjointDesign, coding: str) -> np.ndarray:
    """Feature row for one forced-choice task on the stored basis."""
    if coding not in CODINGS:
        raise ValidationError(f"coding must be one of {CODINGS}")
    a = as_profile(t_a)
    b = as_profile(t_b)
    a.validate(design)
    b.validate(design)
    return stored_design_matrix(design, coding, [a.levels], [b.levels])[0]


def build_profile_design_row(t, design: ConjointDesign, coding: str) -> np.ndarray:
    """Feature row for a single profile (direct response) on the stored basis."""
    if coding not in CODINGS:
        raise ValidationError(f"coding must be one of {CODINGS}")
    p = as_profile(t)
    p.validate(design)
    return stored_design_matrix(design, coding, [p.levels], None)[0]


# ---------------------------------------------------------------------------
# fitting

def _qr_ols(X, y, names):
    n, p = X.shape
    if n <= p:
        raise InsufficientDataError(
            f"{n} observations cannot identify {p} parameters"
        )
    Q, R, piv = scipy.linalg.qr(X, mode="economic", pivoting=True)
    diag = np.abs(np.diag(R))
    tol = _RANK_TOL * diag.max() if diag.size else 0.0
    rank = int(np.sum(diag > tol))
    if rank < p:
        aliased = [names[j] for j in piv[rank:]]
        raise SingularFitError(aliased)
    beta_piv = scipy.linalg.solve_triangular(R, Q.T @ y)
    beta = np.empty(p)
    beta[piv] = beta_piv
    # (X'X)^{-1} recovered from the pivoted R factor
    Rinv = scipy.linalg.solve_triangular(R, np.eye(p))
    xtx_inv = np.empty((p, p))
    xtx_inv[np.ix_(piv, piv)] = Rinv @ Rinv.T
    resid = y - X @ beta
    return beta, xtx_inv, resid


def _vcov(X, resid, xtx_inv, vcov, clusters):
    n, p = X.shape
    sigma2 = float(resid @ resid) / (n - p)
    if vcov == "iid":
        return sigma2 * xtx_inv, sigma2
    # respondent-clustered sandwich with a G/(G-1) small-sample factor
    ids, inverse = np.unique(clusters.astype(str), return_inverse=True)
    G = ids.size
    if G < 2:
        raise ValidationError("clustered covariance needs at least 2 respondents")
    Xe = X * resid[:, None]
    scores = np.zeros((G, p))
    np.add.at(scores, inverse, Xe)
    meat = scores.T @ scores * (G / (G - 1))
    return xtx_inv @ meat @ xtx_inv, sigma2


def _finish_fit(design, coding, response, theta_red, sigma_red, spec, n, sigma2,
                interactions):
    M, _ = expansion_matrix(design, coding, interactions)
    theta = M @ theta_red
    sigma = M @ sigma_red @ M.T
    counts = design.level_counts
    stored = [c if coding == "sum_to_zero" else c - 1 for c in counts]
    at = 1
    main = []
    for s in stored:
        main.append(theta[at : at + s])
        at += s
    gamma = {}
    if interactions:
        for d1 in range(design.n_factors):
            for d2 in range(d1 + 1, design.n_factors):
                size = stored[d1] * stored[d2]
                gamma[(d1, d2)] = theta[at : at + size].reshape(stored[d1], stored[d2])
                at += size
    return OutcomeModel(
        design=design,
        response=response,
        coding=coding,
        intercept=float(theta[0]),
        main=tuple(main),
        gamma=gamma,
        sigma=sigma,
        group=spec.group,
        stage=spec.stage,
        n_obs=n,
        sigma2=sigma2,
    )


def _reduced_names(design, interactions):
    """Names of the fitted (free) parameters: last level always dropped."""
    names = ["intercept"]
    for f in design.factors:
        names += [f"main:{f.name}:{lv}" for lv in f.levels[:-1]]
    if interactions:
        for d1 in range(design.n_factors):
            for d2 in range(d1 + 1, design.n_factors):
                f1, f2 = design.factors[d1], design.factors[d2]
                for l1 in f1.levels[:-1]:
                    for l2 in f2.levels[:-1]:
                        names.append(f"int:{f1.name}:{l1}:{f2.name}:{l2}")
    return names


def fit_outcome_model(data: ForcedChoiceDataset, spec: FitSpec = FitSpec()) -> OutcomeModel:
    """OLS fit of the forced-choice linear probability model."""
    pa, pb, y, rid, stage, group = data.arrays()
    keep = np.ones(len(y), dtype=bool)
    if spec.group is not None:
        keep &= group == spec.group
    if spec.stage is not None:
        keep &= stage == spec.stage
    if not keep.any():
        raise InsufficientDataError("no records match the group/stage filter")
    pa, pb, y, rid = pa[keep], pb[keep], y[keep], rid[keep]
    design = data.design
    full = _full_matrix(design, pa, pb, spec.interactions)
    M, sel = expansion_matrix(design, spec.coding, spec.interactions)
    X = full[:, sel] if spec.coding == "baseline" else full @ M
    names = _reduced_names(design, spec.interactions)
    theta_red, xtx_inv, resid = _qr_ols(X, y, names)
    sigma_red, sigma2 = _vcov(X, resid, xtx_inv, spec.vcov, rid)
    return _finish_fit(design, spec.coding, "choice", theta_red, sigma_red, spec,
                       len(y), sigma2, spec.interactions)


def fit_profile_model(sample: ProfileSample, spec: FitSpec = FitSpec(vcov="iid")) -> OutcomeModel:
    """OLS fit of a direct-response model on single profiles."""
    if spec.vcov == "respondent_cluster":
        raise ValidationError("profile samples carry no respondent ids; use iid")
    design = sample.design
    full = _full_matrix(design, sample.profiles, None, spec.interactions)
    M, sel = expansion_matrix(design, spec.coding, spec.interactions)
    X = full[:, sel] if spec.coding == "baseline" else full @ M
    names = _reduced_names(design, spec.interactions)
    theta_red, xtx_inv, resid = _qr_ols(X, sample.y, names)
    sigma_red, sigma2 = _vcov(X, resid, xtx_inv, "iid", None)
    return _finish_fit(design, spec.coding, "direct", theta_red, sigma_red, spec,
                       len(sample), sigma2, spec.interactions)


# ---------------------------------------------------------------------------
# serialization

def model_to_json(model: OutcomeModel) -> dict:
    names = model.param_names()
    theta = model.to_theta()
    return {
        "response": model.response,
        "coding": model.coding,
        "group": model.group,
        "stage": model.stage,
        "n_obs": model.n_obs,
        "sigma2": model.sigma2,
        "design": design_to_json(model.design),
        "param_order": names,
        "coefficients": {k: float(v) for k, v in zip(names, theta)},
        "covariance": None
        if model.sigma is None
        else [float(v) for v in model.sigma.ravel()],
        "interaction_pairs": [
            [model.design.factors[d1].name, model.design.factors[d2].name]
            for d1, d2 in model.pairs()
        ],
    }


def model_from_json(doc) -> OutcomeModel:
    if isinstance(doc, str):
        try:
            doc = json.loads(doc)
        except json.JSONDecodeError as e:
            raise SchemaError(f"model JSON does not parse: {e}") from None
    for key in ("response", "coding", "design", "param_order", "coefficients"):
        if key not in doc:
            raise SchemaError(f"model JSON missing key {key!r}")
    design = design_from_json(doc["design"])
    coding = doc["coding"]
    if coding not in CODINGS:
        raise SchemaError(f"unknown coding {coding!r}")
    coeffs = doc["coefficients"]
    order = list(doc["param_order"])
    if set(order) != set(coeffs):
        raise SchemaError("param_order and coefficients disagree")

    def fetch(name):
        try:
            return float(coeffs[name])
        except KeyError:
            raise SchemaError(f"model JSON missing coefficient {name!r}") from None

    def stored_levels(f):
        return f.levels if coding == "sum_to_zero" else f.levels[:-1]

    pair_names = doc.get("interaction_pairs")
    if pair_names is not None:
        pairs = [
            tuple(sorted((design.factor_index(a), design.factor_index(b))))
            for a, b in pair_names
        ]
    else:
        pairs = []
        for d1 in range(design.n_factors):
            for d2 in range(d1 + 1, design.n_factors):
                f1, f2 = design.factors[d1], design.factors[d2]
                probe = (
                    f"int:{f1.name}:{stored_levels(f1)[0]}:"
                    f"{f2.name}:{stored_levels(f2)[0]}"
                )
                if probe in coeffs:
                    pairs.append((d1, d2))

    intercept = fetch("intercept")
    main = []
    for f in design.factors:
        main.append(np.array([fetch(f"main:{f.name}:{lv}") for lv in stored_levels(f)]))
    gamma = {}
    for d1, d2 in pairs:
        f1, f2 = design.factors[d1], design.factors[d2]
        table = np.array(
            [
                [fetch(f"int:{f1.name}:{a}:{f2.name}:{b}") for b in stored_levels(f2)]
                for a in stored_levels(f1)
            ]
        )
        gamma[(d1, d2)] = table
    sigma = None
    if doc.get("covariance") is not None:
        p = 1 + sum(len(m) for m in main) + sum(t.size for t in gamma.values())
        flat = np.asarray(doc["covariance"], dtype=float)
        if flat.size != p * p:
            raise SchemaError("covariance length does not match parameter count")
        sigma = flat.reshape(p, p)
    return OutcomeModel(
        design=design,
        response=doc["response"],
        coding=coding,
        intercept=intercept,
        main=tuple(main),
        gamma=gamma,
        sigma=sigma,
        group=doc.get("group"),
        stage=doc.get("stage"),
        n_obs=doc.get("n_obs"),
        sigma2=doc.get("sigma2"),
    )


def load_model(path) -> OutcomeModel:
    with open(path, "r", encoding="utf-8") as fh:
        return model_from_json(fh.read())


def save_model(model: OutcomeModel, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(model_to_json(model), fh, indent=2)
        fh.write("\n")
