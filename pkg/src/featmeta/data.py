"""Trial dataset types, validation, file IO, and covariate centering.

A dataset holds contrast-level observations from randomized trials: each
observation is a mean difference in change from baseline between an
intervention arm and a trial-specific reference arm, at one follow-up
category. Interventions are coded as binary feature vectors against a
shared schema; trials also carry study-level covariates and follow-up
indicators, with optional interaction terms defined on the schema.

Trials whose reference arm is an inactive control are "control
comparison" trials; trials whose reference is itself a coded intervention
are "active comparison" trials. All per-trial vectors and matrices are
ordered time-major, then arm (in input order).
"""

from __future__ import annotations

import json
from dataclasses import dataclass, replace
from pathlib import Path
from typing import IO, Mapping, Sequence

import numpy as np

__all__ = [
    "DataError",
    "DataFormatError",
    "DataValidationError",
    "Factor",
    "CovariateSchema",
    "InterventionArm",
    "FollowUpIndicator",
    "Observation",
    "TrialRecord",
    "Dataset",
    "CenteringRecord",
    "schema_from_dict",
    "load_dataset",
    "save_dataset",
    "validate_trial",
    "validate_dataset",
    "center_covariates",
]

FACTOR_LEVELS = ("intervention", "study", "followup")


class DataError(Exception):
    """Base class for dataset errors."""


class DataFormatError(DataError):
    """The input document could not be parsed or is structurally malformed."""


class DataValidationError(DataError):
    """The input parsed but violates a dataset invariant."""


# ---------------------------------------------------------------------------
# Schema
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Factor:
    """One term of an interaction: a reference to a single covariate.

    ``level`` is one of "intervention", "study", "followup"; ``index`` is
    0-based into that level's covariates (for "followup", into the q-1
    dummy indicators, not the categories).
    """

    level: str
    index: int

    def __post_init__(self):
        if self.level not in FACTOR_LEVELS:
            raise ValueError(f"unknown factor level {self.level!r}")
        if self.index < 0:
            raise ValueError("factor index must be non-negative")


@dataclass(frozen=True)
class CovariateSchema:
    """Covariate dimensions and interaction definitions shared by all trials.

    n: number of binary intervention features.
    p: number of study-level covariates (real-valued).
    q: number of follow-up categories (q >= 1); category 1 is the
       reference and is encoded by the all-zero dummy vector.
    interactions: one factor-set per interaction term; each term's value
       is the product of its referenced covariates.
    names: optional display labels, keyed "x", "z", "w", "interactions".
    """

    n: int
    p: int
    q: int
    interactions: tuple[tuple[Factor, ...], ...] = ()
    names: Mapping[str, Sequence[str]] | None = None

    def __post_init__(self):
        if self.n < 0 or self.p < 0:
            raise ValueError("covariate counts must be non-negative")
        if self.q < 1:
            raise ValueError("need at least one follow-up category")
        object.__setattr__(
            self, "interactions", tuple(tuple(fs) for fs in self.interactions)
        )
        bounds = {"intervention": self.n, "study": self.p, "followup": self.q - 1}
        for j, factors in enumerate(self.interactions):
            if not factors:
                raise ValueError(f"interaction {j} has an empty factor set")
            if len(set(factors)) != len(factors):
                raise ValueError(f"interaction {j} repeats a factor")
            for f in factors:
                if f.index >= bounds[f.level]:
                    raise ValueError(
                        f"interaction {j}: {f.level} index {f.index} out of range"
                    )

    @property
    def l(self) -> int:  # noqa: E743 - matches the model's interaction count
        return len(self.interactions)

    def parameter_names(self) -> list[str]:
        """Canonical parameter names in sampling order (machine-friendly)."""
        names = ["alpha"]
        names += [f"beta_{j + 1}" for j in range(self.n)]
        names += [f"gamma_{j + 1}" for j in range(self.p)]
        names += [f"phi_{j + 1}" for j in range(self.q - 1)]
        names += [f"eta_{j + 1}" for j in range(self.l)]
        names.append("tau")
        return names

    def parameter_labels(self) -> list[str]:
        """Display labels in sampling order, using ``names`` when provided."""
        names = self.names or {}

        def block(key, count, fallback):
            given = list(names.get(key, ()))
            return [given[j] if j < len(given) else fallback(j) for j in range(count)]

        labels = ["intercept"]
        labels += block("x", self.n, lambda j: f"x{j + 1}")
        labels += block("z", self.p, lambda j: f"z{j + 1}")
        labels += block("w", self.q - 1, lambda j: f"w{j + 1}")
        labels += block("interactions", self.l, lambda j: f"J{j + 1}")
        labels.append("heterogeneity")
        return labels

    @property
    def n_parameters(self) -> int:
        """Model parameter count: intercept + coefficients + heterogeneity SD."""
        return 2 + self.n + self.p + (self.q - 1) + self.l


# ---------------------------------------------------------------------------
# Trial components
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class InterventionArm:
    """One coded intervention arm: identifier plus binary feature vector."""

    arm_id: str
    x: tuple[float, ...]

    def __post_init__(self):
        object.__setattr__(self, "x", tuple(float(v) for v in self.x))


@dataclass(frozen=True)
class FollowUpIndicator:
    """Follow-up category with its dummy encoding.

    Category 1 maps to the all-zero dummy vector; category c > 1 sets a
    single 1 at dummy position c-1. Multiple simultaneous dummies are
    unrepresentable by construction.
    """

    category_index: int
    q: int

    def __post_init__(self):
        if not 1 <= self.category_index <= self.q:
            raise ValueError(
                f"category {self.category_index} outside 1..{self.q}"
            )

    @property
    def w(self) -> tuple[float, ...]:
        dummies = [0.0] * (self.q - 1)
        if self.category_index > 1:
            dummies[self.category_index - 2] = 1.0
        return tuple(dummies)

    @classmethod
    def from_category(cls, category: int, q: int) -> "FollowUpIndicator":
        return cls(category_index=category, q=q)


@dataclass(frozen=True)
class Observation:
    """One contrast-level measurement: arm vs reference at one follow-up.

    ``y`` is the mean difference in change from baseline; ``v`` its
    within-study sampling variance (squared standard error).
    """

    arm_id: str
    time: FollowUpIndicator
    y: float
    v: float


@dataclass(frozen=True)
class TrialRecord:
    """One trial's arms, covariates, observations, and variance inputs.

    ``arms`` holds every coded arm: the non-reference arms, plus (for
    active-comparison trials only) the reference arm named by
    ``reference_arm``. Control-comparison trials have an uncoded control
    reference and must leave ``reference_arm`` unset.

    ``ref_change_var`` optionally maps follow-up category -> variance of
    the reference arm's change score, used for within-trial covariances;
    when absent it is imputed downstream. ``rho_y`` / ``rho_d`` override
    the dataset-level correlation coefficients for this trial.
    """

    trial_id: str
    comparison: str  # "control" | "active"
    arms: tuple[InterventionArm, ...]
    z: tuple[float, ...]
    observations: tuple[Observation, ...]
    reference_arm: str | None = None
    ref_change_var: Mapping[int, float] | None = None
    rho_y: float | None = None
    rho_d: float | None = None

    def __post_init__(self):
        object.__setattr__(self, "arms", tuple(self.arms))
        object.__setattr__(self, "z", tuple(float(v) for v in self.z))
        object.__setattr__(self, "observations", tuple(self.observations))
        if self.ref_change_var is not None:
            object.__setattr__(
                self,
                "ref_change_var",
                {int(k): float(v) for k, v in self.ref_change_var.items()},
            )

    # -- structure helpers (ordering: time-major, then arm in input order) --

    @property
    def contrast_arms(self) -> tuple[InterventionArm, ...]:
        """Arms that contribute observations (all coded arms minus reference)."""
        if self.comparison == "active" and self.reference_arm is not None:
            return tuple(a for a in self.arms if a.arm_id != self.reference_arm)
        return self.arms

    @property
    def reference(self) -> InterventionArm | None:
        """The coded reference arm for active trials; None for control."""
        if self.comparison == "active" and self.reference_arm is not None:
            for a in self.arms:
                if a.arm_id == self.reference_arm:
                    return a
        return None

    @property
    def arm_count(self) -> int:
        """Total arm count A_i, counting the uncoded control reference."""
        if self.comparison == "control":
            return len(self.arms) + 1
        return len(self.arms)

    @property
    def observed_categories(self) -> tuple[int, ...]:
        return tuple(sorted({o.time.category_index for o in self.observations}))

    @property
    def n_followups(self) -> int:
        return len(self.observed_categories)

    @property
    def dimension(self) -> int:
        """Length of the trial's observation vector, T_i * (A_i - 1)."""
        return len(self.observations)

    def ordered_observations(self) -> list[Observation]:
        """Observations in canonical (time-major, then arm) order."""
        index = {
            (o.arm_id, o.time.category_index): o for o in self.observations
        }
        out = []
        for t in self.observed_categories:
            for arm in self.contrast_arms:
                obs = index.get((arm.arm_id, t))
                if obs is not None:
                    out.append(obs)
        return out

    def y_vector(self) -> np.ndarray:
        return np.array([o.y for o in self.ordered_observations()])

    def variance_at(self, arm_id: str, category: int) -> float:
        for o in self.observations:
            if o.arm_id == arm_id and o.time.category_index == category:
                return o.v
        raise KeyError(f"no observation for arm {arm_id!r} at category {category}")


@dataclass(frozen=True)
class CenteringRecord:
    """Column means subtracted from the control-comparison design rows.

    Means are taken over every (trial, arm, time) design row contributed
    by control-comparison trials, with interaction columns formed from
    raw covariate products before averaging. Active-comparison rows are
    differences between arms, so the means cancel there and are never
    applied.
    """

    x_means: tuple[float, ...]
    z_means: tuple[float, ...]
    w_means: tuple[float, ...]
    j_means: tuple[float, ...]
    n_rows: int

    def intercept_shift(self, beta, gamma, phi, eta):
        """Offset between raw-scale and centered-scale intercepts.

        alpha_centered = alpha_raw + shift; works on single coefficient
        vectors or on (draws, dim) arrays.
        """
        beta = np.atleast_1d(np.asarray(beta, dtype=float))
        gamma = np.atleast_1d(np.asarray(gamma, dtype=float))
        phi = np.atleast_1d(np.asarray(phi, dtype=float))
        eta = np.atleast_1d(np.asarray(eta, dtype=float))
        return (
            beta @ np.asarray(self.x_means)
            + gamma @ np.asarray(self.z_means)
            + phi @ np.asarray(self.w_means)
            + eta @ np.asarray(self.j_means)
        )

    def as_dict(self) -> dict:
        return {
            "x": list(self.x_means),
            "z": list(self.z_means),
            "w": list(self.w_means),
            "interactions": list(self.j_means),
            "n_rows": self.n_rows,
        }


@dataclass(frozen=True)
class Dataset:
    """A schema, the trials coded against it, and base correlation inputs.

    ``base_rho_y`` is the assumed correlation between a contrast's mean
    differences one follow-up category apart; ``base_rho_d`` the same for
    the reference arm's change scores. ``centering``, when set, marks the
    dataset as centered: design rows built from it have the recorded
    column means subtracted.
    """

    schema: CovariateSchema
    trials: tuple[TrialRecord, ...]
    base_rho_y: float = 0.0
    base_rho_d: float = 0.0
    centering: CenteringRecord | None = None

    def __post_init__(self):
        object.__setattr__(self, "trials", tuple(self.trials))

    @property
    def n_trials(self) -> int:
        return len(self.trials)


# ---------------------------------------------------------------------------
# Validation
# ---------------------------------------------------------------------------


def validate_trial(trial: TrialRecord, schema: CovariateSchema) -> list[str]:
    """Check one trial against the schema; returns human-readable violations.

    An empty list means the trial satisfies every invariant. Violations
    are data, not exceptions: callers decide whether to reject.
    """
    out: list[str] = []

    if trial.comparison not in ("control", "active"):
        out.append(f"unknown comparison type {trial.comparison!r}")
        return out

    if trial.comparison == "control":
        if trial.reference_arm is not None:
            out.append("control trial must not carry reference-arm covariates")
    else:
        if trial.reference_arm is None:
            out.append("active trial missing reference-arm covariates")
        elif not any(a.arm_id == trial.reference_arm for a in trial.arms):
            out.append(
                f"reference arm {trial.reference_arm!r} not among coded arms"
            )

    seen_ids = set()
    for arm in trial.arms:
        if arm.arm_id in seen_ids:
            out.append(f"duplicate arm id {arm.arm_id!r}")
        seen_ids.add(arm.arm_id)
        if len(arm.x) != schema.n:
            out.append(
                f"arm {arm.arm_id!r}: expected {schema.n} intervention "
                f"covariates, got {len(arm.x)}"
            )
        elif any(v not in (0.0, 1.0) for v in arm.x):
            out.append(f"arm {arm.arm_id!r}: non-binary intervention covariate")

    if len(trial.z) != schema.p:
        out.append(f"expected {schema.p} study covariates, got {len(trial.z)}")
    elif not all(np.isfinite(trial.z)):
        out.append("non-finite study covariate")

    if not trial.observations:
        out.append("trial has no observations")

    contrast_ids = {a.arm_id for a in trial.contrast_arms}
    seen_obs = set()
    per_arm_cats: dict[str, set[int]] = {a: set() for a in contrast_ids}
    for obs in trial.observations:
        cat = obs.time.category_index
        if obs.time.q != schema.q:
            out.append(
                f"observation ({obs.arm_id!r}, {cat}): follow-up indicator "
                f"sized for q={obs.time.q}, schema has q={schema.q}"
            )
        if not 1 <= cat <= schema.q:
            out.append(f"follow-up category {cat} outside 1..{schema.q}")
        if obs.arm_id not in contrast_ids:
            if trial.reference_arm == obs.arm_id:
                out.append(f"observation on reference arm {obs.arm_id!r}")
            else:
                out.append(f"observation references unknown arm {obs.arm_id!r}")
            continue
        key = (obs.arm_id, cat)
        if key in seen_obs:
            out.append(f"duplicate (arm, time) observation {key}")
        seen_obs.add(key)
        per_arm_cats[obs.arm_id].add(cat)
        if not np.isfinite(obs.y):
            out.append(f"non-finite mean difference at {key}")
        if not (np.isfinite(obs.v) and obs.v > 0):
            out.append(f"non-positive observation variance at {key}")

    cat_sets = {frozenset(c) for c in per_arm_cats.values()}
    if len(cat_sets) > 1:
        out.append("arms observed at differing follow-up categories")

    if trial.ref_change_var is not None:
        for cat, val in trial.ref_change_var.items():
            arm_vars = [
                o.v for o in trial.observations if o.time.category_index == cat
            ]
            if not arm_vars:
                out.append(f"ref_change_var given for unobserved category {cat}")
                continue
            if not val > 0:
                out.append(f"non-positive reference variance at category {cat}")
            elif val > min(arm_vars):
                out.append(
                    f"reference variance exceeds observation variance at "
                    f"category {cat}"
                )

    for name in ("rho_y", "rho_d"):
        rho = getattr(trial, name)
        if rho is not None and not 0.0 <= rho < 1.0:
            out.append(f"{name} override {rho} outside [0, 1)")

    return out


def validate_dataset(dataset: Dataset) -> list[str]:
    """Check dataset-level invariants plus every trial; returns violations."""
    out: list[str] = []
    if dataset.n_trials < 1:
        out.append("dataset: contains no trials")
    if dataset.trials and not any(
        t.comparison == "control" for t in dataset.trials
    ):
        out.append(
            "dataset: no control-comparison trial "
            "(intercept, study, and follow-up effects unidentifiable)"
        )
    for name in ("base_rho_y", "base_rho_d"):
        rho = getattr(dataset, name)
        if not 0.0 <= rho < 1.0:
            out.append(f"dataset: {name}={rho} outside [0, 1)")
    for trial in dataset.trials:
        for violation in validate_trial(trial, dataset.schema):
            out.append(f"trial {trial.trial_id!r}: {violation}")
    return out


# ---------------------------------------------------------------------------
# File format
# ---------------------------------------------------------------------------
# JSON with top-level keys: schema {n, p, q, l, interactions, names},
# correlations {rho_y, rho_d}, trials [...]. Factor and category indices
# are 1-based on disk (0-based in memory, except follow-up categories
# which are 1-based everywhere).


def _require(mapping, key, path):
    if not isinstance(mapping, dict):
        raise DataFormatError(f"{path}: expected an object")
    if key not in mapping:
        raise DataFormatError(f"{path}: missing required field {key!r}")
    return mapping[key]


def _parse_schema(raw) -> CovariateSchema:
    n = int(_require(raw, "n", "schema"))
    p = int(_require(raw, "p", "schema"))
    q = int(_require(raw, "q", "schema"))
    l = int(_require(raw, "l", "schema"))
    factor_sets = []
    for j, raw_set in enumerate(raw.get("interactions", [])):
        factors = []
        for k, raw_f in enumerate(raw_set):
            path = f"schema.interactions[{j}][{k}]"
            level = _require(raw_f, "level", path)
            index = int(_require(raw_f, "index", path))
            if index < 1:
                raise DataFormatError(f"{path}: index is 1-based, got {index}")
            factors.append(Factor(level=level, index=index - 1))
        factor_sets.append(tuple(factors))
    if len(factor_sets) != l:
        raise DataFormatError(
            f"schema: l={l} but {len(factor_sets)} interactions defined"
        )
    names = raw.get("names")
    try:
        return CovariateSchema(
            n=n, p=p, q=q, interactions=tuple(factor_sets), names=names
        )
    except ValueError as e:
        raise DataValidationError(f"schema: {e}") from e


def _parse_trial(raw, schema: CovariateSchema, idx: int) -> TrialRecord:
    path = f"trials[{idx}]"
    trial_id = str(_require(raw, "id", path))
    comparison = _require(raw, "comparison", path)
    arms = []
    for k, raw_arm in enumerate(_require(raw, "arms", path)):
        apath = f"{path}.arms[{k}]"
        arms.append(
            InterventionArm(
                arm_id=str(_require(raw_arm, "id", apath)),
                x=tuple(float(v) for v in _require(raw_arm, "x", apath)),
            )
        )
    observations = []
    for k, raw_obs in enumerate(_require(raw, "observations", path)):
        opath = f"{path}.observations[{k}]"
        category = int(_require(raw_obs, "category", opath))
        if not 1 <= category <= schema.q:
            raise DataValidationError(
                f"{opath}: category {category} outside 1..{schema.q}"
            )
        observations.append(
            Observation(
                arm_id=str(_require(raw_obs, "arm", opath)),
                time=FollowUpIndicator.from_category(category, schema.q),
                y=float(_require(raw_obs, "y", opath)),
                v=float(_require(raw_obs, "v", opath)),
            )
        )
    ref_change_var = None
    if raw.get("ref_change_var") is not None:
        ref_change_var = {
            int(k): float(v) for k, v in raw["ref_change_var"].items()
        }
    return TrialRecord(
        trial_id=trial_id,
        comparison=comparison,
        arms=tuple(arms),
        z=tuple(float(v) for v in _require(raw, "z", path)),
        observations=tuple(observations),
        reference_arm=raw.get("reference_arm"),
        ref_change_var=ref_change_var,
        rho_y=raw.get("rho_y"),
        rho_d=raw.get("rho_d"),
    )


def schema_from_dict(raw: dict) -> CovariateSchema:
    """Build a schema from its file representation (1-based indices)."""
    return _parse_schema(raw)


def load_dataset(source: str | Path | IO[str], validate: bool = True) -> Dataset:
    """Parse and (by default) fully validate a dataset document.

    ``source`` may be a path or an open text stream. Raises
    DataFormatError for unparseable or structurally malformed input and
    DataValidationError (naming the trial) when an invariant fails.
    Pass ``validate=False`` to obtain the parsed dataset and run
    ``validate_dataset`` separately, e.g. to report every violation.
    """
    if hasattr(source, "read"):
        text = source.read()
    else:
        text = Path(source).read_text()
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as e:
        raise DataFormatError(
            f"parse error at line {e.lineno}, column {e.colno}: {e.msg}"
        ) from e
    if not isinstance(raw, dict):
        raise DataFormatError("top level: expected an object")

    schema = _parse_schema(_require(raw, "schema", "top level"))
    correlations = _require(raw, "correlations", "top level")
    trials = [
        _parse_trial(t, schema, i)
        for i, t in enumerate(_require(raw, "trials", "top level"))
    ]
    dataset = Dataset(
        schema=schema,
        trials=tuple(trials),
        base_rho_y=float(_require(correlations, "rho_y", "correlations")),
        base_rho_d=float(_require(correlations, "rho_d", "correlations")),
    )
    if validate:
        violations = validate_dataset(dataset)
        if violations:
            raise DataValidationError("\n".join(violations))
    return dataset


def dataset_to_dict(dataset: Dataset) -> dict:
    """Canonical JSON-ready form (the inverse of load_dataset's parsing)."""
    schema = dataset.schema
    doc: dict = {
        "schema": {
            "n": schema.n,
            "p": schema.p,
            "q": schema.q,
            "l": schema.l,
            "interactions": [
                [{"level": f.level, "index": f.index + 1} for f in fs]
                for fs in schema.interactions
            ],
        },
        "correlations": {
            "rho_y": dataset.base_rho_y,
            "rho_d": dataset.base_rho_d,
        },
        "trials": [],
    }
    if schema.names is not None:
        doc["schema"]["names"] = {k: list(v) for k, v in schema.names.items()}
    for trial in dataset.trials:
        raw: dict = {
            "id": trial.trial_id,
            "comparison": trial.comparison,
            "z": list(trial.z),
            "arms": [{"id": a.arm_id, "x": list(a.x)} for a in trial.arms],
            "observations": [
                {
                    "arm": o.arm_id,
                    "category": o.time.category_index,
                    "y": o.y,
                    "v": o.v,
                }
                for o in trial.observations
            ],
        }
        if trial.reference_arm is not None:
            raw["reference_arm"] = trial.reference_arm
        if trial.ref_change_var is not None:
            raw["ref_change_var"] = {
                str(k): v for k, v in sorted(trial.ref_change_var.items())
            }
        if trial.rho_y is not None:
            raw["rho_y"] = trial.rho_y
        if trial.rho_d is not None:
            raw["rho_d"] = trial.rho_d
        doc["trials"].append(raw)
    return doc


def save_dataset(dataset: Dataset, dest: str | Path | IO[str]) -> None:
    """Write the dataset in the canonical file format (UTF-8 JSON)."""
    text = json.dumps(dataset_to_dict(dataset), indent=2) + "\n"
    if hasattr(dest, "write"):
        dest.write(text)
    else:
        Path(dest).write_text(text)


# ---------------------------------------------------------------------------
# Centering
# ---------------------------------------------------------------------------


def center_covariates(dataset: Dataset) -> tuple[Dataset, CenteringRecord]:
    """Center all covariate columns (interactions included) about their mean.

    Means are computed over the raw control-comparison design rows, with
    interaction products formed before averaging; the returned dataset
    carries the record and presents centered values through design-row
    assembly. Active-comparison rows difference out the means, so they
    are unchanged. Centering only shifts the intercept's interpretation;
    the record's ``intercept_shift`` recovers the raw scale.
    """
    from .design import control_design_blocks

    schema = dataset.schema
    rows = []
    for trial in dataset.trials:
        if trial.comparison != "control":
            continue
        rows.extend(control_design_blocks(schema, trial))
    if not rows:
        raise DataValidationError(
            "cannot center: dataset has no control-comparison design rows"
        )
    stacked = np.array(rows, dtype=float)
    means = stacked.mean(axis=0)
    n, p, w_len = schema.n, schema.p, schema.q - 1
    record = CenteringRecord(
        x_means=tuple(means[:n]),
        z_means=tuple(means[n : n + p]),
        w_means=tuple(means[n + p : n + p + w_len]),
        j_means=tuple(means[n + p + w_len :]),
        n_rows=stacked.shape[0],
    )
    return replace(dataset, centering=record), record
