"""Design-row assembly and the fixed-effects regression surface.

The expected contrast for arm k of trial i at follow-up t has two forms.
Control-comparison trials regress on the arm's own covariates:

    theta = alpha + beta.x + gamma.z + phi.w + eta.J(x, z, w)

Active-comparison trials observe arm k relative to a coded reference arm
r, so the intercept, study covariates, and follow-up terms cancel:

    theta = beta.(x_k - x_r) + eta.(J_k - J_r)

Both are linear in the coefficients, so each observation reduces to one
design row; interaction columns are products of the raw covariates,
formed before any centering is applied.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .data import (
    CenteringRecord,
    CovariateSchema,
    Dataset,
    FollowUpIndicator,
    InterventionArm,
    TrialRecord,
)

__all__ = [
    "ParameterVector",
    "DesignRow",
    "interaction_value",
    "design_row",
    "control_design_blocks",
    "trial_design_matrix",
    "dataset_design_matrix",
    "fixed_effects",
]


@dataclass(frozen=True)
class ParameterVector:
    """Model parameters in canonical order: alpha, beta, gamma, phi, eta, tau."""

    alpha: float
    beta: tuple[float, ...]
    gamma: tuple[float, ...]
    phi: tuple[float, ...]
    eta: tuple[float, ...]
    tau: float

    def __post_init__(self):
        for name in ("beta", "gamma", "phi", "eta"):
            object.__setattr__(
                self, name, tuple(float(v) for v in getattr(self, name))
            )

    def as_array(self) -> np.ndarray:
        return np.concatenate(
            [
                [self.alpha],
                self.beta,
                self.gamma,
                self.phi,
                self.eta,
                [self.tau],
            ]
        )

    def coefficients(self) -> np.ndarray:
        """Fixed-effect coefficients only (everything but tau)."""
        return self.as_array()[:-1]

    @classmethod
    def from_array(
        cls, values: Sequence[float], schema: CovariateSchema
    ) -> "ParameterVector":
        values = np.asarray(values, dtype=float)
        if values.shape != (schema.n_parameters,):
            raise ValueError(
                f"expected {schema.n_parameters} parameters, got {values.shape}"
            )
        n, p, w_len, l = schema.n, schema.p, schema.q - 1, schema.l
        cuts = np.cumsum([1, n, p, w_len, l])
        return cls(
            alpha=float(values[0]),
            beta=tuple(values[cuts[0] : cuts[1]]),
            gamma=tuple(values[cuts[1] : cuts[2]]),
            phi=tuple(values[cuts[2] : cuts[3]]),
            eta=tuple(values[cuts[3] : cuts[4]]),
            tau=float(values[-1]),
        )

    @classmethod
    def zeros(cls, schema: CovariateSchema, tau: float = 0.0) -> "ParameterVector":
        return cls(
            alpha=0.0,
            beta=(0.0,) * schema.n,
            gamma=(0.0,) * schema.p,
            phi=(0.0,) * (schema.q - 1),
            eta=(0.0,) * schema.l,
            tau=tau,
        )


@dataclass(frozen=True)
class DesignRow:
    """One observation's regression row.

    ``intercept`` is 1 for control-comparison rows, 0 for active ones
    (where it cancels); the remaining blocks multiply beta, gamma, phi,
    and eta respectively.
    """

    intercept: float
    x: tuple[float, ...]
    z: tuple[float, ...]
    w: tuple[float, ...]
    interactions: tuple[float, ...]

    def as_array(self) -> np.ndarray:
        return np.concatenate(
            [[self.intercept], self.x, self.z, self.w, self.interactions]
        )

    def expected_value(self, params: ParameterVector) -> float:
        return float(self.as_array() @ params.coefficients())


def interaction_value(
    schema: CovariateSchema,
    term: int,
    x: Sequence[float],
    z: Sequence[float],
    w: Sequence[float],
) -> float:
    """Product of the raw covariates referenced by interaction ``term``."""
    pools = {"intervention": x, "study": z, "followup": w}
    value = 1.0
    for factor in schema.interactions[term]:
        value *= float(pools[factor.level][factor.index])
    return value


def _raw_blocks(
    schema: CovariateSchema,
    arm: InterventionArm,
    z: Sequence[float],
    time: FollowUpIndicator,
) -> tuple[tuple[float, ...], tuple[float, ...], tuple[float, ...], tuple[float, ...]]:
    w = time.w
    j = tuple(
        interaction_value(schema, term, arm.x, z, w)
        for term in range(schema.l)
    )
    return arm.x, tuple(float(v) for v in z), w, j


def control_design_blocks(
    schema: CovariateSchema, trial: TrialRecord
) -> list[list[float]]:
    """Raw covariate columns [x z w J] per observation of a control trial.

    Rows follow the trial's canonical observation order; this is the
    population over which centering means are taken.
    """
    rows = []
    arm_by_id = {a.arm_id: a for a in trial.contrast_arms}
    for obs in trial.ordered_observations():
        x, z, w, j = _raw_blocks(schema, arm_by_id[obs.arm_id], trial.z, obs.time)
        rows.append(list(x) + list(z) + list(w) + list(j))
    return rows


def design_row(
    schema: CovariateSchema,
    trial: TrialRecord,
    arm: InterventionArm,
    time: FollowUpIndicator,
    centering: CenteringRecord | None = None,
) -> DesignRow:
    """Build the regression row for one (arm, follow-up) observation.

    For active-comparison trials the row is the difference between the
    arm's raw blocks and the reference arm's, with study and follow-up
    columns identically zero; centering cancels there, so the record
    only affects control-comparison rows.
    """
    if trial.comparison == "active":
        reference = trial.reference
        if reference is None:
            raise ValueError(
                f"trial {trial.trial_id!r}: active comparison without a "
                "resolvable reference arm"
            )
        xk, zk, wk, jk = _raw_blocks(schema, arm, trial.z, time)
        xr, _, _, jr = _raw_blocks(schema, reference, trial.z, time)
        return DesignRow(
            intercept=0.0,
            x=tuple(a - b for a, b in zip(xk, xr)),
            z=(0.0,) * schema.p,
            w=(0.0,) * (schema.q - 1),
            interactions=tuple(a - b for a, b in zip(jk, jr)),
        )

    x, z, w, j = _raw_blocks(schema, arm, trial.z, time)
    if centering is not None:
        x = tuple(a - m for a, m in zip(x, centering.x_means))
        z = tuple(a - m for a, m in zip(z, centering.z_means))
        w = tuple(a - m for a, m in zip(w, centering.w_means))
        j = tuple(a - m for a, m in zip(j, centering.j_means))
    return DesignRow(intercept=1.0, x=x, z=z, w=w, interactions=j)


def trial_design_matrix(
    schema: CovariateSchema,
    trial: TrialRecord,
    centering: CenteringRecord | None = None,
) -> np.ndarray:
    """Stack the trial's design rows (canonical observation order)."""
    arm_by_id = {a.arm_id: a for a in trial.contrast_arms}
    rows = [
        design_row(schema, trial, arm_by_id[o.arm_id], o.time, centering).as_array()
        for o in trial.ordered_observations()
    ]
    return np.array(rows, dtype=float).reshape(len(rows), 1 + schema.n + schema.p
                                               + (schema.q - 1) + schema.l)


def fixed_effects(
    params: ParameterVector,
    trial: TrialRecord,
    schema: CovariateSchema,
    centering: CenteringRecord | None = None,
) -> np.ndarray:
    """Expected contrast vector theta_i for one trial, canonical order."""
    return trial_design_matrix(schema, trial, centering) @ params.coefficients()


def dataset_design_matrix(dataset: Dataset) -> np.ndarray:
    """All trials' design rows stacked (dataset centering applied)."""
    blocks = [
        trial_design_matrix(dataset.schema, t, dataset.centering)
        for t in dataset.trials
    ]
    width = 1 + dataset.schema.n + dataset.schema.p + (dataset.schema.q - 1) \
        + dataset.schema.l
    if not blocks:
        return np.empty((0, width))
    return np.vstack(blocks)
