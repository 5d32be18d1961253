"""Within-trial and between-trial covariance construction.

Observed contrasts from one trial share the reference arm's change score
and may repeat arms across follow-up categories, so the within-trial
sampling covariance V has four entry types for rows (t, k) and columns
(t', k'):

    same arm, same time:        v                 (the observation variance)
    different arm, same time:   var_d(t)          (reference change variance)
    same arm, different time:   rho_y(t,t') * sqrt(v_t * v_t')
    different arm, diff. time:  rho_d(t,t') * sqrt(var_d(t) * var_d(t'))

Correlations decay geometrically in the follow-up category separation.
The reference arm's change-score variance is rarely reported; when
absent it is imputed as half the smallest contrast variance at that
follow-up, which keeps V positive semidefinite.

Between-trial heterogeneity in the arm effects delta has covariance
tau^2 on the diagonal and tau^2 / 2 everywhere else (arm effects within
a trial share the common-reference correlation 1/2).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .data import TrialRecord

__all__ = [
    "CovarianceError",
    "WithinCovariance",
    "BetweenCovariance",
    "CASE_SAME_ARM_SAME_TIME",
    "CASE_DIFF_ARM_SAME_TIME",
    "CASE_SAME_ARM_DIFF_TIME",
    "CASE_DIFF_ARM_DIFF_TIME",
    "rho_for_separation",
    "impute_ref_change_variance",
    "build_within_covariance",
    "build_between_covariance",
    "between_structure",
    "ensure_positive_semidefinite",
    "mvn_logpdf",
]

# Entry-type codes recorded alongside each V entry (diagnostics/tests).
CASE_SAME_ARM_SAME_TIME = 1
CASE_DIFF_ARM_SAME_TIME = 2
CASE_SAME_ARM_DIFF_TIME = 3
CASE_DIFF_ARM_DIFF_TIME = 4

# Eigenvalues above -PSD_REL_TOL * scale are treated as rounding noise and
# clipped; anything below that is a genuine inconsistency in the inputs.
PSD_REL_TOL = 1e-10


class CovarianceError(Exception):
    """A covariance matrix could not be built or is not positive semidefinite."""


@dataclass(frozen=True, eq=False)
class WithinCovariance:
    """Within-trial covariance with its row ordering and entry provenance.

    ``order`` lists (arm_id, category) per row, time-major then arm;
    ``case_codes`` records which of the four entry types produced each
    cell (CASE_* constants).
    """

    trial_id: str
    matrix: np.ndarray
    order: tuple[tuple[str, int], ...]
    case_codes: np.ndarray

    @property
    def dimension(self) -> int:
        return self.matrix.shape[0]


@dataclass(frozen=True, eq=False)
class BetweenCovariance:
    """Heterogeneity covariance tau^2 * S for one trial (S = 0.5(I + 11')).

    Positive definite for tau > 0 at any dimension: the eigenvalues are
    tau^2/2 (multiplicity dim-1) and tau^2 (dim+1)/2.
    """

    matrix: np.ndarray
    tau: float

    @property
    def dimension(self) -> int:
        return self.matrix.shape[0]


def rho_for_separation(base_rho: float, t: int, t_prime: int) -> float:
    """Correlation between measurements |t - t_prime| categories apart."""
    if not 0.0 <= base_rho < 1.0:
        raise ValueError(f"base correlation {base_rho} outside [0, 1)")
    return base_rho ** abs(t - t_prime)


def impute_ref_change_variance(trial: TrialRecord, category: int) -> float:
    """Reference-arm change variance at one follow-up category.

    Uses the trial's supplied value when present, otherwise half the
    smallest observation variance at that category.
    """
    if trial.ref_change_var is not None and category in trial.ref_change_var:
        return trial.ref_change_var[category]
    arm_vars = [
        o.v for o in trial.observations if o.time.category_index == category
    ]
    if not arm_vars:
        raise CovarianceError(
            f"trial {trial.trial_id!r}: no observations at category {category}"
        )
    return 0.5 * min(arm_vars)


def build_within_covariance(
    trial: TrialRecord,
    base_rho_y: float,
    base_rho_d: float,
) -> WithinCovariance:
    """Assemble and PSD-check the trial's within-study covariance V.

    Trial-level correlation overrides take precedence over the
    dataset-level coefficients.
    """
    rho_y = trial.rho_y if trial.rho_y is not None else base_rho_y
    rho_d = trial.rho_d if trial.rho_d is not None else base_rho_d
    obs = trial.ordered_observations()
    dim = len(obs)
    order = tuple((o.arm_id, o.time.category_index) for o in obs)
    dvar = {
        t: impute_ref_change_variance(trial, t) for t in trial.observed_categories
    }

    matrix = np.empty((dim, dim))
    cases = np.empty((dim, dim), dtype=np.int8)
    for i in range(dim):
        arm_i, t_i = order[i]
        for j in range(i, dim):
            arm_j, t_j = order[j]
            if arm_i == arm_j and t_i == t_j:
                value, case = obs[i].v, CASE_SAME_ARM_SAME_TIME
            elif t_i == t_j:
                value, case = dvar[t_i], CASE_DIFF_ARM_SAME_TIME
            elif arm_i == arm_j:
                value = rho_for_separation(rho_y, t_i, t_j) * np.sqrt(
                    obs[i].v * obs[j].v
                )
                case = CASE_SAME_ARM_DIFF_TIME
            else:
                value = rho_for_separation(rho_d, t_i, t_j) * np.sqrt(
                    dvar[t_i] * dvar[t_j]
                )
                case = CASE_DIFF_ARM_DIFF_TIME
            matrix[i, j] = matrix[j, i] = value
            cases[i, j] = cases[j, i] = case

    matrix = ensure_positive_semidefinite(
        matrix, f"within-trial covariance of trial {trial.trial_id!r}"
    )
    return WithinCovariance(
        trial_id=trial.trial_id, matrix=matrix, order=order, case_codes=cases
    )


def between_structure(dim: int) -> np.ndarray:
    """Unit-heterogeneity structure S: 1 on the diagonal, 1/2 elsewhere."""
    return 0.5 * (np.eye(dim) + np.ones((dim, dim)))


def build_between_covariance(dimension: int, tau: float) -> BetweenCovariance:
    """Heterogeneity covariance tau^2 * S for a trial of this dimension.

    Entries are formed by scaling the exact structure constants (1 and
    1/2), so the Appendix-style identity var(delta_k - delta_k') =
    S_kk + S_k'k' - 2 S_kk' = tau^2 holds to the last bit.
    """
    if dimension < 1:
        raise ValueError(f"dimension must be at least 1, got {dimension}")
    if tau < 0:
        raise ValueError(f"tau must be non-negative, got {tau}")
    return BetweenCovariance(matrix=tau**2 * between_structure(dimension), tau=tau)


def ensure_positive_semidefinite(
    matrix: np.ndarray, context: str, rel_tol: float = PSD_REL_TOL
) -> np.ndarray:
    """Verify PSD-ness, repairing rounding-level negative eigenvalues.

    Raises CovarianceError (naming ``context`` and the offending
    eigenvalue) when the smallest eigenvalue is materially negative.
    """
    matrix = np.asarray(matrix, dtype=float)
    if matrix.ndim != 2 or matrix.shape[0] != matrix.shape[1]:
        raise CovarianceError(f"{context}: not a square matrix")
    if not np.allclose(matrix, matrix.T, rtol=0.0, atol=0.0):
        raise CovarianceError(f"{context}: not symmetric")
    eigvals = np.linalg.eigvalsh(matrix)
    scale = max(abs(eigvals[-1]), 1.0)
    if eigvals[0] < -rel_tol * scale:
        raise CovarianceError(
            f"{context}: not positive semidefinite "
            f"(smallest eigenvalue {eigvals[0]:.6g})"
        )
    if eigvals[0] < 0.0:
        vals, vecs = np.linalg.eigh(matrix)
        repaired = (vecs * np.clip(vals, 0.0, None)) @ vecs.T
        matrix = 0.5 * (repaired + repaired.T)
    return matrix


def mvn_logpdf(y: np.ndarray, mean: np.ndarray, cov: np.ndarray) -> float:
    """Multivariate normal log-density via Cholesky factorization."""
    y = np.asarray(y, dtype=float)
    mean = np.asarray(mean, dtype=float)
    cov = np.asarray(cov, dtype=float)
    dim = y.shape[0]
    try:
        chol = np.linalg.cholesky(cov)
    except np.linalg.LinAlgError as e:
        raise CovarianceError(
            f"covariance of dimension {dim} is not positive definite"
        ) from e
    resid = np.linalg.solve(chol, y - mean)
    log_det = 2.0 * np.sum(np.log(np.diag(chol)))
    return float(-0.5 * (dim * np.log(2.0 * np.pi) + log_det + resid @ resid))
