"""Posterior sampling by adaptive random-walk Metropolis.

The model: per trial i, observed contrasts y_i ~ N(delta_i, V_i) with
heterogeneous arm effects delta_i ~ N(X_i c, tau^2 S_i), where c packs
the fixed-effect coefficients, V_i is the within-trial covariance, and
S_i = 0.5(I + 11') carries the common-reference correlation. Integrating
delta out gives the marginal form y_i ~ N(X_i c, V_i + tau^2 S_i); the
latent form keeps delta_i as explicit parameters. Both are available and
target the same coefficient posterior.

The marginal density is evaluated through a per-trial simultaneous
diagonalization fixed at assembly time: with L the Cholesky factor of
S and A = L^-1 V L^-T = Q diag(lam) Q', the map P = Q' L^-1 turns
V + tau^2 S into diag(lam + tau^2), so each likelihood evaluation is a
vector operation with no refactorization. This is exact, not an
approximation; ``log_likelihood_marginal_direct`` recomputes the same
quantity from scratch via per-trial Cholesky solves as an independent
cross-check.

Proposals are diagonal Gaussian with per-coordinate scales adapted
toward a 0.234 acceptance rate by Robbins-Monro updates during a
dedicated adaptation phase, then frozen. tau is sampled on the log
scale (with the Jacobian term), keeping its support positive.
"""

from __future__ import annotations

import math
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .covariance import (
    CovarianceError,
    between_structure,
    build_within_covariance,
    mvn_logpdf,
)
from .data import Dataset
from .design import ParameterVector, trial_design_matrix

__all__ = [
    "SamplerError",
    "PriorSpec",
    "McmcConfig",
    "ChainOutput",
    "AssembledTrial",
    "AssembledDataset",
    "assemble",
    "log_prior",
    "log_likelihood_marginal",
    "log_likelihood_marginal_direct",
    "log_likelihood_latent",
    "run_chain",
    "run_mcmc",
]

TARGET_ACCEPT = 0.234
SCALE_FLOOR = 1e-6
INIT_RETRIES = 100


class SamplerError(Exception):
    """Sampling could not start or produced an invalid state."""


@dataclass(frozen=True)
class PriorSpec:
    """Independent priors: coefficients N(0, coeff_sd^2), tau Uniform(0, tau_upper)."""

    coeff_sd: float = 100.0
    tau_upper: float = 5.0

    def __post_init__(self):
        if self.coeff_sd <= 0:
            raise ValueError("coeff_sd must be positive")
        if self.tau_upper <= 0:
            raise ValueError("tau_upper must be positive")


@dataclass(frozen=True)
class McmcConfig:
    """Chain layout and run lengths.

    ``adapt`` iterations tune the proposal, ``burn_in`` iterations run
    with the tuned proposal but are discarded, then ``samples`` draws
    are recorded every ``thin`` iterations. ``seed`` fixes the whole
    run: chain k draws from an independent stream spawned from it, so
    results are identical whether chains run serially or in threads.
    """

    chains: int = 4
    adapt: int = 10_000
    burn_in: int = 10_000
    samples: int = 20_000
    thin: int = 1
    seed: int = 0
    likelihood: str = "marginal"
    target_accept: float = TARGET_ACCEPT
    parallel: bool = False

    def __post_init__(self):
        if self.chains < 1:
            raise ValueError("need at least one chain")
        if self.adapt < 0 or self.burn_in < 0:
            raise ValueError("adapt and burn_in must be non-negative")
        if self.samples < 1:
            raise ValueError("need at least one retained sample")
        if self.thin < 1:
            raise ValueError("thin must be at least 1")
        if not 0.0 < self.target_accept < 1.0:
            raise ValueError("target_accept must lie in (0, 1)")
        if self.likelihood not in ("marginal", "latent"):
            raise ValueError(
                f"likelihood must be 'marginal' or 'latent', got "
                f"{self.likelihood!r}"
            )


@dataclass(frozen=True, eq=False)
class ChainOutput:
    """One chain's retained draws plus bookkeeping.

    ``draws`` has shape (samples, n_parameters) in canonical order
    (intercept, beta, gamma, phi, eta, tau) with tau on its natural
    scale. ``seed_used`` is the derived stream key recorded for reruns.
    """

    chain_index: int
    draws: np.ndarray
    parameter_names: tuple[str, ...]
    accept_rate: float
    seed_used: int
    proposal_log_scale: float

    @property
    def n_samples(self) -> int:
        return self.draws.shape[0]


# ---------------------------------------------------------------------------
# Assembly: everything fixed across iterations is computed once
# ---------------------------------------------------------------------------


def _chol_with_jitter(matrix: np.ndarray, context: str) -> np.ndarray:
    """Cholesky factor, adding escalating diagonal jitter if needed."""
    try:
        return np.linalg.cholesky(matrix)
    except np.linalg.LinAlgError:
        pass
    scale = float(np.mean(np.diag(matrix)))
    jitter = 1e-12 * max(scale, 1.0)
    for _ in range(7):
        try:
            return np.linalg.cholesky(matrix + jitter * np.eye(matrix.shape[0]))
        except np.linalg.LinAlgError:
            jitter *= 10.0
    raise CovarianceError(f"{context}: Cholesky failed even with jitter")


@dataclass(eq=False)
class AssembledTrial:
    """Per-trial constants for likelihood evaluation."""

    trial_id: str
    y: np.ndarray
    design: np.ndarray
    within: np.ndarray  # V
    structure: np.ndarray  # S
    structure_chol: np.ndarray  # L with L L' = S
    structure_logdet: float
    within_chol: np.ndarray  # for the latent form's y | delta term
    eigenvalues: np.ndarray  # lam of L^-1 V L^-T
    projector: np.ndarray  # P = Q' L^-1

    @property
    def dimension(self) -> int:
        return self.y.shape[0]


@dataclass(eq=False)
class AssembledDataset:
    """Dataset compiled to stacked arrays for fast marginal evaluation."""

    dataset: Dataset
    trials: list[AssembledTrial]
    stacked_y: np.ndarray  # concat of P_i y_i
    stacked_design: np.ndarray  # vstack of P_i X_i
    stacked_eigenvalues: np.ndarray
    log_density_const: float  # sum_i (dim_i log 2pi + logdet S_i)
    n_coefficients: int

    @property
    def n_parameters(self) -> int:
        return self.n_coefficients + 1

    @property
    def parameter_names(self) -> tuple[str, ...]:
        return tuple(self.dataset.schema.parameter_names())

    @property
    def total_dimension(self) -> int:
        return self.stacked_y.shape[0]


def assemble(dataset: Dataset) -> AssembledDataset:
    """Precompute design matrices, covariances, and diagonalizations."""
    schema = dataset.schema
    assembled: list[AssembledTrial] = []
    for trial in dataset.trials:
        within = build_within_covariance(
            trial, dataset.base_rho_y, dataset.base_rho_d
        ).matrix
        dim = within.shape[0]
        structure = between_structure(dim)
        chol_s = np.linalg.cholesky(structure)
        inv_chol = np.linalg.inv(chol_s)
        whitened = inv_chol @ within @ inv_chol.T
        whitened = 0.5 * (whitened + whitened.T)
        lam, q = np.linalg.eigh(whitened)
        assembled.append(
            AssembledTrial(
                trial_id=trial.trial_id,
                y=trial.y_vector(),
                design=trial_design_matrix(schema, trial, dataset.centering),
                within=within,
                structure=structure,
                structure_chol=chol_s,
                structure_logdet=2.0 * float(np.sum(np.log(np.diag(chol_s)))),
                within_chol=_chol_with_jitter(
                    within, f"within-trial covariance of {trial.trial_id!r}"
                ),
                eigenvalues=np.clip(lam, 0.0, None),
                projector=q.T @ inv_chol,
            )
        )
    stacked_y = np.concatenate([t.projector @ t.y for t in assembled])
    stacked_design = np.vstack([t.projector @ t.design for t in assembled])
    stacked_eigenvalues = np.concatenate([t.eigenvalues for t in assembled])
    const = sum(
        t.dimension * math.log(2.0 * math.pi) + t.structure_logdet
        for t in assembled
    )
    return AssembledDataset(
        dataset=dataset,
        trials=assembled,
        stacked_y=stacked_y,
        stacked_design=stacked_design,
        stacked_eigenvalues=stacked_eigenvalues,
        log_density_const=float(const),
        n_coefficients=stacked_design.shape[1],
    )


# ---------------------------------------------------------------------------
# Densities
# ---------------------------------------------------------------------------


def _log_prior_arrays(
    coefficients: np.ndarray, tau: float, prior: PriorSpec
) -> float:
    if not 0.0 < tau < prior.tau_upper:
        return -math.inf
    k = coefficients.shape[0]
    normal_part = -0.5 * (
        k * math.log(2.0 * math.pi * prior.coeff_sd**2)
        + float(coefficients @ coefficients) / prior.coeff_sd**2
    )
    return normal_part - math.log(prior.tau_upper)


def log_prior(params: ParameterVector, prior: PriorSpec) -> float:
    """Joint log prior of a parameter vector; -inf outside tau's support."""
    return _log_prior_arrays(params.coefficients(), params.tau, prior)


def _as_assembled(data: Dataset | AssembledDataset) -> AssembledDataset:
    if isinstance(data, AssembledDataset):
        return data
    return assemble(data)


def _marginal(
    assembled: AssembledDataset, coefficients: np.ndarray, tau: float
) -> float:
    denom = assembled.stacked_eigenvalues + tau * tau
    resid = assembled.stacked_y - assembled.stacked_design @ coefficients
    return float(
        -0.5
        * (
            assembled.log_density_const
            + np.sum(np.log(denom))
            + np.sum(resid * resid / denom)
        )
    )


def log_likelihood_marginal(
    data: Dataset | AssembledDataset, params: ParameterVector
) -> float:
    """Marginal log likelihood over all trials (delta integrated out).

    Accepts a raw dataset or a pre-assembled one; pass the latter when
    evaluating many parameter values.
    """
    return _marginal(_as_assembled(data), params.coefficients(), params.tau)


def log_likelihood_marginal_direct(
    dataset: Dataset, params: ParameterVector
) -> float:
    """Marginal log likelihood rebuilt trial by trial via Cholesky solves.

    Slow path kept as an independent cross-check of the diagonalized
    evaluation; both must agree to floating-point accuracy.
    """
    schema = dataset.schema
    coeffs = params.coefficients()
    total = 0.0
    for trial in dataset.trials:
        within = build_within_covariance(
            trial, dataset.base_rho_y, dataset.base_rho_d
        ).matrix
        design = trial_design_matrix(schema, trial, dataset.centering)
        cov = within + params.tau**2 * between_structure(within.shape[0])
        total += mvn_logpdf(trial.y_vector(), design @ coeffs, cov)
    return total


def _latent(
    assembled: AssembledDataset,
    coefficients: np.ndarray,
    tau: float,
    deltas: list[np.ndarray],
) -> float:
    if tau <= 0.0:
        return -math.inf
    log_tau = math.log(tau)
    total = 0.0
    for t, delta in zip(assembled.trials, deltas):
        # y | delta ~ N(delta, V)
        r = np.linalg.solve(t.within_chol, t.y - delta)
        logdet_v = 2.0 * float(np.sum(np.log(np.diag(t.within_chol))))
        total += -0.5 * (
            t.dimension * math.log(2.0 * math.pi) + logdet_v + float(r @ r)
        )
        # delta | c, tau ~ N(X c, tau^2 S)
        s = np.linalg.solve(t.structure_chol, delta - t.design @ coefficients)
        total += -0.5 * (
            t.dimension * math.log(2.0 * math.pi)
            + t.structure_logdet
            + 2.0 * t.dimension * log_tau
            + float(s @ s) / (tau * tau)
        )
    return total


def _split_deltas(
    assembled: AssembledDataset, deltas: list[np.ndarray] | np.ndarray
) -> list[np.ndarray]:
    if isinstance(deltas, np.ndarray) and deltas.ndim == 1:
        split: list[np.ndarray] = []
        at = 0
        for t in assembled.trials:
            split.append(deltas[at : at + t.dimension])
            at += t.dimension
        if at != deltas.shape[0]:
            raise ValueError(
                f"stacked deltas have length {deltas.shape[0]}, expected {at}"
            )
        return split
    out = [np.asarray(d, dtype=float) for d in deltas]
    for t, d in zip(assembled.trials, out):
        if d.shape != (t.dimension,):
            raise ValueError(
                f"delta for trial {t.trial_id!r} has shape {d.shape}, "
                f"expected ({t.dimension},)"
            )
    if len(out) != len(assembled.trials):
        raise ValueError("one delta vector required per trial")
    return out


def log_likelihood_latent(
    data: Dataset | AssembledDataset,
    params: ParameterVector,
    deltas: list[np.ndarray] | np.ndarray,
) -> float:
    """Joint log density of y and the latent arm effects delta.

    ``deltas`` is either one stacked vector (concatenated in trial
    order) or a list of per-trial vectors. tau must be positive: at
    tau = 0 the heterogeneity covariance is singular and the marginal
    form must be used instead.
    """
    if params.tau <= 0.0:
        raise CovarianceError(
            "latent likelihood undefined at tau = 0 (singular heterogeneity "
            "covariance); use the marginal form"
        )
    assembled = _as_assembled(data)
    return _latent(
        assembled,
        params.coefficients(),
        params.tau,
        _split_deltas(assembled, deltas),
    )


# ---------------------------------------------------------------------------
# Random-walk Metropolis with per-coordinate adaptation
# ---------------------------------------------------------------------------


def _chain_rng(seed: int, chain_index: int) -> tuple[np.random.Generator, int]:
    seq = np.random.SeedSequence(entropy=seed, spawn_key=(chain_index,))
    derived = int(seq.generate_state(1, dtype=np.uint64)[0])
    return np.random.default_rng(seq), derived


def run_chain(
    assembled: AssembledDataset,
    config: McmcConfig,
    prior: PriorSpec,
    chain_index: int,
) -> ChainOutput:
    """Run one Metropolis chain; deterministic given (config.seed, chain_index).

    State layout: fixed-effect coefficients, log(tau), then (latent form
    only) the stacked arm effects. Only the model parameters are
    recorded, with tau mapped back to its natural scale.
    """
    rng, seed_used = _chain_rng(config.seed, chain_index)
    n_coeff = assembled.n_coefficients
    latent = config.likelihood == "latent"
    latent_dim = assembled.total_dimension if latent else 0
    dim = n_coeff + 1 + latent_dim

    def log_post(state: np.ndarray) -> float:
        coeffs = state[:n_coeff]
        log_tau = state[n_coeff]
        if log_tau > 700.0:  # exp would overflow; tau is far out of support
            return -math.inf
        tau = math.exp(log_tau)
        lp = _log_prior_arrays(coeffs, tau, prior)
        if not math.isfinite(lp):
            return -math.inf
        if latent:
            ll = _latent(
                assembled, coeffs, tau,
                _split_deltas(assembled, state[n_coeff + 1 :]),
            )
        else:
            ll = _marginal(assembled, coeffs, tau)
        # Jacobian of the tau -> log(tau) reparameterization.
        return lp + ll + log_tau

    # Initial state: zero coefficients, tau at a tenth of its prior range,
    # latent effects at the observations; small jitter separates chains.
    state = None
    for _ in range(INIT_RETRIES):
        candidate = np.zeros(dim)
        candidate[n_coeff] = math.log(0.1 * prior.tau_upper)
        if latent:
            candidate[n_coeff + 1 :] = np.concatenate(
                [t.y for t in assembled.trials]
            )
        candidate += rng.normal(0.0, 0.01, size=dim)
        if math.isfinite(log_post(candidate)):
            state = candidate
            break
    if state is None:
        raise SamplerError(
            f"chain {chain_index}: no finite starting point after "
            f"{INIT_RETRIES} attempts"
        )
    current_lp = log_post(state)

    # Robbins-Monro adaptation of a global step multiplier and
    # per-coordinate spread estimates (frozen after the adapt phase).
    log_scale = 0.0
    running_mean = state.copy()
    running_var = np.full(dim, 1e-4)

    draws = np.empty((config.samples, n_coeff + 1))
    accepted_sampling = 0
    recorded = 0
    total_iters = config.adapt + config.burn_in + config.samples * config.thin

    for it in range(total_iters):
        adapting = it < config.adapt
        sampling = it >= config.adapt + config.burn_in

        step = math.exp(log_scale) * np.maximum(
            np.sqrt(running_var), SCALE_FLOOR
        )
        proposal = state + rng.normal(size=dim) * step
        proposal_lp = log_post(proposal)
        log_ratio = proposal_lp - current_lp
        accept_prob = min(1.0, math.exp(min(log_ratio, 0.0)))
        if rng.random() < accept_prob:
            state = proposal
            current_lp = proposal_lp
            if sampling:
                accepted_sampling += 1

        if adapting:
            gamma = (10.0 + it) ** -0.6
            delta = state - running_mean
            running_mean = running_mean + gamma * delta
            running_var = (1.0 - gamma) * running_var + gamma * delta * delta
            log_scale += gamma * (accept_prob - config.target_accept)

        if sampling and (it - config.adapt - config.burn_in + 1) % config.thin == 0:
            out = state[: n_coeff + 1].copy()
            out[n_coeff] = math.exp(out[n_coeff])
            draws[recorded] = out
            recorded += 1

    assert recorded == config.samples
    return ChainOutput(
        chain_index=chain_index,
        draws=draws,
        parameter_names=assembled.parameter_names,
        accept_rate=accepted_sampling / max(config.samples * config.thin, 1),
        seed_used=seed_used,
        proposal_log_scale=log_scale,
    )


def run_mcmc(
    dataset: Dataset,
    config: McmcConfig = McmcConfig(),
    prior: PriorSpec = PriorSpec(),
) -> list[ChainOutput]:
    """Sample the posterior with ``config.chains`` independent chains.

    Chains are reproducible from ``config.seed`` alone and independent
    of execution order; with ``config.parallel`` they run in a thread
    pool and return bit-identical draws.
    """
    if dataset.centering is None and dataset.schema.n_parameters > 2:
        warnings.warn(
            "fitting on uncentered covariates; the intercept and "
            "coefficients may mix poorly (see center_covariates)",
            stacklevel=2,
        )
    assembled = assemble(dataset)
    indices = range(config.chains)
    if config.parallel and config.chains > 1:
        with ThreadPoolExecutor(max_workers=config.chains) as pool:
            chains = list(
                pool.map(
                    lambda k: run_chain(assembled, config, prior, k), indices
                )
            )
    else:
        chains = [run_chain(assembled, config, prior, k) for k in indices]
    return chains
