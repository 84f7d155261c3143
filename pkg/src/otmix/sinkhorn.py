"""Entropic-OT E-step: log-domain Sinkhorn between mixture atoms and data.

The transport problem couples the atomic measure on the K components
(masses alpha_k) with the uniform empirical measure on the N data points
(mass 1/N each), under the cost C_ik = -log q_{theta_k}(Y_i).  Because the
component side is atomic, a single K-vector of dual potentials omega fully
describes the optimal plan: the conditional responsibilities are vanilla
responsibilities under the tilted weights

    alpha_k(omega) = alpha_k exp(omega_k) / sum_k' alpha_k' exp(omega_k'),

and the potentials solve the column-marginal equation
mean_i Psi_ik(omega) = alpha_k.  The solver iterates that fixed point in
log space, which is the classical Sinkhorn scaling with the data-side
potential eliminated; cost entries beyond +-700 are harmless.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np
from scipy.special import logsumexp

from .mixtures import (
    Dataset,
    MixtureParams,
    Responsibilities,
    component_log_densities,
    neg_loglik,
)


class SinkhornNonConvergence(UserWarning):
    """Marginal tolerance not reached within max_iterations (non-fatal)."""


@dataclass(frozen=True)
class SinkhornConfig:
    """Solver knobs; defaults follow the experiment protocol (tol 1e-3, 1000 iters)."""

    tolerance: float = 1e-3
    max_iterations: int = 1000
    pin_last_potential: bool = True

    def __post_init__(self):
        if self.tolerance <= 0:
            raise ValueError("tolerance must be positive")
        if self.max_iterations < 1:
            raise ValueError("max_iterations must be >= 1")


def tilt_weights(weights: np.ndarray, potentials: np.ndarray) -> np.ndarray:
    """Tilted weights alpha_k e^{omega_k} / sum_k' alpha_k' e^{omega_k'}."""
    logits = np.log(weights) + potentials
    logits -= logsumexp(logits)
    return np.exp(logits)


@dataclass(frozen=True)
class SinkhornSolution:
    """Dual potentials, tilted weights, transport plan, and solve diagnostics."""

    potentials: np.ndarray
    tilted_weights: np.ndarray
    responsibilities: Responsibilities
    marginal_error: float
    iterations: int
    converged: bool

    def to_json_dict(self) -> dict:
        return {
            "omega": self.potentials.tolist(),
            "tilted_weights": self.tilted_weights.tolist(),
            "marginal_error": self.marginal_error,
            "iterations": self.iterations,
        }


def transport_responsibilities(
    log_kernel: np.ndarray,
    weights: np.ndarray,
    cfg: SinkhornConfig,
    initial_potentials: np.ndarray | None = None,
) -> SinkhornSolution:
    """Solve the semi-dual marginal equations on an arbitrary (N, K) log kernel.

    Returns the conditional plan row-normalized per data point, with column
    means matching `weights` up to cfg.tolerance in L-infinity norm.  Warns
    (never raises) on non-convergence so sweeps can proceed.
    """
    log_kernel = np.asarray(log_kernel, dtype=float)
    n, k = log_kernel.shape
    weights = np.asarray(weights, dtype=float)
    log_w = np.log(weights)
    omega = np.zeros(k) if initial_potentials is None else np.array(initial_potentials, dtype=float)
    if omega.shape != (k,):
        raise ValueError("initial potentials must be a K-vector")

    converged = False
    iterations = 0
    buf = np.empty_like(log_kernel)
    prev_update = None
    prev_error = np.inf
    boosted = False
    prev_omega = omega
    for iterations in range(1, cfg.max_iterations + 1):
        # max-shifted row softmax keeps rows exact even for huge costs
        np.add(log_kernel, (log_w + omega)[None, :], out=buf)
        buf -= buf.max(axis=1, keepdims=True)
        np.exp(buf, out=buf)
        buf /= buf.sum(axis=1, keepdims=True)
        marginal = buf.mean(axis=0)
        error = float(np.max(np.abs(marginal - weights)))
        if error <= cfg.tolerance:
            converged = True
            break
        if boosted and error > prev_error:
            # an extrapolation overshot: fall back to the plain iterate
            omega = prev_omega
            boosted = False
            prev_update = None
            continue
        prev_error = error
        update = log_w - np.log(np.maximum(marginal, 1e-300))
        prev_omega = omega + update
        omega = prev_omega
        boosted = False
        if prev_update is not None:
            # near-saturated plans make the scaling drift: successive updates
            # become parallel with slowly shrinking norm, so the remaining
            # travel is a geometric tail worth jumping in one go
            nu = float(np.linalg.norm(update))
            np_prev = float(np.linalg.norm(prev_update))
            if nu > 0 and np_prev > 0:
                cos = float(np.dot(update, prev_update)) / (nu * np_prev)
                ratio = nu / np_prev
                if cos > 0.999 and 0.8 < ratio < 0.9999:
                    omega = omega + min(ratio / (1.0 - ratio), 2000.0) * update
                    boosted = True
        prev_update = update
        if cfg.pin_last_potential:
            shift = omega[-1]
            omega = omega - shift
            prev_omega = prev_omega - shift

    if not converged:
        warnings.warn(
            f"Sinkhorn did not reach tolerance {cfg.tolerance:g} in "
            f"{cfg.max_iterations} iterations (marginal error {error:.3g})",
            SinkhornNonConvergence,
            stacklevel=2,
        )

    resp = Responsibilities(buf, kind="transport")
    return SinkhornSolution(
        potentials=omega,
        tilted_weights=tilt_weights(weights, omega),
        responsibilities=resp,
        marginal_error=error,
        iterations=iterations,
        converged=converged,
    )


def sinkhorn_estep(
    params: MixtureParams,
    data: Dataset,
    cfg: SinkhornConfig,
    initial_potentials: np.ndarray | None = None,
) -> SinkhornSolution:
    """Entropic-OT E-step between the mixture atoms and the empirical measure."""
    log_kernel = component_log_densities(params, data.points)
    return transport_responsibilities(log_kernel, params.weights, cfg, initial_potentials)


def tilted_weights(solution: SinkhornSolution) -> np.ndarray:
    """Tilted weights alpha(theta) of a solve; lies on the open simplex.

    The stored vector is built from the potentials by `tilt_weights` at solve
    time, so it satisfies the tilting formula exactly.
    """
    return solution.tilted_weights


def loss_entropic(
    params: MixtureParams,
    data: Dataset,
    cfg: SinkhornConfig,
    solution: SinkhornSolution | None = None,
) -> float:
    """Sample entropic-OT loss via the tilted decomposition.

    Evaluates ell(theta, alpha(theta)) - H(alpha | alpha(theta)): the negative
    log-likelihood of the model with tilted weights, corrected by the relative
    entropy between the original and tilted weights.  Agrees with the
    semi-dual evaluation for any potentials, optimal or not.
    """
    if solution is None:
        solution = sinkhorn_estep(params, data, cfg)
    alpha = params.weights
    alpha_t = solution.tilted_weights
    tilted = params.with_weights(alpha_t)
    h_term = float(np.sum(alpha * (np.log(alpha) - np.log(alpha_t))))
    return neg_loglik(tilted, data) - h_term


def semidual_value(log_kernel: np.ndarray, weights: np.ndarray, potentials: np.ndarray) -> float:
    """Semi-dual objective on a precomputed log kernel at given potentials.

    sum_k alpha_k omega_k - (1/N) sum_i log sum_k alpha_k e^{omega_k} K_ik.
    """
    logits = log_kernel + (np.log(weights) + potentials)[None, :]
    return float(np.dot(weights, potentials) - np.mean(logsumexp(logits, axis=1)))


def loss_entropic_semidual(
    params: MixtureParams,
    data: Dataset,
    cfg: SinkhornConfig,
    solution: SinkhornSolution | None = None,
) -> float:
    """Sample entropic-OT loss via the semi-dual objective at the solved potentials."""
    if solution is None:
        solution = sinkhorn_estep(params, data, cfg)
    return semidual_value(
        component_log_densities(params, data.points), params.weights, solution.potentials
    )


@dataclass(frozen=True)
class EntropicGradient:
    """Gradient of the entropic loss; variances is None when they are fixed."""

    locations: np.ndarray
    variances: np.ndarray | None = None


def grad_loss_entropic(
    params: MixtureParams,
    data: Dataset,
    cfg: SinkhornConfig,
    solution: SinkhornSolution | None = None,
) -> EntropicGradient:
    """Analytic gradient of the entropic loss at frozen tilted weights.

    By the envelope identity, the gradient of the loss in theta equals the
    gradient of the tilted negative log-likelihood, whose responsibilities
    are exactly the transport plan.
    """
    if solution is None:
        solution = sinkhorn_estep(params, data, cfg)
    psi = solution.responsibilities.matrix  # (N, K)
    n = data.n
    var = params.variance_matrix()  # (K, d)
    diff = params.locations[None, :, :] - data.points[:, None, :]  # (N, K, d)
    grad_loc = np.einsum("ik,ikj->kj", psi, diff / var[None, :, :]) / n

    grad_var = None
    if not params.variances.fixed:
        # d(-log q)/d v per entry: 1/(2v) - (y - theta)^2 / (2 v^2)
        per_entry = (1.0 / (2.0 * var[None, :, :]) - diff**2 / (2.0 * var[None, :, :] ** 2))
        g_diag = np.einsum("ik,ikj->kj", psi, per_entry) / n  # (K, d)
        kind = params.variances.kind
        if kind == "diagonal":
            grad_var = g_diag
        elif kind == "spherical":
            grad_var = g_diag.sum(axis=1)
        else:  # shared
            grad_var = np.asarray(g_diag.sum())
    return EntropicGradient(locations=grad_loc, variances=grad_var)


def grad_loss_weights(
    params: MixtureParams,
    data: Dataset,
    cfg: SinkhornConfig,
    solution: SinkhornSolution | None = None,
) -> np.ndarray:
    """Gradient of the entropic loss in the weights: omega - 1.

    The potentials are re-gauged to alpha-weighted mean zero first, so the
    returned direction does not depend on which coordinate the solver pinned.
    The exponentiated-gradient update itself is invariant to this choice.
    """
    if solution is None:
        solution = sinkhorn_estep(params, data, cfg)
    omega = solution.potentials
    omega = omega - float(np.dot(params.weights, omega))
    return omega - 1.0
