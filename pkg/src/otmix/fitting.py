"""Iterative fitting: EM, Sinkhorn-EM, and block-coordinate weight inference.

Both fitters share the Gaussian M-step and the stopping rule (L1 change over
all parameters below a tolerance or an iteration cap).  They differ only in
the E-step: plain Bayes responsibilities for EM, the entropic-OT plan for
Sinkhorn-EM.  Weight inference never happens inside the Sinkhorn-EM loop
itself (the marginal constraint pins the weights); `coordinate_descent_fit`
alternates Sinkhorn-EM in the locations with exponentiated-gradient updates
of the weights.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field, replace

import numpy as np

from .mixtures import (
    Dataset,
    MixtureParams,
    Responsibilities,
    VARIANCE_FLOOR,
    VarianceSpec,
    component_log_densities,
    neg_loglik,
    neg_loglik_from_log_densities,
    responsibility_matrix,
    vanilla_responsibilities,
)
from .sinkhorn import (
    SinkhornConfig,
    SinkhornSolution,
    loss_entropic_semidual,
    semidual_value,
    sinkhorn_estep,
    transport_responsibilities,
)

EMPTY_COMPONENT_THRESHOLD = 1e-12


class EmptyComponentError(RuntimeError):
    """An M-step column mass fell below threshold (degenerate assignment)."""

    def __init__(self, component: int, mass: float):
        super().__init__(f"component {component} has column mass {mass:.3g}")
        self.component = component
        self.mass = mass


@dataclass(frozen=True)
class FitConfig:
    """Outer-loop and weight-update knobs shared by all fitters."""

    max_outer_iterations: int = 100
    param_change_tolerance: float = 1e-3
    sinkhorn: SinkhornConfig = field(default_factory=SinkhornConfig)
    update_variances: bool = False
    update_weights: bool = False
    weight_step: float = 1.0
    weight_update_cadence: int = 6

    def __post_init__(self):
        if self.max_outer_iterations < 1:
            raise ValueError("max_outer_iterations must be >= 1")
        if self.param_change_tolerance <= 0:
            raise ValueError("param_change_tolerance must be positive")
        if self.weight_step <= 0:
            raise ValueError("weight_step must be positive")
        if self.weight_update_cadence < 1:
            raise ValueError("weight_update_cadence must be >= 1")


@dataclass(frozen=True)
class FitReport:
    """Outcome of one fit: final parameters, loss trace, and diagnostics.

    loss_trace holds one (ell, ot_loss) pair per outer iterate, evaluated at
    the pre-update parameters, plus a final pair at the returned parameters.
    ot_loss entries are None for plain EM.
    """

    final_params: MixtureParams
    loss_trace: list
    responsibilities: Responsibilities
    converged: bool
    iterations: int
    seed: object = None
    elapsed: float = 0.0
    sinkhorn_converged: bool = True

    def to_json_dict(self, include_trace: bool = False) -> dict:
        d = {
            "final_params": self.final_params.to_json_dict(),
            "converged": self.converged,
            "iterations": self.iterations,
            "seed": self.seed,
            "elapsed": self.elapsed,
            "sinkhorn_converged": self.sinkhorn_converged,
            "final_ell": self.loss_trace[-1][0] if self.loss_trace else None,
        }
        if include_trace:
            d["loss_trace"] = [list(pair) for pair in self.loss_trace]
        return d


def _floored(values: np.ndarray) -> np.ndarray:
    return np.maximum(values, VARIANCE_FLOOR)


def mstep_gaussian(
    data: Dataset,
    resp: Responsibilities,
    spec: VarianceSpec,
    weights: np.ndarray,
) -> MixtureParams:
    """Weighted-mean location update plus per-regime variance update.

    Locations: theta_k = sum_i Psi_ik Y_i / sum_i Psi_ik.  Variances are
    updated only when spec.fixed is False, using the matching weighted
    second-moment formula, projected onto the variance floor.  Weights pass
    through unchanged.
    """
    psi = resp.matrix
    y = data.points
    n, d = y.shape
    col_mass = psi.sum(axis=0)
    low = int(np.argmin(col_mass))
    if col_mass[low] < EMPTY_COMPONENT_THRESHOLD:
        raise EmptyComponentError(low, float(col_mass[low]))

    locations = (psi.T @ y) / col_mass[:, None]

    if spec.fixed:
        new_spec = spec
    else:
        diff = y[:, None, :] - locations[None, :, :]  # (N, K, d)
        wsq = np.einsum("ik,ikj->kj", psi, diff**2)  # (K, d)
        if spec.kind == "shared":
            value = wsq.sum() / (n * d)
            new_spec = VarianceSpec.shared(float(_floored(np.asarray(value))), fixed=False)
        elif spec.kind == "spherical":
            values = wsq.sum(axis=1) / (col_mass * d)
            new_spec = VarianceSpec.spherical(_floored(values), fixed=False)
        else:
            values = wsq / col_mass[:, None]
            new_spec = VarianceSpec.diagonal(_floored(values), fixed=False)

    return MixtureParams(locations, new_spec, np.asarray(weights, dtype=float))


def _param_change(old: MixtureParams, new: MixtureParams) -> float:
    """L1 change across locations, variance entries, and weights."""
    change = float(np.abs(new.locations - old.locations).sum())
    change += float(np.abs(new.variances.values - old.variances.values).sum())
    change += float(np.abs(new.weights - old.weights).sum())
    return change


def _effective_init(init: MixtureParams, cfg: FitConfig) -> MixtureParams:
    """Align the variance spec's fixed flag with cfg.update_variances."""
    if init.variances.fixed == (not cfg.update_variances):
        return init
    return init.with_variances(replace(init.variances, fixed=not cfg.update_variances))


def em_fit(data: Dataset, init: MixtureParams, cfg: FitConfig, seed=None) -> FitReport:
    """Classical EM: vanilla E-step, Gaussian M-step, closed-form weights."""
    t0 = time.perf_counter()
    params = _effective_init(init, cfg)
    trace = []
    converged = False
    iterations = 0
    log_kernel = component_log_densities(params, data.points)
    resp = Responsibilities(responsibility_matrix(log_kernel, params.weights))
    for iterations in range(1, cfg.max_outer_iterations + 1):
        trace.append((neg_loglik_from_log_densities(log_kernel, params.weights), None))
        weights = resp.column_means() if cfg.update_weights else params.weights
        new_params = mstep_gaussian(data, resp, params.variances, weights)
        change = _param_change(params, new_params)
        params = new_params
        log_kernel = component_log_densities(params, data.points)
        resp = Responsibilities(responsibility_matrix(log_kernel, params.weights))
        if change < cfg.param_change_tolerance:
            converged = True
            break
    trace.append((neg_loglik_from_log_densities(log_kernel, params.weights), None))
    return FitReport(
        final_params=params,
        loss_trace=trace,
        responsibilities=resp,
        converged=converged,
        iterations=iterations,
        seed=seed,
        elapsed=time.perf_counter() - t0,
    )


def sem_fit(
    data: Dataset,
    init: MixtureParams,
    cfg: FitConfig,
    seed=None,
    initial_potentials: np.ndarray | None = None,
) -> FitReport:
    """Sinkhorn-EM: transport E-step at fixed weights, Gaussian M-step.

    The entropic loss trace is evaluated from each E-step's potentials, so it
    costs nothing extra; it is non-increasing up to solver slack.  Potentials
    are warm-started across outer iterations (and from `initial_potentials`
    when given).
    """
    t0 = time.perf_counter()
    params = _effective_init(init, cfg)
    trace = []
    converged = False
    all_solves_converged = True
    iterations = 0
    omega = initial_potentials
    log_kernel = component_log_densities(params, data.points)
    solution = transport_responsibilities(log_kernel, params.weights, cfg.sinkhorn, omega)
    for iterations in range(1, cfg.max_outer_iterations + 1):
        all_solves_converged &= solution.converged
        omega = solution.potentials
        trace.append(
            (
                neg_loglik_from_log_densities(log_kernel, params.weights),
                semidual_value(log_kernel, params.weights, omega),
            )
        )
        new_params = mstep_gaussian(data, solution.responsibilities, params.variances, params.weights)
        change = _param_change(params, new_params)
        params = new_params
        log_kernel = component_log_densities(params, data.points)
        solution = transport_responsibilities(log_kernel, params.weights, cfg.sinkhorn, omega)
        if change < cfg.param_change_tolerance:
            converged = True
            break
    all_solves_converged &= solution.converged
    trace.append(
        (
            neg_loglik_from_log_densities(log_kernel, params.weights),
            semidual_value(log_kernel, params.weights, solution.potentials),
        )
    )
    return FitReport(
        final_params=params,
        loss_trace=trace,
        responsibilities=solution.responsibilities,
        converged=converged,
        iterations=iterations,
        seed=seed,
        elapsed=time.perf_counter() - t0,
        sinkhorn_converged=all_solves_converged,
    )


def update_weights_eg(alpha: np.ndarray, gradient: np.ndarray, eta: float) -> np.ndarray:
    """Multiplicative (exponentiated-gradient) simplex step, renormalized."""
    if eta < 0:
        raise ValueError("eta must be nonnegative")
    alpha = np.asarray(alpha, dtype=float)
    g = np.asarray(gradient, dtype=float)
    logits = np.log(alpha) - eta * g
    logits -= logits.max()
    w = np.exp(logits)
    return w / w.sum()


MAX_ETA_HALVINGS = 30
MAX_ALPHA_ITERATIONS = 50


def coordinate_descent_fit(
    data: Dataset, init: MixtureParams, cfg: FitConfig, seed=None
) -> FitReport:
    """Block-coordinate descent over locations and weights.

    Alternates (a) Sinkhorn-EM to theta-stationarity at frozen weights with
    (b) exponentiated-gradient weight updates backtracked on the step size
    (start at cfg.weight_step, halve until the entropic loss decreases, at
    most 30 halvings, otherwise keep the current weights).  Stops when the
    joint L1 parameter change over an outer round falls below tolerance.
    """
    if not cfg.update_weights:
        raise ValueError("coordinate_descent_fit requires cfg.update_weights=True")
    t0 = time.perf_counter()
    theta_cfg = replace(cfg, update_weights=False)
    params = _effective_init(init, cfg)
    trace = []
    converged = False
    all_solves_converged = True
    iterations = 0
    carry_omega = None
    for outer in range(1, cfg.max_outer_iterations + 1):
        round_start = params

        # (a) theta phase
        last_report = sem_fit(data, params, theta_cfg, initial_potentials=carry_omega)
        all_solves_converged &= last_report.sinkhorn_converged
        params = last_report.final_params
        trace.extend(last_report.loss_trace[:-1])

        # (b) alpha phase; theta is frozen, so one kernel serves the whole
        # phase and the potentials warm-start every solve
        log_kernel = component_log_densities(params, data.points)
        solution = transport_responsibilities(
            log_kernel, params.weights, cfg.sinkhorn, carry_omega
        )
        all_solves_converged &= solution.converged
        current_loss = semidual_value(log_kernel, params.weights, solution.potentials)
        for _ in range(MAX_ALPHA_ITERATIONS):
            omega = solution.potentials
            gradient = omega - float(np.dot(params.weights, omega)) - 1.0
            eta = cfg.weight_step
            accepted = False
            for _ in range(MAX_ETA_HALVINGS + 1):
                candidate_w = update_weights_eg(params.weights, gradient, eta)
                cand_solution = transport_responsibilities(
                    log_kernel, candidate_w, cfg.sinkhorn, omega
                )
                cand_loss = semidual_value(log_kernel, candidate_w, cand_solution.potentials)
                if cand_loss < current_loss:
                    accepted = True
                    break
                eta *= 0.5
            if not accepted:
                break
            weight_change = float(np.abs(candidate_w - params.weights).sum())
            params = params.with_weights(candidate_w)
            solution = cand_solution
            all_solves_converged &= solution.converged
            current_loss = cand_loss
            if weight_change < cfg.param_change_tolerance:
                break
        trace.append((neg_loglik(params, data), current_loss))
        carry_omega = solution.potentials

        iterations = outer
        if _param_change(round_start, params) < cfg.param_change_tolerance:
            converged = True
            break

    final_solution = sinkhorn_estep(params, data, cfg.sinkhorn)
    trace.append(
        (neg_loglik(params, data), loss_entropic_semidual(params, data, cfg.sinkhorn, final_solution))
    )
    return FitReport(
        final_params=params,
        loss_trace=trace,
        responsibilities=final_solution.responsibilities,
        converged=converged,
        iterations=iterations,
        seed=seed,
        elapsed=time.perf_counter() - t0,
        sinkhorn_converged=all_solves_converged and final_solution.converged,
    )
