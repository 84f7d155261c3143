"""Gaussian mixture parameters, densities, sampling, and responsibilities.

Components are isotropic or axis-aligned Gaussians: each component k has a
location (mean) row, a variance given by a :class:`VarianceSpec`, and a
strictly positive weight.  All density work happens in log space with
log-sum-exp so that far-away points and floor-level variances never overflow.
Every container is an immutable value; the functions here are pure.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np
from scipy.special import logsumexp

# Lower bound enforced on every variance entry (sigma_0^2).  M-steps project
# onto [VARIANCE_FLOOR, inf).
VARIANCE_FLOOR = 1e-6

LOG_2PI = float(np.log(2.0 * np.pi))

VARIANCE_KINDS = ("shared", "spherical", "diagonal")


def _as_float_array(x, name: str) -> np.ndarray:
    arr = np.asarray(x, dtype=float)
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} contains non-finite entries")
    return arr


@dataclass(frozen=True)
class VarianceSpec:
    """Variance regime of a mixture.

    kind:
      - "shared":    one spherical variance for all components; values is a scalar.
      - "spherical": one spherical variance per component; values has shape (K,).
      - "diagonal":  per-component axis-aligned variances; values has shape (K, d).

    fixed: whether M-steps leave the values untouched.
    """

    kind: str
    values: np.ndarray
    fixed: bool = True

    def __post_init__(self):
        if self.kind not in VARIANCE_KINDS:
            raise ValueError(f"unknown variance kind {self.kind!r}")
        vals = _as_float_array(self.values, "variances")
        expected_ndim = {"shared": 0, "spherical": 1, "diagonal": 2}[self.kind]
        if vals.ndim != expected_ndim:
            raise ValueError(
                f"variance kind {self.kind!r} requires a {expected_ndim}-d array, "
                f"got shape {vals.shape}"
            )
        if np.any(vals < VARIANCE_FLOOR * (1.0 - 1e-12)):
            raise ValueError(f"variance entries must be >= {VARIANCE_FLOOR}")
        object.__setattr__(self, "values", vals)

    @classmethod
    def shared(cls, value: float, fixed: bool = True) -> "VarianceSpec":
        return cls("shared", np.asarray(float(value)), fixed)

    @classmethod
    def spherical(cls, values, fixed: bool = True) -> "VarianceSpec":
        return cls("spherical", values, fixed)

    @classmethod
    def diagonal(cls, values, fixed: bool = True) -> "VarianceSpec":
        return cls("diagonal", values, fixed)

    def expand(self, n_components: int, dim: int) -> np.ndarray:
        """Variances as a (K, d) matrix regardless of kind."""
        if self.kind == "shared":
            return np.full((n_components, dim), float(self.values))
        if self.kind == "spherical":
            if self.values.shape != (n_components,):
                raise ValueError("spherical variances do not match K")
            return np.repeat(self.values[:, None], dim, axis=1)
        if self.values.shape != (n_components, dim):
            raise ValueError("diagonal variances do not match (K, d)")
        return self.values

    def n_free_parameters(self, n_components: int, dim: int) -> int:
        """Free variance parameters counted by BIC (0 when fixed)."""
        if self.fixed:
            return 0
        return {"shared": 1, "spherical": n_components, "diagonal": n_components * dim}[
            self.kind
        ]

    def permuted(self, perm: np.ndarray) -> "VarianceSpec":
        if self.kind == "shared":
            return self
        return replace(self, values=self.values[np.asarray(perm)])


@dataclass(frozen=True)
class MixtureParams:
    """Full parameter state of a GMM: locations (K, d), variances, weights (K,)."""

    locations: np.ndarray
    variances: VarianceSpec
    weights: np.ndarray

    def __post_init__(self):
        loc = _as_float_array(self.locations, "locations")
        if loc.ndim == 1:
            loc = loc[:, None]
        if loc.ndim != 2 or loc.shape[0] < 1 or loc.shape[1] < 1:
            raise ValueError("locations must be a K x d matrix with K, d >= 1")
        w = _as_float_array(self.weights, "weights")
        if w.shape != (loc.shape[0],):
            raise ValueError("weights must be a K-vector")
        if np.any(w <= 0.0):
            raise ValueError("weights must be strictly positive")
        if abs(w.sum() - 1.0) > 1e-12:
            raise ValueError("weights must sum to 1 within 1e-12")
        # shape consistency with the variance spec
        self.variances.expand(loc.shape[0], loc.shape[1])
        object.__setattr__(self, "locations", loc)
        object.__setattr__(self, "weights", w)

    @property
    def n_components(self) -> int:
        return self.locations.shape[0]

    @property
    def dim(self) -> int:
        return self.locations.shape[1]

    def variance_matrix(self) -> np.ndarray:
        return self.variances.expand(self.n_components, self.dim)

    def permuted(self, perm) -> "MixtureParams":
        perm = np.asarray(perm)
        return MixtureParams(
            self.locations[perm], self.variances.permuted(perm), self.weights[perm]
        )

    def with_locations(self, locations) -> "MixtureParams":
        return MixtureParams(locations, self.variances, self.weights)

    def with_weights(self, weights) -> "MixtureParams":
        return MixtureParams(self.locations, self.variances, weights)

    def with_variances(self, variances: VarianceSpec) -> "MixtureParams":
        return MixtureParams(self.locations, variances, self.weights)

    def to_json_dict(self) -> dict:
        return {
            "locations": self.locations.tolist(),
            "variances": self.variances.values.tolist(),
            "weights": self.weights.tolist(),
            "kind": self.variances.kind,
            "fixed": self.variances.fixed,
        }

    @classmethod
    def from_json_dict(cls, d: dict) -> "MixtureParams":
        spec = VarianceSpec(d["kind"], np.asarray(d["variances"]), d.get("fixed", True))
        return cls(np.asarray(d["locations"]), spec, np.asarray(d["weights"]))

    def save_json(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_json_dict(), indent=2) + "\n")

    @classmethod
    def load_json(cls, path) -> "MixtureParams":
        return cls.from_json_dict(json.loads(Path(path).read_text()))


@dataclass(frozen=True)
class Dataset:
    """N points in d dimensions with optional ground truth for scoring."""

    points: np.ndarray
    true_labels: np.ndarray | None = None
    true_params: MixtureParams | None = None

    def __post_init__(self):
        pts = _as_float_array(self.points, "points")
        if pts.ndim == 1:
            pts = pts[:, None]
        if pts.ndim != 2 or pts.shape[0] < 1:
            raise ValueError("points must be an N x d matrix with N >= 1")
        object.__setattr__(self, "points", pts)
        if self.true_labels is not None:
            labels = np.asarray(self.true_labels, dtype=int)
            if labels.shape != (pts.shape[0],):
                raise ValueError("true_labels must have one entry per point")
            object.__setattr__(self, "true_labels", labels)

    @property
    def n(self) -> int:
        return self.points.shape[0]

    @property
    def dim(self) -> int:
        return self.points.shape[1]

    def save_csv(self, path) -> None:
        """One row per point; d numeric columns plus an optional label column."""
        header = ",".join(f"x{j}" for j in range(self.dim))
        cols = [self.points]
        fmt = ["%r"] * self.dim
        if self.true_labels is not None:
            header += ",label"
            cols.append(self.true_labels[:, None].astype(float))
            fmt.append("%d")
        body = np.hstack(cols)
        with open(path, "w") as fh:
            fh.write(header + "\n")
            for row in body:
                fields = [repr(float(v)) for v in row[: self.dim]]
                if self.true_labels is not None:
                    fields.append(str(int(row[-1])))
                fh.write(",".join(fields) + "\n")

    @classmethod
    def load_csv(cls, path) -> "Dataset":
        with open(path) as fh:
            header = fh.readline().strip().split(",")
            rows = [line.strip().split(",") for line in fh if line.strip()]
        has_label = header[-1] == "label"
        dim = len(header) - (1 if has_label else 0)
        pts = np.array([[float(v) for v in r[:dim]] for r in rows])
        labels = np.array([int(r[dim]) for r in rows]) if has_label else None
        return cls(pts, true_labels=labels)


@dataclass(frozen=True)
class Responsibilities:
    """Row-stochastic N x K matrix of conditional assignment probabilities.

    kind is "vanilla" for plain Bayes responsibilities and "transport" for
    plans whose column means are pinned to the mixture weights.
    """

    matrix: np.ndarray
    kind: str = "vanilla"

    def __post_init__(self):
        m = _as_float_array(self.matrix, "responsibilities")
        if m.ndim != 2:
            raise ValueError("responsibilities must be an N x K matrix")
        if self.kind not in ("vanilla", "transport"):
            raise ValueError(f"unknown responsibilities kind {self.kind!r}")
        if np.any(m < -1e-12) or np.any(m > 1.0 + 1e-12):
            raise ValueError("responsibility entries must lie in [0, 1]")
        rows = m.sum(axis=1)
        if np.max(np.abs(rows - 1.0)) > 1e-10:
            raise ValueError("responsibility rows must sum to 1 within 1e-10")
        object.__setattr__(self, "matrix", m)

    @property
    def n(self) -> int:
        return self.matrix.shape[0]

    @property
    def n_components(self) -> int:
        return self.matrix.shape[1]

    def column_means(self) -> np.ndarray:
        return self.matrix.mean(axis=0)


def component_log_densities(params: MixtureParams, points: np.ndarray) -> np.ndarray:
    """Log densities log q_{theta_k}(y_i) as an (N, K) matrix."""
    pts = np.asarray(points, dtype=float)
    if pts.ndim == 1:
        pts = pts[:, None]
    var = params.variance_matrix()  # (K, d)
    diff = pts[:, None, :] - params.locations[None, :, :]  # (N, K, d)
    quad = np.sum(diff * diff / var[None, :, :], axis=2)
    log_norm = 0.5 * np.sum(LOG_2PI + np.log(var), axis=1)  # (K,)
    return -0.5 * quad - log_norm[None, :]


def component_logpdf(params: MixtureParams, point, k: int) -> float:
    """Log density of component k at a single point."""
    if not 0 <= k < params.n_components:
        raise IndexError(f"component index {k} out of range")
    pt = _as_float_array(point, "point").reshape(1, -1)
    if pt.shape[1] != params.dim:
        raise ValueError("point dimension does not match the mixture")
    return float(component_log_densities(params, pt)[0, k])


def mixture_log_density(params: MixtureParams, points: np.ndarray) -> np.ndarray:
    """log sum_k alpha_k q_{theta_k}(y_i), per point."""
    logq = component_log_densities(params, points)
    return logsumexp(logq + np.log(params.weights)[None, :], axis=1)


def neg_loglik(params: MixtureParams, data: Dataset) -> float:
    """Sample negative log-likelihood ell = -(1/N) sum_i log q_theta(Y_i)."""
    return float(-np.mean(mixture_log_density(params, data.points)))


def neg_loglik_from_log_densities(log_densities: np.ndarray, weights: np.ndarray) -> float:
    """neg_loglik from a precomputed (N, K) log-density matrix."""
    return float(-np.mean(logsumexp(log_densities + np.log(weights)[None, :], axis=1)))


def responsibility_matrix(log_densities: np.ndarray, weights: np.ndarray) -> np.ndarray:
    """Row-normalized posterior weights from precomputed log densities.

    Max-shifted softmax: the shift is exact for same-magnitude logits, so
    rows normalize to machine precision even when log densities are ~1e11.
    """
    logits = log_densities + np.log(weights)[None, :]
    shifted = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=1, keepdims=True)


def vanilla_responsibilities(params: MixtureParams, data: Dataset) -> Responsibilities:
    """Plain Bayes responsibilities Psi_ik = alpha_k q_k(Y_i) / sum_k' ..."""
    logq = component_log_densities(params, data.points)
    return Responsibilities(responsibility_matrix(logq, params.weights), kind="vanilla")


def _make_rng(seed) -> np.random.Generator:
    """Accept an int seed, a SeedSequence, or a ready Generator (PCG64)."""
    if isinstance(seed, np.random.Generator):
        return seed
    return np.random.default_rng(seed)


def sample_mixture(params: MixtureParams, n: int, seed) -> Dataset:
    """Draw n i.i.d. points: labels from the weights, then the Gaussians.

    Deterministic for a fixed seed; stores the labels and generating
    parameters for downstream scoring.
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    rng = _make_rng(seed)
    labels = rng.choice(params.n_components, size=n, p=params.weights)
    std = np.sqrt(params.variance_matrix())  # (K, d)
    noise = rng.standard_normal((n, params.dim))
    points = params.locations[labels] + noise * std[labels]
    return Dataset(points, true_labels=labels, true_params=params)
