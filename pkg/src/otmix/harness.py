"""Configuration-driven experiment runner for the synthetic studies.

A sweep is fully determined by one flat key = value config file plus a master
seed.  Every random draw flows through a documented stream-splitting rule on
numpy SeedSequence (PCG64 generators):

    truth of (cell c, replicate r):   SeedSequence((master, c, r, 0))
    dataset of (c, r):                SeedSequence((master, c, r, 1))
    k-means++ init of (c, r, seed s): SeedSequence((master, c, r, 2 + s))

so reruns with the same master seed are bit-identical in single-thread mode.
All methods within one (cell, replicate, seed) share the same k-means++
initialization; rows carry a hash of the init so that sharing is auditable.
Wall-clock columns are written as 0 unless timing is switched on, keeping the
default output files byte-reproducible.
"""

from __future__ import annotations

import hashlib
import itertools
import json
import time
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .fitting import (
    EmptyComponentError,
    FitConfig,
    coordinate_descent_fit,
    em_fit,
    sem_fit,
)
from .metrics import (
    adjusted_rand_index,
    balance_residual,
    bic_score,
    center_error,
    kmeans_labels,
    kmeanspp_init,
    lloyd_kmeans,
    select_k,
)
from .mixtures import Dataset, MixtureParams, VarianceSpec, neg_loglik, sample_mixture
from .sinkhorn import SinkhornConfig, SinkhornNonConvergence

VARIANCE_REGIMES = ("i", "ii", "iii", "iv")
METHODS = ("kmeans", "em", "sem")

RESULT_COLUMNS = [
    "K",
    "d",
    "sigma2",
    "N",
    "variance_regime",
    "weight_regime",
    "dirichlet_gamma",
    "replicate",
    "method",
    "seed",
    "error",
    "ari",
    "bic",
    "iterations",
    "wall_ms",
    "converged",
    "init_hash",
]


@dataclass(frozen=True)
class ExperimentSpec:
    """One synthetic sweep: a grid of cells, replication counts, and methods."""

    ks: tuple
    ds: tuple
    sigma2s: tuple
    ns: tuple
    variance_regimes: tuple = ("i",)
    weight_regime: str = "uniform"
    dirichlet_gamma: float | None = None
    n_replicates: int = 20
    n_seeds: int = 5
    methods: tuple = METHODS
    selection: str = "per-seed"
    master_seed: int = 0
    max_outer_iterations: int = 100
    param_change_tolerance: float = 1e-3
    sinkhorn_tolerance: float = 1e-3
    sinkhorn_max_iterations: int = 1000
    weight_step: float = 1.0
    weight_update_cadence: int = 6

    def __post_init__(self):
        for name in ("ks", "ds", "sigma2s", "ns", "variance_regimes", "methods"):
            object.__setattr__(self, name, tuple(getattr(self, name)))
        if not all(r in VARIANCE_REGIMES for r in self.variance_regimes):
            raise ValueError(f"variance regimes must be among {VARIANCE_REGIMES}")
        if not all(m in METHODS for m in self.methods):
            raise ValueError(f"methods must be among {METHODS}")
        if self.weight_regime not in ("uniform", "dirichlet"):
            raise ValueError("weight_regime must be 'uniform' or 'dirichlet'")
        if self.weight_regime == "dirichlet" and not self.dirichlet_gamma:
            raise ValueError("dirichlet weight regime requires dirichlet_gamma")
        if self.selection not in ("per-seed", "best-of-seeds"):
            raise ValueError("selection must be 'per-seed' or 'best-of-seeds'")
        if self.n_seeds < 1 or self.n_replicates < 1:
            raise ValueError("n_seeds and n_replicates must be >= 1")
        if not (self.ks and self.ds and self.sigma2s and self.ns and self.variance_regimes):
            raise ValueError("every grid axis must be non-empty")

    def cells(self) -> list[tuple]:
        return list(
            itertools.product(self.ks, self.ds, self.sigma2s, self.ns, self.variance_regimes)
        )

    def fit_config(self, update_variances: bool, update_weights: bool) -> FitConfig:
        return FitConfig(
            max_outer_iterations=self.max_outer_iterations,
            param_change_tolerance=self.param_change_tolerance,
            sinkhorn=SinkhornConfig(
                tolerance=self.sinkhorn_tolerance,
                max_iterations=self.sinkhorn_max_iterations,
            ),
            update_variances=update_variances,
            update_weights=update_weights,
            weight_step=self.weight_step,
            weight_update_cadence=self.weight_update_cadence,
        )


def parse_config_value(raw: str):
    raw = raw.strip()
    try:
        return json.loads(raw)
    except json.JSONDecodeError:
        return raw


def load_config(path) -> dict:
    """Flat `key = value` file; values are JSON scalars or arrays, # comments."""
    out = {}
    for lineno, line in enumerate(Path(path).read_text().splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"{path}:{lineno}: expected 'key = value'")
        key, raw = line.split("=", 1)
        out[key.strip()] = parse_config_value(raw)
    return out

CONFIG_KEYS = {
    "K": "ks",
    "d": "ds",
    "sigma2": "sigma2s",
    "N": "ns",
    "variance_regime": "variance_regimes",
    "weight_regime": "weight_regime",
    "dirichlet_gamma": "dirichlet_gamma",
    "n_replicates": "n_replicates",
    "n_seeds": "n_seeds",
    "methods": "methods",
    "selection": "selection",
    "master_seed": "master_seed",
    "max_outer_iterations": "max_outer_iterations",
    "param_change_tolerance": "param_change_tolerance",
    "sinkhorn_tolerance": "sinkhorn_tolerance",
    "sinkhorn_max_iterations": "sinkhorn_max_iterations",
    "weight_step": "weight_step",
    "weight_update_cadence": "weight_update_cadence",
}


def spec_from_config(path) -> ExperimentSpec:
    raw = load_config(path)
    kwargs = {}
    for key, value in raw.items():
        if key not in CONFIG_KEYS:
            raise ValueError(f"unknown config key {key!r}")
        name = CONFIG_KEYS[key]
        if name in ("ks", "ds", "sigma2s", "ns", "variance_regimes", "methods"):
            value = value if isinstance(value, list) else [value]
        kwargs[name] = value
    return ExperimentSpec(**kwargs)


def _task_rng(master_seed: int, *path: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence((master_seed, *path)))


def _sample_truth(rng, k, d, sigma2, regime, weight_regime, gamma) -> MixtureParams:
    locations = rng.uniform(-1.0, 1.0, size=(k, d))
    if regime in ("i", "iii"):
        spec = VarianceSpec.shared(sigma2)
    else:
        spec = VarianceSpec.diagonal(rng.uniform(0.5 * sigma2, 1.5 * sigma2, size=(k, d)))
    if weight_regime == "dirichlet":
        weights = rng.dirichlet(np.full(k, gamma / k))
        weights = np.maximum(weights, 1e-8)
        weights = weights / weights.sum()
    else:
        weights = np.full(k, 1.0 / k)
    return MixtureParams(locations, spec, weights)


def _init_variance_spec(regime: str, truth: MixtureParams) -> VarianceSpec:
    if regime == "i":
        return VarianceSpec.shared(float(truth.variances.values), fixed=True)
    if regime == "ii":
        return VarianceSpec.diagonal(truth.variances.values, fixed=True)
    if regime == "iii":
        return VarianceSpec.shared(1.0, fixed=False)
    return VarianceSpec.diagonal(np.ones_like(truth.variances.values), fixed=False)


def _init_hash(params: MixtureParams) -> str:
    return hashlib.sha1(np.ascontiguousarray(params.locations).tobytes()).hexdigest()[:10]


def _format_value(v) -> str:
    if v is None:
        return ""
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        return repr(v)
    return str(v)


def write_rows_csv(path, rows: list[dict], columns: list[str]) -> None:
    with open(path, "w") as fh:
        fh.write(",".join(columns) + "\n")
        for row in rows:
            fh.write(",".join(_format_value(row.get(c)) for c in columns) + "\n")


def _run_one_method(method, data, init, spec: ExperimentSpec, regime):
    """Fit one method from a shared init; returns (params, labels, report-ish)."""
    update_vars = regime in ("iii", "iv")
    infer_weights = spec.weight_regime == "dirichlet"
    if method == "kmeans":
        t0 = time.perf_counter()
        params, inertia = lloyd_kmeans(data, init, max_iter=spec.max_outer_iterations)
        elapsed = time.perf_counter() - t0
        labels = kmeans_labels(params, data)
        return params, labels, {
            "selection_value": inertia,
            "iterations": None,
            "elapsed": elapsed,
            "converged": True,
            "bic": None,
        }
    cfg = spec.fit_config(update_vars, infer_weights)
    if method == "em":
        report = em_fit(data, init, cfg)
    elif infer_weights:
        report = coordinate_descent_fit(data, init, cfg)
    else:
        report = sem_fit(data, init, cfg)
    params = report.final_params
    labels = np.argmax(report.responsibilities.matrix, axis=1)
    ell = neg_loglik(params, data)
    return params, labels, {
        "selection_value": ell,
        "iterations": report.iterations,
        "elapsed": report.elapsed,
        "converged": report.converged,
        "bic": bic_score(params, data, weights_estimated=infer_weights),
    }


def run_experiment(spec: ExperimentSpec, out_dir=None, timing: bool = False) -> list[dict]:
    """Execute the sweep cell by cell; returns (and optionally writes) rows.

    Per-fit failures become rows with converged=false and empty scores; the
    sweep never aborts.  With selection='best-of-seeds' only the best seed
    per (cell, replicate, method) is emitted, chosen by in-sample negative
    log-likelihood (inertia for k-means).
    """
    rows = []
    gamma = spec.dirichlet_gamma if spec.weight_regime == "dirichlet" else None
    for cell_index, (k, d, sigma2, n, regime) in enumerate(spec.cells()):
        for rep in range(spec.n_replicates):
            truth = _sample_truth(
                _task_rng(spec.master_seed, cell_index, rep, 0),
                k, d, sigma2, regime, spec.weight_regime, gamma,
            )
            data = sample_mixture(truth, n, _task_rng(spec.master_seed, cell_index, rep, 1))
            per_method_rows = {m: [] for m in spec.methods}
            for s in range(spec.n_seeds):
                init = kmeanspp_init(data, k, _task_rng(spec.master_seed, cell_index, rep, 2 + s))
                init = init.with_variances(_init_variance_spec(regime, truth))
                ihash = _init_hash(init)
                for method in spec.methods:
                    base = {
                        "K": k, "d": d, "sigma2": sigma2, "N": n,
                        "variance_regime": regime,
                        "weight_regime": spec.weight_regime,
                        "dirichlet_gamma": gamma,
                        "replicate": rep, "method": method, "seed": s,
                        "init_hash": ihash,
                    }
                    try:
                        with warnings.catch_warnings():
                            warnings.simplefilter("ignore", SinkhornNonConvergence)
                            params, labels, info = _run_one_method(
                                method, data, init, spec, regime
                            )
                    except EmptyComponentError:
                        base.update({
                            "error": None, "ari": None, "bic": None,
                            "iterations": None, "wall_ms": 0, "converged": False,
                            "_selection_value": np.inf,
                        })
                        per_method_rows[method].append(base)
                        continue
                    base.update({
                        "error": center_error(params, truth),
                        "ari": adjusted_rand_index(labels, data.true_labels),
                        "bic": info["bic"],
                        "iterations": info["iterations"],
                        "wall_ms": round(info["elapsed"] * 1000.0, 3) if timing else 0,
                        "converged": info["converged"],
                        "_selection_value": info["selection_value"],
                    })
                    per_method_rows[method].append(base)
            for method in spec.methods:
                mrows = per_method_rows[method]
                if spec.selection == "best-of-seeds":
                    mrows = [min(mrows, key=lambda r: r["_selection_value"])]
                for r in mrows:
                    r.pop("_selection_value", None)
                    rows.append(r)
    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        write_rows_csv(out / "results.csv", rows, RESULT_COLUMNS)
    return rows


SPURIOUS_COLUMNS = [
    "trial", "method", "error", "escaped", "balance_residual", "iterations", "converged",
]


def spurious_truth(D: float, R: float, sigma: float) -> MixtureParams:
    locations = np.array([[0.0, D], [0.0, -D], [R, 0.0]])
    return MixtureParams(locations, VarianceSpec.shared(sigma**2), np.full(3, 1.0 / 3.0))


def in_spurious_region(params: MixtureParams, R: float, eps: float = 1.0) -> bool:
    """One center left of R/3, two right of 2R/3, all second coordinates small."""
    x = np.sort(params.locations[:, 0])
    y_ok = bool(np.max(np.abs(params.locations[:, 1])) < eps)
    return bool(x[0] < R / 3 and x[1] > 2 * R / 3 and x[2] > 2 * R / 3 and y_ok)


def run_spurious_demo(
    D: float,
    R: float,
    sigma: float,
    n: int,
    trials: int,
    seed: int,
    jitter: float = 0.1,
    max_outer_iterations: int = 300,
    out_path=None,
) -> tuple[list[dict], dict]:
    """Spurious-optimum escape study: EM vs SEM from a many-fit-one start.

    The truth places two components across the second axis and one far along
    the first; both fitters start with one center between the close pair and
    two stacked on the far component (jitter <= 0.1).  Reports per-trial
    errors, whether the fit escaped the spurious region, and the balance
    residual evaluated with each method's own responsibilities.
    """
    truth = spurious_truth(D, R, sigma)
    cfg = FitConfig(
        max_outer_iterations=max_outer_iterations,
        param_change_tolerance=1e-4,
        sinkhorn=SinkhornConfig(tolerance=1e-3, max_iterations=1000),
    )
    rows = []
    for trial in range(trials):
        data = sample_mixture(truth, n, _task_rng(seed, trial, 0))
        rng = _task_rng(seed, trial, 1)
        base_locations = np.array([[0.0, 0.0], [R, 0.0], [R, 0.0]])
        init_locations = base_locations + rng.uniform(-jitter, jitter, size=(3, 2))
        init = MixtureParams(
            init_locations, VarianceSpec.shared(sigma**2), np.full(3, 1.0 / 3.0)
        )
        for method, fit in (("em", em_fit), ("sem", sem_fit)):
            with warnings.catch_warnings():
                warnings.simplefilter("ignore", SinkhornNonConvergence)
                report = fit(data, init, cfg)
            params = report.final_params
            rows.append({
                "trial": trial,
                "method": method,
                "error": center_error(params, truth),
                "escaped": not in_spurious_region(params, R),
                "balance_residual": balance_residual(params, data, report.responsibilities),
                "iterations": report.iterations,
                "converged": report.converged,
            })
    summary = {}
    for method in ("em", "sem"):
        mrows = [r for r in rows if r["method"] == method]
        summary[method] = {
            "escape_fraction": sum(r["escaped"] for r in mrows) / len(mrows),
            "median_error": float(np.median([r["error"] for r in mrows])),
        }
    if out_path is not None:
        write_rows_csv(out_path, rows, SPURIOUS_COLUMNS)
    return rows, summary


SELECTION_COLUMNS = ["method", "replicate", "K_true", "K_hat", "diff"]


def run_selection_sweep(
    k_true: int,
    d: int,
    sigma2: float,
    n: int,
    n_replicates: int,
    candidates=None,
    n_seeds: int = 2,
    master_seed: int = 0,
    methods=("em", "sem"),
    spec: ExperimentSpec | None = None,
    out_path=None,
) -> list[dict]:
    """Model selection study: K-hat via BIC over candidate K, per method.

    Data are drawn with equal weights and a known shared variance; candidates
    default to K-5 .. K+5 clipped at 1.  Emits one row per (method,
    replicate) with the selected K and the signed error K_true - K_hat.
    """
    if candidates is None:
        candidates = [k for k in range(k_true - 5, k_true + 6) if k >= 1]
    base_spec = spec or ExperimentSpec(
        ks=(k_true,), ds=(d,), sigma2s=(sigma2,), ns=(n,), n_seeds=n_seeds,
        master_seed=master_seed,
    )
    rows = []
    for rep in range(n_replicates):
        truth = _sample_truth(
            _task_rng(master_seed, 0, rep, 0), k_true, d, sigma2, "i", "uniform", None
        )
        data = sample_mixture(truth, n, _task_rng(master_seed, 0, rep, 1))
        var_spec = VarianceSpec.shared(sigma2, fixed=True)
        for method in methods:
            cfg = base_spec.fit_config(update_variances=False, update_weights=False)
            fitter = em_fit if method == "em" else sem_fit

            def fit(dataset, init, seed_index):
                with warnings.catch_warnings():
                    warnings.simplefilter("ignore", SinkhornNonConvergence)
                    return fitter(dataset, init.with_variances(var_spec), cfg)

            k_hat, _ = select_k(
                data, candidates, fit, seeds=n_seeds, seed=master_seed + 7919 * rep
            )
            rows.append({
                "method": method,
                "replicate": rep,
                "K_true": k_true,
                "K_hat": k_hat,
                "diff": k_true - k_hat,
            })
    if out_path is not None:
        write_rows_csv(out_path, rows, SELECTION_COLUMNS)
    return rows
