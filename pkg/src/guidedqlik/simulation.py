"""Synthetic benchmark generators and the replicated bias/variance harness.

Two built-in examples:

  poisson71   X ~ U[-2, 2], Y | X=x ~ Poisson(exp(eta0(x))),
              eta0(x) = 3 sin(pi x / 4 - pi/2) + 6, n = 100
  bernoulli72 X ~ U[-1, 1], P(Y=1 | X=x) = logistic(2 sin(pi x)), n = 500

Per grid point x_j over R replications: B_j = mean_r eta_hat_r(x_j) - eta0(x_j),
S_j = mean_r (eta_hat_r(x_j) - mean_r' eta_hat_r'(x_j))^2, MSE_j = B_j^2 + S_j,
and the reported aggregates are the grid means of those.

Seeding is counter-based: replication r of a run with master seed s draws
from SeedSequence(entropy=s, spawn_key=(stream, r)), so each replication is
reproducible in isolation and results do not depend on execution order or
worker count. Streams: 0 = replications, 1 = bandwidth-protocol datasets,
2 = auxiliary samples for gamma selection.
"""

from __future__ import annotations

import io
import json
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from .errors import DomainError, EstimationError, GuidedQlikError, SelectionError
from .families import Dataset, QuasiFamily, get_family
from .guide import GuideFit, GuideSpec, fit_guide
from .local_fit import LocalFitSpec, estimate_curve, fit_local
from .selection import pilot_bandwidth, select_bandwidth

STREAM_REPLICATION = 0
STREAM_BANDWIDTH = 1
STREAM_AUX = 2

DEFAULT_R = 200
DEFAULT_J = 100
N_BANDWIDTH_DATASETS = 10
FLOAT_FMT = "%.12g"


def eta0_poisson71(x):
    return 3.0 * np.sin(np.pi / 4.0 * x - np.pi / 2.0) + 6.0


def eta0_bernoulli72(x):
    return 2.0 * np.sin(np.pi * x)


_EXAMPLE_DEFAULTS = {
    "poisson71": ("poisson", eta0_poisson71, (-2.0, 2.0), 100),
    "bernoulli72": ("bernoulli", eta0_bernoulli72, (-1.0, 1.0), 500),
}


@dataclass(frozen=True)
class ExampleSpec:
    """A synthetic data-generating process: family, true curve, x-law, size."""

    kind: str
    n: int = 0
    seed: int = 0
    family_name: str = ""
    eta0: object = None      # callable x -> true linear predictor; picklable
    x_support: tuple = ()
    noise_sd: float = 1.0    # gaussian custom only

    def __post_init__(self):
        if self.kind in _EXAMPLE_DEFAULTS:
            fam_name, eta0, support, n_default = _EXAMPLE_DEFAULTS[self.kind]
            object.__setattr__(self, "family_name", fam_name)
            object.__setattr__(self, "eta0", eta0)
            object.__setattr__(self, "x_support", support)
            if self.n == 0:
                object.__setattr__(self, "n", n_default)
        elif self.kind == "custom":
            if not self.family_name or self.eta0 is None or not self.x_support:
                raise DomainError("custom example needs family_name, eta0, and x_support")
        else:
            raise DomainError(f"unknown example kind {self.kind!r}")
        if self.n < 1:
            raise DomainError("sample size must be >= 1")

    @property
    def family(self) -> QuasiFamily:
        return get_family(self.family_name)

    def truth(self, x):
        return np.asarray(self.eta0(np.asarray(x, dtype=float)), dtype=float)


def _rng_for(seed: int, stream: int, counter: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(entropy=seed, spawn_key=(stream, counter)))


def generate_example(spec: ExampleSpec, rep: int = 0, stream: int = STREAM_REPLICATION) -> Dataset:
    """Draw one dataset; deterministic in (spec.seed, stream, rep). X is sorted."""
    rng = _rng_for(spec.seed, stream, rep)
    a, b = spec.x_support
    x = np.sort(rng.uniform(a, b, size=spec.n))
    eta = spec.truth(x)
    fam_name = spec.family_name
    if fam_name == "poisson":
        y = rng.poisson(np.exp(eta)).astype(float)
    elif fam_name == "bernoulli":
        p = 1.0 / (1.0 + np.exp(-eta))
        y = rng.binomial(1, p).astype(float)
    elif fam_name == "gaussian":
        y = eta + spec.noise_sd * rng.standard_normal(spec.n)
    else:
        raise DomainError(f"no sampler for family {fam_name!r}")
    return Dataset(x, y)


@dataclass(frozen=True)
class EstimatorConfig:
    """One estimator to benchmark.

    kind: "vanilla" (no guide), "unified" (guide + gamma), or "oracle"
    (returns the true curve; a harness self-check). h policies: "fixed"
    uses .h; "select" runs the median-of-10 pre-asymptotic selector;
    "share-vanilla" copies the h resolved for the vanilla config in the
    same run.
    """

    name: str
    kind: str = "vanilla"
    guide: GuideSpec = None
    gamma: float = 0.0
    p: int = 1
    h: float = None
    h_policy: str = "fixed"

    def __post_init__(self):
        if self.kind not in ("vanilla", "unified", "oracle"):
            raise DomainError(f"unknown estimator kind {self.kind!r}")
        if self.kind == "unified" and self.guide is None:
            raise DomainError("unified estimator needs a guide spec")
        if self.h_policy not in ("fixed", "select", "share-vanilla"):
            raise DomainError(f"unknown h policy {self.h_policy!r}")
        if self.h_policy == "fixed" and self.kind != "oracle" and self.h is None:
            raise DomainError("fixed h policy needs an h value")

    def describe(self) -> dict:
        d = {"name": self.name, "kind": self.kind, "gamma": self.gamma, "p": self.p,
             "h_policy": self.h_policy}
        if self.guide is not None:
            d["guide"] = {"kind": self.guide.kind, "degree": self.guide.degree,
                          "omega": self.guide.omega, "phase": self.guide.phase}
        return d


@dataclass(frozen=True)
class MonteCarloReport:
    """Per-gridpoint and aggregate bias/variance/MSE for one estimator."""

    config: dict
    grid: np.ndarray
    truth: np.ndarray
    bias_j: np.ndarray
    var_j: np.ndarray
    mse_j: np.ndarray
    B2: float
    V: float
    MSE: float
    R: int
    J: int
    h_used: float = float("nan")
    n_failed_replications: int = 0
    n_fallback_points: int = 0
    flagged: bool = False
    notes: tuple = ()

    def to_csv_text(self) -> str:
        """Per-gridpoint table, one row per x_j."""
        buf = io.StringIO()
        buf.write("x,truth,bias,variance,mse\n")
        for j in range(self.J):
            row = (self.grid[j], self.truth[j], self.bias_j[j], self.var_j[j], self.mse_j[j])
            buf.write(",".join(FLOAT_FMT % v for v in row) + "\n")
        return buf.getvalue()

    def aggregates(self) -> dict:
        return {
            "B2": self.B2,
            "V": self.V,
            "MSE": self.MSE,
            "B2_x10000": self.B2 * 1e4,
            "V_x10000": self.V * 1e4,
            "MSE_x10000": self.MSE * 1e4,
            "R": self.R,
            "J": self.J,
            "h_used": self.h_used,
            "n_failed_replications": self.n_failed_replications,
            "n_fallback_points": self.n_fallback_points,
            "flagged": self.flagged,
            "config": self.config,
            "notes": list(self.notes),
        }

    def to_json_text(self) -> str:
        return json.dumps(self.aggregates(), sort_keys=True, indent=2) + "\n"


def metrics_from_estimates(curves: np.ndarray, truth: np.ndarray) -> MonteCarloReport:
    """Pure metric computation from an R x J matrix of curve estimates."""
    curves = np.asarray(curves, dtype=float)
    truth = np.asarray(truth, dtype=float)
    if curves.ndim != 2 or curves.shape[1] != len(truth):
        raise DomainError(f"curves shape {curves.shape} does not match truth length {len(truth)}")
    R, J = curves.shape
    mean_curve = np.mean(curves, axis=0)
    bias_j = mean_curve - truth
    var_j = np.mean((curves - mean_curve) ** 2, axis=0)
    mse_j = bias_j**2 + var_j
    return MonteCarloReport(
        config={},
        grid=np.arange(J, dtype=float),
        truth=truth,
        bias_j=bias_j,
        var_j=var_j,
        mse_j=mse_j,
        B2=float(np.mean(bias_j**2)),
        V=float(np.mean(var_j)),
        MSE=float(np.mean(mse_j)),
        R=R,
        J=J,
    )


def _curve_for_config(data: Dataset, fam: QuasiFamily, config: EstimatorConfig,
                      grid: np.ndarray, h: float, truth: np.ndarray):
    """One replication's curve estimate; returns (values, n_fallback).

    Grid points whose local fit fails carry the guide-only value there (for
    vanilla, the intercept-only global fit plays the guide's role).
    """
    if config.kind == "oracle":
        return truth.copy(), 0
    if config.kind == "unified":
        gfit = fit_guide(data, fam, config.guide)
        spec = LocalFitSpec(config.p, h, config.gamma, "unified")
    else:
        gfit = fit_guide(data, fam, GuideSpec("const"))
        spec = LocalFitSpec(config.p, h, 0.0, "vanilla")
    curve = estimate_curve(data, fam, gfit if config.kind == "unified" else None, spec, grid)
    values = curve.eta_hat
    n_fallback = 0
    if np.any(np.isnan(values)):
        fallback = gfit.eval(grid)
        bad = np.isnan(values)
        values[bad] = fallback[bad]
        n_fallback = int(np.count_nonzero(bad))
    return values, n_fallback


def _replication_task(args):
    spec, config, grid, h, rep = args
    truth = spec.truth(grid)
    data = generate_example(spec, rep=rep)
    fam = spec.family
    try:
        values, n_fallback = _curve_for_config(data, fam, config, grid, h, truth)
        return rep, values, n_fallback, None
    except GuidedQlikError as exc:
        return rep, None, 0, f"rep {rep}: {exc}"


def resolve_bandwidth(spec: ExampleSpec, config: EstimatorConfig,
                      grid: np.ndarray, h_grid=None, n_datasets: int = N_BANDWIDTH_DATASETS,
                      pilot_cache: dict = None) -> float:
    """Median selected h over n_datasets pre-generated datasets.

    The pilot bandwidth is guide-free, so a shared cache keyed by dataset
    index avoids recomputing it for every estimator configuration.
    """
    fam = spec.family
    chosen = []
    a = 2
    for d_idx in range(n_datasets):
        data = generate_example(spec, rep=d_idx, stream=STREAM_BANDWIDTH)
        if pilot_cache is not None and d_idx in pilot_cache:
            pilot_h = pilot_cache[d_idx]
        else:
            pilot_h = pilot_bandwidth(data, fam, degree=config.p + a + 1, h_grid=h_grid)
            if pilot_cache is not None:
                pilot_cache[d_idx] = pilot_h
        if config.kind == "unified":
            gfit = fit_guide(data, fam, config.guide)
            fit_spec = LocalFitSpec(config.p, 1.0, config.gamma, "unified")
        else:
            gfit = None
            fit_spec = LocalFitSpec(config.p, 1.0, 0.0, "vanilla")
        try:
            sel = select_bandwidth(data, fam, gfit, fit_spec, grid, h_grid=h_grid, a=a, pilot_h=pilot_h)
            chosen.append(sel.chosen_h)
        except (SelectionError, GuidedQlikError):
            continue
    if not chosen:
        raise SelectionError(f"bandwidth selection failed on all {n_datasets} datasets for {config.name}")
    return float(np.median(chosen))


def run_monte_carlo(spec: ExampleSpec, estimators, R: int = DEFAULT_R, J: int = DEFAULT_J,
                    threads: int = 1, h_grid=None):
    """Replicated benchmark of several estimators on one example.

    Bandwidths are resolved once per estimator up front (policy "select"
    uses the median-of-10 protocol on a dedicated dataset stream;
    "share-vanilla" copies the h resolved for the vanilla entry). All
    estimators then see the same R datasets. Failed replications are
    dropped from the metrics; an estimator failing more than 10% of its
    replications is flagged.
    """
    if R < 2:
        raise DomainError("need at least 2 replications")
    if not estimators:
        raise DomainError("no estimators given")
    fam = spec.family
    a, b = spec.x_support
    grid = np.linspace(a, b, J)
    truth = spec.truth(grid)

    resolved_h: dict = {}
    pilot_cache: dict = {}
    vanilla_h = None
    for config in estimators:
        if config.h_policy == "fixed":
            resolved_h[config.name] = float(config.h) if config.h is not None else float("nan")
        elif config.h_policy == "select":
            resolved_h[config.name] = resolve_bandwidth(spec, config, grid, h_grid=h_grid,
                                                        pilot_cache=pilot_cache)
        if config.kind == "vanilla" and config.name in resolved_h:
            vanilla_h = resolved_h[config.name]
    for config in estimators:
        if config.h_policy == "share-vanilla":
            if vanilla_h is None:
                raise DomainError("share-vanilla policy needs a vanilla estimator with a resolved h")
            resolved_h[config.name] = vanilla_h

    reports = []
    for config in estimators:
        h = resolved_h[config.name]
        tasks = [(spec, config, grid, h, rep) for rep in range(R)]
        rows = [None] * R
        fallbacks = [0] * R
        notes = []
        if threads and threads > 1:
            with ProcessPoolExecutor(max_workers=threads) as pool:
                for rep, values, n_fb, err in pool.map(_replication_task, tasks, chunksize=8):
                    rows[rep] = values
                    fallbacks[rep] = n_fb
                    if err:
                        notes.append(err)
        else:
            for t in tasks:
                rep, values, n_fb, err = _replication_task(t)
                rows[rep] = values
                fallbacks[rep] = n_fb
                if err:
                    notes.append(err)
        valid = [r for r in rows if r is not None]
        n_failed = R - len(valid)
        if not valid:
            raise EstimationError(f"estimator {config.name} failed on every replication")
        base = metrics_from_estimates(np.vstack(valid), truth)
        reports.append(MonteCarloReport(
            config=config.describe(),
            grid=grid,
            truth=truth,
            bias_j=base.bias_j,
            var_j=base.var_j,
            mse_j=base.mse_j,
            B2=base.B2,
            V=base.V,
            MSE=base.MSE,
            R=len(valid),
            J=J,
            h_used=h,
            n_failed_replications=n_failed,
            n_fallback_points=int(np.sum(fallbacks)),
            flagged=n_failed > 0.1 * R,
            notes=tuple(notes[:20]),
        ))
    return reports


def auxiliary_samples(spec: ExampleSpec, count: int = 10):
    """Independent samples on the auxiliary stream, for gamma selection."""
    return [generate_example(spec, rep=i, stream=STREAM_AUX) for i in range(count)]
