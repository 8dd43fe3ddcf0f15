"""Seeded Monte Carlo study of ICC estimators on discretised latent data.

Every replicate draws from its own PCG64 stream seeded by
``SeedSequence([seed, replicate_index, bump])``, so replicates can be run in
any order or process and still reproduce exactly. ``bump`` increases only when
a draw yields fewer than two categories.
"""
from __future__ import annotations

import csv
import io
import math
import numbers
import os
import statistics
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, fields
from typing import Iterable, Optional, Sequence

import numpy as np

from .analysis import Analysis, analyze
from .exceptions import DegenerateOutcomeError, InvalidInputError
from .likelihood import QuadratureRule
from .model_core import ERROR_FAMILIES, CutpointLattice, OrdinalDataset, canonicalize, discretize

__all__ = [
    "ESTIMATORS",
    "SimConfig",
    "ReplicateResult",
    "EstimatorSummary",
    "SimSummary",
    "generate_latent",
    "generate_dataset",
    "run_replicate",
    "run_simulation",
    "summarize",
]

ESTIMATORS = ("probit", "logistic", "naive")
MAX_REGENERATIONS = 100


def _is_int(value) -> bool:
    if isinstance(value, bool):
        return False
    return isinstance(value, numbers.Integral) or (isinstance(value, float) and value.is_integer())


@dataclass(frozen=True)
class SimConfig:
    """One simulation scenario.

    ``sigma_b_star_sq`` defaults to 4 (single) or 2 (nested). Logistic errors
    have variance ``error_variance`` unless ``logistic_scale`` overrides the
    scale parameter directly.
    """

    design: str = "single"
    error_family: str = "normal"
    n_subjects: int = 35
    n_ears: int = 2
    n_obs: int = 5
    beta_star: float = 1.0
    sigma_b_star_sq: Optional[float] = None
    sigma_c_star_sq: float = 2.0
    error_variance: float = 1.0
    logistic_scale: Optional[float] = None
    lattice_anchor: float = 0.0
    lattice_spacing: float = 2.0
    n_replicates: int = 1000
    ci_level: float = 0.95
    seed: int = 20240101
    quad_nodes: Optional[int] = None
    estimators: tuple = ESTIMATORS

    def __post_init__(self):
        if self.design not in ("single", "nested"):
            raise InvalidInputError("design: must be 'single' or 'nested'")
        if self.error_family not in ERROR_FAMILIES:
            raise InvalidInputError(f"error_family: must be one of {ERROR_FAMILIES}")
        if self.sigma_b_star_sq is None:
            object.__setattr__(self, "sigma_b_star_sq", 4.0 if self.design == "single" else 2.0)
        object.__setattr__(self, "estimators", tuple(self.estimators))
        for name in ("n_subjects", "n_obs", "n_replicates", "quad_nodes", "n_ears"):
            value = getattr(self, name)
            if name == "quad_nodes" and value is None:
                continue
            if not _is_int(value) or value < 1:
                raise InvalidInputError(f"{name}: must be a positive integer, got {value!r}")
            object.__setattr__(self, name, int(value))
        for name in ("sigma_b_star_sq", "sigma_c_star_sq", "error_variance", "beta_star", "lattice_anchor",
                     "lattice_spacing", "ci_level") + (("logistic_scale",) if self.logistic_scale is not None else ()):
            value = getattr(self, name)
            if isinstance(value, bool) or not isinstance(value, numbers.Real) or not math.isfinite(value):
                raise InvalidInputError(f"{name}: must be a finite number, got {value!r}")
        for name in ("sigma_b_star_sq", "sigma_c_star_sq", "error_variance"):
            if not getattr(self, name) >= 0:
                raise InvalidInputError(f"{name}: must be >= 0")
        if self.logistic_scale is not None and not self.logistic_scale >= 0:
            raise InvalidInputError("logistic_scale: must be >= 0")
        if not 0 < self.ci_level < 1:
            raise InvalidInputError("ci_level: must be in (0, 1)")
        if not self.lattice_spacing > 0:
            raise InvalidInputError("lattice_spacing: must be > 0")
        if not _is_int(self.seed) or self.seed < 0:
            raise InvalidInputError("seed: must be a non-negative integer")
        object.__setattr__(self, "seed", int(self.seed))
        unknown = set(self.estimators) - set(ESTIMATORS)
        if unknown or not self.estimators:
            raise InvalidInputError(f"estimators: choose from {ESTIMATORS}")
        between = self.sigma_b_star_sq + (self.sigma_c_star_sq if self.design == "nested" else 0.0)
        # noiseless (ICC 1) and effect-free (ICC 0) designs are allowed for generation
        if not between + self.latent_error_variance > 0:
            raise InvalidInputError("sigma_b_star_sq: true ICC undefined when every variance is zero")

    @classmethod
    def from_mapping(cls, mapping) -> "SimConfig":
        """Build from a JSON-style dict; unknown keys raise :class:`InvalidInputError`."""
        known = {f.name for f in fields(cls)}
        extra = sorted(set(mapping) - known)
        if extra:
            raise InvalidInputError(f"{extra[0]}: unknown configuration field")
        kwargs = dict(mapping)
        if "estimators" in kwargs:
            kwargs["estimators"] = tuple(kwargs["estimators"])
        try:
            return cls(**kwargs)
        except InvalidInputError:
            raise
        except (TypeError, ValueError) as exc:
            raise InvalidInputError(f"invalid configuration value: {exc}") from exc

    def to_mapping(self) -> dict:
        out = asdict(self)
        out["estimators"] = list(self.estimators)
        return out

    @property
    def lattice(self) -> CutpointLattice:
        return CutpointLattice(self.lattice_anchor, self.lattice_spacing)

    @property
    def scale(self) -> float:
        """Scale parameter of the error distribution."""
        if self.error_family == "logistic":
            if self.logistic_scale is not None:
                return self.logistic_scale
            return math.sqrt(3.0 * self.error_variance) / math.pi
        return math.sqrt(self.error_variance)

    @property
    def latent_error_variance(self) -> float:
        if self.error_family == "logistic":
            return (self.scale * math.pi) ** 2 / 3.0
        return self.error_variance

    @property
    def true_icc(self) -> float:
        between = self.sigma_b_star_sq + (self.sigma_c_star_sq if self.design == "nested" else 0.0)
        return between / (between + self.latent_error_variance)


@dataclass(frozen=True)
class LatentDraw:
    x: np.ndarray
    b: np.ndarray
    c: Optional[np.ndarray]
    eps: np.ndarray
    y_star: np.ndarray
    subject: np.ndarray
    ear: Optional[np.ndarray]


def _rng(seed, replicate_index, bump=0):
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence([seed, replicate_index, bump])))


def generate_latent(config: SimConfig, replicate_index: int, bump: int = 0) -> LatentDraw:
    """Draw covariates, random effects, errors and the latent outcome.

    Normals use numpy's ziggurat sampler; logistic errors use the inverse CDF
    of uniforms. Draw order: X, subject effects, ear effects, errors.
    """
    rng = _rng(config.seed, replicate_index, bump)
    S, J = config.n_subjects, config.n_obs
    if config.design == "nested":
        E = config.n_ears
        n = S * E * J
        subject = np.repeat(np.arange(1, S + 1), E * J)
        ear = np.tile(np.repeat(np.arange(1, E + 1), J), S)
    else:
        E = None
        n = S * J
        subject = np.repeat(np.arange(1, S + 1), J)
        ear = None
    x = rng.standard_normal(n)
    b = rng.standard_normal(S) * math.sqrt(config.sigma_b_star_sq)
    c = None
    if E is not None:
        c = rng.standard_normal(S * E) * math.sqrt(config.sigma_c_star_sq)
    if config.error_family == "normal":
        eps = rng.standard_normal(n) * config.scale
    else:
        u = rng.random(n)
        eps = config.scale * (np.log(u) - np.log1p(-u))
    y_star = config.beta_star * x + b[subject - 1] + eps
    if c is not None:
        y_star = y_star + c[(subject - 1) * E + ear - 1]
    return LatentDraw(x, b, c, eps, y_star, subject, ear)


def _generate(config: SimConfig, replicate_index: int):
    for bump in range(MAX_REGENERATIONS):
        draw = generate_latent(config, replicate_index, bump)
        cells = discretize(draw.y_star, config.lattice)
        if np.unique(cells).size < 2:
            continue
        ears = None
        if draw.ear is not None:
            ears = list(zip(draw.subject.tolist(), draw.ear.tolist()))
        measurement = np.tile(np.arange(1, config.n_obs + 1), len(draw.y_star) // config.n_obs)
        data = canonicalize(cells, draw.x[:, None], draw.subject.tolist(), ear_ids=ears,
                            measurement=measurement.tolist(), nesting=config.design, covariate_names=("x1",))
        return data, bump
    raise DegenerateOutcomeError(f"replicate {replicate_index}: no draw with >= 2 categories")


def generate_dataset(config: SimConfig, replicate_index: int) -> OrdinalDataset:
    """Simulated, discretised and canonicalised dataset for one replicate."""
    return _generate(config, replicate_index)[0]


@dataclass(frozen=True)
class ReplicateResult:
    replicate: int
    n_categories: int
    regenerations: int
    analyses: tuple  # of Analysis, in config.estimators order

    def get(self, estimator: str) -> Analysis:
        for a in self.analyses:
            if a.estimator == estimator:
                return a
        raise KeyError(estimator)


def run_replicate(config: SimConfig, replicate_index: int) -> ReplicateResult:
    """Generate one dataset and apply every configured estimator to it."""
    data, bumps = _generate(config, replicate_index)
    rule = None if config.quad_nodes is None else QuadratureRule(config.quad_nodes)
    analyses = tuple(analyze(data, est, config.ci_level, rule=rule) for est in config.estimators)
    return ReplicateResult(replicate_index, data.n_categories, bumps, analyses)


@dataclass(frozen=True)
class EstimatorSummary:
    estimator: str
    n_estimates: int
    bias: Optional[float]
    sd: Optional[float]
    coverage: Optional[float]
    n_ci_unavailable: int
    n_nonconverged: int
    n_failed: int


@dataclass(frozen=True)
class SimSummary:
    config: SimConfig
    true_icc: float
    rows: tuple  # of EstimatorSummary
    n_regenerated: int = 0

    def row(self, estimator: str) -> EstimatorSummary:
        for r in self.rows:
            if r.estimator == estimator:
                return r
        raise KeyError(estimator)

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(SUMMARY_COLUMNS)
        for r in self.rows:
            writer.writerow([
                self.config.design, self.config.error_family, r.estimator,
                _fmt(r.bias), _fmt(r.sd), _fmt(r.coverage),
                r.n_ci_unavailable, r.n_nonconverged, self.config.seed,
            ])
        return buf.getvalue()


SUMMARY_COLUMNS = ("design", "error_family", "estimator", "bias", "sd", "coverage",
                   "n_ci_unavailable", "n_nonconverged", "seed")
REPLICATE_COLUMNS = ("replicate", "estimator", "n_categories", "icc", "ci_lower", "ci_upper", "ci_method",
                     "degenerate", "converged", "note")


def _fmt(x) -> str:
    if x is None or (isinstance(x, float) and not math.isfinite(x)):
        return "NA"
    return repr(float(x))


def summarize(results: Sequence[ReplicateResult], true_icc: float, config: Optional[SimConfig] = None) -> SimSummary:
    """Bias, empirical SD and coverage per estimator.

    Coverage counts only replicates whose interval could be formed; SD is
    ``None`` with fewer than two estimates.
    """
    if not results:
        raise InvalidInputError("no replicate results to summarise")
    estimators = [a.estimator for a in results[0].analyses]
    rows = []
    for est in estimators:
        values, hits = [], []
        n_unavail = n_nonconv = n_failed = 0
        for res in results:
            a = res.get(est)
            if a.icc is None:
                n_failed += 1
                n_unavail += 1
                continue
            if not a.converged:
                n_nonconv += 1
            values.append(a.icc.value)
            covered = a.icc.covers(true_icc)
            if covered is None:
                n_unavail += 1
            else:
                hits.append(covered)
        arr = np.array(values)
        rows.append(EstimatorSummary(
            estimator=est,
            n_estimates=arr.size,
            bias=float(arr.mean() - true_icc) if arr.size else None,
            sd=statistics.stdev(values) if arr.size > 1 else None,
            coverage=float(np.mean(hits)) if hits else None,
            n_ci_unavailable=n_unavail,
            n_nonconverged=n_nonconv,
            n_failed=n_failed,
        ))
    regenerated = sum(1 for r in results if r.regenerations)
    return SimSummary(config, true_icc, tuple(rows), regenerated)


def _run_one(args):
    config, index = args
    return run_replicate(config, index)


def default_threads() -> int:
    env = os.environ.get("ORDICC_THREADS")
    if env:
        try:
            return max(1, int(env))
        except ValueError:
            pass
    return 1


def run_simulation(config: SimConfig, threads: Optional[int] = None, replicates: Optional[Iterable[int]] = None,
                   progress=None):
    """Run every replicate and summarise.

    Replicates are distributed over ``threads`` worker processes and merged
    in index order, so the output does not depend on the worker count.

    Returns
    -------
    (SimSummary, list of ReplicateResult)
    """
    threads = default_threads() if threads is None else max(1, int(threads))
    indices = list(range(config.n_replicates)) if replicates is None else list(replicates)
    tasks = [(config, i) for i in indices]
    if threads == 1:
        results = []
        for t in tasks:
            results.append(_run_one(t))
            if progress is not None:
                progress(len(results), len(tasks))
    else:
        with ProcessPoolExecutor(max_workers=threads) as pool:
            results = []
            for res in pool.map(_run_one, tasks, chunksize=max(1, len(tasks) // (4 * threads))):
                results.append(res)
                if progress is not None:
                    progress(len(results), len(tasks))
    results.sort(key=lambda r: r.replicate)
    return summarize(results, config.true_icc, config), results


def replicates_to_csv(results: Sequence[ReplicateResult]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(REPLICATE_COLUMNS)
    for res in results:
        for a in res.analyses:
            icc = a.icc
            if icc is None:
                writer.writerow([res.replicate, a.estimator, res.n_categories, "NA", "NA", "NA", "NA", "NA",
                                 "false", a.error])
                continue
            lo, hi = icc.ci if icc.ci is not None else (None, None)
            writer.writerow([res.replicate, a.estimator, res.n_categories, _fmt(icc.value), _fmt(lo), _fmt(hi),
                             icc.ci_method or "NA", str(icc.degenerate).lower(), str(a.converged).lower(), icc.note])
    return buf.getvalue()
