"""Domain types, latent-to-ordinal discretisation and dataset validation."""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .exceptions import DegenerateOutcomeError, InvalidInputError

__all__ = [
    "LatentParams",
    "CutpointLattice",
    "ThresholdSet",
    "OrdinalDataset",
    "Violation",
    "discretize",
    "canonicalize",
    "validate",
]

ERROR_FAMILIES = ("normal", "logistic")
NESTINGS = ("single", "nested")


def _object_array(values) -> np.ndarray:
    values = list(values)
    arr = np.empty(len(values), dtype=object)
    arr[:] = values
    return arr


def _frozen_array(values, dtype=None):
    if dtype is object:
        arr = _object_array(values)
    else:
        arr = np.array(values, dtype=dtype, copy=True)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True)
class LatentParams:
    """Parameters of the latent linear mixed model generating ``Y*``.

    ``sigma_c_star_sq`` is ``None`` for a single level of clustering.
    """

    beta_star: np.ndarray
    sigma_b_star_sq: float
    sigma_eps_star_sq: float
    sigma_c_star_sq: Optional[float] = None
    error_family: str = "normal"

    def __post_init__(self):
        object.__setattr__(self, "beta_star", _frozen_array(np.atleast_1d(self.beta_star), float))
        if not self.sigma_b_star_sq >= 0:
            raise InvalidInputError("sigma_b_star_sq must be >= 0")
        if not self.sigma_eps_star_sq > 0:
            raise InvalidInputError("sigma_eps_star_sq must be > 0")
        if self.sigma_c_star_sq is not None and not self.sigma_c_star_sq >= 0:
            raise InvalidInputError("sigma_c_star_sq must be >= 0")
        if self.error_family not in ERROR_FAMILIES:
            raise InvalidInputError(f"error_family must be one of {ERROR_FAMILIES}")

    @property
    def nesting(self) -> str:
        return "single" if self.sigma_c_star_sq is None else "nested"

    @property
    def adjusted_icc(self) -> float:
        between = self.sigma_b_star_sq + (self.sigma_c_star_sq or 0.0)
        return between / (between + self.sigma_eps_star_sq)


@dataclass(frozen=True)
class CutpointLattice:
    """Evenly spaced, doubly infinite set of cutpoints ``anchor + n * spacing``."""

    anchor: float = 0.0
    spacing: float = 2.0

    def __post_init__(self):
        if not (math.isfinite(self.anchor) and math.isfinite(self.spacing)):
            raise InvalidInputError("lattice anchor and spacing must be finite")
        if not self.spacing > 0:
            raise InvalidInputError("lattice spacing must be > 0")

    def cut(self, n: int) -> float:
        return self.anchor + n * self.spacing


def discretize(y_star, lattice: CutpointLattice = CutpointLattice()):
    """Map latent values to lattice-cell indices.

    Cells are right-closed: index ``n`` holds
    ``anchor + (n-1)*spacing < y_star <= anchor + n*spacing``.

    Parameters
    ----------
    y_star : float or array_like
    lattice : CutpointLattice

    Returns
    -------
    int or ndarray of int
    """
    arr = np.asarray(y_star, dtype=float)
    if not np.all(np.isfinite(arr)):
        raise InvalidInputError("y_star must be finite")
    cells = np.ceil((arr - lattice.anchor) / lattice.spacing).astype(np.int64)
    if cells.ndim == 0:
        return int(cells)
    return cells


@dataclass(frozen=True)
class ThresholdSet:
    """Finite interior thresholds ``xi_1 < ... < xi_{K-1}`` on the working scale."""

    xi: np.ndarray

    def __post_init__(self):
        xi = _frozen_array(np.atleast_1d(self.xi), float)
        if xi.ndim != 1 or xi.size < 1:
            raise InvalidInputError("need at least one threshold")
        if not np.all(np.isfinite(xi)):
            raise InvalidInputError("thresholds must be finite")
        if np.any(np.diff(xi) <= 0):
            raise InvalidInputError("thresholds must be strictly increasing")
        object.__setattr__(self, "xi", xi)

    @property
    def n_categories(self) -> int:
        return self.xi.size + 1

    def extended(self) -> np.ndarray:
        """Thresholds padded with ``-inf`` and ``+inf``."""
        return np.concatenate(([-np.inf], self.xi, [np.inf]))


@dataclass(frozen=True)
class Violation:
    """One broken dataset invariant."""

    field: str
    message: str
    key: object = None


@dataclass(frozen=True)
class OrdinalDataset:
    """Clustered ordinal observations with covariates.

    Arrays are stored read-only. ``category_labels[k-1]`` is the original
    label (e.g. lattice cell) behind canonical code ``k``.
    """

    subject_ids: np.ndarray
    categories: np.ndarray
    covariates: np.ndarray
    n_categories: int
    nesting: str = "single"
    ear_ids: Optional[np.ndarray] = None
    measurement: Optional[np.ndarray] = None
    category_labels: tuple = ()
    covariate_names: tuple = ()

    def __post_init__(self):
        n = len(self.categories)
        object.__setattr__(self, "subject_ids", _frozen_array(self.subject_ids, object))
        object.__setattr__(self, "categories", _frozen_array(self.categories, np.int64))
        cov = np.asarray(self.covariates, dtype=float)
        if cov.ndim == 1:
            cov = cov.reshape(n, -1) if n else cov.reshape(0, 0)
        object.__setattr__(self, "covariates", _frozen_array(cov))
        if self.ear_ids is not None:
            object.__setattr__(self, "ear_ids", _frozen_array(self.ear_ids, object))
        if self.measurement is not None:
            object.__setattr__(self, "measurement", _frozen_array(self.measurement, object))
        if self.nesting not in NESTINGS:
            raise InvalidInputError(f"nesting must be one of {NESTINGS}")
        if len(self.subject_ids) != n or self.covariates.shape[0] != n:
            raise InvalidInputError("subject_ids, categories and covariates differ in length")
        if self.ear_ids is not None and len(self.ear_ids) != n:
            raise InvalidInputError("ear_ids length differs from categories")
        if not self.category_labels:
            object.__setattr__(self, "category_labels", tuple(range(1, self.n_categories + 1)))
        if not self.covariate_names:
            names = tuple(f"x{j + 1}" for j in range(self.covariates.shape[1]))
            object.__setattr__(self, "covariate_names", names)

    @property
    def n_obs(self) -> int:
        return len(self.categories)

    @property
    def n_covariates(self) -> int:
        return self.covariates.shape[1]

    def cluster_keys(self) -> np.ndarray:
        """Key of the innermost cluster of each observation.

        Subject for single-level data without ears, the ``(subject, ear)`` pair
        otherwise.
        """
        if self.ear_ids is None:
            return self.subject_ids
        return _object_array(zip(self.subject_ids, self.ear_ids))

    @property
    def n_clusters(self) -> int:
        """Number of top-level clusters (subjects when nested)."""
        if self.nesting == "nested":
            return len(_unique(self.subject_ids))
        return len(_unique(self.cluster_keys()))

    @property
    def n_ears(self) -> Optional[int]:
        if self.nesting != "nested":
            return None
        return len(_unique(self.cluster_keys()))

    def with_categories(self, categories) -> "OrdinalDataset":
        """Copy of the dataset with replaced category codes (no canonicalisation)."""
        return OrdinalDataset(
            subject_ids=self.subject_ids,
            categories=categories,
            covariates=self.covariates,
            n_categories=self.n_categories,
            nesting=self.nesting,
            ear_ids=self.ear_ids,
            measurement=self.measurement,
            category_labels=self.category_labels,
            covariate_names=self.covariate_names,
        )

    def subset(self, mask) -> "OrdinalDataset":
        """Rows selected by ``mask``, re-canonicalised."""
        mask = np.asarray(mask, dtype=bool)
        labels = _object_array(self.category_labels)[self.categories[mask] - 1]
        return canonicalize(
            labels,
            self.covariates[mask],
            self.subject_ids[mask],
            ear_ids=None if self.ear_ids is None else self.ear_ids[mask],
            measurement=None if self.measurement is None else self.measurement[mask],
            nesting=self.nesting,
            covariate_names=self.covariate_names,
        )


def _unique(values) -> list:
    seen = {}
    for v in values:
        seen.setdefault(v, None)
    return list(seen)


def canonicalize(
    cells: Sequence,
    covariates,
    subject_ids: Sequence,
    ear_ids: Optional[Sequence] = None,
    measurement: Optional[Sequence] = None,
    nesting: Optional[str] = None,
    covariate_names: Sequence[str] = (),
) -> OrdinalDataset:
    """Relabel observed categories to consecutive codes ``1..K``.

    Distinct observed labels are sorted and mapped to ``1..K`` in order; the
    original labels are kept in ``category_labels``.

    Raises
    ------
    DegenerateOutcomeError
        Fewer than two distinct categories were observed.
    """
    cells = list(cells)
    distinct = sorted(set(cells))
    if len(distinct) < 2:
        raise DegenerateOutcomeError(
            f"outcome has {len(distinct)} distinct categor{'y' if len(distinct) == 1 else 'ies'}; need >= 2"
        )
    code_of = {label: k + 1 for k, label in enumerate(distinct)}
    codes = np.array([code_of[c] for c in cells], dtype=np.int64)
    if nesting is None:
        nesting = "single" if ear_ids is None else "nested"
    cov = np.asarray(covariates, dtype=float)
    if cov.ndim == 1:
        cov = cov.reshape(len(cells), -1)
    return OrdinalDataset(
        subject_ids=_object_array(subject_ids),
        categories=codes,
        covariates=cov,
        n_categories=len(distinct),
        nesting=nesting,
        ear_ids=None if ear_ids is None else _object_array(ear_ids),
        measurement=None if measurement is None else _object_array(measurement),
        category_labels=tuple(distinct),
        covariate_names=tuple(covariate_names),
    )


def validate(dataset: OrdinalDataset) -> list:
    """Check every :class:`OrdinalDataset` invariant.

    Returns
    -------
    list of Violation
        Empty when the dataset is valid.
    """
    problems = []
    K = dataset.n_categories
    cats = np.asarray(dataset.categories)
    if K < 2:
        problems.append(Violation("n_categories", f"K={K} < 2"))
    bad = np.flatnonzero((cats < 1) | (cats > K))
    if bad.size:
        problems.append(
            Violation("categories", f"{bad.size} code(s) outside 1..{K}, e.g. row {bad[0]} = {cats[bad[0]]}", int(bad[0]))
        )
    else:
        missing = sorted(set(range(1, K + 1)) - set(cats.tolist()))
        if missing:
            problems.append(Violation("n_categories", f"codes {missing} never observed; canonicalize first", missing))
    cov = dataset.covariates
    if cov.ndim != 2 or cov.shape[0] != dataset.n_obs:
        problems.append(Violation("covariates", "covariates must be an (n_obs, p) matrix"))
    elif not np.all(np.isfinite(cov)):
        problems.append(Violation("covariates", "non-finite covariate values"))
    elif np.linalg.matrix_rank(np.column_stack([np.ones(dataset.n_obs), cov])) < cov.shape[1] + 1:
        # thresholds absorb the intercept; constant or collinear columns are unidentified
        names = ", ".join(dataset.covariate_names) or "covariates"
        problems.append(Violation("covariates", f"{names}: constant or collinear covariate columns"))
    if dataset.nesting == "nested":
        if dataset.ear_ids is None:
            problems.append(Violation("ear_ids", "nested data needs an ear_id for every record"))
        else:
            owner = {}
            flagged = set()
            for row, (subj, ear) in enumerate(zip(dataset.subject_ids, dataset.ear_ids)):
                if ear is None or (isinstance(ear, str) and ear == ""):
                    problems.append(Violation("ear_ids", f"row {row} has no ear_id", row))
                    continue
                prev = owner.setdefault(ear, subj)
                if prev != subj and ear not in flagged:
                    flagged.add(ear)
                    problems.append(
                        Violation("ear_ids", f"ear_id {ear!r} appears under subjects {prev!r} and {subj!r}", ear)
                    )
    return problems
