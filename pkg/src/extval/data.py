"""Row-level samples, moment transformations and external statistics.

An internal sample is mapped row by row onto a vector of transformed
features ``z_i = phi(x_i, y_i)``.  The external side is only known through
the expectation of that same map, which is what :class:`MomentTarget` holds.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

PER_CLASS_MEAN = "perClassMean"
PER_CLASS_SECOND_MOMENT = "perClassSecondMoment"
MARGINAL_MEAN = "marginalMean"
PREVALENCE = "prevalence"

TERM_KINDS = (PER_CLASS_MEAN, PER_CLASS_SECOND_MOMENT, MARGINAL_MEAN, PREVALENCE)


class DataError(ValueError):
    """Malformed input data or statistics."""


@dataclass(frozen=True)
class Sample:
    features: np.ndarray
    outcomes: np.ndarray
    feature_names: tuple[str, ...]

    def __post_init__(self) -> None:
        features = np.array(self.features, dtype=float)
        outcomes = np.asarray(self.outcomes)
        if features.ndim != 2:
            raise DataError(f"features must be a 2-d matrix, got shape {features.shape}")
        n, p = features.shape
        if n < 1 or p < 1:
            raise DataError(f"sample needs at least one row and one feature, got {n}x{p}")
        if outcomes.shape != (n,):
            raise DataError(f"outcomes has shape {outcomes.shape}, expected ({n},)")
        if np.isnan(features).any():
            raise DataError("features contain missing values")
        if not np.isin(outcomes, (0, 1)).all():
            bad = int(np.flatnonzero(~np.isin(outcomes, (0, 1)))[0])
            raise DataError(f"outcome not binary at row {bad + 1}")
        names = tuple(str(name) for name in self.feature_names)
        if len(names) != p:
            raise DataError(f"{len(names)} feature names for {p} columns")
        if len(set(names)) != p:
            raise DataError("feature names must be unique")
        features.setflags(write=False)
        outcomes = outcomes.astype(np.int8)
        outcomes.setflags(write=False)
        object.__setattr__(self, "features", features)
        object.__setattr__(self, "outcomes", outcomes)
        object.__setattr__(self, "feature_names", names)

    @property
    def n(self) -> int:
        return self.features.shape[0]

    @property
    def p(self) -> int:
        return self.features.shape[1]

    def column(self, name: str) -> np.ndarray:
        try:
            j = self.feature_names.index(name)
        except ValueError:
            raise DataError(f"unknown feature {name!r}") from None
        return self.features[:, j]

    def take(self, rows: np.ndarray) -> "Sample":
        """Row subset (or resample, when ``rows`` repeats indices)."""
        return Sample(self.features[rows], self.outcomes[rows], self.feature_names)


@dataclass(frozen=True)
class Term:
    """One component of the transformation: a kind plus optional feature and class."""

    kind: str
    feature: str | None = None
    cls: int | None = None

    def __post_init__(self) -> None:
        if self.kind not in TERM_KINDS:
            raise DataError(f"unknown term kind {self.kind!r}")
        needs_feature = self.kind != PREVALENCE
        needs_class = self.kind in (PER_CLASS_MEAN, PER_CLASS_SECOND_MOMENT)
        if needs_feature and self.feature is None:
            raise DataError(f"{self.kind} term needs a feature")
        if not needs_feature and self.feature is not None:
            raise DataError("prevalence term takes no feature")
        if needs_class and self.cls not in (0, 1):
            raise DataError(f"{self.kind} term needs class 0 or 1, got {self.cls!r}")
        if not needs_class and self.cls is not None:
            raise DataError(f"{self.kind} term takes no class")

    @property
    def label(self) -> str:
        if self.kind == PREVALENCE:
            return PREVALENCE
        if self.cls is None:
            return f"{self.kind}({self.feature})"
        return f"{self.kind}({self.feature},{self.cls})"

    def to_json(self) -> dict:
        return {"kind": self.kind, "feature": self.feature, "class": self.cls}

    @classmethod
    def from_json(cls, obj: dict) -> "Term":
        if not isinstance(obj, dict) or "kind" not in obj:
            raise DataError(f"spec entry must be an object with a 'kind' field, got {obj!r}")
        return cls(obj["kind"], obj.get("feature"), obj.get("class"))


@dataclass(frozen=True)
class TransformSpec:
    terms: tuple[Term, ...]

    def __post_init__(self) -> None:
        terms = tuple(self.terms)
        if len(set(terms)) != len(terms):
            raise DataError("transform spec contains duplicate terms")
        object.__setattr__(self, "terms", terms)

    def __len__(self) -> int:
        return len(self.terms)

    def __iter__(self):
        return iter(self.terms)

    @property
    def labels(self) -> list[str]:
        return [t.label for t in self.terms]

    def validate_against(self, sample: Sample) -> None:
        for term in self.terms:
            if term.feature is not None and term.feature not in sample.feature_names:
                raise DataError(f"unknown feature {term.feature!r} in term {term.label}")

    @classmethod
    def class_moments(cls, feature_names: Iterable[str], second_moments: bool = True) -> "TransformSpec":
        """Per-class means (and optionally second moments) of every feature, plus prevalence."""
        terms: list[Term] = []
        for name in feature_names:
            for c in (1, 0):
                terms.append(Term(PER_CLASS_MEAN, name, c))
            if second_moments:
                for c in (1, 0):
                    terms.append(Term(PER_CLASS_SECOND_MOMENT, name, c))
        terms.append(Term(PREVALENCE))
        return cls(tuple(terms))


@dataclass(frozen=True)
class TransformedMatrix:
    z: np.ndarray
    terms: tuple[Term, ...]

    def __post_init__(self) -> None:
        z = np.array(self.z, dtype=float)
        if z.ndim != 2 or z.shape[1] != len(self.terms):
            raise DataError(f"z has shape {z.shape} but {len(self.terms)} terms")
        z.setflags(write=False)
        object.__setattr__(self, "z", z)
        object.__setattr__(self, "terms", tuple(self.terms))

    @property
    def n(self) -> int:
        return self.z.shape[0]

    @property
    def k(self) -> int:
        return self.z.shape[1]


@dataclass(frozen=True)
class MomentTarget:
    values: np.ndarray
    terms: tuple[Term, ...]
    n_external: int | None = None

    def __post_init__(self) -> None:
        values = np.array(self.values, dtype=float).reshape(-1)
        terms = tuple(self.terms)
        if values.shape[0] != len(terms):
            raise DataError(f"{values.shape[0]} target values for {len(terms)} terms")
        if not np.isfinite(values).all():
            raise DataError("target values must be finite")
        for term, value in zip(terms, values):
            if term.kind == PREVALENCE and not 0.0 <= value <= 1.0:
                raise DataError(f"prevalence target {value} outside [0, 1]")
        if self.n_external is not None and int(self.n_external) < 1:
            raise DataError("nExternal must be a positive integer")
        values.setflags(write=False)
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "terms", terms)

    @property
    def spec(self) -> TransformSpec:
        return TransformSpec(self.terms)

    def to_json(self) -> dict:
        return {
            "spec": [t.to_json() for t in self.terms],
            "values": [float(v) for v in self.values],
            "nExternal": None if self.n_external is None else int(self.n_external),
        }

    @classmethod
    def from_json(cls, obj: dict) -> "MomentTarget":
        for key in ("spec", "values"):
            if key not in obj:
                raise DataError(f"statistics JSON is missing field {key!r}")
        if not isinstance(obj["spec"], list) or not isinstance(obj["values"], list):
            raise DataError("statistics fields 'spec' and 'values' must be lists")
        terms = TransformSpec(tuple(Term.from_json(t) for t in obj["spec"])).terms
        try:
            values = [float(v) for v in obj["values"]]
        except (TypeError, ValueError):
            raise DataError("field 'values' must contain only numbers") from None
        return cls(np.array(values), terms, obj.get("nExternal"))


def apply_transforms(sample: Sample, spec: TransformSpec) -> TransformedMatrix:
    spec.validate_against(sample)
    y = sample.outcomes.astype(float)
    indicator = {1: y, 0: 1.0 - y}
    columns = []
    for term in spec.terms:
        if term.kind == PREVALENCE:
            columns.append(y)
            continue
        x = sample.column(term.feature)
        if term.kind == PER_CLASS_MEAN:
            columns.append(x * indicator[term.cls])
        elif term.kind == PER_CLASS_SECOND_MOMENT:
            columns.append(x * x * indicator[term.cls])
        else:
            columns.append(x.copy())
    z = np.column_stack(columns) if columns else np.empty((sample.n, 0))
    return TransformedMatrix(z, spec.terms)


def stats_from_sample(sample: Sample, spec: TransformSpec) -> MomentTarget:
    z = apply_transforms(sample, spec)
    return MomentTarget(z.z.mean(axis=0), spec.terms, sample.n)


@dataclass(frozen=True)
class ReportedStat:
    """Class-conditional mean and variance of one feature, as published."""

    feature: str
    cls: int
    mean: float
    variance: float


def convert_reported_stats(
    report: Sequence[ReportedStat],
    prevalence: float,
    spec: TransformSpec,
    n_external: int | None = None,
    sample_variance: bool = False,
) -> MomentTarget:
    """Turn per-class means/variances into expectations of the transformed features.

    Variances are read with the population convention.  With
    ``sample_variance=True`` and a known external size, the Bessel correction
    is undone first.  Marginal means are recovered by mixing the two class
    means with the prevalence.
    """
    if not 0.0 < prevalence < 1.0:
        raise DataError(f"prevalence must lie in (0, 1), got {prevalence}")
    if sample_variance and n_external is None:
        raise DataError("sample-variance convention needs nExternal")
    by_key = {(r.feature, int(r.cls)): r for r in report}
    share = {1: prevalence, 0: 1.0 - prevalence}

    def lookup(feature: str, c: int) -> ReportedStat:
        try:
            return by_key[(feature, c)]
        except KeyError:
            raise DataError(f"no reported statistics for feature {feature!r}, class {c}") from None

    values = []
    for term in spec.terms:
        if term.kind == PREVALENCE:
            values.append(prevalence)
        elif term.kind == MARGINAL_MEAN:
            values.append(sum(lookup(term.feature, c).mean * share[c] for c in (0, 1)))
        else:
            r = lookup(term.feature, term.cls)
            if term.kind == PER_CLASS_MEAN:
                values.append(r.mean * share[term.cls])
            else:
                variance = r.variance
                if sample_variance:
                    n_class = n_external * share[term.cls]
                    variance *= (n_class - 1) / n_class
                values.append((r.mean**2 + variance) * share[term.cls])
    return MomentTarget(np.array(values), spec.terms, n_external)


def class_statistics(sample: Sample) -> tuple[list[ReportedStat], float]:
    """Empirical per-class means and population variances, plus prevalence."""
    report = []
    for c in (1, 0):
        rows = sample.outcomes == c
        if not rows.any():
            continue
        sub = sample.features[rows]
        for j, name in enumerate(sample.feature_names):
            report.append(ReportedStat(name, c, float(sub[:, j].mean()), float(sub[:, j].var())))
    return report, float(sample.outcomes.mean())


@dataclass(frozen=True)
class PruneResult:
    z: TransformedMatrix
    target: MomentTarget
    pruned: tuple[Term, ...] = field(default_factory=tuple)
    kept: np.ndarray | None = None


def prune_low_variance_columns(
    z: TransformedMatrix, target: MomentTarget, sd_cutoff: float = 1e-4
) -> PruneResult:
    """Drop transformed columns whose internal standard deviation is below ``sd_cutoff``."""
    if sd_cutoff < 0:
        raise DataError("sdCutoff must be nonnegative")
    if tuple(z.terms) != tuple(target.terms):
        raise DataError("transformed matrix and target are not aligned")
    sd = z.z.std(axis=0, ddof=1 if z.n > 1 else 0)
    keep = sd >= sd_cutoff
    if not keep.any():
        raise DataError("no usable constraints: every column was pruned")
    terms = tuple(t for t, kept in zip(z.terms, keep) if kept)
    pruned = tuple(t for t, kept in zip(z.terms, keep) if not kept)
    return PruneResult(
        TransformedMatrix(z.z[:, keep], terms),
        MomentTarget(target.values[keep], terms, target.n_external),
        pruned,
        np.flatnonzero(keep),
    )


def load_sample_csv(path: str | Path, outcome_column: str) -> Sample:
    path = Path(path)
    if not path.is_file():
        raise DataError(f"file not found: {path}")
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise DataError(f"{path}: empty file, header row expected") from None
        seen = set()
        for name in header:
            if name in seen:
                raise DataError(f"{path}: duplicate header {name!r}")
            seen.add(name)
        if outcome_column not in header:
            raise DataError(f"{path}: outcome column {outcome_column!r} not in header")
        y_col = header.index(outcome_column)
        names = [h for i, h in enumerate(header) if i != y_col]
        rows: list[list[float]] = []
        outcomes: list[int] = []
        for row_no, row in enumerate(reader, start=1):
            if not row:
                continue
            if len(row) != len(header):
                raise DataError(f"{path}: row {row_no} has {len(row)} cells, expected {len(header)}")
            values = []
            for col, cell in enumerate(row):
                try:
                    value = float(cell)
                except ValueError:
                    raise DataError(
                        f"{path}: non-numeric cell {cell!r} at row {row_no}, column {header[col]!r}"
                    ) from None
                if math.isnan(value):
                    raise DataError(f"{path}: missing value at row {row_no}, column {header[col]!r}")
                values.append(value)
            y = values.pop(y_col)
            if y not in (0.0, 1.0):
                raise DataError(f"outcome not binary at row {row_no}")
            outcomes.append(int(y))
            rows.append(values)
    if not rows:
        raise DataError(f"{path}: no data rows")
    return Sample(np.array(rows, dtype=float).reshape(len(rows), len(names)), np.array(outcomes), tuple(names))


def write_sample_csv(sample: Sample, path: str | Path, outcome_column: str = "y") -> None:
    # repr() of a float round-trips exactly
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow([*sample.feature_names, outcome_column])
        for x, y in zip(sample.features, sample.outcomes):
            writer.writerow([repr(float(v)) for v in x] + [int(y)])


def load_stats_json(path: str | Path) -> MomentTarget:
    path = Path(path)
    if not path.is_file():
        raise DataError(f"file not found: {path}")
    try:
        obj = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise DataError(f"{path}: invalid JSON ({exc})") from None
    if not isinstance(obj, dict):
        raise DataError(f"{path}: statistics JSON must be an object")
    return MomentTarget.from_json(obj)


def write_stats_json(target: MomentTarget, path: str | Path) -> None:
    Path(path).write_text(json.dumps(target.to_json(), indent=2) + "\n", encoding="utf-8")
