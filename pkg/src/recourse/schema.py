"""Feature space definition, mutability semantics, and dataset ingestion.

A schema document declares, per feature: its name, whether its states are
ordered, the integer-coded domain, and how it may move (mutable,
increase_only, decrease_only, immutable). Continuous features must arrive
pre-discretized to integer codes; optional bin edges in the document are
documentation only. Feasibility of a transition is always judged against
the user's original state, never against an intermediate candidate.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

import yaml

KINDS = ("ordered", "unordered")
MUTABILITIES = ("mutable", "increase_only", "decrease_only", "immutable")


class SchemaError(ValueError):
    """Raised when a schema document or dataset violates the schema contract."""


@dataclass(frozen=True)
class FeatureSpec:
    """One feature: its coded domain, ordering, and mutability."""

    name: str
    kind: str
    domain: tuple[int, ...]
    mutability: str = "mutable"

    def __post_init__(self):
        if self.kind not in KINDS:
            raise SchemaError(f"feature {self.name!r}: unknown kind {self.kind!r}")
        if self.mutability not in MUTABILITIES:
            raise SchemaError(
                f"feature {self.name!r}: unknown mutability {self.mutability!r}"
            )
        if len(self.domain) == 0:
            raise SchemaError(f"feature {self.name!r}: empty domain")
        if len(set(self.domain)) != len(self.domain):
            raise SchemaError(f"feature {self.name!r}: duplicate domain values")
        if self.kind == "ordered" and list(self.domain) != sorted(self.domain):
            raise SchemaError(
                f"feature {self.name!r}: ordered domain must be strictly increasing"
            )
        if self.kind == "unordered" and self.mutability in (
            "increase_only",
            "decrease_only",
        ):
            raise SchemaError(
                f"feature {self.name!r}: {self.mutability} requires an ordered domain"
            )
        object.__setattr__(self, "_index", {v: i for i, v in enumerate(self.domain)})

    @property
    def size(self) -> int:
        return len(self.domain)

    def index_of(self, value: int) -> int:
        try:
            return self._index[value]
        except KeyError:
            raise SchemaError(
                f"value {value} not in domain of feature {self.name!r}"
            ) from None

    def __contains__(self, value: int) -> bool:
        return value in self._index


@dataclass(frozen=True)
class DatasetSchema:
    """Ordered collection of features plus label and fairness metadata."""

    features: tuple[FeatureSpec, ...]
    desired_class: int = 1
    protected_attributes: tuple[str, ...] = ()

    def __post_init__(self):
        names = [f.name for f in self.features]
        if len(set(names)) != len(names):
            dupes = sorted({n for n in names if names.count(n) > 1})
            raise SchemaError(f"duplicate feature names: {dupes}")
        if self.desired_class not in (0, 1):
            raise SchemaError(f"desired_class must be 0 or 1, got {self.desired_class}")
        for attr in self.protected_attributes:
            if attr not in names:
                raise SchemaError(f"protected attribute {attr!r} is not a feature")
        object.__setattr__(self, "_by_name", {n: i for i, n in enumerate(names)})

    @property
    def names(self) -> tuple[str, ...]:
        return tuple(f.name for f in self.features)

    @property
    def n_features(self) -> int:
        return len(self.features)

    def feature_index(self, name: str) -> int:
        try:
            return self._by_name[name]
        except KeyError:
            raise SchemaError(f"unknown feature {name!r}") from None

    def mutable_indices(self) -> list[int]:
        """Indices of features that may move at all (includes conditional)."""
        return [
            i for i, f in enumerate(self.features) if f.mutability != "immutable"
        ]


@dataclass(frozen=True)
class UserState:
    """One row of the dataset: a value per feature, in schema order."""

    values: tuple[int, ...]

    def __post_init__(self):
        object.__setattr__(self, "values", tuple(int(v) for v in self.values))

    def validate(self, schema: DatasetSchema) -> "UserState":
        if len(self.values) != schema.n_features:
            raise SchemaError(
                f"state has {len(self.values)} values, schema has {schema.n_features}"
            )
        for v, f in zip(self.values, schema.features):
            if v not in f:
                raise SchemaError(
                    f"value {v} not in domain of feature {f.name!r}"
                )
        return self


@dataclass(frozen=True)
class PercentileTable:
    """Per-feature empirical CDF over the training split.

    Entries exist for every domain value of every ordered feature; unordered
    features carry no entries because percentile shifts are never queried
    for them.
    """

    tables: Mapping[str, Mapping[int, float]] = field(default_factory=dict)

    def percentile(self, feature: FeatureSpec, value: int) -> float:
        table = self.tables.get(feature.name)
        if table is None or value not in table:
            raise SchemaError(
                f"no percentile entry for feature {feature.name!r}, value {value}"
            )
        return table[value]


def feasible_values(
    schema: DatasetSchema, feature_index: int, original_value: int
) -> set[int]:
    """All values feature `feature_index` may take, judged from the original state."""
    if not 0 <= feature_index < schema.n_features:
        raise SchemaError(f"invalid feature index {feature_index}")
    f = schema.features[feature_index]
    if original_value not in f:
        raise SchemaError(
            f"value {original_value} not in domain of feature {f.name!r}"
        )
    if f.mutability == "immutable":
        return {original_value}
    if f.mutability == "increase_only":
        return {v for v in f.domain if v >= original_value}
    if f.mutability == "decrease_only":
        return {v for v in f.domain if v <= original_value}
    return set(f.domain)


def build_percentile_table(
    rows: Sequence[UserState], schema: DatasetSchema
) -> PercentileTable:
    """Empirical inclusive CDF P(X <= v) per ordered feature, from `rows`."""
    if not rows:
        raise SchemaError("cannot build percentile table from zero rows")
    n = len(rows)
    tables: dict[str, dict[int, float]] = {}
    for i, f in enumerate(schema.features):
        if f.kind != "ordered":
            continue
        counts = [0] * f.size
        for row in rows:
            counts[f.index_of(row.values[i])] += 1
        running = 0
        cdf: dict[int, float] = {}
        for v, c in zip(f.domain, counts):
            running += c
            cdf[v] = running / n
        tables[f.name] = cdf
    return PercentileTable(tables)


def _parse_domain(raw, name: str) -> tuple[int, ...]:
    if isinstance(raw, dict):
        if set(raw) != {"min", "max"}:
            raise SchemaError(
                f"feature {name!r}: range domain needs exactly min and max"
            )
        lo, hi = int(raw["min"]), int(raw["max"])
        if hi < lo:
            raise SchemaError(f"feature {name!r}: empty range {lo}..{hi}")
        return tuple(range(lo, hi + 1))
    if isinstance(raw, (list, tuple)):
        return tuple(int(v) for v in raw)
    raise SchemaError(f"feature {name!r}: domain must be a list or a min/max range")


def load_schema(path) -> DatasetSchema:
    """Parse and validate a YAML schema document.

    Expected keys: `features` (list of {name, kind, domain, mutability}),
    `desired_class`, `protected_attributes`. A feature may carry a `bins`
    key documenting discretization edges; it is ignored here.
    """
    with open(path, "r", encoding="utf-8") as fh:
        try:
            doc = yaml.safe_load(fh)
        except yaml.YAMLError as exc:
            raise SchemaError(f"cannot parse schema document {path}: {exc}") from exc
    if not isinstance(doc, dict) or "features" not in doc:
        raise SchemaError(f"schema document {path} lacks a 'features' list")
    features = []
    for entry in doc["features"]:
        if "name" not in entry or "domain" not in entry:
            raise SchemaError(f"feature entry missing name or domain: {entry}")
        features.append(
            FeatureSpec(
                name=str(entry["name"]),
                kind=str(entry.get("kind", "ordered")),
                domain=_parse_domain(entry["domain"], str(entry["name"])),
                mutability=str(entry.get("mutability", "mutable")),
            )
        )
    return DatasetSchema(
        features=tuple(features),
        desired_class=int(doc.get("desired_class", 1)),
        protected_attributes=tuple(doc.get("protected_attributes", []) or ()),
    )


def save_schema(schema: DatasetSchema, path) -> None:
    doc = {
        "features": [
            {
                "name": f.name,
                "kind": f.kind,
                "domain": list(f.domain),
                "mutability": f.mutability,
            }
            for f in schema.features
        ],
        "desired_class": schema.desired_class,
        "protected_attributes": list(schema.protected_attributes),
    }
    with open(path, "w", encoding="utf-8") as fh:
        yaml.safe_dump(doc, fh, sort_keys=False)


def load_dataset(path, schema: DatasetSchema) -> list[UserState]:
    """Read a comma-delimited table of integer codes as UserStates.

    The header must list exactly the schema's feature names (any order).
    Rows with out-of-domain values are rejected with their 1-based row index.
    """
    with open(path, "r", encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise SchemaError(f"dataset {path} is empty") from None
        header = [h.strip() for h in header]
        expected = set(schema.names)
        missing = expected - set(header)
        extra = set(header) - expected
        if missing:
            raise SchemaError(f"dataset {path}: missing columns {sorted(missing)}")
        if extra:
            raise SchemaError(f"dataset {path}: unknown columns {sorted(extra)}")
        order = [header.index(n) for n in schema.names]
        rows: list[UserState] = []
        for lineno, cells in enumerate(reader, start=1):
            if not cells:
                continue
            if len(cells) != len(header):
                raise SchemaError(
                    f"dataset {path} row {lineno}: expected {len(header)} cells"
                )
            try:
                values = tuple(int(cells[j]) for j in order)
            except ValueError:
                raise SchemaError(
                    f"dataset {path} row {lineno}: non-integer cell"
                ) from None
            for v, f in zip(values, schema.features):
                if v not in f:
                    raise SchemaError(
                        f"dataset {path} row {lineno}: value {v} outside domain "
                        f"of feature {f.name!r}"
                    )
            rows.append(UserState(values))
    if not rows:
        raise SchemaError(f"dataset {path} has a header but no rows")
    return rows


def save_dataset(rows: Iterable[UserState], schema: DatasetSchema, path) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(schema.names)
        for row in rows:
            writer.writerow(row.values)
