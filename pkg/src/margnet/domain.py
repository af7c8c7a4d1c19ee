"""Discrete domains and dataset encoding.

A Domain is an ordered list of attributes, each either categorical (a fixed
label list) or numeric (equal-width bins over a declared [min, max] range).
Encoded datasets are integer matrices whose column i takes values in
[0, cardinality_i). Attribute order is fixed by the domain and determines how
marginals are flattened everywhere else in the package.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field

import numpy as np

from .errors import (
    DegenerateRange,
    MissingColumn,
    NotPositiveDefinite,
    ParseError,
    UnknownCategory,
)

RARE_LABEL = "__other__"


@dataclass
class AttributeMeta:
    name: str
    kind: str  # "categorical" | "numeric"
    cardinality: int
    bin_edges: np.ndarray | None = None  # numeric only, length cardinality+1
    category_labels: list[str] | None = None  # categorical only

    def __post_init__(self):
        if self.kind not in ("categorical", "numeric"):
            raise ValueError(f"unknown attribute kind {self.kind!r}")
        if self.cardinality < 1:
            raise ValueError(f"attribute {self.name!r}: cardinality must be >= 1")
        if self.kind == "numeric":
            self.bin_edges = np.asarray(self.bin_edges, dtype=float)
            if self.bin_edges.shape != (self.cardinality + 1,):
                raise ValueError(f"attribute {self.name!r}: need {self.cardinality + 1} bin edges")
            if not np.all(np.diff(self.bin_edges) > 0):
                raise ValueError(f"attribute {self.name!r}: bin edges must be strictly increasing")
        else:
            if self.category_labels is None or len(self.category_labels) != self.cardinality:
                raise ValueError(f"attribute {self.name!r}: need {self.cardinality} category labels")
            if len(set(self.category_labels)) != self.cardinality:
                raise ValueError(f"attribute {self.name!r}: duplicate category labels")


@dataclass
class Domain:
    attributes: list[AttributeMeta]

    @property
    def d(self) -> int:
        return len(self.attributes)

    @property
    def cards(self) -> tuple[int, ...]:
        return tuple(a.cardinality for a in self.attributes)

    @property
    def names(self) -> list[str]:
        return [a.name for a in self.attributes]

    def size(self) -> int:
        return int(np.prod([a.cardinality for a in self.attributes], dtype=object))

    def to_json_dict(self) -> dict:
        attrs = []
        for a in self.attributes:
            if a.kind == "categorical":
                attrs.append({"name": a.name, "type": "categorical", "values": list(a.category_labels)})
            else:
                attrs.append(
                    {
                        "name": a.name,
                        "type": "numeric",
                        "min": float(a.bin_edges[0]),
                        "max": float(a.bin_edges[-1]),
                        "bins": int(a.cardinality),
                    }
                )
        return {"attributes": attrs}

    @classmethod
    def from_json_dict(cls, obj: dict) -> "Domain":
        attrs = []
        for spec in obj["attributes"]:
            if spec["type"] == "categorical":
                labels = [str(v) for v in spec["values"]]
                attrs.append(AttributeMeta(spec["name"], "categorical", len(labels), category_labels=labels))
            elif spec["type"] == "numeric":
                edges = uniform_bin_edges(float(spec["min"]), float(spec["max"]), int(spec["bins"]))
                attrs.append(AttributeMeta(spec["name"], "numeric", int(spec["bins"]), bin_edges=edges))
            else:
                raise ValueError(f"unknown attribute type {spec['type']!r}")
        return cls(attrs)

    @classmethod
    def load(cls, path) -> "Domain":
        with open(path, "r", encoding="utf-8") as f:
            return cls.from_json_dict(json.load(f))

    def save(self, path) -> None:
        with open(path, "w", encoding="utf-8") as f:
            json.dump(self.to_json_dict(), f, indent=2)
            f.write("\n")


@dataclass
class Dataset:
    """Encoded table: integer category indices, one column per attribute."""

    rows: np.ndarray  # (N, d) int64
    cards: tuple[int, ...]

    def __post_init__(self):
        self.rows = np.asarray(self.rows, dtype=np.int64)
        if self.rows.ndim != 2:
            self.rows = self.rows.reshape(-1, len(self.cards))
        if self.rows.shape[1] != len(self.cards):
            raise ValueError("row width does not match the number of attributes")
        if self.rows.size:
            if self.rows.min() < 0:
                raise ValueError("negative category index")
            if np.any(self.rows.max(axis=0) >= np.asarray(self.cards)):
                raise ValueError("category index out of range for its attribute")

    @property
    def n_records(self) -> int:
        return self.rows.shape[0]

    @property
    def d(self) -> int:
        return len(self.cards)


@dataclass
class RawTable:
    """Un-encoded columns (strings or floats), ordered to match a domain."""

    header: list[str]
    columns: list[list] = field(default_factory=list)

    @property
    def n_rows(self) -> int:
        return len(self.columns[0]) if self.columns else 0


def uniform_bin_edges(lo: float, hi: float, k: int) -> np.ndarray:
    """Equal-width bin edges: k bins over [lo, hi], k+1 edges."""
    if not lo < hi:
        raise DegenerateRange(f"need min < max, got [{lo}, {hi}]")
    if k < 1:
        raise ValueError("need at least one bin")
    return np.linspace(lo, hi, k + 1)


def bin_values(values: np.ndarray, edges: np.ndarray) -> np.ndarray:
    """Map values to bin indices; out-of-range values clamp into the edge bins."""
    lo, hi = edges[0], edges[-1]
    k = len(edges) - 1
    idx = np.floor(k * (np.asarray(values, dtype=float) - lo) / (hi - lo)).astype(np.int64)
    return np.clip(idx, 0, k - 1)


def load_csv(path, domain: Domain) -> RawTable:
    """Read a CSV and reorder its columns to the domain's attribute order.

    Extra CSV columns are dropped. Numeric columns are parsed as floats;
    a non-numeric cell in a numeric column is a ParseError.
    """
    with open(path, "r", encoding="utf-8", newline="") as f:
        reader = csv.reader(f)
        try:
            header = next(reader)
        except StopIteration:
            raise MissingColumn(domain.names[0]) from None
        header = [h.strip() for h in header]
        col_idx = {}
        for meta in domain.attributes:
            if meta.name not in header:
                raise MissingColumn(meta.name)
            col_idx[meta.name] = header.index(meta.name)

        columns = [[] for _ in domain.attributes]
        for row_no, row in enumerate(reader):
            if not row:
                continue
            for j, meta in enumerate(domain.attributes):
                k = col_idx[meta.name]
                if k >= len(row):
                    raise ParseError(row_no, meta.name, "<missing cell>")
                cell = row[k].strip()
                if meta.kind == "numeric":
                    try:
                        columns[j].append(float(cell))
                    except ValueError:
                        raise ParseError(row_no, meta.name, cell) from None
                else:
                    columns[j].append(cell)
    return RawTable(header=domain.names, columns=columns)


def write_csv(path, table: RawTable) -> None:
    with open(path, "w", encoding="utf-8", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(table.header)
        n = table.n_rows
        for i in range(n):
            writer.writerow(
                [c[i] if isinstance(c[i], str) else format(c[i], ".10g") for c in table.columns]
            )


def encode(raw: RawTable, domain: Domain) -> Dataset:
    """Encode a raw table into integer category indices."""
    cols = []
    for j, meta in enumerate(domain.attributes):
        col = raw.columns[j]
        if meta.kind == "numeric":
            cols.append(bin_values(np.asarray(col, dtype=float), meta.bin_edges))
        else:
            lookup = {lab: i for i, lab in enumerate(meta.category_labels)}
            rare = lookup.get(RARE_LABEL)
            out = np.empty(len(col), dtype=np.int64)
            for i, v in enumerate(col):
                idx = lookup.get(v, rare)
                if idx is None:
                    raise UnknownCategory(meta.name, v)
                out[i] = idx
            cols.append(out)
    rows = np.stack(cols, axis=1) if cols else np.zeros((0, 0), dtype=np.int64)
    return Dataset(rows=rows, cards=domain.cards)


def decode(synth: Dataset, domain: Domain, seed: int) -> RawTable:
    """Map encoded indices back to labels / real values.

    Numeric bins decode to a uniform random value inside the bin. Values are
    nudged to the bin midpoint in the rare float-rounding case where the drawn
    value would re-encode into the neighbouring bin, so encode(decode(ds)) == ds.
    """
    rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence(seed)))
    columns = []
    for j, meta in enumerate(domain.attributes):
        idx = synth.rows[:, j]
        if meta.kind == "categorical":
            labels = meta.category_labels
            columns.append([labels[i] for i in idx])
        else:
            lo = meta.bin_edges[idx]
            hi = meta.bin_edges[idx + 1]
            vals = lo + rng.random(len(idx)) * (hi - lo)
            bad = bin_values(vals, meta.bin_edges) != idx
            if np.any(bad):
                vals[bad] = (lo[bad] + hi[bad]) / 2.0
            columns.append(list(vals))
    return RawTable(header=domain.names, columns=columns)


def rare_category_filter(raw: RawTable, attr: int, min_count: int, meta: AttributeMeta) -> AttributeMeta:
    """Merge categories rarer than min_count into a single reserved bucket.

    Surviving labels keep their original order; the bucket label goes last.
    No-op (returns an equivalent meta) when nothing is rare.
    """
    if meta.kind != "categorical":
        raise ValueError(f"attribute {meta.name!r} is not categorical")
    col = raw.columns[attr]
    counts = {lab: 0 for lab in meta.category_labels}
    for v in col:
        if v in counts:
            counts[v] += 1
    kept = [lab for lab in meta.category_labels if counts[lab] >= min_count]
    if len(kept) == len(meta.category_labels):
        return AttributeMeta(meta.name, "categorical", meta.cardinality, category_labels=list(meta.category_labels))
    labels = kept + [RARE_LABEL]
    return AttributeMeta(meta.name, "categorical", len(labels), category_labels=labels)


def gen_gaussian_dataset(dims: int, n_rows: int, corr: float, seed: int) -> RawTable:
    """Sample an equicorrelated zero-mean multivariate normal table.

    The covariance has 1 on the diagonal and `corr` everywhere else; it is
    positive definite only for corr in (-1/(dims-1), 1).
    """
    if dims < 1:
        raise ValueError("dims must be >= 1")
    lo = -1.0 / (dims - 1) if dims > 1 else -1.0
    if not (lo < corr < 1.0):
        raise NotPositiveDefinite(f"equicorrelation {corr} outside ({lo:.4g}, 1) for d={dims}")
    cov = np.full((dims, dims), corr, dtype=float)
    np.fill_diagonal(cov, 1.0)
    chol = np.linalg.cholesky(cov)
    rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence(seed)))
    z = rng.standard_normal((n_rows, dims))
    data = z @ chol.T
    header = [f"x{i}" for i in range(dims)]
    return RawTable(header=header, columns=[list(data[:, j]) for j in range(dims)])


def auto_numeric_domain(table: RawTable, bins: int = 10, pad: float = 0.01) -> Domain:
    """Build an all-numeric domain from a table, padding min/max by a fraction."""
    attrs = []
    for name, col in zip(table.header, table.columns):
        arr = np.asarray(col, dtype=float)
        lo, hi = float(arr.min()), float(arr.max())
        span = hi - lo
        if span <= 0:
            lo, hi = lo - 0.5, hi + 0.5
            span = hi - lo
        lo -= pad * span
        hi += pad * span
        attrs.append(AttributeMeta(name, "numeric", bins, bin_edges=uniform_bin_edges(lo, hi, bins)))
    return Domain(attrs)
