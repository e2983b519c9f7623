"""Relational data model: catalogs, relations over interned symbols, query
hypergraphs, and the brute-force reference join used as a test oracle.

Attribute sets are plain ints used as bitmasks (attribute ids are dense and
capped at 32 per catalog), so subset/union/intersection are single word ops.
"""

from __future__ import annotations

import csv
import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

log = logging.getLogger(__name__)

MAX_ATTRS = 32


class DegreeJoinError(Exception):
    """Base error for this package."""


class CatalogError(DegreeJoinError):
    pass


class QueryError(DegreeJoinError):
    pass


# ---------------------------------------------------------------------------
# Bitmask attribute sets


def mask_of(ids: Iterable[int]) -> int:
    m = 0
    for i in ids:
        m |= 1 << i
    return m


def mask_iter(mask: int) -> Iterable[int]:
    """Yield attribute ids in ascending order."""
    while mask:
        low = mask & -mask
        yield low.bit_length() - 1
        mask ^= low


def mask_size(mask: int) -> int:
    return bin(mask).count("1")


def submasks(mask: int) -> Iterable[int]:
    """All subsets of ``mask`` including 0 and mask itself."""
    sub = mask
    while True:
        yield sub
        if sub == 0:
            return
        sub = (sub - 1) & mask


@dataclass(frozen=True)
class Attribute:
    id: int
    name: str


# ---------------------------------------------------------------------------
# Relations


class Relation:
    """A named set of tuples over a fixed attribute schema.

    Set semantics: duplicates are dropped on construction.  The schema is kept
    sorted by attribute id and rows are stored sorted, so identical content
    always compares and serializes identically.
    """

    __slots__ = ("name", "schema", "rows", "_rowset", "mask")

    def __init__(self, name: str, schema: Sequence[int], rows: Iterable[tuple[int, ...]]):
        schema = tuple(schema)
        if len(set(schema)) != len(schema):
            raise CatalogError(f"relation {name!r}: repeated attribute in schema")
        order = sorted(range(len(schema)), key=lambda i: schema[i])
        sorted_schema = tuple(schema[i] for i in order)
        fixed = []
        for row in rows:
            if len(row) != len(schema):
                raise CatalogError(
                    f"relation {name!r}: row arity {len(row)} != schema arity {len(schema)}"
                )
            fixed.append(tuple(row[i] for i in order))
        self.name = name
        self.schema = sorted_schema
        self._rowset = frozenset(fixed)
        self.rows = tuple(sorted(self._rowset))
        self.mask = mask_of(sorted_schema)

    def __len__(self) -> int:
        return len(self.rows)

    def __contains__(self, row: tuple[int, ...]) -> bool:
        return row in self._rowset

    def __eq__(self, other) -> bool:
        return (
            isinstance(other, Relation)
            and self.schema == other.schema
            and self._rowset == other._rowset
        )

    def __hash__(self):
        return hash((self.schema, self._rowset))

    def __repr__(self):
        return f"Relation({self.name!r}, attrs={list(self.schema)}, n={len(self)})"

    def columns_for(self, mask: int) -> tuple[int, ...]:
        if mask & ~self.mask:
            raise QueryError(f"attrs {bin(mask)} not all in relation {self.name!r}")
        pos = {a: i for i, a in enumerate(self.schema)}
        return tuple(pos[a] for a in mask_iter(mask))


def project(rel: Relation, mask: int) -> Relation:
    """Distinct projection of ``rel`` onto the attributes in ``mask``."""
    if mask == rel.mask:
        return rel
    cols = rel.columns_for(mask)
    rows = {tuple(r[c] for c in cols) for r in rel.rows}
    return Relation(rel.name, tuple(mask_iter(mask)), rows)


def semijoin(rel: Relation, other: Relation) -> Relation:
    """Tuples of ``rel`` whose projection onto the common attributes appears
    in ``other``."""
    common = rel.mask & other.mask
    if common == 0:
        return rel if len(other) else Relation(rel.name, rel.schema, [])
    rcols = rel.columns_for(common)
    keys = {tuple(r[c] for c in other.columns_for(common)) for r in other.rows}
    rows = [r for r in rel.rows if tuple(r[c] for c in rcols) in keys]
    return Relation(rel.name, rel.schema, rows)


def join_pair(a: Relation, b: Relation, name: str = "join") -> Relation:
    """Natural hash join of two relations."""
    common = a.mask & b.mask
    out_schema = tuple(mask_iter(a.mask | b.mask))
    acols = a.columns_for(common)
    bcols = b.columns_for(common)
    build: dict[tuple, list] = {}
    small, large = (a, b) if len(a) <= len(b) else (b, a)
    scols, lcols = (acols, bcols) if small is a else (bcols, acols)
    for row in small.rows:
        build.setdefault(tuple(row[c] for c in scols), []).append(row)
    bpos_new = [i for i, attr in enumerate(large.schema) if not (1 << attr) & small.mask]
    new_attrs = [attr for attr in large.schema if not (1 << attr) & small.mask]
    merged_schema = tuple(small.schema) + tuple(new_attrs)
    rows = []
    for row in large.rows:
        key = tuple(row[c] for c in lcols)
        for match in build.get(key, ()):
            rows.append(match + tuple(row[c] for c in bpos_new))
    return Relation(name, merged_schema, rows)


def relation_union(rels: Sequence[Relation], name: str = "union") -> Relation:
    if not rels:
        raise QueryError("union of no relations")
    mask = rels[0].mask
    rows: set[tuple[int, ...]] = set()
    for r in rels:
        if r.mask != mask:
            raise QueryError("union over mismatched schemas")
        rows.update(r.rows)
    return Relation(name, rels[0].schema, rows)


# ---------------------------------------------------------------------------
# Catalog


@dataclass
class Catalog:
    attributes: list[str] = field(default_factory=list)
    relations: dict[str, Relation] = field(default_factory=dict)
    symbols: list[str] = field(default_factory=list)
    ingest_stats: dict[str, dict] = field(default_factory=dict)
    manifest_path: str | None = None
    _symbol_ids: dict[str, int] = field(default_factory=dict)

    def attr_id(self, name: str) -> int:
        try:
            return self.attributes.index(name)
        except ValueError:
            raise QueryError(f"unknown attribute {name!r}") from None

    def attr_name(self, attr_id: int) -> str:
        return self.attributes[attr_id]

    def names_for(self, mask: int) -> list[str]:
        return [self.attributes[i] for i in mask_iter(mask)]

    def intern(self, value: str) -> int:
        sym = self._symbol_ids.get(value)
        if sym is None:
            sym = len(self.symbols)
            self.symbols.append(value)
            self._symbol_ids[value] = sym
        return sym

    def add_relation(self, name: str, attr_names: Sequence[str], raw_rows: Iterable[Sequence[str]]) -> Relation:
        if name in self.relations:
            raise CatalogError(f"duplicate relation name {name!r}")
        ids = []
        for a in attr_names:
            if a not in self.attributes:
                if len(self.attributes) >= MAX_ATTRS:
                    raise CatalogError(f"attribute universe exceeds {MAX_ATTRS}")
                self.attributes.append(a)
            ids.append(self.attributes.index(a))
        rows = []
        raw_count = 0
        for row in raw_rows:
            if len(row) != len(ids):
                raise CatalogError(
                    f"relation {name!r}: row {raw_count + 1} has arity {len(row)}, header has {len(ids)}"
                )
            raw_count += 1
            rows.append(tuple(self.intern(v) for v in row))
        rel = Relation(name, ids, rows)
        dropped = raw_count - len(rel)
        if dropped:
            log.info("relation %s: dropped %d duplicate rows at ingestion", name, dropped)
        self.relations[name] = rel
        self.ingest_stats[name] = {
            "rows_read": raw_count,
            "rows_kept": len(rel),
            "duplicates_dropped": dropped,
        }
        return rel


def load_catalog(manifest_path: str | Path) -> Catalog:
    """Load a catalog from a JSON manifest listing relation CSV files."""
    manifest_path = Path(manifest_path)
    if not manifest_path.exists():
        raise CatalogError(f"missing file: {manifest_path}")
    try:
        manifest = json.loads(manifest_path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise CatalogError(f"manifest {manifest_path} is not valid JSON: {exc}") from exc
    if not isinstance(manifest, dict) or "relations" not in manifest:
        raise CatalogError(f'manifest {manifest_path} must be an object with a "relations" list')
    cat = Catalog(manifest_path=str(manifest_path))
    for entry in manifest["relations"]:
        name = entry["name"]
        path = Path(entry["path"])
        if not path.is_absolute():
            path = manifest_path.parent / path
        if not path.exists():
            raise CatalogError(f"missing file: {path} (relation {name!r})")
        with path.open(newline="", encoding="utf-8") as fh:
            reader = csv.reader(fh)
            try:
                header = next(reader)
            except StopIteration:
                raise CatalogError(f"relation {name!r}: empty CSV {path}") from None
            header = [h.strip() for h in header]
            declared = entry.get("schema")
            if declared is not None and list(declared) != header:
                raise CatalogError(
                    f"relation {name!r}: manifest schema {declared} != CSV header {header}"
                )
            cat.add_relation(name, header, ([v.strip() for v in row] for row in reader if row))
    return cat


# ---------------------------------------------------------------------------
# Query hypergraphs


@dataclass(frozen=True)
class QueryHypergraph:
    relations: tuple[Relation, ...]
    attrs_mask: int
    output_mask: int
    connected: bool

    @property
    def attr_count(self) -> int:
        return mask_size(self.attrs_mask)

    def input_size(self) -> int:
        return sum(len(r) for r in self.relations)


def _hypergraph_connected(masks: Sequence[int]) -> bool:
    if not masks:
        return True
    seen = masks[0]
    frontier = True
    remaining = list(masks[1:])
    while frontier:
        frontier = False
        rest = []
        for m in remaining:
            if m & seen or m == 0:
                seen |= m
                frontier = True
            else:
                rest.append(m)
        remaining = rest
    return not remaining


def make_query(relations: Sequence[Relation], output_mask: int | None = None) -> QueryHypergraph:
    attrs = 0
    for r in relations:
        attrs |= r.mask
    if output_mask is None:
        output_mask = attrs
    if output_mask & ~attrs:
        raise QueryError("output attributes not all present in query relations")
    return QueryHypergraph(
        relations=tuple(relations),
        attrs_mask=attrs,
        output_mask=output_mask,
        connected=_hypergraph_connected([r.mask for r in relations]),
    )


def parse_query(text: str, catalog: Catalog) -> QueryHypergraph:
    """Parse a query file: JSON {"relations": [...], "output": [...](optional)}."""
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise QueryError(f"query is not valid JSON: {exc}") from exc
    if not isinstance(doc, dict) or "relations" not in doc:
        raise QueryError('query must be an object with a "relations" list')
    rels = []
    for name in doc["relations"]:
        rel = catalog.relations.get(name)
        if rel is None:
            raise QueryError(f"unknown relation {name!r}")
        rels.append(rel)
    out_mask = None
    if "output" in doc and doc["output"] is not None:
        out_mask = 0
        attrs = mask_of(a for r in rels for a in r.schema)
        for aname in doc["output"]:
            aid = catalog.attr_id(aname)
            if not (1 << aid) & attrs:
                raise QueryError(f"output attribute {aname!r} not in query relations")
            out_mask |= 1 << aid
    return make_query(rels, out_mask)


# ---------------------------------------------------------------------------
# Reference join oracle


def reference_join(q: QueryHypergraph, output_mask: int | None = None) -> Relation:
    """Exact join-project by enumerating the cartesian space attribute by
    attribute with per-relation membership filters.  Oracle use only."""
    out_mask = q.output_mask if output_mask is None else output_mask
    attrs = list(mask_iter(q.attrs_mask))
    candidates: dict[int, list[int]] = {}
    for a in attrs:
        vals: set[int] | None = None
        bit = 1 << a
        for r in q.relations:
            if r.mask & bit:
                col = r.columns_for(bit)[0]
                here = {row[col] for row in r.rows}
                vals = here if vals is None else vals & here
        candidates[a] = sorted(vals or ())

    # relations become checkable once every schema attribute is assigned
    check_at: dict[int, list[Relation]] = {a: [] for a in attrs}
    for r in q.relations:
        if r.mask == 0:
            continue
        last = max(mask_iter(r.mask))
        check_at[last].append(r)

    out_rows: set[tuple[int, ...]] = set()
    assignment: dict[int, int] = {}

    def recurse(i: int) -> None:
        if i == len(attrs):
            out_rows.add(tuple(assignment[a] for a in mask_iter(out_mask)))
            return
        a = attrs[i]
        for v in candidates[a]:
            assignment[a] = v
            ok = True
            for r in check_at[a]:
                t = tuple(assignment[x] for x in r.schema)
                if t not in r:
                    ok = False
                    break
            if ok:
                recurse(i + 1)
        assignment.pop(a, None)

    if any(len(r) == 0 for r in q.relations):
        return Relation("join", tuple(mask_iter(out_mask)), [])
    recurse(0)
    return Relation("join", tuple(mask_iter(out_mask)), out_rows)
