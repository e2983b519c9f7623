"""Degree statistics, geometric bucketing, degree-configuration enumeration,
and relation partitioning.

A tuple's signature assigns a bucket to every attribute subset of its
relation's schema; grouping by signature partitions the relation.  A realized
configuration picks one nonempty fragment per relation, and the join
decomposes over configurations.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass
from typing import Iterator

from .relational import (
    DegreeJoinError,
    QueryHypergraph,
    Relation,
    mask_iter,
    mask_size,
    submasks,
)


def bucket_of(d: int, L: int) -> int:
    """Bucket index l with L**l <= d < L**(l+1)."""
    if d < 1:
        raise DegreeJoinError(f"degree must be >= 1, got {d}")
    if L < 2:
        raise DegreeJoinError(f"bucket range parameter must be >= 2, got {L}")
    l = 0
    bound = L
    while d >= bound:
        bound *= L
        l += 1
    return l


def bucket_range(l: int, L: int) -> tuple[int, int]:
    return L**l, L ** (l + 1)


@dataclass(frozen=True)
class DegreeStats:
    """Exact degree information for one relation (or fragment).

    tables[A][v] is the number of tuples whose projection on attribute set A
    equals v; max_deg[A] is its maximum over v.  pair_max[(A, B)], for
    A <= B <= schema, is the maximum number of distinct B-projections that
    share one A-projection, i.e. the max degree of an A-value inside the
    projection of the relation onto B.  proj_size[B] = |pi_B(R)|.
    """

    relation: str
    mask: int
    size: int
    tables: dict[int, dict[tuple, int]]
    max_deg: dict[int, int]
    proj_size: dict[int, int]
    pair_max: dict[tuple[int, int], int]


def compute_degrees(rel: Relation) -> DegreeStats:
    if mask_size(rel.mask) > 32:
        raise DegreeJoinError("relations over more than 32 attributes are unsupported")
    tables: dict[int, dict[tuple, int]] = {}
    max_deg: dict[int, int] = {}
    proj_size: dict[int, int] = {}
    pair_max: dict[tuple[int, int], int] = {}
    for b in submasks(rel.mask):
        bcols = rel.columns_for(b)
        brows = {tuple(r[c] for c in bcols) for r in rel.rows}
        proj_size[b] = len(brows) if rel.rows else 0
        # degrees of every A-subset within the projection onto b
        bschema = tuple(mask_iter(b))
        pos = {a: i for i, a in enumerate(bschema)}
        for a in submasks(b):
            acols = tuple(pos[x] for x in mask_iter(a))
            counts: dict[tuple, int] = {}
            for row in brows:
                key = tuple(row[c] for c in acols)
                counts[key] = counts.get(key, 0) + 1
            pair_max[(a, b)] = max(counts.values()) if counts else 0
            if b == rel.mask:
                tables[a] = counts
                max_deg[a] = pair_max[(a, b)]
    return DegreeStats(
        relation=rel.name,
        mask=rel.mask,
        size=len(rel),
        tables=tables,
        max_deg=max_deg,
        proj_size=proj_size,
        pair_max=pair_max,
    )


Signature = tuple[tuple[int, int], ...]  # ((attr subset mask, bucket index), ...)


def tuple_signature(row: tuple[int, ...], rel: Relation, stats: DegreeStats, L: int) -> Signature:
    """Bucket of deg(pi_A(row), R, A) for every A in the schema's subsets."""
    sig = []
    pos = {a: i for i, a in enumerate(rel.schema)}
    for a in submasks(rel.mask):
        key = tuple(row[pos[x]] for x in mask_iter(a))
        sig.append((a, bucket_of(stats.tables[a][key], L)))
    sig.sort()
    return tuple(sig)


@dataclass(frozen=True)
class RelationFragment:
    """One degree-homogeneous part R(c) of a relation, with recomputed stats."""

    source: str
    signature: Signature
    relation: Relation
    stats: DegreeStats

    def bucket(self, mask: int) -> int:
        for m, b in self.signature:
            if m == mask:
                return b
        raise KeyError(mask)


@dataclass(frozen=True)
class ConfigView:
    """One realized degree configuration: a fragment choice per relation."""

    index: int
    fragments: tuple[RelationFragment, ...]

    def relations(self) -> tuple[Relation, ...]:
        return tuple(f.relation for f in self.fragments)


@dataclass
class PartitionedQuery:
    query: QueryHypergraph
    L: int
    fragments: list[list[RelationFragment]]  # parallel to query.relations
    base_stats: list[DegreeStats]

    @property
    def config_count(self) -> int:
        n = 1
        for frags in self.fragments:
            n *= len(frags)
        return n

    def configs(self) -> Iterator[ConfigView]:
        ranges = [range(len(f)) for f in self.fragments]
        for idx, combo in enumerate(itertools.product(*ranges)):
            yield ConfigView(
                index=idx,
                fragments=tuple(self.fragments[i][j] for i, j in enumerate(combo)),
            )


def partition_relation(rel: Relation, stats: DegreeStats, L: int) -> list[RelationFragment]:
    groups: dict[Signature, list[tuple[int, ...]]] = {}
    for row in rel.rows:
        groups.setdefault(tuple_signature(row, rel, stats, L), []).append(row)
    frags = []
    for sig in sorted(groups):
        part = Relation(rel.name, rel.schema, groups[sig])
        frags.append(
            RelationFragment(
                source=rel.name,
                signature=sig,
                relation=part,
                stats=compute_degrees(part),
            )
        )
    return frags


def partition_catalog(q: QueryHypergraph, L: int = 2) -> PartitionedQuery:
    """Degree-uniformize every relation of the query at bucket range L.

    Realized configurations are the cross product of per-relation nonempty
    fragments; empty parts are never materialized.
    """
    base_stats = [compute_degrees(r) for r in q.relations]
    fragments = [
        partition_relation(r, s, L) for r, s in zip(q.relations, base_stats)
    ]
    return PartitionedQuery(query=q, L=L, fragments=fragments, base_stats=base_stats)


def validate_partition(pq: PartitionedQuery) -> list[str]:
    """Check the degree inequality bucketing guarantees on every fragment.

    For c(R,A)=B_i and c(R,A')=B_j with A' <= A < attr(R), every A'-value in
    pi_A(R(c)) must have degree at most L**(j+1-i) there.  Returns a list of
    human-readable violations; empty means the partition is sound.
    """
    L = pq.L
    problems = []
    for frags in pq.fragments:
        for frag in frags:
            buckets = dict(frag.signature)
            for a_big in submasks(frag.relation.mask):
                if a_big == frag.relation.mask:
                    continue
                i = buckets[a_big]
                for a_small in submasks(a_big):
                    j = buckets[a_small]
                    limit = L ** (j + 1 - i)
                    got = frag.stats.pair_max[(a_small, a_big)]
                    if got > limit:
                        problems.append(
                            f"{frag.source}{frag.signature}: deg bound for "
                            f"A'={a_small:b} within A={a_big:b}: {got} > {limit}"
                        )
    return problems


def fragment_union_check(pq: PartitionedQuery) -> bool:
    """Fragments of each relation must partition it exactly."""
    for rel, frags in zip(pq.query.relations, pq.fragments):
        seen: set[tuple[int, ...]] = set()
        total = 0
        for f in frags:
            total += len(f.relation)
            before = len(seen)
            seen.update(f.relation.rows)
            if len(seen) != before + len(f.relation):
                return False
        if total != len(rel) or seen != set(rel.rows):
            return False
    return True
