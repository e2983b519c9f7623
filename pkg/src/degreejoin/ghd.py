"""Hypertree machinery: ear-removal acyclicity test, the semijoin-sweep join
algorithm for acyclic queries, bounded enumeration of generalized hypertree
decompositions, width measures, and decomposition-based join execution that
materializes each bag by walking a tight-constraint chain.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache
from typing import Sequence

from .bounds import RelProfile, mo
from .degrees import PartitionedQuery
from .lp import LinearProgram, solve_lp
from .relational import (
    DegreeJoinError,
    Relation,
    join_pair,
    mask_iter,
    mask_size,
    project,
    relation_union,
    semijoin,
    submasks,
)


class EnumerationRefused(DegreeJoinError):
    """The decomposition search space exceeds the configured caps."""


class OpCounter:
    __slots__ = ("ops",)

    def __init__(self):
        self.ops = 0

    def add(self, n: int) -> None:
        self.ops += n


# ---------------------------------------------------------------------------
# Acyclicity via ear removal


@dataclass(frozen=True)
class JoinTree:
    """Tree over relation indices; ``order`` lists nodes children-first."""

    parent: tuple[int, ...]
    order: tuple[int, ...]

    @property
    def root(self) -> int:
        return self.order[-1]


def gyo_acyclic(masks: Sequence[int]) -> JoinTree | None:
    """Repeated ear removal; returns a join tree iff the hypergraph is
    alpha-acyclic.  An ear is a relation whose attributes are each private to
    it or contained in one single other relation."""
    n = len(masks)
    if n == 0:
        return JoinTree((), ())
    alive = set(range(n))
    parent = [-1] * n
    order: list[int] = []
    while len(alive) > 1:
        removed = None
        for i in sorted(alive):
            others = 0
            for j in alive:
                if j != i:
                    others |= masks[j]
            shared = masks[i] & others
            for j in sorted(alive):
                if j != i and shared & ~masks[j] == 0:
                    removed = (i, j)
                    break
            if removed:
                break
        if not removed:
            return None
        i, j = removed
        parent[i] = j
        order.append(i)
        alive.remove(i)
    order.extend(alive)
    return JoinTree(tuple(parent), tuple(order))


def full_reduce(
    jt: JoinTree, relations: Sequence[Relation], counter: OpCounter | None = None
) -> list[Relation]:
    """Two semijoin sweeps (leaves to root, then root to leaves).  Afterwards
    every surviving tuple participates in at least one join result."""
    counter = counter or OpCounter()
    cur = list(relations)
    root = jt.root
    for i in jt.order:
        if i == root:
            continue
        p = jt.parent[i]
        counter.add(len(cur[p]) + len(cur[i]))
        cur[p] = semijoin(cur[p], cur[i])
    for i in reversed(jt.order):
        if i == root:
            continue
        p = jt.parent[i]
        counter.add(len(cur[p]) + len(cur[i]))
        cur[i] = semijoin(cur[i], cur[p])
    return cur


def yannakakis(
    jt: JoinTree,
    relations: Sequence[Relation],
    out_mask: int,
    counter: OpCounter | None = None,
) -> Relation:
    """Full-reducer semijoin sweep, then bottom-up joins with eager projection
    onto the output attributes plus still-needed join keys."""
    counter = counter or OpCounter()
    cur = full_reduce(jt, relations, counter)
    root = jt.root
    alive = set(jt.order)
    for i in jt.order:
        if i == root:
            continue
        p = jt.parent[i]
        merged = join_pair(cur[p], cur[i], name="yk")
        counter.add(len(cur[p]) + len(cur[i]) + len(merged))
        alive.discard(i)
        needed = out_mask
        for j in alive:
            if j != p:
                needed |= cur[j].mask
        cur[p] = project(merged, merged.mask & needed)
    result = project(cur[root], out_mask & cur[root].mask)
    counter.add(len(result))
    return result


# ---------------------------------------------------------------------------
# GHD enumeration


@dataclass(frozen=True)
class GHD:
    bags: tuple[int, ...]
    parent: tuple[int, ...]

    def tree_order(self) -> tuple[int, ...]:
        """Children-first ordering of the tree nodes."""
        children: dict[int, list[int]] = {i: [] for i in range(len(self.bags))}
        root = 0
        for i, p in enumerate(self.parent):
            if p < 0:
                root = i
            else:
                children[p].append(i)
        order: list[int] = []

        def walk(i: int) -> None:
            for c in children[i]:
                walk(c)
            order.append(i)

        walk(root)
        return tuple(order)


def ghd_is_valid(ghd: GHD, rel_masks: Sequence[int]) -> bool:
    """Independent validity check: coverage plus running intersection."""
    for m in rel_masks:
        if not any(m & ~bag == 0 for bag in ghd.bags):
            return False
    n = len(ghd.bags)
    adj: dict[int, list[int]] = {i: [] for i in range(n)}
    for i, p in enumerate(ghd.parent):
        if p >= 0:
            adj[i].append(p)
            adj[p].append(i)
    universe = 0
    for bag in ghd.bags:
        universe |= bag
    for a in mask_iter(universe):
        holders = [i for i, bag in enumerate(ghd.bags) if bag & (1 << a)]
        seen = {holders[0]}
        stack = [holders[0]]
        holder_set = set(holders)
        while stack:
            i = stack.pop()
            for j in adj[i]:
                if j in holder_set and j not in seen:
                    seen.add(j)
                    stack.append(j)
        if seen != holder_set:
            return False
    return True


def _mst_tree(bags: tuple[int, ...]) -> GHD:
    """Maximum-weight spanning tree on bag intersections (deterministic)."""
    n = len(bags)
    parent = [-1] * n
    in_tree = {0}
    while len(in_tree) < n:
        best = None
        for i in sorted(in_tree):
            for j in range(n):
                if j in in_tree:
                    continue
                w = mask_size(bags[i] & bags[j])
                key = (-w, j, i)
                if best is None or key < best[0]:
                    best = (key, i, j)
        _, i, j = best
        parent[j] = i
        in_tree.add(j)
    return GHD(bags=bags, parent=tuple(parent))


def connected_attr_subsets(attrs_mask: int, rel_masks: Sequence[int]) -> list[int]:
    """All attribute subsets connected in the query's primal graph."""
    adjacency: dict[int, int] = {a: 0 for a in mask_iter(attrs_mask)}
    for m in rel_masks:
        for a in mask_iter(m):
            adjacency[a] |= m & ~(1 << a)
    seen: set[int] = set()
    frontier = [1 << a for a in mask_iter(attrs_mask)]
    seen.update(frontier)
    while frontier:
        nxt = []
        for mask in frontier:
            reach = 0
            for a in mask_iter(mask):
                reach |= adjacency[a]
            for b in mask_iter(reach & ~mask & attrs_mask):
                grown = mask | (1 << b)
                if grown not in seen:
                    seen.add(grown)
                    nxt.append(grown)
        frontier = nxt
    return sorted(seen)


@lru_cache(maxsize=512)
def _enumerate_ghds_cached(
    rel_masks: tuple[int, ...], attrs_mask: int, max_bags: int, budget: int
) -> tuple[GHD, ...]:
    if mask_size(attrs_mask) > 8:
        raise EnumerationRefused("decomposition enumeration is capped at 8 attributes")
    candidates = connected_attr_subsets(attrs_mask, rel_masks)
    candidate_set = set(candidates)
    distinct_rels = sorted(set(rel_masks))
    examined = 0
    bag_sets: set[tuple[int, ...]] = set()

    def cover(next_rel: int, chosen: tuple[int, ...]) -> None:
        nonlocal examined
        examined += 1
        if examined > budget:
            raise EnumerationRefused(
                f"more than {budget} bag combinations; tighten the query or raise the budget"
            )
        while next_rel < len(distinct_rels) and any(
            distinct_rels[next_rel] & ~bag == 0 for bag in chosen
        ):
            next_rel += 1
        if next_rel == len(distinct_rels):
            bag_sets.add(chosen)
            # admit one extra connector bag drawn from pairwise intersections;
            # it can stitch bags that otherwise break running intersection
            if len(chosen) < max_bags:
                for i in range(len(chosen)):
                    for j in range(i + 1, len(chosen)):
                        inter = chosen[i] & chosen[j]
                        if inter and inter not in chosen and inter in candidate_set:
                            bag_sets.add(tuple(sorted(chosen + (inter,))))
            return
        if len(chosen) >= max_bags:
            return
        for bag in candidates:
            if distinct_rels[next_rel] & ~bag == 0:
                cover(next_rel + 1, tuple(sorted(chosen + (bag,))))

    cover(0, ())
    out = []
    for bags in sorted(bag_sets):
        ghd = _mst_tree(bags)
        if ghd_is_valid(ghd, rel_masks):
            out.append(ghd)
    return tuple(out)


def enumerate_ghds(
    rel_masks: Sequence[int],
    attrs_mask: int,
    max_bags: int | None = None,
    budget: int = 100_000,
) -> list[GHD]:
    """All valid decompositions whose bags are connected attribute subsets,
    each covering at least one relation (plus at most one connector bag),
    with at most max_bags bags.  Complete only up to these caps."""
    if max_bags is None:
        max_bags = max(1, len(set(rel_masks)))
    return list(_enumerate_ghds_cached(tuple(rel_masks), attrs_mask, max_bags, budget))


# ---------------------------------------------------------------------------
# Widths


def bag_cover_value(bag: int, rel_masks: Sequence[int], sizes: Sequence[float]) -> float:
    """Fractional cover value of one bag, in nats: min sum w_R ln|R| covering
    every bag attribute with relations that contain it."""
    usable = [i for i, m in enumerate(rel_masks) if m & bag]
    if not usable:
        return 0.0 if bag == 0 else math.inf
    lp = LinearProgram(
        names=[f"r{i}" for i in usable],
        objective=[math.log(max(sizes[i], 1.0)) for i in usable],
        sense="min",
    )
    feasible = True
    for a in mask_iter(bag):
        row = [1.0 if rel_masks[i] & (1 << a) else 0.0 for i in usable]
        if not any(row):
            feasible = False
            break
        lp.add(row, ">=", 1.0)
    if not feasible:
        return math.inf
    sol = solve_lp(lp)
    return sol.objective if sol.optimal else math.inf


def fhw(
    rel_masks: Sequence[int],
    sizes: Sequence[float],
    attrs_mask: int,
    max_bags: int | None = None,
    budget: int = 100_000,
) -> tuple[float, GHD]:
    """Min over enumerated GHDs of the max per-bag fractional cover value, in
    nats.  Structural: uses full relation sizes, not data-dependent
    projections, so equal-size fixtures give the classic width exactly."""
    best: tuple[float, GHD] | None = None
    for ghd in enumerate_ghds(rel_masks, attrs_mask, max_bags, budget):
        width = max(bag_cover_value(bag, rel_masks, sizes) for bag in ghd.bags)
        if best is None or width < best[0] - 1e-12:
            best = (width, ghd)
    if best is None:
        raise EnumerationRefused("no valid decomposition found within caps")
    return best


@dataclass
class ConfigWidth:
    index: int
    ghd: GHD
    width_nats: float


@dataclass
class WidthReport:
    fhw_nats: float
    fhw_witness: GHD
    per_config: list[ConfigWidth]
    m_width_nats: float

    def fhw_exponent(self, base: float) -> float:
        return self.fhw_nats / math.log(base) if base > 1 else 0.0

    def m_width_exponent(self, base: float) -> float:
        return self.m_width_nats / math.log(base) if base > 1 else 0.0


def m_width(
    pq: PartitionedQuery,
    max_bags: int | None = None,
    budget: int = 100_000,
) -> WidthReport:
    """Per configuration, the best GHD under the distance-based bag measure;
    the overall value is the worst configuration's best decomposition."""
    q = pq.query
    rel_masks = [r.mask for r in q.relations]
    sizes = [float(len(r)) for r in q.relations]
    ghds = enumerate_ghds(rel_masks, q.attrs_mask, max_bags, budget)
    if not ghds:
        raise EnumerationRefused("no valid decomposition found within caps")
    fhw_nats, fhw_wit = fhw(rel_masks, sizes, q.attrs_mask, max_bags, budget)
    per_config: list[ConfigWidth] = []
    overall = 0.0
    for cfg in pq.configs():
        profiles = [RelProfile.from_stats(f.stats) for f in cfg.fragments]
        bound = mo(profiles, q.attrs_mask)
        dist = bound.witness["dist"]
        best: tuple[float, GHD] | None = None
        for ghd in ghds:
            width = max(dist.get(bag, math.inf) for bag in ghd.bags)
            if best is None or width < best[0] - 1e-12:
                best = (width, ghd)
        per_config.append(ConfigWidth(index=cfg.index, ghd=best[1], width_nats=best[0]))
        overall = max(overall, best[0])
    return WidthReport(
        fhw_nats=fhw_nats,
        fhw_witness=fhw_wit,
        per_config=per_config,
        m_width_nats=overall,
    )


# ---------------------------------------------------------------------------
# Chain materialization and GHD-based execution


def chain_materialize(
    relations: Sequence[Relation],
    profiles: Sequence[RelProfile],
    attrs_mask: int,
    target_mask: int,
    counter: OpCounter | None = None,
) -> Relation:
    """Build a relation over ``target_mask`` containing the projection of the
    full join, by walking the shortest-path predecessor chain from the empty
    set: projection steps for monotonicity edges, joins with relation
    projections for degree edges."""
    counter = counter or OpCounter()
    bound = mo(profiles, attrs_mask, target_mask)
    if bound.nats == float("-inf"):
        return Relation("chain", tuple(mask_iter(target_mask)), [])
    cur = Relation("chain", (), [()])
    for _src, dst, kind, payload in bound.witness["chain"]:
        if kind == "drop":
            cur = project(cur, dst)
            counter.add(len(cur))
        else:
            amask, bmask, ridx = payload
            piece = project(relations[ridx], bmask)
            merged = join_pair(cur, piece, name="chain")
            counter.add(len(cur) + len(piece) + len(merged))
            cur = project(merged, dst)
    if cur.mask != target_mask:
        raise DegreeJoinError("chain did not terminate at the target attributes")
    return cur


def ghd_execute_config(
    relations: Sequence[Relation],
    profiles: Sequence[RelProfile],
    attrs_mask: int,
    ghd: GHD,
    out_mask: int,
    counter: OpCounter | None = None,
) -> Relation:
    """Materialize each bag via its chain, semijoin with every relation's
    projection onto the bag, then run the semijoin-sweep join over the bag
    relations arranged by the decomposition tree."""
    counter = counter or OpCounter()
    bag_rels: list[Relation] = []
    for bag in ghd.bags:
        r_bag = chain_materialize(relations, profiles, attrs_mask, bag, counter)
        for rel in relations:
            counter.add(len(r_bag))
            r_bag = semijoin(r_bag, project(rel, rel.mask & bag))
        bag_rels.append(r_bag)
    order = ghd.tree_order()
    jt = JoinTree(parent=ghd.parent, order=order)
    return yannakakis(jt, bag_rels, out_mask, counter)


def ghd_execute(pq: PartitionedQuery, max_bags: int | None = None, budget: int = 100_000) -> Relation:
    """Decomposition-based join: per configuration, use that configuration's
    best-width GHD; union the per-configuration outputs."""
    q = pq.query
    report = m_width(pq, max_bags, budget)
    by_index = {cw.index: cw.ghd for cw in report.per_config}
    pieces = []
    for cfg in pq.configs():
        profiles = [RelProfile.from_stats(f.stats) for f in cfg.fragments]
        pieces.append(
            ghd_execute_config(
                cfg.relations(), profiles, q.attrs_mask, by_index[cfg.index], q.output_mask
            )
        )
    if not pieces:
        return Relation("join", tuple(mask_iter(q.output_mask)), [])
    return relation_union(pieces, name="join")
