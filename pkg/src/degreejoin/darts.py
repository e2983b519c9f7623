"""Transform-based join planner and executor.

The planner reduces a join-project subproblem with three transforms:
marginalizing a high-degree attribute (heavy), collapsing the relations inside
an attribute set through a packing-bounded subjoin (light), and cutting the
query at an articulation set (split).  It searches all applicable transform
sequences with memoization and returns the plan with the smallest bound on
the output-insensitive cost; execution follows the plan on concrete data and
keeps an operation counter.

All stat values live in log space.  In ``counts`` mode a value is the natural
log of a tuple count and series costs combine by log-sum-exp; in
``exponents`` mode values are exponents of a symbolic input size and series
costs combine by max, which is what makes the recovered runtime exponents
exact instead of drowning in additive constants.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Literal, Sequence

from .bounds import (
    RelProfile,
    UncoveredAttributeError,
    _covers_for_masks,
    _solve_cover_lp,
)
from .degrees import PartitionedQuery, partition_catalog
from .ghd import JoinTree, OpCounter, gyo_acyclic, yannakakis
from .lp import SubsetConstraintGraph, subset_shortest_paths
from .relational import (
    DegreeJoinError,
    QueryHypergraph,
    Relation,
    join_pair,
    mask_iter,
    mask_size,
    project,
    relation_union,
    semijoin,
    submasks,
)

NEG_INF = float("-inf")
Mode = Literal["counts", "exponents"]


class PlannerRefused(DegreeJoinError):
    """Search budget exceeded; caller should fall back to another engine."""


# ---------------------------------------------------------------------------
# Subproblem statistics


@dataclass(frozen=True, eq=False)
class RelStat:
    """Log-space statistics of one relation inside a subproblem.

    ``pair[(A, B)]`` bounds the log of the max number of distinct
    B-projections per A-value; ``top`` carries the degree-bucket upper end for
    single attributes when the relation came from a degree partition.
    """

    name: str
    mask: int
    size: float
    proj: dict[int, float]
    pair: dict[tuple[int, int], float]
    top: dict[int, float] | None = None

    def heavy_deg(self, bit: int) -> float:
        if self.top is not None and bit in self.top:
            return self.top[bit]
        return self.pair[(bit, self.mask)]

    def restricted(self, keep: int) -> "RelStat":
        m = self.mask & keep
        return RelStat(
            name=self.name,
            mask=m,
            size=self.proj[m],
            proj={b: self.proj[b] for b in submasks(m)},
            pair={(a, b): v for (a, b), v in self.pair.items() if b & ~m == 0},
            top=None,
        )


@dataclass(frozen=True, eq=False)
class Subproblem:
    rels: tuple[RelStat, ...]
    out_mask: int
    mode: Mode
    L: float

    @property
    def attrs_mask(self) -> int:
        m = 0
        for r in self.rels:
            m |= r.mask
        return m

    def input_cost(self) -> float:
        return _fold_plus(self.mode, [r.size for r in self.rels])


def _plus(mode: Mode, a: float, b: float) -> float:
    if a == NEG_INF:
        return b
    if b == NEG_INF:
        return a
    if mode == "exponents":
        return max(a, b)
    big, small = (a, b) if a >= b else (b, a)
    return big + math.log1p(math.exp(small - big))


def _fold_plus(mode: Mode, values) -> float:
    acc = NEG_INF
    for v in values:
        acc = _plus(mode, acc, v)
    return acc


def _log_l(mode: Mode, L: float) -> float:
    return 0.0 if mode == "exponents" else math.log(L)


def stat_from_fragment(frag, L: int) -> RelStat:
    s = frag.stats
    top = {}
    for mask, bucket in frag.signature:
        if mask_size(mask) == 1:
            top[mask] = math.log(float(L ** (bucket + 1)))
    return RelStat(
        name=frag.source,
        mask=s.mask,
        size=math.log(max(s.size, 1)),
        proj={b: math.log(max(v, 1)) for b, v in s.proj_size.items()},
        pair={k: math.log(max(v, 1)) for k, v in s.pair_max.items()},
        top=top,
    )


def uniform_stat(name: str, mask: int, size_exp: float, deg_exp: float) -> RelStat:
    """Symbolic worst-case relation: every attribute subset has degree
    ``size - |proj|`` style uniform structure with per-attribute degree
    exponent deg_exp.  Used by exponent-mode planner fixtures."""
    k = mask_size(mask)
    proj: dict[int, float] = {}
    pair: dict[tuple[int, int], float] = {}
    for b in submasks(mask):
        nb = mask_size(b)
        if nb == 0:
            proj[b] = 0.0
        elif nb == k:
            proj[b] = size_exp
        else:
            proj[b] = max(0.0, size_exp - deg_exp)
        for a in submasks(b):
            na = mask_size(a)
            if na == nb:
                pair[(a, b)] = 0.0
            elif na == 0:
                pair[(a, b)] = proj[b]
            else:
                pair[(a, b)] = min(deg_exp * (nb - na), proj[b])
    return RelStat(name=name, mask=mask, size=size_exp, proj=proj, pair=pair, top=None)


# ---------------------------------------------------------------------------
# Bound helpers shared by planner transforms


def _apsp_dists(rels: Sequence[RelStat], universe: int) -> tuple[dict[int, int], "np.ndarray"]:
    """All-pairs shortest distances over the subset lattice, via a numpy
    min-plus closure.  Returns (mask -> index, dense distance matrix)."""
    import numpy as np

    subs = list(submasks(universe))
    subs.sort()
    idx = {m: i for i, m in enumerate(subs)}
    v = len(subs)
    w = np.full((v, v), np.inf)
    np.fill_diagonal(w, 0.0)
    for m in subs:
        i = idx[m]
        for a in mask_iter(m):
            w[i, idx[m & ~(1 << a)]] = 0.0
    for r in rels:
        m = r.mask & universe
        for b in submasks(m):
            for a in submasks(b):
                if a == b:
                    continue
                weight = max(0.0, r.pair[(a, b)])
                free = universe & ~a
                for extra in submasks(free):
                    s = a | extra
                    t = s | b
                    if t != s:
                        i, j = idx[s], idx[t]
                        if weight < w[i, j]:
                            w[i, j] = weight
    steps = max(1, (v - 1).bit_length())
    for _ in range(steps):
        w = np.minimum(w, np.min(w[:, :, None] + w[None, :, :], axis=1))
    return idx, w


def _graph_of(rels: Sequence[RelStat], attrs_mask: int) -> SubsetConstraintGraph:
    out = []
    for r in rels:
        weights = {}
        for b in submasks(r.mask):
            for a in submasks(b):
                if a != b:
                    weights[(a, b)] = max(0.0, r.pair[(a, b)])
        out.append((r.mask, weights))
    return SubsetConstraintGraph(universe_mask=attrs_mask, relations=tuple(out))


def _lattice_dists(rels: Sequence[RelStat], attrs_mask: int, source: int) -> dict[int, float]:
    dist, _ = subset_shortest_paths(_graph_of(rels, attrs_mask), source)
    return dist


def _mo_value(sub: Subproblem, target: int) -> float:
    dist = _lattice_dists(sub.rels, sub.attrs_mask, 0)
    return dist.get(target, math.inf)


def _dbp_value(
    rels: Sequence[RelStat], attrs_mask: int, mode: Mode, L: float
) -> tuple[float, tuple, dict[int, float]]:
    """Packing bound over irredundant covers, in log space; returns
    (value, cover, per-attribute exponents)."""
    covers = _covers_for_masks(tuple(r.mask for r in rels), attrs_mask)
    attrs = list(mask_iter(attrs_mask))
    if not attrs:
        return 0.0, (), {}
    lnl = _log_l(mode, L)
    pair_rows: dict[tuple[int, int], tuple[tuple[int, float], ...]] = {}

    def rows_of(ri: int, amask: int) -> tuple[tuple[int, float], ...]:
        got = pair_rows.get((ri, amask))
        if got is None:
            r = rels[ri]
            acc = []
            for sub_ in submasks(amask):
                if sub_ == 0:
                    continue
                rhs = max(0.0, r.pair[(amask & ~sub_, amask)] - lnl)
                if rhs > 0.0:
                    acc.append((sub_, round(rhs, 12)))
            got = tuple(acc)
            pair_rows[(ri, amask)] = got
        return got

    best = None
    for cover in covers:
        rows: list[tuple[int, float]] = []
        for ri, amask in cover:
            rows.extend(rows_of(ri, amask))
        solved = _solve_cover_lp(attrs, tuple(sorted(set(rows))))
        if solved is None:
            continue
        objective, values = solved
        if best is None or objective < best[0] - 1e-12:
            best = (objective, cover, dict(zip(attrs, values)))
    if best is None:
        raise UncoveredAttributeError("no feasible cover for the light subjoin")
    return best


# ---------------------------------------------------------------------------
# Plan nodes


@dataclass
class PlanNode:
    kind: str
    q_log: float
    p_log: float
    slack_log: float = 0.0
    detail: dict = field(default_factory=dict)

    def walk(self):
        yield self
        for key in ("child", "p1", "q1", "q2", "p2"):
            node = self.detail.get(key)
            if node is not None:
                yield from node.walk()


@dataclass
class PlanInfo:
    q_log: float
    p_log: float
    q_plan: PlanNode | None
    p_plan: PlanNode | None


# ---------------------------------------------------------------------------
# The planner


class Planner:
    def __init__(self, mode: Mode = "counts", L: float = 2.0, budget_states: int = 20000):
        self.mode = mode
        self.L = L
        self.budget = budget_states
        self.memo: dict[tuple, PlanInfo] = {}
        self.states = 0
        # content-fingerprint caches: fragments recur across configurations,
        # so transform derivations keyed by the stats they read are shared.
        # The id-keyed map must pin its objects, otherwise a recycled address
        # would inherit a stale fingerprint.
        self._fp: dict[int, tuple[RelStat, tuple]] = {}
        self._light_cache: dict[tuple, tuple | None] = {}
        self._split_cache: dict[tuple, RelStat] = {}
        self._mo_cache: dict[tuple, float] = {}

    def _stat_fp(self, r: RelStat) -> tuple:
        hit = self._fp.get(id(r))
        if hit is not None and hit[0] is r:
            return hit[1]
        fp = (
            r.mask,
            round(r.size, 9),
            tuple(sorted((a, b, round(v, 9)) for (a, b), v in r.pair.items())),
            tuple(sorted((b, round(v, 9)) for b, v in (r.top or {}).items())),
        )
        self._fp[id(r)] = (r, fp)
        return fp

    def _mo_of(self, sub: Subproblem, target: int) -> float:
        key = (tuple(self._stat_fp(r) for r in sub.rels), target)
        hit = self._mo_cache.get(key)
        if hit is None:
            hit = _mo_value(sub, target)
            self._mo_cache[key] = hit
        return hit

    # -- canonicalization ---------------------------------------------------

    def _key(self, sub: Subproblem) -> tuple:
        attrs = list(mask_iter(sub.attrs_mask))
        profiles = {}
        for a in attrs:
            bit = 1 << a
            prof = tuple(
                sorted(
                    (mask_size(r.mask), round(r.size, 9), round(r.pair[(bit, r.mask)], 9))
                    for r in sub.rels
                    if r.mask & bit
                )
            )
            profiles[a] = (prof, 1 if sub.out_mask & bit else 0)
        order = sorted(attrs, key=lambda a: (profiles[a], a))
        remap = {a: i for i, a in enumerate(order)}

        def rm(mask: int) -> int:
            out = 0
            for a in mask_iter(mask):
                out |= 1 << remap[a]
            return out

        rel_keys = tuple(
            sorted(
                (
                    rm(r.mask),
                    round(r.size, 9),
                    tuple(sorted((rm(a), rm(b), round(v, 9)) for (a, b), v in r.pair.items())),
                    tuple(sorted((rm(b), round(v, 9)) for b, v in (r.top or {}).items())),
                )
                for r in sub.rels
            )
        )
        return (rel_keys, rm(sub.out_mask))

    # -- transforms: derived subproblems ------------------------------------

    def _heavy_child(self, sub: Subproblem, x: int) -> tuple[float, Subproblem] | None:
        bit = 1 << x
        holders = [r for r in sub.rels if r.mask & bit]
        if not holders:
            return None
        mult = min(max(0.0, r.size - r.heavy_deg(bit)) for r in holders)
        new_rels = []
        for r in sub.rels:
            if not r.mask & bit:
                new_rels.append(r)
                continue
            m = r.mask & ~bit
            if m == 0:
                continue  # reduced to a membership filter on x alone
            proj = {}
            pair = {}
            for b in submasks(m):
                proj[b] = min(r.proj[b], r.pair[(bit, b | bit)])
                for a in submasks(b):
                    pair[(a, b)] = min(r.pair[(a, b)], r.pair[(a | bit, b | bit)])
            new_rels.append(
                RelStat(name=r.name, mask=m, size=proj[m], proj=proj, pair=pair)
            )
        child = Subproblem(
            rels=tuple(new_rels), out_mask=sub.out_mask & ~bit, mode=sub.mode, L=sub.L
        )
        return mult, child

    def _light_cost(self, sub: Subproblem, xmask: int) -> float | None:
        """Just the packing cost of collapsing xmask; cheap enough to price
        every candidate before deriving any statistics."""
        touching = [r for r in sub.rels if r.mask & xmask]
        key = ("cost", tuple(self._stat_fp(r) for r in touching), xmask)
        hit = self._light_cache.get(key, "miss")
        if hit == "miss":
            sub_rels = [r.restricted(xmask) for r in touching]
            try:
                hit = _dbp_value(sub_rels, xmask, self.mode, self.L)
            except UncoveredAttributeError:
                hit = None
            self._light_cache[key] = hit
        return None if hit is None else hit[0]

    def _light_child(
        self, sub: Subproblem, xmask: int
    ) -> tuple[float, tuple, dict[int, float], Subproblem] | None:
        inside = [i for i, r in enumerate(sub.rels) if r.mask & ~xmask == 0 and r.mask]
        if len(inside) < 2:
            return None
        touching = [r for r in sub.rels if r.mask & xmask]
        fps = tuple(self._stat_fp(r) for r in touching)
        priced = self._light_cache.get(("cost", fps, xmask), "miss")
        if priced == "miss":
            self._light_cost(sub, xmask)
            priced = self._light_cache[("cost", fps, xmask)]
        if priced is None:
            return None
        cost, cover, shares = priced
        key = ("rx", fps, xmask)
        rx = self._light_cache.get(key)
        if rx is None:
            rx = self._derive_rx(tuple(r.restricted(xmask) for r in touching), xmask)
            self._light_cache[key] = rx
        keep = [r for i, r in enumerate(sub.rels) if i not in inside]
        child = Subproblem(
            rels=tuple(keep) + (rx,), out_mask=sub.out_mask, mode=sub.mode, L=sub.L
        )
        return cost, cover, shares, child

    def _derive_rx(self, sub_rels: tuple[RelStat, ...], xmask: int) -> RelStat:
        """Statistics of the collapsed relation: lattice distances give sound
        bounds on its projections and conditional degrees."""
        idx, dist = _apsp_dists(sub_rels, xmask)
        zero = idx[0]
        pair: dict[tuple[int, int], float] = {}
        proj: dict[int, float] = {}
        for b in submasks(xmask):
            jb = idx[b]
            proj[b] = float(dist[zero, jb])
            for a in submasks(b):
                pair[(a, b)] = max(
                    0.0, float(min(dist[idx[a], jb], dist[zero, jb]))
                )
        return RelStat(
            name=f"rx{xmask:x}",
            mask=xmask,
            size=proj[xmask],
            proj=proj,
            pair=pair,
        )

    def _split_candidates(self, sub: Subproblem):
        attrs_mask = sub.attrs_mask
        attrs = list(mask_iter(attrs_mask))
        masks = [r.mask for r in sub.rels]
        seen: set[tuple[int, int]] = set()
        for smask in submasks(attrs_mask):
            k = mask_size(smask)
            if k == 0 or k > 3 or smask == attrs_mask:
                continue
            rest = attrs_mask & ~smask
            comps = _components(rest, masks, smask)
            if len(comps) < 2:
                continue
            for comp in comps:
                g1 = [i for i, m in enumerate(masks) if m & ~(comp | smask) == 0 and m & comp]
                if not g1 or len(g1) == len(masks):
                    continue
                key = (smask, comp)
                if key in seen:
                    continue
                seen.add(key)
                yield smask, comp, g1

    def _split_parts(self, sub: Subproblem, smask: int, g1: list[int]):
        g1_rels = tuple(sub.rels[i] for i in g1)
        g2_rels = tuple(r for i, r in enumerate(sub.rels) if i not in g1)
        key = (tuple(self._stat_fp(r) for r in g1_rels), smask)
        rs = self._split_cache.get(key)
        if rs is None:
            universe = _union_mask(g1_rels)
            idx, dist = _apsp_dists(g1_rels, universe)
            zero = idx[0]
            pair: dict[tuple[int, int], float] = {}
            proj: dict[int, float] = {}
            for b in submasks(smask):
                jb = idx.get(b)
                proj[b] = float(dist[zero, jb]) if jb is not None else math.inf
                for a in submasks(b):
                    ja = idx.get(a)
                    if jb is None or ja is None:
                        pair[(a, b)] = math.inf
                    else:
                        pair[(a, b)] = max(0.0, float(min(dist[ja, jb], dist[zero, jb])))
            rs = RelStat(
                name=f"rs{smask:x}",
                mask=smask,
                size=proj[smask],
                proj=proj,
                pair=pair,
            )
            self._split_cache[key] = rs
        return g1_rels, g2_rels, rs

    # -- search --------------------------------------------------------------

    def best(self, sub: Subproblem) -> PlanInfo:
        key = self._key(sub)
        hit = self.memo.get(key)
        if hit is not None:
            return hit
        self.states += 1
        if self.states > self.budget:
            raise PlannerRefused(f"planner exceeded {self.budget} states")
        # placeholder blocks accidental cycles; any real recursion decreases
        # (attr count, relation count) so this should never be read back
        self.memo[key] = PlanInfo(math.inf, math.inf, None, None)

        mode = sub.mode
        q_cands: list[PlanNode] = []
        p_cands: list[PlanNode] = []
        attrs_mask = sub.attrs_mask

        if not sub.rels:
            node = PlanNode("empty", 0.0, 0.0)
            q_cands.append(node)
            p_cands.append(node)
        elif len(sub.rels) == 1:
            size = sub.rels[0].size
            node = PlanNode("rel", size, size, detail={"rel": 0})
            q_cands.append(node)
            p_cands.append(node)
        else:
            jt = gyo_acyclic([r.mask for r in sub.rels])
            if jt is not None:
                cost_in = sub.input_cost()
                mo_full = self._mo_of(sub, attrs_mask)
                node = PlanNode(
                    "acyclic",
                    cost_in,
                    _plus(mode, cost_in, mo_full),
                    detail={"tree": jt},
                )
                if sub.out_mask == attrs_mask:
                    # reading the input already costs this much, so no
                    # transform sequence can undercut the sweep here
                    info = PlanInfo(node.q_log, node.p_log, node, node)
                    self.memo[key] = info
                    return info
                p_cands.append(node)

        if len(sub.rels) > 1:
            def cur_best() -> tuple[float, float]:
                q = min((n.q_log for n in q_cands), default=math.inf)
                p = min((n.p_log for n in p_cands), default=math.inf)
                return q, p

            # heavy candidates, cheapest multiplier first; a candidate whose
            # multiplier alone cannot beat the running best is pruned since
            # child bounds are nonnegative
            heavies = []
            for x in mask_iter(attrs_mask):
                holders = [r for r in sub.rels if r.mask & (1 << x)]
                if holders:
                    mult = min(max(0.0, r.size - r.heavy_deg(1 << x)) for r in holders)
                    heavies.append((mult, x))
            for mult, x in sorted(heavies):
                bq, bp = cur_best()
                if mult >= max(bq, bp) - 1e-12:
                    break
                got = self._heavy_child(sub, x)
                if got is None:
                    continue
                mult, child = got
                info = self.best(child)
                detail = {"x": x, "childsub": child}
                if info.q_plan is not None:
                    detail_q = dict(detail, child=info.q_plan)
                    q_cands.append(
                        PlanNode(
                            "heavy",
                            mult + info.q_log,
                            math.inf,
                            slack_log=info.q_plan.slack_log + _log_l(mode, sub.L),
                            detail=detail_q,
                        )
                    )
                if info.p_plan is not None:
                    detail_p = dict(detail, child=info.p_plan)
                    p_cands.append(
                        PlanNode(
                            "heavy",
                            math.inf,
                            mult + info.p_log,
                            slack_log=info.p_plan.slack_log + _log_l(mode, sub.L),
                            detail=detail_p,
                        )
                    )

            # candidate collapse sets: unions of relation schemas (the sets
            # every recovery construction uses); arbitrary supersets only
            # loosen the collapsed relation's statistics
            light_sets: set[int] = set()
            rel_masks = [r.mask for r in sub.rels]
            for pick in submasks((1 << len(rel_masks)) - 1):
                if mask_size(pick) < 2:
                    continue
                union = 0
                for i in mask_iter(pick):
                    union |= rel_masks[i]
                if sum(1 for m in rel_masks if m and m & ~union == 0) >= 2:
                    light_sets.add(union)
            # cheapest packing cost first; since any bound built on a light
            # is at least its cost, the loop stops at the running best
            priced = []
            for xmask in sorted(light_sets):
                cost_only = self._light_cost(sub, xmask)
                if cost_only is not None:
                    priced.append((cost_only, xmask))
            for cost_only, xmask in sorted(priced):
                bq, bp = cur_best()
                if cost_only >= max(bq, bp) - 1e-12:
                    break
                got = self._light_child(sub, xmask)
                if got is None:
                    continue
                cost, cover, shares, child = got
                info = self.best(child)
                base = {"xmask": xmask, "cover": cover, "shares": shares, "childsub": child}
                extra = len(cover) * _log_l(mode, sub.L)
                if info.q_plan is not None:
                    q_cands.append(
                        PlanNode(
                            "light",
                            _plus(mode, cost, info.q_log),
                            math.inf,
                            slack_log=info.q_plan.slack_log + extra,
                            detail=dict(base, child=info.q_plan),
                        )
                    )
                if info.p_plan is not None:
                    p_cands.append(
                        PlanNode(
                            "light",
                            math.inf,
                            _plus(mode, cost, info.p_log),
                            slack_log=info.p_plan.slack_log + extra,
                            detail=dict(base, child=info.p_plan),
                        )
                    )

            for smask, comp, g1 in self._split_candidates(sub):
                g1_rels, g2_rels, rs = self._split_parts(sub, smask, g1)
                if not math.isfinite(rs.size):
                    continue
                case_i = smask & ~sub.out_mask == 0
                case_ii = sub.out_mask & comp == 0
                if not case_i and not case_ii:
                    continue
                sub_g1p = Subproblem(g1_rels, smask, mode, sub.L)
                info_g1p = self.best(sub_g1p)
                if info_g1p.p_plan is None:
                    continue
                if case_ii:
                    sub_g2 = Subproblem(g2_rels + (rs,), sub.out_mask, mode, sub.L)
                    info_g2 = self.best(sub_g2)
                    if info_g2.p_plan is not None:
                        p_cands.append(
                            PlanNode(
                                "split_ii",
                                math.inf,
                                _plus(mode, info_g1p.p_log, info_g2.p_log),
                                slack_log=max(
                                    info_g1p.p_plan.slack_log, info_g2.p_plan.slack_log
                                ),
                                detail={
                                    "smask": smask,
                                    "g1": tuple(g1),
                                    "p1": info_g1p.p_plan,
                                    "p1sub": sub_g1p,
                                    "p2": info_g2.p_plan,
                                    "p2sub": sub_g2,
                                },
                            )
                        )
                if case_i:
                    out1 = sub.out_mask & (_union_mask(g1_rels) | smask)
                    out2 = sub.out_mask & (_union_mask(g2_rels) | smask)
                    sub_g1q = Subproblem(g1_rels + (rs,), out1, mode, sub.L)
                    sub_g2q = Subproblem(g2_rels + (rs,), out2, mode, sub.L)
                    info_g1q = self.best(sub_g1q)
                    info_g2q = self.best(sub_g2q)
                    if info_g1q.q_plan is not None and info_g2q.q_plan is not None:
                        q_log = _fold_plus(
                            mode, [info_g1p.p_log, info_g1q.q_log, info_g2q.q_log]
                        )
                        q_cands.append(
                            PlanNode(
                                "split_i",
                                q_log,
                                math.inf,
                                slack_log=max(
                                    info_g1p.p_plan.slack_log,
                                    info_g1q.q_plan.slack_log,
                                    info_g2q.q_plan.slack_log,
                                ),
                                detail={
                                    "smask": smask,
                                    "g1": tuple(g1),
                                    "p1": info_g1p.p_plan,
                                    "p1sub": sub_g1p,
                                    "q1": info_g1q.q_plan,
                                    "q1sub": sub_g1q,
                                    "q2": info_g2q.q_plan,
                                    "q2sub": sub_g2q,
                                },
                            )
                        )

        best_q = min(q_cands, key=lambda n: (n.q_log, _node_order(n)), default=None)
        best_p = min(p_cands, key=lambda n: (n.p_log, _node_order(n)), default=None)
        # closures: a full-output algorithm answers the bounded-cost question
        # and vice versa once the output-size bound is added
        if best_q is not None:
            mo_out = self._mo_of(sub, sub.out_mask)
            alt = _plus(mode, best_q.q_log, mo_out)
            if best_p is None or alt < best_p.p_log - 1e-12:
                best_p = PlanNode(
                    best_q.kind,
                    best_q.q_log,
                    alt,
                    slack_log=best_q.slack_log,
                    detail=best_q.detail,
                )
        if best_p is not None and (best_q is None or best_p.p_log < best_q.q_log - 1e-12):
            best_q = PlanNode(
                best_p.kind,
                best_p.p_log,
                best_p.p_log,
                slack_log=best_p.slack_log,
                detail=best_p.detail,
            )
        info = PlanInfo(
            q_log=best_q.q_log if best_q else math.inf,
            p_log=best_p.p_log if best_p else math.inf,
            q_plan=best_q,
            p_plan=best_p,
        )
        self.memo[key] = info
        return info


def _node_order(n: PlanNode) -> tuple:
    rank = {
        "empty": 0,
        "rel": 1,
        "acyclic": 2,
        "heavy": 3,
        "light": 4,
        "split_i": 5,
        "split_ii": 6,
    }
    return (sum(1 for _ in n.walk()), rank.get(n.kind, 9))


def _union_mask(rels: Sequence[RelStat]) -> int:
    m = 0
    for r in rels:
        m |= r.mask
    return m


def _components(rest_mask: int, rel_masks: Sequence[int], smask: int) -> list[int]:
    comps: list[int] = []
    masks = [m & ~smask for m in rel_masks]
    todo = rest_mask
    while todo:
        seed = todo & -todo
        comp = seed
        grew = True
        while grew:
            grew = False
            for m in masks:
                if m & comp and m & ~comp:
                    comp |= m
                    grew = True
        comp &= rest_mask
        comps.append(comp)
        todo &= ~comp
    return comps


# ---------------------------------------------------------------------------
# Generic worst-case-bounded join (attribute-at-a-time intersection)


def generic_join(
    relations: Sequence[Relation],
    out_mask: int | None = None,
    order: Sequence[int] | None = None,
    counter: OpCounter | None = None,
) -> Relation:
    """Expand one attribute at a time: intersect the candidate values from the
    smallest side, probe the rest, and recurse on the filtered rows."""
    counter = counter or OpCounter()
    attrs_mask = 0
    for r in relations:
        attrs_mask |= r.mask
    if out_mask is None:
        out_mask = attrs_mask
    out_attrs = list(mask_iter(out_mask))
    if any(len(r) == 0 for r in relations):
        return Relation("join", out_attrs, [])
    if order is None:
        attr_order = list(mask_iter(attrs_mask))
    else:
        attr_order = [a for a in order if attrs_mask & (1 << a)]
        attr_order += [a for a in mask_iter(attrs_mask) if a not in attr_order]
    col_of = [{a: i for i, a in enumerate(r.schema)} for r in relations]
    actives: list[list[tuple[int, ...]]] = [list(r.rows) for r in relations]
    assignment: dict[int, int] = {}
    out_rows: set[tuple[int, ...]] = set()

    def recurse(depth: int) -> None:
        if depth == len(attr_order):
            out_rows.add(tuple(assignment[a] for a in out_attrs))
            counter.add(1)
            return
        a = attr_order[depth]
        bit = 1 << a
        holders = [i for i, r in enumerate(relations) if r.mask & bit]
        groups: list[dict[int, list[tuple[int, ...]]]] = []
        for i in holders:
            g: dict[int, list[tuple[int, ...]]] = {}
            c = col_of[i][a]
            counter.add(len(actives[i]))
            for row in actives[i]:
                g.setdefault(row[c], []).append(row)
            groups.append(g)
        lead = min(range(len(holders)), key=lambda k: len(groups[k]))
        saved = [actives[i] for i in holders]
        for v in sorted(groups[lead]):
            ok = True
            for k in range(len(holders)):
                if k != lead:
                    counter.add(1)
                    if v not in groups[k]:
                        ok = False
                        break
            if not ok:
                continue
            for k, i in enumerate(holders):
                actives[i] = groups[k][v]
            assignment[a] = v
            recurse(depth + 1)
        for k, i in enumerate(holders):
            actives[i] = saved[k]
        assignment.pop(a, None)

    recurse(0)
    return Relation("join", out_attrs, out_rows)


# ---------------------------------------------------------------------------
# Plan execution


def execute_plan(
    node: PlanNode,
    sub: Subproblem,
    data: Sequence[Relation],
    counter: OpCounter | None = None,
) -> Relation:
    counter = counter or OpCounter()
    out = sub.out_mask
    kind = node.kind

    if kind == "empty":
        return Relation("join", tuple(mask_iter(out)), [()] if out == 0 else [])

    if kind == "rel":
        rel = data[node.detail["rel"]]
        counter.add(len(rel))
        result = project(rel, out & rel.mask)
        counter.add(len(result))
        return result

    if kind == "acyclic":
        jt: JoinTree = node.detail["tree"]
        return yannakakis(jt, list(data), out, counter)

    if kind == "heavy":
        x = node.detail["x"]
        childsub: Subproblem = node.detail["childsub"]
        child: PlanNode = node.detail["child"]
        bit = 1 << x
        holder_idx = [i for i, r in enumerate(sub.rels) if r.mask & bit]
        grouped: dict[int, dict[int, list[tuple[int, ...]]]] = {}
        vals: set[int] | None = None
        for i in holder_idx:
            rel = data[i]
            c = rel.columns_for(bit)[0]
            g: dict[int, list[tuple[int, ...]]] = {}
            counter.add(len(rel))
            for row in rel.rows:
                g.setdefault(row[c], []).append(row)
            grouped[i] = g
            vals = set(g) if vals is None else vals & set(g)
        out_attrs = list(mask_iter(out))
        pieces: set[tuple[int, ...]] = set()
        x_in_out = bool(out & bit)
        x_pos = out_attrs.index(x) if x_in_out else -1
        for v in sorted(vals or ()):
            child_data = []
            for i, r in enumerate(sub.rels):
                rel = data[i]
                if not r.mask & bit:
                    child_data.append(rel)
                    continue
                if r.mask == bit:
                    continue
                c = rel.columns_for(bit)[0]
                rows = [row[:c] + row[c + 1 :] for row in grouped[i].get(v, ())]
                counter.add(len(rows))
                child_data.append(
                    Relation(rel.name, tuple(a for a in rel.schema if a != x), rows)
                )
            j_v = execute_plan(child, childsub, child_data, counter)
            counter.add(len(j_v))
            if x_in_out:
                for row in j_v.rows:
                    pieces.add(row[:x_pos] + (v,) + row[x_pos:])
            else:
                pieces.update(j_v.rows)
        return Relation("join", out_attrs, pieces)

    if kind == "light":
        xmask = node.detail["xmask"]
        cover = node.detail["cover"]
        shares = node.detail["shares"]
        childsub: Subproblem = node.detail["childsub"]
        child: PlanNode = node.detail["child"]
        touching = [i for i, r in enumerate(sub.rels) if r.mask & xmask]
        cover_rels = []
        for ri, amask in cover:
            src = data[touching[ri]]
            piece = project(src, amask)
            counter.add(len(src) + len(piece))
            cover_rels.append(piece)
        attr_order = sorted(mask_iter(xmask), key=lambda a: (-shares.get(a, 0.0), a))
        rx = generic_join(cover_rels, xmask, attr_order, counter)
        for i in touching:
            piece = project(data[i], data[i].mask & xmask)
            counter.add(len(rx) + len(piece))
            rx = semijoin(rx, piece)
        inside = [i for i, r in enumerate(sub.rels) if r.mask & ~xmask == 0 and r.mask]
        child_data = [data[i] for i in range(len(sub.rels)) if i not in inside]
        child_data.append(rx)
        return execute_plan(child, childsub, child_data, counter)

    if kind == "split_ii":
        g1 = node.detail["g1"]
        r_s = execute_plan(node.detail["p1"], node.detail["p1sub"], [data[i] for i in g1], counter)
        g2_data = [data[i] for i in range(len(sub.rels)) if i not in g1]
        g2_data.append(r_s)
        return execute_plan(node.detail["p2"], node.detail["p2sub"], g2_data, counter)

    if kind == "split_i":
        smask = node.detail["smask"]
        g1 = node.detail["g1"]
        r_s = execute_plan(node.detail["p1"], node.detail["p1sub"], [data[i] for i in g1], counter)
        g2_data = [data[i] for i in range(len(sub.rels)) if i not in g1]
        o2 = execute_plan(node.detail["q2"], node.detail["q2sub"], g2_data + [r_s], counter)
        shrunk = semijoin(r_s, project(o2, smask))
        counter.add(len(r_s) + len(o2))
        o1 = execute_plan(
            node.detail["q1"], node.detail["q1sub"], [data[i] for i in g1] + [shrunk], counter
        )
        merged = join_pair(o1, o2, name="join")
        counter.add(len(o1) + len(o2) + len(merged))
        return project(merged, out & merged.mask)

    raise DegreeJoinError(f"unknown plan node kind {kind!r}")


def check_plan_bounds(node: PlanNode, sub: Subproblem, planner: Planner) -> bool:
    """Recompute each node's bound from its children per the transform rules;
    guards against drift between search and bookkeeping."""
    mode = sub.mode
    if node.kind in ("empty", "rel"):
        return True
    if node.kind == "acyclic":
        return math.isclose(node.q_log, sub.input_cost(), rel_tol=1e-9) or node.q_log <= sub.input_cost() + 1e-9
    if node.kind == "heavy":
        childsub = node.detail["childsub"]
        child = node.detail["child"]
        bit = 1 << node.detail["x"]
        mult = min(
            max(0.0, r.size - r.heavy_deg(bit)) for r in sub.rels if r.mask & bit
        )
        want = mult + (child.q_log if math.isfinite(child.q_log) else child.p_log)
        got = node.q_log if math.isfinite(node.q_log) else node.p_log
        return got <= want + 1e-9 and check_plan_bounds(child, childsub, planner)
    if node.kind == "light":
        childsub = node.detail["childsub"]
        child = node.detail["child"]
        return check_plan_bounds(child, childsub, planner)
    if node.kind == "split_ii":
        return check_plan_bounds(
            node.detail["p1"], node.detail["p1sub"], planner
        ) and check_plan_bounds(node.detail["p2"], node.detail["p2sub"], planner)
    if node.kind == "split_i":
        ok = check_plan_bounds(node.detail["p1"], node.detail["p1sub"], planner)
        ok = ok and check_plan_bounds(node.detail["q1"], node.detail["q1sub"], planner)
        ok = ok and check_plan_bounds(node.detail["q2"], node.detail["q2sub"], planner)
        want = _fold_plus(
            mode,
            [node.detail["p1"].p_log, node.detail["q1"].q_log, node.detail["q2"].q_log],
        )
        return ok and node.q_log <= want + 1e-9
    return False


# ---------------------------------------------------------------------------
# Full engine: degree-uniformize, plan and execute per configuration


@dataclass
class ConfigRun:
    index: int
    engine: str
    q_bound_log: float | None
    slack_log: float
    ops: int
    output_size: int
    plan_nodes: int


@dataclass
class DartsMetrics:
    L: int
    configs: list[ConfigRun] = field(default_factory=list)

    @property
    def total_ops(self) -> int:
        return sum(c.ops for c in self.configs)


def subproblem_for_config(
    cfg, out_mask: int, L: int, stat_cache: dict | None = None
) -> Subproblem:
    def stat_of(frag):
        if stat_cache is None:
            return stat_from_fragment(frag, L)
        hit = stat_cache.get(id(frag))
        if hit is None:
            hit = stat_from_fragment(frag, L)
            stat_cache[id(frag)] = hit
        return hit

    return Subproblem(
        rels=tuple(stat_of(f) for f in cfg.fragments),
        out_mask=out_mask,
        mode="counts",
        L=float(L),
    )


def darts_join(
    q: QueryHypergraph,
    L: int = 2,
    budget_states: int = 20000,
    pq: PartitionedQuery | None = None,
) -> tuple[Relation, DartsMetrics]:
    if pq is None:
        pq = partition_catalog(q, L)
    metrics = DartsMetrics(L=L)
    pieces: list[Relation] = []
    # one planning session per join call: configurations share the memo, so
    # structurally identical subproblems are planned once
    planner = Planner(mode="counts", L=float(L), budget_states=budget_states)
    stat_cache: dict[int, RelStat] = {}
    for cfg in pq.configs():
        counter = OpCounter()
        sub = subproblem_for_config(cfg, q.output_mask, L, stat_cache)
        data = list(cfg.relations())
        try:
            info = planner.best(sub)
            if info.q_plan is None:
                raise PlannerRefused("no plan found")
            out = execute_plan(info.q_plan, sub, data, counter)
            run = ConfigRun(
                index=cfg.index,
                engine="darts",
                q_bound_log=info.q_log,
                slack_log=info.q_plan.slack_log,
                ops=counter.ops,
                output_size=len(out),
                plan_nodes=sum(1 for _ in info.q_plan.walk()),
            )
        except (PlannerRefused, RecursionError):
            out, run = _fallback_config(cfg, q, counter)
        pieces.append(out)
        metrics.configs.append(run)
    if not pieces:
        return Relation("join", tuple(mask_iter(q.output_mask)), []), metrics
    return relation_union(pieces, name="join"), metrics


def _fallback_config(cfg, q: QueryHypergraph, counter: OpCounter):
    """Planner refused: decomposition-based execution when enumeration is
    feasible, otherwise the generic join.  Correctness never depends on the
    planner."""
    from . import ghd as ghdmod

    data = list(cfg.relations())
    try:
        profiles = [RelProfile.from_stats(f.stats) for f in cfg.fragments]
        ghds = ghdmod.enumerate_ghds(
            [r.mask for r in data], q.attrs_mask, budget=20_000
        )
        if not ghds:
            raise ghdmod.EnumerationRefused("no decomposition")
        out = ghdmod.ghd_execute_config(
            data, profiles, q.attrs_mask, ghds[0], q.output_mask, counter
        )
        engine = "ghd-fallback"
    except ghdmod.EnumerationRefused:
        out = generic_join(data, q.output_mask, counter=counter)
        engine = "generic-fallback"
    run = ConfigRun(
        index=cfg.index,
        engine=engine,
        q_bound_log=None,
        slack_log=0.0,
        ops=counter.ops,
        output_size=len(out),
        plan_nodes=0,
    )
    return out, run


# ---------------------------------------------------------------------------
# Subquadratic decision procedure for source/sink path graphs


@dataclass(frozen=True)
class SubquadraticVerdict:
    verdict: Literal["subquadratic", "not-subquadratic-modulo-3SUM", "not-1-series-parallel"]
    trace: tuple[str, ...]


def decide_subquadratic_1sp(doc: dict) -> SubquadraticVerdict:
    """Three-rule decision procedure on a graph made of internally disjoint
    source-to-sink paths: a direct edge settles it; length-2 paths are
    irrelevant and get removed; three or more surviving paths make the join
    as hard as 3-SUM, fewer keep it subquadratic."""
    trace: list[str] = []
    source, sink = doc.get("source"), doc.get("sink")
    paths = [list(p) for p in doc.get("paths", [])]
    direct = bool(doc.get("direct_edge", False))
    if source is None or sink is None or source == sink:
        return SubquadraticVerdict("not-1-series-parallel", ("missing or equal source/sink",))
    seen_internal: set = set()
    for p in paths:
        if len(p) < 2 or p[0] != source or p[-1] != sink:
            return SubquadraticVerdict(
                "not-1-series-parallel", (f"path {p} does not run source to sink",)
            )
        internal = p[1:-1]
        if source in internal or sink in internal or len(set(internal)) != len(internal):
            return SubquadraticVerdict(
                "not-1-series-parallel", (f"path {p} revisits a node",)
            )
        if seen_internal & set(internal):
            return SubquadraticVerdict(
                "not-1-series-parallel", (f"path {p} shares internal nodes with another path",)
            )
        seen_internal.update(internal)
    if any(len(p) == 2 for p in paths):
        direct = True
    if direct:
        trace.append("rule 1: direct source-sink edge present")
        return SubquadraticVerdict("subquadratic", tuple(trace))
    trace.append("rule 1: no direct source-sink edge")
    survivors = [p for p in paths if len(p) - 1 != 2]
    removed = len(paths) - len(survivors)
    trace.append(f"rule 2: removed {removed} length-2 path(s)")
    if len(survivors) >= 3:
        trace.append(f"rule 3: {len(survivors)} paths of length >= 3 remain")
        return SubquadraticVerdict("not-subquadratic-modulo-3SUM", tuple(trace))
    trace.append(f"rule 3: only {len(survivors)} path(s) of length >= 3 remain")
    return SubquadraticVerdict("subquadratic", tuple(trace))
