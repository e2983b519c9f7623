"""Output-size bounds: the classic fractional-cover bound (AGM), the
degree-based packing bound (DBP), and the difference-constraint bound (MO),
plus per-configuration comparison reports.

All bound values are tracked as natural logs of absolute tuple counts;
exponents are derived on demand for a given base (usually the total input
size).  Per-configuration bounds always use the recomputed statistics of the
configuration's fragments.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Mapping, Sequence

from .degrees import DegreeStats, PartitionedQuery
from .lp import (
    LinearProgram,
    SubsetConstraintGraph,
    chain_to,
    solve_lp,
    subset_shortest_paths,
)
from .relational import DegreeJoinError, mask_iter, submasks

NEG_INF = float("-inf")


class UncoveredAttributeError(DegreeJoinError):
    """Some attribute is in no relation; the cover LPs are infeasible."""


class InvariantViolation(DegreeJoinError):
    """A proven ordering between bounds failed; implementation bug."""


@dataclass(frozen=True)
class RelProfile:
    """The statistics a bound computation needs from one relation."""

    name: str
    mask: int
    size: float
    proj: Mapping[int, float]
    pair: Mapping[tuple[int, int], float]

    @staticmethod
    def from_stats(s: DegreeStats) -> "RelProfile":
        return RelProfile(
            name=s.relation,
            mask=s.mask,
            size=float(s.size),
            proj={k: float(v) for k, v in s.proj_size.items()},
            pair={k: float(v) for k, v in s.pair_max.items()},
        )


@dataclass(frozen=True)
class BoundValue:
    kind: str
    nats: float
    witness: dict = field(default_factory=dict, compare=False)

    @property
    def absolute(self) -> float:
        return 0.0 if self.nats == NEG_INF else math.exp(self.nats)

    def exponent(self, base: float) -> float:
        if self.nats == NEG_INF:
            return NEG_INF
        if base <= 1:
            return 0.0
        return self.nats / math.log(base)


Cover = tuple[tuple[int, int], ...]  # ((relation index, attr subset mask), ...)


# ---------------------------------------------------------------------------
# AGM


_agm_cache: dict[tuple, tuple[float, tuple[float, ...]]] = {}


def agm(profiles: Sequence[RelProfile], attrs_mask: int | None = None) -> BoundValue:
    if attrs_mask is None:
        attrs_mask = 0
        for p in profiles:
            attrs_mask |= p.mask
    if any(p.size <= 0 for p in profiles):
        return BoundValue("AGM", NEG_INF, {"empty_input": True})
    attrs = list(mask_iter(attrs_mask))
    for a in attrs:
        if not any(p.mask & (1 << a) for p in profiles):
            raise UncoveredAttributeError(f"attribute {a} is covered by no relation")
    key = (attrs_mask, tuple((p.mask, round(p.size, 9)) for p in profiles))
    hit = _agm_cache.get(key)
    if hit is None:
        lp = LinearProgram(
            names=[f"r{i}" for i in range(len(profiles))],
            objective=[math.log(max(p.size, 1.0)) for p in profiles],
            sense="min",
        )
        for a in attrs:
            lp.add([1.0 if p.mask & (1 << a) else 0.0 for p in profiles], ">=", 1.0)
        sol = solve_lp(lp)
        if not sol.optimal:
            raise UncoveredAttributeError(f"AGM program is {sol.status}")
        hit = (sol.objective, tuple(sol.assignment[f"r{i}"] for i in range(len(profiles))))
        if len(_agm_cache) > 100_000:
            _agm_cache.clear()
        _agm_cache[key] = hit
    objective, weights = hit
    return BoundValue(
        "AGM",
        objective,
        {"weights": {p.name or f"r{i}": w for i, (p, w) in enumerate(zip(profiles, weights))}},
    )


# ---------------------------------------------------------------------------
# Covers and the DBP bound


@lru_cache(maxsize=4096)
def _covers_for_masks(rel_masks: tuple[int, ...], attrs_mask: int) -> tuple[Cover, ...]:
    """All irredundant covers: sets of (relation, attribute-subset) pairs whose
    subsets union to the attribute set and where no pair can be dropped.

    Any cover contains an irredundant one whose program is no more
    constrained, so minimizing over these reaches the true minimum.
    """
    attrs = list(mask_iter(attrs_mask))
    if not attrs:
        return ((),)
    by_attr: dict[int, list[tuple[int, int]]] = {a: [] for a in attrs}
    for ri, rmask in enumerate(rel_masks):
        for sub in submasks(rmask & attrs_mask):
            if sub == 0:
                continue
            for a in mask_iter(sub):
                by_attr[a].append((ri, sub))
    found: set[frozenset[tuple[int, int]]] = set()

    def extend(covered: int, chosen: tuple[tuple[int, int], ...]) -> None:
        if covered == attrs_mask:
            pairs = frozenset(chosen)
            for p in pairs:
                rest = 0
                for q in pairs:
                    if q != p:
                        rest |= q[1]
                if rest == attrs_mask:
                    return  # p is redundant
            found.add(pairs)
            return
        target = (~covered & attrs_mask) & -(~covered & attrs_mask)
        a = target.bit_length() - 1
        for pair in by_attr[a]:
            if pair in chosen:
                continue
            extend(covered | pair[1], chosen + (pair,))

    extend(0, ())
    if not found:
        raise UncoveredAttributeError("no cover exists for the attribute set")
    return tuple(sorted(tuple(sorted(c)) for c in found))


def enumerate_covers(profiles: Sequence[RelProfile], attrs_mask: int | None = None) -> list[Cover]:
    if attrs_mask is None:
        attrs_mask = 0
        for p in profiles:
            attrs_mask |= p.mask
    return list(_covers_for_masks(tuple(p.mask for p in profiles), attrs_mask))


_dbp_lp_cache: dict[tuple, tuple[float, tuple[float, ...]] | None] = {}


def _solve_cover_lp(
    attrs: list[int], constraints: tuple[tuple[int, float], ...]
) -> tuple[float, tuple[float, ...]] | None:
    """One packing program: min sum v_a over the given (subset, rhs) rows.
    Cached, since identical programs recur across configurations."""
    key = (tuple(attrs), constraints)
    if key in _dbp_lp_cache:
        return _dbp_lp_cache[key]
    attr_pos = {a: i for i, a in enumerate(attrs)}
    lp = LinearProgram(names=[f"v{a}" for a in attrs], objective=[1.0] * len(attrs))
    for sub, rhs in constraints:
        row = [0.0] * len(attrs)
        for a in mask_iter(sub):
            row[attr_pos[a]] = 1.0
        lp.add(row, ">=", rhs)
    sol = solve_lp(lp)
    result = None
    if sol.optimal:
        result = (sol.objective, tuple(sol.assignment[f"v{a}"] for a in attrs))
    if len(_dbp_lp_cache) > 200_000:
        _dbp_lp_cache.clear()
    _dbp_lp_cache[key] = result
    return result


def dbp(
    profiles: Sequence[RelProfile],
    L: float,
    attrs_mask: int | None = None,
) -> BoundValue:
    """Degree-based packing bound: minimize sum of per-attribute exponents
    over all irredundant covers.  Negative constraint right-hand sides (degree
    below L) clamp to zero, matching the implied nonnegativity of exponents.
    """
    if attrs_mask is None:
        attrs_mask = 0
        for p in profiles:
            attrs_mask |= p.mask
    if any(p.size <= 0 for p in profiles):
        return BoundValue("DBP", NEG_INF, {"empty_input": True})
    attrs = list(mask_iter(attrs_mask))
    if not attrs:
        return BoundValue("DBP", 0.0, {"cover": (), "shares": {}})
    covers = enumerate_covers(profiles, attrs_mask)
    best: tuple[float, Cover, dict[int, float]] | None = None
    for cover in covers:
        rows: list[tuple[int, float]] = []
        for ri, amask in cover:
            p = profiles[ri]
            for sub in submasks(amask):
                if sub == 0:
                    continue
                d = p.pair[(amask & ~sub, amask)]
                rhs = max(0.0, math.log(max(d, 1e-300) / L))
                if rhs > 0.0:
                    rows.append((sub, round(rhs, 12)))
        solved = _solve_cover_lp(attrs, tuple(sorted(set(rows))))
        if solved is None:
            continue
        objective, values = solved
        if best is None or objective < best[0] - 1e-12:
            best = (objective, cover, dict(zip(attrs, values)))
    if best is None:
        raise UncoveredAttributeError("every cover program failed")
    return BoundValue(
        "DBP", best[0], {"cover": best[1], "shares": best[2], "L": L}
    )


# ---------------------------------------------------------------------------
# MO bound via the subset lattice


def constraint_graph(profiles: Sequence[RelProfile], attrs_mask: int) -> SubsetConstraintGraph:
    rels = []
    for p in profiles:
        weights: dict[tuple[int, int], float] = {}
        for b in submasks(p.mask):
            for a in submasks(b):
                if a == b:
                    continue
                weights[(a, b)] = math.log(max(p.pair[(a, b)], 1.0))
        rels.append((p.mask, weights))
    return SubsetConstraintGraph(universe_mask=attrs_mask, relations=tuple(rels))


def mo(
    profiles: Sequence[RelProfile],
    attrs_mask: int | None = None,
    target_mask: int | None = None,
) -> BoundValue:
    """Max objective of the difference-constraint program, solved as a
    shortest path from the empty set; the predecessor chain is kept so callers
    can materialize the witness relation."""
    if attrs_mask is None:
        attrs_mask = 0
        for p in profiles:
            attrs_mask |= p.mask
    if target_mask is None:
        target_mask = attrs_mask
    if any(p.size <= 0 for p in profiles):
        return BoundValue("MO", NEG_INF, {"empty_input": True})
    g = constraint_graph(profiles, attrs_mask)
    dist, pred = subset_shortest_paths(g, 0)
    if target_mask not in dist:
        raise UncoveredAttributeError("target attributes unreachable; uncovered attribute")
    return BoundValue(
        "MO",
        dist[target_mask],
        {"dist": dist, "pred": pred, "chain": chain_to(pred, target_mask)},
    )


# ---------------------------------------------------------------------------
# Per-configuration assembly


def config_profiles(fragments) -> list[RelProfile]:
    return [RelProfile.from_stats(f.stats) for f in fragments]


@dataclass
class ConfigBounds:
    index: int
    signature: tuple
    sizes: tuple[int, ...]
    agm: BoundValue
    dbp: BoundValue
    mo: BoundValue


@dataclass
class BoundReport:
    L: int
    input_size: int
    configs: list[ConfigBounds]
    totals: dict[str, float]
    actual: int | None = None
    violations: list[str] = field(default_factory=list)

    def total_exponent(self, kind: str) -> float:
        t = self.totals[kind]
        if t <= 0:
            return NEG_INF
        if self.input_size <= 1:
            return 0.0
        return math.log(t) / math.log(self.input_size)


def mo_total(pq: PartitionedQuery) -> BoundValue:
    total = 0.0
    for cfg in pq.configs():
        total += mo(config_profiles(cfg.fragments), pq.query.attrs_mask).absolute
    nats = math.log(total) if total > 0 else NEG_INF
    return BoundValue("MO", nats, {"summed_over_configs": True})


def check_config_ordering(cb: ConfigBounds, input_size: int) -> list[str]:
    """The two proven orderings, checked at stated tolerances."""
    out = []
    if cb.dbp.absolute > cb.agm.absolute * (1 + 1e-6):
        out.append(
            f"config {cb.index}: DBP {cb.dbp.absolute:.6g} exceeds AGM {cb.agm.absolute:.6g}"
        )
    cover = cb.dbp.witness.get("cover", ())
    slack = len(cover) * math.log(2) + 1e-6 * max(math.log(max(input_size, 2)), 1.0)
    if cb.mo.nats > cb.dbp.nats + slack:
        out.append(
            f"config {cb.index}: MO nats {cb.mo.nats:.9g} exceeds DBP nats "
            f"{cb.dbp.nats:.9g} plus |C|ln2 {slack:.9g}"
        )
    return out


def bound_report(
    pq: PartitionedQuery,
    actual: int | None = None,
    strict: bool = True,
) -> BoundReport:
    q = pq.query
    input_size = q.input_size()
    rows: list[ConfigBounds] = []
    totals = {"AGM": 0.0, "DBP": 0.0, "MO": 0.0}
    violations: list[str] = []
    for cfg in pq.configs():
        profiles = config_profiles(cfg.fragments)
        cb = ConfigBounds(
            index=cfg.index,
            signature=tuple(f.signature for f in cfg.fragments),
            sizes=tuple(len(f.relation) for f in cfg.fragments),
            agm=agm(profiles, q.attrs_mask),
            dbp=dbp(profiles, float(pq.L), q.attrs_mask),
            mo=mo(profiles, q.attrs_mask),
        )
        rows.append(cb)
        totals["AGM"] += cb.agm.absolute
        totals["DBP"] += cb.dbp.absolute
        totals["MO"] += cb.mo.absolute
        violations.extend(check_config_ordering(cb, input_size))
    report = BoundReport(
        L=pq.L,
        input_size=input_size,
        configs=rows,
        totals=totals,
        actual=actual,
        violations=violations,
    )
    if strict and violations:
        raise InvariantViolation("; ".join(violations))
    return report


def report_table(report: BoundReport, attr_names: Sequence[str] | None = None) -> str:
    """Aligned text table: one row per configuration plus totals."""
    header = ["config", "sizes", "AGM", "DBP", "MO", "AGM/MO"]
    lines = [header]
    for cb in report.configs:
        ratio = cb.agm.absolute / cb.mo.absolute if cb.mo.absolute > 0 else float("inf")
        lines.append(
            [
                str(cb.index),
                "x".join(str(s) for s in cb.sizes),
                f"{cb.agm.absolute:.4g}",
                f"{cb.dbp.absolute:.4g}",
                f"{cb.mo.absolute:.4g}",
                f"{ratio:.3g}",
            ]
        )
    t = report.totals
    ratio = t["AGM"] / t["MO"] if t["MO"] > 0 else float("inf")
    lines.append(
        [
            "total",
            str(report.input_size),
            f"{t['AGM']:.4g}",
            f"{t['DBP']:.4g}",
            f"{t['MO']:.4g}",
            f"{ratio:.3g}",
        ]
    )
    if report.actual is not None:
        lines.append(["actual", "", "", "", str(report.actual), ""])
    widths = [max(len(row[i]) for row in lines) for i in range(len(header))]
    out = []
    for i, row in enumerate(lines):
        out.append("  ".join(cell.rjust(w) for cell, w in zip(row, widths)))
        if i == 0:
            out.append("  ".join("-" * w for w in widths))
    return "\n".join(out)
