"""Deterministic simulated MapReduce runtime.

Processors are dictionary entries keyed by hash-coordinate tuples; the costs
of interest are counting arguments (tuples moved per round, tuples held per
processor), so no actual concurrency is needed for fidelity.  Hashing is a
seeded 64-bit mix, making every metric reproducible bit for bit.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from typing import Sequence

from .bounds import RelProfile, dbp
from .darts import generic_join
from .degrees import PartitionedQuery, partition_catalog
from .ghd import OpCounter
from .relational import (
    QueryHypergraph,
    Relation,
    mask_iter,
    project,
    relation_union,
)

MASK64 = (1 << 64) - 1


def mix64(*parts: int) -> int:
    """splitmix64-style avalanche over a sequence of integers."""
    h = 0x9E3779B97F4A7C15
    for p in parts:
        h = (h ^ (p & MASK64)) * 0xBF58476D1CE4E5B9 & MASK64
        h ^= h >> 27
        h = h * 0x94D049BB133111EB & MASK64
        h ^= h >> 31
    return h


@dataclass
class RoundStats:
    name: str
    communication: int
    processors: int
    max_load: int
    load_histogram: dict[int, int] = field(default_factory=dict)


@dataclass
class SimMetrics:
    rounds: int = 0
    total_communication: int = 0
    per_round: list[RoundStats] = field(default_factory=list)

    @property
    def max_load(self) -> int:
        return max((r.max_load for r in self.per_round), default=0)

    def add_round(self, name: str, loads: dict, communication: int) -> None:
        histogram: dict[int, int] = {}
        for load in loads.values():
            histogram[load] = histogram.get(load, 0) + 1
        self.rounds += 1
        self.total_communication += communication
        self.per_round.append(
            RoundStats(
                name=name,
                communication=communication,
                processors=len(loads),
                max_load=max(loads.values(), default=0),
                load_histogram=dict(sorted(histogram.items())),
            )
        )

    def merge(self, other: "SimMetrics", parallel: bool = False) -> None:
        """Sequential merge appends rounds; parallel merge overlays them
        (round counts take the max, communications add)."""
        if not parallel:
            self.rounds += other.rounds
            self.per_round.extend(other.per_round)
            self.total_communication += other.total_communication
            return
        for i, r in enumerate(other.per_round):
            if i < len(self.per_round):
                mine = self.per_round[i]
                mine.communication += r.communication
                mine.processors += r.processors
                mine.max_load = max(mine.max_load, r.max_load)
                for load, cnt in r.load_histogram.items():
                    mine.load_histogram[load] = mine.load_histogram.get(load, 0) + cnt
            else:
                self.per_round.append(r)
        self.rounds = max(self.rounds, other.rounds)
        self.total_communication += other.total_communication


@dataclass(frozen=True)
class ShareAssignment:
    shares: dict[int, int]
    raw_exponents: dict[int, float]

    @property
    def processor_count(self) -> int:
        n = 1
        for s in self.shares.values():
            n *= s
        return n


def shares_from_witness(witness: dict) -> ShareAssignment:
    """Integer share per attribute: the packing exponent turned back into a
    count, rounded half-up with floor one."""
    raw = dict(witness.get("shares", {}))
    shares = {a: max(1, int(math.floor(math.exp(v) + 0.5))) for a, v in raw.items()}
    return ShareAssignment(shares=shares, raw_exponents=raw)


def shares_round(
    subrels: Sequence[tuple[Relation, int]],
    assignment: ShareAssignment,
    seed: int,
    name: str = "shares",
) -> tuple[Relation, SimMetrics]:
    """One hashed-grid round: every projected tuple goes to all processors
    matching its hash coordinates; each processor joins its fragments."""
    attrs = sorted(assignment.shares)
    loads: dict[tuple, int] = {}
    boxes: dict[tuple, list[list[tuple[int, ...]]]] = {}
    comm = 0
    live_coords = [
        tuple(range(assignment.shares[a])) for a in attrs
    ]
    for idx, (rel, amask) in enumerate(subrels):
        piece = project(rel, amask)
        piece_attrs = list(mask_iter(piece.mask))
        fixed_pos = [attrs.index(a) for a in piece_attrs]
        free_axes = [
            live_coords[i] for i, a in enumerate(attrs) if not piece.mask & (1 << a)
        ]
        free_pos = [i for i, a in enumerate(attrs) if not piece.mask & (1 << a)]
        for row in piece.rows:
            coord_base: list[int] = [0] * len(attrs)
            for p, a, v in zip(fixed_pos, piece_attrs, row):
                coord_base[p] = mix64(seed, a, v) % assignment.shares[a]
            for combo in itertools.product(*free_axes):
                coord = list(coord_base)
                for p, c in zip(free_pos, combo):
                    coord[p] = c
                key = tuple(coord)
                loads[key] = loads.get(key, 0) + 1
                boxes.setdefault(key, [[] for _ in subrels])[idx].append(row)
                comm += 1
    outputs = []
    for key in sorted(boxes):
        locals_ = boxes[key]
        frags = [
            Relation(f"f{idx}", tuple(mask_iter(subrels[idx][1])), rows)
            for idx, rows in enumerate(locals_)
        ]
        if any(len(f) == 0 for f in frags):
            continue
        outputs.append(generic_join(frags, counter=OpCounter()))
    metrics = SimMetrics()
    metrics.add_round(name, loads, comm)
    out_mask = 0
    for _, amask in subrels:
        out_mask |= amask
    if outputs:
        result = relation_union(outputs, name="shares")
    else:
        result = Relation("shares", tuple(mask_iter(out_mask)), [])
    return result, metrics


def round1_formula(subrels: Sequence[tuple[Relation, int]], assignment: ShareAssignment) -> int:
    """Closed form for the hashed-grid communication."""
    total = 0
    for rel, amask in subrels:
        repl = 1
        for a, s in assignment.shares.items():
            if not amask & (1 << a):
                repl *= s
        total += len(project(rel, amask)) * repl
    return total


# ---------------------------------------------------------------------------
# Degree computation in rounds


def mr_degree(rel: Relation, amask: int, L: int, seed: int) -> tuple[dict, SimMetrics]:
    """Grid scatter then an L-ary aggregation tree; counts per value match the
    sequential computation exactly."""
    metrics = SimMetrics()
    n = len(rel)
    if n == 0:
        return {}, metrics
    cols = rel.columns_for(amask)
    k_width = max(1, math.ceil(n / L))
    state: dict[tuple[int, int], dict[tuple, int]] = {}
    loads: dict[tuple[int, int], int] = {}
    for i, row in enumerate(rel.rows):
        v = tuple(row[c] for c in cols)
        k1 = mix64(seed, 1, *v) % n
        k2 = mix64(seed, 2, i) % k_width + 1
        proc = (k1, k2)
        state.setdefault(proc, {})
        state[proc][v] = state[proc].get(v, 0) + 1
        loads[proc] = loads.get(proc, 0) + 1
    metrics.add_round("degree-scatter", loads, n)
    width = k_width
    while width > 1:
        new_width = math.ceil(width / L)
        new_state: dict[tuple[int, int], dict[tuple, int]] = {}
        loads = {}
        comm = 0
        for (k1, k2), counts in sorted(state.items()):
            target = (k1, math.ceil(k2 / L))
            moved = target != (k1, k2)
            box = new_state.setdefault(target, {})
            for v, c in counts.items():
                box[v] = box.get(v, 0) + c
                if moved:
                    comm += 1
                    loads[target] = loads.get(target, 0) + 1
        metrics.add_round("degree-aggregate", loads, comm)
        state = new_state
        width = new_width
    final: dict[tuple, int] = {}
    for counts in state.values():
        for v, c in counts.items():
            final[v] = final.get(v, 0) + c
    return final, metrics


def expected_degree_rounds(n: int, L: int) -> int:
    """1 + ceil(log_L(n / L)), computed without floating logs."""
    rounds = 1
    width = max(1, math.ceil(n / L))
    while width > 1:
        width = math.ceil(width / L)
        rounds += 1
    return rounds


# ---------------------------------------------------------------------------
# The three-round join


@dataclass
class ParallelRun:
    output: Relation
    metrics: SimMetrics
    per_config: list[dict]
    predicted_budget: float


def parallel_join(
    q: QueryHypergraph,
    L: int,
    seed: int,
    skip_degree_rounds: bool = False,
    pq: PartitionedQuery | None = None,
) -> ParallelRun:
    if pq is None:
        pq = partition_catalog(q, L)
    metrics = SimMetrics()
    if not skip_degree_rounds:
        deg_metrics = SimMetrics()
        for rel in q.relations:
            for amask in _nonempty_submasks(rel.mask):
                _counts, m = mr_degree(rel, amask, L, mix64(seed, rel.mask, amask))
                deg_metrics.merge(m, parallel=True)
        metrics.merge(deg_metrics)

    pieces: list[Relation] = []
    per_config: list[dict] = []
    max_config_dbp = 0.0
    join_metrics = SimMetrics()
    for cfg in pq.configs():
        profiles = [RelProfile.from_stats(f.stats) for f in cfg.fragments]
        bound = dbp(profiles, float(L), q.attrs_mask)
        cover = bound.witness["cover"]
        assignment = shares_from_witness(bound.witness)
        max_config_dbp = max(max_config_dbp, bound.absolute)
        rels = cfg.relations()
        subrels = [(rels[ri], amask) for ri, amask in cover]
        j1, m1 = shares_round(subrels, assignment, mix64(seed, 3, cfg.index))
        cfg_metrics = m1
        covered_fully = {ri for ri, amask in cover if amask == rels[ri].mask}
        stragglers = [r for i, r in enumerate(rels) if i not in covered_fully]
        if stragglers:
            # each semijoin is hash-distributed on the straggler's key; a
            # processor holds one key's tuples from both sides
            semi_results = []
            comm2 = len(j1) + sum(len(r) for r in stragglers)
            loads2: dict[tuple, int] = {}
            for i, r in enumerate(stragglers):
                cols = j1.columns_for(r.mask)
                keys = set(r.rows)
                kept = []
                for row in j1.rows:
                    key = tuple(row[c] for c in cols)
                    loads2[(i, key)] = loads2.get((i, key), 0) + 1
                    if key in keys:
                        kept.append(row)
                for row in r.rows:
                    loads2[(i, row)] = loads2.get((i, row), 0) + 1
                semi_results.append(kept)
            cfg_metrics.add_round("semijoin", loads2, comm2)
            # intersection is hash-distributed on the full output tuple
            comm3 = sum(len(rows) for rows in semi_results)
            loads3: dict[tuple, int] = {}
            for rows in semi_results:
                for row in rows:
                    loads3[row] = loads3.get(row, 0) + 1
            final_rows = set(semi_results[0])
            for rows in semi_results[1:]:
                final_rows &= set(rows)
            cfg_metrics.add_round("intersect", loads3, comm3)
            out_c = Relation("joined", j1.schema, final_rows)
        else:
            out_c = j1
        pieces.append(project(out_c, q.output_mask))
        per_config.append(
            {
                "config": cfg.index,
                "cover": cover,
                "shares": dict(sorted(assignment.shares.items())),
                "raw_share_exponents": {
                    a: round(v, 9) for a, v in sorted(assignment.raw_exponents.items())
                },
                "dbp_absolute": bound.absolute,
                "round1_communication": m1.per_round[0].communication,
                "round1_formula": round1_formula(subrels, assignment),
                "round1_max_load": m1.per_round[0].max_load,
                "processors": assignment.processor_count,
            }
        )
        join_metrics.merge(cfg_metrics, parallel=True)
    metrics.merge(join_metrics)
    if pieces:
        output = relation_union(pieces, name="join")
    else:
        output = Relation("join", tuple(mask_iter(q.output_mask)), [])
    predicted = communication_budget(q, L, max_config_dbp, len(output))
    return ParallelRun(
        output=output, metrics=metrics, per_config=per_config, predicted_budget=predicted
    )


def communication_budget(
    q: QueryHypergraph, L: int, max_config_dbp: float, out_size: int
) -> float:
    """Input plus output plus the load-scaled worst configuration bound."""
    return q.input_size() + out_size + L * max_config_dbp


def _nonempty_submasks(mask: int):
    sub = mask
    while sub:
        yield sub
        sub = (sub - 1) & mask
