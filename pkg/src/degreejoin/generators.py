"""Synthetic instance generators: regular tripartite graphs, matchings,
cycles, complete bipartite shapes, source/sink path graphs, and seeded random
instances.  These back the test suites and the ``gen`` CLI subcommand.
"""

from __future__ import annotations

import random
from dataclasses import dataclass, field
from typing import Sequence

from .relational import Catalog, QueryHypergraph, make_query


@dataclass
class Instance:
    catalog: Catalog
    query: QueryHypergraph
    name: str
    acyclic_hint: bool | None = None
    meta: dict = field(default_factory=dict)


def build_instance(
    name: str,
    tables: Sequence[tuple[str, Sequence[str], Sequence[tuple]]],
    output: Sequence[str] | None = None,
) -> Instance:
    """tables: (relation name, attribute names, rows of stringable values)."""
    cat = Catalog()
    for rel_name, attrs, rows in tables:
        cat.add_relation(rel_name, list(attrs), [[str(v) for v in row] for row in rows])
    rels = [cat.relations[t[0]] for t in tables]
    out_mask = None
    if output is not None:
        out_mask = 0
        for a in output:
            out_mask |= 1 << cat.attr_id(a)
    return Instance(catalog=cat, query=make_query(rels, out_mask), name=name)


def _circulant(m: int, d: int, left: str, right: str) -> list[tuple[str, str]]:
    return [(f"{left}{v}", f"{right}{(v + j) % m}") for v in range(m) for j in range(d)]


def d_regular_tripartite(n_edges: int, d: int) -> Instance:
    """Triangle query R(X,Y), S(Y,Z), T(Z,X); every value has degree exactly d
    and every relation has n_edges tuples."""
    if n_edges % d:
        raise ValueError("n_edges must be a multiple of d")
    m = n_edges // d
    inst = build_instance(
        f"dreg[N={n_edges},d={d}]",
        [
            ("R", ["X", "Y"], _circulant(m, d, "x", "y")),
            ("S", ["Y", "Z"], _circulant(m, d, "y", "z")),
            ("T", ["Z", "X"], _circulant(m, d, "z", "x")),
        ],
    )
    inst.meta.update(n_edges=n_edges, degree=d, classes=m)
    return inst


def matching_triangle(n: int) -> Instance:
    rows = [(f"v{i}", f"v{i}") for i in range(n)]
    inst = build_instance(
        f"matching[N={n}]",
        [("R", ["X", "Y"], rows), ("S", ["Y", "Z"], rows), ("T", ["Z", "X"], rows)],
    )
    inst.meta.update(n=n)
    return inst


def cycle_instance(n: int, n_edges: int, d: int) -> Instance:
    """Cycle query of length n with circulant d-regular relations."""
    if n_edges % d:
        raise ValueError("n_edges must be a multiple of d")
    m = n_edges // d
    tables = []
    for i in range(n):
        a, b = f"X{i}", f"X{(i + 1) % n}"
        tables.append((f"R{i}", [a, b], _circulant(m, d, f"v{i}_", f"v{(i + 1) % n}_")))
    inst = build_instance(f"cycle[n={n},N={n_edges},d={d}]", tables)
    inst.acyclic_hint = False
    inst.meta.update(cycle_len=n, n_edges=n_edges, degree=d)
    return inst


def chain_instance(k: int, n_edges: int, d: int) -> Instance:
    if n_edges % d:
        raise ValueError("n_edges must be a multiple of d")
    m = n_edges // d
    tables = []
    for i in range(k):
        tables.append(
            (f"R{i}", [f"X{i}", f"X{i + 1}"], _circulant(m, d, f"v{i}_", f"v{i + 1}_"))
        )
    inst = build_instance(f"chain[k={k},N={n_edges},d={d}]", tables)
    inst.acyclic_hint = True
    return inst


def k2n_instance(n: int, n_edges: int, d: int) -> Instance:
    """K_{2,n}: X and Z each joined to every Y_i."""
    if n_edges % d:
        raise ValueError("n_edges must be a multiple of d")
    m = n_edges // d
    tables = []
    for i in range(n):
        tables.append((f"R{i}", ["X", f"Y{i}"], _circulant(m, d, "x", f"y{i}_")))
        tables.append((f"S{i}", [f"Y{i}", "Z"], _circulant(m, d, f"y{i}_", "z")))
    inst = build_instance(f"k2n[n={n},N={n_edges},d={d}]", tables)
    inst.acyclic_hint = n <= 1
    return inst


def one_sp_graph(path_lengths: Sequence[int], direct_edge: bool) -> dict:
    """Decision-procedure input: a source/sink graph given by its paths."""
    paths = []
    for pi, length in enumerate(path_lengths):
        inner = [f"u{pi}_{j}" for j in range(length - 1)]
        paths.append(["S"] + inner + ["T"])
    return {"source": "S", "sink": "T", "paths": paths, "direct_edge": bool(direct_edge)}


def one_sp_instance(path_lengths: Sequence[int], direct_edge: bool, n_edges: int, d: int) -> Instance:
    """Relational instance over a source/sink path graph (one relation per edge)."""
    graph = one_sp_graph(path_lengths, direct_edge)
    if n_edges % d:
        raise ValueError("n_edges must be a multiple of d")
    m = n_edges // d
    tables = []
    idx = 0
    edges: list[tuple[str, str]] = []
    for path in graph["paths"]:
        edges.extend(zip(path, path[1:]))
    if graph["direct_edge"]:
        edges.append(("S", "T"))
    for a, b in edges:
        tables.append((f"E{idx}", [a, b], _circulant(m, d, f"{a}#", f"{b}#")))
        idx += 1
    inst = build_instance(f"1sp[{list(path_lengths)},edge={direct_edge}]", tables)
    inst.meta["graph"] = graph
    return inst


# ---------------------------------------------------------------------------
# Seeded random instances (oracle-equivalence corpus)

_SHAPES = (
    "single",
    "chain2",
    "chain3",
    "triangle",
    "star3",
    "cycle4",
    "path_plus_unary",
    "random",
)


def random_instance(seed: int, max_domain: int = 8, max_tuples: int = 60) -> Instance:
    """A small random query+database: <=5 relations, <=4 attributes each.

    Shapes rotate through chains, triangles, stars, cycles, and random
    hypergraphs; tuple counts and domains stay oracle-friendly.
    """
    rng = random.Random(seed)
    shape = _SHAPES[seed % len(_SHAPES)]
    dom = rng.randint(3, max_domain)

    if shape == "single":
        schemas = [("R0", ["A", "B"])]
    elif shape == "chain2":
        schemas = [("R0", ["A", "B"]), ("R1", ["B", "C"])]
    elif shape == "chain3":
        schemas = [("R0", ["A", "B"]), ("R1", ["B", "C"]), ("R2", ["C", "D"])]
    elif shape == "triangle":
        schemas = [("R0", ["A", "B"]), ("R1", ["B", "C"]), ("R2", ["C", "A"])]
    elif shape == "star3":
        schemas = [("R0", ["A", "B"]), ("R1", ["A", "C"]), ("R2", ["A", "D"])]
    elif shape == "cycle4":
        schemas = [
            ("R0", ["A", "B"]),
            ("R1", ["B", "C"]),
            ("R2", ["C", "D"]),
            ("R3", ["D", "A"]),
        ]
    elif shape == "path_plus_unary":
        schemas = [("R0", ["A", "B"]), ("R1", ["B", "C"]), ("R2", ["B"])]
    else:
        all_attrs = ["A", "B", "C", "D", "E"][: rng.randint(3, 5)]
        n_rel = rng.randint(2, 5)
        schemas = []
        used: set[str] = set()
        for i in range(n_rel):
            arity = rng.randint(1, min(4, len(all_attrs)))
            attrs = rng.sample(all_attrs, arity)
            schemas.append((f"R{i}", attrs))
            used.update(attrs)
        # drop attributes that landed in no relation from the universe
        all_attrs = [a for a in all_attrs if a in used]
        # keep it connected so bounds and engines agree on one component
        schemas = _connect(schemas, rng)

    budget = rng.randint(len(schemas) * 3, max_tuples)
    per_rel = max(2, budget // len(schemas))
    tables = []
    for name, attrs in schemas:
        n_rows = rng.randint(1, per_rel)
        rows = {tuple(rng.randint(0, dom - 1) for _ in attrs) for _ in range(n_rows)}
        tables.append((name, attrs, sorted(rows)))
    inst = build_instance(f"rand[{seed}:{shape}]", tables)
    inst.meta.update(seed=seed, shape=shape, domain=dom)
    return inst


def _connect(schemas, rng):
    """Rewrite attribute choices until the hypergraph is one component."""
    while True:
        comps: list[set[str]] = []
        for _, attrs in schemas:
            touching = [c for c in comps if c & set(attrs)]
            merged = set(attrs).union(*touching) if touching else set(attrs)
            comps = [c for c in comps if not (c & set(attrs))] + [merged]
        if len(comps) <= 1:
            return schemas
        # bridge two components through a shared attribute
        a = sorted(comps[0])[0]
        b = sorted(comps[1])[0]
        for i, (name, attrs) in enumerate(schemas):
            if b in attrs and a not in attrs:
                attrs = list(attrs)
                attrs[attrs.index(b)] = a
                schemas[i] = (name, attrs)
                break
        else:
            return schemas
