import itertools
import math
import random

import numpy as np
import pytest

from degreejoin.lp import (
    LinearProgram,
    SubsetConstraintGraph,
    chain_to,
    solve_lp,
    subset_shortest_paths,
)


def vertex_enumeration_min(lp: LinearProgram):
    """Independent oracle: evaluate every basic feasible point of the
    polyhedron {Ax {<=,>=,=} b, x >= 0} by intersecting constraint boundaries."""
    n = len(lp.names)
    rows = []
    for coeffs, rel, rhs in lp.rows:
        rows.append((np.array(coeffs, float), rel, rhs))
    for i in range(n):
        e = np.zeros(n)
        e[i] = 1.0
        rows.append((e, ">=", 0.0))
    best = None
    for combo in itertools.combinations(range(len(rows)), n):
        A = np.array([rows[i][0] for i in combo])
        b = np.array([rows[i][2] for i in combo])
        if abs(np.linalg.det(A)) < 1e-12:
            continue
        x = np.linalg.solve(A, b)
        ok = True
        for coeffs, rel, rhs in rows:
            v = float(coeffs @ x)
            if rel == "<=" and v > rhs + 1e-9:
                ok = False
            elif rel == ">=" and v < rhs - 1e-9:
                ok = False
            elif rel == "=" and abs(v - rhs) > 1e-9:
                ok = False
            if not ok:
                break
        if not ok:
            continue
        obj = float(np.dot(lp.objective, x))
        if best is None or (obj < best if lp.sense == "min" else obj > best):
            best = obj
    return best


class TestSimplex:
    def test_one_variable(self):
        lp = LinearProgram(names=["x"], objective=[1.0], sense="min")
        lp.add([1.0], ">=", 3.0)
        sol = solve_lp(lp)
        assert sol.optimal
        assert sol.objective == pytest.approx(3.0, abs=1e-9)
        assert sol.assignment["x"] == pytest.approx(3.0, abs=1e-9)
        assert sol.tight == [0]

    def test_agm_triangle_program(self):
        n = 1000.0
        lp = LinearProgram(names=["R", "S", "T"], objective=[math.log(n)] * 3, sense="min")
        lp.add([1, 0, 1], ">=", 1)  # X covered by R, T
        lp.add([1, 1, 0], ">=", 1)  # Y
        lp.add([0, 1, 1], ">=", 1)  # Z
        sol = solve_lp(lp)
        assert sol.objective == pytest.approx(1.5 * math.log(n), rel=1e-9)
        for name in ("R", "S", "T"):
            assert sol.assignment[name] == pytest.approx(0.5, abs=1e-9)

    def test_infeasible_status(self):
        lp = LinearProgram(names=["x"], objective=[1.0])
        lp.add([1.0], "<=", 1.0)
        lp.add([1.0], ">=", 2.0)
        assert solve_lp(lp).status == "infeasible"

    def test_unbounded_status(self):
        lp = LinearProgram(names=["x"], objective=[1.0], sense="max")
        lp.add([1.0], ">=", 1.0)
        assert solve_lp(lp).status == "unbounded"

    def test_random_programs_match_vertex_enumeration(self):
        rng = random.Random(123)
        solved = 0
        for _ in range(40):
            n = 4
            lp = LinearProgram(
                names=[f"x{i}" for i in range(n)],
                objective=[rng.randint(1, 5) for _ in range(n)],
                sense="min",
            )
            for _ in range(rng.randint(2, 5)):
                coeffs = [rng.randint(0, 3) for _ in range(n)]
                if all(c == 0 for c in coeffs):
                    coeffs[rng.randrange(n)] = 1
                lp.add(coeffs, ">=", rng.randint(1, 9))
            sol = solve_lp(lp)
            oracle = vertex_enumeration_min(lp)
            assert sol.optimal and oracle is not None
            assert sol.objective == pytest.approx(oracle, abs=1e-7)
            solved += 1
        assert solved == 40

    def test_objective_invariant_under_row_scaling_and_reordering(self):
        lp = LinearProgram(names=["a", "b"], objective=[3.0, 2.0], sense="min")
        lp.add([1, 1], ">=", 4)
        lp.add([2, 1], ">=", 5)
        base = solve_lp(lp).objective
        lp2 = LinearProgram(names=["a", "b"], objective=[3.0, 2.0], sense="min")
        lp2.add([4, 2], ">=", 10)  # scaled row, swapped order
        lp2.add([0.5, 0.5], ">=", 2)
        assert solve_lp(lp2).objective == pytest.approx(base, rel=1e-9)


def graph_from_pairs(universe_mask, rels):
    """rels: list of (schema_mask, {(A, B): degree count})."""
    fixed = []
    for mask, pairs in rels:
        fixed.append((mask, {k: math.log(max(v, 1.0)) for k, v in pairs.items()}))
    return SubsetConstraintGraph(universe_mask=universe_mask, relations=tuple(fixed))


def triangle_graph(n, deg_x):
    """R(X,Y), S(Y,Z), T(Z,X) with |R|=|S|=|T|=n and X-degree deg_x in R, T."""
    X, Y, Z = 1, 2, 4

    def pairs(a, b, size, da, db):
        return {
            (0, a): size / db,
            (0, b): size / da,
            (0, a | b): size,
            (a, a | b): da,
            (b, a | b): db,
        }

    return graph_from_pairs(
        7,
        [
            (X | Y, pairs(X, Y, n, deg_x, n / deg_x if deg_x else 1)),
            (Y | Z, pairs(Y, Z, n, math.isqrt(n), math.isqrt(n))),
            (Z | X, pairs(Z, X, n, math.isqrt(n), deg_x)),
        ],
    )


def bellman_ford(g: SubsetConstraintGraph, source=0):
    """Independent oracle for the lattice distances."""
    nodes = list(range(g.universe_mask + 1))
    edges = []
    for s in nodes:
        for a in range(g.universe_mask.bit_length()):
            if s & (1 << a):
                edges.append((s, s & ~(1 << a), 0.0))
        for schema, ws in g.relations:
            for (amask, bmask), w in ws.items():
                if amask & ~s == 0:
                    t = s | bmask
                    if t != s:
                        edges.append((s, t, w))
    dist = {n: math.inf for n in nodes}
    dist[source] = 0.0
    for _ in range(len(nodes)):
        changed = False
        for s, t, w in edges:
            if dist[s] + w < dist[t] - 1e-15:
                dist[t] = dist[s] + w
                changed = True
        if not changed:
            break
    return dist


class TestSubsetShortestPaths:
    def test_single_relation_unit_degrees(self):
        n = 512
        mask = 0b11
        g = graph_from_pairs(
            mask,
            [(mask, {(0, 1): n, (0, 2): n, (0, 3): n, (1, 3): 1, (2, 3): 1})],
        )
        dist, pred = subset_shortest_paths(g)
        assert dist[mask] == pytest.approx(math.log(n), rel=1e-12)
        assert len(chain_to(pred, mask)) >= 1

    def test_triangle_low_degree_case(self):
        n, h = 10000, 10  # h < sqrt(n)
        g = triangle_graph(n, h)
        dist, _ = subset_shortest_paths(g)
        assert dist[7] <= math.log(n * h) + 1e-9

    def test_triangle_high_degree_case(self):
        n, h = 10000, 1000  # h > sqrt(n); #distinct X values = n/h
        X, Y, Z = 1, 2, 4
        g = graph_from_pairs(
            7,
            [
                (X | Y, {(0, X): n / h, (0, Y): n, (0, X | Y): n, (X, X | Y): h, (Y, X | Y): n / h}),
                (Y | Z, {(0, Y): n, (0, Z): n, (0, Y | Z): n, (Y, Y | Z): 1, (Z, Y | Z): 1}),
                (Z | X, {(0, Z): n, (0, X): n / h, (0, X | Z): n, (Z, X | Z): n / h, (X, X | Z): h}),
            ],
        )
        dist, _ = subset_shortest_paths(g)
        assert dist[7] <= math.log(n * n / h) + 1e-9

    def test_matches_bellman_ford_on_random_graphs(self):
        rng = random.Random(77)
        for _ in range(25):
            universe = 0b111
            rels = []
            for _ in range(rng.randint(1, 3)):
                schema = rng.choice([0b011, 0b101, 0b110, 0b111])
                pairs = {}
                subs = [m for m in range(8) if m & ~schema == 0]
                for b in subs:
                    for a in subs:
                        if a & ~b == 0 and a != b:
                            pairs[(a, b)] = rng.randint(1, 50)
                rels.append((schema, pairs))
            g = graph_from_pairs(universe, rels)
            dist, _ = subset_shortest_paths(g)
            oracle = bellman_ford(g)
            for node in range(8):
                if node in dist:
                    assert dist[node] == pytest.approx(oracle[node], abs=1e-9)
                else:
                    assert oracle[node] == math.inf

    def test_triangle_inequality_on_all_edges(self):
        g = triangle_graph(4096, 8)
        dist, _ = subset_shortest_paths(g)
        for s in range(8):
            if s not in dist:
                continue
            for a in range(3):
                if s & (1 << a):
                    assert dist[s & ~(1 << a)] <= dist[s] + 1e-12
            for schema, ws in g.relations:
                for (amask, bmask), w in ws.items():
                    if amask & ~s == 0:
                        t = s | bmask
                        assert dist[t] <= dist[s] + w + 1e-12

    def test_agrees_with_explicit_simplex_formulation(self):
        rng = random.Random(5)
        for _ in range(8):
            universe = 0b111
            rels = []
            for _ in range(rng.randint(1, 2)):
                schema = rng.choice([0b011, 0b110, 0b111])
                subs = [m for m in range(8) if m & ~schema == 0]
                pairs = {}
                for b in subs:
                    for a in subs:
                        if a & ~b == 0 and a != b:
                            pairs[(a, b)] = rng.randint(1, 30)
                rels.append((schema, pairs))
            g = graph_from_pairs(universe, rels)
            dist, _ = subset_shortest_paths(g)
            target = 0
            for schema, _ws in rels:
                target |= schema

            names = [f"s{m}" for m in range(8)]
            objective = [0.0] * 8
            objective[target] = 1.0
            lp = LinearProgram(names=names, objective=objective, sense="max")
            row = [0.0] * 8
            row[0] = 1.0
            lp.add(row, "=", 0.0)
            for small in range(8):
                for big in range(8):
                    if small != big and small & ~big == 0:
                        row = [0.0] * 8
                        row[small] = 1.0
                        row[big] = -1.0
                        lp.add(row, "<=", 0.0)  # s_small <= s_big
            for schema, ws in rels:
                logw = {k: math.log(max(v, 1.0)) for k, v in ws.items()}
                for (amask, bmask), w in logw.items():
                    for e in range(8):
                        src, dst = amask | e, bmask | e
                        if dst == src:
                            continue
                        row = [0.0] * 8
                        row[dst] += 1.0
                        row[src] -= 1.0
                        if any(row):
                            lp.add(row, "<=", w)
            sol = solve_lp(lp)
            assert sol.optimal
            assert sol.objective == pytest.approx(dist[target], abs=1e-7)
