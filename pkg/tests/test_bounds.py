import itertools
import math

import pytest

from degreejoin.bounds import (
    BoundValue,
    RelProfile,
    UncoveredAttributeError,
    agm,
    bound_report,
    config_profiles,
    dbp,
    enumerate_covers,
    mo,
    mo_total,
    report_table,
)
from degreejoin.degrees import compute_degrees, partition_catalog
from degreejoin.generators import (
    build_instance,
    d_regular_tripartite,
    matching_triangle,
    random_instance,
)
from degreejoin.relational import reference_join


def profiles_of(instance):
    return [RelProfile.from_stats(compute_degrees(r)) for r in instance.query.relations]


def uniform_profile(name, mask, size):
    """Worst-case profile for a relation of the given size (degrees = size)."""
    from degreejoin.relational import submasks

    proj, pair = {}, {}
    for b in submasks(mask):
        nb = bin(b).count("1")
        proj[b] = 1.0 if b == 0 else float(size)
        for a in submasks(b):
            pair[(a, b)] = float(size) if a != b else 1.0
            if a == b:
                pair[(a, b)] = 1.0
    pair[(0, 0)] = 1.0
    return RelProfile(name=name, mask=mask, size=float(size), proj=proj, pair=pair)


class TestAgm:
    def test_triangle_equal_sizes(self):
        n = 1000
        profs = [
            uniform_profile("R", 0b011, n),
            uniform_profile("S", 0b110, n),
            uniform_profile("T", 0b101, n),
        ]
        bound = agm(profs)
        assert bound.absolute == pytest.approx(n**1.5, rel=1e-6)
        assert bound.exponent(n) == pytest.approx(1.5, abs=1e-9)

    def test_single_relation(self):
        bound = agm([uniform_profile("R", 0b11, 77)])
        assert bound.absolute == pytest.approx(77, rel=1e-9)

    def test_two_relation_chain_matches_vertex_oracle(self):
        n, m = 50, 9
        # cover constraints force w_R = w_S = 1: the only vertex candidates are
        # enumerable by hand over the 2-var LP
        profs = [uniform_profile("R", 0b011, n), uniform_profile("S", 0b110, m)]
        candidates = []
        for wr, ws in itertools.product((0.0, 0.5, 1.0, 2.0), repeat=2):
            if wr >= 1 and ws >= 1 and wr + ws >= 1:
                candidates.append(wr * math.log(n) + ws * math.log(m))
        assert agm(profs).nats == pytest.approx(min(candidates), abs=1e-9)

    def test_uncovered_attribute_is_infeasible(self):
        with pytest.raises(UncoveredAttributeError):
            agm([uniform_profile("R", 0b01, 5)], attrs_mask=0b11)

    def test_empty_relation_gives_zero(self):
        profs = [uniform_profile("R", 0b11, 0)]
        assert agm(profs).absolute == 0.0

    def test_invariant_under_renaming_and_permutation(self):
        inst = d_regular_tripartite(64, 4)
        profs = profiles_of(inst)
        base = agm(profs).nats
        swapped = [profs[2], profs[0], profs[1]]
        assert agm(swapped).nats == pytest.approx(base, abs=1e-9)


class TestCovers:
    def test_triangle_includes_expected_covers(self):
        inst = matching_triangle(4)
        q = inst.query
        profs = profiles_of(inst)
        covers = enumerate_covers(profs)
        mask = {r.name: r.mask for r in q.relations}
        as_named = {
            tuple(sorted((profs[ri].name, am) for ri, am in cover)) for cover in covers
        }
        x = 1 << inst.catalog.attr_id("X")
        y = 1 << inst.catalog.attr_id("Y")
        z = 1 << inst.catalog.attr_id("Z")
        assert tuple(sorted([("R", x | y), ("S", y | z)])) in as_named
        assert tuple(sorted([("R", x), ("S", y | z)])) in as_named

    def test_single_relation_cover(self):
        inst = build_instance("one", [("R", ["A", "B"], [(1, 2)])])
        covers = enumerate_covers(profiles_of(inst))
        assert ((0, 0b11),) in covers

    def test_matches_bruteforce_enumeration(self):
        inst = build_instance(
            "three",
            [("R", ["A", "B"], [(1, 2)]), ("S", ["B", "C"], [(2, 3)]), ("U", ["C"], [(3,)])],
        )
        profs = profiles_of(inst)
        attrs_mask = inst.query.attrs_mask
        got = set(enumerate_covers(profs))

        pair_universe = []
        from degreejoin.relational import submasks

        for ri, p in enumerate(profs):
            for sub in submasks(p.mask):
                if sub:
                    pair_universe.append((ri, sub))
        brute = set()
        for k in range(1, len(pair_universe) + 1):
            for combo in itertools.combinations(pair_universe, k):
                union = 0
                for _, m in combo:
                    union |= m
                if union != attrs_mask:
                    continue
                irredundant = True
                for p in combo:
                    rest = 0
                    for q2 in combo:
                        if q2 != p:
                            rest |= q2[1]
                    if rest == attrs_mask:
                        irredundant = False
                        break
                if irredundant:
                    brute.add(tuple(sorted(combo)))
        assert got == brute


class TestDbp:
    def test_triangle_low_degree(self):
        n, d = 1024, 4  # d < sqrt(n)
        inst = d_regular_tripartite(n, d)
        bound = dbp(profiles_of(inst), 2.0)
        assert bound.absolute <= n * d * (1 + 1e-9)

    def test_triangle_high_degree(self):
        n, d = 1024, 128  # d > sqrt(n)
        inst = d_regular_tripartite(n, d)
        bound = dbp(profiles_of(inst), 2.0)
        assert bound.absolute <= (n * n / d) * (1 + 1e-9)

    def test_single_relation_half(self):
        inst = build_instance("one", [("R", ["A", "B"], [(i, i + 1) for i in range(10)])])
        bound = dbp(profiles_of(inst), 2.0)
        assert bound.absolute == pytest.approx(10 / 2, rel=1e-9)
        assert bound.witness["cover"] == ((0, inst.query.relations[0].mask),)

    def test_never_exceeds_agm_on_random_partitions(self):
        for seed in range(12):
            inst = random_instance(seed)
            pq = partition_catalog(inst.query, 2)
            for cfg in pq.configs():
                profs = config_profiles(cfg.fragments)
                a = agm(profs, inst.query.attrs_mask)
                d = dbp(profs, 2.0, inst.query.attrs_mask)
                assert d.absolute <= a.absolute * (1 + 1e-6)


class TestMo:
    def test_matching_database(self):
        n = 32
        inst = matching_triangle(n)
        pq = partition_catalog(inst.query, 2)
        assert pq.config_count == 1
        total = mo_total(pq)
        assert total.absolute == pytest.approx(n, rel=1e-9)

    def test_triangle_high_degree_case(self):
        n, d = 1024, 128
        inst = d_regular_tripartite(n, d)
        bound = mo(profiles_of(inst))
        assert bound.absolute <= (n * n / d) * (1 + 1e-9)

    def test_matches_explicit_lp(self):
        import degreejoin.lp as lpmod
        from degreejoin.bounds import constraint_graph

        for seed in (0, 4, 9):
            inst = random_instance(seed)
            if inst.query.attr_count > 4:
                continue
            profs = profiles_of(inst)
            attrs_mask = inst.query.attrs_mask
            bound = mo(profs, attrs_mask)
            g = constraint_graph(profs, attrs_mask)

            nodes = [m for m in range(attrs_mask + 1) if m & ~attrs_mask == 0]
            idx = {m: i for i, m in enumerate(nodes)}
            obj = [0.0] * len(nodes)
            obj[idx[attrs_mask]] = 1.0
            prog = lpmod.LinearProgram(
                names=[f"s{m}" for m in nodes], objective=obj, sense="max"
            )
            row = [0.0] * len(nodes)
            row[idx[0]] = 1.0
            prog.add(row, "=", 0.0)
            for small in nodes:
                for big in nodes:
                    if small != big and small & ~big == 0:
                        row = [0.0] * len(nodes)
                        row[idx[small]] = 1.0
                        row[idx[big]] = -1.0
                        prog.add(row, "<=", 0.0)
            for schema, ws in g.relations:
                for (amask, bmask), w in ws.items():
                    for e in nodes:
                        src, dst = amask | e, bmask | e
                        if src == dst:
                            continue
                        row = [0.0] * len(nodes)
                        row[idx[dst]] += 1.0
                        row[idx[src]] -= 1.0
                        prog.add(row, "<=", w)
            sol = lpmod.solve_lp(prog)
            assert sol.optimal
            assert bound.nats == pytest.approx(sol.objective, abs=1e-7)

    def test_total_upper_bounds_actual_output(self):
        for seed in range(10):
            inst = random_instance(seed)
            pq = partition_catalog(inst.query, 2)
            out = reference_join(inst.query, output_mask=inst.query.attrs_mask)
            total = mo_total(pq)
            assert len(out) <= total.absolute * max(1, pq.config_count) + 1e-9

    def test_dregular_total_below_min_formula(self):
        n = 1024
        for d in (2, 8):
            inst = d_regular_tripartite(n, d)
            pq = partition_catalog(inst.query, 2)
            total = mo_total(pq)
            assert total.absolute <= 64 * min(n * d, n * n / d)


class TestBoundReport:
    def test_dregular_mo_below_agm(self):
        inst = d_regular_tripartite(2500, 4)
        pq = partition_catalog(inst.query, 2)
        report = bound_report(pq)
        assert report.totals["MO"] < report.totals["AGM"]
        assert report.violations == []
        text = report_table(report)
        assert "AGM" in text and "total" in text

    def test_matching_ratio_grows(self):
        ratios = []
        for n in (16, 64, 256):
            pq = partition_catalog(matching_triangle(n).query, 2)
            report = bound_report(pq)
            ratios.append(report.totals["AGM"] / report.totals["MO"])
        assert ratios[0] < ratios[1] < ratios[2]

    def test_empty_relation_all_zero(self):
        inst = build_instance(
            "empty", [("R", ["A", "B"], [(1, 2)]), ("S", ["B", "C"], [])]
        )
        pq = partition_catalog(inst.query, 2)
        report = bound_report(pq)
        assert report.totals == {"AGM": 0.0, "DBP": 0.0, "MO": 0.0}

    def test_bound_orderings_on_random_instances(self):
        for seed in range(16):
            inst = random_instance(seed)
            pq = partition_catalog(inst.query, 2)
            report = bound_report(pq)  # raises on any ordering violation
            assert report.violations == []
