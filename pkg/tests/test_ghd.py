import math
import random

import pytest

from degreejoin.bounds import RelProfile, mo
from degreejoin.degrees import compute_degrees, partition_catalog
from degreejoin.generators import (
    build_instance,
    cycle_instance,
    chain_instance,
    d_regular_tripartite,
    matching_triangle,
    one_sp_instance,
    random_instance,
)
from degreejoin.ghd import (
    GHD,
    JoinTree,
    chain_materialize,
    enumerate_ghds,
    fhw,
    full_reduce,
    ghd_execute,
    ghd_is_valid,
    gyo_acyclic,
    m_width,
    yannakakis,
)
from degreejoin.relational import make_query, project, reference_join


def masks_of(instance):
    return [r.mask for r in instance.query.relations]


class TestGyo:
    def test_chain_is_acyclic(self):
        inst = chain_instance(3, 12, 2)
        jt = gyo_acyclic(masks_of(inst))
        assert jt is not None
        assert len(jt.order) == 3

    def test_triangle_is_cyclic(self):
        inst = matching_triangle(4)
        assert gyo_acyclic(masks_of(inst)) is None

    def test_ear_built_hypergraphs_are_acyclic(self):
        rng = random.Random(6)
        for _ in range(25):
            # grow a hypergraph by adding ears: each new edge shares a subset
            # of exactly one existing edge
            masks = [0b11]
            next_attr = 2
            for _ in range(rng.randint(1, 5)):
                host = rng.choice(masks)
                keep = [a for a in range(8) if host & (1 << a) and rng.random() < 0.7]
                new = 0
                for a in keep:
                    new |= 1 << a
                for _ in range(rng.randint(1, 2)):
                    if next_attr < 28:
                        new |= 1 << next_attr
                        next_attr += 1
                masks.append(new)
            assert gyo_acyclic(masks) is not None


class TestYannakakis:
    def test_single_matching_path(self):
        inst = build_instance(
            "path",
            [("R", ["A", "B"], [(1, 2), (5, 6)]), ("S", ["B", "C"], [(2, 3)])],
        )
        jt = gyo_acyclic(masks_of(inst))
        out = yannakakis(jt, inst.query.relations, inst.query.attrs_mask)
        assert out == reference_join(inst.query)
        assert len(out) == 1

    def test_matches_reference_on_acyclic_instances(self):
        checked = 0
        for seed in range(40):
            inst = random_instance(seed)
            jt = gyo_acyclic(masks_of(inst))
            if jt is None:
                continue
            out = yannakakis(jt, inst.query.relations, inst.query.output_mask)
            assert out == reference_join(inst.query)
            checked += 1
            if checked >= 10:
                break
        assert checked >= 10

    def test_full_reducer_leaves_only_contributing_tuples(self):
        for seed in (0, 2, 9, 16):
            inst = random_instance(seed)
            jt = gyo_acyclic(masks_of(inst))
            if jt is None:
                continue
            q = inst.query
            reduced = full_reduce(jt, q.relations)
            out = reference_join(q, output_mask=q.attrs_mask)
            for rel in reduced:
                assert set(rel.rows) == set(project(out, rel.mask).rows)


class TestEnumerateGhds:
    def test_triangle_single_bag(self):
        inst = matching_triangle(3)
        ghds = enumerate_ghds(masks_of(inst), inst.query.attrs_mask, max_bags=1)
        assert len(ghds) == 1
        assert ghds[0].bags == (inst.query.attrs_mask,)

    def test_four_cycle_contains_two_bag_witness(self):
        inst = cycle_instance(4, 16, 2)
        q = inst.query
        a = [1 << inst.catalog.attr_id(f"X{i}") for i in range(4)]
        ghds = enumerate_ghds(masks_of(inst), q.attrs_mask)
        want = tuple(sorted((a[0] | a[1] | a[2], a[0] | a[2] | a[3])))
        assert any(tuple(sorted(g.bags)) == want for g in ghds)

    def test_one_sp_with_edge_contains_stitched_ghd(self):
        inst = one_sp_instance([3, 3], direct_edge=True, n_edges=8, d=2)
        q = inst.query
        s = 1 << inst.catalog.attr_id("S")
        t = 1 << inst.catalog.attr_id("T")
        ghds = enumerate_ghds(masks_of(inst), q.attrs_mask, budget=400_000)
        stitched = [
            g
            for g in ghds
            if (s | t) in g.bags
            and sum(1 for bag in g.bags if bag & s and bag & t) >= 3
        ]
        assert stitched, "expected a decomposition stitched through a source-sink bag"

    def test_every_enumerated_ghd_passes_independent_checker(self):
        for seed in (1, 4, 7):
            inst = random_instance(seed)
            if inst.query.attr_count > 6:
                continue
            ghds = enumerate_ghds(masks_of(inst), inst.query.attrs_mask)
            assert ghds
            for g in ghds:
                assert ghd_is_valid(g, masks_of(inst))

    def test_checker_rejects_bad_tree(self):
        # two bags sharing attribute 0 but arranged so a third bag without it
        # sits between them
        bad = GHD(bags=(0b011, 0b100, 0b101), parent=(-1, 0, 1))
        assert not ghd_is_valid(bad, [0b011, 0b100, 0b101])


class TestWidths:
    def test_acyclic_fhw_is_one(self):
        inst = chain_instance(3, 16, 2)
        n = 16.0
        width, _ = fhw(masks_of(inst), [n] * 3, inst.query.attrs_mask)
        assert width / math.log(n) == pytest.approx(1.0, abs=1e-9)

    def test_triangle_fhw(self):
        inst = matching_triangle(8)
        width, _ = fhw(masks_of(inst), [8.0] * 3, inst.query.attrs_mask)
        assert width / math.log(8) == pytest.approx(1.5, abs=1e-9)

    def test_four_cycle_fhw_two(self):
        inst = cycle_instance(4, 16, 2)
        width, _ = fhw(masks_of(inst), [16.0] * 4, inst.query.attrs_mask)
        assert width / math.log(16) == pytest.approx(2.0, abs=1e-9)

    def test_unit_degree_cycle_m_width_one(self):
        n_edges = 64
        for n in (4, 5):
            inst = cycle_instance(n, n_edges, 1)
            pq = partition_catalog(inst.query, 2)
            report = m_width(pq)
            assert report.m_width_exponent(n_edges) <= 1.0 + 1e-9

    def test_m_width_at_most_fhw(self):
        for seed in range(14):
            inst = random_instance(seed)
            if inst.query.attr_count > 5:
                continue
            pq = partition_catalog(inst.query, 2)
            report = m_width(pq)
            assert report.m_width_nats <= report.fhw_nats + 1e-6


class TestChainMaterialize:
    def test_single_relation_identity_bound(self):
        inst = build_instance("one", [("R", ["A", "B"], [(1, 2), (3, 4)])])
        rel = inst.query.relations[0]
        profiles = [RelProfile.from_stats(compute_degrees(rel))]
        out = chain_materialize([rel], profiles, rel.mask, rel.mask)
        assert set(rel.rows) <= set(out.rows)
        assert len(out) <= 2

    def test_triangle_chain_size_bound(self):
        n, h = 256, 4
        inst = d_regular_tripartite(n, h)
        rels = list(inst.query.relations)
        profiles = [RelProfile.from_stats(compute_degrees(r)) for r in rels]
        target = inst.query.attrs_mask
        out = chain_materialize(rels, profiles, target, target)
        bound = mo(profiles, target, target)
        assert len(out) <= bound.absolute + 1e-6
        assert len(out) <= 8 * n * h

    def test_contains_projection_of_join_on_random_instances(self):
        for seed in range(12):
            inst = random_instance(seed)
            q = inst.query
            rels = list(q.relations)
            profiles = [RelProfile.from_stats(compute_degrees(r)) for r in rels]
            full = reference_join(q, output_mask=q.attrs_mask)
            for target in {q.attrs_mask, rels[0].mask, 0}:
                got = chain_materialize(rels, profiles, q.attrs_mask, target)
                want = set(project(full, target).rows) if len(full) else set()
                assert want <= set(got.rows) or (len(full) == 0)
                bound = mo(profiles, q.attrs_mask, target)
                assert len(got) <= bound.absolute * (1 + 1e-9)


class TestGhdExecute:
    def test_acyclic_equals_yannakakis(self):
        inst = chain_instance(3, 20, 2)
        pq = partition_catalog(inst.query, 2)
        got = ghd_execute(pq)
        jt = gyo_acyclic(masks_of(inst))
        want = yannakakis(jt, inst.query.relations, inst.query.output_mask)
        assert got == want

    def test_four_cycle_matches_reference(self):
        rng = random.Random(3)
        tables = []
        for i in range(4):
            rows = {(rng.randint(0, 5), rng.randint(0, 5)) for _ in range(15)}
            tables.append((f"R{i}", [f"X{i}", f"X{(i + 1) % 4}"], sorted(rows)))
        inst = build_instance("cyc", tables)
        pq = partition_catalog(inst.query, 2)
        assert ghd_execute(pq) == reference_join(inst.query)

    def test_random_instances_match_reference(self):
        done = 0
        for seed in range(30):
            inst = random_instance(seed)
            if inst.query.attr_count > 5:
                continue
            pq = partition_catalog(inst.query, 2)
            assert ghd_execute(pq) == reference_join(inst.query)
            done += 1
            if done >= 12:
                break
        assert done >= 12

    def test_dregular_triangle_with_size_assertion(self):
        inst = d_regular_tripartite(64, 2)
        pq = partition_catalog(inst.query, 2)
        got = ghd_execute(pq)
        assert got == reference_join(inst.query)
