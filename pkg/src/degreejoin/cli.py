"""Command-line surface: ingestion, degree stats, bound reports, width
reports, planning, joins, the simulated parallel runtime, the subquadratic
decision procedure, fixture generation, and a self-test.

Every subcommand writes a machine-readable JSON artifact next to its text
summary; reruns with identical inputs reproduce the JSON byte for byte.
Exit codes: 0 success, 1 internal invariant violation, 2 usage error.
"""

from __future__ import annotations

import argparse
import json
import math
import os
import sys
from pathlib import Path

from . import bounds as boundsmod
from . import darts as dartsmod
from . import generators as genmod
from . import ghd as ghdmod
from . import mapreduce as mrmod
from .degrees import bucket_of, compute_degrees, partition_catalog, validate_partition
from .relational import (
    Catalog,
    DegreeJoinError,
    QueryHypergraph,
    Relation,
    load_catalog,
    mask_iter,
    parse_query,
    reference_join,
)

DEFAULT_BUDGET = int(os.environ.get("DEGREEJOIN_BUDGET", "20000"))


def build_parser() -> argparse.ArgumentParser:
    top = argparse.ArgumentParser(prog="degreejoin", description=__doc__)
    sub = top.add_subparsers(dest="command", required=True)

    def common(p, query=True):
        p.add_argument("--catalog", required=True, help="catalog manifest JSON")
        if query:
            p.add_argument("--query", required=True, help="query JSON file")
        p.add_argument("--out", default=".", help="artifact output directory")

    p = sub.add_parser("ingest", help="load a catalog and report ingestion stats")
    common(p, query=False)

    p = sub.add_parser("stats", help="per-relation degree statistics")
    common(p, query=False)
    p.add_argument("-L", type=int, default=2, help="bucket range parameter")
    p.add_argument("--plot", action="store_true", help="also render a figure")

    p = sub.add_parser("bounds", help="AGM/DBP/MO bound report per configuration")
    common(p)
    p.add_argument("-L", type=int, default=2)
    p.add_argument("--with-actual", action="store_true", help="run a join for the actual row")
    p.add_argument("--plot", action="store_true")

    p = sub.add_parser("width", help="fractional and degree-aware width report")
    common(p)
    p.add_argument("--max-bags", type=int, default=None)
    p.add_argument("--budget", type=int, default=100_000)

    p = sub.add_parser("plan", help="print the transform plan per configuration")
    common(p)
    p.add_argument("-L", type=int, default=2)
    p.add_argument("--budget", type=int, default=DEFAULT_BUDGET)

    p = sub.add_parser("join", help="execute the join and write a sorted CSV")
    common(p)
    p.add_argument(
        "--engine",
        choices=["darts", "generic", "yannakakis", "ghd"],
        default="darts",
    )
    p.add_argument("-L", type=int, default=2)
    p.add_argument("--budget", type=int, default=DEFAULT_BUDGET)

    p = sub.add_parser("simulate", help="simulated parallel join with cost accounting")
    common(p)
    p.add_argument("--load", type=int, required=True, help="load level L")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--skip-degree-rounds", action="store_true")
    p.add_argument("--plot", action="store_true")

    p = sub.add_parser("decide-subquadratic", help="decision procedure for path graphs")
    p.add_argument("graph", help="graph JSON: {source, sink, paths, direct_edge}")
    p.add_argument("--out", default=".")

    p = sub.add_parser("selftest", help="oracle-equivalence and bound-ordering checks")
    p.add_argument("--seeds", type=int, default=40)
    p.add_argument("--out", default=".")

    p = sub.add_parser("gen", help="write synthetic fixtures")
    p.add_argument(
        "--kind",
        required=True,
        choices=["dreg", "matching", "cycle", "k2n", "sp", "random"],
    )
    p.add_argument("--out", required=True)
    p.add_argument("--n", type=int, default=100, help="tuples per relation")
    p.add_argument("--d", type=int, default=2, help="uniform degree")
    p.add_argument("--k", type=int, default=4, help="cycle length / path count / arm count")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--lengths", default="3,3,3", help="sp path lengths, comma separated")
    p.add_argument("--direct-edge", action="store_true")
    return top


# ---------------------------------------------------------------------------
# helpers


def _write_json(out_dir: Path, name: str, payload) -> Path:
    out_dir.mkdir(parents=True, exist_ok=True)
    path = out_dir / name
    path.write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return path


def _write_text(out_dir: Path, name: str, text: str) -> Path:
    out_dir.mkdir(parents=True, exist_ok=True)
    path = out_dir / name
    path.write_text(text.rstrip() + "\n", encoding="utf-8")
    return path


def _load(args) -> tuple[Catalog, QueryHypergraph | None]:
    catalog = load_catalog(args.catalog)
    query = None
    if getattr(args, "query", None):
        query = parse_query(Path(args.query).read_text(encoding="utf-8"), catalog)
    return catalog, query


def _attr_names(catalog: Catalog, mask: int) -> list[str]:
    return [catalog.attr_name(a) for a in mask_iter(mask)]


def _write_relation_csv(catalog: Catalog, rel: Relation, path: Path) -> None:
    lines = [",".join(catalog.attr_name(a) for a in rel.schema)]
    for row in rel.rows:  # already sorted by interned symbol order
        lines.append(",".join(catalog.symbols[v] for v in row))
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")


# ---------------------------------------------------------------------------
# subcommands


def cmd_ingest(args) -> int:
    catalog, _ = _load(args)
    payload = {
        "manifest": str(args.catalog),
        "attributes": catalog.attributes,
        "relations": {
            name: dict(catalog.ingest_stats[name], attributes=[
                catalog.attr_name(a) for a in rel.schema
            ])
            for name, rel in sorted(catalog.relations.items())
        },
        "symbols": len(catalog.symbols),
    }
    out = Path(args.out)
    _write_json(out, "ingest.json", payload)
    lines = [f"catalog {args.catalog}: {len(catalog.relations)} relations, "
             f"{len(catalog.attributes)} attributes, {len(catalog.symbols)} symbols"]
    for name, info in sorted(payload["relations"].items()):
        lines.append(
            f"  {name}({', '.join(info['attributes'])}): kept {info['rows_kept']}"
            f" of {info['rows_read']} rows ({info['duplicates_dropped']} duplicates dropped)"
        )
    text = "\n".join(lines)
    _write_text(out, "ingest.txt", text)
    print(text)
    return 0


def cmd_stats(args) -> int:
    catalog, _ = _load(args)
    payload = {}
    histograms = {}
    for name, rel in sorted(catalog.relations.items()):
        stats = compute_degrees(rel)
        entry = {}
        for amask in sorted(stats.tables):
            hist: dict[str, int] = {}
            for count in stats.tables[amask].values():
                b = bucket_of(count, args.L)
                hist[str(b)] = hist.get(str(b), 0) + count
            entry[",".join(_attr_names(catalog, amask)) or "()"] = {
                "max_degree": stats.max_deg[amask],
                "distinct": len(stats.tables[amask]),
                "bucket_histogram": hist,
            }
        payload[name] = entry
        key_hist = {}
        for count in stats.tables[rel.mask].values():
            b = bucket_of(count, args.L)
            key_hist[b] = key_hist.get(b, 0) + count
        histograms[name] = key_hist
    out = Path(args.out)
    _write_json(out, "stats.json", {"L": args.L, "relations": payload})
    lines = [f"degree statistics (L={args.L})"]
    for name, entry in payload.items():
        lines.append(f"relation {name}:")
        for attrs, info in entry.items():
            lines.append(
                f"  {attrs}: max degree {info['max_degree']}, "
                f"{info['distinct']} distinct, buckets {info['bucket_histogram']}"
            )
    text = "\n".join(lines)
    _write_text(out, "stats.txt", text)
    if args.plot:
        from .report import render_degree_chart

        render_degree_chart(histograms, out / "stats.png")
    print(text)
    return 0


def cmd_bounds(args) -> int:
    catalog, query = _load(args)
    pq = partition_catalog(query, args.L)
    actual = None
    if args.with_actual:
        actual = len(dartsmod.generic_join(list(query.relations), query.output_mask))
    report = boundsmod.bound_report(pq, actual=actual)
    base = max(query.input_size(), 2)
    payload = {
        "L": args.L,
        "input_size": report.input_size,
        "configs": [
            {
                "index": cb.index,
                "fragment_sizes": list(cb.sizes),
                "AGM": cb.agm.absolute,
                "DBP": cb.dbp.absolute,
                "MO": cb.mo.absolute,
                "dbp_cover": [
                    [query.relations[ri].name, _attr_names(catalog, am)]
                    for ri, am in cb.dbp.witness.get("cover", ())
                ],
            }
            for cb in report.configs
        ],
        "totals": report.totals,
        "total_exponents_base_input": {
            k: report.total_exponent(k) for k in ("AGM", "DBP", "MO")
        },
        "actual": report.actual,
    }
    out = Path(args.out)
    _write_json(out, "bounds.json", payload)
    text = boundsmod.report_table(report)
    _write_text(out, "bounds.txt", text)
    if args.plot:
        from .report import render_bound_chart

        render_bound_chart(report, out / "bounds.png")
    print(text)
    return 0


def cmd_width(args) -> int:
    catalog, query = _load(args)
    pq = partition_catalog(query, 2)
    report = ghdmod.m_width(pq, max_bags=args.max_bags, budget=args.budget)
    base = max(query.input_size(), 2)
    payload = {
        "fhw_exponent_base_input": report.fhw_exponent(base),
        "m_width_exponent_base_input": report.m_width_exponent(base),
        "fhw_witness_bags": [
            _attr_names(catalog, bag) for bag in report.fhw_witness.bags
        ],
        "per_config": [
            {
                "index": cw.index,
                "width_exponent_base_input": cw.width_nats / math.log(base),
                "bags": [_attr_names(catalog, bag) for bag in cw.ghd.bags],
            }
            for cw in report.per_config
        ],
    }
    out = Path(args.out)
    _write_json(out, "width.json", payload)
    lines = [
        f"fhw       = {payload['fhw_exponent_base_input']:.6f} (base IN={base})",
        f"m-width   = {payload['m_width_exponent_base_input']:.6f}",
        f"fhw witness bags: {payload['fhw_witness_bags']}",
    ]
    for cw in payload["per_config"]:
        lines.append(
            f"config {cw['index']}: width {cw['width_exponent_base_input']:.6f} bags {cw['bags']}"
        )
    text = "\n".join(lines)
    _write_text(out, "width.txt", text)
    print(text)
    return 0


def _plan_lines(node, sub, catalog, depth=0):
    pad = "  " * depth
    names = lambda m: ",".join(_attr_names(catalog, m)) or "()"
    q = "-" if not math.isfinite(node.q_log) else f"{math.exp(node.q_log):.4g}"
    p = "-" if not math.isfinite(node.p_log) else f"{math.exp(node.p_log):.4g}"
    head = f"{pad}{node.kind} [Q<={q} P<={p}]"
    if node.kind == "heavy":
        head += f" on {names(1 << node.detail['x'])}"
    elif node.kind == "light":
        head += f" on {{{names(node.detail['xmask'])}}}"
    elif node.kind.startswith("split"):
        head += f" at {{{names(node.detail['smask'])}}}"
    elif node.kind == "rel":
        head += f" scan {sub.rels[node.detail['rel']].name}"
    lines = [head]
    for key in ("child", "p1", "q1", "q2", "p2"):
        sub_node = node.detail.get(key)
        if sub_node is not None:
            subsub = node.detail.get(f"{key}sub") or node.detail.get("childsub")
            lines.extend(_plan_lines(sub_node, subsub, catalog, depth + 1))
    return lines


def cmd_plan(args) -> int:
    catalog, query = _load(args)
    pq = partition_catalog(query, args.L)
    out = Path(args.out)
    lines = []
    payload = []
    for cfg in pq.configs():
        sub = dartsmod.subproblem_for_config(cfg, query.output_mask, args.L)
        entry = {"config": cfg.index, "fragments": [len(f.relation) for f in cfg.fragments]}
        lines.append(f"config {cfg.index} (fragment sizes {entry['fragments']}):")
        try:
            planner = dartsmod.Planner(mode="counts", L=float(args.L), budget_states=args.budget)
            info = planner.best(sub)
            entry["q_bound"] = math.exp(info.q_log)
            entry["plan"] = _plan_lines(info.q_plan, sub, catalog)
            lines.extend("  " + l for l in entry["plan"])
        except dartsmod.PlannerRefused as exc:
            entry["refused"] = str(exc)
            lines.append(f"  planner refused: {exc}")
        payload.append(entry)
    _write_json(out, "plan.json", payload)
    text = "\n".join(lines)
    _write_text(out, "plan.txt", text)
    print(text)
    return 0


def cmd_join(args) -> int:
    catalog, query = _load(args)
    out = Path(args.out)
    counter = ghdmod.OpCounter()
    meta: dict = {"engine": args.engine}
    if args.engine == "generic":
        result = dartsmod.generic_join(list(query.relations), query.output_mask, counter=counter)
        meta["ops"] = counter.ops
    elif args.engine == "yannakakis":
        jt = ghdmod.gyo_acyclic([r.mask for r in query.relations])
        if jt is None:
            print("error: the yannakakis engine requires an acyclic query", file=sys.stderr)
            return 2
        result = ghdmod.yannakakis(jt, list(query.relations), query.output_mask, counter)
        meta["ops"] = counter.ops
    elif args.engine == "ghd":
        pq = partition_catalog(query, args.L)
        result = ghdmod.ghd_execute(pq)
    else:
        result, metrics = dartsmod.darts_join(query, L=args.L, budget_states=args.budget)
        meta["ops"] = metrics.total_ops
        meta["configs"] = [
            {
                "index": c.index,
                "engine": c.engine,
                "q_bound": None if c.q_bound_log is None else math.exp(c.q_bound_log),
                "ops": c.ops,
                "output": c.output_size,
            }
            for c in metrics.configs
        ]
    meta["rows"] = len(result)
    meta["attributes"] = _attr_names(catalog, result.mask)
    out.mkdir(parents=True, exist_ok=True)
    _write_relation_csv(catalog, result, out / f"join-{args.engine}.csv")
    _write_json(out, "symbols.json", {"symbols": catalog.symbols})
    _write_json(out, "join-metrics.json", meta)
    print(f"{args.engine}: {len(result)} rows -> {out / f'join-{args.engine}.csv'}")
    return 0


def cmd_simulate(args) -> int:
    catalog, query = _load(args)
    run = mrmod.parallel_join(
        query, L=args.load, seed=args.seed, skip_degree_rounds=args.skip_degree_rounds
    )
    m = run.metrics
    ratio = m.total_communication / run.predicted_budget if run.predicted_budget else 0.0
    loads = sorted(
        load for r in m.per_round for load, cnt in r.load_histogram.items() for _ in range(cnt)
    )
    median_load = loads[len(loads) // 2] if loads else 0
    payload = {
        "L": args.load,
        "seed": args.seed,
        "rounds": m.rounds,
        "total_communication": m.total_communication,
        "max_load": m.max_load,
        "median_load": median_load,
        "predicted_budget": run.predicted_budget,
        "measured_over_predicted": ratio,
        "output_rows": len(run.output),
        "per_round": [
            {
                "name": r.name,
                "communication": r.communication,
                "processors": r.processors,
                "max_load": r.max_load,
            }
            for r in m.per_round
        ],
        "per_config": run.per_config,
    }
    out = Path(args.out)
    _write_json(out, "simulate.json", payload)
    text = "\n".join(
        [
            f"rounds={m.rounds} communication={m.total_communication} "
            f"max_load={m.max_load} median_load={median_load}",
            f"predicted budget={run.predicted_budget:.1f} measured/predicted={ratio:.3f}",
            f"output rows={len(run.output)}",
        ]
    )
    _write_text(out, "simulate.txt", text)
    if args.plot:
        from .report import render_load_chart

        render_load_chart(m, out / "simulate.png")
    print(text)
    return 0


def cmd_decide(args) -> int:
    doc = json.loads(Path(args.graph).read_text(encoding="utf-8"))
    verdict = dartsmod.decide_subquadratic_1sp(doc)
    human = {
        "subquadratic": "subquadratic",
        "not-subquadratic-modulo-3SUM": "not subquadratic (modulo 3-SUM)",
        "not-1-series-parallel": "not 1-series-parallel",
    }[verdict.verdict]
    payload = {"verdict": verdict.verdict, "trace": list(verdict.trace)}
    _write_json(Path(args.out), "decide.json", payload)
    text = "\n".join([human] + [f"  {t}" for t in verdict.trace])
    _write_text(Path(args.out), "decide.txt", text)
    print(text)
    return 0


def cmd_selftest(args) -> int:
    failures = []
    checks = 0
    for seed in range(args.seeds):
        inst = genmod.random_instance(seed)
        q = inst.query
        want = reference_join(q)
        engines = {
            "generic": lambda: dartsmod.generic_join(list(q.relations), q.output_mask),
            "darts": lambda: dartsmod.darts_join(q)[0],
        }
        jt = ghdmod.gyo_acyclic([r.mask for r in q.relations])
        if jt is not None:
            engines["yannakakis"] = lambda: ghdmod.yannakakis(jt, list(q.relations), q.output_mask)
        for name, f in engines.items():
            checks += 1
            if f() != want:
                failures.append(f"seed {seed}: engine {name} disagrees with the oracle")
        pq = partition_catalog(q, 2)
        checks += 1
        if validate_partition(pq):
            failures.append(f"seed {seed}: partition validation failed")
        try:
            checks += 1
            boundsmod.bound_report(pq)
        except boundsmod.InvariantViolation as exc:
            failures.append(f"seed {seed}: {exc}")
    status = "ok" if not failures else "FAILED"
    text = f"selftest {status}: {checks} checks over {args.seeds} seeds"
    for f in failures:
        text += f"\n  {f}"
    _write_json(Path(args.out), "selftest.json", {"checks": checks, "failures": failures})
    _write_text(Path(args.out), "selftest.txt", text)
    print(text)
    return 1 if failures else 0


def cmd_gen(args) -> int:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    if args.kind == "dreg":
        inst = genmod.d_regular_tripartite(args.n, args.d)
    elif args.kind == "matching":
        inst = genmod.matching_triangle(args.n)
    elif args.kind == "cycle":
        inst = genmod.cycle_instance(args.k, args.n, args.d)
    elif args.kind == "k2n":
        inst = genmod.k2n_instance(args.k, args.n, args.d)
    elif args.kind == "sp":
        lengths = [int(x) for x in args.lengths.split(",") if x]
        inst = genmod.one_sp_instance(lengths, args.direct_edge, args.n, args.d)
        _write_json(out, "graph.json", inst.meta["graph"])
    else:
        inst = genmod.random_instance(args.seed)
    manifest = {"relations": []}
    for rel in inst.query.relations:
        fname = f"{rel.name}.csv"
        _write_relation_csv(inst.catalog, rel, out / fname)
        manifest["relations"].append(
            {
                "name": rel.name,
                "path": fname,
                "schema": [inst.catalog.attr_name(a) for a in rel.schema],
            }
        )
    _write_json(out, "manifest.json", manifest)
    _write_json(
        out,
        "query.json",
        {"relations": [r.name for r in inst.query.relations]},
    )
    print(f"wrote {inst.name} fixture to {out}")
    return 0


HANDLERS = {
    "ingest": cmd_ingest,
    "stats": cmd_stats,
    "bounds": cmd_bounds,
    "width": cmd_width,
    "plan": cmd_plan,
    "join": cmd_join,
    "simulate": cmd_simulate,
    "decide-subquadratic": cmd_decide,
    "selftest": cmd_selftest,
    "gen": cmd_gen,
}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return HANDLERS[args.command](args)
    except boundsmod.InvariantViolation as exc:
        print(f"internal invariant violation: {exc}", file=sys.stderr)
        return 1
    except DegreeJoinError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
