"""Small dense LP machinery.

Two solvers live here: a deterministic two-phase primal simplex (Bland's
pivoting rule, so no cycling) for the cover/packing programs, and a Dijkstra
over the attribute-subset lattice for the difference-constraint programs,
whose maximum objective equals a shortest-path distance and whose predecessor
chain is needed downstream to materialize relations step by step.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from heapq import heappop, heappush
from typing import Literal, Sequence

import numpy as np

from .relational import DegreeJoinError, mask_iter

TOL = 1e-9

Rel = Literal["<=", ">=", "="]


@dataclass
class LinearProgram:
    names: list[str]
    objective: list[float]
    sense: Literal["min", "max"] = "min"
    rows: list[tuple[list[float], Rel, float]] = field(default_factory=list)

    def add(self, coeffs: Sequence[float], rel: Rel, rhs: float) -> None:
        if len(coeffs) != len(self.names):
            raise DegreeJoinError("constraint width != variable count")
        if not np.isfinite(rhs):
            raise DegreeJoinError("constraint rhs must be finite")
        self.rows.append((list(coeffs), rel, float(rhs)))


@dataclass
class LpSolution:
    status: Literal["optimal", "infeasible", "unbounded"]
    objective: float
    assignment: dict[str, float]
    tight: list[int]

    @property
    def optimal(self) -> bool:
        return self.status == "optimal"


def _pivot(T: np.ndarray, basis: list[int], row: int, col: int) -> None:
    T[row] /= T[row, col]
    for r in range(T.shape[0]):
        if r != row and abs(T[r, col]) > 0:
            T[r] -= T[r, col] * T[row]
    basis[row] = col


def _bland_iterate(T: np.ndarray, basis: list[int], ncols: int) -> Literal["optimal", "unbounded"]:
    m = T.shape[0] - 1
    while True:
        # entering: lowest-index column with negative reduced cost
        col = -1
        for j in range(ncols):
            if T[m, j] < -TOL:
                col = j
                break
        if col < 0:
            return "optimal"
        # leaving: min ratio, ties broken by lowest basic-variable index
        best = None
        for r in range(m):
            a = T[r, col]
            if a > TOL:
                ratio = T[r, -1] / a
                key = (ratio, basis[r])
                if best is None or key < best[0]:
                    best = (key, r)
        if best is None:
            return "unbounded"
        _pivot(T, basis, best[1], col)


def solve_lp(p: LinearProgram) -> LpSolution:
    """Two-phase simplex over nonnegative variables."""
    n = len(p.names)
    if n > 64:
        raise DegreeJoinError("solver is sized for at most 64 variables")
    if len(p.rows) > 4096:
        raise DegreeJoinError("solver is sized for at most 4096 constraints")
    m = len(p.rows)
    sign = 1.0 if p.sense == "min" else -1.0
    c = np.array(p.objective, dtype=float) * sign

    # normalize to b >= 0
    A = np.zeros((m, n))
    b = np.zeros(m)
    rels: list[Rel] = []
    for i, (coeffs, rel, rhs) in enumerate(p.rows):
        coeffs = np.asarray(coeffs, dtype=float)
        if rhs < 0:
            coeffs, rhs = -coeffs, -rhs
            rel = {"<=": ">=", ">=": "<=", "=": "="}[rel]
        A[i] = coeffs
        b[i] = rhs
        rels.append(rel)

    n_slack = sum(1 for r in rels if r == "<=")
    n_surp = sum(1 for r in rels if r == ">=")
    n_art = sum(1 for r in rels if r in (">=", "="))
    width = n + n_slack + n_surp + n_art
    T = np.zeros((m + 1, width + 1))
    basis = [0] * m
    s_at, u_at, a_at = n, n + n_slack, n + n_slack + n_surp
    art_cols = []
    for i in range(m):
        T[i, :n] = A[i]
        T[i, -1] = b[i]
        if rels[i] == "<=":
            T[i, s_at] = 1.0
            basis[i] = s_at
            s_at += 1
        elif rels[i] == ">=":
            T[i, u_at] = -1.0
            u_at += 1
            T[i, a_at] = 1.0
            basis[i] = a_at
            art_cols.append(a_at)
            a_at += 1
        else:
            T[i, a_at] = 1.0
            basis[i] = a_at
            art_cols.append(a_at)
            a_at += 1

    if art_cols:
        # phase 1: minimize artificial sum
        for col in art_cols:
            T[m, col] = 1.0
        for i in range(m):
            if basis[i] in art_cols:
                T[m] -= T[i]
        status = _bland_iterate(T, basis, width)
        if status != "optimal" or T[m, -1] < -1e-7:
            return LpSolution("infeasible", float("nan"), {}, [])
        # drive remaining artificials out of the basis
        for i in range(m):
            if basis[i] in art_cols:
                for j in range(n + n_slack + n_surp):
                    if abs(T[i, j]) > 1e-7:
                        _pivot(T, basis, i, j)
                        break
        for col in art_cols:
            T[:, col] = 0.0

    # phase 2
    T[m, :] = 0.0
    T[m, :n] = c
    for i in range(m):
        if T[m, basis[i]] != 0.0:
            T[m] -= T[m, basis[i]] * T[i]
    status = _bland_iterate(T, basis, n + n_slack + n_surp)
    if status == "unbounded":
        return LpSolution("unbounded", float("nan"), {}, [])

    x = np.zeros(width)
    for i in range(m):
        x[basis[i]] = T[i, -1]
    xs = x[:n]
    obj = float(np.dot(np.array(p.objective, dtype=float), xs))
    tight = []
    for i, (coeffs, rel, rhs) in enumerate(p.rows):
        lhs = float(np.dot(np.asarray(coeffs, dtype=float), xs))
        scale = max(1.0, abs(rhs), float(np.abs(coeffs).max(initial=0.0)))
        if abs(lhs - rhs) <= 1e-7 * scale:
            tight.append(i)
    assignment = {name: float(v) for name, v in zip(p.names, xs)}
    return LpSolution("optimal", obj, assignment, tight)


# ---------------------------------------------------------------------------
# Difference-constraint programs over the subset lattice


@dataclass(frozen=True)
class SubsetConstraintGraph:
    """Edges encode s_target <= s_source + w over subsets of the universe.

    relations: per relation, (schema mask, {(A, B): weight}) for A <= B of the
    schema, with weight = ln of the max number of distinct B-projections per
    A-value.  From any node S >= A there is an edge S -> S|B at that weight;
    dropping attributes is free.
    """

    universe_mask: int
    relations: tuple[tuple[int, dict[tuple[int, int], float]], ...]


PredEdge = tuple[int, str, tuple]  # (source mask, kind, payload)


def subset_shortest_paths(
    g: SubsetConstraintGraph, source: int = 0
) -> tuple[dict[int, float], dict[int, PredEdge]]:
    """Dijkstra from ``source`` (usually the empty set).

    dist[A] is the maximum feasible value of s_A; the predecessor chain
    alternates projection steps and degree-extension steps and reconstructs a
    tight-constraint chain.
    """
    for _, ws in g.relations:
        for w in ws.values():
            if w < -TOL:
                raise DegreeJoinError("negative weight in subset constraint graph")
    dist: dict[int, float] = {source: 0.0}
    pred: dict[int, PredEdge] = {}
    heap: list[tuple[float, int]] = [(0.0, source)]
    done: set[int] = set()
    while heap:
        d, s = heappop(heap)
        if s in done:
            continue
        done.add(s)

        def relax(t: int, w: float, kind: str, payload: tuple) -> None:
            nd = d + w
            if nd < dist.get(t, float("inf")) - 1e-15:
                dist[t] = nd
                pred[t] = (s, kind, payload)
                heappush(heap, (nd, t))

        for a in mask_iter(s):
            relax(s & ~(1 << a), 0.0, "drop", (a,))
        for ridx, (schema, ws) in enumerate(g.relations):
            for (a, bmask), w in ws.items():
                if a & ~s:
                    continue
                t = s | bmask
                if t != s:
                    relax(t, w, "extend", (a, bmask, ridx))
    return dist, pred


def chain_to(pred: dict[int, PredEdge], target: int) -> list[tuple[int, int, str, tuple]]:
    """Edge list (source, target, kind, payload) from the source out to target."""
    steps = []
    node = target
    while node in pred:
        src, kind, payload = pred[node]
        steps.append((src, node, kind, payload))
        node = src
    steps.reverse()
    return steps
