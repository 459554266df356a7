"""Finitely ramified cell structures.

A cell structure is generated either by a hyperedge replacement system (every
cell has a type, and a type says how to subdivide a cell into children and how
the children's boundary vertices are glued together) or by an explicit
enumeration.  Both produce a :class:`CellComplex`: a rooted tree of cells, one
list per level, where two cells of the same level meet exactly when they share
a global vertex id.
"""

from __future__ import annotations

import itertools
import json
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Optional

import numpy as np

from .errors import (
    DepthInsufficient,
    DepthOverflow,
    DistinctPointsRequired,
    InsufficientDepth,
    LevelOutOfRange,
    MalformedGluing,
    UnknownBuiltin,
)

DEFAULT_CELL_CAP = 10**6

GLUE_KINDS = ("parent", "junction", "free")


@dataclass(frozen=True)
class CellType:
    """One cell type of a replacement system.

    ``gluing`` is a tuple of ``(child, child_vertex, kind, index)`` entries.
    ``kind`` is ``"parent"`` (the child vertex is the parent's boundary vertex
    ``index``), ``"junction"`` (a new vertex shared by several children) or
    ``"free"`` (a new vertex private to that child; ``index`` only has to be
    unique within the type).  ``labels`` optionally names the children, which
    is how itinerary letters are attached to Julia set cells.
    """

    id: str
    children: tuple
    boundary_arity: int
    junctions: int
    gluing: tuple
    labels: Optional[tuple] = None
    _targets: dict = field(default=None, compare=False, repr=False, hash=False)

    def __post_init__(self):
        object.__setattr__(self, "children", tuple(self.children))
        object.__setattr__(self, "gluing", tuple(tuple(g) for g in self.gluing))
        if self.labels is not None:
            object.__setattr__(self, "labels", tuple(self.labels))
        targets = {}
        for child, vtx, kind, idx in self.gluing:
            targets.setdefault((child, vtx), (kind, idx))
        object.__setattr__(self, "_targets", targets)

    @property
    def junction_count(self):
        return self.junctions

    @property
    def child_types(self):
        return self.children

    def target(self, child, vtx):
        return self._targets[(child, vtx)]

    def label(self, child):
        return self.labels[child] if self.labels is not None else str(child)

    def to_dict(self):
        d = {
            "id": self.id,
            "children": list(self.children),
            "boundary_arity": self.boundary_arity,
            "junctions": self.junctions,
            "gluing": [list(g) for g in self.gluing],
        }
        if self.labels is not None:
            d["labels"] = list(self.labels)
        return d


@dataclass(frozen=True)
class ReplacementSystem:
    types: tuple
    root_type: str
    name: str = "custom"

    def __post_init__(self):
        object.__setattr__(self, "types", tuple(self.types))

    @property
    def type_map(self):
        return {t.id: t for t in self.types}

    def type(self, tid):
        for t in self.types:
            if t.id == tid:
                return t
        raise MalformedGluing(f"unknown type id {tid!r}")

    def level_counts(self, depth):
        """Number of cells at each level 0..depth, computed from type counts."""
        tm = self.type_map
        counts = {self.root_type: 1}
        out = [1]
        for _ in range(depth):
            nxt = {}
            for tid, c in counts.items():
                for ch in tm[tid].children:
                    nxt[ch] = nxt.get(ch, 0) + c
            counts = nxt
            out.append(sum(counts.values()))
        return out

    def to_dict(self):
        return {"name": self.name, "types": [t.to_dict() for t in self.types], "root": self.root_type}

    def to_json(self, **kw):
        return json.dumps(self.to_dict(), **kw)

    @classmethod
    def from_dict(cls, d):
        types = [
            CellType(
                id=str(t["id"]),
                children=tuple(str(c) for c in t["children"]),
                boundary_arity=int(t["boundary_arity"]),
                junctions=int(t["junctions"]),
                gluing=tuple((int(g[0]), int(g[1]), str(g[2]), int(g[3])) for g in t["gluing"]),
                labels=tuple(t["labels"]) if t.get("labels") is not None else None,
            )
            for t in d["types"]
        ]
        return cls(types=tuple(types), root_type=str(d["root"]), name=d.get("name", "custom"))

    @classmethod
    def from_json(cls, text):
        return cls.from_dict(json.loads(text))


@dataclass
class ValidationReport:
    ok: bool
    problems: list
    n_types: int
    summary: dict

    def to_dict(self):
        return {"ok": self.ok, "problems": list(self.problems), "n_types": self.n_types, "summary": self.summary}


def validate_system(sys: ReplacementSystem) -> ValidationReport:
    """Check the structural invariants of every cell type.

    Out-of-range indices raise :class:`MalformedGluing`; the softer invariants
    (coverage of parent vertices, junctions shared by two children, exactly
    one target per child vertex) are listed in the report.
    """
    tm = {}
    for t in sys.types:
        if t.id in tm:
            raise MalformedGluing(f"duplicate type id {t.id!r}")
        tm[t.id] = t
    if sys.root_type not in tm:
        raise MalformedGluing(f"root type {sys.root_type!r} does not exist")
    problems = []
    summary = {}
    for t in sys.types:
        for ch in t.children:
            if ch not in tm:
                raise MalformedGluing(f"type {t.id}: unknown child type {ch!r}")
        if t.labels is not None and len(t.labels) != len(t.children):
            raise MalformedGluing(f"type {t.id}: {len(t.labels)} labels for {len(t.children)} children")
        seen = {}
        junction_hits = {}
        parent_hits = set()
        free_ids = set()
        for entry in t.gluing:
            child, vtx, kind, idx = entry
            if not 0 <= child < len(t.children):
                raise MalformedGluing(f"type {t.id}: child index {child} out of range")
            arity = tm[t.children[child]].boundary_arity
            if not 0 <= vtx < arity:
                raise MalformedGluing(f"type {t.id}: child {child} has no boundary vertex {vtx}")
            if kind == "parent":
                if not 0 <= idx < t.boundary_arity:
                    raise MalformedGluing(f"type {t.id}: parent vertex index {idx} out of range")
                parent_hits.add(idx)
            elif kind == "junction":
                if not 0 <= idx < t.junctions:
                    raise MalformedGluing(
                        f"type {t.id}: junction index {idx} out of range (type has {t.junctions})"
                    )
                junction_hits.setdefault(idx, set()).add(child)
            elif kind == "free":
                if idx in free_ids:
                    problems.append(f"type {t.id}: free vertex index {idx} used twice")
                free_ids.add(idx)
            else:
                raise MalformedGluing(f"type {t.id}: unknown target kind {kind!r}")
            seen[(child, vtx)] = seen.get((child, vtx), 0) + 1
        for child, ctid in enumerate(t.children):
            for vtx in range(tm[ctid].boundary_arity):
                c = seen.get((child, vtx), 0)
                if c != 1:
                    problems.append(f"type {t.id}: child {child} vertex {vtx} has {c} gluing targets")
        for idx in range(t.boundary_arity):
            if idx not in parent_hits:
                problems.append(f"type {t.id}: parent vertex {idx} is not covered by any child")
        for idx in range(t.junctions):
            if len(junction_hits.get(idx, ())) < 2:
                problems.append(f"type {t.id}: junction {idx} is shared by fewer than two children")
        summary[t.id] = {
            "children": len(t.children),
            "boundary_arity": t.boundary_arity,
            "junctions": t.junctions,
        }
    return ValidationReport(ok=not problems, problems=problems, n_types=len(sys.types), summary=summary)


@dataclass(frozen=True, slots=True)
class Cell:
    address: tuple
    level: int
    type_id: str
    vertex_ids: tuple


@dataclass(frozen=True)
class PointAddress:
    """A point given by a descending cell path.

    The path is ``head`` followed either by a designated vertex id (which must
    lie in the cell ``head``) or by ``cycle`` repeated forever.
    """

    head: tuple
    vertex: Optional[int] = None
    cycle: tuple = ()

    def __post_init__(self):
        object.__setattr__(self, "head", tuple(self.head))
        object.__setattr__(self, "cycle", tuple(self.cycle))
        if (self.vertex is None) == (len(self.cycle) == 0):
            raise ValueError("a point address needs exactly one of a vertex id or a nonempty cycle")

    def digits(self, n):
        """First ``n`` child indices of the (infinite) address."""
        if self.vertex is not None:
            return self.head[:n]
        out = list(self.head[:n])
        i = 0
        while len(out) < n:
            out.append(self.cycle[i % len(self.cycle)])
            i += 1
        return tuple(out)


class CellComplex:
    """Cells of levels 0..depth with vertex incidence.

    ``levels[n]`` lists the n-cells sorted by address, so the descendants of a
    cell at any deeper level form a contiguous index range.
    """

    def __init__(self, source, levels, vertex_origin, vertex_coords=None):
        self.source = source
        self.levels = levels
        self.depth = len(levels) - 1
        self.vertex_origin = vertex_origin
        self.vertex_coords = vertex_coords or {}
        self._index = [{c.address: i for i, c in enumerate(lv)} for lv in levels]
        self._parent = [np.zeros(0, dtype=np.int64)]
        self._child_lo = []
        self._child_hi = []
        for n in range(1, len(levels)):
            idx = self._index[n - 1]
            par = np.fromiter((idx[c.address[:-1]] for c in levels[n]), dtype=np.int64, count=len(levels[n]))
            self._parent.append(par)
            counts = np.bincount(par, minlength=len(levels[n - 1]))
            hi = np.cumsum(counts)
            self._child_lo.append(hi - counts)
            self._child_hi.append(hi)
        self._incidence = []
        for lv in levels:
            inc = {}
            for i, c in enumerate(lv):
                for v in c.vertex_ids:
                    inc.setdefault(v, []).append(i)
            self._incidence.append(inc)

    # lookup -------------------------------------------------------------
    def __len__(self):
        return sum(len(lv) for lv in self.levels)

    def count(self, n):
        return len(self.levels[n])

    def counts(self):
        return [len(lv) for lv in self.levels]

    def index(self, address):
        address = tuple(address)
        try:
            return self._index[len(address)][address]
        except (KeyError, IndexError):
            raise LevelOutOfRange(f"address {address} is not a cell of this complex") from None

    def cell(self, address):
        address = tuple(address)
        return self.levels[len(address)][self.index(address)]

    def parent_index(self, n, i):
        return int(self._parent[n][i])

    def children_range(self, n, i):
        if n >= self.depth:
            return (0, 0)
        return int(self._child_lo[n][i]), int(self._child_hi[n][i])

    def descendant_range(self, n, i, m):
        """Index range of the m-cells inside the n-cell i (m >= n)."""
        lo, hi = i, i + 1
        for level in range(n, m):
            if hi <= lo:
                return (0, 0)
            lo, hi = int(self._child_lo[level][lo]), int(self._child_hi[level][hi - 1])
        return lo, hi

    def ancestors_at(self, n, m):
        """Array giving, for every n-cell, the index of its ancestor at level m <= n."""
        a = np.arange(len(self.levels[n]), dtype=np.int64)
        for level in range(n, m, -1):
            a = self._parent[level][a]
        return a

    def ancestor_index(self, n, i, m):
        for level in range(n, m, -1):
            i = int(self._parent[level][i])
        return i

    def vertex_level(self, v):
        return self.vertex_origin[v][0]

    def cells_with_vertex(self, v, n):
        """Indices of the n-cells containing the vertex v."""
        lvl, creator = self.vertex_origin[v]
        if n >= lvl:
            return list(self._incidence[n].get(v, ()))
        # the vertex is interior to a single cell at coarser levels
        return [self.index(creator[:n])]

    def vertices_at(self, n):
        return self._incidence[n]

    def intersect(self, n, i, j):
        if i == j:
            return True
        return not set(self.levels[n][i].vertex_ids).isdisjoint(self.levels[n][j].vertex_ids)

    def contains_vertex(self, n, i, v):
        return i in self.cells_with_vertex(v, n)

    def vertex_table(self):
        """For each vertex id and each level, the indices of the cells containing it."""
        table = {}
        for v in sorted(self.vertex_origin):
            table[v] = {n: self.cells_with_vertex(v, n) for n in range(self.depth + 1)}
        return table

    def to_dict(self):
        cells = [
            {"address": list(c.address), "type": c.type_id, "vertices": list(c.vertex_ids)}
            for lv in self.levels
            for c in lv
        ]
        verts = {}
        for v, (lvl, creator) in sorted(self.vertex_origin.items()):
            entry = {"level": lvl, "creator": None if creator is None else list(creator)}
            if v in self.vertex_coords:
                entry["coords"] = [str(x) for x in self.vertex_coords[v]]
            verts[str(v)] = entry
        return {"depth": self.depth, "counts": self.counts(), "cells": cells, "vertices": verts}


def expand(sys: ReplacementSystem, depth: int, cap: int = DEFAULT_CELL_CAP) -> CellComplex:
    """Expand a replacement system to the given depth.

    Vertex ids are assigned level by level in address order, root boundary
    vertices first, so extending the depth never renames a vertex.
    """
    report = validate_system(sys)
    if not report.ok:
        raise MalformedGluing("; ".join(report.problems))
    if depth < 0:
        raise LevelOutOfRange("depth must be nonnegative")
    projected = sum(sys.level_counts(depth))
    if projected > cap:
        raise DepthOverflow(f"depth {depth} would create {projected} cells (cap {cap})")
    tm = sys.type_map
    root = tm[sys.root_type]
    levels = [[Cell((), 0, root.id, tuple(range(root.boundary_arity)))]]
    vertex_origin = {v: (0, None) for v in range(root.boundary_arity)}
    next_id = root.boundary_arity
    for n in range(depth):
        out = []
        for cell in levels[n]:
            t = tm[cell.type_id]
            jbase = next_id
            next_id += t.junctions
            for j in range(t.junctions):
                vertex_origin[jbase + j] = (n + 1, cell.address)
            free = {}
            for child, vtx, kind, idx in t.gluing:
                if kind == "free":
                    free[(child, vtx)] = next_id
                    vertex_origin[next_id] = (n + 1, cell.address)
                    next_id += 1
            for ci, ctid in enumerate(t.children):
                ct = tm[ctid]
                vids = []
                for s in range(ct.boundary_arity):
                    kind, idx = t.target(ci, s)
                    if kind == "parent":
                        vids.append(cell.vertex_ids[idx])
                    elif kind == "junction":
                        vids.append(jbase + idx)
                    else:
                        vids.append(free[(ci, s)])
                out.append(Cell(cell.address + (ci,), n + 1, ctid, tuple(vids)))
        levels.append(out)
    return CellComplex(sys, levels, vertex_origin)


# ---------------------------------------------------------------------------
# explicit enumeration: the plus-shaped space with a shrinking dead zone

def _plus_delta_exp(n):
    """Exponent e with delta_n = 2**-e, where delta_n = 2**-floor(log2 n)."""
    return n.bit_length() - 1


def _plus_level(n, D):
    """Cells of X minus V_n in integer units of 2**-D, as (kind, a, b) triples."""
    if n == 0:
        return [("root", 0, 0)]
    s = 1 << (D - n)
    one = 1 << D
    delta = one >> _plus_delta_exp(n)
    cells = [("origin", delta, s)]
    cells += [("h", x, x + s) for x in range(-one, -delta, s)]
    cells += [("h", x, x + s) for x in range(delta, one, s)]
    cells += [("v", y, y + s) for y in range(s, one, s)]
    return cells


def _plus_points(cell):
    kind, a, b = cell
    if kind == "origin":
        return [(-a, 0), (a, 0), (0, b)]
    if kind == "h":
        return [(a, 0), (b, 0)]
    if kind == "v":
        return [(0, a), (0, b)]
    return []


def _plus_parent_key(child, parent_level):
    """Which cell of parent_level contains ``child``; keys match _plus_level entries."""
    kind, a, b = child
    if kind == "origin":
        return ("origin",)
    s = parent_level["step"]
    delta = parent_level["delta"]
    if kind == "h":
        if a >= delta or b <= -delta:
            x = (a // s) * s
            return ("h", x)
        return ("origin",)
    if a >= s:
        return ("v", (a // s) * s)
    return ("origin",)


def _plus_sort_key(cell):
    kind, a, b = cell
    return ({"root": 0, "origin": 0, "h": 1, "v": 2}[kind], a)


def enumerate_explicit(name: str, depth: int, cap: int = DEFAULT_CELL_CAP) -> CellComplex:
    """Enumerate a builtin explicitly defined cell structure.

    Only ``plus-example`` exists: X = [-1,1] x {0} union {0} x [0,1] with
    V_n = {(x,y) in X : x, y in 2**-n Z and (|x| >= delta_n or y > 0)} and
    delta_n = 2**-floor(log2 n).  Coordinates are exact.
    """
    if name != "plus-example":
        raise UnknownBuiltin(f"unknown explicit builtin {name!r}")
    if depth < 0:
        raise LevelOutOfRange("depth must be nonnegative")
    D = max(depth, 1)
    projected = 1 + sum(3 * 2**n - 2 ** (n + 1 - _plus_delta_exp(n)) for n in range(1, depth + 1))
    if projected > cap:
        raise DepthOverflow(f"depth {depth} would create {projected} cells (cap {cap})")
    scale = Fraction(1, 1 << D)
    raw = [_plus_level(n, D) for n in range(depth + 1)]
    levels = [[Cell((), 0, "root", ())]]
    vertex_id = {}
    vertex_origin = {}
    vertex_coords = {}
    prev_cells = [("root", 0, 0)]
    for n in range(1, depth + 1):
        prev_index = {}
        for i, c in enumerate(prev_cells):
            key = ("origin",) if c[0] in ("origin", "root") else (c[0], c[1])
            prev_index[key] = i
        if n == 1:
            parent_info = None
        else:
            parent_info = {
                "step": 1 << (D - n + 1),
                "delta": (1 << D) >> _plus_delta_exp(n - 1),
            }
        grouped = []
        for c in raw[n]:
            if parent_info is None:
                pidx = 0
            else:
                pidx = prev_index[_plus_parent_key(c, parent_info)]
            grouped.append((pidx, _plus_sort_key(c), c))
        grouped.sort()
        level_cells = []
        counters = {}
        ordered = []
        for pidx, _, c in grouped:
            ci = counters.get(pidx, 0)
            counters[pidx] = ci + 1
            paddr = levels[n - 1][pidx].address
            vids = []
            for pt in _plus_points(c):
                if pt not in vertex_id:
                    v = len(vertex_id)
                    vertex_id[pt] = v
                    vertex_origin[v] = (n, paddr)
                    vertex_coords[v] = (pt[0] * scale, pt[1] * scale)
                vids.append(vertex_id[pt])
            level_cells.append(Cell(paddr + (ci,), n, "origin" if c[0] == "origin" else "segment", tuple(vids)))
            ordered.append(c)
        levels.append(level_cells)
        prev_cells = ordered
    cx = CellComplex("plus-example", levels, vertex_origin, vertex_coords)
    cx.shapes = [[("root", ())]] + [
        [(c.type_id, tuple(vertex_coords[v] for v in c.vertex_ids)) for c in lv] for lv in levels[1:]
    ]
    return cx


def plus_cell_at(cx, n, contains):
    """Index of the n-cell of the plus-example whose shape matches ``contains``.

    ``contains`` is a predicate on the cell's tuple of endpoint coordinates.
    """
    for i, (kind, pts) in enumerate(cx.shapes[n]):
        if contains(kind, pts):
            return i
    return None


# ---------------------------------------------------------------------------
# adjacency, points and covering pairs

def same_level_adjacency(cx: CellComplex, n: int):
    """All unordered pairs of distinct n-cells sharing a vertex, with the shared ids."""
    if not 0 <= n <= cx.depth:
        raise LevelOutOfRange(f"level {n} outside 0..{cx.depth}")
    shared = {}
    for v, cells in cx.vertices_at(n).items():
        for i, j in itertools.combinations(sorted(cells), 2):
            shared.setdefault((i, j), []).append(v)
    lv = cx.levels[n]
    return [(lv[i], lv[j], tuple(sorted(vs))) for (i, j), vs in sorted(shared.items())]


def _path_type_ids(sys, digits):
    tm = sys.type_map
    t = sys.root_type
    out = [t]
    for d in digits:
        t = tm[t].children[d]
        out.append(t)
    return out


def point_vertex(cx: CellComplex, p: PointAddress):
    """Resolve an eventually periodic address to a vertex.

    Returns ``(level, slot)`` for the earliest level at which the point is a
    boundary vertex of its path cell, or None when the point is never a vertex.
    Needs a replacement-system source.
    """
    sys = cx.source
    if not isinstance(sys, ReplacementSystem):
        return None
    tm = sys.type_map
    h, c = len(p.head), len(p.cycle)
    horizon = h + c * (2 * len(sys.types) + 1)
    digits = p.digits(horizon + 1)
    types = _path_type_ids(sys, digits)

    def digit(i):
        return p.head[i] if i < h else p.cycle[(i - h) % c]

    for start in range(horizon + 1):
        for slot in range(tm[types[start]].boundary_arity):
            level, s, tid = start, slot, types[start]
            seen = set()
            ok = True
            while True:
                if level >= h:
                    key = ((level - h) % c, tid, s)
                    if key in seen:
                        break
                    seen.add(key)
                t = tm[tid]
                d = digit(level)
                child_t = tm[t.children[d]]
                nxt = None
                for cs in range(child_t.boundary_arity):
                    if t.target(d, cs) == ("parent", s):
                        nxt = cs
                        break
                if nxt is None:
                    ok = False
                    break
                level, s, tid = level + 1, nxt, child_t.id
            if ok:
                return start, slot
    return None


def resolve_point(cx: CellComplex, p: PointAddress):
    """Return ``("vertex", id)`` or ``("path", digits)`` for a point address."""
    if p.vertex is not None:
        head_idx = cx.index(p.head)
        if p.vertex not in cx.vertex_origin:
            raise LevelOutOfRange(f"vertex {p.vertex} is not in the complex")
        if head_idx not in cx.cells_with_vertex(p.vertex, len(p.head)):
            raise LevelOutOfRange(f"vertex {p.vertex} is not in the cell {p.head}")
        return ("vertex", p.vertex)
    hit = point_vertex(cx, p)
    if hit is not None and hit[0] <= cx.depth:
        level, slot = hit
        cell = cx.cell(p.digits(level))
        return ("vertex", cell.vertex_ids[slot])
    return ("path", p.digits(cx.depth))


def _containing(cx, resolved, n):
    kind, val = resolved
    if kind == "vertex":
        return cx.cells_with_vertex(val, n)
    return [cx.index(val[:n])]


def _same_point(p, q, rp, rq):
    if rp[0] == "vertex" and rq[0] == "vertex":
        return rp[1] == rq[1]
    if rp[0] != rq[0]:
        return False
    n = max(len(p.head), len(q.head)) + max(1, len(p.cycle)) * max(1, len(q.cycle))
    return p.digits(n) == q.digits(n) and len(p.digits(n)) == n


def covering_level(cx: CellComplex, p: PointAddress, q: PointAddress):
    """Deepest level at which p and q lie in an intersecting pair of cells.

    Returns ``(level, covering_pairs, P)`` with ``P = level + 1``.  Every
    covering pair at that level is listed, as (cell containing p, cell
    containing q).
    """
    rp, rq = resolve_point(cx, p), resolve_point(cx, q)
    if _same_point(p, q, rp, rq):
        raise DistinctPointsRequired("covering pairs need two distinct points")
    best = None
    for n in range(cx.depth + 1):
        pairs = []
        for i in _containing(cx, rp, n):
            for j in _containing(cx, rq, n):
                if cx.intersect(n, i, j):
                    pairs.append((cx.levels[n][i], cx.levels[n][j]))
        if not pairs:
            break
        best = (n, pairs)
    else:
        raise DepthInsufficient(f"points still covered at depth {cx.depth}")
    level, pairs = best
    return level, pairs, level + 1


# ---------------------------------------------------------------------------
# admissibility (combinatorial exponential decay and cell separation)

@dataclass
class AdmissibilityReport:
    k: int
    depth: int
    cond1: dict
    cond2: dict

    @property
    def cond1_ok(self):
        return all(v["ok"] for v in self.cond1.values())

    @property
    def cond2_ok(self):
        return all(v["ok"] for v in self.cond2.values())

    @property
    def passed(self):
        return self.cond1_ok and self.cond2_ok

    def failing_levels(self, cond):
        table = self.cond1 if cond == 1 else self.cond2
        return [n for n, v in sorted(table.items()) if not v["ok"]]

    def to_dict(self):
        def fmt(table):
            return {
                str(n): {
                    "ok": v["ok"],
                    "failures": v["failures"],
                    "witnesses": [[list(a) for a in w] for w in v["witnesses"]],
                }
                for n, v in sorted(table.items())
            }

        return {"k": self.k, "depth": self.depth, "passed": self.passed, "cond1": fmt(self.cond1), "cond2": fmt(self.cond2)}


def _has_disjoint_pair(cells):
    vs = [set(c.vertex_ids) for c in cells]
    for i in range(len(vs)):
        for j in range(i + 1, len(vs)):
            if vs[i].isdisjoint(vs[j]):
                return True
    return False


def check_admissibility(cx: CellComplex, k: int, max_witnesses: int = 64) -> AdmissibilityReport:
    """Check both combinatorial conditions for every n with n + k <= depth.

    Condition 1: every n-cell contains two disjoint (n+k)-cells.
    Condition 2: no (n+k)-cell meets two disjoint n-cells.
    Witnesses are address tuples: ``(n-cell,)`` for condition 1 and
    ``((n+k)-cell, n-cell, n-cell)`` for condition 2.
    """
    if k < 1:
        raise InsufficientDepth("k must be at least 1")
    if cx.depth < k + 1:
        raise InsufficientDepth(f"depth {cx.depth} < k+1 = {k + 1}")
    cond1, cond2 = {}, {}
    for n in range(0, cx.depth - k + 1):
        m = n + k
        fine = cx.levels[m]
        coarse = cx.levels[n]
        # condition 1
        fails, wit = 0, []
        for i in range(len(coarse)):
            lo, hi = cx.descendant_range(n, i, m)
            if not _has_disjoint_pair(fine[lo:hi]):
                fails += 1
                if len(wit) < max_witnesses:
                    wit.append((coarse[i].address,))
        cond1[n] = {"ok": fails == 0, "failures": fails, "witnesses": wit}
        # condition 2
        anc = cx.ancestors_at(m, n)
        fails, wit = 0, []
        for f_idx, F in enumerate(fine):
            A = coarse[anc[f_idx]]
            shared = set(F.vertex_ids).intersection(A.vertex_ids)
            if len(shared) < 2:
                continue
            meets = {}
            for v in shared:
                for b in cx.cells_with_vertex(v, n):
                    if b != anc[f_idx]:
                        meets[b] = v
            found = None
            keys = sorted(meets)
            for a_i, b_i in itertools.combinations(keys, 2):
                if not cx.intersect(n, a_i, b_i):
                    found = (a_i, b_i)
                    break
            if found:
                fails += 1
                if len(wit) < max_witnesses:
                    wit.append((F.address, coarse[found[0]].address, coarse[found[1]].address))
        cond2[n] = {"ok": fails == 0, "failures": fails, "witnesses": wit}
    return AdmissibilityReport(k=k, depth=cx.depth, cond1=cond1, cond2=cond2)
