"""Metrics on cell complexes.

An :class:`EmbeddedMetric` knows the diameter of every cell and the distance
between any two cells of the same complex.  Three concrete kinds exist:

* :class:`ShapeMetric` for builtins with exact shapes (triangles, rectangles,
  intervals); diameters and distances use closed forms.
* :class:`CloudMetric` for sampled cells (Julia sets); diameters are sample
  maxima and distances sample minima.
* :class:`MatrixMetric` for a finite point set with a distance matrix, used to
  treat the intrinsic metric d_alpha as an embedding.

The verification routines compare cells level by level.  Any finite depth
admits some constants, so verdicts rest on a drift test: the per-level
extremes of each ratio are regressed against the level, and a slope beyond
``DRIFT_TOL`` (in natural-log units per level) in the harmful direction fails.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.sparse import csr_matrix
from scipy.sparse.csgraph import dijkstra
from scipy.spatial import ConvexHull, QhullError, cKDTree

from .builtins import Geometry, RauzyGeometry, builtin_geometry
from .cell_model import (
    CellComplex,
    PointAddress,
    check_admissibility,
    covering_level,
    resolve_point,
)
from .errors import (
    AdmissibilityRequired,
    AlphaRange,
    DegenerateTriple,
    InsufficientDepth,
    LevelOutOfRange,
    MissingCellSamples,
)

DRIFT_TOL = 1e-2
ETA_BINS = 60


# ---------------------------------------------------------------------------
# embedded metrics

class EmbeddedMetric:
    """Diameters of cells and distances between same-level cells."""

    kind = None

    def __init__(self, cx: CellComplex, source=None, density=None):
        self.cx = cx
        self.source = source
        self.density = density
        self._diam = {}

    def diameters(self, n):
        if n not in self._diam:
            self._diam[n] = self._diameters(n)
        return self._diam[n]

    def _diameters(self, n):
        raise NotImplementedError

    def distances(self, n, I, J):
        """Distances between the n-cells I[t] and J[t]."""
        raise NotImplementedError

    def vertex_point(self, v):
        return self.vertex_coords.get(v)


def _point_segment(p, a, b):
    ab = b - a
    denom = np.einsum("...i,...i->...", ab, ab)
    t = np.einsum("...i,...i->...", p - a, ab) / np.where(denom > 0, denom, 1.0)
    t = np.clip(t, 0.0, 1.0)
    proj = a + t[..., None] * ab
    return np.linalg.norm(p - proj, axis=-1)


def polygon_distance(A, B):
    """Distance between closed convex polygons that do not overlap.

    The minimum of two disjoint convex polygons is attained at a vertex of
    one of them, so vertex-to-edge distances suffice.
    """
    A = np.asarray(A, dtype=float)
    B = np.asarray(B, dtype=float)
    best = np.full(A.shape[0], np.inf)
    for P, Q in ((A, B), (B, A)):
        k = Q.shape[1]
        for e in range(k):
            a, b = Q[:, e], Q[:, (e + 1) % k]
            for v in range(P.shape[1]):
                best = np.minimum(best, _point_segment(P[:, v], a, b))
    return best


class ShapeMetric(EmbeddedMetric):
    """Exact shapes from a builtin geometry.

    Triangles: the gaskets contain the edges of every cell's triangle, so the
    diameter is the longest side and the distance between disjoint cells is
    the distance between their triangles.  Rectangles (Vicsek family): both
    diagonals lie in the cell, so the diameter is the diagonal; the distance
    between the rectangles is a lower bound for the cell distance.
    Intervals: exact.
    """

    def __init__(self, cx, geometry: Geometry):
        super().__init__(cx, source=geometry.name, density="exact")
        self.geometry = geometry
        self.kind = geometry.kind
        self.shapes = geometry.level_shapes(cx)
        self.vertex_coords = {}
        for n, lv in enumerate(cx.levels):
            for i, c in enumerate(lv):
                for slot, v in enumerate(c.vertex_ids):
                    if v not in self.vertex_coords:
                        self.vertex_coords[v] = tuple(self.shapes[n][i][slot])

    def _diameters(self, n):
        S = self.shapes[n]
        if self.kind == "triangle":
            sides = [np.linalg.norm(S[:, i] - S[:, (i + 1) % 3], axis=1) for i in range(3)]
            return np.max(sides, axis=0)
        if self.kind == "rect":
            return np.linalg.norm(S[:, 2] - S[:, 0], axis=1)
        if self.kind == "interval":
            return np.abs(S[:, 1, 0] - S[:, 0, 0])
        raise ValueError(self.kind)

    def distances(self, n, I, J):
        S = self.shapes[n]
        A, B = S[np.asarray(I)], S[np.asarray(J)]
        if self.kind == "triangle":
            return polygon_distance(A, B)
        if self.kind == "rect":
            dx = np.maximum(0.0, np.maximum(A[:, 0, 0] - B[:, 1, 0], B[:, 0, 0] - A[:, 1, 0]))
            dy = np.maximum(0.0, np.maximum(A[:, 0, 1] - B[:, 2, 1], B[:, 0, 1] - A[:, 2, 1]))
            return np.hypot(dx, dy)
        if self.kind == "interval":
            a0, a1 = A[:, 0, 0], A[:, 1, 0]
            b0, b1 = B[:, 0, 0], B[:, 1, 0]
            return np.maximum(0.0, np.maximum(b0 - a1, a0 - b1))
        raise ValueError(self.kind)


def cloud_diameter(pts):
    pts = np.asarray(pts, dtype=float)
    if len(pts) > 8:
        try:
            pts = pts[ConvexHull(pts).vertices]
        except QhullError:
            pass
    d = pts[:, None, :] - pts[None, :, :]
    return float(np.sqrt((d**2).sum(-1)).max())


class CloudMetric(EmbeddedMetric):
    """Cells given by point samples (N, 2); diameters are sample maxima."""

    kind = "cloud"

    def __init__(self, cx, clouds, vertex_coords=None, source=None, density=None):
        super().__init__(cx, source=source, density=density)
        self.clouds = clouds
        self.vertex_coords = dict(vertex_coords or {})
        self._trees = {}
        for n, lv in enumerate(cx.levels):
            if len(clouds[n]) != len(lv):
                raise MissingCellSamples(f"level {n}: {len(clouds[n])} clouds for {len(lv)} cells")
            for i, pts in enumerate(clouds[n]):
                if len(pts) < 2:
                    raise MissingCellSamples(f"cell {lv[i].address} has {len(pts)} samples")

    def _diameters(self, n):
        return np.array([cloud_diameter(p) for p in self.clouds[n]])

    def _tree(self, n, i):
        key = (n, i)
        if key not in self._trees:
            self._trees[key] = cKDTree(self.clouds[n][i])
        return self._trees[key]

    def distances(self, n, I, J):
        out = np.empty(len(I))
        for t, (i, j) in enumerate(zip(I, J)):
            # query the smaller cloud against the tree of the larger one
            if len(self.clouds[n][i]) > len(self.clouds[n][j]):
                i, j = j, i
            d, _ = self._tree(n, j).query(self.clouds[n][i], k=1)
            out[t] = d.min()
        return out

    def refinement_change(self, n, fraction=0.5, seed=0):
        """Largest relative diameter change when each cloud is subsampled."""
        rng = np.random.default_rng(seed)
        full = self.diameters(n)
        worst = 0.0
        for i, pts in enumerate(self.clouds[n]):
            m = max(2, int(len(pts) * fraction))
            sub = pts[rng.choice(len(pts), m, replace=False)]
            worst = max(worst, abs(full[i] - cloud_diameter(sub)) / full[i])
        return worst


class MatrixMetric(EmbeddedMetric):
    """Cells given as index sets into a finite metric space."""

    kind = "matrix"

    def __init__(self, cx, members, D, source=None):
        super().__init__(cx, source=source, density=f"{len(D)} points")
        self.members = members
        self.D = D
        self.vertex_coords = {}
        for n, lv in enumerate(cx.levels):
            for i, idx in enumerate(members[n]):
                if len(idx) < 2:
                    raise MissingCellSamples(f"cell {lv[i].address} has {len(idx)} points")

    def _diameters(self, n):
        return np.array([self.D[np.ix_(idx, idx)].max() for idx in self.members[n]])

    def distances(self, n, I, J):
        M = self.members[n]
        return np.array([self.D[np.ix_(M[i], M[j])].min() for i, j in zip(I, J)])


def attach_embedding(cx: CellComplex, source, params=None) -> EmbeddedMetric:
    """Attach coordinates to the cells of ``cx``.

    ``source`` is a :class:`Geometry`, the name of a geometric builtin, or a
    mapping ``{"clouds": per-level lists of point arrays, "vertices": {...}}``
    (a labeled point file).
    """
    if isinstance(source, str):
        source = builtin_geometry(source, params)
    if isinstance(source, Geometry):
        return ShapeMetric(cx, source)
    if isinstance(source, dict) and "clouds" in source:
        return CloudMetric(cx, source["clouds"], source.get("vertices"), source=source.get("name"))
    raise MissingCellSamples(f"cannot attach coordinates from {type(source).__name__}")


def diam_table(m: EmbeddedMetric, cx: CellComplex, depth=None):
    """Rows ``(level, address, diameter)`` for every cell of level <= depth."""
    depth = cx.depth if depth is None else depth
    if depth > cx.depth:
        raise LevelOutOfRange(f"depth {depth} exceeds complex depth {cx.depth}")
    rows = []
    for n in range(depth + 1):
        d = m.diameters(n)
        for c, val in zip(cx.levels[n], d):
            rows.append((n, c.address, float(val)))
    return rows


def format_address(address):
    return ".".join(str(a) for a in address) if address else "root"


def diam_csv(rows):
    lines = ["level,address,diameter"]
    lines += [f"{n},{format_address(a)},{d:.17g}" for n, a, d in rows]
    return "\n".join(lines) + "\n"


# ---------------------------------------------------------------------------
# cell pair enumeration

def _incidence_csr(cx, n, nverts):
    inc = cx.vertices_at(n)
    counts = np.zeros(nverts, dtype=np.int64)
    for v, cells in inc.items():
        counts[v] = len(cells)
    indptr = np.concatenate([[0], np.cumsum(counts)])
    data = np.empty(indptr[-1], dtype=np.int64)
    for v, cells in inc.items():
        data[indptr[v]:indptr[v + 1]] = cells
    return indptr, data


def _incidence_pairs(cx, n):
    inc = cx.vertices_at(n)
    vs, cs = [], []
    for v, cells in inc.items():
        vs.extend([v] * len(cells))
        cs.extend(cells)
    return np.array(vs, dtype=np.int64), np.array(cs, dtype=np.int64)


class _PairIndex:
    """Cached incidence arrays for enumerating intersecting cell pairs."""

    def __init__(self, cx):
        self.cx = cx
        self.nverts = (max(cx.vertex_origin) + 1) if cx.vertex_origin else 0
        self._csr = {}
        self._pairs = {}

    def csr(self, n):
        if n not in self._csr:
            self._csr[n] = _incidence_csr(self.cx, n, self.nverts)
        return self._csr[n]

    def inc(self, n):
        if n not in self._pairs:
            self._pairs[n] = _incidence_pairs(self.cx, n)
        return self._pairs[n]

    def cross_pairs(self, m, n):
        """Intersecting pairs (E' at level n, E at level m), m <= n.

        Either E is the ancestor of E', or they share a level-m vertex.
        Pairs may repeat; callers only take extremes.
        """
        cx = self.cx
        anc = cx.ancestors_at(n, m)
        fine = [np.arange(len(cx.levels[n]), dtype=np.int64)]
        coarse = [anc]
        vs, cs = self.inc(m)
        if len(vs):
            indptr, data = self.csr(n)
            lens = indptr[vs + 1] - indptr[vs]
            starts = np.repeat(indptr[vs], lens)
            offs = np.arange(lens.sum()) - np.repeat(np.cumsum(lens) - lens, lens)
            fine.append(data[starts + offs])
            coarse.append(np.repeat(cs, lens))
        return np.concatenate(fine), np.concatenate(coarse)

    def same_level_pairs(self, n):
        """Unordered pairs i < j of distinct intersecting n-cells."""
        vs, cs = self.inc(n)
        if not len(vs):
            return np.zeros(0, dtype=np.int64), np.zeros(0, dtype=np.int64)
        indptr, data = self.csr(n)
        lens = indptr[vs + 1] - indptr[vs]
        starts = np.repeat(indptr[vs], lens)
        offs = np.arange(lens.sum()) - np.repeat(np.cumsum(lens) - lens, lens)
        a = np.repeat(cs, lens)
        b = data[starts + offs]
        keep = a < b
        pairs = np.unique(np.stack([a[keep], b[keep]], axis=1), axis=0)
        return pairs[:, 0], pairs[:, 1]

    def disjoint_pairs_local(self, n):
        """Disjoint n-cells i < j whose parents intersect (or coincide)."""
        cx = self.cx
        if n == 0:
            return np.zeros(0, dtype=np.int64), np.zeros(0, dtype=np.int64)
        pa, pb = self.same_level_pairs(n - 1)
        parents = list(zip(range(len(cx.levels[n - 1])), range(len(cx.levels[n - 1])))) + list(zip(pa, pb))
        lv = cx.levels[n]
        sets = [frozenset(c.vertex_ids) for c in lv]
        I, J = [], []
        for p, q in parents:
            plo, phi = cx.children_range(n - 1, int(p))
            qlo, qhi = cx.children_range(n - 1, int(q))
            for i in range(plo, phi):
                for j in range(qlo if p != q else i + 1, qhi):
                    if sets[i].isdisjoint(sets[j]):
                        I.append(min(i, j))
                        J.append(max(i, j))
        return np.array(I, dtype=np.int64), np.array(J, dtype=np.int64)

    def disjoint_pairs_all(self, n):
        lv = self.cx.levels[n]
        sets = [frozenset(c.vertex_ids) for c in lv]
        I, J = [], []
        for i in range(len(lv)):
            for j in range(i + 1, len(lv)):
                if sets[i].isdisjoint(sets[j]):
                    I.append(i)
                    J.append(j)
        return np.array(I, dtype=np.int64), np.array(J, dtype=np.int64)


def _slope(xs, ys):
    xs = np.asarray(xs, dtype=float)
    ys = np.asarray(ys, dtype=float)
    if len(xs) < 2:
        return 0.0
    return float(np.polyfit(xs, ys, 1)[0])


def _drift_window(first, last):
    """Levels used for the drift regression: the upper half of [first, last]."""
    lo = max(first, (first + last + 1) // 2)
    if last - lo + 1 < 3:
        lo = max(first, last - 2)
    return list(range(lo, last + 1))


# ---------------------------------------------------------------------------
# undistorted verification

@dataclass
class UndistortedConstants:
    r: float
    R: float
    C: float
    delta: float

    def to_dict(self):
        return {"r": self.r, "R": self.R, "C": self.C, "delta": self.delta}


@dataclass
class UndistortedReport:
    passed: bool
    constants: UndistortedConstants
    depth: int
    ratio_table: dict
    delta_table: dict
    drift: dict
    failures: list = field(default_factory=list)
    witnesses: list = field(default_factory=list)
    notes: list = field(default_factory=list)

    @property
    def verdict(self):
        return "pass" if self.passed else "fail"

    def to_dict(self):
        return {
            "verdict": self.verdict,
            "constants": self.constants.to_dict(),
            "depth": self.depth,
            "drift": self.drift,
            "failures": self.failures,
            "witnesses": self.witnesses,
            "ratios": {
                str(j): {"hi": [float(x) for x in t["hi"]], "lo": [float(x) for x in t["lo"]], "levels": t["levels"]}
                for j, t in sorted(self.ratio_table.items())
            },
            "delta_by_level": {str(n): v for n, v in sorted(self.delta_table.items())},
            "notes": self.notes,
        }


def _cross_level_table(m, cx, pidx):
    """hi/lo diameter ratios per gap j and coarse level, with argmax pairs."""
    D = cx.depth
    diam = [m.diameters(n) for n in range(D + 1)]
    table = {}
    for n in range(D + 1):
        for mm in range(n + 1):
            fi, co = pidx.cross_pairs(mm, n)
            ratio = diam[n][fi] / diam[mm][co]
            j = n - mm
            t = table.setdefault(j, {"levels": [], "hi": [], "lo": [], "hi_pair": [], "lo_pair": []})
            a, b = int(np.argmax(ratio)), int(np.argmin(ratio))
            t["levels"].append(mm)
            t["hi"].append(float(ratio[a]))
            t["lo"].append(float(ratio[b]))
            t["hi_pair"].append((mm, int(co[a]), n, int(fi[a])))
            t["lo_pair"].append((mm, int(co[b]), n, int(fi[b])))
    for t in table.values():
        order = np.argsort(t["levels"])
        for key in ("levels", "hi", "lo", "hi_pair", "lo_pair"):
            t[key] = [t[key][i] for i in order]
    return table, diam


def _separation(m, cx, pidx, full_check_depth=4):
    """Per-level minimum of d(E1,E2)/max(diam) over disjoint pairs with intersecting parents."""
    out = {}
    for n in range(1, cx.depth + 1):
        I, J = pidx.disjoint_pairs_local(n)
        if not len(I):
            continue
        d = m.distances(n, I, J)
        diam = m.diameters(n)
        ratio = d / np.maximum(diam[I], diam[J])
        a = int(np.argmin(ratio))
        entry = {"delta": float(ratio[a]), "pair": (int(I[a]), int(J[a])), "pairs": int(len(I))}
        if n <= full_check_depth:
            I2, J2 = pidx.disjoint_pairs_all(n)
            d2 = m.distances(n, I2, J2)
            r2 = d2 / np.maximum(diam[I2], diam[J2])
            entry["delta_all_pairs"] = float(r2.min())
        out[n] = entry
    return out


def verify_undistorted(m: EmbeddedMetric, cx: CellComplex, tol=DRIFT_TOL) -> UndistortedReport:
    """Fit (r, R, C, delta) over all observed pairs and run the drift test.

    R and r are the exponential rates of the largest and smallest diameter
    ratios as a function of the level gap (least squares over gaps >= 1);
    C is then the smallest constant making both bounds hold for every
    observed pair; delta is the smallest separation ratio.
    """
    if cx.depth < 3:
        raise InsufficientDepth(f"need at least 4 levels, complex has {cx.depth + 1}")
    pidx = _PairIndex(cx)
    table, _ = _cross_level_table(m, cx, pidx)
    D = cx.depth
    gaps = sorted(j for j in table if j >= 1)
    hi_j = np.array([max(table[j]["hi"]) for j in gaps])
    lo_j = np.array([min(table[j]["lo"]) for j in gaps])
    R = math.exp(_slope(gaps, np.log(hi_j)))
    r = math.exp(_slope(gaps, np.log(lo_j)))
    C = 1.0
    for j in table:
        C = max(C, max(table[j]["hi"]) / R**j, r**j / min(table[j]["lo"]))
    sep = _separation(m, cx, pidx)
    delta = min(v["delta"] for v in sep.values()) if sep else float("inf")

    failures, witnesses, notes = [], [], []
    drift = {"tolerance": tol, "hi_slope": {}, "lo_slope": {}, "delta_slope": None}
    worst_hi, worst_lo = (-np.inf, None), (np.inf, None)
    for j in sorted(table):
        t = table[j]
        levels = t["levels"]
        usable = [L for L in levels if L >= 1]
        # a three-level series has no upper half to regress over; only the
        # same-level series is tested that short (it is all a depth-3 complex has)
        if len(usable) < (3 if j == 0 else 4):
            drift.setdefault("untested_gaps", []).append(j)
            continue
        win = _drift_window(usable[0], usable[-1])
        idx = [levels.index(L) for L in win]
        s_hi = _slope(win, np.log([t["hi"][i] for i in idx]))
        s_lo = _slope(win, np.log([t["lo"][i] for i in idx]))
        drift["hi_slope"][str(j)] = s_hi
        drift["lo_slope"][str(j)] = s_lo
        if s_hi > worst_hi[0]:
            worst_hi = (s_hi, j)
        if s_lo < worst_lo[0]:
            worst_lo = (s_lo, j)
    drift["max_hi_slope"] = float(worst_hi[0]) if worst_hi[1] is not None else 0.0
    drift["min_lo_slope"] = float(worst_lo[0]) if worst_lo[1] is not None else 0.0
    if worst_hi[1] is not None and worst_hi[0] > tol:
        j = worst_hi[1]
        failures.append(f"exponential decay: largest ratio at gap {j} grows by slope {worst_hi[0]:.4g} per level")
        witnesses += _ratio_witnesses(cx, m, table[j], "hi")
    if worst_lo[1] is not None and worst_lo[0] < -tol:
        j = worst_lo[1]
        failures.append(f"exponential decay: smallest ratio at gap {j} shrinks by slope {worst_lo[0]:.4g} per level")
        witnesses += _ratio_witnesses(cx, m, table[j], "lo")
    if sep:
        levels = sorted(sep)
        win = _drift_window(levels[0], levels[-1])
        win = [L for L in win if L in sep]
        s_d = _slope(win, np.log([max(sep[L]["delta"], 1e-300) for L in win]))
        drift["delta_slope"] = s_d
        if s_d < -tol or delta <= 0:
            failures.append(f"cell separation: ratio shrinks by slope {s_d:.4g} per level")
            L = win[-1]
            i, j = sep[L]["pair"]
            witnesses.append(
                {"kind": "separation", "level": L, "cells": [list(cx.levels[L][i].address), list(cx.levels[L][j].address)],
                 "ratio": sep[L]["delta"]}
            )
        for L, v in sep.items():
            if "delta_all_pairs" in v and v["delta_all_pairs"] < v["delta"] - 1e-12:
                notes.append(f"level {L}: global separation {v['delta_all_pairs']:.6g} below local {v['delta']:.6g}")
    if not R < 1:
        failures.append(f"fitted R = {R:.6g} is not below 1")
    passed = not failures
    return UndistortedReport(
        passed=passed,
        constants=UndistortedConstants(r=r, R=R, C=C, delta=delta),
        depth=D,
        ratio_table=table,
        delta_table={n: v["delta"] for n, v in sep.items()},
        drift=drift,
        failures=failures,
        witnesses=witnesses,
        notes=notes,
    )


def _ratio_witnesses(cx, m, t, key):
    out = []
    for pair, val in zip(t[f"{key}_pair"], t[key]):
        mm, ci, n, fi = pair
        if mm < 1:
            continue
        E, F = cx.levels[mm][ci], cx.levels[n][fi]
        out.append(
            {
                "kind": "decay",
                "levels": [mm, n],
                "cells": [list(E.address), list(F.address)],
                "diameters": [float(m.diameters(mm)[ci]), float(m.diameters(n)[fi])],
                "ratio": float(val),
            }
        )
    return out


def vicsek_witness_family(m: ShapeMetric, cx: CellComplex):
    """The intersecting n-cells 0 2^(n-1) and 4 0^(n-1) of a Vicsek fractal.

    Their diameters are sqrt(2) a c^(n-1) and sqrt(2) b a^(n-1); when a != c
    the ratio diverges with n.
    """
    a, b, c = (float(x) for x in m.geometry.params)
    rows = []
    for n in range(1, cx.depth + 1):
        e1, e2 = (0,) + (2,) * (n - 1), (4,) + (0,) * (n - 1)
        i, j = cx.index(e1), cx.index(e2)
        d = m.diameters(n)
        rows.append(
            {
                "level": n,
                "cells": [list(e1), list(e2)],
                "intersect": cx.intersect(n, i, j),
                "diameters": [float(d[i]), float(d[j])],
                "closed_form": [math.sqrt(2) * a * c ** (n - 1), math.sqrt(2) * b * a ** (n - 1)],
                "ratio": float(d[j] / d[i]),
            }
        )
    return rows


# ---------------------------------------------------------------------------
# local conditions

@dataclass
class LocalConstants:
    lam: float
    mu: float
    k: int
    nu: float
    delta: float

    def as_tuple(self):
        return (self.lam, self.mu, self.k, self.nu, self.delta)

    def to_dict(self):
        return {"lambda": self.lam, "mu": self.mu, "k": self.k, "nu": self.nu, "delta": self.delta}


@dataclass
class LocalReport:
    constants: LocalConstants
    conditions: dict

    @property
    def passed(self):
        return all(c["ok"] for c in self.conditions.values())

    def to_dict(self):
        return {"passed": self.passed, "constants": self.constants.to_dict(), "conditions": self.conditions}


def verify_local_conditions(m: EmbeddedMetric, cx: CellComplex, k=None, tol=DRIFT_TOL) -> LocalReport:
    """Tightest constants for the four local conditions.

    lambda: intersecting same-level pairs; mu: child over parent; k: the
    smallest step with nu < 1 (or the given k); delta: disjoint same-level
    pairs with intersecting parents.
    """
    D = cx.depth
    if k is not None and D < k + 1:
        raise InsufficientDepth(f"depth {D} < k+1 = {k + 1}")
    if D < 2:
        raise InsufficientDepth(f"depth {D} too shallow for local conditions")
    pidx = _PairIndex(cx)
    diam = [m.diameters(n) for n in range(D + 1)]

    lam_n = {}
    for n in range(1, D + 1):
        a, b = pidx.same_level_pairs(n)
        if len(a):
            ratio = diam[n][a] / diam[n][b]
            lam_n[n] = float(max(ratio.max(), (1 / ratio).max()))
        else:
            lam_n[n] = 1.0
    mu_n = {}
    for n in range(1, D + 1):
        mu_n[n] = float((diam[n] / diam[n - 1][cx._parent[n]]).min())

    def nu_for(kk):
        vals = {}
        for n in range(0, D - kk + 1):
            anc = cx.ancestors_at(n + kk, n)
            vals[n] = float((diam[n + kk] / diam[n][anc]).max())
        return vals

    if k is None:
        chosen = None
        for kk in range(1, D):
            vals = nu_for(kk)
            if max(vals.values()) < 1:
                chosen = (kk, vals)
                break
        if chosen is None:
            kk = D - 1
            chosen = (kk, nu_for(kk))
    else:
        chosen = (k, nu_for(k))
    kk, nu_n = chosen
    sep = _separation(m, cx, pidx)
    delta_n = {n: v["delta"] for n, v in sep.items()}

    def cond(values, direction, bound=None):
        levels = sorted(values)
        usable = [L for L in levels if L >= 1]
        slope = 0.0
        if len(usable) >= 3:
            win = _drift_window(usable[0], usable[-1])
            slope = _slope(win, np.log([max(values[L], 1e-300) for L in win]))
        ok = slope <= tol if direction == "up" else slope >= -tol
        if bound is not None:
            ok = ok and bound
        return {"by_level": {str(L): values[L] for L in levels}, "slope": slope, "ok": bool(ok)}

    lam = max(lam_n.values())
    mu = min(mu_n.values())
    nu = max(nu_n.values())
    delta = min(delta_n.values()) if delta_n else float("inf")
    conditions = {
        "lambda": cond(lam_n, "up"),
        "mu": cond(mu_n, "down", mu > 0),
        "nu": cond({n + 1: v for n, v in nu_n.items()}, "up", nu < 1),
        "delta": cond(delta_n, "down", delta > 0),
    }
    return LocalReport(LocalConstants(lam, mu, kk, nu, delta), conditions)


# ---------------------------------------------------------------------------
# strong exponential decay

def decay_fits(levels, values):
    """Compare log d = a + b n against log d = log c - log n.

    Returns a dict with both fitted models and their residual sums of
    squares in log space.
    """
    n = np.asarray(levels, dtype=float)
    y = np.log(np.asarray(values, dtype=float))
    b, a = np.polyfit(n, y, 1)
    res_exp = float(((y - (a + b * n)) ** 2).sum())
    logc = float((y + np.log(n)).mean())
    res_rec = float(((y - (logc - np.log(n))) ** 2).sum())
    return {"exp_rate": float(math.exp(b)), "exp_scale": float(math.exp(a)), "exp_residual": res_exp,
            "recip_c": float(math.exp(logc)), "recip_residual": res_rec}


def strong_decay_fit(m: EmbeddedMetric, cx: CellComplex, tol=DRIFT_TOL) -> dict:
    """Fit diam(E) ~ r^n over all cells of level >= 1.

    Holds when every cell lies in [r^n / C, C r^n] with a C that does not
    drift: the per-level spread of log(diam) - n log r must stay flat.
    """
    D = cx.depth
    if D < 3:
        raise InsufficientDepth(f"need at least 4 levels, complex has {D + 1}")
    xs, ys = [], []
    top, bottom = {}, {}
    for n in range(1, D + 1):
        d = m.diameters(n)
        xs.append(np.full(len(d), n))
        ys.append(np.log(d))
        top[n], bottom[n] = float(d.max()), float(d.min())
    x = np.concatenate(xs).astype(float)
    y = np.concatenate(ys)
    if np.ptp(x) == 0:
        raise InsufficientDepth("need several levels")
    b, a = np.polyfit(x, y, 1)
    r = math.exp(b)
    residual = float(((y - (a + b * x)) ** 2).mean())
    dev = y - b * x
    C = float(math.exp(np.abs(dev).max()))
    win = _drift_window(1, D)
    s_top = _slope(win, [math.log(top[n]) - b * n for n in win])
    s_bot = _slope(win, [math.log(bottom[n]) - b * n for n in win])
    holds = (abs(s_top) <= tol) and (abs(s_bot) <= tol) and r < 1
    levels = list(range(1, D + 1))
    return {
        "r": r,
        "C": C,
        "residual": residual,
        "verdict": "holds" if holds else "fails",
        "band_slopes": {"max": s_top, "min": s_bot},
        "max_diameter": {str(n): top[n] for n in levels},
        "min_diameter": {str(n): bottom[n] for n in levels},
        "max_fits": decay_fits(levels, [top[n] for n in levels]),
    }


def rauzy_power_diameters(nmax, nmin=1):
    """Largest diameter among the three pure-power cells i^n of the Rauzy gasket."""
    g = RauzyGeometry()
    out = {}
    for n in range(nmin, nmax + 1):
        best = 0.0
        for i in range(3):
            tri = g.shape((i,) * n)
            sides = [np.linalg.norm(tri[s] - tri[(s + 1) % 3]) for s in range(3)]
            best = max(best, max(sides))
        out[n] = best
    return out


# ---------------------------------------------------------------------------
# intrinsic metric d_alpha

def alpha_max(k):
    return 1.5 ** (1.0 / k)


class DistanceOracle:
    """Truncated chain metric d_alpha using cells of level <= L.

    Graph nodes are the points of V_L and the cells; a point is joined to
    every cell containing it, each direction weighted alpha^-level / 2, so a
    path between points costs exactly the chain sum of the cells it passes
    through.  Any two intersecting cells share some point of V_L (a boundary
    vertex of the smaller one, or a shared vertex), so paths and chains agree.
    """

    def __init__(self, cx: CellComplex, k: int, alpha: float, L: int):
        self.cx = cx
        self.k = k
        self.alpha = alpha
        self.L = L
        vids = sorted(v for v, (lvl, _) in cx.vertex_origin.items() if lvl <= L)
        self.points = vids
        self.point_index = {v: i for i, v in enumerate(vids)}
        offsets = [len(vids)]
        for n in range(L + 1):
            offsets.append(offsets[-1] + len(cx.levels[n]))
        self.offsets = offsets
        # membership at level L is given by boundary vertices; coarser cells
        # contain the points of their level-L descendants
        memb = [[None] * len(cx.levels[n]) for n in range(L + 1)]
        for i, c in enumerate(cx.levels[L]):
            memb[L][i] = frozenset(self.point_index[v] for v in c.vertex_ids)
        for n in range(L - 1, -1, -1):
            for i in range(len(cx.levels[n])):
                lo, hi = cx.children_range(n, i)
                memb[n][i] = frozenset().union(*(memb[n + 1][ch] for ch in range(lo, hi)))
        self.members = memb
        rows, cols, w = [], [], []
        for n in range(L + 1):
            half = alpha ** (-n) / 2
            for i, pts in enumerate(memb[n]):
                node = offsets[n] + i
                for p in pts:
                    rows += [p, node]
                    cols += [node, p]
                    w += [half, half]
        self._edges = (np.array(rows), np.array(cols), np.array(w))
        self.nnodes = offsets[-1]
        self.graph = csr_matrix((self._edges[2], (self._edges[0], self._edges[1])), shape=(self.nnodes,) * 2)
        self._dist = {}

    def _from(self, p):
        if p not in self._dist:
            self._dist[p] = dijkstra(self.graph, directed=True, indices=p)
        return self._dist[p]

    def _resolve(self, x):
        if isinstance(x, PointAddress):
            kind, val = resolve_point(self.cx, x)
            if kind == "vertex":
                if val not in self.point_index:
                    # a vertex born below level L is reached through its path cells
                    return ("path", self._vertex_path(val))
                return ("vertex", self.point_index[val])
            digits = x.digits(self.L)
            return ("path", tuple((n, self.cx.index(digits[:n])) for n in range(self.L + 1)))
        if x in self.point_index:
            return ("vertex", self.point_index[x])
        return ("path", self._vertex_path(x))

    def _vertex_path(self, v):
        return tuple((n, i) for n in range(self.L + 1) for i in self.cx.cells_with_vertex(v, n))

    def distance(self, x, y):
        """d_alpha^(L)(x, y) for vertex ids or point addresses."""
        rx, ry = self._resolve(x), self._resolve(y)
        if rx == ry:
            return 0.0
        if rx[0] == "vertex" and ry[0] == "vertex":
            return float(min(self._from(rx[1])[ry[1]], self._from(ry[1])[rx[1]]))
        # path points enter the graph through a virtual node joined to their cells
        rows, cols, w = [list(a) for a in self._edges]
        ends = []
        for extra, (r, out) in enumerate(((rx, True), (ry, False))):
            if r[0] == "vertex":
                ends.append(r[1])
                continue
            node_v = self.nnodes + extra
            ends.append(node_v)
            for n, i in r[1]:
                node = self.offsets[n] + i
                rows.append(node_v if out else node)
                cols.append(node if out else node_v)
                w.append(self.alpha ** (-n) / 2)
        g = csr_matrix((w, (rows, cols)), shape=(self.nnodes + 2,) * 2)
        return float(dijkstra(g, directed=True, indices=ends[0])[ends[1]])

    def distance_matrix(self, vertices=None):
        vertices = self.points if vertices is None else vertices
        idx = [self.point_index[v] for v in vertices]
        D = dijkstra(self.graph, directed=True, indices=idx)[:, idx]
        # both directions are chain sums; summation order can differ in the last bit
        return np.minimum(D, D.T)

    def lower_bound(self, x, y):
        """alpha^(1 - P - k), with P from the deepest covering pair in the complex."""
        px = x if isinstance(x, PointAddress) else _vertex_address(self.cx, x)
        py = y if isinstance(y, PointAddress) else _vertex_address(self.cx, y)
        _, _, P = covering_level(self.cx, px, py)
        return self.alpha ** (1 - P - self.k)

    def bracket(self, x, y):
        return self.lower_bound(x, y), self.distance(x, y)

    def cell_diameter(self, n, i):
        pts = sorted(self.members[n][i])
        D = dijkstra(self.graph, directed=True, indices=pts)[:, pts]
        return float(D.max())

    def as_metric(self, depth):
        """A :class:`MatrixMetric` on the cells of level <= depth, using the points of V_L."""
        from .cell_model import CellComplex as _CX

        D = self.distance_matrix()
        sub = _CX(self.cx.source, self.cx.levels[: depth + 1], self.cx.vertex_origin, self.cx.vertex_coords)
        members = [[np.array(sorted(self.members[n][i])) for i in range(len(sub.levels[n]))] for n in range(depth + 1)]
        return MatrixMetric(sub, members, D, source=f"d_alpha(k={self.k}, alpha={self.alpha:.6g}, L={self.L})"), sub


def _vertex_address(cx, v):
    lvl, creator = cx.vertex_origin[v]
    if creator is None:
        return PointAddress(head=(), vertex=v)
    return PointAddress(head=tuple(creator), vertex=v)


def intrinsic_metric(cx: CellComplex, k: int, alpha: float, L: int, check=True) -> DistanceOracle:
    """Build the d_alpha oracle on cells of level <= L."""
    if not (1 < alpha <= alpha_max(k) * (1 + 1e-12)):
        raise AlphaRange(f"alpha = {alpha} outside (1, (3/2)^(1/{k})]")
    if L > cx.depth:
        raise InsufficientDepth(f"L = {L} exceeds complex depth {cx.depth}")
    if check:
        try:
            rep = check_admissibility(cx, k)
        except InsufficientDepth as exc:
            raise AdmissibilityRequired(str(exc)) from exc
        if not rep.passed:
            raise AdmissibilityRequired(
                f"admissibility fails for k={k}: condition 1 at {rep.failing_levels(1)}, condition 2 at {rep.failing_levels(2)}"
            )
    return DistanceOracle(cx, k, alpha, L)


# ---------------------------------------------------------------------------
# quasisymmetry envelopes

def theoretical_eta(consts: UndistortedConstants, C=None, t=None):
    """The modulus max(eta1, eta2) built from shared undistorted constants."""
    r, R, CC, delta = consts.r, consts.R, consts.C if C is None else C, consts.delta
    alpha = max(1 + CC, CC / (delta * r))
    K = alpha**2 * CC
    e1 = math.log(R) / math.log(r)
    e2 = math.log(r) / math.log(R)

    def eta(x):
        x = np.asarray(x, dtype=float)
        return np.maximum(K * (K * x) ** e1, K * (K * x) ** e2)

    return eta if t is None else eta(t)


def merge_constants(a: UndistortedConstants, b: UndistortedConstants):
    return UndistortedConstants(r=min(a.r, b.r), R=max(a.R, b.R), C=max(a.C, b.C), delta=min(a.delta, b.delta))


class AddressPairing:
    """Two geometries on the same address space, compared point by point."""

    def __init__(self, geom1: Geometry, geom2: Geometry, nsym: int, length=32, scale2=1.0, max_prefix=14):
        self.geom1 = geom1
        self.geom2 = geom2
        self.nsym = nsym
        self.length = length
        self.scale2 = scale2
        self.max_prefix = max_prefix

    def sample(self, N, rng):
        L = self.length
        a = rng.integers(0, self.nsym, size=(N, L))
        out = []
        for _ in range(2):
            s = rng.integers(0, self.max_prefix + 1, size=N)
            tail = rng.integers(0, self.nsym, size=(N, L))
            mask = np.arange(L)[None, :] < s[:, None]
            out.append(np.where(mask, a, tail))
        b, c = out
        pa1, pb1, pc1 = (self.geom1.points(x) for x in (a, b, c))
        pa2, pb2, pc2 = (self.geom2.points(x) for x in (a, b, c))
        d1ab = np.linalg.norm(pa1 - pb1, axis=1)
        d1ac = np.linalg.norm(pa1 - pc1, axis=1)
        d2ab = self.scale2 * np.linalg.norm(pa2 - pb2, axis=1)
        d2ac = self.scale2 * np.linalg.norm(pa2 - pc2, axis=1)
        return d1ab, d1ac, d2ab, d2ac


@dataclass
class EtaEnvelope:
    t: np.ndarray
    eta: np.ndarray
    counts: np.ndarray
    samples: int
    degenerate: int
    seed: int
    t_range: tuple

    def __call__(self, x):
        return np.interp(np.log(x), np.log(self.t), self.eta)

    @property
    def monotone(self):
        return bool(np.all(np.diff(self.eta) >= 0))

    def to_csv(self):
        lines = ["t_bin,eta"] + [f"{a:.17g},{b:.17g}" for a, b in zip(self.t, self.eta)]
        return "\n".join(lines) + "\n"

    def to_dict(self):
        return {"samples": self.samples, "degenerate": self.degenerate, "seed": self.seed,
                "t_range": list(self.t_range), "bins": len(self.t), "monotone": self.monotone}


def eta_envelope(pairing, N, seed=0, bins=ETA_BINS) -> EtaEnvelope:
    """Empirical quasisymmetry modulus of a point correspondence.

    Each bin records the largest sampled t in it and the largest output
    ratio; the envelope is then made nondecreasing, and empty bins are
    filled by log-log interpolation between neighbours.
    """
    rng = np.random.default_rng(seed)
    d1ab, d1ac, d2ab, d2ac = pairing.sample(N, rng)
    bad = (d1ab <= 0) | (d1ac <= 0) | (d2ab <= 0) | (d2ac <= 0)
    degenerate = int(bad.sum())
    if degenerate == N:
        raise DegenerateTriple("every sampled triple was degenerate")
    t = d1ab[~bad] / d1ac[~bad]
    s = d2ab[~bad] / d2ac[~bad]
    lo, hi = t.min(), t.max()
    edges = np.geomspace(lo, hi, bins + 1)
    which = np.clip(np.searchsorted(edges, t, side="right") - 1, 0, bins - 1)
    counts = np.bincount(which, minlength=bins)
    tb = np.full(bins, np.nan)
    eb = np.full(bins, np.nan)
    np.maximum.at(eb := np.full(bins, -np.inf), which, s)
    tmax = np.full(bins, -np.inf)
    np.maximum.at(tmax, which, t)
    full = counts > 0
    tb[full] = tmax[full]
    tb[~full] = edges[1:][~full]
    eb[~full] = np.nan
    eb[full] = np.maximum.accumulate(eb[full])
    if (~full).any():
        lx = np.log(tb)
        eb[~full] = np.exp(np.interp(lx[~full], lx[full], np.log(eb[full])))
    eb = np.maximum.accumulate(eb)
    return EtaEnvelope(t=tb, eta=eb, counts=counts, samples=N, degenerate=degenerate, seed=seed, t_range=(float(lo), float(hi)))
