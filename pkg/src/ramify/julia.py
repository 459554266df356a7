"""Julia sets of hyperbolic rational maps cut along finite invariant branch cuts.

The pipeline is

* sample the Julia set by inverse iteration,
* validate a candidate cut S by clustering J minus S and J minus f^-1(S),
* label the 1-cells (components of J minus f^-1(S)) and the transitions
  between them,
* build deeper cells by pulling 1-cell clouds back along inverse branches,
  so a level-n cell is an itinerary word t_0 ... t_{n-1} and f acts as the
  shift,
* read off boundary vertices (points of V_n = f^-n(S)) and derive a
  replacement system whose expansion reproduces the cell tree.

Computations use Euclidean coordinates; every builtin has infinity in the
Fatou set, so the Euclidean and spherical metrics are bilipschitz on J.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
from numpy.polynomial import polynomial as P
from scipy.sparse.csgraph import connected_components
from scipy.spatial import cKDTree

from .cell_model import CellType, ReplacementSystem, expand, validate_system
from .errors import (
    CoverCountMismatch,
    DegreeCollapse,
    GluingAmbiguity,
    InjectivityWitness,
    InsufficientDepth,
    NoRepellingSeed,
    NotInvariant,
    UnknownBuiltin,
    UnstableClustering,
)
from .metrics import CloudMetric, verify_local_conditions, verify_undistorted

ROOT_TOL = 1e-12
VERTEX_TOL = 1e-9
EPS_FACTOR = 6.0
EPS_CHECKS = (0.75, 1.5)
BRANCH_MARGIN = 4.0


# ---------------------------------------------------------------------------
# rational maps

def _trim(c):
    c = np.asarray(c, dtype=complex)
    nz = np.flatnonzero(np.abs(c) > 0)
    return c[: nz[-1] + 1] if len(nz) else np.zeros(1, dtype=complex)


class RationalMap:
    """f = P/Q with coefficient lists in ascending degree."""

    def __init__(self, num, den=(1,), name=None):
        self.num = _trim(num)
        self.den = _trim(den)
        self.name = name
        self.degree = max(len(self.num), len(self.den)) - 1
        if self.degree < 2:
            raise ValueError(f"degree {self.degree} < 2")
        rn, rd = P.polyroots(self.num) if len(self.num) > 1 else [], P.polyroots(self.den) if len(self.den) > 1 else []
        for a in rn:
            for b in rd:
                if abs(a - b) < 1e-8 * (1 + abs(a)):
                    raise ValueError(f"numerator and denominator share the root {a}")

    def __call__(self, z):
        z = np.asarray(z, dtype=complex)
        return P.polyval(z, self.num) / P.polyval(z, self.den)

    def derivative(self, z):
        z = np.asarray(z, dtype=complex)
        p, q = P.polyval(z, self.num), P.polyval(z, self.den)
        dp, dq = P.polyval(z, P.polyder(self.num)), P.polyval(z, P.polyder(self.den))
        return (dp * q - p * dq) / q**2

    def _padded(self):
        d = self.degree
        num = np.zeros(d + 1, dtype=complex)
        den = np.zeros(d + 1, dtype=complex)
        num[: len(self.num)] = self.num
        den[: len(self.den)] = self.den
        return num, den

    def compose(self, g):
        """self o g as a rational map."""
        num, den = self._padded()
        gn, gd = g._padded() if g.degree >= 1 else (g.num, g.den)
        d = self.degree

        def hom(c):
            out = np.zeros(1, dtype=complex)
            for i, a in enumerate(c):
                term = a * P.polymul(P.polypow(gn, i), P.polypow(gd, d - i))
                out = P.polyadd(out, term)
            return out

        return RationalMap(hom(num), hom(den))

    def iterate(self, n):
        g = self
        for _ in range(n - 1):
            g = self.compose(g)
        return g

    def to_dict(self):
        return {
            "num": [[float(c.real), float(c.imag)] for c in self.num],
            "den": [[float(c.real), float(c.imag)] for c in self.den],
        }

    @classmethod
    def from_dict(cls, d):
        def coeffs(xs):
            return [complex(*x) if isinstance(x, (list, tuple)) else complex(x) for x in xs]

        return cls(coeffs(d["num"]), coeffs(d.get("den", [1])))


@dataclass
class Preimages:
    roots: np.ndarray
    multiplicities: list
    at_infinity: int

    def distinct(self):
        out, i = [], 0
        for m in self.multiplicities:
            out.append((complex(self.roots[i]), m))
            i += m
        return out


def _polish(coeffs, z, steps=8):
    d = P.polyder(coeffs)
    for _ in range(steps):
        fz = P.polyval(z, coeffs)
        dz = P.polyval(z, d)
        if abs(dz) < 1e-14:
            break
        step = fz / dz
        z = z - step
        if abs(step) < 1e-17 * (1 + abs(z)):
            break
    return z


def preimages(f: RationalMap, w: complex, strict=False) -> Preimages:
    """All solutions of P(z) - w Q(z) = 0, Newton polished.

    When the leading coefficient cancels, the missing roots are preimages at
    infinity; with ``strict`` this raises DegreeCollapse.
    """
    num, den = f._padded()
    c = num - w * den
    scale = max(np.abs(num).max(), abs(w) * np.abs(den).max(), 1.0)
    c = np.where(np.abs(c) < 1e-14 * scale, 0, c)
    ct = _trim(c)
    missing = f.degree - (len(ct) - 1)
    if missing and strict:
        raise DegreeCollapse(f"{missing} preimage(s) of {w} at infinity")
    roots = P.polyroots(ct) if len(ct) > 1 else np.zeros(0, dtype=complex)
    roots = np.array([_polish(ct, z) for z in roots], dtype=complex)
    # group repeated roots
    mult, out = [], []
    used = np.zeros(len(roots), dtype=bool)
    for i in range(len(roots)):
        if used[i]:
            continue
        close = np.flatnonzero(~used & (np.abs(roots - roots[i]) < 1e-6 * (1 + abs(roots[i]))))
        used[close] = True
        z = roots[close].mean()
        out.extend([z] * len(close))
        mult.append(len(close))
    return Preimages(np.array(out, dtype=complex), mult, missing)


def preimages_batch(f: RationalMap, W):
    """Preimages of many points at once, shape (len(W), d); nan where degenerate."""
    W = np.asarray(W, dtype=complex)
    num, den = f._padded()
    d = f.degree
    C = num[None, :] - W[:, None] * den[None, :]
    lead = C[:, -1]
    ok = np.abs(lead) > 1e-12
    out = np.full((len(W), d), np.nan + 0j)
    if not ok.any():
        return out
    Cm = C[ok] / lead[ok, None]
    comp = np.zeros((len(Cm), d, d), dtype=complex)
    comp[:, 1:, :-1] = np.eye(d - 1)
    comp[:, :, -1] = -Cm[:, :-1]
    Z = np.linalg.eigvals(comp)
    dC = Cm[:, 1:] * np.arange(1, d + 1)
    for _ in range(3):
        fz = np.zeros_like(Z)
        dz = np.zeros_like(Z)
        for k in range(d, -1, -1):
            fz = fz * Z + Cm[:, k, None]
        for k in range(d - 1, -1, -1):
            dz = dz * Z + dC[:, k, None]
        safe = np.abs(dz) > 1e-12
        Z = np.where(safe, Z - fz / np.where(safe, dz, 1), Z)
    out[ok] = Z
    return out


@dataclass
class FixedPoint:
    z: complex
    multiplier: complex
    kind: str

    def to_dict(self):
        return {"z": [self.z.real, self.z.imag], "multiplier_abs": abs(self.multiplier), "kind": self.kind}


def find_fixed_points(f: RationalMap):
    """Finite fixed points with multipliers, sorted by real then imaginary part."""
    num, den = f._padded()
    c = P.polysub(num, P.polymulx(den))
    ct = _trim(c)
    roots = [_polish(ct, z) for z in P.polyroots(ct)]
    out = []
    for z in roots:
        m = complex(f.derivative(z))
        a = abs(m)
        if a < 1e-10:
            kind = "superattracting"
        elif a < 1 - 1e-9:
            kind = "attracting"
        elif a > 1 + 1e-9:
            kind = "repelling"
        else:
            kind = "indifferent"
        out.append(FixedPoint(complex(z), m, kind))
    out.sort(key=lambda fp: (round(fp.z.real, 9), round(fp.z.imag, 9)))
    return out


# ---------------------------------------------------------------------------
# sampling

@dataclass
class JuliaSample:
    points: np.ndarray
    count: int
    seed: int
    burn_in: int
    grid: float
    grid_points: int

    def params(self):
        return {"count": self.count, "seed": self.seed, "burn_in": self.burn_in, "grid": self.grid,
                "grid_points": self.grid_points}


def _grid_sample(f, z0, h, cap, steps=1):
    """Breadth-first preimage tree from z0, keeping one point per grid square.

    The tree grows by ``steps`` inverse steps at a time and is pruned only at
    those nodes, so ``steps`` should make f^steps expanding on J; otherwise a
    pruned node can hide a region that none of its kept neighbours reaches.
    """
    seen = {(math.floor(z0.real / h), math.floor(z0.imag / h))}
    pts = [z0]
    frontier = np.array([z0])
    while len(frontier):
        layer = frontier
        for _ in range(steps):
            layer = preimages_batch(f, layer).ravel()
            layer = layer[np.isfinite(layer)]
            kx = np.floor(layer.real / h).astype(np.int64)
            ky = np.floor(layer.imag / h).astype(np.int64)
            new = []
            for z, a, b in zip(layer, kx, ky):
                key = (int(a), int(b))
                if key not in seen:
                    seen.add(key)
                    new.append(z)
            pts.extend(new)
            if len(pts) > cap:
                return None
        frontier = np.array(new)
    return np.array(pts)


def expansion_steps(f, z0, probe=2000, max_steps=6, seed=0):
    """Smallest m with |(f^m)'| > 1 on random backward orbit points."""
    rng = np.random.default_rng(seed)
    z = np.full(probe, z0, dtype=complex)
    for _ in range(40):
        pre = preimages_batch(f, z)
        z = pre[np.arange(probe), rng.integers(0, f.degree, size=probe)]
    z = z[np.isfinite(z)]
    deriv = np.ones(len(z))
    w = z.copy()
    for m in range(1, max_steps + 1):
        deriv = deriv * np.abs(f.derivative(w))
        w = f(w)
        if deriv.min() > 1.0:
            return m
    return max_steps


def repelling_seed(f):
    reps = [fp for fp in find_fixed_points(f) if fp.kind == "repelling"]
    if not reps:
        raise NoRepellingSeed("no repelling fixed point")
    # the most repelling one has the best-conditioned preimage tree
    return max(reps, key=lambda fp: (abs(fp.multiplier), -fp.z.real)).z


def sample_julia(f: RationalMap, N: int, seed: int = 0, burn_in: int = 50) -> JuliaSample:
    """N points of J_f by inverse iteration from a repelling fixed point.

    Most points come from the preimage tree of the seed pruned to one point
    per square of a grid whose size is tuned so that the tree saturates
    below N points; this covers J evenly instead of following harmonic
    measure.  The remainder is filled with seeded random backward orbits
    after ``burn_in`` steps.
    """
    z0 = repelling_seed(f)
    rng = np.random.default_rng(seed)
    m = expansion_steps(f, z0)
    probe = _grid_sample(f, z0, 0.05, 10**6, m)
    span = max(np.ptp(probe.real), np.ptp(probe.imag), 1e-3)
    h = span / 20
    best, best_h = probe, 0.05
    while True:
        pts = _grid_sample(f, z0, h, N, m)
        if pts is None:
            break
        best, best_h = pts, h
        h *= 0.85
    pts = best[:N]
    need = N - len(pts)
    if need > 0:
        z = np.full(need, z0, dtype=complex)
        for step in range(burn_in + 1):
            pre = preimages_batch(f, z)
            pick = rng.integers(0, f.degree, size=need)
            nxt = pre[np.arange(need), pick]
            z = np.where(np.isfinite(nxt), nxt, z)
        extra = [z]
        pts = np.concatenate([pts] + extra)
    return JuliaSample(points=pts, count=N, seed=seed, burn_in=burn_in, grid=best_h, grid_points=len(best))


def median_spacing(points):
    xy = np.c_[points.real, points.imag]
    d, _ = cKDTree(xy).query(xy, k=2)
    return float(np.median(d[:, 1]))


# ---------------------------------------------------------------------------
# vertex sets V_n

class LevelVertexSets:
    """V_n = f^-n(S) as one list of points with birth levels and image links."""

    def __init__(self, f, S, depth, tol=VERTEX_TOL):
        self.f = f
        self.depth = depth
        self.points = [complex(s) for s in S]
        self.level = [0] * len(self.points)
        self.parent = []
        for s in self.points:
            self.parent.append(self._find(complex(f(s)), tol))
        self.sizes = [len(self.points)]
        frontier = list(range(len(self.points)))
        for n in range(1, depth + 1):
            new = []
            for vid in frontier:
                for z in preimages(f, self.points[vid]).roots:
                    hit = self._find(z, tol)
                    if hit is None:
                        self.points.append(complex(z))
                        self.level.append(n)
                        self.parent.append(vid)
                        new.append(len(self.points) - 1)
            frontier = new
            self.sizes.append(len(self.points))
        self.array = np.array(self.points)

    def _find(self, z, tol):
        for i, w in enumerate(self.points):
            if abs(w - z) <= tol * (1 + abs(z)):
                return i
        return None

    def ids(self, n):
        return [i for i, lv in enumerate(self.level) if lv <= n]

    def image(self, vid, steps=1):
        for _ in range(steps):
            vid = self.parent[vid]
        return vid

    def max_image_error(self):
        err = 0.0
        for i, z in enumerate(self.points):
            if self.parent[i] is not None:
                err = max(err, abs(complex(self.f(z)) - self.points[self.parent[i]]))
        return err


# ---------------------------------------------------------------------------
# clustering

def _components(xy, keep, eps):
    idx = np.flatnonzero(keep)
    tree = cKDTree(xy[idx])
    pairs = tree.query_pairs(eps, output_type="ndarray")
    A = sp.coo_matrix((np.ones(len(pairs)), (pairs[:, 0], pairs[:, 1])), shape=(len(idx), len(idx)))
    n, lab = connected_components(A, directed=False)
    return idx, n, lab


def cluster_cut(points, cut, eps, exclusion=3.0, essential=10.0):
    """Components of the sample with small balls around ``cut`` removed.

    Returns (labels, count).  Points within ``exclusion*eps`` of a cut
    point are removed before linking points closer than eps; only components
    reaching farther than ``essential*eps`` from the cut count, and every
    other point takes the label of its nearest essential neighbour.
    """
    xy = np.c_[points.real, points.imag]
    cut = np.asarray(cut, dtype=complex)
    dcut = np.abs(points[:, None] - cut[None, :]).min(axis=1) if len(cut) else np.full(len(points), np.inf)
    keep = dcut > exclusion * eps
    idx, n, lab = _components(xy, keep, eps)
    reach = np.zeros(n)
    np.maximum.at(reach, lab, dcut[idx])
    ess = np.flatnonzero(reach > essential * eps)
    # order components deterministically by their leftmost-lowest point
    keyed = []
    for c in ess:
        members = idx[lab == c]
        z = points[members]
        keyed.append((round(float(z.real.mean()), 9), round(float(z.imag.mean()), 9), c))
    keyed.sort()
    remap = {c: i for i, (_, _, c) in enumerate(keyed)}
    labels = np.full(len(points), -1)
    sel = np.isin(lab, ess)
    labels[idx[sel]] = [remap[c] for c in lab[sel]]
    known = np.flatnonzero(labels >= 0)
    if len(known) and len(known) < len(points):
        tree = cKDTree(xy[known])
        rest = np.flatnonzero(labels < 0)
        _, j = tree.query(xy[rest], k=1)
        labels[rest] = labels[known[j]]
    return labels, len(ess)


@dataclass
class BranchCutReport:
    valid: bool
    invariant_error: float
    components_S: int
    components_preimage: int
    degree: int
    stable: bool
    counts_by_eps: dict
    eps: float
    witness: tuple = None
    reason: str = ""

    def to_dict(self):
        d = {
            "valid": self.valid,
            "invariant_error": self.invariant_error,
            "components_J_minus_S": self.components_S,
            "components_J_minus_preimage": self.components_preimage,
            "degree": self.degree,
            "stable": self.stable,
            "counts_by_eps": self.counts_by_eps,
            "eps": self.eps,
            "reason": self.reason,
        }
        if self.witness is not None:
            d["witness"] = [[z.real, z.imag] for z in self.witness]
        return d


def _preimage_set(f, S):
    out = []
    for s in S:
        for z in preimages(f, s).roots:
            if all(abs(z - w) > VERTEX_TOL * (1 + abs(z)) for w in out):
                out.append(complex(z))
    return np.array(out)


def injectivity_scan(f, points, labels, cut1, eps, separation=10.0):
    """Find two separated samples of one component with nearly equal images.

    Samples within ``separation*eps`` of f^-1(S) are ignored, since a closed
    1-cell may have boundary points with a common image.
    """
    dcut = np.abs(points[:, None] - cut1[None, :]).min(axis=1)
    use = np.flatnonzero((dcut > separation * eps) & (labels >= 0))
    img = f(points[use])
    tree = cKDTree(np.c_[img.real, img.imag])
    pairs = tree.query_pairs(eps / 4, output_type="ndarray")
    if not len(pairs):
        return None
    a, b = use[pairs[:, 0]], use[pairs[:, 1]]
    same = labels[a] == labels[b]
    far = np.abs(points[a] - points[b]) > separation * eps
    hit = np.flatnonzero(same & far)
    if not len(hit):
        return None
    k = hit[np.argmax(np.abs(points[a[hit]] - points[b[hit]]))]
    return complex(points[a[k]]), complex(points[b[k]])


def validate_branch_cut(f: RationalMap, S, sample: JuliaSample, raise_errors=True) -> BranchCutReport:
    """Numerical evidence that S is a finite invariant branch cut.

    Checks, in order: invariance f(S) in S; stability of the component
    counts of J minus S and J minus f^-1(S) under changes of the linking
    radius; injectivity of f on each component of J minus f^-1(S); and the
    even-cover law (#components of J minus f^-1(S) = d times #components of
    J minus S).
    """
    S = np.asarray(S, dtype=complex)
    fS = f(S)
    inv_err = float(max(np.abs(S - w).min() for w in fS))
    pts = sample.points
    eps = EPS_FACTOR * median_spacing(pts)
    cut1 = _preimage_set(f, S)

    def fail(exc, report):
        if raise_errors:
            raise exc
        return report

    base = dict(invariant_error=inv_err, degree=f.degree, eps=eps)
    if inv_err > 1e-9:
        rep = BranchCutReport(valid=False, components_S=0, components_preimage=0, stable=False, counts_by_eps={},
                              reason=f"f(S) not in S (error {inv_err:.3g})", **base)
        return fail(NotInvariant(rep.reason), rep)
    counts = {}
    labels1 = None
    for factor in (1.0,) + EPS_CHECKS:
        l0, c0 = cluster_cut(pts, S, eps * factor)
        l1, c1 = cluster_cut(pts, cut1, eps * factor)
        counts[str(factor)] = [c0, c1]
        if factor == 1.0:
            labels1, n0, n1 = l1, c0, c1
    stable = len({tuple(v) for v in counts.values()}) == 1
    if not stable:
        rep = BranchCutReport(valid=False, components_S=n0, components_preimage=n1, stable=False, counts_by_eps=counts,
                              reason="component counts change with the linking radius", **base)
        return fail(UnstableClustering(rep.reason), rep)
    wit = injectivity_scan(f, pts, labels1, cut1, eps)
    if wit is not None:
        rep = BranchCutReport(valid=False, components_S=n0, components_preimage=n1, stable=True, counts_by_eps=counts, witness=wit,
                              reason=f"f is not injective on a component: f({wit[0]:.6g}) ~ f({wit[1]:.6g})", **base)
        return fail(InjectivityWitness(rep.reason, wit[0], wit[1]), rep)
    if n1 != f.degree * n0:
        rep = BranchCutReport(valid=False, components_S=n0, components_preimage=n1, stable=True, counts_by_eps=counts,
                              reason=f"{n1} components of J - f^-1(S), expected {f.degree} x {n0}", **base)
        return fail(CoverCountMismatch(rep.reason), rep)
    return BranchCutReport(valid=True, components_S=n0, components_preimage=n1, stable=True, counts_by_eps=counts, **base)


# ---------------------------------------------------------------------------
# cells

@dataclass
class JuliaCellDecomposition:
    f: RationalMap
    S: np.ndarray
    depth: int
    sample: JuliaSample
    eps: float
    letters: list
    component_of: list
    transitions: dict
    vertices: LevelVertexSets
    clouds: dict
    boundary: dict
    observed_counts: list
    symbolic_counts: list
    base_labels: np.ndarray
    names: dict = field(default_factory=dict)
    slots: dict = field(default_factory=dict)

    def words(self, n):
        return sorted(w for w in self.clouds if len(w) == n)

    def counts(self):
        return [len(self.words(n)) for n in range(1, self.depth + 1)]

    def image(self, word):
        return word[1:]

    def name(self, letter):
        return self.names.get(letter, f"c{letter}")

    def word_name(self, word):
        return "".join(self.name(a) for a in word) if all(len(self.name(a)) == 1 for a in word) else ".".join(
            self.name(a) for a in word
        )

    def letter_of(self, name):
        for a, nm in self.names.items():
            if nm == name:
                return a
        if name.startswith("c") and name[1:].isdigit():
            return int(name[1:])
        raise KeyError(name)


def _grid_subsample(z, K):
    """Up to K points spread evenly along the sample."""
    if len(z) <= K:
        return z
    h = max(np.ptp(z.real), np.ptp(z.imag)) / math.sqrt(K)
    while True:
        keys = np.floor(z.real / h).astype(np.int64) * 1_000_003 + np.floor(z.imag / h).astype(np.int64)
        _, first = np.unique(keys, return_index=True)
        if len(first) <= K:
            return z[np.sort(first)]
        h *= 1.2


def _adherent(vpts, cloud, diam, inner, outer):  # level-1 cells only
    """Indices of points adhering to the cloud, and any in the gray zone."""
    tree = cKDTree(np.c_[cloud.real, cloud.imag])
    d, _ = tree.query(np.c_[vpts.real, vpts.imag], k=1)
    rel = d / diam
    return np.flatnonzero(rel < inner), np.flatnonzero((rel >= inner) & (rel < outer)), rel


def extract_cells(f: RationalMap, S, depth: int, sample: JuliaSample, cloud_size=1200, names=None,
                  inner=0.03, outer=0.12) -> JuliaCellDecomposition:
    """Cells of levels 1..depth as itinerary words with point clouds.

    The 1-cells are the clusters of J minus f^-1(S).  A level-n cell a.w is
    the pullback of the (n-1)-cell w into the 1-cell a, computed by choosing
    for every point of w's cloud the preimage nearest to a's samples.
    Boundary vertices are points of V_n within ``inner`` diameters of the
    cloud; a point between ``inner`` and ``outer`` diameters away is
    ambiguous.
    """
    if depth < 1:
        raise InsufficientDepth("depth must be at least 1")
    S = np.asarray(S, dtype=complex)
    rep = validate_branch_cut(f, S, sample)
    pts = sample.points
    eps = rep.eps
    V = LevelVertexSets(f, S, depth)
    cut1 = np.array([V.points[i] for i in V.ids(1)])
    labels, m = cluster_cut(pts, cut1, eps)
    labels0, m0 = cluster_cut(pts, S, eps)
    h = median_spacing(pts)
    letters = list(range(m))
    # component of J - S containing each 1-cell
    comp = []
    for a in letters:
        vals, cnt = np.unique(labels0[labels == a], return_counts=True)
        comp.append(int(vals[np.argmax(cnt)]))
    # transitions: the 1-cells covered by f(U_a)
    xy = np.c_[pts.real, pts.imag]
    tree = cKDTree(xy)
    dcut = np.abs(pts[:, None] - cut1[None, :]).min(axis=1)
    interior = dcut > 3 * eps
    transitions = {}
    for a in letters:
        z = pts[(labels == a) & interior]
        img = f(z)
        _, j = tree.query(np.c_[img.real, img.imag], k=1)
        hit_comp = np.unique(labels0[j])
        if len(hit_comp) != 1:
            raise GluingAmbiguity(f"the image of 1-cell {a} meets {len(hit_comp)} components of J - S")
        transitions[a] = [b for b in letters if comp[b] == hit_comp[0]]

    # level-1 clouds: an even subsample of each cluster plus its boundary points
    clouds, boundary = {}, {}
    v1 = V.ids(1)
    label_sets = {}
    for a in letters:
        za = pts[labels == a]
        label_sets[a] = cKDTree(np.c_[za.real, za.imag])
        base = _grid_subsample(za, cloud_size)
        diam = _diam(za)
        ok, gray, _ = _adherent(cut1, za, diam, inner, outer)
        if len(gray):
            raise GluingAmbiguity(f"vertex {cut1[gray[0]]} is ambiguous for 1-cell {a}")
        bverts = [v1[i] for i in ok]
        clouds[(a,)] = np.concatenate([base, [V.points[v] for v in bverts]])
        boundary[(a,)] = sorted(bverts)

    # deeper clouds by pullback
    for n in range(2, depth + 1):
        for w in sorted(k for k in clouds if len(k) == n - 1):
            src = clouds[w]
            pre = preimages_batch(f, src)
            for a in letters:
                if w[0] not in transitions[a]:
                    continue
                dist = np.full(pre.shape, np.inf)
                for c in range(pre.shape[1]):
                    good = np.isfinite(pre[:, c])
                    if good.any():
                        dist[good, c], _ = label_sets[a].query(np.c_[pre[good, c].real, pre[good, c].imag], k=1)
                # a point lifts unambiguously when only one preimage is near the 1-cell
                ds = np.sort(dist, axis=1)
                keep = ds[:, 1] > BRANCH_MARGIN * h if ds.shape[1] > 1 else np.ones(len(ds), dtype=bool)
                pick = np.argmin(dist, axis=1)
                cloud = pre[np.arange(len(pre)), pick]
                word = (a,) + w
                bverts = set()
                for u in boundary[w]:
                    bverts |= _lift_vertex(f, V, u, src, keep, cloud, word)
                cloud = cloud[keep]
                extra = [V.points[v] for v in bverts if np.abs(cloud - V.points[v]).min() > 1e-12]
                clouds[word] = np.concatenate([cloud, extra]) if extra else cloud
                boundary[word] = sorted(bverts)

    observed = _observed_counts(f, pts, labels, cut1, eps, depth)
    symbolic = [_count_words(transitions, n) for n in range(1, depth + 1)]
    dec = JuliaCellDecomposition(
        f=f, S=S, depth=depth, sample=sample, eps=eps, letters=letters, component_of=comp, transitions=transitions,
        vertices=V, clouds=clouds, boundary=boundary, observed_counts=observed, symbolic_counts=symbolic,
        base_labels=labels,
    )
    dec.names = names(dec) if callable(names) else dict(names or {})
    return dec


def _lift_vertex(f, V, u, src, keep, lifted, word, k=12):
    """Preimages of vertex u that lie on the pulled-back cell.

    The cloud points nearest to u whose inverse branch is unambiguous are
    followed to the new cell; a preimage of u is on it when some of them land
    next to it.  A cell meets several preimages of u when f folds its closure.
    """
    z = V.points[u]
    roots = np.array([r for r, _ in preimages(f, z).distinct()])
    cand = np.flatnonzero(keep)
    if not len(cand):
        raise GluingAmbiguity(f"cell {word}: no unambiguous points to lift")
    order = cand[np.argsort(np.abs(src[cand] - z))[:k]]
    pts = lifted[order]
    d = np.abs(pts[:, None] - roots[None, :])
    j = np.argmin(d, axis=1)
    sep = np.abs(roots[:, None] - roots[None, :])
    np.fill_diagonal(sep, np.inf)
    sep = sep.min(axis=1)
    if (d[np.arange(len(pts)), j] > 0.25 * sep[j]).any():
        raise GluingAmbiguity(f"cell {word}: points near vertex {z:.6g} do not lift next to a preimage of it")
    out = set()
    for r in np.unique(j):
        vid = V._find(complex(roots[r]), VERTEX_TOL)
        if vid is None:
            raise GluingAmbiguity(f"preimage {roots[r]:.6g} of vertex {z:.6g} missing from the vertex sets")
        out.add(vid)
    return out


def _count_words(transitions, n):
    ends = {a: 1 for a in transitions}
    for _ in range(n - 1):
        nxt = {b: 0 for b in transitions}
        for a, cnt in ends.items():
            for b in transitions[a]:
                nxt[b] += cnt
        ends = nxt
    return sum(ends.values())


def _diam(z):
    from .metrics import cloud_diameter

    return cloud_diameter(np.c_[z.real, z.imag])


def _observed_counts(f, pts, labels, cut1, eps, depth):
    """Distinct forward itineraries among the samples, per length.

    Samples whose orbit passes within eps of f^-1(S) are skipped at the
    lengths where their label would be unreliable.
    """
    xy = np.c_[pts.real, pts.imag]
    tree = cKDTree(xy)
    z = pts.copy()
    alive = np.ones(len(pts), dtype=bool)
    words = np.zeros((len(pts), depth), dtype=np.int64)
    counts = []
    for n in range(depth):
        if n == 0:
            lab = labels
        else:
            _, j = tree.query(np.c_[z.real, z.imag], k=1)
            lab = labels[j]
        near = np.abs(z[:, None] - cut1[None, :]).min(axis=1) < eps
        alive &= ~near & np.isfinite(z)
        words[:, n] = lab
        counts.append(len({tuple(r) for r in words[alive, : n + 1]}))
        z = f(z)
    return counts


# ---------------------------------------------------------------------------
# replacement system

def _slot_keys(dec, word):
    """Canonical ordering data for the boundary vertices of a cell."""
    n = len(word)
    V = dec.vertices
    keys = []
    for v in dec.boundary[word]:
        image = V.image(v, n - 1)
        prong = tuple(sorted(b for b in dec.transitions[word[-1]] if v in dec.boundary.get(word + (b,), ())))
        keys.append((image, prong, v))
    keys.sort()
    return keys


def derive_replacement(dec: JuliaCellDecomposition, probe=None):
    """Replacement system whose expansion reproduces the itinerary cell tree.

    A cell's type is its last letter together with the sorted keys of its
    boundary vertices: the V_1 vertex each maps to under f^(n-1) and the
    letters of the children touching it.  Types and gluing tables are read
    from every cell of level < depth and must agree across instances.
    Returns ``(system, word_of)`` where ``word_of(address)`` gives the
    itinerary of a cell of the expanded complex.
    """
    if dec.depth < 2:
        raise InsufficientDepth("a decomposition of depth 1 does not determine children")
    top = dec.depth - 1 if probe is None else min(probe, dec.depth - 1)
    tkey = {}
    tables = {}
    slot_order = {}
    for n in range(1, top + 1):
        for w in dec.words(n):
            keys = _slot_keys(dec, w)
            k = (w[-1], tuple(key[:2] for key in keys))
            tkey[w] = k
            slot_order[w] = [key[2] for key in keys]
    # give every distinct key a type name
    names = {}
    for w in sorted(tkey, key=lambda w: (len(w), w)):
        k = tkey[w]
        if k not in names:
            base = dec.name(k[0])
            used = sum(1 for kk in names if kk[0] == k[0])
            names[k] = base if used == 0 else base + "'" * used
    for w, k in tkey.items():
        if len(w) >= dec.depth:
            continue
        kids = [w + (b,) for b in dec.transitions[w[-1]]]
        if any(c not in tkey for c in kids):
            if len(w) < top:
                raise GluingAmbiguity(f"missing children of {w}")
            continue
        parent_slots = slot_order[w]
        junctions = []
        gluing = []
        for ci, c in enumerate(kids):
            for vi, v in enumerate(slot_order[c]):
                if v in parent_slots:
                    gluing.append((ci, vi, "parent", parent_slots.index(v)))
                else:
                    sharing = [c2 for c2 in kids if v in slot_order[c2]]
                    if len(sharing) < 2:
                        gluing.append((ci, vi, "free", len([g for g in gluing if g[2] == "free"])))
                        continue
                    if v not in junctions:
                        junctions.append(v)
                    gluing.append((ci, vi, "junction", junctions.index(v)))
        table = (tuple(names[tkey[c]] for c in kids), len(parent_slots), len(junctions), tuple(gluing),
                 tuple(dec.name(c[-1]) for c in kids))
        if k in tables and tables[k][0] != table:
            raise GluingAmbiguity(
                f"cells {tables[k][1]} and {w} share type {names[k]} but glue their children differently"
            )
        tables.setdefault(k, (table, w))
    missing = [names[k] for k in names if k not in tables]
    if missing:
        raise GluingAmbiguity(f"types {missing} never appear above the deepest level; increase depth")
    types = []
    for k in sorted(tables, key=lambda k: names[k]):
        (children, arity, nj, gluing, labels), _ = tables[k]
        types.append(CellType(names[k], children, arity, nj, gluing, labels))
    # root: the 1-cells glued at the points of f^-1(S)
    ones = dec.words(1)
    junctions, gluing = [], []
    for ci, w in enumerate(ones):
        for vi, v in enumerate(slot_order[w]):
            sharing = [u for u in ones if v in slot_order[u]]
            if len(sharing) < 2:
                gluing.append((ci, vi, "free", len([g for g in gluing if g[2] == "free"])))
                continue
            if v not in junctions:
                junctions.append(v)
            gluing.append((ci, vi, "junction", junctions.index(v)))
    root = CellType("root", tuple(names[tkey[w]] for w in ones), 0, len(junctions), tuple(gluing),
                    tuple(dec.name(w[0]) for w in ones))
    system = ReplacementSystem(tuple([root] + types), "root", name=dec.f.name or "julia")
    validate_system(system)
    dec.slots = slot_order
    tmap = system.type_map
    letter_of_label = {dec.name(a): a for a in dec.letters}

    def word_of(address):
        t = tmap["root"]
        out = []
        for i in address:
            out.append(letter_of_label[t.labels[i]])
            t = tmap[t.children[i]]
        return tuple(out)

    return system, word_of


def julia_embedding(dec, system, word_of, depth):
    """Expand the derived system and attach the cell clouds; checks vertex agreement."""
    cx = expand(system, depth)
    clouds = []
    vmap = {}
    for n, lv in enumerate(cx.levels):
        row = []
        for c in lv:
            if n == 0:
                allp = dec.sample.points
                row.append(np.c_[allp.real, allp.imag])
                continue
            w = word_of(c.address)
            z = dec.clouds[w]
            row.append(np.c_[z.real, z.imag])
            order = dec.slots.get(w)
            if order is None:
                order = [key[2] for key in _slot_keys(dec, w)] if n < dec.depth else dec.boundary[w]
            if len(order) != len(c.vertex_ids):
                raise GluingAmbiguity(f"cell {w}: {len(order)} numeric vertices, {len(c.vertex_ids)} symbolic")
            if n < dec.depth:
                for sym, num in zip(c.vertex_ids, order):
                    if vmap.setdefault(sym, num) != num:
                        raise GluingAmbiguity(f"symbolic vertex {sym} matches points {vmap[sym]} and {num}")
        clouds.append(row)
    coords = {sym: (dec.vertices.points[num].real, dec.vertices.points[num].imag) for sym, num in vmap.items()}
    metric = CloudMetric(cx, clouds, coords, source=dec.f.name, density=f"{dec.sample.count} samples")
    return cx, metric, vmap


def verify_julia_undistorted(dec, depth=None, system=None, word_of=None):
    depth = dec.depth if depth is None else depth
    if system is None:
        system, word_of = derive_replacement(dec)
    cx, metric, _ = julia_embedding(dec, system, word_of, depth)
    und = verify_undistorted(metric, cx)
    loc = verify_local_conditions(metric, cx)
    radius = float(np.abs(dec.sample.points).max())
    return {
        "verdict": und.verdict,
        "undistorted": und.to_dict(),
        "local": loc.to_dict(),
        "notes": [
            f"Euclidean coordinates: the sample is bounded (max |z| = {radius:.6g}), so infinity is in the Fatou set "
            "and the Euclidean and spherical metrics are bilipschitz on J",
        ],
    }


# ---------------------------------------------------------------------------
# builtins

def _basilica_names(dec):
    V = dec.vertices
    p = V.points[0]
    out = {}
    for a in dec.letters:
        bd = dec.boundary[(a,)]
        z = dec.clouds[(a,)]
        if len(bd) == 1:
            out[a] = "L" if abs(V.points[bd[0]] - p) < 1e-9 else "R"
        else:
            out[a] = "T" if z.imag.mean() > 0 else "D"
    return out


def _bubblebath_names(dec):
    # E0oo is the component of J - S made of four 1-cells; f maps E01 onto it
    comp = dec.component_of
    sizes = {c: comp.count(c) for c in set(comp)}
    big = [c for c, s in sizes.items() if s == 4][0]
    out = {}
    singles = [a for a in dec.letters if sizes[comp[a]] == 1]
    for a in singles:
        image_comp = comp[dec.transitions[a][0]]
        out[a] = "E01" if image_comp == big else "E1oo"
    e01 = [a for a in singles if out[a] == "E01"][0]
    e1 = [a for a in singles if out[a] == "E1oo"][0]
    q = dec.S[np.argmax(dec.S.imag)]
    for a in dec.letters:
        if comp[a] != big:
            continue
        z = dec.clouds[(a,)]
        c = complex(z.mean())
        if abs(-c - complex(dec.clouds[(e01,)].mean())) < 0.05 * abs(c) + 1e-3:
            out[a] = "mE01"
        elif abs(-c - complex(dec.clouds[(e1,)].mean())) < 0.05 * abs(c) + 1e-3:
            out[a] = "mE1oo"
        else:
            bd = [dec.vertices.points[v] for v in dec.boundary[(a,)]]
            near_q = any(abs(v - q) < 1e-9 for v in bd)
            out[a] = "Eq" if near_q else "Eqb"
    return out


@dataclass
class JuliaInstance:
    name: str
    f: RationalMap
    S: np.ndarray
    names: object = None


def basilica():
    f = RationalMap([-1, 0, 1], name="basilica")
    p = (1 - math.sqrt(5)) / 2
    return JuliaInstance("basilica", f, np.array([p + 0j]), _basilica_names)


def basilica_beta():
    f = RationalMap([-1, 0, 1], name="basilica")
    return JuliaInstance("basilica-beta", f, np.array([(1 + math.sqrt(5)) / 2 + 0j]))


def bubblebath():
    f = RationalMap([-1, 0, 1], [0, 0, 1], name="bubblebath")
    roots = P.polyroots([1, 0, -1, 1])
    S = np.array(sorted((z for z in roots if abs(z.imag) > 1e-9), key=lambda z: -z.imag))
    return JuliaInstance("bubblebath", f, S, _bubblebath_names)


JULIA_BUILTINS = {"basilica": basilica, "bubblebath": bubblebath, "basilica-beta": basilica_beta}


def julia_builtin(name):
    try:
        return JULIA_BUILTINS[name]()
    except KeyError:
        raise UnknownBuiltin(f"unknown julia builtin {name!r}") from None


def parse_cut(d, f=None):
    """Branch cut JSON: {"points": [[re, im], ...]} or {"poly": [...], "select": "nonreal" | "real" | "all"}."""
    if "points" in d:
        return np.array([complex(*p) if isinstance(p, (list, tuple)) else complex(p) for p in d["points"]])
    coeffs = [complex(*c) if isinstance(c, (list, tuple)) else complex(c) for c in d["poly"]]
    roots = P.polyroots(coeffs)
    sel = d.get("select", "all")
    if sel == "nonreal":
        roots = [z for z in roots if abs(z.imag) > 1e-9]
    elif sel == "real":
        roots = [complex(z.real) for z in roots if abs(z.imag) <= 1e-9]
    return np.array(sorted(roots, key=lambda z: (z.real, z.imag)), dtype=complex)
