"""Independent reference computations shared by the test modules."""

import math
from fractions import Fraction

import numpy as np

from ramify.builtins import SierpinskiGeometry

SQ3 = math.sqrt(3)


def sierpinski_chain_oracle(depth, alpha):
    """d_alpha^(L) by Floyd-Warshall over cells, intersections taken from exact corners.

    Each cell is represented by the exact corner points of its level-L
    descendants; two cells meet when those point sets meet.
    """
    half = Fraction(1, 2)
    root = ((Fraction(0), Fraction(0)), (Fraction(1), Fraction(0)), (half, Fraction(1)))

    def child(tri, i):
        c = tri[i]
        return tuple(((a[0] + c[0]) / 2, (a[1] + c[1]) / 2) for a in tri)

    cells = [((), root)]
    frontier = [((), root)]
    for _ in range(depth):
        frontier = [(a + (i,), child(t, i)) for a, t in frontier for i in range(3)]
        cells += frontier
    leaves = {a: set(t) for a, t in frontier}
    pts = {a: set().union(*(v for b, v in leaves.items() if b[: len(a)] == a)) for a, _ in cells}
    addrs = [a for a, _ in cells]
    N = len(addrs)
    w = np.array([alpha ** -len(a) for a in addrs])
    INF = np.inf
    D = np.full((N, N), INF)
    for i in range(N):
        for j in range(N):
            if i == j:
                D[i, j] = 0.0
            elif pts[addrs[i]] & pts[addrs[j]]:
                D[i, j] = w[j]
    for k in range(N):
        D = np.minimum(D, D[:, k : k + 1] + D[k : k + 1, :])

    def dist(p, q):
        if p == q:
            return 0.0
        I = [i for i, a in enumerate(addrs) if p in pts[a]]
        J = [j for j, a in enumerate(addrs) if q in pts[a]]
        return min(w[i] + D[i, j] for i in I for j in J)

    return dist, frontier


def vertex_point(cx, v):
    """Exact coordinates of a vertex id, from its slot in a cell."""
    g = SierpinskiGeometry()
    n = cx.vertex_origin[v][0]
    c = cx.levels[n][cx.cells_with_vertex(v, n)[0]]
    xy = g.shape(c.address)[c.vertex_ids.index(v)]
    return xy


def exact_vertex_lookup(cx, o, L, alpha):
    """Chain oracle at depth L plus the exact point of every vertex id of the d_alpha oracle."""
    dist, leaves = sierpinski_chain_oracle(L, alpha)
    lookup = {}
    for _, tri in leaves:
        for p in tri:
            lookup[(round(float(p[0]), 12), round(float(p[1]) * SQ3 / 2, 12))] = p
    exact = {v: lookup[tuple(np.round(vertex_point(cx, v), 12))] for v in o.points}
    return dist, exact
