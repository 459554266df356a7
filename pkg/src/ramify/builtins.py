"""Builtin replacement systems and their planar geometry.

Each geometric builtin maps a cell address to an exact shape: a triangle for
the Sierpinski and Rauzy gaskets, an axis-parallel rectangle for the Vicsek
family and an interval for the weird interval.  Points of the limit space are
addresses; :meth:`Geometry.points` turns long addresses into coordinates.
"""

from __future__ import annotations

import math
from fractions import Fraction

import numpy as np

from .cell_model import CellType, ReplacementSystem
from .errors import UnknownBuiltin

SYSTEM_BUILTINS = ("sierpinski", "vicsek", "weird-interval", "rauzy", "dyadic-interval")


def _triangle_type(tid="T"):
    # corner i of child i is corner i of the parent; the other corners are the
    # three edge midpoints, junction {0,1} -> 0, {0,2} -> 1, {1,2} -> 2
    pair = {frozenset((0, 1)): 0, frozenset((0, 2)): 1, frozenset((1, 2)): 2}
    gluing = []
    for c in range(3):
        for v in range(3):
            if v == c:
                gluing.append((c, v, "parent", c))
            else:
                gluing.append((c, v, "junction", pair[frozenset((c, v))]))
    return CellType(tid, (tid, tid, tid), 3, 3, tuple(gluing))


def sierpinski_system():
    return ReplacementSystem((_triangle_type(),), "T", name="sierpinski")


def rauzy_system():
    return ReplacementSystem((_triangle_type(),), "T", name="rauzy")


def vicsek_system(a=Fraction(1, 3), b=Fraction(1, 3), c=Fraction(1, 3)):
    """Five children: corners 0..3 (BL, BR, TR, TL) then the center.

    Corner child i keeps parent corner i, meets the center at its opposite
    corner, and its two remaining corners are private to it.
    """
    gluing = []
    free = 0
    for i in range(4):
        opp = (i + 2) % 4
        for v in range(4):
            if v == i:
                gluing.append((i, v, "parent", i))
            elif v == opp:
                gluing.append((i, v, "junction", i))
            else:
                gluing.append((i, v, "free", free))
                free += 1
    for v in range(4):
        gluing.append((4, v, "junction", v))
    t = CellType("V", ("V",) * 5, 4, 4, tuple(gluing))
    return ReplacementSystem((t,), "V", name=f"vicsek({a},{b},{c})")


def weird_interval_system():
    gluing = (
        (0, 0, "parent", 0),
        (0, 1, "junction", 0),
        (1, 0, "junction", 0),
        (1, 1, "junction", 1),
        (2, 0, "junction", 1),
        (2, 1, "parent", 1),
    )
    return ReplacementSystem((CellType("I", ("I", "I", "I"), 2, 2, gluing),), "I", name="weird-interval")


def dyadic_interval_system():
    gluing = ((0, 0, "parent", 0), (0, 1, "junction", 0), (1, 0, "junction", 0), (1, 1, "parent", 1))
    return ReplacementSystem((CellType("I", ("I", "I"), 2, 1, gluing),), "I", name="dyadic-interval")


def parse_params(text):
    """Parse ``"a,b,c"`` into exact fractions (decimal strings are read exactly)."""
    parts = [p.strip() for p in str(text).split(",") if p.strip()]
    return tuple(Fraction(p) for p in parts)


def check_vicsek_params(a, b, c):
    if min(a, b, c) <= 0:
        raise ValueError("vicsek parameters must be positive")
    if a + b + c != 1:
        raise ValueError(f"vicsek parameters must sum to 1 (got {float(a + b + c)})")


def builtin_system(name, params=None):
    if name == "sierpinski":
        return sierpinski_system()
    if name == "rauzy":
        return rauzy_system()
    if name == "weird-interval":
        return weird_interval_system()
    if name == "dyadic-interval":
        return dyadic_interval_system()
    if name == "vicsek":
        a, b, c = params if params is not None else (Fraction(1, 3),) * 3
        check_vicsek_params(a, b, c)
        return vicsek_system(a, b, c)
    raise UnknownBuiltin(f"unknown builtin {name!r}")


# ---------------------------------------------------------------------------
# geometry

SQRT3 = math.sqrt(3.0)
TRIANGLE = np.array([[0.0, 0.0], [1.0, 0.0], [0.5, SQRT3 / 2]])

# projective maps x -> A x / |A x|_1 on the standard simplex
RAUZY_MATRICES = (
    np.array([[1, 1, 1], [0, 1, 0], [0, 0, 1]], dtype=float),
    np.array([[1, 0, 0], [1, 1, 1], [0, 0, 1]], dtype=float),
    np.array([[1, 0, 0], [0, 1, 0], [1, 1, 1]], dtype=float),
)
# orthonormal frame of the plane x+y+z=1 (isometric planar coordinates)
_E1 = np.array([1.0, -1.0, 0.0]) / math.sqrt(2)
_E2 = np.array([1.0, 1.0, -2.0]) / math.sqrt(6)


def simplex_to_plane(p):
    p = np.asarray(p, dtype=float)
    return np.stack([p @ _E1, p @ _E2], axis=-1)


class Geometry:
    """Exact shapes of cells for a geometric builtin.

    Shapes are computed from a vectorized per-cell state: ``root_state`` is
    the state of the whole space and ``child_state`` maps an array of parent
    states and child digits to the children's states.
    """

    kind = None
    name = None

    def root_state(self, n=1):
        raise NotImplementedError

    def child_state(self, state, digits):
        raise NotImplementedError

    def state_shapes(self, state):
        raise NotImplementedError

    def shapes_for(self, addresses):
        """Shapes of cells given by equal-length addresses, shape (N, k, 2)."""
        addresses = np.asarray(addresses, dtype=np.int64)
        if addresses.ndim == 1:
            addresses = addresses[None, :]
        state = self.root_state(len(addresses))
        for col in range(addresses.shape[1]):
            state = self.child_state(state, addresses[:, col])
        return self.state_shapes(state)

    def shape(self, address):
        return self.shapes_for(np.array([tuple(address)], dtype=np.int64).reshape(1, -1))[0]

    def points(self, addresses):
        """Approximate limit points of long addresses (centroid of the final cell)."""
        return self.shapes_for(addresses).mean(axis=1)

    def level_shapes(self, cx):
        """Per-level shape arrays for every cell of a complex built from this geometry."""
        states = [self.root_state(1)]
        out = [self.state_shapes(states[0])]
        for n in range(1, cx.depth + 1):
            par = cx._parent[n]
            digits = np.fromiter((c.address[-1] for c in cx.levels[n]), dtype=np.int64, count=len(cx.levels[n]))
            st = self.child_state(_take(states[-1], par), digits)
            states.append(st)
            out.append(self.state_shapes(st))
        return out


def _take(state, idx):
    if isinstance(state, tuple):
        return tuple(s[idx] for s in state)
    return state[idx]


class SierpinskiGeometry(Geometry):
    kind = "triangle"
    name = "sierpinski"

    def root_state(self, n=1):
        return np.repeat(TRIANGLE[None], n, axis=0)

    def child_state(self, state, digits):
        corner = state[np.arange(len(state)), digits]
        return (state + corner[:, None, :]) / 2.0

    def state_shapes(self, state):
        return state


class RauzyGeometry(Geometry):
    """Projective images of the simplex; the state is the product matrix A_w."""

    kind = "triangle"
    name = "rauzy"

    def root_state(self, n=1):
        return np.repeat(np.eye(3)[None], n, axis=0)

    def child_state(self, state, digits):
        mats = np.stack(RAUZY_MATRICES)[digits]
        M = state @ mats
        # rescale to keep entries bounded; shapes only depend on column directions
        return M / M.sum(axis=(1, 2), keepdims=True)

    def simplex_shapes(self, state):
        cols = np.transpose(state, (0, 2, 1))
        return cols / cols.sum(axis=2, keepdims=True)

    def state_shapes(self, state):
        return simplex_to_plane(self.simplex_shapes(state))


class VicsekGeometry(Geometry):
    """Rectangles stored by their corners BL, BR, TR, TL; state is (x0, y0, w, h)."""

    kind = "rect"

    def __init__(self, a, b, c):
        self.params = (a, b, c)
        self.name = f"vicsek({a},{b},{c})"
        fa, fb, fc = float(a), float(b), float(c)
        self._ox = np.array([0.0, fa + fb, fa + fb, 0.0, fa])
        self._oy = np.array([0.0, 0.0, fa + fb, fa + fb, fa])
        self._sw = np.array([fa, fc, fc, fa, fb])
        self._sh = np.array([fa, fa, fc, fc, fb])

    def root_state(self, n=1):
        return np.repeat(np.array([[0.0, 0.0, 1.0, 1.0]]), n, axis=0)

    def child_state(self, state, digits):
        x0, y0, w, h = state.T
        return np.stack(
            [x0 + self._ox[digits] * w, y0 + self._oy[digits] * h, w * self._sw[digits], h * self._sh[digits]], axis=1
        )

    def state_shapes(self, state):
        x0, y0, w, h = state.T
        return np.stack(
            [np.stack([x0, y0], 1), np.stack([x0 + w, y0], 1), np.stack([x0 + w, y0 + h], 1), np.stack([x0, y0 + h], 1)],
            axis=1,
        )

    def exact_rect(self, address):
        """Exact rectangle (x0, y0, x1, y1) in Fractions."""
        a, b, c = self.params
        ox = (0, a + b, a + b, 0, a)
        oy = (0, 0, a + b, a + b, a)
        sw = (a, c, c, a, b)
        sh = (a, a, c, c, b)
        x0 = y0 = Fraction(0)
        w = h = Fraction(1)
        for d in address:
            x0, y0, w, h = x0 + ox[d] * w, y0 + oy[d] * h, w * sw[d], h * sh[d]
        return x0, y0, x0 + w, y0 + h


class WeirdIntervalGeometry(Geometry):
    kind = "interval"
    name = "weird-interval"
    SPLIT = (Fraction(0), Fraction(1, 4), Fraction(3, 4), Fraction(1))

    def __init__(self):
        cuts = np.array([float(s) for s in self.SPLIT])
        self._lo = cuts[:-1]
        self._w = np.diff(cuts)

    def root_state(self, n=1):
        return np.repeat(np.array([[0.0, 1.0]]), n, axis=0)

    def child_state(self, state, digits):
        lo, w = state.T
        return np.stack([lo + self._lo[digits] * w, w * self._w[digits]], axis=1)

    def state_shapes(self, state):
        lo, w = state.T
        z = np.zeros_like(lo)
        return np.stack([np.stack([lo, z], 1), np.stack([lo + w, z], 1)], axis=1)

    def exact_interval(self, address):
        lo, hi = Fraction(0), Fraction(1)
        for d in address:
            w = hi - lo
            lo, hi = lo + self.SPLIT[d] * w, lo + self.SPLIT[d + 1] * w
        return lo, hi


class DyadicIntervalGeometry(WeirdIntervalGeometry):
    name = "dyadic-interval"
    SPLIT = (Fraction(0), Fraction(1, 2), Fraction(1))


def builtin_geometry(name, params=None):
    if name == "sierpinski":
        return SierpinskiGeometry()
    if name == "rauzy":
        return RauzyGeometry()
    if name == "weird-interval":
        return WeirdIntervalGeometry()
    if name == "dyadic-interval":
        return DyadicIntervalGeometry()
    if name == "vicsek":
        a, b, c = params if params is not None else (Fraction(1, 3),) * 3
        check_vicsek_params(a, b, c)
        return VicsekGeometry(a, b, c)
    raise UnknownBuiltin(f"unknown geometric builtin {name!r}")
