import itertools
import json

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ramify.builtins import dyadic_interval_system
from ramify.cell_model import PointAddress
from ramify.errors import (
    BoundaryMismatch,
    ContextMismatch,
    NotABranch,
    NotPiecewiseCellular,
    UnknownBuiltin,
    UnresolvedPrefix,
)
from ramify.homeos import (
    CanonicalPiece,
    HomeoContext,
    LaminarSet,
    NoOrderFound,
    Rule,
    SymbolicHomeo,
    apply,
    builtin_generators,
    canonicalize,
    certify_quasisymmetry,
    complement,
    compile_canonical,
    compose,
    equals,
    identity,
    image_of,
    invert,
    is_identity,
    order_of,
    parse_word,
    pingpong_F_check,
    pingpong_free_check,
    power,
    proper_subset,
    same_set,
    subset,
    vertex_image,
    word_product,
)

# Thompson's F acting on the dyadic interval, as an independent small model
DYADIC = HomeoContext(dyadic_interval_system(), name="dyadic")
X0 = SymbolicHomeo([((0, 0), (0,)), ((0, 1), (1, 0)), ((1,), (1, 1))], DYADIC, name="x0")
X1 = SymbolicHomeo([((0,), (0,)), ((1, 0, 0), (1, 0)), ((1, 0, 1), (1, 1, 0)), ((1, 1), (1, 1, 1))], DYADIC,
                   name="x1")
DYADIC_GENS = {"x0": X0, "x1": X1}


@pytest.fixture(scope="module")
def bas():
    return builtin_generators("basilica")


@pytest.fixture(scope="module")
def bub():
    return builtin_generators("bubblebath")


def cells_at(ctx, n):
    return [c.address for c in ctx.complex(n).levels[n]]


def assert_cellular(g, depth):
    """Every cell maps onto a cell, with its boundary vertices carried slot by slot."""
    ctx = g.context
    for n in range(g.depth(), depth + 1):
        for c in cells_at(ctx, n):
            img = apply(g, c)
            assert ctx.type_of(img).id == ctx.type_of(c).id
            assert [vertex_image(g, v) for v in ctx.vertices(c)] == list(ctx.vertices(img))


# -- small model

def test_dyadic_group_axioms():
    for g in (X0, X1):
        assert is_identity(compose(g, invert(g)))
        assert is_identity(compose(invert(g), g))
        assert equals(compose(g, identity(DYADIC)), g)
    assert isinstance(order_of(X0, 16), NoOrderFound)


def test_dyadic_relations_hold():
    lhs = word_product(DYADIC_GENS, "x0 x0 x1 x0^-1 x0^-1")
    rhs = word_product(DYADIC_GENS, "x1 x0 x1 x0^-1 x1^-1")
    assert equals(lhs, rhs)
    assert not equals(compose(X0, X1), compose(X1, X0))


def test_dyadic_cellular():
    assert_cellular(X0, 6)
    assert_cellular(compose(X1, invert(X0)), 6)


def test_dyadic_point_image():
    # x0 sends 1/4 = 0 1 0 0 ... to 1/2 = 1 0 0 ... and 1/2 to 3/4
    assert apply(X0, PointAddress((0, 1), cycle=(0,))).digits(4) == (1, 0, 0, 0)
    assert apply(X0, PointAddress((1,), cycle=(0,))).digits(4) == (1, 1, 0, 0)
    assert apply(X0, PointAddress((), cycle=(0,))).digits(4) == (0, 0, 0, 0)


def test_canonicalize_merges_families():
    split = SymbolicHomeo([((0,), (0,)), ((1, 0), (1, 0)), ((1, 1), (1, 1))], DYADIC, check=False)
    assert canonicalize(split).pairs() == [((), ())]


def test_power_and_inverse():
    assert equals(power(X0, 3), compose(X0, compose(X0, X0)))
    assert equals(power(X0, -2), invert(power(X0, 2)))
    assert is_identity(power(X1, 0))


WORDS = st.lists(st.tuples(st.sampled_from(["x0", "x1"]), st.sampled_from([1, -1])), min_size=0, max_size=6)


@settings(max_examples=60, deadline=None)
@given(WORDS, WORDS, WORDS)
def test_dyadic_associativity(a, b, c):
    f, g, h = (word_product(DYADIC_GENS, w) if w else identity(DYADIC) for w in (a, b, c))
    assert equals(compose(f, compose(g, h)), compose(compose(f, g), h))


@settings(max_examples=60, deadline=None)
@given(WORDS)
def test_dyadic_word_times_inverse_word(w):
    inv = [(n, -e) for n, e in reversed(w)]
    assert is_identity(compose(word_product(DYADIC_GENS, w), word_product(DYADIC_GENS, inv))
                       if w else identity(DYADIC))


# -- validation errors

def test_overlapping_ranges_rejected():
    with pytest.raises(NotPiecewiseCellular):
        SymbolicHomeo([((0,), (0,)), ((1,), (0,))], DYADIC)
    with pytest.raises(NotPiecewiseCellular):
        SymbolicHomeo([((0,), (0,)), ((0, 1), (1,))], DYADIC)
    bad = SymbolicHomeo([((0,), (0,)), ((1,), (0, 1))], DYADIC, check=False)
    with pytest.raises(NotPiecewiseCellular):
        certify_quasisymmetry(bad)


def test_boundary_mismatch():
    # swapping the halves tears the interval at its midpoint
    with pytest.raises(BoundaryMismatch):
        SymbolicHomeo([((0,), (1,)), ((1,), (0,))], DYADIC)


def test_type_mismatch(bas):
    ctx = bas.context
    L, D = ctx.parse("L"), ctx.parse("D")
    rules = [Rule(c, c) for c in cells_at(ctx, 1) if c not in (L, D)] + [Rule(L, D), Rule(D, L)]
    with pytest.raises(NotPiecewiseCellular):
        SymbolicHomeo(rules, ctx)


def test_not_a_branch(bas):
    ctx = bas.context
    D = ctx.parse("D")
    with pytest.raises(NotABranch):
        compile_canonical(ctx, [CanonicalPiece([D], 0, D, "D after D")])


def test_context_mismatch(bas):
    with pytest.raises(ContextMismatch):
        compose(bas.generators["rot"], X0)


def test_unknown_generators():
    with pytest.raises(UnknownBuiltin):
        builtin_generators("rabbit")


def test_parse_word():
    assert parse_word("g0 g1^-1 g0⁻¹") == [("g0", 1), ("g1", -1), ("g0", -1)]
    with pytest.raises(KeyError):
        word_product(DYADIC_GENS, "x2")


def test_json_round_trip(bas):
    ctx = bas.context
    for g in bas.generators.values():
        d = json.loads(json.dumps(g.to_dict()))
        assert equals(SymbolicHomeo.from_dict(d, ctx), g)
        assert equals(SymbolicHomeo.from_dict(g.to_dict(labels=False), ctx), g)


# -- basilica generators

def test_basilica_rules_exact(bas):
    ctx = bas.context
    lab = lambda g: sorted((ctx.label(d), ctx.label(r)) for d, r in g.pairs())
    assert lab(bas.generators["rot"]) == sorted([("LD", "D"), ("LT", "T"), ("LR", "R"), ("D", "LD"), ("T", "LT"),
                                                 ("R", "LR")])
    assert lab(bas.generators["g0"]) == sorted([("L", "L"), ("DLD", "D"), ("DLTL", "TLDL"), ("DLR", "R"),
                                                ("T", "TLT"), ("R", "TLR")])


def test_basilica_orders(bas):
    g = bas.generators
    assert order_of(g["rot"]) == 2
    assert order_of(g["g0"]) == NoOrderFound(64)
    assert isinstance(order_of(g["g1"], 16), NoOrderFound)


def test_rotation_fixes_cut_point(bas):
    ctx, v = bas.context, bas.points
    rot = bas.generators["rot"]
    assert vertex_image(rot, v["0"]) == v["0"]
    assert apply(rot, ctx.parse("D")) == ctx.parse("LD")


def test_g0_moves_quarter_to_half(bas):
    v = bas.points
    g0 = bas.generators["g0"]
    assert vertex_image(g0, v["1/4"]) == v["1/2"]
    assert vertex_image(g0, v["0"]) == v["0"]


def test_breakpoint_coordinates(bas):
    z = {t: bas.context.coords[v] for t, v in bas.points.items()}
    assert abs(z["0"] - (-0.6180339887)) < 1e-6
    assert abs(z["1/2"] - 0.6180339887) < 1e-6
    assert abs(z["1/4"] - (-0.52156j)) < 1e-4
    assert abs(z["3/4"] - 0.52156j) < 1e-4


def test_g0_image_of_R(bas):
    ctx, v = bas.context, bas.points
    img = image_of(bas.generators["g0"], bas.sets["R"])
    want = LaminarSet([ctx.parse("TLT")], excluded={v["0"], v["3/4"]})
    assert same_set(ctx, img, want)
    assert proper_subset(ctx, img, bas.sets["R"])


def test_basilica_cellular(bas):
    for name in ("rot", "g0", "g1"):
        assert_cellular(bas.generators[name], 5)


def test_pingpong_F(bas):
    g = bas.generators
    res = pingpong_F_check(g["g0"], g["g1"], bas.sets["R"], 8)
    assert res["verdict"] == "Pass"
    assert all(res[k] for k in ("proper_subset", "g1_identity_off_R", "g1_agrees_with_g0_on_g0R",
                                "relation_1", "relation_2", "noncommuting"))


def test_pingpong_F_fails_with_trivial_g1(bas):
    ctx = bas.context
    res = pingpong_F_check(bas.generators["g0"], identity(ctx), bas.sets["R"], 8)
    assert res["verdict"] == "Fail" and not res["g1_agrees_with_g0_on_g0R"]


def test_pingpong_F_indeterminate_when_shallow(bas):
    g = bas.generators
    assert pingpong_F_check(g["g0"], g["g1"], bas.sets["R"], 1)["verdict"] == "Indeterminate"


def test_F_normal_forms_distinct(bas):
    gens = {"x0": bas.generators["g0"], "x1": bas.generators["g1"]}
    words = ["x0", "x1", "x0 x1", "x1 x0", "x0 x0", "x0 x1^-1", "x0 x0 x1", "x0 x1 x1",
             "x1^-1 x0^-1", "x0 x0 x1^-1 x0^-1"]
    elems = [word_product(gens, w) for w in words]
    for a, b in itertools.combinations(range(len(words)), 2):
        assert not equals(elems[a], elems[b]), (words[a], words[b])
    assert not any(is_identity(e) for e in elems)


@settings(max_examples=15, deadline=None)
@given(st.lists(st.tuples(st.sampled_from(["rot", "g0", "g1"]), st.sampled_from([1, -1])), min_size=1, max_size=6))
def test_basilica_word_inverse(w):
    gens = builtin_generators("basilica").generators
    inv = [(n, -e) for n, e in reversed(w)]
    assert is_identity(compose(word_product(gens, w), word_product(gens, inv)))


def test_certificates(bas):
    for g in bas.generators.values():
        cert = certify_quasisymmetry(g, {"verdict": "pass"})
        assert cert["piecewise_cellular"] and cert["certified"]
        assert all("z" in b for b in cert["breakpoints"])


# -- bubble bath generators

def test_bubblebath_orders(bub):
    assert order_of(bub.generators["h"]) == 2
    assert order_of(bub.generators["k"]) == 3


def test_bubblebath_k_rules(bub):
    ctx = bub.context
    got = sorted((ctx.label(d), ctx.label(r)) for d, r in bub.generators["k"].pairs())
    assert ("E1oo.E01", "E01") in got
    assert all(r.startswith("E1oo.E01") for d, r in got if d not in ("E1oo.E01", "E01")
               and not d.startswith("E01") and not d.startswith("E1oo"))


def test_bubblebath_k_image_of_XH(bub):
    ctx = bub.context
    img = image_of(bub.generators["k"], bub.sets["X_H"])
    assert all(c[:1] == ctx.parse("E1oo") for c in img.cells)
    assert proper_subset(ctx, img, bub.sets["X_K"])


def test_bubblebath_sets_complementary(bub):
    ctx = bub.context
    XK, XH = bub.sets["X_K"], bub.sets["X_H"]
    assert not subset(ctx, XK, XH) and not subset(ctx, XH, XK)
    assert set(complement(ctx, XK).cells) == set(XH.cells)


def test_bubblebath_cellular(bub):
    for g in bub.generators.values():
        assert_cellular(g, 4)


def test_pingpong_free(bub):
    h, k = bub.generators["h"], bub.generators["k"]
    H, K = [h], [k, invert(k)]
    assert pingpong_free_check(H, K, bub.sets["X_H"], bub.sets["X_K"], 6)["verdict"] == "Pass"
    assert pingpong_free_check(H, K, bub.sets["X_H"], bub.sets["X_K"], 1)["verdict"] == "Indeterminate"
    ident = identity(bub.context)
    assert pingpong_free_check([ident], [ident], bub.sets["X_H"], bub.sets["X_K"], 6)["verdict"] == "Fail"


def test_alternating_words_nontrivial(bub):
    h, k = bub.generators["h"], bub.generators["k"]
    kk = [k, invert(k)]
    for n in range(1, 9):
        for exps in itertools.product(range(2), repeat=(n + 1) // 2):
            g = identity(bub.context)
            ks = iter(exps)
            for i in range(n):
                g = compose(h if i % 2 == 0 else kk[next(ks)], g)
            assert not is_identity(g)


def test_unresolved_prefix():
    with pytest.raises(UnresolvedPrefix):
        apply(X0, ())
