import csv
import json
import math
import subprocess
import sys

import pytest

from ramify import __version__
from ramify.cli import main


def run(tmp_path, *args, out="out"):
    d = tmp_path / out
    code = main(list(args) + ["--out", str(d)])
    return code, d


def load(d, name="report.json"):
    return json.loads((d / name).read_text())


def strip_time(doc):
    doc = dict(doc)
    doc.pop("wall_time_s")
    return doc


# -- verify

def test_verify_sierpinski(tmp_path):
    code, d = run(tmp_path, "verify", "--builtin", "sierpinski", "--depth", "8")
    assert code == 0
    rep = load(d)
    c = rep["undistorted"]["constants"]
    assert (c["r"], c["R"], c["C"]) == pytest.approx((0.5, 0.5, 1.0), abs=1e-9)
    assert c["delta"] == pytest.approx(math.sqrt(3) / 2, abs=1e-9)
    assert rep["verdict"] == "pass"
    assert (rep["tool"], rep["version"], rep["seed"]) == ("ramify", __version__, 0)
    assert rep["config"]["depth"] == 8 and rep["wall_time_s"] >= 0
    rows = list(csv.DictReader((d / "diameters.csv").open()))
    assert len(rows) == sum(3 ** n for n in range(9))


def test_verify_vicsek_distorted(tmp_path):
    code, d = run(tmp_path, "verify", "--builtin", "vicsek", "--params", "0.5,0.25,0.25", "--depth", "6")
    assert code == 2
    rep = load(d)
    assert rep["verdict"] == "fail"
    assert any(w["kind"] == "decay" for w in rep["undistorted"]["witnesses"])
    assert rep["witness_family"]


def test_verify_bad_vicsek_params(tmp_path):
    code, d = run(tmp_path, "verify", "--builtin", "vicsek", "--params", "0.9,0.2,0.1")
    assert code == 1
    assert not (d / "report.json").exists()


@pytest.mark.parametrize("args", [
    ["verify", "--builtin", "koch"],
    ["verify", "--builtin", "sierpinski", "--depth", "0"],
    ["verify", "--builtin", "sierpinski", "--alpha", "1.2"],
    ["verify", "--builtin", "vicsek", "--params", "1/2,1/2"],
    ["julia"],
    ["julia", "--builtin", "basilica", "--map", "m.json"],
    ["group", "--builtin", "bubblebath", "--check", "pingpong-F"],
    ["group", "--builtin", "basilica", "--samples", "-5"],
])
def test_usage_errors(tmp_path, args):
    assert run(tmp_path, *args)[0] == 1


def test_verify_admissibility_and_d_alpha(tmp_path):
    code, d = run(tmp_path, "verify", "--builtin", "sierpinski", "--depth", "5", "--k", "2", "--alpha",
                  str(1.5 ** 0.5))
    assert code == 0
    rep = load(d)
    assert rep["admissibility"]["passed"]
    assert rep["d_alpha"]["L"] == 5
    code, d = run(tmp_path, "verify", "--builtin", "sierpinski", "--depth", "4", "--k", "1", out="k1")
    assert code == 2 and not load(d)["admissibility"]["passed"]


def test_verify_plus_example(tmp_path):
    code, d = run(tmp_path, "verify", "--builtin", "plus-example", "--depth", "7", "--k", "3")
    assert code == 2
    assert load(d)["counts"][0] == 1


def test_verify_reproducible(tmp_path):
    args = ["verify", "--builtin", "weird-interval", "--depth", "8"]
    _, a = run(tmp_path, *args, out="a")
    _, b = run(tmp_path, *args, out="b")
    assert (a / "diameters.csv").read_bytes() == (b / "diameters.csv").read_bytes()
    assert strip_time(load(a)) == strip_time(load(b))


# -- julia

def test_julia_basilica(tmp_path):
    code, d = run(tmp_path, "julia", "--builtin", "basilica", "--depth", "3", "--samples", "100000", "--seed", "7")
    assert code == 0
    rep = load(d)
    assert rep["counts"] == [4, 8, 16]
    assert rep["symbolic_counts"] == [4, 8, 16]
    assert rep["seed"] == 7 and rep["branch_cut"]["valid"]
    assert rep["verdict"] in ("pass", "fail")
    system = json.loads((d / "replacement.json").read_text())
    assert system["root"] == "root"
    rows = list(csv.DictReader((d / "cells.csv").open()))
    assert set(rows[0]) == {"level", "cell_id", "x", "y"}
    assert len({(r["level"], r["cell_id"]) for r in rows}) == 4 + 8 + 16
    assert (d / "vertices.csv").read_text().count("\n") > 1


def test_julia_bubblebath_reproducible(tmp_path):
    args = ["julia", "--builtin", "bubblebath", "--depth", "2", "--samples", "100000"]
    code, a = run(tmp_path, *args, out="a")
    assert code == 0
    assert load(a)["counts"] == [6, 12]
    _, b = run(tmp_path, *args, out="b")
    for name in ("cells.csv", "vertices.csv", "replacement.json"):
        assert (a / name).read_bytes() == (b / name).read_bytes()
    assert strip_time(load(a)) == strip_time(load(b))


def test_julia_invalid_cut(tmp_path):
    (tmp_path / "z2.json").write_text(json.dumps({"num": [-1, 0, 1], "den": [1]}))
    (tmp_path / "beta.json").write_text(json.dumps({"points": [[(1 + math.sqrt(5)) / 2, 0]]}))
    code, d = run(tmp_path, "julia", "--map", str(tmp_path / "z2.json"), "--cut", str(tmp_path / "beta.json"),
                  "--samples", "100000")
    assert code == 2
    rep = load(d)
    assert not rep["branch_cut"]["valid"]
    assert "not injective" in rep["branch_cut"]["reason"]
    z1, z2 = (complex(*w) for w in rep["branch_cut"]["witness"])
    assert abs(z1 + z2) < 1e-9 and abs(z1 - z2) > 1


def test_julia_malformed_map(tmp_path):
    (tmp_path / "m.json").write_text("{not json")
    (tmp_path / "c.json").write_text("{}")
    assert run(tmp_path, "julia", "--map", str(tmp_path / "m.json"), "--cut", str(tmp_path / "c.json"))[0] == 1


# -- group

def test_group_bubblebath_pingpong(tmp_path):
    code, d = run(tmp_path, "group", "--builtin", "bubblebath", "--check", "pingpong-free", "--check", "orders")
    assert code == 0
    cert = load(d, "certificates.json")
    assert cert["orders"] == {"h": 2, "k": 3}
    assert cert["pingpong_free"]["verdict"] == "Pass"


def test_group_basilica_F(tmp_path):
    code, d = run(tmp_path, "group", "--builtin", "basilica", "--check", "pingpong-F")
    assert code == 0
    res = load(d, "certificates.json")["pingpong_F"]
    assert res["verdict"] == "Pass" and res["relation_1"] and res["relation_2"]


def test_group_words(tmp_path):
    words = tmp_path / "words.txt"
    words.write_text("rot rot\ng0 g0^-1\ng0 g1\n")
    code, d = run(tmp_path, "group", "--builtin", "basilica", "--check", "orders", "--words", str(words),
                  "--threads", "2")
    assert code == 0
    got = [(w["word"], w["identity"]) for w in load(d, "certificates.json")["words"]]
    assert got == [("rot rot", True), ("g0 g0^-1", True), ("g0 g1", False)]
    assert load(d, "certificates.json")["orders"]["rot"] == 2


def test_group_unknown_generator_in_words(tmp_path):
    words = tmp_path / "words.txt"
    words.write_text("rot x9\n")
    assert run(tmp_path, "group", "--builtin", "basilica", "--check", "orders", "--words", str(words))[0] == 1


def test_group_certify_reproducible(tmp_path):
    args = ["group", "--builtin", "basilica", "--check", "certify"]
    code, a = run(tmp_path, *args, out="a")
    assert code == 0
    _, b = run(tmp_path, *args, out="b")
    ca, cb = load(a, "certificates.json"), load(b, "certificates.json")
    assert strip_time(ca) == strip_time(cb)
    assert all(c["certified"] for c in ca["quasisymmetry"].values())


def test_console_script_help():
    res = subprocess.run([sys.executable, "-m", "ramify.cli", "--help"], capture_output=True, text=True)
    assert res.returncode == 0
    for cmd in ("verify", "julia", "group"):
        assert cmd in res.stdout
