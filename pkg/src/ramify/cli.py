"""Command line entry point: ``ramify verify``, ``ramify julia``, ``ramify group``.

Exit codes: 0 pass, 1 usage or configuration error, 2 mathematical failure.
"""

from __future__ import annotations

import json
import math
import sys
import time
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import click
import numpy as np

from . import __version__
from .builtins import SYSTEM_BUILTINS, builtin_system, parse_params
from .cell_model import check_admissibility, enumerate_explicit, expand
from .errors import RamifyError

EXIT_PASS, EXIT_USAGE, EXIT_FAIL = 0, 1, 2
DERIVE_DEPTH = 5


class UsageFailure(Exception):
    pass


def _jsonable(x):
    if isinstance(x, dict):
        return {str(k): _jsonable(v) for k, v in x.items()}
    if isinstance(x, (list, tuple, set, frozenset)):
        return [_jsonable(v) for v in (sorted(x) if isinstance(x, (set, frozenset)) else x)]
    if isinstance(x, (np.bool_, bool)):
        return bool(x)
    if isinstance(x, (np.integer,)):
        return int(x)
    if isinstance(x, (np.floating, float)):
        x = float(x)
        return x if math.isfinite(x) else str(x)
    if isinstance(x, complex):
        return [x.real, x.imag]
    if hasattr(x, "to_dict"):
        return _jsonable(x.to_dict())
    return x


def _write_json(path, obj):
    path.write_text(json.dumps(_jsonable(obj), indent=2, sort_keys=True) + "\n")


def _outdir(out):
    p = Path(out)
    p.mkdir(parents=True, exist_ok=True)
    return p


def _header(command, config, seed, t0):
    return {
        "tool": "ramify",
        "version": __version__,
        "command": command,
        "config": config,
        "seed": seed,
        "wall_time_s": round(time.perf_counter() - t0, 3),
    }


def _positive(name, value):
    if value is not None and value <= 0:
        raise UsageFailure(f"--{name} must be positive")


# ---------------------------------------------------------------------------

@click.group()
@click.version_option(__version__, prog_name="ramify")
def cli():
    """Finitely ramified cell structures, undistorted metrics and their homeomorphism groups."""


@cli.command()
@click.option("--builtin", "name", required=True,
              type=click.Choice(list(SYSTEM_BUILTINS) + ["plus-example"]), help="Builtin space.")
@click.option("--params", default=None, help="Comma separated parameters, e.g. 1/2,1/4,1/4 for vicsek.")
@click.option("--depth", default=8, show_default=True, type=int)
@click.option("--k", "k", default=None, type=int, help="Run the admissibility check with this k.")
@click.option("--alpha", default=None, type=float, help="Also build d_alpha (needs --k).")
@click.option("--seed", default=0, show_default=True, type=int)
@click.option("--threads", default=1, show_default=True, type=int)
@click.option("--out", default="out", show_default=True, type=click.Path(file_okay=False))
def verify(name, params, depth, k, alpha, seed, threads, out):
    """Verify the undistorted conditions for a builtin space."""
    t0 = time.perf_counter()
    _positive("depth", depth)
    _positive("k", k)
    _positive("threads", threads)
    if alpha is not None and k is None:
        raise UsageFailure("--alpha needs --k")
    config = {"builtin": name, "params": params, "depth": depth, "k": k, "alpha": alpha, "threads": threads}
    out = _outdir(out)
    report = {}
    ok = True
    if name == "plus-example":
        cx = enumerate_explicit(name, depth)
    else:
        try:
            p = parse_params(params) if params else None
            if p is not None and name == "vicsek" and len(p) != 3:
                raise ValueError("vicsek takes three parameters a,b,c")
            system = builtin_system(name, p)
        except (ValueError, ZeroDivisionError) as exc:
            raise UsageFailure(str(exc)) from None
        cx = expand(system, depth)
    report["counts"] = cx.counts()
    if name != "plus-example":
        from .metrics import (
            attach_embedding,
            diam_csv,
            diam_table,
            strong_decay_fit,
            verify_local_conditions,
            verify_undistorted,
            vicsek_witness_family,
        )

        m = attach_embedding(cx, name, parse_params(params) if params else None)
        und = verify_undistorted(m, cx)
        report["undistorted"] = und.to_dict()
        ok &= und.passed
        try:
            report["local"] = verify_local_conditions(m, cx).to_dict()
        except RamifyError as exc:
            report["local"] = {"error": str(exc)}
        report["strong_decay"] = strong_decay_fit(m, cx)
        if name == "vicsek" and not und.passed:
            report["witness_family"] = vicsek_witness_family(m, cx)
        (out / "diameters.csv").write_text(diam_csv(diam_table(m, cx)))
    if k is not None:
        adm = check_admissibility(cx, k)
        report["admissibility"] = adm.to_dict()
        ok &= adm.passed
        if alpha is not None:
            from .metrics import intrinsic_metric, verify_undistorted

            oracle = intrinsic_metric(cx, k, alpha, cx.depth)
            dm, sub = oracle.as_metric(cx.depth - 1)
            rep = verify_undistorted(dm, sub)
            report["d_alpha"] = {"k": k, "alpha": alpha, "L": cx.depth, **rep.to_dict()}
            ok &= rep.passed
    report["verdict"] = "pass" if ok else "fail"
    _write_json(out / "report.json", {**_header("verify", config, seed, t0), **report})
    click.echo(f"verify {name}: {report['verdict']}")
    return EXIT_PASS if ok else EXIT_FAIL


# ---------------------------------------------------------------------------

def _load_json(path, what):
    try:
        return json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise UsageFailure(f"cannot read {what} {path}: {exc}") from None


def _cells_csv(dec, depth):
    lines = ["level,cell_id,x,y"]
    for n in range(1, depth + 1):
        for w in dec.words(n):
            cid = dec.word_name(w)
            lines += [f"{n},{cid},{z.real:.17g},{z.imag:.17g}" for z in dec.clouds[w]]
    return "\n".join(lines) + "\n"


def _vertices_csv(dec, depth):
    V = dec.vertices
    incident = {}
    for w, vids in dec.boundary.items():
        if len(w) <= depth:
            for v in vids:
                incident.setdefault((len(w), v), []).append(dec.word_name(w))
    lines = ["level,vertex_id,x,y,cell_ids"]
    for (n, v), cells in sorted(incident.items()):
        z = V.points[v]
        lines.append(f"{n},{v},{z.real:.17g},{z.imag:.17g},{';'.join(sorted(cells))}")
    return "\n".join(lines) + "\n"


@cli.command()
@click.option("--builtin", "name", default=None, help="basilica, bubblebath or basilica-beta.")
@click.option("--map", "map_path", default=None, type=click.Path(dir_okay=False), help="Map JSON {num, den}.")
@click.option("--cut", "cut_path", default=None, type=click.Path(dir_okay=False), help="Branch cut JSON.")
@click.option("--depth", default=3, show_default=True, type=int)
@click.option("--samples", default=100000, show_default=True, type=int)
@click.option("--seed", default=0, show_default=True, type=int)
@click.option("--threads", default=1, show_default=True, type=int)
@click.option("--out", default="out", show_default=True, type=click.Path(file_okay=False))
def julia(name, map_path, cut_path, depth, samples, seed, threads, out):
    """Extract the cell structure of a Julia set from an invariant branch cut."""
    from .julia import (
        RationalMap,
        derive_replacement,
        extract_cells,
        julia_builtin,
        parse_cut,
        sample_julia,
        validate_branch_cut,
        verify_julia_undistorted,
    )

    t0 = time.perf_counter()
    _positive("depth", depth)
    _positive("samples", samples)
    _positive("threads", threads)
    config = {"builtin": name, "map": map_path, "cut": cut_path, "depth": depth, "samples": samples,
              "threads": threads}
    names = None
    if name is not None:
        if map_path or cut_path:
            raise UsageFailure("give either --builtin or --map/--cut")
        inst = julia_builtin(name)
        f, S, names = inst.f, inst.S, inst.names
    else:
        if not (map_path and cut_path):
            raise UsageFailure("need --builtin, or both --map and --cut")
        try:
            f = RationalMap.from_dict(_load_json(map_path, "map"))
            S = parse_cut(_load_json(cut_path, "cut"), f)
        except (KeyError, TypeError, ValueError) as exc:
            raise UsageFailure(f"malformed map or cut: {exc}") from None
    out = _outdir(out)
    sample = sample_julia(f, samples, seed=seed)
    report = {"map": f.to_dict(), "cut": [[z.real, z.imag] for z in S], "sample": sample.params()}
    rep = validate_branch_cut(f, S, sample, raise_errors=False)
    report["branch_cut"] = rep.to_dict()
    if not rep.valid:
        report["verdict"] = "fail"
        _write_json(out / "report.json", {**_header("julia", config, seed, t0), **report})
        click.echo(f"julia: branch cut rejected: {rep.reason}")
        return EXIT_FAIL
    # the type tables are read off levels above the deepest one, so extract a little deeper
    dec = extract_cells(f, S, max(depth, DERIVE_DEPTH), sample, names=names)
    report["counts"] = dec.counts()[:depth]
    report["observed_counts"] = dec.observed_counts[:depth]
    report["eps"] = dec.eps
    system, word_of = derive_replacement(dec)
    report["types"] = len(system.types) - 1
    report["symbolic_counts"] = system.level_counts(depth)[1:]
    (out / "replacement.json").write_text(system.to_json(indent=2) + "\n")
    # the exit status reflects the branch cut and extraction; the metric verdict is reported
    if depth >= 3:
        ver = verify_julia_undistorted(dec, depth, system, word_of)
        report["undistorted"] = ver
        report["verdict"] = ver["verdict"]
    else:
        report["verdict"] = "untested"
        report["notes"] = ["the undistorted check needs at least four levels"]
    (out / "cells.csv").write_text(_cells_csv(dec, depth))
    (out / "vertices.csv").write_text(_vertices_csv(dec, depth))
    _write_json(out / "report.json", {**_header("julia", config, seed, t0), **report})
    click.echo(f"julia: counts {report['counts']}, undistorted {report['verdict']}")
    return EXIT_PASS


# ---------------------------------------------------------------------------

CHECKS = ("orders", "pingpong-free", "pingpong-F", "certify")


def _group_checks(instance):
    return {"basilica": ["orders", "pingpong-F", "certify"],
            "bubblebath": ["orders", "pingpong-free", "certify"]}[instance]


@cli.command()
@click.option("--builtin", "name", required=True, type=click.Choice(["basilica", "bubblebath"]))
@click.option("--check", "checks", multiple=True, type=click.Choice(CHECKS + ("all",)),
              help="Checks to run (repeatable); default all that apply.")
@click.option("--words", "words_path", default=None, type=click.Path(dir_okay=False),
              help="File with one word per line, e.g. 'g0 g1^-1 g0'.")
@click.option("--depth", default=8, show_default=True, type=int, help="Resolution depth for ping-pong checks.")
@click.option("--samples", default=None, type=int, help="Julia samples used to build the generators.")
@click.option("--seed", default=0, show_default=True, type=int)
@click.option("--threads", default=1, show_default=True, type=int)
@click.option("--out", default="out", show_default=True, type=click.Path(file_okay=False))
def group(name, checks, words_path, depth, samples, seed, threads, out):
    """Orders, ping-pong and quasisymmetry certificates for builtin homeomorphisms."""
    from . import homeos as H

    t0 = time.perf_counter()
    _positive("depth", depth)
    _positive("samples", samples)
    _positive("threads", threads)
    checks = list(checks) or ["all"]
    if "all" in checks:
        checks = _group_checks(name)
    if "pingpong-free" in checks and name != "bubblebath":
        raise UsageFailure("pingpong-free applies to bubblebath")
    if "pingpong-F" in checks and name != "basilica":
        raise UsageFailure("pingpong-F applies to basilica")
    words = []
    if words_path:
        try:
            words = [ln.strip() for ln in Path(words_path).read_text().splitlines() if ln.strip()]
        except OSError as exc:
            raise UsageFailure(f"cannot read {words_path}: {exc}") from None
    config = {"builtin": name, "checks": checks, "words": words_path, "depth": depth, "samples": samples,
              "threads": threads}
    out = _outdir(out)
    gs = H.builtin_generators(name, samples=samples, seed=seed)
    gens = gs.generators
    ctx = gs.context
    cert = {"generators": {k: g.to_dict() for k, g in gens.items()}, "selection_log": gs.log}
    ok = True
    if "orders" in checks:
        orders = {}
        for k, g in gens.items():
            o = H.order_of(g)
            orders[k] = o if isinstance(o, int) else f"none up to {o.limit}"
        cert["orders"] = orders
    if "pingpong-free" in checks:
        h, k = gens["h"], gens["k"]
        oh, ok_ = H.order_of(h), H.order_of(k)
        Hs = [H.power(h, i) for i in range(1, oh)] if isinstance(oh, int) else []
        Ks = [H.power(k, i) for i in range(1, ok_)] if isinstance(ok_, int) else []
        for i, g in enumerate(Hs, 1):
            g.name = f"h^{i}"
        for i, g in enumerate(Ks, 1):
            g.name = f"k^{i}"
        if not Hs or not Ks:
            res = {"verdict": "Fail", "witness": "h or k has no finite order"}
        else:
            res = H.pingpong_free_check(Hs, Ks, gs.sets["X_H"], gs.sets["X_K"], depth)
        res["sets"] = {n: s.to_dict(ctx) for n, s in gs.sets.items()}
        cert["pingpong_free"] = res
        ok &= res["verdict"] == "Pass"
    if "pingpong-F" in checks:
        res = H.pingpong_F_check(gens["g0"], gens["g1"], gs.sets["R"], depth)
        res["R"] = gs.sets["R"].to_dict(ctx)
        cert["pingpong_F"] = res
        ok &= res["verdict"] == "Pass"
    if "certify" in checks:
        metric = H.intrinsic_metric_report(ctx)
        cert["quasisymmetry"] = {k: H.certify_quasisymmetry(g, metric) for k, g in gens.items()}
        ok &= all(c["certified"] for c in cert["quasisymmetry"].values())
    if words:
        def evaluate(w):
            try:
                g = H.word_product(gens, w)
            except KeyError as exc:
                return {"word": w, "error": str(exc)}
            return {"word": w, "identity": H.is_identity(g), "rules": g.to_dict()["rules"]}

        with ThreadPoolExecutor(max_workers=threads) as pool:
            cert["words"] = list(pool.map(evaluate, words))
        if any("error" in r for r in cert["words"]):
            raise UsageFailure("; ".join(r["error"] for r in cert["words"] if "error" in r))
    cert["verdict"] = "pass" if ok else "fail"
    _write_json(out / "certificates.json", {**_header("group", config, seed, t0), **cert})
    click.echo(f"group {name}: {cert['verdict']}")
    return EXIT_PASS if ok else EXIT_FAIL


def main(argv=None):
    try:
        rv = cli.main(args=argv, prog_name="ramify", standalone_mode=False)
    except UsageFailure as exc:
        click.echo(f"error: {exc}", err=True)
        return EXIT_USAGE
    except click.exceptions.Exit as exc:
        return exc.exit_code
    except click.ClickException as exc:
        exc.show()
        return EXIT_USAGE
    except click.Abort:
        return EXIT_USAGE
    except RamifyError as exc:
        click.echo(f"failed: {type(exc).__name__}: {exc}", err=True)
        return EXIT_FAIL
    return rv if isinstance(rv, int) else EXIT_PASS


def entry():
    sys.exit(main())


if __name__ == "__main__":
    entry()
