"""Command-line interface: ``ultrapsi seq|symbol|parametrix|quantize|experiment``.

Every command prints a JSON report on stdout.
"""
from __future__ import annotations

import json
import sys

import click
import numpy as np

from .reports import jsonable


def _emit(obj) -> None:
    click.echo(json.dumps(jsonable(obj), indent=1))


def _sequence(gevrey: float | None, spec: str | None, P: int):
    from .weights import make_gevrey, parse_sequence
    if spec:
        return parse_sequence(spec, P=P)
    if gevrey is None:
        raise click.UsageError("give --gevrey S or --seq SPEC")
    return make_gevrey(gevrey, P)


def _class(text: str, P: int):
    from .weights import parse_sequence
    parts = [t.strip() for t in text.split(",")]
    if len(parts) != 2:
        raise click.BadParameter("expected 'M,A', e.g. gevrey:2,gevrey:1")
    return parse_sequence(parts[0], P=P), parse_sequence(parts[1], P=P)


@click.group()
@click.version_option(package_name="artifact")
def main():
    """Weight sequences, symbol classes, parametrices and grid quantization."""


# ---------------------------------------------------------------------------
@main.group()
def seq():
    """Weight-sequence conditions and the associated function."""


@seq.command("check")
@click.option("--gevrey", type=float, help="Gevrey exponent s for M_p = p!^s.")
@click.option("--seq", "spec", help="Sequence spec such as gevrey:2.")
@click.option("--cond", required=True, help="M1, M2, M3, M3', M4 or AsubM.")
@click.option("--range", "range_", type=int, default=200, show_default=True)
@click.option("--other", help="Second sequence for AsubM.")
def seq_check(gevrey, spec, cond, range_, other):
    from .weights import check_condition, parse_sequence
    s = _sequence(gevrey, spec, range_)
    o = parse_sequence(other, P=range_) if other else None
    _emit(check_condition(s, cond, range_=range_, other=o).to_dict())


@seq.command("assoc")
@click.option("--gevrey", type=float)
@click.option("--seq", "spec")
@click.option("--rho", type=float, required=True)
@click.option("--P", "P", type=int, default=2000, show_default=True)
def seq_assoc(gevrey, spec, rho, P):
    from .weights import associated_function_details
    s = _sequence(gevrey, spec, P)
    val, arg, sat = associated_function_details(s, rho)
    _emit({"rho": rho, "value": val, "argmax": arg, "saturated": sat})


@seq.command("rho0")
@click.option("--a", "a_spec", required=True, help="Spec of A_p.")
@click.option("--m", "m_spec", required=True, help="Spec of M_p.")
@click.option("--P", "P", type=int, default=200, show_default=True)
def seq_rho0(a_spec, m_spec, P):
    from .weights import estimate_rho0, parse_sequence
    try:
        est = estimate_rho0(parse_sequence(a_spec, P=P), parse_sequence(m_spec, P=P))
    except ValueError as err:
        raise click.ClickException(str(err))
    _emit(est.to_dict())


# ---------------------------------------------------------------------------
@main.group()
def symbol():
    """Symbol-class membership and hypoellipticity."""


@symbol.command("check")
@click.option("--expr", required=True)
@click.option("--class", "cls", default="gevrey:2,gevrey:1", show_default=True)
@click.option("--rho", type=float, default=1.0, show_default=True)
@click.option("--mode", type=click.Choice(["beurling", "roumieu"]), default="beurling")
@click.option("--h", type=float, default=1.0, show_default=True)
@click.option("--m", type=float, default=1.0, show_default=True)
@click.option("--K", "K", type=int, default=3, show_default=True)
@click.option("--box", type=float, default=20.0, show_default=True)
@click.option("--step", type=float, default=0.5, show_default=True)
@click.option("--d", type=int, default=1, show_default=True)
def symbol_check(expr, cls, rho, mode, h, m, K, box, step, d):
    """Seminorm sup at (h, m); the mode selects which parameter is scanned."""
    from .symbols import parse_symbol
    from .symbols.classes import BoxGrid, estimate_class_membership, geometric_scan
    a = parse_symbol(expr, d)
    M, A = _class(cls, 200)
    grid = BoxGrid.from_step(box, step, d)
    rep = estimate_class_membership(a, M, A, rho, h, m, K, grid)
    # beurling: some m for every h; roumieu: some h for every m
    scan = {}
    for v in geometric_scan(0.1, 10.0, 4):
        r = (estimate_class_membership(a, M, A, rho, v, m, K, grid) if mode == "beurling"
             else estimate_class_membership(a, M, A, rho, h, v, K, grid))
        scan[float(v)] = {"sup": r.sup, "verdict": r.verdict}
    out = rep.to_dict()
    out.update({"mode": mode, "scan_parameter": "h" if mode == "beurling" else "m", "scan": scan,
                "verdict": bool(rep.verdict and all(s["verdict"] for s in scan.values()))})
    _emit(out)


@symbol.command("hypo")
@click.option("--expr", required=True)
@click.option("--class", "cls", default="gevrey:2,gevrey:1.5", show_default=True)
@click.option("--rho", type=float, default=1.0, show_default=True)
@click.option("--B", "B", type=float, default=2.0, show_default=True)
@click.option("--box", type=float, default=20.0, show_default=True)
@click.option("--step", type=float, default=0.5, show_default=True)
@click.option("--K", "K", type=int, default=3, show_default=True)
@click.option("--mode", type=click.Choice(["beurling", "roumieu"]), default="beurling")
@click.option("--sweep", default="", help="Comma-separated box half-widths for a stability sweep.")
@click.option("--d", type=int, default=1, show_default=True)
def symbol_hypo(expr, cls, rho, B, box, step, K, mode, sweep, d):
    from .symbols import parse_symbol
    from .symbols.classes import BoxGrid, box_sweep, check_hypoelliptic
    a = parse_symbol(expr, d)
    M, A = _class(cls, 200)
    rep = check_hypoelliptic(a, M, A, rho, B, K, BoxGrid.from_step(box, step, d), mode=mode)
    out = rep.to_dict()
    out["constants"] = {"c": rep.lower_bound.get("c"), "C": rep.quotient_bound.get("C"),
                        "h_min": rep.quotient_bound.get("h_min")}
    if sweep:
        def run(g):
            r = check_hypoelliptic(a, M, A, rho, B, K, g, mode=mode)
            return ({"c": r.lower_bound["c"], "C": r.quotient_bound["C"]} if r.verdict
                    else {"c": float("nan"), "C": float("nan")})
        out["box_sweep"] = box_sweep(run, [float(v) for v in sweep.split(",")], step, d)
    _emit(out)


# ---------------------------------------------------------------------------
@main.group()
def parametrix():
    """Parametrix terms and their verification."""


@parametrix.command("build")
@click.option("--expr", required=True)
@click.option("--J", "J", type=int, required=True)
@click.option("--out", "out", type=click.Path(dir_okay=False), required=True)
@click.option("--class", "cls", default="gevrey:2,gevrey:1.5", show_default=True)
@click.option("--rho", type=float, default=1.0, show_default=True)
@click.option("--B", "B", type=float, default=1.0, show_default=True)
@click.option("--d", type=int, default=1, show_default=True)
def parametrix_build(expr, J, out, cls, rho, B, d):
    from .parametrix import parametrix_terms
    from .symbols import node_count, parse_symbol
    M, A = _class(cls, max(4 * J + 20, 60))
    names = [c.strip() for c in cls.split(",")]
    p = parametrix_terms(parse_symbol(expr, d), J, d=d, B=B, M=M, A=A, rho=rho,
                         meta={"M": names[0], "A": names[1]})
    p.dump(out)
    _emit({"out": out, "J": J, "nodes": node_count(*p.terms)})


@parametrix.command("verify")
@click.option("--terms", "terms_path", type=click.Path(exists=True, dir_okay=False), required=True)
@click.option("--check", "what", type=click.Choice(["composition", "fs", "equivalence"]), required=True)
@click.option("--points", type=int, default=1000, show_default=True)
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--min-bracket", type=float, default=3.0, show_default=True)
@click.option("--K", "K", type=int, default=2, show_default=True)
@click.option("--box", type=float, default=30.0, show_default=True)
@click.option("--step", type=float, default=0.5, show_default=True)
@click.option("--h", type=float, default=1.0, show_default=True)
@click.option("--m", type=float, default=1.0, show_default=True)
def parametrix_verify(terms_path, what, points, seed, min_bracket, K, box, step, h, m):
    from .harness import composition_errors, load_thresholds, random_points
    from .parametrix import (CutoffSpec, FormalSymbolSum, check_equivalence, check_fs_membership,
                             remainder_ray_slopes, truncate_with_cutoffs)
    from .symbols.classes import BoxGrid
    p = FormalSymbolSum.load(terms_path)
    if what == "composition":
        if p.symbol is None:
            raise click.ClickException("terms file carries no symbol")
        x, k = random_points(np.random.default_rng(seed), p.d, points, 10.0, min_bracket)
        errs = composition_errors(p, p.symbol, p.J, x, k)
        ok = max(e["scaled_err"] for e in errs) < load_thresholds()["composition"]["tol"]
        out = {"check": what, "verdict": ok, "errors": errs}
    elif what == "fs":
        r = check_fs_membership(p, h, m, K, BoxGrid.from_step(box, step, p.d))
        out, ok = {"check": what, **r.to_dict()}, r.verdict
    else:
        fam = truncate_with_cutoffs(p, len(p.terms), CutoffSpec.scaled(p))
        try:
            r = check_equivalence(fam, p, K, BoxGrid.from_step(box, step, p.d), h=h, m=m)
        except ValueError as err:
            raise click.ClickException(str(err))
        ray = remainder_ray_slopes(p, len(p.terms), range(1, p.J + 1), np.linspace(3, 30, 60))
        tol = load_thresholds()["acceptance"]["ray_rel_tol"]
        ok = r.verdict and all(v["rel_error"] <= tol for v in ray.values())
        out = {"check": what, **r.to_dict(), "ray": ray, "verdict": ok}
    _emit(out)
    sys.exit(0 if ok else 1)


# ---------------------------------------------------------------------------
@main.group()
def quantize():
    """Grid quantization a(x,D)."""


@quantize.command("apply")
@click.option("--expr", required=True)
@click.option("--input", "input_path", type=click.Path(exists=True, dir_okay=False), required=True)
@click.option("--L", "L", type=float, default=None, help="Checked against the input grid.")
@click.option("--N", "N", type=int, default=None, help="Checked against the input grid.")
@click.option("--out", "out", type=click.Path(dir_okay=False))
def quantize_apply(expr, input_path, L, N, out):
    from .quantize import GridFunction, apply_operator
    from .symbols import parse_symbol
    f = GridFunction.load(input_path)
    if (L is not None and not np.isclose(L, f.L)) or (N is not None and N != f.N):
        raise click.ClickException(f"input grid is L={f.L}, N={f.N}")
    g = apply_operator(parse_symbol(expr, f.d), f, method="auto")
    if out:
        g.dump(out)
    _emit({"out": out, "d": g.d, "L": g.L, "N": g.N, "norm_in": f.norm(), "norm_out": g.norm()})


@quantize.command("gaussian")
@click.option("--L", "L", type=float, default=12.0, show_default=True)
@click.option("--N", "N", type=int, default=256, show_default=True)
@click.option("--d", type=int, default=1, show_default=True)
@click.option("--width", type=float, default=1.0, show_default=True)
@click.option("--out", "out", type=click.Path(dir_okay=False), required=True)
def quantize_gaussian(L, N, d, width, out):
    """Write a Gaussian grid function (a convenient --input)."""
    from .quantize import gaussian
    gaussian(d, L, N, width=width).dump(out)
    _emit({"out": out})


# ---------------------------------------------------------------------------
@main.group(invoke_without_command=True)
@click.pass_context
def experiment(ctx):
    """Experiments E1-E4."""
    if ctx.invoked_subcommand is None:
        click.echo(ctx.get_help())


def _list_experiments():
    from .harness import EXPERIMENTS
    return [{"id": k, "name": v[0]} for k, v in EXPERIMENTS.items()]


@experiment.command("list")
def experiment_list():
    _emit(_list_experiments())


@experiment.command("run")
@click.option("--config", "config", help="Config JSON path or an experiment id (E1..E4).")
@click.option("--out", "out", type=click.Path(file_okay=False))
@click.option("--seed", type=int, default=None)
@click.option("--list", "list_", is_flag=True, help="List experiments and exit.")
def experiment_run(config, out, seed, list_):
    from pathlib import Path
    from .harness import ExperimentConfig, run_experiment
    if list_:
        _emit(_list_experiments())
        return
    if not config:
        raise click.UsageError("--config is required")
    cfg = (ExperimentConfig.load(config) if Path(config).is_file()
           else ExperimentConfig(config))
    if seed is not None:
        cfg.seed = seed
    res = run_experiment(cfg, out)
    _emit({"experiment": res.experiment, "passed": res.passed, "config_hash": cfg.hash,
           "checks": res.checks, "out": out or cfg.out})
    sys.exit(0 if res.passed else 1)


if __name__ == "__main__":
    main()
