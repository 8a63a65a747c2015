"""Command line driver: generators, solvers, verification suites and reports.

Exit codes: 0 all checks pass, 1 a check failed, 2 bad input, 3 budget exhausted.
"""
from __future__ import annotations

import ast
import csv
import io
import json
import math
import operator
import os
import random
import sys
from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path
from typing import Callable, Mapping

import click

from .mmspace import (GENERATORS, BudgetExceeded, MetricGraph, ParseError, SpaceError, family_from_obj,
                      family_to_obj, generate, load_space, save_space, space_from_obj)

EXIT_OK, EXIT_FAIL, EXIT_INPUT, EXIT_BUDGET = 0, 1, 2, 3
COLUMNS = ("suite", "instance", "location", "quantity", "expected", "actual", "tolerance", "verdict")
SUITES = ("modulus", "plans", "thm11", "falsify", "atlas", "bundle")


class InputError(Exception):
    pass


# ------------------------------------------------------------- expressions

_BINOPS = {ast.Add: operator.add, ast.Sub: operator.sub, ast.Mult: operator.mul}


def parse_polynomial(text: str, variables: tuple[str, ...]) -> Callable[[Mapping], object]:
    """Compile a polynomial in the given variables; '/' only by constants."""
    try:
        tree = ast.parse(text, mode="eval")
    except SyntaxError as exc:
        raise InputError(f"cannot parse expression {text!r}: {exc.msg}") from None

    def constant(node):
        try:
            return ev(node, None)
        except InputError:
            return None

    def ev(node, env):
        if isinstance(node, ast.Expression):
            return ev(node.body, env)
        if isinstance(node, ast.Constant) and type(node.value) in (int, float):
            return Fraction(repr(node.value)) if isinstance(node.value, float) else Fraction(node.value)
        if isinstance(node, ast.Name):
            if node.id not in variables:
                raise InputError(f"unknown variable {node.id!r} in {text!r}; expected one of {variables}")
            if env is None:
                raise InputError("not constant")
            return env[node.id]
        if isinstance(node, ast.UnaryOp) and isinstance(node.op, (ast.USub, ast.UAdd)):
            v = ev(node.operand, env)
            return -v if isinstance(node.op, ast.USub) else v
        if isinstance(node, ast.BinOp):
            if type(node.op) in _BINOPS:
                return _BINOPS[type(node.op)](ev(node.left, env), ev(node.right, env))
            if isinstance(node.op, ast.Pow):
                k = constant(node.right)
                if k is None or k.denominator != 1 or k < 0:
                    raise InputError(f"exponents must be nonnegative integer constants in {text!r}")
                return ev(node.left, env) ** int(k)
            if isinstance(node.op, ast.Div):
                d = constant(node.right)
                if d is None or d == 0:
                    raise InputError(f"division only by nonzero constants in {text!r}")
                return ev(node.left, env) / d
        raise InputError(f"unsupported syntax in {text!r}")

    def run(env):
        return ev(tree, env)

    run({v: Fraction(0) for v in variables})  # validate eagerly
    return run


def coordinate_names(graph: MetricGraph) -> tuple[str, ...]:
    if not graph.coords:
        return ()
    n = min(len(c) for c in graph.coords.values())
    return tuple("xyzw"[:n]) if n <= 4 else tuple(f"x{k}" for k in range(n))


def function_values(graph: MetricGraph, spec, exact: bool, where: str = "$") -> dict:
    """Vertex values from an expression string or {"values": ...} / {"expr": ...}."""
    if isinstance(spec, dict) and "expr" in spec:
        spec = spec["expr"]
    if isinstance(spec, str):
        names = coordinate_names(graph)
        fn = parse_polynomial(spec, names)
        out = {}
        for v in graph.vertices:
            if v not in graph.coords:
                raise InputError(f"{where}: vertex {v!r} has no coordinates for {spec!r}")
            env = {n: Fraction(c) for n, c in zip(names, graph.coords[v])}
            val = fn(env)
            out[v] = val if exact else float(val)
        return out
    if isinstance(spec, dict) and isinstance(spec.get("values"), dict):
        vals = spec["values"]
        missing = [v for v in graph.vertices if v not in vals]
        if missing:
            raise InputError(f"{where}.values: missing vertex {missing[0]!r}")
        out = {}
        for v in graph.vertices:
            x = vals[v]
            if isinstance(x, bool) or not isinstance(x, (int, float)) or not math.isfinite(x):
                raise InputError(f"{where}.values.{v}: must be a finite number")
            out[v] = Fraction(x) if exact else float(x)
        return out
    raise InputError(f"{where}: function needs an expression or a 'values' map")


# ------------------------------------------------------------------ reports

def _num(x):
    if x is None or isinstance(x, str):
        return x
    if isinstance(x, bool):
        return int(x)
    if isinstance(x, int) or (isinstance(x, Fraction) and x.denominator == 1):
        return int(x)
    return float(x)


@dataclass
class Report:
    rows: list[dict] = field(default_factory=list)
    details: dict = field(default_factory=dict)
    figures: dict = field(default_factory=dict)

    def add(self, suite, instance, location, quantity, expected, actual, tolerance, ok: bool):
        self.rows.append({
            "suite": suite, "instance": instance, "location": location, "quantity": quantity,
            "expected": _num(expected), "actual": _num(actual), "tolerance": _num(tolerance),
            "verdict": "pass" if ok else "fail",
        })

    @property
    def failed(self) -> list[dict]:
        return [r for r in self.rows if r["verdict"] != "pass"]

    def to_json(self) -> bytes:
        doc = {"summary": {"checks": len(self.rows), "failed": len(self.failed)},
               "rows": self.rows, "details": self.details}
        return (json.dumps(doc, indent=2, sort_keys=True, allow_nan=False, default=_num) + "\n").encode()

    def to_csv(self) -> bytes:
        buf = io.StringIO()
        w = csv.DictWriter(buf, fieldnames=COLUMNS, lineterminator="\n")
        w.writeheader()
        for r in self.rows:
            w.writerow({k: ("" if r[k] is None else repr(r[k]) if isinstance(r[k], float) else r[k])
                        for k in COLUMNS})
        return buf.getvalue().encode()

    def to_svg(self) -> bytes:
        import matplotlib
        matplotlib.use("Agg")
        import matplotlib.pyplot as plt
        from matplotlib.collections import LineCollection

        plt.rcParams["svg.hashsalt"] = "modgrad"
        panels = sorted(self.figures.items())
        fig, axes = plt.subplots(1, max(1, len(panels)), figsize=(4.5 * max(1, len(panels)), 4), squeeze=False)
        for ax, (title, fig_data) in zip(axes[0], panels):
            kind = fig_data["kind"]
            if kind == "edges":
                segs, vals = fig_data["segments"], fig_data["values"]
                if segs:
                    lc = LineCollection(segs, array=vals, cmap="viridis", linewidths=3)
                    ax.add_collection(lc)
                    ax.autoscale()
                    fig.colorbar(lc, ax=ax)
                else:
                    ax.bar(range(len(vals)), vals)
            else:
                pts, vals = fig_data["points"], fig_data["values"]
                sc = ax.scatter([p[0] for p in pts], [p[1] for p in pts], c=vals, cmap="tab10", vmin=0, vmax=9)
                fig.colorbar(sc, ax=ax)
            ax.set_title(title)
            ax.set_aspect("equal", adjustable="datalim")
        if not panels:
            axes[0][0].set_axis_off()
        buf = io.BytesIO()
        fig.savefig(buf, format="svg", metadata={"Date": None, "Creator": "modgrad"})
        plt.close(fig)
        return buf.getvalue()

    def render(self, fmt: str) -> bytes:
        return {"json": self.to_json, "csv": self.to_csv, "svg": self.to_svg}[fmt]()


def edge_figure(graph: MetricGraph, values: Mapping[str, float]) -> dict:
    segs, vals = [], []
    for eid in graph.edge_ids:
        e = graph.edges[eid]
        if e.u in graph.coords and e.v in graph.coords:
            segs.append([tuple(graph.coords[e.u][:2]), tuple(graph.coords[e.v][:2])])
        vals.append(min(float(values[eid]), 1e6))
    return {"kind": "edges", "segments": segs if len(segs) == len(vals) else [], "values": vals}


# ------------------------------------------------------------------- suites

def _rel(a, b):
    return abs(float(a) - float(b)) / max(1.0, abs(float(b)))


def suite_modulus(rep: Report, graph, family, exps, exact, closed_form=None, name="space"):
    from .modulus import mod_p
    sols = {}
    for p in exps:
        sol = mod_p(graph, family, p, exact=exact and p in (1, 2))
        sols[p] = sol
        inst = f"{name} p={p:g}"
        gap = _rel(sol.duality_gap, 0) / max(1.0, abs(float(sol.value)))
        rep.add("modulus", inst, "*", "duality_gap_rel", 0, gap, 1e-6, gap <= 1e-6)
        rep.add("modulus", inst, "*", "kkt_residual", 0, sol.kkt_residual, 1e-6, float(sol.kkt_residual) <= 1e-6)
        if closed_form is not None:
            want = closed_form(p)
            rep.add("modulus", inst, "*", "value", want, sol.value, 1e-8, _rel(sol.value, want) <= 1e-8)
        else:
            rep.add("modulus", inst, "*", "value", None, sol.value, None, True)
        rep.details.setdefault("modulus", {})[f"{p:g}"] = sol.to_json()
    if sols:
        first = sols[exps[0]]
        rep.figures[f"rho* p={exps[0]:g}"] = edge_figure(graph, first.density)
    return sols


def suite_plans(rep: Report, graph, sols):
    from .plans import PlanError, dual_plan
    for p, sol in sols.items():
        inst = f"p={p:g}"
        try:
            plan, cert = dual_plan(sol, graph)
        except PlanError as exc:
            rep.add("plans", inst, "*", "dual_plan", None, str(exc), None, sol.zero)
            continue
        rep.add("plans", inst, "*", "plan_mass", 1, plan.mass(), 1e-9, _rel(plan.mass(), 1) <= 1e-9)
        rep.add("plans", inst, "*", "stationarity", 0, cert.kkt_residual, 1e-6, float(cert.kkt_residual) <= 1e-6)
        rep.add("plans", inst, "*", "absolutely_continuous", 1, int(cert.absolutely_continuous), 0,
                cert.absolutely_continuous)


def suite_thm11(rep: Report, graph, funcs, p, exact, eps_list):
    from .gradient import epsilon_productive_set, representing_plan
    for fname, f in funcs.items():
        rp = representing_plan(graph, f, p, exact=exact)
        rep.add("thm11", fname, "*", "absolutely_continuous", 1, int(rp.absolutely_continuous), 0,
                rp.absolutely_continuous)
        for e in rp.support:
            got = rp.esssup.get(e)
            rep.add("thm11", fname, e, "esssup_ratio", rp.gradient[e], got, 0 if exact else 1e-12,
                    got is not None and (got == rp.gradient[e] if exact else _rel(got, rp.gradient[e]) <= 1e-12))
        for eps in eps_list:
            eps_v = Fraction(repr(eps)) if exact else eps
            ps = epsilon_productive_set(graph, f, rp.plan, eps_v)
            for x, ok in ps.verdicts.items():
                rep.add("thm11", fname, x, f"pi_x(B) eps={eps:g}", None, ps.mass[x], 0, ok)


def suite_falsify(rep: Report, graph, funcs, p, rng: random.Random):
    from .gradient import minimal_weak_gradient, violating_plan
    for fname, f in funcs.items():
        gf = minimal_weak_gradient(graph, f, p)
        pos = [e for e in graph.edge_ids if gf[e] > 0]
        if pos:
            e = rng.choice(pos)
            g = dict(gf.values)
            g[e] = g[e] * (1 - 1e-3) if not isinstance(g[e], Fraction) else g[e] * Fraction(999, 1000)
            found = violating_plan(graph, f, g, p)
            rep.add("falsify", fname, e, "violator_found", 1, int(found is not None), 0, found is not None)
        clean = violating_plan(graph, f, dict(gf.values), p)
        rep.add("falsify", fname, "*", "violator_for_g_f", 0, int(clean is not None), 0, clean is None)


def suite_atlas(rep: Report, graph, p, pool, structure, expect_dims=None):
    from .charts import build_atlas
    atlas = build_atlas(graph, p, pool, structure)
    inst = f"p={p:g}"
    for i, c in enumerate(atlas.charts):
        rep.add("atlas", inst, f"chart{i}", "dimension", None, c.dim, 0, True)
        for x in c.U:
            if c.dim:
                rep.add("atlas", inst, x, "independence_index", None, c.index[x], 0, c.index[x] > 0)
    if expect_dims is not None:
        rep.add("atlas", inst, "*", "dims", str(list(expect_dims)), str(atlas.dims), 0,
                list(expect_dims) == atlas.dims)
    rep.details.setdefault("atlas", {})[f"{p:g}"] = {"dims": atlas.dims, "warnings": atlas.warnings}
    if graph.coords:
        pts, vals = [], []
        for x in graph.vertices:
            hit = atlas.chart_at(x)
            pts.append(tuple(graph.coords[x][:2]) if len(graph.coords[x]) > 1 else (graph.coords[x][0], 0.0))
            vals.append(hit[1].dim if hit else 0)
        rep.figures["chart dimension"] = {"kind": "points", "points": pts, "values": vals}
    return atlas


def suite_bundle(rep: Report, graph, atlases, funcs, checks=("cocycle", "norms", "pq", "cheeger")):
    from .bundle import cheeger_compare, composition_error, norm_identity, pq_map, transitions
    exps = sorted(atlases)
    atlas = atlases[exps[0]]
    if "cocycle" in checks:
        tb = transitions(graph, atlas)
        err = tb.cocycle.max_error
        rep.add("bundle", "atlas", "*", "cocycle_error", 0, err, 1e-12, err <= 1e-12)
        iso = all(all(t.isometry.values()) for t in tb.maps.values())
        rep.add("bundle", "atlas", "*", "transition_isometry", 1, int(iso), 0, iso)
    for fname, f in funcs.items():
        if "norms" in checks:
            for p in exps:
                ni = norm_identity(graph, f, atlases[p], p)
                rep.add("bundle", fname, "*", f"norm_identity p={p:g}", ni.gradient_norm, ni.section_norm,
                        0, ni.ok)
        if "cheeger" in checks:
            cr = cheeger_compare(graph, f, atlas)
            for x, pt in cr.points.items():
                rep.add("bundle", fname, x, "lip_vs_weak", pt.weak, pt.lip, 0, pt.lip >= pt.weak)
    if "pq" in checks and len(exps) >= 2:
        fl = list(funcs.values())
        maps = {}
        for a, b in zip(exps, exps[1:]):
            maps[a, b] = pq_map(graph, atlases[a], atlases[b], fl)
            bc = maps[a, b]
            rep.add("bundle", f"pi_{a:g},{b:g}", "*", "lipschitz_surjective_natural", 1, int(bc.ok), 0, bc.ok)
        for a, s, b in zip(exps, exps[1:], exps[2:]):
            full = pq_map(graph, atlases[a], atlases[b])
            err = composition_error(maps[a, s], maps[s, b], full)
            rep.add("bundle", f"pi_{a:g},{b:g}", "*", "composition_error", 0, err, 1e-12, err <= 1e-12)


# ------------------------------------------------------------------- config

@dataclass
class ExperimentConfig:
    graph: MetricGraph
    family: object
    exponents: list[float]
    functions: dict
    suites: list[str]
    outputs: dict[str, str]
    exact: bool = False
    seed: int = 0
    eps: list[float] = field(default_factory=lambda: [0.1])
    pool: dict | None = None
    structure: str = "p"
    expect_dims: list[int] | None = None
    closed_form: Callable | None = None
    name: str = "space"


def _read_json(path, what) -> object:
    p = Path(path)
    if not p.is_file():
        raise InputError(f"{what} file {str(path)!r} does not exist")
    try:
        return json.loads(p.read_text())
    except json.JSONDecodeError as exc:
        raise ParseError(str(path), f"invalid JSON: {exc}") from None


def load_config(doc, base: Path = Path(".")) -> ExperimentConfig:
    if not isinstance(doc, dict):
        raise ParseError("$", "config must be an object")
    space = doc.get("space")
    closed_form = None
    name = "space"
    if isinstance(space, dict) and "generator" in space:
        kind = space["generator"]
        args = space.get("args", {})
        if kind not in GENERATORS:
            raise ParseError("$.space.generator", f"unknown generator {kind!r}")
        try:
            graph, family = generate(kind, **args)
        except TypeError as exc:
            raise ParseError("$.space.args", str(exc)) from None
        name = f"{kind}({','.join(f'{k}={v}' for k, v in sorted(args.items()))})"
        if kind == "parallel_paths":
            k, m = args.get("k", 1), args.get("m", 1)
            closed_form = lambda p, k=k, m=m: k * m ** (1 - p)  # noqa: E731
    elif isinstance(space, dict) and "file" in space:
        graph = space_from_obj(_read_json(base / space["file"], "space"))
        family = None
        name = Path(space["file"]).stem
    else:
        raise ParseError("$.space", "needs 'generator' or 'file'")
    if "family" in doc:
        fam = doc["family"]
        family = family_from_obj(_read_json(base / fam, "family") if isinstance(fam, str) else fam, graph)
    exps = doc.get("p", [2])
    exps = exps if isinstance(exps, list) else [exps]
    for i, p in enumerate(exps):
        if isinstance(p, bool) or not isinstance(p, (int, float)) or not p >= 1:
            raise ParseError(f"$.p[{i}]", "exponents must be numbers >= 1")
    suites = doc.get("suites", list(SUITES))
    for s in suites:
        if s not in SUITES:
            raise ParseError("$.suites", f"unknown suite {s!r}; known: {', '.join(SUITES)}")
    seed = doc.get("seed", 0)
    if not isinstance(seed, int):
        raise ParseError("$.seed", "must be an integer")
    exact = bool(doc.get("exact", False))
    rng = random.Random(seed)
    fspec = doc.get("functions")
    if fspec is None:
        count = int(doc.get("random_functions", 3))
        funcs = {f"random{i}": {v: (Fraction(rng.randint(-9, 9)) if exact else float(rng.randint(-9, 9)))
                                for v in graph.vertices} for i in range(count)}
    elif isinstance(fspec, dict):
        funcs = {k: function_values(graph, v, exact, f"$.functions.{k}") for k, v in sorted(fspec.items())}
    else:
        raise ParseError("$.functions", "must be an object")
    pool = doc.get("pool")
    if pool is not None:
        if not isinstance(pool, dict):
            raise ParseError("$.pool", "must be an object")
        pool = {k: function_values(graph, v, True, f"$.pool.{k}") for k, v in pool.items()}
    outputs = doc.get("output", {})
    if not isinstance(outputs, dict) or any(k not in ("json", "csv", "svg") for k in outputs):
        raise ParseError("$.output", "keys must be among json, csv, svg")
    eps = doc.get("eps", [0.1])
    eps = eps if isinstance(eps, list) else [eps]
    return ExperimentConfig(graph, family, [float(p) for p in exps], funcs, list(suites),
                            {k: str(base / v) for k, v in outputs.items()}, exact, seed,
                            [float(e) for e in eps], pool, doc.get("structure", "p"),
                            doc.get("expect_dims"), closed_form, name)


def run(cfg: ExperimentConfig) -> Report:
    """Run the requested suites in dependency order."""
    rep = Report()
    rng = random.Random(cfg.seed)
    order = [s for s in SUITES if s in cfg.suites]
    sols, atlases = {}, {}
    stage = "setup"
    try:
        for stage in order:
            if stage in ("modulus", "plans") and not sols:
                if cfg.family is None:
                    raise InputError("modulus suites need a curve family")
                sols = suite_modulus(rep, cfg.graph, cfg.family, cfg.exponents, cfg.exact,
                                     cfg.closed_form, cfg.name)
            if stage == "plans":
                suite_plans(rep, cfg.graph, sols)
            elif stage == "thm11":
                suite_thm11(rep, cfg.graph, cfg.functions, cfg.exponents[0], cfg.exact, cfg.eps)
            elif stage == "falsify":
                suite_falsify(rep, cfg.graph, cfg.functions, cfg.exponents[0], rng)
            elif stage in ("atlas", "bundle"):
                if not atlases:
                    for p in cfg.exponents:
                        expect = cfg.expect_dims if stage == "atlas" or "atlas" in order else None
                        atlases[p] = suite_atlas(rep, cfg.graph, p, cfg.pool, cfg.structure, expect)
                if stage == "bundle":
                    suite_bundle(rep, cfg.graph, atlases, cfg.functions)
    except BudgetExceeded as exc:
        raise BudgetExceeded(f"stage {stage}: {exc}", exc.partial) from None
    except (SpaceError, InputError) as exc:
        raise InputError(f"stage {stage}: {exc}") from None
    return rep


# ---------------------------------------------------------------------- CLI

def _emit(data: bytes, path: str | None):
    if path:
        Path(path).write_bytes(data)
    else:
        sys.stdout.buffer.write(data)


def _guard(fn):
    """Translate library errors into the exit-code contract."""
    def wrapper(*args, **kwargs):
        try:
            return fn(*args, **kwargs)
        except BudgetExceeded as exc:
            click.echo(f"budget exhausted: {exc}", err=True)
            sys.exit(EXIT_BUDGET)
        except (ParseError, SpaceError, InputError) as exc:
            click.echo(f"input error: {exc}", err=True)
            sys.exit(EXIT_INPUT)
    wrapper.__name__ = fn.__name__
    wrapper.__doc__ = fn.__doc__
    return wrapper


def _finish(rep: Report, path: str | None, fmt: str = "json"):
    _emit(rep.render(fmt), path)
    if rep.failed:
        for r in rep.failed[:10]:
            click.echo(f"FAIL {r['suite']} {r['instance']} {r['location']} {r['quantity']}: "
                       f"expected {r['expected']} got {r['actual']}", err=True)
        sys.exit(EXIT_FAIL)


def _load_space_file(path) -> MetricGraph:
    return load_space(Path(path).read_bytes())


def _check_threads():
    val = os.environ.get("MODGRAD_THREADS")
    if val is not None and not (val.isdigit() and int(val) > 0):
        click.echo("input error: MODGRAD_THREADS must be a positive integer", err=True)
        sys.exit(EXIT_INPUT)


@click.group()
@click.version_option(package_name="artifact", prog_name="modgrad")
def main():
    """Modulus, weak gradients and differentiable structure on metric graphs.

    MODGRAD_THREADS caps the threads of numerical backends.
    """
    _check_threads()


@main.command()
@click.argument("kind", type=click.Choice(sorted(GENERATORS)))
@click.option("--nx", type=int, default=4, show_default=True, help="grid/rug: vertices per row")
@click.option("--ny", type=int, default=4, show_default=True, help="grid/rug: vertices per column")
@click.option("--h", type=float, default=1.0, show_default=True, help="grid/rug: edge length")
@click.option("--k", type=int, default=1, show_default=True, help="parallel_paths: number of paths")
@click.option("--m", type=int, default=1, show_default=True, help="parallel_paths: edges per path")
@click.option("--level", type=int, default=1, show_default=True, help="carpet: refinement level")
@click.option("-o", "--output", type=click.Path(dir_okay=False), help="space JSON (default stdout)")
@click.option("--family-out", type=click.Path(dir_okay=False), help="write the default curve family here")
@_guard
def gen(kind, nx, ny, h, k, m, level, output, family_out):
    """Generate a model space."""
    args = {"grid": (nx, ny, h), "rug": (nx, ny, h), "parallel_paths": (k, m), "carpet": (level,)}[kind]
    graph, family = generate(kind, *args)
    _emit(save_space(graph) + b"\n", output)
    if family_out:
        Path(family_out).write_text(json.dumps(family_to_obj(family), sort_keys=True) + "\n")


@main.command()
@click.option("--space", "space_path", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--family", "family_path", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--p", "p", type=float, default=2.0, show_default=True, help="exponent >= 1")
@click.option("--exact", is_flag=True, help="rational arithmetic (p in {1, 2})")
@click.option("--report", type=click.Path(dir_okay=False), help="report JSON (default stdout)")
@click.option("--svg", type=click.Path(dir_okay=False), help="also write a heatmap of rho*")
@_guard
def modulus(space_path, family_path, p, exact, report, svg):
    """Compute Mod_p of a curve family with its dual certificate."""
    from .modulus import mod_p
    if p < 1:
        raise InputError("--p must be >= 1")
    graph = _load_space_file(space_path)
    family = family_from_obj(_read_json(family_path, "family"), graph)
    try:
        sol = mod_p(graph, family, p, exact=exact)
    except ValueError as exc:
        if isinstance(exc, SpaceError):
            raise
        raise InputError(str(exc)) from None
    rep = Report()
    gap = abs(float(sol.duality_gap)) / max(1.0, abs(float(sol.value)))
    rep.add("modulus", Path(space_path).stem, "*", "duality_gap_rel", 0, gap, 1e-6, gap <= 1e-6)
    rep.add("modulus", Path(space_path).stem, "*", "kkt_residual", 0, sol.kkt_residual, 1e-6,
            float(sol.kkt_residual) <= 1e-6)
    rep.details["modulus"] = sol.to_json()
    rep.figures[f"rho* p={p:g}"] = edge_figure(graph, sol.density)
    if svg:
        Path(svg).write_bytes(rep.to_svg())
    _finish(rep, report)


@main.command()
@click.option("--space", "space_path", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--f", "f_path", required=True, type=click.Path(exists=True, dir_okay=False),
              help='{"values": {...}} or {"expr": "..."}')
@click.option("--p", "p", type=float, default=2.0, show_default=True)
@click.option("--verify-thm11", is_flag=True, help="build and verify a representing plan")
@click.option("--eps", type=float, multiple=True, help="productive-set tolerance (repeatable)")
@click.option("--exact", is_flag=True, help="rational arithmetic (p in {1, 2})")
@click.option("--report", type=click.Path(dir_okay=False))
@_guard
def gradient(space_path, f_path, p, verify_thm11, eps, exact, report):
    """Minimal weak upper gradient of f, optionally with the curvewise identity check."""
    from .gradient import minimal_weak_gradient
    from .mmspace import STAR
    if exact and p not in (1, 2):
        raise InputError("--exact needs p in {1, 2}")
    graph = _load_space_file(space_path)
    f = function_values(graph, _read_json(f_path, "function"), exact)
    rep = Report()
    ge = minimal_weak_gradient(graph, f, p, exact=exact)
    gs = minimal_weak_gradient(graph, f, p, STAR, exact)
    rep.details["g_f"] = {"edge": {k: float(v) for k, v in ge.values.items()},
                          "star": {k: float(v) for k, v in gs.values.items()}}
    if verify_thm11:
        suite_thm11(rep, graph, {Path(f_path).stem: f}, p, exact, list(eps) or [0.1])
    _finish(rep, report)


@main.group(invoke_without_command=True)
@click.option("--space", "space_path", type=click.Path(exists=True, dir_okay=False))
@click.option("--pool", "pool_path", type=click.Path(exists=True, dir_okay=False),
              help="candidate coordinate functions; default: generator coordinates")
@click.option("--p", "p", type=float, default=2.0, show_default=True)
@click.option("--structure", type=click.Choice(["p", "cheeger"]), default="p", show_default=True)
@click.option("--atlas", "atlas_path", type=click.Path(dir_okay=False), help="atlas JSON (default stdout)")
@click.pass_context
@_guard
def chart(ctx, space_path, pool_path, p, structure, atlas_path):
    """Build a maximal atlas from a candidate pool."""
    if ctx.invoked_subcommand is not None:
        return
    from .charts import atlas_to_json, build_atlas
    if space_path is None:
        raise click.UsageError("--space is required")
    graph = _load_space_file(space_path)
    pool = None
    if pool_path:
        doc = _read_json(pool_path, "pool")
        if not isinstance(doc, dict):
            raise ParseError("$", "pool must map names to functions")
        pool = {k: function_values(graph, v, True, f"$.{k}") for k, v in sorted(doc.items())}
    atlas = build_atlas(graph, p, pool, structure)
    for w in atlas.warnings:
        click.echo(f"warning: {w}", err=True)
    _emit((json.dumps(atlas_to_json(atlas, graph), sort_keys=True, indent=1) + "\n").encode(), atlas_path)


@chart.command("diff")
@click.option("--f", "f_path", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--chart", "chart_path", required=True, type=click.Path(exists=True, dir_okay=False),
              help="atlas JSON written by `modgrad chart`")
@click.option("--report", type=click.Path(dir_okay=False))
@_guard
def chart_diff(f_path, chart_path, report):
    """Chebyshev differential of f in every chart, with residuals."""
    from .charts import atlas_from_json, differential
    graph, atlas = atlas_from_json(_read_json(chart_path, "chart"))
    f = function_values(graph, _read_json(f_path, "function"), True)
    rep = Report()
    out = {}
    for i, c in enumerate(atlas.charts):
        d = differential(graph, f, c)
        for x in c.U:
            out[x] = {"chart": i, "df": [float(a) for a in d[x]], "residual": float(d.residual[x]),
                      "norm": float(d.norm[x]), "g_f": float(d.gradient[x])}
            if d.residual[x] == 0:
                rep.add("chart", f"chart{i}", x, "norm_vs_g_f", d.gradient[x], d.norm[x], 0,
                        d.norm[x] == d.gradient[x])
            else:
                rep.add("chart", f"chart{i}", x, "residual", 0, d.residual[x], None, True)
    rep.details["differential"] = out
    _finish(rep, report)


@main.command()
@click.option("--atlas", "atlas_path", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--check", "checks", type=click.Choice(["cocycle", "norms", "pq", "cheeger"]), multiple=True,
              required=True, help="repeatable")
@click.option("--f", "f_paths", type=click.Path(exists=True, dir_okay=False), multiple=True,
              help="functions for norms/cheeger/pq; default: the pool coordinates")
@click.option("--q", "qs", type=float, multiple=True, help="extra exponents for --check pq")
@click.option("--report", type=click.Path(dir_okay=False))
@_guard
def bundle(atlas_path, checks, f_paths, qs, report):
    """Verify bundle structure: transitions, norms, p/q maps, Cheeger comparison."""
    from .charts import atlas_from_json, build_atlas
    graph, atlas = atlas_from_json(_read_json(atlas_path, "atlas"))
    funcs = {Path(fp).stem: function_values(graph, _read_json(fp, "function"), True) for fp in f_paths}
    if not funcs:
        funcs = {name: dict(vals) for name, vals in sorted(atlas.pool.items())}
    atlases = {atlas.p: atlas}
    for q in qs:
        if q < 1:
            raise InputError("--q must be >= 1")
        atlases[q] = build_atlas(graph, q, atlas.pool or None, atlas.structure)
    if "pq" in checks and len(atlases) < 2:
        raise InputError("--check pq needs at least one --q")
    rep = Report()
    suite_bundle(rep, graph, atlases, funcs, checks)
    _finish(rep, report)


@main.command("run")
@click.option("--config", "config_path", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--format", "fmt", type=click.Choice(["json", "csv", "svg"]), default="json", show_default=True,
              help="stdout format when the config names no outputs")
@_guard
def run_cmd(config_path, fmt):
    """Run an experiment config through the verification suites."""
    cfg = load_config(_read_json(config_path, "config"), Path(config_path).parent)
    rep = run(cfg)
    if cfg.outputs:
        for kind, path in sorted(cfg.outputs.items()):
            Path(path).write_bytes(rep.render(kind))
        _finish(rep, cfg.outputs.get("json"), "json") if "json" in cfg.outputs else _finish(rep, os.devnull)
    else:
        _finish(rep, None, fmt)


if __name__ == "__main__":
    main()
