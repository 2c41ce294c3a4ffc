"""Command line entry point: ``expflow <subcommand> [options] INPUT``.

Exit codes: 0 success, 1 contract or verification failure, 2 input error.
"""
from __future__ import annotations

import math
import sys
import time
from pathlib import Path

import click
import numpy as np

from . import io
from .cutmatching import CutMatchingConfig, ExactMatchingOracle, InvariantError
from .exact import FlowInstance, brute_near_expander, exact_max_flow, min_congestion_route
from .grafting import ExactGraftingOracle, expander_decompose
from .graph import CapGraph, StructuralError
from .hierarchy import DemandError, Hierarchy, HierarchyConfig, HierarchyError, HierarchyGraftingOracle
from .paths import DecompositionError
from .sherman import BackendB, ContractError, HierarchyMatchingOracle, Unconverged, approx_max_flow

CONTRACT_ERRORS = (InvariantError, ContractError, HierarchyError, Unconverged, AssertionError)
INPUT_ERRORS = (io.InputError, StructuralError, DemandError, DecompositionError)


class VerifyFailure(Exception):
    """A --verify check disagreed with the reference computation."""


def _lg(G: CapGraph) -> int:
    return max(1, math.ceil(math.log2(max(2.0, G.n * G.W))))


def _params(G: CapGraph, o: dict) -> dict:
    lg = _lg(G)
    return {
        "phi": o["phi"] if o["phi"] is not None else 1 / (16 * lg),
        "psi": o["psi"],
        "eps1": o["eps1"] if o["eps1"] is not None else 1 / (4 * lg * lg),
        "eps2": o["eps2"],
        "T": o["T"],
        "x_max": o["x_max"],
        "seed": o["seed"],
    }


def _stats(G: CapGraph) -> dict:
    return {"n": G.n, "m": G.m, "W": G.W, "total_capacity": float(G.cap.sum()),
            "connected_components": int(np.unique(G.components()).size) if G.n else 0}


def _one_based(blocks) -> list[list[int]]:
    return sorted(sorted(int(v) + 1 for v in B) for B in blocks)


def _hier_config(p: dict, backend: str) -> HierarchyConfig:
    return HierarchyConfig(phi=p["phi"], psi=p["psi"], eps1=p["eps1"], eps2=p["eps2"], T=p["T"],
                           x_max=p["x_max"], seed=p["seed"],
                           oracles="exact" if backend == "exact" else "flow", flow_backend=backend)


def _sample_ratio(H: Hierarchy, G: CapGraph, trials: int, seed: int) -> float:
    """Worst routed congestion over optimum for random balanced demands."""
    rng = np.random.default_rng(seed)
    worst = 0.0
    lab = G.components()
    for c in np.unique(lab):
        comp = np.flatnonzero(lab == c)
        if comp.size < 2:
            continue
        for _ in range(trials):
            b = np.zeros(G.n)
            b[comp] = rng.standard_normal(comp.size)
            b[comp] -= b[comp].mean()
            k = H.estimate_congestion(b)
            if k <= 0:
                continue
            b /= k
            opt = min_congestion_route(G, b).congestion
            fl, _ = H.route_full(b)
            worst = max(worst, fl.congestion() / max(opt, 1e-300))
    return worst


# -- subcommand bodies ------------------------------------------------------

def run_decompose(prob: io.Problem, o: dict) -> dict:
    G = prob.graph
    p = _params(G, o)
    d = prob.d if prob.d is not None else G.deg.copy()
    cfg = CutMatchingConfig(phi=p["phi"], eps1=p["eps1"], T=p["T"], x_max=p["x_max"], seed=p["seed"])
    if o["backend"] == "exact":
        o1, o2 = ExactMatchingOracle(), ExactGraftingOracle()
    else:
        base = Hierarchy(G, _hier_config(p, "sherman"))
        o1 = HierarchyMatchingOracle(base, backend=BackendB(seed=p["seed"]))
        o2 = HierarchyGraftingOracle(base, backend=BackendB(seed=p["seed"]))
    fd = expander_decompose(G, d, cfg, psi=p["psi"], eps2=p["eps2"], oracle1=o1, oracle2=o2)
    tr = fd.transcript
    stacked = sum((np.abs(r.flow) for r in tr.rounds), np.zeros(G.m))
    cong = {
        "matching_stacked": float(np.max(stacked / G.cap, initial=0.0)) if G.m else 0.0,
        "grafting": float(np.max(np.abs(fd.grafting_flow) / G.cap, initial=0.0)) if G.m else 0.0,
        "boundary": float(np.max(np.abs(fd.boundary_flow) / G.cap, initial=0.0)) if G.m else 0.0,
    }
    checks = {}
    if o["verify"] == "full-oracle":
        ok = True
        for A in fd.certified:
            if A.size <= 16:
                good = brute_near_expander(G, d, A, p["phi"] / (64 * max(1.0, math.log2(G.n)) ** 2))
                ok &= bool(good)
        checks["certified_near_expanders"] = ok
        if not ok:
            raise VerifyFailure("a certified cluster failed the brute-force near-expander check")
    return {
        "config": p,
        "clusters": _one_based(fd.certified),
        "discarded": _one_based(fd.discarded),
        "certificates": {
            "cut_capacity": fd.certificates["cut_capacity"],
            "deleted_demand": fd.certificates["deleted_demand"],
            "discarded_demand": fd.certificates["discarded_demand"],
            "congestions": cong,
            "quality_ratio": None,
        },
        "checks": checks,
        "work": {"rounds": tr.rounds_run},
    }


def run_hierarchy(prob: io.Problem, o: dict) -> dict:
    G = prob.graph
    p = _params(G, o)
    H = Hierarchy(G, _hier_config(p, o["backend"])).build()
    ratio = None
    checks = {}
    if o["verify"] == "full-oracle":
        ratio = _sample_ratio(H, G, 5, p["seed"])
        checks["quality_within_bound"] = ratio <= H.quality
        if not checks["quality_within_bound"]:
            raise VerifyFailure(f"routing ratio {ratio:g} exceeds quality {H.quality:g}")
    levels = []
    for lv in H.levels:
        levels.append({"i": lv.i, "V": sorted(int(v) + 1 for v in np.flatnonzero(lv.V)),
                       "blocks": _one_based(lv.Pbar.blocks), "delta": lv.delta,
                       "alpha": lv.alpha, "beta": lv.beta})
    return {
        "config": p,
        "levels": levels,
        "certificates": {
            "cut_capacity": H.levels[-1].delta,
            "deleted_demand": float(sum(lv.stats.get("deleted_demand", 0.0) for lv in H.levels)),
            "congestions": {"alpha": H.alpha, "beta": H.beta, "quality": H.quality},
            "quality_ratio": ratio,
        },
        "complete": H.complete,
        "checks": checks,
        "work": {"levels": H.L, "family_sets": len(H.family.sets)},
    }


def run_maxflow(prob: io.Problem, o: dict) -> dict:
    G = prob.graph
    p = _params(G, o)
    eps = o["eps"]
    if prob.b is not None:
        b = prob.b
    else:
        b = np.zeros(G.n)
        cap = min(G.deg[0], G.deg[G.n - 1]) if G.n > 1 else 0.0
        b[0], b[G.n - 1] = cap, -cap
    hier = None
    backend = "exact"
    if o["backend"] == "sherman":
        hier = Hierarchy(G, _hier_config(p, "exact")).build()
        # the almost-route slack is eps / 4Q, far below what 20000 steps reach
        backend = BackendB(seed=p["seed"], max_iter=10**6)
    res = approx_max_flow(G, b, eps, hier, backend)
    checks = {}
    ratio = None
    if o["verify"] != "off":
        dem = res.flow.demand()
        ok = bool(res.flow.congestion() <= 1 + 1e-9
                  and np.all(dem >= np.minimum(b, 0) - 1e-7) and np.all(dem <= np.maximum(b, 0) + 1e-7))
        checks["feasible"] = ok
        if not ok:
            raise VerifyFailure("returned flow is infeasible or overshoots b")
    if o["verify"] == "full-oracle":
        ex = exact_max_flow(FlowInstance(G, np.maximum(b, 0), np.maximum(-b, 0))).value
        ratio = res.value / ex if ex > 0 else 1.0
        checks["within_eps"] = ratio >= 1 - eps - 1e-9
        if not checks["within_eps"]:
            raise VerifyFailure(f"value ratio {ratio:g} below 1 - eps")
    return {
        "config": {**p, "eps": eps},
        "value": res.value,
        "upper_bound": res.upper,
        "flow": [[int(u) + 1, int(v) + 1, float(x)] for u, v, x in zip(G.tail, G.head, res.flow.f) if x != 0],
        "certificates": {
            "cut_capacity": res.upper,
            "deleted_demand": 0.0,
            "congestions": {"flow": res.flow.congestion()},
            "quality_ratio": ratio,
        },
        "checks": checks,
        "work": {"almost_route_calls": res.calls},
    }


def run_verify(prob: io.Problem, o: dict) -> dict:
    """Decomposition and hierarchy with every check enabled; fails with exit 1."""
    o = {**o, "verify": "full-oracle" if o["verify"] == "full-oracle" else "invariants"}
    dec = run_decompose(prob, o)
    hie = run_hierarchy(prob, o)
    return {
        "config": dec["config"],
        "decompose": {k: dec[k] for k in ("clusters", "certificates", "checks")},
        "hierarchy": {k: hie[k] for k in ("levels", "certificates", "checks", "complete")},
        "certificates": hie["certificates"],
        "checks": {**dec["checks"], **hie["checks"], "invariants": True},
    }


def run_bench(prob: io.Problem | None, o: dict) -> dict:
    from . import bench, kernels
    sizes = (prob.graph.n,) if prob is not None else (50, 200, 800)
    rows = bench.run(sizes, seed=o["seed"])
    return {"config": {"seed": o["seed"], "kernels": kernels.BACKEND}, "rows": rows,
            "certificates": {"cut_capacity": None, "deleted_demand": None, "congestions": {}, "quality_ratio": None}}


RUNNERS = {"decompose": run_decompose, "hierarchy": run_hierarchy, "maxflow": run_maxflow,
           "verify": run_verify, "bench": run_bench}


# -- click plumbing ---------------------------------------------------------

def _common(f):
    opts = [
        click.option("--threads", type=click.IntRange(min=0), default=0, show_default=True,
                     help="Worker threads (0 = serial)."),
        click.option("--seed", type=int, default=0, show_default=True),
        click.option("--eps", type=click.FloatRange(0, 1, min_open=True, max_open=True), default=0.1,
                     show_default=True, help="Max-flow accuracy."),
        click.option("--phi", type=click.FloatRange(0, min_open=True), default=None),
        click.option("--psi", type=click.FloatRange(0, min_open=True), default=1 / 64, show_default=True),
        click.option("--eps1", type=click.FloatRange(0, 0.5, min_open=True, max_open=True), default=None),
        click.option("--eps2", type=click.FloatRange(0, 0.1, min_open=True), default=1 / 16, show_default=True),
        click.option("--T", "T", type=click.IntRange(min=1), default=None),
        click.option("--x-max", "x_max", type=click.FloatRange(0, min_open=True), default=None),
        click.option("--backend", type=click.Choice(["exact", "sherman"]), default="exact", show_default=True),
        click.option("--output", "-o", type=click.Path(dir_okay=False, writable=True), default=None),
        click.option("--verify", type=click.Choice(["off", "invariants", "full-oracle"]), default="invariants",
                     show_default=True),
        click.option("--timing/--no-timing", default=False,
                     help="Add wall-clock seconds to the report (breaks byte-identity)."),
    ]
    for opt in reversed(opts):
        f = opt(f)
    return f


def _execute(name: str, input_path: str | None, opts: dict) -> None:
    t0 = time.perf_counter()
    if input_path is None and name != "bench":
        raise click.UsageError("missing INPUT")
    prob = io.read_problem(input_path) if input_path is not None else None
    body = RUNNERS[name](prob, opts)
    report = {"command": name}
    if prob is not None:
        report["graph"] = _stats(prob.graph)
    report.update(body)
    report["config"] = {**report.get("config", {}), "threads": opts["threads"], "backend": opts["backend"],
                        "verify": opts["verify"]}
    report["timing"] = dict(body.get("work", {}))
    report.pop("work", None)
    if opts["timing"] or name == "bench":
        report["timing"]["wall_s"] = time.perf_counter() - t0
    text = io.dumps(report)
    if opts["output"]:
        Path(opts["output"]).write_text(text)
    else:
        click.echo(text, nl=False)


@click.group()
def cli() -> None:
    """Expander decompositions, congestion-approximator hierarchies and max flow."""


def _make(name: str, doc: str, optional_input: bool = False):
    @cli.command(name=name, help=doc)
    @click.argument("input_path", metavar="INPUT", required=not optional_input,
                    type=click.Path(dir_okay=False))
    @_common
    def cmd(input_path, **opts):
        _execute(name, input_path, opts)
    return cmd


_make("decompose", "Weak expander decomposition with d = deg (or the w lines).")
_make("hierarchy", "Build the congestion-approximator hierarchy.")
_make("maxflow", "Approximate max flow for the b lines (default: vertex 1 to vertex n).")
_make("verify", "Run decomposition and hierarchy with all checks; exit 1 on any failure.")
_make("bench", "Time compiled against pure kernels.", optional_input=True)


def main(argv: list[str] | None = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    try:
        cli.main(args=argv, prog_name="expflow", standalone_mode=False)
    except click.exceptions.Exit as e:
        return int(e.exit_code)
    except click.ClickException as e:
        e.show()
        return 2
    except click.exceptions.Abort:
        return 2
    except INPUT_ERRORS as e:
        click.echo(f"input error: {e}", err=True)
        return 2
    except VerifyFailure as e:
        click.echo(f"verification failed: {e}", err=True)
        return 1
    except CONTRACT_ERRORS as e:
        click.echo(f"contract failure ({type(e).__name__}): {e}", err=True)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
