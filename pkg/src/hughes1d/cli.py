"""Command line front end: built-in scenarios, runs, checks and CSV output.

Every run directory gets a ``manifest.json`` listing the files written.  CSV
numbers use the shortest round-trip decimal form with LF line endings, so two
identical invocations produce identical CSV bytes.
"""
from __future__ import annotations

import argparse
import configparser
import csv
import hashlib
import json
import logging
import math
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from . import dpa, riemann, verify, wft
from .model import CostModel, FluxModel, PiecewiseConstantDensity, Scenario, VelocityModel
from .trace import Event, SolutionTrace

log = logging.getLogger(__name__)

BUILTIN_BLOCKS = {
    "fig1": [(-1.0, 1.0, 0.6)],
    "fig2": [(-1.0, 0.0, 0.25), (0.0, 1.0, 0.6)],
    "fig3": [(-1.0, 0.0, 0.1), (0.0, 1.0, 0.9)],
    "fig4": [(-0.8, -0.5, 0.8), (-0.3, 0.3, 0.6), (0.4, 0.75, 0.9)],
}

# tolerances applied by ``verify``
MASS_TOL = 1e-9
MAX_TOL = 1e-9
ENTROPY_TOL = -1e-6
RH_TOL = 1e-3
BREACH = 3


class UsageError(ValueError):
    pass


def builtin_scenario(name: str) -> Scenario:
    """v = 1 - rho, c = 1 / v, horizon 1."""
    try:
        blocks = BUILTIN_BLOCKS[name]
    except KeyError:
        raise UsageError(f"unknown scenario {name!r}; built-ins are {', '.join(BUILTIN_BLOCKS)}") from None
    return Scenario(VelocityModel(), CostModel.reciprocal(), PiecewiseConstantDensity.from_blocks(blocks),
                    horizon=1.0, name=name)


def _parse_blocks(text: str) -> list:
    blocks = []
    for part in text.replace("\n", ";").split(";"):
        if part.strip():
            a, b, v = (float(w) for w in part.replace(",", " ").split())
            blocks.append((a, b, v))
    return blocks


def load_scenario_file(path: Path) -> Scenario:
    """Read ``key = value`` lines.

    Keys: ``blocks`` (``left right value`` triples separated by ``;``), ``cost``
    (linear or reciprocal), ``alpha``, ``rho_max``, ``v_max``, ``horizon``,
    ``snapshot_dt``, ``dpa_n``, ``wft_n``, ``wft_mode``, ``name``.
    """
    cp = configparser.ConfigParser(inline_comment_prefixes=("#",))
    cp.read_string("[scenario]\n" + path.read_text())
    s = cp["scenario"]
    if "blocks" not in s:
        raise UsageError(f"{path}: missing 'blocks'")
    vel = VelocityModel(rho_max=s.getfloat("rho_max", 1.0), v_max=s.getfloat("v_max", 1.0))
    kind = s.get("cost", "reciprocal")
    if kind == "linear":
        cost = CostModel.linear(s.getfloat("alpha", 0.0))
    elif kind == "reciprocal":
        cost = CostModel.reciprocal()
    else:
        raise UsageError(f"{path}: unknown cost {kind!r}")
    return Scenario(vel, cost, PiecewiseConstantDensity.from_blocks(_parse_blocks(s["blocks"])),
                    horizon=s.getfloat("horizon", 1.0), snapshot_dt=s.getfloat("snapshot_dt", 0.05),
                    dpa_n=s.getint("dpa_n", 11), wft_n=s.getint("wft_n", 10), wft_mode=s.get("wft_mode", "rh"),
                    name=s.get("name", path.stem))


def resolve_scenario(args) -> Scenario:
    name = args.scenario
    if name is None:
        raise UsageError("--scenario is required")
    sc = builtin_scenario(name) if name in BUILTIN_BLOCKS or not Path(name).exists() \
        else load_scenario_file(Path(name))
    if getattr(args, "cost", None) == "linear":
        sc = sc.with_(cost=CostModel.linear(args.alpha))
    elif getattr(args, "cost", None) == "reciprocal":
        sc = sc.with_(cost=CostModel.reciprocal())
    if getattr(args, "horizon", None) is not None:
        sc = sc.with_(horizon=args.horizon)
    return sc


def scenario_dict(sc: Scenario) -> dict:
    rho = sc.initial.canonical()
    return {
        "name": sc.name,
        "velocity": {"rho_max": sc.velocity.rho_max, "v_max": sc.velocity.v_max, "kind": sc.velocity.kind},
        "cost": {"kind": sc.cost.kind, "alpha": sc.cost.alpha},
        "breakpoints": [float(b) for b in rho.breakpoints],
        "values": [float(v) for v in rho.values],
        "horizon": sc.horizon,
        "snapshot_dt": sc.snapshot_dt,
    }


def scenario_hash(sc: Scenario) -> str:
    return hashlib.sha256(json.dumps(scenario_dict(sc), sort_keys=True).encode()).hexdigest()


# output


def fmt(x) -> str:
    if isinstance(x, (bool, np.bool_)):
        return str(bool(x))
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    if isinstance(x, (float, np.floating)):
        return repr(float(x))
    if x is None:
        return ""
    return str(x)


@dataclass
class RunManifest:
    scenario_hash: str
    scheme: str
    parameters: dict
    out: Path
    files: list = field(default_factory=list)
    started: float = field(default_factory=time.perf_counter)

    def write_csv(self, name: str, header: Sequence[str], rows) -> Path:
        path = self.out / name
        with path.open("w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(header)
            for row in rows:
                w.writerow([fmt(x) for x in row])
        self._add(name)
        return path

    def write_summary(self, values: dict, name: str = "summary") -> Path:
        path = self.out / name
        path.write_text("".join(f"{k}={fmt(v)}\n" for k, v in values.items()))
        self._add(name)
        return path

    def _add(self, name):
        if name not in self.files:
            self.files.append(name)

    def close(self) -> Path:
        doc = {"scenario_hash": self.scenario_hash, "scheme": self.scheme, "parameters": self.parameters,
               "out": str(self.out), "wall_clock_s": time.perf_counter() - self.started,
               "files": sorted(self.files + ["manifest.json"])}
        path = self.out / "manifest.json"
        path.write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")
        return path


def _open_run(out: Optional[str], default: str, sc: Optional[Scenario], scheme: str, params: dict) -> RunManifest:
    path = Path(out or default)
    path.mkdir(parents=True, exist_ok=True)
    h = scenario_hash(sc) if sc is not None else ""
    if sc is not None:
        params = {"scenario": scenario_dict(sc), **params}
    return RunManifest(h, scheme, params, path)


def density_rows(trace: SolutionTrace):
    for t, rho in zip(trace.times, trace.densities):
        rho = rho.canonical()
        if not rho.values.size:
            yield t, 0.0, 0.0, 0.0  # zero-width row keeps the snapshot time of an empty profile
            continue
        for a, b, v in zip(rho.breakpoints[:-1], rho.breakpoints[1:], rho.values):
            yield t, a, b, v


def event_rows(events):
    for e in events:
        yield e.t, e.kind, e.index


def front_kind(ul: float, ur: float, side: float) -> str:
    if side == 0:
        return wft.TURNING
    shock = ul < ur if side > 0 else ul > ur
    return wft.SHOCK if shock else wft.RAREFACTION


def front_rows(trace: SolutionTrace):
    """Fronts alive at each snapshot time, identified by their segment index."""
    segs = trace.fronts if trace.fronts is not None else np.empty((0, 7))
    end = trace.times[-1] if trace.times else 0.0
    for t in trace.times:
        alive = (segs[:, 0] <= t) & ((t < segs[:, 1]) | ((segs[:, 1] == t) & (t == end)))
        rows = [(float(segs[i, 2] + segs[i, 3] * (t - segs[i, 0])), i) for i in np.flatnonzero(alive)]
        for x, i in sorted(rows):
            t0, t1, x0, s, ul, ur, side = segs[i]
            yield t, i, x, ul, ur, front_kind(ul, ur, side)


def write_trace(m: RunManifest, trace: SolutionTrace, turning_name: str):
    m.write_csv("density.csv", ["t", "left", "right", "rho"], density_rows(trace))
    m.write_csv("turning.csv", ["t", turning_name], ((t, x) for t, x in trace.turning))
    m.write_csv("events.csv", ["t", "kind", "index"], event_rows(trace.events))
    if trace.traces is not None:
        m.write_csv("traces.csv", ["t", "xi", "rho_minus", "rho_plus"], (tuple(r) for r in trace.traces))
    if trace.fronts is not None:
        m.write_csv("segments.csv", ["t0", "t1", "x0", "speed", "left", "right", "side"],
                    (tuple(r) for r in trace.fronts))


def _read_csv(path: Path) -> list:
    with path.open(newline="") as fh:
        return list(csv.DictReader(fh))


def read_summary(path: Path) -> dict:
    out = {}
    for line in path.read_text().splitlines():
        if "=" in line:
            k, v = line.split("=", 1)
            out[k] = v
    return out


def load_trace(directory: Path) -> SolutionTrace:
    """Rebuild a trace from a run directory written by ``dpa`` or ``wft``."""
    directory = Path(directory)
    if not (directory / "density.csv").exists():
        raise UsageError(f"{directory} holds no density.csv")
    summary = read_summary(directory / "summary") if (directory / "summary").exists() else {}
    tr = SolutionTrace(summary.get("scheme", "unknown"))
    pieces: dict = {}
    for r in _read_csv(directory / "density.csv"):
        pieces.setdefault(float(r["t"]), []).append((float(r["left"]), float(r["right"]), float(r["rho"])))
    for t in sorted(pieces):
        rows = [p for p in pieces[t] if p[1] > p[0]]
        if rows:
            tr.add_snapshot(t, PiecewiseConstantDensity([p[0] for p in rows] + [rows[-1][1]], [p[2] for p in rows]))
        else:
            tr.add_snapshot(t, PiecewiseConstantDensity.empty())
    turning = _read_csv(directory / "turning.csv")
    tr.turning = np.array([[float(v) for v in r.values()] for r in turning]).reshape(-1, 2)
    tr.events = [Event(float(r["t"]), r["kind"], int(r["index"])) for r in _read_csv(directory / "events.csv")]
    if (directory / "traces.csv").exists():
        tr.traces = np.array([[float(v) for v in r.values()] for r in _read_csv(directory / "traces.csv")]).reshape(-1, 4)
    if (directory / "segments.csv").exists():
        tr.fronts = np.array([[float(v) for v in r.values()]
                              for r in _read_csv(directory / "segments.csv")]).reshape(-1, 7)
    tr.meta.update(summary)
    return tr


# subcommands


def cmd_dpa(args) -> int:
    sc = resolve_scenario(args)
    n = args.n if args.n is not None else sc.dpa_n
    traj = dpa.run(sc, n=n, N=args.N, mode=args.operator)
    tr = traj.trace
    m = _open_run(args.out, f"out/dpa_{sc.name}_n{n}", sc, "DPA",
                  {"n": n, "N": traj.N, "mode": traj.mode, "horizon": sc.horizon})
    m.write_csv("particles.csv", ["t", "i", "x"],
                ((t, i, x) for t, xs in zip(traj.particle_times, traj.particle_positions) for i, x in enumerate(xs)))
    write_trace(m, tr, "zeta")
    counts: dict = {}
    for e in tr.events:
        counts[e.kind] = counts.get(e.kind, 0) + 1
    summary = {"scheme": "DPA", "scenario": sc.name, "n": n, "N": traj.N, "m": traj.m, "mode": traj.mode,
               "T_mic": traj.T_mic if traj.T_mic is not None else "none", "zeta0": tr.meta["zeta0"],
               "xi_datum": tr.meta["xi_datum"], "zeta_final": float(tr.turning[-1, 1])}
    summary.update({f"events_{k}": v for k, v in sorted(counts.items())})
    m.write_summary(summary)
    m.close()
    _print(summary)
    return 0


def cmd_wft(args) -> int:
    sc = resolve_scenario(args)
    n = args.n if args.n is not None else sc.wft_n
    res = wft.run(sc, n=n, mode=args.mode, front_cap=args.front_cap)
    tr = res.trace
    m = _open_run(args.out, f"out/wft_{sc.name}_n{n}", sc, "WFT",
                  {"n": n, "mode": tr.meta["mode"], "horizon": sc.horizon})
    m.write_csv("fronts.csv", ["t", "id", "x", "left", "right", "kind"], front_rows(tr))
    write_trace(m, tr, "xi")
    m.write_csv("tv.csv", ["t", "tv"], (tuple(r) for r in res.tv))
    counts: dict = {}
    for e in tr.events:
        counts[e.kind] = counts.get(e.kind, 0) + 1
    summary = {"scheme": "WFT", "scenario": sc.name, "n": n, "eps": res.grid.eps, "mode": tr.meta["mode"],
               "fronts_max": max(c for _, c in res.front_counts), "tv_max": float(res.tv[:, 1].max()),
               "xi0": tr.meta["xi0"], "xi_datum": tr.meta["xi_datum"], "xi_final": float(tr.turning[-1, 1]),
               "max_residual": tr.meta["max_residual"]}
    summary.update({f"events_{k}": v for k, v in sorted(counts.items())})
    m.write_summary(summary)
    m.close()
    _print(summary)
    return 0


def _cost_from_args(args) -> CostModel:
    return CostModel.linear(args.alpha) if args.cost == "linear" else CostModel.reciprocal()


def cmd_riemann(args) -> int:
    vel = VelocityModel()
    sol = riemann.solve_turning_riemann(args.rhoL, args.rhoR, _cost_from_args(args), FluxModel(vel))
    out = {"rho_L": args.rhoL, "rho_R": args.rhoR, "cost": args.cost, "xi0": sol.xi0,
           "classification": sol.classification, "trace_left": sol.trace_left, "trace_right": sol.trace_right,
           "xi_dot": sol.xi_dot, "rho_M": sol.rho_M, "rh_residual": sol.checks["rh_residual"],
           "admissibility_slack": sol.checks["admissibility_slack"]}
    for side, waves in (("left", sol.left_waves), ("right", sol.right_waves)):
        for j, w in enumerate(waves):
            out[f"{side}_wave{j}"] = f"{w.kind} {fmt(w.left)} {fmt(w.right)} {fmt(w.speed_lo)} {fmt(w.speed_hi)}"
    _print(out)
    return 0


def _load_phis(path: Path) -> list:
    doc = json.loads(Path(path).read_text())
    items = doc if isinstance(doc, list) else [doc]
    return [verify.BilinearTestFunction(d["ts"], d["xs"], d["values"]) for d in items]


def _run_velocity(directory: Path) -> VelocityModel:
    path = directory / "manifest.json"
    if path.exists():
        vel = json.loads(path.read_text()).get("parameters", {}).get("scenario", {}).get("velocity")
        if vel and vel.get("kind") == "linear":
            return VelocityModel(rho_max=vel["rho_max"], v_max=vel["v_max"])
    return VelocityModel()


def cmd_verify(args) -> int:
    tr = load_trace(Path(args.trace))
    flux = FluxModel(_run_velocity(Path(args.trace)))
    report = {"scheme": tr.scheme, "snapshots": len(tr.times)}
    breaches = []
    mass = verify.check_conservation(tr)
    report["mass_drift"] = mass
    if mass > MASS_TOL:
        breaches.append("mass")
    over = verify.check_max_principle(tr, tr.densities[0])
    report["max_principle_excess"] = over
    if over > MAX_TOL:
        breaches.append("max_principle")
    if tr.traces is not None and len(tr.traces) >= 3:
        rh = verify.check_rh_turning(tr, flux)
        report["rh_turning"] = rh
        if rh > RH_TOL:
            breaches.append("rh_turning")
    if tr.fronts is not None:
        phis = _load_phis(args.phi) if args.phi else verify.away_from_turning(tr, 10)
        worst, k, idx = verify.entropy_sweep(tr, phis, flux, n_k=args.k_sweep)
        report.update(entropy_min=worst, entropy_k=k, entropy_phi=idx, test_functions=len(phis))
        if worst < ENTROPY_TOL:
            breaches.append("entropy")
    report["breaches"] = ",".join(breaches) or "none"
    report["status"] = "FAIL" if breaches else "PASS"
    _print(report)
    return BREACH if breaches else 0


def cmd_compare(args) -> int:
    if args.traces:
        a, b = (load_trace(Path(p)) for p in args.traces)
        l1 = verify.compare_traces(a, b, args.t)
        _print({"t": args.t, "l1": l1})
        return 0
    sc = resolve_scenario(args)
    base = Path(args.out or f"out/compare_{sc.name}")
    nd = args.n_dpa if args.n_dpa is not None else sc.dpa_n
    nw = args.n_wft if args.n_wft is not None else sc.wft_n
    rc = cmd_dpa(argparse.Namespace(**{**vars(args), "n": nd, "N": None, "operator": None,
                                       "out": str(base / "dpa")}))
    rc = rc or cmd_wft(argparse.Namespace(**{**vars(args), "n": nw, "mode": None, "front_cap": 1_000_000,
                                            "out": str(base / "wft")}))
    l1 = verify.compare_traces(load_trace(base / "dpa"), load_trace(base / "wft"), args.t)
    m = _open_run(str(base), "", sc, "compare", {"n_dpa": nd, "n_wft": nw, "t": args.t})
    out = {"scenario": sc.name, "t": args.t, "n_dpa": nd, "n_wft": nw, "l1": l1}
    m.write_summary(out)
    m.files += ["dpa/manifest.json", "wft/manifest.json"]
    m.close()
    _print(out)
    return rc


def _parse_alphas(text: str) -> list:
    if ":" in text:
        lo, hi, step = (float(w) for w in text.split(":"))
        k = int(math.floor((hi - lo) / step + 1e-9))
        return [lo + j * step for j in range(k + 1)]
    return [float(w) for w in text.split(",")]


def _sweep_one(job):
    sc, a, n, horizon = job
    return dpa.sweep_alpha(sc, [a], n=n, horizon=horizon)[0]


def cmd_sweep_alpha(args) -> int:
    sc = resolve_scenario(args)
    alphas = _parse_alphas(args.alphas)
    n = args.n if args.n is not None else sc.dpa_n
    jobs = [(sc, a, n, args.max_time) for a in sorted(alphas)]
    if args.jobs > 1:
        with ProcessPoolExecutor(args.jobs) as pool:
            rows = list(pool.map(_sweep_one, jobs))
    else:
        rows = [_sweep_one(j) for j in jobs]
    m = _open_run(args.out, f"out/sweep_{sc.name}_n{n}", sc, "DPA",
                  {"n": n, "alphas": alphas, "max_time": args.max_time})
    m.write_csv("alpha_sweep.csv", ["alpha", "T_mic", "error"], rows)
    m.close()
    for a, T, err in rows:
        print(f"alpha={fmt(a)} T_mic={fmt(T) or 'none'}" + (f" error={err}" if err else ""))
    return 1 if any(err for _, _, err in rows) else 0


def cmd_converge(args) -> int:
    sc = resolve_scenario(args)
    ns = [int(w) for w in args.ns.split(",")]
    scheme = args.scheme.upper()
    rows, info = verify.convergence_study(sc, scheme, ns, t=args.t)
    m = _open_run(args.out, f"out/converge_{sc.name}_{args.scheme}", sc, scheme, {"ns": ns, "t": args.t})
    m.write_csv("convergence.csv", ["n_coarse", "n_fine", "l1", "error"],
                ((r.n_coarse, r.n_fine, r.l1, r.error) for r in rows))
    diffs = [r.l1 for r in rows]
    dec = all(d is not None for d in diffs) and all(b < a for a, b in zip(diffs, diffs[1:]))
    summary = {"scheme": scheme, "scenario": sc.name, "levels": len(ns), "strictly_decreasing": dec}
    m.write_summary(summary)
    m.close()
    for r in rows:
        print(f"n={r.n_coarse}->{r.n_fine} l1={fmt(r.l1) or 'none'}" + (f" error={r.error}" if r.error else ""))
    _print(summary)
    return 1 if any(r.error for r in rows) else 0


def _print(values: dict):
    for k, v in values.items():
        print(f"{k}={fmt(v)}")


# parser


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--scenario", help="built-in name (fig1..fig4) or key=value scenario file")
    common.add_argument("--out", help="output directory")
    common.add_argument("--seed", type=int, default=None, help="reserved; every scheme is deterministic")
    common.add_argument("--cost", choices=["linear", "reciprocal"], help="override the running cost")
    common.add_argument("--alpha", type=float, default=1.0, help="slope of the linear cost")
    common.add_argument("--horizon", type=float, default=None)
    common.add_argument("-v", "--verbose", action="store_true")

    p = argparse.ArgumentParser(prog="hughes1d", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("dpa", parents=[common], help="particle scheme")
    s.add_argument("--n", type=int, help="dyadic level, N = 2^n particles gaps")
    s.add_argument("--N", type=int, help="explicit number of gaps")
    s.add_argument("--operator", choices=[dpa.LINEAR_COST, dpa.GENERAL_COST])
    s.set_defaults(func=cmd_dpa)

    s = sub.add_parser("wft", parents=[common], help="front tracking scheme")
    s.add_argument("--n", type=int, help="grid level, eps = 2^-n")
    s.add_argument("--mode", choices=["rh", "q"])
    s.add_argument("--front-cap", type=int, default=1_000_000)
    s.set_defaults(func=cmd_wft)

    s = sub.add_parser("riemann", parents=[common], help="two-state turning point problem")
    s.add_argument("--rhoL", type=float, required=True)
    s.add_argument("--rhoR", type=float, required=True)
    s.set_defaults(func=cmd_riemann, cost="reciprocal")

    s = sub.add_parser("verify", parents=[common], help="check a run directory")
    s.add_argument("--trace", required=True)
    s.add_argument("--k-sweep", type=int, default=17)
    s.add_argument("--phi", help="JSON test function(s) with keys ts, xs, values")
    s.set_defaults(func=cmd_verify)

    s = sub.add_parser("compare", parents=[common], help="L1 distance between the two schemes")
    s.add_argument("--traces", nargs=2, metavar="DIR", help="compare two saved runs instead")
    s.add_argument("--t", type=float, default=1.0)
    s.add_argument("--n-dpa", type=int)
    s.add_argument("--n-wft", type=int)
    s.set_defaults(func=cmd_compare)

    s = sub.add_parser("sweep-alpha", parents=[common], help="evacuation time against the linear cost slope")
    s.add_argument("--alphas", default="0:2:0.25", help="lo:hi:step or a comma list")
    s.add_argument("--n", type=int)
    s.add_argument("--max-time", type=float, default=50.0)
    s.add_argument("--jobs", type=int, default=1)
    s.set_defaults(func=cmd_sweep_alpha)

    s = sub.add_parser("converge", parents=[common], help="L1 differences between consecutive levels")
    s.add_argument("--scheme", choices=["dpa", "wft"], required=True)
    s.add_argument("--ns", required=True, help="comma list of levels")
    s.add_argument("--t", type=float, default=1.0)
    s.set_defaults(func=cmd_converge)
    return p


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING)
    try:
        return args.func(args)
    except UsageError as exc:
        parser.print_usage(sys.stderr)
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # solver failure: report and exit 1
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
