"""Command-line front end.

``qot <subcommand> --config path.json [--out dir] [--jobs N] [--seed S] [--no-plots]``

Subcommands: ``example``, ``distance``, ``geodesic``, ``certify``, ``chain``
and ``entropy-flow``.  Every run writes CSV/JSON tables (each carrying
``"schema": 1``, the config hash and the tolerances in force) and, unless
``--no-plots`` is given, PNG figures next to them.

Exit codes: 0 success, 2 some pair infeasible, 3 some optimization did not
converge, 4 configuration error.
"""
from __future__ import annotations

import argparse
import csv
import hashlib
import json
import logging
import sys
from dataclasses import dataclass, field, fields, replace
from pathlib import Path

import numpy as np

from . import chains as chains_mod
from .algebra import AlgebraError, Density, Element
from .entropy_geometry import (_pmap, auto_lambda, certify, entropy, entropy_flow_bound,
                               euler_lagrange_residual)
from .examples import (KINDS, Example, build, random_full_rank, random_in_component, shipped_examples)
from .gradient import commutation_lambda, heat_state, spectral_gap
from .quasientropy import by_name
from .transport import INFEASIBLE_TOL, TransportOptions, distance, geometry_for, speed_variation, speeds

SCHEMA = 1
EXIT_OK, EXIT_INFEASIBLE, EXIT_NONCONVERGED, EXIT_CONFIG = 0, 2, 3, 4

log = logging.getLogger("qot")


class ConfigError(Exception):
    pass


_OPTION_FIELDS = {f.name for f in fields(TransportOptions)}


@dataclass
class RunConfig:
    """Parsed run configuration.

    ``raw`` is the JSON as given (with command-line overrides folded in);
    its canonical serialization is what the config hash covers.
    """

    raw: dict
    example: object = None
    chain: object = None
    f_name: str = "logarithmic"
    f_params: dict = field(default_factory=dict)
    theta: float = 1.0
    K: int = 16
    options: TransportOptions = TransportOptions(refine=2)
    tolerances: dict = field(default_factory=dict)
    seed: int = 0
    states: list = field(default_factory=list)
    extra: dict = field(default_factory=dict)

    @classmethod
    def from_json(cls, raw: dict) -> "RunConfig":
        if not isinstance(raw, dict):
            raise ConfigError("config must be a JSON object")
        if raw.get("schema", SCHEMA) != SCHEMA:
            raise ConfigError(f"unsupported config schema {raw.get('schema')!r}")
        f = raw.get("f", "logarithmic")
        if isinstance(f, dict):
            f = dict(f)
            f_name, f_params = f.pop("name", None), f
        else:
            f_name, f_params = f, {}
        theta = float(raw.get("theta", 1.0))
        if not 0 < theta <= 1:
            raise ConfigError(f"theta must lie in (0, 1], got {theta}")
        K = raw.get("K", 16)
        if not isinstance(K, int) or K < 2:
            raise ConfigError(f"K must be an integer >= 2, got {K!r}")
        opt = dict(raw.get("optimizer", {}))
        unknown = set(opt) - _OPTION_FIELDS
        if unknown:
            raise ConfigError(f"unknown optimizer options {sorted(unknown)}")
        opts = replace(TransportOptions(refine=2), **opt)
        seed = raw.get("seed", 0)
        if not isinstance(seed, int):
            raise ConfigError("seed must be an integer")
        known = {"schema", "f", "theta", "K", "optimizer", "tolerances", "seed", "states", "example", "chain"}
        return cls(raw, raw.get("example"), raw.get("chain"), f_name, f_params, theta, K, opts,
                   dict(raw.get("tolerances", {})), seed, list(raw.get("states", [])),
                   {k: v for k, v in raw.items() if k not in known})

    @property
    def hash(self) -> str:
        return hashlib.sha256(json.dumps(self.raw, sort_keys=True).encode()).hexdigest()[:16]

    def f(self):
        try:
            return by_name(self.f_name, **self.f_params)
        except (AlgebraError, KeyError, TypeError) as exc:
            raise ConfigError(f"bad representing function: {exc}") from None

    def tolerance_set(self) -> dict:
        o = self.options
        base = {"infeasible": INFEASIBLE_TOL, "rel_tol": o.rel_tol, "grad_tol": o.grad_tol,
                "mass": chains_mod.MASS_TOL, "be": 1e-8, "base": 1e-6}
        base.update(self.tolerances)
        return base


# -- config helpers ------------------------------------------------------------------------------

def _example(cfg: RunConfig) -> Example:
    spec = cfg.example
    if spec is None:
        raise ConfigError("config needs an 'example'")
    if isinstance(spec, str):
        shipped = shipped_examples()
        if spec not in shipped:
            raise ConfigError(f"unknown shipped example {spec!r}; choose from {sorted(shipped)}")
        return shipped[spec]
    try:
        return build(spec)
    except AlgebraError as exc:
        raise ConfigError(str(exc)) from None


def _state(ex_or_alg, spec: dict, rng: np.random.Generator, prev: list, gradient=None) -> Density:
    A = ex_or_alg
    kind = spec.get("kind", "random")
    if kind == "uniform":
        return Density.uniform(A)
    if kind == "random":
        return random_full_rank(A, rng, float(spec.get("spread", 1.0)))
    if kind in ("component", "heat"):
        i = int(spec.get("of", 0))
        if not 0 <= i < len(prev):
            raise ConfigError(f"state refers to state {i}, which is not defined before it")
        if kind == "heat":
            return heat_state(gradient.heat, float(spec.get("t", 1.0)), prev[i])
        return random_in_component(geometry_for(gradient, prev[i]), rng,
                                   float(spec.get("lo", 0.2)), float(spec.get("hi", 0.8)))
    if kind == "diagonal":
        v = np.asarray(spec["values"], float)
        if v.size != sum(A.block_dims):
            raise ConfigError(f"diagonal state needs {sum(A.block_dims)} values")
        blocks, k = [], 0
        for n in A.block_dims:
            blocks.append(np.diag(v[k:k + n]))
            k += n
        return Density.normalized(A.element(blocks))
    if kind == "matrix":
        return Density.normalized(Element.from_json(A, spec["blocks"]))
    raise ConfigError(f"unknown state kind {kind!r}")


def _states(cfg: RunConfig, A, gradient, default: list) -> list:
    rng = np.random.default_rng(cfg.seed)
    out = []
    for spec in cfg.states or default:
        try:
            out.append(_state(A, spec, rng, out, gradient))
        except (AlgebraError, KeyError, ValueError) as exc:
            raise ConfigError(f"bad state spec {spec}: {exc}") from None
    return out


def _num(x) -> object:
    """JSON-safe float: non-finite values become strings."""
    if isinstance(x, (float, np.floating)):
        x = float(x)
        return x if np.isfinite(x) else ("inf" if x > 0 else "-inf" if x < 0 else "nan")
    if isinstance(x, (np.integer,)):
        return int(x)
    if isinstance(x, (np.bool_,)):
        return bool(x)
    if isinstance(x, dict):
        return {k: _num(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_num(v) for v in x]
    return x


class Writer:
    def __init__(self, out: Path, cfg: RunConfig, command: str, plots: bool):
        self.out = Path(out)
        self.out.mkdir(parents=True, exist_ok=True)
        self.meta = {"schema": SCHEMA, "command": command, "config_hash": cfg.hash,
                     "tolerances": cfg.tolerance_set()}
        self.plots = plots
        self.files = []

    def json(self, name: str, payload: dict) -> Path:
        p = self.out / name
        p.parent.mkdir(parents=True, exist_ok=True)
        p.write_text(json.dumps(_num({**self.meta, **payload}), indent=2, sort_keys=True) + "\n")
        self.files.append(p)
        return p

    def csv(self, name: str, rows: list, columns: list) -> Path:
        p = self.out / name
        with p.open("w", newline="") as fh:
            fh.write(f"# schema: {SCHEMA}\n# config_hash: {self.meta['config_hash']}\n")
            fh.write(f"# tolerances: {json.dumps(_num(self.meta['tolerances']), sort_keys=True)}\n")
            w = csv.writer(fh)
            w.writerow(columns)
            for r in rows:
                w.writerow([_fmt(r.get(c, "")) for c in columns])
        self.files.append(p)
        return p

    def figure(self, fn, *args, name: str):
        if not self.plots:
            return None
        p = fn(*args, self.out / name)
        self.files.append(p)
        return p


def _fmt(v):
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return v


def _exit_for(statuses) -> int:
    statuses = list(statuses)
    if any(s not in ("converged", "infeasible") for s in statuses):
        return EXIT_NONCONVERGED
    if any(s == "infeasible" for s in statuses):
        return EXIT_INFEASIBLE
    return EXIT_OK


# -- subcommands ---------------------------------------------------------------------------------

def cmd_example(cfg: RunConfig | None, w: Writer | None, args) -> int:
    if args.action == "list":
        for name, doc in KINDS.items():
            print(f"{name:24s} {doc}")
        print("shipped: " + ", ".join(sorted(shipped_examples())))
        return EXIT_OK
    ex = _example(cfg)
    g = ex.gradient
    hd = g.heat
    rng = np.random.default_rng(cfg.seed)
    payload = {"example": ex.spec.to_json(), "algebra": ex.algebra.to_json(),
               "bimodule_target": g.target.to_json(), "metadata": ex.metadata,
               "invariants": g.invariant_residuals(rng), "kernel_dim": hd.kernel_dim,
               "ergodic": hd.ergodic, "spectral_gap": spectral_gap(hd).value,
               "laplacian_spectrum": [float(x) for x in hd.eigenvalues]}
    try:
        fits = []
        for n in range(max(1, len(g.children))):
            c = commutation_lambda(g, n)
            fits.append({"component": n, "lambda": c.lam, "residual": c.residual, "certified": c.certified})
        payload["commutation"] = fits
    except AlgebraError as exc:
        payload["commutation"] = str(exc)
    w.json("example.json", payload)
    print(json.dumps(_num({k: payload[k] for k in ("example", "kernel_dim", "spectral_gap")})))
    return EXIT_OK


def cmd_distance(cfg: RunConfig, w: Writer, args) -> int:
    from . import plotting
    ex = _example(cfg)
    g, f = ex.gradient, cfg.f()
    default = [{"kind": "random"}, {"kind": "component", "of": 0}, {"kind": "component", "of": 0}]
    states = _states(cfg, ex.algebra, g, default)
    n = len(states)
    pairs = [(i, j) for i in range(n) for j in range(n) if i != j]
    results = _pmap(lambda p: distance(g, f, cfg.theta, states[p[0]], states[p[1]], cfg.K, cfg.options),
                    pairs, args.jobs)
    W = np.zeros((n, n))
    rows = []
    for (i, j), r in zip(pairs, results):
        W[i, j] = r.distance
        rows.append({"i": i, "j": j, "distance": r.distance, "gap": r.gap, "status": r.status,
                     "discretization_error": r.discretization_error if r.discretization_error is not None else ""})
    for i in range(n):
        rows.append({"i": i, "j": i, "distance": 0.0, "gap": 0.0, "status": "converged", "discretization_error": 0.0})
    rows.sort(key=lambda r: (r["i"], r["j"]))
    w.csv("distance.csv", rows, ["i", "j", "distance", "gap", "status", "discretization_error"])
    for (i, j), r in zip(pairs, results):
        if i < j:
            w.json(f"geodesics/pair_{i}_{j}.json",
                   {"i": i, "j": j, "distance": r.distance, "gap": r.gap, "status": r.status,
                    "per_K": r.per_K, "path": r.path.to_json(f, cfg.theta) if r.path is not None else None})
    w.json("distance.json", {"example": ex.spec.to_json(), "f": cfg.f_name, "theta": cfg.theta, "K": cfg.K,
                             "matrix": W.tolist(), "states": [s.element.to_json() for s in states]})
    w.figure(plotting.distance_matrix, W, name="distance.png")
    for r in rows:
        print(f"{r['i']} {r['j']} {r['distance']:.10g} gap={r['gap']:.3g} {r['status']}")
    return _exit_for(r.status for r in results)


def cmd_geodesic(cfg: RunConfig, w: Writer, args) -> int:
    from . import plotting
    ex = _example(cfg)
    g, f = ex.gradient, cfg.f()
    states = _states(cfg, ex.algebra, g, [{"kind": "random"}, {"kind": "component", "of": 0}])
    if len(states) < 2:
        raise ConfigError("geodesic needs two states")
    r = distance(g, f, cfg.theta, states[0], states[1], cfg.K, cfg.options)
    payload = {"example": ex.spec.to_json(), "distance": r.distance, "gap": r.gap, "status": r.status,
               "per_K": r.per_K}
    if r.path is None:
        w.json("geodesic.json", payload)
        print(f"distance {r.distance} ({r.status})")
        return _exit_for([r.status])
    path = r.path
    sp = speeds(path, f, cfg.theta)
    ents = [entropy(s) for s in path.states]
    payload.update(path=path.to_json(f, cfg.theta), speed_variation=speed_variation(path, f, cfg.theta),
                   nodes=[s.element.to_json() for s in path.states])
    if f.is_log and cfg.theta == 1 and path.K >= 4:
        el = euler_lagrange_residual(geometry_for(g, states[0]), path)
        payload["euler_lagrange"] = {"max": el.max, "max_relative": el.max_relative}
    w.json("geodesic.json", payload)
    rows = [{"t": t, "entropy": e, "min_eig": s.min_eig(), "speed": sp[k] if k < len(sp) else ""}
            for k, (t, e, s) in enumerate(zip(path.grid, ents, path.states))]
    w.csv("geodesic.csv", rows, ["t", "entropy", "min_eig", "speed"])
    w.figure(plotting.geodesic, path.grid, ents, sp, name="geodesic.png")
    print(f"distance {r.distance:.10g} gap {r.gap:.3g} ({r.status}), speed variation "
          f"{payload['speed_variation']:.3g}")
    return _exit_for([r.status])


def cmd_certify(cfg: RunConfig, w: Writer, args) -> int:
    from . import plotting
    ex = _example(cfg)
    f = cfg.f()
    if not (f.is_log and cfg.theta == 1):
        raise ConfigError("certification needs the logarithmic mean with theta = 1")
    lam = args.lam if args.lam is not None else cfg.extra.get("lambda", "auto")
    samples = int(cfg.extra.get("samples", 16))
    auto = None
    if lam == "auto":
        auto = auto_lambda(ex.gradient, samples, cfg.seed, args.jobs)
        lam = auto["lam"]
    try:
        lam = float(lam)
    except (TypeError, ValueError):
        raise ConfigError(f"lambda must be a number or 'auto', got {lam!r}") from None
    rep = certify(ex.gradient, lam, samples, int(cfg.extra.get("pairs", 3)), cfg.seed,
                  K=cfg.K, jobs=args.jobs, example=json.dumps(ex.spec.to_json(), sort_keys=True))
    rep["auto"] = auto
    rep["expected_ricci"] = ex.metadata.get("expected_ricci")
    w.json("certify.json", rep)
    w.figure(plotting.certification, rep["margins"], name="certify.png")
    print(f"lambda {lam:.6g}: {rep['checks']} -> {rep['verdict']}")
    return EXIT_OK


def _chain(cfg: RunConfig) -> chains_mod.ChainDescriptor:
    spec = cfg.chain
    if spec is None:
        raise ConfigError("config needs a 'chain'")
    try:
        if "builder" in spec:
            b = spec["builder"]
            if b == "car_tower":
                return chains_mod.car_tower(int(spec["J"]), spec.get("nu"))
            if b == "corner_tower":
                return chains_mod.corner_tower(int(spec["n0"]), int(spec["J"]), spec.get("nu"))
            raise ConfigError(f"unknown chain builder {b!r}")
        return chains_mod.ChainDescriptor.from_json(spec)
    except (AlgebraError, KeyError) as exc:
        raise ConfigError(f"bad chain: {exc}") from None


def cmd_chain(cfg: RunConfig, w: Writer, args) -> int:
    from . import plotting
    ch = _chain(cfg)
    top = ch.J - 1
    g = ch.gradient(top)
    states = _states(cfg, ch.stages[top].algebra, g, [{"kind": "random"}, {"kind": "component", "of": 0}])
    if len(states) < 2:
        raise ConfigError("chain study needs two top-stage states")
    tab = chains_mod.distance_convergence(ch, states[0], states[1], cfg.f(), cfg.theta, cfg.K, cfg.options,
                                          args.jobs, cfg.tolerance_set()["mass"])
    t_grid = [float(t) for t in cfg.extra.get("t_grid", [0.1, 1.0])]
    heat = []
    for j in range(top):
        for t in t_grid:
            heat.append({"stage": j, "t": t, "operator": chains_mod.heat_restriction_residual(ch, top, j, t),
                         "state": chains_mod.heat_restriction_residual(ch, top, j, t, states[0])})
    ents = chains_mod.entropy_profile(ch, states[0])
    w.csv("chain.csv", tab.rows, ["stage", "dim", "mass0", "mass1", "distance", "gap", "status"])
    w.json("chain.json", {"chain": ch.to_json(), "table": tab.to_json(), "locality": ch.locality,
                          "heat_restriction": heat, "entropy_profile": ents})
    w.figure(plotting.chain, tab.rows, name="chain.png")
    for r in tab.rows:
        print(f"stage {r['stage']}: W = {r['distance']:.10g} (gap {r['gap']:.3g}, {r['status']}), "
              f"masses {r['mass0']:.6g} / {r['mass1']:.6g}")
    print(f"nondecreasing: {tab.nondecreasing}; entropies monotone: {ents['monotone']}")
    return _exit_for(r["status"] for r in tab.rows if r["status"] != "degenerate")


def cmd_entropy_flow(cfg: RunConfig, w: Writer, args) -> int:
    from . import plotting
    ex = _example(cfg)
    if not (cfg.f().is_log and cfg.theta == 1):
        raise ConfigError("the entropy-flow study needs the logarithmic mean with theta = 1")
    g = ex.gradient
    n = int(cfg.extra.get("n_states", 3))
    states = _states(cfg, ex.algebra, g, [{"kind": "random"}] * n)
    t_grid = [float(t) for t in cfg.extra.get("t_grid", [0.1, 0.5, 1.0, 2.0])]
    tasks = [(i, t) for i in range(len(states)) for t in t_grid]
    base = cfg.tolerance_set()["base"]

    def one(task):
        i, t = task
        r = entropy_flow_bound(g, states[i], t, cfg.K, cfg.options)
        slack = r["gap"] + base
        return {"state": i, "t": t, "entropy_t": entropy(heat_state(g.heat, t, states[i])),
                "delta_entropy": r["delta_entropy"], "distance": r["distance"], "gap": r["gap"],
                "stated": r["stated"], "sqrt": r["sqrt"], "path": r["path"], "status": r["status"],
                "stated_ok": bool(r["distance"] <= r["stated"] + slack),
                "sqrt_ok": bool(r["distance"] <= r["sqrt"] + slack)}

    rows = _pmap(one, tasks, args.jobs)
    cols = ["state", "t", "entropy_t", "delta_entropy", "distance", "gap", "stated", "sqrt", "path",
            "stated_ok", "sqrt_ok", "status"]
    w.csv("entropy_flow.csv", rows, cols)
    w.json("entropy_flow.json", {"example": ex.spec.to_json(), "rows": rows,
                                 "stated_violations": sum(not r["stated_ok"] for r in rows),
                                 "sqrt_violations": sum(not r["sqrt_ok"] for r in rows)})
    w.figure(plotting.entropy_flow, rows, name="entropy_flow.png")
    for r in rows:
        print(f"state {r['state']} t={r['t']:g}: W={r['distance']:.6g} (t/2)dEnt={r['stated']:.6g} "
              f"sqrt(t dEnt)={r['sqrt']:.6g}")
    return _exit_for(r["status"] for r in rows)


COMMANDS = {"example": cmd_example, "distance": cmd_distance, "geodesic": cmd_geodesic,
            "certify": cmd_certify, "chain": cmd_chain, "entropy-flow": cmd_entropy_flow}


def _parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, help="run configuration (JSON)")
    common.add_argument("--out", type=Path, default=Path("qot-out"), help="output directory")
    common.add_argument("--jobs", type=int, default=1, help="worker threads")
    common.add_argument("--seed", type=int, default=None, help="override the config seed")
    common.add_argument("--no-plots", action="store_true", help="skip PNG figures")
    common.add_argument("-v", "--verbose", action="store_true")
    p = argparse.ArgumentParser(prog="qot", description="Quantum optimal transport on finite tracial algebras.")
    sub = p.add_subparsers(dest="command", required=True)
    e = sub.add_parser("example", parents=[common], help="list example kinds or describe one")
    e.add_argument("action", choices=["list", "show"], nargs="?", default="list")
    for name in ("distance", "geodesic", "chain", "entropy-flow"):
        sub.add_parser(name, parents=[common])
    c = sub.add_parser("certify", parents=[common])
    c.add_argument("--lam", default=None, help="lambda to test, or 'auto'")
    return p


def _load(args) -> RunConfig:
    if args.config is None:
        raise ConfigError("--config is required")
    try:
        raw = json.loads(Path(args.config).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read config: {exc}") from None
    if args.seed is not None:
        raw = {**raw, "seed": args.seed}
    return RunConfig.from_json(raw)


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    if getattr(args, "lam", None) not in (None, "auto"):
        try:
            args.lam = float(args.lam)
        except ValueError:
            print("error: --lam must be a number or 'auto'", file=sys.stderr)
            return EXIT_CONFIG
    if args.jobs < 1:
        print("error: --jobs must be positive", file=sys.stderr)
        return EXIT_CONFIG
    try:
        if args.command == "example" and args.action == "list":
            return cmd_example(None, None, args)
        cfg = _load(args)
        w = Writer(args.out, cfg, args.command, not args.no_plots)
        code = COMMANDS[args.command](cfg, w, args)
        log.info("wrote %s", ", ".join(str(p) for p in w.files))
        return code
    except (ConfigError, AlgebraError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
