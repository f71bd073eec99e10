"""Batch command line: ``hypwalk <command> [flags]`` or ``hypwalk run config.json``.

Every run writes CSV/JSON artifacts plus ``manifest.json`` into the output
directory, and PNG figures unless ``--no-figures`` is given.

Parameter precedence is flags > config file > built-in defaults.  A flag
``--n_max 12`` (or ``--n-max 12``) overrides ``params.n_max``; values are
parsed as JSON when possible, so lists are written ``--n_list '[2,3,4]'``.

Exit codes: 0 success, 1 malformed input, 2 precondition failure (including
a failed automaton validation), 3 resource or precision failure.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import io
import json
import math
import os
import platform
import sys
import time
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Callable

import jsonschema
import numpy as np
import scipy

from . import __version__
from .errors import (HypwalkError, NonConvergenceError, PreconditionError, PrecisionError,
                     ResourceError)
from .groups import FreeProduct, Group, group_from_dict
from .walk import DistributionCache, FiniteMeasure, measure_from_config

SCHEMA_VERSION = 1
CACHE_ENV = "HYPWALK_CACHE"
_HASH_EXCLUDE = ("output_dir", "cache_dir", "figures", "workers")


class ConfigError(Exception):
    pass


def load_schema() -> dict:
    text = resources.files("hypwalk").joinpath(f"schema/run_config.v{SCHEMA_VERSION}.json").read_text()
    return json.loads(text)


def _clean(v):
    if isinstance(v, dict):
        return {str(k): _clean(x) for k, x in v.items()}
    if isinstance(v, (list, tuple)):
        return [_clean(x) for x in v]
    if isinstance(v, np.ndarray):
        return _clean(v.tolist())
    if isinstance(v, (np.bool_, bool)):
        return bool(v)
    if isinstance(v, (np.integer,)):
        return int(v)
    if isinstance(v, (float, np.floating)):
        v = float(v)
        return v if math.isfinite(v) else ("inf" if v > 0 else "-inf" if v < 0 else "nan")
    return v


def config_hash(cfg: dict) -> str:
    core = {k: v for k, v in cfg.items() if k not in _HASH_EXCLUDE}
    raw = json.dumps(_clean(core), sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(raw.encode()).hexdigest()


def _fmt(v) -> str:
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    if isinstance(v, (np.integer,)):
        return str(int(v))
    return str(v)


@dataclass
class RunContext:
    config: dict
    group: Group
    mu: FiniteMeasure
    params: dict
    out: Path
    seed: int
    figures: bool
    cache: DistributionCache | None
    hash: str
    artifacts: list[str] = field(default_factory=list)
    status: str = "pass"

    def write_csv(self, name: str, header: list[str], rows) -> Path:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([_fmt(x) for x in row])
        path = self.out / name
        path.write_text(buf.getvalue())
        self.artifacts.append(name)
        return path

    def write_json(self, name: str, obj) -> Path:
        obj = dict(obj, config_hash=self.hash)
        path = self.out / name
        path.write_text(json.dumps(_clean(obj), indent=2, sort_keys=True) + "\n")
        self.artifacts.append(name)
        return path

    def figure(self, name: str, draw: Callable[[Path], None]) -> None:
        if not self.figures:
            return
        path = self.out / name
        draw(path)
        self.artifacts.append(name)


# ---------------------------------------------------------------------------
# shared helpers


def _word(group: Group, s) -> tuple:
    return group.reduce(group.parse(s or ()))


def _tree_oracle(ctx: RunContext):
    from .tree import TreeGreen
    if not isinstance(ctx.group, FreeProduct):
        raise PreconditionError("this command needs a tree-like group (free group or free product)")
    return TreeGreen(ctx.mu)


def _oracle(ctx: RunContext, backend: str, n_max: int):
    from .green import SeriesGreen
    from .tree import TreeGreen
    if backend == "tree" or (backend == "auto" and isinstance(ctx.group, FreeProduct)):
        return _tree_oracle(ctx)
    if backend in ("auto", "series"):
        return SeriesGreen(ctx.mu, n_max)
    raise ConfigError(f"unknown backend {backend!r}")


def _series(ctx: RunContext, n_max: int, source: str, precision: str):
    """Return-probability series and the R used to rescale it."""
    from .tree import series_coefficients
    from .walk import return_sequence, spectral_radius_estimate
    if source == "tree" or (source == "auto" and isinstance(ctx.group, FreeProduct)):
        T = _tree_oracle(ctx)
        return series_coefficients(T.system, n_max, precision), T.R, T
    s = return_sequence(ctx.mu, n_max, ctx.params.get("prune_eps", 0.0))
    if ctx.group.amenable:
        return s, 1.0, None
    rho, _ = spectral_radius_estimate(s)
    return s, 1.0 / rho, None


def _parity(series, choice):
    if choice == "auto":
        return "even" if getattr(series, "parity", "") == "period-2" else None
    return choice


# ---------------------------------------------------------------------------
# commands


def cmd_spheres(ctx: RunContext) -> dict:
    from .groups import sphere_sizes
    sizes = sphere_sizes(ctx.group, ctx.params["radius"])
    ctx.write_csv("spheres.csv", ["n", "size"], enumerate(sizes))
    from .plotting import line_plot
    ctx.figure("spheres.png", lambda p: line_plot(p, range(len(sizes)), {"|S_n|": sizes},
                                                  "n", "sphere size", logy=True))
    return {"sizes": sizes}


def cmd_pn(ctx: RunContext) -> dict:
    from .walk import return_sequence
    n_max, eps = ctx.params["n_max"], ctx.params["prune_eps"]
    if ctx.cache is not None:
        dists = ctx.cache.sequence(ctx.mu, n_max, eps)
        vals = [d.masses.get((), 0.0) for d in dists]
        errs = [d.pruned_mass for d in dists]
    else:
        s = return_sequence(ctx.mu, n_max, eps)
        vals, errs = s.values.tolist(), s.errors.tolist()
    ctx.write_csv("pn.csv", ["n", "p_n", "error"], [(n, v, e) for n, (v, e) in enumerate(zip(vals, errs))])
    from .plotting import line_plot
    n = np.arange(len(vals))
    ctx.figure("pn.png", lambda p: line_plot(p, n[1:], {"p_n(e,e)": vals[1:]}, "n", "p_n(e,e)",
                                             logy=True))
    return {"n_max": n_max}


def cmd_spectral_radius(ctx: RunContext) -> dict:
    from .tree import TreeGreen
    from .walk import return_sequence, spectral_radius_estimate
    s = return_sequence(ctx.mu, ctx.params["n_max"], ctx.params["prune_eps"])
    rho, diag = spectral_radius_estimate(s, order=ctx.params["order"])
    out = {"rho_hat": rho, "R_hat": 1 / rho, "n_max": ctx.params["n_max"]}
    if isinstance(ctx.group, FreeProduct):
        R = TreeGreen(ctx.mu).R
        out.update(R_tree=R, rho_tree=1 / R, difference=abs(rho - 1 / R))
    ctx.write_json("spectral_radius.json", out)
    return out


def cmd_green(ctx: RunContext) -> dict:
    from .green import first_visit
    oracle = _oracle(ctx, ctx.params["backend"], ctx.params["n_max"])
    r = ctx.params["r"]
    rows = []
    for x, y in ctx.params["pairs"]:
        g = oracle.green(_word(ctx.group, x), _word(ctx.group, y), r)
        f = first_visit(oracle, _word(ctx.group, x), _word(ctx.group, y), r)
        rows.append((x or "e", y or "e", r, g.lower, g.upper, f.lower, f.upper))
    ctx.write_csv("green.csv", ["x", "y", "r", "green_lower", "green_upper",
                                "first_visit_lower", "first_visit_upper"], rows)
    return {"backend": type(oracle).__name__, "R": oracle.R}


def _r_grid(ctx: RunContext, oracle) -> list[float]:
    from .green import near_R
    grid = ctx.params.get("r_grid")
    if grid:
        return [float(x) for x in grid]
    R = oracle.R
    return [0.5 * R, 0.9 * R, 0.99 * R, near_R(oracle)]


def cmd_ancona(ctx: RunContext) -> dict:
    from .green import ancona_ratio
    oracle = _oracle(ctx, ctx.params["backend"], ctx.params["n_max"])
    grid = _r_grid(ctx, oracle)
    rows, summary = [], []
    for i, (x, y, z) in enumerate(ctx.params["triples"]):
        rep = ancona_ratio(oracle, _word(ctx.group, x), _word(ctx.group, y), _word(ctx.group, z),
                           grid, config_id=str(i))
        yy = _word(ctx.group, y)
        for row in rep.rows:
            gyy = oracle.green(yy, yy, row["r"]).mid
            rows.append((i, row["r"], row["lower"], row["upper"], row["lower"] * gyy,
                         row["upper"] * gyy))
        summary.append({"config": i, "triple": [x, y, z], "supremum": rep.supremum,
                        "violations": len(rep.violations)})
    ctx.write_csv("ancona.csv", ["config", "r", "lower", "upper", "normalised_lower",
                                 "normalised_upper"], rows)
    ctx.write_json("ancona.json", {"r_grid": grid, "configurations": summary})
    return {"configurations": len(summary)}


def cmd_avoidance(ctx: RunContext) -> dict:
    from .green import avoidance_decay
    p = ctx.params
    rows = avoidance_decay(ctx.mu, p["x"], p["z"], p["center"], p["n_list"], p["r"], p["margin"],
                           p.get("green_ee_upper"))
    ctx.write_csv("avoidance.csv", ["n", "L", "lower", "upper"],
                  [(r["n"], r["L"], r["lower"], r["upper"]) for r in rows])
    from .plotting import line_plot
    ctx.figure("avoidance.png", lambda path: line_plot(
        path, [r["n"] for r in rows], {"G_r(x,z; B(c,n)^c)": [r["lower"] for r in rows]},
        "n", "restricted Green function", logy=True))
    return {"rows": len(rows)}


def cmd_pressure(ctx: RunContext) -> dict:
    from .automaton import build_geodesic_automaton
    from .fits import dyadic_grid
    from .shift import pressure_curve, pressure_sqrt_slope
    p = ctx.params
    oracle = _tree_oracle(ctx)
    grid = list(dyadic_grid(oracle.R, p["j_lo"], p["j_hi"]))
    if p["include_R"]:
        grid.append(oracle.R)
    aut = build_geodesic_automaton(ctx.group)
    table = pressure_curve(aut, oracle, grid, p["m"])
    ctx.write_csv("pressure.csv", ["r", "component", "pressure", "gap"], table.csv_rows())
    fit = pressure_sqrt_slope(table)
    ctx.write_json("pressure.json", {"flags": table.flags, "sqrt_law": fit.to_dict(), "R": oracle.R})
    r, P = table.curve()
    from .plotting import line_plot
    keep = r < oracle.R
    ctx.figure("pressure.png", lambda path: line_plot(
        path, oracle.R - r[keep], {"-P(phi_r)": -P[keep]}, "R - r", "-pressure",
        logx=True, logy=True, slope=(0.5, "slope 1/2")))
    return {"slope": fit.exponent, **table.flags}


def cmd_sphere_sums(ctx: RunContext) -> dict:
    from .automaton import build_geodesic_automaton
    from .green import sphere_H_sums
    from .shift import build_phi_r, operator_sphere_sums
    p = ctx.params
    oracle = _tree_oracle(ctx)
    r = oracle.R if p["r"] is None else p["r"]
    sums = sphere_H_sums(oracle, r, p["k_max"])
    aut = build_geodesic_automaton(ctx.group)
    pot = build_phi_r(aut, oracle, r, p["m"])
    H_ee = oracle.green((), (), r).mid ** 2
    ops = operator_sphere_sums(aut, pot, p["k_max"], H_ee)
    ctx.write_csv("sphere_sums.csv", ["k", "green_kernels", "operator"],
                  [(k, s.mid, o) for k, (s, o) in enumerate(zip(sums, ops))])
    diff = max(abs(s.mid - o) for s, o in zip(sums, ops))
    return {"r": r, "max_difference": diff}


def cmd_eta(ctx: RunContext) -> dict:
    from .asymptotics import eta_samples, eta_scaling_fit
    oracle = _tree_oracle(ctx)
    r, eta = eta_samples(oracle, ctx.params["j_lo"], ctx.params["j_hi"])
    fit = eta_scaling_fit(r, eta, oracle.R, ctx.group.amenable)
    ctx.write_csv("eta.csv", ["r", "eta", "eta_sqrt_R_minus_r"],
                  [(a, b, b * math.sqrt(oracle.R - a)) for a, b in zip(r, eta)])
    ctx.write_json("eta.json", {"fit": fit.to_dict(), "inputs_hash": ctx.hash})
    from .plotting import line_plot
    ctx.figure("eta.png", lambda path: line_plot(path, oracle.R - r, {"eta(r)": eta}, "R - r",
                                                 "eta", logx=True, logy=True,
                                                 slope=(-0.5, "slope -1/2")))
    return {"exponent": fit.exponent, "max_min_ratio": fit.diagnostics["max_min_ratio"]}


def cmd_llt(ctx: RunContext) -> dict:
    from .asymptotics import llt_fit
    p = ctx.params
    series, R, _ = _series(ctx, p["n_max"], p["source"], p["precision"])
    parity = _parity(series, p["parity"])
    fit = llt_fit(series, R, (p["n_lo"], p["n_hi"]), parity, p["template"],
                  tuple(p["plateau"]) if p.get("plateau") else None)
    ctx.write_json("llt.json", {**fit.to_dict(), "inputs_hash": ctx.hash})
    a = np.asarray(series.rescaled(R), dtype=float)
    n = np.arange(len(a))
    sel = (n >= 1) & (a > 0)
    if parity:
        sel &= n % 2 == (0 if parity == "even" else 1)
    ctx.write_csv("llt.csv", ["n", "p_n_R_n"], zip(n[sel], a[sel]))
    from .plotting import line_plot
    ctx.figure("llt.png", lambda path: line_plot(path, n[sel], {"p_n R^n": a[sel]}, "n", "p_n R^n",
                                                 logx=True, logy=True,
                                                 slope=(fit.exponent, f"slope {fit.exponent:.3f}")))
    return {"exponent": fit.exponent}


def cmd_cesaro(ctx: RunContext) -> dict:
    from .asymptotics import cesaro_check
    p = ctx.params
    series, R, _ = _series(ctx, p["n_max"], p["source"], p["precision"])
    rep = cesaro_check(series, R, p["n_list"], p["template"])
    ctx.write_json("cesaro.json", {**rep, "R": R, "inputs_hash": ctx.hash})
    ctx.write_csv("cesaro.csv", ["n", "partial_sum", "ratio"],
                  zip(rep["n"], rep["partial_sums"], rep["ratios"]))
    return {"growth_exponent": rep["growth_exponent"], "mismatch": rep["mismatch"]}


def cmd_renewal(ctx: RunContext) -> dict:
    from .asymptotics import renewal_first_return
    p = ctx.params
    series, R, T = _series(ctx, p["n_max"], p["source"], p["precision"])
    G_R = T.green_e(T.R) if T is not None else None
    ren = renewal_first_return(series, R, G_R)
    rep = ren.ratio_report((p["n_lo"], p["n_hi"]), _parity(series, p["parity"]))
    n = np.arange(ren.last_trusted + 1)
    ctx.write_csv("renewal.csv", ["n", "f_n_R_n", "error", "f_over_p"],
                  zip(n, ren.values[: len(n)], ren.errors[: len(n)], ren.ratio[: len(n)]))
    ctx.write_json("renewal.json", {**rep, "last_trusted": ren.last_trusted,
                                    "reconstruction_error": ren.reconstruction_error,
                                    "total_mass": ren.total_mass, "R": R, "inputs_hash": ctx.hash})
    return rep


def cmd_cocycle(ctx: RunContext) -> dict:
    from .walk import escape_rate, green_cocycle_rate
    p = ctx.params
    oracle = _tree_oracle(ctx)
    esc = escape_rate(ctx.mu, p["escape_n"], p["samples"], ctx.seed, p["level"])
    coc = green_cocycle_rate(ctx.mu, oracle, p["k"], p["samples"], ctx.seed, p["level"])
    out = {"escape_rate": esc.to_dict(), "green_cocycle_rate": coc.to_dict(),
           "ci_excludes_zero": coc.ci[1] < 0 or coc.ci[0] > 0}
    ctx.write_json("cocycle.json", out)
    return {"escape_rate": esc.value, "cocycle": coc.value}


def cmd_validate_automaton(ctx: RunContext) -> dict:
    from .automaton import build_geodesic_automaton, read_automaton, validate_automaton, write_automaton
    p = ctx.params
    if p.get("automaton"):
        aut = read_automaton(p["automaton"])
    else:
        aut = build_geodesic_automaton(ctx.group, p.get("cone_radius"), p["depth"])
    rep = validate_automaton(aut, ctx.group, p["N"])
    write_automaton(aut, ctx.out / "automaton.txt")
    ctx.artifacts.append("automaton.txt")
    ctx.write_json("validation.json", rep.to_dict())
    ctx.write_csv("validation.csv", ["n", "paths", "sphere", "injective", "missing"],
                  [(r["n"], r["paths"], r["sphere"], r["injective"], r["missing"]) for r in rep.rows])
    if not rep.passed:
        ctx.status = "fail"
    return {"passed": rep.passed, "states": aut.n_states,
            "counterexamples": rep.counterexamples[:5]}


_SERIES = {"source": "auto", "precision": "extended", "parity": "auto"}

COMMANDS: dict[str, tuple[Callable, dict, str]] = {
    "spheres": (cmd_spheres, {"radius": 8}, "sphere sizes |S_n|"),
    "pn": (cmd_pn, {"n_max": 12, "prune_eps": 0.0}, "return probabilities p_n(e,e)"),
    "spectral-radius": (cmd_spectral_radius, {"n_max": 22, "order": 6, "prune_eps": 0.0},
                        "spectral radius estimate"),
    "green": (cmd_green, {"r": 1.0, "pairs": [["", "a"]], "backend": "auto", "n_max": 10},
              "Green and first-visit values"),
    "ancona": (cmd_ancona, {"triples": [["", "a", "ab"], ["A", "", "b"]], "r_grid": None,
                            "backend": "auto", "n_max": 10}, "Ancona ratios across r"),
    "avoidance": (cmd_avoidance, {"x": "AAAAA", "z": "aaaaa", "center": "", "n_list": [2, 3, 4],
                                  "r": 1.0, "margin": 2, "green_ee_upper": None},
                  "restricted Green functions avoiding balls"),
    "pressure": (cmd_pressure, {"j_lo": 4, "j_hi": 12, "include_R": True, "m": 3},
                 "pressure of phi_r along r"),
    "sphere-sums": (cmd_sphere_sums, {"r": None, "k_max": 12, "m": 4},
                    "sphere sums of H_r, kernel and operator routes"),
    "eta": (cmd_eta, {"j_lo": 6, "j_hi": 14}, "eta(r) scaling near R"),
    "llt": (cmd_llt, {"n_max": 4000, "n_lo": 200, "n_hi": 2000, "template": 1.5,
                      "plateau": [500, 2000], **_SERIES}, "local limit exponent fit"),
    "cesaro": (cmd_cesaro, {"n_max": 4000, "n_list": [500, 1000, 2000, 4000], "template": 0.5,
                            **_SERIES}, "Cesaro partial sums"),
    "renewal": (cmd_renewal, {"n_max": 2000, "n_lo": 500, "n_hi": 2000, **_SERIES},
                "first-return probabilities via the renewal equation"),
    "cocycle": (cmd_cocycle, {"k": 400, "samples": 500, "escape_n": 400, "level": 0.99},
                "escape rate and Green cocycle Monte Carlo"),
    "validate-automaton": (cmd_validate_automaton, {"N": 8, "automaton": None, "depth": 3,
                                                    "cone_radius": None},
                           "validate a geodesic automaton"),
}

TOP_LEVEL = {"group": {"kind": "free", "rank": 2}, "measure": {"preset": "srw"}, "seed": 0,
             "workers": 1, "output_dir": "hypwalk-out", "cache_dir": None, "figures": True}


# ---------------------------------------------------------------------------
# argument handling


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise ConfigError(f"{self.prog}: {message}")


def _value(text: str):
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="hypwalk", description=__doc__.split("\n\n")[0],
                     epilog="Precedence: flags > config file > defaults.")
    parser.add_argument("--version", action="version", version=f"hypwalk {__version__}")
    sub = parser.add_subparsers(dest="command", metavar="COMMAND", parser_class=_Parser)
    run = sub.add_parser("run", help="execute the command named in a config file")
    run.add_argument("config", help="JSON run configuration")
    _common(run, with_config=False)
    run.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                     help="override a params entry")
    for name, (_, defaults, help_) in COMMANDS.items():
        p = sub.add_parser(name, help=help_, description=help_,
                           epilog="Precedence: flags > config file > defaults.")
        _common(p, with_config=True)
        for key, default in defaults.items():
            flags = [f"--{key}"] + ([f"--{key.replace('_', '-')}"] if "_" in key else [])
            p.add_argument(*flags, dest=f"param_{key}", type=_value, default=None,
                           help=f"default: {json.dumps(default)}")
    return parser


def _common(p, with_config: bool):
    if with_config:
        p.add_argument("--config", help="JSON run configuration")
    p.add_argument("--group", type=_value, default=None, help="group spec as JSON")
    p.add_argument("--measure", type=_value, default=None, help="measure spec as JSON")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--workers", type=int, default=None)
    p.add_argument("--out", "--output_dir", "--output-dir", dest="output_dir", default=None)
    p.add_argument("--cache-dir", "--cache_dir", dest="cache_dir", default=None,
                   help=f"distribution cache (default: ${CACHE_ENV} if set)")
    p.add_argument("--no-figures", dest="figures", action="store_false", default=None)


def resolve_config(args) -> dict:
    """Merge defaults, the config file and flags into one validated config."""
    file_cfg: dict = {}
    path = getattr(args, "config", None)
    if path:
        try:
            file_cfg = json.loads(Path(path).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        if not isinstance(file_cfg, dict):
            raise ConfigError("config must be a JSON object")
    command = args.command
    if command == "run":
        command = file_cfg.get("command")
        if command is None:
            raise ConfigError("config has no 'command' field")
    elif file_cfg.get("command") not in (None, command):
        raise ConfigError(f"config names command {file_cfg['command']!r}, not {command!r}")
    if command not in COMMANDS:
        raise ConfigError(f"unknown command {command!r}")
    cfg = {"schema_version": SCHEMA_VERSION, "command": command}
    for key, default in TOP_LEVEL.items():
        cfg[key] = file_cfg.get(key, default)
    for key in ("group", "measure", "seed", "workers", "output_dir", "cache_dir", "figures"):
        val = getattr(args, key, None)
        if val is not None:
            cfg[key] = val
    if cfg["cache_dir"] is None and os.environ.get(CACHE_ENV):
        cfg["cache_dir"] = os.environ[CACHE_ENV]
    params = dict(COMMANDS[command][1])
    params.update(file_cfg.get("params", {}))
    for key in COMMANDS[command][1]:
        val = getattr(args, f"param_{key}", None)
        if val is not None:
            params[key] = val
    for item in getattr(args, "set", []) or []:
        key, sep, val = item.partition("=")
        if not sep:
            raise ConfigError(f"--set expects KEY=VALUE, got {item!r}")
        params[key] = _value(val)
    unknown = set(params) - set(COMMANDS[command][1])
    if unknown:
        raise ConfigError(f"unknown parameters for {command}: {sorted(unknown)}")
    cfg["params"] = params
    try:
        jsonschema.validate(cfg, load_schema())
    except jsonschema.ValidationError as exc:
        raise ConfigError(f"invalid config: {exc.message}") from exc
    return cfg


def _exit_code(exc: BaseException) -> int:
    if isinstance(exc, PreconditionError):
        return 2
    if isinstance(exc, (ResourceError, PrecisionError, NonConvergenceError, MemoryError)):
        return 3
    return 1


def execute(cfg: dict) -> tuple[int, dict]:
    """Run a resolved config; returns the exit code and the manifest."""
    out = Path(cfg["output_dir"])
    out.mkdir(parents=True, exist_ok=True)
    h = config_hash(cfg)
    manifest = {"command": cfg["command"], "config": cfg, "config_hash": h,
                "versions": {"hypwalk": __version__, "numpy": np.__version__,
                             "scipy": scipy.__version__, "python": platform.python_version()},
                "started": time.strftime("%Y-%m-%dT%H:%M:%S%z")}
    code = 0
    ctx = None
    try:
        group = group_from_dict(cfg["group"])
        mu = measure_from_config(cfg["measure"], group)
        cache = DistributionCache(cfg["cache_dir"]) if cfg["cache_dir"] else None
        ctx = RunContext(cfg, group, mu, cfg["params"], out, cfg["seed"], cfg["figures"], cache, h)
        func = COMMANDS[cfg["command"]][0]
        manifest["result"] = func(ctx)
        manifest["status"] = ctx.status
        if ctx.status == "fail":
            code = 2
    except (HypwalkError, MemoryError, ValueError, KeyError) as exc:
        code = _exit_code(exc)
        if isinstance(exc, (ValueError, KeyError)) and not isinstance(exc, HypwalkError):
            code = 1
        manifest["status"] = "error"
        manifest["error"] = {"type": type(exc).__name__, "message": str(exc),
                             "diagnostics": getattr(exc, "diagnostics", None)}
        print(f"hypwalk: {type(exc).__name__}: {exc}", file=sys.stderr)
    manifest["exit_code"] = code
    manifest["artifacts"] = ctx.artifacts if ctx else []
    manifest["cache_keys"] = sorted(set(ctx.cache.keys_used)) if ctx and ctx.cache else []
    manifest["finished"] = time.strftime("%Y-%m-%dT%H:%M:%S%z")
    (out / "manifest.json").write_text(json.dumps(_clean(manifest), indent=2, sort_keys=True) + "\n")
    return code, manifest


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if args.command is None:
            parser.print_help(sys.stderr)
            return 1
        cfg = resolve_config(args)
    except ConfigError as exc:
        print(f"hypwalk: {exc}", file=sys.stderr)
        return 1
    code, _ = execute(cfg)
    return code


if __name__ == "__main__":
    sys.exit(main())
