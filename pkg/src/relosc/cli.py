"""Command-line front end: ``relosc <command> --config FILE [--seed k] [--out DIR] [--threads m]``.

Config files are INI-style::

    # comments start with '#' or ';'
    [instance]
    builtin = cosine-desk        # or give n, T, L, F, G, H, alpha, q, gamma_side, v, w inline
    [params]
    lambda = 0
    mu = 1
    [options]
    N = 64
    starts = 32

Keys in [instance] next to ``builtin`` override the stored description.
Exit status: 0 success, 1 a check failed, 2 a numerical fault, 3 a bad config.
"""
from __future__ import annotations

import argparse
import json
import math
import sys
from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import Optional

import numpy as np

from .dsl import DSLSyntaxError, parse_field
from .model import InstanceError, builtin_instance, builtin_names, instance_from_mapping
from .optimize import MinimizeOptions

EXIT_OK, EXIT_CHECK, EXIT_FAULT, EXIT_CONFIG = 0, 1, 2, 3
COMMANDS = ("solve", "scan", "search", "verify", "probe-uniqueness", "probe-conjecture",
            "list-instances", "validate")
SECTIONS = ("instance", "params", "options")
INSTANCE_KEYS = ("builtin", "name", "n", "T", "L", "F", "G", "H", "alpha", "q", "gamma_side", "v", "w")
PARAM_KEYS = ("lambda", "mu", "lambda_min", "lambda_max", "mu_min", "mu_max", "lambda_steps", "mu_steps",
              "lambdas", "mus", "rho_ref", "samples", "floor_runs", "floor_N", "jump_threshold")
OPTION_KEYS = tuple(f.name for f in fields(MinimizeOptions))


class ConfigError(ValueError):
    def __init__(self, message: str, line: int = 0, column: int = 0):
        self.line = line
        self.column = column
        super().__init__(f"line {line}, column {column}: {message}" if line else message)


@dataclass
class RunConfig:
    instance: dict = field(default_factory=dict)
    params: dict = field(default_factory=dict)
    options: dict = field(default_factory=dict)
    lines: dict = field(default_factory=dict, compare=False, repr=False)  # (section, key) -> (line, col)

    def to_text(self) -> str:
        out = []
        for sec in SECTIONS:
            d = getattr(self, sec)
            if not d:
                continue
            out.append(f"[{sec}]")
            out.extend(f"{k} = {v}" for k, v in d.items())
            out.append("")
        return "\n".join(out)

    def where(self, section, key):
        return self.lines.get((section, key), (0, 0))


def parse_config(text: str) -> RunConfig:
    """Parse INI-style text, keeping line/column of every key for diagnostics."""
    cfg = RunConfig()
    section = None
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].split(";", 1)[0].rstrip()
        if not line.strip():
            continue
        col = len(line) - len(line.lstrip()) + 1
        body = line.strip()
        if body.startswith("["):
            if not body.endswith("]"):
                raise ConfigError("unterminated section header", lineno, col)
            section = body[1:-1].strip()
            if section not in SECTIONS:
                raise ConfigError(f"unknown section [{section}]", lineno, col)
            continue
        if "=" not in body:
            raise ConfigError("expected 'key = value'", lineno, col)
        if section is None:
            raise ConfigError("key outside of any section", lineno, col)
        key, value = (s.strip() for s in body.split("=", 1))
        allowed = {"instance": INSTANCE_KEYS, "params": PARAM_KEYS, "options": OPTION_KEYS}[section]
        if key not in allowed:
            raise ConfigError(f"unknown key {key!r} in [{section}]", lineno, col)
        target = getattr(cfg, section)
        if key in target:
            raise ConfigError(f"duplicate key {key!r}", lineno, col)
        target[key] = value
        cfg.lines[(section, key)] = (lineno, col + raw.lstrip().find("=") + 1)
    return cfg


def _floats(text):
    return [float(x) for x in str(text).replace(",", " ").split()]


def _number(cfg, section, key, default=None, kind=float):
    d = getattr(cfg, section)
    if key not in d:
        if default is None:
            line, col = (0, 0)
            raise ConfigError(f"missing [{section}] {key}", line, col)
        return default
    try:
        return kind(d[key])
    except ValueError:
        line, col = cfg.where(section, key)
        raise ConfigError(f"{key} = {d[key]!r} is not a valid {kind.__name__}", line, col) from None


def build_instance(cfg: RunConfig):
    d = dict(cfg.instance)
    try:
        if "builtin" in d:
            name = d.pop("builtin")
            if name not in builtin_names():
                line, col = cfg.where("instance", "builtin")
                raise ConfigError(f"unknown builtin instance {name!r}", line, col)
            over = {k: (_floats(v) if k in ("v", "w") else v) for k, v in d.items()}
            return builtin_instance(name, **over)
        for req in ("n", "F", "q"):
            if req not in d:
                raise ConfigError(f"missing [instance] {req}")
        for k in ("v", "w"):
            if k in d:
                d[k] = _floats(d[k])
        return instance_from_mapping(d)
    except DSLSyntaxError as exc:
        key = next((k for k in ("F", "G", "H", "alpha") if cfg.instance.get(k, "").strip() == exc.source), None)
        line, col = cfg.where("instance", key) if key else (0, 0)
        raise ConfigError(f"expression error: {exc}", line, col + exc.position if line else 0) from None
    except (InstanceError, ValueError) as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError(str(exc)) from None


def build_options(cfg: RunConfig, seed=None, threads=None) -> MinimizeOptions:
    kinds = {f.name: f.type for f in fields(MinimizeOptions)}
    kw = {}
    for k, v in cfg.options.items():
        kind = int if "int" in str(kinds[k]) else float
        kw[k] = None if v.lower() == "none" else _number(cfg, "options", k, kind=kind)
    if seed is not None:
        kw["seed"] = seed
    if threads is not None:
        kw["threads"] = threads
    try:
        return MinimizeOptions(**kw)
    except ValueError as exc:
        raise ConfigError(str(exc)) from None


def validate(cfg: RunConfig) -> list:
    """Static diagnostics (no optimization): returns [(check, ok, detail)]."""
    diags = []
    for key in ("F", "G", "H", "alpha"):
        src = cfg.instance.get(key)
        if src is None:
            continue
        n = 0 if key == "alpha" else int(cfg.instance.get("n", 1) or 1)
        try:
            parse_field(src, n)
            diags.append((f"parse {key}", True, src))
        except DSLSyntaxError as exc:
            line, col = cfg.where("instance", key)
            diags.append((f"parse {key}", False, f"{exc} (config line {line})"))
    try:
        inst = build_instance(cfg)
    except ConfigError as exc:
        diags.append(("instance", False, str(exc)))
        return diags
    diags.append(("instance", True, inst.name))
    for name, (ok, detail) in inst.check().items():
        diags.append((name, ok, detail))
    return diags


# ---------------------------------------------------------------- outputs

def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, (np.floating, float)):
        x = float(obj)
        return x if math.isfinite(x) else repr(x)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.bool_,)):
        return bool(obj)
    return obj


class Output:
    def __init__(self, out: Path):
        self.root = out
        self.files = {}

    def add(self, rel: str, text: str):
        self.files[rel] = text

    def path(self, rel, p):
        self.add(f"paths/{rel}.csv", p.to_csv())
        lines = [f"{float(t)!r} " + " ".join(repr(float(c)) for c in row)
                 for t, row in zip(np.append(p.times, p.T), np.vstack([p.nodes, p.nodes[:1]]))]
        self.add(f"plot/{rel}.dat", "# t x1..xn\n" + "\n".join(lines) + "\n")

    def write(self):
        for rel, text in sorted(self.files.items()):
            f = self.root / rel
            f.parent.mkdir(parents=True, exist_ok=True)
            f.write_text(text)


def _params(cfg, key, default=None, kind=float):
    return _number(cfg, "params", key, default, kind)


def _cmd_solve(cfg, inst, opts, out):
    from .optimize import multistart

    rep = multistart(inst, _params(cfg, "lambda", 0.0), _params(cfg, "mu", 0.0), opts)
    for i, c in enumerate(rep.clusters):
        out.path(f"cluster_{i}", c.representative)
    return rep.to_dict(), EXIT_OK


def _grid(cfg):
    lam = (_params(cfg, "lambda_min", -1.0), _params(cfg, "lambda_max", 1.0))
    mu = (_params(cfg, "mu_min", 0.5), _params(cfg, "mu_max", 2.0))
    steps = (_params(cfg, "lambda_steps", 5, int), _params(cfg, "mu_steps", 4, int))
    return lam, mu, steps


def _jump(cfg):
    return _params(cfg, "jump_threshold", -1.0) if "jump_threshold" in cfg.params else None


def _cmd_scan(cfg, inst, opts, out):
    from .multiplicity import scan_plane

    lam, mu, steps = _grid(cfg)
    res = scan_plane(inst, lam, mu, steps, opts, _jump(cfg))
    out.add("scan.csv", res.to_csv())
    rows = []
    for j, m in enumerate(res.mus):
        for i, l in enumerate(res.lambdas):
            rows.append(f"{float(l)!r} {float(m)!r} {float(res.sample(i, j).beta)!r}")
        rows.append("")
    out.add("plot/beta.dat", "# lambda mu beta (gnuplot splot blocks)\n" + "\n".join(rows) + "\n")
    faults = [s.fault for s in res.samples if s.fault]
    return {"lambdas": res.lambdas, "mus": res.mus, "flags": res.flags,
            "jumps": [list(j) for j in res.jumps], "faults": faults}, EXIT_OK


def _cmd_search(cfg, inst, opts, out):
    from .multiplicity import NoJumpFound, find_two_minima

    lam, mu, steps = _grid(cfg)
    try:
        cert = find_two_minima(inst, lam, mu, steps if "lambda_steps" in cfg.params else (4, 3), opts, _jump(cfg))
    except NoJumpFound as exc:
        return {"certificate": None, "message": str(exc)}, EXIT_CHECK
    out.path("path_a", cert.path_a)
    out.path("path_b", cert.path_b)
    return {"certificate": cert.to_dict()}, EXIT_OK if cert.exact else EXIT_CHECK


def _cmd_verify(cfg, inst, opts, out):
    from .multiplicity import WitnessError, nonconvexity_check
    from .optimize import multistart
    from .verify import coercivity_check, growth_constants

    lam, mu = _params(cfg, "lambda", 0.0), _params(cfg, "mu", 0.0)
    report, ok = {}, True
    rho = _params(cfg, "rho_ref", 0.0) if "rho_ref" in cfg.params else None
    gc = growth_constants(inst, lam, mu, rho)
    problems = gc.problems(inst.phi.min_value)
    report["growth"] = {"constants": gc.to_dict(), "problems": problems}
    ok &= not problems
    co = coercivity_check(inst, lam, mu, gc, _params(cfg, "samples", 1000, int), seed=opts.seed)
    report["coercivity"] = co.to_dict()
    ok &= co.ok
    rep = multistart(inst, lam, mu, opts)
    report["residuals"] = [{"value": c.value, "residual": c.residual, "global": i in rep.global_set}
                           for i, c in enumerate(rep.clusters)]
    checks = inst.check()
    report["instance_checks"] = {k: {"ok": v[0], "detail": v[1]} for k, v in checks.items()}
    if checks["a2_integrals_differ"][0]:
        try:
            nc = nonconvexity_check(inst, opts, floor_runs=_params(cfg, "floor_runs", 2000, int),
                                    floor_N=_params(cfg, "floor_N", 16, int), seed=opts.seed)
            report["nonconvexity"] = nc.to_dict()
        except WitnessError as exc:
            report["nonconvexity"] = {"error": str(exc)}
    for i, (_, p, *_rest) in enumerate(co.violations[:10]):
        out.path(f"violation_{i}", p)
    return report, EXIT_OK if ok else EXIT_CHECK


def _cmd_probe_uniqueness(cfg, inst, opts, out):
    from .verify import uniqueness_probe

    lams = _floats(cfg.params.get("lambdas", "-2 -1 0 1 2"))
    rows = uniqueness_probe(inst, lams, _params(cfg, "mu", 0.0), opts)
    flagged = any(r.flagged for r in rows)
    return {"rows": [r.to_dict() for r in rows], "flagged": flagged}, EXIT_CHECK if flagged else EXIT_OK


def _cmd_probe_conjecture(cfg, inst, opts, out):
    from .verify import conjecture_probe

    mus = _floats(cfg.params.get("mus", "0.1 1 10"))
    return conjecture_probe(inst, mus, opts).to_dict(), EXIT_OK


HANDLERS = {
    "solve": _cmd_solve, "scan": _cmd_scan, "search": _cmd_search, "verify": _cmd_verify,
    "probe-uniqueness": _cmd_probe_uniqueness, "probe-conjecture": _cmd_probe_conjecture,
}


def run(command: str, cfg: Optional[RunConfig], out_dir="out", seed=None, threads=None, stdout=None) -> int:
    """Execute one command; writes report.json and friends under ``out_dir``; returns the exit status."""
    stdout = stdout or sys.stdout
    out = Output(Path(out_dir))
    if command == "list-instances":
        for name in builtin_names():
            print(name, file=stdout)
        out.add("report.json", json.dumps({"command": command, "instances": builtin_names()}, indent=2) + "\n")
        out.write()
        return EXIT_OK
    cfg = cfg or RunConfig()
    if command == "validate":
        diags = validate(cfg)
        for name, ok, detail in diags:
            print(f"{'ok  ' if ok else 'FAIL'} {name}: {detail}", file=stdout)
        out.add("report.json", json.dumps(_jsonable({"command": command, "diagnostics": diags}),
                                          indent=2, sort_keys=True) + "\n")
        out.write()
        return EXIT_OK if all(ok for _, ok, _ in diags) else EXIT_CHECK
    try:
        inst = build_instance(cfg)
        opts = build_options(cfg, seed, threads)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    try:
        result, status = HANDLERS[command](cfg, inst, opts, out)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (ArithmeticError, RuntimeError, InstanceError, ValueError) as exc:
        print(f"fault: {type(exc).__name__}: {exc}", file=sys.stderr)
        result, status = {"fault": f"{type(exc).__name__}: {exc}"}, EXIT_FAULT
    report = {"command": command, "instance": inst.to_mapping(), "options": opts.to_dict(),
              "seed": opts.seed, "exit_status": status, "result": result}
    out.add("report.json", json.dumps(_jsonable(report), indent=2, sort_keys=True) + "\n")
    out.write()
    print(f"{command}: exit {status}, report in {out.root / 'report.json'}", file=stdout)
    return status


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(prog="relosc", description=__doc__.split("\n\n")[0])
    ap.add_argument("command", choices=COMMANDS)
    ap.add_argument("--config", help="INI config file (not needed for list-instances)")
    ap.add_argument("--seed", type=int)
    ap.add_argument("--out", default="out")
    ap.add_argument("--threads", type=int)
    args = ap.parse_args(argv)
    cfg = None
    if args.command != "list-instances":
        if not args.config:
            print("config error: --config is required", file=sys.stderr)
            return EXIT_CONFIG
        try:
            cfg = parse_config(Path(args.config).read_text())
        except OSError as exc:
            print(f"config error: {exc}", file=sys.stderr)
            return EXIT_CONFIG
        except ConfigError as exc:
            print(f"config error: {exc}", file=sys.stderr)
            return EXIT_CONFIG
    return run(args.command, cfg, args.out, args.seed, args.threads)


if __name__ == "__main__":
    sys.exit(main())
