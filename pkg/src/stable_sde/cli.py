"""Command-line front end: ``stable-sde <command> [--config FILE] [flags]``.

Every run writes ``<command>.json`` (summary with the resolved config, its
hash and the seed), CSV tables each with a ``.meta.json`` sidecar, and a
``manifest.json`` of SHA-256 digests that ``stable-sde verify DIR`` re-checks.

Exit codes: 0 success, 1 invalid input, 2 result flagged unreliable.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import logging
import math
import sys
import time
from pathlib import Path
from typing import Callable

import numpy as np
import tomli

from . import __version__
from .config import BOUNDARY_FUNCTIONS, COMMANDS, ConfigError, RunConfig
from .engine import simulate_path, write_path_dump
from .estimators import (MCEstimate, estimate_exit_moments, estimate_harmonic, estimate_hitting,
                         estimate_occupation, estimate_single_jump_steering,
                         estimate_tube_probability, fit_hoelder, result_record)
from .expr import ExpressionError
from .field import QuadratureError, generator_check
from .harnack import RATIO_HEADER, check_ratio_curve, occupation_scaling, ratio_curve
from .stable_driver import driver_increments
from .steering import TubeSpec

log = logging.getLogger("stable_sde")

EXIT_OK, EXIT_INVALID, EXIT_FLAGGED = 0, 1, 2
FLAGS_UNRELIABLE = {"unreliable", "lower-bound", "horizon-sensitive", "dt-sensitive",
                    "ecf-mismatch", "generator-mismatch"}
GENERATOR_TOLERANCE = 1e-3
ECF_SLACK = 0.005


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(f"{self.prog}: error: {message}")


def _toml_value(text: str):
    try:
        return tomli.loads(f"v = {text}")["v"]
    except tomli.TOMLDecodeError:
        return text


def _float_list(text: str) -> list[float]:
    try:
        return [float(v) for v in text.split(",") if v.strip()]
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from exc


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="TOML run configuration")
    common.add_argument("--seed", type=int, help="master seed (else $STABLE_SDE_SEED, else 0)")
    common.add_argument("--n", type=int, help="number of paths / samples")
    common.add_argument("--threads", type=int, help="cap on worker threads")
    common.add_argument("--out", help="output directory")
    common.add_argument("--alpha", type=float, help="stability index in (0, 2)")
    common.add_argument("--dt", type=float, help="base time step")
    common.add_argument("--mode", choices=["fixed", "jump-adapted"], help="path scheme")
    common.add_argument("--beta", type=float, help="large-jump cut (jump-adapted mode)")
    common.add_argument("--x0", type=_float_list, help="start point, comma separated")
    common.add_argument("--eps", type=_float_list, help="eps value(s), comma separated")
    common.add_argument("--set", action="append", default=[], metavar="SECTION.KEY=VALUE",
                        help="override any config key; VALUE uses TOML syntax")
    common.add_argument("--timing", action="store_true",
                        help="record wall-clock runtime in the JSON (breaks byte-identity)")
    common.add_argument("-v", "--verbose", action="store_true")

    parser = _Parser(prog="stable-sde", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", metavar="command", parser_class=_Parser)
    helps = {
        "sample": "driver increments and their empirical characteristic function",
        "simulate": "dump sample paths as CSV",
        "exit-time": "mean exit time and exit-time tail",
        "occupation": "expected occupation time of a sub-region before exit",
        "steering": "single-jump steering probability",
        "tube": "probability of staying in a tube around a polygonal path",
        "hitting": "probability of hitting a target before leaving a container",
        "harmonic": "harmonic function values on a grid",
        "hoelder": "harmonic estimate plus a Hoelder exponent fit",
        "harnack": "ratio curve of the Harnack counterexample",
        "scaling-check": "occupation scaling of the thin tube in the plane",
        "generator-check": "quadrature generator against the symbol on constant fields",
    }
    for name in COMMANDS:
        sub.add_parser(name, parents=[common], help=helps[name], description=helps[name])
    ver = sub.add_parser("verify", help="re-check output digests and config hashes")
    ver.add_argument("directory")
    return parser


def _overrides(args) -> dict:
    ov: dict = {}
    direct = {"seed": "run.seed", "n": "run.n", "threads": "run.threads", "out": "output.directory",
              "alpha": "model.alpha", "dt": "scheme.dt", "mode": "scheme.mode",
              "beta": "scheme.beta"}
    for attr, key in direct.items():
        v = getattr(args, attr)
        if v is not None:
            ov[key] = v
    if args.x0 is not None:
        ov["task.x0"] = args.x0
    if args.eps is not None:
        ov["task.eps"] = args.eps if args.command in ("harnack", "scaling-check") else args.eps[0]
    for item in args.set:
        key, sep, value = item.partition("=")
        if not sep or "." not in key:
            raise ConfigError(f"--set expects SECTION.KEY=VALUE, got {item!r}")
        ov[key.strip()] = _toml_value(value.strip())
    return ov


# --- output ---------------------------------------------------------------------

def _sha256(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def _fmt(v):
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    if isinstance(v, np.integer):
        return str(int(v))
    return v


class OutputWriter:
    """Single writer for one run's output directory."""

    def __init__(self, cfg: RunConfig):
        self.cfg = cfg
        self.dir = Path(cfg.data["output"]["directory"])
        self.dir.mkdir(parents=True, exist_ok=True)
        self.files: list[Path] = []
        self.csv_enabled = "csv" in cfg.data["output"]["formats"]

    def _stamp(self) -> dict:
        return {"config_hash": self.cfg.hash, "seed": self.cfg.seed}

    def json(self, name: str, payload: dict) -> Path:
        path = self.dir / name
        body = {**self._stamp(), **payload}
        path.write_text(json.dumps(_clean(body), indent=2, sort_keys=True, allow_nan=True) + "\n")
        self.files.append(path)
        return path

    def csv(self, name: str, header: list[str], rows) -> Path | None:
        if not self.csv_enabled:
            return None
        path = self.dir / name
        with path.open("w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(header)
            for row in rows:
                w.writerow([_fmt(v) for v in row])
        self.files.append(path)
        self.json(path.stem + ".meta.json", {"table": name, "columns": header})
        return path

    def register(self, path: Path):
        self.files.append(Path(path))

    def manifest(self):
        files = {p.name: _sha256(p) for p in self.files}
        body = {**self._stamp(), "command": self.cfg.command, "files": files}
        (self.dir / "manifest.json").write_text(json.dumps(body, indent=2, sort_keys=True) + "\n")


def _clean(obj):
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _clean(obj.tolist())
    if isinstance(obj, (np.floating,)):
        return float(obj)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, np.bool_):
        return bool(obj)
    return obj


# --- commands ---------------------------------------------------------------------

def _record(op, cfg: RunConfig, est: MCEstimate, runtime, **extra) -> dict:
    return result_record(op, cfg.task, est, runtime, **extra)


def cmd_sample(cfg: RunConfig, out: OutputWriter, runtime) -> list[str]:
    params, d, t = cfg.params(), cfg.dimension, cfg.task
    dt = float(t["dt"])
    z = driver_increments(params, dt, cfg.n, d, cfg.seed, 0)
    rows, flags = [], []
    for u in t["u"]:
        c = np.cos(float(u) * z[:, 0])
        est = MCEstimate.from_samples(c, cfg.seed)
        exact = math.exp(-dt * abs(params.scale * float(u)) ** params.alpha)
        ok = abs(est.mean - exact) <= 3.0 * est.stderr + ECF_SLACK
        rows.append([float(u), est.mean, est.stderr, exact, ok])
        if not ok and "ecf-mismatch" not in flags:
            flags.append("ecf-mismatch")
    out.csv("sample_ecf.csv", ["u", "ecf", "stderr", "exact", "within_tolerance"], rows)
    if t["write_samples"]:
        out.csv("sample_increments.csv", ["index"] + [f"z{j + 1}" for j in range(d)],
                ([i, *z[i]] for i in range(len(z))))
    out.json("sample.json", {"op": "sample", "params": cfg.task, "n": cfg.n, "d": d,
                             "ecf": [dict(zip(["u", "ecf", "stderr", "exact", "ok"], r)) for r in rows],
                             "flags": flags, "runtime_s": runtime()})
    return flags


def cmd_simulate(cfg: RunConfig, out: OutputWriter, runtime) -> list[str]:
    f, params, sch, t = cfg.field(), cfg.params(), cfg.scheme(), cfg.task
    x0 = cfg.point(t["x0"])
    dom = cfg.domain(t["domain"])
    paths = [simulate_path(f, params, x0, float(t["horizon"]), sch, cfg.seed, i, dom)
             for i in range(cfg.n)]
    flags = ["step-cap"] if any(p.truncated for p in paths) else []
    path = write_path_dump(paths, out.dir / "paths.csv",
                           {"config_hash": cfg.hash, "seed": cfg.seed, "field_hash": f.digest,
                            "scheme": sch.describe()})
    out.register(path)
    out.register(path.with_suffix(".meta.json"))
    finals = np.array([p.states[-1] for p in paths])
    out.json("simulate.json", {"op": "simulate", "params": cfg.task, "n": cfg.n,
                               "jumps": int(sum(len(p.jumps) for p in paths)),
                               "exited": int(sum(p.metadata["exited"] for p in paths)),
                               "final_mean": finals.mean(axis=0), "flags": flags,
                               "runtime_s": runtime()})
    return flags


def cmd_exit_time(cfg: RunConfig, out: OutputWriter, runtime) -> list[str]:
    t = cfg.task
    res = estimate_exit_moments(cfg.field(), cfg.params(), cfg.point(t["x0"]), cfg.domain(t["domain"]),
                                cfg.scheme(), cfg.n, cfg.seed, cfg.t_cap, int(t["m_max"]),
                                bool(t["refine"]))
    out.csv("exit-time_tail.csv", ["m", "p", "stderr"], res.tail)
    extra = {"tail": [{"m": m, "p": p, "stderr": s} for m, p, s in res.tail]}
    if res.coarse_mean is not None:
        extra.update(coarse_mean=res.coarse_mean.mean, coarse_stderr=res.coarse_mean.stderr,
                     extrapolated=res.extrapolated, dt_shift_in_stderr=res.dt_shift_in_stderr)
    out.json("exit-time.json", _record("exit-time", cfg, res.mean, runtime(), **extra))
    return res.mean.flags


def cmd_occupation(cfg: RunConfig, out: OutputWriter, runtime) -> list[str]:
    t = cfg.task
    est = estimate_occupation(cfg.field(), cfg.params(), cfg.domain(t["domain"]),
                              cfg.domain(t["region"]), cfg.point(t["x0"]), cfg.scheme(), cfg.n,
                              cfg.seed, cfg.t_cap, bool(t["refine"]))
    out.json("occupation.json", _record("occupation", cfg, est, runtime()))
    return est.flags


def cmd_steering(cfg: RunConfig, out: OutputWriter, runtime) -> list[str]:
    t = cfg.task
    sch = cfg.scheme() if cfg.data["scheme"]["mode"] == "jump-adapted" else None
    est = estimate_single_jump_steering(cfg.field(), cfg.params(), cfg.point(t["x0"]),
                                        int(t["axis"]), float(t["r"]), float(t["gamma"]),
                                        float(t["t0"]), cfg.n, cfg.seed, sch)
    lo, hi = est.ci(0.99)
    out.json("steering.json", _record("steering", cfg, est, runtime(), ci99=[lo, hi]))
    return est.flags


def _tube_spec(cfg: RunConfig) -> TubeSpec:
    t = cfg.task
    d = cfg.dimension
    verts = t["vertices"]
    if verts is None:
        x0 = cfg.point(t.get("x0"))
        verts = [x0, x0 + 0.5 * np.eye(d)[0]]
    return TubeSpec.from_arrays(t["times"], verts, float(t["eps"]), t["t0"])


def cmd_tube(cfg: RunConfig, out: OutputWriter, runtime) -> list[str]:
    est = estimate_tube_probability(cfg.field(), cfg.params(), _tube_spec(cfg), cfg.scheme(),
                                    cfg.n, cfg.seed)
    lo, hi = est.ci(0.99)
    out.json("tube.json", _record("tube", cfg, est, runtime(), ci99=[lo, hi]))
    return est.flags


def cmd_hitting(cfg: RunConfig, out: OutputWriter, runtime) -> list[str]:
    t = cfg.task
    d = cfg.dimension
    starts = [np.zeros(d)] if t["starts"] is None else [cfg.point(s) for s in t["starts"]]
    target, container = cfg.domain(t["target"]), cfg.domain(t["container"])
    f, params, sch = cfg.field(), cfg.params(), cfg.scheme()
    results, rows, flags = [], [], []
    for i, x in enumerate(starts):
        est = estimate_hitting(f, params, target, container, x, sch, cfg.n, cfg.seed, cfg.t_cap)
        lo, _ = est.ci(0.99)
        results.append({**est.to_dict(), "start": x, "ci99_low": lo})
        rows.append([i, *x, est.mean, est.stderr, lo])
        flags += [fl for fl in est.flags if fl not in flags]
    out.csv("hitting.csv", ["start", *[f"x{j + 1}" for j in range(d)], "mean", "stderr", "ci99_low"],
            rows)
    means = [r["mean"] for r in results]
    out.json("hitting.json", {"op": "hitting", "params": t, "results": results,
                              "min_mean": min(means), "n": cfg.n, "flags": flags,
                              "runtime_s": runtime()})
    return flags


def _grid(cfg: RunConfig) -> np.ndarray:
    t = cfg.task
    d = cfg.dimension
    if t["grid"] is not None:
        return np.atleast_2d(np.asarray(t["grid"], dtype=float))
    c = cfg.point(t.get("center"))
    radii = np.geomspace(0.05, 0.7, 10)
    return np.vstack([c] + [c + r * np.eye(d)[0] for r in radii])


def _harmonic(cfg: RunConfig):
    t = cfg.task
    g, bound = BOUNDARY_FUNCTIONS[t["g"]]
    return estimate_harmonic(cfg.field(), cfg.params(), cfg.domain(t["domain"]), g, _grid(cfg),
                             cfg.scheme(), cfg.n, cfg.seed, cfg.t_cap, t["g"], bound,
                             bool(t["common_streams"]))


def _harmonic_rows(h):
    return [[*p, v.mean, v.stderr] for p, v in zip(h.points, h.values)]


def cmd_harmonic(cfg: RunConfig, out: OutputWriter, runtime) -> list[str]:
    h = _harmonic(cfg)
    d = cfg.dimension
    out.csv("harmonic.csv", [f"x{j + 1}" for j in range(d)] + ["mean", "stderr"], _harmonic_rows(h))
    out.json("harmonic.json", {"op": "harmonic", "params": cfg.task, "g": h.g_id,
                               "values": [{"x": p, **v.to_dict()} for p, v in zip(h.points, h.values)],
                               "n": cfg.n, "flags": h.flags, "runtime_s": runtime()})
    return h.flags


def cmd_hoelder(cfg: RunConfig, out: OutputWriter, runtime) -> list[str]:
    h = _harmonic(cfg)
    d = cfg.dimension
    center = cfg.point(cfg.task["center"])
    fit = fit_hoelder(h, center, float(cfg.task["radius"]))
    out.csv("hoelder_values.csv", [f"x{j + 1}" for j in range(d)] + ["mean", "stderr"],
            _harmonic_rows(h))
    out.json("hoelder.json", {"op": "hoelder", "params": cfg.task, "beta_hat": fit.beta_hat,
                              "c_hat": fit.c_hat, "r_squared": fit.r_squared,
                              "pairs_used": fit.pairs_used, "n": cfg.n, "flags": h.flags,
                              "runtime_s": runtime()})
    return h.flags


def cmd_harnack(cfg: RunConfig, out: OutputWriter, runtime) -> list[str]:
    t = cfg.task
    params = cfg.params()
    rows = ratio_curve(t["eps"], cfg.n, params, cfg.seed, float(t["dt"]), t["beta"])
    out.csv("harnack_ratio.csv", RATIO_HEADER, [r.csv_row() for r in rows])
    checks = check_ratio_curve(rows, params.alpha)
    flags = sorted({f for r in rows for f in r.flags + r.h0.estimate.flags + r.hw0.estimate.flags})
    out.json("harnack.json", {"op": "harnack", "params": t, "alpha": params.alpha, "n": cfg.n,
                              "rows": [dict(zip(RATIO_HEADER, r.csv_row())) for r in rows],
                              "checks": checks, "flags": flags, "runtime_s": runtime()})
    return flags


def cmd_scaling_check(cfg: RunConfig, out: OutputWriter, runtime) -> list[str]:
    t = cfg.task
    res = occupation_scaling(t["eps"], cfg.n, cfg.params().alpha, float(t["horizon"]),
                             float(cfg.data["scheme"]["dt"]), cfg.seed)
    out.csv("scaling.csv", ["eps", "mean", "stderr", "mean_2t"],
            zip(res.eps, res.means, res.stderrs, res.means_2t))
    out.json("scaling-check.json", {"op": "scaling-check", "params": t, "slope": res.slope,
                                    "slope_stderr": res.slope_se, "slope_2t": res.slope_2t,
                                    "horizon_shift": res.horizon_shift, "n": cfg.n,
                                    "flags": res.flags, "runtime_s": runtime()})
    return res.flags


def cmd_generator_check(cfg: RunConfig, out: OutputWriter, runtime) -> list[str]:
    t = cfg.task
    probes = generator_check(cfg.params(), int(t["probes"]), int(t["dimension"]), cfg.seed)
    worst = max(p.error for p in probes)
    flags = [] if worst < GENERATOR_TOLERANCE else ["generator-mismatch"]
    out.csv("generator-check.csv", ["probe", "quadrature", "exact", "error"],
            ([i, p.quadrature, p.exact, p.error] for i, p in enumerate(probes)))
    out.json("generator-check.json", {"op": "generator-check", "params": t,
                                      "alpha": cfg.params().alpha, "max_error": worst,
                                      "tolerance": GENERATOR_TOLERANCE, "flags": flags,
                                      "runtime_s": runtime()})
    return flags


HANDLERS: dict[str, Callable] = {
    "sample": cmd_sample, "simulate": cmd_simulate, "exit-time": cmd_exit_time,
    "occupation": cmd_occupation, "steering": cmd_steering, "tube": cmd_tube,
    "hitting": cmd_hitting, "harmonic": cmd_harmonic, "hoelder": cmd_hoelder,
    "harnack": cmd_harnack, "scaling-check": cmd_scaling_check,
    "generator-check": cmd_generator_check,
}


def verify(directory: str | Path) -> list[str]:
    """Problems found in an output directory (empty when everything checks out)."""
    d = Path(directory)
    problems = []
    try:
        manifest = json.loads((d / "manifest.json").read_text())
    except (OSError, json.JSONDecodeError) as exc:
        return [f"cannot read manifest: {exc}"]
    for name, digest in manifest["files"].items():
        p = d / name
        if not p.exists():
            problems.append(f"missing file {name}")
        elif _sha256(p) != digest:
            problems.append(f"digest mismatch for {name}")
        elif p.suffix == ".json":
            body = json.loads(p.read_text())
            if body.get("config_hash") != manifest["config_hash"]:
                problems.append(f"config hash mismatch in {name}")
    summary = d / f"{manifest['command']}.json"
    if summary.exists():
        body = json.loads(summary.read_text())
        cfg = body.get("config")
        if cfg is not None:
            blob = json.dumps(cfg, sort_keys=True)
            if hashlib.sha256(blob.encode()).hexdigest()[:16] != manifest["config_hash"]:
                problems.append("echoed config does not hash to the recorded config hash")
    return problems


def dispatch(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return EXIT_INVALID
    except SystemExit as exc:  # --help / --version
        return int(exc.code or 0)
    if args.command is None:
        parser.print_help(sys.stderr)
        return EXIT_INVALID
    if args.command == "verify":
        problems = verify(args.directory)
        for p in problems:
            print(p, file=sys.stderr)
        print("ok" if not problems else f"{len(problems)} problem(s)")
        return EXIT_OK if not problems else EXIT_INVALID
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    try:
        cfg = RunConfig.load(args.command, args.config, _overrides(args))
        threads = cfg.data["run"]["threads"]
        if threads is not None:
            import numba

            numba.set_num_threads(min(int(threads), numba.config.NUMBA_NUM_THREADS))
        out = OutputWriter(cfg)
        start = time.perf_counter()
        runtime = (lambda: time.perf_counter() - start) if args.timing else (lambda: None)
        flags = HANDLERS[args.command](cfg, out, runtime)
        _attach_config(out, cfg, args.command)
        out.manifest()
        log.info("%s finished in %.2f s", args.command, time.perf_counter() - start)
    except (ConfigError, ExpressionError, ValueError, np.linalg.LinAlgError, QuadratureError,
            OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    bad = [f for f in flags if f.split(":")[0] in FLAGS_UNRELIABLE]
    if bad:
        print(f"result flagged: {', '.join(bad)}", file=sys.stderr)
        return EXIT_FLAGGED
    return EXIT_OK


def _attach_config(out: OutputWriter, cfg: RunConfig, command: str):
    """Echo the resolved config (minus the output directory) into the summary JSON."""
    path = out.dir / f"{command}.json"
    body = json.loads(path.read_text())
    body["config"] = _clean(cfg.identity())
    path.write_text(json.dumps(body, indent=2, sort_keys=True, allow_nan=True) + "\n")


def main():
    sys.exit(dispatch())


if __name__ == "__main__":
    main()
