"""Command-line entry point: ``cbdi <subcommand> --config FILE``.

Every run reads one flat config with the sections ``[mechanism]`` (with a
``[mechanism.levy]`` table), ``[drift]``, ``[sim]``, ``[experiment]`` and
``[output]``.  Outputs carry a provenance record (tool version, seed,
SHA-256 of the canonical config and the config itself) and any output file
can be passed back as ``--config`` to repeat the run.

Exit codes: 0 success, 2 configuration error, 3 numerical or simulation
failure, 4 internal-consistency failure.  Errors are also written to
stderr as one JSON object.
"""

import argparse
import dataclasses
import io as _stdio
import json
import math
import sys

import numpy as np

from . import __version__
from . import io as cio
from .classifier import classify
from .drift import drift_from_config
from .errors import (CBDIError, ConfigError, ConsistencyError, NumericalError,
                     SimulationError)
from .generator import lyapunov_margin
from .mechanism import mechanism_from_config
from .passage import ABOVE, BELOW, cdi_certificate, explosion_probe, mean_hitting
from .simulator import (STATUS_NAMES, SimConfig, simulate_coupled_ensemble,
                        simulate_ensemble, simulate_from_infinity)

SUBCOMMANDS = ("classify", "lyapunov", "simulate", "compare", "hitting", "cdi", "explode")
SECTIONS = ("mechanism", "drift", "sim", "experiment", "output")
FORMATS = {
    "classify": ("json", "csv"),
    "lyapunov": ("csv", "json", "bin"),
    "simulate": ("csv", "json", "bin"),
    "compare": ("json", "csv"),
    "hitting": ("json", "csv"),
    "cdi": ("json", "csv"),
    "explode": ("json", "csv"),
}
EXPERIMENT_KEYS = {
    "classify": set(),
    "lyapunov": {"grid", "z_max"},
    "simulate": {"mode", "x0", "initials", "x_grid", "t_probe", "tol", "below", "above"},
    "compare": {"kind", "x0", "initials", "other_drift"},
    "hitting": {"x0", "level", "direction", "max_doublings", "censor_limit"},
    "cdi": {"x_grid", "level", "atol", "max_doublings", "censor_limit"},
    "explode": {"x0", "conf"},
}


class _ConfigPointerError(ConfigError):
    def __init__(self, message, pointer):
        super().__init__(message)
        self.pointer = pointer


# ---------------------------------------------------------------------------
# config loading
# ---------------------------------------------------------------------------

def _toml_loads(text):
    try:
        import tomllib
    except ModuleNotFoundError:  # Python < 3.11
        import tomli as tomllib
    return tomllib.loads(text)


def load_config(path):
    """Read a TOML/JSON config, or the provenance record of an earlier output."""
    try:
        with open(path, "rb") as fh:
            raw = fh.read()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path!r}: {exc.strerror}") from None
    try:
        if raw.startswith(cio.MAGIC):
            frames = dict(cio.read_frames(_stdio.BytesIO(raw)))
            if "provenance" not in frames:
                raise ConfigError("binary file carries no provenance frame")
            return json.loads(frames["provenance"])["config"]
        text = raw.decode("utf-8")
        if text.startswith(cio.PROVENANCE_TAG):
            return cio.read_csv_provenance(text)["config"]
        if str(path).endswith(".json") or text.lstrip().startswith("{"):
            obj = json.loads(text)
            return obj["provenance"]["config"] if "provenance" in obj else obj
        return _toml_loads(text)
    except ConfigError:
        raise
    except (ValueError, KeyError, UnicodeDecodeError) as exc:
        raise ConfigError(f"cannot parse config {path!r}: {exc}") from None


def _section(cfg, name, required=True):
    if name not in cfg:
        if required:
            raise _ConfigPointerError(f"missing section [{name}]", name)
        return {}
    sec = cfg[name]
    if not isinstance(sec, dict):
        raise _ConfigPointerError(f"[{name}] must be a table", name)
    return dict(sec)


def sim_config(sec, threads=None):
    """Build a :class:`SimConfig` from a ``[sim]`` mapping."""
    names = {f.name for f in dataclasses.fields(SimConfig)}
    unknown = set(sec) - names
    if unknown:
        raise _ConfigPointerError(f"sim: unknown keys {sorted(unknown)}",
                                  "sim." + sorted(unknown)[0])
    sec = dict(sec)
    if threads is not None:
        sec["threads"] = threads
    try:
        return SimConfig(**sec)
    except TypeError as exc:
        raise ConfigError(f"sim: {exc}") from None


def _experiment(cfg, sub):
    sec = _section(cfg, "experiment", required=False)
    unknown = set(sec) - EXPERIMENT_KEYS[sub]
    if unknown:
        raise _ConfigPointerError(f"experiment: unknown keys {sorted(unknown)} for {sub}",
                                  "experiment." + sorted(unknown)[0])
    return sec


def _need(exp, key):
    if key not in exp:
        raise _ConfigPointerError(f"experiment: missing key {key!r}", "experiment." + key)
    return exp[key]


def _floats(v, key):
    try:
        arr = np.atleast_1d(np.asarray(v, dtype=float))
    except (TypeError, ValueError):
        raise _ConfigPointerError(f"experiment.{key} must be numeric", "experiment." + key) from None
    return arr


# ---------------------------------------------------------------------------
# subcommands; each returns (payload for json, csv lines, bin frames)
# ---------------------------------------------------------------------------

def _table_text(rows):
    w = max(len(k) for k, _ in rows)
    return "\n".join(f"{k.ljust(w)}  {v}" for k, v in rows)


def run_classify(m, d, sim, exp):
    rep = classify(m, d).to_dict()
    rows = [(k, json.dumps(v) if isinstance(v, (dict, list)) else str(v))
            for k, v in rep.items()]
    return rep, ["key,value"] + [f"{k},{json.dumps(v)}" for k, v in rows], None, rows


def run_lyapunov(m, d, sim, exp):
    grid = exp.get("grid")
    if grid is None and "z_max" in exp:
        from .generator import margin_grid
        grid = margin_grid(d, float(exp["z_max"]))
    grid = None if grid is None else _floats(grid, "grid")
    r1 = lyapunov_margin(m, d, "F1", grid)
    r2 = lyapunov_margin(m, d, "F2", r1.z)
    cols = [r1.z, r1.values, r2.values, r1.eps, r2.eps]
    lines = cio.csv_table(["z", "Xf1", "Xf2", "eps1", "eps2"], zip(*cols))
    payload = {"F1": r1.to_dict(), "F2": r2.to_dict(), "z": r1.z, "Xf1": r1.values,
               "Xf2": r2.values, "eps1": r1.eps, "eps2": r2.eps}
    frames = [(n, c) for n, c in zip(["z", "Xf1", "Xf2", "eps1", "eps2"], cols)]
    return payload, lines, frames, None


def _path_outputs(res, mode, extra):
    B, W, _ = res.values.shape
    lines = ["path_id,t,x,status"]
    for b in range(B):
        for j in range(W):
            lines += cio.path_rows(b * W + j, res.times, res.values[b, j],
                                   STATUS_NAMES[res.status[b, j]], res.event_time[b, j])
    fin = res.final
    ok = np.isfinite(fin)
    n_ok = int(ok.sum())
    mean = float(fin[ok].mean()) if n_ok else math.nan
    se = float(fin[ok].std(ddof=1) / math.sqrt(n_ok)) if n_ok > 1 else 0.0
    counts = {name: int((res.status == k).sum()) for k, name in enumerate(STATUS_NAMES)}
    payload = {"mode": mode, "n_bundles": B, "width": W, "t_end": float(res.times[-1]),
               "final_mean": mean, "final_stderr": se, "status_counts": counts,
               "mean_jumps": float(res.n_jumps.mean()), "max_level": res.max_level}
    if W > 1:
        payload["final_mean_by_slot"] = [float(np.mean(fin[:, j][np.isfinite(fin[:, j])]))
                                         if np.any(np.isfinite(fin[:, j])) else math.nan
                                         for j in range(W)]
    payload.update(extra)
    frames = [("shape", np.array([B, W, res.times.size], dtype=float)),
              ("times", res.times), ("values", res.values), ("status", res.status),
              ("event_time", res.event_time)]
    return payload, lines, frames, None


def run_simulate(m, d, sim, exp):
    mode = exp.get("mode", "path")
    below = list(_floats(exp.get("below", []), "below"))
    above = list(_floats(exp.get("above", []), "above"))
    if mode == "path":
        res = simulate_ensemble(m, d, float(_need(exp, "x0")), sim, below, above)
        return _path_outputs(res, mode, {"x0": float(exp["x0"])})
    if mode == "coupled":
        init = _floats(_need(exp, "initials"), "initials")
        res = simulate_coupled_ensemble(m, d, init, sim, below, above)
        return _path_outputs(res, mode, {"initials": init})
    if mode == "from_infinity":
        kw = {}
        if "x_grid" in exp:
            kw["x_grid"] = _floats(exp["x_grid"], "x_grid")
        rep = simulate_from_infinity(m, d, sim, t_probe=float(exp.get("t_probe", 0.5)),
                                     tol=float(exp.get("tol", 1e-3)), **kw)
        payload = rep.to_dict()
        payload["times"] = rep.times
        payload["envelope"] = rep.envelope
        lines = ["grid_index,t,x,status"]
        for k in range(rep.x_grid.size):
            lines += cio.path_rows(k, rep.times, rep.envelope[k], "Alive", math.inf)
        frames = [("x_grid", rep.x_grid), ("times", rep.times), ("envelope", rep.envelope)]
        return payload, lines, frames, None
    raise _ConfigPointerError(f"experiment.mode: unknown mode {mode!r}", "experiment.mode")


def run_compare(m, d, sim, exp):
    kind = exp.get("kind", "initial")
    sim = dataclasses.replace(sim, max_points=sim.n_steps + 1)
    if kind == "initial":
        init = _floats(_need(exp, "initials"), "initials")
        res = simulate_coupled_ensemble(m, d, init, sim)
        lower, upper = res.values[:, :-1], res.values[:, 1:]
        label = "X^x <= X^y for x <= y"
    elif kind == "drift":
        other = drift_from_config(_need(exp, "other_drift"))
        z = np.geomspace(1e-6, 1e8, 400)
        if np.any(np.asarray(other.eval(z)) < np.asarray(d.eval(z))):
            raise _ConfigPointerError("experiment.other_drift must dominate [drift]",
                                      "experiment.other_drift")
        x0 = float(_need(exp, "x0"))
        res = simulate_coupled_ensemble(m, [d, other], [x0, x0], sim)
        lower, upper = res.values[:, 1:], res.values[:, :-1]
        label = "X^{I'} <= X^{I} for I <= I'"
    else:
        raise _ConfigPointerError(f"experiment.kind: unknown kind {kind!r}", "experiment.kind")
    with np.errstate(invalid="ignore"):
        gap = lower - upper
        viol = gap > 0
    n_viol = int(viol.sum())
    max_gap = float(gap[viol].max()) if n_viol else 0.0
    payload = {"kind": kind, "relation": label, "n_bundles": int(res.values.shape[0]),
               "n_steps": sim.n_steps, "comparisons": int(gap.size), "violations": n_viol,
               "max_violation": max_gap, "sigma": m.sigma}
    if m.sigma == 0 and n_viol:
        raise ConsistencyError(f"{n_viol} ordering violations in a sigma = 0 coupling "
                               f"(largest {max_gap:.3g})")
    lines = ["key,value"] + [f"{k},{v}" for k, v in payload.items()]
    return payload, lines, None, None


def run_hitting(m, d, sim, exp):
    direction = exp.get("direction", BELOW)
    if direction not in (BELOW, ABOVE):
        raise _ConfigPointerError("experiment.direction must be 'below' or 'above'",
                                  "experiment.direction")
    est = mean_hitting(m, d, float(_need(exp, "x0")), float(_need(exp, "level")), sim,
                       direction, int(exp.get("max_doublings", 2)),
                       float(exp.get("censor_limit", 0.01)))
    payload = est.to_dict()
    lines = cio.csv_table(["level", "mean", "stderr", "censored_fraction", "n"],
                          [(est.level, est.mean, est.stderr, est.censored_fraction, est.n)])
    return payload, lines, None, None


def run_cdi(m, d, sim, exp):
    kw = {}
    if "x_grid" in exp:
        kw["x_grid"] = _floats(exp["x_grid"], "x_grid")
    rep = cdi_certificate(m, d, sim, level=float(exp.get("level", 1.0)),
                          atol=float(exp.get("atol", 1e-3)),
                          max_doublings=int(exp.get("max_doublings", 2)),
                          censor_limit=float(exp.get("censor_limit", 0.01)), **kw)
    lines = cio.csv_table(["x", "mean_tau", "stderr", "censored_fraction"],
                          zip(rep.x_grid, rep.means, rep.stderrs, rep.censored))
    return rep.to_dict(), lines, None, None


def run_explode(m, d, sim, exp):
    rep = explosion_probe(m, d, float(_need(exp, "x0")), sim, float(exp.get("conf", 0.95)))
    lines = cio.csv_table(["cap", "fraction", "stderr", "upper_bound"],
                          zip(rep.caps, rep.fractions, rep.stderrs, rep.upper_bounds))
    return rep.to_dict(), lines, None, None


RUNNERS = {"classify": run_classify, "lyapunov": run_lyapunov, "simulate": run_simulate,
           "compare": run_compare, "hitting": run_hitting, "cdi": run_cdi,
           "explode": run_explode}


# ---------------------------------------------------------------------------
# driver
# ---------------------------------------------------------------------------

def _parser():
    p = argparse.ArgumentParser(prog="cbdi", description="CB processes with drift interaction")
    p.add_argument("--version", action="version", version=f"cbdi {__version__}")
    sub = p.add_subparsers(dest="command", required=True)
    for name in SUBCOMMANDS:
        s = sub.add_parser(name)
        s.add_argument("--config", required=True)
        s.add_argument("--out")
        s.add_argument("--format", choices=("csv", "json", "bin"))
        s.add_argument("--threads", type=int)
        s.add_argument("--seed", type=int)
    return p


def provenance(sub, cfg):
    """Provenance record of a run; ``cfg`` excludes threads and output settings."""
    return {"tool": "cbdi", "version": __version__, "subcommand": sub,
            "seed": cfg.get("sim", {}).get("seed", 0),
            "config_sha256": cio.config_hash(cfg), "config": cfg}


def execute(sub, cfg, out=None, fmt=None, threads=None, seed=None, stdout=None):
    """Run subcommand ``sub`` on the parsed config mapping; returns the exit code."""
    stdout = stdout or sys.stdout
    unknown = set(cfg) - set(SECTIONS) - {"provenance"}
    if unknown:
        raise _ConfigPointerError(f"unknown sections {sorted(unknown)}", sorted(unknown)[0])
    mech_sec = _section(cfg, "mechanism")
    drift_sec = _section(cfg, "drift")
    sim_sec = _section(cfg, "sim", required=False)
    out_sec = _section(cfg, "output", required=False)
    bad = set(out_sec) - {"format", "path"}
    if bad:
        raise _ConfigPointerError(f"output: unknown keys {sorted(bad)}",
                                  "output." + sorted(bad)[0])
    if seed is not None:
        sim_sec["seed"] = seed
    cfg_threads = sim_sec.pop("threads", None)
    exp = _experiment(cfg, sub)
    clean = {"mechanism": cfg["mechanism"], "drift": cfg["drift"], "sim": sim_sec,
             "experiment": exp}
    fmt = fmt or out_sec.get("format") or FORMATS[sub][0]
    if fmt == "binary":
        fmt = "bin"
    if fmt not in FORMATS[sub]:
        raise _ConfigPointerError(f"format {fmt!r} not available for {sub}", "output.format")
    out = out or out_sec.get("path")

    m = mechanism_from_config(mech_sec)
    d = drift_from_config(drift_sec)
    sim = sim_config(sim_sec, threads if threads is not None else cfg_threads)
    payload, lines, frames, table = RUNNERS[sub](m, d, sim, exp)

    prov = provenance(sub, clean)
    if fmt == "json":
        data = (cio.dumps({"provenance": prov, "result": payload}, indent=1) + "\n").encode()
    elif fmt == "csv":
        data = ("\n".join(cio.header_lines(prov) + lines) + "\n").encode()
    else:
        buf = _stdio.BytesIO()
        cio.write_frames(buf, [("provenance", cio.canonical(prov))] + frames)
        data = buf.getvalue()
    if out:
        with open(out, "wb") as fh:
            fh.write(data)
        if table is not None:
            stdout.write(_table_text(table) + "\n")
    elif fmt == "bin":
        getattr(stdout, "buffer", stdout).write(data)
    else:
        stdout.write(data.decode())
    return 0


def _exit_code(exc):
    if isinstance(exc, ConfigError):
        return 2
    if isinstance(exc, (NumericalError, SimulationError)):
        return 3
    return 4


def main(argv=None):
    """Parse ``argv`` and run; returns the process exit code."""
    try:
        args = _parser().parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        cfg = load_config(args.config)
        if not isinstance(cfg, dict):
            raise ConfigError("config must be a mapping of sections")
        return execute(args.command, cfg, args.out, args.format, args.threads, args.seed)
    except Exception as exc:  # every failure becomes an exit code and a JSON record
        code = _exit_code(exc) if isinstance(exc, CBDIError) else 4
        name = next(c.__name__ for c in type(exc).__mro__ if not c.__name__.startswith("_"))
        rec = {"error": name, "message": str(exc), "exit_code": code}
        if getattr(exc, "pointer", None):
            rec["pointer"] = exc.pointer
        if getattr(exc, "residual", None) is not None:
            rec["residual"] = exc.residual
        sys.stderr.write(cio.dumps(rec) + "\n")
        return code
