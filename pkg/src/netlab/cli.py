"""Command-line experiment runner.

Every experiment writes plain CSV (or JSON) outputs plus ``manifest.json``
recording the configuration, seed, replica count and output hashes. A
manifest can be replayed; outputs never contain timings, so a replay with
the same configuration is byte-identical whatever ``--jobs`` is.

Exit codes: 0 success, 1 execution or configuration error, 2 when
``--assert`` is set and an acceptance threshold is violated (or a replay
does not reproduce its outputs).
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import io
import json
import math
import os
import sys
import tempfile
import time
from datetime import datetime, timezone
from pathlib import Path
from typing import Callable

import numpy as np

from . import __version__
from .errors import ConfigError, NetlabError, VersionMismatch
from .kernel import bernoulli_kernel, kernel_from_spec

EXPERIMENTS = (
    "duality",
    "invariance",
    "density",
    "pdec",
    "sticky",
    "hopcheck",
    "rbp",
    "rbp-graph",
    "tightness",
    "excursion",
    "net-density",
    "denbc",
    "dump-arrows",
)
_HELP = {
    "duality": "forward/dual indicator agreement on sampled realizations",
    "invariance": "Bernoulli-net product law and dual martingale",
    "density": "P(0 in xi_T) against T",
    "pdec": "web density drop from Bernoulli initial data",
    "sticky": "sticky-pair martingale residual means",
    "hopcheck": "hop closure of the two webs against net paths",
    "rbp": "tail law of the relevant branching point count",
    "rbp-graph": "finite graph representation of one realization (JSON)",
    "tightness": "probability a box launches a long excursion",
    "excursion": "tail of the rightmost path from the origin",
    "net-density": "rescaled net density at rescaled time t",
    "denbc": "density after a block of branching-coalescing evolution",
    "dump-arrows": "text dump of the arrows in a window",
}
# keys that describe how to run, not what to compute
_RUNTIME_KEYS = ("jobs", "outdir", "assert_", "config")


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise SystemExit(1)


def _ints(text: str) -> list[int]:
    return [int(v) for v in str(text).replace(" ", "").split(",") if v != ""]


def _floats(text: str) -> list[float]:
    return [float(v) for v in str(text).replace(" ", "").split(",") if v != ""]


def _fmt(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return str(int(v))
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return repr(float(v)) if math.isfinite(v) else str(float(v))
    return str(v)


def _csv_text(header: list[str], rows: list) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for r in rows:
        w.writerow([_fmt(v) for v in r])
    return buf.getvalue()


def _json_text(obj) -> str:
    return json.dumps(obj, indent=2, sort_keys=True, default=_fmt) + "\n"


# ----------------------------------------------------------------------------
# experiments: each returns ({filename: text}, ok)


def _kernel(cfg):
    return kernel_from_spec(cfg["kernel"])


def _exp_duality(cfg):
    from .pointset import duality_indicators, make_oracle

    k = _kernel(cfg)
    src = make_oracle(k, cfg["eps"], cfg["seed"], cfg["mode"])
    fwd_hits = dual_hits = agree = 0
    n = cfg["replicas"]
    for lo in range(0, n, 10_000):
        reps = np.arange(lo, min(n, lo + 10_000), dtype=np.int64)
        f, b = duality_indicators(src, _ints(cfg["A"]), _ints(cfg["B"]), cfg["T"], reps)
        fwd_hits += int(f.sum())
        dual_hits += int(b.sum())
        agree += int((f == b).sum())
    rows = [(cfg["mode"], cfg["eps"], cfg["T"], n, agree, fwd_hits, dual_hits)]
    text = _csv_text(["mode", "epsilon", "T", "replicas", "agree", "forward_hits", "dual_hits"], rows)
    return {"duality.csv": text}, agree == n


def _exp_invariance(cfg):
    from .pointset import dual_martingale_curve, invariance_test

    k = _kernel(cfg)
    bk = bernoulli_kernel(k, cfg["eps"])
    rep = invariance_test(bk, cfg["L"], cfg["T"], cfg["replicas"], seed=cfg["seed"], jobs=cfg["jobs"])
    rows = [(kind, key, v, se) for kind, key, v, se in rep.rows()]
    curve = dual_martingale_curve(k, cfg["eps"], _ints(cfg["B"]), cfg["dual_T"], cfg["replicas"], seed=cfg["seed"], jobs=cfg["jobs"])
    for t, m, s in zip(curve.t, curve.mean, curve.se):
        rows.append((f"dual:{int(t)}", "dual_martingale", m, s))
    ok = all(rep.passed().values()) and curve.flat()
    return {"invariance.csv": _csv_text(["site_or_lag", "stat", "value", "se"], rows)}, ok


def _exp_density(cfg):
    from .pointset import density_curve
    from .stats import fit_power

    k = _kernel(cfg)
    Ts = _ints(cfg["Ts"])
    pts = density_curve(cfg["mode"], cfg["eps"], Ts, cfg["replicas"], kernel=k, seed=cfg["seed"], jobs=cfg["jobs"], method=cfg["method"])
    rows = [(cfg["eps"], p.T, p.p_hat, p.se, p.replicas, cfg["seed"] + p.T) for p in pts]
    ok = True
    if len(pts) >= 3:
        fit = fit_power([p.T for p in pts], [p.p_hat for p in pts])
        scaled = [p.p_hat * math.sqrt(p.T) for p in pts]
        ok = -0.6 <= fit.slope <= -0.4 and max(scaled) <= 2 * min(scaled)
    return {"density.csv": _csv_text(["epsilon", "T", "p_hat", "se", "replicas", "seed0"], rows)}, ok


def _exp_pdec(cfg):
    from .pointset import coalescing_density_reduction

    k = _kernel(cfg)
    rows = []
    for T in _ints(cfg["Ts"]):
        d = coalescing_density_reduction(cfg["eps"], T, cfg["replicas"], kernel=k, seed=cfg["seed"], jobs=cfg["jobs"], core=cfg["core"])
        rows.append((cfg["eps"], T, d.rho, d.initial.value, d.initial.se, d.drop.value, d.drop.se, d.scaled))
    header = ["epsilon", "T", "rho", "p0", "p0_se", "drop", "drop_se", "drop_over_eps2_sqrtT"]
    return {"pdec.csv": _csv_text(header, rows)}, True


def _sticky_chunk(lo, hi, *, kernel, epsilon, seed, n, grid, x_max):
    from .pathops import potential_function, residual_potential, residual_product, sticky_pair_batch
    from .pointset import make_oracle

    src = make_oracle(kernel, epsilon, seed, "sticky_pair")
    tr = sticky_pair_batch(src, 0, 0, n, np.arange(lo, hi, dtype=np.int64), grid)
    pot = potential_function(kernel, x_max)
    rp = residual_product(tr)
    rq = residual_potential(tr, pot)
    return rp - rp[:, :1], rq - rq[:, :1], tr.Z


def sticky_table(kernel, epsilon: float, t_max: float, points: int, replicas: int, seed: int, jobs: int):
    """Replica means and SEs of both residuals and of Z on a ``points``-point grid."""
    from ._runner import map_chunks
    from .stats import ScalingMap

    n = ScalingMap.for_kernel(kernel, epsilon).lattice_time(t_max)
    grid = np.unique(np.linspace(0, n, points).round().astype(np.int64))
    x_max = 2 * kernel.max_jump * n + 2
    res = map_chunks(_sticky_chunk, replicas, jobs=jobs, chunk=10_000, kernel=kernel, epsilon=epsilon, seed=seed, n=n, grid=grid, x_max=x_max)
    cols = [np.concatenate([r[i] for r in res]) for i in range(3)]
    means = [c.mean(axis=0) for c in cols]
    ses = [c.std(axis=0, ddof=1) / math.sqrt(replicas) for c in cols]
    unit = kernel.sigma2 * epsilon**2
    return grid, grid * unit, means, ses


def _exp_sticky(cfg):
    from ._mc import bonferroni_z

    k = _kernel(cfg)
    rows = []
    ok = True
    for eps in _floats(cfg["eps_list"]):
        grid, ts, means, ses = sticky_table(k, eps, cfg["t"], cfg["points"], cfg["replicas"], cfg["seed"], cfg["jobs"])
        zc = bonferroni_z(2 * (len(grid) - 1))
        for i in range(len(grid)):
            rows.append((eps, ts[i], means[0][i], ses[0][i], means[1][i], ses[1][i], means[2][i], ses[2][i]))
            for j in (0, 1):
                if ses[j][i] > 0 and abs(means[j][i]) > zc * ses[j][i]:
                    ok = False
    header = ["epsilon", "t", "mean_R_product", "se", "mean_R_potential", "se", "mean_Z", "se"]
    return {"sticky.csv": _csv_text(header, rows)}, ok


def _exp_hopcheck(cfg):
    from .netsim import enumerate_net_paths
    from .pathops import hop_closure, hop_inputs
    from .pointset import make_oracle

    k = _kernel(cfg)
    src = make_oracle(k, cfg["eps"], cfg["seed"], "net")
    H = cfg["horizon"]
    records = []
    for rep in range(cfg["replicas"]):
        net = enumerate_net_paths(src, (0, 0), H, rep)
        clo = {p for p in hop_closure(hop_inputs(src, (0, 0), H, rep), H, cfg["rule"]) if p.start == (0, 0)}
        records.append({"replica": rep, "seed": cfg["seed"], "net_paths": len(net), "closure_paths": len(clo), "subset": clo <= net, "equal": clo == net})
    passed = sum(r["equal"] for r in records)
    out = {"rule": cfg["rule"], "horizon": H, "epsilon": cfg["eps"], "realizations": len(records), "passed": passed, "records": records}
    return {"hopcheck.json": _json_text(out)}, passed == len(records)


def _exp_rbp(cfg):
    from .rbp import rbp_tail

    k = _kernel(cfg)
    rows = []
    violations = 0
    eps_list = _floats(cfg["eps_list"])
    Ts = _ints(cfg["Ts"])
    for eps in eps_list:
        for T in Ts:
            tab = rbp_tail(eps, T, cfg["K"], cfg["replicas"], kernel=k, seed=cfg["seed"], jobs=cfg["jobs"], delta0=cfg["delta0"])
            rows.extend(tab.rows())
            violations += tab.identity_violations
    return {"rbp_tail.csv": _csv_text(["epsilon", "T", "K", "p_hat", "se", "replicas"], rows)}, violations == 0


def _exp_rbp_graph(cfg):
    from .pointset import make_oracle
    from .rbp import build_graph

    k = _kernel(cfg)
    src = make_oracle(k, cfg["eps"], cfg["seed"], "net")
    g = build_graph(src, _ints(cfg["A"]), 0, cfg["T"], cfg["rep"])
    out = g.to_json()
    out["degree_violations"] = [list(v) for v in g.degree_violations()]
    out["branching_violations"] = [list(v) for v in g.branching_violations]
    ok = not out["degree_violations"] and not out["branching_violations"]
    return {"rbp_graph.json": _json_text(out)}, ok


def _exp_tightness(cfg):
    from .stats import tightness_event_estimate

    k = _kernel(cfg)
    rows = []
    for d in _floats(cfg["deltas"]):
        e = tightness_event_estimate(cfg["mode"], cfg["eps"], cfg["M"], d, cfg["replicas"], kernel=k, seed=cfg["seed"], jobs=cfg["jobs"], scale=cfg["scale"] or None)
        rows.append((cfg["mode"], cfg["eps"], cfg["M"], d, e.value, e.se, e.value / d))
    ratios = [r[-1] for r in sorted(rows, key=lambda r: -r[3])]
    ok = all(b <= a + 1e-12 for a, b in zip(ratios, ratios[1:]))
    return {"tightness.csv": _csv_text(["mode", "epsilon", "M", "delta", "p_hat", "se", "p_over_delta"], rows)}, ok


def _exp_excursion(cfg):
    from .stats import large_excursion_tail

    k = _kernel(cfg)
    tab = large_excursion_tail(cfg["eps"], cfg["T"], _ints(cfg["ells"]), cfg["replicas"], kernel=k, seed=cfg["seed"], jobs=cfg["jobs"])
    rows = [(cfg["eps"], cfg["T"], l, e.value, e.se, e.n) for l, e in tab]
    return {"excursion.csv": _csv_text(["epsilon", "T", "ell", "p_hat", "se", "replicas"], rows)}, True


def _exp_net_density(cfg):
    from .stats import density_convergence_experiment

    k = _kernel(cfg)
    tab = density_convergence_experiment(_floats(cfg["eps_list"]), cfg["t"], cfg["replicas"], kernel=k, seed=cfg["seed"], jobs=cfg["jobs"])
    rows = [(r.epsilon, r.T, r.measured, r.se, r.oracle, r.rel_gap, r.replicas) for r in tab]
    net = sorted((r for r in tab if r.epsilon > 0), key=lambda r: r.epsilon)
    ok = True
    if len(net) >= 2:
        ok = net[0].rel_gap < net[-1].rel_gap and net[0].rel_gap < 0.15
    header = ["epsilon", "T", "measured", "se", "oracle", "rel_gap", "replicas"]
    return {"net_density.csv": _csv_text(header, rows)}, ok


def _exp_denbc(cfg):
    from .stats import density_after_block

    k = _kernel(cfg)
    rows = []
    for L in _ints(cfg["Ls"]):
        e = density_after_block(cfg["eps"], cfg["upsilon"], L, cfg["R0"], cfg["replicas"], kernel=k, seed=cfg["seed"], jobs=cfg["jobs"], delta0=cfg["delta0"])
        rows.append((cfg["eps"], cfg["upsilon"], L, cfg["R0"], e.value, e.se, e.n))
    return {"denbc.csv": _csv_text(["epsilon", "upsilon", "L", "R0", "p_hat", "se", "replicas"], rows)}, True


def _exp_dump_arrows(cfg):
    from .netsim import Window, dump_arrows
    from .pointset import make_oracle

    k = _kernel(cfg)
    src = make_oracle(k, cfg["eps"], cfg["seed"], cfg["mode"])
    x0, x1, t0, t1 = _ints(cfg["window"])
    lines = list(dump_arrows(src, Window(x0, x1, t0, t1), cfg["rep"]))
    return {"arrows.txt": "\n".join(["# x t w1 w2 [bernoulli arrows]"] + lines) + "\n"}, True


_RUNNERS: dict[str, Callable] = {
    "duality": _exp_duality,
    "invariance": _exp_invariance,
    "density": _exp_density,
    "pdec": _exp_pdec,
    "sticky": _exp_sticky,
    "hopcheck": _exp_hopcheck,
    "rbp": _exp_rbp,
    "rbp-graph": _exp_rbp_graph,
    "tightness": _exp_tightness,
    "excursion": _exp_excursion,
    "net-density": _exp_net_density,
    "denbc": _exp_denbc,
    "dump-arrows": _exp_dump_arrows,
}

# experiment-specific flags: (flag, dest, type, default, help)
_SPECIFIC = {
    "duality": [
        ("--eps", "eps", float, 0.2, "branching probability"),
        ("--T", "T", int, 3, "time horizon"),
        ("--A", "A", str, "0", "forward start set, comma separated"),
        ("--B", "B", str, "0,1", "dual start set, comma separated"),
        ("--mode", "mode", str, "net", "net or bernoulli"),
    ],
    "invariance": [
        ("--eps", "eps", float, 0.05, "branching probability"),
        ("--L", "L", int, 512, "initial window width"),
        ("--T", "T", int, 32, "forward horizon"),
        ("--B", "B", str, "0,1", "dual martingale start set"),
        ("--dual-T", "dual_T", int, 64, "dual martingale horizon"),
    ],
    "density": [
        ("--mode", "mode", str, "net", "net, bernoulli or web"),
        ("--eps", "eps", float, 0.01, "branching probability"),
        ("--Ts", "Ts", str, "64,256,1024,4096", "horizons"),
        ("--method", "method", str, "dual", "dual or forward"),
    ],
    "pdec": [
        ("--eps", "eps", float, 0.05, "branching probability"),
        ("--Ts", "Ts", str, "16,64,256", "horizons"),
        ("--core", "core", int, 20000, "measured half width"),
    ],
    "sticky": [
        ("--eps-list", "eps_list", str, "0.05,0.02", "branching probabilities"),
        ("--t", "t", float, 1.0, "rescaled horizon"),
        ("--points", "points", int, 16, "grid points"),
    ],
    "hopcheck": [
        ("--eps", "eps", float, 0.3, "branching probability"),
        ("--horizon", "horizon", int, 8, "path horizon"),
        ("--rule", "rule", str, "switch", "hop rule: strict or switch"),
    ],
    "rbp": [
        ("--eps-list", "eps_list", str, "0.01", "branching probabilities"),
        ("--Ts", "Ts", str, "16,64,256,1024", "horizons"),
        ("--K", "K", int, 4, "largest K"),
        ("--delta0", "delta0", float, 0.5, "regime bound T <= delta0 / eps^2"),
    ],
    "rbp-graph": [
        ("--eps", "eps", float, 0.2, "branching probability"),
        ("--T", "T", int, 12, "terminal time U (S = 0)"),
        ("--A", "A", str, "0", "initial sites"),
        ("--rep", "rep", int, 0, "replica index"),
    ],
    "tightness": [
        ("--mode", "mode", str, "net", "net or web"),
        ("--eps", "eps", float, 0.01, "branching probability"),
        ("--M", "M", float, 1.0, "rescaled box half width"),
        ("--deltas", "deltas", str, "0.2,0.1,0.05", "rescaled box heights"),
        ("--scale", "scale", float, 0.0, "rescaling parameter (0: use eps)"),
    ],
    "excursion": [
        ("--eps", "eps", float, 0.01, "branching probability"),
        ("--T", "T", int, 1000, "horizon"),
        ("--ells", "ells", str, "0,10,20,40,60,80", "levels"),
    ],
    "net-density": [
        ("--eps-list", "eps_list", str, "0.02,0.01,0.005", "branching probabilities"),
        ("--t", "t", float, 1.0, "rescaled time"),
    ],
    "denbc": [
        ("--eps", "eps", float, 0.005, "branching probability"),
        ("--upsilon", "upsilon", float, 0.0625, "initial density"),
        ("--Ls", "Ls", str, "256,512,1024", "block lengths"),
        ("--R0", "R0", float, 4.0, "time factor, T = R0 / upsilon^2"),
        ("--delta0", "delta0", float, 0.5, "regime bound"),
    ],
    "dump-arrows": [
        ("--eps", "eps", float, 0.2, "branching probability"),
        ("--mode", "mode", str, "net", "oracle mode"),
        ("--window", "window", str, "-5,5,0,5", "x0,x1,t0,t1"),
        ("--rep", "rep", int, 0, "replica index"),
    ],
}
_DEFAULT_REPLICAS = {"hopcheck": 1000, "rbp-graph": 1, "dump-arrows": 1, "net-density": 4, "denbc": 200}


def _add_common(p: argparse.ArgumentParser, name: str):
    p.add_argument("--seed", dest="seed", type=int, default=None, help="root seed (default 0)")
    p.add_argument("--replicas", dest="replicas", type=int, default=None, help="number of replicas")
    p.add_argument("--jobs", dest="jobs", type=int, default=None, help="worker processes (default 1)")
    p.add_argument("--outdir", dest="outdir", default=None, help="output directory (default .)")
    p.add_argument("--kernel", dest="kernel", default=None, help="simple, lazy, geom(p) or a kernel file (default lazy)")
    p.add_argument("--config", dest="config", default=None, help="plain-text file of flag=value lines")
    p.add_argument("--assert", dest="assert_", action="store_true", default=None, help="exit 2 if the acceptance threshold fails")
    for flag, dest, typ, _, hlp in _SPECIFIC[name]:
        p.add_argument(flag, dest=dest, type=typ, default=None, help=hlp)


def _defaults(name: str) -> dict:
    d = {"seed": 0, "replicas": _DEFAULT_REPLICAS.get(name, 10_000), "jobs": 1, "outdir": ".", "kernel": "lazy", "config": None, "assert_": False}
    d.update({dest: default for _, dest, _, default, _ in _SPECIFIC[name]})
    return d


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="netlab", description="Discrete net simulation experiments.")
    parser.add_argument("--version", action="version", version=f"netlab {__version__}")
    sub = parser.add_subparsers(dest="experiment", metavar="EXPERIMENT", parser_class=_Parser)
    sub.required = True
    for name in EXPERIMENTS:
        _add_common(sub.add_parser(name, help=_HELP[name]), name)
    rp = sub.add_parser("replay", help="re-run a manifest and compare outputs")
    rp.add_argument("manifest")
    rp.add_argument("--jobs", type=int, default=None)
    rp.add_argument("--outdir", default=None, help="where to write the reproduced outputs")
    return parser


def _types_for(name: str) -> dict:
    t = {"seed": int, "replicas": int, "jobs": int, "outdir": str, "kernel": str, "assert_": _bool}
    t.update({dest: typ for _, dest, typ, _, _ in _SPECIFIC[name]})
    return t


def _bool(text) -> bool:
    if isinstance(text, bool):
        return text
    v = str(text).strip().lower()
    if v in ("1", "true", "yes", "on"):
        return True
    if v in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def read_config_file(path: str | Path, name: str) -> dict:
    """Parse ``flag=value`` lines; blank lines and ``#`` comments are ignored."""
    types = _types_for(name)
    alias = {k.replace("_", "-"): k for k in types}
    alias["assert"] = "assert_"
    out = {}
    p = Path(path)
    try:
        lines = p.read_text().splitlines()
    except OSError as exc:
        raise ConfigError(f"{path}: cannot read config: {exc}") from exc
    for i, raw in enumerate(lines, 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{path}:{i}: expected flag=value, got {raw!r}")
        key, val = (s.strip() for s in line.split("=", 1))
        key = key.lstrip("-")
        dest = alias.get(key, key if key in types else None)
        if dest is None:
            raise ConfigError(f"{path}:{i}: unknown field {key!r} for experiment {name!r}")
        try:
            out[dest] = types[dest](val)
        except ValueError as exc:
            raise ConfigError(f"{path}:{i}: field {key!r}: {exc}") from exc
    return out


def validate(name: str, cfg: dict) -> None:
    """Check every field before any simulation starts."""
    if cfg["replicas"] < 1:
        raise ConfigError("field 'replicas': must be at least 1")
    if cfg["jobs"] < 1:
        raise ConfigError("field 'jobs': must be at least 1")
    try:
        kernel_from_spec(cfg["kernel"])
    except (NetlabError, ValueError, OSError) as exc:
        raise ConfigError(f"field 'kernel': {exc}") from exc
    for key in ("eps", "upsilon"):
        if key in cfg and not 0 <= cfg[key] <= 1:
            raise ConfigError(f"field {key!r}: must lie in [0, 1]")
    if "eps_list" in cfg:
        try:
            vals = _floats(cfg["eps_list"])
        except ValueError as exc:
            raise ConfigError(f"field 'eps_list': {exc}") from exc
        if not vals or any(not 0 <= v <= 1 for v in vals):
            raise ConfigError("field 'eps_list': need values in [0, 1]")
    for key in ("Ts", "Ls", "ells", "A", "B", "window"):
        if key in cfg:
            try:
                vals = _ints(cfg[key])
            except ValueError as exc:
                raise ConfigError(f"field {key!r}: {exc}") from exc
            if not vals:
                raise ConfigError(f"field {key!r}: empty list")
    if "deltas" in cfg:
        try:
            if any(d <= 0 for d in _floats(cfg["deltas"])):
                raise ConfigError("field 'deltas': must be positive")
        except ValueError as exc:
            raise ConfigError(f"field 'deltas': {exc}") from exc
    for key in ("T", "horizon", "L", "points", "dual_T"):
        if key in cfg and cfg[key] < 1:
            raise ConfigError(f"field {key!r}: must be at least 1")
    if "mode" in cfg:
        allowed = {
            "duality": ("net", "bernoulli", "web", "coupled"),
            "density": ("net", "bernoulli", "web"),
            "tightness": ("net", "web", "bernoulli"),
            "dump-arrows": ("web", "sticky_pair", "net", "bernoulli", "coupled"),
        }[name]
        if cfg["mode"] not in allowed:
            raise ConfigError(f"field 'mode': {cfg['mode']!r} not in {allowed}")
    if name == "density" and cfg["method"] not in ("dual", "forward"):
        raise ConfigError("field 'method': expected dual or forward")
    if name == "hopcheck" and cfg["rule"] not in ("strict", "switch"):
        raise ConfigError("field 'rule': expected strict or switch")
    if "window" in cfg and len(_ints(cfg["window"])) != 4:
        raise ConfigError("field 'window': expected x0,x1,t0,t1")


def resolve_config(name: str, args: argparse.Namespace) -> dict:
    cfg = _defaults(name)
    given = {k: v for k, v in vars(args).items() if v is not None and k != "experiment"}
    if given.get("config"):
        cfg.update(read_config_file(given["config"], name))
    cfg.update(given)
    validate(name, cfg)
    return cfg


def _sha256(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def run(name: str, cfg: dict) -> int:
    """Execute one experiment, write outputs and manifest; return the exit code."""
    outdir = Path(cfg["outdir"])
    outdir.mkdir(parents=True, exist_ok=True)
    started = datetime.now(timezone.utc).isoformat(timespec="seconds")
    t0 = time.perf_counter()
    written: list[Path] = []
    try:
        outputs, ok = _RUNNERS[name](cfg)
        for fname, text in outputs.items():
            path = outdir / fname
            written.append(path)
            path.write_text(text)
        manifest = {
            "version": __version__,
            "experiment": name,
            "config": {k: v for k, v in cfg.items() if k not in _RUNTIME_KEYS},
            "seed0": cfg["seed"],
            "replica_count": cfg["replicas"],
            "replica_ranges": [[0, cfg["replicas"]]],
            "started_at": started,
            "elapsed_s": round(time.perf_counter() - t0, 3),
            "outputs": [{"path": p.name, "sha256": _sha256(p)} for p in written],
        }
        mpath = outdir / "manifest.json"
        written.append(mpath)
        mpath.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    except BaseException:
        for p in written:
            if p.exists():
                p.unlink()
        raise
    if cfg.get("assert_") and not ok:
        print(f"netlab {name}: acceptance threshold violated", file=sys.stderr)
        return 2
    return 0


def replay(manifest_path: str | Path, jobs: int | None = None, outdir: str | Path | None = None) -> int:
    """Re-run a manifest; 0 iff every output is byte-identical, 2 otherwise, 1 on error."""
    mpath = Path(manifest_path)
    if not mpath.is_file():
        print(f"netlab replay: manifest {mpath} not found", file=sys.stderr)
        return 1
    try:
        manifest = json.loads(mpath.read_text())
        name = manifest["experiment"]
        recorded = {o["path"]: o["sha256"] for o in manifest["outputs"]}
        cfg = _defaults(name)
        cfg.update(manifest["config"])
    except (ValueError, KeyError, TypeError) as exc:
        print(f"netlab replay: malformed manifest: {exc}", file=sys.stderr)
        return 1
    if manifest.get("version") != __version__:
        print(
            f"netlab replay: {VersionMismatch.__name__}: manifest version {manifest.get('version')} "
            f"differs from library {__version__}; comparing anyway",
            file=sys.stderr,
        )
    cfg["seed"] = manifest.get("seed0", cfg["seed"])
    cfg["replicas"] = manifest.get("replica_count", cfg["replicas"])
    cfg["jobs"] = jobs or 1
    cfg["assert_"] = False
    with tempfile.TemporaryDirectory() as tmp:
        cfg["outdir"] = str(outdir) if outdir else tmp
        try:
            validate(name, cfg)
            run(name, cfg)
        except (NetlabError, ValueError) as exc:
            print(f"netlab replay: {exc}", file=sys.stderr)
            return 1
        same = True
        for fname, digest in recorded.items():
            got = Path(cfg["outdir"]) / fname
            match = got.is_file() and _sha256(got) == digest
            print(f"{fname}: {'identical' if match else 'DIFFERENT'}")
            same &= match
    return 0 if same else 2


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    if args.experiment == "replay":
        return replay(args.manifest, args.jobs, args.outdir)
    try:
        cfg = resolve_config(args.experiment, args)
        return run(args.experiment, cfg)
    except NetlabError as exc:
        print(f"netlab {args.experiment}: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1
    except (ValueError, OSError) as exc:
        print(f"netlab {args.experiment}: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    raise SystemExit(main())
