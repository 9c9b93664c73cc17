"""Command-line front end.

Every subcommand reads an optional JSON config, applies flag overrides, writes
its outputs under ``--out`` and leaves a ``manifest.json`` beside them. Outputs
contain no timestamps or timings, so a rerun with the same manifest produces
byte-identical files.

Exit codes: 0 ok, 2 invalid input, 3 runtime failure.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from dataclasses import replace
from pathlib import Path

from . import __version__
from . import calibrate as cal
from . import freq_analytic as fa
from . import loss_analytic as la
from . import orx_pipeline as orx
from . import severity as sv
from . import validation as vd
from .mc_engine import SimConfig, loss_window_stats, pair_window_stats, rate_stats

log = logging.getLogger("oprisk_windows")

EXIT_OK, EXIT_INVALID, EXIT_RUNTIME = 0, 2, 3


class UsageError(ValueError):
    pass


# ---------------------------------------------------------------- config


def _load_config(path):
    if path is None:
        return {}
    try:
        with open(path) as fh:
            cfg = json.load(fh)
    except FileNotFoundError:
        raise UsageError(f"config file not found: {path}")
    except json.JSONDecodeError as e:
        raise UsageError(f"config {path} is not valid JSON: {e}")
    if not isinstance(cfg, dict):
        raise UsageError("config must be a JSON object")
    return cfg


def _maybe_file(v):
    """Inline JSON object, or a path to one."""
    if isinstance(v, str):
        return _load_config(v)
    return v


def parse_freq(d):
    d = _maybe_file(d)
    if "nu" in d:
        return fa.HomogRate.from_dict(d)
    return fa.FreqParams.from_dict(d)


def parse_severity(d):
    return sv.SeveritySpec.from_dict(_maybe_file(d))


def parse_pair(d, dt):
    d = _maybe_file(d)
    pc = fa.PairCoupling.from_dict(
        {"p1": _maybe_file(d["p1"]), "p2": _maybe_file(d["p2"]), "c": d.get("c", 0.0)}
    )
    return la.PairLossModel(pc, parse_severity(d["sev1"]), parse_severity(d["sev2"]), dt)


SIM_KEYS = ("horizon", "n_realizations", "burn_in", "initial_rate", "n_threads", "max_clip_fraction",
            "negative_stream", "time_budget")


def resolve(cfg: dict, args) -> dict:
    """Merge flag overrides into the config; the result is what the manifest records."""
    out = dict(cfg)
    sim = dict(out.get("sim", {}))
    if args.seed is not None:
        out["seed"] = args.seed
    out.setdefault("seed", 0)
    if args.dt is not None:
        out["dt"] = args.dt
    out.setdefault("dt", 0.001)
    if args.realizations is not None:
        sim["n_realizations"] = args.realizations
    if args.years is not None:
        sim["horizon"] = args.years
    if args.threads is not None:
        sim["n_threads"] = args.threads
    if args.tw is not None:
        out["T_w"] = list(args.tw)
    unknown = set(sim) - set(SIM_KEYS)
    if unknown:
        raise UsageError(f"unknown sim keys: {sorted(unknown)}")
    out["sim"] = sim
    return out


def sim_config(cfg: dict) -> SimConfig:
    return SimConfig(dt=float(cfg["dt"]), base_seed=int(cfg["seed"]), **cfg["sim"])


def _tws(cfg, default=(1.0,)):
    t = cfg.get("T_w", list(default))
    if not isinstance(t, list):
        t = [t]
    return [float(x) for x in t]


# ---------------------------------------------------------------- output


def _fmt(v):
    if isinstance(v, bool):
        return str(v).lower()
    if isinstance(v, float):
        return repr(v)
    return v


def write_csv(path: Path, header, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for r in rows:
            w.writerow([_fmt(v) for v in r])


def write_json(path: Path, obj):
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")


def _strip_elapsed(d):
    if isinstance(d, dict):
        return {k: _strip_elapsed(v) for k, v in d.items() if k != "elapsed"}
    if isinstance(d, list):
        return [_strip_elapsed(v) for v in d]
    return d


def write_manifest(out: Path, command: str, cfg: dict, files: dict, inputs: dict):
    write_json(
        out / "manifest.json",
        {
            "command": command,
            "config": cfg,
            "seed": cfg.get("seed"),
            "version": __version__,
            "fixtures": {k: orx.sha256(v) for k, v in sorted(inputs.items())},
            "outputs": sorted(Path(f).name for f in files.values()),
        },
    )


# ---------------------------------------------------------------- presets


def _preset_models(name: str, dt: float, n_points: int):
    if name == "homogeneous-families":
        return [la.LossModel(vd.HOMOG_BASE, s, dt) for f in vd.FAMILY_SWEEPS for s in vd.family_sweep(f, n_points)]
    if name == "shot-noise-families":
        return [la.LossModel(vd.SHOT_NOISE_BASE, s, dt) for f in vd.FAMILY_SWEEPS for s in vd.family_sweep(f, n_points)]
    if name == "tau-sweep":
        return vd.tau_sweep_models(dt)
    raise UsageError(f"unknown preset {name!r}")


def _models(cfg: dict):
    dt = float(cfg["dt"])
    if "preset" in cfg:
        return _preset_models(cfg["preset"], dt, int(cfg.get("n_points", 20)))
    if "points" in cfg:
        return [la.LossModel(parse_freq(p["freq"]), parse_severity(p["severity"]), dt) for p in cfg["points"]]
    if "freq" in cfg:
        freq = parse_freq(cfg["freq"])
        sevs = cfg.get("severities", [cfg["severity"]] if "severity" in cfg else [])
        return [la.LossModel(freq, parse_severity(s), dt) for s in sevs]
    raise UsageError("config needs one of 'preset', 'points' or 'freq'")


# ---------------------------------------------------------------- commands


def cmd_analytic(cfg, out):
    models = _models(cfg)
    tws = _tws(cfg)
    rows = []
    for m in models:
        mo = sv.moments(m.severity)
        for T_w in tws:
            s = la.loss_stats(m, T_w)
            rows.append([vd._label(m), T_w, mo.mean, mo.variance, s.mu_R, s.var_R, s.mu_Q, s.var_Q_raw, s.approximate])
    files = {"analytic": out / "analytic.csv"}
    write_csv(files["analytic"], ["point", "T_w", "mu_S", "var_S", "mu_R", "var_R", "mu_Q", "var_Q", "approximate"], rows)
    if "pair" in cfg:
        pm = parse_pair(cfg["pair"], float(cfg["dt"]))
        files["pair"] = out / "pair_analytic.csv"
        write_csv(
            files["pair"],
            ["T_w", "cov_R", "cov_Q"],
            [[T_w, la.pair_cov_small(pm), la.pair_cov_window(pm, T_w)] for T_w in tws],
        )
    return files


def cmd_simulate(cfg, out):
    kind = cfg.get("kind", "loss")
    sc = sim_config(cfg)
    tws = _tws(cfg)
    files = {"summary": out / "summary.json"}
    if kind == "rate":
        p = parse_freq(cfg["freq"])
        if not isinstance(p, fa.FreqParams):
            raise UsageError("rate simulation needs shot-noise parameters")
        max_lag = float(cfg.get("max_lag", 5 * p.tau))
        rs = rate_stats(p, sc, max_lag, float(cfg.get("lag_step", max_lag / 50)))
        rm = fa.rate_moments(p)
        write_json(files["summary"], {"moments": rs.moments.to_dict(), "analytic": rm.to_dict(),
                                      "n_realizations": rs.n_realizations, "meta": rs.meta})
        files["autocov"] = out / "rate_autocov.csv"
        write_csv(
            files["autocov"],
            ["lag", "mc", "se", "analytic"],
            [[t, v, s, float(fa.rate_autocov(p, t))] for t, v, s in rs.autocov.rows()],
        )
    elif kind == "loss":
        m = la.LossModel(parse_freq(cfg["freq"]), parse_severity(cfg["severity"]), sc.dt)
        s = loss_window_stats(m, sc, tws)
        write_json(files["summary"], _strip_elapsed(s.to_dict()))
    elif kind == "pair":
        pm = parse_pair(cfg["pair"], sc.dt)
        s = pair_window_stats(pm, sc, tws, cfg.get("max_lag"), cfg.get("lag_step"))
        write_json(files["summary"], _strip_elapsed(s.to_dict()))
    else:
        raise UsageError(f"unknown simulate kind {kind!r}")
    return files


def cmd_compare(cfg, out):
    sc = sim_config(cfg)
    files = {}
    if "pair" in cfg:
        pair = _maybe_file(cfg["pair"])
        cs = [float(c) for c in cfg.get("c_values", [pair.get("c", 0.0)])]

        def model_fn(c, dt):
            return parse_pair({**pair, "c": c}, dt)

        rows, small = vd.compare_pairs(cs, sc, _tws(cfg, (1.0, 2.0)), model_fn)
        files["compare"] = out / "compare_pair.csv"
        write_csv(files["compare"], ["c", "T_w", "analytic", "mc", "se", "mc_raw", "se_raw"], [r.as_list() for r in rows])
        files["bins"] = out / "compare_pair_bins.csv"
        write_csv(files["bins"], ["c", "analytic", "mc", "se"], small)
        return files
    tws = _tws(cfg)
    if len(tws) != 1:
        raise UsageError("compare takes a single window length")
    res = vd.compare_losses(_models(cfg), sc, tws[0])
    files["compare"] = out / "compare.csv"
    write_csv(files["compare"], ["point", "stat", "analytic", "mc", "se", "ratio"], [r.as_list() for r in res.rows])
    files["scale"] = out / "scale.json"
    write_json(files["scale"], {"scale_var_Q": res.scale, "partial": res.partial, "T_w": tws[0]})
    return files


def cmd_orx(cfg, out):
    paths = cfg.get("fixtures")
    raw = orx.load_raw(paths, cfg.get("checksums"))
    yearly = orx.per_institution_yearly(raw)
    stats = orx.category_stats(yearly, raw)
    return {k: Path(v) for k, v in orx.write_outputs(stats, yearly, out).items()}


def _fixture_inputs(cfg):
    if cfg.get("fixtures"):
        return dict(cfg["fixtures"])
    return {k: str(v) for k, v in orx.default_fixtures().items()}


def cmd_fit(cfg, out):
    src = cfg.get("category_stats")
    if src is None:
        raise UsageError("fit needs 'category_stats' (output of the orx command)")
    stats = orx.CategoryStats.from_dict(_load_config(src))
    target = cal.FitTarget.from_category_stats(stats)
    n = int(cfg.get("n_starts", 100))
    if n < 1:
        raise UsageError("n_starts must be >= 1")
    starts = cal.lhs_starts(n, int(cfg["seed"]))
    res = cal.fit(target, starts, int(cfg.get("n_workers", 1)), int(cfg.get("max_evals", 5000)), int(cfg["seed"]))
    if not res.converged:
        raise RuntimeError("no start converged")
    return {k: Path(v) for k, v in res.write(out).items()}


DEFAULT_T_GRID = [1 / 365, 1 / 52, 1 / 12, 0.25, 0.5, 1.0, 2.0]


def cmd_sweep(cfg, out):
    src = cfg.get("fit_mean")
    if src is None:
        raise UsageError("sweep needs 'fit_mean' (output of the fit command)")
    fm = _load_config(src)
    cats = tuple(fm["categories"])
    pv = cal.ParamVector42.from_array(fm["vector"])
    grid = [float(t) for t in cfg.get("T_grid", cfg.get("T_w", DEFAULT_T_GRID))]
    sw = cal.sweep_cov_Q(pv, fm["sev_means"], sorted(grid), float(cfg["dt"]), cats)
    files = {"sweep": out / "sweep.csv"}
    write_csv(files["sweep"], ["pair", "T_w", "cov_Q"], sw.rows())
    return files


def _read_sweep(path):
    try:
        with open(path, newline="") as fh:
            rows = list(csv.DictReader(fh))
    except FileNotFoundError:
        raise UsageError(f"sweep file not found: {path}")
    if not rows or set(rows[0]) != {"pair", "T_w", "cov_Q"}:
        raise UsageError(f"{path} is not a sweep CSV")
    return rows


def cmd_rank(cfg, out):
    src = cfg.get("sweep")
    if src is None:
        raise UsageError("rank needs 'sweep' (output of the sweep command)")
    tws = _tws(cfg)
    rows = _read_sweep(src)
    ranked = []
    for T_w in tws:
        sel = [(r["pair"], float(r["cov_Q"])) for r in rows if abs(float(r["T_w"]) - T_w) <= 1e-12 * T_w]
        if not sel:
            raise UsageError(f"T_w={T_w} is not on the sweep grid")
        sel.sort(key=lambda x: -abs(x[1]))
        ranked += [[T_w, i + 1, p, v] for i, (p, v) in enumerate(sel)]
    files = {"rank": out / "rank.csv"}
    write_csv(files["rank"], ["T_w", "rank", "pair", "cov_Q"], ranked)
    return files


COMMANDS = {
    "analytic": cmd_analytic,
    "simulate": cmd_simulate,
    "compare": cmd_compare,
    "orx": cmd_orx,
    "fit": cmd_fit,
    "sweep": cmd_sweep,
    "rank": cmd_rank,
}

INPUT_KEYS = {"fit": ("category_stats",), "sweep": ("fit_mean",), "rank": ("sweep",)}


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="oprisk-windows", description=__doc__.splitlines()[0])
    ap.add_argument("--version", action="version", version=__version__)
    sub = ap.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", help="JSON config file")
        p.add_argument("--seed", type=int)
        p.add_argument("--out", default="out", help="output directory (default: out)")
        p.add_argument("--realizations", type=int)
        p.add_argument("--years", type=float, help="recorded horizon per realization")
        p.add_argument("--dt", type=float, help="grid step in years (default 0.001)")
        p.add_argument("--tw", type=float, nargs="+", help="window length(s) in years")
        p.add_argument("--threads", type=int)
        p.add_argument("-v", "--verbose", action="store_true")
    return ap


def main(argv=None) -> int:
    ap = build_parser()
    try:
        args = ap.parse_args(argv)
    except SystemExit as e:
        return EXIT_OK if e.code == 0 else EXIT_INVALID
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    out = Path(args.out)
    try:
        cfg = resolve(_load_config(args.config), args)
        out.mkdir(parents=True, exist_ok=True)
        files = COMMANDS[args.command](cfg, out)
        inputs = {k: cfg[k] for k in INPUT_KEYS.get(args.command, ()) if isinstance(cfg.get(k), str)}
        if args.command == "orx":
            inputs.update(_fixture_inputs(cfg))
        write_manifest(out, args.command, cfg, files, inputs)
    except (UsageError, sv.SeverityError, la.ConfigError, cal.DomainError, orx.OrxLoadError,
            KeyError, TypeError, ValueError, FileNotFoundError) as e:
        msg = f"missing key {e}" if isinstance(e, KeyError) else str(e)
        print(f"error: {msg}", file=sys.stderr)
        return EXIT_INVALID
    except Exception as e:  # noqa: BLE001
        log.debug("runtime failure", exc_info=True)
        print(f"runtime error: {e}", file=sys.stderr)
        return EXIT_RUNTIME
    for f in files.values():
        print(f)
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
