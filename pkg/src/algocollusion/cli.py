"""Command-line front end: run a scenario file and emit data files plus a manifest.

Exit codes: 0 ok, 2 configuration error, 3 numerical failure, 4 I/O error.
"""
from __future__ import annotations

import argparse
import csv
import hashlib
import io
import itertools
import json
import os
import sys
from importlib import resources
from pathlib import Path

import jsonschema
import numpy as np
import yaml

from . import __version__, analysis, filippov, mechanisms
from .fluid import SymmetricReduction, build_field
from .games import game_from_dict
from .reinforcer import ReinforcerSpec
from .simulator import DivergenceError, EpisodeConfig, run_episode, sweep

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC, EXIT_IO = 0, 2, 3, 4
MODES = ("simulate", "fluid", "basins", "steady", "sweep", "chaos", "mechanisms")


class ConfigError(ValueError):
    pass


_num = {"type": "number"}
_agent = {
    "type": "object",
    "properties": {
        "update_family": {"enum": ["q_async", "q_sync"]},
        "alpha": {"oneOf": [_num, {"type": "array", "items": _num}]},
        "gamma": _num,
        "epsilon": _num,
        "init": {"oneOf": [{"enum": ["optimistic", "random"]}, {"type": "array", "items": _num}]},
        "init_range": {"type": "array", "items": _num, "minItems": 2, "maxItems": 2},
        "deterministic_ties": {"type": "boolean"},
    },
    "additionalProperties": False,
}

SCHEMA = {
    "type": "object",
    "required": ["name", "mode"],
    "properties": {
        "name": {"type": "string"},
        "description": {"type": "string"},
        "mode": {"enum": list(MODES)},
        "seed": {"type": "integer", "minimum": 0},
        "game": {
            "type": "object",
            "required": ["family"],
            "properties": {"family": {"enum": ["contribution", "general_pd", "bertrand", "keyword"]},
                           "params": {"type": "object"}},
        },
        "agents": {"type": "array", "items": _agent, "minItems": 1},
        "run": {"type": "object"},
        "output": {"type": "object", "properties": {"format": {"enum": ["csv", "json"]}}},
    },
    "additionalProperties": False,
    "allOf": [
        {"if": {"properties": {"mode": {"enum": ["simulate", "sweep", "fluid", "basins", "chaos"]}}},
         "then": {"required": ["game", "agents", "run"]}},
        {"if": {"properties": {"mode": {"const": "steady"}}}, "then": {"required": ["game"]}},
        {"if": {"properties": {"mode": {"const": "mechanisms"}}}, "then": {"required": ["run"]}},
        {"if": {"properties": {"mode": {"const": "sweep"}}},
         "then": {"properties": {"run": {"required": ["grid", "seeds_per_cell", "iterations"]}}}},
        {"if": {"properties": {"mode": {"const": "simulate"}}},
         "then": {"properties": {"run": {"required": ["iterations"]}}}},
        {"if": {"properties": {"mode": {"const": "chaos"}}},
         "then": {"properties": {"run": {"required": ["init", "horizon"]}}}},
        {"if": {"properties": {"mode": {"const": "mechanisms"}}},
         "then": {"properties": {"run": {"required": ["kind"]}}}},
    ],
}


# ---------------------------------------------------------------------------
# config handling

def bundled_scenarios() -> dict:
    root = resources.files("algocollusion") / "scenarios"
    return {Path(p.name).stem: p for p in sorted(root.iterdir(), key=lambda p: p.name)
            if p.name.endswith(".yaml")}


def load_config(path_or_name: str) -> tuple[dict, bytes]:
    p = Path(path_or_name)
    if not p.exists():
        found = bundled_scenarios().get(path_or_name)
        if found is None:
            raise FileNotFoundError(f"no config file or bundled scenario named {path_or_name!r}")
        raw = found.read_bytes()
    else:
        raw = p.read_bytes()
    try:
        cfg = yaml.safe_load(raw)
    except yaml.YAMLError as exc:
        raise ConfigError(f"invalid YAML: {exc}") from exc
    validate_config(cfg)
    return cfg, raw


def validate_config(cfg) -> None:
    if not isinstance(cfg, dict):
        raise ConfigError("config must be a mapping")
    try:
        jsonschema.validate(cfg, SCHEMA)
    except jsonschema.ValidationError as exc:
        where = "/".join(map(str, exc.absolute_path)) or "<root>"
        raise ConfigError(f"schema error at {where}: {exc.message}") from exc


def _game(cfg):
    g = cfg["game"]
    try:
        return game_from_dict({"family": g["family"], "params": g.get("params", {})})
    except (KeyError, TypeError, ValueError) as exc:
        raise ConfigError(f"bad game parameters: {exc}") from exc


def _specs(cfg, n_players):
    try:
        specs = [ReinforcerSpec.from_dict(a) for a in cfg["agents"]]
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"bad agent settings: {exc}") from exc
    if len(specs) == 1:
        specs = specs * n_players
    if len(specs) != n_players:
        raise ConfigError(f"{len(specs)} agents configured for a {n_players}-player game")
    return specs


def _grid_cells(grid):
    if isinstance(grid, list):
        return [dict(c) for c in grid]
    keys = list(grid)
    vals = [v if isinstance(v, list) else [v] for v in grid.values()]
    return [dict(zip(keys, combo)) for combo in itertools.product(*vals)]


def _linspace(spec):
    return np.linspace(float(spec["low"]), float(spec["high"]), int(spec["n"]))


# ---------------------------------------------------------------------------
# table output

def _cell(v):
    if isinstance(v, (list, tuple, dict)):
        return json.dumps(_plain(v))
    if isinstance(v, float):
        return repr(v)
    return v


def _plain(v):
    if isinstance(v, dict):
        return {str(k): _plain(x) for k, x in v.items()}
    if isinstance(v, (list, tuple)):
        return [_plain(x) for x in v]
    if isinstance(v, np.ndarray):
        return _plain(v.tolist())
    if isinstance(v, (np.integer,)):
        return int(v)
    if isinstance(v, (float, np.floating)):
        return float(v) if np.isfinite(v) else None
    if isinstance(v, (np.bool_,)):
        return bool(v)
    return v


def table_bytes(rows, fmt: str) -> bytes:
    rows = [_plain(r) for r in rows]
    if fmt == "json":
        return (json.dumps(rows, indent=1, sort_keys=False) + "\n").encode()
    keys = []
    for r in rows:
        for k in r:
            if k not in keys:
                keys.append(k)
    buf = io.StringIO()
    w = csv.DictWriter(buf, fieldnames=keys, lineterminator="\n")
    w.writeheader()
    for r in rows:
        w.writerow({k: _cell(r.get(k, "")) for k in keys})
    return buf.getvalue().encode()


def json_bytes(obj) -> bytes:
    return (json.dumps(_plain(obj), indent=1, allow_nan=False) + "\n").encode()


# ---------------------------------------------------------------------------
# modes; each returns {file name: bytes}

def run_simulate(cfg, fmt, jobs):
    game = _game(cfg)
    specs = _specs(cfg, game.n_players)
    r = cfg["run"]
    seeds = r.get("seeds", [cfg.get("seed", 0)])
    out, summary = {}, []
    for seed in seeds:
        ec = EpisodeConfig(int(r["iterations"]), seed=int(seed), record_window=r.get("record_window"),
                           snapshot_stride=int(r.get("snapshot_stride", 100)))
        res = run_episode(game, specs, ec)
        rows = []
        for k, step in enumerate(res.trace_steps):
            row = {"step": int(step)}
            for i in range(game.n_players):
                for a, lab in enumerate(game.action_sets[i]):
                    row[f"theta_{i}_{lab}"] = float(res.theta_trace[k, i, a])
            rows.append(row)
        out[f"trace_seed{seed}.{fmt}"] = table_bytes(rows, fmt)
        summary.append({"seed": seed, "nash_fraction": res.nash_fraction,
                        "learned_actions": res.learned_actions,
                        "modal_profile": [game.action_sets[i][a] for i, a in enumerate(res.modal_profile())],
                        **{f"local_time_{i}": float(v) for i, v in enumerate(res.local_time)}})
    out[f"summary.{fmt}"] = table_bytes(summary, fmt)
    return out


def run_sweep(cfg, fmt, jobs):
    g = cfg["game"]
    r = cfg["run"]
    cells = _grid_cells(r["grid"])
    base = dict(g.get("params", {}))
    cells = [{**base, **c} for c in cells]
    n_players = _game({"game": {"family": g["family"], "params": cells[0]}}).n_players
    specs = _specs(cfg, n_players)
    ec = EpisodeConfig(int(r["iterations"]), seed=int(cfg.get("seed", 0)),
                       record_window=r.get("record_window"),
                       snapshot_stride=int(r.get("snapshot_stride", 100)))
    try:
        res = sweep(g["family"], cells, int(r["seeds_per_cell"]), specs, ec, jobs=jobs)
    except (KeyError, TypeError) as exc:
        raise ConfigError(f"bad sweep grid: {exc}") from exc
    rows = []
    for c in res.cells:
        row = dict(c)
        if g["family"] == "contribution":
            rep = analysis.pd_steady_states(c["g"], specs[0].epsilon, specs[0].gamma)
            row["tau_analytic"] = rep.tau_at_C if rep.tau_at_C is not None else ""
        rows.append(row)
    game = _game({"game": {"family": g["family"], "params": cells[0]}})
    eps_rows = []
    for e in res.episodes:
        e = dict(e)
        if "modal_profile" in e:
            e["modal_profile"] = [game.action_sets[i][a] for i, a in enumerate(e["modal_profile"])]
        eps_rows.append(e)
    return {f"cells.{fmt}": table_bytes(rows, fmt), f"episodes.{fmt}": table_bytes(eps_rows, fmt)}


def _field(cfg):
    game = _game(cfg)
    specs = _specs(cfg, game.n_players)
    fld = build_field(game, specs)
    if cfg["run"].get("symmetric", False):
        fld = SymmetricReduction(fld)
    return game, specs, fld


def run_fluid(cfg, fmt, jobs):
    game, specs, fld = _field(cfg)
    r = cfg["run"]
    out = {}
    if fld.is_affine:
        pieces = []
        for lab in fld.labels():
            A, b = fld.piece(lab)
            pieces.append({"label": [game.action_sets[0][a] for a in lab], "A": A, "b": b})
        out["pieces.json"] = json_bytes({"sizes": fld.sizes, "pieces": pieces})
    if "grid" in r:
        if fld.dim != 2:
            raise ConfigError("a field grid needs a two-dimensional state (use symmetric: true)")
        xs = _linspace(r["grid"])
        rows = []
        for qc in xs:
            for qd in xs:
                th = np.array([qc, qd])
                lab = fld.label_of(th, strict=False)
                v = fld.eval_piece(lab, th)
                rows.append({"theta_0": float(qc), "theta_1": float(qd),
                             "domain": game.action_sets[0][lab[0]], "d_theta_0": float(v[0]),
                             "d_theta_1": float(v[1])})
        out[f"field_grid.{fmt}"] = table_bytes(rows, fmt)
    for k, start in enumerate(r.get("trajectories", [])):
        traj = filippov.integrate(fld, np.asarray(start, float), float(r.get("horizon", 1000.0)))
        rows = [{"t": float(t), **{f"theta_{j}": float(v) for j, v in enumerate(y)},
                 "mode": filippov.mode_label(seg.mode, game.action_sets[0])} for t, y, seg in traj.step_points()]
        out[f"trajectory_{k}.{fmt}"] = table_bytes(rows, fmt)
    return out


def run_basins(cfg, fmt, jobs):
    game, specs, fld = _field(cfg)
    r = cfg["run"]
    if fld.dim != 2:
        raise ConfigError("basins need a two-dimensional state (use symmetric: true)")
    targets = {k: np.asarray(v, float) for k, v in r.get("targets", {}).items()}
    if not targets and game.family == "contribution":
        rep = analysis.pd_steady_states(game.params["g"], specs[0].epsilon, specs[0].gamma)
        targets["q_eq_D"] = rep.q_eq_D
        if rep.exists_C:
            targets["q_eq_C"] = rep.q_eq_C
    if not targets:
        raise ConfigError("basins need targets")
    xs = _linspace(r["grid"])
    pts = np.array([[[a, b] for b in xs] for a in xs])
    bm = analysis.basins(fld, pts, targets, horizon=float(r.get("horizon", 5000.0)),
                         radius=float(r.get("radius", 1e-3)))
    rows = [{"theta_0": float(pts[i, j, 0]), "theta_1": float(pts[i, j, 1]),
             "label": bm.legend[int(bm.labels[i, j])]}
            for i in range(xs.size) for j in range(xs.size)]
    return {f"basins.{fmt}": table_bytes(rows, fmt),
            "legend.json": json_bytes({"legend": bm.legend, "targets": targets})}


def run_steady(cfg, fmt, jobs):
    g = cfg["game"]
    p = g.get("params", {})
    r = cfg.get("run", {})
    fam = g["family"]
    if fam == "contribution":
        agents = cfg.get("agents") or [{}]
        eps = float(agents[0].get("epsilon", 0.1))
        gam = float(agents[0].get("gamma", 0.9))
        out = {"steady.json": json_bytes(analysis.pd_steady_states(p["g"], eps, gam).to_dict())}
        if "g_values" in r:
            rows = []
            for gv in r["g_values"]:
                rep = analysis.pd_steady_states(float(gv), eps, gam)
                rows.append({"g": gv, "epsilon_threshold": rep.epsilon_threshold, "exists_C": rep.exists_C})
            out[f"threshold.{fmt}"] = table_bytes(rows, fmt)
        return out
    if fam == "bertrand":
        agents = cfg.get("agents") or [{}]
        gam = float(agents[0].get("gamma", 0.0))
        eps = float(agents[0].get("epsilon", 0.0))
        model = p.get("model", "simple")
        reports = {}
        for upd in r.get("updating", ["async", "sync"]):
            try:
                rep = analysis.bertrand_structure(model, upd, epsilon=eps, gamma=gam)
            except ValueError as exc:
                raise ConfigError(str(exc)) from exc
            reports[upd] = {"stationary": rep.stationary, "attractor": rep.attractor,
                            "predicted_prices": rep.predicted_prices}
        return {"bertrand.json": json_bytes({"model": model, "gamma": gam, "reports": reports})}
    if fam == "general_pd":
        rows = []
        for x, y, e in itertools.product(r.get("x", [p.get("x")]), r.get("y", [p.get("y")]),
                                         r.get("epsilon", [0.1])):
            v = analysis.pd_region_general(float(x), float(y), float(e))
            exact = analysis.pd_region_exact(float(x), float(y), float(e))["inside"]
            rows.append({"x": x, "y": y, "epsilon": e, "inside": v.inside, "inside_exact": exact,
                         **v.slacks})
        return {f"region.{fmt}": table_bytes(rows, fmt)}
    raise ConfigError(f"steady mode does not cover the {fam!r} family")


def run_chaos(cfg, fmt, jobs):
    game, specs, fld = _field(cfg)
    r = cfg["run"]
    rep = analysis.chaos_diagnostics(fld, np.asarray(r["init"], float),
                                     perturbation=float(r.get("perturbation", 1e-10)),
                                     horizon=float(r["horizon"]), method=r.get("method", "timestep"),
                                     step=float(r.get("step", 0.01)), cell=float(r.get("cell", 0.2)))
    summary = {"divergence_slope": rep.divergence_slope, "saturation_time": rep.saturation_time,
               "growth_orders": rep.growth_orders, "truncated": rep.truncated,
               "growth_window": rep.window, "origin_occupancy": rep.occupancy["origin"],
               "occupancy_edges": rep.occupancy["edges"],
               "occupancy": rep.occupancy["probabilities"]}
    rows = [{"t": float(t), "separation": float(s)} for t, s in zip(rep.times, rep.separation)]
    return {"chaos.json": json_bytes(summary), f"separation.{fmt}": table_bytes(rows, fmt)}


def run_mechanisms(cfg, fmt, jobs):
    r = cfg["run"]
    if r["kind"] == "vcg":
        bids = r.get("bids")
        if not bids or len(bids) < 3:
            raise ConfigError("the VCG demo needs at least three bids")
        try:
            res = mechanisms.vcg_two_slot(bids)
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc
        rows = []
        for k in range(len(bids)):
            for d in range(101):
                rows.append({"agent": k, "deviation": d / 10,
                             "payoff": mechanisms.counterfactual_reconstruct(
                                 k, res.feedback[k], mechanisms.to_tenths(bids[k]), d, tenths=True) / 10})
        summary = {"bids": bids, "slots": res.slots, "payments": res.payments,
                   "feedback": [{"low": f[0] / 10, "high": f[1] / 10,
                                 "low_wins_tie": f[2], "high_wins_tie": f[3]} for f in res.feedback]}
        return {"vcg.json": json_bytes(summary), f"counterfactuals.{fmt}": table_bytes(rows, fmt)}
    if r["kind"] == "finite":
        m = r.get("mechanism")
        try:
            mech = mechanisms.FiniteMechanism(tuple(tuple(t) for t in m["type_spaces"]), tuple(m["outcomes"]),
                                              np.asarray(m["f"]), tuple(np.asarray(u) for u in m["utilities"]))
        except (KeyError, TypeError, ValueError) as exc:
            raise ConfigError(f"bad mechanism: {exc}") from exc
        sp, witness = mechanisms.is_strategy_proof(mech)
        agents = []
        for i in range(mech.n_agents):
            agents.append({"agent": i,
                           "canonical": mechanisms.canonical_max_policy(mech, i).to_dict(),
                           "full_revelation": mechanisms.full_revelation(mech, i).to_dict(),
                           "menu_partition_check": mechanisms.compare_menu_partitions(mech, i)})
        return {"mechanism.json": json_bytes({"strategy_proof": sp, "witness": witness, "agents": agents})}
    raise ConfigError(f"unknown mechanism kind {r['kind']!r}")


RUNNERS = {"simulate": run_simulate, "sweep": run_sweep, "fluid": run_fluid, "basins": run_basins,
           "steady": run_steady, "chaos": run_chaos, "mechanisms": run_mechanisms}


# ---------------------------------------------------------------------------
# entry points

def execute(cfg: dict, raw: bytes, out_dir: str | os.PathLike, fmt: str | None = None,
            jobs: int | None = None) -> dict:
    """Run a validated config and write its files plus ``manifest.json``."""
    fmt = fmt or cfg.get("output", {}).get("format", "csv")
    files = RUNNERS[cfg["mode"]](cfg, fmt, jobs)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    entries = []
    for name, data in sorted(files.items()):
        (out / name).write_bytes(data)
        entries.append({"path": name, "sha256": hashlib.sha256(data).hexdigest()})
    manifest = {"scenario": cfg["name"], "mode": cfg["mode"], "seed": cfg.get("seed", 0),
                "config_sha256": hashlib.sha256(raw).hexdigest(),
                "config": cfg, "tool_version": __version__, "format": fmt, "files": entries}
    (out / "manifest.json").write_bytes(json_bytes(manifest))
    return manifest


def _cmd_run(args) -> int:
    try:
        cfg, raw = load_config(args.config)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except OSError as exc:
        print(f"cannot read config: {exc}", file=sys.stderr)
        return EXIT_IO
    if args.seed is not None:
        cfg["seed"] = args.seed
        raw = raw + f"\n# seed override {args.seed}\n".encode()
    jobs = args.jobs if args.jobs is not None else (os.cpu_count() or 1)
    try:
        manifest = execute(cfg, raw, args.out, args.format, jobs)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (DivergenceError, filippov.DegenerateBoundaryError, FloatingPointError,
            np.linalg.LinAlgError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except ValueError as exc:
        # parameter checks in the library (e.g. g outside its range)
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except OSError as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_IO
    print(f"wrote {len(manifest['files'])} files and manifest.json to {args.out}")
    return EXIT_OK


def _cmd_list(args) -> int:
    for name, path in bundled_scenarios().items():
        try:
            cfg = yaml.safe_load(path.read_text())
            desc = cfg.get("description", "")
            mode = cfg.get("mode", "?")
        except yaml.YAMLError:
            desc, mode = "(unreadable)", "?"
        print(f"{name:18s} {mode:11s} {desc}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="algocollusion", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=__version__)
    sub = p.add_subparsers(dest="command", required=True)
    r = sub.add_parser("run", help="run a scenario file or bundled scenario")
    r.add_argument("--config", required=True, help="YAML file or bundled scenario name")
    r.add_argument("--out", required=True, help="output directory")
    r.add_argument("--seed", type=int, default=None, help="override the base seed")
    r.add_argument("--jobs", type=int, default=None, help="worker processes (default: all cores)")
    r.add_argument("--format", choices=["csv", "json"], default=None, help="table format")
    r.set_defaults(func=_cmd_run)
    ls = sub.add_parser("list", help="list bundled scenarios")
    ls.set_defaults(func=_cmd_list)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
