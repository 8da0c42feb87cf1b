"""Command-line front end.

One executable with a subcommand per study; a YAML config file supplies
the grid (file path or synthesis parameters), the scenario and the sweep
definitions, while a few flags (--seed, --jobs, --out, --format)
override per run.  Identical config and seed produce byte-identical
outputs; per-trial failures are counted and reported, not fatal.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import yaml

from . import __version__
from .allocation import ScenarioConfig, capacity_shares
from .errors import ConfigurationError, VsgStabError
from .experiments import (
    SweepSpec,
    derive_seed,
    heatmap_sweep,
    intervention_study,
    participation_sweep,
    placement_distribution,
    scenario_grid,
    stabilization_study,
)
from .network import VirtualImpedance, thevenin_at
from .smallsignal import assess, build_statespace
from .storage import StorageControllerConfig, dsm
from .timedomain import DisturbanceSpec, PronyConfig, prony_damping, simulate_step
from .topology import dump_grid, load_grid, synth_topology


def _load_config(path: str | None) -> dict:
    if path is None:
        return {}
    try:
        with open(path) as fh:
            doc = yaml.safe_load(fh) or {}
    except (OSError, yaml.YAMLError) as e:
        raise ConfigurationError(f"cannot read config {path}: {e}") from e
    if not isinstance(doc, dict):
        raise ConfigurationError("config must be a YAML mapping")
    return doc


def _get_grid(cfg: dict):
    spec = cfg.get("grid", {})
    if "path" in spec:
        return load_grid(spec["path"])
    synth = dict(spec.get("synth", {}))
    synth.setdefault("seed", 0)
    return synth_topology(**synth)


def _scenario_config(cfg: dict, seed_override: int | None) -> ScenarioConfig:
    sc = dict(cfg.get("scenario", {}))
    if "snsp" not in sc or "n_inv" not in sc:
        raise ConfigurationError("scenario needs at least snsp and n_inv")
    seed = seed_override if seed_override is not None else sc.pop("seed", 0)
    sc.pop("rng_seed", None)
    return ScenarioConfig(rng_seed=seed, **sc)


def _storage_config(cfg: dict) -> StorageControllerConfig:
    st = cfg.get("storage", {})
    return StorageControllerConfig(
        damping_trigger=st.get("damping_trigger", 0.0),
        dsm_target=st.get("dsm_target", 1e-3),
        dL=st.get("dl_h", 0.2e-3),
        L_max=st.get("l_max_h", 20e-3),
        kappa=st.get("kappa", 1.0),
    )


def _sweep_spec(cfg: dict, seed_override: int | None) -> SweepSpec:
    sw = cfg.get("sweep", {})
    if "snsp_grid" not in sw or "n_inv_grid" not in sw:
        raise ConfigurationError("sweep needs snsp_grid and n_inv_grid")
    base_seed = seed_override if seed_override is not None else sw.get("base_seed", 0)
    return SweepSpec(
        snsp_grid=tuple(sw["snsp_grid"]),
        n_inv_grid=tuple(int(n) for n in sw["n_inv_grid"]),
        h_grid=tuple(sw.get("h_grid", [4.0])),
        n_trials=int(sw.get("n_trials", 100)),
        base_seed=base_seed,
        participation=float(sw.get("participation", 1.0)),
        L_v_options=tuple(sw.get("lv_options_h", [0.2e-3, 2e-3, 20e-3])),
        s_total=float(sw.get("s_total", 1.0)),
        s_demand=sw.get("s_demand"),
        t_c=sw.get("t_c"),
        r0=float(sw.get("r0", 3.0)),
    )


def _json_dump(obj) -> str:
    return json.dumps(obj, sort_keys=True, indent=2) + "\n"


def _write(out_dir: Path | None, name: str, text: str) -> None:
    if out_dir is None:
        sys.stdout.write(text)
        return
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / name).write_text(text)


def _csv(rows: list[dict], columns: list[str]) -> str:
    def fmt(v):
        if v is None:
            return ""
        if isinstance(v, float):
            return repr(v)
        return str(v)

    lines = [",".join(columns)]
    for row in rows:
        lines.append(",".join(fmt(row.get(c)) for c in columns))
    return "\n".join(lines) + "\n"


def _emit_table(args, rows: list[dict], columns: list[str], stem: str) -> None:
    out = Path(args.out) if args.out else None
    if args.format == "json":
        _write(out, f"{stem}.json", _json_dump(rows))
    else:
        _write(out, f"{stem}.csv", _csv(rows, columns))


def _emit_records(args, records: list[dict], stem: str) -> None:
    if args.out is None:
        return
    _write(Path(args.out), f"{stem}_records.json", _json_dump(records))


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------


def cmd_gen_grid(args) -> int:
    cfg = _load_config(args.config)
    synth = dict(cfg.get("grid", {}).get("synth", {}))
    if args.seed is not None:
        synth["seed"] = args.seed
    synth.setdefault("seed", 0)
    if args.substations is not None:
        synth["n_substations"] = args.substations
    if args.loads is not None:
        synth["n_loads"] = args.loads
    grid = synth_topology(**synth)
    text = dump_grid(grid)
    if args.out:
        Path(args.out).parent.mkdir(parents=True, exist_ok=True)
        Path(args.out).write_text(text)
    else:
        sys.stdout.write(text)
    return 0


def _assessment(args):
    cfg = _load_config(args.config)
    grid = _get_grid(cfg)
    scenario = _scenario_config(cfg, args.seed)
    g = scenario_grid(grid, scenario)
    alloc = capacity_shares(g, scenario)
    return cfg, g, scenario, alloc


def cmd_assess(args) -> int:
    _, g, _, alloc = _assessment(args)
    report = assess(g, alloc.sources)
    doc = report.to_dict()
    doc["inverter_nodes"] = list(alloc.inverter_nodes)
    del doc["eigenvalues"]
    _write(Path(args.out) if args.out else None, "assess.json", _json_dump(doc))
    return 0


def cmd_modes(args) -> int:
    _, g, _, alloc = _assessment(args)
    report = assess(g, alloc.sources)
    _write(Path(args.out) if args.out else None, "modes.json", _json_dump(report.to_dict()))
    return 0


def cmd_dsm(args) -> int:
    _, g, _, alloc = _assessment(args)
    nodes = tuple(s.node for s in alloc.sources)
    rows = []
    for s in alloc.sources:
        if s.kind != "virtual":
            continue
        vi = VirtualImpedance(node=s.node, L_v=args.lv) if args.lv else None
        th = thevenin_at(g, nodes, s.node, vi=vi)
        rows.append(
            {
                "node": s.node,
                "G": th.G,
                "B": th.B,
                "Gp": th.Gp,
                "Bp": th.Bp,
                "dsm": dsm(th, s.k_f, s.k_v, 1.0 / s.T_c),
                "L_v_h": args.lv or 0.0,
            }
        )
    _emit_table(args, rows, ["node", "G", "B", "Gp", "Bp", "dsm", "L_v_h"], "dsm")
    return 0


def cmd_stabilize(args) -> int:
    cfg, g, _, alloc = _assessment(args)
    study = stabilization_study(g, alloc.sources, alloc.inverter_nodes, _storage_config(cfg))
    doc = {
        "zeta_before": study.before.zeta,
        "zeta_after": study.after.zeta,
        "stable_before": study.before.stable,
        "stable_after": study.after.stable,
        "reports": [r.to_dict() for r in study.reports],
    }
    _write(Path(args.out) if args.out else None, "stabilize.json", _json_dump(doc))
    return 0


def cmd_intervene(args) -> int:
    _, g, _, alloc = _assessment(args)
    before, after = intervention_study(g, alloc.sources, args.node)
    doc = {
        "node": args.node,
        "zeta_before": before.zeta,
        "zeta_after": after.zeta,
        "delta": after.zeta - before.zeta,
    }
    _write(Path(args.out) if args.out else None, "intervene.json", _json_dump(doc))
    return 0


def cmd_simulate(args) -> int:
    cfg, g, _, alloc = _assessment(args)
    dcfg = cfg.get("disturbance", {})
    node = args.node or dcfg.get("node")
    if node is None:
        raise ConfigurationError("simulate needs a disturbance node (--node)")
    dist = DisturbanceSpec(
        node=node,
        dP=args.dp if args.dp is not None else dcfg.get("dp", 0.01),
        t_step=dcfg.get("t_step", 0.2),
        t_end=args.t_end if args.t_end is not None else dcfg.get("t_end", 8.0),
        dt=args.dt if args.dt is not None else dcfg.get("dt", 1e-3),
    )
    ss = build_statespace(g, alloc.sources)
    trace = simulate_step(ss, dist)
    pcfg = cfg.get("prony", {})
    pc = PronyConfig(
        model_order=int(pcfg.get("model_order", 6)),
        window=pcfg.get("window"),
        fit_tolerance=float(pcfg.get("fit_tolerance", 0.05)),
    )
    out = Path(args.out) if args.out else None
    _write(out, "trace.csv", trace.to_csv())
    try:
        zeta_hat = prony_damping(trace, pc)
        summary = {"prony_zeta": zeta_hat}
    except VsgStabError as e:
        summary = {"prony_error": str(e)}
    if out is not None:
        _write(out, "simulate.json", _json_dump(summary))
    else:
        sys.stdout.write(_json_dump(summary))
    return 0


def cmd_sweep_heatmap(args) -> int:
    cfg = _load_config(args.config)
    grid = _get_grid(cfg)
    spec = _sweep_spec(cfg, args.seed)
    result = heatmap_sweep(grid, spec, jobs=args.jobs)
    rows = [
        {
            "h_total": c.h_total,
            "snsp": c.snsp,
            "n_inv": c.n_inv,
            "mean_zeta": c.mean_zeta,
            "n_trials": c.n_trials,
            "n_failed": c.n_failed,
            "flagged": c.flagged,
        }
        for c in result.cells
    ]
    _emit_table(args, rows, ["h_total", "snsp", "n_inv", "mean_zeta", "n_trials", "n_failed", "flagged"], "heatmap")
    _emit_records(args, [r.to_dict() for r in result.records], "heatmap")
    n_failed = sum(1 for r in result.records if r.failed)
    print(f"heatmap: {len(result.records)} trials, {n_failed} failed", file=sys.stderr)
    return 0


def cmd_sweep_placement(args) -> int:
    cfg = _load_config(args.config)
    grid = _get_grid(cfg)
    sc = cfg.get("scenario", {})
    spec = _sweep_spec(cfg, args.seed) if "sweep" in cfg else None
    n_trials = int(cfg.get("sweep", {}).get("n_trials", 100))
    base_seed = args.seed if args.seed is not None else cfg.get("sweep", {}).get("base_seed", 0)
    result = placement_distribution(
        grid,
        snsp=float(sc.get("snsp", 0.5)),
        n_inv=int(sc.get("n_inv", 10)),
        h_total=float(sc.get("h_total", 4.0)),
        n_trials=n_trials,
        base_seed=base_seed,
        spec=spec,
        jobs=args.jobs,
    )
    rows = [
        {"trial": r.trial, "seed": r.seed, "zeta": r.zeta_before, "error": r.error}
        for r in result.records
    ]
    _emit_table(args, rows, ["trial", "seed", "zeta", "error"], "placement")
    summary = {
        "q25": result.quartiles[0],
        "median": result.quartiles[1],
        "q75": result.quartiles[2],
        "n_failed": result.n_failed,
    }
    if args.out is not None:
        _write(Path(args.out), "placement_summary.json", _json_dump(summary))
    print(f"placement: {len(result.records)} trials, {result.n_failed} failed", file=sys.stderr)
    return 0


def cmd_sweep_participation(args) -> int:
    cfg = _load_config(args.config)
    grid = _get_grid(cfg)
    sc = cfg.get("scenario", {})
    sw = cfg.get("sweep", {})
    base_seed = args.seed if args.seed is not None else sw.get("base_seed", 0)
    rows = participation_sweep(
        grid,
        snsp=float(sc.get("snsp", 0.8)),
        n_inv=int(sc.get("n_inv", 30)),
        h_total=float(sc.get("h_total", 4.0)),
        fractions=sw.get("fractions", [0.0, 0.2, 0.5, 1.0]),
        lv_options=sw.get("lv_options_h", [0.2e-3, 2e-3, 20e-3]),
        n_trials=int(sw.get("n_trials", 100)),
        base_seed=base_seed,
        jobs=args.jobs,
    )
    cols = ["snsp", "n_inv", "h_total", "trial", "seed", "fraction", "L_v_h",
            "zeta_before", "zeta_after", "error"]
    _emit_table(args, rows, cols, "participation")
    n_failed = sum(1 for r in rows if r.get("error"))
    print(f"participation: {len(rows)} rows, {n_failed} failed", file=sys.stderr)
    return 0


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="vsgstab", description=__doc__)
    ap.add_argument("--version", action="version", version=__version__)
    sub = ap.add_subparsers(dest="command", required=True)

    def common(p, jobs=False):
        p.add_argument("--config", help="YAML config file")
        p.add_argument("--seed", type=int, default=None, help="override the run seed")
        p.add_argument("--out", default=None, help="output directory (stdout if omitted)")
        p.add_argument("--format", choices=["csv", "json"], default="csv")
        if jobs:
            p.add_argument("--jobs", type=int, default=1, help="parallel worker processes")

    p = sub.add_parser("gen-grid", help="synthesize a grid file")
    common(p)
    p.add_argument("--substations", type=int, default=None)
    p.add_argument("--loads", type=int, default=None)
    p.set_defaults(func=cmd_gen_grid)

    p = sub.add_parser("assess", help="damping ratio of one scenario")
    common(p)
    p.set_defaults(func=cmd_assess)

    p = sub.add_parser("modes", help="full eigenvalue report of one scenario")
    common(p)
    p.set_defaults(func=cmd_modes)

    p = sub.add_parser("dsm", help="per-inverter stability metric")
    common(p)
    p.add_argument("--lv", type=float, default=None, help="apply this inductance [H] to every inverter")
    p.set_defaults(func=cmd_dsm)

    p = sub.add_parser("stabilize", help="adaptive stability storage on all inverters")
    common(p)
    p.set_defaults(func=cmd_stabilize)

    p = sub.add_parser("intervene", help="add an infinite-inertia source and reassess")
    common(p)
    p.add_argument("--node", required=True)
    p.set_defaults(func=cmd_intervene)

    p = sub.add_parser("simulate", help="time response to a load step plus local damping estimate")
    common(p)
    p.add_argument("--node", default=None, help="disturbed node")
    p.add_argument("--dp", type=float, default=None, help="load step [pu]")
    p.add_argument("--t-end", type=float, default=None)
    p.add_argument("--dt", type=float, default=None)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("sweep-heatmap", help="mean damping over an (SNSP, N) grid")
    common(p, jobs=True)
    p.set_defaults(func=cmd_sweep_heatmap)

    p = sub.add_parser("sweep-placement", help="damping distribution over random placements")
    common(p, jobs=True)
    p.set_defaults(func=cmd_sweep_placement)

    p = sub.add_parser("sweep-participation", help="storage participation/impedance sweep")
    common(p, jobs=True)
    p.set_defaults(func=cmd_sweep_participation)

    return ap


def main(argv=None) -> int:
    ap = build_parser()
    args = ap.parse_args(argv)
    try:
        return args.func(args)
    except VsgStabError as e:
        print(f"error: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
