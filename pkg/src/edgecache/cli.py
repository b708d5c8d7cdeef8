"""Command line: run presets or config files, validate configs.

    edgecache run fig7 --override F=10 --override T=60 --out results/fig7
    edgecache run my_experiment.yaml --seed 3 --replications 20
    edgecache validate my_experiment.yaml

Outputs are CSV files (header row, floats with 9 significant digits) plus a
``manifest.json`` sidecar recording every effective parameter.
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
from pathlib import Path

import numpy as np
import yaml

from .config import ConfigError, parse_config_text
from .presets import PRESETS, preset_params
from .sim import simulate_ensemble

TABLE_COLUMNS = ("replication", "file", "r", "s", "w", "a", "factor")


def _fmt(value):
    if isinstance(value, (bool, np.bool_)):
        return str(int(value))
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    if isinstance(value, (float, np.floating)):
        return f"{float(value):.9g}"
    return str(value)


def write_csv(path: Path, columns, rows) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(columns)
        for row in rows:
            writer.writerow([_fmt(v) for v in row])


def write_manifest(path: Path, payload: dict) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(payload, indent=2, sort_keys=True, default=_jsonable) + "\n")


def _jsonable(obj):
    if isinstance(obj, np.generic):
        return obj.item()
    if isinstance(obj, (set, frozenset, tuple)):
        return sorted(obj) if isinstance(obj, (set, frozenset)) else list(obj)
    return repr(obj)


def save_tables(path: Path, factors: np.ndarray) -> None:
    """Snapshot learned Q tables shaped (N, F, 2, 2, 2, 2) as CSV."""
    rows = [
        (i, f, r, s, w, a, factors[i, f, r, s, w, a])
        for i, f, r, s, w, a in np.ndindex(*factors.shape)
    ]
    write_csv(path, TABLE_COLUMNS, rows)


def load_tables(path: Path) -> np.ndarray:
    """Inverse of :func:`save_tables`."""
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if tuple(reader.fieldnames or ()) != TABLE_COLUMNS:
            raise ValueError(f"{path}: expected columns {TABLE_COLUMNS}")
        rows = [{k: row[k] for k in TABLE_COLUMNS} for row in reader]
    n = max(int(r["replication"]) for r in rows) + 1
    n_files = max(int(r["file"]) for r in rows) + 1
    out = np.zeros((n, n_files, 2, 2, 2, 2))
    for row in rows:
        idx = tuple(int(row[k]) for k in TABLE_COLUMNS[:-1])
        out[idx] = float(row["factor"])
    return out


def parse_overrides(items) -> dict:
    out = {}
    for item in items or ():
        if "=" not in item:
            raise ValueError(f"override {item!r} is not of the form key=value")
        key, text = item.split("=", 1)
        out[key.strip()] = yaml.safe_load(text)
    return out


def _set_dotted(data: dict, key: str, value) -> None:
    parts = key.split(".")
    node = data
    for part in parts[:-1]:
        node = node.setdefault(part, {})
        if not isinstance(node, dict):
            raise ValueError(f"override {key!r}: {part!r} is not a section")
    node[parts[-1]] = value


def run_preset_cli(name, overrides, seed, out, replications, horizon) -> list[Path]:
    preset = PRESETS[name]
    overrides = dict(overrides)
    for flag, value in (("replications", replications), ("horizon", horizon)):
        if value is None:
            continue
        if flag not in preset.aliases:
            raise KeyError(f"preset {name} is computed exactly; --{flag} does not apply")
        overrides[preset.aliases[flag]] = value
    if seed is not None and "seed" in preset.defaults:
        overrides["seed"] = seed
    params = preset_params(name, overrides)
    curves = preset.run(params)
    out = Path(out or Path("results") / name)
    written = []
    for curve in curves:
        path = out / f"{curve.name}.csv"
        write_csv(path, curve.columns, curve.rows)
        written.append(path)
    write_manifest(out / "manifest.json", {
        "preset": name,
        "parameters": params,
        "curves": {c.name: {"file": f"{c.name}.csv", "columns": list(c.columns)} for c in curves},
    })
    return written


def run_config_cli(path, overrides, seed, out, replications, horizon, save_tables_flag=False,
                   warm_start=None) -> list[Path]:
    path = Path(path)
    raw = yaml.safe_load(path.read_text()) or {}
    text = path.read_text()
    if overrides or seed is not None or replications is not None or horizon is not None:
        for key, value in overrides.items():
            _set_dotted(raw, key, value)
        for key, value in (("seed", seed), ("replications", replications), ("horizon", horizon)):
            if value is not None:
                raw[key] = value
        text = yaml.safe_dump(raw, sort_keys=False)
    cfg = parse_config_text(text, str(path))
    policy = cfg.policy
    if warm_start is not None:
        tables = load_tables(Path(warm_start))
        if tables.shape[1] != len(cfg.scenario.files):
            raise ValueError(f"warm-start tables cover {tables.shape[1]} files, scenario has {len(cfg.scenario.files)}")
        policy = type(policy)(policy.kind, {**policy.params, "initial_factors": tables[0]})
    res = simulate_ensemble(cfg.scenario, policy, cfg.replications, cfg.horizon, cfg.seed)
    _, block_of = cfg.scenario.blocks(cfg.horizon)
    out = Path(out or cfg.output)
    stem = path.stem
    cols = ("slot", "block", "avg_cost", "avg_cached_size", "avg_fetched_size", "avg_mu", "avg_nu")
    series = [res.mean_cost, res.cached_size.mean(0), res.fetched_size.mean(0), res.mu.mean(0), res.nu.mean(0)]
    rows = [(t + 1, int(block_of[t]), *(x[t] for x in series)) for t in range(cfg.horizon)]
    written = [out / f"{stem}.csv"]
    write_csv(written[0], cols, rows)
    if save_tables_flag:
        if res.factors is None:
            raise ValueError("--save-tables needs a Q-learning policy")
        written.append(out / f"{stem}_tables.csv")
        save_tables(written[-1], res.factors)
    write_manifest(out / f"{stem}.manifest.json", {"config": cfg.data, "source": str(path)})
    return written


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="edgecache", description="Edge-cache fetch/cache decision experiments.")
    sub = parser.add_subparsers(dest="command", required=True)
    run = sub.add_parser("run", help="run a preset (fig2..fig7) or a YAML config file")
    run.add_argument("target", help=f"preset name ({', '.join(PRESETS)}) or path to a config file")
    run.add_argument("--seed", type=int, default=None)
    run.add_argument("--out", default=None, help="output directory")
    run.add_argument("--override", action="append", default=[], metavar="KEY=VALUE",
                     help="set a preset parameter or dotted config key (repeatable)")
    run.add_argument("--replications", type=int, default=None)
    run.add_argument("--horizon", type=int, default=None)
    run.add_argument("--save-tables", action="store_true", help="also write learned Q tables (config runs)")
    run.add_argument("--warm-start", default=None, help="Q-table snapshot to initialize learners (config runs)")
    val = sub.add_parser("validate", help="check a config file and print its canonical form")
    val.add_argument("path")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.command == "validate":
            cfg = parse_config_text(Path(args.path).read_text(), args.path)
            sys.stdout.write(cfg.canonical())
            return 0
        overrides = parse_overrides(args.override)
        if args.target in PRESETS:
            written = run_preset_cli(args.target, overrides, args.seed, args.out, args.replications, args.horizon)
        elif Path(args.target).is_file():
            written = run_config_cli(args.target, overrides, args.seed, args.out, args.replications,
                                     args.horizon, args.save_tables, args.warm_start)
        else:
            raise KeyError(f"{args.target!r} is neither a preset ({', '.join(PRESETS)}) nor a config file")
    except ConfigError as exc:
        for line in exc.diagnostics:
            print(f"error: {line}", file=sys.stderr)
        return 2
    except (KeyError, ValueError, OSError) as exc:
        msg = exc.args[0] if isinstance(exc, KeyError) and exc.args else exc
        print(f"error: {msg}", file=sys.stderr)
        return 2
    for path in written:
        print(path)
    return 0


if __name__ == "__main__":  # pragma: no cover
    raise SystemExit(main())
