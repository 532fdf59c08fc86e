"""Command-line entry point.

`ufl-sim run` drives a full training run and writes, under the output
directory: metrics.csv (one row per round, flushed incrementally),
manifest.json (enough to re-run bit-identically), geometry.csv, and for
quantized scenarios the final codebook snapshot. Sweep presets expand
into one subdirectory per grid point.

Config precedence, lowest to highest: preset, config file, environment
variables (UFLSIM_<FIELD>), command-line overrides.
"""

from __future__ import annotations

import argparse
import os
import sys
from datetime import datetime, timezone
from pathlib import Path

import yaml

from . import __version__
from . import config as cfgmod
from . import data as datamod
from . import quantizer as qz
from .channel import geometry_to_csv
from .errors import UflsimError
from .orchestrator import CSV_COLUMNS, FederatedSimulation
from .rng import TAG_DATA, substream

ENV_PREFIX = "UFLSIM_"


def _env_overrides() -> dict:
    out = {}
    for field in cfgmod.config_to_dict(cfgmod.ScenarioConfig()):
        env_key = ENV_PREFIX + field.upper()
        if env_key in os.environ:
            out[field] = os.environ[env_key]
    return out


def _cli_overrides(args) -> dict:
    out = {}
    for key in ("scenario", "selection", "seed", "threads", "rounds", "data_dir"):
        value = getattr(args, key, None)
        if value is not None:
            out[key] = value
    for item in args.set or []:
        if "=" not in item:
            raise UflsimError(f"--set expects key=value, got {item!r}")
        key, value = item.split("=", 1)
        out[key.strip()] = value.strip()
    return out


def _resolve_config(args) -> list[tuple[str, cfgmod.ScenarioConfig]]:
    """Labelled run configs after preset expansion and overrides."""
    common = {}
    if args.config:
        raw = yaml.safe_load(Path(args.config).read_text()) or {}
        if not isinstance(raw, dict):
            raise UflsimError(f"{args.config}: config must be a key-value mapping")
        common.update(raw)
    common.update(_env_overrides())
    common.update(_cli_overrides(args))

    if args.preset:
        expansions = cfgmod.expand_preset_overrides(args.preset)
    else:
        expansions = [("run", {})]

    out = []
    for label, pre in expansions:
        cfg = cfgmod.parse_config(path=None, overrides={**pre, **common})
        if args.desk_scale:
            cfg = cfgmod.apply_desk_scale(cfg)
        out.append((label, cfg))
    return out


def _run_one(label: str, cfg: cfgmod.ScenarioConfig, out_dir: Path, diagnostics: bool) -> None:
    out_dir.mkdir(parents=True, exist_ok=True)
    started = datetime.now(timezone.utc).isoformat()
    geometry_file = out_dir / "geometry.csv"
    manifest_path = out_dir / "manifest.json"
    manifest_path.write_text(
        cfgmod.emit_manifest(cfg, started, None, geometry_file.name, __version__)
    )

    sim = FederatedSimulation(cfg, collect_diagnostics=diagnostics)
    geometry_file.write_text(geometry_to_csv(sim.geometry))

    metrics_path = out_dir / "metrics.csv"
    with open(metrics_path, "w") as fh:
        fh.write(",".join(CSV_COLUMNS) + "\n")
        fh.flush()

        def on_record(record):
            fh.write(record.to_csv_row() + "\n")
            fh.flush()

        sim.run(on_record=on_record)

    if sim.codebook is not None:
        (out_dir / "codebook.csv").write_text(
            qz.codebook_to_csv(sim.codebook, cfg.rounds)
        )
    if diagnostics and sim.subround_diagnostics:
        with open(out_dir / "decoder_diagnostics.csv", "w") as fh:
            fh.write("round,subround,iterations,tau2,decoded_count,tv_error\n")
            for row in sim.subround_diagnostics:
                fh.write(",".join(repr(v) if isinstance(v, float) else str(v)
                                  for v in row) + "\n")
    finished = datetime.now(timezone.utc).isoformat()
    manifest_path.write_text(
        cfgmod.emit_manifest(cfg, started, finished, geometry_file.name, __version__)
    )
    print(f"{label}: {cfg.rounds} rounds -> {metrics_path}")


def cmd_run(args) -> int:
    runs = _resolve_config(args)
    base = Path(args.output_dir)
    for label, cfg in runs:
        target = base if len(runs) == 1 else base / label
        _run_one(label, cfg, target, args.diagnostics)
    return 0


def cmd_presets(_args) -> int:
    for name in sorted(cfgmod.PRESETS):
        print(name)
    return 0


def cmd_fixture(args) -> int:
    """Write a synthetic IDX image/label pair (test corpus generator)."""
    rng = substream(args.seed, TAG_DATA, 1)
    side = args.side
    ds = datamod.synthetic_dataset(args.n, args.classes, side * side, args.separation, rng)
    # squash into byte range before the IDX round-trip
    lo, hi = ds.images.min(), ds.images.max()
    ds = datamod.Dataset((ds.images - lo) / max(hi - lo, 1e-12), ds.labels)
    out = Path(args.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    datamod.write_idx(ds, out / "images-idx3-ubyte", out / "labels-idx1-ubyte",
                      side, side)
    print(f"wrote {args.n} {side}x{side} samples to {out}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="ufl-sim",
        description="Federated learning over a simulated D-MIMO uplink",
    )
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="execute a training run")
    run.add_argument("--config", help="YAML config file")
    run.add_argument("--preset", help="named preset (see `ufl-sim presets`)")
    run.add_argument("--scenario", choices=cfgmod.SCENARIOS)
    run.add_argument("--selection", choices=("random", "poc", "self"))
    run.add_argument("--seed", type=int)
    run.add_argument("--threads", type=int)
    run.add_argument("--rounds", type=int)
    run.add_argument("--data-dir", dest="data_dir")
    run.add_argument("--output-dir", default="runs/latest")
    run.add_argument("--desk-scale", action="store_true",
                     help="shrink the run to desk scale")
    run.add_argument("--diagnostics", action="store_true",
                     help="write per-subround decoder diagnostics")
    run.add_argument("--set", action="append", metavar="KEY=VALUE",
                     help="override any config field")
    run.set_defaults(func=cmd_run)

    presets = sub.add_parser("presets", help="list available presets")
    presets.set_defaults(func=cmd_presets)

    fixture = sub.add_parser("fixture", help="generate a synthetic IDX fixture")
    fixture.add_argument("--n", type=int, default=100)
    fixture.add_argument("--classes", type=int, default=10)
    fixture.add_argument("--side", type=int, default=8)
    fixture.add_argument("--separation", type=float, default=10.0)
    fixture.add_argument("--seed", type=int, default=0)
    fixture.add_argument("--output-dir", default="fixtures")
    fixture.set_defaults(func=cmd_fixture)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except UflsimError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"i/o error: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
