"""Command-line front end.

    quadcool scan --config run.ini --set scan.trials=5 --out results/
    quadcool check

Exit status: 0 on success, 2 on configuration errors, 3 on numerical failure.
"""

from __future__ import annotations

import argparse
import csv
import datetime as _dt
import io
import json
import math
import os
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import __version__
from .atomic_model import TWO_PI
from .config import ConfigError, parse_config, serialize_config
from .experiments import (
    bfield_scan,
    cooling_profile,
    detuning_scan,
    doppler_regime_check,
    jump_fraction_scan,
)
from .mechanics import BeamGeometry, force_profile, momentum_kick_ratio
from .trap_md import integrate, thermal_ions

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC = 0, 2, 3
COMMANDS = ("scan", "jumps", "bfield", "force-profile", "md", "check")

GNUPLOT = """set datafile separator ','
set key autotitle columnhead
set xlabel '{xlabel}'
set ylabel '{ylabel}'
plot '{csv}' using {cols} with {style}
"""


def _now() -> str:
    return _dt.datetime.now(_dt.timezone.utc).isoformat()


def _profile_detuning(cfg) -> float:
    if cfg.profile_detuning is not None:
        return cfg.profile_detuning
    return -0.5 * cfg.gamma_eff()


class _Writer:
    """Collects outputs; everything is written at the end by one writer."""

    def __init__(self, out: Path, gnuplot: bool):
        self.out = out
        self.gnuplot = gnuplot
        self.files: dict[str, str] = {}

    def add(self, name: str, text: str, plot: dict | None = None):
        self.files[name] = text
        if self.gnuplot and plot is not None:
            self.files[name.rsplit(".", 1)[0] + ".gp"] = GNUPLOT.format(csv=name, **plot)

    def flush(self, manifest: dict):
        self.out.mkdir(parents=True, exist_ok=True)
        manifest["outputs"] = sorted(self.files) + ["manifest.json"]
        for name, text in self.files.items():
            with open(self.out / name, "w", newline="\n", encoding="utf-8") as fh:
                fh.write(text)
        with open(self.out / "manifest.json", "w", newline="\n", encoding="utf-8") as fh:
            fh.write(json.dumps(manifest, indent=2, sort_keys=True, default=str) + "\n")


def _scan_plot():
    return {"xlabel": "729 nm detuning (MHz)", "ylabel": "counts/s", "cols": "1:2:3", "style": "yerrorbars"}


def _cmd_scan(cfg, args, w: _Writer) -> dict:
    res = detuning_scan(cfg, threads=args.threads)
    w.add("scan.csv", res.to_csv(), _scan_plot())
    return res.manifest()


def _cmd_jumps(cfg, args, w: _Writer) -> dict:
    if cfg.dark_index is None:
        cfg = replace(cfg, dark_index=1 if cfg.n_ions > 1 else 0)
    res = jump_fraction_scan(cfg, threads=args.threads)
    w.add("jumps.csv", res.to_csv(),
          {"xlabel": "729 nm detuning (MHz)", "ylabel": "R", "cols": "1:4", "style": "linespoints"})
    return res.manifest()


def _cmd_bfield(cfg, args, w: _Writer) -> dict:
    results = bfield_scan(cfg, threads=args.threads)
    buf = io.StringIO()
    wr = csv.writer(buf, lineterminator="\n")
    wr.writerow(["bfield_G", "fwhm_MHz", "peak_counts_per_s", "line1_MHz", "line2_MHz", "line3_MHz", "line4_MHz"])
    for i, r in enumerate(results):
        m = r.metadata
        lines = [c / TWO_PI / 1e6 for c in m["line_centers"]]
        wr.writerow([repr(m["bfield"] * 1e4), repr(m["fwhm"] / TWO_PI / 1e6), repr(m["peak_rate"])]
                    + [repr(x) for x in lines])
        w.add(f"bfield_{i}.csv", r.to_csv(), _scan_plot())
    w.add("bfield_summary.csv", buf.getvalue(),
          {"xlabel": "B (G)", "ylabel": "FWHM (MHz)", "cols": "1:2", "style": "linespoints"})
    return {"config": cfg.to_dict(), "fields_T": list(cfg.bfield_list)}


def _cmd_force_profile(cfg, args, w: _Writer) -> dict:
    det = _profile_detuning(cfg)
    geom = BeamGeometry.from_tag(cfg.geometry)
    prof = force_profile(cfg.scheme(), cfg.beams(), geom, det, bfield=cfg.bfield_vector())
    w.add("force_profile.csv", prof.to_csv(),
          {"xlabel": "v (m/s)", "ylabel": "F (N)", "cols": "1:2", "style": "lines"})
    return {"config": cfg.to_dict(), "detuning": det, "gamma_eff": prof.gamma_eff}


def _cmd_md(cfg, args, w: _Writer) -> dict:
    det = _profile_detuning(cfg)
    prof = cooling_profile(cfg, det)
    ss = np.random.SeedSequence(cfg.seed)
    s_init, s_run = ss.spawn(2)
    dark = () if cfg.dark_index is None else (cfg.dark_index,)
    ions = thermal_ions(cfg.n_ions, cfg.trap, cfg.precool_temperature, np.random.default_rng(s_init),
                        dark=dark, dark_mass=cfg.dark_mass)
    traj = integrate(ions, cfg.trap, prof, cfg.noise, t_end=cfg.window, seed=s_run,
                     sample_interval=TWO_PI / cfg.omega_z)
    w.add("states.csv", traj.states_csv())
    w.add("events.csv", traj.events_csv())
    return {"config": cfg.to_dict(), "detuning": det, "trajectory": json.loads(traj.manifest())}


def _cmd_check(cfg, args, w: _Writer) -> dict:
    rep = doppler_regime_check(cfg)
    ratio = momentum_kick_ratio()
    print(rep.message)
    print(f"momentum-kick ratio (co/counter) = {ratio:.4f}")
    if rep.status != "pass":
        print(f"warning: Doppler regime check {rep.status}", file=sys.stderr)
    return {"gamma_eff": rep.gamma_eff, "status": rep.status, "kick_ratio": ratio}


HANDLERS = {
    "scan": _cmd_scan, "jumps": _cmd_jumps, "bfield": _cmd_bfield,
    "force-profile": _cmd_force_profile, "md": _cmd_md, "check": _cmd_check,
}


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="quadcool", description="Quadrupole-transition Doppler cooling simulator")
    ap.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = ap.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", type=Path, help="INI file with unit-suffixed values")
        p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                       help="override a config entry (repeatable)")
        p.add_argument("--seed", type=int)
        p.add_argument("--out", type=Path, default=Path("."))
        p.add_argument("--threads", type=int, default=None)
        p.add_argument("--gnuplot", action="store_true", help="also write a gnuplot script per CSV")
        p.add_argument("--geometry", choices=("co", "counter", "angled"))
    return ap


def _resolve(args):
    text = ""
    if args.config is not None:
        if not args.config.is_file():
            raise ConfigError(f"config file not found: {args.config}")
        text = args.config.read_text(encoding="utf-8")
    overrides = list(args.set)
    if args.seed is not None:
        overrides.append(f"scan.seed={args.seed}")
    if args.geometry is not None:
        overrides.append(f"lasers.geometry={args.geometry}")
    return parse_config(text, overrides)


def run(argv=None) -> int:
    args = build_parser().parse_args(argv)
    started = _now()
    try:
        if args.threads is None:
            args.threads = int(os.environ.get("QUADCOOL_THREADS", "1"))
        if args.threads < 1:
            raise ConfigError("threads must be >= 1")
        cfg = _resolve(args)
    except (ConfigError, ValueError) as exc:
        print(f"quadcool: configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    writer = _Writer(args.out, args.gnuplot)
    try:
        info = HANDLERS[args.command](cfg, args, writer)
    except ConfigError as exc:
        print(f"quadcool: configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (FloatingPointError, ArithmeticError, np.linalg.LinAlgError, RuntimeError) as exc:
        print(f"quadcool: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except ValueError as exc:
        print(f"quadcool: invalid configuration: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    if args.command != "check":
        manifest = {
            "tool": "quadcool", "version": __version__, "command": args.command,
            "config": serialize_config(cfg), "seed": cfg.seed,
            "started": started, "finished": _now(), "result": info,
        }
        writer.flush(manifest)
    return EXIT_OK


def main(argv=None):
    sys.exit(run(argv))


if __name__ == "__main__":
    main()
