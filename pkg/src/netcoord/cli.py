"""Command-line interface.

Subcommands:

* ``ru-dominant <game.json>``: maximizers of the dominance integral;
* ``fixed-points <game.json>``: fixed points and jump crossings of P;
* ``wave <game.json> --eta E``: build a delta-contagion wave and print
  the residual table;
* ``simulate <config.json>``: run a replicated experiment;
* ``lattice-analyze <config.json>``: per-cube report and good-set search
  on a lattice experiment;
* ``enumerate <config.json>``: exhaustive equilibrium averages (n <= 20).

Game files hold either a bare step function {"base": v, "steps": [...]}
or a wrapped {"P": ..., "provenance": ...} document.  All numbers print
with 12 significant digits.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from .contagion import WaveConstructionError, build_delta_wave
from .cubes import cube_report, good_set_search, partition, report_to_csv
from .dynamics import enumerate_equilibria
from .game import ThresholdDist, sample_shocks
from .harness import ExperimentConfig, build_game, build_network, run_experiment
from .network import LatticeSpec, weighted_average
from .stepfn import StepFn, fixed_points, ru_dominant, ru_objective


def _fmt(x: float) -> str:
    return f"{x:.12g}"


def _load_game(path: str) -> ThresholdDist:
    doc = json.loads(Path(path).read_text())
    if "P" in doc:
        return ThresholdDist.from_json_dict(doc)
    return ThresholdDist(P=StepFn.from_json_dict(doc))


def _cmd_ru_dominant(args) -> int:
    dist = _load_game(args.game)
    maximizers, strict = ru_dominant(dist.P)
    for x in maximizers:
        print(f"{_fmt(x)} objective={_fmt(ru_objective(dist.P, x))}")
    print(f"strict={'true' if strict else 'false'}")
    return 0


def _cmd_fixed_points(args) -> int:
    dist = _load_game(args.game)
    for f in fixed_points(dist.P):
        print(f"{_fmt(f.x)} {f.kind}")
    return 0


def _cmd_wave(args) -> int:
    dist = _load_game(args.game)
    try:
        wave = build_delta_wave(dist.P, args.eta)
    except (ValueError, WaveConstructionError) as e:
        print(f"wave construction failed: {e}", file=sys.stderr)
        return 1
    print(f"a_star={_fmt(wave.a_star)} delta={_fmt(wave.delta)} L={wave.L}")
    print("l threshold residual")
    v = wave.wave.thresholds
    for l, r in enumerate(wave.wave.residuals, start=1):
        print(f"{l} {_fmt(float(v[l]))} {_fmt(float(r))}")
    if args.out:
        Path(args.out).write_text(json.dumps(wave.to_json_dict()))
    return 0


def _cmd_simulate(args) -> int:
    cfg = ExperimentConfig.from_json_file(args.config)
    if cfg.output is None:
        cfg = ExperimentConfig.from_dict({**cfg.to_dict(), "output": str(Path(args.config).with_suffix("")) + "_out"})
    out = run_experiment(cfg)
    print(f"replications={out['replications']}")
    for name in out["outputs"]:
        print(f"wrote {Path(cfg.output) / name}")
    return 0


def _cmd_lattice_analyze(args) -> int:
    cfg = ExperimentConfig.from_json_file(args.config)
    if "lattice" not in cfg.network:
        print("lattice-analyze needs a lattice network", file=sys.stderr)
        return 2
    if not cfg.cubes:
        print("lattice-analyze needs a cubes section (b, B, gamma, R)", file=sys.stderr)
        return 2
    M = int(cfg.network["lattice"]["M"])
    m = int(cfg.network["lattice"]["m"])
    spec = LatticeSpec(M=M, m=m)
    part = partition(spec, int(cfg.cubes["b"]), int(cfg.cubes["B"]))
    gamma = float(cfg.cubes.get("gamma", cfg.eta))
    R = float(cfg.cubes.get("R", 2.0))
    dist = build_game(cfg.game)
    g = build_network(cfg.network)
    out_dir = Path(cfg.output or "lattice_analysis")
    out_dir.mkdir(parents=True, exist_ok=True)
    from .dynamics import extremal_equilibria

    for rep in range(cfg.replications):
        shocks = sample_shocks(dist, g.n, cfg.seed, stream=rep)
        largest, _ = extremal_equilibria(g, shocks)
        rep_report = cube_report(part, shocks, dist.P, largest, gamma)
        (out_dir / f"cubes_{rep:04d}.csv").write_text(report_to_csv(rep_report))
        found = good_set_search(part, shocks, dist.P, gamma, R)
        if found is None:
            text = json.dumps({"found": False})
        else:
            text = found.to_json()
        (out_dir / f"goodset_{rep:04d}.json").write_text(text)
        print(f"replication {rep}: good_set={'yes' if found else 'no'}")
    print(f"wrote reports to {out_dir}")
    return 0


def _cmd_enumerate(args) -> int:
    cfg = ExperimentConfig.from_json_file(args.config)
    dist = build_game(cfg.game)
    g = build_network(cfg.network)
    if g.n > 20:
        print("enumerate needs n <= 20", file=sys.stderr)
        return 2
    for rep in range(cfg.replications):
        shocks = sample_shocks(dist, g.n, cfg.seed, stream=rep)
        for tie in ("upper", "lower"):
            eqs = enumerate_equilibria(g, shocks, tie)
            avs = sorted(weighted_average(g, e) for e in eqs)
            print(f"replication {rep} {tie}: " + " ".join(_fmt(a) for a in avs))
    return 0


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="netcoord", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("ru-dominant", help="maximizers of the dominance integral")
    p.add_argument("game")
    p.set_defaults(func=_cmd_ru_dominant)

    p = sub.add_parser("fixed-points", help="fixed points of P")
    p.add_argument("game")
    p.set_defaults(func=_cmd_fixed_points)

    p = sub.add_parser("wave", help="build a delta-contagion wave")
    p.add_argument("game")
    p.add_argument("--eta", type=float, required=True)
    p.add_argument("--out", default=None, help="optional JSON output path")
    p.set_defaults(func=_cmd_wave)

    p = sub.add_parser("simulate", help="run a replicated experiment")
    p.add_argument("config")
    p.set_defaults(func=_cmd_simulate)

    p = sub.add_parser("lattice-analyze", help="cube report and good-set search")
    p.add_argument("config")
    p.set_defaults(func=_cmd_lattice_analyze)

    p = sub.add_parser("enumerate", help="exhaustive equilibria for n <= 20")
    p.add_argument("config")
    p.set_defaults(func=_cmd_enumerate)

    args = parser.parse_args(argv)
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING,
        format="%(asctime)s [%(levelname)s] %(message)s",
    )
    return args.func(args)


if __name__ == "__main__":
    raise SystemExit(main())
