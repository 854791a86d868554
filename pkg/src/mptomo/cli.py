"""Command-line front end.

    mptomo precompute --scenario S.json --cache C.json
    mptomo run --scenario S.json --cache C.json --out DIR [--eta X] [--seed K]
    mptomo render --mask M.csv --scenario S.json --out IMG.ppm

``--scenario`` also accepts the name of a bundled scenario (see ``mptomo list``).
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from . import counters
from .forward import SolverError
from .recon import (
    CacheError,
    ProbeSet,
    ReconstructionMask,
    TomographySystem,
    measure,
    metrics,
    precompute,
    reconstruct,
    worker_count,
    write_atomic,
)
from .render import render
from .scenario import ScenarioError, bundled_scenarios, load_scenario

log = logging.getLogger("mptomo")


def cmd_precompute(args) -> int:
    scenario = load_scenario(args.scenario)
    probes = precompute(scenario, workers=worker_count())
    probes.save(args.cache)
    bare = probes.cells_without_probes()
    print(f"{len(probes)} probes for {probes.n_cells} test cells; {probes.rejected} (cell, region) pairs rejected (lambda_min >= 0)")
    if not len(probes):
        print("warning: no probe potentials found; every test cell will be accepted", file=sys.stderr)
    elif bare:
        print(f"warning: {len(bare)} test cells have no probe and will always be accepted: {bare}", file=sys.stderr)
    print(f"cache written to {args.cache}")
    return 0


def cmd_run(args) -> int:
    scenario = load_scenario(args.scenario)
    if args.eta is not None:
        scenario = scenario.with_updates(eta=args.eta)
    if args.seed is not None:
        scenario = scenario.with_updates(seed=args.seed)
    scenario.validate()
    probes = ProbeSet.load(args.cache, expected_hash=scenario.system_hash())
    system = TomographySystem(scenario)

    with counters.tally() as ops:
        meas = measure(system, scenario.anomaly, probes, scenario.eta, scenario.seed, workers=worker_count())
        mask = reconstruct(probes, meas)
    quality = metrics(system, mask, scenario.anomaly)
    quality["operations"] = {k: int(v) for k, v in sorted(ops.items())}
    quality["probes"] = len(probes)

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    write_atomic(out / "measurements.json", json.dumps(meas.to_json(), indent=1))
    mask.to_csv(out / "mask.csv", system.grid)
    write_atomic(out / "metrics.json", json.dumps(quality, indent=1, sort_keys=True))
    print(
        f"{scenario.name}: jaccard={quality['jaccard']:.3f} coverage={quality['coverage']:.3f} "
        f"spurious={quality['spurious_fraction']:.3f} accepted={quality['accepted_cells']}/{quality['total_cells']} "
        f"(eta={scenario.eta:g}, delta={meas.delta:.4g})"
    )
    return 0


def cmd_render(args) -> int:
    scenario = load_scenario(args.scenario)
    try:
        rows = ReconstructionMask.read_csv(args.mask)
    except OSError as exc:
        raise OSError(f"cannot read mask {args.mask!r}: {exc.strerror or exc}") from None
    cells = [(r["cx"], r["cy"], r["accepted"]) for r in rows]
    try:
        render(args.out, scenario.radius, cells, scenario.cell, scenario.anomaly)
    except OSError as exc:
        raise OSError(f"cannot write image {args.out!r}: {exc.strerror or exc}") from None
    print(f"image written to {args.out}")
    return 0


def cmd_list(args) -> int:
    for name in bundled_scenarios():
        print(name)
    return 0


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="mptomo", description="Monotonicity-based tomography of nonlinear magnetic anomalies")
    ap.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("precompute", help="offline phase: select probe potentials and store them")
    p.add_argument("--scenario", required=True)
    p.add_argument("--cache", required=True)
    p.set_defaults(func=cmd_precompute)

    p = sub.add_parser("run", help="online phase: simulate measurements and reconstruct")
    p.add_argument("--scenario", required=True)
    p.add_argument("--cache", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--eta", type=float)
    p.add_argument("--seed", type=int)
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("render", help="draw a reconstruction mask as a PPM image")
    p.add_argument("--mask", required=True)
    p.add_argument("--scenario", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_render)

    p = sub.add_parser("list", help="list bundled scenarios")
    p.set_defaults(func=cmd_list)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (ScenarioError, CacheError, SolverError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
