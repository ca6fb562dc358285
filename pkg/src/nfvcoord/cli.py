"""Command line: ``nfvcoord run | oracle | report``."""
from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from .coord import Weights
from .harness import (
    AllSeedsRejected,
    ExperimentConfig,
    OracleTooLarge,
    brute_force_oracle,
    config_dict,
    convergence_report,
    read_records,
    run,
)
from .netmodel import DemandSet, TopologyError, generate_demands, load_topology
from .scenario import Rejected, ScaleParams, assemble, build, case_params

EXIT_REJECTED = 2


def parse_seeds(text: str) -> list[int]:
    """'0,3,5' or '0-9' or a mix such as '0-4,10'."""
    seeds = []
    for part in text.split(","):
        part = part.strip()
        if not part:
            continue
        if "-" in part:
            lo, hi = part.split("-", 1)
            seeds.extend(range(int(lo), int(hi) + 1))
        else:
            seeds.append(int(part))
    if not seeds:
        raise argparse.ArgumentTypeError(f"no seeds in {text!r}")
    return seeds


def _theta(text: str) -> tuple[float, float, float]:
    try:
        return Weights.parse(text).as_tuple()
    except ValueError as exc:
        raise argparse.ArgumentTypeError(str(exc)) from None


def _log(msg: str) -> None:
    print(msg, file=sys.stderr)


def _add_run(sub) -> None:
    p = sub.add_parser("run", help="run coordination over seeds and write CSVs")
    p.add_argument("--config", help="JSON file with the same keys; flags override it")
    p.add_argument("--case", type=int)
    p.add_argument("--vn", type=int, dest="n_vn")
    p.add_argument("--seeds", type=parse_seeds)
    p.add_argument("--mode", choices=["rl", "random"])
    p.add_argument("--steps", type=int)
    p.add_argument("--episode", type=int)
    p.add_argument("--theta", type=_theta)
    p.add_argument("--eps", type=float)
    p.add_argument("--alpha", type=float)
    p.add_argument("--gamma", type=float)
    p.add_argument("--out")
    p.add_argument("--scenario-seed", type=int, dest="scenario_seed")
    p.add_argument(
        "--fixed-initial",
        action=argparse.BooleanOptionalAction,
        default=None,
        help="share one scenario across seeds (default) or draw one per seed",
    )


def _cmd_run(args) -> int:
    values = {}
    if args.config:
        values.update(json.loads(Path(args.config).read_text()))
        if "vn" in values:
            values["n_vn"] = values.pop("vn")
        if isinstance(values.get("seeds"), str):
            values["seeds"] = parse_seeds(values["seeds"])
        if isinstance(values.get("theta"), str):
            values["theta"] = _theta(values["theta"])
    for key in ExperimentConfig.__dataclass_fields__:
        v = getattr(args, key, None)
        if v is not None:
            values[key] = v
    config = ExperimentConfig(**values)
    try:
        records = run(config, log=_log)
    except AllSeedsRejected as exc:
        _log(str(exc))
        return EXIT_REJECTED
    best = np.array([r.best_cev for r in records])
    init = np.array([r.initial_cev for r in records])
    print(
        f"case {config.case} N_VN={config.n_vn} mode={config.mode} runs={len(records)} "
        f"median initial CEV={np.median(init):.4f} median best CEV={np.median(best):.4f}"
    )
    if config.out:
        (Path(config.out) / f"config_{config.mode}.json").write_text(json.dumps(config_dict(config), indent=2))
        print(f"wrote {config.out}")
    return 0


def _add_oracle(sub) -> None:
    p = sub.add_parser("oracle", help="exhaustive optimum for a tiny instance")
    p.add_argument("--case", type=int, required=True)
    p.add_argument("--vn", type=int, dest="n_vn", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--theta", type=_theta, default=(1.0, 1.0, 1.0))
    p.add_argument("--topology", help="topology file replacing the built-in Internet2 network")


def _cmd_oracle(args) -> int:
    try:
        if args.topology:
            net = load_topology(Path(args.topology).read_text())
            case = case_params(args.case)
            scale = ScaleParams(args.n_vn, (1, 1), 1.0)
            vns, ids = generate_demands(scale, case, args.seed, net.n_nodes)
            scenario = assemble(case, net, DemandSet(tuple(vns), tuple(ids)), args.seed)
        else:
            scenario = build(args.case, args.n_vn, args.seed)
        alloc, value = brute_force_oracle(scenario, Weights(*args.theta))
    except (Rejected, OracleTooLarge, TopologyError) as exc:
        _log(str(exc))
        return EXIT_REJECTED
    print(f"oracle CEV {value:.6f}")
    print("vm  " + " ".join(map(str, alloc.vm)))
    if alloc.ids:
        print("ids " + " ".join(map(str, alloc.ids)))
    return 0


def _add_report(sub) -> None:
    p = sub.add_parser("report", help="summarize an output directory")
    p.add_argument("--in", dest="directory", required=True)
    p.add_argument("--suboptimal", type=float, help="reference CEV for convergence ratios")
    p.add_argument("--milestones", default="1000,5000")


def _cmd_report(args) -> int:
    records = read_records(args.directory)
    for mode in sorted({r.mode for r in records}):
        rs = [r for r in records if r.mode == mode]
        gain = np.array([r.best_cev - r.initial_cev for r in rs])
        print(
            f"{mode:6s} runs={len(rs)} median best CEV={np.median([r.best_cev for r in rs]):.4f} "
            f"median gain={np.median(gain):.4f} "
            f"U_link {np.median([r.initial_u_link for r in rs]):.3f}->{np.median([r.u_link for r in rs]):.3f} "
            f"U_server {np.median([r.initial_u_server for r in rs]):.3f}->{np.median([r.u_server for r in rs]):.3f}"
        )
        if args.suboptimal is not None and all(r.trajectory for r in rs):
            marks = [int(m) for m in args.milestones.split(",")]
            for row in convergence_report(rs, args.suboptimal, marks):
                ratio = "n/a" if row.ratio is None else f"{row.ratio:.2f}"
                print(f"  steps {row.steps:>8d}  best CEV {row.best_cev:.4f}  ratio {ratio}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="nfvcoord", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)
    _add_run(sub)
    _add_oracle(sub)
    _add_report(sub)
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    return {"run": _cmd_run, "oracle": _cmd_oracle, "report": _cmd_report}[args.command](args)


if __name__ == "__main__":
    sys.exit(main())
