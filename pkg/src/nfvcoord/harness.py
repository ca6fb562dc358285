"""Experiment runner, CSV output, brute-force oracle and convergence report."""
from __future__ import annotations

import csv
import itertools
import math
import os
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from . import __version__
from .coord import AgentParams, CoordinationConfig, Evaluator, Weights, cev, coordinate
from .engines import Allocation
from .scenario import Rejected, Scenario, build

CSV_VERSION = 1
SUMMARY_FIELDS = [
    "seed",
    "mode",
    "scenario_seed",
    "initial_cev",
    "best_cev",
    "initial_u_link",
    "initial_u_server",
    "initial_r_total",
    "u_link",
    "u_server",
    "r_total",
    "steps",
    "seconds",
]
ORACLE_LIMIT = 10**6
MAX_REDRAWS = 100


class AllSeedsRejected(RuntimeError):
    pass


class OracleTooLarge(ValueError):
    def __init__(self, n_alloc: int, limit: int = ORACLE_LIMIT):
        self.n_alloc = n_alloc
        super().__init__(f"{n_alloc} allocations to enumerate exceeds the limit of {limit}")


@dataclass
class ExperimentConfig:
    case: int = 1
    n_vn: int = 20
    seeds: list[int] = field(default_factory=lambda: list(range(10)))
    steps: int = 5000
    episode: int = 20
    theta: tuple[float, float, float] = (1.0, 1.0, 1.0)
    mode: str = "rl"
    eps: float = 0.1
    alpha: float = 0.2
    gamma: float = 0.9
    out: str | None = None
    fixed_initial: bool = True
    scenario_seed: int | None = None

    def __post_init__(self) -> None:
        if self.mode not in ("rl", "random"):
            raise ValueError(f"mode must be 'rl' or 'random', got {self.mode!r}")
        if not self.seeds:
            raise ValueError("at least one seed is required")
        self.theta = tuple(float(v) for v in self.theta)
        self.seeds = [int(s) for s in self.seeds]

    def coordination(self) -> CoordinationConfig:
        cfg = CoordinationConfig(
            total_steps=self.steps,
            episode_steps=self.episode,
            weights=Weights(*self.theta),
            params=AgentParams(self.alpha, self.gamma, self.eps),
        )
        # random mode: epsilon = 1, no learning
        return cfg.as_random_baseline() if self.mode == "random" else cfg


@dataclass
class RunRecord:
    seed: int
    mode: str
    scenario_seed: int
    initial_cev: float
    best_cev: float
    initial_u_link: float
    initial_u_server: float
    initial_r_total: float | None
    u_link: float
    u_server: float
    r_total: float | None
    steps: int
    seconds: float
    trajectory: list[float] = field(default_factory=list, repr=False)
    best: Allocation | None = field(default=None, repr=False)

    def summary_row(self) -> dict:
        row = {k: getattr(self, k) for k in SUMMARY_FIELDS}
        return {
            k: "" if v is None else repr(float(v)) if isinstance(v, (float, np.floating)) else v
            for k, v in row.items()
        }


def fixed_scenario(case: int, n_vn: int, seed: int) -> Scenario:
    """First accepted scenario at ``seed``, ``seed + 1``, ..."""
    for s in range(seed, seed + MAX_REDRAWS):
        try:
            return build(case, n_vn, s)
        except Rejected:
            continue
    raise AllSeedsRejected(f"no feasible scenario for case {case}, N_VN={n_vn} in seeds {seed}..{seed + MAX_REDRAWS - 1}")


def run_one(scenario: Scenario, config: ExperimentConfig, seed: int) -> RunRecord:
    cfg = config.coordination()
    res = coordinate(scenario, cfg, seed)
    init = scenario.initial_eval
    opt = lambda v: None if v is None else float(v)  # noqa: E731
    return RunRecord(
        seed=seed,
        mode=config.mode,
        scenario_seed=scenario.seed,
        initial_cev=float(res.initial_cev),
        best_cev=float(res.best_cev),
        initial_u_link=float(init.u_link),
        initial_u_server=float(init.u_server),
        initial_r_total=opt(init.r_total),
        u_link=float(res.best_eval.u_link),
        u_server=float(res.best_eval.u_server),
        r_total=opt(res.best_eval.r_total),
        steps=res.steps,
        seconds=res.seconds,
        trajectory=[float(v) for v in res.trajectory],
        best=res.best,
    )


def run(config: ExperimentConfig, log=None) -> list[RunRecord]:
    """One record per accepted seed; CSVs go to ``config.out`` when set.

    With ``fixed_initial`` all seeds share one scenario (drawn from
    ``scenario_seed``, default the first seed) and differ only in the agent's
    random stream. Otherwise every seed draws its own scenario and rejected
    ones are skipped.
    """
    records = []
    shared = None
    if config.fixed_initial:
        base = config.seeds[0] if config.scenario_seed is None else config.scenario_seed
        shared = fixed_scenario(config.case, config.n_vn, base)
    for seed in config.seeds:
        scenario = shared
        if scenario is None:
            try:
                scenario = build(config.case, config.n_vn, seed)
            except Rejected as exc:
                if log:
                    log(f"seed {seed} rejected: {exc.reason}")
                continue
        rec = run_one(scenario, config, seed)
        records.append(rec)
        if log:
            log(f"seed {seed} {config.mode}: initial {rec.initial_cev:.4f} best {rec.best_cev:.4f} ({rec.seconds:.1f} s)")
    if not records:
        raise AllSeedsRejected(f"all seeds rejected for case {config.case}, N_VN={config.n_vn}")
    if config.out:
        write_records(records, config.out)
    return records


# ---------------------------------------------------------------------------
# CSV
# ---------------------------------------------------------------------------


def _header() -> str:
    return f"# nfvcoord {__version__} csv-v{CSV_VERSION}\n"


def write_records(records: Sequence[RunRecord], out: str | os.PathLike) -> Path:
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    for rec in records:
        with open(out / f"trajectory_{rec.mode}_{rec.seed}.csv", "w", newline="") as fh:
            fh.write(_header())
            w = csv.writer(fh)
            w.writerow(["step", "best_cev"])
            for i, v in enumerate(rec.trajectory, start=1):
                w.writerow([i, repr(float(v))])
    summary = out / "summary.csv"
    existing = read_summary(summary) if summary.exists() else []
    keep = {(r.mode, r.seed) for r in records}
    merged = [r for r in existing if (r.mode, r.seed) not in keep] + list(records)
    with open(summary, "w", newline="") as fh:
        fh.write(_header())
        w = csv.DictWriter(fh, fieldnames=SUMMARY_FIELDS)
        w.writeheader()
        for rec in merged:
            w.writerow(rec.summary_row())
    return summary


def _rows(path: Path) -> Iterable[dict]:
    with open(path, newline="") as fh:
        first = fh.readline()
        if not first.startswith("# nfvcoord"):
            raise ValueError(f"{path}: missing version header")
        version = first.rsplit("csv-v", 1)[-1].strip()
        if version != str(CSV_VERSION):
            raise ValueError(f"{path}: unsupported csv version {version}")
        yield from csv.DictReader(fh)


def _opt(v: str) -> float | None:
    return None if v == "" else float(v)


def read_trajectory(path: str | os.PathLike) -> list[float]:
    return [float(r["best_cev"]) for r in _rows(Path(path))]


def read_summary(path: str | os.PathLike) -> list[RunRecord]:
    out = []
    for r in _rows(Path(path)):
        out.append(
            RunRecord(
                seed=int(r["seed"]),
                mode=r["mode"],
                scenario_seed=int(r["scenario_seed"]),
                initial_cev=float(r["initial_cev"]),
                best_cev=float(r["best_cev"]),
                initial_u_link=float(r["initial_u_link"]),
                initial_u_server=float(r["initial_u_server"]),
                initial_r_total=_opt(r["initial_r_total"]),
                u_link=float(r["u_link"]),
                u_server=float(r["u_server"]),
                r_total=_opt(r["r_total"]),
                steps=int(r["steps"]),
                seconds=float(r["seconds"]),
            )
        )
    return out


def read_records(directory: str | os.PathLike) -> list[RunRecord]:
    """Summary plus trajectories from an output directory."""
    d = Path(directory)
    records = read_summary(d / "summary.csv")
    for rec in records:
        traj = d / f"trajectory_{rec.mode}_{rec.seed}.csv"
        if traj.exists():
            rec.trajectory = read_trajectory(traj)
    return records


# ---------------------------------------------------------------------------
# Oracle
# ---------------------------------------------------------------------------


def brute_force_oracle(
    scenario: Scenario, weights: Weights, limit: int = ORACLE_LIMIT
) -> tuple[Allocation, float]:
    """Best CEV over every integral VM/IDS placement; ties go to the lexicographically smallest."""
    n_srv = scenario.net.n_nodes
    n_vm = len(scenario.demands.vns)
    n_ids = len(scenario.demands.ids)
    total = n_srv ** (n_vm + n_ids)
    if total > limit:
        raise OracleTooLarge(total, limit)
    ev = Evaluator(scenario.net, scenario.demands, scenario.options)
    best, best_cev = None, -math.inf
    servers = range(1, n_srv + 1)
    # product() yields in lexicographic order, so a strict > keeps the smallest on ties
    for combo in itertools.product(servers, repeat=n_vm + n_ids):
        alloc = Allocation(combo[:n_vm], combo[n_vm:])
        evals = ev.evaluate(alloc)
        if not evals.satisfied:
            continue
        value = cev(evals, weights, scenario.options)
        if value > best_cev:
            best, best_cev = alloc, value
    if best is None:
        raise Rejected("no feasible allocation exists", scenario.seed)
    return best, best_cev


# ---------------------------------------------------------------------------
# Convergence report
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ConvergenceRow:
    steps: int
    best_cev: float
    ratio: float | None  # None: not applicable (degenerate reference)


def convergence_ratio(initial: float, best: float, suboptimal: float) -> float | None:
    """(best - initial) / (suboptimal - initial), or None if the reference does not exceed the start."""
    if not suboptimal > initial:
        return None
    return (best - initial) / (suboptimal - initial)


def convergence_report(
    records: Sequence[RunRecord], suboptimal_cev: float, milestones: Sequence[int]
) -> list[ConvergenceRow]:
    """Mean best CEV across runs at each milestone step and its convergence ratio."""
    if not records:
        raise ValueError("no records")
    initial = float(np.mean([r.initial_cev for r in records]))
    rows = []
    for m in milestones:
        vals = []
        for r in records:
            if not r.trajectory:
                raise ValueError(f"record for seed {r.seed} has no trajectory")
            idx = min(m, len(r.trajectory)) - 1
            vals.append(r.trajectory[idx] if idx >= 0 else r.initial_cev)
        best = float(np.mean(vals))
        rows.append(ConvergenceRow(int(m), best, convergence_ratio(initial, best, suboptimal_cev)))
    return rows


def config_dict(config: ExperimentConfig) -> dict:
    d = asdict(config)
    d["theta"] = list(d["theta"])
    return d
