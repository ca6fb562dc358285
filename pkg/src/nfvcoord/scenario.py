"""The twelve use cases, their scale parameters, and initial-solution construction."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .coord import Evaluator
from .engines import Allocation, EngineEvaluation, PlacementError, ids_initial, vm_initial
from .ioconv import UseCaseOptions
from .netmodel import DemandSet, PhysicalNetwork, VnDemand, generate_demands, internet2

TARGET_UTILIZATION = 0.80
UTILIZATION_BAND = (0.79, 0.81)

# Table of per-N_VN server capacity range and uniform link capacity (Gbps).
_SCALE_TABLE = {
    20: ((12, 14), 3.0),
    50: ((30, 36), 7.5),
    200: ((120, 144), 30.0),
    400: ((240, 288), 60.0),
    800: ((480, 576), 120.0),
    1000: ((600, 720), 150.0),
    1500: ((900, 1080), 225.0),
    2000: ((1200, 1400), 300.0),
}


class Rejected(Exception):
    """The drawn scenario has no feasible initial solution (or cannot be calibrated)."""

    def __init__(self, reason: str, seed: int | None = None):
        self.reason = reason
        self.seed = seed
        super().__init__(f"seed {seed}: {reason}" if seed is not None else reason)


@dataclass(frozen=True)
class ScaleParams:
    n_vn: int
    server_capacity_range: tuple[int, int]
    link_capacity: float

    @property
    def n_vm(self) -> int:
        return self.n_vn

    @property
    def n_cli(self) -> int:
        return self.n_vn

    @classmethod
    def for_vn(cls, n_vn: int) -> ScaleParams:
        """Tabulated values; other sizes scale linearly from the N_VN=50 column."""
        if n_vn in _SCALE_TABLE:
            rng, link = _SCALE_TABLE[n_vn]
            return cls(n_vn, rng, link)
        lo = max(1, round(0.6 * n_vn))
        hi = max(lo, round(0.72 * n_vn))
        return cls(n_vn, (lo, hi), 0.15 * n_vn)


@dataclass(frozen=True)
class CaseParams:
    case_id: int
    options: UseCaseOptions
    vm_size_range: tuple[int, int]

    def ids_layout(self, n_vn: int) -> tuple[int, int, int]:
        """(number of IDSs, IDS size, IDS session capacity) at ``n_vn`` VNs.

        Isolation: one size-2 IDS per VN. Sharing: ten IDSs whose size and
        session capacity scale with N_VN (40 and 20 at N_VN=200).
        """
        if not self.options.with_ids:
            return 0, 0, 0
        if self.options.ids_isolation:
            return n_vn, 2, 1
        n_ids = min(10, n_vn)
        return n_ids, max(1, round(n_vn / 5)), max(1, math.ceil(n_vn / n_ids))

    def n_ids(self, n_vn: int) -> int:
        return self.ids_layout(n_vn)[0]


def case_matrix() -> list[CaseParams]:
    """The twelve valid option combinations, in case-id order."""
    rows = [
        # ids, reliability, fixed node, isolation
        (True, True, True, True),
        (True, True, True, False),
        (True, True, False, True),
        (True, True, False, False),
        (True, False, True, True),
        (True, False, True, False),
        (True, False, False, True),
        (True, False, False, False),
        (False, True, True, False),
        (False, True, False, False),
        (False, False, True, False),
        (False, False, False, False),
    ]
    out = []
    for cid, (ids, rel, fixed, iso) in enumerate(rows, start=1):
        out.append(
            CaseParams(cid, UseCaseOptions(ids, rel, fixed, iso), (1, 3) if ids else (3, 8))
        )
    return out


def case_params(case_id: int) -> CaseParams:
    if not 1 <= case_id <= 12:
        raise ValueError(f"case id must be 1..12, got {case_id}")
    return case_matrix()[case_id - 1]


@dataclass(frozen=True)
class Scenario:
    case: CaseParams
    net: PhysicalNetwork
    demands: DemandSet
    initial: Allocation
    initial_eval: EngineEvaluation
    seed: int | None

    @property
    def options(self) -> UseCaseOptions:
        return self.case.options

    @property
    def utilization(self) -> float:
        total = self.demands.vm_sizes.sum() + self.demands.ids_sizes.sum()
        return float(total / self.net.capacities.sum())


def calibrate_vm_sizes(
    sizes: np.ndarray, ids_total: float, capacity_total: float, rng: np.random.Generator
) -> np.ndarray:
    """Nudge VM sizes by single units until aggregate utilization sits in the 79-81% band."""
    lo = math.ceil(UTILIZATION_BAND[0] * capacity_total - 1e-9)
    hi = math.floor(UTILIZATION_BAND[1] * capacity_total + 1e-9)
    if lo > hi:
        raise Rejected(f"no integral load fits the {UTILIZATION_BAND} band for capacity {capacity_total}")
    target = min(max(round(TARGET_UTILIZATION * capacity_total), lo), hi)
    sizes = sizes.astype(int).copy()
    need = target - ids_total - sizes.sum()
    if need > 0:
        for i in rng.integers(0, len(sizes), size=int(need)):
            sizes[i] += 1
    elif need < 0:
        for _ in range(int(-need)):
            shrinkable = np.flatnonzero(sizes > 1)
            if shrinkable.size == 0:
                raise Rejected("IDS load alone exceeds the utilization target")
            sizes[rng.choice(shrinkable)] -= 1
    return sizes


def initial_allocation(net: PhysicalNetwork, demands: DemandSet) -> Allocation:
    """VM and IDS engines solve independently, each ignoring the other's load."""
    vm, _ = vm_initial(net, demands.vm_sizes)
    ids, _ = ids_initial(net, demands.ids_sizes) if demands.ids else ((), 0.0)
    return Allocation(vm, ids)


def assemble(
    case: CaseParams, net: PhysicalNetwork, demands: DemandSet, seed: int | None = None
) -> Scenario:
    """Compute the initial solution for given inputs; raise :class:`Rejected` if it violates a constraint."""
    try:
        initial = initial_allocation(net, demands)
    except PlacementError as exc:
        raise Rejected(str(exc), seed) from None
    evals = Evaluator(net, demands, case.options).evaluate(initial)
    if not evals.satisfied:
        raise Rejected(evals.violation, seed)
    return Scenario(case, net, demands, initial, evals, seed)


def build(
    case_id: int,
    n_vn: int,
    seed: int,
    topology: PhysicalNetwork | None = None,
    scale: ScaleParams | None = None,
) -> Scenario:
    """Draw capacities and demands for a case, calibrate to ~80% load, compute the initial solution."""
    case = case_params(case_id)
    scale = scale or ScaleParams.for_vn(n_vn)
    if scale.n_vn != n_vn:
        raise ValueError("scale parameters are for a different N_VN")
    base = topology or internet2()
    ss = np.random.SeedSequence(seed)
    cap_seed, dem_seed, cal_seed = ss.spawn(3)
    lo, hi = scale.server_capacity_range
    caps = np.random.default_rng(cap_seed).integers(lo, hi + 1, size=base.n_nodes)
    net = base.with_capacities(caps, scale.link_capacity)
    vns, ids = generate_demands(scale, case, dem_seed, net.n_nodes)
    try:
        sizes = calibrate_vm_sizes(
            np.array([d.vm_size for d in vns]),
            sum(s.size for s in ids),
            float(caps.sum()),
            np.random.default_rng(cal_seed),
        )
    except Rejected as exc:
        raise Rejected(exc.reason, seed) from None
    vns = [VnDemand(d.vn_id, int(w), d.traffic, d.client, d.peer) for d, w in zip(vns, sizes)]
    return assemble(case, net, DemandSet(tuple(vns), tuple(ids)), seed)
