"""Convert placements into the node-to-node traffic matrix and per-VN routing plans."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .engines import Allocation
from .netmodel import IdsSpec, PhysicalNetwork, VnDemand


class ConversionError(Exception):
    """The allocation cannot be turned into routable demands (e.g. every IDS is full)."""


@dataclass(frozen=True)
class UseCaseOptions:
    with_ids: bool
    with_reliability: bool
    fixed_node: bool
    ids_isolation: bool = False

    def __post_init__(self) -> None:
        if self.ids_isolation and not self.with_ids:
            raise ValueError("IDS isolation only applies together with the IDS option")

    def label(self) -> str:
        parts = ["ids" if self.with_ids else "no-ids", "rel" if self.with_reliability else "no-rel"]
        parts.append("fixed" if self.fixed_node else "mobile")
        if self.with_ids:
            parts.append("isolation" if self.ids_isolation else "sharing")
        return "/".join(parts)


@dataclass(frozen=True)
class VnRoutingPlan:
    """Endpoints of one VN as node ids; ``middle`` is the IDS server when IDS is on."""

    vn_id: int
    origin: int
    destination: int
    traffic: float
    middle: int | None = None
    ids_id: int | None = None

    def segments(self) -> list[tuple[int, int]]:
        if self.middle is None:
            return [(self.origin, self.destination)]
        return [(self.origin, self.middle), (self.middle, self.destination)]


def _origin(d: VnDemand, alloc: Allocation, opts: UseCaseOptions) -> int:
    if opts.fixed_node:
        if d.client is None:
            raise ValueError(f"VN {d.vn_id} has no client node but the fixed-node option is on")
        return d.client
    if d.peer is None:
        # no peer VM recorded: the VN's own VM is the origin
        return alloc.vm[d.vn_id - 1]
    return alloc.vm[d.peer - 1]


def base_plans(alloc: Allocation, demands: Sequence[VnDemand], opts: UseCaseOptions) -> list[VnRoutingPlan]:
    """Origin/destination per VN before any IDS is attached."""
    return [
        VnRoutingPlan(d.vn_id, _origin(d, alloc, opts), alloc.vm[d.vn_id - 1], d.traffic)
        for d in demands
    ]


def next_ids_assignment(
    plans: Sequence[VnRoutingPlan],
    ids_specs: Sequence[IdsSpec],
    opts: UseCaseOptions,
    ids_servers: Sequence[int],
    net: PhysicalNetwork,
) -> list[int]:
    """IDS id per VN.

    Isolation pairs VN k with IDS k. Sharing walks VNs in id order and
    gives each the IDS with spare sessions whose server minimizes the hop
    count origin->IDS->destination (ties: lowest IDS id).
    """
    if not opts.with_ids:
        raise ValueError("IDS assignment requested without the IDS option")
    if opts.ids_isolation:
        if len(ids_specs) < len(plans):
            raise ConversionError(f"{len(plans)} VNs but only {len(ids_specs)} isolated IDSs")
        return [p.vn_id for p in plans]
    hops = net.hops
    sessions = [0] * len(ids_specs)
    caps = [s.capacity for s in ids_specs]
    srv = np.asarray(ids_servers, dtype=int) - 1
    out = []
    for p in sorted(plans, key=lambda p: p.vn_id):
        length = hops[p.origin - 1, srv] + hops[srv, p.destination - 1]
        best = None
        for j in np.argsort(length, kind="stable"):
            if sessions[j] < caps[j]:
                best = int(j)
                break
        if best is None or not np.isfinite(length[best]):
            raise ConversionError(f"no feasible IDS for VN {p.vn_id}")
        sessions[best] += 1
        out.append(best + 1)
    return out


def convert(
    alloc: Allocation,
    demands: Sequence[VnDemand],
    ids_specs: Sequence[IdsSpec],
    opts: UseCaseOptions,
    net: PhysicalNetwork,
) -> tuple[np.ndarray, list[VnRoutingPlan]]:
    """Traffic matrix (0-based node indices) and routing plans for ``alloc``.

    Colocated segment endpoints carry no network traffic.
    """
    if not demands:
        raise ValueError("no VN demands")
    if len(alloc.vm) != len(demands):
        raise ValueError(f"{len(demands)} VNs but {len(alloc.vm)} VM placements")
    plans = base_plans(alloc, demands, opts)
    if opts.with_ids:
        chosen = next_ids_assignment(plans, ids_specs, opts, alloc.ids, net)
        plans = [
            VnRoutingPlan(p.vn_id, p.origin, p.destination, p.traffic, alloc.ids[j - 1], j)
            for p, j in zip(plans, chosen)
        ]
    n = net.n_nodes
    D = np.zeros((n, n))
    for p in plans:
        for a, b in p.segments():
            if a != b:
                D[a - 1, b - 1] += p.traffic
    return D, plans


def vm_traffic_matrix(demands: Sequence[VnDemand]) -> np.ndarray:
    """VM-to-VM demand matrix: entry (peer, vm) carries the VN's traffic."""
    n = len(demands)
    T = np.zeros((n, n))
    for d in demands:
        src = d.peer if d.peer is not None else d.vn_id
        T[src - 1, d.vn_id - 1] += d.traffic
    return T


def placement_matrix(servers: Sequence[int], n_nodes: int) -> np.ndarray:
    """One-hot VM->server assignment matrix."""
    X = np.zeros((len(servers), n_nodes))
    X[np.arange(len(servers)), np.asarray(servers, dtype=int) - 1] = 1.0
    return X
