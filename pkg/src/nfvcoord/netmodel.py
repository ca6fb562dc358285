"""Physical network, server and VN-demand model plus the text formats for them.

Topology documents are line oriented::

    # comments start with '#'
    [nodes]
    1 Seattle
    2 SaltLakeCity
    [edges]
    # i j capacity [reliability]
    1 2 3.0
    6 7 3.0 0.5
    [servers]
    # node capacity [reliability]
    1 13
    6 13 0.9

Every edge is undirected and becomes two directed links with the same
capacity and reliability. There is exactly one server per node.

Demand dumps use the same section style::

    [vns]
    # id client vm_size traffic peer
    1 3 2 0.4375 -
    [ids]
    # id size capacity
    1 2 1

``client`` / ``peer`` are ``-`` when absent.
"""
from __future__ import annotations

import math
from collections import deque
from dataclasses import dataclass, field, replace
from functools import cached_property
from typing import TYPE_CHECKING, Iterable

import numpy as np

if TYPE_CHECKING:
    from .scenario import CaseParams, ScaleParams


class TopologyError(ValueError):
    """Malformed topology or demand document."""

    def __init__(self, message: str, line: int | None = None, text: str | None = None):
        self.line = line
        self.text = text
        where = f"line {line}: " if line is not None else ""
        ctx = f" ({text.strip()!r})" if text else ""
        super().__init__(f"{where}{message}{ctx}")


@dataclass(frozen=True)
class PhysicalNetwork:
    """Directed links built from an undirected topology; one server per node.

    Node ids are ``1..n``; internal arrays are indexed by ``id - 1``.
    """

    names: tuple[str, ...]
    links: tuple[tuple[int, int], ...]
    link_capacity: tuple[float, ...]
    link_reliability: tuple[float, ...]
    server_capacity: tuple[float, ...]
    node_reliability: tuple[float, ...]

    def __post_init__(self) -> None:
        n = len(self.names)
        if not (len(self.server_capacity) == len(self.node_reliability) == n):
            raise TopologyError("every node needs exactly one server")
        if not (len(self.links) == len(self.link_capacity) == len(self.link_reliability)):
            raise TopologyError("link attribute lengths differ")
        if any(c <= 0 for c in self.link_capacity) or any(c <= 0 for c in self.server_capacity):
            raise TopologyError("capacities must be positive")
        for r in (*self.link_reliability, *self.node_reliability):
            if not 0.0 <= r <= 1.0:
                raise TopologyError(f"reliability {r} outside [0, 1]")
        seen = {}
        for (i, j), cap, rel in zip(self.links, self.link_capacity, self.link_reliability):
            if not (1 <= i <= n and 1 <= j <= n) or i == j:
                raise TopologyError(f"bad link ({i}, {j})")
            seen[(i, j)] = (cap, rel)
        for (i, j), attrs in seen.items():
            if seen.get((j, i)) != attrs:
                raise TopologyError(f"link ({i}, {j}) has no matching reverse link")

    @property
    def n_nodes(self) -> int:
        return len(self.names)

    @property
    def node_ids(self) -> range:
        return range(1, self.n_nodes + 1)

    @cached_property
    def link_index(self) -> dict[tuple[int, int], int]:
        return {lk: k for k, lk in enumerate(self.links)}

    @cached_property
    def tails(self) -> np.ndarray:
        """0-based tail node index per link."""
        return np.array([i - 1 for i, _ in self.links], dtype=int)

    @cached_property
    def heads(self) -> np.ndarray:
        return np.array([j - 1 for _, j in self.links], dtype=int)

    @cached_property
    def capacities(self) -> np.ndarray:
        return np.array(self.server_capacity, dtype=float)

    @cached_property
    def link_caps(self) -> np.ndarray:
        return np.array(self.link_capacity, dtype=float)

    @cached_property
    def hops(self) -> np.ndarray:
        """All-pairs shortest-path hop counts (0-based indices, ``inf`` if unreachable)."""
        n = self.n_nodes
        adj: list[list[int]] = [[] for _ in range(n)]
        for i, j in self.links:
            adj[i - 1].append(j - 1)
        dist = np.full((n, n), np.inf)
        for s in range(n):
            dist[s, s] = 0
            queue = deque([s])
            while queue:
                u = queue.popleft()
                for v in adj[u]:
                    if dist[s, v] == np.inf:
                        dist[s, v] = dist[s, u] + 1
                        queue.append(v)
        return dist

    def undirected_edges(self) -> list[tuple[int, int, float, float]]:
        return [
            (i, j, c, r)
            for (i, j), c, r in zip(self.links, self.link_capacity, self.link_reliability)
            if i < j
        ]

    def with_capacities(
        self, server_capacity: Iterable[float] | None = None, link_capacity: float | None = None
    ) -> PhysicalNetwork:
        changes: dict = {}
        if server_capacity is not None:
            changes["server_capacity"] = tuple(float(c) for c in server_capacity)
        if link_capacity is not None:
            changes["link_capacity"] = tuple(float(link_capacity) for _ in self.links)
        return replace(self, **changes)


def _sections(text: str):
    section = None
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if line.startswith("[") and line.endswith("]"):
            section = line[1:-1].strip().lower()
            yield lineno, raw, section, None
            continue
        if section is None:
            raise TopologyError("content before the first section header", lineno, raw)
        yield lineno, raw, section, line.split()


def _number(tok: str, lineno: int, raw: str, kind=float):
    try:
        val = kind(tok)
    except ValueError:
        raise TopologyError(f"expected a number, got {tok!r}", lineno, raw) from None
    if isinstance(val, float) and not math.isfinite(val):
        raise TopologyError(f"non-finite value {tok!r}", lineno, raw)
    return val


def load_topology(text: str) -> PhysicalNetwork:
    """Parse a topology document (see module docstring)."""
    nodes: dict[int, str] = {}
    edges: dict[frozenset, tuple[int, int, float, float, int]] = {}
    servers: dict[int, tuple[float, float]] = {}
    pending: list[tuple[str, list[str], int, str]] = []
    for lineno, raw, section, toks in _sections(text):
        if toks is None:
            if section not in ("nodes", "edges", "servers"):
                raise TopologyError(f"unknown section [{section}]", lineno, raw)
            continue
        if section == "nodes":
            nid = _number(toks[0], lineno, raw, int)
            if nid in nodes:
                raise TopologyError(f"duplicate node {nid}", lineno, raw)
            nodes[nid] = toks[1] if len(toks) > 1 else str(nid)
        else:
            pending.append((section, toks, lineno, raw))

    if not nodes:
        raise TopologyError("no [nodes] listed")
    if sorted(nodes) != list(range(1, len(nodes) + 1)):
        raise TopologyError(f"node ids must be 1..{len(nodes)}, got {sorted(nodes)}")

    def node_ref(tok: str, lineno: int, raw: str) -> int:
        nid = _number(tok, lineno, raw, int)
        if nid not in nodes:
            raise TopologyError(f"unknown node {tok}", lineno, raw)
        return nid

    def reliability(toks: list[str], idx: int, lineno: int, raw: str) -> float:
        if len(toks) <= idx:
            return 1.0
        r = _number(toks[idx], lineno, raw)
        if not 0.0 <= r <= 1.0:
            raise TopologyError(f"reliability {r} outside [0, 1]", lineno, raw)
        return r

    for section, toks, lineno, raw in pending:
        if section == "edges":
            if len(toks) not in (3, 4):
                raise TopologyError("edge lines are 'i j capacity [reliability]'", lineno, raw)
            i, j = node_ref(toks[0], lineno, raw), node_ref(toks[1], lineno, raw)
            if i == j:
                raise TopologyError("self-loop edge", lineno, raw)
            cap = _number(toks[2], lineno, raw)
            if cap <= 0:
                raise TopologyError(f"nonpositive capacity {cap}", lineno, raw)
            key = frozenset((i, j))
            if key in edges:
                raise TopologyError(f"duplicate edge {i}-{j}", lineno, raw)
            edges[key] = (i, j, cap, reliability(toks, 3, lineno, raw), lineno)
        else:
            if len(toks) not in (2, 3):
                raise TopologyError("server lines are 'node capacity [reliability]'", lineno, raw)
            nid = node_ref(toks[0], lineno, raw)
            if nid in servers:
                raise TopologyError(f"duplicate server for node {nid}", lineno, raw)
            cap = _number(toks[1], lineno, raw)
            if cap <= 0:
                raise TopologyError(f"nonpositive capacity {cap}", lineno, raw)
            servers[nid] = (cap, reliability(toks, 2, lineno, raw))

    missing = sorted(set(nodes) - set(servers))
    if missing:
        raise TopologyError(f"nodes without a server: {missing}")

    links, lcap, lrel = [], [], []
    for i, j, cap, rel, _ in sorted(edges.values(), key=lambda e: (min(e[0], e[1]), max(e[0], e[1]))):
        a, b = min(i, j), max(i, j)
        links += [(a, b), (b, a)]
        lcap += [cap, cap]
        lrel += [rel, rel]
    ids = sorted(nodes)
    return PhysicalNetwork(
        names=tuple(nodes[i] for i in ids),
        links=tuple(links),
        link_capacity=tuple(lcap),
        link_reliability=tuple(lrel),
        server_capacity=tuple(servers[i][0] for i in ids),
        node_reliability=tuple(servers[i][1] for i in ids),
    )


def dump_topology(net: PhysicalNetwork) -> str:
    out = ["[nodes]"]
    out += [f"{i} {name}" for i, name in zip(net.node_ids, net.names)]
    out.append("[edges]")
    for i, j, cap, rel in net.undirected_edges():
        out.append(f"{i} {j} {cap!r}" + ("" if rel == 1.0 else f" {rel!r}"))
    out.append("[servers]")
    for i, cap, rel in zip(net.node_ids, net.server_capacity, net.node_reliability):
        out.append(f"{i} {cap!r}" + ("" if rel == 1.0 else f" {rel!r}"))
    return "\n".join(out) + "\n"


# Nine-node Internet2 backbone. Node 6 (Houston) and its links to Atlanta
# and Los Angeles form the disaster zone. Capacities are the N_VN=20
# defaults and get replaced per scenario.
INTERNET2_TOPOLOGY = """\
[nodes]
1 Seattle
2 SaltLakeCity
3 KansasCity
4 Chicago
5 NewYork
6 Houston
7 Atlanta
8 Washington
9 LosAngeles
[edges]
1 2 3.0
1 9 3.0
2 9 3.0
2 3 3.0
3 4 3.0
3 6 3.0
4 5 3.0
4 7 3.0
5 8 3.0
6 7 3.0 0.5
6 9 3.0 0.5
7 8 3.0
[servers]
1 13
2 13
3 13
4 13
5 13
6 13 0.9
7 13
8 13
9 13
"""


def internet2() -> PhysicalNetwork:
    return load_topology(INTERNET2_TOPOLOGY)


# ---------------------------------------------------------------------------
# Demands
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class VnDemand:
    """One VN: origin (fixed client node or peer VM), destination VM, traffic.

    ``client`` is a node id when the fixed-node option is active, otherwise
    ``peer`` names the VM whose server originates the traffic.
    """

    vn_id: int
    vm_size: int
    traffic: float
    client: int | None = None
    peer: int | None = None

    def __post_init__(self) -> None:
        if self.traffic < 0:
            raise ValueError(f"VN {self.vn_id}: negative traffic {self.traffic}")
        if self.vm_size < 1:
            raise ValueError(f"VN {self.vn_id}: VM size must be >= 1")
        if self.client is not None and self.peer is not None:
            raise ValueError(f"VN {self.vn_id}: client and peer are mutually exclusive")


@dataclass(frozen=True)
class IdsSpec:
    ids_id: int
    size: int
    capacity: int

    def __post_init__(self) -> None:
        if self.size < 0:
            raise ValueError(f"IDS {self.ids_id}: negative size")
        if self.capacity < 1:
            raise ValueError(f"IDS {self.ids_id}: session capacity must be >= 1")


@dataclass(frozen=True)
class DemandSet:
    vns: tuple[VnDemand, ...]
    ids: tuple[IdsSpec, ...] = field(default_factory=tuple)

    @property
    def vm_sizes(self) -> np.ndarray:
        return np.array([d.vm_size for d in self.vns], dtype=float)

    @property
    def ids_sizes(self) -> np.ndarray:
        return np.array([s.size for s in self.ids], dtype=float)

    @property
    def traffic(self) -> np.ndarray:
        return np.array([d.traffic for d in self.vns], dtype=float)


def validate_traffic_matrix(D: np.ndarray) -> np.ndarray:
    D = np.asarray(D, dtype=float)
    if D.ndim != 2 or D.shape[0] != D.shape[1]:
        raise ValueError(f"traffic matrix must be square, got {D.shape}")
    if np.any(D < 0):
        raise ValueError("traffic matrix has negative entries")
    if np.any(np.diag(D) != 0):
        raise ValueError("traffic matrix diagonal must be zero")
    return D


def generate_demands(
    scale: ScaleParams, case: CaseParams, seed, n_nodes: int
) -> tuple[list[VnDemand], list[IdsSpec]]:
    """Draw VN demands and IDS specs for ``case`` at ``scale``.

    Clients are uniform over nodes (fixed-node cases, coincidences
    allowed); otherwise each VN gets a uniformly drawn peer VM as its
    origin. Traffic is uniform on [0, 1) Gbps.
    """
    rng = np.random.default_rng(seed)
    n = scale.n_vn
    lo, hi = case.vm_size_range
    sizes = rng.integers(lo, hi + 1, size=n)
    traffic = rng.uniform(0.0, 1.0, size=n)
    if case.options.fixed_node:
        clients = rng.integers(1, n_nodes + 1, size=n)
        peers = [None] * n
    else:
        clients = [None] * n
        if n < 2:
            raise ValueError("VM-pair demands need at least two VNs")
        # uniform over the other n-1 VMs
        draw = rng.integers(1, n, size=n)
        peers = [int(d + (d >= k)) for k, d in enumerate(draw, start=1)]
    vns = [
        VnDemand(
            vn_id=k,
            vm_size=int(sizes[k - 1]),
            traffic=float(traffic[k - 1]),
            client=None if clients[k - 1] is None else int(clients[k - 1]),
            peer=peers[k - 1],
        )
        for k in range(1, n + 1)
    ]
    n_ids, ids_size, ids_cap = case.ids_layout(n)
    ids = [IdsSpec(j, ids_size, ids_cap) for j in range(1, n_ids + 1)]
    return vns, ids


def dump_demands(demands: DemandSet) -> str:
    out = ["[vns]", "# id client vm_size traffic peer"]
    for d in demands.vns:
        client = "-" if d.client is None else str(d.client)
        peer = "-" if d.peer is None else str(d.peer)
        out.append(f"{d.vn_id} {client} {d.vm_size} {d.traffic!r} {peer}")
    out += ["[ids]", "# id size capacity"]
    out += [f"{s.ids_id} {s.size} {s.capacity}" for s in demands.ids]
    return "\n".join(out) + "\n"


def load_demands(text: str) -> DemandSet:
    vns, ids = [], []
    for lineno, raw, section, toks in _sections(text):
        if toks is None:
            if section not in ("vns", "ids"):
                raise TopologyError(f"unknown section [{section}]", lineno, raw)
            continue
        try:
            if section == "vns":
                if len(toks) != 5:
                    raise TopologyError("vn lines are 'id client vm_size traffic peer'", lineno, raw)
                opt = lambda t: None if t == "-" else _number(t, lineno, raw, int)  # noqa: E731
                vns.append(
                    VnDemand(
                        vn_id=_number(toks[0], lineno, raw, int),
                        client=opt(toks[1]),
                        vm_size=_number(toks[2], lineno, raw, int),
                        traffic=_number(toks[3], lineno, raw),
                        peer=opt(toks[4]),
                    )
                )
            else:
                if len(toks) != 3:
                    raise TopologyError("ids lines are 'id size capacity'", lineno, raw)
                ids.append(IdsSpec(*(_number(t, lineno, raw, int) for t in toks)))
        except ValueError as exc:
            if isinstance(exc, TopologyError):
                raise
            raise TopologyError(str(exc), lineno, raw) from None
    if [d.vn_id for d in vns] != list(range(1, len(vns) + 1)):
        raise TopologyError("VN ids must be 1..N in order")
    if [s.ids_id for s in ids] != list(range(1, len(ids) + 1)):
        raise TopologyError("IDS ids must be 1..M in order")
    return DemandSet(tuple(vns), tuple(ids))
