"""Control engines: route LP, VM/IDS placement, server check, path decomposition, reliability."""
from __future__ import annotations

import heapq
from dataclasses import dataclass
from functools import lru_cache
from typing import Mapping, Sequence

import numpy as np
import scipy.sparse as sp

from . import lpcore
from .lpcore import LinearProgram, Relation
from .netmodel import PhysicalNetwork, validate_traffic_matrix

PENALTY_VALUE = -1.0
STRIP_TOL = 1e-9
RATIO_TOL = 1e-6
_FLOW_EPS = 1e-12


class RouteInfeasible(Exception):
    """No routing keeps every link at or below capacity."""


class PlacementError(ValueError):
    pass


class DecompositionError(RuntimeError):
    pass


@dataclass(frozen=True)
class Allocation:
    """VM and IDS placements as server (node) ids, 1-based.

    Client placements live on the demands; they never move.
    """

    vm: tuple[int, ...]
    ids: tuple[int, ...] = ()

    def vm_array(self) -> np.ndarray:
        return np.asarray(self.vm, dtype=int) - 1

    def ids_array(self) -> np.ndarray:
        return np.asarray(self.ids, dtype=int) - 1

    def moved(self, kind: str, index: int, server: int) -> Allocation:
        if kind == "vm":
            vm = list(self.vm)
            vm[index] = server
            return Allocation(tuple(vm), self.ids)
        ids = list(self.ids)
        ids[index] = server
        return Allocation(self.vm, tuple(ids))


@dataclass(frozen=True, eq=False)
class Commodity:
    """A flow source with the amounts it must deliver to each destination (0-based nodes)."""

    source: int
    sinks: Mapping[int, float]


@dataclass(eq=False)
class FlowSolution:
    """Link flows per commodity (absolute Gbps) and the optimal max link utilization.

    With the ``"pair"`` formulation every commodity has one sink and the
    per-link fraction ``x_ij^pq`` is ``flow / t_pq``.
    """

    net: PhysicalNetwork
    commodities: tuple[Commodity, ...]
    flow: np.ndarray  # (n_commodities, n_links)
    u_link_max: float
    formulation: str

    def link_loads(self) -> np.ndarray:
        return self.flow.sum(axis=0)

    def fraction(self, p: int, q: int) -> np.ndarray:
        """x_ij^pq over links for OD pair (p, q) given as node ids (pair formulation only)."""
        if self.formulation != "pair":
            raise ValueError("per-pair fractions exist only for the pair formulation")
        for k, com in enumerate(self.commodities):
            if com.source == p - 1 and (q - 1) in com.sinks:
                return self.flow[k] / com.sinks[q - 1]
        return np.zeros(len(self.net.links))

    def conservation_residual(self) -> float:
        """Largest |net outflow - supply| over all commodities and nodes."""
        n = self.net.n_nodes
        worst = 0.0
        for com, f in zip(self.commodities, self.flow):
            net_out = np.bincount(self.net.tails, f, n) - np.bincount(self.net.heads, f, n)
            supply = np.zeros(n)
            for q, amt in com.sinks.items():
                supply[q] -= amt
                supply[com.source] += amt
            worst = max(worst, float(np.max(np.abs(net_out - supply))))
        return worst


@dataclass(frozen=True)
class Path:
    nodes: tuple[int, ...]  # node ids, possibly revisiting a node
    ratio: float

    @property
    def node_set(self) -> frozenset[int]:
        return frozenset(self.nodes)

    @property
    def link_set(self) -> frozenset[tuple[int, int]]:
        return frozenset((a, b) for a, b in zip(self.nodes, self.nodes[1:]) if a != b)


PathSet = dict  # vn_id -> list[Path]


@dataclass(frozen=True)
class EngineEvaluation:
    """Evaluation values; a violated engine carries ``PENALTY_VALUE``."""

    u_link: float
    u_server: float
    r_total: float | None = None
    violation: str | None = None

    @property
    def satisfied(self) -> bool:
        return self.violation is None

    def as_dict(self) -> dict[str, float | None]:
        return {"u_link": self.u_link, "u_server": self.u_server, "r_total": self.r_total}


# ---------------------------------------------------------------------------
# Route engine
# ---------------------------------------------------------------------------


@lru_cache(maxsize=32)
def _source_structure(net: PhysicalNetwork):
    """Constant matrices of the source-aggregated route LP for ``net``."""
    n, L = net.n_nodes, len(net.links)
    rows, cols, vals = [], [], []
    eq_index = {}
    r = 0
    for s in range(n):
        for i in range(n):
            if i == s:
                continue
            eq_index[(s, i)] = r
            for l, (a, b) in enumerate(net.links):
                if b - 1 == i:
                    rows.append(r), cols.append(s * L + l), vals.append(1.0)
                if a - 1 == i:
                    rows.append(r), cols.append(s * L + l), vals.append(-1.0)
            r += 1
    for l in range(L):
        for s in range(n):
            rows.append(r + l), cols.append(s * L + l), vals.append(1.0)
        rows.append(r + l), cols.append(n * L), vals.append(-net.link_capacity[l])
    A = sp.csr_matrix((vals, (rows, cols)), shape=(r + L, n * L + 1))
    rel = (Relation.EQ,) * r + (Relation.LE,) * L
    return A, rel, eq_index


def _pair_lp(net: PhysicalNetwork, pairs: list[tuple[int, int]], D: np.ndarray):
    """Literal per-OD-pair formulation with fractions x_ij^pq in [0, 1]."""
    n, L = net.n_nodes, len(net.links)
    K = len(pairs)
    rows, cols, vals, rhs = [], [], [], []
    r = 0
    for k, (p, q) in enumerate(pairs):
        for i in range(n):
            if i == q:
                continue
            for l, (a, b) in enumerate(net.links):
                if a - 1 == i:
                    rows.append(r), cols.append(k * L + l), vals.append(1.0)
                if b - 1 == i:
                    rows.append(r), cols.append(k * L + l), vals.append(-1.0)
            rhs.append(1.0 if i == p else 0.0)
            r += 1
    for l in range(L):
        for k, (p, q) in enumerate(pairs):
            rows.append(r + l), cols.append(k * L + l), vals.append(D[p, q])
        rows.append(r + l), cols.append(K * L), vals.append(-net.link_capacity[l])
    A = sp.csr_matrix((vals, (rows, cols)), shape=(r + L, K * L + 1))
    c = np.zeros(K * L + 1)
    c[-1] = 1.0
    return LinearProgram(
        c=c,
        A=A,
        relations=(Relation.EQ,) * r + (Relation.LE,) * L,
        b=np.concatenate([rhs, np.zeros(L)]),
        lower=np.zeros(K * L + 1),
        upper=np.ones(K * L + 1),
    )


def route_lp(net: PhysicalNetwork, D: np.ndarray, formulation: str = "source"):
    """Build the min-max link utilization LP for traffic matrix ``D``.

    Returns ``(lp, commodities, decode)`` where ``decode(x)`` yields the
    per-commodity flow amounts.
    """
    D = validate_traffic_matrix(D)
    n, L = net.n_nodes, len(net.links)
    if D.shape[0] != n:
        raise ValueError(f"traffic matrix is {D.shape[0]}x{D.shape[0]} for a {n}-node network")
    if formulation == "pair":
        pairs = [(int(p), int(q)) for p, q in zip(*np.nonzero(D))]
        lp = _pair_lp(net, pairs, D)
        coms = tuple(Commodity(p, {q: float(D[p, q])}) for p, q in pairs)
        t = np.array([D[p, q] for p, q in pairs])

        def decode(x):
            return x[:-1].reshape(len(pairs), L) * t[:, None]

        return lp, coms, decode
    if formulation != "source":
        raise ValueError(f"unknown route formulation {formulation!r}")
    A, rel, eq_index = _source_structure(net)
    b = np.zeros(A.shape[0])
    for (s, i), r in eq_index.items():
        b[r] = D[s, i]
    c = np.zeros(A.shape[1])
    c[-1] = 1.0
    upper = np.full(A.shape[1], np.inf)
    upper[-1] = 1.0
    lp = LinearProgram(c=c, A=A, relations=rel, b=b, lower=np.zeros(A.shape[1]), upper=upper)
    sources = [s for s in range(n) if D[s].sum() > 0]
    coms = tuple(
        Commodity(s, {int(q): float(D[s, q]) for q in np.flatnonzero(D[s])}) for s in sources
    )

    def decode(x):
        return x[:-1].reshape(n, L)[sources]

    return lp, coms, decode


def route_solve(
    net: PhysicalNetwork, D: np.ndarray, formulation: str = "source", method: str = "highs"
) -> FlowSolution:
    """Minimize the maximum link utilization for ``D``; raise :class:`RouteInfeasible` if > 1.

    ``formulation="pair"`` builds one commodity per OD pair with fractional
    routing variables; ``"source"`` aggregates commodities by origin, which
    has the same optimum with far fewer variables.
    """
    lp, coms, decode = route_lp(net, D, formulation)
    if not coms:
        return FlowSolution(net, (), np.zeros((0, len(net.links))), 0.0, formulation)
    hops = net.hops
    for com in coms:
        for q in com.sinks:
            if not np.isfinite(hops[com.source, q]):
                raise RouteInfeasible(f"no path from node {com.source + 1} to node {q + 1}")
    sol = lpcore.solve(lp, method=method)
    if sol.status is not lpcore.LpStatus.OPTIMAL:
        raise RouteInfeasible("link capacity exceeded by every routing")
    flow = np.maximum(decode(sol.x), 0.0)
    flow[flow < _FLOW_EPS] = 0.0
    for k in range(len(coms)):
        _cancel_cycles(net, flow[k])
    return FlowSolution(net, coms, flow, float(sol.x[-1]), formulation)


def _find_cycle(net: PhysicalNetwork, f: np.ndarray) -> list[int] | None:
    """Link indices of one directed cycle carrying positive flow, if any."""
    n = net.n_nodes
    out: list[list[int]] = [[] for _ in range(n)]
    for l in np.flatnonzero(f > 0):
        out[net.tails[l]].append(int(l))
    color = [0] * n  # 0 unseen, 1 on stack, 2 finished
    for root in range(n):
        if color[root] or not out[root]:
            continue
        nodes = [root]
        via: list[int] = []  # via[i] enters nodes[i + 1]
        iters = [iter(out[root])]
        color[root] = 1
        while nodes:
            l = next(iters[-1], None)
            if l is None:
                color[nodes.pop()] = 2
                iters.pop()
                if via:
                    via.pop()
                continue
            v = int(net.heads[l])
            if color[v] == 1:
                return via[nodes.index(v):] + [l]
            if color[v] == 0:
                color[v] = 1
                nodes.append(v)
                via.append(l)
                iters.append(iter(out[v]))
    return None


def _cancel_cycles(net: PhysicalNetwork, f: np.ndarray) -> None:
    """Remove circulations in place; link loads only decrease."""
    while True:
        cyc = _find_cycle(net, f)
        if cyc is None:
            return
        delta = f[cyc].min()
        f[cyc] -= delta
        f[f < _FLOW_EPS] = 0.0


# ---------------------------------------------------------------------------
# VM / IDS placement engines
# ---------------------------------------------------------------------------


def _placement(capacities: np.ndarray, sizes: np.ndarray) -> tuple[np.ndarray, float]:
    n_items, n_srv = len(sizes), len(capacities)
    if n_items == 0:
        return np.zeros(0, dtype=int), 0.0
    if sizes.sum() > capacities.sum() + 1e-9:
        raise PlacementError("demand exceeds aggregate capacity")
    nv = n_items * n_srv + 1
    # each item assigned once
    r1 = np.repeat(np.arange(n_items), n_srv)
    c1 = np.arange(n_items * n_srv)
    # per-server load <= c_k * U
    r2 = n_items + np.tile(np.arange(n_srv), n_items)
    v2 = np.repeat(sizes, n_srv)
    rows = np.concatenate([r1, r2, n_items + np.arange(n_srv)])
    cols = np.concatenate([c1, c1, np.full(n_srv, nv - 1)])
    vals = np.concatenate([np.ones(n_items * n_srv), v2, -capacities])
    A = sp.csr_matrix((vals, (rows, cols)), shape=(n_items + n_srv, nv))
    c = np.zeros(nv)
    c[-1] = 1.0
    lp = LinearProgram(
        c=c,
        A=A,
        relations=(Relation.EQ,) * n_items + (Relation.LE,) * n_srv,
        b=np.concatenate([np.ones(n_items), np.zeros(n_srv)]),
        lower=np.zeros(nv),
        upper=np.ones(nv),
    )
    sol = lpcore.solve(lp, method="highs")
    if not sol.optimal:
        raise PlacementError("demand exceeds aggregate capacity")
    frac = sol.x[:-1].reshape(n_items, n_srv)
    assign = np.argmax(frac, axis=1)  # ties -> lowest server
    load = np.bincount(assign, sizes, n_srv)
    # repair overruns: move the smallest item off an overloaded server to the
    # least utilized server that can take it
    for k in range(n_srv):
        while load[k] > capacities[k] + 1e-9:
            items = [i for i in np.flatnonzero(assign == k)]
            moved = False
            for i in sorted(items, key=lambda i: (sizes[i], i)):
                fits = [s for s in range(n_srv) if s != k and load[s] + sizes[i] <= capacities[s] + 1e-9]
                if fits:
                    dest = min(fits, key=lambda s: (load[s] / capacities[s], s))
                    assign[i] = dest
                    load[k] -= sizes[i]
                    load[dest] += sizes[i]
                    moved = True
                    break
            if not moved:
                break
    return assign, float(np.max(load / capacities))


def vm_initial(net: PhysicalNetwork, vm_sizes: Sequence[float]) -> tuple[tuple[int, ...], float]:
    """Min-max server utilization placement of VMs: LP relaxation, then rounding.

    Returns server ids per VM and the integral max utilization of the VM load alone.
    """
    assign, u = _placement(net.capacities, np.asarray(vm_sizes, dtype=float))
    return tuple(int(a) + 1 for a in assign), u


def ids_initial(net: PhysicalNetwork, ids_sizes: Sequence[float]) -> tuple[tuple[int, ...], float]:
    """Same model as :func:`vm_initial`, applied to IDS sizes."""
    return vm_initial(net, ids_sizes)


def server_loads(
    net: PhysicalNetwork,
    vm: Sequence[int],
    vm_sizes: np.ndarray,
    ids: Sequence[int] = (),
    ids_sizes: np.ndarray | None = None,
) -> np.ndarray:
    n = net.n_nodes
    load = np.bincount(np.asarray(vm, dtype=int) - 1, vm_sizes, n) if len(vm) else np.zeros(n)
    if len(ids):
        load = load + np.bincount(np.asarray(ids, dtype=int) - 1, ids_sizes, n)
    return load


def evaluate_servers(
    net: PhysicalNetwork,
    vm: Sequence[int],
    vm_sizes: np.ndarray,
    ids: Sequence[int] = (),
    ids_sizes: np.ndarray | None = None,
) -> float:
    """Max server utilization with VM and IDS loads aggregated, or ``PENALTY_VALUE`` if > 1."""
    load = server_loads(net, vm, vm_sizes, ids, ids_sizes)
    u = float(np.max(load / net.capacities))
    return u if u <= 1.0 + 1e-12 else PENALTY_VALUE


# ---------------------------------------------------------------------------
# Path decomposition and reliability
# ---------------------------------------------------------------------------


def _widest_tree(net: PhysicalNetwork, f: np.ndarray, source: int):
    """Max-bottleneck paths from ``source`` over links with positive residual."""
    n = net.n_nodes
    width = np.zeros(n)
    width[source] = np.inf
    pred = [-1] * n
    done = [False] * n
    heap = [(-np.inf, source)]
    out: list[list[int]] = [[] for _ in range(n)]
    for l in np.flatnonzero(f > _FLOW_EPS):
        out[net.tails[l]].append(int(l))
    while heap:
        w, u = heapq.heappop(heap)
        if done[u]:
            continue
        done[u] = True
        for l in out[u]:
            v = int(net.heads[l])
            cand = min(-w, f[l])
            if cand > width[v] and not done[v]:
                width[v] = cand
                pred[v] = l
                heapq.heappush(heap, (-cand, v))
    return width, pred


def decompose_commodity(
    net: PhysicalNetwork, com: Commodity, flow: np.ndarray
) -> dict[int, list[tuple[tuple[int, ...], float]]]:
    """Strip widest paths from one commodity's flow until every sink is served.

    Returns ``{sink: [(node ids along path, amount), ...]}``.
    """
    f = flow.astype(float).copy()
    remaining = dict(com.sinks)
    out: dict[int, list] = {q: [] for q in remaining}
    while True:
        open_sinks = [q for q, d in remaining.items() if d > STRIP_TOL * max(1.0, com.sinks[q])]
        if not open_sinks:
            break
        width, pred = _widest_tree(net, f, com.source)
        q = max(open_sinks, key=lambda q: (min(width[q], remaining[q]), -q))
        delta = min(width[q], remaining[q])
        if delta <= _FLOW_EPS:
            if remaining[q] <= RATIO_TOL * max(1.0, com.sinks[q]):
                remaining[q] = 0.0  # solver round-off, not missing flow
                continue
            raise DecompositionError(
                f"flow from node {com.source + 1} cannot deliver {remaining[q]:.3g} to node {q + 1}"
            )
        links = []
        v = q
        while v != com.source:
            l = pred[v]
            links.append(l)
            v = int(net.tails[l])
        links.reverse()
        f[links] -= delta
        remaining[q] -= delta
        nodes = (com.source + 1,) + tuple(int(net.heads[l]) + 1 for l in links)
        out[q].append((nodes, delta))
    total = sum(com.sinks.values())
    if f.sum() > STRIP_TOL * max(1.0, total) * len(f):
        raise DecompositionError("residual circulation left after stripping: flow is not acyclic")
    return out


def od_paths(flow: FlowSolution) -> dict[tuple[int, int], list[tuple[tuple[int, ...], float]]]:
    """Per OD pair (node ids): list of (path nodes, splitting ratio)."""
    res = {}
    for com, f in zip(flow.commodities, flow.flow):
        for q, plist in decompose_commodity(flow.net, com, f).items():
            t = com.sinks[q]
            ratios = [(nodes, amt / t) for nodes, amt in plist]
            s = sum(r for _, r in ratios)
            if abs(s - 1.0) > RATIO_TOL:
                raise DecompositionError(f"ratios for {com.source + 1}->{q + 1} sum to {s}")
            res[(com.source + 1, q + 1)] = [(nodes, r / s) for nodes, r in ratios]
    return res


def decompose_flows(
    flow: FlowSolution,
    segments: Mapping[int, Sequence[tuple[int, int]]],
    traffic: Mapping[int, float] | None = None,
    paths_by_pair: Mapping[tuple[int, int], list] | None = None,
) -> PathSet:
    """Per-VN end-to-end paths from OD segment lists.

    ``segments[vn]`` lists ``(a, b)`` node-id hops of the VN's chain (e.g.
    client->IDS server, IDS server->VM server). Segment paths are
    concatenated and their ratios multiplied. A zero-length segment
    (``a == b``) contributes only its node. VNs with zero traffic get no
    paths.
    """
    by_pair = od_paths(flow) if paths_by_pair is None else paths_by_pair
    out: PathSet = {}
    for vn, segs in segments.items():
        if traffic is not None and traffic.get(vn, 1.0) <= 0:
            out[vn] = []
            continue
        partial: list[tuple[tuple[int, ...], float]] = [((), 1.0)]
        for a, b in segs:
            options = [((a,), 1.0)] if a == b else by_pair.get((a, b))
            if not options:
                raise DecompositionError(f"VN {vn}: no flow carries segment {a}->{b}")
            nxt = []
            for nodes, r in partial:
                for seg_nodes, sr in options:
                    joined = nodes + (seg_nodes[1:] if nodes and nodes[-1] == seg_nodes[0] else seg_nodes)
                    nxt.append((joined, r * sr))
            partial = nxt
        out[vn] = [Path(nodes, r) for nodes, r in partial]
    return out


def path_reliability(net: PhysicalNetwork, path: Path) -> float:
    r = 1.0
    for i in path.node_set:
        r *= net.node_reliability[i - 1]
    idx = net.link_index
    for lk in path.link_set:
        r *= net.link_reliability[idx[lk]]
    return r


def vn_reliability(net: PhysicalNetwork, paths: Sequence[Path]) -> float:
    return sum(p.ratio * path_reliability(net, p) for p in paths)


def reliability_total(paths: PathSet, net: PhysicalNetwork, traffic: Mapping[int, float]) -> float:
    """Traffic-weighted average of per-VN reliabilities; 1.0 when no traffic flows."""
    num = den = 0.0
    for vn, t in traffic.items():
        if t <= 0:
            continue
        num += t * vn_reliability(net, paths[vn])
        den += t
    return num / den if den > 0 else 1.0
