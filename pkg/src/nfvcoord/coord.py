"""Hierarchical Q-learning coordination of the control engines.

An instruction agent picks which control agent (VM or IDS) explores next;
the control agent migrates one VNF per step, every engine re-evaluates the
changed solution, and the weighted comprehensive evaluation value (CEV) is
the reward. The highest-CEV solution seen is kept as the result.
"""
from __future__ import annotations

import hashlib
import time
from collections import OrderedDict
from dataclasses import dataclass, field, replace
from typing import TYPE_CHECKING, Hashable, Sequence

import numpy as np

from .engines import (
    PENALTY_VALUE,
    Allocation,
    EngineEvaluation,
    FlowSolution,
    RouteInfeasible,
    decompose_flows,
    evaluate_servers,
    od_paths,
    reliability_total,
    route_solve,
    server_loads,
)
from .ioconv import ConversionError, UseCaseOptions, VnRoutingPlan, convert
from .netmodel import DemandSet, PhysicalNetwork

if TYPE_CHECKING:
    from .scenario import Scenario


@dataclass(frozen=True)
class AgentParams:
    alpha: float = 0.2
    gamma: float = 0.9
    epsilon: float = 0.1
    penalty: float = -100.0

    def __post_init__(self) -> None:
        if not 0.0 < self.alpha <= 1.0:
            raise ValueError(f"alpha must be in (0, 1], got {self.alpha}")
        if not 0.0 <= self.gamma < 1.0:
            raise ValueError(f"gamma must be in [0, 1), got {self.gamma}")
        if not 0.0 <= self.epsilon <= 1.0:
            raise ValueError(f"epsilon must be in [0, 1], got {self.epsilon}")


@dataclass(frozen=True)
class Weights:
    link: float = 1.0
    server: float = 1.0
    reliability: float = 1.0

    @classmethod
    def parse(cls, text: str) -> Weights:
        vals = [float(v) if v.strip() not in ("", "-") else 0.0 for v in text.split(",")]
        if len(vals) == 2:
            vals.append(0.0)
        if len(vals) != 3:
            raise ValueError(f"weights need 'link,server[,reliability]', got {text!r}")
        return cls(*vals)

    def as_tuple(self) -> tuple[float, float, float]:
        return (self.link, self.server, self.reliability)


# ---------------------------------------------------------------------------
# Evaluation pipeline
# ---------------------------------------------------------------------------


class _RouteEntry:
    __slots__ = ("flow", "error", "paths")

    def __init__(self, flow: FlowSolution | None, error: str | None):
        self.flow = flow
        self.error = error
        self.paths = None


class Evaluator:
    """Runs every engine on an allocation: servers, I/O conversion, route, reliability.

    Route solutions are memoized on the traffic matrix, so revisited
    allocations cost one dictionary lookup.
    """

    def __init__(
        self,
        net: PhysicalNetwork,
        demands: DemandSet,
        options: UseCaseOptions,
        formulation: str = "source",
        cache_size: int = 4096,
    ):
        self.net = net
        self.demands = demands
        self.options = options
        self.formulation = formulation
        self.cache_size = cache_size
        self._cache: OrderedDict[bytes, _RouteEntry] = OrderedDict()
        self._vm_sizes = demands.vm_sizes
        self._ids_sizes = demands.ids_sizes
        self.route_solves = 0

    def server_utilization(self, alloc: Allocation) -> float:
        return evaluate_servers(self.net, alloc.vm, self._vm_sizes, alloc.ids, self._ids_sizes)

    def loads(self, alloc: Allocation) -> np.ndarray:
        return server_loads(self.net, alloc.vm, self._vm_sizes, alloc.ids, self._ids_sizes)

    def _route(self, D: np.ndarray) -> _RouteEntry:
        key = D.tobytes()
        entry = self._cache.get(key)
        if entry is not None:
            self._cache.move_to_end(key)
            return entry
        self.route_solves += 1
        try:
            entry = _RouteEntry(route_solve(self.net, D, self.formulation), None)
        except RouteInfeasible as exc:
            entry = _RouteEntry(None, f"route: {exc}")
        self._cache[key] = entry
        if len(self._cache) > self.cache_size:
            self._cache.popitem(last=False)
        return entry

    def evaluate(self, alloc: Allocation, reliability: bool | None = None) -> EngineEvaluation:
        """Evaluation values of all engines; ``reliability`` forces/suppresses R_total."""
        if reliability is None:
            reliability = self.options.with_reliability
        u_srv = self.server_utilization(alloc)
        if u_srv == PENALTY_VALUE:
            return EngineEvaluation(float("nan"), PENALTY_VALUE, None, "server capacity exceeded")
        try:
            D, plans = convert(alloc, self.demands.vns, self.demands.ids, self.options, self.net)
        except ConversionError as exc:
            return EngineEvaluation(float("nan"), u_srv, None, f"conversion: {exc}")
        entry = self._route(D)
        if entry.error is not None:
            return EngineEvaluation(PENALTY_VALUE, u_srv, None, entry.error)
        r_total = None
        if reliability:
            r_total = self._reliability(entry, plans)
        return EngineEvaluation(entry.flow.u_link_max, u_srv, r_total)

    def _reliability(self, entry: _RouteEntry, plans: Sequence[VnRoutingPlan]) -> float:
        if entry.paths is None:
            entry.paths = od_paths(entry.flow)
        segments = {p.vn_id: p.segments() for p in plans}
        traffic = {p.vn_id: p.traffic for p in plans}
        paths = decompose_flows(entry.flow, segments, traffic, entry.paths)
        return reliability_total(paths, self.net, traffic)

    def paths(self, alloc: Allocation):
        """Per-VN path set of ``alloc`` (for inspection)."""
        D, plans = convert(alloc, self.demands.vns, self.demands.ids, self.options, self.net)
        entry = self._route(D)
        if entry.error is not None:
            raise RouteInfeasible(entry.error)
        if entry.paths is None:
            entry.paths = od_paths(entry.flow)
        return decompose_flows(
            entry.flow, {p.vn_id: p.segments() for p in plans}, {p.vn_id: p.traffic for p in plans}, entry.paths
        )


def cev(evals: EngineEvaluation, weights: Weights, options: UseCaseOptions) -> float:
    """Weighted sum of (1 - U_link), (1 - U_server) and, with the reliability option, R_total."""
    value = weights.link * (1.0 - evals.u_link) + weights.server * (1.0 - evals.u_server)
    if options.with_reliability:
        if evals.r_total is None:
            raise ValueError("reliability option is on but R_total was not evaluated")
        value += weights.reliability * evals.r_total
    return value


def reward(evals: EngineEvaluation, weights: Weights, options: UseCaseOptions, params: AgentParams) -> float:
    if not evals.satisfied:
        return params.penalty
    return cev(evals, weights, options)


# ---------------------------------------------------------------------------
# Tabular Q-learning
# ---------------------------------------------------------------------------


class QTable:
    """state -> action-value vector; unseen pairs read as 0."""

    def __init__(self, n_actions: int):
        if n_actions < 1:
            raise ValueError("need at least one action")
        self.n_actions = n_actions
        self._q: dict[Hashable, np.ndarray] = {}

    def values(self, state: Hashable) -> np.ndarray:
        row = self._q.get(state)
        return np.zeros(self.n_actions) if row is None else row.copy()

    def __getitem__(self, sa: tuple[Hashable, int]) -> float:
        row = self._q.get(sa[0])
        return 0.0 if row is None else float(row[sa[1]])

    def __setitem__(self, sa: tuple[Hashable, int], value: float) -> None:
        row = self._q.get(sa[0])
        if row is None:
            row = self._q[sa[0]] = np.zeros(self.n_actions)
        row[sa[1]] = value

    def max(self, state: Hashable) -> float:
        row = self._q.get(state)
        return 0.0 if row is None else float(row.max())

    def __len__(self) -> int:
        return len(self._q)

    def all_zero(self) -> bool:
        return all(not row.any() for row in self._q.values())


def state_key(assignment: Sequence[int]) -> int:
    """Stable 64-bit key of a placement vector (VNF i -> server)."""
    raw = np.asarray(assignment, dtype=np.int32).tobytes()
    return int.from_bytes(hashlib.blake2b(raw, digest_size=8).digest(), "little")


def epsilon_greedy(
    q: QTable,
    state: Hashable,
    epsilon: float,
    rng: np.random.Generator,
    allowed: np.ndarray | None = None,
    random_ties: bool = False,
) -> int:
    """Random action with probability ``epsilon``, else argmax Q.

    Ties go to the lowest action index unless ``random_ties``. ``allowed``
    is an optional boolean mask over actions.
    """
    actions = np.arange(q.n_actions) if allowed is None else np.flatnonzero(allowed)
    if actions.size == 0:
        raise ValueError("no allowed actions")
    if rng.random() < epsilon:
        return int(actions[rng.integers(actions.size)])
    vals = q.values(state)[actions]
    if random_ties:
        top = actions[vals == vals.max()]
        return int(top[rng.integers(top.size)]) if top.size > 1 else int(top[0])
    return int(actions[np.argmax(vals)])


def q_update(
    q: QTable, state: Hashable, action: int, r: float, next_state: Hashable, alpha: float, gamma: float
) -> float:
    """One Q-learning step; returns the TD error."""
    delta = r + gamma * q.max(next_state) - q[state, action]
    q[state, action] = q[state, action] + alpha * delta
    return delta


# ---------------------------------------------------------------------------
# Agents
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class CoordinationConfig:
    total_steps: int = 5000
    episode_steps: int = 20
    weights: Weights = field(default_factory=Weights)
    params: AgentParams = field(default_factory=AgentParams)
    learn: bool = True
    restart: str = "best"  # where each control-agent episode starts: best | initial | last
    allow_noop: bool = True  # may a VNF "migrate" to the server it is already on
    random_ties: bool = False

    def __post_init__(self) -> None:
        if self.total_steps < 1 or self.episode_steps < 1:
            raise ValueError("step budgets must be positive")
        if self.restart not in ("best", "initial", "last"):
            raise ValueError(f"unknown restart policy {self.restart!r}")

    def as_random_baseline(self) -> CoordinationConfig:
        """Same budgets and policies with epsilon = 1 and both Q updates skipped."""
        p = self.params
        return replace(self, params=AgentParams(p.alpha, p.gamma, 1.0, p.penalty), learn=False)


@dataclass
class StepRecord:
    agent: str
    vnf: int
    server: int
    reward: float


@dataclass
class CoordinationResult:
    best: Allocation
    best_cev: float
    best_eval: EngineEvaluation
    initial_cev: float
    trajectory: list[float]
    episodes: list[tuple[str, float, int]]
    q_tables: dict[str, QTable]
    steps: int
    seconds: float
    trace: list[StepRecord] | None = None


class InfeasibleStart(ValueError):
    pass


class Coordinator:
    """Holds one coordination run: Q-tables, current/best solutions, step budget."""

    def __init__(
        self,
        net: PhysicalNetwork,
        demands: DemandSet,
        options: UseCaseOptions,
        initial: Allocation,
        config: CoordinationConfig,
        rng: np.random.Generator,
        evaluator: Evaluator | None = None,
        record_trace: bool = False,
    ):
        self.net = net
        self.demands = demands
        self.options = options
        self.config = config
        self.rng = rng
        self.evaluator = evaluator or Evaluator(net, demands, options)
        self.agents = ["vm"] + (["ids"] if options.with_ids and len(demands.ids) else [])
        n_srv = net.n_nodes
        self.q = {g: QTable(n_srv) for g in self.agents}
        self.q_ia = QTable(len(self.agents))
        init_eval = self.evaluator.evaluate(initial)
        if not init_eval.satisfied:
            raise InfeasibleStart(f"initial solution violates constraints: {init_eval.violation}")
        self.initial = initial
        self.initial_cev = cev(init_eval, config.weights, options)
        self.best = initial
        self.best_cev = self.initial_cev
        self.best_eval = init_eval
        self.current = initial
        self.trajectory: list[float] = []
        self.trace: list[StepRecord] | None = [] if record_trace else None
        self._sizes = {"vm": demands.vm_sizes, "ids": demands.ids_sizes}

    # -- control agent ---------------------------------------------------

    def _placement(self, alloc: Allocation, agent: str) -> tuple[int, ...]:
        return alloc.vm if agent == "vm" else alloc.ids

    def migrating_vnf(self, alloc: Allocation, agent: str) -> int:
        """Index of the VNF to move: lowest-id VNF of this type on the most utilized server."""
        util = self.evaluator.loads(alloc) / self.net.capacities
        placed = np.asarray(self._placement(alloc, agent)) - 1
        hosting = np.unique(placed)
        server = hosting[np.argmax(util[hosting])]  # hosting is sorted: ties -> lowest id
        return int(np.flatnonzero(placed == server)[0])

    def control_agent_run(self, agent: str, budget: int) -> tuple[float, int]:
        """Explore up to ``budget`` single-VNF migrations; stop at the first violation.

        Returns the maximum reward seen and the number of steps consumed.
        """
        cfg = self.config
        p = cfg.params
        q = self.q[agent]
        best_r = -np.inf
        for t in range(budget):
            placement = self._placement(self.current, agent)
            state = state_key(placement)
            vnf = self.migrating_vnf(self.current, agent)
            allowed = None
            if not cfg.allow_noop:
                allowed = np.ones(q.n_actions, dtype=bool)
                allowed[placement[vnf] - 1] = False
            action = epsilon_greedy(q, state, p.epsilon, self.rng, allowed, cfg.random_ties)
            nxt = self.current.moved(agent, vnf, action + 1)
            evals = self.evaluator.evaluate(nxt)
            r = reward(evals, cfg.weights, self.options, p)
            if cfg.learn:
                q_update(q, state, action, r, state_key(self._placement(nxt, agent)), p.alpha, p.gamma)
            if r > self.best_cev and evals.satisfied:
                self.best, self.best_cev, self.best_eval = nxt, r, evals
            self.trajectory.append(self.best_cev)
            if self.trace is not None:
                self.trace.append(StepRecord(agent, vnf, action + 1, r))
            best_r = max(best_r, r)
            if not evals.satisfied:
                return best_r, t + 1
            self.current = nxt
        return best_r, budget

    # -- instruction agent ----------------------------------------------

    def run(self) -> CoordinationResult:
        cfg = self.config
        p = cfg.params
        start = time.perf_counter()
        episodes: list[tuple[str, float, int]] = []
        state = int(self.rng.integers(len(self.agents)))
        t = 0
        while t < cfg.total_steps:
            action = epsilon_greedy(self.q_ia, state, p.epsilon, self.rng, random_ties=cfg.random_ties)
            agent = self.agents[action]
            if cfg.restart == "best":
                self.current = self.best
            elif cfg.restart == "initial":
                self.current = self.initial
            r, steps = self.control_agent_run(agent, min(cfg.episode_steps, cfg.total_steps - t))
            if cfg.learn:
                q_update(self.q_ia, state, action, r, action, p.alpha, p.gamma)
            state = action
            episodes.append((agent, r, steps))
            t += steps
        return CoordinationResult(
            best=self.best,
            best_cev=self.best_cev,
            best_eval=self.best_eval,
            initial_cev=self.initial_cev,
            trajectory=self.trajectory,
            episodes=episodes,
            q_tables={"instruction": self.q_ia, **self.q},
            steps=t,
            seconds=time.perf_counter() - start,
            trace=self.trace,
        )


def coordinate(
    scenario: Scenario,
    config: CoordinationConfig,
    seed: int,
    evaluator: Evaluator | None = None,
    record_trace: bool = False,
) -> CoordinationResult:
    """Run the instruction agent on ``scenario`` from its initial solution."""
    coordinator = Coordinator(
        scenario.net,
        scenario.demands,
        scenario.options,
        scenario.initial,
        config,
        np.random.default_rng(seed),
        evaluator=evaluator,
        record_trace=record_trace,
    )
    return coordinator.run()
