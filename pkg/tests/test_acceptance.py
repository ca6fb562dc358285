"""Acceptance criteria, one test each; every test reports a PASS/FAIL line.

The lines are collected by ``report`` and printed in the terminal summary
(see conftest.py), so they appear in ``pytest -v`` output whether or not
the assertion holds.
"""
import itertools
import time

import numpy as np

from nfvcoord.coord import (
    AgentParams,
    CoordinationConfig,
    Coordinator,
    Weights,
    coordinate,
    q_update,
    QTable,
)
from nfvcoord.engines import Allocation, Path, RouteInfeasible, path_reliability, reliability_total, route_solve, vn_reliability
from nfvcoord.harness import ExperimentConfig, brute_force_oracle, fixed_scenario, run
from nfvcoord.ioconv import UseCaseOptions, convert, placement_matrix, vm_traffic_matrix
from nfvcoord.lpcore import LinearProgram, LpStatus, solve
from nfvcoord.netmodel import DemandSet, VnDemand, generate_demands, internet2, load_topology
from nfvcoord.scenario import UTILIZATION_BAND, Rejected, ScaleParams, assemble, build, case_params
from oracles import grid_min_max_utilization, vertex_enumeration

RESULTS: dict[int, str] = {}


def report(n: int, ok: bool, detail: str) -> None:
    RESULTS[n] = f"criterion {n:2d}: {'PASS' if ok else 'FAIL'}  {detail}"
    print(RESULTS[n])


# -- 1 ------------------------------------------------------------------------


def test_c01_lp_core_matches_vertex_enumeration():
    rng = np.random.default_rng(2024)
    worst, solver_time, n_infeasible = 0.0, 0.0, 0
    mismatches = []
    for k in range(50):
        n, m = int(rng.integers(1, 9)), int(rng.integers(1, 7))
        c = rng.normal(size=n)
        A = rng.normal(size=(m, n))
        rel = rng.choice(["<=", ">=", "=="], size=m, p=[0.6, 0.25, 0.15])
        x0 = rng.uniform(0, 2, size=n)
        slack = np.where(rel == "<=", 0.5, np.where(rel == ">=", -0.5, 0.0))
        b = A @ x0 + slack * (rng.random(m) < 0.9) - 3.0 * (rng.random(m) < 0.1)
        lo, hi = np.where(rng.random(n) < 0.3, -1.0, 0.0), np.full(n, 3.0)
        lp = LinearProgram(c, A, tuple(rel), b, lo, hi)
        t0 = time.perf_counter()
        sol = solve(lp)
        solver_time += time.perf_counter() - t0
        ref = vertex_enumeration(c, A, rel, b, lo, hi)
        if ref is None:
            n_infeasible += 1
            if sol.status is not LpStatus.INFEASIBLE:
                mismatches.append(k)
            continue
        if not sol.optimal:
            mismatches.append(k)
            continue
        worst = max(worst, abs(sol.objective - ref[0]))
    ok = not mismatches and worst <= 1e-6 and solver_time < 5.0
    report(1, ok, f"50 LPs ({n_infeasible} infeasible), max |obj - oracle| = {worst:.2e}, solver time {solver_time:.2f} s")
    assert ok, f"mismatched LPs {mismatches}"


# -- 2 ------------------------------------------------------------------------


def _connected_graphs():
    """Connected simple graphs on 2-4 nodes, one per isomorphism class."""
    out = []
    for n in (2, 3, 4):
        pairs = list(itertools.combinations(range(1, n + 1), 2))
        seen = set()
        for r in range(n - 1, len(pairs) + 1):
            for edges in itertools.combinations(pairs, r):
                canon = min(
                    tuple(sorted(tuple(sorted((p[a - 1], p[b - 1]))) for a, b in edges))
                    for p in itertools.permutations(range(1, n + 1))
                )
                if canon in seen:
                    continue
                adj = {i: set() for i in range(1, n + 1)}
                for a, b in edges:
                    adj[a].add(b)
                    adj[b].add(a)
                stack, reach = [1], {1}
                while stack:
                    for v in adj[stack.pop()] - reach:
                        reach.add(v)
                        stack.append(v)
                if len(reach) == n:
                    seen.add(canon)
                    out.append((n, edges))
    return out


def _net(n, edges, caps):
    text = "[nodes]\n" + "".join(f"{i} n{i}\n" for i in range(1, n + 1))
    text += "[edges]\n" + "".join(f"{a} {b} {c}\n" for (a, b), c in zip(edges, caps))
    text += "[servers]\n" + "".join(f"{i} 1\n" for i in range(1, n + 1))
    return load_topology(text)


def test_c02_route_engine_matches_grid_oracle():
    rng = np.random.default_rng(5)
    graphs = _connected_graphs()
    assert len(graphs) == 9
    instances = []
    for n, edges in graphs:
        pairs = [(p, q) for p in range(1, n + 1) for q in range(1, n + 1) if p != q]
        for p, q in pairs:
            instances.append((n, edges, [1.0] * len(edges), [(p, q, 1.0)]))
        for _ in range(6):
            caps = rng.choice([1.0, 2.0, 3.0], size=len(edges)).tolist()
            chosen = rng.choice(len(pairs), size=2, replace=False)
            dem = [(*pairs[i], float(np.round(rng.uniform(0.2, 1.0), 2))) for i in chosen]
            instances.append((n, edges, caps, dem))
    worst_gap, worst_res, infeasible, failures = 0.0, 0.0, 0, []
    for n, edges, caps, dem in instances:
        net = _net(n, edges, caps)
        D = np.zeros((n, n))
        for p, q, t in dem:
            D[p - 1, q - 1] += t
        ref = grid_min_max_utilization(net, dem)
        try:
            sol = route_solve(net, D, "pair")
        except RouteInfeasible:
            infeasible += 1
            if ref <= 1.0:
                failures.append((edges, dem, "infeasible"))
            continue
        # the reported optimum must be what the returned flows actually load
        peak = float((sol.link_loads() / np.asarray(net.link_capacity, float)).max())
        gap = abs(sol.u_link_max - ref)
        worst_gap = max(worst_gap, gap)
        worst_res = max(worst_res, sol.conservation_residual())
        if gap > 0.01 or sol.u_link_max > ref + 1e-9 or abs(peak - sol.u_link_max) > 1e-7:
            failures.append((edges, dem, sol.u_link_max, ref))
    ok = not failures and worst_res < 1e-7
    report(
        2,
        ok,
        f"{len(instances)} instances on 9 topologies ({infeasible} over capacity), "
        f"max |U - grid| = {worst_gap:.4f}, max conservation residual = {worst_res:.1e}",
    )
    assert ok, failures[:5]


# -- 3 ------------------------------------------------------------------------


def test_c03_reliability_arithmetic():
    net = internet2()
    r_vn = vn_reliability(net, [Path((6, 7), 1.0)])
    two = load_topology("[nodes]\n1 a\n2 b\n[edges]\n1 2 1 0.5\n[servers]\n1 1\n2 1")
    r_total = reliability_total({1: [Path((1,), 1.0)], 2: [Path((1, 2), 1.0)]}, two, {1: 1.0, 2: 3.0})
    ok = r_vn == 0.45 and abs(r_total - 0.625) < 1e-12 and path_reliability(net, Path((6, 9), 1.0)) == 0.45
    report(3, ok, f"R_VN over link 6-7 = {r_vn!r}, weighted R_total = {r_total!r}")
    assert ok


# -- 4 ------------------------------------------------------------------------


def test_c04_penalty_and_episode_end():
    net = load_topology("[nodes]\n1 a\n2 b\n[edges]\n1 2 2\n[servers]\n1 2\n2 2")
    dem = DemandSet((VnDemand(1, 1, 0.5, client=1), VnDemand(2, 2, 0.5, client=1)), ())
    cfg = CoordinationConfig(total_steps=20, params=AgentParams(epsilon=0.0))
    co = Coordinator(net, dem, UseCaseOptions(False, False, True), Allocation((1, 2)), cfg, np.random.default_rng(0))
    r, steps = co.control_agent_run("vm", 20)
    ok = r == -100.0 and steps == 1
    report(4, ok, f"overload reward = {r}, episode length = {steps}")
    assert ok


# -- 5 ------------------------------------------------------------------------


def test_c05_q_learning_converges_on_toy_mdp():
    nxt = {(0, 0): 1, (0, 1): 2, (1, 0): 2, (1, 1): 0, (2, 0): 0, (2, 1): 2}
    rew = {(0, 0): 1.0, (0, 1): 0.0, (1, 0): 2.0, (1, 1): -1.0, (2, 0): 0.5, (2, 1): 1.0}
    qstar = np.zeros((3, 2))
    for _ in range(2000):
        qstar = np.array([[rew[s, a] + 0.9 * qstar[nxt[s, a]].max() for a in range(2)] for s in range(3)])
    t0 = time.perf_counter()
    q = QTable(2)
    for i in range(10_000):
        s, a = divmod(i % 6, 2)
        q_update(q, s, a, rew[s, a], nxt[s, a], 0.2, 0.9)
    elapsed = time.perf_counter() - t0
    err = float(np.max(np.abs(np.array([q.values(s) for s in range(3)]) - qstar)))
    ok = err < 0.01 and elapsed < 1.0
    report(5, ok, f"max |Q - Q*| = {err:.2e} after 10000 updates in {elapsed:.3f} s")
    assert ok


# -- 6 ------------------------------------------------------------------------


def test_c06_best_cev_trajectory_is_monotone():
    sc = build(1, 20, 0)
    bad = []
    for seed in range(20):
        res = coordinate(sc, CoordinationConfig(total_steps=300), seed=seed)
        traj = np.array(res.trajectory)
        if np.any(np.diff(traj) < 0) or traj[0] < res.initial_cev:
            bad.append(seed)
    ok = not bad
    report(6, ok, f"20 seeded runs, {len(bad)} with a decreasing best-CEV trajectory")
    assert ok


# -- 7 ------------------------------------------------------------------------


def test_c07_rl_beats_random():
    t0 = time.perf_counter()
    rl = run(ExperimentConfig(case=1, n_vn=50, seeds=list(range(10)), steps=5000, mode="rl"))
    rnd = run(ExperimentConfig(case=1, n_vn=50, seeds=list(range(10)), steps=5000, mode="random"))
    elapsed = time.perf_counter() - t0
    med_rl = float(np.median([r.best_cev for r in rl]))
    med_rnd = float(np.median([r.best_cev for r in rnd]))
    gain = float(np.median([r.best_cev - r.initial_cev for r in rl]))
    ok = med_rl >= med_rnd and gain > 0.05 and elapsed < 600
    report(
        7,
        ok,
        f"median best CEV rl {med_rl:.4f} vs random {med_rnd:.4f}, median rl gain {gain:.4f}, {elapsed:.0f} s",
    )
    assert ok


# -- 8 ------------------------------------------------------------------------

# Four nodes, ring plus one chord. Servers hold two of the largest VMs.
ORACLE_TOPOLOGY = """
[nodes]
1 a
2 b
3 c
4 d
[edges]
1 2 1.0
2 3 1.0
3 4 1.0
4 1 1.0
1 3 1.0
[servers]
1 16
2 16
3 16
4 16
"""


def oracle_instances(count=10):
    net = load_topology(ORACLE_TOPOLOGY)
    case = case_params(12)
    out, seed = [], 0
    while len(out) < count:
        vns, ids = generate_demands(ScaleParams(3, (16, 16), 1.0), case, seed, net.n_nodes)
        try:
            out.append(assemble(case, net, DemandSet(tuple(vns), tuple(ids)), seed))
        except Rejected:
            pass
        seed += 1
    return out


def test_c08_rl_close_to_brute_force_oracle():
    t0 = time.perf_counter()
    hits, gaps = 0, []
    for sc in oracle_instances():
        _, best = brute_force_oracle(sc, Weights())
        res = coordinate(sc, CoordinationConfig(total_steps=20_000), seed=sc.seed)
        assert res.best_cev <= best + 1e-9  # oracle dominance
        gaps.append((best - res.best_cev) / abs(best))
        hits += res.best_cev >= best - 0.05 * abs(best)
    elapsed = time.perf_counter() - t0
    ok = hits >= 6 and elapsed < 300
    report(8, ok, f"{hits}/10 seeds within 5% of the oracle (gaps {np.round(gaps, 3).tolist()}), {elapsed:.0f} s")
    assert ok


# -- 9 ------------------------------------------------------------------------


def test_c09_conversion_equals_matrix_product():
    rng = np.random.default_rng(9)
    net = internet2()
    opts = UseCaseOptions(False, False, False)
    mismatches = 0
    for _ in range(100):
        n = int(rng.integers(2, 30))
        peers = [(k - 1 + int(rng.integers(1, n))) % n + 1 for k in range(1, n + 1)]
        dem = [VnDemand(k, 3, float(rng.integers(0, 1024)) / 1024, None, peers[k - 1]) for k in range(1, n + 1)]
        servers = tuple(int(s) for s in rng.integers(1, net.n_nodes + 1, size=n))
        D, _ = convert(Allocation(servers), dem, (), opts, net)
        X = placement_matrix(servers, net.n_nodes)
        ref = X.T @ vm_traffic_matrix(dem) @ X
        np.fill_diagonal(ref, 0.0)
        mismatches += not np.array_equal(D, ref)
    ok = mismatches == 0
    report(9, ok, f"100 Case #12 instances, {mismatches} differ from the placement-matrix product")
    assert ok


# -- 10 -----------------------------------------------------------------------


def test_c10_weight_sweep():
    seeds = list(range(5))
    server = run(ExperimentConfig(case=4, n_vn=50, seeds=seeds, steps=5000, theta=(0.0, 10.0, 0.0)))
    link = run(ExperimentConfig(case=4, n_vn=50, seeds=seeds, steps=5000, theta=(10.0, 0.0, 0.0)))
    u_server = float(np.median([r.u_server for r in server]))
    u_link_run = float(np.median([r.u_server for r in link]))
    all_ok = all(0 <= r.u_server <= 1 and 0 <= r.u_link <= 1 for r in server + link)
    ok = u_server <= u_link_run and all_ok
    report(
        10,
        ok,
        f"median server utilization {u_server:.4f} (server weight) vs {u_link_run:.4f} (link weight), "
        f"all constraints satisfied: {all_ok}",
    )
    assert ok


# -- 11 -----------------------------------------------------------------------


def test_c11_calibration_band():
    accepted, rejected, outside = 0, 0, []
    for case_id in range(1, 13):
        for n_vn in (20, 50):
            for seed in range(5):
                try:
                    sc = build(case_id, n_vn, seed)
                except Rejected:
                    rejected += 1
                    continue
                accepted += 1
                if not UTILIZATION_BAND[0] <= sc.utilization <= UTILIZATION_BAND[1]:
                    outside.append((case_id, n_vn, seed, sc.utilization))
    ok = accepted > 0 and not outside
    report(11, ok, f"{accepted} accepted scenarios ({rejected} rejected), {len(outside)} outside [0.79, 0.81]")
    assert ok


# -- 12 -----------------------------------------------------------------------


def test_c12_all_cases_run():
    done, errors = [], []
    for case_id in range(1, 13):
        try:
            sc = fixed_scenario(case_id, 20, 0)
            res = coordinate(sc, CoordinationConfig(total_steps=1000), seed=0)
            assert res.steps == 1000
            done.append(case_id)
        except Exception as exc:  # noqa: BLE001 - any error fails the smoke suite
            errors.append((case_id, repr(exc)))
    ok = len(done) == 12
    report(12, ok, f"{len(done)}/12 cases built and completed 1000 steps at N_VN=20")
    assert ok, errors
