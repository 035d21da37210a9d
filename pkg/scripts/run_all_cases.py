"""Clear the three bundled cases and print each one's headline result.

case1: uncongested feeder -- day-ahead prices are flat across buses and
       pin to the slack marginal cost; storage agents' regret ordering.
case2: a tight line -- prices split across the congestion and the price
       spread (variance) widens on the downstream side.
case3: a binding voltage cone -- the Monte-Carlo violation rate stays
       inside the chance-constraint risk budget, with and without
       storage reacting to delta-prices.

Pass --artifacts to additionally run the full pipeline per case and
write the CSV outputs under --out.
"""

import argparse
import math
import time

import numpy as np

from lemuq import agents, ccopf, market, pce, scenario
from lemuq.acflow import validate_solution
from lemuq.ccopf import binding, feasibility_report


def clear(config):
    problem = ccopf.CcOpfProblem(
        network=config.network(),
        basis=pce.build_basis(config.germ),
        flexgens=list(config.flexgens),
        injections=list(config.injections),
        epsilon=config.epsilon,
        gamma_mode=config.gamma_mode,
        horizon=config.horizon,
    )
    solution = ccopf.solve(problem)
    return problem, solution, market.extract_plmps(solution)


def show_case1(config):
    problem, solution, m = clear(config)
    spreads, kkt_errs = [], []
    slack = problem.slack_gen
    for t in range(config.horizon):
        prices = np.array([m.plmp(b, t).day_ahead_active for b in m.bus_ids])
        spreads.append(prices.max() - prices.min())
        kkt_errs.append(abs(prices[0] - (slack.c + 2 * slack.c1 * solution.P0[t, 0])))
    print(f"  binding constraints: {len(binding(feasibility_report(solution, problem)))}")
    print(f"  max day-ahead spread across buses: {max(spreads):.2e}")
    print(f"  max |price - slack marginal cost|: {max(kkt_errs):.2e}")

    paths = market.sample_germ_paths(m, 500, seed=404)
    for agent in config.agents:
        delta = market.delta_price_paths(m, agent.bus, paths)
        tables = agents.build_dp_tables(agent.storage, delta, levels=agent.levels)
        runs = {pol: [] for pol in (agents.RULE, agents.DP, agents.HINDSIGHT)}
        for i in range(len(paths)):
            path = agents.PricePath(tuple(delta[i]), path_id=i)
            runs[agents.RULE].append(agents.rule_based_policy(agent.storage, path))
            runs[agents.DP].append(agents.dp_policy(agent.storage, tables, path))
            runs[agents.HINDSIGHT].append(
                agents.hindsight_policy(agent.storage, path, levels=agent.levels))
        curves = agents.regret_curves(runs)
        print(f"  bus {agent.bus}: final avg regret "
              f"rule {curves[agents.RULE][-1]:.4f}, dp {curves[agents.DP][-1]:.4f}")


def show_case2(config):
    problem, solution, m = clear(config)
    report = feasibility_report(solution, problem)
    bound = binding(report, family="branch_p_up")
    hours = sorted({row.t for row in bound})
    print(f"  branch_p_up binding on element(s) {sorted({row.element for row in bound})} "
          f"at t={hours}")
    t = hours[0]
    da9 = m.plmp(9, t).day_ahead_active
    da1 = m.plmp(1, t).day_ahead_active
    lam = solution.lam[t]
    var9 = float(lam[m.network.bus_index[9], 1:] @ lam[m.network.bus_index[9], 1:])
    var1 = float(lam[m.network.bus_index[1], 1:] @ lam[m.network.bus_index[1], 1:])
    print(f"  t={t}: day-ahead bus9 {da9:.3f} vs bus1 {da1:.3f} (split {da9 - da1:+.3f})")
    print(f"  t={t}: price variance bus9 {var9:.2f} vs bus1 {var1:.2f}")


def show_case3(config):
    problem, solution, m = clear(config)
    rows = binding(feasibility_report(solution, problem), family="volt_up")
    hours = sorted({row.t for row in rows})
    print(f"  volt_up binding at bus(es) {sorted({row.element for row in rows})} "
          f"at t={hours}")

    basis = problem.basis
    net = problem.network
    idx9 = net.bus_index[9]
    psi = basis.eval_batch(pce.sample_germ(basis.germ, 100_000, seed=2024))
    rate = float(np.mean(psi @ solution.V[hours[0], idx9] > net.v_max_sq[idx9]))
    bound = config.epsilon + 3 * math.sqrt(config.epsilon * (1 - config.epsilon) / 1e5)
    print(f"  MC violation rate at bus 9, t={hours[0]}: {rate:.4f} "
          f"(risk budget {config.epsilon}, MC bound {bound:.4f})")

    agent = next(a for a in config.agents if a.bus == 9)
    paths = market.sample_germ_paths(m, 1000, seed=77)
    delta = market.delta_price_paths(m, 9, paths)
    tables = agents.build_dp_tables(agent.storage, delta, levels=agent.levels)
    setpoints = np.array([
        agents.dp_policy(agent.storage, tables,
                         agents.PricePath(tuple(delta[i]), path_id=i)).setpoints
        for i in range(len(paths))
    ])
    stats = validate_solution(m, len(paths), overlays={9: setpoints},
                              germ_paths=paths, timesteps=hours)
    worst = max(stats.rate(t, 9, side="upper") for t in hours)
    print(f"  AC violation rate at bus 9 with DP storage overlay: {worst:.4f}")


def main():
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--artifacts", action="store_true",
                        help="also run the full pipeline and write CSVs")
    parser.add_argument("--out", default="out",
                        help="artifact root when --artifacts is given")
    args = parser.parse_args()

    shows = {"case1": show_case1, "case2": show_case2, "case3": show_case3}
    for name, show in shows.items():
        config = scenario.load_bundled(name)
        print(f"{name}: {config.description or 'bundled case'}")
        t0 = time.perf_counter()
        show(config)
        print(f"  ({time.perf_counter() - t0:.1f} s)")
        if args.artifacts:
            report = scenario.run(config, out_dir=f"{args.out}/{name}")
            print(f"  wrote {len(report.manifest)} files to {report.out_dir}")


if __name__ == "__main__":
    main()
