"""Storage policies: rule-based, DP, hindsight, and regret accounting."""

import csv

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from lemuq import agents
from lemuq.agents import (
    DP,
    HINDSIGHT,
    RULE,
    AgentRun,
    PricePath,
    StorageSpec,
    build_dp_tables,
    dp_policy,
    hindsight_policy,
    regret_curves,
    rule_based_policy,
)
from lemuq.errors import InfeasibleBoundary, PathMismatch

from . import oracles

# p_cap 0.25 is two steps of a 9-level grid on [0, 1], so every rule-based
# action lands exactly on that grid and dominance checks need no tolerance
CANON = StorageSpec(e_cap=1.0)
NINE = 9


def test_rule_discharges_on_positive_price():
    run = rule_based_policy(CANON, (1.0, 0.0, 0.0, 0.0))
    assert run.setpoints[0] == 0.25
    assert run.soc[0] == 0.5
    assert run.soc[-1] == CANON.e_end
    assert run.profit == 0.25


def test_rule_zero_prices_restores_boundary():
    run = rule_based_policy(CANON, np.zeros(5))
    # zero counts as non-negative: greedy discharges until empty, then the
    # tail charges back up to the required boundary
    assert np.allclose(run.setpoints[:2], 0.25)
    assert run.soc[2] == 0.0
    assert run.soc[-1] == CANON.e_end
    assert run.profit == 0.0


def test_rule_saturates_when_always_charging():
    run = rule_based_policy(CANON, -np.ones(6))
    assert run.soc[2] == CANON.e_cap
    assert np.all(run.setpoints[2:4] == 0.0)
    assert run.soc[-1] == CANON.e_end


def test_rule_infeasible_boundary():
    spec = StorageSpec(e_cap=1.0, p_cap=0.25, e_init=0.0, e_end=1.0)
    with pytest.raises(InfeasibleBoundary):
        rule_based_policy(spec, (1.0, 1.0))
    with pytest.raises(InfeasibleBoundary):
        rule_based_policy(CANON, (1.0,))


def test_dp_zero_prices_stays_put():
    tables = build_dp_tables(CANON, np.zeros((40, 5)), levels=NINE)
    run = dp_policy(CANON, tables, np.zeros(5))
    assert np.all(run.setpoints == 0.0)
    assert run.profit == 0.0


def test_dp_tables_match_bruteforce_bitwise():
    spec = StorageSpec(e_cap=1.0, p_cap=0.3)
    rng = np.random.default_rng(11)
    samples = 3.0 * rng.standard_normal((50, 3))
    tables = build_dp_tables(spec, samples, levels=11)
    assert tables.max_move == 3
    expected = oracles.dp_values_bruteforce(
        tables.grid, tables.q, tables.v_up, tables.v_down,
        tables.max_move, tables.kappa, tables.idx_end,
    )
    assert np.array_equal(tables.values, expected)


def test_dp_price_statistics():
    tables = build_dp_tables(CANON, np.array([[-1.0, 2.0], [3.0, 2.0],
                                              [-4.0, 2.0], [2.0, 2.0]]),
                             levels=NINE)
    assert tables.q[0] == 0.5
    assert tables.v_up[0] == 2.5
    assert tables.v_down[0] == -2.5
    # all-positive column: the empty conditional branch stays at zero
    assert tables.q[1] == 1.0
    assert tables.v_up[1] == 2.0
    assert tables.v_down[1] == 0.0


def test_dp_exploits_predictable_swing():
    # deterministic pattern: flat, deeply negative, deeply positive.  The
    # rule follows signs and wastes the first hour discharging; DP holds
    # back, charges through the dip, and sells the peak.
    pattern = np.array([0.01, -10.0, 10.0])
    samples = np.tile(pattern, (30, 1))
    tables = build_dp_tables(CANON, samples)
    dp_run = dp_policy(CANON, tables, pattern)
    rule_run = rule_based_policy(CANON, pattern)
    hind_run = hindsight_policy(CANON, pattern)
    assert dp_run.profit == pytest.approx(5.0, abs=1e-9)
    assert rule_run.profit == pytest.approx(2.5025, abs=1e-9)
    assert dp_run.profit > rule_run.profit
    assert hind_run.profit == pytest.approx(dp_run.profit, abs=1e-9)


def test_hindsight_zero_prices():
    run = hindsight_policy(CANON, np.zeros(4), levels=NINE)
    assert np.all(run.setpoints == 0.0)
    assert run.profit == 0.0


def test_hindsight_single_spike():
    run = hindsight_policy(CANON, (0.0, 1.0, 0.0, 0.0), levels=NINE)
    assert run.profit == 0.25
    assert run.setpoints[1] == 0.25
    assert run.soc[-1] == CANON.e_end


def test_hindsight_dominates_pathwise():
    rng = np.random.default_rng(5)
    tables = build_dp_tables(CANON, rng.standard_normal((200, 6)), levels=NINE)
    for _ in range(50):
        prices = rng.standard_normal(6)
        hind = hindsight_policy(CANON, prices, levels=NINE).profit
        assert hind >= rule_based_policy(CANON, prices).profit - 1e-12
        assert hind >= dp_policy(CANON, tables, prices).profit - 1e-12


def test_hindsight_infeasible_boundary():
    spec = StorageSpec(e_cap=1.0, p_cap=0.25, e_init=0.0, e_end=1.0)
    with pytest.raises(InfeasibleBoundary):
        hindsight_policy(spec, (1.0, 1.0), levels=NINE)


def test_dp_horizon_mismatch():
    tables = build_dp_tables(CANON, np.zeros((10, 3)), levels=NINE)
    with pytest.raises(PathMismatch):
        dp_policy(CANON, tables, np.zeros(4))


def test_dp_terminal_blowout_is_reported():
    # a realized price large enough to outweigh the terminal penalty drags
    # the SOC off the required boundary; that must surface, not pass
    tables = build_dp_tables(CANON, np.zeros((10, 3)), levels=NINE)
    with pytest.raises(InfeasibleBoundary):
        dp_policy(CANON, tables, (0.0, 0.0, -1e12))


def test_zero_capacity_degenerates_to_idle():
    spec = StorageSpec(e_cap=0.0)
    prices = np.array([3.0, -2.0, 1.0, -1.0])
    tables = build_dp_tables(spec, np.tile(prices, (20, 1)))
    for run in (rule_based_policy(spec, prices),
                dp_policy(spec, tables, prices),
                hindsight_policy(spec, prices)):
        assert np.all(run.setpoints == 0.0)
        assert run.profit == 0.0


def make_runs(prices_per_path, tables):
    runs = {RULE: [], DP: [], HINDSIGHT: []}
    for i, prices in enumerate(prices_per_path):
        path = PricePath(tuple(prices), path_id=i)
        runs[RULE].append(rule_based_policy(CANON, path))
        runs[DP].append(dp_policy(CANON, tables, path))
        runs[HINDSIGHT].append(hindsight_policy(CANON, path, levels=NINE))
    return runs


@pytest.fixture(scope="module")
def regret_setup():
    rng = np.random.default_rng(21)
    tables = build_dp_tables(CANON, rng.standard_normal((200, 5)), levels=NINE)
    runs = make_runs(rng.standard_normal((40, 5)), tables)
    return runs, regret_curves(runs)


def test_regret_hindsight_is_zero(regret_setup):
    _, curves = regret_setup
    assert np.all(curves[HINDSIGHT] == 0.0)


def test_regret_final_nonnegative(regret_setup):
    _, curves = regret_setup
    assert curves[RULE][-1] >= -1e-12
    assert curves[DP][-1] >= -1e-12


def test_regret_path_mismatch_variants(regret_setup):
    runs, _ = regret_setup
    with pytest.raises(PathMismatch):
        regret_curves({RULE: runs[RULE], DP: runs[DP]})
    with pytest.raises(PathMismatch):
        regret_curves({HINDSIGHT: runs[HINDSIGHT], RULE: runs[RULE][:-1]})
    reordered = [runs[RULE][1], runs[RULE][0], *runs[RULE][2:]]
    with pytest.raises(PathMismatch):
        regret_curves({HINDSIGHT: runs[HINDSIGHT], RULE: reordered})
    short = AgentRun(policy=RULE, path_id=0, setpoints=np.zeros(3),
                     soc=np.zeros(4), profit_per_t=np.zeros(3))
    with pytest.raises(PathMismatch):
        regret_curves({HINDSIGHT: runs[HINDSIGHT],
                       RULE: [short, *runs[RULE][1:]]})


@settings(max_examples=60, deadline=None)
@given(
    e_cap=st.floats(min_value=0.5, max_value=4.0, allow_nan=False),
    prices=st.lists(st.floats(min_value=-10.0, max_value=10.0,
                              allow_nan=False), min_size=2, max_size=8),
)
def test_policies_respect_physical_limits(e_cap, prices):
    spec = StorageSpec(e_cap=e_cap)
    tol = 1e-9 * max(e_cap, 1.0)
    tables = build_dp_tables(
        spec, np.random.default_rng(0).standard_normal((30, len(prices))))
    for run in (rule_based_policy(spec, prices),
                dp_policy(spec, tables, prices),
                hindsight_policy(spec, prices)):
        assert np.all(np.abs(run.setpoints) <= spec.p_cap + tol)
        assert np.all((run.soc >= -tol) & (run.soc <= e_cap + tol))
        assert run.soc[0] == pytest.approx(spec.e_init, abs=tol)
        assert run.soc[-1] == pytest.approx(spec.e_end, abs=tol)
        steps = run.soc[:-1] - run.soc[1:]
        assert np.allclose(steps, run.setpoints * spec.dt, atol=tol)


def test_write_agent_runs(tmp_path, regret_setup):
    runs, curves = regret_setup
    flat = [r for policy in sorted(runs) for r in runs[policy]]
    a, b = tmp_path / "a.csv", tmp_path / "b.csv"
    agents.write_agent_runs(flat, a)
    agents.write_agent_runs(flat, b)
    assert a.read_bytes() == b.read_bytes()
    with open(a, newline="") as fh:
        rows = list(csv.reader(fh))
    assert rows[0] == ["path_id", "policy", "t", "p", "soc", "profit_cum"]
    assert len(rows) == 1 + sum(r.horizon for r in flat)

    out = tmp_path / "regret.csv"
    agents.write_regret(curves, out)
    with open(out, newline="") as fh:
        rrows = list(csv.reader(fh))
    assert rrows[0] == ["policy", "t", "avg_cum_regret"]
    assert [r[0] for r in rrows[1:6]] == [DP] * 5
