"""Storage prosumers arbitraging the delta-price.

Sign convention throughout: positive setpoint p = discharge (sell to the
grid), so energy evolves as E_{t+1} = E_t - p_t*dt and per-period profit
is p_t * price_t * dt.  Charging when the delta-price is negative is then
also profitable (paid to consume).

Three policies over a fixed horizon with boundary energies E_init/E_end:

* rule-based: greedy on the current price sign; the second-to-last hour
  corrects the state of charge so the final hour can restore E_end; the
  final hour moves exactly to E_end.
* DP: backward value recursion on a discretized SOC grid where each
  period's price is abstracted to (probability of a positive delta-price,
  conditional mean up, conditional mean down); acting in a receding
  horizon with the realized price against the expected continuation.
* hindsight: exact optimum on the realized path over the same grid, the
  regret baseline.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

from .errors import InfeasibleBoundary, PathMismatch

RULE = "rule"
DP = "dp"
HINDSIGHT = "hindsight"


@dataclass(frozen=True)
class StorageSpec:
    """Battery parameters; defaults follow the 0.25 C-rating, half-full
    boundary convention."""

    e_cap: float
    p_cap: float | None = None
    e_init: float | None = None
    e_end: float | None = None
    dt: float = 1.0

    def __post_init__(self):
        if self.e_cap < 0:
            raise ValueError("e_cap must be >= 0")
        if self.p_cap is None:
            object.__setattr__(self, "p_cap", 0.25 * self.e_cap)
        if self.e_init is None:
            object.__setattr__(self, "e_init", 0.5 * self.e_cap)
        if self.e_end is None:
            object.__setattr__(self, "e_end", 0.5 * self.e_cap)
        if not 0.0 <= self.e_init <= self.e_cap or not 0.0 <= self.e_end <= self.e_cap:
            raise ValueError("boundary energies must lie in [0, e_cap]")
        if self.p_cap < 0 or self.dt <= 0:
            raise ValueError("p_cap must be >= 0 and dt > 0")


@dataclass(frozen=True)
class PricePath:
    """Realized delta-prices over the horizon at the agent's bus."""

    prices: tuple[float, ...]
    path_id: int = 0

    def __post_init__(self):
        object.__setattr__(self, "prices", tuple(float(v) for v in self.prices))


def _as_path(price_path) -> PricePath:
    if isinstance(price_path, PricePath):
        return price_path
    return PricePath(tuple(np.asarray(price_path, dtype=float)))


@dataclass
class AgentRun:
    """One policy evaluated on one price path."""

    policy: str
    path_id: int
    setpoints: np.ndarray
    soc: np.ndarray  # length T+1, soc[0] = E_init
    profit_per_t: np.ndarray

    @property
    def profit(self) -> float:
        return float(self.profit_per_t.sum())

    @property
    def horizon(self) -> int:
        return len(self.setpoints)


def _finish_run(policy: str, path: PricePath, spec: StorageSpec,
                setpoints: list[float], soc: list[float]) -> AgentRun:
    p = np.asarray(setpoints)
    run = AgentRun(
        policy=policy,
        path_id=path.path_id,
        setpoints=p,
        soc=np.asarray(soc),
        profit_per_t=p * np.asarray(path.prices) * spec.dt,
    )
    tol = 1e-9 * max(spec.e_cap, 1.0)
    assert np.all(np.abs(run.setpoints) <= spec.p_cap + tol)
    assert np.all((run.soc >= -tol) & (run.soc <= spec.e_cap + tol))
    return run


def rule_based_policy(spec: StorageSpec, price_path) -> AgentRun:
    """Greedy sign-following with a boundary-restoring tail.

    Hours up to T-2 discharge as hard as the SOC allows when the price is
    >= 0, else charge as hard as headroom allows.  Hour T-1 forces a full
    charge/discharge when the SOC strayed more than p_cap*dt from E_init,
    otherwise acts greedily with magnitude clipped so E_end stays within
    one period's reach.  The final hour moves exactly to E_end.
    """
    path = _as_path(price_path)
    prices = path.prices
    T = len(prices)
    if T < 2:
        raise InfeasibleBoundary("need at least 2 periods for the boundary tail")
    dt, pc = spec.dt, spec.p_cap
    E = spec.e_init
    setpoints, soc = [], [E]

    def greedy(E: float, price: float) -> float:
        if price >= 0.0:
            return min(E / dt, pc)
        return -min((spec.e_cap - E) / dt, pc)

    for t in range(T):
        if t < T - 2:
            p = greedy(E, prices[t])
        elif t == T - 2:
            if E < spec.e_init - pc * dt:
                p = -min(pc, (spec.e_cap - E) / dt)  # forced charge
            elif E > spec.e_init + pc * dt:
                p = min(pc, E / dt)  # forced discharge
            else:
                # greedy, but keep E_end reachable by the final period
                if prices[t] >= 0.0:
                    p = max(0.0, min(E / dt, pc, (E - (spec.e_end - pc * dt)) / dt))
                else:
                    p = -max(0.0, min((spec.e_cap - E) / dt, pc,
                                      (spec.e_end + pc * dt - E) / dt))
        else:
            p = (E - spec.e_end) / dt
            if abs(p) > pc + 1e-9 * max(spec.e_cap, 1.0):
                raise InfeasibleBoundary(
                    f"boundary energy {spec.e_end} unreachable from {E} in one period"
                )
        E = E - p * dt
        setpoints.append(p)
        soc.append(E)
    return _finish_run(RULE, path, spec, setpoints, soc)


@dataclass
class DpTables:
    """Value tables over a uniform SOC grid.

    moves index the grid: action m means discharging m grid steps worth of
    energy over one period (negative = charge).  values has shape
    (T+1, levels); values[T] is the terminal penalty row.
    """

    spec: StorageSpec
    grid: np.ndarray
    q: np.ndarray
    v_up: np.ndarray
    v_down: np.ndarray
    values: np.ndarray
    max_move: int
    kappa: float
    idx_init: int = field(init=False)
    idx_end: int = field(init=False)

    def __post_init__(self):
        self.idx_init = _grid_index(self.spec.e_init, self.grid)
        self.idx_end = _grid_index(self.spec.e_end, self.grid)

    @property
    def levels(self) -> int:
        return len(self.grid)

    @property
    def delta(self) -> float:
        return self.grid[1] - self.grid[0] if self.levels > 1 else 0.0

    def actions(self, state_index: int) -> np.ndarray:
        """Feasible discharge powers from a grid state."""
        m = self.feasible_moves(state_index)
        return m * self.delta / self.spec.dt

    def feasible_moves(self, state_index: int) -> np.ndarray:
        lo = max(-self.max_move, state_index - (self.levels - 1))
        hi = min(self.max_move, state_index)
        return np.arange(lo, hi + 1)


def _grid_index(energy: float, grid: np.ndarray) -> int:
    if len(grid) == 1 or grid[-1] == grid[0]:
        if abs(energy - grid[0]) > 1e-12:
            raise ValueError(f"energy {energy} is not a grid level")
        return 0
    delta = grid[1] - grid[0]
    idx = int(round(energy / delta))
    if not 0 <= idx < len(grid) or abs(idx * delta - energy) > 1e-9 * max(grid[-1], 1.0):
        raise ValueError(f"energy {energy} is not a grid level")
    return idx


def _branch_values(v_next: np.ndarray, price: float, delta: float,
                   max_move: int) -> np.ndarray:
    """max over moves of (move*delta*price + v_next[state - move]), per state."""
    S = len(v_next)
    best = np.full(S, -np.inf)
    for m in range(-max_move, max_move + 1):
        gain = m * delta * price
        if m >= 0:
            np.maximum(best[m:], gain + v_next[: S - m], out=best[m:])
        else:
            np.maximum(best[:m], gain + v_next[-m:], out=best[:m])
    return best


def build_dp_tables(spec: StorageSpec, delta_samples, levels: int = 101,
                    kappa: float = 1e6) -> DpTables:
    """Estimate the per-period price statistics and run the backward pass.

    delta_samples: (n, T) array (or sequence of T sample vectors) of
    delta-price draws per period, e.g. from the day-ahead sampling of the
    price distributions.  An empty conditional branch (no positive or no
    non-positive samples) contributes value 0 through its weight.
    """
    if isinstance(delta_samples, np.ndarray) and delta_samples.ndim == 2:
        per_t = [delta_samples[:, t] for t in range(delta_samples.shape[1])]
    else:
        per_t = [np.asarray(col, dtype=float) for col in delta_samples]
    T = len(per_t)

    q = np.empty(T)
    v_up = np.zeros(T)
    v_down = np.zeros(T)
    for t, col in enumerate(per_t):
        pos = col > 0.0
        q[t] = pos.mean()
        if pos.any():
            v_up[t] = col[pos].mean()
        if (~pos).any():
            v_down[t] = col[~pos].mean()

    grid = np.linspace(0.0, spec.e_cap, levels)
    delta = grid[1] - grid[0] if levels > 1 else 0.0
    max_move = int(np.floor(spec.p_cap * spec.dt / delta + 1e-9)) if delta > 0 else 0

    values = np.empty((T + 1, levels))
    terminal = np.full(levels, -kappa)
    terminal[_grid_index(spec.e_end, grid)] = 0.0
    values[T] = terminal
    for t in range(T - 1, -1, -1):
        up = _branch_values(values[t + 1], v_up[t], delta, max_move)
        down = _branch_values(values[t + 1], v_down[t], delta, max_move)
        values[t] = q[t] * up + (1.0 - q[t]) * down
    return DpTables(
        spec=spec, grid=grid, q=q, v_up=v_up, v_down=v_down,
        values=values, max_move=max_move, kappa=kappa,
    )


def _act_greedily(v_next: np.ndarray, idx: int, price: float, delta: float,
                  max_move: int, dt: float) -> tuple[int, float]:
    """Best move at a state given the realized price; ties pick least |p|."""
    S = len(v_next)
    lo = max(-max_move, idx - (S - 1))
    hi = min(max_move, idx)
    moves = np.arange(lo, hi + 1)
    vals = moves * delta * price + v_next[idx - moves]
    best = vals.max()
    winners = moves[vals == best]
    m = int(winners[np.abs(winners).argmin()])
    return m, m * delta / dt


def dp_policy(spec: StorageSpec, tables: DpTables, price_path) -> AgentRun:
    """Receding-horizon action using realized prices against the tables.

    The value tables depend only on the day-ahead distributions, so the
    re-solve at every period reproduces the same arrays; they are computed
    once and reused.
    """
    path = _as_path(price_path)
    prices = path.prices
    T = len(prices)
    if tables.values.shape[0] != T + 1:
        raise PathMismatch(f"tables cover {tables.values.shape[0] - 1} periods, path has {T}")
    idx = tables.idx_init
    delta = tables.delta
    setpoints, soc = [], [tables.grid[idx]]
    for t in range(T):
        m, p = _act_greedily(tables.values[t + 1], idx, prices[t], delta,
                             tables.max_move, spec.dt)
        idx -= m
        setpoints.append(p)
        soc.append(tables.grid[idx])
    if idx != tables.idx_end:
        raise InfeasibleBoundary(
            f"terminal SOC level {tables.grid[idx]} != required {spec.e_end}"
        )
    return _finish_run(DP, path, spec, setpoints, soc)


def hindsight_policy(spec: StorageSpec, price_path, levels: int = 101) -> AgentRun:
    """Perfect-foresight optimum on the same grid (the regret baseline)."""
    path = _as_path(price_path)
    prices = path.prices
    T = len(prices)
    grid = np.linspace(0.0, spec.e_cap, levels)
    delta = grid[1] - grid[0] if levels > 1 else 0.0
    max_move = int(np.floor(spec.p_cap * spec.dt / delta + 1e-9)) if delta > 0 else 0

    values = np.empty((T + 1, levels))
    terminal = np.full(levels, -np.inf)
    terminal[_grid_index(spec.e_end, grid)] = 0.0
    values[T] = terminal
    for t in range(T - 1, -1, -1):
        values[t] = _branch_values(values[t + 1], prices[t], delta, max_move)

    idx = _grid_index(spec.e_init, grid)
    if not np.isfinite(values[0][idx]):
        raise InfeasibleBoundary("terminal energy unreachable from e_init")
    setpoints, soc = [], [grid[idx]]
    for t in range(T):
        m, p = _act_greedily(values[t + 1], idx, prices[t], delta, max_move, spec.dt)
        idx -= m
        setpoints.append(p)
        soc.append(grid[idx])
    return _finish_run(HINDSIGHT, path, spec, setpoints, soc)


def regret_curves(runs_by_policy: dict[str, list[AgentRun]]) -> dict[str, np.ndarray]:
    """Average cumulative regret per period against the hindsight runs.

    All policies must cover the same paths in the same order.
    """
    if HINDSIGHT not in runs_by_policy:
        raise PathMismatch("regret needs hindsight runs as the baseline")
    base = runs_by_policy[HINDSIGHT]
    n = len(base)
    ids = [r.path_id for r in base]
    T = base[0].horizon if n else 0
    curves: dict[str, np.ndarray] = {}
    for policy, runs in runs_by_policy.items():
        if len(runs) != n or [r.path_id for r in runs] != ids:
            raise PathMismatch(f"policy {policy!r} covers different paths than hindsight")
        if any(r.horizon != T for r in runs):
            raise PathMismatch(f"policy {policy!r} has runs of differing horizon")
        gaps = np.stack(
            [np.cumsum(b.profit_per_t - r.profit_per_t) for b, r in zip(base, runs)]
        )
        curves[policy] = gaps.mean(axis=0)
    return curves


def write_agent_runs(runs: list[AgentRun], path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["path_id", "policy", "t", "p", "soc", "profit_cum"])
        for run in runs:
            cum = np.cumsum(run.profit_per_t)
            for t in range(run.horizon):
                w.writerow([
                    run.path_id, run.policy, t,
                    repr(float(run.setpoints[t])),
                    repr(float(run.soc[t + 1])),
                    repr(float(cum[t])),
                ])


def write_regret(curves: dict[str, np.ndarray], path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["policy", "t", "avg_cum_regret"])
        for policy in sorted(curves):
            for t, val in enumerate(curves[policy]):
                w.writerow([policy, t, repr(float(val))])
