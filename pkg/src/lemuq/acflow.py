"""Exact AC load flow on radial grids by backward-forward sweep, used to
validate the linearized clearing a posteriori.

Injections are constant-power.  The sweep alternates a backward pass
aggregating branch currents from the leaves and a forward pass updating
voltages from the slack, starting flat, until the recomputed bus powers
match the specification to 1e-8.  The implementation is batched: one call
evaluates m Monte-Carlo samples simultaneously.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import NotConverged
from .netmodel import SLACK_ID, RadialNetwork

MISMATCH_TOL = 1e-8
MAX_ITER = 100


@dataclass
class AcState:
    """Converged load-flow state for one injection vector."""

    v: np.ndarray  # complex voltages, [slack] + non-slack ids ascending
    branch_current: np.ndarray  # complex, aligned with network.branches
    losses: float
    iterations: int
    converged: bool
    mismatch: float

    @property
    def v_mag_sq(self) -> np.ndarray:
        """Squared magnitudes at non-slack buses (comparable to voltage_map)."""
        return np.abs(self.v[1:]) ** 2


class _SweepPlan:
    """Index arrays for one network, reused across calls."""

    def __init__(self, net: RadialNetwork):
        order = [SLACK_ID]
        q = [SLACK_ID]
        while q:
            u = q.pop(0)
            for c in net.children.get(u, ()):
                order.append(c)
                q.append(c)
        pos = {bus: i for i, bus in enumerate([SLACK_ID] + net.nonslack_ids)}
        seq = order[1:][::-1]  # deepest first
        self.cols = [pos[b] for b in seq]
        self.brs = [net.branch_of[b] for b in seq]
        self.pars = [pos[net.parent[b]] for b in seq]
        self.child_brs = [[net.branch_of[c] for c in net.children.get(b, ())] for b in seq]
        self.inj_cols = [pos[b] for b in net.nonslack_ids]
        self.z = np.array([br.r + 1j * br.x for br in net.branches])
        self.r = np.array([br.r for br in net.branches])


def _plan(net: RadialNetwork) -> _SweepPlan:
    # cached on the instance: a module-level dict keyed by id(net) can
    # hand a recycled id the plan of a garbage-collected network
    plan = getattr(net, "_sweep_plan", None)
    if plan is None:
        plan = _SweepPlan(net)
        net._sweep_plan = plan
    return plan


def _sweep_batch(net: RadialNetwork, s_inj: np.ndarray, v0: float
                 ) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    """Vectorized sweep for (m, N) complex injections.

    Returns (V (m, N+1), branch currents (m, L), iterations (m,),
    mismatch (m,)).
    """
    s_inj = np.asarray(s_inj, dtype=complex)
    m, n = s_inj.shape
    if n != net.n:
        raise ValueError(f"injections have {n} buses, network has {net.n}")
    plan = _plan(net)

    V = np.full((m, net.n + 1), np.sqrt(v0), dtype=complex)
    I_br = np.zeros((m, len(net.branches)), dtype=complex)
    S = np.zeros((m, net.n + 1), dtype=complex)
    S[:, plan.inj_cols] = s_inj

    iterations = np.zeros(m, dtype=int)
    pending = np.ones(m, dtype=bool)
    mismatch = np.full(m, np.inf)
    for it in range(1, MAX_ITER + 1):
        # backward: branch current = children currents minus bus injection
        for col, br, kids in zip(plan.cols, plan.brs, plan.child_brs):
            total = -np.conj(S[:, col] / V[:, col])
            for cb in kids:
                total = total + I_br[:, cb]
            I_br[:, br] = total
        # forward: voltage drops from the slack down
        for i in range(len(plan.cols) - 1, -1, -1):
            col, br, par = plan.cols[i], plan.brs[i], plan.pars[i]
            V[:, col] = V[:, par] - plan.z[br] * I_br[:, br]
        # implied injections vs specified
        worst = np.zeros(m)
        for col, br, kids in zip(plan.cols, plan.brs, plan.child_brs):
            implied = sum((I_br[:, cb] for cb in kids), start=-I_br[:, br])
            s_implied = V[:, col] * np.conj(implied)
            worst = np.maximum(worst, np.abs(s_implied - S[:, col]))
        mismatch = worst
        done = mismatch < MISMATCH_TOL
        iterations[pending & done] = it
        pending &= ~done
        if not pending.any():
            break
    iterations[pending] = MAX_ITER
    return V, I_br, iterations, mismatch


def backward_forward_sweep(net: RadialNetwork, s_inj: np.ndarray,
                           v0: float | None = None) -> AcState:
    """Solve one AC load flow.

    s_inj: complex power per non-slack bus in ascending id order,
    positive = injection into the grid.  Raises NotConverged with the
    final mismatch if 100 iterations do not reach 1e-8.
    """
    v0 = net.v0 if v0 is None else v0
    s = np.asarray(s_inj, dtype=complex).reshape(1, -1)
    V, I_br, iters, mism = _sweep_batch(net, s, v0)
    if not mism[0] < MISMATCH_TOL:
        raise NotConverged(float(mism[0]))
    losses = float(_plan(net).r @ (np.abs(I_br[0]) ** 2))
    return AcState(
        v=V[0], branch_current=I_br[0], losses=losses,
        iterations=int(iters[0]), converged=True, mismatch=float(mism[0]),
    )


@dataclass
class ViolationStats:
    """Voltage-bound violation tallies from Monte-Carlo AC validation.

    Counts only converged samples; per-sample magnitudes and violation
    masks are kept for the CSV emitter.
    """

    bus_ids: list[int]
    timesteps: list[int]
    n_samples: int
    upper: np.ndarray  # (T_sel, N) counts above the upper bound
    lower: np.ndarray  # (T_sel, N) counts below the lower bound
    not_converged: np.ndarray  # (T_sel,) counts
    v_mag: np.ndarray  # (T_sel, m, N) magnitudes (nan where not converged)
    violated: np.ndarray  # (T_sel, m, N) bool

    def rate(self, t: int, bus: int, side: str = "both") -> float:
        """Violation frequency among converged samples at (t, bus)."""
        ti = self.timesteps.index(t)
        n = self.bus_ids.index(bus)
        good = self.n_samples - int(self.not_converged[ti])
        if good == 0:
            return float("nan")
        counts = {"upper": self.upper, "lower": self.lower}.get(side)
        if counts is None:
            counts = self.upper + self.lower
        return float(counts[ti, n]) / good

    def max_rate(self, side: str = "both") -> float:
        good = np.maximum(self.n_samples - self.not_converged[:, None], 1)
        counts = {"upper": self.upper, "lower": self.lower}.get(side, self.upper + self.lower)
        return float((counts / good).max())


def validate_solution(market, n: int, seed=None, overlays=None,
                      germ_paths: np.ndarray | None = None,
                      timesteps=None) -> ViolationStats:
    """Realize injections per germ sample, run AC flow, tally violations.

    market: a MarketSolution.  overlays maps bus id -> (n, T) active
    setpoint array (positive = injection, e.g. agent discharge), aligned
    with the rows of germ_paths.  When germ_paths is omitted they are
    drawn via sample_germ_paths(market, n, seed), so passing the same
    seed elsewhere yields the same trajectories.  Non-converged samples
    are counted, not fatal.
    """
    from .market import sample_germ_paths  # local import avoids a cycle

    sol = market.solution
    net = market.network
    if germ_paths is None:
        germ_paths = sample_germ_paths(market, n, seed)
    if germ_paths.shape[0] != n:
        raise ValueError("germ_paths rows != n")
    sel = list(range(market.horizon)) if timesteps is None else list(timesteps)
    N = net.n
    basis = market.basis

    upper = np.zeros((len(sel), N), dtype=int)
    lower = np.zeros((len(sel), N), dtype=int)
    not_conv = np.zeros(len(sel), dtype=int)
    v_mag = np.full((len(sel), n, N), np.nan)
    violated = np.zeros((len(sel), n, N), dtype=bool)

    for ti, t in enumerate(sel):
        psi = basis.eval_batch(germ_paths[:, t, :])  # (n, K)
        p_real = psi @ sol.p[t].T  # (n, N)
        q_real = psi @ sol.q[t].T
        if overlays:
            for bus, setp in overlays.items():
                p_real[:, net.bus_index[bus]] += np.asarray(setp)[:, t]
        V, _, _, mism = _sweep_batch(net, p_real + 1j * q_real, net.v0)
        ok = mism < MISMATCH_TOL
        not_conv[ti] = int((~ok).sum())
        mags = np.abs(V[:, 1:])
        v_mag[ti, ok] = mags[ok]
        up = ok[:, None] & (mags**2 > net.v_max_sq[None, :])
        lo = ok[:, None] & (mags**2 < net.v_min_sq[None, :])
        upper[ti] = up.sum(axis=0)
        lower[ti] = lo.sum(axis=0)
        violated[ti] = up | lo

    return ViolationStats(
        bus_ids=net.nonslack_ids, timesteps=sel, n_samples=n,
        upper=upper, lower=lower, not_converged=not_conv,
        v_mag=v_mag, violated=violated,
    )


def write_ac_validation(stats: ViolationStats, path) -> None:
    import csv

    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["t", "bus", "sample", "v_mag", "violated"])
        for ti, t in enumerate(stats.timesteps):
            for n, bus in enumerate(stats.bus_ids):
                for s in range(stats.n_samples):
                    w.writerow([
                        t, bus, s,
                        repr(float(stats.v_mag[ti, s, n])),
                        int(stats.violated[ti, s, n]),
                    ])
