"""Chance-constrained OPF on the linearized branch-flow model, projected
onto a polynomial-chaos basis and solved as one SOCP per timestep.

Every stochastic quantity (injection, flow, squared voltage, setpoint) is a
K-vector of PC coefficients.  Balance and voltage relations are linear in
the germ, so the Galerkin projection just replicates them per coefficient;
chance constraints become second-order cones coupling the k >= 1
coefficients through the risk multiplier Gamma(eps):

    branch:   sqrt(2)*Gamma*||P_{1:}||  <=  f_max -+ P_0
    voltage:          Gamma*||V_{1:}||  <=  upper/lower margin of V_0
    resource:         Gamma*||g_{1:}||  <=  bound margin of g_0

The sqrt(2) on branch flows comes from boxing the P-Q circle constraint.
With K = 1 or Gamma = 0 the cones collapse to plain bounds on the means.

Cost: c*g_0 + C1*g_0^2 + C2*sum_{k>=1} g_k^2 per generator, slack included;
C2 prices the recourse a unit takes on (its share of uncertainty).

Timesteps do not couple, so the horizon is T independent conic programs;
they share one compiled problem re-parameterized per t.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import cvxpy as cp
import numpy as np

from . import pce
from .errors import InconsistentDimensions, Infeasible, SolverFailure
from .netmodel import SLACK_ID, RadialNetwork
from .pce import PceBasis

LOAD = "load"
PV = "pv"

_INF = float("inf")


@dataclass(frozen=True)
class FlexGen:
    """Dispatchable generator with quadratic cost.

    The entry at bus 0 is mandatory and represents the upstream market
    interface (the slack import); its bounds default to unbounded.  c is
    the linear price, c1 weighs the squared mean setpoint, c2 the squared
    recourse coefficients (k >= 1).
    """

    bus: int
    c: float
    c1: float = 0.0
    c2: float = 0.0
    p_min: float = -_INF
    p_max: float = _INF
    q_min: float | None = None
    q_max: float | None = None

    def __post_init__(self):
        if self.p_min > self.p_max:
            raise InconsistentDimensions(f"gen at bus {self.bus}: p_min > p_max")
        if self.c1 < 0 or self.c2 < 0:
            raise InconsistentDimensions(f"gen at bus {self.bus}: quadratic costs must be >= 0")

    @property
    def q_bounds(self) -> tuple[float, float]:
        """Reactive box; defaults to symmetric +-p_max when not given."""
        lo = self.q_min if self.q_min is not None else (-self.p_max if math.isfinite(self.p_max) else -_INF)
        hi = self.q_max if self.q_max is not None else (self.p_max if math.isfinite(self.p_max) else _INF)
        return lo, hi


@dataclass(frozen=True)
class UncertainInjection:
    """Load or PV profile whose forecast error rides on one germ coordinate.

    At time t the active power is mean[t] + scale[t]*(xi_j - E[xi_j]), so
    mean[] really is the mean trajectory.  Loads consume (they enter the
    balance negatively) and carry reactive demand via power_factor
    (default 0.95 lagging); PV injects at unity power factor.
    """

    bus: int
    kind: str
    mean: tuple[float, ...]
    germ_index: int
    scale: tuple[float, ...]
    power_factor: float | None = None

    def __post_init__(self):
        object.__setattr__(self, "mean", tuple(float(v) for v in self.mean))
        object.__setattr__(self, "scale", tuple(float(v) for v in self.scale))
        if self.kind not in (LOAD, PV):
            raise InconsistentDimensions(f"injection kind must be load or pv, got {self.kind!r}")
        if self.kind == LOAD and any(m < 0 for m in self.mean):
            raise InconsistentDimensions(f"load at bus {self.bus}: negative mean")
        if self.kind == PV and any(s < 0 for s in self.scale):
            raise InconsistentDimensions(f"pv at bus {self.bus}: negative scale")
        if self.power_factor is not None and not 0.0 < self.power_factor <= 1.0:
            raise InconsistentDimensions(f"injection at bus {self.bus}: power factor outside (0,1]")

    @property
    def tan_phi(self) -> float:
        if self.kind == PV:
            return 0.0
        pf = self.power_factor if self.power_factor is not None else 0.95
        return math.tan(math.acos(pf))


@dataclass
class CcOpfProblem:
    """Full market-clearing problem over a horizon."""

    network: RadialNetwork
    basis: PceBasis
    flexgens: tuple[FlexGen, ...]
    injections: tuple[UncertainInjection, ...]
    epsilon: float = 0.05
    gamma_mode: str = "gaussian"
    horizon: int = 24
    _template: "_Template" = field(default=None, init=False, repr=False, compare=False)

    def __post_init__(self):
        self.flexgens = tuple(self.flexgens)
        self.injections = tuple(self.injections)
        net = self.network
        slack_gens = [g for g in self.flexgens if g.bus == SLACK_ID]
        if len(slack_gens) != 1:
            raise InconsistentDimensions(
                f"expected exactly one slack-interface generator at bus {SLACK_ID}, got {len(slack_gens)}"
            )
        seen = set()
        for g in self.flexgens:
            if g.bus != SLACK_ID and g.bus not in net.bus_index:
                raise InconsistentDimensions(f"generator cites unknown bus {g.bus}")
            if g.bus in seen:
                raise InconsistentDimensions(f"multiple generators at bus {g.bus}")
            seen.add(g.bus)
        for inj in self.injections:
            if inj.bus not in net.bus_index:
                raise InconsistentDimensions(
                    f"injection cites bus {inj.bus} (unknown or slack)"
                )
            if len(inj.mean) != self.horizon or len(inj.scale) != self.horizon:
                raise InconsistentDimensions(
                    f"injection at bus {inj.bus}: profile length != horizon {self.horizon}"
                )
            if inj.germ_index >= self.basis.germ.d:
                raise InconsistentDimensions(
                    f"injection at bus {inj.bus} cites germ index {inj.germ_index}, "
                    f"germ has {self.basis.germ.d}"
                )
        if self.horizon < 1:
            raise InconsistentDimensions("horizon must be >= 1")
        # validates epsilon/mode eagerly
        pce.gamma(self.epsilon, self.gamma_mode)

    @property
    def slack_gen(self) -> FlexGen:
        return next(g for g in self.flexgens if g.bus == SLACK_ID)

    @property
    def local_gens(self) -> tuple[FlexGen, ...]:
        return tuple(g for g in self.flexgens if g.bus != SLACK_ID)

    @property
    def gamma_value(self) -> float:
        return pce.gamma(self.epsilon, self.gamma_mode)


def _degree_one_slots(basis: PceBasis) -> list[int]:
    """Position of each coordinate's degree-1 basis function."""
    slots = []
    for j in range(basis.germ.d):
        target = tuple(1 if i == j else 0 for i in range(basis.germ.d))
        slots.append(basis.multi_indices.index(target) if basis.germ.degree >= 1 else -1)
    return slots


def _fixed_injections(problem: CcOpfProblem) -> tuple[np.ndarray, np.ndarray]:
    """Non-dispatchable nodal injections as PC coefficients, (T, N, K)."""
    net, basis = problem.network, problem.basis
    T, N, K = problem.horizon, net.n, basis.K
    slots = _degree_one_slots(basis)
    fp = np.zeros((T, N, K))
    fq = np.zeros((T, N, K))
    for inj in problem.injections:
        n = net.bus_index[inj.bus]
        comp = basis.germ.components[inj.germ_index]
        coeffs = np.zeros((T, K))
        coeffs[:, 0] = inj.mean
        scale = np.asarray(inj.scale)
        if scale.any():
            slot = slots[inj.germ_index]
            if slot < 0:
                raise InconsistentDimensions(
                    f"injection at bus {inj.bus} is stochastic but the basis is degree 0"
                )
            coeffs[:, slot] = scale * comp.std
        sign = 1.0 if inj.kind == PV else -1.0
        fp[:, n, :] += sign * coeffs
        fq[:, n, :] += sign * inj.tan_phi * coeffs
    return fp, fq


class _Template:
    """One compiled DPP problem shared by all timesteps."""

    def __init__(self, problem: CcOpfProblem):
        net, basis = problem.network, problem.basis
        N, K = net.n, basis.K
        L = len(net.branches)
        gens = problem.local_gens
        G = len(gens)
        gam = problem.gamma_value
        self.problem_ref = problem
        self.fp_all, self.fq_all = _fixed_injections(problem)

        self.fixed_p = cp.Parameter((N, K), name="fixed_p")
        self.fixed_q = cp.Parameter((N, K), name="fixed_q")

        Pv = cp.Variable((L, K), name="P")
        Qv = cp.Variable((L, K), name="Q")
        pv = cp.Variable((N, K), name="p")
        qv = cp.Variable((N, K), name="q")
        P0 = cp.Variable(K, name="P0")
        Q0 = cp.Variable(K, name="Q0")
        gens_p = cp.Variable((G, K), name="gen_p") if G else None
        gens_q = cp.Variable((G, K), name="gen_q") if G else None
        self.vars = dict(P=Pv, Q=Qv, p=pv, q=qv, P0=P0, Q0=Q0, gen_p=gens_p, gen_q=gens_q)

        M = np.zeros((N, G))
        for gi, g in enumerate(gens):
            M[net.bus_index[g.bus], gi] = 1.0

        s = net.slack_adjacency
        self.bal_p = net.A.T @ Pv == pv
        self.bal_q = net.A.T @ Qv == qv
        cons = [self.bal_p, self.bal_q]
        if G:
            cons += [pv == self.fixed_p + M @ gens_p, qv == self.fixed_q + M @ gens_q]
        else:
            cons += [pv == self.fixed_p, qv == self.fixed_q]
        cons += [P0 == Pv.T @ s, Q0 == Qv.T @ s]

        # squared voltages, written over the flows (R A^T P = R p under the
        # balance equality). Routing the voltage cones through P keeps the
        # injection variables out of every inequality, so the dual of the
        # nodal balance is unique and carries the full locational price,
        # voltage rents included.
        RA = net.R @ net.A.T
        XA = net.X @ net.A.T
        V0 = net.v0 + 2.0 * (RA @ Pv[:, 0] + XA @ Qv[:, 0])
        Vk = 2.0 * (RA @ Pv[:, 1:] + XA @ Qv[:, 1:]) if K > 1 else None
        self.V0_expr, self.Vk_expr = V0, Vk

        conic = K > 1 and gam > 0.0
        lim = np.isfinite(net.f_max)
        if conic:
            root2g = math.sqrt(2.0) * gam
            if lim.any():
                fmax = net.f_max[lim]
                for flow in (Pv, Qv):
                    wide = root2g * flow[lim, 1:].T
                    cons.append(cp.SOC(fmax - flow[lim, 0], wide, axis=0))
                    cons.append(cp.SOC(fmax + flow[lim, 0], wide, axis=0))
            cons.append(cp.SOC(net.v_max_sq - V0, gam * Vk.T, axis=0))
            cons.append(cp.SOC(V0 - net.v_min_sq, gam * Vk.T, axis=0))
            for gi, g in enumerate(gens):
                tail = gam * gens_p[gi, 1:]
                if math.isfinite(g.p_max):
                    cons.append(cp.SOC(g.p_max - gens_p[gi, 0], tail))
                if math.isfinite(g.p_min):
                    cons.append(cp.SOC(gens_p[gi, 0] - g.p_min, tail))
                q_lo, q_hi = g.q_bounds
                tail_q = gam * gens_q[gi, 1:]
                if math.isfinite(q_hi):
                    cons.append(cp.SOC(q_hi - gens_q[gi, 0], tail_q))
                if math.isfinite(q_lo):
                    cons.append(cp.SOC(gens_q[gi, 0] - q_lo, tail_q))
            sl = problem.slack_gen
            if math.isfinite(sl.p_max):
                cons.append(cp.SOC(sl.p_max - P0[0], gam * P0[1:]))
            if math.isfinite(sl.p_min):
                cons.append(cp.SOC(P0[0] - sl.p_min, gam * P0[1:]))
        else:
            # K = 1 or Gamma = 0: hard bounds on the means only
            if lim.any():
                fmax = net.f_max[lim]
                for flow in (Pv, Qv):
                    cons += [flow[lim, 0] <= fmax, flow[lim, 0] >= -fmax]
            cons += [V0 <= net.v_max_sq, V0 >= net.v_min_sq]
            for gi, g in enumerate(gens):
                if math.isfinite(g.p_max):
                    cons.append(gens_p[gi, 0] <= g.p_max)
                if math.isfinite(g.p_min):
                    cons.append(gens_p[gi, 0] >= g.p_min)
                q_lo, q_hi = g.q_bounds
                if math.isfinite(q_hi):
                    cons.append(gens_q[gi, 0] <= q_hi)
                if math.isfinite(q_lo):
                    cons.append(gens_q[gi, 0] >= q_lo)
            sl = problem.slack_gen
            if math.isfinite(sl.p_max):
                cons.append(P0[0] <= sl.p_max)
            if math.isfinite(sl.p_min):
                cons.append(P0[0] >= sl.p_min)

        sl = problem.slack_gen
        obj = sl.c * P0[0] + sl.c1 * cp.square(P0[0])
        if K > 1 and sl.c2:
            obj = obj + sl.c2 * cp.sum_squares(P0[1:])
        for gi, g in enumerate(gens):
            obj = obj + g.c * gens_p[gi, 0] + g.c1 * cp.square(gens_p[gi, 0])
            if K > 1 and g.c2:
                obj = obj + g.c2 * cp.sum_squares(gens_p[gi, 1:])

        self.cvxpy_problem = cp.Problem(cp.Minimize(obj), cons)
        self.n_scalar_variables = sum(int(np.prod(v.shape)) for v in self.cvxpy_problem.variables())

    def set_timestep(self, t: int):
        T = self.problem_ref.horizon
        if not 0 <= t < T:
            raise InconsistentDimensions(f"timestep {t} outside horizon 0..{T - 1}")
        self.fixed_p.value = self.fp_all[t]
        self.fixed_q.value = self.fq_all[t]
        self.t = t
        return self


def assemble(problem: CcOpfProblem, t: int) -> _Template:
    """Conic program for timestep t.

    Returns the problem's shared compiled template with the timestep's
    injection data loaded; repeated calls reconfigure the same object.
    """
    if problem._template is None:
        problem._template = _Template(problem)
    return problem._template.set_timestep(t)


def _complementarity_gap(prob: cp.Problem) -> float:
    """Duality gap reconstructed from complementary slackness terms."""
    total = 0.0
    for con in prob.constraints:
        dv = con.dual_value
        if dv is None:
            continue
        if isinstance(con, cp.constraints.SOC):
            t_val = np.atleast_1d(np.asarray(con.args[0].value, dtype=float))
            u = np.asarray(dv[0], dtype=float).ravel()
            x_val = np.asarray(con.args[1].value, dtype=float)
            v = np.asarray(dv[1], dtype=float)
            if v.shape != x_val.shape and v.T.shape == x_val.shape:
                v = v.T
            if u.size == 1:
                total += abs(float(t_val[0] * u[0] + x_val.ravel() @ v.ravel()))
            else:
                # vectorized cones (axis=0): one cone per column
                total += float(np.abs(t_val * u + (x_val * v).sum(axis=0)).sum())
        elif isinstance(con, cp.constraints.Equality):
            res = np.asarray(con.args[0].value) - np.asarray(con.args[1].value)
            total += abs(float(np.sum(np.asarray(dv) * res)))
        else:  # linear inequality lhs <= rhs
            slack = np.asarray(con.args[1].value) - np.asarray(con.args[0].value)
            total += abs(float(np.sum(np.asarray(dv) * slack)))
    return total


@dataclass
class CcOpfSolution:
    """Primal/dual PC coefficients for every timestep.

    Array layout: p, q, V, lam, mu are (T, N, K); P, Q are (T, L, K);
    P0, Q0 (T, K); gen setpoints keyed by bus as (T, K).
    """

    problem: CcOpfProblem
    status: tuple[str, ...]
    objective_per_t: np.ndarray
    p: np.ndarray
    q: np.ndarray
    P: np.ndarray
    Q: np.ndarray
    V: np.ndarray
    P0: np.ndarray
    Q0: np.ndarray
    gen_p: dict[int, np.ndarray]
    gen_q: dict[int, np.ndarray]
    lam: np.ndarray
    mu: np.ndarray
    solve_time: np.ndarray
    duality_gap: np.ndarray
    eq_residual: np.ndarray

    @property
    def objective(self) -> float:
        return float(self.objective_per_t.sum())

    @property
    def total_solve_time(self) -> float:
        return float(self.solve_time.sum())


def solve(problem: CcOpfProblem) -> CcOpfSolution:
    """Clear every timestep; raises Infeasible(t) / SolverFailure."""
    net, basis = problem.network, problem.basis
    T, N, K = problem.horizon, net.n, basis.K
    L = len(net.branches)
    gens = problem.local_gens

    out = dict(
        objective_per_t=np.zeros(T),
        p=np.zeros((T, N, K)),
        q=np.zeros((T, N, K)),
        P=np.zeros((T, L, K)),
        Q=np.zeros((T, L, K)),
        V=np.zeros((T, N, K)),
        P0=np.zeros((T, K)),
        Q0=np.zeros((T, K)),
        lam=np.zeros((T, N, K)),
        mu=np.zeros((T, N, K)),
        solve_time=np.zeros(T),
        duality_gap=np.zeros(T),
        eq_residual=np.zeros(T),
    )
    gen_p = {g.bus: np.zeros((T, K)) for g in gens}
    gen_q = {g.bus: np.zeros((T, K)) for g in gens}

    for t in range(T):
        tpl = assemble(problem, t)
        prob = tpl.cvxpy_problem
        try:
            prob.solve(solver="CLARABEL")
        except cp.error.SolverError as exc:
            raise SolverFailure(f"t={t}: {exc}") from exc
        if prob.status == cp.INFEASIBLE:
            raise Infeasible(t)
        if prob.status != cp.OPTIMAL:
            raise SolverFailure(f"t={t}: solver status {prob.status}")

        v = tpl.vars
        out["objective_per_t"][t] = prob.value
        out["p"][t] = v["p"].value
        out["q"][t] = v["q"].value
        out["P"][t] = v["P"].value
        out["Q"][t] = v["Q"].value
        out["P0"][t] = v["P0"].value
        out["Q0"][t] = v["Q0"].value
        V = np.zeros((N, K))
        V[:, 0] = tpl.V0_expr.value
        if K > 1:
            V[:, 1:] = tpl.Vk_expr.value
        out["V"][t] = V
        for gi, g in enumerate(gens):
            gen_p[g.bus][t] = v["gen_p"].value[gi]
            gen_q[g.bus][t] = v["gen_q"].value[gi]
        # duals of the projected balance equations are the price coefficients;
        # cvxpy's sign convention already yields positive uncongested prices
        out["lam"][t] = tpl.bal_p.dual_value
        out["mu"][t] = tpl.bal_q.dual_value
        out["solve_time"][t] = prob.solver_stats.solve_time or 0.0
        out["duality_gap"][t] = _complementarity_gap(prob) / (1.0 + abs(prob.value))
        out["eq_residual"][t] = max(
            (
                float(np.max(np.atleast_1d(con.violation())))
                for con in prob.constraints
                if isinstance(con, cp.constraints.Equality)
            ),
            default=0.0,
        )

    return CcOpfSolution(
        problem=problem,
        status=tuple(["optimal"] * T),
        gen_p=gen_p,
        gen_q=gen_q,
        **out,
    )


@dataclass(frozen=True)
class ConstraintSlack:
    """One chance constraint's margin at one timestep; binding if ~ 0."""

    t: int
    family: str
    element: int
    slack: float
    binding: bool


def feasibility_report(solution: CcOpfSolution, problem: CcOpfProblem,
                       tol: float = 1e-6) -> list[ConstraintSlack]:
    """Slack of every chance constraint, recomputed from the PC coefficients.

    Slack is the margin left in the cone written as
    Gamma*||tail|| <= margin, so binding constraints sit at ~ 0.
    Elements are branch ids for flow families, bus ids for voltage and
    generator families.
    """
    net = problem.network
    gam = problem.gamma_value
    T = problem.horizon
    rows: list[ConstraintSlack] = []

    def tail_norm(coeffs: np.ndarray) -> np.ndarray:
        return np.linalg.norm(coeffs[..., 1:], axis=-1)

    root2g = math.sqrt(2.0) * gam
    lim = np.isfinite(net.f_max)
    branch_ids = [br.id for br in net.branches]
    nonslack = problem.network.nonslack_ids

    for t in range(T):
        for arr, fam in ((solution.P[t], "branch_p"), (solution.Q[t], "branch_q")):
            tn = tail_norm(arr)
            for li in np.flatnonzero(lim):
                up = (net.f_max[li] - arr[li, 0]) - root2g * tn[li]
                lo = (net.f_max[li] + arr[li, 0]) - root2g * tn[li]
                rows.append(ConstraintSlack(t, f"{fam}_up", branch_ids[li], up, up < tol))
                rows.append(ConstraintSlack(t, f"{fam}_lo", branch_ids[li], lo, lo < tol))
        vt = solution.V[t]
        tn = gam * tail_norm(vt)
        for n, bus in enumerate(nonslack):
            up = (net.v_max_sq[n] - vt[n, 0]) - tn[n]
            lo = (vt[n, 0] - net.v_min_sq[n]) - tn[n]
            rows.append(ConstraintSlack(t, "volt_up", bus, up, up < tol))
            rows.append(ConstraintSlack(t, "volt_lo", bus, lo, lo < tol))
        for g in problem.local_gens:
            gp = solution.gen_p[g.bus][t]
            tn_g = gam * float(np.linalg.norm(gp[1:]))
            if math.isfinite(g.p_max):
                up = (g.p_max - gp[0]) - tn_g
                rows.append(ConstraintSlack(t, "gen_p_up", g.bus, up, up < tol))
            if math.isfinite(g.p_min):
                lo = (gp[0] - g.p_min) - tn_g
                rows.append(ConstraintSlack(t, "gen_p_lo", g.bus, lo, lo < tol))
        sl = problem.slack_gen
        p0 = solution.P0[t]
        tn_s = gam * float(np.linalg.norm(p0[1:]))
        if math.isfinite(sl.p_max):
            rows.append(ConstraintSlack(t, "gen_p_up", SLACK_ID,
                                        (sl.p_max - p0[0]) - tn_s,
                                        (sl.p_max - p0[0]) - tn_s < tol))
        if math.isfinite(sl.p_min):
            rows.append(ConstraintSlack(t, "gen_p_lo", SLACK_ID,
                                        (p0[0] - sl.p_min) - tn_s,
                                        (p0[0] - sl.p_min) - tn_s < tol))
    return rows


def binding(report: list[ConstraintSlack], family: str | None = None,
            t: int | None = None) -> list[ConstraintSlack]:
    """Filter a feasibility report down to binding rows."""
    return [
        r for r in report
        if r.binding
        and (family is None or r.family == family)
        and (t is None or r.t == t)
    ]
