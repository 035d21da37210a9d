"""Probabilistic nodal prices from CC-OPF duals.

The dual coefficients of the k-th projected balance equation are the PC
coefficients of the price at each bus: the k=0 coefficient is the
day-ahead price, and evaluating the full expansion at a measured germ
gives the realtime price without re-optimizing.  The delta-price
(realtime minus day-ahead) is the arbitrage signal agents act on; it has
zero mean by orthonormality.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from . import pce
from .ccopf import CcOpfSolution
from .errors import MissingDuals
from .pce import PceBasis, PceSeries

QUANTILE_LEVELS = (0.01, 0.05, 0.25, 0.50, 0.75, 0.95, 0.99)
QUANTILE_LABELS = ("q01", "q05", "q25", "q50", "q75", "q95", "q99")


@dataclass(frozen=True)
class Plmp:
    """Price expansion at one bus and timestep."""

    bus: int
    t: int
    active: PceSeries
    reactive: PceSeries

    @property
    def day_ahead_active(self) -> float:
        return self.active.coefficients[0]

    @property
    def day_ahead_reactive(self) -> float:
        return self.reactive.coefficients[0]


@dataclass(frozen=True)
class PriceDistribution:
    """Sampled realtime active-price distribution at one (bus, t)."""

    bus: int
    t: int
    samples: np.ndarray
    quantiles: dict[str, float]


@dataclass
class MarketSolution:
    """Cleared market: OPF solution plus one Plmp per (bus, t)."""

    solution: CcOpfSolution
    basis: PceBasis
    plmps: dict[tuple[int, int], Plmp]

    @property
    def network(self):
        return self.solution.problem.network

    @property
    def horizon(self) -> int:
        return self.solution.problem.horizon

    @property
    def bus_ids(self) -> list[int]:
        return self.network.nonslack_ids

    def plmp(self, bus: int, t: int) -> Plmp:
        return self.plmps[(bus, t)]

    # coefficient matrices for vectorized evaluation, (N, K)
    def _lam(self, t: int) -> np.ndarray:
        return self.solution.lam[t]

    def _mu(self, t: int) -> np.ndarray:
        return self.solution.mu[t]


def extract_plmps(solution: CcOpfSolution) -> MarketSolution:
    """Package balance duals as price expansions.

    The sign convention is fixed by the solver's Lagrangian: with balance
    written flows-equal-injections, the dual at an uncongested bus equals
    the slack's marginal cost (positive price paid by consumers).
    """
    if solution.lam is None or not np.isfinite(solution.lam).all():
        raise MissingDuals("solution carries no balance duals")
    problem = solution.problem
    basis = problem.basis
    net = problem.network
    plmps: dict[tuple[int, int], Plmp] = {}
    for t in range(problem.horizon):
        for bus, n in net.bus_index.items():
            plmps[(bus, t)] = Plmp(
                bus=bus,
                t=t,
                active=PceSeries(tuple(solution.lam[t, n])),
                reactive=PceSeries(tuple(solution.mu[t, n])),
            )
    return MarketSolution(solution=solution, basis=basis, plmps=plmps)


def day_ahead_price(market: MarketSolution, bus: int, t: int) -> tuple[float, float]:
    plm = market.plmp(bus, t)
    return plm.day_ahead_active, plm.day_ahead_reactive


def realtime_price(market: MarketSolution, bus: int, t: int,
                   germ_measurement: np.ndarray) -> tuple[float, float]:
    """Realized (active, reactive) price: the expansions at the measurement."""
    psi = market.basis.eval(np.asarray(germ_measurement, dtype=float))
    n = market.network.bus_index[bus]
    return float(market._lam(t)[n] @ psi), float(market._mu(t)[n] @ psi)


def delta_price(market: MarketSolution, bus: int, t: int,
                germ_measurement: np.ndarray) -> float:
    """Realtime minus day-ahead active price; zero-mean over the germ."""
    active, _ = realtime_price(market, bus, t, germ_measurement)
    return active - market.plmp(bus, t).day_ahead_active


def price_distribution(market: MarketSolution, bus: int, t: int,
                       n: int, seed=None) -> PriceDistribution:
    """Sample the realtime active price n times (reproducible by seed)."""
    samples = pce.sample_germ(market.basis.germ, n, seed)
    psi = market.basis.eval_batch(samples)
    vals = psi @ market._lam(t)[market.network.bus_index[bus]]
    qs = np.quantile(vals, QUANTILE_LEVELS, method="linear")
    return PriceDistribution(
        bus=bus, t=t, samples=vals,
        quantiles=dict(zip(QUANTILE_LABELS, map(float, qs))),
    )


def sample_germ_paths(market: MarketSolution, n_paths: int, seed=None) -> np.ndarray:
    """Germ trajectories (n_paths, T, d): one i.i.d. draw per period.

    A single path is the system-wide sequence of measurements driving
    both prices and physical injections, so agents and load-flow
    validation consume the same trajectories.
    """
    germ = market.basis.germ
    T = market.horizon
    flat = pce.sample_germ(germ, n_paths * T, seed)
    return flat.reshape(n_paths, T, germ.d)


def delta_price_paths(market: MarketSolution, bus: int,
                      germ_paths: np.ndarray) -> np.ndarray:
    """Delta-price trajectories (n_paths, T) at one bus for given paths."""
    n_paths, T, _ = germ_paths.shape
    lam = market.solution.lam[:, market.network.bus_index[bus], :]  # (T, K)
    out = np.empty((n_paths, T))
    for t in range(T):
        psi = market.basis.eval_batch(germ_paths[:, t, :])
        out[:, t] = psi @ lam[t] - lam[t, 0]
    return out


def _fmt(x: float) -> str:
    return repr(float(x))


def write_prices_da(market: MarketSolution, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["t", "bus", "pi_da_active", "pi_da_reactive"])
        for t in range(market.horizon):
            for bus in market.bus_ids:
                plm = market.plmp(bus, t)
                w.writerow([t, bus, _fmt(plm.day_ahead_active), _fmt(plm.day_ahead_reactive)])


def write_rt_samples(market: MarketSolution, path, n: int, seed=None) -> None:
    """n realtime-price draws per (t, bus); independent germ per (sample, t)."""
    paths = sample_germ_paths(market, n, seed)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["sample", "t", "bus", "pi_rt"])
        for t in range(market.horizon):
            psi = market.basis.eval_batch(paths[:, t, :])
            prices = psi @ market._lam(t).T  # (n, N)
            for s in range(n):
                for j, bus in enumerate(market.bus_ids):
                    w.writerow([s, t, bus, _fmt(prices[s, j])])


def write_price_quantiles(market: MarketSolution, path, n: int, seed=None) -> None:
    base = np.random.default_rng(seed)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["t", "bus", *QUANTILE_LABELS])
        for t in range(market.horizon):
            for bus in market.bus_ids:
                dist = price_distribution(market, bus, t, n, base)
                w.writerow([t, bus, *(_fmt(dist.quantiles[q]) for q in QUANTILE_LABELS)])
