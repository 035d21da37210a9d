"""Radial network model with a linearized branch-flow voltage map.

The grid is a tree rooted at the slack bus (id 0).  Branches are reoriented
parent -> child during construction, so downstream flow is positive.  The
reduced branch-bus incidence matrix A (one row per branch, one column per
non-slack bus) carries +1 where a branch leaves a bus and -1 where it
enters; rows touching the slack bus only keep the -1 entry.  For a tree A
is square and invertible, and with F = A^-1 the sensitivity matrices

    R = F diag(r) F^T,   X = F diag(x) F^T

map nodal injections to squared voltage magnitudes:

    V = v0 * 1 + 2 R p + 2 X q

Losses are neglected, so branch flows satisfy A^T P = p exactly and the
slack imports the negated sum of all injections.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field

import numpy as np

from .errors import CycleDetected, DimensionMismatch, Disconnected, SingularIncidence

SLACK_ID = 0


@dataclass(frozen=True)
class Bus:
    """Single bus; id 0 is the slack (no load, no generation, fixed v0)."""

    id: int
    v_min_sq: float = 0.95**2
    v_max_sq: float = 1.05**2

    def __post_init__(self):
        if not self.v_min_sq < self.v_max_sq:
            raise ValueError(f"bus {self.id}: need v_min_sq < v_max_sq")


@dataclass(frozen=True)
class Branch:
    """Series impedance element between two buses.

    r, x in p.u. on the system base; f_max is the per-direction flow limit
    applied to both active and reactive flow.  id is assigned by build
    order when left at None.
    """

    from_bus: int
    to_bus: int
    r: float
    x: float
    f_max: float = float("inf")
    id: int | None = None

    def __post_init__(self):
        if self.r < 0 or self.x < 0:
            raise ValueError(f"branch {self.from_bus}-{self.to_bus}: negative impedance")
        if not self.f_max > 0:
            raise ValueError(f"branch {self.from_bus}-{self.to_bus}: f_max must be positive")


@dataclass
class RadialNetwork:
    """Validated tree topology plus precomputed sensitivity matrices.

    Branch order follows the input order; orientation is parent -> child
    regardless of how the branch was specified.  Non-slack buses are
    indexed in ascending id order (``bus_index`` maps id -> column).
    """

    buses: tuple[Bus, ...]
    branches: tuple[Branch, ...]
    v0: float
    A: np.ndarray
    F: np.ndarray
    R: np.ndarray
    X: np.ndarray
    bus_index: dict[int, int]
    parent: dict[int, int]
    children: dict[int, tuple[int, ...]]
    branch_of: dict[int, int] = field(default_factory=dict)  # child bus id -> branch row

    @property
    def n(self) -> int:
        """Number of non-slack buses."""
        return self.A.shape[1]

    @property
    def nonslack_ids(self) -> list[int]:
        return sorted(self.bus_index, key=self.bus_index.get)

    @property
    def slack_adjacency(self) -> np.ndarray:
        """Indicator over branches: 1 where the parent end is the slack bus."""
        s = np.zeros(len(self.branches))
        for i, br in enumerate(self.branches):
            if br.from_bus == SLACK_ID:
                s[i] = 1.0
        return s

    @property
    def r(self) -> np.ndarray:
        return np.array([br.r for br in self.branches])

    @property
    def x(self) -> np.ndarray:
        return np.array([br.x for br in self.branches])

    @property
    def f_max(self) -> np.ndarray:
        return np.array([br.f_max for br in self.branches])

    @property
    def v_min_sq(self) -> np.ndarray:
        """Squared lower voltage bounds over non-slack buses."""
        by_id = {b.id: b for b in self.buses}
        return np.array([by_id[i].v_min_sq for i in self.nonslack_ids])

    @property
    def v_max_sq(self) -> np.ndarray:
        by_id = {b.id: b for b in self.buses}
        return np.array([by_id[i].v_max_sq for i in self.nonslack_ids])


def build_network(buses: list[Bus], branches: list[Branch], v0: float = 1.0) -> RadialNetwork:
    """Validate a radial topology and precompute F, R, X.

    Raises CycleDetected / Disconnected on non-tree inputs and
    SingularIncidence if inversion fails anyway (defensive; a validated
    tree always yields an invertible A).
    """
    ids = [b.id for b in buses]
    if len(set(ids)) != len(ids):
        raise ValueError(f"duplicate bus ids: {sorted(ids)}")
    if SLACK_ID not in ids:
        raise ValueError("no slack bus (id 0) present")
    id_set = set(ids)
    n_bus = len(ids)

    adjacency: dict[int, list[tuple[int, int]]] = {i: [] for i in ids}
    for bi, br in enumerate(branches):
        if br.from_bus not in id_set or br.to_bus not in id_set:
            raise Disconnected(f"branch {br.from_bus}-{br.to_bus} references unknown bus")
        if br.from_bus == br.to_bus:
            raise CycleDetected(f"self-loop at bus {br.from_bus}")
        adjacency[br.from_bus].append((br.to_bus, bi))
        adjacency[br.to_bus].append((br.from_bus, bi))

    # BFS from slack; a revisited bus means a loop, an unvisited one means
    # the graph is disconnected
    parent: dict[int, int] = {}
    branch_of: dict[int, int] = {}
    visited = {SLACK_ID}
    queue = deque([SLACK_ID])
    while queue:
        u = queue.popleft()
        for v, bi in adjacency[u]:
            if parent.get(u) == v and branch_of.get(u) == bi:
                continue  # the edge we came through
            if v in visited:
                raise CycleDetected(f"loop closed by branch {branches[bi].from_bus}-{branches[bi].to_bus}")
            visited.add(v)
            parent[v] = u
            branch_of[v] = bi
            queue.append(v)
    if visited != id_set:
        missing = sorted(id_set - visited)
        raise Disconnected(f"buses unreachable from slack: {missing}")
    if len(branches) != n_bus - 1:
        raise CycleDetected("branch count exceeds bus count - 1")

    # reorient so every branch points parent -> child
    oriented = []
    for bi, br in enumerate(branches):
        bid = br.id if br.id is not None else bi
        if parent.get(br.to_bus) == br.from_bus:
            oriented.append(Branch(br.from_bus, br.to_bus, br.r, br.x, br.f_max, bid))
        else:
            oriented.append(Branch(br.to_bus, br.from_bus, br.r, br.x, br.f_max, bid))
    oriented = tuple(oriented)

    nonslack = sorted(i for i in ids if i != SLACK_ID)
    bus_index = {i: k for k, i in enumerate(nonslack)}

    A = np.zeros((len(oriented), len(nonslack)))
    for row, br in enumerate(oriented):
        A[row, bus_index[br.to_bus]] = -1.0
        if br.from_bus != SLACK_ID:
            A[row, bus_index[br.from_bus]] = 1.0

    try:
        F = np.linalg.inv(A)
    except np.linalg.LinAlgError as exc:
        raise SingularIncidence(str(exc)) from exc

    r = np.array([br.r for br in oriented])
    x = np.array([br.x for br in oriented])
    R = F @ np.diag(r) @ F.T
    X = F @ np.diag(x) @ F.T
    # symmetrize away rounding noise
    R = 0.5 * (R + R.T)
    X = 0.5 * (X + X.T)

    children: dict[int, list[int]] = {i: [] for i in ids}
    for child, par in parent.items():
        children[par].append(child)

    return RadialNetwork(
        buses=tuple(buses),
        branches=oriented,
        v0=v0,
        A=A,
        F=F,
        R=R,
        X=X,
        bus_index=bus_index,
        parent=parent,
        children={k: tuple(sorted(v)) for k, v in children.items()},
        branch_of=branch_of,
    )


def _check_dim(net: RadialNetwork, vec: np.ndarray, name: str) -> np.ndarray:
    arr = np.asarray(vec, dtype=float)
    if arr.shape != (net.n,):
        raise DimensionMismatch(f"{name} has shape {arr.shape}, expected ({net.n},)")
    return arr


def voltage_map(net: RadialNetwork, p: np.ndarray, q: np.ndarray) -> np.ndarray:
    """Squared voltage magnitudes at non-slack buses for injections (p, q)."""
    p = _check_dim(net, p, "p")
    q = _check_dim(net, q, "q")
    return net.v0 * np.ones(net.n) + 2.0 * net.R @ p + 2.0 * net.X @ q


def branch_flows(net: RadialNetwork, p: np.ndarray, q: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Lossless branch flows (P, Q) solving A^T P = p, A^T Q = q.

    Positive values point parent -> child.
    """
    p = _check_dim(net, p, "p")
    q = _check_dim(net, q, "q")
    P = np.linalg.solve(net.A.T, p)
    Q = np.linalg.solve(net.A.T, q)
    return P, Q


def slack_injection(net: RadialNetwork, p: np.ndarray) -> float:
    """Power imported through the slack bus; equals -sum(p) for a lossless tree."""
    p = _check_dim(net, p, "p")
    P = np.linalg.solve(net.A.T, p)
    return float(net.slack_adjacency @ P)


def power_limit_from_ampacity(i_max: float, v_min: float = 0.95) -> float:
    """Conservative per-direction flow limit from a current rating [p.u.]."""
    return float(i_max) * float(v_min)
