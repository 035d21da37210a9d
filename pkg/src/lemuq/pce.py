"""Generalized polynomial chaos machinery.

A germ is a vector of d independent scalar random variables (here Gaussian
or Beta on [0,1]).  Random quantities are represented by truncated
expansions X = sum_k x_k Psi_k(xi) over an orthonormal multivariate basis:
products of normalized probabilists' Hermite polynomials (Gaussian weight)
and shifted Jacobi polynomials (Beta weight).  Orthonormality gives
E[X] = x_0 and Var[X] = sum_{k>=1} x_k^2 with no norm bookkeeping.

Multi-indices are truncated by total degree  and stored in graded
lexicographic order (grade first, then first coordinate carrying the
highest degree), so coefficient layouts are deterministic:
K = (p+d)! / (p! d!).
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field

import numpy as np
from numpy.polynomial import hermite_e
from scipy import special, stats

from .errors import IndexOutOfRange, InvalidRisk, OutOfSupport, UnsupportedDistribution

GAUSSIAN = "gaussian"
BETA = "beta"


@dataclass(frozen=True)
class GermComponent:
    """One independent germ coordinate.

    distribution 'gaussian' is standard normal (Hermite polynomials);
    'beta' lives on [0,1] with shape parameters alpha, beta (Jacobi
    polynomials on the shifted interval).
    """

    distribution: str
    alpha: float = 0.0
    beta: float = 0.0

    def __post_init__(self):
        if self.distribution == GAUSSIAN:
            return
        if self.distribution == BETA:
            if self.alpha <= 0 or self.beta <= 0:
                raise UnsupportedDistribution(
                    f"beta shape parameters must be positive, got ({self.alpha}, {self.beta})"
                )
            return
        raise UnsupportedDistribution(f"unknown distribution {self.distribution!r}")

    @property
    def mean(self) -> float:
        if self.distribution == GAUSSIAN:
            return 0.0
        return self.alpha / (self.alpha + self.beta)

    @property
    def var(self) -> float:
        if self.distribution == GAUSSIAN:
            return 1.0
        a, b = self.alpha, self.beta
        return a * b / ((a + b) ** 2 * (a + b + 1.0))

    @property
    def std(self) -> float:
        return math.sqrt(self.var)


def gaussian_component() -> GermComponent:
    return GermComponent(GAUSSIAN)


def beta_component(alpha: float, beta: float) -> GermComponent:
    return GermComponent(BETA, alpha, beta)


@dataclass(frozen=True)
class GermSpec:
    """Germ definition: independent components plus total polynomial degree.

    degree 0 is allowed and collapses the basis to the constant, which is
    how deterministic problems are expressed.
    """

    components: tuple[GermComponent, ...]
    degree: int

    def __post_init__(self):
        if len(self.components) < 1:
            raise UnsupportedDistribution("germ needs at least one component")
        if self.degree < 0:
            raise UnsupportedDistribution("polynomial degree must be >= 0")

    @property
    def d(self) -> int:
        return len(self.components)


def default_germ(degree: int = 2) -> GermSpec:
    """Three-coordinate germ used by the bundled cases.

    Coordinate 0 drives commercial loads (Gaussian), coordinate 1
    residential loads (Beta(5,2)), coordinate 2 solar output (Beta(4,2)).
    """
    return GermSpec(
        components=(
            gaussian_component(),
            beta_component(5.0, 2.0),
            beta_component(4.0, 2.0),
        ),
        degree=degree,
    )


def _multi_indices(d: int, degree: int) -> tuple[tuple[int, ...], ...]:
    # graded lex: sort by total degree, then descending exponent tuple so
    # (1,0,0) precedes (0,1,0)
    all_idx = [
        idx
        for idx in itertools.product(range(degree + 1), repeat=d)
        if sum(idx) <= degree
    ]
    all_idx.sort(key=lambda idx: (sum(idx), tuple(-e for e in idx)))
    return tuple(all_idx)


def _hermite_norms(degree: int) -> np.ndarray:
    # E[He_n^2] = n! under the standard normal weight
    return np.sqrt([math.factorial(n) for n in range(degree + 1)])


def _jacobi_norms(comp: GermComponent, degree: int) -> np.ndarray:
    # Normalize numerically by Gauss-Jacobi quadrature: exact for the
    # squared polynomial and free of gamma-function edge cases.
    a, b = comp.beta - 1.0, comp.alpha - 1.0
    nodes, weights = special.roots_jacobi(degree + 1, a, b)
    total = weights.sum()
    norms = np.empty(degree + 1)
    for n in range(degree + 1):
        vals = special.eval_jacobi(n, a, b, nodes)
        norms[n] = math.sqrt(float(weights @ vals**2 / total))
    return norms


def _univariate_table(comp: GermComponent, degree: int, x: np.ndarray) -> np.ndarray:
    """Orthonormal polynomial values, shape (len(x), degree+1)."""
    out = np.empty((x.shape[0], degree + 1))
    if comp.distribution == GAUSSIAN:
        norms = _hermite_norms(degree)
        for n in range(degree + 1):
            coef = np.zeros(n + 1)
            coef[n] = 1.0
            out[:, n] = hermite_e.hermeval(x, coef) / norms[n]
    else:
        a, b = comp.beta - 1.0, comp.alpha - 1.0
        norms = _jacobi_norms(comp, degree)
        y = 2.0 * x - 1.0
        for n in range(degree + 1):
            out[:, n] = special.eval_jacobi(n, a, b, y) / norms[n]
    return out


@dataclass(frozen=True)
class PceBasis:
    """Orthonormal multivariate basis for a germ, immutable and shareable."""

    germ: GermSpec
    multi_indices: tuple[tuple[int, ...], ...] = field(init=False)

    def __post_init__(self):
        object.__setattr__(self, "multi_indices", _multi_indices(self.germ.d, self.germ.degree))

    @property
    def K(self) -> int:
        return len(self.multi_indices)

    def eval(self, sample: np.ndarray) -> np.ndarray:
        """Basis values Psi_0..Psi_{K-1} at one germ sample (length d)."""
        return self.eval_batch(np.asarray(sample, dtype=float)[None, :])[0]

    def eval_batch(self, samples: np.ndarray) -> np.ndarray:
        """Basis values at n samples; input (n, d), output (n, K)."""
        samples = np.asarray(samples, dtype=float)
        if samples.ndim != 2 or samples.shape[1] != self.germ.d:
            raise OutOfSupport(
                f"expected samples of shape (n, {self.germ.d}), got {samples.shape}"
            )
        if not np.all(np.isfinite(samples)):
            raise OutOfSupport("non-finite germ sample")
        tables = []
        for j, comp in enumerate(self.germ.components):
            col = samples[:, j]
            if comp.distribution == BETA and (col.min() < 0.0 or col.max() > 1.0):
                raise OutOfSupport(
                    f"coordinate {j} outside [0,1] for a beta germ component"
                )
            tables.append(_univariate_table(comp, self.germ.degree, col))
        out = np.ones((samples.shape[0], self.K))
        for k, idx in enumerate(self.multi_indices):
            for j, deg in enumerate(idx):
                if deg:
                    out[:, k] *= tables[j][:, deg]
        return out


def build_basis(germ: GermSpec) -> PceBasis:
    return PceBasis(germ)


def eval_basis(basis: PceBasis, germ_sample: np.ndarray) -> np.ndarray:
    return basis.eval(germ_sample)


@dataclass(frozen=True)
class PceSeries:
    """Coefficients of a truncated expansion in a fixed basis layout."""

    coefficients: tuple[float, ...]

    def __post_init__(self):
        object.__setattr__(self, "coefficients", tuple(float(c) for c in self.coefficients))

    def as_array(self) -> np.ndarray:
        return np.asarray(self.coefficients)


def _coeffs(series) -> np.ndarray:
    if isinstance(series, PceSeries):
        return series.as_array()
    return np.asarray(series, dtype=float)


def mean(series) -> float:
    return float(_coeffs(series)[0])


def variance(series) -> float:
    c = _coeffs(series)
    return float(c[1:] @ c[1:])


def std(series) -> float:
    return math.sqrt(variance(series))


def evaluate_series(basis: PceBasis, series, germ_sample: np.ndarray) -> float:
    """Realize the random variable at a germ measurement."""
    return float(_coeffs(series) @ basis.eval(germ_sample))


def expand_affine_input(basis: PceBasis, germ_index: int, offset: float, scale: float) -> PceSeries:
    """Exact expansion of offset + scale * xi_j.

    The degree-1 orthonormal polynomial in any single coordinate is
    (xi_j - E[xi_j]) / std(xi_j), so the expansion has exactly two nonzero
    coefficients: offset + scale*E[xi_j] on the constant and
    scale*std(xi_j) on that polynomial.
    """
    d = basis.germ.d
    if not 0 <= germ_index < d:
        raise IndexOutOfRange(f"germ index {germ_index} outside 0..{d - 1}")
    comp = basis.germ.components[germ_index]
    coeffs = np.zeros(basis.K)
    coeffs[0] = offset + scale * comp.mean
    if scale != 0.0 and basis.germ.degree >= 1:
        target = tuple(1 if j == germ_index else 0 for j in range(d))
        k = basis.multi_indices.index(target)
        coeffs[k] = scale * comp.std
    elif scale != 0.0:
        raise IndexOutOfRange("degree-0 basis cannot carry a stochastic input")
    return PceSeries(tuple(coeffs))


def sample_germ(germ: GermSpec, n: int, seed=None) -> np.ndarray:
    """Draw n independent germ samples, shape (n, d); reproducible by seed.

    seed may be an int or an existing numpy Generator (to continue a
    stream or to hand children of a SeedSequence to parallel workers).
    """
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    cols = []
    for comp in germ.components:
        if comp.distribution == GAUSSIAN:
            cols.append(rng.standard_normal(n))
        else:
            cols.append(rng.beta(comp.alpha, comp.beta, size=n))
    return np.column_stack(cols)


def gamma(epsilon: float, mode: str = GAUSSIAN) -> float:
    """Risk multiplier turning a standard deviation into a one-sided margin.

    gaussian: inverse normal CDF at 1-epsilon. dist_robust: Cantelli bound
    sqrt((1-eps)/eps), valid for any finite-variance distribution.
    """
    if not 0.0 < epsilon <= 0.5:
        raise InvalidRisk(f"risk level must lie in (0, 0.5], got {epsilon}")
    if mode == GAUSSIAN:
        return float(stats.norm.ppf(1.0 - epsilon))
    if mode == "dist_robust":
        return math.sqrt((1.0 - epsilon) / epsilon)
    raise InvalidRisk(f"unknown gamma mode {mode!r}")
