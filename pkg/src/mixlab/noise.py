"""Bounded, space-and-time localized random forcing and its law.

A noise block on [0, T] is

    eta(t, x) = chi(x) * sum_{j,k} b_jk theta_jk alpha_k^T(t) e_j(x)

with independent coefficients theta_jk drawn from a density supported on
[-1, 1].  In the spectral solver chi * e_j is represented by its Galerkin
projection, i.e. the j-th row of the cutoff matrix.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property

import numpy as np
from scipy import integrate

from .dynamics import ForceSignal, time_grid
from .spectral import Domain, StripProfile
from .streams import as_generator

AMPLITUDE_EXPONENT = 2.0 / 7.0
REGULARITY = 4.0 / 7.0


@dataclass(frozen=True)
class TimeBasis:
    """alpha_1 = 1, alpha_k(t) = sqrt(2) cos((k-1) pi t) on (0, 1), rescaled to (0, T)."""

    K: int
    T: float = 1.0

    def unit_values(self, s) -> np.ndarray:
        s = np.asarray(s, dtype=float)[..., None]
        k = np.arange(self.K)
        return np.where(k == 0, 1.0, np.sqrt(2.0) * np.cos(k * np.pi * s))

    def values(self, t) -> np.ndarray:
        """alpha_k^T(t) = T^{-1/2} alpha_k(t/T); trailing axis is k."""
        return self.unit_values(np.asarray(t, dtype=float) / self.T) / np.sqrt(self.T)

    @property
    def unit_sup_norms(self) -> np.ndarray:
        return np.where(np.arange(self.K) == 0, 1.0, np.sqrt(2.0))

    @property
    def sup_norms(self) -> np.ndarray:
        return self.unit_sup_norms / np.sqrt(self.T)

    def gram(self, n_points: int = 200) -> np.ndarray:
        """L2(0,1) Gram matrix by Gauss-Legendre quadrature (exact for K < n_points)."""
        x, w = np.polynomial.legendre.leggauss(n_points)
        s = 0.5 * (x + 1.0)
        a = self.unit_values(s)
        return (0.5 * w[:, None] * a).T @ a


class Density:
    """Probability density on [-1, 1] with pdf, cdf and inverse cdf."""

    kind = "abstract"
    variance = np.nan

    def pdf(self, s):
        raise NotImplementedError

    def cdf(self, s):
        raise NotImplementedError

    def ppf(self, p):
        raise NotImplementedError

    def sample(self, rng, size=()) -> np.ndarray:
        rng = as_generator(rng)
        return self.ppf(rng.random(size))


class Epanechnikov(Density):
    """rho(s) = 3/4 (1 - s^2) on [-1, 1]."""

    kind = "epanechnikov"
    variance = 0.2

    def pdf(self, s):
        s = np.asarray(s, dtype=float)
        return np.where(np.abs(s) <= 1.0, 0.75 * (1.0 - s ** 2), 0.0)

    def dpdf(self, s):
        s = np.asarray(s, dtype=float)
        return np.where(np.abs(s) <= 1.0, -1.5 * s, 0.0)

    def cdf(self, s):
        s = np.clip(np.asarray(s, dtype=float), -1.0, 1.0)
        return 0.75 * (s - s ** 3 / 3.0) + 0.5

    def ppf(self, p):
        # the cubic 3s - s^3 = 4p - 2 has the trigonometric root below in [-1, 1]
        p = np.asarray(p, dtype=float)
        return 2.0 * np.sin(np.arcsin(np.clip(2.0 * p - 1.0, -1.0, 1.0)) / 3.0)


class RaisedCosine(Density):
    """rho(s) = (1 + cos(pi s)) / 2 on [-1, 1]; C^1 across the endpoints."""

    kind = "cosine"
    variance = 1.0 / 3.0 - 2.0 / np.pi ** 2

    def pdf(self, s):
        s = np.asarray(s, dtype=float)
        return np.where(np.abs(s) <= 1.0, 0.5 * (1.0 + np.cos(np.pi * s)), 0.0)

    def dpdf(self, s):
        s = np.asarray(s, dtype=float)
        return np.where(np.abs(s) <= 1.0, -0.5 * np.pi * np.sin(np.pi * s), 0.0)

    def cdf(self, s):
        s = np.clip(np.asarray(s, dtype=float), -1.0, 1.0)
        return 0.5 * (s + 1.0) + np.sin(np.pi * s) / (2.0 * np.pi)

    def ppf(self, p):
        p = np.asarray(p, dtype=float)
        lo = -np.ones_like(p)
        hi = np.ones_like(p)
        # bisection to full double precision; the cdf is strictly increasing
        for _ in range(60):
            mid = 0.5 * (lo + hi)
            below = self.cdf(mid) < p
            lo = np.where(below, mid, lo)
            hi = np.where(below, hi, mid)
        return 0.5 * (lo + hi)


_DENSITIES = {"epanechnikov": Epanechnikov, "cosine": RaisedCosine}


def density_ops(kind: str = "epanechnikov") -> Density:
    try:
        return _DENSITIES[kind]()
    except KeyError:
        raise ValueError(f"unknown density kind {kind!r}; known: {sorted(_DENSITIES)}") from None


def block_signal(chi_rows: np.ndarray, coeffs: np.ndarray, basis: TimeBasis, dt: float) -> ForceSignal:
    """Force sum_{j,k} coeffs_jk alpha_k^T(t) (chi e_j) on the nodes of [0, T].

    ``chi_rows`` holds the spectral coefficients of chi e_j as rows
    (shape (J, n_modes)); ``coeffs`` has shape (..., J, K).
    """
    n, dt = time_grid(basis.T, dt)
    t = dt * np.arange(n + 1)
    alpha = basis.values(t)
    J, K = coeffs.shape[-2:]
    spatial = np.einsum("...jk,jm->...km", coeffs, chi_rows[:J])
    return ForceSignal(dt, np.einsum("tk,...km->t...m", alpha[:, :K], spatial))


@dataclass(frozen=True, eq=False)
class NoiseSpec:
    """Law of one noise block: amplitudes, densities, cutoff and horizon."""

    domain: Domain
    T: float
    b: np.ndarray
    cutoff: StripProfile
    N: int
    density: str = "epanechnikov"

    def __post_init__(self):
        b = np.array(self.b, dtype=float)
        if b.ndim != 2:
            raise ValueError("amplitude matrix must be two dimensional")
        if np.any(b < 0):
            raise ValueError("amplitudes must be nonnegative")
        if b.shape[0] > self.domain.n_modes:
            raise ValueError("more spatial amplitudes than modes")
        if not 1 <= self.N <= min(b.shape):
            raise ValueError("active block size N must satisfy 1 <= N <= min(J, K)")
        b.setflags(write=False)
        object.__setattr__(self, "b", b)
        density_ops(self.density)

    @property
    def J(self) -> int:
        return self.b.shape[0]

    @property
    def K(self) -> int:
        return self.b.shape[1]

    @property
    def basis(self) -> TimeBasis:
        return TimeBasis(self.K, self.T)

    @property
    def rho(self) -> Density:
        return density_ops(self.density)

    @cached_property
    def chi_matrix(self) -> np.ndarray:
        return self.cutoff.matrix(self.domain)

    @property
    def chi_rows(self) -> np.ndarray:
        return self.chi_matrix[: self.J]

    def nondegenerate(self) -> bool:
        """All amplitudes of the active N x N block are nonzero."""
        return bool(np.all(self.b[: self.N, : self.N] != 0))

    def with_amplitudes(self, b) -> "NoiseSpec":
        return NoiseSpec(self.domain, self.T, b, self.cutoff, self.N, self.density)


def amplitude_sum(spec: NoiseSpec) -> float:
    lam = spec.domain.eigenvalues[: spec.J]
    return float(np.sum(spec.b * lam[:, None] ** AMPLITUDE_EXPONENT * spec.basis.unit_sup_norms[None, :]))


def check_amplitude_constraint(spec: NoiseSpec, B0: float) -> tuple[float, bool]:
    """Left side sum b_jk lambda_j^{2/7} ||alpha_k||_inf and whether it is <= B0 sqrt(T)."""
    lhs = amplitude_sum(spec)
    bound = B0 * np.sqrt(spec.T)
    return lhs, bool(lhs <= bound * (1 + 1e-12))


def default_amplitudes(domain: Domain, T: float, B0: float, N: int, J: int | None = None,
                       K: int | None = None, fill: float = 0.9) -> np.ndarray:
    """b_jk proportional to 2^-(j+k) on the N x N block, scaled to ``fill`` times the bound."""
    J = N if J is None else J
    K = N if K is None else K
    j = np.arange(1, J + 1)[:, None]
    k = np.arange(1, K + 1)[None, :]
    shape = np.where((j <= N) & (k <= N), 2.0 ** (-(j + k)), 0.0)
    lam = domain.eigenvalues[:J]
    sup = TimeBasis(K).unit_sup_norms
    z = np.sum(shape * lam[:, None] ** AMPLITUDE_EXPONENT * sup[None, :])
    return fill * B0 * np.sqrt(T) * shape / z


def make_noise_spec(domain: Domain, T: float, B0: float, N: int, cutoff: StripProfile,
                    density: str = "epanechnikov", fill: float = 0.9) -> NoiseSpec:
    return NoiseSpec(domain, T, default_amplitudes(domain, T, B0, N, fill=fill), cutoff, N, density)


def sample_theta(spec: NoiseSpec, rng, size=()) -> np.ndarray:
    size = (size,) if np.isscalar(size) else tuple(size)
    return spec.rho.sample(rng, size + spec.b.shape)


def noise_from_theta(spec: NoiseSpec, theta, dt: float) -> ForceSignal:
    return block_signal(spec.chi_rows, spec.b * np.asarray(theta, dtype=float), spec.basis, dt)


def sample_noise(spec: NoiseSpec, rng, dt: float, size=()) -> ForceSignal:
    """One (or a batch of) noise blocks as force signals on the solver nodes."""
    return noise_from_theta(spec, sample_theta(spec, rng, size), dt)


def chi_mode_norms(spec: NoiseSpec, s: float = REGULARITY) -> np.ndarray:
    """||chi e_j||_{H^s} of the projected cutoff products, j = 1..J."""
    lam = spec.domain.eigenvalues
    return np.sqrt(np.sum(lam ** s * spec.chi_rows ** 2, axis=-1))


def support_radius(spec: NoiseSpec) -> float:
    """B1 = sum b_jk ||alpha_k^T||_inf ||chi e_j||_{H^{4/7}}; bounds every draw in L^inf H^{4/7}."""
    return float(np.sum(spec.b * chi_mode_norms(spec)[:, None] * spec.basis.sup_norms[None, :]))


def density_integral(density: Density) -> float:
    return integrate.quad(density.pdf, -1.0, 1.0)[0]
