"""Abstract random dynamical systems x_{n+1} = S(x_n, xi_n) and an exactly solvable toy.

The toy map x -> x/2 + b with a fair bit b has the uniform law on [0, 2]
as its unique invariant measure (binary expansions), which makes it an
exact oracle for the mixing estimators.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .streams import as_generator


class RdsInterface:
    """Step map, metric and noise sampler of a random dynamical system."""

    def step(self, x, xi):
        raise NotImplementedError

    def metric(self, x, y):
        raise NotImplementedError

    def sample_noise(self, rng, size=()):
        raise NotImplementedError

    def noise_support(self):
        """Finite list of noise values, or None for continuous noise."""
        return None


@dataclass(frozen=True)
class ToyAffineRds(RdsInterface):
    """x -> r x + b, b uniform on {0, 1}."""

    r: float = 0.5

    def __post_init__(self):
        if not abs(self.r) < 1:
            raise ValueError("contraction factor must satisfy |r| < 1")

    def step(self, x, xi):
        return self.r * np.asarray(x, dtype=float) + np.asarray(xi, dtype=float)

    def metric(self, x, y):
        return np.abs(np.asarray(x, dtype=float) - np.asarray(y, dtype=float))

    def sample_noise(self, rng, size=()):
        return as_generator(rng).integers(0, 2, size=size).astype(float)

    def noise_support(self):
        return [0.0, 1.0]


def simulate_rds(rds: RdsInterface, x0, n: int, rng=None, noise=None) -> np.ndarray:
    """Path x_0..x_n; ``noise`` (shape (n, ...)) overrides the sampler."""
    x = np.asarray(x0, dtype=float)
    path = [x]
    if noise is None:
        gen = as_generator(rng)
        noise = [rds.sample_noise(gen, x.shape) for _ in range(n)]
    for k in range(n):
        x = rds.step(x, noise[k])
        path.append(x)
    return np.stack(path)


@dataclass(eq=False)
class AttainableReport:
    sets: list
    hulls: np.ndarray
    sampled: bool


def attainable_probe(rds: RdsInterface, Y0, depth: int, max_points: int = 200_000, rng=None) -> AttainableReport:
    """Attainable sets Y_0..Y_depth; falls back to sampling when enumeration explodes."""
    support = rds.noise_support()
    if support is None:
        raise ValueError("attainable_probe needs a finite noise support")
    if depth > 20:
        raise ValueError("depth is limited to 20")
    current = np.unique(np.asarray(Y0, dtype=float))
    sets = [current]
    sampled = False
    gen = as_generator(rng)
    for _ in range(depth):
        if current.size * len(support) > max_points:
            sampled = True
            pick = gen.choice(current, size=max_points)
            xi = gen.choice(np.asarray(support, dtype=float), size=max_points)
            current = np.unique(rds.step(pick, xi))
        else:
            current = np.unique(np.concatenate([rds.step(current, s) for s in support]))
        sets.append(current)
    hulls = np.array([[s.min(), s.max()] for s in sets])
    return AttainableReport(sets, hulls, sampled)


@dataclass(frozen=True)
class AcReport:
    max_ratio: float
    passed: bool
    kappa: float


def interval_distance(x, interval) -> np.ndarray:
    lo, hi = interval
    x = np.asarray(x, dtype=float)
    return np.maximum(0.0, np.maximum(lo - x, x - hi))


def verify_ac_numeric(rds: RdsInterface, interval, V, kappa: float, x0s, n_steps: int, n_paths: int,
                      rng=None) -> AcReport:
    """max over sampled paths of dist(x_n, Y) e^{kappa n} / V(x_0); passes when <= 1."""
    gen = as_generator(rng)
    x0s = np.asarray(x0s, dtype=float)
    starts = np.repeat(x0s, n_paths)
    path = simulate_rds(rds, starts, n_steps, gen)
    n = np.arange(n_steps + 1)[:, None]
    ratio = interval_distance(path, interval) * np.exp(kappa * n) / V(starts)[None, :]
    worst = float(ratio.max())
    return AcReport(worst, bool(worst <= 1.0 + 1e-12), kappa)


def w1_to_uniform(samples, lo: float = 0.0, hi: float = 2.0) -> float:
    """Exact W1 between the empirical law of ``samples`` and Uniform[lo, hi].

    W1 = int_0^1 |Q_n(p) - Q(p)| dp with the empirical quantile Q_n piecewise
    constant; each piece is integrated in closed form.
    """
    x = np.sort(np.asarray(samples, dtype=float).ravel())
    n = x.size
    if n == 0:
        raise ValueError("empty sample")
    width = hi - lo
    p0 = np.arange(n) / n
    p1 = (np.arange(n) + 1) / n
    # int_{p0}^{p1} |x - (lo + width p)| dp
    a = (x - lo) / width
    c0 = np.clip(a, p0, p1)
    left = (c0 - p0) * (a - 0.5 * (c0 + p0))
    right = (p1 - c0) * (0.5 * (p1 + c0) - a)
    return float(width * np.sum(left + right))


def toy_ensemble_laws(rds: ToyAffineRds, x0: float, n_max: int, R: int, rng) -> np.ndarray:
    """Ensemble of R independent chains from x0, states at steps 0..n_max (shape (n_max+1, R))."""
    return simulate_rds(rds, np.full(R, float(x0)), n_max, rng)
