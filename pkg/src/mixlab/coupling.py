"""Coupling of noise pairs through the squeezing control, and the extension chain.

In the constant-shift mode the control for a pair (u, v) is computed once
against the noise-free reference S(u, 0).  It is then a fixed translation
of the coefficients theta on the active block, and each coordinate can be
paired with its shifted copy by an exact maximal coupling.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import integrate, optimize, stats

from .control import ControlError, SqueezeSetup
from .dynamics import SolverConfig, evolve
from .noise import Density, NoiseSpec, noise_from_theta, sample_theta, support_radius
from .spectral import smoothstep
from .streams import as_generator


@dataclass(frozen=True)
class EpsPair:
    eps1: float
    eps2: float

    def __post_init__(self):
        if not self.eps1 >= self.eps2 >= 0:
            raise ValueError("need eps1 >= eps2 >= 0")


def rho_eps(distance, eps: EpsPair) -> np.ndarray:
    """Ramp 0 below eps2, (s - eps2)/(eps1 - eps2) in between, 1 above eps1."""
    s = np.asarray(distance, dtype=float)
    if eps.eps1 == eps.eps2:
        return np.where(s > eps.eps1, 1.0, 0.0)
    return np.clip((s - eps.eps2) / (eps.eps1 - eps.eps2), 0.0, 1.0)


def tv_shift_1d(density: Density, h: float) -> float:
    """Total variation between rho and rho(. - h), by adaptive quadrature."""
    h = float(abs(h))
    if h == 0.0:
        return 0.0
    if h >= 2.0:
        return 1.0
    f = lambda s: abs(density.pdf(s) - density.pdf(s - h))
    pts = sorted({-1.0, -1.0 + h, 0.5 * h, 1.0, 1.0 + h})
    total = 0.0
    for lo, hi in zip(pts[:-1], pts[1:]):
        total += integrate.quad(f, lo, hi, epsabs=1e-14, epsrel=1e-12, limit=200)[0]
    return 0.5 * total


def tv_shift_estimate(spec: NoiseSpec, shift) -> tuple[float, np.ndarray]:
    """TV bound 1 - prod(1 - TV_jk) for a constant shift of the coefficients.

    Coordinates with zero amplitude cannot absorb a nonzero shift and count
    with TV 1.  Exact when a single coordinate is shifted.
    """
    shift = np.asarray(shift, dtype=float)
    per = np.zeros_like(shift)
    rho = spec.rho
    for idx in zip(*np.nonzero(shift)):
        per[idx] = tv_shift_1d(rho, shift[idx])
    return float(1.0 - np.prod(1.0 - per)), per


def theta_shift(spec: NoiseSpec, Z) -> np.ndarray:
    """Coefficient shift H with b * H = Z on the control block (zero elsewhere)."""
    Z = np.asarray(Z, dtype=float)
    H = np.zeros(Z.shape[:-2] + spec.b.shape)
    nx, nk = Z.shape[-2:]
    b = spec.b[:nx, :nk]
    with np.errstate(divide="ignore", invalid="ignore"):
        H[..., :nx, :nk] = np.where(b > 0, Z / np.where(b > 0, b, 1.0), np.where(Z == 0, 0.0, np.inf))
    return H


def maximal_coupling(density: Density, shift, rng, size=()) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Draw (theta, theta') with both marginals rho and P(theta' = theta + h) = 1 - TV(h).

    Coordinate-wise: A = theta + h has law rho(. - h); it is kept as theta'
    when a uniform under its density falls below rho, otherwise theta' is
    drawn from the residual part of rho by rejection.
    """
    rng = as_generator(rng)
    size = (size,) if np.isscalar(size) else tuple(size)
    h = np.asarray(shift, dtype=float)
    h = np.array(np.broadcast_to(h, size + h.shape))
    theta = density.sample(rng, h.shape)
    A = theta + h
    W = rng.random(h.shape) * density.pdf(theta)
    same = W <= density.pdf(A)
    same |= h == 0
    out = np.where(same, A, 0.0)
    todo = np.flatnonzero(~same.ravel())
    flat_out = out.ravel()
    flat_h = h.ravel()
    while todo.size:
        B = density.sample(rng, todo.size)
        Wb = rng.random(todo.size) * density.pdf(B)
        accept = Wb > density.pdf(B - flat_h[todo])
        flat_out[todo[accept]] = B[accept]
        todo = todo[~accept]
    return theta, flat_out.reshape(h.shape), same


@dataclass(eq=False)
class CouplingDraw:
    """Coefficient pair (theta, theta') with the flag theta' = theta + shift."""

    theta: np.ndarray
    theta_prime: np.ndarray
    identical_shift: np.ndarray

    def signals(self, spec: NoiseSpec, dt: float):
        return noise_from_theta(spec, self.theta, dt), noise_from_theta(spec, self.theta_prime, dt)


def sample_coupled_pair(spec: NoiseSpec, shift, rng, size=()) -> CouplingDraw:
    """Both coefficient arrays have law rho^{J x K}; all coordinates pair up with
    probability prod(1 - TV_jk) >= 1 - sum TV_jk."""
    theta, theta_p, same = maximal_coupling(spec.rho, shift, rng, size)
    axes = (-2, -1)
    return CouplingDraw(theta, theta_p, np.all(same, axis=axes))


def cutoff_weight(s, R2: float) -> np.ndarray:
    """1 for s <= R2^2, 0 for s >= (R2 + 1)^2, smooth in between."""
    s = np.asarray(s, dtype=float)
    lo, hi = R2 ** 2, (R2 + 1.0) ** 2
    return 1.0 - smoothstep((s - lo) / (hi - lo))


def noise_l2_h47(spec: NoiseSpec, theta) -> np.ndarray:
    """||eta||^2 in L^2(0, T; H^{4/7}) of the noise with coefficients theta (exact in time)."""
    lam = spec.domain.eigenvalues
    coef = spec.b * np.asarray(theta, dtype=float)
    spatial = np.einsum("...jk,jm->...km", coef, spec.chi_rows)
    return np.sum(lam ** (4.0 / 7.0) * spatial ** 2, axis=(-2, -1))


class CouplingEngine:
    """Squeezing control turned into noise shifts for a given noise law."""

    def __init__(self, setup: SqueezeSetup, spec: NoiseSpec, mode: str = "constant"):
        if mode not in ("constant", "pathwise"):
            raise ValueError("mode must be 'constant' or 'pathwise'")
        if not np.isclose(setup.T, spec.T):
            raise ValueError("control horizon and noise horizon differ")
        if setup.cut.N > min(spec.J, spec.K) or not spec.nondegenerate():
            raise ValueError("noise block must cover the control block with nonzero amplitudes")
        self.setup = setup
        self.spec = spec
        self.mode = mode
        self.R2 = np.sqrt(spec.T) * support_radius(spec)
        self.cfg = SolverConfig(setup.dt)

    def _vec(self, x):
        return np.concatenate([np.asarray(x[0], dtype=float), np.asarray(x[1], dtype=float)], axis=-1)

    def control_shift(self, u, v, theta=None) -> np.ndarray:
        """Coefficient shift carrying v's noise to squeeze v onto S(u, noise)."""
        dom = self.setup.domain
        n = dom.n_modes
        X, Y = self._vec(u), self._vec(v)
        if self.mode == "constant" or theta is None:
            h = None
            weight = 1.0
        else:
            h = noise_from_theta(self.spec, theta, self.setup.dt)
            weight = float(cutoff_weight(noise_l2_h47(self.spec, theta), self.R2))
        if weight == 0.0 or np.all(X == Y):
            return np.zeros(self.spec.b.shape)
        op, _ = self.setup.operator((X[:n], X[n:]), h)
        return weight * theta_shift(self.spec, op(Y - X))

    def shift_map(self, u, v, theta) -> np.ndarray:
        """theta' = Psi^z(theta) = theta + shift."""
        return np.asarray(theta) + self.control_shift(u, v, theta)

    def step_pair(self, u, v, theta, theta_p):
        """(S(u, theta), S(v, theta')) as coefficient vectors (batched over theta)."""
        dom = self.setup.domain
        n = dom.n_modes
        X, Y = self._vec(u), self._vec(v)
        f = noise_from_theta(self.spec, theta, self.setup.dt)
        g = noise_from_theta(self.spec, theta_p, self.setup.dt)
        batch = np.shape(theta)[:-2]
        X = np.broadcast_to(X, batch + X.shape[-1:])
        Y = np.broadcast_to(Y, batch + Y.shape[-1:])
        a = evolve(dom, (X[..., :n], X[..., n:]), f, self.cfg, self.setup.damping, store="final")
        b = evolve(dom, (Y[..., :n], Y[..., n:]), g, self.cfg, self.setup.damping, store="final")
        return (np.concatenate([a.u[-1], a.v[-1]], axis=-1),
                np.concatenate([b.u[-1], b.v[-1]], axis=-1))

    def distance(self, X, Y) -> np.ndarray:
        dom = self.setup.domain
        n = dom.n_modes
        D = np.asarray(X) - np.asarray(Y)
        lam = dom.eigenvalues
        return np.sqrt(np.sum(lam * D[..., :n] ** 2 + D[..., n:] ** 2, axis=-1))


@dataclass(eq=False)
class ExtensionState:
    """Coupled pair of the extension chain with its stopping-time bookkeeping."""

    x: np.ndarray
    x_prime: np.ndarray
    n: int = 0
    sigma: int | None = None
    tau: int | None = None
    history: list = field(default_factory=list)


def extension_step(ext: ExtensionState, delta: float, engine: CouplingEngine, rng,
                   r: float = 0.5) -> ExtensionState:
    """One step: coupled noises on the diagonal set {gap <= delta}, independent ones off it.

    sigma records the first step n (after reaching the diagonal set) whose
    gap exceeds r^n * delta; tau the first step at which the pair lies in
    the diagonal set.
    """
    rng = as_generator(rng)
    gap = float(engine.distance(ext.x, ext.x_prime))
    spec = engine.spec
    n = engine.setup.domain.n_modes
    u = (ext.x[:n], ext.x[n:])
    v = (ext.x_prime[:n], ext.x_prime[n:])
    if ext.tau is None and gap <= delta:
        ext.tau = ext.n
    if gap <= delta:
        branch = "diag-coupled"
        try:
            shift = engine.control_shift(u, v)
        except ControlError:
            shift = np.full(spec.b.shape, np.inf)
        if np.all(np.isfinite(shift)):
            draw = sample_coupled_pair(spec, shift, rng)
            theta, theta_p, same = draw.theta, draw.theta_prime, bool(draw.identical_shift)
        else:
            theta, theta_p, same = sample_theta(spec, rng), sample_theta(spec, rng), False
    else:
        branch = "off-diag"
        theta, theta_p, same = sample_theta(spec, rng), sample_theta(spec, rng), False
    X, Y = engine.step_pair(u, v, theta, theta_p)
    new_gap = float(engine.distance(X, Y))
    nxt = ext.n + 1
    sigma = ext.sigma
    if sigma is None and ext.tau is not None and new_gap > r ** nxt * delta:
        sigma = nxt
    hist = ext.history + [dict(n=nxt, gap=new_gap, branch=branch, identical_shift=same)]
    tau = ext.tau if ext.tau is not None or new_gap > delta else nxt
    return ExtensionState(X, Y, nxt, sigma, tau, hist)


@dataclass(eq=False)
class ExtensionRecord:
    gaps: np.ndarray
    branches: list
    identical: np.ndarray
    sigma: int | None
    tau: int | None


def run_extension(x0, x0_prime, n_max: int, delta: float, engine: CouplingEngine, rng,
                  r: float = 0.5) -> ExtensionRecord:
    """Run the coupled chain for n_max steps and collect gaps and stopping times."""
    if n_max < 1:
        raise ValueError("n_max must be at least 1")
    rng = as_generator(rng)
    ext = ExtensionState(np.asarray(x0, dtype=float), np.asarray(x0_prime, dtype=float))
    gap0 = float(engine.distance(ext.x, ext.x_prime))
    for _ in range(n_max):
        ext = extension_step(ext, delta, engine, rng, r)
    gaps = np.array([gap0] + [h["gap"] for h in ext.history])
    return ExtensionRecord(gaps, [h["branch"] for h in ext.history],
                           np.array([h["identical_shift"] for h in ext.history]), ext.sigma, ext.tau)


@dataclass(eq=False)
class FailureCurve:
    """Empirical P(gap_{n+1} > r gap_n) on the diagonal set, regressed on the gap."""

    gaps: np.ndarray
    p_fail: np.ndarray
    stderr: np.ndarray
    p_mismatch: np.ndarray
    n_draws: int
    slope: float
    intercept: float
    intercept_stderr: float

    @property
    def linear(self) -> bool:
        """Positive slope and an intercept within two standard errors of zero."""
        return bool(self.slope > 0 and self.intercept <= 2.0 * self.intercept_stderr)


def coupling_radius(engine: CouplingEngine, u, direction, tv_target: float = 0.2) -> float:
    """Gap along ``direction`` at which the TV bound of the coupled shift reaches ``tv_target``.

    In the constant-shift mode the shift is linear in the gap, so below this
    radius the mismatch probability stays in its linear regime.
    """
    if not 0 < tv_target < 1:
        raise ValueError("tv_target must lie in (0, 1)")
    dom = engine.setup.domain
    n = dom.n_modes
    X = np.asarray(u, dtype=float)
    d = np.asarray(direction, dtype=float)
    d = d / float(engine.distance(d, np.zeros_like(d)))
    h1 = engine.control_shift((X[:n], X[n:]), (X[:n] + d[:n], X[n:] + d[n:]))
    peak = float(np.abs(h1).max())
    if peak == 0:
        return float("inf")
    f = lambda s: tv_shift_estimate(engine.spec, s * h1)[0] - tv_target
    return float(optimize.brentq(f, 0.0, 2.0 / peak, xtol=1e-12))


def coupling_failure_curve(engine: CouplingEngine, u, direction, gaps, n_draws: int, rng,
                           r: float = 0.5) -> FailureCurve:
    """For each gap s, couple (X, X + s d) once (X, d as 2n-vectors) and step n_draws coupled noise pairs."""
    rng = as_generator(rng)
    dom = engine.setup.domain
    n = dom.n_modes
    X = np.asarray(u, dtype=float)
    d = np.asarray(direction, dtype=float)
    d = d / float(engine.distance(d, np.zeros_like(d)))
    gaps = np.asarray(gaps, dtype=float)
    p, mis = np.empty(gaps.size), np.empty(gaps.size)
    for i, s in enumerate(gaps):
        Y = X + s * d
        shift = engine.control_shift((X[:n], X[n:]), (Y[:n], Y[n:]))
        draw = sample_coupled_pair(engine.spec, shift, rng, n_draws)
        A, B = engine.step_pair((X[:n], X[n:]), (Y[:n], Y[n:]), draw.theta, draw.theta_prime)
        ratio = engine.distance(A, B) / s
        p[i] = np.mean(ratio > r)
        mis[i] = 1.0 - np.mean(draw.identical_shift)
    se = np.sqrt(np.maximum(p * (1 - p), 1.0 / n_draws) / n_draws)
    fit = stats.linregress(gaps, p)
    return FailureCurve(gaps, p, se, mis, n_draws, float(fit.slope), float(fit.intercept),
                        float(fit.intercept_stderr))
