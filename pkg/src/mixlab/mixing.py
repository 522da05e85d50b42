"""Markov chain driver, dissipation diagnostics and mixing estimators."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import optimize, stats

from .dynamics import ForceSignal, SolverConfig, Stepper, evolve, linear_group, time_grid
from .noise import NoiseSpec, check_amplitude_constraint, noise_from_theta, sample_theta
from .spectral import Domain, StripProfile, energy
from .streams import as_generator

REGULARITY = 4.0 / 7.0


def _split(domain: Domain, X):
    n = domain.n_modes
    X = np.asarray(X, dtype=float)
    return X[..., :n], X[..., n:]


def hnorm(domain: Domain, X, s: float = 0.0) -> np.ndarray:
    u, v = _split(domain, X)
    lam = domain.eigenvalues
    return np.sqrt(np.sum(lam ** (1 + s) * u ** 2 + lam ** s * v ** 2, axis=-1))


@dataclass(eq=False)
class ChainRun:
    """States u^0..u^n (as 2n-vectors, batched) and the coefficients of every noise draw."""

    domain: Domain
    states: np.ndarray
    thetas: np.ndarray
    T: float
    seed: object = None
    failed_step: int | None = None

    def energies(self) -> np.ndarray:
        u, v = _split(self.domain, self.states)
        return energy(self.domain, u, v)


def markov_chain(domain: Domain, u0, spec: NoiseSpec, n: int, rng, dt: float,
                 damping: StripProfile | None, B0: float | None = None, cubic: bool = True,
                 seed=None) -> ChainRun:
    """n steps of u^{k+1} = S(u^k, eta_k) with fresh noise blocks (batched over leading axes of u0)."""
    if B0 is not None:
        if not check_amplitude_constraint(spec, B0)[1]:
            raise ValueError("noise amplitudes violate the amplitude constraint")
    gen = as_generator(rng)
    X = np.asarray(u0, dtype=float)
    batch = X.shape[:-1]
    cfg = SolverConfig(dt, cubic=cubic)
    stepper = Stepper(domain, damping, time_grid(spec.T, dt)[1])
    states = [X]
    thetas = []
    failed = None
    for k in range(n):
        theta = sample_theta(spec, gen, batch)
        f = noise_from_theta(spec, theta, dt)
        u, v = _split(domain, X)
        try:
            run = evolve(domain, (u, v), f, cfg, damping, store="final", stepper=stepper)
        except RuntimeError:
            failed = k
            break
        X = np.concatenate([run.u[-1], run.v[-1]], axis=-1)
        states.append(X)
        thetas.append(theta)
    th = np.stack(thetas) if thetas else np.zeros((0,) + batch + spec.b.shape)
    return ChainRun(domain, np.stack(states), th, spec.T, seed, failed)


def chain_trajectory(domain: Domain, chain: ChainRun, spec: NoiseSpec, dt: float, damping, stride: int = 10):
    """Re-run a stored (unbatched) chain and return times and states at a fine stride."""
    cfg = SolverConfig(dt)
    ts, Xs = [0.0], [chain.states[0]]
    X = chain.states[0]
    for k, theta in enumerate(chain.thetas):
        f = noise_from_theta(spec, theta, dt)
        u, v = _split(domain, X)
        run = evolve(domain, (u, v), f, cfg, damping, store=stride)
        block = np.concatenate([run.u, run.v], axis=-1)
        ts.extend(list(k * spec.T + run.t[1:]))
        Xs.extend(list(block[1:]))
        X = block[-1]
    return np.array(ts), np.array(Xs)


@dataclass(frozen=True)
class DecayFit:
    """value(t) ~ C exp(-rate t) fitted on log values."""

    C: float
    rate: float
    residual: float
    window: tuple
    stderr: float = np.nan


def fit_exponential_decay(t, values, window=None) -> DecayFit:
    """Least squares of log(values) against t (optionally restricted to a window)."""
    t = np.asarray(t, dtype=float)
    y = np.asarray(values, dtype=float)
    if window is not None:
        keep = (t >= window[0]) & (t <= window[1])
        t, y = t[keep], y[keep]
    if t.size < 5:
        raise ValueError("at least 5 points are needed for a decay fit")
    if np.any(y <= 0) or not np.all(np.isfinite(y)):
        raise ValueError("decay fits need positive finite values")
    res = stats.linregress(t, np.log(y))
    resid = np.log(y) - (res.intercept + res.slope * t)
    rate = -res.slope
    return DecayFit(float(np.exp(res.intercept)), float(rate if rate != 0 else 0.0),
                    float(np.sqrt(np.mean(resid ** 2))), (float(t[0]), float(t[-1])), float(res.stderr))


@dataclass(eq=False)
class MonotonicityReport:
    T0: float
    varpi: float
    energies: np.ndarray
    final_energies: np.ndarray
    violations: np.ndarray
    A0: float


def state_with_energy(domain: Domain, shape, E: float) -> np.ndarray:
    """Scale a fixed 2n-vector so that its energy equals E (the energy is increasing in the scale)."""
    shape = np.asarray(shape, dtype=float)
    u, v = _split(domain, shape)
    f = lambda c: float(energy(domain, c * u, c * v)) - E
    hi = 1.0
    while f(hi) < 0:
        hi *= 2.0
    c = optimize.brentq(f, 0.0, hi, xtol=1e-14, rtol=1e-14)
    return c * shape


def worst_case_force(domain: Domain, R1: float):
    """Feedback force of L2 size R1 aligned with u_t: maximizes the energy input rate."""
    def fn(t, u, v):
        nv = np.sqrt(np.sum(v ** 2, axis=-1, keepdims=True))
        return R1 * np.where(nv > 0, v / np.where(nv > 0, nv, 1.0), 0.0)
    return fn


def discrete_monotonicity_scan(domain: Domain, T0: float, varpi: float, energy_grid, damping,
                               R1: float, dt: float, shapes=None, rng=0) -> MonotonicityReport:
    """Check E(T0) <= varpi E(0) under the worst-case force of size R1, per grid energy.

    A0 is the smallest grid energy above which no violation occurs (inf if the
    largest energy still violates).
    """
    if T0 <= 0 or not 0 < varpi < 1:
        raise ValueError("need T0 > 0 and varpi in (0, 1)")
    n = domain.n_modes
    lam = domain.eigenvalues
    if shapes is None:
        g = as_generator(rng)
        shapes = np.concatenate([g.standard_normal((3, n)) * lam ** -1.0, g.standard_normal((3, n)) * lam ** -0.5], axis=1)
    grid = np.sort(np.asarray(energy_grid, dtype=float))
    force = worst_case_force(domain, R1) if R1 > 0 else None
    finals = np.empty((grid.size, len(shapes)))
    for i, E in enumerate(grid):
        X = np.stack([state_with_energy(domain, s, E) for s in shapes])
        u, v = _split(domain, X)
        run = evolve(domain, (u, v), cfg=SolverConfig(dt), damping=damping, T=T0, store="final", force_fn=force)
        finals[i] = energy(domain, run.u[-1], run.v[-1])
    viol = np.any(finals > varpi * grid[:, None], axis=1)
    if not viol.any():
        A0 = float(grid[0])
    elif viol[-1]:
        A0 = float("inf")
    else:
        A0 = float(grid[np.flatnonzero(viol)[-1] + 1])
    return MonotonicityReport(T0, varpi, grid, finals, viol, A0)


@dataclass(frozen=True)
class MultiplierReport:
    K0: float
    lhs: float
    rhs: float
    terms: dict = field(default_factory=dict)


def multiplier_inequality_check(domain: Domain, traj, force: ForceSignal | None, damping) -> MultiplierReport:
    """Smallest K0 with int E dt <= K0 [E(T) + int a u_t^2 + int (u^2 + |f u_t| + f^2)] on this run."""
    t = traj.t
    E = energy(domain, traj.u, traj.v)
    A = Stepper(domain, damping, 1.0).A
    diss = np.einsum("ti,ij,tj->t", traj.v, A, traj.v)
    u2 = np.sum(traj.u ** 2, axis=-1)
    if force is None:
        fu = np.zeros_like(t)
        f2 = np.zeros_like(t)
    else:
        fg = domain.to_grid(force.samples)
        vg = domain.to_grid(traj.v)
        fu = domain.integrate(np.abs(fg * vg))
        f2 = np.sum(force.samples ** 2, axis=-1)
    trap = lambda y: float(np.trapezoid(y, x=t))
    lhs = trap(E)
    terms = dict(final_energy=float(E[-1]), dissipation=trap(diss), u2=trap(u2), fu=trap(fu), f2=trap(f2))
    rhs = sum(terms.values())
    if lhs == 0:
        return MultiplierReport(0.0, 0.0, rhs, terms)
    return MultiplierReport(lhs / rhs if rhs > 0 else float("inf"), lhs, rhs, terms)


def dist_to_ball(domain: Domain, X, R: float, s: float = REGULARITY) -> np.ndarray:
    """H-distance from X to the ball {||Y||_{H^s} <= R}.

    The minimizer shrinks each coordinate by 1/(1 + mu lambda_j^s) with the
    multiplier mu fixed by the constraint.
    """
    X = np.atleast_2d(np.asarray(X, dtype=float))
    lam = domain.eigenvalues
    n = domain.n_modes
    hw = np.concatenate([lam, np.ones(n)])
    ratio = np.concatenate([lam ** s, lam ** s])
    out = np.empty(X.shape[0])
    for i, x in enumerate(X):
        sq = np.sum(hw * ratio * x ** 2)
        if sq <= R ** 2:
            out[i] = 0.0
            continue
        if R == 0:
            out[i] = np.sqrt(np.sum(hw * x ** 2))
            continue
        g = lambda mu: np.sum(hw * ratio * (x / (1 + mu * ratio)) ** 2) - R ** 2
        hi = 1.0
        while g(hi) > 0:
            hi *= 4.0
        mu = optimize.brentq(g, 0.0, hi, xtol=1e-15, rtol=1e-14)
        y = x / (1 + mu * ratio)
        out[i] = np.sqrt(np.sum(hw * (x - y) ** 2))
    return out


@dataclass(eq=False)
class SplittingReport:
    t: np.ndarray
    w_norm: np.ndarray
    running_max: np.ndarray
    linear_norm: np.ndarray
    distance: np.ndarray


def splitting_bound(domain: Domain, t, states, damping, dt: float, s: float = REGULARITY) -> SplittingReport:
    """w[t] = u[t] - U(t) u^0 along a stored run; its H^s norm, running max and the distance to that ball."""
    t = np.asarray(t, dtype=float)
    X = np.asarray(states, dtype=float)
    n = domain.n_modes
    h = t[1] - t[0]
    stride = int(round(h / dt))
    steps, _ = time_grid(t[-1], dt)
    lin = linear_group(domain, (X[0, :n], X[0, n:]), t[-1], damping, dt=t[-1] / steps, store=stride)
    Z = np.concatenate([lin.u, lin.v], axis=-1)
    if Z.shape[0] != X.shape[0]:
        raise ValueError("stored states are not on a uniform stride of the solver step")
    W = X - Z
    w_norm = hnorm(domain, W, s)
    run_max = np.maximum.accumulate(w_norm)
    dist = dist_to_ball(domain, X, run_max[-1], s)
    return SplittingReport(t, w_norm, run_max, hnorm(domain, Z), dist)


def wasserstein1_1d(a, b) -> float:
    """W1 between two empirical measures on the line."""
    a = np.asarray(a, dtype=float).ravel()
    b = np.asarray(b, dtype=float).ravel()
    if a.size == 0 or b.size == 0:
        raise ValueError("empty sample")
    return float(stats.wasserstein_distance(a, b))


@dataclass(frozen=True)
class Observable:
    """Named functional on phase space with a declared Lipschitz constant in the H metric."""

    name: str
    fn: object
    lipschitz: float

    def __call__(self, X):
        return self.fn(X)


def default_observables(domain: Domain, clip: float = 10.0) -> list:
    """Bounded Lipschitz observables: clipped low-mode coordinates, clipped norm, clipped point value."""
    n = domain.n_modes
    lam = domain.eigenvalues
    cl = lambda y: np.clip(y, -clip, clip)
    obs = [
        Observable("u1", lambda X: cl(np.sqrt(lam[0]) * np.asarray(X)[..., 0]), 1.0),
        Observable("v1", lambda X: cl(np.asarray(X)[..., n]), 1.0),
        Observable("norm", lambda X: np.minimum(hnorm(domain, X), clip), 1.0),
    ]
    if n > 1:
        obs.append(Observable("u2", lambda X: cl(np.sqrt(lam[1]) * np.asarray(X)[..., 1]), 1.0))
    if domain.dim == 1:
        L = domain.lengths[0]
        x0 = 0.75 * L
        e = np.sqrt(2.0 / L) * np.sin(domain.mode_indices[:, 0] * np.pi * x0 / L)
        lip = float(np.sqrt(np.sum(e ** 2 / lam)))
        obs.append(Observable("point", lambda X: cl(np.asarray(X)[..., :n] @ e), lip))
    return obs


def lipschitz_spot_check(domain: Domain, obs: Observable, X, Y) -> bool:
    """|f(x) - f(y)| <= L ||x - y||_H on every given pair."""
    gap = hnorm(domain, np.asarray(X) - np.asarray(Y))
    diff = np.abs(obs(X) - obs(Y))
    return bool(np.all(diff <= obs.lipschitz * gap * (1 + 1e-12) + 1e-15))


@dataclass(eq=False)
class MixingReport:
    steps: np.ndarray
    distances: dict
    fits: dict
    floor: dict
    reliable: dict

    @property
    def best_rate(self) -> float:
        rates = [f.rate for k, f in self.fits.items() if f is not None and self.reliable[k]]
        return max(rates) if rates else float("nan")


def mc_floor(sample, n_boot: int = 20, rng=0) -> float:
    """Typical W1 between two independent half-size resamples of one sample."""
    g = as_generator(rng)
    x = np.asarray(sample, dtype=float).ravel()
    vals = []
    for _ in range(n_boot):
        p = g.permutation(x.size)
        half = x.size // 2
        vals.append(wasserstein1_1d(x[p[:half]], x[p[half:2 * half]]))
    return float(np.mean(vals) / np.sqrt(2.0))


def mixing_rate(steps, ensembles_a, ensembles_b, observables, floor_factor: float = 3.0) -> MixingReport:
    """W1 between pushforward laws step by step, and an exponential fit per observable.

    ``ensembles_a``/``ensembles_b`` have shape (n_steps, R, dim); the fit uses
    the steps where the distance is above ``floor_factor`` times the Monte
    Carlo floor.  A fit is marked unreliable when fewer than 5 such steps exist.
    """
    steps = np.asarray(steps, dtype=float)
    dists, fits, floors, reliable = {}, {}, {}, {}
    for ob in observables:
        fa, fb = ob(ensembles_a), ob(ensembles_b)
        d = np.array([wasserstein1_1d(fa[k], fb[k]) for k in range(len(steps))])
        floor = mc_floor(fb[-1])
        keep = d > floor_factor * floor
        # the fit window is the initial stretch above the floor
        stop = np.argmin(keep) if not keep.all() else keep.size
        dists[ob.name] = d
        floors[ob.name] = floor
        if stop >= 5:
            fits[ob.name] = fit_exponential_decay(steps[:stop], d[:stop])
            reliable[ob.name] = True
        else:
            fits[ob.name] = None
            reliable[ob.name] = False
    return MixingReport(steps, dists, fits, floors, reliable)


@dataclass(eq=False)
class LimitReport:
    time_average: float
    last_quarter_average: float
    mean: float
    lln_stderr: float
    lln_ok: bool
    sigma2: float
    ks_pvalue: float
    clt_ok: bool


def batch_means_variance(x, n_batches: int = 20) -> float:
    """Asymptotic variance of a stationary series via nonoverlapping batch means."""
    x = np.asarray(x, dtype=float)
    size = x.size // n_batches
    if size < 2:
        return float(np.var(x))
    means = x[: size * n_batches].reshape(n_batches, size).mean(axis=1)
    return float(size * np.var(means, ddof=1))


def lln_clt_check(values, mean: float | None = None, alpha: float = 0.01) -> LimitReport:
    """LLN and CLT diagnostics for f along chains; ``values`` has shape (R, n) or (n,).

    LLN: the last-quarter time average of the first chain lies within 3
    standard errors (batch means) of ``mean`` (or of the pooled average).
    CLT: over the R chains, n^{-1/2} sum (f - mean) passes a KS test against
    the fitted normal law; its variance is the reported sigma_f^2.
    """
    vals = np.atleast_2d(np.asarray(values, dtype=float))
    R, n = vals.shape
    if n < 4:
        raise ValueError("chains are too short")
    mu = float(vals.mean()) if mean is None else float(mean)
    x = vals[0]
    q = x[3 * n // 4:]
    s2 = batch_means_variance(x)
    se = np.sqrt(max(s2, 0.0) / q.size)
    last = float(q.mean())
    lln_ok = bool(abs(last - mu) <= 3 * se) if se > 0 else bool(np.isclose(last, mu))
    sums = (vals - mu).sum(axis=1) / np.sqrt(n)
    sigma2 = float(np.var(sums, ddof=1)) if R > 1 else s2
    if R > 2 and sigma2 > 0:
        p = float(stats.kstest((sums - sums.mean()) / np.sqrt(sigma2), "norm").pvalue)
    else:
        p = 1.0
    return LimitReport(float(x.mean()), last, mu, float(se), lln_ok, sigma2, p, bool(p > alpha))
