"""Time integration of the damped cubic wave equation and its linearizations.

One step of size dt is the Strang composition R(dt/2) K(dt) R(dt/2):

* R is the exact free-wave rotation of every mode,
* K freezes the displacement and integrates the velocity equation
  v' = -A v + g exactly, where A is the Galerkin matrix of the damping
  profile and g collects the cubic (or potential) term and the force,
  both frozen at the step midpoint.

The scheme is second order, symplectic when undamped, and exactly
time reversible: stepping with -dt undoes a step with dt.  The discrete
adjoint of the step is available in closed form, which is what the
control module relies on.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .spectral import Domain, PhaseState, StripProfile, energy

ENERGY_LIMIT = 1e12


class InstabilityError(RuntimeError):
    """Raised when the energy of a run leaves the physically sensible range."""


def time_grid(T: float, dt: float) -> tuple[int, float]:
    """Number of steps and the effective step covering [0, T] uniformly."""
    if T < 0 or dt <= 0:
        raise ValueError("need T >= 0 and dt > 0")
    n = max(1, int(round(T / dt))) if T > 0 else 0
    return n, (T / n if n else dt)


class DampingProfile(StripProfile):
    """Damping coefficient a(x) >= 0, at least a0 = ``level`` on its strip."""


class CutoffProfile(StripProfile):
    """Noise/control cutoff chi(x), at least chi0 = ``level`` on its strip."""


@dataclass(frozen=True)
class SolverConfig:
    dt: float = 1e-3
    cubic: bool = True
    damped: bool = True

    def check(self, domain: Domain):
        limit = 0.5 / np.sqrt(domain.eigenvalues[-1])
        if self.dt <= 0 or self.dt > limit * (1 + 1e-12):
            raise ValueError(f"dt={self.dt} violates the resolution bound dt <= {limit:.6g}")
        return self


@dataclass(frozen=True, eq=False)
class ForceSignal:
    """Spectral force sampled on uniform time nodes, piecewise linear in between.

    ``samples`` has shape (n_nodes, ..., n_modes).
    """

    dt: float
    samples: np.ndarray

    def __post_init__(self):
        s = np.asarray(self.samples, dtype=float)
        if s.ndim < 2 or s.shape[0] < 2:
            raise ValueError("a force signal needs at least two time nodes")
        object.__setattr__(self, "samples", s)

    @classmethod
    def zero(cls, domain: Domain, T: float, dt: float, batch=()):
        n, dt = time_grid(T, dt)
        return cls(dt, np.zeros((n + 1,) + tuple(batch) + (domain.n_modes,)))

    @classmethod
    def from_function(cls, domain: Domain, fn, T: float, dt: float):
        """Sample fn(t) -> coefficient array on the nodes of [0, T]."""
        n, dt = time_grid(T, dt)
        t = dt * np.arange(n + 1)
        return cls(dt, np.stack([np.asarray(fn(tk), dtype=float) for tk in t]))

    @property
    def n_steps(self) -> int:
        return self.samples.shape[0] - 1

    @property
    def T(self) -> float:
        return self.n_steps * self.dt

    @property
    def times(self) -> np.ndarray:
        return self.dt * np.arange(self.n_steps + 1)

    def midpoints(self) -> np.ndarray:
        return 0.5 * (self.samples[1:] + self.samples[:-1])

    def __add__(self, other):
        if other is None:
            return self
        if other.samples.shape[0] != self.samples.shape[0] or not np.isclose(other.dt, self.dt):
            raise ValueError("force signals live on different time grids")
        return ForceSignal(self.dt, self.samples + other.samples)

    __radd__ = __add__

    def __mul__(self, c):
        return ForceSignal(self.dt, c * self.samples)

    __rmul__ = __mul__

    def __neg__(self):
        return ForceSignal(self.dt, -self.samples)

    def __sub__(self, other):
        return self + (-other)

    def l2_norm(self, weights=None) -> np.ndarray:
        """Time-L2 norm (trapezoid) of the weighted spectral L2 norm."""
        w = 1.0 if weights is None else weights
        sq = np.sum(w * self.samples ** 2, axis=-1)
        return np.sqrt(np.trapezoid(sq, dx=self.dt, axis=0))

    def sup_norm(self, domain: Domain, s: float = 0.0) -> np.ndarray:
        """max over nodes of the H^s norm."""
        w = domain.eigenvalues ** s
        return np.sqrt(np.max(np.sum(w * self.samples ** 2, axis=-1), axis=0))


@dataclass(frozen=True, eq=False)
class PotentialPath:
    """Potential p(t, x) of the linearized equation, one grid field per step midpoint."""

    dt: float
    mid: np.ndarray

    @property
    def n_steps(self) -> int:
        return self.mid.shape[0]

    @classmethod
    def zero(cls, domain: Domain, n_steps: int, dt: float):
        return cls(dt, np.zeros((n_steps,) + domain.grid_shape))

    @classmethod
    def from_nodes(cls, dt: float, node_values):
        """Average node samples of p onto step midpoints."""
        node_values = np.asarray(node_values, dtype=float)
        return cls(dt, 0.5 * (node_values[1:] + node_values[:-1]))

    @classmethod
    def from_trajectory(cls, traj: "Trajectory"):
        """p = 3 u^2 along a nonlinear run, using its stored midpoint displacements.

        With the midpoint fields this is the exact tangent of the discrete
        nonlinear step, so linearized runs match finite differences to
        second order in the perturbation.
        """
        if traj.u_mid_grid is not None:
            return cls(traj.dt, 3.0 * traj.u_mid_grid ** 2)
        grid = traj.domain.to_grid(traj.u)
        return cls.from_nodes(traj.dt, 3.0 * grid ** 2)

    def reversed(self):
        return PotentialPath(self.dt, self.mid[::-1])


@dataclass(eq=False)
class Trajectory:
    """States of a run at the stored time nodes.

    u and v have shape (n_stored, ..., n_modes).  ``u_mid_grid`` holds the
    frozen midpoint displacement of every step on the grid when requested.
    """

    domain: Domain
    t: np.ndarray
    u: np.ndarray
    v: np.ndarray
    dt: float
    force: ForceSignal | None = None
    u_mid_grid: np.ndarray | None = field(default=None, repr=False)

    @property
    def final(self) -> PhaseState:
        return PhaseState(self.domain, self.u[-1], self.v[-1])

    @property
    def initial(self) -> PhaseState:
        return PhaseState(self.domain, self.u[0], self.v[0])

    def state(self, i: int) -> PhaseState:
        return PhaseState(self.domain, self.u[i], self.v[i])

    def energies(self) -> np.ndarray:
        return energy(self.domain, self.u, self.v)

    def norms(self, s: float = 0.0) -> np.ndarray:
        lam = self.domain.eigenvalues
        return np.sqrt(np.sum(lam ** (1 + s) * self.u ** 2 + lam ** s * self.v ** 2, axis=-1))

    def to_csv(self, path, precision: int = 17):
        """Columns: t, then the u coefficients, then the v coefficients."""
        if self.u.ndim != 2:
            raise ValueError("only unbatched trajectories can be written as CSV")
        n = self.domain.n_modes
        header = ["t"] + [f"u{j}" for j in range(1, n + 1)] + [f"v{j}" for j in range(1, n + 1)]
        data = np.column_stack([self.t, self.u, self.v])
        np.savetxt(path, data, delimiter=",", header=",".join(header), comments="", fmt=f"%.{precision}g")

    @classmethod
    def from_csv(cls, domain: Domain, path):
        data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
        n = domain.n_modes
        t = data[:, 0]
        dt = float(t[1] - t[0]) if len(t) > 1 else 0.0
        return cls(domain, t, data[:, 1:n + 1], data[:, n + 1:2 * n + 1], dt)


def _phi_weights(mu: np.ndarray, dt: float) -> np.ndarray:
    """(1 - exp(-dt mu)) / mu with the dt limit at mu = 0."""
    small = np.abs(dt * mu) < 1e-8
    safe = np.where(small, 1.0, mu)
    return np.where(small, dt * (1 - 0.5 * dt * mu), -np.expm1(-dt * safe) / safe)


class Stepper:
    """Precomputed pieces of the split step for a fixed (domain, damping, dt).

    A negative dt gives the exact inverse step.
    """

    def __init__(self, domain: Domain, damping: StripProfile | None, dt: float):
        self.domain = domain
        self.dt = float(dt)
        w = domain.frequencies
        half = 0.5 * self.dt
        self.w = w
        self.c = np.cos(w * half)
        self.s = np.sin(w * half)
        n = domain.n_modes
        if damping is None or damping.kind == "zero" or damping.level == 0:
            self.A = np.zeros((n, n))
            self.E = None
            self.Phi = None
            self.phi_scalar = self.dt
        else:
            self.A = damping.matrix(domain)
            mu, Q = np.linalg.eigh(self.A)
            self.E = (Q * np.exp(-self.dt * mu)) @ Q.T
            self.Phi = (Q * _phi_weights(mu, self.dt)) @ Q.T
            self.phi_scalar = None

    def rotate(self, u, v):
        c, s, w = self.c, self.s, self.w
        return c * u + (s / w) * v, -(w * s) * u + c * v

    def rotate_T(self, lu, lv):
        c, s, w = self.c, self.s, self.w
        return c * lu - (w * s) * lv, (s / w) * lu + c * lv

    def apply_E(self, v):
        return v if self.E is None else v @ self.E

    def apply_Phi(self, g):
        return self.phi_scalar * g if self.Phi is None else g @ self.Phi

    def kick(self, v, g):
        if np.isscalar(g) and g == 0:
            return self.apply_E(v)
        return self.apply_E(v) + self.apply_Phi(g)


def _store_plan(store):
    if store == "all":
        return 1
    if store == "final":
        return None
    stride = int(store)
    if stride < 1:
        raise ValueError("store stride must be positive")
    return stride


def _check_energy(domain, u, v, n, dt):
    e = energy(domain, u, v)
    if not np.all(np.isfinite(e)) or np.any(e > ENERGY_LIMIT):
        raise InstabilityError(
            f"energy {np.max(e):.3e} exceeds {ENERGY_LIMIT:.0e} at step {n} (t={n * dt:.6g})"
        )


def _run(domain, stepper, u, v, n_steps, gterm, store, record_mid=False, guard_every=50):
    """Shared loop: ``gterm(n, u_mid, v)`` returns the frozen velocity source.

    The initial and final nodes are always stored; ``store`` picks the
    nodes in between ("all", "final" or an integer stride).
    """
    stride = _store_plan(store)
    us, vs, ts = [u], [v], [0]
    mids = [] if record_mid else None
    for n in range(n_steps):
        u, v = stepper.rotate(u, v)
        if record_mid:
            mids.append(domain.to_grid(u))
        v = stepper.kick(v, gterm(n, u, v))
        u, v = stepper.rotate(u, v)
        if guard_every and ((n + 1) % guard_every == 0 or n + 1 == n_steps):
            _check_energy(domain, u, v, n + 1, stepper.dt)
        last = n + 1 == n_steps
        if last or (stride is not None and (n + 1) % stride == 0):
            us.append(u)
            vs.append(v)
            ts.append(n + 1)
    mid_arr = np.stack(mids) if record_mid and mids else None
    return np.array(ts), np.stack(us), np.stack(vs), mid_arr


def _as_uv(domain, state):
    if isinstance(state, PhaseState):
        return np.array(state.u, dtype=float), np.array(state.v, dtype=float)
    u, v = state
    return np.asarray(u, dtype=float), np.asarray(v, dtype=float)


def evolve(
    domain: Domain,
    u0,
    force: ForceSignal | None = None,
    cfg: SolverConfig = SolverConfig(),
    damping: StripProfile | None = None,
    T: float | None = None,
    store="all",
    record_mid: bool = False,
    force_fn=None,
    stepper: Stepper | None = None,
) -> Trajectory:
    """Solve u_tt - Laplace u + a u_t + u^3 = f from u0 = (u, u_t).

    ``force`` fixes the time grid; without it, T and cfg.dt do.  ``force_fn``
    (optional) adds a feedback force g(t, u, v) evaluated at each step
    midpoint.  Batched initial data (leading axes) are propagated together.
    """
    cfg.check(domain)
    u, v = _as_uv(domain, u0)
    if force is not None:
        n_steps, dt = force.n_steps, force.dt
        if T is not None and T > force.T + 1e-12:
            raise ValueError("force horizon is shorter than the requested span")
        if T is not None:
            n_steps = int(round(T / dt))
        fmid = force.midpoints()
    else:
        if T is None:
            raise ValueError("either a force signal or a horizon T is required")
        n_steps, dt = time_grid(T, cfg.dt)
        fmid = None
    damp = damping if cfg.damped else None
    if stepper is None or not np.isclose(stepper.dt, dt):
        stepper = Stepper(domain, damp, dt)
    cubic = cfg.cubic

    def gterm(n, um, vm):
        g = 0.0
        if cubic:
            g = -domain.to_spectral(domain.to_grid(um) ** 3)
        if fmid is not None:
            g = g + fmid[n]
        if force_fn is not None:
            g = g + force_fn((n + 0.5) * dt, um, vm)
        return g

    ts, us, vs, mids = _run(domain, stepper, u, v, n_steps, gterm, store, record_mid)
    return Trajectory(domain, ts * dt, us, vs, dt, force, mids)


def linear_group(domain: Domain, u0, t: float, damping: StripProfile | None, dt: float = 1e-3,
                 store="final") -> PhaseState | Trajectory:
    """U(t) u0 for the damped linear wave group; negative t runs backward."""
    n_steps, h = time_grid(abs(t), dt)
    h = h if t >= 0 else -h
    stepper = Stepper(domain, damping, h)
    u, v = _as_uv(domain, u0)
    ts, us, vs, _ = _run(domain, stepper, u, v, n_steps, lambda n, a, b: 0.0, store,
                         guard_every=0)
    if store == "final":
        return PhaseState(domain, us[-1], vs[-1])
    return Trajectory(domain, ts * h, us, vs, h)


def _potential_term(domain, potential, n, u):
    if potential is None:
        return 0.0
    return -domain.to_spectral(potential.mid[n] * domain.to_grid(u))


def linearized_forward(domain: Domain, v0, force: ForceSignal | None, potential: PotentialPath | None,
                       damping: StripProfile | None, dt: float | None = None, T: float | None = None,
                       store="all") -> Trajectory:
    """Solve v_tt - Laplace v + b v_t + p v = f forward from v0."""
    n_steps, h = _linear_grid(force, potential, dt, T)
    stepper = Stepper(domain, damping, h)
    fmid = None if force is None else force.midpoints()
    u, v = _as_uv(domain, v0)

    def gterm(n, um, vm):
        g = _potential_term(domain, potential, n, um)
        return g if fmid is None else g + fmid[n]

    ts, us, vs, _ = _run(domain, stepper, u, v, n_steps, gterm, store, guard_every=0)
    return Trajectory(domain, ts * h, us, vs, h, force)


def backward_solve(domain: Domain, vT, force: ForceSignal | None, potential: PotentialPath | None,
                   damping: StripProfile | None, dt: float | None = None, T: float | None = None,
                   store="all") -> Trajectory:
    """Solve the linearized equation backward from v[T] = vT.

    The returned trajectory is ordered by increasing time, so ``initial``
    is v[0].  Composed with linearized_forward it is the identity up to
    rounding.
    """
    n_steps, h = _linear_grid(force, potential, dt, T)
    stepper = Stepper(domain, damping, -h)
    fmid = None if force is None else force.midpoints()
    u, v = _as_uv(domain, vT)

    def gterm(k, um, vm):
        n = n_steps - 1 - k
        g = _potential_term(domain, potential, n, um)
        return g if fmid is None else g + fmid[n]

    ts, us, vs, _ = _run(domain, stepper, u, v, n_steps, gterm, store, guard_every=0)
    t = (n_steps - ts) * h
    return Trajectory(domain, t[::-1], us[::-1], vs[::-1], h, force)


def _linear_grid(force, potential, dt, T):
    if force is not None:
        return force.n_steps, force.dt
    if potential is not None:
        return potential.n_steps, potential.dt
    if T is None or dt is None:
        raise ValueError("a force, a potential, or (T, dt) is required")
    return time_grid(T, dt)


@dataclass(eq=False)
class CostateSweep:
    """Discrete adjoint sweep of the linearized step.

    ``psi[n]`` is the sensitivity of the terminal pairing to the force on
    step n: <lam_T, X_T> = <lam_0, X_0> + sum_n psi[n] . f_mid[n].
    """

    lam0: np.ndarray
    psi: np.ndarray
    lam_u: np.ndarray | None = None
    lam_v: np.ndarray | None = None


def costate_sweep(domain: Domain, lamT, potential: PotentialPath | None, damping: StripProfile | None,
                  dt: float, n_steps: int, keep_path: bool = False, stepper: Stepper | None = None,
                  on_psi=None):
    """Propagate a terminal costate (lam_u, lam_v) through the transposed steps.

    When ``on_psi(k, psi_k)`` is given the sensitivities are handed to it
    instead of being stored.
    """
    stepper = stepper or Stepper(domain, damping, dt)
    lamT = np.asarray(lamT, dtype=float)
    n = domain.n_modes
    lu, lv = lamT[..., :n], lamT[..., n:]
    psi = None if on_psi is not None else np.empty((n_steps,) + lu.shape)
    path_u = [lu] if keep_path else None
    path_v = [lv] if keep_path else None
    for k in range(n_steps - 1, -1, -1):
        a, b = stepper.rotate_T(lu, lv)
        ps = stepper.apply_Phi(b)
        if on_psi is None:
            psi[k] = ps
        else:
            on_psi(k, ps)
        if potential is not None:
            a = a - domain.to_spectral(potential.mid[k] * domain.to_grid(ps))
        b = stepper.apply_E(b)
        lu, lv = stepper.rotate_T(a, b)
        if keep_path:
            path_u.append(lu)
            path_v.append(lv)
    lam0 = np.concatenate([lu, lv], axis=-1)
    if keep_path:
        return CostateSweep(lam0, psi, np.stack(path_u[::-1]), np.stack(path_v[::-1]))
    return CostateSweep(lam0, psi)


def terminal_costate(domain: Domain, phiT, damping: StripProfile | None):
    """Costate carrying the adjoint terminal datum (phi, phi_t) at time T."""
    phi0, phi1 = _as_uv(domain, phiT)
    A = Stepper(domain, damping, 1.0).A
    return np.concatenate([phi0 @ A - phi1, phi0], axis=-1)


def adjoint_solve(domain: Domain, phiT, potential: PotentialPath | None, damping: StripProfile | None,
                  dt: float | None = None, T: float | None = None) -> Trajectory:
    """Solve phi_tt - Laplace phi - a phi_t + p phi = 0 backward from (phi, phi_t) at T.

    Realized as the exact transpose of the forward step, so that the
    duality pairing with linearized_forward holds to rounding.  The
    trajectory stores phi in ``u`` and phi_t in ``v``.
    """
    n_steps, h = _linear_grid(None, potential, dt, T)
    stepper = Stepper(domain, damping, h)
    lamT = terminal_costate(domain, phiT, damping)
    sweep = costate_sweep(domain, lamT, potential, damping, h, n_steps, keep_path=True, stepper=stepper)
    phi = sweep.lam_v
    phi_t = phi @ stepper.A - sweep.lam_u
    t = h * np.arange(n_steps + 1)
    return Trajectory(domain, t, phi, phi_t, h)


def flux_residual(domain: Domain, traj: Trajectory, force: ForceSignal | None,
                  damping: StripProfile | None) -> np.ndarray:
    """|E(T) - E(0) + int int a u_t^2 - int int f u_t| by the trapezoid rule."""
    e = energy(domain, traj.u, traj.v)
    A = Stepper(domain, damping, traj.dt).A
    diss = np.einsum("t...i,ij,t...j->t...", traj.v, A, traj.v)
    dissipated = np.trapezoid(diss, x=traj.t, axis=0)
    if force is None:
        work = 0.0
    else:
        if force.samples.shape[0] != traj.u.shape[0]:
            raise ValueError("trajectory must be stored at every force node")
        work = np.trapezoid(np.sum(force.samples * traj.v, axis=-1), x=traj.t, axis=0)
    return np.abs(e[-1] - e[0] + dissipated - work)


def lq_lr_norm(domain: Domain, traj: Trajectory, q: float, r: float) -> np.ndarray:
    """Mixed norm ||u||_{L^q(0,T; L^r)}; trapezoid in time, midpoint in space."""
    if q < 1 or r < 1:
        raise ValueError("exponents must be at least 1")
    g = np.abs(domain.to_grid(traj.u))
    if np.isinf(r):
        spatial = np.max(g.reshape(g.shape[: g.ndim - domain.dim] + (-1,)), axis=-1)
    else:
        spatial = domain.integrate(g ** r) ** (1.0 / r)
    if np.isinf(q):
        return np.max(spatial, axis=0)
    if len(traj.t) < 2:
        return np.zeros(spatial.shape[1:])
    return np.trapezoid(spatial ** q, x=traj.t, axis=0) ** (1.0 / q)


def semigroup_norm(domain: Domain, damping: StripProfile | None, times, dt: float = 1e-2, s: float = 0.0):
    """Operator norm of U(t) on H^{1+s} x H^s at the requested times."""
    times = np.asarray(times, dtype=float)
    n = domain.n_modes
    lam = domain.eigenvalues
    scale = np.concatenate([lam ** (0.5 + 0.5 * s), lam ** (0.5 * s)])
    X = np.diag(1.0 / scale)
    out = []
    _, h = time_grid(times.max(), dt)
    stepper = Stepper(domain, damping, h)
    u, v = X[:, :n], X[:, n:]
    node = 0
    for t in times:
        target = int(round(t / h))
        for _ in range(target - node):
            u, v = stepper.rotate(u, v)
            v = stepper.kick(v, 0.0)
            u, v = stepper.rotate(u, v)
        node = target
        Y = np.concatenate([u, v], axis=-1) * scale
        out.append(np.linalg.norm(Y, 2))
    return np.array(out)


def generator_matrix(domain: Domain, damping: StripProfile | None) -> np.ndarray:
    """First-order generator [[0, I], [-Lambda, -A]] of the damped linear wave."""
    n = domain.n_modes
    A = Stepper(domain, damping, 1.0).A
    B = np.zeros((2 * n, 2 * n))
    B[:n, n:] = np.eye(n)
    B[n:, :n] = -np.diag(domain.eigenvalues)
    B[n:, n:] = -A
    return B
