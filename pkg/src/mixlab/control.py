"""Frequency projections, observability Gramians and HUM controls.

Controls live on the block zeta = sum_{j <= Nx, k <= N} Z_jk e_j alpha_k^T(t)
and act through the cutoff, f = chi * zeta.  Everything is assembled from
the discrete adjoint of the time stepper, so the low-mode endpoint
conditions hold to rounding rather than to discretization accuracy.

Coordinates of the terminal datum are q = (q1, q2) in H_m x H_m, paired
with the endpoint as <v[T], q> = <v(T), q1> + <v_t(T), q2>.  The matching
adjoint terminal datum is phi^T = (q2, -q1 + A q2) with A the damping
operator.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
from scipy import linalg

from .dynamics import (
    ForceSignal,
    PotentialPath,
    Stepper,
    costate_sweep,
    evolve,
    linear_group,
    linearized_forward,
    SolverConfig,
    time_grid,
)
from .noise import TimeBasis, block_signal
from .spectral import Domain, PhaseState, StripProfile

CONTROL_EXPONENT = 0.2


class ControlError(RuntimeError):
    """Raised when a control problem is not certified or cannot be solved."""


@dataclass(frozen=True)
class FrequencyCut:
    """m low modes to steer, N x N block of controls, weight exponent s."""

    m: int
    N: int
    s: float = CONTROL_EXPONENT

    def validate(self, domain: Domain):
        if not 1 <= self.m <= domain.n_modes:
            raise ValueError(f"need 1 <= m <= {domain.n_modes}")
        if self.N < 1:
            raise ValueError("need N >= 1")
        return self

    def spatial_size(self, domain: Domain) -> int:
        return min(self.N, domain.n_modes)


def project_modes(state: PhaseState, m: int) -> PhaseState:
    """P_m: keep the first m modes (eigenvalue order) of both components."""
    keep = np.arange(state.domain.n_modes) < m
    return PhaseState(state.domain, state.u * keep, state.v * keep)


def time_mass_apply(x: np.ndarray, dt: float) -> np.ndarray:
    """Mass matrix of piecewise-linear functions on uniform nodes, applied along axis 0."""
    x = np.asarray(x, dtype=float)
    out = 2.0 * x
    out[1:-1] *= 2.0
    out[:-1] += x[1:]
    out[1:] += x[:-1]
    return out * (dt / 6.0)


def time_space_inner(f: ForceSignal, g: ForceSignal) -> float:
    """L2 inner product over (0, T) x D of two piecewise-linear signals."""
    return float(np.sum(f.samples * time_mass_apply(g.samples, f.dt)))


def project_time_space(f: ForceSignal, N: int, T: float | None = None) -> ForceSignal:
    """Orthogonal projection onto span{e_j alpha_k^T : j, k <= N}.

    Orthogonality is taken in the exact L2 inner product of piecewise-linear
    signals, so the map is idempotent and self-adjoint to rounding.
    """
    T = f.T if T is None else T
    t = f.times
    basis = TimeBasis(N, T)
    alpha = basis.values(t)
    Malpha = time_mass_apply(alpha, f.dt)
    gram = alpha.T @ Malpha
    nx = min(N, f.samples.shape[-1])
    coef = np.einsum("tk,t...j->...jk", Malpha, f.samples[..., :nx])
    coef = np.linalg.solve(gram, np.moveaxis(coef, -1, 0).reshape(N, -1)).reshape(
        (N,) + coef.shape[:-1]
    )
    coef = np.moveaxis(coef, 0, -1)
    out = np.zeros_like(f.samples)
    out[..., :nx] = np.einsum("tk,...jk->t...j", alpha, coef)
    return ForceSignal(f.dt, out)


@dataclass(eq=False)
class ObservationGramian:
    """Quadratic part of the HUM functional on the 2m terminal coordinates."""

    matrix: np.ndarray
    metric: np.ndarray
    T: float
    m: int
    N: int

    @cached_property
    def min_eig(self) -> float:
        return observability_min_eig(self)


def observability_min_eig(G: ObservationGramian, tol: float = 1e-10) -> float:
    """Smallest eigenvalue of G relative to the H^{-6/5} norm of phi^T."""
    A = 0.5 * (G.matrix + G.matrix.T)
    scale = max(1.0, np.abs(A).max())
    if np.linalg.eigvalsh(A)[0] < -tol * scale:
        raise ControlError("Gramian is not positive semidefinite")
    vals = linalg.eigh(A, G.metric, eigvals_only=True)
    return float(max(vals[0], 0.0)) if vals[0] > -tol * scale else float(vals[0])


@dataclass(eq=False)
class ControlResult:
    """HUM control on the block plus the dual variable and its cost."""

    Z: np.ndarray
    q: np.ndarray
    cost: float
    problem: "ControlProblem" = field(repr=False)

    def forcing(self) -> ForceSignal:
        """chi * zeta on the solver nodes."""
        return self.problem.forcing(self.Z)

    def zeta(self) -> ForceSignal:
        """zeta itself (before the cutoff) on the solver nodes."""
        return self.problem.zeta(self.Z)


class ControlProblem:
    """Low-mode control of the linearized equation around a fixed potential.

    The map Z -> P_m X(T) is affine: P_m X(T) = L X(0) + F Z, with F and L
    read off the discrete adjoint sweep of the 2m unit terminal costates.
    """

    def __init__(self, domain: Domain, damping: StripProfile | None, cutoff: StripProfile, T: float,
                 dt: float, cut: FrequencyCut, potential: PotentialPath | None = None,
                 chi_matrix: np.ndarray | None = None):
        cut.validate(domain)
        self.domain = domain
        self.damping = damping
        self.cutoff = cutoff
        self.cut = cut
        self.n_steps, self.dt = time_grid(T, dt)
        self.T = T
        if potential is not None and potential.n_steps != self.n_steps:
            raise ValueError("potential path does not match the time grid")
        self.potential = potential
        self.stepper = Stepper(domain, damping, self.dt)
        self.basis = TimeBasis(cut.N, T)
        self.nx = cut.spatial_size(domain)
        chi = cutoff.matrix(domain) if chi_matrix is None else chi_matrix
        self.chi_rows = chi[: self.nx]
        self.weights = domain.eigenvalues[: self.nx] ** cut.s

    @cached_property
    def _abar(self) -> np.ndarray:
        t = self.dt * np.arange(self.n_steps + 1)
        a = self.basis.values(t)
        return 0.5 * (a[1:] + a[:-1])

    @cached_property
    def _sweep(self):
        n, m = self.domain.n_modes, self.cut.m
        lamT = np.zeros((2 * m, 2 * n))
        lamT[np.arange(m), np.arange(m)] = 1.0
        lamT[m + np.arange(m), n + np.arange(m)] = 1.0
        F = np.zeros((2 * m, self.nx, self.cut.N))
        abar = self._abar
        chiT = self.chi_rows.T

        def accumulate(k, psi):
            F[...] += np.einsum("qj,k->qjk", psi @ chiT, abar[k])

        sweep = costate_sweep(self.domain, lamT, self.potential, self.damping, self.dt, self.n_steps,
                              stepper=self.stepper, on_psi=accumulate)
        return F, sweep.lam0

    @property
    def F(self) -> np.ndarray:
        """Sensitivity of the 2m low-mode endpoint coordinates to Z, shape (2m, Nx, N)."""
        return self._sweep[0]

    @property
    def L(self) -> np.ndarray:
        """Low-mode endpoint coordinates as a linear map of the initial state."""
        return self._sweep[1]

    def metric(self) -> np.ndarray:
        """H^{-6/5} Gram matrix of phi^T = (q2, -q1 + A q2) in the q coordinates."""
        n, m = self.domain.n_modes, self.cut.m
        lam = self.domain.eigenvalues
        B = np.zeros((2 * n, 2 * m))
        B[np.arange(m), m + np.arange(m)] = 1.0
        B[n + np.arange(m), np.arange(m)] = -1.0
        B[n:, m:] += self.stepper.A[:, :m]
        w = np.concatenate([lam ** (-self.cut.s), lam ** (-1.0 - self.cut.s)])
        return B.T @ (w[:, None] * B)

    @cached_property
    def gramian(self) -> ObservationGramian:
        F = self.F
        G = np.einsum("qjk,j,pjk->qp", F, 1.0 / self.weights, F)
        return ObservationGramian(0.5 * (G + G.T), self.metric(), self.T, self.cut.m, self.cut.N)

    def endpoint_coordinates(self, X0, Z=None) -> np.ndarray:
        """P_m X(T) in the (u_1..u_m, v_1..v_m) coordinates."""
        out = np.asarray(X0) @ self.L.T
        if Z is not None:
            out = out + np.einsum("qjk,...jk->...q", self.F, Z)
        return out

    def solve(self, residual, min_eig_tol: float = 1e-12) -> ControlResult:
        """Least-cost Z with F Z = residual (batched over leading axes)."""
        G = self.gramian
        if G.min_eig <= min_eig_tol:
            raise ControlError(
                f"observability not certified: min eigenvalue {G.min_eig:.3e} at T={self.T}, "
                f"m={self.cut.m}, N={self.cut.N}"
            )
        cond = np.linalg.cond(G.matrix)
        if not np.isfinite(cond) or cond > 1e14:
            raise ControlError(f"Gramian is numerically singular (condition number {cond:.3e})")
        residual = np.asarray(residual, dtype=float)
        q = np.linalg.solve(G.matrix, residual.reshape(-1, residual.shape[-1]).T).T
        q = q.reshape(residual.shape)
        Z = np.einsum("qjk,...q->...jk", self.F, q) / self.weights[:, None]
        cost = np.sum(self.weights[:, None] * Z ** 2, axis=(-2, -1))
        return ControlResult(Z, q, cost, self)

    def forcing(self, Z) -> ForceSignal:
        return block_signal(self.chi_rows, np.asarray(Z), self.basis, self.dt)

    def zeta(self, Z) -> ForceSignal:
        eye = np.eye(self.domain.n_modes)[: self.nx]
        return block_signal(eye, np.asarray(Z), self.basis, self.dt)

    def cost(self, Z) -> np.ndarray:
        """int_0^T ||zeta||^2_{H^{1/5}} dt of a block control."""
        return np.sum(self.weights[:, None] * np.asarray(Z) ** 2, axis=(-2, -1))

    def free_linear_endpoint(self, X0) -> np.ndarray:
        """U(T) X0 for the damped linear group on the same time grid."""
        n = self.domain.n_modes
        X0 = np.asarray(X0, dtype=float)
        st = linear_group(self.domain, (X0[..., :n], X0[..., n:]), self.T, self.damping, self.dt)
        return np.concatenate([st.u, st.v], axis=-1)

    def low(self, X) -> np.ndarray:
        n, m = self.domain.n_modes, self.cut.m
        X = np.asarray(X)
        return np.concatenate([X[..., :m], X[..., n:n + m]], axis=-1)

    @cached_property
    def control_operator(self) -> "ControlOperator":
        """Matrix of v0 -> Z with P_m v[T] = P_m U(T) v0."""
        n = self.domain.n_modes
        eye = np.eye(2 * n)
        target = self.low(self.free_linear_endpoint(eye)) - self.endpoint_coordinates(eye)
        res = self.solve(target)
        return ControlOperator(np.moveaxis(res.Z, 0, -1), self)


@dataclass(eq=False)
class ControlOperator:
    """Linear map from a phase-space gap (2n coefficients) to the control block."""

    matrix: np.ndarray  # shape (Nx, N, 2n)
    problem: ControlProblem = field(repr=False)

    def __call__(self, X0) -> np.ndarray:
        return np.einsum("jkp,...p->...jk", self.matrix, np.asarray(X0, dtype=float))

    @property
    def norm(self) -> float:
        return float(np.linalg.norm(self.matrix.reshape(-1, self.matrix.shape[-1]), 2))


def assemble_gramian(domain: Domain, potential: PotentialPath | None, T: float, cut: FrequencyCut,
                     damping: StripProfile | None, cutoff: StripProfile, dt: float) -> ObservationGramian:
    return ControlProblem(domain, damping, cutoff, T, dt, cut, potential).gramian


def _vec(domain, v0) -> np.ndarray:
    if isinstance(v0, PhaseState):
        return v0.to_vector()
    if isinstance(v0, tuple) and len(v0) == 2:
        return np.concatenate([np.asarray(v0[0], dtype=float), np.asarray(v0[1], dtype=float)], axis=-1)
    return np.asarray(v0, dtype=float)


def hum_min_norm_control(problem: ControlProblem, v0, target=None) -> ControlResult:
    """Least-cost control steering P_m v[T] of the linearized equation to ``target`` (0 by default)."""
    X0 = _vec(problem.domain, v0)
    residual = -problem.endpoint_coordinates(X0)
    if target is not None:
        residual = residual + np.asarray(target)
    return problem.solve(residual)


@dataclass(eq=False)
class ContractionResult:
    Z: np.ndarray
    trajectory: object
    ratio: float
    low_mode_error: float
    cost: float


def contractibility_control(problem: ControlProblem, v0) -> ContractionResult:
    """Control with P_m v[T] = P_m U(T) v0, and the achieved contraction ratio."""
    X0 = _vec(problem.domain, v0)
    n = problem.domain.n_modes
    Z = problem.control_operator(X0)
    traj = linearized_forward(problem.domain, (X0[:n], X0[n:]), problem.forcing(Z), problem.potential,
                              problem.damping, store="final")
    XT = np.concatenate([traj.u[-1], traj.v[-1]])
    UT = problem.free_linear_endpoint(X0)
    lam = problem.domain.eigenvalues
    hnorm = lambda x: np.sqrt(np.sum(lam * x[:n] ** 2 + x[n:] ** 2))
    n0 = hnorm(X0)
    ratio = 0.0 if n0 == 0 else hnorm(XT) / n0
    low_err = np.abs(problem.low(XT) - problem.low(UT)).max()
    low_err = 0.0 if n0 == 0 else low_err / n0
    return ContractionResult(Z, traj, float(ratio), float(low_err), float(problem.cost(Z)))


@dataclass(eq=False)
class SqueezeReport:
    input_gap: float
    output_gap: float
    ratio: float
    cost: float
    d: float
    Z: np.ndarray = field(repr=False)


@dataclass(eq=False)
class SqueezeSetup:
    """Everything fixed across squeezing runs: geometry, horizon and cut."""

    domain: Domain
    damping: StripProfile
    cutoff: StripProfile
    T: float
    dt: float
    cut: FrequencyCut

    @cached_property
    def chi_matrix(self) -> np.ndarray:
        return self.cutoff.matrix(self.domain)

    def reference(self, uhat0, h: ForceSignal | None):
        """Reference run S(uhat0, h) with the midpoint fields for exact linearization."""
        cfg = SolverConfig(self.dt)
        if h is None:
            return evolve(self.domain, uhat0, cfg=cfg, damping=self.damping, T=self.T, store="final",
                          record_mid=True)
        return evolve(self.domain, uhat0, h, cfg=cfg, damping=self.damping, store="final", record_mid=True)

    def problem(self, ref) -> ControlProblem:
        return ControlProblem(self.domain, self.damping, self.cutoff, self.T, self.dt, self.cut,
                              PotentialPath.from_trajectory(ref), chi_matrix=self.chi_matrix)

    def operator(self, uhat0, h=None) -> tuple[ControlOperator, object]:
        ref = self.reference(uhat0, h)
        return self.problem(ref).control_operator, ref


def squeeze(setup: SqueezeSetup, u0, uhat0, h: ForceSignal | None = None, d: float | None = None,
            operator: tuple | None = None) -> SqueezeReport:
    """Run u0 with force h + chi zeta, zeta = Phi(uhat)(u0 - uhat0), against uhat = S(uhat0, h)."""
    dom = setup.domain
    X = _vec(dom, u0)
    Xh = _vec(dom, uhat0)
    n = dom.n_modes
    lam = dom.eigenvalues
    hnorm = lambda x: float(np.sqrt(np.sum(lam * x[..., :n] ** 2 + x[..., n:] ** 2)))
    gap = hnorm(X - Xh)
    if d is not None and gap > d * (1 + 1e-12):
        raise ControlError(f"gap {gap:.4g} exceeds the squeezing radius d = {d:.4g}")
    op, ref = operator if operator is not None else setup.operator((Xh[:n], Xh[n:]), h)
    Z = op(X - Xh)
    forcing = op.problem.forcing(Z)
    total = forcing if h is None else h + forcing
    run = evolve(dom, (X[:n], X[n:]), total, cfg=SolverConfig(setup.dt), damping=setup.damping, store="final")
    out_gap = hnorm(np.concatenate([run.u[-1] - ref.u[-1], run.v[-1] - ref.v[-1]]))
    ratio = 0.0 if gap == 0 else out_gap / gap
    return SqueezeReport(gap, out_gap, ratio, float(op.problem.cost(Z)), float(d or np.nan), Z)


def calibrate_squeeze_radius(setup: SqueezeSetup, uhat0, directions, eps: float = 0.25,
                             d_hi: float = 1.0, iters: int = 12, h=None) -> float:
    """Largest gap (by bisection) at which every test direction squeezes by eps."""
    dom = setup.domain
    n = dom.n_modes
    Xh = _vec(dom, uhat0)
    op = setup.operator((Xh[:n], Xh[n:]), h)
    lam = dom.eigenvalues
    dirs = [np.asarray(x) / np.sqrt(np.sum(lam * x[:n] ** 2 + x[n:] ** 2)) for x in directions]

    def ok(d):
        return all(squeeze(setup, Xh + d * x, Xh, h, operator=op).ratio <= eps for x in dirs)

    lo, hi = 0.0, d_hi
    if ok(hi):
        return hi
    for _ in range(iters):
        mid = 0.5 * (lo + hi)
        if ok(mid):
            lo = mid
        else:
            hi = mid
    return lo
