"""Dirichlet sine eigenbasis on a box, collocation transforms and Sobolev norms.

Coefficient arrays carry the modes on their last axis, ordered by
nondecreasing eigenvalue.  Any number of leading batch axes is allowed.
Grid values live on the midpoint grid x_n = (n + 1/2) h with
``grid_factor * M`` points per axis.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
from scipy import fft


@dataclass(frozen=True)
class Mode:
    """One Dirichlet eigenpair: multi-index, eigenvalue and the box lengths."""

    index: tuple
    eigenvalue: float
    lengths: tuple

    def __call__(self, *coords):
        """Evaluate e_j at points given per axis (broadcast together)."""
        out = 1.0
        for j, L, x in zip(self.index, self.lengths, coords):
            out = out * np.sqrt(2.0 / L) * np.sin(j * np.pi * np.asarray(x) / L)
        return out


@dataclass(frozen=True, eq=False)
class Domain:
    """Interval (dim=1) or rectangle (dim=2) with M sine modes per axis."""

    dim: int = 1
    lengths: tuple = (np.pi,)
    M: int = 16
    grid_factor: int = 4

    def __post_init__(self):
        lengths = tuple(float(L) for L in np.atleast_1d(self.lengths))
        if len(lengths) == 1 and self.dim == 2:
            lengths = lengths * 2
        object.__setattr__(self, "lengths", lengths)
        if self.dim not in (1, 2):
            raise ValueError(f"dim must be 1 or 2, got {self.dim}")
        if len(lengths) != self.dim:
            raise ValueError("one length per axis is required")
        if any(L <= 0 for L in lengths):
            raise ValueError("lengths must be positive")
        if int(self.M) < 1:
            raise ValueError("mode cut M must be at least 1")
        if int(self.grid_factor) < 4:
            raise ValueError("grid_factor must be at least 4 (dealiasing of the cubic term)")

    # -- modes ---------------------------------------------------------
    @cached_property
    def _mode_table(self):
        axes = [np.arange(1, self.M + 1)] * self.dim
        idx = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, self.dim)
        lam = np.sum((idx * np.pi / np.array(self.lengths)) ** 2, axis=1)
        order = np.argsort(lam, kind="stable")
        return idx[order], lam[order]

    @property
    def n_modes(self) -> int:
        return self.M ** self.dim

    @property
    def mode_indices(self) -> np.ndarray:
        return self._mode_table[0]

    @property
    def eigenvalues(self) -> np.ndarray:
        return self._mode_table[1]

    @cached_property
    def frequencies(self) -> np.ndarray:
        return np.sqrt(self.eigenvalues)

    def eigenpair(self, j) -> Mode:
        """Eigenpair for the multi-index j (an int is accepted in 1D)."""
        j = tuple(int(v) for v in np.atleast_1d(j))
        if len(j) != self.dim:
            raise IndexError(f"index {j} does not have {self.dim} components")
        if any(v < 1 or v > self.M for v in j):
            raise IndexError(f"mode index {j} outside 1..{self.M}")
        lam = sum((v * np.pi / L) ** 2 for v, L in zip(j, self.lengths))
        return Mode(j, float(lam), self.lengths)

    def flat_index(self, j) -> int:
        """Position of multi-index j in the eigenvalue-ordered coefficient vector."""
        j = np.atleast_1d(j)
        hits = np.flatnonzero(np.all(self.mode_indices == j, axis=1))
        if hits.size == 0:
            raise IndexError(f"mode index {tuple(j)} outside 1..{self.M}")
        return int(hits[0])

    def unit(self, j) -> np.ndarray:
        c = np.zeros(self.n_modes)
        c[self.flat_index(j)] = 1.0
        return c

    # -- grid ----------------------------------------------------------
    @property
    def points_per_axis(self) -> int:
        return self.grid_factor * self.M

    @property
    def grid_shape(self) -> tuple:
        return (self.points_per_axis,) * self.dim

    @property
    def spacing(self) -> tuple:
        return tuple(L / self.points_per_axis for L in self.lengths)

    @property
    def cell_volume(self) -> float:
        return float(np.prod(self.spacing))

    def axis_points(self, axis: int = 0) -> np.ndarray:
        h = self.spacing[axis]
        return (np.arange(self.points_per_axis) + 0.5) * h

    def grid_points(self) -> tuple:
        """Coordinate arrays of the collocation grid, one per axis (ij indexing)."""
        axes = [self.axis_points(a) for a in range(self.dim)]
        return tuple(np.meshgrid(*axes, indexing="ij"))

    @cached_property
    def _scatter(self):
        return tuple(self.mode_indices[:, a] - 1 for a in range(self.dim))

    def _check_coeffs(self, coeffs):
        coeffs = np.asarray(coeffs, dtype=float)
        if coeffs.shape[-1:] != (self.n_modes,):
            raise ValueError(
                f"coefficient array has trailing size {coeffs.shape[-1:]}, expected {self.n_modes}"
            )
        return coeffs

    def to_grid(self, coeffs) -> np.ndarray:
        """Sample sum_j c_j e_j on the midpoint grid."""
        coeffs = self._check_coeffs(coeffs)
        batch = coeffs.shape[:-1]
        padded = np.zeros(batch + self.grid_shape)
        padded[(Ellipsis,) + self._scatter] = coeffs
        axes = tuple(range(-self.dim, 0))
        scale = np.prod([np.sqrt(2.0 / L) / 2.0 for L in self.lengths])
        return scale * fft.dstn(padded, type=3, axes=axes)

    def to_spectral(self, values) -> np.ndarray:
        """Midpoint-quadrature projection of grid values onto the M-mode basis."""
        values = np.asarray(values, dtype=float)
        if values.shape[values.ndim - self.dim:] != self.grid_shape:
            raise ValueError(
                f"grid array has trailing shape {values.shape[values.ndim - self.dim:]}, "
                f"expected {self.grid_shape}"
            )
        axes = tuple(range(-self.dim, 0))
        full = fft.dstn(values, type=2, axes=axes)
        scale = np.prod([h * np.sqrt(2.0 / L) / 2.0 for h, L in zip(self.spacing, self.lengths)])
        return scale * full[(Ellipsis,) + self._scatter]

    def integrate(self, values) -> np.ndarray:
        """Midpoint quadrature of grid values over the box (batched)."""
        values = np.asarray(values, dtype=float)
        axes = tuple(range(-self.dim, 0))
        return self.cell_volume * values.sum(axis=axes)

    @cached_property
    def basis_on_grid(self) -> np.ndarray:
        """Values of every e_j on the grid, shape (n_modes, *grid_shape)."""
        return self.to_grid(np.eye(self.n_modes))

    def galerkin_matrix(self, values) -> np.ndarray:
        """Matrix of the multiplication operator by grid values in the mode basis.

        Entry (j, k) is the quadrature of values * e_j * e_k, so the result is
        symmetric, and positive semidefinite for nonnegative values.
        """
        values = np.asarray(values, dtype=float)
        n = self.n_modes
        out = np.empty((n, n))
        chunk = max(1, int(4e6 // max(1, values.size)))
        for start in range(0, n, chunk):
            stop = min(n, start + chunk)
            out[start:stop] = self.to_spectral(self.basis_on_grid[start:stop] * values)
        return 0.5 * (out + out.T)

    def __repr__(self):
        return f"Domain(dim={self.dim}, lengths={self.lengths}, M={self.M}, grid_factor={self.grid_factor})"


def default_domain(M: int = 16, grid_factor: int = 4) -> Domain:
    return Domain(1, (np.pi,), M, grid_factor)


def sobolev_norm(domain: Domain, coeffs, s: float) -> np.ndarray:
    """(sum_j lambda_j^s c_j^2)^(1/2) over the last axis."""
    if not -2.0 <= s <= 2.0:
        raise ValueError("Sobolev exponent must lie in [-2, 2]")
    coeffs = np.asarray(coeffs, dtype=float)
    w = domain.eigenvalues ** s
    return np.sqrt(np.sum(w * coeffs ** 2, axis=-1))


def phase_norm(domain: Domain, u, v, s: float = 0.0) -> np.ndarray:
    """Norm of (u, v) in H^{1+s} x H^s."""
    u = np.asarray(u, dtype=float)
    v = np.asarray(v, dtype=float)
    lam = domain.eigenvalues
    return np.sqrt(np.sum(lam ** (1.0 + s) * u ** 2 + lam ** s * v ** 2, axis=-1))


def energy(domain: Domain, u, v) -> np.ndarray:
    """E = 1/2 (|grad u|^2 + |v|^2) + 1/4 int u^4."""
    u = np.asarray(u, dtype=float)
    v = np.asarray(v, dtype=float)
    quad = 0.5 * np.sum(domain.eigenvalues * u ** 2 + v ** 2, axis=-1)
    return quad + 0.25 * domain.integrate(domain.to_grid(u) ** 4)


def multiply_pointwise(domain: Domain, a, b) -> np.ndarray:
    """Coefficients of the product a*b truncated to M modes.

    ``a`` is either a coefficient array or grid values (anything with the
    grid's trailing shape, e.g. a stored profile).
    """
    a = np.asarray(a, dtype=float)
    if a.shape[a.ndim - domain.dim:] == domain.grid_shape and a.shape[-1:] != (domain.n_modes,):
        a_grid = a
    else:
        a_grid = domain.to_grid(a)
    return domain.to_spectral(a_grid * domain.to_grid(b))


@dataclass(frozen=True, eq=False)
class PhaseState:
    """Spectral coefficients of (u, du/dt) on a shared domain."""

    domain: Domain
    u: np.ndarray
    v: np.ndarray = field(default=None)

    def __post_init__(self):
        u = np.array(self.u, dtype=float)
        v = np.zeros_like(u) if self.v is None else np.array(self.v, dtype=float)
        if u.shape != v.shape:
            raise ValueError("u and v must share a shape")
        if u.shape[-1:] != (self.domain.n_modes,):
            raise ValueError("coefficient size does not match the domain")
        u.setflags(write=False)
        v.setflags(write=False)
        object.__setattr__(self, "u", u)
        object.__setattr__(self, "v", v)

    @classmethod
    def zero(cls, domain: Domain, batch=()):
        z = np.zeros(tuple(batch) + (domain.n_modes,))
        return cls(domain, z, z)

    @classmethod
    def from_vector(cls, domain: Domain, x):
        x = np.asarray(x, dtype=float)
        n = domain.n_modes
        return cls(domain, x[..., :n], x[..., n:])

    def to_vector(self) -> np.ndarray:
        return np.concatenate([self.u, self.v], axis=-1)

    def norm(self, s: float = 0.0):
        return phase_norm(self.domain, self.u, self.v, s)

    def energy(self):
        return energy(self.domain, self.u, self.v)

    def __add__(self, other):
        return PhaseState(self.domain, self.u + other.u, self.v + other.v)

    def __sub__(self, other):
        return PhaseState(self.domain, self.u - other.u, self.v - other.v)

    def __mul__(self, c):
        return PhaseState(self.domain, c * self.u, c * self.v)

    __rmul__ = __mul__

    def __getitem__(self, key):
        return PhaseState(self.domain, self.u[key], self.v[key])


def smoothstep(r) -> np.ndarray:
    """C^2 quintic ramp: 0 for r <= 0, 1 for r >= 1."""
    r = np.clip(np.asarray(r, dtype=float), 0.0, 1.0)
    return r ** 3 * (10.0 - 15.0 * r + 6.0 * r ** 2)


_SIDES = ("right", "left", "both")


@dataclass(frozen=True)
class StripProfile:
    """Bump equal to ``level`` on a boundary strip of depth ``depth``.

    The profile is ``level`` where the distance to the selected boundary
    part is at most ``depth``, decays through a quintic smoothstep over a
    band of width ``width`` and vanishes beyond it.  ``depth`` and ``width``
    are fractions of the box length along each axis.  kind="constant" gives
    level everywhere, kind="zero" gives 0 everywhere.
    """

    level: float = 1.0
    depth: float = 0.5
    width: float = 0.1
    side: str = "right"
    kind: str = "strip"

    def __post_init__(self):
        if self.kind not in ("strip", "constant", "zero"):
            raise ValueError(f"unknown profile kind {self.kind!r}")
        if self.side not in _SIDES:
            raise ValueError(f"side must be one of {_SIDES}")
        if self.level < 0:
            raise ValueError("profile level must be nonnegative")
        if self.kind == "strip" and (self.depth <= 0 or self.width <= 0):
            raise ValueError("strip depth and width must be positive")

    def boundary_distance(self, domain: Domain) -> np.ndarray:
        """Normalized distance of each grid point to the selected boundary part."""
        coords = domain.grid_points()
        dists = []
        for x, L in zip(coords, domain.lengths):
            right = (L - x) / L
            left = x / L
            if self.side == "right":
                dists.append(right)
            elif self.side == "left":
                dists.append(left)
            else:
                dists.append(np.minimum(left, right))
        return np.min(np.stack(dists), axis=0)

    def grid_values(self, domain: Domain) -> np.ndarray:
        if self.kind == "zero":
            return np.zeros(domain.grid_shape)
        if self.kind == "constant":
            return np.full(domain.grid_shape, float(self.level))
        dist = self.boundary_distance(domain)
        return self.level * smoothstep((self.depth + self.width - dist) / self.width)

    def strip_mask(self, domain: Domain) -> np.ndarray:
        """Grid points lying in the declared strip (all points for constant)."""
        if self.kind == "constant":
            return np.ones(domain.grid_shape, dtype=bool)
        if self.kind == "zero":
            return np.zeros(domain.grid_shape, dtype=bool)
        return self.boundary_distance(domain) <= self.depth

    def matrix(self, domain: Domain) -> np.ndarray:
        """Galerkin matrix of the multiplication operator."""
        if self.kind == "zero":
            return np.zeros((domain.n_modes, domain.n_modes))
        if self.kind == "constant":
            return float(self.level) * np.eye(domain.n_modes)
        return domain.galerkin_matrix(self.grid_values(domain))
