import numpy as np
import pytest

from mixlab.dynamics import CutoffProfile, DampingProfile, SolverConfig, evolve
from mixlab.mixing import (
    default_observables,
    discrete_monotonicity_scan,
    dist_to_ball,
    fit_exponential_decay,
    hnorm,
    lipschitz_spot_check,
    lln_clt_check,
    markov_chain,
    mixing_rate,
    Observable,
    multiplier_inequality_check,
    splitting_bound,
    wasserstein1_1d,
)
from mixlab.noise import make_noise_spec
from mixlab.rds import ToyAffineRds, simulate_rds
from mixlab.spectral import Domain
from mixlab.streams import stream


@pytest.fixture(scope="module")
def dom():
    return Domain(1, (np.pi,), 8, 4)


@pytest.fixture(scope="module")
def spec(dom):
    return make_noise_spec(dom, 2.0, 1.0, 3, CutoffProfile())


def start(dom, scale=1.0):
    X = np.zeros(16)
    X[0] = scale
    X[8] = 0.5 * scale
    return X


class TestMarkovChain:
    """Chain of noise blocks through the nonlinear flow."""

    def test_unforced_energy_decays(self, dom, spec):
        silent = spec.with_amplitudes(np.zeros(spec.b.shape))
        run = markov_chain(dom, start(dom), silent, 10, stream(0), 0.02, DampingProfile())
        E = run.energies()
        assert np.all(np.diff(E) < 0) and E[-1] < 0.05 * E[0]

    def test_same_seed_identical(self, dom, spec):
        a = markov_chain(dom, start(dom), spec, 3, stream(1, 2), 0.02, DampingProfile())
        b = markov_chain(dom, start(dom), spec, 3, stream(1, 2), 0.02, DampingProfile())
        assert np.array_equal(a.states, b.states)

    def test_rejects_violating_amplitudes(self, dom, spec):
        with pytest.raises(ValueError):
            markov_chain(dom, start(dom), spec.with_amplitudes(spec.b * 10), 1, stream(2), 0.02,
                         DampingProfile(), B0=1.0)

    def test_ensemble_energy_stabilizes(self, dom, spec):
        X0 = np.tile(start(dom), (64, 1))
        run = markov_chain(dom, X0, spec, 40, stream(3), 0.05, DampingProfile())
        E = run.energies()
        late, mid = E[20:].mean(axis=0), E[10:20].mean(axis=0)
        se = np.sqrt(late.var(ddof=1) / late.size + mid.var(ddof=1) / mid.size)
        assert abs(late.mean() - mid.mean()) <= 3 * se


class TestDecayFit:
    """Exponential fits on log values."""

    def test_exact_exponential(self):
        t = np.linspace(0, 3, 30)
        assert fit_exponential_decay(t, np.exp(-2 * t)).rate == pytest.approx(2.0, abs=1e-10)

    def test_constant_series(self):
        t = np.linspace(0, 3, 30)
        assert fit_exponential_decay(t, np.full(30, 4.0)).rate == pytest.approx(0.0, abs=1e-12)

    def test_window_and_validation(self):
        t = np.linspace(0, 3, 30)
        y = np.where(t < 1, 1.0, np.exp(-t))
        assert fit_exponential_decay(t, y, window=(1.0, 3.0)).rate == pytest.approx(1.0)
        with pytest.raises(ValueError):
            fit_exponential_decay(t, -y)


class TestDissipation:
    """Energy monotonicity scan and the multiplier inequality."""

    def test_pure_dissipation_satisfied(self, dom):
        rep = discrete_monotonicity_scan(dom, 10.0, 0.5, [5.0, 10.0], DampingProfile(), 0.0, 0.02)
        assert not rep.violations.any()

    def test_tiny_energy_with_forcing_violates(self, dom):
        rep = discrete_monotonicity_scan(dom, 2.0, 0.5, [1e-4], DampingProfile(), 1.0, 0.02)
        assert rep.violations.all() and rep.A0 == float("inf")

    def test_threshold_weakly_decreasing_in_horizon(self, dom):
        grid = np.geomspace(0.1, 100, 7)
        A = [discrete_monotonicity_scan(dom, T0, 0.5, grid, DampingProfile(), 0.5, 0.02).A0 for T0 in (4.0, 8.0)]
        assert A[1] <= A[0]

    def test_multiplier_zero_solution(self, dom):
        tr = evolve(dom, (np.zeros(8), np.zeros(8)), cfg=SolverConfig(0.02), T=1.0)
        assert multiplier_inequality_check(dom, tr, None, DampingProfile()).K0 == 0.0

    def test_multiplier_constant_stable(self, dom, rng):
        K = []
        for _ in range(10):
            x = rng.standard_normal(16) / np.concatenate([dom.eigenvalues, np.sqrt(dom.eigenvalues)])
            tr = evolve(dom, (x[:8], x[8:]), cfg=SolverConfig(0.02), damping=DampingProfile(), T=10.0)
            K.append(multiplier_inequality_check(dom, tr, None, DampingProfile()).K0)
        K = np.array(K)
        assert np.all(np.isfinite(K)) and K.max() <= 1.5 * np.median(K) and K.min() >= 0.5 * np.median(K)


class TestSplitting:
    """Distance to the smoother ball along the splitting."""

    def test_zero_data(self, dom):
        tr = evolve(dom, (np.zeros(8), np.zeros(8)), cfg=SolverConfig(0.02), damping=DampingProfile(), T=2.0, store=10)
        X = np.concatenate([tr.u, tr.v], axis=-1)
        rep = splitting_bound(dom, tr.t, X, DampingProfile(), 0.02)
        assert not np.any(rep.w_norm)

    def test_ball_distance(self, dom):
        X = start(dom)
        assert dist_to_ball(dom, X, 1e6)[0] == 0.0
        assert dist_to_ball(dom, X, 0.0)[0] == pytest.approx(float(hnorm(dom, X)))
        inside, outside = dist_to_ball(dom, np.stack([0.01 * X, 10 * X]), 1.0)
        assert inside == 0.0 and outside > 0


class TestWasserstein:
    """One-dimensional W1."""

    def test_point_masses(self):
        assert wasserstein1_1d([0.0], [1.0]) == 1.0

    def test_identical(self, rng):
        x = rng.standard_normal(100)
        assert wasserstein1_1d(x, x) == 0.0

    def test_uniform_grids(self):
        n = 20_000
        a = (np.arange(n) + 0.5) / n
        assert wasserstein1_1d(a, 2 * a) == pytest.approx(0.5, abs=1e-4)


class TestMixingRate:
    """Distances between pushforward laws and their decay."""

    def test_identical_laws_unreliable(self, dom, rng):
        ens = rng.standard_normal((8, 200, 16))
        obs = default_observables(dom)
        rep = mixing_rate(np.arange(8), ens, ens.copy(), obs)
        assert not any(rep.reliable.values()) and np.isnan(rep.best_rate)

    def test_toy_rate(self):
        toy = ToyAffineRds()
        n, R = 12, 20_000
        a = simulate_rds(toy, np.zeros(R), n, stream(4, 0))
        b = simulate_rds(toy, np.full(R, 10.0), n, stream(4, 1))
        ident = Observable("x", lambda X: np.asarray(X)[..., 0], 1.0)
        rep = mixing_rate(np.arange(n + 1), a[..., None], b[..., None], [ident])
        assert rep.best_rate == pytest.approx(np.log(2), rel=0.25)

    def test_observables_lipschitz(self, dom, rng):
        X, Y = rng.standard_normal((2, 50, 16))
        assert all(lipschitz_spot_check(dom, ob, X, Y) for ob in default_observables(dom))


class TestLimitTheorems:
    """LLN and CLT diagnostics."""

    def test_constant_observable(self):
        rep = lln_clt_check(np.full((10, 50), 3.0))
        assert rep.time_average == 3.0 and rep.sigma2 == 0.0

    def test_toy_chain(self):
        toy = ToyAffineRds()
        path = simulate_rds(toy, np.zeros(500), 200, stream(5))
        rep = lln_clt_check(path.T, mean=1.0)
        assert rep.lln_ok and rep.clt_ok


class TestChainInvariants:
    """Flux bookkeeping, uniform energy bound and same-law distances."""

    def test_flux_per_block(self, dom, spec):
        from mixlab.dynamics import flux_residual
        from mixlab.noise import noise_from_theta
        damp = DampingProfile()
        run = markov_chain(dom, start(dom), spec, 3, stream(6), 0.02, damp)
        res = []
        for dt in (0.02, 0.01):
            worst = 0.0
            for k, theta in enumerate(run.thetas):
                f = noise_from_theta(spec, theta, dt)
                X = run.states[k]
                tr = evolve(dom, (X[:8], X[8:]), f, cfg=SolverConfig(dt), damping=damp)
                worst = max(worst, float(flux_residual(dom, tr, f, damp)))
            res.append(worst)
        assert 3.0 <= res[0] / res[1] <= 5.0

    def test_running_max_energy_stable(self, dom, spec):
        X0 = np.tile(start(dom), (32, 1))
        run = markov_chain(dom, X0, spec, 60, stream(7), 0.05, DampingProfile())
        E = run.energies().mean(axis=1)
        half, full = E[1:31].max(), E[1:61].max()
        assert full <= 1.1 * half

    def test_same_law_below_twice_floor(self, dom, spec):
        X0 = np.tile(start(dom), (400, 1))
        a = markov_chain(dom, X0, spec, 3, stream(8, 0), 0.05, DampingProfile()).states
        b = markov_chain(dom, X0, spec, 3, stream(8, 1), 0.05, DampingProfile()).states
        rep = mixing_rate(np.arange(4), a, b, default_observables(dom))
        for name, d in rep.distances.items():
            assert np.all(d[1:] <= 2 * rep.floor[name])
