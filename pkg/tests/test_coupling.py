import numpy as np
import pytest
from scipy import stats

from mixlab import experiments as ex
from mixlab.config import ExperimentConfig, apply_overrides
from mixlab.coupling import (
    EpsPair,
    ExtensionState,
    coupling_radius,
    cutoff_weight,
    extension_step,
    maximal_coupling,
    rho_eps,
    run_extension,
    sample_coupled_pair,
    tv_shift_1d,
    tv_shift_estimate,
)
from mixlab.noise import Epanechnikov, RaisedCosine
from mixlab.streams import stream


@pytest.fixture(scope="module")
def setup():
    cfg = apply_overrides(ExperimentConfig(), ["domain.M=8", "solver.dt=0.02"])
    return ex.coupling_setup(cfg)


class TestRamp:
    """Distance ramp between two radii."""

    def test_midpoint(self):
        assert float(rho_eps(0.75, EpsPair(1.0, 0.5))) == 0.5

    def test_below_inner_radius(self):
        assert float(rho_eps(0.3, EpsPair(1.0, 0.5))) == 0.0

    def test_above_outer_radius(self):
        assert float(rho_eps(1.2, EpsPair(1.0, 0.5))) == 1.0

    def test_ordering_enforced(self):
        with pytest.raises(ValueError):
            EpsPair(0.5, 1.0)

    def test_noise_cutoff_weight(self):
        R2 = 2.0
        assert float(cutoff_weight(R2 ** 2, R2)) == 1.0
        assert float(cutoff_weight((R2 + 1) ** 2, R2)) == 0.0


class TestTotalVariation:
    """TV distance of shifted coefficient laws."""

    def test_zero_shift(self, setup):
        engine, _, _ = setup
        assert tv_shift_estimate(engine.spec, np.zeros(engine.spec.b.shape))[0] == 0.0

    def test_small_shift_first_order(self):
        h = 0.01
        assert tv_shift_1d(Epanechnikov(), h) == pytest.approx(0.75 * h, rel=0.01)

    def test_single_coordinate_estimate(self, setup):
        engine, _, _ = setup
        shift = np.zeros(engine.spec.b.shape)
        shift[1, 0] = 0.2
        assert tv_shift_estimate(engine.spec, shift)[0] == pytest.approx(tv_shift_1d(Epanechnikov(), 0.2))

    def test_cosine_density_bounded(self):
        vals = [tv_shift_1d(RaisedCosine(), h) for h in (0.1, 0.5, 1.0, 1.9)]
        assert all(0 < v < 1 for v in vals) and np.all(np.diff(vals) > 0)

    def test_tv_linear_in_gap(self, setup):
        engine, X, direction = setup
        d = coupling_radius(engine, X, direction)
        gaps = d * np.arange(1, 9) / 8
        n = engine.setup.domain.n_modes
        unit = direction / float(engine.distance(direction, np.zeros_like(direction)))
        u = (X[:n], X[n:])
        tvs = []
        for g in gaps:
            Y = X + g * unit
            tvs.append(tv_shift_estimate(engine.spec, engine.control_shift(u, (Y[:n], Y[n:])))[0])
        fit = stats.linregress(gaps, tvs)
        assert fit.slope > 0 and fit.rvalue > 0.99
        assert tvs[-1] == pytest.approx(0.2, rel=1e-6)


class TestMaximalCoupling:
    """Coordinate-wise maximal coupling of rho and its shift."""

    def test_zero_shift_identical(self):
        theta, theta_p, same = maximal_coupling(Epanechnikov(), 0.0, stream(1), 1000)
        assert np.array_equal(theta, theta_p) and same.all()

    def test_identical_frequency(self):
        h, draws = 0.4, 10_000
        _, _, same = maximal_coupling(Epanechnikov(), h, stream(2), draws)
        p = 1 - tv_shift_1d(Epanechnikov(), h)
        assert abs(same.mean() - p) <= 3 * np.sqrt(p * (1 - p) / draws)

    def test_marginals(self):
        rho = Epanechnikov()
        theta, theta_p, _ = maximal_coupling(rho, 0.4, stream(3), 5000)
        for x in (theta, theta_p):
            assert stats.kstest(x, rho.cdf).pvalue > 0.01

    def test_shift_applied_when_identical(self):
        theta, theta_p, same = maximal_coupling(Epanechnikov(), 0.3, stream(4), 2000)
        assert np.allclose(theta_p[same], theta[same] + 0.3)

    def test_pair_flag_all_coordinates(self, setup):
        engine, _, _ = setup
        shift = np.zeros(engine.spec.b.shape)
        draw = sample_coupled_pair(engine.spec, shift, stream(5), 10)
        assert draw.identical_shift.shape == (10,) and draw.identical_shift.all()


class TestShiftMap:
    """Control-induced shift of the noise coefficients."""

    def test_equal_states_identity(self, setup):
        engine, X, _ = setup
        n = engine.setup.domain.n_modes
        theta = np.full(engine.spec.b.shape, 0.1)
        u = (X[:n], X[n:])
        assert np.array_equal(engine.shift_map(u, u, theta), theta)

    def test_shift_contracts_gap(self, setup):
        engine, X, direction = setup
        d = coupling_radius(engine, X, direction)
        n = engine.setup.domain.n_modes
        unit = direction / float(engine.distance(direction, np.zeros_like(direction)))
        Y = X + 0.5 * d * unit
        u, v = (X[:n], X[n:]), (Y[:n], Y[n:])
        shift = engine.control_shift(u, v)
        theta = engine.spec.rho.sample(stream(6), (50,) + engine.spec.b.shape)
        A, B = engine.step_pair(u, v, theta, theta + shift)
        ratio = engine.distance(A, B) / (0.5 * d)
        assert np.all(ratio <= 0.25)


class TestExtension:
    """Extension chain on and off the diagonal set."""

    def test_identical_states_stay_identical(self, setup):
        engine, X, _ = setup
        rec = run_extension(X, X.copy(), 2, 0.1, engine, stream(7))
        assert np.all(rec.gaps == 0) and rec.tau == 0 and rec.sigma is None

    def test_off_diagonal_branch(self, setup):
        engine, X, direction = setup
        ext = ExtensionState(X, X + direction)
        nxt = extension_step(ext, 1e-3, engine, stream(8))
        assert nxt.history[-1]["branch"] == "off-diag" and nxt.tau is None

    def test_on_diagonal_contracts(self, setup):
        engine, X, direction = setup
        d = coupling_radius(engine, X, direction)
        unit = direction / float(engine.distance(direction, np.zeros_like(direction)))
        ext = ExtensionState(X, X + 0.25 * d * unit)
        halved = 0
        for k in range(10):
            nxt = extension_step(ext, d, engine, stream(9, k))
            h = nxt.history[-1]
            assert h["branch"] == "diag-coupled"
            if h["identical_shift"]:
                halved += 1
                assert h["gap"] <= 0.5 * 0.25 * d
        assert halved > 0

    def test_requires_positive_horizon(self, setup):
        engine, X, _ = setup
        with pytest.raises(ValueError):
            run_extension(X, X, 0, 0.1, engine, stream(10))


class TestCouplingInvariants:
    """Lipschitz ramp."""

    def test_ramp_lipschitz(self, rng):
        eps = EpsPair(1.0, 0.4)
        a, b = rng.uniform(0, 2, (2, 1000))
        lhs = np.abs(rho_eps(a, eps) - rho_eps(b, eps))
        assert np.all(lhs <= np.abs(a - b) / (eps.eps1 - eps.eps2) + 1e-15)
