import numpy as np
import pytest
from scipy import integrate

from mixlab.dynamics import CutoffProfile
from mixlab.noise import (
    TimeBasis,
    check_amplitude_constraint,
    default_amplitudes,
    density_ops,
    make_noise_spec,
    NoiseSpec,
    sample_noise,
    sample_theta,
    support_radius,
)
from mixlab.spectral import Domain, sobolev_norm
from mixlab.streams import stream


@pytest.fixture
def dom():
    return Domain(1, (np.pi,), 8, 4)


@pytest.fixture
def spec(dom):
    return make_noise_spec(dom, 2.0, 1.0, 3, CutoffProfile())


class TestAmplitudeConstraint:
    """sum b_jk lambda_j^{2/7} ||alpha_k||_inf <= B0 sqrt(T)."""

    def test_single_term_boundary(self, dom):
        T, B0 = 4.0, 1.5
        b = np.zeros((2, 2))
        b[0, 0] = B0 * np.sqrt(T)
        s = NoiseSpec(dom, T, b, CutoffProfile(), 1)
        lhs, ok = check_amplitude_constraint(s, B0)
        assert lhs == pytest.approx(B0 * np.sqrt(T)) and ok

    def test_zero_amplitudes(self, dom):
        s = NoiseSpec(dom, 1.0, np.zeros((2, 2)), CutoffProfile(), 1)
        assert check_amplitude_constraint(s, 1.0) == (0.0, True)

    def test_geometric_against_direct_sum(self, dom):
        c = 0.3
        j = np.arange(1, 4)[:, None]
        k = np.arange(1, 4)[None, :]
        b = c * 2.0 ** (-(j + k))
        s = NoiseSpec(dom, 1.0, b, CutoffProfile(), 3)
        direct = 0.0
        for jj in range(3):
            for kk in range(3):
                direct += b[jj, kk] * float(jj + 1) ** (4 / 7) * (1.0 if kk == 0 else np.sqrt(2))
        assert check_amplitude_constraint(s, 1.0)[0] == pytest.approx(direct, rel=1e-14)

    def test_default_fill(self, dom):
        b = default_amplitudes(dom, 2.0, 1.0, 3, fill=0.9)
        s = NoiseSpec(dom, 2.0, b, CutoffProfile(), 3)
        assert check_amplitude_constraint(s, 1.0)[0] == pytest.approx(0.9 * np.sqrt(2.0))
        assert s.nondegenerate()


class TestSampling:
    """Noise draws and their support."""

    def test_zero_amplitudes_give_zero_signal(self, dom):
        s = NoiseSpec(dom, 1.0, np.zeros((2, 2)), CutoffProfile(), 1)
        assert not np.any(sample_noise(s, stream(0), 0.1).samples)

    def test_coefficient_mean(self, spec):
        theta = sample_theta(spec, stream(1), 10_000)[:, 0, 0]
        assert abs(theta.mean()) <= 3 * np.sqrt(0.2 / 10_000)
        assert theta.var() == pytest.approx(0.2, rel=0.05)

    def test_draws_within_support_radius(self, dom, spec):
        B1 = support_radius(spec)
        f = sample_noise(spec, stream(2), 0.01, 50)
        sup = sobolev_norm(dom, f.samples, 4 / 7).max(axis=0)
        assert np.all(sup <= B1 * (1 + 1e-12))

    def test_same_stream_same_draw(self, spec):
        a = sample_theta(spec, stream(3, 1), 4)
        b = sample_theta(spec, stream(3, 1), 4)
        assert np.array_equal(a, b)

    def test_time_basis_orthonormal(self):
        assert np.allclose(TimeBasis(5).gram(), np.eye(5), atol=1e-12)


class TestDensities:
    """Epanechnikov and raised-cosine densities."""

    def test_symmetric_cdf(self):
        assert float(density_ops().cdf(0.0)) == 0.5

    def test_pdf_vanishes_at_ends(self):
        assert np.all(density_ops().pdf([-1.0, 1.0]) == 0)

    @pytest.mark.parametrize("kind", ["epanechnikov", "cosine"])
    def test_cdf_against_quadrature(self, kind):
        rho = density_ops(kind)
        for s in (-0.7, 0.5, 0.9):
            oracle = integrate.quad(rho.pdf, -1.0, s, epsabs=1e-14)[0]
            assert float(rho.cdf(s)) == pytest.approx(oracle, abs=1e-10)

    @pytest.mark.parametrize("kind", ["epanechnikov", "cosine"])
    def test_inverse_cdf(self, kind):
        rho = density_ops(kind)
        p = np.linspace(0.01, 0.99, 41)
        assert np.allclose(rho.cdf(rho.ppf(p)), p, atol=1e-12)

    def test_unknown_kind(self):
        with pytest.raises(ValueError):
            density_ops("gaussian")


class TestSupportRadius:
    """B1 bound on every draw."""

    def test_zero(self, dom):
        assert support_radius(NoiseSpec(dom, 1.0, np.zeros((2, 2)), CutoffProfile(), 1)) == 0.0

    def test_single_term(self, dom):
        b = np.zeros((2, 2))
        b[0, 0] = 0.7
        T = 2.0
        s = NoiseSpec(dom, T, b, CutoffProfile(), 1)
        chi_e1 = CutoffProfile().matrix(dom)[0]
        direct = 0.7 * sobolev_norm(dom, chi_e1, 4 / 7) / np.sqrt(T)
        assert support_radius(s) == pytest.approx(float(direct), rel=1e-12)

    def test_monotone_in_amplitudes(self, spec):
        b = spec.b.copy()
        b[1, 2] += 0.1
        assert support_radius(spec.with_amplitudes(b)) >= support_radius(spec)


class TestNoiseInvariants:
    """Boundedness, independence and block stationarity."""

    def test_ten_thousand_draws_bounded(self, dom, spec):
        B1 = support_radius(spec)
        f = sample_noise(spec, stream(4), 0.05, 10_000)
        assert np.all(sobolev_norm(dom, f.samples, 4 / 7).max(axis=0) <= B1 * (1 + 1e-12))

    def test_coefficients_uncorrelated(self, spec):
        theta = sample_theta(spec, stream(5), 10_000)
        c = np.mean(theta[:, 0, 0] * theta[:, 1, 1]) - theta[:, 0, 0].mean() * theta[:, 1, 1].mean()
        assert abs(c) <= 4 / np.sqrt(10_000)

    def test_blocks_identically_distributed(self, dom, spec):
        g = stream(6)
        blocks = [sample_noise(spec, g, 0.05, 2000).samples for _ in range(3)]
        means = [b[:, :, 0].mean(axis=1) for b in blocks]
        sds = [b[:, :, 0].std(axis=1) for b in blocks]
        scale = float(np.max(sds[0]))
        for m, s in zip(means[1:], sds[1:]):
            assert np.max(np.abs(m - means[0])) <= 5 * scale / np.sqrt(2000) * np.sqrt(2)
            assert np.max(np.abs(s - sds[0])) <= 0.1 * scale
