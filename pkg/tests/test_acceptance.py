"""Acceptance suite: one test per criterion, each printing a PASS/FAIL line.

The lines are also collected into the "acceptance criteria" section of the
pytest terminal summary.
"""

import filecmp
from pathlib import Path

import numpy as np
import pytest

from conftest import record_criterion
from mixlab import experiments as ex
from mixlab.cli import COMMANDS, main
from mixlab.config import ExperimentConfig, apply_overrides
from mixlab.control import ControlProblem, FrequencyCut, hum_min_norm_control
from mixlab.coupling import (
    CouplingEngine,
    coupling_failure_curve,
    coupling_radius,
    maximal_coupling,
    tv_shift_1d,
)
from mixlab.dynamics import (
    CutoffProfile,
    DampingProfile,
    ForceSignal,
    costate_sweep,
    linearized_forward,
)
from mixlab.noise import Epanechnikov
from mixlab.spectral import Domain
from mixlab.streams import stream


def single_oscillator_gramian(omega: float, T: float, K: int) -> np.ndarray:
    """Endpoint map of u'' + omega^2 u = sum_k Z_k alpha_k^T(t) in closed form, shape (2, K).

    Uses int_0^T exp(i omega (T - s)) cos(nu s) ds evaluated analytically.
    """
    def expo(w):
        return T if abs(w) < 1e-14 else (1 - np.exp(-1j * w * T)) / (1j * w)

    F = np.empty((2, K))
    for k in range(K):
        nu = k * np.pi / T
        c = 1 / np.sqrt(T) if k == 0 else np.sqrt(2 / T)
        z = c * np.exp(1j * omega * T) * 0.5 * (expo(omega - nu) + expo(omega + nu))
        F[0, k] = z.imag / omega
        F[1, k] = z.real
    return F


def epanechnikov_shift_tv(h: float) -> float:
    """1 - overlap of rho and rho(. - h) for rho = 3/4 (1 - s^2) on [-1, 1]."""
    h = abs(h)
    if h >= 2:
        return 1.0
    a = h / 2
    overlap = 2 * 0.75 * ((1 - a) - (1 - a ** 3) / 3)
    return 1.0 - overlap


@pytest.fixture(scope="module")
def cfg():
    return ExperimentConfig()


class TestAcceptance:
    def test_01_flux_identity_order(self):
        dom = Domain(1, (np.pi,), 16, 4)
        res = ex.flux_convergence_study(dom, DampingProfile(1.0), T=2.0, n_runs=10, seed=0)
        lo, hi = res.summary["min_order"], res.summary["max_order"]
        record_criterion(1, "flux identity residual order under dt halving", res.passed,
                         f"orders in [{lo:.3f}, {hi:.3f}]")
        assert res.passed

    def test_02_unforced_global_stability(self, cfg):
        res = ex.decay_study(cfg, amplitudes=(0.1, 1.0, 10.0))
        rates = res.summary["rates"]
        record_criterion(2, "unforced energy decay rate positive and consistent across amplitudes", res.passed,
                         "rates " + ", ".join(f"{r:.4f}" for r in rates))
        assert res.passed

    def test_03_semigroup_decay_vs_dense_oracle(self):
        dom = Domain(1, (np.pi,), 8, 4)
        res = ex.semigroup_study(dom, DampingProfile(1.0), horizon=30.0, dt=0.01, oracle=True)
        record_criterion(3, "semigroup decay rate vs dense matrix exponential", res.passed,
                         f"gamma {res.summary['gamma']:.5f} oracle {res.summary['oracle_gamma']:.5f}")
        assert res.passed

    def test_04_hum_exactness(self, cfg):
        dom = cfg.make_domain()
        n = dom.n_modes
        prob = ex.linearized_problem(cfg, cfg.noise.T, FrequencyCut(cfg.control.m, cfg.control.N))
        V = ex.random_unit_states(dom, stream(4, 0), 20)
        res = hum_min_norm_control(prob, V)
        tr = linearized_forward(dom, (V[:, :n], V[:, n:]), res.forcing(), prob.potential, prob.damping,
                                store="final")
        XT = np.concatenate([tr.u[-1], tr.v[-1]], axis=-1)
        resid = float((np.linalg.norm(prob.low(XT), axis=-1) / ex.hnorm(dom, V)).max())

        one = Domain(1, (np.pi,), 1, 4)
        T, K = 2.0, 3
        lam = one.eigenvalues[0]
        osc = ControlProblem(one, None, CutoffProfile(1.0), T, 1e-3, FrequencyCut(1, K),
                             chi_matrix=np.array([[1.0]]))
        v0 = np.array([0.7, -0.3])
        cost = float(hum_min_norm_control(osc, v0).cost)
        w = np.sqrt(lam)
        F = single_oscillator_gramian(w, T, K)
        G = F @ F.T / lam ** 0.2
        c, s = np.cos(w * T), np.sin(w * T)
        r = -np.array([[c, s / w], [-w * s, c]]) @ v0
        exact = float(r @ np.linalg.solve(G, r))
        rel = abs(cost / exact - 1)
        ok = resid <= 1e-6 and rel <= 1e-6
        record_criterion(4, "HUM endpoint residual and single-oscillator cost", ok,
                         f"max residual {resid:.2e}, cost rel err {rel:.2e}")
        assert ok

    def test_05_duality_identity(self, cfg):
        dom = cfg.make_domain()
        n = dom.n_modes
        prob = ex.linearized_problem(cfg, cfg.noise.T, FrequencyCut(cfg.control.m, cfg.control.N))
        g = stream(5, 0)
        Z = g.standard_normal((50, prob.nx, prob.cut.N))
        lamT = g.standard_normal((50, 2 * n))
        X0 = ex.random_unit_states(dom, g, 50)
        f = prob.forcing(Z)
        tr = linearized_forward(dom, (X0[:, :n], X0[:, n:]), f, prob.potential, prob.damping, store="final")
        XT = np.concatenate([tr.u[-1], tr.v[-1]], axis=-1)
        lhs = np.sum(lamT * XT, axis=-1)
        sweep = costate_sweep(dom, lamT, prob.potential, prob.damping, prob.dt, prob.n_steps)
        rhs = np.sum(sweep.lam0 * X0, axis=-1) + np.einsum("tbi,tbi->b", sweep.psi, f.midpoints())
        rel = float(np.max(np.abs(lhs - rhs) / np.maximum(np.abs(lhs), np.abs(rhs))))
        ok = rel <= 1e-6
        record_criterion(5, "duality pairing on 50 random (zeta, q)", ok, f"max rel gap {rel:.2e}")
        assert ok

    def test_06_linear_contractibility(self, cfg):
        res = ex.control_study(cfg, seed=6, n_trials=20)
        s = res.summary
        record_criterion(6, "observe+control certified contraction on 20 v0", res.passed,
                         f"T={s['selected_T']}, max ratio {s['ratio']:.4f}, residual {s['residual']:.1e}")
        assert res.passed

    def test_07_nonlinear_squeezing(self, cfg):
        res = ex.squeeze_study(cfg, seed=7, n_trials=20)
        s = res.summary
        record_criterion(7, "squeezing at calibrated d with linear control structure", res.passed,
                         f"d={s['d']:.3g}, max ratio {s.get('max_ratio', np.nan):.4f}, "
                         f"linearity defect {s.get('max_defect', np.nan):.1e}")
        assert res.passed

    def test_08_coupling_failure_linear_in_gap(self):
        cfg = apply_overrides(ExperimentConfig(), ["domain.M=16", "solver.dt=0.02"])
        engine, X, direction = ex.coupling_setup(cfg)
        d = coupling_radius(engine, X, direction)
        gaps = d * np.arange(1, 9) / 8
        curve = coupling_failure_curve(engine, X, direction, gaps, 2000, stream(8, 0), cfg.coupling.r)
        record_criterion(8, "coupled-pair failure probability linear in the gap", curve.linear,
                         f"slope {curve.slope:.3g}, intercept {curve.intercept:.4f} "
                         f"(2 SE = {2 * curve.intercept_stderr:.4f})")
        assert curve.linear

    def test_09_tv_bound(self):
        rho = Epanechnikov()
        hs = [0.01, 0.1, 0.5, 1.0, 1.5]
        errs = [abs(tv_shift_1d(rho, h) / epanechnikov_shift_tv(h) - 1) for h in hs]
        h = 0.3
        draws = 10_000
        _, _, same = maximal_coupling(rho, h, stream(9, 0), draws)
        freq = 1.0 - same.mean()
        tv = epanechnikov_shift_tv(h)
        se = np.sqrt(tv * (1 - tv) / draws)
        ok = max(errs) <= 0.01 and abs(freq - tv) <= 3 * se
        record_criterion(9, "shifted-density TV quadrature and coupled mismatch frequency", ok,
                         f"max rel err {max(errs):.1e}, mismatch {freq:.4f} vs TV {tv:.4f} (SE {se:.4f})")
        assert ok

    def test_10_toy_oracle(self):
        res = ex.toy_study(seed=10)
        s = res.summary
        record_criterion(10, "toy chain W1 bound, mixing rate, LLN and CLT", res.passed,
                         f"beta {s['beta']:.4f} (ln2 {np.log(2):.4f}), LLN {s['lln_average']:.3f}, "
                         f"KS p {s['ks_pvalue']:.3f}")
        assert res.passed

    def test_11_asymptotic_compactness_proxy(self, cfg):
        res = ex.attract_study(cfg.override("run", "n_steps", "200"), seed=11)
        s = res.summary
        record_criterion(11, "attraction to the H^{4/7} ball at the semigroup rate", res.passed,
                         f"growth {s['final_quarter_growth']:.3f}, rate {s.get('distance_rate', np.nan):.4f} "
                         f"vs semigroup {s.get('semigroup_rate', np.nan):.4f}")
        assert res.passed

    def test_12_determinism(self, tmp_path):
        small = ["domain.M=8", "noise.T=4", "solver.dt=0.02", "run.n_steps=3", "run.ensemble=16",
                 "coupling.draws=100"]
        sets = [x for item in small for x in ("--set", item)]
        differing = []
        for name in COMMANDS:
            dirs = []
            for k in ("a", "b"):
                out = tmp_path / k / name
                status = main([name, "--seed", "7", "--out", str(out), "--threads", "2"] + sets)
                assert status in (0, 2)
                dirs.append(out)
            csvs = sorted(p.name for p in dirs[0].glob("*.csv"))
            assert csvs, f"{name} wrote no CSV"
            match, mismatch, errors = filecmp.cmpfiles(dirs[0], dirs[1], csvs, shallow=False)
            if mismatch or errors:
                differing.append(name)
        ok = not differing
        record_criterion(12, "byte-identical CSVs for every subcommand", ok,
                         "all identical" if ok else "differ: " + ", ".join(differing))
        assert ok
