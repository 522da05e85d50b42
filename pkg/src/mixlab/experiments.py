"""End-to-end experiment pipelines shared by the command line and the test suite.

Each study returns tables (column names plus rows) and a dictionary of
named checks; a study passes when every check holds.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.linalg import expm

from .config import ExperimentConfig
from .control import (
    ControlError,
    ControlProblem,
    FrequencyCut,
    calibrate_squeeze_radius,
    contractibility_control,
    hum_min_norm_control,
    squeeze,
)
from .coupling import CouplingEngine, coupling_failure_curve, coupling_radius, run_extension
from .dynamics import (
    CutoffProfile,
    InstabilityError,
    SolverConfig,
    evolve,
    flux_residual,
    generator_matrix,
    linearized_forward,
    semigroup_norm,
)
from .mixing import (
    REGULARITY,
    chain_trajectory,
    default_observables,
    discrete_monotonicity_scan,
    fit_exponential_decay,
    hnorm,
    lln_clt_check,
    markov_chain,
    mc_floor,
    splitting_bound,
    wasserstein1_1d,
)
from .noise import make_noise_spec, noise_from_theta, sample_theta, support_radius
from .rds import ToyAffineRds, simulate_rds, w1_to_uniform
from .spectral import Domain, energy
from .streams import stream

# stream labels keep the random inputs of different studies independent
LABELS = dict(simulate=1, flux=2, absorb=3, attract=4, control=5, squeeze=6, couple=7, mix=8, toy=9)


@dataclass(eq=False)
class Table:
    columns: list
    rows: list = field(default_factory=list)

    def add(self, *values):
        if len(values) != len(self.columns):
            raise ValueError("row length does not match the columns")
        self.rows.append(values)

    def column(self, name) -> np.ndarray:
        i = self.columns.index(name)
        return np.array([r[i] for r in self.rows])


@dataclass(eq=False)
class StudyResult:
    tables: dict
    checks: dict
    summary: dict = field(default_factory=dict)

    @property
    def passed(self) -> bool:
        return all(bool(v) for v in self.checks.values())


def mode_state(domain: Domain, mode: int, amplitude: float) -> np.ndarray:
    """2n-vector with displacement in one mode (1-based) and H-norm ``amplitude``."""
    n = domain.n_modes
    j = (n if mode <= 0 else mode) - 1
    if not 0 <= j < n:
        raise ValueError(f"mode index must lie in 1..{n}")
    X = np.zeros(2 * n)
    X[j] = amplitude / np.sqrt(domain.eigenvalues[j])
    return X


def random_unit_states(domain: Domain, rng, count: int) -> np.ndarray:
    """Gaussian coefficient vectors normalized to unit H-norm."""
    n = domain.n_modes
    X = rng.standard_normal((count, 2 * n))
    X[:, :n] /= np.sqrt(domain.eigenvalues)
    return X / hnorm(domain, X)[:, None]


def _initial_state(cfg: ExperimentConfig, domain: Domain) -> np.ndarray:
    return mode_state(domain, cfg.run.init_mode, cfg.run.amplitude)


# -- dynamics -------------------------------------------------------------

def simulate_study(cfg: ExperimentConfig, seed: int) -> StudyResult:
    """One wave chain: energy and norms after every noise block."""
    dom = cfg.make_domain()
    spec = cfg.make_noise(dom)
    X0 = _initial_state(cfg, dom)
    chain = markov_chain(dom, X0, spec, cfg.run.n_steps, stream(seed, LABELS["simulate"]), cfg.solver.dt,
                         cfg.make_damping())
    tab = Table(["n", "t", "energy", "norm_H", "norm_H47"])
    E = chain.energies()
    for k, X in enumerate(chain.states):
        tab.add(k, k * spec.T, float(E[k]), float(hnorm(dom, X)), float(hnorm(dom, X, REGULARITY)))
    checks = dict(completed=chain.failed_step is None)
    return StudyResult(dict(simulate=tab), checks, dict(max_energy=float(E.max())))


def flux_convergence_study(domain: Domain, damping, T: float = 2.0, dts=(0.02, 0.01, 0.005), n_runs: int = 10,
                           seed: int = 0, B0: float = 1.0, N: int = 4, cutoff=None) -> StudyResult:
    """Flux identity residual of random damped forced runs under time-step halving."""
    spec = make_noise_spec(domain, T, B0, N, cutoff or CutoffProfile(1.0))
    n = domain.n_modes
    tab = Table(["run", "dt", "residual", "order"])
    orders = []
    for r in range(n_runs):
        g = stream(seed, LABELS["flux"], r)
        X0 = random_unit_states(domain, g, 1)[0]
        theta = sample_theta(spec, g)
        prev = None
        for dt in dts:
            f = noise_from_theta(spec, theta, dt)
            tr = evolve(domain, (X0[:n], X0[n:]), f, SolverConfig(dt), damping, store="all")
            res = float(flux_residual(domain, tr, f, damping))
            order = float(np.log2(prev / res)) if prev is not None else float("nan")
            if prev is not None:
                orders.append(order)
            tab.add(r, dt, res, order)
            prev = res
    orders = np.array(orders)
    checks = dict(order_in_range=bool(np.all((orders >= 1.8) & (orders <= 2.2))))
    return StudyResult(dict(flux=tab), checks, dict(min_order=float(orders.min()), max_order=float(orders.max())))


def decay_study(cfg: ExperimentConfig, amplitudes=(0.1, 1.0, 10.0), horizon: float | None = None,
                stride: int = 50) -> StudyResult:
    """Unforced damped runs from several amplitudes of one shape; exponential fits of the energy."""
    dom = cfg.make_domain()
    damp = cfg.make_damping()
    n = dom.n_modes
    horizon = 6.0 * cfg.noise.T if horizon is None else horizon
    shape = mode_state(dom, cfg.run.init_mode, 1.0)
    traj_tab = Table(["amplitude", "t", "energy"])
    fit_tab = Table(["amplitude", "gamma", "C", "residual", "stderr"])
    rates = []
    for a in amplitudes:
        X = a * shape
        tr = evolve(dom, (X[:n], X[n:]), cfg=SolverConfig(cfg.solver.dt), damping=damp, T=horizon, store=stride)
        E = energy(dom, tr.u, tr.v)
        for t, e in zip(tr.t, E):
            traj_tab.add(a, float(t), float(e))
        fit = fit_exponential_decay(tr.t, E)
        rates.append(fit.rate)
        fit_tab.add(a, fit.rate, fit.C, fit.residual, fit.stderr)
    rates = np.array(rates)
    checks = dict(positive=bool(np.all(rates > 0)),
                  consistent=bool(rates.max() <= 2.0 * rates.min()) if np.all(rates > 0) else False)
    return StudyResult(dict(decay=traj_tab, decay_fit=fit_tab), checks, dict(rates=rates.tolist()))


def semigroup_study(domain: Domain, damping, horizon: float, dt: float, step: float = 0.5,
                    oracle: bool = False) -> StudyResult:
    """Fitted decay rate of ||U(t)||, optionally against a dense matrix exponential."""
    times = np.arange(0.0, horizon + 0.5 * step, step)
    norms = semigroup_norm(domain, damping, times, dt)
    window = (0.25 * horizon, horizon)
    fit = fit_exponential_decay(times, norms, window)
    tab = Table(["t", "norm", "oracle_norm"])
    checks = dict(positive=fit.rate > 0)
    summary = dict(gamma=fit.rate)
    ref = np.full(times.shape, np.nan)
    if oracle:
        B = generator_matrix(domain, damping)
        lam = domain.eigenvalues
        sc = np.concatenate([np.sqrt(lam), np.ones(domain.n_modes)])
        ref = np.array([np.linalg.norm((sc[:, None] * expm(B * t)) / sc[None, :], 2) for t in times])
        ofit = fit_exponential_decay(times, ref, window)
        summary["oracle_gamma"] = ofit.rate
        checks["oracle_agreement"] = abs(fit.rate - ofit.rate) <= 0.25 * abs(ofit.rate)
    for t, v, o in zip(times, norms, ref):
        tab.add(float(t), float(v), float(o))
    return StudyResult(dict(semigroup=tab), checks, summary)


def absorb_study(cfg: ExperimentConfig, seed: int, varpi: float = 0.5, energies=None) -> StudyResult:
    """Energy monotonicity scan under the worst-case force of the noise size."""
    dom = cfg.make_domain()
    spec = cfg.make_noise(dom)
    R1 = support_radius(spec)
    grid = np.logspace(-1, 3, 9) if energies is None else np.asarray(energies, dtype=float)
    rep = discrete_monotonicity_scan(dom, cfg.noise.T, varpi, grid, cfg.make_damping(), R1, cfg.solver.dt,
                                     rng=stream(seed, LABELS["absorb"]))
    tab = Table(["E0", "max_final_energy", "ratio", "violation"])
    for E0, fin, v in zip(rep.energies, rep.final_energies, rep.violations):
        tab.add(float(E0), float(fin.max()), float(fin.max() / E0), int(v))
    return StudyResult(dict(absorb=tab), dict(absorbing_level_found=bool(np.isfinite(rep.A0))),
                       dict(A0=rep.A0, R1=R1))


def attract_study(cfg: ExperimentConfig, seed: int, amplitude: float = 20.0, stride: int = 20,
                  window_factor: float = 3.0) -> StudyResult:
    """Splitting u = U(t)u0 + w along a wave chain from a rough datum.

    The running max R of ||w||_{H^{4/7}} is the radius of the attracting
    ball; the distance to that ball is fitted while it exceeds
    ``window_factor`` * R and compared with the semigroup rate fitted over
    the same window.
    """
    dom = cfg.make_domain()
    spec = cfg.make_noise(dom)
    damp = cfg.make_damping()
    dt = cfg.solver.dt
    X0 = mode_state(dom, 0, amplitude)
    chain = markov_chain(dom, X0, spec, cfg.run.n_steps, stream(seed, LABELS["attract"]), dt, damp)
    if chain.failed_step is not None:
        raise InstabilityError(f"chain blew up at step {chain.failed_step}")
    ts, Xs = chain_trajectory(dom, chain, spec, dt, damp, stride=stride)
    rep = splitting_bound(dom, ts, Xs, damp, dt)
    rmax = rep.running_max
    q = rmax[3 * (len(rmax) - 1) // 4]
    R = float(rmax[-1])
    growth = (R - q) / q if q > 0 else 0.0
    keep = rep.distance > window_factor * R
    stop = int(np.argmin(keep)) if not keep.all() else keep.size
    tab = Table(["t", "w_norm", "running_max", "linear_norm", "distance"])
    for row in zip(ts, rep.w_norm, rmax, rep.linear_norm, rep.distance):
        tab.add(*(float(x) for x in row))
    checks = dict(running_max_stable=bool(growth < 0.05))
    summary = dict(radius=R, final_quarter_growth=float(growth), fit_points=stop)
    if stop >= 5:
        fit = fit_exponential_decay(ts[:stop], rep.distance[:stop])
        t_end = float(ts[stop - 1])
        times = np.arange(0.0, t_end + 1e-9, ts[1] - ts[0])
        sg = fit_exponential_decay(times, semigroup_norm(dom, damp, times, dt))
        summary.update(distance_rate=fit.rate, semigroup_rate=sg.rate, window=(0.0, t_end))
        checks["rate_matches_semigroup"] = bool(fit.rate > 0 and abs(fit.rate - sg.rate) <= 0.25 * sg.rate)
    else:
        checks["rate_matches_semigroup"] = False
    return StudyResult(dict(attract=tab), checks, summary)


# -- control --------------------------------------------------------------

def linearized_problem(cfg: ExperimentConfig, T: float, cut: FrequencyCut) -> ControlProblem:
    """Linearization around the noise-free reference S(uhat0, 0) on the horizon T."""
    setup = replace(cfg.squeeze_setup(), T=T, cut=cut)
    Xh = _initial_state(cfg, setup.domain)
    n = setup.domain.n_modes
    return setup.problem(setup.reference((Xh[:n], Xh[n:]), None))


def observe_study(cfg: ExperimentConfig, horizons=None, tol: float = 1e-12) -> StudyResult:
    """Gramian minimum eigenvalue on candidate horizons; the shortest certified one is selected."""
    T = cfg.noise.T
    horizons = (0.5 * T, T, 1.5 * T) if horizons is None else horizons
    cut = FrequencyCut(cfg.control.m, cfg.control.N, cfg.control.s)
    tab = Table(["T", "m", "N", "min_eig", "certified"])
    selected = None
    for h in sorted(horizons):
        G = linearized_problem(cfg, h, cut).gramian
        try:
            mu = G.min_eig
        except ControlError:
            mu = 0.0
        ok = mu > tol
        tab.add(float(h), cut.m, cut.N, float(mu), int(ok))
        if ok and selected is None:
            selected = float(h)
    return StudyResult(dict(observe=tab), dict(certified=selected is not None), dict(selected_T=selected))


def control_study(cfg: ExperimentConfig, seed: int, n_trials: int = 20, horizons=None) -> StudyResult:
    """Observe, then HUM steering and contraction on random unit v0 for the certified horizons.

    Horizons are tried in increasing order; the first one on which every v0
    contracts by eps is selected.
    """
    obs = observe_study(cfg, horizons)
    dom = cfg.make_domain()
    n = dom.n_modes
    cut = FrequencyCut(cfg.control.m, cfg.control.N, cfg.control.s)
    tab = Table(["T", "m", "N", "min_eig", "endpoint_residual", "cost", "ratio"])
    certified = [row[0] for row in obs.tables["observe"].rows if row[4]]
    V = random_unit_states(dom, stream(seed, LABELS["control"]), n_trials)
    chosen = None
    worst = dict(residual=np.inf, low_mode_error=np.inf, ratio=np.inf)
    for T in certified:
        prob = linearized_problem(cfg, T, cut)
        res = hum_min_norm_control(prob, V)
        tr = linearized_forward(dom, (V[:, :n], V[:, n:]), res.forcing(), prob.potential, prob.damping,
                                store="final")
        XT = np.concatenate([tr.u[-1], tr.v[-1]], axis=-1)
        resid = np.linalg.norm(prob.low(XT), axis=-1) / hnorm(dom, V)
        ratios, low_err = [], []
        for i, v0 in enumerate(V):
            c = contractibility_control(prob, v0)
            ratios.append(c.ratio)
            low_err.append(c.low_mode_error)
            tab.add(T, cut.m, cut.N, prob.gramian.min_eig, float(resid[i]), c.cost, c.ratio)
        ratios = np.array(ratios)
        worst = dict(residual=float(resid.max()), low_mode_error=float(max(low_err)), ratio=float(ratios.max()))
        if np.all(ratios <= cfg.control.eps):
            chosen = T
            break
    checks = dict(certified=bool(certified), residual=bool(worst["residual"] <= 1e-6),
                  low_modes_follow_free_flow=bool(worst["low_mode_error"] <= 1e-6), contraction=chosen is not None)
    tables = dict(obs.tables, control=tab)
    return StudyResult(tables, checks, dict(selected_T=chosen, **worst))


def squeeze_study(cfg: ExperimentConfig, seed: int, n_trials: int = 20, n_directions: int = 8,
                  safety: float = 0.5, d_cap: float = 4.0) -> StudyResult:
    """Calibrate the squeezing radius d (unless set), then squeeze random pairs with gap <= d.

    The radius is ``safety`` times the largest gap (searched up to ``d_cap``)
    at which every calibration direction squeezes by eps.
    """
    setup = cfg.squeeze_setup()
    dom = setup.domain
    n = dom.n_modes
    g = stream(seed, LABELS["squeeze"])
    Xh = _initial_state(cfg, dom)
    eps = cfg.control.eps
    d = cfg.control.d
    if d <= 0:
        dirs = random_unit_states(dom, g, n_directions)
        d = safety * calibrate_squeeze_radius(setup, (Xh[:n], Xh[n:]), dirs, eps=eps, d_hi=d_cap)
    tab = Table(["T", "m", "N", "min_eig", "endpoint_residual", "cost", "ratio", "gap", "d"])
    if d <= 0:
        # no gap squeezes by eps in every calibration direction
        return StudyResult(dict(squeeze=tab), dict(radius_found=False), dict(d=0.0))
    op = setup.operator((Xh[:n], Xh[n:]))
    dirs = random_unit_states(dom, g, n_trials)
    gaps = d * (1.0 - g.random(n_trials))
    ratios, defects = [], []
    mu = op[0].problem.gramian.min_eig
    for x, s in zip(dirs, gaps):
        rep = squeeze(setup, Xh + s * x, Xh, d=d, operator=op)
        half = squeeze(setup, Xh + 0.5 * s * x, Xh, operator=op)
        # the control is linear in the gap: Z(s x) = 2 Z(s x / 2)
        defect = np.abs(rep.Z - 2.0 * half.Z).max() / max(np.abs(rep.Z).max(), 1e-300)
        ratios.append(rep.ratio)
        defects.append(defect)
        tab.add(setup.T, setup.cut.m, setup.cut.N, mu, float(defect), rep.cost, rep.ratio, float(s), float(d))
    ratios = np.array(ratios)
    checks = dict(radius_found=True, contraction=bool(ratios.max() <= eps), linear_in_gap=bool(max(defects) <= 1e-6))
    return StudyResult(dict(squeeze=tab), checks, dict(d=float(d), max_ratio=float(ratios.max()),
                                                       max_defect=float(max(defects))))


# -- coupling -------------------------------------------------------------

def coupling_setup(cfg: ExperimentConfig):
    dom = cfg.make_domain()
    engine = CouplingEngine(cfg.squeeze_setup(coupling=True), cfg.make_noise(dom), cfg.coupling.mode)
    X = _initial_state(cfg, dom)
    n = dom.n_modes
    direction = np.zeros(2 * n)
    direction[0] = 1.0 / np.sqrt(dom.eigenvalues[0])
    direction[n] = 1.0
    return engine, X, direction


def couple_study(cfg: ExperimentConfig, seed: int, n_draws: int | None = None, n_gaps: int = 8,
                 n_pairs: int = 2) -> StudyResult:
    """Failure-to-contract curve on the diagonal set and extension-chain runs."""
    engine, X, direction = coupling_setup(cfg)
    dom = engine.setup.domain
    delta = cfg.coupling.delta if cfg.coupling.delta > 0 else coupling_radius(engine, X, direction)
    draws = cfg.coupling.draws if n_draws is None else n_draws
    gaps = delta * np.arange(1, n_gaps + 1) / n_gaps
    curve = coupling_failure_curve(engine, X, direction, gaps, draws, stream(seed, LABELS["couple"], 0),
                                   cfg.coupling.r)
    ctab = Table(["gap", "p_fail", "stderr", "p_mismatch", "n_draws"])
    for row in zip(curve.gaps, curve.p_fail, curve.stderr, curve.p_mismatch):
        ctab.add(*(float(x) for x in row), draws)
    etab = Table(["pair", "n", "gap", "branch", "identical_shift", "sigma_hit", "tau_hit"])
    unit = direction / float(engine.distance(direction, np.zeros_like(direction)))
    for p in range(n_pairs):
        g = stream(seed, LABELS["couple"], 1 + p)
        start = X + (0.5 + p) * delta * unit
        rec = run_extension(X, start, cfg.run.n_steps, delta, engine, g, cfg.coupling.r)
        etab.add(p, 0, float(rec.gaps[0]), "start", 0, 0, int(rec.tau == 0))
        for k in range(1, len(rec.gaps)):
            etab.add(p, k, float(rec.gaps[k]), rec.branches[k - 1], int(rec.identical[k - 1]),
                     int(rec.sigma is not None and rec.sigma <= k), int(rec.tau is not None and rec.tau <= k))
    checks = dict(linear_failure=curve.linear)
    summary = dict(delta=float(delta), slope=curve.slope, intercept=curve.intercept,
                   intercept_stderr=curve.intercept_stderr, dim=dom.n_modes)
    return StudyResult(dict(couple=etab, failure_curve=ctab), checks, summary)


# -- mixing ---------------------------------------------------------------

def ensemble_chains(cfg: ExperimentConfig, X0, n_steps: int, seed: int, label: int, count: int,
                    threads: int = 1) -> np.ndarray:
    """Independent chains with per-chain streams (seed, label, i); returns (n_steps + 1, count, 2n).

    Chains are evolved in chunks, possibly on threads; the result does not
    depend on the chunking.
    """
    dom = cfg.make_domain()
    spec = cfg.make_noise(dom)
    damp = cfg.make_damping()
    n = dom.n_modes
    cfg_s = SolverConfig(cfg.solver.dt)
    chunks = np.array_split(np.arange(count), max(1, min(threads, count)))

    def run(idx):
        gens = [stream(seed, label, int(i)) for i in idx]
        X = np.broadcast_to(np.asarray(X0, dtype=float), (len(idx), 2 * n)).copy()
        out = [X]
        for _ in range(n_steps):
            theta = np.stack([sample_theta(spec, gi) for gi in gens])
            f = noise_from_theta(spec, theta, cfg.solver.dt)
            tr = evolve(dom, (X[:, :n], X[:, n:]), f, cfg_s, damp, store="final")
            X = np.concatenate([tr.u[-1], tr.v[-1]], axis=-1)
            out.append(X)
        return np.stack(out)

    if len(chunks) == 1:
        parts = [run(chunks[0])]
    else:
        with ThreadPoolExecutor(max_workers=len(chunks)) as pool:
            parts = list(pool.map(run, chunks))
    return np.concatenate(parts, axis=1)


def mix_study(cfg: ExperimentConfig, seed: int, threads: int = 1, floor_factor: float = 3.0) -> StudyResult:
    """W1 between the pushforward laws of two ensembles started at 0 and at the configured state."""
    dom = cfg.make_domain()
    n_steps = cfg.run.n_steps
    R = cfg.run.ensemble
    A = ensemble_chains(cfg, np.zeros(2 * dom.n_modes), n_steps, seed, LABELS["mix"] * 10 + 1, R, threads)
    B = ensemble_chains(cfg, _initial_state(cfg, dom), n_steps, seed, LABELS["mix"] * 10 + 2, R, threads)
    tab = Table(["n", "observable", "w1", "floor"])
    fits = Table(["observable", "rate", "C", "residual", "points"])
    checks = {}
    for ob in default_observables(dom):
        fa, fb = ob(A), ob(B)
        d = np.array([wasserstein1_1d(fa[k], fb[k]) for k in range(n_steps + 1)])
        floor = mc_floor(fa[-1], rng=stream(seed, LABELS["mix"], 99))
        for k in range(n_steps + 1):
            tab.add(k, ob.name, float(d[k]), floor)
        keep = d > floor_factor * floor
        stop = int(np.argmin(keep)) if not keep.all() else keep.size
        if stop >= 5:
            fit = fit_exponential_decay(np.arange(stop), d[:stop])
            fits.add(ob.name, fit.rate, fit.C, fit.residual, stop)
        else:
            fits.add(ob.name, float("nan"), float("nan"), float("nan"), stop)
        tail = d[-max(1, (n_steps + 1) // 4):]
        checks[f"merged_{ob.name}"] = bool(np.mean(tail) <= floor_factor * floor)
    return StudyResult(dict(mix=tab, mix_fit=fits), checks)


# -- toy oracle -----------------------------------------------------------

def toy_study(seed: int, samples: int = 10_000, n_max: int = 15, chains: int = 500, length: int = 200,
              floor_factor: float = 3.0) -> StudyResult:
    """Exact mixing oracle: the chain x -> x/2 + b started at 0 against Uniform[0, 2]."""
    rds = ToyAffineRds(0.5)
    paths = simulate_rds(rds, np.zeros(samples), n_max, stream(seed, LABELS["toy"], 0))
    w1 = np.array([w1_to_uniform(paths[k]) for k in range(n_max + 1)])
    # Monte Carlo floor: W1 of exact uniform samples of the same size, mean + 3 sd
    g = stream(seed, LABELS["toy"], 1)
    ref = np.array([w1_to_uniform(g.uniform(0.0, 2.0, samples)) for _ in range(20)])
    floor = float(ref.mean() + 3.0 * ref.std(ddof=1))
    keep = w1 > floor_factor * floor
    stop = int(np.argmin(keep)) if not keep.all() else keep.size
    fit = fit_exponential_decay(np.arange(stop), w1[:stop])
    tab = Table(["n", "W1_to_uniform", "fitted_beta"])
    for k in range(n_max + 1):
        tab.add(k, float(w1[k]), fit.rate)
    checks = {}
    for k in (5, 10, 15):
        if k <= n_max:
            checks[f"w1_bound_n{k}"] = bool(w1[k] <= 2.0 ** -k + floor)
    checks["beta"] = bool(abs(fit.rate - np.log(2.0)) <= 0.25 * np.log(2.0))
    long = simulate_rds(rds, np.zeros(chains), length, stream(seed, LABELS["toy"], 2))
    lim = lln_clt_check(long[1:].T, mean=1.0)
    checks["lln"] = lim.lln_ok
    checks["clt"] = lim.clt_ok
    summary = dict(floor=floor, beta=fit.rate, fit_points=stop, lln_average=lim.last_quarter_average,
                   lln_stderr=lim.lln_stderr, sigma2=lim.sigma2, ks_pvalue=lim.ks_pvalue)
    return StudyResult(dict(toy=tab), checks, summary)
