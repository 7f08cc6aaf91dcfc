"""End-to-end acceptance checks.

Each test records a one-line PASS/FAIL verdict through the ``criterion``
fixture; the lines are repeated in the terminal summary. The Monte Carlo
reproductions are marked slow but are part of the default run.
"""

import time

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import oracle
from conftest import tiny_setup
from mrlreg import GroupLabel
from mrlreg.estimator import FitConfig, efficient_information, general_score, improvement, solve_beta
from mrlreg.kernel import default_bandwidths
from mrlreg.simgen import calibrate_censoring, get_study, run_monte_carlo, sample_dataset, truth_mrl
from mrlreg.smoother import GroupSmoother
from test_properties import problems

NT, TR = GroupLabel.NONTRANSPLANT, GroupLabel.TRANSPLANT


def _inside(x, lo, hi):
    return lo <= x <= hi


@pytest.fixture(scope="module")
def study2_mc():
    return run_monte_carlo(get_study(2, n=1000), 200, censor_target=0.0, seed=0)


# -- Monte Carlo reproductions ---------------------------------------------------------


@pytest.mark.slow
def test_c1_study1_point_estimates(criterion):
    start = time.perf_counter()
    mc = run_monte_carlo(get_study(1, n=300), 200, censor_target=0.0, seed=0)
    elapsed = time.perf_counter() - start
    b2, b9 = mc.mean[0], mc.mean[7]
    ok = _inside(b2, -0.65, -0.55) and _inside(b9, -0.56, -0.45) and elapsed <= 1800
    criterion(1, ok, f"S1 n=300: mean beta2={b2:.3f} in [-0.65,-0.55], mean beta9={b9:.3f} in [-0.56,-0.45], "
                     f"{elapsed:.0f}s, failures {mc.failures}/200")
    assert ok


@pytest.mark.slow
def test_c2_study2_point_estimate_and_spread(criterion, study2_mc):
    mc = study2_mc
    mean, emp, est = mc.mean[0], mc.emp_sd[0], mc.mean_est_sd[0]
    ratio = est / emp
    ok = _inside(mean, -0.66, -0.56) and _inside(emp, 0.10, 0.18) and abs(ratio - 1) <= 0.30
    criterion(2, ok, f"S2 n=1000: mean beta2={mean:.3f} in [-0.66,-0.56], emp sd={emp:.3f} in [0.10,0.18], "
                     f"est sd={est:.3f} (ratio {ratio:.2f}, within 30%), failures {mc.failures}/200")
    assert ok


@pytest.mark.slow
def test_c3_study2_coverage(criterion, study2_mc):
    cp = study2_mc.cp
    ok = bool(np.all((cp >= 0.90) & (cp <= 0.99)))
    criterion(3, ok, f"S2 CP range [{cp.min():.3f}, {cp.max():.3f}] within [0.90, 0.99]")
    assert ok


@pytest.mark.slow
def test_c4_study1_censored(criterion):
    mc = run_monte_carlo(get_study(1, n=300), 200, censor_target=0.4, seed=0)
    b2 = mc.mean[0]
    ok = _inside(b2, -0.60, -0.44)
    criterion(4, ok, f"S1 40% censoring: mean beta2={b2:.3f} in [-0.60,-0.44], realized censoring "
                     f"{mc.realized_censoring:.3f}, failures {mc.failures}/200{' (flagged)' if mc.flagged else ''}")
    assert ok


@pytest.mark.slow
def test_c5_study3_two_indices(criterion):
    mc = run_monte_carlo(get_study(3, n=2000), 100, censor_target=0.0, seed=0)
    b31 = mc.mean[0]
    ok = _inside(b31, -0.72, -0.60)
    criterion(5, ok, f"S3 n=2000: mean beta31={b31:.3f} in [-0.72,-0.60], failures {mc.failures}/100")
    assert ok


# -- single-fit checks ---------------------------------------------------------------


@pytest.mark.slow
def test_c6_mrl_curve_accuracy(criterion):
    spec = get_study(1, n=2000)
    data = sample_dataset(spec, np.random.default_rng(0))
    fit = solve_beta(data, FitConfig())
    sm = GroupSmoother(data, NT, fit.beta_hat, fit.bandwidths)
    worst = 0.0
    for t in np.linspace(0.2, 1.5, 14):
        for v in np.linspace(-0.8, 0.8, 17):
            worst = max(worst, abs(sm.mrl(t, [v]) - truth_mrl(spec, NT, t, v)))
    ok = worst <= 0.15
    criterion(6, ok, f"S1 n=2000: sup |m_N hat - m_N| = {worst:.4f} <= 0.15")
    assert ok


def test_c7_oracle_equivalence(criterion):
    worst = 0.0
    rng = np.random.default_rng(7)
    for seed in range(20):
        d = 1 + seed % 2
        data, beta, bws = tiny_setup(seed, d=d, with_ties=seed % 3 == 0)
        assert data.n <= 10
        for transplant, label in ((False, NT), (True, TR)):
            grp = oracle.Group(data, beta, transplant)
            bw = bws.for_group(transplant)
            sm = GroupSmoother(data, label, beta, bws)
            subj = grp.subj[int(rng.integers(len(grp.subj)))]
            v, w = subj["v"], subj["w"]
            lo = w if transplant else 0.0
            t = float(rng.uniform(lo, data.tau))
            c = list(v) + ([w] if transplant else [])
            clock, horizon = t - (w or 0.0), data.tau - (w or 0.0)
            pairs = [
                (sm.cum_hazard(t, v, w), oracle.cum_hazard(grp, c, bw, clock)),
                (sm.cum_hazard_grad(t, v, w), oracle.cum_hazard_grad(grp, c, bw, clock)),
                (sm.hazard(t, v, w), oracle.hazard(grp, c, bw, clock)),
                (sm.hazard_grad(t, v, w), oracle.hazard_grad(grp, c, bw, clock)),
                (sm.mrl(t, v, w), oracle.mrl(grp, c, bw, clock, horizon)),
                (sm.mrl_derivs(t, v, w)[1], oracle.mrl_grad(grp, c, bw, clock, horizon)),
            ]
            tot, den, num = oracle.at_risk_terms(grp, bw, subj["i"], t)
            pairs += [(sm.cond_at_risk(t, subj["i"]), den / tot),
                      (sm.cond_at_risk_xl(t, subj["i"]), np.array(num) / tot)]
            for got, ref in pairs:
                worst = max(worst, float(np.max(np.abs(np.asarray(got) - np.asarray(ref)))))
        for weight in ("efficient", "simple"):
            got = general_score(beta, data, bws, g=weight)
            worst = max(worst, float(np.max(np.abs(got - oracle.score(data, beta, bws, weight)))))
    ok = worst <= 1e-12
    criterion(7, ok, f"20 datasets (n<=10): max |package - brute force| = {worst:.2e} <= 1e-12")
    assert ok


def test_c8_derivatives_match_finite_differences(criterion):
    spec = get_study(1, n=400)
    data = sample_dataset(spec, np.random.default_rng(3))
    bw = default_bandwidths(data, spec.beta0)
    rng = np.random.default_rng(0)
    smoothers = {NT: GroupSmoother(data, NT, spec.beta0, bw), TR: GroupSmoother(data, TR, spec.beta0, bw)}
    fails = {"cum_hazard_grad": 0, "hazard_grad": 0, "mrl_t": 0, "mrl_grad": 0}

    def close(value, fd):
        return abs(value - fd) <= max(1e-3, 1e-2 * abs(value))

    for k in range(50):
        label = NT if k % 2 == 0 else TR
        sm = smoothers[label]
        eps_v = sm.bw.h[0] * 1e-4
        eps_t = sm.bw.b * 1e-4
        v = rng.uniform(-0.8, 0.8)
        w = rng.uniform(1, 5) if label is TR else None
        t = rng.uniform(w or 0.1, (w or 0.0) + 1.0)
        fd_v = lambda f: (f(v + eps_v) - f(v - eps_v)) / (2 * eps_v)
        fails["cum_hazard_grad"] += not close(sm.cum_hazard_grad(t, [v], w)[0], fd_v(lambda a: sm.cum_hazard(t, [a], w)))
        fails["hazard_grad"] += not close(sm.hazard_grad(t, [v], w)[0], fd_v(lambda a: sm.hazard(t, [a], w)))
        m1, m2, _ = sm.mrl_derivs(t, [v], w)
        fails["mrl_grad"] += not close(m2[0], fd_v(lambda a: sm.mrl(t, [a], w)))
        fd_t = (sm.mrl(t + eps_t, [v], w) - sm.mrl(t - eps_t, [v], w)) / (2 * eps_t)
        fails["mrl_t"] += not close(float(m1), fd_t)
    ok = not any(fails.values())
    criterion(8, ok, "mismatches out of 50 points: " + ", ".join(f"{k}={n}" for k, n in fails.items()))
    assert ok


@settings(max_examples=25, deadline=None)
@given(problems(), st.floats(-1.5, 1.5), st.floats(0, 1), st.integers(0, 2**31))
def _structural(prob, v, frac, seed):
    data, beta, bws = prob
    sm = GroupSmoother(data, NT, beta, bws)
    vals = [sm.cum_hazard(t, [v]) for t in np.linspace(0, data.tau, 30)]
    assert vals[0] == 0 and np.all(np.diff(vals) >= -1e-12)
    assert sm.mrl(frac * data.tau, [v]) >= 0 and sm.mrl(data.tau, [v]) == 0
    info = efficient_information(beta, data, bws)
    assert np.linalg.eigvalsh(info).min() >= -1e-10
    spec = get_study(1, n=40)
    assert sample_dataset(spec, np.random.default_rng(seed)) == sample_dataset(spec, np.random.default_rng(seed))


def test_c9_structural_invariants(criterion):
    try:
        _structural()
        ok, detail = True, "monotone cumulative hazard from 0, MRL >= 0 and 0 at the horizon, PSD information, seed reproducibility"
    except AssertionError as exc:
        ok, detail = False, f"property violated: {exc}"
    criterion(9, ok, detail)
    assert ok


@pytest.mark.slow
def test_c10_study4_sign_pattern(criterion):
    spec = get_study(4, n=2000)
    law = calibrate_censoring(spec, np.random.default_rng(0))
    data = sample_dataset(spec, np.random.default_rng(1), law)
    fit = solve_beta(data, FitConfig())
    x = np.median(data.x, axis=0)
    v = float(fit.beta_hat.full[:, 0] @ x)
    sm_n = GroupSmoother(data, NT, fit.beta_hat, fit.bandwidths)
    tau = data.tau
    early, late = [], []
    for w in (1.0, 5.0, 10.0, 20.0):
        for t in (w + 10.0, w + 50.0):
            early.append(improvement(t, x, w, fit, data)[0])
    for w in (0.8 * tau, 0.85 * tau, 0.9 * tau):
        t = w + 0.25 * (tau - w)
        late.append(improvement(t, x, w, fit, data)[0] + 0.05 * sm_n.mrl(t, [v]))
    ok = max(early) < 0 and min(late) > 0
    criterion(10, ok, f"S4 n=2000: max improvement for w<=20 = {max(early):.3f} < 0; "
                      f"min (improvement + 0.05 m_N) for w>=0.8 tau = {min(late):.3f} > 0")
    assert ok
