import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from mccs import bounds as bd
from mccs import sensing as se
from mccs import signals as sg
from mccs.errors import InapplicableBoundError, RankDeficientError
from mccs.keystream import KeyChain


def unit(ratio=1.0, quartic=None):
    return sg.SignalStats(1.0, ratio, quartic)


def zeta_by_hand(m, eta, theta, ratio):
    # written out term by term, independent of bounds.zeta
    inner = 3.0 / (2.0 * eta) - 1.0
    scaled = inner / m
    bracket = (1.0 + scaled) * ratio - 1.0
    return 1.0 / (1.0 + bracket * (1.0 - theta) ** -2)


def test_lower_bound_worked_example():
    lb, z = bd.theorem1_lb(bd.PerturbationRegime(512, 1024, 0.1594, 0.1), unit(1.0001),
                           math.sqrt(512) + math.sqrt(1024))
    assert lb == pytest.approx(0.0109, abs=2e-4)
    assert z == pytest.approx(0.98, abs=5e-3)
    assert bd.to_db(lb) == pytest.approx(19.61, abs=0.05)


def test_lower_bound_default_sigma_is_asymptote():
    r = bd.PerturbationRegime(100, 400, 0.2, 0.3)
    assert bd.theorem1_lb(r, unit()) == bd.theorem1_lb(r, unit(), 30.0)


def test_lower_bound_vanishes_with_eta():
    lb, _ = bd.theorem1_lb(bd.PerturbationRegime(64, 128, 1e-12, 0.5), unit())
    assert lb < 1e-12


def test_zeta_spreadsheet_oracle():
    _, z = bd.theorem1_lb(bd.PerturbationRegime(128, 256, 0.25, 0.5), unit(1.0))
    assert z == pytest.approx(1 / (1 + 4 * (1 / 128) * 5), rel=1e-14)
    for m, eta, theta, ratio in [(7, 0.01, 0.9, 1.3), (1000, 0.5, 0.01, 1.0), (3, 0.3, 0.5, 2.0)]:
        assert bd.zeta(m, eta, theta, ratio) == pytest.approx(zeta_by_hand(m, eta, theta, ratio), rel=1e-14)


def test_zeta_monotone():
    thetas = np.linspace(0.05, 0.95, 10)
    etas = np.linspace(0.01, 0.5, 10)
    zt = [bd.zeta(128, 0.1, t, 1.01) for t in thetas]
    ze = [bd.zeta(128, e, 0.5, 1.01) for e in etas]
    assert all(a > b for a, b in zip(zt, zt[1:]))
    assert all(a < b for a, b in zip(ze, ze[1:]))
    assert all(0 < v <= 1 for v in zt + ze)


def test_regime_guards():
    with pytest.raises(ValueError):
        bd.PerturbationRegime(8, 8, 0.6, 0.5)
    with pytest.raises(ValueError):
        bd.PerturbationRegime(8, 8, 0.1, 1.0)
    with pytest.raises(ValueError):
        bd.PerturbationRegime(8, 8, 0.1, 0.0)
    with pytest.raises(ValueError):
        bd.theorem1_lb(bd.PerturbationRegime(8, 8, 0.1, 0.5), sg.SignalStats(0.0, 0.0))


def test_asymptotic_bound_examples():
    assert bd.corollary1_lb(0.5, 0.0, 1.0, 0.5) == 0.0
    assert bd.corollary1_lb(1.0, 0.5, 1.0, 1.0) == pytest.approx(0.5)
    # 4 * 0.1594 * 0.5 / (1 + sqrt(0.5))^2
    assert bd.corollary1_lb(0.5, 0.1594, 1.0, 1.0) == pytest.approx(0.10939, abs=1e-5)
    with pytest.raises(ValueError):
        bd.corollary1_lb(1.5, 0.1, 1.0, 0.5)
    with pytest.raises(ValueError):
        bd.corollary1_lb(0.5, 0.6, 1.0, 0.5)


@given(st.integers(1, 4096), st.integers(1, 4096), st.floats(1e-6, 0.5))
def test_asymptotic_bound_matches_ub(m, n, eta):
    if m > n:
        m, n = n, m
    db = -10 * math.log10(bd.corollary1_lb(m / n, eta, 1.0, 1.0))
    assert db == pytest.approx(bd.practical_ub_arsnr(m, n, eta), abs=1e-12)


def test_ub_examples():
    assert bd.practical_ub_arsnr(512, 1024, 0.1594) == pytest.approx(9.61, abs=0.005)
    assert bd.practical_ub_arsnr(300, 300, 0.5) == pytest.approx(10 * math.log10(2), abs=1e-12)
    assert bd.practical_ub_arsnr(64, 100, 0.02) - bd.practical_ub_arsnr(64, 100, 0.04) == pytest.approx(
        10 * math.log10(2), abs=1e-12)
    with pytest.raises(ValueError):
        bd.practical_ub_arsnr(64, 100, 0.0)


def test_second_moment_oracle_edges():
    st1 = sg.SignalStats(1.0, 1.2, 0.4)
    assert bd.lemma1_second_moment_oracle(1, 0.1, st1) == pytest.approx(16 * 0.1 * (3 * 0.1 * 0.8 + 0.4))
    assert 3 * 0.5 * (1.2 - 0.4) + 0.4 <= 1.5 * 1.2
    with pytest.raises(ValueError):
        bd.lemma1_second_moment_oracle(4, 0.1, sg.SignalStats(1.0, 1.0))


def test_perturbation_moments_fixed_xi():
    m, n, eta = 64, 32, 0.1
    xi = np.random.default_rng(3).standard_normal(n)
    xi /= np.linalg.norm(xi)
    stats = sg.SignalStats(1.0, 1.0, float(np.sum(xi ** 4)))
    v, e = bd.perturbation_energy_samples(m, n, eta, 100_000, seed=1, xi=xi)
    assert np.allclose(e, 1.0)
    assert abs(v.mean() - 4 * m * eta) <= 4 * v.std() / math.sqrt(len(v))
    v2 = v ** 2
    assert abs(v2.mean() - bd.lemma1_second_moment_oracle(m, eta, stats)) <= 4 * v2.std() / math.sqrt(len(v))


def test_exceedance_small_theta():
    rate = bd.lemma1_probability_check(bd.PerturbationRegime(32, 64, 0.1, 1e-6), unit(), 500, seed=2)
    assert rate == 1.0
    with pytest.raises(ValueError):
        bd.lemma1_probability_check(bd.PerturbationRegime(32, 64, 0.1, 0.5), unit(), 50)


def test_ric_zero_perturbation_and_definitions():
    a = se.gen_matrix(KeyChain(1), 0, 64, 128, 0)
    b = sg.make_basis("random-onb", 128, 4)
    ek, e2k = bd.estimate_ric_constants(a, np.zeros((64, 128)), b, 4, 200)
    assert ek.eps == 0 and e2k.eps == 0
    for est in (ek, e2k):
        assert est.delta == pytest.approx(max(est.sigma_max ** 2 - 1, 1 - est.sigma_min ** 2))
        assert est.sigma_min <= est.sigma_max
    assert (ek.k, e2k.k) == (4, 8)
    assert e2k.sigma_max >= ek.sigma_max - 0.05
    with pytest.raises(ValueError):
        bd.estimate_ric_constants(a, np.zeros((64, 128)), b, 40, 200)


def test_ric_eps_tracks_density():
    keys = KeyChain.derive(2, 2)
    b = sg.make_basis("random-onb", 256, 1)
    a0 = se.gen_matrix(keys, 0, 128, 256, 0)
    eps = []
    for eta in (0.002, 0.01, 0.05):
        a1 = se.gen_matrix(keys, 1, 128, 256, 0, (eta,))
        eps.append(bd.estimate_ric_constants(a1, se.perturbation_between(a0, a1), b, 4, 200)[0].eps)
    assert eps[0] < eps[1] < eps[2]
    # spectral-norm ratio of a density-eta +-2 matrix to a +-1 matrix is about 2 sqrt(eta)
    assert eps[2] == pytest.approx(2 * math.sqrt(0.05), rel=0.3)


def test_delta_max_and_rip_bound_trivial():
    assert bd.delta_2k_max(0.0) == pytest.approx(math.sqrt(2) - 1)
    zero = bd.RicEstimate(4, 1.0, 1.0, 0.0, 0.0, 100)
    gamma, c, ub = bd.proposition1_ub(zero, bd.RicEstimate(8, 1.0, 1.0, 0.0, 0.0, 100), 3.0)
    assert (gamma, c, ub) == (0.0, pytest.approx(4.0), 0.0)


def test_rip_bound_arithmetic_oracle():
    est_k = bd.RicEstimate(4, 0.9, 1.1, 0.2, 0.08, 100)
    est_2k = bd.RicEstimate(8, 0.9, 1.1, 0.05, 0.1, 100)
    gamma, c, ub = bd.proposition1_ub(est_k, est_2k, 2.0)
    denom = 1 - (2 ** 0.5 + 1) * (1.05 * 1.1 ** 2 - 1)
    assert c == pytest.approx(4 * 1.05 ** 0.5 * 1.1 / denom, rel=1e-14)
    assert gamma == pytest.approx(0.08 * (1.2 / 0.8) ** 0.5 * 2.0, rel=1e-14)
    assert ub == pytest.approx(c * gamma)


def test_rip_bound_inapplicable():
    ok_k = bd.RicEstimate(4, 1.0, 1.0, 0.0, 0.0, 100)
    with pytest.raises(InapplicableBoundError):
        bd.proposition1_ub(ok_k, bd.RicEstimate(8, 1, 1, 0.0, 0.3, 100), 1.0)
    with pytest.raises(InapplicableBoundError):
        bd.proposition1_ub(ok_k, bd.RicEstimate(8, 1, 1, 0.4, 0.05, 100), 1.0)


def test_practical_lb():
    assert bd.practical_lb_arsnr(32, 64, 0.0, 100) == 300.0
    lbs = [bd.practical_lb_arsnr(64, 128, eta, 100, seed=3) for eta in (0.01, 0.03, 0.06, 0.1)]
    assert all(a > b for a, b in zip(lbs, lbs[1:]))
    lb = bd.practical_lb_arsnr(256, 512, 0.03, 100)
    assert lb < bd.practical_ub_arsnr(256, 512, 0.03)


def test_naive_error():
    keys = KeyChain.derive(2, 9)
    a0 = se.gen_matrix(keys, 0, 32, 64, 0)
    a1 = se.gen_matrix(keys, 1, 32, 64, 0, (0.05,))
    d = se.perturbation_between(a0, a1).astype()
    dx, db = bd.naive_second_class_error(a0, np.zeros_like(d), np.ones(64))
    assert not dx.any() and db == 300.0
    kernel = np.linalg.svd(d)[2][-1]  # rank(d) <= 32 < 64 so this lies in Ker dA
    dx, _ = bd.naive_second_class_error(a0, d, kernel)
    assert np.linalg.norm(dx) < 1e-12
    g = bd.pinv_gain_samples(32, 64, 0.05, 1, seed=9)[0]
    x = np.random.default_rng(0).standard_normal(64)
    dx, db = bd.naive_second_class_error(a0, d, x)
    assert (dx @ dx) / (x @ x) <= g ** 2 * (1 + 1e-5)
    with pytest.raises(RankDeficientError):
        bd.naive_second_class_error(np.ones((4, 8)), np.ones((4, 8)), np.ones(8))


def test_sweep_rows_and_csv(tmp_path):
    rows = bd.bound_sweep(64, 128, [0.02], 0.5, unit(), lb_trials=20)
    assert len(rows) == 1 and not rows[0]["ub_applicable"] and rows[0]["ub_value"] is None
    grid = [0.01 * i for i in range(1, 11)]
    ubs = [bd.practical_ub_arsnr(64, 128, e) for e in grid]
    assert all(a > b for a, b in zip(ubs, ubs[1:]))
    bd.write_sweep(tmp_path / "b.csv", rows, ["x"])
    lines = (tmp_path / "b.csv").read_text().splitlines()
    assert lines[1] == ",".join(bd.SWEEP_COLUMNS) and lines[2].endswith(",0,")


def test_sweep_flags_rip_bound_inapplicable():
    b = sg.make_basis("random-onb", 1024, 0)
    rows = bd.bound_sweep(512, 1024, [0.002, 0.02], 0.5, unit(), lb_trials=5, k=16, basis=b,
                          ric_trials=200)
    assert not rows[1]["ub_applicable"]
    keys = KeyChain.derive(2, 0)
    a0 = se.gen_matrix(keys, 0, 512, 1024, 0)
    consts = []
    for eta in (0.002, 0.02):
        a1 = se.gen_matrix(keys, 1, 512, 1024, 0, (eta,))
        ric = bd.estimate_ric_constants(a1, se.perturbation_between(a0, a1), b, 16, 200)
        consts.append(bd.bound_report(bd.PerturbationRegime(512, 1024, eta), unit(), 5, ric=ric).constants)
    assert consts[0]["eps_2k"] < bd.EPS_MAX < consts[1]["eps_2k"]
    # at small eta the RIC hypothesis, not eps, is what blocks the bound
    assert consts[0]["delta_2k"] >= consts[0]["delta_2k_max"]
    assert not rows[0]["ub_applicable"]


def test_report_with_applicable_constants():
    est_k = bd.RicEstimate(2, 0.95, 1.05, 0.1, 0.05, 100)
    est_2k = bd.RicEstimate(4, 0.9, 1.1, 0.1, 0.06, 100)
    rep = bd.bound_report(bd.PerturbationRegime(64, 128, 0.01), unit(), 5, ric=(est_k, est_2k))
    _, _, ub = bd.proposition1_ub(est_k, est_2k, math.sqrt(64))
    assert rep.ub_error_norm == pytest.approx(ub)
    assert rep.lb_arsnr_db <= rep.ub_arsnr_db
