import warnings

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from fiberlms.channel import nominal_profile, true_profile_db, uniform_link
from fiberlms.config import build_link, build_pulse, load_config
from fiberlms.cli import scenario_path
from fiberlms.experiment import realization_seeds, simulate_realization
from fiberlms.metrics import (PROFILE_FLOOR_DB, ProfileEstimate, anomaly_steps, ls_oracle,
                              profile_estimate, retained, rmse_db, rmse_rebound_db, snr_db,
                              spm_snr, taps_to_db)
from fiberlms.receiver import finish_receive
from fiberlms.twin import (DigitalTwin, cyclic_window, make_twin_config, twin_grid,
                           valid_symbol_indices)
from fiberlms.waveforms import SymbolSequence, map_qam

from conftest import FrozenDataset


def _est(link, step=5.0, offset=0.0):
    z, _ = twin_grid(link, step)
    true_db = true_profile_db(link, z)
    return ProfileEstimate(z, true_db + offset, true_db, -true_db)


def test_rmse_trivial_cases():
    link = uniform_link(1, 100.0)
    assert rmse_db(_est(link)) == 0.0
    z = np.linspace(2.5, 72.5, 15)
    est = ProfileEstimate(z, -0.2 * z + 0.5, -0.2 * z, 0.2 * z)
    assert rmse_db(est) == pytest.approx(0.5)


def test_rmse_empty_retained_set():
    est = ProfileEstimate(np.array([90.0]), np.array([-18.0]), np.array([-18.0]), np.array([18.0]))
    with pytest.raises(ValueError, match="no profile point"):
        rmse_db(est)


def test_profile_shape_check():
    with pytest.raises(ValueError):
        ProfileEstimate(np.zeros(3), np.zeros(2), np.zeros(3), np.zeros(3))


@settings(max_examples=50, deadline=None)
@given(st.floats(0, 30), st.floats(0, 30))
def test_cutoff_monotone(c1, c2):
    est = _est(uniform_link(2, 100.0))
    lo, hi = sorted((c1, c2))
    assert retained(est, lo).sum() <= retained(est, hi).sum()


def test_nominal_benchmark_three_span():
    link = uniform_link(3, 100.0, anomalies=[(125.0, 1.0)])
    z, _ = twin_grid(link, 5.0)
    nominal_db = 10 * np.log10(nominal_profile(link, z))
    true_db = true_profile_db(link, z)
    value = rmse_db(ProfileEstimate(z, nominal_db, true_db, -true_db))
    assert round(value, 1) == 0.5


def test_taps_to_db():
    assert taps_to_db(1.26, 1.26) == pytest.approx(0.0)
    assert taps_to_db(0.126, 1.26) == pytest.approx(-10.0)
    assert taps_to_db(0.0, 1.26) == PROFILE_FLOOR_DB
    assert taps_to_db(-1.0, 1.26) == PROFILE_FLOOR_DB


def test_profile_estimate_uses_span_gamma():
    link = uniform_link(1, 100.0, gamma=2.0)
    z, _ = twin_grid(link, 10.0)
    est = profile_estimate(link, z, 2.0 * 10 ** (true_profile_db(link, z) / 10))
    assert np.allclose(est.error_db, 0.0, atol=1e-12)


def test_anomaly_steps_on_truth():
    pos = [15.0, 30.0, 45.0, 60.0]
    link = uniform_link(1, 100.0, anomalies=[(p, 0.25) for p in pos])
    est_steps, true_steps = anomaly_steps(_est(link), pos)
    assert np.allclose(true_steps, 0.25)
    assert np.allclose(est_steps, true_steps)
    est_steps, _ = anomaly_steps(_est(link, offset=1.0), pos)
    assert np.allclose(est_steps, 0.25)
    with pytest.raises(ValueError):
        anomaly_steps(_est(link), [1.0])


def test_rebound():
    assert rmse_rebound_db([1.0, 0.8, 0.5]) == 0.0
    assert rmse_rebound_db([1.0, 0.4, 0.7, 0.5]) == pytest.approx(0.3)
    assert rmse_rebound_db([0.3]) == 0.0


def test_snr_db():
    ref = np.ones(100, complex)
    assert snr_db(ref, ref) == np.inf
    assert snr_db(ref + 0.1, ref) == pytest.approx(20.0)


@pytest.fixture(scope="module")
def noiseless_data():
    return FrozenDataset(uniform_link(1, 100.0, anomalies=[(30.0, 0.5)]), 10.0, 6, np.inf)


def test_ls_oracle_exact_on_twin_data(noiseless_data):
    d = noiseless_data
    w, phi = ls_oracle(d.u, d.desired, d.a, d.cfg.rho_km)
    assert np.max(np.abs(w - d.w_true)) <= 1e-8 * np.max(d.w_true)
    assert phi == pytest.approx(d.phi_true, abs=1e-8)


def test_ls_oracle_singular_warns(noiseless_data):
    d = noiseless_data
    u = [np.concatenate([x, x[:1]], axis=0) for x in d.u]
    rho = np.concatenate([d.cfg.rho_km, d.cfg.rho_km[:1]])
    with pytest.warns(RuntimeWarning, match="pseudo-inverse"):
        w, _ = ls_oracle(u, d.desired, d.a, rho)
    assert np.isfinite(w).all()


def test_spm_snr_directions(noiseless_data):
    d = noiseless_data
    twin = d.twin
    desired = d.desired[0]
    a = d.a[0]
    y_none, _ = twin.forward(d.windows[0], np.zeros(d.cfg.M), 0.0)
    before, after = spm_snr(desired, desired - (y_none - a), a)
    assert before == after
    y_true, _ = twin.forward(d.windows[0], d.w_true, d.phi_true)
    before, after = spm_snr(desired, desired - (y_true - a), a)
    assert after > before + 40


def test_ls_on_split_step_data_matches_truth():
    cfg = load_config(scenario_path("fig3"))
    link = build_link(cfg)
    tcfg = make_twin_config(link, cfg.symbol_period_s, 5.0, 5.0, 2, build_pulse(cfg, 2))
    twin = DigitalTwin(tcfg)
    L = tcfg.block_length
    us, ds, As = [], [], []
    for symbol_seed, _ in realization_seeds(1, 2):
        real = simulate_realization(cfg, symbol_seed)
        tx = map_qam(real.indices, 16, cfg.symbol_period_s)
        out = finish_receive(SymbolSequence(real.received, cfg.symbol_period_s), tx, 16)
        for k in range(cfg.run.n_symbols // L):
            win = cyclic_window(out.decided.data, k, L)
            _, spec = twin.forward(win, np.zeros(tcfg.M), 0.0)
            us.append(twin.branch_outputs_time(spec))
            ds.append(out.desired.data[:, valid_symbol_indices(k, L, cfg.run.n_symbols)])
            As.append(win[:, twin.valid_symbols])
    w, _ = ls_oracle(us, ds, As, tcfg.rho_km)
    est = profile_estimate(link, tcfg.z_km, w)
    assert np.max(np.abs(est.error_db[retained(est)])) <= 0.2
