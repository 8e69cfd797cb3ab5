import numpy as np
import pytest

from fiberlms.channel import uniform_link
from fiberlms.twin import DigitalTwin, make_twin_config
from fiberlms.waveforms import PulseSpec

T64 = 1 / 64e9


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def span_link():
    return uniform_link(1, 100.0)


@pytest.fixture(scope="session")
def short_twin():
    """50 km span, 10 km grid (M=5), L=64: small enough for exhaustive checks."""
    link = uniform_link(1, 50.0)
    cfg = make_twin_config(link, T64, grid_step_km=10.0, power_dbm=5.0, n_pol=2,
                           pulse=PulseSpec(0.1, 32, 2), block_length=64)
    return link, DigitalTwin(cfg)


def random_qam_window(rng, n_pol, n):
    from fiberlms.waveforms import map_qam
    return map_qam(rng.integers(0, 16, size=(n_pol, n)), 16).data


class FrozenDataset:
    """Twin-generated blocks ``d = y(w_true, phi_true) + AWGN`` with their branch outputs."""

    def __init__(self, link, grid_step_km, n_blocks, snr_db, phi_true=0.1, seed=7):
        from fiberlms.channel import true_profile
        from fiberlms.waveforms import map_qam
        self.link = link
        self.cfg = make_twin_config(link, T64, grid_step_km)
        self.twin = DigitalTwin(self.cfg)
        self.w_true = link.spans[0].gamma_per_w_km * true_profile(link, self.cfg.z_km)
        self.phi_true = phi_true
        rng = np.random.default_rng(seed)
        L = self.cfg.block_length
        self.windows, self.desired, self.u, self.a = [], [], [], []
        for _ in range(n_blocks):
            win = map_qam(rng.integers(0, 16, (2, 2 * L)), 16).data
            y, spec = self.twin.forward(win, self.w_true, phi_true)
            if np.isfinite(snr_db):
                sigma = np.sqrt(10 ** (-snr_db / 10) / 2)
                y = y + sigma * (rng.standard_normal(y.shape) + 1j * rng.standard_normal(y.shape))
            self.windows.append(win)
            self.desired.append(y)
            self.u.append(self.twin.branch_outputs_time(spec))
            self.a.append(win[:, self.twin.valid_symbols])

    def lambda_max(self):
        """Largest eigenvalue of the per-block tap correlation (half the Hessian of the block energy)."""
        m = self.cfg.M
        U = np.concatenate([x.reshape(m, -1) for x in self.u], axis=1) * self.cfg.rho_km[:, None]
        n_pol = self.a[0].shape[0]
        return float(np.linalg.eigvalsh((U.conj() @ U.T).real / len(self.u) / n_pol)[-1])

    def mu_for(self, step):
        """``mu`` giving a per-block step of ``step / lambda_max`` on the taps."""
        from fiberlms.lms import STEP_UNIT
        return step / self.lambda_max() * self.cfg.block_length * self.cfg.M / STEP_UNIT


def run_epochs(est, data, schedule):
    """Cycle an estimator over a frozen dataset; ``schedule`` holds ``(mu, epochs, averaged_epochs)``.

    Returns the tap average over the averaged epochs of the last stage that requests averaging.
    """
    from dataclasses import replace
    acc, n = 0.0, 0
    for mu, epochs, averaged in schedule:
        est.state = replace(est.state, mu=mu)
        for e in range(epochs):
            for win, d in zip(data.windows, data.desired):
                est.process_block(win, d)
                if e >= epochs - averaged:
                    acc = acc + est.state.w
                    n += 1
    return acc / n if n else est.state.w


ACCEPTANCE_LINES = []


@pytest.fixture
def report(request):
    """Record one ``criterion N: PASS|FAIL`` line, printed now and in the terminal summary."""
    def _report(criterion, ok, detail):
        line = f"criterion {criterion:>2}: {'PASS' if ok else 'FAIL'}  {detail}"
        ACCEPTANCE_LINES.append(line)
        print(line)
        return ok
    return _report


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
