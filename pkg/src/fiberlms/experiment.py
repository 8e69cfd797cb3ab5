"""End-to-end runs: waveform, split-step link, receiver and block LMS over many realizations.

Receiver noise is loaded on the symbols after the matched filter and GVD
compensation. Both operations are linear and the noise is white, so this is
equivalent to loading the field at the receiver input, and it lets the
noiseless link output of each realization be cached and reused across step
sizes, SNR values or grid steps.
"""

import csv
import hashlib
import io
import json
import platform
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from . import __version__
from .channel import CleStepper, ssfm_propagate
from .config import build_link, build_pulse
from .lms import (BlockLMS, DivergenceError, configure_steps, fit_phi, init_taps,
                  wrap_phase)
from .metrics import profile_estimate, rmse_db, rmse_rebound_db, spm_snr
from .receiver import decide_indices, downsample, finish_receive, gvd_compensate, matched_filter
from .twin import (DigitalTwin, cyclic_window, full_branch_outputs, make_twin_config,
                   valid_symbol_indices)
from .waveforms import SymbolSequence, dbm_to_watt, load_awgn, map_qam, modulate


@dataclass
class Realization:
    """Transmitted symbol indices and the noiseless received symbols (before AGC)."""

    indices: np.ndarray
    received: np.ndarray


def _waveform_key(cfg):
    lk, sg, sm = cfg.link, cfg.signal, cfg.sim
    return json.dumps([vars(lk), vars(sg), vars(sm), cfg.run.n_symbols, cfg.run.seed],
                      sort_keys=True)


def realization_seeds(seed, count):
    """Independent child seeds for symbols and noise of each realization."""
    root = np.random.SeedSequence(seed)
    return [tuple(child.spawn(2)) for child in root.spawn(count)]


def simulate_realization(cfg, symbol_seed):
    """Random symbols through the split-step link and the linear receiver front end."""
    link = build_link(cfg)
    sg = cfg.signal
    pulse = build_pulse(cfg)
    rng = np.random.default_rng(symbol_seed)
    idx = rng.integers(0, sg.qam_order, size=(sg.n_pol, cfg.run.n_symbols))
    tx = map_qam(idx, sg.qam_order, cfg.symbol_period_s)
    field_in = modulate(tx, pulse, sg.power_dbm)
    stepper = CleStepper(cfg.sim.first_step_m, cfg.sim.max_step_m)
    rx = ssfm_propagate(field_in, link, stepper)
    sym = downsample(gvd_compensate(matched_filter(rx, pulse), link), sg.power_dbm)
    return Realization(idx, sym.data)


def _simulate_job(args):
    cfg, seed = args
    return simulate_realization(cfg, seed)


class RealizationCache:
    """Noiseless realizations keyed by the physical setup and realization index."""

    def __init__(self):
        self._store = {}

    def get(self, cfg, indices, seeds, jobs=1):
        key = _waveform_key(cfg)
        bucket = self._store.setdefault(key, {})
        missing = [i for i in indices if i not in bucket]
        if missing:
            args = [(cfg, seeds[i][0]) for i in missing]
            if jobs > 1 and len(missing) > 1:
                with ProcessPoolExecutor(max_workers=jobs) as ex:
                    results = list(ex.map(_simulate_job, args))
            else:
                results = [_simulate_job(a) for a in args]
            for i, r in zip(missing, results):
                bucket[i] = r
        return [bucket[i] for i in indices]

    def __len__(self):
        return sum(len(b) for b in self._store.values())


@dataclass
class ExperimentResult:
    scenario: str
    config: dict
    seed: int
    z_km: np.ndarray
    taps: np.ndarray
    phi: float
    profile: object
    trace_symbols: np.ndarray
    trace_rmse_db: np.ndarray
    final_rmse_db: float
    ser: float
    snr_before_db: float
    snr_after_db: float
    unstable: bool
    diverged: bool
    rebound_db: float
    runtime_s: float
    tap_records: list = field(default_factory=list)

    def profile_rows(self):
        p = self.profile
        return [("z_km", "est_db", "true_db", "path_loss_db")] + [
            (_fmt(z), _fmt(e), _fmt(t), _fmt(pl))
            for z, e, t, pl in zip(p.z_km, p.est_db, p.true_db, p.path_loss_db)]

    def trace_rows(self):
        return [("n_symbols", "rmse_db")] + [
            (str(int(n)), _fmt(r)) for n, r in zip(self.trace_symbols, self.trace_rmse_db)]

    def taps_rows(self):
        m = self.taps.size
        head = ("k", "phi_rad", "error_energy") + tuple(f"w_{i}" for i in range(m))
        return [head] + [(str(r.k), _fmt(r.phi), _fmt(r.error_energy)) + tuple(_fmt(x) for x in r.w)
                         for r in self.tap_records]

    def metrics(self):
        return {
            "final_rmse_db": self.final_rmse_db, "ser": self.ser, "phi_rad": self.phi,
            "snr_before_db": _finite(self.snr_before_db),
            "snr_after_db": _finite(self.snr_after_db),
            "unstable": self.unstable, "diverged": self.diverged, "rmse_rebound_db": self.rebound_db,
        }

    def write(self, out_dir, figures=True):
        """Write CSV files, optional PNG figures and ``manifest.json``; returns the manifest."""
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        files = {"profile.csv": self.profile_rows(), "rmse_trace.csv": self.trace_rows()}
        if self.tap_records:
            files["taps.csv"] = self.taps_rows()
        checksums = {}
        for name, rows in files.items():
            data = _csv_bytes(rows)
            (out / name).write_bytes(data)
            checksums[name] = hashlib.sha256(data).hexdigest()
        if figures:
            from .plotting import plot_result
            for path in plot_result(self, out):
                checksums[path.name] = hashlib.sha256(path.read_bytes()).hexdigest()
        manifest = {
            "scenario": self.scenario, "seed": self.seed, "config": self.config,
            "metrics": self.metrics(), "runtime_s": self.runtime_s,
            "versions": _versions(), "files": checksums,
        }
        (out / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True,
                                                      default=_json_safe) + "\n")
        return manifest


def _fmt(x):
    return repr(float(x))


def _csv_bytes(rows):
    buf = io.StringIO()
    csv.writer(buf, lineterminator="\n").writerows(rows)
    return buf.getvalue().encode()


def _json_safe(x):
    if isinstance(x, (np.floating, np.integer)):
        return x.item()
    raise TypeError(f"not serializable: {x!r}")


def _versions():
    import matplotlib
    import scipy
    return {"fiberlms": __version__, "numpy": np.__version__, "scipy": scipy.__version__,
            "matplotlib": matplotlib.__version__, "python": platform.python_version()}


def _finite(x):
    # JSON has no infinity
    return x if np.isfinite(x) else None


def run_experiment(cfg, cache=None, jobs=1, progress=None):
    """Run a scenario and return an :class:`ExperimentResult`.

    The twin taps and phase persist across realizations. With
    ``run.waveform_pool > 0`` only that many distinct link outputs are
    simulated and reused cyclically, each time with fresh receiver noise.
    """
    t0 = time.perf_counter()
    link = build_link(cfg)
    sg, run = cfg.signal, cfg.run
    tcfg = make_twin_config(link, cfg.symbol_period_s, cfg.twin.grid_step_km, sg.power_dbm,
                            sg.n_pol, build_pulse(cfg, 2), cfg.twin.block_length_symbols or None)
    if run.n_symbols % tcfg.block_length:
        raise ValueError(f"run.n_symbols ({run.n_symbols}) must be a multiple of the "
                         f"block length ({tcfg.block_length})")
    twin = DigitalTwin(tcfg)
    seeds = realization_seeds(run.seed, run.realizations)
    state = init_taps(link, tcfg, cfg.lms.init, seed=seeds[0][1].spawn(1)[0])
    state = configure_steps(state, link, dbm_to_watt(sg.power_dbm), cfg.lms.mu_bar,
                            cfg.lms.mu0_scale)
    est = BlockLMS(twin, state, clamp=cfg.lms.clamp_nonnegative,
                   record_every=run.taps_every_blocks)
    cache = cache if cache is not None else RealizationCache()
    pool = run.waveform_pool or run.realizations
    mode = "data-aided" if cfg.lms.data_aided else "decision-directed"
    blocks_per_real = run.n_symbols // tcfg.block_length
    avg_n = run.average_last_blocks
    w_sum = np.zeros(tcfg.M)
    w_count = 0
    total_blocks = run.realizations * blocks_per_real

    trace_n, trace_rmse = [0], [rmse_db(profile_estimate(link, tcfg.z_km, state.w))]
    errors = 0
    diverged = False
    last = None
    chunk = max(1, jobs)
    r = 0
    while r < run.realizations and not diverged:
        batch = list(range(r, min(r + chunk, run.realizations)))
        reals = cache.get(cfg, [i % pool for i in batch], seeds, jobs)
        for i, real in zip(batch, reals):
            tx = map_qam(real.indices, sg.qam_order, cfg.symbol_period_s)
            rx = SymbolSequence(real.received, cfg.symbol_period_s)
            rx = load_awgn(rx, cfg.noise.snr_db, seed=seeds[i][1])
            out = finish_receive(rx, tx, sg.qam_order, mode)
            if mode == "decision-directed":
                errors += int(np.sum(decide_indices(out.desired, sg.qam_order) != real.indices))
            if i == 0 and cfg.lms.phi_init == "fit":
                win = cyclic_window(out.decided.data, 0, tcfg.block_length)
                idx = valid_symbol_indices(0, tcfg.block_length, run.n_symbols)
                phi0 = fit_phi(twin, win, out.desired.data[:, idx], est.state.w)
                est.state = replace(est.state, phi=wrap_phase(phi0))
            try:
                for k in range(blocks_per_real):
                    win = cyclic_window(out.decided.data, k, tcfg.block_length)
                    idx = valid_symbol_indices(k, tcfg.block_length, run.n_symbols)
                    est.process_block(win, out.desired.data[:, idx])
                    done = i * blocks_per_real + k + 1
                    if avg_n and done > total_blocks - avg_n:
                        w_sum += est.state.w
                        w_count += 1
            except DivergenceError:
                diverged = True
                break
            last = (out, real)
            every = max(run.trace_every_realizations, 1)
            if (i + 1) % every == 0 or i + 1 == run.realizations:
                trace_n.append((i + 1) * run.n_symbols)
                trace_rmse.append(rmse_db(profile_estimate(link, tcfg.z_km, est.state.w)))
            if progress:
                progress(i + 1, run.realizations, trace_rmse[-1])
        r = batch[-1] + 1

    w_final = w_sum / w_count if w_count else est.state.w
    profile = profile_estimate(link, tcfg.z_km, w_final)
    snr_b = snr_a = float("nan")
    if last is not None:
        out, real = last
        a = out.decided.data
        n = full_branch_outputs(tcfg, a, taps=est.state.w)
        d = out.desired.data
        snr_b, snr_a = spm_snr(d, d - n + 1j * est.state.phi * a, a)
    rebound = rmse_rebound_db(trace_rmse)
    n_done = len(est.energies) * tcfg.block_length
    ser = errors / (n_done * sg.n_pol) if mode == "decision-directed" and n_done else 0.0
    return ExperimentResult(
        scenario=cfg.name, config=_config_dict(cfg), seed=run.seed, z_km=tcfg.z_km,
        taps=w_final, phi=est.state.phi, profile=profile,
        trace_symbols=np.array(trace_n), trace_rmse_db=np.array(trace_rmse),
        final_rmse_db=rmse_db(profile), ser=ser, snr_before_db=snr_b, snr_after_db=snr_a,
        unstable=est.unstable or diverged or rebound > run.rebound_threshold_db,
        diverged=diverged, rebound_db=rebound,
        runtime_s=time.perf_counter() - t0, tap_records=est.records)


def _config_dict(cfg):
    d = cfg.to_dict()
    d["noise"]["snr_db"] = _finite(d["noise"]["snr_db"])
    return d
