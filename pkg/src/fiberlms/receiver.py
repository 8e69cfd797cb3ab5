"""Receiver DSP: matched filter, GVD compensation, phase recovery and decisions."""

from dataclasses import dataclass

import numpy as np
from scipy import fft as sfft

from .channel import accumulated_dispersion, angular_frequency
from .waveforms import SymbolSequence, dbm_to_watt, qam_constellation, rrc_response


@dataclass
class RxOutput:
    """Received symbols ``desired`` (d) and the symbols fed to the twin ``decided``."""

    desired: SymbolSequence
    decided: SymbolSequence
    mode: str = "data-aided"

    def __post_init__(self):
        if self.desired.data.shape != self.decided.data.shape:
            raise ValueError("desired and decided symbols must have the same shape")
        if self.mode not in ("data-aided", "decision-directed"):
            raise ValueError(f"unknown receiver mode {self.mode!r}")


def matched_filter(field, pulse):
    """Filter with the conjugate pulse spectrum, keeping the sample rate."""
    if pulse.samples_per_symbol != field.samples_per_symbol:
        pulse = pulse.with_samples_per_symbol(field.samples_per_symbol)
    resp = np.conj(rrc_response(field.n_samples, pulse))
    return field.copy(sfft.ifft(sfft.fft(field.data, axis=-1) * resp, axis=-1))


def downsample(field, power_dbm=None):
    """Pick the symbol instants of a matched-filtered field.

    With ``power_dbm`` the launch scaling applied by ``modulate`` is undone,
    so a back-to-back link returns the unit-energy symbols.
    """
    n_s = field.samples_per_symbol
    sym = field.data[:, ::n_s]
    if power_dbm is not None:
        p_pol = dbm_to_watt(power_dbm) / field.n_pol
        sym = sym / np.sqrt(n_s * p_pol)
    return SymbolSequence(sym, field.symbol_period_s)


def matched_filter_downsample(field, pulse, power_dbm=None):
    return downsample(matched_filter(field, pulse), power_dbm)


def gvd_compensate(field, link, factor=1.0):
    """Undo the link's accumulated dispersion: multiply by ``exp(+j w^2 B(L) / 2)``."""
    b_tot = float(accumulated_dispersion(link, link.total_length_km)) * factor
    omega = angular_frequency(field.n_samples, field.sample_period_s)
    spec = sfft.fft(field.data, axis=-1) * np.exp(1j * b_tot * omega ** 2 / 2)
    return field.copy(sfft.ifft(spec, axis=-1))


def normalize_gain(symbols, reference):
    """Remove the real gain ``|sum d ref*| / sum |ref|^2`` (automatic gain control)."""
    corr = np.sum(symbols.data * np.conj(reference.data))
    ref_energy = np.sum(np.abs(reference.data) ** 2)
    if ref_energy == 0 or corr == 0:
        raise ValueError("gain estimation needs non-zero signal and reference energy")
    return symbols.copy(symbols.data * (ref_energy / np.abs(corr)))


def estimate_phase(symbols, reference):
    corr = np.sum(symbols.data * np.conj(reference.data))
    if corr == 0:
        raise ValueError("phase recovery needs non-zero signal energy")
    return float(np.angle(corr))


def carrier_phase_recover(symbols, reference):
    """Remove one average phase per realization, ``arg sum d ref*``, over both polarizations."""
    psi = estimate_phase(symbols, reference)
    return symbols.copy(symbols.data * np.exp(-1j * psi))


def decide_indices(symbols, order):
    """Minimum-distance slicing of a unit-energy square QAM; returns indices."""
    points = qam_constellation(order)
    m = int(round(np.sqrt(order)))
    scale = np.sqrt(2 * (order - 1) / 3)
    data = symbols.data if isinstance(symbols, SymbolSequence) else np.asarray(symbols)
    # per-axis slicing is exact minimum distance on a square grid
    lev_i = np.clip(np.rint((data.real * scale + (m - 1)) / 2), 0, m - 1).astype(int)
    lev_q = np.clip(np.rint((data.imag * scale + (m - 1)) / 2), 0, m - 1).astype(int)
    lut = np.empty((m, m), dtype=int)
    pos = np.rint((points.real * scale + (m - 1)) / 2).astype(int), \
        np.rint((points.imag * scale + (m - 1)) / 2).astype(int)
    lut[pos[0], pos[1]] = np.arange(order)
    return lut[lev_i, lev_q]


def decide(symbols, order):
    """Minimum-distance decisions as a :class:`SymbolSequence` of constellation points."""
    idx = decide_indices(symbols, order)
    return SymbolSequence(qam_constellation(order)[idx], symbols.symbol_period_s)


def symbol_error_rate(decided, transmitted):
    a = decided.data if isinstance(decided, SymbolSequence) else decided
    b = transmitted.data if isinstance(transmitted, SymbolSequence) else transmitted
    return float(np.mean(np.abs(a - b) > 1e-9))


def receive(field, link, pulse, transmitted, order, power_dbm=None, mode="data-aided"):
    """Run the receiver chain on a field at the receiver input.

    Matched filter and GVD compensation are applied in the frequency domain,
    then the symbols are decimated, gain- and phase-aligned against the
    transmitted symbols and (in decision-directed mode) sliced.
    """
    f = gvd_compensate(matched_filter(field, pulse), link)
    d = downsample(f, power_dbm)
    return finish_receive(d, transmitted, order, mode)


def finish_receive(desired, transmitted, order, mode="data-aided"):
    """Gain and phase alignment against the transmitted symbols, then decisions."""
    d = carrier_phase_recover(normalize_gain(desired, transmitted), transmitted)
    if mode == "data-aided":
        decided = transmitted.copy()
    else:
        decided = decide(d, order)
    return RxOutput(d, decided, mode)
