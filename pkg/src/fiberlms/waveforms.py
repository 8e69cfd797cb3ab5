"""Transmit waveforms: QAM mapping, root-raised-cosine shaping and noise loading.

Waveforms are periodic: a sequence of ``n`` symbols at ``N`` samples per
symbol is one period of ``n * N`` samples, and every filter in the
simulator acts by circular convolution on that period.

Gray mapping
------------
Square M-QAM uses ``b = log2(M)`` bits per symbol. The symbol index is split
into its upper ``b/2`` bits (in-phase) and lower ``b/2`` bits (quadrature).
Each half is a binary-reflected Gray word; the PAM level is the position
``k`` whose Gray code ``k ^ (k >> 1)`` equals that word, mapped to the
amplitude ``2k - (m - 1)`` with ``m = sqrt(M)``. The grid is then scaled to
unit mean energy. For QPSK this gives index 0 -> (-1-1j)/sqrt(2),
1 -> (-1+1j)/sqrt(2), 2 -> (1-1j)/sqrt(2), 3 -> (1+1j)/sqrt(2).
"""

from dataclasses import dataclass
from functools import lru_cache

import numpy as np

SUPPORTED_QAM_ORDERS = (4, 16, 64)


def as_rng(seed):
    """Return a numpy Generator from an int seed, a Generator or None."""
    if isinstance(seed, np.random.Generator):
        return seed
    return np.random.default_rng(seed)


@dataclass
class SymbolSequence:
    """Complex symbols at one sample per symbol, shape ``(n_pol, n_symbols)``."""

    data: np.ndarray
    symbol_period_s: float

    def __post_init__(self):
        data = np.asarray(self.data, dtype=complex)
        if data.ndim == 1:
            data = data[np.newaxis, :]
        if data.ndim != 2 or data.shape[0] not in (1, 2):
            raise ValueError(f"symbol data must have 1 or 2 polarizations, got shape {data.shape}")
        self.data = data

    @property
    def n_pol(self):
        return self.data.shape[0]

    @property
    def n_symbols(self):
        return self.data.shape[1]

    def copy(self, data=None):
        return SymbolSequence(self.data.copy() if data is None else data, self.symbol_period_s)


@dataclass
class SampledField:
    """Complex baseband field sampled at ``samples_per_symbol`` samples per symbol."""

    data: np.ndarray
    sample_period_s: float
    samples_per_symbol: int

    def __post_init__(self):
        data = np.asarray(self.data, dtype=complex)
        if data.ndim == 1:
            data = data[np.newaxis, :]
        if data.ndim != 2 or data.shape[0] not in (1, 2):
            raise ValueError(f"field data must have 1 or 2 polarizations, got shape {data.shape}")
        if data.shape[1] % self.samples_per_symbol:
            raise ValueError("number of samples must be a multiple of samples_per_symbol")
        self.data = data

    @property
    def n_pol(self):
        return self.data.shape[0]

    @property
    def n_samples(self):
        return self.data.shape[1]

    @property
    def symbol_period_s(self):
        return self.sample_period_s * self.samples_per_symbol

    def power(self):
        """Mean total power (sum over polarizations) in the field's units."""
        return float(np.mean(np.sum(np.abs(self.data) ** 2, axis=0)))

    def copy(self, data=None):
        return SampledField(self.data.copy() if data is None else data,
                            self.sample_period_s, self.samples_per_symbol)


@dataclass(frozen=True)
class PulseSpec:
    rolloff: float = 0.1
    span_symbols: int = 32
    samples_per_symbol: int = 2

    def __post_init__(self):
        if not 0.0 <= self.rolloff <= 1.0:
            raise ValueError(f"rolloff must lie in [0, 1], got {self.rolloff}")
        if self.span_symbols < 8:
            raise ValueError("span_symbols must be at least 8")
        if self.samples_per_symbol < 1:
            raise ValueError("samples_per_symbol must be positive")

    def with_samples_per_symbol(self, n):
        return PulseSpec(self.rolloff, self.span_symbols, n)


def dbm_to_watt(p_dbm):
    return 1e-3 * 10 ** (p_dbm / 10)


def _gray_to_position(m):
    pos = np.empty(m, dtype=int)
    for k in range(m):
        pos[k ^ (k >> 1)] = k
    return pos


@lru_cache(maxsize=None)
def _constellation(order):
    if order not in SUPPORTED_QAM_ORDERS:
        raise ValueError(f"unsupported QAM order {order}; expected one of {SUPPORTED_QAM_ORDERS}")
    m = int(round(np.sqrt(order)))
    half = int(np.log2(m))
    pos = _gray_to_position(m)
    idx = np.arange(order)
    i_level = 2 * pos[idx >> half] - (m - 1)
    q_level = 2 * pos[idx & (m - 1)] - (m - 1)
    points = i_level + 1j * q_level
    points = points / np.sqrt(2 * (order - 1) / 3)
    points.setflags(write=False)
    return points


def qam_constellation(order):
    """Unit-energy Gray-mapped constellation; entry ``k`` is the point of index ``k``."""
    return _constellation(order).copy()


def map_qam(symbol_indices, order, symbol_period_s=1 / 64e9):
    """Map integer indices to unit-energy Gray-coded QAM symbols.

    Parameters
    ----------
    symbol_indices : array_like of int
        Shape ``(n_symbols,)`` or ``(n_pol, n_symbols)``.
    order : int
        Constellation size, one of 4, 16 or 64.
    symbol_period_s : float
        Symbol period ``T``; the default corresponds to 64 GBd.
    """
    points = _constellation(order)
    idx = np.asarray(symbol_indices)
    if idx.size and (idx.min() < 0 or idx.max() >= order):
        raise ValueError(f"symbol indices must lie in [0, {order})")
    return SymbolSequence(points[idx], symbol_period_s)


def random_symbols(n_symbols, order, n_pol=2, symbol_period_s=1 / 64e9, seed=None):
    """Draw uniform symbol indices and map them. Returns ``(indices, SymbolSequence)``."""
    rng = as_rng(seed)
    idx = rng.integers(0, order, size=(n_pol, n_symbols))
    return idx, map_qam(idx, order, symbol_period_s)


def rrc_taps(spec):
    """Closed-form root-raised-cosine taps over ``span_symbols`` symbols.

    The taps are sampled at ``samples_per_symbol`` per symbol, centered on the
    middle tap, and scaled to unit energy so that the transmit and matched
    filter cascade has unit gain at lag zero. The points ``t = 0`` and
    ``|t| = T / (4 beta)`` use the analytic limits.
    """
    n_s = spec.samples_per_symbol
    half = spec.span_symbols * n_s // 2
    t = np.arange(-half, half + 1) / n_s
    beta = spec.rolloff
    taps = np.empty(t.size)
    for i, ti in enumerate(t):
        if ti == 0.0:
            taps[i] = 1.0 - beta + 4 * beta / np.pi
        elif beta > 0 and np.isclose(abs(ti), 1 / (4 * beta), rtol=0, atol=1e-12):
            taps[i] = beta / np.sqrt(2) * ((1 + 2 / np.pi) * np.sin(np.pi / (4 * beta))
                                           + (1 - 2 / np.pi) * np.cos(np.pi / (4 * beta)))
        else:
            taps[i] = ((np.sin(np.pi * ti * (1 - beta)) + 4 * beta * ti * np.cos(np.pi * ti * (1 + beta)))
                       / (np.pi * ti * (1 - (4 * beta * ti) ** 2)))
    return taps / np.linalg.norm(taps)


def raised_cosine_spectrum(f_norm, rolloff):
    """Raised-cosine spectrum vs. frequency normalized to the symbol rate (peak 1)."""
    f = np.abs(np.asarray(f_norm, dtype=float))
    beta = rolloff
    lo = (1 - beta) / 2
    hi = (1 + beta) / 2
    out = np.zeros_like(f)
    out[f <= lo] = 1.0
    if beta > 0:
        band = (f > lo) & (f < hi)
        out[band] = 0.5 * (1 + np.cos(np.pi / beta * (f[band] - lo)))
    return out


def rrc_response(n_fft, spec):
    """DFT-grid frequency response of the unit-energy RRC pulse (zero-phase).

    Bin ``k`` sits at ``fftfreq(n_fft) * samples_per_symbol`` in symbol-rate
    units. The scale ``sqrt(samples_per_symbol)`` makes the time-domain pulse
    unit-energy whenever ``n_fft`` is a multiple of ``samples_per_symbol``.
    """
    n_s = spec.samples_per_symbol
    f_norm = np.fft.fftfreq(n_fft) * n_s
    return np.sqrt(n_s * raised_cosine_spectrum(f_norm, spec.rolloff))


def periodic_pulse(n_samples, spec):
    """Zero-centered RRC pulse periodized over ``n_samples`` (index 0 is t = 0)."""
    return np.fft.ifft(rrc_response(n_samples, spec)).real


def upsample(x, factor):
    """Zero-stuff along the last axis so sample ``i * factor`` holds ``x[i]``."""
    x = np.asarray(x)
    out = np.zeros(x.shape[:-1] + (x.shape[-1] * factor,), dtype=complex)
    out[..., ::factor] = x
    return out


def modulate(symbols, pulse, power_dbm=None):
    """Shape symbols with the RRC pulse on a periodic sample grid.

    The upsampled symbols are circularly convolved with the periodized
    RRC pulse (a product of DFTs). With ``power_dbm`` given, the field is
    scaled so a unit-energy constellation launches that total power, split
    equally between polarizations. The scale is a fixed constant, so the map
    stays linear in the symbols.
    """
    n_s = pulse.samples_per_symbol
    up = upsample(symbols.data, n_s)
    field = np.fft.ifft(np.fft.fft(up, axis=-1) * rrc_response(up.shape[-1], pulse), axis=-1)
    if power_dbm is not None:
        p_pol = dbm_to_watt(power_dbm) / symbols.n_pol
        field = field * np.sqrt(n_s * p_pol)
    return SampledField(field, symbols.symbol_period_s / n_s, n_s)


def load_awgn(x, snr_db, seed=None):
    """Add circular complex Gaussian noise at the requested SNR per polarization.

    For a :class:`SymbolSequence` the noise variance is the measured symbol
    power over the SNR. For a :class:`SampledField` the noise power is
    referenced to the symbol-rate bandwidth, so the per-sample variance is
    ``samples_per_symbol`` times larger and a matched filter returns symbols
    at the same SNR. ``snr_db = inf`` returns an unchanged copy.
    """
    if np.isposinf(snr_db):
        return x.copy()
    if not np.isfinite(snr_db):
        raise ValueError(f"snr_db must be finite or +inf, got {snr_db}")
    rng = as_rng(seed)
    data = x.data
    sig_pow = np.mean(np.abs(data) ** 2, axis=-1, keepdims=True)
    if isinstance(x, SampledField):
        sig_pow = sig_pow * x.samples_per_symbol
    var = sig_pow / 10 ** (snr_db / 10)
    noise = np.sqrt(var / 2) * (rng.standard_normal(data.shape) + 1j * rng.standard_normal(data.shape))
    return x.copy(data + noise)
