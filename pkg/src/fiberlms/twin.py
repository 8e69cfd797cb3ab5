"""Digital twin of the link: parallel "linear + Kerr + linear" perturbation branches.

Each branch ``l`` models the nonlinearity generated at coordinate ``z_l``::

    U_l = -j * N_t * P_pol * g_l (*) N(h_l (*) a_up)

where ``a_up`` are the detected unit-energy symbols upsampled to ``N_t``
samples per symbol, ``h_l`` carries the pulse and the dispersion from 0 to
``z_l`` and ``g_l`` is its conjugate (dispersion back to 0, which equals
propagation to the link end followed by full GVD compensation, then the
matched filter). ``N_t * P_pol`` rescales the unit-energy symbols to launch
power, and ``-j`` is the sign of the Kerr term, so the taps ``w_l`` stay real
and positive. The twin output is::

    y(i) = a(i) (1 - j phi) + sum_l rho_l w_l U_l(i N_t)

Block processing
----------------
Symbols are processed in blocks of ``L``. The window for block ``k`` holds
symbols ``(k-1)L .. (k+1)L - 1``; filters are stored zero-centered, so the
branch output is aligned with the window and its middle half (window symbols
``L/2 .. 3L/2 - 1``) is free of circular wrap-around as long as each branch
reaches at most ``L/2`` symbols to either side. Block ``k`` therefore
produces the twin output for symbols ``kL - L/2 .. kL + L/2 - 1``: a fixed
latency of half a block with respect to the window's newest symbol.
"""

from dataclasses import dataclass

import numpy as np
from scipy import fft as sfft

from .channel import accumulated_dispersion
from .overlap_save import energy_support
from .waveforms import PulseSpec, dbm_to_watt, rrc_response, upsample


def kerr(u, pol_axis=0):
    """Kerr operator ``||u||^2 u`` with the norm taken across polarizations."""
    u = np.asarray(u)
    power = np.sum(u.real ** 2 + u.imag ** 2, axis=pol_axis, keepdims=True)
    return power * u


def twin_grid(link, grid_step_km):
    """Mid-point grid with an integer number of uniform cells per span.

    Returns ``(z_km, rho_km)``; each span gets ``round(length / step)`` cells
    (at least one).
    """
    if grid_step_km <= 0:
        raise ValueError("grid step must be positive")
    z, rho = [], []
    start = 0.0
    for span in link.spans:
        n = max(1, int(round(span.length_km / grid_step_km)))
        dz = span.length_km / n
        z.append(start + dz * (np.arange(n) + 0.5))
        rho.append(np.full(n, dz))
        start += span.length_km
    return np.concatenate(z), np.concatenate(rho)


def gvd_memory_symbols(link, symbol_period_s):
    """Dispersion memory ``2 pi |beta2| z / T^2`` of the whole link, in symbols."""
    abs_b = sum(abs(s.beta2_s2_per_km) * s.length_km for s in link.spans)
    return 2 * np.pi * abs_b / symbol_period_s ** 2


def block_length_rule(link, pulse_span_symbols, symbol_period_s, margin=1.25):
    """Block length: next power of two of ``margin * (GVD memory + pulse span)`` symbols."""
    need = margin * (gvd_memory_symbols(link, symbol_period_s) + pulse_span_symbols)
    return int(2 ** int(np.ceil(np.log2(max(need, 1.0)))))


@dataclass
class TwinConfig:
    z_km: np.ndarray
    rho_km: np.ndarray
    block_length: int
    pulse: PulseSpec
    symbol_period_s: float
    dispersion_s2: np.ndarray
    total_dispersion_s2: float
    power_per_pol_w: float
    n_pol: int = 2

    def __post_init__(self):
        self.z_km = np.asarray(self.z_km, dtype=float)
        self.rho_km = np.asarray(self.rho_km, dtype=float)
        self.dispersion_s2 = np.asarray(self.dispersion_s2, dtype=float)
        if self.z_km.size < 1:
            raise ValueError("the twin needs at least one grid point")
        if np.any(np.diff(self.z_km) <= 0):
            raise ValueError("grid coordinates must be strictly increasing")
        if np.any(self.rho_km <= 0):
            raise ValueError("quadrature weights must be positive")
        if self.block_length < 2 or self.block_length % 2:
            raise ValueError("block length must be an even number of symbols")

    @property
    def M(self):
        return self.z_km.size

    @property
    def samples_per_symbol(self):
        return self.pulse.samples_per_symbol

    @property
    def fft_size(self):
        return 2 * self.block_length * self.samples_per_symbol

    @property
    def sample_period_s(self):
        return self.symbol_period_s / self.samples_per_symbol


def make_twin_config(link, symbol_period_s, grid_step_km=5.0, power_dbm=5.0, n_pol=2,
                     pulse=None, block_length=None, check_memory=True):
    """Twin configuration for a link with nominal dispersion knowledge.

    ``block_length=None`` applies :func:`block_length_rule`; an explicit
    value below the rule is rejected when ``check_memory`` is set.
    """
    pulse = pulse or PulseSpec(0.1, 32, 2)
    z, rho = twin_grid(link, grid_step_km)
    rule = block_length_rule(link, pulse.span_symbols, symbol_period_s)
    if block_length is None:
        block_length = rule
    elif check_memory and block_length < gvd_memory_symbols(link, symbol_period_s):
        raise ValueError(f"block length {block_length} is shorter than the link's GVD memory "
                         f"({gvd_memory_symbols(link, symbol_period_s):.0f} symbols)")
    return TwinConfig(
        z_km=z, rho_km=rho, block_length=int(block_length), pulse=pulse,
        symbol_period_s=symbol_period_s,
        dispersion_s2=accumulated_dispersion(link, z),
        total_dispersion_s2=float(accumulated_dispersion(link, link.total_length_km)),
        power_per_pol_w=dbm_to_watt(power_dbm) / n_pol, n_pol=n_pol)


def propagator_responses(dispersion_s2, n_fft, pulse, sample_period_s):
    """Frequency responses ``H = P(w) exp(-j w^2 B / 2)`` on an ``n_fft`` grid, shape ``(M, n_fft)``."""
    omega = 2 * np.pi * np.fft.fftfreq(n_fft, d=sample_period_s)
    p = rrc_response(n_fft, pulse)
    b = np.atleast_1d(dispersion_s2)[:, np.newaxis]
    return p * np.exp(-0.5j * b * omega ** 2)


@dataclass
class PropagatorPair:
    H: np.ndarray
    G: np.ndarray


def propagator_support(cfg, fraction=0.9999, oversize=8):
    """Energy support in samples of the longest ``h_l`` impulse response."""
    n = cfg.fft_size * oversize
    b = cfg.dispersion_s2[np.argmax(np.abs(cfg.dispersion_s2))]
    h = np.fft.ifft(propagator_responses(b, n, cfg.pulse, cfg.sample_period_s)[0])
    return energy_support(h, fraction)


def build_propagators(cfg, check_support=True):
    """Propagator pairs on the window grid; ``G`` is built as the conjugate of ``H``."""
    if check_support:
        support = propagator_support(cfg)
        if support > cfg.block_length * cfg.samples_per_symbol:
            raise ValueError(f"propagator support of {support} samples exceeds the block of "
                             f"{cfg.block_length * cfg.samples_per_symbol} samples")
    H = propagator_responses(cfg.dispersion_s2, cfg.fft_size, cfg.pulse, cfg.sample_period_s)
    return PropagatorPair(H, np.conj(H))


@dataclass
class BranchSpectra:
    """DFTs of the branch outputs ``U_l`` for one window, shape ``(M, n_pol, 2 L N_t)``."""

    U: np.ndarray
    k: int = 0


class DigitalTwin:
    """Block-wise twin bound to one :class:`TwinConfig`."""

    def __init__(self, cfg, check_support=True):
        self.cfg = cfg
        props = build_propagators(cfg, check_support)
        self.H = props.H
        self.G = props.G
        self.scale = -1j * cfg.samples_per_symbol * cfg.power_per_pol_w
        L, n_t = cfg.block_length, cfg.samples_per_symbol
        self.valid_symbols = np.arange(L // 2, L // 2 + L)
        self.valid_samples = self.valid_symbols * n_t

    def window_spectrum(self, window_symbols):
        """DFT of the upsampled window of ``2L`` symbols, shape ``(n_pol, 2 L N_t)``."""
        return sfft.fft(upsample(window_symbols, self.cfg.samples_per_symbol), axis=-1)

    def branch_spectra(self, window_spec, k=0):
        a = sfft.ifft(window_spec[np.newaxis, :, :] * self.H[:, np.newaxis, :], axis=-1)
        q = kerr(a, pol_axis=1)
        U = sfft.fft(q, axis=-1)
        U *= self.G[:, np.newaxis, :] * self.scale
        return BranchSpectra(U, k)

    def nli_from_spectra(self, spectra, w):
        """Twin NLI on the valid symbols: one inverse FFT of the weighted branch sum."""
        w = np.asarray(w, dtype=float)
        if w.shape != (self.cfg.M,):
            raise ValueError(f"expected {self.cfg.M} taps, got shape {w.shape}")
        total = np.tensordot(self.cfg.rho_km * w, spectra.U, axes=(0, 0))
        return sfft.ifft(total, axis=-1)[:, self.valid_samples]

    def forward(self, window_symbols, w, phi, k=0):
        """Twin output ``y`` for the valid symbols of a window, and the branch spectra."""
        window_symbols = np.atleast_2d(window_symbols)
        spectra = self.branch_spectra(self.window_spectrum(window_symbols), k)
        n = self.nli_from_spectra(spectra, w)
        a_hat = window_symbols[:, self.valid_symbols]
        return a_hat * (1 - 1j * phi) + n, spectra

    def branch_outputs_time(self, spectra):
        """Time-domain ``U_l`` at the valid symbol instants, shape ``(M, n_pol, L)``."""
        return sfft.ifft(spectra.U, axis=-1)[:, :, self.valid_samples]


def twin_forward(twin, window_spectrum, w, phi, a_hat_block, k=0):
    """Functional form of :meth:`DigitalTwin.forward` taking the window spectrum."""
    spectra = twin.branch_spectra(window_spectrum, k)
    n = twin.nli_from_spectra(spectra, w)
    return np.atleast_2d(a_hat_block) * (1 - 1j * phi) + n, spectra


def cyclic_window(symbols, k, block_length):
    """Window for block ``k`` of a periodic symbol sequence, shape ``(n_pol, 2L)``."""
    n = symbols.shape[-1]
    idx = (np.arange((k - 1) * block_length, (k + 1) * block_length)) % n
    return symbols[:, idx]


def valid_symbol_indices(k, block_length, n_symbols):
    """Absolute (cyclic) symbol indices produced by block ``k``."""
    return (k * block_length - block_length // 2 + np.arange(block_length)) % n_symbols


def full_branch_outputs(cfg, symbols, taps=None):
    """Branch outputs over a whole periodic sequence with full-length circular filters.

    Reference path independent of the block machinery. ``symbols`` has shape
    ``(n_pol, n)``; returns ``U`` at the symbol instants, shape ``(M, n_pol, n)``,
    or, with ``taps``, only the weighted sum (the NLI) of shape ``(n_pol, n)``.
    """
    symbols = np.atleast_2d(symbols)
    n_t = cfg.samples_per_symbol
    n_fft = symbols.shape[-1] * n_t
    H = propagator_responses(cfg.dispersion_s2, n_fft, cfg.pulse, cfg.sample_period_s)
    X = np.fft.fft(upsample(symbols, n_t), axis=-1)
    scale = -1j * n_t * cfg.power_per_pol_w
    if taps is not None:
        total = np.zeros(symbols.shape, dtype=complex)
    else:
        out = np.empty((cfg.M,) + symbols.shape, dtype=complex)
    for l in range(cfg.M):
        a = np.fft.ifft(X * H[l], axis=-1)
        u = np.fft.ifft(np.fft.fft(kerr(a), axis=-1) * np.conj(H[l]), axis=-1)[:, ::n_t] * scale
        if taps is not None:
            total += cfg.rho_km[l] * taps[l] * u
        else:
            out[l] = u
    return total if taps is not None else out


def polyphase_components(taps, n_phases=2):
    """Split taps into polyphase components: component ``r`` holds ``taps[r::n_phases]``."""
    taps = np.asarray(taps)
    return [taps[..., r::n_phases] for r in range(n_phases)]


def interleave_components(components):
    """Inverse of :func:`polyphase_components`."""
    n = len(components)
    out = np.empty(components[0].shape[:-1] + (components[0].shape[-1] * n,), dtype=components[0].dtype)
    for r, c in enumerate(components):
        out[..., r::n] = c
    return out


class PolyphaseTwin:
    """Symbol-rate twin for ``N_t = 2``: each branch filter is split in even and odd phases.

    The upsampler and the final downsampler disappear: the even and odd
    output phases of ``h_l`` are computed as symbol-rate convolutions, the
    Kerr operator acts on each phase, and the two ``g_l`` phases recombine
    the result at the symbol instants.
    """

    def __init__(self, cfg):
        if cfg.samples_per_symbol != 2:
            raise ValueError("the polyphase twin supports 2 samples per symbol only")
        self.cfg = cfg
        L = cfg.block_length
        n_fft = cfg.fft_size
        H = propagator_responses(cfg.dispersion_s2, n_fft, cfg.pulse, cfg.sample_period_s)
        h = np.fft.ifft(H, axis=-1)
        g = np.fft.ifft(np.conj(H), axis=-1)
        h_even, h_odd = polyphase_components(h)
        # output sample 2i takes g[2i - 2m] from even phases and g[2i - 2m - 1] from odd ones
        g_even = g[:, 0::2]
        g_odd = np.roll(g, 1, axis=-1)[:, 0::2]
        self.Fh = np.fft.fft(np.stack([h_even, h_odd], axis=1), axis=-1)
        self.Fg = np.fft.fft(np.stack([g_even, g_odd], axis=1), axis=-1)
        self.scale = -1j * 2 * cfg.power_per_pol_w
        self.valid_symbols = np.arange(L // 2, L // 2 + L)

    def branch_outputs(self, window_symbols):
        """Branch outputs at the symbol instants of the window, shape ``(M, n_pol, 2L)``."""
        x = np.fft.fft(np.atleast_2d(window_symbols), axis=-1)
        # phases: (M, 2, n_pol, 2L)
        a = np.fft.ifft(x[np.newaxis, np.newaxis] * self.Fh[:, :, np.newaxis, :], axis=-1)
        q = np.fft.fft(kerr(a, pol_axis=2), axis=-1)
        u = np.fft.ifft(np.sum(q * self.Fg[:, :, np.newaxis, :], axis=1), axis=-1)
        return u * self.scale

    def nli(self, window_symbols, w):
        u = self.branch_outputs(window_symbols)[:, :, self.valid_symbols]
        return np.tensordot(self.cfg.rho_km * np.asarray(w, dtype=float), u, axes=(0, 0))


def polyphase_forward(cfg, window_symbols, w):
    """Twin NLI on the valid symbols of a window computed at the symbol rate."""
    return PolyphaseTwin(cfg).nli(window_symbols, w)
