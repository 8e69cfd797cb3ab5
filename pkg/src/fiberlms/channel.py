"""Multi-span fiber link and its split-step Fourier simulation.

Conventions
-----------
Distances are in km, ``beta2`` in s^2/km, ``gamma`` in 1/(W km) and power in
W. The field obeys

    dA/dz = -(alpha/2) A + j (beta2/2) d2A/dt2 - j gamma ||A||^2 A

so a length ``dz`` of fiber multiplies the numpy DFT of the field by
``exp(-j beta2 w^2 dz / 2)``. The Kerr term carries the ``-j`` of the
first-order perturbation used by the digital twin.

By default the amplifier at the end of a span restores the launch power: it
compensates the span's fiber loss, any anomaly inside the span and the net
change of the gain profile. A loss anomaly therefore lowers the power only
up to the next amplifier. An explicit ``lumped_gain_db_at_end`` gives a
fixed-gain amplifier instead.
"""

from dataclasses import dataclass, field

import numpy as np
import scipy.constants as const
from scipy import fft as sfft

REFERENCE_WAVELENGTH_M = 1550e-9
DB_TO_NEPER = np.log(10) / 10


def beta2_from_dispersion(d_ps_nm_km, wavelength_m=REFERENCE_WAVELENGTH_M):
    """GVD coefficient in s^2/km from D in ps/(nm km)."""
    d_s_m_km = d_ps_nm_km * 1e-3
    return -d_s_m_km * wavelength_m ** 2 / (2 * np.pi * const.c)


def effective_length(alpha_per_km, length_km):
    """``(1 - exp(-alpha L)) / alpha`` in km; ``alpha`` is the power loss in 1/km."""
    if alpha_per_km == 0:
        return float(length_km)
    return float(-np.expm1(-alpha_per_km * length_km) / alpha_per_km)


@dataclass
class SpanSpec:
    length_km: float = 100.0
    alpha_db_per_km: float = 0.2
    dispersion_ps_nm_km: float = 17.0
    gamma_per_w_km: float = 1.26
    # None: the amplifier restores the launch power (span loss plus any anomaly in the span)
    lumped_gain_db_at_end: float = None

    def __post_init__(self):
        vals = (self.length_km, self.alpha_db_per_km, self.dispersion_ps_nm_km, self.gamma_per_w_km)
        if not all(np.isfinite(vals)):
            raise ValueError("span parameters must be finite")
        if self.length_km <= 0:
            raise ValueError("span length must be positive")

    @property
    def alpha_per_km(self):
        return self.alpha_db_per_km * DB_TO_NEPER

    @property
    def beta2_s2_per_km(self):
        return beta2_from_dispersion(self.dispersion_ps_nm_km)


@dataclass
class Anomaly:
    position_km: float
    loss_db: float

    def __post_init__(self):
        if self.loss_db < 0:
            raise ValueError("anomaly loss must be non-negative")


@dataclass
class GainProfile:
    """Excess gain in dB along the link, linearly interpolated, zero outside its samples.

    Used to emulate distributed amplification (for example backward Raman
    pumping) as a multiplicative change of the power profile.
    """

    z_km: np.ndarray
    gain_db: np.ndarray

    def __post_init__(self):
        self.z_km = np.asarray(self.z_km, dtype=float)
        self.gain_db = np.asarray(self.gain_db, dtype=float)
        if self.z_km.shape != self.gain_db.shape or self.z_km.ndim != 1:
            raise ValueError("gain profile needs matching 1-D z and gain arrays")
        if np.any(np.diff(self.z_km) <= 0):
            raise ValueError("gain profile coordinates must be strictly increasing")

    def __call__(self, z_km):
        return np.interp(z_km, self.z_km, self.gain_db, left=0.0, right=0.0)


@dataclass
class LinkSpec:
    spans: list
    anomalies: list = field(default_factory=list)
    gain_profile: GainProfile = None

    def __post_init__(self):
        if not self.spans:
            raise ValueError("a link needs at least one span")
        total = self.total_length_km
        for an in self.anomalies:
            if not 0.0 <= an.position_km <= total:
                raise ValueError(f"anomaly at {an.position_km} km lies outside the "
                                 f"link [0, {total}] km")

    @property
    def total_length_km(self):
        return float(sum(s.length_km for s in self.spans))

    @property
    def span_starts_km(self):
        return np.concatenate([[0.0], np.cumsum([s.length_km for s in self.spans])[:-1]])

    def span_index(self, z_km):
        """Index of the span containing each coordinate (span ends belong to their span)."""
        ends = np.cumsum([s.length_km for s in self.spans])
        idx = np.searchsorted(ends, np.asarray(z_km, dtype=float), side="left")
        return np.minimum(idx, len(self.spans) - 1)

    def span_anomalies(self, span_idx):
        """Anomalies owned by a span: ``start <= z < end`` (the link end belongs to the last span)."""
        start = float(self.span_starts_km[span_idx])
        end = start + self.spans[span_idx].length_km
        last = span_idx == len(self.spans) - 1
        return [an for an in self.anomalies
                if start <= an.position_km < end or (last and an.position_km == end)]

    def amplifier_gain_db(self, span_idx):
        """Lumped gain at the end of a span."""
        span = self.spans[span_idx]
        if span.lumped_gain_db_at_end is not None:
            return float(span.lumped_gain_db_at_end)
        start = float(self.span_starts_km[span_idx])
        gain = span.alpha_db_per_km * span.length_km
        gain += sum(an.loss_db for an in self.span_anomalies(span_idx))
        if self.gain_profile is not None:
            gain -= float(self.gain_profile(start + span.length_km) - self.gain_profile(start))
        return gain

    def without_anomalies(self):
        return LinkSpec(list(self.spans), [], self.gain_profile)


def uniform_link(n_spans=1, span_km=100.0, alpha_db_per_km=0.2, dispersion=17.0,
                 gamma=1.26, anomalies=(), gain_profile=None):
    spans = [SpanSpec(span_km, alpha_db_per_km, dispersion, gamma) for _ in range(n_spans)]
    anomalies = [a if isinstance(a, Anomaly) else Anomaly(*a) for a in anomalies]
    return LinkSpec(spans, anomalies, gain_profile)


def accumulated_dispersion(link, z_km):
    """Integral of beta2 from 0 to ``z`` in s^2."""
    z = np.asarray(z_km, dtype=float)
    out = np.zeros_like(z)
    start = 0.0
    for span in link.spans:
        inside = np.clip(z - start, 0.0, span.length_km)
        out = out + span.beta2_s2_per_km * inside
        start += span.length_km
    return out


def true_profile_db(link, z_km):
    """Power relative to launch in dB, right-continuous at lumped elements."""
    z = np.asarray(z_km, dtype=float)
    out = np.zeros_like(z)
    start = 0.0
    last = len(link.spans) - 1
    for i, span in enumerate(link.spans):
        inside = np.clip(z - start, 0.0, span.length_km)
        out = out - span.alpha_db_per_km * inside
        end = start + span.length_km
        # gain of the last amplifier applies only past the link end
        if i < last:
            out = out + np.where(z >= end, link.amplifier_gain_db(i), 0.0)
        start = end
    for an in link.anomalies:
        out = out - np.where(z >= an.position_km, an.loss_db, 0.0)
    if link.gain_profile is not None:
        out = out + link.gain_profile(z)
    return out


def true_profile(link, z_km):
    """Normalized power profile f(z) (launch = 1)."""
    return 10 ** (true_profile_db(link, z_km) / 10)


def nominal_profile(link, z_km):
    """Anomaly-free profile with the link's spans, amplifiers and gain profile."""
    return true_profile(link.without_anomalies(), z_km)


def total_gain_db(link):
    """Net gain from launch to the receiver input (after the last amplifier)."""
    z_end = link.total_length_km
    return float(true_profile_db(link, z_end) + link.amplifier_gain_db(len(link.spans) - 1))


@dataclass
class CleStepper:
    """Constant-local-error step control for the symmetric split-step method.

    The local error of one symmetric step scales as ``h^3`` times the local
    power, so holding it constant gives ``h(z) = h0 * (p(z) / p(0))^(-1/3)``
    where ``p`` is the span-local power (fiber loss and gain profile). Steps
    are capped at ``max_step_m``.
    """

    first_step_m: float = 200.0
    max_step_m: float = 20e3

    def __post_init__(self):
        if self.first_step_m <= 0:
            raise ValueError("first_step_m must be positive")


def cle_steps(span, first_step_m, gain_profile=None, span_start_km=0.0, max_step_m=20e3):
    """Step sizes (km) covering one span under the constant-local-error law."""
    if first_step_m <= 0:
        raise ValueError("first_step_m must be positive")
    h0 = first_step_m * 1e-3
    h_max = max(max_step_m * 1e-3, h0)
    length = span.length_km
    g0 = gain_profile(span_start_km) if gain_profile is not None else 0.0
    steps = []
    z = 0.0
    while length - z > 1e-9:
        log_p = -span.alpha_per_km * z
        if gain_profile is not None:
            log_p += (gain_profile(span_start_km + z) - g0) * DB_TO_NEPER
        h = min(h0 * np.exp(-log_p / 3), h_max)
        h = min(h, length - z)
        steps.append(h)
        z += h
    return np.array(steps)


def _span_breakpoints(link, span_idx, stepper):
    span = link.spans[span_idx]
    start = float(link.span_starts_km[span_idx])
    steps = cle_steps(span, stepper.first_step_m, link.gain_profile, start, stepper.max_step_m)
    bounds = np.concatenate([[0.0], np.cumsum(steps)])
    bounds[-1] = span.length_km
    extra = [an.position_km - start for an in link.anomalies
             if start < an.position_km < start + span.length_km]
    if extra:
        bounds = np.unique(np.concatenate([bounds, extra]))
    return bounds


def _anomaly_factor(anomalies, z_lo, z_hi, include_lo):
    """Field amplitude factor of anomalies in (z_lo, z_hi] or [z_lo, z_hi]."""
    loss = 0.0
    for an in anomalies:
        if (z_lo < an.position_km or (include_lo and an.position_km == z_lo)) and an.position_km <= z_hi:
            loss += an.loss_db
    return 10 ** (-loss / 20)


def angular_frequency(n_samples, sample_period_s):
    return 2 * np.pi * np.fft.fftfreq(n_samples, d=sample_period_s)


def ssfm_propagate(field_in, link, stepper=None, gamma_scale=1.0):
    """Propagate a sampled field through the link with the symmetric split-step method.

    Each step applies half the linear operator, the Kerr rotation
    ``exp(-j gamma ||A||^2 h)`` and the other half. Consecutive linear halves
    are merged so a step costs one inverse and one forward FFT. Loss
    anomalies are applied as scalar attenuation at step boundaries placed
    exactly on their coordinates; the amplifier at each span end applies its
    lumped gain, including after the last span.

    Parameters
    ----------
    field_in : SampledField
        Launched field in sqrt(W).
    link : LinkSpec
    stepper : CleStepper, optional
        Step control; defaults to a 200 m first step.
    gamma_scale : float
        Multiplies every span's nonlinear coefficient (0 gives linear propagation).
    """
    if field_in.samples_per_symbol < 2:
        raise ValueError("split-step propagation needs at least 2 samples per symbol")
    stepper = stepper or CleStepper()
    omega = angular_frequency(field_in.n_samples, field_in.sample_period_s)
    w2half = omega ** 2 / 2
    spec = sfft.fft(field_in.data, axis=-1)
    gp = link.gain_profile
    start = 0.0
    for s_idx, span in enumerate(link.spans):
        bounds = start + _span_breakpoints(link, s_idx, stepper)
        mids = (bounds[:-1] + bounds[1:]) / 2
        # linear segments run midpoint to midpoint; the first and last are half steps
        seg = np.concatenate([[bounds[0]], mids, [bounds[-1]]])
        owned = link.span_anomalies(s_idx)
        spec = spec * _anomaly_factor(owned, start, start, include_lo=True)
        gamma = span.gamma_per_w_km * gamma_scale
        phase_unit = -span.beta2_s2_per_km * w2half
        for i in range(len(seg) - 1):
            z_a, z_b = seg[i], seg[i + 1]
            amp = np.exp(-span.alpha_per_km / 2 * (z_b - z_a))
            if gp is not None:
                amp *= 10 ** ((gp(z_b) - gp(z_a)) / 20)
            if i > 0:
                amp *= _anomaly_factor(owned, bounds[i - 1], bounds[i], include_lo=False)
            spec = spec * (amp * np.exp(1j * phase_unit * (z_b - z_a)))
            if i < len(mids) and gamma != 0.0:
                h = bounds[i + 1] - bounds[i]
                a = sfft.ifft(spec, axis=-1)
                pw = np.sum(a.real ** 2 + a.imag ** 2, axis=0)
                a *= np.exp(-1j * gamma * h * pw)
                spec = sfft.fft(a, axis=-1)
        spec = spec * 10 ** (link.amplifier_gain_db(s_idx) / 20)
        start += span.length_km
    return field_in.copy(sfft.ifft(spec, axis=-1))


def linear_propagate(field_in, link):
    """Dispersion and net gain of the whole link in one frequency-domain step."""
    omega = angular_frequency(field_in.n_samples, field_in.sample_period_s)
    b_tot = float(accumulated_dispersion(link, link.total_length_km))
    gain = 10 ** (total_gain_db(link) / 20)
    spec = sfft.fft(field_in.data, axis=-1) * (gain * np.exp(-1j * b_tot * omega ** 2 / 2))
    return field_in.copy(sfft.ifft(spec, axis=-1))


def nonlinear_phase(link, power_w):
    """Average nonlinear phase ``sum_s gamma_s P L_eff,s`` using the nominal span loss."""
    return float(sum(s.gamma_per_w_km * power_w * effective_length(s.alpha_per_km, s.length_km)
                     for s in link.spans))
