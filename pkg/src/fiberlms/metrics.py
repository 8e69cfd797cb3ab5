"""Scoring of profile estimates and a least-squares reference estimator."""

import warnings
from dataclasses import dataclass

import numpy as np

from .channel import true_profile_db

PROFILE_FLOOR_DB = -60.0


@dataclass
class ProfileEstimate:
    """Estimated and true power profile (dB relative to launch) on the twin grid."""

    z_km: np.ndarray
    est_db: np.ndarray
    true_db: np.ndarray
    path_loss_db: np.ndarray

    def __post_init__(self):
        shapes = {np.shape(a) for a in (self.z_km, self.est_db, self.true_db, self.path_loss_db)}
        if len(shapes) != 1:
            raise ValueError("profile arrays must share the grid shape")

    @property
    def error_db(self):
        return self.est_db - self.true_db


def taps_to_db(w, gamma):
    """``10 log10(w / gamma)``, floored for non-positive taps."""
    ratio = np.asarray(w, dtype=float) / gamma
    with np.errstate(divide="ignore"):
        out = 10 * np.log10(np.maximum(ratio, 0.0))
    return np.maximum(out, PROFILE_FLOOR_DB)


def profile_estimate(link, z_km, w, gamma=None):
    """Compare taps with the link's true profile; the path loss is ``-true_db``."""
    if gamma is None:
        gamma = np.array([link.spans[i].gamma_per_w_km for i in link.span_index(z_km)])
    true_db = true_profile_db(link, z_km)
    return ProfileEstimate(np.asarray(z_km, float), taps_to_db(w, gamma), true_db, -true_db)


def retained(est, cutoff_db=15.0):
    return est.path_loss_db <= cutoff_db


def rmse_db(est, cutoff_db=15.0):
    """RMSE of the dB error over points with path loss at most ``cutoff_db``."""
    keep = retained(est, cutoff_db)
    if not np.any(keep):
        raise ValueError(f"no profile point has path loss <= {cutoff_db} dB")
    return float(np.sqrt(np.mean(est.error_db[keep] ** 2)))


def rmse_rebound_db(trace):
    """Largest rise of an RMSE trace above its running minimum (0 for a non-increasing trace)."""
    t = np.asarray(trace, dtype=float)
    if t.size < 2:
        return 0.0
    return float(np.max(t - np.minimum.accumulate(t)))


def anomaly_steps(est, positions_km):
    """Estimated and true profile drops across each anomaly, fiber slope removed.

    For each position the two grid points straddling it are compared and the
    fiber loss between them, taken from the true profile's slope just before
    the pair, is subtracted: ``step = before - after + slope * dz``. Returns
    ``(est_step_db, true_step_db)``.
    """
    z = est.z_km
    est_steps, true_steps = [], []
    for p in positions_km:
        i = np.searchsorted(z, p)
        if i == 0 or i == z.size:
            raise ValueError(f"anomaly at {p} km is outside the grid")
        lo, hi = i - 1, i
        slope = _local_slope(est.true_db, z, lo, hi)
        dz = z[hi] - z[lo]
        est_steps.append(est.est_db[lo] - est.est_db[hi] + slope * dz)
        true_steps.append(est.true_db[lo] - est.true_db[hi] + slope * dz)
    return np.array(est_steps), np.array(true_steps)


def _local_slope(true_db, z, lo, hi):
    # dB/km slope of the true profile just before the straddling pair
    if lo >= 1:
        return (true_db[lo] - true_db[lo - 1]) / (z[lo] - z[lo - 1])
    return (true_db[hi + 1] - true_db[hi]) / (z[hi + 1] - z[hi])


def snr_db(x, reference):
    """``10 log10(|ref|^2 / |x - ref|^2)``."""
    x = np.asarray(x)
    reference = np.asarray(reference)
    noise = np.sum(np.abs(x - reference) ** 2)
    if noise == 0:
        return np.inf
    return float(10 * np.log10(np.sum(np.abs(reference) ** 2) / noise))


def spm_snr(d, d_eq, reference):
    """SNR of the detected symbols before and after removing the twin's NLI and eRP terms."""
    return snr_db(d, reference), snr_db(d_eq, reference)


def ls_oracle(u_blocks, d_blocks, a_blocks, rho):
    """Joint least-squares ``(w, phi)`` for ``d = a (1 - j phi) + sum_l rho_l w_l U_l``.

    Parameters
    ----------
    u_blocks : sequence of arrays (M, n_pol, L)
        Branch outputs at the valid symbols of each block.
    d_blocks, a_blocks : sequence of arrays (n_pol, L)
        Received and detected symbols of each block.
    rho : array (M,)
        Quadrature weights.

    Both unknowns are real, so the complex model is stacked into real and
    imaginary rows. A rank-deficient system falls back to the pseudo-inverse.
    """
    U = np.concatenate([np.asarray(u) for u in u_blocks], axis=-1)
    d = np.concatenate([np.asarray(x) for x in d_blocks], axis=-1).ravel()
    a = np.concatenate([np.asarray(x) for x in a_blocks], axis=-1).ravel()
    m = U.shape[0]
    cols = np.concatenate([(rho[:, None] * U.reshape(m, -1)), (-1j * a)[None, :]], axis=0).T
    target = d - a
    A = np.concatenate([cols.real, cols.imag], axis=0)
    b = np.concatenate([target.real, target.imag])
    normal = A.T @ A
    rhs = A.T @ b
    if np.linalg.matrix_rank(normal) < normal.shape[0]:
        warnings.warn("singular normal equations, using the pseudo-inverse", RuntimeWarning)
        x = np.linalg.pinv(normal) @ rhs
    else:
        x = np.linalg.solve(normal, rhs)
    return x[:m], float(x[m])
