"""Overlap-save block convolution.

Block ``k`` of ``B`` samples is processed inside the window formed by blocks
``k - 1`` and ``k`` (``2B`` samples). A causal FIR filter of at most ``B``
taps is zero-padded to ``2B``; the last ``B`` samples of the circular
convolution equal the linear convolution over block ``k``.

A non-causal (centered) filter is stored causally by shifting it by its
center offset ``c``; the valid half then holds the centered convolution
delayed by ``c`` samples.
"""

from dataclasses import dataclass

import numpy as np
from scipy import fft as sfft


@dataclass
class BlockBuffer:
    """Window ``[previous; current]`` of block ``k`` along the last axis."""

    previous: np.ndarray
    current: np.ndarray
    k: int = 0

    @property
    def block_size(self):
        return self.current.shape[-1]

    @property
    def window(self):
        return np.concatenate([self.previous, self.current], axis=-1)

    @property
    def start(self):
        """Absolute index of the first window sample."""
        return (self.k - 1) * self.block_size

    def advance(self, next_block):
        return make_window(self.current, next_block, self.k + 1)


def make_window(prev_block, cur_block, k=0):
    """Concatenate two blocks; ``prev_block=None`` gives the zero prefix of the first block."""
    cur = np.asarray(cur_block)
    prev = np.zeros_like(cur) if prev_block is None else np.asarray(prev_block)
    if prev.shape != cur.shape:
        raise ValueError(f"block length mismatch: {prev.shape} vs {cur.shape}")
    return BlockBuffer(prev, cur, k)


@dataclass
class PaddedFilter:
    taps: np.ndarray
    response: np.ndarray
    block_size: int

    @property
    def fft_size(self):
        return 2 * self.block_size


def pad_filter(taps, block_size):
    """Zero-pad causal taps to ``2 * block_size`` and transform them once."""
    taps = np.asarray(taps)
    if taps.ndim != 1:
        raise ValueError("filter taps must be 1-D")
    if taps.size > block_size:
        raise ValueError(f"filter of {taps.size} taps exceeds the block size {block_size}; "
                         "the block must be longer than the filter memory")
    padded = np.zeros(2 * block_size, dtype=np.result_type(taps, float))
    padded[:taps.size] = taps
    return PaddedFilter(taps, sfft.fft(padded), block_size)


def circ_conv(window, padded_filter, inverse=True):
    """Circular convolution of a window with a padded filter.

    With ``inverse=False`` the product spectrum is returned so callers can
    sum several branches before a single inverse transform.
    """
    window = np.asarray(window)
    if window.shape[-1] != padded_filter.fft_size:
        raise ValueError(f"window length {window.shape[-1]} does not match filter "
                         f"FFT size {padded_filter.fft_size}")
    spec = sfft.fft(window, axis=-1) * padded_filter.response
    return sfft.ifft(spec, axis=-1) if inverse else spec


def valid(full, block_size):
    """The not-aliased latter half of a circular convolution."""
    return full[..., block_size:2 * block_size]


def overlap_save(signal, taps, block_size):
    """Filter a long signal block by block; equals ``np.convolve(x, h)[:len(x)]``.

    The signal length must be a multiple of ``block_size``; the first
    window uses a zero prefix.
    """
    x = np.asarray(signal)
    if x.shape[-1] % block_size:
        raise ValueError("signal length must be a multiple of the block size")
    filt = pad_filter(taps, block_size)
    out = np.empty(x.shape, dtype=np.result_type(x, filt.response))
    buf = None
    for k in range(x.shape[-1] // block_size):
        cur = x[..., k * block_size:(k + 1) * block_size]
        buf = make_window(None, cur, 0) if buf is None else buf.advance(cur)
        out[..., k * block_size:(k + 1) * block_size] = valid(circ_conv(buf.window, filt), block_size)
    if np.isrealobj(x) and np.isrealobj(taps):
        out = out.real
    return out


def centered_to_causal(taps):
    """Causal storage of odd-length centered taps; returns ``(taps, center_offset)``."""
    taps = np.asarray(taps)
    if taps.size % 2 == 0:
        raise ValueError("centered taps must have odd length")
    return taps, taps.size // 2


def energy_support(impulse_response, fraction=0.9999):
    """Length of the shortest contiguous circular span holding ``fraction`` of the energy.

    ``impulse_response`` is a periodic response with time zero at index 0.
    """
    e = np.abs(np.asarray(impulse_response)) ** 2
    n = e.size
    total = e.sum()
    if total == 0:
        return 0
    # grow a span symmetric around the energy centroid
    shifted = np.fft.fftshift(e)
    center = n // 2
    cum = np.concatenate([[0.0], np.cumsum(shifted)])
    best = n
    for half in range(n // 2 + 1):
        lo = max(center - half, 0)
        hi = min(center + half + 1, n)
        if cum[hi] - cum[lo] >= fraction * total:
            best = hi - lo
            break
    return best
