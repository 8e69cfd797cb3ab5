import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from fiberlms.channel import uniform_link
from fiberlms.overlap_save import (centered_to_causal, circ_conv, energy_support, make_window,
                                   overlap_save, pad_filter, valid)
from fiberlms.twin import make_twin_config, propagator_responses
from fiberlms.waveforms import PulseSpec

T = 1 / 64e9


def brute_circular(x, h):
    n = x.size
    return np.array([sum(x[j] * h[(i - j) % n] for j in range(n)) for i in range(n)])


def test_first_window_zero_prefix():
    buf = make_window(None, np.arange(1, 5))
    assert np.array_equal(buf.window[:4], np.zeros(4))
    assert buf.start == -4


def test_window_concatenation_and_sliding():
    buf = make_window(np.arange(1, 5), np.arange(5, 9), k=1)
    assert np.array_equal(buf.window, np.arange(1, 9))
    nxt = buf.advance(np.arange(9, 13))
    assert np.array_equal(nxt.window[:4], buf.window[4:])
    assert nxt.k == 2 and nxt.start == 4
    assert buf.window.size == 2 * buf.block_size


def test_window_length_mismatch():
    with pytest.raises(ValueError):
        make_window(np.zeros(3), np.zeros(4))


def test_delta_filter_flat_response_and_identity(rng):
    pf = pad_filter(np.array([1.0]), 8)
    assert np.allclose(pf.response, 1.0)
    x = rng.standard_normal(16)
    assert np.allclose(circ_conv(x, pf), x)


def test_pad_filter_boundary():
    pf = pad_filter(np.ones(8), 8)
    assert np.all(pf.response.shape == (16,))
    with pytest.raises(ValueError, match="exceeds the block size"):
        pad_filter(np.ones(9), 8)


def test_padded_second_half_is_zero(rng):
    pf = pad_filter(rng.standard_normal(5), 8)
    h = np.fft.ifft(pf.response)
    assert np.allclose(h[8:], 0, atol=1e-15)


def test_circ_conv_matches_brute_force(rng):
    x = rng.standard_normal(64) + 1j * rng.standard_normal(64)
    h = rng.standard_normal(16) + 1j * rng.standard_normal(16)
    pf = pad_filter(h, 32)
    h_full = np.zeros(64, complex)
    h_full[:16] = h
    ref = brute_circular(x, h_full)
    assert np.max(np.abs(circ_conv(x, pf) - ref)) <= 1e-12 * np.max(np.abs(ref))
    with pytest.raises(ValueError):
        circ_conv(x[:32], pf)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2 ** 31))
def test_circ_conv_linearity(seed):
    rng = np.random.default_rng(seed)
    a, b = rng.standard_normal((2, 32)) + 1j * rng.standard_normal((2, 32))
    pf = pad_filter(rng.standard_normal(9), 16)
    lhs = circ_conv(a + b, pf)
    assert np.linalg.norm(lhs - circ_conv(a, pf) - circ_conv(b, pf)) <= 1e-12 * np.linalg.norm(lhs)


def test_deferred_inverse_equivalence(rng):
    x = rng.standard_normal(32) + 1j * rng.standard_normal(32)
    filters = [pad_filter(rng.standard_normal(10), 16) for _ in range(4)]
    summed = np.fft.ifft(sum(circ_conv(x, f, inverse=False) for f in filters))
    separate = sum(circ_conv(x, f) for f in filters)
    assert np.linalg.norm(summed - separate) <= 1e-12 * np.linalg.norm(separate)


def test_single_sample_block_delta():
    x = np.arange(1.0, 6.0)
    assert np.array_equal(overlap_save(x, [1.0], 1), x)
    buf = make_window(np.array([4.0]), np.array([5.0]))
    assert valid(circ_conv(buf.window, pad_filter([1.0], 1)), 1)[0].real == 5.0


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2 ** 31), st.integers(1, 64), st.integers(1, 8))
def test_overlap_save_equals_linear_convolution(seed, block, n_blocks):
    rng = np.random.default_rng(seed)
    n_taps = int(rng.integers(1, block + 1))
    x = rng.standard_normal(block * n_blocks) + 1j * rng.standard_normal(block * n_blocks)
    h = rng.standard_normal(n_taps) + 1j * rng.standard_normal(n_taps)
    ref = np.convolve(x, h)[:x.size]
    out = overlap_save(x, h, block)
    assert np.linalg.norm(out - ref) <= 1e-12 * max(np.linalg.norm(ref), 1e-300)


def test_overlap_save_rejects_partial_block():
    with pytest.raises(ValueError):
        overlap_save(np.zeros(10), [1.0], 4)


def test_centered_filter_delay(rng):
    centred = rng.standard_normal(7)
    taps, c = centered_to_causal(centred)
    assert c == 3
    x = rng.standard_normal(64)
    out = overlap_save(x, taps, 16)
    # centred convolution y(i) = sum_m h_c(m) x(i - m), m = -3..3
    y = np.convolve(x, centred)[3:3 + 64]
    assert np.allclose(out[c:], y[:64 - c])
    # measured delay is half the tap support
    lag = np.argmax(np.correlate(out, y, mode="full")) - (y.size - 1)
    assert lag == (taps.size - 1) // 2
    with pytest.raises(ValueError):
        centered_to_causal(np.ones(4))


def test_energy_support_of_box():
    h = np.zeros(64)
    h[:3] = 1
    h[-2:] = 1
    assert energy_support(h, 0.999) == 5


def test_rrc_gvd_composite_fits_rule_block():
    link = uniform_link(1, 100.0)
    cfg = make_twin_config(link, T, 5.0, pulse=PulseSpec(0.1, 32, 2))
    n = cfg.fft_size * 8
    h = np.fft.ifft(propagator_responses(cfg.dispersion_s2[-1], n, cfg.pulse, cfg.sample_period_s)[0])
    support = energy_support(h, 0.9999)
    assert support <= cfg.block_length * cfg.samples_per_symbol
    assert cfg.block_length == 128
