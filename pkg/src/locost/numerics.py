"""FFT and the FFT-backed causal convolution / cross-correlation primitives."""

from functools import lru_cache

import numpy as np

from . import _backend

IMAG_RTOL = 1e-8


def is_power_of_two(n):
    return n >= 1 and n & (n - 1) == 0


def next_power_of_two(n):
    return 1 << max(0, int(n) - 1).bit_length()


def padded_length(length):
    """FFT size used to turn a circular convolution of ``length`` taps into a causal one."""
    return 2 * next_power_of_two(length)


@lru_cache(maxsize=64)
def _tables(n):
    twiddle = np.exp(-2j * np.pi * np.arange(n // 2) / n)
    bits = n.bit_length() - 1
    idx = np.arange(n)
    rev = np.zeros(n, dtype=np.intp)
    for b in range(bits):
        rev |= ((idx >> b) & 1) << (bits - 1 - b)
    twiddle.flags.writeable = False
    rev.flags.writeable = False
    return twiddle, rev


def fft_rows(x, inverse=False, backend=None):
    """FFT (or inverse FFT with 1/n scaling) along the last axis of a 2-D array."""
    x = np.ascontiguousarray(x, dtype=np.complex128)
    if x.ndim != 2:
        raise ValueError(f"fft_rows expects a 2-D array, got shape {x.shape}")
    n = x.shape[1]
    if not is_power_of_two(n):
        raise ValueError(f"FFT length must be a power of two, got {n}")
    twiddle, rev = _tables(n)
    return _backend.get(backend).fft_rows(x, twiddle, rev, bool(inverse))


def fft(x, inverse=False):
    """Radix-2 DFT of a 1-D sequence; ``inverse=True`` applies the 1/L-normalized inverse."""
    x = np.asarray(x, dtype=np.complex128)
    if x.ndim != 1:
        raise ValueError("fft expects a 1-D sequence")
    return fft_rows(x[None, :], inverse)[0]


def dft_naive(x, inverse=False):
    """O(L^2) DFT straight from the definition. Any length >= 1."""
    x = np.asarray(x, dtype=np.complex128)
    n = x.shape[0]
    sign = 1.0 if inverse else -1.0
    k = np.arange(n)
    # reduce the exponent mod n to keep the phase argument small
    phase = (np.outer(k, k) % n) * (sign * 2.0 * np.pi / n)
    out = np.exp(1j * phase) @ x
    return out / n if inverse else out


def to_spectrum(rows, size, backend=None):
    """Zero-pad real ``rows`` (..., L) to ``size`` and transform along the last axis."""
    rows = np.asarray(rows, dtype=np.float64)
    lead = rows.shape[:-1]
    flat = rows.reshape(-1, rows.shape[-1])
    padded = np.zeros((flat.shape[0], size), dtype=np.complex128)
    padded[:, : flat.shape[1]] = flat
    return fft_rows(padded, backend=backend).reshape(*lead, size)


def from_spectrum(spec, length, backend=None):
    """Inverse-transform, check the imaginary residue, and keep the first ``length`` real taps."""
    lead = spec.shape[:-1]
    out = fft_rows(spec.reshape(-1, spec.shape[-1]), inverse=True, backend=backend)
    out = out[:, :length]
    check_real(out)
    return np.ascontiguousarray(out.real).reshape(*lead, length)


def check_real(values):
    resid = np.abs(values.imag)
    bound = IMAG_RTOL * (1.0 + np.abs(values.real))
    if resid.size and np.any(resid >= bound):
        worst = float(np.max(resid - bound))
        raise FloatingPointError(f"imaginary residue after real convolution exceeds bound by {worst:.3e}")


def _pair(kernel, signal):
    kernel = np.asarray(kernel, dtype=np.float64)
    signal = np.asarray(signal, dtype=np.float64)
    if kernel.ndim != 1 or signal.ndim != 1:
        raise ValueError("kernel and signal must be 1-D")
    if kernel.shape != signal.shape or kernel.size == 0:
        raise ValueError(f"kernel/signal lengths must match and be >= 1, got {kernel.size} and {signal.size}")
    return kernel, signal


def causal_convolve(kernel, signal):
    """``out[j] = sum_{l<=j} kernel[j-l] * signal[l]`` via zero-padded FFT."""
    kernel, signal = _pair(kernel, signal)
    size = padded_length(kernel.size)
    spec = to_spectrum(np.stack([kernel, signal]), size)
    return from_spectrum(spec[0] * spec[1], kernel.size)


def cross_correlate(kernel, signal):
    """``out[j] = sum_{l>=j} kernel[l-j] * signal[l]``, using the conjugate kernel spectrum."""
    kernel, signal = _pair(kernel, signal)
    size = padded_length(kernel.size)
    spec = to_spectrum(np.stack([kernel, signal]), size)
    return from_spectrum(np.conjugate(spec[0]) * spec[1], kernel.size)
