"""Pure numpy implementation of the hot loops (fallback for ``_kernels``).

Both backends expose the same three functions:

``fft_rows(x, twiddle, rev, inverse)``
    radix-2 FFT of each row of a C-contiguous complex128 matrix.
``ssm_kernel(z, weight, length)``
    ``out[h, j] = Re(sum_n weight[h, n] * exp(j * z[h, n]))``.
``ssm_kernel_grad(z, weight, grad)``
    adjoint of ``ssm_kernel`` with respect to ``z`` and ``weight``.

Complex gradients use the ``d/dRe + i d/dIm`` convention.
"""

import numpy as np

ANCHOR = 256


def fft_rows(x, twiddle, rev, inverse):
    n = x.shape[1]
    out = x[:, rev]
    if inverse:
        np.conjugate(out, out=out)
    m = 2
    while m <= n:
        half = m >> 1
        w = twiddle[:: n // m][:half]
        blocks = out.reshape(out.shape[0], n // m, m)
        lo = blocks[:, :, :half]
        hi = blocks[:, :, half:]
        t = hi * w
        np.subtract(lo, t, out=hi)
        lo += t
        m <<= 1
    if inverse:
        np.conjugate(out, out=out)
        out /= n
    return out


def _exp_multiples(z_row, steps):
    # j * z with j == 0 pinned to 0 so that z = -inf (a zero eigenvalue) gives exp(0) = 1
    arg = np.zeros((z_row.shape[0], steps.shape[0]), dtype=np.complex128)
    nz = steps > 0
    arg.real[:, nz] = np.outer(z_row.real, steps[nz])
    arg.imag[:, nz] = np.outer(z_row.imag, steps[nz])
    return np.exp(arg)


def _powers(z_row, length):
    """exp(j * z) for j < length, anchored every ANCHOR steps; shape (N, length)."""
    n_blocks = -(-length // ANCHOR)
    span = min(length, ANCHOR)
    anchors = _exp_multiples(z_row, np.arange(n_blocks) * ANCHOR)
    offsets = _exp_multiples(z_row, np.arange(span))
    powers = anchors[:, :, None] * offsets[:, None, :]
    return powers.reshape(z_row.shape[0], -1)[:, :length]


def ssm_kernel(z, weight, length):
    H, N = z.shape
    out = np.zeros((H, length))
    for h in range(H):
        powers = _powers(z[h], length)
        for n in range(N):
            w = weight[h, n]
            out[h] += w.real * powers[n].real - w.imag * powers[n].imag
    return out


def ssm_kernel_grad(z, weight, grad):
    H, N = z.shape
    length = grad.shape[1]
    steps = np.arange(length)
    gz = np.empty((H, N), dtype=np.complex128)
    gw = np.empty((H, N), dtype=np.complex128)
    for h in range(H):
        conj_powers = np.conjugate(_powers(z[h], length))
        gw[h] = conj_powers @ grad[h]
        gz[h] = np.conjugate(weight[h]) * (conj_powers @ (steps * grad[h]))
    return gz, gw
