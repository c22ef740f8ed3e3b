"""Diagonal state-space layers: S4D parameters, kernels, recurrence, bidirectional operator."""

from dataclasses import dataclass

import numpy as np

from . import _backend
from .numerics import from_spectrum, padded_length, to_spectrum

LAMBDA_RE_MAX = -1e-4
DELTA_MIN = 1e-4


@dataclass
class DiagonalSSM:
    """H independent diagonal SSMs of state size N.

    Eigenvalues are ``exp(delta[h] * (lambda_re[h, n] + 1j * lambda_im[h, n]))``;
    ``b`` and ``c`` are complex (N, H) arrays stored as real/imaginary parts.
    """

    delta: np.ndarray
    lambda_re: np.ndarray
    lambda_im: np.ndarray
    b_re: np.ndarray
    b_im: np.ndarray
    c_re: np.ndarray
    c_im: np.ndarray

    @property
    def H(self):
        return self.lambda_re.shape[0]

    @property
    def N(self):
        return self.lambda_re.shape[1]

    @property
    def b(self):
        return self.b_re + 1j * self.b_im

    @property
    def c(self):
        return self.c_re + 1j * self.c_im

    def log_eigenvalues(self):
        z = np.empty(self.lambda_re.shape, dtype=np.complex128)
        # assigned part-wise: complex products turn -inf magnitudes into nan phases
        z.real = self.delta[:, None] * self.lambda_re
        z.imag = self.delta[:, None] * self.lambda_im
        return z

    def eigenvalues(self):
        return np.exp(self.log_eigenvalues())

    def spectral_radius(self):
        return np.abs(self.eigenvalues()).max(axis=1)

    def mode_weights(self):
        """``c[n, h] * b[n, h]`` laid out as (H, N)."""
        return np.ascontiguousarray((self.c * self.b).T)

    @classmethod
    def from_eigenvalues(cls, eigenvalues, b, c):
        """Build from explicit eigenvalues (H, N) and complex b, c (N, H).

        A zero eigenvalue is encoded as ``lambda_re = -inf`` with ``delta = 1``.
        """
        lam = np.atleast_2d(np.asarray(eigenvalues, dtype=np.complex128))
        b = np.asarray(b, dtype=np.complex128).reshape(lam.shape[1], lam.shape[0])
        c = np.asarray(c, dtype=np.complex128).reshape(lam.shape[1], lam.shape[0])
        with np.errstate(divide="ignore"):
            log_mag = np.log(np.abs(lam))
        return cls(
            delta=np.ones(lam.shape[0]),
            lambda_re=log_mag,
            lambda_im=np.angle(lam),
            b_re=b.real.copy(),
            b_im=b.imag.copy(),
            c_re=c.real.copy(),
            c_im=c.imag.copy(),
        )

    def copy(self):
        return DiagonalSSM(*(np.array(getattr(self, f)) for f in PARAM_FIELDS))


PARAM_FIELDS = ("delta", "lambda_re", "lambda_im", "b_re", "b_im", "c_re", "c_im")


@dataclass
class BiSSM:
    forward: DiagonalSSM  # causal (past) kernel
    backward: DiagonalSSM  # anti-causal (future) kernel
    d: np.ndarray

    def __post_init__(self):
        H = self.forward.H
        if self.backward.H != H or np.shape(self.d) != (H,):
            raise ValueError("forward, backward and d must share the channel count")
        if self.backward.N != self.forward.N:
            raise ValueError("forward and backward state sizes differ")


@dataclass
class KernelBank:
    values: np.ndarray  # (H, L)

    @property
    def length(self):
        return self.values.shape[1]


def init_s4d(H, N, seed):
    """S4D-Lin initialization: real part -1/2, imaginary part pi*n, delta ~ U(0, 1)."""
    if H < 1 or N < 1:
        raise ValueError("H and N must be positive")
    rng = np.random.default_rng(seed)
    delta = rng.uniform(0.0, 1.0, size=H)
    b_re, b_im, c_re, c_im = (rng.standard_normal((N, H)) for _ in range(4))
    return DiagonalSSM(
        delta=delta,
        lambda_re=np.full((H, N), -0.5),
        lambda_im=np.tile(np.pi * np.arange(N), (H, 1)),
        b_re=b_re,
        b_im=b_im,
        c_re=c_re,
        c_im=c_im,
    )


def kernel_values(ssm, length, backend=None):
    kern = _backend.get(backend)
    z = np.ascontiguousarray(ssm.log_eigenvalues())
    return kern.ssm_kernel(z, ssm.mode_weights(), int(length))


def materialize_kernel(ssm, L, backend=None):
    """Real convolution kernels ``Re(c^T diag(lambda)^j b)``, j < L, one row per channel."""
    if L < 1:
        raise ValueError("kernel length must be >= 1")
    return KernelBank(kernel_values(ssm, L, backend))


def kernel_param_grads(ssm, grad, backend=None):
    """Gradients of ``sum(grad * kernel)`` with respect to every field of ``ssm``."""
    kern = _backend.get(backend)
    z = np.ascontiguousarray(ssm.log_eigenvalues())
    gz, gw = kern.ssm_kernel_grad(z, ssm.mode_weights(), np.ascontiguousarray(grad, dtype=np.float64))
    delta = ssm.delta[:, None]
    g_b = (gw * np.conjugate(ssm.c).T).T
    g_c = (gw * np.conjugate(ssm.b).T).T
    return {
        "delta": (gz.real * ssm.lambda_re + gz.imag * ssm.lambda_im).sum(axis=1),
        "lambda_re": gz.real * delta,
        "lambda_im": gz.imag * delta,
        "b_re": g_b.real,
        "b_im": g_b.imag,
        "c_re": g_c.real,
        "c_im": g_c.imag,
    }


def run_recurrence(ssm, d, u):
    """Step the complex state ``x_j = Lambda x_{j-1} + b u_j`` and emit ``Re(c^T x_j) + d u_j``.

    O(L N) per channel; a reference path only.
    """
    u = np.asarray(u, dtype=np.float64)
    if u.ndim != 2 or u.shape[1] != ssm.H:
        raise ValueError(f"u must have shape (L, {ssm.H}), got {u.shape}")
    lam = ssm.eigenvalues()
    b = ssm.b.T
    c = ssm.c.T
    x = np.zeros((ssm.H, ssm.N), dtype=np.complex128)
    y = np.empty_like(u)
    for j in range(u.shape[0]):
        x = lam * x + b * u[j][:, None]
        y[j] = (c * x).sum(axis=1).real + d * u[j]
    return y


def bidirectional_conv(u, k_fwd, k_bwd, d, backend=None):
    """Causal conv with ``k_fwd`` + cross-correlation with ``k_bwd`` + ``d * u``.

    ``u`` is (..., L, H); kernels are (H, L). The j == l tap counts in both sums.
    """
    L = u.shape[-2]
    size = padded_length(L)
    rows = np.swapaxes(u, -1, -2)
    u_hat = to_spectrum(rows, size, backend)
    k_hat = to_spectrum(np.stack([k_fwd, k_bwd]), size, backend)
    mixed = k_hat[0] + np.conjugate(k_hat[1])
    y = from_spectrum(u_hat * mixed, L, backend)
    return np.swapaxes(y, -1, -2) + d * u


def bidirectional_conv_grads(u, k_fwd, k_bwd, d, grad, backend=None):
    """Return ``(grad_u, grad_k_fwd, grad_k_bwd, grad_d)`` for ``bidirectional_conv``."""
    L, H = u.shape[-2:]
    size = padded_length(L)
    u_hat = to_spectrum(np.swapaxes(u, -1, -2).reshape(-1, H, L), size, backend)
    g_hat = to_spectrum(np.swapaxes(grad, -1, -2).reshape(-1, H, L), size, backend)
    k_hat = to_spectrum(np.stack([k_fwd, k_bwd]), size, backend)
    # adjoint of causal conv is cross-correlation and vice versa
    to_u = g_hat * (np.conjugate(k_hat[0]) + k_hat[1])
    cross = (np.conjugate(u_hat) * g_hat).sum(axis=0)
    grad_u = from_spectrum(to_u, L, backend)
    grad_k = from_spectrum(np.stack([cross, np.conjugate(cross)]), L, backend)
    grad_u = np.swapaxes(grad_u, -1, -2).reshape(u.shape) + d * grad
    grad_d = (grad * u).reshape(-1, H).sum(axis=0)
    return grad_u, grad_k[0], grad_k[1], grad_d


def bissm_forward(bi, U, backend=None):
    """Bidirectional SSM over ``U`` of shape (L, H) (leading batch axes allowed)."""
    U = np.asarray(U, dtype=np.float64)
    if U.shape[-1] != bi.forward.H:
        raise ValueError(f"input width {U.shape[-1]} != channel count {bi.forward.H}")
    L = U.shape[-2]
    k_fwd = kernel_values(bi.forward, L, backend)
    k_bwd = kernel_values(bi.backward, L, backend)
    return bidirectional_conv(U, k_fwd, k_bwd, bi.d, backend)


def decay_envelope(ssm, L):
    """``rho_h**j * sum_n |c_nh| |b_nh|``: an upper bound on ``|kernel[h, j]|``."""
    rho = ssm.spectral_radius()
    scale = (np.abs(ssm.c) * np.abs(ssm.b)).sum(axis=0)
    return scale[:, None] * rho[:, None] ** np.arange(L)[None, :]


def clamp_stable(ssm):
    """Project parameters back into the stable region, in place."""
    np.minimum(ssm.lambda_re, LAMBDA_RE_MAX, out=ssm.lambda_re)
    np.maximum(ssm.delta, DELTA_MIN, out=ssm.delta)
    return ssm
