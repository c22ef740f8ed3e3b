"""Scaling sweeps, complexity-class fitting and kernel-decay export."""

import csv
import math
import statistics
import time
import tracemalloc
from dataclasses import dataclass

import numpy as np
from threadpoolctl import threadpool_limits

from .graph import Tensor, no_grad
from .model import Model, ModelConfig, encoder_layer_forward
from .ssm import decay_envelope, materialize_kernel

KINDS = ("ssm-encoder", "dense-attention")
WORD = 8  # float64
DEFAULT_LENGTHS = tuple(1024 * 2**i for i in range(7))  # 1K .. 64K
DEFAULT_MEMORY_BUDGET = 3 << 29  # 1.5 GiB


@dataclass
class ScalingRow:
    L: int
    wall_ms: float
    bytes_est: int
    bytes_peak: int = None
    status: str = "ok"  # "ok" | "oom"

    @property
    def ok(self):
        return self.status == "ok"


def ssm_bytes_estimate(L, H, N, F=None):
    """Bytes touched by one encoder-layer forward: affine in ``L``.

    Terms: the H * N * L mode-power state term, the real kernels, the padded complex spectra, dense activations and the
    fixed parameter block.
    """
    F = F or 2 * H
    P = 2 * L  # padded FFT length, rounded down to keep the estimate exactly affine
    powers = H * N * L
    kernels = 2 * H * L
    spectra = 3 * H * P * 2
    activations = 8 * L * H + 3 * L * F
    params = 3 * H * H + 3 * H * F + 2 * 7 * H * N + 4 * H
    return WORD * (powers + kernels + spectra + activations + params)


def dense_bytes_estimate(L, H):
    """Single-head dense attention: the L x L score matrix plus q, k, v and output."""
    return WORD * (L * L + 4 * L * H)


def bytes_estimate(kind, L, H, N):
    if kind == "ssm-encoder":
        return ssm_bytes_estimate(L, H, N)
    if kind == "dense-attention":
        return dense_bytes_estimate(L, H)
    raise ValueError(f"unknown sweep kind {kind!r}")


def _ssm_runner(L, H, N, seed):
    config = ModelConfig(H=H, N=N, F=2 * H, enc_layers=1, dec_layers=1, heads=1, vocab=8)
    layer = Model(config, seed=seed).encoder_layers[0]
    U = Tensor(np.random.default_rng([seed, L]).normal(size=(1, L, H)))

    def run():
        with no_grad():
            return encoder_layer_forward(layer, U).data

    return run


def _dense_runner(L, H, seed):
    rng = np.random.default_rng([seed, L])
    x = rng.normal(size=(L, H))
    wq, wk, wv = (rng.normal(scale=H**-0.5, size=(H, H)) for _ in range(3))

    def run():
        q, k, v = x @ wq, x @ wk, x @ wv
        s = q @ k.T
        s *= H**-0.5
        s -= s.max(axis=1, keepdims=True)
        np.exp(s, out=s)
        s /= s.sum(axis=1, keepdims=True)
        return s @ v

    return run


def _peak_bytes(run):
    tracemalloc.start()
    try:
        run()
        return tracemalloc.get_traced_memory()[1]
    finally:
        tracemalloc.stop()


def scaling_sweep(
    kind,
    lengths=DEFAULT_LENGTHS,
    H=64,
    N=16,
    repeats=5,
    seed=0,
    memory_budget=DEFAULT_MEMORY_BUDGET,
    measure_peak=False,
):
    """Median single-forward wall time per length, after one warmup, on one thread.

    Lengths whose analytic estimate exceeds ``memory_budget`` (or that raise
    MemoryError) are recorded with status "oom" and the sweep moves on.
    """
    if kind not in KINDS:
        raise ValueError(f"unknown sweep kind {kind!r}")
    lengths = list(lengths)
    if not lengths or any(L < 1 for L in lengths) or lengths != sorted(lengths):
        raise ValueError("lengths must be positive and sorted ascending")
    if repeats < 3:
        raise ValueError("repeats must be >= 3")
    rows = []
    with threadpool_limits(limits=1):
        for L in lengths:
            est = bytes_estimate(kind, L, H, N)
            if memory_budget is not None and est > memory_budget:
                rows.append(ScalingRow(L, math.nan, est, None, "oom"))
                continue
            try:
                run = _ssm_runner(L, H, N, seed) if kind == "ssm-encoder" else _dense_runner(L, H, seed)
                run()
                times = []
                for _ in range(repeats):
                    t0 = time.perf_counter()
                    run()
                    times.append((time.perf_counter() - t0) * 1e3)
                peak = _peak_bytes(run) if measure_peak else None
            except MemoryError:
                rows.append(ScalingRow(L, math.nan, est, None, "oom"))
                continue
            rows.append(ScalingRow(L, statistics.median(times), est, peak))
    return rows


COMPLEXITY_CLASSES = {
    "linear": lambda L: L,
    "linearithmic": lambda L: L * np.log2(L),
    "quadratic": lambda L: L * L,
}


@dataclass
class ComplexityFit:
    best: str
    coefficients: dict
    residuals: dict  # relative sum of squared residuals per class


def fit_complexity(rows):
    """One-parameter fits ``t ~ c * f(L)`` per class, by relative least squares.

    Residuals are measured relative to each timing, so the result does not
    change when every timing is multiplied by the same positive constant.
    """
    ok = [r for r in rows if getattr(r, "status", "ok") == "ok" and r.wall_ms > 0]
    if len(ok) < 4:
        raise ValueError(f"need at least 4 successful rows, got {len(ok)}")
    L = np.array([r.L for r in ok], dtype=np.float64)
    t = np.array([r.wall_ms for r in ok], dtype=np.float64)
    coefs, resid = {}, {}
    for name, f in COMPLEXITY_CLASSES.items():
        ratio = f(L) / t
        c = ratio.sum() / (ratio * ratio).sum()
        coefs[name] = float(c)
        resid[name] = float(((1.0 - c * ratio) ** 2).sum())
    best = min(resid, key=lambda k: (resid[k], list(COMPLEXITY_CLASSES).index(k)))
    return ComplexityFit(best, coefs, resid)


def affine_r2(x, y):
    """Coefficient of determination of the least-squares line through (x, y)."""
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    A = np.stack([x, np.ones_like(x)], axis=1)
    coef, *_ = np.linalg.lstsq(A, y, rcond=None)
    ss_res = float(((y - A @ coef) ** 2).sum())
    ss_tot = float(((y - y.mean()) ** 2).sum())
    return 1.0 if ss_tot == 0 else 1.0 - ss_res / ss_tot


def synthetic_rows(kind, lengths=DEFAULT_LENGTHS, coef=None):
    """Timings drawn exactly from ``3 L log L`` or ``2 L^2`` (no measurement)."""
    if kind == "linearithmic":
        f = lambda L: (coef or 3.0) * L * math.log2(L)
    elif kind == "quadratic":
        f = lambda L: (coef or 2.0) * L * L
    else:
        raise ValueError(f"unknown synthetic kind {kind!r}")
    return [ScalingRow(L, f(L), 0) for L in lengths]


def write_sweep_csv(path, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["L", "wall_ms", "bytes_est", "bytes_peak", "status"])
        for r in rows:
            w.writerow([r.L, "" if math.isnan(r.wall_ms) else repr(r.wall_ms), r.bytes_est, "" if r.bytes_peak is None else r.bytes_peak, r.status])


def read_sweep_csv(path):
    with open(path, newline="") as fh:
        return [
            ScalingRow(
                int(r["L"]),
                float(r["wall_ms"]) if r["wall_ms"] else math.nan,
                int(r["bytes_est"]),
                int(r["bytes_peak"]) if r["bytes_peak"] else None,
                r["status"],
            )
            for r in csv.DictReader(fh)
        ]


def export_kernel_decay(model, layer, channel, L):
    """Rows ``(j, |fwd kernel|, |bwd kernel|, fwd envelope, bwd envelope)`` for one channel.

    ``model`` is a Model or a checkpoint path.
    """
    if not isinstance(model, Model):
        model = Model.load(model)[0]
    layers = model.encoder_layers
    if not 0 <= layer < len(layers):
        raise ValueError(f"layer {layer} out of range [0, {len(layers)})")
    if not 0 <= channel < model.config.H:
        raise ValueError(f"channel {channel} out of range [0, {model.config.H})")
    if L < 1:
        raise ValueError("L must be >= 1")
    bi = layers[layer].bissm()
    rows = []
    mags, envs = [], []
    for ssm in (bi.forward, bi.backward):
        mags.append(np.abs(materialize_kernel(ssm, L).values[channel]))
        envs.append(decay_envelope(ssm, L)[channel])
    for j in range(L):
        rows.append((j, float(mags[0][j]), float(mags[1][j]), float(envs[0][j]), float(envs[1][j])))
    return rows


def write_decay_csv(path, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["j", "fwd_mag", "bwd_mag", "fwd_env", "bwd_env"])
        for j, *vals in rows:
            w.writerow([j, *(repr(v) for v in vals)])


__all__ = [
    "ComplexityFit",
    "ScalingRow",
    "affine_r2",
    "bytes_estimate",
    "export_kernel_decay",
    "fit_complexity",
    "scaling_sweep",
    "synthetic_rows",
    "write_decay_csv",
    "write_sweep_csv",
]
