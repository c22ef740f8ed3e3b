import numpy as np
import pytest
from hypothesis import settings

from locost import _backend

settings.register_profile("locost", deadline=None, max_examples=40)
settings.load_profile("locost")

BACKEND_NAMES = sorted(_backend.BACKENDS)


@pytest.fixture(params=BACKEND_NAMES)
def backend(request):
    return request.param


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def direct_causal(kernel, signal):
    """O(L^2) reference: out[j] = sum_{l<=j} kernel[j-l] signal[l]."""
    L = len(signal)
    return np.array([sum(kernel[j - l] * signal[l] for l in range(j + 1)) for j in range(L)])


def direct_cross(kernel, signal):
    """O(L^2) reference: out[j] = sum_{l>=j} kernel[l-j] signal[l]."""
    L = len(signal)
    return np.array([sum(kernel[l - j] * signal[l] for l in range(j, L)) for j in range(L)])


def explicit_kernel(ssm, L):
    """Kernel from explicit complex powers, independent of the library's power scheme."""
    lam = np.exp(ssm.delta[:, None] * (ssm.lambda_re + 1j * ssm.lambda_im))
    w = (ssm.c * ssm.b).T  # (H, N)
    j = np.arange(L)
    return np.einsum("hn,hnj->hj", w, lam[:, :, None] ** j).real


def random_stable_ssm(rng, H, N):
    from locost.ssm import DiagonalSSM

    return DiagonalSSM(
        delta=rng.uniform(0.05, 1.0, H),
        lambda_re=-rng.uniform(0.05, 1.0, (H, N)),
        lambda_im=rng.uniform(-4.0, 4.0, (H, N)),
        b_re=rng.normal(size=(N, H)),
        b_im=rng.normal(size=(N, H)),
        c_re=rng.normal(size=(N, H)),
        c_im=rng.normal(size=(N, H)),
    )


# one line per acceptance criterion, echoed again in the terminal summary
ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[2].rstrip(":"))):
            terminalreporter.write_line(line)
