import os

import numpy as np
import pytest

from smoe_mmi.core import KernelParams, SMoEModel

DATA_DIR = os.path.join(os.path.dirname(__file__), "data")


def data_path(name):
    return os.path.join(DATA_DIR, name)


def random_model(rng, dim, num_kernels, isotropic=False, logit_scale=1.0):
    """Random model with moderately sized, well-conditioned kernels."""
    kernels = []
    for _ in range(num_kernels):
        center = rng.uniform(0.0, 1.0, dim)
        log_diag = rng.uniform(np.log(1.0), np.log(8.0), dim)
        if isotropic:
            log_diag[:] = log_diag[0]
        factor = np.diag(log_diag)
        if dim == 2 and not isotropic:
            factor[1, 0] = rng.normal(0.0, 2.0)
        kernels.append(KernelParams(center, factor, rng.normal(0.0, logit_scale), rng.uniform(0.0, 1.0)))
    return SMoEModel(tuple(kernels), dim)


def two_kernel_truth(rng):
    """Generator for the noiseless recovery oracle: two separated steered kernels."""
    while True:
        c = rng.uniform(0.15, 0.85, (2, 2))
        if np.linalg.norm(c[0] - c[1]) >= 0.4:
            break
    kernels = []
    for j in range(2):
        angle = rng.uniform(0.0, np.pi)
        rot = np.array([[np.cos(angle), -np.sin(angle)], [np.sin(angle), np.cos(angle)]])
        prec = rot @ np.diag(rng.uniform(10.0, 60.0, 2)) @ rot.T
        kernels.append(KernelParams.from_precision(c[j], prec, rng.normal(0.0, 0.3), rng.uniform(0.05, 0.95)))
    return SMoEModel(tuple(kernels), 2)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(scope="session")
def camera_crop():
    from smoe_mmi.image_io import load_image

    return load_image(data_path("camera_crop.pgm"))


# Verdict lines recorded by the acceptance suite, echoed after the run.
ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
