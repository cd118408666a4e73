import sys

import numpy as np
import pytest

from branchtopo.geometry import AugConfig, GenConfig, make_sample
from branchtopo.model import NetworkConfig


def tiny_config(dim=2, n_points=64, use_global_coords=True):
    # widths / 8 and a base radius large enough that 64 points have neighbours
    return NetworkConfig.scaled(dim=dim, n_points=n_points, centroids=(16, 4), max_k=8,
                                divisor=8, use_global_coords=use_global_coords, R=0.05)


def tiny_clouds(dim=2, n=2, n_points=64, seed0=1):
    gen = GenConfig(dim=dim, max_levels=1, p_trifurcation=0.0, grid_size=64)
    aug = AugConfig(jitter_sd=0.5, dropout_p=0.5, n_points=n_points)
    return [make_sample(gen, aug, seed0 + i)[0] for i in range(n)]


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def pytest_terminal_summary(terminalreporter):
    mod = sys.modules.get("test_acceptance")
    results = getattr(mod, "RESULTS", None)
    if not results:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(results):
        verdict, title, detail = results[n]
        terminalreporter.write_line(f"{verdict} criterion {n} ({title}): {detail}")
