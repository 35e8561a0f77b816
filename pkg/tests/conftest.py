import numpy as np
import pytest

import neckflow as nf


@pytest.fixture(scope="session")
def unit_square_geometry():
    """Unit curvilinear square, m = 4, the workhorse geometry."""
    return nf.GapGeometry(
        d=2, m=4.0, eps=1e-4,
        profile=nf.ProfileSpec.curvilinear_square(1.0), R0=0.45,
    )


@pytest.fixture(scope="session")
def flat_channel():
    """Straight channel of width 0.1, solved once with p = 2."""
    cfg = nf.SolverConfig(p=2.0, n1=64, n2=8, grading_q=1.0)
    geo = nf.GapGeometry(d=2, m=2.0, eps=0.1, profile=nf.ProfileSpec.flat(), R0=1.5)
    grid = nf.build_grid(geo, cfg, L=1.0)
    return nf.solve(grid, cfg), geo


@pytest.fixture(scope="session")
def curvilinear_field():
    """Moderate-resolution solve on the thin unit curvilinear square."""
    cfg = nf.SolverConfig(p=2.0, n1=64, n2=16)
    geo = nf.GapGeometry(
        d=2, m=4.0, eps=1e-3, profile=nf.ProfileSpec.curvilinear_square(1.0), R0=0.45
    )
    grid = nf.build_grid(geo, cfg, L=0.45)
    return nf.solve(grid, cfg), geo


def rng(seed=0):
    return np.random.default_rng(seed)
