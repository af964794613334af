"""Shared fixtures: the Gaussian benchmark instance and its solves.

Session-scoped because run_fortet/run_sinkhorn on the 401-node benchmark
are the expensive pieces reused by many tests.
"""

import numpy as np
import pytest

from fortetbridge import (MarginalPair, build_grid, gaussian_density,
                          gaussian_kernel, run_fortet, run_sinkhorn)

BENCH_SIGMA = 0.5
BENCH_SIGMA1 = 1.0
BENCH_SIGMA2 = 0.8
BENCH_RADIUS = 8.0
BENCH_POINTS = 401


@pytest.fixture(scope="session")
def bench_grid():
    return build_grid(dim=1, radius=BENCH_RADIUS, points_per_axis=BENCH_POINTS)


@pytest.fixture(scope="session")
def bench_kernel(bench_grid):
    return gaussian_kernel(bench_grid, bench_grid, BENCH_SIGMA)


@pytest.fixture(scope="session")
def bench_marginals(bench_grid):
    return MarginalPair(gaussian_density(bench_grid, BENCH_SIGMA1),
                        gaussian_density(bench_grid, BENCH_SIGMA2))


@pytest.fixture(scope="session")
def bench_solution(bench_kernel, bench_marginals):
    return run_fortet(bench_kernel, bench_marginals)


@pytest.fixture(scope="session")
def bench_scaling(bench_kernel, bench_marginals):
    return run_sinkhorn(bench_kernel, bench_marginals)


def random_instance(rng, n1, n2, kernel_low=0.1):
    """Strictly positive table kernel + positive unit-mass marginals."""
    from fortetbridge import density_field, table_kernel
    g1 = build_grid(dim=1, radius=1.0, points_per_axis=n1)
    g2 = build_grid(dim=1, radius=1.0, points_per_axis=n2)
    kernel = table_kernel(g1, g2, rng.uniform(kernel_low, 1.0, size=(n1, n2)))
    om1 = density_field(g1, rng.uniform(0.1, 1.0, size=n1))
    om2 = density_field(g2, rng.uniform(0.1, 1.0, size=n2))
    return kernel, MarginalPair(om1, om2)
