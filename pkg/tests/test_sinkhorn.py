"""Scaling (IPF) baseline and its projective-metric trace."""

import math

import numpy as np
import pytest

from fortetbridge import (MarginalPair, build_coupling, build_grid,
                          density_field, gaussian_density, gaussian_kernel,
                          run_sinkhorn, sinkhorn_trace_hilbert, table_kernel,
                          verify_uniqueness)
from fortetbridge.errors import KernelSupportError, NonConvergenceError
from tests.conftest import random_instance

SINKHORN_TOL = 1e-10
CROSS_SOLVER_TOL = 1e-8


def test_benchmark_scaling_solves_system(bench_scaling, bench_kernel, bench_marginals):
    pair = bench_scaling
    assert not pair.log_domain
    assert float(np.max(pair.u)) == 1.0  # exit normalization
    w1 = bench_kernel.grid1.weights
    w2 = bench_kernel.grid2.weights
    s1 = pair.u * (bench_kernel.values @ (w2 * pair.v)) - bench_marginals.omega1.values
    s2 = pair.v * (bench_kernel.values.T @ (w1 * pair.u)) - bench_marginals.omega2.values
    assert np.max(np.abs(s1)) < 10 * SINKHORN_TOL
    assert np.max(np.abs(s2)) < 10 * SINKHORN_TOL
    coupling = build_coupling(pair.u, pair.v, bench_kernel, bench_marginals)
    assert coupling.row_marginal_resid < 10 * SINKHORN_TOL
    assert coupling.col_marginal_resid < 10 * SINKHORN_TOL


def test_agrees_with_fixed_point_solver(bench_solution, bench_scaling, bench_marginals):
    from types import SimpleNamespace
    rep = verify_uniqueness(bench_solution,
                            SimpleNamespace(phi=bench_scaling.u, psi=bench_scaling.v),
                            bench_marginals, tol=CROSS_SOLVER_TOL)
    assert rep.consistent
    assert rep.ratio_spread_phi < CROSS_SOLVER_TOL
    assert rep.ratio_spread_psi < CROSS_SOLVER_TOL


def test_symmetric_2x2_doubly_stochastic():
    grid_nodes = build_grid(dim=1, radius=1.0, points_per_axis=2)
    kernel = table_kernel(grid_nodes, grid_nodes,
                          np.array([[1.0, 0.5], [0.5, 1.0]]))
    half = density_field(grid_nodes, np.array([0.5, 0.5]))
    marginals = MarginalPair(half, half)
    pair = run_sinkhorn(kernel, marginals)
    # symmetry forces u and v constant; exit normalization makes u = 1
    assert np.max(np.abs(pair.u - 1.0)) < 1e-12
    assert np.max(np.abs(pair.v - pair.v[0])) < 1e-12
    coupling = build_coupling(pair.u, pair.v, kernel, marginals)
    rows = coupling.pi @ grid_nodes.weights
    assert np.max(np.abs(rows - 0.5)) < 1e-14


def test_log_domain_triggers_on_underflowing_kernel():
    grid = build_grid(dim=1, radius=8.0, points_per_axis=401)
    kernel = gaussian_kernel(grid, grid, 0.15)   # far tails underflow to 0.0
    assert np.any(kernel.values == 0.0)
    marginals = MarginalPair(gaussian_density(grid, 1.0),
                             gaussian_density(grid, 1.1))
    pair = run_sinkhorn(kernel, marginals)
    assert pair.log_domain
    w2 = grid.weights
    s1 = pair.u * (kernel.values @ (w2 * pair.v)) - marginals.omega1.values
    assert np.max(np.abs(s1)) < 1e-8


def test_zero_row_raises():
    grid = build_grid(dim=1, radius=1.0, points_per_axis=5)
    vals = np.ones((5, 5))
    vals[2, :] = 0.0
    kernel = table_kernel(grid, grid, vals)
    rng = np.random.default_rng(0)
    marginals = MarginalPair(density_field(grid, rng.uniform(0.1, 1.0, 5)),
                             density_field(grid, rng.uniform(0.1, 1.0, 5)))
    with pytest.raises(KernelSupportError):
        run_sinkhorn(kernel, marginals)


def test_iteration_cap_raises(bench_kernel, bench_marginals):
    with pytest.raises(NonConvergenceError):
        run_sinkhorn(bench_kernel, bench_marginals, max_iter=2)


def test_rank_one_kernel_converges_in_one_projective_step():
    grid = build_grid(dim=1, radius=1.0, points_per_axis=3)
    kernel = table_kernel(grid, grid, np.ones((3, 3)))
    marginals = MarginalPair(density_field(grid, np.array([0.2, 0.5, 0.3])),
                             density_field(grid, np.array([0.3, 0.4, 0.3])))
    trace = sinkhorn_trace_hilbert(kernel, marginals)
    assert trace.distances[0] <= 1e-12


def test_trace_ratios_respect_birkhoff_bound():
    rng = np.random.default_rng(77)
    for _ in range(10):
        n1 = int(rng.integers(6, 30))
        n2 = int(rng.integers(6, 30))
        kernel, marginals = random_instance(rng, n1, n2)
        trace = sinkhorn_trace_hilbert(kernel, marginals)
        assert trace.guaranteed
        assert trace.bound < 1.0
        for ratio in trace.ratios[1:]:
            assert ratio <= trace.bound + 1e-9


def test_benchmark_trace_decays_geometrically(bench_kernel, bench_marginals):
    trace = sinkhorn_trace_hilbert(bench_kernel, bench_marginals)
    positive = np.array([d for d in trace.distances if d > 0])
    assert len(positive) > 10
    slope = np.polyfit(np.arange(len(positive)), np.log(positive), 1)[0]
    fitted_ratio = math.exp(slope)
    assert fitted_ratio < 1.0
