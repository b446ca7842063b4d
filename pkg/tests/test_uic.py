"""
Pressure operators, LCP assembly, projected Gauss-Seidel and the velocity
feedback
"""

import math

import numpy as np
import pytest
import scipy.sparse as sp

from modules.diagnostics import crowded_lcp_probe, lcp_probe
from modules.fields import ScalarField, VectorField, divergence_central, gradient_central, laplacian_compact
from modules.scene import Grid
from modules.uic import (
    LcpProblem,
    PressureParams,
    advance_density,
    apply_pressure,
    assemble_b,
    assemble_C,
    assemble_tridiagonal,
    asymmetry_ratio,
    build_lcp,
    fb_residual,
    kronecker,
    lcp_active_set_oracle,
    pgs_solve,
    qp_objective,
    swarm_blend,
    wall_ghost_weights,
    wall_gradient,
)
from utils.utility import LcpSolverError


@pytest.fixture
def odd_grid():
    return Grid(4, 4, 0.7, 1.3)


def random_state(grid, rng):
    rho = ScalarField(grid, rng.uniform(0.2, 2.0, size=grid.shape))
    v = VectorField(ScalarField(grid, rng.normal(size=grid.shape)), ScalarField(grid, rng.normal(size=grid.shape)))
    return rho, v


def test_tridiagonal_blocks():
    assert assemble_tridiagonal("P", 2).toarray().tolist() == [[0.0, 1.0], [-1.0, 0.0]]
    assert assemble_tridiagonal("Q", 2).toarray().tolist() == [[-2.0, 1.0], [1.0, -2.0]]
    with pytest.raises(ValueError):
        assemble_tridiagonal("R", 3)


def test_kronecker_matches_dense():
    a = assemble_tridiagonal("P", 3)
    b = assemble_tridiagonal("Q", 2)
    assert np.array_equal(kronecker(a, b).toarray(), np.kron(a.toarray(), b.toarray()))


def test_pressure_operator_vanishes_on_zero_density(small_grid):
    C = assemble_C(ScalarField.zeros(small_grid))
    assert C.nnz == 0


def test_pressure_operator_matches_field_stencils(odd_grid, rng):
    rho, _ = random_state(odd_grid, rng)
    p = ScalarField(odd_grid, rng.normal(size=odd_grid.shape))
    grad_rho = gradient_central(rho)
    grad_p = gradient_central(p)
    expected = (grad_rho.x.values * grad_p.x.values + grad_rho.y.values * grad_p.y.values
                + rho.values * laplacian_compact(p).values)
    assert np.allclose(assemble_C(rho) @ p.flat(), expected.ravel(), rtol=0.0, atol=1e-12)


def test_advection_term_is_negative_divergence(odd_grid, rng):
    rho, v = random_state(odd_grid, rng)
    flux = VectorField(ScalarField(odd_grid, rho.values * v.x.values),
                       ScalarField(odd_grid, rho.values * v.y.values))
    assert np.allclose(assemble_b(rho, v), -divergence_central(flux).flat(), atol=1e-12)


def test_lcp_reproduces_density_update(odd_grid, rng):
    rho, v = random_state(odd_grid, rng)
    params = PressureParams(max_density=2.5, density_shift=0.01)
    dt = 0.1
    prob = build_lcp(rho, v, params, dt)
    z = rng.uniform(0.0, 1.0, size=odd_grid.size)
    shifted = ScalarField(odd_grid, rho.values + 0.01)
    expected = params.max_density - advance_density(shifted, v, z, dt).flat()
    assert np.allclose(prob.M @ z + prob.q, expected, rtol=0.0, atol=1e-10)


def test_sparse_crowd_needs_no_pressure(small_grid):
    rho = ScalarField(small_grid, np.full(small_grid.shape, 0.5))
    prob = build_lcp(rho, VectorField.zeros(small_grid), PressureParams(), 0.1)
    solution = pgs_solve(prob)
    assert solution.converged
    assert solution.iterations == 0
    assert not solution.z.any()


def test_obstacle_cells_are_pinned(small_grid):
    mask = np.zeros(small_grid.shape, dtype=bool)
    mask[1, 1] = True
    rho = ScalarField(small_grid, np.full(small_grid.shape, 1.0))
    params = PressureParams(boundary_pressure=2.0)
    prob = build_lcp(rho, VectorField.zeros(small_grid), params, 0.1, mask=mask)
    k = small_grid.flatten(2, 2) - 1
    row = prob.M[[k], :].toarray().ravel()
    col = prob.M[:, [k]].toarray().ravel()
    assert row[k] == 1.0 and np.count_nonzero(row) == 1
    assert prob.q[k] == -2.0
    assert col[k] == 1.0
    assert np.count_nonzero(col) == 1
    assert pgs_solve(prob).z[k] == pytest.approx(2.0)


def test_closed_walls_stop_pressure_flux(odd_grid):
    # uniform density: the mirrored walls leave every row of C summing to zero
    rho = ScalarField(odd_grid, np.full(odd_grid.shape, 1.5))
    ghost = wall_ghost_weights(rho)
    rows = np.asarray(assemble_C(rho).sum(axis=1)).ravel() + ghost
    assert np.allclose(rows, 0.0)

    prob = build_lcp(rho, VectorField.zeros(odd_grid), PressureParams(), 0.1, closed_walls=True)
    assert np.allclose(np.asarray(prob.M.sum(axis=1)).ravel(), 0.0)
    assert (prob.M.diagonal() > 0).all()


def test_open_cells_keep_the_zero_ghost(odd_grid):
    rho = ScalarField(odd_grid, np.full(odd_grid.shape, 1.5))
    open_cells = np.zeros(odd_grid.shape, dtype=bool)
    open_cells[:, -1] = True
    ghost = wall_ghost_weights(rho, open_cells).reshape(odd_grid.shape)
    assert not ghost[:, -1].any()
    assert (ghost[:, 0] > 0).all()
    assert not ghost[1:-1, 1:-1].any()


def test_wall_gradient_pushes_off_closed_walls(small_grid):
    # pressure rising towards the east wall
    z = np.tile(np.arange(small_grid.nx, dtype=float), small_grid.ny)
    pressure = ScalarField.from_flat(small_grid, z)
    assert (gradient_central(pressure).x.values[:, -1] < 0).all()
    assert np.allclose(wall_gradient(pressure).x.values[:, -1], 0.5)

    crowd = apply_pressure(VectorField.zeros(small_grid), z, 1.0, closed_walls=True)
    assert (crowd.x.values < 0).all()

    open_cells = np.zeros(small_grid.shape, dtype=bool)
    open_cells[:, -1] = True
    assert np.allclose(wall_gradient(pressure, open_cells).x.values[:, -1], -1.0)


def test_build_lcp_rejects_bad_dt(small_grid):
    with pytest.raises(ValueError):
        build_lcp(ScalarField.zeros(small_grid), VectorField.zeros(small_grid), PressureParams(), 0.0)


def test_lcp_problem_checks_shapes():
    with pytest.raises(LcpSolverError):
        LcpProblem(np.eye(3), np.zeros(2))
    with pytest.raises(LcpSolverError):
        LcpProblem(np.eye(2), np.array([1.0, np.nan]))


def test_pgs_diagonal_system():
    solution = pgs_solve(LcpProblem(np.diag([2.0, 4.0]), np.array([-2.0, 4.0])))
    assert solution.z.tolist() == [1.0, 0.0]
    assert solution.w.tolist() == [0.0, 4.0]
    assert solution.iterations == 1
    assert solution.fb_residual == 0.0


def test_pgs_identity_system():
    solution = pgs_solve(LcpProblem(np.eye(3), np.array([-1.0, 2.0, -3.0])))
    assert solution.z.tolist() == [1.0, 0.0, 3.0]


def test_pgs_warm_start_at_solution_returns_immediately():
    M = np.array([[2.0, 1.0], [1.0, 2.0]])
    q = np.array([-1.0, -1.0])
    solution = pgs_solve(LcpProblem(M, q), z0=np.array([1.0, 1.0]) / 3.0)
    assert solution.iterations == 0
    with pytest.raises(LcpSolverError):
        pgs_solve(LcpProblem(M, q), z0=np.zeros(3))


def test_pgs_zero_diagonal():
    with pytest.raises(LcpSolverError):
        pgs_solve(LcpProblem(np.array([[0.0, 1.0], [1.0, 1.0]]), np.array([-1.0, -1.0])))


def test_pgs_reports_cap():
    M = np.array([[1.0, 0.9], [0.9, 1.0]])
    solution = pgs_solve(LcpProblem(M, np.array([-1.0, -1.0])), tol=1e-14, max_iter=2)
    assert not solution.converged
    assert solution.iterations == 2


def test_oracle_examples():
    M = np.array([[2.0, 1.0], [1.0, 2.0]])
    assert np.allclose(lcp_active_set_oracle(M, [-1.0, -1.0]), [1.0 / 3.0, 1.0 / 3.0])
    assert np.allclose(lcp_active_set_oracle(M, [-2.0, 3.0]), [1.0, 0.0])
    assert np.allclose(lcp_active_set_oracle(sp.csr_matrix(M), [1.0, 1.0]), [0.0, 0.0])
    with pytest.raises(LcpSolverError):
        lcp_active_set_oracle(np.array([[-1.0]]), [-1.0])
    with pytest.raises(ValueError):
        lcp_active_set_oracle(np.eye(13), np.ones(13))


@pytest.mark.slow
def test_pgs_agrees_with_oracle():
    result = lcp_probe(n=10, trials=1000, seed=3)
    assert result["trials"] == 1000
    assert result["max_deviation"] <= 1e-6
    assert result["max_fb"] <= 1e-8
    assert result["capped"] == 0


def test_fb_residual_and_objective():
    assert fb_residual([0.0, 1.0], [1.0, 0.0]) == 0.0
    assert fb_residual([1.0], [1.0]) == pytest.approx(2.0 - math.sqrt(2.0))
    assert qp_objective(np.eye(1), [-1.0], [1.0]) == 0.0
    assert qp_objective(np.eye(2), [0.0, 0.0], [1.0, 2.0]) == 5.0


def test_apply_pressure_keeps_speed(small_grid):
    v = VectorField(ScalarField(small_grid, np.full(small_grid.shape, 3.0)),
                    ScalarField(small_grid, np.full(small_grid.shape, 4.0)))
    out = apply_pressure(v, np.zeros(small_grid.size), 1.5)
    assert np.allclose(out.x.values, 0.9)
    assert np.allclose(out.y.values, 1.2)

    still = apply_pressure(VectorField.zeros(small_grid), np.zeros(small_grid.size), 1.5)
    assert not still.magnitude().any()


def test_pressure_pushes_down_the_gradient():
    grid = Grid(5, 1, 1.0, 1.0)
    z = np.array([0.0, 0.0, 4.0, 0.0, 0.0])
    out = apply_pressure(VectorField.zeros(grid), z, 1.0)
    # left of the peak the flow turns west, right of it east
    assert out.x.values[0, 1] == pytest.approx(-1.0)
    assert out.x.values[0, 3] == pytest.approx(1.0)


def test_swarm_blend():
    desired = np.array([[1.0, 0.0], [1.0, 0.0], [1.0, 0.0]])
    crowd = np.array([[0.0, 1.0], [0.0, 1.0], [0.0, 1.0]])
    out = swarm_blend(desired, crowd, np.array([0.0, 1.0, 5.0]), 2.0)
    assert out.tolist() == [[1.0, 0.0], [0.5, 0.5], [0.0, 1.0]]


def test_asymmetry_ratio():
    assert asymmetry_ratio(sp.identity(5)) == 0.0
    assert asymmetry_ratio(np.array([[0.0, 1.0], [-1.0, 0.0]])) == pytest.approx(1.0)
    rotation = sp.block_diag([np.array([[0.0, 2.0], [-2.0, 0.0]])] * 3)
    assert asymmetry_ratio(rotation) == pytest.approx(1.0, rel=1e-6)
    assert asymmetry_ratio(sp.csr_matrix((4, 4))) == 0.0


@pytest.mark.slow
def test_pgs_converges_below_capacity():
    _, solution = crowded_lcp_probe(0.9, n=48)
    assert solution.converged
    assert solution.fb_residual <= 1e-6


@pytest.mark.slow
def test_pgs_terminates_above_capacity():
    prob, solution = crowded_lcp_probe(1.4, n=48, max_iter=500)
    assert solution.iterations <= 500
    assert np.isfinite(solution.z).all()
    assert (solution.z >= 0).all()


def test_no_motion_no_pressure_keeps_density(odd_grid, rng):
    rho, _ = random_state(odd_grid, rng)
    out = advance_density(rho, VectorField.zeros(odd_grid), np.zeros(odd_grid.size), 0.1)
    assert np.array_equal(out.values, rho.values)
