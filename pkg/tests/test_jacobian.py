import numpy as np
import pytest

from eit3d.fem import CEMSolver, standard_patterns
from eit3d.jacobian import assemble_jacobian, jacobian_from_solution


def _forward(mesh, sigma, z, P):
    return CEMSolver(mesh, sigma, z).solve(P)[1].reshape(-1)


def test_slab_z_derivative(slab_mesh):
    jac = assemble_jacobian(slab_mesh, np.ones(27), [0.1, 0.1], [[1.0, -1.0]])
    # rows: U_1, U_2 for the single pattern; d(U1 - U2)/dz_1 = I / A = 1
    np.testing.assert_allclose(jac.J2[0, 0] - jac.J2[1, 0], 1.0, rtol=1e-10)


def test_slab_uniform_sigma_derivative(slab_mesh):
    jac = assemble_jacobian(slab_mesh, np.ones(27), [0.1, 0.1], [[1.0, -1.0]])
    d = jac.J1 @ np.ones(27)
    np.testing.assert_allclose(d[0] - d[1], -1.0, rtol=1e-10)


def test_shapes_and_pair(small_cylinder, rng):
    mesh = small_cylinder
    jac = assemble_jacobian(mesh, rng.uniform(0.5, 2, mesh.num_nodes), np.full(8, 0.01),
                            standard_patterns(8))
    assert jac.J1.shape == (56, mesh.num_nodes)
    assert jac.J2.shape == (56, 8)
    assert jac.J.shape == (56, mesh.num_nodes + 8)
    assert np.all(np.isfinite(jac.J))


@pytest.mark.parametrize("block", ["sigma", "z"])
def test_finite_difference_oracle(small_cylinder, rng, block):
    mesh = small_cylinder
    M = mesh.num_electrodes
    P = standard_patterns(M)
    sigma, z = rng.uniform(0.5, 2, mesh.num_nodes), rng.uniform(0.01, 0.1, M)
    jac = assemble_jacobian(mesh, sigma, z, P)
    for _ in range(10):
        if block == "sigma":
            d = rng.standard_normal(mesh.num_nodes)
            h = 1e-5 * np.abs(sigma).max()
            fd = (_forward(mesh, sigma + h * d, z, P) - _forward(mesh, sigma - h * d, z, P)) / (2 * h)
            lin = jac.J1 @ d
        else:
            d = rng.standard_normal(M)
            h = 1e-5 * np.abs(z).max()
            fd = (_forward(mesh, sigma, z + h * d, P) - _forward(mesh, sigma, z - h * d, P)) / (2 * h)
            lin = jac.J2 @ d
        assert np.linalg.norm(lin - fd) <= 1e-4 * np.linalg.norm(fd)


def test_J2_full_column_rank(small_cylinder):
    mesh = small_cylinder
    jac = assemble_jacobian(mesh, np.ones(mesh.num_nodes), np.full(8, 0.002), standard_patterns(8))
    s = np.linalg.svd(jac.J2, compute_uv=False)
    assert s.min() > 1e-10 * s.max()


def test_patterns_must_span_mean_free_space(small_cylinder):
    mesh = small_cylinder
    P = standard_patterns(8)
    u, U = CEMSolver(mesh, np.ones(mesh.num_nodes), np.ones(8)).solve(P)
    with pytest.raises(ValueError, match="span"):
        jacobian_from_solution(mesh, np.ones(8), P[:3], u[:3], U[:3])


def test_other_pattern_family(small_cylinder, rng):
    # adjacent patterns give the same derivatives as the FD oracle too
    mesh = small_cylinder
    P = np.roll(np.eye(8), 1, axis=1)[:7] - np.eye(8)[:7]
    sigma, z = rng.uniform(0.5, 2, mesh.num_nodes), np.full(8, 0.05)
    jac = assemble_jacobian(mesh, sigma, z, P)
    d = rng.standard_normal(mesh.num_nodes)
    h = 1e-5
    fd = (_forward(mesh, sigma + h * d, z, P) - _forward(mesh, sigma - h * d, z, P)) / (2 * h)
    assert np.linalg.norm(jac.J1 @ d - fd) <= 1e-4 * np.linalg.norm(fd)
