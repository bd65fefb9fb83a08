import numpy as np
import pytest

from eit3d.fem import CEMSolver, standard_patterns
from eit3d.linsolve import NoiseModel
from eit3d.mesh import generate_cylinder_mesh
from eit3d.phantom import case1_phantom, noise_covariance_relative, simulate_dataset
from eit3d.reconstruct import (ReconstructionConfig, ReconstructionError, fit_homogeneous, reconstruct,
                               safeguard_state)
from eit3d.serialize import dumps


def _constant_data(mesh, s, z):
    _, U = CEMSolver(mesh, np.full(mesh.num_nodes, s), np.full(mesh.num_electrodes, z)).solve(
        standard_patterns(mesh.num_electrodes))
    U = U.reshape(-1)
    return U, noise_covariance_relative(U, 4e-3)


@pytest.mark.parametrize("s,z", [(1.0, 2e-3), (2.0, 1e-3)])
def test_fit_homogeneous_recovers_truth(small_cylinder, s, z):
    V, noise = _constant_data(small_cylinder, s, z)
    s0, z0 = fit_homogeneous(small_cylinder, V, noise)
    assert s0 == pytest.approx(s, rel=1e-3)
    assert z0 == pytest.approx(z, rel=1e-3)


def test_fit_homogeneous_errors(small_cylinder):
    V, noise = _constant_data(small_cylinder, 1.0, 2e-3)
    with pytest.raises(ValueError, match="M\\(M-1\\)"):
        fit_homogeneous(small_cylinder, V[:-1], noise)
    with pytest.raises(ReconstructionError, match="no finite residual"):
        fit_homogeneous(small_cylinder, np.full_like(V, np.nan), noise)


def test_safeguard_examples():
    sigma, z, counts = safeguard_state([1.0, 2.0], [0.1, 0.2], 1.0)
    np.testing.assert_array_equal(sigma, [1.0, 2.0])
    np.testing.assert_array_equal(z, [0.1, 0.2])
    assert counts == {"sigma": 0, "z": 0}
    sigma, z, counts = safeguard_state([-0.1, 2.0], [0.0, 0.2], 1.0)
    np.testing.assert_array_equal(sigma, [1e-3, 2.0])
    np.testing.assert_array_equal(z, [1e-6, 0.2])
    assert counts == {"sigma": 1, "z": 1}


def test_config_validation():
    with pytest.raises(ValueError, match="tau"):
        ReconstructionConfig(tau=0.5)
    with pytest.raises(ValueError, match="floor"):
        ReconstructionConfig(sigma_floor_fraction=0.0)
    with pytest.raises(ValueError, match="unknown edge"):
        ReconstructionConfig(edge="l1")
    assert ReconstructionConfig().edge_function.T == 5e-3


def test_noise_free_constant_phantom_stops_immediately(small_cylinder):
    V, noise = _constant_data(small_cylinder, 1.0, 2e-3)
    res = reconstruct(small_cylinder, V, noise)
    d = res.diagnostics
    assert d["terminated"] == "discrepancy"
    assert d["outer_iterations"] <= 1
    assert d["E_history"][-1] < 1e-3 * d["epsilon"]


@pytest.fixture(scope="module")
def small_run(small_cylinder):
    fine = generate_cylinder_mesh(1.0, 1.0, (32, 5, 8), 8, (0.4, 0.3))
    sim = simulate_dataset(fine, case1_phantom(), seed=3)
    cfg = ReconstructionConfig(tau=1.5, max_outer=3)
    return sim, cfg, reconstruct(small_cylinder, sim.V, sim.noise, config=cfg, keep_snapshots=True)


def test_history_consistency(small_run):
    _, _, res = small_run
    d = res.diagnostics
    j = d["outer_iterations"]
    assert len(d["E_history"]) == j + 1
    assert len(d["inner_iterations"]) == j == len(d["clamp_counts"]) == len(res.snapshots)
    assert np.all(np.isfinite(d["E_history"]))
    assert (d["E_history"][-1] <= d["target"]) == (d["terminated"] == "discrepancy")
    if d["terminated"] != "discrepancy":
        assert d["terminated"] == "max_outer" and any("not reached" in w for w in d["warnings"])
    assert d["solver"]["quadrature"] == "exact"
    assert np.all(res.sigma > 0) and np.all(res.z > 0)


def test_electrode_trace_kept(small_cylinder, small_run):
    _, _, res = small_run
    nodes = small_cylinder.electrode_nodes
    for snap in res.snapshots:
        assert np.all(snap[nodes] == res.diagnostics["sigma0"])


def test_deterministic_diagnostics(small_cylinder, small_run):
    sim, cfg, res = small_run
    again = reconstruct(small_cylinder, sim.V, sim.noise, config=cfg, keep_snapshots=True)
    assert dumps(again.diagnostics) == dumps(res.diagnostics)
    assert np.array_equal(again.sigma, res.sigma)


def test_initial_guess_skips_fit(small_cylinder, small_run):
    sim, _, _ = small_run
    res = reconstruct(small_cylinder, sim.V, sim.noise, config=ReconstructionConfig(max_outer=1),
                      initial=(1.0, 0.01))
    assert res.diagnostics["sigma0"] == 1.0 and res.diagnostics["z0"] == 0.01
    assert res.diagnostics["outer_iterations"] == 1


def test_multiple_lagged_steps(small_cylinder, small_run):
    sim, _, _ = small_run
    cfg = ReconstructionConfig(max_outer=1, steps_per_linearization=2)
    res = reconstruct(small_cylinder, sim.V, sim.noise, config=cfg)
    assert len(res.diagnostics["inner_traces"]) == 2
    assert len(res.diagnostics["inner_flags"]) == 2


def test_non_finite_state_aborts_with_snapshot(small_cylinder, small_run, monkeypatch):
    import eit3d.reconstruct as rec

    sim, _, _ = small_run
    real = rec.priorconditioned_solve

    def broken(*args, **kwargs):
        out = real(*args, **kwargs)
        out.sigma[7] = np.nan
        return out

    monkeypatch.setattr(rec, "priorconditioned_solve", broken)
    with pytest.raises(ReconstructionError, match="non-finite") as info:
        reconstruct(small_cylinder, sim.V, sim.noise, initial=(1.0, 0.01))
    assert info.value.state["j"] == 0
    assert len(info.value.state["sigma"]) == small_cylinder.num_nodes


def test_non_finite_data_rejected(small_cylinder, small_run):
    sim, _, _ = small_run
    V = sim.V.copy()
    V[5] = np.nan
    with pytest.raises(ValueError, match="index 5"):
        reconstruct(small_cylinder, V, sim.noise)


def test_length_mismatch(small_cylinder):
    with pytest.raises(ValueError):
        reconstruct(small_cylinder, np.ones(10), NoiseModel(np.ones(10)))
