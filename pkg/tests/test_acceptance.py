"""Acceptance criteria 1-10, one PASS/FAIL line each.

Lines are printed as they are decided and repeated in the pytest terminal
summary. Run standalone with ``python tests/test_acceptance.py``.
"""
import time

import numpy as np
import pytest
from threadpoolctl import threadpool_limits

from eit3d.fem import CEMSolver, standard_patterns
from eit3d.jacobian import assemble_jacobian
from eit3d.linsolve import priorconditioned_solve, recover_contact_resistances
from eit3d.mesh import ElectrodePatch, generate_box_mesh
from eit3d.phantom import add_noise, case1_phantom, rasterize_phantom, simulate_dataset
from eit3d.presets import desk_cylinder
from eit3d.prior import EdgeFunction, assemble_H, penalty
from eit3d.reconstruct import ReconstructionConfig, reconstruct
from eit3d.serialize import dumps

from test_linsolve import dense_oracle, make_system

RESULTS = []

CASE1_SEED = 0
CASE1_CONFIG = ReconstructionConfig(edge="pm", T=5e-3, tau=1.5, max_outer=10)


def report(number, ok, detail):
    line = f"ACCEPTANCE {number:>2}: {'PASS' if ok else 'FAIL'}  {detail}"
    RESULTS.append(line)
    print(line)
    assert ok, line


@pytest.fixture(scope="module")
def desk_inverse():
    return desk_cylinder("inverse")


@pytest.fixture(scope="module")
def case1_run(desk_inverse):
    t0 = time.perf_counter()
    fine = desk_cylinder("fine")
    sim = simulate_dataset(fine, case1_phantom(), seed=CASE1_SEED, gamma=4e-3)
    with threadpool_limits(1):
        result = reconstruct(desk_inverse, sim.V, sim.noise, config=CASE1_CONFIG)
    return {"fine": fine, "sim": sim, "result": result, "runtime": time.perf_counter() - t0}


def test_criterion_01_slab_oracle():
    t0 = time.perf_counter()
    dims = (1.0, 1.0, 1.0)
    mesh = generate_box_mesh(dims, 2, [ElectrodePatch.full_face("x-", dims),
                                       ElectrodePatch.full_face("x+", dims)])
    _, U = CEMSolver(mesh, np.ones(mesh.num_nodes), [0.1, 0.1]).solve([[1.0, -1.0]])
    dt = time.perf_counter() - t0
    err = np.abs(U[0] - [0.6, -0.6]).max()
    report(1, err <= 1e-10 and dt < 1.0, f"slab U = {U[0].tolist()}, |err| = {err:.2e}, {dt:.3f} s")


def test_criterion_02_reciprocity(desk_inverse):
    t0 = time.perf_counter()
    rng = np.random.default_rng(2)
    M = desk_inverse.num_electrodes
    worst = 0.0
    for _ in range(5):
        sigma = rng.uniform(0.2, 5.0, desk_inverse.num_nodes)
        z = rng.uniform(1e-3, 1e-1, M)
        _, U = CEMSolver(desk_inverse, sigma, z).solve(standard_patterns(M))
        R = U[:, 1:] - U[:, :1]
        worst = max(worst, np.abs(R - R.T).max() / np.abs(R).max())
    dt = time.perf_counter() - t0
    report(2, worst <= 1e-9 and dt < 30, f"max relative asymmetry {worst:.2e} over 5 draws, {dt:.1f} s")


def test_criterion_03_jacobian_oracle(desk_inverse):
    t0 = time.perf_counter()
    mesh = desk_inverse
    rng = np.random.default_rng(3)
    M = mesh.num_electrodes
    P = standard_patterns(M)
    sigma = rng.uniform(0.5, 2.0, mesh.num_nodes)
    z = rng.uniform(1e-3, 1e-2, M)
    jac = assemble_jacobian(mesh, sigma, z, P)

    def U(s, zz):
        return CEMSolver(mesh, s, zz).solve(P)[1].reshape(-1)

    worst = {"sigma": 0.0, "z": 0.0}
    for _ in range(10):
        d = rng.standard_normal(mesh.num_nodes)
        h = 1e-5 * np.abs(sigma).max()
        fd = (U(sigma + h * d, z) - U(sigma - h * d, z)) / (2 * h)
        worst["sigma"] = max(worst["sigma"], np.linalg.norm(jac.J1 @ d - fd) / np.linalg.norm(fd))
        d = rng.standard_normal(M)
        h = 1e-5 * np.abs(z).max()
        fd = (U(sigma, z + h * d) - U(sigma, z - h * d)) / (2 * h)
        worst["z"] = max(worst["z"], np.linalg.norm(jac.J2 @ d - fd) / np.linalg.norm(fd))
    dt = time.perf_counter() - t0
    ok = max(worst.values()) <= 1e-4 and dt < 60 and mesh.num_nodes <= 5000
    report(3, ok, f"max rel. error sigma {worst['sigma']:.2e}, z {worst['z']:.2e} "
                  f"({mesh.num_nodes} nodes), {dt:.1f} s")


def test_criterion_04_prior(box4_mesh):
    mesh = box4_mesh
    rng = np.random.default_rng(4)
    sigma = rng.uniform(0.5, 2.0, mesh.num_nodes)

    H = assemble_H(mesh, sigma, EdgeFunction("quadratic"))
    K = mesh.stiffness_matrix().toarray()
    d = mesh.electrode_nodes
    K[d, :] = 0
    K[:, d] = 0
    K[d, d] = 1
    err_a = np.abs(H.matrix.toarray() - K).max()

    err_b = 0.0
    for kind in ("tv", "pm"):
        fn = EdgeFunction(kind, 0.5)
        grad = assemble_H(mesh, sigma, fn).raw @ sigma
        h = 1e-6
        fd = np.array([(penalty(mesh, sigma + h * e, fn) - penalty(mesh, sigma - h * e, fn)) / (2 * h)
                       for e in np.eye(mesh.num_nodes)])
        err_b = max(err_b, np.linalg.norm(grad - fd) / np.linalg.norm(fd))

    err_c = 0.0
    const = np.full(mesh.num_nodes, 1.3)
    for kind in ("tv", "pm", "quadratic"):
        raw = assemble_H(mesh, const, EdgeFunction(kind)).raw
        err_c = max(err_c, np.abs(raw @ const).max() / np.abs(raw).max())
    ok = err_a <= 1e-14 and err_b <= 1e-6 and err_c <= 1e-12
    report(4, ok, f"(a) |H - K| = {err_a:.1e}, (b) gradient rel. err {err_b:.1e}, "
                  f"(c) |H 1| = {err_c:.1e}")


def test_criterion_05_decoupling(small_cylinder):
    rng = np.random.default_rng(5)
    worst = 0.0
    for _ in range(5):
        system, _, _ = make_system(small_cylinder, rng)
        sigma = rng.uniform(0.5, 2.0, small_cylinder.num_nodes)
        z = recover_contact_resistances(system, sigma)
        full = np.linalg.norm(system.B1 @ sigma + system.B2 @ z - system.y_white)
        worst = max(worst, abs(full - system.residual(sigma)))
    report(5, worst <= 1e-8, f"max |full - projected residual| = {worst:.2e} over 5 systems")


def test_criterion_06_krylov_structure(box6_mesh):
    rng = np.random.default_rng(6)
    mesh = box6_mesh
    system, _, _ = make_system(mesh, rng, sigma0=rng.uniform(0.8, 1.2, mesh.num_nodes))
    H = assemble_H(mesh, rng.uniform(0.5, 2.0, mesh.num_nodes), EdgeFunction("pm", 0.5))
    res = priorconditioned_solve(system, H, 1e-300, max_iter=3 * mesh.num_nodes, stagnation_tol=0.0)
    oracle = dense_oracle(system, H)
    err = np.linalg.norm(res.sigma - oracle) / np.linalg.norm(oracle)
    monotone = bool(np.all(np.diff(res.trace) <= 0))
    trace_ok = all(
        np.array_equal(priorconditioned_solve(system, H, 1e-300, max_iter=k, stagnation_tol=0.0)
                       .sigma[H.dirichlet], system.sigma0[H.dirichlet])
        for k in range(1, res.iterations + 1)
    )
    report(6, err <= 1e-8 and monotone and trace_ok,
           f"N = {mesh.num_nodes}, dense-oracle rel. err {err:.1e}, trace nonincreasing {monotone}, "
           f"electrode trace exact {trace_ok}")


def test_criterion_07_case1(case1_run, desk_inverse):
    result, fine = case1_run["result"], case1_run["fine"]
    d = result.diagnostics
    M = desk_inverse.num_electrodes
    bound = 1.5 * np.sqrt(M * (M - 1))
    E = d["E_history"][-1]
    ok_a = d["terminated"] == "discrepancy" and E <= bound and d["outer_iterations"] <= 10

    ph = case1_phantom()
    x = desk_inverse.vertices
    res_mask = ph.inclusions[0].shape.contains(x)
    con_mask = ph.inclusions[1].shape.contains(x)
    bg_mask = ~(res_mask | con_mask)
    s = result.sigma
    m_res, m_con, m_bg = s[res_mask].mean(), s[con_mask].mean(), s[bg_mask].mean()
    ok_b = m_res < 0.8 and m_con > 1.3 and 0.9 <= m_bg <= 1.1
    ok_c = case1_run["runtime"] < 600
    ratio = fine.num_nodes / desk_inverse.num_nodes
    ok = ok_a and ok_b and ok_c and ratio >= 2 and fine.content_hash() != desk_inverse.content_hash()
    report(7, ok, f"(a) E = {E:.2f} <= {bound:.2f} after {d['outer_iterations']} outer steps; "
                  f"(b) means resistive {m_res:.3f}, conductive {m_con:.3f}, background {m_bg:.3f}; "
                  f"(c) {case1_run['runtime']:.1f} s; mesh ratio {ratio:.2f}")


def test_criterion_08_inner_trend(case1_run):
    counts = case1_run["result"].diagnostics["inner_iterations"]
    report(8, len(counts) > 0 and counts[-1] <= counts[0], f"inner iterations per outer step {counts}")


def test_criterion_09_noise_calibration(desk_inverse):
    M = desk_inverse.num_electrodes
    sigma = rasterize_phantom(desk_inverse, case1_phantom())
    _, U = CEMSolver(desk_inverse, sigma, np.full(M, 2e-3)).solve(standard_patterns(M))
    U = U.reshape(-1)
    vals = []
    for seed in range(1000):
        V, noise = add_noise(U, 4e-3, seed)
        vals.append(noise.residual(V, U) ** 2)
    mean = float(np.mean(vals))
    target = M * (M - 1)
    report(9, abs(mean - target) <= 0.05 * target,
           f"mean whitened noise energy {mean:.2f} vs M(M-1) = {target} over 1000 seeds")


def test_criterion_10_determinism(case1_run, desk_inverse):
    sim = case1_run["sim"]
    with threadpool_limits(1):
        again = reconstruct(desk_inverse, sim.V, sim.noise, config=CASE1_CONFIG)
    first = dumps(case1_run["result"].diagnostics)
    same = dumps(again.diagnostics) == first and np.array_equal(again.sigma, case1_run["result"].sigma)
    report(10, same, f"diagnostics JSON bit-identical on rerun ({len(first)} bytes)")


if __name__ == "__main__":
    import sys

    sys.exit(pytest.main([__file__, "-q", "-s"]))
