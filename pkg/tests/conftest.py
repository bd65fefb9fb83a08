import numpy as np
import pytest

from eit3d.mesh import ElectrodePatch, generate_box_mesh, generate_cylinder_mesh


@pytest.fixture(scope="session")
def slab_mesh():
    """Unit cube with the two x-faces as electrodes."""
    dims = (1.0, 1.0, 1.0)
    return generate_box_mesh(dims, 2, [ElectrodePatch.full_face("x-", dims),
                                       ElectrodePatch.full_face("x+", dims)])


@pytest.fixture(scope="session")
def box4_mesh():
    """Small box (48 nodes) with four side electrodes."""
    patches = [
        ElectrodePatch("x-", (0.2, 0.2), (0.8, 0.8)),
        ElectrodePatch("x+", (0.2, 0.2), (0.8, 0.8)),
        ElectrodePatch("y-", (0.2, 0.2), (0.8, 0.8)),
        ElectrodePatch("y+", (0.2, 0.2), (0.8, 0.8)),
    ]
    return generate_box_mesh((1.0, 1.0, 1.0), (3, 3, 2), patches)


@pytest.fixture(scope="session")
def small_cylinder():
    """Coarse cylinder with eight electrodes in one ring."""
    return generate_cylinder_mesh(1.0, 1.0, (32, 3, 4), 8, (0.4, 0.3))


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(scope="session")
def box6_mesh():
    """48-node box with one single-cell electrode per face (24 free nodes)."""
    third = 1.0 / 3.0
    patches = [
        ElectrodePatch("x-", (third, 0.0), (2 * third, 0.5)),
        ElectrodePatch("x+", (third, 0.5), (2 * third, 1.0)),
        ElectrodePatch("y-", (third, 0.0), (2 * third, 0.5)),
        ElectrodePatch("y+", (third, 0.5), (2 * third, 1.0)),
        ElectrodePatch("z-", (third, third), (2 * third, 2 * third)),
        ElectrodePatch("z+", (0.0, 0.0), (third, third)),
    ]
    return generate_box_mesh((1.0, 1.0, 1.0), (3, 3, 2), patches)


def pytest_terminal_summary(terminalreporter):
    try:
        from test_acceptance import RESULTS
    except ImportError:
        return
    if RESULTS:
        terminalreporter.section("acceptance criteria")
        for line in RESULTS:
            terminalreporter.write_line(line)
