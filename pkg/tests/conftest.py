import numpy as np
import pytest

from charmode.assembly import assemble_impedance, assemble_material_elements
from charmode.mesh import build_rwg, circumscribing_radius, generate_plate_mesh


class Plate:
    """Small jittered plate with operators at a fixed ka."""

    def __init__(self, nx, ny, ka, rule="alternating", jitter=0.15, seed=3, stored_energy="fd"):
        self.mesh = generate_plate_mesh(1.0, 0.5, nx, ny, rule, jitter=jitter, seed=seed)
        self.basis = build_rwg(self.mesh)
        self.a = circumscribing_radius(self.mesh)
        self.ka = ka
        self.ops = assemble_impedance(self.mesh, self.basis, ka / self.a, stored_energy=stored_energy)
        self.elements = assemble_material_elements(self.mesh, self.basis)


@pytest.fixture(scope="session")
def small_plate():
    return Plate(6, 3, 0.5)


@pytest.fixture(scope="session")
def medium_plate():
    return Plate(10, 6, 0.5)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


_ACCEPTANCE: dict[int, tuple[bool, str]] = {}


@pytest.fixture(scope="session")
def acceptance():
    """Registry of acceptance outcomes, printed at the end of the session."""
    return _ACCEPTANCE


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.write_sep("=", "acceptance criteria")
    for n in sorted(_ACCEPTANCE):
        ok, detail = _ACCEPTANCE[n]
        terminalreporter.write_line(f"criterion {n:2d}: {'PASS' if ok else 'FAIL'}  {detail}")
