import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from gale.synth import CaseRecord, Cylinder, Joukowski, generate_case

settings.register_profile(
    "gale", deadline=None, max_examples=40,
    suppress_health_check=[HealthCheck.too_slow, HealthCheck.function_scoped_fixture])
settings.load_profile("gale")


@pytest.fixture(scope="session")
def cylinder_case():
    return generate_case(CaseRecord(Cylinder(0.5), U_inf=10.0, alpha=0.0, rings=8, sectors=32,
                                    case_id="cyl"))


@pytest.fixture(scope="session")
def small_airfoil():
    """Cambered airfoil on a coarse grid (about 100 nodes)."""
    return generate_case(CaseRecord(Joukowski(0.1, 0.05), U_inf=20.0, alpha=4.0, rings=8,
                                    sectors=16, case_id="small"))[1]


@pytest.fixture(scope="session")
def fine_airfoil():
    return generate_case(CaseRecord(Joukowski(0.1, 0.05), U_inf=10.0, alpha=4.0, rings=48,
                                    sectors=128, case_id="fine"))


ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
