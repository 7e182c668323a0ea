import pytest

from raremc import TargetSet, TiltFamily, build_tandem, build_two_state


@pytest.fixture(scope="session")
def two_state():
    chain, g = build_two_state(0.5)
    return chain, g, TargetSet.two_sided(1 / 6, 0.5)


@pytest.fixture(scope="session")
def two_state_fam(two_state):
    chain, g, _ = two_state
    return TiltFamily(chain, g)


@pytest.fixture(scope="session")
def small_tandem():
    # small buffers keep brute-force path enumeration cheap
    return build_tandem(0.2, 0.4, 0.4, 2, 2, 0.3, 0.4, convention="jump")


ACCEPTANCE = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE:
            terminalreporter.write_line(line)
