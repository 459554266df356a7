import pytest

from ramify.builtins import builtin_system, sierpinski_system
from ramify.cell_model import expand
from ramify.julia import extract_cells, julia_builtin, sample_julia

BASILICA_SAMPLES = 100_000
BUBBLEBATH_SAMPLES = 100_000


@pytest.fixture(scope="session")
def sierpinski8():
    return expand(sierpinski_system(), 8)


@pytest.fixture(scope="session")
def basilica_sample():
    return sample_julia(julia_builtin("basilica").f, BASILICA_SAMPLES, seed=0)


@pytest.fixture(scope="session")
def basilica_dec8(basilica_sample):
    inst = julia_builtin("basilica")
    return extract_cells(inst.f, inst.S, 8, basilica_sample, names=inst.names)


@pytest.fixture(scope="session")
def bubblebath_sample():
    return sample_julia(julia_builtin("bubblebath").f, BUBBLEBATH_SAMPLES, seed=0)


@pytest.fixture(scope="session")
def bubblebath_dec6(bubblebath_sample):
    inst = julia_builtin("bubblebath")
    return extract_cells(inst.f, inst.S, 6, bubblebath_sample, names=inst.names)


@pytest.fixture(scope="session")
def vicsek_system():
    def make(params):
        return builtin_system("vicsek", params)

    return make


# -- acceptance summary

ACCEPTANCE = pytest.StashKey[list]()


@pytest.fixture
def record(request):
    """Record one PASS/FAIL line for an acceptance criterion."""
    lines = request.config.stash.setdefault(ACCEPTANCE, [])

    def write(number, ok, detail):
        line = f"criterion {number:>2}: {'PASS' if ok else 'FAIL'}  {detail}"
        lines.append((number, line))
        print(line)

    return write


def pytest_terminal_summary(terminalreporter, config):
    lines = config.stash.get(ACCEPTANCE, [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for _, line in sorted(lines):
            terminalreporter.write_line(line)
