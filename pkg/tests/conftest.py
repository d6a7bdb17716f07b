import numpy as np
import pytest
from hypothesis import HealthCheck, settings
from hypothesis import strategies as st

from sbcert.polyalg import Polynomial

settings.register_profile("default", max_examples=40, deadline=None, suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


def random_polynomial(rng: np.random.Generator, variables, degree: int, terms: int) -> Polynomial:
    exps = []
    for _ in range(terms):
        d = int(rng.integers(0, degree + 1))
        e = np.zeros(len(variables), dtype=np.int64)
        for _ in range(d):
            e[rng.integers(0, len(variables))] += 1
        exps.append(e)
    return Polynomial(variables, np.array(exps), rng.uniform(-1.0, 1.0, terms))


@st.composite
def polynomials(draw, variables=("x1", "x2"), max_degree=4, max_terms=6):
    seed = draw(st.integers(0, 2**32 - 1))
    terms = draw(st.integers(1, max_terms))
    return random_polynomial(np.random.default_rng(seed), variables, max_degree, terms)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


ACCEPTANCE = pytest.StashKey[dict]()


@pytest.fixture
def criterion(request):
    """Record one acceptance criterion's outcome and fail the test if it did not hold."""
    def record(number: int, title: str, passed: bool, detail: str):
        request.config.stash.setdefault(ACCEPTANCE, {})[number] = (title, passed, detail)
        assert passed, detail

    return record


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    results = config.stash.get(ACCEPTANCE, {})
    if not results:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(results):
        title, passed, detail = results[number]
        terminalreporter.write_line(f"criterion {number} {'PASS' if passed else 'FAIL'}: {title} ({detail})")
