import functools

import pytest

from partatlas import shapes
from partatlas.pipeline import unwrap
from partatlas.search import SearchConfig

# criterion number -> (passed, detail); filled by test_acceptance
ACCEPTANCE = {}


@functools.lru_cache(maxsize=None)
def suite_mesh(name):
    return shapes.SUITE[name]()


@functools.lru_cache(maxsize=None)
def suite_run(name, **overrides):
    return unwrap(suite_mesh(name), SearchConfig(**overrides))


def cached_run(name, n_atlases=1, **overrides):
    if n_atlases == 1:
        return suite_run(name, **overrides)
    return unwrap(suite_mesh(name), SearchConfig(**overrides), n_atlases=n_atlases)


@pytest.fixture(scope="session")
def suite_names():
    return list(shapes.SUITE)


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE):
        ok, detail = ACCEPTANCE[n]
        terminalreporter.write_line(f"criterion {n:2d}: {'PASS' if ok else 'FAIL'}  {detail}")
