import pytest

from eqcsc import kernels


@pytest.fixture(scope="session", autouse=True)
def compiled_kernels():
    """Compile every jitted kernel once so no test pays JIT cost mid-timing."""
    kernels.warmup()
