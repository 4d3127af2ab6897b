import numpy as np
import pytest
from hypothesis import HealthCheck, settings

settings.register_profile("default", max_examples=60, deadline=None,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def pytest_terminal_summary(terminalreporter):
    """Print one line per acceptance criterion when the acceptance module ran."""
    import sys

    mod = next((m for name, m in sys.modules.items() if name.endswith("test_acceptance")), None)
    results = getattr(mod, "RESULTS", None)
    if not results:
        return
    terminalreporter.section("acceptance criteria")
    for crit in sorted(results):
        parts = results[crit]
        status = "SKIP" if all(p[0] is None for p in parts) else (
            "PASS" if all(p[0] is not False for p in parts) else "FAIL")
        detail = "; ".join(p[1] for p in parts)
        terminalreporter.write_line(f"criterion {crit:>2}: {status}  {detail}")
