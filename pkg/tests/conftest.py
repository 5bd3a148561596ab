import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from mlfdm.synthetic import simulate_regions, simulate_two_sex

settings.register_profile("default", deadline=None, max_examples=40,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


@pytest.fixture(scope="session")
def two_sex():
    return simulate_two_sex(n=40, seed=3)


@pytest.fixture(scope="session")
def regions():
    return simulate_regions(n=30, seed=5)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def hmd_text(years, ages, values, open_last=True):
    """Render an HMD-style table; ``values`` is n x p x 3 (Female, Male, Total)."""
    lines = ["Synthetic country, Death rates (period 1x1)", "",
             "  Year      Age      Female      Male       Total"]
    for i, y in enumerate(years):
        for j, a in enumerate(ages):
            tok = f"{a}+" if open_last and j == len(ages) - 1 else str(a)
            cells = ["." if np.isnan(v) else f"{v:.6f}" for v in values[i, j]]
            lines.append(f"  {y}  {tok:>6}  " + "  ".join(cells))
    return "\n".join(lines) + "\n"


# criterion -> list of (part, ok, detail), filled by test_acceptance
ACCEPTANCE: dict = {}


def record(criterion: int, part: str, ok: bool, detail: str) -> None:
    ACCEPTANCE.setdefault(criterion, []).append((part, bool(ok), detail))
    print(f"criterion {criterion} [{part}]: {'PASS' if ok else 'FAIL'} {detail}")


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for c in sorted(ACCEPTANCE):
        parts = ACCEPTANCE[c]
        status = "PASS" if all(ok for _, ok, _ in parts) else "FAIL"
        detail = "; ".join(f"{p}: {d}{'' if ok else ' (FAIL)'}" for p, ok, d in parts)
        terminalreporter.write_line(f"Criterion {c}: {status} - {detail}")
