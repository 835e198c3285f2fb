import numpy as np
import pytest

from stokespec.config import config_from_dict

# filled by test_acceptance; echoed at the end of the session
ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def small_config(tmp_path):
    """Factory for fast scenario configs writing under ``tmp_path``."""

    def make(kind, scans=8, **sections):
        data = {"kind": kind, "seed": 11, "output_dir": str(tmp_path / kind), "scan": {"scan_count": scans}}
        if kind == "oracle_suite":
            data["oracle"] = {"rotation_count": 2000, "samples": 256, "rho_sweep": [0.01, 0.1],
                              "epsilon_sweep": [0.0, 0.5]}
        for k, v in sections.items():
            data.setdefault(k, {}).update(v)
        return config_from_dict(data)

    return make
