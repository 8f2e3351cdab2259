import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

from controlroom import cli
from controlroom.config import load_config


@pytest.fixture(scope="session")
def base_config():
    return load_config(None)


@pytest.fixture(scope="session")
def small_cohort(tmp_path_factory, base_config):
    """Twelve s3 episodes, half compliant half passive, with labels."""
    out = tmp_path_factory.mktemp("cohort")
    rc = cli.main([
        "gen-cohort", "--n", "12", "--scenario", "s3",
        "--seed", "3", "--out", str(out),
    ])
    assert rc == 0
    return out


@pytest.fixture(scope="session")
def small_cohort_logs(small_cohort):
    return cli.load_cohort(str(small_cohort))
