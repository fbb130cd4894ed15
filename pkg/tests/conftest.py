import sys
from pathlib import Path

import pytest
from hypothesis import settings

sys.path.insert(0, str(Path(__file__).parent))

from longtmle import CoarsenConfig, coarsen_dataset, read_csv, read_daily_csv  # noqa: E402

FIXTURES = Path(__file__).parent / "fixtures"

settings.register_profile("default", deadline=None, print_blob=True)
settings.load_profile("default")


def load_fixture(name: str):
    """Every shipped fixture as a long-format dataset."""
    if name.startswith("daily"):
        return coarsen_dataset(read_daily_csv(FIXTURES / name), CoarsenConfig(30, 8))
    return read_csv(FIXTURES / name)


FIXTURE_NAMES = sorted(p.name for p in FIXTURES.glob("*.csv"))


@pytest.fixture(params=FIXTURE_NAMES)
def fixture_dataset(request):
    return request.param, load_fixture(request.param)
