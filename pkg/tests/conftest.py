import sys
from datetime import datetime, timedelta, timezone
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

from mmadopt.data import Channel, EventRecord  # noqa: E402
from mmadopt.synth import PopulationConfig, generate  # noqa: E402

# 2016-01-04 is a Monday
MONDAY = datetime(2016, 1, 4, tzinfo=timezone.utc)


def ev(caller, recipient, day, hour=10, channel=Channel.CALL, dur=60, cloc="L0", rloc="L0"):
    """Event ``day`` days after Monday 2016-01-04."""
    ts = MONDAY + timedelta(days=day, hours=hour)
    if channel is Channel.SMS:
        dur = 0
    return EventRecord(caller, recipient, ts, channel, dur, cloc, rloc)


@pytest.fixture(scope="session")
def small_population():
    # 100 subscribers, ~5,200 events
    return generate(PopulationConfig(n_subscribers=100, seed=11, window_days=16))
