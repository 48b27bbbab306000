import os
import sys

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

sys.path.insert(0, os.path.dirname(__file__))

from photonstat.stream import PhotonStream, StreamHeader  # noqa: E402

settings.register_profile(
    "default",
    deadline=None,
    max_examples=50,
    suppress_health_check=[HealthCheck.too_slow, HealthCheck.data_too_large],
)
settings.load_profile("default")

SYNC = 2.5e6
RES = 126e-12

ACCEPTANCE_LINES = []


def make_header(duration=1.0, macro_res=None, sync_rate=SYNC, res=RES, **kw):
    return StreamHeader(sync_rate, res, macro_res or 1.0 / sync_rate, duration, **kw)


def stream_from_times(channels, times, duration, macro_res=1e-9, res=1e-12, sync_rate=1e6):
    """Build a stream from absolute times using a fine macrotime grid."""
    times = np.asarray(times, dtype=float)
    channels = np.asarray(channels, dtype=np.uint8)
    macro = np.round(times / macro_res).astype(np.uint64)
    order = np.lexsort((channels, macro))
    h = StreamHeader(sync_rate, res, macro_res, duration)
    return PhotonStream(h, channels[order], macro[order], np.zeros(times.size, np.uint16))


def record_acceptance(line):
    ACCEPTANCE_LINES.append(line)
    print(line)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


@pytest.fixture
def header():
    return make_header()
