import math
import os
import sys

import pytest
from hypothesis import strategies as st

sys.path.insert(0, os.path.dirname(__file__))

from monouda.boxes3d import Box3D  # noqa: E402


@st.composite
def boxes(draw, spread=6.0):
    return Box3D(
        draw(st.floats(-spread, spread)), draw(st.floats(-1.0, 1.0)), draw(st.floats(5.0, 5.0 + 2 * spread)),
        draw(st.floats(0.5, 5.0)), draw(st.floats(0.5, 3.0)), draw(st.floats(0.5, 2.5)),
        draw(st.floats(-math.pi, math.pi, exclude_max=True)),
    )


@pytest.fixture
def rng():
    import numpy as np
    return np.random.default_rng(1234)


def pytest_terminal_summary(terminalreporter):
    mod = sys.modules.get("test_acceptance")
    verdicts = getattr(mod, "VERDICTS", None)
    if not verdicts:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(verdicts):
        terminalreporter.write_line(verdicts[n])
