import contextlib

import numpy as np
import pytest

from utils import ui_blocks
from utils.errors import NotCritical


class Stopped(Exception):
    pass


class RecordingStreamlit:
    """Only what ``guarded`` touches."""

    def __init__(self):
        self.errors = []
        self.shown = []

    def spinner(self, text):
        return contextlib.nullcontext()

    def error(self, message):
        self.errors.append(message)

    def exception(self, err):
        self.shown.append(err)

    def stop(self):
        raise Stopped()


@pytest.fixture
def fake_st(monkeypatch):
    fake = RecordingStreamlit()
    monkeypatch.setattr(ui_blocks, "st", fake)
    return fake


def test_guarded_returns_result(fake_st):
    assert ui_blocks.guarded("Sumando", np.add, 2, 3) == 5
    assert fake_st.errors == []


@pytest.mark.parametrize(
    "error",
    [NotCritical("Environment is not critical", k_prime0=0.1), ValueError("bad grid"),
     RuntimeError("no convergence"), FloatingPointError("overflow")],
)
def test_guarded_reports_and_stops(fake_st, error):
    def failing():
        raise error

    with pytest.raises(Stopped):
        ui_blocks.guarded("Fallando", failing)
    assert fake_st.errors == [f"❌ {type(error).__name__}: {error}"]
    assert fake_st.shown == [error]
