import pytest

from utils import close_run_log, set_debug


@pytest.fixture(autouse=True)
def quiet_run_state():
    yield
    close_run_log()
    set_debug(False)
