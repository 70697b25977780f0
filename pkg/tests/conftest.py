import os
from pathlib import Path

import numpy as np
import pytest

from cprec.dataset import SplitSpec, split, synth_generate

TOY_CSV = """userid,itemid,rating,Time,Location,Companion
1,10,4,Weekday,Home,Alone
1,11,5,Weekend,Cinema,Partner
2,10,3,Weekday,Home,Family
2,12,2,Weekday,Cinema,Alone
3,11,4,Weekend,Home,Partner
3,12,5,Weekend,Cinema,Family
3,13,1,Weekday,Home,Alone
4,10,2,Weekend,Home,Partner
4,13,3,Weekday,Cinema,Family
1,10,5,Weekend,Home,Alone
"""


@pytest.fixture
def toy_csv(tmp_path) -> Path:
    path = tmp_path / "toy.csv"
    path.write_text(TOY_CSV, encoding="utf-8")
    return path


@pytest.fixture(scope="session")
def small_synth():
    data, planted = synth_generate(20, 15, 2, 180, seed=3, noise=0.2, bias_scale=0.3, context_scale=0.4)
    return data, planted


@pytest.fixture(scope="session")
def small_splits(small_synth):
    data, _ = small_synth
    return split(data, SplitSpec(0.7, 0.15, 0.15, seed=5))


@pytest.fixture(scope="session")
def real_data_dir():
    d = os.environ.get("CPREC_DATA_DIR")
    if not d or not Path(d).is_dir():
        pytest.skip("real datasets not available (set CPREC_DATA_DIR)")
    return Path(d)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


# -- acceptance summary -----------------------------------------------------

_ACCEPTANCE: list[tuple[str, str, str]] = []


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(label): acceptance criterion this test checks")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    marker = item.get_closest_marker("criterion")
    if marker is None:
        return
    if rep.when == "call" or (rep.when == "setup" and rep.outcome != "passed"):
        detail = dict(item.user_properties).get("detail", "")
        status = {"passed": "PASS", "failed": "FAIL", "skipped": "SKIP"}[rep.outcome]
        if rep.skipped and not detail and isinstance(rep.longrepr, tuple):
            detail = rep.longrepr[2]
        label = str(marker.args[0])
        if hasattr(item, "callspec"):
            label += f" [{item.callspec.id}]"
        _ACCEPTANCE.append((label, status, detail))


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for label, status, detail in _ACCEPTANCE:
        terminalreporter.write_line(f"criterion {label}: {status}  {detail}".rstrip())
