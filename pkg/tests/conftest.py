import json

import pytest

from btabl.synthetic import write_planted_directory


@pytest.fixture(scope="session")
def planted_dir(tmp_path_factory):
    root = tmp_path_factory.mktemp("planted")
    return write_planted_directory(root / "data", n_stocks=2, n_days=4, events_per_day=300, seed=5)


@pytest.fixture
def make_config(tmp_path, planted_dir):
    def make(**overrides):
        cfg = {"data_dir": str(planted_dir), "test_days": 1, "epochs": 3, "batch_size": 64,
               "checkpoint_every": 2, "ns_val": 4, "ns_test": 8, "seed": 11}
        cfg.update(overrides)
        path = tmp_path / f"cfg_{len(list(tmp_path.glob('cfg_*')))}.json"
        path.write_text(json.dumps(cfg))
        return path
    return make


_CRITERIA = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(number, title): acceptance criterion checked by the test")


def pytest_runtest_makereport(item, call):
    marker = item.get_closest_marker("criterion")
    if marker is None or call.when not in ("setup", "call"):
        return
    number, title = marker.args
    detail = "; ".join(f"{k}={v}" for k, v in item.user_properties)
    if call.when == "setup" and call.excinfo is None:
        return
    if call.excinfo is None:
        outcome = "PASS"
    elif call.excinfo.errisinstance(pytest.skip.Exception):
        outcome, detail = "SKIP", str(call.excinfo.value)
    else:
        outcome = "FAIL"
    _CRITERIA[number] = (title, outcome, detail)


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_CRITERIA):
        title, outcome, detail = _CRITERIA[number]
        terminalreporter.write_line(f"criterion {number:>2} {outcome:4}  {title}" + (f"  [{detail}]" if detail else ""))
