import json

import pytest

from cmco import cli

ACCEPTANCE_RESULTS = []


def _tiny_config(tmp_path, **over):
    """A pipeline config small enough to run all stages in about a second."""
    cfg = {
        "preset": "antiderivative",
        "seed": 3,
        "task": {"n_samples": 80, "steps": 12, "points": 20},
        "split": [0.5, 0.3, 0.2],
        "branch": {"hidden": 8, "layers": 2},
        "trunk": {"widths": [1, 8, 8]},
        "train": {"epochs": 3, "batch_size": 10},
        "uq": {"n_c": 4},
        "paths": {"data": str(tmp_path / "data"), "ckpt": str(tmp_path / "ckpt"),
                  "calib": str(tmp_path / "calib"), "out": str(tmp_path / "out")},
    }
    for k, v in over.items():
        cfg[k] = {**cfg[k], **v} if isinstance(v, dict) and isinstance(cfg.get(k), dict) else v
    path = tmp_path / "config.json"
    path.write_text(json.dumps(cfg))
    return path


@pytest.fixture
def tiny_config(tmp_path):
    return lambda **over: _tiny_config(tmp_path, **over)


@pytest.fixture
def run_cli(capsys):
    def run(*argv):
        code = cli.main([str(a) for a in argv])
        out = capsys.readouterr()
        return code, out.out, out.err
    return run


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    marker = item.get_closest_marker("acceptance")
    if marker is None:
        return
    if report.when == "call" or (report.when == "setup" and not report.passed):
        status = "PASS" if report.passed else ("SKIP" if report.skipped else "FAIL")
        ACCEPTANCE_RESULTS.append(f"{status}  {marker.args[0]}")


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for line in ACCEPTANCE_RESULTS:
        terminalreporter.write_line(line)
