import csv
import os
from pathlib import Path

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

settings.register_profile(
    "default", max_examples=40, deadline=None, suppress_health_check=[HealthCheck.too_slow]
)
settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "default"))

WINE_COLUMNS = [
    "fixed acidity", "volatile acidity", "citric acid", "residual sugar", "chlorides",
    "free sulfur dioxide", "total sulfur dioxide", "density", "pH", "sulphates", "alcohol", "quality",
]
FOREST_COLUMNS = ["X", "Y", "month", "day", "FFMC", "DMC", "DC", "ISI", "temp", "RH", "wind", "rain", "area"]
BIKE_COLUMNS = [
    "instant", "dteday", "season", "yr", "mnth", "hr", "holiday", "weekday", "workingday",
    "weathersit", "temp", "atemp", "hum", "windspeed", "casual", "registered", "cnt",
]
MONTHS = ["jan", "feb", "mar", "apr", "may", "jun", "jul", "aug", "sep", "oct", "nov", "dec"]


def _write(path: Path, header, rows, sep=",", quote_header=False):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        if quote_header:
            fh.write(sep.join(f'"{h}"' for h in header) + "\n")
            w = csv.writer(fh, delimiter=sep, lineterminator="\n")
        else:
            w = csv.writer(fh, delimiter=sep, lineterminator="\n")
            w.writerow(header)
        w.writerows(rows)


@pytest.fixture(scope="session")
def fake_uci_dir(tmp_path_factory):
    """Small synthetic files with the real UCI column layouts."""
    rng = np.random.default_rng(0)
    root = tmp_path_factory.mktemp("uci")

    rows = []
    for i in range(120):
        month = MONTHS[i % 12]
        summer = month in ("jun", "jul", "aug")
        ffmc, dmc, dc, isi = rng.uniform(80, 95), rng.uniform(5, 200), rng.uniform(50, 800), rng.uniform(1, 20)
        temp = rng.uniform(20, 30) if summer else rng.uniform(2, 20)
        rh, wind, rain = rng.uniform(20, 90), rng.uniform(0.5, 9), rng.choice([0.0, 0.0, 0.2])
        area = max(0.0, 0.1 * temp + 0.01 * dmc + rng.normal(0, 1))
        rows.append([1, 2, month, "mon", ffmc, dmc, dc, isi, temp, rh, wind, rain, round(area, 2)])
    rows[5][8] = ""  # empty temperature cell, row must be dropped
    _write(root / "forestfires.csv", FOREST_COLUMNS, rows)

    rows = []
    for i in range(200):
        season = 1 + i % 4
        working = int(i % 7 < 5)
        hr = i % 24
        temp, atemp, hum, ws = rng.uniform(0, 1), rng.uniform(0, 1), rng.uniform(0, 1), rng.uniform(0, 0.6)
        cnt = int(abs(50 + 10 * hr + 200 * temp + rng.normal(0, 20)))
        rows.append([i + 1, "2011-01-01", season, 0, 1, hr, 0, i % 7, working, 1, temp, atemp, hum, ws, 0, cnt, cnt])
    _write(root / "hour.csv", BIKE_COLUMNS, rows)

    for name, n, shift in (("winequality-white.csv", 80, 0.0), ("winequality-red.csv", 60, 1.0)):
        x = rng.uniform(0.5, 2.0, size=(n, 11)) + shift
        q = np.clip(np.round(5 + x[:, 10] - x[:, 1] + rng.normal(0, 0.5, n)), 3, 9).astype(int)
        _write(root / name, WINE_COLUMNS, [list(np.round(r, 4)) + [int(v)] for r, v in zip(x, q)], sep=";", quote_header=True)
    return root


# --------------------------------------------------------------------------- acceptance log


def pytest_configure(config):
    config.acceptance_lines = {}


@pytest.fixture
def acceptance(request):
    """``acceptance(n, ok, detail)`` records one verdict line and asserts it."""

    def record(number: int, ok: bool, detail: str = "") -> None:
        line = f"criterion {number}: {'PASS' if ok else 'FAIL'}" + (f"  ({detail})" if detail else "")
        request.config.acceptance_lines[number] = line
        print(line)
        assert ok, line

    return record


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = getattr(config, "acceptance_lines", {})
    if lines:
        terminalreporter.section("acceptance criteria")
        for n in sorted(lines):
            terminalreporter.write_line(lines[n])
