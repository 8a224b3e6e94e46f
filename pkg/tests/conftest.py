import datetime as dt
import os

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from mortfrac.data import WeeklyMortalityRecord, serialize_stmf
from mortfrac.model import ModelParams, simulate_bivariate

settings.register_profile("default", max_examples=40, deadline=None, suppress_health_check=[HealthCheck.too_slow])
settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "default"))

SEASONAL_LEVEL = 0.0088


def iso_weeks(first_year: int, last_year: int):
    """All ISO (year, week) pairs in the given years, in order."""
    out = []
    for year in range(first_year, last_year + 1):
        n = dt.date(year, 12, 28).isocalendar()[1]
        out.extend((year, w) for w in range(1, n + 1))
    return out


def synthetic_inputs(tmp_path, first_year=2015, last_year=2024, seed=3, params=None):
    """Write an STMF file and a FRED file driven by a simulated model path."""
    weeks = iso_weeks(first_year, last_year)
    p = params or ModelParams()
    paths = simulate_bivariate(p, None, 1, len(weeks) - 1, (len(weeks) - 1) / 52, seed)
    season = SEASONAL_LEVEL * (1 + 0.08 * np.cos(2 * np.pi * (np.array([w for _, w in weeks]) - 1) / 52))
    records = [
        WeeklyMortalityRecord(y, w, 1000.0 + i, float(season[i] + paths.mortality_paths[0, i]), "b", "USA")
        for i, (y, w) in enumerate(weeks)
    ]
    stmf = tmp_path / "stmf.csv"
    stmf.write_text("United States of America,,,\n" + serialize_stmf(records), encoding="utf-8")
    lines = ["DATE,WTB3MS"]
    for (y, w), r in zip(weeks, paths.rate_paths[0]):
        lines.append(f"{dt.date.fromisocalendar(y, w, 5).isoformat()},{r:.4f}")
    fred = tmp_path / "fred.csv"
    fred.write_text("\n".join(lines) + "\n", encoding="utf-8")
    return stmf, fred, records


@pytest.fixture
def fitted():
    return ModelParams()


@pytest.fixture
def data_files(tmp_path):
    stmf, fred, _ = synthetic_inputs(tmp_path)
    return stmf, fred
