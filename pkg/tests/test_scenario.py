import json
import shutil

import pytest

from lodbridge.scenario import ScenarioError, group_by_mean_oracle, run_scenario, verify_fixtures
from lodbridge.historian import HistoryRecord, render
from conftest import FIXTURES


def test_bundled_fixtures_match_their_checksums():
    pinned = verify_fixtures(FIXTURES)
    assert "bike_feed.csv" in pinned and all(len(h) == 64 for h in pinned.values())


def test_tampered_fixture_fails_before_anything_runs(tmp_path):
    fixtures = tmp_path / "fixtures"
    shutil.copytree(FIXTURES, fixtures)
    with (fixtures / "aemet.json").open("a") as fh:
        fh.write(" ")
    with pytest.raises(ScenarioError):
        verify_fixtures(fixtures)
    report = run_scenario(tmp_path / "work", fixtures_dir=fixtures)
    assert not report.passed and report.failed_step == "load-fixtures"
    assert {s.status for s in report.steps[1:]} == {"skipped"}
    doc = json.loads((tmp_path / "work" / "scenario-report.json").read_text())
    assert doc["status"] == "fail" and doc["steps"][0]["error"]


def test_empty_fixture_directory(tmp_path):
    (tmp_path / "fixtures").mkdir()
    report = run_scenario(tmp_path / "work", fixtures_dir=tmp_path / "fixtures")
    assert report.failed_step == "load-fixtures"


def test_non_empty_workdir_is_refused(tmp_path):
    (tmp_path / "keep.txt").write_text("mine")
    with pytest.raises(ScenarioError):
        run_scenario(tmp_path)
    assert [p.name for p in tmp_path.iterdir()] == ["keep.txt"]


def test_oracle_on_a_small_feed():
    rows = [("s1", "2021-11-03T08:10:00.00Z", 4), ("s1", "2021-11-10T08:50:00.00Z", 6),
            ("s1", "2021-11-10T09:00:00.00Z", 30), ("s2", "2021-11-10T08:00:00.00Z", 99)]
    records = [HistoryRecord(i, s, "BikeHireDockingStation", "availableBikeNumber", v, t, t)
               for i, (s, t, v) in enumerate(rows, 1)]
    csv_text = render(records, "csv")
    assert group_by_mean_oracle(csv_text, "s1", "2021-11-17T08:30:00Z") == 5
    # no row in the cell: the station mean
    assert group_by_mean_oracle(csv_text, "s1", "2021-11-17T20:00:00Z") == pytest.approx(40 / 3)
    with pytest.raises(ScenarioError):
        group_by_mean_oracle(csv_text, "s3", "2021-11-17T08:30:00Z")
