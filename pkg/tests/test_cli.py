import json
import subprocess
import sys


from lodbridge.cli import main
from conftest import FIXTURES

PORTAL_DATASET = "http://portal.example.org/dataset/santander-aemet-weather"


def run(capsys, *argv):
    code = main(list(argv))
    out, err = capsys.readouterr()
    return code, out, err


def test_help_and_usage_errors(capsys):
    code, out, _ = run(capsys, "--help")
    assert code == 0 and "scenario" in out and "harvest" in out
    assert run(capsys, "teleport")[0] == 2
    assert run(capsys, "mqa", "score")[0] == 2
    assert run(capsys, "query")[0] == 2


def test_module_entry_point():
    res = subprocess.run([sys.executable, "-m", "lodbridge", "mqa", "--help"], capture_output=True, text=True)
    assert res.returncode == 0 and "score" in res.stdout


def test_mqa_score(capsys, tmp_path):
    code, out, _ = run(capsys, "mqa", "score", str(FIXTURES / "weather_full.ttl"),
                       "--status-map", str(FIXTURES / "url_status.json"), "--figure", str(tmp_path / "dims.png"))
    doc = json.loads(out)
    assert code == 0 and doc["total"] == 405 and doc["rating"] == "excellent"
    assert (tmp_path / "dims.png").stat().st_size > 0
    code, out, _ = run(capsys, "mqa", "score", str(FIXTURES / "weather_full.ttl"), "--table",
                       "--dataset", PORTAL_DATASET)
    assert code == 0 and "rating:" in out
    code, _, err = run(capsys, "mqa", "score", str(FIXTURES / "weather_full.ttl"), "--dataset", "http://nope/")
    assert code == 1 and "not a dcat:Dataset" in err


def test_query_over_files(capsys):
    q = FIXTURES / "consumer_query.rq"
    code, out, _ = run(capsys, "query", "--file", str(q), "--graph", str(FIXTURES / "portal_catalog.ttl"))
    assert code == 0 and len(json.loads(out)["results"]["bindings"]) == 1
    code, out, _ = run(capsys, "query", "SELECT ?s WHERE { ?s ?p ?o } LIMIT 2", "--table",
                       "--graph", str(FIXTURES / "portal_catalog.ttl"))
    assert code == 0 and len(out.splitlines()) == 4
    code, _, err = run(capsys, "query", "SELECT ?s WHERE { ?s ?p ?o OPTIONAL { ?s ?p ?x } }",
                       "--graph", str(FIXTURES / "portal_catalog.ttl"))
    assert code == 1 and "OPTIONAL" in err


def test_harvest_from_file_and_query_store(capsys, tmp_path):
    store = str(tmp_path / "store")
    code, out, _ = run(capsys, "harvest", "add", "--store", store, "--id", "portal",
                       "--endpoint", (FIXTURES / "portal_catalog.ttl").as_uri(), "--format", "turtle")
    assert code == 0 and json.loads(out)["id"] == "portal"
    code, out, _ = run(capsys, "harvest", "run", "--store", store)
    assert code == 0 and json.loads(out)[0]["ok"] is True
    code, out, _ = run(capsys, "query", "--file", str(FIXTURES / "consumer_query.rq"), "--store", store)
    assert code == 0 and len(json.loads(out)["results"]["bindings"]) == 1
    run(capsys, "harvest", "add", "--store", store, "--id", "gone", "--endpoint", (tmp_path / "none.ttl").as_uri(),
        "--format", "turtle")
    code, out, _ = run(capsys, "harvest", "run", "--store", store, "--source", "gone")
    assert code == 1 and json.loads(out)[0]["ok"] is False


def test_flow_run_and_history(capsys, tmp_path):
    (tmp_path / "flow.yaml").write_text(
        "name: empty\nprocessors:\n  - {name: r, kind: route, params: {rules: []}}\n")
    code, out, _ = run(capsys, "flow", "run", "-c", str(tmp_path / "flow.yaml"))
    assert code == 0 and json.loads(out)["conserved"] is True
    (tmp_path / "bad.yaml").write_text("processors: []\nconnections: [{from: a, to: b}]\n")
    assert run(capsys, "flow", "run", "-c", str(tmp_path / "bad.yaml"))[0] == 1

    from lodbridge.historian import Historian
    h = Historian(tmp_path / "hist")
    h.on_notification({"data": [{"id": "urn:s:1", "type": "S", "n": {"type": "Property", "value": 1,
                                                                     "observedAt": "2021-11-10T15:00:00Z"}}]})
    code, out, _ = run(capsys, "hist", "query", "--dir", str(tmp_path / "hist"), "--entity", "urn:s:1")
    assert code == 0 and json.loads(out)[0]["value"] == 1
    code, out, _ = run(capsys, "hist", "export", "--dir", str(tmp_path / "hist"), "--format", "jsonl")
    assert code == 0 and json.loads(out)["attrName"] == "n"
    code, _, err = run(capsys, "hist", "export", "--dir", str(tmp_path / "hist"), "-o", str(tmp_path / "h.csv"))
    assert code == 0 and (tmp_path / "h.csv").read_text().startswith("seq,")


def test_global_config_supplies_defaults(capsys, tmp_path):
    cfg = tmp_path / "cli.yaml"
    cfg.write_text(f"mqa score: {{status-map: {FIXTURES / 'url_status.json'}}}\n")
    code, out, _ = run(capsys, "--config", str(cfg), "mqa", "score", str(FIXTURES / "weather_full.ttl"))
    assert code == 0 and json.loads(out)["total"] == 405
    # without the status map the URL checks fail
    code, out, _ = run(capsys, "mqa", "score", str(FIXTURES / "weather_full.ttl"))
    assert json.loads(out)["total"] < 405
    cfg.write_text("mqa score: {volume: 11}\n")
    assert run(capsys, "--config", str(cfg), "mqa", "score", "x.ttl")[0] == 2
    cfg.write_text("teleport: {}\n")
    assert run(capsys, "--config", str(cfg), "mqa", "score", "x.ttl")[0] == 2


def test_scenario_refuses_a_used_workdir(capsys, tmp_path):
    (tmp_path / "leftover").write_text("x")
    code, _, err = run(capsys, "scenario", "run", "-w", str(tmp_path))
    assert code == 1 and "not empty" in err
