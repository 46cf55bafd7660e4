import copy
import json

import pytest
from hypothesis import given, strategies as st

from lodbridge.dataflow import TransformSpec, apply_transform, load_spec
from lodbridge.dataflow.transform import get_path, render_template, set_path
from lodbridge.entity import from_normalized, to_key_values
from lodbridge.errors import BadRequest, TemplateError, UnresolvedPath

from conftest import FIXTURES

AEMET = json.loads((FIXTURES / "aemet.json").read_text("utf-8"))


def spec(rules, on_missing="fail-record"):
    return TransformSpec.from_dict({"rules": rules, "onMissing": on_missing})


def test_weather_golden_field_by_field():
    out = apply_transform(AEMET, load_spec())
    golden = json.loads((FIXTURES / "weather_observed.json").read_text("utf-8"))
    assert out == golden
    assert list(out) == ["id", "type", "address", "dateObserved", "precipitation", "temperature", "@context"]


def test_titlecase_in_templates_and_sources():
    out = apply_transform({"ubi": "SAN VICENTE"}, spec([
        {"target": "id", "template": "urn:W:${ubi}", "stringOp": "titlecase"},
        {"target": "upper", "source": "ubi", "stringOp": "lowercase"}]))
    assert out == {"id": "urn:W:San Vicente", "upper": "san vicente"}


@pytest.mark.parametrize("raw, op, expected", [
    ("2021-11-10T15:00:00", {"parseFormat": "%Y-%m-%dT%H:%M:%S", "emitUtcFraction2": True},
     "2021-11-10T15:00:00.00Z"),
    ("2021-11-10T16:00:00+01:00", {"emitUtcFraction2": True}, "2021-11-10T15:00:00.00Z"),
    ("2021-11-10T15:00:00.129Z", {"emitUtcFraction2": True}, "2021-11-10T15:00:00.12Z"),
])
def test_time_ops_emit_two_digit_utc_fractions(raw, op, expected):
    assert apply_transform({"t": raw}, spec([{"target": "t", "source": "t", "timeOp": op}]))["t"] == expected


def test_empty_rule_set_yields_empty_document():
    assert apply_transform({"anything": 1}, spec([])) == {}


def test_unresolved_paths_fail_or_skip():
    rules = [{"target": "a", "source": "present"}, {"target": "b", "source": "missing.deep"},
             {"target": "c", "template": "x-${nowhere}"}]
    with pytest.raises(UnresolvedPath):
        apply_transform({"present": 1}, spec(rules))
    assert apply_transform({"present": 1}, spec(rules, "skip-rule")) == {"a": 1}
    with pytest.raises(TemplateError):
        apply_transform({"present": 1}, spec(rules[2:]))
    with pytest.raises(UnresolvedPath):
        apply_transform({"t": "not a time"}, spec([{"target": "t", "source": "t",
                                                    "timeOp": {"parseFormat": "%Y"}}]))


@pytest.mark.parametrize("bad", [
    {"rules": [{"target": "a"}]},
    {"rules": [{"target": "a", "source": "x", "constant": 1}]},
    {"rules": [{"target": "a", "source": "x"}, {"target": "a", "constant": 2}]},
    {"rules": [{"target": "a", "source": "x", "stringOp": "reverse"}]},
    {"rules": [], "onMissing": "ignore"},
])
def test_invalid_specs(bad):
    with pytest.raises(BadRequest):
        TransformSpec.from_dict(bad)


def test_transform_rejects_non_objects():
    with pytest.raises(BadRequest):
        apply_transform([1, 2], load_spec())


def test_bike_row_becomes_normalized_station():
    row = {"station": "santander-001", "name": "Plaza del Ayuntamiento", "bikes": 7, "freeSlots": 13,
           "observedAt": "2021-11-01T08:00:00Z", "nearestTraffic": "urn:ngsi-ld:TrafficFlowObserved:tfo-001"}
    out = apply_transform(row, load_spec(name="bike_transform.json"))
    e = from_normalized(out)
    assert e.id == "urn:BikeHireDockingStation:santander-001"
    assert e["availableBikeNumber"].observed_at == "2021-11-01T08:00:00.00Z"
    assert e["refTrafficFlowObserved"].kind == "Relationship"
    assert to_key_values(e)["address"] == {"addressLocality": "Santander", "addressCountry": "ES"}


def test_paths():
    doc = {"a": {"b": [10, {"c": 3}]}}
    assert get_path(doc, "a.b.1.c") == 3
    assert get_path(doc, "a.b.5", None) is None
    with pytest.raises(UnresolvedPath):
        get_path(doc, "a.x")
    out = {"a": 1}
    set_path(out, "a.b.c", 2)
    assert out == {"a": {"b": {"c": 2}}}
    assert render_template("${a.b.0}/${a.b.1}", doc) == '10/{"c": 3}'


json_docs = st.dictionaries(st.sampled_from(["ubi", "fint", "prec", "ta", "extra"]),
                            st.one_of(st.integers(), st.text(max_size=6), st.floats(allow_nan=False)), max_size=5)


@given(json_docs)
def test_transform_is_pure_and_deterministic(doc):
    s = spec([{"target": "x", "source": "ubi"}, {"target": "y.z", "source": "ta"},
              {"target": "k", "constant": [1.0, 2]}], "skip-rule")
    before = copy.deepcopy(doc)
    first = apply_transform(doc, s)
    assert apply_transform(doc, s) == first
    assert doc == before
    assert first["k"] == [1, 2]
    assert set(first) <= {"x", "y", "k"}
