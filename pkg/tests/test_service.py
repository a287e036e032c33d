import json

import pytest
from fastapi.testclient import TestClient

from rankprop.core import PropensityTable, save_propensity_artifact
from rankprop.errors import CoverageError, RankpropError
from rankprop.service import ScenarioRequest, create_app, forecast, load_tables

TABLE = PropensityTable.from_theta("search", {1: 1.0, 2: 0.6, 3: 0.4}, source="assumed")


@pytest.fixture(scope="module")
def client():
    app = create_app({"search": (TABLE, {"note": "unit"})})
    return TestClient(app)


def test_forecast_examples():
    up = forecast(
        ScenarioRequest(interface="search", current_position=3, candidate_position=1, observed_contacts=10),
        TABLE,
    )
    assert up.multiplier == pytest.approx(2.5)
    assert up.forecast_contacts == pytest.approx(25.0)
    assert up.model == "pbm-separable"

    flat = forecast(
        ScenarioRequest(interface="search", current_position=2, candidate_position=2, observed_contacts=7),
        TABLE,
    )
    assert flat.multiplier == 1.0 and flat.forecast_contacts == 7.0

    down = forecast(
        ScenarioRequest(interface="search", current_position=1, candidate_position=3, observed_contacts=25),
        TABLE,
    )
    assert down.multiplier == pytest.approx(0.4)
    assert down.forecast_contacts == pytest.approx(10.0)


def test_forecast_reciprocity_and_path_independence():
    def mult(cur, cand):
        return forecast(
            ScenarioRequest(
                interface="search", current_position=cur, candidate_position=cand, observed_contacts=1
            ),
            TABLE,
        ).multiplier

    assert mult(1, 3) * mult(3, 1) == pytest.approx(1.0)
    assert mult(1, 3) == pytest.approx(mult(1, 2) * mult(2, 3))


def test_forecast_uncovered_position():
    with pytest.raises(CoverageError):
        forecast(
            ScenarioRequest(interface="search", current_position=1, candidate_position=9, observed_contacts=1),
            TABLE,
        )


def test_health_endpoint(client):
    response = client.get("/v1/health")
    assert response.status_code == 200
    assert response.json() == {"status": "ok", "interfaces": ["search"]}


def test_propensities_endpoint(client):
    response = client.get("/v1/propensities", params={"interface": "search"})
    assert response.status_code == 200
    payload = response.json()
    assert payload["theta"] == {"1": 1.0, "2": 0.6, "3": 0.4}
    assert payload["meta"] == {"note": "unit"}

    assert client.get("/v1/propensities", params={"interface": "missing"}).status_code == 404


def test_forecast_endpoint_matches_pure_function(client):
    body = {"interface": "search", "current_position": 3, "candidate_position": 1, "observed_contacts": 10}
    response = client.post("/v1/scenario/forecast", json=body)
    assert response.status_code == 200
    pure = forecast(ScenarioRequest(**body), TABLE)
    assert response.json() == pure.to_dict()


def test_forecast_endpoint_error_classes(client):
    unknown = client.post(
        "/v1/scenario/forecast",
        json={"interface": "other", "current_position": 1, "candidate_position": 2, "observed_contacts": 1},
    )
    assert unknown.status_code == 404
    assert unknown.json()["error"] == "unknown_interface"

    uncovered = client.post(
        "/v1/scenario/forecast",
        json={"interface": "search", "current_position": 1, "candidate_position": 8, "observed_contacts": 1},
    )
    assert uncovered.status_code == 404
    assert uncovered.json()["error"] == "uncovered_position"

    negative = client.post(
        "/v1/scenario/forecast",
        json={"interface": "search", "current_position": 1, "candidate_position": 2, "observed_contacts": -4},
    )
    assert 400 <= negative.status_code < 500


def test_load_tables_requires_artifacts(tmp_path):
    with pytest.raises(RankpropError, match="no valid propensity artifacts"):
        load_tables(tmp_path)


def test_load_tables_reads_artifacts(tmp_path):
    save_propensity_artifact(TABLE, tmp_path / "search.json", meta={"k": 1})
    other = PropensityTable.from_theta("mobile", {1: 1.0, 2: 0.5}, source="assumed")
    save_propensity_artifact(other, tmp_path / "mobile.json")
    (tmp_path / "manifest.json").write_text(json.dumps({"not": "a table"}))
    tables = load_tables(tmp_path)
    assert set(tables) == {"search", "mobile"}
    assert tables["search"][1] == {"k": 1}


def test_ci_endpoints_ratio_is_conservative():
    table = PropensityTable(
        interface="search",
        theta={1: 1.0, 2: 0.5},
        ci_low={1: 1.0, 2: 0.45},
        ci_high={1: 1.0, 2: 0.55},
        source="randomized_estimate",
        created_at=0,
    )
    up = forecast(
        ScenarioRequest(interface="search", current_position=2, candidate_position=1, observed_contacts=1),
        table,
    )
    assert up.ci[0] == pytest.approx(1.0 / 0.55)
    assert up.ci[1] == pytest.approx(1.0 / 0.45)
    assert up.ci[0] <= up.multiplier <= up.ci[1]
