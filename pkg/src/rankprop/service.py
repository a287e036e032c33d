"""HTTP service for propensity tables and rank-change contact forecasts.

Forecasts assume separable position bias and no competitive displacement:
moving a professional between positions scales expected contacts by the
ratio of the two propensities. The response labels the model so consumers
can see the assumption. Tables are loaded once at startup and never
mutate, so request handling is safe at arbitrary parallelism; refresh by
restarting.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from pathlib import Path

from fastapi import FastAPI
from fastapi.middleware.cors import CORSMiddleware
from fastapi.responses import JSONResponse
from pydantic import BaseModel, Field

from rankprop.core import PropensityTable, load_propensity_artifact
from rankprop.errors import CoverageError, RankpropError

logger = logging.getLogger(__name__)

FORECAST_MODEL = "pbm-separable"


class ScenarioRequest(BaseModel):
    interface: str
    current_position: int = Field(ge=1)
    candidate_position: int = Field(ge=1)
    observed_contacts: float = Field(ge=0)


@dataclass(frozen=True)
class ScenarioResponse:
    forecast_contacts: float
    multiplier: float
    ci: tuple[float, float]
    model: str = FORECAST_MODEL

    def to_dict(self) -> dict:
        return {
            "forecast_contacts": self.forecast_contacts,
            "multiplier": self.multiplier,
            "ci": [self.ci[0], self.ci[1]],
            "model": self.model,
        }


def forecast(req: ScenarioRequest, table: PropensityTable) -> ScenarioResponse:
    """Scale observed contacts by the candidate/current propensity ratio.

    The interval is the ratio of the table's interval endpoints, which is
    conservative relative to the point estimate.
    """
    for pos in (req.current_position, req.candidate_position):
        if not table.covers(pos):
            raise CoverageError(f"propensity table does not cover position {pos}")
    if req.observed_contacts < 0:
        raise ValueError("observed_contacts must be non-negative")
    cur = table.theta[req.current_position]
    cand = table.theta[req.candidate_position]
    multiplier = cand / cur
    ci_low = table.ci_low[req.candidate_position] / table.ci_high[req.current_position]
    ci_high = table.ci_high[req.candidate_position] / table.ci_low[req.current_position]
    return ScenarioResponse(
        forecast_contacts=req.observed_contacts * multiplier,
        multiplier=multiplier,
        ci=(ci_low, ci_high),
    )


def load_tables(artifacts_dir: str | Path) -> dict[str, tuple[PropensityTable, dict]]:
    """All propensity artifacts in a directory, keyed by interface id."""
    artifacts_dir = Path(artifacts_dir)
    tables: dict[str, tuple[PropensityTable, dict]] = {}
    for path in sorted(artifacts_dir.glob("*.json")):
        if path.name == "manifest.json":
            continue
        try:
            table, meta = load_propensity_artifact(path)
        except (RankpropError, ValueError, KeyError) as exc:
            logger.warning("skipping %s: %s", path, exc)
            continue
        tables[table.interface] = (table, meta)
    if not tables:
        raise RankpropError(f"no valid propensity artifacts found in {artifacts_dir}")
    return tables


def create_app(
    tables: dict[str, tuple[PropensityTable, dict]],
    cors_origins: list[str] | None = None,
) -> FastAPI:
    app = FastAPI(title="rankprop scenario service")
    app.add_middleware(
        CORSMiddleware,
        allow_origins=cors_origins or ["*"],
        allow_methods=["*"],
        allow_headers=["*"],
    )

    @app.get("/v1/health")
    def health() -> dict:
        return {"status": "ok", "interfaces": sorted(tables)}

    @app.get("/v1/propensities")
    def propensities(interface: str) -> JSONResponse:
        entry = tables.get(interface)
        if entry is None:
            return JSONResponse(
                status_code=404,
                content={"error": "unknown_interface", "detail": f"no table for interface {interface!r}"},
            )
        table, meta = entry
        payload = table.to_dict()
        if meta:
            payload["meta"] = meta
        return JSONResponse(content=payload)

    @app.post("/v1/scenario/forecast")
    def scenario_forecast(req: ScenarioRequest) -> JSONResponse:
        entry = tables.get(req.interface)
        if entry is None:
            return JSONResponse(
                status_code=404,
                content={"error": "unknown_interface", "detail": f"no table for interface {req.interface!r}"},
            )
        try:
            result = forecast(req, entry[0])
        except CoverageError as exc:
            return JSONResponse(status_code=404, content={"error": "uncovered_position", "detail": str(exc)})
        except ValueError as exc:
            return JSONResponse(status_code=400, content={"error": "bad_request", "detail": str(exc)})
        return JSONResponse(content=result.to_dict())

    return app


def serve(artifacts_dir: str | Path, port: int = 8787, cors_origins: list[str] | None = None) -> None:
    """Blocking entry point used by the CLI's serve subcommand."""
    import uvicorn

    tables = load_tables(artifacts_dir)
    logger.info("serving %d propensity table(s) on port %d", len(tables), port)
    app = create_app(tables, cors_origins=cors_origins)
    uvicorn.run(app, host="0.0.0.0", port=port, log_level="info")
