"""HTTP surface: ask questions, fetch traces, health, schema, batch eval.

Endpoints speak JSON; traces persist in an on-disk ring buffer so every
answered question can be audited after the fact.  The optional static
API key and CORS origins come from the service config.
"""

from __future__ import annotations

import glob
import json
import os
import threading
import time
import uuid
from concurrent.futures import ThreadPoolExecutor, TimeoutError as FutureTimeout
from dataclasses import dataclass
from typing import Optional

from fastapi import FastAPI, Header, HTTPException, Request
from fastapi.exceptions import RequestValidationError
from fastapi.middleware.cors import CORSMiddleware
from fastapi.responses import JSONResponse
from pydantic import BaseModel, Field

from finask.config import AppConfig
from finask.evalkit import run_eval_batch
from finask.gateway import Gateway, HttpChatProvider, ScriptedProvider
from finask.pipeline import Pipeline, PipelineOutcome, load_fewshots
from finask.sqlguard import QueryPolicy
from finask.vectors import SearchService, build_index_from_warehouse
from finask.warehouse import Warehouse


class ConfigError(RuntimeError):
    """Required configuration is missing; the message names the key."""


class TraceStore:
    """Disk-backed ring buffer of trace documents keyed by trace id."""

    def __init__(self, directory: str, capacity: int = 1000):
        self.directory = directory
        self.capacity = capacity
        self._lock = threading.Lock()
        os.makedirs(directory, exist_ok=True)
        existing = sorted(glob.glob(os.path.join(directory, "*.json")))
        self._seq = len(existing)

    def put(self, trace_id: str, doc: dict) -> None:
        with self._lock:
            path = os.path.join(self.directory, f"{self._seq:08d}-{trace_id}.json")
            self._seq += 1
            with open(path, "w", encoding="utf-8") as fh:
                json.dump(doc, fh, sort_keys=True)
            files = sorted(glob.glob(os.path.join(self.directory, "*.json")))
            for stale in files[:-self.capacity] if len(files) > self.capacity else []:
                os.unlink(stale)

    def get(self, trace_id: str) -> Optional[dict]:
        matches = glob.glob(os.path.join(self.directory, f"*-{trace_id}.json"))
        if not matches:
            return None
        with open(matches[0], encoding="utf-8") as fh:
            return json.load(fh)


@dataclass
class ServiceState:
    config: AppConfig
    warehouse: Warehouse
    search: SearchService
    pipeline: Optional[Pipeline]
    judge: Optional[Gateway]
    traces: TraceStore
    script_path: Optional[str]

    def provider_ready(self) -> bool:
        if self.pipeline is None:
            return False
        if self.script_path is not None:
            return os.path.isfile(self.script_path) and os.access(self.script_path, os.R_OK)
        return True

    def readiness(self) -> dict:
        components = {
            "warehouse": self.warehouse.is_seeded(),
            "index": self.search.index.total_entries() > 0,
            "provider": self.provider_ready(),
        }
        return {"ready": all(components.values()), "components": components}


def build_policy(config: AppConfig) -> QueryPolicy:
    p = config.policy
    return QueryPolicy(require_limit=p.require_limit, max_limit=p.max_limit,
                       require_quarter_condition=p.require_quarter_condition,
                       allow_ctes=p.allow_ctes)


def build_gateway(config: AppConfig, script_path: Optional[str] = None) -> tuple[Gateway, Optional[str]]:
    provider_cfg = config.provider
    if provider_cfg.kind == "scripted":
        path = script_path or provider_cfg.script_path
        if not path:
            raise ConfigError("provider.script_path")
        provider = ScriptedProvider.from_file(path)
        return Gateway(provider, retries=provider_cfg.retries), path
    if provider_cfg.kind == "http":
        if not provider_cfg.base_url or not provider_cfg.model:
            raise ConfigError("provider.base_url / provider.model")
        provider = HttpChatProvider(provider_cfg.base_url, provider_cfg.model,
                                    api_key=provider_cfg.api_key,
                                    timeout=provider_cfg.timeout)
        return Gateway(provider, retries=provider_cfg.retries), None
    raise ConfigError(f"provider.kind (unknown kind {provider_cfg.kind!r})")


def build_state(config: AppConfig, script_path: Optional[str] = None,
                warehouse: Optional[Warehouse] = None,
                require_provider: bool = True) -> ServiceState:
    warehouse = warehouse or Warehouse(config.db_path)
    if config.fixture_profile and not warehouse.is_seeded():
        warehouse.seed_fixture(config.fixture_profile)
    policy = build_policy(config)
    fewshots = load_fewshots(config.fewshot_path, warehouse.catalog, policy) \
        if warehouse.is_seeded() else []
    search = build_index_from_warehouse(warehouse, fewshots) \
        if warehouse.is_seeded() else SearchService()
    pipeline = None
    resolved_script = None
    try:
        gateway, resolved_script = build_gateway(config, script_path)
        pipeline = Pipeline(warehouse, search, gateway, policy, config.pipeline)
    except ConfigError:
        if require_provider:
            raise
    traces = TraceStore(config.service.trace_dir, config.service.trace_capacity)
    judge = pipeline.gateway if pipeline else None
    return ServiceState(config, warehouse, search, pipeline, judge, traces, resolved_script)


# ---------------------------------------------------------------------------
# API models
# ---------------------------------------------------------------------------

class AskOptions(BaseModel):
    multistep: Optional[bool] = None
    trace: bool = False


class AskRequest(BaseModel):
    question: str = Field(min_length=1)
    options: AskOptions = Field(default_factory=AskOptions)


class EvalRequest(BaseModel):
    batch_path: str = Field(min_length=1)


def create_app(state: ServiceState) -> FastAPI:
    app = FastAPI(title="finask", version="0.1.0")
    app.state.finask = state
    app.add_middleware(
        CORSMiddleware,
        allow_origins=state.config.service.cors_origins,
        allow_methods=["*"],
        allow_headers=["*"],
    )
    executor = ThreadPoolExecutor(max_workers=8)

    def check_key(x_api_key: Optional[str]) -> None:
        wanted = state.config.service.api_key
        if wanted and x_api_key != wanted:
            raise HTTPException(status_code=401, detail={"error": "bad_api_key"})

    def run_and_store(question: str, multistep: Optional[bool],
                      trace_id: Optional[str] = None) -> PipelineOutcome:
        outcome = state.pipeline.run(question, multistep=multistep, trace_id=trace_id)
        state.traces.put(outcome.trace.trace_id, outcome.trace.to_json())
        return outcome

    @app.exception_handler(RequestValidationError)
    async def malformed(request: Request, exc: RequestValidationError):
        return JSONResponse(status_code=400,
                            content={"error": "bad_request", "detail": exc.errors()})

    @app.exception_handler(Exception)
    async def unhandled(request: Request, exc: Exception):
        return JSONResponse(status_code=500,
                            content={"error": "internal", "detail": str(exc)})

    @app.get("/api/healthz")
    def healthz():
        body = state.readiness()
        return JSONResponse(status_code=200 if body["ready"] else 503, content=body)

    @app.get("/api/schema")
    def schema():
        catalog = state.warehouse.catalog
        return {
            "tables": [{"name": t.name,
                        "columns": [{"name": c.name, "kind": c.kind} for c in t.columns]}
                       for t in catalog.tables],
            "category_codes": catalog.category_codes,
            "ratio_codes": catalog.ratio_codes,
        }

    @app.post("/api/ask")
    def ask(request: AskRequest, x_api_key: Optional[str] = Header(default=None)):
        check_key(x_api_key)
        if state.pipeline is None:
            raise HTTPException(status_code=503, detail={"error": "provider_not_configured"})
        started = time.perf_counter()
        multistep = request.options.multistep
        effective_multistep = state.config.pipeline.multistep if multistep is None else multistep
        if effective_multistep:
            # exploration runs can be slow: hand back a poll token at once,
            # the trace appears at /api/trace/{id} when the run finishes
            trace_id = uuid.uuid4().hex
            executor.submit(run_and_store, request.question, multistep, trace_id)
            return JSONResponse(status_code=202, content={
                "status": "accepted", "trace_id": trace_id,
                "detail": "exploration running; poll /api/trace/{id}".format(id=trace_id)})
        future = executor.submit(run_and_store, request.question, multistep)
        try:
            outcome = future.result(timeout=state.config.service.ask_deadline)
        except FutureTimeout:
            raise HTTPException(status_code=504, detail={"error": "deadline_exceeded"})
        elapsed_ms = (time.perf_counter() - started) * 1000.0
        body = {
            "status": outcome.status,
            "columns": outcome.final_table.columns if outcome.final_table else None,
            "rows": [list(r) for r in outcome.final_table.rows] if outcome.final_table else None,
            "trace_id": outcome.trace.trace_id,
            "elapsed_ms": elapsed_ms,
        }
        if request.options.trace:
            body["trace"] = outcome.trace.to_json()
        if outcome.status == "failed":
            return JSONResponse(status_code=502, content=body)
        return body

    @app.get("/api/trace/{trace_id}")
    def trace(trace_id: str):
        doc = state.traces.get(trace_id)
        if doc is None:
            raise HTTPException(status_code=404, detail={"error": "trace_not_found"})
        return doc

    @app.post("/api/eval")
    def eval_batch(request: EvalRequest, x_api_key: Optional[str] = Header(default=None)):
        check_key(x_api_key)
        if state.pipeline is None:
            raise HTTPException(status_code=503, detail={"error": "provider_not_configured"})
        if not os.path.isfile(request.batch_path):
            raise HTTPException(status_code=400, detail={"error": "batch_not_found"})
        try:
            records, report = run_eval_batch(request.batch_path, state.pipeline, state.judge)
        except ValueError as exc:
            raise HTTPException(status_code=400, detail={"error": "bad_batch", "message": str(exc)})
        for record in records:
            if record.prediction is not None:
                state.traces.put(record.prediction.trace.trace_id,
                                 record.prediction.trace.to_json())
        return report.to_json()

    static_dir = state.config.service.static_dir
    if static_dir and os.path.isdir(static_dir):
        from fastapi.staticfiles import StaticFiles
        app.mount("/", StaticFiles(directory=static_dir, html=True), name="ui")

    return app
