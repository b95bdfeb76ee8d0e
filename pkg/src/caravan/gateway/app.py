"""HTTP API over the Caravan service (JSON over HTTP/1.1).

Request bodies are parsed by hand instead of through pydantic models so every
error response carries the uniform ApiError JSON shape with per-field details.
"""

from __future__ import annotations

import json
import uuid
from pathlib import Path
from typing import Optional

from fastapi import FastAPI, File, Form, Request, UploadFile
from fastapi.exceptions import RequestValidationError
from fastapi.responses import JSONResponse, Response
from fastapi.staticfiles import StaticFiles

from ..core import VoteRecord, utcnow
from ..errors import CaravanError, NotFound, ParseError, ValidationFailure
from ..service import SUBMITTABLE_STAGES, CaravanService
from ..store import export_provenance_xml
from ..training import load_evaluation, prediction_view


def _error_response(exc: CaravanError) -> JSONResponse:
    return JSONResponse(
        status_code=exc.http_status,
        content={
            "status": exc.http_status,
            "code": exc.code,
            "message": exc.message,
            "details": [list(d) if isinstance(d, (list, tuple)) else d for d in exc.details],
        },
    )


async def _read_json(request: Request) -> dict:
    raw = await request.body()
    try:
        body = json.loads(raw.decode("utf-8")) if raw else {}
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise ParseError(f"malformed JSON body: {exc}") from None
    if not isinstance(body, dict):
        raise ParseError("request body must be a JSON object")
    return body


def _package_view(service: CaravanService, package_id: str) -> dict:
    record = service.catalog.package(package_id)
    resolved = service.collection.resolved_label(package_id)
    completed = sorted(service.collection.completed_families(package_id))
    votes = service.catalog.votes(package_id)
    return {
        "package_id": record.package_id,
        "name": record.name,
        "version": record.version,
        "origin": record.origin,
        "metadata": record.metadata,
        "first_seen": record.first_seen,
        "last_seen": record.last_seen,
        "completed_families": completed,
        "resolved_label": {
            "category": resolved.category,
            "source": resolved.source,
            "tie": resolved.tie,
        }
        if resolved
        else None,
        "votes": [
            {"category": v.category, "voter": v.voter, "cast_at": v.cast_at.isoformat()}
            for v in votes
        ],
    }


def create_app(service: CaravanService, frontend_dir: Optional[str | Path] = None) -> FastAPI:
    app = FastAPI(title="caravan", version="0.1.0", docs_url=None, redoc_url=None)

    @app.exception_handler(CaravanError)
    async def handle_caravan_error(_request: Request, exc: CaravanError):
        return _error_response(exc)

    @app.exception_handler(RequestValidationError)
    async def handle_request_validation(_request: Request, exc: RequestValidationError):
        details = [
            (".".join(str(p) for p in error.get("loc", [])), error.get("msg", "invalid"))
            for error in exc.errors()
        ]
        return _error_response(ValidationFailure("invalid request", details=details))

    @app.exception_handler(Exception)
    async def handle_unexpected(_request: Request, exc: Exception):
        return _error_response(CaravanError(f"internal error: {exc}"))

    # -- packages -----------------------------------------------------------

    @app.post("/api/packages", status_code=201)
    async def upload_package(
        file: UploadFile = File(...),
        category: Optional[str] = Form(None),
        uploader: str = Form("anonymous"),
    ):
        payload = await file.read()
        package_id = service.collection.ingest_upload(
            payload, category, uploader, run_id=str(uuid.uuid4())
        )
        return {"package_id": package_id}

    @app.get("/api/packages")
    async def list_packages(offset: int = 0, limit: int = 50):
        records, total = service.catalog.list_packages(offset=offset, limit=limit)
        return {
            "items": [_package_view(service, r.package_id) for r in records],
            "total": total,
            "offset": offset,
            "limit": limit,
        }

    @app.get("/api/packages/{package_id}")
    async def get_package(package_id: str):
        return _package_view(service, package_id)

    @app.post("/api/packages/{package_id}/votes")
    async def cast_vote(package_id: str, request: Request):
        body = await _read_json(request)
        problems = [
            (field, "required nonempty string")
            for field in ("category", "voter")
            if not isinstance(body.get(field), str) or not body.get(field)
        ]
        if problems:
            raise ValidationFailure("invalid vote", details=problems)
        service.catalog.add_vote(
            VoteRecord(
                package_id=package_id,
                category=body["category"],
                voter=body["voter"],
                cast_at=utcnow(),
            )
        )
        resolved = service.collection.resolved_label(package_id)
        return {
            "resolved_label": {
                "category": resolved.category,
                "source": resolved.source,
                "tie": resolved.tie,
            }
        }

    # -- stages and tasks ------------------------------------------------------

    @app.post("/api/stages/{stage}", status_code=202)
    async def launch_stage(stage: str, request: Request):
        if stage not in SUBMITTABLE_STAGES:
            raise NotFound(f"unknown stage: {stage}")
        body = await _read_json(request)
        task_id = service.submit_stage(stage, body)
        return {"task_id": task_id}

    @app.get("/api/tasks")
    async def tasks_snapshot():
        return service.queue.snapshot()

    @app.get("/api/tasks/{task_id}")
    async def task_state(task_id: str):
        return service.task_view(task_id)

    @app.post("/api/tasks/{task_id}/cancel")
    async def cancel_task(task_id: str):
        service.queue.cancel(task_id)
        return {"task_id": task_id, "status": "cancelled"}

    # -- plugins ------------------------------------------------------------------

    @app.get("/api/plugins")
    async def list_plugins(stage: Optional[str] = None, algorithm_class: Optional[str] = None):
        return {
            "plugins": [
                d.to_dict() for d in service.registry.list_plugins(stage, algorithm_class)
            ]
        }

    @app.get("/api/plugins/{stage}/{plugin_id}/schema")
    async def plugin_schema(stage: str, plugin_id: str):
        return service.registry.descriptor(stage, plugin_id).to_dict()

    # -- datasets and models ----------------------------------------------------

    @app.get("/api/datasets")
    async def list_datasets():
        out = []
        for kind in ("dataset_selected", "dataset_merged", "dataset_processed"):
            names = {aid: name for name, aid in service.catalog.names(kind).items()}
            items, _total = service.store.list(kind=kind, limit=1000)
            for meta in items:
                out.append(
                    {
                        "artifact_id": meta.id,
                        "kind": meta.kind,
                        "name": names.get(meta.id),
                        "created_at": meta.created_at.isoformat(),
                    }
                )
        return {"datasets": out}

    @app.get("/api/models")
    async def list_models():
        names = {aid: name for name, aid in service.catalog.names("model").items()}
        evaluations = service.catalog.names("evaluation")
        items, _total = service.store.list(kind="model", limit=1000)
        return {
            "models": [
                {
                    "artifact_id": meta.id,
                    "name": names.get(meta.id),
                    "created_at": meta.created_at.isoformat(),
                    "evaluation_id": evaluations.get(meta.id),
                }
                for meta in items
            ]
        }

    @app.get("/api/models/{model_id}/evaluation")
    async def model_evaluation(model_id: str):
        return load_evaluation(service.store, service.catalog, model_id)

    @app.get("/api/models/{model_id}/prediction-view")
    async def model_prediction_view(
        model_id: str,
        dims: int = 2,
        focal: Optional[str] = None,
        k: int = 5,
        show_incorrect: bool = True,
    ):
        return prediction_view(
            service.store,
            service.catalog,
            model_id,
            dims=dims,
            focal=focal,
            k_neighbors=k,
            show_incorrect=show_incorrect,
        )

    # -- provenance -----------------------------------------------------------------

    @app.get("/api/artifacts/{artifact_id}/provenance")
    async def artifact_provenance(artifact_id: str, request: Request):
        accept = request.headers.get("accept", "")
        if "application/xml" in accept:
            document = export_provenance_xml(service.store, artifact_id)
            return Response(content=document, media_type="application/xml")
        lineage = service.store.lineage(artifact_id)
        return {
            "artifact_id": artifact_id,
            "records": [record.to_dict() for record in lineage],
        }

    @app.get("/api/artifacts")
    async def list_artifacts(kind: Optional[str] = None, offset: int = 0, limit: int = 50):
        items, total = service.store.list(kind=kind, offset=offset, limit=limit)
        return {
            "items": [
                {
                    "artifact_id": meta.id,
                    "kind": meta.kind,
                    "created_at": meta.created_at.isoformat(),
                }
                for meta in items
            ],
            "total": total,
        }

    if frontend_dir is not None and Path(frontend_dir).is_dir():
        app.mount("/", StaticFiles(directory=str(frontend_dir), html=True), name="frontend")

    return app
