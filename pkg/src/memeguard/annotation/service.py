"""HTTP API over the annotation store.

Annotator-facing endpoints are open; admin endpoints require a bearer token
taken from the MEMEGUARD_ADMIN_TOKEN environment variable. The service can
also serve a built browser UI from a static directory.
"""

from __future__ import annotations

import os
from pathlib import Path

from fastapi import Depends, FastAPI, HTTPException, Query, Request
from fastapi.responses import FileResponse
from pydantic import BaseModel, Field

from memeguard.annotation.store import AnnotationStore, AnnotatorProfile, StoreConflict, StoreError
from memeguard.corpus import LABEL_DEFINITIONS

ADMIN_TOKEN_ENV = "MEMEGUARD_ADMIN_TOKEN"


class AnnotationIn(BaseModel):
    annotator: str
    sample: str
    stage: str
    label: str


class RatingIn(BaseModel):
    annotator: str
    sample: str
    completeness: int = Field(ge=1, le=10)
    fluency: int = Field(ge=1, le=10)
    grammar: int = Field(ge=1, le=10)


class BatchAssignment(BaseModel):
    sample: str
    annotators: list[str]


class BatchIn(BaseModel):
    stage: str
    assignments: list[BatchAssignment]


class AnnotatorIn(BaseModel):
    id: str
    handle: str
    daily_cap: int = 50
    active: bool = True


class SampleIn(BaseModel):
    id: str
    image_path: str = ""
    title: str = ""
    tags: list[str] = []
    ocr_text: str = ""
    gt_summary: str | None = None


def create_app(
    store: AnnotationStore,
    media_root: str | Path | None = None,
    admin_token: str | None = None,
    ui_dir: str | Path | None = None,
) -> FastAPI:
    app = FastAPI(title="memeguard annotation service")
    token = admin_token if admin_token is not None else os.environ.get(ADMIN_TOKEN_ENV, "")
    media_root = Path(media_root) if media_root else None

    def require_admin(request: Request) -> None:
        if not token:
            raise HTTPException(status_code=503, detail="admin token not configured")
        header = request.headers.get("authorization", "")
        if header != f"Bearer {token}":
            raise HTTPException(status_code=401, detail="admin token required")

    def translate(exc: StoreError) -> HTTPException:
        if isinstance(exc, StoreConflict):
            return HTTPException(status_code=409, detail=str(exc))
        message = str(exc)
        if "unknown" in message:
            return HTTPException(status_code=404, detail=message)
        if "cap" in message:
            return HTTPException(status_code=429, detail=message)
        return HTTPException(status_code=400, detail=message)

    # ------------------------------------------------------------ annotator API

    @app.get("/api/tasks/next")
    def next_task(annotator: str = Query(...)):
        try:
            result = store.next_task(annotator)
        except StoreError as exc:
            raise translate(exc)
        task = result.get("task")
        if task is not None:
            task["image_url"] = f"/api/samples/{task['sample_id']}/media"
            task["guidelines"] = {
                label: LABEL_DEFINITIONS[label]
                for label in task["allowed_labels"]
                if label in LABEL_DEFINITIONS
            }
        return result

    @app.post("/api/annotations", status_code=201)
    def submit_annotation(body: AnnotationIn):
        try:
            return store.submit_annotation(body.annotator, body.sample, body.stage, body.label)
        except StoreError as exc:
            raise translate(exc)

    @app.post("/api/ratings", status_code=201)
    def submit_rating(body: RatingIn):
        try:
            return store.rate_summary(
                body.annotator, body.sample, body.completeness, body.fluency, body.grammar
            )
        except StoreError as exc:
            raise translate(exc)

    @app.get("/api/progress")
    def progress(annotator: str = Query(...)):
        try:
            profile = store.get_annotator(annotator)
        except StoreError as exc:
            raise translate(exc)
        return {
            "submitted_today": store.submitted_today(annotator),
            "cap": profile.daily_cap,
            "remaining_total": store.remaining_total(annotator),
        }

    @app.get("/api/samples/{sample_id}/media")
    def media(sample_id: str):
        try:
            sample = store.get_sample(sample_id)
        except StoreError as exc:
            raise translate(exc)
        path = Path(sample["image_path"])
        if media_root is not None and not path.is_absolute():
            path = media_root / path
        if not path.exists():
            raise HTTPException(status_code=404, detail="image file missing")
        return FileResponse(path)

    @app.get("/api/samples/{sample_id}/summary")
    def summary(sample_id: str):
        try:
            sample = store.get_sample(sample_id)
        except StoreError as exc:
            raise translate(exc)
        if sample["gt_summary"] is None:
            raise HTTPException(status_code=404, detail="no summary for this sample")
        return {"sample_id": sample_id, "summary": sample["gt_summary"]}

    # ------------------------------------------------------------ admin API

    @app.post("/api/admin/annotators", status_code=201, dependencies=[Depends(require_admin)])
    def add_annotator(body: AnnotatorIn):
        try:
            store.add_annotator(AnnotatorProfile(**body.model_dump()))
        except ValueError as exc:
            raise HTTPException(status_code=400, detail=str(exc))
        return {"id": body.id}

    @app.post("/api/admin/samples", status_code=201, dependencies=[Depends(require_admin)])
    def add_samples(body: list[SampleIn]):
        for sample in body:
            store.add_sample(
                sample.id, image_path=sample.image_path, title=sample.title,
                tags=sample.tags, ocr_text=sample.ocr_text, gt_summary=sample.gt_summary,
            )
        return {"n_samples": len(body)}

    @app.post("/api/admin/batches", status_code=201, dependencies=[Depends(require_admin)])
    def create_batch(body: BatchIn):
        try:
            return store.create_batch(
                body.stage, [(a.sample, a.annotators) for a in body.assignments]
            )
        except StoreError as exc:
            raise translate(exc)

    @app.post("/api/admin/finalize", dependencies=[Depends(require_admin)])
    def finalize(stage: str = Query(...)):
        try:
            return store.finalize(stage)
        except StoreError as exc:
            raise translate(exc)

    @app.get("/api/admin/agreement", dependencies=[Depends(require_admin)])
    def agreement(stage: str = Query(...)):
        try:
            report = store.agreement(stage)
        except StoreError as exc:
            raise translate(exc)
        return {
            "kappa": report.kappa,
            "n_items": report.n_items,
            "n_raters": report.n_raters,
            "marginals": list(report.marginals),
        }

    @app.get("/api/admin/ratings/report", dependencies=[Depends(require_admin)])
    def ratings_report():
        return store.rating_report()

    # ------------------------------------------------------------ optional UI

    if ui_dir is not None and Path(ui_dir).is_dir():
        from fastapi.staticfiles import StaticFiles

        app.mount("/", StaticFiles(directory=str(ui_dir), html=True), name="ui")

    return app
