"""HTTP/JSON API over a project directory (the annotation client's contract).

Single-writer semantics: one process owns the project; mutations serialize
through a lock and are guarded by per-image revision numbers, so a stale
client gets 409 instead of clobbering newer edits. JSON responses carry
``schema: hitl/1``; binary (PNG) responses carry it in the ``X-Schema``
header.
"""
from __future__ import annotations

import base64
import threading
from dataclasses import asdict

from fastapi import FastAPI, HTTPException, Response
from pydantic import BaseModel

from .hitl import (
    HITL_SCHEMA,
    EditEvent,
    Project,
    ReplayMismatch,
    RevisionConflict,
    RoundError,
    finalize_round,
)
from .raster import enhance_contrast, image_to_png_bytes, mask_from_png_bytes, mask_to_png_bytes
from . import hitl


class EventsBody(BaseModel):
    events: list[dict]
    revision: int


class CorrectionBody(BaseModel):
    final_mask_png_base64: str
    active_ms: int
    revision: int


def create_app(project_dir: str) -> FastAPI:
    app = FastAPI(title="chorovessel annotation API")
    project = Project.load(project_dir)
    lock = threading.Lock()
    enhanced_cache: dict[str, bytes] = {}

    def _image_or_404(image_id: str):
        if image_id not in project.images:
            raise HTTPException(status_code=404, detail=f"unknown image {image_id!r}")

    @app.get("/api/project")
    def project_summary():
        doc = project.to_dict()
        doc["rounds"] = [
            {"number": r.number, "n_images": len(r.image_ids),
             "finalized": r.finalized, "report": r.report}
            for r in project.rounds
        ]
        return doc

    @app.get("/api/rounds/{n}")
    def round_state(n: int):
        try:
            r = project._round(n)
        except RoundError as e:
            raise HTTPException(status_code=404, detail=str(e))
        return {"schema": HITL_SCHEMA, **asdict(r),
                "revisions": {i: project.revisions.get(i, 0) for i in r.image_ids}}

    @app.get("/api/rounds/{n}/report")
    def round_report(n: int):
        try:
            r = project._round(n)
        except RoundError as e:
            raise HTTPException(status_code=404, detail=str(e))
        if r.report is None:
            raise HTTPException(status_code=404, detail=f"round {n} has no report yet")
        return {"schema": HITL_SCHEMA, "report": r.report}

    @app.post("/api/rounds/{n}/finalize")
    def round_finalize(n: int):
        with lock:
            try:
                report = finalize_round(project, n)
            except RoundError as e:
                raise HTTPException(status_code=409, detail=str(e))
        return {"schema": HITL_SCHEMA, "report": report}

    @app.get("/api/images/{image_id}/base")
    def image_base(image_id: str, mode: str = "raw"):
        _image_or_404(image_id)
        if mode not in ("raw", "enhanced"):
            raise HTTPException(status_code=400, detail=f"unknown mode {mode!r}")
        img = project.image(image_id)
        if mode == "enhanced":
            if image_id not in enhanced_cache:
                enhanced_cache[image_id] = image_to_png_bytes(enhance_contrast(img))
            data = enhanced_cache[image_id]
        else:
            data = image_to_png_bytes(img)
        return Response(content=data, media_type="image/png",
                        headers={"X-Schema": HITL_SCHEMA})

    @app.get("/api/images/{image_id}/proposal")
    def image_proposal(image_id: str):
        _image_or_404(image_id)
        try:
            mask = project.proposal(image_id)
        except RoundError as e:
            raise HTTPException(status_code=404, detail=str(e))
        return Response(content=mask_to_png_bytes(mask), media_type="image/png",
                        headers={"X-Schema": HITL_SCHEMA})

    @app.get("/api/images/{image_id}/events")
    def image_events(image_id: str):
        _image_or_404(image_id)
        try:
            log = project.event_log(image_id)
        except RoundError as e:
            raise HTTPException(status_code=404, detail=str(e))
        return {"schema": HITL_SCHEMA, **log,
                "revision": project.revisions.get(image_id, 0)}

    @app.post("/api/images/{image_id}/events")
    def post_events(image_id: str, body: EventsBody):
        _image_or_404(image_id)
        try:
            events = [EditEvent.from_dict(e) for e in body.events]
        except (KeyError, TypeError, ValueError) as e:
            raise HTTPException(status_code=400, detail=f"bad event payload: {e}")
        with lock:
            try:
                revision = project.append_events(image_id, events, body.revision)
            except RevisionConflict as e:
                raise HTTPException(status_code=409, detail=str(e))
            except (RoundError, ValueError) as e:
                raise HTTPException(status_code=400, detail=str(e))
        return {"schema": HITL_SCHEMA, "revision": revision}

    @app.put("/api/images/{image_id}/correction")
    def put_correction(image_id: str, body: CorrectionBody):
        _image_or_404(image_id)
        try:
            mask = mask_from_png_bytes(base64.b64decode(body.final_mask_png_base64))
        except ValueError as e:
            raise HTTPException(status_code=400, detail=str(e))
        with lock:
            try:
                log = project.event_log(image_id)
                events = [EditEvent.from_dict(e) for e in log["events"]]
                doc = hitl.submit_correction(project, image_id, events, mask,
                                             active_ms=body.active_ms,
                                             revision=body.revision)
            except RevisionConflict as e:
                raise HTTPException(status_code=409, detail=str(e))
            except ReplayMismatch as e:
                raise HTTPException(status_code=422, detail=str(e))
            except (RoundError, ValueError) as e:
                raise HTTPException(status_code=400, detail=str(e))
        return {"schema": HITL_SCHEMA, "stored": True,
                "server_active_ms": doc["server_active_ms"],
                "revision": project.revisions.get(image_id, 0)}

    return app
