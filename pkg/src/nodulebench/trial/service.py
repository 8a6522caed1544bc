"""HTTP face of the trial: blinded serving, reading capture, export, report."""
from __future__ import annotations

import hashlib
import io
import json

import numpy as np
from fastapi import FastAPI, Header, HTTPException, Request, Response
from PIL import Image

from ..data.preprocess import WINDOW_HI, WINDOW_LO
from ..stats import StatsError
from .config import TrialConfig, TrialError, arm_for
from .events import ReadingEvent, format_ts
from .report import export_trial, trial_report
from .session import DuplicateReading, SessionComplete, UnknownAssignment, WashoutHold
from .store import AssignmentView, TrialStore

AXES = {"x": 0, "y": 1, "z": 2}

SLICE_URL = "/cases/{case_id}/slices/{axis}/{index}"


def reader_token(trial_id: str, reader_id: str, seed: int) -> str:
    raw = f"{trial_id}:{reader_id}:{seed}".encode("utf-8")
    return hashlib.sha256(raw).hexdigest()[:20]


def slice_png(volume, axis: int, index: int) -> bytes:
    """Lung-windowed grayscale PNG of one orthogonal slice."""
    if not 0 <= index < volume.dims[axis]:
        raise TrialError(
            f"slice {index} outside axis of length {volume.dims[axis]}")
    plane = np.take(volume.voxels, index, axis=axis)
    gray = np.clip((plane - WINDOW_LO) / (WINDOW_HI - WINDOW_LO), 0.0, 1.0)
    img = Image.fromarray(np.rint(gray * 255.0).astype(np.uint8), mode="L")
    buf = io.BytesIO()
    img.save(buf, format="PNG", compress_level=6)
    return buf.getvalue()


def _assignment_payload(trial_id: str, view: AssignmentView) -> dict:
    a = view.assignment
    # blinded by construction: no truth, no probability; the card is the only
    # place a class token may appear, and only on the assisted arm
    ai_card = None
    if a.arm == "assisted":
        ai_card = {"nodules": {view.nodule_id: view.ai_label}}
    return {
        "status": "assignment",
        "trial_id": trial_id,
        "reader_id": a.reader_id,
        "round": a.round,
        "arm": a.arm,
        "case_id": a.case_id,
        "nodule_id": view.nodule_id,
        "hint_box": list(view.case_box),
        "served_at": view.served_at,
        "slices": {
            "dims": list(view.volume_dims),
            "spacing": list(view.spacing),
            "axes": list(AXES),
            "url_template": SLICE_URL,
        },
        "ai_card": ai_card,
    }


def create_app(store: TrialStore) -> FastAPI:
    app = FastAPI(title="nodulebench trial service")
    app.state.store = store

    def auth(trial_id: str, reader_id: str, token: str | None) -> None:
        if token != reader_token(trial_id, reader_id,
                                 store.get(trial_id).config.seed):
            raise HTTPException(status_code=401, detail="bad reader token")

    @app.post("/trials", status_code=201)
    async def post_trial(request: Request) -> dict:
        try:
            config = TrialConfig.from_dict(await request.json())
            trial_id = store.create_trial(config)
        except TrialError as e:
            code = 409 if "already exists" in str(e) else 422
            raise HTTPException(status_code=code, detail=str(e)) from None
        return {
            "trial_id": trial_id,
            "scheduled_slots": 2 * len(config.readers) * len(config.cases),
            "readers": {r.reader_id: reader_token(trial_id, r.reader_id,
                                                  config.seed)
                        for r in config.readers},
        }

    @app.get("/trials/{trial_id}/readers/{reader_id}/next")
    def get_next(trial_id: str, reader_id: str,
                 x_reader_token: str | None = Header(default=None)):
        try:
            store.get(trial_id).config.reader(reader_id)
        except TrialError as e:
            raise HTTPException(status_code=404, detail=str(e)) from None
        auth(trial_id, reader_id, x_reader_token)
        view = store.serve_next(trial_id, reader_id)
        if isinstance(view, WashoutHold):
            return Response(
                status_code=409,
                media_type="application/json",
                content=json.dumps({
                    "status": "washout",
                    "eligible_at": format_ts(view.eligible_at)}))
        if isinstance(view, SessionComplete):
            return {"status": "complete", "reader_id": reader_id}
        return _assignment_payload(trial_id, view)

    @app.get("/cases/{case_id}/slices/{axis}/{index}")
    def get_slice(case_id: str, axis: str, index: int) -> Response:
        if axis not in AXES:
            raise HTTPException(status_code=422,
                                detail=f"axis must be one of {sorted(AXES)}")
        patient_id = None
        for trial in store.trials.values():
            for case in trial.config.cases:
                if case.case_id == case_id:
                    patient_id = case.patient_id
                    break
        if patient_id is None:
            raise HTTPException(status_code=404,
                                detail=f"unknown case {case_id!r}")
        try:
            png = slice_png(store.volume_for(patient_id), AXES[axis], index)
        except TrialError as e:
            raise HTTPException(status_code=422, detail=str(e)) from None
        return Response(content=png, media_type="image/png")

    @app.post("/readings", status_code=201)
    async def post_reading(request: Request,
                           x_reader_token: str | None = Header(default=None)):
        body = await request.json()
        try:
            trial_id = body["trial_id"]
            reader_id = body["reader_id"]
            case_id = body["case_id"]
        except (KeyError, TypeError) as e:
            raise HTTPException(status_code=422,
                                detail=f"missing field: {e}") from None
        try:
            trial = store.get(trial_id)
            reader = trial.config.reader(reader_id)
            trial.config.case(case_id)
        except TrialError as e:
            raise HTTPException(status_code=404, detail=str(e)) from None
        auth(trial_id, reader_id, x_reader_token)

        state = trial.state
        rnd = state.active_round(reader_id)
        served_at = None if rnd is None else state.served.get(
            (reader_id, rnd, case_id))
        if served_at is None:
            raise HTTPException(
                status_code=409,
                detail=f"{case_id} is not an open served assignment")
        arm = arm_for(reader.group, rnd)
        try:
            event = ReadingEvent(
                reader_id=reader_id, round=rnd, arm=arm, case_id=case_id,
                nodule_id=body.get("nodule_id", ""),
                box=tuple(body.get("box", ())),
                call=body.get("call", ""), score=int(body.get("score", 0)),
                ai_shown=(arm == "assisted"), served_at=served_at,
                submitted_at=format_ts(store.clock()))
        except (TrialError, StatsError, ValueError) as e:
            raise HTTPException(status_code=422, detail=str(e)) from None
        try:
            seq = store.record_reading(trial_id, event)
        except DuplicateReading as e:
            raise HTTPException(status_code=409, detail=str(e)) from None
        except UnknownAssignment as e:
            raise HTTPException(status_code=409, detail=str(e)) from None
        except TrialError as e:
            raise HTTPException(status_code=422, detail=str(e)) from None
        # receipt stays class-free: response bodies on either arm never echo
        # the reader's call
        return {"status": "recorded", "seq": seq, "trial_id": trial_id,
                "reader_id": reader_id, "case_id": case_id, "round": rnd}

    @app.get("/trials/{trial_id}/export")
    def get_export(trial_id: str) -> Response:
        try:
            text = export_trial(store.get(trial_id), store.manifest)
        except TrialError as e:
            raise HTTPException(status_code=404, detail=str(e)) from None
        return Response(content=text, media_type="application/x-ndjson")

    @app.get("/trials/{trial_id}/report")
    def get_report(trial_id: str) -> dict:
        try:
            return trial_report(store.get(trial_id), store.manifest)
        except TrialError as e:
            raise HTTPException(status_code=404, detail=str(e)) from None

    return app
