"""HTTP gateway binding the engine, the metrics, and the image store.

Sessions live in an in-memory LRU store; evicted ids answer 410 so clients
can distinguish expiry from typos. Images are served by content address so
transcripts never embed base64. Evaluation jobs run on a single background
worker and are polled by id.
"""

from __future__ import annotations

import base64
import binascii
import dataclasses
import threading
import time
import uuid
from collections import OrderedDict
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path

from fastapi import FastAPI, Request
from fastapi.responses import JSONResponse, Response

from . import __version__
from .backends import BackendError, make_vqa_backend
from .config import AppConfig
from .engine import Engine, Session, SessionBusy, history_snapshot
from .evalbench import coherence_score, ms_accuracy, run_inference, write_report
from .model import DatasetError, InvariantError, Modality, UserTurnInput, load_dataset
from .protocol import ProtocolError
from .store import ImageNotFound, ImageStore, sniff_mime


class SessionStore:
    """Thread-safe LRU of live sessions; remembers evicted ids."""

    def __init__(self, capacity: int):
        self.capacity = capacity
        self._sessions: OrderedDict[str, Session] = OrderedDict()
        self._evicted: set[str] = set()
        self._lock = threading.Lock()

    def add(self, session: Session) -> None:
        with self._lock:
            self._sessions[session.id] = session
            while len(self._sessions) > self.capacity:
                evicted_id, _ = self._sessions.popitem(last=False)
                self._evicted.add(evicted_id)

    def get(self, session_id: str) -> Session | None:
        with self._lock:
            session = self._sessions.get(session_id)
            if session is not None:
                self._sessions.move_to_end(session_id)
            return session

    def was_evicted(self, session_id: str) -> bool:
        with self._lock:
            return session_id in self._evicted


@dataclass
class EvalJob:
    id: str
    state: str  # queued | running | done | failed
    dataset_path: str
    started_at: float | None = None
    finished_at: float | None = None
    report_path: str | None = None
    error: str | None = None

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)


def _error(status: int, kind: str, detail: str) -> JSONResponse:
    return JSONResponse(status_code=status, content={"error": kind, "detail": detail})


def create_app(
    config: AppConfig,
    engine: Engine | None = None,
    store: ImageStore | None = None,
) -> FastAPI:
    store = store if store is not None else ImageStore(config.image_store_dir)
    engine = engine if engine is not None else Engine.from_config(config.engine, store)
    sessions = SessionStore(config.session_capacity)
    jobs: dict[str, EvalJob] = {}
    worker = ThreadPoolExecutor(max_workers=1)

    app = FastAPI(title="midsmith", version=__version__)
    app.state.engine = engine
    app.state.store = store

    @app.exception_handler(BackendError)
    async def backend_error_handler(request: Request, exc: BackendError):
        return _error(502, exc.kind, str(exc))

    @app.exception_handler(ProtocolError)
    async def protocol_error_handler(request: Request, exc: ProtocolError):
        return _error(502, "protocol", str(exc))

    @app.get("/v1/health")
    def health():
        return {"version": __version__}

    @app.post("/v1/sessions", status_code=201)
    async def create_session(request: Request):
        body = await request.json() if await request.body() else {}
        seed = body.get("seed")
        if seed is not None and not isinstance(seed, int):
            return _error(400, "validation", "seed must be an integer")
        session = engine.new_session(seed_override=seed)
        sessions.add(session)
        return {"session_id": session.id, "seed": session.seed}

    def _lookup(session_id: str) -> Session | JSONResponse:
        session = sessions.get(session_id)
        if session is not None:
            return session
        if sessions.was_evicted(session_id):
            return _error(410, "evicted", f"session {session_id} was evicted")
        return _error(404, "unknown_session", f"no session {session_id}")

    @app.post("/v1/sessions/{session_id}/messages")
    async def post_message(session_id: str, request: Request):
        found = _lookup(session_id)
        if isinstance(found, JSONResponse):
            return found
        body = await request.json()
        text = body.get("text")
        if not isinstance(text, str) or not text.strip():
            return _error(400, "validation", "text must be a non-empty string")
        image_ref = None
        image_b64 = body.get("image_b64")
        if image_b64 is not None:
            try:
                image_ref = store.put(base64.b64decode(image_b64, validate=True))
            except (binascii.Error, ValueError):
                return _error(400, "validation", "image_b64 is not valid base64")
        try:
            user = UserTurnInput(text=text, image_ref=image_ref)
        except InvariantError as exc:
            return _error(400, "validation", str(exc))
        try:
            result = engine.run_turn(found, user)
        except SessionBusy:
            return _error(409, "busy", "a turn is already in flight on this session")
        payload: dict = {"modality": result.modality.value, "text": result.text}
        if result.modality is Modality.IMAGE and result.image is not None:
            payload["image_url"] = f"/images/{result.image.content_address}"
            payload["drawing_prompt"] = result.text
        if result.correction_trace is not None:
            trace = result.correction_trace
            payload["correction_trace"] = {
                "first_response": trace.first_response,
                "fallback": trace.fallback,
                "verdict": None
                if trace.verdict is None
                else {
                    "kind": trace.verdict.kind,
                    "violated_rule": trace.verdict.violated_rule,
                    "explanation": trace.verdict.explanation,
                    "corrected_output": trace.verdict.corrected_output,
                },
            }
        return payload

    @app.get("/v1/sessions/{session_id}/history")
    def get_history(session_id: str):
        found = _lookup(session_id)
        if isinstance(found, JSONResponse):
            return found
        return {"session_id": session_id, "seed": found.seed, "entries": history_snapshot(found)}

    @app.get("/images/{address}")
    def get_image(address: str):
        try:
            data = store.get(address)
        except ImageNotFound:
            return _error(404, "unknown_image", f"no image {address}")
        return Response(content=data, media_type=sniff_mime(data))

    def _run_eval_job(job: EvalJob, coherence: bool, two_step: bool):
        job.state = "running"
        job.started_at = time.time()
        try:
            dataset = load_dataset(job.dataset_path)
            job_engine = engine
            if two_step != engine.config.two_step:
                job_engine = Engine(
                    dataclasses.replace(engine.config, two_step=two_step),
                    chat=engine.chat,
                    t2i=engine.t2i,
                )
            run = run_inference(dataset, job_engine, parallelism=config.parallelism)
            ms = ms_accuracy(list(run.logs))
            coh = None
            if coherence:
                vqa = make_vqa_backend(config.vqa, store)
                coh = coherence_score(list(run.logs), dataset, vqa)
            out_dir = Path(config.report_dir) / job.id
            write_report(ms, coh, out_dir, failed_conversations=len(run.failures))
            job.report_path = str(out_dir / "report.json")
            job.state = "done"
        except (DatasetError, BackendError, ProtocolError, OSError, ValueError) as exc:
            job.state = "failed"
            job.error = f"{type(exc).__name__}: {exc}"
        finally:
            job.finished_at = time.time()

    @app.post("/v1/eval", status_code=202)
    async def start_eval(request: Request):
        body = await request.json()
        dataset_path = body.get("dataset_path")
        if not isinstance(dataset_path, str) or not dataset_path:
            return _error(400, "validation", "dataset_path must be a non-empty string")
        if not Path(dataset_path).is_file():
            return _error(400, "validation", f"dataset not found: {dataset_path}")
        job = EvalJob(id=str(uuid.uuid4()), state="queued", dataset_path=dataset_path)
        jobs[job.id] = job
        worker.submit(
            _run_eval_job, job, bool(body.get("coherence", False)), bool(body.get("two_step", False))
        )
        return {"job_id": job.id}

    @app.get("/v1/eval/{job_id}")
    def get_eval(job_id: str):
        job = jobs.get(job_id)
        if job is None:
            return _error(404, "unknown_job", f"no eval job {job_id}")
        payload = job.to_dict()
        if job.state == "done" and job.report_path:
            payload["report"] = Path(job.report_path).read_text(encoding="utf-8")
        return payload

    return app


def serve(config: AppConfig) -> None:
    """Run the gateway until interrupted."""
    import uvicorn

    host, port = config.host_port()
    uvicorn.run(create_app(config), host=host, port=port)
