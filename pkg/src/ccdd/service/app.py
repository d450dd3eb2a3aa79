"""FastAPI wrapper around the lab commands.

Training runs as a background job (long-running, poll via /jobs/{id});
sampling, evaluation, and verification respond synchronously.
"""

from __future__ import annotations

import threading
import uuid

from fastapi import FastAPI, HTTPException

from .. import __version__
from ..errors import (
    CcddError,
    CheckpointError,
    ConfigError,
    DomainError,
    InputError,
    NumericError,
)
from . import handlers
from .schemas import (
    EvalRequest,
    EvalResponse,
    HealthResponse,
    JobState,
    SampleRequest,
    SampleResponse,
    TrainRequest,
    VerifyRequest,
    VerifyResponse,
)


def _category(exc: Exception) -> str:
    for cls, name in (
        (ConfigError, "config"),
        (InputError, "input"),
        (CheckpointError, "checkpoint"),
        (NumericError, "numeric"),
        (DomainError, "domain"),
    ):
        if isinstance(exc, cls):
            return name
    return "internal"


class JobManager:
    def __init__(self):
        self._jobs: dict[str, JobState] = {}
        self._lock = threading.Lock()

    def submit(self, command: str, fn) -> JobState:
        job_id = uuid.uuid4().hex[:12]
        state = JobState(job_id=job_id, command=command, status="running")
        with self._lock:
            self._jobs[job_id] = state

        def work():
            try:
                result = fn()
                with self._lock:
                    self._jobs[job_id] = state.model_copy(
                        update={"status": "done", "result": result}
                    )
            except Exception as exc:  # surface the failure through the job record
                with self._lock:
                    self._jobs[job_id] = state.model_copy(
                        update={"status": "error", "error": f"{_category(exc)}: {exc}"}
                    )

        threading.Thread(target=work, daemon=True).start()
        return state

    def get(self, job_id: str) -> JobState | None:
        with self._lock:
            return self._jobs.get(job_id)


def create_app() -> FastAPI:
    app = FastAPI(title="ccdd lab server", version=__version__)
    jobs = JobManager()

    @app.exception_handler(CcddError)
    async def ccdd_error_handler(request, exc: CcddError):
        from fastapi.responses import JSONResponse

        return JSONResponse(
            status_code=400, content={"category": _category(exc), "detail": str(exc)}
        )

    @app.get("/health", response_model=HealthResponse)
    def health():
        return HealthResponse(version=__version__)

    @app.post("/train", response_model=JobState)
    def train(req: TrainRequest):
        handlers.train_config(req)  # validate before accepting the job
        return jobs.submit("train", lambda: handlers.do_train(req))

    @app.get("/jobs/{job_id}", response_model=JobState)
    def job_state(job_id: str):
        state = jobs.get(job_id)
        if state is None:
            raise HTTPException(status_code=404, detail=f"no such job {job_id}")
        return state

    @app.post("/sample", response_model=SampleResponse)
    def sample(req: SampleRequest):
        return handlers.do_sample(req)

    @app.post("/eval", response_model=EvalResponse)
    def evaluate(req: EvalRequest):
        return handlers.do_eval(req)

    @app.post("/verify", response_model=VerifyResponse)
    def verify(req: VerifyRequest):
        return handlers.do_verify(req)

    return app


app = create_app()
