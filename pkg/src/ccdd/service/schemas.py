"""Pydantic request/response models for the lab server."""

from __future__ import annotations

from typing import Any, Optional

from pydantic import BaseModel, Field


class HealthResponse(BaseModel):
    status: str = "ok"
    version: str


class TrainRequest(BaseModel):
    config_text: Optional[str] = Field(None, description="full config file contents")
    overrides: dict[str, str] = Field(default_factory=dict, description="key=value overrides")
    resume_from: Optional[str] = Field(None, description="checkpoint to resume from")


class JobState(BaseModel):
    job_id: str
    command: str
    status: str  # pending | running | done | error
    error: Optional[str] = None
    result: Optional[dict[str, Any]] = None


class SampleRequest(BaseModel):
    checkpoint: str
    count: Optional[int] = None
    length: Optional[int] = None
    steps: Optional[int] = None
    cfg_w: Optional[float] = None
    eta_ddpm: Optional[float] = None
    temperature: Optional[float] = None
    seed: Optional[int] = None
    variance_mode: Optional[str] = None
    grid_shape: Optional[str] = None
    decode_source: Optional[str] = None
    argmax_tokens: Optional[bool] = None
    dump_latents: Optional[bool] = None
    out_dir: Optional[str] = None


class SampleResponse(BaseModel):
    samples: list[str]
    forced_unmask: int
    samples_path: str
    latents_path: Optional[str] = None


class EvalRequest(BaseModel):
    checkpoint: str
    corpus: Optional[str] = None
    p_r: Optional[float] = None
    n_mc_times: Optional[int] = None
    discrete_ppl_only: Optional[bool] = None
    seed: Optional[int] = None
    batch_size: Optional[int] = None
    out_dir: Optional[str] = None


class EvalResponse(BaseModel):
    elbo_nats_per_token: float
    ppl: float
    n_mc_times: int
    p_r: float
    loss_cont: float
    loss_disc: float
    half_width: float
    discrete_only: bool
    report_path: str
    csv_path: str


class VerifyRequest(BaseModel):
    checks: Optional[list[str]] = Field(None, description="subset of named checks; all when omitted")
    out_dir: Optional[str] = None


class VerifyRow(BaseModel):
    name: str
    value: float
    threshold: str
    passed: bool


class VerifyResponse(BaseModel):
    rows: list[VerifyRow]
    all_pass: bool
    csv_path: str


class ErrorResponse(BaseModel):
    category: str
    detail: str
