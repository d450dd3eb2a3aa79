"""Request-to-config translation and command execution.

The CLI in local mode and the HTTP app both run commands through these
functions, so behaviour cannot drift between the two entry points.
"""

from __future__ import annotations

from ..config import RunConfig, parse_config_text, parse_overrides
from ..run import cmd_eval, cmd_sample, cmd_train, cmd_verify
from .schemas import (
    EvalRequest,
    EvalResponse,
    SampleRequest,
    SampleResponse,
    VerifyRequest,
    VerifyResponse,
    VerifyRow,
)


def train_config(req) -> RunConfig:
    cfg = parse_config_text(req.config_text) if req.config_text else RunConfig()
    if req.overrides:
        cfg = cfg.replace(**parse_overrides(req.overrides))
    if req.resume_from:
        cfg = cfg.replace(checkpoint=req.resume_from)
    return cfg


def do_train(req) -> dict:
    return cmd_train(train_config(req))


_SAMPLE_KEY_MAP = {
    "count": "sample_count",
    "length": "sample_length",
    "steps": "sample_steps",
    "cfg_w": "cfg_w",
    "eta_ddpm": "eta_ddpm",
    "temperature": "temperature",
    "seed": "seed",
    "variance_mode": "variance_mode",
    "grid_shape": "grid_shape",
    "decode_source": "decode_source",
    "argmax_tokens": "argmax_tokens",
    "dump_latents": "dump_latents",
    "out_dir": "out_dir",
}


def sample_config(req: SampleRequest) -> RunConfig:
    overrides = {"checkpoint": req.checkpoint}
    for attr, key in _SAMPLE_KEY_MAP.items():
        value = getattr(req, attr)
        if value is not None:
            overrides[key] = value
    return RunConfig(overrides)


def do_sample(req: SampleRequest) -> SampleResponse:
    return SampleResponse(**cmd_sample(sample_config(req)))


_EVAL_KEY_MAP = {
    "corpus": "corpus",
    "p_r": "eval_p_r",
    "n_mc_times": "eval_n_mc",
    "discrete_ppl_only": "discrete_ppl_only",
    "seed": "seed",
    "batch_size": "eval_batch_size",
    "out_dir": "out_dir",
}


def eval_config(req: EvalRequest) -> RunConfig:
    overrides = {"checkpoint": req.checkpoint}
    for attr, key in _EVAL_KEY_MAP.items():
        value = getattr(req, attr)
        if value is not None:
            overrides[key] = value
    return RunConfig(overrides)


def do_eval(req: EvalRequest) -> EvalResponse:
    return EvalResponse(**cmd_eval(eval_config(req)))


def do_verify(req: VerifyRequest) -> VerifyResponse:
    cfg = RunConfig({"out_dir": req.out_dir} if req.out_dir else {})
    result = cmd_verify(cfg, checks=req.checks)
    return VerifyResponse(
        rows=[VerifyRow(**row) for row in result["rows"]],
        all_pass=result["all_pass"],
        csv_path=result["csv_path"],
    )
