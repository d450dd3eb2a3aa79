"""Command orchestration shared by the CLI and the HTTP service.

Identity-defining settings (data, schedules, model, optimizer) always come
from the training config; when a command operates on a checkpoint, the
checkpoint's stored config is authoritative for those keys and the request
only controls operational knobs (sampler settings, eval protocol, seeds,
output paths).
"""

from __future__ import annotations

import csv
import os
import time
from dataclasses import asdict

import numpy as np
import torch

from .checkpoint import Checkpoint, load_checkpoint, save_checkpoint, save_tensor_file
from .config import RunConfig, parse_config_text
from .data import ByteTokenizer, CharTokenizer, batch_for_step, load_corpus, pack_windows
from .denoiser import DenoiserConfig, build_denoiser
from .embedder import Codebook, build_codebook
from .errors import CheckpointError, ConfigError, InputError
from .evaluation import elbo
from .sampler import SamplerConfig, sample
from .schedules import ContinuousSchedule, DiscreteSchedule, SchedulePair
from .theoria import run_verification_suite
from .training import AdamW, TrainSettings, train_step

CSV_COLUMNS = ["step", "t_mean", "l_cont", "l_disc", "total", "grad_norm", "lr"]


def apply_thread_mode(cfg: RunConfig) -> None:
    if cfg.workers == 1:
        torch.set_num_threads(1)
    else:
        torch.set_num_threads(cfg.workers)


def build_schedule_pair(cfg: RunConfig) -> SchedulePair:
    cont = ContinuousSchedule(cfg.cont_schedule, beta=cfg.cont_beta)
    if cfg.disc_schedule == "uniform":
        disc = DiscreteSchedule("uniform", rate=cfg.uniform_rate)
    else:
        disc = DiscreteSchedule("masked_linear")
    return SchedulePair(cont, disc, cfg.pairing)


def build_run_codebook(cfg: RunConfig, vocab_size: int) -> Codebook:
    dim = vocab_size if cfg.embedder_mode == "onehot_simplex" else cfg.embed_dim
    return build_codebook(
        cfg.embedder_mode,
        vocab_size,
        dim,
        seed=cfg.seed,
        mix_weight=cfg.ctx_weight,
        mix_radius=cfg.ctx_radius,
    )


def build_model(cfg: RunConfig, vocab_size: int, d_latent: int):
    dcfg = DenoiserConfig(
        arch=cfg.arch,
        n_layers=cfg.n_layers,
        d_model=cfg.d_model,
        n_heads=cfg.n_heads,
        d_latent=d_latent,
        vocab_augmented=vocab_size + 1,
        n_experts=cfg.n_experts,
        fuse=cfg.fuse,
        use_rotary=cfg.use_rotary,
    )
    return build_denoiser(dcfg, seed=cfg.seed)


def build_optimizer(cfg: RunConfig, model) -> AdamW:
    return AdamW(
        dict(model.named_parameters()),
        lr=cfg.lr,
        warmup_steps=cfg.warmup_steps,
        weight_decay=cfg.weight_decay,
        clip_norm=cfg.grad_clip,
        betas=(cfg.adam_beta1, cfg.adam_beta2),
        eps=cfg.adam_eps,
    )


def build_train_settings(cfg: RunConfig, pair, codebook, vocab_size) -> TrainSettings:
    return TrainSettings(
        pair=pair,
        codebook=codebook,
        vocab_size=vocab_size,
        p_drop=cfg.p_drop,
        p_r_min=cfg.p_r_min,
        p_r_max=cfg.p_r_max,
        rep_mask_mode=cfg.rep_mask_mode,
        t_floor=cfg.t_floor,
        gamma_cont=cfg.gamma_cont,
        gamma_disc=cfg.gamma_disc,
        lambda_cont=cfg.lambda_cont,
        lambda_disc=cfg.lambda_disc,
    )


def _rng_state_bytes(gen: torch.Generator) -> bytes:
    return gen.get_state().numpy().tobytes()


def _restore_rng(gen: torch.Generator, blob: bytes) -> None:
    state = torch.from_numpy(np.frombuffer(blob, dtype=np.uint8).copy())
    gen.set_state(state)


def _fmt(x: float) -> str:
    return repr(float(x))


def cmd_train(cfg: RunConfig) -> dict:
    if not cfg.corpus:
        raise ConfigError("corpus: a corpus path is required for training")
    apply_thread_mode(cfg)
    out_dir = cfg.resolved_out_dir()
    os.makedirs(out_dir, exist_ok=True)

    windows, tokenizer = load_corpus(cfg.corpus, cfg.tokenizer, cfg.seq_len, cfg.seed)
    vocab_size = tokenizer.vocab_size
    if isinstance(tokenizer, CharTokenizer):
        tokenizer.save_vocab(os.path.join(out_dir, "vocab.txt"))

    pair = build_schedule_pair(cfg)
    codebook = build_run_codebook(cfg, vocab_size)
    model = build_model(cfg, vocab_size, codebook.dim)
    optimizer = build_optimizer(cfg, model)
    settings = build_train_settings(cfg, pair, codebook, vocab_size)
    rng = torch.Generator().manual_seed(cfg.seed)

    start_step = 0
    if cfg.checkpoint:
        ckpt = load_checkpoint(cfg.checkpoint, expected_identity=cfg.identity_text())
        with torch.no_grad():
            for name, p in model.named_parameters():
                p.copy_(ckpt.params[name])
        optimizer.load_state_tensors(ckpt.opt_state, ckpt.step)
        _restore_rng(rng, ckpt.rng_state)
        start_step = ckpt.step
        if start_step > cfg.train_steps:
            raise ConfigError(
                f"train_steps: checkpoint is already at step {start_step}, "
                f"beyond the requested {cfg.train_steps}"
            )

    with open(os.path.join(out_dir, "config.cfg"), "w", encoding="utf-8") as fh:
        fh.write(cfg.to_text())

    metrics_path = os.path.join(out_dir, "metrics.csv")
    ckpt_path = os.path.join(out_dir, f"ckpt_step{cfg.train_steps}.ccdd")
    started = time.time()
    last = None
    # resuming into a directory that already has metrics keeps the old rows
    append = start_step > 0 and os.path.exists(metrics_path)
    with open(metrics_path, "a" if append else "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        if not append:
            writer.writerow(CSV_COLUMNS)
        for step in range(start_step + 1, cfg.train_steps + 1):
            x0 = batch_for_step(windows, cfg.batch_size, cfg.seed, step)
            stats = train_step(model, optimizer, x0, rng, settings, step_index=step)
            last = stats
            writer.writerow(
                [
                    step,
                    _fmt(stats.t_mean),
                    _fmt(stats.breakdown.l_cont),
                    _fmt(stats.breakdown.l_disc),
                    _fmt(stats.breakdown.total),
                    _fmt(stats.grad_norm),
                    _fmt(stats.lr),
                ]
            )
            if cfg.checkpoint_every and step % cfg.checkpoint_every == 0 and step != cfg.train_steps:
                _save_train_checkpoint(
                    os.path.join(out_dir, f"ckpt_step{step}.ccdd"),
                    cfg, model, codebook, optimizer, rng, step,
                )
    _save_train_checkpoint(ckpt_path, cfg, model, codebook, optimizer, rng, cfg.train_steps)

    return {
        "out_dir": out_dir,
        "steps": cfg.train_steps,
        "vocab_size": vocab_size,
        "checkpoint_path": ckpt_path,
        "metrics_path": metrics_path,
        "elapsed_s": time.time() - started,
        "final": None if last is None else asdict(last.breakdown),
    }


def _save_train_checkpoint(path, cfg, model, codebook, optimizer, rng, step) -> None:
    params = {name: p.detach().clone() for name, p in model.named_parameters()}
    params["codebook.vectors"] = codebook.vectors.clone()
    save_checkpoint(
        path,
        Checkpoint(
            config_text=cfg.to_text(),
            params=params,
            opt_state=optimizer.state_tensors(),
            rng_state=_rng_state_bytes(rng),
            step=step,
        ),
    )


def load_trained_run(cfg: RunConfig):
    """Rebuild (config, model, codebook, pair, tokenizer) from a checkpoint.

    The returned config is the checkpoint's; the caller keeps using the
    request config for operational knobs.
    """
    if not cfg.checkpoint:
        raise InputError("checkpoint required: pass the checkpoint path")
    ckpt = load_checkpoint(cfg.checkpoint)
    run_cfg = parse_config_text(ckpt.config_text)

    stored = ckpt.params.get("codebook.vectors")
    if stored is None:
        raise CheckpointError("checkpoint is missing the codebook matrix")
    # the codebook is rebuilt in full precision from the recorded seed; the
    # stored f32 copy guards against a drifted config
    vocab_size = stored.shape[0]
    codebook = build_run_codebook(run_cfg, vocab_size)
    if not torch.allclose(stored.double(), codebook.vectors, atol=1e-6):
        raise CheckpointError(
            "stored codebook does not match the one rebuilt from the config seed"
        )
    model = build_model(run_cfg, vocab_size, codebook.dim)
    with torch.no_grad():
        for name, p in model.named_parameters():
            if name not in ckpt.params:
                raise CheckpointError(f"checkpoint is missing parameter {name!r}")
            p.copy_(ckpt.params[name])
    model.eval()
    pair = build_schedule_pair(run_cfg)
    tokenizer = _tokenizer_for(run_cfg, cfg)
    return run_cfg, model, codebook, pair, tokenizer, ckpt


def _tokenizer_for(run_cfg: RunConfig, request_cfg: RunConfig):
    if run_cfg.tokenizer == "byte":
        return ByteTokenizer()
    vocab_path = os.path.join(os.path.dirname(request_cfg.checkpoint), "vocab.txt")
    if os.path.exists(vocab_path):
        return CharTokenizer.load_vocab(vocab_path)
    corpus = request_cfg.corpus or run_cfg.corpus
    if corpus and os.path.exists(corpus):
        with open(corpus, "rb") as fh:
            return CharTokenizer.from_text(fh.read().decode("utf-8"))
    raise InputError(
        "cannot rebuild the char vocabulary: no vocab.txt beside the checkpoint "
        "and no readable corpus"
    )


def cmd_sample(cfg: RunConfig) -> dict:
    apply_thread_mode(cfg)
    run_cfg, model, codebook, pair, tokenizer, _ = load_trained_run(cfg)
    out_dir = cfg.resolved_out_dir()
    os.makedirs(out_dir, exist_ok=True)

    sampler_cfg = SamplerConfig(
        n_steps=cfg.sample_steps,
        t_floor=run_cfg.t_floor,
        eta_ddpm=cfg.eta_ddpm,
        cfg_w=cfg.cfg_w,
        variance_mode=cfg.variance_mode,
        temperature=cfg.temperature,
        decode_source=cfg.decode_source,
        argmax_tokens=cfg.argmax_tokens,
        grid_shape=cfg.grid_shape,
    )
    rng = torch.Generator().manual_seed(cfg.seed)
    length = cfg.sample_length if cfg.sample_length > 0 else run_cfg.seq_len
    with torch.no_grad():
        result = sample(
            model,
            sampler_cfg,
            pair.continuous,
            pair.discrete,
            codebook.vocab_size,
            length=length,
            batch=cfg.sample_count,
            d_latent=codebook.dim,
            rng=rng,
            codebook=codebook,
        )
    texts = [tokenizer.decode(row.tolist()) for row in result.tokens]
    samples_path = os.path.join(out_dir, "samples.txt")
    with open(samples_path, "w", encoding="utf-8") as fh:
        for line in texts:
            fh.write(line.replace("\n", " ") + "\n")
    latents_path = None
    if cfg.dump_latents:
        latents_path = os.path.join(out_dir, "latents.ccdt")
        save_tensor_file(
            latents_path,
            {"latents": result.latents, "tokens": result.tokens.to(torch.float32)},
        )
    return {
        "samples": texts,
        "samples_path": samples_path,
        "latents_path": latents_path,
        "forced_unmask": result.forced_unmask,
    }


def cmd_eval(cfg: RunConfig) -> dict:
    apply_thread_mode(cfg)
    run_cfg, model, codebook, pair, tokenizer, _ = load_trained_run(cfg)
    out_dir = cfg.resolved_out_dir()
    os.makedirs(out_dir, exist_ok=True)

    corpus = cfg.corpus or run_cfg.corpus
    if not corpus:
        raise InputError("no corpus available for evaluation")
    with open(corpus, "rb") as fh:
        blob = fh.read()
    if not blob:
        raise InputError(f"corpus {corpus} is empty")
    if run_cfg.tokenizer == "byte":
        ids = tokenizer.encode(blob)
    else:
        ids = tokenizer.encode(blob.decode("utf-8"))
    windows = pack_windows(ids, run_cfg.seq_len, cfg.seed)

    report = elbo(
        model,
        windows,
        n_mc_times=cfg.eval_n_mc,
        p_r=cfg.eval_p_r,
        pair=pair,
        codebook=codebook,
        vocab_size=codebook.vocab_size,
        seed=cfg.seed,
        batch_size=cfg.eval_batch_size,
        t_floor=run_cfg.t_floor,
        gamma_cont=run_cfg.gamma_cont,
        gamma_disc=run_cfg.gamma_disc,
        lambda_cont=run_cfg.lambda_cont,
        lambda_disc=run_cfg.lambda_disc,
        rep_mask_mode=run_cfg.rep_mask_mode,
        discrete_only=cfg.discrete_ppl_only,
    )
    report_path = os.path.join(out_dir, "eval_report.txt")
    with open(report_path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(report.lines()) + "\n")
    csv_path = os.path.join(out_dir, "eval.csv")
    with open(csv_path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(list(asdict(report)))
        writer.writerow([_fmt(v) if isinstance(v, float) else v for v in asdict(report).values()])
    payload = asdict(report)
    payload["report_path"] = report_path
    payload["csv_path"] = csv_path
    return payload


def cmd_verify(cfg: RunConfig, checks=None) -> dict:
    apply_thread_mode(cfg)
    out_dir = cfg.resolved_out_dir()
    os.makedirs(out_dir, exist_ok=True)
    rows = run_verification_suite(checks)
    csv_path = os.path.join(out_dir, "verify.csv")
    with open(csv_path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["check", "value", "threshold", "pass"])
        for row in rows:
            writer.writerow([row.name, _fmt(row.value), row.threshold, row.passed])
    return {
        "rows": [asdict(row) for row in rows],
        "all_pass": all(row.passed for row in rows),
        "csv_path": csv_path,
    }


COMMANDS = {
    "train": cmd_train,
    "sample": cmd_sample,
    "eval": cmd_eval,
    "verify": cmd_verify,
}


def run_command(command: str, cfg: RunConfig) -> dict:
    if command not in COMMANDS:
        raise ConfigError(f"unknown command {command!r}; expected one of {sorted(COMMANDS)}")
    return COMMANDS[command](cfg)
