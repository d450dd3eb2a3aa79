"""Command-line client for the lab.

Every config key is a flag (flag beats config file); commands run in-process
by default or against a lab server via --server. `serve` starts the server.
"""

from __future__ import annotations

import argparse
import json
import sys
import time

from .config import SCHEMA, RunConfig, load_config, parse_overrides
from .errors import (
    CcddError,
    CheckpointError,
    ConfigError,
    DomainError,
    InputError,
    NumericError,
)

EXIT_CODES = (
    (ConfigError, 2),
    (InputError, 3),
    (CheckpointError, 4),
    (NumericError, 5),
    (DomainError, 6),
    (CcddError, 1),
)


def _add_config_flags(parser: argparse.ArgumentParser) -> None:
    group = parser.add_argument_group("config keys (override the config file)")
    for key, spec in SCHEMA.items():
        group.add_argument(
            f"--{key.replace('_', '-')}",
            dest=f"cfg_{key}",
            metavar=spec.type.__name__.upper(),
            default=None,
            help=spec.help or f"default: {spec.default!r}",
        )


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="ccdd", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", default=None, help="path to a key=value config file")
    common.add_argument("--server", default=None, help="lab server URL (runs remotely)")
    _add_config_flags(common)

    sub.add_parser("train", parents=[common], help="train a model, writing metrics and checkpoints")
    sub.add_parser("sample", parents=[common], help="draw samples from a checkpoint")
    sub.add_parser("eval", parents=[common], help="estimate the likelihood bound on a corpus")
    verify = sub.add_parser("verify", parents=[common], help="run the theory verification suite")
    verify.add_argument("--checks", default=None, help="comma-separated subset of checks")
    serve = sub.add_parser("serve", help="start the lab server")
    serve.add_argument("--host", default="127.0.0.1")
    serve.add_argument("--port", type=int, default=8000)
    return parser


def _config_from_args(args) -> RunConfig:
    cfg = load_config(args.config) if args.config else RunConfig()
    flags = {
        key: getattr(args, f"cfg_{key}")
        for key in SCHEMA
        if getattr(args, f"cfg_{key}", None) is not None
    }
    if flags:
        cfg = cfg.replace(**parse_overrides(flags))
    return cfg


def _flag_strings(args) -> dict[str, str]:
    return {
        key: str(getattr(args, f"cfg_{key}"))
        for key in SCHEMA
        if getattr(args, f"cfg_{key}", None) is not None
    }


def _print_verify_rows(rows) -> bool:
    width = max(len(r["name"]) for r in rows)
    for r in rows:
        mark = "pass" if r["passed"] else "FAIL"
        print(f"{mark}  {r['name']:<{width}}  value={r['value']:.6g}  ({r['threshold']})")
    ok = all(r["passed"] for r in rows)
    print(f"{sum(r['passed'] for r in rows)}/{len(rows)} checks passed")
    return ok


def _run_local(args) -> int:
    from .run import run_command

    cfg = _config_from_args(args)
    if args.command == "verify":
        checks = args.checks.split(",") if args.checks else None
        from .run import cmd_verify

        result = cmd_verify(cfg, checks=checks)
        ok = _print_verify_rows(result["rows"])
        print(f"csv: {result['csv_path']}")
        return 0 if ok else 1
    result = run_command(args.command, cfg)
    if args.command == "train":
        print(json.dumps(result, indent=2))
    elif args.command == "sample":
        for line in result["samples"]:
            print(line)
        print(f"wrote {result['samples_path']} (forced unmask: {result['forced_unmask']})")
        if result.get("latents_path"):
            print(f"latents: {result['latents_path']}")
    elif args.command == "eval":
        for key in (
            "elbo_nats_per_token", "ppl", "half_width", "loss_cont", "loss_disc",
            "n_mc_times", "p_r", "discrete_only", "report_path",
        ):
            print(f"{key}: {result[key]}")
    return 0


def _run_remote(args) -> int:
    import httpx

    base = args.server.rstrip("/")
    client = httpx.Client(base_url=base, timeout=600.0)
    if args.command == "train":
        config_text = None
        if args.config:
            with open(args.config, "r", encoding="utf-8") as fh:
                config_text = fh.read()
        payload = {"config_text": config_text, "overrides": _flag_strings(args)}
        resp = client.post("/train", json=payload)
        _raise_for_error(resp)
        job = resp.json()
        print(f"job {job['job_id']} started")
        while job["status"] == "running":
            time.sleep(1.0)
            resp = client.get(f"/jobs/{job['job_id']}")
            _raise_for_error(resp)
            job = resp.json()
        if job["status"] == "error":
            print(f"error: {job['error']}", file=sys.stderr)
            return 1
        print(json.dumps(job["result"], indent=2))
        return 0
    if args.command == "sample":
        flags = _flag_strings(args)
        body = {
            "checkpoint": flags.get("checkpoint", ""),
            "count": flags.get("sample_count"),
            "length": flags.get("sample_length"),
            "steps": flags.get("sample_steps"),
            "cfg_w": flags.get("cfg_w"),
            "eta_ddpm": flags.get("eta_ddpm"),
            "temperature": flags.get("temperature"),
            "seed": flags.get("seed"),
            "variance_mode": flags.get("variance_mode"),
            "decode_source": flags.get("decode_source"),
            "argmax_tokens": flags.get("argmax_tokens"),
            "dump_latents": flags.get("dump_latents"),
            "out_dir": flags.get("out_dir"),
        }
        resp = client.post("/sample", json=body)
        _raise_for_error(resp)
        data = resp.json()
        for line in data["samples"]:
            print(line)
        print(f"server wrote {data['samples_path']}")
        return 0
    if args.command == "eval":
        flags = _flag_strings(args)
        body = {
            "checkpoint": flags.get("checkpoint", ""),
            "corpus": flags.get("corpus"),
            "p_r": flags.get("eval_p_r"),
            "n_mc_times": flags.get("eval_n_mc"),
            "discrete_ppl_only": flags.get("discrete_ppl_only"),
            "seed": flags.get("seed"),
            "batch_size": flags.get("eval_batch_size"),
            "out_dir": flags.get("out_dir"),
        }
        resp = client.post("/eval", json=body)
        _raise_for_error(resp)
        print(json.dumps(resp.json(), indent=2))
        return 0
    if args.command == "verify":
        checks = args.checks.split(",") if args.checks else None
        resp = client.post("/verify", json={"checks": checks})
        _raise_for_error(resp)
        data = resp.json()
        ok = _print_verify_rows(data["rows"])
        return 0 if ok else 1
    raise ConfigError(f"command {args.command} is not available remotely")


def _raise_for_error(resp) -> None:
    if resp.status_code >= 400:
        try:
            detail = resp.json()
        except Exception:
            detail = resp.text
        raise CcddError(f"server error {resp.status_code}: {detail}")


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if args.command == "serve":
        import uvicorn

        from .service import app

        uvicorn.run(app, host=args.host, port=args.port)
        return 0
    try:
        if getattr(args, "server", None):
            return _run_remote(args)
        return _run_local(args)
    except CcddError as exc:
        print(f"error: {exc}", file=sys.stderr)
        for cls, code in EXIT_CODES:
            if isinstance(exc, cls):
                return code
        return 1


if __name__ == "__main__":
    sys.exit(main())
