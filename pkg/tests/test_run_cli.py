import csv
import os

import numpy as np
import pytest
import torch

from ccdd.checkpoint import load_checkpoint, load_tensor_file
from ccdd.cli import main
from ccdd.config import RunConfig
from ccdd.data import SyntheticSource
from ccdd.errors import CheckpointError, ConfigError, InputError
from ccdd.run import cmd_eval, cmd_sample, cmd_train, cmd_verify, run_command

TINY = dict(
    tokenizer="char",
    seq_len=12,
    batch_size=8,
    embed_dim=8,
    d_model=16,
    n_heads=2,
    n_layers=1,
    train_steps=12,
    warmup_steps=4,
    sample_steps=6,
    sample_count=3,
    eval_n_mc=2,
    eval_batch_size=16,
    seed=11,
)


@pytest.fixture(scope="module")
def corpus(tmp_path_factory):
    path = tmp_path_factory.mktemp("data") / "corpus.txt"
    src = SyntheticSource("bigram", matrix=np.array([[0.85, 0.15], [0.25, 0.75]]))
    path.write_text(src.to_text(20_000, seed=2))
    return str(path)


@pytest.fixture(scope="module")
def trained(tmp_path_factory, corpus):
    out = str(tmp_path_factory.mktemp("run"))
    cfg = RunConfig({**TINY, "corpus": corpus, "out_dir": out})
    summary = cmd_train(cfg)
    return cfg, summary


class TestTrain:
    def test_metrics_csv_columns_and_rows(self, trained):
        _, summary = trained
        with open(summary["metrics_path"]) as fh:
            rows = list(csv.reader(fh))
        assert rows[0] == ["step", "t_mean", "l_cont", "l_disc", "total", "grad_norm", "lr"]
        assert len(rows) == 1 + TINY["train_steps"]
        assert rows[1][0] == "1" and rows[-1][0] == str(TINY["train_steps"])

    def test_vocab_and_config_persisted(self, trained):
        cfg, summary = trained
        assert os.path.exists(os.path.join(summary["out_dir"], "vocab.txt"))
        assert os.path.exists(os.path.join(summary["out_dir"], "config.cfg"))

    def test_checkpoint_loadable(self, trained):
        _, summary = trained
        ckpt = load_checkpoint(summary["checkpoint_path"])
        assert ckpt.step == TINY["train_steps"]
        assert "codebook.vectors" in ckpt.params

    def test_same_config_reproduces_csv(self, trained, tmp_path, corpus):
        cfg, summary = trained
        out2 = str(tmp_path / "again")
        summary2 = cmd_train(cfg.replace(out_dir=out2))
        a = open(summary["metrics_path"]).read()
        b = open(summary2["metrics_path"]).read()
        assert a == b

    def test_resume_matches_straight_run(self, tmp_path, corpus):
        base = {**TINY, "corpus": corpus, "train_steps": 10, "checkpoint_every": 0}
        straight_out = str(tmp_path / "straight")
        straight = cmd_train(RunConfig({**base, "out_dir": straight_out}))

        half_out = str(tmp_path / "half")
        half = cmd_train(RunConfig({**base, "train_steps": 5, "out_dir": half_out}))
        resume_out = str(tmp_path / "resumed")
        resumed = cmd_train(
            RunConfig(
                {**base, "out_dir": resume_out, "checkpoint": half["checkpoint_path"]}
            )
        )
        straight_params = load_checkpoint(straight["checkpoint_path"]).params
        resumed_params = load_checkpoint(resumed["checkpoint_path"]).params
        for name in straight_params:
            assert torch.equal(straight_params[name], resumed_params[name]), name
        tail = open(straight["metrics_path"]).read().splitlines()[6:]
        resumed_rows = open(resumed["metrics_path"]).read().splitlines()[1:]
        assert tail == resumed_rows

    def test_resume_with_wrong_identity_fails(self, trained, tmp_path, corpus):
        cfg, summary = trained
        bad = cfg.replace(seed=99, out_dir=str(tmp_path / "bad"),
                          checkpoint=summary["checkpoint_path"])
        with pytest.raises(CheckpointError):
            cmd_train(bad)

    def test_train_requires_corpus(self):
        with pytest.raises(ConfigError):
            cmd_train(RunConfig({**TINY, "corpus": ""}))


class TestSample:
    def test_sample_writes_file_and_text(self, trained, tmp_path):
        _, summary = trained
        out = cmd_sample(
            RunConfig(
                {
                    "checkpoint": summary["checkpoint_path"],
                    "out_dir": str(tmp_path / "s"),
                    "sample_count": 3,
                    "sample_steps": 6,
                    "seed": 5,
                }
            )
        )
        assert len(out["samples"]) == 3
        lines = open(out["samples_path"]).read().splitlines()
        assert lines == out["samples"]
        assert all(set(line) <= {"a", "b"} for line in out["samples"])
        assert all(len(line) == TINY["seq_len"] for line in out["samples"])

    def test_sample_requires_checkpoint(self):
        with pytest.raises(InputError) as err:
            cmd_sample(RunConfig({}))
        assert "checkpoint required" in str(err.value)

    def test_sample_seed_controls_output(self, trained, tmp_path):
        _, summary = trained
        kw = {
            "checkpoint": summary["checkpoint_path"],
            "out_dir": str(tmp_path / "s2"),
            "sample_steps": 6,
        }
        a = cmd_sample(RunConfig({**kw, "seed": 1}))
        b = cmd_sample(RunConfig({**kw, "seed": 1}))
        c = cmd_sample(RunConfig({**kw, "seed": 2}))
        assert a["samples"] == b["samples"]
        assert a["samples"] != c["samples"]

    def test_latent_dump_and_nn_decode(self, trained, tmp_path):
        _, summary = trained
        out = cmd_sample(
            RunConfig(
                {
                    "checkpoint": summary["checkpoint_path"],
                    "out_dir": str(tmp_path / "s3"),
                    "sample_steps": 6,
                    "decode_source": "nn_from_latent",
                    "dump_latents": True,
                    "sample_length": 8,
                }
            )
        )
        table = load_tensor_file(out["latents_path"])
        assert table["latents"].shape == (8, 8, TINY["embed_dim"])
        assert all(len(line) == 8 for line in out["samples"])


class TestEval:
    def test_eval_report_fields(self, trained, tmp_path):
        _, summary = trained
        out = cmd_eval(
            RunConfig(
                {
                    "checkpoint": summary["checkpoint_path"],
                    "out_dir": str(tmp_path / "e"),
                    "eval_n_mc": 2,
                    "seed": 3,
                }
            )
        )
        assert out["ppl"] == pytest.approx(np.exp(out["elbo_nats_per_token"]), rel=1e-12)
        assert out["p_r"] == 1.0
        assert os.path.exists(out["report_path"])
        assert os.path.exists(out["csv_path"])

    def test_eval_deterministic(self, trained, tmp_path):
        _, summary = trained
        kw = {
            "checkpoint": summary["checkpoint_path"],
            "out_dir": str(tmp_path / "e2"),
            "eval_n_mc": 2,
            "seed": 3,
        }
        a = cmd_eval(RunConfig(kw))
        b = cmd_eval(RunConfig(kw))
        assert a["elbo_nats_per_token"] == b["elbo_nats_per_token"]


class TestVerify:
    def test_subset_runs_and_writes_csv(self, tmp_path):
        out = cmd_verify(RunConfig({"out_dir": str(tmp_path / "v")}), checks=["mi_decay"])
        assert out["all_pass"]
        assert os.path.exists(out["csv_path"])

    def test_unknown_command(self):
        with pytest.raises(ConfigError):
            run_command("explode", RunConfig({}))


class TestCliExitCodes:
    def test_config_error_exit_two(self, capsys):
        code = main(["train", "--gamma-cont", "-1", "--corpus", "whatever"])
        assert code == 2
        assert "gamma_cont" in capsys.readouterr().err

    def test_sample_without_checkpoint_exit_three(self, capsys):
        code = main(["sample"])
        assert code == 3
        assert "checkpoint required" in capsys.readouterr().err

    def test_verify_subset_exit_zero(self, tmp_path, capsys):
        code = main(["verify", "--checks", "schedule_match", "--out-dir", str(tmp_path)])
        assert code == 0
        out = capsys.readouterr().out
        assert "pass" in out

    def test_full_cli_train_and_sample(self, corpus, tmp_path, capsys):
        out_dir = str(tmp_path / "clirun")
        code = main(
            [
                "train", "--corpus", corpus, "--out-dir", out_dir,
                "--seq-len", "12", "--batch-size", "8", "--embed-dim", "8",
                "--d-model", "16", "--n-heads", "2", "--n-layers", "1",
                "--train-steps", "4", "--warmup-steps", "2", "--seed", "1",
            ]
        )
        assert code == 0
        ckpt = os.path.join(out_dir, "ckpt_step4.ccdd")
        code = main(["sample", "--checkpoint", ckpt, "--sample-steps", "4",
                     "--sample-count", "2", "--out-dir", out_dir])
        assert code == 0
        assert len(capsys.readouterr().out.splitlines()) >= 2

    def test_bad_checkpoint_exit_four(self, tmp_path, capsys):
        bad = tmp_path / "junk.ccdd"
        bad.write_bytes(b"JUNKJUNKJUNK")
        code = main(["sample", "--checkpoint", str(bad)])
        assert code == 4


def test_two_processes_same_config_identical_csv(corpus, tmp_path):
    import subprocess
    import sys

    def run(out_dir):
        args = [
            sys.executable, "-m", "ccdd.cli", "train", "--corpus", corpus,
            "--out-dir", out_dir, "--seq-len", "12", "--batch-size", "8",
            "--embed-dim", "8", "--d-model", "16", "--n-heads", "2",
            "--n-layers", "1", "--train-steps", "4", "--warmup-steps", "2",
            "--seed", "3", "--workers", "1",
        ]
        proc = subprocess.run(args, capture_output=True, text=True, timeout=300)
        assert proc.returncode == 0, proc.stderr
        return open(f"{out_dir}/metrics.csv").read()

    a = run(str(tmp_path / "p1"))
    b = run(str(tmp_path / "p2"))
    assert a == b
