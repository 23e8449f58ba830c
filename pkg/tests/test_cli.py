"""Command-line contract: exit codes, schemas, determinism."""

from __future__ import annotations

import csv
import json

import numpy as np
import pytest

from simtpr.cli import main
from simtpr.config import resolve
from simtpr.synthdata import dataset_sha256, load_dataset
from simtpr.train import load_checkpoint, make_stream, pretrain
from simtpr import diagnostics


FAST = ["--set", "steps=4", "--set", "log_every=2", "--set", "n_seq=4",
        "--set", "t_seq=6", "--set", "latent_dim=8",
        "--set", "encoder_channels=[4,8]", "--set", "rank_samples=32",
        "--set", "cosine_pairs=16"]


def run(capsys, argv):
    code = main(argv)
    captured = capsys.readouterr()
    return code, captured.out, captured.err


@pytest.fixture(scope="module")
def cli_dataset(tmp_path_factory):
    path = tmp_path_factory.mktemp("cli") / "d.stpr"
    code = main(["gen-data", "--seed", "1", "--traj", "12", "--len", "32",
                 "--height", "8", "--width", "8", "--out", str(path)])
    assert code == 0
    return str(path)


@pytest.fixture(scope="module")
def cli_run(tmp_path_factory, cli_dataset):
    out_root = tmp_path_factory.mktemp("runs")
    code = main(["pretrain", "--dataset", cli_dataset, "--out-root",
                 str(out_root)] + FAST)
    assert code == 0
    run_dirs = list(out_root.iterdir())
    assert len(run_dirs) == 1
    return run_dirs[0]


# ---------------------------------------------------------------------------
# gen-data
# ---------------------------------------------------------------------------

def test_gen_data_writes_manifest(tmp_path, capsys):
    out = tmp_path / "d.stpr"
    code, stdout, _ = run(capsys, ["gen-data", "--seed", "1", "--traj", "4",
                                   "--len", "16", "--height", "8", "--width", "8",
                                   "--out", str(out)])
    assert code == 0
    payload = json.loads(stdout)
    manifest = json.load(open(payload["manifest"]))
    assert manifest["sha256"] == dataset_sha256(str(out))
    assert manifest["config"]["seed"] == 1


def test_gen_data_repeat_identical_sha(tmp_path, capsys):
    args = ["gen-data", "--seed", "9", "--traj", "4", "--len", "16",
            "--height", "8", "--width", "8", "--out"]
    _, out1, _ = run(capsys, args + [str(tmp_path / "a.stpr")])
    _, out2, _ = run(capsys, args + [str(tmp_path / "b.stpr")])
    assert json.loads(out1)["sha256"] == json.loads(out2)["sha256"]


def test_gen_data_rejects_short_trajectories(tmp_path, capsys):
    code, _, err = run(capsys, ["gen-data", "--seed", "1", "--traj", "4",
                                "--len", "1", "--out", str(tmp_path / "x.stpr")])
    assert code == 2
    assert "len" in err


def test_gen_data_io_failure(tmp_path, capsys):
    code, _, _ = run(capsys, ["gen-data", "--seed", "1", "--traj", "4",
                              "--len", "8", "--out",
                              str(tmp_path / "missing" / "x.stpr")])
    assert code == 3


# ---------------------------------------------------------------------------
# pretrain
# ---------------------------------------------------------------------------

def test_pretrain_outputs(cli_run, capsys):
    assert (cli_run / "metrics.csv").exists()
    assert (cli_run / "final.ckpt").exists()
    cfg = json.load(open(cli_run / "config.json"))
    assert cfg["steps"] == 4
    header = (cli_run / "metrics.csv").read_text().splitlines()[0]
    assert header == ("epoch,step,loss_total,loss_sim,loss_decorr,loss_decorr_on,"
                      "loss_decorr_off,loss_contrastive,loss_action,loss_recon,"
                      "feat_rank,cos_k1,cos_k3,cos_k5,wall_secs")


def test_pretrain_stdout_is_json(tmp_path, cli_dataset, capsys):
    code, stdout, err = run(capsys, ["pretrain", "--dataset", cli_dataset,
                                     "--out-root", str(tmp_path)] + FAST)
    assert code == 0
    payload = json.loads(stdout)  # stdout must stay machine-readable
    assert "metrics" in payload and "checkpoint" in payload
    assert "pretraining" in err  # human logs on stderr


def test_pretrain_config_file_and_overrides(tmp_path, cli_dataset, capsys):
    cfg_path = tmp_path / "base.json"
    json.dump({"steps": 2, "lambda_d": 0.05, "t_seq": 6, "n_seq": 4,
               "latent_dim": 8, "encoder_channels": [4, 8],
               "rank_samples": 16, "cosine_pairs": 8}, open(cfg_path, "w"))
    code, stdout, _ = run(capsys, ["pretrain", "--config", str(cfg_path),
                                   "--dataset", cli_dataset,
                                   "--set", "lambda_d=0",
                                   "--out-root", str(tmp_path / "runs")])
    assert code == 0
    resolved = json.load(open(json.loads(stdout)["config"]))
    # resolved config equals file merged with overrides
    assert resolved["lambda_d"] == 0
    assert resolved["steps"] == 2
    want = resolve(json.load(open(cfg_path)),
                   {"lambda_d": 0, "dataset": cli_dataset})
    assert resolved == want.flat
    # lambda_d=0 turns the run into a similarity-only configuration
    with open(tmp_path / "runs" / f"run-{want.run_hash()}" / "metrics.csv") as fh:
        rows = list(csv.DictReader(fh))
    assert rows[-1]["loss_decorr"] == ""
    assert rows[-1]["loss_total"] == rows[-1]["loss_sim"]


def test_pretrain_contrastive_variant_config(tmp_path, cli_dataset, capsys):
    code, stdout, _ = run(capsys, ["pretrain", "--dataset", cli_dataset,
                                   "--set", "loss=contrastive",
                                   "--set", "temperature=0.1",
                                   "--out-root", str(tmp_path)] + FAST)
    assert code == 0
    resolved = json.load(open(json.loads(stdout)["config"]))
    assert resolved["loss"] == "contrastive"
    assert resolved["temperature"] == 0.1
    assert resolved["lambda_d"] == 0.0  # repulsion-only row unless overridden
    cfg = resolve(resolved)
    assert cfg.similarity_kind() == "contrastive"


def test_pretrain_bad_config_exit_2(tmp_path, cli_dataset, capsys):
    code, _, err = run(capsys, ["pretrain", "--dataset", cli_dataset,
                                "--set", "loss=bogus", "--out-root", str(tmp_path)])
    assert code == 2
    assert "loss" in err


def test_pretrain_missing_dataset_exit_3(tmp_path, capsys):
    code, _, _ = run(capsys, ["pretrain", "--dataset", str(tmp_path / "no.stpr"),
                              "--out-root", str(tmp_path)] + FAST)
    assert code == 3


def test_pretrain_determinism_byte_identical(tmp_path, cli_dataset, capsys):
    outs = []
    for sub in ("a", "b"):
        code, stdout, _ = run(capsys, ["pretrain", "--dataset", cli_dataset,
                                       "--out-root", str(tmp_path / sub)] + FAST)
        assert code == 0
        outs.append(open(json.loads(stdout)["metrics"], "rb").read())
    assert outs[0] == outs[1]


# ---------------------------------------------------------------------------
# diagnose
# ---------------------------------------------------------------------------

def test_diagnose_schema_and_recompute(cli_run, cli_dataset, capsys):
    ckpt = str(cli_run / "final.ckpt")
    code, stdout, _ = run(capsys, ["diagnose", "--checkpoint", ckpt,
                                   "--dataset", cli_dataset, "--seed", "5",
                                   "--rank-samples", "64", "--pairs", "32"])
    assert code == 0
    doc = json.loads(stdout)
    for key in ("feature_rank", "singular_values", "cosine_curve", "corr_stats"):
        assert key in doc
    assert doc["feature_rank"] > 0  # a trained-but-tiny model is not degenerate
    assert len(doc["cosine_curve"]) == 5

    # the rank matches an in-process recomputation with the same stream
    state, _ = load_checkpoint(ckpt)
    ds = load_dataset(cli_dataset)
    rng = make_stream(5, "diag")
    traj = rng.integers(0, ds.num_trajectories, size=64)
    time = rng.integers(0, ds.trajectory_length, size=64)
    z = diagnostics.projections_at(state.bundle, ds, traj, time)
    want = diagnostics.feature_rank(z, 0.01).feature_rank
    assert doc["feature_rank"] == want


def test_diagnose_embedding_export(cli_run, cli_dataset, tmp_path, capsys):
    out_csv = str(tmp_path / "emb.csv")
    code, stdout, _ = run(capsys, ["diagnose", "--checkpoint",
                                   str(cli_run / "final.ckpt"),
                                   "--dataset", cli_dataset,
                                   "--rank-samples", "32",
                                   "--export-embeddings", out_csv])
    assert code == 0
    lines = open(out_csv).read().splitlines()
    assert len(lines) == 33
    assert lines[0].startswith("dim_0,") and lines[0].endswith(",label")


def test_diagnose_missing_checkpoint_exit_3(cli_dataset, tmp_path, capsys):
    code, _, _ = run(capsys, ["diagnose", "--checkpoint",
                              str(tmp_path / "no.ckpt"), "--dataset", cli_dataset])
    assert code == 3


# ---------------------------------------------------------------------------
# probe
# ---------------------------------------------------------------------------

def test_probe_scores_and_determinism(cli_run, cli_dataset, capsys):
    ckpt = str(cli_run / "final.ckpt")
    digest_before = dataset_sha256(str(cli_run / "final.ckpt"))
    outs = []
    for _ in range(2):
        code, stdout, _ = run(capsys, ["probe", "--checkpoint", ckpt,
                                       "--dataset", cli_dataset, "--seed", "2"])
        assert code == 0
        outs.append(json.loads(stdout))
    assert outs[0] == outs[1]
    for key in ("act_f1", "rew_f1"):
        assert 0.0 <= outs[0][key] <= 1.0
    assert dataset_sha256(ckpt) == digest_before  # checkpoint untouched


# ---------------------------------------------------------------------------
# sweep
# ---------------------------------------------------------------------------

def test_sweep_csv_shape_and_single_cell_consistency(tmp_path, cli_dataset, capsys):
    out_csv = str(tmp_path / "sweep.csv")
    code, stdout, _ = run(capsys, ["sweep", "--dataset", cli_dataset,
                                   "--param", "lambda_d",
                                   "--values", "0.001,0.01,0.1",
                                   "--seeds", "2", "--out", out_csv] + FAST)
    assert code == 0
    with open(out_csv) as fh:
        rows = list(csv.DictReader(fh))
    assert len(rows) == 6  # |values| x |seeds|
    assert all(r["status"] == "ok" for r in rows)

    # a 1-value sweep cell equals a single pretrain run's finals
    cell = next(r for r in rows if r["value"] == "0.01" and r["seed"] == "0")
    overrides = {"dataset": cli_dataset, "steps": 4, "log_every": 2, "n_seq": 4,
                 "t_seq": 6, "latent_dim": 8, "encoder_channels": [4, 8],
                 "rank_samples": 32, "cosine_pairs": 16,
                 "lambda_d": 0.01, "seed": 0}
    _, records = pretrain(resolve({}, overrides), load_dataset(cli_dataset))
    assert int(cell["feat_rank"]) == records[-1].feat_rank
    assert float(cell["loss_total"]) == pytest.approx(records[-1].loss_total)


def test_sweep_does_not_mutate_dataset(tmp_path, cli_dataset, capsys):
    before = dataset_sha256(cli_dataset)
    run(capsys, ["sweep", "--dataset", cli_dataset, "--param", "lambda_d",
                 "--values", "0.01", "--seeds", "1",
                 "--out", str(tmp_path / "s.csv")] + FAST)
    assert dataset_sha256(cli_dataset) == before


def test_usage_error_exit_2(capsys):
    with pytest.raises(SystemExit) as err:
        main(["pretrain", "--bogus-flag"])
    assert err.value.code == 2
