import numpy as np
import pandas as pd
import pytest

from src import cli
from src.encoder.train import COPY_TASK_DOCS, copy_task_recipe
from src.masking.block_mask import BlockMaskSpec, build_block_mask
from src.masking.mask_io import read_mask_csv
from src.masking.permutation import Permutation

TINY_MODEL = ["--layers", "1", "--hidden", "8", "--heads", "2", "--vocab", "64"]


def resolve(argv):
    parser, subs = cli.build_parser()
    return cli.resolve_run_config(parser, subs, argv)


def test_mask_prints_density(capsys):
    assert cli.main(["mask", "--seq-len", "4", "--perm", "2,1"]) == cli.EXIT_OK
    assert capsys.readouterr().out.strip() == "block N=4 n=2 perm=(2,1): density 0.500000"


def test_mask_blocks_default_to_first_shift(capsys, tmp_path):
    out = tmp_path / "m.csv"
    assert cli.main(["mask", "--seq-len", "6", "--blocks", "3", "--out", str(out)]) == cli.EXIT_OK
    assert "perm=(2,3,1)" in capsys.readouterr().out
    assert read_mask_csv(out) == build_block_mask(BlockMaskSpec(6, 3, Permutation((2, 3, 1))))


def test_mask_sparse_fixed_density(capsys):
    assert cli.main(["mask", "--sparse-fixed", "--seq-len", "512"]) == cli.EXIT_OK
    density = float(capsys.readouterr().out.split("density")[1])
    assert density == pytest.approx(0.4420, abs=1e-3)


def test_mask_usage_errors(capsys):
    assert cli.main(["mask", "--seq-len", "8"]) == cli.EXIT_USAGE
    assert "give --perm or --blocks" in capsys.readouterr().err
    assert cli.main(["mask", "--seq-len", "8", "--perm", "1,1"]) == cli.EXIT_USAGE
    assert cli.main(["nosuchcommand"]) == cli.EXIT_USAGE
    assert cli.main(["mask", "--seq-len", "many"]) == cli.EXIT_USAGE


def test_equiv_passes(capsys):
    code = cli.main(["equiv", "--seq-len", "16", "--blocks", "4", "--trials", "5", "--backward"])
    out = capsys.readouterr().out
    assert code == cli.EXIT_OK
    assert out.rstrip().endswith("PASS")
    assert "finite-difference" in out


def test_equiv_detects_a_broken_kernel(capsys, monkeypatch):
    real = cli.blockwise_attention
    monkeypatch.setattr(cli, "blockwise_attention", lambda q, k, v, n, perm: real(q, k, v, n, perm) + 1e-6)
    assert cli.main(["equiv", "--seq-len", "8", "--blocks", "2", "--trials", "2"]) == cli.EXIT_FAIL
    assert "FAIL" in capsys.readouterr().out


def test_equiv_rejects_indivisible_blocks():
    assert cli.main(["equiv", "--seq-len", "10", "--blocks", "3"]) == cli.EXIT_USAGE


def test_bench_records_score_bytes(tmp_path, capsys):
    csv = tmp_path / "bench.csv"
    code = cli.main(["bench", "--seq-lens", "16,32", "--blocks", "1,2", "--repeat", "1",
                     "--head-dim", "4", "--backward", "--csv", str(csv)])
    assert code == cli.EXIT_OK
    frame = pd.read_csv(csv)
    assert list(frame.columns) == cli.BENCH_COLUMNS
    assert (frame["status"] == "ok").all()
    scores = {(r.N, r.n): r.score_bytes for r in frame.itertuples()}
    assert scores[16, 1] == 16 * 16 * 8
    assert scores[32, 1] == 2 * scores[32, 2]
    assert "attention_flops" in capsys.readouterr().out


def test_bench_marks_out_of_budget_rows(tmp_path):
    csv = tmp_path / "bench.csv"
    code = cli.main(["bench", "--seq-lens", "64", "--blocks", "1,4", "--repeat", "1", "--head-dim", "4",
                     "--budget-bytes", "20000", "--csv", str(csv)])
    assert code == cli.EXIT_OK
    frame = pd.read_csv(csv)
    assert frame["status"].tolist() == ["OOM", "ok"]
    assert np.isnan(frame["time_ms"].iloc[0])


def test_regress_reference_table(capsys, tmp_path):
    csv = tmp_path / "t.csv"
    assert cli.main(["regress", "--reference-table", "--csv", str(csv)]) == cli.EXIT_OK
    out = capsys.readouterr().out
    assert "BlockBERT n=3" in out and "4.83" in out and "7.32" in out
    assert pd.read_csv(csv)["metric"].isin(["linear_est", "quadratic_est", "activation_est"]).all()


def test_regress_synthetic_recovers_line(capsys):
    code = cli.main(["regress", "--synthetic", "0.001,0.5,7", "--seq-lens", "128,256,512",
                     "--tokens-per-batch", "4096"])
    assert code == cli.EXIT_OK
    out = capsys.readouterr().out
    assert "a2 0.001 " in out and "R^2 1.000000" in out


def test_regress_needs_three_lengths():
    assert cli.main(["regress", "--synthetic", "1,1,1", "--seq-lens", "128,256"]) == cli.EXIT_USAGE
    assert cli.main(["regress", "--synthetic", "1,1,1", "--seq-lens", "100,200,300"]) == cli.EXIT_USAGE


@pytest.mark.slow
def test_regress_measured_ratio(capsys):
    code = cli.main(["regress", *TINY_MODEL, "--tokens-per-batch", "128", "--seq-lens", "16,32,64",
                     "--blocks", "1,2"])
    assert code == cli.EXIT_OK
    assert "quadratic coefficient ratio n=1 / n=2: 2.0000" in capsys.readouterr().out


def test_cost_table_and_csv(capsys, tmp_path):
    csv = tmp_path / "cost.csv"
    assert cli.main(["cost", "--seq-lens", "512", "--blocks", "1,2", "--layers", "12", "--hidden", "768",
                     "--heads", "12", "--csv", str(csv)]) == cli.EXIT_OK
    assert "1 multiply-add = 2 FLOPs" in capsys.readouterr().out
    frame = pd.read_csv(csv)
    factors = frame[frame["metric"] == "reduction_factor"]["value"].tolist()
    assert factors == [1.0, 2.0]


def test_config_file_and_flag_precedence(tmp_path, capsys):
    conf = tmp_path / "mask.conf"
    conf.write_text("# mask settings\nseq-len = 8\nperm = 2,1\n")
    assert cli.main(["mask", "--config", str(conf)]) == cli.EXIT_OK
    assert "N=8 n=2" in capsys.readouterr().out
    assert cli.main(["mask", "--config", str(conf), "--seq-len", "4"]) == cli.EXIT_OK
    assert "N=4 n=2" in capsys.readouterr().out


def test_config_file_errors(tmp_path):
    bad_key = tmp_path / "a.conf"
    bad_key.write_text("colour = blue\n")
    assert cli.main(["mask", "--config", str(bad_key)]) == cli.EXIT_USAGE
    bad_line = tmp_path / "b.conf"
    bad_line.write_text("seq_len 8\n")
    assert cli.main(["mask", "--config", str(bad_line)]) == cli.EXIT_USAGE
    bad_value = tmp_path / "c.conf"
    bad_value.write_text("seq_len = eight\n")
    assert cli.main(["mask", "--config", str(bad_value)]) == cli.EXIT_USAGE
    assert cli.main(["mask", "--config", str(tmp_path / "missing.conf")]) == cli.EXIT_USAGE


def test_boolean_config_values(tmp_path):
    conf = tmp_path / "e.conf"
    conf.write_text("backward = yes\ntrials = 3\n")
    cfg = resolve(["equiv", "--config", str(conf)])
    assert cfg.backward is True and cfg.trials == 3


def test_seed_precedence(tmp_path, monkeypatch):
    monkeypatch.delenv(cli.SEED_ENV, raising=False)
    assert resolve(["equiv"]).seed == 0
    monkeypatch.setenv(cli.SEED_ENV, "7")
    assert resolve(["equiv"]).seed == 7
    conf = tmp_path / "s.conf"
    conf.write_text("seed = 5\n")
    assert resolve(["equiv", "--config", str(conf)]).seed == 5
    assert resolve(["equiv", "--config", str(conf), "--seed", "3"]).seed == 3
    monkeypatch.setenv(cli.SEED_ENV, "x")
    assert cli.main(["equiv"]) == cli.EXIT_USAGE
    assert cli.main(["equiv", "--seed", "-1"]) == cli.EXIT_USAGE


TRAIN_FLAGS = [*TINY_MODEL, "--seq-len", "16", "--blocks", "2", "--num-docs", "16", "--batch", "4",
               "--mask-rate", "0.3", "--validation-interval", "1", "--lr", "0.01"]


@pytest.mark.slow
def test_train_eval_and_resume(tmp_path, capsys):
    ckpt_dir = tmp_path / "ckpt"
    log = tmp_path / "log.csv"
    code = cli.main(["train", *TRAIN_FLAGS, "--steps", "3", "--checkpoint-dir", str(ckpt_dir),
                     "--log", str(log)])
    assert code == cli.EXIT_OK
    out = capsys.readouterr().out
    assert "final loss" in out and "validation perplexity" in out
    assert (ckpt_dir / "step000003.bblk").exists() and (ckpt_dir / cli.VOCAB_FILE).exists()
    assert pd.read_csv(log)["step"].tolist() == [1, 2, 3]

    code = cli.main(["eval", "--checkpoint", str(ckpt_dir / "step000003.bblk"), "--num-docs", "8",
                     "--batch", "4", "--mask-rate", "0.3"])
    assert code == cli.EXIT_OK
    assert capsys.readouterr().out.startswith("perplexity ")

    code = cli.main(["train", *TRAIN_FLAGS, "--steps", "5", "--checkpoint-dir", str(ckpt_dir),
                     "--resume", str(ckpt_dir / "step000003.bblk"), "--log", str(log)])
    assert code == cli.EXIT_OK
    assert pd.read_csv(log)["step"].tolist() == [4, 5]
    assert (ckpt_dir / "step000005.bblk").exists()


def test_eval_missing_checkpoint(tmp_path, capsys):
    assert cli.main(["eval", "--checkpoint", str(tmp_path / "none.bblk")]) == cli.EXIT_FAIL
    assert "none.bblk" in capsys.readouterr().err


COPY_SWEEP = ["--layers", "1", "--hidden", "32", "--heads", "4", "--vocab", "64", "--seq-len", "16",
              "--blocks", "2", "--num-docs", "400", "--valid-fraction", "0.25", "--steps", "150",
              "--batch", "32", "--lr", "0.005", "--warmup", "10", "--dropout", "0"]


@pytest.mark.slow
def test_ablate_mixed_assignment_beats_all_identity(tmp_path, capsys):
    csv = tmp_path / "ablate.csv"
    code = cli.main(["ablate", *COPY_SWEEP, "--csv", str(csv)])
    assert code == cli.EXIT_OK
    frame = pd.read_csv(csv, keep_default_na=False)
    assert frame["assignment"].tolist() == ["4:0", "3:1", "2:2", "1:3", "0:4"]
    assert (frame["best"] == "*").sum() == 1
    assert np.isfinite(frame["val_ppl"]).all()
    loss = dict(zip(frame["assignment"], frame["val_loss"]))
    assert min(loss["3:1"], loss["2:2"], loss["1:3"]) < loss["4:0"]
    assert "vs all-identity 4:0" in capsys.readouterr().out


def test_train_defaults_follow_copy_task_recipe():
    model, train, adam = copy_task_recipe()
    cfg = resolve(["train"])
    assert (cfg.layers, cfg.hidden, cfg.heads, cfg.seq_len, cfg.blocks, cfg.vocab) == (
        model.num_layers, model.hidden, model.num_heads, model.seq_len, model.num_blocks, model.vocab_size)
    assert cfg.tie_embeddings is True and cfg.dropout == 0.0
    assert (cfg.steps, cfg.batch, cfg.lr, cfg.warmup) == (200, 64, 5e-3, 20)
    assert cfg.num_docs == COPY_TASK_DOCS
    assert resolve(["train", "--no-tie-embeddings"]).tie_embeddings is False


def test_boolean_optional_flags_from_config(tmp_path):
    conf = tmp_path / "t.conf"
    conf.write_text("tie-embeddings = no\nwarmup = 5\n")
    cfg = resolve(["train", "--config", str(conf)])
    assert cfg.tie_embeddings is False and cfg.warmup == 5
    assert resolve(["train", "--config", str(conf), "--tie-embeddings"]).tie_embeddings is True
