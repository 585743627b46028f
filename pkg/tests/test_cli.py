import json

from ncdkit.cli import cli
from ncdkit.trainer import RunConfig


def gen_config(tmp_path, **kw):
    payload = dict(classes_labelled=2, classes_unlabelled=2, per_class=6, d_v=5,
                   d_a=None, class_sep=8.0, intra_sigma=0.5, modality_corr=0.5)
    payload.update(kw)
    path = tmp_path / "gen.json"
    path.write_text(json.dumps(payload))
    return path


def run_config(tmp_path, data_path, **kw):
    params = dict(d_v=5, feature_dim=8, fused_dim=8, proj_hidden_dim=8, proj_dim=4,
                  classes_labelled=2, classes_unlabelled=2, batch_size=8, epochs=2,
                  tune_epochs=2, pretrain_epochs=2, data_path=str(data_path))
    params.update(kw)
    cfg = RunConfig(**params)
    path = tmp_path / "run.json"
    path.write_text(cfg.to_json())
    return path


def test_gen_data_byte_identical_across_runs(tmp_path, capsys):
    gen = gen_config(tmp_path)
    d1, d2 = tmp_path / "d1", tmp_path / "d2"
    assert cli(["gen-data", "--out", str(d1), "--seed", "7", "--config", str(gen)]) == 0
    assert cli(["gen-data", "--out", str(d2), "--seed", "7", "--config", str(gen)]) == 0
    assert (d1 / "dataset.csv").read_bytes() == (d2 / "dataset.csv").read_bytes()


def test_train_missing_dataset_exits_1_naming_path(tmp_path, capsys):
    cfg_path = run_config(tmp_path, tmp_path / "nowhere.csv")
    code = cli(["train", "--config", str(cfg_path)])
    captured = capsys.readouterr()
    assert code == 1
    assert "nowhere.csv" in captured.err


def test_unknown_flag_exits_1_with_usage(capsys):
    code = cli(["train", "--config", "c.json", "--frobnicate"])
    captured = capsys.readouterr()
    assert code == 1
    assert "usage" in captured.err.lower()


def test_unknown_subcommand_exits_1(capsys):
    assert cli(["transmogrify"]) == 1


def test_bad_config_json_exits_1(tmp_path, capsys):
    bad = tmp_path / "bad.json"
    bad.write_text("{not json")
    assert cli(["train", "--config", str(bad)]) == 1


def test_full_pipeline_train_eval_cross_check(tmp_path, capsys):
    gen = gen_config(tmp_path)
    data_dir = tmp_path / "data"
    assert cli(["gen-data", "--out", str(data_dir), "--seed", "3", "--config", str(gen)]) == 0
    dataset = data_dir / "dataset.csv"
    cfg_path = run_config(tmp_path, dataset)
    out_dir = tmp_path / "run"
    assert cli(["train", "--config", str(cfg_path), "--out", str(out_dir)]) == 0
    capsys.readouterr()

    assert (out_dir / "metrics.csv").exists()
    assert (out_dir / "config.json").exists()
    assert (out_dir / "final.ckpt").exists()

    # eval on the same data reproduces the final logged accuracy exactly
    assert cli(["eval", "--ckpt", str(out_dir / "final.ckpt"), "--data", str(dataset)]) == 0
    printed = capsys.readouterr().out.strip()
    final_row = (out_dir / "metrics.csv").read_text().strip().split("\n")[-1]
    logged_acc = final_row.split(",")[1]
    assert printed == f"acc {logged_acc}"


def test_train_twice_same_seed_identical_metrics_file(tmp_path, capsys):
    gen = gen_config(tmp_path)
    data_dir = tmp_path / "data"
    cli(["gen-data", "--out", str(data_dir), "--seed", "5", "--config", str(gen)])
    cfg_path = run_config(tmp_path, data_dir / "dataset.csv")
    o1, o2 = tmp_path / "r1", tmp_path / "r2"
    assert cli(["train", "--config", str(cfg_path), "--out", str(o1)]) == 0
    assert cli(["train", "--config", str(cfg_path), "--out", str(o2)]) == 0
    assert (o1 / "metrics.csv").read_bytes() == (o2 / "metrics.csv").read_bytes()
    assert (o1 / "final.ckpt").read_bytes() == (o2 / "final.ckpt").read_bytes()


def test_tune_wta_cli(tmp_path, capsys):
    gen = gen_config(tmp_path, classes_labelled=4, classes_unlabelled=0, per_class=6)
    data_dir = tmp_path / "data"
    cli(["gen-data", "--out", str(data_dir), "--seed", "2", "--config", str(gen)])
    cfg_path = run_config(tmp_path, data_dir / "dataset.csv", classes_labelled=4)
    out_dir = tmp_path / "tune"
    code = cli(["tune-wta", "--config", str(cfg_path), "--mu-grid", "0,4",
                "--k-grid", "2", "--out", str(out_dir)])
    out = capsys.readouterr().out
    assert code == 0
    assert "chosen mu=" in out
    report = (out_dir / "tune_report.csv").read_text()
    assert report.startswith("mu,k,acc")


def test_cluster_cli(tmp_path, capsys):
    gen = gen_config(tmp_path)
    data_dir = tmp_path / "data"
    cli(["gen-data", "--out", str(data_dir), "--seed", "4", "--config", str(gen)])
    cfg_path = run_config(tmp_path, data_dir / "dataset.csv")
    assert cli(["cluster", "--config", str(cfg_path)]) == 0
    assert "unsupervised acc" in capsys.readouterr().out


def test_gen_data_rejects_unknown_keys(tmp_path, capsys):
    bad = tmp_path / "gen.json"
    bad.write_text(json.dumps({"per_class": 5, "n_classes": 3}))
    assert cli(["gen-data", "--out", str(tmp_path / "d"), "--config", str(bad)]) == 1


def test_help_exits_0(capsys):
    assert cli(["--help"]) == 0
