import json

import pytest

from mscvit.cli import main


def metrics(path):
    rows = [json.loads(line) for line in (path / "metrics.jsonl").read_text().splitlines()]
    for row in rows:
        row.pop("seconds")
    return rows


@pytest.fixture(scope="module")
def trained(tmp_path_factory):
    out = tmp_path_factory.mktemp("run")
    code = main(["train", "--variant", "t", "--dataset", "synth", "--epochs", "1",
                 "--synth-per-class", "16", "--batch-size", "32", "--out", str(out),
                 "--set", "stage2.Ck=5"])
    return code, out


def test_train_writes_metrics_config_and_checkpoint(trained):
    code, out = trained
    assert code == 0
    assert len(metrics(out)) == 1
    assert (out / "checkpoint.ckpt").is_file()
    text = (out / "config.txt").read_text()
    assert "stage2.Ck = 5" in text and "stage2.P = 2" in text
    assert "stage1.Ck = 3" in text
    assert "train.epochs = 1" in text


def test_rerun_is_identical(trained, tmp_path):
    _, first = trained
    code = main(["train", "--variant", "t", "--dataset", "synth", "--epochs", "1",
                 "--synth-per-class", "16", "--batch-size", "32", "--out", str(tmp_path),
                 "--set", "stage2.Ck=5"])
    assert code == 0
    assert metrics(tmp_path) == metrics(first)
    assert (tmp_path / "checkpoint.ckpt").read_bytes() == (first / "checkpoint.ckpt").read_bytes()


def test_eval_reproduces_logged_accuracy(trained, capsys):
    _, out = trained
    capsys.readouterr()
    code = main(["eval", "--checkpoint", str(out / "checkpoint.ckpt"), "--dataset", "synth",
                 "--synth-per-class", "16"])
    assert code == 0
    result = json.loads(capsys.readouterr().out.strip().splitlines()[-1])
    assert result["test_top1"] == metrics(out)[0]["test_top1"]


def test_eval_with_wrong_class_count_exits_2(trained):
    _, out = trained
    assert main(["eval", "--checkpoint", str(out / "checkpoint.ckpt"), "--dataset", "synth",
                 "--synth-classes", "7"]) == 2


def test_missing_inputs_exit_3(tmp_path):
    assert main(["train", "--dataset", "cifar10", "--data-dir", str(tmp_path / "none")]) == 3
    assert main(["train", "--dataset", "cifar10", "--data-dir", str(tmp_path)]) == 3
    assert main(["eval", "--checkpoint", str(tmp_path / "none.ckpt")]) == 3


def test_corrupt_dataset_exits_3(tmp_path):
    for name in [f"data_batch_{i}.bin" for i in range(1, 6)] + ["test_batch.bin"]:
        (tmp_path / name).write_bytes(bytes(3073 + 7))
    assert main(["train", "--dataset", "cifar10", "--data-dir", str(tmp_path)]) == 3


@pytest.mark.parametrize("argv", [
    ["--set", "stage9.dim=4"], ["--set", "nonsense"], ["--set", "train.nope=1"],
    ["--set", "stage1.Ck=4"], ["--epochs", "0"],
])
def test_bad_config_exits_2(argv, tmp_path):
    assert main(["train", "--dataset", "synth", "--out", str(tmp_path)] + argv) == 2


def test_inspect_s_matches_reported_scale(capsys):
    assert main(["inspect", "--variant", "s", "--res", "224"]) == 0
    out = capsys.readouterr().out
    params = float(out.split("total params")[1].split("(")[1].split("M")[0])
    gflops = float(out.split("total GFLOPs")[1].split()[0])
    assert abs(params / 14.0 - 1) <= 0.05
    assert abs(gflops / 2.5 - 1) <= 0.10
    assert "stage1" in out and "8,4" in out


def test_inspect_t_depths(capsys):
    assert main(["inspect", "--variant", "t"]) == 0
    assert "depths [1, 2, 4, 1]" in capsys.readouterr().out


def test_inspect_normal_attention_gap(capsys):
    assert main(["inspect", "--variant", "s", "--attention", "normal"]) == 0
    line = [l for l in capsys.readouterr().out.splitlines() if l.startswith("normal attention")][0]
    gap = float(line.split("(")[1].split("%")[0])
    assert abs(gap - 10.7) <= 3


def test_inspect_config_file_and_echo(tmp_path, capsys):
    cfg = tmp_path / "m.cfg"
    cfg.write_text("# smaller stage 4\nstage4.depth = 1\nkernel_schedule = 5\n")
    assert main(["inspect", "--variant", "xs", "--config", str(cfg), "--out", str(tmp_path / "o")]) == 0
    echo = (tmp_path / "o" / "config.txt").read_text()
    assert "stage4.depth = 1" in echo and "stage1.Ck = 5" in echo


def test_gradcheck_passes(capsys):
    assert main(["gradcheck"]) == 0
    assert "all checks below" in capsys.readouterr().out
