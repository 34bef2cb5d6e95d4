import csv
import json

import pytest

from fearnet import data
from fearnet.cli import main


def read_csv(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


@pytest.fixture(scope="module")
def workspace(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    assert main(["gen", "--classes", "5", "--dim", "4", "--samples", "30", "--separation", "8", "--out", str(root / "data")]) == 0
    from fearnet import TrainingConfig

    cfg = TrainingConfig(sleep_frequency=2, base_epochs=20, consolidation_epochs=4, bla_epochs=3,
                         offline_epochs=20, batch_size=16, hidden_dims=(10, 5), seed=0)
    (root / "run.cfg").write_text(cfg.to_text())
    (root / "final.cfg").write_text(cfg.replace(force_final_sleep=True).to_text())
    return root


def train(ws, out, cfg="run.cfg", *extra):
    return main(["train", "--config", str(ws / cfg), "--data", str(ws / "data/train.dset"),
                 "--test", str(ws / "data/test.csv"), "--out", str(ws / out), *extra])


def test_gen_outputs(workspace):
    files = sorted(p.name for p in (workspace / "data").iterdir())
    assert files == ["manifest.json", "test.csv", "test.dset", "train.csv", "train.dset"]
    manifest = json.loads((workspace / "data/manifest.json").read_text())
    assert (manifest["classes"], manifest["dim"], manifest["samples_per_class"]) == (5, 4, 30)
    train_ds = data.load(workspace / "data/train.csv")
    assert train_ds.checksum() == data.load(workspace / "data/train.dset").checksum()


def test_gen_is_reproducible(workspace, tmp_path):
    assert main(["gen", "--classes", "5", "--dim", "4", "--samples", "30", "--separation", "8", "--out", str(tmp_path)]) == 0
    for name in ("train.csv", "train.dset", "test.dset"):
        assert data.file_checksum(tmp_path / name) == data.file_checksum(workspace / "data" / name)


def test_gen_bad_arguments(tmp_path, capsys):
    assert main(["gen", "--classes", "0", "--out", str(tmp_path)]) == 1
    assert main(["gen", "--classes", "two", "--out", str(tmp_path)]) == 1


def test_train_writes_artifacts(workspace, capsys):
    assert train(workspace, "run1") == 0
    out = workspace / "run1"
    for name in ("metrics_per_session.csv", "omega_summary.csv", "memory_report.csv", "manifest.json", "model.dmem"):
        assert (out / name).exists()
    rows = read_csv(out / "metrics_per_session.csv")
    assert list(rows[0]) == ["session", "alpha_base", "alpha_new", "alpha_all"]
    assert [r["session"] for r in rows] == ["2", "3", "4"]
    summary = read_csv(out / "omega_summary.csv")
    assert {"omega_base", "omega_new", "omega_all"} <= set(summary[0])
    manifest = json.loads((out / "manifest.json").read_text())
    assert sorted(manifest["class_order"]) == list(range(5))
    assert manifest["data"]["train"]["sha256"] == data.file_checksum(workspace / "data/train.dset")
    assert "omega_all" in capsys.readouterr().out


def test_manifest_rerun_is_byte_identical(workspace):
    assert train(workspace, "first") == 0
    assert main(["train", "--manifest", str(workspace / "first/manifest.json"), "--out", str(workspace / "again")]) == 0
    a = (workspace / "first/omega_summary.csv").read_bytes()
    assert a == (workspace / "again/omega_summary.csv").read_bytes()


def test_flag_overrides(workspace):
    assert train(workspace, "diag", "run.cfg", "--covariance", "diag", "--seed", "3", "--sleep-frequency", "1") == 0
    manifest = json.loads((workspace / "diag/manifest.json").read_text())
    assert "covariance_mode = diagonal" in manifest["config"]
    assert "seed = 3" in manifest["config"] and "sleep_frequency = 1" in manifest["config"]


def test_missing_key_exit_code(workspace, capsys):
    text = (workspace / "run.cfg").read_text().replace("bla_epochs = 3\n", "")
    (workspace / "broken.cfg").write_text(text)
    assert train(workspace, "nope", "broken.cfg") == 1
    assert "bla_epochs" in capsys.readouterr().err


def test_bad_data_exit_code(workspace, tmp_path, capsys):
    bad = tmp_path / "bad.csv"
    bad.write_text("0,1.0\nx,2.0\n")
    code = main(["train", "--config", str(workspace / "run.cfg"), "--data", str(bad), "--out", str(tmp_path / "o")])
    assert code == 2 and "line 2" in capsys.readouterr().err


def test_report_after_final_sleep(workspace, capsys):
    assert train(workspace, "slept", "final.cfg") == 0
    capsys.readouterr()
    assert main(["report", str(workspace / "slept/model.dmem")]) == 0
    rows = {r["component"]: int(r["bytes"]) for r in read_csv(workspace / "slept/memory_report.csv")}
    assert rows["exemplars"] == 0
    assert rows["total"] == rows["parameters"] + rows["statistics"] + rows["exemplars"]
    assert "total" in capsys.readouterr().out


def test_report_diagonal_smaller(workspace):
    assert train(workspace, "fullm", "final.cfg") == 0
    assert train(workspace, "diagm", "final.cfg", "--covariance", "diag") == 0
    totals = []
    for name in ("fullm", "diagm"):
        assert main(["report", str(workspace / name / "model.dmem")]) == 0
        totals.append(int(read_csv(workspace / name / "memory_report.csv")[-1]["bytes"]))
    assert totals[1] < totals[0]


def test_report_corrupt_snapshot(tmp_path, capsys):
    (tmp_path / "x.dmem").write_bytes(b"DMEM\x01\x00")
    assert main(["report", str(tmp_path / "x.dmem")]) == 2


def test_sweep_sleep_rows(workspace):
    args = ["sweep", "sleep", "--freqs", "1,2,3,4", "--config", str(workspace / "run.cfg"),
            "--data", str(workspace / "data/train.dset"), "--out", str(workspace / "sw")]
    assert main(args) == 0
    rows = read_csv(workspace / "sw/sweep_sleep.csv")
    assert [r["sleep_frequency"] for r in rows] == ["1", "2", "3", "4"]


def test_sweep_base_rejects_oversized_base(workspace):
    args = ["sweep", "base", "--sizes", "2,5", "--config", str(workspace / "run.cfg"),
            "--data", str(workspace / "data/train.dset"), "--out", str(workspace / "sb")]
    assert main(args) == 1


def test_sweep_multimodal(workspace, tmp_path):
    assert main(["gen", "--classes", "3", "--dim", "6", "--samples", "30", "--seed", "1", "--out", str(tmp_path)]) == 0
    args = ["sweep", "multimodal", "--config", str(workspace / "run.cfg"),
            "--data", str(workspace / "data/train.dset"), "--test", str(workspace / "data/test.dset"),
            "--data-b", str(tmp_path / "train.dset"), "--test-b", str(tmp_path / "test.dset"),
            "--out", str(tmp_path / "mm")]
    assert main(args) == 0
    assert [r["mode"] for r in read_csv(tmp_path / "mm/sweep_multimodal.csv")] == ["first_base", "second_base", "mixed"]


def test_convert(workspace, tmp_path):
    assert main(["convert", str(workspace / "data/train.dset"), str(tmp_path / "t.csv")]) == 0
    assert data.file_checksum(tmp_path / "t.csv") == data.file_checksum(workspace / "data/train.csv")
