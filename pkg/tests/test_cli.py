import json

import numpy as np
import pytest

from mmbt.cli import main
from mmbt.datagen import GenSpec, generate_dataset, write_dataset
from mmbt.evaluation import PredictionRecord, read_ids, read_predictions, write_predictions
from mmbt.training import read_history, read_sweep_table


def write_json(path, obj):
    path.write_text(json.dumps(obj))
    return path


def run_config(tmp, data_dir, model="mmbt", **train):
    cfg = {
        "model": model,
        "data_dir": str(data_dir),
        "out_dir": str(tmp / "run"),
        "vocab_size": 60,
        "max_positions": 24,
        "encoder": {"num_layers": 1, "model_dim": 8, "num_heads": 2, "ffn_dim": 16},
        "image": {"patch_size": 2, "embed_dim": 4},
        "train": {"lr_grid": [0.003], "max_epochs": 2, "patience": 2, "batch_size": 16, "num_image_embeddings": 2, **train},
    }
    return write_json(tmp / f"{model}.json", cfg)


@pytest.fixture(scope="module")
def xor_dir(tmp_path_factory):
    tmp = tmp_path_factory.mktemp("xor")
    spec = write_json(tmp / "spec.json", {"task": "xor_fusion", "sizes": [40, 16, 16], "seed": 1})
    assert main(["generate-data", "--config", str(spec), "--out", str(tmp / "data")]) == 0
    return tmp / "data"


@pytest.fixture(scope="module")
def trained(tmp_path_factory, xor_dir):
    tmp = tmp_path_factory.mktemp("train")
    cfg = run_config(tmp, xor_dir)
    assert main(["train", "--config", str(cfg)]) == 0
    return tmp / "run"


# -- generate-data ----------------------------------------------------------------------


def test_generate_writes_splits(xor_dir):
    assert sorted(p.name for p in xor_dir.iterdir()) == ["dev.jsonl", "meta.json", "test.jsonl", "train.jsonl"]
    assert len((xor_dir / "train.jsonl").read_text().splitlines()) == 40


def test_generate_byte_identical(tmp_path):
    spec = write_json(tmp_path / "s.json", {"task": "three_segment", "sizes": [5, 3, 3], "seed": 9})
    for d in ("a", "b"):
        assert main(["generate-data", "--config", str(spec), "--out", str(tmp_path / d)]) == 0
    for name in ("train.jsonl", "dev.jsonl", "test.jsonl", "meta.json"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()


def test_generate_seed_flag_overrides(tmp_path):
    spec = write_json(tmp_path / "s.json", {"task": "xor_fusion", "sizes": [5, 3, 3], "seed": 0})
    main(["generate-data", "--config", str(spec), "--out", str(tmp_path / "a")])
    main(["generate-data", "--config", str(spec), "--out", str(tmp_path / "b"), "--seed", "5"])
    assert (tmp_path / "a" / "train.jsonl").read_bytes() != (tmp_path / "b" / "train.jsonl").read_bytes()


def test_generate_bad_spec_names_field(tmp_path, capsys):
    spec = write_json(tmp_path / "s.json", {"task": "xor_fusion", "text_noise": 2})
    assert main(["generate-data", "--config", str(spec), "--out", str(tmp_path / "o")]) == 2
    assert "text_noise" in capsys.readouterr().err


def test_generate_unreadable_spec(tmp_path):
    assert main(["generate-data", "--config", str(tmp_path / "missing.json"), "--out", str(tmp_path / "o")]) == 3


# -- train ---------------------------------------------------------------------------------


def test_train_writes_artifacts(trained):
    for name in ("checkpoint.bin", "history.jsonl", "sweep.tsv", "summary.json", "vocab.txt"):
        assert (trained / name).exists(), name
    summary = json.loads((trained / "summary.json").read_text())
    assert set(summary) >= {"best_epoch", "dev_metric", "metric"}
    assert read_history(trained / "history.jsonl")


def test_train_prints_summary(tmp_path, xor_dir, capsys):
    cfg = run_config(tmp_path, xor_dir, model="bow")
    assert main(["train", "--config", str(cfg), "--out", str(tmp_path / "o")]) == 0
    out = capsys.readouterr().out
    assert out.startswith("best_epoch=") and "dev_accuracy=" in out


def test_two_lr_grid_trains_two_cells(tmp_path, xor_dir):
    cfg = run_config(tmp_path, xor_dir, model="bow", lr_grid=[0.01, 0.0])
    assert main(["train", "--config", str(cfg)]) == 0
    rows = read_sweep_table(tmp_path / "run" / "sweep.tsv")
    assert [r["lr"] for r in rows] == [0.01, 0.0]
    summary = json.loads((tmp_path / "run" / "summary.json").read_text())
    best = max(rows, key=lambda r: r["dev_metric"])
    assert summary["dev_metric"] == best["dev_metric"]


def test_flags_override_config(tmp_path, xor_dir):
    cfg = run_config(tmp_path, xor_dir, model="bow", lr_grid=[0.01, 0.02])
    assert main(["train", "--config", str(cfg), "--lr", "0.005", "--num-image-embeddings", "1"]) == 0
    rows = read_sweep_table(tmp_path / "run" / "sweep.tsv")
    assert len(rows) == 1 and rows[0]["lr"] == 0.005 and rows[0]["num_image_embeddings"] == 1


def test_train_empty_split_exit_3(tmp_path, xor_dir):
    data = tmp_path / "data"
    data.mkdir()
    for name in ("train.jsonl", "dev.jsonl", "meta.json"):
        (data / name).write_bytes((xor_dir / name).read_bytes())
    (data / "dev.jsonl").write_text("")
    assert main(["train", "--config", str(run_config(tmp_path, data))]) == 3


def test_train_bad_config_exit_2(tmp_path, xor_dir):
    cfg = write_json(tmp_path / "c.json", {"model": "mmbt", "data_dir": str(xor_dir), "bogus": 1})
    assert main(["train", "--config", str(cfg)]) == 2


# -- eval ------------------------------------------------------------------------------------


def test_eval_reproduces_dev_metric(trained, xor_dir, tmp_path, capsys):
    assert main(["eval", str(trained / "checkpoint.bin"), str(xor_dir / "dev.jsonl"), "--out", str(tmp_path)]) == 0
    metrics = json.loads((tmp_path / "metrics.json").read_text())
    summary = json.loads((trained / "summary.json").read_text())
    assert metrics["accuracy"] == summary["dev_metric"]
    dev = [r["value"] for r in read_history(trained / "history.jsonl") if r["split"] == "dev"]
    assert metrics["accuracy"] == dev[summary["best_epoch"]]
    assert "accuracy=" in capsys.readouterr().out
    assert len(read_predictions(tmp_path / "predictions.jsonl")) == 16


def test_eval_multilabel_reports_f1(tmp_path):
    spec = write_json(tmp_path / "s.json", {"task": "multilabel_union", "num_classes": 3, "sizes": [20, 8, 8]})
    main(["generate-data", "--config", str(spec), "--out", str(tmp_path / "data")])
    cfg = run_config(tmp_path, tmp_path / "data", max_epochs=1)
    assert main(["train", "--config", str(cfg)]) == 0
    assert main(["eval", str(tmp_path / "run" / "checkpoint.bin"), str(tmp_path / "data" / "test.jsonl"), "--out", str(tmp_path / "ev")]) == 0
    assert set(json.loads((tmp_path / "ev" / "metrics.json").read_text())) == {"macro_f1", "micro_f1"}


def test_eval_empty_dataset_exit_3(trained, tmp_path):
    (tmp_path / "e.jsonl").write_text("")
    assert main(["eval", str(trained / "checkpoint.bin"), str(tmp_path / "e.jsonl"), "--out", str(tmp_path / "o")]) == 3


def test_eval_unreadable_exit_3(trained, xor_dir, tmp_path):
    (tmp_path / "junk.bin").write_bytes(b"junk")
    assert main(["eval", str(tmp_path / "junk.bin"), str(xor_dir / "dev.jsonl"), "--out", str(tmp_path / "o")]) == 3
    assert main(["eval", str(trained / "checkpoint.bin"), str(tmp_path / "nope.jsonl"), "--out", str(tmp_path / "o")]) == 3


def test_eval_mismatch_exit_4(trained, tmp_path):
    other = generate_dataset(GenSpec(task="xor_fusion", sizes=(2, 1, 1), image_size=6))["train"]
    write_dataset(other, tmp_path / "o.jsonl")
    assert main(["eval", str(trained / "checkpoint.bin"), str(tmp_path / "o.jsonl"), "--out", str(tmp_path / "x")]) == 4


# -- build-hardset ---------------------------------------------------------------------------


def prediction_files(tmp_path, n=100, seed=0):
    r = np.random.default_rng(seed)
    img, bow = [], []
    for i in range(n):
        a, b = r.dirichlet([1, 1, 1]), r.dirichlet([1, 1, 1])
        t = int(r.integers(3))
        img.append(PredictionRecord(f"x{i:03d}", a.tolist(), t))
        bow.append(PredictionRecord(f"x{i:03d}", b.tolist(), t))
    write_predictions(img, tmp_path / "img.jsonl")
    write_predictions(bow, tmp_path / "bow.jsonl")
    return img, bow


def test_hardset_ten_of_hundred(tmp_path):
    img, bow = prediction_files(tmp_path)
    args = ["build-hardset", "--img", str(tmp_path / "img.jsonl"), "--bow", str(tmp_path / "bow.jsonl"), "--out", str(tmp_path / "h.txt")]
    assert main(args) == 0
    ids = read_ids(tmp_path / "h.txt")
    assert len(ids) == 10
    score = {a.id: (1 - a.probs[a.target]) * (1 - b.probs[b.target]) for a, b in zip(img, bow)}
    assert ids == sorted(score, key=lambda i: (-score[i], i))[:10]


def test_hardset_fraction_one(tmp_path):
    prediction_files(tmp_path)
    args = ["build-hardset", "--img", str(tmp_path / "img.jsonl"), "--bow", str(tmp_path / "bow.jsonl"), "--fraction", "1.0", "--out", str(tmp_path / "h.txt")]
    assert main(args) == 0
    assert len(read_ids(tmp_path / "h.txt")) == 100


def test_hardset_variants_differ_on_planted_inputs(tmp_path):
    # "agree" rows: both unimodal models confidently wrong in the same way
    # "split" rows: the models disagree completely, one of them right
    img, bow = [], []
    for i in range(5):
        img.append(PredictionRecord(f"agree{i}", [0.0, 1.0], 0))
        bow.append(PredictionRecord(f"agree{i}", [0.0, 1.0], 0))
        img.append(PredictionRecord(f"split{i}", [1.0, 0.0], 0))
        bow.append(PredictionRecord(f"split{i}", [0.0, 1.0], 0))
    write_predictions(img, tmp_path / "img.jsonl")
    write_predictions(bow, tmp_path / "bow.jsonl")
    sets = {}
    for v in ("ground_truth", "disagreement"):
        args = ["build-hardset", "--img", str(tmp_path / "img.jsonl"), "--bow", str(tmp_path / "bow.jsonl"), "--variant", v, "--fraction", "0.5", "--out", str(tmp_path / f"{v}.txt")]
        assert main(args) == 0
        sets[v] = read_ids(tmp_path / f"{v}.txt")
    assert all(i.startswith("agree") for i in sets["ground_truth"])
    assert all(i.startswith("split") for i in sets["disagreement"])


def test_hardset_id_mismatch_exit_5(tmp_path):
    prediction_files(tmp_path)
    lines = (tmp_path / "bow.jsonl").read_text().splitlines()
    (tmp_path / "bow.jsonl").write_text("\n".join(lines[:-1]) + "\n")
    args = ["build-hardset", "--img", str(tmp_path / "img.jsonl"), "--bow", str(tmp_path / "bow.jsonl"), "--out", str(tmp_path / "h.txt")]
    assert main(args) == 5


def test_hardset_unreadable_exit_3(tmp_path):
    (tmp_path / "img.jsonl").write_text("{not json\n")
    (tmp_path / "bow.jsonl").write_text("")
    args = ["build-hardset", "--img", str(tmp_path / "img.jsonl"), "--bow", str(tmp_path / "bow.jsonl"), "--out", str(tmp_path / "h.txt")]
    assert main(args) == 3


# -- report --------------------------------------------------------------------------------------


def six_cell_sweep(path):
    rows = ["lr\ttext_frozen_epochs\timage_frozen_epochs\tnum_image_embeddings\tdev_metric"]
    for lr in (1e-4, 5e-5):
        for t in (0, 1, 2):
            rows.append(f"{lr!r}\t{t}\t0\t3\t{0.5 + t / 10 + lr * 100}")
    path.write_text("\n".join(rows) + "\n")
    return path


def test_report_one_curve_per_swept_axis(tmp_path):
    sweep = six_cell_sweep(tmp_path / "s.tsv")
    assert main(["report", "--sweep", str(sweep), "--out", str(tmp_path / "r")]) == 0
    names = sorted(p.name for p in (tmp_path / "r").iterdir())
    curves = {n.rsplit(".", 1)[0] for n in names if "_curve_" in n}
    assert curves == {"sweep_curve_lr", "sweep_curve_text_frozen_epochs"}
    table = (tmp_path / "r" / "sweep_curve_text_frozen_epochs.tsv").read_text().splitlines()
    assert len(table) == 4


def test_report_history_plots(trained, tmp_path):
    assert main(["report", "--history", str(trained / "history.jsonl"), "--out", str(tmp_path / "r")]) == 0
    names = {p.name for p in (tmp_path / "r").iterdir()}
    assert "history.tsv" in names and any(n.endswith(".png") for n in names)


def test_report_byte_identical(trained, tmp_path):
    sweep = six_cell_sweep(tmp_path / "s.tsv")
    for d in ("a", "b"):
        args = ["report", "--history", str(trained / "history.jsonl"), "--sweep", str(sweep), "--out", str(tmp_path / d)]
        assert main(args) == 0
    files = sorted(p.name for p in (tmp_path / "a").iterdir())
    assert files == sorted(p.name for p in (tmp_path / "b").iterdir())
    for f in files:
        assert (tmp_path / "a" / f).read_bytes() == (tmp_path / "b" / f).read_bytes(), f


def test_report_empty_history_exit_3(tmp_path):
    (tmp_path / "h.jsonl").write_text("")
    assert main(["report", "--history", str(tmp_path / "h.jsonl"), "--out", str(tmp_path / "r")]) == 3


def test_report_parse_failure_exit_3(tmp_path):
    (tmp_path / "s.tsv").write_text("lr\tdev_metric\nabc\t0.5\n")
    assert main(["report", "--sweep", str(tmp_path / "s.tsv"), "--out", str(tmp_path / "r")]) == 3
