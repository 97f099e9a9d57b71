import hashlib

import numpy as np
import pytest

from flowids.cli import main
from flowids.pipeline import load_prep
from flowids.synthetic import write_corpus
from flowids.trainer import load_checkpoint

TINY = "epochs = 2\nconv_filters = 4,8,8\nlstm_hidden = 8\nbatch_size = 64\n"
PUBLISHED = ("KNN (k=5)=90.1\nRandom Forest=88.48\nCNN=91.65\nCNN-LSTM=93.61\n"
          "DNN (5 Layers)=95.61\nCNN-LSTM-SVM=97.29\n")


@pytest.fixture(scope="module")
def work(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    write_corpus(root / "data", seed=3, scale=0.05)
    (root / "tiny.cfg").write_text(TINY)
    assert main(["preprocess", "--data", str(root / "data"), "--out", str(root / "prep16.bin"),
                 "--pca", "16"]) == 0
    return root


def sha(path):
    return hashlib.sha256(path.read_bytes()).hexdigest()


def test_preprocess_pca30_and_curve(work, capsys):
    out = work / "prep30.bin"
    assert main(["preprocess", "--data", str(work / "data"), "--out", str(out), "--pca", "30",
                 "--test-fraction", "0.25", "--seed", "4"]) == 0
    text = capsys.readouterr().out
    assert "components  cumulative_explained_variance" in text
    assert text.rstrip().splitlines()[-1].split()[0] == "30"
    art = load_prep(out)
    assert art.width == 30 and art.test_x.shape[1] == 30
    assert len(art.feature_names) == 77
    assert "Destination Port" not in art.feature_names


def test_preprocess_rerun_is_byte_identical(work):
    a, b = work / "a.bin", work / "b.bin"
    for path in (a, b):
        assert main(["preprocess", "--data", str(work / "data"), "--out", str(path), "--pca", "12",
                     "--seed", "2"]) == 0
    assert a.read_bytes() == b.read_bytes()


def test_preprocess_pca_zero_is_input_error(work, capsys):
    assert main(["preprocess", "--data", str(work / "data"), "--out", str(work / "z.bin"),
                 "--pca", "0"]) == 2
    assert "KOutOfRange" in capsys.readouterr().err


def test_preprocess_missing_directory(tmp_path, capsys):
    assert main(["preprocess", "--data", str(tmp_path / "nope"), "--out", str(tmp_path / "x")]) == 2
    assert capsys.readouterr().err.startswith("error: ")


def test_train_evaluate_predict_round(work, capsys):
    ckpt = work / "p.ckpt"
    assert main(["train", "--prep", str(work / "prep16.bin"), "--model", "proposed",
                 "--config", str(work / "tiny.cfg"), "--out", str(ckpt), "--quiet",
                 "--history", str(work / "h.csv")]) == 0
    out = capsys.readouterr().out
    assert "final val accuracy" in out and "#   epochs = 2" in out
    assert (work / "h.csv").read_text().splitlines()[0] == "epoch,train_loss,val_accuracy"
    loaded = load_checkpoint(ckpt)
    assert loaded.kind == "proposed" and loaded.history is not None

    assert main(["evaluate", "--ckpt", str(ckpt), "--prep", str(work / "prep16.bin"),
                 "--out", str(work / "ev")]) == 0
    line = next(l for l in capsys.readouterr().out.splitlines() if l.startswith("accuracy "))
    value = line.split()[1]
    assert len(value.split(".")[1]) == 4 and 0.0 <= float(value) <= 1.0
    assert (work / "ev" / "confusion.csv").read_text().startswith("true\\predicted,BENIGN")

    assert main(["predict", "--ckpt", str(ckpt), "--data",
                 str(work / "data" / "Tuesday-WorkingHours.pcap_ISCX.csv")]) == 0
    lines = capsys.readouterr().out.splitlines()
    assert lines[0] == "row,prediction" and len(lines) > 10


def test_train_twice_identical_checkpoint(work):
    paths = [work / "d1.ckpt", work / "d2.ckpt"]
    for p in paths:
        assert main(["train", "--prep", str(work / "prep16.bin"), "--model", "cnn", "--config",
                     str(work / "tiny.cfg"), "--out", str(p), "--quiet", "--seed", "9"]) == 0
    assert sha(paths[0]) == sha(paths[1])


def test_unknown_model_tag(work, capsys):
    assert main(["train", "--prep", str(work / "prep16.bin"), "--model", "svm9",
                 "--out", str(work / "x.ckpt")]) == 2
    assert "UnknownModel" in capsys.readouterr().err


def test_unknown_config_key(work, capsys):
    bad = work / "bad.cfg"
    bad.write_text("epochs = 1\nlearning_rte = 0.1\n")
    assert main(["train", "--prep", str(work / "prep16.bin"), "--model", "proposed",
                 "--config", str(bad), "--out", str(work / "x.ckpt")]) == 2
    assert "learning_rte" in capsys.readouterr().err


def test_non_finite_loss_exit_code(work, capsys):
    cfg = work / "boom.cfg"
    cfg.write_text(TINY + "optimizer = sgd_momentum\nlearning_rate = 1e200\n")
    with np.errstate(all="ignore"):
        code = main(["train", "--prep", str(work / "prep16.bin"), "--model", "dnn5",
                     "--config", str(cfg), "--out", str(work / "boom.ckpt"), "--quiet"])
    assert code == 3
    assert "NonFiniteLoss" in capsys.readouterr().err


@pytest.mark.parametrize("tag", ["knn", "rf"])
def test_classical_models_through_evaluate(work, tag, capsys):
    cfg = work / "rf.cfg"
    cfg.write_text("rf_trees = 5\nknn_k = 3\n")
    ckpt = work / f"{tag}.ckpt"
    assert main(["train", "--prep", str(work / "prep16.bin"), "--model", tag, "--config", str(cfg),
                 "--out", str(ckpt)]) == 0
    assert main(["evaluate", "--ckpt", str(ckpt), "--prep", str(work / "prep16.bin")]) == 0
    out = capsys.readouterr().out
    assert f"model {tag}" in out
    assert float(next(l for l in out.splitlines() if l.startswith("accuracy ")).split()[1]) > 0.8


def test_evaluate_width_mismatch(work, capsys):
    ckpt = work / "knn_w.ckpt"
    assert main(["train", "--prep", str(work / "prep16.bin"), "--model", "knn", "--out", str(ckpt)]) == 0
    assert main(["preprocess", "--data", str(work / "data"), "--out", str(work / "prep20.bin"),
                 "--pca", "20"]) == 0
    capsys.readouterr()
    assert main(["evaluate", "--ckpt", str(ckpt), "--prep", str(work / "prep20.bin")]) == 2
    assert "DimensionMismatch" in capsys.readouterr().err


def test_corrupt_checkpoint_is_input_error(work, capsys):
    ckpt = work / "knn_c.ckpt"
    assert main(["train", "--prep", str(work / "prep16.bin"), "--model", "knn", "--out", str(ckpt)]) == 0
    blob = bytearray(ckpt.read_bytes())
    blob[-40] ^= 0xFF
    ckpt.write_bytes(bytes(blob))
    capsys.readouterr()
    assert main(["evaluate", "--ckpt", str(ckpt), "--prep", str(work / "prep16.bin")]) == 2
    assert "ChecksumMismatch" in capsys.readouterr().err


def test_compare_published_results(tmp_path, capsys):
    results = tmp_path / "r.txt"
    results.write_text(PUBLISHED)
    assert main(["compare", "--results", str(results), "--proposed", "CNN-LSTM-SVM",
                 "--csv", str(tmp_path / "r.csv")]) == 0
    out = capsys.readouterr().out
    for model, delta in [("KNN (k=5)", "7.19"), ("Random Forest", "8.81"), ("CNN ", "5.64"),
                         ("CNN-LSTM ", "3.68"), ("DNN (5 Layers)", "1.68")]:
        assert any(l.startswith(model) and l.rstrip().endswith(delta) for l in out.splitlines())
    assert "Random Forest,88.48,8.81" in (tmp_path / "r.csv").read_text()


def test_compare_single_and_errors(tmp_path, capsys):
    one = tmp_path / "one.txt"
    one.write_text("mine=80\n")
    assert main(["compare", "--results", str(one), "--proposed", "mine"]) == 0
    assert capsys.readouterr().out.splitlines()[-1].startswith("mine (proposed model)")
    assert main(["compare", "--results", str(one), "--proposed", "other"]) == 2
    assert "MissingProposed" in capsys.readouterr().err
    bad = tmp_path / "bad.txt"
    bad.write_text("a=1\n\nno equals sign\n")
    assert main(["compare", "--results", str(bad), "--proposed", "a"]) == 2
    assert "line 3" in capsys.readouterr().err


def test_usage_error_exit_code(capsys):
    assert main([]) == 2
    assert main(["train"]) == 2
