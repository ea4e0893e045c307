import io
import logging
import os
import subprocess
import sys

import numpy as np
import pytest

import pcapgen as pg
from cicgen import cic_rows, write_cic
from flowsentry import cli
from flowsentry.cli import EXIT_DATA, EXIT_OK, EXIT_USAGE, main
from flowsentry.dataset import load_csv
from flowsentry.model_store import load
from flowsentry.schema import FEATURE_NAMES, LABELS
from flowsentry.scoring import batch_scores
from pipeline import check, run_pipeline


@pytest.fixture(scope="module")
def pipeline_dir(tmp_path_factory):
    return run_pipeline(tmp_path_factory.mktemp("pipe"), algo="rf", train_args=["--n-trees", "15"])


@pytest.fixture
def cic_csv(tmp_path):
    path = tmp_path / "cic.csv"
    write_cic(path, cic_rows(20, labels=("BENIGN", "Syn", "UDP-lag", "WebDDoS"), seed=3))
    return path


# -- exit codes -----------------------------------------------------------------


def test_no_subcommand_is_usage_error(capsys):
    assert main([]) == EXIT_USAGE
    assert "subcommand" in capsys.readouterr().err


@pytest.mark.parametrize(
    "argv",
    [
        ["bogus"],
        ["train", "--algo", "knn", "--train", "x", "--model", "y"],
        ["train", "--train", "x", "--model", "y"],
        ["prepare", "--in", "a.csv", "--out", "d"],
        ["extract", "--pcap", "x.pcap", "--out", "y", "--idle-timeout-s", "-3"],
        ["prepare", "--in", "a.csv", "--out", "d", "--per-class", "3", "--seed", "-1"],
        ["train", "--algo", "svm", "--train", "x", "--model", "y", "--n-trees", "5"],
    ],
)
def test_usage_errors(argv, capsys):
    assert main(argv) == EXIT_USAGE
    assert "usage error" in capsys.readouterr().err


def test_missing_flag_is_named(capsys):
    main(["evaluate", "--model", "m", "--test", "t", "--report", "r"])
    assert "--roc-dir" in capsys.readouterr().err


def test_algo_specific_flag_rejected(capsys):
    main(["train", "--algo", "dt", "--train", "x", "--model", "y", "--learning-rate", "0.3"])
    assert "--learning-rate" in capsys.readouterr().err


def test_missing_file_is_data_error(tmp_path, capsys):
    code = main(["extract", "--pcap", str(tmp_path / "nope.pcap"), "--out", str(tmp_path / "o.csv")])
    assert code == EXIT_DATA
    assert "nope.pcap" in capsys.readouterr().err


def test_bad_pcap_is_data_error(tmp_path, capsys):
    bad = tmp_path / "bad.pcap"
    bad.write_bytes(b"\x00" * 64)
    assert main(["extract", "--pcap", str(bad), "--out", str(tmp_path / "o.csv")]) == EXIT_DATA
    assert "bad.pcap" in capsys.readouterr().err


def test_bad_model_is_data_error(tmp_path, capsys):
    model = tmp_path / "m.txt"
    model.write_text("garbage\n")
    test = tmp_path / "t.csv"
    test.write_text(",".join(FEATURE_NAMES) + "\n")
    code = main(["predict", "--model", str(model), "--in", str(test), "--out", str(tmp_path / "p.csv")])
    assert code == EXIT_DATA
    assert "magic" in capsys.readouterr().err


def test_missing_column_names_file_and_column(tmp_path, pipeline_dir, capsys):
    src = tmp_path / "x.csv"
    src.write_text(",".join(FEATURE_NAMES[:-1]) + "\n" + ",".join(["1"] * 17) + "\n")
    code = main(["predict", "--model", str(pipeline_dir / "model.txt"), "--in", str(src),
                 "--out", str(tmp_path / "p.csv")])
    assert code == EXIT_DATA
    err = capsys.readouterr().err
    assert "x.csv" in err and "avg_packet_size" in err


def test_bad_row_names_row(tmp_path, pipeline_dir, capsys):
    src = tmp_path / "x.csv"
    src.write_text(",".join(FEATURE_NAMES) + "\n" + ",".join(["1"] * 18) + "\n"
                   + ",".join(["1"] * 17 + ["oops"]) + "\n")
    code = main(["predict", "--model", str(pipeline_dir / "model.txt"), "--in", str(src),
                 "--out", str(tmp_path / "p.csv")])
    assert code == EXIT_DATA
    assert "row 3" in capsys.readouterr().err


def test_version(capsys):
    with pytest.raises(SystemExit) as exc:
        main(["--version"])
    assert exc.value.code == 0
    assert "flowsentry" in capsys.readouterr().out


# -- extract / prepare ------------------------------------------------------------


def test_extract_writes_csv_and_manifest(tmp_path):
    pcap = tmp_path / "u.pcap"
    pcap.write_bytes(pg.capture(pg.traffic("udp", 5, seed=2) + [(10**9, pg.arp_frame())]))
    out = tmp_path / "u.csv"
    check(["extract", "--pcap", pcap, "--out", out])
    rows = out.read_text().splitlines()
    assert rows[0].split(",")[:18] == list(FEATURE_NAMES)
    assert len(rows) == 6
    manifest = (tmp_path / "u.csv.manifest").read_text()
    assert "counters.flows = 5" in manifest and "counters.skipped_not_ipv4 = 1" in manifest
    assert "params.idle_timeout_s = 120.0" in manifest and "sha256=" in manifest


def test_prepare_on_cic_csv(tmp_path, cic_csv):
    out = tmp_path / "prep"
    check(["prepare", "--in", cic_csv, "--out", out, "--per-class", "10", "--seed", "4"])
    train = load_csv([out / "train.csv"])
    test = load_csv([out / "test.csv"])
    assert len(train) == 24 and len(test) == 6
    manifest = (out / "manifest.txt").read_text()
    assert "counters.dropped_excluded_label = 20" in manifest
    assert "counters.selected_rows = 30" in manifest


def test_config_file_and_flag_precedence(tmp_path, cic_csv):
    cfg = tmp_path / "run.cfg"
    cfg.write_text(f"# prepare settings\nin = {cic_csv}\nper-class = 4\nseed = 9\n")
    out_a = tmp_path / "a"
    check(["prepare", "--config", cfg, "--out", out_a])
    assert "counters.selected_rows = 12" in (out_a / "manifest.txt").read_text()
    out_b = tmp_path / "b"
    check(["prepare", "--config", cfg, "--out", out_b, "--per-class", "6"])
    manifest = (out_b / "manifest.txt").read_text()
    assert "counters.selected_rows = 18" in manifest and "params.seed = 9" in manifest


def test_config_unknown_key(tmp_path, capsys):
    cfg = tmp_path / "run.cfg"
    cfg.write_text("colour = blue\n")
    assert main(["prepare", "--config", str(cfg), "--out", "x"]) == EXIT_USAGE
    assert "colour" in capsys.readouterr().err


# -- train / evaluate / predict -----------------------------------------------------


def test_train_is_deterministic(pipeline_dir, tmp_path):
    train = pipeline_dir / "prep" / "train.csv"
    a, b = tmp_path / "a.model", tmp_path / "b.model"
    for path in (a, b):
        check(["train", "--algo", "rf", "--seed", "7", "--train", train, "--model", path, "--n-trees", "12"])
    assert a.read_bytes() == b.read_bytes()
    c = tmp_path / "c.model"
    check(["train", "--algo", "rf", "--seed", "8", "--train", train, "--model", c, "--n-trees", "12"])
    assert c.read_bytes() != a.read_bytes()


@pytest.mark.parametrize("algo", ["dt", "rf", "gbt", "svm"])
def test_train_each_algo_with_params(pipeline_dir, tmp_path, algo):
    extra = {"dt": ["--max-depth", "4"], "rf": ["--n-trees", "5", "--mtry", "3"],
             "gbt": ["--n-rounds", "5", "--learning-rate", "0.3"], "svm": ["--epochs", "3"]}[algo]
    model_path = tmp_path / "m.model"
    check(["train", "--algo", algo, "--train", pipeline_dir / "prep" / "train.csv",
           "--model", model_path, *extra])
    model = load(model_path)
    flag, value = extra[0][2:].replace("-", "_"), extra[1]
    assert str(model.get_params()[flag]) == value
    assert "command = train" in (tmp_path / "m.model.manifest").read_text()


def test_evaluate_outputs(pipeline_dir):
    report = (pipeline_dir / "report.txt").read_text()
    assert all(label in report for label in LABELS)
    assert "0.00*" in report  # absent classes are flagged, not silently zero
    roc = sorted(p.name for p in (pipeline_dir / "roc").iterdir())
    assert roc == ["roc.svg", "roc_BENIGN.csv", "roc_DrDoS_UDP.csv", "roc_Syn.csv"]
    assert '"auc"' in (pipeline_dir / "report.json").read_text()


def test_predict_matches_evaluate(pipeline_dir, tmp_path):
    out = tmp_path / "pred.csv"
    check(["predict", "--model", pipeline_dir / "model.txt", "--in", pipeline_dir / "prep" / "test.csv",
           "--out", out])
    predicted = [line.split(",")[0] for line in out.read_text().splitlines()[1:]]
    evaluated = [line.split(",")[2] for line in (pipeline_dir / "report.predictions.csv").read_text().splitlines()[1:]]
    assert predicted == evaluated
    # and the streamed scores equal the batch scores bit for bit
    model = load(pipeline_dir / "model.txt")
    _, scores = batch_scores(model, load_csv([pipeline_dir / "prep" / "test.csv"]).features)
    streamed = np.array([[float(v) for v in line.split(",")[1:]] for line in out.read_text().splitlines()[1:]])
    assert np.array_equal(streamed, scores)
    header = out.read_text().splitlines()[0]
    assert header == "label,score_BENIGN,score_DrDoS_UDP,score_Syn"


@pytest.mark.parametrize("algo", ["dt", "gbt", "svm"])
def test_streamed_scores_match_batch_for_all_kinds(pipeline_dir, tmp_path, algo):
    model_path = tmp_path / "m.model"
    check(["train", "--algo", algo, "--train", pipeline_dir / "prep" / "train.csv", "--model", model_path,
           *(["--n-rounds", "10"] if algo == "gbt" else [])])
    test = pipeline_dir / "prep" / "test.csv"
    out = tmp_path / "p.csv"
    check(["predict", "--model", model_path, "--in", test, "--out", out])
    streamed = np.array([[float(v) for v in line.split(",")[1:]] for line in out.read_text().splitlines()[1:]])
    _, scores = batch_scores(load(model_path), load_csv([test]).features)
    assert np.array_equal(streamed, scores)


def test_predict_accepts_raw_cic_columns(pipeline_dir, tmp_path, cic_csv):
    out = tmp_path / "p.csv"
    check(["predict", "--model", pipeline_dir / "model.txt", "--in", cic_csv, "--out", out])
    assert len(out.read_text().splitlines()) == 81  # excluded labels are not filtered at predict time


def test_predict_stdin_stdout(pipeline_dir, monkeypatch, capsys):
    test = (pipeline_dir / "prep" / "test.csv").read_text()
    monkeypatch.setattr(sys, "stdin", io.StringIO(test))
    assert main(["predict", "--model", str(pipeline_dir / "model.txt"), "--in", "-", "--out", "-"]) == EXIT_OK
    lines = capsys.readouterr().out.splitlines()
    assert len(lines) == len(test.splitlines())


def _write_feature_rows(path, n_rows):
    with open(path, "w") as fh:
        fh.write(",".join(FEATURE_NAMES) + "\n")
        for i in range(n_rows):
            fh.write(",".join(str((i * 7 + j) % 13) for j in range(18)) + "\n")


_PEAK_RSS_RUNNER = """
import sys
from flowsentry.cli import main
code = main(sys.argv[1:])
with open("/proc/self/status") as fh:
    peak = next(line.split()[1] for line in fh if line.startswith("VmHWM:"))
sys.stderr.write("peak_rss_kb=" + peak + "\\n")
sys.exit(code)
"""


def _predict_peak_rss_kb(model_path, csv_path):
    """Run ``predict`` in a fresh process streaming stdin to stdout; return its peak resident set.

    The peak is read inside the child: rusage of a forked child inherits the
    parent's high-water mark, which would hide the child's own footprint.
    """
    with open(csv_path, "rb") as src:
        proc = subprocess.run(
            [sys.executable, "-c", _PEAK_RSS_RUNNER, "predict", "--model", str(model_path),
             "--in", "-", "--out", "-"],
            stdin=src, stdout=subprocess.DEVNULL, stderr=subprocess.PIPE, text=True, check=False,
        )
    assert proc.returncode == 0, proc.stderr
    return int(proc.stderr.rsplit("peak_rss_kb=", 1)[1])


@pytest.mark.slow
@pytest.mark.skipif(not os.path.exists("/proc/self/status"), reason="needs Linux /proc")
def test_predict_memory_is_bounded(pipeline_dir, tmp_path):
    small, large = tmp_path / "small.csv", tmp_path / "large.csv"
    _write_feature_rows(small, 10_000)
    _write_feature_rows(large, 1_000_000)
    model = pipeline_dir / "model.txt"
    rss_small = _predict_peak_rss_kb(model, small)
    rss_large = _predict_peak_rss_kb(model, large)
    # a buffered reader would need well over 100 MB for the large input
    assert rss_large < rss_small + 16 * 1024, (rss_small, rss_large)


# -- logging ------------------------------------------------------------------------


def test_log_level_from_environment(monkeypatch, tmp_path):
    monkeypatch.setenv("FLOWSENTRY_LOG", "debug")
    cli.configure_logging()
    assert logging.getLogger("flowsentry").level == logging.DEBUG
    monkeypatch.delenv("FLOWSENTRY_LOG")
    cli.configure_logging()
    assert logging.getLogger("flowsentry").level == logging.WARNING


def test_info_messages_only_when_enabled(monkeypatch, tmp_path, capsys):
    pcap = tmp_path / "u.pcap"
    pcap.write_bytes(pg.capture(pg.traffic("udp", 2)))
    monkeypatch.setenv("FLOWSENTRY_LOG", "info")
    check(["extract", "--pcap", pcap, "--out", tmp_path / "a.csv"])
    assert "extracted 2 flows" in capsys.readouterr().err
    monkeypatch.setenv("FLOWSENTRY_LOG", "error")
    check(["extract", "--pcap", pcap, "--out", tmp_path / "b.csv"])
    assert capsys.readouterr().err == ""


def test_library_warnings_are_logged(monkeypatch, tmp_path, cic_csv, capsys):
    monkeypatch.setenv("FLOWSENTRY_LOG", "warn")
    check(["prepare", "--in", cic_csv, "--out", tmp_path / "p", "--per-class", "25"])
    assert "WARNING flowsentry" in capsys.readouterr().err
