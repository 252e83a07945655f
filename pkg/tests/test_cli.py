import json
import logging
import shutil
from pathlib import Path

import numpy as np
import pytest

from diarkit.cli import apply_overrides, build_parser, main
from diarkit.config import bundled_config_path, defaults, load_config
from diarkit.errors import ValidationError
from diarkit.pipeline import STAGES, Pipeline, read_cluster_labels

TINY = Path(__file__).parent / "data" / "tiny.ini"


def run(*args):
    return main([str(a) for a in args])


@pytest.fixture(scope="module")
def tiny_run(tmp_path_factory):
    out = tmp_path_factory.mktemp("tiny") / "out"
    assert run("run-all", "--config", TINY, "--out", out) == 0
    return out


def test_run_all_outputs(tiny_run, capsys):
    out = tiny_run
    for stage in ("prepare", "extractor", "embeddings", "plda", "bilstm", "scores", "sweep", "clusters", "results"):
        assert (out / stage / "stage.json").is_file()
    summary = (out / "results" / "summary.csv").read_text().splitlines()
    assert summary[0] == "scorer,clusterer,threshold,err_spk,err_fas,err_miss,T,der_percent"
    assert len(summary) == 5
    for name in ("der_by_system.png", "threshold_sweeps.png"):
        assert (out / "figures" / name).stat().st_size > 1000
    csv = (out / "results" / "der_bilstm_ahc.csv").read_text().splitlines()
    assert csv[0] == "recording,err_spk,err_fas,err_miss,T,der_percent" and csv[-1].startswith("ALL,")


def test_sweep_table_has_every_threshold(tiny_run):
    rows = (tiny_run / "sweep" / "bilstm_ahc.csv").read_text().splitlines()
    assert rows[0] == "threshold,DER"
    assert [float(r.split(",")[0]) for r in rows[1:]] == pytest.approx([i / 10 for i in range(11)])
    best = (tiny_run / "sweep" / "best.tsv").read_text().splitlines()
    for line in best[1:]:
        s, c, thr, der = line.split("\t")
        table = np.loadtxt(tiny_run / "sweep" / f"{s}_{c}.csv", delimiter=",", skiprows=1, ndmin=2)
        assert float(der) == pytest.approx(table[:, 1].min(), abs=0.01)
        assert float(thr) == pytest.approx(table[table[:, 1] == table[:, 1].min(), 0].min())


def test_cluster_label_files(tiny_run):
    labels = read_cluster_labels(tiny_run / "clusters" / "plda_ahc" / "rec005.txt")
    assert all(u.startswith("rec005-") for u in labels)
    assert sorted(set(labels.values())) == list(range(len(set(labels.values()))))
    assert (tiny_run / "clusters" / "plda_ahc" / "hyp.rttm").read_text().startswith("SPEAKER rec00")


def test_rerun_is_byte_identical(tiny_run, tmp_path):
    out = tmp_path / "again"
    assert run("run-all", "--config", TINY, "--out", out) == 0
    for p in sorted((tiny_run / "results").glob("der_*.csv")):
        assert (out / "results" / p.name).read_bytes() == p.read_bytes()


def test_evaluate_with_identical_files(tmp_path, capsys):
    rttm = tmp_path / "ref.rttm"
    rttm.write_text("SPEAKER r 1 0.00 5.00 <NA> <NA> A <NA> <NA>\nSPEAKER r 1 5.00 3.00 <NA> <NA> B <NA> <NA>\n")
    assert run("evaluate", "--ref", rttm, "--hyp", rttm) == 0
    out = capsys.readouterr().out
    assert "ALL,0.000,0.000,0.000,7.000,0.00" in out
    assert run("evaluate", "--ref", rttm) == 2


def test_missing_artifact_exit_code(tmp_path):
    assert run("score", "--config", TINY, "--out", tmp_path / "empty") == 3


def test_stale_seed_detected(tiny_run, tmp_path):
    out = tmp_path / "copy"
    shutil.copytree(tiny_run, out)
    assert run("sweep", "--config", TINY, "--out", out, "--seed", 99) == 3
    assert run("sweep", "--config", TINY, "--out", out) == 0


def test_tampered_artifact_detected(tiny_run, tmp_path):
    out = tmp_path / "copy"
    shutil.copytree(tiny_run, out)
    emb = sorted((out / "embeddings").glob("*.dkxv"))[0]
    emb.write_bytes(emb.read_bytes()[:-4] + b"\0\0\0\0")
    assert run("train-plda", "--config", TINY, "--out", out) == 3


def test_upstream_rerun_invalidates_downstream(tiny_run, tmp_path):
    out = tmp_path / "copy"
    shutil.copytree(tiny_run, out)
    record = json.loads((out / "scores" / "stage.json").read_text())
    assert set(record["inputs"]) >= {"extract"}
    (out / "embeddings" / "stage.json").write_text((out / "embeddings" / "stage.json").read_text() + " ")
    assert run("sweep", "--config", TINY, "--out", out) == 3


def test_config_change_invalidates(tiny_run, tmp_path):
    out = tmp_path / "copy"
    shutil.copytree(tiny_run, out)
    assert run("evaluate", "--config", TINY, "--out", out, "--collar", 0.1) == 3


def test_bad_config_lists_every_error(tmp_path, caplog):
    bad = tmp_path / "bad.ini"
    bad.write_text("[extractor]\nembedding_dim = 256\nlr = -1\n[segmentation]\nwindow = 1.0\nperiod = 2.0\n")
    with caplog.at_level(logging.ERROR, logger="diarkit"):
        assert run("prepare", "--config", bad, "--out", tmp_path / "o") == 2
    text = caplog.text
    assert "embedding_dim" in text and "lr" in text and "period" in text


def test_unknown_keys_rejected(tmp_path):
    bad = tmp_path / "bad.ini"
    bad.write_text("[extractor]\nwidth = 3\n[nonsense]\na = 1\n[plda]\nlength_norm = maybe\n")
    with pytest.raises(ValidationError) as e:
        load_config(bad)
    msg = str(e.value)
    assert "width" in msg and "nonsense" in msg and "length_norm" in msg
    assert run("prepare", "--config", tmp_path / "nope.ini") == 2


def test_flags_override_config():
    cfg = load_config(TINY)
    args = build_parser().parse_args(
        ["sweep", "--seed", "5", "--window", "2.5", "--period", "1.0", "--scorer", "plda", "--clusterer", "sc", "--embedding-dim", "512"]
    )
    apply_overrides(cfg, args)
    assert cfg.seed == 5
    assert cfg.get("segmentation", "window") == 2.5
    assert cfg.get("clustering", "scorers") == ["plda"] and cfg.get("clustering", "clusterers") == ["sc"]
    assert cfg.get("extractor", "embedding_dim") == 512
    assert cfg.get("bilstm", "hidden") == 4  # untouched values come from the file


def test_bundled_config_loads_and_validates():
    cfg = load_config()
    assert cfg.source == bundled_config_path()
    cfg.validate()
    assert cfg.get("corpus", "num_speakers") == 4
    assert cfg.get("extractor", "lr") == 0.01 and cfg.get("bilstm", "epochs") == 10
    assert cfg.get("bilstm", "max_seq_len") == 200
    assert cfg.get("clustering", "plda_ahc_sweep") == [-0.3, 0.5, 0.05]
    d = defaults()
    assert d.digest("plda") == defaults().digest("plda")


def test_stage_flag_and_conflicts(tmp_path):
    assert run("--stage", "score", "--config", TINY, "--out", tmp_path / "x") == 3
    assert run("prepare", "--stage", "score", "--config", TINY) == 2
    assert run("--config", TINY) == 2
    assert set(STAGES) == {
        "prepare", "train-extractor", "extract", "train-plda", "train-bilstm", "score", "sweep", "cluster", "evaluate"
    }


def test_log_level_from_environment(monkeypatch, tmp_path):
    monkeypatch.setenv("DIARKIT_LOG", "debug")
    assert run("score", "--config", TINY, "--out", tmp_path / "x") == 3
    assert logging.getLogger("diarkit").level == logging.DEBUG
    monkeypatch.setenv("DIARKIT_LOG", "error")
    assert run("score", "--config", TINY, "--out", tmp_path / "x") == 3
    assert logging.getLogger("diarkit").level == logging.ERROR
    monkeypatch.setenv("DIARKIT_LOG", "info")
    run("score", "--config", TINY, "--out", tmp_path / "x")


def test_pipeline_constructor_validates(tmp_path):
    cfg = load_config(TINY)
    cfg.set("corpus", "train_recordings", 10)
    with pytest.raises(ValidationError):
        Pipeline(cfg)
