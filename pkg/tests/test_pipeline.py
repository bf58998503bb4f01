import csv
import json
from collections import Counter

import pytest

from quesim import pipeline
from quesim.cli import main
from quesim.errors import ConfigError, StageError, StaleDigestError
from quesim.secondary import log_loss
from quesim.text_prep import read_token_file, tokenize


def run(config, work):
    return pipeline.run_all(pipeline.load_config(config, work_dir=work))


def recent(manifest):
    return {r["stage"]: r["skipped"] for r in manifest.records[-len(pipeline.STAGES):]}


def test_second_run_skips_every_stage(smoke_dir):
    cfg = smoke_dir / "config.ini"
    first = run(cfg, smoke_dir / "work")
    assert not any(recent(first).values())
    second = run(cfg, smoke_dir / "work")
    assert all(recent(second).values())
    assert len(second.records) == 2 * len(pipeline.STAGES)


def test_missing_output_reruns_stage_and_downstream(smoke_dir):
    cfg = smoke_dir / "config.ini"
    run(cfg, smoke_dir / "work")
    before = (smoke_dir / "work" / "submission.csv").read_bytes()
    (smoke_dir / "work" / "features" / "test.csv").unlink()
    status = recent(run(cfg, smoke_dir / "work"))
    assert status == {"preprocess": True, "augment": True, "train-gru": True,
                      "featurize": False, "train-secondary": False, "predict": False}
    assert (smoke_dir / "work" / "submission.csv").read_bytes() == before


def test_changed_param_reruns_from_that_stage(smoke_dir):
    cfg = smoke_dir / "config.ini"
    run(cfg, smoke_dir / "work")
    text = cfg.read_text().replace("n_trees = 20", "n_trees = 10")
    cfg.write_text(text)
    status = recent(run(cfg, smoke_dir / "work"))
    assert [s for s, skipped in status.items() if not skipped] == ["train-secondary", "predict"]


def test_tampered_output_raises_stale_digest(smoke_dir):
    cfg = smoke_dir / "config.ini"
    run(cfg, smoke_dir / "work")
    with (smoke_dir / "work" / "augment" / "augmented.csv").open("a") as fh:
        fh.write("\n")
    with pytest.raises(StaleDigestError, match="augmented.csv"):
        run(cfg, smoke_dir / "work")


def test_manifest_records(smoke_dir):
    run(smoke_dir / "config.ini", smoke_dir / "work")
    records = json.loads((smoke_dir / "work" / "manifest.json").read_text())["records"]
    by_stage = {r["stage"]: r for r in records}
    assert list(by_stage) == list(pipeline.STAGES)
    assert by_stage["augment"]["seed"] == 1 and by_stage["train-gru"]["seed"] == 2
    assert by_stage["train-secondary"]["seed"] == 3
    assert all(len(d) == 64 for r in records for d in r["outputs"].values())


def test_submission_matches_evaluate(smoke_dir, capsys):
    run(smoke_dir / "config.ini", smoke_dir / "work")
    sub = pipeline.read_submission(smoke_dir / "work" / "submission.csv")
    labels = pipeline.read_submission(smoke_dir / "test_labels.csv")
    keys = sorted(labels)
    expected = log_loss([sub[k] for k in keys], [labels[k] for k in keys])
    code = main(["evaluate", "--submission", str(smoke_dir / "work" / "submission.csv"),
                 "--labels", str(smoke_dir / "test_labels.csv")])
    assert code == 0
    line = capsys.readouterr().out.splitlines()[0]
    assert float(line.split("\t")[1]) == expected


def test_submission_format(smoke_dir):
    run(smoke_dir / "config.ini", smoke_dir / "work")
    with (smoke_dir / "work" / "submission.csv").open() as fh:
        rows = list(csv.reader(fh))
    assert rows[0] == ["test_id", "is_duplicate"]
    assert [int(r[0]) for r in rows[1:]] == list(range(20))
    assert all(0.0 <= float(r[1]) <= 1.0 for r in rows[1:])


def test_empty_test_file_gives_header_only(smoke_dir):
    (smoke_dir / "test.csv").write_text("test_id,question1,question2\n")
    run(smoke_dir / "config.ini", smoke_dir / "work")
    assert (smoke_dir / "work" / "submission.csv").read_text() == "test_id,is_duplicate\n"


def test_predict_row_mismatch(smoke_dir):
    run(smoke_dir / "config.ini", smoke_dir / "work")
    w = smoke_dir / "work"
    short = smoke_dir / "short.csv"
    short.write_text("".join((smoke_dir / "test.csv").read_text().splitlines(True)[:5]))
    with pytest.raises(Exception, match="do not match"):
        pipeline.predict_file(w / "features" / "test.csv", w / "secondary" / "model.qsim", w / "x.csv", short)


def test_stage_error_names_stage(smoke_dir):
    (smoke_dir / "glove.txt").write_text("bad line\n")
    with pytest.raises(StageError) as info:
        run(smoke_dir / "config.ini", smoke_dir / "work")
    assert info.value.stage == "preprocess"


# -- config -------------------------------------------------------------------

def test_config_values(smoke_dir):
    cfg = pipeline.load_config(smoke_dir / "config.ini")
    assert cfg.model.max_len == 12 and cfg.model.hidden == [4] and cfg.model.head == [8]
    assert cfg.train.epochs == 5 and cfg.train.lr == 0.01 and cfg.train.seed == 2
    assert cfg.secondary.kind == "rf" and cfg.secondary.n_trees == 20
    assert cfg.work_dir == (smoke_dir / "work").resolve()
    assert cfg.embedding_dim == 8 and cfg.augment_seed == 1


@pytest.mark.parametrize("patch,match", [
    (("n_trees = 20", "n_trees = many"), "n_trees"),
    (("kind = rf", "kind = knn"), "kind"),
    (("lr = 0.01", "lr = 0.01\nmomentum = 0.9"), "momentum"),
    (("train = train.csv\n", ""), "train"),
    (("join = full", "join = full\ndropout = maybe"), "dropout"),
    (("lr = 0.01", "lr = 0.01\nfreeze_embeddings = sometimes"), "freeze_embeddings"),
])
def test_config_errors(smoke_dir, patch, match):
    cfg = smoke_dir / "config.ini"
    cfg.write_text(cfg.read_text().replace(*patch))
    with pytest.raises(ConfigError, match=match):
        pipeline.load_config(cfg)


def test_named_model_in_config(smoke_dir):
    cfg = smoke_dir / "config.ini"
    cfg.write_text(cfg.read_text().replace("hidden = 4\nhead = 8\nkeep_prob = 0.8\n", "name = GRU_3_2\n"))
    model = pipeline.load_config(cfg).model
    assert model.hidden == [250, 500, 250] and model.head == [1000, 1024] and model.keep_prob == 1.0


def test_explicit_keep_prob_overrides_named_model(smoke_dir):
    cfg = smoke_dir / "config.ini"
    cfg.write_text(cfg.read_text().replace("hidden = 4\nhead = 8\n", "name = GRU_1_1\n"))
    model = pipeline.load_config(cfg).model
    assert model.hidden == [250] and model.head == [1000] and model.keep_prob == 0.8


# -- CLI ----------------------------------------------------------------------

def test_cli_help(capsys):
    with pytest.raises(SystemExit) as info:
        main(["--help"])
    assert info.value.code == 0
    out = capsys.readouterr().out
    for command in pipeline.STAGES + ("stats", "evaluate", "run-all"):
        assert command in out


def test_cli_usage_error_exits_1(capsys):
    with pytest.raises(SystemExit) as info:
        main(["train-secondary"])
    assert info.value.code == 1


def test_cli_exit_codes(smoke_dir, capsys):
    assert main(["run-all", "--config", str(smoke_dir / "config.ini")]) == 0
    assert main(["run-all", "--config", str(smoke_dir / "missing.ini")]) == 1
    assert main(["augment", "--input", str(smoke_dir / "nope.csv"), "--out", str(smoke_dir / "a.csv")]) == 2
    # an unlabeled file cannot be augmented
    assert main(["augment", "--input", str(smoke_dir / "test.csv"), "--out", str(smoke_dir / "a.csv")]) == 2


def test_cli_preprocess_and_stats(smoke_dir, capsys):
    out = smoke_dir / "prep"
    assert main(["preprocess", "--input", str(smoke_dir / "train.csv"), "--glove", str(smoke_dir / "glove.txt"),
                 "--dim", "8", "--max-len", "12", "--out", str(out)]) == 0
    assert (out / "store.qsim").exists() and (out / "train.ids").exists()
    capsys.readouterr()
    assert main(["stats", "--tokens", str(out)]) == 0
    lines = capsys.readouterr().out.strip().splitlines()
    got = {int(a): int(b) for a, b in (line.split("\t") for line in lines[1:])}
    with (smoke_dir / "train.csv").open() as fh:
        rows = list(csv.DictReader(fh))
    expected = Counter(len(tokenize(r[k])) for r in rows for k in ("question1", "question2"))
    assert got == dict(expected)
    assert len(read_token_file(out / "train.tok")) == 2 * len(rows)


def test_cli_augment(smoke_dir, capsys):
    out = smoke_dir / "aug.csv"
    assert main(["augment", "--input", str(smoke_dir / "train.csv"), "--seed", "4", "--out", str(out)]) == 0
    assert "ratio: 1.0000" in capsys.readouterr().out
    with out.open() as fh:
        header = next(csv.reader(fh))
    assert header[-1] == "provenance"


def test_cli_stage_by_stage_matches_run_all(smoke_dir, capsys):
    run(smoke_dir / "config.ini", smoke_dir / "work")
    w = smoke_dir / "work"
    s = smoke_dir / "manual"
    cfg = str(smoke_dir / "config.ini")
    assert main(["train-gru", "--data", str(w / "augment" / "augmented.csv"), "--glove", str(w / "prep" / "store.qsim"),
                 "--config", cfg, "--out", str(s / "gru.qsim")]) == 0
    assert (s / "gru.qsim").read_bytes() == (w / "gru" / "model.qsim").read_bytes()
    for name in ("train", "test"):
        assert main(["featurize", "--data", str(smoke_dir / f"{name}.csv"), "--model", str(s / "gru.qsim"),
                     "--train-data", str(smoke_dir / "train.csv"), "--out", str(s / f"{name}_f.csv")]) == 0
        assert (s / f"{name}_f.csv").read_bytes() == (w / "features" / f"{name}.csv").read_bytes()
    assert main(["train-secondary", "--features", str(s / "train_f.csv"), "--config", cfg,
                 "--out", str(s / "sec.qsim")]) == 0
    assert main(["predict", "--features", str(s / "test_f.csv"), "--model", str(s / "sec.qsim"),
                 "--test", str(smoke_dir / "test.csv"), "--out", str(s / "sub.csv")]) == 0
    assert (s / "sub.csv").read_bytes() == (w / "submission.csv").read_bytes()
    assert main(["evaluate", "--features", str(s / "train_f.csv"), "--model", str(s / "sec.qsim")]) == 0
