import json

import pytest

from wyr.cli import main, parse_classes

TINY = """
seed: 1
data:
  experiment: planted_motif_flat
  params:
    sequence_length: 30
    classes: 2
    motif_tokens: 2
  n_per_class: 8
  test_fraction: 0.25
  val_fraction: 0.25
explanandum:
  embedding_dim: 8
explainer:
  embedding_dim: 8
  hidden_size: 4
  num_layers: 1
train_explanandum:
  lr: 0.01
  batch_size: 4
  epochs: 2
train_explainer:
  lr: 0.01
  batch_size: 4
  epochs: 2
evaluation:
  batch_size: 4
  occlusion_sample: 4
  gallery_size: 2
"""


@pytest.fixture
def config(tmp_path):
    path = tmp_path / "tiny.yaml"
    path.write_text(TINY)
    return path


def run(*argv):
    return main([str(a) for a in argv] + ["--no-progress", "-q"])


def test_parse_classes():
    assert parse_classes("4x12") == (4, 12)
    assert parse_classes("3") == (3,)


@pytest.mark.parametrize(
    "argv",
    [
        [],
        ["bogus"],
        ["gen-data", "--classes", "1x4"],
        ["gen-data", "--classes", "fourxtwelve"],
        ["evaluate", "--data", "d"],
        ["explain", "--data", "d", "--explanandum", "a", "--explainer", "b", "--format", "svg"],
    ],
)
def test_usage_errors_exit_with_two(argv):
    assert main(argv) == 2


def test_gen_data_is_reproducible(tmp_path, config):
    first, second = tmp_path / "first", tmp_path / "second"
    assert run("gen-data", "--config", config, "--out", first) == 0
    assert run("gen-data", "--config", config, "--out", second) == 0
    for split in ("train", "val", "test"):
        for name in ("dataset.jsonl", "labels.json"):
            assert (first / split / name).read_bytes() == (second / split / name).read_bytes()
    manifest = json.loads((first / "manifest.json").read_text())
    assert manifest["command"] == "gen-data"
    assert manifest["seed"] == 1
    assert "train/dataset.jsonl" in manifest["outputs"]
    assert (first / "run.log").is_file()


def test_gen_data_seed_and_class_overrides(tmp_path, config):
    out = tmp_path / "data"
    assert run("gen-data", "--config", config, "--out", out, "--seed", 2, "--classes", "3") == 0
    labels = json.loads((out / "train" / "labels.json").read_text())
    assert labels["heads"][0]["classes"] == 3
    manifest = json.loads((out / "manifest.json").read_text())
    assert manifest["seed"] == 2


def test_gen_data_from_fasta(tmp_path, config):
    fasta = tmp_path / "seqs.fasta"
    labels = tmp_path / "labels.csv"
    records = [(f"r{i}", "ACGTAC" * 3 if i % 2 else "ttgcaa" * 3, "ab"[i % 2]) for i in range(12)]
    fasta.write_text("".join(f">{name}\n{seq}\n" for name, seq, _ in records))
    labels.write_text("id,kind\n" + "".join(f"{name},{kind}\n" for name, _, kind in records))
    out = tmp_path / "fasta"
    code = run(
        "gen-data", "--config", config, "--out", out, "--fasta", fasta, "--labels", labels,
        "--k", 3,
    )
    assert code == 0
    meta = json.loads((out / "test" / "labels.json").read_text())
    assert meta["heads"] == [{"name": "kind", "classes": 2, "class_names": ["a", "b"]}]
    assert meta["vocabulary"]["k"] == 3


def test_runtime_errors_exit_with_one(tmp_path, config):
    data = tmp_path / "data"
    assert run("gen-data", "--config", config, "--out", data) == 0
    missing = tmp_path / "missing.json"
    assert run(
        "train-explainer", "--config", config, "--data", data, "--explanandum", missing,
        "--out", tmp_path / "explainer",
    ) == 1
    bad_config = tmp_path / "bad.yaml"
    bad_config.write_text("losses:\n  alpha: 1\n")
    assert run("gen-data", "--config", bad_config, "--out", tmp_path / "bad") == 1
    assert "unknown keys" in (tmp_path / "bad" / "run.log").read_text()
    assert run("gen-data", "--config", config, "--fasta", tmp_path / "x.fa",
               "--out", tmp_path / "nolabels") == 1


def test_pipeline_end_to_end(tmp_path, config):
    data, models, out = tmp_path / "data", tmp_path / "models", tmp_path / "eval"
    assert run("gen-data", "--config", config, "--out", data) == 0
    assert run("train-explanandum", "--config", config, "--data", data, "--out", models) == 0
    explanandum = models / "explanandum.json"
    assert explanandum.is_file()
    assert (models / "explanandum_history.csv").is_file()
    assert run(
        "train-explainer", "--config", config, "--data", data, "--explanandum", explanandum,
        "--out", models, "--epochs", 1,
    ) == 0
    explainer = models / "explainer.json"
    checkpoints = ["--explanandum", explanandum, "--explainer", explainer]

    assert run(
        "explain", "--config", config, "--data", data / "test", *checkpoints,
        "--format", "html", "--limit", 3, "--out", tmp_path / "html",
    ) == 0
    page = (tmp_path / "html" / "masks.html").read_text(encoding="utf-8")
    assert page.count('class="sequence"') == 3
    records = (tmp_path / "html" / "masks.jsonl").read_text().splitlines()
    assert set(json.loads(records[0])) == {"id", "mask", "rounded", "chunks"}

    assert run(
        "explain", "--config", config, "--data", data / "test", *checkpoints,
        "--target", "predicted", "--out", tmp_path / "ansi",
    ) == 0
    assert (tmp_path / "ansi" / "masks.ansi.txt").is_file()

    assert run(
        "evaluate", "--config", config, "--data", data / "test", *checkpoints,
        "--threads", 2, "--out", out,
    ) == 0
    report = json.loads((out / "report.json").read_text())
    assert report["accuracies"]["unmasked"].keys() == {"class"}
    assert "occlusion" in (out / "gallery.html").read_text(encoding="utf-8")
    assert (out / "timings.json").is_file()

    again = tmp_path / "again"
    assert run("report", "--report", out / "report.json", "--out", again) == 0
    assert (again / "report.md").read_text() == (out / "report.md").read_text()


def test_mismatched_vocabulary_is_refused(tmp_path, config):
    data, models = tmp_path / "data", tmp_path / "models"
    assert run("gen-data", "--config", config, "--out", data) == 0
    assert run("train-explanandum", "--config", config, "--data", data, "--out", models) == 0
    assert run(
        "train-explainer", "--config", config, "--data", data,
        "--explanandum", models / "explanandum.json", "--out", models,
    ) == 0

    other_config = tmp_path / "other.yaml"
    other_config.write_text(TINY.replace("motif_tokens: 2", "motif_tokens: 2\n    k: 2"))
    other = tmp_path / "other"
    assert run("gen-data", "--config", other_config, "--out", other) == 0
    assert run(
        "evaluate", "--config", config, "--data", other / "test",
        "--explanandum", models / "explanandum.json", "--explainer", models / "explainer.json",
        "--out", tmp_path / "eval",
    ) == 1
    assert "VocabularyMismatchError" in (tmp_path / "eval" / "run.log").read_text()
