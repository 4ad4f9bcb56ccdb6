"""CLI subcommands: happy paths and exit-code contracts."""

import numpy as np
import pytest

from kgfuse.cli import main
from kgfuse.config import Config
from kgfuse.data import generate_corpus
from kgfuse.kg import save_kg

TINY_CFG = """
corpus_entities = 30
corpus_relations = 3
corpus_triplets = 90
corpus_examples = 8
batch_size = 2
per_node_cap = 3
n_negatives = 4
k_final = 4
steps = 2
lr = 0.001
"""


@pytest.fixture
def tiny_config_file(tmp_path):
    path = tmp_path / "tiny.cfg"
    path.write_text(TINY_CFG)
    return path


@pytest.fixture
def kg_files(tmp_path, tiny_config_file):
    config = Config.load(tiny_config_file)
    corpus = generate_corpus(config)
    paths = (tmp_path / "entities.tsv", tmp_path / "relations.tsv",
             tmp_path / "triplets.tsv")
    save_kg(corpus.kg, *paths)
    return paths


def test_ingest_roundtrip(tmp_path, kg_files, capsys):
    out = tmp_path / "snapshot"
    code = main(["ingest", "--entities", str(kg_files[0]),
                 "--relations", str(kg_files[1]),
                 "--triplets", str(kg_files[2]), "--out", str(out)])
    assert code == 0
    assert "30 entities" in capsys.readouterr().out
    assert (out / "triplets.tsv").exists()


def test_ingest_bad_file_exits_one(tmp_path, kg_files, capsys):
    bad = tmp_path / "bad.tsv"
    bad.write_text("0\t0\t999\n")
    code = main(["ingest", "--entities", str(kg_files[0]),
                 "--relations", str(kg_files[1]), "--triplets", str(bad)])
    assert code == 1
    assert "error" in capsys.readouterr().err


def test_build_memory_and_retrieve(tmp_path, tiny_config_file, kg_files, capsys):
    out = tmp_path / "artifacts"
    code = main(["build-memory", "--entities", str(kg_files[0]),
                 "--relations", str(kg_files[1]),
                 "--triplets", str(kg_files[2]),
                 "--config", str(tiny_config_file), "--out", str(out)])
    assert code == 0
    capsys.readouterr()  # flush the build-memory message
    memory_path = out / "memory.embv"
    assert memory_path.exists()

    config = Config.load(tiny_config_file)
    corpus = generate_corpus(config)
    image_path = tmp_path / "image.npy"
    np.save(image_path, corpus.images[0])
    code = main(["retrieve", "--image", str(image_path),
                 "--memory", str(memory_path),
                 "--config", str(tiny_config_file)])
    assert code == 0
    lines = capsys.readouterr().out.strip().splitlines()
    assert len(lines) == config.k_final
    for line in lines:
        entity_id, score = line.split("\t")
        int(entity_id)
        float(score)


def test_pretrain_then_evals(tmp_path, tiny_config_file, capsys):
    out = tmp_path / "run"
    code = main(["pretrain", "--config", str(tiny_config_file),
                 "--out", str(out)])
    assert code == 0
    assert (out / "checkpoint.bin").exists()
    metrics = (out / "metrics.tsv").read_text().splitlines()
    assert metrics[0] == "step\tmlm\tmvm\tlinkpred\titc\ttotal"
    assert len(metrics) == 3  # header + 2 steps

    code = main(["eval-linkpred", "--checkpoint", str(out / "checkpoint.bin"),
                 "--config", str(tiny_config_file)])
    assert code == 0
    assert "MRR" in capsys.readouterr().out

    code = main(["eval-retrieval", "--checkpoint", str(out / "checkpoint.bin")])
    assert code == 0
    assert "recall@" in capsys.readouterr().out


def test_pretrain_determinism_across_invocations(tmp_path, tiny_config_file):
    out_a, out_b = tmp_path / "a", tmp_path / "b"
    assert main(["pretrain", "--config", str(tiny_config_file),
                 "--out", str(out_a)]) == 0
    assert main(["pretrain", "--config", str(tiny_config_file),
                 "--out", str(out_b)]) == 0
    assert (out_a / "metrics.tsv").read_bytes() == (out_b / "metrics.tsv").read_bytes()
    assert (out_a / "checkpoint.bin").read_bytes() == (out_b / "checkpoint.bin").read_bytes()


def test_gradcheck_passes_on_tiny_config(tmp_path, tiny_config_file, capsys):
    code = main(["gradcheck", "--config", str(tiny_config_file),
                 "--samples", "10"])
    assert code == 0
    out = capsys.readouterr().out
    assert out.count("ok") == 5


def test_bad_config_exits_one(tmp_path, capsys):
    bad = tmp_path / "bad.cfg"
    bad.write_text("no_such_key = 1\n")
    code = main(["pretrain", "--config", str(bad)])
    assert code == 1


def test_seed_flag_overrides_config(tmp_path, tiny_config_file):
    out_a, out_b = tmp_path / "a", tmp_path / "b"
    assert main(["pretrain", "--config", str(tiny_config_file),
                 "--seed", "5", "--out", str(out_a)]) == 0
    assert main(["pretrain", "--config", str(tiny_config_file),
                 "--seed", "6", "--out", str(out_b)]) == 0
    assert (out_a / "metrics.tsv").read_text() != (out_b / "metrics.tsv").read_text()
