"""CLI surface: batch, query, replay (batch mode), train subcommands."""

import json
import random

from click.testing import CliRunner

from aci.cli import main
from aci.ingest import encode_transcript

from genutil import random_transcript


def write_transcripts(tmp_path, n=3, seed=1):
    rng = random.Random(seed)
    paths = []
    for i in range(n):
        file = random_transcript(rng, f"cli{i}", n_words=15)
        p = tmp_path / f"cli{i}.jsonl"
        p.write_text(encode_transcript(file.header, list(file.words)), encoding="utf-8")
        paths.append(p)
    return paths


def test_batch_then_query(tmp_path):
    runner = CliRunner()
    paths = write_transcripts(tmp_path)
    store = tmp_path / "store"
    result = runner.invoke(main, ["batch", *map(str, paths), "--store", str(store)])
    assert result.exit_code == 0, result.output
    assert "processed 3, failures 0" in result.output

    result = runner.invoke(main, ["query", json.dumps({"aggregations": ["avg_risk"]}),
                                  "--store", str(store)])
    assert result.exit_code == 0, result.output
    out = json.loads(result.output)
    assert out["total"] == 3 and len(out["hits"]) == 3


def test_replay_batch_mode_prints_events(tmp_path):
    runner = CliRunner()
    (path,) = write_transcripts(tmp_path, n=1, seed=2)
    result = runner.invoke(main, ["replay", str(path), "--batch"])
    assert result.exit_code == 0, result.output
    lines = [l for l in result.output.splitlines() if l.startswith('{"v":1')]
    assert any('"type":"call_started"' in l for l in lines)
    assert any('"type":"call_ended"' in l for l in lines)


def test_train_annotate_and_synonyms(tmp_path):
    runner = CliRunner()
    paths = write_transcripts(tmp_path / "corpus_src", 0)  # ensure dir exists
    corpus_dir = tmp_path / "corpus"
    corpus_dir.mkdir()
    rng = random.Random(3)
    from genutil import words_from_texts
    from aci.events import Speaker
    from aci.ingest import TranscriptFile, TranscriptHeader

    words = words_from_texts("t1", Speaker.CUSTOMER, "please cancel my account now".split())
    file = TranscriptFile(TranscriptHeader("t1", {}, None), tuple(words))
    (corpus_dir / "t1.jsonl").write_text(encode_transcript(file.header, list(file.words)))

    intent_file = tmp_path / "cancel.intent"
    intent_file.write_text('intent cancel category retention: "cancel my account"\n')

    result = runner.invoke(main, ["train", "annotate", str(intent_file), "--corpus", str(corpus_dir)])
    assert result.exit_code == 0, result.output
    assert "cancel: 1 matches in 1/1 calls" in result.output

    result = runner.invoke(main, ["train", "synonyms", "cancel", "--corpus", str(corpus_dir)])
    assert result.exit_code == 0, result.output


def test_train_fp_appends_negative(tmp_path):
    runner = CliRunner()
    corpus_dir = tmp_path / "corpus"
    corpus_dir.mkdir()
    from genutil import words_from_texts
    from aci.events import Speaker
    from aci.ingest import TranscriptFile, TranscriptHeader

    words = words_from_texts("t1", Speaker.CUSTOMER, "cancel my magazine".split())
    file = TranscriptFile(TranscriptHeader("t1", {}, None), tuple(words))
    (corpus_dir / "t1.jsonl").write_text(encode_transcript(file.header, list(file.words)))

    intents_dir = tmp_path / "intents"
    intents_dir.mkdir()
    (intents_dir / "cancel.intent").write_text('intent cancel: "cancel my @PRODUCT"\n'.replace("@PRODUCT", "(account|magazine)"))

    result = runner.invoke(main, [
        "train", "fp", "cancel", "t1", "0:2",
        "--corpus", str(corpus_dir), "--intents", str(intents_dir),
    ])
    assert result.exit_code == 0, result.output
    text = (intents_dir / "cancel.intent").read_text()
    assert '!negative "cancel my magazine"' in text
    # idempotent
    result = runner.invoke(main, [
        "train", "fp", "cancel", "t1", "0:2",
        "--corpus", str(corpus_dir), "--intents", str(intents_dir),
    ])
    assert "already recorded" in result.output


def test_env_config_provides_defaults(tmp_path, monkeypatch):
    runner = CliRunner()
    intents_dir = tmp_path / "intents"
    intents_dir.mkdir()
    (intents_dir / "x.intent").write_text('intent helpme category support: "help with my account"\n')
    cfg_path = tmp_path / "aci.json"
    cfg_path.write_text(json.dumps({"intents": str(intents_dir)}))
    monkeypatch.setenv("ACI_CONFIG", str(cfg_path))

    from genutil import words_from_texts
    from aci.events import Speaker
    from aci.ingest import TranscriptFile, TranscriptHeader

    words = words_from_texts("e1", Speaker.CUSTOMER, "please help with my account".split())
    file = TranscriptFile(TranscriptHeader("e1", {}, None), tuple(words))
    src = tmp_path / "e1.jsonl"
    src.write_text(encode_transcript(file.header, list(file.words)))

    store = tmp_path / "store"
    result = runner.invoke(main, ["batch", str(src), "--store", str(store)])
    assert result.exit_code == 0, result.output

    result = runner.invoke(main, ["query", json.dumps({"intent_ids": ["helpme"]}),
                                  "--store", str(store)])
    assert result.exit_code == 0, result.output
    assert json.loads(result.output)["total"] == 1
