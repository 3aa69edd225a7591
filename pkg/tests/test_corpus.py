import json

import pytest

from data.corpus import (
    CorpusRecord,
    DecodeRecord,
    PlanRecord,
    read_corpus,
    read_decodes,
    read_plans,
    write_jsonl,
)
from data.storage import CorpusStorage
from pcgen.errors import CorpusFormatError
from pcgen.inference.structures import Segmentation


def _write_lines(path, lines):
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    return path


def test_corpus_file_round_trip(tmp_path, clowns_record):
    bare = CorpusRecord(table=clowns_record.table, text=clowns_record.text)
    path = tmp_path / "train.jsonl"
    assert write_jsonl(path, [clowns_record, bare]) == 2
    loaded = read_corpus(path)
    assert loaded == [clowns_record, bare]
    assert loaded[1].align is None
    assert not (tmp_path / "train.jsonl.tmp").exists()


def test_decodes_and_plans_round_trip(tmp_path):
    decode = DecodeRecord(tokens=("a", "b"), states=Segmentation.from_spans([(0, 2, 1)]), score=-1.5, truncated=True)
    write_jsonl(tmp_path / "d.jsonl", [decode])
    assert read_decodes(tmp_path / "d.jsonl") == [decode]

    plan = PlanRecord(record=3, states=Segmentation.from_spans([(0, 1, 0), (1, 3, 2)]))
    write_jsonl(tmp_path / "p.jsonl", [plan])
    assert read_plans(tmp_path / "p.jsonl") == [plan]


def test_blank_lines_are_skipped(tmp_path, clowns_record):
    line = json.dumps(clowns_record.to_json())
    path = _write_lines(tmp_path / "c.jsonl", [line, "", line])
    assert len(read_corpus(path)) == 2


@pytest.mark.parametrize("bad", [
    "{not json",
    json.dumps({"text": ["a"]}),
    json.dumps({"table": [{"field": "name", "value": ["a"]}], "text": "a b"}),
    json.dumps({"table": [{"field": "name", "value": ["a"]}], "text": ["a"], "align": [[0, 2, "name"]]}),
    json.dumps({"table": [{"field": "name", "value": ["a"]}], "text": ["a"], "align": [[0, 1, "food"]]}),
])
def test_malformed_line_reports_its_number(tmp_path, clowns_record, bad):
    good = json.dumps(clowns_record.to_json())
    path = _write_lines(tmp_path / "c.jsonl", [good, bad])
    with pytest.raises(CorpusFormatError) as info:
        read_corpus(path)
    assert info.value.line_number == 2
    assert info.value.exit_code == 4


def test_missing_file(tmp_path):
    with pytest.raises(CorpusFormatError):
        read_corpus(tmp_path / "absent.jsonl")


def test_plan_validation(tmp_path):
    # gap between spans
    path = _write_lines(tmp_path / "p.jsonl", [json.dumps({"record": 0, "states": [[0, 1, 0], [2, 3, 1]]})])
    with pytest.raises(CorpusFormatError):
        read_plans(path)
    # neither record index nor inline table
    path = _write_lines(tmp_path / "p.jsonl", [json.dumps({"states": [[0, 1, 0]]})])
    with pytest.raises(CorpusFormatError):
        read_plans(path)
    inline = {"table": [{"field": "name", "value": ["Aromi"]}], "states": [[0, 1, 0]]}
    path = _write_lines(tmp_path / "p.jsonl", [json.dumps(inline)])
    (plan,) = read_plans(path)
    assert plan.record is None and plan.table.names == ("name",)


def test_storage_layout_and_summary(tmp_path, tiny_corpus):
    storage = CorpusStorage(data_dir=tmp_path / "data", models_dir=tmp_path / "models")
    for split, records in tiny_corpus.items():
        storage.save_split(split, records)
    assert storage.available_splits() == ["train", "valid", "test"]
    assert storage.load_split("train") == tiny_corpus["train"]
    assert storage.checkpoint_path("run").name == "run_best.pt"
    summary = storage.summary()
    assert list(summary["split"]) == ["train", "valid", "test"]
    assert summary["records"].sum() == 20
    with pytest.raises(CorpusFormatError):
        CorpusStorage(data_dir=tmp_path / "empty", models_dir=tmp_path / "models").load_split("train")
