import pytest

from pcgen.constraints.alignment import Alignment, AlignmentSet, Table, extract_alignments
from pcgen.errors import ContractError
from tests.conftest import CLOWNS_TABLE, CLOWNS_TEXT


def test_clowns_sentence():
    spans = extract_alignments(CLOWNS_TABLE, CLOWNS_TEXT)
    assert spans.to_json() == [[0, 1, "name"], [3, 5, "eatType"], [6, 8, "near"], [10, 14, "rating"]]


def test_no_shared_tokens():
    table = Table.from_items([("name", ["Zizzi"]), ("food", ["French"])])
    assert len(extract_alignments(table, "a pub by the river".split())) == 0


def test_value_appearing_twice_is_aligned_twice():
    table = Table.from_items([("name", ["The", "Mill"])])
    text = "The Mill is great and The Mill is cheap".split()
    assert extract_alignments(table, text).to_json() == [[0, 2, "name"], [5, 7, "name"]]


def test_matching_is_case_folded():
    table = Table.from_items([("area", ["City", "Centre"])])
    assert extract_alignments(table, "in the city centre".split()).to_json() == [[2, 4, "area"]]


def test_longest_match_wins_then_field_order():
    table = Table.from_items([("near", ["riverside"]), ("area", ["the", "riverside"]), ("other", ["riverside"])])
    text = "near the riverside".split()
    assert extract_alignments(table, text).to_json() == [[1, 3, "area"]]
    table = Table.from_items([("area", ["riverside"]), ("near", ["riverside"])])
    assert extract_alignments(table, "by the riverside".split()).to_json() == [[2, 3, "area"]]


def test_partial_matching():
    table = Table.from_items([("near", ["Crowne", "Plaza", "Hotel"])])
    text = "close to the Crowne Plaza".split()
    assert extract_alignments(table, text).to_json() == []
    assert extract_alignments(table, text, partial=True).to_json() == [[3, 5, "near"]]


def test_table_validation():
    with pytest.raises(ContractError):
        Table.from_items([("name", ["a"]), ("name", ["b"])])
    with pytest.raises(ContractError):
        Table.from_items([("name", [])])


def test_token_rows_count_positions_from_both_ends():
    rows = list(Table.from_items([("rating", ["1", "out", "of", "5"])]).token_rows())
    assert rows[0] == ("rating", "1", 1, 4)
    assert rows[-1] == ("rating", "5", 4, 1)


def test_alignment_set_validation():
    AlignmentSet((Alignment(0, 1, "name"),)).validate(3, CLOWNS_TABLE)
    with pytest.raises(ContractError):
        AlignmentSet((Alignment(0, 4, "name"),)).validate(3)
    with pytest.raises(ContractError):
        AlignmentSet((Alignment(0, 1, "food"),)).validate(3, CLOWNS_TABLE)
    with pytest.raises(ContractError):
        AlignmentSet((Alignment(0, 2, "name"), Alignment(1, 3, "name"))).validate(3)


def test_split_long_alignments():
    spans = AlignmentSet((Alignment(0, 5, "rating"), Alignment(5, 6, "name")))
    split = spans.split(2)
    assert split[0][1] == [(0, 2), (2, 4), (4, 5)]
    assert split[1][1] == [(5, 6)]
