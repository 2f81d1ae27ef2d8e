import pytest

from sefun.taxonomy import (
    ALL_FUNCTIONS,
    Level1,
    Level2,
    SentenceFunction,
    UnknownLabel,
    level1_of,
    level2_children,
    parse_label,
    serialize_label,
)


def test_sizes_and_codes():
    assert [int(x) for x in Level1] == [0, 1, 2, 3]
    assert [int(x) for x in Level2] == list(range(20))
    assert {l1.name: len(level2_children(l1)) for l1 in Level1} == {"DE": 5, "IN": 8, "IM": 4, "EX": 3}


@pytest.mark.parametrize("l2,l1", [
    (Level2.WH_STYLE_IN, Level1.IN),
    (Level2.POSITIVE_DE, Level1.DE),
    (Level2.EX_WITH_GREETINGS, Level1.EX),
    (Level2.IM_WITH_FORBIDDEN, Level1.IM),
])
def test_level1_of(l2, l1):
    assert level1_of(l2) is l1


def test_round_trip_all_labels():
    assert len(ALL_FUNCTIONS) == 20
    for sf in ALL_FUNCTIONS:
        assert parse_label(serialize_label(sf)) == sf


@pytest.mark.parametrize("text,expected", [
    ("IN:Yes-no IN", (Level1.IN, Level2.YES_NO_IN)),
    ("DE:Positive DE", (Level1.DE, Level2.POSITIVE_DE)),
    ("in:yes-no in", (Level1.IN, Level2.YES_NO_IN)),
    ("  EX:EX with greetings ", (Level1.EX, Level2.EX_WITH_GREETINGS)),
])
def test_parse(text, expected):
    sf = parse_label(text)
    assert (sf.level1, sf.level2) == expected


@pytest.mark.parametrize("bad", ["IN:Maybe IN", "", "DE:Yes-no IN", "XX:Positive DE", "IN"])
def test_parse_rejects(bad):
    with pytest.raises(UnknownLabel):
        parse_label(bad)


def test_sentence_function_invariant():
    with pytest.raises(ValueError):
        SentenceFunction(Level1.DE, Level2.YES_NO_IN)
    sf = SentenceFunction.of(Level2.A_NOT_A_IN)
    assert sf.level1 is Level1.IN
    assert sf.at_level(1) == int(Level1.IN) and sf.at_level(2) == int(Level2.A_NOT_A_IN)


def test_wire_names_are_ascii():
    for sf in ALL_FUNCTIONS:
        assert serialize_label(sf).isascii()
