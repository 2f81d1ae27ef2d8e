"""The fixed two-level sentence-function label set.

Level-1 has the four classic functions; level-2 splits them into twenty
fine-grained labels.  Integer codes follow the canonical table order and are
part of the model file format, so never reorder the members below.
"""
from __future__ import annotations

import enum
from dataclasses import dataclass


class UnknownLabel(ValueError):
    """Raised when a label string matches no taxonomy entry."""


class Level1(enum.IntEnum):
    DE = 0
    IN = 1
    IM = 2
    EX = 3

    @property
    def full_name(self) -> str:
        return _LEVEL1_NAMES[self]


_LEVEL1_NAMES = {
    Level1.DE: "Declarative",
    Level1.IN: "Interrogative",
    Level1.IM: "Imperative",
    Level1.EX: "Exclamatory",
}


class Level2(enum.IntEnum):
    POSITIVE_DE = 0
    NEGATIVE_DE = 1
    DE_WITH_IN_WORDS = 2
    DOUBLE_NEGATIVE_DE = 3
    OTHER_DE = 4
    WH_STYLE_IN = 5
    YES_NO_IN = 6
    A_NOT_A_IN = 7
    ALTERNATIVE_IN = 8
    IN_WITH_TAG_QUESTION = 9
    RHETORICAL = 10
    IN_WITH_BACKCHANNEL = 11
    IN_WITH_OPEN_QUESTION = 12
    IM_WITH_REQUEST = 13
    IM_WITH_DISSUADE = 14
    IM_WITH_COMMAND = 15
    IM_WITH_FORBIDDEN = 16
    EX_WITHOUT_TONE_WORDS = 17
    EX_WITH_INTERJECTIONS = 18
    EX_WITH_GREETINGS = 19

    @property
    def name_en(self) -> str:
        return _LEVEL2_INFO[self][0]

    @property
    def name_zh(self) -> str:
        return _LEVEL2_INFO[self][2]

    @property
    def parent(self) -> Level1:
        return _LEVEL2_INFO[self][1]


# (English wire name, parent, Chinese display name)
_LEVEL2_INFO = {
    Level2.POSITIVE_DE: ("Positive DE", Level1.DE, "肯定陈述"),
    Level2.NEGATIVE_DE: ("Negative DE", Level1.DE, "否定陈述"),
    Level2.DE_WITH_IN_WORDS: ("DE with IN words", Level1.DE, "带疑问词的陈述"),
    Level2.DOUBLE_NEGATIVE_DE: ("Double-negative DE", Level1.DE, "双重否定"),
    Level2.OTHER_DE: ("Other DE", Level1.DE, "其他陈述"),
    Level2.WH_STYLE_IN: ("Wh-style IN", Level1.IN, "特指问"),
    Level2.YES_NO_IN: ("Yes-no IN", Level1.IN, "是非问"),
    Level2.A_NOT_A_IN: ("A-not-A IN", Level1.IN, "正反问"),
    Level2.ALTERNATIVE_IN: ("Alternative IN", Level1.IN, "选择问"),
    Level2.IN_WITH_TAG_QUESTION: ("IN with tag question", Level1.IN, "附加问"),
    Level2.RHETORICAL: ("Rhetorical", Level1.IN, "反问"),
    Level2.IN_WITH_BACKCHANNEL: ("IN with backchannel", Level1.IN, "回声问"),
    Level2.IN_WITH_OPEN_QUESTION: ("IN with open question", Level1.IN, "开放式问"),
    Level2.IM_WITH_REQUEST: ("IM with request", Level1.IM, "请求"),
    Level2.IM_WITH_DISSUADE: ("IM with dissuade", Level1.IM, "劝阻"),
    Level2.IM_WITH_COMMAND: ("IM with command", Level1.IM, "命令"),
    Level2.IM_WITH_FORBIDDEN: ("IM with forbidden", Level1.IM, "禁止"),
    Level2.EX_WITHOUT_TONE_WORDS: ("EX without tone words", Level1.EX, "无语气词感叹"),
    Level2.EX_WITH_INTERJECTIONS: ("EX with interjections", Level1.EX, "叹词感叹"),
    Level2.EX_WITH_GREETINGS: ("EX with greetings", Level1.EX, "问候感叹"),
}

N_LEVEL1 = len(Level1)
N_LEVEL2 = len(Level2)


def level1_of(l2: Level2) -> Level1:
    return _LEVEL2_INFO[Level2(l2)][1]


def level2_children(l1: Level1) -> list[Level2]:
    return [l2 for l2 in Level2 if level1_of(l2) == l1]


@dataclass(frozen=True, order=True)
class SentenceFunction:
    level1: Level1
    level2: Level2

    def __post_init__(self):
        if level1_of(self.level2) != self.level1:
            raise ValueError(
                f"{self.level2.name_en!r} belongs to {level1_of(self.level2).name}, "
                f"not {Level1(self.level1).name}"
            )

    @classmethod
    def of(cls, l2: Level2) -> "SentenceFunction":
        return cls(level1_of(l2), Level2(l2))

    def at_level(self, level: int) -> int:
        """Integer code of this function at level 1 or 2."""
        if level == 1:
            return int(self.level1)
        if level == 2:
            return int(self.level2)
        raise ValueError(f"level must be 1 or 2, got {level}")

    def __str__(self) -> str:
        return serialize_label(self)


ALL_FUNCTIONS = tuple(SentenceFunction.of(l2) for l2 in Level2)


def _norm(text: str) -> str:
    return " ".join(text.replace("_", " ").split()).casefold()


_BY_NAME: dict[str, Level2] = {}
for _l2, (_en, _l1, _zh) in _LEVEL2_INFO.items():
    _BY_NAME[_norm(_en)] = _l2
    _BY_NAME[_norm(_l2.name)] = _l2
    _BY_NAME[_zh] = _l2
# Spellings that appear in running prose rather than the table.
_BY_NAME[_norm("Other types of DE")] = Level2.OTHER_DE
_BY_NAME[_norm("Rhetorical IN")] = Level2.RHETORICAL

_L1_BY_NAME: dict[str, Level1] = {}
for _l1 in Level1:
    _L1_BY_NAME[_norm(_l1.name)] = _l1
    _L1_BY_NAME[_norm(_l1.full_name)] = _l1


def parse_level1(text: str) -> Level1:
    try:
        return _L1_BY_NAME[_norm(text)]
    except KeyError:
        raise UnknownLabel(f"unknown level-1 label {text!r}") from None


def parse_label(text: str) -> SentenceFunction:
    """Parse ``"L1:L2"`` (or a bare level-2 name) into a SentenceFunction.

    Matching is case-insensitive and accepts the enum member names and the
    Chinese display names as aliases.  When a level-1 prefix is given it
    must agree with the level-2 parent.
    """
    if not isinstance(text, str) or not text.strip():
        raise UnknownLabel(f"unknown label {text!r}")
    head, sep, tail = text.partition(":")
    l2_text = tail if sep else head
    l2 = _BY_NAME.get(_norm(l2_text), _BY_NAME.get(l2_text.strip()))
    if l2 is None:
        raise UnknownLabel(f"unknown label {text!r}")
    if sep:
        l1 = parse_level1(head)
        if l1 != level1_of(l2):
            raise UnknownLabel(f"unknown label {text!r}: {l2.name_en} is not under {l1.name}")
    return SentenceFunction.of(l2)


def serialize_label(sf: SentenceFunction) -> str:
    return f"{Level1(sf.level1).name}:{Level2(sf.level2).name_en}"


def label_name(code: int, level: int) -> str:
    """Short display name for an integer code at the given level."""
    return Level1(code).name if level == 1 else Level2(code).name_en


def n_classes(level: int) -> int:
    if level not in (1, 2):
        raise ValueError(f"level must be 1 or 2, got {level}")
    return N_LEVEL1 if level == 1 else N_LEVEL2
