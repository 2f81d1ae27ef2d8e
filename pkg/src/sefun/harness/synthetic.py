"""Template-generated corpora with known sentence functions.

Every level-2 function has a few surface patterns; ``x`` and ``y`` are
content-word slots filled from a word pool whose characters never occur in
any pattern, so a sentence can be traced back to exactly one pattern.
"""
from __future__ import annotations

import re
from dataclasses import dataclass, field

import numpy as np

from ..corpus import ConversationPair, Segment, tokenize
from ..taxonomy import Level2, SentenceFunction

L = Level2

DEFAULT_TEMPLATES: dict[Level2, tuple[str, ...]] = {
    L.POSITIVE_DE: ("我觉得x很好。", "x是y。"),
    L.NEGATIVE_DE: ("我不喜欢x。", "x没有y。"),
    L.DE_WITH_IN_WORDS: ("谁都知道x。", "什么x都行。"),
    L.DOUBLE_NEGATIVE_DE: ("我不是不喜欢x。", "没有人不喜欢x。"),
    L.OTHER_DE: ("x和y。", "x。"),
    L.WH_STYLE_IN: ("为什么x？", "x在哪里？"),
    L.YES_NO_IN: ("x好吃吗？", "你喜欢x吗？"),
    L.A_NOT_A_IN: ("你想不想x？", "x好不好？"),
    L.ALTERNATIVE_IN: ("x还是y？",),
    L.IN_WITH_TAG_QUESTION: ("x对吧？", "x是吧？"),
    L.RHETORICAL: ("难道x不好吗？",),
    L.IN_WITH_BACKCHANNEL: ("你是说x？",),
    L.IN_WITH_OPEN_QUESTION: ("聊聊你的x？", "谈谈x怎么样？"),
    L.IM_WITH_REQUEST: ("请x吧。", "帮我x吧。"),
    L.IM_WITH_DISSUADE: ("请不要x了。", "别x了吧。"),
    L.IM_WITH_COMMAND: ("快去x！", "马上x！"),
    L.IM_WITH_FORBIDDEN: ("禁止x！", "不许x！"),
    L.EX_WITHOUT_TONE_WORDS: ("x太棒了！", "我也是！"),
    L.EX_WITH_INTERJECTIONS: ("哇x！", "天哪x！"),
    L.EX_WITH_GREETINGS: ("恭喜x！", "x加油！"),
}

DEFAULT_WORDS: tuple[str, ...] = (
    "苹果", "电影", "北京", "音乐", "咖啡", "篮球", "老师", "朋友", "火车", "手机",
    "周末", "晚饭", "公园", "游戏", "工作", "学校", "医生", "衣服", "电脑", "花园",
    "熊猫", "飞机", "餐厅", "海边", "城市", "歌曲", "故事", "画家", "厨房", "月亮",
)

# Segment counts per level-2 label (query side, response side) of the
# annotated reference corpus; used to mimic its imbalance.
REFERENCE_QUERY_WEIGHTS = (49223, 9241, 887, 40, 2675, 23385, 6469, 6456, 789, 170, 42, 0, 227,
                2073, 86, 7, 4, 241, 364, 167)
REFERENCE_RESPONSE_WEIGHTS = (67540, 18428, 2660, 99, 5218, 7652, 4046, 1055, 279, 271, 417, 345, 11,
                   358, 58, 4, 2, 3948, 1958, 285)


class InvalidWeights(ValueError):
    pass


@dataclass
class TemplateSpec:
    templates: dict[Level2, tuple[str, ...]] = field(default_factory=lambda: dict(DEFAULT_TEMPLATES))
    words: tuple[str, ...] = DEFAULT_WORDS

    def __post_init__(self):
        missing = [l2 for l2 in Level2 if not self.templates.get(l2)]
        if missing:
            raise ValueError(f"no template for {[m.name_en for m in missing]}")
        marker_chars = {c for ts in self.templates.values() for t in ts for c in t if c not in "xy"}
        clash = sorted({c for w in self.words for c in w} & marker_chars)
        if clash:
            raise ValueError(f"content words reuse template characters: {''.join(clash)}")
        slot = "[" + re.escape("".join(sorted({c for w in self.words for c in w}))) + "]+"
        self._patterns = [
            (l2, re.compile("".join(slot if c in "xy" else re.escape(c) for c in t) + r"\Z"))
            for l2, ts in self.templates.items() for t in ts
        ]

    def fill(self, template: str, rng: np.random.Generator, x: str | None = None) -> str:
        out = []
        for c in template:
            if c == "x":
                out.append(x if x is not None else self.words[rng.integers(len(self.words))])
            elif c == "y":
                out.append(self.words[rng.integers(len(self.words))])
            else:
                out.append(c)
        return "".join(out)

    def sentence(self, l2: Level2, rng: np.random.Generator, x: str | None = None) -> str:
        ts = self.templates[l2]
        return self.fill(ts[rng.integers(len(ts))], rng, x)

    def match(self, text: str) -> set[Level2]:
        """Labels whose patterns match ``text`` exactly."""
        return {l2 for l2, pat in self._patterns if pat.match(text)}


def _normalise(weights, name: str = "class_weights") -> np.ndarray:
    w = np.asarray(weights, dtype=np.float64)
    if w.shape != (len(Level2),) or np.any(w < 0) or not np.all(np.isfinite(w)) or w.sum() <= 0:
        raise InvalidWeights(f"{name} must be {len(Level2)} non-negative numbers, not all zero")
    return w / w.sum()


def labelled_segment(text: str, l2: Level2) -> Segment:
    return Segment(text, tokenize(text), [SentenceFunction.of(l2)])


def gen_synthetic_corpus(spec: TemplateSpec | None = None, n_pairs: int = 1000, class_weights=None,
                         seed: int = 0, response_weights=None,
                         query_segments: int = 1, response_segments: int = 1) -> list[ConversationPair]:
    """Labelled pairs whose segments come from the templates.

    ``class_weights`` (20 values, any scale) drive query labels and, unless
    ``response_weights`` is given, response labels too.  Uniform by default.
    """
    spec = spec or TemplateSpec()
    wq = _normalise(np.ones(len(Level2)) if class_weights is None else class_weights)
    wr = wq if response_weights is None else _normalise(response_weights, "response_weights")
    rng = np.random.default_rng([seed, 101])
    labels = list(Level2)
    pairs = []
    for i in range(n_pairs):
        q = [labelled_segment(spec.sentence(l2, rng), l2)
             for l2 in (labels[j] for j in rng.choice(len(labels), size=query_segments, p=wq))]
        r = [labelled_segment(spec.sentence(l2, rng), l2)
             for l2 in (labels[j] for j in rng.choice(len(labels), size=response_segments, p=wr))]
        pairs.append(ConversationPair(q, r, f"synthetic:{seed}:{i}"))
    return pairs


# Responses in the keyword corpus depend only on which keyword the query
# mentions; the query's own function is random noise.
KEYWORD_LABELS: tuple[Level2, ...] = (
    L.POSITIVE_DE, L.NEGATIVE_DE, L.WH_STYLE_IN, L.YES_NO_IN,
    L.A_NOT_A_IN, L.IM_WITH_REQUEST, L.EX_WITH_INTERJECTIONS, L.EX_WITH_GREETINGS,
)


def keyword_map(spec: TemplateSpec, labels=KEYWORD_LABELS, per_label: int = 2) -> dict[str, Level2]:
    words = spec.words
    if len(labels) * per_label > len(words):
        raise ValueError("not enough content words for the keyword map")
    return {words[i]: labels[i // per_label] for i in range(len(labels) * per_label)}


def gen_keyword_corpus(n_pairs: int, seed: int = 0, spec: TemplateSpec | None = None,
                       labels=KEYWORD_LABELS, per_label: int = 2) -> list[ConversationPair]:
    """Pairs whose response function is a deterministic function of a query keyword."""
    spec = spec or TemplateSpec()
    kw = keyword_map(spec, labels, per_label)
    keys = sorted(kw)
    rng = np.random.default_rng([seed, 202])
    single_slot = _single_slot(spec)
    pairs = []
    all_l2 = list(Level2)
    for i in range(n_pairs):
        k = keys[rng.integers(len(keys))]
        q_l2 = all_l2[rng.integers(len(all_l2))]
        ts = single_slot[q_l2]
        q_text = spec.fill(ts[rng.integers(len(ts))], rng, x=k)
        r_l2 = kw[k]
        pairs.append(ConversationPair(
            [labelled_segment(q_text, q_l2)],
            [labelled_segment(spec.sentence(r_l2, rng), r_l2)],
            f"keyword:{seed}:{i}",
        ))
    return pairs


def _single_slot(spec: TemplateSpec) -> dict[Level2, tuple[str, ...]]:
    return {l2: tuple(t for t in ts if "x" in t and "y" not in t) or ts for l2, ts in spec.templates.items()}


CONTROL_LABELS: tuple[Level2, ...] = (L.POSITIVE_DE, L.YES_NO_IN, L.IM_WITH_REQUEST, L.EX_WITH_GREETINGS)


def gen_control_corpus(n_pairs: int, seed: int = 0, spec: TemplateSpec | None = None,
                       labels=CONTROL_LABELS, n_words: int | None = None) -> list[ConversationPair]:
    """Pairs for conditioned generation.

    The query mentions a content word ``x`` under a random function; the
    response is a single-slot pattern of a uniformly drawn label from
    ``labels`` filled with the same ``x``.  The response function is
    therefore independent of the query, and only a model told the target
    can hit it reliably.
    """
    spec = spec or TemplateSpec()
    words = spec.words[:n_words] if n_words else spec.words
    slots = _single_slot(spec)
    rng = np.random.default_rng([seed, 404])
    all_l2 = list(Level2)
    pairs = []
    for i in range(n_pairs):
        x = words[rng.integers(len(words))]
        q_l2 = all_l2[rng.integers(len(all_l2))]
        r_l2 = labels[rng.integers(len(labels))]
        qt, rt = slots[q_l2], slots[r_l2]
        pairs.append(ConversationPair(
            [labelled_segment(spec.fill(qt[rng.integers(len(qt))], rng, x=x), q_l2)],
            [labelled_segment(spec.fill(rt[rng.integers(len(rt))], rng, x=x), r_l2)],
            f"control:{seed}:{i}",
        ))
    return pairs


def gen_retrieval_corpus(seed: int = 0, spec: TemplateSpec | None = None, labels=KEYWORD_LABELS,
                         per_label: int = 2) -> tuple[list[ConversationPair], list[str]]:
    """Index corpus in which every stored query appears once per label.

    Each distinct keyword query (keyword times single-slot query pattern) is
    stored with one response of every label in ``labels``, in a seeded
    order.  Returns the pairs and the distinct query texts; querying any of
    them yields a top list whose exact matches cover every label.
    """
    spec = spec or TemplateSpec()
    keys = sorted(keyword_map(spec, labels, per_label))
    slots = {l2: tuple(t for t in ts if "y" not in t) for l2, ts in _single_slot(spec).items()}
    texts = sorted({t.replace("x", k) for k in keys for ts in slots.values() for t in ts})
    q_label = {t.replace("x", k): l2 for k in keys for l2, ts in slots.items() for t in ts}
    rng = np.random.default_rng([seed, 505])
    pairs = []
    for q in texts:
        for j in rng.permutation(len(labels)):
            r_l2 = labels[j]
            pairs.append(ConversationPair(
                [labelled_segment(q, q_label[q])],
                [labelled_segment(spec.sentence(r_l2, rng), r_l2)],
                f"retrieval:{seed}:{len(pairs)}",
            ))
    return pairs, texts
