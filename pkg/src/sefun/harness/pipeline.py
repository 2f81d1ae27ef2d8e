"""End-to-end comparison of response systems.

Stages run in order: data, cfm, cft, index, gen, respond, evaluate, report.
Any failure is re-raised as :class:`StageError` carrying the stage name.

Without corpus paths the pipeline runs on synthetic data built so that
every retrieval top list contains a candidate of every keyword label (see
``gen_retrieval_corpus``).
"""
from __future__ import annotations

import csv
import json
import logging
from contextlib import contextmanager
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from ..classify import EncoderKind, Setup, predict_response_sf, train_cfm, train_cft
from ..corpus import corpus_stats, load_corpus, segment
from ..generate import beam_search, greedy_decode, train_cseq2seq, train_seq2seq
from ..nncore import TrainConfig
from ..retrieve import build_index, respond_ir
from ..taxonomy import Level1, Level2, SentenceFunction, label_name, level2_children, serialize_label
from . import plots
from .grading import export_grading_sheet
from .metrics import MACRO_UNIVERSE_NOTE, evaluate
from .synthetic import (
    KEYWORD_LABELS,
    gen_control_corpus,
    gen_keyword_corpus,
    gen_retrieval_corpus,
    gen_synthetic_corpus,
)

log = logging.getLogger(__name__)

SYSTEMS = ("ir", "ir_rerank", "seq2seq", "cseq2seq")


class StageError(RuntimeError):
    def __init__(self, stage: str, cause: BaseException):
        self.stage = stage
        self.cause = cause
        super().__init__(f"stage {stage!r} failed: {type(cause).__name__}: {cause}")


@contextmanager
def stage(name: str):
    log.info("stage %s", name)
    try:
        yield
    except StageError:
        raise
    except Exception as exc:  # surfaced with the stage name
        raise StageError(name, exc) from exc


@dataclass
class PipelineConfig:
    out_dir: str = "sefun-report"
    seed: int = 0
    systems: tuple[str, ...] = SYSTEMS
    level: int = 2
    lam: float = 1.0
    topk: int = 20
    beam: int = 1
    n_test: int = 100
    n_grade: int = 200
    encoder: str = "cnn"
    # synthetic data sizes
    n_cfm_pairs: int = 2500
    n_cft_pairs: int = 2000
    n_gen_pairs: int = 600
    # optional real corpora (labelled JSONL); these replace the synthetic sets
    cfm_corpus: str | None = None
    cft_corpus: str | None = None
    index_corpus: str | None = None
    gen_corpus: str | None = None
    test_queries: str | None = None  # one query per line
    classifier: dict = field(default_factory=dict)
    generator: dict = field(default_factory=lambda: dict(
        hidden_dim=48, emb_dim=24, max_epochs=15, batch_size=20, learning_rate=0.01))

    def __post_init__(self):
        self.systems = tuple(self.systems)
        bad = [s for s in self.systems if s not in SYSTEMS]
        if bad or not self.systems:
            raise ValueError(f"unknown systems {bad}; choose from {', '.join(SYSTEMS)}")
        if self.level not in (1, 2):
            raise ValueError("level must be 1 or 2")

    @classmethod
    def from_dict(cls, d: dict) -> "PipelineConfig":
        known = set(cls.__dataclass_fields__)
        extra = sorted(set(d) - known)
        if extra:
            raise ValueError(f"unknown pipeline config keys: {', '.join(extra)}")
        return cls(**d)

    @classmethod
    def load(cls, path) -> "PipelineConfig":
        return cls.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))

    def classifier_config(self) -> TrainConfig:
        return TrainConfig.desk(seed=self.seed, **self.classifier)

    def generator_config(self) -> TrainConfig:
        return TrainConfig.desk(seed=self.seed, **self.generator)


@dataclass
class PipelineResult:
    out_dir: Path
    accuracy: dict[str, float]
    files: list[Path]


def _label(code: int, level: int) -> str:
    if level == 2:
        return serialize_label(SentenceFunction.of(Level2(code)))
    return label_name(code, 1)


def _load_data(cfg: PipelineConfig, rng: np.random.Generator):
    s = cfg.seed
    data = {
        "cfm": load_corpus(cfg.cfm_corpus) if cfg.cfm_corpus else gen_synthetic_corpus(n_pairs=cfg.n_cfm_pairs, seed=s),
        "cfm_test": gen_synthetic_corpus(n_pairs=max(cfg.n_cfm_pairs // 5, 1), seed=s + 1),
        "cft": load_corpus(cfg.cft_corpus) if cfg.cft_corpus else gen_keyword_corpus(cfg.n_cft_pairs, seed=s),
        "gen": (load_corpus(cfg.gen_corpus) if cfg.gen_corpus
                else gen_control_corpus(cfg.n_gen_pairs, seed=s, labels=KEYWORD_LABELS, n_words=16)),
    }
    if cfg.index_corpus:
        data["index"] = load_corpus(cfg.index_corpus)
        texts = sorted({p.query_text for p in data["index"]})
    else:
        data["index"], texts = gen_retrieval_corpus(seed=s)
    if cfg.test_queries:
        data["queries"] = [ln.strip() for ln in Path(cfg.test_queries).read_text(encoding="utf-8").splitlines()
                           if ln.strip()]
    else:
        pick = rng.permutation(len(texts))[:cfg.n_test]
        data["queries"] = [texts[i] for i in sorted(pick)]
    if cfg.cfm_corpus:
        # real corpus: hold out a slice of the classifier corpus for evaluation
        cut = max(len(data["cfm"]) // 10, 1)
        data["cfm_test"], data["cfm"] = data["cfm"][:cut], data["cfm"][cut:]
    return data


def run_pipeline(config: PipelineConfig | dict) -> PipelineResult:
    cfg = config if isinstance(config, PipelineConfig) else PipelineConfig.from_dict(config)
    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng([cfg.seed, 606])
    need_ir = any(s.startswith("ir") for s in cfg.systems)
    need_gen = [s for s in cfg.systems if s in ("seq2seq", "cseq2seq")]
    ccfg = cfg.classifier_config()

    with stage("data"):
        data = _load_data(cfg, rng)
    with stage("cfm"):
        cfm = train_cfm(data["cfm"], Setup.JOINT, EncoderKind(cfg.encoder), ccfg)
    with stage("cft"):
        cft = train_cft(data["cft"], True, EncoderKind(cfg.encoder), ccfg)
    index = None
    if need_ir:
        with stage("index"):
            index = build_index(data["index"])
    gens = {}
    with stage("gen"):
        gcfg = cfg.generator_config()
        for name in need_gen:
            train = train_cseq2seq if name == "cseq2seq" else train_seq2seq
            gens[name] = train(data["gen"], gcfg)

    records = []
    with stage("respond"):
        for qi, q in enumerate(data["queries"]):
            segs = segment(q)
            qfuncs = [int(p.level2) for p in cfm.predict_batch(segs)]
            p1, p2 = predict_response_sf(cft, segs, qfuncs)
            target = int((p1 if cfg.level == 1 else p2).argmax())
            target_l2 = target if cfg.level == 2 else None
            q_tokens = [t for s in segs for t in s.tokens]
            for name in cfg.systems:
                if name in ("ir", "ir_rerank"):
                    resp = respond_ir(index, cfm, cft, q, cfg.level, name == "ir_rerank",
                                      cfg.lam, cfg.topk, target).response
                else:
                    model = gens[name]
                    sf = None
                    if model.conditioned:
                        # a level-1 target conditions on its most probable child
                        if target_l2 is None:
                            kids = [int(c) for c in level2_children(Level1(target))]
                            target_l2 = kids[int(np.argmax(p2[kids]))]
                        sf = SentenceFunction.of(Level2(target_l2))
                    res = (beam_search(model, q_tokens, sf, cfg.beam) if cfg.beam > 1
                           else greedy_decode(model, q_tokens, sf))
                    resp = res.text
                rsegs = segment(resp) if resp.strip() else []
                pred = cfm.predict_batch(rsegs[:1])[0].at_level(cfg.level)[0] if rsegs else -1
                records.append({"query_id": qi, "query": q, "system": name, "target": _label(target, cfg.level),
                                "response": resp,
                                "predicted": _label(pred, cfg.level) if pred >= 0 else "",
                                "hit": pred == target})

    with stage("evaluate"):
        acc = {s: float(np.mean([r["hit"] for r in records if r["system"] == s])) for s in cfg.systems}
        gold = [int(s.function.level2) for p in data["cfm_test"] for s in p.query + p.response if s.labeled]
        segs = [s for p in data["cfm_test"] for s in p.query + p.response if s.labeled]
        preds = cfm.predict_batch(segs)
        cfm_l2 = evaluate(gold, [int(p.level2) for p in preds])
        cfm_l1 = evaluate([int(Level2(g).parent) for g in gold], [int(p.level1) for p in preds])
        stats = corpus_stats(data["cfm"])

    files = []
    with stage("report"):
        files.append(_write_records(out / "records.jsonl", records))
        files.append(_write_csv(out / "systems.csv", ["system", "target_sf_accuracy", "n"],
                                [[s, f"{acc[s]:.6f}", len(data["queries"])] for s in cfg.systems]))
        files.append(_write_csv(out / "cfm_eval.csv", ["level", "label", "precision", "recall", "f1", "support"],
                                [[lvl, r["label"], f"{r['precision']:.6f}", f"{r['recall']:.6f}",
                                  f"{r['f1']:.6f}", r["support"]]
                                 for lvl, rep in ((1, cfm_l1), (2, cfm_l2))
                                 for r in rep.rows(lambda c, lvl=lvl: label_name(c, lvl))]))
        files.append(_write_csv(out / "corpus_stats.csv", list(stats.rows()[0]),
                                [list(r.values()) for r in stats.rows()]))
        queries = [(q, next(r["target"] for r in records if r["query_id"] == i))
                   for i, q in enumerate(data["queries"])]
        outputs = {s: [r["response"] for r in records if r["system"] == s] for s in cfg.systems}
        export_grading_sheet(queries, outputs, out / "grading_sheet.csv", cfg.seed, cfg.n_grade)
        files += [out / "grading_sheet.csv", out / "grading_sheet.key.csv"]
        files.append(plots.plot_label_distribution(stats, out / "label_distribution.png"))
        files.append(plots.plot_confusion(gold, [int(p.level2) for p in preds],
                                          [l2.name_en for l2 in Level2], out / "cfm_confusion.png",
                                          "CfM level-2 (held out)"))
        files.append(plots.plot_system_accuracy(acc, out / "system_accuracy.png"))
        files.append(_write_report(out / "report.txt", cfg, acc, cfm_l1, cfm_l2, len(data["queries"])))
    return PipelineResult(out, acc, files)


def _write_records(path: Path, records: list[dict]) -> Path:
    with open(path, "w", encoding="utf-8") as fh:
        for r in records:
            fh.write(json.dumps(r, ensure_ascii=False, sort_keys=True) + "\n")
    return path


def _write_csv(path: Path, header, rows) -> Path:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)
    return path


def _write_report(path: Path, cfg: PipelineConfig, acc, cfm_l1, cfm_l2, n_queries: int) -> Path:
    lines = [
        "sefun pipeline report",
        f"# {MACRO_UNIVERSE_NOTE}",
        "# target-SF accuracy is an automatic proxy for the human Accuracy aspect:"
        " CfM-predicted function of each output vs the CfT target",
        "",
        "config " + json.dumps({k: v for k, v in asdict(cfg).items() if k != "out_dir"},
                               sort_keys=True, ensure_ascii=False),
        "",
        f"systems (level {cfg.level}, {n_queries} queries)",
    ]
    lines += [f"  {s:<10} target_sf_accuracy={acc[s]:.4f}" for s in cfg.systems]
    lines += ["", "CfM held-out"]
    for lvl, rep in ((1, cfm_l1), (2, cfm_l2)):
        lines.append(f"  level {lvl}: accuracy={rep.accuracy:.4f} macro_f1={rep.macro_f1:.4f}"
                     f" micro_f1={rep.micro_f1:.4f} n={rep.n}")
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    return path
