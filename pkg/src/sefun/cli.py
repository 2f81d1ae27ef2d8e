"""Command-line entry point: ``sefun <group> <command> ...``.

Training commands use the small desk-scale settings unless ``--full-scale``
is given; the ``train`` section of a ``--config`` JSON file overrides
individual fields.  Every command writes deterministic output for a fixed
``--seed``.
"""
from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from pathlib import Path

from . import __version__

log = logging.getLogger("sefun")


def _emit(text: str, out: str | None) -> None:
    if out:
        Path(out).write_text(text, encoding="utf-8")
    else:
        sys.stdout.write(text)


def _jsonl(rows) -> str:
    return "".join(json.dumps(r, ensure_ascii=False, sort_keys=True) + "\n" for r in rows)


def _train_config(args, **extra):
    from .nncore import TrainConfig

    over = dict(args.config_data.get("train", {}))
    over.update(extra)
    over["seed"] = args.seed
    if args.epochs is not None:
        over["max_epochs"] = args.epochs
    return TrainConfig(**over) if args.full_scale else TrainConfig.desk(**over)


def _read_lines(path: str) -> list[str]:
    text = sys.stdin.read() if path == "-" else Path(path).read_text(encoding="utf-8")
    return [ln.strip() for ln in text.splitlines() if ln.strip()]


def _queries(args) -> list[str]:
    qs = list(args.text or [])
    if args.input:
        qs += _read_lines(args.input)
    if not qs:
        raise SystemExit("no input text (pass TEXT arguments or --input FILE)")
    return qs


# ---------------------------------------------------------------------------
# taxonomy


def cmd_taxonomy(args) -> int:
    from .taxonomy import Level2, SentenceFunction, serialize_label

    rows = [{"code": int(l2), "label": serialize_label(SentenceFunction.of(l2)), "level1": l2.parent.name,
             "level1_code": int(l2.parent), "zh": l2.name_zh} for l2 in Level2]
    if args.format == "json":
        _emit(_jsonl(rows), None)
    else:
        lines = ["code\tlevel1\tlabel\tzh"] + [f"{r['code']}\t{r['level1']}\t{r['label']}\t{r['zh']}" for r in rows]
        _emit("\n".join(lines) + "\n", None)
    return 0


# ---------------------------------------------------------------------------
# corpus


def cmd_corpus_stats(args) -> int:
    from .corpus import corpus_stats, iter_corpus

    stats = corpus_stats(iter_corpus(args.path))
    lines = [f"pairs\t{stats.n_pairs}", f"query_segments\t{stats.query_segments}",
             f"response_segments\t{stats.response_segments}",
             f"unlabeled_query\t{stats.unlabeled_query}", f"unlabeled_response\t{stats.unlabeled_response}"]
    rows = stats.rows()
    lines.append("\t".join(rows[0]))
    lines += ["\t".join(str(v) for v in r.values()) for r in rows]
    _emit("\n".join(lines) + "\n", args.out)
    if args.plot:
        from .harness.plots import plot_label_distribution

        plot_label_distribution(stats, args.plot)
    return 0


def cmd_corpus_adjudicate(args) -> int:
    from .corpus import adjudicate_file

    counts = adjudicate_file(args.pairs, args.records, args.out)
    _emit(_jsonl([counts]), None)
    return 0


def cmd_corpus_synth(args) -> int:
    from .corpus import save_corpus
    from .harness import synthetic as syn

    if args.kind == "template":
        pairs = syn.gen_synthetic_corpus(n_pairs=args.n, seed=args.seed,
                                         class_weights=syn.REFERENCE_QUERY_WEIGHTS if args.imbalanced else None,
                                         response_weights=syn.REFERENCE_RESPONSE_WEIGHTS if args.imbalanced else None)
    elif args.kind == "keyword":
        pairs = syn.gen_keyword_corpus(args.n, seed=args.seed)
    elif args.kind == "control":
        pairs = syn.gen_control_corpus(args.n, seed=args.seed)
    else:
        pairs, _ = syn.gen_retrieval_corpus(seed=args.seed)
    n = save_corpus(pairs, args.out)
    log.info("wrote %d pairs to %s", n, args.out)
    return 0


# ---------------------------------------------------------------------------
# classifiers


def cmd_cfm_train(args) -> int:
    from .classify import train_cfm
    from .corpus import load_corpus

    model = train_cfm(load_corpus(args.corpus), args.setup, args.encoder, _train_config(args))
    model.save(args.out)
    return 0


def _prediction_row(text: str, p) -> dict:
    from .taxonomy import serialize_label

    return {"text": text, "label": serialize_label(p.function), "p1": round(p.prob_level1, 6),
            "p2": round(p.prob_level2, 6)}


def cmd_cfm_predict(args) -> int:
    from .classify import CfMModel
    from .corpus import segment

    model = CfMModel.load(args.model)
    rows = []
    for q in _queries(args):
        segs = segment(q) if args.segment else [q]
        for s, p in zip(segs, model.predict_batch(segs)):
            rows.append(_prediction_row(s.text if hasattr(s, "text") else s, p))
    _emit(_jsonl(rows), args.out)
    return 0


def cmd_cfm_annotate(args) -> int:
    from .classify import CfMModel, annotate_corpus
    from .corpus import iter_corpus

    n = annotate_corpus(CfMModel.load(args.model), iter_corpus(args.corpus), args.out)
    log.info("annotated %d pairs", n)
    return 0


def cmd_cft_train(args) -> int:
    from .classify import train_cft
    from .corpus import load_corpus

    model = train_cft(load_corpus(args.corpus), args.with_query_sf, args.encoder, _train_config(args))
    model.save(args.out)
    return 0


def cmd_cft_predict(args) -> int:
    from .classify import CfMModel, CfTModel, predict_response_sf
    from .corpus import segment
    from .taxonomy import Level1, Level2, SentenceFunction, serialize_label

    cft = CfTModel.load(args.model)
    cfm = CfMModel.load(args.cfm) if args.cfm else None
    rows = []
    for q in _queries(args):
        segs = segment(q)
        qsf = [int(p.level2) for p in cfm.predict_batch(segs)] if cfm else []
        p1, p2 = predict_response_sf(cft, segs, qsf)
        l2 = Level2(int(p2.argmax()))
        rows.append({"query": q, "query_sf": [serialize_label(SentenceFunction.of(Level2(c))) for c in qsf],
                     "level1": Level1(int(p1.argmax())).name, "p1": round(float(p1.max()), 6),
                     "level2": serialize_label(SentenceFunction.of(l2)), "p2": round(float(p2.max()), 6)})
    _emit(_jsonl(rows), args.out)
    return 0


# ---------------------------------------------------------------------------
# retrieval


def cmd_ir_build(args) -> int:
    from .corpus import load_corpus
    from .retrieve import build_index

    build_index(load_corpus(args.corpus)).save(args.index)
    return 0


def cmd_ir_respond(args) -> int:
    from .classify import CfMModel, CfTModel
    from .retrieve import RetrievalIndex, respond_ir
    from .taxonomy import parse_label

    index = RetrievalIndex.load(args.index)
    cfm, cft = CfMModel.load(args.cfm), CfTModel.load(args.cft)
    target = None
    if args.target_sf:
        sf = parse_label(args.target_sf)
        target = int(sf.level1 if args.level == 1 else sf.level2)
    rows = []
    for q in _queries(args):
        r = respond_ir(index, cfm, cft, q, args.level, args.rerank, args.lam, args.topk, target)
        d = r.to_dict()
        d["query"] = q
        if not args.verbose:
            d.pop("candidates")
        rows.append(d)
    _emit(_jsonl(rows), args.out)
    return 0


def cmd_ir_bench(args) -> int:
    import time

    import numpy as np

    from .corpus import load_corpus
    from .retrieve import brute_force_topk, build_index, retrieve_topk

    pairs = load_corpus(args.corpus)
    index = build_index(pairs)
    rng = np.random.default_rng([args.seed, 707])
    picks = rng.integers(len(pairs), size=args.queries)
    agree, t_index, t_brute = 0, 0.0, 0.0
    for i in picks:
        q = pairs[int(i)].query_tokens()
        t0 = time.perf_counter()
        a = retrieve_topk(index, q, args.topk)
        t1 = time.perf_counter()
        b = brute_force_topk(pairs, q, args.topk)
        t_brute += time.perf_counter() - t1
        t_index += t1 - t0
        agree += [(c.pair_id, c.score) for c in a] == [(c.pair_id, c.score) for c in b]
    print(f"queries\t{args.queries}\nagreement\t{agree}/{args.queries}")
    log.info("index %.3fs, brute force %.3fs", t_index, t_brute)
    return 0 if agree == args.queries else 1


# ---------------------------------------------------------------------------
# generation


def cmd_gen_train(args) -> int:
    from .corpus import load_corpus
    from .generate import train_cseq2seq, train_seq2seq

    pairs = load_corpus(args.corpus)
    cfg = _train_config(args)
    model = train_cseq2seq(pairs, cfg, args.sf_level) if args.model == "cseq2seq" else train_seq2seq(pairs, cfg)
    model.save(args.out)
    return 0


def cmd_gen_decode(args) -> int:
    from .corpus import tokenize
    from .generate import Seq2SeqModel, beam_search
    from .taxonomy import parse_label

    model = Seq2SeqModel.load(args.model)
    sf = parse_label(args.target_sf) if args.target_sf else None
    rows = []
    for q in _queries(args):
        r = beam_search(model, tokenize(q), sf, args.beam, args.max_len)
        rows.append({"query": q, "response": r.text, "score": round(r.hypothesis.score, 6),
                     "target_sf": args.target_sf or ""})
    _emit(_jsonl(rows), args.out)
    return 0


# ---------------------------------------------------------------------------
# evaluation and pipeline


def cmd_eval(args) -> int:
    from .harness.metrics import MACRO_UNIVERSE_NOTE, evaluate

    gold, pred = _read_lines(args.gold), _read_lines(args.pred)
    rep = evaluate(gold, pred)
    lines = [f"# {MACRO_UNIVERSE_NOTE}", f"accuracy\t{rep.accuracy:.6f}", f"macro_f1\t{rep.macro_f1:.6f}",
             f"micro_f1\t{rep.micro_f1:.6f}", f"n\t{rep.n}", "label\tprecision\trecall\tf1\tsupport"]
    lines += [f"{r['label']}\t{r['precision']:.6f}\t{r['recall']:.6f}\t{r['f1']:.6f}\t{r['support']}"
              for r in rep.rows()]
    _emit("\n".join(lines) + "\n", args.out)
    return 0


def cmd_eval_grades(args) -> int:
    from .harness.grading import ASPECTS, ingest_grading_sheet

    scores = ingest_grading_sheet(args.sheets, args.key)
    w = csv.writer(sys.stdout, lineterminator="\n")
    w.writerow(("system",) + ASPECTS)
    for s, per in scores.items():
        w.writerow([s] + [f"{per[a]:.4f}" for a in ASPECTS])
    return 0


def cmd_pipeline(args) -> int:
    from .harness.pipeline import PipelineConfig, run_pipeline

    d = dict(args.config_data.get("pipeline", {}))
    d["seed"] = args.seed
    if args.out_dir:
        d["out_dir"] = args.out_dir
    if args.systems:
        d["systems"] = args.systems.split(",")
    res = run_pipeline(PipelineConfig.from_dict(d))
    print((res.out_dir / "report.txt").read_text(encoding="utf-8"), end="")
    return 0


# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="sefun", description="Sentence-function aware short-text conversation toolkit")
    p.add_argument("--version", action="version", version=f"sefun {__version__}")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--config", help="JSON file with optional 'train' and 'pipeline' sections")
    p.add_argument("--log-level", default="WARNING", choices=["DEBUG", "INFO", "WARNING", "ERROR"])
    sub = p.add_subparsers(dest="group", required=True)

    def add(parent, name, fn, help_):
        sp = parent.add_parser(name, help=help_)
        sp.set_defaults(func=fn)
        return sp

    def text_input(sp):
        sp.add_argument("text", nargs="*")
        sp.add_argument("--input", help="file with one item per line ('-' for stdin)")
        sp.add_argument("--out")

    def training(sp):
        sp.add_argument("--out", required=True, help="model file to write")
        sp.add_argument("--epochs", type=int)
        sp.add_argument("--full-scale", action="store_true", help="use the full-size defaults")

    sp = add(sub, "taxonomy", cmd_taxonomy, "list the label set")
    sp.add_argument("--format", choices=["tsv", "json"], default="tsv")

    g = sub.add_parser("corpus", help="corpus statistics, adjudication, synthetic data").add_subparsers(
        dest="cmd", required=True)
    sp = add(g, "stats", cmd_corpus_stats, "per-label segment counts")
    sp.add_argument("path")
    sp.add_argument("--out")
    sp.add_argument("--plot", help="write a label-distribution PNG")
    sp = add(g, "adjudicate", cmd_corpus_adjudicate, "merge three annotators' labels")
    sp.add_argument("pairs")
    sp.add_argument("records")
    sp.add_argument("--out", required=True)
    sp = add(g, "synth", cmd_corpus_synth, "write a synthetic labelled corpus")
    sp.add_argument("--kind", choices=["template", "keyword", "control", "retrieval"], default="template")
    sp.add_argument("--n", type=int, default=1000)
    sp.add_argument("--imbalanced", action="store_true", help="template kind: reference label proportions")
    sp.add_argument("--out", required=True)

    g = sub.add_parser("cfm", help="segment sentence-function classifier").add_subparsers(dest="cmd", required=True)
    sp = add(g, "train", cmd_cfm_train, "train a classifier")
    sp.add_argument("corpus")
    sp.add_argument("--setup", choices=["query", "response", "joint"], default="joint")
    sp.add_argument("--encoder", choices=["cnn", "rnn"], default="rnn")
    training(sp)
    sp = add(g, "predict", cmd_cfm_predict, "classify text")
    sp.add_argument("model")
    sp.add_argument("--segment", action="store_true", help="split input on punctuation first")
    text_input(sp)
    sp = add(g, "annotate", cmd_cfm_annotate, "label every segment of a corpus")
    sp.add_argument("model")
    sp.add_argument("corpus")
    sp.add_argument("--out", required=True)

    g = sub.add_parser("cft", help="target response-function predictor").add_subparsers(dest="cmd", required=True)
    sp = add(g, "train", cmd_cft_train, "train the predictor")
    sp.add_argument("corpus")
    sp.add_argument("--with-query-sf", action=argparse.BooleanOptionalAction, default=True)
    sp.add_argument("--encoder", choices=["cnn", "rnn"], default="rnn")
    training(sp)
    sp = add(g, "predict", cmd_cft_predict, "predict the response function for queries")
    sp.add_argument("model")
    sp.add_argument("--cfm", help="classifier used to label query segments")
    text_input(sp)

    g = sub.add_parser("ir", help="retrieval responder").add_subparsers(dest="cmd", required=True)
    sp = add(g, "build-index", cmd_ir_build, "index a corpus")
    sp.add_argument("corpus")
    sp.add_argument("index")
    sp = add(g, "respond", cmd_ir_respond, "answer queries from the index")
    sp.add_argument("index")
    sp.add_argument("--cfm", required=True)
    sp.add_argument("--cft", required=True)
    sp.add_argument("--level", type=int, choices=[1, 2], default=2)
    sp.add_argument("--rerank", action=argparse.BooleanOptionalAction, default=True)
    sp.add_argument("--lambda", dest="lam", type=float, default=1.0)
    sp.add_argument("--topk", type=int, default=20)
    sp.add_argument("--target-sf", help="override the predicted target, as L1:L2")
    sp.add_argument("--verbose", action="store_true", help="include the candidate list")
    text_input(sp)
    sp = add(g, "bench", cmd_ir_bench, "compare index retrieval with a full scan")
    sp.add_argument("corpus")
    sp.add_argument("--queries", type=int, default=200)
    sp.add_argument("--topk", type=int, default=20)

    g = sub.add_parser("gen", help="sequence-to-sequence generators").add_subparsers(dest="cmd", required=True)
    sp = add(g, "train", cmd_gen_train, "train a generator")
    sp.add_argument("corpus")
    sp.add_argument("--model", choices=["seq2seq", "cseq2seq"], default="cseq2seq")
    sp.add_argument("--sf-level", type=int, choices=[1, 2], default=2)
    training(sp)
    sp = add(g, "decode", cmd_gen_decode, "generate responses")
    sp.add_argument("model")
    sp.add_argument("--beam", type=int, default=5)
    sp.add_argument("--max-len", type=int, default=30)
    sp.add_argument("--target-sf", help="L1:L2 label for conditioned models")
    text_input(sp)

    sp = add(sub, "eval", cmd_eval, "accuracy and F1 from label files")
    sp.add_argument("gold", nargs="?")
    sp.add_argument("pred", nargs="?")
    sp.add_argument("--out")
    sp.add_argument("--grades", dest="sheets", nargs="+", help="completed grading sheets to score instead")
    sp.add_argument("--key", help="key file (default: <sheet>.key.csv)")

    sp = add(sub, "pipeline", cmd_pipeline, "end-to-end system comparison")
    sp.add_argument("--out-dir")
    sp.add_argument("--systems", help="comma-separated subset of ir,ir_rerank,seq2seq,cseq2seq")
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args, rest = parser.parse_known_args(argv)
    # positional text given after options lands in ``rest``
    if rest and hasattr(args, "text") and not any(r.startswith("-") for r in rest):
        args.text = list(args.text or []) + rest
    elif rest:
        parser.error(f"unrecognized arguments: {' '.join(rest)}")
    logging.basicConfig(level=getattr(logging, args.log_level), format="%(levelname)s %(name)s: %(message)s")
    args.config_data = json.loads(Path(args.config).read_text(encoding="utf-8")) if args.config else {}
    if args.func is cmd_eval:
        if args.sheets:
            args.func = cmd_eval_grades
        elif not (args.gold and args.pred):
            parser.error("eval needs GOLD and PRED files, or --grades SHEET...")
    try:
        return args.func(args)
    except (ValueError, LookupError, OSError, RuntimeError) as exc:
        log.error("%s", exc)
        print(f"sefun: error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
