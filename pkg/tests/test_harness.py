import csv
import math

import numpy as np
import pytest

from sefun.harness.grading import (
    ASPECTS,
    SHEET_COLUMNS,
    CoverageMismatch,
    GradeValidationError,
    MissingGrades,
    export_grading_sheet,
    ingest_grading_sheet,
    key_path_for,
)
from sefun.harness.metrics import EmptyInput, LengthMismatch, accuracy, evaluate, macro_f1, micro_f1
from sefun.harness.pipeline import PipelineConfig, StageError, run_pipeline
from sefun.harness.synthetic import (
    KEYWORD_LABELS,
    InvalidWeights,
    TemplateSpec,
    gen_control_corpus,
    gen_keyword_corpus,
    gen_retrieval_corpus,
    gen_synthetic_corpus,
    keyword_map,
)
from sefun.retrieve import build_index, retrieve_topk
from sefun.taxonomy import Level2


# --- metrics ---------------------------------------------------------------

def test_metric_example():
    g, p = list("AABB"), list("ABBB")
    rep = evaluate(g, p)
    assert rep.accuracy == 0.75 and rep.micro_f1 == 0.75
    assert abs(rep.macro_f1 - 0.7333333333333333) < 1e-9
    assert rep.per_class["A"].f1 == pytest.approx(2 / 3) and rep.per_class["B"].f1 == pytest.approx(0.8)


def test_metric_edge_cases():
    assert evaluate([1, 2, 3], [1, 2, 3]).macro_f1 == 1.0
    assert macro_f1(["x"] * 4, ["x"] * 4) == micro_f1(["x"] * 4, ["x"] * 4) == 1.0
    # a predicted class absent from gold contributes F1 = 0
    assert macro_f1(["a", "a"], ["a", "b"]) == pytest.approx((2 / 3 + 0) / 2)
    with pytest.raises(LengthMismatch):
        accuracy([1], [1, 2])
    with pytest.raises(EmptyInput):
        accuracy([], [])


def test_micro_equals_accuracy():
    rng = np.random.default_rng(0)
    for _ in range(300):
        n = int(rng.integers(1, 40))
        g, p = rng.integers(0, 5, n).tolist(), rng.integers(0, 5, n).tolist()
        assert abs(micro_f1(g, p) - accuracy(g, p)) <= 1e-12


# --- synthetic data --------------------------------------------------------

def test_synthetic_basics():
    assert gen_synthetic_corpus(n_pairs=0) == []
    a = gen_synthetic_corpus(n_pairs=50, seed=3)
    assert a == gen_synthetic_corpus(n_pairs=50, seed=3)
    spec = TemplateSpec()
    for p in a:
        for s in p.query + p.response:
            assert spec.match(s.text) == {s.function.level2}


def test_synthetic_uniform_counts_within_4_sigma():
    n = 2000
    pairs = gen_synthetic_corpus(n_pairs=n, seed=0)
    counts = np.bincount([int(p.query[0].function.level2) for p in pairs], minlength=20)
    sigma = math.sqrt(n * (1 / 20) * (19 / 20))
    assert np.all(np.abs(counts - n / 20) <= 4 * sigma)


@pytest.mark.parametrize("w", [np.zeros(20), -np.ones(20), np.ones(19), np.full(20, np.nan)])
def test_invalid_weights(w):
    with pytest.raises(InvalidWeights):
        gen_synthetic_corpus(n_pairs=1, class_weights=w)


def test_template_spec_validation():
    with pytest.raises(ValueError):
        TemplateSpec(words=("吗吗",))
    t = dict(TemplateSpec().templates)
    del t[Level2.RHETORICAL]
    with pytest.raises(ValueError):
        TemplateSpec(templates=t)


def test_keyword_and_control_corpora():
    spec = TemplateSpec()
    kw = keyword_map(spec)
    for p in gen_keyword_corpus(100, seed=1):
        assert p.response[0].function.level2 in {kw[k] for k in kw if k in p.query_text}
    for p in gen_control_corpus(50, seed=1):
        assert any(w in p.response_text for w in spec.words if w in p.query_text)


def test_retrieval_corpus_covers_every_label():
    pairs, texts = gen_retrieval_corpus(seed=0)
    index = build_index(pairs)
    for q in texts[::37]:
        top = retrieve_topk(index, q, 20)
        labels = {pairs[c.pair_id].response[0].function.level2 for c in top}
        assert set(KEYWORD_LABELS) <= labels


# --- grading ---------------------------------------------------------------

def _queries(n):
    return [(f"q{i}", "IN:Yes-no IN") for i in range(n)]


def test_export_grading_sheet(tmp_path):
    outs = {"sysA": [f"a{i}" for i in range(200)], "sysB": [f"b{i}" for i in range(200)]}
    sheet = export_grading_sheet(_queries(200), outs, tmp_path / "s.csv", seed=1)
    assert len(sheet.rows) == 400
    rows = list(csv.DictReader(open(tmp_path / "s.csv", encoding="utf-8")))
    assert tuple(rows[0]) == SHEET_COLUMNS and len(rows) == 400
    assert not any("sys" in v for r in rows for v in r.values())
    export_grading_sheet(_queries(200), outs, tmp_path / "t.csv", seed=1)
    assert (tmp_path / "s.csv").read_bytes() == (tmp_path / "t.csv").read_bytes()
    assert key_path_for(tmp_path / "s.csv").read_bytes() == key_path_for(tmp_path / "t.csv").read_bytes()
    # blinding: the system order varies across queries
    firsts = {sheet.key[sheet.rows[i]["item"]] for i in range(0, 400, 2)}
    assert firsts == {"sysA", "sysB"}
    assert len(export_grading_sheet(_queries(300), {"x": ["r"] * 300}, seed=0).rows) == 200
    with pytest.raises(CoverageMismatch):
        export_grading_sheet(_queries(3), {"x": ["a", "b"]})
    with pytest.raises(CoverageMismatch):
        export_grading_sheet(_queries(3), {})


def _fill(path, grades_by_system, key=None, tag="done"):
    key = key or {r["item"]: r["system"] for r in csv.DictReader(open(key_path_for(path), encoding="utf-8"))}
    rows = list(csv.DictReader(open(path, encoding="utf-8")))
    counters = {}
    for r in rows:
        s = key[r["item"]]
        seq = grades_by_system[s]
        i = counters.get(s, 0)
        counters[s] = i + 1
        for a in ASPECTS:
            r[a] = seq[i % len(seq)]
    out = path.with_name(f"{path.stem}.{tag}.csv")
    with open(out, "w", encoding="utf-8", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=SHEET_COLUMNS, lineterminator="\n")
        w.writeheader()
        w.writerows(rows)
    return out


def test_ingest(tmp_path):
    outs = {"hi": ["x"] * 3, "lo": ["y"] * 3, "mid": ["z"] * 3}
    export_grading_sheet(_queries(3), outs, tmp_path / "s.csv", seed=2)
    done = _fill(tmp_path / "s.csv", {"hi": ["5"], "lo": ["0"], "mid": ["3", "4", "5"]})
    scores = ingest_grading_sheet(done, key_path_for(tmp_path / "s.csv"))
    assert scores["hi"]["Fluency"] == 1.0 and scores["lo"]["Accuracy"] == 0.0
    assert scores["mid"]["Relevance"] == pytest.approx(0.8)
    assert all(0 <= v <= 1 for s in scores.values() for v in s.values())
    # two annotators are averaged
    done2 = _fill(tmp_path / "s.csv", {"hi": ["0"], "lo": ["0"], "mid": ["0"]}, tag="ann2")
    avg = ingest_grading_sheet([done, done2], key_path_for(tmp_path / "s.csv"))
    assert avg["hi"]["Fluency"] == 0.5


def test_ingest_errors(tmp_path):
    export_grading_sheet(_queries(2), {"a": ["x", "y"]}, tmp_path / "s.csv", seed=0)
    key = key_path_for(tmp_path / "s.csv")
    bad = _fill(tmp_path / "s.csv", {"a": ["7"]})
    with pytest.raises(GradeValidationError, match="row r0000"):
        ingest_grading_sheet(bad, key)
    blank = _fill(tmp_path / "s.csv", {"a": [""]})
    with pytest.raises(MissingGrades) as e:
        ingest_grading_sheet(blank, key)
    assert len(e.value.rows) == 2


# --- pipeline --------------------------------------------------------------

FAST = dict(n_cfm_pairs=600, n_cft_pairs=600, n_gen_pairs=200, n_test=30,
            generator=dict(hidden_dim=16, emb_dim=8, max_epochs=2, batch_size=20, learning_rate=0.01))


def test_pipeline_ir_only_is_deterministic(tmp_path):
    cfg = dict(FAST, systems=["ir"], out_dir=str(tmp_path / "a"))
    res = run_pipeline(cfg)
    assert set(res.accuracy) == {"ir"}
    report = (tmp_path / "a" / "report.txt").read_text(encoding="utf-8")
    assert "ir_rerank" not in report and "seq2seq" not in report
    run_pipeline(dict(cfg, out_dir=str(tmp_path / "b")))
    for f in res.files:
        assert f.read_bytes() == (tmp_path / "b" / f.name).read_bytes(), f.name


def test_pipeline_stage_error(tmp_path):
    with pytest.raises(StageError) as e:
        run_pipeline(dict(FAST, out_dir=str(tmp_path), cfm_corpus=str(tmp_path / "missing.jsonl")))
    assert e.value.stage == "data"


def test_pipeline_config_validation():
    with pytest.raises(ValueError):
        PipelineConfig(systems=("nope",))
    with pytest.raises(ValueError):
        PipelineConfig.from_dict({"bogus": 1})
