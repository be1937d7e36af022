import json

import pytest
from hypothesis import given, settings, strategies as st

from atommem.engine import EngineConfig
from atommem.errors import InvalidInput
from atommem.eval import bleu1, f1, load_qa, parse_qa, run_eval, sensitivity_sweep, write_report
from atommem.eval.harness import ablation_table
from atommem.eval.report import results_table

from conftest import DIM

CFG = EngineConfig(embedding_dim=DIM)


@pytest.mark.parametrize("pred, gold, expected", [
    ("Boston", "Boston", 1.0),
    ("Paris", "Rome", 0.0),
    ("a shell necklace", "shell necklace", 1.0),
    ("", "", 1.0),
    ("", "x", 0.0),
    ("x", "", 0.0),
    ("The cat sat", "cat sat down", 0.8),
])
def test_f1_examples(pred, gold, expected):
    assert f1(pred, gold) == pytest.approx(expected, abs=1e-3)


@pytest.mark.parametrize("pred, gold, expected", [
    ("Boston", "Boston", 1.0),
    ("", "Boston", 0.0),
    ("", "", 0.0),
    ("b c d", "a b c", 0.667),
    ("y", "x y z", 0.1353),  # precision 1, BP exp(1 - 3)
])
def test_bleu1_examples(pred, gold, expected):
    assert bleu1(pred, gold) == pytest.approx(expected, abs=1e-3)


words = st.lists(st.sampled_from(["a", "the", "cat", "dog", "Red", "red!", "sat", "on", "mat", "x"]), max_size=8)


@settings(max_examples=300)
@given(words, words)
def test_metric_bounds_and_symmetry(p, g):
    pred, gold = " ".join(p), " ".join(g)
    assert 0.0 <= f1(pred, gold) <= 1.0
    assert 0.0 <= bleu1(pred, gold) <= 1.0
    assert f1(pred, gold) == pytest.approx(f1(gold, pred))


def test_qa_parsing(tmp_path, qa_path):
    items = load_qa(qa_path)
    assert len(items) == 8 and {i.category for i in items} == {"MultiHop", "Temporal", "OpenDomain", "SingleHop"}
    assert parse_qa("") == []
    with pytest.raises(InvalidInput) as info:
        parse_qa('{"question": "q", "answer": "a", "category": "SingleHop"}\n{oops}\n', "qa.jsonl")
    assert info.value.line == 2
    with pytest.raises(InvalidInput) as info:
        parse_qa('{"question": "q", "answer": "", "category": "SingleHop"}')
    assert info.value.line == 1
    with pytest.raises(InvalidInput):
        parse_qa('[{"question": "q", "answer": "a", "category": "Trivia"}]')


def test_run_eval_on_corpus(sessions, qa_path):
    report = run_eval(sessions, load_qa(qa_path), CFG)
    cats = report.category_scores()
    assert cats["SingleHop"]["f1"] == 1.0 and cats["SingleHop"]["count"] == 3
    assert all(r.token_count <= CFG.token_budget for r in report.items)
    assert report.average_f1 == pytest.approx(sum(r.f1 for r in report.items) / 8)
    assert set(report.timings) >= {"construction_s", "retrieval_s"}


def test_empty_qa_list(sessions):
    report = run_eval(sessions, [], CFG)
    assert report.items == [] and report.average_f1 == 0.0 and report.token_cost == 0.0


def test_run_eval_is_deterministic(sessions, qa_path):
    items = load_qa(qa_path)
    assert run_eval(sessions, items, CFG).to_json() == run_eval(sessions, items, CFG, workers=1).to_json()


def test_sweep_shape_and_truncation(sessions, qa_path):
    items = load_qa(qa_path)
    rows = sensitivity_sweep(sessions, items, (1, 3, 5, 10, 20), CFG)
    assert [r.k for r in rows] == [1, 3, 5, 10, 20]
    assert rows[0].f1 <= rows[2].f1
    # k beyond the store size behaves like k = store size
    size, huge = sensitivity_sweep(sessions, items, (40, 1000), CFG)
    assert (size.f1, size.bleu1, size.token_cost) == (huge.f1, huge.bleu1, huge.token_cost)


def test_sweep_rejects_bad_k(sessions):
    with pytest.raises(ValueError):
        sensitivity_sweep(sessions, [], (0,), CFG)


def test_ablation_table_rows(sessions, qa_path):
    rows = ablation_table(sessions, load_qa(qa_path), CFG)
    assert [r.name for r in rows] == ["full", "w/o compression", "w/o synthesis", "w/o planning"]
    full, _, nosyn, noplan = rows
    assert nosyn.live_units > full.live_units
    assert set(noplan.limits) == {5}
    assert full.diff_pct == 0.0


def test_write_report_files(tmp_path, sessions, qa_path):
    items = load_qa(qa_path)
    report = run_eval(sessions, items, CFG)
    sweep = sensitivity_sweep(sessions, items, (1, 3), CFG)
    written = write_report(tmp_path, report, sweep=sweep, ablations=ablation_table(sessions, items, CFG,
                                                                                    baseline=report))
    names = {p.name for p in written}
    assert names == {"report.json", "items.csv", "results.txt", "timings.json",
                     "f1_by_category.png", "sensitivity.png", "ablation.png"}
    data = json.loads((tmp_path / "report.json").read_text())
    assert len(data["sweep"]) == 2 and len(data["ablations"]) == 4 and "timings" not in data
    assert (tmp_path / "f1_by_category.png").read_bytes()[:4] == b"\x89PNG"
    header = results_table(report).splitlines()[0]
    order = [header.index(c) for c in ("MultiHop", "Temporal", "OpenDomain", "SingleHop", "Average", "Token Cost")]
    assert order == sorted(order)
