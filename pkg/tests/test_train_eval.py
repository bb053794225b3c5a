import json
from pathlib import Path

import numpy as np
import pytest

from relex.candidates import GenerationPolicy, build_gold_instances
from relex.encoding import EncoderSettings, LabelSpace, build_vocab, encode
from relex.model import ModelConfig
from relex.synthetic import generate_corpus
from relex.train_eval import (REJECT, TrainConfig, evaluate, evaluate_predictions,
                              render_report, stratified_split, train)

GOLDEN = Path(__file__).parent / "golden"


class FakeInstance:
    def __init__(self, label):
        self.label = label


class TestStratifiedSplit:
    def test_proportional(self):
        instances = [FakeInstance("A")] * 10 + [FakeInstance("B")] * 10
        train_part, test_part = stratified_split(instances, 0.2, seed=0)
        test_labels = [i.label for i in test_part]
        assert test_labels.count("A") == 2 and test_labels.count("B") == 2
        assert len(train_part) == 16

    def test_same_seed_identical(self):
        instances = [FakeInstance(l) for l in "AABABBABAABB"]
        a = stratified_split(instances, 0.3, seed=5)
        b = stratified_split(instances, 0.3, seed=5)
        assert [id(x) for x in a[1]] == [id(x) for x in b[1]]

    def test_rounding_rule(self):
        # floor(count * fraction + 0.5): A: 7*0.3+0.5 -> 2, B: 3*0.3+0.5 -> 1
        instances = [FakeInstance("A")] * 7 + [FakeInstance("B")] * 3
        _, test_part = stratified_split(instances, 0.3, seed=1)
        labels = [i.label for i in test_part]
        assert labels.count("A") == 2 and labels.count("B") == 1

    def test_singleton_label_rejected(self):
        instances = [FakeInstance("A"), FakeInstance("A"), FakeInstance("B")]
        with pytest.raises(ValueError, match="B"):
            stratified_split(instances, 0.5, seed=0)

    def test_disjoint_and_complete(self):
        instances = [FakeInstance(l) for l in "AAAABBBBCCCC"]
        tr, te = stratified_split(instances, 0.25, seed=2)
        assert len(tr) + len(te) == len(instances)
        assert {id(x) for x in tr}.isdisjoint({id(x) for x in te})


class TestEvaluatePredictions:
    def test_all_correct_gives_ones(self):
        labels = LabelSpace.from_labels(["x", "y"])
        report = evaluate_predictions([0, 1, 0, 1], [0, 1, 0, 1], labels)
        for m in report.per_class.values():
            assert m.accuracy == m.precision == m.recall == m.f1 == 1.0
        assert report.macro_f1 == 1.0

    def test_hand_computed_confusion(self):
        # gold: 6 of class 0, 4 of class 1; predictions err on items 4,5 (0->1)
        # and item 9 (1->0).
        # class 0: TP=4 FN=2 FP=1 TN=3 -> acc 7/10, P 4/5, R 4/6, F1 8/11
        # class 1: TP=3 FN=1 FP=2 TN=4 -> acc 7/10, P 3/5, R 3/4, F1 2/3
        labels = LabelSpace.from_labels(["a", "b"])
        gold = [0, 0, 0, 0, 0, 0, 1, 1, 1, 1]
        pred = [0, 0, 0, 0, 1, 1, 1, 1, 1, 0]
        report = evaluate_predictions(gold, pred, labels)
        a, b = report.per_class["a"], report.per_class["b"]
        assert abs(a.accuracy - 0.7) < 1e-12 and abs(b.accuracy - 0.7) < 1e-12
        assert abs(a.precision - 4 / 5) < 1e-12
        assert abs(a.recall - 4 / 6) < 1e-12
        assert abs(a.f1 - 8 / 11) < 1e-12
        assert abs(b.precision - 3 / 5) < 1e-12
        assert abs(b.recall - 3 / 4) < 1e-12
        assert abs(b.f1 - 2 / 3) < 1e-12
        assert a.support == 6 and b.support == 4
        np.testing.assert_array_equal(report.confusion,
                                      [[4, 2, 0], [1, 3, 0]])

    def test_reject_bucket_counts_as_misclassification(self):
        labels = LabelSpace.from_labels(["a", "b"])
        report = evaluate_predictions([0, 0, 1], [0, REJECT, REJECT], labels)
        assert report.n_rejected == 2
        a = report.per_class["a"]
        assert abs(a.recall - 0.5) < 1e-12
        assert a.precision == 1.0  # rejects are not predicted-a
        assert report.per_class["b"].recall == 0.0
        assert "b" in report.zero_division
        # row sums still equal supports
        np.testing.assert_array_equal(report.confusion.sum(axis=1), [2, 1])

    def test_unknown_gold_label_rejected(self):
        labels = LabelSpace.from_labels(["a", "b"])
        with pytest.raises(ValueError, match="unknown"):
            evaluate_predictions([0, 2], [0, 0], labels)

    def test_macro_invariant_under_label_permutation(self):
        rng = np.random.default_rng(3)
        gold = rng.integers(0, 4, size=200)
        pred = rng.integers(0, 4, size=200)
        labels = LabelSpace.from_labels(list("wxyz"))
        base = evaluate_predictions(gold, pred, labels)
        perm = np.array([2, 0, 3, 1])
        permuted = evaluate_predictions(perm[gold], perm[pred], labels)
        assert abs(base.macro_f1 - permuted.macro_f1) < 1e-12
        assert abs(base.macro_accuracy - permuted.macro_accuracy) < 1e-12

    def test_brute_force_recount_oracle(self):
        rng = np.random.default_rng(11)
        labels = LabelSpace.from_labels([f"c{i}" for i in range(8)])
        for _ in range(100):
            n = int(rng.integers(10, 200))
            gold = rng.integers(0, 8, size=n)
            pred = rng.integers(-1, 8, size=n)  # -1 simulates rejects
            report = evaluate_predictions(gold, pred, labels)
            for c in range(8):
                tp = sum(1 for g, p in zip(gold, pred) if g == c and p == c)
                fp = sum(1 for g, p in zip(gold, pred) if g != c and p == c)
                fn = sum(1 for g, p in zip(gold, pred) if g == c and p != c)
                tn = n - tp - fp - fn
                m = report.per_class[f"c{c}"]
                assert abs(m.accuracy - (tp + tn) / n) < 1e-12
                prec = tp / (tp + fp) if tp + fp else 0.0
                rec = tp / (tp + fn) if tp + fn else 0.0
                f1 = 2 * prec * rec / (prec + rec) if prec + rec else 0.0
                assert abs(m.precision - prec) < 1e-12
                assert abs(m.recall - rec) < 1e-12
                assert abs(m.f1 - f1) < 1e-12


class TestRenderReport:
    def fixture_report(self):
        labels = LabelSpace.from_labels(["alpha", "beta"])
        gold = [0, 0, 0, 0, 0, 0, 1, 1, 1, 1]
        pred = [0, 0, 0, 0, 1, 1, 1, 1, 1, 0]
        return evaluate_predictions(gold, pred, labels)

    def test_text_golden(self):
        rendered = render_report(self.fixture_report(), "text")
        assert rendered == (GOLDEN / "report.txt").read_text(encoding="utf-8")

    def test_empty_report_is_header_only(self):
        report = evaluate_predictions([], [], LabelSpace(()))
        rendered = render_report(report, "text")
        assert rendered.count("\n") == 1
        assert "Class" in rendered

    def test_json_round_trip_idempotent(self):
        rendered = render_report(self.fixture_report(), "json")
        parsed = json.loads(rendered)
        assert json.dumps(parsed, sort_keys=True, indent=2) + "\n" == rendered
        assert parsed["per_class"]["alpha"]["support"] == 6

    def test_csv_has_macro_footer(self):
        rendered = render_report(self.fixture_report(), "csv")
        lines = rendered.strip().split("\n")
        assert lines[0].startswith("class,")
        assert lines[-1].startswith("macro,")
        assert len(lines) == 4

    def test_unknown_format_rejected(self):
        with pytest.raises(ValueError):
            render_report(self.fixture_report(), "yaml")


def _small_task(seed=0, n_per_class=12):
    docs = generate_corpus({"Reason-Drug": n_per_class, "ADE-Drug": n_per_class},
                           seed=seed)
    instances, _ = build_gold_instances(docs, GenerationPolicy())
    texts = {d.doc_id: d.text for d in docs}
    vocab = build_vocab(list(texts.values()), max_size=128)
    mcfg = ModelConfig(vocab_size=len(vocab), n_labels=2, d_model=32, n_layers=1,
                       n_heads=2, d_ff=64, head_hidden=32)
    return instances, texts, vocab, mcfg


class TestTrain:
    def test_zero_epochs_returns_initial_model_and_empty_log(self):
        instances, texts, vocab, mcfg = _small_task()
        tcfg = TrainConfig(epochs=0, seed=0)
        model, log = train(instances, texts, vocab, mcfg, tcfg)
        assert log == []
        assert model.config == mcfg

    def test_determinism_across_runs(self):
        instances, texts, vocab, mcfg = _small_task()
        tcfg = TrainConfig(epochs=2, seed=9, early_stop_patience=0)
        m1, log1 = train(instances, texts, vocab, mcfg, tcfg)
        m2, log2 = train(instances, texts, vocab, mcfg, tcfg)
        assert log1 == log2
        for name in m1.params:
            np.testing.assert_array_equal(m1.params[name], m2.params[name])

    def test_learns_separable_task(self):
        instances, texts, vocab, mcfg = _small_task(n_per_class=40)
        tcfg = TrainConfig(epochs=40, lr=0.005, batch_size=16, seed=1,
                           early_stop_patience=0)
        model, log = train(instances, texts, vocab, mcfg, tcfg)
        assert max(e["heldout_macro_f1"] for e in log) >= 0.9

    def test_label_mismatch_rejected(self):
        instances, texts, vocab, mcfg = _small_task()
        bad_cfg = ModelConfig(vocab_size=mcfg.vocab_size, n_labels=5)
        with pytest.raises(ValueError, match="labels"):
            train(instances, texts, vocab, bad_cfg, TrainConfig(epochs=1))

    def test_early_stopping_cuts_epochs(self):
        instances, texts, vocab, mcfg = _small_task(n_per_class=24)
        tcfg = TrainConfig(epochs=60, seed=1, early_stop_patience=2)
        _, log = train(instances, texts, vocab, mcfg, tcfg)
        assert len(log) < 60

    def test_stratified_quotas_logged_per_epoch(self):
        instances, texts, vocab, mcfg = _small_task()
        tcfg = TrainConfig(epochs=2, seed=0, early_stop_patience=0, batch_size=8)
        _, log = train(instances, texts, vocab, mcfg, tcfg)
        for entry in log:
            assert sum(entry["batch_quotas"].values()) == 8
            assert set(entry["batch_quotas"]) == {"ADE-Drug", "Reason-Drug"}
        tcfg_off = TrainConfig(epochs=1, seed=0, early_stop_patience=0,
                               use_stratified_batching=False)
        _, log_off = train(instances, texts, vocab, mcfg, tcfg_off)
        assert "batch_quotas" not in log_off[0]


class TestEvaluateModel:
    def test_evaluate_against_encoded_instances(self):
        instances, texts, vocab, mcfg = _small_task(n_per_class=40)
        tcfg = TrainConfig(epochs=40, lr=0.005, batch_size=16, seed=2,
                           early_stop_patience=0)
        model, _ = train(instances, texts, vocab, mcfg, tcfg)
        labels = LabelSpace(model.labels)
        encoded = [encode(i, texts[i.doc_id], vocab, EncoderSettings(), labels)
                   for i in instances]
        report = evaluate(model, encoded)
        assert report.macro_f1 > 0.9
        assert int(report.confusion.sum()) == len(instances)

    def test_label_outside_model_space_rejected(self, tiny_model):
        from conftest import tiny_batch
        bad = tiny_batch()[0]
        bad = type(bad)(token_ids=bad.token_ids, e1_span=bad.e1_span,
                        e2_span=bad.e2_span, marker_idx=bad.marker_idx,
                        label_id=7, attention_len=bad.attention_len)
        with pytest.raises(ValueError):
            evaluate(tiny_model, [bad])
