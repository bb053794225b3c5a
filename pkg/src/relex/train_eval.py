"""Training loop, stratified splitting, and the metric suite.

Per-class accuracy is one-vs-rest ((TP+TN)/N); precision, recall, and F1
follow the usual confusion-matrix definitions with the zero-division
convention of 0, flagged in the report. Macro aggregates are unweighted
means over classes and are computed independently of each other.

The confusion matrix is (n_labels, n_labels + 1): rows are gold classes,
the first n_labels columns are predicted classes, and the trailing column
is a reserved reject bucket for predictions that could not be parsed to a
label (prompt-based evaluation); it stays zero for model evaluation. Row
sums therefore always equal class supports.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, replace

import numpy as np

from . import sampler
from .encoding import EncodedInstance, EncoderSettings, LabelSpace, Vocab, encode
from .model import (AdamState, ModelConfig, RelModel, adam_step, init_model,
                    loss_and_grads, predict_proba)

REJECT = -1  # predicted-label id for unparseable/rejected predictions


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 20
    lr: float = 1e-3
    batch_size: int = 32
    freeze: str = "all_unfrozen"
    use_class_weights: bool = True
    use_stratified_batching: bool = True
    seed: int = 0
    early_stop_patience: int = 5
    eval_split_fraction: float = 0.2

    def __post_init__(self):
        if not 0.0 < self.eval_split_fraction < 1.0:
            raise ValueError("eval_split_fraction must be in (0, 1)")
        if self.epochs < 0 or self.batch_size < 1:
            raise ValueError("epochs must be >= 0 and batch_size >= 1")


@dataclass(frozen=True)
class ClassMetrics:
    accuracy: float
    precision: float
    recall: float
    f1: float
    support: int


@dataclass(frozen=True)
class EvalReport:
    labels: tuple[str, ...]
    per_class: dict[str, ClassMetrics]
    macro_accuracy: float
    macro_precision: float
    macro_recall: float
    macro_f1: float
    confusion: np.ndarray  # (n, n+1); last column is the reject bucket
    zero_division: tuple[str, ...] = ()

    @property
    def n_rejected(self) -> int:
        return int(self.confusion[:, -1].sum())

    def to_json_dict(self) -> dict:
        return {
            "labels": list(self.labels),
            "per_class": {label: {"accuracy": m.accuracy, "precision": m.precision,
                                  "recall": m.recall, "f1": m.f1, "support": m.support}
                          for label, m in sorted(self.per_class.items())},
            "macro": {"accuracy": self.macro_accuracy, "precision": self.macro_precision,
                      "recall": self.macro_recall, "f1": self.macro_f1},
            "confusion": self.confusion.tolist(),
            "zero_division": list(self.zero_division),
            "n_rejected": self.n_rejected,
        }


def stratified_split(instances, fraction: float, seed: int,
                     label_of=lambda inst: inst.label):
    """Per-label proportional split into (train, test).

    Each label contributes floor(count * fraction + 0.5) test items (never
    all of them); the remainder stays in train. Item order within each part
    follows the original sequence. Labels with fewer than 2 instances are
    rejected.
    """
    if not 0.0 < fraction < 1.0:
        raise ValueError("fraction must be in (0, 1)")
    by_label: dict = {}
    for i, inst in enumerate(instances):
        by_label.setdefault(label_of(inst), []).append(i)
    singletons = sorted(str(c) for c, ix in by_label.items() if len(ix) < 2)
    if singletons:
        raise ValueError(f"labels with fewer than 2 instances cannot be split: {singletons}")
    test_idx: set[int] = set()
    for label in sorted(by_label, key=str):
        indices = by_label[label]
        n_test = min(int(len(indices) * fraction + 0.5), len(indices) - 1)
        rng = sampler._label_rng(seed, label)
        order = rng.permutation(len(indices))
        test_idx.update(indices[j] for j in order[:n_test])
    train = [inst for i, inst in enumerate(instances) if i not in test_idx]
    test = [inst for i, inst in enumerate(instances) if i in test_idx]
    return train, test


def evaluate_predictions(gold, pred, labels: LabelSpace) -> EvalReport:
    """Build an EvalReport from parallel gold/predicted label-id vectors.
    Predictions equal to REJECT land in the reject bucket."""
    n = len(labels)
    gold = np.asarray(gold, dtype=np.int64)
    pred = np.asarray(pred, dtype=np.int64)
    if gold.shape != pred.shape:
        raise ValueError("gold and prediction vectors differ in length")
    if gold.size and (gold.min() < 0 or gold.max() >= n):
        raise ValueError("gold vector contains unknown label ids")
    if pred.size and (pred.min() < REJECT or pred.max() >= n):
        raise ValueError("prediction vector contains unknown label ids")

    confusion = np.zeros((n, n + 1), dtype=np.int64)
    for g, p in zip(gold, pred):
        confusion[g, n if p == REJECT else p] += 1

    total = int(confusion.sum())
    per_class: dict[str, ClassMetrics] = {}
    zero_division = []
    acc_sum = prec_sum = rec_sum = f1_sum = 0.0
    for c, label in enumerate(labels.labels):
        tp = int(confusion[c, c])
        support = int(confusion[c].sum())
        fn = support - tp
        fp = int(confusion[:, c].sum()) - tp
        tn = total - tp - fn - fp
        accuracy = (tp + tn) / total if total else 0.0
        if tp + fp > 0:
            precision = tp / (tp + fp)
        else:
            precision = 0.0
            zero_division.append(label)
        if tp + fn > 0:
            recall = tp / (tp + fn)
        else:
            recall = 0.0
            zero_division.append(label)
        f1 = 2 * precision * recall / (precision + recall) if precision + recall > 0 else 0.0
        per_class[label] = ClassMetrics(accuracy=accuracy, precision=precision,
                                        recall=recall, f1=f1, support=support)
        acc_sum += accuracy
        prec_sum += precision
        rec_sum += recall
        f1_sum += f1
    k = max(n, 1)
    return EvalReport(labels=labels.labels, per_class=per_class,
                      macro_accuracy=acc_sum / k, macro_precision=prec_sum / k,
                      macro_recall=rec_sum / k, macro_f1=f1_sum / k,
                      confusion=confusion,
                      zero_division=tuple(dict.fromkeys(zero_division)))


def evaluate(model: RelModel, encoded: list[EncodedInstance],
             batch_size: int = 64) -> EvalReport:
    """Metrics of the model's argmax predictions over encoded instances."""
    labels = LabelSpace(model.labels)
    gold = [inst.label_id for inst in encoded]
    if any(g < 0 or g >= len(labels) for g in gold):
        raise ValueError("instances carry label ids outside the model's label space")
    if encoded:
        probs = predict_proba(model, encoded, batch_size=batch_size)
        pred = probs.argmax(axis=1)
    else:
        pred = []
    return evaluate_predictions(gold, pred, labels)


def render_report(report: EvalReport, fmt: str = "text") -> str:
    """Render as a text table (per-class rows plus a macro footer), sorted
    JSON, or CSV."""
    if fmt == "json":
        return json.dumps(report.to_json_dict(), sort_keys=True, indent=2) + "\n"
    if fmt == "csv":
        lines = ["class,accuracy,f1,recall,precision,support"]
        for label in report.labels:
            m = report.per_class[label]
            lines.append(f"{label},{m.accuracy:.6f},{m.f1:.6f},{m.recall:.6f},"
                         f"{m.precision:.6f},{m.support}")
        if report.labels:
            lines.append(f"macro,{report.macro_accuracy:.6f},{report.macro_f1:.6f},"
                         f"{report.macro_recall:.6f},{report.macro_precision:.6f},"
                         f"{int(report.confusion.sum())}")
        return "\n".join(lines) + "\n"
    if fmt != "text":
        raise ValueError(f"unknown report format {fmt!r}")

    header = (f"{'Class':<24} {'Accuracy':>9} {'F1-score':>9} {'Recall':>9} "
              f"{'Precision':>10} {'Support':>8}")
    lines = [header]
    if not report.labels:
        return header + "\n"
    lines.append("-" * len(header))
    for label in report.labels:
        m = report.per_class[label]
        lines.append(f"{label:<24} {m.accuracy:>9.3f} {m.f1:>9.3f} {m.recall:>9.3f} "
                     f"{m.precision:>10.3f} {m.support:>8}")
    lines.append("-" * len(header))
    lines.append(f"{'macro':<24} {report.macro_accuracy:>9.3f} {report.macro_f1:>9.3f} "
                 f"{report.macro_recall:>9.3f} {report.macro_precision:>10.3f} "
                 f"{int(report.confusion.sum()):>8}")
    if report.n_rejected:
        lines.append(f"rejected (unparseable): {report.n_rejected}")
    if report.zero_division:
        lines.append("zero-division flagged: " + ", ".join(report.zero_division))
    return "\n".join(lines) + "\n"


def _derived_seed(*entropy: int) -> int:
    return int(np.random.SeedSequence(list(entropy)).generate_state(1)[0])


def _random_batches(encoded, batch_size: int, rng: np.random.Generator):
    order = rng.permutation(len(encoded))
    for lo in range(0, len(encoded), batch_size):
        yield [encoded[i] for i in order[lo:lo + batch_size]]


def train(instances, doc_texts: dict[str, str], vocab: Vocab,
          model_config: ModelConfig, train_config: TrainConfig,
          settings: EncoderSettings | None = None,
          ) -> tuple[RelModel, list[dict]]:
    """Train a fresh model on relation instances.

    Splits off a stratified held-out set, encodes both parts, and runs
    epochs of class-weighted, stratified mini-batch updates. Returns the
    checkpoint with the best held-out macro F1 and a per-epoch log
    (train_loss, heldout_macro_f1). Stops early after
    ``early_stop_patience`` epochs without improvement (patience <= 0
    disables). Fully deterministic for a fixed config and input.
    """
    settings = settings or EncoderSettings()
    cfg = train_config
    labels = LabelSpace.from_labels(inst.label for inst in instances)
    if len(labels) != model_config.n_labels:
        raise ValueError(f"data has {len(labels)} labels but config.n_labels="
                         f"{model_config.n_labels}")

    train_insts, eval_insts = stratified_split(instances, cfg.eval_split_fraction, cfg.seed)
    enc_train = [encode(i, doc_texts[i.doc_id], vocab, settings, labels)
                 for i in train_insts]
    enc_eval = [encode(i, doc_texts[i.doc_id], vocab, settings, labels)
                for i in eval_insts]

    model = init_model(model_config, labels.labels, vocab.content_hash,
                       seed=_derived_seed(cfg.seed, 0), freeze=cfg.freeze)
    if cfg.use_class_weights:
        counts: dict[str, int] = {}
        for inst in train_insts:
            counts[inst.label] = counts.get(inst.label, 0) + 1
        wvec = sampler.weight_vector(sampler.compute_class_weights(counts), labels)
    else:
        wvec = np.ones(len(labels), dtype=np.float64)

    quota_log = None
    if cfg.use_stratified_batching:
        id_counts: dict[int, int] = {}
        for e in enc_train:
            id_counts[e.label_id] = id_counts.get(e.label_id, 0) + 1
        quotas = sampler.compute_quotas(id_counts, cfg.batch_size)
        quota_log = {labels.labels[i]: q for i, q in sorted(quotas.items())}

    opt = AdamState()
    log: list[dict] = []
    best_f1 = -np.inf
    best_params = None
    since_best = 0
    for epoch in range(cfg.epochs):
        drop_rng = np.random.default_rng(_derived_seed(cfg.seed, 2, epoch))
        if cfg.use_stratified_batching:
            batches = sampler.stratified_batches(
                enc_train, cfg.batch_size, _derived_seed(cfg.seed, 1, epoch),
                label_of=lambda e: e.label_id)
        else:
            batches = _random_batches(
                enc_train, cfg.batch_size,
                np.random.default_rng(_derived_seed(cfg.seed, 3, epoch)))
        losses = []
        for batch in batches:
            loss, grads = loss_and_grads(model, batch, wvec, rng=drop_rng)
            adam_step(model, grads, opt, lr=cfg.lr)
            losses.append(loss)
        entry = {"epoch": epoch, "train_loss": float(np.mean(losses)) if losses else None}
        if quota_log is not None:
            entry["batch_quotas"] = dict(quota_log)
        if enc_eval:
            report = evaluate(model, enc_eval)
            entry["heldout_macro_f1"] = report.macro_f1
            if report.macro_f1 > best_f1:
                best_f1 = report.macro_f1
                best_params = {k: v.copy() for k, v in model.params.items()}
                since_best = 0
            else:
                since_best += 1
        log.append(entry)
        if enc_eval and cfg.early_stop_patience > 0 and since_best >= cfg.early_stop_patience:
            break

    if best_params is not None:
        model = replace(model, params=best_params)
    return model, log
