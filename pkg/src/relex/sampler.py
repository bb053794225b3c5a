"""Class-imbalance machinery: inverse-frequency loss weights and stratified
batch construction.

Batch quotas follow a frozen apportionment rule (re-derived independently by
the test suite): seats are assigned by largest remainder proportional to the
square root of each class count, then repaired to a floor of one seat per
class by taking seats from the largest quotas. Square-root proportionality
keeps minority classes present in every batch without starving majority
classes at severe skew.

An epoch streams each class through a seeded shuffle; classes that run out
mid-epoch reshuffle and recycle (oversampling with replacement), and the
epoch ends when the largest class is exhausted, so every majority-class
instance is seen exactly once. The final batch keeps the majority tail even
when short.
"""

from __future__ import annotations

import hashlib
import math
from collections import defaultdict
from dataclasses import dataclass

import numpy as np


def compute_class_weights(counts: dict[str, int]) -> dict[str, float]:
    """w[c] = N_total / (n_labels * count[c]); the weighted mean of w under
    the empirical class distribution is exactly 1."""
    if not counts:
        raise ValueError("no classes given")
    zero = sorted(label for label, n in counts.items() if n <= 0)
    if zero:
        raise ValueError(f"classes with no instances: {zero}; drop or merge "
                         "them before computing weights")
    total = sum(counts.values())
    k = len(counts)
    return {label: total / (k * n) for label, n in counts.items()}


def weight_vector(weights: dict[str, float], labels) -> np.ndarray:
    """Order a label->weight mapping into a vector over a label space."""
    return np.array([weights[label] for label in labels.labels], dtype=np.float64)


def compute_quotas(counts: dict, batch_size: int) -> dict:
    """Per-batch seat counts under the frozen apportionment rule. Label keys
    may be any sortable hashable (names or integer ids)."""
    labels = sorted(counts)
    if not labels:
        raise ValueError("no classes given")
    if batch_size < len(labels):
        raise ValueError(f"batch_size {batch_size} is smaller than the number "
                         f"of labels {len(labels)}")
    shares = {c: math.sqrt(counts[c]) for c in labels}
    total = sum(shares.values())
    ideal = {c: batch_size * shares[c] / total for c in labels}
    quotas = {c: int(math.floor(ideal[c])) for c in labels}
    leftover = batch_size - sum(quotas.values())
    by_remainder = sorted(labels, key=lambda c: (-(ideal[c] - quotas[c]), c))
    for c in by_remainder[:leftover]:
        quotas[c] += 1
    # floor-1 repair: move seats from the largest quotas to empty classes
    for c in labels:
        while quotas[c] == 0:
            donor = max(labels, key=lambda x: (quotas[x], x))
            quotas[donor] -= 1
            quotas[c] += 1
    return quotas


@dataclass
class StratifiedPlan:
    batch_size: int
    per_class_quota: dict
    seed: int
    n_batches: int
    largest_label: object
    allow_replacement_for_minority: bool = True


def build_plan(counts: dict, batch_size: int, seed: int,
               allow_replacement_for_minority: bool = True) -> StratifiedPlan:
    quotas = compute_quotas(counts, batch_size)
    largest = max(sorted(counts), key=lambda c: counts[c])
    n_batches = math.ceil(counts[largest] / quotas[largest])
    return StratifiedPlan(batch_size=batch_size, per_class_quota=quotas, seed=seed,
                          n_batches=n_batches, largest_label=largest,
                          allow_replacement_for_minority=allow_replacement_for_minority)


def _label_rng(seed: int, label) -> np.random.Generator:
    digest = hashlib.sha256(str(label).encode("utf-8")).digest()
    return np.random.default_rng([seed, int.from_bytes(digest[:8], "little")])


class _ClassStream:
    """Seeded shuffle over one class's indices, reshuffling on exhaustion."""

    def __init__(self, indices: list[int], rng: np.random.Generator, recycle: bool):
        self.indices = indices
        self.rng = rng
        self.recycle = recycle
        self.order = rng.permutation(len(indices))
        self.cursor = 0

    def take(self, n: int) -> list[int]:
        out = []
        while len(out) < n:
            if self.cursor == len(self.order):
                if not self.recycle:
                    raise ValueError("class exhausted and replacement disabled")
                self.order = self.rng.permutation(len(self.indices))
                self.cursor = 0
            out.append(self.indices[self.order[self.cursor]])
            self.cursor += 1
        return out

    @property
    def remaining(self) -> int:
        return len(self.order) - self.cursor


def stratified_batches(instances, batch_size: int, seed: int,
                       label_of=lambda inst: inst.label,
                       plan: StratifiedPlan | None = None):
    """Yield one epoch of stratified batches over ``instances``.

    Every batch meets the plan's per-class quotas; the final batch carries
    whatever remains of the largest class, so it may be short.
    """
    by_label: dict = defaultdict(list)
    for i, inst in enumerate(instances):
        by_label[label_of(inst)].append(i)
    if not by_label:
        return
    counts = {c: len(ix) for c, ix in by_label.items()}
    if plan is None:
        plan = build_plan(counts, batch_size, seed)
    streams = {c: _ClassStream(by_label[c], _label_rng(seed, c),
                               plan.allow_replacement_for_minority or c == plan.largest_label)
               for c in sorted(by_label)}

    largest = plan.largest_label
    for b in range(plan.n_batches):
        batch = []
        for c in sorted(by_label):
            want = plan.per_class_quota[c]
            if c == largest and b == plan.n_batches - 1:
                want = streams[c].remaining
            batch.extend(instances[i] for i in streams[c].take(want))
        yield batch
