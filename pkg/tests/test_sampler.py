import math
from collections import Counter

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from relex.encoding import LabelSpace
from relex.sampler import (build_plan, compute_class_weights, compute_quotas,
                           stratified_batches, weight_vector)


class FakeInstance:
    def __init__(self, label, key):
        self.label = label
        self.key = key

    def __repr__(self):
        return f"<{self.label}:{self.key}>"


def make_instances(counts):
    out = []
    for label in sorted(counts):
        out.extend(FakeInstance(label, i) for i in range(counts[label]))
    return out


class TestClassWeights:
    def test_uniform_counts_give_unit_weights(self):
        assert compute_class_weights({"A": 10, "B": 10}) == {"A": 1.0, "B": 1.0}

    def test_skewed_ratio(self):
        # w[c] = N/(k*n_c), so w[minority]/w[majority] = n_major/n_minor
        counts = {"ADE-Drug": 2200, "Route-Drug": 11072, "Form-Drug": 13302,
                  "Frequency-Drug": 12612, "Dosage-Drug": 8438,
                  "Strength-Drug": 13398, "Duration-Drug": 1282,
                  "Reason-Drug": 9982}
        w = compute_class_weights(counts)
        assert abs(w["Duration-Drug"] / w["Form-Drug"] - 13302 / 1282) < 1e-12
        assert abs(13302 / 1282 - 10.376) < 1e-3

    def test_zero_count_class_rejected(self):
        with pytest.raises(ValueError, match="drop or merge"):
            compute_class_weights({"A": 5, "B": 0})

    @settings(max_examples=80, deadline=None)
    @given(st.dictionaries(st.sampled_from("ABCDEFGH"), st.integers(1, 500),
                           min_size=1, max_size=8))
    def test_weighted_total_equals_n(self, counts):
        w = compute_class_weights(counts)
        total = sum(counts.values())
        assert abs(sum(counts[c] * w[c] for c in counts) - total) < 1e-9 * total
        # weighted mean of w under the empirical distribution is exactly 1
        assert abs(sum(counts[c] / total * w[c] for c in counts) - 1.0) < 1e-12

    def test_weight_vector_orders_by_label_space(self):
        w = compute_class_weights({"b": 1, "a": 3})
        vec = weight_vector(w, LabelSpace.from_labels(["b", "a"]))
        np.testing.assert_allclose(vec, [w["a"], w["b"]])


# Independent enumeration of the frozen apportionment rule: largest remainder
# over sqrt(count), then floor-1 repair taking seats from the largest quotas.
def reference_quotas(counts, batch_size):
    labels = sorted(counts)
    weights = {c: math.sqrt(counts[c]) for c in labels}
    scale = batch_size / sum(weights.values())
    exact = {c: weights[c] * scale for c in labels}
    result = {c: math.floor(exact[c]) for c in labels}
    seats_left = batch_size - sum(result.values())
    remainders = sorted(labels, key=lambda c: (result[c] - exact[c], c))
    for c in remainders[:seats_left]:
        result[c] += 1
    for c in labels:
        while result[c] < 1:
            biggest = max(labels, key=lambda x: (result[x], x))
            result[biggest] -= 1
            result[c] += 1
    return result


class TestQuotas:
    def test_symmetric_two_labels(self):
        assert compute_quotas({"A": 8, "B": 8}, 4) == {"A": 2, "B": 2}

    def test_matches_reference_on_fixture(self):
        counts = {"A": 6, "B": 3, "C": 1}
        assert compute_quotas(counts, 5) == reference_quotas(counts, 5)

    @settings(max_examples=120, deadline=None)
    @given(st.dictionaries(st.sampled_from("ABCDEFGH"), st.integers(1, 500),
                           min_size=2, max_size=8),
           st.integers(2, 64))
    def test_matches_reference(self, counts, batch_size):
        if batch_size < len(counts):
            batch_size = len(counts)
        quotas = compute_quotas(counts, batch_size)
        assert quotas == reference_quotas(counts, batch_size)
        assert sum(quotas.values()) == batch_size
        assert all(q >= 1 for q in quotas.values())

    def test_batch_size_below_label_count_rejected(self):
        with pytest.raises(ValueError):
            compute_quotas({"A": 1, "B": 1, "C": 1}, 2)


class TestStratifiedBatches:
    def test_symmetric_composition(self):
        instances = make_instances({"A": 8, "B": 8})
        for batch in stratified_batches(instances, 4, seed=0):
            labels = Counter(i.label for i in batch)
            assert labels == {"A": 2, "B": 2}

    def test_minority_floor_and_recycling(self):
        instances = make_instances({"A": 100, "B": 4})
        batches = list(stratified_batches(instances, 10, seed=1))
        b_seen = []
        for batch in batches:
            counts = Counter(i.label for i in batch)
            assert counts["B"] >= 1
            b_seen.extend(i.key for i in batch if i.label == "B")
        assert len(b_seen) > 4  # recycled within the epoch
        a_seen = [i.key for batch in batches for i in batch if i.label == "A"]
        assert sorted(a_seen) == list(range(100))  # majority exactly once

    def test_fixture_matches_plan(self):
        counts = {"A": 6, "B": 3, "C": 1}
        instances = make_instances(counts)
        plan = build_plan(counts, 5, seed=7)
        assert plan.per_class_quota == reference_quotas(counts, 5)
        batches = list(stratified_batches(instances, 5, seed=7))
        assert len(batches) == plan.n_batches
        for i, batch in enumerate(batches):
            got = Counter(inst.label for inst in batch)
            expected = dict(plan.per_class_quota)
            if i == len(batches) - 1:
                used = plan.per_class_quota[plan.largest_label] * (len(batches) - 1)
                expected[plan.largest_label] = counts[plan.largest_label] - used
            assert got == expected

    def test_determinism_and_seed_effect(self):
        instances = make_instances({"A": 20, "B": 7})
        runs = [[tuple(i.key for i in batch)
                 for batch in stratified_batches(instances, 6, seed=s)]
                for s in (3, 3, 4)]
        assert runs[0] == runs[1]
        assert runs[0] != runs[2]
        # quotas are seed-independent
        comp_a = [Counter(i.label for i in b)
                  for b in stratified_batches(instances, 6, seed=3)]
        comp_b = [Counter(i.label for i in b)
                  for b in stratified_batches(instances, 6, seed=4)]
        assert comp_a == comp_b

    @settings(max_examples=60, deadline=None)
    @given(st.dictionaries(st.sampled_from("ABCDEFGH"), st.integers(1, 500),
                           min_size=2, max_size=8),
           st.integers(8, 40), st.integers(0, 3))
    def test_epoch_properties(self, counts, batch_size, seed):
        if batch_size < len(counts):
            batch_size = len(counts)
        instances = make_instances(counts)
        plan = build_plan(counts, batch_size, seed)
        batches = list(stratified_batches(instances, batch_size, seed))
        largest = plan.largest_label
        seen_largest = []
        for i, batch in enumerate(batches):
            comp = Counter(inst.label for inst in batch)
            for label in counts:
                assert comp[label] >= 1
            if i < len(batches) - 1:
                assert sum(comp.values()) == batch_size
            seen_largest.extend(inst.key for inst in batch if inst.label == largest)
        assert sorted(seen_largest) == list(range(counts[largest]))

    def test_empty_instances_yield_no_batches(self):
        assert list(stratified_batches([], 4, seed=0)) == []
