"""Builds labeled relation instances from parsed documents.

Gold relations pass validation/distance/type-pair filters; negative
("Other") instances are synthesized from ordered pairs of validated
entities under type-pair rules, with a seeded shuffle and a per-project
cap so no project floods the dataset.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field

import numpy as np

from .corpus import Document, Entity

OTHER_LABEL = "Other"


@dataclass(frozen=True)
class GenerationPolicy:
    """Rules for turning documents into instances.

    Type-pair sets contain ordered ``(tui_left, tui_right)`` pairs; ``None``
    is the wildcard admitting every pair. ``nonrelation_cui_pairs``
    optionally admits exact ordered cui pairs in addition to the tui rules.
    Distances are measured in characters between the nearer edges of the
    two spans (0 when they overlap).
    """

    allowed_relation_tui_pairs: frozenset[tuple[str, str]] | None = None
    nonrelation_tui_pairs: frozenset[tuple[str, str]] | None = None
    nonrelation_cui_pairs: frozenset[tuple[str, str]] | None = None
    max_nonrelations_per_project: int = 70
    max_entity_distance: int = 1000
    require_validated: bool = True
    split_other_by_tui_pair: bool = False
    rng_seed: int = 0

    def __post_init__(self):
        if self.max_nonrelations_per_project < 0:
            raise ValueError("max_nonrelations_per_project must be >= 0")
        if self.max_entity_distance <= 0:
            raise ValueError("max_entity_distance must be > 0")


@dataclass(frozen=True)
class RelationInstance:
    """One classifiable example: an ordered entity pair in a document."""

    doc_id: str
    left: Entity
    right: Entity
    label: str
    project_id: str = ""

    @property
    def instance_id(self) -> str:
        return f"{self.doc_id}:{self.left.ent_id}:{self.right.ent_id}"

    def to_json_dict(self) -> dict:
        def ent(e: Entity) -> dict:
            return {"ent_id": e.ent_id, "start": e.start, "end": e.end,
                    "surface": e.surface, "cui": e.cui, "tui": e.tui,
                    "validated": e.validated, "collapsed": e.collapsed}
        return {"doc_id": self.doc_id, "project_id": self.project_id,
                "label": self.label, "left": ent(self.left), "right": ent(self.right)}

    @classmethod
    def from_json_dict(cls, obj: dict) -> "RelationInstance":
        left = Entity(**obj["left"])
        right = Entity(**obj["right"])
        return cls(doc_id=obj["doc_id"], left=left, right=right,
                   label=obj["label"], project_id=obj.get("project_id", ""))


def write_instances_jsonl(instances: list[RelationInstance]) -> str:
    return "".join(json.dumps(inst.to_json_dict(), sort_keys=True) + "\n"
                   for inst in instances)


def read_instances_jsonl(content: str) -> list[RelationInstance]:
    return [RelationInstance.from_json_dict(json.loads(line))
            for line in content.splitlines() if line.strip()]


def entity_gap(a: Entity, b: Entity) -> int:
    """Character gap between the nearer edges of two spans; 0 if they overlap."""
    if a.end <= b.start:
        return b.start - a.end
    if b.end <= a.start:
        return a.start - b.end
    return 0


@dataclass
class DropReport:
    """Counts of gold relations removed by each filter."""

    unvalidated: int = 0
    distance: int = 0
    tui_filtered: int = 0
    kept: int = 0

    @property
    def dropped(self) -> int:
        return self.unvalidated + self.distance + self.tui_filtered


def _tui_pair_allowed(pairs: frozenset[tuple[str, str]] | None,
                      left: Entity, right: Entity) -> bool:
    return pairs is None or (left.tui, right.tui) in pairs


def build_gold_instances(docs: list[Document], policy: GenerationPolicy,
                         ) -> tuple[list[RelationInstance], DropReport]:
    """One instance per gold relation that passes validation, distance, and
    type-pair filters; document and annotation order is preserved. Filtered
    relations are tallied in the returned DropReport."""
    instances: list[RelationInstance] = []
    report = DropReport()
    for doc in docs:
        by_id = {e.ent_id: e for e in doc.entities}
        for rel in doc.relations:
            left, right = by_id[rel.left_ent], by_id[rel.right_ent]
            if policy.require_validated and not (left.validated and right.validated):
                report.unvalidated += 1
                continue
            if entity_gap(left, right) > policy.max_entity_distance:
                report.distance += 1
                continue
            if not _tui_pair_allowed(policy.allowed_relation_tui_pairs, left, right):
                report.tui_filtered += 1
                continue
            instances.append(RelationInstance(doc_id=doc.doc_id, left=left, right=right,
                                              label=rel.label, project_id=doc.project_id))
            report.kept += 1
    return instances, report


def _nonrelation_label(policy: GenerationPolicy, left: Entity, right: Entity) -> str:
    if policy.split_other_by_tui_pair:
        return f"{OTHER_LABEL}:{left.tui}-{right.tui}"
    return OTHER_LABEL


def _project_rng(seed: int, project_id: str) -> np.random.Generator:
    # Stable per-project stream, independent of project iteration order.
    digest = hashlib.sha256(project_id.encode("utf-8")).digest()
    return np.random.default_rng([seed, int.from_bytes(digest[:8], "little")])


def synthesize_nonrelations(docs: list[Document],
                            policy: GenerationPolicy) -> list[RelationInstance]:
    """Generate "Other" instances from ordered pairs of distinct validated
    entities that are not gold pairs, within the distance limit, and whose
    type pair (or exact cui pair) is admitted by the policy. Each project's
    candidate pool is shuffled with the policy seed and truncated to the
    per-project cap."""
    pools: dict[str, list[RelationInstance]] = {}
    for doc in docs:
        gold_pairs = {(r.left_ent, r.right_ent) for r in doc.relations}
        pool = pools.setdefault(doc.project_id, [])
        for left in doc.entities:
            for right in doc.entities:
                if left.ent_id == right.ent_id:
                    continue
                if (left.ent_id, right.ent_id) in gold_pairs:
                    continue
                if policy.require_validated and not (left.validated and right.validated):
                    continue
                if entity_gap(left, right) > policy.max_entity_distance:
                    continue
                tui_ok = _tui_pair_allowed(policy.nonrelation_tui_pairs, left, right)
                cui_ok = (policy.nonrelation_cui_pairs is not None
                          and (left.cui, right.cui) in policy.nonrelation_cui_pairs)
                if not (tui_ok or cui_ok):
                    continue
                pool.append(RelationInstance(
                    doc_id=doc.doc_id, left=left, right=right,
                    label=_nonrelation_label(policy, left, right),
                    project_id=doc.project_id))

    out: list[RelationInstance] = []
    for project_id, pool in pools.items():
        rng = _project_rng(policy.rng_seed, project_id)
        order = rng.permutation(len(pool))
        out.extend(pool[i] for i in order[:policy.max_nonrelations_per_project])
    return out


@dataclass
class DatasetStats:
    label_counts: dict[str, int] = field(default_factory=dict)
    # label -> [("tui1-tui2", count), ...] sorted by count descending
    tui_pair_counts: dict[str, list[tuple[str, int]]] = field(default_factory=dict)

    @property
    def total(self) -> int:
        return sum(self.label_counts.values())

    def to_json_dict(self) -> dict:
        return {"total": self.total,
                "label_counts": dict(sorted(self.label_counts.items())),
                "tui_pair_counts": {k: [list(p) for p in v]
                                    for k, v in sorted(self.tui_pair_counts.items())}}

    def to_text(self) -> str:
        lines = [f"{'Class / type':<28} {'Count':>8}", "-" * 37]
        for label in sorted(self.label_counts):
            lines.append(f"{label:<28} {self.label_counts[label]:>8}")
        lines.append("-" * 37)
        lines.append(f"{'Total':<28} {self.total:>8}")
        return "\n".join(lines) + "\n"


def dataset_stats(instances: list[RelationInstance]) -> DatasetStats:
    """Exact per-label counts with a per-label type-pair breakdown, the
    breakdown sorted by count descending (ties by pair name)."""
    stats = DatasetStats()
    pair_tallies: dict[str, dict[str, int]] = {}
    for inst in instances:
        stats.label_counts[inst.label] = stats.label_counts.get(inst.label, 0) + 1
        pair = f"{inst.left.tui}-{inst.right.tui}"
        tally = pair_tallies.setdefault(inst.label, {})
        tally[pair] = tally.get(pair, 0) + 1
    for label, tally in pair_tallies.items():
        stats.tui_pair_counts[label] = sorted(tally.items(), key=lambda kv: (-kv[1], kv[0]))
    return stats
