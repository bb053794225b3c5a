"""Seeded generator of synthetic relation corpora.

Each document is one sentence holding a drug-like entity and a target
entity; the relation class is cued by class-specific lexical patterns
placed around the pair, while filler words and entity surfaces are shared
across classes so the cues carry all the signal. Used by the learnability
and imbalance experiments in the acceptance suite, by the bundled mock
inference server (which inverts the cue table), and as a convenient demo
corpus.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

import numpy as np

from .corpus import Document, Entity, RelationAnnotation, write_standoff

DEFAULT_CLASSES = (
    "Reason-Drug", "Duration-Drug", "ADE-Drug", "Dosage-Drug",
    "Strength-Drug", "Route-Drug", "Frequency-Drug", "Form-Drug",
)

CLASS_CUES: dict[str, tuple[str, ...]] = {
    "Reason-Drug": ("because", "owing", "indication"),
    "Duration-Drug": ("weeks", "months", "fortnight"),
    "ADE-Drug": ("rash", "nausea", "dizziness"),
    "Dosage-Drug": ("units", "amount", "dose"),
    "Strength-Drug": ("mg", "mcg", "gram"),
    "Route-Drug": ("oral", "topical", "intravenous"),
    "Frequency-Drug": ("daily", "nightly", "weekly"),
    "Form-Drug": ("tablet", "capsule", "syrup"),
}

FILLER = ("the", "patient", "was", "seen", "and", "review", "of", "notes",
          "continued", "plan", "stable", "without", "acute", "issues",
          "clinic", "visit", "also", "home", "naïve", "röntgen")

DRUGS = ("alphacillin", "betadone", "gammapril", "deltazine", "epsilonol",
         "zetamab", "etaprofen", "thetazole")

TARGETS = ("regimen", "course", "infusion", "therapy", "injection", "treatment")

TARGET_MODIFIERS = ("slow", "rapid", "split", "mixed")

DRUG_TUI = "substance"
TARGET_TUI = "procedure"


def _sentence(rng: np.random.Generator, label: str,
              extra_cue: str | None) -> tuple[list[str], slice, slice]:
    """One sentence as a word list plus the word-index slices of the two
    entities (drug first, target second)."""
    words: list[str] = list(rng.choice(FILLER, size=rng.integers(1, 4)))
    e1_start = len(words)
    words.append(str(rng.choice(DRUGS)))
    e1 = slice(e1_start, len(words))
    words.extend(rng.choice(FILLER, size=rng.integers(0, 3)))
    words.append(str(rng.choice(CLASS_CUES[label])))
    words.extend(rng.choice(FILLER, size=rng.integers(0, 3)))
    e2_start = len(words)
    if rng.random() < 0.3:
        words.append(str(rng.choice(TARGET_MODIFIERS)))
    words.append(str(rng.choice(TARGETS)))
    e2 = slice(e2_start, len(words))
    words.extend(rng.choice(FILLER, size=rng.integers(1, 4)))
    if extra_cue is not None:
        words.append(extra_cue)
    return words, e1, e2


def _word_offsets(words: list[str]) -> list[tuple[int, int]]:
    spans = []
    pos = 0
    for w in words:
        spans.append((pos, pos + len(w)))
        pos += len(w) + 1
    return spans


def generate_corpus(class_counts: dict[str, int] | None = None, seed: int = 0,
                    n_projects: int = 1, confusable: bool = False) -> list[Document]:
    """Generate one single-relation document per requested instance.

    ``class_counts`` defaults to 250 per built-in class (2000 documents).
    With ``confusable`` every sentence additionally carries the first
    class's cue, so only each class's own cue separates it from the first
    class; this makes minority classes genuinely hard for an unweighted
    model under skewed ``class_counts``.
    """
    if class_counts is None:
        class_counts = {c: 250 for c in DEFAULT_CLASSES}
    unknown = sorted(set(class_counts) - set(CLASS_CUES))
    if unknown:
        raise ValueError(f"no cue table for classes: {unknown}")
    rng = np.random.default_rng(seed)
    order = [label for label in sorted(class_counts)
             for _ in range(class_counts[label])]
    rng.shuffle(order)
    shared = sorted(class_counts)[0] if confusable else None

    docs = []
    for k, label in enumerate(order):
        extra = None
        if shared is not None and label != shared:
            extra = str(rng.choice(CLASS_CUES[shared]))
        words, e1, e2 = _sentence(rng, label, extra)
        spans = _word_offsets(words)
        text = " ".join(words)
        s1, t1 = spans[e1.start][0], spans[e1.stop - 1][1]
        s2, t2 = spans[e2.start][0], spans[e2.stop - 1][1]
        ent1 = Entity(ent_id="T1", start=s1, end=t1, surface=text[s1:t1],
                      cui=text[s1:t1], tui=DRUG_TUI)
        ent2 = Entity(ent_id="T2", start=s2, end=t2, surface=text[s2:t2],
                      cui=text[s2:t2].split()[-1], tui=TARGET_TUI)
        docs.append(Document(
            doc_id=f"syn-{k:05d}", text=text, entities=(ent1, ent2),
            relations=(RelationAnnotation(left_ent="T1", right_ent="T2", label=label),),
            project_id=f"proj-{k % n_projects}"))
    return docs


def write_brat_corpus(docs: list[Document], out_dir) -> None:
    """Materialize documents as .txt/.ann standoff pairs under out_dir."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    for doc in docs:
        txt, ann = write_standoff(doc)
        (out / f"{doc.doc_id}.txt").write_text(txt, encoding="utf-8")
        (out / f"{doc.doc_id}.ann").write_text(ann, encoding="utf-8")


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        description="Generate a synthetic standoff corpus for demos and tests.")
    parser.add_argument("out_dir", help="directory for .txt/.ann pairs")
    parser.add_argument("--per-class", type=int, default=250)
    parser.add_argument("--seed", type=int, default=0)
    args = parser.parse_args(argv)
    docs = generate_corpus({c: args.per_class for c in DEFAULT_CLASSES}, seed=args.seed)
    write_brat_corpus(docs, args.out_dir)
    print(f"wrote {len(docs)} documents to {args.out_dir}", file=sys.stderr)
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
