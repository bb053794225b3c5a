"""Turns relation instances into token-id sequences the model consumes.

Pipeline per instance, with the exact windowing rule frozen here (the test
suite re-implements this description independently):

1. The document is word-tokenized (``\\w+`` runs and single non-space
   punctuation characters, Unicode-aware), tracking character offsets.
2. Start/end markers are inserted around the left entity's tokens
   (``[s1]``/``[e1]``) and the right entity's (``[s2]``/``[e2]``), in
   character order. A *region* is a marker-to-marker inclusive range.
3. A context window of ``context_window`` tokens is kept on each side of
   each region, on the marker-inserted sequence. The kept set is the union
   of the two windows; when it is discontiguous the middle is elided and a
   single ``[SEP]`` marks the elision point. ``[CLS]`` is prepended.
4. If the result exceeds ``max_seq_len`` the window is shrunk symmetrically
   (same reduced width on both sides of both regions) until it fits; entity
   spans themselves are never dropped. The fitting width is always computed
   on the marker-inserted length, in both marker modes, so the two modes
   stay token-aligned.
5. ``marker_mode="index_only"`` emits the same sequence with the four
   marker tokens deleted; entity positions are carried by the recorded
   spans alone.

Token and marker positions are recorded post-windowing, so they index
directly into ``token_ids``.
"""

from __future__ import annotations

import hashlib
import json
import re
from collections import Counter
from dataclasses import dataclass

PAD, UNK, CLS, SEP, S1, E1, S2, E2 = range(8)
SPECIAL_TOKENS = ("[PAD]", "[UNK]", "[CLS]", "[SEP]", "[s1]", "[e1]", "[s2]", "[e2]")
N_SPECIALS = len(SPECIAL_TOKENS)

_TOKEN_RE = re.compile(r"\w+|[^\w\s]", re.UNICODE)


class EncodeError(ValueError):
    pass


def tokenize_with_offsets(text: str) -> list[tuple[str, int, int]]:
    """Split text into (token, start, end) triples on character offsets."""
    return [(m.group(0), m.start(), m.end()) for m in _TOKEN_RE.finditer(text)]


@dataclass(frozen=True)
class Vocab:
    """Dense word-level vocabulary; ids 0..7 are the reserved specials."""

    tokens: tuple[str, ...]

    def __post_init__(self):
        if tuple(self.tokens[:N_SPECIALS]) != SPECIAL_TOKENS:
            raise ValueError("vocab must start with the reserved special tokens")
        mapping = {}
        for i, tok in enumerate(self.tokens):
            if tok in mapping:
                raise ValueError(f"duplicate token in vocab: {tok!r}")
            mapping[tok] = i
        object.__setattr__(self, "_token_to_id", mapping)

    def __len__(self) -> int:
        return len(self.tokens)

    def id_of(self, token: str) -> int:
        return self._token_to_id.get(token, UNK)

    def token_of(self, token_id: int) -> str:
        return self.tokens[token_id]

    def serialize(self) -> str:
        """Newline-delimited tokens; line number (from 0) is the id."""
        return "\n".join(self.tokens) + "\n"

    @classmethod
    def deserialize(cls, content: str) -> "Vocab":
        return cls(tuple(content.splitlines()))

    @property
    def content_hash(self) -> str:
        return hashlib.sha256(self.serialize().encode("utf-8")).hexdigest()


def build_vocab(corpus_texts: list[str], max_size: int, min_freq: int = 1,
                lowercase: bool = True) -> Vocab:
    """Frequency-ranked word vocabulary over the corpus, ties broken
    lexicographically, truncated to ``max_size`` including the 8 specials."""
    if max_size <= N_SPECIALS:
        raise ValueError(f"max_size must exceed {N_SPECIALS}")
    counts: Counter[str] = Counter()
    for text in corpus_texts:
        for tok, _, _ in tokenize_with_offsets(text):
            counts[tok.lower() if lowercase else tok] += 1
    ranked = sorted((tok for tok, c in counts.items() if c >= min_freq),
                    key=lambda tok: (-counts[tok], tok))
    return Vocab(SPECIAL_TOKENS + tuple(ranked[:max_size - N_SPECIALS]))


@dataclass(frozen=True)
class EncoderSettings:
    max_seq_len: int = 128
    context_window: int = 16
    marker_mode: str = "markers"  # or "index_only"
    lowercase: bool = True

    def __post_init__(self):
        if self.max_seq_len < 16:
            raise ValueError("max_seq_len must be >= 16")
        if self.context_window < 1:
            raise ValueError("context_window must be >= 1")
        if self.marker_mode not in ("markers", "index_only"):
            raise ValueError("marker_mode must be 'markers' or 'index_only'")


@dataclass(frozen=True)
class EncodedInstance:
    token_ids: tuple[int, ...]
    e1_span: tuple[int, int]  # output token indices, end-exclusive
    e2_span: tuple[int, int]
    marker_idx: tuple[int, int, int, int] | None  # (s1, e1, s2, e2) or None
    label_id: int
    attention_len: int

    def to_json_dict(self) -> dict:
        return {"token_ids": list(self.token_ids), "e1_span": list(self.e1_span),
                "e2_span": list(self.e2_span),
                "marker_idx": list(self.marker_idx) if self.marker_idx else None,
                "label_id": self.label_id, "attention_len": self.attention_len}

    @classmethod
    def from_json_dict(cls, obj: dict) -> "EncodedInstance":
        return cls(token_ids=tuple(obj["token_ids"]),
                   e1_span=tuple(obj["e1_span"]), e2_span=tuple(obj["e2_span"]),
                   marker_idx=tuple(obj["marker_idx"]) if obj["marker_idx"] else None,
                   label_id=obj["label_id"], attention_len=obj["attention_len"])


@dataclass(frozen=True)
class LabelSpace:
    """Ordered label names; id = position. Construction sorts label names
    so the space is stable across runs and instance orderings."""

    labels: tuple[str, ...]

    @classmethod
    def from_labels(cls, labels) -> "LabelSpace":
        return cls(tuple(sorted(set(labels))))

    def __len__(self) -> int:
        return len(self.labels)

    def index(self, label: str) -> int:
        try:
            return self.labels.index(label)
        except ValueError:
            raise KeyError(f"unknown label {label!r}") from None


_WORD, _MARK = 0, 1


def _token_span(tokens, start: int, end: int) -> tuple[int, int]:
    """Indices of tokens overlapping the character range, end-exclusive."""
    lo = hi = None
    for i, (_, ts, te) in enumerate(tokens):
        if ts < end and te > start:
            if lo is None:
                lo = i
            hi = i + 1
    if lo is None:
        raise EncodeError(f"entity span [{start},{end}) tokenizes to zero tokens")
    return lo, hi


def _marked_items(tokens, span1, span2):
    """Token stream with the four markers inserted; returns (items, regions)
    where items are (kind, payload) and regions are item-index ranges
    covering marker..marker inclusive for each entity."""
    (a1, b1), (a2, b2) = span1, span2
    items: list[tuple[int, object]] = []
    pos: dict[int, int] = {}
    for i, (tok, _, _) in enumerate(tokens):
        if i == a1:
            pos[S1] = len(items)
            items.append((_MARK, S1))
        if i == a2:
            pos[S2] = len(items)
            items.append((_MARK, S2))
        items.append((_WORD, i))
        if i + 1 == b1:
            pos[E1] = len(items)
            items.append((_MARK, E1))
        if i + 1 == b2:
            pos[E2] = len(items)
            items.append((_MARK, E2))
    region1 = (pos[S1], pos[E1] + 1)
    region2 = (pos[S2], pos[E2] + 1)
    return items, region1, region2


def _keep_segments(n_items: int, region1, region2, window: int):
    """The kept item ranges for a window width: union of the per-region
    windows, as 1 or 2 ordered disjoint segments."""
    lo_r, hi_r = sorted([region1, region2])
    seg_a = (max(0, lo_r[0] - window), min(n_items, lo_r[1] + window))
    seg_b = (max(0, hi_r[0] - window), min(n_items, hi_r[1] + window))
    if seg_b[0] <= seg_a[1]:
        return [(seg_a[0], max(seg_a[1], seg_b[1]))]
    return [seg_a, seg_b]


def _windowed_length(segments) -> int:
    # CLS + kept items + SEP when elided in the middle
    return 1 + sum(e - s for s, e in segments) + (1 if len(segments) == 2 else 0)


def _fit_segments(n_items: int, region1, region2, settings: EncoderSettings):
    """Shrink the window symmetrically until the marker-inserted sequence
    fits the length budget."""
    window = settings.context_window
    segments = _keep_segments(n_items, region1, region2, window)
    while _windowed_length(segments) > settings.max_seq_len:
        window -= 1
        if window < 0:
            raise EncodeError(
                f"entity spans cannot fit max_seq_len={settings.max_seq_len}")
        segments = _keep_segments(n_items, region1, region2, window)
    return segments


def _windowed_items(instance, doc_text: str, settings: EncoderSettings):
    tokens = tokenize_with_offsets(doc_text)
    span1 = _token_span(tokens, instance.left.start, instance.left.end)
    span2 = _token_span(tokens, instance.right.start, instance.right.end)
    if span1[0] < span2[1] and span2[0] < span1[1]:
        raise EncodeError(
            f"entity token spans overlap: {span1} and {span2} in {instance.doc_id}")
    items, region1, region2 = _marked_items(tokens, span1, span2)
    segments = _fit_segments(len(items), region1, region2, settings)
    return tokens, span1, span2, items, segments


def encode(instance, doc_text: str, vocab: Vocab, settings: EncoderSettings,
           labels: LabelSpace | None = None) -> EncodedInstance:
    """Encode one instance against its document text. ``label_id`` is
    resolved through ``labels`` when given, else set to -1 (prediction-time
    encoding)."""
    tokens, span1, span2, items, segments = _windowed_items(instance, doc_text,
                                                            settings)

    keep_markers = settings.marker_mode == "markers"
    token_ids = [CLS]
    span_out: dict[int, list[int]] = {1: [], 2: []}
    marker_out: dict[int, int] = {}
    for seg_i, (s, e) in enumerate(segments):
        if seg_i > 0:
            token_ids.append(SEP)
        for kind, payload in items[s:e]:
            if kind == _MARK:
                if keep_markers:
                    marker_out[payload] = len(token_ids)
                    token_ids.append(payload)
                continue
            tok = tokens[payload][0]
            if span1[0] <= payload < span1[1]:
                span_out[1].append(len(token_ids))
            elif span2[0] <= payload < span2[1]:
                span_out[2].append(len(token_ids))
            token_ids.append(vocab.id_of(tok.lower() if settings.lowercase else tok))

    e1_span = (span_out[1][0], span_out[1][-1] + 1)
    e2_span = (span_out[2][0], span_out[2][-1] + 1)
    marker_idx = ((marker_out[S1], marker_out[E1], marker_out[S2], marker_out[E2])
                  if keep_markers else None)
    label_id = labels.index(instance.label) if labels is not None else -1
    return EncodedInstance(token_ids=tuple(token_ids), e1_span=e1_span, e2_span=e2_span,
                           marker_idx=marker_idx, label_id=label_id,
                           attention_len=len(token_ids))


def window_context(instance, doc_text: str, settings: EncoderSettings) -> str:
    """The windowed context as plain text for prompt-based classification:
    kept word tokens joined by spaces, original casing, markers omitted,
    the elision point rendered as ``...``."""
    tokens, _, _, items, segments = _windowed_items(instance, doc_text, settings)
    parts = []
    for s, e in segments:
        words = [tokens[payload][0] for kind, payload in items[s:e] if kind == _WORD]
        parts.append(" ".join(words))
    return " ... ".join(parts)


def write_encoded_jsonl(encoded: list[EncodedInstance]) -> str:
    return "".join(json.dumps(e.to_json_dict(), sort_keys=True) + "\n" for e in encoded)


def read_encoded_jsonl(content: str) -> list[EncodedInstance]:
    return [EncodedInstance.from_json_dict(json.loads(line))
            for line in content.splitlines() if line.strip()]
