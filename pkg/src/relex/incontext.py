"""Zero/few-shot relation classification through prompt templates and a
pluggable text-generation client.

The two bundled templates are fixed text assets with a single ``{input}``
placeholder; zero-shot rendering is byte-identical to the asset with the
placeholder substituted (golden-file tested). The assets reproduce their
published source verbatim, including its idiosyncrasies: the llama-style
header tags spell ``start_head_id`` in two places, and both templates carry
the original trailing spaces and typos. See docs/icl.md for the wire
contract and the few-shot insertion format.

Inputs render as ``'<tokens>', '<entity 1>', '<entity 2>'`` where tokens is
the windowed context produced by the encoder with markers stripped.
Few-shot examples are inserted immediately before the final Input line as
``Input:``/``Output:`` pairs in the same format, at the same indentation.
"""

from __future__ import annotations

import hashlib
import json
import re
import time
import urllib.error
import urllib.request
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from importlib import resources

import numpy as np

from .candidates import RelationInstance
from .encoding import EncoderSettings, LabelSpace, window_context
from .train_eval import REJECT, EvalReport, evaluate_predictions

N2C2_CATEGORIES = (
    "Reason-Drug", "Duration-Drug", "ADE-Drug", "Dosage-Drug",
    "Strength-Drug", "Route-Drug", "Frequency-Drug", "Form-Drug",
)

TEMPLATE_IDS = ("llama_style", "mistral_style")


class _UnparseableType:
    _instance = None

    def __new__(cls):
        if cls._instance is None:
            cls._instance = super().__new__(cls)
        return cls._instance

    def __repr__(self):
        return "UNPARSEABLE"

    def __bool__(self):
        return False


UNPARSEABLE = _UnparseableType()


@dataclass(frozen=True)
class PromptTemplate:
    """A prompt text asset plus its ordered category names. The category
    index communicated to the generation model is the position in
    ``categories``."""

    template_id: str
    text: str
    categories: tuple[str, ...] = N2C2_CATEGORIES
    # (tokens, entity1, entity2, category index) tuples used when
    # render_prompt is called without explicit shots
    few_shot_examples: tuple[tuple[str, str, str, int], ...] = ()

    def __post_init__(self):
        if self.text.count("{input}") != 1:
            raise ValueError("template must contain exactly one {input} placeholder")

    @classmethod
    def load(cls, template_id: str) -> "PromptTemplate":
        if template_id not in TEMPLATE_IDS:
            raise ValueError(f"unknown template {template_id!r}; "
                             f"expected one of {TEMPLATE_IDS}")
        text = (resources.files("relex") / "templates" / f"{template_id}.txt"
                ).read_text(encoding="utf-8")
        return cls(template_id=template_id, text=text)


def render_input(tokens: str, entity1: str, entity2: str) -> str:
    return f"'{tokens}', '{entity1}', '{entity2}'"


def render_prompt(template: PromptTemplate, instance_text: str, entity1: str,
                  entity2: str, shots=None) -> str:
    """Substitute the input slot; with shots, insert Input/Output example
    pairs before the final Input line. Empty and omitted shots render
    identically (pure zero-shot)."""
    if shots is None:
        shots = template.few_shot_examples
    text = template.text
    if shots:
        lines = text.split("\n")
        slot = next(i for i, line in enumerate(lines) if "{input}" in line)
        indent = lines[slot][:len(lines[slot]) - len(lines[slot].lstrip())]
        example_lines = []
        for tokens, e1, e2, idx in shots:
            example_lines.append(f"{indent}Input: {render_input(tokens, e1, e2)}")
            example_lines.append(f"{indent}Output: {idx}")
        lines[slot:slot] = example_lines
        text = "\n".join(lines)
    return text.replace("{input}", render_input(instance_text, entity1, entity2))


def parse_label(response: str, categories) -> int | _UnparseableType:
    """Map a model response to a category index.

    Accepts, in order: a bare in-range integer; a case-insensitive exact
    category-name match; otherwise a unique category mention (by name or
    in-range integer token) anywhere in the response. Anything ambiguous or
    unmatched is UNPARSEABLE.
    """
    n = len(categories)
    s = response.strip()
    if re.fullmatch(r"[+-]?\d+", s):
        idx = int(s)
        return idx if 0 <= idx < n else UNPARSEABLE
    lowered = s.lower()
    exact = [i for i, c in enumerate(categories) if c.lower() == lowered]
    if len(exact) == 1:
        return exact[0]
    found = {i for i, c in enumerate(categories) if c.lower() in lowered}
    for m in re.finditer(r"(?<![\w-])(\d+)(?![\w-])", s):
        idx = int(m.group(1))
        if 0 <= idx < n:
            found.add(idx)
    if len(found) == 1:
        return found.pop()
    return UNPARSEABLE


@dataclass(frozen=True)
class GenerationResult:
    text: str
    finish_reason: str = "stop"


class ClientError(RuntimeError):
    pass


class HttpClient:
    """Minimal JSON-over-HTTP inference client.

    POSTs ``{"prompt", "max_tokens", "temperature"}`` to the endpoint and
    expects ``{"text", "finish_reason"}`` back (docs/icl.md). Stateless per
    request; retries with exponential backoff.
    """

    def __init__(self, endpoint: str, timeout: float = 30.0, max_retries: int = 3,
                 concurrency: int = 4, backoff: float = 0.5):
        self.endpoint = endpoint
        self.timeout = timeout
        self.max_retries = max_retries
        self.concurrency = concurrency
        self.backoff = backoff

    def generate(self, prompt: str, max_tokens: int = 16,
                 temperature: float = 0.0) -> GenerationResult:
        payload = json.dumps({"prompt": prompt, "max_tokens": max_tokens,
                              "temperature": temperature}).encode("utf-8")
        last_error = None
        for attempt in range(self.max_retries + 1):
            if attempt:
                time.sleep(self.backoff * (2 ** (attempt - 1)))
            try:
                req = urllib.request.Request(
                    self.endpoint, data=payload,
                    headers={"Content-Type": "application/json"})
                with urllib.request.urlopen(req, timeout=self.timeout) as resp:
                    body = json.loads(resp.read().decode("utf-8"))
                return GenerationResult(text=body["text"],
                                        finish_reason=body.get("finish_reason", "stop"))
            except (urllib.error.URLError, TimeoutError, OSError,
                    json.JSONDecodeError, KeyError) as exc:
                last_error = exc
        raise ClientError(f"endpoint {self.endpoint} failed after "
                          f"{self.max_retries + 1} attempts: {last_error}")


class CallableClient:
    """Wraps a plain ``prompt -> response text`` function; for tests and
    in-process mock evaluation."""

    def __init__(self, fn, concurrency: int = 1):
        self.fn = fn
        self.concurrency = concurrency

    def generate(self, prompt: str, max_tokens: int = 16,
                 temperature: float = 0.0) -> GenerationResult:
        return GenerationResult(text=self.fn(prompt))


@dataclass
class IclResult:
    report: EvalReport
    n_unparseable: int
    n_failed: int
    # one dict per instance: instance_id, prompt_sha256, response, parsed
    records: list[dict]


def draw_shots(train_instances, doc_texts, categories, shots_per_class: int,
               seed: int, settings: EncoderSettings):
    """Seeded stratified draw of few-shot examples: ``shots_per_class``
    training instances per category, rendered to (tokens, e1, e2, index)."""
    shots = []
    by_label: dict[str, list[RelationInstance]] = {}
    for inst in train_instances:
        by_label.setdefault(inst.label, []).append(inst)
    for idx, cat in enumerate(categories):
        pool = by_label.get(cat, [])
        if not pool:
            continue
        rng = np.random.default_rng([seed, idx])
        chosen = rng.choice(len(pool), size=min(shots_per_class, len(pool)),
                            replace=False)
        for j in sorted(chosen):
            inst = pool[j]
            ctx = window_context(inst, doc_texts[inst.doc_id], settings)
            shots.append((ctx, inst.left.surface, inst.right.surface, idx))
    return shots


def icl_evaluate(instances, doc_texts: dict[str, str], template: PromptTemplate,
                 client, shots_per_class: int = 0, seed: int = 0,
                 train_instances=None, settings: EncoderSettings | None = None,
                 max_tokens: int = 16, max_failure_rate: float = 0.1) -> IclResult:
    """Classify instances by prompting and score against gold labels.

    Shots come from ``train_instances`` (required when shots_per_class > 0
    and never drawn from the evaluated instances). Unparseable responses
    and transport failures land in the report's reject bucket; the run
    aborts when the failure rate exceeds ``max_failure_rate``.
    """
    settings = settings or EncoderSettings()
    labels = LabelSpace.from_labels(template.categories)
    for inst in instances:
        if inst.label not in template.categories:
            raise ValueError(f"instance label {inst.label!r} is not a template category")

    shots = ()
    if shots_per_class > 0:
        if train_instances is None:
            raise ValueError("shots_per_class > 0 requires train_instances")
        shots = draw_shots(train_instances, doc_texts, template.categories,
                           shots_per_class, seed, settings)

    prompts = []
    for inst in instances:
        ctx = window_context(inst, doc_texts[inst.doc_id], settings)
        prompts.append(render_prompt(template, ctx, inst.left.surface,
                                     inst.right.surface, shots=shots))

    def call(prompt: str):
        try:
            return client.generate(prompt, max_tokens=max_tokens, temperature=0.0)
        except ClientError as exc:
            return exc

    concurrency = max(1, getattr(client, "concurrency", 1))
    with ThreadPoolExecutor(max_workers=concurrency) as pool:
        outcomes = list(pool.map(call, prompts))

    gold, pred, records = [], [], []
    n_unparseable = n_failed = 0
    for inst, prompt, outcome in zip(instances, prompts, outcomes):
        record = {"instance_id": inst.instance_id,
                  "prompt_sha256": hashlib.sha256(prompt.encode("utf-8")).hexdigest()}
        if isinstance(outcome, ClientError):
            n_failed += 1
            record.update(response=None, parsed=None, failed=True)
            pred.append(REJECT)
        else:
            parsed = parse_label(outcome.text, template.categories)
            if parsed is UNPARSEABLE:
                n_unparseable += 1
                record.update(response=outcome.text, parsed=None, failed=False)
                pred.append(REJECT)
            else:
                record.update(response=outcome.text, parsed=parsed, failed=False)
                pred.append(labels.index(template.categories[parsed]))
        gold.append(labels.index(inst.label))
        records.append(record)

    if instances and n_failed / len(instances) > max_failure_rate:
        raise ClientError(f"{n_failed}/{len(instances)} requests failed, above the "
                          f"{max_failure_rate:.0%} threshold")
    report = evaluate_predictions(gold, pred, labels)
    return IclResult(report=report, n_unparseable=n_unparseable,
                     n_failed=n_failed, records=records)
