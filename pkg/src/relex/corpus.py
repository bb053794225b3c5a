"""Corpus ingestion: standoff annotation pairs and annotation-tool JSON exports.

Two on-disk formats produce the same in-memory objects (see docs/formats.md):

* standoff ``.txt``/``.ann`` pairs, with ``T`` lines for entity spans and
  ``R`` lines for directed, typed relations between them;
* a JSON export from an annotation tool, organised as projects containing
  documents, each with character-offset entity annotations and relations.

All offsets are Unicode code-point indices into the document text, never
bytes. Documents are immutable after construction and safe to share across
threads.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass


class ParseError(ValueError):
    """Raised for malformed corpus input; the message names the offending
    line number or JSON path."""


@dataclass(frozen=True)
class Entity:
    """A contiguous entity mention. ``surface`` always equals the slice
    ``text[start:end]`` of the owning document."""

    ent_id: str
    start: int
    end: int
    surface: str
    cui: str = ""
    tui: str = ""
    validated: bool = True
    # True when the source annotation was discontinuous and the span was
    # collapsed to the covering interval.
    collapsed: bool = False


@dataclass(frozen=True)
class RelationAnnotation:
    """A directed relation between two entities of one document.
    ``(left, right)`` is ordered: it is not the same relation as
    ``(right, left)``."""

    left_ent: str
    right_ent: str
    label: str


@dataclass(frozen=True)
class Document:
    doc_id: str
    text: str
    entities: tuple[Entity, ...] = ()
    relations: tuple[RelationAnnotation, ...] = ()
    project_id: str = ""

    def __post_init__(self):
        object.__setattr__(self, "entities", tuple(self.entities))
        object.__setattr__(self, "relations", tuple(self.relations))
        seen = set()
        for ent in self.entities:
            if ent.ent_id in seen:
                raise ParseError(f"document {self.doc_id}: duplicate entity id {ent.ent_id}")
            seen.add(ent.ent_id)
            if not (0 <= ent.start < ent.end <= len(self.text)):
                raise ParseError(
                    f"document {self.doc_id}: entity {ent.ent_id} offsets "
                    f"[{ent.start},{ent.end}) out of bounds for text of length {len(self.text)}"
                )
            if ent.surface != self.text[ent.start:ent.end]:
                raise ParseError(
                    f"document {self.doc_id}: entity {ent.ent_id} surface does not "
                    f"match text slice [{ent.start},{ent.end})"
                )
        for rel in self.relations:
            for ref in (rel.left_ent, rel.right_ent):
                if ref not in seen:
                    raise ParseError(
                        f"document {self.doc_id}: relation {rel.label} references "
                        f"unknown entity id {ref}"
                    )

    def entity_by_id(self, ent_id: str) -> Entity:
        for ent in self.entities:
            if ent.ent_id == ent_id:
                return ent
        raise KeyError(ent_id)


_ENTITY_LINE = re.compile(r"^(T[^\t]+)\t(\S+) ([0-9; ]+)\t(.*)$")
_RELATION_LINE = re.compile(r"^(R[^\t]+)\t(\S+) Arg1:(\S+) Arg2:(\S+)\s*$")


def parse_standoff(txt_content: str, ann_content: str, doc_id: str,
                   project_id: str = "") -> Document:
    """Parse a ``.txt``/``.ann`` standoff pair into a Document.

    Entity lines: ``T<id>\\t<TYPE> <start> <end>\\t<surface>``; discontinuous
    spans (``start end;start end``) are collapsed to the covering interval
    and flagged. Relation lines: ``R<id>\\t<LABEL> Arg1:T<i> Arg2:T<j>``,
    Arg1 being the left member of the directed pair. The entity TYPE is
    stored as the tui; cui is left empty. Comment lines (``#``) and blank
    lines are skipped; anything else raises ParseError with its line number.
    """
    entities: list[Entity] = []
    relations: list[tuple[int, RelationAnnotation]] = []
    known_ids: set[str] = set()

    for lineno, line in enumerate(ann_content.splitlines(), start=1):
        if not line.strip() or line.startswith("#"):
            continue
        if line.startswith("T"):
            m = _ENTITY_LINE.match(line)
            if not m:
                raise ParseError(f"{doc_id}: malformed entity line {lineno}: {line!r}")
            ent_id, ent_type, span_field, ann_surface = m.groups()
            try:
                fragments = []
                for frag in span_field.split(";"):
                    start_s, end_s = frag.split()
                    fragments.append((int(start_s), int(end_s)))
            except ValueError:
                raise ParseError(f"{doc_id}: malformed span on line {lineno}: {line!r}") from None
            collapsed = len(fragments) > 1
            start = min(f[0] for f in fragments)
            end = max(f[1] for f in fragments)
            if not (0 <= start < end <= len(txt_content)):
                raise ParseError(
                    f"{doc_id}: offset out of bounds on line {lineno}: "
                    f"[{start},{end}) vs text length {len(txt_content)}"
                )
            surface = txt_content[start:end]
            if not collapsed:
                # The .ann surface column replaces newlines with spaces.
                if ann_surface != surface.replace("\n", " "):
                    raise ParseError(
                        f"{doc_id}: line {lineno}: annotated surface {ann_surface!r} "
                        f"does not match text slice {surface!r}"
                    )
            if ent_id in known_ids:
                raise ParseError(f"{doc_id}: duplicate entity id {ent_id} on line {lineno}")
            known_ids.add(ent_id)
            entities.append(Entity(ent_id=ent_id, start=start, end=end, surface=surface,
                                   tui=ent_type, collapsed=collapsed))
        elif line.startswith("R"):
            m = _RELATION_LINE.match(line)
            if not m:
                raise ParseError(f"{doc_id}: malformed relation line {lineno}: {line!r}")
            _, label, arg1, arg2 = m.groups()
            relations.append((lineno, RelationAnnotation(left_ent=arg1, right_ent=arg2,
                                                         label=label)))
        else:
            raise ParseError(f"{doc_id}: unrecognised line {lineno}: {line!r}")

    for lineno, rel in relations:
        for ref in (rel.left_ent, rel.right_ent):
            if ref not in known_ids:
                raise ParseError(
                    f"{doc_id}: relation on line {lineno} references unknown entity {ref}"
                )

    return Document(doc_id=doc_id, text=txt_content, entities=tuple(entities),
                    relations=tuple(r for _, r in relations), project_id=project_id)


def write_standoff(doc: Document) -> tuple[str, str]:
    """Serialize a Document back to a (txt, ann) standoff pair. Inverse of
    :func:`parse_standoff` for documents without collapsed spans."""
    lines = []
    for ent in doc.entities:
        surface = doc.text[ent.start:ent.end].replace("\n", " ")
        lines.append(f"{ent.ent_id}\t{ent.tui} {ent.start} {ent.end}\t{surface}")
    for i, rel in enumerate(doc.relations, start=1):
        lines.append(f"R{i}\t{rel.label} Arg1:{rel.left_ent} Arg2:{rel.right_ent}")
    return doc.text, "\n".join(lines) + ("\n" if lines else "")


class TypeMap(dict):
    """cui -> tui mapping; unlisted concepts resolve to ``"unknown"``."""

    def __missing__(self, key):
        return "unknown"

    def get(self, key, default="unknown"):
        return super().get(key, default)


def load_type_map(tsv_content: str) -> TypeMap:
    """Parse ``cui<TAB>tui`` lines into a TypeMap. A leading ``cui\\ttui``
    header is allowed. Conflicting duplicate rows raise ParseError."""
    mapping = TypeMap()
    for lineno, line in enumerate(tsv_content.splitlines(), start=1):
        if not line.strip():
            continue
        parts = line.split("\t")
        if len(parts) != 2:
            raise ParseError(f"type map line {lineno}: expected 2 tab-separated fields")
        cui, tui = parts[0].strip(), parts[1].strip()
        if lineno == 1 and cui.lower() == "cui" and tui.lower() == "tui":
            continue
        if cui in mapping and dict.__getitem__(mapping, cui) != tui:
            raise ParseError(
                f"type map line {lineno}: cui {cui} already mapped to "
                f"{dict.__getitem__(mapping, cui)!r}, conflicting with {tui!r}"
            )
        mapping[cui] = tui
    return mapping


def _require(obj, key, path):
    if not isinstance(obj, dict) or key not in obj:
        raise ParseError(f"trainer export: missing required field {path}.{key}")
    return obj[key]


def parse_trainer_export(json_content: str, type_map: TypeMap | None = None) -> list[Document]:
    """Parse an annotation-tool JSON export into Documents.

    Expected shape: ``{"projects": [{"name", "documents": [{"id", "text",
    "annotations": [{"id", "start", "end", "cui", "validated"}],
    "relations": [{"start_entity", "end_entity", "relation_label"}]}]}]}``.
    ``start_entity`` is the left member of the directed pair. The
    ``validated`` flag is carried through verbatim; filtering happens
    downstream. Entity tui is resolved through ``type_map`` when given
    (unlisted concepts map to ``"unknown"``), else left empty.
    """
    try:
        data = json.loads(json_content)
    except json.JSONDecodeError as exc:
        raise ParseError(f"trainer export: invalid JSON: {exc}") from None

    docs: list[Document] = []
    projects = _require(data, "projects", "$")
    for p_i, project in enumerate(projects):
        p_path = f"$.projects[{p_i}]"
        project_id = str(_require(project, "name", p_path))
        documents = _require(project, "documents", p_path)
        for d_i, doc in enumerate(documents):
            d_path = f"{p_path}.documents[{d_i}]"
            doc_id = str(_require(doc, "id", d_path))
            text = _require(doc, "text", d_path)
            entities = []
            ent_ids = set()
            for a_i, ann in enumerate(_require(doc, "annotations", d_path)):
                a_path = f"{d_path}.annotations[{a_i}]"
                ent_id = str(_require(ann, "id", a_path))
                start = _require(ann, "start", a_path)
                end = _require(ann, "end", a_path)
                cui = str(_require(ann, "cui", a_path))
                validated = bool(_require(ann, "validated", a_path))
                if not (isinstance(start, int) and isinstance(end, int)
                        and 0 <= start < end <= len(text)):
                    raise ParseError(f"trainer export: {a_path}: offsets [{start},{end}) "
                                     f"out of bounds for text of length {len(text)}")
                surface = text[start:end]
                if "value" in ann and ann["value"] != surface:
                    raise ParseError(f"trainer export: {a_path}: value {ann['value']!r} "
                                     f"does not match text slice {surface!r}")
                tui = type_map.get(cui) if type_map is not None else ""
                entities.append(Entity(ent_id=ent_id, start=start, end=end, surface=surface,
                                       cui=cui, tui=tui, validated=validated))
                ent_ids.add(ent_id)
            relations = []
            for r_i, rel in enumerate(_require(doc, "relations", d_path)):
                r_path = f"{d_path}.relations[{r_i}]"
                left = str(_require(rel, "start_entity", r_path))
                right = str(_require(rel, "end_entity", r_path))
                label = str(_require(rel, "relation_label", r_path))
                for ref in (left, right):
                    if ref not in ent_ids:
                        raise ParseError(f"trainer export: {r_path}: relation references "
                                         f"missing annotation id {ref}")
                relations.append(RelationAnnotation(left_ent=left, right_ent=right, label=label))
            docs.append(Document(doc_id=doc_id, text=text, entities=tuple(entities),
                                 relations=tuple(relations), project_id=project_id))
    return docs
