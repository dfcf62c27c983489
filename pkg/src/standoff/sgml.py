"""Inline SGML-style markup to stand-off annotations and back.

Accepted subset: explicit open/close tags, empty-element tags <x/>,
double- or single-quoted attributes, the five predefined entities plus
decimal character references, and comments (skipped). No DTDs, no tag
minimization, no CDATA.

Annotations that cross the element hierarchy are exported as milestone
pairs <T.start id="N"/> ... <T.end id="N"/>, which import folds back
into a single annotation of type T.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field
from typing import Iterator, Optional, Sequence

from .errors import CodecError
from .store import Annotation, Document, Span

_NAME = r"[A-Za-z_][A-Za-z0-9._-]*"
_ATTR_RE = re.compile(rf"\s+({_NAME})\s*=\s*(\"[^\"]*\"|'[^']*')")
_OPEN_RE = re.compile(rf"<({_NAME})((?:\s+{_NAME}\s*=\s*(?:\"[^\"]*\"|'[^']*'))*)\s*(/?)>")
_CLOSE_RE = re.compile(rf"</({_NAME})\s*>")
_ENTITY_RE = re.compile(r"&(#[0-9]+|[A-Za-z]+);")

_NAMED_ENTITIES = {"amp": "&", "lt": "<", "gt": ">", "quot": '"', "apos": "'"}
_ESCAPE_CHARS = {"&": "&amp;", "<": "&lt;", ">": "&gt;", '"': "&quot;", "'": "&apos;"}
_ESCAPE_BYTES = {ord(k): v.encode() for k, v in _ESCAPE_CHARS.items()}


@dataclass
class MarkupEvent:
    """One lexical event: a tag, or a run of character data."""

    kind: str  # open | close | empty | text
    name: Optional[str] = None
    attributes: list[tuple[str, str]] = field(default_factory=list)
    start: int = 0  # byte range in the source stream
    end: int = 0
    text: str = ""  # decoded character data, text events only


def decode_entities(raw: str, where: str = "character data") -> str:
    out = []
    pos = 0
    while True:
        amp = raw.find("&", pos)
        if amp < 0:
            out.append(raw[pos:])
            return "".join(out)
        out.append(raw[pos:amp])
        m = _ENTITY_RE.match(raw, amp)
        if not m:
            raise CodecError(f"unknown entity at {where}: {raw[amp:amp + 10]!r}")
        body = m.group(1)
        if body.startswith("#"):
            try:
                out.append(chr(int(body[1:])))
            except (ValueError, OverflowError):
                raise CodecError(f"bad character reference &{body};") from None
        else:
            if body not in _NAMED_ENTITIES:
                raise CodecError(f"unknown entity &{body};")
            out.append(_NAMED_ENTITIES[body])
        pos = m.end()


def escape_text(value: str) -> str:
    return "".join(_ESCAPE_CHARS.get(ch, ch) for ch in value)


def iter_markup(source: str) -> Iterator[MarkupEvent]:
    """Lex the stream into tag and text events with source byte ranges."""
    pos = 0
    byte_pos = 0
    while pos < len(source):
        lt = source.find("<", pos)
        if lt != 0 and lt != pos:
            chunk = source[pos:lt] if lt >= 0 else source[pos:]
            chunk_bytes = len(chunk.encode("utf-8"))
            yield MarkupEvent("text", start=byte_pos, end=byte_pos + chunk_bytes,
                              text=decode_entities(chunk))
            byte_pos += chunk_bytes
            if lt < 0:
                return
            pos = lt
        if source.startswith("<!--", pos):
            close = source.find("-->", pos + 4)
            if close < 0:
                raise CodecError("unterminated comment")
            consumed = source[pos:close + 3]
            byte_pos += len(consumed.encode("utf-8"))
            pos = close + 3
            continue
        m = _CLOSE_RE.match(source, pos)
        if m:
            end_byte = byte_pos + len(m.group(0).encode("utf-8"))
            yield MarkupEvent("close", name=m.group(1), start=byte_pos, end=end_byte)
            byte_pos = end_byte
            pos = m.end()
            continue
        m = _OPEN_RE.match(source, pos)
        if m:
            name, attr_blob, slash = m.groups()
            attrs = [
                (a.group(1), decode_entities(a.group(2)[1:-1], f"attribute {a.group(1)}"))
                for a in _ATTR_RE.finditer(attr_blob)
            ]
            seen = set()
            for key, _ in attrs:
                if key in seen:
                    raise CodecError(f"duplicate attribute {key!r} on <{name}>")
                seen.add(key)
            end_byte = byte_pos + len(m.group(0).encode("utf-8"))
            yield MarkupEvent("empty" if slash else "open", name=name,
                              attributes=attrs, start=byte_pos, end=end_byte)
            byte_pos = end_byte
            pos = m.end()
            continue
        raise CodecError(f"malformed markup at byte {byte_pos}: {source[pos:pos + 20]!r}")


AnnotationItem = tuple[str, list[Span], dict[str, str]]


def _milestone_parts(name: str) -> Optional[tuple[str, str]]:
    base, dot, suffix = name.rpartition(".")
    if dot and suffix in ("start", "end") and base:
        return base, suffix
    return None


def import_sgml(source: str) -> tuple[str, list[AnnotationItem]]:
    """Strip markup into (text, annotation items) in element-open order.

    Each element becomes one item (type = tag name, span = content extent,
    attributes in source order); milestone pairs become one item spanning
    between the pair. Adding the items in list order reproduces the
    element order through ascending ids.
    """
    text_parts: list[str] = []
    text_len = 0  # byte offset into the output text
    items: list[list] = []  # [type, start, end|None, attrs]
    stack: list[int] = []
    pending_milestones: dict[tuple[str, str], int] = {}

    for event in iter_markup(source):
        if event.kind == "text":
            text_parts.append(event.text)
            text_len += len(event.text.encode("utf-8"))
        elif event.kind == "open":
            items.append([event.name, text_len, None, dict(event.attributes)])
            stack.append(len(items) - 1)
        elif event.kind == "close":
            if not stack:
                raise CodecError(f"unbalanced close tag </{event.name}>")
            idx = stack.pop()
            if items[idx][0] != event.name:
                raise CodecError(
                    f"unbalanced tags: <{items[idx][0]}> closed by </{event.name}>"
                )
            items[idx][2] = text_len
        else:  # empty
            parts = _milestone_parts(event.name)
            attrs = dict(event.attributes)
            if parts and "id" in attrs:
                base, suffix = parts
                key = (base, attrs.pop("id"))
                if suffix == "start":
                    if key in pending_milestones:
                        raise CodecError(f"duplicate milestone start {key}")
                    items.append([base, text_len, None, attrs])
                    pending_milestones[key] = len(items) - 1
                else:
                    if key not in pending_milestones:
                        raise CodecError(f"milestone end without start: {key}")
                    items[pending_milestones.pop(key)][2] = text_len
            else:
                items.append([event.name, text_len, text_len, attrs])

    if stack:
        raise CodecError(f"unclosed tag <{items[stack[-1]][0]}>")
    if pending_milestones:
        key = sorted(pending_milestones)[0]
        raise CodecError(f"milestone start without matching end: {key}")

    text = "".join(text_parts)
    result: list[AnnotationItem] = [
        (ann_type, [Span(start, end)], attrs)
        for ann_type, start, end, attrs in items
    ]
    return text, result


def import_document(collection, doc_id: str, source: str, set_name: str = "original",
                    producer: str = "sgml-import", attributes=None) -> Document:
    """Import markup as a new document plus one annotation set."""
    text, items = import_sgml(source)
    doc = collection.add_document(doc_id, text, attributes)
    if items:
        doc.add_annotations(set_name, producer, items)
    return doc


# -- export ----------------------------------------------------------


class _Node:
    __slots__ = ("ann", "children")

    def __init__(self, ann: Optional[Annotation]):
        self.ann = ann
        self.children: list[_Node] = []


def _crossing(a: Annotation, b: Annotation) -> bool:
    return a.start < b.start < a.end < b.end


def export_sgml(document: Document, sets: Optional[Sequence[str]] = None) -> str:
    """Re-serialize the document with the selected sets as inline markup.

    Annotations nestable by containment become normal elements; each
    annotation that crosses another becomes a milestone pair carrying the
    annotation id. Unselected sets are simply absent from the output.
    """
    if sets is None:
        selected = list(document.sets.values())
    else:
        selected = []
        for name in sets:
            if name not in document.sets:
                raise CodecError(f"document {document.id!r} has no set {name!r}")
            selected.append(document.sets[name])

    annotations: list[Annotation] = []
    for aset in selected:
        for ann in aset.annotations:
            if len(ann.spans) != 1:
                raise CodecError(
                    f"annotation {ann.id} has {len(ann.spans)} spans; "
                    "export requires single-span annotations"
                )
            document.check_span(ann.spans[0])
            annotations.append(ann)
    annotations.sort(key=Annotation.sort_key)

    milestone_ids = set()
    for i, a in enumerate(annotations):
        for b in annotations[i + 1:]:
            if _crossing(a, b):
                # Later start loses; equal starts cannot cross, and the
                # canonical sort already puts the larger id later.
                milestone_ids.add(b.id)
            elif _crossing(b, a):
                milestone_ids.add(a.id)

    root = _Node(None)
    stack = [(root, Span(0, len(document.text_bytes)))]
    milestones = []
    for ann in annotations:
        if ann.id in milestone_ids:
            if "id" in ann.attributes:
                raise CodecError(
                    f"annotation {ann.id} needs milestone export but carries "
                    "a user attribute named 'id'"
                )
            milestones.append(ann)
            continue
        span = ann.spans[0]
        while len(stack) > 1 and not stack[-1][1].contains(span):
            stack.pop()
        node = _Node(ann)
        stack[-1][0].children.append(node)
        stack.append((node, span))

    tag_events: list[tuple[int, str]] = []

    def attr_text(ann: Annotation) -> str:
        return "".join(f' {k}="{escape_text(v)}"' for k, v in ann.attributes.items())

    def walk(node: _Node) -> None:
        ann = node.ann
        span = ann.spans[0]
        if span.length == 0 and not node.children:
            tag_events.append((span.start, f"<{ann.type}{attr_text(ann)}/>"))
            return
        tag_events.append((span.start, f"<{ann.type}{attr_text(ann)}>"))
        for child in node.children:
            walk(child)
        tag_events.append((span.end, f"</{ann.type}>"))

    for top in root.children:
        walk(top)

    mstart_at: dict[int, list[str]] = {}
    mend_at: dict[int, list[str]] = {}
    for ann in sorted(milestones, key=lambda a: a.id):
        span = ann.spans[0]
        mstart_at.setdefault(span.start, []).append(
            f'<{ann.type}.start id="{ann.id}"{attr_text(ann)}/>'
        )
        mend_at.setdefault(span.end, []).append(f'<{ann.type}.end id="{ann.id}"/>')

    data = document.text_bytes
    out = bytearray()
    wi = 0
    for pos in range(len(data) + 1):
        for tag in mend_at.get(pos, ()):
            out += tag.encode("utf-8")
        while wi < len(tag_events) and tag_events[wi][0] == pos:
            out += tag_events[wi][1].encode("utf-8")
            wi += 1
        for tag in mstart_at.get(pos, ()):
            out += tag.encode("utf-8")
        if pos < len(data):
            out += _ESCAPE_BYTES.get(data[pos], data[pos:pos + 1])
    return out.decode("utf-8")
