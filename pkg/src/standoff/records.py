"""Annotation record serialization shared by the on-disk layout and the
external-tool protocol.

Record grammar (one LF-terminated line):
    a<TAB>id<TAB>type<TAB>start:end[,start:end]*[<TAB>k=v[;k=v]*]
Keys and values escape % TAB LF ; = as %25 %09 %0A %3B %3D.
"""

from __future__ import annotations

from typing import Mapping, Sequence

from .errors import ProtocolError
from .store import Annotation, Span

_ESCAPES = [("%", "%25"), ("\t", "%09"), ("\n", "%0A"), (";", "%3B"), ("=", "%3D")]
_UNESCAPES = {"%25": "%", "%09": "\t", "%0A": "\n", "%3B": ";", "%3D": "="}


def escape(value: str) -> str:
    for raw, coded in _ESCAPES:
        value = value.replace(raw, coded)
    return value


def unescape(value: str) -> str:
    out = []
    i = 0
    while i < len(value):
        if value[i] == "%":
            code = value[i:i + 3]
            if code not in _UNESCAPES:
                raise ProtocolError(f"bad escape {code!r}")
            out.append(_UNESCAPES[code])
            i += 3
        else:
            out.append(value[i])
            i += 1
    return "".join(out)


def format_spans(spans: Sequence[Span]) -> str:
    return ",".join(f"{s.start}:{s.end}" for s in spans)


def parse_spans(text: str) -> list[Span]:
    spans = []
    for part in text.split(","):
        start, sep, end = part.partition(":")
        if not sep:
            raise ProtocolError(f"bad span {part!r}")
        try:
            spans.append(Span(int(start), int(end)))
        except ValueError:
            raise ProtocolError(f"bad span {part!r}") from None
    return spans


def format_attributes(attributes: Mapping[str, str]) -> str:
    return ";".join(f"{escape(k)}={escape(v)}" for k, v in attributes.items())


def parse_attributes(text: str) -> dict[str, str]:
    attrs: dict[str, str] = {}
    if not text:
        return attrs
    for pair in text.split(";"):
        key, sep, value = pair.partition("=")
        if not sep:
            raise ProtocolError(f"bad attribute pair {pair!r}")
        attrs[unescape(key)] = unescape(value)
    return attrs


def format_record(ann: Annotation) -> str:
    fields = [
        "a",
        str(ann.id),
        ann.type,
        format_spans(ann.spans),
    ]
    if ann.attributes:
        fields.append(format_attributes(ann.attributes))
    return "\t".join(fields)


def parse_record(line: str) -> Annotation:
    fields = line.split("\t")
    if len(fields) not in (4, 5) or fields[0] != "a":
        raise ProtocolError(f"malformed annotation record {line!r}")
    try:
        ann_id = int(fields[1])
    except ValueError:
        raise ProtocolError(f"bad annotation id {fields[1]!r}") from None
    spans = parse_spans(fields[3])
    attrs = parse_attributes(fields[4]) if len(fields) == 5 else {}
    return Annotation(ann_id, fields[2], spans, attrs)
