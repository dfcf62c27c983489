"""Central repository for documents, collections, and stand-off annotations.

All inter-component data flows through this store: documents hold immutable
text, analysis results live in provenance-stamped annotation sets keyed by
byte-offset spans, and writers take exclusive per-(document, set) locks.
"""

from __future__ import annotations

import re
import threading
import time
from dataclasses import dataclass, field
from datetime import datetime, timezone
from typing import Callable, Iterable, Mapping, Optional, Sequence

from .errors import LockConflictError, SpanError, StoreError

NAME_RE = re.compile(r"[A-Za-z0-9._-]+\Z")

DEFAULT_LOCK_TIMEOUT = 10.0

FREE = "free"


def rfc3339_now() -> str:
    return datetime.now(timezone.utc).strftime("%Y-%m-%dT%H:%M:%SZ")


@dataclass(frozen=True, order=True)
class Span:
    """Half-open byte interval [start, end) into a document's UTF-8 text."""

    start: int
    end: int

    def __post_init__(self):
        if self.start < 0 or self.end < self.start:
            raise SpanError(f"invalid span [{self.start},{self.end})")

    @property
    def length(self) -> int:
        return self.end - self.start

    def overlaps(self, other: "Span") -> bool:
        return self.start < other.end and other.start < self.end

    def contains(self, other: "Span") -> bool:
        return self.start <= other.start and other.end <= self.end


@dataclass
class Annotation:
    """A typed, attributed region of text: id + spans + attribute map."""

    id: int
    type: str
    spans: list[Span]
    attributes: dict[str, str] = field(default_factory=dict)

    @property
    def start(self) -> int:
        return self.spans[0].start

    @property
    def end(self) -> int:
        return self.spans[-1].end

    def sort_key(self) -> tuple[int, int, int]:
        # Canonical document order: start ascending, longer (outer) first,
        # then id ascending so equal spans order outer-before-inner.
        return (self.start, -self.end, self.id)


@dataclass
class AnnotationSet:
    """Named annotation group with recorded provenance."""

    name: str
    producer: str
    produced_at: str
    annotations: list[Annotation] = field(default_factory=list)

    def by_id(self, ann_id: int) -> Optional[Annotation]:
        for a in self.annotations:
            if a.id == ann_id:
                return a
        return None


@dataclass
class TypeDeclaration:
    """Schema for one annotation type: which attributes it may carry."""

    type: str
    attributes: list[tuple[str, object]] = field(default_factory=list)

    def __post_init__(self):
        if not NAME_RE.match(self.type):
            raise StoreError(f"invalid type name {self.type!r}")
        seen = set()
        for name, domain in self.attributes:
            if name in seen:
                raise StoreError(f"duplicate attribute {name!r} in declaration for {self.type!r}")
            seen.add(name)
            if domain != FREE:
                values = tuple(domain)
                if not values:
                    raise StoreError(f"empty enumeration for attribute {name!r}")
                for v in values:
                    if "|" in v or "\t" in v or "\n" in v:
                        raise StoreError(f"enum value {v!r} contains a reserved character")

    def domain_of(self, attr: str):
        for name, domain in self.attributes:
            if name == attr:
                return domain
        return None

    def validate(self, attributes: Mapping[str, str]) -> None:
        for key, value in attributes.items():
            domain = self.domain_of(key)
            if domain is None:
                raise StoreError(f"attribute {key!r} not declared for type {self.type!r}")
            if domain != FREE and value not in tuple(domain):
                raise StoreError(
                    f"value {value!r} outside enumeration for {self.type}.{key}"
                )


class LockTable:
    """Per-(document, set) write exclusivity with bounded waits.

    Readers never take locks. A writer that cannot acquire within the
    timeout gets a LockConflictError instead of blocking indefinitely.
    Acquisition is reentrant per owner.
    """

    def __init__(self, timeout: float = DEFAULT_LOCK_TIMEOUT):
        self.timeout = timeout
        self._cond = threading.Condition()
        self._held: dict[tuple[str, str], tuple[str, int]] = {}

    def acquire(self, document_id: str, set_name: str, owner: str,
                timeout: Optional[float] = None) -> None:
        if not owner:
            raise StoreError("lock owner must be non-empty")
        key = (document_id, set_name)
        limit = self.timeout if timeout is None else timeout
        deadline = time.monotonic() + limit
        with self._cond:
            while True:
                held = self._held.get(key)
                if held is None:
                    self._held[key] = (owner, 1)
                    return
                if held[0] == owner:
                    self._held[key] = (owner, held[1] + 1)
                    return
                remaining = deadline - time.monotonic()
                if remaining <= 0:
                    raise LockConflictError(
                        f"set {set_name!r} of document {document_id!r} is "
                        f"write-locked by {held[0]!r}"
                    )
                self._cond.wait(timeout=remaining)

    def release(self, document_id: str, set_name: str, owner: str) -> None:
        key = (document_id, set_name)
        with self._cond:
            held = self._held.get(key)
            if held is None or held[0] != owner:
                raise StoreError(f"lock on {key} not held by {owner!r}")
            if held[1] > 1:
                self._held[key] = (owner, held[1] - 1)
            else:
                del self._held[key]
                self._cond.notify_all()

    def holding(self, document_id: str, set_name: str, owner: str,
                timeout: Optional[float] = None):
        return _LockGuard(self, document_id, set_name, owner, timeout)


class _LockGuard:
    def __init__(self, table, document_id, set_name, owner, timeout):
        self._args = (document_id, set_name, owner)
        self._table = table
        self._timeout = timeout

    def __enter__(self):
        self._table.acquire(*self._args, timeout=self._timeout)
        return self

    def __exit__(self, *exc):
        self._table.release(*self._args)
        return False


class Document:
    """Immutable text plus its annotation sets.

    Offsets everywhere are byte offsets into the UTF-8 encoding of the
    text; operations reject spans that split a multi-byte character.
    """

    def __init__(self, doc_id: str, text: str | bytes, attributes: Optional[Mapping[str, str]] = None,
                 collection: Optional["Collection"] = None):
        if not NAME_RE.match(doc_id):
            raise StoreError(f"invalid document id {doc_id!r}")
        if isinstance(text, bytes):
            try:
                text = text.decode("utf-8")
            except UnicodeDecodeError as exc:
                raise StoreError(f"document {doc_id!r}: text not valid UTF-8: {exc}") from None
        self.id = doc_id
        self._text = text
        self._bytes = text.encode("utf-8")
        self.attributes: dict[str, str] = dict(attributes or {})
        self.sets: dict[str, AnnotationSet] = {}
        self.collection = collection
        self._next_id = 1
        self._locks = collection.locks if collection is not None else LockTable()

    @property
    def text(self) -> str:
        return self._text

    @property
    def text_bytes(self) -> bytes:
        return self._bytes

    def __len__(self) -> int:
        return len(self._bytes)

    def __eq__(self, other) -> bool:
        if not isinstance(other, Document):
            return NotImplemented
        return (self.id == other.id and self._text == other._text
                and self.attributes == other.attributes and self.sets == other.sets)

    # -- span validity ------------------------------------------------

    def check_span(self, span: Span) -> None:
        if span.end > len(self._bytes):
            raise SpanError(
                f"span [{span.start},{span.end}) out of range for document "
                f"{self.id!r} of length {len(self._bytes)}"
            )
        for offset in (span.start, span.end):
            if not self._is_char_boundary(offset):
                raise SpanError(f"offset {offset} splits a multi-byte character")

    def _is_char_boundary(self, offset: int) -> bool:
        if offset == 0 or offset == len(self._bytes):
            return True
        # UTF-8 continuation bytes are 0b10xxxxxx.
        return (self._bytes[offset] & 0xC0) != 0x80

    def get_text(self, span: Span) -> str:
        self.check_span(span)
        return self._bytes[span.start:span.end].decode("utf-8")

    # -- annotation writes --------------------------------------------

    def add_annotations(self, set_name: str, producer: str,
                        items: Sequence[tuple[str, Sequence[Span], Mapping[str, str]]],
                        timeout: Optional[float] = None) -> list[int]:
        """Validate and store a batch atomically, returning assigned ids."""
        self._check_set_name(set_name, producer)
        validated = [self._validated(t, spans, attrs) for t, spans, attrs in items]
        with self._locks.holding(self.id, set_name, producer, timeout):
            aset = self._ensure_set(set_name, producer)
            ids = []
            for ann_type, spans, attrs in validated:
                ann = Annotation(self._next_id, ann_type, spans, attrs)
                self._next_id += 1
                aset.annotations.append(ann)
                ids.append(ann.id)
            return ids

    def merge_annotations(self, set_name: str, producer: str,
                          items: Sequence[tuple[str, Sequence[Span], Mapping[str, str]]],
                          timeout: Optional[float] = None) -> list[int]:
        """Merge a batch, replacing same-(type, spans) annotations in the set.

        Replaced annotations lose their ids permanently (ids are never
        reused); incoming items always get fresh ids. An empty batch is a
        no-op and does not create the set.
        """
        self._check_set_name(set_name, producer)
        validated = [self._validated(t, spans, attrs) for t, spans, attrs in items]
        if not validated:
            return []
        with self._locks.holding(self.id, set_name, producer, timeout):
            aset = self._ensure_set(set_name, producer)
            ids = []
            for ann_type, spans, attrs in validated:
                key = (ann_type, tuple(spans))
                aset.annotations = [
                    a for a in aset.annotations if (a.type, tuple(a.spans)) != key
                ]
                ann = Annotation(self._next_id, ann_type, spans, attrs)
                self._next_id += 1
                aset.annotations.append(ann)
                ids.append(ann.id)
            return ids

    def delete_set(self, set_name: str, owner: str = "store",
                   timeout: Optional[float] = None) -> int:
        if set_name not in self.sets:
            raise StoreError(f"document {self.id!r} has no set {set_name!r}")
        with self._locks.holding(self.id, set_name, owner, timeout):
            removed = len(self.sets[set_name].annotations)
            del self.sets[set_name]
            return removed

    def _check_set_name(self, set_name: str, producer: str) -> None:
        if not set_name or "\t" in set_name or "\n" in set_name:
            raise StoreError(f"invalid set name {set_name!r}")
        if not producer or "\t" in producer or "\n" in producer:
            raise StoreError(f"invalid producer {producer!r}")

    def _ensure_set(self, set_name: str, producer: str) -> AnnotationSet:
        aset = self.sets.get(set_name)
        if aset is None:
            clock = self.collection.clock if self.collection is not None else rfc3339_now
            aset = AnnotationSet(set_name, producer, clock())
            self.sets[set_name] = aset
        return aset

    def _validated(self, ann_type, spans, attrs):
        if not NAME_RE.match(ann_type or ""):
            raise StoreError(f"invalid annotation type {ann_type!r}")
        spans = [s if isinstance(s, Span) else Span(*s) for s in spans]
        if not spans:
            raise StoreError("annotation must have at least one span")
        for span in spans:
            self.check_span(span)
        for prev, cur in zip(spans, spans[1:]):
            if cur.start < prev.end:
                raise StoreError("annotation spans must be sorted and non-overlapping")
        attrs = dict(attrs or {})
        decl = None
        if self.collection is not None:
            decl = self.collection.declarations.get(ann_type)
        if decl is not None:
            decl.validate(attrs)
        return ann_type, spans, attrs

    # -- reads ---------------------------------------------------------

    def select_annotations(self, set: Optional[str] = None, type: Optional[str] = None,
                           overlaps: Optional[Span] = None,
                           contained_in: Optional[Span] = None,
                           producer: Optional[str] = None) -> list[Annotation]:
        """Conjunctive filter over every stored annotation, in canonical order."""
        for span in (overlaps, contained_in):
            if span is not None:
                self.check_span(span)
        result = []
        for aset in self.sets.values():
            if set is not None and aset.name != set:
                continue
            if producer is not None and aset.producer != producer:
                continue
            for ann in aset.annotations:
                if type is not None and ann.type != type:
                    continue
                if overlaps is not None and not any(s.overlaps(overlaps) for s in ann.spans):
                    continue
                if contained_in is not None and not all(contained_in.contains(s) for s in ann.spans):
                    continue
                result.append(ann)
        result.sort(key=Annotation.sort_key)
        return result

    def set_of(self, ann: Annotation) -> Optional[str]:
        for aset in self.sets.values():
            if ann in aset.annotations:
                return aset.name
        return None

    def capability_labels(self) -> set[str]:
        """Labels satisfied by the current contents: types and type:attr."""
        labels: set[str] = set()
        for aset in self.sets.values():
            for ann in aset.annotations:
                labels.add(ann.type)
                for key in ann.attributes:
                    labels.add(f"{ann.type}:{key}")
        return labels


class Collection:
    """Documents grouped with shared type declarations and attributes."""

    def __init__(self, collection_id: str, attributes: Optional[Mapping[str, str]] = None,
                 clock: Callable[[], str] = rfc3339_now,
                 lock_timeout: float = DEFAULT_LOCK_TIMEOUT):
        if not collection_id:
            raise StoreError("collection id must be non-empty")
        if not NAME_RE.match(collection_id):
            raise StoreError(f"invalid collection id {collection_id!r}")
        self.id = collection_id
        self.attributes: dict[str, str] = dict(attributes or {})
        self.documents: dict[str, Document] = {}
        self.declarations: dict[str, TypeDeclaration] = {}
        self.clock = clock
        self.locks = LockTable(lock_timeout)

    def __eq__(self, other) -> bool:
        if not isinstance(other, Collection):
            return NotImplemented
        return (self.id == other.id and self.attributes == other.attributes
                and self.declarations == other.declarations
                and self.documents == other.documents)

    def add_document(self, doc_id: str, text: str | bytes,
                     attributes: Optional[Mapping[str, str]] = None) -> Document:
        if doc_id in self.documents:
            raise StoreError(f"duplicate document id {doc_id!r}")
        doc = Document(doc_id, text, attributes, collection=self)
        self.documents[doc_id] = doc
        return doc

    def document(self, doc_id: str) -> Document:
        try:
            return self.documents[doc_id]
        except KeyError:
            raise StoreError(f"collection {self.id!r} has no document {doc_id!r}") from None

    def declare_type(self, declaration: TypeDeclaration) -> None:
        # Redeclaration replaces; validation applies only to later writes.
        self.declarations[declaration.type] = declaration


def create_collection(collection_id: str, attributes: Optional[Mapping[str, str]] = None,
                      root=None, **kwargs) -> Collection:
    """Create an empty collection; with `root`, also claim `<root>/<id>` on disk."""
    collection = Collection(collection_id, attributes, **kwargs)
    if root is not None:
        from pathlib import Path

        target = Path(root) / collection_id
        if target.exists():
            raise StoreError(f"collection {collection_id!r} already exists at {target}")
        from .persist import persist_collection

        persist_collection(collection, target)
    return collection
