"""On-disk collection layout.

    <dir>/collection.tsv   manifest: magic, attr/docattr/decl lines, LF endings
    <dir>/docs/<id>.txt    raw text bytes, no trailing newline added
    <dir>/ann/<id>.tsv     magic + set headers + annotation records

Document text files are never rewritten when byte-identical content is
already present, so the docs/ area may live on read-only media.
"""

from __future__ import annotations

from pathlib import Path

from .errors import ImmutabilityError, ProtocolError, StoreError
from .records import escape, format_record, parse_record, unescape
from .store import FREE, NAME_RE, Collection, Document, TypeDeclaration

COLLECTION_MAGIC = "GATE-COLLECTION 1"
ANN_MAGIC = "GATE-ANN 1"


def persist_collection(collection: Collection, directory: str | Path) -> None:
    """Write the collection to `directory` in the canonical layout."""
    root = Path(directory)
    root.mkdir(parents=True, exist_ok=True)
    docs_dir = root / "docs"
    ann_dir = root / "ann"
    ann_dir.mkdir(exist_ok=True)

    (root / "collection.tsv").write_bytes(_manifest_bytes(collection))

    for doc in collection.documents.values():
        _write_text(docs_dir, doc)
        (ann_dir / f"{doc.id}.tsv").write_bytes(_ann_bytes(doc))


def _manifest_bytes(collection: Collection) -> bytes:
    lines = [COLLECTION_MAGIC]
    for key in sorted(collection.attributes):
        lines.append(f"attr\t{escape(key)}\t{escape(collection.attributes[key])}")
    for doc_id in sorted(collection.documents):
        doc = collection.documents[doc_id]
        for key in sorted(doc.attributes):
            lines.append(f"docattr\t{doc_id}\t{escape(key)}\t{escape(doc.attributes[key])}")
    for type_name in sorted(collection.declarations):
        decl = collection.declarations[type_name]
        if not decl.attributes:
            lines.append(f"decl\t{type_name}")
        for attr, domain in decl.attributes:
            if domain == FREE:
                domain_text = "free"
            else:
                domain_text = "enum:" + "|".join(domain)
            lines.append(f"decl\t{type_name}\t{escape(attr)}\t{domain_text}")
    return ("\n".join(lines) + "\n").encode("utf-8")


def _write_text(docs_dir: Path, doc: Document) -> None:
    path = docs_dir / f"{doc.id}.txt"
    if path.exists():
        existing = path.read_bytes()
        if existing != doc.text_bytes:
            raise ImmutabilityError(
                f"{path} exists with different content; document text is immutable"
            )
        return
    docs_dir.mkdir(exist_ok=True)
    path.write_bytes(doc.text_bytes)


def _ann_bytes(doc: Document) -> bytes:
    lines = [f"{ANN_MAGIC} {doc.id}"]
    for set_name in sorted(doc.sets):
        aset = doc.sets[set_name]
        lines.append(f"set\t{aset.name}\t{aset.producer}\t{aset.produced_at}")
        for ann in sorted(aset.annotations, key=lambda a: a.id):
            lines.append(format_record(ann))
    return ("\n".join(lines) + "\n").encode("utf-8")


def open_collection(directory: str | Path, **kwargs) -> Collection:
    """Reconstruct a collection from `directory`; unknown files are ignored."""
    root = Path(directory)
    manifest = root / "collection.tsv"
    if not manifest.is_file():
        raise StoreError(f"missing manifest {manifest}")

    attributes, doc_attrs, declarations = _read_manifest(manifest)
    collection = Collection(root.name, attributes, **kwargs)
    collection.declarations = declarations

    docs_dir = root / "docs"
    if docs_dir.is_dir():
        for path in sorted(docs_dir.glob("*.txt")):
            doc_id = path.stem
            collection.add_document(doc_id, path.read_bytes(),
                                    doc_attrs.pop(doc_id, None))
    if doc_attrs:
        missing = ", ".join(sorted(doc_attrs))
        raise StoreError(f"{manifest}: docattr lines for unknown documents: {missing}")

    ann_dir = root / "ann"
    if ann_dir.is_dir():
        for path in sorted(ann_dir.glob("*.tsv")):
            _read_ann_file(path, collection)
    return collection


def _read_manifest(path: Path):
    lines = path.read_bytes().decode("utf-8").split("\n")
    if not lines or lines[0] != COLLECTION_MAGIC:
        raise StoreError(f"{path}:1: missing manifest magic {COLLECTION_MAGIC!r}")
    attributes: dict[str, str] = {}
    doc_attrs: dict[str, dict[str, str]] = {}
    declarations: dict[str, TypeDeclaration] = {}
    decl_fields: dict[str, list] = {}
    for lineno, line in enumerate(lines[1:], start=2):
        if not line:
            continue
        fields = line.split("\t")
        kind = fields[0]
        try:
            if kind == "attr" and len(fields) == 3:
                attributes[unescape(fields[1])] = unescape(fields[2])
            elif kind == "docattr" and len(fields) == 4:
                doc_attrs.setdefault(fields[1], {})[unescape(fields[2])] = unescape(fields[3])
            elif kind == "decl" and len(fields) == 2:
                decl_fields.setdefault(fields[1], [])
            elif kind == "decl" and len(fields) == 4:
                decl_fields.setdefault(fields[1], []).append(
                    (unescape(fields[2]), _parse_domain(fields[3]))
                )
            else:
                raise StoreError(f"{path}:{lineno}: malformed manifest line {line!r}")
        except ProtocolError as exc:
            raise StoreError(f"{path}:{lineno}: {exc}") from None
    for type_name, attrs in decl_fields.items():
        declarations[type_name] = TypeDeclaration(type_name, attrs)
    return attributes, doc_attrs, declarations


def _parse_domain(text: str):
    if text == "free":
        return FREE
    if text.startswith("enum:"):
        values = text[len("enum:"):].split("|")
        if not all(values):
            raise ProtocolError(f"bad enumeration {text!r}")
        return tuple(values)
    raise ProtocolError(f"bad attribute domain {text!r}")


def _read_ann_file(path: Path, collection: Collection) -> None:
    doc_id = path.stem
    if doc_id not in collection.documents:
        raise StoreError(f"{path}: annotations for unknown document {doc_id!r}")
    doc = collection.documents[doc_id]
    lines = path.read_bytes().decode("utf-8").split("\n")
    expected = f"{ANN_MAGIC} {doc_id}"
    if not lines or lines[0] != expected:
        raise StoreError(f"{path}:1: expected header {expected!r}")

    current = None
    max_id = 0
    seen_ids: set[int] = set()
    for lineno, line in enumerate(lines[1:], start=2):
        if not line:
            continue
        if line.startswith("set\t"):
            fields = line.split("\t")
            if len(fields) != 4:
                raise StoreError(f"{path}:{lineno}: malformed set header {line!r}")
            _, name, producer, produced_at = fields
            if name in doc.sets:
                raise StoreError(f"{path}:{lineno}: duplicate set {name!r}")
            doc.add_annotations(name, producer, [])
            doc.sets[name].produced_at = produced_at
            current = doc.sets[name]
        elif line.startswith("a\t"):
            if current is None:
                raise StoreError(f"{path}:{lineno}: record before any set header")
            try:
                ann = parse_record(line)
                if not NAME_RE.match(ann.type):
                    raise ProtocolError(f"invalid annotation type {ann.type!r}")
                for span in ann.spans:
                    doc.check_span(span)
            except (ProtocolError, StoreError) as exc:
                raise StoreError(f"{path}:{lineno}: {exc}") from None
            if ann.id in seen_ids:
                raise StoreError(f"{path}:{lineno}: duplicate annotation id {ann.id}")
            seen_ids.add(ann.id)
            max_id = max(max_id, ann.id)
            current.annotations.append(ann)
        else:
            raise StoreError(f"{path}:{lineno}: malformed line {line!r}")
    doc._next_id = max_id + 1
