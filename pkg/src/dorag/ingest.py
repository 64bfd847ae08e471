"""Document parsing and chunking.

Turns raw bytes (plain text, Markdown, or minimal HTML) into an ordered
list of typed parts, then into traceable chunks feeding both the vector
index and the graph extraction queue.

Normalization rules:
  * text and caption parts: every whitespace run collapses to one space;
  * table and code parts: newlines are preserved, trailing spaces are
    stripped per line.
Chunks never span parts, so the ordered chunk contents of a part with
overlaps removed reconstruct the normalized part text exactly.
"""

from __future__ import annotations

import hashlib
import html.parser
import re
import time
from dataclasses import dataclass, field
from enum import Enum

from .errors import EmptyDocument, InvalidPolicy, UndecodableInput


class PartKind(str, Enum):
    TEXT = "text"
    TABLE = "table"
    CODE = "code"
    IMAGE_CAPTION = "image_caption"


@dataclass
class Part:
    kind: PartKind
    content: str
    section_path: list[str] = field(default_factory=list)
    page: int | None = None


@dataclass
class SourceDocument:
    doc_id: str
    title: str
    modality_parts: list[Part]
    origin_uri: str = ""
    ingest_time: float = 0.0


@dataclass
class ChunkMetadata:
    section_path: list[str] = field(default_factory=list)
    page_range: tuple[int, int] | None = None
    layout_tags: frozenset[str] = frozenset()
    char_span: tuple[int, int] = (0, 0)

    def to_dict(self) -> dict:
        return {
            "section_path": list(self.section_path),
            "page_range": list(self.page_range) if self.page_range else None,
            "layout_tags": sorted(self.layout_tags),
            "char_span": list(self.char_span),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ChunkMetadata":
        return cls(
            section_path=list(d.get("section_path", [])),
            page_range=tuple(d["page_range"]) if d.get("page_range") else None,
            layout_tags=frozenset(d.get("layout_tags", [])),
            char_span=tuple(d.get("char_span", (0, 0))),
        )


@dataclass
class Chunk:
    chunk_id: str
    doc_id: str
    seq: int
    content: str
    metadata: ChunkMetadata

    def to_dict(self) -> dict:
        return {
            "chunk_id": self.chunk_id,
            "doc_id": self.doc_id,
            "seq": self.seq,
            "content": self.content,
            "metadata": self.metadata.to_dict(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Chunk":
        return cls(
            chunk_id=d["chunk_id"],
            doc_id=d["doc_id"],
            seq=d["seq"],
            content=d["content"],
            metadata=ChunkMetadata.from_dict(d.get("metadata", {})),
        )


@dataclass
class ChunkPolicy:
    target_chars: int = 1600
    overlap_chars: int = 200
    respect_boundaries: bool = True


_LAYOUT_FOR_KIND = {
    PartKind.TEXT: "paragraph",
    PartKind.TABLE: "table",
    PartKind.CODE: "code",
    PartKind.IMAGE_CAPTION: "caption",
}

_WS_RUN = re.compile(r"\s+")
_HEADING_RE = re.compile(r"^(#{1,6})\s+(.*\S)\s*$")
_IMAGE_RE = re.compile(r"^!\[([^\]]*)\]\([^)]*\)\s*$")


def normalize_text(text: str) -> str:
    """Collapse all whitespace runs to single spaces and strip ends."""
    return _WS_RUN.sub(" ", text).strip()


def normalize_block(text: str) -> str:
    """Keep line structure; strip trailing spaces per line and outer blanks."""
    lines = [ln.rstrip() for ln in text.replace("\r\n", "\n").split("\n")]
    while lines and not lines[0]:
        lines.pop(0)
    while lines and not lines[-1]:
        lines.pop()
    return "\n".join(lines)


def content_hash(*pieces: object) -> str:
    h = hashlib.sha256()
    for piece in pieces:
        h.update(str(piece).encode("utf-8"))
        h.update(b"\x00")
    return h.hexdigest()[:16]


# --------------------------------------------------------------------------
# Parsing
# --------------------------------------------------------------------------

def _decode(raw: bytes) -> str:
    try:
        return raw.decode("utf-8")
    except UnicodeDecodeError as exc:
        raise UndecodableInput(str(exc)) from exc


def _parse_markdown(text: str) -> tuple[str, list[Part]]:
    """Line-oriented Markdown: ATX headings, fenced code, pipe tables,
    standalone images, paragraphs. Form feeds advance the page counter."""
    parts: list[Part] = []
    section: dict[int, str] = {}
    title = ""
    page: int | None = None

    def current_path() -> list[str]:
        return [section[lvl] for lvl in sorted(section) if lvl in section]

    lines = text.replace("\r\n", "\n").split("\n")
    i = 0
    para_buf: list[str] = []

    def flush_para() -> None:
        nonlocal para_buf
        if para_buf:
            content = normalize_text(" ".join(para_buf))
            if content:
                parts.append(Part(PartKind.TEXT, content, current_path(), page))
            para_buf = []

    while i < len(lines):
        line = lines[i]
        if "\x0c" in line:
            page = (page or 1) + line.count("\x0c")
            line = line.replace("\x0c", "")
        heading = _HEADING_RE.match(line)
        if heading:
            flush_para()
            level = len(heading.group(1))
            name = heading.group(2).strip()
            if level == 1 and not title:
                title = name
            section[level] = name
            for lvl in [lvl for lvl in section if lvl > level]:
                del section[lvl]
            i += 1
            continue
        if line.strip().startswith("```"):
            flush_para()
            i += 1
            code_lines: list[str] = []
            while i < len(lines) and not lines[i].strip().startswith("```"):
                code_lines.append(lines[i])
                i += 1
            i += 1  # closing fence
            content = normalize_block("\n".join(code_lines))
            if content:
                parts.append(Part(PartKind.CODE, content, current_path(), page))
            continue
        if line.lstrip().startswith("|"):
            flush_para()
            table_lines: list[str] = []
            while i < len(lines) and lines[i].lstrip().startswith("|"):
                table_lines.append(lines[i])
                i += 1
            content = normalize_block("\n".join(table_lines))
            if content:
                parts.append(Part(PartKind.TABLE, content, current_path(), page))
            continue
        image = _IMAGE_RE.match(line.strip())
        if image:
            flush_para()
            caption = normalize_text(image.group(1))
            if caption:
                parts.append(Part(PartKind.IMAGE_CAPTION, caption, current_path(), page))
            i += 1
            continue
        if not line.strip():
            flush_para()
            i += 1
            continue
        para_buf.append(line)
        i += 1
    flush_para()
    return title, parts


def _parse_plain(text: str) -> tuple[str, list[Part]]:
    parts: list[Part] = []
    page: int | None = None
    for block in re.split(r"\n\s*\n", text.replace("\r\n", "\n")):
        if "\x0c" in block:
            page = (page or 1) + block.count("\x0c")
            block = block.replace("\x0c", "")
        content = normalize_text(block)
        if content:
            parts.append(Part(PartKind.TEXT, content, [], page))
    return "", parts


class _MinimalHtmlParser(html.parser.HTMLParser):
    """Handles h1-h6, p, table, pre, li, img alt."""

    def __init__(self) -> None:
        super().__init__(convert_charrefs=True)
        self.parts: list[Part] = []
        self.title = ""
        self._section: dict[int, str] = {}
        self._buf: list[str] = []
        self._mode: str | None = None  # heading level, "p", "pre", "table", "li"

    def _path(self) -> list[str]:
        return [self._section[lvl] for lvl in sorted(self._section)]

    def handle_starttag(self, tag: str, attrs: list) -> None:
        if tag in {"h1", "h2", "h3", "h4", "h5", "h6"}:
            self._mode = tag
            self._buf = []
        elif tag in {"p", "li"}:
            self._mode = "p"
            self._buf = []
        elif tag == "pre":
            self._mode = "pre"
            self._buf = []
        elif tag == "table":
            self._mode = "table"
            self._buf = []
        elif tag in {"td", "th"} and self._mode == "table":
            self._buf.append(" | ")
        elif tag == "tr" and self._mode == "table":
            self._buf.append("\n")
        elif tag == "img":
            alt = dict(attrs).get("alt", "")
            caption = normalize_text(alt or "")
            if caption:
                self.parts.append(Part(PartKind.IMAGE_CAPTION, caption, self._path()))

    def handle_endtag(self, tag: str) -> None:
        if tag in {"h1", "h2", "h3", "h4", "h5", "h6"} and self._mode == tag:
            level = int(tag[1])
            name = normalize_text("".join(self._buf))
            if name:
                if level == 1 and not self.title:
                    self.title = name
                self._section[level] = name
                for lvl in [lvl for lvl in self._section if lvl > level]:
                    del self._section[lvl]
            self._mode, self._buf = None, []
        elif tag in {"p", "li"} and self._mode == "p":
            content = normalize_text("".join(self._buf))
            if content:
                self.parts.append(Part(PartKind.TEXT, content, self._path()))
            self._mode, self._buf = None, []
        elif tag == "pre" and self._mode == "pre":
            content = normalize_block("".join(self._buf))
            if content:
                self.parts.append(Part(PartKind.CODE, content, self._path()))
            self._mode, self._buf = None, []
        elif tag == "table" and self._mode == "table":
            content = normalize_block("".join(self._buf))
            if content:
                self.parts.append(Part(PartKind.TABLE, content, self._path()))
            self._mode, self._buf = None, []

    def handle_data(self, data: str) -> None:
        if self._mode is not None:
            self._buf.append(data)


def parse_document(raw: bytes, format_hint: str = "markdown",
                   origin_uri: str = "", doc_id: str | None = None) -> SourceDocument:
    """Parse raw bytes into ordered typed parts.

    Raises:
        UndecodableInput: bytes are not valid UTF-8.
        EmptyDocument: nothing extractable.
    """
    text = _decode(raw)
    if format_hint == "markdown":
        title, parts = _parse_markdown(text)
    elif format_hint == "plain":
        title, parts = _parse_plain(text)
    elif format_hint == "html":
        parser = _MinimalHtmlParser()
        parser.feed(text)
        parser.close()
        title, parts = parser.title, parser.parts
    else:
        raise ValueError(f"unknown format hint: {format_hint}")
    if not parts:
        raise EmptyDocument("no extractable content")
    return SourceDocument(
        doc_id=doc_id or content_hash("doc", raw),
        title=title,
        modality_parts=parts,
        origin_uri=origin_uri,
        ingest_time=time.time(),
    )


# --------------------------------------------------------------------------
# Chunking
# --------------------------------------------------------------------------

def _split_windows(text: str, target: int, overlap: int) -> list[tuple[int, int]]:
    """Sliding windows [i, i+target) stepping by target-overlap; adjacent
    windows share exactly `overlap` chars; final window ends at len(text)."""
    if len(text) <= target:
        return [(0, len(text))]
    step = target - overlap
    spans: list[tuple[int, int]] = []
    start = 0
    while True:
        end = min(start + target, len(text))
        spans.append((start, end))
        if end >= len(text):
            break
        start += step
    return spans


def chunk_document(doc: SourceDocument, policy: ChunkPolicy | None = None) -> list[Chunk]:
    """Split parts into chunks under the policy.

    Table and code parts stay whole when respect_boundaries is true, except
    when a single part would exceed 2*target_chars (the hard ceiling wins).

    Raises:
        InvalidPolicy: overlap >= target or negative overlap.
    """
    policy = policy or ChunkPolicy()
    if policy.overlap_chars < 0 or policy.target_chars <= policy.overlap_chars:
        raise InvalidPolicy(
            f"need target_chars > overlap_chars >= 0, got "
            f"{policy.target_chars}/{policy.overlap_chars}"
        )
    chunks: list[Chunk] = []
    seq = 0
    for part in doc.modality_parts:
        text = part.content
        if not text:
            continue
        boundary_kind = part.kind in (PartKind.TABLE, PartKind.CODE)
        keep_whole = (
            policy.respect_boundaries
            and boundary_kind
            and len(text) <= 2 * policy.target_chars
        )
        spans = [(0, len(text))] if keep_whole else _split_windows(
            text, policy.target_chars, policy.overlap_chars
        )
        page_range = (part.page, part.page) if part.page is not None else None
        for start, end in spans:
            content = text[start:end]
            metadata = ChunkMetadata(
                section_path=list(part.section_path),
                page_range=page_range,
                layout_tags=frozenset({_LAYOUT_FOR_KIND[part.kind]}),
                char_span=(start, end),
            )
            chunks.append(Chunk(
                chunk_id=content_hash(doc.doc_id, seq, content),
                doc_id=doc.doc_id,
                seq=seq,
                content=content,
                metadata=metadata,
            ))
            seq += 1
    return chunks


def reconstruct_parts(chunks: list[Chunk], overlap: int) -> list[str]:
    """Rebuild normalized part texts from ordered chunks (testing aid).

    A new part starts whenever a chunk's char_span begins at 0.
    """
    texts: list[str] = []
    current = ""
    for chunk in sorted(chunks, key=lambda c: c.seq):
        if chunk.metadata.char_span[0] == 0:
            if current:
                texts.append(current)
            current = chunk.content
        else:
            current += chunk.content[overlap:]
    if current:
        texts.append(current)
    return texts
