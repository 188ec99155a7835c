"""Streaming ingest of sharded JSONL paper corpora.

Records arrive one JSON object per line. Each holds a paper id, optional
title and abstract, field-of-study tags, and sectioned body text whose
citation spans point at the papers the text cites. Section text may come
pre-split into sentences (spans carry a sentence index and sentence-local
offsets) or as raw text (spans carry offsets into the section string and
are mapped onto sentences here). The exact accepted field names are listed
in the README mapping table.

Streaming is line-by-line, so memory tracks the largest single record, not
the corpus. The one cumulative structure is the set of seen paper ids kept
for duplicate detection, a few dozen bytes per record.
"""

from __future__ import annotations

import json
import re
from bisect import bisect_right
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator


class ValidationError(ValueError):
    """A record violated the corpus schema. `field_name` is the first bad field."""

    def __init__(self, field_name: str, message: str):
        super().__init__(f"{field_name}: {message}")
        self.field_name = field_name


@dataclass
class CiteSpan:
    """One citation marker inside one sentence, offsets local to the sentence."""

    sentence_index: int
    char_start: int
    char_end: int
    resolved_paper_id: str | None = None


@dataclass
class BodySection:
    section_name: str
    sentences: list[str]
    cite_spans: list[CiteSpan]


@dataclass
class PaperRecord:
    paper_id: str
    title: str = ""
    abstract: str = ""
    fields_of_study: list[str] = field(default_factory=list)
    body_sections: list[BodySection] = field(default_factory=list)


@dataclass(frozen=True)
class CorpusFilter:
    """Keep records whose fields_of_study intersects `fields_of_study`.

    Membership is exact and case-sensitive; an empty filter set keeps nothing.
    """

    fields_of_study: frozenset[str] = frozenset({"Computer Science"})

    def matches(self, record: PaperRecord) -> bool:
        return bool(self.fields_of_study.intersection(record.fields_of_study))


@dataclass
class IngestStats:
    files_read: int = 0
    lines_read: int = 0
    records_yielded: int = 0
    parse_errors: int = 0
    validation_errors: int = 0
    duplicate_ids: int = 0
    filtered_out: int = 0

    @property
    def skipped(self) -> int:
        return self.parse_errors + self.validation_errors + self.duplicate_ids


# A sentence ends at . ! or ? followed by whitespace and either an uppercase
# letter or a bracketed citation opener. Everything else stays inside the
# sentence, so abbreviations mid-clause survive unless the next word is
# capitalized.
_SENTENCE_BOUNDARY = re.compile(r"(?<=[.!?])\s+(?=[A-Z\[\(])")


def _split_with_offsets(text: str) -> list[tuple[str, int]]:
    """Split into sentences, keeping each sentence's offset into `text`."""
    pieces: list[tuple[str, int]] = []
    prev = 0
    for m in _SENTENCE_BOUNDARY.finditer(text):
        pieces.append((text[prev:m.start()], prev))
        prev = m.end()
    pieces.append((text[prev:], prev))

    out: list[tuple[str, int]] = []
    for raw, offset in pieces:
        stripped = raw.strip()
        if not stripped:
            continue
        lead = len(raw) - len(raw.lstrip())
        out.append((stripped, offset + lead))
    return out


def sentence_split(text: str) -> list[str]:
    """Deterministic sentence splitter.

    Joining the result recovers the input up to the whitespace that separated
    sentences. Empty input gives an empty list and no output sentence is
    empty.
    """
    return [sentence for sentence, _ in _split_with_offsets(text)]


def _require_str(raw: dict, key: str, *aliases: str, default: str | None = "") -> str | None:
    for k in (key, *aliases):
        if k in raw:
            value = raw[k]
            if not isinstance(value, str):
                raise ValidationError(key, f"expected a string, got {type(value).__name__}")
            return value
    return default


def _span_fields(raw_span: dict) -> tuple[int, int, str | None]:
    start = raw_span.get("char_start", raw_span.get("start"))
    end = raw_span.get("char_end", raw_span.get("end"))
    if not isinstance(start, int) or not isinstance(end, int):
        raise ValidationError("cite_spans", "span offsets must be integers")
    resolved = raw_span.get("resolved_paper_id", raw_span.get("ref_paper_id"))
    if resolved is not None and not isinstance(resolved, str):
        raise ValidationError("cite_spans", "resolved_paper_id must be a string or null")
    return start, end, resolved


def _section_from_sentences(raw_section: dict, name: str) -> BodySection:
    sentences = raw_section["sentences"]
    if not isinstance(sentences, list) or any(not isinstance(s, str) for s in sentences):
        raise ValidationError("sentences", "expected a list of strings")
    spans: list[CiteSpan] = []
    for raw_span in raw_section.get("cite_spans", []):
        idx = raw_span.get("sentence_index")
        if not isinstance(idx, int) or idx < 0 or idx >= len(sentences):
            raise ValidationError("cite_spans", f"sentence_index {idx!r} out of range")
        start, end, resolved = _span_fields(raw_span)
        if start < 0 or end <= start or end > len(sentences[idx]):
            raise ValidationError("cite_spans", f"span ({start}, {end}) out of range for sentence {idx}")
        spans.append(CiteSpan(idx, start, end, resolved))
    return BodySection(name, list(sentences), spans)


def _section_from_text(raw_section: dict, name: str) -> BodySection:
    text = raw_section["text"]
    if not isinstance(text, str):
        raise ValidationError("text", "expected a string")
    with_offsets = _split_with_offsets(text)
    sentences = [s for s, _ in with_offsets]
    starts = [off for _, off in with_offsets]
    spans: list[CiteSpan] = []
    for raw_span in raw_section.get("cite_spans", []):
        start, end, resolved = _span_fields(raw_span)
        if start < 0 or end <= start or end > len(text):
            raise ValidationError("cite_spans", f"span ({start}, {end}) out of range for section text")
        idx = bisect_right(starts, start) - 1
        if idx < 0:
            raise ValidationError("cite_spans", f"span ({start}, {end}) falls before the first sentence")
        local_start = start - starts[idx]
        local_end = end - starts[idx]
        if local_end > len(sentences[idx]):
            raise ValidationError("cite_spans", f"span ({start}, {end}) crosses a sentence boundary")
        spans.append(CiteSpan(idx, local_start, local_end, resolved))
    return BodySection(name, sentences, spans)


def validate_record(raw: dict) -> PaperRecord:
    """Parse one raw record dict into a PaperRecord, or raise ValidationError.

    The error names the first field that failed. Accepted aliases:
    paper_id/source_paper_id, abstract/source_abstract,
    fields_of_study/fieldsOfStudy, body_sections/body_text,
    section_name/section, char_start/start, char_end/end,
    resolved_paper_id/ref_paper_id.
    """
    if not isinstance(raw, dict):
        raise ValidationError("record", "expected a JSON object")

    paper_id = _require_str(raw, "paper_id", "source_paper_id", default=None)
    if not paper_id:
        raise ValidationError("paper_id", "missing or empty")

    title = _require_str(raw, "title")
    abstract = _require_str(raw, "abstract", "source_abstract")

    fos = raw.get("fields_of_study", raw.get("fieldsOfStudy", []))
    if not isinstance(fos, list) or any(not isinstance(f, str) for f in fos):
        raise ValidationError("fields_of_study", "expected a list of strings")

    raw_sections = raw.get("body_sections", raw.get("body_text", []))
    if not isinstance(raw_sections, list):
        raise ValidationError("body_sections", "expected a list of sections")

    sections: list[BodySection] = []
    for raw_section in raw_sections:
        if not isinstance(raw_section, dict):
            raise ValidationError("body_sections", "each section must be an object")
        name = _require_str(raw_section, "section_name", "section")
        if "sentences" in raw_section:
            sections.append(_section_from_sentences(raw_section, name))
        elif "text" in raw_section:
            sections.append(_section_from_text(raw_section, name))
        else:
            raise ValidationError("body_sections", "section needs either 'sentences' or 'text'")

    return PaperRecord(paper_id, title, abstract, list(fos), sections)


def corpus_files(path: str | Path) -> list[Path]:
    """Input files for a corpus path: one file, or a directory's sorted shards."""
    p = Path(path)
    if p.is_dir():
        shards = sorted(f for f in p.iterdir() if f.is_file() and f.suffix == ".jsonl")
        if not shards:
            raise FileNotFoundError(f"no .jsonl shards under {p}")
        return shards
    if not p.exists():
        raise FileNotFoundError(str(p))
    return [p]


def stream_corpus(
    path: str | Path,
    corpus_filter: CorpusFilter | None = None,
    stats: IngestStats | None = None,
) -> Iterator[PaperRecord]:
    """Stream matching PaperRecords from a JSONL file or a directory of shards.

    Shards in a directory are processed in lexicographic filename order.
    Malformed lines (bad JSON, schema violations, duplicate ids) are counted
    on `stats` and skipped; an unreadable path is fatal. Two passes over the
    same input yield identical record sequences.
    """
    if corpus_filter is None:
        corpus_filter = CorpusFilter()
    if stats is None:
        stats = IngestStats()

    seen_ids: set[str] = set()
    for shard in corpus_files(path):
        stats.files_read += 1
        with open(shard, "r", encoding="utf-8") as fh:
            for line in fh:
                if not line.strip():
                    continue
                stats.lines_read += 1
                try:
                    raw = json.loads(line)
                except json.JSONDecodeError:
                    stats.parse_errors += 1
                    continue
                try:
                    record = validate_record(raw)
                except ValidationError:
                    stats.validation_errors += 1
                    continue
                if record.paper_id in seen_ids:
                    stats.duplicate_ids += 1
                    continue
                seen_ids.add(record.paper_id)
                if not corpus_filter.matches(record):
                    stats.filtered_out += 1
                    continue
                stats.records_yielded += 1
                yield record
