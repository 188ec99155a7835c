"""Ingest of (head | relation | tail) triplets and attachment to samples.

Triplet files are JSONL: one block per line with a paper id, a section name
(abstract, introduction, or conclusion), and the triplets extracted from
that section. Blocks for the same (paper, section) pair merge with exact
dedup after whitespace normalization. Relation labels are free-form unless
a validation vocabulary is supplied, in which case unknown labels are only
counted, never altered.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping

from .dataset import CitationSample
from .jsonl import dump_row, iter_jsonl

SECTIONS = ("abstract", "introduction", "conclusion")

# Entity-relation label set commonly used for scientific IE; optional check.
SCIERC_RELATIONS = frozenset(
    {"Used-For", "Part-Of", "Feature-Of", "Compare", "Conjunction", "Evaluate-For", "Hyponym-Of"}
)


def normalize_phrase(text: str) -> str:
    """Trim and collapse internal whitespace runs; case is preserved."""
    return " ".join(text.split())


@dataclass(frozen=True)
class KGTriplet:
    head: str
    relation: str
    tail: str
    head_type: str | None = None
    tail_type: str | None = None


@dataclass
class TripletSet:
    paper_id: str
    section: str
    triplets: list[KGTriplet] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.triplets)


@dataclass
class KgIngestStats:
    lines_read: int = 0
    blocks_loaded: int = 0
    blocks_merged: int = 0
    malformed_lines: int = 0
    invalid_triplets: int = 0
    duplicate_triplets: int = 0
    unknown_relations: int = 0


@dataclass
class TripletStore:
    by_paper: dict[str, list[TripletSet]] = field(default_factory=dict)
    stats: KgIngestStats = field(default_factory=KgIngestStats)

    def get(self, paper_id: str, section: str) -> TripletSet | None:
        for tset in self.by_paper.get(paper_id, []):
            if tset.section == section:
                return tset
        return None

    def __contains__(self, paper_id: str) -> bool:
        return paper_id in self.by_paper


def _parse_triplet(raw: dict, vocabulary: frozenset[str] | None, stats: KgIngestStats) -> KGTriplet | None:
    head = normalize_phrase(str(raw.get("head", "")))
    relation = normalize_phrase(str(raw.get("relation", "")))
    tail = normalize_phrase(str(raw.get("tail", "")))
    if not head or not relation or not tail or head == tail:
        stats.invalid_triplets += 1
        return None
    if vocabulary is not None and relation not in vocabulary:
        stats.unknown_relations += 1
    head_type = raw.get("head_type")
    tail_type = raw.get("tail_type")
    return KGTriplet(
        head,
        relation,
        tail,
        normalize_phrase(head_type) if isinstance(head_type, str) else None,
        normalize_phrase(tail_type) if isinstance(tail_type, str) else None,
    )


def load_triplets(path: str | Path, vocabulary: frozenset[str] | None = None) -> TripletStore:
    """Load a triplet JSONL file into a TripletStore.

    Malformed lines and invalid triplets (empty field, head == tail after
    normalization, unknown section) are counted and skipped. Duplicate
    (paper, section) blocks merge, deduping identical triplets and keeping
    first-seen order.
    """
    store = TripletStore()
    stats = store.stats
    for lineno, line in iter_jsonl(path):
        stats.lines_read += 1
        try:
            raw = json.loads(line)
        except json.JSONDecodeError:
            stats.malformed_lines += 1
            continue
        if not isinstance(raw, dict):
            stats.malformed_lines += 1
            continue
        paper_id = raw.get("paper_id")
        section = raw.get("section")
        raw_triplets = raw.get("triplets")
        if not isinstance(paper_id, str) or not paper_id or section not in SECTIONS or not isinstance(raw_triplets, list):
            stats.malformed_lines += 1
            continue

        existing = None
        for tset in store.by_paper.setdefault(paper_id, []):
            if tset.section == section:
                existing = tset
                break
        if existing is None:
            existing = TripletSet(paper_id, section)
            store.by_paper[paper_id].append(existing)
            stats.blocks_loaded += 1
        else:
            stats.blocks_merged += 1

        seen = {(t.head, t.relation, t.tail) for t in existing.triplets}
        for raw_triplet in raw_triplets:
            if not isinstance(raw_triplet, dict):
                stats.invalid_triplets += 1
                continue
            triplet = _parse_triplet(raw_triplet, vocabulary, stats)
            if triplet is None:
                continue
            key = (triplet.head, triplet.relation, triplet.tail)
            if key in seen:
                stats.duplicate_triplets += 1
                continue
            seen.add(key)
            existing.triplets.append(triplet)
    return store


@dataclass
class TargetTriplets:
    """Per-section triplet sets for one cited paper; None means no block."""

    paper_id: str
    abstract: TripletSet | None = None
    introduction: TripletSet | None = None
    conclusion: TripletSet | None = None

    def has_any(self) -> bool:
        return any(ts and len(ts) for ts in (self.abstract, self.introduction, self.conclusion))


@dataclass
class EnrichedSample:
    sample: CitationSample
    source_triplets: TripletSet
    target_triplets: list[TargetTriplets]
    missing_target_triplets: bool = False


@dataclass
class AttachStats:
    samples_enriched: int = 0
    samples_without_target_triplets: int = 0
    orphan_papers: int = 0


def attach_triplets(
    samples: list[CitationSample],
    store: TripletStore,
    stats: AttachStats | None = None,
) -> list[EnrichedSample]:
    """Join triplets onto samples without changing sample count or order.

    The source paper contributes its abstract-section triplets; each target
    contributes abstract, introduction, and conclusion sections. Samples
    whose targets have no triplets at all are flagged, not dropped. Papers
    in the store never referenced by any sample count as orphans.
    """
    if stats is None:
        stats = AttachStats()

    referenced: set[str] = set()
    enriched: list[EnrichedSample] = []
    for sample in samples:
        referenced.add(sample.source_paper_id)
        source_set = store.get(sample.source_paper_id, "abstract")
        if source_set is None:
            source_set = TripletSet(sample.source_paper_id, "abstract")

        per_target: list[TargetTriplets] = []
        for target in sample.targets:
            referenced.add(target.paper_id)
            per_target.append(
                TargetTriplets(
                    paper_id=target.paper_id,
                    abstract=store.get(target.paper_id, "abstract"),
                    introduction=store.get(target.paper_id, "introduction"),
                    conclusion=store.get(target.paper_id, "conclusion"),
                )
            )

        missing = not any(t.has_any() for t in per_target)
        if missing:
            stats.samples_without_target_triplets += 1
        enriched.append(EnrichedSample(sample, source_set, per_target, missing))
        stats.samples_enriched += 1

    stats.orphan_papers = sum(1 for pid in store.by_paper if pid not in referenced)
    return enriched


def render_triplets(tset: TripletSet | None, budget: int | None = None) -> str:
    """Render as "(head | relation | tail)" joined by "; ".

    A budget keeps only the first `budget` triplets; None keeps all. Empty
    or missing sets render as the empty string.
    """
    if tset is None or not tset.triplets:
        return ""
    triplets = tset.triplets if budget is None else tset.triplets[: max(budget, 0)]
    return "; ".join(f"({t.head} | {t.relation} | {t.tail})" for t in triplets)


def pooled_triplets(target: TargetTriplets) -> TripletSet:
    """All of a target's sections pooled in abstract, introduction, conclusion order."""
    pooled = TripletSet(target.paper_id, "abstract")
    seen: set[tuple[str, str, str]] = set()
    for tset in (target.abstract, target.introduction, target.conclusion):
        if tset is None:
            continue
        for t in tset.triplets:
            key = (t.head, t.relation, t.tail)
            if key not in seen:
                seen.add(key)
                pooled.triplets.append(t)
    return pooled


# Serialization for the enriched dataset written between pipeline stages.

def _tset_to_dict(tset: TripletSet | None) -> dict | None:
    if tset is None:
        return None
    return {
        "paper_id": tset.paper_id,
        "section": tset.section,
        "triplets": [
            {
                "head": t.head,
                "relation": t.relation,
                "tail": t.tail,
                "head_type": t.head_type,
                "tail_type": t.tail_type,
            }
            for t in tset.triplets
        ],
    }


def _tset_from_dict(row: dict | None) -> TripletSet | None:
    if row is None:
        return None
    return TripletSet(
        row["paper_id"],
        row["section"],
        [
            KGTriplet(t["head"], t["relation"], t["tail"], t.get("head_type"), t.get("tail_type"))
            for t in row["triplets"]
        ],
    )


def enriched_to_dict(es: EnrichedSample) -> dict:
    from .dataset import sample_to_dict

    return {
        "sample": sample_to_dict(es.sample),
        "source_triplets": _tset_to_dict(es.source_triplets),
        "target_triplets": [
            {
                "paper_id": tt.paper_id,
                "abstract": _tset_to_dict(tt.abstract),
                "introduction": _tset_to_dict(tt.introduction),
                "conclusion": _tset_to_dict(tt.conclusion),
            }
            for tt in es.target_triplets
        ],
        "missing_target_triplets": es.missing_target_triplets,
    }


def enriched_from_dict(row: dict) -> EnrichedSample:
    from .dataset import sample_from_dict

    return EnrichedSample(
        sample=sample_from_dict(row["sample"]),
        source_triplets=_tset_from_dict(row["source_triplets"]),
        target_triplets=[
            TargetTriplets(
                paper_id=tt["paper_id"],
                abstract=_tset_from_dict(tt["abstract"]),
                introduction=_tset_from_dict(tt["introduction"]),
                conclusion=_tset_from_dict(tt["conclusion"]),
            )
            for tt in row["target_triplets"]
        ],
        missing_target_triplets=row["missing_target_triplets"],
    )


def write_enriched(samples: list[EnrichedSample], path: str | Path) -> int:
    with open(path, "w", encoding="utf-8") as fh:
        for es in samples:
            fh.write(dump_row(enriched_to_dict(es)) + "\n")
    return len(samples)


def read_enriched(path: str | Path) -> list[EnrichedSample]:
    out: list[EnrichedSample] = []
    for lineno, line in iter_jsonl(path):
        try:
            out.append(enriched_from_dict(json.loads(line)))
        except (json.JSONDecodeError, KeyError, TypeError) as exc:
            raise ValueError(f"{path}: line {lineno}: {exc}") from exc
    return out
