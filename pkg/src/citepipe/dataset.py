"""Build multi-reference citation samples from ingested paper records.

A sample is a sentence that cites at least two distinct resolvable papers
with non-empty abstracts, paired with the citing paper's abstract and the
cited papers' metadata. Sentences immediately adjacent to a qualifying
sentence join its citation passage when every citation they carry resolves
to a paper already in the target set, so a contiguous discussion of the
same papers travels as one passage.
"""

from __future__ import annotations

import json
import math
import random
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping

from . import __version__
from .corpus import BodySection, PaperRecord
from .jsonl import dump_row, iter_jsonl, json_digest

SCHEMA_VERSION = 1

MAX_TARGETS = 3


class DatasetReadError(RuntimeError):
    """A dataset file could not be parsed. Names the offending line."""


@dataclass
class TargetPaper:
    paper_id: str
    title: str = ""
    abstract: str = ""
    introduction: str | None = None
    conclusion: str | None = None


@dataclass
class CitationSample:
    sample_id: str
    source_paper_id: str
    source_abstract: str
    targets: list[TargetPaper]
    citation_text: str
    section_name: str = ""


@dataclass
class ExtractStats:
    sentences_scanned: int = 0
    samples_emitted: int = 0
    unresolved_citations: int = 0
    missing_abstract: int = 0
    self_citations: int = 0
    targets_trimmed: int = 0
    sources_without_abstract: int = 0
    trimmed_by_source_cap: int = 0


@dataclass
class DatasetStats:
    n_samples: int = 0
    n_unique_source_papers: int = 0
    citation_chars_avg: float = 0.0
    citation_chars_max: int = 0
    source_abstract_chars_avg: float = 0.0
    source_abstract_chars_max: int = 0
    target_abstract_chars_avg: float = 0.0
    target_abstract_chars_max: int = 0
    avg_targets_per_sample: float = 0.0
    empty: bool = True

    def to_dict(self) -> dict:
        return {
            "n_samples": self.n_samples,
            "n_unique_source_papers": self.n_unique_source_papers,
            "citation_chars_avg": self.citation_chars_avg,
            "citation_chars_max": self.citation_chars_max,
            "source_abstract_chars_avg": self.source_abstract_chars_avg,
            "source_abstract_chars_max": self.source_abstract_chars_max,
            "target_abstract_chars_avg": self.target_abstract_chars_avg,
            "target_abstract_chars_max": self.target_abstract_chars_max,
            "avg_targets_per_sample": self.avg_targets_per_sample,
            "empty": self.empty,
        }


@dataclass(frozen=True)
class SplitSpec:
    """Fractions for the train/val/test partition plus the shuffle seed.

    Fractions must be positive and sum to 1 within 1e-9. Sizes come from
    flooring each fraction of n, then handing out the remainder one sample
    at a time in train, val, test order.
    """

    train_fraction: float = 0.8006
    val_fraction: float = 0.0997
    test_fraction: float = 0.0997
    seed: int = 0

    def __post_init__(self):
        fracs = (self.train_fraction, self.val_fraction, self.test_fraction)
        if any(f <= 0 for f in fracs):
            raise ValueError("split fractions must be positive")
        if abs(sum(fracs) - 1.0) > 1e-9:
            raise ValueError(f"split fractions sum to {sum(fracs)!r}, expected 1.0")


_INTRO_KEYS = ("introduction",)
_CONCLUSION_KEYS = ("conclusion", "conclusions")


def _section_text(sections: list[BodySection], keys: tuple[str, ...]) -> str | None:
    for section in sections:
        name = section.section_name.lower()
        if any(key in name for key in keys):
            text = " ".join(section.sentences).strip()
            return text or None
    return None


def build_lookup(records: Iterable[PaperRecord]) -> dict[str, TargetPaper]:
    """Collect per-paper metadata used to resolve citation targets.

    Abstract-less papers stay in the lookup; extraction rejects them with a
    dedicated tally so the exclusion reasons stay distinguishable.
    """
    lookup: dict[str, TargetPaper] = {}
    for record in records:
        lookup[record.paper_id] = TargetPaper(
            paper_id=record.paper_id,
            title=record.title,
            abstract=record.abstract,
            introduction=_section_text(record.body_sections, _INTRO_KEYS),
            conclusion=_section_text(record.body_sections, _CONCLUSION_KEYS),
        )
    return lookup


def _sentence_target_ids(section: BodySection, sentence_index: int) -> list[str | None]:
    """Resolved ids cited by one sentence, in citation order; None = unresolved."""
    spans = [s for s in section.cite_spans if s.sentence_index == sentence_index]
    spans.sort(key=lambda s: s.char_start)
    return [s.resolved_paper_id for s in spans]


def _extends_passage(cited: list[str | None], target_ids: set[str]) -> bool:
    # A neighbor joins the passage only if it cites something, and everything
    # it cites is already a target of the seed sentence.
    if not cited:
        return False
    return all(pid is not None and pid in target_ids for pid in cited)


def extract_samples(
    records: Iterable[PaperRecord],
    lookup: Mapping[str, TargetPaper],
    max_per_source: int | None = None,
    stats: ExtractStats | None = None,
) -> list[CitationSample]:
    """Scan records in corpus order and emit qualifying citation samples.

    A sentence qualifies when it cites >= 2 distinct papers that resolve in
    `lookup` with non-empty abstracts (self-citations excluded). Targets are
    capped at MAX_TARGETS keeping first-cited order. The citation passage
    grows over adjacent sentences whose citations all land inside the target
    set; consumed sentences never seed another sample.
    """
    if stats is None:
        stats = ExtractStats()

    samples: list[CitationSample] = []
    for record in records:
        if not record.abstract.strip():
            stats.sources_without_abstract += 1
            continue
        per_source = 0
        for sec_idx, section in enumerate(record.body_sections):
            next_free = 0
            n_sentences = len(section.sentences)
            cited_by_sentence = [_sentence_target_ids(section, i) for i in range(n_sentences)]
            stats.sentences_scanned += n_sentences

            i = 0
            while i < n_sentences:
                targets = _qualify(record, cited_by_sentence[i], lookup, stats)
                if targets is None:
                    i += 1
                    continue
                if max_per_source is not None and per_source >= max_per_source:
                    stats.trimmed_by_source_cap += 1
                    i += 1
                    continue

                target_ids = {t.paper_id for t in targets}
                left = i
                while left - 1 >= next_free and _extends_passage(cited_by_sentence[left - 1], target_ids):
                    left -= 1
                right = i
                while right + 1 < n_sentences and _extends_passage(cited_by_sentence[right + 1], target_ids):
                    right += 1

                samples.append(
                    CitationSample(
                        sample_id=f"{record.paper_id}:{sec_idx}:{i}",
                        source_paper_id=record.paper_id,
                        source_abstract=record.abstract,
                        targets=targets,
                        citation_text=" ".join(section.sentences[left : right + 1]),
                        section_name=section.section_name,
                    )
                )
                stats.samples_emitted += 1
                per_source += 1
                next_free = right + 1
                i = right + 1
    return samples


def _qualify(
    record: PaperRecord,
    cited: list[str | None],
    lookup: Mapping[str, TargetPaper],
    stats: ExtractStats,
) -> list[TargetPaper] | None:
    """Targets for one sentence, or None when it does not qualify."""
    targets: list[TargetPaper] = []
    seen: set[str] = set()
    for pid in cited:
        if pid is None or pid not in lookup:
            stats.unresolved_citations += 1
            continue
        if pid == record.paper_id:
            stats.self_citations += 1
            continue
        if pid in seen:
            continue
        target = lookup[pid]
        if not target.abstract:
            stats.missing_abstract += 1
            continue
        seen.add(pid)
        targets.append(target)
    if len(targets) < 2:
        return None
    if len(targets) > MAX_TARGETS:
        stats.targets_trimmed += len(targets) - MAX_TARGETS
        targets = targets[:MAX_TARGETS]
    return targets


def split_sizes(n: int, spec: SplitSpec) -> tuple[int, int, int]:
    fracs = (spec.train_fraction, spec.val_fraction, spec.test_fraction)
    # tiny epsilon so fractions that are exact in decimal do not floor down
    # through float noise
    sizes = [math.floor(n * f + 1e-9) for f in fracs]
    remainder = n - sum(sizes)
    bucket = 0
    while remainder > 0:
        sizes[bucket % 3] += 1
        remainder -= 1
        bucket += 1
    return sizes[0], sizes[1], sizes[2]


def split_dataset(
    samples: list[CitationSample],
    spec: SplitSpec | None = None,
) -> tuple[list[CitationSample], list[CitationSample], list[CitationSample]]:
    """Deterministic seeded partition into train/val/test.

    The same spec always produces the same membership; the three parts are
    disjoint and exhaustive.
    """
    if spec is None:
        spec = SplitSpec()
    n_train, n_val, n_test = split_sizes(len(samples), spec)
    order = list(range(len(samples)))
    random.Random(spec.seed).shuffle(order)
    shuffled = [samples[i] for i in order]
    train = shuffled[:n_train]
    val = shuffled[n_train : n_train + n_val]
    test = shuffled[n_train + n_val :]
    assert len(test) == n_test
    return train, val, test


def compute_stats(samples: list[CitationSample]) -> DatasetStats:
    """Character-level dataset statistics (Unicode scalar counts)."""
    if not samples:
        return DatasetStats()

    citation_lens = [len(s.citation_text) for s in samples]
    source_lens = [len(s.source_abstract) for s in samples]
    target_lens = [len(t.abstract) for s in samples for t in s.targets]
    n_targets = [len(s.targets) for s in samples]

    def avg(xs: list[int]) -> float:
        return sum(xs) / len(xs)

    return DatasetStats(
        n_samples=len(samples),
        n_unique_source_papers=len({s.source_paper_id for s in samples}),
        citation_chars_avg=avg(citation_lens),
        citation_chars_max=max(citation_lens),
        source_abstract_chars_avg=avg(source_lens),
        source_abstract_chars_max=max(source_lens),
        target_abstract_chars_avg=avg(target_lens) if target_lens else 0.0,
        target_abstract_chars_max=max(target_lens) if target_lens else 0,
        avg_targets_per_sample=avg(n_targets),
        empty=False,
    )


def sample_to_dict(sample: CitationSample) -> dict:
    return {
        "schema_version": SCHEMA_VERSION,
        "sample_id": sample.sample_id,
        "source_paper_id": sample.source_paper_id,
        "source_abstract": sample.source_abstract,
        "section_name": sample.section_name,
        "citation_text": sample.citation_text,
        "targets": [
            {
                "paper_id": t.paper_id,
                "title": t.title,
                "abstract": t.abstract,
                "introduction": t.introduction,
                "conclusion": t.conclusion,
            }
            for t in sample.targets
        ],
    }


def sample_from_dict(row: dict) -> CitationSample:
    targets = [
        TargetPaper(
            paper_id=t["paper_id"],
            title=t.get("title", ""),
            abstract=t.get("abstract", ""),
            introduction=t.get("introduction"),
            conclusion=t.get("conclusion"),
        )
        for t in row["targets"]
    ]
    return CitationSample(
        sample_id=row["sample_id"],
        source_paper_id=row["source_paper_id"],
        source_abstract=row["source_abstract"],
        targets=targets,
        citation_text=row["citation_text"],
        section_name=row.get("section_name", ""),
    )


def manifest_path(path: str | Path) -> Path:
    return Path(str(path) + ".manifest.json")


def write_dataset(samples: list[CitationSample], path: str | Path) -> dict:
    """Write samples as JSONL plus a sidecar manifest; returns the manifest."""
    path = Path(path)
    with open(path, "w", encoding="utf-8") as fh:
        for sample in samples:
            fh.write(dump_row(sample_to_dict(sample)) + "\n")
    manifest = {
        "count": len(samples),
        "stats_digest": json_digest(compute_stats(samples).to_dict()),
        "builder_version": __version__,
        "schema_version": SCHEMA_VERSION,
    }
    with open(manifest_path(path), "w", encoding="utf-8") as fh:
        fh.write(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return manifest


def read_dataset(path: str | Path) -> list[CitationSample]:
    """Read a dataset file back; a corrupt line fails with its line number."""
    samples: list[CitationSample] = []
    for lineno, line in iter_jsonl(path):
        try:
            row = json.loads(line)
            samples.append(sample_from_dict(row))
        except (json.JSONDecodeError, KeyError, TypeError) as exc:
            raise DatasetReadError(f"{path}: line {lineno}: {exc}") from exc
    return samples
