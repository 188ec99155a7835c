"""Prompt composition under a hard token budget.

Prompts follow the instruction/input/response layout: a fixed preamble and
instruction, an input section holding the source abstract, up to three
target abstracts, and optional relation blocks rendered from knowledge
graph triplets, then a response marker. Budgets are enforced with a
character-based token estimate and a fixed truncation ladder that cuts the
least important content first:

  1. target conclusion relation blocks
  2. target introduction relation blocks (and pooled relation blocks)
  3. target conclusion text (only present when explicitly enabled)
  4. target introduction text (only present when explicitly enabled)
  5. target abstracts, tail-trimmed longest first
  6. the source abstract, tail-trimmed but never below 200 estimated tokens

If the ladder runs out the sample does not fit and BudgetExhausted names it.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

from .dataset import CitationSample
from .jsonl import dump_row, iter_jsonl
from .kg import EnrichedSample, pooled_triplets, render_triplets

DEFAULT_MAX_TOKENS = 2048
DEFAULT_RESERVE = 256
SOURCE_ABSTRACT_FLOOR_TOKENS = 200
RESPONSE_MARKER = "### Response:"

PREAMBLE = (
    "Below is an instruction that describes a task, paired with an input that "
    "provides further context. Write a response that appropriately completes the request."
)

INSTRUCTION = (
    "Write the passage of a research paper that cites all of the target papers, "
    "staying consistent with the source paper's abstract. Cover every target paper's "
    "contribution in the passage."
)


def default_estimator(text: str) -> int:
    """ceil(len/4): the four-characters-per-token rule of thumb."""
    return (len(text) + 3) // 4


Estimator = Callable[[str], int]


def estimate_tokens(text: str, estimator: Estimator | None = None) -> int:
    return (estimator or default_estimator)(text)


@dataclass(frozen=True)
class TokenBudget:
    max_tokens: int = DEFAULT_MAX_TOKENS
    reserve_for_response: int = DEFAULT_RESERVE
    estimator: Estimator = default_estimator

    def __post_init__(self):
        if self.max_tokens < 1:
            raise ValueError("max_tokens must be positive")
        if not 0 <= self.reserve_for_response < self.max_tokens:
            raise ValueError("reserve_for_response must be below max_tokens")

    @property
    def usable(self) -> int:
        return self.max_tokens - self.reserve_for_response


@dataclass(frozen=True)
class PromptTemplate:
    name: str
    instruction: str
    input_layout: tuple[str, ...]
    response_key: str = RESPONSE_MARKER


BASELINE_TEMPLATE = PromptTemplate(
    name="instruct-baseline",
    instruction=INSTRUCTION,
    input_layout=("source_abstract", "target_abstracts"),
)

KG_TEMPLATE = PromptTemplate(
    name="instruct-kg",
    instruction=INSTRUCTION,
    input_layout=("source_abstract", "source_relations", "target_abstracts", "target_relations"),
)


@dataclass
class Truncation:
    slot: str
    original_len: int
    kept_len: int


@dataclass
class PromptInstance:
    sample_id: str
    template_name: str
    text: str
    token_estimate: int
    truncations: list[Truncation] = field(default_factory=list)
    gold_response: str | None = None


class BudgetExhausted(RuntimeError):
    def __init__(self, sample_id: str, budget: int):
        super().__init__(f"sample {sample_id} cannot fit a {budget}-token budget")
        self.sample_id = sample_id


@dataclass
class _Block:
    slot: str
    label: str
    content: str
    rung: int  # 0 = never cut by the ladder
    header_when_empty: bool = True
    dropped: bool = False


def _compose(instruction: str, blocks: list[_Block]) -> str:
    parts = []
    for b in blocks:
        if b.dropped:
            continue
        if b.content:
            parts.append(f"{b.label} {b.content}")
        elif b.header_when_empty:
            parts.append(b.label)
    body = "\n\n".join(parts)
    return (
        f"{PREAMBLE}\n\n### Instruction:\n{instruction}\n\n### Input:\n{body}"
        f"\n\n{RESPONSE_MARKER}\n"
    )


def _chars_for_tokens(text: str, tokens: int, estimator: Estimator) -> int:
    """Largest prefix length whose estimate stays within `tokens`."""
    lo, hi, best = 0, len(text), 0
    while lo <= hi:
        mid = (lo + hi) // 2
        if estimator(text[:mid]) <= tokens:
            best = mid
            lo = mid + 1
        else:
            hi = mid - 1
    return best


def _fit(
    instruction: str,
    blocks: list[_Block],
    budget: TokenBudget,
    sample_id: str,
) -> tuple[str, list[Truncation]]:
    estimator = budget.estimator
    truncations: list[Truncation] = []

    def fits() -> bool:
        return estimator(_compose(instruction, blocks)) <= budget.usable

    def shrink_to_fit(block: _Block, floor_chars: int) -> bool:
        """Tail-trim `block` to the longest prefix that fits, floored; True if it fits."""
        original = block.content
        lo, hi, best = floor_chars, len(original), None
        while lo <= hi:
            mid = (lo + hi) // 2
            block.content = original[:mid]
            if fits():
                best = mid
                lo = mid + 1
            else:
                hi = mid - 1
        kept = best if best is not None else floor_chars
        block.content = original[:kept]
        if kept < len(original):
            truncations.append(Truncation(block.slot, len(original), kept))
        return best is not None

    if fits():
        return _compose(instruction, blocks), truncations

    for rung in (1, 2, 3, 4):
        for block in blocks:
            if block.rung != rung or block.dropped:
                continue
            block.dropped = True
            if block.content:
                truncations.append(Truncation(block.slot, len(block.content), 0))
            if fits():
                return _compose(instruction, blocks), truncations

    while True:
        candidates = [b for b in blocks if b.rung == 5 and not b.dropped and b.content]
        if not candidates:
            break
        longest = max(candidates, key=lambda b: len(b.content))
        if shrink_to_fit(longest, 0):
            return _compose(instruction, blocks), truncations

    for block in blocks:
        if block.rung == 6 and not block.dropped and block.content:
            floor_chars = min(
                len(block.content),
                _chars_for_tokens(block.content, SOURCE_ABSTRACT_FLOOR_TOKENS, estimator),
            )
            if shrink_to_fit(block, floor_chars):
                return _compose(instruction, blocks), truncations

    raise BudgetExhausted(sample_id, budget.max_tokens)


def _abstract_blocks(
    sample: CitationSample,
    include_introductions: bool,
    include_conclusions: bool,
) -> tuple[_Block, list[list[_Block]]]:
    source = _Block("source_abstract", "Source abstract:", sample.source_abstract, rung=6)
    per_target: list[list[_Block]] = []
    for k, target in enumerate(sample.targets, start=1):
        group = [
            _Block(f"target_abstract[{k}]", f"Target paper {k} abstract:", target.abstract, rung=5)
        ]
        if include_introductions and target.introduction:
            group.append(
                _Block(
                    f"target_introduction[{k}]",
                    f"Target paper {k} introduction:",
                    target.introduction,
                    rung=4,
                )
            )
        if include_conclusions and target.conclusion:
            group.append(
                _Block(
                    f"target_conclusion[{k}]",
                    f"Target paper {k} conclusion:",
                    target.conclusion,
                    rung=3,
                )
            )
        per_target.append(group)
    return source, per_target


def render_baseline(
    sample: CitationSample,
    budget: TokenBudget | None = None,
    include_introductions: bool = False,
    include_conclusions: bool = False,
) -> PromptInstance:
    """Compose the plain prompt: source abstract plus target abstracts."""
    budget = budget or TokenBudget()
    source, per_target = _abstract_blocks(sample, include_introductions, include_conclusions)
    blocks = [source]
    for group in per_target:
        blocks.extend(group)
    text, truncations = _fit(BASELINE_TEMPLATE.instruction, blocks, budget, sample.sample_id)
    return PromptInstance(
        sample_id=sample.sample_id,
        template_name=BASELINE_TEMPLATE.name,
        text=text,
        token_estimate=budget.estimator(text),
        truncations=truncations,
        gold_response=sample.citation_text,
    )


def render_kg(
    enriched: EnrichedSample,
    budget: TokenBudget | None = None,
    triplet_budget: int | None = None,
    include_empty_kg_headers: bool = True,
    pooled: bool = False,
    include_introductions: bool = False,
    include_conclusions: bool = False,
) -> PromptInstance:
    """Compose the relation-augmented prompt.

    Per-section relation blocks follow each abstract; pooled=True collapses a
    target's sections into one block. triplet_budget keeps only the first k
    triplets of each set. With triplet_budget=0 and headers off the output
    text equals render_baseline's.
    """
    budget = budget or TokenBudget()
    sample = enriched.sample
    source, per_target = _abstract_blocks(sample, include_introductions, include_conclusions)

    blocks: list[_Block] = [
        source,
        _Block(
            "source_kg_abstract",
            "Source abstract relations:",
            render_triplets(enriched.source_triplets, triplet_budget),
            rung=0,
            header_when_empty=include_empty_kg_headers,
        ),
    ]
    for k, group in enumerate(per_target, start=1):
        blocks.extend(group)
        tt = enriched.target_triplets[k - 1]
        if pooled:
            blocks.append(
                _Block(
                    f"target_kg[{k}]",
                    f"Target paper {k} relations:",
                    render_triplets(pooled_triplets(tt), triplet_budget),
                    rung=2,
                    header_when_empty=include_empty_kg_headers,
                )
            )
        else:
            blocks.append(
                _Block(
                    f"target_kg_abstract[{k}]",
                    f"Target paper {k} abstract relations:",
                    render_triplets(tt.abstract, triplet_budget),
                    rung=0,
                    header_when_empty=include_empty_kg_headers,
                )
            )
            blocks.append(
                _Block(
                    f"target_kg_introduction[{k}]",
                    f"Target paper {k} introduction relations:",
                    render_triplets(tt.introduction, triplet_budget),
                    rung=2,
                    header_when_empty=include_empty_kg_headers,
                )
            )
            blocks.append(
                _Block(
                    f"target_kg_conclusion[{k}]",
                    f"Target paper {k} conclusion relations:",
                    render_triplets(tt.conclusion, triplet_budget),
                    rung=1,
                    header_when_empty=include_empty_kg_headers,
                )
            )

    text, truncations = _fit(KG_TEMPLATE.instruction, blocks, budget, sample.sample_id)
    return PromptInstance(
        sample_id=sample.sample_id,
        template_name=KG_TEMPLATE.name,
        text=text,
        token_estimate=budget.estimator(text),
        truncations=truncations,
        gold_response=sample.citation_text,
    )


def manifest_path(path: str | Path) -> Path:
    return Path(str(path) + ".manifest.json")


def emit_finetune_file(
    instances: list[PromptInstance],
    path: str | Path,
    include_response: bool = True,
) -> dict:
    """Write prompt/response rows as JSONL plus a count manifest.

    JSON encoding keeps multi-line prompts one-record-per-line safe.
    """
    path = Path(path)
    with open(path, "w", encoding="utf-8") as fh:
        for instance in instances:
            row: dict = {"sample_id": instance.sample_id, "prompt": instance.text}
            if include_response:
                if instance.gold_response is None:
                    raise ValueError(f"sample {instance.sample_id} has no gold response")
                row["response"] = instance.gold_response
            fh.write(dump_row(row) + "\n")
    manifest = {
        "count": len(instances),
        "templates": sorted({i.template_name for i in instances}),
        "with_responses": include_response,
    }
    with open(manifest_path(path), "w", encoding="utf-8") as fh:
        fh.write(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return manifest


def read_prompt_file(path: str | Path) -> list[dict]:
    rows = []
    for lineno, line in iter_jsonl(path):
        try:
            rows.append(json.loads(line))
        except json.JSONDecodeError as exc:
            raise ValueError(f"{path}: line {lineno}: {exc}") from exc
    return rows
