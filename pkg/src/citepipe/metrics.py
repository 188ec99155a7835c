"""Reference-based text metrics: ROUGE-1/2, ROUGE-L, and METEOR.

All metrics share one tokenizer (lowercase, split on runs of
non-alphanumeric characters). ROUGE-N uses clipped n-gram overlap, ROUGE-L
the dynamic-programming LCS, and METEOR a two-stage unigram alignment:
exact matches first, then stem matches on the leftovers, maximizing the
match count and, among maximum alignments, minimizing the number of
contiguous chunks. Small inputs get an exact branch-and-bound search for
the chunk minimum; longer inputs fall back to a deterministic greedy that
repeatedly commits the longest remaining diagonal run.
"""

from __future__ import annotations

import re
from collections import Counter
from dataclasses import dataclass, field

from .stemmer import stem

# alignment search limits; beyond these the greedy path takes over
_EXACT_MAX_TOKENS = 16
_EXACT_NODE_BUDGET = 300_000
_RUN_GREEDY_MAX_CELLS = 10_000

_TOKEN_RE = re.compile(r"[^\W_]+", re.UNICODE)


@dataclass
class TokenizedText:
    raw: str
    tokens: list[str] = field(default_factory=list)


def tokenize(text: str) -> TokenizedText:
    """Lowercase and split on non-alphanumeric runs; no empty tokens."""
    return TokenizedText(raw=text, tokens=_TOKEN_RE.findall(text.lower()))


def _tokens(text: str | TokenizedText) -> list[str]:
    if isinstance(text, TokenizedText):
        return text.tokens
    return tokenize(text).tokens


@dataclass
class MetricScore:
    metric: str
    precision: float
    recall: float
    f: float


def _harmonic(p: float, r: float) -> float:
    return 2 * p * r / (p + r) if p + r > 0 else 0.0


def _ngrams(tokens: list[str], n: int) -> list[tuple[str, ...]]:
    return [tuple(tokens[i : i + n]) for i in range(len(tokens) - n + 1)]


def rouge_n(candidate: str | TokenizedText, reference: str | TokenizedText, n: int) -> MetricScore:
    """Clipped n-gram overlap; each reference n-gram matches at most its own count."""
    if n < 1:
        raise ValueError("n must be >= 1")
    cand = _ngrams(_tokens(candidate), n)
    ref = _ngrams(_tokens(reference), n)
    cand_counts = Counter(cand)
    ref_counts = Counter(ref)
    overlap = sum(min(count, ref_counts[gram]) for gram, count in cand_counts.items())
    precision = overlap / max(1, len(cand))
    recall = overlap / max(1, len(ref))
    return MetricScore(f"rouge-{n}", precision, recall, _harmonic(precision, recall))


def _lcs_length(a: list[str], b: list[str]) -> int:
    # classic DP, rolling row
    if not a or not b:
        return 0
    prev = [0] * (len(b) + 1)
    for i in range(1, len(a) + 1):
        cur = [0] * (len(b) + 1)
        ai = a[i - 1]
        for j in range(1, len(b) + 1):
            if ai == b[j - 1]:
                cur[j] = prev[j - 1] + 1
            else:
                cur[j] = max(prev[j], cur[j - 1])
        prev = cur
    return prev[len(b)]


def rouge_l(candidate: str | TokenizedText, reference: str | TokenizedText) -> MetricScore:
    cand = _tokens(candidate)
    ref = _tokens(reference)
    lcs = _lcs_length(cand, ref)
    precision = lcs / max(1, len(cand))
    recall = lcs / max(1, len(ref))
    return MetricScore("rouge-l", precision, recall, _harmonic(precision, recall))


# METEOR alignment.
#
# A pair (i, j) is stage-1 compatible when cand[i] == ref[j] and stage-2
# compatible when the tokens differ but their stems agree. Stage 1 must
# reach its maximum cardinality before stage 2 fills in; both maxima are
# fixed by per-class counts, so the search only decides which positions
# pair up, which is what the chunk count depends on.


def _stage_maxima(cand: list[str], ref: list[str]) -> tuple[int, int]:
    cand_counts = Counter(cand)
    ref_counts = Counter(ref)
    m1 = sum(min(count, ref_counts[tok]) for tok, count in cand_counts.items())
    # leftovers per surface class are fixed; aggregate them by stem class
    left_c: Counter = Counter()
    left_r: Counter = Counter()
    for tok, count in cand_counts.items():
        left_c[stem(tok)] += count - min(count, ref_counts[tok])
    for tok, count in ref_counts.items():
        left_r[stem(tok)] += count - min(count, cand_counts[tok])
    m2 = sum(min(count, left_r[s]) for s, count in left_c.items())
    return m1, m2


def _chunk_count(pairs: list[tuple[int, int]]) -> int:
    if not pairs:
        return 0
    ordered = sorted(pairs)
    chunks = 1
    for (i0, j0), (i1, j1) in zip(ordered, ordered[1:]):
        if i1 != i0 + 1 or j1 != j0 + 1:
            chunks += 1
    return chunks


def _greedy_first_match(cand: list[str], ref: list[str], stems_c, stems_r) -> list[tuple[int, int]]:
    pairs: list[tuple[int, int]] = []
    used_r = [False] * len(ref)
    matched_c = [False] * len(cand)
    for i, tok in enumerate(cand):
        for j, rtok in enumerate(ref):
            if not used_r[j] and tok == rtok:
                pairs.append((i, j))
                used_r[j] = True
                matched_c[i] = True
                break
    for i, tok in enumerate(cand):
        if matched_c[i]:
            continue
        for j in range(len(ref)):
            if not used_r[j] and stems_c[i] == stems_r[j] and tok != ref[j]:
                pairs.append((i, j))
                used_r[j] = True
                break
    return pairs


def _greedy_longest_run(cand: list[str], ref: list[str], stems_c, stems_r) -> list[tuple[int, int]]:
    """Commit the longest available diagonal run per stage, ties to the earliest."""
    used_c = [False] * len(cand)
    used_r = [False] * len(ref)
    pairs: list[tuple[int, int]] = []

    def compatible(stage: int, i: int, j: int) -> bool:
        if stage == 1:
            return cand[i] == ref[j]
        return cand[i] != ref[j] and stems_c[i] == stems_r[j]

    for stage in (1, 2):
        while True:
            best_len = 0
            best = None
            for i in range(len(cand)):
                if used_c[i]:
                    continue
                for j in range(len(ref)):
                    if used_r[j] or not compatible(stage, i, j):
                        continue
                    length = 0
                    while (
                        i + length < len(cand)
                        and j + length < len(ref)
                        and not used_c[i + length]
                        and not used_r[j + length]
                        and compatible(stage, i + length, j + length)
                    ):
                        length += 1
                    if length > best_len:
                        best_len = length
                        best = (i, j)
            if best is None:
                break
            i, j = best
            for k in range(best_len):
                used_c[i + k] = True
                used_r[j + k] = True
                pairs.append((i + k, j + k))
    return pairs


def _exact_min_chunks(
    cand: list[str],
    ref: list[str],
    stems_c,
    stems_r,
    m1: int,
    m2: int,
    seed_pairs: list[tuple[int, int]],
) -> list[tuple[int, int]] | None:
    """Branch-and-bound over position assignments; None when the node budget runs out."""
    n, m = len(cand), len(ref)
    total_needed = m1 + m2
    best_chunks = _chunk_count(seed_pairs)
    best_pairs = list(seed_pairs)
    nodes = 0
    budget_hit = False

    exact_ref: dict[str, list[int]] = {}
    stem_ref: dict[str, list[int]] = {}
    for j, tok in enumerate(ref):
        exact_ref.setdefault(tok, []).append(j)
        stem_ref.setdefault(stems_r[j], []).append(j)

    used_r = [False] * m
    chosen: list[tuple[int, int, bool]] = []  # (i, j, is_exact)

    def dfs(i: int, n_exact: int, n_total: int, chunks: int, last: tuple[int, int] | None):
        nonlocal best_chunks, best_pairs, nodes, budget_hit
        nodes += 1
        if nodes > _EXACT_NODE_BUDGET:
            budget_hit = True
            return
        # chunks never decrease as pairs are added in candidate order, so a
        # path already at the incumbent count cannot improve on it
        if chunks >= best_chunks:
            return
        remaining = n - i
        if n_total + remaining < total_needed or n_exact + remaining < m1:
            return
        if i == n:
            if n_exact == m1 and n_total == total_needed and chunks < best_chunks:
                best_chunks = chunks
                best_pairs = [(ci, cj) for ci, cj, _ in chosen]
            return

        options: list[tuple[int, bool]] = []
        for j in exact_ref.get(cand[i], []):
            if not used_r[j]:
                options.append((j, True))
        for j in stem_ref.get(stems_c[i], []):
            if not used_r[j] and ref[j] != cand[i]:
                options.append((j, False))
        # try the diagonal continuation first so good bounds arrive early
        if last is not None and last[0] == i - 1:
            options.sort(key=lambda o: (o[0] != last[1] + 1, o[0]))
        else:
            options.sort(key=lambda o: o[0])

        for j, is_exact in options:
            extends = last is not None and last == (i - 1, j - 1)
            used_r[j] = True
            chosen.append((i, j, is_exact))
            dfs(
                i + 1,
                n_exact + (1 if is_exact else 0),
                n_total + 1,
                chunks if extends else chunks + 1,
                (i, j),
            )
            chosen.pop()
            used_r[j] = False
            if budget_hit:
                return
        if not budget_hit:
            dfs(i + 1, n_exact, n_total, chunks, last)

    dfs(0, 0, 0, 0, None)
    if budget_hit:
        return None
    return best_pairs


def _align(cand: list[str], ref: list[str]) -> tuple[int, int]:
    """Return (matched unigrams, chunk count) for the METEOR alignment."""
    if not cand or not ref:
        return 0, 0
    stems_c = [stem(t) for t in cand]
    stems_r = [stem(t) for t in ref]
    m1, m2 = _stage_maxima(cand, ref)
    if m1 + m2 == 0:
        return 0, 0

    if len(cand) * len(ref) <= _RUN_GREEDY_MAX_CELLS:
        seed = _greedy_longest_run(cand, ref, stems_c, stems_r)
    else:
        seed = _greedy_first_match(cand, ref, stems_c, stems_r)

    pairs = seed
    if len(cand) <= _EXACT_MAX_TOKENS and len(ref) <= _EXACT_MAX_TOKENS:
        exact = _exact_min_chunks(cand, ref, stems_c, stems_r, m1, m2, seed)
        if exact is not None:
            pairs = exact
    return len(pairs), _chunk_count(pairs)


def meteor(candidate: str | TokenizedText, reference: str | TokenizedText) -> MetricScore:
    """Unigram alignment score with the standard fragmentation penalty.

    Fmean weights recall 9:1 over precision; the penalty is
    0.5 * (chunks / matches)^3 and the final score Fmean * (1 - penalty).
    Zero matches score zero.
    """
    cand = _tokens(candidate)
    ref = _tokens(reference)
    matches, chunks = _align(cand, ref)
    if matches == 0:
        return MetricScore("meteor", 0.0, 0.0, 0.0)
    precision = matches / len(cand)
    recall = matches / len(ref)
    fmean = 10 * precision * recall / (recall + 9 * precision)
    penalty = 0.5 * (chunks / matches) ** 3
    return MetricScore("meteor", precision, recall, fmean * (1 - penalty))


REPORT_COLUMNS = ("METEOR", "Rouge-1", "Rouge-2", "Rouge-L")


@dataclass
class EvalReport:
    n: int
    per_sample: list[dict[str, MetricScore]]
    corpus: dict[str, float]
    sample_ids: list[str] | None = None


def _score_all(candidate: str, reference: str) -> dict[str, MetricScore]:
    cand = tokenize(candidate)
    ref = tokenize(reference)
    return {
        "METEOR": meteor(cand, ref),
        "Rouge-1": rouge_n(cand, ref, 1),
        "Rouge-2": rouge_n(cand, ref, 2),
        "Rouge-L": rouge_l(cand, ref),
    }


def evaluate_corpus(pairs: list[tuple[str, str]], sample_ids: list[str] | None = None) -> EvalReport:
    """Score (candidate, reference) pairs and average over the corpus.

    Corpus numbers are means of the per-sample scores scaled by 100 and
    rounded to two decimals. An empty pair list is an error.
    """
    if not pairs:
        raise ValueError("evaluate_corpus needs at least one (candidate, reference) pair")
    if sample_ids is not None and len(sample_ids) != len(pairs):
        raise ValueError("sample_ids length must match pairs")

    per_sample = [_score_all(cand, ref) for cand, ref in pairs]
    corpus = {
        column: round(100 * sum(scores[column].f for scores in per_sample) / len(per_sample), 2)
        for column in REPORT_COLUMNS
    }
    return EvalReport(n=len(pairs), per_sample=per_sample, corpus=corpus, sample_ids=sample_ids)


def render_report_table(report: EvalReport, label: str = "corpus") -> str:
    """Fixed-width table with exactly the four metric columns."""
    headers = ["Model", *REPORT_COLUMNS]
    values = [label] + [f"{report.corpus[c]:.2f}" for c in REPORT_COLUMNS]
    widths = [max(len(h), len(v)) for h, v in zip(headers, values)]
    header_row = "  ".join(h.rjust(w) for h, w in zip(headers, widths))
    value_row = "  ".join(v.rjust(w) for v, w in zip(values, widths))
    return header_row + "\n" + value_row + "\n"


def report_to_dict(report: EvalReport) -> dict:
    rows = []
    for idx, scores in enumerate(report.per_sample):
        row: dict = {
            metric: {"precision": s.precision, "recall": s.recall, "f": s.f}
            for metric, s in scores.items()
        }
        if report.sample_ids is not None:
            row["sample_id"] = report.sample_ids[idx]
        rows.append(row)
    return {"n": report.n, "corpus": dict(report.corpus), "per_sample": rows}


def report_from_dict(raw: dict) -> EvalReport:
    per_sample = []
    sample_ids: list[str] | None = [] if raw["per_sample"] and "sample_id" in raw["per_sample"][0] else None
    for row in raw["per_sample"]:
        scores = {
            metric: MetricScore(metric, v["precision"], v["recall"], v["f"])
            for metric, v in row.items()
            if metric != "sample_id"
        }
        per_sample.append(scores)
        if sample_ids is not None:
            sample_ids.append(row["sample_id"])
    return EvalReport(n=raw["n"], per_sample=per_sample, corpus=raw["corpus"], sample_ids=sample_ids)
