"""WER, CER, and mixed error rate scoring.

Text is normalized before scoring: lowercased, whitespace runs collapsed,
leading/trailing whitespace stripped; punctuation is retained. CER drops all
whitespace before aligning. Corpus rates are total edit distance over total
reference length, so insertion-heavy hypotheses can push a rate above 1.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Mapping, Sequence

from convctx.errors import ScoringError

# Character-based writing systems scored with CER; everything else gets WER.
CHAR_METRIC_LANGUAGES = frozenset({"ja", "ko", "th"})

MER_MACRO = "macro"
MER_MICRO = "micro"


@dataclass(frozen=True)
class LanguageScore:
    language: str
    error_rate: float
    metric: str  # "wer" | "cer"
    n_ref_tokens: int
    n_errors: int


@dataclass(frozen=True)
class ScoreReport:
    languages: tuple[LanguageScore, ...]
    mer: float
    mode: str  # "macro" | "micro"


def normalize_text(text: str) -> str:
    return " ".join(text.lower().split())


def _metric_for_language(language: str) -> str:
    primary = language.split("-")[0].split("_")[0].lower()
    return "cer" if primary in CHAR_METRIC_LANGUAGES else "wer"


def levenshtein(ref: Sequence, hyp: Sequence) -> int:
    """Unit-cost edit distance via a two-row DP."""
    n, m = len(ref), len(hyp)
    if n == 0:
        return m
    if m == 0:
        return n
    prev = list(range(m + 1))
    curr = [0] * (m + 1)
    for i in range(1, n + 1):
        curr[0] = i
        ri = ref[i - 1]
        for j in range(1, m + 1):
            sub = prev[j - 1] + (0 if ri == hyp[j - 1] else 1)
            delete = prev[j] + 1
            insert = curr[j - 1] + 1
            best = sub
            if delete < best:
                best = delete
            if insert < best:
                best = insert
            curr[j] = best
        prev, curr = curr, prev
    return prev[m]


def _corpus_rate(refs: Iterable[Sequence], hyps: Iterable[Sequence]) -> tuple[float, int, int]:
    refs = list(refs)
    hyps = list(hyps)
    if len(refs) != len(hyps):
        raise ScoringError(f"got {len(refs)} references but {len(hyps)} hypotheses")
    total_ref = sum(len(r) for r in refs)
    if total_ref == 0:
        raise ScoringError("all references are empty; error rate is undefined")
    errors = sum(levenshtein(r, h) for r, h in zip(refs, hyps))
    return errors / total_ref, total_ref, errors


def word_error_rate(refs: list[Sequence[str]], hyps: list[Sequence[str]]) -> float:
    """(S + D + I) / N over the corpus, token sequences in, unit costs."""
    return _corpus_rate(refs, hyps)[0]


def char_error_rate(refs: list[Sequence[str]], hyps: list[Sequence[str]]) -> float:
    """As word_error_rate at character granularity."""
    return _corpus_rate(refs, hyps)[0]


def word_tokens(text: str) -> list[str]:
    normalized = normalize_text(text)
    return normalized.split() if normalized else []

def char_tokens(text: str) -> list[str]:
    return list(normalize_text(text).replace(" ", ""))


def score_language(language: str, refs: list[str], hyps: list[str]) -> LanguageScore:
    """Score one language's utterances with its designated metric."""
    metric = _metric_for_language(language)
    tokenize = char_tokens if metric == "cer" else word_tokens
    rate, n_ref, n_err = _corpus_rate([tokenize(r) for r in refs], [tokenize(h) for h in hyps])
    return LanguageScore(language=language, error_rate=rate, metric=metric, n_ref_tokens=n_ref, n_errors=n_err)


def mixed_error_rate(
    groups: Mapping[str, tuple[list[str], list[str]]],
    mode: str = MER_MACRO,
) -> ScoreReport:
    """Score per-language groups of (references, hypotheses) and aggregate.

    macro: unweighted mean of per-language rates (default).
    micro: total errors over total reference units, pooled across languages.
    """
    if not groups:
        raise ScoringError("no languages to score")
    if mode not in (MER_MACRO, MER_MICRO):
        raise ScoringError(f"unknown MER mode {mode!r}")
    scores = [score_language(lang, refs, hyps) for lang, (refs, hyps) in sorted(groups.items())]
    if mode == MER_MACRO:
        mer = sum(s.error_rate for s in scores) / len(scores)
    else:
        mer = sum(s.n_errors for s in scores) / sum(s.n_ref_tokens for s in scores)
    return ScoreReport(languages=tuple(scores), mer=mer, mode=mode)
