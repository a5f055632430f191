"""Near-ideal ranking over candidate contexts, plus baseline selectors.

The ranking normalizes each similarity column by its root-sum-of-squares,
forms ideal / negative-ideal points from the column-wise max / min, measures
Euclidean distance of every row to both, and scores each row by relative
closeness d- / (d+ + d-). The candidate with the highest closeness wins;
ties go to the more recent utterance.

Degenerate inputs are handled, not rejected: an all-zero column normalizes
to zeros (selection then rests on the other modality), and if every row is
identical all closeness scores are 0.5.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from convctx.database import ContextDatabase, history_of
from convctx.errors import SelectionError
from convctx.records import ContextRecord, UtteranceId
from convctx.retrieval import RetrievalCandidate


@dataclass(frozen=True)
class DecisionMatrix:
    """Rows of (speech, text) retrieval similarities, optionally normalized.

    candidates[i] is the source candidate for row i, or None for matrices
    built from raw values.
    """

    sw: np.ndarray
    tw: np.ndarray
    candidates: tuple[RetrievalCandidate | None, ...]
    sr: np.ndarray | None = None
    tr: np.ndarray | None = None

    def __post_init__(self) -> None:
        if self.sw.shape[0] == 0:
            raise SelectionError("decision matrix needs at least one row")
        if self.sw.shape != self.tw.shape or len(self.candidates) != self.sw.shape[0]:
            raise SelectionError("decision matrix columns and refs must have equal length")
        if not (np.all(np.isfinite(self.sw)) and np.all(np.isfinite(self.tw))):
            raise SelectionError("decision matrix values must be finite")

    @property
    def n_rows(self) -> int:
        return self.sw.shape[0]

    @classmethod
    def from_candidates(cls, candidates: list[RetrievalCandidate]) -> "DecisionMatrix":
        if not candidates:
            raise SelectionError("no candidates to rank")
        sw = []
        tw = []
        for cand in candidates:
            if cand.sw is None or cand.tw is None:
                raise SelectionError(f"candidate {cand.record.id} is missing a similarity")
            sw.append(cand.sw)
            tw.append(cand.tw)
        return cls(np.asarray(sw, dtype=np.float64), np.asarray(tw, dtype=np.float64), tuple(candidates))

    @classmethod
    def from_values(cls, sw, tw) -> "DecisionMatrix":
        sw = np.asarray(sw, dtype=np.float64)
        tw = np.asarray(tw, dtype=np.float64)
        return cls(sw, tw, tuple([None] * sw.shape[0]))


@dataclass(frozen=True)
class IdealPoints:
    sa_plus: float
    ta_plus: float
    sa_minus: float
    ta_minus: float


@dataclass(frozen=True)
class ClosenessRanking:
    d_plus: np.ndarray
    d_minus: np.ndarray
    c: np.ndarray
    best_index: int


def _normalize_column(col: np.ndarray) -> np.ndarray:
    norm = float(np.sqrt(np.sum(col * col)))
    if norm == 0.0:
        return np.zeros_like(col)
    return col / norm


def normalize_matrix(m: DecisionMatrix) -> DecisionMatrix:
    """Scale each column to unit root-sum-of-squares (sign preserved)."""
    return DecisionMatrix(
        sw=m.sw,
        tw=m.tw,
        candidates=m.candidates,
        sr=_normalize_column(m.sw),
        tr=_normalize_column(m.tw),
    )


def ideal_points(m: DecisionMatrix) -> IdealPoints:
    """Column-wise max (ideal) and min (negative ideal) of the normalized matrix."""
    if m.sr is None or m.tr is None:
        raise SelectionError("ideal_points requires a normalized matrix")
    return IdealPoints(
        sa_plus=float(m.sr.max()),
        ta_plus=float(m.tr.max()),
        sa_minus=float(m.sr.min()),
        ta_minus=float(m.tr.min()),
    )


def _recency(m: DecisionMatrix, row: int) -> int:
    cand = m.candidates[row]
    return cand.record.id.index if cand is not None else row


def closeness(m: DecisionMatrix, ip: IdealPoints) -> ClosenessRanking:
    """Distances to the ideal / negative ideal and relative closeness per row."""
    if m.sr is None or m.tr is None:
        raise SelectionError("closeness requires a normalized matrix")
    d_plus = np.sqrt((m.sr - ip.sa_plus) ** 2 + (m.tr - ip.ta_plus) ** 2)
    d_minus = np.sqrt((m.sr - ip.sa_minus) ** 2 + (m.tr - ip.ta_minus) ** 2)
    total = d_plus + d_minus
    c = np.where(total > 0.0, d_minus / np.where(total > 0.0, total, 1.0), 0.5)
    best = 0
    for i in range(1, m.n_rows):
        if c[i] > c[best] or (c[i] == c[best] and _recency(m, i) > _recency(m, best)):
            best = i
    return ClosenessRanking(d_plus=d_plus, d_minus=d_minus, c=c, best_index=best)


def rank_candidates(candidates: list[RetrievalCandidate]) -> tuple[DecisionMatrix, ClosenessRanking]:
    """Run the full pipeline: normalize, ideal points, closeness."""
    normalized = normalize_matrix(DecisionMatrix.from_candidates(candidates))
    ranking = closeness(normalized, ideal_points(normalized))
    return normalized, ranking


def select_best(candidates: list[RetrievalCandidate]) -> RetrievalCandidate:
    """The candidate with maximum relative closeness."""
    if not candidates:
        raise SelectionError("no candidates to select from")
    _, ranking = rank_candidates(candidates)
    return candidates[ranking.best_index]


def select_sum_top1(candidates: list[RetrievalCandidate]) -> RetrievalCandidate:
    """Baseline: argmax of sw + tw, recency tie-break."""
    if not candidates:
        raise SelectionError("no candidates to select from")
    best = None
    best_key = None
    for cand in candidates:
        if cand.sw is None or cand.tw is None:
            raise SelectionError(f"candidate {cand.record.id} is missing a similarity")
        key = (cand.sw + cand.tw, cand.record.id.index)
        if best_key is None or key > best_key:
            best = cand
            best_key = key
    return best


def select_preceding_n(db: ContextDatabase, current: UtteranceId, n: int) -> list[ContextRecord]:
    """Baseline: the n immediately preceding utterances, most recent last."""
    if n < 1:
        raise SelectionError(f"n must be >= 1, got {n}")
    history = history_of(db, current)
    return history[-n:]
