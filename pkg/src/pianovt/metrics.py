"""Onset + pitch note matching and precision / recall / F-measure."""

from __future__ import annotations

from collections import defaultdict
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import linear_sum_assignment

DEFAULT_TOLERANCE = 0.1
# onset differences are compared with this slack so that a pair exactly at the
# tolerance still matches despite float representation error
TOLERANCE_SLACK = 1e-9


@dataclass
class MatchResult:
    pairs: list[tuple[int, int]]
    unmatched_ref: list[int]
    unmatched_est: list[int]
    onset_tolerance: float


@dataclass
class Scores:
    precision: float
    recall: float
    f1: float
    n_ref: int = 0
    n_est: int = 0
    n_matched: int = 0


def _match_group(ref_on: np.ndarray, est_on: np.ndarray, tol: float) -> list[tuple[int, int]]:
    dist = np.abs(ref_on[:, None] - est_on[None, :])
    ok = dist <= tol + TOLERANCE_SLACK
    if not ok.any():
        return []
    # a missing edge costs more than any full set of real ones, so the
    # assignment maximizes the number of real edges before their total distance
    big = 1.0 + dist[ok].sum() + 1.0
    cost = np.where(ok, dist, big)
    rows, cols = linear_sum_assignment(cost)
    return [(int(r), int(c)) for r, c in zip(rows, cols) if ok[r, c]]


def match_notes(ref, est, tol: float = DEFAULT_TOLERANCE) -> MatchResult:
    """Maximum-cardinality matching of equal-pitch notes within ``tol`` seconds.

    Among maximum matchings the one with least total onset distance is chosen.
    """
    if tol < 0:
        raise ValueError("tolerance must be >= 0")
    by_pitch_ref: dict[int, list[int]] = defaultdict(list)
    by_pitch_est: dict[int, list[int]] = defaultdict(list)
    for i, n in enumerate(ref):
        by_pitch_ref[n.pitch].append(i)
    for j, n in enumerate(est):
        by_pitch_est[n.pitch].append(j)

    pairs = []
    for pitch, ri in by_pitch_ref.items():
        ej = by_pitch_est.get(pitch)
        if not ej:
            continue
        ref_on = np.array([ref[i].onset for i in ri])
        est_on = np.array([est[j].onset for j in ej])
        pairs.extend((ri[r], ej[c]) for r, c in _match_group(ref_on, est_on, tol))
    pairs.sort()
    used_ref = {r for r, _ in pairs}
    used_est = {e for _, e in pairs}
    return MatchResult(
        pairs,
        [i for i in range(len(ref)) if i not in used_ref],
        [j for j in range(len(est)) if j not in used_est],
        tol,
    )


def precision_recall_f1(match: MatchResult | int, n_ref: int, n_est: int) -> Scores:
    matched = match if isinstance(match, int) else len(match.pairs)
    if n_ref < 0 or n_est < 0:
        raise ValueError("note counts must be >= 0")
    if matched > min(n_ref, n_est):
        raise ValueError(f"{matched} matches exceed min(n_ref={n_ref}, n_est={n_est})")
    if n_ref == 0 and n_est == 0:
        return Scores(1.0, 1.0, 1.0, 0, 0, 0)
    p = matched / n_est if n_est else 0.0
    r = matched / n_ref if n_ref else 0.0
    f = 2 * p * r / (p + r) if p + r > 0 else 0.0
    return Scores(p, r, f, n_ref, n_est, matched)


def evaluate(ref, est, tol: float = DEFAULT_TOLERANCE) -> Scores:
    return precision_recall_f1(match_notes(ref, est, tol), len(ref), len(est))


def aggregate(scores: list[Scores]) -> tuple[Scores, Scores]:
    """Micro average (pooled counts) and macro average (mean of per-file scores)."""
    n_ref = sum(s.n_ref for s in scores)
    n_est = sum(s.n_est for s in scores)
    matched = sum(s.n_matched for s in scores)
    micro = precision_recall_f1(matched, n_ref, n_est)
    if scores:
        macro = Scores(
            float(np.mean([s.precision for s in scores])),
            float(np.mean([s.recall for s in scores])),
            float(np.mean([s.f1 for s in scores])),
            n_ref,
            n_est,
            matched,
        )
    else:
        macro = Scores(1.0, 1.0, 1.0)
    return micro, macro
