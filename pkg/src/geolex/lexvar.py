"""Sparse additive deviations for finding geographically salient words.

Each group's word distribution is modeled as ``softmax(m + eta)`` where ``m``
is the background log-frequency vector and ``eta`` is a sparse per-group
deviation.  ``eta`` maximizes the multinomial log-likelihood minus an L1
penalty, solved by proximal gradient ascent with soft-thresholding and a
backtracking line search.  At ``lam=0`` the optimum is unique only up to an
additive constant, so it is canonicalized to sum to zero.

Also provides token rates over annotated lexicons and the paired t-test used
to compare per-word rates across two samples.
"""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np
from scipy.special import logsumexp, softmax

from .errors import DataError, NumericalError, ValidationError
from .stats import student_t_two_sided_p

log = logging.getLogger(__name__)

LEXICON_LABELS = ("Nonstandard-Word", "Entity-Name", "Other")


# ---------------------------------------------------------------------------
# Background and deviations
# ---------------------------------------------------------------------------


def fit_background(counts, alpha: float = 0.0) -> np.ndarray:
    """Background log-probabilities: m_w = log((c_w + alpha) / sum(c + alpha))."""
    c = np.asarray(counts, dtype=float)
    if c.size == 0:
        raise DataError("empty vocabulary for background fit")
    if (c < 0).any() or alpha < 0:
        raise ValidationError("counts and alpha must be non-negative")
    smoothed = c + alpha
    total = smoothed.sum()
    if total <= 0:
        raise DataError("background counts sum to zero; set alpha > 0")
    return np.log(smoothed) - math.log(total)


def sage_objective(counts, m, eta, lam: float) -> float:
    """Penalized log-likelihood (up to the constant c.m term)."""
    counts = np.asarray(counts, dtype=float)
    total = counts.sum()
    return float(counts @ eta - total * logsumexp(m + eta) - lam * np.abs(eta).sum())


def sage_gradient(counts, m, eta) -> np.ndarray:
    """Gradient of the smooth (unpenalized) part: c - C * softmax(m + eta)."""
    counts = np.asarray(counts, dtype=float)
    return counts - counts.sum() * softmax(m + eta)


@dataclass(frozen=True)
class KktReport:
    """Subgradient optimality violations at a candidate solution.

    ``zero``: max over eta_w = 0 of |grad_w| - lam (optimal when <= 0).
    ``support``: max over eta_w != 0 of |grad_w - lam * sign(eta_w)|.
    """

    zero: float
    support: float


def kkt_violation(counts, m, eta, lam: float) -> KktReport:
    grad = sage_gradient(counts, m, eta)
    zero_mask = eta == 0.0
    zero = float((np.abs(grad[zero_mask]) - lam).max()) if zero_mask.any() else 0.0
    support = (
        float(np.abs(grad[~zero_mask] - lam * np.sign(eta[~zero_mask])).max())
        if (~zero_mask).any()
        else 0.0
    )
    return KktReport(zero=zero, support=support)


def _soft_threshold(x: np.ndarray, threshold: float) -> np.ndarray:
    return np.sign(x) * np.maximum(np.abs(x) - threshold, 0.0)


def sage_fit(
    counts,
    m,
    lam: float,
    rtol: float = 1e-9,
    kkt_tol: float = 1e-6,
    max_iter: int = 50000,
) -> np.ndarray:
    """Sparse deviation vector for one group against background ``m``.

    Starts at eta = 0 and ascends monotonically, so the returned objective
    can never fall below the objective at the origin.  Convergence requires
    both a relative objective improvement below ``rtol`` and the zero
    coordinates to satisfy their optimality condition within ``kkt_tol``.

    Raises NumericalError (carrying the objective trace) if the iteration
    cap is reached first.
    """
    counts = np.asarray(counts, dtype=float)
    m = np.asarray(m, dtype=float)
    if counts.shape != m.shape:
        raise ValidationError(f"counts/background length mismatch: {counts.shape} vs {m.shape}")
    if (counts < 0).any():
        raise ValidationError("group counts must be non-negative")
    if lam < 0:
        raise ValidationError("penalty weight must be non-negative")
    total = counts.sum()
    if total <= 0:
        raise DataError("group has no tokens")

    eta = np.zeros_like(m)
    objective = sage_objective(counts, m, eta, lam)
    trace = [objective]
    step = 2.0 / total  # inverse curvature bound of the log-partition term
    converged = False
    for _ in range(max_iter):
        grad = counts - total * softmax(m + eta)
        smooth_here = float(counts @ eta - total * logsumexp(m + eta))
        while True:
            candidate = _soft_threshold(eta + step * grad, step * lam)
            delta = candidate - eta
            smooth_new = float(counts @ candidate - total * logsumexp(m + candidate))
            # ascent analogue of the proximal majorization condition
            if smooth_new >= smooth_here + grad @ delta - (delta @ delta) / (2.0 * step):
                break
            step *= 0.5
            if step < 1e-18:
                raise NumericalError("line search step underflow in deviation fit")
        eta = candidate
        new_objective = smooth_new - lam * float(np.abs(eta).sum())
        trace.append(new_objective)
        improvement = new_objective - objective
        objective = new_objective
        if improvement < rtol * max(1.0, abs(objective)):
            grad_now = counts - total * softmax(m + eta)
            zero = eta == 0.0
            if not zero.any() or (np.abs(grad_now[zero]) <= lam + kkt_tol).all():
                converged = True
                break
        step *= 2.0  # let the step recover after conservative backtracks

    if not converged:
        err = NumericalError(f"deviation fit did not converge within {max_iter} iterations")
        err.objective_trace = trace
        raise err
    if lam == 0.0:
        eta = eta - eta.mean()
    return eta


def top_k(eta_by_term: Mapping[str, float], k: int = 25) -> list[str]:
    """Terms with the k largest deviations; ties break lexicographically.

    Only nonzero deviations qualify; a shorter list is returned (with a
    logged warning) when fewer exist.
    """
    nonzero = [(term, value) for term, value in eta_by_term.items() if value != 0.0]
    if len(nonzero) < k:
        log.warning("only %d nonzero deviations available for top-%d list", len(nonzero), k)
    ranked = sorted(nonzero, key=lambda item: (-item[1], item[0]))
    return [term for term, _ in ranked[:k]]


@dataclass
class SageModel:
    """Background plus per-group sparse deviations over one vocabulary."""

    vocab: tuple[str, ...]
    background: np.ndarray
    lam: float
    eta: dict[str, dict[str, float]] = field(default_factory=dict)  # group -> nonzeros

    def group_eta(self, group: str) -> dict[str, float]:
        return self.eta.get(group, {})

    def top_terms(self, group: str, k: int = 25) -> list[str]:
        return top_k(self.group_eta(group), k)


def fit_groups(
    group_counts: Mapping[str, Mapping[str, int]],
    lam: float,
    background_alpha: float = 0.1,
    **fit_kwargs,
) -> SageModel:
    """Fit one deviation vector per group against their pooled background."""
    vocab = tuple(sorted({w for counts in group_counts.values() for w in counts}))
    if not vocab:
        raise DataError("no tokens in any group")
    index = {w: i for i, w in enumerate(vocab)}
    pooled = np.zeros(len(vocab))
    for counts in group_counts.values():
        for word, count in counts.items():
            pooled[index[word]] += count
    m = fit_background(pooled, alpha=background_alpha)
    model = SageModel(vocab=vocab, background=m, lam=lam)
    for group in sorted(group_counts):
        vec = np.zeros(len(vocab))
        for word, count in group_counts[group].items():
            vec[index[word]] = count
        eta = sage_fit(vec, m, lam, **fit_kwargs)
        model.eta[group] = {vocab[i]: float(eta[i]) for i in np.nonzero(eta)[0]}
    return model


# ---------------------------------------------------------------------------
# Annotated lexicons and usage rates
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class AnnotatedLexicon:
    labels: dict[str, str]  # term -> label

    def __post_init__(self):
        for term, label in self.labels.items():
            if label not in LEXICON_LABELS:
                raise ValidationError(
                    f"term {term!r} has label {label!r}; allowed: {LEXICON_LABELS}"
                )

    def terms_with(self, label: str) -> list[str]:
        return sorted(t for t, lab in self.labels.items() if lab == label)


def load_lexicon(path) -> AnnotatedLexicon:
    """CSV of "term,label" rows; an optional header row is skipped."""
    labels = {}
    with open(path, encoding="utf-8", newline="") as handle:
        for row in csv.reader(handle):
            if not row or row[0].startswith("#"):
                continue
            if [cell.strip().lower() for cell in row[:2]] == ["term", "label"]:
                continue
            if len(row) < 2:
                raise ValidationError(f"lexicon row too short: {row!r}")
            labels[row[0].strip()] = row[1].strip()
    return AnnotatedLexicon(labels=labels)


@dataclass(frozen=True)
class LexiconRate:
    rate: float
    total_tokens: int
    per_word: dict[str, float]  # term -> count / total_tokens


def lexicon_rate(token_counts: Mapping[str, int], terms: Sequence[str]) -> LexiconRate:
    """Occurrences of lexicon terms per token, plus per-word rates."""
    total = sum(token_counts.values())
    if total <= 0:
        raise DataError("empty sample: no tokens")
    per_word = {term: token_counts.get(term, 0) / total for term in terms}
    return LexiconRate(
        rate=sum(token_counts.get(term, 0) for term in terms) / total,
        total_tokens=total,
        per_word=per_word,
    )


@dataclass(frozen=True)
class TTestResult:
    t: float
    df: int
    p: float


def paired_t(diffs) -> TTestResult:
    """Paired t-test on per-word rate differences.

    t = mean(d) / (sd(d) / sqrt(n)) with the n-1 denominator in sd; the
    two-sided p-value comes from the Student-t survival function.
    """
    d = np.asarray(diffs, dtype=float)
    if d.size < 2:
        raise DataError(f"paired t-test needs at least 2 pairs, got {d.size}")
    n = d.size
    mean = d.mean()
    sd = d.std(ddof=1)
    if sd == 0.0:
        raise DataError("paired t-test is degenerate: all differences are equal")
    t = float(mean / (sd / math.sqrt(n)))
    return TTestResult(t=t, df=n - 1, p=student_t_two_sided_p(t, n - 1))
