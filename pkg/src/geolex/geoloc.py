"""Ten-way text-based geolocation with demographically stratified evaluation.

A ridge-penalized multinomial logistic regression over raw token counts.
The objective and gradient live here (and are verified against finite
differences in the tests); minimization is delegated to L-BFGS-B, whose line
search keeps the recorded objective trace monotone non-increasing.

Cross-validation is user-level: all of a user's text stays in one fold, the
vocabulary is rebuilt from the training folds only, and the ridge weight is
tuned on a development fold that rotates with the test fold.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Mapping, Optional, Sequence

import numpy as np
from scipy import optimize, sparse
from scipy.special import logsumexp

from .errors import DataError, NumericalError, ValidationError
from .stats import BootstrapConfig, bootstrap_ci, rng_stream

log = logging.getLogger(__name__)

DEFAULT_LAMBDA_GRID = (0.01, 0.1, 1.0, 10.0)
DEFAULT_BIN_EDGES = (1, 10, 20, 40, 80, 160, 320)


# ---------------------------------------------------------------------------
# Features
# ---------------------------------------------------------------------------


def featurize(token_counts: Mapping[str, int], vocabulary: Sequence[str]) -> sparse.csr_matrix:
    """Raw counts over a fixed vocabulary; out-of-vocabulary tokens dropped."""
    return featurize_all([token_counts], vocabulary)


def featurize_all(
    counts_list: Sequence[Mapping[str, int]], vocabulary: Sequence[str]
) -> sparse.csr_matrix:
    index = {w: i for i, w in enumerate(vocabulary)}
    rows, cols, vals = [], [], []
    for i, counts in enumerate(counts_list):
        for word, count in counts.items():
            j = index.get(word)
            if j is not None:
                rows.append(i)
                cols.append(j)
                vals.append(count)
    return sparse.csr_matrix(
        (vals, (rows, cols)), shape=(len(counts_list), len(vocabulary)), dtype=float
    )


# ---------------------------------------------------------------------------
# Model
# ---------------------------------------------------------------------------


@dataclass
class GeoClassifier:
    classes: tuple[str, ...]
    vocabulary: tuple[str, ...]
    weights: np.ndarray  # (C, V)
    bias: np.ndarray  # (C,)
    ridge: float
    objective_trace: list[float] = field(default_factory=list)
    converged: bool = True

    def scores(self, X: sparse.csr_matrix) -> np.ndarray:
        return np.asarray(X @ self.weights.T) + self.bias

    def predict_proba(self, X: sparse.csr_matrix) -> np.ndarray:
        scores = self.scores(X)
        return np.exp(scores - logsumexp(scores, axis=1, keepdims=True))

    def predict(self, X: sparse.csr_matrix) -> list[str]:
        return [self.classes[i] for i in self.scores(X).argmax(axis=1)]


def objective_and_gradient(params, X, Y, ridge, n_classes, n_features):
    """Summed multinomial cross-entropy plus (ridge/2)||W||^2; bias unpenalized.

    ``params`` packs W (C*V) then b (C).  Returns (objective, flat gradient).
    """
    W = params[: n_classes * n_features].reshape(n_classes, n_features)
    b = params[n_classes * n_features :]
    scores = np.asarray(X @ W.T) + b
    lse = logsumexp(scores, axis=1)
    ll = float((scores * Y).sum() - lse.sum())
    value = -ll + 0.5 * ridge * float((W * W).sum())
    P = np.exp(scores - lse[:, None])
    R = P - Y
    grad_W = np.asarray((X.T @ R).T) + ridge * W
    grad_b = R.sum(axis=0)
    return value, np.concatenate([grad_W.ravel(), grad_b])


def train(
    X: sparse.csr_matrix,
    labels: Sequence[str],
    ridge: float,
    classes: Optional[Sequence[str]] = None,
    vocabulary: Sequence[str] = (),
    tol: float = 1e-8,
    max_iter: int = 2000,
) -> GeoClassifier:
    """Fit the classifier; every class must appear in the training labels."""
    if ridge <= 0:
        raise ValidationError(f"ridge penalty must be positive, got {ridge}")
    class_list = tuple(classes) if classes is not None else tuple(sorted(set(labels)))
    present = set(labels)
    missing = [c for c in class_list if c not in present]
    if missing:
        raise DataError(f"classes missing from training data: {missing}")
    unknown = present - set(class_list)
    if unknown:
        raise DataError(f"labels outside the class list: {sorted(unknown)}")

    n, V = X.shape
    C = len(class_list)
    class_pos = {c: i for i, c in enumerate(class_list)}
    Y = np.zeros((n, C))
    for i, label in enumerate(labels):
        Y[i, class_pos[label]] = 1.0

    trace: list[float] = []
    x0 = np.zeros(C * V + C)

    def fun(params):
        return objective_and_gradient(params, X, Y, ridge, C, V)

    def callback(params):
        trace.append(fun(params)[0])

    trace.append(fun(x0)[0])
    result = optimize.minimize(
        fun,
        x0,
        jac=True,
        method="L-BFGS-B",
        callback=callback,
        options={"maxiter": max_iter, "ftol": tol, "gtol": 1e-12},
    )
    if not np.isfinite(result.fun):
        raise NumericalError("training objective became non-finite")
    if not result.success and "ITERATIONS" not in str(result.message).upper():
        log.warning("optimizer stopped early: %s", result.message)
    params = result.x
    return GeoClassifier(
        classes=class_list,
        vocabulary=tuple(vocabulary),
        weights=params[: C * V].reshape(C, V),
        bias=params[C * V :],
        ridge=ridge,
        objective_trace=trace,
        converged=bool(result.success),
    )


# ---------------------------------------------------------------------------
# Cross-validation
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class CvUser:
    user_id: str
    msa_id: str
    token_counts: Mapping[str, int]
    n_messages: int


@dataclass(frozen=True)
class UserPrediction:
    user_id: str
    true_msa: str
    predicted_msa: str
    n_messages: int


@dataclass
class CvResult:
    predictions: list[UserPrediction]
    chosen_lambda: dict[int, float]  # test fold -> ridge weight
    folds: dict[str, int]  # user -> fold
    k: int
    seed: int

    def accuracy(self) -> float:
        if not self.predictions:
            raise DataError("no predictions")
        return sum(p.predicted_msa == p.true_msa for p in self.predictions) / len(self.predictions)


def assign_folds(user_ids: Sequence[str], k: int, seed: int) -> dict[str, int]:
    """Deterministic user-level fold assignment: shuffle sorted ids, deal
    round-robin."""
    order = sorted(user_ids)
    rng = rng_stream(seed, "cv_folds")
    perm = rng.permutation(len(order))
    return {order[j]: int(i % k) for i, j in enumerate(perm)}


def cross_validate(
    users: Sequence[CvUser],
    k: int,
    lambda_grid: Sequence[float] = DEFAULT_LAMBDA_GRID,
    seed: int = 0,
    tol: float = 1e-8,
    max_iter: int = 2000,
) -> CvResult:
    """Out-of-fold predictions for every user.

    For test fold i the development fold is (i+1) mod k; the remaining k-2
    folds train one model per grid value, the development accuracy picks the
    ridge weight (ties to the smaller value), and that model predicts the
    test fold.  Test-fold tokens never reach the vocabulary.
    """
    if k < 3:
        raise ValidationError(f"need k >= 3 folds (train/dev/test), got {k}")
    if len({u.user_id for u in users}) != len(users):
        raise ValidationError("duplicate user ids in cross-validation input")
    if not lambda_grid:
        raise ValidationError("empty ridge grid")
    classes = tuple(sorted({u.msa_id for u in users}))
    folds = assign_folds([u.user_id for u in users], k, seed)
    by_fold: dict[int, list[CvUser]] = {i: [] for i in range(k)}
    for user in users:
        by_fold[folds[user.user_id]].append(user)
    for i in range(k):
        by_fold[i].sort(key=lambda u: u.user_id)

    predictions: list[UserPrediction] = []
    chosen: dict[int, float] = {}
    for test_fold in range(k):
        dev_fold = (test_fold + 1) % k
        train_users = [
            u for i in range(k) if i not in (test_fold, dev_fold) for u in by_fold[i]
        ]
        dev_users = by_fold[dev_fold]
        test_users = by_fold[test_fold]
        missing = set(classes) - {u.msa_id for u in train_users}
        if missing:
            raise DataError(
                f"fold {test_fold}: classes {sorted(missing)} absent from training "
                "portion; use a larger sample or fewer folds"
            )
        vocabulary = tuple(sorted({w for u in train_users for w in u.token_counts}))
        if not vocabulary:
            raise DataError(f"fold {test_fold}: empty training vocabulary")
        X_train = featurize_all([u.token_counts for u in train_users], vocabulary)
        y_train = [u.msa_id for u in train_users]
        X_dev = featurize_all([u.token_counts for u in dev_users], vocabulary)

        best = None
        for lam in lambda_grid:
            model = train(
                X_train, y_train, lam, classes=classes, vocabulary=vocabulary,
                tol=tol, max_iter=max_iter,
            )
            dev_pred = model.predict(X_dev)
            dev_acc = (
                sum(p == u.msa_id for p, u in zip(dev_pred, dev_users)) / len(dev_users)
                if dev_users
                else 0.0
            )
            if best is None or dev_acc > best[0]:
                best = (dev_acc, lam, model)
        _, lam, model = best
        chosen[test_fold] = lam

        X_test = featurize_all([u.token_counts for u in test_users], vocabulary)
        for user, pred in zip(test_users, model.predict(X_test)):
            predictions.append(
                UserPrediction(
                    user_id=user.user_id,
                    true_msa=user.msa_id,
                    predicted_msa=pred,
                    n_messages=user.n_messages,
                )
            )
    predictions.sort(key=lambda p: p.user_id)
    return CvResult(predictions=predictions, chosen_lambda=chosen, folds=folds, k=k, seed=seed)


# ---------------------------------------------------------------------------
# Usage bins and stratified accuracy
# ---------------------------------------------------------------------------


def bin_labels(edges: Sequence[int] = DEFAULT_BIN_EDGES) -> list[str]:
    labels = [f"[{lo},{hi})" for lo, hi in zip(edges, edges[1:])]
    labels.append(f"[{edges[-1]},+)")
    return labels


def usage_bins(
    counts_by_user: Mapping[str, int], edges: Sequence[int] = DEFAULT_BIN_EDGES
) -> dict[str, str]:
    """Half-open message-count bins per user; the last bin is unbounded.

    Users below the first edge are excluded with a warning.
    """
    if list(edges) != sorted(set(edges)):
        raise ValidationError("bin edges must be strictly increasing")
    labels = bin_labels(edges)
    assigned: dict[str, str] = {}
    excluded = 0
    for user_id, count in counts_by_user.items():
        if count < edges[0]:
            excluded += 1
            continue
        position = int(np.searchsorted(edges, count, side="right")) - 1
        assigned[user_id] = labels[position]
    if excluded:
        log.warning("%d users below the first usage-bin edge were excluded", excluded)
    return assigned


@dataclass(frozen=True)
class EvalRow:
    stratum: str
    usage_bin: str
    n_users: int
    accuracy: Optional[float]
    ci_lo: Optional[float]
    ci_hi: Optional[float]


@dataclass
class EvalTable:
    rows: list[EvalRow]

    def pooled_accuracy(self) -> float:
        total = sum(r.n_users for r in self.rows)
        if total == 0:
            raise DataError("evaluation table is empty")
        return sum(r.accuracy * r.n_users for r in self.rows if r.n_users) / total


def stratified_accuracy(
    predictions: Sequence[UserPrediction],
    strata_by_user: Mapping[str, str],
    bins_by_user: Mapping[str, str],
    config: BootstrapConfig,
    bin_order: Optional[Sequence[str]] = None,
) -> EvalTable:
    """Accuracy per (stratum, usage bin) with bootstrap CIs over users.

    Every observed stratum x bin combination gets a row; empty cells carry
    n=0 and no interval.  Users missing a stratum or bin are skipped.
    """
    strata = sorted(set(strata_by_user.values()))
    bins_present = set(bins_by_user.values())
    if bin_order is not None:
        bins_ordered = [b for b in bin_order if b in bins_present]
    else:
        bins_ordered = sorted(bins_present)

    outcomes: dict[tuple[str, str], list[int]] = {}
    for pred in predictions:
        stratum = strata_by_user.get(pred.user_id)
        bin_label = bins_by_user.get(pred.user_id)
        if stratum is None or bin_label is None:
            continue
        outcomes.setdefault((stratum, bin_label), []).append(
            int(pred.predicted_msa == pred.true_msa)
        )

    rows: list[EvalRow] = []
    for stratum in strata:
        for bin_label in bins_ordered:
            cell = outcomes.get((stratum, bin_label), [])
            if not cell:
                rows.append(EvalRow(stratum, bin_label, 0, None, None, None))
                continue
            if len(cell) == 1:
                value = float(cell[0])
                rows.append(EvalRow(stratum, bin_label, 1, value, value, value))
                continue
            interval = bootstrap_ci(
                cell, config, stream_id=f"stratacc:{stratum}:{bin_label}"
            )
            rows.append(
                EvalRow(
                    stratum=stratum,
                    usage_bin=bin_label,
                    n_users=len(cell),
                    accuracy=interval.point,
                    ci_lo=interval.lo,
                    ci_hi=interval.hi,
                )
            )
    return EvalTable(rows=rows)
