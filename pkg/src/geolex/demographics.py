"""Age and gender inference from first names and message text.

Two layers:

* Name priors induced from birth-record count tables (count of births per
  name, sex, and year).  A name's age distribution is its count profile over
  ``collection_year - birth_year``, and its gender is the female fraction of
  its counts.  Users whose names are far more frequent in the corpus than in
  the birth records (default 100x) are dropped as likely non-names.

* A latent-class model over (age bin, gender) cells in which a user's first
  name and word counts are both drawn from per-cell distributions.  The name
  distribution per cell is built from the birth records and clamped; the
  age-bin prior and per-cell word distributions are learned with EM.
"""

from __future__ import annotations

import logging
import re
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Optional, Sequence

import numpy as np
from scipy import sparse
from scipy.special import logsumexp

from .errors import DataError, NumericalError, ValidationError
from .stats import BootstrapConfig, Interval, bootstrap_ci, rng_stream

log = logging.getLogger(__name__)

SEXES = ("F", "M")


# ---------------------------------------------------------------------------
# Name demographics table
# ---------------------------------------------------------------------------


class NameDemographics:
    """count(name, sex, birth_year) table with derived age/gender lookups.

    Ages are ``collection_year - birth_year``; records falling outside
    [0, max_age] are ignored.  Names are normalized to lowercase.
    """

    def __init__(
        self,
        records: Iterable[tuple[str, str, int, int]],
        collection_year: int,
        max_age: int = 95,
    ):
        self.collection_year = int(collection_year)
        self.max_age = int(max_age)
        n_ages = self.max_age + 1
        table: dict[str, np.ndarray] = {}
        for name, sex, birth_year, count in records:
            if count < 0:
                raise ValidationError(f"negative count for name {name!r}")
            sex = sex.upper()
            if sex not in SEXES:
                raise ValidationError(f"sex must be F or M, got {sex!r}")
            age = self.collection_year - int(birth_year)
            if not 0 <= age <= self.max_age:
                continue
            row = table.setdefault(name.lower(), np.zeros((2, n_ages)))
            row[SEXES.index(sex), age] += count
        self._table = table
        self.total_count = float(sum(row.sum() for row in table.values()))
        if self.total_count <= 0:
            raise DataError("name table holds no usable counts")

    def __contains__(self, name: str) -> bool:
        return name.lower() in self._table

    @property
    def names(self) -> list[str]:
        return sorted(self._table)

    def counts(self, name: str) -> Optional[np.ndarray]:
        """(2, max_age+1) array of counts by sex and age, or None."""
        return self._table.get(name.lower())

    def name_total(self, name: str) -> float:
        row = self.counts(name)
        return float(row.sum()) if row is not None else 0.0


_YEAR_RE = re.compile(r"(\d{4})")


def load_name_tables(directory, collection_year: int, max_age: int = 95) -> NameDemographics:
    """Read per-year "name,sex,count" CSV files; year taken from the filename."""
    directory = Path(directory)
    records = []
    for path in sorted(directory.iterdir()):
        if not path.is_file():
            continue
        match = _YEAR_RE.search(path.name)
        if not match:
            continue
        year = int(match.group(1))
        with open(path, encoding="utf-8") as handle:
            for line in handle:
                line = line.strip()
                if not line or line.startswith("#"):
                    continue
                parts = line.split(",")
                if len(parts) != 3:
                    raise ValidationError(f"{path.name}: bad row {line!r}")
                records.append((parts[0], parts[1], year, int(parts[2])))
    if not records:
        raise DataError(f"no name table files found under {directory}")
    return NameDemographics(records, collection_year=collection_year, max_age=max_age)


# ---------------------------------------------------------------------------
# Name priors
# ---------------------------------------------------------------------------


def name_age_dist(name: str, nd: NameDemographics) -> Optional[np.ndarray]:
    """p(age | name): the name's count profile over ages, normalized.

    Returns None for names absent from the table.
    """
    row = nd.counts(name)
    if row is None:
        return None
    by_age = row.sum(axis=0)
    total = by_age.sum()
    if total <= 0:
        return None
    return by_age / total


def sample_age_dist(
    names: Sequence[str], nd: NameDemographics
) -> tuple[np.ndarray, int]:
    """Aggregate age distribution for a set of users, by summing each user's
    name-induced distribution and normalizing.

    Returns (distribution, number of unresolvable users skipped).
    """
    acc = np.zeros(nd.max_age + 1)
    skipped = 0
    for name in names:
        dist = name_age_dist(name, nd) if name else None
        if dist is None:
            skipped += 1
            continue
        acc += dist
    total = acc.sum()
    if total <= 0:
        raise DataError("no user name resolved against the demographics table")
    return acc / total, skipped


def name_gender(name: str, nd: NameDemographics) -> Optional[float]:
    """p(female | name), or None for unknown names."""
    row = nd.counts(name)
    if row is None:
        return None
    female, male = row[0].sum(), row[1].sum()
    total = female + male
    if total <= 0:
        return None
    return float(female / total)


@dataclass
class RareNameReport:
    input_users: int = 0
    dropped_unknown: int = 0
    dropped_frequent: int = 0
    kept_users: int = 0
    user_fraction_dropped: float = 0.0
    tweet_fraction_dropped: Optional[float] = None


def filter_rare_names(
    names_by_user: Mapping[str, Optional[str]],
    nd: NameDemographics,
    ratio: float = 100.0,
    messages_by_user: Optional[Mapping[str, int]] = None,
) -> tuple[list[str], RareNameReport]:
    """Drop users whose first name is absent from the birth records or at
    least ``ratio`` times more frequent in the corpus than in the records.

    Relative frequency in the corpus is over users carrying a name; in the
    records, over total recorded births.  Returns surviving user ids (sorted)
    and a report of the fractions removed.
    """
    report = RareNameReport(input_users=len(names_by_user))
    corpus_counts = Counter(name for name in names_by_user.values() if name)
    corpus_total = sum(corpus_counts.values())

    kept: list[str] = []
    dropped: list[str] = []
    for user_id in sorted(names_by_user):
        name = names_by_user[user_id]
        total = nd.name_total(name) if name else 0.0
        if not name or total <= 0:
            report.dropped_unknown += 1
            dropped.append(user_id)
            continue
        corpus_rel = corpus_counts[name] / corpus_total
        records_rel = total / nd.total_count
        if corpus_rel >= ratio * records_rel:
            report.dropped_frequent += 1
            dropped.append(user_id)
            continue
        kept.append(user_id)

    report.kept_users = len(kept)
    if report.input_users:
        report.user_fraction_dropped = 1.0 - report.kept_users / report.input_users
    if messages_by_user is not None:
        total_msgs = sum(messages_by_user.get(uid, 0) for uid in names_by_user)
        if total_msgs:
            dropped_msgs = sum(messages_by_user.get(uid, 0) for uid in dropped)
            report.tweet_fraction_dropped = dropped_msgs / total_msgs
    return kept, report


def expected_age(
    names: Sequence[str], nd: NameDemographics, config: BootstrapConfig
) -> Interval:
    """Mean of the aggregate age distribution, with a bootstrap CI over users.

    The aggregate mean equals the mean of per-user expected ages, so the
    bootstrap resamples those per-user values.
    """
    ages = np.arange(nd.max_age + 1)
    per_user = []
    for name in names:
        dist = name_age_dist(name, nd) if name else None
        if dist is not None:
            per_user.append(float(ages @ dist))
    if not per_user:
        raise DataError("no user name resolved against the demographics table")
    if len(per_user) == 1:
        value = per_user[0]
        return Interval(point=value, lo=value, hi=value)
    return bootstrap_ci(per_user, config, stream_id="expected_age")


def female_share(
    names: Sequence[str], nd: NameDemographics, config: BootstrapConfig
) -> Interval:
    """Mean p(female) over resolvable users, with a bootstrap CI."""
    per_user = []
    for name in names:
        p = name_gender(name, nd) if name else None
        if p is not None:
            per_user.append(p)
    if not per_user:
        raise DataError("no user name resolved against the demographics table")
    if len(per_user) == 1:
        return Interval(point=per_user[0], lo=per_user[0], hi=per_user[0])
    return bootstrap_ci(per_user, config, stream_id="female_share")


# ---------------------------------------------------------------------------
# Latent-class model
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class AgeBins:
    """Ordered, disjoint integer intervals covering [0, max_age]."""

    intervals: tuple[tuple[int, int], ...]

    def __post_init__(self):
        prev_hi = -1
        for lo, hi in self.intervals:
            if lo != prev_hi + 1 or hi < lo:
                raise ValidationError(f"age bins must tile [0, max]: bad interval ({lo}, {hi})")
            prev_hi = hi

    @classmethod
    def default(cls, max_age: int = 95) -> "AgeBins":
        return cls(((0, 17), (18, 29), (30, 39), (40, max_age)))

    @property
    def max_age(self) -> int:
        return self.intervals[-1][1]

    @property
    def labels(self) -> list[str]:
        return [f"{lo}-{hi}" for lo, hi in self.intervals]

    def __len__(self) -> int:
        return len(self.intervals)

    def index_of(self, age: int) -> int:
        for i, (lo, hi) in enumerate(self.intervals):
            if lo <= age <= hi:
                return i
        raise ValidationError(f"age {age} outside binned range")


@dataclass(frozen=True)
class EmConfig:
    theta_alpha: float = 0.1
    phi_alpha: float = 0.01
    max_iter: int = 200
    tol: float = 1e-6
    genders: tuple[str, ...] = ("F", "M")

    def __post_init__(self):
        if self.theta_alpha < 0 or self.phi_alpha < 0:
            raise ValidationError("smoothing constants must be non-negative")
        if not self.genders or any(g not in SEXES for g in self.genders):
            raise ValidationError(f"genders must be drawn from {SEXES}")


@dataclass
class DemographicModel:
    """Latent-class parameters and per-user posteriors.

    Cell (a, g) indexes age bin ``a`` and gender ``g``.  ``phi`` is clamped
    from the birth records; ``pi`` and ``theta`` are learned.  The gender
    prior is uniform (0.5 per gender in the standard two-gender setup), never
    learned.
    """

    bins: AgeBins
    genders: tuple[str, ...]
    names: tuple[str, ...]
    vocab: tuple[str, ...]
    pi: np.ndarray  # (A,)
    phi: np.ndarray  # (A, G, N_names)
    theta: np.ndarray  # (A, G, V)
    config: EmConfig
    posteriors: Optional[np.ndarray] = None  # (n_users, A, G)
    log_likelihoods: list[float] = field(default_factory=list)
    converged: bool = False
    name_index: dict[str, int] = field(default_factory=dict)
    vocab_index: dict[str, int] = field(default_factory=dict)

    def __post_init__(self):
        if not self.name_index:
            self.name_index = {n: i for i, n in enumerate(self.names)}
        if not self.vocab_index:
            self.vocab_index = {w: i for i, w in enumerate(self.vocab)}

    @property
    def n_cells(self) -> int:
        return len(self.bins) * len(self.genders)

    def cell_labels(self) -> list[tuple[str, str]]:
        return [(b, g) for b in self.bins.labels for g in self.genders]


def build_phi(
    nd: NameDemographics,
    bins: AgeBins,
    genders: tuple[str, ...] = ("F", "M"),
    alpha: float = 0.01,
    names: Optional[Sequence[str]] = None,
) -> tuple[tuple[str, ...], np.ndarray]:
    """Per-cell name distributions from binned birth-record counts, add-alpha
    smoothed over the name vocabulary.  With ``alpha=0`` a cell where a name
    was never recorded keeps an exact zero.
    """
    if bins.max_age != nd.max_age:
        raise ValidationError(
            f"age bins cover [0, {bins.max_age}] but the name table uses max_age={nd.max_age}"
        )
    name_list = tuple(names) if names is not None else tuple(nd.names)
    if not name_list:
        raise DataError("no names available to build the name distribution")
    A, G, N = len(bins), len(genders), len(name_list)
    counts = np.zeros((A, G, N))
    for j, name in enumerate(name_list):
        row = nd.counts(name)
        if row is None:
            continue
        for a, (lo, hi) in enumerate(bins.intervals):
            for g, gender in enumerate(genders):
                counts[a, g, j] = row[SEXES.index(gender), lo : hi + 1].sum()
    smoothed = counts + alpha
    totals = smoothed.sum(axis=2, keepdims=True)
    if (totals == 0).any():
        raise DataError("a latent cell has no name mass; increase phi_alpha or widen bins")
    return name_list, smoothed / totals


def _users_to_arrays(
    users: Sequence[tuple[str, Mapping[str, int]]],
    name_index: Mapping[str, int],
) -> tuple[np.ndarray, sparse.csr_matrix, tuple[str, ...]]:
    vocab = sorted({word for _, counts in users for word in counts})
    if not vocab:
        raise DataError("empty vocabulary: users carry no token counts")
    vocab_index = {w: i for i, w in enumerate(vocab)}
    name_idx = np.empty(len(users), dtype=np.int64)
    rows, cols, vals = [], [], []
    for i, (name, counts) in enumerate(users):
        key = name.lower()
        if key not in name_index:
            raise DataError(f"user name {name!r} not present in the name table")
        name_idx[i] = name_index[key]
        for word, count in counts.items():
            rows.append(i)
            cols.append(vocab_index[word])
            vals.append(count)
    matrix = sparse.csr_matrix(
        (vals, (rows, cols)), shape=(len(users), len(vocab)), dtype=float
    )
    return name_idx, matrix, tuple(vocab)


def _safe_log(x: np.ndarray) -> np.ndarray:
    with np.errstate(divide="ignore"):
        return np.log(x)


def em_fit(
    users: Sequence[tuple[str, Mapping[str, int]]],
    nd: NameDemographics,
    bins: AgeBins,
    config: EmConfig = EmConfig(),
) -> DemographicModel:
    """Fit the latent-class model by EM with the name distribution clamped.

    The age-bin prior starts uniform; per-cell word distributions start from
    name-prior-weighted counts.  Each E step computes cell posteriors in log
    space; each M step re-estimates the prior and the word distributions with
    add-alpha smoothing.  Stops when the relative log-likelihood change drops
    below ``config.tol`` or after ``config.max_iter`` iterations.

    Raises NumericalError if the log-likelihood ever decreases (beyond 1e-9)
    or turns non-finite.
    """
    if not users:
        raise DataError("cannot fit a model on zero users")
    names, phi = build_phi(nd, bins, config.genders, config.phi_alpha)
    name_index = {n: i for i, n in enumerate(names)}
    name_idx, X, vocab = _users_to_arrays(users, name_index)
    n_users = len(users)
    A, G, V = len(bins), len(config.genders), len(vocab)

    log_phi = _safe_log(phi)
    log_gender = np.full(G, np.log(1.0 / G))
    pi = np.full(A, 1.0 / A)

    # name-only posterior seeds theta with demographically weighted counts
    name_scores = log_phi[:, :, name_idx] + np.log(pi)[:, None, None] + log_gender[None, :, None]
    name_scores = name_scores.reshape(A * G, n_users)
    prior_post = np.exp(name_scores - logsumexp(name_scores, axis=0, keepdims=True))
    theta = np.asarray(prior_post @ X) + config.theta_alpha
    theta /= theta.sum(axis=1, keepdims=True)
    theta = theta.reshape(A, G, V)

    def e_step(pi_now, theta_now):
        log_theta = _safe_log(theta_now).reshape(A * G, V)
        scores = (
            _safe_log(pi_now)[:, None, None] + log_gender[None, :, None] + log_phi[:, :, name_idx]
        ).reshape(A * G, n_users)
        scores = scores + np.asarray(X @ log_theta.T).T
        ll_users = logsumexp(scores, axis=0)
        return np.exp(scores - ll_users), float(ll_users.sum())

    lls: list[float] = []
    posteriors = None
    converged = False
    for iteration in range(config.max_iter):
        posteriors, ll = e_step(pi, theta)
        if not np.isfinite(ll):
            raise NumericalError(f"non-finite log-likelihood at EM iteration {iteration}")
        if lls and ll < lls[-1] - 1e-9:
            raise NumericalError(
                f"log-likelihood decreased at EM iteration {iteration}: {lls[-1]} -> {ll}"
            )
        lls.append(ll)
        if len(lls) > 1 and abs(ll - lls[-2]) / max(abs(lls[-2]), 1e-12) < config.tol:
            converged = True
            break

        cell_mass = posteriors.sum(axis=1)  # (A*G,)
        pi = cell_mass.reshape(A, G).sum(axis=1) / n_users
        theta = np.asarray(posteriors @ X) + config.theta_alpha
        theta /= theta.sum(axis=1, keepdims=True)
        theta = theta.reshape(A, G, V)

    if not converged:
        # iteration cap hit after an M step; refresh posteriors to match
        posteriors, ll = e_step(pi, theta)
        if np.isfinite(ll) and ll >= lls[-1] - 1e-9:
            lls.append(ll)

    return DemographicModel(
        bins=bins,
        genders=config.genders,
        names=names,
        vocab=vocab,
        pi=pi,
        phi=phi,
        theta=theta,
        config=config,
        posteriors=posteriors.T.reshape(n_users, A, G).copy() if posteriors is not None else None,
        log_likelihoods=lls,
        converged=converged,
    )


def em_posterior(
    model: DemographicModel, name: Optional[str], token_counts: Mapping[str, int]
) -> np.ndarray:
    """Posterior over (age bin, gender) cells for one user.

    Words outside the model vocabulary are ignored.  A name outside the
    clamped name distribution falls back to a uniform name term (logged).
    """
    A, G = len(model.bins), len(model.genders)
    log_gender = np.full(G, np.log(1.0 / G))
    scores = _safe_log(model.pi)[:, None] + log_gender[None, :]
    key = name.lower() if name else None
    if key is not None and key in model.name_index:
        scores = scores + _safe_log(model.phi[:, :, model.name_index[key]])
    else:
        log.debug("name %r not in model support; using text-only posterior", name)
    log_theta = _safe_log(model.theta)
    for word, count in token_counts.items():
        idx = model.vocab_index.get(word)
        if idx is not None:
            scores = scores + count * log_theta[:, :, idx]
    flat = scores.reshape(-1)
    post = np.exp(flat - logsumexp(flat))
    return post.reshape(A, G)


def generate_synthetic(
    model: DemographicModel, n_users: int, tokens_per_user: int, seed: int
) -> list[tuple[str, dict[str, int], int, int]]:
    """Forward-sample users from the generative process: draw an age bin from
    the prior, a gender uniformly, a name from the cell's name distribution,
    and word counts from the cell's word distribution.

    Returns (name, token_counts, age_bin_index, gender_index) per user.
    """
    rng = rng_stream(seed, "synthetic_users")
    A, G = len(model.bins), len(model.genders)
    users = []
    for _ in range(n_users):
        a = int(rng.choice(A, p=model.pi))
        g = int(rng.integers(0, G))
        name_j = int(rng.choice(len(model.names), p=model.phi[a, g]))
        counts = rng.multinomial(tokens_per_user, model.theta[a, g])
        token_counts = {
            model.vocab[w]: int(c) for w, c in zip(np.nonzero(counts)[0], counts[counts > 0])
        }
        users.append((model.names[name_j], token_counts, a, g))
    return users


# ---------------------------------------------------------------------------
# Checkpoint format: TSV blocks, diffable across implementations
# ---------------------------------------------------------------------------


def save_model(model: DemographicModel, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("# demographic model checkpoint v1\n")
        fh.write("[meta]\n")
        fh.write("bins\t" + "\t".join(model.bins.labels) + "\n")
        fh.write("genders\t" + "\t".join(model.genders) + "\n")
        fh.write(f"theta_alpha\t{model.config.theta_alpha!r}\n")
        fh.write(f"phi_alpha\t{model.config.phi_alpha!r}\n")
        fh.write("[pi]\n")
        for label, value in zip(model.bins.labels, model.pi):
            fh.write(f"{label}\t{value!r}\n")
        fh.write("[phi]\n")
        for a, b_label in enumerate(model.bins.labels):
            for g, gender in enumerate(model.genders):
                for j, name in enumerate(model.names):
                    fh.write(f"{b_label}\t{gender}\t{name}\t{model.phi[a, g, j]!r}\n")
        fh.write("[theta]\n")
        for a, b_label in enumerate(model.bins.labels):
            for g, gender in enumerate(model.genders):
                for j, word in enumerate(model.vocab):
                    fh.write(f"{b_label}\t{gender}\t{word}\t{model.theta[a, g, j]!r}\n")


def load_model(path, config: EmConfig = EmConfig()) -> DemographicModel:
    sections: dict[str, list[list[str]]] = {}
    current = None
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            line = line.rstrip("\n")
            if not line or line.startswith("#"):
                continue
            if line.startswith("[") and line.endswith("]"):
                current = line[1:-1]
                sections[current] = []
                continue
            sections[current].append(line.split("\t"))

    meta = {row[0]: row[1:] for row in sections.get("meta", [])}
    bin_labels = meta["bins"]
    genders = tuple(meta["genders"])
    intervals = tuple(tuple(int(x) for x in label.split("-")) for label in bin_labels)
    bins = AgeBins(intervals)

    pi = np.array([float(row[1]) for row in sections["pi"]])
    names = tuple(sorted({row[2] for row in sections["phi"]}))
    vocab = tuple(sorted({row[2] for row in sections["theta"]}))
    name_pos = {n: i for i, n in enumerate(names)}
    word_pos = {w: i for i, w in enumerate(vocab)}
    bin_pos = {label: i for i, label in enumerate(bin_labels)}
    gender_pos = {g: i for i, g in enumerate(genders)}

    phi = np.zeros((len(bins), len(genders), len(names)))
    for b_label, gender, name, value in sections["phi"]:
        phi[bin_pos[b_label], gender_pos[gender], name_pos[name]] = float(value)
    theta = np.zeros((len(bins), len(genders), len(vocab)))
    for b_label, gender, word, value in sections["theta"]:
        theta[bin_pos[b_label], gender_pos[gender], word_pos[word]] = float(value)

    return DemographicModel(
        bins=bins,
        genders=genders,
        names=names,
        vocab=vocab,
        pi=pi,
        phi=phi,
        theta=theta,
        config=config,
    )
