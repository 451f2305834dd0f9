"""Balanced subsampling of geocoded corpora.

Three schemes: ``gps_msa`` and ``loc_msa`` draw an equal number of messages
(or users) per metropolitan area; ``gps_county`` additionally apportions each
MSA's quota across its counties in proportion to census population, using
largest-remainder rounding.

Sampling is uniform without replacement over candidates sorted by id, driven
by one PCG64 sub-stream per MSA (stream id ``"sample:<scheme>:<msa>"``), so
results are reproducible and independent of input order or parallel
scheduling.
"""

from __future__ import annotations

import csv
import math
from collections import Counter, defaultdict
from dataclasses import dataclass
from typing import Iterable, Optional

from .errors import DataError, ValidationError
from .geo import GeoIndex
from .stats import rng_stream


@dataclass(frozen=True)
class Candidate:
    """One geocoded message eligible for sampling."""

    message_id: str
    user_id: str
    msa_id: str
    county_id: Optional[str] = None


@dataclass
class Sample:
    scheme: str  # gps_msa | gps_county | loc_msa
    unit: str  # message | user
    members: list[Candidate]
    seed: int
    warnings: list[str]

    def user_ids(self) -> list[str]:
        return sorted({c.user_id for c in self.members})


def _group_by_msa(candidates: Iterable[Candidate]) -> dict[str, list[Candidate]]:
    grouped: dict[str, list[Candidate]] = defaultdict(list)
    for cand in candidates:
        grouped[cand.msa_id].append(cand)
    return grouped


def _user_msa(cands: list[Candidate]) -> str:
    # a user's MSA is the modal MSA of their messages, ties to the lowest id
    counts = Counter(c.msa_id for c in cands)
    return min(counts, key=lambda m: (-counts[m], m))


def _draw(pool: list, n: int, rng) -> list:
    order = rng.permutation(len(pool))
    return [pool[i] for i in order[:n]]


def sample_msa_balanced(
    candidates: list[Candidate],
    unit: str,
    n_per_msa: int,
    seed: int,
    scheme: str = "gps_msa",
    allow_short: bool = False,
) -> Sample:
    """Uniform per-MSA sample of messages, or of users with all their messages.

    Raises DataError naming the first under-populated MSA unless
    ``allow_short`` is set, in which case the whole MSA pool is taken and a
    warning recorded.
    """
    if unit not in ("message", "user"):
        raise ValidationError(f"unit must be 'message' or 'user', got {unit!r}")
    warnings: list[str] = []
    members: list[Candidate] = []

    if unit == "message":
        for msa_id, pool in sorted(_group_by_msa(candidates).items()):
            pool = sorted(pool, key=lambda c: c.message_id)
            if len(pool) < n_per_msa and not allow_short:
                raise DataError(
                    f"MSA {msa_id} has {len(pool)} candidate messages, need {n_per_msa}"
                )
            take = min(n_per_msa, len(pool))
            if take < n_per_msa:
                warnings.append(f"{msa_id}: only {take} of {n_per_msa} messages available")
            rng = rng_stream(seed, f"sample:{scheme}:{msa_id}")
            members.extend(_draw(pool, take, rng))
    else:
        by_user: dict[str, list[Candidate]] = defaultdict(list)
        for cand in candidates:
            by_user[cand.user_id].append(cand)
        users_by_msa: dict[str, list[str]] = defaultdict(list)
        for uid in sorted(by_user):
            users_by_msa[_user_msa(by_user[uid])].append(uid)
        for msa_id, users in sorted(users_by_msa.items()):
            if len(users) < n_per_msa and not allow_short:
                raise DataError(f"MSA {msa_id} has {len(users)} candidate users, need {n_per_msa}")
            take = min(n_per_msa, len(users))
            if take < n_per_msa:
                warnings.append(f"{msa_id}: only {take} of {n_per_msa} users available")
            rng = rng_stream(seed, f"sample:{scheme}:{msa_id}")
            for uid in _draw(users, take, rng):
                members.extend(by_user[uid])

    members.sort(key=lambda c: (c.msa_id, c.user_id, c.message_id))
    return Sample(scheme=scheme, unit=unit, members=members, seed=seed, warnings=warnings)


def largest_remainder(weights, total: int) -> list[int]:
    """Integer apportionment of ``total`` proportional to ``weights``.

    Hamilton's method: floor the exact quotas, then hand remaining units to
    the largest fractional remainders (ties to the lowest index).
    """
    if total < 0:
        raise ValidationError("total must be non-negative")
    weight_sum = float(sum(weights))
    if weight_sum <= 0:
        raise ValidationError("weights must sum to a positive value")
    quotas = [total * w / weight_sum for w in weights]
    alloc = [math.floor(q) for q in quotas]
    leftover = total - sum(alloc)
    order = sorted(range(len(weights)), key=lambda i: (-(quotas[i] - alloc[i]), i))
    for i in order[:leftover]:
        alloc[i] += 1
    return alloc


def _apportion_with_capacity(populations, capacities, total: int) -> tuple[list[int], bool]:
    """Largest-remainder allocation capped by per-county candidate counts.

    Deficits from exhausted counties are redistributed proportionally among
    counties that still have room, repeating until the quota is filled.
    Returns (allocation, redistributed_flag).
    """
    k = len(populations)
    alloc = [0] * k
    remaining = total
    active = [i for i in range(k) if capacities[i] > 0]
    redistributed = False
    while remaining > 0 and active:
        share = largest_remainder([populations[i] for i in active], remaining)
        progressed = False
        for idx, i in enumerate(active):
            room = capacities[i] - alloc[i]
            if share[idx] > room:
                redistributed = True
            take = min(share[idx], room)
            if take > 0:
                alloc[i] += take
                remaining -= take
                progressed = True
        active = [i for i in range(k) if capacities[i] > alloc[i]]
        if not progressed:
            break
    return alloc, redistributed


def sample_county_balanced(
    candidates: list[Candidate],
    index: GeoIndex,
    n_per_msa: int,
    seed: int,
    unit: str = "message",
    allow_short: bool = False,
) -> Sample:
    """Per-MSA sample whose county mix follows census population.

    Message-level by default; user-level assigns each user to the county
    where most of their messages fall (ties to the lowest county id) and
    apportions users instead.
    """
    if unit not in ("message", "user"):
        raise ValidationError(f"unit must be 'message' or 'user', got {unit!r}")
    warnings: list[str] = []
    members: list[Candidate] = []

    for msa_id, pool in sorted(_group_by_msa(candidates).items()):
        counties = index.counties_of(msa_id)
        if not counties:
            raise ValidationError(f"MSA {msa_id} not present in the geographic index")
        county_ids = [c.county_id for c in counties]
        populations = [c.population for c in counties]

        if unit == "message":
            units_by_county: dict[str, list] = defaultdict(list)
            for cand in sorted(pool, key=lambda c: c.message_id):
                units_by_county[cand.county_id].append(cand)
        else:
            by_user: dict[str, list[Candidate]] = defaultdict(list)
            for cand in pool:
                by_user[cand.user_id].append(cand)
            units_by_county = defaultdict(list)
            for uid in sorted(by_user):
                counts = Counter(c.county_id for c in by_user[uid])
                home = min(counts, key=lambda c: (-counts[c], c))
                units_by_county[home].append(uid)

        available = sum(len(units_by_county[cid]) for cid in county_ids)
        if available < n_per_msa and not allow_short:
            raise DataError(f"MSA {msa_id} has {available} candidates, need {n_per_msa}")
        target = min(n_per_msa, available)
        if target < n_per_msa:
            warnings.append(f"{msa_id}: only {target} of {n_per_msa} available")

        capacities = [len(units_by_county[cid]) for cid in county_ids]
        alloc, redistributed = _apportion_with_capacity(populations, capacities, target)
        if redistributed:
            warnings.append(f"{msa_id}: county quotas redistributed (insufficient candidates)")

        for cid, quota in zip(county_ids, alloc):
            if quota == 0:
                continue
            rng = rng_stream(seed, f"sample:gps_county:{msa_id}:{cid}")
            chosen = _draw(units_by_county[cid], quota, rng)
            if unit == "message":
                members.extend(chosen)
            else:
                for uid in chosen:
                    members.extend(c for c in pool if c.user_id == uid)

    members.sort(key=lambda c: (c.msa_id, c.user_id, c.message_id))
    return Sample(scheme="gps_county", unit=unit, members=members, seed=seed, warnings=warnings)


def write_manifest(sample: Sample, path) -> None:
    """Audit manifest: scheme, unit, msa, county, user_id, message_id, seed."""
    with open(path, "w", encoding="utf-8", newline="") as handle:
        writer = csv.writer(handle)
        writer.writerow(["scheme", "unit", "msa", "county", "user_id", "message_id", "seed"])
        for cand in sample.members:
            writer.writerow(
                [
                    sample.scheme,
                    sample.unit,
                    cand.msa_id,
                    cand.county_id or "",
                    cand.user_id,
                    cand.message_id,
                    sample.seed,
                ]
            )
