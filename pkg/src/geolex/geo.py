"""Reverse geocoding of GPS points to counties, location-field matching to
metropolitan areas, and county-level representativeness metrics.

County boundaries arrive as a GeoJSON FeatureCollection whose features carry
``county_id``, ``msa_id``, and ``population`` properties.  The gazetteer is a
CSV of (city, state_code, msa_id) rows.  Point-in-polygon uses even-odd ray
casting in plain lon/lat coordinates; counties are small enough that
great-circle corrections would change nothing.
"""

from __future__ import annotations

import csv
import json
from collections import Counter, defaultdict
from dataclasses import dataclass, field
from typing import Iterable, Optional, Sequence

import numpy as np

from .errors import DataError, ValidationError

Ring = list[tuple[float, float]]  # (lon, lat) vertices, closed


@dataclass(frozen=True)
class County:
    county_id: str
    msa_id: str
    population: float
    rings: tuple[tuple[tuple[float, float], ...], ...]
    bbox: tuple[float, float, float, float]  # lon_min, lat_min, lon_max, lat_max


@dataclass
class GeoIndex:
    counties: list[County]
    gazetteer: dict[str, set[tuple[str, str]]]  # city -> {(state_code, msa_id)}
    msa_states: dict[str, set[str]] = field(default_factory=dict)

    def __post_init__(self):
        self.counties.sort(key=lambda c: c.county_id)
        self._by_msa: dict[str, list[County]] = defaultdict(list)
        for county in self.counties:
            self._by_msa[county.msa_id].append(county)

    @property
    def msa_ids(self) -> list[str]:
        return sorted(self._by_msa)

    def counties_of(self, msa_id: str) -> list[County]:
        return self._by_msa.get(msa_id, [])


# ---------------------------------------------------------------------------
# Loading
# ---------------------------------------------------------------------------


def _close_check(ring: Ring, county_id: str):
    if len(ring) < 4 or ring[0] != ring[-1]:
        raise ValidationError(f"county {county_id}: polygon ring not closed")


def _feature_rings(geometry: dict, county_id: str) -> list[Ring]:
    gtype = geometry.get("type")
    if gtype == "Polygon":
        polys = [geometry["coordinates"]]
    elif gtype == "MultiPolygon":
        polys = geometry["coordinates"]
    else:
        raise ValidationError(f"county {county_id}: unsupported geometry type {gtype!r}")
    rings = []
    for poly in polys:
        for raw in poly:
            ring = [(float(lon), float(lat)) for lon, lat in raw]
            _close_check(ring, county_id)
            rings.append(ring)
    return rings


def load_counties(geojson: dict) -> list[County]:
    counties = []
    seen = set()
    for feature in geojson.get("features", []):
        props = feature.get("properties", {})
        try:
            county_id = str(props["county_id"])
            msa_id = str(props["msa_id"])
            population = float(props["population"])
        except KeyError as exc:
            raise ValidationError(f"county feature missing property {exc}") from exc
        if population <= 0:
            raise ValidationError(f"county {county_id}: population must be positive")
        if county_id in seen:
            raise ValidationError(f"county {county_id} appears twice")
        seen.add(county_id)
        rings = _feature_rings(feature["geometry"], county_id)
        lons = [p[0] for ring in rings for p in ring]
        lats = [p[1] for ring in rings for p in ring]
        counties.append(
            County(
                county_id=county_id,
                msa_id=msa_id,
                population=population,
                rings=tuple(tuple(ring) for ring in rings),
                bbox=(min(lons), min(lats), max(lons), max(lats)),
            )
        )
    if not counties:
        raise ValidationError("county file contains no features")
    return counties


def load_gazetteer(rows: Iterable[Sequence[str]]) -> dict[str, set[tuple[str, str]]]:
    gazetteer: dict[str, set[tuple[str, str]]] = defaultdict(set)
    for row in rows:
        if not row or len(row) < 3:
            continue
        city, state, msa_id = row[0], row[1], row[2]
        gazetteer[normalize_location(city)].add((state.strip().lower(), msa_id.strip()))
    return dict(gazetteer)


def load_geo_index(counties_path, gazetteer_path) -> GeoIndex:
    with open(counties_path, encoding="utf-8") as handle:
        counties = load_counties(json.load(handle))
    with open(gazetteer_path, encoding="utf-8", newline="") as handle:
        reader = csv.reader(handle)
        rows = [row for row in reader if row and not row[0].startswith("#")]
    if rows and [cell.strip().lower() for cell in rows[0][:3]] == ["city", "state_code", "msa_id"]:
        rows = rows[1:]
    gazetteer = load_gazetteer(rows)
    msa_states: dict[str, set[str]] = defaultdict(set)
    for entries in gazetteer.values():
        for state, msa_id in entries:
            msa_states[msa_id].add(state)
    return GeoIndex(counties=counties, gazetteer=gazetteer, msa_states=dict(msa_states))


# ---------------------------------------------------------------------------
# Point in polygon
# ---------------------------------------------------------------------------

_EDGE_EPS = 1e-12


def _on_segment(px, py, x1, y1, x2, y2) -> bool:
    cross = (x2 - x1) * (py - y1) - (y2 - y1) * (px - x1)
    scale = max(abs(x2 - x1), abs(y2 - y1), 1.0)
    if abs(cross) > _EDGE_EPS * scale:
        return False
    return min(x1, x2) - _EDGE_EPS <= px <= max(x1, x2) + _EDGE_EPS and (
        min(y1, y2) - _EDGE_EPS <= py <= max(y1, y2) + _EDGE_EPS
    )


def point_in_county(lat: float, lon: float, county: County) -> bool:
    """Even-odd ray casting over all rings; boundary points count as inside.

    Holes need no special treatment: a point inside a hole crosses both the
    outer and the hole boundary, so its crossing count is even.
    """
    lon_min, lat_min, lon_max, lat_max = county.bbox
    if not (lon_min - _EDGE_EPS <= lon <= lon_max + _EDGE_EPS):
        return False
    if not (lat_min - _EDGE_EPS <= lat <= lat_max + _EDGE_EPS):
        return False
    inside = False
    for ring in county.rings:
        for i in range(len(ring) - 1):
            x1, y1 = ring[i]
            x2, y2 = ring[i + 1]
            if _on_segment(lon, lat, x1, y1, x2, y2):
                return True
            if (y1 > lat) != (y2 > lat):
                x_cross = x1 + (lat - y1) * (x2 - x1) / (y2 - y1)
                if lon < x_cross:
                    inside = not inside
    return inside


def reverse_geocode(point: tuple[float, float], index: GeoIndex) -> Optional[str]:
    """County containing (lat, lon), or None; boundary ties go to the lowest
    county id (counties are kept sorted, so the first hit wins)."""
    lat, lon = point
    if not (-90.0 <= lat <= 90.0) or not (-180.0 <= lon <= 180.0):
        raise ValidationError(f"coordinates out of range: ({lat}, {lon})")
    for county in index.counties:
        if point_in_county(lat, lon, county):
            return county.county_id
    return None


# ---------------------------------------------------------------------------
# Location field matching
# ---------------------------------------------------------------------------


def normalize_location(raw: str) -> str:
    text = " ".join(raw.strip().lower().split())
    return text.rstrip(".,;:!? ")


def match_location_field(raw: Optional[str], index: GeoIndex) -> Optional[str]:
    """Match a profile location string of the form "city" or "city, ST".

    Exact matching after normalization only; non-standard toponyms are
    deliberate false negatives.  A bare city name matches only when every
    gazetteer entry for it agrees on a single metropolitan area.
    """
    if not raw:
        return None
    text = normalize_location(raw)
    if not text:
        return None
    if "," in text:
        city_part, _, state_part = text.partition(",")
        city = normalize_location(city_part)
        state = state_part.strip()
        if len(state) != 2 or not state.isalpha():
            return None
        entries = index.gazetteer.get(city)
        if not entries:
            return None
        for entry_state, msa_id in entries:
            if entry_state == state:
                return msa_id
        return None
    entries = index.gazetteer.get(text)
    if not entries:
        return None
    msas = {msa_id for _, msa_id in entries}
    return msas.pop() if len(msas) == 1 else None


# ---------------------------------------------------------------------------
# Representativeness
# ---------------------------------------------------------------------------


def l1_distance(p, t) -> float:
    """Sum of absolute share differences between two distributions, in [0, 2]."""
    p = np.asarray(p, dtype=float)
    t = np.asarray(t, dtype=float)
    if p.shape != t.shape:
        raise ValidationError(f"length mismatch: {p.shape} vs {t.shape}")
    for name, vec in (("first", p), ("second", t)):
        if abs(vec.sum() - 1.0) > 1e-6:
            raise ValidationError(f"{name} vector sums to {vec.sum():.8f}, not 1")
        if (vec < 0).any():
            raise ValidationError(f"{name} vector has negative entries")
    return float(np.abs(p - t).sum())


@dataclass(frozen=True)
class CountyShares:
    msa_id: str
    county_id: str
    population_share: float
    user_share: float
    tweet_share: float


@dataclass
class RepresentationTable:
    rows: list[CountyShares]
    l1_users: dict[str, float]  # msa -> L1(population, users)
    l1_tweets: dict[str, float]
    missing_msas: list[str]  # MSAs with zero sampled tweets


def representation_table(
    assignments: Iterable[tuple[str, str]], index: GeoIndex
) -> RepresentationTable:
    """County-level population/user/tweet shares per metropolitan area.

    ``assignments`` yields (user_id, county_id) pairs, one per geocoded
    message.  Users are counted once per county they appear in.  MSAs with no
    sampled messages are listed as missing rather than emitting NaN shares.
    """
    county_map = {c.county_id: c for c in index.counties}
    tweet_counts: Counter[str] = Counter()
    users_by_county: dict[str, set[str]] = defaultdict(set)
    for user_id, county_id in assignments:
        if county_id not in county_map:
            raise ValidationError(f"unknown county id {county_id!r}")
        tweet_counts[county_id] += 1
        users_by_county[county_id].add(user_id)

    rows: list[CountyShares] = []
    l1_users: dict[str, float] = {}
    l1_tweets: dict[str, float] = {}
    missing: list[str] = []
    for msa_id in index.msa_ids:
        counties = index.counties_of(msa_id)
        pop = np.array([c.population for c in counties], dtype=float)
        tweets = np.array([tweet_counts[c.county_id] for c in counties], dtype=float)
        users = np.array([len(users_by_county[c.county_id]) for c in counties], dtype=float)
        if tweets.sum() == 0:
            missing.append(msa_id)
            continue
        pop_share = pop / pop.sum()
        tweet_share = tweets / tweets.sum()
        user_share = users / users.sum()
        for i, county in enumerate(counties):
            rows.append(
                CountyShares(
                    msa_id=msa_id,
                    county_id=county.county_id,
                    population_share=float(pop_share[i]),
                    user_share=float(user_share[i]),
                    tweet_share=float(tweet_share[i]),
                )
            )
        l1_users[msa_id] = l1_distance(pop_share, user_share)
        l1_tweets[msa_id] = l1_distance(pop_share, tweet_share)
    if not rows and missing:
        raise DataError("no metropolitan area received any geocoded messages")
    return RepresentationTable(
        rows=rows, l1_users=l1_users, l1_tweets=l1_tweets, missing_msas=missing
    )
