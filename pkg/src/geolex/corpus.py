"""Corpus ingestion, filter cascade, tokenization, and per-user timelines.

Input format is newline-delimited JSON, one message per line::

    {"id": "m1", "text": "going dahn the street", "lang": "en",
     "coordinates": [-80.0, 40.44],          # [lon, lat] or null
     "timestamp": 1400000000,
     "user": {"id": "u1", "name": "Ada Lovelace", "location": "Pittsburgh, PA",
              "followers_count": 10, "friends_count": 20, "statuses_count": 310},
     "retweeted_status": {...},              # presence alone marks a retweet
     "entities": {"urls": []}}

Only ``user.id`` and a non-empty ``text`` are required; malformed lines are
counted and skipped, never fatal.
"""

from __future__ import annotations

import json
import math
import unicodedata
from collections import Counter, defaultdict
from dataclasses import dataclass, field
from typing import Iterable, Iterator, Optional

from .errors import DataError

# ---------------------------------------------------------------------------
# Domain types
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Message:
    message_id: str
    user_id: str
    text: str
    lang_tag: str  # 2-letter code, or "und" when unknown
    geo: Optional[tuple[float, float]]  # (lat, lon) degrees
    is_retweet: bool
    has_url: bool
    timestamp: float = 0.0


@dataclass(frozen=True)
class UserProfile:
    user_id: str
    display_name: str
    location_field: Optional[str] = None
    followers: int = 0
    followees: int = 0
    statuses_total: int = 0


@dataclass(frozen=True)
class UserTimeline:
    user_id: str
    profile: UserProfile
    messages: tuple[Message, ...]
    token_counts: dict[str, int]
    total_tokens: int


@dataclass
class ParseErrors:
    count: int = 0
    samples: list[str] = field(default_factory=list)  # first few offending lines

    def record(self, line: str, keep: int = 5):
        self.count += 1
        if len(self.samples) < keep:
            self.samples.append(line[:200])


@dataclass
class FilterReport:
    """Per-rule exclusion counts, all expressed in messages removed."""

    input_count: int = 0
    retweet: int = 0
    url: int = 0
    follower_cap: int = 0
    status_cap: int = 0
    top_decile: int = 0
    non_english: int = 0
    output_count: int = 0

    RULES = ("retweet", "url", "follower_cap", "status_cap", "top_decile", "non_english")

    def excluded_total(self) -> int:
        return sum(getattr(self, rule) for rule in self.RULES)

    def reconciles(self) -> bool:
        return self.output_count == self.input_count - self.excluded_total()

    def as_rows(self) -> list[tuple[str, int]]:
        rows = [("input", self.input_count)]
        rows += [(rule, getattr(self, rule)) for rule in self.RULES]
        rows.append(("output", self.output_count))
        return rows

    def summary(self) -> str:
        lines = [f"input messages        {self.input_count}"]
        for rule in self.RULES:
            lines.append(f"removed: {rule:<12} {getattr(self, rule)}")
        lines.append(f"surviving messages    {self.output_count}")
        return "\n".join(lines)


@dataclass
class FilteredCorpus:
    messages: list[Message]
    profiles: dict[str, UserProfile]


@dataclass(frozen=True)
class FilterConfig:
    """Thresholds for the filter cascade; defaults follow the rule set."""

    max_followers: int = 1000
    max_followees: int = 1000
    max_statuses: int = 5000
    top_decile: float = 0.10
    max_non_english: float = 0.10


# ---------------------------------------------------------------------------
# Parsing
# ---------------------------------------------------------------------------


def _first_token_is_rt(text: str) -> bool:
    parts = text.split(None, 1)
    return bool(parts) and parts[0].lower() == "rt"


def _parse_line(line: str) -> tuple[Message, UserProfile]:
    record = json.loads(line)
    user = record["user"]
    user_id = str(user["id"])
    text = str(record["text"])
    if not text.strip():
        raise ValueError("empty text")

    geo = None
    coords = record.get("coordinates")
    if coords is not None:
        lon, lat = float(coords[0]), float(coords[1])
        if not (-90.0 <= lat <= 90.0 and -180.0 <= lon <= 180.0):
            raise ValueError(f"coordinates out of range: {coords}")
        geo = (lat, lon)

    lang = record.get("lang")
    lang_tag = lang.lower() if isinstance(lang, str) and len(lang) == 2 else "und"

    urls = (record.get("entities") or {}).get("urls") or []
    has_url = bool(urls) or "http://" in text or "https://" in text

    message = Message(
        message_id=str(record.get("id", "")),
        user_id=user_id,
        text=text,
        lang_tag=lang_tag,
        geo=geo,
        is_retweet="retweeted_status" in record or _first_token_is_rt(text),
        has_url=has_url,
        timestamp=float(record.get("timestamp", 0.0)),
    )
    profile = UserProfile(
        user_id=user_id,
        display_name=str(user.get("name", "")),
        location_field=user.get("location"),
        followers=int(user.get("followers_count", 0)),
        followees=int(user.get("friends_count", 0)),
        statuses_total=int(user.get("statuses_count", 0)),
    )
    return message, profile


def parse_messages(
    stream: Iterable[str],
) -> tuple[list[Message], list[UserProfile], ParseErrors]:
    """Parse newline-delimited JSON records into messages and profiles.

    Profiles are deduplicated by user id, keeping the last snapshot seen.
    Raises DataError when no line parses at all.
    """
    messages: list[Message] = []
    profiles: dict[str, UserProfile] = {}
    errors = ParseErrors()
    for line in stream:
        line = line.strip()
        if not line:
            continue
        try:
            message, profile = _parse_line(line)
        except (ValueError, KeyError, TypeError, IndexError):
            errors.record(line)
            continue
        messages.append(message)
        profiles[profile.user_id] = profile
    if not messages:
        raise DataError("no parseable messages in input stream")
    return messages, list(profiles.values()), errors


def read_corpus_file(path) -> tuple[list[Message], list[UserProfile], ParseErrors]:
    with open(path, encoding="utf-8") as handle:
        return parse_messages(handle)


def message_to_json(message: Message, profile: UserProfile) -> str:
    """Serialize one message back to the input line format."""
    record = {
        "id": message.message_id,
        "text": message.text,
        "lang": None if message.lang_tag == "und" else message.lang_tag,
        "coordinates": None if message.geo is None else [message.geo[1], message.geo[0]],
        "timestamp": message.timestamp,
        "user": {
            "id": profile.user_id,
            "name": profile.display_name,
            "location": profile.location_field,
            "followers_count": profile.followers,
            "friends_count": profile.followees,
            "statuses_count": profile.statuses_total,
        },
        "entities": {"urls": []},
    }
    return json.dumps(record, ensure_ascii=False, sort_keys=True)


# ---------------------------------------------------------------------------
# Tokenizer
# ---------------------------------------------------------------------------


def _is_punct(char: str) -> bool:
    return unicodedata.category(char).startswith("P")


def _strip_edges(token: str) -> str:
    # leading punctuation stripped, but stop at "#" (hashtags carry lexical
    # content) and "@" (so the mention check downstream can still see it)
    start = 0
    end = len(token)
    while start < end and token[start] not in "#@＠" and _is_punct(token[start]):
        start += 1
    while end > start and _is_punct(token[end - 1]):
        end -= 1
    return token[start:end]


def tokenize(text: str) -> list[str]:
    """Lowercase, split on unicode whitespace, strip edge punctuation.

    "#" prefixes and internal apostrophes survive; "@"-mention tokens are
    dropped; empty tokens are elided.  Deterministic, and idempotent on its
    own output joined by spaces.
    """
    tokens = []
    for raw in text.lower().split():
        token = _strip_edges(raw)
        if not token or token.startswith("@") or token.startswith("＠"):
            continue
        tokens.append(token)
    return tokens


# ---------------------------------------------------------------------------
# Filter cascade
# ---------------------------------------------------------------------------


def filter_corpus(
    messages: list[Message],
    profiles: Iterable[UserProfile],
    config: FilterConfig = FilterConfig(),
) -> tuple[FilteredCorpus, FilterReport]:
    """Apply the spam/automation filter cascade in fixed order.

    Order: retweets, URL-bearing messages, follower/followee cap, lifetime
    status cap, top decile of remaining users by in-dataset message count
    (ties broken by lexicographic user id), then users with more than
    ``max_non_english`` of their remaining messages tagged non-English
    (unknown language counts as English).  Empty output is legal.
    """
    profile_map = {p.user_id: p for p in profiles}
    report = FilterReport(input_count=len(messages))

    remaining: list[Message] = []
    for msg in messages:
        if msg.is_retweet:
            report.retweet += 1
        elif msg.has_url:
            report.url += 1
        else:
            remaining.append(msg)

    def drop_users(bad: set[str], rule: str):
        nonlocal remaining
        kept = []
        for msg in remaining:
            if msg.user_id in bad:
                setattr(report, rule, getattr(report, rule) + 1)
            else:
                kept.append(msg)
        remaining = kept

    over_follow = {
        uid
        for uid, prof in profile_map.items()
        if prof.followers > config.max_followers or prof.followees > config.max_followees
    }
    drop_users(over_follow, "follower_cap")

    over_status = {
        uid for uid, prof in profile_map.items() if prof.statuses_total > config.max_statuses
    }
    drop_users(over_status, "status_cap")

    counts = Counter(msg.user_id for msg in remaining)
    if counts and config.top_decile > 0:
        n_cut = math.ceil(config.top_decile * len(counts))
        ranked = sorted(counts, key=lambda uid: (-counts[uid], uid))
        drop_users(set(ranked[:n_cut]), "top_decile")

    by_user: dict[str, list[str]] = defaultdict(list)
    for msg in remaining:
        by_user[msg.user_id].append(msg.lang_tag)
    non_english = set()
    for uid, tags in by_user.items():
        foreign = sum(1 for tag in tags if tag not in ("en", "und"))
        if foreign / len(tags) > config.max_non_english:
            non_english.add(uid)
    drop_users(non_english, "non_english")

    report.output_count = len(remaining)
    surviving_users = {msg.user_id for msg in remaining}
    corpus = FilteredCorpus(
        messages=remaining,
        profiles={uid: prof for uid, prof in profile_map.items() if uid in surviving_users},
    )
    return corpus, report


# ---------------------------------------------------------------------------
# Timelines
# ---------------------------------------------------------------------------


def build_timelines(corpus: FilteredCorpus) -> list[UserTimeline]:
    """One timeline per surviving user, ordered by user id."""
    grouped: dict[str, list[Message]] = defaultdict(list)
    for msg in corpus.messages:
        grouped[msg.user_id].append(msg)
    timelines = []
    for uid in sorted(grouped):
        msgs = grouped[uid]
        counts: Counter[str] = Counter()
        for msg in msgs:
            counts.update(tokenize(msg.text))
        timelines.append(
            UserTimeline(
                user_id=uid,
                profile=corpus.profiles[uid],
                messages=tuple(msgs),
                token_counts=dict(counts),
                total_tokens=sum(counts.values()),
            )
        )
    return timelines


def first_name(display_name: str) -> Optional[str]:
    """First token of a display name, lowercased; None when blank."""
    parts = display_name.split()
    return parts[0].lower() if parts else None
