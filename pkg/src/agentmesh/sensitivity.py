"""Location, lexicon, reputation, crisis, and mining features.

Everything here is a pure evaluator over explicit inputs: the messenger
applies the actions these functions return, and the admin surface feeds
them stored data.  Positions are inputs reported by clients; no hardware
access happens here.
"""

from __future__ import annotations

import json
import math
import re
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Optional, Protocol

from .errors import MalformedDirectory
from .store import ChatMessage, Store, UserRecord

EARTH_RADIUS_M = 6_371_000.0

_TOKEN_RE = re.compile(r"[^\W_]+", re.UNICODE)


def tokenize(text: str) -> list[str]:
    """Case-folded alphanumeric tokens; punctuation splits, never matches."""
    return _TOKEN_RE.findall(text.casefold())


# ---------------------------------------------------------------------------
# geodesy and geofences
# ---------------------------------------------------------------------------

def haversine_distance(a: tuple[float, float], b: tuple[float, float]) -> float:
    """Great-circle distance in meters on a sphere of radius 6,371,000 m."""
    lat1, lon1 = a
    lat2, lon2 = b
    for lat, lon in (a, b):
        if not (-90.0 <= lat <= 90.0) or not (-180.0 <= lon <= 180.0):
            raise ValueError(f"coordinates out of range: {(lat, lon)}")
    p1, p2 = math.radians(lat1), math.radians(lat2)
    dp = math.radians(lat2 - lat1)
    dl = math.radians(lon2 - lon1)
    h = math.sin(dp / 2) ** 2 + math.cos(p1) * math.cos(p2) * math.sin(dl / 2) ** 2
    return 2.0 * EARTH_RADIUS_M * math.asin(min(1.0, math.sqrt(h)))


@dataclass(frozen=True)
class Geofence:
    label: str
    center: tuple[float, float]
    radius_m: float

    def __post_init__(self):
        if self.radius_m <= 0:
            raise ValueError("radius must be positive")
        lat, lon = self.center
        if not (-90.0 <= lat <= 90.0) or not (-180.0 <= lon <= 180.0):
            raise ValueError(f"center out of range: {self.center}")


@dataclass
class GeofenceState:
    """Per-user arming state; fresh state counts as outside the fence."""

    inside: bool = False


def geofence_check(
    state: GeofenceState, fence: Geofence, position: tuple[float, float]
) -> Optional[dict]:
    """Enter event exactly on the outside-to-inside transition; re-arms on exit."""
    inside_now = haversine_distance(position, fence.center) <= fence.radius_m
    event = None
    if inside_now and not state.inside:
        event = {"event": "geofence-enter", "label": fence.label}
    state.inside = inside_now
    return event


# ---------------------------------------------------------------------------
# lexicon auto-block
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Lexicon:
    banned: frozenset[str]
    good: frozenset[str]

    def __post_init__(self):
        overlap = self.banned & self.good
        if overlap:
            raise ValueError(f"banned and good sets overlap: {sorted(overlap)}")


def load_lexicon(banned_path, good_path) -> Lexicon:
    def read(path) -> frozenset[str]:
        path = Path(path)
        if not path.exists():
            return frozenset()
        return frozenset(
            line.strip().casefold()
            for line in path.read_text("utf-8").splitlines()
            if line.strip()
        )

    return Lexicon(read(banned_path), read(good_path))


@dataclass(frozen=True)
class AutoBlockAction:
    sender: str
    blockers: tuple[str, ...]  # who ends up blocking the sender
    trigger: str               # the banned token that fired


def scan_and_auto_block(
    msg: ChatMessage, lexicon: Lexicon, group_members: Optional[Iterable[str]] = None
) -> Optional[AutoBlockAction]:
    """Whole-token scan of an accepted message.

    Direct messages make the recipient block the sender; group messages make
    every current member except the sender block them.  Matching is by
    token, never substring, so a banned word inside a longer word is clean.
    """
    if not lexicon.banned:
        return None
    for token in tokenize(msg.body):
        if token in lexicon.banned:
            if msg.target_kind == "group":
                members = set(group_members or ())
                blockers = tuple(sorted(members - {msg.sender}))
            else:
                blockers = (msg.target,)
            if not blockers:
                return None
            return AutoBlockAction(sender=msg.sender, blockers=blockers, trigger=token)
    return None


# ---------------------------------------------------------------------------
# reputation-gated auto-unblock
# ---------------------------------------------------------------------------

class ReputationProvider(Protocol):
    def score(self, user_name: str) -> float:
        """Good-behavior score in [0, 1]; raises ProviderUnavailable."""
        ...


class StoredMessageReputation:
    """Offline default: the fraction of the user's most recent stored
    messages that contain at least one good-lexicon token and no banned one.
    """

    def __init__(self, store: Store, lexicon: Lexicon, window: int = 50):
        self.store = store
        self.lexicon = lexicon
        self.window = window

    def score(self, user_name: str) -> float:
        recent: list[ChatMessage] = []
        for msg in self.store.iter_messages():
            if msg.sender == user_name:
                recent.append(msg)
        recent = recent[-self.window:]
        if not recent:
            return 0.0
        good = 0
        for msg in recent:
            tokens = set(tokenize(msg.body))
            if tokens & self.lexicon.good and not tokens & self.lexicon.banned:
                good += 1
        return good / len(recent)


DEFAULT_UNBLOCK_THRESHOLD = 0.8


@dataclass(frozen=True)
class UnblockAction:
    blocker: str
    blocked: str
    score: float


def evaluate_unblock(
    blocker: str,
    blocked: str,
    opted_in: bool,
    provider: ReputationProvider,
    threshold: float = DEFAULT_UNBLOCK_THRESHOLD,
) -> Optional[UnblockAction]:
    """No evaluation at all unless the blocker opted in."""
    if not opted_in:
        return None
    score = provider.score(blocked)
    if score >= threshold:
        return UnblockAction(blocker=blocker, blocked=blocked, score=score)
    return None


# ---------------------------------------------------------------------------
# crisis auto-grouping
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class CrisisAlert:
    alert_id: str
    kind: str  # earthquake | flood | other
    epicenter: tuple[float, float]
    radius_m: float
    at: int

    def __post_init__(self):
        if self.radius_m <= 0:
            raise ValueError("radius must be positive")

    def payload(self) -> dict:
        return {
            "alert_id": self.alert_id,
            "kind": self.kind,
            "epicenter": list(self.epicenter),
            "radius_m": self.radius_m,
            "at": self.at,
        }

    @classmethod
    def from_payload(cls, obj: dict) -> "CrisisAlert":
        return cls(
            str(obj["alert_id"]),
            obj.get("kind", "other"),
            (float(obj["epicenter"][0]), float(obj["epicenter"][1])),
            float(obj["radius_m"]),
            int(obj.get("at", 0)),
        )


def crisis_group_name(alert: CrisisAlert) -> str:
    return f"crisis-{alert.alert_id}"


def crisis_members(alert: CrisisAlert, users: Iterable[UserRecord]) -> set[str]:
    """Users whose last known location lies within the alert radius."""
    out = set()
    for user in users:
        if user.last_location is None:
            continue
        if haversine_distance(user.last_location, alert.epicenter) <= alert.radius_m:
            out.add(user.user_name)
    return out


def read_alert_feed(path) -> list[CrisisAlert]:
    """Newline-delimited JSON alert objects; blank lines ignored."""
    path = Path(path)
    if not path.exists():
        return []
    alerts = []
    for line in path.read_text("utf-8").splitlines():
        line = line.strip()
        if line:
            alerts.append(CrisisAlert.from_payload(json.loads(line)))
    return alerts


# ---------------------------------------------------------------------------
# named-server directory
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ServerEntry:
    display_name: str
    host: str
    port: int


def list_servers(path) -> list[ServerEntry]:
    """Entries in file order; a missing file degrades to an empty list."""
    path = Path(path)
    if not path.exists():
        return []
    try:
        raw = json.loads(path.read_text("utf-8"))
    except (json.JSONDecodeError, UnicodeDecodeError) as exc:
        raise MalformedDirectory(str(exc)) from None
    if not isinstance(raw, list):
        raise MalformedDirectory("directory must be a JSON list")
    out, seen = [], set()
    for item in raw:
        try:
            entry = ServerEntry(str(item["display_name"]), str(item["host"]), int(item["port"]))
        except (KeyError, TypeError, ValueError) as exc:
            raise MalformedDirectory(str(exc)) from None
        if entry.display_name in seen:
            raise MalformedDirectory(f"duplicate display_name {entry.display_name!r}")
        seen.add(entry.display_name)
        out.append(entry)
    return out


# ---------------------------------------------------------------------------
# phrase model and autocomplete
# ---------------------------------------------------------------------------

MAX_NGRAM = 3


@dataclass
class PhraseModel:
    counts: dict[tuple[str, ...], int] = field(default_factory=dict)
    built_from: int = 0


def build_phrase_model(corpus: Iterable[ChatMessage]) -> PhraseModel:
    """Exact frequencies of every 1..3-token n-gram in the bodies."""
    counts: Counter = Counter()
    total = 0
    for msg in corpus:
        total += 1
        tokens = tokenize(msg.body)
        for n in range(1, MAX_NGRAM + 1):
            for i in range(len(tokens) - n + 1):
                counts[tuple(tokens[i:i + n])] += 1
    return PhraseModel(counts=dict(counts), built_from=total)


def autocomplete_suggest(model: PhraseModel, prefix: str, k: int) -> list[str]:
    """Top-k phrases whose leading tokens extend the prefix.

    Ranked by count descending, ties broken lexicographically; an n-gram
    equal to the prefix itself does not extend it.
    """
    if k < 1:
        raise ValueError("k must be >= 1")
    prefix_tokens = tuple(tokenize(prefix))
    candidates = [
        (gram, count)
        for gram, count in model.counts.items()
        if len(gram) > len(prefix_tokens) and gram[:len(prefix_tokens)] == prefix_tokens
    ]
    candidates.sort(key=lambda item: (-item[1], " ".join(item[0])))
    return [" ".join(gram) for gram, _ in candidates[:k]]


# ---------------------------------------------------------------------------
# usage report
# ---------------------------------------------------------------------------

@dataclass
class UsageReport:
    window: tuple[int, int]
    op_counts: dict[str, int]
    top_phrases: list[tuple[str, int]]
    geo_cells: dict[str, int]            # "lat,lon" 1-degree cell -> user count
    block_reasons: dict[str, dict[str, int]]  # blocked user -> reason -> count


def usage_report(
    store: Store, t_from: int, t_to: int, top_n: int = 10
) -> UsageReport:
    """Per-op invocation counts, hot phrases, and user geography, all derived
    from stored data only."""
    op_counts: Counter = Counter()
    for entry in store.scan_actions(t_from, t_to):
        op_counts[entry.action] += 1

    in_window = [m for m in store.iter_messages() if t_from <= m.sent_at <= t_to]
    model = build_phrase_model(in_window)
    ranked = sorted(model.counts.items(), key=lambda item: (-item[1], " ".join(item[0])))
    top_phrases = [(" ".join(gram), count) for gram, count in ranked[:top_n]]

    geo_cells: Counter = Counter()
    for user in store.users.values():
        if user.last_location is not None:
            lat, lon = user.last_location
            geo_cells[f"{math.floor(lat)},{math.floor(lon)}"] += 1

    block_reasons: dict[str, Counter] = {}
    for record in store.blocks.values():
        reason = record.reason or "unspecified"
        block_reasons.setdefault(record.blocked, Counter())[reason] += 1

    return UsageReport(
        window=(t_from, t_to),
        op_counts=dict(op_counts),
        top_phrases=top_phrases,
        geo_cells=dict(geo_cells),
        block_reasons={k: dict(v) for k, v in block_reasons.items()},
    )
