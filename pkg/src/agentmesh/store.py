"""Durable storage: user/group/block catalog, append-only message segments
with per-conversation indexes, agent action logs, and the maintenance
procedures (log purge, group archival, index review).

On-disk layout under one directory:

    catalog.json     users, groups, blocks, friends (sorted-key JSON snapshot)
    seg-NNNN.log     append-only message segments, length-prefixed JSON records
    tombstones.log   per-viewer deletion markers, same framing
    actions.log      agent action log entries, same framing
    arc-<group>.bin  archive bundles (dictionary-coded senders, delta timestamps)

Message records never change after append; per-viewer deletion is a
tombstone record, so restarts preserve exactly what each viewer can see.
"""

from __future__ import annotations

import os
import re
import struct
import threading
import time
from collections import deque
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator, Optional

from .acl import canonical_json, now_ms
from .errors import IntegrityError

_LENGTH = struct.Struct(">I")
_ARC_FIXED = struct.Struct(">HIq")  # sender index, id delta, timestamp delta

DIRECT = "user"
GROUP = "group"


@dataclass
class UserRecord:
    user_name: str
    password_digest: str
    salt: str
    status: str = "offline"  # online | offline
    last_location: Optional[tuple[float, float]] = None
    auto_unblock_opt_in: bool = False

    def payload(self) -> dict:
        return {
            "user_name": self.user_name,
            "password_digest": self.password_digest,
            "salt": self.salt,
            "last_location": list(self.last_location) if self.last_location else None,
            "auto_unblock_opt_in": self.auto_unblock_opt_in,
        }

    @classmethod
    def from_payload(cls, obj: dict) -> "UserRecord":
        loc = obj.get("last_location")
        return cls(
            user_name=obj["user_name"],
            password_digest=obj["password_digest"],
            salt=obj["salt"],
            status="offline",  # presence is runtime state
            last_location=tuple(loc) if loc else None,
            auto_unblock_opt_in=bool(obj.get("auto_unblock_opt_in", False)),
        )


@dataclass
class GroupRecord:
    group_name: str
    members: set[str]
    created_at: int
    archived: bool = False

    def payload(self) -> dict:
        return {
            "group_name": self.group_name,
            "members": sorted(self.members),
            "created_at": self.created_at,
            "archived": self.archived,
        }

    @classmethod
    def from_payload(cls, obj: dict) -> "GroupRecord":
        return cls(obj["group_name"], set(obj["members"]), obj["created_at"], obj.get("archived", False))


@dataclass
class BlockRecord:
    blocker: str
    blocked: str
    reason: Optional[str]
    since: int

    def payload(self) -> dict:
        return {"blocker": self.blocker, "blocked": self.blocked, "reason": self.reason, "since": self.since}

    @classmethod
    def from_payload(cls, obj: dict) -> "BlockRecord":
        return cls(obj["blocker"], obj["blocked"], obj.get("reason"), obj["since"])


@dataclass
class ChatMessage:
    message_id: int
    sender: str
    target_kind: str  # "user" | "group"
    target: str
    body: str
    sent_at: int
    deleted_for: set[str] = field(default_factory=set)

    def payload(self) -> dict:
        # tombstones stay out: segments are append-only
        return {
            "message_id": self.message_id,
            "sender": self.sender,
            "target_kind": self.target_kind,
            "target": self.target,
            "body": self.body,
            "sent_at": self.sent_at,
        }

    @classmethod
    def from_payload(cls, obj: dict) -> "ChatMessage":
        return cls(
            obj["message_id"], obj["sender"], obj["target_kind"],
            obj["target"], obj["body"], obj["sent_at"],
        )


@dataclass
class ActionEntry:
    at: int
    agent: str
    action: str
    outcome: str  # ok | error

    def payload(self) -> dict:
        return {"at": self.at, "agent": self.agent, "action": self.action, "outcome": self.outcome}

    @classmethod
    def from_payload(cls, obj: dict) -> "ActionEntry":
        return cls(obj["at"], obj["agent"], obj["action"], obj["outcome"])


@dataclass
class IndexStat:
    key: str
    hits: int
    selectivity: float
    drop_candidate: bool


@dataclass
class IndexReviewReport:
    window_ms: int
    stats: list[IndexStat]
    rebuilt: list[str]


def _frame(obj: dict) -> bytes:
    payload = canonical_json(obj)
    return _LENGTH.pack(len(payload)) + payload


def _iter_frames(path: Path) -> Iterator[tuple[int, dict]]:
    """Yields (byte offset, record) for every complete frame in the file.

    A torn tail (partial final record after a crash) is ignored.
    """
    import json

    if not path.exists():
        return
    data = path.read_bytes()
    pos = 0
    while pos + _LENGTH.size <= len(data):
        (length,) = _LENGTH.unpack_from(data, pos)
        end = pos + _LENGTH.size + length
        if end > len(data):
            break
        yield pos, json.loads(data[pos + _LENGTH.size:end].decode("utf-8"))
        pos = end


def _sanitize(name: str) -> str:
    return re.sub(r"[^A-Za-z0-9._-]", lambda m: f"%{ord(m.group(0)):02x}", name)


def conversation_key(kind: str, a: str, b: Optional[str] = None) -> tuple:
    """Canonical key: direct conversations are unordered pairs."""
    if kind == GROUP:
        return (GROUP, a)
    if b is None:
        raise ValueError("direct key needs both participants")
    lo, hi = sorted((a, b))
    return (DIRECT, lo, hi)


def render_key(key: tuple) -> str:
    return f"{key[0]}:" + "|".join(key[1:])


class Store:
    """Single-writer, many-reader store rooted at one directory."""

    def __init__(self, root, segment_max_bytes: int = 1 << 20, durable: bool = True):
        self.root = Path(root)
        self.root.mkdir(parents=True, exist_ok=True)
        self.segment_max_bytes = segment_max_bytes
        self.durable = durable
        self._lock = threading.RLock()

        self.users: dict[str, UserRecord] = {}
        self.groups: dict[str, GroupRecord] = {}
        self.blocks: dict[tuple[str, str], BlockRecord] = {}
        self.friends: dict[str, set[str]] = {}

        self._tombstones: dict[int, set[str]] = {}
        self._index: Optional[dict[tuple, list[tuple[int, int, str, int]]]] = {}
        self._by_id: dict[int, tuple[str, int]] = {}
        self._hits: dict[tuple, deque] = {}
        self._next_id = 1

        self._load_catalog()
        self._scan_segments()
        self._load_tombstones()
        self._seg_handle = None
        self._open_active_segment()
        self._actions_handle = open(self.root / "actions.log", "ab")

    # ------------------------------------------------------------------
    # catalog
    # ------------------------------------------------------------------

    def _load_catalog(self) -> None:
        import json

        path = self.root / "catalog.json"
        if not path.exists():
            return
        obj = json.loads(path.read_text("utf-8"))
        self.users = {u["user_name"]: UserRecord.from_payload(u) for u in obj.get("users", [])}
        self.groups = {g["group_name"]: GroupRecord.from_payload(g) for g in obj.get("groups", [])}
        self.blocks = {
            (b["blocker"], b["blocked"]): BlockRecord.from_payload(b)
            for b in obj.get("blocks", [])
        }
        self.friends = {k: set(v) for k, v in obj.get("friends", {}).items()}

    def save_catalog(self) -> None:
        with self._lock:
            obj = {
                "users": [self.users[k].payload() for k in sorted(self.users)],
                "groups": [self.groups[k].payload() for k in sorted(self.groups)],
                "blocks": [
                    self.blocks[k].payload() for k in sorted(self.blocks)
                ],
                "friends": {k: sorted(v) for k, v in sorted(self.friends.items())},
            }
            tmp = self.root / "catalog.json.tmp"
            tmp.write_bytes(canonical_json(obj) + b"\n")
            if self.durable:
                with open(tmp, "rb") as fh:
                    os.fsync(fh.fileno())
            os.replace(tmp, self.root / "catalog.json")

    def add_user(self, record: UserRecord) -> None:
        with self._lock:
            if record.user_name in self.users:
                raise IntegrityError(f"user {record.user_name} exists")
            self.users[record.user_name] = record
            self.save_catalog()

    def add_group(self, record: GroupRecord) -> None:
        with self._lock:
            if record.group_name in self.groups:
                raise IntegrityError(f"group {record.group_name} exists")
            for member in record.members:
                if member not in self.users:
                    raise IntegrityError(f"member {member} unknown")
            self.groups[record.group_name] = record
            self.save_catalog()

    def add_block(self, record: BlockRecord) -> None:
        with self._lock:
            if record.blocker not in self.users or record.blocked not in self.users:
                raise IntegrityError("block references unknown user")
            self.blocks[(record.blocker, record.blocked)] = record
            self.save_catalog()

    def remove_block(self, blocker: str, blocked: str) -> None:
        with self._lock:
            self.blocks.pop((blocker, blocked), None)
            self.save_catalog()

    def blocked_by(self, blocker: str) -> dict[str, BlockRecord]:
        with self._lock:
            return {
                rec.blocked: rec
                for (br, _), rec in self.blocks.items()
                if br == blocker
            }

    def has_block(self, blocker: str, blocked: str) -> bool:
        with self._lock:
            return (blocker, blocked) in self.blocks

    def add_friends(self, a: str, b: str) -> None:
        with self._lock:
            changed = b not in self.friends.get(a, set())
            self.friends.setdefault(a, set()).add(b)
            self.friends.setdefault(b, set()).add(a)
            if changed:
                self.save_catalog()

    # ------------------------------------------------------------------
    # message log
    # ------------------------------------------------------------------

    def _segment_paths(self) -> list[Path]:
        return sorted(self.root.glob("seg-*.log"))

    def _scan_segments(self) -> None:
        for path in self._segment_paths():
            for offset, obj in _iter_frames(path):
                msg = ChatMessage.from_payload(obj)
                self._admit(msg, path.name, offset)

    def _admit(self, msg: ChatMessage, seg: str, offset: int) -> None:
        key = self._key_of(msg)
        if self._index is not None:
            self._index.setdefault(key, []).append(
                (msg.message_id, msg.sent_at, seg, offset)
            )
        self._by_id[msg.message_id] = (seg, offset)
        self._next_id = max(self._next_id, msg.message_id + 1)

    @staticmethod
    def _key_of(msg: ChatMessage) -> tuple:
        if msg.target_kind == GROUP:
            return conversation_key(GROUP, msg.target)
        return conversation_key(DIRECT, msg.sender, msg.target)

    def _open_active_segment(self) -> None:
        paths = self._segment_paths()
        if not paths:
            path = self.root / "seg-0000.log"
        else:
            path = paths[-1]
            if path.stat().st_size > self.segment_max_bytes:
                path = self.root / f"seg-{len(paths):04d}.log"
        self._seg_path = path
        self._seg_handle = open(path, "ab")

    def _roll_if_needed(self) -> None:
        if self._seg_handle.tell() > self.segment_max_bytes:
            self._seg_handle.close()
            n = len(self._segment_paths())
            self._seg_path = self.root / f"seg-{n:04d}.log"
            self._seg_handle = open(self._seg_path, "ab")

    def append_message(
        self,
        sender: str,
        target_kind: str,
        target: str,
        body: str,
        sent_at: Optional[int] = None,
    ) -> ChatMessage:
        """Durable before return; the id is assigned here and only here."""
        with self._lock:
            if sender not in self.users:
                raise IntegrityError(f"sender {sender} unknown")
            if target_kind == DIRECT and target not in self.users:
                raise IntegrityError(f"target user {target} unknown")
            if target_kind == GROUP and target not in self.groups:
                raise IntegrityError(f"target group {target} unknown")
            msg = ChatMessage(
                message_id=self._next_id,
                sender=sender,
                target_kind=target_kind,
                target=target,
                body=body,
                sent_at=now_ms() if sent_at is None else sent_at,
            )
            self._next_id += 1
            self._roll_if_needed()
            offset = self._seg_handle.tell()
            self._seg_handle.write(_frame(msg.payload()))
            self._seg_handle.flush()
            if self.durable:
                os.fsync(self._seg_handle.fileno())
            self._admit(msg, self._seg_path.name, offset)
            return msg

    def tombstone(self, message_id: int, viewer: str) -> None:
        with self._lock:
            if message_id not in self._by_id:
                raise IntegrityError(f"message {message_id} unknown")
            self._tombstones.setdefault(message_id, set()).add(viewer)
            with open(self.root / "tombstones.log", "ab") as fh:
                fh.write(_frame({"message_id": message_id, "viewer": viewer}))
                fh.flush()
                if self.durable:
                    os.fsync(fh.fileno())

    def _load_tombstones(self) -> None:
        for _, obj in _iter_frames(self.root / "tombstones.log"):
            self._tombstones.setdefault(obj["message_id"], set()).add(obj["viewer"])

    def tombstones_for(self, message_id: int) -> set[str]:
        with self._lock:
            return set(self._tombstones.get(message_id, ()))

    def _read_at(self, seg: str, offset: int) -> ChatMessage:
        with open(self.root / seg, "rb") as fh:
            fh.seek(offset)
            header = fh.read(_LENGTH.size)
            (length,) = _LENGTH.unpack(header)
            import json

            obj = json.loads(fh.read(length).decode("utf-8"))
        msg = ChatMessage.from_payload(obj)
        msg.deleted_for = set(self._tombstones.get(msg.message_id, ()))
        return msg

    def get_message(self, message_id: int) -> Optional[ChatMessage]:
        with self._lock:
            loc = self._by_id.get(message_id)
            if loc is None:
                return None
            return self._read_at(*loc)

    def iter_messages(self) -> Iterator[ChatMessage]:
        """Full linear scan in storage (id) order, tombstones attached."""
        with self._lock:
            paths = self._segment_paths()
            tombs = {k: set(v) for k, v in self._tombstones.items()}
        for path in paths:
            for _, obj in _iter_frames(path):
                msg = ChatMessage.from_payload(obj)
                msg.deleted_for = tombs.get(msg.message_id, set())
                yield msg

    def query_history(
        self,
        viewer: str,
        peer_kind: str,
        peer: str,
        limit: int,
        before: Optional[int] = None,
    ) -> list[ChatMessage]:
        """Newest-first page, excluding messages tombstoned for the viewer.

        Equivalent to a full linear scan filtered the same way; the index is
        pure acceleration and may be dropped.
        """
        if peer_kind == GROUP:
            key = conversation_key(GROUP, peer)
        else:
            key = conversation_key(DIRECT, viewer, peer)
        with self._lock:
            if self._index is None:
                return self._scan_query(key, viewer, limit, before)
            entries = self._index.get(key, [])
            self._hits.setdefault(key, deque(maxlen=4096)).append(now_ms())
            out: list[ChatMessage] = []
            for message_id, _, seg, offset in reversed(entries):
                if before is not None and message_id >= before:
                    continue
                if viewer in self._tombstones.get(message_id, ()):
                    continue
                out.append(self._read_at(seg, offset))
                if len(out) >= limit:
                    break
            return out

    def _scan_query(self, key, viewer, limit, before) -> list[ChatMessage]:
        kept: deque[ChatMessage] = deque(maxlen=limit)
        for msg in self.iter_messages():
            if self._key_of(msg) != key:
                continue
            if before is not None and msg.message_id >= before:
                continue
            if viewer in msg.deleted_for:
                continue
            kept.append(msg)
        return list(reversed(kept))

    def drop_indexes(self) -> None:
        """Degrades every query to a linear scan (results must not change)."""
        with self._lock:
            self._index = None

    def conversation_peers(self, user: str) -> dict[str, int]:
        """Direct peers with >=1 message visible to ``user`` -> last visible sent_at."""
        with self._lock:
            out: dict[str, int] = {}
            keys = (
                list(self._index.keys())
                if self._index is not None
                else {self._key_of(m) for m in self.iter_messages()}
            )
            for key in keys:
                if key[0] != DIRECT or user not in key[1:]:
                    continue
                peer = key[2] if key[1] == user else key[1]
                newest = self.query_history(user, DIRECT, peer, limit=1)
                if newest:
                    out[peer] = newest[0].sent_at
            return out

    def last_group_activity(self, group: str) -> Optional[int]:
        with self._lock:
            key = conversation_key(GROUP, group)
            if self._index is not None:
                entries = self._index.get(key, [])
                return entries[-1][1] if entries else None
            newest = None
            for msg in self.iter_messages():
                if self._key_of(msg) == key:
                    newest = msg.sent_at
            return newest

    # ------------------------------------------------------------------
    # action log
    # ------------------------------------------------------------------

    def log_action(self, agent: str, action: str, outcome: str, at: Optional[int] = None) -> None:
        entry = ActionEntry(now_ms() if at is None else at, agent, action, outcome)
        with self._lock:
            self._actions_handle.write(_frame(entry.payload()))
            self._actions_handle.flush()

    def scan_actions(
        self, t_from: Optional[int] = None, t_to: Optional[int] = None
    ) -> list[ActionEntry]:
        with self._lock:
            self._actions_handle.flush()
            out = []
            for _, obj in _iter_frames(self.root / "actions.log"):
                entry = ActionEntry.from_payload(obj)
                if t_from is not None and entry.at < t_from:
                    continue
                if t_to is not None and entry.at > t_to:
                    continue
                out.append(entry)
            return out

    def purge_expired_logs(self, now: int, ttl_ms: int) -> int:
        """Drops action-log entries older than ``now - ttl_ms``; messages untouched."""
        if ttl_ms <= 0:
            raise ValueError("ttl must be positive")
        cutoff = now - ttl_ms
        with self._lock:
            self._actions_handle.flush()
            kept, purged = [], 0
            for _, obj in _iter_frames(self.root / "actions.log"):
                if obj["at"] < cutoff:
                    purged += 1
                else:
                    kept.append(obj)
            if purged:
                tmp = self.root / "actions.log.tmp"
                with open(tmp, "wb") as fh:
                    for obj in kept:
                        fh.write(_frame(obj))
                    fh.flush()
                    if self.durable:
                        os.fsync(fh.fileno())
                self._actions_handle.close()
                os.replace(tmp, self.root / "actions.log")
                self._actions_handle = open(self.root / "actions.log", "ab")
            return purged

    # ------------------------------------------------------------------
    # archival
    # ------------------------------------------------------------------

    def archive_inactive_groups(self, now: int, inactivity_ms: int) -> list[str]:
        """Compacts inactive groups into bundles and evicts them from the hot log.

        A group is inactive when its member set is empty or nothing (message
        or creation) happened since ``now - inactivity_ms``.
        """
        archived = []
        with self._lock:
            cutoff = now - inactivity_ms
            for name in sorted(self.groups):
                record = self.groups[name]
                if record.archived:
                    continue
                last = self.last_group_activity(name)
                activity = max(record.created_at, last or 0)
                if not record.members or activity < cutoff:
                    self._archive_group(record, now)
                    archived.append(name)
            if archived:
                self.save_catalog()
        return archived

    def _archive_group(self, record: GroupRecord, archived_at: int) -> None:
        key = conversation_key(GROUP, record.group_name)
        messages = [
            msg for msg in self.iter_messages() if self._key_of(msg) == key
        ]
        self._write_bundle(record.group_name, archived_at, messages)
        dropped = {m.message_id for m in messages}
        if dropped:
            self._rewrite_segments_without(dropped)
        record.archived = True

    def _write_bundle(self, group: str, archived_at: int, messages: list[ChatMessage]) -> None:
        names: list[str] = []
        name_idx: dict[str, int] = {}

        def intern(name: str) -> int:
            if name not in name_idx:
                name_idx[name] = len(names)
                names.append(name)
            return name_idx[name]

        for msg in messages:
            intern(msg.sender)
            for viewer in sorted(msg.deleted_for):
                intern(viewer)
        base_id = messages[0].message_id if messages else 0
        base_ts = messages[0].sent_at if messages else 0
        header = {
            "group_name": group,
            "archived_at": archived_at,
            "names": names,
            "count": len(messages),
            "base_id": base_id,
            "base_ts": base_ts,
        }
        path = self.root / f"arc-{_sanitize(group)}.bin"
        with open(path, "wb") as fh:
            fh.write(_frame(header))
            prev_id, prev_ts = base_id, base_ts
            for msg in messages:
                body = msg.body.encode("utf-8")
                fh.write(
                    _ARC_FIXED.pack(
                        name_idx[msg.sender],
                        msg.message_id - prev_id,
                        msg.sent_at - prev_ts,
                    )
                )
                fh.write(_LENGTH.pack(len(body)))
                fh.write(body)
                deleted = sorted(msg.deleted_for)
                fh.write(struct.pack(">H", len(deleted)))
                for viewer in deleted:
                    fh.write(struct.pack(">H", name_idx[viewer]))
                prev_id, prev_ts = msg.message_id, msg.sent_at
            fh.flush()
            if self.durable:
                os.fsync(fh.fileno())

    def expand_archive(self, group: str) -> list[ChatMessage]:
        """Lossless inverse of archival for one group's bundle."""
        path = self.root / f"arc-{_sanitize(group)}.bin"
        if not path.exists():
            raise IntegrityError(f"no archive for {group}")
        data = path.read_bytes()
        import json

        (hlen,) = _LENGTH.unpack_from(data, 0)
        header = json.loads(data[_LENGTH.size:_LENGTH.size + hlen].decode("utf-8"))
        pos = _LENGTH.size + hlen
        names = header["names"]
        out: list[ChatMessage] = []
        prev_id, prev_ts = header["base_id"], header["base_ts"]
        for i in range(header["count"]):
            sender_idx, id_delta, ts_delta = _ARC_FIXED.unpack_from(data, pos)
            pos += _ARC_FIXED.size
            message_id = prev_id + id_delta if i else header["base_id"]
            sent_at = prev_ts + ts_delta if i else header["base_ts"]
            (blen,) = _LENGTH.unpack_from(data, pos)
            pos += _LENGTH.size
            body = data[pos:pos + blen].decode("utf-8")
            pos += blen
            (dcount,) = struct.unpack_from(">H", data, pos)
            pos += 2
            deleted = set()
            for _ in range(dcount):
                (didx,) = struct.unpack_from(">H", data, pos)
                pos += 2
                deleted.add(names[didx])
            out.append(
                ChatMessage(
                    message_id, names[sender_idx], GROUP,
                    header["group_name"], body, sent_at, deleted,
                )
            )
            prev_id, prev_ts = message_id, sent_at
        return out

    def _rewrite_segments_without(self, dropped: set[int]) -> None:
        survivors = [m for m in self.iter_messages() if m.message_id not in dropped]
        for path in self._segment_paths():
            path.unlink()
        if self._seg_handle is not None:
            self._seg_handle.close()
        self._index = {} if self._index is not None else None
        self._by_id = {}
        next_id = self._next_id
        self._seg_path = self.root / "seg-0000.log"
        self._seg_handle = open(self._seg_path, "ab")
        for msg in survivors:
            self._roll_if_needed()
            offset = self._seg_handle.tell()
            self._seg_handle.write(_frame(msg.payload()))
            self._admit(msg, self._seg_path.name, offset)
        self._next_id = next_id
        self._seg_handle.flush()
        if self.durable:
            os.fsync(self._seg_handle.fileno())
        # drop tombstones for evicted ids; bundles carry them
        live = {k: v for k, v in self._tombstones.items() if k not in dropped}
        if live != self._tombstones:
            self._tombstones = live
            tmp = self.root / "tombstones.log.tmp"
            with open(tmp, "wb") as fh:
                for message_id in sorted(live):
                    for viewer in sorted(live[message_id]):
                        fh.write(_frame({"message_id": message_id, "viewer": viewer}))
                fh.flush()
                if self.durable:
                    os.fsync(fh.fileno())
            os.replace(tmp, self.root / "tombstones.log")

    # ------------------------------------------------------------------
    # index review
    # ------------------------------------------------------------------

    def review_indexes(self, stats_window_ms: int, now: Optional[int] = None) -> IndexReviewReport:
        """Reports per-index hits and selectivity, then rebuilds from segments.

        Zero-hit indexes and indexes whose entry share makes a linear scan
        comparable are flagged as drop candidates; queries are unchanged by
        the rebuild.
        """
        now = now_ms() if now is None else now
        cutoff = now - stats_window_ms
        with self._lock:
            if self._index is None:
                return IndexReviewReport(stats_window_ms, [], [])
            total = max(len(self._by_id), 1)
            stats = []
            for key in sorted(self._index):
                hits = sum(1 for t in self._hits.get(key, ()) if t >= cutoff)
                selectivity = len(self._index[key]) / total
                stats.append(
                    IndexStat(
                        key=render_key(key),
                        hits=hits,
                        selectivity=selectivity,
                        drop_candidate=hits == 0 or selectivity > 0.5,
                    )
                )
            rebuilt = [render_key(k) for k in sorted(self._index)]
            self._index = {}
            self._by_id = {}
            next_id = self._next_id
            for path in self._segment_paths():
                for offset, obj in _iter_frames(path):
                    self._admit(ChatMessage.from_payload(obj), path.name, offset)
            self._next_id = next_id
            return IndexReviewReport(stats_window_ms, stats, rebuilt)

    # ------------------------------------------------------------------

    def close(self) -> None:
        with self._lock:
            if self._seg_handle is not None:
                self._seg_handle.close()
                self._seg_handle = None
            if self._actions_handle is not None:
                self._actions_handle.close()
                self._actions_handle = None
