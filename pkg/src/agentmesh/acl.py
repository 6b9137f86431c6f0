"""ACL message envelopes, performatives, wire framing, and per-agent queues.

The envelope is a flat value object: a performative (one of the 22 FIPA
communicative acts), sender, receivers, opaque string content, and optional
conversation-correlation fields.  On the wire a message is a 4-byte
big-endian length prefix followed by canonical UTF-8 JSON (sorted keys, no
insignificant whitespace, unset fields omitted), so equal messages always
encode to identical bytes.
"""

from __future__ import annotations

import json
import struct
import threading
import time
from collections import deque
from dataclasses import dataclass
from enum import Enum
from typing import Callable, Optional

from .errors import (
    EmptyReceivers,
    FrameTooLarge,
    InvalidAgentName,
    MalformedPayload,
    TruncatedFrame,
    UnknownPerformative,
    WrongOwner,
)

MAX_PAYLOAD = 16 * 1024 * 1024
DEFAULT_QUEUE_LIMIT = 1024

_LENGTH = struct.Struct(">I")


class Performative(Enum):
    """The 22 FIPA communicative acts."""

    ACCEPT_PROPOSAL = "accept-proposal"
    AGREE = "agree"
    CANCEL = "cancel"
    CFP = "cfp"
    CONFIRM = "confirm"
    DISCONFIRM = "disconfirm"
    FAILURE = "failure"
    INFORM = "inform"
    INFORM_IF = "inform-if"
    INFORM_REF = "inform-ref"
    NOT_UNDERSTOOD = "not-understood"
    PROPAGATE = "propagate"
    PROPOSE = "propose"
    PROXY = "proxy"
    QUERY_IF = "query-if"
    QUERY_REF = "query-ref"
    REFUSE = "refuse"
    REJECT_PROPOSAL = "reject-proposal"
    REQUEST = "request"
    REQUEST_WHEN = "request-when"
    REQUEST_WHENEVER = "request-whenever"
    SUBSCRIBE = "subscribe"

    def render(self) -> str:
        return self.value

    @classmethod
    def parse(cls, text: str) -> "Performative":
        """Case-insensitive lookup; raises UnknownPerformative on misses."""
        try:
            return cls(text.lower())
        except (ValueError, AttributeError):
            raise UnknownPerformative(repr(text)) from None


MAX_NAME_LEN = 64


def validate_agent_name(name: str) -> None:
    if not isinstance(name, str) or not name or len(name) > MAX_NAME_LEN:
        raise InvalidAgentName(repr(name))
    if "@" in name:
        raise InvalidAgentName(f"{name!r} contains '@'")
    if any(ord(c) < 0x20 or ord(c) == 0x7F for c in name):
        raise InvalidAgentName(f"{name!r} contains control characters")


@dataclass(frozen=True)
class AgentId:
    """Platform-unique agent name plus home-container address.

    ``container`` is ``"host:port"`` or ``"local"`` for in-process agents.
    """

    name: str
    container: str = "local"

    def __post_init__(self):
        validate_agent_name(self.name)

    def render(self) -> str:
        return f"{self.name}@{self.container}"

    @classmethod
    def parse(cls, text: str) -> "AgentId":
        name, sep, container = text.partition("@")
        if not sep or not container:
            raise MalformedPayload(f"bad agent id {text!r}")
        try:
            return cls(name, container)
        except InvalidAgentName as exc:
            raise MalformedPayload(str(exc)) from None

    def __str__(self) -> str:
        return self.render()


def now_ms() -> int:
    return time.time_ns() // 1_000_000


@dataclass(frozen=True)
class AclMessage:
    performative: Performative
    sender: AgentId
    receivers: tuple[AgentId, ...]
    content: str
    timestamp: int
    conversation_id: Optional[str] = None
    reply_with: Optional[str] = None
    in_reply_to: Optional[str] = None

    def payload(self) -> dict:
        """JSON-ready dict with unset optional fields omitted."""
        out = {
            "performative": self.performative.render(),
            "sender": self.sender.render(),
            "receivers": [r.render() for r in self.receivers],
            "content": self.content,
            "timestamp": self.timestamp,
        }
        if self.conversation_id is not None:
            out["conversation_id"] = self.conversation_id
        if self.reply_with is not None:
            out["reply_with"] = self.reply_with
        if self.in_reply_to is not None:
            out["in_reply_to"] = self.in_reply_to
        return out


def make_message(
    performative: Performative,
    sender: AgentId,
    receivers: list[AgentId] | tuple[AgentId, ...],
    content: str,
) -> AclMessage:
    """Build an envelope with a fresh timestamp and unset conversation fields."""
    if not receivers:
        raise EmptyReceivers()
    validate_agent_name(sender.name)
    for r in receivers:
        validate_agent_name(r.name)
    return AclMessage(
        performative=performative,
        sender=sender,
        receivers=tuple(receivers),
        content=content,
        timestamp=now_ms(),
    )


def canonical_json(obj) -> bytes:
    return json.dumps(
        obj, sort_keys=True, separators=(",", ":"), ensure_ascii=False
    ).encode("utf-8")


def encode_frame(msg: AclMessage) -> bytes:
    payload = canonical_json(msg.payload())
    if len(payload) > MAX_PAYLOAD:
        raise FrameTooLarge(f"{len(payload)} bytes")
    return _LENGTH.pack(len(payload)) + payload


_PAYLOAD_KEYS = {
    "performative",
    "sender",
    "receivers",
    "content",
    "timestamp",
    "conversation_id",
    "reply_with",
    "in_reply_to",
}


def decode_payload(payload: bytes) -> AclMessage:
    try:
        obj = json.loads(payload.decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise MalformedPayload(str(exc)) from None
    if not isinstance(obj, dict):
        raise MalformedPayload("payload is not an object")
    extra = set(obj) - _PAYLOAD_KEYS
    if extra:
        raise MalformedPayload(f"unexpected keys {sorted(extra)}")
    for key in ("performative", "sender", "receivers", "content", "timestamp"):
        if key not in obj:
            raise MalformedPayload(f"missing key {key!r}")
    if not isinstance(obj["performative"], str):
        raise MalformedPayload("performative must be a string")
    performative = Performative.parse(obj["performative"])
    if not isinstance(obj["sender"], str):
        raise MalformedPayload("sender must be a string")
    sender = AgentId.parse(obj["sender"])
    if not isinstance(obj["receivers"], list) or not obj["receivers"]:
        raise MalformedPayload("receivers must be a non-empty list")
    receivers = []
    for item in obj["receivers"]:
        if not isinstance(item, str):
            raise MalformedPayload("receiver entries must be strings")
        receivers.append(AgentId.parse(item))
    if not isinstance(obj["content"], str):
        raise MalformedPayload("content must be a string")
    ts = obj["timestamp"]
    if not isinstance(ts, int) or isinstance(ts, bool) or ts <= 0:
        raise MalformedPayload("timestamp must be a positive integer")
    optional = {}
    for key in ("conversation_id", "reply_with", "in_reply_to"):
        if key in obj:
            if not isinstance(obj[key], str):
                raise MalformedPayload(f"{key} must be a string")
            optional[key] = obj[key]
    return AclMessage(
        performative=performative,
        sender=sender,
        receivers=tuple(receivers),
        content=obj["content"],
        timestamp=ts,
        **optional,
    )


def decode_frame(data: bytes) -> AclMessage:
    """Inverse of encode_frame on exactly one frame's bytes."""
    if len(data) < _LENGTH.size:
        raise TruncatedFrame(f"{len(data)} bytes, need at least 4")
    (length,) = _LENGTH.unpack_from(data)
    if length > MAX_PAYLOAD:
        raise FrameTooLarge(f"prefix claims {length} bytes")
    if len(data) - _LENGTH.size < length:
        raise TruncatedFrame(f"prefix claims {length}, got {len(data) - 4}")
    if len(data) - _LENGTH.size > length:
        raise MalformedPayload("trailing bytes after frame")
    return decode_payload(data[_LENGTH.size:])


@dataclass(frozen=True)
class MessageTemplate:
    """Filter for queue takes; a template with all fields absent matches all."""

    performative: Optional[Performative] = None
    sender_name: Optional[str] = None
    conversation_id: Optional[str] = None

    def matches(self, msg: AclMessage) -> bool:
        if self.performative is not None and msg.performative is not self.performative:
            return False
        if self.sender_name is not None and msg.sender.name != self.sender_name:
            return False
        if self.conversation_id is not None and msg.conversation_id != self.conversation_id:
            return False
        return True


def overflow_failure_reply(msg: AclMessage, owner: AgentId) -> AclMessage:
    """Failure envelope sent back to the sender of a rejected message."""
    return AclMessage(
        performative=Performative.FAILURE,
        sender=owner,
        receivers=(msg.sender,),
        content=canonical_json({"error": "queue-full", "receiver": owner.name}).decode("utf-8"),
        timestamp=now_ms(),
        in_reply_to=msg.reply_with,
    )


class MessageQueue:
    """Bounded FIFO mailbox: many producers, one consuming owner.

    Overflow policy is reject-newest: ``put`` returns False and, when an
    ``on_reject`` callback is wired, hands it the failure reply addressed to
    the original sender.
    """

    def __init__(
        self,
        owner: AgentId,
        limit: int = DEFAULT_QUEUE_LIMIT,
        on_reject: Optional[Callable[[AclMessage], None]] = None,
    ):
        self.owner = owner
        self.limit = limit
        self.on_reject = on_reject
        self._entries: deque[AclMessage] = deque()
        self._cond = threading.Condition()
        self._closed = False

    def __len__(self) -> int:
        with self._cond:
            return len(self._entries)

    def put(self, msg: AclMessage) -> bool:
        """Append at the tail; False when rejected (full or closed).

        Addressing is by platform-unique name; the container part of a
        receiver id is advisory.
        """
        if self.owner.name not in {r.name for r in msg.receivers}:
            raise WrongOwner(f"{msg.receivers} does not include {self.owner}")
        rejected = False
        with self._cond:
            if self._closed:
                return False
            if len(self._entries) >= self.limit:
                rejected = True
            else:
                self._entries.append(msg)
                self._cond.notify_all()
        if rejected:
            if self.on_reject is not None:
                self.on_reject(overflow_failure_reply(msg, self.owner))
            return False
        return True

    def take(self, template: Optional[MessageTemplate] = None) -> Optional[AclMessage]:
        """Remove and return the head, or the earliest template match.

        Non-matching entries keep their order.  Returns None when nothing
        qualifies; absence is a normal outcome, not an error.
        """
        with self._cond:
            return self._take_locked(template)

    def _take_locked(self, template):
        if template is None:
            if self._entries:
                return self._entries.popleft()
            return None
        for i, msg in enumerate(self._entries):
            if template.matches(msg):
                del self._entries[i]
                return msg
        return None

    def receive(
        self,
        template: Optional[MessageTemplate] = None,
        timeout: Optional[float] = None,
    ) -> Optional[AclMessage]:
        """Blocking take; waits up to ``timeout`` seconds for a match."""
        deadline = None if timeout is None else time.monotonic() + timeout
        with self._cond:
            while True:
                msg = self._take_locked(template)
                if msg is not None or self._closed:
                    return msg
                if deadline is None:
                    self._cond.wait()
                else:
                    remaining = deadline - time.monotonic()
                    if remaining <= 0 or not self._cond.wait(remaining):
                        return self._take_locked(template)

    def close(self) -> None:
        with self._cond:
            self._closed = True
            self._entries.clear()
            self._cond.notify_all()
