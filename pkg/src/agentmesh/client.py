"""Client-side session: a lightweight agent that talks to the chat manager.

Works over any container handle (the Main Container in-process or an
attached satellite), so the CLI, the tests, and embedding code all share
one code path.
"""

from __future__ import annotations

import itertools
import json
import queue
import threading
from typing import Optional

from .acl import AclMessage, AgentId, Performative, canonical_json, now_ms
from .errors import ServiceError, UnknownAgent
from .messenger import SERVICE_TYPE
from .platform import Behavior

_session_counter = itertools.count(1)


class _Waiter:
    __slots__ = ("event", "reply")

    def __init__(self):
        self.event = threading.Event()
        self.reply: Optional[AclMessage] = None


class _SessionBehavior(Behavior):
    """Demultiplexes request replies from pushed events."""

    def __init__(self):
        self.pending: dict[str, _Waiter] = {}
        self.pushes: "queue.Queue[dict]" = queue.Queue()
        self._lock = threading.Lock()

    def register(self, token: str) -> _Waiter:
        waiter = _Waiter()
        with self._lock:
            self.pending[token] = waiter
        return waiter

    def forget(self, token: str) -> None:
        with self._lock:
            self.pending.pop(token, None)

    def step(self, ctx) -> None:
        msg = ctx.receive(timeout=0.1)
        if msg is None:
            return
        if msg.in_reply_to:
            with self._lock:
                waiter = self.pending.pop(msg.in_reply_to, None)
            if waiter is not None:
                waiter.reply = msg
                waiter.event.set()
                return
        try:
            body = json.loads(msg.content)
        except json.JSONDecodeError:
            return
        if isinstance(body, dict) and "event" in body:
            self.pushes.put(body)


class ChatClient:
    """Messenger operations bound to one session agent on a container."""

    def __init__(self, container, agent_name: Optional[str] = None, call_timeout: float = 10.0):
        self.container = container
        self.call_timeout = call_timeout
        self._behavior = _SessionBehavior()
        name = agent_name or f"session-{now_ms() % 100_000}-{next(_session_counter)}"
        self.agent_id = container.spawn_agent(name, self._behavior)
        self.token: Optional[str] = None
        self.user_name: Optional[str] = None
        self._manager: Optional[AgentId] = None
        self._token_counter = itertools.count(1)

    # --- plumbing ---

    def _find_manager(self) -> AgentId:
        if self._manager is None:
            entries = self.container.df_search(SERVICE_TYPE)
            if not entries:
                raise UnknownAgent("no chat service registered")
            self._manager = entries[0].provider
        return self._manager

    def call(self, op: str, args: Optional[dict] = None, timeout: Optional[float] = None) -> dict:
        manager = self._find_manager()
        token = f"{self.agent_id.name}-{next(self._token_counter)}"
        waiter = self._behavior.register(token)
        request = AclMessage(
            performative=Performative.REQUEST,
            sender=self.agent_id,
            receivers=(manager,),
            content=canonical_json({"op": op, "args": args or {}}).decode(),
            timestamp=now_ms(),
            reply_with=token,
        )
        self.container.route(request)
        if not waiter.event.wait(timeout or self.call_timeout):
            self._behavior.forget(token)
            raise TimeoutError(f"no reply to {op}")
        reply = waiter.reply
        body = json.loads(reply.content)
        if reply.performative is Performative.INFORM and body.get("ok"):
            return body.get("value", {})
        raise ServiceError(body.get("error", "Error"))

    def _authed(self, extra: Optional[dict] = None) -> dict:
        if self.token is None:
            raise ServiceError("AuthRequired", "login first")
        args = {"token": self.token}
        if extra:
            args.update(extra)
        return args

    def poll_push(self, timeout: float = 2.0) -> Optional[dict]:
        try:
            return self._behavior.pushes.get(timeout=timeout)
        except queue.Empty:
            return None

    def drain_pushes(self) -> list[dict]:
        out = []
        while True:
            try:
                out.append(self._behavior.pushes.get_nowait())
            except queue.Empty:
                return out

    def close(self) -> None:
        try:
            self.container.kill_agent(self.agent_id.name)
        except Exception:
            pass

    # --- operations ---

    def register(self, name: str, password: str) -> dict:
        return self.call("register", {"name": name, "password": password})

    def login(self, name: str, password: str) -> dict:
        value = self.call("login", {"name": name, "password": password})
        self.token = value["token"]
        self.user_name = name
        return value

    def logout(self) -> dict:
        value = self.call("logout", self._authed())
        self.token = None
        self.user_name = None
        return value

    def list_users(self, which: str = "all", group: Optional[str] = None) -> list[dict]:
        extra = {"filter": which}
        if group is not None:
            extra["group"] = group
        return self.call("list-users", self._authed(extra))["users"]

    def conversations(self, kind: str = "direct") -> list[dict]:
        return self.call("list-conversations", self._authed({"kind": kind}))["conversations"]

    def group_members(self, group: str) -> list[dict]:
        return self.call("list-group-members", self._authed({"group": group}))["members"]

    def history(self, peer: str, limit: int = 50, before: Optional[int] = None) -> list[dict]:
        extra = {"peer": peer, "limit": limit}
        if before is not None:
            extra["before"] = before
        return self.call("fetch-history", self._authed(extra))["messages"]

    def create_group(self, group: str) -> dict:
        return self.call("create-group", self._authed({"group": group}))

    def add_to_group(self, user: str, group: str) -> dict:
        return self.call("add-to-group", self._authed({"user": user, "group": group}))

    def leave_group(self, group: str) -> dict:
        return self.call("leave-group", self._authed({"group": group}))

    def block(self, user: str, reason: Optional[str] = None) -> dict:
        extra = {"user": user}
        if reason is not None:
            extra["reason"] = reason
        return self.call("block", self._authed(extra))

    def unblock(self, user: str) -> dict:
        return self.call("unblock", self._authed({"user": user}))

    def send(self, target: str, body: str) -> dict:
        return self.call("send-message", self._authed({"target": target, "body": body}))["message"]

    def delete_message(self, message_id: int) -> dict:
        return self.call("delete-message", self._authed({"message_id": message_id}))

    def delete_conversation(self, peer: str) -> dict:
        return self.call("delete-conversation", self._authed({"peer": peer}))

    def update_location(self, lat: float, lon: float) -> dict:
        return self.call("update-location", self._authed({"lat": lat, "lon": lon}))

    def set_auto_unblock(self, enabled: bool) -> dict:
        return self.call("set-auto-unblock", self._authed({"enabled": enabled}))
