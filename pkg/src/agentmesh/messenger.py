"""The chat manager agent: catalog, sessions, chat routing, and rule
enforcement for every messenger operation.

All operations arrive as request performatives whose content is
``{"op": ..., "args": {...}}``; replies are inform ``{"ok": true, "value":
...}`` on success, refuse ``{"ok": false, "error": "<Code>"}`` on rule
violations, failure on internal errors.  Incoming chat lands as pushed
informs ``{"event": "message", "payload": ...}`` on the recipient's agent.
"""

from __future__ import annotations

import hashlib
import json
import logging
import secrets
import time
from typing import Optional

from .acl import AgentId, Performative, canonical_json, now_ms, validate_agent_name
from .errors import InvalidAgentName, ProviderUnavailable, ServiceError
from .platform import AgentContext, Behavior, ServiceEntry
from .sensitivity import (
    DEFAULT_UNBLOCK_THRESHOLD,
    CrisisAlert,
    Lexicon,
    PhraseModel,
    StoredMessageReputation,
    build_phrase_model,
    crisis_group_name,
    crisis_members,
    evaluate_unblock,
    scan_and_auto_block,
)
from .store import (
    DIRECT,
    GROUP,
    BlockRecord,
    ChatMessage,
    GroupRecord,
    Store,
    UserRecord,
)

log = logging.getLogger(__name__)

SERVICE_TYPE = "chat"
TASK_DESCRIPTION = "messenger routing and catalog"
CHAT_MANAGER_NAME = "chat-manager"

MAX_BODY_BYTES = 64 * 1024
MIN_PASSWORD_LEN = 4
DEFAULT_PAGE = 50

PREDEFINED_BLOCK_REASONS = ("spam", "harassment", "offensive-language", "other")


def hash_password(password: str, salt: str, iterations: int) -> str:
    digest = hashlib.pbkdf2_hmac(
        "sha256", password.encode("utf-8"), bytes.fromhex(salt), iterations
    )
    return digest.hex()


class ChatManager(Behavior):
    """Serial request processor backed by the persistence store."""

    def __init__(
        self,
        store: Store,
        lexicon: Optional[Lexicon] = None,
        reputation=None,
        unblock_threshold: float = DEFAULT_UNBLOCK_THRESHOLD,
        pbkdf2_iterations: int = 100_000,
    ):
        self.store = store
        self.lexicon = lexicon or Lexicon(frozenset(), frozenset())
        self.reputation = reputation or StoredMessageReputation(store, self.lexicon)
        self.unblock_threshold = unblock_threshold
        self.iterations = pbkdf2_iterations
        self.sessions: dict[str, str] = {}          # token -> user_name
        self.agents: dict[str, AgentId] = {}        # user_name -> client agent
        self._ops = {
            "register": self.op_register,
            "login": self.op_login,
            "logout": self.op_logout,
            "list-users": self.op_list_users,
            "list-conversations": self.op_list_conversations,
            "list-group-members": self.op_list_group_members,
            "fetch-history": self.op_fetch_history,
            "create-group": self.op_create_group,
            "add-to-group": self.op_add_to_group,
            "leave-group": self.op_leave_group,
            "block": self.op_block,
            "unblock": self.op_unblock,
            "send-message": self.op_send_message,
            "delete-message": self.op_delete_message,
            "delete-conversation": self.op_delete_conversation,
            "update-location": self.op_update_location,
            "set-auto-unblock": self.op_set_auto_unblock,
            "crisis-alert": self.op_crisis_alert,
            "evaluate-unblocks": self.op_evaluate_unblocks,
        }

    def on_start(self, ctx: AgentContext) -> None:
        ctx.container.df_register(
            ServiceEntry(ctx.agent_id, SERVICE_TYPE, TASK_DESCRIPTION)
        )

    def step(self, ctx: AgentContext) -> None:
        msg = ctx.receive(timeout=0.1)
        if msg is None or msg.performative is not Performative.REQUEST:
            return
        try:
            obj = json.loads(msg.content)
            op = obj["op"]
            args = obj.get("args") or {}
        except (json.JSONDecodeError, KeyError, TypeError):
            ctx.reply(msg, Performative.NOT_UNDERSTOOD,
                      canonical_json({"ok": False, "error": "BadRequest"}).decode())
            return
        handler = self._ops.get(op)
        if handler is None:
            ctx.reply(msg, Performative.REFUSE,
                      canonical_json({"ok": False, "error": "UnknownOperation"}).decode())
            return
        caller = self.sessions.get(args.get("token", ""), msg.sender.name)
        try:
            value = handler(ctx, msg, args)
        except ServiceError as exc:
            self.store.log_action(caller, op, "error")
            ctx.reply(msg, Performative.REFUSE,
                      canonical_json({"ok": False, "error": exc.code}).decode())
        except Exception:
            log.exception("internal error in op %s", op)
            self.store.log_action(caller, op, "error")
            ctx.reply(msg, Performative.FAILURE,
                      canonical_json({"ok": False, "error": "InternalError"}).decode())
        else:
            self.store.log_action(caller, op, "ok")
            ctx.reply(msg, Performative.INFORM,
                      canonical_json({"ok": True, "value": value}).decode())

    # ------------------------------------------------------------------
    # helpers
    # ------------------------------------------------------------------

    def _auth(self, args: dict) -> str:
        user = self.sessions.get(args.get("token", ""))
        if user is None:
            raise ServiceError("AuthRequired")
        return user

    def _require_user(self, name: str, error: str = "UnknownUser") -> UserRecord:
        record = self.store.users.get(name)
        if record is None:
            raise ServiceError(error)
        return record

    def _require_group(self, name: str, error: str = "UnknownGroup") -> GroupRecord:
        record = self.store.groups.get(name)
        if record is None or record.archived:
            raise ServiceError(error)
        return record

    def _visible_status(self, viewer: str, user: UserRecord) -> str:
        if self.store.has_block(viewer, user.user_name):
            return "hidden"
        return user.status

    def _push(self, ctx: AgentContext, user: str, event: dict) -> None:
        """Best-effort inform to a user's bound client agent."""
        agent = self.agents.get(user)
        if agent is None:
            return
        report = ctx.send(Performative.INFORM, [agent], canonical_json(event).decode())
        if report.statuses.get(agent.name) == "unknown-agent":
            # the client agent is gone: repair presence
            self.agents.pop(user, None)
            record = self.store.users.get(user)
            if record is not None:
                record.status = "offline"
            for token, name in list(self.sessions.items()):
                if name == user:
                    del self.sessions[token]

    def _message_dict(self, msg: ChatMessage) -> dict:
        return msg.payload()

    # ------------------------------------------------------------------
    # account and session
    # ------------------------------------------------------------------

    def op_register(self, ctx, msg, args) -> dict:
        name = args.get("name", "")
        password = args.get("password", "")
        try:
            validate_agent_name(name)
        except InvalidAgentName:
            raise ServiceError("InvalidUserName") from None
        if name in self.store.users or name in self.store.groups:
            raise ServiceError("DuplicateUserName")
        if len(password) < MIN_PASSWORD_LEN:
            raise ServiceError("WeakPassword")
        salt = secrets.token_hex(16)
        record = UserRecord(
            user_name=name,
            password_digest=hash_password(password, salt, self.iterations),
            salt=salt,
        )
        self.store.add_user(record)
        return {"user_name": name, "status": record.status}

    def op_login(self, ctx, msg, args) -> dict:
        name = args.get("name", "")
        record = self._require_user(name)
        digest = hash_password(args.get("password", ""), record.salt, self.iterations)
        if not secrets.compare_digest(digest, record.password_digest):
            raise ServiceError("BadCredentials")
        if record.status == "online":
            raise ServiceError("AlreadyOnline")
        token = secrets.token_hex(16)
        record.status = "online"
        self.sessions[token] = name
        self.agents[name] = msg.sender
        return {"token": token, "user_name": name}

    def op_logout(self, ctx, msg, args) -> dict:
        user = self._auth(args)
        record = self.store.users.get(user)
        if record is not None:
            record.status = "offline"
        self.agents.pop(user, None)
        self.sessions = {t: u for t, u in self.sessions.items() if u != user}
        return {}

    # ------------------------------------------------------------------
    # catalogs
    # ------------------------------------------------------------------

    def op_list_users(self, ctx, msg, args) -> dict:
        caller = self._auth(args)
        which = args.get("filter", "all")
        if which == "all":
            users = [
                {"user_name": u.user_name, "status": self._visible_status(caller, u)}
                for u in sorted(self.store.users.values(), key=lambda u: u.user_name)
            ]
        elif which == "blocked":
            users = [
                {"user_name": name, "status": "hidden"}
                for name in sorted(self.store.blocked_by(caller))
            ]
        elif which == "not-in-group":
            group = self._require_group(args.get("group", ""))
            users = [
                {"user_name": u.user_name, "status": self._visible_status(caller, u)}
                for u in sorted(self.store.users.values(), key=lambda u: u.user_name)
                if u.user_name not in group.members
            ]
        else:
            raise ServiceError("UnknownFilter")
        return {"users": users}

    def op_list_conversations(self, ctx, msg, args) -> dict:
        caller = self._auth(args)
        kind = args.get("kind", "direct")
        out = []
        if kind == "direct":
            for peer, last_at in self.store.conversation_peers(caller).items():
                out.append({"peer": peer, "kind": "direct", "last_message_at": last_at})
        elif kind == "group":
            for record in self.store.groups.values():
                if record.archived or caller not in record.members:
                    continue
                last = self.store.last_group_activity(record.group_name)
                out.append(
                    {
                        "peer": record.group_name,
                        "kind": "group",
                        "last_message_at": last if last is not None else record.created_at,
                    }
                )
        else:
            raise ServiceError("UnknownFilter")
        out.sort(key=lambda c: (-c["last_message_at"], c["peer"]))
        return {"conversations": out}

    def op_list_group_members(self, ctx, msg, args) -> dict:
        caller = self._auth(args)
        group = self._require_group(args.get("group", ""))
        if caller not in group.members:
            raise ServiceError("NotAMember")
        return {
            "members": [
                {
                    "user_name": name,
                    "status": self._visible_status(caller, self.store.users[name]),
                }
                for name in sorted(group.members)
            ]
        }

    def op_fetch_history(self, ctx, msg, args) -> dict:
        caller = self._auth(args)
        peer = args.get("peer", "")
        limit = int(args.get("limit", DEFAULT_PAGE))
        before = args.get("before")
        if peer in self.store.groups:
            group = self._require_group(peer, error="UnknownPeer")
            if caller not in group.members:
                raise ServiceError("NotAMember")
            kind = GROUP
        elif peer in self.store.users:
            kind = DIRECT
        else:
            raise ServiceError("UnknownPeer")
        messages = self.store.query_history(caller, kind, peer, limit, before)
        return {"messages": [self._message_dict(m) for m in messages]}

    # ------------------------------------------------------------------
    # groups
    # ------------------------------------------------------------------

    def op_create_group(self, ctx, msg, args) -> dict:
        caller = self._auth(args)
        name = args.get("group", "")
        try:
            validate_agent_name(name)
        except InvalidAgentName:
            raise ServiceError("InvalidGroupName") from None
        if name in self.store.groups or name in self.store.users:
            raise ServiceError("DuplicateGroupName")
        record = GroupRecord(group_name=name, members={caller}, created_at=now_ms())
        self.store.add_group(record)
        return {
            "group_name": name,
            "members": sorted(record.members),
            "created_at": record.created_at,
        }

    def op_add_to_group(self, ctx, msg, args) -> dict:
        caller = self._auth(args)
        target = args.get("user", "")
        group = self._require_group(args.get("group", ""))
        self._require_user(target)
        if caller not in group.members:
            raise ServiceError("NotAMember")
        if self.store.has_block(caller, target):
            raise ServiceError("TargetBlocked")
        if target in group.members:
            raise ServiceError("AlreadyMember")
        group.members.add(target)
        self.store.save_catalog()
        return {}

    def op_leave_group(self, ctx, msg, args) -> dict:
        caller = self._auth(args)
        group = self._require_group(args.get("group", ""))
        if caller not in group.members:
            raise ServiceError("NotAMember")
        group.members.discard(caller)
        self.store.save_catalog()
        return {}

    # ------------------------------------------------------------------
    # blocking
    # ------------------------------------------------------------------

    def op_block(self, ctx, msg, args) -> dict:
        caller = self._auth(args)
        target = args.get("user", "")
        self._require_user(target)
        if target == caller:
            raise ServiceError("SelfBlock")
        if self.store.has_block(caller, target):
            raise ServiceError("AlreadyBlocked")
        reason = args.get("reason")
        self.store.add_block(BlockRecord(caller, target, reason, now_ms()))
        return {}

    def op_unblock(self, ctx, msg, args) -> dict:
        caller = self._auth(args)
        target = args.get("user", "")
        if not self.store.has_block(caller, target):
            raise ServiceError("NotBlocked")
        self.store.remove_block(caller, target)
        return {}

    # ------------------------------------------------------------------
    # messages
    # ------------------------------------------------------------------

    def op_send_message(self, ctx, msg, args) -> dict:
        caller = self._auth(args)
        target = args.get("target", "")
        body = args.get("body", "")
        if len(body.encode("utf-8")) > MAX_BODY_BYTES:
            raise ServiceError("BodyTooLarge")
        if target in self.store.groups:
            group = self._require_group(target, error="UnknownPeer")
            if caller not in group.members:
                raise ServiceError("NotAMember")
            stored = self.store.append_message(caller, GROUP, target, body)
            recipients = sorted(group.members - {caller})
        elif target in self.store.users:
            if self.store.has_block(target, caller):
                raise ServiceError("BlockedByTarget")
            stored = self.store.append_message(caller, DIRECT, target, body)
            self.store.add_friends(caller, target)
            recipients = [target]
        else:
            raise ServiceError("UnknownPeer")

        payload = self._message_dict(stored)
        for user in recipients:
            record = self.store.users.get(user)
            if record is not None and record.status == "online":
                self._push(ctx, user, {"event": "message", "payload": payload})

        action = scan_and_auto_block(
            stored,
            self.lexicon,
            group_members=group.members if stored.target_kind == GROUP else None,
        )
        if action is not None:
            applied = []
            for blocker in action.blockers:
                if blocker != caller and not self.store.has_block(blocker, caller):
                    self.store.add_block(
                        BlockRecord(blocker, caller, "lexicon", now_ms())
                    )
                    applied.append(blocker)
            if applied:
                self._push(
                    ctx,
                    caller,
                    {
                        "event": "auto-block",
                        "trigger": action.trigger,
                        "blocked_by": applied,
                    },
                )
        return {"message": payload}

    def op_delete_message(self, ctx, msg, args) -> dict:
        caller = self._auth(args)
        message_id = int(args.get("message_id", 0))
        stored = self.store.get_message(message_id)
        if stored is None:
            raise ServiceError("UnknownMessage")
        if stored.target_kind == GROUP:
            group = self.store.groups.get(stored.target)
            members = group.members if group else set()
            if caller != stored.sender and caller not in members:
                raise ServiceError("NotAParticipant")
        else:
            if caller not in (stored.sender, stored.target):
                raise ServiceError("NotAParticipant")
        if caller not in stored.deleted_for:
            self.store.tombstone(message_id, caller)
        return {}

    def op_delete_conversation(self, ctx, msg, args) -> dict:
        caller = self._auth(args)
        peer = args.get("peer", "")
        self._require_user(peer, error="UnknownPeer")
        while True:
            page = self.store.query_history(caller, DIRECT, peer, limit=500)
            if not page:
                break
            for m in page:
                self.store.tombstone(m.message_id, caller)
        return {}

    # ------------------------------------------------------------------
    # sensitivity hooks
    # ------------------------------------------------------------------

    def op_update_location(self, ctx, msg, args) -> dict:
        caller = self._auth(args)
        lat, lon = float(args.get("lat")), float(args.get("lon"))
        if not (-90.0 <= lat <= 90.0) or not (-180.0 <= lon <= 180.0):
            raise ServiceError("BadLocation")
        record = self.store.users[caller]
        record.last_location = (lat, lon)
        self.store.save_catalog()
        return {}

    def op_set_auto_unblock(self, ctx, msg, args) -> dict:
        caller = self._auth(args)
        record = self.store.users[caller]
        record.auto_unblock_opt_in = bool(args.get("enabled", False))
        self.store.save_catalog()
        return {}

    def op_crisis_alert(self, ctx, msg, args) -> dict:
        alert = CrisisAlert.from_payload(args)
        name = crisis_group_name(alert)
        members = crisis_members(alert, self.store.users.values())
        group = self.store.groups.get(name)
        if group is None:
            group = GroupRecord(group_name=name, members=set(members), created_at=now_ms())
            self.store.add_group(group)
            added = sorted(members)
        else:
            added = sorted(members - group.members)
            group.members.update(members)
            if added:
                self.store.save_catalog()
        event = {"event": "crisis", "group": name, "alert": alert.payload()}
        for user in added:
            self._push(ctx, user, event)
        return {"group_name": name, "members": sorted(group.members), "added": added}

    def op_evaluate_unblocks(self, ctx, msg, args) -> dict:
        unblocked = []
        for (blocker, blocked), _record in list(self.store.blocks.items()):
            opted_in = self.store.users[blocker].auto_unblock_opt_in
            try:
                action = evaluate_unblock(
                    blocker, blocked, opted_in, self.reputation, self.unblock_threshold
                )
            except ProviderUnavailable:
                continue
            if action is not None:
                self.store.remove_block(blocker, blocked)
                unblocked.append([blocker, blocked])
        return {"unblocked": unblocked}


class PhraseMiner(Behavior):
    """Mining as an agent: periodically rebuilds the phrase-frequency model
    from stored messages and swaps it in atomically."""

    def __init__(self, store: Store, interval: float = 60.0):
        self.store = store
        self.interval = interval
        self.model = PhraseModel()
        self._last_build = 0.0

    def step(self, ctx: AgentContext) -> None:
        now = time.monotonic()
        if now - self._last_build < self.interval:
            time.sleep(min(0.2, self.interval))
            return
        self._last_build = now
        self.model = build_phrase_model(self.store.iter_messages())
        self.store.log_action(ctx.agent_id.name, "build-phrases", "ok")
