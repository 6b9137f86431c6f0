"""Container runtime: Main Container with AMS and DF, satellite attachment,
agent behavior loops, and message routing within and across containers.

Topology is a star: every satellite keeps one TCP connection to the Main
Container and all remote traffic relays through it.  Container-management
traffic rides ordinary ACL request envelopes whose content is a JSON object
``{"verb": ..., "args": ...}``.
"""

from __future__ import annotations

import itertools
import json
import logging
import socket
import struct
import threading
import time
from dataclasses import dataclass, field, replace
from typing import Optional

from .acl import (
    MAX_PAYLOAD,
    AclMessage,
    AgentId,
    MessageQueue,
    MessageTemplate,
    Performative,
    canonical_json,
    decode_payload,
    encode_frame,
    now_ms,
    overflow_failure_reply,
    validate_agent_name,
)
from .errors import (
    AgentMeshError,
    ContainerGone,
    DuplicateName,
    DuplicateService,
    HandshakeRejected,
    InvalidAgentName,
    MainUnreachable,
    PortInUse,
    UnknownAgent,
    UnknownEntry,
)

log = logging.getLogger(__name__)

PROTOCOL_VERSION = "agentmesh/1"
AMS_NAME = "ams"
DF_NAME = "df"

_LENGTH = struct.Struct(">I")

_LINK_VERBS = {
    "attach", "detach", "heartbeat", "spawn", "kill",
    "df-register", "df-deregister", "df-search",
}

_ERROR_CLASSES = {
    cls.code: cls
    for cls in (
        DuplicateName,
        DuplicateService,
        HandshakeRejected,
        InvalidAgentName,
        UnknownAgent,
        UnknownEntry,
    )
}


@dataclass
class PlatformConfig:
    host: str = "127.0.0.1"
    port: int = 0                  # 0 picks a free port
    name: str = "main"
    queue_limit: int = 1024
    heartbeat_interval: float = 5.0
    heartbeat_misses: int = 3


@dataclass(frozen=True)
class ContainerDescriptor:
    container_id: str
    address: str
    is_main: bool
    agents: frozenset[AgentId]


@dataclass(frozen=True)
class ServiceEntry:
    provider: AgentId
    service_type: str
    task_description: str

    def payload(self) -> dict:
        return {
            "provider": self.provider.render(),
            "service_type": self.service_type,
            "task_description": self.task_description,
        }

    @classmethod
    def from_payload(cls, obj: dict) -> "ServiceEntry":
        return cls(
            AgentId.parse(obj["provider"]),
            obj["service_type"],
            obj["task_description"],
        )


@dataclass
class AmsEntry:
    container_id: str
    state: str  # starting | active | stopped


@dataclass
class DeliveryReport:
    """Per-receiver outcome of one route call."""

    statuses: dict[str, str] = field(default_factory=dict)

    def mark(self, name: str, status: str) -> None:
        self.statuses[name] = status

    def all_delivered(self) -> bool:
        return all(s == "delivered" for s in self.statuses.values())


class Behavior:
    """An agent's serially executed step procedure.

    The runtime calls ``step`` repeatedly from the agent's own thread, so a
    behavior never runs two steps concurrently.  ``step`` should block on
    ``ctx.receive(...)`` with a timeout rather than spin.
    """

    def on_start(self, ctx: "AgentContext") -> None:
        pass

    def step(self, ctx: "AgentContext") -> None:
        raise NotImplementedError

    def done(self) -> bool:
        return False


class AgentContext:
    def __init__(self, agent_id: AgentId, queue: MessageQueue, container):
        self.agent_id = agent_id
        self.queue = queue
        self.container = container

    def receive(
        self,
        template: Optional[MessageTemplate] = None,
        timeout: Optional[float] = None,
    ) -> Optional[AclMessage]:
        return self.queue.receive(template, timeout)

    def send(
        self,
        performative: Performative,
        receivers,
        content: str,
        conversation_id: Optional[str] = None,
        reply_with: Optional[str] = None,
        in_reply_to: Optional[str] = None,
    ) -> DeliveryReport:
        msg = AclMessage(
            performative=performative,
            sender=self.agent_id,
            receivers=tuple(receivers),
            content=content,
            timestamp=now_ms(),
            conversation_id=conversation_id,
            reply_with=reply_with,
            in_reply_to=in_reply_to,
        )
        return self.container.route(msg)

    def reply(self, msg: AclMessage, performative: Performative, content: str) -> DeliveryReport:
        return self.send(
            performative,
            [msg.sender],
            content,
            conversation_id=msg.conversation_id,
            in_reply_to=msg.reply_with,
        )


class _AgentRuntime:
    """Owns one agent's queue and behavior thread."""

    def __init__(self, agent_id: AgentId, behavior: Behavior, container, queue_limit: int):
        self.agent_id = agent_id
        self.behavior = behavior
        self.queue = MessageQueue(agent_id, limit=queue_limit)
        self.ctx = AgentContext(agent_id, self.queue, container)
        self.stop_event = threading.Event()
        self.thread = threading.Thread(
            target=self._loop, name=f"agent-{agent_id.name}", daemon=True
        )

    def start(self) -> None:
        self.thread.start()

    def stop(self, join: bool = True) -> None:
        self.stop_event.set()
        self.queue.close()
        if join and self.thread.is_alive() and self.thread is not threading.current_thread():
            self.thread.join(timeout=5.0)

    def _loop(self) -> None:
        try:
            self.behavior.on_start(self.ctx)
        except Exception:
            log.exception("agent %s failed in on_start", self.agent_id.name)
        while not self.stop_event.is_set() and not self.behavior.done():
            try:
                self.behavior.step(self.ctx)
            except Exception:
                log.exception("agent %s step failed", self.agent_id.name)
                time.sleep(0.01)


# --- socket framing -------------------------------------------------------

def _read_exact(sock: socket.socket, n: int) -> bytes:
    chunks = []
    got = 0
    while got < n:
        chunk = sock.recv(n - got)
        if not chunk:
            raise ConnectionError("peer closed")
        chunks.append(chunk)
        got += len(chunk)
    return b"".join(chunks)


def read_frame(sock: socket.socket) -> AclMessage:
    header = _read_exact(sock, _LENGTH.size)
    (length,) = _LENGTH.unpack(header)
    if length > MAX_PAYLOAD:
        raise ConnectionError(f"oversized frame ({length} bytes)")
    return decode_payload(_read_exact(sock, length))


def _control_content(verb: str, args: Optional[dict] = None) -> str:
    return canonical_json({"verb": verb, "args": args or {}}).decode("utf-8")


def _parse_control(msg: AclMessage) -> Optional[tuple[str, dict]]:
    """(verb, args) when the message is link-management traffic, else None."""
    if msg.performative is not Performative.REQUEST:
        return None
    if not any(r.name == AMS_NAME for r in msg.receivers):
        return None
    try:
        obj = json.loads(msg.content)
    except json.JSONDecodeError:
        return None
    if not isinstance(obj, dict) or "verb" not in obj:
        return None
    args = obj.get("args") or {}
    return str(obj["verb"]), args if isinstance(args, dict) else {}


class _SatelliteLink:
    """Main-side handle for one attached satellite."""

    def __init__(self, container_id: str, address: str, conn: socket.socket):
        self.container_id = container_id
        self.address = address
        self.conn = conn
        self.last_seen = time.monotonic()
        self._wlock = threading.Lock()
        self.agent_names: set[str] = set()

    def send(self, msg: AclMessage) -> None:
        data = encode_frame(msg)
        with self._wlock:
            self.conn.sendall(data)

    def close(self) -> None:
        try:
            self.conn.shutdown(socket.SHUT_RDWR)
        except OSError:
            pass
        try:
            self.conn.close()
        except OSError:
            pass


class MainContainer:
    """The platform's first container; hosts AMS and DF."""

    def __init__(self, config: Optional[PlatformConfig] = None):
        self.config = config or PlatformConfig()
        self._sock = socket.socket(socket.AF_INET, socket.SOCK_STREAM)
        self._sock.setsockopt(socket.SOL_SOCKET, socket.SO_REUSEADDR, 1)
        try:
            self._sock.bind((self.config.host, self.config.port))
        except OSError as exc:
            self._sock.close()
            raise PortInUse(f"{self.config.host}:{self.config.port}") from exc
        self._sock.listen(64)
        # a plain close() does not wake a thread blocked in accept(); poll
        self._sock.settimeout(0.2)
        host, port = self._sock.getsockname()
        self.host, self.port = host, port
        self.address = f"{host}:{port}"
        self.container_id = "main"

        self._lock = threading.RLock()
        self._ams: dict[str, AmsEntry] = {}
        self._df: list[ServiceEntry] = []
        self._agents: dict[str, _AgentRuntime] = {}
        self._links: dict[str, _SatelliteLink] = {}
        self._next_cid = itertools.count(1)
        self._closed = False
        self.events: list[dict] = []

        self.spawn_agent(AMS_NAME, _AmsAgent(self))
        self.spawn_agent(DF_NAME, _DfAgent(self))

        self._acceptor = threading.Thread(
            target=self._accept_loop, name="platform-accept", daemon=True
        )
        self._acceptor.start()
        self._monitor = threading.Thread(
            target=self._monitor_loop, name="platform-monitor", daemon=True
        )
        self._monitor.start()

    # --- lifecycle ---

    def spawn_agent(self, name: str, behavior: Behavior) -> AgentId:
        validate_agent_name(name)
        agent_id = AgentId(name, self.address)
        with self._lock:
            if self._closed:
                raise ContainerGone("platform is shut down")
            self._register_agent(name, "main")
            runtime = _AgentRuntime(agent_id, behavior, self, self.config.queue_limit)
            self._agents[name] = runtime
            self._ams[name].state = "active"
        runtime.start()
        return agent_id

    def _register_agent(self, name: str, container_id: str) -> None:
        entry = self._ams.get(name)
        if entry is not None and entry.state != "stopped":
            raise DuplicateName(name)
        self._ams[name] = AmsEntry(container_id, "starting")

    def kill_agent(self, name: str) -> bool:
        with self._lock:
            entry = self._ams.get(name)
            if entry is None or entry.state == "stopped":
                raise UnknownAgent(name)
            entry.state = "stopped"
            self._df = [e for e in self._df if e.provider.name != name]
            runtime = self._agents.pop(name, None)
            link = self._links.get(entry.container_id)
        if runtime is not None:
            runtime.stop()
        elif link is not None:
            link.agent_names.discard(name)
            self._push_control(link, "kill", {"name": name})
        return True

    def shutdown(self) -> bool:
        with self._lock:
            if self._closed:
                return True
            self._closed = True
            links = list(self._links.values())
            self._links.clear()
            runtimes = list(self._agents.values())
            self._agents.clear()
            for entry in self._ams.values():
                entry.state = "stopped"
            self.events.append({"at": now_ms(), "event": "shutdown"})
        for link in links:
            self._push_control(link, "detach", {})
            link.close()
        for runtime in runtimes:
            runtime.stop()
        try:
            self._sock.close()
        except OSError:
            pass
        self._acceptor.join(timeout=5.0)
        self._monitor.join(timeout=5.0)
        return True

    close = shutdown

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.shutdown()

    def _push_control(self, link: _SatelliteLink, verb: str, args: dict) -> None:
        msg = AclMessage(
            performative=Performative.REQUEST,
            sender=AgentId(AMS_NAME, self.address),
            receivers=(AgentId("container", link.address),),
            content=_control_content(verb, args),
            timestamp=now_ms(),
        )
        try:
            link.send(msg)
        except OSError:
            pass

    # --- registries ---

    def ams_lookup(self, name: str) -> Optional[AmsEntry]:
        with self._lock:
            entry = self._ams.get(name)
            return AmsEntry(entry.container_id, entry.state) if entry else None

    def list_containers(self) -> list[ContainerDescriptor]:
        with self._lock:
            out = [self._descriptor_locked("main", self.address, True)]
            for link in self._links.values():
                out.append(
                    self._descriptor_locked(link.container_id, link.address, False)
                )
        return out

    def _descriptor_locked(self, cid: str, address: str, is_main: bool) -> ContainerDescriptor:
        agents = frozenset(
            AgentId(name, address)
            for name, entry in self._ams.items()
            if entry.container_id == cid and entry.state == "active"
        )
        return ContainerDescriptor(cid, address, is_main, agents)

    @property
    def descriptor(self) -> ContainerDescriptor:
        with self._lock:
            return self._descriptor_locked("main", self.address, True)

    def df_register(self, entry: ServiceEntry) -> bool:
        with self._lock:
            ams = self._ams.get(entry.provider.name)
            if ams is None or ams.state != "active":
                raise UnknownAgent(entry.provider.name)
            for existing in self._df:
                if (
                    existing.provider.name == entry.provider.name
                    and existing.service_type == entry.service_type
                ):
                    raise DuplicateService(f"{entry.provider.name}/{entry.service_type}")
            self._df.append(entry)
        return True

    def df_deregister(self, provider: AgentId, service_type: str) -> bool:
        with self._lock:
            for i, existing in enumerate(self._df):
                if (
                    existing.provider.name == provider.name
                    and existing.service_type == service_type
                ):
                    del self._df[i]
                    return True
        raise UnknownEntry(f"{provider.name}/{service_type}")

    def df_search(self, service_type: str) -> list[ServiceEntry]:
        with self._lock:
            return [e for e in self._df if e.service_type == service_type]

    # --- routing ---

    def route(self, msg: AclMessage, _error_replies: bool = True) -> DeliveryReport:
        report = DeliveryReport()
        local: list[tuple[AgentId, _AgentRuntime]] = []
        remote: dict[str, tuple[_SatelliteLink, list[AgentId]]] = {}
        unknown: list[AgentId] = []
        with self._lock:
            for receiver in msg.receivers:
                entry = self._ams.get(receiver.name)
                if entry is None or entry.state != "active":
                    unknown.append(receiver)
                elif entry.container_id == "main":
                    local.append((receiver, self._agents[receiver.name]))
                else:
                    link = self._links.get(entry.container_id)
                    if link is None:
                        unknown.append(receiver)
                    else:
                        remote.setdefault(entry.container_id, (link, []))[1].append(receiver)
        for receiver in unknown:
            report.mark(receiver.name, "unknown-agent")
            if _error_replies:
                self._send_error_reply(
                    msg, Performative.NOT_UNDERSTOOD,
                    {"error": "unknown-agent", "receiver": receiver.name},
                )
        for receiver, runtime in local:
            if runtime.queue.put(msg):
                report.mark(receiver.name, "delivered")
            else:
                report.mark(receiver.name, "queue-full")
                if _error_replies:
                    self._send_error_reply(
                        msg, Performative.FAILURE,
                        {"error": "queue-full", "receiver": receiver.name},
                    )
        for link, receivers in remote.values():
            try:
                link.send(replace(msg, receivers=tuple(receivers)))
            except OSError:
                for receiver in receivers:
                    report.mark(receiver.name, "unknown-agent")
            else:
                for receiver in receivers:
                    report.mark(receiver.name, "delivered")
        return report

    def _send_error_reply(self, original: AclMessage, performative: Performative, body: dict) -> None:
        # never generate error replies for error traffic; avoids reply loops
        if original.performative in (Performative.FAILURE, Performative.NOT_UNDERSTOOD):
            return
        reply = AclMessage(
            performative=performative,
            sender=AgentId(AMS_NAME, self.address),
            receivers=(original.sender,),
            content=canonical_json(body).decode("utf-8"),
            timestamp=now_ms(),
            in_reply_to=original.reply_with,
        )
        self.route(reply, _error_replies=False)

    # --- satellite connections ---

    def _accept_loop(self) -> None:
        while not self._closed:
            try:
                conn, peer = self._sock.accept()
            except socket.timeout:
                continue
            except OSError:
                return
            conn.settimeout(None)
            threading.Thread(
                target=self._serve_connection,
                args=(conn, peer),
                name=f"platform-conn-{peer[1]}",
                daemon=True,
            ).start()

    def _serve_connection(self, conn: socket.socket, peer) -> None:
        link = None
        try:
            msg = read_frame(conn)
            control = _parse_control(msg)
            if control is None or control[0] != "attach":
                self._reply_direct(conn, msg, False, {"error": HandshakeRejected.code})
                conn.close()
                return
            version = control[1].get("version")
            if version != PROTOCOL_VERSION:
                self._reply_direct(conn, msg, False, {"error": HandshakeRejected.code})
                conn.close()
                return
            address = f"{peer[0]}:{peer[1]}"
            with self._lock:
                if self._closed:
                    conn.close()
                    return
                cid = f"c{next(self._next_cid)}"
                link = _SatelliteLink(cid, address, conn)
                self._links[cid] = link
                self.events.append({"at": now_ms(), "event": f"satellite-attached:{cid}"})
            self._reply_direct(conn, msg, True, {"container_id": cid, "address": address})
            while not self._closed:
                frame = read_frame(conn)
                link.last_seen = time.monotonic()
                if not self._handle_link_frame(link, frame):
                    break
        except (ConnectionError, OSError, AgentMeshError):
            pass
        finally:
            if link is not None:
                self._drop_satellite(link.container_id, "connection-lost")
            else:
                try:
                    conn.close()
                except OSError:
                    pass

    def _handle_link_frame(self, link: _SatelliteLink, msg: AclMessage) -> bool:
        """Returns False when the link should close."""
        control = _parse_control(msg)
        if control is None or control[0] not in _LINK_VERBS:
            # not link management: ordinary traffic (including ACL requests
            # for the ams/df agents) goes through normal routing
            self.route(msg)
            return True
        verb, args = control
        if verb == "heartbeat":
            return True
        if verb == "detach":
            self._drop_satellite(link.container_id, "detached")
            return False
        try:
            if verb == "spawn":
                name = args["name"]
                validate_agent_name(name)
                with self._lock:
                    self._register_agent(name, link.container_id)
                    self._ams[name].state = "active"
                    link.agent_names.add(name)
                self._reply_direct(link.conn, msg, True, {"agent": f"{name}@{link.address}"})
            elif verb == "kill":
                self.kill_agent(args["name"])
                self._reply_direct(link.conn, msg, True, {})
            elif verb == "df-register":
                self.df_register(ServiceEntry.from_payload(args))
                self._reply_direct(link.conn, msg, True, {})
            elif verb == "df-deregister":
                self.df_deregister(AgentId.parse(args["provider"]), args["service_type"])
                self._reply_direct(link.conn, msg, True, {})
            elif verb == "df-search":
                entries = self.df_search(args["service_type"])
                self._reply_direct(link.conn, msg, True, {"entries": [e.payload() for e in entries]})
            else:
                self._reply_direct(link.conn, msg, False, {"error": "UnknownVerb"})
        except AgentMeshError as exc:
            self._reply_direct(link.conn, msg, False, {"error": exc.code})
        except (KeyError, TypeError):
            self._reply_direct(link.conn, msg, False, {"error": "MalformedPayload"})
        return True

    def _reply_direct(self, conn: socket.socket, original: AclMessage, ok: bool, value: dict) -> None:
        body = {"ok": True, "value": value} if ok else {"ok": False, **value}
        reply = AclMessage(
            performative=Performative.INFORM if ok else Performative.REFUSE,
            sender=AgentId(AMS_NAME, self.address),
            receivers=(original.sender,),
            content=canonical_json(body).decode("utf-8"),
            timestamp=now_ms(),
            in_reply_to=original.reply_with,
        )
        try:
            conn.sendall(encode_frame(reply))
        except OSError:
            pass

    def _drop_satellite(self, container_id: str, reason: str) -> None:
        with self._lock:
            link = self._links.pop(container_id, None)
            if link is None:
                return
            removed = [
                name
                for name, entry in self._ams.items()
                if entry.container_id == container_id
            ]
            for name in removed:
                del self._ams[name]
            self._df = [e for e in self._df if e.provider.name not in set(removed)]
            self.events.append(
                {"at": now_ms(), "event": f"satellite-lost:{container_id}", "reason": reason}
            )
        link.close()

    def _monitor_loop(self) -> None:
        interval = self.config.heartbeat_interval
        deadline = interval * self.config.heartbeat_misses
        while not self._closed:
            time.sleep(max(min(interval / 2, 1.0), 0.02))
            now = time.monotonic()
            with self._lock:
                stale = [
                    link.container_id
                    for link in self._links.values()
                    if now - link.last_seen > deadline
                ]
            for cid in stale:
                self._drop_satellite(cid, "heartbeat-timeout")


class _AmsAgent(Behavior):
    """Serves lifecycle queries over ACL; spawn stays container-side because
    behaviors are local code."""

    def __init__(self, platform: MainContainer):
        self._platform = platform

    def step(self, ctx: AgentContext) -> None:
        msg = ctx.receive(timeout=0.2)
        if msg is None or msg.performative is not Performative.REQUEST:
            return
        try:
            obj = json.loads(msg.content)
            verb = obj["verb"]
            args = obj.get("args") or {}
        except (json.JSONDecodeError, KeyError, TypeError):
            ctx.reply(msg, Performative.NOT_UNDERSTOOD, canonical_json({"error": "bad-request"}).decode())
            return
        try:
            if verb == "query":
                entry = self._platform.ams_lookup(args["name"])
                if entry is None:
                    raise UnknownAgent(args["name"])
                value = {"container_id": entry.container_id, "state": entry.state}
            elif verb == "list-containers":
                value = {
                    "containers": [
                        {
                            "container_id": d.container_id,
                            "address": d.address,
                            "is_main": d.is_main,
                            "agents": sorted(a.name for a in d.agents),
                        }
                        for d in self._platform.list_containers()
                    ]
                }
            elif verb == "kill":
                self._platform.kill_agent(args["name"])
                value = {}
            else:
                ctx.reply(msg, Performative.REFUSE,
                          canonical_json({"ok": False, "error": "UnknownVerb"}).decode())
                return
        except AgentMeshError as exc:
            ctx.reply(msg, Performative.REFUSE,
                      canonical_json({"ok": False, "error": exc.code}).decode())
            return
        except (KeyError, TypeError):
            ctx.reply(msg, Performative.REFUSE,
                      canonical_json({"ok": False, "error": "MalformedPayload"}).decode())
            return
        ctx.reply(msg, Performative.INFORM,
                  canonical_json({"ok": True, "value": value}).decode())


class _DfAgent(Behavior):
    """Yellow pages served over ACL request envelopes."""

    def __init__(self, platform: MainContainer):
        self._platform = platform

    def step(self, ctx: AgentContext) -> None:
        msg = ctx.receive(timeout=0.2)
        if msg is None or msg.performative is not Performative.REQUEST:
            return
        try:
            obj = json.loads(msg.content)
            verb = obj["verb"]
            args = obj.get("args") or {}
        except (json.JSONDecodeError, KeyError, TypeError):
            ctx.reply(msg, Performative.NOT_UNDERSTOOD, canonical_json({"error": "bad-request"}).decode())
            return
        try:
            if verb == "register":
                provider = AgentId.parse(args["provider"]) if "provider" in args else msg.sender
                self._platform.df_register(
                    ServiceEntry(provider, args["service_type"], args.get("task_description", ""))
                )
                value = {}
            elif verb == "deregister":
                provider = AgentId.parse(args["provider"]) if "provider" in args else msg.sender
                self._platform.df_deregister(provider, args["service_type"])
                value = {}
            elif verb == "search":
                entries = self._platform.df_search(args["service_type"])
                value = {"entries": [e.payload() for e in entries]}
            else:
                ctx.reply(msg, Performative.REFUSE,
                          canonical_json({"ok": False, "error": "UnknownVerb"}).decode())
                return
        except AgentMeshError as exc:
            ctx.reply(msg, Performative.REFUSE,
                      canonical_json({"ok": False, "error": exc.code}).decode())
            return
        except (KeyError, TypeError):
            ctx.reply(msg, Performative.REFUSE,
                      canonical_json({"ok": False, "error": "MalformedPayload"}).decode())
            return
        ctx.reply(msg, Performative.INFORM,
                  canonical_json({"ok": True, "value": value}).decode())


class _Waiter:
    __slots__ = ("event", "reply")

    def __init__(self):
        self.event = threading.Event()
        self.reply: Optional[AclMessage] = None


class SatelliteContainer:
    """A container attached to a running Main Container over TCP."""

    def __init__(self, main_address: str, config: Optional[PlatformConfig] = None):
        self.config = config or PlatformConfig()
        host, _, port = main_address.rpartition(":")
        if not host or not port.isdigit():
            raise MainUnreachable(f"bad address {main_address!r}")
        self.main_address = f"{host}:{int(port)}"
        try:
            self._conn = socket.create_connection((host, int(port)), timeout=5.0)
        except OSError as exc:
            raise MainUnreachable(main_address) from exc
        self._conn.settimeout(None)
        self._wlock = threading.Lock()
        self._pending: dict[str, _Waiter] = {}
        self._rpc_counter = itertools.count(1)
        self._agents: dict[str, _AgentRuntime] = {}
        self._lock = threading.RLock()
        self._closed = False
        self.events: list[dict] = []

        reply = self._attach()
        self.container_id = reply["container_id"]
        self.address = reply["address"]
        self._link_id = AgentId("container", self.address)
        self.events.append({"at": now_ms(), "event": "attached"})

        self._reader = threading.Thread(
            target=self._read_loop, name=f"satellite-{self.container_id}", daemon=True
        )
        self._reader.start()
        self._beater = threading.Thread(
            target=self._heartbeat_loop, name=f"satellite-{self.container_id}-hb", daemon=True
        )
        self._beater.start()

    # --- attach handshake, before the reader thread exists ---

    def _attach(self) -> dict:
        token = "attach-0"
        msg = AclMessage(
            performative=Performative.REQUEST,
            sender=AgentId("container", "local"),
            receivers=(AgentId(AMS_NAME, self.main_address),),
            content=_control_content("attach", {"version": PROTOCOL_VERSION}),
            timestamp=now_ms(),
            reply_with=token,
        )
        try:
            self._conn.sendall(encode_frame(msg))
            reply = read_frame(self._conn)
        except (OSError, ConnectionError) as exc:
            raise MainUnreachable(self.main_address) from exc
        body = json.loads(reply.content)
        if reply.performative is Performative.REFUSE or not body.get("ok"):
            self._conn.close()
            raise HandshakeRejected(body.get("error", ""))
        return body["value"]

    # --- container API ---

    @property
    def descriptor(self) -> ContainerDescriptor:
        with self._lock:
            agents = frozenset(AgentId(n, self.address) for n in self._agents)
        return ContainerDescriptor(self.container_id, self.address, False, agents)

    def spawn_agent(self, name: str, behavior: Behavior) -> AgentId:
        validate_agent_name(name)
        if self._closed:
            raise ContainerGone(self.container_id)
        self._rpc("spawn", {"name": name})
        agent_id = AgentId(name, self.address)
        runtime = _AgentRuntime(agent_id, behavior, self, self.config.queue_limit)
        with self._lock:
            self._agents[name] = runtime
        runtime.start()
        return agent_id

    def kill_agent(self, name: str) -> bool:
        self._rpc("kill", {"name": name})
        self._stop_local(name)
        return True

    def df_register(self, entry: ServiceEntry) -> bool:
        self._rpc("df-register", entry.payload())
        return True

    def df_deregister(self, provider: AgentId, service_type: str) -> bool:
        self._rpc("df-deregister", {"provider": provider.render(), "service_type": service_type})
        return True

    def df_search(self, service_type: str) -> list[ServiceEntry]:
        value = self._rpc("df-search", {"service_type": service_type})
        return [ServiceEntry.from_payload(e) for e in value["entries"]]

    def detach(self) -> None:
        if self._closed:
            return
        msg = AclMessage(
            performative=Performative.REQUEST,
            sender=self._link_id,
            receivers=(AgentId(AMS_NAME, self.main_address),),
            content=_control_content("detach"),
            timestamp=now_ms(),
        )
        try:
            self._send_frame(msg)
        except OSError:
            pass
        self._teardown("detached")

    close = detach

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.detach()

    def route(self, msg: AclMessage) -> DeliveryReport:
        report = DeliveryReport()
        remote: list[AgentId] = []
        with self._lock:
            local = {
                r: self._agents[r.name] for r in msg.receivers if r.name in self._agents
            }
        for receiver in msg.receivers:
            if receiver in local:
                continue
            remote.append(receiver)
        for receiver, runtime in local.items():
            if runtime.queue.put(msg):
                report.mark(receiver.name, "delivered")
            else:
                report.mark(receiver.name, "queue-full")
                self.route(overflow_failure_reply(msg, runtime.agent_id))
        if remote:
            try:
                self._send_frame(replace(msg, receivers=tuple(remote)))
            except OSError:
                for receiver in remote:
                    report.mark(receiver.name, "unknown-agent")
            else:
                for receiver in remote:
                    report.mark(receiver.name, "delivered")
        return report

    # --- plumbing ---

    def _send_frame(self, msg: AclMessage) -> None:
        data = encode_frame(msg)
        with self._wlock:
            self._conn.sendall(data)

    def _rpc(self, verb: str, args: dict, timeout: float = 10.0) -> dict:
        if self._closed:
            raise ContainerGone(self.container_id)
        token = f"rpc-{next(self._rpc_counter)}"
        waiter = _Waiter()
        self._pending[token] = waiter
        msg = AclMessage(
            performative=Performative.REQUEST,
            sender=self._link_id,
            receivers=(AgentId(AMS_NAME, self.main_address),),
            content=_control_content(verb, args),
            timestamp=now_ms(),
            reply_with=token,
        )
        try:
            self._send_frame(msg)
        except OSError as exc:
            self._pending.pop(token, None)
            raise ContainerGone(self.container_id) from exc
        if not waiter.event.wait(timeout):
            self._pending.pop(token, None)
            raise TimeoutError(f"no reply to {verb}")
        reply = waiter.reply
        if reply is None:
            raise ContainerGone(self.container_id)
        body = json.loads(reply.content)
        if body.get("ok"):
            return body.get("value", {})
        code = body.get("error", "Error")
        raise _ERROR_CLASSES.get(code, AgentMeshError)(code)

    def _heartbeat_loop(self) -> None:
        interval = self.config.heartbeat_interval
        while not self._closed:
            time.sleep(interval)
            if self._closed:
                return
            beat = AclMessage(
                performative=Performative.REQUEST,
                sender=self._link_id,
                receivers=(AgentId(AMS_NAME, self.main_address),),
                content=_control_content("heartbeat"),
                timestamp=now_ms(),
            )
            try:
                self._send_frame(beat)
            except OSError:
                return

    def _read_loop(self) -> None:
        try:
            while not self._closed:
                msg = read_frame(self._conn)
                if msg.in_reply_to and msg.in_reply_to in self._pending:
                    waiter = self._pending.pop(msg.in_reply_to)
                    waiter.reply = msg
                    waiter.event.set()
                    continue
                control = _parse_control_push(msg)
                if control is not None:
                    verb, args = control
                    if verb == "detach":
                        self.events.append({"at": now_ms(), "event": "disconnected", "by": "main"})
                        self._teardown("main-detach", send_nothing=True)
                        return
                    if verb == "kill":
                        self.events.append({"at": now_ms(), "event": f"kill:{args.get('name')}"})
                        self._stop_local(args.get("name", ""))
                    continue
                self._deliver_local(msg)
        except (ConnectionError, OSError, AgentMeshError):
            if not self._closed:
                self.events.append({"at": now_ms(), "event": "disconnected", "by": "error"})
                self._teardown("connection-lost", send_nothing=True)

    def _deliver_local(self, msg: AclMessage) -> None:
        with self._lock:
            targets = [
                self._agents[r.name] for r in msg.receivers if r.name in self._agents
            ]
        for runtime in targets:
            if not runtime.queue.put(msg):
                reply = overflow_failure_reply(msg, runtime.agent_id)
                try:
                    self._send_frame(reply)
                except OSError:
                    pass

    def _stop_local(self, name: str) -> None:
        with self._lock:
            runtime = self._agents.pop(name, None)
        if runtime is not None:
            runtime.stop(join=False)

    def _teardown(self, reason: str, send_nothing: bool = False) -> None:
        with self._lock:
            if self._closed:
                return
            self._closed = True
            runtimes = list(self._agents.values())
            self._agents.clear()
        for runtime in runtimes:
            runtime.stop(join=False)
        for waiter in list(self._pending.values()):
            waiter.event.set()
        try:
            self._conn.shutdown(socket.SHUT_RDWR)
        except OSError:
            pass
        try:
            self._conn.close()
        except OSError:
            pass
        self.events.append({"at": now_ms(), "event": f"teardown:{reason}"})


def _parse_control_push(msg: AclMessage) -> Optional[tuple[str, dict]]:
    """Control pushed from main to a satellite (sender ams, verb content)."""
    if msg.performative is not Performative.REQUEST or msg.sender.name != AMS_NAME:
        return None
    try:
        obj = json.loads(msg.content)
    except json.JSONDecodeError:
        return None
    if not isinstance(obj, dict) or "verb" not in obj:
        return None
    args = obj.get("args") or {}
    return str(obj["verb"]), args if isinstance(args, dict) else {}


def start_main_container(config: Optional[PlatformConfig] = None) -> MainContainer:
    return MainContainer(config)


def attach_container(
    main_address: str, config: Optional[PlatformConfig] = None
) -> SatelliteContainer:
    return SatelliteContainer(main_address, config)
