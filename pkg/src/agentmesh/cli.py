"""Command-line surface.

    agentmesh platform --host H --port P --name N --data DIR ...
    agentmesh chat [--host H --port P --name U --servers F --script F --yes]
    agentmesh admin <verb> --data DIR ...

The chat client doubles as the scriptable end-to-end harness: every verb
maps 1:1 onto a messenger operation, so a scripted transcript replay is
deterministic against a fixed server state.
"""

from __future__ import annotations

import argparse
import getpass
import json
import shlex
import sys
import threading
import time
from datetime import datetime
from pathlib import Path

from .client import ChatClient
from .errors import AgentMeshError, MainUnreachable, ServiceError
from .messenger import CHAT_MANAGER_NAME, ChatManager, PhraseMiner
from .platform import PlatformConfig, attach_container, start_main_container
from .sensitivity import (
    CrisisAlert,
    Geofence,
    GeofenceState,
    autocomplete_suggest,
    build_phrase_model,
    geofence_check,
    list_servers,
    load_lexicon,
    read_alert_feed,
    usage_report,
)
from .store import Store

EXIT_OK = 0
EXIT_CONNECT = 1
EXIT_PROTOCOL = 2

DEFAULT_CONFIG_PATH = "~/.agentmesh/client.json"


def _fmt_ts(ms: int) -> str:
    return datetime.fromtimestamp(ms / 1000).isoformat(sep=" ", timespec="seconds")


def render_conversation(messages: list[dict], self_name: str, width: int = 80) -> str:
    """Received messages left-aligned, own messages right-aligned, timestamps
    on every line, oldest first."""
    lines = []
    for m in sorted(messages, key=lambda m: m["message_id"]):
        text = f"{_fmt_ts(m['sent_at'])} {m['sender']}: {m['body']}"
        if m["sender"] == self_name:
            lines.append(text.rjust(width))
        else:
            lines.append(text)
    return "\n".join(lines)


def parse_duration_ms(text: str) -> int:
    """'7d', '24h', '30m', '45s', or a bare number of seconds."""
    units = {"d": 86_400_000, "h": 3_600_000, "m": 60_000, "s": 1000}
    text = text.strip().lower()
    if text and text[-1] in units:
        return int(float(text[:-1]) * units[text[-1]])
    return int(float(text) * 1000)


def parse_when_ms(text: str) -> int:
    """Millisecond epoch, or an ISO date/datetime."""
    try:
        return int(text)
    except ValueError:
        return int(datetime.fromisoformat(text).timestamp() * 1000)


class ClientConfig:
    """Last-successful-connection defaults, persisted per user."""

    def __init__(self, path):
        self.path = Path(path).expanduser()
        self.host: str | None = None
        self.port: int | None = None
        self.user_name: str | None = None
        self.servers: str | None = None
        if self.path.exists():
            try:
                obj = json.loads(self.path.read_text("utf-8"))
            except (OSError, json.JSONDecodeError):
                obj = {}
            self.host = obj.get("host")
            self.port = obj.get("port")
            self.user_name = obj.get("user_name")
            self.servers = obj.get("servers")

    def save(self) -> None:
        self.path.parent.mkdir(parents=True, exist_ok=True)
        self.path.write_text(
            json.dumps(
                {
                    "host": self.host,
                    "port": self.port,
                    "user_name": self.user_name,
                    "servers": self.servers,
                },
                indent=2,
            ),
            "utf-8",
        )


class ChatShell:
    """The interactive/scripted chat client loop."""

    PROMPT = "> "

    def __init__(
        self,
        out=None,
        config_path: str = DEFAULT_CONFIG_PATH,
        servers_path: str | None = None,
        agent_name: str | None = None,
        assume_yes: bool = False,
        interactive: bool = True,
        stdin=None,
    ):
        self.out = out or sys.stdout
        self.config = ClientConfig(config_path)
        self.servers_path = servers_path or self.config.servers
        self.agent_name = agent_name
        self.assume_yes = assume_yes
        self.interactive = interactive
        self.stdin = stdin or sys.stdin
        self.satellite = None
        self.client: ChatClient | None = None
        self.exit_code = EXIT_OK
        self.fences: list[tuple[Geofence, GeofenceState]] = []
        self._print_lock = threading.Lock()
        self._push_printer: threading.Thread | None = None

    # --- output helpers ---

    def emit(self, text: str) -> None:
        with self._print_lock:
            self.out.write(text + "\n")
            self.out.flush()

    def add_geofence(self, fence: Geofence) -> None:
        self.fences.append((fence, GeofenceState()))

    # --- connection ---

    def _resolve_server(self, spec: str | None) -> tuple[str, int]:
        if spec:
            entries = list_servers(self.servers_path) if self.servers_path else []
            for entry in entries:
                if entry.display_name == spec:
                    return entry.host, entry.port
            host, _, port = spec.rpartition(":")
            if host and port.isdigit():
                return host, int(port)
            raise MainUnreachable(f"unknown server {spec!r}")
        if self.config.host and self.config.port:
            return self.config.host, self.config.port
        raise MainUnreachable("no server given and no saved connection")

    def cmd_connect(self, args: list[str]) -> None:
        host, port = self._resolve_server(args[0] if args else None)
        if self.client is not None:
            self.client.close()
            self.client = None
        if self.satellite is not None:
            self.satellite.detach()
        self.satellite = attach_container(f"{host}:{port}")
        self.client = ChatClient(self.satellite, agent_name=self.agent_name)
        self.config.host, self.config.port = host, port
        self.config.save()
        self.emit(f"connected to {host}:{port}")
        if self.interactive:
            self._start_push_printer()

    def _start_push_printer(self) -> None:
        client = self.client

        def pump():
            while self.client is client:
                push = client.poll_push(timeout=0.2)
                if push is not None:
                    self._render_push(push)

        self._push_printer = threading.Thread(target=pump, daemon=True)
        self._push_printer.start()

    def _render_push(self, push: dict) -> None:
        if push.get("event") == "message":
            m = push["payload"]
            self.emit(f"[{_fmt_ts(m['sent_at'])}] {m['sender']}: {m['body']}")
        elif push.get("event") == "auto-block":
            self.emit(
                f"[notice] you were blocked automatically (trigger: {push.get('trigger')})"
            )
        elif push.get("event") == "crisis":
            self.emit(
                f"[crisis] added to group {push.get('group')} ({push['alert'].get('kind')})"
            )
        else:
            self.emit(f"[event] {json.dumps(push, sort_keys=True)}")

    def _need_client(self) -> ChatClient:
        if self.client is None:
            raise ServiceError("NotConnected")
        return self.client

    def _confirm(self, what: str) -> bool:
        if self.assume_yes:
            return True
        self.emit(f"{what}? [y/N]")
        answer = self.stdin.readline().strip().lower()
        return answer in ("y", "yes")

    # --- command dispatch ---

    def run_line(self, line: str) -> bool:
        """Executes one command line; returns False when the shell should exit."""
        line = line.strip()
        if not line or line.startswith("#"):
            return True
        try:
            parts = shlex.split(line)
        except ValueError as exc:
            self.emit(f"error: {exc}")
            return True
        verb, args = parts[0], parts[1:]
        try:
            return self._dispatch(verb, args)
        except ServiceError as exc:
            self.emit(f"error: {exc.code}")
        except MainUnreachable as exc:
            self.emit(f"error: {exc.code}: {exc}")
            self.exit_code = EXIT_CONNECT
        except TimeoutError:
            self.emit("error: timeout waiting for the server")
            self.exit_code = EXIT_PROTOCOL
        except AgentMeshError as exc:
            self.emit(f"error: {exc.code}")
            self.exit_code = EXIT_PROTOCOL
        return True

    def _dispatch(self, verb: str, args: list[str]) -> bool:
        if verb == "quit":
            self.cmd_quit()
            return False
        handler = {
            "connect": self.cmd_connect,
            "register": self.cmd_register,
            "login": self.cmd_login,
            "users": self.cmd_users,
            "groups": self.cmd_groups,
            "members": self.cmd_members,
            "history": self.cmd_history,
            "mkgroup": self.cmd_mkgroup,
            "join-add": self.cmd_join_add,
            "leave": self.cmd_leave,
            "block": self.cmd_block,
            "unblock": self.cmd_unblock,
            "send": self.cmd_send,
            "del": self.cmd_del,
            "delconv": self.cmd_delconv,
            "pos": self.cmd_pos,
            "sleep": self.cmd_sleep,
            "recv": self.cmd_recv,
            "help": self.cmd_help,
        }.get(verb)
        if handler is None:
            self.emit(f"error: UnknownCommand: {verb}")
            return True
        handler(args)
        return True

    # --- verbs ---

    def cmd_help(self, args) -> None:
        self.emit(
            "verbs: connect <server|host:port>, register <u> [pw], login <u> [pw],\n"
            "  users [all|blocked|notin <g>], groups, members <g>, history <peer>,\n"
            "  mkgroup <g>, join-add <u> <g>, leave <g>, block <u> [reason],\n"
            "  unblock <u>, send <peer> <text...>, del <id>, delconv <u>,\n"
            "  pos <lat> <lon>, recv [n [timeout]], sleep <s>, quit"
        )

    def _password(self, args: list[str]) -> str:
        if len(args) >= 2:
            return args[1]
        return getpass.getpass("password: ")

    def cmd_register(self, args) -> None:
        client = self._need_client()
        client.register(args[0], self._password(args))
        self.emit(f"registered {args[0]}")

    def cmd_login(self, args) -> None:
        client = self._need_client()
        client.login(args[0], self._password(args))
        self.config.user_name = args[0]
        self.config.save()
        self.emit(f"logged in as {args[0]}")

    def cmd_users(self, args) -> None:
        client = self._need_client()
        which = args[0] if args else "all"
        if which == "notin":
            rows = client.list_users("not-in-group", group=args[1])
        else:
            rows = client.list_users(which)
        for row in rows:
            self.emit(f"{row['user_name']} {row['status']}")

    def cmd_groups(self, args) -> None:
        client = self._need_client()
        for conv in client.conversations("group"):
            self.emit(f"{conv['peer']} {_fmt_ts(conv['last_message_at'])}")

    def cmd_members(self, args) -> None:
        client = self._need_client()
        for row in client.group_members(args[0]):
            self.emit(f"{row['user_name']} {row['status']}")

    def cmd_history(self, args) -> None:
        client = self._need_client()
        messages = client.history(args[0], limit=int(args[1]) if len(args) > 1 else 50)
        text = render_conversation(messages, client.user_name or "")
        if text:
            self.emit(text)

    def cmd_mkgroup(self, args) -> None:
        self._need_client().create_group(args[0])
        self.emit(f"group {args[0]} created")

    def cmd_join_add(self, args) -> None:
        self._need_client().add_to_group(args[0], args[1])
        self.emit(f"added {args[0]} to {args[1]}")

    def cmd_leave(self, args) -> None:
        self._need_client().leave_group(args[0])
        self.emit(f"left {args[0]}")

    def cmd_block(self, args) -> None:
        reason = " ".join(args[1:]) if len(args) > 1 else None
        self._need_client().block(args[0], reason=reason)
        self.emit(f"blocked {args[0]}")

    def cmd_unblock(self, args) -> None:
        self._need_client().unblock(args[0])
        self.emit(f"unblocked {args[0]}")

    def cmd_send(self, args) -> None:
        client = self._need_client()
        sent = client.send(args[0], " ".join(args[1:]))
        self.emit(f"sent #{sent['message_id']} at {_fmt_ts(sent['sent_at'])}")

    def cmd_del(self, args) -> None:
        client = self._need_client()
        if not self._confirm(f"delete message {args[0]}"):
            self.emit("not deleted")
            return
        client.delete_message(int(args[0]))
        self.emit(f"deleted #{args[0]}")

    def cmd_delconv(self, args) -> None:
        client = self._need_client()
        if not self._confirm(f"delete the whole conversation with {args[0]}"):
            self.emit("not deleted")
            return
        client.delete_conversation(args[0])
        self.emit(f"conversation with {args[0]} deleted")

    def cmd_pos(self, args) -> None:
        client = self._need_client()
        lat, lon = float(args[0]), float(args[1])
        client.update_location(lat, lon)
        for fence, state in self.fences:
            event = geofence_check(state, fence, (lat, lon))
            if event is not None:
                self.emit(f"[geofence] entered {fence.label}")
        self.emit(f"position {lat},{lon} reported")

    def cmd_sleep(self, args) -> None:
        time.sleep(float(args[0]))

    def cmd_recv(self, args) -> None:
        client = self._need_client()
        count = int(args[0]) if args else 1
        timeout = float(args[1]) if len(args) > 1 else 5.0
        for _ in range(count):
            push = client.poll_push(timeout=timeout)
            if push is None:
                self.emit("recv: timeout")
                return
            self._render_push(push)

    def cmd_quit(self) -> None:
        if self.client is not None:
            try:
                if self.client.token:
                    self.client.logout()
            except AgentMeshError:
                pass
            self.client.close()
            self.client = None
        if self.satellite is not None:
            self.satellite.detach()
            self.satellite = None

    # --- loops ---

    def run_script(self, lines) -> int:
        for line in lines:
            if not self.run_line(line):
                break
        self.cmd_quit()
        return self.exit_code

    def run_interactive(self) -> int:
        self.emit("agentmesh chat; 'help' lists verbs, 'quit' exits")
        while True:
            with self._print_lock:
                self.out.write(self.PROMPT)
                self.out.flush()
            line = self.stdin.readline()
            if not line:
                self.cmd_quit()
                break
            if not self.run_line(line):
                break
        return self.exit_code


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------

def run_platform(args) -> int:
    store = Store(args.data)
    lexicon = load_lexicon(args.banned, args.good)
    manager = ChatManager(store, lexicon=lexicon)
    platform = start_main_container(
        PlatformConfig(host=args.host, port=args.port, name=args.name)
    )
    platform.spawn_agent(CHAT_MANAGER_NAME, manager)
    platform.spawn_agent("phrase-miner", PhraseMiner(store, parse_duration_ms(args.mining) / 1000))
    print(f"agentmesh platform listening on {platform.address}", flush=True)

    seen_alerts: set[str] = set()
    applier = ChatClient(platform, agent_name="platform-admin")

    def apply_alerts():
        for alert in read_alert_feed(args.alerts):
            if alert.alert_id in seen_alerts:
                continue
            seen_alerts.add(alert.alert_id)
            value = applier.call("crisis-alert", alert.payload())
            print(f"crisis alert {alert.alert_id}: group {value['group_name']} "
                  f"members {value['members']}", flush=True)

    maintenance_ms = parse_duration_ms(args.maintenance)
    last_maintenance = time.monotonic()
    try:
        while True:
            time.sleep(args.poll_interval)
            if args.alerts:
                apply_alerts()
            if maintenance_ms > 0 and (time.monotonic() - last_maintenance) * 1000 >= maintenance_ms:
                last_maintenance = time.monotonic()
                now = int(time.time() * 1000)
                purged = store.purge_expired_logs(now, parse_duration_ms(args.log_ttl))
                archived = store.archive_inactive_groups(now, parse_duration_ms(args.inactivity))
                store.review_indexes(maintenance_ms, now)
                print(f"maintenance: purged {purged} log entries, archived {archived}", flush=True)
    except KeyboardInterrupt:
        pass
    finally:
        platform.shutdown()
        store.close()
    return EXIT_OK


def run_chat(args) -> int:
    shell = ChatShell(
        config_path=args.config,
        servers_path=args.servers,
        agent_name=args.name,
        assume_yes=args.yes,
        interactive=args.script is None,
    )
    if args.geofence:
        for spec in args.geofence:
            label, _, rest = spec.partition(":")
            lat, lon, radius = (float(x) for x in rest.split(","))
            shell.add_geofence(Geofence(label, (lat, lon), radius))
    if args.host and args.port:
        shell.config.host, shell.config.port = args.host, args.port
    try:
        if args.script is not None:
            lines = Path(args.script).read_text("utf-8").splitlines()
            return shell.run_script(lines)
        return shell.run_interactive()
    except MainUnreachable:
        print("error: cannot reach the server", file=sys.stderr)
        return EXIT_CONNECT


def run_admin(args) -> int:
    now = int(time.time() * 1000)
    if args.admin_verb == "inject-alert":
        alert = CrisisAlert(
            args.id, args.kind, (args.lat, args.lon), args.radius,
            args.at if args.at is not None else now,
        )
        feed = Path(args.feed)
        feed.parent.mkdir(parents=True, exist_ok=True)
        with open(feed, "a", encoding="utf-8") as fh:
            fh.write(json.dumps(alert.payload(), sort_keys=True) + "\n")
        print(f"alert {args.id} appended to {feed}")
        return EXIT_OK

    store = Store(args.data)
    try:
        if args.admin_verb == "purge-logs":
            purged = store.purge_expired_logs(now, parse_duration_ms(args.ttl))
            print(f"purged {purged} action-log entries")
        elif args.admin_verb == "archive-groups":
            archived = store.archive_inactive_groups(now, parse_duration_ms(args.inactivity))
            print(f"archived {len(archived)} groups: {', '.join(archived) or '-'}")
        elif args.admin_verb == "review-indexes":
            report = store.review_indexes(parse_duration_ms(args.window), now)
            for stat in report.stats:
                flag = " drop-candidate" if stat.drop_candidate else ""
                print(f"{stat.key}: hits={stat.hits} selectivity={stat.selectivity:.3f}{flag}")
            print(f"rebuilt {len(report.rebuilt)} indexes")
        elif args.admin_verb == "build-phrases":
            model = build_phrase_model(store.iter_messages())
            print(f"model over {model.built_from} messages, {len(model.counts)} n-grams")
            if args.prefix:
                for phrase in autocomplete_suggest(model, args.prefix, args.top):
                    print(phrase)
            else:
                ranked = sorted(model.counts.items(), key=lambda kv: (-kv[1], " ".join(kv[0])))
                for gram, count in ranked[: args.top]:
                    print(f"{count}\t{' '.join(gram)}")
        elif args.admin_verb == "usage-report":
            t_from = parse_when_ms(args.t_from) if args.t_from else 0
            t_to = parse_when_ms(args.t_to) if args.t_to else now
            report = usage_report(store, t_from, t_to)
            print(json.dumps(
                {
                    "window": list(report.window),
                    "op_counts": report.op_counts,
                    "top_phrases": report.top_phrases,
                    "geo_cells": report.geo_cells,
                    "block_reasons": report.block_reasons,
                },
                sort_keys=True, indent=2,
            ))
    finally:
        store.close()
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="agentmesh")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("platform", help="run the main container and messenger service")
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, default=8800)
    p.add_argument("--name", default="main")
    p.add_argument("--data", default="./agentmesh-data")
    p.add_argument("--banned", default="./banned.txt")
    p.add_argument("--good", default="./good.txt")
    p.add_argument("--alerts", default=None, help="crisis alert feed (JSON lines)")
    p.add_argument("--maintenance", default="24h", help="maintenance period (0 disables)")
    p.add_argument("--mining", default="10m", help="phrase-miner rebuild period")
    p.add_argument("--log-ttl", default="7d")
    p.add_argument("--inactivity", default="30d")
    p.add_argument("--poll-interval", type=float, default=1.0)
    p.set_defaults(func=run_platform)

    c = sub.add_parser("chat", help="terminal chat client")
    c.add_argument("--host", default=None)
    c.add_argument("--port", type=int, default=None)
    c.add_argument("--name", default=None, help="agent name for this session")
    c.add_argument("--servers", default=None, help="named server directory (servers.json)")
    c.add_argument("--script", default=None, help="run commands from a file and exit")
    c.add_argument("--config", default=DEFAULT_CONFIG_PATH)
    c.add_argument("--yes", action="store_true", help="skip confirmation prompts")
    c.add_argument("--geofence", action="append", default=None,
                   metavar="LABEL:LAT,LON,RADIUS_M")
    c.set_defaults(func=run_chat)

    a = sub.add_parser("admin", help="offline maintenance and mining over a data dir")
    asub = a.add_subparsers(dest="admin_verb", required=True)

    v = asub.add_parser("purge-logs")
    v.add_argument("--data", required=True)
    v.add_argument("--ttl", required=True)

    v = asub.add_parser("archive-groups")
    v.add_argument("--data", required=True)
    v.add_argument("--inactivity", required=True)

    v = asub.add_parser("review-indexes")
    v.add_argument("--data", required=True)
    v.add_argument("--window", default="7d")

    v = asub.add_parser("build-phrases")
    v.add_argument("--data", required=True)
    v.add_argument("--top", type=int, default=10)
    v.add_argument("--prefix", default=None)

    v = asub.add_parser("usage-report")
    v.add_argument("--data", required=True)
    v.add_argument("--from", dest="t_from", default=None)
    v.add_argument("--to", dest="t_to", default=None)

    v = asub.add_parser("inject-alert")
    v.add_argument("--feed", required=True)
    v.add_argument("--id", required=True)
    v.add_argument("--kind", default="other", choices=["earthquake", "flood", "other"])
    v.add_argument("--lat", type=float, required=True)
    v.add_argument("--lon", type=float, required=True)
    v.add_argument("--radius", type=float, required=True)
    v.add_argument("--at", type=int, default=None)

    for verb in asub.choices.values():
        verb.set_defaults(func=run_admin)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
