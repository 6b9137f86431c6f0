"""Acceptance suite: one test per criterion, each printing a PASS line.

Run with ``pytest tests/test_acceptance.py -v -s`` to see the per-criterion
lines; every tolerance is pinned in the assertions below.
"""

import json
import math
import random
import time
from collections import Counter

import pytest

from agentmesh.acl import AclMessage, AgentId, Performative, decode_frame, encode_frame, make_message
from agentmesh.client import ChatClient
from agentmesh.errors import DuplicateName, ServiceError, UnknownPerformative
from agentmesh.messenger import CHAT_MANAGER_NAME, ChatManager
from agentmesh.platform import (
    Behavior,
    PlatformConfig,
    ServiceEntry,
    attach_container,
    start_main_container,
)
from agentmesh.sensitivity import (
    EARTH_RADIUS_M,
    CrisisAlert,
    Geofence,
    GeofenceState,
    Lexicon,
    autocomplete_suggest,
    build_phrase_model,
    crisis_members,
    geofence_check,
    haversine_distance,
    tokenize,
    usage_report,
)
from agentmesh.store import ChatMessage, GroupRecord, Store, UserRecord
from util import random_message


def ok(line: str) -> None:
    print(f"\nACCEPTANCE PASS: {line}")


def wait_until(predicate, timeout=15.0):
    deadline = time.monotonic() + timeout
    while time.monotonic() < deadline:
        if predicate():
            return True
        time.sleep(0.01)
    return predicate()


class Collector(Behavior):
    def __init__(self):
        self.got = []

    def step(self, ctx):
        msg = ctx.receive(timeout=0.05)
        if msg is not None:
            self.got.append(msg)


def expect_error(code, fn, *args, **kw):
    with pytest.raises(ServiceError) as err:
        fn(*args, **kw)
    assert err.value.code == code


def make_world(tmp_path, lexicon=None):
    platform = start_main_container(PlatformConfig(queue_limit=8192))
    store = Store(tmp_path / "data")
    manager = ChatManager(store, lexicon=lexicon, pbkdf2_iterations=500)
    platform.spawn_agent(CHAT_MANAGER_NAME, manager)
    assert wait_until(lambda: platform.df_search("chat"))
    return platform, store, manager


def login(platform, name, register=True):
    client = ChatClient(platform)
    if register:
        client.register(name, "hunter2")
    client.login(name, "hunter2")
    return client


# ---------------------------------------------------------------------------


def test_performative_closure():
    """All 22 names round-trip encode/decode; a 23rd is rejected."""
    names = [p.value for p in Performative]
    assert len(names) == len(set(names)) == 22
    for name in names:
        p = Performative.parse(name)
        assert p.render() == name
        msg = make_message(p, AgentId("a"), [AgentId("b")], "x")
        assert decode_frame(encode_frame(msg)).performative is p
    for imposter in ("shout", "whisper", "inform2", "query"):
        with pytest.raises(UnknownPerformative):
            Performative.parse(imposter)
    frame = encode_frame(make_message(Performative.INFORM, AgentId("a"), [AgentId("b")], "x"))
    payload = json.loads(frame[4:])
    payload["performative"] = "shout"
    raw = json.dumps(payload, sort_keys=True, separators=(",", ":")).encode()
    with pytest.raises(UnknownPerformative):
        decode_frame(len(raw).to_bytes(4, "big") + raw)
    ok("performative closure: 22 round-trip, 23rd rejected")


def test_frame_round_trip_10k():
    """decode(encode(m)) == m for 10,000 randomized messages, byte-deterministic."""
    rng = random.Random(20_16)
    for _ in range(10_000):
        msg = random_message(rng)
        frame = encode_frame(msg)
        assert decode_frame(frame) == msg
        assert encode_frame(msg) == frame
    ok("frame round-trip on 10,000 randomized messages, byte-deterministic")


def test_platform_topology_order_and_containment():
    """Main + 2 satellites, 3 agents, 1,000 in-order messages per pair;
    killing one satellite removes exactly its agents from AMS/DF."""
    config = PlatformConfig(queue_limit=8192, heartbeat_interval=0.2)
    main = start_main_container(config)
    sat1 = attach_container(main.address, config)
    sat2 = attach_container(main.address, config)
    try:
        collectors = {"agent-main": Collector(), "agent-sat1": Collector(), "agent-sat2": Collector()}
        homes = {"agent-main": main, "agent-sat1": sat1, "agent-sat2": sat2}
        for name, home in homes.items():
            home.spawn_agent(name, collectors[name])
        main.df_register(ServiceEntry(AgentId("agent-main", main.address), "acceptance", "t"))
        sat2.df_register(ServiceEntry(AgentId("agent-sat2", sat2.address), "acceptance", "t"))

        names = list(homes)
        n = 1000
        for sender in names:
            home = homes[sender]
            sender_id = AgentId(sender, getattr(home, "address"))
            for receiver in names:
                if receiver == sender:
                    continue
                for i in range(n):
                    msg = make_message(
                        Performative.INFORM, sender_id, [AgentId(receiver)], f"{sender}:{i}"
                    )
                    home.route(msg)

        expected_total = n * (len(names) - 1)
        assert wait_until(
            lambda: all(len(c.got) >= expected_total for c in collectors.values()),
            timeout=60.0,
        ), {k: len(c.got) for k, c in collectors.items()}
        for receiver, collector in collectors.items():
            per_sender = {}
            for msg in collector.got:
                sender, _, seq = msg.content.partition(":")
                per_sender.setdefault(sender, []).append(int(seq))
            for sender, seqs in per_sender.items():
                assert seqs == list(range(n)), f"{sender}->{receiver} out of order"

        # crash containment: exactly sat2's agents vanish from AMS and DF
        sat2._conn.close()
        assert wait_until(lambda: main.ams_lookup("agent-sat2") is None, timeout=10.0)
        assert main.ams_lookup("agent-main").state == "active"
        assert main.ams_lookup("agent-sat1").state == "active"
        assert [e.provider.name for e in main.df_search("acceptance")] == ["agent-main"]
    finally:
        sat1.detach()
        main.shutdown()
    ok("platform topology: 1,000 msgs/pair in order across 3 containers; crash containment exact")


def test_name_uniqueness(tmp_path):
    """Duplicate user names and duplicate agent names are rejected."""
    platform, store, _ = make_world(tmp_path)
    try:
        client = ChatClient(platform)
        client.register("alice", "hunter2")
        expect_error("DuplicateUserName", client.register, "alice", "hunter2")

        platform.spawn_agent("fixed-name", Collector())
        with pytest.raises(DuplicateName):
            platform.spawn_agent("fixed-name", Collector())
        sat = attach_container(platform.address)
        with pytest.raises(DuplicateName):
            sat.spawn_agent("fixed-name", Collector())
        sat.detach()
    finally:
        platform.shutdown()
        store.close()
    ok("name uniqueness: duplicate user and agent names rejected")


def test_blocking_triple_rule(tmp_path):
    """After block: send refused, status hidden, group-add refused; after
    unblock all three succeed."""
    platform, store, _ = make_world(tmp_path)
    try:
        alice = login(platform, "alice")
        bob = login(platform, "bob")
        alice.create_group("club")

        bob.send("alice", "pre-block traffic")
        assert {u["user_name"]: u["status"] for u in alice.list_users()}["bob"] == "online"

        alice.block("bob", reason="spam")
        expect_error("BlockedByTarget", bob.send, "alice", "refused?")
        assert {u["user_name"]: u["status"] for u in alice.list_users()}["bob"] == "hidden"
        expect_error("TargetBlocked", alice.add_to_group, "bob", "club")

        alice.unblock("bob")
        bob.send("alice", "delivered again")
        assert {u["user_name"]: u["status"] for u in alice.list_users()}["bob"] == "online"
        alice.add_to_group("bob", "club")
        assert {m["user_name"] for m in alice.group_members("club")} == {"alice", "bob"}
    finally:
        platform.shutdown()
        store.close()
    ok("blocking triple-rule: all three refusals while blocked, all three succeed after unblock")


def test_group_semantics_fanout_2_to_10(tmp_path):
    """Non-member add refused, member add succeeds; fan-out is exactly
    members-minus-sender, exactly once, for group sizes 2..10."""
    platform, store, _ = make_world(tmp_path)
    try:
        names = [f"user{i}" for i in range(10)]
        clients = {name: login(platform, name) for name in names}
        outsider = login(platform, "outsider")

        owner = clients[names[0]]
        owner.create_group("seed")
        expect_error("NotAMember", outsider.add_to_group, names[1], "seed")
        owner.add_to_group(names[1], "seed")  # member add succeeds

        for size in range(2, 11):
            group = f"fan-{size}"
            members = names[:size]
            owner.create_group(group)
            for member in members[1:]:
                owner.add_to_group(member, group)
            for c in clients.values():
                c.drain_pushes()
            outsider.drain_pushes()

            sender = clients[members[0]]
            sender.send(group, f"fanout {size}")
            should_receive = set(members[1:])
            assert wait_until(
                lambda: all(
                    any(p["event"] == "message" for p in clients[m]._behavior.pushes.queue)
                    for m in should_receive
                )
            )
            time.sleep(0.1)  # allow any duplicate to surface
            deliveries = Counter()
            for name in names:
                for push in clients[name].drain_pushes():
                    if push["event"] == "message" and push["payload"]["body"] == f"fanout {size}":
                        deliveries[name] += 1
            assert deliveries == Counter({m: 1 for m in should_receive}), f"size {size}"
            assert outsider.drain_pushes() == []
    finally:
        platform.shutdown()
        store.close()
    ok("group semantics: authority enforced; exact-once fan-out for sizes 2..10")


def test_per_viewer_deletion_dual_view_and_restart(tmp_path):
    """Deleted messages vanish only for the deleter; restart preserves tombstones."""
    platform, store, _ = make_world(tmp_path)
    alice = login(platform, "alice")
    bob = login(platform, "bob")
    kept = alice.send("bob", "keep me")
    doomed = alice.send("bob", "delete me")
    alice.delete_message(doomed["message_id"])
    assert [m["body"] for m in alice.history("bob")] == ["keep me"]
    assert [m["body"] for m in bob.history("alice")] == ["delete me", "keep me"]
    bob.delete_conversation("alice")
    assert bob.history("alice") == []
    assert [m["body"] for m in alice.history("bob")] == ["keep me"]
    platform.shutdown()
    store.close()

    platform2 = start_main_container(PlatformConfig())
    store2 = Store(store.root)
    platform2.spawn_agent(CHAT_MANAGER_NAME, ChatManager(store2, pbkdf2_iterations=500))
    assert wait_until(lambda: platform2.df_search("chat"))
    try:
        alice2 = login(platform2, "alice", register=False)
        bob2 = login(platform2, "bob", register=False)
        assert [m["body"] for m in alice2.history("bob")] == ["keep me"]
        assert bob2.history("alice") == []
        assert kept["message_id"] in {m["message_id"] for m in alice2.history("bob")}
    finally:
        platform2.shutdown()
        store2.close()
    ok("per-viewer deletion: dual-view oracle holds and tombstones survive restart")


def test_storage_oracle_100k(tmp_path):
    """Indexed queryHistory equals the linear-scan oracle on 100k random
    messages; archive round-trip lossless; purge never alters history."""
    rng = random.Random(100_000)
    store = Store(tmp_path / "bulk", durable=False, segment_max_bytes=1 << 22)
    users = [f"u{i}" for i in range(6)]
    for name in users:
        store.add_user(UserRecord(name, "d", "s"))
    groups = ["g0", "g1", "g2"]
    for g in groups:
        store.add_group(GroupRecord(g, set(users[:3]), created_at=1))

    sent, tombs = [], {}
    for i in range(100_000):
        sender = rng.choice(users)
        if rng.random() < 0.25:
            kind, target = "group", rng.choice(groups)
        else:
            kind = "user"
            target = rng.choice([u for u in users if u != sender])
        msg = store.append_message(sender, kind, target, f"b{i % 97}", sent_at=10_000 + i)
        sent.append(msg)
        if rng.random() < 0.05:
            viewer = rng.choice(users)
            store.tombstone(msg.message_id, viewer)
            tombs.setdefault(msg.message_id, set()).add(viewer)

    def oracle(viewer, kind, peer, limit, before):
        if kind == "group":
            want = ("group", peer)
        else:
            want = ("user",) + tuple(sorted((viewer, peer)))
        out = []
        for m in sent:
            key = ("group", m.target) if m.target_kind == "group" else ("user",) + tuple(sorted((m.sender, m.target)))
            if key != want:
                continue
            if before is not None and m.message_id >= before:
                continue
            if viewer in tombs.get(m.message_id, ()):
                continue
            out.append(m)
        out.sort(key=lambda m: -m.message_id)
        return out[:limit]

    for _ in range(100):
        viewer = rng.choice(users)
        if rng.random() < 0.4:
            kind, peer = "group", rng.choice(groups)
        else:
            kind, peer = "user", rng.choice([u for u in users if u != viewer])
        limit = rng.randint(1, 60)
        before = rng.choice([None, rng.randint(1, 100_001)])
        got = store.query_history(viewer, kind, peer, limit, before)
        want = oracle(viewer, kind, peer, limit, before)
        assert [(m.message_id, m.body) for m in got] == [(m.message_id, m.body) for m in want]

    # archive round-trip lossless
    store.groups["g2"].members.clear()
    original_g2 = [m for m in store.iter_messages() if m.target_kind == "group" and m.target == "g2"]
    archived = store.archive_inactive_groups(now=10**15, inactivity_ms=1)
    assert "g2" in archived
    expanded = store.expand_archive("g2")
    assert [(m.message_id, m.sender, m.body, m.sent_at, m.deleted_for) for m in expanded] == [
        (m.message_id, m.sender, m.body, m.sent_at, m.deleted_for) for m in original_g2
    ]

    # purge never alters history results
    store.log_action("u0", "noise", "ok", at=1)
    probe = [("u0", "user", "u1"), ("u1", "group", "g0")]
    before_purge = [
        [(m.message_id, m.body) for m in store.query_history(v, k, p, 40)] for v, k, p in probe
    ]
    store.purge_expired_logs(now=10**15, ttl_ms=1)
    after_purge = [
        [(m.message_id, m.body) for m in store.query_history(v, k, p, 40)] for v, k, p in probe
    ]
    assert before_purge == after_purge
    store.close()
    ok("storage oracle: 100k-message index/scan equivalence, lossless archive, purge-safe history")


def test_geofence_and_haversine():
    """far-in-in-out-in yields exactly 2 enter events; haversine within 1e-6
    relative of the law-of-cosines oracle on 1,000 random pairs."""
    fence = Geofence("museum", (0.0, 0.0), 1000.0)
    km = 1 / 111.19492664455873
    path = [10.0, 0.5, 0.2, 5.0, 0.1]
    state = GeofenceState()
    events = [geofence_check(state, fence, (0.0, d * km)) for d in path]
    assert sum(e is not None for e in events) == 2

    def oracle(a, b):
        p1, l1 = math.radians(a[0]), math.radians(a[1])
        p2, l2 = math.radians(b[0]), math.radians(b[1])
        c = math.sin(p1) * math.sin(p2) + math.cos(p1) * math.cos(p2) * math.cos(l2 - l1)
        return EARTH_RADIUS_M * math.acos(max(-1.0, min(1.0, c)))

    rng = random.Random(6371)
    for _ in range(1000):
        a = (rng.uniform(-90, 90), rng.uniform(-180, 180))
        b = (rng.uniform(-90, 90), rng.uniform(-180, 180))
        assert haversine_distance(a, b) == pytest.approx(oracle(a, b), rel=1e-6, abs=1e-3)
    ok("geofence: exactly 2 enter events on replay; haversine within 1e-6 of oracle on 1,000 pairs")


def test_lexicon_auto_block(tmp_path):
    """Banned token triggers block + sender notification; substring does not."""
    lexicon = Lexicon(frozenset({"darn"}), frozenset())
    platform, store, _ = make_world(tmp_path, lexicon=lexicon)
    try:
        alice = login(platform, "alice")
        bob = login(platform, "bob")
        bob.send("alice", "totally darning socks")  # substring only: clean
        assert not store.has_block("alice", "bob")
        bob.send("alice", "well darn")
        notice = bob.poll_push()
        assert notice["event"] == "auto-block" and notice["trigger"] == "darn"
        assert store.has_block("alice", "bob")
        expect_error("BlockedByTarget", bob.send, "alice", "follow-up")
    finally:
        platform.shutdown()
        store.close()
    ok("lexicon auto-block: token triggers block + notice; substring stays clean")


def test_mining_oracle_10k(tmp_path):
    """Phrase counts and top-k equal brute force on a 10k-message corpus;
    usage report counts equal an ActionLog scan."""
    rng = random.Random(404)
    vocab = ["good", "morning", "night", "rain", "sun", "coffee", "tea", "maybe"]
    bodies = [
        " ".join(rng.choice(vocab) for _ in range(rng.randint(0, 9)))
        for _ in range(10_000)
    ]
    corpus = [ChatMessage(i + 1, "u", "user", "v", b, 1) for i, b in enumerate(bodies)]
    model = build_phrase_model(corpus)

    brute: Counter = Counter()
    for body in bodies:
        tokens = tokenize(body)
        for n in (1, 2, 3):
            for i in range(len(tokens) - n + 1):
                brute[tuple(tokens[i:i + n])] += 1
    assert model.counts == dict(brute)

    for prefix in ("good", "good morning", "rain", "tea maybe"):
        ptoks = tuple(prefix.split())
        candidates = sorted(
            ((" ".join(g), c) for g, c in brute.items()
             if len(g) > len(ptoks) and g[:len(ptoks)] == ptoks),
            key=lambda kv: (-kv[1], kv[0]),
        )
        for k in (1, 5, 50):
            assert autocomplete_suggest(model, prefix, k) == [p for p, _ in candidates[:k]]

    store = Store(tmp_path / "mining", durable=False)
    ops = ["send-message", "login", "block", "fetch-history"]
    expected: Counter = Counter()
    for i in range(2000):
        op = rng.choice(ops)
        at = rng.randint(0, 10_000)
        store.log_action("someone", op, "ok", at=at)
        if 2_000 <= at <= 8_000:
            expected[op] += 1
    report = usage_report(store, 2_000, 8_000)
    assert report.op_counts == dict(expected)
    store.close()
    ok("mining oracle: 10k-corpus phrase counts + top-k match brute force; usage counts match scan")


def test_crisis_auto_group(tmp_path):
    """A synthetic alert groups exactly the in-radius users; replay idempotent."""
    platform, store, _ = make_world(tmp_path)
    try:
        positions = {
            "inside1": (45.00, 7.00),
            "inside2": (45.10, 7.05),
            "inside3": (44.95, 6.98),
            "outside1": (47.00, 9.00),
            "outside2": (41.00, 2.00),
        }
        clients = {}
        for name, (lat, lon) in positions.items():
            clients[name] = login(platform, name)
            clients[name].update_location(lat, lon)
        homebody = login(platform, "nowhere")  # no location: excluded

        alert = CrisisAlert("quake-1", "earthquake", (45.0, 7.0), 25_000.0, at=1)
        in_radius = crisis_members(
            alert, [store.users[name] for name in positions] + [store.users["nowhere"]]
        )
        value = clients["inside1"].call("crisis-alert", alert.payload())
        assert set(value["members"]) == in_radius == {"inside1", "inside2", "inside3"}
        assert store.groups["crisis-quake-1"].members == in_radius

        replay = clients["inside1"].call("crisis-alert", alert.payload())
        assert replay["added"] == []
        assert set(replay["members"]) == in_radius
        assert homebody.poll_push(timeout=0.2) is None
    finally:
        platform.shutdown()
        store.close()
    ok("crisis: alert groups exactly the in-radius users; replay idempotent")
