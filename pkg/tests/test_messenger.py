import random
import time
from types import SimpleNamespace

import pytest

from agentmesh.client import ChatClient
from agentmesh.errors import ProviderUnavailable, ServiceError
from agentmesh.messenger import CHAT_MANAGER_NAME, ChatManager
from agentmesh.platform import PlatformConfig, start_main_container
from agentmesh.sensitivity import Lexicon
from agentmesh.store import Store


def wait_until(predicate, timeout=5.0, interval=0.01):
    deadline = time.monotonic() + timeout
    while time.monotonic() < deadline:
        if predicate():
            return True
        time.sleep(interval)
    return predicate()


@pytest.fixture
def world(tmp_path):
    platform = start_main_container(PlatformConfig(heartbeat_interval=0.5))
    store = Store(tmp_path / "data")
    lexicon = Lexicon(frozenset({"darn", "blast"}), frozenset({"thanks", "great"}))
    manager = ChatManager(store, lexicon=lexicon, pbkdf2_iterations=500)
    platform.spawn_agent(CHAT_MANAGER_NAME, manager)
    assert wait_until(lambda: platform.df_search("chat"))
    w = SimpleNamespace(platform=platform, store=store, manager=manager, clients=[])
    yield w
    for c in w.clients:
        c.close()
    platform.shutdown()
    store.close()


def client_of(world) -> ChatClient:
    c = ChatClient(world.platform)
    world.clients.append(c)
    return c


def user(world, name, password="hunter2") -> ChatClient:
    c = client_of(world)
    c.register(name, password)
    c.login(name, password)
    return c


def expect_error(code, fn, *args, **kw):
    with pytest.raises(ServiceError) as err:
        fn(*args, **kw)
    assert err.value.code == code


class TestAccounts:
    def test_register_fresh(self, world):
        c = client_of(world)
        value = c.register("alice", "hunter2")
        assert value == {"user_name": "alice", "status": "offline"}

    def test_duplicate_user_name(self, world):
        c = client_of(world)
        c.register("alice", "hunter2")
        expect_error("DuplicateUserName", c.register, "alice", "other-pw")

    def test_weak_password(self, world):
        c = client_of(world)
        expect_error("WeakPassword", c.register, "alice", "x")

    def test_password_never_stored_plain(self, world):
        c = client_of(world)
        c.register("alice", "hunter2")
        record = world.store.users["alice"]
        assert "hunter2" not in (record.password_digest, record.salt)

    def test_login_logout(self, world):
        alice = user(world, "alice")
        observer = user(world, "bob")
        statuses = {u["user_name"]: u["status"] for u in observer.list_users()}
        assert statuses["alice"] == "online"
        alice.logout()
        statuses = {u["user_name"]: u["status"] for u in observer.list_users()}
        assert statuses["alice"] == "offline"

    def test_bad_credentials(self, world):
        c = client_of(world)
        c.register("alice", "hunter2")
        expect_error("BadCredentials", c.login, "alice", "wrong")
        expect_error("UnknownUser", c.login, "nosuch", "pw")

    def test_already_online(self, world):
        user(world, "alice")
        second = client_of(world)
        expect_error("AlreadyOnline", second.login, "alice", "hunter2")

    def test_second_device_sees_history(self, world):
        alice = user(world, "alice")
        bob = user(world, "bob")
        alice.send("bob", "message one")
        bob.send("alice", "message two")
        alice.logout()
        second_device = client_of(world)
        second_device.login("alice", "hunter2")
        bodies = [m["body"] for m in second_device.history("bob")]
        assert bodies == ["message two", "message one"]


class TestListUsers:
    def test_all_with_status(self, world):
        alice = user(world, "alice")
        client_of(world).register("bob", "hunter2")
        got = alice.list_users()
        assert got == [
            {"user_name": "alice", "status": "online"},
            {"user_name": "bob", "status": "offline"},
        ]

    def test_blocked_user_status_hidden(self, world):
        alice = user(world, "alice")
        user(world, "bob")
        alice.block("bob")
        statuses = {u["user_name"]: u["status"] for u in alice.list_users()}
        assert statuses["bob"] == "hidden"

    def test_blocked_filter(self, world):
        alice = user(world, "alice")
        user(world, "bob")
        user(world, "carol")
        alice.block("carol")
        got = alice.list_users("blocked")
        assert [u["user_name"] for u in got] == ["carol"]

    def test_not_in_group_matches_set_complement(self, world):
        rng = random.Random(17)
        names = [f"u{i}" for i in range(8)]
        clients = {n: user(world, n) for n in names}
        owner = clients[names[0]]
        owner.create_group("squad")
        members = {names[0]}
        for n in rng.sample(names[1:], 4):
            owner.add_to_group(n, "squad")
            members.add(n)
        got = {u["user_name"] for u in owner.list_users("not-in-group", group="squad")}
        assert got == set(names) - members

    def test_not_in_group_unknown_group(self, world):
        alice = user(world, "alice")
        expect_error("UnknownGroup", alice.list_users, "not-in-group", group="nope")

    def test_auth_required(self, world):
        c = client_of(world)
        c.register("alice", "hunter2")
        expect_error("AuthRequired", c.call, "list-users", {"filter": "all"})


class TestConversations:
    def test_empty(self, world):
        alice = user(world, "alice")
        assert alice.conversations() == []

    def test_one_message_lists_for_both(self, world):
        alice = user(world, "alice")
        bob = user(world, "bob")
        alice.send("bob", "hi")
        assert [c["peer"] for c in alice.conversations()] == ["bob"]
        assert [c["peer"] for c in bob.conversations()] == ["alice"]

    def test_sorted_by_recency(self, world):
        alice = user(world, "alice")
        for name in ("bob", "carol", "dave"):
            user(world, name)
        alice.send("bob", "1")
        time.sleep(0.002)
        alice.send("carol", "2")
        time.sleep(0.002)
        alice.send("dave", "3")
        time.sleep(0.002)
        alice.send("bob", "4")  # bob becomes most recent again
        peers = [c["peer"] for c in alice.conversations()]
        # oracle: sort by last message timestamp descending
        last = {}
        for m in world.store.iter_messages():
            if m.sender == "alice":
                last[m.target] = max(last.get(m.target, 0), m.sent_at)
        expected = sorted(last, key=lambda p: -last[p])
        assert peers == expected == ["bob", "dave", "carol"]

    def test_new_group_listed_for_creator(self, world):
        alice = user(world, "alice")
        alice.create_group("reading-club")
        got = alice.conversations("group")
        assert [c["peer"] for c in got] == ["reading-club"]


class TestGroups:
    def test_create_group_creator_sole_member(self, world):
        alice = user(world, "alice")
        value = alice.create_group("g1")
        assert value["members"] == ["alice"]

    def test_duplicate_group_name(self, world):
        alice = user(world, "alice")
        alice.create_group("g1")
        expect_error("DuplicateGroupName", alice.create_group, "g1")

    def test_group_name_cannot_shadow_user(self, world):
        alice = user(world, "alice")
        user(world, "bob")
        expect_error("DuplicateGroupName", alice.create_group, "bob")

    def test_member_roster_with_status(self, world):
        alice = user(world, "alice")
        user(world, "bob")
        alice.create_group("g")
        alice.add_to_group("bob", "g")
        roster = alice.group_members("g")
        assert roster == [
            {"user_name": "alice", "status": "online"},
            {"user_name": "bob", "status": "online"},
        ]

    def test_non_member_cannot_list(self, world):
        alice = user(world, "alice")
        outsider = user(world, "eve")
        alice.create_group("g")
        expect_error("NotAMember", outsider.group_members, "g")
        expect_error("UnknownGroup", outsider.group_members, "nope")

    def test_only_members_add(self, world):
        alice = user(world, "alice")
        outsider = user(world, "eve")
        user(world, "bob")
        alice.create_group("g")
        expect_error("NotAMember", outsider.add_to_group, "bob", "g")
        alice.add_to_group("bob", "g")
        assert {m["user_name"] for m in alice.group_members("g")} == {"alice", "bob"}

    def test_blocked_target_cannot_be_added(self, world):
        alice = user(world, "alice")
        user(world, "bob")
        alice.create_group("g")
        alice.block("bob")
        expect_error("TargetBlocked", alice.add_to_group, "bob", "g")

    def test_already_member(self, world):
        alice = user(world, "alice")
        user(world, "bob")
        alice.create_group("g")
        alice.add_to_group("bob", "g")
        expect_error("AlreadyMember", alice.add_to_group, "bob", "g")

    def test_leave_group(self, world):
        alice = user(world, "alice")
        bob = user(world, "bob")
        alice.create_group("g")
        alice.add_to_group("bob", "g")
        bob.leave_group("g")
        assert [m["user_name"] for m in alice.group_members("g")] == ["alice"]
        expect_error("NotAMember", bob.leave_group, "g")
        expect_error("NotAMember", bob.group_members, "g")

    def test_last_member_leaving_makes_archival_candidate(self, world):
        alice = user(world, "alice")
        alice.create_group("doomed")
        alice.send("doomed", "so lonely")
        alice.leave_group("doomed")
        archived = world.store.archive_inactive_groups(
            now=int(time.time() * 1000), inactivity_ms=365 * 86_400_000
        )
        assert archived == ["doomed"]


class TestBlocking:
    def test_triple_rule_script(self, world):
        alice = user(world, "alice")
        bob = user(world, "bob")
        alice.create_group("g")

        # before: everything works
        bob.send("alice", "hello")
        assert {u["user_name"]: u["status"] for u in alice.list_users()}["bob"] == "online"

        alice.block("bob", reason="spam")
        # 1. blocked user cannot send to the blocker
        expect_error("BlockedByTarget", bob.send, "alice", "let me in")
        # 2. blocker cannot see the blocked user's status
        assert {u["user_name"]: u["status"] for u in alice.list_users()}["bob"] == "hidden"
        # 3. blocker cannot add the blocked user to a group
        expect_error("TargetBlocked", alice.add_to_group, "bob", "g")

        alice.unblock("bob")
        bob.send("alice", "thanks for unblocking")
        assert {u["user_name"]: u["status"] for u in alice.list_users()}["bob"] == "online"
        alice.add_to_group("bob", "g")
        assert {m["user_name"] for m in alice.group_members("g")} == {"alice", "bob"}

    def test_block_is_one_directional(self, world):
        alice = user(world, "alice")
        bob = user(world, "bob")
        alice.block("bob")
        # the blocker may still message the blocked user
        alice.send("bob", "i can still talk")
        assert [m["body"] for m in bob.history("alice")] == ["i can still talk"]

    def test_reason_stored(self, world):
        alice = user(world, "alice")
        user(world, "bob")
        alice.block("bob", reason="spam")
        assert world.store.blocks[("alice", "bob")].reason == "spam"

    def test_self_block(self, world):
        alice = user(world, "alice")
        expect_error("SelfBlock", alice.block, "alice")

    def test_already_blocked_and_not_blocked(self, world):
        alice = user(world, "alice")
        user(world, "bob")
        alice.block("bob")
        expect_error("AlreadyBlocked", alice.block, "bob")
        alice.unblock("bob")
        expect_error("NotBlocked", alice.unblock, "bob")
        expect_error("UnknownUser", alice.block, "ghost")


class TestSendMessage:
    def test_online_direct_delivery_pushes_inform(self, world):
        alice = user(world, "alice")
        bob = user(world, "bob")
        sent = alice.send("bob", "hi bob")
        assert sent["sent_at"] > 0
        push = bob.poll_push()
        assert push is not None and push["event"] == "message"
        assert push["payload"]["body"] == "hi bob"
        assert push["payload"]["sent_at"] == sent["sent_at"]

    def test_offline_stored_for_later_fetch(self, world):
        alice = user(world, "alice")
        bob_account = client_of(world)
        bob_account.register("bob", "hunter2")
        alice.send("bob", "read this later")
        bob_account.login("bob", "hunter2")
        assert bob_account.poll_push(timeout=0.2) is None  # fetch, not push
        assert [m["body"] for m in bob_account.history("alice")] == ["read this later"]

    def test_group_fanout_members_minus_sender(self, world):
        alice = user(world, "alice")
        bob = user(world, "bob")
        carol = user(world, "carol")
        alice.create_group("trio")
        alice.add_to_group("bob", "trio")
        alice.add_to_group("carol", "trio")
        alice.send("trio", "hello group")
        assert bob.poll_push()["payload"]["body"] == "hello group"
        assert carol.poll_push()["payload"]["body"] == "hello group"
        assert alice.poll_push(timeout=0.3) is None  # sender gets no copy
        assert bob.poll_push(timeout=0.2) is None    # and exactly one each

    def test_group_send_requires_membership(self, world):
        alice = user(world, "alice")
        outsider = user(world, "eve")
        alice.create_group("g")
        expect_error("NotAMember", outsider.send, "g", "hello")

    def test_unknown_peer(self, world):
        alice = user(world, "alice")
        expect_error("UnknownPeer", alice.send, "ghost", "anyone")

    def test_body_too_large(self, world):
        alice = user(world, "alice")
        user(world, "bob")
        expect_error("BodyTooLarge", alice.send, "bob", "x" * (64 * 1024 + 1))
        alice.send("bob", "x" * (64 * 1024))  # boundary is legal


class TestDeletion:
    def test_delete_message_dual_view(self, world):
        alice = user(world, "alice")
        bob = user(world, "bob")
        sent = alice.send("bob", "oops")
        alice.delete_message(sent["message_id"])
        assert alice.history("bob") == []
        assert [m["body"] for m in bob.history("alice")] == ["oops"]

    def test_delete_idempotent(self, world):
        alice = user(world, "alice")
        user(world, "bob")
        sent = alice.send("bob", "x")
        alice.delete_message(sent["message_id"])
        alice.delete_message(sent["message_id"])  # second call is a no-op
        assert alice.history("bob") == []

    def test_outsider_cannot_delete(self, world):
        alice = user(world, "alice")
        bob = user(world, "bob")
        eve = user(world, "eve")
        alice.create_group("g")
        alice.add_to_group("bob", "g")
        sent = alice.send("g", "group secret")
        expect_error("NotAParticipant", eve.delete_message, sent["message_id"])
        expect_error("UnknownMessage", eve.delete_message, 10**9)

    def test_delete_conversation(self, world):
        alice = user(world, "alice")
        bob = user(world, "bob")
        for i in range(5):
            alice.send("bob", f"m{i}")
        alice.delete_conversation("bob")
        assert alice.history("bob") == []
        assert len(bob.history("alice")) == 5
        # later traffic is visible again: tombstones are per-message
        bob.send("alice", "fresh start")
        assert [m["body"] for m in alice.history("bob")] == ["fresh start"]

    def test_delete_conversation_empty_noop(self, world):
        alice = user(world, "alice")
        user(world, "bob")
        alice.delete_conversation("bob")
        expect_error("UnknownPeer", alice.delete_conversation, "ghost")


class TestAutoBlock:
    def test_banned_token_blocks_and_notifies(self, world):
        alice = user(world, "alice")
        bob = user(world, "bob")
        bob.send("alice", "well DARN it")
        push = bob.poll_push()
        assert push["event"] == "auto-block"
        assert push["trigger"] == "darn"
        assert push["blocked_by"] == ["alice"]
        assert world.store.has_block("alice", "bob")
        # the offending message was still stored
        assert [m["body"] for m in alice.history("bob")] == ["well DARN it"]
        # and from now on bob is blocked
        expect_error("BlockedByTarget", bob.send, "alice", "hello?")

    def test_substring_is_clean(self, world):
        alice = user(world, "alice")
        bob = user(world, "bob")
        bob.send("alice", "darning socks is wholesome")
        assert alice.poll_push()["event"] == "message"
        assert bob.poll_push(timeout=0.3) is None  # no auto-block notice
        assert not world.store.has_block("alice", "bob")

    def test_group_auto_block_applies_to_all_members(self, world):
        alice = user(world, "alice")
        bob = user(world, "bob")
        carol = user(world, "carol")
        alice.create_group("g")
        alice.add_to_group("bob", "g")
        alice.add_to_group("carol", "g")
        bob.send("g", "blast!")
        assert wait_until(
            lambda: world.store.has_block("alice", "bob") and world.store.has_block("carol", "bob")
        )
        assert not world.store.has_block("bob", "bob")


class TestCrisisAndUnblock:
    def test_crisis_groups_in_radius_users(self, world):
        near1 = user(world, "near1")
        near2 = user(world, "near2")
        far = user(world, "far")
        user(world, "nowhere")
        near1.update_location(45.0, 7.0)
        near2.update_location(45.05, 7.02)
        far.update_location(52.0, 13.0)
        alert = {"alert_id": "eq1", "kind": "earthquake",
                 "epicenter": [45.0, 7.0], "radius_m": 20_000, "at": 1}
        value = near1.call("crisis-alert", alert)
        assert value["group_name"] == "crisis-eq1"
        assert value["members"] == ["near1", "near2"]
        assert near2.poll_push()["event"] == "crisis"
        # replay: same group, no duplicates, no re-notification
        again = near1.call("crisis-alert", alert)
        assert again["members"] == ["near1", "near2"] and again["added"] == []
        assert near2.poll_push(timeout=0.3) is None

    def test_auto_unblock_needs_opt_in(self, world):
        alice = user(world, "alice")
        bob = user(world, "bob")
        for _ in range(5):
            bob.send("alice", "thanks, great stuff")
        alice.block("bob")
        value = alice.call("evaluate-unblocks", {})
        assert value["unblocked"] == []  # not opted in
        alice.set_auto_unblock(True)
        value = alice.call("evaluate-unblocks", {})
        assert value["unblocked"] == [["alice", "bob"]]
        assert not world.store.has_block("alice", "bob")

    def test_low_score_stays_blocked(self, world):
        alice = user(world, "alice")
        bob = user(world, "bob")
        for _ in range(5):
            bob.send("alice", "nothing notable here")
        alice.block("bob")
        alice.set_auto_unblock(True)
        assert alice.call("evaluate-unblocks", {})["unblocked"] == []
        assert world.store.has_block("alice", "bob")

    def test_provider_unavailable_takes_no_action(self, world):
        class Down:
            def score(self, user_name):
                raise ProviderUnavailable()

        world.manager.reputation = Down()
        alice = user(world, "alice")
        user(world, "bob")
        alice.block("bob")
        alice.set_auto_unblock(True)
        assert alice.call("evaluate-unblocks", {})["unblocked"] == []
        assert world.store.has_block("alice", "bob")


class TestPhraseMiner:
    def test_miner_agent_rebuilds_model(self, world):
        from agentmesh.messenger import PhraseMiner

        alice = user(world, "alice")
        user(world, "bob")
        alice.send("bob", "good morning")
        alice.send("bob", "good morning")
        miner = PhraseMiner(world.store, interval=0.05)
        world.platform.spawn_agent("phrase-miner", miner)
        assert wait_until(lambda: miner.model.counts.get(("good", "morning")) == 2)
        assert any(
            e.action == "build-phrases" and e.agent == "phrase-miner"
            for e in world.store.scan_actions()
        )


class TestPersistenceAcrossRestart:
    def test_restart_reproduces_history(self, world, tmp_path):
        alice = user(world, "alice")
        bob = user(world, "bob")
        alice.send("bob", "before restart")
        sent = bob.send("alice", "delete me")
        alice.delete_message(sent["message_id"])
        before = alice.history("bob")

        world.platform.shutdown()
        world.store.close()

        platform2 = start_main_container(PlatformConfig())
        store2 = Store(world.store.root)
        manager2 = ChatManager(store2, pbkdf2_iterations=500)
        platform2.spawn_agent(CHAT_MANAGER_NAME, manager2)
        assert wait_until(lambda: platform2.df_search("chat"))
        try:
            alice2 = ChatClient(platform2)
            alice2.login("alice", "hunter2")
            after = alice2.history("bob")
            assert after == before
            assert [m["body"] for m in after] == ["before restart"]
        finally:
            platform2.shutdown()
            store2.close()
