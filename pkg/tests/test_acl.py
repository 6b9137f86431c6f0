import itertools
import json
import random

import pytest

from agentmesh.acl import (
    MAX_PAYLOAD,
    AclMessage,
    AgentId,
    MessageQueue,
    MessageTemplate,
    Performative,
    decode_frame,
    encode_frame,
    make_message,
    overflow_failure_reply,
)
from agentmesh.errors import (
    AgentMeshError,
    EmptyReceivers,
    FrameTooLarge,
    InvalidAgentName,
    MalformedPayload,
    TruncatedFrame,
    UnknownPerformative,
    WrongOwner,
)
from util import random_message

PERFORMATIVE_NAMES = [
    "accept-proposal", "agree", "cancel", "cfp", "confirm", "disconfirm",
    "failure", "inform", "inform-if", "inform-ref", "not-understood",
    "propagate", "propose", "proxy", "query-if", "query-ref", "refuse",
    "reject-proposal", "request", "request-when", "request-whenever",
    "subscribe",
]


class TestPerformative:
    def test_exactly_22(self):
        assert len(Performative) == 22
        assert sorted(p.value for p in Performative) == PERFORMATIVE_NAMES

    def test_round_trip_and_case_insensitive(self):
        for name in PERFORMATIVE_NAMES:
            p = Performative.parse(name)
            assert p.render() == name
            assert Performative.parse(p.render()) is p
            assert Performative.parse(name.upper()) is p

    def test_unknown_rejected(self):
        for bad in ("shout", "inform ", "", "informs", "query"):
            with pytest.raises(UnknownPerformative):
                Performative.parse(bad)


class TestAgentId:
    def test_render_parse(self):
        a = AgentId("alice", "10.0.0.1:9000")
        assert a.render() == "alice@10.0.0.1:9000"
        assert AgentId.parse(a.render()) == a
        assert AgentId.parse("bob@local") == AgentId("bob")

    def test_name_rules(self):
        with pytest.raises(InvalidAgentName):
            AgentId("")
        with pytest.raises(InvalidAgentName):
            AgentId("a" * 65)
        with pytest.raises(InvalidAgentName):
            AgentId("a@b")
        with pytest.raises(InvalidAgentName):
            AgentId("a\x00b")
        AgentId("a" * 64)  # boundary is legal


def aid(name, container="local"):
    return AgentId(name, container)


class TestMakeMessage:
    def test_basic_inform(self):
        msg = make_message(
            Performative.INFORM, aid("a"), [aid("b")], "7 May 2016 rains"
        )
        assert msg.performative is Performative.INFORM
        assert msg.content == "7 May 2016 rains"
        assert msg.timestamp > 0
        assert msg.conversation_id is None
        assert msg.reply_with is None
        assert msg.in_reply_to is None

    def test_empty_receivers(self):
        with pytest.raises(EmptyReceivers):
            make_message(Performative.REQUEST, aid("a"), [], "do X")

    def test_empty_content_two_receivers(self):
        msg = make_message(Performative.INFORM, aid("a"), [aid("b"), aid("c")], "")
        assert len(msg.receivers) == 2
        assert msg.content == ""


class TestFraming:
    def test_round_trip_identity(self):
        rng = random.Random(1001)
        for _ in range(500):
            msg = random_message(rng)
            assert decode_frame(encode_frame(msg)) == msg

    def test_deterministic_bytes(self):
        # byte comparison oracle over randomized messages
        rng = random.Random(1002)
        for _ in range(200):
            msg = random_message(rng)
            assert encode_frame(msg) == encode_frame(msg)
            rebuilt = AclMessage(**{f: getattr(msg, f) for f in (
                "performative", "sender", "receivers", "content", "timestamp",
                "conversation_id", "reply_with", "in_reply_to")})
            assert encode_frame(rebuilt) == encode_frame(msg)

    def test_wire_shape(self):
        msg = make_message(Performative.INFORM, aid("a"), [aid("b")], "hi")
        frame = encode_frame(msg)
        length = int.from_bytes(frame[:4], "big")
        assert length == len(frame) - 4
        obj = json.loads(frame[4:].decode("utf-8"))
        assert obj["performative"] == "inform"
        assert obj["sender"] == "a@local"
        assert obj["receivers"] == ["b@local"]
        assert "conversation_id" not in obj  # unset fields omitted
        # canonical form: keys sorted, no whitespace
        assert frame[4:] == json.dumps(
            obj, sort_keys=True, separators=(",", ":"), ensure_ascii=False
        ).encode("utf-8")

    def test_frame_too_large(self):
        msg = make_message(Performative.INFORM, aid("a"), [aid("b")], "x" * (MAX_PAYLOAD + 1))
        with pytest.raises(FrameTooLarge):
            encode_frame(msg)

    def test_truncated(self):
        msg = make_message(Performative.INFORM, aid("a"), [aid("b")], "hello")
        frame = encode_frame(msg)
        with pytest.raises(TruncatedFrame):
            decode_frame(frame[:3])
        # prefix claims more than provided
        bad = (100).to_bytes(4, "big") + b"x" * 50
        with pytest.raises(TruncatedFrame):
            decode_frame(bad)

    def test_unknown_performative_payload(self):
        msg = make_message(Performative.INFORM, aid("a"), [aid("b")], "hi")
        obj = msg.payload()
        obj["performative"] = "shout"
        payload = json.dumps(obj, sort_keys=True, separators=(",", ":")).encode()
        frame = len(payload).to_bytes(4, "big") + payload
        with pytest.raises(UnknownPerformative):
            decode_frame(frame)

    def test_fuzz_mutations_never_crash(self):
        # mutated valid frames must only raise framing errors, never crash
        rng = random.Random(1003)
        for _ in range(400):
            frame = bytearray(encode_frame(random_message(rng)))
            for _ in range(rng.randint(1, 8)):
                op = rng.randrange(3)
                if op == 0 and len(frame) > 1:
                    frame[rng.randrange(len(frame))] = rng.randrange(256)
                elif op == 1 and len(frame) > 5:
                    del frame[rng.randrange(len(frame))]
                else:
                    frame.insert(rng.randrange(len(frame) + 1), rng.randrange(256))
            try:
                decode_frame(bytes(frame))
            except AgentMeshError:
                pass  # every failure must be a typed framing error

    def test_rejects_extra_keys_and_bad_types(self):
        good = make_message(Performative.INFORM, aid("a"), [aid("b")], "hi").payload()

        def frame_of(obj):
            payload = json.dumps(obj, sort_keys=True, separators=(",", ":")).encode()
            return len(payload).to_bytes(4, "big") + payload

        for mutate in (
            lambda o: o.update(extra=1),
            lambda o: o.pop("sender"),
            lambda o: o.update(receivers=[]),
            lambda o: o.update(timestamp=0),
            lambda o: o.update(timestamp="12"),
            lambda o: o.update(content=7),
            lambda o: o.update(sender="no-at-sign"),
        ):
            obj = dict(good)
            mutate(obj)
            with pytest.raises(MalformedPayload):
                decode_frame(frame_of(obj))


def fill(owner, sender, n, content="m"):
    return [
        AclMessage(Performative.INFORM, sender, (owner,), f"{content}{i}", i + 1)
        for i in range(n)
    ]


class TestMessageQueue:
    def test_put_take_fifo(self):
        owner = aid("bob")
        q = MessageQueue(owner, limit=100)
        msgs = fill(owner, aid("alice"), 5)
        for m in msgs:
            assert q.put(m) is True
        assert len(q) == 5
        assert [q.take() for _ in range(5)] == msgs
        assert q.take() is None

    def test_wrong_owner(self):
        q = MessageQueue(aid("bob"))
        msg = make_message(Performative.INFORM, aid("a"), [aid("carol")], "x")
        with pytest.raises(WrongOwner):
            q.put(msg)

    def test_overflow_rejects_newest_with_failure_reply(self):
        owner = aid("bob")
        rejected = []
        q = MessageQueue(owner, limit=2, on_reject=rejected.append)
        msgs = fill(owner, aid("alice"), 3)
        assert q.put(msgs[0]) and q.put(msgs[1])
        assert q.put(msgs[2]) is False
        assert len(q) == 2
        (reply,) = rejected
        assert reply.performative is Performative.FAILURE
        assert reply.receivers == (aid("alice"),)
        assert json.loads(reply.content)["error"] == "queue-full"

    def test_overflow_reply_correlates(self):
        owner = aid("bob")
        base = make_message(Performative.REQUEST, aid("alice"), [owner], "x")
        req = AclMessage(**{**base.__dict__, "reply_with": "tok-1"})
        reply = overflow_failure_reply(req, owner)
        assert reply.in_reply_to == "tok-1"

    def test_template_take_earliest_match_keeps_order(self):
        owner = aid("bob")
        inform = AclMessage(Performative.INFORM, aid("a"), (owner,), "i", 1)
        request = AclMessage(Performative.REQUEST, aid("a"), (owner,), "r", 2)
        q = MessageQueue(owner)
        q.put(inform)
        q.put(request)
        got = q.take(MessageTemplate(performative=Performative.REQUEST))
        assert got == request
        assert q.take() == inform  # inform stayed at the head

    def test_template_against_filter_oracle_all_permutations(self):
        # enumerate all orderings of a 4-message pool; templated takes must
        # agree with a filter-then-remove oracle over plain lists
        owner = aid("bob")
        pool = [
            AclMessage(Performative.INFORM, aid("a"), (owner,), "1", 1),
            AclMessage(Performative.REQUEST, aid("a"), (owner,), "2", 2),
            AclMessage(Performative.REQUEST, aid("c"), (owner,), "3", 3),
            AclMessage(Performative.INFORM, aid("c"), (owner,), "4", 4, conversation_id="k"),
        ]
        templates = [
            None,
            MessageTemplate(),
            MessageTemplate(performative=Performative.REQUEST),
            MessageTemplate(sender_name="c"),
            MessageTemplate(performative=Performative.INFORM, sender_name="c"),
            MessageTemplate(conversation_id="k"),
        ]
        for perm in itertools.permutations(pool):
            for template in templates:
                q = MessageQueue(owner)
                for m in perm:
                    q.put(m)
                oracle = list(perm)
                while True:
                    if template is None:
                        expect = oracle.pop(0) if oracle else None
                    else:
                        matches = [m for m in oracle if template.matches(m)]
                        expect = matches[0] if matches else None
                        if expect is not None:
                            oracle.remove(expect)
                    got = q.take(template)
                    assert got == expect
                    if expect is None:
                        break
                # template soundness: everything returned matched; completeness:
                # loop only stops once no queued message matches
                assert all(not template.matches(m) for m in oracle) if template else not oracle

    def test_empty_template_matches_everything(self):
        msg = make_message(Performative.CFP, aid("a"), [aid("b")], "x")
        assert MessageTemplate().matches(msg)

    def test_blocking_receive(self):
        import threading

        owner = aid("bob")
        q = MessageQueue(owner)
        msg = make_message(Performative.INFORM, aid("a"), [owner], "late")
        threading.Timer(0.05, q.put, args=(msg,)).start()
        got = q.receive(timeout=2.0)
        assert got == msg

    def test_receive_timeout_returns_none(self):
        q = MessageQueue(aid("bob"))
        assert q.receive(timeout=0.05) is None
