"""Shared test helpers: randomized message generation with seeded RNGs."""

import random
import string

from agentmesh.acl import AclMessage, AgentId, Performative

NAME_ALPHABET = string.ascii_lowercase + string.digits + "-_."
CONTENT_ALPHABET = string.printable + "åßçđéñ中文🙂"

PERFORMATIVES = list(Performative)


def random_name(rng: random.Random, max_len: int = 16) -> str:
    n = rng.randint(1, max_len)
    return "".join(rng.choice(NAME_ALPHABET) for _ in range(n))


def random_agent(rng: random.Random) -> AgentId:
    if rng.random() < 0.5:
        container = "local"
    else:
        container = f"10.0.0.{rng.randint(1, 254)}:{rng.randint(1024, 65535)}"
    return AgentId(random_name(rng), container)


def random_content(rng: random.Random, max_len: int = 200) -> str:
    n = rng.randint(0, max_len)
    return "".join(rng.choice(CONTENT_ALPHABET) for _ in range(n))


def random_message(rng: random.Random) -> AclMessage:
    receivers = tuple(random_agent(rng) for _ in range(rng.randint(1, 4)))
    optional = {}
    if rng.random() < 0.5:
        optional["conversation_id"] = random_name(rng)
    if rng.random() < 0.5:
        optional["reply_with"] = random_name(rng)
    if rng.random() < 0.5:
        optional["in_reply_to"] = random_name(rng)
    return AclMessage(
        performative=rng.choice(PERFORMATIVES),
        sender=random_agent(rng),
        receivers=receivers,
        content=random_content(rng),
        timestamp=rng.randint(1, 2**48),
        **optional,
    )
