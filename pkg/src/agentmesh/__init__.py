"""agentmesh: a miniature FIPA-style multi-agent platform with a messenger service."""

__version__ = "0.1.0"

from .acl import (
    AclMessage,
    AgentId,
    MessageQueue,
    MessageTemplate,
    Performative,
    decode_frame,
    encode_frame,
    make_message,
)

__all__ = [
    "AclMessage",
    "AgentId",
    "MessageQueue",
    "MessageTemplate",
    "Performative",
    "decode_frame",
    "encode_frame",
    "make_message",
]
