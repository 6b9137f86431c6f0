"""Exception types shared across the platform.

Every error carries a ``code`` string, which is what travels on the wire in
refuse/failure replies.  Local callers catch the exception classes; remote
callers see the code.
"""


class AgentMeshError(Exception):
    code = "Error"

    def __str__(self) -> str:
        return super().__str__() or self.code


# --- message envelope / framing ---

class EmptyReceivers(AgentMeshError):
    code = "EmptyReceivers"


class InvalidAgentName(AgentMeshError):
    code = "InvalidAgentName"


class FrameTooLarge(AgentMeshError):
    code = "FrameTooLarge"


class TruncatedFrame(AgentMeshError):
    code = "TruncatedFrame"


class MalformedPayload(AgentMeshError):
    code = "MalformedPayload"


class UnknownPerformative(AgentMeshError):
    code = "UnknownPerformative"


class WrongOwner(AgentMeshError):
    code = "WrongOwner"


# --- platform runtime ---

class PortInUse(AgentMeshError):
    code = "PortInUse"


class MainUnreachable(AgentMeshError):
    code = "MainUnreachable"


class HandshakeRejected(AgentMeshError):
    code = "HandshakeRejected"


class DuplicateName(AgentMeshError):
    code = "DuplicateName"


class ContainerGone(AgentMeshError):
    code = "ContainerGone"


class UnknownAgent(AgentMeshError):
    code = "UnknownAgent"


class DuplicateService(AgentMeshError):
    code = "DuplicateService"


class UnknownEntry(AgentMeshError):
    code = "UnknownEntry"


# --- sensitivity engine ---

class MalformedDirectory(AgentMeshError):
    code = "MalformedDirectory"


class ProviderUnavailable(AgentMeshError):
    code = "ProviderUnavailable"


# --- storage ---

class IntegrityError(AgentMeshError):
    code = "IntegrityError"


class ServiceError(AgentMeshError):
    """A messenger rule violation; ``code`` is set per instance.

    Raised inside operation handlers, rendered as a refuse reply, and
    re-raised client-side when such a reply comes back.
    """

    def __init__(self, code: str, detail: str = ""):
        super().__init__(detail or code)
        self.code = code
