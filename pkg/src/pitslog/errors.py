"""Exception hierarchy shared by the library, the notary and its clients.

Every error that can cross the wire is a subclass of :class:`PitsError`; the
JSON codec transports the class name and the client re-raises the same type.
"""


class PitsError(Exception):
    """Base class for all pitslog errors."""


class InvalidParams(PitsError, ValueError):
    pass


# tree
class TreeFinalized(PitsError):
    pass


class DuplicateDigest(PitsError):
    pass


class DepthOutOfRange(PitsError, ValueError):
    pass


class UnknownLog(PitsError, KeyError):
    def __str__(self):
        return Exception.__str__(self)


class MalformedReceipt(PitsError, ValueError):
    pass


class BranchNotFinal(PitsError):
    pass


class EpochMismatch(PitsError):
    pass


class UpdateInconsistent(PitsError):
    pass


class WrongLength(PitsError, ValueError):
    pass


# parity
class AlreadyFinalized(PitsError):
    pass


# forward chain
class MissingBoundary(PitsError):
    pass


# notary
class UnknownDevice(PitsError, KeyError):
    def __str__(self):
        return Exception.__str__(self)


class UnknownEpoch(PitsError, KeyError):
    def __str__(self):
        return Exception.__str__(self)


class EpochFinalized(PitsError):
    pass


class MalformedBatch(PitsError, ValueError):
    pass


class TreePruned(PitsError):
    pass


class InvalidTransition(PitsError, ValueError):
    pass


class RecordCorrupt(PitsError, ValueError):
    pass


# agents / auditor
class TransportError(PitsError, ConnectionError):
    pass


class ClockRegression(PitsError):
    pass


class VerificationFailed(PitsError):
    pass


class NoPublishedRoot(PitsError):
    pass


class SnapshotUnreadable(PitsError):
    pass


class InvalidReceipt(PitsError):
    pass


def error_types():
    """Map of class name to class for every concrete error (wire decoding)."""
    out = {}
    todo = [PitsError]
    while todo:
        cls = todo.pop()
        out[cls.__name__] = cls
        todo.extend(cls.__subclasses__())
    return out
