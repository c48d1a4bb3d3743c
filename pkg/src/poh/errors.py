"""Exception hierarchy shared by all poh modules."""


class PohError(Exception):
    """Base class for every error raised by this package."""


# identity core
class DuplicateSubscriber(PohError):
    pass


class UnknownSubscriber(PohError):
    pass


class DeviceMismatch(PohError):
    pass


class SubscriberInactive(PohError):
    pass


class SubscriberSuspended(SubscriberInactive):
    pass


class SubscriberRevoked(SubscriberInactive):
    pass


class InvalidStatusTransition(PohError):
    pass


class SnapshotError(PohError):
    pass


# tokens
class SessionExpired(PohError):
    pass


class LifetimeTooLong(PohError):
    pass


class NotBlindCapable(PohError):
    pass


class DecodeError(PohError):
    """Bytes do not form a structurally valid encoding."""


class IndexOutOfRange(PohError, IndexError):
    pass


# packet plane
class HeaderOccupied(PohError):
    pass


class AlreadyEncapsulated(PohError):
    pass


class NotEncapsulated(PohError):
    pass


# flow analysis
class ModelNotReady(PohError):
    pass


class EmptyCorpus(PohError):
    pass


class InvalidParams(PohError, ValueError):
    pass


class ModelFormatError(PohError):
    pass


# session attestation
class StaleAttestation(PohError):
    pass


class BadResumptionCount(PohError):
    pass


# harness
class ConfigInvalid(PohError):
    def __init__(self, message: str, field: str | None = None, line: int | None = None):
        self.field = field
        self.line = line
        where = []
        if line is not None:
            where.append(f"line {line}")
        if field:
            where.append(f"field '{field}'")
        prefix = f"{', '.join(where)}: " if where else ""
        super().__init__(prefix + message)


class PortInUse(PohError):
    pass
