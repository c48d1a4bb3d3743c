import random

import pytest

from poh.audit import AuditLog
from poh.clock import VirtualClock
from poh.identity import SubscriberRegistry
from poh.keys import IssuerKeyPair, KeyRing

T0 = 1_700_000_000.0


@pytest.fixture
def clock():
    return VirtualClock(T0)


@pytest.fixture
def audit():
    return AuditLog()


@pytest.fixture
def registry(audit):
    return SubscriberRegistry(audit, random.Random(1).randbytes)


@pytest.fixture(scope="session")
def issuer():
    return IssuerKeyPair.generate("telco", seed=b"test-issuer")


@pytest.fixture(scope="session")
def blind_issuer():
    # one 2048-bit key for the whole run; generation dominates otherwise
    return IssuerKeyPair.generate_blind("telco", 2048)


@pytest.fixture
def keys(issuer, blind_issuer):
    return KeyRing([issuer, blind_issuer])


@pytest.fixture
def session(registry):
    registry.provision_subscriber("imsi-001", "imei-A", rng_seed=7, now=T0)
    return registry.authenticate_attach("imsi-001", "imei-A", "net-A", T0)


# acceptance reporting ---------------------------------------------------------

_ACCEPTANCE: dict[int, tuple[str, bool, str]] = {}


class Criterion:
    """Context manager that records one acceptance line, pass or fail."""

    def __init__(self, number: int, title: str) -> None:
        self.number, self.title, self.detail = number, title, ""

    def __enter__(self) -> "Criterion":
        return self

    def __exit__(self, exc_type, exc, tb) -> bool:
        detail = self.detail
        if exc_type is not None and exc_type is not AssertionError:
            detail = f"{detail} [{exc_type.__name__}: {exc}]".strip()
        _ACCEPTANCE[self.number] = (self.title, exc_type is None, detail)
        return False


@pytest.fixture
def criterion():
    return Criterion


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_ACCEPTANCE):
        title, ok, detail = _ACCEPTANCE[number]
        terminalreporter.write_line(f"{'PASS' if ok else 'FAIL'}  [{number:2d}] {title}: {detail}")
