"""Single-use three-digit session keys and their delivery channels.

Each login session gets one key of three digits, every digit drawn
uniformly from 1..9 (zero never appears because the grid has no cell
labeled 0).  A key is consumed exactly once, at finalization, whether the
attempt succeeds or not; after that, or after its time-to-live elapses,
it can never authenticate again.

Delivery is side-channel only.  Transports hand the digits to the user
out of band and never touch key state: a failed delivery leaves the key
live so the caller can retry or abort the whole session.
"""

from __future__ import annotations

import json
import os
import sys
import threading
import time
import urllib.error
import urllib.request
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from random import SystemRandom
from typing import Callable, Optional, Protocol

DEFAULT_TTL_SECONDS = 120.0
KEY_DIGITS = 3

_system_random = SystemRandom()


class OtpError(Exception):
    """Base class for key handling failures."""


class DuplicateOtpError(OtpError):
    """A live key already exists for this session."""


class OtpNotFoundError(OtpError):
    """No key was ever issued for this session."""


class OtpAlreadyUsedError(OtpError):
    """The key was consumed by an earlier finalization."""


class OtpExpiredError(OtpError):
    """The key outlived its time-to-live before being consumed."""


class DeliveryError(OtpError):
    """The transport could not hand the digits to the user."""


class KeyState(Enum):
    LIVE = "live"
    CONSUMED = "consumed"
    EXPIRED = "expired"


@dataclass
class OtpKey:
    """One issued key, bound to a single login session."""

    session_id: str
    digits: tuple[int, int, int]
    issued_at: float
    ttl: float = DEFAULT_TTL_SECONDS
    state: KeyState = KeyState.LIVE

    def __post_init__(self) -> None:
        if len(self.digits) != KEY_DIGITS:
            raise ValueError(f"key needs {KEY_DIGITS} digits, got {self.digits!r}")
        for d in self.digits:
            if not isinstance(d, int) or isinstance(d, bool) or not 1 <= d <= 9:
                raise ValueError(f"key digits must be in 1..9, got {self.digits!r}")
        if self.ttl <= 0:
            raise ValueError(f"ttl must be positive, got {self.ttl!r}")

    @property
    def as_string(self) -> str:
        return "".join(str(d) for d in self.digits)


@dataclass(frozen=True)
class DeliveryReceipt:
    """Proof that a transport accepted the digits for a session."""

    session_id: str
    channel: str
    detail: str = ""


class Transport(Protocol):
    """Anything that can carry key digits to the user out of band."""

    name: str

    def send(self, session_id: str, digits: str) -> str:
        """Deliver ``digits`` for ``session_id``; return a detail string.

        Raise :class:`DeliveryError` on failure.
        """
        ...


class ConsoleEchoTransport:
    """Write the key to stderr, for local development."""

    name = "console"

    def __init__(self, stream=None):
        self._stream = stream

    def send(self, session_id: str, digits: str) -> str:
        stream = self._stream if self._stream is not None else sys.stderr
        try:
            stream.write(f"OTP {session_id} {digits}\n")
            stream.flush()
        except OSError as exc:
            raise DeliveryError(f"console write failed: {exc}") from exc
        return "stderr"


class FileDropTransport:
    """Write the key into ``otp-<session_id>.txt`` under a directory.

    Stands in for an SMS or mail gateway in tests and simulations: the
    "phone" is a file the test can read.
    """

    name = "file"

    def __init__(self, directory: str | Path):
        self.directory = Path(directory)

    def send(self, session_id: str, digits: str) -> str:
        path = self.directory / f"otp-{session_id}.txt"
        try:
            self.directory.mkdir(parents=True, exist_ok=True)
            path.write_text(digits + "\n", encoding="ascii")
        except OSError as exc:
            raise DeliveryError(f"file drop failed: {exc}") from exc
        return str(path)


class WebhookPostTransport:
    """POST the key as JSON to an external gateway URL."""

    name = "webhook"

    def __init__(self, url: str, timeout: float = 5.0):
        self.url = url
        self.timeout = timeout

    def send(self, session_id: str, digits: str) -> str:
        body = json.dumps({"session_id": session_id, "otp": digits}).encode("utf-8")
        request = urllib.request.Request(
            self.url,
            data=body,
            headers={"Content-Type": "application/json"},
            method="POST",
        )
        try:
            with urllib.request.urlopen(request, timeout=self.timeout) as response:
                status = getattr(response, "status", 200)
        except (urllib.error.URLError, OSError, TimeoutError) as exc:
            raise DeliveryError(f"webhook POST failed: {exc}") from exc
        if not 200 <= status < 300:
            raise DeliveryError(f"webhook returned HTTP {status}")
        return f"HTTP {status}"


def deliver(key: OtpKey, transport: Transport) -> DeliveryReceipt:
    """Send a live key through ``transport`` without touching its state."""
    if key.state is not KeyState.LIVE:
        raise OtpError(f"cannot deliver a {key.state.value} key")
    detail = transport.send(key.session_id, key.as_string)
    return DeliveryReceipt(session_id=key.session_id, channel=transport.name, detail=detail)


def transport_from_env(environ: Optional[dict] = None) -> Transport:
    """Build the transport selected by ``OTP_TRANSPORT`` (default console)."""
    env = os.environ if environ is None else environ
    kind = env.get("OTP_TRANSPORT", "console").strip().lower()
    if kind == "console":
        return ConsoleEchoTransport()
    if kind == "file":
        return FileDropTransport(env.get("OTP_FILE_DIR", "."))
    if kind == "webhook":
        url = env.get("OTP_WEBHOOK_URL")
        if not url:
            raise ValueError("OTP_TRANSPORT=webhook requires OTP_WEBHOOK_URL")
        return WebhookPostTransport(url)
    raise ValueError(f"unknown OTP_TRANSPORT: {kind!r}")


def ttl_from_env(environ: Optional[dict] = None) -> float:
    env = os.environ if environ is None else environ
    raw = env.get("OTP_TTL_SECONDS")
    if raw is None:
        return DEFAULT_TTL_SECONDS
    ttl = float(raw)
    if ttl <= 0:
        raise ValueError(f"OTP_TTL_SECONDS must be positive, got {raw!r}")
    return ttl


@dataclass
class OtpStore:
    """Thread-safe registry of issued keys, one per session.

    ``clock`` is injectable so expiry can be tested without sleeping.
    """

    ttl: float = DEFAULT_TTL_SECONDS
    clock: Callable[[], float] = time.time
    _keys: dict[str, OtpKey] = field(default_factory=dict)
    _lock: threading.Lock = field(default_factory=threading.Lock)

    def generate(self, session_id: str, rng=None) -> OtpKey:
        """Issue a fresh key for ``session_id``.

        A stale live key (past its ttl) is retired and replaced; a key
        that is still live raises :class:`DuplicateOtpError` so one
        session can never hold two usable keys.
        """
        rng = rng if rng is not None else _system_random
        digits = (rng.randint(1, 9), rng.randint(1, 9), rng.randint(1, 9))
        now = self.clock()
        with self._lock:
            existing = self._keys.get(session_id)
            if existing is not None and existing.state is KeyState.LIVE:
                if now - existing.issued_at > existing.ttl:
                    existing.state = KeyState.EXPIRED
                else:
                    raise DuplicateOtpError(f"session {session_id} already has a live key")
            key = OtpKey(session_id=session_id, digits=digits, issued_at=now, ttl=self.ttl)
            self._keys[session_id] = key
        return key

    def peek(self, session_id: str) -> OtpKey:
        """Return the current key without changing its state."""
        with self._lock:
            key = self._keys.get(session_id)
        if key is None:
            raise OtpNotFoundError(f"no key for session {session_id}")
        return key

    def consume(self, session_id: str, now: Optional[float] = None) -> tuple[int, int, int]:
        """Burn the session's key and return its digits.

        Exactly one caller can ever succeed for a given key; the check
        and the state flip happen under one lock.
        """
        if now is None:
            now = self.clock()
        with self._lock:
            key = self._keys.get(session_id)
            if key is None:
                raise OtpNotFoundError(f"no key for session {session_id}")
            if key.state is KeyState.CONSUMED:
                raise OtpAlreadyUsedError(f"key for session {session_id} was already used")
            if key.state is KeyState.EXPIRED:
                raise OtpExpiredError(f"key for session {session_id} has expired")
            if now - key.issued_at > key.ttl:
                key.state = KeyState.EXPIRED
                raise OtpExpiredError(f"key for session {session_id} has expired")
            key.state = KeyState.CONSUMED
            return key.digits

    def sweep_expired(self, now: Optional[float] = None) -> int:
        """Mark every overdue live key expired; return how many flipped."""
        if now is None:
            now = self.clock()
        flipped = 0
        with self._lock:
            for key in self._keys.values():
                if key.state is KeyState.LIVE and now - key.issued_at > key.ttl:
                    key.state = KeyState.EXPIRED
                    flipped += 1
        return flipped

    def drop(self, session_id: str) -> None:
        """Forget a session's key entirely (housekeeping for bulk runs)."""
        with self._lock:
            self._keys.pop(session_id, None)
