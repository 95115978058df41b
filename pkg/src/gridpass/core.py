"""User registry and the three-level challenge login state machine.

Registration stores a username plus three image passwords, one per
level, each an encrypted image and a labeling order.  Login walks three
challenges of four images (one real, three decoys), collecting one
click per level without ever evaluating it, then verifies everything at
finalization in one shot: the clicked image identities and the clicked
cells against the one-time key digits.  Intermediate responses carry no
correctness signal, so an observer in front of the screen learns
nothing before the single opaque verdict.
"""

from __future__ import annotations

import re
import threading
import time
import uuid
from dataclasses import dataclass, field
from enum import Enum
from random import SystemRandom
from typing import Callable, Optional

from gridpass.grid import Cell, LabelOrder, expected_cell, map_click
from gridpass.otp import DeliveryError, OtpError, OtpStore, Transport, deliver
from gridpass.vault import DECOY_OWNER, ImageVault, PoolExhaustedError

USERNAME_RE = re.compile(r"^[A-Za-z0-9_.-]{1,64}$")
LEVELS = 3
CHALLENGE_SIZE = 4
DECOYS_PER_LEVEL = CHALLENGE_SIZE - 1
DEFAULT_SESSION_TTL = 600.0
DEFAULT_LOCKOUT_THRESHOLD = 3
DEFAULT_LOCKOUT_WINDOW = 900.0
DEFAULT_LOCKOUT_DURATION = 900.0

_system_random = SystemRandom()


class AuthError(Exception):
    """Base class for authentication failures."""


class ValidationError(AuthError):
    """A request field is malformed."""


class ConflictError(AuthError):
    """The request collides with existing state."""


class UserNotFoundError(AuthError):
    """No user matches the given id (registration endpoints only)."""


class AuthUnavailableError(AuthError):
    """Login cannot start; deliberately unspecific.

    Raised alike for unknown usernames, incomplete registrations and
    transient internal refusals so the login endpoint cannot be used to
    probe which accounts exist.
    """


class AccountLockedError(AuthError):
    """Too many failed finalizations; try again later."""

    def __init__(self, retry_after: float):
        super().__init__(f"account locked, retry in {retry_after:.0f}s")
        self.retry_after = retry_after


class SessionNotFoundError(AuthError):
    """No login session matches the given id."""


class SessionStateError(AuthError):
    """The session is not in a state that allows this operation."""


class SessionExpiredError(SessionStateError):
    """The session outlived its time-to-live."""


class ProtocolError(AuthError):
    """The client broke the challenge protocol; the session is failed."""


class SessionState(Enum):
    AWAITING_CLICKS = "awaiting-clicks"
    SUCCEEDED = "succeeded"
    FAILED = "failed"
    EXPIRED = "expired"


@dataclass(frozen=True)
class ImagePassword:
    """One level of a user's credential."""

    level: int
    image_id: str
    order: LabelOrder


@dataclass
class UserRecord:
    user_id: str
    username: str
    mobile: str
    details: dict
    created_at: float
    passwords: dict[int, ImagePassword] = field(default_factory=dict)
    registration_seconds: Optional[float] = None
    login_seconds: list[float] = field(default_factory=list)
    failure_times: list[float] = field(default_factory=list)
    locked_until: Optional[float] = None

    @property
    def finalized(self) -> bool:
        return len(self.passwords) == LEVELS


@dataclass(frozen=True)
class ClickEvent:
    """A click reported by the client at one challenge level."""

    image_id: str
    x: float
    y: float
    rendered_w: int
    rendered_h: int


@dataclass(frozen=True)
class ClickRecord:
    image_id: str
    cell: Cell


@dataclass
class LoginSession:
    session_id: str
    username: str
    started_at: float
    challenges: list[list[str]]
    image_owners: dict[str, str]
    state: SessionState = SessionState.AWAITING_CLICKS
    clicks: list[ClickRecord] = field(default_factory=list)

    @property
    def current_level(self) -> int:
        return min(len(self.clicks) + 1, LEVELS)

    @property
    def finalize_ready(self) -> bool:
        return self.state is SessionState.AWAITING_CLICKS and len(self.clicks) == LEVELS


@dataclass(frozen=True)
class LoginChallenge:
    """What the client sees after starting a login or landing a click."""

    session_id: str
    level: int
    image_ids: list[str]


@dataclass(frozen=True)
class ClickOutcome:
    """Response to one accepted click: next challenge or finalize marker.

    The fields never depend on whether the click was correct; the split
    is purely positional (levels 1 and 2 yield the next challenge, the
    third click yields ``finalize_ready``).
    """

    finalize_ready: bool
    level: Optional[int] = None
    image_ids: Optional[list[str]] = None


@dataclass(frozen=True)
class TimingRecord:
    """One row of the timing export: a user and their first logins."""

    serial: int
    registration_seconds: float
    login_seconds: tuple[float, ...]


class AuthService:
    """Registration, challenge login and lockout over a vault and key store.

    ``rng``, ``clock`` and ``session_ids`` are injectable so tests and
    simulations can be made fully deterministic; defaults are a CSPRNG,
    the wall clock and random hex ids.
    """

    def __init__(
        self,
        vault: ImageVault,
        otp_store: OtpStore,
        transport: Transport,
        *,
        rng=None,
        clock: Callable[[], float] = time.time,
        session_ttl: float = DEFAULT_SESSION_TTL,
        lockout_threshold: int = DEFAULT_LOCKOUT_THRESHOLD,
        lockout_window: float = DEFAULT_LOCKOUT_WINDOW,
        lockout_duration: float = DEFAULT_LOCKOUT_DURATION,
        lockout_enabled: bool = True,
        session_ids: Optional[Callable[[], str]] = None,
        cache_decoy_pool: bool = False,
    ):
        self.vault = vault
        self.otp_store = otp_store
        self.transport = transport
        self.clock = clock
        self.session_ttl = session_ttl
        self.lockout_threshold = lockout_threshold
        self.lockout_window = lockout_window
        self.lockout_duration = lockout_duration
        self.lockout_enabled = lockout_enabled
        self._rng = rng if rng is not None else _system_random
        self._session_ids = session_ids if session_ids is not None else lambda: uuid.uuid4().hex
        self._users: dict[str, UserRecord] = {}
        self._users_by_id: dict[str, UserRecord] = {}
        self._sessions: dict[str, LoginSession] = {}
        self._registration_order: list[UserRecord] = []
        self._registration_started: dict[str, float] = {}
        self._lock = threading.RLock()
        # Bulk simulations opt into snapshotting the decoy pool once
        # instead of re-reading the vault on every login.
        self._cache_decoy_pool = cache_decoy_pool
        self._decoy_pool: Optional[list[str]] = None

    # ------------------------------------------------------------------
    # Registration

    def register_user(self, username: str, mobile: str, details: Optional[dict] = None) -> str:
        if not isinstance(username, str) or not USERNAME_RE.fullmatch(username):
            raise ValidationError(
                "username must be 1-64 characters of letters, digits, '_', '.', '-'"
            )
        if not isinstance(mobile, str) or not mobile.strip():
            raise ValidationError("mobile addressing token must be a non-empty string")
        now = self.clock()
        with self._lock:
            if username in self._users:
                raise ConflictError(f"username already registered: {username}")
            user = UserRecord(
                user_id=uuid.uuid4().hex,
                username=username,
                mobile=mobile,
                details=dict(details or {}),
                created_at=now,
            )
            self._users[username] = user
            self._users_by_id[user.user_id] = user
            self._registration_started[user.user_id] = now
        return user.user_id

    def attach_image_password(
        self,
        user_id: str,
        level: int,
        image: bytes,
        order: LabelOrder,
        content_type: str = "image/png",
    ) -> str:
        if not isinstance(level, int) or isinstance(level, bool) or not 1 <= level <= LEVELS:
            raise ValidationError(f"level must be in 1..{LEVELS}, got {level!r}")
        if not isinstance(order, LabelOrder):
            raise ValidationError(f"unknown labeling order: {order!r}")
        with self._lock:
            user = self._users_by_id.get(user_id)
            if user is None:
                raise UserNotFoundError(f"no user {user_id}")
            if level in user.passwords:
                raise ConflictError(f"level {level} already has an image password")
            try:
                image_id = self.vault.store_image(user.username, image, content_type)
            except ValueError as exc:
                raise ValidationError(str(exc)) from exc
            user.passwords[level] = ImagePassword(level=level, image_id=image_id, order=order)
            if user.finalized:
                now = self.clock()
                started = self._registration_started.pop(user.user_id, now)
                user.registration_seconds = max(now - started, 0.0)
                self._registration_order.append(user)
        return image_id

    def registration_complete(self, user_id: str) -> bool:
        with self._lock:
            user = self._users_by_id.get(user_id)
            if user is None:
                raise UserNotFoundError(f"no user {user_id}")
            return user.finalized

    # ------------------------------------------------------------------
    # Login

    def check_lockout(self, username: str, now: Optional[float] = None) -> Optional[float]:
        """Return remaining lock seconds for ``username``, or None if allowed."""
        if now is None:
            now = self.clock()
        with self._lock:
            user = self._users.get(username)
            if user is None or user.locked_until is None:
                return None
            remaining = user.locked_until - now
        return remaining if remaining > 0 else None

    def start_login(
        self,
        username: str,
        now: Optional[float] = None,
        rng=None,
    ) -> LoginChallenge:
        """Open a session: issue and deliver a key, build all 3 challenges.

        The challenges are fixed up front so re-reads of a level are
        idempotent.  Delivery happens outside the registry lock; if the
        transport fails, the session and its key are discarded and the
        caller sees the same unspecific refusal as for an unknown user.
        """
        if now is None:
            now = self.clock()
        rng = rng if rng is not None else self._rng
        with self._lock:
            self._expire_stale_sessions(now)
            self.otp_store.sweep_expired(now)
            user = self._users.get(username)
            if user is None or not user.finalized:
                raise AuthUnavailableError("authentication unavailable")
            if self.lockout_enabled:
                remaining = None
                if user.locked_until is not None:
                    delta = user.locked_until - now
                    remaining = delta if delta > 0 else None
                if remaining is not None:
                    raise AccountLockedError(retry_after=remaining)
            session_id = self._session_ids()
            key = self.otp_store.generate(session_id, rng)
            try:
                challenges, owners = self._build_challenges(user, rng)
            except PoolExhaustedError:
                self.otp_store.drop(session_id)
                raise AuthUnavailableError("authentication unavailable") from None
            session = LoginSession(
                session_id=session_id,
                username=username,
                started_at=now,
                challenges=challenges,
                image_owners=owners,
            )
            self._sessions[session_id] = session
        try:
            deliver(key, self.transport)
        except DeliveryError:
            with self._lock:
                self._sessions.pop(session_id, None)
                self.otp_store.drop(session_id)
            raise AuthUnavailableError("authentication unavailable") from None
        return LoginChallenge(session_id=session_id, level=1, image_ids=list(challenges[0]))

    def _build_challenges(self, user: UserRecord, rng) -> tuple[list[list[str]], dict[str, str]]:
        real_ids = [user.passwords[level].image_id for level in range(1, LEVELS + 1)]
        exclude = set(real_ids)
        if self._cache_decoy_pool:
            if self._decoy_pool is None:
                self._decoy_pool = self.vault.decoy_ids()
            pool = self._decoy_pool
        else:
            pool = self.vault.decoy_ids()
        challenges: list[list[str]] = []
        owners: dict[str, str] = {}
        for level in range(1, LEVELS + 1):
            decoys = self.vault.pick_decoys(exclude, DECOYS_PER_LEVEL, rng, pool=pool)
            # A decoy shown once must not reappear at a later level, or an
            # observer could spot the image that repeats across levels.
            exclude.update(decoys)
            images = [real_ids[level - 1], *decoys]
            rng.shuffle(images)
            challenges.append(images)
            for image_id in decoys:
                owners[image_id] = DECOY_OWNER
            owners[real_ids[level - 1]] = user.username
        return challenges, owners

    def _get_session(self, session_id: str, now: float) -> LoginSession:
        session = self._sessions.get(session_id)
        if session is None:
            raise SessionNotFoundError(f"no session {session_id}")
        if (
            session.state is SessionState.AWAITING_CLICKS
            and now - session.started_at > self.session_ttl
        ):
            session.state = SessionState.EXPIRED
        if session.state is SessionState.EXPIRED:
            raise SessionExpiredError(f"session {session_id} expired")
        return session

    def _expire_stale_sessions(self, now: float) -> None:
        for session in self._sessions.values():
            if (
                session.state is SessionState.AWAITING_CLICKS
                and now - session.started_at > self.session_ttl
            ):
                session.state = SessionState.EXPIRED

    def submit_click(
        self,
        session_id: str,
        click: ClickEvent,
        now: Optional[float] = None,
    ) -> ClickOutcome:
        """Record one click and advance; never evaluates correctness.

        The returned object is shaped purely by position in the flow, so
        a wrong click is indistinguishable from a right one until
        finalization.
        """
        if now is None:
            now = self.clock()
        with self._lock:
            session = self._get_session(session_id, now)
            if session.state is not SessionState.AWAITING_CLICKS:
                raise SessionStateError(f"session is {session.state.value}")
            if len(session.clicks) >= LEVELS:
                raise SessionStateError("all clicks recorded; finalize the session")
            current = session.challenges[len(session.clicks)]
            if click.image_id not in current:
                session.state = SessionState.FAILED
                raise ProtocolError("clicked image is not part of the current challenge")
            try:
                cell = map_click(click.x, click.y, click.rendered_w, click.rendered_h)
            except ValueError as exc:
                raise ValidationError(str(exc)) from exc
            session.clicks.append(ClickRecord(image_id=click.image_id, cell=cell))
            if len(session.clicks) < LEVELS:
                next_level = len(session.clicks) + 1
                return ClickOutcome(
                    finalize_ready=False,
                    level=next_level,
                    image_ids=list(session.challenges[next_level - 1]),
                )
            return ClickOutcome(finalize_ready=True)

    def finalize(self, session_id: str, now: Optional[float] = None) -> bool:
        """Spend the session's key and verify everything at once.

        Success needs all six sub-conditions: at each level the clicked
        image is the user's registered image for that level and the
        clicked cell is the one labeled with that level's key digit
        under the user's chosen order.  Any shortfall, including a dead
        key, yields the same bare failure.
        """
        if now is None:
            now = self.clock()
        with self._lock:
            session = self._get_session(session_id, now)
            if session.state is not SessionState.AWAITING_CLICKS:
                raise SessionStateError(f"session is {session.state.value}")
            if len(session.clicks) < LEVELS:
                raise SessionStateError(
                    f"only {len(session.clicks)} of {LEVELS} clicks recorded"
                )
            try:
                digits = self.otp_store.consume(session_id, now)
            except OtpError:
                digits = None
            user = self._users[session.username]
            success = digits is not None and self._verify(user, session, digits)
            if success:
                session.state = SessionState.SUCCEEDED
                user.login_seconds.append(max(now - session.started_at, 0.0))
                if self.lockout_enabled:
                    user.failure_times.clear()
                    user.locked_until = None
            else:
                session.state = SessionState.FAILED
                if self.lockout_enabled:
                    self._record_failure(user, now)
            return success

    @staticmethod
    def _verify(user: UserRecord, session: LoginSession, digits: tuple[int, int, int]) -> bool:
        ok = True
        for level in range(1, LEVELS + 1):
            password = user.passwords[level]
            click = session.clicks[level - 1]
            # No early exit: evaluate every condition regardless.
            ok &= click.image_id == password.image_id
            ok &= click.cell == expected_cell(password.order, digits[level - 1])
        return bool(ok)

    def _record_failure(self, user: UserRecord, now: float) -> None:
        user.failure_times.append(now)
        recent = [t for t in user.failure_times if now - t <= self.lockout_window]
        user.failure_times = recent
        if len(recent) >= self.lockout_threshold:
            user.locked_until = now + self.lockout_duration

    # ------------------------------------------------------------------
    # Session reads

    def session_view(self, session_id: str, now: Optional[float] = None) -> dict:
        """Idempotent snapshot of a session for refresh-safe clients."""
        if now is None:
            now = self.clock()
        with self._lock:
            session = self._get_session(session_id, now)
            view: dict = {
                "session_id": session.session_id,
                "state": session.state.value,
                "finalize_ready": session.finalize_ready,
            }
            if session.state is SessionState.AWAITING_CLICKS and not session.finalize_ready:
                view["level"] = session.current_level
                view["images"] = list(session.challenges[session.current_level - 1])
            return view

    def visible_image_ids(self, session_id: str, now: Optional[float] = None) -> set[str]:
        """Ids the session may fetch: current and past challenge levels."""
        if now is None:
            now = self.clock()
        with self._lock:
            session = self._sessions.get(session_id)
            if session is None:
                raise SessionNotFoundError(f"no session {session_id}")
            if session.state is SessionState.AWAITING_CLICKS:
                if now - session.started_at > self.session_ttl:
                    session.state = SessionState.EXPIRED
                    raise SessionExpiredError(f"session {session_id} expired")
                upto = session.current_level
            else:
                upto = LEVELS
            visible: set[str] = set()
            for level_images in session.challenges[:upto]:
                visible.update(level_images)
            return visible

    def challenge_image(
        self, session_id: str, image_id: str, now: Optional[float] = None
    ) -> tuple[bytes, str]:
        """Serve one challenge image's bytes, scoped to what was shown."""
        if image_id not in self.visible_image_ids(session_id, now):
            raise SessionNotFoundError(f"image {image_id} not presented to this session")
        with self._lock:
            owner = self._sessions[session_id].image_owners[image_id]
        return self.vault.load_image(image_id, owner)

    def discard_session(self, session_id: str) -> None:
        """Drop a session and its key (housekeeping for bulk simulation)."""
        with self._lock:
            self._sessions.pop(session_id, None)
        self.otp_store.drop(session_id)

    # ------------------------------------------------------------------
    # Metrics

    def timing_records(self) -> list[TimingRecord]:
        """One record per completed registration, in completion order."""
        with self._lock:
            records = []
            for serial, user in enumerate(self._registration_order, start=1):
                records.append(
                    TimingRecord(
                        serial=serial,
                        registration_seconds=user.registration_seconds or 0.0,
                        login_seconds=tuple(user.login_seconds),
                    )
                )
            return records
