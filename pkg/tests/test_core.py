"""Tests for registration, the login state machine and lockout."""

import random

import pytest

from _harness import (
    CaptureTransport,
    FakeClock,
    build_service,
    click_xy,
    counter_ids,
    register_user,
)
from gridpass.core import (
    AccountLockedError,
    AuthUnavailableError,
    ClickEvent,
    ConflictError,
    ProtocolError,
    SessionExpiredError,
    SessionNotFoundError,
    SessionState,
    SessionStateError,
    UserNotFoundError,
    ValidationError,
)
from gridpass.devseed import solid_png
from gridpass.grid import Cell, LabelOrder, expected_cell
from gridpass.otp import DeliveryError, OtpAlreadyUsedError


def make_click(image_id, cell):
    x, y = click_xy(cell)
    return ClickEvent(image_id=image_id, x=x, y=y, rendered_w=300, rendered_h=300)


def run_clicks(service, challenge, image_ids, digits, orders, wrong=None):
    """Walk a session clicking the real image at the expected cell per level.

    ``wrong`` may name one mutation: ("image", level) clicks a decoy, or
    ("cell", level) clicks a wrong cell on the real image.
    """
    current = challenge.image_ids
    session_id = challenge.session_id
    for level in range(1, 4):
        target_image = image_ids[level - 1]
        cell = expected_cell(orders[level - 1], digits[level - 1])
        if wrong == ("image", level):
            target_image = next(i for i in current if i != image_ids[level - 1])
        if wrong == ("cell", level):
            cell = Cell((cell.row + 1) % 3, cell.col)
        outcome = service.submit_click(session_id, make_click(target_image, cell))
        if level < 3:
            assert outcome.level == level + 1
            current = outcome.image_ids
        else:
            assert outcome.finalize_ready
    return session_id


ORDERS = (LabelOrder.LEFT_TO_RIGHT, LabelOrder.RIGHT_TO_LEFT, LabelOrder.TOP_TO_BOTTOM)


def login_once(service, transport, image_ids, orders=ORDERS, wrong=None, username="alice"):
    challenge = service.start_login(username)
    digits = tuple(int(d) for d in transport.sent[challenge.session_id])
    session_id = run_clicks(service, challenge, image_ids, digits, orders, wrong=wrong)
    return service.finalize(session_id)


# ----------------------------------------------------------------------
# Registration


def test_register_returns_distinct_ids():
    service, _, _ = build_service(seed=1)
    a = service.register_user("alice", "+10000000001")
    b = service.register_user("bob", "+10000000002")
    assert a != b


def test_register_duplicate_username_conflicts():
    service, _, _ = build_service(seed=1)
    service.register_user("alice", "+10000000001")
    with pytest.raises(ConflictError):
        service.register_user("alice", "+19999999999")


@pytest.mark.parametrize(
    "username",
    ["", "a b", "name!", "x" * 65, "éclair"],
)
def test_register_rejects_bad_usernames(username):
    service, _, _ = build_service(seed=1)
    with pytest.raises(ValidationError):
        service.register_user(username, "+10000000001")


def test_register_rejects_empty_mobile():
    service, _, _ = build_service(seed=1)
    with pytest.raises(ValidationError):
        service.register_user("alice", "   ")


def test_attach_three_levels_finalizes():
    service, _, _ = build_service(seed=1)
    user_id = service.register_user("alice", "+10000000001")
    assert not service.registration_complete(user_id)
    for level in (1, 2, 3):
        service.attach_image_password(
            user_id, level, solid_png(8, 8, (level, 0, 0)), LabelOrder.LEFT_TO_RIGHT
        )
    assert service.registration_complete(user_id)


def test_attach_same_level_twice_conflicts():
    service, _, _ = build_service(seed=1)
    user_id = service.register_user("alice", "+10000000001")
    service.attach_image_password(user_id, 2, solid_png(), LabelOrder.LEFT_TO_RIGHT)
    with pytest.raises(ConflictError):
        service.attach_image_password(user_id, 2, solid_png(), LabelOrder.RIGHT_TO_LEFT)


@pytest.mark.parametrize("level", [0, 4, -1])
def test_attach_rejects_bad_levels(level):
    service, _, _ = build_service(seed=1)
    user_id = service.register_user("alice", "+10000000001")
    with pytest.raises(ValidationError):
        service.attach_image_password(user_id, level, solid_png(), LabelOrder.LEFT_TO_RIGHT)


def test_attach_unknown_user():
    service, _, _ = build_service(seed=1)
    with pytest.raises(UserNotFoundError):
        service.attach_image_password("ghost", 1, solid_png(), LabelOrder.LEFT_TO_RIGHT)


def test_attach_rejects_bad_payloads():
    service, _, _ = build_service(seed=1)
    user_id = service.register_user("alice", "+10000000001")
    with pytest.raises(ValidationError):
        service.attach_image_password(user_id, 1, b"", LabelOrder.LEFT_TO_RIGHT)
    with pytest.raises(ValidationError):
        service.attach_image_password(user_id, 1, solid_png(), "left-to-right")
    with pytest.raises(ValidationError):
        service.attach_image_password(
            user_id, 1, solid_png(), LabelOrder.LEFT_TO_RIGHT, content_type="image/gif"
        )


# ----------------------------------------------------------------------
# Login session construction


def test_start_login_unknown_user_is_unspecific():
    service, _, _ = build_service(seed=1)
    with pytest.raises(AuthUnavailableError):
        service.start_login("ghost")


def test_start_login_unfinalized_user_is_unspecific():
    service, _, _ = build_service(seed=1)
    user_id = service.register_user("alice", "+10000000001")
    service.attach_image_password(user_id, 1, solid_png(), LabelOrder.LEFT_TO_RIGHT)
    with pytest.raises(AuthUnavailableError):
        service.start_login("alice")


def test_challenge_contains_real_image_exactly_once():
    service, _, _ = build_service(seed=7)
    _, image_ids = register_user(service)
    challenge = service.start_login("alice")
    assert len(challenge.image_ids) == 4
    assert challenge.image_ids.count(image_ids[0]) == 1
    assert challenge.level == 1


def test_decoys_never_include_any_user_image():
    service, _, _ = build_service(seed=7)
    _, image_ids = register_user(service)
    for trial in range(50):
        challenge = service.start_login("alice")
        session = service._sessions[challenge.session_id]
        for level, images in enumerate(session.challenges, start=1):
            real = image_ids[level - 1]
            assert images.count(real) == 1
            foreign = [i for i in images if i != real]
            assert len(foreign) == 3
            # No decoy slot is ever filled by one of the user's images.
            assert not set(foreign) & set(image_ids)


def test_decoys_distinct_across_levels():
    service, _, _ = build_service(seed=7)
    _, image_ids = register_user(service)
    challenge = service.start_login("alice")
    session = service._sessions[challenge.session_id]
    decoys = []
    for level, images in enumerate(session.challenges, start=1):
        decoys.extend(i for i in images if i != image_ids[level - 1])
    assert len(decoys) == len(set(decoys)) == 9


def test_two_sessions_differ_in_id_and_shuffle():
    service, _, transport = build_service(seed=3)
    _, _ = register_user(service)
    first = service.start_login("alice")
    second = service.start_login("alice")
    assert first.session_id != second.session_id
    orders_seen = {tuple(first.image_ids), tuple(second.image_ids)}
    for _ in range(20):
        orders_seen.add(tuple(service.start_login("alice").image_ids))
    assert len(orders_seen) > 1


def test_seeded_login_is_deterministic():
    results = []
    for _ in range(2):
        service, _, transport = build_service(
            seed=99, session_ids=counter_ids(), deterministic_image_ids=True
        )
        _, _ = register_user(service)
        challenge = service.start_login("alice")
        results.append((challenge.image_ids, transport.sent[challenge.session_id]))
    assert results[0] == results[1]


def test_otp_delivered_matches_store():
    service, _, transport = build_service(seed=11)
    register_user(service)
    challenge = service.start_login("alice")
    key = service.otp_store.peek(challenge.session_id)
    assert transport.sent[challenge.session_id] == key.as_string
    assert len(key.as_string) == 3


class FailingTransport:
    name = "failing"

    def send(self, session_id, digits):
        raise DeliveryError("gateway down")


def test_delivery_failure_aborts_login_unspecifically():
    service, _, _ = build_service(seed=1, transport=FailingTransport())
    register_user(service)
    with pytest.raises(AuthUnavailableError):
        service.start_login("alice")
    assert service._sessions == {}
    assert service.otp_store._keys == {}


def test_insufficient_decoys_refuses_login():
    service, _, _ = build_service(seed=1, decoys=8)
    register_user(service)
    with pytest.raises(AuthUnavailableError):
        service.start_login("alice")


# ----------------------------------------------------------------------
# Clicks


def test_click_flow_advances_without_evaluation():
    service, _, transport = build_service(seed=5)
    _, image_ids = register_user(service)
    challenge = service.start_login("alice")
    session = service._sessions[challenge.session_id]
    outcome = service.submit_click(
        challenge.session_id, make_click(challenge.image_ids[0], Cell(0, 0))
    )
    assert outcome.level == 2
    assert outcome.image_ids == session.challenges[1]
    assert not outcome.finalize_ready


def test_wrong_and_right_click_yield_equal_outcomes():
    outcomes = []
    for correct in (True, False):
        service, _, transport = build_service(
            seed=42, session_ids=counter_ids(), deterministic_image_ids=True
        )
        _, image_ids = register_user(service)
        challenge = service.start_login("alice", rng=random.Random(7))
        digits = tuple(int(d) for d in transport.sent[challenge.session_id])
        cell = expected_cell(LabelOrder.LEFT_TO_RIGHT, digits[0])
        if not correct:
            cell = Cell((cell.row + 1) % 3, cell.col)
        outcomes.append(
            service.submit_click(challenge.session_id, make_click(image_ids[0], cell))
        )
    assert outcomes[0] == outcomes[1]


def test_click_on_foreign_image_fails_session():
    service, _, _ = build_service(seed=5)
    register_user(service)
    challenge = service.start_login("alice")
    with pytest.raises(ProtocolError):
        service.submit_click(challenge.session_id, make_click("not-shown", Cell(0, 0)))
    session = service._sessions[challenge.session_id]
    assert session.state is SessionState.FAILED
    with pytest.raises(SessionStateError):
        service.submit_click(
            challenge.session_id, make_click(challenge.image_ids[0], Cell(0, 0))
        )


def test_click_with_bad_coordinates_is_retryable():
    service, _, _ = build_service(seed=5)
    register_user(service)
    challenge = service.start_login("alice")
    bad = ClickEvent(challenge.image_ids[0], x=-5, y=0, rendered_w=300, rendered_h=300)
    with pytest.raises(ValidationError):
        service.submit_click(challenge.session_id, bad)
    session = service._sessions[challenge.session_id]
    assert session.clicks == []
    assert session.state is SessionState.AWAITING_CLICKS
    outcome = service.submit_click(
        challenge.session_id, make_click(challenge.image_ids[0], Cell(1, 1))
    )
    assert outcome.level == 2


def test_fourth_click_rejected():
    service, _, transport = build_service(seed=5)
    _, image_ids = register_user(service)
    challenge = service.start_login("alice")
    digits = tuple(int(d) for d in transport.sent[challenge.session_id])
    run_clicks(service, challenge, image_ids, digits, ORDERS)
    with pytest.raises(SessionStateError):
        service.submit_click(
            challenge.session_id, make_click(image_ids[2], Cell(0, 0))
        )


def test_click_unknown_session():
    service, _, _ = build_service(seed=5)
    with pytest.raises(SessionNotFoundError):
        service.submit_click("ghost", make_click("x", Cell(0, 0)))


def test_session_expires_after_ttl():
    service, clock, _ = build_service(seed=5)
    register_user(service)
    challenge = service.start_login("alice")
    clock.advance(601.0)
    with pytest.raises(SessionExpiredError):
        service.submit_click(
            challenge.session_id, make_click(challenge.image_ids[0], Cell(0, 0))
        )


def test_session_valid_at_ttl_boundary():
    service, clock, _ = build_service(seed=5)
    register_user(service)
    challenge = service.start_login("alice")
    clock.advance(600.0)
    outcome = service.submit_click(
        challenge.session_id, make_click(challenge.image_ids[0], Cell(0, 0))
    )
    assert outcome.level == 2


# ----------------------------------------------------------------------
# Finalization


def test_golden_login_succeeds():
    service, _, transport = build_service(seed=8)
    _, image_ids = register_user(service)
    assert login_once(service, transport, image_ids) is True
    user = service._users["alice"]
    assert user.failure_times == []


@pytest.mark.parametrize("kind", ["image", "cell"])
@pytest.mark.parametrize("level", [1, 2, 3])
def test_any_single_mutation_fails(kind, level):
    service, _, transport = build_service(seed=8)
    _, image_ids = register_user(service)
    assert login_once(service, transport, image_ids, wrong=(kind, level)) is False


def test_finalize_before_three_clicks():
    service, _, _ = build_service(seed=8)
    register_user(service)
    challenge = service.start_login("alice")
    service.submit_click(challenge.session_id, make_click(challenge.image_ids[0], Cell(0, 0)))
    with pytest.raises(SessionStateError):
        service.finalize(challenge.session_id)


def test_finalize_twice_rejected():
    service, _, transport = build_service(seed=8)
    _, image_ids = register_user(service)
    challenge = service.start_login("alice")
    digits = tuple(int(d) for d in transport.sent[challenge.session_id])
    run_clicks(service, challenge, image_ids, digits, ORDERS)
    assert service.finalize(challenge.session_id) is True
    with pytest.raises(SessionStateError):
        service.finalize(challenge.session_id)
    # The key is spent: nothing can consume it again.
    with pytest.raises(OtpAlreadyUsedError):
        service.otp_store.consume(challenge.session_id)


def test_finalize_with_expired_key_fails_opaquely():
    service, clock, transport = build_service(seed=8, otp_ttl=120.0)
    _, image_ids = register_user(service)
    challenge = service.start_login("alice")
    digits = tuple(int(d) for d in transport.sent[challenge.session_id])
    run_clicks(service, challenge, image_ids, digits, ORDERS)
    clock.advance(121.0)
    assert service.finalize(challenge.session_id) is False


def test_expired_session_cannot_finalize():
    service, clock, transport = build_service(seed=8)
    _, image_ids = register_user(service)
    challenge = service.start_login("alice")
    digits = tuple(int(d) for d in transport.sent[challenge.session_id])
    run_clicks(service, challenge, image_ids, digits, ORDERS)
    clock.advance(601.0)
    with pytest.raises(SessionExpiredError):
        service.finalize(challenge.session_id)


# ----------------------------------------------------------------------
# Lockout


def test_three_failures_lock_the_account():
    service, clock, transport = build_service(seed=8)
    _, image_ids = register_user(service)
    for _ in range(3):
        assert login_once(service, transport, image_ids, wrong=("cell", 1)) is False
    with pytest.raises(AccountLockedError) as exc_info:
        service.start_login("alice")
    assert 0 < exc_info.value.retry_after <= 900.0
    assert service.check_lockout("alice") == pytest.approx(900.0)


def test_lock_expires_fifteen_minutes_after_third_failure():
    service, clock, transport = build_service(seed=8)
    _, image_ids = register_user(service)
    for _ in range(3):
        login_once(service, transport, image_ids, wrong=("image", 2))
    clock.advance(16 * 60)
    assert service.check_lockout("alice") is None
    assert login_once(service, transport, image_ids) is True


def test_two_failures_do_not_lock():
    service, _, transport = build_service(seed=8)
    _, image_ids = register_user(service)
    for _ in range(2):
        login_once(service, transport, image_ids, wrong=("cell", 3))
    assert service.check_lockout("alice") is None
    assert login_once(service, transport, image_ids) is True


def test_success_resets_failure_count():
    service, _, transport = build_service(seed=8)
    _, image_ids = register_user(service)
    for _ in range(2):
        login_once(service, transport, image_ids, wrong=("cell", 1))
    assert login_once(service, transport, image_ids) is True
    for _ in range(2):
        login_once(service, transport, image_ids, wrong=("cell", 1))
    assert service.check_lockout("alice") is None


def test_slow_failures_outside_window_do_not_lock():
    service, clock, transport = build_service(seed=8)
    _, image_ids = register_user(service)
    for _ in range(3):
        login_once(service, transport, image_ids, wrong=("cell", 1))
        clock.advance(8 * 60)
    # Each failure is 8 minutes apart, so no 15-minute window holds 3.
    assert service.check_lockout("alice") is None


def test_lockout_can_be_disabled():
    service, _, transport = build_service(seed=8, lockout_enabled=False)
    _, image_ids = register_user(service)
    for _ in range(5):
        login_once(service, transport, image_ids, wrong=("cell", 1))
    assert service.check_lockout("alice") is None
    assert login_once(service, transport, image_ids) is True


def test_check_lockout_unknown_user_allows():
    service, _, _ = build_service(seed=8)
    assert service.check_lockout("ghost") is None


# ----------------------------------------------------------------------
# Session views and image serving


def test_session_view_tracks_progress():
    service, _, transport = build_service(seed=6)
    _, image_ids = register_user(service)
    challenge = service.start_login("alice")
    view = service.session_view(challenge.session_id)
    assert view["level"] == 1
    assert view["images"] == challenge.image_ids
    assert view["finalize_ready"] is False
    # Idempotent: a re-read shows the same images in the same order.
    assert service.session_view(challenge.session_id) == view
    digits = tuple(int(d) for d in transport.sent[challenge.session_id])
    run_clicks(service, challenge, image_ids, digits, ORDERS)
    view = service.session_view(challenge.session_id)
    assert view["finalize_ready"] is True
    assert "images" not in view


def test_visible_images_grow_with_levels():
    service, _, _ = build_service(seed=6)
    _, image_ids = register_user(service)
    challenge = service.start_login("alice")
    session = service._sessions[challenge.session_id]
    assert service.visible_image_ids(challenge.session_id) == set(session.challenges[0])
    service.submit_click(challenge.session_id, make_click(challenge.image_ids[0], Cell(0, 0)))
    expected = set(session.challenges[0]) | set(session.challenges[1])
    assert service.visible_image_ids(challenge.session_id) == expected


def test_challenge_image_serves_bytes_in_scope_only():
    service, _, _ = build_service(seed=6)
    _, image_ids = register_user(service)
    challenge = service.start_login("alice")
    session = service._sessions[challenge.session_id]
    for image_id in challenge.image_ids:
        data, content_type = service.challenge_image(challenge.session_id, image_id)
        assert data.startswith(b"\x89PNG")
        assert content_type == "image/png"
    level_three_image = session.challenges[2][0]
    if level_three_image not in session.challenges[0]:
        with pytest.raises(SessionNotFoundError):
            service.challenge_image(challenge.session_id, level_three_image)


def test_discard_session_cleans_up():
    service, _, _ = build_service(seed=6)
    register_user(service)
    challenge = service.start_login("alice")
    service.discard_session(challenge.session_id)
    with pytest.raises(SessionNotFoundError):
        service.session_view(challenge.session_id)
    assert service.otp_store._keys == {}


# ----------------------------------------------------------------------
# Timing metrics


def test_registration_and_login_durations_recorded():
    clock = FakeClock()
    service, _, transport = build_service(seed=9, clock=clock)
    user_id = service.register_user("alice", "+10000000001")
    clock.advance(76.0)
    for level, order in enumerate(ORDERS, start=1):
        service.attach_image_password(user_id, level, solid_png(8, 8, (level, 1, 1)), order)
    _, image_ids = (
        user_id,
        [service._users["alice"].passwords[i].image_id for i in (1, 2, 3)],
    )
    challenge = service.start_login("alice")
    digits = tuple(int(d) for d in transport.sent[challenge.session_id])
    clock.advance(55.0)
    run_clicks(service, challenge, image_ids, digits, ORDERS)
    assert service.finalize(challenge.session_id) is True
    records = service.timing_records()
    assert len(records) == 1
    assert records[0].serial == 1
    assert records[0].registration_seconds == pytest.approx(76.0)
    assert records[0].login_seconds == (pytest.approx(55.0),)


def test_failed_login_records_no_duration():
    service, _, transport = build_service(seed=9)
    _, image_ids = register_user(service)
    login_once(service, transport, image_ids, wrong=("cell", 2))
    assert service.timing_records()[0].login_seconds == ()


def test_timing_records_keep_registration_order():
    service, _, _ = build_service(seed=9)
    register_user(service, "alice")
    register_user(service, "bob")
    records = service.timing_records()
    assert [r.serial for r in records] == [1, 2]
