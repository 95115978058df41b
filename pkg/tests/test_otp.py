"""Tests for one-time key issuance, consumption and delivery."""

import io
import json
import random
import threading
from http.server import BaseHTTPRequestHandler, HTTPServer

import pytest

from gridpass.otp import (
    ConsoleEchoTransport,
    DeliveryError,
    DuplicateOtpError,
    FileDropTransport,
    KeyState,
    OtpAlreadyUsedError,
    OtpError,
    OtpExpiredError,
    OtpKey,
    OtpNotFoundError,
    OtpStore,
    WebhookPostTransport,
    deliver,
    transport_from_env,
    ttl_from_env,
)


class FakeClock:
    def __init__(self, now=0.0):
        self.now = now

    def __call__(self):
        return self.now

    def advance(self, seconds):
        self.now += seconds


def make_store(ttl=120.0):
    clock = FakeClock()
    return OtpStore(ttl=ttl, clock=clock), clock


def test_generate_issues_three_digits_in_range():
    store, _ = make_store()
    rng = random.Random(7)
    key = store.generate("s1", rng)
    assert key.state is KeyState.LIVE
    assert len(key.digits) == 3
    assert all(1 <= d <= 9 for d in key.digits)
    assert key.as_string == "".join(str(d) for d in key.digits)


class _FixedRng:
    def __init__(self, value):
        self.value = value

    def randint(self, lo, hi):
        assert (lo, hi) == (1, 9)
        return self.value


def test_generate_with_stub_rng_hits_range_extremes():
    store, _ = make_store()
    assert store.generate("lo", _FixedRng(1)).digits == (1, 1, 1)
    assert store.generate("hi", _FixedRng(9)).digits == (9, 9, 9)


def test_example_key_386_is_valid():
    key = OtpKey("s", (3, 8, 6), issued_at=0.0)
    assert key.as_string == "386"


def test_generate_never_emits_zero():
    store, _ = make_store()
    rng = random.Random(11)
    for i in range(2000):
        key = store.generate(f"s{i}", rng)
        assert 0 not in key.digits


def test_generate_rejects_second_live_key():
    store, _ = make_store()
    rng = random.Random(1)
    store.generate("s1", rng)
    with pytest.raises(DuplicateOtpError):
        store.generate("s1", rng)


def test_generate_replaces_stale_key():
    store, clock = make_store(ttl=120.0)
    rng = random.Random(2)
    first = store.generate("s1", rng)
    clock.advance(121.0)
    second = store.generate("s1", rng)
    assert first.state is KeyState.EXPIRED
    assert second.state is KeyState.LIVE
    assert store.peek("s1") is second


def test_consume_returns_digits_once():
    store, _ = make_store()
    rng = random.Random(3)
    key = store.generate("s1", rng)
    assert store.consume("s1") == key.digits
    assert key.state is KeyState.CONSUMED
    with pytest.raises(OtpAlreadyUsedError):
        store.consume("s1")


def test_consume_unknown_session():
    store, _ = make_store()
    with pytest.raises(OtpNotFoundError):
        store.consume("ghost")


def test_consume_at_ttl_boundary_is_still_valid():
    store, clock = make_store(ttl=120.0)
    key = store.generate("s1", random.Random(4))
    clock.advance(120.0)
    assert store.consume("s1") == key.digits


def test_consume_one_second_past_ttl_fails():
    store, clock = make_store(ttl=120.0)
    key = store.generate("s1", random.Random(5))
    clock.advance(121.0)
    with pytest.raises(OtpExpiredError):
        store.consume("s1")
    assert key.state is KeyState.EXPIRED
    # Expiry is terminal even if the clock could rewind.
    with pytest.raises(OtpExpiredError):
        store.consume("s1", now=0.0)


def test_consumed_state_is_terminal():
    store, clock = make_store(ttl=120.0)
    store.generate("s1", random.Random(6))
    store.consume("s1")
    clock.advance(500.0)
    with pytest.raises(OtpAlreadyUsedError):
        store.consume("s1")


def test_sweep_expired_counts_flips():
    store, clock = make_store(ttl=120.0)
    rng = random.Random(8)
    for i in range(5):
        store.generate(f"s{i}", rng)
    store.consume("s0")
    clock.advance(121.0)
    assert store.sweep_expired() == 4
    assert store.sweep_expired() == 0


def test_drop_forgets_session():
    store, _ = make_store()
    store.generate("s1", random.Random(9))
    store.drop("s1")
    with pytest.raises(OtpNotFoundError):
        store.peek("s1")


def test_concurrent_consume_single_winner():
    store, _ = make_store()
    store.generate("s1", random.Random(10))
    results = []
    barrier = threading.Barrier(8)

    def worker():
        barrier.wait()
        try:
            store.consume("s1")
            results.append("ok")
        except OtpError:
            results.append("err")

    threads = [threading.Thread(target=worker) for _ in range(8)]
    for t in threads:
        t.start()
    for t in threads:
        t.join()
    assert results.count("ok") == 1
    assert results.count("err") == 7


def test_key_validation():
    with pytest.raises(ValueError):
        OtpKey("s", (0, 1, 2), issued_at=0.0)
    with pytest.raises(ValueError):
        OtpKey("s", (1, 2), issued_at=0.0)
    with pytest.raises(ValueError):
        OtpKey("s", (1, 2, 3), issued_at=0.0, ttl=0)


def test_console_transport_writes_line():
    stream = io.StringIO()
    key = OtpKey("abc", (3, 8, 6), issued_at=0.0)
    receipt = deliver(key, ConsoleEchoTransport(stream))
    assert stream.getvalue() == "OTP abc 386\n"
    assert receipt.channel == "console"
    assert key.state is KeyState.LIVE


def test_file_transport_writes_expected_file(tmp_path):
    key = OtpKey("abc", (3, 8, 6), issued_at=0.0)
    receipt = deliver(key, FileDropTransport(tmp_path))
    path = tmp_path / "otp-abc.txt"
    assert path.read_text() == "386\n"
    assert receipt.detail == str(path)


def test_file_transport_failure_raises_delivery_error(tmp_path):
    blocker = tmp_path / "blocked"
    blocker.write_text("not a directory")
    key = OtpKey("abc", (1, 2, 3), issued_at=0.0)
    with pytest.raises(DeliveryError):
        deliver(key, FileDropTransport(blocker / "sub"))
    assert key.state is KeyState.LIVE


class _WebhookHandler(BaseHTTPRequestHandler):
    received = []

    def do_POST(self):
        length = int(self.headers.get("Content-Length", 0))
        body = self.rfile.read(length)
        type(self).received.append(json.loads(body))
        self.send_response(204)
        self.end_headers()

    def log_message(self, *args):
        pass


@pytest.fixture
def webhook_server():
    _WebhookHandler.received = []
    server = HTTPServer(("127.0.0.1", 0), _WebhookHandler)
    thread = threading.Thread(target=server.serve_forever, daemon=True)
    thread.start()
    yield f"http://127.0.0.1:{server.server_port}/hook"
    server.shutdown()
    thread.join()


def test_webhook_transport_posts_json(webhook_server):
    key = OtpKey("abc", (3, 8, 6), issued_at=0.0)
    receipt = deliver(key, WebhookPostTransport(webhook_server))
    assert _WebhookHandler.received == [{"session_id": "abc", "otp": "386"}]
    assert receipt.channel == "webhook"


def test_webhook_transport_unreachable_raises():
    key = OtpKey("abc", (1, 2, 3), issued_at=0.0)
    transport = WebhookPostTransport("http://127.0.0.1:1/hook", timeout=0.5)
    with pytest.raises(DeliveryError):
        deliver(key, transport)
    assert key.state is KeyState.LIVE


def test_deliver_refuses_spent_key():
    key = OtpKey("abc", (1, 2, 3), issued_at=0.0, state=KeyState.CONSUMED)
    with pytest.raises(OtpError):
        deliver(key, ConsoleEchoTransport(io.StringIO()))


def test_transport_from_env_selection(tmp_path):
    assert transport_from_env({}).name == "console"
    assert transport_from_env({"OTP_TRANSPORT": "console"}).name == "console"
    file_transport = transport_from_env(
        {"OTP_TRANSPORT": "file", "OTP_FILE_DIR": str(tmp_path)}
    )
    assert file_transport.name == "file"
    assert file_transport.directory == tmp_path
    hook = transport_from_env(
        {"OTP_TRANSPORT": "webhook", "OTP_WEBHOOK_URL": "http://x/hook"}
    )
    assert hook.name == "webhook"
    assert hook.url == "http://x/hook"


def test_transport_from_env_errors():
    with pytest.raises(ValueError):
        transport_from_env({"OTP_TRANSPORT": "pigeon"})
    with pytest.raises(ValueError):
        transport_from_env({"OTP_TRANSPORT": "webhook"})


def test_ttl_from_env():
    assert ttl_from_env({}) == 120.0
    assert ttl_from_env({"OTP_TTL_SECONDS": "30"}) == 30.0
    with pytest.raises(ValueError):
        ttl_from_env({"OTP_TTL_SECONDS": "0"})
    with pytest.raises(ValueError):
        ttl_from_env({"OTP_TTL_SECONDS": "abc"})


def test_digit_distribution_is_roughly_uniform():
    # Smaller-scale version of the acceptance check, for quick feedback.
    store, _ = make_store()
    rng = random.Random(12345)
    counts = [0] * 10
    trials = 30000
    for i in range(trials):
        key = store.generate(f"s{i}", rng)
        for d in key.digits:
            counts[d] += 1
        store.drop(f"s{i}")
    assert counts[0] == 0
    total = trials * 3
    expected = total / 9
    sigma = (total * (1 / 9) * (8 / 9)) ** 0.5
    for d in range(1, 10):
        assert abs(counts[d] - expected) < 4 * sigma
