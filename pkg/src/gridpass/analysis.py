"""Attacker models quantifying how hard the login is to guess.

Three adversaries are modeled, each an operationalization of an
informal robustness claim:

* ``blind``: sees nothing; picks one of the four challenge images and
  one of the nine cells uniformly at each level.  Closed form
  (1/36)^3 = 1/46656.
* ``known-images``: has learned which image is real at every level
  (say, from malware screenshots) but knows nothing else; still must
  guess the cell.  Closed form (1/9)^3 = 1/729.
* ``session-observer``: watched one complete earlier login, seeing at
  each level the real image, the clicked cell and that session's key
  digit, and also reads the fresh key for the attack attempt.  For
  each level the observer keeps the labeling orders consistent with
  the observed (cell, digit) pair, then clicks the cell most of those
  orders map the fresh digit to, breaking ties uniformly.  The exact
  reference rate is computed by enumeration, averaged over fresh keys.

Every simulation drives the real :class:`~gridpass.core.AuthService`
login path end to end, so a verification bug would shift the measured
rates away from the references.
"""

from __future__ import annotations

import random
from collections import Counter
from dataclasses import dataclass
from fractions import Fraction
from functools import lru_cache

from gridpass.core import AuthService, ClickEvent
from gridpass.devseed import sample_decoys, solid_png
from gridpass.grid import Cell, LabelOrder, cell_of
from gridpass.otp import OtpStore
from gridpass.vault import ImageVault

MODELS = ("blind", "known-images", "session-observer")
MAX_TRIALS = 10**8
DEFAULT_CHUNK = 20_000

BLIND_GUESS_RATE = Fraction(1, 46656)
KNOWN_IMAGES_RATE = Fraction(1, 729)

_ORDERS = tuple(LabelOrder)
_RENDER = 300
_CELL_XY = {
    Cell(r, c): (c * 100 + 50, r * 100 + 50) for r in range(3) for c in range(3)
}
_SIM_MASTER = bytes(range(32))


def observer_level_rate(true_order: LabelOrder) -> Fraction:
    """Exact one-level success of the session observer given the truth.

    Enumerates the observed digit and the fresh digit (81 pairs); the
    observed cell is determined by the true order, and ties among
    equally voted cells are credited fractionally.
    """
    total = Fraction(0)
    for observed_digit in range(1, 10):
        observed_cell = cell_of(true_order, observed_digit)
        consistent = [
            order for order in _ORDERS
            if cell_of(order, observed_digit) == observed_cell
        ]
        for fresh_digit in range(1, 10):
            votes = Counter(cell_of(order, fresh_digit) for order in consistent)
            top = max(votes.values())
            winners = [cell for cell, count in votes.items() if count == top]
            target = cell_of(true_order, fresh_digit)
            if target in winners:
                total += Fraction(1, len(winners))
    return total / 81


@lru_cache(maxsize=1)
def session_observer_rate() -> Fraction:
    """Exact three-level success rate of the session observer.

    The true labeling order is uniform per level and levels share no
    randomness, so the rate is the mean one-level rate cubed.
    """
    level = sum(observer_level_rate(order) for order in _ORDERS) / len(_ORDERS)
    return level**3


def reference_rate(kind: str) -> Fraction:
    if kind == "blind":
        return BLIND_GUESS_RATE
    if kind == "known-images":
        return KNOWN_IMAGES_RATE
    if kind == "session-observer":
        return session_observer_rate()
    raise ValueError(f"unknown attacker model: {kind!r}")


@dataclass(frozen=True)
class AttackReport:
    """Outcome of a Monte Carlo attack run against the live service."""

    kind: str
    trials: int
    seed: int
    successes: int
    reference: Fraction

    @property
    def empirical_rate(self) -> float:
        return self.successes / self.trials

    @property
    def sigma(self) -> float:
        p = float(self.reference)
        return (p * (1 - p) / self.trials) ** 0.5

    @property
    def deviation(self) -> float:
        return self.empirical_rate - float(self.reference)

    @property
    def within_three_sigma(self) -> bool:
        return abs(self.deviation) <= 3 * self.sigma


def build_simulation_service(rng: random.Random):
    """A lean in-memory service for bulk attack trials.

    Lockout is off (we measure per-attempt probability, not throttled
    wall-clock success), the clock is frozen so nothing ever expires
    mid-trial, and ids are counters to keep the hot path cheap.
    """
    counter = iter(range(1, 1 << 62))
    vault = ImageVault(_SIM_MASTER, id_factory=lambda: f"i{next(counter)}")
    for image in sample_decoys(12):
        vault.add_decoy(image)
    otp_store = OtpStore(ttl=120.0, clock=lambda: 0.0)

    class _Capture:
        name = "capture"

        def __init__(self):
            self.sent = {}

        def send(self, session_id, digits):
            self.sent[session_id] = digits
            return "captured"

    transport = _Capture()
    session_counter = iter(range(1, 1 << 62))
    service = AuthService(
        vault,
        otp_store,
        transport,
        rng=rng,
        clock=lambda: 0.0,
        lockout_enabled=False,
        session_ids=lambda: f"s{next(session_counter)}",
        cache_decoy_pool=True,
    )
    return service, transport


def _register_victim(service, victim_rng) -> tuple[list[str], list[LabelOrder]]:
    orders = [victim_rng.choice(_ORDERS) for _ in range(3)]
    user_id = service.register_user("victim", "+10000000000")
    image_ids = []
    for level, order in enumerate(orders, start=1):
        image = solid_png(8, 8, (200, level * 20, 10))
        image_ids.append(service.attach_image_password(user_id, level, image, order))
    return image_ids, orders


def _uniform_cell(rng) -> Cell:
    index = rng.randrange(9)
    return Cell(index // 3, index % 3)


def _click(service, session_id, image_id, cell):
    x, y = _CELL_XY[cell]
    return service.submit_click(
        session_id,
        ClickEvent(image_id=image_id, x=x, y=y, rendered_w=_RENDER, rendered_h=_RENDER),
    )


def _run_chunk(kind: str, trials: int, base_seed: int) -> int:
    service_rng = random.Random(base_seed * 3)
    victim_rng = random.Random(base_seed * 3 + 1)
    attacker_rng = random.Random(base_seed * 3 + 2)
    service, transport = build_simulation_service(service_rng)
    real_ids, true_orders = _register_victim(service, victim_rng)
    successes = 0
    for _ in range(trials):
        challenge = service.start_login("victim")
        session_id = challenge.session_id
        fresh = transport.sent.pop(session_id)
        images = challenge.image_ids
        for level in range(3):
            if kind == "blind":
                target = attacker_rng.choice(images)
                cell = _uniform_cell(attacker_rng)
            elif kind == "known-images":
                target = real_ids[level]
                cell = _uniform_cell(attacker_rng)
            else:
                target = real_ids[level]
                # One observed (cell, digit) pair narrows the orders;
                # vote with the survivors on the fresh digit.
                observed_digit = victim_rng.randint(1, 9)
                observed_cell = cell_of(true_orders[level], observed_digit)
                consistent = [
                    order for order in _ORDERS
                    if cell_of(order, observed_digit) == observed_cell
                ]
                fresh_digit = int(fresh[level])
                votes = Counter(cell_of(order, fresh_digit) for order in consistent)
                top = max(votes.values())
                winners = [c for c, count in votes.items() if count == top]
                cell = winners[0] if len(winners) == 1 else attacker_rng.choice(winners)
            outcome = _click(service, session_id, target, cell)
            if outcome.image_ids is not None:
                images = outcome.image_ids
        if service.finalize(session_id):
            successes += 1
        service.discard_session(session_id)
    return successes


def run_attack(
    kind: str,
    trials: int,
    seed: int,
    chunk_size: int = DEFAULT_CHUNK,
) -> AttackReport:
    """Estimate an attacker's login success rate over ``trials`` attempts.

    Work is split into chunks, each against a fresh service seeded from
    (seed, chunk index), so a run is reproducible from its arguments
    and chunk totals reduce associatively.
    """
    if kind not in MODELS:
        raise ValueError(f"unknown attacker model: {kind!r}")
    if not isinstance(trials, int) or isinstance(trials, bool) or trials < 1:
        raise ValueError(f"trials must be a positive int, got {trials!r}")
    if trials > MAX_TRIALS:
        raise ValueError(f"trials budget exceeded: {trials} > {MAX_TRIALS}")
    successes = 0
    done = 0
    chunk_index = 0
    while done < trials:
        batch = min(chunk_size, trials - done)
        base_seed = seed + 1_000_003 * chunk_index
        successes += _run_chunk(kind, batch, base_seed)
        done += batch
        chunk_index += 1
    return AttackReport(
        kind=kind,
        trials=trials,
        seed=seed,
        successes=successes,
        reference=reference_rate(kind),
    )
