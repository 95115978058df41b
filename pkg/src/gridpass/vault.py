"""Encrypted storage for password images and the shared decoy pool.

Images are the secret half of a click-point credential, so they never
touch disk in the clear.  Each image is sealed with AES-256-GCM under a
key derived from one master secret and the owning account name, and the
pair ``image_id|owner`` is bound into the seal as associated data: a
ciphertext moved to another row or another owner fails authentication
instead of decrypting.

Decoys shown alongside the real image during login live in the same
store under a reserved system owner.
"""

from __future__ import annotations

import base64
import binascii
import os
import sqlite3
import threading
import uuid
from pathlib import Path
from typing import Optional

from cryptography.exceptions import InvalidTag
from cryptography.hazmat.primitives import hashes
from cryptography.hazmat.primitives.ciphers.aead import AESGCM
from cryptography.hazmat.primitives.kdf.hkdf import HKDF

DECOY_OWNER = "__system__"
MAX_IMAGE_BYTES = 5 * 1024 * 1024
ALLOWED_CONTENT_TYPES = ("image/png", "image/jpeg")
_KEY_INFO_PREFIX = b"image-seal:"
_NONCE_BYTES = 12

_SCHEMA = """
CREATE TABLE IF NOT EXISTS images (
    image_id TEXT PRIMARY KEY,
    owner TEXT NOT NULL,
    nonce BLOB NOT NULL,
    ciphertext BLOB NOT NULL,
    content_type TEXT NOT NULL,
    plaintext_length INTEGER NOT NULL
)
"""


class VaultError(Exception):
    """Base class for image store failures."""


class ImageNotFoundError(VaultError):
    """No stored image matches the requested id and owner."""


class SealIntegrityError(VaultError):
    """The stored ciphertext failed authentication."""


class PoolExhaustedError(VaultError):
    """Not enough eligible decoys to build a challenge."""


def parse_master_key(raw: str) -> bytes:
    """Decode a master secret given as hex or standard base64.

    The decoded secret must be at least 16 bytes.
    """
    text = raw.strip()
    if not text:
        raise ValueError("master key is empty")
    secret: Optional[bytes] = None
    try:
        secret = bytes.fromhex(text)
    except ValueError:
        try:
            secret = base64.b64decode(text, validate=True)
        except (binascii.Error, ValueError):
            raise ValueError("master key must be hex or base64") from None
    if len(secret) < 16:
        raise ValueError(f"master key too short: {len(secret)} bytes, need 16")
    return secret


def master_key_from_env(environ: Optional[dict] = None) -> bytes:
    env = os.environ if environ is None else environ
    raw = env.get("MASTER_KEY")
    if not raw:
        raise ValueError("MASTER_KEY is not set")
    return parse_master_key(raw)


def derive_owner_key(master: bytes, owner: str) -> bytes:
    """Derive the 32-byte sealing key for one owner from the master secret."""
    hkdf = HKDF(
        algorithm=hashes.SHA256(),
        length=32,
        salt=None,
        info=_KEY_INFO_PREFIX + owner.encode("utf-8"),
    )
    return hkdf.derive(master)


class ImageVault:
    """Single-file encrypted image store backed by sqlite.

    ``path`` may be ``":memory:"`` for throwaway stores in tests and
    simulations.  The vault is safe to share across threads.
    """

    def __init__(self, master: bytes, path: str = ":memory:", id_factory=None):
        if len(master) < 16:
            raise ValueError("master secret must be at least 16 bytes")
        self._master = master
        self.path = path
        self._id_factory = id_factory if id_factory is not None else lambda: uuid.uuid4().hex
        self._conn = sqlite3.connect(path, check_same_thread=False)
        self._conn.execute(_SCHEMA)
        self._conn.commit()
        self._lock = threading.Lock()
        self._key_cache: dict[str, bytes] = {}

    def close(self) -> None:
        self._conn.close()

    def _owner_key(self, owner: str) -> bytes:
        key = self._key_cache.get(owner)
        if key is None:
            key = derive_owner_key(self._master, owner)
            self._key_cache[owner] = key
        return key

    @staticmethod
    def _validate_payload(data: bytes, content_type: str) -> None:
        if not isinstance(data, (bytes, bytearray)) or len(data) == 0:
            raise ValueError("image payload must be non-empty bytes")
        if len(data) > MAX_IMAGE_BYTES:
            raise ValueError(f"image exceeds {MAX_IMAGE_BYTES} bytes")
        if content_type not in ALLOWED_CONTENT_TYPES:
            raise ValueError(f"unsupported content type: {content_type!r}")

    def store_image(
        self,
        owner: str,
        data: bytes,
        content_type: str = "image/png",
        image_id: Optional[str] = None,
    ) -> str:
        """Seal ``data`` for ``owner`` and return the new image id."""
        self._validate_payload(data, content_type)
        if not owner:
            raise ValueError("owner must be non-empty")
        if image_id is None:
            image_id = self._id_factory()
        nonce = os.urandom(_NONCE_BYTES)
        aad = f"{image_id}|{owner}".encode("utf-8")
        ciphertext = AESGCM(self._owner_key(owner)).encrypt(nonce, bytes(data), aad)
        with self._lock:
            try:
                self._conn.execute(
                    "INSERT INTO images VALUES (?, ?, ?, ?, ?, ?)",
                    (image_id, owner, nonce, ciphertext, content_type, len(data)),
                )
                self._conn.commit()
            except sqlite3.IntegrityError:
                raise VaultError(f"image id already stored: {image_id}") from None
        return image_id

    def load_image(self, image_id: str, owner: str) -> tuple[bytes, str]:
        """Open the seal on one image; return ``(plaintext, content_type)``.

        The row's recorded owner is ignored on purpose: the caller's
        claim of ownership must survive authentication of the associated
        data, so a wrong owner surfaces as an integrity failure, not a
        lookup miss.
        """
        with self._lock:
            row = self._conn.execute(
                "SELECT nonce, ciphertext, content_type FROM images WHERE image_id = ?",
                (image_id,),
            ).fetchone()
        if row is None:
            raise ImageNotFoundError(f"no image {image_id}")
        nonce, ciphertext, content_type = row
        aad = f"{image_id}|{owner}".encode("utf-8")
        try:
            plaintext = AESGCM(self._owner_key(owner)).decrypt(nonce, ciphertext, aad)
        except InvalidTag:
            raise SealIntegrityError(f"seal check failed for image {image_id}") from None
        return plaintext, content_type

    def add_decoy(self, data: bytes, content_type: str = "image/png") -> str:
        return self.store_image(DECOY_OWNER, data, content_type)

    def load_decoy(self, image_id: str) -> tuple[bytes, str]:
        return self.load_image(image_id, DECOY_OWNER)

    def decoy_ids(self) -> list[str]:
        with self._lock:
            rows = self._conn.execute(
                "SELECT image_id FROM images WHERE owner = ? ORDER BY image_id",
                (DECOY_OWNER,),
            ).fetchall()
        return [r[0] for r in rows]

    def owner_image_ids(self, owner: str) -> list[str]:
        with self._lock:
            rows = self._conn.execute(
                "SELECT image_id FROM images WHERE owner = ? ORDER BY image_id",
                (owner,),
            ).fetchall()
        return [r[0] for r in rows]

    def pick_decoys(
        self,
        exclude: set[str],
        count: int,
        rng,
        pool: Optional[list[str]] = None,
    ) -> list[str]:
        """Draw ``count`` distinct decoy ids outside ``exclude``, uniformly.

        ``pool`` lets a caller building several draws reuse one snapshot
        of :meth:`decoy_ids` instead of re-querying per draw.
        """
        if pool is None:
            pool = self.decoy_ids()
        eligible = [i for i in pool if i not in exclude]
        if len(eligible) < count:
            raise PoolExhaustedError(
                f"need {count} decoys, only {len(eligible)} eligible"
            )
        return rng.sample(eligible, count)

    def ingest_decoy_dir(self, directory: str | Path) -> int:
        """Seal every png/jpeg under ``directory`` as a decoy; return the count."""
        directory = Path(directory)
        if not directory.is_dir():
            raise ValueError(f"decoy directory not found: {directory}")
        count = 0
        for path in sorted(directory.iterdir()):
            suffix = path.suffix.lower()
            if suffix == ".png":
                content_type = "image/png"
            elif suffix in (".jpg", ".jpeg"):
                content_type = "image/jpeg"
            else:
                continue
            self.add_decoy(path.read_bytes(), content_type)
            count += 1
        return count
