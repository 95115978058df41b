"""Tiny generated images for development seeding and tests.

Real deployments ingest a curated decoy directory; development servers
and the test suite need valid image bytes without shipping binaries, so
this module renders minimal solid-color PNGs from scratch.
"""

from __future__ import annotations

import struct
import zlib

_PNG_SIGNATURE = b"\x89PNG\r\n\x1a\n"


def _chunk(kind: bytes, payload: bytes) -> bytes:
    crc = zlib.crc32(kind + payload) & 0xFFFFFFFF
    return struct.pack(">I", len(payload)) + kind + payload + struct.pack(">I", crc)


def solid_png(width: int = 8, height: int = 8, rgb: tuple[int, int, int] = (0, 0, 0)) -> bytes:
    """Render a ``width`` x ``height`` PNG filled with one RGB color."""
    if width <= 0 or height <= 0:
        raise ValueError("image dimensions must be positive")
    for channel in rgb:
        if not 0 <= channel <= 255:
            raise ValueError(f"rgb channel out of range: {rgb!r}")
    # Bit depth 8, color type 2 (truecolor), no interlace.
    ihdr = struct.pack(">IIBBBBB", width, height, 8, 2, 0, 0, 0)
    row = b"\x00" + bytes(rgb) * width
    idat = zlib.compress(row * height)
    return (
        _PNG_SIGNATURE
        + _chunk(b"IHDR", ihdr)
        + _chunk(b"IDAT", idat)
        + _chunk(b"IEND", b"")
    )


def sample_decoys(count: int = 12) -> list[bytes]:
    """Return ``count`` visually distinct solid PNGs."""
    if count <= 0:
        raise ValueError("count must be positive")
    images = []
    for i in range(count):
        rgb = ((i * 37) % 256, (i * 91 + 64) % 256, (i * 151 + 128) % 256)
        images.append(solid_png(8, 8, rgb))
    return images
