"""
Base58Check codec for legacy bitcoin addresses (P2PKH `1...` and P2SH `3...`).
"""
import hashlib
from typing import Optional

B58_ALPHABET = "123456789ABCDEFGHJKLMNPQRSTUVWXYZabcdefghijkmnopqrstuvwxyz"
_B58_INDEX = {c: i for i, c in enumerate(B58_ALPHABET)}

P2PKH_VERSION = 0x00
P2SH_VERSION = 0x05
_VERSION_PREFIX = {P2PKH_VERSION: "1", P2SH_VERSION: "3"}


def checksum(payload: bytes) -> bytes:
    """First four bytes of double SHA-256."""
    return hashlib.sha256(hashlib.sha256(payload).digest()).digest()[:4]


def b58encode(data: bytes) -> str:
    value = int.from_bytes(data, "big")
    chars = []
    while value:
        value, mod = divmod(value, 58)
        chars.append(B58_ALPHABET[mod])
    # leading zero bytes become leading '1's
    pad = len(data) - len(data.lstrip(b"\0"))
    return "1" * pad + "".join(reversed(chars))


def b58decode(text: str) -> Optional[bytes]:
    """Decode base58 text, None when it contains a character outside the alphabet."""
    value = 0
    for c in text:
        digit = _B58_INDEX.get(c)
        if digit is None:
            return None
        value = value * 58 + digit
    body = value.to_bytes((value.bit_length() + 7) // 8, "big") if value else b""
    pad = len(text) - len(text.lstrip("1"))
    return b"\0" * pad + body


def b58encode_check(payload: bytes) -> str:
    return b58encode(payload + checksum(payload))


def b58decode_check(text: str) -> Optional[bytes]:
    """Decode and verify the 4-byte checksum; returns the payload or None."""
    raw = b58decode(text)
    if raw is None or len(raw) < 5:
        return None
    payload, check = raw[:-4], raw[-4:]
    if checksum(payload) != check:
        return None
    return payload


def encode_address(hash160: bytes, version: int = P2PKH_VERSION) -> str:
    if len(hash160) != 20:
        raise ValueError("hash160 must be 20 bytes")
    return b58encode_check(bytes([version]) + hash160)


def is_valid_address(text: str) -> bool:
    """True iff `text` is a checksum-valid legacy address whose version byte agrees with its leading character."""
    payload = b58decode_check(text)
    if payload is None or len(payload) != 21:
        return False
    prefix = _VERSION_PREFIX.get(payload[0])
    return prefix is not None and text.startswith(prefix)
