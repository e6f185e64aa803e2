"""Hashing, Ed25519 keypairs, address derivation, and signatures.

Everything in this module is a pure function of its inputs: keypairs come
from caller-supplied 32-byte seeds and signing is deterministic (RFC 8032),
so simulation runs replay bit-for-bit.
"""

import hashlib

from cryptography.exceptions import InvalidSignature
from cryptography.hazmat.primitives.asymmetric.ed25519 import (
    Ed25519PrivateKey,
    Ed25519PublicKey,
)

DIGEST_LEN = 32
ADDRESS_LEN = 20
PUBLIC_KEY_LEN = 32
SIGNATURE_LEN = 64

ZERO_DIGEST = b"\x00" * DIGEST_LEN
ZERO_ADDRESS = b"\x00" * ADDRESS_LEN
ZERO_SIGNATURE = b"\x00" * SIGNATURE_LEN

# RSA/ECC key lengths offering comparable security (bits). Documentation
# only; 256-bit ECC is the class this module implements.
RSA_ECC_KEY_LENGTH_EQUIVALENCE = (
    (1024, 160),
    (2048, 224),
    (3072, 256),
    (7680, 348),
    (15360, 512),
)


class MalformedKeyError(ValueError):
    """Raised when key bytes do not decode as a valid key of the scheme."""


class DegenerateSeedError(ValueError):
    """Raised for seeds the scheme rejects; caller retries with the next seed."""


class KeyPair:
    """An Ed25519 signing identity. The private seed never leaves this object."""

    __slots__ = ("public_key", "_private")

    def __init__(self, seed: bytes):
        if len(seed) != 32:
            raise DegenerateSeedError("keypair seed must be exactly 32 bytes")
        if seed == b"\x00" * 32:
            raise DegenerateSeedError("all-zero seed rejected; retry with next seed")
        self._private = Ed25519PrivateKey.from_private_bytes(seed)
        self.public_key = self._private.public_key().public_bytes_raw()

    def __repr__(self):  # never echo private material
        return f"KeyPair(public_key={self.public_key.hex()})"

    def sign(self, message: bytes) -> bytes:
        return self._private.sign(message)


def hash256(data: bytes) -> bytes:
    """SHA-256 digest of the input bytes."""
    return hashlib.sha256(data).digest()


def generate_keypair(seed: bytes) -> KeyPair:
    """Build the keypair deterministically derived from a 32-byte seed."""
    return KeyPair(seed)


def derive_address(public_key: bytes) -> bytes:
    """First 20 bytes of hash256(public key); the node/user identifier."""
    if len(public_key) != PUBLIC_KEY_LEN:
        raise MalformedKeyError(f"public key must be {PUBLIC_KEY_LEN} bytes")
    return hash256(public_key)[:ADDRESS_LEN]


def sign(keypair: KeyPair, message: bytes) -> bytes:
    """Deterministic Ed25519 signature over the exact message bytes."""
    return keypair.sign(message)


def verify(public_key: bytes, message: bytes, signature: bytes) -> bool:
    """True iff signature is valid for (public_key, message). Total: malformed
    input of any shape returns False rather than raising."""
    try:
        Ed25519PublicKey.from_public_bytes(public_key).verify(signature, message)
        return True
    except (InvalidSignature, ValueError, TypeError):
        return False
