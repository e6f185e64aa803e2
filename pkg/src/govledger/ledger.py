"""Block and chain data model: canonical serialization, genesis, hashing,
validation, and longest-chain fork choice.

Canonical serialization is defined once here and reused for signing, merkle
leaves, and dumps: all integers big-endian fixed-width, transaction fields
length-prefixed in declared order. The header keeps nonce and difficulty
for format fidelity even though DPoS never varies them (nonce = 0,
difficulty = all-zero digest).
"""

import json
import struct
from dataclasses import dataclass, field
from fractions import Fraction

from . import crypto, merkle
from .crypto import (
    ADDRESS_LEN,
    DIGEST_LEN,
    SIGNATURE_LEN,
    ZERO_ADDRESS,
    ZERO_DIGEST,
    ZERO_SIGNATURE,
    hash256,
)

BLOCK_VERSION = 1

# Reserved record_identification values for administrative records; ordinary
# e-government records use any other tag ("tax registration number", ...).
SYS_GENESIS = "sys:genesis"
SYS_NODE_REGISTRATION = "sys:node-registration"
SYS_USER_REGISTRATION = "sys:user-registration"
SYS_TRANSFER = "sys:transfer"
SYS_RETIREMENT = "sys:retirement"
ADMIN_KINDS = frozenset(
    {SYS_GENESIS, SYS_NODE_REGISTRATION, SYS_USER_REGISTRATION, SYS_TRANSFER, SYS_RETIREMENT}
)


def canonical_json(obj) -> bytes:
    """Stable JSON bytes: sorted keys, no whitespace."""
    return json.dumps(obj, sort_keys=True, separators=(",", ":")).encode()


def _lp(data: bytes) -> bytes:
    """Length-prefix a field with a big-endian u32."""
    return struct.pack(">I", len(data)) + data


@dataclass(frozen=True)
class BlockHeader:
    version: int
    prev_hash: bytes
    merkle_root: bytes
    timestamp: int
    nonce: int = 0
    difficulty: bytes = ZERO_DIGEST

    def serialize(self) -> bytes:
        return (
            struct.pack(">I", self.version)
            + self.prev_hash
            + self.merkle_root
            + struct.pack(">Q", self.timestamp)
            + struct.pack(">Q", self.nonce)
            + self.difficulty
        )


@dataclass(frozen=True)
class Transaction:
    """A signed e-government record: who, what, and which register."""

    user_id: str
    record_value: bytes
    record_identification: str
    submitter_address: bytes
    submitter_signature: bytes
    submitted_at: int

    def signing_bytes(self) -> bytes:
        """The bytes the submitter signs: everything except address/signature."""
        return (
            _lp(self.user_id.encode())
            + _lp(self.record_value)
            + _lp(self.record_identification.encode())
            + _lp(struct.pack(">Q", self.submitted_at))
        )

    def serialize(self) -> bytes:
        return (
            _lp(self.user_id.encode())
            + _lp(self.record_value)
            + _lp(self.record_identification.encode())
            + _lp(self.submitter_address)
            + _lp(self.submitter_signature)
            + _lp(struct.pack(">Q", self.submitted_at))
        )


def tx_hash(tx: Transaction) -> bytes:
    return hash256(tx.serialize())


def tx_sort_key(tx: Transaction) -> tuple[int, bytes]:
    """Deterministic in-block ordering: by submission tick, then bytes."""
    return (tx.submitted_at, tx.serialize())


@dataclass(frozen=True)
class Block:
    header: BlockHeader
    transactions: tuple[Transaction, ...]
    witness_address: bytes
    witness_signature: bytes
    endorsements: tuple[tuple[bytes, bytes], ...]

    def serialize(self) -> bytes:
        out = [self.header.serialize(), struct.pack(">I", len(self.transactions))]
        out += [tx.serialize() for tx in self.transactions]
        out += [self.witness_address, self.witness_signature]
        out.append(struct.pack(">I", len(self.endorsements)))
        out += [addr + sig for addr, sig in self.endorsements]
        return b"".join(out)


@dataclass
class Chain:
    blocks: list[Block] = field(default_factory=list)

    @property
    def height(self) -> int:
        return len(self.blocks)

    @property
    def head(self) -> Block:
        return self.blocks[-1]

    def head_hash(self) -> bytes:
        return block_hash(self.head.header)


def block_hash(header: BlockHeader) -> bytes:
    """Identity of a block: hash256 of the canonical header bytes."""
    return hash256(header.serialize())


def compute_merkle_root(transactions) -> bytes:
    return merkle.merkle_root([tx.serialize() for tx in transactions])


def create_genesis(network_config: dict, fixed_random_payload: bytes) -> Block:
    """Hard-coded first block embedding the configured payload.

    The single synthetic genesis transaction carries the fixed payload plus
    the bootstrap network configuration (node identities, grants, round
    config), making a dumped chain self-describing.
    """
    body = dict(network_config)
    body["embedded_payload"] = fixed_random_payload.hex()
    tx = Transaction(
        user_id="genesis",
        record_value=canonical_json(body),
        record_identification=SYS_GENESIS,
        submitter_address=ZERO_ADDRESS,
        submitter_signature=ZERO_SIGNATURE,
        submitted_at=0,
    )
    header = BlockHeader(
        version=BLOCK_VERSION,
        prev_hash=ZERO_DIGEST,
        merkle_root=compute_merkle_root([tx]),
        timestamp=0,
    )
    return Block(
        header=header,
        transactions=(tx,),
        witness_address=ZERO_ADDRESS,
        witness_signature=ZERO_SIGNATURE,
        endorsements=(),
    )


def genesis_config(genesis: Block) -> dict:
    """Read the network configuration embedded in a genesis block."""
    return json.loads(genesis.transactions[0].record_value)


def record_credits(tx: Transaction) -> list[bytes]:
    """Addresses credited one token when this record seals.

    Ordinary records credit their submitter; recovery transfers credit the
    new address named in the payload; administrative records carry explicit
    grants instead and credit nobody here.
    """
    if tx.record_identification == SYS_TRANSFER:
        try:
            return [bytes.fromhex(json.loads(tx.record_value)["new_address"])]
        except (ValueError, KeyError, TypeError):
            return []
    if tx.record_identification in ADMIN_KINDS:
        return []
    return [tx.submitter_address]


def registration_bindings(block: Block) -> dict[bytes, bytes]:
    """address -> public key bindings announced by this block's registration
    records. Bindings are self-certifying: the address must derive from the
    announced key and the record must be signed by it (checked during
    validation)."""
    bindings = {}
    for tx in block.transactions:
        if tx.record_identification in (SYS_NODE_REGISTRATION, SYS_USER_REGISTRATION):
            try:
                pub = bytes.fromhex(json.loads(tx.record_value)["public_key"])
            except (ValueError, KeyError, TypeError):
                continue
            bindings[crypto.derive_address(pub)] = pub
    return bindings


@dataclass(frozen=True)
class Verdict:
    ok: bool
    reason: str = ""
    height: int | None = None

    def __bool__(self):
        return self.ok


VALID = Verdict(ok=True)


class EndorsementHistory:
    """Per-height stake context for the endorsement-weight threshold.

    universe(h) is the stake table of registered delegates governing the
    block at height h. Heights beyond the recorded range fall back to the
    nearest recorded entry, so live nodes can evaluate branches one block
    longer than their own chain.
    """

    def __init__(self, finality_fraction: Fraction, per_height: dict[int, dict[bytes, int]]):
        self.finality_fraction = Fraction(finality_fraction)
        self.per_height = dict(per_height)

    def universe(self, height: int) -> dict[bytes, int]:
        if height in self.per_height:
            return self.per_height[height]
        lower = [h for h in self.per_height if h < height]
        if lower:
            return self.per_height[max(lower)]
        if self.per_height:
            return self.per_height[min(self.per_height)]
        return {}

    def record(self, height: int, universe: dict[bytes, int]) -> None:
        self.per_height[height] = dict(universe)


def meets_threshold(weight: int, universe_total: int, fraction: Fraction) -> bool:
    """Exact rational comparison: weight >= fraction * universe_total."""
    return Fraction(weight) >= fraction * universe_total


def _verify_transactions(block: Block, pubkeys: dict[bytes, bytes]) -> Verdict:
    """Check every transaction signature, resolving keys from prior state plus
    this block's own (self-certifying) registration records."""
    known = dict(pubkeys)
    for tx in block.transactions:
        if tx.record_identification in (SYS_NODE_REGISTRATION, SYS_USER_REGISTRATION):
            try:
                pub = bytes.fromhex(json.loads(tx.record_value)["public_key"])
            except (ValueError, KeyError, TypeError):
                return Verdict(False, "malformed registration record")
            if crypto.derive_address(pub) != tx.submitter_address:
                return Verdict(False, "registration address mismatch")
            known[tx.submitter_address] = pub
    for tx in block.transactions:
        pub = known.get(tx.submitter_address)
        if pub is None:
            return Verdict(False, "unknown transaction submitter")
        if not crypto.verify(pub, tx.signing_bytes(), tx.submitter_signature):
            return Verdict(False, "transaction signature invalid")
    return VALID


def validate_block(
    block: Block,
    parent: Block,
    pubkeys: dict[bytes, bytes],
    history: EndorsementHistory,
    height: int,
) -> Verdict:
    """Full validity check of one block against its parent.

    pubkeys must cover all addresses registered strictly before this block;
    the block's own registration records extend it for transaction checks.
    """
    if block.header.prev_hash != block_hash(parent.header):
        return Verdict(False, "prev-hash mismatch", height)
    if block.header.merkle_root != compute_merkle_root(block.transactions):
        return Verdict(False, "merkle mismatch", height)

    head_hash = block_hash(block.header)
    witness_pub = pubkeys.get(block.witness_address)
    if witness_pub is None:
        return Verdict(False, "unknown witness", height)
    if not crypto.verify(witness_pub, head_hash, block.witness_signature):
        return Verdict(False, "witness signature invalid", height)

    universe = history.universe(height)
    seen = set()
    weight = 0
    for addr, sig in block.endorsements:
        if addr == block.witness_address:
            return Verdict(False, "self-endorsement", height)
        pub = pubkeys.get(addr)
        if pub is None:
            return Verdict(False, "unknown endorser", height)
        if not crypto.verify(pub, head_hash, sig):
            return Verdict(False, "endorsement signature mismatch", height)
        if addr in seen:
            continue  # duplicates counted once
        seen.add(addr)
        weight += universe.get(addr, 0)
    eligible_total = sum(s for a, s in universe.items() if a != block.witness_address)
    if not meets_threshold(weight, eligible_total, history.finality_fraction):
        return Verdict(False, "endorsement weight below threshold", height)

    for tx in block.transactions:
        if tx.submitter_address == block.witness_address:
            return Verdict(False, "witness self-transaction", height)

    verdict = _verify_transactions(block, pubkeys)
    if not verdict:
        return Verdict(False, verdict.reason, height)
    return VALID


def validate_genesis(block: Block) -> Verdict:
    if block.header.prev_hash != ZERO_DIGEST:
        return Verdict(False, "genesis prev-hash not zero", 0)
    if block.header.merkle_root != compute_merkle_root(block.transactions):
        return Verdict(False, "merkle mismatch", 0)
    if len(block.transactions) != 1:
        return Verdict(False, "genesis must hold one synthetic record", 0)
    if block.transactions[0].record_identification != SYS_GENESIS:
        return Verdict(False, "genesis record kind mismatch", 0)
    return VALID


def genesis_pubkeys(genesis: Block) -> dict[bytes, bytes]:
    """Bootstrap address -> public key bindings from the genesis config."""
    config = genesis_config(genesis)
    out = {}
    for node in config.get("bootstrap_nodes", []):
        pub = bytes.fromhex(node["public_key"])
        out[crypto.derive_address(pub)] = pub
    return out


def validate_chain(chain: Chain, history: EndorsementHistory) -> Verdict:
    """Validate from genesis; the verdict carries the first invalid height."""
    if not chain.blocks:
        raise ValueError("empty chain: genesis required")
    verdict = validate_genesis(chain.blocks[0])
    if not verdict:
        return verdict
    pubkeys = genesis_pubkeys(chain.blocks[0])
    for height in range(1, chain.height):
        block = chain.blocks[height]
        verdict = validate_block(block, chain.blocks[height - 1], pubkeys, history, height)
        if not verdict:
            return verdict
        pubkeys.update(registration_bindings(block))
    return VALID


def select_valid_chain(candidates: list[Chain]) -> Chain | None:
    """Longest-chain fork choice. Returns None on a length tie: callers keep
    all tied branches and wait for one to grow."""
    if not candidates:
        raise ValueError("no candidate chains")
    genesis_hashes = {block_hash(c.blocks[0].header) for c in candidates}
    if len(genesis_hashes) != 1:
        raise ValueError("candidates do not share a genesis")
    best = max(c.height for c in candidates)
    tied = [c for c in candidates if c.height == best]
    if len(tied) > 1:
        return None
    return tied[0]


# --- chain dump (one context line, then one block per line) ---

DUMP_FORMAT = "govledger-chain-v1"


def _tx_to_json(tx: Transaction) -> dict:
    return {
        "user_id": tx.user_id,
        "record_value": tx.record_value.hex(),
        "record_identification": tx.record_identification,
        "submitter_address": tx.submitter_address.hex(),
        "submitter_signature": tx.submitter_signature.hex(),
        "submitted_at": tx.submitted_at,
    }


def _tx_from_json(obj: dict) -> Transaction:
    return Transaction(
        user_id=obj["user_id"],
        record_value=bytes.fromhex(obj["record_value"]),
        record_identification=obj["record_identification"],
        submitter_address=bytes.fromhex(obj["submitter_address"]),
        submitter_signature=bytes.fromhex(obj["submitter_signature"]),
        submitted_at=int(obj["submitted_at"]),
    )


def block_to_json(block: Block) -> dict:
    return {
        "header": {
            "version": block.header.version,
            "prev_hash": block.header.prev_hash.hex(),
            "merkle_root": block.header.merkle_root.hex(),
            "timestamp": block.header.timestamp,
            "nonce": block.header.nonce,
            "difficulty": block.header.difficulty.hex(),
        },
        "transactions": [_tx_to_json(tx) for tx in block.transactions],
        "witness_address": block.witness_address.hex(),
        "witness_signature": block.witness_signature.hex(),
        "endorsements": [[a.hex(), s.hex()] for a, s in block.endorsements],
    }


def block_from_json(obj: dict) -> Block:
    h = obj["header"]
    header = BlockHeader(
        version=int(h["version"]),
        prev_hash=bytes.fromhex(h["prev_hash"]),
        merkle_root=bytes.fromhex(h["merkle_root"]),
        timestamp=int(h["timestamp"]),
        nonce=int(h["nonce"]),
        difficulty=bytes.fromhex(h["difficulty"]),
    )
    return Block(
        header=header,
        transactions=tuple(_tx_from_json(t) for t in obj["transactions"]),
        witness_address=bytes.fromhex(obj["witness_address"]),
        witness_signature=bytes.fromhex(obj["witness_signature"]),
        endorsements=tuple((bytes.fromhex(a), bytes.fromhex(s)) for a, s in obj["endorsements"]),
    )


def dump_chain(chain: Chain, history: EndorsementHistory) -> str:
    context = {
        "format": DUMP_FORMAT,
        "finality_fraction": str(history.finality_fraction),
        "endorsement_context": {
            str(h): {addr.hex(): stake for addr, stake in sorted(universe.items())}
            for h, universe in sorted(history.per_height.items())
        },
    }
    lines = [json.dumps(context, sort_keys=True, separators=(",", ":"))]
    for block in chain.blocks:
        lines.append(json.dumps(block_to_json(block), sort_keys=True, separators=(",", ":")))
    return "\n".join(lines) + "\n"


def parse_chain_dump(text: str) -> tuple[Chain, EndorsementHistory]:
    lines = [line for line in text.splitlines() if line.strip()]
    if not lines:
        raise ValueError("empty chain dump")
    context = json.loads(lines[0])
    if context.get("format") != DUMP_FORMAT:
        raise ValueError("unrecognized chain dump format")
    history = EndorsementHistory(
        Fraction(context["finality_fraction"]),
        {
            int(h): {bytes.fromhex(a): int(s) for a, s in universe.items()}
            for h, universe in context["endorsement_context"].items()
        },
    )
    blocks = [block_from_json(json.loads(line)) for line in lines[1:]]
    if not blocks:
        raise ValueError("chain dump holds no blocks")
    return Chain(blocks=blocks), history
