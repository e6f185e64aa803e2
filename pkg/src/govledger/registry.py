"""Node onboarding, user registration, record submission, key-loss
recovery, and address queries.

Administrative events are recorded on-chain as transactions with reserved
"sys:" record tags: onboarding grants ride in node-registration records,
wallet announcements in user-registration records, and recovery appends
transfer records plus a retirement marker (never rewriting history).
Broadcast payloads built here carry addresses and public keys only; private
keys stay inside Wallet objects on their own node.
"""

import hashlib
import json
import struct
from dataclasses import dataclass, field

from . import crypto, ledger
from .ledger import (
    SYS_NODE_REGISTRATION,
    SYS_RETIREMENT,
    SYS_TRANSFER,
    SYS_USER_REGISTRATION,
    Chain,
    Transaction,
)

FULL = "full"
LIGHTWEIGHT = "lightweight"
ORIGINS = ("government", "citizen", "business")

DEFAULT_TOKENS_FULL = 10
DEFAULT_TOKENS_LIGHT = 1


@dataclass
class Wallet:
    """Key-derived identity. The keypair never appears in any broadcast."""

    address: bytes
    keypair: crypto.KeyPair = field(repr=False)
    grant: int = 0

    def announce(self) -> dict:
        return {"address": self.address.hex(), "public_key": self.keypair.public_key.hex()}


@dataclass
class NodeDescriptor:
    node_id: str
    kind: str  # FULL | LIGHTWEIGHT
    origin: str
    wallet: Wallet
    is_department: bool

    def public_view(self) -> dict:
        view = {
            "node_id": self.node_id,
            "kind": self.kind,
            "origin": self.origin,
            "is_department": self.is_department,
        }
        view.update(self.wallet.announce())
        return view


@dataclass(frozen=True)
class UserRecord:
    user_id: str
    address: bytes
    registered_at: int


class UidIssuer:
    """Monotonic uID source, rendered as fixed-width decimals."""

    def __init__(self):
        self.next_value = 1

    def issue(self) -> str:
        uid = f"{self.next_value:08d}"
        self.next_value += 1
        return uid


def derive_key_seed(scenario_seed: int, tag: str) -> bytes:
    """32-byte keypair seed for one named entity of one scenario."""
    return hashlib.sha256(
        b"govledger-key" + struct.pack(">q", scenario_seed) + tag.encode()
    ).digest()


def make_wallet(scenario_seed: int, tag: str, grant: int = 0) -> Wallet:
    seed = derive_key_seed(scenario_seed, tag)
    keypair = crypto.generate_keypair(seed)
    return Wallet(address=crypto.derive_address(keypair.public_key), keypair=keypair, grant=grant)


def node_kind(origin: str, wants_full: bool) -> tuple[str, bool]:
    """Kind and department flag per origin; business nodes may opt into full."""
    if origin not in ORIGINS:
        raise ValueError(f"unknown origin: {origin}")
    if origin == "government":
        return FULL, True
    if origin == "business" and wants_full:
        return FULL, False
    return LIGHTWEIGHT, False


def _signed_tx(
    keypair: crypto.KeyPair,
    user_id: str,
    record_value: bytes,
    record_identification: str,
    tick: int,
) -> Transaction:
    unsigned = Transaction(
        user_id=user_id,
        record_value=record_value,
        record_identification=record_identification,
        submitter_address=crypto.derive_address(keypair.public_key),
        submitter_signature=crypto.ZERO_SIGNATURE,
        submitted_at=tick,
    )
    signature = crypto.sign(keypair, unsigned.signing_bytes())
    return Transaction(
        user_id=unsigned.user_id,
        record_value=unsigned.record_value,
        record_identification=unsigned.record_identification,
        submitter_address=unsigned.submitter_address,
        submitter_signature=signature,
        submitted_at=tick,
    )


def node_registration_tx(descriptor: NodeDescriptor, tick: int) -> Transaction:
    """The on-chain registration record carrying the onboarding token grant."""
    body = {
        "node_id": descriptor.node_id,
        "kind": descriptor.kind,
        "origin": descriptor.origin,
        "public_key": descriptor.wallet.keypair.public_key.hex(),
        "grant": descriptor.wallet.grant,
    }
    return _signed_tx(
        descriptor.wallet.keypair,
        descriptor.node_id,
        ledger.canonical_json(body),
        SYS_NODE_REGISTRATION,
        tick,
    )


def user_registration_tx(user_id: str, wallet: Wallet, tick: int) -> Transaction:
    body = {"user_id": user_id, "public_key": wallet.keypair.public_key.hex()}
    return _signed_tx(wallet.keypair, user_id, ledger.canonical_json(body), SYS_USER_REGISTRATION, tick)


def record_tx(
    user_id: str,
    wallet: Wallet,
    record_value: bytes,
    record_identification: str,
    tick: int,
) -> Transaction:
    """An ordinary signed e-government record from a registered submitter."""
    if record_identification in ledger.ADMIN_KINDS:
        raise ValueError("record_identification collides with a reserved tag")
    return _signed_tx(wallet.keypair, user_id, record_value, record_identification, tick)


def transfer_tx(
    department: NodeDescriptor,
    user_id: str,
    old_address: bytes,
    new_address: bytes,
    ref_height: int,
    ref_index: int,
    tick: int,
) -> Transaction:
    body = {
        "old_address": old_address.hex(),
        "new_address": new_address.hex(),
        "ref": {"height": ref_height, "tx_index": ref_index},
    }
    return _signed_tx(
        department.wallet.keypair, user_id, ledger.canonical_json(body), SYS_TRANSFER, tick
    )


def retirement_tx(
    department: NodeDescriptor, user_id: str, old_address: bytes, new_address: bytes, tick: int
) -> Transaction:
    body = {"old_address": old_address.hex(), "new_address": new_address.hex()}
    return _signed_tx(
        department.wallet.keypair, user_id, ledger.canonical_json(body), SYS_RETIREMENT, tick
    )


@dataclass
class RegistryView:
    """One node's registry knowledge, fed by broadcasts and sealed blocks."""

    nodes: dict[str, dict] = field(default_factory=dict)  # node_id -> public view
    users: dict[str, dict] = field(default_factory=dict)  # uid -> announcement
    pubkeys: dict[bytes, bytes] = field(default_factory=dict)
    addresses: set[bytes] = field(default_factory=set)

    def admit_node(self, view: dict) -> None:
        addr = bytes.fromhex(view["address"])
        self.nodes[view["node_id"]] = dict(view)
        self.pubkeys[addr] = bytes.fromhex(view["public_key"])
        self.addresses.add(addr)

    def admit_user(self, user_id: str, announcement: dict) -> None:
        addr = bytes.fromhex(announcement["address"])
        record = dict(announcement)
        record.setdefault("retired", False)
        self.users[user_id] = record
        self.pubkeys[addr] = bytes.fromhex(announcement["public_key"])
        self.addresses.add(addr)

    def retire_user_address(self, user_id: str, new_announcement: dict) -> None:
        self.admit_user(user_id, new_announcement)

    def address_of_user(self, user_id: str) -> bytes | None:
        record = self.users.get(user_id)
        return bytes.fromhex(record["address"]) if record else None


def authenticate_submission(tx: Transaction, view: RegistryView) -> tuple[bool, str]:
    """Admission gate: only registered identities with valid signatures enter
    any mempool."""
    if tx.submitter_address not in view.addresses:
        return False, "authentication failed: unregistered submitter"
    known_ids = view.users.keys() | view.nodes.keys()
    if tx.user_id not in known_ids:
        return False, "unknown uID"
    pub = view.pubkeys.get(tx.submitter_address)
    if pub is None or not crypto.verify(pub, tx.signing_bytes(), tx.submitter_signature):
        return False, "authentication failed: bad signature"
    return True, ""


def collect_grants(chain: Chain) -> dict[bytes, int]:
    """Onboarding grants proven by the chain: genesis bootstrap entries plus
    sealed node-registration records."""
    grants: dict[bytes, int] = {}
    if not chain.blocks:
        return grants
    config = ledger.genesis_config(chain.blocks[0])
    for node in config.get("bootstrap_nodes", []):
        addr = crypto.derive_address(bytes.fromhex(node["public_key"]))
        grants[addr] = int(node["grant"])
    for block in chain.blocks[1:]:
        for tx in block.transactions:
            if tx.record_identification == SYS_NODE_REGISTRATION:
                try:
                    body = json.loads(tx.record_value)
                    grants[tx.submitter_address] = int(body["grant"])
                except (ValueError, KeyError, TypeError):
                    continue
    return grants


def query_records(chain: Chain, address: bytes, requester: str | None = None) -> list[dict]:
    """All sealed records credited to the address, in chain order, plus a
    retirement marker row when the address has been recovered from."""
    out = []
    for height, block in enumerate(chain.blocks):
        for index, tx in enumerate(block.transactions):
            if address in ledger.record_credits(tx):
                out.append(
                    {
                        "user_id": tx.user_id,
                        "record_identification": tx.record_identification,
                        "record_value": tx.record_value.hex(),
                        "block_height": height,
                        "tx_index": index,
                    }
                )
            elif tx.record_identification == SYS_RETIREMENT:
                try:
                    body = json.loads(tx.record_value)
                except ValueError:
                    continue
                if body.get("old_address") == address.hex():
                    out.append(
                        {
                            "user_id": tx.user_id,
                            "record_identification": tx.record_identification,
                            "record_value": tx.record_value.hex(),
                            "block_height": height,
                            "tx_index": index,
                            "retired": True,
                        }
                    )
    return out


def recovery_transactions(
    department: NodeDescriptor,
    user_id: str,
    old_address: bytes,
    new_wallet: Wallet,
    chain: Chain,
    tick: int,
) -> list[Transaction]:
    """Transfer every sealed record of the lost address to the new one and
    append the retirement marker. Only department full nodes may do this."""
    if department.kind != FULL or not department.is_department:
        raise ValueError("unauthorized recovery agent")
    txs = []
    for row in query_records(chain, old_address):
        if row.get("retired") or row["record_identification"] in ledger.ADMIN_KINDS:
            continue
        txs.append(
            transfer_tx(
                department,
                user_id,
                old_address,
                new_wallet.address,
                row["block_height"],
                row["tx_index"],
                tick,
            )
        )
    txs.append(retirement_tx(department, user_id, old_address, new_wallet.address, tick))
    return txs
