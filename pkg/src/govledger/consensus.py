"""Delegated-proof-of-stake machinery: stake tables, stake-weighted witness
election with depth-1 vote delegation, round scheduling, block production
and sealing, and misbehavior eviction.

Election weight is *received* vote weight: a delegate's own tokens count
only through a self-vote, so a small-stake delegate backed by a large
voter outranks a whale nobody votes for.
"""

import hashlib
import random
import struct
from dataclasses import dataclass, field
from fractions import Fraction

from . import crypto, ledger
from .ledger import Block, Chain, Transaction

# StakeTable: address -> token count. Tokens equal sealed records credited
# to the address plus its onboarding grant.
StakeTable = dict[bytes, int]


@dataclass(frozen=True)
class RoundConfig:
    t_c: int = 5
    finality_fraction: Fraction = Fraction(2, 3)
    panel_size: int = 3

    def __post_init__(self):
        if self.t_c < 1:
            raise ValueError("t_c must be at least 1 tick")
        if not Fraction(1, 2) < self.finality_fraction <= 1:
            raise ValueError("finality_fraction must be in (1/2, 1]")
        if self.panel_size < 1:
            raise ValueError("panel_size must be positive")


@dataclass(frozen=True)
class Vote:
    voter: bytes
    target_delegate: bytes
    weight: int  # voter's stake at the round snapshot


@dataclass(frozen=True)
class Delegation:
    grantor: bytes
    proxy: bytes


@dataclass(frozen=True)
class WitnessPanel:
    round: int
    ranked_delegates: tuple[bytes, ...]  # top-k, by received weight
    active_witness: bytes
    backup_order: tuple[bytes, ...]
    weights: dict[bytes, int] = field(default_factory=dict, compare=False)


@dataclass(frozen=True)
class MisbehaviorEvidence:
    kind: str  # invalid-proposal | missed-slot | self-transaction | double-proposal
    round: int
    detail: str = ""


EVIDENCE_KINDS = frozenset(
    {"invalid-proposal", "missed-slot", "self-transaction", "double-proposal"}
)


@dataclass
class PendingVotes:
    voters: list[bytes]
    evicted_round: int


@dataclass
class ConsensusState:
    """Delegate membership and the standing vote graph."""

    delegates: set[bytes] = field(default_factory=set)
    evicted: set[bytes] = field(default_factory=set)
    vote_edges: dict[bytes, bytes] = field(default_factory=dict)  # voter -> delegate
    delegations: dict[bytes, bytes] = field(default_factory=dict)  # grantor -> proxy
    pending_votes: list[PendingVotes] = field(default_factory=list)
    known_members: set[bytes] = field(default_factory=set)  # onboarded addresses


def register_delegate(node: bytes, state: ConsensusState) -> set[bytes]:
    """Add an onboarded node to the delegate set; idempotent. Evicted nodes
    stay out until a re-admission policy clears them (none does, in-run)."""
    if node not in state.known_members:
        raise ValueError("unknown address: node has not completed onboarding")
    if node in state.evicted:
        raise ValueError("evicted delegate may not re-register")
    state.delegates.add(node)
    return set(state.delegates)


def register_delegation(state: ConsensusState, grantor: bytes, proxy: bytes) -> None:
    """Record grantor's standing delegation to proxy; depth-1 only."""
    if grantor == proxy:
        raise ValueError("self-delegation rejected")
    if proxy in state.delegations:
        raise ValueError("delegation chain deeper than 1 rejected")
    if any(p == grantor for p in state.delegations.values()):
        raise ValueError("delegation chain deeper than 1 rejected")
    if grantor in state.vote_edges:
        raise ValueError("voter cannot also delegate")
    state.delegations[grantor] = proxy


def elect_witness_panel(
    votes: list[Vote],
    delegations: list[Delegation],
    stakes: StakeTable,
    k: int,
    round_seed: int,
    round_index: int = 0,
) -> WitnessPanel:
    """Rank vote targets by total received stake weight and pick the round's
    witness seeded-uniformly from the top-k panel.

    Delegated weight is added to the proxy's own vote target, resolved at
    depth 1. Ties in ranking break by lexicographic address order.
    """
    voters = {v.voter for v in votes}
    grantors = set()
    for d in delegations:
        if d.grantor == d.proxy:
            raise ValueError("self-delegation")
        if d.grantor in voters:
            raise ValueError("a voter has at most one active vote or delegation")
        if d.grantor in grantors:
            raise ValueError("a voter has at most one active vote or delegation")
        grantors.add(d.grantor)
    proxies = {d.proxy for d in delegations}
    if proxies & grantors:
        raise ValueError("delegation chain deeper than 1")

    delegated = {}
    for d in delegations:
        delegated[d.proxy] = delegated.get(d.proxy, 0) + stakes.get(d.grantor, 0)

    received: dict[bytes, int] = {}
    for v in votes:
        weight = v.weight + delegated.get(v.voter, 0)
        received[v.target_delegate] = received.get(v.target_delegate, 0) + weight

    if not received or all(w <= 0 for w in received.values()):
        raise ValueError("no quorum: no registered delegate received any weight")

    ranking = sorted(received.items(), key=lambda item: (-item[1], item[0].hex()))
    panel = tuple(addr for addr, _ in ranking[: max(1, k)])
    rng = random.Random(round_seed)
    active = panel[rng.randrange(len(panel))]
    backups = tuple(addr for addr in panel if addr != active)
    return WitnessPanel(
        round=round_index,
        ranked_delegates=panel,
        active_witness=active,
        backup_order=backups,
        weights=dict(received),
    )


def derive_round_seed(seed: int, round_index: int) -> int:
    """Per-round witness-draw seed, stable across runs of the same scenario."""
    material = b"govledger-round" + struct.pack(">qQ", seed, round_index)
    return int.from_bytes(hashlib.sha256(material).digest()[:8], "big")


def build_stake_table(grants: dict[bytes, int], chain: Chain) -> StakeTable:
    """Snapshot stakes: onboarding grants plus one token per sealed record
    credited along the canonical chain."""
    stakes = dict(grants)
    for block in chain.blocks:
        for tx in block.transactions:
            for addr in ledger.record_credits(tx):
                stakes[addr] = stakes.get(addr, 0) + 1
    return stakes


def produce_block(
    witness: bytes,
    mempool: list[Transaction],
    parent: Block,
    panel: WitnessPanel,
    tick_now: int,
    keypair: crypto.KeyPair,
) -> Block:
    """Assemble and sign the round's block proposal.

    Transactions authored by the witness are excluded; the rest are ordered
    by (submitted_at, canonical bytes) so identical mempools yield
    byte-identical proposals.
    """
    if witness != panel.active_witness:
        raise ValueError("not the active witness")
    if crypto.derive_address(keypair.public_key) != witness:
        raise ValueError("signing key does not match witness address")
    txs = sorted(
        (tx for tx in mempool if tx.submitter_address != witness),
        key=ledger.tx_sort_key,
    )
    header = ledger.BlockHeader(
        version=ledger.BLOCK_VERSION,
        prev_hash=ledger.block_hash(parent.header),
        merkle_root=ledger.compute_merkle_root(txs),
        timestamp=tick_now,
    )
    signature = crypto.sign(keypair, ledger.block_hash(header))
    return Block(
        header=header,
        transactions=tuple(txs),
        witness_address=witness,
        witness_signature=signature,
        endorsements=(),
    )


def endorse_block(
    endorser: bytes,
    keypair: crypto.KeyPair,
    proposal: Block,
    parent: Block,
    pubkeys: dict[bytes, bytes],
) -> tuple[bytes | None, str]:
    """Validate a proposal's stateless rules and sign its header hash.

    Returns (signature, "") on success or (None, reason) as a rejection
    value. A witness endorsing its own block is an error, not a rejection.
    """
    if endorser == proposal.witness_address:
        raise ValueError("self-endorsement")
    if proposal.header.prev_hash != ledger.block_hash(parent.header):
        return None, "prev-hash mismatch"
    if proposal.header.merkle_root != ledger.compute_merkle_root(proposal.transactions):
        return None, "merkle mismatch"
    head_hash = ledger.block_hash(proposal.header)
    witness_pub = pubkeys.get(proposal.witness_address)
    if witness_pub is None:
        return None, "unknown witness"
    if not crypto.verify(witness_pub, head_hash, proposal.witness_signature):
        return None, "witness signature invalid"
    for tx in proposal.transactions:
        if tx.submitter_address == proposal.witness_address:
            return None, "witness self-transaction"
    verdict = ledger._verify_transactions(proposal, pubkeys)
    if not verdict:
        return None, verdict.reason
    return crypto.sign(keypair, head_hash), ""


def finalize_block(
    proposal: Block,
    endorsements: list[tuple[bytes, bytes]],
    stakes: StakeTable,
    round_config: RoundConfig,
) -> Block | None:
    """Seal the proposal iff distinct endorsers' stake reaches the finality
    fraction of total non-witness stake; None means still pending."""
    distinct: dict[bytes, bytes] = {}
    for addr, sig in endorsements:
        if addr == proposal.witness_address:
            continue
        distinct.setdefault(addr, sig)
    weight = sum(stakes.get(addr, 0) for addr in distinct)
    eligible_total = sum(
        stake for addr, stake in stakes.items() if addr != proposal.witness_address
    )
    if not ledger.meets_threshold(weight, eligible_total, round_config.finality_fraction):
        return None
    sealed = tuple(sorted(distinct.items(), key=lambda item: item[0].hex()))
    return Block(
        header=proposal.header,
        transactions=proposal.transactions,
        witness_address=proposal.witness_address,
        witness_signature=proposal.witness_signature,
        endorsements=sealed,
    )


def handle_misbehavior(
    delegate: bytes, evidence: MisbehaviorEvidence, state: ConsensusState
) -> ConsensusState:
    """Evict a misbehaving delegate and park its received votes for
    reassignment. Missed-slot promotion is the caller's round machinery;
    this handles membership and vote bookkeeping."""
    if evidence.kind not in EVIDENCE_KINDS:
        raise ValueError(f"unknown evidence kind: {evidence.kind}")
    if delegate not in state.delegates:
        raise ValueError("unknown delegate")
    state.delegates.discard(delegate)
    state.evicted.add(delegate)

    orphaned = [voter for voter, target in state.vote_edges.items() if target == delegate]
    for voter in orphaned:
        del state.vote_edges[voter]
    # grantors whose proxy was evicted lose their conduit; park them too
    dangling = [g for g, p in state.delegations.items() if p == delegate]
    for grantor in dangling:
        del state.delegations[grantor]
    parked = orphaned + dangling
    if parked:
        state.pending_votes.append(PendingVotes(voters=parked, evicted_round=evidence.round))
    state.vote_edges.pop(delegate, None)
    state.delegations.pop(delegate, None)
    return state


def adopt_pending_votes(state: ConsensusState, new_delegate: bytes) -> None:
    """A node that just completed delegate onboarding inherits parked votes."""
    for entry in state.pending_votes:
        for voter in entry.voters:
            if voter not in state.vote_edges and voter not in state.delegations:
                state.vote_edges[voter] = new_delegate
    state.pending_votes.clear()


def reassign_stale_pending(
    state: ConsensusState, round_index: int, prev_ranking: tuple[bytes, ...]
) -> None:
    """Pending votes older than one round go to the highest-ranked survivor."""
    survivor = next((a for a in prev_ranking if a in state.delegates), None)
    keep = []
    for entry in state.pending_votes:
        if entry.evicted_round < round_index and survivor is not None:
            for voter in entry.voters:
                if voter not in state.vote_edges and voter not in state.delegations:
                    state.vote_edges[voter] = survivor
        else:
            keep.append(entry)
    state.pending_votes = keep
