"""Merkle tree over canonical transaction bytes, with inclusion proofs.

Leaf = hash256(tx bytes), parent = hash256(left || right). A level with an
odd entry count duplicates its last digest, at every level, so the tree
always pairs cleanly. An empty transaction list gets the sentinel root
hash256(b"") so empty blocks stay well-defined.
"""

from dataclasses import dataclass

from .crypto import DIGEST_LEN, hash256

EMPTY_ROOT = hash256(b"")


@dataclass(frozen=True)
class InclusionProof:
    """Sibling path from a leaf to the root.

    Each entry is (digest, side) where side is "left" or "right": the side
    the sibling sits on when the pair is hashed.
    """

    leaf_index: int
    siblings: tuple[tuple[bytes, str], ...]


class MerkleTree:
    """All levels of the tree; levels[0] are leaf hashes, levels[-1] the root."""

    def __init__(self, leaf_hashes: list[bytes]):
        if not leaf_hashes:
            raise ValueError("merkle tree needs at least one leaf")
        levels = [list(leaf_hashes)]
        while len(levels[-1]) > 1:
            current = list(levels[-1])
            if len(current) % 2 == 1:
                current.append(current[-1])
            levels.append(
                [hash256(current[i] + current[i + 1]) for i in range(0, len(current), 2)]
            )
        self.levels = levels

    @property
    def root(self) -> bytes:
        return self.levels[-1][0]


def merkle_root(transactions: list[bytes]) -> bytes:
    """Root digest summarizing an ordered list of canonical transaction bytes."""
    if not transactions:
        return EMPTY_ROOT
    return MerkleTree([hash256(tx) for tx in transactions]).root


def build_proof(transactions: list[bytes], leaf_index: int) -> InclusionProof:
    """Inclusion proof for the transaction at leaf_index."""
    if not 0 <= leaf_index < len(transactions):
        raise IndexError(f"leaf index {leaf_index} out of range")
    tree = MerkleTree([hash256(tx) for tx in transactions])
    siblings = []
    index = leaf_index
    for level in tree.levels[:-1]:
        padded = list(level)
        if len(padded) % 2 == 1:
            padded.append(padded[-1])
        if index % 2 == 0:
            siblings.append((padded[index + 1], "right"))
        else:
            siblings.append((padded[index - 1], "left"))
        index //= 2
    return InclusionProof(leaf_index=leaf_index, siblings=tuple(siblings))


def verify_proof(root: bytes, leaf_hash: bytes, proof: InclusionProof) -> bool:
    """True iff folding leaf_hash through the proof's siblings reproduces root."""
    if len(root) != DIGEST_LEN or len(leaf_hash) != DIGEST_LEN:
        return False
    acc = leaf_hash
    for sibling, side in proof.siblings:
        if len(sibling) != DIGEST_LEN or side not in ("left", "right"):
            return False
        acc = hash256(sibling + acc) if side == "left" else hash256(acc + sibling)
    return acc == root
