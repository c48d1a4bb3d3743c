"""Merkle provenance chain over token bytes.

Leaves are ``H("poh/leaf" || token_bytes)``; interior nodes are
``H("poh/node" || left || right)``. A level with an odd node count promotes
its last node unchanged to the next level.
"""

from __future__ import annotations

from dataclasses import dataclass

from .encoding import HASH_LEN, dhash
from .errors import DecodeError, IndexOutOfRange

LEAF_LABEL = b"poh/leaf"
NODE_LABEL = b"poh/node"
EMPTY_ROOT = dhash(b"poh/empty")

LEFT = 0  # sibling sits to the left of the running hash
RIGHT = 1


def leaf_hash(token_bytes: bytes) -> bytes:
    return dhash(LEAF_LABEL, token_bytes)


def node_hash(left: bytes, right: bytes) -> bytes:
    return dhash(NODE_LABEL, left, right)


def merkle_root(leaves: list[bytes] | tuple[bytes, ...]) -> bytes:
    if not leaves:
        return EMPTY_ROOT
    level = list(leaves)
    while len(level) > 1:
        nxt = [node_hash(level[i], level[i + 1]) for i in range(0, len(level) - 1, 2)]
        if len(level) % 2:
            nxt.append(level[-1])
        level = nxt
    return level[0]


@dataclass(frozen=True)
class InclusionProof:
    """Bottom-up list of (side, sibling hash) steps."""

    steps: tuple[tuple[int, bytes], ...]

    def to_bytes(self) -> bytes:
        return b"".join(bytes([side]) + sib for side, sib in self.steps)

    @classmethod
    def from_bytes(cls, data: bytes) -> "InclusionProof":
        width = 1 + HASH_LEN
        if len(data) % width:
            raise DecodeError("proof length is not a whole number of steps")
        steps = []
        for off in range(0, len(data), width):
            side = data[off]
            if side not in (LEFT, RIGHT):
                raise DecodeError(f"bad side marker {side}")
            steps.append((side, bytes(data[off + 1 : off + width])))
        return cls(tuple(steps))


@dataclass(frozen=True)
class ProvenanceChain:
    leaves: tuple[bytes, ...] = ()
    root: bytes = EMPTY_ROOT

    def __len__(self) -> int:
        return len(self.leaves)


def chain_append(chain: ProvenanceChain, token_bytes: bytes) -> ProvenanceChain:
    leaves = chain.leaves + (leaf_hash(token_bytes),)
    return ProvenanceChain(leaves, merkle_root(leaves))


def chain_prove(chain: ProvenanceChain, index: int) -> InclusionProof:
    if not 0 <= index < len(chain.leaves):
        raise IndexOutOfRange(f"index {index} not in [0, {len(chain.leaves)})")
    steps: list[tuple[int, bytes]] = []
    level = list(chain.leaves)
    i = index
    while len(level) > 1:
        if i % 2 == 1:
            steps.append((LEFT, level[i - 1]))
        elif i + 1 < len(level):
            steps.append((RIGHT, level[i + 1]))
        # else: promoted without a sibling
        nxt = [node_hash(level[j], level[j + 1]) for j in range(0, len(level) - 1, 2)]
        if len(level) % 2:
            nxt.append(level[-1])
        level = nxt
        i //= 2
    return InclusionProof(tuple(steps))


def chain_verify(root: bytes, leaf: bytes, proof: InclusionProof | bytes) -> bool:
    """``leaf`` is the leaf hash as stored in the chain."""
    if isinstance(proof, (bytes, bytearray)):
        try:
            proof = InclusionProof.from_bytes(bytes(proof))
        except DecodeError:
            return False
    acc = leaf
    for side, sib in proof.steps:
        if side not in (LEFT, RIGHT) or len(sib) != HASH_LEN:
            return False
        acc = node_hash(sib, acc) if side == LEFT else node_hash(acc, sib)
    return acc == root
