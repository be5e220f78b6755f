"""Tree hashing: postorder arrays of 64-bit node hashes.

Every node gets an initial hash computed from its label bytes; internal
node hashes then aggregate the (possibly reordered) child hashes, so equal
subtrees -- up to argument order of commutative operations -- produce equal
hash values.  Two modes exist:

* structural: labels only, so any two constants (or any two weights of the
  same variable) hash alike;
* hybrid: the numeric coefficient of each leaf is folded into the label, as
  its exact 64-bit IEEE bit pattern (note: -0.0 and 0.0 hash differently).

Commutative children are ordered internal-before-leaf, constant-before-
variable, then by ascending hash value; equal keys keep their original
order.  The reordering physically swaps the child subarrays through one
auxiliary buffer, so the output sequence is aligned with the canonized
postorder array.
"""

from __future__ import annotations

import enum
import struct
from dataclasses import dataclass

import numpy as np

from . import _native
from .tree import ExpressionTree, Node, NodeKind, arity

_MASK64 = 0xFFFFFFFFFFFFFFFF


class HashMode(enum.Enum):
    STRUCTURAL = "structural"
    HYBRID = "hybrid"


@dataclass(frozen=True)
class HashSequence:
    """Array of 64-bit node hash values for one tree."""

    values: np.ndarray
    sorted: bool = False

    def __post_init__(self) -> None:
        if self.values.dtype != np.uint64:
            raise ValueError("hash values must be uint64")
        self.values.flags.writeable = False

    def __len__(self) -> int:
        return len(self.values)


def djb_hash(data) -> int:
    """DJB hash over a byte sequence: h = 5381, then h <- h*33 + b (mod 2^64)."""
    h = 5381
    for b in data:
        h = (h * 33 + b) & _MASK64
    return h


def node_label_bytes(node: Node, mode: HashMode) -> bytes:
    """Byte label fed to the initial node hash.

    Structural: the kind tag, plus the column index (2 bytes LE) for
    variables.  Hybrid: the structural bytes followed by the leaf
    coefficient's 64-bit IEEE bit pattern, little-endian.
    """
    out = bytes([int(node.kind)])
    if node.kind == NodeKind.VARIABLE:
        out += int(node.index).to_bytes(2, "little")
    if mode == HashMode.HYBRID and node.is_leaf:
        out += struct.pack("<d", node.value)
    return out


def _kernel_call(tree: ExpressionTree, mode: HashMode, sort_children: bool = True):
    return _native.hash_tree_kernel(
        tree.kinds,
        tree.sizes,
        tree.values,
        tree.indexes,
        mode == HashMode.HYBRID,
        sort_children,
    )


def hash_tree(tree: ExpressionTree, mode: HashMode) -> HashSequence:
    """Hash all nodes in one postorder pass; unsorted, postorder-aligned.

    Position k of the result is the hash of the node at postorder position
    k after commutative child reordering (see :func:`canonical_form`).
    """
    h, *_ = _kernel_call(tree, mode)
    return HashSequence(h, sorted=False)


def canonical_form(
    tree: ExpressionTree, mode: HashMode
) -> tuple[ExpressionTree, HashSequence]:
    """The child-reordered tree together with its aligned hash sequence."""
    h, kinds, sizes, values, indexes = _kernel_call(tree, mode)
    depths = np.empty(len(kinds), dtype=np.int16)
    # sizes are preserved by subarray swaps; depths are recomputed
    stack: list[int] = []
    from .tree import arity

    for i in range(len(kinds)):
        a = arity(kinds[i])
        if a == 0:
            depths[i] = 1
        else:
            cs = stack[len(stack) - a :]
            del stack[len(stack) - a :]
            depths[i] = 1 + max(int(depths[c]) for c in cs)
        stack.append(i)
    canon = ExpressionTree(kinds, sizes, depths, values, indexes)
    return canon, HashSequence(h, sorted=False)


def sorted_hash_sequence(tree: ExpressionTree, mode: HashMode) -> HashSequence:
    """Ascending hash sequence, the form consumed by the merge-count distance."""
    h, *_ = _kernel_call(tree, mode)
    h.sort()
    return HashSequence(h, sorted=True)
