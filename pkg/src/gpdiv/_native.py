"""Compiled kernels for tree hashing and pairwise merge-count distances.

These are the per-generation hot paths: hashing is a single left-to-right
pass over the postorder arrays (with in-place child-subarray reordering for
commutative nodes, staged through one auxiliary buffer), and the matrix fill
is a two-pointer merge per pair.  All arithmetic is 64-bit unsigned with
wraparound, so results are identical to the pure-Python reference
(`hashing.djb_hash` over `hashing.node_label_bytes`) bit for bit.
"""

from __future__ import annotations

import numpy as np
from numba import njit

# NodeKind codes, mirrored here because numba cannot use the IntEnum cheaply.
KIND_ADD = 0
KIND_MUL = 2
KIND_CONSTANT = 8
KIND_VARIABLE = 9

U0 = np.uint64(0)
U8 = np.uint64(8)
U33 = np.uint64(33)
U255 = np.uint64(0xFF)
DJB_SEED = np.uint64(5381)


@njit(cache=True)
def _mix_byte(h, b):
    return h * U33 + (b & U255)


@njit(cache=True)
def _mix_u64(h, value):
    # fold a 64-bit value in as 8 little-endian bytes
    sh = U0
    for _ in range(8):
        h = h * U33 + ((value >> sh) & U255)
        sh += U8
    return h


@njit(cache=True)
def _arity(kind):
    if kind <= 3:
        return 2
    if kind <= 7:
        return 1
    return 0


@njit(cache=True)
def _class_rank(kind):
    # precedence for commutative child ordering:
    # internal nodes first, then constants, then variables
    if kind <= 7:
        return 0
    if kind == KIND_CONSTANT:
        return 1
    return 2


@njit(cache=True)
def hash_tree_kernel(kinds, sizes, values, indexes, hybrid, sort_children):
    """Hash a postorder tree; returns (hashes, kinds, sizes, values, indexes).

    The returned arrays are the reordered working copies, so position k of
    the hash array corresponds to node k of the returned (canonized) tree.
    """
    n = kinds.shape[0]
    k = kinds.copy()
    sz = sizes.copy()
    v = values.copy()
    ix = indexes.copy()
    h = np.zeros(n, np.uint64)

    aux_k = np.empty(n, kinds.dtype)
    aux_sz = np.empty(n, sizes.dtype)
    aux_v = np.empty(n, values.dtype)
    aux_ix = np.empty(n, indexes.dtype)
    aux_h = np.empty(n, np.uint64)

    fbuf = np.empty(1, np.float64)
    ubuf = fbuf.view(np.uint64)

    for i in range(n):
        kind = k[i]
        # initial hash: djb over the node label bytes
        hh = DJB_SEED
        hh = _mix_byte(hh, np.uint64(kind))
        if kind == KIND_VARIABLE:
            idx = ix[i]
            hh = _mix_byte(hh, np.uint64(idx))
            hh = _mix_byte(hh, np.uint64(idx >> 8))
        if hybrid and kind >= KIND_CONSTANT:
            fbuf[0] = v[i]
            hh = _mix_u64(hh, ubuf[0])

        ar = _arity(kind)
        if ar == 2:
            cr = i - 1
            cl = cr - sz[cr]
            commutative = kind == KIND_ADD or kind == KIND_MUL
            if sort_children and commutative:
                rl = _class_rank(k[cl])
                rr = _class_rank(k[cr])
                if rr < rl or (rr == rl and h[cr] < h[cl]):
                    # stable swap of the two child subarrays via the buffer
                    a = i - sz[i] + 1
                    nl = sz[cl]
                    nr = sz[cr]
                    for t in range(nr):
                        aux_k[t] = k[cl + 1 + t]
                        aux_sz[t] = sz[cl + 1 + t]
                        aux_v[t] = v[cl + 1 + t]
                        aux_ix[t] = ix[cl + 1 + t]
                        aux_h[t] = h[cl + 1 + t]
                    for t in range(nl):
                        aux_k[nr + t] = k[a + t]
                        aux_sz[nr + t] = sz[a + t]
                        aux_v[nr + t] = v[a + t]
                        aux_ix[nr + t] = ix[a + t]
                        aux_h[nr + t] = h[a + t]
                    for t in range(nl + nr):
                        k[a + t] = aux_k[t]
                        sz[a + t] = aux_sz[t]
                        v[a + t] = aux_v[t]
                        ix[a + t] = aux_ix[t]
                        h[a + t] = aux_h[t]
                    cr = i - 1
                    cl = cr - sz[cr]
            agg = DJB_SEED
            agg = _mix_u64(agg, h[cl])
            agg = _mix_u64(agg, h[cr])
            agg = _mix_u64(agg, hh)
            hh = agg
        elif ar == 1:
            agg = DJB_SEED
            agg = _mix_u64(agg, h[i - 1])
            agg = _mix_u64(agg, hh)
            hh = agg
        h[i] = hh
    return h, k, sz, v, ix


@njit(cache=True)
def merge_count_kernel(h1, h2):
    """Multiset-intersection size of two sorted arrays; returns (count, steps)."""
    n1 = h1.shape[0]
    n2 = h2.shape[0]
    i = 0
    j = 0
    count = 0
    steps = 0
    while i < n1 and j < n2:
        steps += 1
        a = h1[i]
        b = h2[j]
        if a == b:
            count += 1
            i += 1
            j += 1
        elif a < b:
            i += 1
        else:
            j += 1
    return count, steps


@njit(cache=True)
def pairwise_distance_kernel(flat, offsets, lengths, out):
    """Fill the packed lower triangle of the population distance matrix.

    ``flat`` concatenates the sorted hash sequences of all trees; entry
    (i, j), i > j, lands at position i*(i-1)/2 + j of ``out``.
    """
    n = lengths.shape[0]
    pos = 0
    for i in range(1, n):
        oi = offsets[i]
        li = lengths[i]
        for j in range(i):
            oj = offsets[j]
            lj = lengths[j]
            p = 0
            q = 0
            count = 0
            while p < li and q < lj:
                a = flat[oi + p]
                b = flat[oj + q]
                if a == b:
                    count += 1
                    p += 1
                    q += 1
                elif a < b:
                    p += 1
                else:
                    q += 1
            out[pos] = 1.0 - 2.0 * count / (li + lj)
            pos += 1
    return out


def warm_up() -> None:
    """Force compilation of the kernels (used by benchmarks before timing)."""
    kinds = np.array([9, 8, 0], dtype=np.int8)
    sizes = np.array([1, 1, 3], dtype=np.int32)
    values = np.array([1.0, 2.0, 0.0])
    indexes = np.array([0, -1, -1], dtype=np.int32)
    for hybrid in (False, True):
        h, *_ = hash_tree_kernel(kinds, sizes, values, indexes, hybrid, True)
    seq = np.sort(h)
    merge_count_kernel(seq, seq)
    pairwise_distance_kernel(
        np.concatenate([seq, seq]),
        np.array([0, 3], dtype=np.int64),
        np.array([3, 3], dtype=np.int64),
        np.empty(1),
    )
