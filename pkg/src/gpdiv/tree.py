"""Expression trees stored as flat postorder arrays.

A tree of n nodes is kept in five parallel numpy arrays indexed by postorder
position: node kind, subtree size, subtree depth, numeric coefficient
(constant value or variable weight) and variable column.  The root is the
last element.  An internal node at position i finds its rightmost child at
i - 1; each further child is reached by subtracting the previous child's
subtree size.  Because postorder subtrees are contiguous, every structural
operation (crossover, branch mutation) reduces to array slicing.

Trees are immutable after construction; all variation operators return new
trees and draw randomness only from the generator passed in.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np


class NodeKind(enum.IntEnum):
    """Node opcodes. Values are stable: they are hashed and serialized."""

    ADD = 0
    SUB = 1
    MUL = 2
    DIV = 3
    SIN = 4
    COS = 5
    EXP = 6
    LOG = 7
    CONSTANT = 8
    VARIABLE = 9


# arity, indexed by NodeKind value
ARITIES = np.array([2, 2, 2, 2, 1, 1, 1, 1, 0, 0], dtype=np.int8)

BINARY_KINDS = (NodeKind.ADD, NodeKind.SUB, NodeKind.MUL, NodeKind.DIV)
UNARY_KINDS = (NodeKind.SIN, NodeKind.COS, NodeKind.EXP, NodeKind.LOG)
FUNCTION_KINDS = BINARY_KINDS + UNARY_KINDS
LEAF_KINDS = (NodeKind.CONSTANT, NodeKind.VARIABLE)
COMMUTATIVE_KINDS = frozenset((NodeKind.ADD, NodeKind.MUL))

_SYMBOLS = {
    NodeKind.ADD: "+",
    NodeKind.SUB: "-",
    NodeKind.MUL: "*",
    NodeKind.DIV: "/",
    NodeKind.SIN: "sin",
    NodeKind.COS: "cos",
    NodeKind.EXP: "exp",
    NodeKind.LOG: "log",
}
_SYMBOL_TO_KIND = {v: k for k, v in _SYMBOLS.items()}


def arity(kind: int) -> int:
    return int(ARITIES[kind])


def is_commutative(kind: int) -> bool:
    return kind in COMMUTATIVE_KINDS


@dataclass(frozen=True)
class Node:
    """A single tree node viewed out of the flat representation.

    ``value`` holds the constant value or the variable weight; ``index`` is
    the dataset column for variables and -1 otherwise.
    """

    kind: NodeKind
    value: float = 0.0
    index: int = -1
    size: int = 1
    depth: int = 1

    @property
    def arity(self) -> int:
        return arity(self.kind)

    @property
    def is_leaf(self) -> bool:
        return self.arity == 0


@dataclass(frozen=True)
class TreeLimits:
    """Joint length/depth bounds for created and varied trees."""

    max_length: int = 50
    max_depth: int = 12

    def __post_init__(self) -> None:
        if self.max_length < 1 or self.max_depth < 1:
            raise ValueError(
                f"limits must be >= 1, got length {self.max_length}, depth {self.max_depth}"
            )


@dataclass(frozen=True)
class LeafInit:
    """Sampling rules for fresh leaf coefficients.

    Constants are uniform over ``const_range``; variable weights are normal
    with ``weight_mean``/``weight_std``.  Defaults give non-degenerate hybrid
    hashes from the first generation.
    """

    const_low: float = -20.0
    const_high: float = 20.0
    weight_mean: float = 1.0
    weight_std: float = 1.0


DEFAULT_LEAF_INIT = LeafInit()


class ExpressionTree:
    """Immutable symbolic-regression model in postorder-array form."""

    __slots__ = ("kinds", "sizes", "depths", "values", "indexes")

    def __init__(self, kinds, sizes, depths, values, indexes):
        self.kinds = kinds
        self.sizes = sizes
        self.depths = depths
        self.values = values
        self.indexes = indexes
        for a in (kinds, sizes, depths, values, indexes):
            a.flags.writeable = False

    @classmethod
    def from_postorder(cls, kinds, values=None, indexes=None) -> "ExpressionTree":
        """Build a tree from postorder kind codes, recomputing size/depth.

        Raises ValueError if the kind sequence does not describe exactly one
        well-formed tree (stack underflow or leftover roots).
        """
        kinds = np.array(kinds, dtype=np.int8)
        n = len(kinds)
        if n == 0:
            raise ValueError("a tree has at least one node")
        values = (
            np.zeros(n) if values is None else np.array(values, dtype=np.float64)
        )
        indexes = (
            np.full(n, -1, dtype=np.int32)
            if indexes is None
            else np.array(indexes, dtype=np.int32)
        )
        if len(values) != n or len(indexes) != n:
            raise ValueError("parallel arrays must have equal length")
        sizes = np.empty(n, dtype=np.int32)
        depths = np.empty(n, dtype=np.int16)
        stack: list[int] = []  # positions of currently open subtree roots
        for i in range(n):
            a = arity(kinds[i])
            if a > len(stack):
                raise ValueError(f"malformed postorder: node {i} lacks operands")
            if a == 0:
                sizes[i] = 1
                depths[i] = 1
            else:
                children = stack[len(stack) - a :]
                del stack[len(stack) - a :]
                sizes[i] = 1 + sum(int(sizes[c]) for c in children)
                depths[i] = 1 + max(int(depths[c]) for c in children)
            if kinds[i] == NodeKind.VARIABLE and indexes[i] < 0:
                raise ValueError(f"variable node {i} has no column index")
            stack.append(i)
        if len(stack) != 1:
            raise ValueError("malformed postorder: sequence encodes a forest")
        return cls(kinds, sizes, depths, values, indexes)

    def __len__(self) -> int:
        return len(self.kinds)

    @property
    def length(self) -> int:
        return len(self.kinds)

    @property
    def depth(self) -> int:
        return int(self.depths[-1])

    def node(self, i: int) -> Node:
        return Node(
            kind=NodeKind(int(self.kinds[i])),
            value=float(self.values[i]),
            index=int(self.indexes[i]),
            size=int(self.sizes[i]),
            depth=int(self.depths[i]),
        )

    @property
    def nodes(self) -> list[Node]:
        return [self.node(i) for i in range(len(self))]

    @property
    def root(self) -> Node:
        return self.node(len(self) - 1)

    def child_positions(self, i: int) -> list[int]:
        """Positions of node i's children, left to right."""
        out = []
        c = i - 1
        for _ in range(arity(self.kinds[i])):
            out.append(c)
            c -= int(self.sizes[c])
        out.reverse()
        return out

    def subtree(self, i: int) -> "ExpressionTree":
        """The subtree rooted at postorder position i (a contiguous slice)."""
        a = i - int(self.sizes[i]) + 1
        return ExpressionTree(
            self.kinds[a : i + 1].copy(),
            self.sizes[a : i + 1].copy(),
            self.depths[a : i + 1].copy(),
            self.values[a : i + 1].copy(),
            self.indexes[a : i + 1].copy(),
        )

    def levels(self) -> np.ndarray:
        """Distance of each node from the root, root at level 1."""
        lv = np.empty(len(self), dtype=np.int16)
        lv[-1] = 1
        for i in range(len(self) - 1, -1, -1):
            c = i - 1
            for _ in range(arity(self.kinds[i])):
                lv[c] = lv[i] + 1
                c -= int(self.sizes[c])
        return lv

    def __eq__(self, other) -> bool:
        if not isinstance(other, ExpressionTree):
            return NotImplemented
        return (
            np.array_equal(self.kinds, other.kinds)
            and np.array_equal(self.values, other.values)
            and np.array_equal(self.indexes, other.indexes)
        )

    def __repr__(self) -> str:
        return f"ExpressionTree({self.to_prefix()})"

    def to_prefix(self) -> str:
        """Serialize to prefix notation, e.g. ``(+ (var x1 0.5) 3.0)``."""

        def emit(i: int) -> str:
            kind = int(self.kinds[i])
            if kind == NodeKind.CONSTANT:
                return repr(float(self.values[i]))
            if kind == NodeKind.VARIABLE:
                return f"(var x{int(self.indexes[i]) + 1} {float(self.values[i])!r})"
            parts = " ".join(emit(c) for c in self.child_positions(i))
            return f"({_SYMBOLS[NodeKind(kind)]} {parts})"

        return emit(len(self) - 1)

    @classmethod
    def from_prefix(cls, text: str) -> "ExpressionTree":
        """Parse the prefix notation produced by :meth:`to_prefix`."""
        tokens = text.replace("(", " ( ").replace(")", " ) ").split()
        pos = 0

        kinds: list[int] = []
        values: list[float] = []
        indexes: list[int] = []

        def emit(kind: int, value: float = 0.0, index: int = -1) -> None:
            kinds.append(kind)
            values.append(value)
            indexes.append(index)

        def parse() -> None:
            nonlocal pos
            tok = tokens[pos]
            if tok != "(":
                pos += 1
                emit(NodeKind.CONSTANT, float(tok))
                return
            pos += 1  # consume "("
            head = tokens[pos]
            pos += 1
            if head == "var":
                name, weight = tokens[pos], tokens[pos + 1]
                pos += 2
                if not name.startswith("x"):
                    raise ValueError(f"bad variable name {name!r}")
                emit(NodeKind.VARIABLE, float(weight), int(name[1:]) - 1)
            else:
                kind = _SYMBOL_TO_KIND.get(head)
                if kind is None:
                    raise ValueError(f"unknown operator {head!r}")
                for _ in range(arity(kind)):
                    parse()
                emit(int(kind))
            if tokens[pos] != ")":
                raise ValueError("expected ')'")
            pos += 1

        parse()
        if pos != len(tokens):
            raise ValueError("trailing tokens in prefix expression")
        return cls.from_postorder(kinds, values, indexes)


def constant(value: float) -> ExpressionTree:
    return ExpressionTree.from_postorder([NodeKind.CONSTANT], [value], [-1])


def variable(index: int, weight: float = 1.0) -> ExpressionTree:
    return ExpressionTree.from_postorder([NodeKind.VARIABLE], [weight], [index])


def compose(kind: NodeKind, *children: ExpressionTree) -> ExpressionTree:
    """Join child trees under a new root node."""
    if len(children) != arity(kind):
        raise ValueError(f"{kind.name} takes {arity(kind)} children")
    kinds = np.concatenate([c.kinds for c in children] + [np.array([kind], np.int8)])
    values = np.concatenate([c.values for c in children] + [np.zeros(1)])
    indexes = np.concatenate(
        [c.indexes for c in children] + [np.full(1, -1, np.int32)]
    )
    return ExpressionTree.from_postorder(kinds, values, indexes)


def evaluate(tree: ExpressionTree, X: np.ndarray, rows=None) -> np.ndarray:
    """Evaluate a tree over dataset rows with a postorder operand stack.

    ``X`` is a (rows, columns) matrix.  Division and log are unprotected:
    non-finite intermediates propagate into the output and are dealt with by
    the fitness functions.
    """
    X = np.asarray(X, dtype=np.float64)
    if X.ndim == 1:
        X = X.reshape(1, -1)
    if rows is not None:
        X = X[rows]
    n_cols = X.shape[1]
    if len(tree) and tree.indexes.max(initial=-1) >= n_cols:
        raise ValueError(
            f"tree uses column {int(tree.indexes.max())} but dataset has {n_cols}"
        )
    stack: list[np.ndarray] = []
    with np.errstate(all="ignore"):
        for i in range(len(tree)):
            kind = int(tree.kinds[i])
            if kind == NodeKind.CONSTANT:
                stack.append(np.full(X.shape[0], tree.values[i]))
            elif kind == NodeKind.VARIABLE:
                stack.append(tree.values[i] * X[:, int(tree.indexes[i])])
            elif kind == NodeKind.ADD:
                b = stack.pop()
                stack[-1] = stack[-1] + b
            elif kind == NodeKind.SUB:
                b = stack.pop()
                stack[-1] = stack[-1] - b
            elif kind == NodeKind.MUL:
                b = stack.pop()
                stack[-1] = stack[-1] * b
            elif kind == NodeKind.DIV:
                b = stack.pop()
                stack[-1] = stack[-1] / b
            elif kind == NodeKind.SIN:
                stack[-1] = np.sin(stack[-1])
            elif kind == NodeKind.COS:
                stack[-1] = np.cos(stack[-1])
            elif kind == NodeKind.EXP:
                stack[-1] = np.exp(stack[-1])
            else:
                stack[-1] = np.log(stack[-1])
    return stack[-1]


def _random_leaf(rng, n_columns: int, leaf_init: LeafInit, allowed) -> tuple:
    """Draw (kind, value, index) for a fresh leaf."""
    kinds = [k for k in LEAF_KINDS if k in allowed]
    if not kinds:
        raise ValueError("primitive set contains no leaf kinds")
    kind = kinds[rng.integers(len(kinds))] if len(kinds) > 1 else kinds[0]
    if kind == NodeKind.CONSTANT:
        return NodeKind.CONSTANT, float(
            rng.uniform(leaf_init.const_low, leaf_init.const_high)
        ), -1
    index = int(rng.integers(n_columns))
    weight = float(rng.normal(leaf_init.weight_mean, leaf_init.weight_std))
    return NodeKind.VARIABLE, weight, index


def create_tree_ptc2(
    rng: np.random.Generator,
    limits: TreeLimits,
    n_columns: int,
    primitives=None,
    leaf_init: LeafInit = DEFAULT_LEAF_INIT,
    target_length: int | None = None,
) -> ExpressionTree:
    """Probabilistic tree creation under joint length/depth limits (PTC2).

    A target length is drawn uniformly from [1, max_length] unless given.
    Starting from a root function, open argument slots are filled in random
    order; slots at the depth limit, or whose expansion would exceed the
    length limit, receive terminals.  The result always satisfies both
    limits and is fully determined by the generator state.
    """
    if n_columns < 1:
        raise ValueError("need at least one dataset column")
    allowed = frozenset(primitives) if primitives is not None else frozenset(NodeKind)
    functions = [k for k in FUNCTION_KINDS if k in allowed]
    max_len, max_dep = limits.max_length, limits.max_depth

    if target_length is None:
        target = int(rng.integers(1, max_len + 1))
    else:
        target = min(int(target_length), max_len)

    kinds: list[int] = []
    values: list[float] = []
    indexes: list[int] = []

    def put_leaf() -> int:
        kind, value, index = _random_leaf(rng, n_columns, leaf_init, allowed)
        kinds.append(int(kind))
        values.append(value)
        indexes.append(index)
        return len(kinds) - 1

    def put_function(kind: NodeKind) -> int:
        kinds.append(int(kind))
        values.append(0.0)
        indexes.append(-1)
        return len(kinds) - 1

    # Nodes are created into a scratch structure first: children lists get
    # filled out of order, so postorder is emitted by a final walk.
    children: dict[int, list[int | None]] = {}

    root_choices = [
        k for k in functions if 1 + arity(k) <= max_len and max_dep >= 2
    ]
    if target < 2 or not root_choices:
        return ExpressionTree.from_postorder(*_leaf_arrays(rng, n_columns, leaf_init, allowed))

    root = put_function(root_choices[rng.integers(len(root_choices))])
    children[root] = [None] * arity(kinds[root])
    open_slots: list[tuple[int, int, int]] = [
        (root, j, 2) for j in range(arity(kinds[root]))
    ]
    count = 1

    while open_slots and count + len(open_slots) < target:
        pick = int(rng.integers(len(open_slots)))
        parent, slot, level = open_slots.pop(pick)
        viable = [
            k
            for k in functions
            if level < max_dep and count + len(open_slots) + arity(k) + 1 <= max_len
        ]
        if viable:
            kind = viable[rng.integers(len(viable))] if len(viable) > 1 else viable[0]
            node = put_function(kind)
            children[node] = [None] * arity(kind)
            children[parent][slot] = node
            open_slots.extend((node, j, level + 1) for j in range(arity(kind)))
        else:
            children[parent][slot] = put_leaf()
        count += 1

    for parent, slot, _level in open_slots:
        children[parent][slot] = put_leaf()

    # emit postorder
    out_kinds: list[int] = []
    out_values: list[float] = []
    out_indexes: list[int] = []

    def walk(node: int) -> None:
        for c in children.get(node, ()):
            walk(c)
        out_kinds.append(kinds[node])
        out_values.append(values[node])
        out_indexes.append(indexes[node])

    walk(root)
    return ExpressionTree.from_postorder(out_kinds, out_values, out_indexes)


def _leaf_arrays(rng, n_columns, leaf_init, allowed):
    kind, value, index = _random_leaf(rng, n_columns, leaf_init, allowed)
    return [int(kind)], [value], [index]


def _splice(tree: ExpressionTree, i: int, repl: ExpressionTree) -> ExpressionTree:
    """Replace the subtree rooted at position i with another tree."""
    a = i - int(tree.sizes[i]) + 1
    b = i + 1
    kinds = np.concatenate([tree.kinds[:a], repl.kinds, tree.kinds[b:]])
    values = np.concatenate([tree.values[:a], repl.values, tree.values[b:]])
    indexes = np.concatenate([tree.indexes[:a], repl.indexes, tree.indexes[b:]])
    return ExpressionTree.from_postorder(kinds, values, indexes)


def subtree_crossover(
    rng: np.random.Generator,
    parent1: ExpressionTree,
    parent2: ExpressionTree,
    limits: TreeLimits,
) -> ExpressionTree:
    """Swap one subtree of parent1 for one of parent2.

    The cut pair is drawn uniformly from all (i, j) combinations whose
    result stays inside the limits; with no legal combination the child is
    parent1 unchanged (trees are immutable, so sharing is safe).
    """
    n1 = len(parent1)
    levels1 = parent1.levels()
    # feasible[i, j]: replacing p1's subtree at i with p2's subtree at j
    cap_len = limits.max_length - n1 + parent1.sizes.astype(np.int64)
    cap_dep = limits.max_depth + 1 - levels1.astype(np.int64)
    feasible = (parent2.sizes[None, :] <= cap_len[:, None]) & (
        parent2.depths[None, :] <= cap_dep[:, None]
    )
    flat = np.flatnonzero(feasible)
    if flat.size == 0:
        return parent1
    pick = int(flat[rng.integers(flat.size)])
    i, j = divmod(pick, len(parent2))
    return _splice(parent1, i, parent2.subtree(j))


def _mutate_change_symbol(rng, tree, n_columns, leaf_init) -> ExpressionTree:
    i = int(rng.integers(len(tree)))
    kind = int(tree.kinds[i])
    a = arity(kind)
    pool = BINARY_KINDS if a == 2 else UNARY_KINDS if a == 1 else LEAF_KINDS
    options = [k for k in pool if int(k) != kind]
    new_kind = options[rng.integers(len(options))] if len(options) > 1 else options[0]
    kinds = tree.kinds.copy()
    values = tree.values.copy()
    indexes = tree.indexes.copy()
    kinds[i] = int(new_kind)
    if new_kind == NodeKind.CONSTANT:
        values[i] = rng.uniform(leaf_init.const_low, leaf_init.const_high)
        indexes[i] = -1
    elif new_kind == NodeKind.VARIABLE:
        indexes[i] = rng.integers(n_columns)
        values[i] = rng.normal(leaf_init.weight_mean, leaf_init.weight_std)
    return ExpressionTree.from_postorder(kinds, values, indexes)


def _mutate_single_point(rng, tree) -> ExpressionTree:
    leaves = np.flatnonzero(ARITIES[tree.kinds] == 0)
    i = int(leaves[rng.integers(leaves.size)])
    values = tree.values.copy()
    # scale-aware perturbation; +1 keeps zero coefficients mobile
    values[i] += rng.normal(0.0, 1.0) * (abs(values[i]) + 1.0)
    return ExpressionTree.from_postorder(tree.kinds.copy(), values, tree.indexes.copy())


def _mutate_remove_branch(rng, tree, n_columns, leaf_init) -> ExpressionTree:
    i = int(rng.integers(len(tree)))
    kind, value, index = _random_leaf(rng, n_columns, leaf_init, frozenset(NodeKind))
    leaf = ExpressionTree.from_postorder([int(kind)], [value], [index])
    return _splice(tree, i, leaf)


def _mutate_replace_branch(rng, tree, limits, n_columns, leaf_init) -> ExpressionTree:
    i = int(rng.integers(len(tree)))
    level = int(tree.levels()[i])
    avail = TreeLimits(
        max_length=limits.max_length - len(tree) + int(tree.sizes[i]),
        max_depth=limits.max_depth - level + 1,
    )
    repl = create_tree_ptc2(rng, avail, n_columns, leaf_init=leaf_init)
    return _splice(tree, i, repl)


def mutate(
    rng: np.random.Generator,
    tree: ExpressionTree,
    limits: TreeLimits,
    n_columns: int,
    leaf_init: LeafInit = DEFAULT_LEAF_INIT,
) -> ExpressionTree:
    """Apply one of four mutation operators, chosen uniformly.

    change-symbol swaps a node kind for another of equal arity; single-point
    perturbs one leaf coefficient; remove-branch collapses a subtree to a
    fresh leaf; replace-branch grows a new subtree within the limits.
    """
    op = int(rng.integers(4))
    if op == 0:
        return _mutate_change_symbol(rng, tree, n_columns, leaf_init)
    if op == 1:
        return _mutate_single_point(rng, tree)
    if op == 2:
        return _mutate_remove_branch(rng, tree, n_columns, leaf_init)
    return _mutate_replace_branch(rng, tree, limits, n_columns, leaf_init)
