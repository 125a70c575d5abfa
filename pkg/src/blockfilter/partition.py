"""
Block partitions and nested-dissection ordering.

A partition is a permutation of the unknowns plus contiguous block sizes in
the permuted ordering. Nested dissection orders the two halves of every
subgraph before the separator that splits them, so the permuted matrix has
the block-arrow shape whose leaf blocks can be eliminated independently.
"""

from __future__ import annotations

import logging
from collections import deque
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path

import numpy as np
import scipy.sparse as sp

from .errors import PartitionError
from .sparse import Permutation

log = logging.getLogger(__name__)

LEAF = "leaf"
SEPARATOR = "separator"


@dataclass(frozen=True)
class TreeNode:
    block: int
    level: int
    parent: int | None
    kind: str


@dataclass(frozen=True)
class BlockPartition:
    permutation: Permutation
    block_sizes: np.ndarray
    tree: tuple[TreeNode, ...]
    # branches on which dissection stopped before the requested depth
    notes: tuple[str, ...] = field(default=(), compare=False)

    def __post_init__(self):
        sizes = np.asarray(self.block_sizes, dtype=np.int64)
        object.__setattr__(self, "block_sizes", sizes)
        if sizes.size < 1 or np.any(sizes < 1):
            raise PartitionError("block sizes must be positive and there must be at least one block")
        if int(sizes.sum()) != self.permutation.n:
            raise PartitionError(f"block sizes sum to {int(sizes.sum())}, expected n={self.permutation.n}")
        if len(self.tree) != sizes.size or [nd.block for nd in self.tree] != list(range(sizes.size)):
            raise PartitionError("tree must hold exactly one node per block, in block order")

    @property
    def n(self) -> int:
        return self.permutation.n

    @property
    def num_blocks(self) -> int:
        return int(self.block_sizes.size)

    @cached_property
    def offsets(self) -> np.ndarray:
        return np.concatenate([[0], np.cumsum(self.block_sizes)]).astype(np.int64)

    def block_range(self, i: int) -> slice:
        return slice(int(self.offsets[i]), int(self.offsets[i + 1]))

    @cached_property
    def block_of(self) -> np.ndarray:
        """Block index of every position in the permuted ordering."""
        return np.repeat(np.arange(self.num_blocks), self.block_sizes)

    def ancestors(self, i: int) -> list[int]:
        out = []
        p = self.tree[i].parent
        while p is not None:
            out.append(p)
            p = self.tree[p].parent
        return out

    @cached_property
    def _ancestor_sets(self) -> list[frozenset]:
        return [frozenset(self.ancestors(i)) for i in range(self.num_blocks)]

    def related(self, i: int, j: int) -> bool:
        """True when ``i == j`` or one block is an ancestor of the other."""
        return i == j or j in self._ancestor_sets[i] or i in self._ancestor_sets[j]

    @property
    def depth(self) -> int:
        return max(nd.level for nd in self.tree)

    def permute_vector(self, x) -> np.ndarray:
        return self.permutation.apply(x)

    def unpermute_vector(self, y) -> np.ndarray:
        return self.permutation.unapply(y)


def partition_from_sizes(sizes) -> BlockPartition:
    """Identity ordering split into contiguous blocks; every block a leaf."""
    sizes = [int(s) for s in sizes]
    if not sizes or any(s < 1 for s in sizes):
        raise PartitionError(f"block sizes must be positive, got {sizes}")
    n = sum(sizes)
    tree = tuple(TreeNode(i, 0, None, LEAF) for i in range(len(sizes)))
    return BlockPartition(Permutation.identity(n), np.array(sizes), tree)


def even_sizes(n: int, nblocks: int) -> list[int]:
    """``nblocks`` contiguous sizes differing by at most one, larger first."""
    if not 1 <= nblocks <= n:
        raise PartitionError(f"cannot split {n} unknowns into {nblocks} blocks")
    q, r = divmod(n, nblocks)
    return [q + 1] * r + [q] * (nblocks - r)


# -- nested dissection -------------------------------------------------------


def adjacency_graph(A) -> sp.csr_matrix:
    """Pattern of ``A + A^T`` without the diagonal, sorted rows."""
    if A.shape[0] != A.shape[1]:
        raise PartitionError(f"nested dissection needs a square matrix, got {A.shape}")
    P = sp.csr_matrix(A, copy=True)
    P.data = np.ones_like(P.data)
    G = (P + P.T).tocsr()
    G.setdiag(0)
    G.eliminate_zeros()
    G.sort_indices()
    return G


class _Dissector:
    def __init__(self, G: sp.csr_matrix, levels: int):
        self.indptr = G.indptr
        self.indices = G.indices
        self.levels = levels
        self.notes: list[str] = []
        self.mark = np.full(G.shape[0], -1, dtype=np.int64)
        self.stamp = 0

    def neighbors(self, v):
        return self.indices[self.indptr[v]:self.indptr[v + 1]]

    def _begin(self, verts):
        # mark[v] == stamp <=> v belongs to the current subgraph
        self.stamp += 1
        self.mark[verts] = self.stamp

    def bfs(self, root):
        """BFS inside the current subgraph; neighbors visited in index order."""
        inside = self.stamp
        level = {root: 0}
        order = [root]
        queue = deque([root])
        while queue:
            v = queue.popleft()
            lv = level[v] + 1
            for w in self.neighbors(v):
                w = int(w)
                if self.mark[w] == inside and w not in level:
                    level[w] = lv
                    order.append(w)
                    queue.append(w)
        return order, level

    def pseudo_peripheral(self, verts):
        root = int(verts[0])
        order, level = self.bfs(root)
        ecc = level[order[-1]]
        while True:
            cand = min(v for v in order if level[v] == ecc)
            order2, level2 = self.bfs(cand)
            ecc2 = level2[order2[-1]]
            if ecc2 <= ecc:
                return root, order, level
            root, order, level, ecc = cand, order2, level2, ecc2

    def components(self, verts):
        self._begin(verts)
        seen = set()
        comps = []
        for v in verts.tolist():
            if v in seen:
                continue
            order, _ = self.bfs(v)
            seen.update(order)
            comps.append(np.sort(np.array(order, dtype=np.int64)))
        return comps

    def dissect(self, verts: np.ndarray, depth: int):
        """Return a nested tuple ``(kind, vertices, children)``."""
        if depth >= self.levels or verts.size < 3:
            return (LEAF, verts, ())
        comps = self.components(verts)
        if len(comps) > 1:
            groups = ([], [])
            weight = [0, 0]
            for comp in sorted(comps, key=lambda c: (-c.size, int(c[0]))):
                g = 0 if weight[0] <= weight[1] else 1
                groups[g].append(comp)
                weight[g] += comp.size
            halves = [np.sort(np.concatenate(g)) for g in groups]
            sep = np.empty(0, dtype=np.int64)
        else:
            self._begin(verts)
            _, order, level = self.pseudo_peripheral(verts)
            median_level = level[order[len(order) // 2]]
            side_a = [v for v in order if level[v] < median_level]
            rest = [v for v in order if level[v] >= median_level]
            a_set = set(side_a)
            sep = [v for v in rest if any(int(w) in a_set for w in self.neighbors(v))]
            sep_set = set(sep)
            side_b = [v for v in rest if v not in sep_set]
            if not side_a or not side_b:
                self.notes.append(
                    f"subgraph of {verts.size} vertices at depth {depth} has no level-structure "
                    "separator; kept as a leaf"
                )
                log.info(self.notes[-1])
                return (LEAF, verts, ())
            halves = [np.sort(np.array(side_a, dtype=np.int64)), np.sort(np.array(side_b, dtype=np.int64))]
            sep = np.sort(np.array(sep, dtype=np.int64))
        children = tuple(self.dissect(h, depth + 1) for h in halves)
        return (SEPARATOR, sep, children)


def _flatten(node, level, parent_block, order, sizes, tree):
    """Postorder flattening; empty blocks are dropped and their children
    reattached to the nearest non-empty ancestor."""
    kind, verts, children = node
    if kind == SEPARATOR:
        child_nodes_start = len(tree)
        for child in children:
            _flatten(child, level + 1, None, order, sizes, tree)
        if verts.size:
            me = len(tree)
            order.append(verts)
            sizes.append(int(verts.size))
            tree.append([me, level, parent_block, SEPARATOR])
            for nd in tree[child_nodes_start:me]:
                if nd[2] is None:
                    nd[2] = me
    elif verts.size:
        me = len(tree)
        order.append(verts)
        sizes.append(int(verts.size))
        tree.append([me, level, parent_block, LEAF])


def nested_dissection(A, levels: int) -> BlockPartition:
    """Nested-dissection partition of the symmetrized graph of ``A``.

    At most ``2**levels`` leaves and ``2**levels - 1`` separators; empty
    blocks are removed. Branches that cannot be split further become leaves
    early; those events are listed in ``notes``.
    """
    if levels < 0:
        raise PartitionError(f"levels must be >= 0, got {levels}")
    G = adjacency_graph(A)
    n = G.shape[0]
    if n == 0:
        raise PartitionError("empty matrix")
    d = _Dissector(G, levels)
    root = d.dissect(np.arange(n, dtype=np.int64), 0)
    order, sizes, tree = [], [], []
    _flatten(root, 0, None, order, sizes, tree)
    forward = np.concatenate(order)
    nodes = tuple(TreeNode(b, lv, p, kind) for b, lv, p, kind in tree)
    return BlockPartition(Permutation.from_forward(forward), np.array(sizes), nodes, tuple(d.notes))


# -- validation --------------------------------------------------------------


@dataclass(frozen=True)
class Violation:
    kind: str
    blocks: tuple[int, int] | None
    detail: str


@dataclass(frozen=True)
class ValidationReport:
    violations: tuple[Violation, ...]

    @property
    def ok(self) -> bool:
        return not self.violations

    def separator_pairs(self) -> list[tuple[int, int]]:
        return [v.blocks for v in self.violations if v.kind == "separator"]


def validate_partition(A, part: BlockPartition) -> ValidationReport:
    """Check bijectivity, sizes, and the separator property of ``part``.

    Two blocks with no ancestor-descendant relation must be coupled by no
    entry of ``P A P^T`` in either direction.
    """
    out = []
    n = A.shape[0]
    fwd = part.permutation.forward
    if fwd.size != n or np.unique(fwd).size != n or (n and (fwd.min() < 0 or fwd.max() >= n)):
        out.append(Violation("permutation", None, "permutation is not a bijection on [0, n)"))
        return ValidationReport(tuple(out))
    if int(part.block_sizes.sum()) != n:
        out.append(Violation("sizes", None, f"block sizes sum to {int(part.block_sizes.sum())} != {n}"))
        return ValidationReport(tuple(out))
    coo = sp.coo_matrix(A)
    inv = part.permutation.inverse
    bi = part.block_of[inv[coo.row]]
    bj = part.block_of[inv[coo.col]]
    off = bi != bj
    pairs = set(zip(np.minimum(bi[off], bj[off]).tolist(), np.maximum(bi[off], bj[off]).tolist()))
    for i, j in sorted(pairs):
        if not part.related(i, j):
            out.append(Violation("separator", (i, j), f"blocks {i} and {j} are unrelated but coupled"))
    return ValidationReport(tuple(out))


# -- serialization -----------------------------------------------------------

_FORMAT_TAG = "blockfilter-partition 1"


def write_partition(path, part: BlockPartition) -> None:
    lines = [
        f"# {_FORMAT_TAG}",
        f"n {part.n}",
        f"N {part.num_blocks}",
        "block_sizes " + " ".join(str(int(s)) for s in part.block_sizes),
        "permutation " + " ".join(str(int(v)) for v in part.permutation.forward),
        "tree",
    ]
    for nd in part.tree:
        parent = "-" if nd.parent is None else str(nd.parent)
        lines.append(f"{nd.block} {nd.level} {parent} {nd.kind}")
    Path(path).write_text("\n".join(lines) + "\n")


def read_partition(path) -> BlockPartition:
    """Inverse of :func:`write_partition` (``#`` lines are comments)."""
    path = Path(path)
    rows = [ln.split() for ln in path.read_text().splitlines() if ln.strip() and not ln.startswith("#")]
    try:
        head = {r[0]: r[1:] for r in rows[:4]}
        n = int(head["n"][0])
        N = int(head["N"][0])
        sizes = [int(s) for s in head["block_sizes"]]
        forward = [int(v) for v in head["permutation"]]
        if rows[4] != ["tree"]:
            raise ValueError("missing 'tree' section")
        tree = []
        for r in rows[5:]:
            b, lv, p, kind = r
            if kind not in (LEAF, SEPARATOR):
                raise ValueError(f"bad node kind {kind!r}")
            tree.append(TreeNode(int(b), int(lv), None if p == "-" else int(p), kind))
    except (KeyError, IndexError, ValueError) as exc:
        raise PartitionError(f"{path}: malformed partition file ({exc})") from exc
    if len(forward) != n or len(sizes) != N:
        raise PartitionError(f"{path}: header counts do not match the data")
    try:
        perm = Permutation.from_forward(forward)
    except ValueError as exc:
        raise PartitionError(f"{path}: {exc}") from exc
    return BlockPartition(perm, np.array(sizes), tuple(tree))
