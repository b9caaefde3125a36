"""Road-network graphs and hop-structured diffusion convolution.

The sensor network is a weighted directed graph. Spatial aggregation uses
degree-normalized transition matrices in both flow directions; the
multi-hop variant splits the neighborhood into exact-hop shells (hop 1,
hop 2, ...) and aggregates each shell with its own head before a shared
output projection.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import tensor as T
from .tensor import ShapeError, Tensor

__all__ = [
    "RoadGraph",
    "HopMatrix",
    "UNREACHABLE",
    "load_adjacency",
    "shortest_path_hops",
    "hop_adjacency",
    "degree_normalize",
    "diffusion_conv",
    "multi_hop_conv",
    "GraphFormatError",
]

# Sentinel for node pairs with no directed path; never a valid hop count.
UNREACHABLE = -1


class GraphFormatError(ValueError):
    """Adjacency file could not be parsed."""


@dataclass
class RoadGraph:
    """Weighted directed sensor graph."""

    n_nodes: int
    edges: list[tuple[int, int, float]]
    adjacency: np.ndarray = field(repr=False, default=None)

    def __post_init__(self):
        if self.n_nodes < 1:
            raise ValueError("graph needs at least one node")
        if self.adjacency is None:
            adj = np.zeros((self.n_nodes, self.n_nodes))
            for src, dst, w in self.edges:
                adj[src, dst] = w
            self.adjacency = adj
        for src, dst, w in self.edges:
            if not (0 <= src < self.n_nodes and 0 <= dst < self.n_nodes):
                raise ValueError(f"edge ({src},{dst}) out of range for N={self.n_nodes}")
            if w < 0:
                raise ValueError(f"edge ({src},{dst}) has negative weight {w}")

    @classmethod
    def from_adjacency(cls, adj: np.ndarray) -> "RoadGraph":
        adj = np.asarray(adj, dtype=np.float64)
        src, dst = np.nonzero(adj)
        edges = [(int(i), int(j), float(adj[i, j])) for i, j in zip(src, dst)]
        return cls(n_nodes=adj.shape[0], edges=edges, adjacency=adj)

    def undirected_weights(self) -> np.ndarray:
        """Symmetric weight matrix (sum of both directions), for random walks."""
        return self.adjacency + self.adjacency.T


def load_adjacency(path) -> RoadGraph:
    """Parse an edge-list file: one ``src,dst,weight`` line per edge.

    An optional ``N=<int>`` line declares the node count; otherwise it is
    inferred as max index + 1. A single header line of column names is
    tolerated.
    """
    path = Path(path)
    declared_n = None
    edges: list[tuple[int, int, float]] = []
    saw_content = False
    with open(path) as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            if line.upper().startswith("N="):
                declared_n = int(line[2:])
                continue
            parts = [p.strip() for p in line.split(",")]
            if len(parts) != 3:
                raise GraphFormatError(
                    f"{path}:{lineno}: expected 'src,dst,weight', got {line!r}"
                )
            try:
                src, dst, w = int(parts[0]), int(parts[1]), float(parts[2])
            except ValueError:
                if not saw_content:  # a single leading header row is fine
                    saw_content = True
                    continue
                raise GraphFormatError(
                    f"{path}:{lineno}: non-numeric edge {line!r}"
                ) from None
            saw_content = True
            edges.append((src, dst, w))
    if not edges and declared_n is None:
        raise GraphFormatError(f"{path}: no edges and no N= declaration")
    n = declared_n if declared_n is not None else (
        max(max(s, d) for s, d, _ in edges) + 1
    )
    return RoadGraph(n_nodes=n, edges=edges)


# ---------------------------------------------------------------------------
# Hop structure

def shortest_path_hops(g: RoadGraph) -> np.ndarray:
    """Directed hop-count matrix S: S[i,j] = min #edges from i to j.

    S[i,i] = 0; pairs with no path hold :data:`UNREACHABLE`. Edge weights
    do not participate (a hop is a hop).
    """
    n = g.n_nodes
    out_neighbors: list[list[int]] = [[] for _ in range(n)]
    for src, dst, w in g.edges:
        if w != 0 and src != dst:
            out_neighbors[src].append(dst)
    dist = np.full((n, n), UNREACHABLE, dtype=np.int64)
    for start in range(n):
        dist[start, start] = 0
        queue = deque([start])
        while queue:
            cur = queue.popleft()
            d = dist[start, cur]
            for nxt in out_neighbors[cur]:
                if dist[start, nxt] == UNREACHABLE:
                    dist[start, nxt] = d + 1
                    queue.append(nxt)
    return dist


@dataclass
class HopMatrix:
    """Stack of binary matrices; layer i-1 marks pairs exactly i hops apart."""

    hops: np.ndarray  # (k, N, N) in {0, 1}
    k: int

    def __post_init__(self):
        if self.hops.shape[0] != self.k:
            raise ValueError("hop stack depth does not match k")


def hop_adjacency(s: np.ndarray, k: int) -> HopMatrix:
    """Split the hop-distance matrix into exact-hop shells 1..k."""
    if k < 1:
        raise ValueError(f"k must be >= 1, got {k}")
    stack = np.stack([(s == i).astype(np.float64) for i in range(1, k + 1)])
    return HopMatrix(hops=stack, k=k)


# ---------------------------------------------------------------------------
# Degree normalization and diffusion

def degree_normalize(h: np.ndarray, direction: str) -> np.ndarray:
    """Row-stochastic transition matrix from a nonnegative matrix.

    ``out``: D_o^-1 h, rows normalized by out-degree. ``in``: D_i^-1 h^T,
    the reverse direction. Zero-degree rows stay all-zero (the node
    aggregates nothing that way).
    """
    if direction not in ("out", "in"):
        raise ValueError(f"direction must be 'out' or 'in', got {direction!r}")
    if np.any(h < 0):
        raise ValueError("degree_normalize expects nonnegative entries")
    mat = h if direction == "out" else h.T
    deg = mat.sum(axis=1)
    inv = np.divide(1.0, deg, out=np.zeros_like(deg, dtype=np.float64), where=deg > 0)
    return inv[:, None] * mat


def transition_pair(h: np.ndarray) -> np.ndarray:
    """D_o^-1 h + D_i^-1 h^T: bidirectional aggregation operator."""
    return degree_normalize(h, "out") + degree_normalize(h, "in")


def diffusion_conv(x: Tensor, a: np.ndarray, k_step: int, w: Tensor) -> Tensor:
    """Step-``k_step`` diffusion term: ((D_o^-1 A)^k + (D_i^-1 A^T)^k) X W.

    Building block and oracle for :func:`multi_hop_conv`; k_step = 0 gives
    2 X W since both transition powers are the identity.
    """
    if k_step < 0:
        raise ValueError(f"k_step must be >= 0, got {k_step}")
    if x.data.ndim != 2 or x.shape[0] != a.shape[0]:
        raise ShapeError(f"diffusion_conv: x {x.shape} vs adjacency {a.shape}")
    fwd = np.linalg.matrix_power(degree_normalize(a, "out"), k_step)
    bwd = np.linalg.matrix_power(degree_normalize(a, "in"), k_step)
    return T.matmul(T.matmul(Tensor(fwd + bwd), x), w)


def hop_transitions(hops: HopMatrix) -> list[np.ndarray]:
    """Precompute the bidirectional aggregation operator per hop shell."""
    return [transition_pair(h) for h in hops.hops]


def multi_hop_conv(
    x_t: Tensor,
    hops: HopMatrix,
    w_x: list[Tensor],
    w_d: Tensor,
    trans: list[np.ndarray] | None = None,
) -> Tensor:
    """Multi-head diffusion over exact-hop shells.

    Head i aggregates (D_o^-1 H_i + D_i^-1 H_i^T)(X_t W_x[i]); heads are
    concatenated and projected by ``w_d``. Feature width must split evenly
    across the k heads (validated at model build time). ``trans`` lets
    callers reuse :func:`hop_transitions` across time steps.
    """
    if len(w_x) != hops.k:
        raise ShapeError(f"expected {hops.k} head weights, got {len(w_x)}")
    if trans is None:
        trans = hop_transitions(hops)
    heads = []
    for i in range(hops.k):
        mixed = T.matmul(x_t, w_x[i])
        heads.append(T.matmul(Tensor(trans[i]), mixed))
    return T.matmul(T.concat(heads, axis=1), w_d)
