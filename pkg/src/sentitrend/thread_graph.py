"""Per-school directed reply graphs and capped subgraph sampling.

Nodes are messages in appearance order (the order they occur in the dump);
an edge runs from each reply to the message it replies to, so adjacency is
asymmetric. Oversized graphs are reduced to a fixed node budget by a
seeded procedure: draw a batch of random start nodes, grow by breadth
first search over undirected adjacency visiting each node's neighbors in
appearance order, reseed with a fresh random batch whenever growth stalls,
and truncate the final additions so the sample hits the budget exactly.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .rng import SplitMix64


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class TraceEvent:
    """One node addition: seeds carry via=None, growth additions carry the
    already-selected neighbor they were reached from."""

    node: int
    kind: str  # "seed" | "bfs"
    via: Optional[int] = None


def _csr(targets_by_source, n):
    """Build (indptr, indices) with each source's targets sorted ascending."""
    src, dst = targets_by_source
    order = np.lexsort((dst, src))
    src, dst = src[order], dst[order]
    counts = np.bincount(src, minlength=n) if len(src) else np.zeros(n, dtype=np.int64)
    indptr = np.concatenate([[0], np.cumsum(counts)]).astype(np.int64)
    return indptr, dst.astype(np.int64)


@dataclass
class MessageGraph:
    """Directed reply graph for one school, nodes in appearance order."""

    school_id: str
    msg_ids: list
    edge_child: np.ndarray  # edge i: edge_child[i] replies to edge_parent[i]
    edge_parent: np.ndarray
    out_indptr: np.ndarray = field(repr=False, default=None)
    out_indices: np.ndarray = field(repr=False, default=None)
    in_indptr: np.ndarray = field(repr=False, default=None)
    in_indices: np.ndarray = field(repr=False, default=None)
    _und_indptr: np.ndarray = field(repr=False, default=None)
    _und_indices: np.ndarray = field(repr=False, default=None)

    @property
    def n_nodes(self) -> int:
        return len(self.msg_ids)

    @property
    def n_edges(self) -> int:
        return len(self.edge_child)

    def index_of(self, msg_id: str) -> int:
        if not hasattr(self, "_index"):
            self._index = {m: i for i, m in enumerate(self.msg_ids)}
        return self._index[msg_id]

    def out_neighbors(self, i: int) -> np.ndarray:
        return self.out_indices[self.out_indptr[i]:self.out_indptr[i + 1]]

    def in_neighbors(self, i: int) -> np.ndarray:
        return self.in_indices[self.in_indptr[i]:self.in_indptr[i + 1]]

    def undirected_adjacency(self):
        """(indptr, indices): union of in- and out-neighbors, deduplicated,
        sorted by appearance index. Built once, cached."""
        if self._und_indptr is None:
            n = self.n_nodes
            src = np.concatenate([self.edge_child, self.edge_parent])
            dst = np.concatenate([self.edge_parent, self.edge_child])
            order = np.lexsort((dst, src))
            src, dst = src[order], dst[order]
            if len(src):
                keep = np.ones(len(src), dtype=bool)
                keep[1:] = (src[1:] != src[:-1]) | (dst[1:] != dst[:-1])
                src, dst = src[keep], dst[keep]
            counts = np.bincount(src, minlength=n)
            self._und_indptr = np.concatenate([[0], np.cumsum(counts)])
            self._und_indices = dst
        return self._und_indptr, self._und_indices


def build_graph(corpus, school_id: str) -> MessageGraph:
    """Reply graph for one school; replies whose parent is not in the
    graph (outside the window, or a submission) become parentless nodes."""
    if school_id not in corpus.by_school:
        raise KeyError(f"unknown school: {school_id!r}")
    messages = [corpus.messages[i] for i in corpus.by_school[school_id]]
    msg_ids = [m.msg_id for m in messages]
    index = {m: i for i, m in enumerate(msg_ids)}
    child, parent = [], []
    for i, m in enumerate(messages):
        if m.parent_id is not None and m.parent_id in index:
            child.append(i)
            parent.append(index[m.parent_id])
    edge_child = np.asarray(child, dtype=np.int64)
    edge_parent = np.asarray(parent, dtype=np.int64)
    n = len(msg_ids)
    out_indptr, out_indices = _csr((edge_child, edge_parent), n)
    in_indptr, in_indices = _csr((edge_parent, edge_child), n)
    g = MessageGraph(
        school_id=school_id,
        msg_ids=msg_ids,
        edge_child=edge_child,
        edge_parent=edge_parent,
        out_indptr=out_indptr,
        out_indices=out_indices,
        in_indptr=in_indptr,
        in_indices=in_indices,
    )
    g._index = index
    return g


def graph_from_edges(school_id: str, msg_ids, edges) -> MessageGraph:
    """Construct directly from (child_index, parent_index) pairs. Used by
    synthetic generators and the file loader."""
    n = len(msg_ids)
    if len(edges):
        edge_child = np.asarray([e[0] for e in edges], dtype=np.int64)
        edge_parent = np.asarray([e[1] for e in edges], dtype=np.int64)
    else:
        edge_child = np.empty(0, dtype=np.int64)
        edge_parent = np.empty(0, dtype=np.int64)
    if len(edge_child):
        if edge_child.min() < 0 or edge_child.max() >= n or edge_parent.min() < 0 or edge_parent.max() >= n:
            raise ValueError("edge endpoint outside node range")
        if np.any(edge_child == edge_parent):
            raise ValueError("self-edges are not allowed")
    out_indptr, out_indices = _csr((edge_child, edge_parent), n)
    in_indptr, in_indices = _csr((edge_parent, edge_child), n)
    return MessageGraph(
        school_id=school_id,
        msg_ids=list(msg_ids),
        edge_child=edge_child,
        edge_parent=edge_parent,
        out_indptr=out_indptr,
        out_indices=out_indices,
        in_indptr=in_indptr,
        in_indices=in_indices,
    )


@dataclass
class SampledSubgraph:
    graph: MessageGraph
    nodes: np.ndarray  # selected node indices, appearance order
    trace: list  # TraceEvents in selection order; empty for under-cap graphs
    rng_seed: int
    cap: int
    seed_batch: int

    @property
    def n_nodes(self) -> int:
        return len(self.nodes)

    def induced_edges(self):
        """Parent edges with both endpoints selected, in parent edge order."""
        g = self.graph
        selected = np.zeros(g.n_nodes, dtype=bool)
        selected[self.nodes] = True
        mask = selected[g.edge_child] & selected[g.edge_parent]
        return g.edge_child[mask], g.edge_parent[mask]

    def node_msg_ids(self) -> list:
        return [self.graph.msg_ids[i] for i in self.nodes]


def sample_capped(graph: MessageGraph, cap: int, seed_batch: int, rng_seed: int) -> SampledSubgraph:
    """Cap a graph at `cap` nodes with the seeded-BFS procedure.

    Under-cap graphs are returned whole with an empty trace. Otherwise:
    seed batches of `seed_batch` distinct not-yet-selected nodes are drawn
    uniformly (without replacement); BFS grows from the selection frontier
    over undirected adjacency, visiting each dequeued node's neighbors in
    appearance order; an exhausted frontier triggers a fresh seed batch;
    the run stops at exactly `cap` selections, truncating the last batch
    or neighbor scan as needed. Identical (graph, cap, seed_batch,
    rng_seed) always reproduces the identical selection sequence.
    """
    if seed_batch < 1:
        raise ConfigError(f"seed_batch must be >= 1, got {seed_batch}")
    if cap < seed_batch:
        raise ConfigError(f"cap ({cap}) must be >= seed_batch ({seed_batch})")
    n = graph.n_nodes
    if n <= cap:
        return SampledSubgraph(
            graph=graph, nodes=np.arange(n, dtype=np.int64), trace=[],
            rng_seed=rng_seed, cap=cap, seed_batch=seed_batch,
        )

    indptr, indices = graph.undirected_adjacency()
    rng = SplitMix64(rng_seed)
    selected = np.zeros(n, dtype=bool)
    # Unselected pool supporting O(1) uniform draws and O(1) removal:
    # pool holds the unselected node ids, pos[v] its slot (or -1).
    pool = np.arange(n, dtype=np.int64)
    pos = np.arange(n, dtype=np.int64)
    pool_size = n
    trace = []
    queue = deque()

    def remove_from_pool(v):
        nonlocal pool_size
        slot = pos[v]
        last = pool[pool_size - 1]
        pool[slot] = last
        pos[last] = slot
        pos[v] = -1
        pool_size -= 1

    def select(v, kind, via=None):
        selected[v] = True
        remove_from_pool(v)
        trace.append(TraceEvent(node=int(v), kind=kind, via=None if via is None else int(via)))
        queue.append(v)

    while len(trace) < cap:
        # Fresh seed batch: at procedure start or when BFS stalls.
        budget = cap - len(trace)
        for _ in range(min(seed_batch, budget, pool_size)):
            v = pool[rng.randbelow(pool_size)]
            select(v, "seed")
        while queue and len(trace) < cap:
            u = queue.popleft()
            for j in indices[indptr[u]:indptr[u + 1]]:
                if not selected[j]:
                    select(j, "bfs", via=u)
                    if len(trace) >= cap:
                        break

    nodes = np.sort(np.array([ev.node for ev in trace], dtype=np.int64))
    return SampledSubgraph(
        graph=graph, nodes=nodes, trace=trace,
        rng_seed=rng_seed, cap=cap, seed_batch=seed_batch,
    )


def export_edges(graph: MessageGraph) -> str:
    """Edge-list text: one "child<TAB>parent" msg-id pair per line."""
    lines = [
        f"{graph.msg_ids[c]}\t{graph.msg_ids[p]}"
        for c, p in zip(graph.edge_child, graph.edge_parent)
    ]
    return "\n".join(lines) + ("\n" if lines else "")


def export_nodes(graph: MessageGraph) -> str:
    """Node manifest: msg_ids in appearance order, one per line."""
    return "\n".join(graph.msg_ids) + ("\n" if graph.msg_ids else "")


def subgraph_trace_json(sub: SampledSubgraph) -> dict:
    g = sub.graph
    return {
        "school_id": g.school_id,
        "rng_seed": sub.rng_seed,
        "cap": sub.cap,
        "seed_batch": sub.seed_batch,
        "parent_nodes": g.n_nodes,
        "selected": sub.n_nodes,
        "order": [
            {
                "msg_id": g.msg_ids[ev.node],
                "kind": ev.kind,
                "via": None if ev.via is None else g.msg_ids[ev.via],
            }
            for ev in sub.trace
        ],
    }
