"""Graph attention network over message embeddings and the reply graph.

Each layer transforms node states with per-head linear maps, scores every
(node, neighbor) pair with a leaky-rectified additive attention form,
normalizes scores per node by a masked softmax, and aggregates neighbor
states with the resulting weights. Hidden layers concatenate heads and
apply an exponential-linear nonlinearity; the output layer averages heads
into two class logits. The attention neighborhood follows the reply
direction (successors by default) and always includes the node itself.

Everything is dense-free: attention pairs live in flat (src, dst) arrays
grouped by source node, so segment reductions (reduceat) implement the
per-node softmax and aggregation without materializing an n x n matrix.
The backward pass is an exact hand-derived reverse sweep of the same
computation, checked against central finite differences in the tests.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np

DIRECTIONS = ("successors", "predecessors", "both")

NEGATIVE_CLASS = 1  # column index of the negative class in the 2-class logits


class GatShapeError(ValueError):
    pass


class GatTrainingError(RuntimeError):
    pass


@dataclass(frozen=True)
class GatConfig:
    """Architecture and training settings.

    heads[i] attention heads of width head_dim[i] per layer; the last
    entry is the output layer, whose width must equal n_classes.
    """

    heads: tuple = (8, 1)
    head_dim: tuple = (8, 2)
    negative_slope: float = 0.2
    n_classes: int = 2
    learning_rate: float = 0.25
    max_epochs: int = 500
    tol: float = 1e-6
    direction: str = "successors"

    def __post_init__(self):
        if len(self.heads) != len(self.head_dim) or not self.heads:
            raise GatShapeError("heads and head_dim must be equal-length, non-empty")
        if any(h < 1 for h in self.heads) or any(d < 1 for d in self.head_dim):
            raise GatShapeError("head counts and dimensions must be >= 1")
        if self.head_dim[-1] != self.n_classes:
            raise GatShapeError("output layer width must equal n_classes")
        if not 0.0 < self.negative_slope < 1.0:
            raise GatShapeError("negative_slope must lie in (0, 1)")
        if self.tol <= 0:
            raise GatShapeError("tol must be positive")
        if self.direction not in DIRECTIONS:
            raise GatShapeError(f"direction must be one of {DIRECTIONS}")

    @property
    def num_layers(self) -> int:
        return len(self.heads)


@dataclass
class HeadParams:
    W: np.ndarray  # (out, in)
    a: np.ndarray  # (2*out,): first half scores the attending node, second the attended

    def copy(self) -> "HeadParams":
        return HeadParams(W=self.W.copy(), a=self.a.copy())


@dataclass
class GatParams:
    layers: list  # list of layers, each a list of HeadParams

    def copy(self) -> "GatParams":
        return GatParams(layers=[[h.copy() for h in layer] for layer in self.layers])

    @property
    def in_dim(self) -> int:
        return self.layers[0][0].W.shape[1]

    def check_finite(self):
        for li, layer in enumerate(self.layers):
            for hi, head in enumerate(layer):
                if not (np.all(np.isfinite(head.W)) and np.all(np.isfinite(head.a))):
                    raise GatShapeError(f"non-finite parameter in layer {li}, head {hi}")

    def to_vector(self) -> np.ndarray:
        parts = []
        for layer in self.layers:
            for head in layer:
                parts.append(head.W.ravel())
                parts.append(head.a.ravel())
        return np.concatenate(parts)

    def to_json(self) -> str:
        obj = {
            "layers": [
                [
                    {"w_shape": list(h.W.shape), "w": h.W.ravel().tolist(), "a": h.a.tolist()}
                    for h in layer
                ]
                for layer in self.layers
            ]
        }
        return json.dumps(obj, sort_keys=True)

    @staticmethod
    def from_json(text: str) -> "GatParams":
        obj = json.loads(text)
        layers = []
        for layer in obj["layers"]:
            heads = []
            for h in layer:
                shape = tuple(h["w_shape"])
                W = np.asarray(h["w"], dtype=np.float64).reshape(shape)
                a = np.asarray(h["a"], dtype=np.float64)
                if a.shape != (2 * shape[0],):
                    raise GatShapeError("attention vector length must be 2 x output width")
                heads.append(HeadParams(W=W, a=a))
            layers.append(heads)
        return GatParams(layers=layers)


def init_params(config: GatConfig, in_dim: int, seed: int = 0) -> GatParams:
    """Glorot-uniform weights, zero attention vectors."""
    rng = np.random.default_rng(seed)
    layers = []
    d_in = in_dim
    for heads, d_out in zip(config.heads, config.head_dim):
        layer = []
        for _ in range(heads):
            bound = np.sqrt(6.0 / (d_in + d_out))
            W = rng.uniform(-bound, bound, size=(d_out, d_in))
            a = rng.uniform(-bound, bound, size=2 * d_out)
            layer.append(HeadParams(W=W, a=a))
        layers.append(layer)
        d_in = heads * d_out
    return GatParams(layers=layers)


def params_from_vector(vec: np.ndarray, config: GatConfig, in_dim: int) -> GatParams:
    layers = []
    pos = 0
    d_in = in_dim
    for heads, d_out in zip(config.heads, config.head_dim):
        layer = []
        for _ in range(heads):
            w_len = d_out * d_in
            W = vec[pos:pos + w_len].reshape(d_out, d_in).copy()
            pos += w_len
            a = vec[pos:pos + 2 * d_out].copy()
            pos += 2 * d_out
            layer.append(HeadParams(W=W, a=a))
        layers.append(layer)
        d_in = heads * d_out
    if pos != len(vec):
        raise GatShapeError(f"vector length {len(vec)} does not match parameter count {pos}")
    return GatParams(layers=layers)


@dataclass
class EmbeddingMatrix:
    """Per-message embedding rows aligned to graph node order."""

    values: np.ndarray  # (n, d) float32
    msg_ids: list

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float32)
        if self.values.ndim != 2:
            raise GatShapeError("embeddings must be a 2-D array")
        if self.values.shape[0] != len(self.msg_ids):
            raise GatShapeError(
                f"{self.values.shape[0]} embedding rows vs {len(self.msg_ids)} msg_ids"
            )
        if self.values.size and not np.all(np.isfinite(self.values)):
            raise GatShapeError("embeddings contain NaN or Inf")

    @property
    def dim(self) -> int:
        return self.values.shape[1]


@dataclass
class SentimentProbs:
    msg_ids: list
    p_negative: np.ndarray
    source: str  # "gat" | "upstream" | "stacked"

    def __post_init__(self):
        self.p_negative = np.asarray(self.p_negative, dtype=np.float64)
        if len(self.msg_ids) != len(self.p_negative):
            raise GatShapeError("one probability per message required")
        if len(self.p_negative) and (
            self.p_negative.min() < 0.0 or self.p_negative.max() > 1.0
        ):
            raise GatShapeError("probabilities must lie in [0, 1]")


def _edge_view(graph_like):
    """(n_nodes, edge_child, edge_parent) in local indices for either a
    full graph or a sampled subgraph (whose nodes are re-indexed 0..m-1
    in appearance order)."""
    if hasattr(graph_like, "graph"):  # SampledSubgraph
        sub = graph_like
        child, parent = sub.induced_edges()
        local = np.full(sub.graph.n_nodes, -1, dtype=np.int64)
        local[sub.nodes] = np.arange(len(sub.nodes), dtype=np.int64)
        return len(sub.nodes), local[child], local[parent]
    g = graph_like
    return g.n_nodes, g.edge_child, g.edge_parent


def attention_pairs(graph_like, direction: str):
    """Flat attention pairs (src attends dst) grouped by src.

    Returns (src, dst, indptr): pairs sorted by src then dst appearance
    index, self-pairs always present, duplicates removed. indptr[i]:
    indptr[i+1] delimits node i's segment; every segment is non-empty.
    """
    if direction not in DIRECTIONS:
        raise GatShapeError(f"direction must be one of {DIRECTIONS}")
    n, child, parent = _edge_view(graph_like)
    src_parts = [np.arange(n, dtype=np.int64)]
    dst_parts = [np.arange(n, dtype=np.int64)]
    if direction in ("successors", "both"):
        src_parts.append(child)
        dst_parts.append(parent)
    if direction in ("predecessors", "both"):
        src_parts.append(parent)
        dst_parts.append(child)
    src = np.concatenate(src_parts)
    dst = np.concatenate(dst_parts)
    order = np.lexsort((dst, src))
    src, dst = src[order], dst[order]
    if len(src):
        keep = np.ones(len(src), dtype=bool)
        keep[1:] = (src[1:] != src[:-1]) | (dst[1:] != dst[:-1])
        src, dst = src[keep], dst[keep]
    counts = np.bincount(src, minlength=n)
    indptr = np.concatenate([[0], np.cumsum(counts)]).astype(np.int64)
    return src, dst, indptr


def _leaky(x, slope):
    return np.where(x > 0, x, slope * x)


def _leaky_grad(x, slope):
    return np.where(x > 0, 1.0, slope)


def _elu(x):
    return np.where(x > 0, x, np.expm1(x))


def _elu_grad(x):
    return np.where(x > 0, 1.0, np.exp(x))


def _segment_softmax(e, src, indptr):
    """Softmax within each src segment, max-subtracted for stability."""
    seg_max = np.maximum.reduceat(e, indptr[:-1]) if len(e) else np.empty(0)
    ex = np.exp(e - seg_max[src])
    denom = np.add.reduceat(ex, indptr[:-1]) if len(ex) else np.empty(0)
    return ex / denom[src]


def _forward_layers(params: GatParams, pairs, H, config: GatConfig, keep_cache: bool):
    """Run all layers; returns (logits, caches). caches[i] holds the
    quantities the backward sweep needs for layer i."""
    src, dst, indptr = pairs
    X = np.asarray(H, dtype=np.float64)
    caches = []
    n_layers = len(params.layers)
    for li, layer in enumerate(params.layers):
        is_last = li == n_layers - 1
        outs = []
        head_caches = []
        for head in layer:
            d_out = head.W.shape[0]
            if head.W.shape[1] != X.shape[1]:
                raise GatShapeError(
                    f"layer {li}: weight expects input dim {head.W.shape[1]}, got {X.shape[1]}"
                )
            Z = X @ head.W.T
            u = Z @ head.a[:d_out]
            v = Z @ head.a[d_out:]
            e_pre = u[src] + v[dst]
            e = _leaky(e_pre, config.negative_slope)
            alpha = _segment_softmax(e, src, indptr)
            agg = np.add.reduceat(alpha[:, None] * Z[dst], indptr[:-1], axis=0) \
                if len(src) else np.zeros((X.shape[0], d_out))
            outs.append(agg)
            if keep_cache:
                head_caches.append({"Z": Z, "alpha": alpha, "e_pre": e_pre})
        if is_last:
            logits = sum(outs) / len(outs)
            if keep_cache:
                caches.append({"X": X, "heads": head_caches, "pre": None})
            return logits, caches
        concat = np.concatenate(outs, axis=1)
        if keep_cache:
            caches.append({"X": X, "heads": head_caches, "pre": concat})
        X = _elu(concat)
    raise AssertionError("unreachable")


def _softmax_rows(logits):
    m = logits.max(axis=1, keepdims=True)
    ex = np.exp(logits - m)
    return ex / ex.sum(axis=1, keepdims=True)


def gat_forward(params: GatParams, graph_like, embeddings: EmbeddingMatrix,
                config: GatConfig, return_attention: bool = False):
    """Per-message negative-class probabilities from a forward pass.

    Embedding rows must align with the graph's node order. With
    return_attention=True, also returns per-layer lists of
    (src, dst, alpha) attention triples for inspection.
    """
    n, _, _ = _edge_view(graph_like)
    if embeddings.values.shape[0] != n:
        raise GatShapeError(
            f"{embeddings.values.shape[0]} embedding rows for a {n}-node graph"
        )
    msg_ids = list(embeddings.msg_ids)
    if n == 0:
        probs = SentimentProbs(msg_ids=[], p_negative=np.empty(0), source="gat")
        return (probs, []) if return_attention else probs
    params.check_finite()
    pairs = attention_pairs(graph_like, config.direction)
    logits, caches = _forward_layers(params, pairs, embeddings.values, config,
                                     keep_cache=return_attention)
    P = _softmax_rows(logits)
    probs = SentimentProbs(msg_ids=msg_ids, p_negative=P[:, NEGATIVE_CLASS], source="gat")
    if return_attention:
        src, dst, _ = pairs
        attention = [
            [(src, dst, hc["alpha"]) for hc in cache["heads"]]
            for cache in caches
        ]
        return probs, attention
    return probs


def _loss_and_grad(params: GatParams, pairs, H, labels, mask, config: GatConfig,
                   want_grad: bool = True):
    """Mean cross-entropy over masked nodes and its exact gradient."""
    src, dst, indptr = pairs
    logits, caches = _forward_layers(params, pairs, H, config, keep_cache=True)
    n = logits.shape[0]
    m_idx = np.flatnonzero(mask) if mask.dtype == bool else np.asarray(mask, dtype=np.int64)
    if len(m_idx) == 0:
        raise GatShapeError("training mask selects no nodes")
    y = np.asarray(labels, dtype=np.int64)[m_idx]
    shift = logits - logits.max(axis=1, keepdims=True)
    logZ = np.log(np.exp(shift).sum(axis=1))
    logp = shift - logZ[:, None]
    loss = -logp[m_idx, y].mean()
    if not want_grad:
        return loss, None

    P = np.exp(logp)
    dlogits = np.zeros_like(logits)
    dlogits[m_idx] = P[m_idx]
    dlogits[m_idx, y] -= 1.0
    dlogits /= len(m_idx)

    grads = GatParams(layers=[
        [HeadParams(W=np.zeros_like(h.W), a=np.zeros_like(h.a)) for h in layer]
        for layer in params.layers
    ])
    d_up = dlogits  # gradient w.r.t. the current layer's output
    for li in range(len(params.layers) - 1, -1, -1):
        layer = params.layers[li]
        cache = caches[li]
        X = cache["X"]
        is_last = li == len(params.layers) - 1
        if is_last:
            head_grads_out = [d_up / len(layer)] * len(layer)
        else:
            d_concat = d_up * _elu_grad(cache["pre"])
            widths = [h.W.shape[0] for h in layer]
            splits = np.cumsum(widths)[:-1]
            head_grads_out = np.split(d_concat, splits, axis=1)
        dX = np.zeros_like(X)
        for gi, (head, hc, G) in enumerate(zip(layer, cache["heads"], head_grads_out)):
            d_out = head.W.shape[0]
            Z, alpha, e_pre = hc["Z"], hc["alpha"], hc["e_pre"]
            a_src, a_dst = head.a[:d_out], head.a[d_out:]
            # aggregation: out_i = sum_j alpha_ij Z_j
            dalpha = np.einsum("pd,pd->p", G[src], Z[dst])
            dZ = np.zeros_like(Z)
            np.add.at(dZ, dst, alpha[:, None] * G[src])
            # softmax within segments
            dots = np.add.reduceat(alpha * dalpha, indptr[:-1])
            de = alpha * (dalpha - dots[src])
            de_pre = de * _leaky_grad(e_pre, config.negative_slope)
            du = np.add.reduceat(de_pre, indptr[:-1])
            dv = np.zeros(len(X))
            np.add.at(dv, dst, de_pre)
            dZ += du[:, None] * a_src + dv[:, None] * a_dst
            grads.layers[li][gi].a[:d_out] = Z.T @ du
            grads.layers[li][gi].a[d_out:] = Z.T @ dv
            grads.layers[li][gi].W[...] = dZ.T @ X
            dX += dZ @ head.W
        d_up = dX
    return loss, grads


def gat_gradient(params: GatParams, graph_like, embeddings: EmbeddingMatrix,
                 labels, mask, config: GatConfig):
    """Exact reverse-mode gradient of the masked cross-entropy loss."""
    pairs = attention_pairs(graph_like, config.direction)
    mask = np.asarray(mask)
    _, grads = _loss_and_grad(params, pairs, embeddings.values.astype(np.float64),
                              labels, mask, config)
    return grads


def gat_loss(params: GatParams, graph_like, embeddings: EmbeddingMatrix,
             labels, mask, config: GatConfig) -> float:
    pairs = attention_pairs(graph_like, config.direction)
    mask = np.asarray(mask)
    loss, _ = _loss_and_grad(params, pairs, embeddings.values.astype(np.float64),
                             labels, mask, config, want_grad=False)
    return float(loss)


@dataclass
class TrainResult:
    params: GatParams
    loss: float
    converged: bool
    epochs: int


def gat_train(config: GatConfig, graph_like, embeddings: EmbeddingMatrix,
              labels, mask, seed: int = 0) -> TrainResult:
    """Full-batch gradient descent with backtracking line search.

    Accepted steps never increase the loss; the step size halves until a
    non-increasing step is found and relaxes again after acceptance. Stops
    when the loss improvement falls below config.tol, returning best-seen
    parameters (converged=False if the epoch budget ran out first).
    """
    mask = np.asarray(mask)
    pairs = attention_pairs(graph_like, config.direction)
    H = embeddings.values.astype(np.float64)
    params = init_params(config, embeddings.dim, seed=seed)
    loss, grads = _loss_and_grad(params, pairs, H, labels, mask, config)
    if not np.isfinite(loss):
        raise GatTrainingError(f"non-finite initial loss {loss}")
    best = (loss, params.copy())
    step = config.learning_rate
    epoch = 0
    converged = False
    for epoch in range(1, config.max_epochs + 1):
        vec = params.to_vector()
        gvec = grads.to_vector()
        accepted = False
        for _ in range(40):
            cand = params_from_vector(vec - step * gvec, config, params.in_dim)
            cand_loss, cand_grads = _loss_and_grad(cand, pairs, H, labels, mask, config)
            if not np.isfinite(cand_loss):
                raise GatTrainingError(f"non-finite loss at epoch {epoch}")
            if cand_loss <= loss:
                accepted = True
                break
            step *= 0.5
        if not accepted:
            converged = True  # no descent direction at float resolution
            break
        improvement = loss - cand_loss
        params, loss, grads = cand, cand_loss, cand_grads
        if loss < best[0]:
            best = (loss, params.copy())
        step = min(step * 2.0, 64.0 * config.learning_rate)
        if improvement < config.tol:
            converged = True
            break
    loss, params = best
    return TrainResult(params=params, loss=float(loss), converged=converged, epochs=epoch)
