"""Interaction and transition graphs, attention-scored edge pruning, and
graph-convolution embedding of POIs.

The user-POI interaction graph is bipartite; convolution runs over the
symmetric block adjacency ``[[0, A], [A^T, 0]]`` with user nodes first
(rows ``0..n_users-1``) and POI nodes after. The directed POI transition
graph is symmetrized (``A + A^T``) before the same self-loop plus
symmetric-normalization treatment.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

LEAKY_SLOPE = 0.01


@dataclass(frozen=True)
class InteractionGraph:
    """Bipartite user-POI edges weighted by visit counts.

    Edge arrays are sorted by (user, poi) and hold at most one edge per pair.
    """

    n_users: int
    n_pois: int
    users: np.ndarray
    pois: np.ndarray
    weights: np.ndarray

    @property
    def n_edges(self) -> int:
        return len(self.users)


@dataclass(frozen=True)
class TransitionGraph:
    """Directed POI-to-POI edges weighted by consecutive-visit counts."""

    n_pois: int
    src: np.ndarray
    dst: np.ndarray
    weights: np.ndarray

    @property
    def n_edges(self) -> int:
        return len(self.src)


def _aggregate_pairs(pairs):
    """Deduplicate (a, b) pairs, returning sorted unique pairs and counts."""
    arr = np.asarray(pairs, dtype=np.int64).reshape(-1, 2)
    if arr.size == 0:
        return np.empty((0, 2), dtype=np.int64), np.empty(0, dtype=np.int64)
    uniq, counts = np.unique(arr, axis=0, return_counts=True)
    return uniq, counts.astype(np.int64)


def build_interaction_graph(windows, n_users: int, n_pois: int) -> InteractionGraph:
    """Edge weight = number of times the user visited the POI as an input item."""
    if not windows:
        raise ValueError("no windows given")
    pairs = [(w.user, p) for w in windows for p in w.input_pois]
    uniq, counts = _aggregate_pairs(pairs)
    return InteractionGraph(
        n_users=n_users,
        n_pois=n_pois,
        users=uniq[:, 0].copy(),
        pois=uniq[:, 1].copy(),
        weights=counts,
    )


def build_transition_graph(windows, n_pois: int) -> TransitionGraph:
    """Edge weight = count of consecutive visits src -> dst across all users."""
    if not windows:
        raise ValueError("no windows given")
    pairs = [
        (p, q) for w in windows for p, q in zip(w.input_pois, w.label_pois)
    ]
    uniq, counts = _aggregate_pairs(pairs)
    return TransitionGraph(
        n_pois=n_pois,
        src=uniq[:, 0].copy(),
        dst=uniq[:, 1].copy(),
        weights=counts,
    )


class EdgeScorer(nn.Module):
    """Two-layer MLP scoring one edge from concatenated endpoint embeddings.

    Outputs pass through a sigmoid, so scores always lie in (0, 1).
    """

    def __init__(self, dim: int, hidden: int):
        super().__init__()
        self.lin_a = nn.Linear(2 * dim, hidden)
        self.lin_b = nn.Linear(hidden, 1)

    def forward(self, user_vecs: torch.Tensor, poi_vecs: torch.Tensor) -> torch.Tensor:
        if user_vecs.shape != poi_vecs.shape:
            raise ValueError("user and poi embedding rows must have equal shapes")
        h = F.leaky_relu(self.lin_a(torch.cat([user_vecs, poi_vecs], dim=-1)), LEAKY_SLOPE)
        return torch.sigmoid(self.lin_b(h)).squeeze(-1)


def score_edges(graph: InteractionGraph, user_emb, poi_emb, scorer: EdgeScorer):
    """Score every existing edge of the interaction graph."""
    if user_emb.shape[0] != graph.n_users or poi_emb.shape[0] != graph.n_pois:
        raise ValueError("embedding row counts must match graph node counts")
    iu = torch.as_tensor(graph.users, dtype=torch.long, device=user_emb.device)
    ip = torch.as_tensor(graph.pois, dtype=torch.long, device=user_emb.device)
    return scorer(user_emb[iu], poi_emb[ip])


def kept_edge_mask(users: torch.Tensor, scores: torch.Tensor, delta: float) -> torch.Tensor:
    """Boolean keep-mask for thresholded edges with a per-user isolation guard.

    Edges scoring below ``delta`` are dropped, except that a user whose edges
    would all vanish keeps its single highest-scoring edge (first occurrence
    on ties, i.e. the lowest POI index when edges are (user, poi)-sorted).
    """
    if users.shape != scores.shape:
        raise ValueError("users and scores must align")
    kept = scores >= delta
    uniq, counts = torch.unique_consecutive(users, return_counts=True)
    start = 0
    for c in counts.tolist():
        seg = slice(start, start + c)
        if not bool(kept[seg].any()):
            kept[start + int(torch.argmax(scores[seg]))] = True
        start += c
    return kept


def denoise(graph: InteractionGraph, scores, delta: float) -> InteractionGraph:
    """Drop low-scoring edges, guarding every user against isolation.

    ``scores`` aligns with the graph's edge arrays. Retained edges keep their
    raw interaction counts.
    """
    scores_t = torch.as_tensor(np.asarray(scores, dtype=np.float64))
    if scores_t.shape[0] != graph.n_edges:
        raise ValueError("scores must cover all edges")
    users_t = torch.as_tensor(graph.users)
    kept = kept_edge_mask(users_t, scores_t, delta).numpy()
    return InteractionGraph(
        n_users=graph.n_users,
        n_pois=graph.n_pois,
        users=graph.users[kept],
        pois=graph.pois[kept],
        weights=graph.weights[kept],
    )


def _propagate(src, dst, weights, n_nodes, features, weight_mat):
    """LeakyReLU(D^-1/2 (A + I) D^-1/2 X W) over an edge list.

    ``src``/``dst``/``weights`` describe directed messages ``dst <- src``;
    a symmetric adjacency must list both directions. Self-loops of weight 1
    are added here, so isolated nodes still propagate their own features.
    """
    if features.shape[0] != n_nodes:
        raise ValueError(f"features must have {n_nodes} rows, got {features.shape[0]}")
    if weight_mat.shape[0] != features.shape[1]:
        raise ValueError("feature width must match the convolution weight")
    h = features @ weight_mat
    deg = torch.ones(n_nodes, dtype=features.dtype, device=features.device)
    out = torch.zeros_like(h)
    if len(src) > 0:
        deg = deg.scatter_add(0, dst, weights)
        coef = weights / torch.sqrt(deg[src] * deg[dst])
        out = out.index_add(0, dst, coef.unsqueeze(1) * h[src])
    out = out + (1.0 / deg).unsqueeze(1) * h
    return F.leaky_relu(out, LEAKY_SLOPE)


def _block_edges(users, pois, n_users, device, weights):
    """Directed message list for the bipartite block adjacency (both directions)."""
    iu = torch.as_tensor(users, dtype=torch.long, device=device)
    ip = torch.as_tensor(pois, dtype=torch.long, device=device) + n_users
    src = torch.cat([iu, ip])
    dst = torch.cat([ip, iu])
    w = torch.cat([weights, weights])
    return src, dst, w


def _symmetrized_edges(graph: TransitionGraph, device, dtype):
    """A + A^T over the directed transition edge list, duplicates summed."""
    fwd = np.stack([graph.src, graph.dst], axis=1)
    bwd = np.stack([graph.dst, graph.src], axis=1)
    allp = np.concatenate([fwd, bwd], axis=0)
    w = np.concatenate([graph.weights, graph.weights]).astype(np.float64)
    uniq, inv = np.unique(allp, axis=0, return_inverse=True)
    summed = np.zeros(len(uniq), dtype=np.float64)
    np.add.at(summed, inv, w)
    src = torch.as_tensor(uniq[:, 0], dtype=torch.long, device=device)
    dst = torch.as_tensor(uniq[:, 1], dtype=torch.long, device=device)
    return src, dst, torch.as_tensor(summed, dtype=dtype, device=device)


def gcn_embed(graph, node_features: torch.Tensor, weight_mat: torch.Tensor) -> torch.Tensor:
    """One symmetric-normalized graph convolution over either graph type.

    For an :class:`InteractionGraph`, ``node_features`` must stack user rows
    before POI rows (``n_users + n_pois`` rows); for a
    :class:`TransitionGraph` it must have ``n_pois`` rows.
    """
    dtype, device = node_features.dtype, node_features.device
    if isinstance(graph, InteractionGraph):
        n_nodes = graph.n_users + graph.n_pois
        w = torch.as_tensor(graph.weights, dtype=dtype, device=device)
        src, dst, w = _block_edges(graph.users, graph.pois, graph.n_users, device, w)
    elif isinstance(graph, TransitionGraph):
        n_nodes = graph.n_pois
        src, dst, w = _symmetrized_edges(graph, device, dtype)
    else:
        raise TypeError(f"unsupported graph type {type(graph).__name__}")
    return _propagate(src, dst, w, n_nodes, node_features, weight_mat)


def fuse_poi_embeddings(emb_a, emb_b):
    """Elementwise mean of the two POI embedding tables."""
    if emb_a.shape != emb_b.shape:
        raise ValueError(f"shape mismatch: {tuple(emb_a.shape)} vs {tuple(emb_b.shape)}")
    return 0.5 * (emb_a + emb_b)


class GraphAdjustment(nn.Module):
    """Per-step edge scoring, pruning, and fused POI embedding.

    ``mode`` selects how the interaction graph feeds the embedding:

    - ``denoise``: score edges, drop those below ``delta`` (guarding users
      against isolation), then convolve.
    - ``raw``: convolve the unpruned graph; the scorer is unused.

    ``gradient_gate`` controls how retained edges enter the adjacency:
    ``score-scaled`` multiplies each kept edge's count by its attention
    score so the scorer receives gradient; ``hard`` uses raw counts and
    blocks gradient into the scorer entirely.
    """

    def __init__(
        self,
        interaction: InteractionGraph,
        transition: TransitionGraph,
        dim: int,
        denoiser_hidden: int = 10,
        delta: float = 0.5,
        gradient_gate: str = "score-scaled",
        mode: str = "denoise",
    ):
        super().__init__()
        if mode not in ("denoise", "raw"):
            raise ValueError(f"unknown graph mode {mode!r}")
        if gradient_gate not in ("score-scaled", "hard"):
            raise ValueError(f"unknown gradient gate {gradient_gate!r}")
        if not 0.0 <= delta < 1.0:
            raise ValueError("delta must be in [0, 1)")
        self.interaction = interaction
        self.transition = transition
        self.n_users = interaction.n_users
        self.n_pois = interaction.n_pois
        self.delta = delta
        self.gradient_gate = gradient_gate
        self.mode = mode
        self.scorer = EdgeScorer(dim, denoiser_hidden)
        self.w_in = nn.Parameter(torch.empty(dim, dim))
        self.w_tr = nn.Parameter(torch.empty(dim, dim))
        nn.init.xavier_uniform_(self.w_in)
        nn.init.xavier_uniform_(self.w_tr)
        self.register_buffer("edge_users", torch.as_tensor(interaction.users, dtype=torch.long))
        self.register_buffer("edge_pois", torch.as_tensor(interaction.pois, dtype=torch.long))
        self.register_buffer(
            "edge_counts", torch.as_tensor(interaction.weights, dtype=torch.get_default_dtype())
        )

    def forward(self, user_emb: torch.Tensor, poi_emb: torch.Tensor):
        """Return ``(poi_table, scores, kept)`` for the current embeddings.

        ``scores`` and ``kept`` are None in ``raw`` mode.
        """
        if user_emb.shape[1] != poi_emb.shape[1]:
            raise ValueError("user and poi embeddings must share a dimension")
        dtype, device = poi_emb.dtype, poi_emb.device
        counts = self.edge_counts.to(dtype)

        scores = kept = None
        if self.mode == "denoise":
            scores = self.scorer(user_emb[self.edge_users], poi_emb[self.edge_pois])
            with torch.no_grad():
                kept = kept_edge_mask(self.edge_users, scores.detach(), self.delta)
            gate = kept.to(dtype)
            if self.gradient_gate == "score-scaled":
                edge_w = counts * scores * gate
            else:
                edge_w = counts * gate
        else:
            edge_w = counts

        feats = torch.cat([user_emb, poi_emb], dim=0)
        src, dst, w = _block_edges(
            self.edge_users, self.edge_pois, self.n_users, device, edge_w
        )
        emb_all = _propagate(src, dst, w, self.n_users + self.n_pois, feats, self.w_in)
        poi_side = emb_all[self.n_users :]

        tsrc, tdst, tw = _symmetrized_edges(self.transition, device, dtype)
        emb_tr = _propagate(tsrc, tdst, tw, self.n_pois, poi_emb, self.w_tr)
        return fuse_poi_embeddings(poi_side, emb_tr), scores, kept
