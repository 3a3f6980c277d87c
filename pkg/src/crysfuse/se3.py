"""Invariant graph transformer over periodic-edge scalars.

Edge-wise layers refine edge features with per-channel angle and lattice
information (three channels, one per reference vector); node-wise layers
aggregate gated messages from incoming edges. All inputs are scalars
(distances, angles, lattice invariants), so the whole encoder is unchanged
under rigid motions of the crystal by construction. Attention is elementwise
query-key gating through a sigmoid — there is no normalization across
neighbors.
"""

from __future__ import annotations

import math

import numpy as np

from .nn import MLP2, BatchNorm, Linear, ParamStore, ProjectionHead
from .tensor import Tensor, concat, segment_sum


class SE3EdgeLayer:
    """Update edge features from angle and lattice channels.

    For each channel k of the three reference directions, key and value are
    built from (edge ∥ lattice-k ∥ angle-k) through shared nonlinear blocks;
    the sigmoid-gated values of the channels are summed, batch-normalized,
    and added back residually. The angle map is shared between key and value
    paths; the lattice maps are per-channel and separate for key/value.
    """

    def __init__(self, store: ParamStore, name: str, dim: int, lattice_dim: int,
                 angle_dim: int):
        self.dim = dim
        self.f_q = Linear(store, name + ".f_q", dim, dim)
        self.f_k = Linear(store, name + ".f_k", dim, dim)
        self.f_v = Linear(store, name + ".f_v", dim, dim)
        self.f_k_lat = [Linear(store, f"{name}.f_k_lat{m}", lattice_dim, dim)
                        for m in range(3)]
        self.f_v_lat = [Linear(store, f"{name}.f_v_lat{m}", lattice_dim, dim)
                        for m in range(3)]
        self.f_angle = Linear(store, name + ".f_angle", angle_dim, dim)
        self.phi_k = MLP2(store, name + ".phi_k", 3 * dim, dim, dim)
        self.phi_v = MLP2(store, name + ".phi_v", 3 * dim, dim, dim)
        self.bn_attn = BatchNorm(store, name + ".bn_attn", dim)
        self.bn_msg = BatchNorm(store, name + ".bn_msg", dim)

    def __call__(self, e: Tensor, angle_feats: np.ndarray,
                 lattice_feats: np.ndarray, training: bool) -> Tensor:
        num_edges = e.shape[0]
        scale = 1.0 / math.sqrt(self.dim)
        q = self.f_q(e)
        ke = self.f_k(e)
        ve = self.f_v(e)
        logits = []
        values = []
        for m in range(3):
            ang = self.f_angle(Tensor(angle_feats[:, m, :]))
            lat = Tensor(lattice_feats[m:m + 1])
            k_lat = self.f_k_lat[m](lat).broadcast_to((num_edges, self.dim))
            v_lat = self.f_v_lat[m](lat).broadcast_to((num_edges, self.dim))
            k_m = self.phi_k(concat([ke, k_lat, ang], axis=1))
            v_m = self.phi_v(concat([ve, v_lat, ang], axis=1))
            logits.append(q * k_m * scale)
            values.append(v_m)
        # one batch-norm over all three channels' gating logits
        alpha = self.bn_attn(concat(logits, axis=0), training).sigmoid()
        gated = alpha * concat(values, axis=0)
        msg = gated.reshape(3, num_edges, self.dim).sum(axis=0)
        return (e + self.bn_msg(msg, training)).softplus()


class SE3NodeLayer:
    """Aggregate gated messages from each node's incoming edges.

    Keys/values combine the center node, the neighbor node, and the edge
    feature (center and neighbor have separate maps; the edge map is shared
    between key and value paths). Messages are summed per node, normalized,
    and added residually.
    """

    def __init__(self, store: ParamStore, name: str, dim: int):
        self.dim = dim
        self.f_q = Linear(store, name + ".f_q", dim, dim)
        self.f_k_ctr = Linear(store, name + ".f_k_ctr", dim, dim)
        self.f_k_nbr = Linear(store, name + ".f_k_nbr", dim, dim)
        self.f_v_ctr = Linear(store, name + ".f_v_ctr", dim, dim)
        self.f_v_nbr = Linear(store, name + ".f_v_nbr", dim, dim)
        self.f_e = Linear(store, name + ".f_e", dim, dim)
        self.phi_k = MLP2(store, name + ".phi_k", 3 * dim, dim, dim)
        self.phi_v = MLP2(store, name + ".phi_v", 3 * dim, dim, dim)
        self.bn_attn = BatchNorm(store, name + ".bn_attn", dim)
        self.bn_msg = BatchNorm(store, name + ".bn_msg", dim)

    def __call__(self, h: Tensor, e: Tensor, src: np.ndarray, dst: np.ndarray,
                 training: bool) -> Tensor:
        num_nodes = h.shape[0]
        scale = 1.0 / math.sqrt(self.dim)
        q = self.f_q(h).take(src)
        fe = self.f_e(e)
        k = self.phi_k(concat([self.f_k_ctr(h).take(src),
                               self.f_k_nbr(h).take(dst), fe], axis=1))
        v = self.phi_v(concat([self.f_v_ctr(h).take(src),
                               self.f_v_nbr(h).take(dst), fe], axis=1))
        alpha = self.bn_attn(q * k * scale, training).sigmoid()
        msg = segment_sum(alpha * v, src, num_nodes)
        return (h + self.bn_msg(msg, training)).softplus()


class SE3Encoder:
    """Edge-wise stack, node-wise stack, mean pool, projection head."""

    def __init__(self, store: ParamStore, name: str, *, width: int,
                 atom_dim: int, num_rbf: int, num_angle_rbf: int,
                 edge_layers: int, node_layers: int):
        lattice_dim = num_rbf + 2  # basis-vector length rbf + two pairwise cosines
        self.node_proj = Linear(store, name + ".node_proj", atom_dim, width)
        self.edge_proj = Linear(store, name + ".edge_proj", num_rbf, width)
        self.edge_layers = [
            SE3EdgeLayer(store, f"{name}.edge_layers.{i}", width, lattice_dim,
                         num_angle_rbf)
            for i in range(edge_layers)]
        self.node_layers = [
            SE3NodeLayer(store, f"{name}.node_layers.{i}", width)
            for i in range(node_layers)]
        self.head = ProjectionHead(store, name + ".head", width)

    def __call__(self, atom_feats: np.ndarray, edge_rbf: np.ndarray,
                 angle_feats: np.ndarray, lattice_feats: np.ndarray,
                 src: np.ndarray, dst: np.ndarray, training: bool
                 ) -> tuple[Tensor, Tensor, Tensor]:
        """Returns (node embeddings (N, d), edge embeddings (E, d), pooled (1, d))."""
        e = self.edge_proj(Tensor(edge_rbf))
        for layer in self.edge_layers:
            e = layer(e, angle_feats, lattice_feats, training)
        h = self.node_proj(Tensor(atom_feats))
        for layer in self.node_layers:
            h = layer(h, e, src, dst, training)
        pooled = self.head(h.mean(axis=0, keepdims=True))
        return h, e, pooled


def lattice_scalars(ref_vectors: np.ndarray, rbf_fn) -> np.ndarray:
    """Invariant per-channel lattice features from the reference frame.

    Channel m gets the basis expansion of |u_m| plus the cosines of u_m
    against the other two reference vectors, shape (3, num_rbf + 2).
    """
    refs = np.asarray(ref_vectors, dtype=np.float64).reshape(3, 3)
    lengths = np.linalg.norm(refs, axis=1)
    rows = []
    for m in range(3):
        a, b = (m + 1) % 3, (m + 2) % 3
        cos_a = refs[m] @ refs[a] / (lengths[m] * lengths[a])
        cos_b = refs[m] @ refs[b] / (lengths[m] * lengths[b])
        rows.append(np.concatenate([rbf_fn(lengths[m]), [cos_a, cos_b]]))
    return np.stack(rows)
