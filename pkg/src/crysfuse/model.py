"""The full dual-view property model.

One forward pass builds, per structure: the invariant encoder over edge
scalars (distances, angles, lattice invariants), the equivariant encoder
over edge directions and radial features, and the fusion head over the two
pooled embeddings. Per-edge denoising heads for the self-supervised
objective hang off the final edge/node embeddings.

Batch statistics (batch norm) are computed per structure — each crystal is
normalized over its own nodes and edges — so evaluation order never leaks
between structures.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .config import RunConfig
from .featurize import (AtomTable, embed_angles, embed_atoms, embed_edges,
                        load_atom_table, one_hot_table, rbf_expand,
                        uniform_rbf)
from .graph import PeriodicGraph, build_graph
from .harmonics import spherical_harmonics
from .moe import ConcatHead, MoEHead
from .nn import MLP2, ParamStore
from .se3 import SE3Encoder, lattice_scalars
from .so3 import SO3Encoder, SO3Result
from .structures import CrystalStructure
from .tensor import Tensor, concat, set_default_dtype


@dataclass
class ModelInputs:
    """Precomputed constant features for one structure's forward pass."""

    graph: PeriodicGraph
    atom_feats: np.ndarray       # (N, atom_dim)
    se3_edge_rbf: np.ndarray     # (E, K) — clean distances
    se3_angle_rbf: np.ndarray    # (E, 3, Ka) — possibly perturbed angles
    lattice_feats: np.ndarray    # (3, K + 2)
    so3_edge_rbf: np.ndarray     # (E, K) — possibly perturbed distances
    sh: list[np.ndarray]         # per-degree (E, 2l+1) edge-direction harmonics


@dataclass
class EncodedStructure:
    se3_nodes: Tensor   # (N, d)
    se3_edges: Tensor   # (E, d)
    e1: Tensor          # (1, d)
    so3: SO3Result

    @property
    def e2(self) -> Tensor:
        return self.so3.pooled


@dataclass
class ModelOutputs:
    encoded: list[EncodedStructure]
    e1: Tensor            # (B, d)
    e2: Tensor            # (B, d)
    prediction: Tensor    # (B, 1)
    scores: np.ndarray    # (B, 2) router weights (nan for the concat head)


class MGTModel:
    """Dual-encoder model with a switchable fusion head."""

    def __init__(self, cfg: RunConfig):
        errs = cfg.validate()
        if errs:
            raise ValueError("invalid config: " + "; ".join(errs))
        self.cfg = cfg
        set_default_dtype(cfg.precision)
        self.store = ParamStore(cfg.seed)
        self.atom_table: AtomTable = (
            one_hot_table() if cfg.atom_table is None
            else load_atom_table(cfg.atom_table))
        self.dist_spec = uniform_rbf(0.0, cfg.cutoff, cfg.num_rbf)
        self.angle_spec = uniform_rbf(-1.0, 1.0, cfg.num_angle_rbf)
        d = cfg.width
        self.se3 = SE3Encoder(
            self.store, "se3", width=d, atom_dim=self.atom_table.dim,
            num_rbf=cfg.num_rbf, num_angle_rbf=cfg.num_angle_rbf,
            edge_layers=cfg.se3_edge_layers, node_layers=cfg.se3_node_layers)
        self.so3 = SO3Encoder(
            self.store, "so3", width=d, atom_dim=self.atom_table.dim,
            num_rbf=cfg.num_rbf, l_max=cfg.l_max,
            node_layers=cfg.so3_node_layers)
        if cfg.head == "moe":
            self.fusion = MoEHead(self.store, "moe", d)
        else:
            self.fusion = ConcatHead(self.store, "concat", d)
        self.denoise_se3 = MLP2(self.store, "denoise.se3", d, d, 3)
        self.denoise_so3 = MLP2(self.store, "denoise.so3",
                                2 * d + cfg.num_rbf, d, 1)

    # -- input preparation -------------------------------------------------

    def build_graph(self, s: CrystalStructure) -> PeriodicGraph:
        return build_graph(s, r=self.cfg.cutoff,
                           max_neighbors=self.cfg.max_neighbors,
                           image_budget=self.cfg.image_budget)

    def make_inputs(self, graph: PeriodicGraph,
                    angles: np.ndarray | None = None,
                    so3_distances: np.ndarray | None = None) -> ModelInputs:
        """Featurize one graph; pass perturbed angles/distances to build the
        noisy views used in pretraining (directions are never perturbed)."""
        angles = graph.angles if angles is None else angles
        so3_dist = graph.distance if so3_distances is None else so3_distances
        return ModelInputs(
            graph=graph,
            atom_feats=embed_atoms(graph.structure.species, self.atom_table),
            se3_edge_rbf=embed_edges(graph.distance, self.dist_spec),
            se3_angle_rbf=embed_angles(angles, self.angle_spec),
            lattice_feats=lattice_scalars(
                graph.ref_vectors[0],
                lambda x: rbf_expand(np.array([x]), self.dist_spec)[0]),
            so3_edge_rbf=embed_edges(so3_dist, self.dist_spec),
            sh=spherical_harmonics(graph.vector, self.cfg.l_max),
        )

    def inputs_for_structure(self, s: CrystalStructure) -> ModelInputs:
        return self.make_inputs(self.build_graph(s))

    # -- forward -----------------------------------------------------------

    def encode(self, inp: ModelInputs, training: bool) -> EncodedStructure:
        src, dst = inp.graph.src, inp.graph.dst
        nodes, edges, e1 = self.se3(
            inp.atom_feats, inp.se3_edge_rbf, inp.se3_angle_rbf,
            inp.lattice_feats, src, dst, training)
        so3 = self.so3(inp.atom_feats, inp.so3_edge_rbf, inp.sh, src, dst,
                       training)
        return EncodedStructure(se3_nodes=nodes, se3_edges=edges, e1=e1, so3=so3)

    def forward(self, inputs: list[ModelInputs], training: bool,
                router_override: np.ndarray | None = None) -> ModelOutputs:
        encoded = [self.encode(inp, training) for inp in inputs]
        e1 = concat([enc.e1 for enc in encoded], axis=0)
        e2 = concat([enc.e2 for enc in encoded], axis=0)
        prediction, scores = self.fusion(e1, e2, router_override)
        return ModelOutputs(encoded=encoded, e1=e1, e2=e2,
                            prediction=prediction, scores=scores)

    def predict_raw(self, structures: list[CrystalStructure]) -> np.ndarray:
        """Eval-mode normalized-space predictions, shape (B,)."""
        inputs = [self.inputs_for_structure(s) for s in structures]
        out = self.forward(inputs, training=False)
        return out.prediction.data.ravel().copy()

    # -- denoising heads ----------------------------------------------------

    def predict_angle_noise(self, enc: EncodedStructure) -> Tensor:
        """Per-edge 3-channel angle-noise estimate from final edge embeddings."""
        return self.denoise_se3(enc.se3_edges)

    def predict_distance_noise(self, enc: EncodedStructure,
                               inp: ModelInputs) -> Tensor:
        """Per-edge distance-noise estimate from endpoint nodes + radial features."""
        src, dst = inp.graph.src, inp.graph.dst
        feats = concat([enc.so3.nodes.take(src), enc.so3.nodes.take(dst),
                        Tensor(inp.so3_edge_rbf)], axis=1)
        return self.denoise_so3(feats)
