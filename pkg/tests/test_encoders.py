"""Encoder-level tests: shapes, lattice invariants, symmetry spot checks.

The heavyweight symmetry sweeps live in the acceptance tests; here we run the
same checks at tiny sizes plus the structural details the sweeps can't see.
"""

import dataclasses

import numpy as np
import pytest

from crysfuse.checks import (
    check_permutation_invariance,
    check_periodicity,
    check_se3_invariance,
    check_so3_equivariance,
    random_rotation,
)
from crysfuse.config import RunConfig
from crysfuse.featurize import rbf_expand, uniform_rbf
from crysfuse.model import MGTModel
from crysfuse.nn import ParamStore
from crysfuse.rng import stream
from crysfuse.se3 import lattice_scalars
from crysfuse.so3 import TensorProductLayer
from crysfuse.structures import CrystalStructure
from crysfuse.tensor import set_default_dtype

TINY = RunConfig(width=8, num_rbf=4, num_angle_rbf=4, cutoff=3.5,
                 max_neighbors=8, l_max=1, seed=0)

NACL = CrystalStructure(
    (11, 17), [[0.0, 0.0, 0.0], [0.5, 0.5, 0.5]], np.eye(3) * 4.0)


@pytest.fixture()
def model():
    m = MGTModel(TINY)
    yield m
    set_default_dtype("f64")


class TestLatticeScalars:

    def spec_fn(self, k=4):
        spec = uniform_rbf(0.0, 3.5, k)
        return lambda x: rbf_expand(np.array([x]), spec)[0]

    def test_cubic_values(self):
        feats = lattice_scalars(np.eye(3), self.spec_fn())
        assert feats.shape == (3, 6)
        # orthogonal axes: both pairwise cosines are zero
        assert np.allclose(feats[:, 4:], 0.0, atol=1e-15)
        # all three rows identical for a cube
        assert np.allclose(feats[0], feats[1])

    def test_rotation_invariant(self):
        gen = stream(9, "latrot")
        refs = gen.normal(size=(3, 3)) + np.eye(3) * 3
        rot = random_rotation(gen)
        a = lattice_scalars(refs, self.spec_fn())
        b = lattice_scalars(refs @ rot.T, self.spec_fn())
        assert np.max(np.abs(a - b)) < 1e-13

    def test_scale_sensitive(self):
        a = lattice_scalars(np.eye(3), self.spec_fn())
        b = lattice_scalars(2.0 * np.eye(3), self.spec_fn())
        assert not np.allclose(a, b)


class TestShapes:

    def test_encode_shapes(self, model):
        inp = model.inputs_for_structure(NACL)
        enc = model.encode(inp, training=False)
        n, e = 2, len(inp.graph.src)
        assert enc.se3_nodes.shape == (n, 8)
        assert enc.se3_edges.shape == (e, 8)
        assert enc.e1.shape == (1, 8)
        assert enc.e2.shape == (1, 8)
        # l_max=1: degree blocks 0 and 1, channels = width // 4
        assert set(enc.so3.layer1) == {0, 1}
        assert enc.so3.layer1[0].shape == (n, 2, 1)
        assert enc.so3.layer1[1].shape == (n, 2, 3)
        assert enc.so3.layer2_scalars.shape == (n, 2)
        assert enc.so3.nodes.shape == (n, 8)

    def test_forward_batch_shapes(self, model):
        inputs = [model.inputs_for_structure(NACL) for _ in range(3)]
        out = model.forward(inputs, training=False)
        assert out.e1.shape == (3, 8)
        assert out.e2.shape == (3, 8)
        assert out.prediction.shape == (3, 1)
        assert out.scores.shape == (3, 2)

    def test_predict_raw_is_flat(self, model):
        assert model.predict_raw([NACL, NACL]).shape == (2,)

    def test_denoise_head_shapes(self, model):
        inp = model.inputs_for_structure(NACL)
        enc = model.encode(inp, training=False)
        e = len(inp.graph.src)
        assert model.predict_angle_noise(enc).shape == (e, 3)
        assert model.predict_distance_noise(enc, inp).shape == (e, 1)

    def test_noisy_input_overrides_land_in_right_views(self, model):
        g = model.build_graph(NACL)
        clean = model.make_inputs(g)
        noisy = model.make_inputs(g, angles=g.angles + 0.1,
                                  so3_distances=g.distance + 0.1)
        # invariant-view distances stay clean; angle and radial views move
        assert np.array_equal(noisy.se3_edge_rbf, clean.se3_edge_rbf)
        assert not np.array_equal(noisy.se3_angle_rbf, clean.se3_angle_rbf)
        assert not np.array_equal(noisy.so3_edge_rbf, clean.so3_edge_rbf)
        assert np.array_equal(noisy.sh[1], clean.sh[1])  # directions untouched


class TestPerStructureNormalization:

    def test_batch_order_does_not_leak(self, model):
        other = CrystalStructure((26,), [[0.0, 0.0, 0.0]], np.eye(3) * 3.0)
        a = model.inputs_for_structure(NACL)
        b = model.inputs_for_structure(other)
        ab = model.forward([a, b], training=True).prediction.data
        ba = model.forward([b, a], training=True).prediction.data
        assert np.array_equal(ab, ba[::-1])


class TestSymmetrySpotChecks:
    """Tiny-size versions of the full audits (those run in acceptance)."""

    def test_se3_invariance(self, model):
        res = check_se3_invariance(model, num_structures=2,
                                   actions_per_structure=2, seed=1)
        assert res.passed, res.detail

    def test_so3_equivariance(self, model):
        res = check_so3_equivariance(model, num_rotations=2, seed=1,
                                     num_structures=2)
        assert res.passed, res.detail

    def test_permutation_invariance(self, model):
        res = check_permutation_invariance(model, num_structures=3, seed=1)
        assert res.passed, res.detail

    def test_periodicity(self, model):
        res = check_periodicity(model, num_structures=3, seed=1)
        assert res.passed, res.detail


class TestTensorProductLayer:

    def test_forbidden_path_rejected(self):
        store = ParamStore(0)
        with pytest.raises(ValueError, match="forbidden"):
            TensorProductLayer(store, "tp", channels=2, num_rbf=4,
                               paths=[(0, 1, 2)])

    def test_width_must_divide_by_four(self):
        bad = dataclasses.replace(TINY, width=10)
        assert any("divisible by 4" in e for e in bad.validate())


class TestPrecisionSwitch:

    def test_f32_model_params_are_f32(self):
        try:
            m32 = MGTModel(dataclasses.replace(TINY, precision="f32"))
            assert all(p.data.dtype == np.float32
                       for p in m32.store.params.values())
            pred = m32.predict_raw([NACL])
            assert pred.dtype == np.float32
        finally:
            set_default_dtype("f64")

    def test_f64_is_default(self, model):
        assert all(p.data.dtype == np.float64
                   for p in model.store.params.values())
