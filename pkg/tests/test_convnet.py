import numpy as np
import pytest

from evidnet import convnet as cn
from evidnet import evidential as ev
from evidnet.autodiff import Tensor
from evidnet.exceptions import (
    ArgumentError,
    CheckpointError,
    DimensionError,
    UnsupportedVersionError,
)

from conftest import central_difference, rel_error

SMALL = cn.ModelConfig(
    input_size=8,
    conv_blocks=(cn.ConvBlockConfig(4),),
    dense_width=8,
    seed=3,
)


def small_model():
    return cn.ConvNet(SMALL)


class TestModelConfig:
    def test_feature_sizes(self):
        assert cn.ModelConfig().feature_sizes() == [32, 16, 8]
        assert SMALL.feature_sizes() == [4]

    def test_rejects_over_pooled(self):
        with pytest.raises(ArgumentError):
            cn.ModelConfig(input_size=16)  # 16 -> 8 -> 4 -> 2

    def test_rejects_single_class(self):
        with pytest.raises(ArgumentError):
            cn.ModelConfig(n_classes=1)

    def test_dict_round_trip(self):
        cfg = cn.ModelConfig(input_size=32, dense_width=16, seed=9)
        assert cn.ModelConfig.from_dict(cfg.to_dict()) == cfg


class TestForward:
    def test_output_shape(self, rng):
        model = small_model()
        out = model.forward(rng.uniform(size=(5, 3, 8, 8)))
        assert out.shape == (5, 2)

    def test_chunking_is_invisible(self, rng):
        model = small_model()
        x = rng.uniform(size=(7, 3, 8, 8))
        # BLAS kernels round differently for different batch shapes, so
        # equality holds to float64 noise, not bit-for-bit
        assert np.allclose(
            model.forward(x, batch_size=3), model.forward(x, batch_size=64), atol=1e-12
        )

    def test_input_validation(self, rng):
        model = small_model()
        with pytest.raises(DimensionError):
            model.forward(rng.uniform(size=(2, 3, 9, 9)))
        with pytest.raises(DimensionError):
            model.forward(rng.uniform(size=(3, 8, 8)))

    def test_zero_weights_give_maximal_shared_uncertainty(self, rng):
        model = small_model()
        for p in model.params.values():
            p.data = np.zeros_like(p.data)
        logits = model.forward(rng.uniform(size=(4, 3, 8, 8)))
        assert np.array_equal(logits, np.zeros((4, 2)))
        # softplus(0) evidence in both classes: u = K / (K + K ln 2)
        want = 2.0 / (2.0 + 2.0 * np.log(2.0))
        for row in logits:
            assert ev.belief(ev.evidence_from_logits(row)).uncertainty == pytest.approx(
                want, abs=1e-12
            )

    def test_seed_determines_weights(self):
        a, b = cn.ConvNet(SMALL), cn.ConvNet(SMALL)
        for name in a.params:
            assert np.array_equal(a.params[name].data, b.params[name].data)

    def test_features_head_composition_matches_forward(self, rng):
        model = cn.ConvNet(cn.ModelConfig(input_size=32, seed=1))
        x = rng.uniform(size=(2, 3, 32, 32))
        whole = model.forward_t(Tensor(x)).data
        for layer in model.conv_layer_names:
            split = model.head_t(model.features_t(Tensor(x), layer), layer).data
            assert np.allclose(whole, split, atol=1e-12)

    def test_unknown_cam_layer(self, rng):
        with pytest.raises(ArgumentError):
            small_model().features_t(Tensor(rng.uniform(size=(1, 3, 8, 8))), "conv9")


class TestBilinearUpsample:
    def test_constant_preserved(self):
        out = cn._bilinear_upsample(np.full((3, 3), 0.4), 8, 8)
        assert np.allclose(out, 0.4, atol=1e-12)

    def test_corner_alignment(self):
        a = np.array([[0.0, 1.0], [2.0, 3.0]])
        out = cn._bilinear_upsample(a, 4, 4)
        assert out[0, 0] == 0.0 and out[0, -1] == 1.0
        assert out[-1, 0] == 2.0 and out[-1, -1] == 3.0
        # interior is the tensor-product linear interpolant
        ys = np.linspace(0.0, 1.0, 4)
        want = ys[:, None] * 2.0 + ys[None, :] * 1.0
        assert np.allclose(out, want, atol=1e-12)


class TestGradCam:
    def test_map_shape_and_range(self, rng):
        model = small_model()
        sal = cn.grad_cam(model, rng.uniform(size=(3, 8, 8)))
        assert sal.values.shape == (8, 8)
        assert sal.values.min() >= 0.0 and sal.values.max() <= 1.0
        assert sal.source_layer == "conv1"

    def test_zero_weights_give_zero_map(self, rng):
        model = small_model()
        for p in model.params.values():
            p.data = np.zeros_like(p.data)
        sal = cn.grad_cam(model, rng.uniform(size=(3, 8, 8)))
        assert np.array_equal(sal.values, np.zeros((8, 8)))

    def test_batch_matches_single(self, rng):
        model = small_model()
        x = rng.uniform(size=(5, 3, 8, 8))
        batched = cn.grad_cam_batch(model, x, batch_size=2)
        for i, sal in enumerate(batched):
            single = cn.grad_cam(model, x[i])
            # equality up to batch-shape-dependent BLAS rounding
            assert np.allclose(sal.values, single.values, atol=1e-10)

    def test_explicit_target_class(self, rng):
        model = small_model()
        x = rng.uniform(size=(2, 3, 8, 8))
        per_class = [cn.grad_cam_batch(model, x, target_classes=k) for k in (0, 1)]
        picked = np.argmax(model.forward(x), axis=1)
        default = cn.grad_cam_batch(model, x)
        for i in range(2):
            assert np.array_equal(default[i].values, per_class[picked[i]][i].values)

    def test_head_gradient_matches_finite_differences(self, rng):
        """The pooled-gradient weights underlying the map agree with numeric
        differentiation of the class logit with respect to the activation."""
        model = small_model()
        # a real post-relu activation is full of exact zeros, which tie under
        # max pooling and break finite differences; use an untied stand-in
        data = rng.uniform(0.1, 1.0, size=(1, 4, 8, 8))
        leaf = Tensor(data, requires_grad=True)
        logits = model.head_t(leaf)
        seed = np.zeros_like(logits.data)
        seed[0, 1] = 1.0
        logits.backward(seed)

        def forward(a):
            return float(model.head_t(Tensor(a)).data[0, 1])

        numeric = central_difference(forward, data, eps=1e-6)
        assert rel_error(leaf.grad, numeric) < 1e-4

    def test_map_recomputed_from_definition(self, rng):
        model = small_model()
        x = rng.uniform(size=(1, 3, 8, 8))
        sal = cn.grad_cam(model, x[0], target_class=0)

        activation = model.features_t(Tensor(x))
        leaf = Tensor(activation.data, requires_grad=True)
        logits = model.head_t(leaf)
        seed = np.zeros_like(logits.data)
        seed[0, 0] = 1.0
        logits.backward(seed)
        weights = leaf.grad[0].mean(axis=(1, 2))
        cam = np.maximum((weights[:, None, None] * activation.data[0]).sum(axis=0), 0.0)
        if cam.max() > 0:
            cam = cam / cam.max()
        want = np.clip(cn._bilinear_upsample(cam, 8, 8), 0.0, 1.0)
        assert np.allclose(sal.values, want, atol=1e-12)


class TestCheckpoint:
    def test_round_trip(self, tmp_path, rng):
        model = small_model()
        path = tmp_path / "model.edlc"
        cn.save_checkpoint(model, path)
        loaded = cn.load_checkpoint(path)
        assert loaded.config == model.config
        for name in model.params:
            # storage is float32, so compare at float32 resolution
            assert np.array_equal(
                loaded.params[name].data,
                model.params[name].data.astype("<f4").astype(np.float64),
            )
        x = rng.uniform(size=(2, 3, 8, 8))
        assert np.array_equal(loaded.forward(x), cn.load_checkpoint(path).forward(x))

    def test_save_load_save_is_byte_identical(self, tmp_path):
        model = small_model()
        a, b = tmp_path / "a.edlc", tmp_path / "b.edlc"
        cn.save_checkpoint(model, a)
        cn.save_checkpoint(cn.load_checkpoint(a), b)
        assert a.read_bytes() == b.read_bytes()

    def test_bad_magic(self, tmp_path):
        path = tmp_path / "m.edlc"
        cn.save_checkpoint(small_model(), path)
        path.write_bytes(b"XXXX" + path.read_bytes()[4:])
        with pytest.raises(CheckpointError):
            cn.load_checkpoint(path)

    def test_future_version(self, tmp_path):
        import struct

        path = tmp_path / "m.edlc"
        cn.save_checkpoint(small_model(), path)
        blob = bytearray(path.read_bytes())
        blob[4:8] = struct.pack("<I", cn.CHECKPOINT_VERSION + 1)
        path.write_bytes(bytes(blob))
        with pytest.raises(UnsupportedVersionError):
            cn.load_checkpoint(path)

    def test_truncation_at_every_boundary(self, tmp_path):
        path = tmp_path / "m.edlc"
        cn.save_checkpoint(small_model(), path)
        blob = path.read_bytes()
        for cut in (3, 6, 10, len(blob) // 2, len(blob) - 1):
            path.write_bytes(blob[:cut])
            with pytest.raises(CheckpointError):
                cn.load_checkpoint(path)

    def test_trailing_bytes(self, tmp_path):
        path = tmp_path / "m.edlc"
        cn.save_checkpoint(small_model(), path)
        path.write_bytes(path.read_bytes() + b"\x00")
        with pytest.raises(CheckpointError):
            cn.load_checkpoint(path)
