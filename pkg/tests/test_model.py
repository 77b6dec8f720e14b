import numpy as np
import pytest

from cinmark import fsm
from cinmark.core import Tensor
from cinmark.model import CIN, ModelConfig, preset

from conftest import TINY, tiny_config


def test_config_round_trip():
    c = tiny_config()
    assert ModelConfig.from_dict(c.to_dict()) == c


def test_unknown_setting():
    with pytest.raises(ValueError, match="unknown"):
        ModelConfig.from_dict({"depth": 3})


def test_unknown_preset():
    with pytest.raises(ValueError, match="preset"):
        preset("huge")


def test_bad_fusion():
    with pytest.raises(ValueError, match="fusion"):
        ModelConfig(fusion="max")


def test_default_architecture():
    c = ModelConfig()
    assert (c.image_size, c.message_length, c.hidden_length, c.n_layers, c.growth) == (128, 30, 256, 8, 32)


def test_embed_and_decode_shapes(tiny_model, tiny_images, rng):
    msg = rng.integers(0, 2, (8, 8))
    wi, psi = tiny_model.embed(tiny_images, msg)
    assert wi.shape == tiny_images.shape and psi.shape == (8, 24, 16, 16)
    logits, restored = tiny_model.decode_im(wi)
    assert logits.shape == (8, 8) and restored.shape == tiny_images.shape


def test_fresh_model_embeds_dem_features(tiny_model, tiny_images, rng):
    # a fresh invertible module is the identity, so the residual is exactly the DEM map
    msg = rng.integers(0, 2, (8, 8))
    wi, _ = tiny_model.embed(tiny_images, msg)
    expected = fsm.fuse(tiny_model.dem.diffuse(msg), tiny_images, 1.0)
    np.testing.assert_allclose(wi.data, expected.data, atol=1e-6)


def test_average_fusion(rng, tiny_images):
    m = CIN(preset("desk", image_size=32, message_length=8, fusion="average", **TINY))
    msg = rng.integers(0, 2, (8, 8))
    wi, psi = m.embed(tiny_images, msg)
    np.testing.assert_allclose(wi.data, fsm.fuse_baseline(psi).data)


def test_wrong_image_size(tiny_model):
    with pytest.raises(ValueError, match="expected images"):
        tiny_model.decode_im(np.zeros((1, 3, 64, 64), np.float32))


def test_untrained_decoders_route_to_im(tiny_model, tiny_images):
    ex = tiny_model.extract(tiny_images)
    assert ex.routes == ["im"] * 8 and ex.bits_niam is None
    np.testing.assert_array_equal(ex.bits, ex.bits_im)


def test_routes_always_valid(tiny_model, tiny_images):
    tiny_model.niam_trained = True
    ex = tiny_model.extract(tiny_images)
    assert set(ex.routes) <= {"im", "niam"}
    assert ex.bits.shape == (8, 8) and set(np.unique(ex.bits)) <= {0, 1}


def test_parameter_groups_partition(tiny_model):
    names = {n for n, _ in tiny_model.named_parameters()}
    enc = {n for n, _ in tiny_model.encoder_parameters()}
    dec = {n for n, _ in tiny_model.decoder_parameters()}
    assert enc | dec == names and not enc & dec


def test_same_seed_same_model():
    a, b = CIN(tiny_config(), seed=4), CIN(tiny_config(), seed=4)
    for (n, p), (_, q) in zip(a.named_parameters(), b.named_parameters()):
        assert p.data.tobytes() == q.data.tobytes(), n
