import json

import numpy as np
import pytest

from postnet import autograd as ag
from postnet.archive import ArchiveError, FORMAT_VERSION, load_model, model_to_dict, save_model
from postnet.data import generate_three_gaussians, split
from postnet.encoder import EncoderConfig, encode, init_encoder
from postnet.training import TrainConfig, train


class TestEncoder:
    def test_layer_shapes(self):
        params = init_encoder(EncoderConfig(input_dim=2, hidden_dims=[64, 64, 64], latent_dim=6))
        assert [w.shape for w in params.weights] == [(2, 64), (64, 64), (64, 64), (64, 6)]

    def test_seeded_init(self):
        a = init_encoder(EncoderConfig(input_dim=3, seed=5))
        b = init_encoder(EncoderConfig(input_dim=3, seed=5))
        assert all(x.data.tobytes() == y.data.tobytes() for x, y in zip(a.parameters(), b.parameters()))
        assert all(np.all(bias.data == 0) for bias in a.biases)

    def test_zero_weights(self):
        params = init_encoder(EncoderConfig(input_dim=3, hidden_dims=[4], latent_dim=2, final_batchnorm=False))
        for w in params.weights:
            w.data = np.zeros_like(w.data)
        np.testing.assert_array_equal(encode(params, np.zeros((2, 3))).data, 0.0)

    def test_batch_of_one_in_training(self):
        params = init_encoder(EncoderConfig(input_dim=2, hidden_dims=[4], latent_dim=2))
        with pytest.raises(ag.ShapeError):
            encode(params, np.zeros((1, 2)), train=True)

    def test_latent_too_wide(self):
        with pytest.raises(ValueError):
            init_encoder(EncoderConfig(input_dim=2, latent_dim=65))


@pytest.fixture(scope="module")
def trained():
    tr, va, te = split(generate_three_gaussians(150, 0), (0.6, 0.2, 0.2), seed=1)
    models = {}
    for mode, density in [("joint", "radial"), ("joint", "mog"), ("no_flow", "radial")]:
        cfg = TrainConfig(mode=mode, density_type=density, hidden_dims=[8], latent_dim=2, max_epochs=4)
        models[(mode, density)] = train(tr, va, cfg).model
    return models, te


@pytest.mark.parametrize("key", [("joint", "radial"), ("joint", "mog"), ("no_flow", "radial")])
def test_round_trip_is_bit_exact(trained, key, tmp_path):
    models, te = trained
    model = models[key]
    save_model(model, tmp_path / "m.json")
    again = load_model(tmp_path / "m.json")
    assert model.posterior(te.X).alpha.tobytes() == again.posterior(te.X).alpha.tobytes()
    assert again.class_names == model.class_names
    assert again.config == model.config


def test_archive_is_stable_text(trained, tmp_path):
    models, _ = trained
    model = models[("joint", "radial")]
    save_model(model, tmp_path / "a.json")
    save_model(load_model(tmp_path / "a.json"), tmp_path / "b.json")
    assert (tmp_path / "a.json").read_text() == (tmp_path / "b.json").read_text()
    d = json.loads((tmp_path / "a.json").read_text())
    assert d["format_version"] == FORMAT_VERSION
    assert d["config"]["train"]["seed"] == 0


def test_rejects_other_versions(trained, tmp_path):
    models, _ = trained
    d = model_to_dict(models[("joint", "radial")])
    d["format_version"] = 99
    (tmp_path / "m.json").write_text(json.dumps(d))
    with pytest.raises(ArchiveError, match="format_version"):
        load_model(tmp_path / "m.json")


def test_rejects_garbage(tmp_path):
    (tmp_path / "m.json").write_text("{not json")
    with pytest.raises(ArchiveError):
        load_model(tmp_path / "m.json")
    (tmp_path / "m.json").write_text(json.dumps({"format_version": FORMAT_VERSION}))
    with pytest.raises(ArchiveError):
        load_model(tmp_path / "m.json")
