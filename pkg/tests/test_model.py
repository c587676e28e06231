import dataclasses

import numpy as np
import pytest
import torch

from lipgan.errors import ConfigError, ShapeError
from lipgan.model import (
    OUTPUT_EPS, TOY_ARCHITECTURE, ArchitectureConfig, LipGAN, discriminator_forward, encode_audio, encode_face,
    generator_forward, init_params, load_checkpoint, param_arrays, save_checkpoint,
)

from conftest import TINY


@pytest.fixture(scope="module")
def tiny():
    return init_params(TINY, seed=3)


def test_default_architecture_skip_sizes():
    model = init_params(ArchitectureConfig(), seed=0)
    x = np.random.default_rng(0).random((96, 96, 6)).astype(np.float32)
    emb, skips = encode_face(x, model)
    assert emb.shape == (256,)
    assert [s.shape[-1] for s in skips] == [96, 48, 24, 12, 6, 3]


def test_generator_output_shape_and_range(tiny, rng):
    x = rng.random((64, 64, 6)).astype(np.float32)
    a = rng.normal(size=(12, 35, 1))
    out = generator_forward(x, a, tiny)
    assert out.shape == (64, 64, 3)
    assert out.min() >= OUTPUT_EPS and out.max() <= 1 - OUTPUT_EPS


def test_output_stays_strictly_inside_unit_interval(tiny):
    with torch.no_grad():
        tiny.generator.decoder.out.bias.fill_(1e4)
        out = generator_forward(np.zeros((64, 64, 6), np.float32), np.zeros((12, 35, 1)), tiny)
        tiny.generator.decoder.out.bias.zero_()
    assert out.max() < 1.0


def test_audio_embedding_shape(tiny, rng):
    assert encode_audio(rng.normal(size=(12, 35, 1)), tiny).shape == (16,)


def test_discriminator_distance_is_nonnegative(tiny, rng):
    d = discriminator_forward(rng.random((64, 64, 3)).astype(np.float32), rng.normal(size=(12, 35, 1)), tiny)
    assert isinstance(d, float) and d >= 0


def test_unit_embeddings_bound_distance():
    model = init_params(dataclasses.replace(TINY, unit_embeddings=True), seed=0)
    d = model.discriminator(torch.rand(16, 3, 64, 64), 10 * torch.randn(16, 1, 12, 35))
    assert torch.all((d >= 0) & (d <= 2 + 1e-6))


def test_batch_forward_on_tensors(tiny):
    out = tiny.generator(torch.rand(5, 6, 64, 64), torch.randn(5, 1, 12, 35))
    assert out.shape == (5, 3, 64, 64)
    assert tiny.discriminator(torch.rand(5, 3, 64, 64), torch.randn(5, 1, 12, 35)).shape == (5,)


def test_wrong_input_shapes_raise(tiny):
    with pytest.raises(ShapeError):
        tiny.generator(torch.rand(1, 3, 64, 64), torch.randn(1, 1, 12, 35))
    with pytest.raises(ShapeError):
        tiny.generator(torch.rand(1, 6, 64, 64), torch.randn(1, 1, 13, 35))
    with pytest.raises(ShapeError):
        tiny.discriminator(torch.rand(1, 6, 64, 64), torch.randn(1, 1, 12, 35))


@pytest.mark.parametrize("change, key", [
    ({"decoder_widths": (8, 8, 8)}, "architecture.decoder_widths"),
    ({"face_size": 32}, "architecture.face_size"),
    ({"activation": "swish9"}, "architecture.activation"),
    ({"norm": "batch"}, "architecture.norm"),
])
def test_invalid_architectures(change, key):
    with pytest.raises(ConfigError) as exc:
        dataclasses.replace(TINY, **change).validate()
    assert exc.value.key == key


def test_unknown_architecture_key():
    with pytest.raises(ConfigError):
        ArchitectureConfig.from_dict({"face_size": 64, "depth": 3})


def test_config_dict_roundtrip():
    assert ArchitectureConfig.from_dict(TOY_ARCHITECTURE.to_dict()) == TOY_ARCHITECTURE


def test_init_is_deterministic_and_seed_dependent():
    a, b, c = param_arrays(init_params(TINY, 5)), param_arrays(init_params(TINY, 5)), param_arrays(init_params(TINY, 6))
    assert all(np.array_equal(a[k], b[k]) for k in a)
    assert any(not np.array_equal(a[k], c[k]) for k in a)
    assert all(np.all(v == 0) for k, v in a.items() if k.endswith("bias"))


def test_generator_and_discriminator_do_not_share_weights(tiny):
    g = {id(p) for p in tiny.generator.parameters()}
    assert not g & {id(p) for p in tiny.discriminator.parameters()}


def test_checkpoint_roundtrip(tiny, tmp_path):
    path = save_checkpoint(tiny, tmp_path / "m.ckpt", step=12, seed=3, extra={"note": "x"})
    model, meta = load_checkpoint(path)
    assert meta["step"] == 12 and meta["seed"] == 3 and meta["extra"] == {"note": "x"}
    assert model.cfg == TINY
    before, after = param_arrays(tiny), param_arrays(model)
    assert before.keys() == after.keys()
    assert all(np.array_equal(before[k], after[k]) for k in before)


def test_checkpoint_bytes_are_reproducible(tiny, tmp_path):
    a = save_checkpoint(tiny, tmp_path / "a.ckpt", step=1, seed=3).read_bytes()
    b = save_checkpoint(tiny, tmp_path / "b.ckpt", step=1, seed=3).read_bytes()
    assert a == b


def test_checkpoint_with_optimizer_state(tiny, tmp_path):
    opt = torch.optim.Adam(tiny.parameters(), lr=1e-3)
    path = save_checkpoint(tiny, tmp_path / "o.ckpt", optimizer_state=opt.state_dict())
    _, _, state = load_checkpoint(path, with_optimizer=True)
    assert state["param_groups"][0]["lr"] == 1e-3


def test_lipgan_validates_config():
    with pytest.raises(ConfigError):
        LipGAN(dataclasses.replace(TINY, skip_count=5))
