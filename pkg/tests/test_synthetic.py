import numpy as np
import pytest

from lipgan.media_io import BlobDetector, crop_resize, detect_face
from lipgan.synthetic import (
    ToyClipSpec, audio_envelope, make_clip, make_corpus, measure_mouth_opening, read_corpus, write_corpus,
)


def test_spec_validation():
    with pytest.raises(ValueError):
        ToyClipSpec(seed=0, a_min=10, a_max=5)


def test_clip_is_deterministic():
    a, b = make_clip(ToyClipSpec(seed=3, duration_s=1.0)), make_clip(ToyClipSpec(seed=3, duration_s=1.0))
    assert np.array_equal(a.clip.audio.samples, b.clip.audio.samples)
    assert all(np.array_equal(x.pixels, y.pixels) for x, y in zip(a.clip.frames, b.clip.frames))


def test_clip_layout(toy_clip):
    spec = toy_clip.spec
    assert len(toy_clip.clip.frames) == spec.n_frames == 50
    assert len(toy_clip.clip.audio) == spec.n_samples
    assert 0.0 <= toy_clip.envelope.min() and toy_clip.envelope.max() <= 1.0
    assert len(toy_clip.mouth_landmarks) == 50 and toy_clip.mouth_landmarks[0].count == 20


def test_mouth_oracle_recovers_rendered_opening(toy_clip):
    spec = toy_clip.spec
    measured = np.array([measure_mouth_opening(f, spec) for f in toy_clip.clip.frames])
    truth = spec.semi_axis(toy_clip.envelope)
    assert np.max(np.abs(measured - truth)) < 0.25
    assert np.corrcoef(measured, toy_clip.envelope)[0, 1] > 0.999


def test_mouth_oracle_on_crops(toy_clip):
    spec = toy_clip.spec
    box = spec.face_box()
    for f, a in zip(toy_clip.clip.frames[::10], spec.semi_axis(toy_clip.envelope)[::10]):
        assert measure_mouth_opening(crop_resize(f, box, 64), spec, box) == pytest.approx(a, abs=0.6)


def test_audio_envelope_tracks_rendered_envelope(toy_clip):
    env = audio_envelope(toy_clip.clip.audio, toy_clip.clip.frame_times_ms)
    assert np.mean(np.abs(env - toy_clip.envelope)) < 0.05


def test_blob_detector_finds_toy_head(toy_clip):
    box = detect_face(toy_clip.clip.frames[0], BlobDetector())
    truth = toy_clip.face_box[0]
    assert abs(box.x - truth.x) <= 1 and abs(box.w - truth.w) <= 1


def test_corpus_seeds_are_distinct():
    train, held = make_corpus(3, 2, seed=1, duration_s=0.5)
    seeds = [c.spec.seed for c in train + held]
    assert len(set(seeds)) == 5


def test_corpus_roundtrip(tmp_path):
    manifest = write_corpus(tmp_path, 4, seed=2, held_out_fraction=0.25, duration_s=0.5)
    assert manifest.exists()
    train, held = read_corpus(tmp_path)
    fresh_train, _ = make_corpus(3, 1, seed=2, duration_s=0.5)
    assert len(train) == 3 and len(held) == 1
    assert np.array_equal(train[0].clip.frames[5].pixels, fresh_train[0].clip.frames[5].pixels)
    assert np.allclose(train[0].envelope, fresh_train[0].envelope)
    assert np.max(np.abs(train[0].clip.audio.samples - fresh_train[0].clip.audio.samples)) <= 0.5 / 32768 + 1e-12
