import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from lipgan.audio_features import Waveform
from lipgan.errors import DecodeError, NoFaceError
from lipgan.media_io import (
    BlobDetector, FaceBox, Frame, FixedBoxDetector, crop_resize, decode_video, detect_face, encode_video,
    feather_weights, make_frames, mask_lower_half, paste_back, probe_duration, read_image, write_image,
)


def _frames(n, h=64, w=80, seed=0):
    rng = np.random.default_rng(seed)
    base = rng.integers(0, 255, size=(h, w, 3), dtype=np.uint8)
    return make_frames([np.roll(base, i, axis=1) for i in range(n)], 25.0)


def test_encode_decode_roundtrip(tmp_path):
    frames = _frames(25)
    t = np.arange(16000) / 16000
    audio = Waveform(0.3 * np.sin(2 * np.pi * 300 * t), 16000)
    path = encode_video(frames, audio, 25.0, tmp_path / "clip.mp4")
    clip = decode_video(path)
    assert len(clip.frames) == 25
    assert clip.fps == pytest.approx(25.0)
    assert clip.frames[0].pixels.shape == (64, 80, 3)
    assert clip.audio is not None and clip.audio.sample_rate == 16000
    assert len(clip.audio) == 16000
    assert probe_duration(path) == pytest.approx(1.0)


def test_encode_is_deterministic(tmp_path):
    frames = _frames(10)
    a = encode_video(frames, None, 25.0, tmp_path / "a.mp4").read_bytes()
    b = encode_video(frames, None, 25.0, tmp_path / "b.mp4").read_bytes()
    assert a == b


def test_odd_dimensions_are_padded(tmp_path):
    frames = make_frames([np.full((33, 45, 3), 128, np.uint8)] * 3, 25.0)
    clip = decode_video(encode_video(frames, None, 25.0, tmp_path / "odd.mp4"))
    assert clip.frames[0].pixels.shape == (34, 46, 3)
    assert clip.audio is None


def test_encode_rejects_empty(tmp_path):
    with pytest.raises(ValueError):
        encode_video([], None, 25.0, tmp_path / "x.mp4")


def test_decode_errors(tmp_path):
    with pytest.raises(DecodeError):
        decode_video(tmp_path / "missing.mp4")
    bad = tmp_path / "bad.mp4"
    bad.write_bytes(b"not a video at all" * 100)
    with pytest.raises(DecodeError):
        decode_video(bad)


def test_image_roundtrip(tmp_path, rng):
    px = rng.integers(0, 255, (20, 30, 3), dtype=np.uint8)
    assert np.array_equal(read_image(write_image(px, tmp_path / "i.png")).pixels, px)


def _face_frame(box, h=96, w=96, bg=(20, 30, 40), fg=(200, 160, 140)):
    px = np.zeros((h, w, 3), np.uint8) + np.array(bg, np.uint8)
    px[box.y:box.y + box.h, box.x:box.x + box.w] = fg
    return Frame(px, 3, 120.0)


def test_blob_detector_finds_the_face():
    box = FaceBox(10, 20, 40, 50)
    found = detect_face(_face_frame(box))
    assert (found.x, found.y, found.w, found.h) == (10, 20, 40, 50)
    assert found.frame_index == 3


def test_detector_picks_largest_blob():
    frame = _face_frame(FaceBox(50, 50, 40, 40))
    frame.pixels[5:15, 5:15] = 250
    assert detect_face(frame).w == 40


def test_no_face_lists_frame():
    flat = Frame(np.full((32, 32, 3), 90, np.uint8), 11, 0.0)
    with pytest.raises(NoFaceError) as exc:
        detect_face(flat)
    assert exc.value.frame_indices == [11]


def test_fixed_box_detector_indexes_by_frame():
    boxes = [FaceBox(0, 0, 8, 8), FaceBox(1, 1, 8, 8)]
    frame = Frame(np.zeros((16, 16, 3), np.uint8), 1, 0.0)
    assert detect_face(frame, FixedBoxDetector(boxes)).x == 1


def test_crop_resize_range_and_size(rng):
    frame = Frame(rng.integers(0, 255, (100, 120, 3), dtype=np.uint8), 0, 0.0)
    crop = crop_resize(frame, FaceBox(10, 10, 50, 60), 96)
    assert crop.shape == (96, 96, 3)
    assert crop.dtype == np.float32
    assert 0.0 <= crop.min() and crop.max() <= 1.0


def test_crop_outside_frame_fails():
    with pytest.raises(ValueError):
        crop_resize(np.zeros((10, 10, 3), np.uint8), FaceBox(5, 5, 10, 10), 8)


@settings(max_examples=30, deadline=None)
@given(h=st.integers(2, 40).map(lambda v: 2 * v), seed=st.integers(0, 2**16))
def test_mask_zeroes_lower_half_and_is_idempotent(h, seed):
    crop = np.random.default_rng(seed).random((h, h, 3)).astype(np.float32)
    m = mask_lower_half(crop)
    assert np.all(m[h // 2:] == 0)
    assert np.array_equal(m[:h // 2], crop[:h // 2])
    assert np.array_equal(mask_lower_half(m), m)


def test_mask_works_on_batches():
    batch = np.ones((4, 8, 8, 3))
    assert mask_lower_half(batch)[:, 4:].sum() == 0


def test_feather_ramps_from_interior_edges_only():
    box = FaceBox(10, 10, 20, 20)
    wts = feather_weights(box, 50, 50, feather=5)
    assert wts.shape == (20, 20)
    assert wts[0, 10] == 0.0
    assert wts[10, 10] == 1.0
    assert wts[2, 10] == pytest.approx(2 / 5)
    # a box flush against the frame edge has no seam there
    edge = feather_weights(FaceBox(0, 0, 20, 20), 50, 50, feather=5)
    assert edge[0, 0] == 1.0


def test_paste_back_roundtrip(rng):
    px = rng.integers(0, 255, (96, 96, 3), dtype=np.uint8)
    frame = Frame(px, 0, 0.0)
    box = FaceBox(16, 16, 64, 64)
    out = paste_back(frame, box, crop_resize(frame, box, 64))
    assert np.array_equal(out.pixels, px)


def test_paste_back_only_touches_the_box(rng):
    frame = Frame(rng.integers(0, 255, (96, 96, 3), dtype=np.uint8), 0, 0.0)
    box = FaceBox(20, 20, 40, 40)
    out = paste_back(frame, box, np.zeros((32, 32, 3)))
    outside = np.ones((96, 96), bool)
    outside[20:60, 20:60] = False
    assert np.array_equal(out.pixels[outside], frame.pixels[outside])
    assert np.all(out.pixels[30:50, 30:50] == 0)


def test_lower_half_paste_keeps_upper_half(rng):
    frame = Frame(rng.integers(0, 255, (96, 96, 3), dtype=np.uint8), 0, 0.0)
    box = FaceBox(16, 16, 64, 64)
    out = paste_back(frame, box, np.zeros((64, 64, 3)), region="lower_half")
    assert np.array_equal(out.pixels[:48], frame.pixels[:48])
    assert np.all(out.pixels[60:70, 30:60] == 0)
    with pytest.raises(ValueError):
        paste_back(frame, box, np.zeros((64, 64, 3)), region="middle")
