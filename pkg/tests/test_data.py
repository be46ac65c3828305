import math
import struct

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from paretofact import data as ds
from paretofact.errors import ContractError, FormatError, LeakageError
from paretofact.metrics import luminance_image


@pytest.fixture(scope="module")
def blobs():
    return ds.generate_blobs(3, 400)


def test_blobs_deterministic_and_in_range(blobs):
    again = ds.generate_blobs(3, 400)
    assert blobs.images.tobytes() == again.images.tobytes()
    assert blobs.attributes.tobytes() == again.attributes.tobytes()
    assert np.array_equal(blobs.labels, again.labels)
    assert blobs.images.shape == (400, 16, 16, 3)
    for arr in (blobs.images, blobs.attributes):
        assert arr.min() >= 0 and arr.max() <= 1


def test_blob_labels_follow_brightness_with_noise(blobs):
    rule = (blobs.attributes[:, ds.BRIGHTNESS] > 0.5).astype(int)
    disagree = np.mean(rule != blobs.labels)
    assert 0 < disagree < 0.1


def test_blobs_rejects_small_n_and_bad_bias():
    with pytest.raises(ContractError):
        ds.generate_blobs(0, 49)
    for bad in (ds.BiasSpec(7, 0, 0.9), ds.BiasSpec(0, 5, 0.9), ds.BiasSpec(0, 0, 1.5),
                ds.BiasSpec(ds.BRIGHTNESS, 1, 0.9)):
        with pytest.raises(ContractError):
            ds.generate_blobs(0, 100, bad)


def test_neutral_bias_frequency():
    d = ds.generate_blobs(1, 4000, ds.BiasSpec(3, 1, 0.5))
    for c in (0, 1):
        high = d.attributes[d.labels == c, 3] > 0.5
        se = math.sqrt(0.25 / high.size)
        assert abs(high.mean() - 0.5) < 3 * se


def test_strong_bias_frequency():
    d = ds.generate_blobs(1, 4000, ds.BiasSpec(3, 1, 0.9))
    assert np.mean(d.attributes[d.labels == 1, 3] > 0.5) == pytest.approx(0.9, abs=0.03)
    assert np.mean(d.attributes[d.labels == 0, 3] > 0.5) == pytest.approx(0.1, abs=0.03)


def test_brightness_monotone_in_luminance():
    rng = np.random.default_rng(0)
    for _ in range(100):
        a = rng.random(5)
        lo, hi = a.copy(), a.copy()
        lo[ds.BRIGHTNESS], hi[ds.BRIGHTNESS] = sorted(rng.random(2))
        if hi[ds.BRIGHTNESS] == lo[ds.BRIGHTNESS]:
            continue
        assert luminance_image(ds.render_blob(hi)).mean() > luminance_image(ds.render_blob(lo)).mean()


def test_erased_class_augmentation(blobs):
    small = blobs.subset(np.arange(30))
    aug = ds.augment_with_erased_class(small, 5)
    assert len(aug) == 60 and aug.n_classes == 3
    assert aug.meta["erased_class"]["label"] == 2
    assert np.all(aug.labels[30:] == 2)
    for i, (top, left, h, w) in enumerate(aug.meta["erase_boxes"]):
        copy = aug.images[30 + i]
        assert np.all(copy[top:top + h, left:left + w] == 0)
        mask = np.ones((16, 16), bool)
        mask[top:top + h, left:left + w] = False
        assert copy[mask].tobytes() == small.images[i][mask].tobytes()
        assert 0.25 * 256 - 16 <= h * w <= 0.5 * 256 + 16
    with pytest.raises(ContractError):
        ds.augment_with_erased_class(small.subset([]), 0)


# ---------------------------------------------------------------- splits

def test_split_sizes_and_determinism():
    s = ds.make_split(100, (0.6, 0.2, 0.2), 4)
    assert (len(s.gan_train), len(s.target_train), len(s.target_holdout)) == (60, 20, 20)
    t = ds.make_split(100, (0.6, 0.2, 0.2), 4)
    assert s.to_dict() == t.to_dict()
    with pytest.raises(ContractError):
        ds.make_split(100, (0.5, 0.2, 0.2), 0)


@settings(max_examples=100)
@given(st.integers(1, 500), st.integers(0, 10_000),
       st.tuples(st.floats(0.05, 1), st.floats(0.05, 1), st.floats(0.05, 1)))
def test_split_disjoint_and_covering(n, seed, raw):
    fr = [f / sum(raw) for f in raw]
    fr[2] = 1.0 - fr[0] - fr[1]
    s = ds.make_split(n, fr, seed)
    s.check_disjoint()
    parts = np.concatenate([s.gan_train, s.target_train, s.target_holdout])
    assert sorted(parts.tolist()) == list(range(n))


def test_leaky_split_detected():
    with pytest.raises(LeakageError):
        ds.SplitPlan(np.array([0, 1]), np.array([1, 2]), np.array([3]), 0).check_disjoint()
    with pytest.raises(LeakageError):
        ds.SplitPlan(np.array([0]), np.array([1, 2]), np.array([2]), 0).check_disjoint()


def test_split_with_copies_keeps_pairs_together():
    s = ds.split_with_copies(ds.make_split(10, (0.5, 0.3, 0.2), 1), 10)
    s.check_disjoint()
    for part in (s.gan_train, s.target_train, s.target_holdout):
        src = part[part < 10]
        assert sorted(part[part >= 10].tolist()) == sorted((src + 10).tolist())


def test_split_round_trip():
    s = ds.make_split(50, seed=9)
    assert ds.SplitPlan.from_dict(s.to_dict()).to_dict() == s.to_dict()


# ---------------------------------------------------------------- IDX

def _idx_fixture(tmp_path, n=3):
    pix = np.arange(n * 4 * 4, dtype=np.uint8).reshape(n, 4, 4)
    pix[0, 0, 0] = 255
    images = struct.pack(">4I", 0x803, n, 4, 4) + pix.tobytes()
    labels = struct.pack(">2I", 0x801, n) + bytes(range(n))
    (tmp_path / "img.idx").write_bytes(images)
    (tmp_path / "lbl.idx").write_bytes(labels)
    return tmp_path / "img.idx", tmp_path / "lbl.idx"


def test_idx_parses_fixture(tmp_path):
    d = ds.load_idx(*_idx_fixture(tmp_path))
    assert len(d) == 3 and d.image_shape == (4, 4, 1)
    assert d.images[0, 0, 0, 0] == 1.0
    assert d.labels.tolist() == [0, 1, 2]
    np.testing.assert_array_equal(d.attributes, np.eye(3))


def test_idx_round_trip_is_byte_identical(tmp_path):
    img, lbl = _idx_fixture(tmp_path)
    d = ds.load_idx(img, lbl)
    ds.write_idx(d, tmp_path / "a.idx", tmp_path / "b.idx")
    assert (tmp_path / "a.idx").read_bytes() == img.read_bytes()
    assert (tmp_path / "b.idx").read_bytes() == lbl.read_bytes()


def test_idx_errors(tmp_path):
    img, lbl = _idx_fixture(tmp_path)
    raw = img.read_bytes()
    img.write_bytes(struct.pack(">I", 0x801) + raw[4:])
    with pytest.raises(FormatError, match="magic.*offset 0"):
        ds.load_idx(img, lbl)
    img.write_bytes(raw[:-1])
    with pytest.raises(FormatError, match="offset 16"):
        ds.load_idx(img, lbl)
    img.write_bytes(raw)
    lbl.write_bytes(struct.pack(">2I", 0x801, 2) + bytes(2))
    with pytest.raises(FormatError, match="count mismatch"):
        ds.load_idx(img, lbl)


# ---------------------------------------------------------------- persistence

def test_dataset_round_trip(tmp_path, blobs):
    small = blobs.subset(np.arange(20))
    ds.save_dataset(small, tmp_path)
    back = ds.load_dataset(tmp_path)
    assert back.images.tobytes() == small.images.tobytes()
    assert back.attributes.tobytes() == small.attributes.tobytes()
    assert np.array_equal(back.labels, small.labels)
    assert back.attribute_names == small.attribute_names


def test_missing_dataset_file(tmp_path):
    with pytest.raises(FileNotFoundError, match="dataset.cgmf"):
        ds.load_dataset(tmp_path)
