import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mscvit import data as D


def write(path, payload):
    path.write_bytes(payload)
    return path


def random_records(rng, n, classes=10, coarse=False):
    return [
        D.ImageRecord(int(rng.integers(classes)), rng.integers(0, 256, D.PIXELS, dtype=np.uint8).tobytes(),
                      int(rng.integers(20)) if coarse else None)
        for _ in range(n)
    ]


# CIFAR-10

def test_cifar10_ten_thousand_records(tmp_path, rng):
    labels = rng.integers(0, 10, 10_000, dtype=np.uint8)
    pixels = rng.integers(0, 256, (10_000, D.PIXELS), dtype=np.uint8)
    blob = np.concatenate([labels[:, None], pixels], axis=1).tobytes()
    assert len(blob) == 30_730_000
    recs = D.parse_cifar10_bin(write(tmp_path / "b.bin", blob))
    assert len(recs) == 10_000
    assert recs[-1].label == labels[-1] and recs[-1].pixels == pixels[-1].tobytes()


def test_cifar10_hand_fixture(tmp_path):
    recs = D.parse_cifar10_bin(write(tmp_path / "one.bin", bytes([7]) + bytes([128]) * 3072))
    assert len(recs) == 1
    assert recs[0].label == 7
    assert set(recs[0].pixels) == {128}
    assert recs[0].array().shape == (3, 32, 32)


def test_cifar10_truncation_reports_offset(tmp_path):
    with pytest.raises(D.DataFormatError, match="offset 0"):
        D.parse_cifar10_bin(write(tmp_path / "t.bin", bytes(3072)))
    with pytest.raises(D.DataFormatError, match="offset 3073"):
        D.parse_cifar10_bin(write(tmp_path / "t2.bin", bytes(3073 + 100)))


def test_cifar10_bad_label_reports_offset(tmp_path):
    blob = bytearray(3073 * 3)
    blob[3073 * 2] = 11
    with pytest.raises(D.DataFormatError, match="offset 6146"):
        D.parse_cifar10_bin(write(tmp_path / "bad.bin", bytes(blob)))


def test_load_cifar10_directory(tmp_path, rng):
    for i in range(1, 6):
        write(tmp_path / f"data_batch_{i}.bin", D.serialize_cifar10(random_records(rng, 3)))
    write(tmp_path / "test_batch.bin", D.serialize_cifar10(random_records(rng, 2)))
    train, test = D.load_cifar10(tmp_path)
    assert (len(train), len(test)) == (15, 2)


# CIFAR-100

def test_cifar100_fixture_and_sizes(tmp_path):
    assert 50_000 * D.CIFAR100_RECORD == 153_700_000
    recs = D.parse_cifar100_bin(write(tmp_path / "c.bin", bytes([3, 42]) + bytes(3072)))
    assert recs[0].label == 42 and recs[0].coarse_label == 3


def test_cifar100_empty_file(tmp_path):
    assert D.parse_cifar100_bin(write(tmp_path / "e.bin", b"")) == []


def test_cifar100_rejects_truncated(tmp_path):
    with pytest.raises(D.DataFormatError, match="offset 3074"):
        D.parse_cifar100_bin(write(tmp_path / "t.bin", bytes(3074 + 3073)))


@settings(max_examples=20, deadline=None)
@given(n=st.integers(0, 6), seed=st.integers(0, 1000), coarse=st.booleans())
def test_parse_serialize_is_byte_identical(tmp_path_factory, n, seed, coarse):
    rng = np.random.default_rng(seed)
    path = tmp_path_factory.mktemp("rt") / "f.bin"
    if coarse:
        blob = D.serialize_cifar100(random_records(rng, n, 100, True))
        path.write_bytes(blob)
        assert D.serialize_cifar100(D.parse_cifar100_bin(path)) == blob
    else:
        blob = D.serialize_cifar10(random_records(rng, n))
        path.write_bytes(blob)
        assert D.serialize_cifar10(D.parse_cifar10_bin(path)) == blob


# preprocessing

def test_flip_probabilities_are_deterministic(rng):
    rec = random_records(rng, 1)[0]
    plain = D.preprocess(rec, D.AugmentConfig(), np.random.default_rng(0)).data
    flipped = D.preprocess(rec, D.AugmentConfig(flip_prob=1.0), np.random.default_rng(5)).data
    np.testing.assert_array_equal(flipped, plain[:, :, ::-1])
    again = D.preprocess(rec, D.AugmentConfig(), np.random.default_rng(9)).data
    np.testing.assert_array_equal(plain, again)


def test_normalization_arithmetic():
    rec = D.ImageRecord(0, bytes([255]) * 3072)
    out = D.preprocess(rec, D.AugmentConfig(mean=(0.5,) * 3, std=(0.5,) * 3)).data
    np.testing.assert_array_equal(out, 1.0)


def test_resize_of_constant_is_constant():
    img = np.full((3, 32, 32), 0.25, np.float32)
    out = D.bilinear_resize(img, 224)
    assert out.shape == (3, 224, 224)
    np.testing.assert_allclose(out, 0.25, atol=1e-6)


def test_resize_matches_scipy_zoom_on_interior(rng):
    zoom = pytest.importorskip("scipy.ndimage").zoom
    img = rng.standard_normal((1, 32, 32)).astype(np.float32)
    ours = D.bilinear_resize(img, 64)[0]
    ref = zoom(img[0].astype(np.float64), 2, order=1, grid_mode=True, mode="nearest")
    np.testing.assert_allclose(ours[2:-2, 2:-2], ref[2:-2, 2:-2], atol=1e-5)


@settings(max_examples=25, deadline=None)
@given(seed=st.integers(0, 10_000), target=st.sampled_from([32, 224]), flip=st.floats(0, 1),
       pad=st.integers(0, 6))
def test_preprocess_shape_and_finiteness(seed, target, flip, pad):
    rng = np.random.default_rng(seed)
    rec = random_records(rng, 1)[0]
    aug = D.AugmentConfig(flip_prob=flip, crop_pad=pad, resize=target)
    out = D.preprocess(rec, aug, rng).data
    assert out.shape == (3, target, target)
    assert np.all(np.isfinite(out))


# batching

def test_batch_counts():
    assert D.num_batches(50_000, 128) == 391
    assert 50_000 - 390 * 128 == 80
    assert D.num_batches(50_000, 1) == 50_000


def test_batch_iter_last_batch_is_short(rng):
    recs = random_records(rng, 10)
    sizes = [len(y) for _, y in D.batch_iter(recs, 4, shuffle_seed=1)]
    assert sizes == [4, 4, 2]


@settings(max_examples=30, deadline=None)
@given(n=st.integers(1, 40), bs=st.integers(1, 17), seed=st.integers(0, 99), epoch=st.integers(0, 3))
def test_batch_iter_covers_each_record_once(n, bs, seed, epoch):
    recs = [D.ImageRecord(i % 256, bytes([i % 256]) * D.PIXELS) for i in range(n)]
    seen = []
    for imgs, labels in D.batch_iter(recs, bs, shuffle_seed=seed, aug=D.AugmentConfig(), epoch=epoch):
        assert imgs.shape[1:] == (3, 32, 32)
        seen += labels.tolist()
    assert sorted(seen) == sorted(r.label for r in recs)


def test_order_depends_on_seed_and_epoch():
    assert np.array_equal(D.epoch_order(100, 3, 0), D.epoch_order(100, 3, 0))
    assert not np.array_equal(D.epoch_order(100, 3, 0), D.epoch_order(100, 3, 1))
    assert not np.array_equal(D.epoch_order(100, 3, 0), D.epoch_order(100, 4, 0))


def test_batch_iter_rejects_empty():
    with pytest.raises(ValueError):
        next(D.batch_iter([], 4))


# synthetic data

def test_synth_balance_and_seeds():
    recs = D.synth_dataset(4, 8, seed=0)
    assert len(recs) == 32
    assert np.bincount([r.label for r in recs]).tolist() == [8, 8, 8, 8]
    other = D.synth_dataset(4, 8, seed=1)
    assert np.bincount([r.label for r in other]).tolist() == [8, 8, 8, 8]
    assert [r.pixels for r in recs] != [r.pixels for r in other]


def test_nearest_centroid_separates_noiseless_synth():
    train = D.synth_dataset(6, 5, seed=0, noise=0)
    test = D.synth_dataset(6, 5, seed=1, noise=0)
    X = np.stack([r.array().ravel() for r in train]).astype(float)
    y = np.array([r.label for r in train])
    centroids = np.stack([X[y == k].mean(axis=0) for k in range(6)])
    Xt = np.stack([r.array().ravel() for r in test]).astype(float)
    pred = np.argmin(((Xt[:, None] - centroids[None]) ** 2).sum(-1), axis=1)
    assert np.mean(pred == [r.label for r in test]) == 1.0


def test_subset_is_seeded():
    recs = D.synth_dataset(2, 20)
    assert D.subset(recs, 5, seed=1) == D.subset(recs, 5, seed=1)
    assert len(D.subset(recs, 5)) == 5
