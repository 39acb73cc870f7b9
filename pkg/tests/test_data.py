import gzip
import struct

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from asymcl import data as D
from asymcl.errors import IdxFormatError, ValidationError

# majority percentage -> counts out of 1000, written out by hand
SCENARIO_COUNTS = {"50:50": (500, 500), "55:45": (550, 450), "60:40": (600, 400), "65:35": (650, 350),
                   "70:30": (700, 300), "75:25": (750, 250), "80:20": (800, 200), "85:15": (850, 150),
                   "90:10": (900, 100), "95:5": (950, 50), "98:2": (980, 20)}


def test_scenario_list_matches_table():
    assert tuple(SCENARIO_COUNTS) == D.PAPER_SCENARIOS


@pytest.mark.parametrize("name", D.PAPER_SCENARIOS)
def test_generated_counts_exact(name):
    d = D.generate_gaussians(8, 6.0, D.ScenarioSpec.parse(name, seed=1))
    assert d.class_counts() == SCENARIO_COUNTS[name]
    assert len(d) == 1000


def test_counts_round_half_up():
    assert D.ScenarioSpec(2, 1, total_size=10).counts() == (7, 3)    # 6.67
    assert D.ScenarioSpec(3, 1, total_size=10).counts() == (8, 2)    # 7.5 -> 8
    assert D.ScenarioSpec(1, 1, total_size=7).counts() == (4, 3)     # 3.5 -> 4


@pytest.mark.parametrize("text", ["90-10", "a:b", "10:90", "50:0", "1:2:3"])
def test_bad_scenarios(text):
    with pytest.raises(ValidationError):
        D.ScenarioSpec.parse(text)


def test_scenario_leaving_class_empty():
    with pytest.raises(ValidationError):
        D.ScenarioSpec(98, 2, total_size=10)


def test_gaussian_geometry():
    d = D.generate_gaussians(4, 6.0, D.ScenarioSpec(50, 50, total_size=20000, seed=0))
    m0 = d.samples[d.labels == 0].mean(axis=0)
    m1 = d.samples[d.labels == 1].mean(axis=0)
    np.testing.assert_allclose(m1 - m0, np.full(4, 3.0), atol=0.1)
    np.testing.assert_allclose(np.cov(d.samples[d.labels == 0].T), np.eye(4), atol=0.05)


def test_gaussian_seed_determinism():
    spec = D.ScenarioSpec(90, 10, seed=5)
    a, b = D.generate_gaussians(8, 6.0, spec), D.generate_gaussians(8, 6.0, spec)
    np.testing.assert_array_equal(a.samples, b.samples)
    c = D.generate_gaussians(8, 6.0, D.ScenarioSpec(90, 10, seed=6))
    assert not np.array_equal(a.samples, c.samples)


def test_dataset_validation():
    with pytest.raises(ValidationError):
        D.Dataset(np.ones((3, 2)), [0, 1])
    with pytest.raises(ValidationError):
        D.Dataset(np.ones((2, 2)), [0, 2])
    with pytest.raises(ValidationError):
        D.Dataset(np.ones(4), [0, 1, 0, 1])


# -- IDX ---------------------------------------------------------------------

def raw_idx(arr: np.ndarray) -> bytes:
    """Independent IDX encoder for the fixtures."""
    head = bytes([0, 0, 8, arr.ndim]) + b"".join(struct.pack(">I", s) for s in arr.shape)
    return head + arr.astype(np.uint8).tobytes()


@pytest.fixture
def idx_pair(tmp_path):
    rng = np.random.default_rng(0)
    images = rng.integers(0, 256, (4, 28, 28), dtype=np.uint8)
    labels = np.array([0, 6, 3, 6], dtype=np.uint8)
    (tmp_path / "img").write_bytes(raw_idx(images))
    (tmp_path / "lab").write_bytes(raw_idx(labels))
    return tmp_path / "img", tmp_path / "lab", images, labels


def test_read_idx_fixture(idx_pair):
    img, lab, images, labels = idx_pair
    got = D.read_idx(img, D.IDX_IMAGES_MAGIC)
    assert got.shape == (4, 28, 28)
    np.testing.assert_array_equal(got, images)
    np.testing.assert_array_equal(D.read_idx(lab, D.IDX_LABELS_MAGIC), labels)


def test_write_idx_matches_encoder(tmp_path, idx_pair):
    _, _, images, labels = idx_pair
    D.write_idx(tmp_path / "a", images)
    D.write_idx(tmp_path / "b", labels)
    assert (tmp_path / "a").read_bytes() == raw_idx(images)
    assert (tmp_path / "b").read_bytes() == raw_idx(labels)


def test_gzip_detected(tmp_path, idx_pair):
    img, _, images, _ = idx_pair
    gz = tmp_path / "img.gz"
    gz.write_bytes(gzip.compress(img.read_bytes()))
    np.testing.assert_array_equal(D.read_idx(gz, D.IDX_IMAGES_MAGIC), images)


def test_load_idx_filters_and_scales(idx_pair):
    img, lab, images, _ = idx_pair
    d = D.load_idx(img, lab)
    assert len(d) == 3 and d.samples.shape == (3, 784)
    np.testing.assert_array_equal(d.labels, [0, 1, 1])
    np.testing.assert_allclose(d.samples[1], images[1].ravel() / 255.0)
    assert d.provenance == "idx" and d.image_shape == (28, 28)
    assert d.samples.min() >= 0 and d.samples.max() <= 1


def test_idx_wrong_magic(tmp_path, idx_pair):
    img, lab, _, _ = idx_pair
    with pytest.raises(IdxFormatError) as exc:
        D.read_idx(lab, D.IDX_IMAGES_MAGIC)
    assert exc.value.offset == 0


def test_idx_truncated(tmp_path, idx_pair):
    img, _, _, _ = idx_pair
    cut = tmp_path / "cut"
    cut.write_bytes(img.read_bytes()[:-10])
    with pytest.raises(IdxFormatError) as exc:
        D.read_idx(cut, D.IDX_IMAGES_MAGIC)
    assert exc.value.offset == 16 + 4 * 784 - 10
    short = tmp_path / "short"
    short.write_bytes(img.read_bytes()[:9])
    with pytest.raises(IdxFormatError) as exc:
        D.read_idx(short, D.IDX_IMAGES_MAGIC)
    assert exc.value.offset == 9


def test_idx_trailing_bytes(tmp_path, idx_pair):
    _, lab, _, _ = idx_pair
    extra = tmp_path / "extra"
    extra.write_bytes(lab.read_bytes() + b"\x00")
    with pytest.raises(IdxFormatError) as exc:
        D.read_idx(extra, D.IDX_LABELS_MAGIC)
    assert exc.value.offset == 8 + 4


def test_idx_count_mismatch(tmp_path, idx_pair):
    img, _, _, _ = idx_pair
    lab = tmp_path / "lab3"
    lab.write_bytes(raw_idx(np.array([0, 6, 0], dtype=np.uint8)))
    with pytest.raises(IdxFormatError):
        D.load_idx(img, lab)


# -- scenario subsampling and split ------------------------------------------

def pool(n0=700, n1=500, seed=0):
    rng = np.random.default_rng(seed)
    y = np.array([0] * n0 + [1] * n1)
    return D.Dataset(rng.standard_normal((n0 + n1, 3)), y)


def test_apply_scenario_counts():
    d = D.apply_scenario(pool(), D.ScenarioSpec(60, 40, total_size=1000, seed=2))
    assert d.class_counts() == (600, 400)
    # no row drawn twice
    assert len(np.unique(d.samples, axis=0)) == 1000


def test_apply_scenario_shortage():
    with pytest.raises(ValidationError, match="class 1"):
        D.apply_scenario(pool(n1=300), D.ScenarioSpec(60, 40, total_size=1000))


def test_split_98_2():
    d = D.generate_gaussians(8, 6.0, D.ScenarioSpec(98, 2, seed=0))
    train, test = D.split_train_test(d, 0.7, seed=0)
    assert train.class_counts() == (686, 14)
    assert test.class_counts() == (294, 6)
    rows = {r.tobytes() for r in d.samples}
    tr = {r.tobytes() for r in train.samples}
    te = {r.tobytes() for r in test.samples}
    assert tr.isdisjoint(te) and tr | te == rows


@settings(max_examples=50, deadline=None)
@given(st.integers(2, 300), st.integers(2, 300), st.floats(0.05, 0.95), st.integers(0, 1000))
def test_split_partition_property(n0, n1, frac, seed):
    d = pool(n0, n1, seed % 7)
    train, test = D.split_train_test(d, frac, seed)
    assert len(train) + len(test) == len(d)
    for c, n in ((0, n0), (1, n1)):
        k = train.class_counts()[c]
        assert 1 <= k <= n - 1
        assert test.class_counts()[c] == n - k


def test_split_validation():
    with pytest.raises(ValidationError):
        D.split_train_test(pool(), 1.0)
    with pytest.raises(ValidationError):
        D.split_train_test(D.Dataset(np.ones((3, 2)), [0, 0, 1]), 0.7)


# -- augmentation ------------------------------------------------------------

def image_set(n=6, seed=0):
    rng = np.random.default_rng(seed)
    return D.Dataset(rng.random((n, 12)), np.arange(n) % 2, "idx", (3, 4))


def test_flip_always_and_involution():
    d = image_set()
    once = D.augment_flip(d, 4, seed=0, probability=1.0)
    expected = d.samples.reshape(6, 3, 4)[:, :, ::-1].reshape(6, 12)
    np.testing.assert_array_equal(once.samples, expected)
    twice = D.augment_flip(once, 4, seed=0, probability=1.0)
    np.testing.assert_array_equal(twice.samples, d.samples)


def test_flip_never():
    d = image_set()
    np.testing.assert_array_equal(D.augment_flip(d, 4, seed=0, probability=0.0).samples, d.samples)


def test_flip_symmetric_image_unchanged():
    row = np.array([1.0, 2.0, 2.0, 1.0])
    d = D.Dataset(np.tile(row, (2, 3)), [0, 1], "idx", (3, 4))
    np.testing.assert_array_equal(D.augment_flip(d, 4, seed=0, probability=1.0).samples, d.samples)


def test_flip_seeded_and_labels_kept():
    d = image_set(200)
    a, b = D.augment_flip(d, 4, seed=3), D.augment_flip(d, 4, seed=3)
    np.testing.assert_array_equal(a.samples, b.samples)
    np.testing.assert_array_equal(a.labels, d.labels)
    flipped = np.any(a.samples != d.samples, axis=1).mean()
    assert 0.35 < flipped < 0.65


def test_flip_synthetic_noop(caplog):
    d = pool()
    with caplog.at_level("WARNING"):
        assert D.augment_flip(d, 3, seed=0) is d
    assert "left unchanged" in caplog.text


def test_flip_bad_width():
    with pytest.raises(ValidationError):
        D.augment_flip(image_set(), 5, seed=0)


def test_csv_round_trip(tmp_path):
    d = D.generate_gaussians(3, 2.0, D.ScenarioSpec(70, 30, total_size=50, seed=1))
    D.write_csv(d, tmp_path / "d.csv")
    assert (tmp_path / "d.csv").read_text().splitlines()[0] == "label,f0,f1,f2"
    r = D.read_csv(tmp_path / "d.csv")
    np.testing.assert_array_equal(r.samples, d.samples)
    np.testing.assert_array_equal(r.labels, d.labels)
