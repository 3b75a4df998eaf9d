from pathlib import Path

import numpy as np
import pytest

from wae_lab.data import (BadMagicError, Dataset, DimensionMismatchError, IdxFormatError, SyntheticSpec,
                          TruncatedFileError, encode_idx, find_mnist_files, load_mnist_idx, make_synthetic,
                          parse_idx, parse_synthetic_spec, read_csv, read_idx, rng_stream,
                          sample_gaussian_mixture, sample_prior, split, write_csv, write_idx)
from wae_lab.errors import ConfigError, DataError
from wae_lab.models import PriorSpec

FIXTURES = Path(__file__).parent / "fixtures"


def test_one_zero_image_fixture():
    ds = load_mnist_idx(FIXTURES / "one-zero-image.idx3-ubyte")
    assert ds.examples.shape == (1, 784)
    assert not ds.examples.any()
    assert ds.image_shape == (28, 28)


def test_bad_magic_fixture():
    with pytest.raises(BadMagicError) as info:
        load_mnist_idx(FIXTURES / "bad-magic.idx3-ubyte")
    assert info.value.offset == 0


def test_truncated_fixture_reports_end_offset():
    with pytest.raises(TruncatedFileError) as info:
        load_mnist_idx(FIXTURES / "truncated.idx3-ubyte")
    assert info.value.offset == 16 + 784
    assert "byte offset 800" in str(info.value)


def test_dimension_mismatch_fixtures():
    with pytest.raises(DimensionMismatchError) as info:
        load_mnist_idx(FIXTURES / "wrong-dims.idx3-ubyte")
    assert info.value.offset == 8
    with pytest.raises(DimensionMismatchError) as info:
        load_mnist_idx(FIXTURES / "one-zero-image.idx3-ubyte", FIXTURES / "two-labels.idx1-ubyte")
    assert info.value.offset == 4


def test_errors_are_distinct_types():
    kinds = {BadMagicError, TruncatedFileError, DimensionMismatchError}
    assert len(kinds) == 3
    assert all(issubclass(k, IdxFormatError) and issubclass(k, DataError) for k in kinds)
    for a in kinds:
        for b in kinds - {a}:
            assert not issubclass(a, b)


def test_pixel_255_maps_to_one(tmp_path):
    img = np.zeros((2, 28, 28), dtype=np.uint8)
    img[0, 3, 4] = 255
    img[1, 0, 0] = 51
    write_idx(tmp_path / "x.idx", img)
    ds = load_mnist_idx(tmp_path / "x.idx")
    assert ds.examples[0, 3 * 28 + 4] == 1.0
    assert ds.examples[1, 0] == 0.2


def test_idx_round_trip_is_bit_exact(tmp_path):
    rng = np.random.default_rng(0)
    for dtype in (np.uint8, np.int8, ">i2", ">i4", ">f4", ">f8", np.float64):
        arr = (rng.normal(size=(3, 5, 4)) * 50).astype(dtype)
        write_idx(tmp_path / "a.idx", arr)
        back = read_idx(tmp_path / "a.idx")
        assert back.tobytes() == np.asarray(arr, dtype=np.dtype(dtype).newbyteorder(">")).tobytes()
        assert (tmp_path / "a.idx").read_bytes() == encode_idx(back)


def test_synthetic_dataset_round_trip_through_idx(tmp_path):
    ds = make_synthetic(SyntheticSpec(sample_count=50))
    write_idx(tmp_path / "mix.idx", ds.examples)
    assert read_idx(tmp_path / "mix.idx").astype(np.float64).tobytes() == ds.examples.tobytes()


def test_gzip_and_missing_files(tmp_path):
    import gzip
    raw = (FIXTURES / "one-zero-image.idx3-ubyte").read_bytes()
    with gzip.open(tmp_path / "train-images-idx3-ubyte.gz", "wb") as fh:
        fh.write(raw)
    images, labels = find_mnist_files(tmp_path)
    assert images.name.endswith(".gz") and labels is None
    assert len(load_mnist_idx(images)) == 1
    with pytest.raises(DataError):
        read_idx(tmp_path / "missing")
    with pytest.raises(DataError):
        find_mnist_files(tmp_path / "empty_dir_that_is_not_there")


def test_short_headers():
    with pytest.raises(TruncatedFileError):
        parse_idx(b"\x00\x00")
    with pytest.raises(TruncatedFileError):
        parse_idx(b"\x00\x00\x08\x02\x00\x00\x00\x01")
    with pytest.raises(BadMagicError):
        parse_idx(b"\x01\x00\x08\x01\x00\x00\x00\x00")


# --- synthetic ---------------------------------------------------------------------

def test_collapsed_mixture():
    ds = sample_gaussian_mixture(SyntheticSpec(mode_count=1, radius=0.0, mode_std=1e-9, sample_count=100))
    assert np.abs(ds.examples).max() < 1e-7


def test_mode_proportions():
    ds = sample_gaussian_mixture(SyntheticSpec(mode_count=8, sample_count=10_000, seed=3))
    share = np.bincount(ds.labels, minlength=8) / 10_000
    assert share.min() >= 0.09 and share.max() <= 0.16


def test_synthetic_determinism_and_modes_on_circle():
    spec = SyntheticSpec(mode_count=4, mode_std=0.01, radius=3.0, sample_count=200, seed=9)
    a, b = make_synthetic(spec), make_synthetic(spec)
    assert a.examples.tobytes() == b.examples.tobytes()
    assert np.allclose(np.linalg.norm(a.examples, axis=1), 3.0, atol=0.1)
    assert make_synthetic(SyntheticSpec(seed=10)).examples.tobytes() != make_synthetic(SyntheticSpec()).examples.tobytes()


def test_swiss_roll_shape():
    ds = make_synthetic(SyntheticSpec(kind="swiss_roll", sample_count=300))
    assert ds.examples.shape == (300, 2) and ds.labels is None


def test_synthetic_spec_parsing_and_validation():
    spec = parse_synthetic_spec("gaussian_mixture", "modes=5,std=0.2,count=40,seed=2")
    assert (spec.mode_count, spec.mode_std, spec.sample_count, spec.seed) == (5, 0.2, 40, 2)
    with pytest.raises(ConfigError):
        parse_synthetic_spec("gaussian_mixture", "mode=5")
    with pytest.raises(ConfigError):
        SyntheticSpec(mode_std=0.0)
    with pytest.raises(ConfigError):
        SyntheticSpec(sample_count=0)


def test_csv_round_trip(tmp_path):
    ds = make_synthetic(SyntheticSpec(sample_count=30))
    write_csv(tmp_path / "d.csv", ds)
    assert (tmp_path / "d.csv").read_text().splitlines()[0] == "x0,x1,mode"
    back = read_csv(tmp_path / "d.csv")
    assert back.examples.tobytes() == ds.examples.tobytes()
    assert back.labels.tolist() == ds.labels.tolist()


# --- prior, streams and splits ---------------------------------------------------------

def test_prior_sampler():
    assert np.abs(sample_prior(PriorSpec(3, 1e-18), 50, 0)).max() < 1e-7
    draws = sample_prior(PriorSpec(4, 2.5), 100_000, 1)
    assert abs(draws.var() / 2.5 - 1) < 0.03
    assert sample_prior(PriorSpec(2, 1.0), 5, 1).tobytes() != sample_prior(PriorSpec(2, 1.0), 5, 2).tobytes()
    assert sample_prior(PriorSpec(2, 1.0), 5, 1).tobytes() == sample_prior(PriorSpec(2, 1.0), 5, 1).tobytes()


def test_streams_are_independent():
    a = rng_stream(0, "prior").standard_normal(10)
    b = rng_stream(0, "data").standard_normal(10)
    assert a.tobytes() != b.tobytes()
    with pytest.raises(ConfigError):
        rng_stream(0, "misc")


def test_split_examples():
    ds = Dataset(np.arange(20.0).reshape(10, 2))
    s = split(ds, 0.2, seed=4)
    assert (len(s.train), len(s.test)) == (8, 2)
    assert sorted(np.concatenate([s.train, s.test]).tolist()) == list(range(10))
    again = split(ds, 0.2, seed=4)
    assert s.test.tolist() == again.test.tolist()
    with pytest.raises(DataError):
        split(ds, 0.01, seed=0)
    with pytest.raises(ConfigError):
        split(ds, 1.0, seed=0)


def test_dataset_rejects_bad_splits():
    with pytest.raises(DataError):
        Dataset(np.zeros((3, 1)), train=[0, 1], test=[1, 2])
    with pytest.raises(DataError):
        Dataset(np.zeros((3, 1)), train=[0], test=[1])
