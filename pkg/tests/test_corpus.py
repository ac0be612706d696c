"""Corpus synthesis, ingestion, and round-trip contracts."""

import numpy as np
import pytest
import scipy.ndimage as ndi
from PIL import Image

from crackcs.corpus import (
    Corpus,
    CorpusConfig,
    Sample,
    generate_corpus,
    generate_sample,
    ingest_directory,
    load_corpus,
    resize_bilinear,
    save_corpus,
)
from crackcs.errors import ConfigError, IntegrityError


def small_config(**overrides):
    base = dict(image_size=(32, 32), train_count=4, validation_count=2, master_seed=99)
    base.update(overrides)
    return CorpusConfig(**base)


def test_config_rejects_bad_geometry():
    with pytest.raises(ConfigError):
        CorpusConfig(image_size=(48, 64))
    with pytest.raises(ConfigError):
        CorpusConfig(image_size=(16, 16))
    with pytest.raises(ConfigError):
        CorpusConfig(width_min=3, width_max=2)


def test_generate_sample_is_deterministic():
    cfg = small_config()
    a = generate_sample(cfg, 3)
    b = generate_sample(cfg, 3)
    assert np.array_equal(a.image, b.image)
    assert np.array_equal(a.mask, b.mask)
    assert a.seed == b.seed


def test_sample_value_ranges_and_fraction():
    cfg = small_config()
    for i in range(6):
        s = generate_sample(cfg, i)
        assert s.image.shape == (1, 32, 32)
        assert s.image.min() >= -1.0 and s.image.max() <= 1.0
        frac = s.mask.mean()
        assert 0.0 < frac < 0.2
        assert set(np.unique(s.mask)) <= {0, 1}


def test_mask_fractions_over_many_samples():
    cfg = CorpusConfig(image_size=(64, 64), train_count=1, validation_count=1, master_seed=5)
    fracs = [generate_sample(cfg, i).mask.mean() for i in range(200)]
    assert min(fracs) >= 0.005
    assert max(fracs) <= 0.15


def test_cracks_are_darker_than_background():
    cfg = small_config(master_seed=123)
    for i in range(5):
        s = generate_sample(cfg, i)
        crack = s.image[0][s.mask.astype(bool)]
        background = s.image[0][~s.mask.astype(bool)]
        assert crack.min() < background.mean()


def test_unbranched_straight_crack_is_connected():
    cfg = small_config(branch_probability=0.0, waviness=0.0)
    s = generate_sample(cfg, 0)
    _, n = ndi.label(s.mask, structure=np.ones((3, 3)))
    assert n == 1


def test_resize_preserves_constants():
    img = np.full((1, 37, 53), 0.25)
    out = resize_bilinear(img, (64, 64))
    assert out.shape == (1, 64, 64)
    assert np.allclose(out, 0.25, atol=1e-12)


def test_resize_shape_contract():
    img = np.zeros((3, 256, 256))
    assert resize_bilinear(img, (64, 64)).shape == (3, 64, 64)


def test_resize_2x2_to_1x1_hits_center_average():
    # source coordinate of the single output pixel is the image center, so
    # the bilinear sample is the mean of the four corners
    img = np.array([[[0.0, 85.0], [170.0, 255.0]]]) / 127.5 - 1.0
    out = resize_bilinear(img, (1, 1))
    expected = (0.0 + 85.0 + 170.0 + 255.0) / 4.0 / 127.5 - 1.0
    assert abs(out[0, 0, 0] - expected) < 1e-12


def test_corpus_roundtrip(tmp_path):
    corpus = generate_corpus(small_config())
    save_corpus(corpus, tmp_path / "c")
    loaded = load_corpus(tmp_path / "c")
    assert len(loaded.train) == 4 and len(loaded.validation) == 2
    for orig, back in zip(corpus.all_samples(), loaded.all_samples()):
        assert np.array_equal(orig.mask, back.mask)
        assert np.abs(orig.image - back.image).max() <= 2.0 / 255.0
        assert orig.seed == back.seed


def test_corpus_regenerates_identical_masks_from_manifest(tmp_path):
    corpus = generate_corpus(small_config())
    save_corpus(corpus, tmp_path / "c")
    loaded = load_corpus(tmp_path / "c")
    regen = generate_corpus(loaded.config)
    for a, b in zip(corpus.all_samples(), regen.all_samples()):
        assert np.array_equal(a.mask, b.mask)
        assert np.array_equal(a.image, b.image)


def test_load_refuses_corrupted_image(tmp_path):
    corpus = generate_corpus(small_config())
    save_corpus(corpus, tmp_path / "c")
    victim = tmp_path / "c" / "train" / "images" / "00000.png"
    img = np.asarray(Image.open(victim)).copy()
    img[0, 0] = 255 - img[0, 0]
    Image.fromarray(img).save(victim)
    with pytest.raises(IntegrityError, match="checksum"):
        load_corpus(tmp_path / "c")


def test_ingest_directory(tmp_path):
    src = tmp_path / "imgs"
    src.mkdir()
    Image.fromarray(np.full((100, 80), 128, dtype=np.uint8)).save(src / "a.png")
    rgb = np.zeros((50, 50, 3), dtype=np.uint8)
    rgb[..., 0] = 200
    Image.fromarray(rgb).save(src / "b.png")
    (src / "broken.png").write_bytes(b"not a png")
    cfg = small_config()
    corpus = ingest_directory(src, cfg)
    assert corpus.kind == "ingested"
    assert len(corpus.train) == 2  # broken file skipped
    for s in corpus.train:
        assert s.image.shape == (1, 32, 32)
        assert s.mask is None
    # constant image stays constant through bilinear resize
    assert np.allclose(corpus.train[0].image, 128 / 127.5 - 1.0, atol=1e-12)


def test_ingest_empty_directory_errors(tmp_path):
    (tmp_path / "empty").mkdir()
    with pytest.raises(ValueError):
        ingest_directory(tmp_path / "empty", small_config())


def test_ingested_corpus_roundtrip(tmp_path):
    src = tmp_path / "imgs"
    src.mkdir()
    Image.fromarray((np.arange(64 * 64, dtype=np.uint32).reshape(64, 64) % 256).astype(np.uint8)).save(
        src / "a.png"
    )
    corpus = ingest_directory(src, small_config())
    save_corpus(corpus, tmp_path / "c")
    loaded = load_corpus(tmp_path / "c")
    assert loaded.kind == "ingested"
    assert loaded.train[0].mask is None
    assert np.abs(loaded.train[0].image - corpus.train[0].image).max() <= 2.0 / 255.0
