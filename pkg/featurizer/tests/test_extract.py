"""Feature extractor: format validity, symmetry invariants, determinism.

The tests run an untrained (seeded) ResNet-152: the invariants are
architecture-level and the ImageNet download is not needed for them.
"""

import numpy as np
import pytest
import torch
from PIL import Image

from resnetfeat import (FEATURE_DIM, FeatureJob, build_model, crop_features,
                        extract_features, ten_crops)

pytestmark = pytest.mark.filterwarnings("ignore::UserWarning")


def make_image(path, rng, size=(320, 256)):
    arr = rng.integers(0, 256, size=(size[1], size[0], 3), dtype=np.uint8)
    Image.fromarray(arr).save(path)


@pytest.fixture(scope="module")
def net():
    return build_model(FeatureJob(image_dir=".", output_path=".",
                                  weights="none", seed=7))


@pytest.fixture(scope="module")
def fixture_dir(tmp_path_factory):
    root = tmp_path_factory.mktemp("images")
    rng = np.random.default_rng(0)
    for i in range(8):
        make_image(root / f"img{i:02d}.png", rng)
    # Constant-color image: all ten crops are identical.
    Image.new("RGB", (320, 256), (90, 140, 200)).save(root / "img08_const.png")
    # Horizontally symmetric image at the target size: mirroring is a no-op.
    arr = np.random.default_rng(1).integers(0, 256, size=(256, 128, 3),
                                            dtype=np.uint8)
    sym = np.concatenate([arr, arr[:, ::-1]], axis=1)
    Image.fromarray(sym.astype(np.uint8)).save(root / "img09_sym.png")
    return root


class TestInvariants:
    def test_row_dimension(self, net):
        rng = np.random.default_rng(3)
        img = Image.fromarray(rng.integers(0, 256, size=(300, 400, 3),
                                           dtype=np.uint8))
        feats = crop_features(net, img)
        assert feats.shape == (10, FEATURE_DIM)

    def test_constant_color_crops_identical(self, net):
        img = Image.new("RGB", (320, 256), (13, 200, 40))
        feats = crop_features(net, img)
        for row in feats[1:]:
            assert np.array_equal(feats[0], row)
        # Average of ten identical crops equals the same mean computed on
        # one crop repeated: the invariant is crop identity.
        expected = np.repeat(feats[:1], 10, axis=0).mean(axis=0)
        assert np.array_equal(feats.mean(axis=0), expected)

    def test_mirror_symmetric_image_duplicates_crops(self, net):
        arr = np.random.default_rng(5).integers(0, 256, size=(256, 128, 3),
                                                dtype=np.uint8)
        sym = np.concatenate([arr, arr[:, ::-1]], axis=1).astype(np.uint8)
        img = Image.fromarray(sym)
        crops = ten_crops(img, 256, 224)
        # Crops 6-10 come from the mirrored image; mirroring a symmetric
        # image is the identity, so they match crops 1-5 exactly.
        assert torch.equal(crops[5:], crops[:5])
        feats = crop_features(net, img)
        np.testing.assert_array_equal(feats[5:], feats[:5])
        # Ten-crop average equals the five-crop average computed the same way.
        expected = np.concatenate([feats[:5], feats[:5]]).mean(axis=0)
        assert np.array_equal(feats.mean(axis=0), expected)

    def test_unsupported_tags_rejected(self):
        with pytest.raises(ValueError, match="model tag"):
            build_model(FeatureJob(".", ".", model="vgg16"))
        with pytest.raises(ValueError, match="weights tag"):
            build_model(FeatureJob(".", ".", weights="random"))


class TestExtraction:
    def test_ten_image_fixture_round_trips_through_loader(self, fixture_dir,
                                                          tmp_path):
        out = tmp_path / "features.tsv"
        job = FeatureJob(image_dir=fixture_dir, output_path=out,
                         weights="none", seed=7)
        extract_features(job)

        from vgekit.dataio import load_image_features
        store = load_image_features(out)
        assert store.dim == FEATURE_DIM
        assert len(store.features) == 10
        assert all(np.isfinite(v).all() for v in store.features.values())

    def test_rerun_is_byte_identical(self, fixture_dir, tmp_path):
        out1 = tmp_path / "a.tsv"
        out2 = tmp_path / "b.tsv"
        extract_features(FeatureJob(fixture_dir, out1, weights="none", seed=7))
        extract_features(FeatureJob(fixture_dir, out2, weights="none", seed=7))
        assert out1.read_bytes() == out2.read_bytes()

    def test_unreadable_images_skipped(self, tmp_path):
        rng = np.random.default_rng(2)
        make_image(tmp_path / "good.png", rng)
        (tmp_path / "broken.png").write_bytes(b"not an image at all")
        out = tmp_path / "f.tsv"
        extract_features(FeatureJob(tmp_path, out, weights="none", seed=7))
        lines = out.read_text().splitlines()
        assert len(lines) == 2  # header + the one good image
        assert lines[1].startswith("good\t")

    def test_all_unreadable_fails(self, tmp_path):
        (tmp_path / "broken.png").write_bytes(b"junk")
        with pytest.raises(RuntimeError, match="no image"):
            extract_features(FeatureJob(tmp_path, tmp_path / "f.tsv",
                                        weights="none", seed=7))

    def test_empty_directory_fails(self, tmp_path):
        with pytest.raises(FileNotFoundError, match="no images"):
            extract_features(FeatureJob(tmp_path, tmp_path / "f.tsv",
                                        weights="none"))
