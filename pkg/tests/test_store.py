"""Embedding store: binary round-trips, corruption handling, validation
messages, and the synthetic generator's statistical contracts."""

import struct
import zlib
from pathlib import Path

import numpy as np
import pytest

from mmproto.errors import (
    ConfigurationError,
    PartitionError,
    StoreChecksumError,
    StoreFormatError,
    StoreTruncationError,
    StoreValidationError,
)
from mmproto.store import (
    EmbeddingStore,
    StoreManifest,
    gen_synthetic,
    payload_bytes,
    read_store,
    split_store,
    validate_store,
    write_store,
)


def small_store():
    return gen_synthetic(seed=3, n_classes=2, videos_per_class=3, frames=4,
                         dim=8, class_sep=1.0, text_corr=0.5, n_templates=2)


class TestRoundTrip:
    def test_bitwise_roundtrip(self, tmp_path):
        store = small_store()
        write_store(store, tmp_path)
        loaded = read_store(tmp_path)
        assert loaded.manifest == store.manifest
        for vid, _ in store.manifest.videos:
            assert np.array_equal(loaded.visual[vid], store.visual[vid])
        assert np.array_equal(loaded.text, store.text)

    def test_rewrite_is_byte_identical(self, tmp_path):
        store = small_store()
        write_store(store, tmp_path)
        first = (tmp_path / "embeddings.bin").read_bytes()
        first_manifest = (tmp_path / "manifest.json").read_bytes()
        write_store(read_store(tmp_path), tmp_path)
        assert (tmp_path / "embeddings.bin").read_bytes() == first
        assert (tmp_path / "manifest.json").read_bytes() == first_manifest

    def test_split_survives_roundtrip(self, tmp_path):
        store = small_store()
        split_store(store, ["class00"], [], ["class01"])
        write_store(store, tmp_path)
        loaded = read_store(tmp_path)
        assert loaded.manifest.split == store.manifest.split
        assert loaded.split_class_indices("base") == [0]
        assert loaded.split_class_indices("novel") == [1]


class TestCorruption:
    @pytest.fixture
    def written(self, tmp_path):
        write_store(small_store(), tmp_path)
        return tmp_path

    def test_missing_files(self, tmp_path):
        with pytest.raises(StoreFormatError):
            read_store(tmp_path / "nowhere")

    def test_wrong_magic(self, written):
        payload = written / "embeddings.bin"
        raw = bytearray(payload.read_bytes())
        raw[:4] = b"NOPE"
        payload.write_bytes(bytes(raw))
        with pytest.raises(StoreFormatError):
            read_store(written)

    def test_unsupported_version(self, written):
        payload = written / "embeddings.bin"
        raw = bytearray(payload.read_bytes())
        raw[4:8] = struct.pack("<I", 99)
        payload.write_bytes(bytes(raw))
        with pytest.raises(StoreFormatError):
            read_store(written)

    def test_truncated_payload(self, written):
        payload = written / "embeddings.bin"
        raw = payload.read_bytes()
        payload.write_bytes(raw[:len(raw) // 2])
        with pytest.raises(StoreTruncationError):
            read_store(written)

    def test_truncated_to_almost_nothing(self, written):
        (written / "embeddings.bin").write_bytes(b"MPES")
        with pytest.raises(StoreTruncationError):
            read_store(written)

    def test_flipped_float_fails_checksum(self, written):
        payload = written / "embeddings.bin"
        raw = bytearray(payload.read_bytes())
        raw[40] ^= 0xFF   # inside the first visual block
        payload.write_bytes(bytes(raw))
        with pytest.raises(StoreChecksumError):
            read_store(written)

    def test_trailing_garbage_rejected(self, written):
        payload = written / "embeddings.bin"
        payload.write_bytes(payload.read_bytes() + b"\x00" * 8)
        with pytest.raises(StoreFormatError):
            read_store(written)

    def test_manifest_payload_dim_mismatch(self, written):
        # recompute a valid-CRC payload whose header claims d=16
        store = read_store(written)
        store.manifest.dim = 16
        for vid in store.visual:
            store.visual[vid] = np.repeat(store.visual[vid], 2, axis=1)
        store.text = np.repeat(store.text, 2, axis=2)
        (written / "embeddings.bin").write_bytes(payload_bytes(store))
        with pytest.raises(StoreValidationError, match="dim"):
            read_store(written)

    def test_bad_manifest_json(self, written):
        (written / "manifest.json").write_text("{not json")
        with pytest.raises(StoreFormatError):
            read_store(written)


class TestValidation:
    def test_wrong_visual_width_names_field(self):
        store = small_store()
        vid = store.manifest.videos[0][0]
        store.visual[vid] = store.visual[vid][:, :7]
        with pytest.raises(StoreValidationError, match="visual"):
            validate_store(store)

    def test_missing_record_lists_ids(self):
        store = small_store()
        vid = store.manifest.videos[0][0]
        del store.visual[vid]
        with pytest.raises(StoreValidationError, match=vid):
            validate_store(store)

    def test_class_index_out_of_range(self):
        store = small_store()
        store.manifest.videos[0] = (store.manifest.videos[0][0], 9)
        with pytest.raises(StoreValidationError, match="class_index"):
            validate_store(store)

    def test_text_shape_mismatch(self):
        store = small_store()
        store.text = store.text[:, :1, :]
        with pytest.raises(StoreValidationError, match="text"):
            validate_store(store)

    def test_non_finite_rejected(self):
        store = small_store()
        store.text = store.text.copy()
        store.text[0, 0, 0] = np.inf
        with pytest.raises(StoreValidationError, match="finite"):
            validate_store(store)

    def test_split_disjointness_enforced(self):
        store = small_store()
        split_store(store, ["class00"], [], ["class01"])
        # force one video of class01 into base: class straddles splits
        vid = store.videos_of_class(1)[0]
        store.manifest.split[vid] = "base"
        with pytest.raises(StoreValidationError, match="split"):
            validate_store(store)

    def test_write_validates_first(self, tmp_path):
        store = small_store()
        store.text = store.text[:1]
        with pytest.raises(StoreValidationError):
            write_store(store, tmp_path)


class TestGenSynthetic:
    def test_same_seed_bitwise_identical(self):
        a = gen_synthetic(seed=9, n_classes=3, videos_per_class=2, frames=4,
                          dim=8, class_sep=2.0, text_corr=0.7)
        b = gen_synthetic(seed=9, n_classes=3, videos_per_class=2, frames=4,
                          dim=8, class_sep=2.0, text_corr=0.7)
        assert np.array_equal(a.text, b.text)
        for vid, _ in a.manifest.videos:
            assert np.array_equal(a.visual[vid], b.visual[vid])

    def test_different_seed_differs(self):
        a = gen_synthetic(seed=1, n_classes=2, videos_per_class=2, frames=3,
                          dim=8, class_sep=2.0, text_corr=0.7)
        b = gen_synthetic(seed=2, n_classes=2, videos_per_class=2, frames=3,
                          dim=8, class_sep=2.0, text_corr=0.7)
        assert not np.array_equal(a.text, b.text)

    def test_high_class_sep_aligns_text_to_class_mean(self):
        store = gen_synthetic(seed=5, n_classes=3, videos_per_class=5,
                              frames=4, dim=32, class_sep=100.0, text_corr=1.0)
        for ci in range(3):
            frames = np.concatenate(
                [store.visual[v] for v in store.videos_of_class(ci)])
            class_mean = frames.mean(axis=0)
            class_mean /= np.linalg.norm(class_mean)
            for ti in range(store.manifest.n_templates):
                cos = float(store.text[ti, ci] @ class_mean)
                assert cos > 0.99

    def test_class_sep_zero_means_nearly_orthogonal(self):
        store = gen_synthetic(seed=11, n_classes=4, videos_per_class=3,
                              frames=4, dim=64, class_sep=0.0, text_corr=0.5)
        means = []
        for ci in range(4):
            frames = np.concatenate(
                [store.visual[v] for v in store.videos_of_class(ci)])
            mean = frames.mean(axis=0)
            means.append(mean / np.linalg.norm(mean))
        for i in range(4):
            for j in range(i + 1, 4):
                assert abs(float(means[i] @ means[j])) < 0.3

    def test_separable_store_nearest_mean_oracle(self, separable_store):
        # class_sep=4, d=64: a nearest-class-mean classifier over
        # frame-averaged features must be nearly perfect
        store = separable_store
        class_means = {}
        for ci in range(len(store.manifest.classes)):
            feats = [store.visual[v].mean(axis=0)
                     for v in store.videos_of_class(ci)]
            class_means[ci] = np.mean(feats, axis=0)
        correct = 0
        for vid, ci in store.manifest.videos:
            feat = store.visual[vid].mean(axis=0)
            scores = {cj: float(feat @ m) for cj, m in class_means.items()}
            correct += max(scores, key=scores.get) == ci
        assert correct / len(store.manifest.videos) >= 0.99

    def test_invalid_ranges_rejected(self):
        with pytest.raises(ConfigurationError):
            gen_synthetic(seed=0, n_classes=2, videos_per_class=2, frames=4,
                          dim=8, class_sep=-1.0, text_corr=0.5)
        with pytest.raises(ConfigurationError):
            gen_synthetic(seed=0, n_classes=2, videos_per_class=2, frames=4,
                          dim=8, class_sep=1.0, text_corr=1.5)
        with pytest.raises(ConfigurationError):
            gen_synthetic(seed=0, n_classes=2, videos_per_class=2, frames=1,
                          dim=8, class_sep=1.0, text_corr=0.5)

    def test_all_embeddings_unit_norm(self):
        store = small_store()
        for vid, _ in store.manifest.videos:
            np.testing.assert_allclose(
                np.linalg.norm(store.visual[vid], axis=1), 1.0, atol=1e-5)
        np.testing.assert_allclose(
            np.linalg.norm(store.text, axis=2), 1.0, atol=1e-5)


class TestSplitStore:
    def test_partition_recorded_per_video(self):
        store = gen_synthetic(seed=2, n_classes=5, videos_per_class=2,
                              frames=3, dim=8, class_sep=1.0, text_corr=0.5)
        names = store.manifest.classes
        split_store(store, names[:3], names[3:4], names[4:])
        assert len(store.manifest.split) == len(store.manifest.videos)
        assert store.split_class_indices("base") == [0, 1, 2]
        assert store.split_class_indices("val") == [3]
        assert store.split_class_indices("novel") == [4]

    def test_overlap_rejected(self):
        store = small_store()
        with pytest.raises(PartitionError):
            split_store(store, ["class00", "class01"], [], ["class01"])

    def test_unknown_class_rejected(self):
        store = small_store()
        with pytest.raises(PartitionError):
            split_store(store, ["class00", "mystery"], [], ["class01"])

    def test_uncovered_class_rejected(self):
        store = small_store()
        with pytest.raises(PartitionError):
            split_store(store, ["class00"], [], [])

    def test_empty_val_is_legal(self):
        store = small_store()
        split_store(store, ["class00"], [], ["class01"])
        assert store.split_class_indices("val") == []
