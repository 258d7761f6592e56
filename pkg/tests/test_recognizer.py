"""Landmark features, PCA fit, nearest-centroid identification, model files."""

import numpy as np
import pytest

from maskveil import (DomainError, FeatureLayout, FormatError, LandmarkSet, PixelImage,
                      RecognizerModel, embed, extract_feature_vector, load_model,
                      parse_landmarks_file, pca_project_2d, recognize, save_model,
                      train_recognizer)
from maskveil.recognizer import _fix_signs, _pca_fit, partition_samples, patch_top_lefts
from support import rand_image


def orthonormal_basis(rng, d, k):
    q, _ = np.linalg.qr(rng.normal(size=(d, d)))
    return q[:, :k]


def toy_model(rng, d=16, k=4, channels=1, n_ident=2):
    lay = FeatureLayout(1, ("pt",), patch_size=4, patch_channels=channels)
    basis = orthonormal_basis(rng, d * channels // channels * channels and d, k) \
        if False else orthonormal_basis(rng, d, k)
    return RecognizerModel(lay, rng.normal(size=d), basis, np.ones(k),
                           tuple(f"id{i}" for i in range(n_ident)),
                           rng.normal(size=(n_ident, k)))


class TestTopLefts:
    def test_center_convention(self):
        lay = FeatureLayout(1, ("a",), 4, 3)
        lm = LandmarkSet(("a",), np.array([[0.5, 0.5]]))
        tls = patch_top_lefts(lm, lay, 256, 256)
        # center pixel floor(0.5*255 + 0.5) = 128, top-left 128-2
        assert tls.tolist() == [[126, 126]]

    def test_corner_clamping(self):
        lay = FeatureLayout(1, ("a", "b"), 4, 3)
        lm = LandmarkSet(("a", "b"), np.array([[0.0, 0.0], [1.0, 1.0]]))
        tls = patch_top_lefts(lm, lay, 256, 256)
        assert tls.tolist() == [[0, 0], [252, 252]]

    def test_canvas_too_small(self):
        lay = FeatureLayout(1, ("a",), 4, 1)
        lm = LandmarkSet(("a",), np.array([[0.5, 0.5]]))
        with pytest.raises(DomainError):
            patch_top_lefts(lm, lay, 3, 8)


class TestFeatureExtraction:
    def test_constant_image_gives_constant_vector(self):
        img = PixelImage(np.full((64, 64, 3), 128, dtype=np.uint8))
        lay = FeatureLayout(1, ("a", "b"), 4, 3)
        lm = LandmarkSet(("a", "b"), np.array([[0.25, 0.25], [0.75, 0.5]]))
        feat = extract_feature_vector(img, lm, lay)
        assert feat.shape == (2 * 16 * 3,)
        assert np.all(feat == 128.0 / 255.0)

    def test_matches_hand_indexed_patch(self):
        rng = np.random.default_rng(30)
        img = rand_image(rng, 64, 64, 3)
        lay = FeatureLayout(1, ("a",), 4, 3)
        lm = LandmarkSet(("a",), np.array([[0.5, 0.5]]))
        cx = int(np.floor(0.5 * 63 + 0.5))
        want = img.pixels[cx - 2:cx + 2, cx - 2:cx + 2, :].astype(np.float64).reshape(-1) * (1.0 / 255.0)
        assert np.array_equal(extract_feature_vector(img, lm, lay), want)

    def test_label_mismatch_rejected(self):
        img = rand_image(np.random.default_rng(31), 32, 32, 3)
        lay = FeatureLayout(1, ("a",), 4, 3)
        lm = LandmarkSet(("b",), np.array([[0.5, 0.5]]))
        with pytest.raises(DomainError):
            extract_feature_vector(img, lm, lay)

    def test_channel_mismatch_rejected(self):
        img = rand_image(np.random.default_rng(32), 32, 32, 1)
        lay = FeatureLayout(1, ("a",), 4, 3)
        lm = LandmarkSet(("a",), np.array([[0.5, 0.5]]))
        with pytest.raises(DomainError):
            extract_feature_vector(img, lm, lay)


class TestLandmarkSet:
    def test_subset_reorders(self):
        lm = LandmarkSet(("a", "b", "c"), np.array([[0.1, 0.2], [0.3, 0.4], [0.5, 0.6]]))
        sub = lm.subset(("c", "a"))
        assert sub.labels == ("c", "a")
        assert np.array_equal(sub.points, np.array([[0.5, 0.6], [0.1, 0.2]]))

    def test_subset_missing_label(self):
        lm = LandmarkSet(("a",), np.array([[0.1, 0.2]]))
        with pytest.raises(DomainError):
            lm.subset(("z",))

    def test_out_of_range_coordinates_rejected(self):
        with pytest.raises(DomainError):
            LandmarkSet(("a",), np.array([[1.5, 0.5]]))

    def test_points_read_only(self):
        lm = LandmarkSet(("a",), np.array([[0.1, 0.2]]))
        with pytest.raises(ValueError):
            lm.points[0, 0] = 0.9


class TestPcaFit:
    def test_two_sample_hand_solution(self):
        data = np.array([[0.0, 0.0], [2.0, 2.0]])
        mean, basis = _pca_fit(data, 1)
        assert np.allclose(mean, [1.0, 1.0], atol=1e-12)
        assert np.allclose(basis[:, 0], [1 / np.sqrt(2), 1 / np.sqrt(2)], atol=1e-12)

    def test_sign_convention(self):
        b = np.array([[-0.6, 0.0], [0.8, -1.0]])
        fixed = _fix_signs(b.copy())
        # each column's first component over the threshold becomes positive
        assert fixed[0, 0] == 0.6 and fixed[1, 0] == -0.8
        assert fixed[1, 1] == 1.0

    def test_sign_convention_skips_near_zero_leads(self):
        b = np.array([[1e-14], [-0.5]])
        fixed = _fix_signs(b.copy())
        assert fixed[1, 0] == 0.5

    def test_orthonormal_output(self):
        rng = np.random.default_rng(33)
        data = rng.normal(size=(20, 12))
        _mean, basis = _pca_fit(data, 5)
        assert np.allclose(basis.T @ basis, np.eye(5), atol=1e-10)


class TestModelValidation:
    def test_non_orthonormal_basis_rejected(self):
        rng = np.random.default_rng(34)
        lay = FeatureLayout(1, ("pt",), 4, 1)
        bad = rng.normal(size=(16, 4))
        with pytest.raises(DomainError):
            RecognizerModel(lay, np.zeros(16), bad, np.ones(4), ("a", "b"), rng.normal(size=(2, 4)))

    def test_nonpositive_tau_rejected(self):
        rng = np.random.default_rng(35)
        lay = FeatureLayout(1, ("pt",), 4, 1)
        basis = orthonormal_basis(rng, 16, 4)
        with pytest.raises(DomainError):
            RecognizerModel(lay, np.zeros(16), basis, np.array([1.0, 0.0, 1.0, 1.0]),
                            ("a", "b"), rng.normal(size=(2, 4)))

    def test_single_identity_rejected(self):
        rng = np.random.default_rng(36)
        lay = FeatureLayout(1, ("pt",), 4, 1)
        basis = orthonormal_basis(rng, 16, 4)
        with pytest.raises(DomainError):
            RecognizerModel(lay, np.zeros(16), basis, np.ones(4), ("a",), rng.normal(size=(1, 4)))


class TestEmbed:
    def test_feature_equal_to_mean_embeds_at_origin(self):
        rng = np.random.default_rng(37)
        img = rand_image(rng, 32, 32, 1)
        lay = FeatureLayout(1, ("pt",), 4, 1)
        lm = LandmarkSet(("pt",), np.array([[0.5, 0.5]]))
        feat = extract_feature_vector(img, lm, lay)
        model = RecognizerModel(lay, feat, orthonormal_basis(rng, 16, 4), np.ones(4),
                                ("a", "b"), rng.normal(size=(2, 4)))
        assert np.allclose(embed(model, img, lm), np.zeros(4), atol=1e-12)

    def test_single_byte_offset_moves_along_one_axis(self):
        rng = np.random.default_rng(38)
        img = rand_image(rng, 32, 32, 1)
        lay = FeatureLayout(1, ("pt",), 4, 1)
        lm = LandmarkSet(("pt",), np.array([[0.5, 0.5]]))
        feat = extract_feature_vector(img, lm, lay)
        model = RecognizerModel(lay, feat, np.eye(16)[:, :4], np.ones(4),
                                ("a", "b"), rng.normal(size=(2, 4)))
        px = img.pixels.copy()
        px.setflags(write=True)
        tls = patch_top_lefts(lm, lay, 32, 32)
        tx, ty = int(tls[0, 0]), int(tls[0, 1])
        px[ty, tx, 0] ^= 0xFF  # first byte of the patch
        img2 = PixelImage(px)
        delta = extract_feature_vector(img2, lm, lay)[0] - feat[0]
        z = embed(model, img2, lm)
        assert np.allclose(z, [delta, 0.0, 0.0, 0.0], atol=1e-12)

    def test_matches_bruteforce_matmul(self):
        rng = np.random.default_rng(39)
        model = toy_model(rng, k=6)
        img = rand_image(rng, 32, 32, 1)
        lm = LandmarkSet(("pt",), np.array([[0.37, 0.68]]))
        feat = extract_feature_vector(img, lm, model.layout)
        want = np.array([
            model.tau[j] * sum(model.eigenbasis[i, j] * (feat[i] - model.mean_vector[i])
                               for i in range(16))
            for j in range(6)])
        assert np.allclose(embed(model, img, lm), want, atol=1e-9)

    def test_tau_scales_axes(self):
        rng = np.random.default_rng(40)
        lay = FeatureLayout(1, ("pt",), 4, 1)
        lm = LandmarkSet(("pt",), np.array([[0.5, 0.5]]))
        img = rand_image(rng, 32, 32, 1)
        basis = orthonormal_basis(rng, 16, 3)
        mean = rng.normal(size=16)
        m1 = RecognizerModel(lay, mean, basis, np.ones(3), ("a", "b"), rng.normal(size=(2, 3)))
        m2 = RecognizerModel(lay, mean, basis, np.array([2.0, 3.0, 4.0]), ("a", "b"),
                             m1.centroids)
        z1, z2 = embed(m1, img, lm), embed(m2, img, lm)
        assert np.allclose(z2, z1 * np.array([2.0, 3.0, 4.0]), atol=1e-12)


class TestRecognize:
    def test_picks_nearest_centroid(self):
        rng = np.random.default_rng(41)
        lay = FeatureLayout(1, ("pt",), 4, 1)
        lm = LandmarkSet(("pt",), np.array([[0.5, 0.5]]))
        img = rand_image(rng, 32, 32, 1)
        feat = extract_feature_vector(img, lm, lay)
        basis = orthonormal_basis(rng, 16, 4)
        z = basis.T @ (feat - np.zeros(16))
        centroids = np.stack([z + 0.01, z + 10.0])
        model = RecognizerModel(lay, np.zeros(16), basis, np.ones(4), ("near", "far"), centroids)
        name, conf = recognize(model, img, lm)
        assert name == "near"
        assert 0.0 < conf < 1.0

    def test_exact_tie_goes_to_lowest_index(self):
        rng = np.random.default_rng(42)
        lay = FeatureLayout(1, ("pt",), 4, 1)
        lm = LandmarkSet(("pt",), np.array([[0.5, 0.5]]))
        img = rand_image(rng, 32, 32, 1)
        feat = extract_feature_vector(img, lm, lay)
        basis = orthonormal_basis(rng, 16, 4)
        z = basis.T @ feat
        model = RecognizerModel(lay, np.zeros(16), basis, np.ones(4), ("aa", "bb"),
                                np.stack([z, z]))
        name, conf = recognize(model, img, lm)
        assert name == "aa"
        assert conf == pytest.approx(0.5, abs=1e-12)

    def test_uniform_tau_rescale_keeps_prediction(self, small_items, small_model, layout5):
        m2 = RecognizerModel(small_model.layout, small_model.mean_vector,
                             small_model.eigenbasis, small_model.tau * 7.0,
                             small_model.identities, small_model.centroids * 7.0)
        for it in small_items[:6]:
            lm = it.landmarks.subset(layout5.point_labels)
            assert recognize(small_model, it.image, lm)[0] == recognize(m2, it.image, lm)[0]


class TestPartition:
    def test_per_identity_split(self):
        samples = [("a", None, None)] * 4 + [("b", None, None)] * 4
        train, hold = partition_samples(samples, 0.75)
        assert train == [0, 1, 2, 4, 5, 6]
        assert hold == [3, 7]

    def test_minimum_one_training_row(self):
        samples = [("a", None, None), ("a", None, None), ("b", None, None), ("b", None, None)]
        train, hold = partition_samples(samples, 0.1)
        assert train == [0, 2]
        assert hold == [1, 3]

    def test_full_split_leaves_no_holdout(self):
        samples = [("a", None, None)] * 3
        train, hold = partition_samples(samples, 1.0)
        assert train == [0, 1, 2]
        assert hold == []


class TestTraining:
    def test_small_corpus_model(self, small_model):
        assert small_model.holdout_accuracy == 1.0
        assert len(small_model.identities) == 6
        assert small_model.centroids.shape == (6, 12)

    def test_holdout_none_when_split_is_one(self, small_items, layout5):
        samples = [(it.identity, it.image, it.landmarks.subset(layout5.point_labels))
                   for it in small_items]
        m = train_recognizer(samples, layout5, k=8, split_fraction=1.0)
        assert m.holdout_accuracy is None

    def test_rejects_one_identity(self, small_items, layout5):
        rows = [(1, it.image, it.landmarks.subset(layout5.point_labels))
                for it in small_items if it.identity == "id00"]
        rows = [("only", img, lm) for _x, img, lm in rows]
        with pytest.raises(DomainError):
            train_recognizer(rows, layout5, k=2)

    def test_rejects_thin_identity(self, small_items, layout5):
        rows = [(it.identity, it.image, it.landmarks.subset(layout5.point_labels))
                for it in small_items if it.identity in ("id00", "id01")]
        rows = rows[:-3]  # id01 keeps a single image
        with pytest.raises(DomainError, match="id01"):
            train_recognizer(rows, layout5, k=2)

    def test_rejects_bad_k(self, small_items, layout5):
        samples = [(it.identity, it.image, it.landmarks.subset(layout5.point_labels))
                   for it in small_items]
        with pytest.raises(DomainError):
            train_recognizer(samples, layout5, k=0)
        with pytest.raises(DomainError):
            train_recognizer(samples, layout5, k=10_000)

    def test_centroids_are_projected_class_means(self, small_items, layout5, small_model):
        samples = [(it.identity, it.image, it.landmarks.subset(layout5.point_labels))
                   for it in small_items]
        train_idx, _ = partition_samples(samples, 0.75)
        feats = {ident: [] for ident in small_model.identities}
        for i in train_idx:
            ident, img, lm = samples[i]
            f = extract_feature_vector(img, lm, layout5)
            feats[ident].append(
                small_model.tau * (small_model.eigenbasis.T @ (f - small_model.mean_vector)))
        for j, ident in enumerate(small_model.identities):
            assert np.allclose(small_model.centroids[j], np.mean(feats[ident], axis=0), atol=1e-9)


class TestProjection2D:
    def test_needs_three_items(self, small_model, small_items, layout5):
        pairs = [(it.image, it.landmarks.subset(layout5.point_labels)) for it in small_items[:2]]
        with pytest.raises(DomainError):
            pca_project_2d(small_model, pairs)

    def test_shape_and_centering(self, small_model, small_items, layout5):
        pairs = [(it.image, it.landmarks.subset(layout5.point_labels)) for it in small_items]
        pts = pca_project_2d(small_model, pairs)
        assert pts.shape == (len(pairs), 2)
        assert np.allclose(pts.mean(axis=0), [0.0, 0.0], atol=1e-9)

    def test_k1_model_pads_second_axis(self, small_items, layout5):
        samples = [(it.identity, it.image, it.landmarks.subset(layout5.point_labels))
                   for it in small_items]
        m = train_recognizer(samples, layout5, k=1)
        pairs = [(it.image, it.landmarks.subset(layout5.point_labels)) for it in small_items]
        pts = pca_project_2d(m, pairs)
        assert np.all(pts[:, 1] == 0.0)

    def test_k2_preserves_pairwise_distances(self, small_items, layout5):
        samples = [(it.identity, it.image, it.landmarks.subset(layout5.point_labels))
                   for it in small_items]
        m = train_recognizer(samples, layout5, k=2)
        pairs = [(it.image, it.landmarks.subset(layout5.point_labels)) for it in small_items]
        pts = pca_project_2d(m, pairs)
        zs = np.stack([embed(m, img, lm) for img, lm in pairs])
        for i in range(0, len(pairs), 5):
            for j in range(i + 1, len(pairs), 7):
                assert np.linalg.norm(pts[i] - pts[j]) == pytest.approx(
                    np.linalg.norm(zs[i] - zs[j]), abs=1e-9)


class TestModelFile:
    def test_round_trip_fields(self, small_model, tmp_path):
        p = tmp_path / "m.mvr"
        save_model(small_model, p)
        m = load_model(p)
        assert m.identities == small_model.identities
        assert m.layout.version_id == small_model.layout.version_id
        assert m.layout.point_labels == small_model.layout.point_labels
        assert m.holdout_accuracy == small_model.holdout_accuracy
        assert np.array_equal(m.mean_vector, small_model.mean_vector)
        assert np.array_equal(m.eigenbasis, small_model.eigenbasis)
        assert np.array_equal(m.tau, small_model.tau)
        assert np.array_equal(m.centroids, small_model.centroids)

    def test_round_trip_bytes_stable(self, small_model, tmp_path):
        p1 = tmp_path / "m1.mvr"
        p2 = tmp_path / "m2.mvr"
        save_model(small_model, p1)
        save_model(load_model(p1), p2)
        assert p1.read_bytes() == p2.read_bytes()

    def test_holdout_none_round_trips(self, small_items, layout5, tmp_path):
        samples = [(it.identity, it.image, it.landmarks.subset(layout5.point_labels))
                   for it in small_items]
        m = train_recognizer(samples, layout5, k=3, split_fraction=1.0)
        p = tmp_path / "m.mvr"
        save_model(m, p)
        assert load_model(p).holdout_accuracy is None


class TestLandmarkParsing:
    def test_happy_path(self, tmp_path):
        f = tmp_path / "lm.txt"
        f.write_text("# comment\n\nimg1.png a:0.25:0.5 b:0.75:0.5\nimg2.png a:0.1:0.1 b:0.2:0.2\n")
        table = parse_landmarks_file(f)
        assert set(table) == {"img1.png", "img2.png"}
        assert table["img1.png"].labels == ("a", "b")
        assert table["img1.png"].points[1, 0] == 0.75

    def test_malformed_triple_reports_line(self, tmp_path):
        f = tmp_path / "lm.txt"
        f.write_text("img1.png a:0.25:0.5\nimg2.png broken\n")
        with pytest.raises(FormatError, match=":2:"):
            parse_landmarks_file(f)

    def test_non_numeric_coordinate(self, tmp_path):
        f = tmp_path / "lm.txt"
        f.write_text("img1.png a:x:0.5\n")
        with pytest.raises(FormatError, match="non-numeric"):
            parse_landmarks_file(f)

    def test_duplicate_record(self, tmp_path):
        f = tmp_path / "lm.txt"
        f.write_text("img.png a:0.1:0.1\nimg.png a:0.2:0.2\n")
        with pytest.raises(FormatError, match="duplicate"):
            parse_landmarks_file(f)

    def test_out_of_range_coordinate_becomes_format_error(self, tmp_path):
        f = tmp_path / "lm.txt"
        f.write_text("img.png a:1.5:0.5\n")
        with pytest.raises(FormatError, match=":1:"):
            parse_landmarks_file(f)

    def test_no_triples(self, tmp_path):
        f = tmp_path / "lm.txt"
        f.write_text("img.png\n")
        with pytest.raises(FormatError):
            parse_landmarks_file(f)
