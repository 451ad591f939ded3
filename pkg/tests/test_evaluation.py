"""Metric and report tests: brute-force oracles for PSNR/SSIM/IoU,
perceptual plugin reduction, the report golden file, and the
end-to-end scoring path with its identity bypass."""

import csv
import math

import numpy as np
import pytest

from docsr.core import BBox, rasterize_boxes, to_grayscale
from docsr.data import make_pair
from docsr.detector.backends import DetectionOutput, build_detector
from docsr.evaluation import (METRIC_UNAVAILABLE, REPORT_COLUMNS, IdentityPerceptual,
                              ReportRow, best_flags, box_iou, detection_iou,
                              draw_boxes, evaluate_model, feature_distance_report,
                              get_perceptual_plugin, perceptual_distance, psnr,
                              render_panel, render_report, ssim)
from docsr.synthdoc import generate_synthetic_document

from conftest import random_image


# ------------------------------------------------------------- oracles ----

def psnr_loops(a, b):
    d = a.astype(np.float64).ravel() - b.astype(np.float64).ravel()
    mse = sum(x * x for x in d) / d.size
    return 100.0 if mse < 1e-10 else 10.0 * math.log10(1.0 / mse)


def gaussian_kernel_loops(size=11, sigma=1.5):
    k = np.empty((size, size))
    c = (size - 1) / 2.0
    for i in range(size):
        for j in range(size):
            k[i, j] = math.exp(-((i - c) ** 2 + (j - c) ** 2) / (2 * sigma * sigma))
    return k / k.sum()


def ssim_loops(a, b):
    """Window-by-window SSIM with explicit loops."""
    if a.ndim == 3 and a.shape[2] == 3:
        a, b = to_grayscale(a), to_grayscale(b)
    if a.ndim == 3:
        a, b = a[:, :, 0], b[:, :, 0]
    a = a.astype(np.float64)
    b = b.astype(np.float64)
    k = gaussian_kernel_loops()
    c1, c2 = 0.01 ** 2, 0.03 ** 2
    h, w = a.shape
    vals = []
    for y in range(h - 10):
        for x in range(w - 10):
            wa, wb = a[y:y + 11, x:x + 11], b[y:y + 11, x:x + 11]
            mua, mub = (wa * k).sum(), (wb * k).sum()
            va = (wa * wa * k).sum() - mua ** 2
            vb = (wb * wb * k).sum() - mub ** 2
            cov = (wa * wb * k).sum() - mua * mub
            vals.append(((2 * mua * mub + c1) * (2 * cov + c2))
                        / ((mua ** 2 + mub ** 2 + c1) * (va + vb + c2)))
    return float(np.mean(vals))


class TestPsnr:
    def test_matches_loop_oracle(self, rng):
        for _ in range(10):
            a, b = random_image(rng, 9, 13), random_image(rng, 9, 13)
            assert psnr(a, b) == pytest.approx(psnr_loops(a, b), abs=1e-9)

    def test_identical_capped(self, rng):
        a = random_image(rng, 8, 8)
        assert psnr(a, a) == 100.0

    def test_hand_value(self):
        a = np.zeros((10, 10, 3))
        b = np.full((10, 10, 3), 0.1)
        assert psnr(a, b) == pytest.approx(20.0, abs=1e-12)

    def test_symmetry(self, rng):
        a, b = random_image(rng, 8, 8), random_image(rng, 8, 8)
        assert psnr(a, b) == psnr(b, a)

    def test_shape_mismatch(self):
        with pytest.raises(ValueError, match="shape mismatch"):
            psnr(np.zeros((4, 4, 3)), np.zeros((4, 5, 3)))


class TestSsim:
    def test_matches_loop_oracle_gray(self, rng):
        a = rng.random((16, 14))
        b = np.clip(a + rng.normal(0, 0.1, a.shape), 0, 1)
        assert ssim(a, b) == pytest.approx(ssim_loops(a, b), abs=1e-6)

    def test_matches_loop_oracle_color(self, rng):
        a, b = random_image(rng, 15, 15), random_image(rng, 15, 15)
        assert ssim(a, b) == pytest.approx(ssim_loops(a, b), abs=1e-6)

    def test_identical_is_one(self, rng):
        a = random_image(rng, 16, 16)
        assert ssim(a, a) == pytest.approx(1.0, abs=1e-9)

    def test_constant_zero_vs_one_closed_form(self):
        a = np.zeros((12, 12))
        b = np.ones((12, 12))
        c1 = 0.01 ** 2
        assert ssim(a, b) == pytest.approx(c1 / (1 + c1), abs=1e-12)

    def test_color_reduces_to_grayscale(self, rng):
        a, b = random_image(rng, 16, 16), random_image(rng, 16, 16)
        assert ssim(a, b) == pytest.approx(
            ssim(to_grayscale(a), to_grayscale(b)), abs=1e-12)

    def test_noise_monotone(self, rng):
        a = rng.random((24, 24))
        small = np.clip(a + rng.normal(0, 0.02, a.shape), 0, 1)
        large = np.clip(a + rng.normal(0, 0.3, a.shape), 0, 1)
        assert ssim(a, small) > ssim(a, large)

    def test_anticorrelated_structure_goes_negative(self):
        yy, xx = np.mgrid[0:16, 0:16]
        a = ((yy + xx) % 2).astype(np.float64)
        assert ssim(a, 1.0 - a) < 0.0

    def test_too_small_rejected(self):
        with pytest.raises(ValueError, match="SSIM window"):
            ssim(np.zeros((8, 8)), np.zeros((8, 8)))

    def test_bad_rank_rejected(self):
        with pytest.raises(ValueError, match="ssim expects"):
            ssim(np.zeros((12, 12, 2)), np.zeros((12, 12, 2)))


class TestBoxIou:
    def test_worked_example(self):
        a, b = BBox(0, 0, 10, 10), BBox(5, 0, 15, 10)
        assert box_iou(a, b) == pytest.approx(1 / 3, abs=1e-12)

    def test_matches_mask_on_integer_boxes(self, rng):
        for _ in range(20):
            x0, y0 = rng.integers(0, 10, 2)
            a = BBox(float(x0), float(y0), float(x0 + rng.integers(1, 10)),
                     float(y0 + rng.integers(1, 10)))
            x0, y0 = rng.integers(0, 10, 2)
            b = BBox(float(x0), float(y0), float(x0 + rng.integers(1, 10)),
                     float(y0 + rng.integers(1, 10)))
            ma = rasterize_boxes([a], 24, 24)
            mb = rasterize_boxes([b], 24, 24)
            union = np.logical_or(ma, mb).sum()
            want = np.logical_and(ma, mb).sum() / union
            assert box_iou(a, b) == pytest.approx(want, abs=1e-12)

    def test_disjoint_zero(self):
        assert box_iou(BBox(0, 0, 1, 1), BBox(5, 5, 6, 6)) == 0.0


class TestDetectionIou:
    FRAME = (20, 20)

    def test_worked_example_both_modes(self):
        sr = [BBox(0, 0, 10, 10)]
        hr = [BBox(5, 0, 15, 10)]
        for mode in ("mask", "matched"):
            assert detection_iou(sr, hr, self.FRAME, mode=mode) == \
                   pytest.approx(1 / 3, abs=1e-12), mode

    def test_empty_conventions(self):
        some = [BBox(0, 0, 5, 5)]
        for mode in ("mask", "matched"):
            assert detection_iou([], [], self.FRAME, mode=mode) == 1.0
            assert detection_iou(some, [], self.FRAME, mode=mode) == 0.0
            assert detection_iou([], some, self.FRAME, mode=mode) == 0.0

    def test_zero_area_frame_rejected(self):
        with pytest.raises(ValueError, match="zero-area frame"):
            detection_iou([], [], (0, 20))

    def test_bad_mode_rejected(self):
        with pytest.raises(ValueError, match="iou mode"):
            detection_iou([], [], self.FRAME, mode="hungarian")

    def test_duplicate_detection_dilutes_matched_but_not_mask(self):
        box = BBox(2, 2, 8, 8)
        sr = [box, BBox(2.0, 2.0, 8.0, 8.0)]
        hr = [box]
        assert detection_iou(sr, hr, self.FRAME, mode="mask") == 1.0
        assert detection_iou(sr, hr, self.FRAME, mode="matched") == \
               pytest.approx(0.5, abs=1e-12)

    def test_matched_is_greedy_not_optimal(self):
        # greedy takes the single best pair first even when the other
        # assignment would score higher in total
        sr = [BBox(0, 0, 10, 10), BBox(0, 8, 10, 18)]
        hr = [BBox(0, 1, 10, 11), BBox(0, 9, 10, 19)]
        got = detection_iou(sr, hr, self.FRAME, mode="matched")
        pairs = sorted((box_iou(p, g) for p in sr for g in hr), reverse=True)
        best, second = pairs[0], None
        # after matching the best pair, the remaining pair is forced
        forced = box_iou(sr[1], hr[1]) if box_iou(sr[0], hr[0]) == best \
            else box_iou(sr[1], hr[0])
        assert got == pytest.approx((best + forced) / 2, abs=1e-12)

    def test_mask_mode_merges_overlapping_boxes(self):
        # two half-boxes on one side equal one full box on the other
        sr = [BBox(0, 0, 10, 5), BBox(0, 5, 10, 10)]
        hr = [BBox(0, 0, 10, 10)]
        assert detection_iou(sr, hr, self.FRAME, mode="mask") == 1.0


def mk_detection(rng, gh=2, gw=3, boxes=()):
    return DetectionOutput(
        boxes=list(boxes), confidences=[0.9] * len(boxes),
        deep_features=rng.random((gh, gw, 512)).astype(np.float32),
        out_coords=rng.random((gh, gw, 20)).astype(np.float32),
        out_scores=rng.random((gh, gw, 20)).astype(np.float32))


class TestFeatureDistances:
    def test_matches_direct_l1_means(self, rng):
        a, b = mk_detection(rng), mk_detection(rng)
        deep, out = feature_distance_report(a, b)
        want_deep = np.mean(np.abs(a.deep_features.astype(np.float64)
                                   - b.deep_features.astype(np.float64)))
        ca = np.concatenate([a.out_coords, a.out_scores], axis=-1).astype(np.float64)
        cb = np.concatenate([b.out_coords, b.out_scores], axis=-1).astype(np.float64)
        assert deep == pytest.approx(100.0 * want_deep, rel=1e-12)
        assert out == pytest.approx(100.0 * np.mean(np.abs(ca - cb)), rel=1e-12)

    def test_zero_for_identical(self, rng):
        a = mk_detection(rng)
        assert feature_distance_report(a, a) == (0.0, 0.0)


class TestPerceptual:
    def test_identity_plugin_is_mse(self, rng):
        a, b = random_image(rng, 12, 12), random_image(rng, 12, 12)
        d = perceptual_distance(a, b, IdentityPerceptual())
        mse = float(np.mean((a.astype(np.float64) - b.astype(np.float64)) ** 2))
        assert d == pytest.approx(mse, abs=1e-12)

    def test_weighted_multi_layer(self, rng):
        class TwoLayer:
            name = "two"
            weights = (0.5, 2.0)

            def layers(self, img):
                img = np.asarray(img, dtype=np.float64)
                return [img, 2.0 * img]

        a, b = random_image(rng, 8, 8), random_image(rng, 8, 8)
        mse = float(np.mean((a.astype(np.float64) - b.astype(np.float64)) ** 2))
        assert perceptual_distance(a, b, TwoLayer()) == \
               pytest.approx(0.5 * mse + 2.0 * 4.0 * mse, rel=1e-12)

    def test_no_plugin_is_loud(self, rng):
        a = random_image(rng, 8, 8)
        with pytest.raises(ValueError, match="unavailable"):
            perceptual_distance(a, a, None)

    def test_registry(self):
        assert get_perceptual_plugin(None) is None
        assert get_perceptual_plugin("vgg16") is None
        assert isinstance(get_perceptual_plugin("identity"), IdentityPerceptual)

    def test_inconsistent_plugin_rejected(self, rng):
        class Broken:
            name = "broken"
            weights = (1.0, 1.0)

            def layers(self, img):
                return [np.asarray(img)]

        a = random_image(rng, 8, 8)
        with pytest.raises(ValueError, match="inconsistent layer counts"):
            perceptual_distance(a, a, Broken())


ROWS = [
    ReportRow("srcnn", "l2_hr", 20.0, 0.5, None, 0.75, 5.0, 6.0),
    ReportRow("srcnn", "all", 21.0, 0.5, 0.125, 0.8, 4.0, 6.5),
]


class TestReport:
    def test_best_flags_ties_and_none(self):
        flags = best_flags(ROWS)
        assert flags[0] == "ssim+ctpn_out_x100"
        assert flags[1] == "psnr_db+ssim+lpips+iou+ctpn_deep_x100"

    def test_lpips_all_absent_flags_nobody(self):
        rows = [ReportRow("a", "x", 1.0, 0.1, None, 0.1, 1.0, 1.0),
                ReportRow("b", "y", 2.0, 0.2, None, 0.2, 2.0, 2.0)]
        for f in best_flags(rows):
            assert "lpips" not in f

    def test_golden_csv(self, tmp_path):
        csv_path, txt_path = render_report(ROWS, "bench", tmp_path)
        lines = csv_path.read_text().splitlines()
        assert lines == [
            "model,losses,psnr_db,ssim,lpips,iou,ctpn_deep_x100,ctpn_out_x100,best_flags",
            "srcnn,l2_hr,20.000000,0.500000,—,0.750000,5.000000,6.000000,"
            "ssim+ctpn_out_x100",
            "srcnn,all,21.000000,0.500000,0.125000,0.800000,4.000000,6.500000,"
            "psnr_db+ssim+lpips+iou+ctpn_deep_x100",
        ]
        text = txt_path.read_text()
        assert "dataset: bench" in text
        assert "21.000000*" in text  # best marker lands on the winner
        assert METRIC_UNAVAILABLE in text

    def test_csv_flags_match_brute_force_scan(self, tmp_path, rng):
        rows = []
        for i in range(6):
            rows.append(ReportRow(
                f"m{i}", "all", float(rng.integers(10, 40)),
                float(rng.random()), None if i % 2 else float(rng.random()),
                float(rng.random()), float(rng.random() * 10),
                float(rng.random() * 10)))
        csv_path, _ = render_report(rows, "rand", tmp_path)
        with open(csv_path, newline="") as fh:
            parsed = list(csv.DictReader(fh))
        assert len(parsed) == len(rows)
        for attr, better in (("psnr_db", max), ("ssim", max), ("lpips", min),
                             ("iou", max), ("ctpn_deep_x100", min),
                             ("ctpn_out_x100", min)):
            vals = [float(p[attr]) for p in parsed if p[attr] != METRIC_UNAVAILABLE]
            if not vals:
                continue
            target = better(vals)
            for p in parsed:
                flagged = attr in p["best_flags"].split("+")
                is_best = p[attr] != METRIC_UNAVAILABLE and float(p[attr]) == target
                assert flagged == is_best, (attr, p)

    def test_empty_rows_header_only(self, tmp_path):
        csv_path, txt_path = render_report([], "void", tmp_path)
        assert csv_path.read_text().splitlines() == [",".join(REPORT_COLUMNS)]
        assert "dataset: void" in txt_path.read_text()


@pytest.fixture(scope="module")
def backend():
    return build_detector("toy", seed=3)


@pytest.fixture(scope="module")
def pairs():
    out = []
    for i in range(3):
        page, _ = generate_synthetic_document(400 + i, size=(64, 64))
        pair = make_pair(page[:16, :16], f"e{i}", 2)
        out.append(pair)
    return out


class TestEvaluateModel:
    def test_identity_bypass_hits_perfect_scores(self, backend, pairs):
        row = evaluate_model(None, pairs, backend, label="oracle",
                             losses_desc="none", identity_bypass=True,
                             plugin=IdentityPerceptual())
        assert row.psnr_db == 100.0
        assert row.ssim == pytest.approx(1.0, abs=1e-9)
        assert row.lpips == pytest.approx(0.0, abs=1e-12)
        assert row.iou == 1.0
        assert row.ctpn_deep_x100 == 0.0
        assert row.ctpn_out_x100 == 0.0

    def test_panels_written(self, backend, pairs, tmp_path):
        evaluate_model(None, pairs, backend, label="o", losses_desc="n",
                       identity_bypass=True, panels_dir=tmp_path)
        from docsr.core import load_png
        for p in pairs:
            panel = load_png(tmp_path / f"{p.id}.png")
            assert panel.shape == (16, 16 * 3 + 4, 3)

    def test_cache_root_gives_same_row(self, backend, pairs, tmp_path):
        a = evaluate_model(None, pairs, backend, label="o", losses_desc="n",
                           identity_bypass=True)
        b = evaluate_model(None, pairs, backend, label="o", losses_desc="n",
                           identity_bypass=True, cache_root=tmp_path)
        c = evaluate_model(None, pairs, backend, label="o", losses_desc="n",
                           identity_bypass=True, cache_root=tmp_path)
        for attr in ("psnr_db", "ssim", "iou"):
            assert getattr(a, attr) == getattr(b, attr) == getattr(c, attr)
        # distances recomputed from float32 cache differ only at that level
        assert b.ctpn_deep_x100 == pytest.approx(c.ctpn_deep_x100, abs=1e-6)

    def test_empty_pairs_rejected(self, backend):
        with pytest.raises(ValueError, match="no evaluation pairs"):
            evaluate_model(None, [], backend, label="x", losses_desc="y")

    def test_real_model_path(self, backend, pairs):
        from docsr.models import SrModelConfig, build_model
        model = build_model(SrModelConfig(arch="srcnn", scale=2,
                                          width_multiplier=0.125), seed=0)
        row = evaluate_model(model, pairs, backend, label="m", losses_desc="l")
        assert 0 < row.psnr_db < 100
        assert row.lpips is None
        assert np.isfinite(row.ctpn_deep_x100)


class TestPanels:
    def test_draw_boxes_outline_only(self, rng):
        img = np.zeros((10, 10, 3), dtype=np.float32)
        out = draw_boxes(img, [BBox(2, 2, 7, 7)], (1.0, 0.0, 0.0))
        assert out[2, 2, 0] == 1.0 and out[6, 6, 0] == 1.0
        assert out[4, 4, 0] == 0.0  # interior untouched
        assert img.max() == 0.0  # original not mutated

    def test_draw_boxes_clips(self, rng):
        img = np.zeros((10, 10, 3), dtype=np.float32)
        out = draw_boxes(img, [BBox(-5, -5, 20, 20)], (1.0, 1.0, 1.0))
        assert out.shape == img.shape
        assert out[0, 0, 0] == 1.0

    def test_render_panel_geometry(self, rng, tmp_path):
        from docsr.core import load_png
        hr = random_image(rng, 16, 16)
        lr = random_image(rng, 8, 8)
        render_panel(lr, hr, hr, [], [BBox(1, 1, 5, 5)], tmp_path / "p.png")
        panel = load_png(tmp_path / "p.png")
        assert panel.shape == (16, 52, 3)
        # gutters sit between the panes at mid gray
        assert panel[:, 16:18].max() == panel[:, 16:18].min()
