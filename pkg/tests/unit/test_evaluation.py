"""
Unit Tests for Detection Evaluation

Tests for greedy matching, precision/recall curves and COCO-style AP,
including a brute-force cross-check with exact rational arithmetic.
"""

from fractions import Fraction

import numpy as np
import pytest

from src.core.dataset import CocoAnnotation, CocoDataset, CocoImage
from src.core.errors import MalformedDocument, UndefinedAp, UnknownImageId, ValidationError
from src.core.evaluation import (
    ALL_THRESHOLDS,
    COCO_THRESHOLDS,
    LOOSE_THRESHOLD,
    Detection,
    MatchRecord,
    average_precision,
    box_iou_matrix,
    detections_from_dicts,
    evaluate,
    match_detections,
    pr_curve,
    read_detections,
    write_detections,
    write_report_csv,
    write_report_json,
)
from src.core.geo import GeoPoint, PixelBox, iou
from src.core.simkit import NoiseModel, mock_detect
from tests.conftest import GRID_BOXES, make_dataset


def dataset_with(gts_per_image):
    images = [CocoImage(i, f"img{i}.jpg", 64, 64, GeoPoint(35.0, 0.0)) for i in range(1, len(gts_per_image) + 1)]
    annotations = []
    for image_id, gts in enumerate(gts_per_image, start=1):
        for box in gts:
            annotations.append(
                CocoAnnotation(len(annotations) + 1, image_id, box.as_xywh(), box.area)
            )
    return CocoDataset(images=images, annotations=annotations)


def perfect_detections(ds, score=0.9):
    return [Detection(a.image_id, PixelBox(*a.bbox), score) for a in ds.annotations]


def oracle_ap(gts_per_image, dets, thr):
    """Independent greedy matching and 101-point AP with exact fractions."""
    n_gt = sum(len(g) for g in gts_per_image)
    records = []
    for image_id, gts in enumerate(gts_per_image, start=1):
        indexed = [(order, d) for order, d in enumerate(dets) if d.image_id == image_id]
        indexed.sort(key=lambda od: (-od[1].score, od[0]))
        taken = set()
        for order, det in indexed:
            best, best_iou = None, -1.0
            for g, gt in enumerate(gts):
                if g in taken:
                    continue
                value = iou(det.bbox, gt)
                if value > best_iou:
                    best, best_iou = g, value
            tp = best is not None and best_iou >= thr
            if tp:
                taken.add(best)
            records.append((det.score, order, tp))
    records.sort(key=lambda r: (-r[0], r[1]))

    tp_count = 0
    points = []
    for k, (_, _, tp) in enumerate(records, start=1):
        tp_count += tp
        points.append((Fraction(tp_count, n_gt), Fraction(tp_count, k)))

    total = Fraction(0)
    for r in range(101):
        level = Fraction(r, 100)
        candidates = [p for rec, p in points if rec >= level]
        total += max(candidates) if candidates else 0
    return float(total / 101)


def random_instance(rng):
    n_images = int(rng.integers(1, 5))
    gts_per_image = []
    for _ in range(n_images):
        boxes = []
        for _ in range(int(rng.integers(0, 6))):
            x, y = (int(v) for v in rng.integers(0, 40, 2))
            w, h = (int(v) for v in rng.integers(4, 20, 2))
            boxes.append(PixelBox(x, y, w, h))
        gts_per_image.append(boxes)
    if sum(len(g) for g in gts_per_image) == 0:
        gts_per_image[0].append(PixelBox(10, 10, 10, 10))

    dets = []
    for _ in range(int(rng.integers(0, 9))):
        image_id = int(rng.integers(1, n_images + 1))
        gts = gts_per_image[image_id - 1]
        if gts and rng.random() < 0.6:
            base = gts[int(rng.integers(len(gts)))]
            dx, dy = (int(v) for v in rng.integers(-4, 5, 2))
            box = PixelBox(base.x + dx, base.y + dy, base.w, base.h)
        else:
            x, y = (int(v) for v in rng.integers(0, 40, 2))
            box = PixelBox(x, y, int(rng.integers(4, 20)), int(rng.integers(4, 20)))
        dets.append(Detection(image_id, box, float(rng.choice([0.1, 0.5, 0.9]))))
    return gts_per_image, dets


@pytest.mark.unit
class TestBoxIouMatrix:
    """Test box_iou_matrix."""

    def test_matches_scalar_iou(self):
        """Vectorized IoU agrees with the scalar version."""
        a = [PixelBox(0, 0, 10, 10), PixelBox(5, 5, 10, 10)]
        b = [PixelBox(5, 0, 10, 10), PixelBox(50, 50, 2, 2), PixelBox(0, 0, 10, 10)]
        matrix = box_iou_matrix(a, b)

        assert matrix.shape == (2, 3)
        for i, box_a in enumerate(a):
            for j, box_b in enumerate(b):
                assert matrix[i, j] == pytest.approx(iou(box_a, box_b))

    def test_empty(self):
        """Empty inputs give empty matrices of the right shape."""
        assert box_iou_matrix([], [PixelBox(0, 0, 1, 1)]).shape == (0, 1)


@pytest.mark.unit
class TestMatchDetections:
    """Test match_detections."""

    def test_higher_score_wins(self):
        """Two detections on one ground truth: only the higher score matches."""
        gt = [PixelBox(0, 0, 10, 10)]
        dets = [Detection(1, PixelBox(0, 0, 10, 10), 0.4), Detection(1, PixelBox(1, 0, 10, 10), 0.8)]

        assert match_detections(gt, dets, 0.5) == [(0, None), (1, 0)]

    def test_score_tie_uses_input_order(self):
        """Equal scores resolve by input order."""
        gt = [PixelBox(0, 0, 10, 10)]
        dets = [Detection(1, PixelBox(1, 0, 10, 10), 0.5), Detection(1, PixelBox(0, 0, 10, 10), 0.5)]

        assert match_detections(gt, dets, 0.5) == [(0, 0), (1, None)]

    def test_best_unmatched_iou(self):
        """A detection takes the best remaining ground truth."""
        gts = [PixelBox(0, 0, 10, 10), PixelBox(2, 0, 10, 10)]
        dets = [Detection(1, PixelBox(2, 0, 10, 10), 0.9), Detection(1, PixelBox(1, 0, 10, 10), 0.8)]

        assert match_detections(gts, dets, 0.5) == [(0, 1), (1, 0)]

    def test_below_threshold(self):
        """IoU below the threshold is a false positive."""
        gt = [PixelBox(0, 0, 10, 10)]
        det = [Detection(1, PixelBox(5, 0, 10, 10), 0.9)]

        assert match_detections(gt, det, 0.5) == [(0, None)]
        assert match_detections(gt, det, 0.15) == [(0, 0)]

    def test_threshold_range(self):
        """Thresholds outside (0, 1] are rejected."""
        with pytest.raises(ValidationError):
            match_detections([], [], 0.0)


@pytest.mark.unit
class TestAveragePrecision:
    """Test pr_curve and average_precision."""

    def test_tp_fp_tp(self):
        """TP, FP, TP on two ground truths."""
        curve = pr_curve(
            [MatchRecord(0.9, 0, True), MatchRecord(0.8, 1, False), MatchRecord(0.7, 2, True)],
            n_gt=2,
        )

        assert curve.points == [(0.5, 1.0), (0.5, 0.5), (1.0, pytest.approx(2 / 3))]
        assert average_precision(curve) == pytest.approx((51 + 50 * 2 / 3) / 101)

    def test_no_detections(self):
        """No detections means AP 0."""
        assert average_precision(pr_curve([], n_gt=3)) == 0.0

    def test_no_ground_truth(self):
        """Without ground truth AP is undefined."""
        with pytest.raises(UndefinedAp):
            average_precision(pr_curve([MatchRecord(0.5, 0, False)], n_gt=0))

    def test_ranking_by_score_then_order(self):
        """Records are ranked by score, ties by input order."""
        curve = pr_curve([MatchRecord(0.5, 1, False), MatchRecord(0.5, 0, True)], n_gt=1)

        assert curve.precisions.tolist() == [1.0, 0.5]


@pytest.mark.unit
class TestEvaluate:
    """Test evaluate."""

    def test_perfect_detections(self, banded_dataset):
        """Detections identical to the ground truth score 100 everywhere."""
        report = evaluate(banded_dataset, perfect_detections(banded_dataset))

        assert report.ap == report.ap50 == report.ap15 == 100.0
        assert all(v == 100.0 for v in report.per_threshold.values())
        assert report.n_gt == 60

    def test_no_detections(self, banded_dataset):
        """An empty detection list scores 0."""
        report = evaluate(banded_dataset, [])

        assert (report.ap, report.ap50, report.ap15) == (0.0, 0.0, 0.0)

    def test_iou_between_thresholds(self):
        """IoU 1/3 counts at 0.15 but not at 0.50 or above."""
        ds = dataset_with([[PixelBox(0, 0, 10, 10)]])
        report = evaluate(ds, [Detection(1, PixelBox(5, 0, 10, 10), 0.9)])

        assert report.ap15 == 100.0
        assert report.ap50 == 0.0
        assert report.ap == 0.0

    def test_ap15_at_least_ap50_at_least_ap(self, banded_dataset):
        """Looser thresholds never score lower."""
        rng = np.random.default_rng(8)
        dets = [
            Detection(a.image_id, PixelBox(a.bbox[0] + rng.uniform(-30, 30), a.bbox[1] + rng.uniform(-30, 30), 100, 100), float(rng.uniform()))
            for a in banded_dataset.annotations
        ]
        report = evaluate(banded_dataset, dets)
        values = [report.raw[t] for t in ALL_THRESHOLDS]

        assert values == sorted(values, reverse=True)
        assert report.ap15 >= report.ap50 >= report.ap

    @pytest.mark.parametrize("seed", range(100))
    def test_threshold_order_under_random_noise(self, banded_dataset, seed):
        """AP@15 >= AP@50 >= AP@95 for mock detections under random noise."""
        rng = np.random.default_rng(seed)
        noise = NoiseModel(
            loc_sigma_px=float(rng.uniform(0.0, 10.0)),
            size_jitter=float(rng.uniform(0.0, 0.3)),
            miss_rate=float(rng.uniform(0.0, 0.5)),
            fp_per_image=float(rng.uniform(0.0, 2.0)),
            seed=seed,
        )
        report = evaluate(banded_dataset, mock_detect(banded_dataset, noise))

        assert report.ap15 >= report.ap50 >= report.per_threshold[COCO_THRESHOLDS[-1]]
        assert report.raw[LOOSE_THRESHOLD] >= report.raw[0.5] >= report.raw[0.95]

    def test_ap_is_mean_over_coco_thresholds(self, banded_dataset):
        """The headline AP averages the ten 0.50:0.95 thresholds."""
        rng = np.random.default_rng(4)
        dets = [
            Detection(a.image_id, PixelBox(a.bbox[0] + rng.uniform(-10, 10), a.bbox[1], 100, 100), 0.5)
            for a in banded_dataset.annotations
        ]
        report = evaluate(banded_dataset, dets)

        assert report.ap == round(100 * float(np.mean([report.raw[t] for t in COCO_THRESHOLDS])), 1)

    def test_unknown_image(self, banded_dataset):
        """Detections on unknown images are refused."""
        with pytest.raises(UnknownImageId):
            evaluate(banded_dataset, [Detection(999, PixelBox(0, 0, 5, 5), 0.5)])

    def test_no_annotations(self):
        """Datasets without annotations cannot be evaluated."""
        ds = make_dataset([GeoPoint(35.0, 0.0)], boxes_per_image=())

        with pytest.raises(UndefinedAp):
            evaluate(ds, [])

    def test_other_categories_ignored(self, banded_dataset):
        """Detections of other categories do not count."""
        dets = perfect_detections(banded_dataset) + [
            Detection(1, PixelBox(400, 400, 50, 50), 1.0, category_id=2)
        ]
        report = evaluate(banded_dataset, dets)

        assert report.ap == 100.0
        assert report.n_det == 60

    def test_matches_exact_oracle(self):
        """500 random small instances agree with an exact-fraction reference."""
        rng = np.random.default_rng(123)
        for _ in range(500):
            gts_per_image, dets = random_instance(rng)
            report = evaluate(dataset_with(gts_per_image), dets)
            for thr in (0.15, 0.5, 0.75):
                assert report.raw[thr] == pytest.approx(oracle_ap(gts_per_image, dets, thr), abs=1e-9)

    def test_single_box_single_image(self):
        """Smallest possible perfect case."""
        ds = make_dataset([GeoPoint(35.0, 0.0)], boxes_per_image=GRID_BOXES[:1])

        assert evaluate(ds, perfect_detections(ds)).ap == 100.0


@pytest.mark.unit
class TestDetectionIo:
    """Test detection and report files."""

    def test_detections_file(self, temp_dir):
        """Detections survive a write/read cycle."""
        dets = [Detection(1, PixelBox(1.5, 2.0, 10.0, 12.0), 0.25), Detection(2, PixelBox(0, 0, 3, 4), 1.0)]
        path = write_detections(temp_dir / "dets.json", dets)

        assert read_detections(path) == dets

    def test_malformed_detections(self):
        """Non-arrays and entries without required keys are malformed."""
        with pytest.raises(MalformedDocument):
            detections_from_dicts({"image_id": 1})
        with pytest.raises(MalformedDocument):
            detections_from_dicts([{"image_id": 1, "bbox": [0, 0, 1, 1]}])

    def test_score_range(self):
        """Scores outside [0, 1] are invalid."""
        with pytest.raises(ValidationError):
            detections_from_dicts([{"image_id": 1, "bbox": [0, 0, 1, 1], "score": 1.5}])

    def test_report_files(self, banded_dataset, temp_dir):
        """Reports are written as JSON and CSV."""
        report = evaluate(banded_dataset, perfect_detections(banded_dataset))
        json_text = write_report_json(temp_dir / "report.json", report).read_text(encoding="utf-8")
        csv_text = write_report_csv(temp_dir / "report.csv", report).read_text(encoding="utf-8")

        assert '"ap": 100.0' in json_text
        assert '"0.15": 100.0' in json_text
        assert csv_text.splitlines()[0] == "metric,value"
        assert "ap15,100.0" in csv_text
