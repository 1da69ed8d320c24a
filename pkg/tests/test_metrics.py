"""Matching, average precision, attack success rates, and the report suite.

The AP tests compare the production implementation against a brute-force
enumeration of the ranked precision-recall sweep, written as a separate code
path on purpose.
"""

from __future__ import annotations

import numpy as np
import pytest

from detpoison.attacks import (
    ImagePoisonRecord,
    PoisonRecords,
    TriggerPlacement,
    oga_target_box,
)
from detpoison.dataset import AnnotatedImage, DatasetManifest, ObjectAnnotation
from detpoison.errors import MetricsError
from detpoison.geometry import BBox, iou
from detpoison.metrics import (
    REPORT_ROWS,
    ClassMatches,
    Detection,
    DetectionSet,
    EvalThresholds,
    asr_misclassification,
    asr_object_disappearance,
    asr_object_generation,
    attack_report,
    average_precision,
    match_detections,
    mean_ap,
    per_class_ap,
)


def _probs(k: int, hot: int, p: float = 0.9) -> tuple[float, ...]:
    if k == 1:
        return (1.0,)
    rest = (1.0 - p) / (k - 1)
    return tuple(p if i == hot else rest for i in range(k))


def _det(box: list[float], k: int, hot: int, conf: float = -1.0, p: float = 0.9) -> Detection:
    return Detection(BBox.from_list(box), _probs(k, hot, p), conf)


def _manifest(classes, images, role="test_benign") -> DatasetManifest:
    entries = [
        AnnotatedImage(ref, w, h, [ObjectAnnotation(c, BBox.from_list(b)) for c, b in objs])
        for ref, (w, h, objs) in images.items()
    ]
    return DatasetManifest(tuple(classes), entries, role)


def _detset(classes, by_image) -> DetectionSet:
    ds = DetectionSet(tuple(classes))
    for ref, dets in by_image.items():
        ds.add(ref, dets)
    return ds


# --- average precision vs enumeration oracle -------------------------------

def _ap_by_enumeration(matches: ClassMatches) -> float | None:
    """All-point interpolated AP evaluated directly on the ranked sweep.

    For every rank at which recall increases, add (recall step) times the
    maximum precision at that rank or later.  No envelope arrays; the maxima
    are recomputed per step.
    """
    if matches.n_gt == 0:
        return None
    rows = sorted(matches.rows, key=lambda r: (-r[0], r[1], r[2]))
    points = []
    tp = fp = 0
    for _, _, _, is_tp in rows:
        tp += 1 if is_tp else 0
        fp += 0 if is_tp else 1
        points.append((tp / matches.n_gt, tp / (tp + fp)))
    total = 0.0
    prev_recall = 0.0
    for k, (recall, _) in enumerate(points):
        if recall > prev_recall:
            total += (recall - prev_recall) * max(p for _, p in points[k:])
            prev_recall = recall
    return total


def _random_matches(rng: np.random.Generator) -> ClassMatches:
    n_gt = int(rng.integers(1, 21))
    n_rows = int(rng.integers(0, 26))
    n_tp = int(rng.integers(0, min(n_rows, n_gt) + 1))
    flags = [True] * n_tp + [False] * (n_rows - n_tp)
    rng.shuffle(flags)
    rows = [
        # One-decimal confidences force heavy ties across images.
        (round(float(rng.uniform(0.05, 1.0)), 1), f"img{int(rng.integers(0, 4))}", i, bool(flag))
        for i, flag in enumerate(flags)
    ]
    return ClassMatches(n_gt=n_gt, rows=rows)


def test_ap_matches_enumeration_oracle():
    rng = np.random.default_rng(20240817)
    for _ in range(300):
        m = _random_matches(rng)
        got = average_precision(m)
        want = _ap_by_enumeration(m)
        assert got == pytest.approx(want, abs=1e-9)


def test_ap_hand_computed_case():
    # TP .9, FP .8, TP .7, FP .6, TP .5 with three GT boxes:
    # 1/3 * 1 + 1/3 * 2/3 + 1/3 * 3/5 = 34/45.
    rows = [
        (0.9, "a", 0, True),
        (0.8, "a", 1, False),
        (0.7, "a", 2, True),
        (0.6, "b", 0, False),
        (0.5, "b", 1, True),
    ]
    ap = average_precision(ClassMatches(n_gt=3, rows=rows))
    assert ap == pytest.approx(34.0 / 45.0, abs=1e-12)


def test_ap_perfect_ranking_is_one():
    rows = [(0.9 - 0.1 * i, "a", i, True) for i in range(4)]
    assert average_precision(ClassMatches(n_gt=4, rows=rows)) == pytest.approx(1.0)


def test_ap_without_detections_is_zero():
    assert average_precision(ClassMatches(n_gt=5, rows=[])) == 0.0


def test_ap_without_ground_truth_is_none():
    assert average_precision(ClassMatches(n_gt=0, rows=[(0.9, "a", 0, False)])) is None


def test_ap_is_invariant_to_row_order():
    rng = np.random.default_rng(7)
    m = _random_matches(rng)
    while not m.rows:
        m = _random_matches(rng)
    baseline = average_precision(m)
    for _ in range(5):
        shuffled = list(m.rows)
        rng.shuffle(shuffled)
        assert average_precision(ClassMatches(m.n_gt, shuffled)) == baseline


def test_ap_is_invariant_under_monotone_confidence_rescaling():
    rng = np.random.default_rng(11)
    for _ in range(50):
        m = _random_matches(rng)
        rescaled = ClassMatches(
            m.n_gt, [(0.2 + c / 2.0, k, i, tp) for c, k, i, tp in m.rows]
        )
        assert average_precision(rescaled) == pytest.approx(
            average_precision(m), abs=1e-9
        )


def test_ap_ties_rank_by_image_key_then_index():
    # All rows share one confidence; ranking must fall back to (key, index),
    # putting the TP on ("a", 0) first.
    rows = [(0.8, "b", 0, False), (0.8, "a", 1, False), (0.8, "a", 0, True)]
    ap = average_precision(ClassMatches(n_gt=1, rows=rows))
    assert ap == pytest.approx(1.0)


# --- greedy matching -------------------------------------------------------

def test_match_prefers_highest_iou_gt():
    det = _det([0, 0, 10, 10], 2, 0, 0.9)
    worse = BBox(0, 0, 10, 16)   # IoU 10/16
    better = BBox(0, 0, 10, 12)  # IoU 10/12
    matched = match_detections([det], [worse, better], 0.5)
    assert matched == [(det, better)]


def test_match_consumes_gt_in_confidence_order():
    gt = BBox(0, 0, 10, 10)
    strong = _det([0, 0, 10, 12], 2, 0, 0.9)  # IoU 10/12
    weak = _det([0, 0, 10, 10], 2, 0, 0.8)    # IoU 1 but matched second
    matched = dict(match_detections([weak, strong], [gt], 0.5))
    assert matched[strong] == gt
    assert matched[weak] is None


def test_match_breaks_confidence_ties_by_input_order():
    gt = BBox(0, 0, 10, 10)
    first = _det([0, 0, 10, 11], 2, 0, 0.7)
    second = _det([0, 0, 10, 10], 2, 0, 0.7)
    matched = dict(match_detections([first, second], [gt], 0.5))
    assert matched[first] == gt
    assert matched[second] is None


def test_match_accepts_iou_exactly_at_threshold():
    gt = BBox(0, 0, 10, 10)
    det = _det([0, 0, 10, 5], 2, 0, 0.9)  # IoU exactly 0.5
    assert iou(det.bbox, gt) == pytest.approx(0.5)
    assert match_detections([det], [gt], 0.5) == [(det, gt)]
    assert match_detections([det], [gt], 0.500001) == [(det, None)]


def _match_by_double_loop(dets, gts, threshold):
    """Independent matcher: explicit remaining-GT dict instead of flags."""
    remaining = dict(enumerate(gts))
    assigned = {}
    for i in sorted(range(len(dets)), key=lambda i: (-dets[i].confidence, i)):
        choice, best = None, 0.0
        for j, g in remaining.items():
            v = iou(dets[i].bbox, g)
            if v >= threshold and v > best:
                choice, best = j, v
        if choice is not None:
            remaining.pop(choice)
        assigned[i] = choice
    return assigned


def test_match_agrees_with_double_loop_oracle():
    rng = np.random.default_rng(20240818)
    for _ in range(100):
        dets = []
        for i in range(int(rng.integers(0, 8))):
            x, y = rng.integers(0, 40, size=2)
            w, h = rng.integers(4, 30, size=2)
            conf = round(float(rng.uniform(0.1, 1.0)), 1)
            dets.append(_det([x, y, x + w, y + h], 2, 0, conf))
        gts = []
        for _ in range(int(rng.integers(0, 6))):
            x, y = rng.integers(0, 40, size=2)
            w, h = rng.integers(4, 30, size=2)
            gts.append(BBox(float(x), float(y), float(x + w), float(y + h)))
        want = _match_by_double_loop(dets, gts, 0.5)
        got = {
            dets.index(d): (gts.index(g) if g is not None else None)
            for d, g in match_detections(dets, gts, 0.5)
        }
        # Duplicate boxes would break index lookups; regenerate instead.
        if len(set(map(id, dets))) != len(dets):
            continue
        assert got == want


# --- detections and thresholds ---------------------------------------------

def test_detection_defaults_confidence_to_max_prob():
    det = Detection(BBox(0, 0, 5, 5), (0.2, 0.7, 0.1))
    assert det.confidence == pytest.approx(0.7)
    assert det.class_id == 1


def test_detection_keeps_explicit_confidence():
    det = Detection(BBox(0, 0, 5, 5), (0.2, 0.7, 0.1), confidence=0.3)
    assert det.confidence == 0.3


@pytest.mark.parametrize(
    "probs",
    [(), (0.5, 0.4), (0.7, 0.4), (-0.1, 1.1), (float("nan"), 1.0)],
)
def test_detection_rejects_bad_probability_vectors(probs):
    with pytest.raises(MetricsError):
        Detection(BBox(0, 0, 5, 5), probs)


def test_detection_rejects_confidence_above_one():
    with pytest.raises(MetricsError, match="confidence"):
        Detection(BBox(0, 0, 5, 5), (1.0, 0.0), confidence=1.5)


def test_detection_set_checks_prob_arity():
    ds = DetectionSet(("a", "b", "c"))
    with pytest.raises(MetricsError, match="class probs"):
        ds.add("img", [Detection(BBox(0, 0, 5, 5), (0.5, 0.5))])


def test_detection_set_class_index_unknown_name():
    with pytest.raises(MetricsError, match="class table"):
        DetectionSet(("a", "b")).class_index("zebra")


@pytest.mark.parametrize("value", [0.0, 1.0, -0.2, 1.5])
def test_thresholds_must_lie_strictly_inside_unit_interval(value):
    with pytest.raises(MetricsError):
        EvalThresholds(iou_threshold=value)


# --- per-class AP and mAP --------------------------------------------------

def test_per_class_ap_translates_gt_names_into_detector_table():
    # GT table ("c", "a") with different ids than the detector's ("a","b","c").
    gt = _manifest(
        ("c", "a"),
        {
            "one": (64, 64, [(0, [4, 4, 20, 20]), (1, [30, 30, 50, 50])]),
            "two": (64, 64, [(1, [10, 10, 26, 26])]),
        },
    )
    dets = _detset(
        ("a", "b", "c"),
        {
            "one": [_det([4, 4, 20, 20], 3, 2, 0.9), _det([30, 30, 50, 50], 3, 0, 0.8)],
            "two": [_det([10, 10, 26, 26], 3, 0, 0.9)],
        },
    )
    ap = per_class_ap(dets, gt)
    assert ap["a"] == pytest.approx(1.0)
    assert ap["c"] == pytest.approx(1.0)
    assert ap["b"] is None
    assert mean_ap(ap) == pytest.approx(1.0)


def test_per_class_ap_counts_cross_class_confusion_as_miss():
    gt = _manifest(("a", "b"), {"one": (64, 64, [(0, [4, 4, 20, 20])])})
    # Right box, wrong class: "a" has GT but no rows; "b" has a row but no GT.
    dets = _detset(("a", "b"), {"one": [_det([4, 4, 20, 20], 2, 1, 0.9)]})
    ap = per_class_ap(dets, gt)
    assert ap["a"] == 0.0
    assert ap["b"] is None


def test_per_class_ap_rejects_gt_class_unknown_to_detector():
    gt = _manifest(("mystery",), {"one": (64, 64, [(0, [4, 4, 20, 20])])})
    dets = _detset(("a", "b"), {"one": []})
    with pytest.raises(MetricsError, match="unknown to the detector"):
        per_class_ap(dets, gt)


def test_per_class_ap_rejects_detections_for_unknown_images():
    gt = _manifest(("a",), {"one": (64, 64, [])})
    dets = _detset(("a",), {"one": [], "phantom": []})
    with pytest.raises(MetricsError, match="not in manifest"):
        per_class_ap(dets, gt)


def test_mean_ap_requires_some_ground_truth():
    with pytest.raises(MetricsError, match="mAP undefined"):
        mean_ap({"a": None, "b": None})
    assert mean_ap({"a": 0.5, "b": None, "c": 1.0}) == pytest.approx(0.75)


def test_per_class_ap_duplicate_boxes_yield_one_tp():
    gt = _manifest(("a",), {"one": (64, 64, [(0, [4, 4, 20, 20])])})
    dets = _detset(
        ("a",),
        {"one": [_det([4, 4, 20, 20], 1, 0, 0.9, p=1.0),
                 _det([4, 4, 20, 20], 1, 0, 0.8, p=1.0)]},
    )
    ap = per_class_ap(dets, gt)
    # Second detection finds the GT box taken: precision stays 1 at recall 1.
    assert ap["a"] == pytest.approx(1.0)


# --- attack success rates --------------------------------------------------

def _onehot_red(box, conf):
    return _det(box, 2, 1, conf, p=1.0)


def test_asr_object_generation_counts_detected_planted_boxes():
    manifest = _manifest(
        ("blue", "red"),
        {"one": (64, 64, []), "two": (64, 64, [])},
        role="test_poisoned",
    )
    records = PoisonRecords(
        "oga",
        [
            ImagePoisonRecord("one", [TriggerPlacement((0, 0), BBox(0, 0, 10, 10)),
                                      TriggerPlacement((30, 30), BBox(30, 30, 40, 40))]),
            ImagePoisonRecord("two", [TriggerPlacement((5, 5), BBox(5, 5, 15, 15))]),
        ],
    )
    dets = _detset(
        ("blue", "red"),
        {
            "one": [_onehot_red([0, 0, 10, 10], 0.9)],
            "two": [_onehot_red([5, 5, 15, 15], 0.9)],
        },
    )
    asr = asr_object_generation(dets, records, manifest, "red")
    assert asr == pytest.approx(2.0 / 3.0)


def test_asr_object_generation_thresholds_are_strict():
    manifest = _manifest(("blue", "red"), {"one": (64, 64, [])}, role="test_poisoned")
    records = PoisonRecords(
        "oga", [ImagePoisonRecord("one", [TriggerPlacement((0, 0), BBox(0, 0, 10, 10))])]
    )
    at_conf = _detset(("blue", "red"), {"one": [_onehot_red([0, 0, 10, 10], 0.5)]})
    assert asr_object_generation(at_conf, records, manifest, "red") == 0.0
    # IoU exactly 0.5 is not a hit either.
    at_iou = _detset(("blue", "red"), {"one": [_onehot_red([0, 0, 10, 5], 0.9)]})
    assert asr_object_generation(at_iou, records, manifest, "red") == 0.0
    above = _detset(("blue", "red"), {"one": [_onehot_red([0, 0, 10, 9], 0.51)]})
    assert asr_object_generation(above, records, manifest, "red") == 1.0


def test_asr_object_generation_clamps_planted_box_to_image():
    manifest = _manifest(("blue", "red"), {"one": (40, 40, [])}, role="test_poisoned")
    records = PoisonRecords(
        "oga", [ImagePoisonRecord("one", [TriggerPlacement((30, 30), BBox(30, 30, 50, 50))])]
    )
    clamped = _detset(("blue", "red"), {"one": [_onehot_red([30, 30, 40, 40], 0.9)]})
    assert asr_object_generation(clamped, records, manifest, "red") == 1.0
    # A detector echoing the unclamped box would only reach IoU 0.25.
    unclamped = _detset(("blue", "red"), {"one": [_onehot_red([30, 30, 50, 50], 0.9)]})
    assert asr_object_generation(unclamped, records, manifest, "red") == 0.0


def test_asr_object_generation_rejects_bad_records():
    manifest = _manifest(("blue", "red"), {"one": (64, 64, [])}, role="test_poisoned")
    dets = _detset(("blue", "red"), {"one": []})
    with pytest.raises(MetricsError, match="no poison records"):
        asr_object_generation(dets, PoisonRecords("oga", []), manifest, "red")
    empty = PoisonRecords("oga", [ImagePoisonRecord("one", [])])
    with pytest.raises(MetricsError, match="no trigger placements"):
        asr_object_generation(dets, empty, manifest, "red")
    stray = PoisonRecords(
        "oga", [ImagePoisonRecord("ghost", [TriggerPlacement((0, 0), BBox(0, 0, 5, 5))])]
    )
    with pytest.raises(MetricsError, match="unknown image"):
        asr_object_generation(dets, stray, manifest, "red")
    boxless = PoisonRecords("rma", [ImagePoisonRecord("one", [TriggerPlacement((0, 0))])])
    with pytest.raises(MetricsError, match="fabricated target box"):
        asr_object_generation(dets, boxless, manifest, "red")


def test_asr_misclassification_counts_non_target_boxes_read_as_target():
    gt = _manifest(
        ("blue", "red"),
        {
            "one": (64, 64, [(0, [4, 4, 20, 20])]),
            "two": (64, 64, [(0, [8, 8, 30, 30]), (1, [40, 40, 60, 60])]),
        },
    )
    dets = _detset(
        ("blue", "red"),
        {
            "one": [_onehot_red([4, 4, 20, 20], 0.9)],
            "two": [_onehot_red([8, 8, 30, 30], 0.9)],
        },
    )
    # The red GT box on "two" is excluded from the denominator.
    assert asr_misclassification(dets, gt, "red") == pytest.approx(1.0)
    half = _detset(
        ("blue", "red"),
        {"one": [_onehot_red([4, 4, 20, 20], 0.9)], "two": []},
    )
    assert asr_misclassification(half, gt, "red") == pytest.approx(0.5)


def test_asr_misclassification_credits_each_detection_once():
    gt = _manifest(
        ("blue", "red"),
        {"one": (64, 64, [(0, [0, 0, 10, 10]), (0, [0, 2, 10, 12])])},
    )
    # One detection overlaps both boxes above the IoU threshold but may only
    # credit one of them.
    dets = _detset(("blue", "red"), {"one": [_onehot_red([0, 1, 10, 11], 0.9)]})
    assert asr_misclassification(dets, gt, "red") == pytest.approx(0.5)


def test_asr_misclassification_thresholds_are_strict():
    gt = _manifest(("blue", "red"), {"one": (64, 64, [(0, [4, 4, 20, 20])])})
    at_conf = _detset(("blue", "red"), {"one": [_onehot_red([4, 4, 20, 20], 0.5)]})
    assert asr_misclassification(at_conf, gt, "red") == 0.0
    at_iou = _detset(("blue", "red"), {"one": [_onehot_red([4, 4, 20, 12], 0.9)]})
    assert iou(BBox(4, 4, 20, 12), BBox(4, 4, 20, 20)) == pytest.approx(0.5)
    assert asr_misclassification(at_iou, gt, "red") == 0.0


def test_asr_misclassification_differential_subtracts_benign_hits():
    gt = _manifest(
        ("blue", "red"),
        {"one": (64, 64, [(0, [0, 0, 10, 10]), (0, [30, 30, 40, 40])])},
    )
    benign = _detset(("blue", "red"), {"one": [_onehot_red([0, 0, 10, 10], 0.9)]})
    poisoned = _detset(
        ("blue", "red"),
        {"one": [_onehot_red([0, 0, 10, 10], 0.9), _onehot_red([30, 30, 40, 40], 0.9)]},
    )
    assert asr_misclassification(poisoned, gt, "red") == pytest.approx(1.0)
    diff = asr_misclassification(
        poisoned, gt, "red", differential=True, benign_dets=benign
    )
    assert diff == pytest.approx(0.5)
    with pytest.raises(MetricsError, match="differential"):
        asr_misclassification(poisoned, gt, "red", differential=True)


def test_asr_misclassification_empty_denominator_is_zero():
    gt = _manifest(("blue", "red"), {"one": (64, 64, [(1, [4, 4, 20, 20])])})
    dets = _detset(("blue", "red"), {"one": []})
    assert asr_misclassification(dets, gt, "red") == 0.0


def test_asr_object_disappearance_counts_vanished_targets():
    gt = _manifest(
        ("blue", "red"),
        {
            "one": (64, 64, [(1, [10, 10, 30, 30]), (0, [35, 35, 55, 55])]),
            "two": (64, 64, [(1, [5, 5, 25, 25])]),
        },
    )
    benign = _detset(
        ("blue", "red"),
        {
            "one": [_onehot_red([10, 10, 30, 30], 0.9), _det([35, 35, 55, 55], 2, 0, 0.9)],
            "two": [_onehot_red([5, 5, 25, 25], 0.9)],
        },
    )
    vanished = _detset(
        ("blue", "red"),
        {"one": [_det([35, 35, 55, 55], 2, 0, 0.9)], "two": [_onehot_red([5, 5, 25, 25], 0.9)]},
    )
    assert asr_object_disappearance(benign, vanished, gt, "red") == pytest.approx(0.5)
    # Dropping the confidence below the threshold counts as vanished too.
    faded = _detset(
        ("blue", "red"),
        {"one": [_onehot_red([10, 10, 30, 30], 0.4)], "two": [_onehot_red([5, 5, 25, 25], 0.9)]},
    )
    assert asr_object_disappearance(benign, faded, gt, "red") == pytest.approx(0.5)


def test_asr_object_disappearance_denominator_needs_benign_hit():
    gt = _manifest(("blue", "red"), {"one": (64, 64, [(1, [10, 10, 30, 30])])})
    blind = _detset(("blue", "red"), {"one": []})
    # Never detected on the benign image: not in the denominator at all.
    assert asr_object_disappearance(blind, blind, gt, "red") == 0.0


def test_asr_object_disappearance_requires_matching_coverage():
    gt = _manifest(("blue", "red"), {"one": (64, 64, [])})
    a = _detset(("blue", "red"), {"one": []})
    b = _detset(("blue", "red"), {"one": [], "two": []})
    with pytest.raises(MetricsError, match="different images"):
        asr_object_disappearance(a, b, gt, "red")


def test_asr_object_disappearance_without_target_class_in_gt():
    gt = _manifest(("blue",), {"one": (64, 64, [(0, [4, 4, 20, 20])])})
    dets = _detset(("blue", "red"), {"one": []})
    assert asr_object_disappearance(dets, dets, gt, "red") == 0.0


# --- the report suite ------------------------------------------------------

def _rma_scenario():
    benign_gt = _manifest(
        ("blue", "red"),
        {
            "a": (64, 64, [(0, [4, 4, 20, 20])]),
            "b": (64, 64, [(0, [8, 8, 30, 30]), (1, [40, 40, 60, 60])]),
        },
    )
    attacked_gt = _manifest(
        ("blue", "red"),
        {
            "a": (64, 64, [(1, [4, 4, 20, 20])]),
            "b": (64, 64, [(1, [8, 8, 30, 30]), (1, [40, 40, 60, 60])]),
        },
        role="test_poisoned",
    )
    benign_dets = _detset(
        ("blue", "red"),
        {
            "a": [_det([4, 4, 20, 20], 2, 0, 0.9)],
            "b": [_det([8, 8, 30, 30], 2, 0, 0.9), _onehot_red([40, 40, 60, 60], 0.9)],
        },
    )
    poisoned_dets = _detset(
        ("blue", "red"),
        {
            "a": [_onehot_red([4, 4, 20, 20], 0.9)],
            "b": [_onehot_red([8, 8, 30, 30], 0.9), _onehot_red([40, 40, 60, 60], 0.9)],
        },
    )
    return benign_gt, attacked_gt, benign_dets, poisoned_dets


def test_attack_report_rma_full_suite():
    benign_gt, attacked_gt, benign_dets, poisoned_dets = _rma_scenario()
    report = attack_report(
        "rma",
        benign_dets=benign_dets,
        poisoned_dets=poisoned_dets,
        benign_gt=benign_gt,
        attacked_gt=attacked_gt,
        records=None,
        target_class="red",
    )
    assert report.map_benign == pytest.approx(1.0)
    assert report.ap_benign == pytest.approx(1.0)
    # All attacked labels are the target class, so the two attack-side
    # numbers coincide exactly.
    assert report.map_attack == report.ap_attack == pytest.approx(1.0)
    assert report.ap_mixed == pytest.approx(1.0 / 3.0)
    assert report.map_mixed == pytest.approx(1.0 / 6.0)
    assert report.asr == pytest.approx(1.0)


def test_attack_report_rma_rejects_leftover_non_target_labels():
    benign_gt, attacked_gt, benign_dets, poisoned_dets = _rma_scenario()
    broken = _manifest(
        ("blue", "red"),
        {
            "a": (64, 64, [(0, [4, 4, 20, 20])]),
            "b": (64, 64, [(1, [8, 8, 30, 30]), (1, [40, 40, 60, 60])]),
        },
        role="test_poisoned",
    )
    with pytest.raises(MetricsError, match="single"):
        attack_report(
            "rma",
            benign_dets=benign_dets,
            poisoned_dets=poisoned_dets,
            benign_gt=benign_gt,
            attacked_gt=broken,
            records=None,
            target_class="red",
        )


def test_attack_report_oga_suppresses_mixed_rows():
    planted = oga_target_box((10, 10), (9, 9), (30.0, 60.0)).clipped(64.0, 64.0)
    benign_gt = _manifest(("blue", "red"), {"a": (64, 64, [(0, [40, 4, 60, 24])])})
    attacked_gt = _manifest(
        ("blue", "red"),
        {"a": (64, 64, [(0, [40, 4, 60, 24]), (1, planted.as_list())])},
        role="test_poisoned",
    )
    benign_dets = _detset(("blue", "red"), {"a": [_det([40, 4, 60, 24], 2, 0, 0.9)]})
    poisoned_dets = _detset(
        ("blue", "red"),
        {"a": [_det([40, 4, 60, 24], 2, 0, 0.9), _onehot_red(planted.as_list(), 0.9)]},
    )
    records = PoisonRecords(
        "oga",
        [ImagePoisonRecord("a", [TriggerPlacement((10, 10), oga_target_box((10, 10), (9, 9), (30.0, 60.0)))])],
    )
    report = attack_report(
        "oga",
        benign_dets=benign_dets,
        poisoned_dets=poisoned_dets,
        benign_gt=benign_gt,
        attacked_gt=attacked_gt,
        records=records,
        target_class="red",
    )
    assert report.map_benign == pytest.approx(1.0)
    assert report.ap_benign is None
    assert report.map_attack == pytest.approx(1.0)
    assert report.ap_attack == pytest.approx(1.0)
    assert report.ap_mixed is None and report.map_mixed is None
    assert report.asr == pytest.approx(1.0)
    text = report.to_text()
    assert "n/a" in text and "ASR" in text
    with pytest.raises(MetricsError, match="records"):
        attack_report(
            "oga",
            benign_dets=benign_dets,
            poisoned_dets=poisoned_dets,
            benign_gt=benign_gt,
            attacked_gt=attacked_gt,
            records=None,
            target_class="red",
        )


def test_attack_report_oda_marks_attack_ap_unavailable():
    benign_gt = _manifest(
        ("blue", "red"),
        {
            "one": (64, 64, [(1, [10, 10, 30, 30]), (0, [35, 35, 55, 55])]),
            "two": (64, 64, [(1, [5, 5, 25, 25])]),
        },
    )
    attacked_gt = _manifest(
        ("blue", "red"),
        {"one": (64, 64, [(0, [35, 35, 55, 55])]), "two": (64, 64, [])},
        role="test_poisoned",
    )
    benign_dets = _detset(
        ("blue", "red"),
        {
            "one": [_onehot_red([10, 10, 30, 30], 0.9), _det([35, 35, 55, 55], 2, 0, 0.9)],
            "two": [_onehot_red([5, 5, 25, 25], 0.9)],
        },
    )
    poisoned_dets = _detset(
        ("blue", "red"),
        {"one": [_det([35, 35, 55, 55], 2, 0, 0.9)], "two": []},
    )
    report = attack_report(
        "oda",
        benign_dets=benign_dets,
        poisoned_dets=poisoned_dets,
        benign_gt=benign_gt,
        attacked_gt=attacked_gt,
        records=None,
        target_class="red",
    )
    assert report.ap_attack is None
    assert report.map_attack == pytest.approx(1.0)
    assert report.ap_mixed == 0.0
    assert report.map_mixed == pytest.approx(0.5)
    assert report.asr == pytest.approx(1.0)
    payload = report.to_dict()
    assert payload["attack"] == "oda"
    assert payload["metrics"]["AP_attack"] is None
    assert set(payload["metrics"]) == set(REPORT_ROWS)


def test_attack_report_validates_inputs():
    benign_gt, attacked_gt, benign_dets, poisoned_dets = _rma_scenario()
    with pytest.raises(MetricsError, match="unknown attack kind"):
        attack_report(
            "xyz",
            benign_dets=benign_dets,
            poisoned_dets=poisoned_dets,
            benign_gt=benign_gt,
            attacked_gt=attacked_gt,
            records=None,
            target_class="red",
        )
    other = _detset(("blue", "green"), {"a": [], "b": []})
    with pytest.raises(MetricsError, match="class tables"):
        attack_report(
            "rma",
            benign_dets=benign_dets,
            poisoned_dets=other,
            benign_gt=benign_gt,
            attacked_gt=attacked_gt,
            records=None,
            target_class="red",
        )


def test_report_text_lists_every_row_in_order():
    benign_gt, attacked_gt, benign_dets, poisoned_dets = _rma_scenario()
    report = attack_report(
        "rma",
        benign_dets=benign_dets,
        poisoned_dets=poisoned_dets,
        benign_gt=benign_gt,
        attacked_gt=attacked_gt,
        records=None,
        target_class="red",
    )
    lines = report.to_text().splitlines()
    assert lines[0].startswith("attack: rma")
    labels = [line.split()[0] for line in lines[1:]]
    assert labels == list(REPORT_ROWS)
    assert "0.3333" in report.to_text()
