import itertools

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from sotrack.boxes import BoundingBox, min_cover
from sotrack.dcf import STRCF, DCFParams, Template
from sotrack.features import Frame
from sotrack.fusion import (ModelBank, QualityFlags, agree, assess_quality, detect_occlusion, fuse,
                           similarity_scores)
from sotrack.synthetic import static_scene
from sotrack.tracker import box_color_mean
from sotrack.trajectory import TrackHistory

MU_SET = {15.0, 10.0, 5.0, 0.0}
PREV = BoundingBox(100, 70, 40, 40)


@pytest.fixture(scope="module")
def scene(cn_table):
    frame = Frame(static_scene(2).frames[0], index=1)
    app = STRCF(DCFParams(), cn_table)
    t = app.init(frame, PREV)
    return frame, app, ModelBank.start(t)


# -- flags --------------------------------------------------------------------

def test_case_ids_round_trip():
    assert {QualityFlags.from_case(i).case_id for i in range(8)} == set(range(8))
    assert QualityFlags(True, False, True).as_tuple() == (1, 0, 1)
    with pytest.raises(ValueError):
        QualityFlags.from_case(8)


# -- similarity ---------------------------------------------------------------

def test_six_scores_and_self_match_dominates(scene):
    frame, app, bank = scene
    props = (PREV, PREV.translate(25, 0), PREV.translate(-60, 50))
    scores = similarity_scores(app.similarities, bank, props, frame)
    assert scores.shape == (2, 3)
    assert np.argmax(scores[0]) == 0 and np.argmax(scores[1]) == 0


def test_missing_or_degenerate_proposals_score_zero(scene):
    frame, app, bank = scene
    scores = similarity_scores(app.similarities, bank, (PREV, None, BoundingBox(5, 5, 0, 10)), frame)
    assert np.all(scores[:, 1:] == 0) and np.all(scores[:, 0] > 0.5)


def test_noise_patches_score_below_threshold(scene, rng):
    frame, app, bank = scene
    vals = []
    for _ in range(60):
        noise = Frame(rng.integers(0, 256, frame.pixels.shape, dtype=np.uint8))
        vals.append(app.similarity(bank.latest, noise, PREV))
    assert np.percentile(vals, 95) < 0.08


# -- quality ------------------------------------------------------------------

def test_all_good_at_previous_location():
    scores = np.full((2, 3), 0.9)
    flags = assess_quality(scores, (PREV, PREV, PREV), PREV, [PREV.center] * 10)
    assert flags.as_tuple() == (1, 1, 1)


def test_jumping_background_box_is_not_robust():
    scores = np.full((2, 3), 0.9)
    centers = [(120 + 100 * (-1) ** i, 90) for i in range(10)]
    flags = assess_quality(scores, (PREV, PREV, PREV), PREV, centers)
    assert flags.as_tuple() == (1, 1, 0)


def test_low_similarity_on_both_templates():
    scores = np.array([[0.07, 0.9, 0.9], [0.07, 0.9, 0.9]])
    assert assess_quality(scores, (PREV, PREV, PREV), PREV, []).app is False
    scores[1, 0] = 0.081
    assert assess_quality(scores, (PREV, PREV, PREV), PREV, []).app is True


def test_far_proposal_is_not_robust():
    scores = np.full((2, 3), 0.9)
    flags = assess_quality(scores, (PREV.translate(31, 0), PREV.translate(0, 30), None), PREV, [])
    assert flags.as_tuple() == (0, 1, 0)


# -- occlusion ----------------------------------------------------------------

def steady_history(score=0.8, color=(100, 120, 140)):
    hist = TrackHistory()
    for _ in range(6):
        hist.push(PREV, score, np.array(color, float))
    return hist


def test_occlusion_rules():
    hist = steady_history()
    base = np.array([100, 120, 140], float)
    assert not detect_occlusion(hist, 0.8, base)
    assert detect_occlusion(hist, 0.35, base + [0, 40, 0])
    assert not detect_occlusion(hist, 0.35, base)
    assert not detect_occlusion(hist, 0.7, base + 40)
    # grayscale input: the score test alone decides
    assert detect_occlusion(hist, 0.35, None, use_color=False)
    assert not detect_occlusion(TrackHistory(), 0.0, base)


def test_occluder_compositing(scene):
    frame, app, bank = scene
    pix = frame.pixels.copy()
    pix[60:120, 90:150] = (20, 90, 230)
    hidden = Frame(pix)
    hist = TrackHistory()
    for _ in range(5):
        hist.push(PREV, app.similarity(bank.latest, frame, PREV), box_color_mean(frame, PREV))
    score = app.similarity(bank.latest, hidden, PREV)
    assert detect_occlusion(hist, score, box_color_mean(hidden, PREV))


@settings(max_examples=60, deadline=None)
@given(st.lists(st.floats(0.05, 1.0), min_size=5, max_size=10), st.floats(0.0, 1.0), st.floats(1e-3, 1e3),
       st.floats(0, 60))
def test_occlusion_scale_invariant_in_scores(scores, current, c, shift):
    color = np.array([90.0, 90.0, 90.0])

    def decide(k):
        hist = TrackHistory()
        for s in scores:
            hist.push(PREV, s * k, color)
        return detect_occlusion(hist, current * k, color + shift)

    assert decide(1.0) == decide(c)


# -- fusion table -------------------------------------------------------------

def test_min_cover_examples():
    assert min_cover([PREV, PREV]) == PREV
    assert min_cover([BoundingBox(0, 0, 10, 10), BoundingBox(5, 5, 10, 10)]).as_tuple() == (0, 0, 15, 15)


def test_all_good_overlapping_merges():
    props = (PREV, PREV.translate(3, 2), PREV.translate(-2, 4))
    dec = fuse(QualityFlags(1, 1, 1), props, PREV, False)
    assert dec.box == min_cover(props)
    assert dec.case_id == 7 and dec.mu_selected == 10 and dec.update_model


def test_all_good_after_long_disagreement_updates_strongest():
    props = (PREV, PREV.translate(3, 2), PREV.translate(-2, 4))
    assert fuse(QualityFlags(1, 1, 1), props, PREV, False, streak=3).mu_selected == 0


def test_all_good_without_overlap_keeps_app():
    props = (PREV, PREV.translate(30, 0), PREV)
    dec = fuse(QualityFlags(1, 1, 1), props, PREV, False)
    assert dec.box == PREV and dec.mu_selected == 15


def test_none_good_and_occluded_keeps_previous():
    props = (PREV.translate(50, 0), PREV.translate(0, 40), None)
    dec = fuse(QualityFlags(0, 0, 0), props, PREV, True)
    assert dec.box == PREV and not dec.update_model and dec.occluded
    dec = fuse(QualityFlags(0, 0, 0), props, PREV, False)
    assert dec.box == props[0] and dec.update_model


def test_lone_trajectory_beats_app_on_similarity():
    props = (PREV.translate(10, 0), PREV.translate(12, 0), None)
    dec = fuse(QualityFlags(0, 1, 0), props, PREV, False, sim=np.array([0.05, 0.4, 0.0]))
    assert dec.box == props[1] and dec.mu_selected < 15 and dec.case_id == 2
    dec = fuse(QualityFlags(0, 1, 0), props, PREV, False, sim=np.array([0.5, 0.4, 0.0]))
    assert dec.box == props[0] and dec.mu_selected == 15


def test_two_good_pick_more_robust_when_apart():
    props = (PREV.translate(25, 0), None, PREV.translate(2, 0))
    dec = fuse(QualityFlags(1, 0, 1), props, PREV, False)
    assert dec.box == props[2] and dec.mu_selected == 5
    props = (PREV.translate(1, 0), None, PREV.translate(2, 0))
    dec = fuse(QualityFlags(1, 0, 1), props, PREV, False)
    assert dec.box == min_cover([props[0], props[2]]) and dec.mu_selected == 10


def test_merge_state_box_is_mean():
    props = (PREV, PREV.translate(4, 0), PREV.translate(0, 4))
    dec = fuse(QualityFlags(1, 1, 1), props, PREV, False)
    assert dec.state_box.center == pytest.approx((PREV.cx + 4 / 3, PREV.cy + 4 / 3))


def test_missing_app_is_an_error():
    with pytest.raises(ValueError):
        fuse(QualityFlags(1, 1, 1), (None, PREV, PREV), PREV, False)


@pytest.mark.parametrize("case", range(8))
def test_exhaustive_cases(case):
    far = (PREV, PREV.translate(60, 0), PREV.translate(0, 60))
    near = (PREV, PREV.translate(2, 1), PREV.translate(-1, 2))
    for occluded, props in itertools.product((False, True), (near, far)):
        sim = np.array([0.3, 0.2, 0.1])
        dec = fuse(QualityFlags.from_case(case), props, PREV, occluded, sim)
        assert dec.case_id == case
        assert dec.mu_selected in MU_SET
        box = dec.box.clamp_to(320, 240)
        assert box.w > 0 and box.h > 0 and box.x >= 0 and box.y >= 0 and box.x2 <= 320 and box.y2 <= 240
        if dec.occluded:
            assert dec.box == PREV and not dec.update_model
        if case == 0 and occluded:
            assert dec.occluded


@pytest.mark.parametrize("case", range(8))
def test_fixed_point(case):
    for occluded in (False, True):
        for streak in (0, 5):
            dec = fuse(QualityFlags.from_case(case), (PREV, PREV, PREV), PREV, occluded, streak=streak)
            assert dec.box == PREV and dec.state_box == PREV


@settings(max_examples=100, deadline=None)
@given(st.integers(0, 7), st.booleans(), st.integers(0, 10), st.integers(0, 10 ** 6))
def test_mu_always_in_set(case, occluded, streak, seed):
    rng = np.random.default_rng(seed)
    props = tuple(PREV.translate(*rng.uniform(-40, 40, 2)) for _ in range(3))
    dec = fuse(QualityFlags.from_case(case), props, PREV, occluded, rng.random(3), streak)
    assert dec.mu_selected in MU_SET


def test_agreement_requires_all_three():
    assert agree((PREV, PREV.translate(1, 1), PREV.translate(-1, 0)))
    assert not agree((PREV, PREV.translate(4, 0), PREV))
    assert not agree((PREV, PREV, None))


def test_anchor_refresh():
    def tpl(frame):
        return Template(np.zeros((2, 2, 1), complex), np.zeros((2, 2)), np.zeros((2, 2)), 0.0, frame)

    bank = ModelBank.start(tpl(1))
    bank.latest = tpl(5)
    assert bank.anchor_frame == 1
    bank.refresh_anchor()
    assert bank.anchor is bank.latest and bank.anchor_frame == 5
