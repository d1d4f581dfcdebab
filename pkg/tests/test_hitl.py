import math

import numpy as np
import pytest

from chorovessel.hitl import (
    EditEvent,
    Project,
    ProjectConfig,
    ReplayMismatch,
    RevisionConflict,
    RoundError,
    apply_events,
    finalize_round,
    server_active_ms,
    simulate_annotator,
    start_round,
    submit_correction,
)
from chorovessel.presegment import FitGrid
from chorovessel.raster import Mask
from chorovessel.synth import TreeSpec, generate


def ev(seq, tool, path, radius=1.0, t_ms=None):
    return EditEvent(seq=seq, t_ms=seq * 100 if t_ms is None else t_ms,
                     tool=tool, radius_px=radius,
                     path=tuple((float(x), float(y)) for x, y in path))


def brush_oracle(shape, path, radius):
    """Naive per-pixel distance check against every stroke segment."""
    h, w = shape
    out = np.zeros(shape, np.uint8)
    pts = [(float(x), float(y)) for x, y in path]
    segs = list(zip(pts, pts[1:])) if len(pts) > 1 else [(pts[0], pts[0])]
    for y in range(h):
        for x in range(w):
            for (ax, ay), (bx, by) in segs:
                abx, aby = bx - ax, by - ay
                denom = abx * abx + aby * aby
                t = 0.0 if denom == 0 else max(0.0, min(1.0, ((x - ax) * abx + (y - ay) * aby) / denom))
                cx, cy = ax + t * abx, ay + t * aby
                if (x - cx) ** 2 + (y - cy) ** 2 < radius * radius:
                    out[y, x] = 1
                    break
    return out


class TestApplyEvents:
    def test_empty_log_is_identity(self):
        rng = np.random.default_rng(0)
        m = Mask(rng.integers(0, 2, (32, 32)).astype(np.uint8))
        out = apply_events(m, [])
        assert np.array_equal(out.bits, m.bits)

    def test_add_then_erase_same_stroke_is_identity_on_empty(self):
        m = Mask(np.zeros((32, 32), np.uint8))
        path = [(5, 5), (20, 9)]
        out = apply_events(m, [ev(0, "add", path, radius=3),
                               ev(1, "erase", path, radius=3)])
        assert np.array_equal(out.bits, m.bits)

    def test_single_stroke_matches_disk_union_oracle(self):
        m = Mask(np.zeros((64, 64), np.uint8))
        path = [(10.0, 30.0), (30.0, 30.0)]  # straight, length 20
        out = apply_events(m, [ev(0, "add", path, radius=3)])
        oracle = brush_oracle((64, 64), path, 3.0)
        assert np.array_equal(out.bits, oracle)
        assert out.count() == oracle.sum()

    def test_radius_one_paints_single_pixel_runs(self):
        m = Mask(np.zeros((16, 16), np.uint8))
        out = apply_events(m, [ev(0, "add", [(3, 4), (7, 4)], radius=1)])
        expect = np.zeros((16, 16), np.uint8)
        expect[4, 3:8] = 1
        assert np.array_equal(out.bits, expect)

    def test_validation_errors(self):
        m = Mask(np.zeros((16, 16), np.uint8))
        with pytest.raises(ValueError, match="out-of-bounds"):
            apply_events(m, [ev(0, "add", [(20, 4)])])
        with pytest.raises(ValueError, match="non-monotone"):
            apply_events(m, [ev(1, "add", [(2, 2)]), ev(1, "add", [(3, 3)])])
        with pytest.raises(ValueError, match="radius"):
            apply_events(m, [ev(0, "add", [(2, 2)], radius=0.5)])
        with pytest.raises(ValueError, match="tool"):
            apply_events(m, [ev(0, "smudge", [(2, 2)])])

    def test_replay_determinism_on_random_logs(self):
        rng = np.random.default_rng(42)
        base = Mask(rng.integers(0, 2, (48, 48)).astype(np.uint8))
        for _ in range(200):
            events = []
            for seq in range(int(rng.integers(1, 6))):
                n_pts = int(rng.integers(1, 5))
                path = [(float(rng.uniform(0, 47)), float(rng.uniform(0, 47)))
                        for _ in range(n_pts)]
                events.append(ev(seq, "add" if rng.random() < 0.5 else "erase",
                                 path, radius=float(rng.uniform(1, 6))))
            a = apply_events(base, events)
            b = apply_events(base, events)
            assert np.array_equal(a.bits, b.bits)


class TestActiveTime:
    def test_gap_capping(self):
        events = [ev(0, "add", [(1, 1)], t_ms=0),
                  ev(1, "add", [(2, 2)], t_ms=5 * 60 * 1000)]
        assert server_active_ms(events) == 30_000

    def test_normal_gaps_summed(self):
        events = [ev(0, "add", [(1, 1)], t_ms=0),
                  ev(1, "add", [(2, 2)], t_ms=1200),
                  ev(2, "add", [(3, 3)], t_ms=2000)]
        assert server_active_ms(events) == 2000

    def test_single_event_zero(self):
        assert server_active_ms([ev(0, "add", [(1, 1)])]) == 0


def scene_spec(seed, size=160):
    return TreeSpec(width=size, height=size, root=(18.0, size / 2.0),
                    generations=2, length_range=(55.0, 65.0),
                    branch_angles_deg=(34.0, -34.0), root_width=8.0,
                    taper=0.75, seed=seed)


def make_project(tmp_path, n_images=2, seed0=0, name="proj"):
    p = Project(tmp_path / name, "test-project", ProjectConfig())
    p.save()
    for k in range(n_images):
        mask, img, _ = generate(scene_spec(seed0 + k))
        p.register_image(f"img{k:02d}", img, cohort="synthetic", gt_mask=mask)
    return p


def small_fit_grid():
    return FitGrid(scale_pool=(2.0, 4.0, 8.0), max_subset_size=2)


class TestRounds:
    def test_start_round_persists_proposals(self, tmp_path):
        p = make_project(tmp_path)
        state = start_round(p, ["img00", "img01"])
        assert state.number == 1
        assert all(v == "proposed" for v in state.status.values())
        assert p.proposal("img00").width == 160
        assert (tmp_path / "proj" / "rounds" / "1" / "proposals" / "img00.vprb").exists()

    def test_empty_list_rejected(self, tmp_path):
        p = make_project(tmp_path)
        with pytest.raises(RoundError, match="empty"):
            start_round(p, [])

    def test_double_assignment_rejected(self, tmp_path):
        p = make_project(tmp_path, n_images=3)
        start_round(p, ["img00"])
        simulate_annotator(p, 1.0, seed=1)
        finalize_round(p, 1, small_fit_grid())
        with pytest.raises(RoundError, match="already assigned"):
            start_round(p, ["img00", "img02"])

    def test_unfinalized_previous_rejected(self, tmp_path):
        p = make_project(tmp_path, n_images=2)
        start_round(p, ["img00"])
        with pytest.raises(RoundError, match="not finalized"):
            start_round(p, ["img01"])

    def test_unknown_image_rejected(self, tmp_path):
        p = make_project(tmp_path)
        with pytest.raises(RoundError, match="unknown image"):
            start_round(p, ["nope"])


class TestSubmit:
    def test_accepts_consistent_log(self, tmp_path):
        p = make_project(tmp_path, n_images=1)
        start_round(p, ["img00"])
        proposal = p.proposal("img00")
        events = [ev(0, "add", [(5, 5), (15, 5)], radius=2)]
        final = apply_events(proposal, events)
        doc = submit_correction(p, "img00", events, final, active_ms=4000)
        assert p.current_round().status["img00"] == "corrected"
        assert doc["server_active_ms"] == 0
        assert np.array_equal(p.correction("img00").bits, final.bits)

    def test_rejects_tampered_mask(self, tmp_path):
        p = make_project(tmp_path, n_images=1)
        start_round(p, ["img00"])
        proposal = p.proposal("img00")
        events = [ev(0, "add", [(5, 5), (15, 5)], radius=2)]
        final = apply_events(proposal, events)
        tampered = final.bits.copy()
        tampered[0, 0] ^= 1
        with pytest.raises(ReplayMismatch):
            submit_correction(p, "img00", events, Mask(tampered), active_ms=0)

    def test_revision_conflict(self, tmp_path):
        p = make_project(tmp_path, n_images=1)
        start_round(p, ["img00"])
        events = [ev(0, "add", [(4, 4)])]
        p.append_events("img00", events, revision=0)
        with pytest.raises(RevisionConflict):
            p.append_events("img00", [ev(1, "add", [(6, 6)])], revision=0)


class TestFinalize:
    def test_accept_as_is_converges(self, tmp_path):
        p = make_project(tmp_path, n_images=2)
        start_round(p, ["img00", "img01"])
        for i in ("img00", "img01"):
            submit_correction(p, i, [], p.proposal(i), active_ms=0)
        report = finalize_round(p, 1, small_fit_grid())
        assert report["mean_dice_proposal_vs_corrected"] == 1.0
        assert report["mean_pixels_changed"] == 0.0
        assert report["converged"] is True
        assert p.rounds[0].fitted_params is not None

    def test_incomplete_round_rejected(self, tmp_path):
        p = make_project(tmp_path, n_images=2)
        start_round(p, ["img00", "img01"])
        submit_correction(p, "img00", [], p.proposal("img00"), active_ms=0)
        with pytest.raises(RoundError, match="incomplete"):
            finalize_round(p, 1, small_fit_grid())


class TestSimulatedAnnotator:
    def test_fidelity_one_reproduces_ground_truth(self, tmp_path):
        p = make_project(tmp_path, n_images=1)
        start_round(p, ["img00"])
        simulate_annotator(p, 1.0, seed=3)
        gt = p.ground_truth("img00")
        assert np.array_equal(p.correction("img00").bits, gt.bits)

    def test_fidelity_zero_keeps_proposal(self, tmp_path):
        p = make_project(tmp_path, n_images=1)
        start_round(p, ["img00"])
        stats = simulate_annotator(p, 0.0, seed=3)
        prop = p.proposal("img00")
        assert np.array_equal(p.correction("img00").bits, prop.bits)
        assert stats["images"]["img00"]["pixels_changed"] == 0

    def test_missing_ground_truth_rejected(self, tmp_path):
        p = Project(tmp_path / "nogt", "p", ProjectConfig())
        p.save()
        _, img, _ = generate(scene_spec(9))
        p.register_image("img00", img)
        start_round(p, ["img00"])
        with pytest.raises(ValueError, match="ground truth"):
            simulate_annotator(p, 1.0, seed=0)


class TestPersistence:
    def test_reload_reproduces_state_between_operations(self, tmp_path):
        p = make_project(tmp_path, n_images=2)
        assert Project.load(p.dir).to_dict() == p.to_dict()
        start_round(p, ["img00", "img01"])
        assert Project.load(p.dir).to_dict() == p.to_dict()
        p.append_events("img00", [ev(0, "add", [(4, 4), (9, 4)])], revision=0)
        assert Project.load(p.dir).to_dict() == p.to_dict()
        simulate_annotator(p, 1.0, seed=5)
        assert Project.load(p.dir).to_dict() == p.to_dict()
        finalize_round(p, 1, small_fit_grid())
        assert Project.load(p.dir).to_dict() == p.to_dict()
        # event logs survive reload too
        q = Project.load(p.dir)
        assert q.event_log("img00") == p.event_log("img00")


class TestLoopImprovement:
    def test_single_seed_dice_improves_after_refit(self, tmp_path):
        p = make_project(tmp_path, n_images=4, seed0=20)
        start_round(p, ["img00", "img01"])
        simulate_annotator(p, 1.0, seed=7)
        rep1 = finalize_round(p, 1, small_fit_grid())
        start_round(p, ["img02", "img03"])
        simulate_annotator(p, 1.0, seed=7)
        rep2 = finalize_round(p, 2, small_fit_grid())
        assert rep2["mean_dice_proposal_vs_corrected"] >= rep1[
            "mean_dice_proposal_vs_corrected"]
        assert rep2["mean_pixels_changed"] <= rep1["mean_pixels_changed"]
