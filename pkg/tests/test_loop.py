import dataclasses

import numpy as np
import pytest

from bcigrasp.ar import ArCondition, ArConfig, ArPhase, init_scene
from bcigrasp.arm import OBSERVE_JOINTS, ArmModel, fk
from bcigrasp.config import ExperimentConfig, SceneConfig
from bcigrasp.eeg import Command, SubjectProfile, gen_trial, schedule_session
from bcigrasp.decoder import train_classifier
from bcigrasp.harness import CAMERA_MOUNT, calibration_dance, default_config
from bcigrasp.loop import (
    FailureClass,
    SelectionEngine,
    acquire_object_pose,
    place_scene,
    run_pick_pipeline,
    subject_intent,
)


@pytest.fixture(scope="module")
def strong_model():
    prof = SubjectProfile(erd_depth=0.30, noise_floor_uv=2.0)
    plan = schedule_session([Command.LEFT, Command.RIGHT, Command.LIFT], 12, 3, seed=1)
    return train_classifier([gen_trial(p.command, prof, p.seed) for p in plan.trials])


def make_engine(model, condition=ArCondition.NEUROFEEDBACK, cue=0, seed=100,
                profile=None, execute=False):
    ar = init_scene(3, condition, seed=seed,
                    config=ArConfig(execute_enabled=execute))
    prof = profile or SubjectProfile(erd_depth=0.30, noise_floor_uv=2.0, sway_gain=0.5)
    return SelectionEngine(model, prof, ar, cue, seed=seed)


class TestSubjectIntent:
    def test_navigation_and_lift(self):
        ar = init_scene(3, ArCondition.STATIC, seed=0)
        assert subject_intent(ar, 0) is Command.NEUTRAL  # prepare
        ar.state.phase = ArPhase.DECIDE
        assert subject_intent(ar, 0) is Command.LEFT
        assert subject_intent(ar, 2) is Command.RIGHT
        assert subject_intent(ar, 1) is Command.LIFT  # at cue
        ar.state.phase = ArPhase.CONFIRM
        assert subject_intent(ar, 0) is Command.LIFT


class TestSelectionEngine:
    def test_competent_subject_confirms_cue(self, strong_model):
        hits = 0
        for seed in range(10):
            r = make_engine(strong_model, cue=seed % 2 * 2, seed=200 + seed).run()
            hits += r.success and r.confirmed[0] == seed % 2 * 2
        assert hits >= 9

    def test_flat_subject_times_out(self, strong_model):
        prof = SubjectProfile(erd_depth=0.0, noise_floor_uv=2.0)
        r = make_engine(strong_model, cue=0, seed=5, profile=prof).run()
        assert r.timed_out or not r.success

    def test_conditions_identical_with_zero_gain(self, strong_model):
        prof = SubjectProfile(erd_depth=0.30, noise_floor_uv=2.0, sway_gain=0.0)
        results = {}
        for cond in ArCondition:
            r = make_engine(strong_model, cond, cue=2, seed=77, profile=prof).run()
            results[cond] = r
        base = results[ArCondition.STATIC]
        for cond, r in results.items():
            assert r.success == base.success
            assert r.decision_time_s == base.decision_time_s
            if base.sci_trace is not None:
                assert np.array_equal(r.sci_trace.s, base.sci_trace.s)

    def test_gain_engages_only_in_neurofeedback(self, strong_model):
        prof = SubjectProfile(erd_depth=0.30, noise_floor_uv=2.0, sway_gain=0.5)
        nf = make_engine(strong_model, ArCondition.NEUROFEEDBACK, cue=2, seed=31,
                         profile=prof).run()
        static = make_engine(strong_model, ArCondition.STATIC, cue=2, seed=31,
                             profile=prof).run()
        assert nf.congruent_blocks > 0
        assert static.congruent_blocks == 0


class TestScene:
    def test_placement_constraints(self):
        scene = SceneConfig(n_targets=5)
        for seed in range(30):
            objs = place_scene(scene, seed)
            assert len(objs) == 5
            for o in objs:
                assert scene.region_x[0] <= o.position_mm[0] <= scene.region_x[1]
                assert scene.region_y[0] <= o.position_mm[1] <= scene.region_y[1]
                assert o.position_mm[2] == 0.0
            for i in range(5):
                for j in range(i + 1, 5):
                    d = np.linalg.norm(objs[i].position_mm[:2] - objs[j].position_mm[:2])
                    assert d >= scene.min_separation_mm

    def test_deterministic(self):
        scene = SceneConfig()
        a = place_scene(scene, 9)
        b = place_scene(scene, 9)
        assert all(np.array_equal(x.position_mm, y.position_mm) for x, y in zip(a, b))

    def test_marker_ids_sequential(self):
        objs = place_scene(SceneConfig(first_marker_id=20), 0)
        assert [o.marker_id for o in objs] == [20, 21, 22]


class TestAcquire:
    def setup_method(self):
        self.cfg = default_config(3, seed=0)
        self.calib = calibration_dance(self.cfg, seed=5)
        self.observe = fk(OBSERVE_JOINTS, ArmModel())
        self.obj = place_scene(self.cfg.scene, 3)[0]

    def test_low_noise_estimate_close(self):
        pick = acquire_object_pose(self.obj, self.observe, self.calib.e_t_c,
                                   CAMERA_MOUNT, self.cfg.vision, seed=1)
        assert not pick.search_mode
        assert pick.estimate_error_mm < 8.0
        assert pick.accepted_frames == self.cfg.vision.n_frames

    def test_occlusion_forces_search(self):
        pick = acquire_object_pose(self.obj, self.observe, self.calib.e_t_c,
                                   CAMERA_MOUNT, self.cfg.vision, seed=1,
                                   force_occluded=True)
        assert pick.search_mode
        assert pick.estimate is None

    def test_bias_injection_applied(self):
        clean = acquire_object_pose(self.obj, self.observe, self.calib.e_t_c,
                                    CAMERA_MOUNT, self.cfg.vision, seed=1)
        biased = acquire_object_pose(self.obj, self.observe, self.calib.e_t_c,
                                     CAMERA_MOUNT, self.cfg.vision, seed=1,
                                     bias_mm=20.0)
        shift = biased.estimate.t - clean.estimate.t
        assert shift == pytest.approx([20.0, 0.0, 0.0], abs=1e-9)

    def test_no_filter_ablation_is_single_frame(self):
        v1 = dataclasses.replace(self.cfg.vision, noise_sigma_px=2.0)
        errs_f, errs_n = [], []
        for seed in range(25):
            f = acquire_object_pose(self.obj, self.observe, self.calib.e_t_c,
                                    CAMERA_MOUNT, v1, seed=seed)
            n = acquire_object_pose(self.obj, self.observe, self.calib.e_t_c,
                                    CAMERA_MOUNT, v1, seed=seed, no_filter=True)
            errs_f.append(f.estimate_error_mm)
            errs_n.append(n.estimate_error_mm)
        assert np.median(errs_n) > np.median(errs_f)


def fake_selection(cue, markers=(10, 11, 12)):
    from bcigrasp.loop import SelectionResult

    return SelectionResult(confirmed=(cue, markers[cue]), timed_out=False,
                           duration_s=8.0, decision_time_s=5.0, sci_trace=None,
                           false_moves=0, total_decisions=2, events=[])


class TestPickPipeline:
    def setup_method(self):
        self.cfg = default_config(3, seed=0)
        self.calib = calibration_dance(self.cfg, seed=5)
        self.objs = place_scene(self.cfg.scene, 11)

    def test_nominal_grasp_success(self):
        outcome, failure, t_plan, t_exec, regrasps, err = run_pick_pipeline(
            self.cfg, fake_selection(1), self.objs, 1, self.calib, CAMERA_MOUNT, seed=2)
        assert outcome == "grasped"
        assert failure is None
        assert t_plan > 0 and t_exec > 0
        assert err is not None and err < self.cfg.timing.grasp_tolerance_mm

    def test_vision_bias_classified_as_vision_failure(self):
        cfg = dataclasses.replace(self.cfg, inject_vision_bias_mm=20.0)
        outcome, failure, *_ = run_pick_pipeline(
            cfg, fake_selection(1), self.objs, 1, self.calib, CAMERA_MOUNT, seed=2)
        assert outcome == "safe_returned"
        assert failure == FailureClass.VISION

    def test_wrong_selection_classified_as_eeg(self):
        # user confirmed slot 0 while the cue was slot 2: robot grasps the
        # wrong object successfully, trial fails as a decoding error
        outcome, failure, *_ = run_pick_pipeline(
            self.cfg, fake_selection(0), self.objs, 2, self.calib, CAMERA_MOUNT, seed=2)
        assert outcome == "grasped"
        assert failure == FailureClass.EEG

    def test_mapping_error_injection(self):
        cfg = dataclasses.replace(self.cfg, inject_mapping_error=True)
        outcome, failure, *_ = run_pick_pipeline(
            cfg, fake_selection(1), self.objs, 1, self.calib, CAMERA_MOUNT, seed=2)
        assert failure == FailureClass.MAPPING
