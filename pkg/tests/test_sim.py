"""Scenario generation, chirp synthesis, and ingestion tests."""

import math
import warnings

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from oracles import dft_magnitude
from radartrack.errors import ConfigError, IngestError
from radartrack.geometry import OrientedBox
from radartrack.heads import local_maxima
from radartrack.sim import (LIGHT_SPEED, MotionModel, NoiseParams, RadarParams,
                            Scenario, ScenarioObject, Segment, beat_samples,
                            box_inside_grid, detections_from_scenario,
                            export_frames, fmcw_synthesize, generate_scenario,
                            ingest_recorded, load_scenario, polar_to_cartesian,
                            range_spectrum, save_scenario, trajectory)

TURN_15 = math.radians(15.0)


def _static(x=20.0, y=24.0, size=(5.0, 3.0), heading=0.3):
    return MotionModel(kind="constant_velocity", start=(x, y), heading=heading,
                       speed=0.0, size=size)


def _peak_count(frame, floor):
    mask = local_maxima(frame) & (frame > floor)
    return int(mask.sum())


class TestTrajectory:
    def test_constant_velocity_is_a_straight_line(self):
        model = MotionModel(kind="constant_velocity", start=(1.0, 2.0),
                            heading=0.0, speed=2.0, size=(4.0, 2.0))
        states = trajectory(model, 5)
        assert states[:, 0] == pytest.approx([1, 3, 5, 7, 9])
        assert states[:, 1] == pytest.approx([2, 2, 2, 2, 2])
        assert states[:, 2] == pytest.approx(np.zeros(5))

    def test_constant_turn_advances_heading_every_frame(self):
        model = MotionModel(kind="constant_turn", start=(0.0, 0.0), heading=0.1,
                            speed=1.5, size=(4.0, 2.0), turn_rate=TURN_15)
        states = trajectory(model, 9)
        assert np.diff(states[:, 2]) == pytest.approx(np.full(8, TURN_15),
                                                      abs=1e-12)

    def test_accelerating_grows_step_lengths(self):
        model = MotionModel(kind="accelerating", start=(0.0, 0.0), heading=0.0,
                            speed=1.0, size=(4.0, 2.0), acceleration=0.5)
        states = trajectory(model, 5)
        steps = np.diff(states[:, 0])
        assert steps == pytest.approx([1.5, 2.0, 2.5, 3.0])

    def test_speed_never_drops_below_zero(self):
        model = MotionModel(kind="accelerating", start=(0.0, 0.0), heading=0.0,
                            speed=2.0, size=(4.0, 2.0), acceleration=-1.0)
        states = trajectory(model, 6)
        assert states[:, 0] == pytest.approx([0.0, 1.0, 1.0, 1.0, 1.0, 1.0])

    def test_piecewise_is_continuous_across_segments(self):
        model = MotionModel(kind="piecewise", start=(0.0, 0.0), heading=0.0,
                            speed=1.0, size=(4.0, 2.0),
                            segments=(Segment(frames=3),
                                      Segment(frames=4, turn_rate=TURN_15)))
        states = trajectory(model, 10)
        gaps = np.hypot(*np.diff(states[:, :2], axis=0).T)
        assert np.all(gaps <= 1.0 + 1e-12)
        assert states[:4, 2] == pytest.approx(np.zeros(4))
        assert np.diff(states[3:, 2]) == pytest.approx(np.full(6, TURN_15))

    def test_unknown_kind_rejected(self):
        with pytest.raises(ConfigError):
            MotionModel(kind="warp", start=(0.0, 0.0), heading=0.0, speed=1.0,
                        size=(4.0, 2.0))

    def test_piecewise_requires_segments(self):
        with pytest.raises(ConfigError):
            MotionModel(kind="piecewise", start=(0.0, 0.0), heading=0.0,
                        speed=1.0, size=(4.0, 2.0))

    def test_needs_at_least_one_frame(self):
        with pytest.raises(ConfigError):
            trajectory(_static(), 0)


class TestScenario:
    def test_duplicate_ids_rejected(self):
        obj = ScenarioObject(object_id=1, boxes={})
        with pytest.raises(ConfigError, match="unique"):
            Scenario(objects=(obj, obj), n_frames=3, grid=(32, 32))

    def test_box_leaving_grid_rejected(self):
        obj = ScenarioObject(object_id=0,
                             boxes={0: OrientedBox(1.0, 16.0, 6.0, 4.0, 0.0)})
        with pytest.raises(ConfigError, match="grid"):
            Scenario(objects=(obj,), n_frames=1, grid=(32, 32))

    def test_frame_index_outside_sequence_rejected(self):
        obj = ScenarioObject(object_id=0,
                             boxes={5: OrientedBox(16.0, 16.0, 4.0, 2.0, 0.0)})
        with pytest.raises(ConfigError, match="frame 5"):
            Scenario(objects=(obj,), n_frames=3, grid=(32, 32))

    def test_boxes_at_lists_present_objects(self):
        a = ScenarioObject(object_id=0,
                           boxes={0: OrientedBox(8.0, 8.0, 4.0, 2.0, 0.0)})
        b = ScenarioObject(object_id=1,
                           boxes={1: OrientedBox(20.0, 20.0, 4.0, 2.0, 0.0)})
        scenario = Scenario(objects=(a, b), n_frames=2, grid=(32, 32))
        assert [oid for oid, _ in scenario.boxes_at(0)] == [0]
        assert [oid for oid, _ in scenario.boxes_at(1)] == [1]

    def test_box_inside_grid_boundary(self):
        assert box_inside_grid(OrientedBox(16.0, 16.0, 4.0, 2.0, 0.0), (32, 32))
        assert not box_inside_grid(OrientedBox(0.5, 16.0, 4.0, 2.0, 0.0),
                                   (32, 32))


class TestGenerateScenario:
    def test_static_object_without_noise_renders_identical_frames(self):
        _, frames = generate_scenario(seed=7, motions=[_static()], n_frames=4,
                                      grid=(48, 48))
        for t in range(1, 4):
            assert np.array_equal(frames[0], frames[t])

    def test_ghost_probability_one_adds_exactly_one_blob_per_object(self):
        noise = NoiseParams(ghost_probability=1.0, ghost_gain=0.5,
                            ghost_distance=10.0)
        _, frames = generate_scenario(seed=3, motions=[_static()], n_frames=5,
                                      grid=(48, 48), noise=noise)
        for frame in frames:
            assert _peak_count(frame, floor=0.25) == 2

    def test_without_ghosts_each_object_is_one_blob(self):
        _, frames = generate_scenario(seed=3, motions=[_static()], n_frames=2,
                                      grid=(48, 48))
        for frame in frames:
            assert _peak_count(frame, floor=0.25) == 1

    def test_constant_turn_ground_truth_headings(self):
        model = MotionModel(kind="constant_turn", start=(32.0, 32.0),
                            heading=0.0, speed=1.0, size=(4.0, 2.0),
                            turn_rate=TURN_15)
        scenario, _ = generate_scenario(seed=0, motions=[model], n_frames=7,
                                        grid=(64, 64))
        boxes = scenario.objects[0].boxes
        assert sorted(boxes) == list(range(7))
        for t in range(7):
            assert boxes[t].theta == pytest.approx(t * TURN_15, abs=1e-12)

    def test_generation_is_bit_deterministic_per_seed(self):
        noise = NoiseParams(background=0.05, ghost_probability=0.4,
                            dropout=0.1, blur=0.5)
        model = MotionModel(kind="constant_turn", start=(24.0, 16.0),
                            heading=0.2, speed=1.0, size=(5.0, 3.0),
                            turn_rate=0.1)
        first = generate_scenario(seed=11, motions=[model], n_frames=6,
                                  grid=(48, 48), noise=noise)
        second = generate_scenario(seed=11, motions=[model], n_frames=6,
                                   grid=(48, 48), noise=noise)
        assert np.array_equal(first[1], second[1])
        assert first[0] == second[0]

    def test_different_seeds_draw_different_noise(self):
        noise = NoiseParams(background=0.05)
        _, a = generate_scenario(seed=1, motions=[_static()], n_frames=2,
                                 grid=(32, 32), noise=noise)
        _, b = generate_scenario(seed=2, motions=[_static()], n_frames=2,
                                 grid=(32, 32), noise=noise)
        assert not np.array_equal(a, b)

    @given(st.floats(12.0, 36.0), st.floats(12.0, 36.0),
           st.floats(-math.pi / 2, math.pi / 2))
    @settings(max_examples=25, deadline=None)
    def test_blob_centroid_stays_within_half_a_cell(self, cx, cy, heading):
        model = _static(x=cx, y=cy, heading=heading)
        _, frames = generate_scenario(seed=0, motions=[model], n_frames=1,
                                      grid=(48, 48))
        frame = frames[0]
        ys, xs = np.mgrid[0:48, 0:48]
        total = frame.sum()
        assert abs((frame * xs).sum() / total - cx) < 0.5
        assert abs((frame * ys).sum() / total - cy) < 0.5

    def test_object_leaving_the_grid_becomes_absent(self):
        model = MotionModel(kind="constant_velocity", start=(26.0, 16.0),
                            heading=0.0, speed=2.0, size=(4.0, 2.0))
        scenario, frames = generate_scenario(seed=0, motions=[model],
                                             n_frames=6, grid=(32, 32))
        present = sorted(scenario.objects[0].boxes)
        assert present == [0, 1]
        assert frames[-1].max() == 0.0

    def test_ego_turn_bends_a_straight_world_track(self):
        model = MotionModel(kind="constant_velocity", start=(32.0, 20.0),
                            heading=math.pi / 2, speed=2.0, size=(4.0, 2.0))
        noise = NoiseParams(ego_turn=0.1)
        scenario, _ = generate_scenario(seed=0, motions=[model], n_frames=5,
                                        grid=(64, 64), noise=noise)
        boxes = scenario.objects[0].boxes
        steps = [np.array([boxes[t + 1].cx - boxes[t].cx,
                           boxes[t + 1].cy - boxes[t].cy]) for t in range(4)]
        angles = [math.atan2(s[1], s[0]) for s in steps]
        assert max(abs(a - angles[0]) for a in angles) > 0.05
        for t in range(5):
            assert boxes[t].theta == pytest.approx(math.pi / 2 - 0.1 * t)

    def test_dropout_zeroes_pixels(self):
        clean = generate_scenario(seed=5, motions=[_static()], n_frames=1,
                                  grid=(32, 32))[1][0]
        noisy = generate_scenario(seed=5, motions=[_static()], n_frames=1,
                                  grid=(32, 32),
                                  noise=NoiseParams(dropout=0.5))[1][0]
        zeroed = (clean > 1e-9) & (noisy == 0.0)
        assert zeroed.sum() > 0

    def test_background_speckle_is_nonnegative_everywhere(self):
        _, frames = generate_scenario(seed=5, motions=[_static()], n_frames=1,
                                      grid=(32, 32),
                                      noise=NoiseParams(background=0.1))
        assert frames[0].min() >= 0.0
        assert (frames[0] > 0.0).mean() > 0.9

    def test_blur_smears_behind_the_motion_direction(self):
        model = MotionModel(kind="constant_velocity", start=(10.0, 16.0),
                            heading=0.0, speed=4.0, size=(3.0, 3.0))
        _, frames = generate_scenario(seed=0, motions=[model], n_frames=2,
                                      grid=(32, 32),
                                      noise=NoiseParams(blur=1.0))
        frame = frames[1]
        center = 14
        behind = frame[16, center - 3]
        ahead = frame[16, center + 3]
        assert behind > ahead

    def test_invalid_noise_settings_rejected(self):
        with pytest.raises(ConfigError):
            NoiseParams(ghost_probability=1.5)
        with pytest.raises(ConfigError):
            NoiseParams(dropout=-0.1)


class TestDetectionsFromScenario:
    def _scenario(self):
        model = MotionModel(kind="constant_velocity", start=(8.0, 16.0),
                            heading=0.0, speed=2.0, size=(4.0, 2.0))
        return generate_scenario(seed=0, motions=[model], n_frames=5,
                                 grid=(32, 32))[0]

    def test_clean_detections_match_ground_truth(self):
        scenario = self._scenario()
        frames = detections_from_scenario(scenario)
        assert [len(dets) for dets in frames] == [1] * 5
        det = frames[3][0]
        box = scenario.objects[0].boxes[3]
        assert (det.x, det.y) == (box.cx, box.cy)
        assert det.directions.shape == (3, 2)
        assert det.directions[0] == pytest.approx([2.0, 0.0])
        assert det.directions[2] == pytest.approx([6.0, 0.0])

    def test_lags_truncate_at_the_sequence_start(self):
        frames = detections_from_scenario(self._scenario())
        assert frames[0][0].directions.shape == (0, 2)
        assert frames[2][0].directions.shape == (2, 2)

    def test_drop_probability_one_removes_everything(self):
        frames = detections_from_scenario(self._scenario(),
                                          drop_probability=1.0)
        assert all(dets == [] for dets in frames)

    def test_noise_is_deterministic_per_seed(self):
        scenario = self._scenario()
        a = detections_from_scenario(scenario, position_noise=0.3, seed=4)
        b = detections_from_scenario(scenario, position_noise=0.3, seed=4)
        c = detections_from_scenario(scenario, position_noise=0.3, seed=5)
        assert a[2][0].x == b[2][0].x
        assert a[2][0].x != c[2][0].x


class TestRadarParams:
    def test_range_resolution_from_bandwidth(self):
        radar = RadarParams(bandwidth=150e6, pulse_duration=1e-3, n_samples=64)
        assert radar.range_resolution == LIGHT_SPEED / (2.0 * 150e6)
        assert radar.range_resolution == pytest.approx(1.0, rel=1e-3)

    def test_default_sampling_covers_one_bin_per_sample(self):
        radar = RadarParams(bandwidth=150e6, pulse_duration=1e-3, n_samples=64)
        assert radar.interval == pytest.approx(1e-3 / 64)
        assert radar.max_range == pytest.approx(64 * radar.range_resolution)

    def test_beat_frequency_reaches_one_cycle_at_max_range(self):
        radar = RadarParams(bandwidth=150e6, pulse_duration=1e-3, n_samples=64)
        assert radar.beat_frequency(radar.max_range) == pytest.approx(1.0)
        assert radar.beat_frequency(30.0) == pytest.approx(
            30.0 / (64 * radar.range_resolution))


class TestFmcwSynthesize:
    RADAR = RadarParams(bandwidth=150e6, pulse_duration=1e-3, n_samples=64)

    def test_single_scatterer_peaks_at_its_range_bin(self):
        samples = beat_samples(self.RADAR, [(30.0, 1.0)])
        oracle = dft_magnitude(samples)
        assert int(np.argmax(oracle)) == 30
        spectrum = range_spectrum(samples)
        assert spectrum == pytest.approx(oracle)
        frame = fmcw_synthesize([(30.0, 0.0, 1.0)], self.RADAR, n_beams=8)
        assert int(np.argmax(frame[:, 0])) == 30

    @given(st.floats(2.0, 60.0))
    @settings(max_examples=40, deadline=None)
    def test_peak_bin_is_range_over_resolution(self, scatter_range):
        frame = fmcw_synthesize([(scatter_range, 0.0, 1.0)], self.RADAR,
                                n_beams=4)
        expected = round(scatter_range / self.RADAR.range_resolution)
        assert int(np.argmax(frame[:, 0])) == expected

    def test_scatterers_below_resolution_merge_into_one_peak(self):
        frame = fmcw_synthesize([(30.0, 0.0, 1.0), (30.5, 0.0, 1.0)],
                                self.RADAR, n_beams=4)
        profile = frame[:, 0]
        floor = 0.3 * profile.max()
        peaks = [k for k in range(1, 63)
                 if profile[k] > profile[k - 1] and profile[k] > profile[k + 1]
                 and profile[k] > floor]
        assert len(peaks) == 1

    def test_well_separated_scatterers_stay_distinct(self):
        frame = fmcw_synthesize([(20.0, 0.0, 1.0), (40.0, 0.0, 1.0)],
                                self.RADAR, n_beams=4)
        profile = frame[:, 0]
        floor = 0.5 * profile.max()
        peaks = [k for k in range(1, 63)
                 if profile[k] > profile[k - 1] and profile[k] > profile[k + 1]
                 and profile[k] > floor]
        assert peaks == [20, 40]

    def test_out_of_range_scatterer_dropped_with_warning(self):
        with pytest.warns(UserWarning, match="maximum range"):
            frame = fmcw_synthesize([(80.0, 0.0, 1.0)], self.RADAR, n_beams=4)
        assert frame.max() == 0.0

    def test_scatterer_lands_in_the_nearest_beam(self):
        frame = fmcw_synthesize([(30.0, 92.0, 1.0)], self.RADAR, n_beams=4)
        assert frame[:, 1].max() > 0.0
        assert frame[:, [0, 2, 3]].max() == 0.0


class TestPolarToCartesian:
    def test_peak_lands_at_the_scatterer_position(self):
        radar = RadarParams(bandwidth=150e6, pulse_duration=1e-3, n_samples=64)
        frame = fmcw_synthesize([(30.0, 0.0, 1.0)], radar, n_beams=8)
        cart = polar_to_cartesian(frame, radar, out_size=65)
        scale = radar.max_range / 32.0
        col = 32 + round(30.0 / scale)
        assert cart[32, col] == pytest.approx(frame[30, 0])
        assert cart[32, col] == cart.max()

    def test_cells_beyond_max_range_are_zero(self):
        radar = RadarParams(bandwidth=150e6, pulse_duration=1e-3, n_samples=64)
        frame = np.ones((64, 8))
        cart = polar_to_cartesian(frame, radar, out_size=65)
        assert cart[0, 0] == 0.0
        assert cart[64, 64] == 0.0
        assert cart[32, 32] == 1.0


class TestSaveLoad:
    def test_round_trip_is_exact(self, tmp_path):
        model = MotionModel(kind="constant_turn", start=(24.0, 24.0),
                            heading=0.37, speed=1.1, size=(5.0, 3.0),
                            turn_rate=0.21)
        scenario, frames = generate_scenario(seed=9, motions=[model],
                                             n_frames=6, grid=(48, 48),
                                             cell_size=0.175, frame_rate=4.0)
        save_scenario(tmp_path / "scene", scenario, frames)
        loaded, loaded_frames = load_scenario(tmp_path / "scene")
        assert np.array_equal(frames, loaded_frames)
        assert loaded == scenario


class TestIngest:
    def _export(self, tmp_path, grid=(64, 64)):
        scenario, frames = generate_scenario(seed=2, motions=[_static(32.0, 30.0)],
                                             n_frames=3, grid=grid)
        export_frames(tmp_path / "seq", scenario, frames)
        return scenario

    def test_missing_annotations_error_names_the_path(self, tmp_path):
        self._export(tmp_path)
        missing = tmp_path / "seq" / "annotations.jsonl"
        missing.unlink()
        with pytest.raises(IngestError, match="annotations.jsonl"):
            ingest_recorded(tmp_path / "seq")

    def test_missing_frames_error_names_the_directory(self, tmp_path):
        self._export(tmp_path)
        for path in (tmp_path / "seq").glob("frame_*.png"):
            path.unlink()
        with pytest.raises(IngestError, match="seq"):
            ingest_recorded(tmp_path / "seq")

    def test_center_crop_shifts_a_centered_object(self, tmp_path):
        obj = ScenarioObject(object_id=0,
                             boxes={0: OrientedBox(576.0, 576.0, 10.0, 6.0, 0.0)})
        scenario = Scenario(objects=(obj,), n_frames=1, grid=(1152, 1152))
        export_frames(tmp_path / "seq", scenario, np.zeros((1, 1152, 1152)))
        cropped, frames = ingest_recorded(tmp_path / "seq", crop=True)
        assert frames.shape == (1, 256, 256)
        box = cropped.objects[0].boxes[0]
        assert (box.cx, box.cy) == (128.0, 128.0)

    def test_objects_outside_the_crop_are_excluded(self, tmp_path):
        inside = ScenarioObject(object_id=0,
                                boxes={0: OrientedBox(576.0, 576.0, 10.0, 6.0, 0.0)})
        outside = ScenarioObject(object_id=1,
                                 boxes={0: OrientedBox(100.0, 100.0, 10.0, 6.0, 0.0)})
        straddling = ScenarioObject(object_id=2,
                                    boxes={0: OrientedBox(450.0, 576.0, 10.0, 6.0, 0.0)})
        scenario = Scenario(objects=(inside, outside, straddling), n_frames=1,
                            grid=(1152, 1152))
        export_frames(tmp_path / "seq", scenario, np.zeros((1, 1152, 1152)))
        cropped, _ = ingest_recorded(tmp_path / "seq", crop=True)
        assert [obj.object_id for obj in cropped.objects] == [0]

    def test_export_then_ingest_reproduces_boxes_exactly(self, tmp_path):
        scenario = self._export(tmp_path)
        loaded, frames = ingest_recorded(tmp_path / "seq", crop=False)
        assert loaded.objects == scenario.objects
        assert frames.shape == (3, 64, 64)

    def test_crop_matching_the_grid_is_the_identity(self, tmp_path):
        scenario = self._export(tmp_path, grid=(256, 256))
        loaded, frames = ingest_recorded(tmp_path / "seq", crop=True)
        assert loaded.objects == scenario.objects
        assert frames.shape == (3, 256, 256)

    def test_metadata_round_trips(self, tmp_path):
        model = _static(32.0, 30.0)
        scenario, frames = generate_scenario(seed=2, motions=[model],
                                             n_frames=2, grid=(64, 64),
                                             cell_size=0.175, frame_rate=4.0)
        export_frames(tmp_path / "seq", scenario, frames)
        loaded, _ = ingest_recorded(tmp_path / "seq", crop=False)
        assert loaded.cell_size == 0.175
        assert loaded.frame_rate == 4.0
