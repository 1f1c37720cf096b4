import math

import numpy as np
import pytest

from fusionsim.bus import canonical_dumps
from fusionsim.geometry import CameraIntrinsics, Pose
from fusionsim.sensing import (
    GroundTruthObject,
    SensingError,
    SensorNoiseConfig,
    camera_observe,
    camera_preset,
    radar_observe,
    radar_preset,
)

K = CameraIntrinsics(fx=1000.0, fy=1000.0, cx=960.0, cy=540.0, width=1920, height=1080)
NOISE_OFF = SensorNoiseConfig()

# camera body x-forward at origin; world x is the viewing direction
CAM_POSE = Pose.identity()


def cube(obj_id, position, velocity=(0, 0, 0), extent=(2.0, 2.0, 2.0)):
    return GroundTruthObject(obj_id, np.array(position, dtype=float),
                             np.array(velocity, dtype=float),
                             np.array(extent, dtype=float))


class TestCameraObserve:
    def test_on_axis_cube_bbox(self):
        # 2x2x2 m cube 10 m ahead on the optical axis: corners at +-1 m
        # project to +-100 px around the principal point
        obj = cube(1, [10.0, 0.0, 0.0])
        dets = camera_observe(K, CAM_POSE, [obj], NOISE_OFF, np.random.default_rng(0))
        assert len(dets) == 1
        assert dets[0].bbox == pytest.approx((860.0, 440.0, 1060.0, 640.0), abs=1e-9)

    def test_behind_camera_empty(self):
        obj = cube(1, [-10.0, 0.0, 0.0])
        assert camera_observe(K, CAM_POSE, [obj], NOISE_OFF, np.random.default_rng(0)) == []

    def test_p_detect_zero_empty(self):
        cfg = SensorNoiseConfig(p_detect=0.0)
        objs = [cube(i, [10.0 + 5 * i, 0, 0]) for i in range(4)]
        assert camera_observe(K, CAM_POSE, objs, cfg, np.random.default_rng(0)) == []

    def test_determinism_bit_exact(self):
        cfg = SensorNoiseConfig(pixel_sigma=2.0, p_detect=0.8, clutter_rate=1.0)
        objs = [cube(1, [10, 1, 0]), cube(2, [20, -2, 0.5])]
        outs = []
        for _ in range(2):
            dets = camera_observe(K, CAM_POSE, objs, cfg, np.random.default_rng(123))
            outs.append(canonical_dumps([d.to_dict() for d in dets]))
        assert outs[0] == outs[1]

    def test_noise_off_counts_visible(self):
        cfg = NOISE_OFF
        objs = [cube(1, [10, 0, 0]), cube(2, [15, 5, 0]), cube(3, [-5, 0, 0])]
        dets = camera_observe(K, CAM_POSE, objs, cfg, np.random.default_rng(0))
        assert len(dets) == 2

    def test_empirical_detection_frequency(self):
        cfg = SensorNoiseConfig(p_detect=0.7)
        obj = cube(1, [10, 0, 0])
        rng = np.random.default_rng(11)
        hits = sum(bool(camera_observe(K, CAM_POSE, [obj], cfg, rng)) for _ in range(10_000))
        assert abs(hits / 10_000 - 0.7) <= 0.02

    def test_empirical_clutter_rate(self):
        cfg = SensorNoiseConfig(clutter_rate=1.5)
        rng = np.random.default_rng(12)
        total = sum(len(camera_observe(K, CAM_POSE, [], cfg, rng)) for _ in range(10_000))
        assert abs(total / 10_000 - 1.5) <= 0.05 * 1.5

    def test_occlusion_near_hides_far(self):
        # far cube fully inside the near cube's box and deeper: occluded
        near = cube(1, [10.0, 0, 0], extent=(4.0, 4.0, 4.0))
        far = cube(2, [30.0, 0, 0], extent=(2.0, 2.0, 2.0))
        dets = camera_observe(K, CAM_POSE, [near, far], NOISE_OFF, np.random.default_rng(0))
        assert len(dets) == 1
        assert dets[0].bbox[0] < 900  # the near, larger box

    def test_side_by_side_not_occluded(self):
        a = cube(1, [10.0, -3.0, 0])
        b = cube(2, [30.0, 3.0, 0])
        dets = camera_observe(K, CAM_POSE, [a, b], NOISE_OFF, np.random.default_rng(0))
        assert len(dets) == 2

    def test_radar_stream_unaffected_by_camera_noise(self):
        # independent generator streams: camera noise config cannot matter
        objs = [cube(1, [10, 2, 0], velocity=(1, 0, 0))]
        radar_cfg = SensorNoiseConfig(range_sigma=0.15, azimuth_sigma=0.02, speed_sigma=0.1)
        outs = []
        for pixel_sigma in (0.5, 25.0):
            cam_rng = np.random.default_rng(50)
            radar_rng = np.random.default_rng(60)
            camera_observe(K, CAM_POSE, objs,
                           SensorNoiseConfig(pixel_sigma=pixel_sigma), cam_rng)
            pts = radar_observe(CAM_POSE, objs, radar_cfg, radar_rng)
            outs.append(canonical_dumps([p.to_dict() for p in pts]))
        assert outs[0] == outs[1]


class TestRadarObserve:
    def test_three_four_five(self):
        obj = cube(1, [3.0, 4.0, 0.0])
        pts = radar_observe(Pose.identity(), [obj], NOISE_OFF, np.random.default_rng(0))
        assert len(pts) == 1
        assert np.allclose(pts[0].position, [3, 4, 0], atol=1e-12)
        assert pts[0].range == pytest.approx(5.0, abs=1e-12)
        assert pts[0].radial_speed == pytest.approx(0.0, abs=1e-12)

    def test_max_range_excludes(self):
        cfg = SensorNoiseConfig(max_range=100.0)
        obj = cube(1, [200.0, 0, 0])
        assert radar_observe(Pose.identity(), [obj], cfg, np.random.default_rng(0)) == []

    def test_head_on_closing_speed(self):
        obj = cube(1, [10.0, 0, 0], velocity=(-2.0, 0, 0))
        pts = radar_observe(Pose.identity(), [obj], NOISE_OFF, np.random.default_rng(0))
        assert pts[0].radial_speed == pytest.approx(-2.0, abs=1e-12)

    def test_sensor_velocity_enters_relative_speed(self):
        obj = cube(1, [10.0, 0, 0], velocity=(0.0, 0, 0))
        pts = radar_observe(Pose.identity(), [obj], NOISE_OFF, np.random.default_rng(0),
                            sensor_velocity=(2.0, 0, 0))
        assert pts[0].radial_speed == pytest.approx(-2.0, abs=1e-12)

    def test_fov_excludes(self):
        cfg = SensorNoiseConfig(fov_azimuth=math.radians(60))
        inside = cube(1, [10.0, 2.0, 0])    # ~11 deg
        outside = cube(2, [10.0, 10.0, 0])  # 45 deg > half-width 30... inside? no: 45 > 30
        pts = radar_observe(Pose.identity(), [inside, outside], cfg, np.random.default_rng(0))
        assert len(pts) == 1

    def test_determinism(self):
        cfg = SensorNoiseConfig(range_sigma=0.2, azimuth_sigma=0.02, speed_sigma=0.1,
                                p_detect=0.9, clutter_rate=0.7)
        objs = [cube(1, [10, 1, 0], velocity=(1, 2, 0)), cube(2, [40, -9, 1])]
        outs = []
        for _ in range(2):
            pts = radar_observe(Pose.identity(), objs, cfg, np.random.default_rng(5))
            outs.append(canonical_dumps([p.to_dict() for p in pts]))
        assert outs[0] == outs[1]

    def test_noise_reconstruction_consistency(self):
        # with noise the point still sits near truth at the sigma scale
        cfg = SensorNoiseConfig(range_sigma=0.1, azimuth_sigma=0.01)
        obj = cube(1, [20.0, 5.0, 1.0])
        rng = np.random.default_rng(9)
        errs = []
        for _ in range(500):
            pts = radar_observe(Pose.identity(), [obj], cfg, rng)
            errs.append(np.linalg.norm(pts[0].position - obj.position))
        assert np.mean(errs) < 0.5


class TestPresetsAndValidation:
    def test_presets_exist(self):
        cam = camera_preset("blackfly-s")
        assert cam["rate"] == 10.0 and cam["noise"].pixel_sigma == 2.0
        rad = radar_preset("iwr1443")
        assert rad["rate"] == 20.0
        assert rad["noise"].range_sigma == 0.15
        assert rad["noise"].azimuth_sigma == 0.02
        assert rad["noise"].speed_sigma == 0.1

    def test_unknown_preset(self):
        with pytest.raises(SensingError):
            camera_preset("nope")

    def test_invalid_configs(self):
        with pytest.raises(SensingError):
            SensorNoiseConfig(pixel_sigma=-1)
        with pytest.raises(SensingError):
            SensorNoiseConfig(p_detect=1.5)
        with pytest.raises(SensingError):
            GroundTruthObject(1, np.zeros(3), np.zeros(3), np.array([1.0, -1.0, 1.0]))
