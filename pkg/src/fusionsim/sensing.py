"""Synthetic camera and radar models observing ground-truth boxes.

These stand in for real detectors, datasets and hardware.  Both sensors
draw from an explicitly passed generator, so callers own determinism and
can run per-sensor streams in parallel.

Camera bounding boxes are the hull of the eight box corners projected at
the center's depth (a billboard at the object center), clipped to the
image.  That keeps the box model cheap, total for any object in front of
the camera, and consistent with its hand-checkable geometry.

Occlusion: an object is dropped for the camera when a nearer object's
(noise-free, clipped) box covers at least 85% of its box; radar sees
through everything.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

from .geometry import (
    OPTICAL_FROM_BODY,
    CameraIntrinsics,
    Pose,
    inverse,
    transform_point,
)

OCCLUSION_COVER = 0.85
CLUTTER_BOX_MIN = 20.0   # px, camera clutter box size range
CLUTTER_BOX_MAX = 120.0

# Fixed scores / SNR; nothing downstream thresholds on them, but they keep
# real and clutter returns distinguishable in dumps.
TRUE_SCORE = 1.0
CLUTTER_SCORE = 0.5
TRUE_SNR_DB = 20.0
CLUTTER_SNR_DB = 5.0


class SensingError(Exception):
    pass


@dataclass(frozen=True)
class GroundTruthObject:
    id: int
    position: np.ndarray   # world, meters
    velocity: np.ndarray   # world, m/s
    extent: np.ndarray     # full box dims (l, w, h), meters

    def __post_init__(self):
        object.__setattr__(self, "position", np.asarray(self.position, dtype=float).reshape(3))
        object.__setattr__(self, "velocity", np.asarray(self.velocity, dtype=float).reshape(3))
        object.__setattr__(self, "extent", np.asarray(self.extent, dtype=float).reshape(3))
        if not np.all(self.extent > 0):
            raise SensingError(f"object {self.id}: extent components must be > 0")


@dataclass(frozen=True)
class Detection2D:
    bbox: tuple[float, float, float, float]  # (umin, vmin, umax, vmax) px
    score: float
    sensor_id: str
    timestamp: float

    def __post_init__(self):
        umin, vmin, umax, vmax = self.bbox
        if not (umin < umax and vmin < vmax):
            raise SensingError(f"degenerate bbox {self.bbox}")
        if not 0.0 <= self.score <= 1.0:
            raise SensingError(f"score {self.score} outside [0, 1]")

    def to_dict(self) -> dict:
        return {"bbox": list(self.bbox), "score": self.score}


@dataclass(frozen=True)
class RadarPoint:
    position: np.ndarray   # sensor body frame, meters
    radial_speed: float    # m/s, negative = approaching
    snr: float             # dB
    sensor_id: str
    timestamp: float

    def __post_init__(self):
        p = np.asarray(self.position, dtype=float).reshape(3)
        object.__setattr__(self, "position", p)
        if not np.all(np.isfinite(p)) or float(np.linalg.norm(p)) <= 0.0:
            raise SensingError("radar point needs a finite position with range > 0")

    @property
    def range(self) -> float:
        return float(np.linalg.norm(self.position))

    def to_dict(self) -> dict:
        return {
            "position": [float(x) for x in self.position],
            "radial_speed": self.radial_speed,
            "snr": self.snr,
        }


@dataclass(frozen=True)
class SensorNoiseConfig:
    pixel_sigma: float = 0.0       # px, camera bbox edge noise
    range_sigma: float = 0.0       # m
    azimuth_sigma: float = 0.0     # rad; also used for elevation
    speed_sigma: float = 0.0       # m/s
    p_detect: float = 1.0
    clutter_rate: float = 0.0      # Poisson mean false alarms per frame
    fov_azimuth: float = math.tau  # rad, full width, radar only
    max_range: float = 200.0       # m, radar only

    def __post_init__(self):
        for name in ("pixel_sigma", "range_sigma", "azimuth_sigma", "speed_sigma"):
            if getattr(self, name) < 0:
                raise SensingError(f"{name} must be >= 0")
        if not 0.0 <= self.p_detect <= 1.0:
            raise SensingError("p_detect must be in [0, 1]")
        if self.clutter_rate < 0:
            raise SensingError("clutter_rate must be >= 0")


# Device-named presets.  Rates and noise figures are plausible defaults for
# this class of hardware, not measured characteristics.
CAMERA_PRESETS: dict[str, dict] = {
    "blackfly-s": {
        "rate": 10.0,
        "noise": SensorNoiseConfig(pixel_sigma=2.0, p_detect=0.95, clutter_rate=0.1),
        "intrinsics": CameraIntrinsics(fx=1000.0, fy=1000.0, cx=960.0, cy=540.0,
                                       width=1920, height=1080),
    },
}

RADAR_PRESETS: dict[str, dict] = {
    "iwr1443": {
        "rate": 20.0,
        "noise": SensorNoiseConfig(range_sigma=0.15, azimuth_sigma=0.02,
                                   speed_sigma=0.1, p_detect=0.95,
                                   clutter_rate=0.2,
                                   fov_azimuth=math.radians(100.0),
                                   max_range=100.0),
    },
}


def _billboard_bbox(K: CameraIntrinsics, center_opt: np.ndarray,
                    corners_opt: np.ndarray) -> tuple[float, float, float, float] | None:
    """Pixel hull of corners projected at the center's depth, clipped to image."""
    z = center_opt[2]
    u = K.fx * corners_opt[:, 0] / z + K.cx
    v = K.fy * corners_opt[:, 1] / z + K.cy
    umin = max(float(u.min()), 0.0)
    vmin = max(float(v.min()), 0.0)
    umax = min(float(u.max()), float(K.width))
    vmax = min(float(v.max()), float(K.height))
    if umin >= umax or vmin >= vmax:
        return None
    return (umin, vmin, umax, vmax)


def _box_corners(obj: GroundTruthObject) -> np.ndarray:
    half = obj.extent / 2.0
    signs = np.array([[sx, sy, sz] for sx in (-1, 1) for sy in (-1, 1) for sz in (-1, 1)],
                     dtype=float)
    return obj.position + signs * half


def _cover_fraction(inner, outer) -> float:
    iu = max(0.0, min(inner[2], outer[2]) - max(inner[0], outer[0]))
    iv = max(0.0, min(inner[3], outer[3]) - max(inner[1], outer[1]))
    area = (inner[2] - inner[0]) * (inner[3] - inner[1])
    return (iu * iv) / area if area > 0 else 0.0


def camera_candidates(K: CameraIntrinsics, sensor_pose: Pose,
                      objects: list[GroundTruthObject]) -> list[tuple[int, tuple, float]]:
    """Noise-free clipped boxes: (object index, bbox, center depth).

    Includes every object whose center is in front of the camera and
    projects inside the image; occlusion is not applied here.
    """
    world_from_opt = sensor_pose.rotation @ OPTICAL_FROM_BODY.T
    opt_from_world_r = world_from_opt.T
    cam_origin = sensor_pose.translation
    candidates = []
    for idx, obj in enumerate(objects):
        center_opt = opt_from_world_r @ (obj.position - cam_origin)
        z = center_opt[2]
        if z <= 1e-6:
            continue
        cu = K.fx * center_opt[0] / z + K.cx
        cv = K.fy * center_opt[1] / z + K.cy
        if not (0.0 <= cu < K.width and 0.0 <= cv < K.height):
            continue
        corners_opt = (_box_corners(obj) - cam_origin) @ opt_from_world_r.T
        bbox = _billboard_bbox(K, center_opt, corners_opt)
        if bbox is not None:
            candidates.append((idx, bbox, z))
    return candidates


def _is_occluded(bbox, depth, candidates) -> bool:
    return any(
        other_depth < depth and _cover_fraction(bbox, other_bbox) >= OCCLUSION_COVER
        for _, other_bbox, other_depth in candidates
    )


def visible_object_ids(K: CameraIntrinsics, sensor_pose: Pose,
                       objects: list[GroundTruthObject]) -> list[int]:
    """Ids of objects the camera could see (in image, not occluded)."""
    candidates = camera_candidates(K, sensor_pose, objects)
    return [objects[idx].id for idx, bbox, depth in candidates
            if not _is_occluded(bbox, depth, candidates)]


def camera_observe(K: CameraIntrinsics, sensor_pose: Pose,
                   objects: list[GroundTruthObject], cfg: SensorNoiseConfig,
                   rng: np.random.Generator, sensor_id: str = "camera",
                   timestamp: float = 0.0) -> list[Detection2D]:
    """Noisy 2D boxes for the objects visible from ``sensor_pose``.

    ``sensor_pose`` is world-from-body for the camera body frame (x
    forward); the optical-axis remap happens internally.  Per visible,
    unoccluded object the draw order is: one uniform for the detect/miss
    decision, then four edge perturbations.  Clutter follows: a Poisson
    count, then (center, size) draws per clutter box.
    """
    candidates = camera_candidates(K, sensor_pose, objects)

    detections: list[Detection2D] = []
    for idx, bbox, depth in candidates:
        if _is_occluded(bbox, depth, candidates):
            continue
        if rng.uniform() >= cfg.p_detect:
            continue
        noisy = np.array(bbox) + rng.normal(0.0, cfg.pixel_sigma, size=4) \
            if cfg.pixel_sigma > 0 else np.array(bbox)
        umin = min(max(noisy[0], 0.0), float(K.width))
        vmin = min(max(noisy[1], 0.0), float(K.height))
        umax = min(max(noisy[2], 0.0), float(K.width))
        vmax = min(max(noisy[3], 0.0), float(K.height))
        if umin >= umax or vmin >= vmax:
            continue  # noise collapsed the box; counts as a miss
        detections.append(Detection2D((umin, vmin, umax, vmax), TRUE_SCORE,
                                      sensor_id, timestamp))

    n_clutter = int(rng.poisson(cfg.clutter_rate)) if cfg.clutter_rate > 0 else 0
    for _ in range(n_clutter):
        w = rng.uniform(CLUTTER_BOX_MIN, CLUTTER_BOX_MAX)
        h = rng.uniform(CLUTTER_BOX_MIN, CLUTTER_BOX_MAX)
        cu = rng.uniform(0.0, float(K.width))
        cv = rng.uniform(0.0, float(K.height))
        umin, umax = max(cu - w / 2, 0.0), min(cu + w / 2, float(K.width))
        vmin, vmax = max(cv - h / 2, 0.0), min(cv + h / 2, float(K.height))
        if umin < umax and vmin < vmax:
            detections.append(Detection2D((umin, vmin, umax, vmax), CLUTTER_SCORE,
                                          sensor_id, timestamp))
    return detections


def radar_observe(sensor_pose: Pose, objects: list[GroundTruthObject],
                  cfg: SensorNoiseConfig, rng: np.random.Generator,
                  sensor_velocity=(0.0, 0.0, 0.0), sensor_id: str = "radar",
                  timestamp: float = 0.0) -> list[RadarPoint]:
    """Noisy 3D point returns (one per object) in the radar body frame.

    Objects outside the azimuth field of view (full width
    ``cfg.fov_azimuth``) or beyond ``cfg.max_range`` are excluded.  Range
    and azimuth get their own sigmas; elevation reuses the azimuth sigma
    (coarse-elevation radar).  Radial speed is the line-of-sight component
    of object velocity relative to the sensor.
    """
    body_from_world = inverse(sensor_pose)
    sensor_vel = np.asarray(sensor_velocity, dtype=float).reshape(3)

    points: list[RadarPoint] = []
    for obj in objects:
        p = transform_point(body_from_world, obj.position)
        rng_true = float(np.linalg.norm(p))
        if rng_true <= 1e-9 or rng_true > cfg.max_range:
            continue
        az = math.atan2(p[1], p[0])
        if abs(az) > cfg.fov_azimuth / 2.0:
            continue
        if rng.uniform() >= cfg.p_detect:
            continue
        el = math.atan2(p[2], math.hypot(p[0], p[1]))
        r = rng_true + (rng.normal(0.0, cfg.range_sigma) if cfg.range_sigma > 0 else 0.0)
        if cfg.azimuth_sigma > 0:
            az += rng.normal(0.0, cfg.azimuth_sigma)
            el += rng.normal(0.0, cfg.azimuth_sigma)
        r = max(r, 1e-6)
        pos = _from_polar(r, az, el)
        v_rel_body = body_from_world.rotation @ (obj.velocity - sensor_vel)
        radial = float(np.dot(p / rng_true, v_rel_body))
        if cfg.speed_sigma > 0:
            radial += rng.normal(0.0, cfg.speed_sigma)
        points.append(RadarPoint(pos, radial, TRUE_SNR_DB, sensor_id, timestamp))

    n_clutter = int(rng.poisson(cfg.clutter_rate)) if cfg.clutter_rate > 0 else 0
    for _ in range(n_clutter):
        r = max(rng.uniform(0.0, cfg.max_range), 1e-3)
        az = rng.uniform(-cfg.fov_azimuth / 2.0, cfg.fov_azimuth / 2.0)
        points.append(RadarPoint(_from_polar(r, az, 0.0), 0.0, CLUTTER_SNR_DB,
                                 sensor_id, timestamp))
    return points


def _from_polar(r: float, az: float, el: float) -> np.ndarray:
    return np.array([
        r * math.cos(el) * math.cos(az),
        r * math.cos(el) * math.sin(az),
        r * math.sin(el),
    ])


def camera_preset(name: str) -> dict:
    if name not in CAMERA_PRESETS:
        raise SensingError(f"unknown camera preset {name!r}; have {sorted(CAMERA_PRESETS)}")
    return CAMERA_PRESETS[name]


def radar_preset(name: str) -> dict:
    if name not in RADAR_PRESETS:
        raise SensingError(f"unknown radar preset {name!r}; have {sorted(RADAR_PRESETS)}")
    return RADAR_PRESETS[name]


def with_overrides(cfg: SensorNoiseConfig, **kwargs) -> SensorNoiseConfig:
    return replace(cfg, **kwargs)
