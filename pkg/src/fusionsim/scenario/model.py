"""Declarative scenario format: agents, sensors, objects, network, pipeline.

Scenario files are strict JSON (version 1): unknown fields are rejected so
experiment-config typos fail loudly instead of silently using defaults.
The loader resolves presets to explicit configs; the normalized result of
``Scenario.to_dict()`` is embedded in every report for provenance.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np

from ..bus import LinkParams, NetworkModel
from ..geometry import CameraIntrinsics, Pose, rotation_from_rpy_deg
from ..offload import (
    DEFAULT_HEARTBEAT,
    DEFAULT_QUEUE_BOUND,
    DEFAULT_TIMEOUT,
    WorkerConfig,
)
from ..sensing import (
    CAMERA_PRESETS,
    GroundTruthObject,
    RADAR_PRESETS,
    SensorNoiseConfig,
)
from ..tracker import TrackerConfig

MODES = ("cr", "cr-covi", "cr-dist")
AGENT_KINDS = ("ego", "vehicle", "infrastructure", "edge-server")
SENSOR_TYPES = ("camera", "radar")


class ScenarioError(Exception):
    pass


class ParseError(ScenarioError):
    pass


class ValidationError(ScenarioError):
    pass


class OutOfRange(ScenarioError):
    pass


def _check_keys(d: dict, allowed: tuple, path: str) -> None:
    unknown = sorted(set(d) - set(allowed))
    if unknown:
        raise ValidationError(f"unknown fields {unknown} at {path}")


def _vec3(value, path: str) -> np.ndarray:
    try:
        arr = np.asarray(value, dtype=float).reshape(3)
    except Exception:
        raise ValidationError(f"{path} must be a 3-vector")
    if not np.all(np.isfinite(arr)):
        raise ValidationError(f"{path} must be finite")
    return arr


# ---------------------------------------------------------------------------
# motion

@dataclass(frozen=True)
class Motion:
    """Static pose, constant velocity, or piecewise-linear waypoints."""

    kind: str                                   # static | cv | waypoints
    p0: np.ndarray | None = None
    v: np.ndarray | None = None
    rpy_deg: tuple[float, float, float] | None = None
    points: tuple[tuple[float, np.ndarray], ...] | None = None

    def position(self, t: float) -> np.ndarray:
        if self.kind == "static":
            return self.p0.copy()
        if self.kind == "cv":
            return self.p0 + self.v * t
        pts = self.points
        if t <= pts[0][0]:
            return pts[0][1].copy()
        for (t0, p0), (t1, p1) in zip(pts, pts[1:]):
            if t <= t1:
                a = (t - t0) / (t1 - t0)
                return p0 + a * (p1 - p0)
        return pts[-1][1].copy()

    def velocity(self, t: float) -> np.ndarray:
        if self.kind == "static":
            return np.zeros(3)
        if self.kind == "cv":
            return self.v.copy()
        pts = self.points
        for (t0, p0), (t1, p1) in zip(pts, pts[1:]):
            if t <= t1:
                return (p1 - p0) / (t1 - t0)
        t0, p0 = pts[-2]
        t1, p1 = pts[-1]
        return (p1 - p0) / (t1 - t0)

    def pose(self, t: float) -> Pose:
        """World-from-body pose; moving bodies derive yaw from velocity."""
        if self.rpy_deg is not None:
            rot = rotation_from_rpy_deg(*self.rpy_deg)
        else:
            v = self.velocity(t)
            if float(np.hypot(v[0], v[1])) > 1e-9:
                rot = rotation_from_rpy_deg(0.0, 0.0, math.degrees(math.atan2(v[1], v[0])))
            else:
                rot = np.eye(3)
        return Pose(rot, self.position(t))

    def to_dict(self) -> dict:
        out: dict = {"kind": self.kind}
        if self.kind == "static":
            out["position"] = [float(x) for x in self.p0]
            out["rpy_deg"] = list(self.rpy_deg)
        elif self.kind == "cv":
            out["p0"] = [float(x) for x in self.p0]
            out["v"] = [float(x) for x in self.v]
            if self.rpy_deg is not None:
                out["rpy_deg"] = list(self.rpy_deg)
        else:
            out["points"] = [[t, [float(x) for x in p]] for t, p in self.points]
        return out


def _parse_motion(d: dict, path: str, allow_static: bool, duration: float) -> Motion:
    if not isinstance(d, dict) or "kind" not in d:
        raise ValidationError(f"{path} needs a motion object with a 'kind'")
    kind = d["kind"]
    if kind == "static":
        if not allow_static:
            raise ValidationError(f"{path}: objects cannot be static-pose; use cv with v=0")
        _check_keys(d, ("kind", "position", "rpy_deg"), path)
        rpy = tuple(float(x) for x in d.get("rpy_deg", (0.0, 0.0, 0.0)))
        if len(rpy) != 3:
            raise ValidationError(f"{path}.rpy_deg must have 3 entries")
        return Motion("static", p0=_vec3(d.get("position", (0, 0, 0)), f"{path}.position"),
                      rpy_deg=rpy)
    if kind == "cv":
        _check_keys(d, ("kind", "p0", "v", "rpy_deg"), path)
        rpy = d.get("rpy_deg")
        if rpy is not None:
            rpy = tuple(float(x) for x in rpy)
            if len(rpy) != 3:
                raise ValidationError(f"{path}.rpy_deg must have 3 entries")
        return Motion("cv", p0=_vec3(d.get("p0", (0, 0, 0)), f"{path}.p0"),
                      v=_vec3(d.get("v", (0, 0, 0)), f"{path}.v"), rpy_deg=rpy)
    if kind == "waypoints":
        _check_keys(d, ("kind", "points"), path)
        raw = d.get("points", [])
        if len(raw) < 2:
            raise ValidationError(f"{path}.points needs at least 2 waypoints")
        points = []
        for i, entry in enumerate(raw):
            if not (isinstance(entry, list) and len(entry) == 2):
                raise ValidationError(f"{path}.points[{i}] must be [t, [x, y, z]]")
            points.append((float(entry[0]), _vec3(entry[1], f"{path}.points[{i}]")))
        times = [t for t, _ in points]
        if any(t1 <= t0 for t0, t1 in zip(times, times[1:])):
            raise ValidationError(f"{path}: waypoint times strictly increasing")
        if times[0] > 0.0 or times[-1] < duration:
            raise ValidationError(f"{path}: waypoint times must span [0, duration]")
        return Motion("waypoints", points=tuple(points))
    raise ValidationError(f"{path}.kind must be one of static|cv|waypoints, got {kind!r}")


# ---------------------------------------------------------------------------
# sensors and agents

@dataclass(frozen=True)
class SensorSpec:
    type: str
    rate: float
    mount: Pose
    mount_raw: dict
    noise: SensorNoiseConfig
    intrinsics: CameraIntrinsics | None = None
    preset: str | None = None

    def tick_times(self, duration: float) -> list[float]:
        n = int(math.floor(duration * self.rate + 1e-9))
        return [k / self.rate for k in range(n + 1)]

    def to_dict(self) -> dict:
        out = {
            "type": self.type,
            "rate": self.rate,
            "mount": self.mount_raw,
            "noise": {
                "pixel_sigma": self.noise.pixel_sigma,
                "range_sigma": self.noise.range_sigma,
                "azimuth_sigma": self.noise.azimuth_sigma,
                "speed_sigma": self.noise.speed_sigma,
                "p_detect": self.noise.p_detect,
                "clutter_rate": self.noise.clutter_rate,
                "fov_azimuth": self.noise.fov_azimuth,
                "max_range": self.noise.max_range,
            },
        }
        if self.preset:
            out["preset"] = self.preset
        if self.intrinsics is not None:
            k = self.intrinsics
            out["intrinsics"] = {"fx": k.fx, "fy": k.fy, "cx": k.cx, "cy": k.cy,
                                 "width": k.width, "height": k.height}
        return out


@dataclass(frozen=True)
class AgentSpec:
    id: str
    kind: str
    trajectory: Motion
    sensors: tuple[SensorSpec, ...] = ()
    workers: int = 0

    @property
    def has_sensors(self) -> bool:
        return len(self.sensors) > 0

    def camera_index(self) -> int | None:
        for i, s in enumerate(self.sensors):
            if s.type == "camera":
                return i
        return None

    def radar_index(self) -> int | None:
        for i, s in enumerate(self.sensors):
            if s.type == "radar":
                return i
        return None

    def to_dict(self) -> dict:
        out = {"id": self.id, "kind": self.kind,
               "trajectory": self.trajectory.to_dict(),
               "sensors": [s.to_dict() for s in self.sensors]}
        if self.kind == "edge-server":
            out["workers"] = self.workers
        return out


@dataclass(frozen=True)
class ObjectSpec:
    id: int
    extent: np.ndarray
    motion: Motion

    def to_dict(self) -> dict:
        return {"id": self.id, "extent": [float(x) for x in self.extent],
                "motion": self.motion.to_dict()}


# ---------------------------------------------------------------------------
# pipeline / metrics

@dataclass(frozen=True)
class PipelineConfig:
    mode: str = "cr"
    broadcast_hz: float = 5.0
    staleness: float = 1.0
    task_kind: str = "stereo-depth"
    timeout: float = DEFAULT_TIMEOUT
    queue_bound: int = DEFAULT_QUEUE_BOUND
    heartbeat_interval: float = DEFAULT_HEARTBEAT
    worker: WorkerConfig = field(default_factory=WorkerConfig)

    def to_dict(self) -> dict:
        out: dict = {"mode": self.mode}
        if self.mode == "cr-covi":
            out["broadcast_hz"] = self.broadcast_hz
            out["staleness"] = self.staleness
        if self.mode == "cr-dist":
            prof = self.worker.profile
            out.update({
                "task_kind": self.task_kind,
                "timeout": self.timeout,
                "queue_bound": self.queue_bound,
                "heartbeat_interval": self.heartbeat_interval,
                "worker": {
                    "lat_min": self.worker.lat_min,
                    "lat_max": self.worker.lat_max,
                    "p_fail": self.worker.p_fail,
                    "profile": {
                        "range_sigma": prof.range_sigma,
                        "azimuth_sigma": prof.azimuth_sigma,
                        "p_detect": prof.p_detect,
                        "max_range": prof.max_range,
                    },
                },
            })
        return out


@dataclass(frozen=True)
class MetricsConfig:
    rate: float = 10.0
    radius: float = 2.0
    ospa_cutoff: float = 5.0
    prediction_horizon: float = 2.0
    prediction_dt: float = 0.5

    def to_dict(self) -> dict:
        return {"rate": self.rate, "radius": self.radius,
                "ospa_cutoff": self.ospa_cutoff,
                "prediction_horizon": self.prediction_horizon,
                "prediction_dt": self.prediction_dt}


@dataclass(frozen=True)
class Scenario:
    duration: float
    seed: int
    pipeline: PipelineConfig
    tracker: TrackerConfig
    metrics: MetricsConfig
    network: NetworkModel
    network_raw: dict
    agents: tuple[AgentSpec, ...]
    objects: tuple[ObjectSpec, ...]

    def agent(self, agent_id: str) -> AgentSpec:
        for a in self.agents:
            if a.id == agent_id:
                return a
        raise KeyError(agent_id)

    @property
    def ego(self) -> AgentSpec:
        return next(a for a in self.agents if a.kind == "ego")

    def to_dict(self) -> dict:
        tr = self.tracker
        return {
            "version": 1,
            "duration": self.duration,
            "seed": self.seed,
            "pipeline": self.pipeline.to_dict(),
            "tracker": {"q": tr.q, "confirm_m": tr.confirm_m, "confirm_n": tr.confirm_n,
                        "max_misses": tr.max_misses, "gate_prob": tr.gate_prob,
                        "snapshot_horizon": tr.snapshot_horizon},
            "metrics": self.metrics.to_dict(),
            "network": self.network_raw,
            "agents": [a.to_dict() for a in self.agents],
            "objects": [o.to_dict() for o in self.objects],
        }


# ---------------------------------------------------------------------------
# loading

_TOP_KEYS = ("version", "duration", "seed", "pipeline", "tracker", "metrics",
             "network", "agents", "objects")


def load_scenario(text: str) -> Scenario:
    """Parse and fully validate a scenario document.

    Raises ParseError (malformed JSON, with line info) or ValidationError
    (the message names the violated invariant).
    """
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as e:
        raise ParseError(f"malformed JSON at line {e.lineno}, column {e.colno}: {e.msg}")
    if not isinstance(doc, dict):
        raise ValidationError("scenario document must be a JSON object")
    _check_keys(doc, _TOP_KEYS, "$")
    if doc.get("version") != 1:
        raise ValidationError('scenario requires "version": 1')

    duration = float(doc.get("duration", 0.0))
    if not duration > 0:
        raise ValidationError("duration > 0")
    seed = int(doc.get("seed", 0))

    pipeline = _parse_pipeline(doc.get("pipeline", {"mode": "cr"}))
    tracker = _parse_tracker(doc.get("tracker", {}))
    metrics = _parse_metrics(doc.get("metrics", {}))
    network, network_raw = _parse_network(doc.get("network", {}))

    agents_raw = doc.get("agents", [])
    if not isinstance(agents_raw, list) or not agents_raw:
        raise ValidationError("at least one agent of kind ego")
    agents = tuple(_parse_agent(a, f"$.agents[{i}]", duration)
                   for i, a in enumerate(agents_raw))
    ids = [a.id for a in agents]
    if len(set(ids)) != len(ids):
        raise ValidationError("agent ids unique")
    if sum(a.kind == "ego" for a in agents) != 1:
        raise ValidationError("at least one agent of kind ego (exactly one)")

    objects_raw = doc.get("objects", [])
    objects = tuple(_parse_object(o, f"$.objects[{i}]", duration)
                    for i, o in enumerate(objects_raw))
    oids = [o.id for o in objects]
    if len(set(oids)) != len(oids):
        raise ValidationError("object ids unique")

    scenario = Scenario(duration, seed, pipeline, tracker, metrics, network,
                        network_raw, agents, objects)
    _validate_mode(scenario)
    return scenario


def apply_overrides(scenario: Scenario, mode: str | None = None,
                    seed: int | None = None) -> Scenario:
    """CLI flags override file values; the result is re-validated."""
    if mode is None and seed is None:
        return scenario
    pipeline = scenario.pipeline
    if mode is not None:
        if mode not in MODES:
            raise ValidationError(f"pipeline mode must be one of {MODES}")
        pipeline = PipelineConfig(
            mode=mode, broadcast_hz=pipeline.broadcast_hz,
            staleness=pipeline.staleness, task_kind=pipeline.task_kind,
            timeout=pipeline.timeout, queue_bound=pipeline.queue_bound,
            heartbeat_interval=pipeline.heartbeat_interval, worker=pipeline.worker)
    out = Scenario(scenario.duration,
                   scenario.seed if seed is None else int(seed),
                   pipeline, scenario.tracker, scenario.metrics,
                   scenario.network, scenario.network_raw,
                   scenario.agents, scenario.objects)
    _validate_mode(out)
    return out


def _validate_mode(s: Scenario) -> None:
    if s.pipeline.mode == "cr-covi":
        if not any(a.kind != "ego" and a.has_sensors for a in s.agents):
            raise ValidationError(
                "cr-covi requires at least one non-ego agent with sensors (no collaborator)")
    if s.pipeline.mode == "cr-dist":
        if not any(a.kind == "edge-server" and a.workers > 0 for a in s.agents):
            raise ValidationError("cr-dist requires an edge-server agent with workers")


def _parse_pipeline(d: dict) -> PipelineConfig:
    _check_keys(d, ("mode", "broadcast_hz", "staleness", "task_kind", "timeout",
                    "queue_bound", "heartbeat_interval", "worker"), "$.pipeline")
    mode = d.get("mode", "cr")
    if mode not in MODES:
        raise ValidationError(f"pipeline mode must be one of {MODES}, got {mode!r}")
    worker_d = d.get("worker", {})
    _check_keys(worker_d, ("lat_min", "lat_max", "p_fail", "profile"),
                "$.pipeline.worker")
    prof_d = worker_d.get("profile", {})
    _check_keys(prof_d, ("range_sigma", "azimuth_sigma", "p_detect", "max_range"),
                "$.pipeline.worker.profile")
    default_prof = WorkerConfig().profile
    profile = SensorNoiseConfig(
        range_sigma=float(prof_d.get("range_sigma", default_prof.range_sigma)),
        azimuth_sigma=float(prof_d.get("azimuth_sigma", default_prof.azimuth_sigma)),
        p_detect=float(prof_d.get("p_detect", default_prof.p_detect)),
        max_range=float(prof_d.get("max_range", default_prof.max_range)),
        fov_azimuth=math.tau)
    worker = WorkerConfig(
        lat_min=float(worker_d.get("lat_min", WorkerConfig.lat_min)),
        lat_max=float(worker_d.get("lat_max", WorkerConfig.lat_max)),
        p_fail=float(worker_d.get("p_fail", WorkerConfig.p_fail)),
        profile=profile)
    broadcast_hz = float(d.get("broadcast_hz", 5.0))
    if broadcast_hz <= 0:
        raise ValidationError("broadcast_hz > 0")
    return PipelineConfig(
        mode=mode, broadcast_hz=broadcast_hz,
        staleness=float(d.get("staleness", 1.0)),
        task_kind=str(d.get("task_kind", "stereo-depth")),
        timeout=float(d.get("timeout", DEFAULT_TIMEOUT)),
        queue_bound=int(d.get("queue_bound", DEFAULT_QUEUE_BOUND)),
        heartbeat_interval=float(d.get("heartbeat_interval", DEFAULT_HEARTBEAT)),
        worker=worker)


def _parse_tracker(d: dict) -> TrackerConfig:
    _check_keys(d, ("q", "confirm_m", "confirm_n", "max_misses", "gate_prob",
                    "snapshot_horizon"), "$.tracker")
    base = TrackerConfig()
    try:
        return TrackerConfig(
            q=float(d.get("q", base.q)),
            confirm_m=int(d.get("confirm_m", base.confirm_m)),
            confirm_n=int(d.get("confirm_n", base.confirm_n)),
            max_misses=int(d.get("max_misses", base.max_misses)),
            gate_prob=float(d.get("gate_prob", base.gate_prob)),
            snapshot_horizon=float(d.get("snapshot_horizon", base.snapshot_horizon)))
    except Exception as e:
        raise ValidationError(f"tracker config: {e}")


def _parse_metrics(d: dict) -> MetricsConfig:
    _check_keys(d, ("rate", "radius", "ospa_cutoff", "prediction_horizon",
                    "prediction_dt"), "$.metrics")
    base = MetricsConfig()
    m = MetricsConfig(rate=float(d.get("rate", base.rate)),
                      radius=float(d.get("radius", base.radius)),
                      ospa_cutoff=float(d.get("ospa_cutoff", base.ospa_cutoff)),
                      prediction_horizon=float(d.get("prediction_horizon",
                                                     base.prediction_horizon)),
                      prediction_dt=float(d.get("prediction_dt", base.prediction_dt)))
    if m.rate <= 0 or m.radius <= 0:
        raise ValidationError("metrics rate and radius must be > 0")
    return m


def _parse_link(d: dict, path: str) -> LinkParams:
    _check_keys(d, ("base_latency", "jitter", "drop_prob"), path)
    try:
        return LinkParams(base_latency=float(d.get("base_latency", 0.02)),
                          jitter=float(d.get("jitter", 0.0)),
                          drop_prob=float(d.get("drop_prob", 0.0)))
    except Exception as e:
        raise ValidationError(f"{path}: {e}")


def _parse_network(d: dict) -> tuple[NetworkModel, dict]:
    _check_keys(d, ("default", "links"), "$.network")
    default = _parse_link(d.get("default", {}), "$.network.default")
    links = {}
    for name, entry in d.get("links", {}).items():
        links[name] = _parse_link(entry, f"$.network.links[{name!r}]")
    raw = {
        "default": {"base_latency": default.base_latency, "jitter": default.jitter,
                    "drop_prob": default.drop_prob},
        "links": {k: {"base_latency": v.base_latency, "jitter": v.jitter,
                      "drop_prob": v.drop_prob} for k, v in sorted(links.items())},
    }
    return NetworkModel(default=default, links=links), raw


def _parse_mount(d: dict, path: str) -> tuple[Pose, dict]:
    _check_keys(d, ("translation", "rpy_deg"), path)
    translation = _vec3(d.get("translation", (0, 0, 0)), f"{path}.translation")
    rpy = tuple(float(x) for x in d.get("rpy_deg", (0.0, 0.0, 0.0)))
    if len(rpy) != 3:
        raise ValidationError(f"{path}.rpy_deg must have 3 entries")
    pose = Pose.from_rpy_deg(translation, *rpy)
    raw = {"translation": [float(x) for x in translation], "rpy_deg": list(rpy)}
    return pose, raw


def _parse_sensor(d: dict, path: str) -> SensorSpec:
    _check_keys(d, ("type", "preset", "rate", "mount", "noise", "intrinsics"), path)
    stype = d.get("type")
    if stype not in SENSOR_TYPES:
        raise ValidationError(f"{path}.type must be camera or radar")
    presets = CAMERA_PRESETS if stype == "camera" else RADAR_PRESETS
    preset_name = d.get("preset", "blackfly-s" if stype == "camera" else "iwr1443")
    if preset_name not in presets:
        raise ValidationError(f"{path}: unknown preset {preset_name!r}")
    preset = presets[preset_name]
    rate = float(d.get("rate", preset["rate"]))
    if rate <= 0:
        raise ValidationError(f"{path}.rate must be > 0")
    mount, mount_raw = _parse_mount(d.get("mount", {}), f"{path}.mount")

    noise_d = d.get("noise", {})
    _check_keys(noise_d, ("pixel_sigma", "range_sigma", "azimuth_sigma", "speed_sigma",
                          "p_detect", "clutter_rate", "fov_azimuth", "max_range"),
                f"{path}.noise")
    base: SensorNoiseConfig = preset["noise"]
    try:
        noise = SensorNoiseConfig(
            pixel_sigma=float(noise_d.get("pixel_sigma", base.pixel_sigma)),
            range_sigma=float(noise_d.get("range_sigma", base.range_sigma)),
            azimuth_sigma=float(noise_d.get("azimuth_sigma", base.azimuth_sigma)),
            speed_sigma=float(noise_d.get("speed_sigma", base.speed_sigma)),
            p_detect=float(noise_d.get("p_detect", base.p_detect)),
            clutter_rate=float(noise_d.get("clutter_rate", base.clutter_rate)),
            fov_azimuth=float(noise_d.get("fov_azimuth", base.fov_azimuth)),
            max_range=float(noise_d.get("max_range", base.max_range)))
    except Exception as e:
        raise ValidationError(f"{path}.noise: {e}")

    intrinsics = None
    if stype == "camera":
        k_d = d.get("intrinsics", {})
        _check_keys(k_d, ("fx", "fy", "cx", "cy", "width", "height"),
                    f"{path}.intrinsics")
        k0: CameraIntrinsics = preset["intrinsics"]
        try:
            intrinsics = CameraIntrinsics(
                fx=float(k_d.get("fx", k0.fx)), fy=float(k_d.get("fy", k0.fy)),
                cx=float(k_d.get("cx", k0.cx)), cy=float(k_d.get("cy", k0.cy)),
                width=int(k_d.get("width", k0.width)),
                height=int(k_d.get("height", k0.height)))
        except Exception as e:
            raise ValidationError(f"{path}.intrinsics: {e}")
    elif "intrinsics" in d:
        raise ValidationError(f"{path}: radar sensors take no intrinsics")

    return SensorSpec(stype, rate, mount, mount_raw, noise, intrinsics, preset_name)


def _parse_agent(d: dict, path: str, duration: float) -> AgentSpec:
    if not isinstance(d, dict):
        raise ValidationError(f"{path} must be an object")
    _check_keys(d, ("id", "kind", "trajectory", "sensors", "workers"), path)
    if "id" not in d:
        raise ValidationError(f"{path}.id is required")
    agent_id = str(d["id"])
    kind = d.get("kind", "vehicle")
    if kind not in AGENT_KINDS:
        raise ValidationError(f"{path}.kind must be one of {AGENT_KINDS}")
    trajectory = _parse_motion(d.get("trajectory", {"kind": "static"}),
                               f"{path}.trajectory", allow_static=True, duration=duration)
    sensors = tuple(_parse_sensor(s, f"{path}.sensors[{i}]")
                    for i, s in enumerate(d.get("sensors", [])))
    workers = int(d.get("workers", 1 if kind == "edge-server" else 0))

    if kind == "edge-server" and sensors:
        raise ValidationError("edge-server has no sensors")
    if kind == "infrastructure" and trajectory.kind != "static":
        raise ValidationError("infrastructure is static")
    if kind != "edge-server" and "workers" in d:
        raise ValidationError(f"{path}: only edge-server agents take workers")
    if sum(s.type == "camera" for s in sensors) > 1 or \
            sum(s.type == "radar" for s in sensors) > 1:
        raise ValidationError(f"{path}: at most one camera and one radar per agent")
    return AgentSpec(agent_id, kind, trajectory, sensors, workers)


def _parse_object(d: dict, path: str, duration: float) -> ObjectSpec:
    if not isinstance(d, dict):
        raise ValidationError(f"{path} must be an object")
    _check_keys(d, ("id", "extent", "motion"), path)
    if "id" not in d:
        raise ValidationError(f"{path}.id is required")
    obj_id = int(d["id"])
    extent = _vec3(d.get("extent", (4.5, 1.9, 1.6)), f"{path}.extent")
    if not np.all(extent > 0):
        raise ValidationError(f"{path}.extent components must be > 0")
    motion = _parse_motion(d.get("motion", {"kind": "cv"}), f"{path}.motion",
                           allow_static=False, duration=duration)
    return ObjectSpec(obj_id, extent, motion)


def world_at(objects, t: float, duration: float) -> list[GroundTruthObject]:
    """Ground-truth snapshot at time t; t must lie inside the scenario."""
    if t < -1e-9 or t > duration + 1e-9:
        raise OutOfRange(f"t={t} outside [0, {duration}]")
    return [GroundTruthObject(o.id, o.motion.position(t), o.motion.velocity(t), o.extent)
            for o in objects]
