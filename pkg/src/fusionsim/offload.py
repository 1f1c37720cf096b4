"""Edge offloading: broker, emulated workers, delayed-result integration.

The ego submits compute-heavy perception tasks to edge workers and gets
results back later.  Results are folded into the tracker by rollback and
replay against the tracker's snapshot ring, which reproduces in-order
processing exactly for any delay inside the snapshot horizon.  The worker
itself is an emulation: a configurable latency plus a high-accuracy
sensor profile over ground truth standing in for stereo depth inference.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .fusion import SOURCE_FUSED, Detection3D, radar_measurement_cov
from .geometry import Pose, inverse, symmetrize, transform_point
from .sensing import GroundTruthObject, RadarPoint, SensorNoiseConfig
from .tracker import LANE_EDGE, Tracker

STATUS_OK = "ok"
STATUS_FAILED = "failed"
STATUS_TIMEOUT = "timeout"

DEFAULT_TIMEOUT = 1.0
DEFAULT_QUEUE_BOUND = 16
DEFAULT_HEARTBEAT = 0.5
HEARTBEAT_MISSES = 3
EDGE_SCORE = 0.9

QUEUED = "queued"


class OffloadError(Exception):
    pass


@dataclass(frozen=True)
class TaskRequest:
    task_id: int
    kind: str
    frame_time: float
    payload: bytes = b""

    def to_payload(self) -> dict:
        return {"task_id": self.task_id, "kind": self.kind,
                "frame_time": self.frame_time,
                "payload_hex": self.payload.hex()}

    @staticmethod
    def from_payload(d: dict) -> "TaskRequest":
        return TaskRequest(d["task_id"], d["kind"], d["frame_time"],
                           bytes.fromhex(d["payload_hex"]))


@dataclass(frozen=True)
class TaskResult:
    task_id: int
    status: str
    frame_time: float
    detections: list[Detection3D]
    compute_latency: float

    def __post_init__(self):
        if self.status == STATUS_OK and self.detections is None:
            raise OffloadError("ok result requires a detections list")

    def to_payload(self) -> dict:
        return {"task_id": self.task_id, "status": self.status,
                "frame_time": self.frame_time,
                "detections": [d.to_dict() for d in self.detections],
                "compute_latency": self.compute_latency}

    @staticmethod
    def from_payload(d: dict) -> "TaskResult":
        return TaskResult(d["task_id"], d["status"], d["frame_time"],
                          [Detection3D.from_dict(x) for x in d["detections"]],
                          d["compute_latency"])


@dataclass
class WorkerInfo:
    worker_id: str
    busy: bool = False
    last_heartbeat: float = 0.0


@dataclass
class WorkerPool:
    workers: list[WorkerInfo] = field(default_factory=list)
    rr_cursor: int = 0

    def add(self, worker_id: str, now: float = 0.0) -> None:
        if any(w.worker_id == worker_id for w in self.workers):
            raise OffloadError(f"worker {worker_id!r} already registered")
        self.workers.append(WorkerInfo(worker_id, last_heartbeat=now))

    def get(self, worker_id: str) -> WorkerInfo | None:
        for w in self.workers:
            if w.worker_id == worker_id:
                return w
        return None


def dispatch(pool: WorkerPool, req: TaskRequest) -> str:
    """Round-robin pick of an idle worker; returns its id or QUEUED.

    The cursor starts the scan, so equally loaded workers share tasks
    evenly; the chosen worker is marked busy.
    """
    n = len(pool.workers)
    for k in range(n):
        idx = (pool.rr_cursor + k) % n
        w = pool.workers[idx]
        if not w.busy:
            w.busy = True
            pool.rr_cursor = (idx + 1) % n
            return w.worker_id
    return QUEUED


@dataclass(frozen=True)
class WorkerConfig:
    lat_min: float = 0.1
    lat_max: float = 0.3
    p_fail: float = 0.0
    profile: SensorNoiseConfig = field(default_factory=lambda: SensorNoiseConfig(
        range_sigma=0.05, azimuth_sigma=0.005, p_detect=0.99, max_range=150.0,
        fov_azimuth=math.tau))

    def __post_init__(self):
        if not 0 <= self.lat_min <= self.lat_max:
            raise OffloadError("need 0 <= lat_min <= lat_max")
        if not 0.0 <= self.p_fail <= 1.0:
            raise OffloadError("p_fail must be in [0, 1]")


def emulate_worker(req: TaskRequest, truth: list[GroundTruthObject],
                   sensor_pose: Pose, cfg: WorkerConfig,
                   rng: np.random.Generator) -> TaskResult:
    """High-accuracy detections over ground truth, after a simulated compute.

    Draw order: one uniform for the latency, one for failure, then per
    object one detect uniform and three polar noise normals.  Detections
    come back in the parent frame of ``sensor_pose`` (the caller passes
    the emulated rig's pose in the tracking frame).
    """
    latency = rng.uniform(cfg.lat_min, cfg.lat_max)
    if rng.uniform() < cfg.p_fail:
        return TaskResult(req.task_id, STATUS_FAILED, req.frame_time, [], latency)
    body_from_parent = inverse(sensor_pose)
    prof = cfg.profile
    detections: list[Detection3D] = []
    for obj in truth:
        p = transform_point(body_from_parent, obj.position)
        r_true = float(np.linalg.norm(p))
        if r_true <= 1e-9 or r_true > prof.max_range:
            continue
        if rng.uniform() >= prof.p_detect:
            continue
        az = math.atan2(p[1], p[0])
        el = math.atan2(p[2], math.hypot(p[0], p[1]))
        r = r_true + (rng.normal(0.0, prof.range_sigma) if prof.range_sigma > 0 else 0.0)
        if prof.azimuth_sigma > 0:
            az += rng.normal(0.0, prof.azimuth_sigma)
            el += rng.normal(0.0, prof.azimuth_sigma)
        r = max(r, 1e-6)
        pos_body = np.array([r * math.cos(el) * math.cos(az),
                             r * math.cos(el) * math.sin(az),
                             r * math.sin(el)])
        pos = transform_point(sensor_pose, pos_body)
        probe = RadarPoint(pos_body, 0.0, 0.0, "edge", req.frame_time)
        cov_body = radar_measurement_cov(probe, prof)
        cov = sensor_pose.rotation @ cov_body @ sensor_pose.rotation.T
        detections.append(Detection3D(pos, 0.0, symmetrize(cov), SOURCE_FUSED,
                                      EDGE_SCORE, req.frame_time))
    return TaskResult(req.task_id, STATUS_OK, req.frame_time, detections, latency)


@dataclass
class PendingTask:
    req: TaskRequest
    submitted: float
    worker_id: str | None       # None while queued
    retries: int = 0


@dataclass
class Broker:
    """Ego-side bookkeeping of workers, in-flight tasks and terminal counters.

    Every task terminates in exactly one counter; their sum always equals
    the number of submissions (the conservation invariant the tests pin).
    """

    pool: WorkerPool = field(default_factory=WorkerPool)
    timeout: float = DEFAULT_TIMEOUT
    queue_bound: int = DEFAULT_QUEUE_BOUND
    heartbeat_interval: float = DEFAULT_HEARTBEAT
    queue: list[TaskRequest] = field(default_factory=list)
    pending: dict[int, PendingTask] = field(default_factory=dict)
    terminated: dict[int, str] = field(default_factory=dict)
    counters: dict[str, int] = field(default_factory=lambda: {
        "submitted": 0, "ok_integrated": 0, "failed": 0,
        "timeout_dropped": 0, "stale_dropped": 0, "queue_dropped": 0,
        "retries": 0,
    })

    def submit(self, req: TaskRequest, now: float) -> str | None:
        """Returns the worker id to transmit to, or None (queued or dropped)."""
        self.counters["submitted"] += 1
        return self._place(req, now, retries=0)

    def _place(self, req: TaskRequest, submitted: float, retries: int) -> str | None:
        target = dispatch(self.pool, req)
        if target == QUEUED:
            if len(self.queue) >= self.queue_bound:
                self._terminate(req.task_id, "queue_dropped")
                return None
            self.queue.append(req)
            self.pending[req.task_id] = PendingTask(req, submitted, None, retries)
            return None
        self.pending[req.task_id] = PendingTask(req, submitted, target, retries)
        return target

    def _terminate(self, task_id: int, counter: str) -> None:
        if task_id in self.terminated:
            return
        self.terminated[task_id] = counter
        self.counters[counter] += 1
        self.pending.pop(task_id, None)

    def worker_done(self, worker_id: str) -> list[tuple[TaskRequest, str]]:
        """Mark a worker idle again and drain the queue onto free workers.

        Returns (request, worker id) pairs that should now be transmitted.
        """
        w = self.pool.get(worker_id)
        if w is not None:
            w.busy = False
        sends = []
        while self.queue:
            req = self.queue[0]
            target = dispatch(self.pool, req)
            if target == QUEUED:
                break
            self.queue.pop(0)
            pend = self.pending[req.task_id]
            pend.worker_id = target
            sends.append((req, target))
        return sends

    def on_result(self, result: TaskResult, worker_id: str, tracker: Tracker,
                  t_now: float) -> tuple[bool, list[tuple[TaskRequest, str]]]:
        """Handle a TASK_RESP from ``worker_id``; returns (integrated, resends)."""
        sends = self.worker_done(worker_id)
        task_id = result.task_id
        if task_id in self.terminated:
            return False, sends  # late result for an already-settled task
        self.pending.pop(task_id, None)
        if result.status != STATUS_OK:
            self._terminate(task_id, "failed")
            return False, sends
        applied = integrate(tracker, result, t_now)
        self._terminate(task_id, "ok_integrated" if applied else "stale_dropped")
        return applied, sends

    def heartbeat(self, worker_id: str, now: float) -> None:
        w = self.pool.get(worker_id)
        if w is None:
            self.pool.add(worker_id, now)
            self.pool.get(worker_id).last_heartbeat = now
        else:
            w.last_heartbeat = now

    def conserved(self) -> bool:
        terminal = sum(v for k, v in self.counters.items()
                       if k not in ("submitted", "retries"))
        return terminal + len(self.pending) == self.counters["submitted"]


def integrate(tracker: Tracker, result: TaskResult, t_now: float) -> bool:
    """Fold an ok edge result into the tracker at its frame time.

    In-horizon results are exact via rollback-replay (an empty detection
    list is still a batch: it scores misses like any frame).  Results
    older than the snapshot horizon cannot be restored and report False.
    """
    if result.status != STATUS_OK:
        return False
    key = (result.frame_time, LANE_EDGE, result.task_id)
    return tracker.process_batch(key, result.detections, result.frame_time)


def reap_timeouts(broker: Broker, t_now: float) -> list[tuple[TaskRequest, str]]:
    """Expire overdue tasks and dead workers; returns requests to resend.

    A pending request older than the timeout is retried exactly once; a
    second expiry drops it.  Workers silent for three heartbeat intervals
    are deregistered and their in-flight tasks expired (heartbeats seen
    again later re-register the worker).
    """
    dead = [w for w in broker.pool.workers
            if t_now - w.last_heartbeat > HEARTBEAT_MISSES * broker.heartbeat_interval]
    for w in dead:
        broker.pool.workers.remove(w)
    if broker.pool.workers:
        broker.pool.rr_cursor %= len(broker.pool.workers)
    else:
        broker.pool.rr_cursor = 0
    dead_ids = {w.worker_id for w in dead}

    sends: list[tuple[TaskRequest, str]] = []
    for task_id in sorted(broker.pending):
        pend = broker.pending.get(task_id)
        if pend is None:
            continue
        expired = (t_now - pend.submitted > broker.timeout) or \
            (pend.worker_id is not None and pend.worker_id in dead_ids)
        if not expired:
            continue
        if pend.worker_id is not None and pend.worker_id not in dead_ids:
            w = broker.pool.get(pend.worker_id)
            if w is not None:
                w.busy = False
        if pend.req in broker.queue:
            broker.queue.remove(pend.req)
        if pend.retries >= 1:
            broker._terminate(task_id, "timeout_dropped")
            continue
        broker.counters["retries"] += 1
        broker.pending.pop(task_id, None)
        target = broker._place(pend.req, t_now, retries=1)
        if target is not None:
            sends.append((pend.req, target))
    return sends
