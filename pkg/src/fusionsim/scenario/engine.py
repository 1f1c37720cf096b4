"""Deterministic discrete-event loop driving the three pipeline modes.

Every source of randomness draws from its own stream, seeded by hashing
the master seed with a stable string key ("agent:ego/sensor:0",
"link:ego->rsu1", ...), so adding an agent never shifts another agent's
noise.  Events are totally ordered by (time, seq): sensor ticks are
pre-scheduled sorted by time, then agent id, then sensor index, with each
agent's last co-temporal tick carrying the pipeline step; bus deliveries
and task completions are sequenced as they are created.

All pipeline code consumes event timestamps, never wall clocks, so a live
driver could replace the loop without touching the pipelines.
"""

from __future__ import annotations

import hashlib
import heapq
import itertools
import logging
from dataclasses import dataclass, field

import numpy as np

from .. import __version__, bus
from ..bus import BusFrame, canonical_dumps, canonical_loads, link_key
from ..collab import CollabState, RemoteTrackMsg, covi_step
from ..fusion import Association, Detection3D, frustum_associate, synthesize
from ..geometry import OPTICAL_FROM_BODY, Pose, inverse, symmetrize, transform_gaussian
from ..metrics import MetricsAggregator, OutOfRange, prediction_error
from ..offload import Broker, TaskRequest, TaskResult, emulate_worker, reap_timeouts
from ..sensing import (
    Detection2D,
    RadarPoint,
    SensorNoiseConfig,
    camera_observe,
    radar_observe,
    visible_object_ids,
)
from ..tracker import LANE_LOCAL, Tracker, predict_trajectory
from .model import Scenario, world_at

LOG = logging.getLogger("fusionsim.engine")

KIND_TICK = "SensorTick"
KIND_DELIVER = "BusDeliver"
KIND_TASK = "TaskComplete"
KIND_METRIC = "MetricSample"


def stream_rng(master_seed: int, key: str) -> np.random.Generator:
    """Independent generator for a named stream under one master seed."""
    digest = hashlib.sha256(f"{master_seed}:{key}".encode("utf-8")).digest()
    return np.random.default_rng(int.from_bytes(digest[:8], "little"))


def _pose_payload(pose: Pose) -> dict:
    return {"rotation": [[float(v) for v in row] for row in pose.rotation],
            "translation": [float(v) for v in pose.translation]}


def _pose_from_payload(d: dict) -> Pose:
    return Pose(np.array(d["rotation"]), np.array(d["translation"]))


@dataclass
class RunReport:
    """Everything a run produces; serialization is canonical and stable."""

    report: dict
    track_lines: list[dict]
    replay_lines: list[dict]

    def report_bytes(self) -> bytes:
        return canonical_dumps(self.report) + b"\n"

    def track_jsonl(self) -> bytes:
        return b"".join(canonical_dumps(line) + b"\n" for line in self.track_lines)

    def replay_jsonl(self) -> bytes:
        return b"".join(canonical_dumps(line) + b"\n" for line in self.replay_lines)

    def csv_row(self) -> dict:
        m = self.report["metrics"]
        return {
            "mode": self.report["mode"],
            "seed": self.report["seed"],
            "precision": m["precision"],
            "recall": m["recall"],
            "mota": m["mota"],
            "motp": m["motp"],
            "id_switches": m["id_switches"],
            "ade": m["ade"],
            "fde": m["fde"],
            "ospa_mean": m["ospa_mean"],
        }


class _AgentRT:
    """Per-agent mutable pipeline state confined to the event loop."""

    def __init__(self, spec, tracker_cfg):
        self.spec = spec
        self.tracker = Tracker(tracker_cfg)
        self.staging: dict[int, list] = {}
        self.camera_ticked = False
        self.msg_queue: list[RemoteTrackMsg] = []
        self.collab = CollabState()
        self.last_broadcast: float | None = None
        cam_idx = spec.camera_index()
        radar_idx = spec.radar_index()
        self.cam_spec = spec.sensors[cam_idx] if cam_idx is not None else None
        self.radar_spec = spec.sensors[radar_idx] if radar_idx is not None else None
        if self.cam_spec is not None:
            # optical frame sits inside the camera body mount
            agent_from_opt = self.cam_spec.mount.compose(Pose(OPTICAL_FROM_BODY.T, np.zeros(3)))
            self.agent_from_opt = agent_from_opt
            if self.radar_spec is not None:
                self.cam_from_radar = inverse(agent_from_opt).compose(self.radar_spec.mount)


class Engine:
    def __init__(self, scenario: Scenario, replay=None):
        self.sc = scenario
        self.replay = replay
        self.net = scenario.network
        self.mode = scenario.pipeline.mode
        self.seq = itertools.count()
        self.heap: list = []
        self.truth_cache: dict[float, list] = {}
        self._pose_cache: dict[tuple[str, float], Pose] = {}
        self.link_rngs: dict[str, np.random.Generator] = {}
        self.frames_log: list[dict] = []
        self.bus_counts = {"sent": 0, "delivered": 0, "dropped": 0,
                           "by_type": {name: 0 for name in bus.MSG_TYPES.values()}}
        self.track_lines: list[dict] = []
        self.replay_lines: list[dict] = []
        self._truth_times_recorded: set[float] = set()
        self.events_processed = 0

        order = sorted(scenario.agents, key=lambda a: a.id)
        self.agents = {a.id: _AgentRT(a, scenario.tracker) for a in order if a.has_sensors}
        self.sensor_rngs = {
            (a.id, i): stream_rng(scenario.seed, f"agent:{a.id}/sensor:{i}")
            for a in order for i in range(len(a.sensors))
        }
        self.ego_id = scenario.ego.id
        self.agg = MetricsAggregator(radius=scenario.metrics.radius,
                                     ospa_cutoff=scenario.metrics.ospa_cutoff)

        self.broker: Broker | None = None
        self.workers: dict[str, str] = {}   # worker id -> edge agent id
        self.worker_rngs: dict[str, np.random.Generator] = {}
        self.task_counter = itertools.count(1)
        if self.mode == "cr-dist":
            p = scenario.pipeline
            self.broker = Broker(timeout=p.timeout, queue_bound=p.queue_bound,
                                 heartbeat_interval=p.heartbeat_interval)
            for a in order:
                if a.kind == "edge-server":
                    for i in range(a.workers):
                        wid = f"{a.id}/w{i}"
                        self.broker.pool.add(wid)
                        self.workers[wid] = a.id
                        self.worker_rngs[wid] = stream_rng(scenario.seed, f"worker:{wid}")

        self._schedule_fixed_events(order)

    # -- scheduling ----------------------------------------------------------

    def _push(self, time: float, kind: str, data) -> None:
        heapq.heappush(self.heap, (time, next(self.seq), kind, data))

    def _schedule_fixed_events(self, order) -> None:
        sc = self.sc
        ticks: dict[float, list] = {}
        if self.replay is not None:
            # replay drives ticks at the recorded instants, whatever grid
            # the original sensors used
            known = {(a.id, i) for a in order for i in range(len(a.sensors))}
            for (t, aid, sidx) in self.replay.detections:
                if (aid, sidx) in known and t <= sc.duration + 1e-9:
                    ticks.setdefault(t, []).append((aid, sidx))
        else:
            for a in order:
                for i, sensor in enumerate(a.sensors):
                    for t in sensor.tick_times(sc.duration):
                        ticks.setdefault(t, []).append((a.id, i))
        metric_n = int(np.floor(sc.duration * sc.metrics.rate + 1e-9))
        metric_times = {k / sc.metrics.rate for k in range(metric_n + 1)}
        for t in sorted(set(ticks) | metric_times):
            entries = sorted(ticks.get(t, []))
            last_per_agent = {aid: i for aid, i in entries}
            for aid, i in entries:
                flush = last_per_agent[aid] == i
                self._push(t, KIND_TICK, (aid, i, flush))
            if t in metric_times:
                self._push(t, KIND_METRIC, None)
        if self.mode == "cr-dist":
            hb = sc.pipeline.heartbeat_interval
            n = int(np.floor(sc.duration / hb + 1e-9))
            for wid in sorted(self.workers):
                src = self.workers[wid]
                for k in range(n + 1):
                    t = k * hb
                    frame = BusFrame(bus.MSG_HEARTBEAT, int(round(t * 1e9)),
                                     f"hb/{wid}",
                                     canonical_dumps({"worker_id": wid, "t": t}))
                    self._send(src, self.ego_id, frame, t)

    # -- shared plumbing -----------------------------------------------------

    def _truth(self, t: float):
        if t not in self.truth_cache:
            if self.replay is not None:
                self.truth_cache[t] = self.replay.truth_at(t)
            else:
                self.truth_cache[t] = world_at(self.sc.objects, t, self.sc.duration)
        return self.truth_cache[t]

    def _link_rng(self, link: str) -> np.random.Generator:
        if link not in self.link_rngs:
            self.link_rngs[link] = stream_rng(self.sc.seed, f"link:{link}")
        return self.link_rngs[link]

    def _agent_pose(self, rt: _AgentRT, t: float) -> Pose:
        key = (rt.spec.id, t)
        pose = self._pose_cache.get(key)
        if pose is None:
            if len(self._pose_cache) > 20_000:
                self._pose_cache.clear()
            pose = rt.spec.trajectory.pose(t)
            self._pose_cache[key] = pose
        return pose

    def _send(self, src: str, dst: str, frame: BusFrame, t: float) -> None:
        data = bus.encode(frame)
        link = link_key(src, dst)
        at = bus.deliver(self.net, link, t, frame, self._link_rng(link))
        self.bus_counts["sent"] += 1
        self.bus_counts["by_type"][bus.MSG_TYPES[frame.msg_type]] += 1
        entry = {
            "t_send": t, "src": src, "dst": dst,
            "type": bus.MSG_TYPES[frame.msg_type], "topic": frame.topic,
            "payload_sha256": hashlib.sha256(frame.payload).hexdigest()[:16],
            "delivered_at": at,
        }
        self.frames_log.append(entry)
        if at is None:
            self.bus_counts["dropped"] += 1
            return
        self._push(at, KIND_DELIVER, (dst, data))

    def _record_truth_line(self, t: float) -> None:
        if self.replay is not None or t in self._truth_times_recorded:
            return
        self._truth_times_recorded.add(t)
        self.replay_lines.append({
            "t": t,
            "truth": [{"id": o.id, "position": [float(x) for x in o.position],
                       "velocity": [float(x) for x in o.velocity],
                       "extent": [float(x) for x in o.extent]}
                      for o in self._truth(t)],
        })

    # -- event handlers ------------------------------------------------------

    def on_tick(self, t: float, aid: str, sidx: int, flush: bool) -> None:
        rt = self.agents[aid]
        spec = rt.spec.sensors[sidx]
        agent_pose = self._agent_pose(rt, t)
        sensor_pose = agent_pose.compose(spec.mount)
        if self.replay is not None:
            dets = self.replay.detections_at(t, aid, sidx, spec.type)
        elif spec.type == "camera":
            dets = camera_observe(spec.intrinsics, sensor_pose, self._truth(t),
                                  spec.noise, self.sensor_rngs[(aid, sidx)],
                                  sensor_id=f"{aid}/{sidx}", timestamp=t)
        else:
            dets = radar_observe(sensor_pose, self._truth(t), spec.noise,
                                 self.sensor_rngs[(aid, sidx)],
                                 sensor_velocity=rt.spec.trajectory.velocity(t),
                                 sensor_id=f"{aid}/{sidx}", timestamp=t)
        rt.staging[sidx] = dets
        if spec.type == "camera":
            rt.camera_ticked = True
        if self.replay is None:
            self._record_truth_line(t)
            self.replay_lines.append({
                "t": t, "agent": aid, "sensor": sidx, "type": spec.type,
                "detections": [d.to_dict() for d in dets],
            })
        if flush:
            self._flush(rt, t)

    def _flush(self, rt: _AgentRT, t: float) -> None:
        spec = rt.spec
        cam_idx = spec.camera_index()
        radar_idx = spec.radar_index()
        bboxes = rt.staging.get(cam_idx, []) if cam_idx is not None else []
        points = rt.staging.get(radar_idx, []) if radar_idx is not None else []
        camera_ticked = rt.camera_ticked
        rt.staging = {}
        rt.camera_ticked = False

        agent_pose = self._agent_pose(rt, t)
        if rt.cam_spec is not None and rt.radar_spec is not None:
            assoc = frustum_associate(bboxes, points, rt.cam_spec.intrinsics,
                                      rt.cam_from_radar)
        else:
            assoc = Association([], list(range(len(bboxes))),
                                list(range(len(points))))
        radar_noise = rt.radar_spec.noise if rt.radar_spec is not None \
            else SensorNoiseConfig()
        radar_mount = rt.radar_spec.mount if rt.radar_spec is not None \
            else Pose.identity()
        dets_agent = synthesize(assoc, bboxes, points, radar_mount, radar_noise)
        dets_world = [self._det_to_world(d, agent_pose) for d in dets_agent]
        rt.tracker.process_batch((t, LANE_LOCAL, 0), dets_world, t)

        if self.mode == "cr-covi":
            msgs, rt.msg_queue = rt.msg_queue, []
            covi_step(rt.tracker, msgs, Pose.identity(), t, rt.collab,
                      staleness=self.sc.pipeline.staleness)
            self._maybe_broadcast(rt, t, agent_pose)

        if self.mode == "cr-dist" and spec.id == self.ego_id:
            if camera_ticked:
                self._submit_task(rt, t, agent_pose)
            for req, wid in reap_timeouts(self.broker, t):
                self._send_task_req(req, wid, t)

        for tr in rt.tracker.tracks:
            self.track_lines.append({
                "t": t, "agent": spec.id, "id": tr.id, "status": tr.status,
                "mean": [float(x) for x in tr.mean],
                "cov_diag": [float(x) for x in np.diag(tr.cov)],
            })

    @staticmethod
    def _det_to_world(det: Detection3D, agent_pose: Pose) -> Detection3D:
        r = agent_pose.rotation
        return Detection3D(
            r @ det.position + agent_pose.translation, det.radial_speed,
            symmetrize(r @ det.cov @ r.T), det.source, det.score, det.timestamp)

    def _maybe_broadcast(self, rt: _AgentRT, t: float, agent_pose: Pose) -> None:
        period = 1.0 / self.sc.pipeline.broadcast_hz
        if rt.last_broadcast is not None and t - rt.last_broadcast < period - 1e-9:
            return
        rt.last_broadcast = t
        world_from_agent = agent_pose
        agent_from_world = inverse(world_from_agent)
        tracks = []
        for tr in rt.tracker.confirmed():
            mean, cov = transform_gaussian(agent_from_world, tr.mean, symmetrize(tr.cov))
            tracks.append((tr.id, mean, cov))
        msg = RemoteTrackMsg(rt.spec.id, world_from_agent, t, tracks)
        payload = canonical_dumps(msg.to_payload())
        frame = BusFrame(bus.MSG_TRACKS, int(round(t * 1e9)),
                         f"tracks/{rt.spec.id}", payload)
        for other in sorted(self.agents):
            if other != rt.spec.id:
                self._send(rt.spec.id, other, frame, t)

    def _submit_task(self, rt: _AgentRT, t: float, agent_pose: Pose) -> None:
        cam = rt.cam_spec
        rig_pose = agent_pose.compose(cam.mount)
        if self.replay is not None:
            visible = sorted(o.id for o in self._truth(t))
        else:
            visible = sorted(visible_object_ids(cam.intrinsics, rig_pose, self._truth(t)))
        inner = {"visible_ids": visible, "rig_pose": _pose_payload(rig_pose)}
        req = TaskRequest(next(self.task_counter), self.sc.pipeline.task_kind, t,
                          canonical_dumps(inner))
        wid = self.broker.submit(req, t)
        if wid is not None:
            self._send_task_req(req, wid, t)

    def _send_task_req(self, req: TaskRequest, wid: str, t: float) -> None:
        frame = BusFrame(bus.MSG_TASK_REQ, int(round(t * 1e9)), f"tasks/{wid}",
                         canonical_dumps(req.to_payload()))
        self._send(self.ego_id, self.workers[wid], frame, t)

    def on_deliver(self, t: float, dst: str, data: bytes) -> None:
        frame, _ = bus.decode(data)
        self.bus_counts["delivered"] += 1
        if frame.msg_type == bus.MSG_TRACKS:
            if self.mode == "cr-covi" and dst in self.agents:
                msg = RemoteTrackMsg.from_payload(canonical_loads(frame.payload))
                if msg.sender_id != dst:
                    self.agents[dst].msg_queue.append(msg)
        elif frame.msg_type == bus.MSG_TASK_REQ:
            wid = frame.topic.split("tasks/", 1)[1]
            req = TaskRequest.from_payload(canonical_loads(frame.payload))
            inner = canonical_loads(req.payload)
            truth = [o for o in self._truth(req.frame_time)
                     if o.id in set(inner["visible_ids"])]
            result = emulate_worker(req, truth, _pose_from_payload(inner["rig_pose"]),
                                    self.sc.pipeline.worker, self.worker_rngs[wid])
            self._push(t + result.compute_latency, KIND_TASK, (wid, result))
        elif frame.msg_type == bus.MSG_TASK_RESP:
            wid = frame.topic.rsplit("/", 2)
            wid = f"{wid[-2]}/{wid[-1]}"
            result = TaskResult.from_payload(canonical_loads(frame.payload))
            ego = self.agents[self.ego_id]
            _, sends = self.broker.on_result(result, wid, ego.tracker, t)
            for req, target in sends:
                self._send_task_req(req, target, t)
        elif frame.msg_type == bus.MSG_HEARTBEAT:
            if self.broker is not None:
                payload = canonical_loads(frame.payload)
                self.broker.heartbeat(payload["worker_id"], t)

    def on_task_complete(self, t: float, wid: str, result: TaskResult) -> None:
        frame = BusFrame(bus.MSG_TASK_RESP, int(round(t * 1e9)),
                         f"results/{self.ego_id}/{wid}",
                         canonical_dumps(result.to_payload()))
        self._send(self.workers[wid], self.ego_id, frame, t)

    def on_metric(self, t: float) -> None:
        if self.replay is None:
            self._record_truth_line(t)
        if self.ego_id not in self.agents:  # sensor-less ego: nothing to score
            return
        ego = self.agents[self.ego_id]
        gt = [(o.id, o.position) for o in self._truth(t)]
        est = []
        for tr in ego.tracker.confirmed():
            pos = tr.mean[:3] + tr.mean[3:] * (t - tr.stamp)
            est.append((tr.id, pos))
        frame = self.agg.sample(t, gt, est)
        mc = self.sc.metrics
        if t + mc.prediction_horizon <= self.sc.duration + 1e-9:
            by_id = {tr.id: tr for tr in ego.tracker.confirmed()}
            truth_by_id = {o.id: o for o in self._truth(t)}
            for gid, eid, _ in frame.matches:
                tr = by_id.get(eid)
                if tr is None:
                    continue
                wps = predict_trajectory(tr, mc.prediction_horizon, mc.prediction_dt)
                truth_fn = self._truth_interpolator(gid)
                try:
                    ade, fde = prediction_error(wps, truth_fn, self.sc.duration)
                except OutOfRange:
                    continue
                self.agg.add_prediction(ade, fde)

    def _truth_interpolator(self, obj_id: int):
        if self.replay is not None:
            return lambda t: self.replay.truth_position(obj_id, t)
        obj = next(o for o in self.sc.objects if o.id == obj_id)
        return lambda t: obj.motion.position(t)

    # -- main loop -----------------------------------------------------------

    def run(self) -> RunReport:
        handlers = {
            KIND_TICK: lambda t, d: self.on_tick(t, *d),
            KIND_DELIVER: lambda t, d: self.on_deliver(t, *d),
            KIND_TASK: lambda t, d: self.on_task_complete(t, *d),
            KIND_METRIC: lambda t, d: self.on_metric(t),
        }
        last = (-np.inf, -1)
        while self.heap:
            time, seq, kind, data = heapq.heappop(self.heap)
            if (time, seq) <= last:
                raise RuntimeError("event order violated")  # pragma: no cover
            last = (time, seq)
            if time > self.sc.duration + 1e-9:
                continue
            self.events_processed += 1
            handlers[kind](time, data)
        return self._build_report()

    def _build_report(self) -> RunReport:
        counters: dict = {"bus": self.bus_counts}
        if self.mode == "cr-covi":
            counters["collab"] = {aid: rt.collab.counters()
                                  for aid, rt in sorted(self.agents.items())}
        if self.mode == "cr-dist":
            c = dict(self.broker.counters)
            c["pending_at_end"] = len(self.broker.pending)
            counters["offload"] = c
        report = {
            "fusionsim_version": __version__,
            "scenario": self.sc.to_dict(),
            "mode": self.mode,
            "seed": self.sc.seed,
            "replay": self.replay is not None,
            "metrics": self.agg.report(),
            "ospa_series": [[t, v] for t, v in self.agg.ospa_series],
            "counters": counters,
            "events_processed": self.events_processed,
            "confirmed_tracks_final": {
                aid: [tr.id for tr in rt.tracker.confirmed()]
                for aid, rt in sorted(self.agents.items())
            },
            "frames": self.frames_log,
        }
        return RunReport(report, self.track_lines, self.replay_lines)


def run(scenario: Scenario, replay=None) -> RunReport:
    """Execute a scenario (or a replay against its pipeline) to completion."""
    return Engine(scenario, replay=replay).run()
