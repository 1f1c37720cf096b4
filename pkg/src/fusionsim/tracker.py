"""Multi-object tracking over fused 3D detections.

Global-nearest-neighbor Kalman tracking: constant-velocity prediction,
Mahalanobis gating against a chi-square quantile, one-to-one assignment on
gated squared distances, M-of-N confirmation, and miss-based deletion.
State layout is [px, py, pz, vx, vy, vz].

The tracker also keeps a ring of whole-state snapshots keyed by the batch
order it processed, which lets delayed (out-of-sequence) detection batches
be integrated exactly by rollback and replay; see ``offload.integrate``.
"""

from __future__ import annotations

import math
from collections import deque
from dataclasses import dataclass, field

import numpy as np

from .fusion import Detection3D, assign

# Chi-square quantiles for dof 1..9, embedded so gating needs no stats
# dependency; tests cross-check them against an independent implementation.
CHI2_QUANTILES = {
    0.95: {1: 3.841, 2: 5.991, 3: 7.815, 4: 9.488, 5: 11.070,
           6: 12.592, 7: 14.067, 8: 15.507, 9: 16.919},
    0.99: {1: 6.635, 2: 9.210, 3: 11.345, 4: 13.277, 5: 15.086,
           6: 16.812, 7: 18.475, 8: 20.090, 9: 21.666},
}

TENTATIVE = "tentative"
CONFIRMED = "confirmed"
DELETED = "deleted"

NEW_TRACK_VEL_STD = 20.0  # m/s; bootstrap velocity uncertainty
HISTORY_LEN = 50          # per-track (t, mean, cov) snapshots kept

# Batch keys order detection batches globally: (time, lane, tiebreak).
LANE_LOCAL = 0
LANE_EDGE = 1

BatchKey = tuple[float, int, int]


class TrackerError(Exception):
    pass


class SingularInnovation(TrackerError):
    pass


class NotConfirmed(TrackerError):
    pass


def chi2_quantile(prob: float, dof: int) -> float:
    try:
        return CHI2_QUANTILES[prob][dof]
    except KeyError:
        raise TrackerError(f"no embedded chi-square quantile for prob={prob}, dof={dof}")


@dataclass(frozen=True)
class TrackerConfig:
    q: float = 1.0                 # process-noise intensity, m^2/s^3
    confirm_m: int = 3
    confirm_n: int = 5
    max_misses: int = 5
    gate_prob: float = 0.99
    snapshot_horizon: float = 1.0  # seconds of state history kept for rollback

    def __post_init__(self):
        if self.q <= 0:
            raise TrackerError("q must be > 0")
        if not 1 <= self.confirm_m <= self.confirm_n:
            raise TrackerError("need 1 <= confirm_m <= confirm_n")
        if self.max_misses < 1:
            raise TrackerError("max_misses must be >= 1")


class Track:
    """One Gaussian track with lifecycle metadata."""

    __slots__ = ("id", "mean", "cov", "status", "hits", "misses", "recent",
                 "history", "last_update", "stamp")

    def __init__(self, track_id: int, mean, cov, stamp: float, confirm_n: int):
        self.id = track_id
        self.mean = np.asarray(mean, dtype=float).reshape(6)
        self.cov = np.asarray(cov, dtype=float).reshape(6, 6)
        self.status = TENTATIVE
        self.hits = 1
        self.misses = 0
        self.recent: deque[bool] = deque([True], maxlen=confirm_n)
        self.history: deque[tuple[float, np.ndarray, np.ndarray]] = deque(maxlen=HISTORY_LEN)
        self.last_update = stamp
        self.stamp = stamp

    def copy(self) -> "Track":
        c = Track.__new__(Track)
        c.id = self.id
        c.mean = self.mean.copy()
        c.cov = self.cov.copy()
        c.status = self.status
        c.hits = self.hits
        c.misses = self.misses
        c.recent = deque(self.recent, maxlen=self.recent.maxlen)
        # history tuples are append-only and never mutated in place, so
        # copies may share them
        c.history = deque(self.history, maxlen=HISTORY_LEN)
        c.last_update = self.last_update
        c.stamp = self.stamp
        return c

    def to_dict(self) -> dict:
        return {
            "id": self.id,
            "status": self.status,
            "hits": self.hits,
            "misses": self.misses,
            "recent": [bool(b) for b in self.recent],
            "mean": [float(x) for x in self.mean],
            "cov": [[float(v) for v in row] for row in self.cov],
            "last_update": self.last_update,
            "stamp": self.stamp,
        }


def cv_transition(dt: float) -> np.ndarray:
    return np.kron(np.array([[1.0, dt], [0.0, 1.0]]), np.eye(3))


def process_noise(dt: float, q: float) -> np.ndarray:
    """White-acceleration noise: per-axis blocks [[dt^4/4, dt^3/2], [dt^3/2, dt^2]] * q."""
    block = q * np.array([[dt**4 / 4.0, dt**3 / 2.0], [dt**3 / 2.0, dt**2]])
    return np.kron(block, np.eye(3))


def kalman_predict(mean: np.ndarray, cov: np.ndarray, dt: float,
                   q: float) -> tuple[np.ndarray, np.ndarray]:
    f = cv_transition(dt)
    return f @ mean, f @ cov @ f.T + process_noise(dt, q)


def _check_innovation_cov(s: np.ndarray) -> None:
    # rcond via symmetric eigenvalues; S is symmetric by construction
    w = np.abs(np.linalg.eigvalsh(s))
    if w[0] <= w[-1] * 1e-12:
        raise SingularInnovation("innovation covariance rcond below 1e-12")


def _innovation(mean: np.ndarray, cov: np.ndarray,
                det: Detection3D) -> tuple[np.ndarray, np.ndarray]:
    nu = det.position - mean[:3]
    s = cov[:3, :3] + det.cov
    _check_innovation_cov(s)
    return nu, s


def kalman_update(mean: np.ndarray, cov: np.ndarray, z: np.ndarray,
                  r: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Joseph-form position update of a 6-state CV track."""
    h = np.zeros((3, 6))
    h[:, :3] = np.eye(3)
    s = h @ cov @ h.T + r
    _check_innovation_cov(s)
    k = cov @ h.T @ np.linalg.inv(s)
    mean_new = mean + k @ (z - h @ mean)
    ikh = np.eye(6) - k @ h
    cov_new = ikh @ cov @ ikh.T + k @ r @ k.T
    return mean_new, (cov_new + cov_new.T) / 2.0


def predict(track: Track, dt: float, q: float) -> Track:
    """CV-predicted copy of the track, dt seconds ahead."""
    if dt < 0:
        raise TrackerError("predict needs dt >= 0")
    out = track.copy()
    out.mean, out.cov = kalman_predict(track.mean, track.cov, dt, q)
    out.stamp = track.stamp + dt
    return out


def update(track: Track, det: Detection3D) -> Track:
    """Measurement-updated copy; bumps hit counters and appends history."""
    out = track.copy()
    out.mean, out.cov = kalman_update(track.mean, track.cov, det.position, det.cov)
    out.hits += 1
    out.misses = 0
    out.last_update = out.stamp
    out.history.append((out.stamp, out.mean.copy(), out.cov.copy()))
    return out


def gate(track: Track, det: Detection3D, gate_prob: float = 0.99) -> tuple[bool, float]:
    """Mahalanobis test of the detection against the track's predicted position."""
    nu, s = _innovation(track.mean, track.cov, det)
    d2 = float(nu @ np.linalg.solve(s, nu))
    return d2 <= chi2_quantile(gate_prob, 3), d2


def predict_trajectory(track: Track, horizon: float, dt: float) -> list[tuple[float, np.ndarray]]:
    """CV waypoint extrapolation; only confirmed tracks are worth predicting."""
    if track.status != CONFIRMED:
        raise NotConfirmed(f"track {track.id} is {track.status}")
    if horizon <= 0 or dt <= 0:
        raise TrackerError("horizon and dt must be > 0")
    steps = int(math.floor(horizon / dt + 1e-9))
    pos, vel = track.mean[:3], track.mean[3:]
    return [(track.stamp + k * dt, pos + vel * (k * dt)) for k in range(1, steps + 1)]


class Tracker:
    """Owns the live track set and the rollback machinery.

    ``step`` is the plain in-order update; ``process_batch`` wraps it with
    a global batch key and performs rollback-replay when a batch arrives
    whose key precedes ones already processed.  All mutation goes through
    batches, so state is a pure function of the key-ordered batch sequence.
    """

    def __init__(self, config: TrackerConfig | None = None):
        self.config = config or TrackerConfig()
        self.tracks: list[Track] = []
        self.next_id = 1
        self.last_time: float | None = None
        self._snapshots: list[tuple[BatchKey, dict]] = []
        self._batches: list[tuple[BatchKey, list[Detection3D], float]] = []
        self._genesis = self._capture()
        self._genesis_key: BatchKey = (-math.inf, -1, -1)

    # -- core in-order step -------------------------------------------------

    def step(self, detections: list[Detection3D], t: float) -> None:
        cfg = self.config
        if self.last_time is not None:
            dt = t - self.last_time
            if dt < -1e-12:
                raise TrackerError(f"step time went backwards: {self.last_time} -> {t}")
            dt = max(dt, 0.0)
        else:
            dt = 0.0
        predicted = [predict(tr, dt, cfg.q) for tr in self.tracks]

        n, m = len(predicted), len(detections)
        cost = np.full((n, m), np.inf)
        for i, tr in enumerate(predicted):
            for j, det in enumerate(detections):
                ok, d2 = gate(tr, det, cfg.gate_prob)
                if ok:
                    cost[i, j] = d2
        pairs = assign(cost)
        matched_tracks = {i for i, _ in pairs}
        matched_dets = {j for _, j in pairs}

        survivors: list[Track] = []
        for i, tr in enumerate(predicted):
            if i in matched_tracks:
                j = next(jj for ii, jj in pairs if ii == i)
                tr = update(tr, detections[j])
                tr.recent.append(True)
            else:
                tr.misses += 1
                tr.recent.append(False)
                if tr.misses > cfg.max_misses:
                    tr.status = DELETED
                    continue
            if tr.status == TENTATIVE and sum(tr.recent) >= cfg.confirm_m:
                tr.status = CONFIRMED
            survivors.append(tr)

        for j, det in enumerate(detections):
            if j in matched_dets:
                continue
            mean = np.concatenate([det.position, np.zeros(3)])
            cov = np.zeros((6, 6))
            cov[:3, :3] = det.cov
            cov[3:, 3:] = NEW_TRACK_VEL_STD**2 * np.eye(3)
            tr = Track(self.next_id, mean, cov, t, cfg.confirm_n)
            self.next_id += 1
            if tr.status == TENTATIVE and cfg.confirm_m <= 1:
                tr.status = CONFIRMED
            survivors.append(tr)

        self.tracks = survivors
        self.last_time = t

    # -- batch-keyed processing with rollback-replay ------------------------

    @property
    def newest_key(self) -> BatchKey | None:
        return self._batches[-1][0] if self._batches else None

    def oldest_restore_time(self) -> float:
        """Earliest batch time a delayed batch could still be inserted at."""
        if self._genesis is not None:
            return -math.inf
        return self._snapshots[0][0][0] if self._snapshots else math.inf

    def process_batch(self, key: BatchKey, detections: list[Detection3D],
                      t: float) -> bool:
        """Apply a detection batch at its global key; returns False when the
        batch predates every retained restore point and cannot be applied."""
        if any(b[0] == key for b in self._batches):
            raise TrackerError(f"duplicate batch key {key}")
        newest = self.newest_key
        if newest is None or key > newest:
            self.step(detections, t)
            self._batches.append((key, detections, t))
            self._snapshots.append((key, self._capture()))
            self._prune(t)
            return True
        return self._rollback_replay(key, detections, t)

    def _rollback_replay(self, key: BatchKey, detections: list[Detection3D],
                         t: float) -> bool:
        idx = -1
        for i, (k, _) in enumerate(self._snapshots):
            if k < key:
                idx = i
            else:
                break
        if idx >= 0:
            restore_key, state = self._snapshots[idx]
        elif self._genesis is not None:
            # Nothing processed before this key has been forgotten yet, so
            # replaying the whole buffer from the pristine state is exact.
            restore_key, state = self._genesis_key, self._genesis
        else:
            return False
        self._restore(state)
        self._snapshots = self._snapshots[:idx + 1]
        replay = [b for b in self._batches if b[0] > restore_key]
        replay.append((key, detections, t))
        replay.sort(key=lambda b: b[0])
        self._batches.append((key, detections, t))
        self._batches.sort(key=lambda b: b[0])
        for k, dets, tt in replay:
            self.step(dets, tt)
            self._snapshots.append((k, self._capture()))
        self._prune(self.last_time)
        return True

    def _prune(self, now: float | None) -> None:
        if now is None:
            return
        cutoff = now - self.config.snapshot_horizon
        while len(self._snapshots) > 1 and self._snapshots[0][0][0] < cutoff:
            self._snapshots.pop(0)
        while len(self._batches) > 1 and self._batches[0][0][0] < cutoff:
            self._batches.pop(0)
            self._genesis = None  # earliest history is gone; genesis restore unsafe

    def _capture(self) -> dict:
        return {
            "tracks": [tr.copy() for tr in self.tracks],
            "next_id": self.next_id,
            "last_time": self.last_time,
        }

    def _restore(self, state: dict) -> None:
        self.tracks = [tr.copy() for tr in state["tracks"]]
        self.next_id = state["next_id"]
        self.last_time = state["last_time"]

    # -- views ---------------------------------------------------------------

    def confirmed(self) -> list[Track]:
        return [tr for tr in self.tracks if tr.status == CONFIRMED]

    def state_dict(self) -> dict:
        """Canonical-serializable full state; equality here is the
        bit-exactness contract used by the distributed-mode tests."""
        return {
            "last_time": self.last_time,
            "next_id": self.next_id,
            "tracks": [tr.to_dict() for tr in sorted(self.tracks, key=lambda tr: tr.id)],
        }
