"""Collaborative V2V/V2I track fusion.

Remote platforms broadcast their confirmed tracks in their own frame,
stamped with a world-from-sender pose.  On receipt the tracks are
CV-predicted to the local clock, mapped into the receiver's tracking
frame, associated to local tracks by position Mahalanobis distance, and
fused by covariance intersection, which stays consistent when the
cross-platform correlation is unknown.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .geometry import Pose, check_symmetric, inverse, symmetrize, transform_gaussian
from .tracker import (
    CONFIRMED,
    TENTATIVE,
    Track,
    Tracker,
    chi2_quantile,
    kalman_predict,
)
from .fusion import assign

DEFAULT_STALENESS = 1.0  # seconds
GRID_POINTS = 101
GOLDEN_TOL = 1e-4


class CollabError(Exception):
    pass


class StaleMessage(CollabError):
    pass


class NonInvertible(CollabError):
    pass


@dataclass(frozen=True)
class RemoteTrackMsg:
    sender_id: str
    sender_pose: Pose            # world-from-sender
    timestamp: float
    tracks: list[tuple[int, np.ndarray, np.ndarray]]  # (remote id, mean6, cov6x6)

    def to_payload(self) -> dict:
        return {
            "sender_id": self.sender_id,
            "sender_pose": {
                "rotation": [[float(v) for v in row] for row in self.sender_pose.rotation],
                "translation": [float(v) for v in self.sender_pose.translation],
            },
            "timestamp": self.timestamp,
            "tracks": [
                {
                    "remote_id": rid,
                    "mean": [float(x) for x in mean],
                    "cov": [[float(v) for v in row] for row in cov],
                }
                for rid, mean, cov in self.tracks
            ],
        }

    @staticmethod
    def from_payload(d: dict) -> "RemoteTrackMsg":
        pose = Pose(np.array(d["sender_pose"]["rotation"]),
                    np.array(d["sender_pose"]["translation"]))
        tracks = [(tr["remote_id"], np.array(tr["mean"]), np.array(tr["cov"]))
                  for tr in d["tracks"]]
        return RemoteTrackMsg(d["sender_id"], pose, d["timestamp"], tracks)


@dataclass
class CollabState:
    """Receiver-side bookkeeping: links and counters."""

    links: dict[tuple[str, int], int] = field(default_factory=dict)  # (sender, remote id) -> local id
    received: int = 0
    stale: int = 0
    fused: int = 0
    spawned: int = 0
    merged: int = 0

    def counters(self) -> dict:
        return {"received": self.received, "stale": self.stale,
                "fused": self.fused, "spawned": self.spawned,
                "merged": self.merged}


def align(msg: RemoteTrackMsg, ego_pose: Pose, t_now: float, q: float,
          staleness: float = DEFAULT_STALENESS) -> list[tuple[int, np.ndarray, np.ndarray]]:
    """Remote tracks predicted to ``t_now`` and mapped into the ego frame.

    Each track is CV-predicted in the sender frame with the same process
    noise the trackers use, then mapped by ego_pose^-1 ∘ sender_pose.
    Raises StaleMessage when the message is older than ``staleness``.
    """
    age = t_now - msg.timestamp
    if age < -1e-9:
        raise CollabError(f"message from the future: {age:+.3f} s")
    if age > staleness:
        raise StaleMessage(f"message age {age:.3f} s exceeds bound {staleness:.3f} s")
    rel = inverse(ego_pose).compose(msg.sender_pose)
    out = []
    for rid, mean, cov in msg.tracks:
        check_symmetric(cov)
        mean_p, cov_p = kalman_predict(np.asarray(mean, dtype=float),
                                       np.asarray(cov, dtype=float), max(age, 0.0), q)
        mean_e, cov_e = transform_gaussian(rel, mean_p, cov_p)
        out.append((rid, mean_e, cov_e))
    return out


def t2t_associate(local: list[Track],
                  remote: list[tuple[np.ndarray, np.ndarray]],
                  gate_prob: float = 0.99) -> list[tuple[int, int]]:
    """One-to-one local/remote pairing on position-block Mahalanobis distance.

    Cost is d^2 = Δ'(P_loc + P_rem)^-1 Δ over the position blocks, gated at
    the chi-square quantile for 3 dof.
    """
    gamma = chi2_quantile(gate_prob, 3)
    cost = np.full((len(local), len(remote)), np.inf)
    for i, tr in enumerate(local):
        for j, (mean, cov) in enumerate(remote):
            delta = tr.mean[:3] - mean[:3]
            s = tr.cov[:3, :3] + cov[:3, :3]
            d2 = float(delta @ np.linalg.solve(s, delta))
            if d2 <= gamma:
                cost[i, j] = d2
    return assign(cost)


def _check_invertible(p: np.ndarray, label: str) -> None:
    if np.linalg.cond(p) > 1e12:
        raise NonInvertible(f"{label} has rcond below 1e-12")


def _ci_trace(pa_inv: np.ndarray, pb_inv: np.ndarray, omega: float) -> float:
    return float(np.trace(np.linalg.inv(omega * pa_inv + (1.0 - omega) * pb_inv)))


def ci_omega(pa: np.ndarray, pb: np.ndarray) -> float:
    """Covariance-intersection weight minimizing the fused trace.

    Seeds golden-section search from the best of a 101-point grid (the
    objective is convex in omega).  Exact ties prefer 0.5, then the
    boundaries, so identical inputs give 0.5 and a strictly dominating
    input gives exactly 0 or 1.
    """
    pa = np.asarray(pa, dtype=float)
    pb = np.asarray(pb, dtype=float)
    _check_invertible(pa, "Pa")
    _check_invertible(pb, "Pb")
    pa_inv = np.linalg.inv(pa)
    pb_inv = np.linalg.inv(pb)
    f = lambda w: _ci_trace(pa_inv, pb_inv, w)

    grid = np.linspace(0.0, 1.0, GRID_POINTS)
    values = [f(w) for w in grid]
    best = int(np.argmin(values))
    lo = max(0.0, grid[max(best - 1, 0)])
    hi = min(1.0, grid[min(best + 1, GRID_POINTS - 1)])

    invphi = (math.sqrt(5.0) - 1.0) / 2.0
    a, b = lo, hi
    c = b - invphi * (b - a)
    d = a + invphi * (b - a)
    fc, fd = f(c), f(d)
    while b - a > GOLDEN_TOL:
        if fc < fd:
            b, d, fd = d, c, fc
            c = b - invphi * (b - a)
            fc = f(c)
        else:
            a, c, fc = c, d, fd
            d = a + invphi * (b - a)
            fd = f(d)
    w_gs = (a + b) / 2.0

    candidates = [0.5, 0.0, 1.0, w_gs]
    best_val = min(f(w) for w in candidates)
    for w in candidates:
        if f(w) <= best_val:
            return w
    return w_gs  # unreachable


def ci_fuse(xa: np.ndarray, pa: np.ndarray, xb: np.ndarray, pb: np.ndarray,
            omega: float) -> tuple[np.ndarray, np.ndarray]:
    """Covariance intersection of two estimates at a given weight.

    P = (w Pa^-1 + (1-w) Pb^-1)^-1 and the matching information-weighted
    mean.  The boundaries return the corresponding input exactly.
    """
    if not 0.0 <= omega <= 1.0:
        raise CollabError(f"omega {omega} outside [0, 1]")
    xa = np.asarray(xa, dtype=float)
    xb = np.asarray(xb, dtype=float)
    pa = np.asarray(pa, dtype=float)
    pb = np.asarray(pb, dtype=float)
    if omega == 1.0:
        return xa.copy(), pa.copy()
    if omega == 0.0:
        return xb.copy(), pb.copy()
    _check_invertible(pa, "Pa")
    _check_invertible(pb, "Pb")
    pa_inv = np.linalg.inv(pa)
    pb_inv = np.linalg.inv(pb)
    info = omega * pa_inv + (1.0 - omega) * pb_inv
    _check_invertible(info, "fused information matrix")
    p = np.linalg.inv(info)
    x = p @ (omega * (pa_inv @ xa) + (1.0 - omega) * (pb_inv @ xb))
    return x, symmetrize(p)


def covi_step(tracker: Tracker, msgs: list[RemoteTrackMsg], ego_pose: Pose,
              t_now: float, state: CollabState, q: float | None = None,
              staleness: float = DEFAULT_STALENESS) -> None:
    """Fold a batch of remote track messages into the local tracker.

    Aligned remote tracks that associate with a local track replace its
    mean/covariance with the CI fusion; remote tracks gating with no local
    track spawn tentative local tracks carrying the remote covariance.  A
    remote track that gates with some local track but lost the one-to-one
    assignment is a duplicate view of a known object and is dropped, which
    keeps re-broadcast loops from breeding phantom tracks.  Both fusion
    and spawning count as a sighting for M-of-N confirmation.  Per-message
    failures are counted and never abort the step.
    """
    q = tracker.config.q if q is None else q
    for msg in msgs:
        state.received += 1
        try:
            aligned = align(msg, ego_pose, t_now, q, staleness)
        except StaleMessage:
            state.stale += 1
            continue
        locals_ = list(tracker.tracks)
        pairs = t2t_associate(locals_, [(m, c) for _, m, c in aligned])
        matched_remote = set()
        for i, j in pairs:
            tr = locals_[i]
            rid, mean_r, cov_r = aligned[j]
            try:
                w = ci_omega(tr.cov, cov_r)
                tr.mean, tr.cov = ci_fuse(tr.mean, tr.cov, mean_r, cov_r, w)
            except NonInvertible:
                continue
            tr.hits += 1
            tr.misses = 0
            tr.recent.append(True)
            if tr.status == TENTATIVE and sum(tr.recent) >= tracker.config.confirm_m:
                tr.status = CONFIRMED
            state.links[(msg.sender_id, rid)] = tr.id
            state.fused += 1
            matched_remote.add(j)
        gamma = chi2_quantile(0.99, 3)
        for j, (rid, mean_r, cov_r) in enumerate(aligned):
            if j in matched_remote:
                continue
            near_known = False
            for tr in tracker.tracks:
                delta = tr.mean[:3] - mean_r[:3]
                s = tr.cov[:3, :3] + cov_r[:3, :3]
                if float(delta @ np.linalg.solve(s, delta)) <= gamma:
                    near_known = True
                    break
            if near_known:
                continue
            tr = Track(tracker.next_id, mean_r, symmetrize(cov_r), t_now,
                       tracker.config.confirm_n)
            tracker.next_id += 1
            if sum(tr.recent) >= tracker.config.confirm_m:
                tr.status = CONFIRMED
            tracker.tracks.append(tr)
            state.links[(msg.sender_id, rid)] = tr.id
            state.spawned += 1
    _merge_duplicates(tracker, state)


def _merge_duplicates(tracker: Tracker, state: CollabState) -> None:
    """CI-merge local track pairs that mutually gate on position.

    Repeated remote fusion can keep an accidental twin of a well-tracked
    object alive indefinitely (the remote feed alternates between the
    pair); folding such pairs into the elder track keeps one estimate per
    object without touching genuinely distinct neighbors.
    """
    gamma = chi2_quantile(0.99, 3)
    tracks = sorted(tracker.tracks, key=lambda tr: tr.id)
    dead: set[int] = set()
    for i, a in enumerate(tracks):
        if a.id in dead:
            continue
        for b in tracks[i + 1:]:
            if b.id in dead:
                continue
            delta = a.mean[:3] - b.mean[:3]
            s = a.cov[:3, :3] + b.cov[:3, :3]
            if float(delta @ np.linalg.solve(s, delta)) > gamma:
                continue
            try:
                w = ci_omega(a.cov, b.cov)
                a.mean, a.cov = ci_fuse(a.mean, a.cov, b.mean, b.cov, w)
            except NonInvertible:
                continue
            a.hits = max(a.hits, b.hits)
            a.misses = min(a.misses, b.misses)
            if b.status == CONFIRMED and a.status == TENTATIVE:
                a.status = CONFIRMED
            dead.add(b.id)
            state.merged += 1
    if dead:
        tracker.tracks = [tr for tr in tracker.tracks if tr.id not in dead]
