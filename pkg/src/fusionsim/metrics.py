"""Perception, tracking and motion-prediction scoring.

Matching uses 3D center distance at a fixed radius (no oriented boxes
exist in the pipeline, so distance is the honest criterion).  Tracking
follows the CLEAR conventions: MOTA folds misses, false positives and
identity switches into one number, MOTP is the mean matched distance.
Cardinality-aware set error comes from OSPA.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .fusion import assign

DEFAULT_MATCH_RADIUS = 2.0  # meters
DEFAULT_OSPA_CUTOFF = 5.0
DEFAULT_OSPA_ORDER = 1.0


class MetricsError(Exception):
    pass


class OutOfRange(MetricsError):
    pass


@dataclass(frozen=True)
class FrameMatchResult:
    t: float
    matches: list[tuple[int, int, float]]   # (gt id, estimate id, distance m)
    fp: int
    fn: int
    gt_count: int


def match_frame(gt: list[tuple[int, np.ndarray]], est: list[tuple[int, np.ndarray]],
                radius: float = DEFAULT_MATCH_RADIUS,
                prev: dict[int, int] | None = None,
                t: float = 0.0) -> FrameMatchResult:
    """Match ground truth to estimates by center distance within ``radius``.

    Carry-over first: a gt keeps last frame's estimate id when that
    estimate still exists and is still within radius; the remainder is
    solved optimally.  ``prev`` maps gt id to last frame's matched
    estimate id.
    """
    if radius <= 0:
        raise MetricsError("radius must be > 0")
    prev = prev or {}
    est_by_id = {eid: np.asarray(p, dtype=float) for eid, p in est}
    if len(est_by_id) != len(est):
        raise MetricsError("estimate ids must be unique within a frame")
    gt_ids = [g for g, _ in gt]
    if len(set(gt_ids)) != len(gt_ids):
        raise MetricsError("gt ids must be unique within a frame")

    matches: list[tuple[int, int, float]] = []
    used_est: set[int] = set()
    carried: set[int] = set()
    for gid, gpos in gt:
        eid = prev.get(gid)
        if eid is None or eid not in est_by_id or eid in used_est:
            continue
        d = float(np.linalg.norm(np.asarray(gpos, dtype=float) - est_by_id[eid]))
        if d <= radius:
            matches.append((gid, eid, d))
            used_est.add(eid)
            carried.add(gid)

    rest_gt = [(gid, np.asarray(p, dtype=float)) for gid, p in gt if gid not in carried]
    rest_est = [(eid, p) for eid, p in est_by_id.items() if eid not in used_est]
    cost = np.full((len(rest_gt), len(rest_est)), np.inf)
    for i, (_, gpos) in enumerate(rest_gt):
        for j, (_, epos) in enumerate(rest_est):
            d = float(np.linalg.norm(gpos - epos))
            if d <= radius:
                cost[i, j] = d
    for i, j in assign(cost):
        matches.append((rest_gt[i][0], rest_est[j][0], float(cost[i, j])))

    matched_gt = {g for g, _, _ in matches}
    matched_est = {e for _, e, _ in matches}
    return FrameMatchResult(
        t=t,
        matches=sorted(matches),
        fp=len(est) - len(matched_est),
        fn=len(gt) - len(matched_gt),
        gt_count=len(gt),
    )


def clear_mot(frames: list[FrameMatchResult]) -> tuple[float | None, float | None, int]:
    """(MOTA, MOTP, identity switches) over a frame sequence.

    MOTA = 1 - (FN + FP + IDSW) / GT, None when no ground truth exists;
    MOTP is the mean matched distance, None when nothing ever matched.
    A switch is counted when a gt id's matched estimate id differs from
    its previous matched frame.
    """
    total_gt = sum(f.gt_count for f in frames)
    total_fp = sum(f.fp for f in frames)
    total_fn = sum(f.fn for f in frames)
    idsw = 0
    last_est: dict[int, int] = {}
    dists: list[float] = []
    for f in frames:
        for gid, eid, d in f.matches:
            if gid in last_est and last_est[gid] != eid:
                idsw += 1
            last_est[gid] = eid
            dists.append(d)
    mota = None if total_gt == 0 else 1.0 - (total_fn + total_fp + idsw) / total_gt
    motp = None if not dists else float(np.mean(dists))
    return mota, motp, idsw


def ospa(a: list[np.ndarray], b: list[np.ndarray],
         c: float = DEFAULT_OSPA_CUTOFF, p: float = DEFAULT_OSPA_ORDER) -> float:
    """Optimal subpattern assignment distance between two point sets.

    Localization errors are truncated at the cutoff ``c`` and cardinality
    mismatch is charged ``c`` per unmatched point; the result never
    exceeds ``c``.
    """
    if c <= 0 or p < 1:
        raise MetricsError("need cutoff c > 0 and order p >= 1")
    if len(a) > len(b):
        a, b = b, a
    m, n = len(a), len(b)
    if n == 0:
        return 0.0
    if m == 0:
        return c
    d = np.zeros((m, n))
    for i, pa in enumerate(a):
        for j, pb in enumerate(b):
            d[i, j] = min(c, float(np.linalg.norm(np.asarray(pa, dtype=float)
                                                  - np.asarray(pb, dtype=float)))) ** p
    pairs = assign(d)
    loc = sum(d[i, j] for i, j in pairs)
    return float(((loc + c**p * (n - m)) / n) ** (1.0 / p))


def prediction_error(predicted: list[tuple[float, np.ndarray]],
                     truth_at, duration: float) -> tuple[float, float]:
    """(ADE, FDE) of a predicted trajectory against a truth interpolator.

    ``truth_at(t)`` returns the true position; waypoint times past the
    scenario duration raise OutOfRange.
    """
    if not predicted:
        raise MetricsError("no waypoints to score")
    errors = []
    for t, pos in predicted:
        if t > duration + 1e-9 or t < -1e-9:
            raise OutOfRange(f"waypoint time {t} outside [0, {duration}]")
        errors.append(float(np.linalg.norm(np.asarray(pos, dtype=float) - truth_at(t))))
    return float(np.mean(errors)), errors[-1]


@dataclass
class MetricsAggregator:
    """Accumulates per-frame match results and OSPA samples during a run."""

    radius: float = DEFAULT_MATCH_RADIUS
    ospa_cutoff: float = DEFAULT_OSPA_CUTOFF
    ospa_order: float = DEFAULT_OSPA_ORDER
    frames: list[FrameMatchResult] = field(default_factory=list)
    ospa_series: list[tuple[float, float]] = field(default_factory=list)
    ade_samples: list[float] = field(default_factory=list)
    fde_samples: list[float] = field(default_factory=list)
    _prev: dict[int, int] = field(default_factory=dict)

    def sample(self, t: float, gt: list[tuple[int, np.ndarray]],
               est: list[tuple[int, np.ndarray]]) -> FrameMatchResult:
        frame = match_frame(gt, est, self.radius, self._prev, t=t)
        for gid, eid, _ in frame.matches:
            self._prev[gid] = eid
        self.frames.append(frame)
        self.ospa_series.append(
            (t, ospa([p for _, p in gt], [p for _, p in est],
                     self.ospa_cutoff, self.ospa_order)))
        return frame

    def add_prediction(self, ade: float, fde: float) -> None:
        self.ade_samples.append(ade)
        self.fde_samples.append(fde)

    def report(self) -> dict:
        mota, motp, idsw = clear_mot(self.frames)
        total_gt = sum(f.gt_count for f in self.frames)
        tp = sum(len(f.matches) for f in self.frames)
        fp = sum(f.fp for f in self.frames)
        precision = None if tp + fp == 0 else tp / (tp + fp)
        recall = None if total_gt == 0 else tp / total_gt
        return {
            "precision": precision,
            "recall": recall,
            "mota": mota,
            "motp": motp,
            "id_switches": idsw,
            "ade": None if not self.ade_samples else float(np.mean(self.ade_samples)),
            "fde": None if not self.fde_samples else float(np.mean(self.fde_samples)),
            "ospa_mean": None if not self.ospa_series else
                float(np.mean([v for _, v in self.ospa_series])),
            "frames": len(self.frames),
            "gt_total": total_gt,
            "tp_total": tp,
            "fp_total": fp,
            "fn_total": sum(f.fn for f in self.frames),
        }
