import numpy as np
import pytest

from fusionsim.collab import (
    CollabState,
    NonInvertible,
    RemoteTrackMsg,
    StaleMessage,
    align,
    ci_fuse,
    ci_omega,
    covi_step,
    t2t_associate,
)
from fusionsim.fusion import Detection3D, SOURCE_FUSED
from fusionsim.geometry import Pose
from fusionsim.tracker import CONFIRMED, TENTATIVE, Track, Tracker, TrackerConfig


def random_psd(rng, dim, scale=1.0):
    a = rng.normal(size=(dim, dim))
    return scale * (a @ a.T + 0.1 * np.eye(dim))


def msg(tracks, timestamp=0.0, pose=None, sender="rsu1"):
    return RemoteTrackMsg(sender, pose or Pose.identity(), timestamp, tracks)


def grid_scan_omega(pa, pb, step=1e-3):
    pa_inv, pb_inv = np.linalg.inv(pa), np.linalg.inv(pb)
    grid = np.arange(0.0, 1.0 + step / 2, step)
    info = grid[:, None, None] * pa_inv + (1 - grid)[:, None, None] * pb_inv
    traces = np.trace(np.linalg.inv(info), axis1=1, axis2=2)
    return float(grid[int(np.argmin(traces))])


class TestAlign:
    def test_identity_alignment(self):
        cov = np.eye(6)
        out = align(msg([(7, np.arange(6.0), cov)]), Pose.identity(), 0.0, q=1.0)
        rid, mean, cov_out = out[0]
        assert rid == 7
        assert np.allclose(mean, np.arange(6.0), atol=1e-12)
        assert np.allclose(cov_out, cov, atol=1e-12)

    def test_cv_extrapolation(self):
        mean = np.array([0.0, 0, 0, 1, 0, 0])
        out = align(msg([(1, mean, np.eye(6))], timestamp=0.0),
                    Pose.identity(), 2.0, q=1.0, staleness=5.0)
        assert np.allclose(out[0][1][:3], [2, 0, 0], atol=1e-12)

    def test_stale_message(self):
        with pytest.raises(StaleMessage):
            align(msg([(1, np.zeros(6), np.eye(6))], timestamp=0.0),
                  Pose.identity(), 5.0, q=1.0)

    def test_frame_mapping(self):
        # sender 10 m east of the ego tracking frame origin
        sender_pose = Pose(np.eye(3), [10.0, 0.0, 0.0])
        ego_pose = Pose.identity()
        out = align(msg([(1, np.zeros(6), np.eye(6))], pose=sender_pose),
                    ego_pose, 0.0, q=1.0)
        assert np.allclose(out[0][1][:3], [10, 0, 0], atol=1e-12)


class TestT2TAssociate:
    def track(self, tid, pos, var=1.0):
        mean = np.concatenate([pos, np.zeros(3)])
        return Track(tid, mean, var * np.eye(6), 0.0, confirm_n=5)

    def test_identical_means_associate(self):
        local = [self.track(1, np.array([5.0, 0, 0]))]
        remote = [(np.array([5.0, 0, 0, 0, 0, 0]), np.eye(6))]
        assert t2t_associate(local, remote) == [(0, 0)]

    def test_far_apart_rejected(self):
        local = [self.track(1, np.array([0.0, 0, 0]))]
        remote = [(np.concatenate([[100.0, 0, 0], np.zeros(3)]), np.eye(6))]
        # d2 = 100^2 / 2 = 5000 >> 11.345
        assert t2t_associate(local, remote) == []

    def test_crossing_costs_optimal(self):
        local = [self.track(1, np.array([0.0, 0, 0])),
                 self.track(2, np.array([4.0, 0, 0]))]
        remote = [(np.array([3.5, 0, 0, 0, 0, 0]), np.eye(6)),
                  (np.array([0.5, 0, 0, 0, 0, 0]), np.eye(6))]
        pairs = t2t_associate(local, remote)
        assert sorted(pairs) == [(0, 1), (1, 0)]


class TestCiOmega:
    def test_equal_inputs_return_half(self):
        pa = np.diag([2.0, 3.0, 4.0])
        assert ci_omega(pa, pa.copy()) == 0.5

    def test_scalar_1_4_gives_1(self):
        assert ci_omega(np.array([[1.0]]), np.array([[4.0]])) == 1.0

    def test_scalar_4_1_gives_0(self):
        assert ci_omega(np.array([[4.0]]), np.array([[1.0]])) == 0.0

    def test_noninvertible_rejected(self):
        with pytest.raises(NonInvertible):
            ci_omega(np.zeros((2, 2)), np.eye(2))

    def test_trace_optimality_random_pairs(self):
        rng = np.random.default_rng(77)
        for k in range(1000):
            dim = 3 if k % 2 == 0 else 6
            pa = random_psd(rng, dim, scale=rng.uniform(0.2, 5.0))
            pb = random_psd(rng, dim, scale=rng.uniform(0.2, 5.0))
            w = ci_omega(pa, pb)
            _, p = ci_fuse(np.zeros(dim), pa, np.zeros(dim), pb, w)
            assert np.trace(p) <= min(np.trace(pa), np.trace(pb)) + 1e-9

    def test_matches_fine_grid_scan(self):
        rng = np.random.default_rng(78)
        for _ in range(1000):
            pa = random_psd(rng, 3, scale=rng.uniform(0.2, 5.0))
            pb = random_psd(rng, 3, scale=rng.uniform(0.2, 5.0))
            w = ci_omega(pa, pb)
            w_grid = grid_scan_omega(pa, pb)
            assert abs(w - w_grid) <= 2e-3


class TestCiFuse:
    def test_identical_inputs_any_omega(self):
        x = np.array([1.0, 2.0, 3.0])
        p = np.diag([1.0, 2.0, 3.0])
        for w in (0.0, 0.3, 0.5, 1.0):
            xf, pf = ci_fuse(x, p, x.copy(), p.copy(), w)
            assert np.allclose(xf, x, atol=1e-12)
            assert np.allclose(pf, p, atol=1e-12)

    def test_omega_one_boundary_exact(self):
        xa, pa = np.array([1.0]), np.array([[2.0]])
        xb, pb = np.array([9.0]), np.array([[5.0]])
        xf, pf = ci_fuse(xa, pa, xb, pb, 1.0)
        assert xf[0] == 1.0 and pf[0, 0] == 2.0

    def test_scalar_hand_case(self):
        xf, pf = ci_fuse(np.array([0.0]), np.array([[1.0]]),
                         np.array([2.0]), np.array([[1.0]]), 0.5)
        assert xf[0] == pytest.approx(1.0, abs=1e-12)
        assert pf[0, 0] == pytest.approx(1.0, abs=1e-12)

    def test_output_psd_many_pairs(self):
        rng = np.random.default_rng(79)
        for _ in range(10_000):
            pa = random_psd(rng, 3)
            pb = random_psd(rng, 3)
            w = float(rng.uniform())
            _, pf = ci_fuse(rng.normal(size=3), pa, rng.normal(size=3), pb, w)
            assert np.allclose(pf, pf.T)
            try:
                np.linalg.cholesky(pf + 1e-12 * np.eye(3))
            except np.linalg.LinAlgError:
                assert np.linalg.eigvalsh(pf).min() > -1e-9

    def test_omega_out_of_range(self):
        with pytest.raises(Exception):
            ci_fuse(np.zeros(2), np.eye(2), np.zeros(2), np.eye(2), 1.5)


class TestCoviStep:
    def make_tracker(self, positions, confirm=True):
        tk = Tracker(TrackerConfig(confirm_m=1, confirm_n=5))
        t = 0.0
        dets = [Detection3D(np.asarray(p, dtype=float), 0.0, 0.25 * np.eye(3),
                            SOURCE_FUSED, 1.0, t) for p in positions]
        tk.step(dets, t)
        return tk

    def test_no_messages_no_change(self):
        tk = self.make_tracker([[5.0, 0, 0]])
        before = tk.state_dict()
        covi_step(tk, [], Pose.identity(), 0.0, CollabState())
        assert tk.state_dict() == before

    def test_unseen_remote_spawns_tentative(self):
        tk = Tracker(TrackerConfig(confirm_m=3, confirm_n=5))
        state = CollabState()
        remote = [(42, np.array([30.0, 0, 0, 0, 0, 0]), np.eye(6))]
        covi_step(tk, [msg(remote)], Pose.identity(), 0.0, state)
        assert len(tk.tracks) == 1
        assert tk.tracks[0].status == TENTATIVE
        assert np.allclose(tk.tracks[0].mean[:3], [30, 0, 0])
        assert state.spawned == 1
        assert state.links[("rsu1", 42)] == tk.tracks[0].id

    def test_duplicate_remote_fuses_and_shrinks(self):
        tk = self.make_tracker([[5.0, 0, 0]])
        tr = tk.tracks[0]
        trace_before = float(np.trace(tr.cov))
        state = CollabState()
        remote = [(1, tr.mean.copy(), tr.cov.copy() * 0.8)]
        covi_step(tk, [msg(remote)], Pose.identity(), 0.0, state)
        assert len(tk.tracks) == 1
        assert state.fused == 1
        assert np.trace(tk.tracks[0].cov) <= min(trace_before, trace_before * 0.8) + 1e-9

    def test_identical_estimate_fusion_idempotent(self):
        tk = self.make_tracker([[5.0, 0, 0]])
        tr = tk.tracks[0]
        mean0, cov0 = tr.mean.copy(), tr.cov.copy()
        covi_step(tk, [msg([(1, mean0.copy(), cov0.copy())])],
                  Pose.identity(), 0.0, CollabState())
        assert np.allclose(tk.tracks[0].mean, mean0, atol=1e-9)
        assert np.allclose(tk.tracks[0].cov, cov0, atol=1e-9)

    def test_stale_message_counted_not_fatal(self):
        tk = self.make_tracker([[5.0, 0, 0]])
        state = CollabState()
        old = msg([(1, np.zeros(6), np.eye(6))], timestamp=0.0)
        covi_step(tk, [old], Pose.identity(), 5.0, state)
        assert state.stale == 1 and state.received == 1

    def test_remote_sightings_confirm_spawned_track(self):
        tk = Tracker(TrackerConfig(confirm_m=3, confirm_n=5))
        state = CollabState()
        for k in range(3):
            t = 0.2 * k
            remote = [(9, np.array([30.0, 0, 0, 0, 0, 0]), np.eye(6))]
            covi_step(tk, [msg(remote, timestamp=t)], Pose.identity(), t, state)
        assert tk.tracks[0].status == CONFIRMED
        assert state.spawned == 1 and state.fused == 2
