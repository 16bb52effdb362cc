import numpy as np
import pytest

from monitorsim import belief as bel
from monitorsim.errors import ShapeMismatch
from monitorsim.mapgen import zone_of


def test_init_informed(reference_world):
    pts = np.array([[3.0, 4.0], [10.0, 20.0]])
    b = bel.init_belief(reference_world, pts, "informed")
    assert np.allclose(b.p_hat, pts)
    assert (b.last_seen == 0).all()


def test_init_uninformed(reference_world):
    pts = np.zeros((4, 2))
    b = bel.init_belief(reference_world, pts, "uninformed")
    assert np.allclose(b.p_hat, [[40.0, 20.0]] * 4)
    assert (b.last_seen == bel.NEVER).all()


def test_update_empty_visible(reference_world):
    pts = np.array([[3.0, 4.0]])
    b = bel.init_belief(reference_world, pts, "informed")
    _, deltas = bel.update_position_belief(b, set(), np.array([[9.0, 9.0]]), 1)
    assert deltas[0] == 0.0
    assert np.allclose(b.p_hat, pts)


def test_update_l1_delta(reference_world):
    b = bel.init_belief(reference_world, np.array([[0.0, 0.0]]), "informed")
    _, deltas = bel.update_position_belief(b, {0}, np.array([[3.0, 4.0]]), 5)
    assert deltas[0] == 7.0
    assert b.last_seen[0] == 5


def test_final_belief_equals_last_sighting(reference_world):
    """Random visibility log: final belief = position at last union sighting."""
    rng = np.random.default_rng(3)
    m, T = 8, 60
    traj = rng.uniform(5, 35, size=(T + 1, m, 2))
    b = bel.init_belief(reference_world, traj[0], "informed")
    log = []
    for t in range(1, T + 1):
        vis = set(int(j) for j in rng.choice(m, size=rng.integers(0, 4), replace=False))
        log.append(vis)
        bel.update_position_belief(b, vis, traj[t], t)
    for j in range(m):
        last = max((t for t in range(1, T + 1) if j in log[t - 1]), default=None)
        expect = traj[last][j] if last is not None else traj[0][j]
        assert np.allclose(b.p_hat[j], expect)


def test_occupancy_counts(reference_world):
    w = reference_world
    z1_room = next(z for z in w.zones if z.id == 1).room_ids[0]
    c = w.rooms[z1_room].centroid
    b = bel.PositionBelief(p_hat=np.tile(c, (20, 1)), last_seen=np.zeros(20, dtype=np.int64))
    counts = bel.estimate_occupancy(b, w)
    assert counts[1] == 20
    assert counts.sum() == 20


def test_occupancy_corridor_uncounted(reference_world):
    w = reference_world
    fy, fx = np.nonzero((w.cells == 0) & (w.room_grid < 0))
    p = np.array([(fx[0] + 0.5) * w.cell_size_m, (fy[0] + 0.5) * w.cell_size_m])
    b = bel.PositionBelief(p_hat=np.tile(p, (5, 1)), last_seen=np.zeros(5, dtype=np.int64))
    assert bel.estimate_occupancy(b, w).sum() == 0


def test_occupancy_matches_pointwise_zone_of(reference_world):
    w = reference_world
    rng = np.random.default_rng(8)
    free = w.free_cell_centers()
    pts = free[rng.integers(0, len(free), size=30)]
    b = bel.PositionBelief(p_hat=pts.copy(), last_seen=np.zeros(30, dtype=np.int64))
    counts = bel.estimate_occupancy(b, w)
    oracle = np.zeros(len(w.zones), dtype=int)
    for p in pts:
        z = zone_of(w, p)
        if z is not None:
            oracle[z] += 1
    assert (counts == oracle).all()


def zone_point(world, zone_id):
    rid = next(z for z in world.zones if z.id == zone_id).room_ids[0]
    return world.rooms[rid].centroid


def corridor_point(world):
    fy, fx = np.nonzero((world.cells == 0) & (world.room_grid < 0))
    return np.array([(fx[0] + 0.5) * world.cell_size_m, (fy[0] + 0.5) * world.cell_size_m])


def test_flow_simple_transition(reference_world):
    w = reference_world
    fb = bel.init_flow_belief(w, zone_point(w, 1)[None, :], "informed")
    bel.update_flow_belief(fb, {0}, zone_point(w, 2)[None, :], w, 3)
    assert fb.flow[1, 2] == 1
    assert fb.z_prev[0] == 1 and fb.z_cur[0] == 2 and fb.tau[0] == 3


def test_flow_corridor_does_not_clear_zone(reference_world):
    w = reference_world
    fb = bel.init_flow_belief(w, zone_point(w, 1)[None, :], "informed")
    bel.update_flow_belief(fb, {0}, corridor_point(w)[None, :], w, 1)
    assert fb.z_cur[0] == 1
    bel.update_flow_belief(fb, {0}, zone_point(w, 1)[None, :], w, 2)
    assert fb.flow.sum() == 0  # zone 1 -> corridor -> zone 1 records nothing


def test_flow_first_sighting_no_transition(reference_world):
    w = reference_world
    fb = bel.init_flow_belief(w, np.zeros((1, 2)), "uninformed")
    assert fb.z_cur[0] == bel.NO_ZONE
    bel.update_flow_belief(fb, {0}, zone_point(w, 2)[None, :], w, 1)
    assert fb.flow.sum() == 0
    assert fb.z_cur[0] == 2


def test_flow_matches_replay_oracle(reference_world):
    w = reference_world
    rng = np.random.default_rng(4)
    free = w.free_cell_centers()
    m, T = 6, 80
    traj = free[rng.integers(0, len(free), size=(T + 1) * m)].reshape(T + 1, m, 2)
    fb = bel.init_flow_belief(w, traj[0], "informed")
    log = []
    for t in range(1, T + 1):
        vis = set(int(j) for j in rng.choice(m, size=rng.integers(0, 4), replace=False))
        log.append(vis)
        bel.update_flow_belief(fb, vis, traj[t], w, t)
    # independent replay over the visibility log
    z_cur = {j: zone_of(w, traj[0][j]) for j in range(m)}
    flow = np.zeros_like(fb.flow)
    for t in range(1, T + 1):
        for j in sorted(log[t - 1]):
            z_new = zone_of(w, traj[t][j])
            if z_new is None:
                continue
            if z_cur[j] is None:
                z_cur[j] = z_new
            elif z_new != z_cur[j]:
                flow[z_cur[j], z_new] += 1
                z_cur[j] = z_new
    assert (fb.flow == flow).all()


def test_flow_monotone_nondecreasing(reference_world):
    w = reference_world
    rng = np.random.default_rng(5)
    free = w.free_cell_centers()
    fb = bel.init_flow_belief(w, free[:3], "informed")
    prev = fb.flow.copy()
    for t in range(1, 40):
        pts = free[rng.integers(0, len(free), size=3)]
        bel.update_flow_belief(fb, {0, 1, 2}, pts, w, t)
        assert (fb.flow >= prev).all()
        prev = fb.flow.copy()


def test_reward_zero_when_unchanged():
    m = np.array([[1.0, 2.0], [3.0, 4.0]])
    assert bel.reward("tracking", m, m, 5.0, 10.0) == 0.0


def test_reward_occupancy_counts():
    assert bel.reward("occupancy", np.array([3, 2]), np.array([2, 3]), 5.0, 10.0) == 2.0


def test_reward_tracking_component_clip():
    m0 = np.zeros((1, 2))
    m1 = np.array([[30.0, 30.0]])  # per-human L1 = 60, clipped to 5
    assert bel.reward("tracking", m0, m1, 5.0, 10.0) == 5.0


def test_reward_total_clip():
    m0 = np.zeros((4, 2))
    m1 = np.full((4, 2), 10.0)  # 4 components of 5 after clip -> total 20 -> 10
    assert bel.reward("tracking", m0, m1, 5.0, 10.0) == 10.0


def test_reward_shape_mismatch():
    with pytest.raises(ShapeMismatch):
        bel.reward("occupancy", np.zeros(3), np.zeros(4), 5.0, 10.0)


def test_reward_always_nonnegative():
    rng = np.random.default_rng(0)
    for _ in range(100):
        a = rng.normal(size=(5, 2))
        b = rng.normal(size=(5, 2))
        assert bel.reward("tracking", a, b, 5.0, 10.0) >= 0.0


def test_episode_tracking_reward_equals_delta_accumulation(reference_world):
    """Unclipped episode reward equals the belief trajectory's L1 path length."""
    w = reference_world
    rng = np.random.default_rng(6)
    free = w.free_cell_centers()
    m, T = 5, 50
    traj = free[rng.integers(0, len(free), size=(T + 1) * m)].reshape(T + 1, m, 2)
    b = bel.init_belief(w, traj[0], "informed")
    total = 0.0
    oracle = 0.0
    big = 1e9
    snapshots = [b.p_hat.copy()]
    for t in range(1, T + 1):
        vis = set(int(j) for j in rng.choice(m, size=rng.integers(0, 3), replace=False))
        prev = b.p_hat.copy()
        _, deltas = bel.update_position_belief(b, vis, traj[t], t)
        total += bel.reward("tracking", prev, b.p_hat, big, big)
        oracle += deltas.sum()
        snapshots.append(b.p_hat.copy())
    assert abs(total - oracle) < 1e-9
    # equals the belief trajectory's total L1 path length
    snaps = np.asarray(snapshots)
    path_len = np.abs(np.diff(snaps, axis=0)).sum()
    assert abs(total - path_len) < 1e-9


def test_metric_perfect_belief_zero():
    tr = np.zeros((10, 3, 2))
    assert bel.tracking_error(tr, tr) == 0.0
    occ = np.zeros((10, 4))
    assert bel.occupancy_error(occ, occ) == 0.0
    assert bel.flow_error(np.zeros((4, 4)), np.zeros((4, 4))) == 0.0


def test_metric_frozen_belief_distance():
    T = 20
    belief_trace = np.zeros((T, 1, 2))
    truth = np.tile(np.array([3.0, 4.0]), (T, 1, 1))
    assert abs(bel.tracking_error(belief_trace, truth) - 5.0) < 1e-12


def test_metric_shape_mismatch():
    with pytest.raises(ShapeMismatch):
        bel.tracking_error(np.zeros((5, 2, 2)), np.zeros((5, 3, 2)))


def test_all_visible_tracking_error_zero(reference_world):
    w = reference_world
    rng = np.random.default_rng(7)
    free = w.free_cell_centers()
    m, T = 4, 30
    traj = free[rng.integers(0, len(free), size=(T + 1) * m)].reshape(T + 1, m, 2)
    b = bel.init_belief(w, traj[0], "informed")
    est = []
    for t in range(1, T + 1):
        bel.update_position_belief(b, set(range(m)), traj[t], t)
        est.append(b.p_hat.copy())
    assert bel.tracking_error(np.asarray(est), traj[1:]) == 0.0
